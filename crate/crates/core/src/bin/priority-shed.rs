use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use priority_shed::scenario::{
    certify, emit_trace, generate_scenario, load_scenario, run_scenario, save_scenario,
    solve_scenario, GeneratorParams, GraphSpec, Mode, ScenarioConfig, SummaryReport,
};
use priority_shed::Error;

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "priority-shed", version, about = "Criticality-aware distributed load shedding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the scenario's round limit.
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
    /// Override the scenario's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized oracle answer only.
    Solve { config: PathBuf },
    /// Oracle plus distributed run.
    Run {
        config: PathBuf,
        /// Write the per-round CSV trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also attach the convergence certificate digest.
        #[arg(long)]
        certify: bool,
    },
    /// Distributed run of a continuous-mode scenario.
    Continuous {
        config: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Validate a scenario and certify every convergence condition.
    Check { config: PathBuf },
    /// Write a random discrete scenario.
    Gen {
        #[arg(long)]
        regions: usize,
        #[arg(long)]
        loads: usize,
        /// Share of total load that must be shed.
        #[arg(long, default_value_t = 0.4)]
        deficit_fraction: f64,
        /// Use random links with this probability instead of a line graph.
        #[arg(long)]
        edge_probability: Option<f64>,
        /// Connectivity window for random links.
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_INVALID,
    }
}

fn load(cli: &Cli, path: &PathBuf) -> Result<ScenarioConfig, Error> {
    let mut cfg = load_scenario(path)?;
    if let Some(r) = cli.max_rounds {
        cfg.max_rounds = r;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print(cli: &Cli, value: &impl serde::Serialize) {
    if !cli.quiet {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        // a closed pipe (`| head`) is not an error worth panicking over
        let _ = writeln!(std::io::stdout().lock(), "{text}");
    }
}

fn run_and_report(
    cli: &Cli,
    cfg: &ScenarioConfig,
    trace_path: Option<&PathBuf>,
    with_certificate: bool,
) -> Result<u8, Error> {
    let sc = cfg.resolve()?;
    let (mut report, trace): (SummaryReport, _) = run_scenario(&sc, trace_path.is_some())?;
    if with_certificate {
        report.attach_certificate(&certify(&sc)?);
    }
    if let Some(path) = trace_path {
        emit_trace(&trace, path)?;
    }
    print(cli, &report);
    let d = report.distributed.as_ref().expect("run attaches a distributed summary");
    // continuous runs always use the full round budget
    let ok = match cfg.mode {
        Mode::Discrete => d.converged,
        Mode::Continuous => d.matches_oracle,
    };
    Ok(if ok { 0 } else { EXIT_NOT_CONVERGED })
}

fn execute(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Solve { config } => {
            let sc = load(cli, config)?.resolve()?;
            print(cli, &solve_scenario(&sc)?);
            Ok(0)
        }
        Command::Run {
            config,
            trace,
            certify,
        } => run_and_report(cli, &load(cli, config)?, trace.as_ref(), *certify),
        Command::Continuous { config, trace } => {
            let cfg = load(cli, config)?;
            if cfg.mode != Mode::Continuous {
                return Err(Error::Validation("scenario is not in continuous mode".into()));
            }
            run_and_report(cli, &cfg, trace.as_ref(), false)
        }
        Command::Check { config } => {
            let sc = load(cli, config)?.resolve()?;
            let cert = certify(&sc)?;
            print(cli, &cert);
            Ok(if cert.passed() { 0 } else { EXIT_INVALID })
        }
        Command::Gen {
            regions,
            loads,
            deficit_fraction,
            edge_probability,
            window,
            output,
        } => {
            let mut params = GeneratorParams::new(*regions, *loads, cli.seed.unwrap_or(0));
            params.deficit_fraction = *deficit_fraction;
            if let Some(p) = edge_probability {
                params.graph = GraphSpec::Random {
                    edge_probability: *p,
                    window: *window,
                };
            }
            if let Some(r) = cli.max_rounds {
                params.max_rounds = r;
            }
            let cfg = generate_scenario(&params);
            cfg.resolve()?;
            save_scenario(&cfg, output)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
