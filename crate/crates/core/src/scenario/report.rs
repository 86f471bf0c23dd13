//! Oracle solves, protocol runs and certificates for a resolved scenario.

use serde::{Deserialize, Serialize};

use super::{InitRule, InitialX, Mode, Scenario};
use crate::criticality::{build_ccf, ExtReal, RampSum, RegionField, SurrogateCcf};
use crate::error::{Error, Result};
use crate::netgraph::{check_window_connectivity, metropolis_weights};
use crate::oracle::{continuous_solution, continuous_split, solve, RecoveryCase};
use crate::protocol::{certify_p_estimator, run_protocol, shed_decision, ProtocolSetup, RunTrace};
use crate::rootfind::{
    run_to_root, verify_field, verify_estimate_rate, verify_step_schedule,
    AssumptionCertificate, CheckResult, Grid, LoadSheddingField, RootFindOptions,
};

/// Distributed continuous runs count as correct within this distance of `z̃`.
const CONTINUOUS_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteOracle {
    pub z_star: f64,
    pub z_hat: f64,
    pub recovery_case: RecoveryCase,
    pub total_shed: f64,
    pub shed_count: usize,
    /// What shedding by ascending criticality alone achieves.
    pub greedy_total: f64,
    pub ramp_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousOracle {
    pub z_tilde: f64,
    pub per_region_shed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleSummary {
    Discrete(DiscreteOracle),
    Continuous(ContinuousOracle),
}

impl OracleSummary {
    /// The threshold the distributed run should reach.
    pub fn threshold(&self) -> f64 {
        match self {
            OracleSummary::Discrete(d) => d.z_star,
            OracleSummary::Continuous(c) => c.z_tilde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedSummary {
    pub rounds: usize,
    pub converged: bool,
    pub final_x: Vec<f64>,
    /// Discrete: per-region `z*` after the closing flood. Continuous: `x_j`.
    pub z_star: Vec<ExtReal>,
    pub per_region_shed: Vec<f64>,
    pub total_shed: f64,
    pub matches_oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub regions: usize,
    pub power_deficit: f64,
    pub oracle: OracleSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distributed: Option<DistributedSummary>,
    /// One `name:pass|fail` token per check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<String>,
}

impl SummaryReport {
    pub fn attach_certificate(&mut self, cert: &AssumptionCertificate) {
        let digest: Vec<String> = cert
            .checks
            .iter()
            .map(|c| format!("{}:{}", c.name, if c.passed { "pass" } else { "fail" }))
            .collect();
        self.certificate = Some(digest.join(" "));
    }
}

pub fn solve_scenario(sc: &Scenario) -> Result<OracleSummary> {
    let p = sc.config.power_deficit;
    match sc.config.mode {
        Mode::Discrete => {
            let sol = solve(&sc.all_loads(), p, Some(sc.ramp_width))?;
            Ok(OracleSummary::Discrete(DiscreteOracle {
                z_star: sol.z_star,
                z_hat: sol.z_hat,
                recovery_case: sol.recovery_case,
                total_shed: sol.total_shed,
                shed_count: sol.shed_set.len(),
                greedy_total: sol.greedy.total,
                ramp_width: sc.ramp_width,
            }))
        }
        Mode::Continuous => {
            let sol = continuous_solution(&sc.continuous_regions(), p)?;
            Ok(OracleSummary::Continuous(ContinuousOracle {
                z_tilde: sol.z_tilde,
                per_region_shed: sol.per_region_shed,
            }))
        }
    }
}

/// Per-region surrogate CCFs and their sorted criticality levels.
pub fn surrogate_fields(sc: &Scenario) -> Result<(Vec<SurrogateCcf>, Vec<Vec<f64>>)> {
    let mut fields = Vec::with_capacity(sc.n());
    let mut levels = Vec::with_capacity(sc.n());
    for r in &sc.regions {
        let pairs: Vec<(f64, f64)> = r.loads.iter().map(|l| (l.power, l.criticality)).collect();
        let ccf = build_ccf(&pairs)?;
        levels.push(ccf.levels().to_vec());
        fields.push(SurrogateCcf::new(ccf, sc.ramp_width)?);
    }
    Ok((fields, levels))
}

/// Per-region unit ramps of the continuous variant.
pub fn continuous_fields(sc: &Scenario) -> Result<(Vec<RampSum>, Vec<Vec<f64>>)> {
    let fields = sc
        .regions
        .iter()
        .map(|r| RampSum::new(&[(r.criticality, r.capacity)], 1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok((fields, sc.regions.iter().map(|r| vec![r.criticality]).collect()))
}

/// `x(0)` as configured.
pub fn initial_estimates(sc: &Scenario, levels: &[Vec<f64>]) -> Vec<f64> {
    match sc.config.initial_x {
        InitialX::Value(v) => vec![v; sc.n()],
        InitialX::Rule(InitRule::Zero) => vec![0.0; sc.n()],
        InitialX::Rule(InitRule::RegionMin) => {
            levels.iter().map(|l| l.first().copied().unwrap_or(0.0)).collect()
        }
    }
}

fn setup<F>(sc: &Scenario, fields: Vec<F>, levels: Vec<Vec<f64>>, record_trace: bool) -> ProtocolSetup<F> {
    let discrete = sc.config.mode == Mode::Discrete;
    ProtocolSetup {
        initial_x: initial_estimates(sc, &levels),
        fields,
        criticalities: levels,
        schedule: sc.schedule.clone(),
        step: sc.config.step,
        estimator: sc.estimator.clone(),
        ramp_width: sc.ramp_width,
        max_rounds: sc.config.max_rounds,
        convergence_window: sc.config.convergence_window,
        // continuous runs have no discrete answer to settle on
        stop_on_convergence: discrete,
        require_agreement: discrete && sc.config.require_agreement,
        convergence_ratio: sc.config.convergence_ratio,
        record_trace,
    }
}

pub fn run_discrete(sc: &Scenario, record_trace: bool) -> Result<RunTrace> {
    if sc.config.mode != Mode::Discrete {
        return Err(Error::Precondition("scenario is not in discrete mode".into()));
    }
    let (fields, levels) = surrogate_fields(sc)?;
    run_protocol(&setup(sc, fields, levels, record_trace))
}

pub fn run_continuous(sc: &Scenario, record_trace: bool) -> Result<RunTrace> {
    if sc.config.mode != Mode::Continuous {
        return Err(Error::Precondition("scenario is not in continuous mode".into()));
    }
    let (fields, levels) = continuous_fields(sc)?;
    run_protocol(&setup(sc, fields, levels, record_trace))
}

/// Oracle solve plus a distributed run, dispatched on the mode.
pub fn run_scenario(sc: &Scenario, record_trace: bool) -> Result<(SummaryReport, RunTrace)> {
    let oracle = solve_scenario(sc)?;
    let (trace, distributed) = match sc.config.mode {
        Mode::Discrete => {
            let trace = run_discrete(sc, record_trace)?;
            let mut per_region = Vec::with_capacity(sc.n());
            for (r, z) in sc.regions.iter().zip(&trace.final_z_star) {
                let cut = z.finite().unwrap_or(f64::INFINITY);
                let ids = shed_decision(&r.loads, cut);
                per_region.push(
                    r.loads
                        .iter()
                        .filter(|l| ids.contains(&l.id))
                        .map(|l| l.power)
                        .sum::<f64>(),
                );
            }
            let z = oracle.threshold();
            let matches = trace.final_z_star.iter().all(|v| *v == ExtReal::Finite(z));
            let summary = DistributedSummary {
                rounds: trace.rounds,
                converged: trace.converged,
                final_x: trace.final_x(),
                z_star: trace.final_z_star.clone(),
                total_shed: per_region.iter().sum(),
                per_region_shed: per_region,
                matches_oracle: matches,
            };
            (trace, summary)
        }
        Mode::Continuous => {
            let trace = run_continuous(sc, record_trace)?;
            let x = trace.final_x();
            let regions = sc.continuous_regions();
            let per_region: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(j, &xj)| continuous_split(&regions, xj)[j])
                .collect();
            let z = oracle.threshold();
            let summary = DistributedSummary {
                rounds: trace.rounds,
                converged: trace.converged,
                z_star: x.iter().map(|&v| ExtReal::Finite(v)).collect(),
                matches_oracle: x.iter().all(|v| (v - z).abs() <= CONTINUOUS_TOLERANCE),
                final_x: x,
                total_shed: per_region.iter().sum(),
                per_region_shed: per_region,
            };
            (trace, summary)
        }
    };
    Ok((
        SummaryReport {
            regions: sc.n(),
            power_deficit: sc.config.power_deficit,
            oracle,
            distributed: Some(distributed),
            certificate: None,
        },
        trace,
    ))
}

/// Horizon for the sampled checks.
const CHECK_HORIZON: u64 = 1000;
const CHECK_GRID_POINTS: usize = 201;

fn certify_fields<F: RegionField>(sc: &Scenario, fields: Vec<F>, levels: &[Vec<f64>]) -> Result<AssumptionCertificate> {
    let p = sc.config.power_deficit;
    let total: f64 = sc.regions.iter().map(|r| r.capacity).sum();
    let horizon = CHECK_HORIZON.min(sc.config.max_rounds as u64).max(4);
    let mut checks = Vec::new();

    checks.push(CheckResult::new(
        "feasibility",
        total >= p,
        format!("total load {total} GW, deficit {p} GW"),
    ));

    let b = sc.schedule.window();
    let span = (horizon as usize).div_ceil(b) * b;
    let conn = check_window_connectivity(&sc.schedule, span)?;
    checks.push(CheckResult::new(
        "connectivity",
        conn.passed(),
        format!("{} windows of length {b} checked", conn.windows_checked),
    ));

    let mut mixing_ok = true;
    for t in 0..span {
        let edges = sc.schedule.edges_at(t);
        let w = metropolis_weights(&edges, sc.n())?;
        if let Err(msg) = w.validate(&edges, 1e-12) {
            mixing_ok = false;
            checks.push(CheckResult::new("mixing", false, format!("round {t}: {msg}")));
            break;
        }
    }
    if mixing_ok {
        checks.push(CheckResult::new("mixing", true, format!("{span} rounds doubly stochastic")));
    }

    let step = sc.config.step;
    let step_report = verify_step_schedule(&step, horizon);
    checks.push(CheckResult::new(
        "step-size",
        step_report.passed,
        format!("partial sums {:.4} and {:.4} of eta and eta^2", step_report.sum, step_report.sum_of_squares),
    ));

    let half = horizon / 2;
    let early = certify_p_estimator(&sc.estimator, &step, 1..half);
    let late = certify_p_estimator(&sc.estimator, &step, half..=horizon);
    let estimate_theta = early.max(late);
    checks.push(CheckResult::new(
        "estimate-rate",
        estimate_theta.is_finite() && late <= crate::rootfind::RATIO_GROWTH_LIMIT * early,
        format!("max |sum p - P| / eta = {estimate_theta:.6}"),
    ));

    let all_levels: Vec<f64> = levels.iter().flatten().copied().collect();
    let lo = all_levels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all_levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = 0.1 * (hi - lo) + 2.0 * sc.ramp_width;
    let grid = Grid::new(lo - pad, hi + pad, CHECK_GRID_POINTS)?;

    let field = LoadSheddingField {
        fields,
        estimator: sc.estimator.clone(),
    };
    let a4 = verify_field(&field, grid, horizon);
    checks.push(CheckResult::new(
        "field-bounds",
        a4.bound_ok && a4.lipschitz_ok,
        format!("bound {:.6}, Lipschitz {:.6}", a4.bound_estimate, a4.lipschitz_estimate),
    ));
    checks.push(CheckResult::new(
        "sign-condition",
        a4.sign_ok,
        match a4.failing_sample {
            Some(z) => format!("violated at z = {z}"),
            None => format!("witness {:?}", a4.witness),
        },
    ));
    let a5 = verify_estimate_rate(&field, grid, horizon, &step)?;
    checks.push(CheckResult::new(
        "field-rate",
        a5.passed,
        format!("theta {:.6}, early peak {:.6}, late peak {:.6}", a5.theta, a5.early_peak, a5.late_peak),
    ));

    let x0 = vec![a4.witness.unwrap_or(lo); sc.n()];
    let run = run_to_root(
        &field,
        &sc.schedule,
        &step,
        &x0,
        RootFindOptions {
            tolerance: 0.0,
            max_rounds: horizon as usize,
            record_states: false,
        },
    )?;

    Ok(AssumptionCertificate {
        bound: a4.bound_estimate,
        lipschitz: a4.lipschitz_estimate,
        theta: a5.theta,
        estimate_theta,
        window: b,
        nu_estimate: run.diagnostics.ratio_max,
        omega_estimate: run.diagnostics.omega_estimate,
        sign_witness: a4.witness,
        checks,
    })
}

/// Checks every convergence condition on a resolved scenario.
pub fn certify(sc: &Scenario) -> Result<AssumptionCertificate> {
    match sc.config.mode {
        Mode::Discrete => {
            let (fields, levels) = surrogate_fields(sc)?;
            certify_fields(sc, fields, &levels)
        }
        Mode::Continuous => {
            let (fields, levels) = continuous_fields(sc)?;
            certify_fields(sc, fields, &levels)
        }
    }
}
