use proptest::prelude::*;

use priority_shed::criticality::{build_ccf, SurrogateCcf};
use priority_shed::oracle::{
    brute_force_min_set, brute_force_priority_set, exact_z_hat, exact_z_star, greedy_shed_set,
    z_star_from_z_hat, LoadPoint,
};
use priority_shed::scenario::{
    generate_scenario, load_scenario, run_discrete, save_scenario, write_trace, GeneratorParams,
    GraphSpec, ScenarioConfig,
};

/// Loads on a 1/1000 criticality grid, plus a feasible deficit.
fn instance(max_loads: usize) -> impl Strategy<Value = (Vec<LoadPoint>, f64)> {
    prop::collection::vec((0.1f64..5.0, 0u32..=1000), 2..=max_loads).prop_flat_map(|raw| {
        let loads: Vec<LoadPoint> = raw
            .iter()
            .enumerate()
            .map(|(i, &(p, c))| LoadPoint::new(i as u64 + 1, p, c as f64 / 1000.0))
            .collect();
        let total: f64 = loads.iter().map(|l| l.power).sum();
        (Just(loads), 0.0..total)
    })
}

fn pairs(loads: &[LoadPoint]) -> Vec<(f64, f64)> {
    loads.iter().map(|l| (l.power, l.criticality)).collect()
}

proptest! {
    #[test]
    fn greedy_is_the_best_priority_set((loads, p) in instance(12)) {
        let greedy = greedy_shed_set(&loads, p).unwrap();
        let priority = brute_force_priority_set(&loads, p).unwrap();
        let free = brute_force_min_set(&loads, p).unwrap();
        prop_assert!(greedy.total >= p);
        prop_assert!((greedy.total - priority.total).abs() <= 1e-9);
        prop_assert!(free.total <= greedy.total + 1e-9);
    }

    #[test]
    fn z_star_is_a_level_that_covers_the_deficit((loads, p) in instance(40)) {
        let ccf = build_ccf(&pairs(&loads)).unwrap();
        let z = exact_z_star(&ccf, p).unwrap();
        prop_assert!(ccf.levels().contains(&z));
        prop_assert!(ccf.eval(z) >= p);
        let below = ccf.levels().iter().filter(|&&l| l < z).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        prop_assert!(below == f64::NEG_INFINITY || ccf.eval(below) < p);
    }

    #[test]
    fn surrogate_recovers_z_star((loads, p) in instance(40)) {
        let ccf = build_ccf(&pairs(&loads)).unwrap();
        prop_assume!(ccf.levels().len() >= 2);
        let s = SurrogateCcf::with_min_gap(ccf.clone()).unwrap();
        for &level in ccf.levels() {
            prop_assert!((s.eval(level) - ccf.eval(level)).abs() <= 1e-12);
        }
        let z_hat = exact_z_hat(&s, p).unwrap();
        prop_assert!((s.eval(z_hat) - p).abs() <= 1e-9 * (1.0 + p));
        let rec = z_star_from_z_hat(&ccf, z_hat, p).unwrap();
        prop_assert_eq!(rec.z_star, exact_z_star(&ccf, p).unwrap());
    }

    #[test]
    fn generated_configs_round_trip(
        regions in 1usize..6,
        loads in 1usize..30,
        seed in any::<u64>(),
        random in any::<bool>(),
    ) {
        let mut params = GeneratorParams::new(regions, loads, seed);
        if random {
            params.graph = GraphSpec::Random { edge_probability: 0.5, window: 3 };
        }
        let cfg = generate_scenario(&params);
        prop_assert!(cfg.resolve().is_ok());
        prop_assert_eq!(&ScenarioConfig::from_json(&cfg.to_json()).unwrap(), &cfg);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        save_scenario(&cfg, &path).unwrap();
        prop_assert_eq!(load_scenario(&path).unwrap(), cfg);
    }
}

#[test]
fn library_runs_are_deterministic() {
    let mut params = GeneratorParams::new(3, 15, 21);
    params.graph = GraphSpec::Random {
        edge_probability: 0.4,
        window: 3,
    };
    params.max_rounds = 2000;
    let sc = generate_scenario(&params).resolve().unwrap();
    let bytes = || {
        let mut out = Vec::new();
        write_trace(&run_discrete(&sc, true).unwrap(), &mut out).unwrap();
        out
    };
    let first = bytes();
    assert!(!first.is_empty());
    assert_eq!(first, bytes());

    let mut other = params.clone();
    other.seed = 22;
    let sc2 = generate_scenario(&other).resolve().unwrap();
    let mut out = Vec::new();
    write_trace(&run_discrete(&sc2, true).unwrap(), &mut out).unwrap();
    assert_ne!(first, out);
}
