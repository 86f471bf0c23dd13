//! Synchronous-round distributed load shedding.
//!
//! Each round every region
//! 1. mixes its neighbors' estimates and takes a step against its local
//!    imbalance `f̂_j(x_j) - p_j`,
//! 2. recomputes `ζ_j`, the smallest local criticality at or above its new
//!    estimate,
//! 3. runs one round of self-tuning dynamic min-consensus over the `ζ` values.
//!
//! The run stops once `ζ` and the min-consensus state have been unchanged for
//! `K` consecutive rounds. A plain min-consensus flood over the settled `ζ`
//! values then gives every region the exact global minimum.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::criticality::{local_zeta, ExtReal, RegionField};
use crate::error::{Error, Result};
use crate::netgraph::{EdgeSet, GraphSchedule, MixingMatrix, ScheduleKind};
use crate::oracle::LoadPoint;
use crate::rng::Stream;

/// Diminishing step sizes `η(t)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `1 / (t + 1)`
    #[default]
    Harmonic,
    /// `scale / (t + 1)^exponent`, `exponent ∈ (1/2, 1]`.
    Power { scale: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn eta(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Harmonic => 1.0 / (t as f64 + 1.0),
            StepSchedule::Power { scale, exponent } => scale / (t as f64 + 1.0).powf(exponent),
        }
    }

    /// Only rules with a divergent sum and a convergent sum of squares are
    /// accepted.
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Harmonic => Ok(()),
            StepSchedule::Power { scale, exponent } => {
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::domain(format!("step scale {scale} must be positive")));
                }
                if !(exponent > 0.5 && exponent <= 1.0) {
                    return Err(Error::domain(format!(
                        "step exponent {exponent} outside (0.5, 1]"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// How each region estimates its share of the deficit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PModel {
    /// `P / n` for every region.
    ExactSplit,
    /// `P / n + amplitude · e_j(t) / t`, `e_j(t) ~ U[-1, 1)`.
    NoisySplit {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// Row `t` of a table; the last row repeats past the end.
    Trace { rows: Vec<Vec<f64>> },
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PEstimator {
    model: PModel,
    total: f64,
    n: usize,
    seed: u64,
}

impl PEstimator {
    pub fn new(model: PModel, total: f64, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("estimator needs at least one region"));
        }
        match &model {
            PModel::NoisySplit { amplitude } if !(amplitude.is_finite() && *amplitude >= 0.0) => {
                return Err(Error::domain(format!("noise amplitude {amplitude} must be >= 0")));
            }
            PModel::Trace { rows } => {
                if rows.is_empty() {
                    return Err(Error::domain("p trace needs at least one row"));
                }
                if let Some(r) = rows.iter().find(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: r.len(),
                    });
                }
            }
            _ => {}
        }
        Ok(PEstimator {
            model,
            total,
            n,
            seed,
        })
    }

    pub fn exact(total: f64, n: usize) -> Self {
        PEstimator::new(PModel::ExactSplit, total, n, 0).expect("n > 0")
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn model(&self) -> &PModel {
        &self.model
    }

    /// `p(t)` for all regions. Noise at `t = 0` is undefined and taken as 0.
    pub fn p_values(&self, t: u64) -> Vec<f64> {
        let share = self.total / self.n as f64;
        match &self.model {
            PModel::ExactSplit => vec![share; self.n],
            PModel::NoisySplit { amplitude } => {
                if t == 0 {
                    return vec![share; self.n];
                }
                let mut rng = Stream::indexed(self.seed, "p-noise", t);
                (0..self.n)
                    .map(|_| share + amplitude * rng.uniform(-1.0, 1.0) / t as f64)
                    .collect()
            }
            PModel::Trace { rows } => rows[(t as usize).min(rows.len() - 1)].clone(),
        }
    }
}

/// `max_t |Σ_j p_j(t) - P| / η(t)` over `times`.
pub fn certify_p_estimator(
    estimator: &PEstimator,
    step: &StepSchedule,
    times: impl IntoIterator<Item = u64>,
) -> f64 {
    times
        .into_iter()
        .map(|t| {
            let sum: f64 = estimator.p_values(t).iter().sum();
            (sum - estimator.total()).abs() / step.eta(t)
        })
        .fold(0.0, f64::max)
}

/// Per-region protocol state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionNodeState {
    pub x: f64,
    pub zeta: ExtReal,
    pub z_min: ExtReal,
    pub alpha: f64,
}

/// `x(t+1) = W(t) x(t) - η(t) (g(t) - p(t))` with `g_j = f̂_j(x_j)`.
pub fn x_update_round<F: RegionField>(
    x: &[f64],
    w: &MixingMatrix,
    eta: f64,
    p: &[f64],
    fields: &[F],
) -> Result<Vec<f64>> {
    let n = x.len();
    for len in [p.len(), fields.len(), w.n()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    let mixed = w.apply(x)?;
    Ok(mixed
        .iter()
        .zip(x)
        .zip(fields.iter().zip(p))
        .map(|((m, &xj), (f, pj))| m - eta * (f.value(xj) - pj))
        .collect())
}

pub fn zeta_update(sorted_criticalities: &[f64], x_new: f64) -> ExtReal {
    local_zeta(sorted_criticalities, x_new)
}

/// One round of self-tuning dynamic min-consensus:
/// `z_j ← min(min_{k ∈ N_j ∪ {j}} z_k + α_j, ζ_j)`, then `α_j ← 1/2` if
/// `z_j` grew and `c/2` otherwise.
pub fn dmc_round(
    z: &[ExtReal],
    alpha: &[f64],
    zeta_next: &[ExtReal],
    neighbors: &[Vec<usize>],
    c: f64,
) -> (Vec<ExtReal>, Vec<f64>) {
    let mut z_next = Vec::with_capacity(z.len());
    let mut alpha_next = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let best = neighbors[j]
            .iter()
            .fold(z[j], |acc, &k| acc.min(z[k]));
        let value = best.offset(alpha[j]).min(zeta_next[j]);
        alpha_next.push(if value > z[j] { 0.5 } else { c / 2.0 });
        z_next.push(value);
    }
    (z_next, alpha_next)
}

/// Plain min-consensus: `z_j ← min_{k ∈ N_j ∪ {j}} z_k`.
pub fn min_consensus_round(z: &[ExtReal], neighbors: &[Vec<usize>]) -> Vec<ExtReal> {
    (0..z.len())
        .map(|j| neighbors[j].iter().fold(z[j], |acc, &k| acc.min(z[k])))
        .collect()
}

/// Loads of a region to shed for threshold `z_star`.
pub fn shed_decision(loads: &[LoadPoint], z_star: f64) -> Vec<u64> {
    loads
        .iter()
        .filter(|l| l.criticality <= z_star)
        .map(|l| l.id)
        .collect()
}

/// Everything a run needs. `criticalities[j]` must be sorted ascending.
#[derive(Debug, Clone)]
pub struct ProtocolSetup<F> {
    pub fields: Vec<F>,
    pub criticalities: Vec<Vec<f64>>,
    pub schedule: GraphSchedule,
    pub step: StepSchedule,
    pub estimator: PEstimator,
    /// Surrogate ramp width; sets the settled min-consensus step `c/2`.
    pub ramp_width: f64,
    pub initial_x: Vec<f64>,
    pub max_rounds: usize,
    /// `K`: rounds without change in `ζ` and `z_min` before stopping.
    pub convergence_window: usize,
    /// Also require the quiet stretch to last `ratio · t_c` rounds, `t_c`
    /// being the round of the last change. With `η ~ 1/t` the estimates
    /// need time proportional to `t` to cover a fixed distance. 0 disables.
    pub convergence_ratio: f64,
    /// When false the run always lasts `max_rounds` rounds.
    pub stop_on_convergence: bool,
    /// Also require, before declaring convergence, that the estimates agree
    /// within the ramp width and that some estimate sits on a ramp of its
    /// own surrogate. Quiet `ζ` alone also occurs while all estimates crawl
    /// together across a flat stretch of the surrogate.
    pub require_agreement: bool,
    pub record_trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSnapshot {
    pub x: f64,
    pub zeta: ExtReal,
    pub z_min: ExtReal,
    pub alpha: f64,
    pub p: f64,
}

/// State after round `t`, which used step `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub eta: f64,
    pub regions: Vec<RegionSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    /// Empty when recording was disabled.
    pub records: Vec<RoundRecord>,
    pub rounds: usize,
    pub converged: bool,
    /// Consecutive trailing rounds with unchanged `ζ` (and `z_min` on static graphs).
    pub stable_rounds: usize,
    pub final_state: Vec<RegionNodeState>,
    /// Per-region answer from the closing min-consensus flood over `ζ`.
    pub final_z_star: Vec<ExtReal>,
}

impl RunTrace {
    pub fn final_x(&self) -> Vec<f64> {
        self.final_state.iter().map(|s| s.x).collect()
    }

    /// `min_j z_min` of the dynamic min-consensus.
    pub fn dmc_minimum(&self) -> ExtReal {
        self.final_state
            .iter()
            .fold(ExtReal::PosInf, |acc, s| acc.min(s.z_min))
    }
}

/// Keeps the current random window in memory so each round does not
/// regenerate it.
pub(crate) struct EdgeCursor<'a> {
    schedule: &'a GraphSchedule,
    cached: Option<(usize, Vec<EdgeSet>)>,
}

impl<'a> EdgeCursor<'a> {
    pub(crate) fn new(schedule: &'a GraphSchedule) -> Self {
        EdgeCursor {
            schedule,
            cached: None,
        }
    }

    pub(crate) fn edges_at(&mut self, t: usize) -> EdgeSet {
        if !matches!(self.schedule.kind(), ScheduleKind::Random { .. }) {
            return self.schedule.edges_at(t);
        }
        let b = self.schedule.window();
        let k = t / b;
        if self.cached.as_ref().is_none_or(|(ck, _)| *ck != k) {
            self.cached = Some((k, self.schedule.random_window(k)));
        }
        self.cached.as_ref().unwrap().1[t % b].clone()
    }
}

fn validate_setup<F>(setup: &ProtocolSetup<F>) -> Result<usize> {
    let n = setup.fields.len();
    if n == 0 {
        return Err(Error::domain("protocol needs at least one region"));
    }
    for len in [
        setup.criticalities.len(),
        setup.initial_x.len(),
        setup.schedule.n(),
        setup.estimator.n(),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
    }
    if setup.ramp_width.is_nan() || setup.ramp_width <= 0.0 {
        return Err(Error::domain("ramp width must be positive"));
    }
    setup.step.validate()?;
    Ok(n)
}

const GRAPH_CACHE_LIMIT: usize = 256;

/// Estimates within `c` of their mean, no region holding a criticality
/// between the smallest and largest estimate (so every `ζ_j` is what a
/// common estimate would give), and at least one estimate on a ramp:
/// `ζ_j - c <= x_j`.
fn agreed(x: &[f64], zeta: &[ExtReal], criticalities: &[Vec<f64>], c: f64) -> bool {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let spread = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    spread <= c
        && criticalities
            .iter()
            .all(|crit| zeta_update(crit, lo) == zeta_update(crit, hi))
        && x.iter()
            .zip(zeta)
            .any(|(&xj, z)| z.finite().is_some_and(|zj| zj - c <= xj))
}

/// Runs the protocol until the stopping rule fires or `max_rounds` elapse.
pub fn run_protocol<F: RegionField>(setup: &ProtocolSetup<F>) -> Result<RunTrace> {
    let n = validate_setup(setup)?;
    let c = setup.ramp_width;
    let mut x = setup.initial_x.clone();
    let mut zeta = vec![ExtReal::PosInf; n];
    let mut z = vec![ExtReal::PosInf; n];
    let mut alpha = vec![c / 2.0; n];
    let mut records = Vec::new();
    let mut stable = 0usize;
    let mut last_change = 0usize;
    let mut converged = false;
    let mut rounds = 0usize;
    let mut cursor = EdgeCursor::new(&setup.schedule);
    // on switching graphs z_min follows the changing neighbourhoods and never
    // settles, so only ζ is watched there
    type Graph = (MixingMatrix, Vec<Vec<usize>>);
    let mut graphs: HashMap<EdgeSet, Graph> = HashMap::new();
    let mut current: Option<(EdgeSet, Graph)> = None;
    let watch_z = matches!(setup.schedule.kind(), ScheduleKind::Static(_));

    for t in 0..setup.max_rounds {
        let edges = cursor.edges_at(t);
        // small networks revisit the same few graphs; reuse their weights
        if current.as_ref().is_none_or(|(e, _)| *e != edges) {
            if graphs.len() >= GRAPH_CACHE_LIMIT {
                graphs.clear();
            }
            let entry = match graphs.get(&edges) {
                Some(g) => g.clone(),
                None => {
                    let g = (crate::netgraph::metropolis_weights(&edges, n)?, edges.neighbors(n));
                    graphs.insert(edges.clone(), g.clone());
                    g
                }
            };
            current = Some((edges, entry));
        }
        let (_, (w, nbrs)) = current.as_ref().expect("graph set above");
        let eta = setup.step.eta(t as u64);
        let p = setup.estimator.p_values(t as u64 + 1);

        let x_next = x_update_round(&x, w, eta, &p, &setup.fields)?;
        let zeta_next: Vec<ExtReal> = setup
            .criticalities
            .iter()
            .zip(&x_next)
            .map(|(crit, &xj)| zeta_update(crit, xj))
            .collect();
        let (z_next, alpha_next) = dmc_round(&z, &alpha, &zeta_next, nbrs, c);

        if zeta_next == zeta && (!watch_z || z_next == z) {
            stable += 1;
        } else {
            stable = 0;
            last_change = t;
        }
        x = x_next;
        zeta = zeta_next;
        z = z_next;
        alpha = alpha_next;
        rounds = t + 1;

        if setup.record_trace {
            records.push(RoundRecord {
                t: t as u64,
                eta,
                regions: (0..n)
                    .map(|j| RegionSnapshot {
                        x: x[j],
                        zeta: zeta[j],
                        z_min: z[j],
                        alpha: alpha[j],
                        p: p[j],
                    })
                    .collect(),
            });
        }
        let quiet_needed = (setup.convergence_window as f64).max(setup.convergence_ratio * last_change as f64);
        if stable as f64 >= quiet_needed && (!setup.require_agreement || agreed(&x, &zeta, &setup.criticalities, c)) {
            converged = true;
            if setup.stop_on_convergence {
                break;
            }
        }
    }

    // Closing flood: n windows move the minimum across any B-connected schedule.
    let mut flood = zeta.clone();
    let flood_rounds = n * setup.schedule.window();
    for t in rounds..rounds + flood_rounds {
        flood = min_consensus_round(&flood, &cursor.edges_at(t).neighbors(n));
    }

    Ok(RunTrace {
        records,
        rounds,
        converged,
        stable_rounds: stable,
        final_state: (0..n)
            .map(|j| RegionNodeState {
                x: x[j],
                zeta: zeta[j],
                z_min: z[j],
                alpha: alpha[j],
            })
            .collect(),
        final_z_star: flood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criticality::{build_ccf, RampSum, SurrogateCcf};
    use crate::netgraph::metropolis_weights;

    struct Constant(f64);

    impl RegionField for Constant {
        fn value(&self, _: f64) -> f64 {
            self.0
        }
    }

    #[test]
    fn single_node_drifts_by_p() {
        let w = MixingMatrix::identity(1);
        let x = x_update_round(&[0.0], &w, 1.0, &[2.0], &[Constant(0.0)]).unwrap();
        assert_eq!(x, vec![2.0]);
    }

    #[test]
    fn zero_step_is_pure_averaging() {
        let w = metropolis_weights(&EdgeSet::line(3), 3).unwrap();
        let x = [1.0, 4.0, -2.0];
        let fields = [Constant(5.0), Constant(1.0), Constant(0.0)];
        let got = x_update_round(&x, &w, 0.0, &[0.0; 3], &fields).unwrap();
        assert_eq!(got, w.apply(&x).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let w = MixingMatrix::identity(2);
        let err = x_update_round(&[0.0, 1.0], &w, 0.1, &[0.0], &[Constant(0.0), Constant(0.0)]);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn non_neighbors_are_never_read() {
        let w = metropolis_weights(&EdgeSet::line(4), 4).unwrap();
        let fields: Vec<Constant> = (0..4).map(|j| Constant(j as f64)).collect();
        let x = [0.3, -1.0, 2.0, 7.0];
        let base = x_update_round(&x, &w, 0.2, &[0.5; 4], &fields).unwrap();
        let mut poked = x;
        poked[3] = 0.0;
        let after = x_update_round(&poked, &w, 0.2, &[0.5; 4], &fields).unwrap();
        assert_eq!(base[0], after[0]);
        assert_eq!(base[1], after[1]);
    }

    #[test]
    fn zeta_update_delegates() {
        let c = [0.2, 0.5, 0.7];
        assert_eq!(zeta_update(&c, 0.4), ExtReal::Finite(0.5));
        assert_eq!(zeta_update(&c, 0.2), ExtReal::Finite(0.2));
        assert_eq!(zeta_update(&c, 0.9), ExtReal::PosInf);
    }

    #[test]
    fn dmc_line_settles_at_minimum() {
        let zeta = [0.5, 0.3, 0.9].map(ExtReal::Finite);
        let nbrs = EdgeSet::line(3).neighbors(3);
        let c = 0.1;
        let mut z = vec![ExtReal::PosInf; 3];
        let mut alpha = vec![c / 2.0; 3];
        for _ in 0..10 {
            (z, alpha) = dmc_round(&z, &alpha, &zeta, &nbrs, c);
        }
        // the holder of the minimum keeps it exactly; others sit one
        // settled step per hop above it unless their own ζ is lower
        assert_eq!(z[1], ExtReal::Finite(0.3));
        assert!((z[0].finite().unwrap() - 0.35).abs() < 1e-12);
        assert!((z[2].finite().unwrap() - 0.35).abs() < 1e-12);
        assert_eq!(alpha, vec![c / 2.0; 3]);
        let flood = (0..2).fold(zeta.to_vec(), |acc, _| min_consensus_round(&acc, &nbrs));
        assert_eq!(flood, vec![ExtReal::Finite(0.3); 3]);
    }

    #[test]
    fn dmc_single_node_tracks_zeta() {
        let nbrs = vec![vec![]];
        let mut z = vec![ExtReal::PosInf];
        let mut alpha = vec![0.05];
        for v in [0.4, 0.4, 0.2, 0.2] {
            let zeta = [ExtReal::Finite(v)];
            (z, alpha) = dmc_round(&z, &alpha, &zeta, &nbrs, 0.1);
            assert_eq!(z[0], zeta[0]);
        }
        // a rising ζ is caught up with through the self-tuned step
        let zeta = [ExtReal::Finite(0.6)];
        (z, alpha) = dmc_round(&z, &alpha, &zeta, &nbrs, 0.1);
        assert!((z[0].finite().unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(alpha[0], 0.5);
        (z, _) = dmc_round(&z, &alpha, &zeta, &nbrs, 0.1);
        assert_eq!(z[0], zeta[0]);
    }

    #[test]
    fn dmc_sentinel_region_never_injects_infinity() {
        let zeta = [ExtReal::Finite(0.4), ExtReal::PosInf];
        let nbrs = EdgeSet::line(2).neighbors(2);
        let mut z = vec![ExtReal::PosInf; 2];
        let mut alpha = vec![0.05; 2];
        for _ in 0..6 {
            (z, alpha) = dmc_round(&z, &alpha, &zeta, &nbrs, 0.1);
        }
        assert_eq!(z[0], ExtReal::Finite(0.4));
        assert!((z[1].finite().unwrap() - 0.45).abs() < 1e-12);
    }

    #[test]
    fn p_values_examples() {
        let p = PEstimator::exact(2.94, 4);
        assert_eq!(p.p_values(1), vec![0.735; 4]);
        assert_eq!(p.p_values(1000), vec![0.735; 4]);
        assert_eq!(PEstimator::exact(0.0, 3).p_values(5), vec![0.0; 3]);

        let noisy = PEstimator::new(PModel::NoisySplit { amplitude: 1.0 }, 2.94, 4, 9).unwrap();
        assert_eq!(noisy.p_values(0), vec![0.735; 4]);
        assert_eq!(noisy.p_values(17), noisy.p_values(17));
        for t in 1..2000u64 {
            let sum: f64 = noisy.p_values(t).iter().sum();
            assert!((sum - 2.94).abs() <= 4.0 / t as f64 + 1e-12);
        }
        let theta = certify_p_estimator(&noisy, &StepSchedule::Harmonic, 1..=2000);
        assert!(theta <= 8.0);
        assert_eq!(certify_p_estimator(&p, &StepSchedule::Harmonic, 1..=100), 0.0);

        let trace = PEstimator::new(PModel::Trace { rows: vec![vec![1.0, 2.0], vec![3.0, 4.0]] }, 3.0, 2, 0).unwrap();
        assert_eq!(trace.p_values(0), vec![1.0, 2.0]);
        assert_eq!(trace.p_values(9), vec![3.0, 4.0]);
        assert!(PEstimator::new(PModel::Trace { rows: vec![vec![1.0]] }, 1.0, 2, 0).is_err());
    }

    #[test]
    fn step_rules() {
        assert_eq!(StepSchedule::Harmonic.eta(0), 1.0);
        assert_eq!(StepSchedule::Harmonic.eta(3), 0.25);
        let p = StepSchedule::Power { scale: 2.0, exponent: 1.0 };
        assert_eq!(p.eta(1), 1.0);
        assert!(StepSchedule::Power { scale: 1.0, exponent: 0.5 }.validate().is_err());
        assert!(StepSchedule::Power { scale: 1.0, exponent: 0.75 }.validate().is_ok());
    }

    #[test]
    fn shed_decision_cases() {
        let loads = [
            LoadPoint::new(1, 1.0, 0.2),
            LoadPoint::new(2, 1.0, 0.5),
            LoadPoint::new(3, 1.0, 0.7),
        ];
        assert_eq!(shed_decision(&loads, 0.5), vec![1, 2]);
        assert!(shed_decision(&loads, 0.1).is_empty());
    }

    fn two_region_split() -> [Vec<(f64, f64)>; 2] {
        [
            vec![(1.0, 0.1), (2.0, 0.15), (1.0, 0.2), (4.0, 0.4)],
            vec![(1.0, 0.4), (2.0, 0.5), (2.0, 0.7), (3.0, 0.8)],
        ]
    }

    fn discrete_setup(regions: &[Vec<(f64, f64)>], c: f64, p: f64) -> ProtocolSetup<SurrogateCcf> {
        let n = regions.len();
        let fields: Vec<SurrogateCcf> = regions
            .iter()
            .map(|r| SurrogateCcf::new(build_ccf(r).unwrap(), c).unwrap())
            .collect();
        let criticalities: Vec<Vec<f64>> = fields.iter().map(|f| f.base().levels().to_vec()).collect();
        let initial_x = criticalities.iter().map(|c| c[0]).collect();
        ProtocolSetup {
            fields,
            criticalities,
            schedule: GraphSchedule::static_graph(n, EdgeSet::line(n)).unwrap(),
            step: StepSchedule::Harmonic,
            estimator: PEstimator::exact(p, n),
            ramp_width: c,
            initial_x,
            max_rounds: 200_000,
            convergence_window: 50,
            stop_on_convergence: true,
            require_agreement: true,
            convergence_ratio: 0.0,
            record_trace: true,
        }
    }

    #[test]
    fn two_regions_reach_z_star() {
        let setup = discrete_setup(&two_region_split(), 0.05, 6.0);
        let trace = run_protocol(&setup).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.records.len(), trace.rounds);
        assert_eq!(trace.dmc_minimum(), ExtReal::Finite(0.4));
        assert_eq!(trace.final_z_star, vec![ExtReal::Finite(0.4); 2]);

        let shed: f64 = two_region_split()
            .iter()
            .flat_map(|r| r.iter().filter(|l| l.1 <= 0.4).map(|l| l.0))
            .sum();
        assert_eq!(shed, 9.0);
    }

    #[test]
    fn single_region_needs_no_communication() {
        let all: Vec<(f64, f64)> = two_region_split().concat();
        let setup = discrete_setup(&[all], 0.05, 6.0);
        let trace = run_protocol(&setup).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.final_z_star, vec![ExtReal::Finite(0.4)]);
        assert_eq!(trace.final_state[0].zeta, ExtReal::Finite(0.4));
    }

    #[test]
    fn continuous_instance_converges_near_oracle() {
        let caps = [(1.0, 1.2), (2.0, 1.2), (2.0, 1.2), (3.0, 1.2)];
        let fields: Vec<RampSum> = caps.iter().map(|&pt| RampSum::new(&[pt], 1.0).unwrap()).collect();
        let setup = ProtocolSetup {
            criticalities: caps.iter().map(|c| vec![c.0]).collect(),
            initial_x: caps.iter().map(|c| c.0).collect(),
            fields,
            schedule: GraphSchedule::static_graph(4, EdgeSet::line(4)).unwrap(),
            step: StepSchedule::Harmonic,
            estimator: PEstimator::exact(1.8, 4),
            ramp_width: 1.0,
            max_rounds: 1000,
            convergence_window: 50,
            stop_on_convergence: false,
            require_agreement: false,
            convergence_ratio: 0.0,
            record_trace: true,
        };
        let trace = run_protocol(&setup).unwrap();
        assert_eq!(trace.rounds, 1000);
        for x in trace.final_x() {
            assert!((x - 1.25).abs() < 0.01, "{x}");
        }
    }
}
