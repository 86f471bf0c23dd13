//! Distributed root finding for time-varying local fields.
//!
//! Node `j` holds `h_j(z, t)`. The recursion `x(t+1) = W(t) x(t) - η(t) y(t)`
//! with `y_j(t) = h_j(x_j(t), t)` drives every node to a common root of the
//! averaged limit field `H(z) = (1/n) Σ_j lim_t h_j(z, t)`, provided the
//! fields are bounded and Lipschitz, `H` changes sign once (`(z - z*) H(z) >= 0`),
//! the time-t average approaches `H` at rate `η(t)`, the mixing matrices are
//! doubly stochastic over B-connected graphs, and `η` is square-summable but
//! not summable. This module runs that recursion and checks each of those
//! conditions numerically.

use serde::{Deserialize, Serialize};

use crate::criticality::RegionField;
use crate::error::{Error, Result};
use crate::netgraph::{metropolis_weights, GraphSchedule, MixingMatrix};
use crate::protocol::{EdgeCursor, PEstimator, StepSchedule};

/// Slack allowed in the sampled sign condition.
pub const SIGN_TOLERANCE: f64 = 1e-9;
/// Multiplier applied to the largest sampled difference quotient.
pub const LIPSCHITZ_SAFETY: f64 = 1.1;
/// Allowed growth of the late-horizon deviation ratio over its earlier peak.
pub const RATIO_GROWTH_LIMIT: f64 = 1.25;

pub trait TimeVaryingField {
    fn n(&self) -> usize;

    fn eval(&self, j: usize, z: f64, t: u64) -> f64;

    /// `lim_{t→∞} h_j(z, t)` when known in closed form.
    fn limit(&self, _j: usize, _z: f64) -> Option<f64> {
        None
    }

    fn claimed_bound(&self) -> Option<f64> {
        None
    }

    fn claimed_lipschitz(&self) -> Option<f64> {
        None
    }
}

type EvalFn = Box<dyn Fn(usize, f64, u64) -> f64 + Send + Sync>;
type LimitFn = Box<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Field given by closures.
pub struct FnField {
    n: usize,
    eval: EvalFn,
    limit: Option<LimitFn>,
    bound: Option<f64>,
    lipschitz: Option<f64>,
}

impl FnField {
    pub fn new(n: usize, eval: impl Fn(usize, f64, u64) -> f64 + Send + Sync + 'static) -> Self {
        FnField {
            n,
            eval: Box::new(eval),
            limit: None,
            bound: None,
            lipschitz: None,
        }
    }

    pub fn with_limit(mut self, limit: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.limit = Some(Box::new(limit));
        self
    }

    pub fn with_claims(mut self, bound: Option<f64>, lipschitz: Option<f64>) -> Self {
        self.bound = bound;
        self.lipschitz = lipschitz;
        self
    }
}

impl TimeVaryingField for FnField {
    fn n(&self) -> usize {
        self.n
    }

    fn eval(&self, j: usize, z: f64, t: u64) -> f64 {
        (self.eval)(j, z, t)
    }

    fn limit(&self, j: usize, z: f64) -> Option<f64> {
        self.limit.as_ref().map(|l| l(j, z))
    }

    fn claimed_bound(&self) -> Option<f64> {
        self.bound
    }

    fn claimed_lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// `h_j(z, t) = f̂_j(z) - p_j(t + 1)`, using the same estimator clock as
/// the protocol runtime.
pub struct LoadSheddingField<F> {
    pub fields: Vec<F>,
    pub estimator: PEstimator,
}

impl<F: RegionField> TimeVaryingField for LoadSheddingField<F> {
    fn n(&self) -> usize {
        self.fields.len()
    }

    fn eval(&self, j: usize, z: f64, t: u64) -> f64 {
        self.fields[j].value(z) - self.estimator.p_values(t + 1)[j]
    }

    fn limit(&self, j: usize, z: f64) -> Option<f64> {
        Some(self.fields[j].value(z) - self.estimator.total() / self.fields.len() as f64)
    }
}

/// One synchronous round `x(t+1) = W(t) x(t) - η(t) y(t)`.
pub fn aux_update_round(
    x: &[f64],
    w: &MixingMatrix,
    eta: f64,
    field: &dyn TimeVaryingField,
    t: u64,
) -> Result<Vec<f64>> {
    if field.n() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: field.n(),
        });
    }
    let mixed = w.apply(x)?;
    Ok(mixed
        .iter()
        .zip(x)
        .enumerate()
        .map(|(j, (m, &xj))| m - eta * field.eval(j, xj, t))
        .collect())
}

/// Evenly spaced sample points over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points < 2 || lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::domain(format!(
                "grid needs lo < hi and at least 2 points, got [{lo}, {hi}] with {points}"
            )));
        }
        Ok(Grid { lo, hi, points })
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.lo + (self.hi - self.lo) * (i as f64 / last))
            .collect()
    }
}

/// Time samples: every round up to 64, then geometric up to `horizon`.
fn sample_times(horizon: u64) -> Vec<u64> {
    let mut times: Vec<u64> = (0..horizon.min(64)).collect();
    let mut t = 64.0f64;
    while (t as u64) < horizon {
        times.push(t as u64);
        t *= 1.1;
    }
    if horizon > 0 {
        times.push(horizon - 1);
    }
    times.dedup();
    times
}

/// `H` on the grid, from declared limits or from late-time samples.
fn limit_average(field: &dyn TimeVaryingField, zs: &[f64], late_t: u64) -> (Vec<f64>, bool) {
    let n = field.n();
    let declared = (0..n).all(|j| field.limit(j, zs[0]).is_some());
    let h = zs
        .iter()
        .map(|&z| {
            let sum: f64 = (0..n)
                .map(|j| {
                    if declared {
                        field.limit(j, z).unwrap()
                    } else {
                        field.eval(j, z, late_t)
                    }
                })
                .sum();
            sum / n as f64
        })
        .collect();
    (h, declared)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub bound_estimate: f64,
    pub lipschitz_estimate: f64,
    pub bound_ok: bool,
    pub lipschitz_ok: bool,
    /// Root of the sampled `H` used to test the sign condition.
    pub witness: Option<f64>,
    pub sign_ok: bool,
    /// First grid point violating `(z - z*) H(z) >= 0`.
    pub failing_sample: Option<f64>,
    pub limit_declared: bool,
    pub grid: Grid,
}

impl FieldReport {
    pub fn passed(&self) -> bool {
        self.bound_ok && self.lipschitz_ok && self.sign_ok
    }
}

/// Bounded, Lipschitz and sign-condition checks on a grid.
pub fn verify_field(field: &dyn TimeVaryingField, grid: Grid, horizon: u64) -> FieldReport {
    let zs = grid.values();
    let n = field.n();
    let mut bound: f64 = 0.0;
    let mut quotient: f64 = 0.0;
    for t in sample_times(horizon) {
        for j in 0..n {
            let vals: Vec<f64> = zs.iter().map(|&z| field.eval(j, z, t)).collect();
            bound = vals.iter().fold(bound, |m, v| m.max(v.abs()));
            for i in 1..zs.len() {
                quotient = quotient.max((vals[i] - vals[i - 1]).abs() / (zs[i] - zs[i - 1]));
            }
        }
    }
    let lipschitz = LIPSCHITZ_SAFETY * quotient;

    let (h, limit_declared) = limit_average(field, &zs, horizon.saturating_mul(10));
    let witness = match h.iter().rposition(|&v| v < -SIGN_TOLERANCE) {
        None => zs[0],
        Some(i) if i + 1 == zs.len() => zs[i],
        Some(i) => {
            let (a, b) = (zs[i], zs[i + 1]);
            let (ha, hb) = (h[i], h[i + 1]);
            if hb > ha {
                (a - ha * (b - a) / (hb - ha)).clamp(a, b)
            } else {
                b
            }
        }
    };
    let failing_sample = zs
        .iter()
        .zip(&h)
        .find(|&(&z, &hz)| (z - witness) * hz < -SIGN_TOLERANCE)
        .map(|(&z, _)| z);

    FieldReport {
        bound_estimate: bound,
        lipschitz_estimate: lipschitz,
        bound_ok: bound.is_finite() && field.claimed_bound().is_none_or(|m| bound <= m),
        lipschitz_ok: lipschitz.is_finite()
            && field.claimed_lipschitz().is_none_or(|l| quotient <= l),
        witness: failing_sample.is_none().then_some(witness),
        sign_ok: failing_sample.is_none(),
        failing_sample,
        limit_declared,
        grid,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRateReport {
    /// `max_t max_z |H(z) - (1/n) Σ_j h_j(z, t)| / η(t)`.
    pub theta: f64,
    /// Peak ratio over the first half of the horizon.
    pub early_peak: f64,
    /// Peak ratio over the second half.
    pub late_peak: f64,
    pub passed: bool,
    pub horizon: u64,
}

/// Checks that the time-`t` average field approaches `H` at rate `η(t)`:
/// the ratio's peak over the second half of the horizon may not exceed
/// `RATIO_GROWTH_LIMIT` times its peak over the first half.
pub fn verify_estimate_rate(
    field: &dyn TimeVaryingField,
    grid: Grid,
    horizon: u64,
    step: &StepSchedule,
) -> Result<EstimateRateReport> {
    if horizon < 4 {
        return Err(Error::domain("estimate-rate check needs a horizon of at least 4"));
    }
    let zs = grid.values();
    let n = field.n();
    let (h, _) = limit_average(field, &zs, horizon.saturating_mul(10));
    let half = horizon / 2;
    let (mut early, mut late) = (0.0f64, 0.0f64);
    for t in 1..=horizon {
        let dev = zs
            .iter()
            .zip(&h)
            .map(|(&z, &hz)| {
                let avg: f64 = (0..n).map(|j| field.eval(j, z, t)).sum::<f64>() / n as f64;
                (hz - avg).abs()
            })
            .fold(0.0, f64::max);
        let ratio = dev / step.eta(t);
        if t < half {
            early = early.max(ratio);
        } else {
            late = late.max(ratio);
        }
    }
    let theta = early.max(late);
    Ok(EstimateRateReport {
        theta,
        early_peak: early,
        late_peak: late,
        passed: theta.is_finite() && late <= RATIO_GROWTH_LIMIT * early,
        horizon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub sum: f64,
    pub sum_of_squares: f64,
    pub horizon: u64,
    pub passed: bool,
}

/// Partial sums of `η` and `η²`; the rule itself is validated analytically.
pub fn verify_step_schedule(step: &StepSchedule, horizon: u64) -> StepReport {
    let (sum, sq) = (0..horizon).fold((0.0, 0.0), |(s, q), t| {
        let e = step.eta(t);
        (s + e, q + e * e)
    });
    StepReport {
        sum,
        sum_of_squares: sq,
        horizon,
        passed: step.validate().is_ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootFindOptions {
    /// Stop once every `|x_i - x̄| <= tolerance` and `|ȳ| <= tolerance`.
    pub tolerance: f64,
    pub max_rounds: usize,
    pub record_states: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max_i |x_i(t+1) - x̄(t+1)|` per round.
    pub disagreement: Vec<f64>,
    /// `max_i |x_i(t+1) - x̄(t+1)| / η(t)` per round.
    pub consensus_ratio: Vec<f64>,
    /// `x̄(t+1)` per round.
    pub mean: Vec<f64>,
    /// `ȳ(t)` per round.
    pub mean_field: Vec<f64>,
    pub ratio_max: f64,
    /// Round at which the consensus ratio reached its maximum.
    pub ratio_argmax: usize,
    pub mean_abs_max: f64,
    /// `Σ_t η(t) |ȳ(t) - H(x̄(t))|`, when `H` is declared.
    pub omega_estimate: Option<f64>,
    /// `x(t+1)` per round when requested.
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootRun {
    pub root: f64,
    pub x: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn limit_mean(field: &dyn TimeVaryingField, z: f64) -> Option<f64> {
    let n = field.n();
    (0..n)
        .map(|j| field.limit(j, z))
        .sum::<Option<f64>>()
        .map(|s| s / n as f64)
}

pub fn run_to_root(
    field: &dyn TimeVaryingField,
    schedule: &GraphSchedule,
    step: &StepSchedule,
    x0: &[f64],
    options: RootFindOptions,
) -> Result<RootRun> {
    let n = field.n();
    if x0.len() != n || schedule.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if x0.len() != n { x0.len() } else { schedule.n() },
        });
    }
    step.validate()?;
    let mut x = x0.to_vec();
    let mut diag = Diagnostics::default();
    let mut omega = limit_mean(field, mean(&x)).map(|_| 0.0);
    let mut cursor = EdgeCursor::new(schedule);
    let mut converged = false;
    let mut rounds = 0;

    for t in 0..options.max_rounds {
        let w = metropolis_weights(&cursor.edges_at(t), n)?;
        let eta = step.eta(t as u64);
        let y_bar = mean(&(0..n).map(|j| field.eval(j, x[j], t as u64)).collect::<Vec<_>>());
        if let (Some(acc), Some(h)) = (omega.as_mut(), limit_mean(field, mean(&x))) {
            *acc += eta * (y_bar - h).abs();
        }
        x = aux_update_round(&x, &w, eta, field, t as u64)?;
        rounds = t + 1;

        let x_bar = mean(&x);
        let spread = x.iter().map(|v| (v - x_bar).abs()).fold(0.0, f64::max);
        let ratio = spread / eta;
        if ratio > diag.ratio_max {
            diag.ratio_max = ratio;
            diag.ratio_argmax = t;
        }
        diag.mean_abs_max = diag.mean_abs_max.max(x_bar.abs());
        diag.disagreement.push(spread);
        diag.consensus_ratio.push(ratio);
        diag.mean.push(x_bar);
        diag.mean_field.push(y_bar);
        if options.record_states {
            diag.states.push(x.clone());
        }
        if spread <= options.tolerance && y_bar.abs() <= options.tolerance {
            converged = true;
            break;
        }
    }
    diag.omega_estimate = omega;
    Ok(RootRun {
        root: mean(&x),
        x,
        rounds,
        converged,
        diagnostics: diag,
    })
}

/// Bound constants and pass/fail results for all convergence conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCertificate {
    /// Uniform bound on the fields.
    pub bound: f64,
    pub lipschitz: f64,
    /// Rate constant of the averaged-field deviation.
    pub theta: f64,
    /// Rate constant of the deficit-estimate deviation.
    pub estimate_theta: f64,
    pub window: usize,
    pub nu_estimate: f64,
    pub omega_estimate: Option<f64>,
    pub sign_witness: Option<f64>,
    pub checks: Vec<CheckResult>,
}

impl AssumptionCertificate {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}
