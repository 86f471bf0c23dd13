//! Loads, criticality values, cumulative criticality functions (CCFs) and
//! their piecewise-linear surrogates.
//!
//! A CCF maps a criticality threshold `z` to the total power of all loads
//! whose criticality is at most `z`. It is a right-continuous step function.
//! The surrogate replaces every step by a linear ramp of width `c` ending at
//! the step, which makes it globally Lipschitz while agreeing with the CCF at
//! every load's criticality value as long as `c` does not exceed the smallest
//! gap between distinct criticality values.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when comparing a ramp width against the minimum gap.
/// Gaps are differences of decimal inputs and may be off by a few ulps.
pub const GAP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: u64,
    /// Power demand in GW.
    pub power: f64,
    pub nature_criticality: f64,
    #[serde(default)]
    pub region_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub region_criticality: f64,
    #[serde(default)]
    pub loads: Vec<Load>,
}

impl Region {
    /// `(power, criticality)` pairs for every load in the region.
    pub fn criticality_pairs(&self, combiner: &dyn CriticalityCombiner) -> Result<Vec<(f64, f64)>> {
        self.loads
            .iter()
            .map(|l| {
                combine_criticality(combiner, l.nature_criticality, self.region_criticality)
                    .map(|c| (l.power, c))
            })
            .collect()
    }

    pub fn total_power(&self) -> f64 {
        self.loads.iter().map(|l| l.power).sum()
    }
}

/// Maps a load's nature criticality and its region's criticality to the
/// load's overall criticality.
pub trait CriticalityCombiner {
    fn combine_unchecked(&self, nature: f64, region: f64) -> f64;
}

/// `weight * C_n + (1 - weight) * C_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexCombiner {
    pub nature_weight: f64,
}

impl ConvexCombiner {
    pub fn new(nature_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&nature_weight) {
            return Err(Error::domain(format!(
                "combiner weight {nature_weight} outside [0, 1]"
            )));
        }
        Ok(ConvexCombiner { nature_weight })
    }
}

impl Default for ConvexCombiner {
    fn default() -> Self {
        ConvexCombiner { nature_weight: 0.5 }
    }
}

impl CriticalityCombiner for ConvexCombiner {
    fn combine_unchecked(&self, nature: f64, region: f64) -> f64 {
        self.nature_weight * nature + (1.0 - self.nature_weight) * region
    }
}

impl<F: Fn(f64, f64) -> f64> CriticalityCombiner for F {
    fn combine_unchecked(&self, nature: f64, region: f64) -> f64 {
        self(nature, region)
    }
}

fn unit_interval(name: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::domain(format!("{name} {v} outside [0, 1]")))
    }
}

pub fn combine_criticality(combiner: &dyn CriticalityCombiner, nature: f64, region: f64) -> Result<f64> {
    unit_interval("nature criticality", nature)?;
    unit_interval("region criticality", region)?;
    unit_interval("combined criticality", combiner.combine_unchecked(nature, region))
}

/// A real number or the `+inf` sentinel. The sentinel never takes part in
/// arithmetic; it only orders above every finite value. Serialized as a
/// plain number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ExtRealRepr", into = "ExtRealRepr")]
pub enum ExtReal {
    Finite(f64),
    PosInf,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum InfTag {
    Inf,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExtRealRepr {
    Finite(f64),
    Inf(InfTag),
}

impl From<ExtRealRepr> for ExtReal {
    fn from(r: ExtRealRepr) -> Self {
        match r {
            ExtRealRepr::Finite(v) => ExtReal::Finite(v),
            ExtRealRepr::Inf(_) => ExtReal::PosInf,
        }
    }
}

impl From<ExtReal> for ExtRealRepr {
    fn from(v: ExtReal) -> Self {
        match v {
            ExtReal::Finite(v) => ExtRealRepr::Finite(v),
            ExtReal::PosInf => ExtRealRepr::Inf(InfTag::Inf),
        }
    }
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInf => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::PosInf)
    }

    /// Adds a finite offset; the sentinel absorbs it.
    pub fn offset(self, delta: f64) -> ExtReal {
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(v + delta),
            ExtReal::PosInf => ExtReal::PosInf,
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
            (ExtReal::Finite(_), ExtReal::PosInf) => Some(Ordering::Less),
            (ExtReal::PosInf, ExtReal::Finite(_)) => Some(Ordering::Greater),
            (ExtReal::PosInf, ExtReal::PosInf) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => f.write_str("inf"),
        }
    }
}

/// Something a region can evaluate locally at its own estimate.
pub trait RegionField {
    fn value(&self, z: f64) -> f64;
}

/// Sorts `(position, mass)` pairs by position and merges equal positions.
/// Zero masses are dropped.
fn merge_points(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1 > 0.0).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (pos, mass) in sorted {
        match merged.last_mut() {
            Some(last) if last.0 == pos => last.1 += mass,
            _ => merged.push((pos, mass)),
        }
    }
    merged
}

fn validate_points(points: &[(f64, f64)]) -> Result<()> {
    for &(mass, pos) in points {
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(Error::domain(format!("load power {mass} must be finite and >= 0")));
        }
        if !pos.is_finite() {
            return Err(Error::domain(format!("criticality {pos} is not finite")));
        }
    }
    Ok(())
}

/// Right-continuous cumulative step function `f(z) = Σ_{C(ℓ) <= z} ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ccf {
    levels: Vec<f64>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Ccf {
    pub fn zero() -> Self {
        Ccf {
            levels: Vec::new(),
            masses: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    /// Breakpoints as `(criticality, cumulative load)`.
    pub fn breakpoints(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.levels.iter().copied().zip(self.cumulative.iter().copied())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Load sitting exactly at each breakpoint.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_load(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self.levels.partition_point(|&c| c <= z) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// Index of the first breakpoint strictly above `z`.
    pub(crate) fn first_above(&self, z: f64) -> usize {
        self.levels.partition_point(|&c| c <= z)
    }
}

/// Builds the CCF of `(power, criticality)` pairs.
pub fn build_ccf(loads: &[(f64, f64)]) -> Result<Ccf> {
    validate_points(loads)?;
    let swapped: Vec<(f64, f64)> = loads.iter().map(|&(p, c)| (c, p)).collect();
    let merged = merge_points(&swapped);
    let mut acc = 0.0;
    let mut ccf = Ccf::zero();
    for (level, mass) in merged {
        acc += mass;
        ccf.levels.push(level);
        ccf.masses.push(mass);
        ccf.cumulative.push(acc);
    }
    Ok(ccf)
}

pub fn eval_ccf(ccf: &Ccf, z: f64) -> f64 {
    ccf.eval(z)
}

/// Smallest positive difference between two criticality values.
pub fn min_gap(criticalities: &[f64]) -> Result<f64> {
    if let Some(bad) = criticalities.iter().find(|c| !c.is_finite()) {
        return Err(Error::domain(format!("criticality {bad} is not finite")));
    }
    let mut sorted = criticalities.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .min_by(f64::total_cmp)
        .ok_or(Error::UndefinedRamp)
}

/// `Σ mass · w_width(z - position)` where `w_width` ramps linearly from 0 at
/// `-width` to 1 at 0 and stays 1 afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct RampSum {
    positions: Vec<f64>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
    width: f64,
}

impl RampSum {
    /// `points` are `(position, mass)` pairs.
    pub fn new(points: &[(f64, f64)], width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::domain(format!("ramp width {width} must be positive")));
        }
        let swapped: Vec<(f64, f64)> = points.iter().map(|&(c, m)| (m, c)).collect();
        validate_points(&swapped)?;
        let merged = merge_points(points);
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(merged.len());
        for &(_, m) in &merged {
            acc += m;
            cumulative.push(acc);
        }
        Ok(RampSum {
            positions: merged.iter().map(|p| p.0).collect(),
            masses: merged.iter().map(|p| p.1).collect(),
            cumulative,
            width,
        })
    }

    fn from_ccf(ccf: &Ccf, width: f64) -> Self {
        RampSum {
            positions: ccf.levels.clone(),
            masses: ccf.masses.clone(),
            cumulative: ccf.cumulative.clone(),
            width,
        }
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.total() / self.width
    }

    pub fn eval(&self, z: f64) -> f64 {
        let k = self.positions.partition_point(|&c| c <= z);
        let mut value = if k == 0 { 0.0 } else { self.cumulative[k - 1] };
        for i in k..self.positions.len() {
            let offset = z - self.positions[i];
            if offset < -self.width {
                break;
            }
            value += self.masses[i] * (offset / self.width + 1.0);
        }
        value
    }

    /// Points where the slope may change, ascending.
    fn knots(&self) -> Vec<f64> {
        let mut knots: Vec<f64> = self
            .positions
            .iter()
            .flat_map(|&c| [c - self.width, c])
            .collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        knots
    }

    /// Smallest `z` with `eval(z) == target`. On a plateau at the target
    /// level the left endpoint is returned. For `target == 0` that is the
    /// start of the first ramp.
    pub fn invert(&self, target: f64) -> Result<f64> {
        let total = self.total();
        if !(0.0..=total).contains(&target) {
            return Err(Error::domain(format!(
                "target {target} outside the attainable range [0, {total}]"
            )));
        }
        let knots = self.knots();
        let Some(&first) = knots.first() else {
            return Err(Error::domain("cannot invert an empty ramp sum"));
        };
        let mut prev = (first, self.eval(first));
        if prev.1 >= target {
            return Ok(first);
        }
        for &knot in &knots[1..] {
            let value = self.eval(knot);
            if value >= target {
                if value == target {
                    return Ok(knot);
                }
                let (a, va) = prev;
                let z = a + (target - va) * (knot - a) / (value - va);
                return Ok(z.clamp(a, knot));
            }
            prev = (knot, value);
        }
        // eval at the last knot is the full total, so the loop always returns
        Ok(*knots.last().unwrap())
    }
}

impl RegionField for RampSum {
    fn value(&self, z: f64) -> f64 {
        self.eval(z)
    }
}

/// Lipschitz surrogate of a CCF with ramp width `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateCcf {
    base: Ccf,
    ramp: RampSum,
}

impl SurrogateCcf {
    /// Fails when `ramp_width` is not positive or exceeds the minimum gap
    /// between the base CCF's breakpoints.
    pub fn new(base: Ccf, ramp_width: f64) -> Result<Self> {
        if !(ramp_width.is_finite() && ramp_width > 0.0) {
            return Err(Error::domain(format!("ramp width {ramp_width} must be positive")));
        }
        if let Ok(gap) = min_gap(base.levels()) {
            if ramp_width > gap + GAP_TOLERANCE {
                return Err(Error::domain(format!(
                    "ramp width {ramp_width} exceeds the minimum criticality gap {gap}"
                )));
            }
        }
        let ramp = RampSum::from_ccf(&base, ramp_width);
        Ok(SurrogateCcf { base, ramp })
    }

    /// Surrogate with the largest admissible ramp width.
    pub fn with_min_gap(base: Ccf) -> Result<Self> {
        let gap = min_gap(base.levels())?;
        Self::new(base, gap)
    }

    pub fn base(&self) -> &Ccf {
        &self.base
    }

    pub fn ramp_width(&self) -> f64 {
        self.ramp.width
    }

    pub fn total_load(&self) -> f64 {
        self.base.total_load()
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.ramp.eval(z)
    }

    pub(crate) fn ramp(&self) -> &RampSum {
        &self.ramp
    }
}

impl RegionField for SurrogateCcf {
    fn value(&self, z: f64) -> f64 {
        self.eval(z)
    }
}

pub fn eval_surrogate(s: &SurrogateCcf, z: f64) -> f64 {
    s.eval(z)
}

/// Smallest value in `sorted` that is `>= x`, or the `+inf` sentinel.
pub fn local_zeta(sorted: &[f64], x: f64) -> ExtReal {
    match sorted.get(sorted.partition_point(|&c| c < x)) {
        Some(&c) => ExtReal::Finite(c),
        None => ExtReal::PosInf,
    }
}
