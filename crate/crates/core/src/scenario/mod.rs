//! Scenario files, the random scenario generator, run orchestration and
//! report/trace emission.
//!
//! A scenario is a single JSON document (`version: 1`). See
//! `docs/scenario.schema.json` for the full schema.

mod generate;
mod report;
mod trace;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use generate::{generate_scenario, GeneratorParams};
pub use report::{
    certify, continuous_fields, initial_estimates, run_continuous, run_discrete, run_scenario,
    solve_scenario, surrogate_fields, ContinuousOracle,
    DiscreteOracle, DistributedSummary, OracleSummary, SummaryReport,
};
pub use trace::{emit_trace, format_sig12, write_trace, TRACE_HEADER};

use crate::criticality::{combine_criticality, min_gap, ConvexCombiner, GAP_TOLERANCE};
use crate::error::{Error, Result};
use crate::netgraph::{check_window_connectivity, EdgeSet, GraphSchedule, ScheduleKind};
use crate::oracle::LoadPoint;
use crate::protocol::{PEstimator, PModel, StepSchedule};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub id: u64,
    pub power: f64,
    pub nature_criticality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub id: usize,
    pub region_criticality: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loads: Vec<LoadSpec>,
    /// Sheddable capacity in GW (continuous mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

/// `"auto"` (the minimum criticality gap) or an explicit width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RampWidth {
    Fixed(f64),
    Auto(AutoTag),
}

impl Default for RampWidth {
    fn default() -> Self {
        RampWidth::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    Zero,
    /// Each region starts at its smallest criticality value.
    RegionMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialX {
    Value(f64),
    Rule(InitRule),
}

impl Default for InitialX {
    fn default() -> Self {
        InitialX::Rule(InitRule::RegionMin)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    #[default]
    Line,
    Complete,
    Static {
        edges: Vec<(usize, usize)>,
    },
    Periodic {
        edge_sets: Vec<Vec<(usize, usize)>>,
        window: usize,
    },
    /// Seeded random links, repaired per window to stay connected.
    Random {
        edge_probability: f64,
        window: usize,
    },
}

fn default_weight() -> f64 {
    0.5
}

fn default_max_rounds() -> usize {
    200_000
}

fn default_window() -> usize {
    50
}

fn default_ratio() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_estimator() -> PModel {
    PModel::ExactSplit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub mode: Mode,
    pub regions: Vec<RegionSpec>,
    /// Weight of the nature criticality in the convex combiner.
    #[serde(default = "default_weight")]
    pub combiner_weight: f64,
    #[serde(default)]
    pub ramp_width: RampWidth,
    /// Deficit `P` to cover, in GW.
    pub power_deficit: f64,
    #[serde(default)]
    pub graph: GraphSpec,
    #[serde(default)]
    pub step: StepSchedule,
    #[serde(default = "default_estimator")]
    pub estimator: PModel,
    #[serde(default)]
    pub initial_x: InitialX,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Unchanged rounds required before the run stops.
    #[serde(default = "default_window")]
    pub convergence_window: usize,
    /// Quiet stretch as a multiple of the round of the last change.
    #[serde(default = "default_ratio")]
    pub convergence_ratio: f64,
    /// Require agreement of the estimates before stopping.
    #[serde(default = "default_true")]
    pub require_agreement: bool,
}

/// A region after criticality combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRegion {
    pub id: usize,
    pub criticality: f64,
    pub loads: Vec<LoadPoint>,
    pub capacity: f64,
}

/// A validated scenario with every derived quantity computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub regions: Vec<ResolvedRegion>,
    pub ramp_width: f64,
    pub schedule: GraphSchedule,
    pub estimator: PEstimator,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.regions.len()
    }

    pub fn all_loads(&self) -> Vec<LoadPoint> {
        self.regions.iter().flat_map(|r| r.loads.iter().copied()).collect()
    }

    pub fn continuous_regions(&self) -> Vec<(f64, f64)> {
        self.regions.iter().map(|r| (r.capacity, r.criticality)).collect()
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn edge_set(edges: &[(usize, usize)]) -> EdgeSet {
    edges.iter().copied().collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn schedule(&self, n: usize) -> Result<GraphSchedule> {
        let (kind, window) = match &self.graph {
            GraphSpec::Line => (ScheduleKind::Static(EdgeSet::line(n)), 1),
            GraphSpec::Complete => (ScheduleKind::Static(EdgeSet::complete(n)), 1),
            GraphSpec::Static { edges } => (ScheduleKind::Static(edge_set(edges)), 1),
            GraphSpec::Periodic { edge_sets, window } => (
                ScheduleKind::Periodic(edge_sets.iter().map(|e| edge_set(e)).collect()),
                *window,
            ),
            GraphSpec::Random {
                edge_probability,
                window,
            } => (
                ScheduleKind::Random {
                    edge_probability: *edge_probability,
                    seed: self.seed,
                },
                *window,
            ),
        };
        let schedule = GraphSchedule::new(n, window, kind).map_err(|e| invalid(e.to_string()))?;
        // one full period of windows covers every phase of a periodic schedule
        let horizon = match &self.graph {
            GraphSpec::Periodic { edge_sets, window } => {
                window / gcd(*window, edge_sets.len()) * edge_sets.len()
            }
            GraphSpec::Random { window, .. } => *window,
            _ => 1,
        };
        let report = check_window_connectivity(&schedule, horizon)?;
        if let Some(k) = report.first_failure {
            return Err(invalid(format!(
                "connectivity assumption violated: union graph of window {k} (length {window}) is disconnected"
            )));
        }
        Ok(schedule)
    }

    /// Validates the configuration and computes every derived quantity.
    pub fn resolve(&self) -> Result<Scenario> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!(
                "unsupported version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        let n = self.regions.len();
        if n == 0 {
            return Err(invalid("scenario has no regions"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.id != i {
                return Err(invalid(format!("region at position {i} has id {}, expected {i}", r.id)));
            }
        }
        if !(self.power_deficit.is_finite() && self.power_deficit >= 0.0) {
            return Err(invalid(format!("power deficit {} must be >= 0", self.power_deficit)));
        }
        if self.max_rounds == 0 || self.convergence_window == 0 {
            return Err(invalid("max_rounds and convergence_window must be positive"));
        }
        if !(self.convergence_ratio.is_finite() && self.convergence_ratio >= 0.0) {
            return Err(invalid(format!("convergence_ratio {} must be >= 0", self.convergence_ratio)));
        }
        self.step.validate().map_err(|e| invalid(e.to_string()))?;

        let (regions, ramp_width) = match self.mode {
            Mode::Discrete => self.resolve_discrete()?,
            Mode::Continuous => self.resolve_continuous()?,
        };
        let schedule = self.schedule(n)?;
        let estimator = PEstimator::new(self.estimator.clone(), self.power_deficit, n, self.seed)
            .map_err(|e| invalid(e.to_string()))?;
        Ok(Scenario {
            config: self.clone(),
            regions,
            ramp_width,
            schedule,
            estimator,
        })
    }

    fn resolve_discrete(&self) -> Result<(Vec<ResolvedRegion>, f64)> {
        let combiner = ConvexCombiner::new(self.combiner_weight).map_err(|e| invalid(e.to_string()))?;
        let mut seen = HashSet::new();
        let mut regions = Vec::with_capacity(self.regions.len());
        for r in &self.regions {
            if r.capacity.is_some() {
                return Err(invalid(format!("region {}: capacity is only valid in continuous mode", r.id)));
            }
            let mut loads = Vec::with_capacity(r.loads.len());
            for l in &r.loads {
                if !seen.insert(l.id) {
                    return Err(invalid(format!("duplicate load id {}", l.id)));
                }
                if !(l.power.is_finite() && l.power >= 0.0) {
                    return Err(invalid(format!("load {}: power {} must be >= 0", l.id, l.power)));
                }
                let c = combine_criticality(&combiner, l.nature_criticality, r.region_criticality)
                    .map_err(|e| invalid(format!("load {}: {e}", l.id)))?;
                loads.push(LoadPoint::new(l.id, l.power, c));
            }
            regions.push(ResolvedRegion {
                id: r.id,
                criticality: r.region_criticality,
                capacity: loads.iter().map(|l| l.power).sum(),
                loads,
            });
        }
        let total: f64 = regions.iter().map(|r| r.capacity).sum();
        if total < self.power_deficit {
            return Err(invalid(format!(
                "feasibility assumption violated: total load {total} GW is below the deficit {} GW",
                self.power_deficit
            )));
        }
        let levels: Vec<f64> = regions
            .iter()
            .flat_map(|r| r.loads.iter().filter(|l| l.power > 0.0).map(|l| l.criticality))
            .collect();
        let ramp_width = match self.ramp_width {
            RampWidth::Auto(_) => min_gap(&levels).map_err(|_| {
                invalid("ramp_width \"auto\" needs two distinct criticality values; give an explicit width")
            })?,
            RampWidth::Fixed(c) => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(invalid(format!("ramp width {c} must be positive")));
                }
                if let Ok(gap) = min_gap(&levels) {
                    if c > gap + GAP_TOLERANCE {
                        return Err(invalid(format!(
                            "ramp width {c} exceeds the minimum criticality gap {gap}; \
                             the surrogate would disagree with the CCF at load criticalities"
                        )));
                    }
                }
                c
            }
        };
        Ok((regions, ramp_width))
    }

    fn resolve_continuous(&self) -> Result<(Vec<ResolvedRegion>, f64)> {
        let mut regions = Vec::with_capacity(self.regions.len());
        for r in &self.regions {
            let Some(cap) = r.capacity else {
                return Err(invalid(format!("region {}: continuous mode needs a capacity", r.id)));
            };
            if !(cap.is_finite() && cap >= 0.0) {
                return Err(invalid(format!("region {}: capacity {cap} must be >= 0", r.id)));
            }
            if !r.loads.is_empty() {
                return Err(invalid(format!("region {}: continuous mode takes no discrete loads", r.id)));
            }
            if !r.region_criticality.is_finite() || r.region_criticality.fract() != 0.0 {
                return Err(invalid(format!(
                    "region {}: continuous criticality {} must be an integer class",
                    r.id, r.region_criticality
                )));
            }
            regions.push(ResolvedRegion {
                id: r.id,
                criticality: r.region_criticality,
                loads: Vec::new(),
                capacity: cap,
            });
        }
        let total: f64 = regions.iter().map(|r| r.capacity).sum();
        if total < self.power_deficit {
            return Err(invalid(format!(
                "feasibility assumption violated: total capacity {total} GW is below the deficit {} GW",
                self.power_deficit
            )));
        }
        match self.ramp_width {
            RampWidth::Auto(_) => {}
            RampWidth::Fixed(1.0) => {}
            RampWidth::Fixed(c) => {
                return Err(invalid(format!(
                    "continuous mode uses unit ramps between integer classes, got ramp width {c}"
                )))
            }
        }
        Ok((regions, 1.0))
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = ScenarioConfig::from_json(&text)?;
    config.resolve()?;
    Ok(config)
}

pub fn save_scenario(config: &ScenarioConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, config.to_json() + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn continuous_json() -> &'static str {
        r#"{
            "version": 1,
            "mode": "continuous",
            "regions": [
                {"id": 0, "region_criticality": 1, "capacity": 1.2},
                {"id": 1, "region_criticality": 2, "capacity": 1.2},
                {"id": 2, "region_criticality": 2, "capacity": 1.2},
                {"id": 3, "region_criticality": 3, "capacity": 1.2}
            ],
            "power_deficit": 1.8,
            "graph": {"kind": "line"},
            "max_rounds": 1000
        }"#
    }

    fn two_region_json(ramp: &str, deficit: f64) -> String {
        format!(
            r#"{{
            "version": 1,
            "regions": [
                {{"id": 0, "region_criticality": 0, "loads": [
                    {{"id": 1, "power": 1, "nature_criticality": 0.1}},
                    {{"id": 2, "power": 2, "nature_criticality": 0.15}},
                    {{"id": 3, "power": 1, "nature_criticality": 0.2}},
                    {{"id": 4, "power": 4, "nature_criticality": 0.4}}]}},
                {{"id": 1, "region_criticality": 0, "loads": [
                    {{"id": 5, "power": 1, "nature_criticality": 0.4}},
                    {{"id": 6, "power": 2, "nature_criticality": 0.5}},
                    {{"id": 7, "power": 2, "nature_criticality": 0.7}},
                    {{"id": 8, "power": 3, "nature_criticality": 0.8}}]}}
            ],
            "combiner_weight": 1.0,
            "ramp_width": {ramp},
            "power_deficit": {deficit}
        }}"#
        )
    }

    #[test]
    fn continuous_config_is_valid() {
        let cfg = ScenarioConfig::from_json(continuous_json()).unwrap();
        let sc = cfg.resolve().unwrap();
        assert_eq!(cfg.mode, Mode::Continuous);
        assert_eq!(sc.ramp_width, 1.0);
        assert_eq!(sc.continuous_regions()[3], (1.2, 3.0));
        assert_eq!(cfg.max_rounds, 1000);
        assert_eq!(cfg.initial_x, InitialX::Rule(InitRule::RegionMin));
    }

    #[test]
    fn infeasible_deficit_is_rejected() {
        let cfg = ScenarioConfig::from_json(&two_region_json("\"auto\"", 17.0)).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("feasibility")), "{err}");
    }

    #[test]
    fn wide_ramp_is_rejected() {
        let cfg = ScenarioConfig::from_json(&two_region_json("0.08", 6.0)).unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("minimum criticality gap")), "{err}");
        // and the rejection is warranted: f and f̂ disagree at a load
        let base = crate::criticality::build_ccf(&[(1.0, 0.1), (2.0, 0.15)]).unwrap();
        let ramp = crate::criticality::RampSum::new(&[(0.1, 1.0), (0.15, 2.0)], 0.08).unwrap();
        assert!((base.eval(0.1) - ramp.eval(0.1)).abs() > 0.1);
    }

    #[test]
    fn auto_ramp_resolves_to_min_gap() {
        let cfg = ScenarioConfig::from_json(&two_region_json("\"auto\"", 6.0)).unwrap();
        let sc = cfg.resolve().unwrap();
        assert!((sc.ramp_width - 0.05).abs() < 1e-12);
        let fixed = ScenarioConfig::from_json(&two_region_json("0.05", 6.0)).unwrap().resolve().unwrap();
        assert_eq!(fixed.ramp_width, 0.05);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ScenarioConfig::from_json("{\n  \"version\": 1,\n  oops\n}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn structural_checks() {
        let mut cfg = ScenarioConfig::from_json(&two_region_json("\"auto\"", 6.0)).unwrap();
        cfg.regions[1].id = 5;
        assert!(cfg.resolve().is_err());

        let mut cfg = ScenarioConfig::from_json(&two_region_json("\"auto\"", 6.0)).unwrap();
        cfg.regions[1].loads[0].id = 1;
        assert!(cfg.resolve().is_err());

        let mut cfg = ScenarioConfig::from_json(&two_region_json("\"auto\"", 6.0)).unwrap();
        cfg.graph = GraphSpec::Static { edges: vec![] };
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("connectivity"), "{err}");

        let mut cfg = ScenarioConfig::from_json(&two_region_json("\"auto\"", 6.0)).unwrap();
        cfg.graph = GraphSpec::Periodic {
            edge_sets: vec![vec![(0, 1)], vec![]],
            window: 2,
        };
        assert!(cfg.resolve().is_ok());
        cfg.graph = GraphSpec::Periodic {
            edge_sets: vec![vec![(0, 1)], vec![], vec![]],
            window: 2,
        };
        assert!(cfg.resolve().is_err());

        let mut cfg = ScenarioConfig::from_json(continuous_json()).unwrap();
        cfg.regions[0].region_criticality = 1.5;
        assert!(cfg.resolve().is_err());
    }
}
