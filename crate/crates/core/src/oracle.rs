//! Centralized reference solvers.
//!
//! Every distributed run is checked against these: the greedy prefix of the
//! criticality-sorted loads, exhaustive subset search, the exact CCF
//! threshold `z*`, the surrogate root `ẑ`, and the closed-form solution of
//! the continuous variant.

use serde::{Deserialize, Serialize};

use crate::criticality::{build_ccf, Ccf, RampSum, SurrogateCcf};
use crate::error::{Error, Result};

pub const BRUTE_FORCE_MAX_LOADS: usize = 20;

/// Tolerance used to detect `f(z*) == P` when recovering `z*` from `ẑ`.
pub const EXACT_HIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub id: u64,
    pub power: f64,
    pub criticality: f64,
}

impl LoadPoint {
    pub fn new(id: u64, power: f64, criticality: f64) -> Self {
        LoadPoint {
            id,
            power,
            criticality,
        }
    }
}

fn pairs(loads: &[LoadPoint]) -> Vec<(f64, f64)> {
    loads.iter().map(|l| (l.power, l.criticality)).collect()
}

fn check_feasible(loads: &[LoadPoint], required: f64) -> Result<f64> {
    let total: f64 = loads.iter().map(|l| l.power).sum();
    if total < required {
        return Err(Error::Infeasible { total, required });
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShedSet {
    pub ids: Vec<u64>,
    pub total: f64,
}

/// Shortest prefix of the loads sorted by `(criticality, id)` whose power
/// reaches `required`.
pub fn greedy_shed_set(loads: &[LoadPoint], required: f64) -> Result<ShedSet> {
    check_feasible(loads, required)?;
    let mut order: Vec<&LoadPoint> = loads.iter().collect();
    order.sort_by(|a, b| {
        a.criticality
            .total_cmp(&b.criticality)
            .then(a.id.cmp(&b.id))
    });
    let mut set = ShedSet {
        ids: Vec::new(),
        total: 0.0,
    };
    for load in order {
        if set.total >= required {
            break;
        }
        set.ids.push(load.id);
        set.total += load.power;
    }
    Ok(set)
}

/// Exhaustively finds a subset of minimum total power that still reaches
/// `required`. Ties go to the lowest subset mask.
pub fn brute_force_min_set(loads: &[LoadPoint], required: f64) -> Result<ShedSet> {
    if loads.len() > BRUTE_FORCE_MAX_LOADS {
        return Err(Error::TooManyLoads {
            count: loads.len(),
            max: BRUTE_FORCE_MAX_LOADS,
        });
    }
    check_feasible(loads, required)?;
    let mut best: Option<(u32, f64)> = None;
    for mask in 0u32..(1 << loads.len()) {
        let total: f64 = loads
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, l)| l.power)
            .sum();
        if total >= required && best.is_none_or(|(_, b)| total < b) {
            best = Some((mask, total));
        }
    }
    let (mask, total) = best.expect("full set is feasible");
    let ids = loads
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, l)| l.id)
        .collect();
    Ok(ShedSet { ids, total })
}

/// Exhaustive minimum over priority-based subsets only: every shed load is
/// at most as critical as every kept load. This is the problem the greedy
/// prefix and the CCF threshold solve; `brute_force_min_set` drops the
/// priority condition and can shed less.
pub fn brute_force_priority_set(loads: &[LoadPoint], required: f64) -> Result<ShedSet> {
    if loads.len() > BRUTE_FORCE_MAX_LOADS {
        return Err(Error::TooManyLoads {
            count: loads.len(),
            max: BRUTE_FORCE_MAX_LOADS,
        });
    }
    check_feasible(loads, required)?;
    let mut best: Option<(u32, f64)> = None;
    for mask in 0u32..(1 << loads.len()) {
        let (mut total, mut max_in, mut min_out) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
        for (i, l) in loads.iter().enumerate() {
            if mask & (1 << i) != 0 {
                total += l.power;
                max_in = max_in.max(l.criticality);
            } else {
                min_out = min_out.min(l.criticality);
            }
        }
        if max_in <= min_out && total >= required && best.is_none_or(|(_, b)| total < b) {
            best = Some((mask, total));
        }
    }
    let (mask, total) = best.expect("full set is feasible and priority-based");
    let ids = loads
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, l)| l.id)
        .collect();
    Ok(ShedSet { ids, total })
}

/// Smallest breakpoint `z` with `f(z) >= required`.
pub fn exact_z_star(ccf: &Ccf, required: f64) -> Result<f64> {
    ccf.breakpoints()
        .find(|&(_, cum)| cum >= required)
        .map(|(level, _)| level)
        .ok_or(Error::Infeasible {
            total: ccf.total_load(),
            required,
        })
}

/// Smallest `z` with `f̂(z) == required`.
pub fn exact_z_hat(s: &SurrogateCcf, required: f64) -> Result<f64> {
    s.ramp().invert(required)
}

/// Which branch of the `ẑ -> z*` recovery applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryCase {
    /// `f(z*) > P`: `z*` is the first criticality strictly above `ẑ`.
    Exceeds,
    /// `f(z*) == P`: `z*` is the last criticality at or below `ẑ`.
    ExactHit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovered {
    pub z_star: f64,
    pub case: RecoveryCase,
}

/// Recovers `z*` from the surrogate root `ẑ`.
pub fn z_star_from_z_hat(ccf: &Ccf, z_hat: f64, required: f64) -> Result<Recovered> {
    let above = ccf.first_above(z_hat);
    if above > 0 {
        let at_or_below = ccf.levels()[above - 1];
        if (ccf.eval(at_or_below) - required).abs() <= EXACT_HIT_TOLERANCE {
            return Ok(Recovered {
                z_star: at_or_below,
                case: RecoveryCase::ExactHit,
            });
        }
    }
    match ccf.levels().get(above) {
        Some(&z_star) => Ok(Recovered {
            z_star,
            case: RecoveryCase::Exceeds,
        }),
        None => Err(Error::Precondition(format!(
            "no criticality above {z_hat} and f({z_hat}) != {required}"
        ))),
    }
}

/// Oracle answer for a discrete instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheddingSolution {
    /// Loads with criticality at or below `z_star`, ascending by id.
    pub shed_set: Vec<u64>,
    pub total_shed: f64,
    pub z_star: f64,
    pub z_hat: f64,
    pub recovery_case: RecoveryCase,
    /// The optimal greedy prefix, which may shed less when criticalities tie.
    pub greedy: ShedSet,
}

/// Full oracle solve. `ramp_width` defaults to the minimum criticality gap.
pub fn solve(loads: &[LoadPoint], required: f64, ramp_width: Option<f64>) -> Result<SheddingSolution> {
    let greedy = greedy_shed_set(loads, required)?;
    let ccf = build_ccf(&pairs(loads))?;
    let z_star = exact_z_star(&ccf, required)?;
    let surrogate = match ramp_width {
        Some(c) => SurrogateCcf::new(ccf.clone(), c)?,
        None => SurrogateCcf::with_min_gap(ccf.clone())?,
    };
    let z_hat = exact_z_hat(&surrogate, required)?;
    let recovery_case = z_star_from_z_hat(&ccf, z_hat, required)?.case;
    let mut shed: Vec<&LoadPoint> = loads.iter().filter(|l| l.criticality <= z_star).collect();
    shed.sort_by_key(|l| l.id);
    Ok(SheddingSolution {
        shed_set: shed.iter().map(|l| l.id).collect(),
        total_shed: ccf.eval(z_star),
        z_star,
        z_hat,
        recovery_case,
        greedy,
    })
}

/// `(capacity L_j, criticality C(j))` of a region in the continuous variant.
pub type ContinuousRegion = (f64, f64);

fn continuous_ramp(regions: &[ContinuousRegion]) -> Result<RampSum> {
    RampSum::new(&regions.iter().map(|&(l, c)| (c, l)).collect::<Vec<_>>(), 1.0)
}

/// `φ(z) = Σ L_j · w_1(z - C(j))`.
pub fn continuous_ccf_eval(regions: &[ContinuousRegion], z: f64) -> Result<f64> {
    Ok(continuous_ramp(regions)?.eval(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSolution {
    pub per_region_shed: Vec<f64>,
    pub z_tilde: f64,
}

/// Per-region shedding induced by a threshold `z`, for integer criticality
/// classes: full capacity at or below `⌊z⌋`, the fraction `z - ⌊z⌋` for the
/// class `⌈z⌉`, nothing above.
pub fn continuous_split(regions: &[ContinuousRegion], z: f64) -> Vec<f64> {
    let (lo, hi) = (z.floor(), z.ceil());
    regions
        .iter()
        .map(|&(cap, c)| {
            if c <= lo {
                cap
            } else if c <= hi {
                cap * (z - lo)
            } else {
                0.0
            }
        })
        .collect()
}

/// Closed-form solution of the continuous variant. Region criticalities
/// must be integers.
pub fn continuous_solution(regions: &[ContinuousRegion], required: f64) -> Result<ContinuousSolution> {
    if let Some(&(_, c)) = regions.iter().find(|r| r.1.fract() != 0.0) {
        return Err(Error::domain(format!(
            "continuous criticality classes must be integers, got {c}"
        )));
    }
    let ramp = continuous_ramp(regions)?;
    if ramp.total() < required {
        return Err(Error::Infeasible {
            total: ramp.total(),
            required,
        });
    }
    let z_tilde = ramp.invert(required)?;
    Ok(ContinuousSolution {
        per_region_shed: continuous_split(regions, z_tilde),
        z_tilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criticality::min_gap;

    fn tied_example() -> Vec<LoadPoint> {
        vec![
            LoadPoint::new(1, 1.0, 0.2),
            LoadPoint::new(2, 2.0, 0.3),
            LoadPoint::new(3, 2.0, 0.3),
            LoadPoint::new(4, 3.0, 0.4),
        ]
    }

    fn eight_loads() -> Vec<LoadPoint> {
        [
            (1.0, 0.1),
            (2.0, 0.15),
            (1.0, 0.2),
            (4.0, 0.4),
            (1.0, 0.4),
            (2.0, 0.5),
            (2.0, 0.7),
            (3.0, 0.8),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(p, c))| LoadPoint::new(i as u64 + 1, p, c))
        .collect()
    }

    fn fig1_surrogate() -> SurrogateCcf {
        SurrogateCcf::new(build_ccf(&pairs(&eight_loads())).unwrap(), 0.05).unwrap()
    }

    const FOUR_REGIONS: [ContinuousRegion; 4] = [(1.2, 1.0), (1.2, 2.0), (1.2, 2.0), (1.2, 3.0)];

    #[test]
    fn greedy_examples() {
        let g = greedy_shed_set(&tied_example(), 3.0).unwrap();
        assert_eq!(g.ids, vec![1, 2]);
        assert_eq!(g.total, 3.0);
        let all = greedy_shed_set(&eight_loads(), 16.0).unwrap();
        assert_eq!(all.ids.len(), 8);
        assert_eq!(all.total, 16.0);
        let six = greedy_shed_set(&eight_loads(), 6.0).unwrap();
        // the prefix stops inside the C = 0.4 group: 1 + 2 + 1 + 4 >= 6
        assert_eq!(six.ids, vec![1, 2, 3, 4]);
        assert_eq!(six.total, 8.0);
        assert!(matches!(
            greedy_shed_set(&eight_loads(), 17.0),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_min_set(&tied_example(), 3.0).unwrap().total, 3.0);
        let single = [LoadPoint::new(9, 5.0, 0.5)];
        assert_eq!(brute_force_min_set(&single, 3.0).unwrap().total, 5.0);
        let fig = brute_force_min_set(&eight_loads(), 6.0).unwrap();
        assert_eq!(fig.total, 6.0);
        // with the priority condition the C = 0.4 group forces 8
        assert_eq!(brute_force_priority_set(&eight_loads(), 6.0).unwrap().total, 8.0);
        assert_eq!(brute_force_priority_set(&tied_example(), 3.0).unwrap().total, 3.0);
        // a small critical load undercuts the greedy prefix only without it
        let skew = [LoadPoint::new(1, 5.0, 0.1), LoadPoint::new(2, 3.0, 0.9)];
        assert_eq!(brute_force_min_set(&skew, 3.0).unwrap().total, 3.0);
        assert_eq!(brute_force_priority_set(&skew, 3.0).unwrap().total, 5.0);
        let many: Vec<_> = (0..21).map(|i| LoadPoint::new(i, 1.0, 0.5)).collect();
        assert!(matches!(
            brute_force_min_set(&many, 1.0),
            Err(Error::TooManyLoads { count: 21, .. })
        ));
        assert!(matches!(
            brute_force_min_set(&single, 6.0),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn z_star_examples() {
        let ccf = build_ccf(&pairs(&tied_example())).unwrap();
        let z = exact_z_star(&ccf, 3.0).unwrap();
        assert_eq!(z, 0.3);
        assert_eq!(ccf.eval(z), 5.0);
        let fig = build_ccf(&pairs(&eight_loads())).unwrap();
        assert_eq!(exact_z_star(&fig, 6.0).unwrap(), 0.4);
        assert_eq!(exact_z_star(&fig, 0.0).unwrap(), 0.1);
        assert!(exact_z_star(&fig, 20.0).is_err());
    }

    #[test]
    fn z_hat_examples() {
        let s = fig1_surrogate();
        assert!((exact_z_hat(&s, 6.0).unwrap() - 0.37).abs() < 1e-12);
        assert_eq!(exact_z_hat(&s, 16.0).unwrap(), 0.8);
        assert_eq!(exact_z_hat(&s, 9.0).unwrap(), 0.4);
        assert!(exact_z_hat(&s, -1.0).is_err());
        assert!(exact_z_hat(&s, 16.1).is_err());
    }

    #[test]
    fn recovery_examples() {
        let fig = build_ccf(&pairs(&eight_loads())).unwrap();
        let r = z_star_from_z_hat(&fig, 0.37, 6.0).unwrap();
        assert_eq!((r.z_star, r.case), (0.4, RecoveryCase::Exceeds));
        let r = z_star_from_z_hat(&fig, 0.4, 9.0).unwrap();
        assert_eq!((r.z_star, r.case), (0.4, RecoveryCase::ExactHit));

        let ex = tied_example();
        let ccf = build_ccf(&pairs(&ex)).unwrap();
        let c = min_gap(ccf.levels()).unwrap();
        let s = SurrogateCcf::new(ccf.clone(), c).unwrap();
        let z_hat = exact_z_hat(&s, 3.0).unwrap();
        let r = z_star_from_z_hat(&ccf, z_hat, 3.0).unwrap();
        assert_eq!(r.z_star, exact_z_star(&ccf, 3.0).unwrap());
        assert_eq!(r.case, RecoveryCase::Exceeds);
    }

    #[test]
    fn solve_tied_example_sheds_whole_tie_group() {
        let sol = solve(&tied_example(), 3.0, None).unwrap();
        assert_eq!(sol.z_star, 0.3);
        assert_eq!(sol.shed_set, vec![1, 2, 3]);
        assert_eq!(sol.total_shed, 5.0);
        assert_eq!(sol.greedy.total, 3.0);
    }

    #[test]
    fn continuous_examples() {
        assert!((continuous_ccf_eval(&FOUR_REGIONS, 1.25).unwrap() - 1.8).abs() < 1e-12);
        assert_eq!(continuous_ccf_eval(&FOUR_REGIONS, 3.0).unwrap(), 4.8);
        assert_eq!(continuous_ccf_eval(&FOUR_REGIONS, 0.0).unwrap(), 0.0);

        let sol = continuous_solution(&FOUR_REGIONS, 1.8).unwrap();
        assert!((sol.z_tilde - 1.25).abs() < 1e-12);
        let want = [1.2, 0.3, 0.3, 0.0];
        for (got, want) in sol.per_region_shed.iter().zip(want) {
            assert!((got - want).abs() < 1e-9);
        }

        let full = continuous_solution(&FOUR_REGIONS, 4.8).unwrap();
        assert_eq!(full.per_region_shed, vec![1.2; 4]);

        let one = continuous_solution(&FOUR_REGIONS, 1.2).unwrap();
        assert_eq!(one.z_tilde, 1.0);
        assert_eq!(one.per_region_shed, vec![1.2, 0.0, 0.0, 0.0]);

        assert!(matches!(
            continuous_solution(&FOUR_REGIONS, 5.0),
            Err(Error::Infeasible { .. })
        ));
        assert!(continuous_solution(&[(1.0, 1.5)], 0.5).is_err());
    }
}
