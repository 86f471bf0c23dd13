//! Time-varying undirected communication graphs and their
//! Metropolis–Hastings mixing matrices.

use std::collections::BTreeSet;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Undirected edge set over nodes `0..n`, stored as `(min, max)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeSet(BTreeSet<(usize, usize)>);

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Self-loops are ignored.
    pub fn insert(&mut self, a: usize, b: usize) {
        if a != b {
            self.0.insert((a.min(b), a.max(b)));
        }
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.0.contains(&(a.min(b), a.max(b)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn union_with(&mut self, other: &EdgeSet) {
        self.0.extend(other.0.iter().copied());
    }

    pub fn max_node(&self) -> Option<usize> {
        self.0.iter().map(|&(_, b)| b).max()
    }

    pub fn degrees(&self, n: usize) -> Vec<usize> {
        let mut deg = vec![0; n];
        for (a, b) in self.iter() {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Neighbor lists in ascending order.
    pub fn neighbors(&self, n: usize) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for (a, b) in self.iter() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn is_connected(&self, n: usize) -> bool {
        if n <= 1 {
            return true;
        }
        let mut uf = UnionFind::<usize>::new(n);
        let mut components = n;
        for (a, b) in self.iter() {
            if uf.union(a, b) {
                components -= 1;
            }
        }
        components == 1
    }

    pub fn line(n: usize) -> Self {
        (1..n).map(|i| (i - 1, i)).collect()
    }

    pub fn complete(n: usize) -> Self {
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect()
    }
}

impl FromIterator<(usize, usize)> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        let mut set = EdgeSet::new();
        for (a, b) in iter {
            set.insert(a, b);
        }
        set
    }
}

/// Dense row-major `n × n` mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    data: Vec<f64>,
}

impl MixingMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        MixingMatrix { n, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.len(),
            });
        }
        Ok(MixingMatrix {
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// `(W v)_i = Σ_k w_ik v_k`, summed in ascending `k` over nonzero
    /// weights only, so a row never reads a non-neighbor's value.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: v.len(),
            });
        }
        Ok((0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .filter(|(w, _)| **w != 0.0)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect())
    }

    pub fn product(&self, rhs: &MixingMatrix) -> Result<MixingMatrix> {
        if rhs.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: rhs.n,
            });
        }
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a != 0.0 {
                    for j in 0..n {
                        data[i * n + j] += a * rhs.get(k, j);
                    }
                }
            }
        }
        Ok(MixingMatrix { n, data })
    }

    pub fn max_stochasticity_error(&self) -> f64 {
        let n = self.n;
        (0..n)
            .flat_map(|i| {
                let row: f64 = (0..n).map(|j| self.get(i, j)).sum();
                let col: f64 = (0..n).map(|j| self.get(j, i)).sum();
                [(row - 1.0).abs(), (col - 1.0).abs()]
            })
            .fold(0.0, f64::max)
    }

    /// Checks nonnegativity, unit row/column sums within `tol`, positive
    /// diagonal, and that off-diagonal support lies inside `edges`.
    pub fn validate(&self, edges: &EdgeSet, tol: f64) -> std::result::Result<(), String> {
        let n = self.n;
        for i in 0..n {
            if self.get(i, i) <= 0.0 {
                return Err(format!("diagonal entry ({i},{i}) is not positive"));
            }
            for j in 0..n {
                let w = self.get(i, j);
                if w < 0.0 {
                    return Err(format!("entry ({i},{j}) = {w} is negative"));
                }
                if i != j && w != 0.0 && !edges.contains(i, j) {
                    return Err(format!("entry ({i},{j}) = {w} has no matching link"));
                }
            }
        }
        let err = self.max_stochasticity_error();
        if err > tol {
            return Err(format!("row/column sums deviate from 1 by {err}"));
        }
        Ok(())
    }
}

/// `w_ij = 1 / (1 + max(d_i, d_j))` on links, diagonal fills each row to 1.
pub fn metropolis_weights(edges: &EdgeSet, n: usize) -> Result<MixingMatrix> {
    if let Some(m) = edges.max_node() {
        if m >= n {
            return Err(Error::domain(format!("edge endpoint {m} outside 0..{n}")));
        }
    }
    let deg = edges.degrees(n);
    let mut w = MixingMatrix {
        n,
        data: vec![0.0; n * n],
    };
    for (a, b) in edges.iter() {
        let v = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w.data[a * n + b] = v;
        w.data[b * n + a] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w.get(i, j)).sum();
        w.data[i * n + i] = 1.0 - off;
    }
    Ok(w)
}

/// Threshold below every nonzero Metropolis–Hastings weight (which are at
/// least `1/n`).
pub fn default_gamma(n: usize) -> f64 {
    1.0 / (2.0 * n.max(1) as f64)
}

/// Directed edges `(j, i)` (from `j` to `i`) with `w_ij > gamma`, self-loops
/// included.
pub fn threshold_graph(w: &MixingMatrix, gamma: f64) -> Result<Vec<(usize, usize)>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain(format!("gamma {gamma} outside (0, 1)")));
    }
    let n = w.n();
    Ok((0..n)
        .flat_map(|i| (0..n).map(move |j| (j, i)))
        .filter(|&(j, i)| w.get(i, j) > gamma)
        .collect())
}

/// How the edge set evolves over rounds.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    Static(EdgeSet),
    /// Round `t` uses `sets[t % len]`.
    Periodic(Vec<EdgeSet>),
    /// Each potential link is present independently with `edge_probability`;
    /// if a window's union is disconnected, a random spanning tree is added to
    /// the window's last round.
    Random { edge_probability: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    n: usize,
    window: usize,
    kind: ScheduleKind,
}

impl GraphSchedule {
    pub fn new(n: usize, window: usize, kind: ScheduleKind) -> Result<Self> {
        if window == 0 {
            return Err(Error::domain("connectivity window must be positive"));
        }
        let check = |e: &EdgeSet| match e.max_node() {
            Some(m) if m >= n => Err(Error::domain(format!("edge endpoint {m} outside 0..{n}"))),
            _ => Ok(()),
        };
        match &kind {
            ScheduleKind::Static(e) => check(e)?,
            ScheduleKind::Periodic(sets) => {
                if sets.is_empty() {
                    return Err(Error::domain("periodic schedule needs at least one edge set"));
                }
                sets.iter().try_for_each(check)?;
            }
            ScheduleKind::Random {
                edge_probability, ..
            } => {
                if !(0.0..=1.0).contains(edge_probability) {
                    return Err(Error::domain(format!(
                        "edge probability {edge_probability} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(GraphSchedule { n, window, kind })
    }

    pub fn static_graph(n: usize, edges: EdgeSet) -> Result<Self> {
        Self::new(n, 1, ScheduleKind::Static(edges))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// Edge set active in round `t` (rounds start at 0; window `k` covers
    /// rounds `kB..(k+1)B`).
    pub fn edges_at(&self, t: usize) -> EdgeSet {
        match &self.kind {
            ScheduleKind::Static(e) => e.clone(),
            ScheduleKind::Periodic(sets) => sets[t % sets.len()].clone(),
            ScheduleKind::Random { .. } => {
                let mut window = self.random_window(t / self.window);
                window.swap_remove(t % self.window)
            }
        }
    }

    /// All edge sets of window `k`, generated from a stream keyed by `k`.
    pub fn random_window(&self, k: usize) -> Vec<EdgeSet> {
        let ScheduleKind::Random {
            edge_probability,
            seed,
        } = self.kind
        else {
            let start = k * self.window;
            return (start..start + self.window).map(|t| self.edges_at(t)).collect();
        };
        let n = self.n;
        let mut rng = Stream::indexed(seed, "graph-window", k as u64);
        let mut sets: Vec<EdgeSet> = (0..self.window)
            .map(|_| {
                let mut e = EdgeSet::new();
                for a in 0..n {
                    for b in a + 1..n {
                        if rng.unit() < edge_probability {
                            e.insert(a, b);
                        }
                    }
                }
                e
            })
            .collect();
        let mut union = EdgeSet::new();
        for s in &sets {
            union.union_with(s);
        }
        if !union.is_connected(n) {
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let last = sets.last_mut().expect("window is positive");
            for i in 1..n {
                let parent = order[rng.below(i as u64) as usize];
                last.insert(order[i], parent);
            }
        }
        sets
    }

    pub fn mixing_at(&self, t: usize) -> MixingMatrix {
        metropolis_weights(&self.edges_at(t), self.n).expect("schedule edges validated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub window: usize,
    pub windows_checked: usize,
    /// Index of the first window whose union graph is disconnected.
    pub first_failure: Option<usize>,
}

impl ConnectivityReport {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

/// Checks that the union graph of every window within `horizon` rounds is
/// connected. `horizon` must be a multiple of the window length.
pub fn check_window_connectivity(schedule: &GraphSchedule, horizon: usize) -> Result<ConnectivityReport> {
    let b = schedule.window();
    if !horizon.is_multiple_of(b) {
        return Err(Error::Precondition(format!(
            "horizon {horizon} is not a multiple of the window {b}"
        )));
    }
    let windows = horizon / b;
    let first_failure = (0..windows).find(|&k| {
        let mut union = EdgeSet::new();
        for set in schedule.random_window(k) {
            union.union_with(&set);
        }
        !union.is_connected(schedule.n())
    });
    Ok(ConnectivityReport {
        window: b,
        windows_checked: windows,
        first_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_graph_weights() {
        let w = metropolis_weights(&EdgeSet::line(4), 4).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(w.get(0, 1), third);
        assert_eq!(w.get(1, 2), third);
        assert_eq!(w.get(2, 3), third);
        assert_eq!(w.get(0, 2), 0.0);
        assert!((w.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.get(1, 1) - third).abs() < 1e-15);
        assert!((w.get(2, 2) - third).abs() < 1e-15);
        assert!((w.get(3, 3) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_and_complete() {
        assert_eq!(metropolis_weights(&EdgeSet::new(), 3).unwrap(), MixingMatrix::identity(3));
        let w = metropolis_weights(&EdgeSet::complete(3), 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((w.get(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(metropolis_weights(&EdgeSet::new(), 1).unwrap(), MixingMatrix::identity(1));
        assert!(metropolis_weights(&EdgeSet::line(4), 3).is_err());
    }

    #[test]
    fn threshold_cases() {
        let w = metropolis_weights(&EdgeSet::line(4), 4).unwrap();
        let mut got = threshold_graph(&w, 1.0 / 8.0).unwrap();
        got.sort_unstable();
        let mut want: Vec<(usize, usize)> = (0..4).map(|i| (i, i)).collect();
        for (a, b) in EdgeSet::line(4).iter() {
            want.push((a, b));
            want.push((b, a));
        }
        want.sort_unstable();
        assert_eq!(got, want);

        let id = MixingMatrix::identity(3);
        assert_eq!(threshold_graph(&id, 0.5).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        assert!(threshold_graph(&w, 0.999).unwrap().is_empty());
        assert!(threshold_graph(&w, 1.0).is_err());
    }

    #[test]
    fn connectivity_reports() {
        let s = GraphSchedule::new(4, 3, ScheduleKind::Static(EdgeSet::line(4))).unwrap();
        assert!(check_window_connectivity(&s, 30).unwrap().passed());

        let alt = vec![
            [(0, 1)].into_iter().collect(),
            [(1, 2)].into_iter().collect(),
        ];
        let s = GraphSchedule::new(3, 2, ScheduleKind::Periodic(alt)).unwrap();
        assert!(check_window_connectivity(&s, 10).unwrap().passed());

        let isolated = GraphSchedule::new(3, 2, ScheduleKind::Static([(0, 1)].into_iter().collect())).unwrap();
        let rep = check_window_connectivity(&isolated, 4).unwrap();
        assert_eq!(rep.first_failure, Some(0));

        assert!(check_window_connectivity(&s, 3).is_err());
    }

    #[test]
    fn random_schedule_is_deterministic_and_b_connected() {
        let kind = ScheduleKind::Random {
            edge_probability: 0.1,
            seed: 11,
        };
        let s = GraphSchedule::new(6, 4, kind).unwrap();
        assert!(check_window_connectivity(&s, 400).unwrap().passed());
        for t in [0, 3, 17, 250] {
            assert_eq!(s.edges_at(t), s.edges_at(t));
            assert_eq!(s.edges_at(t), s.random_window(t / 4)[t % 4]);
        }
    }

    #[test]
    fn mh_floor_is_one_over_n() {
        let n = 7;
        let w = metropolis_weights(&EdgeSet::complete(n), n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let v = w.get(i, j);
                assert!(v == 0.0 || v >= 1.0 / n as f64 - 1e-15);
            }
        }
        assert!(default_gamma(n) < 1.0 / n as f64);
    }

    proptest! {
        #[test]
        fn window_products_stay_doubly_stochastic(seed in 0u64..1000, p in 0.0f64..0.6) {
            let s = GraphSchedule::new(5, 3, ScheduleKind::Random { edge_probability: p, seed }).unwrap();
            let mut prod = MixingMatrix::identity(5);
            for t in 0..3 {
                let w = s.mixing_at(t);
                prop_assert!(w.validate(&s.edges_at(t), 1e-12).is_ok());
                prod = w.product(&prod).unwrap();
            }
            prop_assert!(prod.max_stochasticity_error() <= 1e-10);
        }

        #[test]
        fn consensus_contracts(seed in 0u64..1000, v in prop::collection::vec(-10.0f64..10.0, 5)) {
            let s = GraphSchedule::new(5, 2, ScheduleKind::Random { edge_probability: 0.2, seed }).unwrap();
            let spread = |x: &[f64]| {
                x.iter().copied().fold(f64::MIN, f64::max) - x.iter().copied().fold(f64::MAX, f64::min)
            };
            let start = spread(&v);
            let mut x = v;
            let mut prev = start;
            for t in 0..20 {
                x = s.mixing_at(t).apply(&x).unwrap();
                if t % 2 == 1 {
                    let now = spread(&x);
                    prop_assert!(now <= prev + 1e-12);
                    prev = now;
                }
            }
            prop_assert!(start == 0.0 || prev < start);
        }
    }
}
