//! Wells, sampled paths, the trace of a chain on a subset, and the projected
//! order process.
//!
//! The trace of a chain on a set `A` is the chain watched only while in `A`,
//! with the time spent outside excised. Its generator is the complement-block
//! elimination (Schur complement) of the full generator; the path-level time
//! change here is the sampling counterpart, and the two are cross-checked in
//! the test suite.

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::solve::RestrictedSystem;

/// A partition of the state space into labeled wells plus a transition region.
#[derive(Clone, Debug)]
pub struct WellPartition {
    n_states: usize,
    wells: Vec<Vec<usize>>,
    delta: Vec<usize>,
    label_of: Vec<Option<usize>>,
}

impl WellPartition {
    /// Wells must be nonempty, pairwise disjoint, and within range; everything
    /// not covered becomes the transition region.
    pub fn new(n_states: usize, wells: Vec<Vec<usize>>) -> Result<Self> {
        if wells.is_empty() {
            return Err(Error::BadSets { context: "a well partition needs at least one well".into() });
        }
        let mut label_of: Vec<Option<usize>> = vec![None; n_states];
        let mut sorted_wells = Vec::with_capacity(wells.len());
        for (x, well) in wells.into_iter().enumerate() {
            if well.is_empty() {
                return Err(Error::BadSets { context: format!("well {x} is empty") });
            }
            let mut w = well;
            w.sort_unstable();
            w.dedup();
            for &s in &w {
                if s >= n_states {
                    return Err(Error::StateOutOfRange { index: s, n_states });
                }
                if let Some(prev) = label_of[s] {
                    return Err(Error::BadSets {
                        context: format!("state {s} lies in wells {prev} and {x}"),
                    });
                }
                label_of[s] = Some(x);
            }
            sorted_wells.push(w);
        }
        let delta: Vec<usize> = (0..n_states).filter(|&s| label_of[s].is_none()).collect();
        Ok(WellPartition { n_states, wells: sorted_wells, delta, label_of })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_labels(&self) -> usize {
        self.wells.len()
    }

    pub fn well(&self, x: usize) -> &[usize] {
        &self.wells[x]
    }

    pub fn wells(&self) -> &[Vec<usize>] {
        &self.wells
    }

    pub fn delta(&self) -> &[usize] {
        &self.delta
    }

    pub fn label_of(&self, state: usize) -> Option<usize> {
        self.label_of[state]
    }

    /// All well states, ascending.
    pub fn union_of_wells(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.wells.iter().flatten().copied().collect();
        u.sort_unstable();
        u
    }

    /// States of every well except `x`, ascending. The transition region is
    /// not included.
    pub fn other_wells(&self, x: usize) -> Vec<usize> {
        let mut u: Vec<usize> = self
            .wells
            .iter()
            .enumerate()
            .filter(|(y, _)| *y != x)
            .flat_map(|(_, w)| w.iter().copied())
            .collect();
        u.sort_unstable();
        u
    }
}

/// A right-continuous jump path: `states[k]` is occupied on
/// `[times[k], times[k+1])`, and the final state runs to `horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
    /// Set when sampling stopped in a state with zero holding rate.
    pub absorbed: bool,
}

impl Path {
    pub fn new(times: Vec<f64>, states: Vec<usize>, horizon: f64) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::InvalidInput("path needs matching, nonempty times and states".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidInput("path must start at time 0".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput("path times must be strictly increasing".into()));
            }
        }
        for w in states.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidInput("consecutive path states must differ".into()));
            }
        }
        if horizon < *times.last().unwrap() {
            return Err(Error::InvalidInput("path horizon precedes its last jump".into()));
        }
        Ok(Path { times, states, horizon, absorbed: false })
    }

    pub fn n_jumps(&self) -> usize {
        self.states.len() - 1
    }

    /// Visits as `(state, sojourn length)` pairs, in order.
    pub fn sojourns(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.states.len()).map(move |k| {
            let end = if k + 1 < self.times.len() { self.times[k + 1] } else { self.horizon };
            (self.states[k], end - self.times[k])
        })
    }

    /// Total time spent in the states flagged by `mask`, up to the horizon.
    pub fn occupation(&self, mask: &[bool]) -> f64 {
        crate::numeric::kahan_sum(
            self.sojourns().filter(|&(s, _)| mask[s]).map(|(_, d)| d),
        )
    }

    /// CSV rows `t,state` with a header, CRLF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,state\r\n");
        for (t, s) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{t},{s}\r\n"));
        }
        out
    }
}

/// A path over well labels rather than states.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderPath {
    pub times: Vec<f64>,
    pub labels: Vec<usize>,
    pub horizon: f64,
}

impl OrderPath {
    pub fn n_jumps(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,label\r\n");
        for (t, l) in self.times.iter().zip(&self.labels) {
            out.push_str(&format!("{t},{l}\r\n"));
        }
        out
    }
}

/// Exact generator of the chain traced on `a`, with the local-to-global state
/// mapping (ascending members of `a`).
///
/// Off-diagonal rate from `i` to `j` (both in `a`) is
/// `R(i,j) + sum_d R(i,d) P_d[first return to a lands in j]`, assembled from
/// one factorization of the complement block and one solve per column.
/// Exact arithmetic would give nonnegative rates; anything below
/// `-1e-12 * max holding` signals a broken solve and is an error, smaller
/// negatives are clamped to zero.
pub fn trace_generator(chain: &MarkovChain, a: &[usize]) -> Result<(MarkovChain, Vec<usize>)> {
    let n = chain.n_states();
    let mut a: Vec<usize> = a.to_vec();
    a.sort_unstable();
    a.dedup();
    if a.is_empty() {
        return Err(Error::BadSets { context: "trace set is empty".into() });
    }
    if *a.last().unwrap() >= n {
        return Err(Error::StateOutOfRange { index: *a.last().unwrap(), n_states: n });
    }
    let mut in_a = vec![false; n];
    for &s in &a {
        in_a[s] = true;
    }
    let complement: Vec<usize> = (0..n).filter(|&s| !in_a[s]).collect();

    if complement.is_empty() {
        return Ok((chain.clone(), a));
    }

    // Every excursion outside must return: check reachability of `a` first so
    // the error names the offending state instead of a solver failure.
    let reaches = chain.reach_backward(&a);
    for &d in &complement {
        if !reaches[d] {
            return Err(Error::Unreachable { state: d });
        }
    }

    let rs = RestrictedSystem::new(chain, &complement, 0.0)?;
    let m = complement.len();
    let clamp_band = -1e-12 * chain.max_holding().max(1.0);

    // hit[local d][k] = probability that, starting from complement state d,
    // the first entry into `a` happens at a[k]. One solve per column of the
    // complement-elimination product.
    let mut hit: Vec<Vec<f64>> = Vec::with_capacity(a.len());
    for &y in &a {
        let mut rhs = vec![0.0; m];
        for (loc, &d) in rs.kept.iter().enumerate() {
            rhs[loc] = chain.rate(d, y);
        }
        let u = rs.solve(&rhs, "trace complement elimination")?;
        hit.push(u);
    }

    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for (li, &i) in a.iter().enumerate() {
        // Direct rates within `a`, then indirect mass through excursions.
        let mut row: Vec<f64> = vec![0.0; a.len()];
        for (j, r) in chain.row(i) {
            if in_a[j] {
                let lj = a.binary_search(&j).unwrap();
                row[lj] += r;
            } else {
                let ld = rs.local_of[j];
                for (lj, col) in hit.iter().enumerate() {
                    row[lj] += r * col[ld];
                }
            }
        }
        for (lj, &val) in row.iter().enumerate() {
            if lj == li {
                continue;
            }
            if val < 0.0 {
                if val < clamp_band {
                    return Err(Error::NegativeTraceRate { from: i, to: a[lj], value: val });
                }
                continue; // clamp numerical noise to zero
            }
            if val > 0.0 {
                entries.push((li, lj, val));
            }
        }
    }
    let traced = MarkovChain::from_rates(a.len(), &entries)?;
    Ok((traced, a))
}

/// Excises all excursions outside `a`, concatenating the time spent inside.
///
/// The returned path lives on the original state indices and starts at the
/// path's first visit to `a`.
pub fn time_change_trace(path: &Path, a: &[usize]) -> Result<Path> {
    let mut in_a = vec![false; path.states.iter().copied().max().unwrap_or(0) + 1];
    for &s in a {
        if s < in_a.len() {
            in_a[s] = true;
        }
    }
    let member = |s: usize| s < in_a.len() && in_a[s];

    let mut times: Vec<f64> = Vec::new();
    let mut states: Vec<usize> = Vec::new();
    let mut clock = 0.0f64;
    for (state, sojourn) in path.sojourns() {
        if !member(state) {
            continue;
        }
        match states.last() {
            Some(&last) if last == state => {
                // Re-entry into the same state: the excursion vanishes and the
                // sojourn extends; no trace jump happens.
            }
            _ => {
                times.push(clock);
                states.push(state);
            }
        }
        clock += sojourn;
    }
    if states.is_empty() {
        return Err(Error::PathOutsideTraceSet);
    }
    let mut traced = Path::new(times, states, clock)?;
    traced.absorbed = path.absorbed;
    Ok(traced)
}

/// Projects a trace path on the wells to the label set, merging repeats.
pub fn project_order(trace_path: &Path, wells: &WellPartition) -> Result<OrderPath> {
    let mut times: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (k, &state) in trace_path.states.iter().enumerate() {
        let label = wells
            .label_of(state)
            .ok_or(Error::StateOutsideWells { state })?;
        if labels.last() != Some(&label) {
            times.push(trace_path.times[k]);
            labels.push(label);
        }
    }
    Ok(OrderPath { times, labels, horizon: trace_path.horizon })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_path() -> MarkovChain {
        MarkovChain::from_rates(
            3,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn partition_validation() {
        assert!(WellPartition::new(4, vec![vec![0], vec![0]]).is_err());
        assert!(WellPartition::new(4, vec![vec![0], vec![]]).is_err());
        let p = WellPartition::new(4, vec![vec![0], vec![3]]).unwrap();
        assert_eq!(p.delta(), &[1, 2]);
        assert_eq!(p.label_of(3), Some(1));
        assert_eq!(p.label_of(1), None);
        assert_eq!(p.other_wells(0), vec![3]);
    }

    #[test]
    fn trace_on_full_space_is_identity() {
        let c = three_path();
        let (t, map) = trace_generator(&c, &[0, 1, 2]).unwrap();
        assert_eq!(map, vec![0, 1, 2]);
        for (i, j, r) in c.entries() {
            assert_eq!(t.rate(i, j), r);
        }
    }

    #[test]
    fn trace_of_three_path_on_endpoints() {
        let (t, map) = trace_generator(&three_path(), &[0, 2]).unwrap();
        assert_eq!(map, vec![0, 2]);
        assert!((t.rate(0, 1) - 0.5).abs() < 1e-14);
        assert!((t.rate(1, 0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn trace_rejects_absorbing_complement() {
        // State 2 can never get back to {0}.
        let c = MarkovChain::from_rates(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0)]).unwrap();
        assert!(matches!(trace_generator(&c, &[0]), Err(Error::Unreachable { state: 2 })));
    }

    #[test]
    fn trace_stationary_is_conditioned_mu() {
        let c = MarkovChain::from_rates(
            4,
            &[
                (0, 1, 1.0),
                (1, 0, 2.0),
                (1, 2, 0.5),
                (2, 1, 1.0),
                (2, 3, 2.0),
                (3, 2, 1.0),
                (3, 0, 0.25),
                (0, 3, 0.75),
            ],
        )
        .unwrap();
        let mu = c.stationary_distribution().unwrap();
        let a = vec![0, 2, 3];
        let (t, map) = trace_generator(&c, &a).unwrap();
        let nu = t.stationary_distribution().unwrap();
        let cond = mu.conditioned_on(&a).unwrap();
        for (loc, &g) in map.iter().enumerate() {
            assert!((nu.get(loc) - cond.get(g)).abs() < 1e-10);
        }
    }

    #[test]
    fn tracing_is_compositional() {
        let c = MarkovChain::from_rates(
            5,
            &[
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 2.0),
                (2, 1, 1.0),
                (2, 3, 1.0),
                (3, 2, 2.0),
                (3, 4, 1.0),
                (4, 0, 1.0),
                (0, 4, 0.5),
                (4, 3, 0.5),
            ],
        )
        .unwrap();
        let (t_a, map_a) = trace_generator(&c, &[0, 2, 4]).unwrap();
        // Trace of the trace on {0, 4} (local indices in t_a).
        let b_local: Vec<usize> = [0usize, 4]
            .iter()
            .map(|g| map_a.binary_search(g).unwrap())
            .collect();
        let (t_ab, _) = trace_generator(&t_a, &b_local).unwrap();
        let (t_b, _) = trace_generator(&c, &[0, 4]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                if i != j {
                    assert!(
                        (t_ab.rate(i, j) - t_b.rate(i, j)).abs() < 1e-10,
                        "composition mismatch at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn time_change_excises_excursion() {
        // 0 (1s) -> 1 (2s) -> 2 (1s), A = {0, 2}.
        let p = Path::new(vec![0.0, 1.0, 3.0], vec![0, 1, 2], 4.0).unwrap();
        let t = time_change_trace(&p, &[0, 2]).unwrap();
        assert_eq!(t.states, vec![0, 2]);
        assert_eq!(t.times, vec![0.0, 1.0]);
        assert!((t.horizon - 2.0).abs() < 1e-15);
    }

    #[test]
    fn time_change_merges_reentries() {
        // 0 -> 1 -> 0 -> 2 with A = {0, 2}: the excursion to 1 returns to 0,
        // so the trace has a single sojourn at 0.
        let p = Path::new(vec![0.0, 1.0, 2.0, 3.5], vec![0, 1, 0, 2], 5.0).unwrap();
        let t = time_change_trace(&p, &[0, 2]).unwrap();
        assert_eq!(t.states, vec![0, 2]);
        assert!((t.times[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn time_change_entirely_inside_is_identity() {
        let p = Path::new(vec![0.0, 1.0], vec![0, 2], 2.0).unwrap();
        let t = time_change_trace(&p, &[0, 2]).unwrap();
        assert_eq!(t, p);
    }

    #[test]
    fn time_change_requires_a_visit() {
        let p = Path::new(vec![0.0], vec![1], 1.0).unwrap();
        assert!(matches!(time_change_trace(&p, &[0]), Err(Error::PathOutsideTraceSet)));
    }

    #[test]
    fn order_projection_merges_labels() {
        let wells = WellPartition::new(4, vec![vec![0, 1], vec![3]]).unwrap();
        let p = Path::new(vec![0.0, 1.0, 2.0, 3.0], vec![0, 1, 0, 3], 4.0).unwrap();
        let o = project_order(&p, &wells).unwrap();
        assert_eq!(o.labels, vec![0, 1]);
        assert_eq!(o.times, vec![0.0, 3.0]);
        let bad = Path::new(vec![0.0, 1.0], vec![0, 2], 2.0).unwrap();
        assert!(matches!(
            project_order(&bad, &wells),
            Err(Error::StateOutsideWells { state: 2 })
        ));
    }

    #[test]
    fn csv_serialization_is_crlf() {
        let p = Path::new(vec![0.0, 0.5], vec![0, 1], 1.0).unwrap();
        assert_eq!(p.to_csv(), "t,state\r\n0,0\r\n0.5,1\r\n");
        let o = OrderPath { times: vec![0.0], labels: vec![1], horizon: 1.0 };
        assert_eq!(o.to_csv(), "t,label\r\n0,1\r\n");
    }
}
