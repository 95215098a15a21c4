//! Potential theory for finite-state chains: resolvents, equilibrium
//! potentials, capacities, mean jump rates between wells, and hitting times.
//!
//! Capacities are computed through the symmetrized (by-parts) Dirichlet form,
//! which agrees with `<h, -Lh>_mu` exactly whenever `mu` is stationary; for
//! non-reversible chains the value is cross-checked against the adjoint chain,
//! whose capacity between the same sets must coincide.

use serde::{Deserialize, Serialize};

use crate::chain::{MarkovChain, ProbMeasure};
use crate::error::{Error, Result};
use crate::numeric::{inf_norm, kahan_sum, max_abs_diff, Kahan};
use crate::solve::RestrictedSystem;
use crate::trace::WellPartition;

/// Range slack for equilibrium potentials: values this far outside `[0, 1]`
/// are numerical noise and get clamped, anything worse is an error.
const POTENTIAL_SLACK: f64 = 1e-9;

/// Relative tolerance for identities that hold exactly in real arithmetic
/// (capacity vs adjoint capacity, equilibrium-measure normalization).
const IDENTITY_RTOL: f64 = 1e-8;

/// Solution record for `(lambda - L) F = G`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolventSolution {
    pub lambda: f64,
    /// `||(lambda - L) F - G||_inf` after solving.
    pub residual: f64,
    /// `||F||_inf`; never exceeds `||G||_inf / lambda`.
    pub sup_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl ResolventSolution {
    pub fn values(&self) -> &[f64] {
        self.values.as_deref().unwrap_or(&[])
    }

    /// Drops the per-state values, keeping only the summary scalars.
    pub fn without_values(mut self) -> Self {
        self.values = None;
        self
    }
}

/// Capacity between two disjoint sets.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CapacityReport {
    pub set_a: Vec<usize>,
    pub set_b: Vec<usize>,
    pub capacity: f64,
}

/// Where an expectation starts: a single state or a distribution.
#[derive(Clone, Debug)]
pub enum StartSpec {
    State(usize),
    Dist(ProbMeasure),
}

impl StartSpec {
    /// Expectation of `u` under the start.
    pub fn expect(&self, u: &[f64]) -> Result<f64> {
        match self {
            StartSpec::State(i) => {
                if *i >= u.len() {
                    return Err(Error::StateOutOfRange { index: *i, n_states: u.len() });
                }
                Ok(u[*i])
            }
            StartSpec::Dist(mu) => {
                if mu.len() != u.len() {
                    return Err(Error::InvalidInput(format!(
                        "start distribution has {} states, chain has {}",
                        mu.len(),
                        u.len()
                    )));
                }
                Ok(mu.expectation(u))
            }
        }
    }
}

/// Validates a pair of disjoint, nonempty, in-range sets; returns them sorted
/// and deduplicated.
fn check_sets(n: usize, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let norm = |s: &[usize], name: &str| -> Result<Vec<usize>> {
        if s.is_empty() {
            return Err(Error::BadSets { context: format!("set {name} is empty") });
        }
        let mut v = s.to_vec();
        v.sort_unstable();
        v.dedup();
        if *v.last().unwrap() >= n {
            return Err(Error::StateOutOfRange { index: *v.last().unwrap(), n_states: n });
        }
        Ok(v)
    };
    let a = norm(a, "A")?;
    let b = norm(b, "B")?;
    let mut in_a = vec![false; n];
    for &s in &a {
        in_a[s] = true;
    }
    if let Some(&s) = b.iter().find(|&&s| in_a[s]) {
        return Err(Error::BadSets { context: format!("state {s} lies in both A and B") });
    }
    Ok((a, b))
}

/// Solves `(lambda - L) F = G` on the full state space.
///
/// The matrix is strictly diagonally dominant for positive `lambda`, so no
/// irreducibility is needed. The probabilistic reading of `F` (a discounted
/// occupation integral) gives the recorded sup-norm bound.
pub fn solve_resolvent(chain: &MarkovChain, lambda: f64, g: &[f64]) -> Result<ResolventSolution> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveLambda { lambda });
    }
    let n = chain.n_states();
    if g.len() != n {
        return Err(Error::InvalidInput(format!(
            "resolvent data has {} entries, chain has {} states",
            g.len(),
            n
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let rs = RestrictedSystem::new(chain, &all, lambda)?;
    let f = rs.solve(g, "resolvent equation")?;

    let mut lf = vec![0.0; n];
    chain.apply_generator(&f, &mut lf);
    let residual = (0..n)
        .map(|i| (lambda * f[i] - lf[i] - g[i]).abs())
        .fold(0.0f64, f64::max);
    Ok(ResolventSolution { lambda, residual, sup_norm: inf_norm(&f), values: Some(f) })
}

/// Equilibrium potential `h_{A,B}`: 1 on `A`, 0 on `B`, harmonic elsewhere.
///
/// Every state outside `A` and `B` must be able to reach them, otherwise the
/// boundary value problem is degenerate there.
pub fn equilibrium_potential(chain: &MarkovChain, a: &[usize], b: &[usize]) -> Result<Vec<f64>> {
    let n = chain.n_states();
    let (a, b) = check_sets(n, a, b)?;
    let mut boundary = vec![false; n];
    for &s in a.iter().chain(&b) {
        boundary[s] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&s| !boundary[s]).collect();

    let mut h = vec![0.0; n];
    for &s in &a {
        h[s] = 1.0;
    }
    if interior.is_empty() {
        return Ok(h);
    }

    let union: Vec<usize> = a.iter().chain(&b).copied().collect();
    let reaches = chain.reach_backward(&union);
    if let Some(&s) = interior.iter().find(|&&s| !reaches[s]) {
        return Err(Error::Unreachable { state: s });
    }

    let rs = RestrictedSystem::new(chain, &interior, 0.0)?;
    let mut in_a = vec![false; n];
    for &s in &a {
        in_a[s] = true;
    }
    let rhs: Vec<f64> = rs
        .kept
        .iter()
        .map(|&d| kahan_sum(chain.row(d).filter(|&(j, _)| in_a[j]).map(|(_, r)| r)))
        .collect();
    let sol = rs.solve(&rhs, "equilibrium potential")?;

    for (loc, &s) in rs.kept.iter().enumerate() {
        let v = sol[loc];
        if v < -POTENTIAL_SLACK || v > 1.0 + POTENTIAL_SLACK {
            let gap = if v < 0.0 { -v } else { v - 1.0 };
            return Err(Error::IdentityViolated {
                context: format!("equilibrium potential range at state {s}"),
                gap,
            });
        }
        h[s] = v.clamp(0.0, 1.0);
    }
    Ok(h)
}

/// Capacity `cap(A, B)` with respect to the stationary measure `mu`.
///
/// Computed as the by-parts Dirichlet form of the equilibrium potential. For a
/// chain that is not reversible with respect to `mu`, the same quantity is
/// recomputed through the adjoint chain and the two must agree; this also
/// certifies that `mu` really is stationary.
pub fn capacity(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    a: &[usize],
    b: &[usize],
) -> Result<CapacityReport> {
    let n = chain.n_states();
    if mu.len() != n {
        return Err(Error::InvalidInput(format!(
            "measure has {} states, chain has {}",
            mu.len(),
            n
        )));
    }
    let (a, b) = check_sets(n, a, b)?;
    let h = equilibrium_potential(chain, &a, &b)?;
    let cap = chain.dirichlet_form_by_parts(mu, &h);

    let (reversible, _) = chain.check_reversible(mu);
    if !reversible {
        let adj = chain.adjoint(mu)?;
        let h_adj = equilibrium_potential(&adj, &a, &b)?;
        let cap_adj = adj.dirichlet_form_by_parts(mu, &h_adj);
        let scale = cap.abs().max(cap_adj.abs()).max(f64::MIN_POSITIVE);
        if (cap - cap_adj).abs() > IDENTITY_RTOL * scale {
            return Err(Error::IdentityViolated {
                context: format!(
                    "capacity {cap:e} vs adjoint capacity {cap_adj:e} for A={a:?}, B={b:?}"
                ),
                gap: (cap - cap_adj).abs(),
            });
        }
    }
    Ok(CapacityReport { set_a: a, set_b: b, capacity: cap })
}

/// Average jump rate from well `x` into well `y` via the one-step
/// decomposition: direct jumps plus excursions through the transition region
/// weighted by the probability of landing in `y` first.
pub fn mean_jump_rate(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    wells: &WellPartition,
    x: usize,
    y: usize,
) -> Result<f64> {
    let k = wells.n_labels();
    if x >= k || y >= k || x == y {
        return Err(Error::BadSets { context: format!("need two distinct well labels, got {x}, {y}") });
    }
    if wells.n_states() != chain.n_states() || mu.len() != chain.n_states() {
        return Err(Error::InvalidInput("wells, measure, and chain sizes disagree".into()));
    }
    // v = probability of reaching well y before any other well.
    let v = equilibrium_potential(chain, wells.well(y), &wells.other_wells(y))?;
    let mass = mu.mass(wells.well(x));
    if mass <= 0.0 {
        return Err(Error::ZeroMass { state: wells.well(x)[0] });
    }
    let mut acc = Kahan::new();
    for &eta in wells.well(x) {
        let w = mu.get(eta);
        for (zeta, r) in chain.row(eta) {
            acc.add(w * r * v[zeta]);
        }
    }
    Ok(acc.value() / mass)
}

/// Average jump rate from well `x` into well `y` expressed through three
/// capacities; valid for chains reversible with respect to `mu`.
///
/// With only two wells the third term is a capacity to an empty set, which
/// vanishes.
pub fn mean_jump_rate_capacity(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    wells: &WellPartition,
    x: usize,
    y: usize,
) -> Result<f64> {
    let k = wells.n_labels();
    if x >= k || y >= k || x == y {
        return Err(Error::BadSets { context: format!("need two distinct well labels, got {x}, {y}") });
    }
    let (reversible, violation) = chain.check_reversible(mu);
    if !reversible {
        return Err(Error::NonReversible { violation });
    }
    let cap_x = capacity(chain, mu, wells.well(x), &wells.other_wells(x))?.capacity;
    let cap_y = capacity(chain, mu, wells.well(y), &wells.other_wells(y))?.capacity;
    let rest: Vec<usize> = (0..k)
        .filter(|&z| z != x && z != y)
        .flat_map(|z| wells.well(z).iter().copied())
        .collect();
    let cap_xy = if rest.is_empty() {
        0.0
    } else {
        let pair: Vec<usize> = wells.well(x).iter().chain(wells.well(y)).copied().collect();
        capacity(chain, mu, &pair, &rest)?.capacity
    };
    let mass = mu.mass(wells.well(x));
    if mass <= 0.0 {
        return Err(Error::ZeroMass { state: wells.well(x)[0] });
    }
    Ok((cap_x + cap_y - cap_xy) / (2.0 * mass))
}

/// The normalized harmonic entry measure on `A` for excursions from `A` to
/// `B`, built from the adjoint chain, together with the capacity.
///
/// The unnormalized weights sum to `cap(A, B)` exactly in real arithmetic;
/// that identity is enforced here.
pub fn equilibrium_measure_dagger(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    a: &[usize],
    b: &[usize],
) -> Result<(ProbMeasure, f64)> {
    let n = chain.n_states();
    let (a, b) = check_sets(n, a, b)?;
    let adj = chain.adjoint(mu)?;
    let h_adj = equilibrium_potential(&adj, &a, &b)?;

    let mut weights = vec![0.0; n];
    for &zeta in &a {
        let mut acc = Kahan::new();
        for (xi, r) in adj.row(zeta) {
            acc.add(r * (1.0 - h_adj[xi]));
        }
        weights[zeta] = mu.get(zeta) * acc.value();
    }
    let total = kahan_sum(a.iter().map(|&z| weights[z]));
    let cap = capacity(chain, mu, &a, &b)?.capacity;
    let scale = total.abs().max(cap.abs()).max(f64::MIN_POSITIVE);
    if (total - cap).abs() > IDENTITY_RTOL * scale {
        return Err(Error::IdentityViolated {
            context: format!("entry measure normalizer {total:e} vs capacity {cap:e}"),
            gap: (total - cap).abs(),
        });
    }
    Ok((ProbMeasure::from_weights(weights)?, cap))
}

/// Expected value, under the start, of the time spent in `count` before the
/// chain first enters `absorb`.
pub fn occupation_time(
    chain: &MarkovChain,
    start: &StartSpec,
    absorb: &[usize],
    count: &[usize],
) -> Result<f64> {
    let u = occupation_profile(chain, absorb, count)?;
    start.expect(&u)
}

/// Per-state expected time in `count` before hitting `absorb`.
pub fn occupation_profile(chain: &MarkovChain, absorb: &[usize], count: &[usize]) -> Result<Vec<f64>> {
    let n = chain.n_states();
    let mut absorb = absorb.to_vec();
    absorb.sort_unstable();
    absorb.dedup();
    if absorb.is_empty() {
        return Err(Error::BadSets { context: "absorbing target is empty".into() });
    }
    if *absorb.last().unwrap() >= n {
        return Err(Error::StateOutOfRange { index: *absorb.last().unwrap(), n_states: n });
    }
    let mut in_absorb = vec![false; n];
    for &s in &absorb {
        in_absorb[s] = true;
    }
    let mut in_count = vec![false; n];
    for &s in count {
        if s >= n {
            return Err(Error::StateOutOfRange { index: s, n_states: n });
        }
        in_count[s] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&s| !in_absorb[s]).collect();
    if free.is_empty() {
        return Ok(vec![0.0; n]);
    }
    let reaches = chain.reach_backward(&absorb);
    if let Some(&s) = free.iter().find(|&&s| !reaches[s]) {
        return Err(Error::Unreachable { state: s });
    }
    let rs = RestrictedSystem::new(chain, &free, 0.0)?;
    let rhs: Vec<f64> = rs.kept.iter().map(|&s| if in_count[s] { 1.0 } else { 0.0 }).collect();
    let sol = rs.solve(&rhs, "occupation time")?;
    Ok(rs.scatter(&sol, n, 0.0))
}

/// Expected hitting time of `target` from the start.
pub fn mean_hitting_time(chain: &MarkovChain, start: &StartSpec, target: &[usize]) -> Result<f64> {
    let all: Vec<usize> = (0..chain.n_states()).collect();
    occupation_time(chain, start, target, &all)
}

/// Mean hitting time of `b` started from the entry measure of excursions
/// `a -> b`, computed two ways that must agree for stationary chains:
/// the entry-measure average of hitting times, and the occupation identity
/// `sum_x mu(x) h_adj(x) / cap(a, b)`.
///
/// Returns the first value after checking the identity; useful as a
/// self-validating oracle for metastable exit times.
pub fn entry_measure_hitting_time(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    a: &[usize],
    b: &[usize],
) -> Result<f64> {
    let (nu, cap) = equilibrium_measure_dagger(chain, mu, a, b)?;
    let direct = mean_hitting_time(chain, &StartSpec::Dist(nu), b)?;
    let adj = chain.adjoint(mu)?;
    let h_adj = equilibrium_potential(&adj, a, b)?;
    let via_capacity = mu.expectation(&h_adj) / cap;
    let scale = direct.abs().max(via_capacity.abs()).max(f64::MIN_POSITIVE);
    if (direct - via_capacity).abs() > 1e-7 * scale {
        return Err(Error::IdentityViolated {
            context: format!(
                "entry-measure hitting time {direct:e} vs capacity form {via_capacity:e}"
            ),
            gap: (direct - via_capacity).abs(),
        });
    }
    Ok(direct)
}

/// `||F||_inf <= ||G||_inf / lambda` slack for a computed resolvent solution;
/// nonpositive when the bound holds.
pub fn resolvent_bound_slack(sol: &ResolventSolution, g: &[f64]) -> f64 {
    sol.sup_norm - inf_norm(g) / sol.lambda
}

/// Largest deviation between two per-state value vectors; convenience alias
/// kept close to the potential-theory call sites.
pub fn profile_gap(a: &[f64], b: &[f64]) -> f64 {
    max_abs_diff(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_path() -> MarkovChain {
        MarkovChain::from_rates(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap()
    }

    fn three_cycle() -> MarkovChain {
        MarkovChain::from_rates(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap()
    }

    #[test]
    fn resolvent_two_state() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        let sol = solve_resolvent(&c, 1.0, &[1.0, 0.0]).unwrap();
        // (I - L) = [[2, -1], [-2, 3]], inverse column for (1,0) is (3/4, 1/2).
        let f = sol.values();
        assert!((f[0] - 0.75).abs() < 1e-12);
        assert!((f[1] - 0.5).abs() < 1e-12);
        assert!(sol.residual < 1e-10);
        assert!(resolvent_bound_slack(&sol, &[1.0, 0.0]) <= 1e-12);
    }

    #[test]
    fn resolvent_rejects_bad_lambda() {
        let c = three_path();
        assert!(matches!(
            solve_resolvent(&c, 0.0, &[0.0; 3]),
            Err(Error::NonPositiveLambda { .. })
        ));
        assert!(solve_resolvent(&c, -1.0, &[0.0; 3]).is_err());
    }

    #[test]
    fn resolvent_of_constant_is_constant_over_lambda() {
        let c = three_path();
        let sol = solve_resolvent(&c, 0.5, &[2.0, 2.0, 2.0]).unwrap();
        for &v in sol.values() {
            assert!((v - 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn potential_on_three_path() {
        let h = equilibrium_potential(&three_path(), &[0], &[2]).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-14);
        assert!((h[1] - 0.5).abs() < 1e-12);
        assert!(h[2].abs() < 1e-14);
    }

    #[test]
    fn potential_needs_disjoint_nonempty_sets() {
        let c = three_path();
        assert!(equilibrium_potential(&c, &[], &[2]).is_err());
        assert!(equilibrium_potential(&c, &[0, 1], &[1]).is_err());
        assert!(equilibrium_potential(&c, &[0], &[3]).is_err());
    }

    #[test]
    fn potential_rejects_stranded_interior() {
        // State 2 cannot reach {0, 3}: it only talks to itself via nothing.
        let c = MarkovChain::from_rates(
            4,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 3, 1.0), (3, 1, 1.0), (3, 2, 1.0)],
        )
        .unwrap();
        assert!(matches!(
            equilibrium_potential(&c, &[0], &[3]),
            Err(Error::Unreachable { state: 2 })
        ));
    }

    #[test]
    fn capacity_of_three_path_endpoints() {
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let rep = capacity(&c, &mu, &[0], &[2]).unwrap();
        assert!((rep.capacity - 1.0 / 6.0).abs() < 1e-13);
        // Symmetry in the two sets.
        let rev = capacity(&c, &mu, &[2], &[0]).unwrap();
        assert!((rev.capacity - rep.capacity).abs() < 1e-13);
    }

    #[test]
    fn capacity_matches_dirichlet_pairing_when_stationary() {
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let h = equilibrium_potential(&c, &[0], &[2]).unwrap();
        let by_parts = c.dirichlet_form_by_parts(&mu, &h);
        let pairing = c.dirichlet_form(&mu, &h);
        assert!((by_parts - pairing).abs() < 1e-14);
    }

    #[test]
    fn capacity_nonreversible_cycle_agrees_with_adjoint() {
        let c = three_cycle();
        let mu = c.stationary_distribution().unwrap();
        let rep = capacity(&c, &mu, &[0], &[1]).unwrap();
        // h = (1, 0, 1), cap = mu(0) * rate(0 -> 1) = 1/3.
        assert!((rep.capacity - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_report_serializes_camel_case() {
        let rep = CapacityReport { set_a: vec![0], set_b: vec![2], capacity: 0.5 };
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"setA\":[0]"));
        assert!(json.contains("\"setB\":[2]"));
        assert!(json.contains("\"capacity\":0.5"));
    }

    #[test]
    fn mean_jump_rate_matches_trace_and_capacity_forms() {
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(3, vec![vec![0], vec![2]]).unwrap();
        let direct = mean_jump_rate(&c, &mu, &wells, 0, 1).unwrap();
        assert!((direct - 0.5).abs() < 1e-12);
        let via_caps = mean_jump_rate_capacity(&c, &mu, &wells, 0, 1).unwrap();
        assert!((via_caps - 0.5).abs() < 1e-12);
        // Same number as the traced chain's rate out of the local copy of 0.
        let (traced, map) = crate::trace::trace_generator(&c, &[0, 2]).unwrap();
        assert_eq!(map, vec![0, 2]);
        assert!((traced.rate(0, 1) - direct).abs() < 1e-12);
    }

    #[test]
    fn mean_jump_rate_equals_weighted_trace_rate_three_wells() {
        // 6-state ring with three 1-state wells and three gap states.
        let mut entries = Vec::new();
        for i in 0..6usize {
            let j = (i + 1) % 6;
            entries.push((i, j, 1.0 + 0.5 * (i as f64)));
            entries.push((j, i, 2.0 - 0.2 * (i as f64)));
        }
        let c = MarkovChain::from_rates(6, &entries).unwrap();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(6, vec![vec![0], vec![2], vec![4]]).unwrap();
        let (traced, map) = crate::trace::trace_generator(&c, &[0, 2, 4]).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                if x == y {
                    continue;
                }
                let r = mean_jump_rate(&c, &mu, &wells, x, y).unwrap();
                let lx = map.binary_search(&wells.well(x)[0]).unwrap();
                let ly = map.binary_search(&wells.well(y)[0]).unwrap();
                assert!(
                    (r - traced.rate(lx, ly)).abs() < 1e-11,
                    "well {x} -> {y}: {r} vs {}",
                    traced.rate(lx, ly)
                );
            }
        }
    }

    #[test]
    fn mean_jump_rate_capacity_requires_reversibility() {
        let c = three_cycle();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(3, vec![vec![0], vec![1]]).unwrap();
        assert!(matches!(
            mean_jump_rate_capacity(&c, &mu, &wells, 0, 1),
            Err(Error::NonReversible { .. })
        ));
    }

    #[test]
    fn entry_measure_on_three_path_is_point_mass() {
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let (nu, cap) = equilibrium_measure_dagger(&c, &mu, &[0], &[2]).unwrap();
        assert!((cap - 1.0 / 6.0).abs() < 1e-13);
        assert!((nu.get(0) - 1.0).abs() < 1e-14);
        assert!(nu.get(1).abs() < 1e-14);
    }

    #[test]
    fn entry_measure_weights_on_two_state_front() {
        // A has two states, both bordering the rest.
        let c = MarkovChain::from_rates(
            4,
            &[
                (0, 2, 1.0),
                (2, 0, 1.0),
                (1, 2, 2.0),
                (2, 1, 2.0),
                (2, 3, 1.0),
                (3, 2, 1.0),
                (0, 1, 0.5),
                (1, 0, 0.5),
            ],
        )
        .unwrap();
        let mu = c.stationary_distribution().unwrap();
        let (nu, cap) = equilibrium_measure_dagger(&c, &mu, &[0, 1], &[3]).unwrap();
        assert!(cap > 0.0);
        assert!((nu.get(0) + nu.get(1) - 1.0).abs() < 1e-12);
        assert!(nu.get(2).abs() < 1e-14);
        assert!(nu.get(3).abs() < 1e-14);
    }

    #[test]
    fn hitting_time_three_path() {
        let c = three_path();
        let t = mean_hitting_time(&c, &StartSpec::State(0), &[2]).unwrap();
        // Backward equations: u(1) = 2, u(0) = 3.
        assert!((t - 3.0).abs() < 1e-12);
        let t1 = mean_hitting_time(&c, &StartSpec::State(1), &[2]).unwrap();
        assert!((t1 - 2.0).abs() < 1e-12);
        let t2 = mean_hitting_time(&c, &StartSpec::State(2), &[2]).unwrap();
        assert_eq!(t2, 0.0);
    }

    #[test]
    fn hitting_time_mean_field_identity() {
        // Reversible chain, singleton sets: E_a[tau_b] * cap(a, b) equals the
        // stationary mass of the potential.
        let c = MarkovChain::from_rates(
            4,
            &[
                (0, 1, 1.0),
                (1, 0, 3.0),
                (1, 2, 2.0),
                (2, 1, 1.0),
                (2, 3, 0.5),
                (3, 2, 2.0),
            ],
        )
        .unwrap();
        let mu = c.stationary_distribution().unwrap();
        let t = mean_hitting_time(&c, &StartSpec::State(0), &[3]).unwrap();
        let cap = capacity(&c, &mu, &[0], &[3]).unwrap().capacity;
        let h = equilibrium_potential(&c, &[0], &[3]).unwrap();
        let predicted = mu.expectation(&h) / cap;
        assert!(
            (t - predicted).abs() < 1e-9 * t.max(1.0),
            "direct {t} vs potential form {predicted}"
        );
    }

    #[test]
    fn entry_measure_hitting_time_self_checks() {
        let c = three_cycle();
        let mu = c.stationary_distribution().unwrap();
        let t = entry_measure_hitting_time(&c, &mu, &[0], &[2]).unwrap();
        assert!(t > 0.0);
        // Hand solve: from 0 the cycle must pass 1; u(0) = 2, u(1) = 1, and
        // the entry measure is the point mass at 0.
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn occupation_splits_hitting_time() {
        let c = three_path();
        let all = mean_hitting_time(&c, &StartSpec::State(0), &[2]).unwrap();
        let in_0 = occupation_time(&c, &StartSpec::State(0), &[2], &[0]).unwrap();
        let in_1 = occupation_time(&c, &StartSpec::State(0), &[2], &[1]).unwrap();
        assert!((in_0 + in_1 - all).abs() < 1e-12);
        assert!(in_0 > 0.0 && in_1 > 0.0);
    }

    #[test]
    fn occupation_identity_under_entry_measure() {
        // Non-reversible chain: entry-measure-averaged occupation of a set
        // equals stationary mass of the adjoint potential on that set over
        // capacity.
        let c = MarkovChain::from_rates(
            4,
            &[
                (0, 1, 2.0),
                (1, 2, 1.0),
                (2, 0, 1.0),
                (2, 3, 0.5),
                (3, 0, 1.5),
                (1, 0, 0.5),
                (3, 2, 0.25),
            ],
        )
        .unwrap();
        let mu = c.stationary_distribution().unwrap();
        let (a, b) = (vec![0usize], vec![3usize]);
        let (nu, cap) = equilibrium_measure_dagger(&c, &mu, &a, &b).unwrap();
        let adj = c.adjoint(&mu).unwrap();
        let h_adj = equilibrium_potential(&adj, &a, &b).unwrap();
        for count in [vec![1usize], vec![0, 2], vec![0, 1, 2]] {
            let lhs = occupation_time(&c, &StartSpec::Dist(nu.clone()), &b, &count).unwrap();
            let rhs = kahan_sum(count.iter().map(|&s| mu.get(s) * h_adj[s])) / cap;
            assert!(
                (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0),
                "count set {count:?}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn hitting_time_unreachable_target() {
        let c = MarkovChain::from_rates(3, &[(0, 1, 1.0), (1, 0, 1.0), (2, 0, 1.0)]).unwrap();
        // Nothing reaches state 2.
        assert!(matches!(
            mean_hitting_time(&c, &StartSpec::State(0), &[2]),
            Err(Error::Unreachable { .. })
        ));
    }
}
