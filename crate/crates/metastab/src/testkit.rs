//! Deterministic random instances for tests: irreducible chains, reversible
//! chains with a known measure, probe functions, and well partitions.

use crate::chain::{MarkovChain, ProbMeasure};
use crate::sim::RngStream;
use std::collections::HashSet;

/// Fisher-Yates shuffle of `0..n` driven by the stream.
pub fn random_permutation(stream: &mut RngStream, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (stream.uniform() * (i + 1) as f64) as usize;
        perm.swap(i, j.min(i));
    }
    perm
}

/// Irreducible chain on `n` states: a random rate cycle through every state
/// plus `extra_edges` random directed edges, rates in [0.5, 2).
pub fn random_chain(stream: &mut RngStream, n: usize, extra_edges: usize) -> MarkovChain {
    assert!(n >= 2, "random chains need at least 2 states");
    let perm = random_permutation(stream, n);
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut entries = Vec::new();
    for i in 0..n {
        let from = perm[i];
        let to = perm[(i + 1) % n];
        seen.insert((from, to));
        entries.push((from, to, 0.5 + 1.5 * stream.uniform()));
    }
    for _ in 0..extra_edges {
        let from = (stream.uniform() * n as f64) as usize % n;
        let to = (stream.uniform() * n as f64) as usize % n;
        if from == to || !seen.insert((from, to)) {
            continue;
        }
        entries.push((from, to, 0.5 + 1.5 * stream.uniform()));
    }
    MarkovChain::from_rates(n, &entries).expect("cycle construction is valid")
}

/// Reversible chain with a random measure: symmetric conductances on a path
/// plus random extra pairs, rates `c(i,j)/pi(i)`.
pub fn random_reversible_chain(
    stream: &mut RngStream,
    n: usize,
    extra_edges: usize,
) -> (MarkovChain, ProbMeasure) {
    assert!(n >= 2, "random chains need at least 2 states");
    let weights: Vec<f64> = (0..n).map(|_| 0.5 + stream.uniform()).collect();
    let mut conductance: Vec<((usize, usize), f64)> = Vec::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for i in 0..n - 1 {
        seen.insert((i, i + 1));
        conductance.push(((i, i + 1), 0.5 + 1.5 * stream.uniform()));
    }
    for _ in 0..extra_edges {
        let a = (stream.uniform() * n as f64) as usize % n;
        let b = (stream.uniform() * n as f64) as usize % n;
        let (lo, hi) = (a.min(b), a.max(b));
        if lo == hi || !seen.insert((lo, hi)) {
            continue;
        }
        conductance.push(((lo, hi), 0.5 + 1.5 * stream.uniform()));
    }
    let mut entries = Vec::new();
    for ((i, j), c) in conductance {
        entries.push((i, j, c / weights[i]));
        entries.push((j, i, c / weights[j]));
    }
    let chain = MarkovChain::from_rates(n, &entries).expect("path construction is valid");
    let mu = ProbMeasure::from_weights(weights).expect("positive weights");
    (chain, mu)
}

/// Probe function with entries in [-scale, scale).
pub fn random_probe(stream: &mut RngStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * stream.uniform() - 1.0)).collect()
}

/// `k` disjoint wells of `well_size` random states each; the rest is the
/// transition region.
pub fn random_wells(
    stream: &mut RngStream,
    n: usize,
    k: usize,
    well_size: usize,
) -> crate::trace::WellPartition {
    assert!(k * well_size <= n, "wells do not fit");
    let perm = random_permutation(stream, n);
    let wells: Vec<Vec<usize>> = (0..k)
        .map(|x| perm[x * well_size..(x + 1) * well_size].to_vec())
        .collect();
    crate::trace::WellPartition::new(n, wells).expect("disjoint by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_chains_are_irreducible_and_reproducible() {
        let mut s1 = RngStream::new(11, 0);
        let mut s2 = RngStream::new(11, 0);
        let a = random_chain(&mut s1, 20, 30);
        let b = random_chain(&mut s2, 20, 30);
        assert!(a.is_irreducible());
        let rows_a: Vec<_> = a.entries().collect();
        let rows_b: Vec<_> = b.entries().collect();
        assert_eq!(rows_a, rows_b);
    }

    #[test]
    fn reversible_chains_satisfy_detailed_balance() {
        let mut s = RngStream::new(5, 1);
        let (chain, mu) = random_reversible_chain(&mut s, 25, 40);
        assert!(chain.is_irreducible());
        let (ok, violation) = chain.check_reversible(&mu);
        assert!(ok, "violation {violation}");
        let pi = chain.stationary_distribution().unwrap();
        let gap: f64 = pi
            .as_slice()
            .iter()
            .zip(mu.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-9);
    }

    #[test]
    fn wells_are_disjoint_and_sized() {
        let mut s = RngStream::new(3, 2);
        let wells = random_wells(&mut s, 30, 3, 4);
        assert_eq!(wells.n_labels(), 3);
        for x in 0..3 {
            assert_eq!(wells.well(x).len(), 4);
        }
        assert_eq!(wells.delta().len(), 30 - 12);
    }
}
