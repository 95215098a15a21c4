//! Small hand-built chains used as controls next to the zero-range model.

use crate::chain::{MarkovChain, ProbMeasure};
use crate::error::{Error, Result};
use crate::trace::WellPartition;

/// A birth-death double well: flat wells at both ends of a path, a tent
/// barrier of the given height between them, Metropolis rates.
#[derive(Clone, Debug)]
pub struct DoubleWell {
    pub chain: MarkovChain,
    pub mu: ProbMeasure,
    pub wells: WellPartition,
    /// Deepest state of each well: the two path endpoints.
    pub anchors: Vec<usize>,
    pub potential: Vec<f64>,
}

/// Builds the double well on `n_states` path states with `well_size` flat
/// states at each end and a linear tent rising to `depth` in the middle.
pub fn double_well_birth_death(
    n_states: usize,
    well_size: usize,
    depth: f64,
) -> Result<DoubleWell> {
    if well_size < 2 {
        return Err(Error::InvalidModel(format!(
            "wells need at least 2 states each, got {well_size}"
        )));
    }
    if n_states < 2 * well_size + 1 {
        return Err(Error::InvalidModel(format!(
            "{n_states} states cannot hold two wells of {well_size} plus a barrier"
        )));
    }
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidModel(format!(
            "barrier depth must be positive and finite, got {depth}"
        )));
    }
    // Tent spans the closed interval between the inner well edges.
    let a = well_size - 1;
    let b = n_states - well_size;
    let half = (b - a) as f64 / 2.0;
    let potential: Vec<f64> = (0..n_states)
        .map(|i| {
            if i <= a || i >= b {
                0.0
            } else {
                depth * ((i - a).min(b - i) as f64) / half
            }
        })
        .collect();
    let mut entries = Vec::new();
    for i in 0..n_states - 1 {
        let up = potential[i + 1] - potential[i];
        entries.push((i, i + 1, (-up.max(0.0)).exp()));
        entries.push((i + 1, i, (up.min(0.0)).exp()));
    }
    let chain = MarkovChain::from_rates(n_states, &entries)?;
    let mu = ProbMeasure::from_weights(potential.iter().map(|v| (-v).exp()).collect())?;
    let wells = WellPartition::new(
        n_states,
        vec![
            (0..well_size).collect(),
            (n_states - well_size..n_states).collect(),
        ],
    )?;
    Ok(DoubleWell {
        chain,
        mu,
        wells,
        anchors: vec![0, n_states - 1],
        potential,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::check_h0_h1;

    #[test]
    fn double_well_is_reversible_with_the_tent_measure() {
        let dw = double_well_birth_death(30, 5, 3.0).unwrap();
        let (ok, violation) = dw.chain.check_reversible(&dw.mu);
        assert!(ok, "detailed balance violation {violation}");
        let pi = dw.chain.stationary_distribution().unwrap();
        let gap: f64 = pi
            .as_slice()
            .iter()
            .zip(dw.mu.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-10);
    }

    #[test]
    fn barrier_growth_starves_the_escape_ratio() {
        let ratio = |n: usize| {
            let dw = double_well_birth_death(n, 5, 4.0).unwrap();
            let report =
                check_h0_h1(&dw.chain, &dw.mu, &dw.wells, &dw.anchors).unwrap();
            report.diagnostics["h1_max"]
        };
        let small = ratio(20);
        let large = ratio(60);
        assert!(large < small, "h1 {large} should shrink from {small}");
        assert!(small > 0.0);
    }

    #[test]
    fn construction_rejects_degenerate_shapes() {
        assert!(double_well_birth_death(10, 5, 1.0).is_err());
        assert!(double_well_birth_death(30, 1, 1.0).is_err());
        assert!(double_well_birth_death(30, 5, 0.0).is_err());
    }
}
