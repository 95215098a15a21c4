//! Property tests for the two solver contracts that must hold on arbitrary
//! inputs, not just the frozen oracles: the resolvent sup bound and the
//! symmetry of the capacity.

use metastab::potential::{capacity, resolvent_bound_slack, solve_resolvent};
use metastab::sim::RngStream;
use metastab::testkit::{random_chain, random_probe, random_reversible_chain};
use proptest::prelude::*;

proptest! {
    // ||F||_inf <= ||g||_inf / lambda for every chain, rate scale, and
    // probe, along with the solver's residual contract.
    #[test]
    fn resolvent_sup_bound_holds(
        seed in 0u64..(1 << 48),
        n in 2usize..40,
        lambda in 0.05f64..5.0,
        scale in 0.1f64..20.0,
    ) {
        let mut rng = RngStream::new(seed, 9);
        let chain = random_chain(&mut rng, n, n / 2);
        let g = random_probe(&mut rng, n, scale);
        let sol = solve_resolvent(&chain, lambda, &g).unwrap();
        prop_assert!(resolvent_bound_slack(&sol, &g) <= 1e-9 * scale / lambda);
        prop_assert!(sol.residual <= 1e-8);
    }

    // cap(A, B) = cap(B, A) on reversible chains: the Dirichlet form does
    // not care which side plays the source.
    #[test]
    fn capacity_is_symmetric_in_its_sets(
        seed in 0u64..(1 << 48),
        n in 4usize..40,
    ) {
        let mut rng = RngStream::new(seed, 10);
        let (chain, pi) = random_reversible_chain(&mut rng, n, n);
        let a = [0, 1];
        let b = [n - 2, n - 1];
        let ab = capacity(&chain, &pi, &a, &b).unwrap().capacity;
        let ba = capacity(&chain, &pi, &b, &a).unwrap().capacity;
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(ba));
    }
}
