//! Metastability toolkit for finite-state continuous-time Markov chains:
//! exact resolvent and potential-theory solves, trace and order processes,
//! metastability condition checks cross-validated by event-driven
//! simulation, and a critical zero-range model where all of it is exercised
//! at scale.

#![forbid(unsafe_code)]

pub mod chain;
pub mod config;
pub mod error;
pub mod experiments;
pub mod meta;
pub mod models;
pub mod numeric;
pub mod potential;
pub mod sim;
pub mod solve;
pub mod testkit;
pub mod trace;
pub mod zrp;

pub use chain::{MarkovChain, ProbMeasure};
pub use error::{Error, Result};

// Book chapters compile as doctests so the guide's snippets cannot drift
// from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/chains.md")]
    mod chains {}
    #[doc = include_str!("../../../book/src/resolvents.md")]
    mod resolvents {}
    #[doc = include_str!("../../../book/src/potential-theory.md")]
    mod potential_theory {}
    #[doc = include_str!("../../../book/src/trace-order.md")]
    mod trace_order {}
    #[doc = include_str!("../../../book/src/zero-range.md")]
    mod zero_range {}
    #[doc = include_str!("../../../book/src/conditions.md")]
    mod conditions {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
