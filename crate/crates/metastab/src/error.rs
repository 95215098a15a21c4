use thiserror::Error;

/// Errors produced by chain construction, linear solves, and experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("negative rate {value} for transition {from} -> {to}")]
    NegativeRate { from: usize, to: usize, value: f64 },

    #[error("non-finite rate for transition {from} -> {to}")]
    NonFiniteRate { from: usize, to: usize },

    #[error("duplicate rate entry for transition {from} -> {to}")]
    DuplicateRate { from: usize, to: usize },

    #[error("diagonal rate entry at state {state}; jump rates vanish on the diagonal")]
    DiagonalRate { state: usize },

    #[error("state index {index} out of range for {n_states} states")]
    StateOutOfRange { index: usize, n_states: usize },

    #[error("chain is not irreducible: {context}")]
    NotIrreducible { context: String },

    #[error("measure has zero or negative mass at state {state}")]
    ZeroMass { state: usize },

    #[error("measure is not normalized: total mass {total}")]
    NotNormalized { total: f64 },

    #[error("measure is not stationary for this chain: {detail}")]
    NotStationary { detail: String },

    #[error("lambda must be positive, got {lambda}")]
    NonPositiveLambda { lambda: f64 },

    #[error("sets must be disjoint and nonempty: {context}")]
    BadSets { context: String },

    #[error("target set unreachable from state {state}")]
    Unreachable { state: usize },

    #[error("linear solve failed: {context} (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    SolveFailed {
        context: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("problem too large for dense spectral path: {n} states exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("trace rate {value:.3e} for {from} -> {to} is below the clamping band; solve looks broken")]
    NegativeTraceRate { from: usize, to: usize, value: f64 },

    #[error("path never visits the trace set")]
    PathOutsideTraceSet,

    #[error("state {state} lies outside every well")]
    StateOutsideWells { state: usize },

    #[error("anchor {state} lies outside well {label}")]
    AnchorOutsideWell { state: usize, label: usize },

    #[error("wells overlap at N = {n}; smallest valid N is {min_valid_n}")]
    OverlappingWells { n: u64, min_valid_n: u64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("well-average matrix is singular at lambda = {lambda}; the resolvent averages do not separate the wells")]
    SingularReduction { lambda: f64 },

    #[error("state space too big: {states} configurations exceeds the cap of {cap}")]
    StateCapExceeded { states: u128, cap: u128 },

    #[error("spectral gap needs a reversible chain (max detailed-balance violation {violation:.3e})")]
    NonReversible { violation: f64 },

    #[error("super-harmonic radicand is not positive at state {state}, term l = {ell}")]
    NonPositiveRadicand { state: usize, ell: u32 },

    #[error("internal identity violated: {context} (gap {gap:.3e})")]
    IdentityViolated { context: String, gap: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config: {0:?}")]
    InvalidConfig(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
