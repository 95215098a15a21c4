//! Monte Carlo engine: exact-jump path sampling with keyed RNG streams,
//! hitting-time tails, occupation functionals, and order-process exit
//! statistics.
//!
//! Every estimator here has an exact (solve-based) counterpart elsewhere in
//! the crate; the test battery pairs them at 3 standard errors. Determinism
//! contract: one RNG stream per sample, aggregation in sample order, so
//! results are bit-identical for any worker count.

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, mean_variance};
use crate::trace::{Path, WellPartition};

/// Hard cap on jump events per sampled path; hitting it censors the sample.
pub const STEP_CAP: usize = 10_000_000;

/// Keyed RNG: identical `(seed, stream)` reproduces the exact draw sequence
/// on any machine and any thread count.
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { rng }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Exponential draw with the given positive rate.
    pub fn exp(&mut self, rate: f64) -> f64 {
        // 1 - U lies in (0, 1], so the log never sees zero.
        -(1.0 - self.uniform()).ln() / rate
    }
}

/// Seed plus stream offset; sample `i` of an estimator draws from stream
/// `base + i`, so batches stay disjoint by construction.
#[derive(Clone, Copy, Debug)]
pub struct StreamSpec {
    pub seed: u64,
    pub base: u64,
}

impl StreamSpec {
    pub fn new(seed: u64, base: u64) -> Self {
        StreamSpec { seed, base }
    }

    pub fn stream(&self, i: u64) -> RngStream {
        RngStream::new(self.seed, self.base.wrapping_add(i))
    }
}

/// Summary of a sample batch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `sqrt(variance / count)`.
    pub std_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cdf: Option<Vec<(f64, f64)>>,
}

impl SampleStats {
    pub fn from_values(values: &[f64]) -> Self {
        let (mean, variance) = mean_variance(values);
        let count = values.len();
        let std_error = if count > 0 { (variance / count as f64).sqrt() } else { 0.0 };
        SampleStats { count, mean, variance, std_error, cdf: None }
    }

    /// Attaches an empirical CDF sampled at `grid` points.
    pub fn with_cdf(mut self, values: &[f64], grid: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let n = sorted.len().max(1) as f64;
        let cdf = grid
            .iter()
            .map(|&g| (g, sorted.partition_point(|&v| v <= g) as f64 / n))
            .collect();
        self.cdf = Some(cdf);
        self
    }
}

/// Next state given the uniform draw, by cumulative scan of the rate row.
pub fn next_state(chain: &MarkovChain, i: usize, u: f64) -> usize {
    let target = u * chain.holding(i);
    let mut acc = 0.0;
    let mut last = i;
    for (j, r) in chain.row(i) {
        acc += r;
        last = j;
        if target < acc {
            return j;
        }
    }
    // Rounding pushed the target past the final cumulative sum.
    last
}

/// One exact-jump trajectory up to the horizon.
///
/// Draw order per step is fixed (holding time, then jump target) — part of
/// the reproducibility contract. A state with zero holding rate ends the
/// path early with the `absorbed` flag set.
pub fn sample_path(
    chain: &MarkovChain,
    start: usize,
    horizon: f64,
    rng: &mut RngStream,
) -> Result<Path> {
    if start >= chain.n_states() {
        return Err(Error::StateOutOfRange { index: start, n_states: chain.n_states() });
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let mut times = vec![0.0];
    let mut states = vec![start];
    let mut t = 0.0;
    let mut cur = start;
    let mut absorbed = false;
    for _ in 0..STEP_CAP {
        let h = chain.holding(cur);
        if h <= 0.0 {
            absorbed = true;
            break;
        }
        let dt = rng.exp(h);
        if t + dt >= horizon {
            break;
        }
        t += dt;
        cur = next_state(chain, cur, rng.uniform());
        times.push(t);
        states.push(cur);
    }
    let mut path = Path::new(times, states, horizon)?;
    path.absorbed = absorbed;
    Ok(path)
}

/// Hitting time of the target set from one start; `censored` when the path
/// was absorbed elsewhere or ran out of steps first.
fn sample_hitting(
    chain: &MarkovChain,
    start: usize,
    in_target: &[bool],
    rng: &mut RngStream,
) -> (f64, bool) {
    if in_target[start] {
        return (0.0, false);
    }
    let mut t = 0.0;
    let mut cur = start;
    for _ in 0..STEP_CAP {
        let h = chain.holding(cur);
        if h <= 0.0 {
            return (t, true);
        }
        t += rng.exp(h);
        cur = next_state(chain, cur, rng.uniform());
        if in_target[cur] {
            return (t, false);
        }
    }
    (t, true)
}

/// Empirical tail of a hitting time over a grid of times.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailReport {
    pub s_grid: Vec<f64>,
    /// One binomial estimate of `P[tau >= s]` per grid entry.
    pub tails: Vec<SampleStats>,
    /// Hitting-time stats over uncensored samples.
    pub time_stats: SampleStats,
    pub censored: usize,
    pub samples: Vec<f64>,
    pub censored_flags: Vec<bool>,
}

/// Samples the hitting time of `target` from `start` and reports tail
/// probabilities at each grid time with binomial standard errors.
///
/// Censored samples keep their truncation time; they still count as
/// exceedances for any practical grid value and are reported, never dropped.
pub fn hitting_tail(
    chain: &MarkovChain,
    start: usize,
    target: &[usize],
    s_grid: &[f64],
    n_samples: usize,
    streams: StreamSpec,
) -> Result<TailReport> {
    let n = chain.n_states();
    if start >= n {
        return Err(Error::StateOutOfRange { index: start, n_states: n });
    }
    let mut in_target = vec![false; n];
    for &s in target {
        if s >= n {
            return Err(Error::StateOutOfRange { index: s, n_states: n });
        }
        in_target[s] = true;
    }
    if target.is_empty() {
        return Err(Error::BadSets { context: "hitting target is empty".into() });
    }
    if !chain.reach_backward(target)[start] {
        return Err(Error::Unreachable { state: start });
    }
    let drawn: Vec<(f64, bool)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i as u64);
            sample_hitting(chain, start, &in_target, &mut rng)
        })
        .collect();
    let samples: Vec<f64> = drawn.iter().map(|&(t, _)| t).collect();
    let censored_flags: Vec<bool> = drawn.iter().map(|&(_, c)| c).collect();
    let censored = censored_flags.iter().filter(|&&c| c).count();

    let tails = s_grid
        .iter()
        .map(|&s| {
            let hits: Vec<f64> =
                samples.iter().map(|&t| if t >= s { 1.0 } else { 0.0 }).collect();
            SampleStats::from_values(&hits)
        })
        .collect();
    let uncensored: Vec<f64> = drawn
        .iter()
        .filter(|&&(_, c)| !c)
        .map(|&(t, _)| t)
        .collect();
    Ok(TailReport {
        s_grid: s_grid.to_vec(),
        tails,
        time_stats: SampleStats::from_values(&uncensored),
        censored,
        samples,
        censored_flags,
    })
}

/// Monte Carlo estimate of the expected time spent in `set_c` before the
/// horizon, with the number of step-capped (censored) paths.
pub fn occupation_fraction(
    chain: &MarkovChain,
    start: usize,
    set_c: &[usize],
    horizon: f64,
    n_samples: usize,
    streams: StreamSpec,
) -> Result<(SampleStats, usize)> {
    let n = chain.n_states();
    if start >= n {
        return Err(Error::StateOutOfRange { index: start, n_states: n });
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let mut in_c = vec![false; n];
    for &s in set_c {
        if s >= n {
            return Err(Error::StateOutOfRange { index: s, n_states: n });
        }
        in_c[s] = true;
    }
    let drawn: Vec<(f64, bool)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i as u64);
            let mut t = 0.0;
            let mut cur = start;
            let mut occ = 0.0;
            for step in 0..=STEP_CAP {
                let h = chain.holding(cur);
                if h <= 0.0 {
                    if in_c[cur] {
                        occ += horizon - t;
                    }
                    return (occ, false);
                }
                if step == STEP_CAP {
                    return (occ, true);
                }
                let dt = rng.exp(h);
                let sojourn_end = (t + dt).min(horizon);
                if in_c[cur] {
                    occ += sojourn_end - t;
                }
                t += dt;
                if t >= horizon {
                    return (occ, false);
                }
                cur = next_state(chain, cur, rng.uniform());
            }
            unreachable!("loop always returns")
        })
        .collect();
    let values: Vec<f64> = drawn.iter().map(|&(v, _)| v).collect();
    let censored = drawn.iter().filter(|&&(_, c)| c).count();
    Ok((SampleStats::from_values(&values), censored))
}

/// Monte Carlo estimate of the discounted occupation integral
/// `E[int_0^inf e^{-lambda t} g(X_t) dt]`, the probabilistic form of the
/// resolvent applied to `g`.
///
/// Paths are truncated once the discount falls below 1e-12; absorbed paths
/// get their remaining integral added in closed form.
pub fn discounted_occupation(
    chain: &MarkovChain,
    start: usize,
    g: &[f64],
    lambda: f64,
    n_samples: usize,
    streams: StreamSpec,
) -> Result<(SampleStats, usize)> {
    let n = chain.n_states();
    if start >= n {
        return Err(Error::StateOutOfRange { index: start, n_states: n });
    }
    if g.len() != n {
        return Err(Error::InvalidInput(format!("g has {} entries, chain has {n} states", g.len())));
    }
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda { lambda });
    }
    let t_max = -(1e-12f64).ln() / lambda;
    let drawn: Vec<(f64, bool)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i as u64);
            let mut t = 0.0;
            let mut cur = start;
            let mut val = 0.0;
            for step in 0..=STEP_CAP {
                let h = chain.holding(cur);
                if h <= 0.0 {
                    val += g[cur] * (-lambda * t).exp() / lambda;
                    return (val, false);
                }
                if step == STEP_CAP {
                    return (val, true);
                }
                let dt = rng.exp(h);
                let t1 = t + dt;
                val += g[cur] * ((-lambda * t).exp() - (-lambda * t1).exp()) / lambda;
                t = t1;
                if t > t_max {
                    return (val, false);
                }
                cur = next_state(chain, cur, rng.uniform());
            }
            unreachable!("loop always returns")
        })
        .collect();
    let values: Vec<f64> = drawn.iter().map(|&(v, _)| v).collect();
    let censored = drawn.iter().filter(|&&(_, c)| c).count();
    Ok((SampleStats::from_values(&values), censored))
}

/// Exit statistics of the order process started inside one well.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderExitStats {
    pub start_label: usize,
    /// Arrivals per target label (the start label stays at zero).
    pub target_counts: Vec<usize>,
    /// Trace-time sojourns before the first arrival in another well,
    /// uncensored samples only.
    pub sojourn: SampleStats,
    pub fitted_rate: f64,
    /// Kolmogorov-Smirnov distance between the sojourn sample and the
    /// exponential law with the fitted rate.
    pub ks_statistic: f64,
    /// Asymptotic 1% acceptance: `ks_statistic < 1.63 / sqrt(count)`.
    pub ks_pass_1pct: bool,
    pub censored: usize,
    pub samples: Vec<f64>,
    /// Target label per sample; `usize::MAX` marks a censored sample.
    pub sample_targets: Vec<usize>,
}

/// KS distance of `sorted` against `1 - exp(-rate x)`.
fn ks_exponential(sorted: &[f64], rate: f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = 1.0 - (-rate * x).exp();
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Simulates the full chain from `start` until the trace path first arrives
/// in a well different from the start's, recording the arrival label and the
/// elapsed trace time (time in the transition region excised on the fly).
pub fn order_exit_statistics(
    chain: &MarkovChain,
    wells: &WellPartition,
    start: usize,
    n_samples: usize,
    streams: StreamSpec,
) -> Result<OrderExitStats> {
    let n = chain.n_states();
    if start >= n {
        return Err(Error::StateOutOfRange { index: start, n_states: n });
    }
    if wells.n_states() != n {
        return Err(Error::InvalidInput("wells and chain sizes disagree".into()));
    }
    let start_label = wells.label_of(start).ok_or(Error::StateOutsideWells { state: start })?;

    let drawn: Vec<(f64, usize)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i as u64);
            let mut cur = start;
            let mut trace_clock = 0.0;
            for _ in 0..STEP_CAP {
                let h = chain.holding(cur);
                if h <= 0.0 {
                    return (trace_clock, usize::MAX);
                }
                let dt = rng.exp(h);
                if wells.label_of(cur).is_some() {
                    trace_clock += dt;
                }
                cur = next_state(chain, cur, rng.uniform());
                match wells.label_of(cur) {
                    Some(l) if l != start_label => return (trace_clock, l),
                    _ => {}
                }
            }
            (trace_clock, usize::MAX)
        })
        .collect();

    let mut target_counts = vec![0usize; wells.n_labels()];
    let mut uncensored: Vec<f64> = Vec::with_capacity(n_samples);
    let mut censored = 0usize;
    for &(t, l) in &drawn {
        if l == usize::MAX {
            censored += 1;
        } else {
            target_counts[l] += 1;
            uncensored.push(t);
        }
    }
    let sojourn = SampleStats::from_values(&uncensored);
    let fitted_rate = if sojourn.mean > 0.0 { 1.0 / sojourn.mean } else { 0.0 };
    let mut sorted = uncensored.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let ks_statistic = if sorted.is_empty() { 1.0 } else { ks_exponential(&sorted, fitted_rate) };
    let ks_pass_1pct =
        !sorted.is_empty() && ks_statistic < 1.63 / (sorted.len() as f64).sqrt();
    Ok(OrderExitStats {
        start_label,
        target_counts,
        sojourn,
        fitted_rate,
        ks_statistic,
        ks_pass_1pct,
        censored,
        samples: drawn.iter().map(|&(t, _)| t).collect(),
        sample_targets: drawn.iter().map(|&(_, l)| l).collect(),
    })
}

/// Sample dump rows `sample_id,value,censored` (CRLF, RFC 4180).
pub fn samples_to_csv(values: &[f64], censored: &[bool]) -> String {
    let mut out = String::from("sample_id,value,censored\r\n");
    for (i, (&v, &c)) in values.iter().zip(censored).enumerate() {
        out.push_str(&format!("{i},{v},{}\r\n", if c { 1 } else { 0 }));
    }
    out
}

/// Fraction of total time a path spends in each masked state set; used by
/// ergodic-average checks.
pub fn path_occupation_fractions(path: &Path, masks: &[Vec<bool>]) -> Vec<f64> {
    masks
        .iter()
        .map(|m| path.occupation(m) / path.horizon.max(f64::MIN_POSITIVE))
        .collect()
}

/// Kahan-summed mean of a sample vector; fixed-order reduction used by the
/// deterministic aggregation paths.
pub fn ordered_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    kahan_sum(values.iter().copied()) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{mean_hitting_time, solve_resolvent, StartSpec};

    fn two_state() -> MarkovChain {
        MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    fn three_path() -> MarkovChain {
        MarkovChain::from_rates(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap()
    }

    #[test]
    fn identical_streams_reproduce() {
        let spec = StreamSpec::new(7, 0);
        let a: Vec<f64> = {
            let mut r = spec.stream(3);
            (0..10).map(|_| r.uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut r = spec.stream(3);
            (0..10).map(|_| r.uniform()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<f64> = {
            let mut r = spec.stream(4);
            (0..10).map(|_| r.uniform()).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn estimates_independent_of_thread_count() {
        let c = three_path();
        let spec = StreamSpec::new(11, 0);
        let wide = hitting_tail(&c, 0, &[2], &[1.0, 3.0], 500, spec).unwrap();
        let narrow = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| hitting_tail(&c, 0, &[2], &[1.0, 3.0], 500, spec).unwrap());
        assert_eq!(wide.samples, narrow.samples);
        assert_eq!(wide.time_stats.mean.to_bits(), narrow.time_stats.mean.to_bits());
    }

    #[test]
    fn single_state_path_has_no_jumps() {
        let c = MarkovChain::from_rates(1, &[]).unwrap();
        let mut rng = RngStream::new(0, 0);
        let p = sample_path(&c, 0, 5.0, &mut rng).unwrap();
        assert_eq!(p.n_jumps(), 0);
        assert!(p.absorbed);
    }

    #[test]
    fn jump_count_matches_poisson_rate() {
        let c = two_state();
        let spec = StreamSpec::new(1, 0);
        let horizon = 10.0;
        let n = 10_000;
        let jumps: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = spec.stream(i as u64);
                sample_path(&c, 0, horizon, &mut rng).unwrap().n_jumps() as f64
            })
            .collect();
        let stats = SampleStats::from_values(&jumps);
        assert!(
            (stats.mean - horizon).abs() < 3.0 * stats.std_error,
            "mean jumps {} vs {horizon}",
            stats.mean
        );
    }

    #[test]
    fn sojourn_fractions_match_stationary() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        let mu = c.stationary_distribution().unwrap();
        let spec = StreamSpec::new(2, 0);
        let n = 400;
        let fracs: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = spec.stream(i as u64);
                let p = sample_path(&c, 0, 200.0, &mut rng).unwrap();
                p.occupation(&[true, false]) / 200.0
            })
            .collect();
        let stats = SampleStats::from_values(&fracs);
        assert!(
            (stats.mean - mu.get(0)).abs() < 3.0 * stats.std_error,
            "fraction {} vs stationary {}",
            stats.mean,
            mu.get(0)
        );
    }

    #[test]
    fn hitting_tail_is_exponential_for_two_state() {
        let c = two_state();
        let spec = StreamSpec::new(3, 0);
        let rep = hitting_tail(&c, 0, &[1], &[0.5, 1.0, 2.0], 10_000, spec).unwrap();
        assert_eq!(rep.censored, 0);
        for (k, &s) in rep.s_grid.iter().enumerate() {
            let expect = (-s).exp();
            let got = &rep.tails[k];
            assert!(
                (got.mean - expect).abs() < 3.0 * got.std_error.max(1e-6),
                "tail at {s}: {} vs {expect}",
                got.mean
            );
        }
        let exact = mean_hitting_time(&c, &StartSpec::State(0), &[1]).unwrap();
        assert!((rep.time_stats.mean - exact).abs() < 3.0 * rep.time_stats.std_error);
    }

    #[test]
    fn hitting_from_target_is_zero() {
        let c = two_state();
        let rep = hitting_tail(&c, 1, &[1], &[0.5, 1.0], 100, StreamSpec::new(4, 0)).unwrap();
        for t in &rep.tails {
            assert_eq!(t.mean, 0.0);
        }
        assert_eq!(rep.time_stats.mean, 0.0);
    }

    #[test]
    fn hitting_mean_matches_exact_solve_on_three_path() {
        let c = three_path();
        let rep = hitting_tail(&c, 0, &[2], &[1.0], 10_000, StreamSpec::new(5, 0)).unwrap();
        let exact = mean_hitting_time(&c, &StartSpec::State(0), &[2]).unwrap();
        assert!(
            (rep.time_stats.mean - exact).abs() < 3.0 * rep.time_stats.std_error,
            "mc {} vs exact {exact}",
            rep.time_stats.mean
        );
    }

    #[test]
    fn absorbed_paths_are_censored_not_dropped() {
        // From 0 the chain hits 2 or gets absorbed at 1, evens odds.
        let c = MarkovChain::from_rates(3, &[(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
        let rep = hitting_tail(&c, 0, &[2], &[0.1], 2000, StreamSpec::new(6, 0)).unwrap();
        assert!(rep.censored > 800 && rep.censored < 1200, "censored {}", rep.censored);
        assert_eq!(rep.samples.len(), 2000);
    }

    #[test]
    fn occupation_of_full_space_is_horizon() {
        let c = two_state();
        let (stats, censored) =
            occupation_fraction(&c, 0, &[0, 1], 3.0, 200, StreamSpec::new(7, 0)).unwrap();
        assert_eq!(censored, 0);
        assert!((stats.mean - 3.0).abs() < 1e-12);
        assert_eq!(stats.variance, 0.0);
    }

    #[test]
    fn occupation_of_empty_set_is_zero() {
        let c = two_state();
        let (stats, _) = occupation_fraction(&c, 0, &[], 3.0, 200, StreamSpec::new(8, 0)).unwrap();
        assert_eq!(stats.mean, 0.0);
    }

    #[test]
    fn discounted_occupation_matches_resolvent() {
        let c = three_path();
        let g = vec![0.0, 1.0, 0.0];
        let sol = solve_resolvent(&c, 1.0, &g).unwrap();
        let exact = sol.values()[0];
        let (stats, censored) =
            discounted_occupation(&c, 0, &g, 1.0, 20_000, StreamSpec::new(9, 0)).unwrap();
        assert_eq!(censored, 0);
        assert!(
            (stats.mean - exact).abs() < 3.0 * stats.std_error,
            "mc {} vs resolvent {exact}",
            stats.mean
        );
    }

    #[test]
    fn order_exit_two_singleton_wells_is_exponential() {
        let c = two_state();
        let wells = WellPartition::new(2, vec![vec![0], vec![1]]).unwrap();
        let stats = order_exit_statistics(&c, &wells, 0, 5_000, StreamSpec::new(10, 0)).unwrap();
        assert_eq!(stats.censored, 0);
        assert_eq!(stats.target_counts[1], 5_000);
        assert!(stats.ks_pass_1pct, "KS {} too large", stats.ks_statistic);
        assert!((stats.fitted_rate - 1.0).abs() < 3.0 / (5000f64).sqrt());
    }

    #[test]
    fn order_exit_rate_matches_trace_generator() {
        let c = three_path();
        let wells = WellPartition::new(3, vec![vec![0], vec![2]]).unwrap();
        let stats = order_exit_statistics(&c, &wells, 0, 10_000, StreamSpec::new(11, 0)).unwrap();
        // Trace rate out of 0 is 1/2; relative SE of a fitted rate is 1/sqrt(n).
        let se = 0.5 / (10_000f64).sqrt();
        assert!(
            (stats.fitted_rate - 0.5).abs() < 3.0 * se,
            "fitted {} vs 1/2",
            stats.fitted_rate
        );
        assert!(stats.ks_pass_1pct, "trace sojourn should look exponential");
    }

    #[test]
    fn csv_dump_format() {
        let s = samples_to_csv(&[1.5, 2.0], &[false, true]);
        assert_eq!(s, "sample_id,value,censored\r\n0,1.5,0\r\n1,2,1\r\n");
    }
}
