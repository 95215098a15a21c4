//! Numeric evaluation of the metastability conditions (tagged R, D, V, M,
//! H0, H1) and extraction of the reduced generator on the label set.
//!
//! Each check emits a `ConditionReport`: a named bundle of scalar diagnostics
//! plus the parameters that produced them. Single-instance checks report
//! diagnostics; trend verdicts across system sizes belong to the experiment
//! layer.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{MarkovChain, ProbMeasure};
use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, ln_factorial, Kahan};
use crate::potential::{capacity, mean_jump_rate, occupation_profile, solve_resolvent};
use crate::sim::{hitting_tail, StreamSpec};
use crate::solve::DENSE_CAP;
use crate::trace::WellPartition;

/// State-count ceiling for exact TV distances (distribution vectors kept in
/// full).
pub const TV_STATE_CAP: usize = 200_000;

/// State-count ceiling when the TV/mixing computation maximizes over all
/// starting states.
pub const TV_WORST_CAP: usize = 4096;

/// Diagnostics bundle for one condition check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Condition tag: R, D, V, M, H0, or H1.
    pub condition: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub params: BTreeMap<String, f64>,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
}

impl ConditionReport {
    fn new(condition: &str, n: usize) -> Self {
        ConditionReport {
            condition: condition.to_string(),
            n,
            params: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            verdict: None,
        }
    }

    /// Overrides the size field (experiments report the model size rather
    /// than the raw state count).
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("condition report serialization")
    }
}

/// Resolvent-oscillation check: lifts the label function `g` to the wells
/// (zero on the transition region), solves `(lambda - L) F = G`, and reports
/// the oscillation of `F` within each well.
///
/// Returns the report, the full solution `F`, and the measure-weighted well
/// averages `f`.
pub fn check_condition_r(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    wells: &WellPartition,
    lambda: f64,
    g: &[f64],
) -> Result<(ConditionReport, Vec<f64>, Vec<f64>)> {
    let n = chain.n_states();
    let k = wells.n_labels();
    if wells.n_states() != n || mu.len() != n {
        return Err(Error::InvalidInput("wells, measure, and chain sizes disagree".into()));
    }
    if g.len() != k {
        return Err(Error::InvalidInput(format!(
            "label function has {} entries, partition has {k} labels",
            g.len()
        )));
    }
    let mut lifted = vec![0.0; n];
    for (s, v) in lifted.iter_mut().enumerate() {
        if let Some(x) = wells.label_of(s) {
            *v = g[x];
        }
    }
    let sol = solve_resolvent(chain, lambda, &lifted)?;
    let f_state = sol.values().to_vec();

    let mut report = ConditionReport::new("R", n);
    report.params.insert("lambda".into(), lambda);
    let mut f_label = vec![0.0; k];
    let mut osc_max = 0.0f64;
    for x in 0..k {
        let well = wells.well(x);
        let mass = mu.mass(well);
        if mass <= 0.0 {
            return Err(Error::ZeroMass { state: well[0] });
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut acc = Kahan::new();
        for &s in well {
            lo = lo.min(f_state[s]);
            hi = hi.max(f_state[s]);
            acc.add(mu.get(s) * f_state[s]);
        }
        let osc = hi - lo;
        osc_max = osc_max.max(osc);
        f_label[x] = acc.value() / mass;
        report.diagnostics.insert(format!("osc_well{x}"), osc);
        report.diagnostics.insert(format!("f_well{x}"), f_label[x]);
    }
    report.diagnostics.insert("osc_max".into(), osc_max);
    report.diagnostics.insert("residual".into(), sol.residual);
    Ok((report, f_state, f_label))
}

/// Generator on the label set, extracted from resolvent well averages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedGenerator {
    pub k: usize,
    /// Row-major off-diagonal rates; the diagonal entries are zero.
    pub rates: Vec<f64>,
    /// Total negative off-diagonal mass clamped away; vanishes as the wells
    /// sharpen.
    pub negativity_mass: f64,
    /// Largest raw row-sum magnitude before the diagonal was adjusted.
    pub rowsum_residual: f64,
}

impl ReducedGenerator {
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.rates[x * self.k + y]
    }

    /// Full generator matrix, row-major, diagonal set to minus the row sum.
    pub fn generator_matrix(&self) -> Vec<f64> {
        let k = self.k;
        let mut m = self.rates.clone();
        for x in 0..k {
            let row_sum = kahan_sum((0..k).filter(|&y| y != x).map(|y| self.rates[x * k + y]));
            m[x * k + x] = -row_sum;
        }
        m
    }

    pub fn to_chain(&self) -> Result<MarkovChain> {
        let mut entries = Vec::new();
        for x in 0..self.k {
            for y in 0..self.k {
                if x != y && self.rate(x, y) > 0.0 {
                    entries.push((x, y, self.rate(x, y)));
                }
            }
        }
        MarkovChain::from_rates(self.k, &entries)
    }
}

/// Builds the reduced generator `lambda I - M^{-1}` where column `z` of `M`
/// holds the well averages of the resolvent of the indicator of label `z`.
///
/// Row sums are forced to zero through the diagonal; the negative
/// off-diagonal mass that had to be clamped is reported, not hidden.
pub fn extract_reduced_generator(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    wells: &WellPartition,
    lambda: f64,
) -> Result<ReducedGenerator> {
    let k = wells.n_labels();
    let mut m = DMatrix::<f64>::zeros(k, k);
    for z in 0..k {
        let mut g = vec![0.0; k];
        g[z] = 1.0;
        let (_, _, f_label) = check_condition_r(chain, mu, wells, lambda, &g)?;
        for x in 0..k {
            m[(x, z)] = f_label[x];
        }
    }
    let m_inv = m.try_inverse().ok_or(Error::SingularReduction { lambda })?;

    let mut rates = vec![0.0; k * k];
    let mut negativity = Kahan::new();
    let mut rowsum_residual = 0.0f64;
    for x in 0..k {
        let mut raw_row = Kahan::new();
        for y in 0..k {
            let raw = if x == y { lambda - m_inv[(x, y)] } else { -m_inv[(x, y)] };
            raw_row.add(raw);
            if x != y {
                if raw < 0.0 {
                    negativity.add(-raw);
                } else {
                    rates[x * k + y] = raw;
                }
            }
        }
        rowsum_residual = rowsum_residual.max(raw_row.value().abs());
    }
    Ok(ReducedGenerator {
        k,
        rates,
        negativity_mass: negativity.value(),
        rowsum_residual,
    })
}

/// Transition-region dwell check: `u = (lambda - L)^{-1} chi_Delta`, reported
/// as per-well maxima together with the finite-horizon bound `e^{lambda t} u`
/// at `t = 1/lambda`.
pub fn check_condition_d(
    chain: &MarkovChain,
    wells: &WellPartition,
    lambda: f64,
) -> Result<ConditionReport> {
    let n = chain.n_states();
    if wells.n_states() != n {
        return Err(Error::InvalidInput("wells and chain sizes disagree".into()));
    }
    let mut chi_delta = vec![0.0; n];
    for &s in wells.delta() {
        chi_delta[s] = 1.0;
    }
    let sol = solve_resolvent(chain, lambda, &chi_delta)?;
    let u = sol.values();

    let mut report = ConditionReport::new("D", n);
    report.params.insert("lambda".into(), lambda);
    report.params.insert("horizon".into(), 1.0 / lambda);
    report.diagnostics.insert("delta_size".into(), wells.delta().len() as f64);
    let mut u_max = 0.0f64;
    for x in 0..wells.n_labels() {
        let well_max = wells.well(x).iter().map(|&s| u[s]).fold(0.0f64, f64::max);
        u_max = u_max.max(well_max);
        report.diagnostics.insert(format!("u_max_well{x}"), well_max);
        // e^{lambda t} u at t = 1/lambda.
        report
            .diagnostics
            .insert(format!("u_horizon_well{x}"), std::f64::consts::E * well_max);
    }
    report.diagnostics.insert("u_max".into(), u_max);
    report.diagnostics.insert("residual".into(), sol.residual);
    Ok(report)
}

/// Anchor-hitting check: for each well, the worst starting state by exact
/// mean hitting time of the anchor, its simulated tail on the time grid, and
/// the Markov bound from the exact mean.
///
/// Verdict "pass" when every simulated tail stays below its Markov bound
/// plus three standard errors.
pub fn check_condition_v(
    chain: &MarkovChain,
    wells: &WellPartition,
    anchors: &[usize],
    s_grid: &[f64],
    n_samples: usize,
    streams: StreamSpec,
) -> Result<ConditionReport> {
    let n = chain.n_states();
    let k = wells.n_labels();
    if anchors.len() != k {
        return Err(Error::InvalidInput(format!(
            "{} anchors for {k} wells",
            anchors.len()
        )));
    }
    for (x, &a) in anchors.iter().enumerate() {
        if wells.label_of(a) != Some(x) {
            return Err(Error::AnchorOutsideWell { state: a, label: x });
        }
    }
    if s_grid.is_empty() || s_grid.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidInput("time grid must be positive".into()));
    }
    let all: Vec<usize> = (0..n).collect();

    let mut report = ConditionReport::new("V", n);
    report.params.insert("samples".into(), n_samples as f64);
    report.params.insert("seed".into(), streams.seed as f64);
    for (j, &s) in s_grid.iter().enumerate() {
        report.params.insert(format!("s{j}"), s);
    }

    let mut pass = true;
    for x in 0..k {
        let anchor = anchors[x];
        // One solve gives the exact mean hitting time from every state.
        let mean_times = occupation_profile(chain, &[anchor], &all)?;
        let (worst, mean_max) = wells
            .well(x)
            .iter()
            .map(|&s| (s, mean_times[s]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("wells are nonempty");
        report.diagnostics.insert(format!("mean_max_well{x}"), mean_max);
        report.diagnostics.insert(format!("worst_state_well{x}"), worst as f64);

        let per_well = StreamSpec::new(streams.seed, streams.base + (x * n_samples) as u64);
        let tail = hitting_tail(chain, worst, &[anchor], s_grid, n_samples, per_well)?;
        for (j, &s) in s_grid.iter().enumerate() {
            let est = &tail.tails[j];
            let bound = (mean_max / s).min(1.0);
            report.diagnostics.insert(format!("tail_well{x}_s{j}"), est.mean);
            report.diagnostics.insert(format!("tail_se_well{x}_s{j}"), est.std_error);
            report.diagnostics.insert(format!("markov_well{x}_s{j}"), bound);
            if est.mean > bound + 3.0 * est.std_error {
                pass = false;
            }
        }
        report
            .diagnostics
            .insert(format!("censored_well{x}"), tail.censored as f64);
    }
    report.verdict = Some(if pass { "pass" } else { "fail" }.to_string());
    Ok(report)
}

/// Restriction of the chain to `v` with outgoing jumps suppressed; returns
/// the local chain and the ascending state mapping.
pub fn reflected_chain(chain: &MarkovChain, v: &[usize]) -> Result<(MarkovChain, Vec<usize>)> {
    let n = chain.n_states();
    let mut v: Vec<usize> = v.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.is_empty() {
        return Err(Error::BadSets { context: "reflection set is empty".into() });
    }
    if *v.last().unwrap() >= n {
        return Err(Error::StateOutOfRange { index: *v.last().unwrap(), n_states: n });
    }
    let mut local_of = vec![usize::MAX; n];
    for (loc, &s) in v.iter().enumerate() {
        local_of[s] = loc;
    }
    let mut entries = Vec::new();
    for &s in &v {
        for (j, r) in chain.row(s) {
            if local_of[j] != usize::MAX {
                entries.push((local_of[s], local_of[j], r));
            }
        }
    }
    let local = MarkovChain::from_rates(v.len(), &entries)?;
    if v.len() > 1 && !local.is_irreducible() {
        return Err(Error::NotIrreducible {
            context: "reflected chain is disconnected".into(),
        });
    }
    Ok((local, v))
}

/// Starting point for a total-variation curve.
#[derive(Clone, Debug)]
pub enum TvStart {
    State(usize),
    Dist(ProbMeasure),
    /// Maximize over all starting states.
    Worst,
}

/// Distribution at time `t` started from `v0`, by uniformization: Poisson
/// mixture of powers of `P = I + L/rate_cap`, window wide enough for an
/// error below 1e-8.
fn propagate(chain: &MarkovChain, v0: &[f64], t: f64) -> Vec<f64> {
    let n = chain.n_states();
    let rate_cap = chain.max_holding();
    let a = t * rate_cap;
    if a <= 0.0 {
        return v0.to_vec();
    }
    let sigma = a.sqrt();
    let lo = (a - 10.0 * sigma - 40.0).floor().max(0.0) as u64;
    let hi = (a + 10.0 * sigma + 40.0).ceil() as u64;

    // Poisson weights on the window, normalized in place: renormalization
    // error equals the discarded tail mass, far below the 1e-8 budget.
    let ln_a = a.ln();
    let lnw: Vec<f64> = (lo..=hi)
        .map(|k| -a + k as f64 * ln_a - ln_factorial(k))
        .collect();
    let top = lnw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = lnw.iter().map(|&l| (l - top).exp()).collect();
    let total = kahan_sum(w.iter().copied());
    for wi in &mut w {
        *wi /= total;
    }

    let mut v = v0.to_vec();
    let mut acc = vec![0.0; n];
    let mut lv = vec![0.0; n];
    for k in 0..=hi {
        if k >= lo {
            let wk = w[(k - lo) as usize];
            if wk > 0.0 {
                for i in 0..n {
                    acc[i] += wk * v[i];
                }
            }
        }
        if k < hi {
            // v <- v P as a row vector; clamp the rounding dust so v stays a
            // distribution over long products.
            chain.apply_generator_transpose(&v, &mut lv);
            for i in 0..n {
                v[i] = (v[i] + lv[i] / rate_cap).max(0.0);
            }
        }
    }
    acc
}

fn tv_between(p: &[f64], q: &[f64]) -> f64 {
    0.5 * kahan_sum(p.iter().zip(q).map(|(a, b)| (a - b).abs()))
}

fn tv_from_dist(chain: &MarkovChain, pi: &ProbMeasure, v0: &[f64], t: f64) -> f64 {
    let at_t = propagate(chain, v0, t);
    tv_between(&at_t, pi.as_slice())
}

fn point_mass(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn tv_worst(chain: &MarkovChain, pi: &ProbMeasure, t: f64) -> f64 {
    let n = chain.n_states();
    (0..n)
        .into_par_iter()
        .map(|s| tv_from_dist(chain, pi, &point_mass(n, s), t))
        .reduce(|| 0.0, f64::max)
}

/// Exact total-variation distance to `pi` at each grid time.
pub fn tv_curve(
    chain: &MarkovChain,
    pi: &ProbMeasure,
    t_grid: &[f64],
    start: &TvStart,
) -> Result<Vec<(f64, f64)>> {
    let n = chain.n_states();
    if pi.len() != n {
        return Err(Error::InvalidInput("measure and chain sizes disagree".into()));
    }
    if !chain.is_irreducible() {
        return Err(Error::NotIrreducible { context: "TV curve needs an irreducible chain".into() });
    }
    if n > TV_STATE_CAP {
        return Err(Error::TooLarge { n, cap: TV_STATE_CAP });
    }
    if t_grid.iter().any(|&t| t < 0.0 || !t.is_finite()) {
        return Err(Error::InvalidInput("TV grid times must be nonnegative".into()));
    }
    match start {
        TvStart::State(s) => {
            if *s >= n {
                return Err(Error::StateOutOfRange { index: *s, n_states: n });
            }
            let v0 = point_mass(n, *s);
            Ok(t_grid
                .par_iter()
                .map(|&t| (t, tv_from_dist(chain, pi, &v0, t)))
                .collect())
        }
        TvStart::Dist(nu) => {
            if nu.len() != n {
                return Err(Error::InvalidInput("start distribution size disagrees".into()));
            }
            Ok(t_grid
                .par_iter()
                .map(|&t| (t, tv_from_dist(chain, pi, nu.as_slice(), t)))
                .collect())
        }
        TvStart::Worst => {
            if n > TV_WORST_CAP {
                return Err(Error::TooLarge { n, cap: TV_WORST_CAP });
            }
            Ok(t_grid.iter().map(|&t| (t, tv_worst(chain, pi, t))).collect())
        }
    }
}

/// Smallest time with worst-case TV at or below `epsilon`, bracketed by
/// doubling and bisected to 1% relative width; returns the upper end.
///
/// Returns 0 when the worst start is already within `epsilon` of
/// stationarity.
pub fn mixing_time(chain: &MarkovChain, pi: &ProbMeasure, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let n = chain.n_states();
    if pi.len() != n {
        return Err(Error::InvalidInput("measure and chain sizes disagree".into()));
    }
    if n == 1 {
        return Ok(0.0);
    }
    if !chain.is_irreducible() {
        return Err(Error::NotIrreducible { context: "mixing time needs irreducibility".into() });
    }
    if n > TV_WORST_CAP {
        return Err(Error::TooLarge { n, cap: TV_WORST_CAP });
    }
    let t0 = 1.0 / chain.generator_inf_norm();
    let mut t_lo;
    let mut t_hi;
    if tv_worst(chain, pi, t0) <= epsilon {
        if tv_worst(chain, pi, 0.0) <= epsilon {
            return Ok(0.0);
        }
        t_lo = 0.0;
        t_hi = t0;
    } else {
        t_lo = t0;
        t_hi = t0;
        let mut bracketed = false;
        for _ in 0..200 {
            t_lo = t_hi;
            t_hi *= 2.0;
            if tv_worst(chain, pi, t_hi) <= epsilon {
                bracketed = true;
                break;
            }
        }
        if !bracketed {
            return Err(Error::SolveFailed {
                context: "mixing-time bracket search".into(),
                residual: f64::INFINITY,
                tolerance: epsilon,
            });
        }
    }
    let mut iterations = 0;
    while t_hi - t_lo > 0.01 * t_hi && iterations < 200 {
        let mid = 0.5 * (t_lo + t_hi);
        if tv_worst(chain, pi, mid) <= epsilon {
            t_hi = mid;
        } else {
            t_lo = mid;
        }
        iterations += 1;
    }
    Ok(t_hi)
}

/// Spectral gap of a chain reversible with respect to `pi`: second-smallest
/// eigenvalue of `-L` under the symmetrizing conjugation by `pi^{1/2}`.
pub fn spectral_gap(chain: &MarkovChain, pi: &ProbMeasure) -> Result<f64> {
    let n = chain.n_states();
    if pi.len() != n {
        return Err(Error::InvalidInput("measure and chain sizes disagree".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("spectral gap needs at least two states".into()));
    }
    if n > DENSE_CAP {
        return Err(Error::TooLarge { n, cap: DENSE_CAP });
    }
    let (reversible, violation) = chain.check_reversible(pi);
    if !reversible {
        return Err(Error::NonReversible { violation });
    }
    if !chain.is_irreducible() {
        return Err(Error::NotIrreducible { context: "spectral gap needs irreducibility".into() });
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = chain.holding(i);
        for (j, r) in chain.row(i) {
            m[(i, j)] = -(pi.get(i) / pi.get(j)).sqrt() * r;
        }
    }
    // Detailed balance makes this symmetric up to rounding; make it exact.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let eig = m.symmetric_eigenvalues();
    let mut vals: Vec<f64> = eig.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    Ok(vals[1])
}

/// Mean jump rates between all label pairs plus, per well, the worst ratio of
/// the well's escape capacity to a point-to-point capacity from its anchor.
///
/// Singleton wells have no second state to compare against; their ratio is
/// zero by convention.
pub fn check_h0_h1(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    wells: &WellPartition,
    anchors: &[usize],
) -> Result<ConditionReport> {
    let k = wells.n_labels();
    if anchors.len() != k {
        return Err(Error::InvalidInput(format!("{} anchors for {k} wells", anchors.len())));
    }
    for (x, &a) in anchors.iter().enumerate() {
        if wells.label_of(a) != Some(x) {
            return Err(Error::AnchorOutsideWell { state: a, label: x });
        }
    }
    let mut report = ConditionReport::new("H1", chain.n_states());
    for x in 0..k {
        for y in 0..k {
            if x != y {
                let r = mean_jump_rate(chain, mu, wells, x, y)?;
                report.diagnostics.insert(format!("r_{x}_{y}"), r);
            }
        }
    }
    let mut h1_max = 0.0f64;
    for x in 0..k {
        let well = wells.well(x);
        let ratio = if well.len() == 1 {
            0.0
        } else {
            let cap_escape = capacity(chain, mu, well, &wells.other_wells(x))?.capacity;
            let anchor = anchors[x];
            let caps: Vec<f64> = well
                .par_iter()
                .filter(|&&eta| eta != anchor)
                .map(|&eta| capacity(chain, mu, &[anchor], &[eta]).map(|r| r.capacity))
                .collect::<Result<Vec<f64>>>()?;
            let min_pair = caps.iter().copied().fold(f64::INFINITY, f64::min);
            cap_escape / min_pair
        };
        h1_max = h1_max.max(ratio);
        report.diagnostics.insert(format!("h1_well{x}"), ratio);
    }
    report.diagnostics.insert("h1_max".into(), h1_max);
    Ok(report)
}

/// Cross-check of the two reduced descriptions: rates from the resolvent
/// extraction against the one-step mean jump rates, reported per pair with
/// the worst absolute and relative gaps.
pub fn check_condition_m(
    chain: &MarkovChain,
    mu: &ProbMeasure,
    wells: &WellPartition,
    lambda: f64,
) -> Result<ConditionReport> {
    let k = wells.n_labels();
    let reduced = extract_reduced_generator(chain, mu, wells, lambda)?;
    let mut report = ConditionReport::new("M", chain.n_states());
    report.params.insert("lambda".into(), lambda);
    let mut abs_max = 0.0f64;
    let mut rel_max = 0.0f64;
    for x in 0..k {
        for y in 0..k {
            if x == y {
                continue;
            }
            let lhat = reduced.rate(x, y);
            let mjr = mean_jump_rate(chain, mu, wells, x, y)?;
            report.diagnostics.insert(format!("lhat_{x}_{y}"), lhat);
            report.diagnostics.insert(format!("mjr_{x}_{y}"), mjr);
            let gap = (lhat - mjr).abs();
            abs_max = abs_max.max(gap);
            if mjr.abs() > 0.0 {
                rel_max = rel_max.max(gap / mjr.abs());
            }
        }
    }
    report.diagnostics.insert("absdiff_max".into(), abs_max);
    report.diagnostics.insert("reldiff_max".into(), rel_max);
    report.diagnostics.insert("negativity_mass".into(), reduced.negativity_mass);
    report.diagnostics.insert("rowsum_residual".into(), reduced.rowsum_residual);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::max_abs_diff;

    fn three_path() -> MarkovChain {
        MarkovChain::from_rates(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap()
    }

    #[test]
    fn condition_r_constant_g_no_transition_region() {
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        let (rep, f, fl) = check_condition_r(&c, &mu, &wells, 2.0, &[3.0, 3.0]).unwrap();
        for v in &f {
            assert!((v - 1.5).abs() < 1e-11);
        }
        assert!(rep.diagnostics["osc_max"] < 1e-11);
        assert!((fl[0] - 1.5).abs() < 1e-11 && (fl[1] - 1.5).abs() < 1e-11);
    }

    #[test]
    fn condition_r_singleton_wells_zero_oscillation() {
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(3, vec![vec![0], vec![1], vec![2]]).unwrap();
        let (rep, f, fl) = check_condition_r(&c, &mu, &wells, 1.0, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(rep.diagnostics["osc_max"], 0.0);
        // Well averages over singletons are the resolvent itself.
        assert_eq!(fl, vec![f[0], f[1], f[2]]);
        // Dense 3x3 oracle: (I - L)^{-1} e_0 = (5/8, 2/8, 1/8).
        assert!((f[0] - 0.625).abs() < 1e-12);
        assert!((f[1] - 0.25).abs() < 1e-12);
        assert!((f[2] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn reduced_generator_reproduces_input_when_wells_are_states() {
        let c = MarkovChain::from_rates(
            3,
            &[(0, 1, 1.5), (1, 0, 0.5), (1, 2, 2.0), (2, 1, 1.0), (2, 0, 0.25), (0, 2, 0.75)],
        )
        .unwrap();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(3, vec![vec![0], vec![1], vec![2]]).unwrap();
        for lambda in [0.5, 1.0, 2.0] {
            let red = extract_reduced_generator(&c, &mu, &wells, lambda).unwrap();
            for x in 0..3 {
                for y in 0..3 {
                    if x != y {
                        assert!(
                            (red.rate(x, y) - c.rate(x, y)).abs() < 1e-10,
                            "lambda {lambda}: rate ({x},{y})"
                        );
                    }
                }
            }
            assert!(red.negativity_mass < 1e-10);
            assert!(red.rowsum_residual < 1e-10);
        }
    }

    #[test]
    fn reduced_generator_on_toy_follows_exact_law() {
        // Two endpoint wells with the middle state as transition region: the
        // extracted rate is 1/(lambda + 2), which approaches the trace rate
        // 1/2 as lambda -> 0.
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(3, vec![vec![0], vec![2]]).unwrap();
        for lambda in [1.0, 0.5, 0.01] {
            let red = extract_reduced_generator(&c, &mu, &wells, lambda).unwrap();
            let expect = 1.0 / (lambda + 2.0);
            assert!(
                (red.rate(0, 1) - expect).abs() < 1e-10,
                "lambda {lambda}: {} vs {expect}",
                red.rate(0, 1)
            );
            assert!((red.rate(1, 0) - expect).abs() < 1e-10);
            // Raw row sums are -lambda/(lambda+2) before the forcing step.
            assert!((red.rowsum_residual - lambda / (lambda + 2.0)).abs() < 1e-10);
        }
        let red = extract_reduced_generator(&c, &mu, &wells, 1e-4).unwrap();
        assert!((red.rate(0, 1) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn condition_d_dense_oracle() {
        let c = three_path();
        let wells = WellPartition::new(3, vec![vec![0], vec![2]]).unwrap();
        let rep = check_condition_d(&c, &wells, 1.0).unwrap();
        // u = (I - L)^{-1} chi_{1} = (1/4, 1/2, 1/4).
        assert!((rep.diagnostics["u_max_well0"] - 0.25).abs() < 1e-12);
        assert!((rep.diagnostics["u_max_well1"] - 0.25).abs() < 1e-12);
        assert!((rep.diagnostics["u_max"] - 0.25).abs() < 1e-12);
        assert!(
            (rep.diagnostics["u_horizon_well0"] - std::f64::consts::E * 0.25).abs() < 1e-12
        );
        assert_eq!(rep.diagnostics["delta_size"], 1.0);
    }

    #[test]
    fn condition_d_identity_with_well_indicator_resolvent() {
        let c = three_path();
        let lambda = 0.7;
        let chi_e = vec![1.0, 0.0, 1.0];
        let f = solve_resolvent(&c, lambda, &chi_e).unwrap();
        let chi_d = vec![0.0, 1.0, 0.0];
        let u = solve_resolvent(&c, lambda, &chi_d).unwrap();
        let implied: Vec<f64> =
            f.values().iter().map(|&fi| (1.0 - lambda * fi) / lambda).collect();
        assert!(max_abs_diff(u.values(), &implied) < 1e-11);
    }

    #[test]
    fn condition_d_empty_transition_region() {
        let c = three_path();
        let wells = WellPartition::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        let rep = check_condition_d(&c, &wells, 1.0).unwrap();
        assert_eq!(rep.diagnostics["u_max"], 0.0);
    }

    #[test]
    fn condition_v_tail_under_markov_bound() {
        let c = MarkovChain::from_rates(
            4,
            &[(0, 1, 1.0), (1, 0, 2.0), (1, 2, 1.0), (2, 1, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
        )
        .unwrap();
        let wells = WellPartition::new(4, vec![vec![0, 1], vec![3]]).unwrap();
        let rep = check_condition_v(
            &c,
            &wells,
            &[0, 3],
            &[0.5, 2.0],
            4000,
            StreamSpec::new(21, 0),
        )
        .unwrap();
        assert_eq!(rep.verdict.as_deref(), Some("pass"));
        // Anchor well {3} is a singleton, so its worst start is the anchor.
        assert_eq!(rep.diagnostics["mean_max_well1"], 0.0);
        assert_eq!(rep.diagnostics["tail_well1_s0"], 0.0);
    }

    #[test]
    fn condition_v_rejects_foreign_anchor() {
        let c = three_path();
        let wells = WellPartition::new(3, vec![vec![0], vec![2]]).unwrap();
        let err = check_condition_v(&c, &wells, &[0, 1], &[1.0], 10, StreamSpec::new(0, 0));
        assert!(matches!(err, Err(Error::AnchorOutsideWell { state: 1, label: 1 })));
    }

    #[test]
    fn reflection_on_full_space_is_identity() {
        let c = three_path();
        let (r, map) = reflected_chain(&c, &[0, 1, 2]).unwrap();
        assert_eq!(map, vec![0, 1, 2]);
        for (i, j, v) in c.entries() {
            assert_eq!(r.rate(i, j), v);
        }
    }

    #[test]
    fn reflection_drops_outgoing_edges() {
        let c = three_path();
        let (r, map) = reflected_chain(&c, &[0, 1]).unwrap();
        assert_eq!(map, vec![0, 1]);
        assert_eq!(r.rate(0, 1), 1.0);
        assert_eq!(r.rate(1, 0), 1.0);
        assert_eq!(r.holding(1), 1.0);
    }

    #[test]
    fn reflection_of_reversible_chain_keeps_conditioned_measure() {
        let c = MarkovChain::from_rates(
            4,
            &[(0, 1, 1.0), (1, 0, 3.0), (1, 2, 2.0), (2, 1, 1.0), (2, 3, 0.5), (3, 2, 2.0)],
        )
        .unwrap();
        let mu = c.stationary_distribution().unwrap();
        let v = vec![0, 1, 2];
        let (r, map) = reflected_chain(&c, &v).unwrap();
        let nu = r.stationary_distribution().unwrap();
        let cond = mu.conditioned_on(&v).unwrap();
        for (loc, &g) in map.iter().enumerate() {
            assert!((nu.get(loc) - cond.get(g)).abs() < 1e-10);
        }
    }

    #[test]
    fn reflection_rejects_disconnected_set() {
        let c = MarkovChain::from_rates(
            4,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
        )
        .unwrap();
        assert!(matches!(
            reflected_chain(&c, &[0, 3]),
            Err(Error::NotIrreducible { .. })
        ));
    }

    #[test]
    fn tv_at_time_zero_is_complement_mass() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 2.0)]).unwrap();
        let pi = c.stationary_distribution().unwrap();
        let curve = tv_curve(&c, &pi, &[0.0], &TvStart::State(0)).unwrap();
        assert!((curve[0].1 - (1.0 - pi.get(0))).abs() < 1e-12);
    }

    #[test]
    fn tv_from_stationary_start_stays_zero() {
        let c = three_path();
        let pi = c.stationary_distribution().unwrap();
        let curve =
            tv_curve(&c, &pi, &[0.0, 0.5, 2.0], &TvStart::Dist(pi.clone())).unwrap();
        for &(_, d) in &curve {
            assert!(d < 1e-9, "stationary start drifted to {d}");
        }
    }

    #[test]
    fn tv_two_state_closed_form() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let pi = c.stationary_distribution().unwrap();
        for t in [0.3, 1.0, 2.5] {
            let curve = tv_curve(&c, &pi, &[t], &TvStart::State(0)).unwrap();
            let exact = 0.5 * (-2.0 * t).exp();
            assert!(
                (curve[0].1 - exact).abs() < 1e-8,
                "t={t}: {} vs {exact}",
                curve[0].1
            );
        }
    }

    #[test]
    fn worst_tv_non_increasing_and_doubling_bound() {
        let c = MarkovChain::from_rates(
            4,
            &[(0, 1, 1.0), (1, 0, 2.0), (1, 2, 0.5), (2, 1, 1.0), (2, 3, 2.0), (3, 2, 1.0)],
        )
        .unwrap();
        let pi = c.stationary_distribution().unwrap();
        let grid = [0.1, 0.2, 0.4, 0.8, 1.6];
        let curve = tv_curve(&c, &pi, &grid, &TvStart::Worst).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-9), "worst TV increased: {w:?}");
            assert!(w[1].1 <= 2.0 * w[0].1 + 1e-12);
        }
    }

    #[test]
    fn tv_rejects_negative_times() {
        let c = three_path();
        let pi = c.stationary_distribution().unwrap();
        assert!(tv_curve(&c, &pi, &[-1.0], &TvStart::State(0)).is_err());
    }

    #[test]
    fn mixing_time_two_state_quarter() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let pi = c.stationary_distribution().unwrap();
        let t = mixing_time(&c, &pi, 0.25).unwrap();
        let exact = 0.5 * std::f64::consts::LN_2;
        assert!(
            (t - exact).abs() <= 0.011 * exact,
            "mixing {t} vs ln(2)/2 = {exact}"
        );
    }

    #[test]
    fn mixing_time_loose_epsilon_is_zero() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let pi = c.stationary_distribution().unwrap();
        // Worst-case TV at time zero is already 1/2, below 0.9.
        let t = mixing_time(&c, &pi, 0.9).unwrap();
        assert_eq!(t, 0.0);
        assert!(mixing_time(&c, &pi, 1.0).is_err());
    }

    #[test]
    fn spectral_gap_two_state_and_complete_graph() {
        let c2 = MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let pi2 = c2.stationary_distribution().unwrap();
        assert!((spectral_gap(&c2, &pi2).unwrap() - 2.0).abs() < 1e-10);

        let n = 5;
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    entries.push((i, j, 1.0));
                }
            }
        }
        let kn = MarkovChain::from_rates(n, &entries).unwrap();
        let pin = kn.stationary_distribution().unwrap();
        assert!((spectral_gap(&kn, &pin).unwrap() - n as f64).abs() < 1e-9);
    }

    #[test]
    fn spectral_gap_rejects_nonreversible() {
        let c = MarkovChain::from_rates(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let pi = c.stationary_distribution().unwrap();
        assert!(matches!(spectral_gap(&c, &pi), Err(Error::NonReversible { .. })));
    }

    #[test]
    fn spectral_gap_matches_tv_decay_rate() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.5), (1, 0, 0.5)]).unwrap();
        let pi = c.stationary_distribution().unwrap();
        let gap = spectral_gap(&c, &pi).unwrap();
        // Fit the decay rate from two tail points of the TV curve.
        let (t1, t2) = (2.0, 3.0);
        let curve = tv_curve(&c, &pi, &[t1, t2], &TvStart::State(0)).unwrap();
        let fitted = (curve[0].1 / curve[1].1).ln() / (t2 - t1);
        assert!(
            (fitted - gap).abs() < 0.05 * gap,
            "fitted decay {fitted} vs gap {gap}"
        );
    }

    #[test]
    fn h0_h1_three_path_singletons() {
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(3, vec![vec![0], vec![2]]).unwrap();
        let rep = check_h0_h1(&c, &mu, &wells, &[0, 2]).unwrap();
        assert!((rep.diagnostics["r_0_1"] - 0.5).abs() < 1e-12);
        assert!((rep.diagnostics["r_1_0"] - 0.5).abs() < 1e-12);
        assert_eq!(rep.diagnostics["h1_well0"], 0.0);
        assert_eq!(rep.diagnostics["h1_max"], 0.0);
    }

    #[test]
    fn h1_ratio_on_four_path() {
        let c = MarkovChain::from_rates(
            4,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
        )
        .unwrap();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(4, vec![vec![0, 1], vec![3]]).unwrap();
        let rep = check_h0_h1(&c, &mu, &wells, &[0, 3]).unwrap();
        // cap({0,1},{3}) = 1/8 and cap({0},{1}) = 1/4 under the uniform
        // measure, so the ratio is 1/2.
        assert!((rep.diagnostics["h1_well0"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn condition_m_agrees_at_small_lambda() {
        let c = three_path();
        let mu = c.stationary_distribution().unwrap();
        let wells = WellPartition::new(3, vec![vec![0], vec![2]]).unwrap();
        let rep = check_condition_m(&c, &mu, &wells, 1e-5).unwrap();
        assert!(rep.diagnostics["reldiff_max"] < 1e-4);
        let rep1 = check_condition_m(&c, &mu, &wells, 1.0).unwrap();
        assert!((rep1.diagnostics["lhat_0_1"] - 1.0 / 3.0).abs() < 1e-10);
        assert!((rep1.diagnostics["mjr_0_1"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_expected_shape() {
        let mut rep = ConditionReport::new("D", 3);
        rep.params.insert("lambda".into(), 1.0);
        rep.diagnostics.insert("u_max".into(), 0.25);
        let json = rep.to_json();
        assert!(json.contains("\"condition\":\"D\""));
        assert!(json.contains("\"N\":3"));
        assert!(json.contains("\"u_max\":0.25"));
        assert!(!json.contains("verdict"));
        rep.verdict = Some("pass".into());
        assert!(rep.to_json().contains("\"verdict\":\"pass\""));
    }
}
