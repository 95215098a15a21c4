//! Finite-state continuous-time Markov chains and probability measures.
//!
//! A chain is stored as the sparse matrix of off-diagonal jump rates in
//! compressed-row layout. The generator acts on functions as
//! `(Lf)(i) = sum_j R(i,j) [f(j) - f(i)]`, so diagonal entries are implied by
//! the per-state holding rates and row sums of the full generator matrix are
//! zero by construction.

use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, Kahan};

/// Relative tolerance used for stationarity residuals and detailed-balance checks.
pub const REL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct MarkovChain {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    rates: Vec<f64>,
    holding: Vec<f64>,
    irreducible: bool,
}

impl MarkovChain {
    /// Builds a chain from `(from, to, rate)` entries.
    ///
    /// Rejects negative, non-finite, diagonal, duplicate, and out-of-range
    /// entries. Zero rates are accepted and dropped after validation, so they
    /// do not create edges in the transition graph.
    pub fn from_rates(n_states: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::InvalidInput("a chain needs at least one state".into()));
        }
        let mut list: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for &(i, j, r) in entries {
            if i >= n_states {
                return Err(Error::StateOutOfRange { index: i, n_states });
            }
            if j >= n_states {
                return Err(Error::StateOutOfRange { index: j, n_states });
            }
            if i == j {
                return Err(Error::DiagonalRate { state: i });
            }
            if !r.is_finite() {
                return Err(Error::NonFiniteRate { from: i, to: j });
            }
            if r < 0.0 {
                return Err(Error::NegativeRate { from: i, to: j, value: r });
            }
            list.push((i, j, r));
        }
        list.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in list.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::DuplicateRate { from: w[0].0, to: w[0].1 });
            }
        }
        list.retain(|&(_, _, r)| r > 0.0);

        let mut row_ptr = vec![0usize; n_states + 1];
        for &(i, _, _) in &list {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n_states {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx: Vec<usize> = list.iter().map(|e| e.1).collect();
        let rates: Vec<f64> = list.iter().map(|e| e.2).collect();
        let holding: Vec<f64> = (0..n_states)
            .map(|i| kahan_sum(rates[row_ptr[i]..row_ptr[i + 1]].iter().copied()))
            .collect();

        let mut chain = MarkovChain {
            n: n_states,
            row_ptr,
            col_idx,
            rates,
            holding,
            irreducible: false,
        };
        chain.irreducible = chain.check_strongly_connected();
        Ok(chain)
    }

    fn check_strongly_connected(&self) -> bool {
        if self.n == 1 {
            return true;
        }
        // Forward and backward reachability from state 0.
        let forward = self.reach_forward(&[0]);
        if forward.iter().any(|&v| !v) {
            return false;
        }
        let backward = self.reach_backward(&[0]);
        backward.iter().all(|&v| v)
    }

    /// States reachable from `sources` following positive-rate edges.
    pub fn reach_forward(&self, sources: &[usize]) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut stack: Vec<usize> = sources.to_vec();
        for &s in sources {
            seen[s] = true;
        }
        while let Some(i) = stack.pop() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// States from which `targets` is reachable following positive-rate edges.
    pub fn reach_backward(&self, targets: &[usize]) -> Vec<bool> {
        // Build the reversed adjacency once; cheap relative to any solve.
        let mut rev = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                rev[self.col_idx[k]].push(i);
            }
        }
        let mut seen = vec![false; self.n];
        let mut stack: Vec<usize> = targets.to_vec();
        for &t in targets {
            seen[t] = true;
        }
        while let Some(j) = stack.pop() {
            for &i in &rev[j] {
                if !seen[i] {
                    seen[i] = true;
                    stack.push(i);
                }
            }
        }
        seen
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rates.len()
    }

    pub fn is_irreducible(&self) -> bool {
        self.irreducible
    }

    pub fn holding(&self, i: usize) -> f64 {
        self.holding[i]
    }

    pub fn holding_rates(&self) -> &[f64] {
        &self.holding
    }

    pub fn max_holding(&self) -> f64 {
        self.holding.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    /// Infinity norm of the full generator matrix (diagonal included).
    pub fn generator_inf_norm(&self) -> f64 {
        2.0 * self.max_holding()
    }

    /// Off-diagonal entries of row `i` as `(target, rate)` pairs, ascending target.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.rates[k]))
    }

    /// Jump rate `R(i, j)`; zero when no edge is stored.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.rates[lo + k],
            Err(_) => 0.0,
        }
    }

    /// All stored entries as `(from, to, rate)`, row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, r)| (i, j, r)))
    }

    /// `out = L f`, the generator applied to a function.
    pub fn apply_generator(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.n);
        assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let mut acc = Kahan::new();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc.add(self.rates[k] * (f[self.col_idx[k]] - f[i]));
            }
            out[i] = acc.value();
        }
    }

    /// `out = L^T f`; the transpose action used for distribution evolution.
    pub fn apply_generator_transpose(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.n);
        assert_eq!(out.len(), self.n);
        for j in 0..self.n {
            out[j] = -self.holding[j] * f[j];
        }
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.col_idx[k]] += self.rates[k] * f[i];
            }
        }
    }

    /// The unique stationary distribution of an irreducible chain.
    ///
    /// Solves the transposed balance equations with one row replaced by the
    /// normalization constraint, then polishes with one refinement step. The
    /// residual `||mu^T L||_inf` is verified against `REL_TOL` times the
    /// generator norm.
    pub fn stationary_distribution(&self) -> Result<ProbMeasure> {
        if !self.irreducible {
            return Err(Error::NotIrreducible {
                context: "stationary distribution is not unique".into(),
            });
        }
        if self.n == 1 {
            return ProbMeasure::new(vec![1.0]);
        }
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + 2 * self.n);
        // Row 0 of the system is the normalization sum(mu) = 1; the remaining
        // rows are columns 1..n of the balance equations mu^T L = 0.
        for j in 0..self.n {
            triplets.push((0, j, 1.0));
        }
        for i in 1..self.n {
            triplets.push((i, i, -self.holding[i]));
        }
        for (i, j, r) in self.entries() {
            if j != 0 {
                triplets.push((j, i, r));
            }
        }
        let a = crate::solve::CsrMatrix::from_triplets(self.n, triplets);
        let solver = crate::solve::Solver::new(a)?;
        let mut b = vec![0.0; self.n];
        b[0] = 1.0;
        let mut mu = solver.solve(&b, "stationary distribution")?;

        let floor = -1e-12 * mu.iter().cloned().fold(0.0, f64::max);
        for m in mu.iter_mut() {
            if *m < 0.0 {
                if *m < floor {
                    return Err(Error::SolveFailed {
                        context: "stationary distribution has a negative mass".into(),
                        residual: -*m,
                        tolerance: -floor,
                    });
                }
                *m = 0.0;
            }
        }
        let total = kahan_sum(mu.iter().copied());
        for m in mu.iter_mut() {
            *m /= total;
        }
        let mut resid = vec![0.0; self.n];
        self.apply_generator_transpose(&mu, &mut resid);
        let r = crate::numeric::inf_norm(&resid);
        let tol = REL_TOL * self.generator_inf_norm().max(1.0);
        if r > tol {
            return Err(Error::SolveFailed {
                context: "stationary distribution residual".into(),
                residual: r,
                tolerance: tol,
            });
        }
        ProbMeasure::new(mu)
    }

    /// Time reversal with respect to `mu`: rates `R'(i,j) = mu(j) R(j,i) / mu(i)`.
    ///
    /// The holding rates of the reversal coincide with the original ones
    /// exactly when `mu` is stationary; that is verified here, so this method
    /// doubles as a stationarity check.
    pub fn adjoint(&self, mu: &ProbMeasure) -> Result<MarkovChain> {
        if mu.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "measure has {} entries, chain has {} states",
                mu.len(),
                self.n
            )));
        }
        for i in 0..self.n {
            if mu.get(i) <= 0.0 {
                return Err(Error::ZeroMass { state: i });
            }
        }
        let entries: Vec<(usize, usize, f64)> = self
            .entries()
            .map(|(j, i, r)| (i, j, mu.get(j) * r / mu.get(i)))
            .collect();
        let adj = MarkovChain::from_rates(self.n, &entries)?;
        let scale = self.max_holding().max(1e-300);
        for i in 0..self.n {
            let gap = (adj.holding(i) - self.holding(i)).abs();
            if gap > 1e-8 * scale {
                return Err(Error::NotStationary {
                    detail: format!(
                        "holding rate changes at state {i} under time reversal (gap {gap:.3e}); \
                         the supplied measure is not stationary"
                    ),
                });
            }
        }
        Ok(adj)
    }

    /// The quadratic form `<f, -Lf>_mu`.
    pub fn dirichlet_form(&self, mu: &ProbMeasure, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.n);
        let mut lf = vec![0.0; self.n];
        self.apply_generator(f, &mut lf);
        -kahan_sum((0..self.n).map(|i| mu.get(i) * f[i] * lf[i]))
    }

    /// The summation-by-parts form `(1/2) sum mu(i) R(i,j) [f(j) - f(i)]^2`.
    ///
    /// Agrees with [`dirichlet_form`](Self::dirichlet_form) whenever `mu` is
    /// stationary, and is nonnegative by construction.
    pub fn dirichlet_form_by_parts(&self, mu: &ProbMeasure, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.n);
        let mut acc = Kahan::new();
        for (i, j, r) in self.entries() {
            let d = f[j] - f[i];
            acc.add(mu.get(i) * r * d * d);
        }
        0.5 * acc.value()
    }

    /// Detailed-balance check: `(holds, max flux violation)`.
    pub fn check_reversible(&self, mu: &ProbMeasure) -> (bool, f64) {
        assert_eq!(mu.len(), self.n);
        let mut max_violation: f64 = 0.0;
        let mut max_flux: f64 = 0.0;
        for (i, j, r) in self.entries() {
            let forward = mu.get(i) * r;
            let backward = mu.get(j) * self.rate(j, i);
            max_violation = max_violation.max((forward - backward).abs());
            max_flux = max_flux.max(forward);
        }
        (max_violation <= REL_TOL * max_flux.max(1e-300), max_violation)
    }

    /// Line-oriented text export: `states <n>` then ascending `rate <i> <j> <v>` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("states {}\n", self.n));
        for (i, j, r) in self.entries() {
            out.push_str(&format!("rate {i} {j} {r}\n"));
        }
        out
    }

    /// Parses the format written by [`to_text`](Self::to_text).
    ///
    /// Blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<MarkovChain> {
        let mut n: Option<usize> = None;
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let mut tok = s.split_whitespace();
            match tok.next() {
                Some("states") => {
                    if n.is_some() {
                        return Err(Error::Parse { line, message: "repeated states header".into() });
                    }
                    let v = tok
                        .next()
                        .ok_or_else(|| Error::Parse { line, message: "states needs a count".into() })?;
                    n = Some(v.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad state count {v:?}"),
                    })?);
                }
                Some("rate") => {
                    if n.is_none() {
                        return Err(Error::Parse {
                            line,
                            message: "rate line before states header".into(),
                        });
                    }
                    let parts: Vec<&str> = tok.collect();
                    if parts.len() != 3 {
                        return Err(Error::Parse {
                            line,
                            message: "rate lines are `rate <i> <j> <value>`".into(),
                        });
                    }
                    let i: usize = parts[0].parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad state index {:?}", parts[0]),
                    })?;
                    let j: usize = parts[1].parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad state index {:?}", parts[1]),
                    })?;
                    let r: f64 = parts[2].parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad rate value {:?}", parts[2]),
                    })?;
                    entries.push((i, j, r));
                }
                Some(other) => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown directive {other:?}"),
                    });
                }
                None => unreachable!(),
            }
        }
        let n = n.ok_or_else(|| Error::Parse { line: 0, message: "missing states header".into() })?;
        MarkovChain::from_rates(n, &entries)
    }
}

/// A probability vector over the states of a chain.
#[derive(Clone, Debug)]
pub struct ProbMeasure {
    w: Vec<f64>,
}

impl ProbMeasure {
    /// Accepts an already-normalized vector; entries must be nonnegative and
    /// sum to 1 within 1e-12.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        for (i, &x) in w.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::ZeroMass { state: i });
            }
        }
        let total = kahan_sum(w.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized { total });
        }
        Ok(ProbMeasure { w })
    }

    /// Normalizes a vector of nonnegative weights with positive total mass.
    pub fn from_weights(mut w: Vec<f64>) -> Result<Self> {
        for (i, &x) in w.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::ZeroMass { state: i });
            }
        }
        let total = kahan_sum(w.iter().copied());
        if total <= 0.0 {
            return Err(Error::NotNormalized { total });
        }
        for x in w.iter_mut() {
            *x /= total;
        }
        ProbMeasure::new(w)
    }

    pub fn uniform(n: usize) -> Self {
        ProbMeasure { w: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.w[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// Total mass of a set of states.
    pub fn mass(&self, set: &[usize]) -> f64 {
        kahan_sum(set.iter().map(|&i| self.w[i]))
    }

    /// Expectation of a function.
    pub fn expectation(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.w.len());
        kahan_sum(self.w.iter().zip(f).map(|(&m, &v)| m * v))
    }

    /// Restriction to `set`, renormalized; the conditional measure.
    pub fn conditioned_on(&self, set: &[usize]) -> Result<ProbMeasure> {
        let mut w = vec![0.0; self.w.len()];
        for &i in set {
            w[i] = self.w[i];
        }
        ProbMeasure::from_weights(w)
    }

    /// Text export as `<index> <value>` lines, ascending.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, &v) in self.w.iter().enumerate() {
            out.push_str(&format!("{i} {v}\n"));
        }
        out
    }

    /// Parses `<index> <value>` lines over `n` states; missing indices are zero mass.
    pub fn from_text(text: &str, n: usize) -> Result<ProbMeasure> {
        let mut w = vec![0.0; n];
        let mut seen = vec![false; n];
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = s.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::Parse {
                    line,
                    message: "measure lines are `<index> <value>`".into(),
                });
            }
            let i: usize = parts[0].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad state index {:?}", parts[0]),
            })?;
            if i >= n {
                return Err(Error::Parse {
                    line,
                    message: format!("state index {i} out of range for {n} states"),
                });
            }
            if seen[i] {
                return Err(Error::Parse { line, message: format!("duplicate entry for state {i}") });
            }
            seen[i] = true;
            w[i] = parts[1].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad mass value {:?}", parts[1]),
            })?;
        }
        ProbMeasure::new(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric_two_state() -> MarkovChain {
        MarkovChain::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    #[test]
    fn two_state_build() {
        let c = symmetric_two_state();
        assert_eq!(c.holding(0), 1.0);
        assert_eq!(c.holding(1), 1.0);
        assert!(c.is_irreducible());
    }

    #[test]
    fn absorbing_state_is_not_irreducible() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.0)]).unwrap();
        assert!(!c.is_irreducible());
    }

    #[test]
    fn three_state_path_holding() {
        let c = MarkovChain::from_rates(
            3,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
        )
        .unwrap();
        assert_eq!(c.holding(0), 1.0);
        assert_eq!(c.holding(1), 2.0);
        assert_eq!(c.holding(2), 1.0);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(matches!(
            MarkovChain::from_rates(2, &[(0, 1, -1.0)]),
            Err(Error::NegativeRate { .. })
        ));
        assert!(matches!(
            MarkovChain::from_rates(2, &[(0, 0, 1.0)]),
            Err(Error::DiagonalRate { .. })
        ));
        assert!(matches!(
            MarkovChain::from_rates(2, &[(0, 1, 1.0), (0, 1, 2.0)]),
            Err(Error::DuplicateRate { .. })
        ));
        assert!(matches!(
            MarkovChain::from_rates(2, &[(0, 3, 1.0)]),
            Err(Error::StateOutOfRange { .. })
        ));
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let c = MarkovChain::from_rates(
            4,
            &[(0, 1, 0.3), (1, 0, 2.0), (1, 2, 0.7), (2, 3, 1.1), (3, 0, 0.4), (2, 0, 0.2)],
        )
        .unwrap();
        // Row sum of the full generator is holding(i) applied to the constant 1.
        let ones = vec![1.0; 4];
        let mut out = vec![0.0; 4];
        c.apply_generator(&ones, &mut out);
        for v in out {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn stationary_symmetric_two_state() {
        let mu = symmetric_two_state().stationary_distribution().unwrap();
        assert!((mu.get(0) - 0.5).abs() < 1e-14);
        assert!((mu.get(1) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn stationary_requires_irreducible() {
        let c = MarkovChain::from_rates(2, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(c.stationary_distribution(), Err(Error::NotIrreducible { .. })));
    }

    #[test]
    fn adjoint_of_reversible_is_identity() {
        let c = MarkovChain::from_rates(
            3,
            &[(0, 1, 1.0), (1, 0, 2.0), (1, 2, 1.0), (2, 1, 0.5)],
        )
        .unwrap();
        let mu = c.stationary_distribution().unwrap();
        let (rev, _) = c.check_reversible(&mu);
        assert!(rev, "birth-death chains are reversible");
        let adj = c.adjoint(&mu).unwrap();
        for (i, j, r) in c.entries() {
            assert!((adj.rate(i, j) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_three_cycle_swaps_rates() {
        let c = MarkovChain::from_rates(
            3,
            &[(0, 1, 2.0), (1, 2, 2.0), (2, 0, 2.0), (1, 0, 1.0), (2, 1, 1.0), (0, 2, 1.0)],
        )
        .unwrap();
        let mu = ProbMeasure::uniform(3);
        let adj = c.adjoint(&mu).unwrap();
        assert!((adj.rate(0, 1) - 1.0).abs() < 1e-14);
        assert!((adj.rate(1, 0) - 2.0).abs() < 1e-14);
        // Holding rates are preserved by time reversal.
        for i in 0..3 {
            assert!((adj.holding(i) - c.holding(i)).abs() < 1e-12);
        }
        let (rev, _) = c.check_reversible(&mu);
        assert!(!rev);
    }

    #[test]
    fn adjoint_rejects_non_stationary_measure() {
        let c = MarkovChain::from_rates(
            3,
            &[(0, 1, 2.0), (1, 2, 2.0), (2, 0, 2.0), (1, 0, 1.0), (2, 1, 1.0), (0, 2, 1.0)],
        )
        .unwrap();
        let skew = ProbMeasure::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert!(matches!(c.adjoint(&skew), Err(Error::NotStationary { .. })));
    }

    #[test]
    fn dirichlet_form_examples() {
        let c = symmetric_two_state();
        let mu = ProbMeasure::uniform(2);
        assert_eq!(c.dirichlet_form(&mu, &[3.0, 3.0]), 0.0);
        let d = c.dirichlet_form(&mu, &[1.0, 0.0]);
        assert!((d - 0.5).abs() < 1e-14);
        assert!((c.dirichlet_form_by_parts(&mu, &[1.0, 0.0]) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn text_round_trip() {
        let c = MarkovChain::from_rates(
            3,
            &[(0, 1, 0.25), (1, 0, 1.0), (1, 2, 3.5), (2, 0, 0.125)],
        )
        .unwrap();
        let text = c.to_text();
        let back = MarkovChain::from_text(&text).unwrap();
        assert_eq!(back.n_states(), 3);
        for (i, j, r) in c.entries() {
            assert_eq!(back.rate(i, j), r);
        }
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn text_parse_errors_carry_line_numbers() {
        let err = MarkovChain::from_text("states 2\nrate 0 1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn measure_round_trip_and_validation() {
        let mu = ProbMeasure::new(vec![0.25, 0.5, 0.25]).unwrap();
        let text = mu.to_text();
        let back = ProbMeasure::from_text(&text, 3).unwrap();
        assert_eq!(back.as_slice(), mu.as_slice());
        assert!(matches!(
            ProbMeasure::new(vec![0.5, 0.4]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(matches!(
            ProbMeasure::new(vec![1.5, -0.5]),
            Err(Error::ZeroMass { .. })
        ));
    }

    #[test]
    fn conditioned_measure_restricts_support() {
        let mu = ProbMeasure::new(vec![0.25, 0.5, 0.25]).unwrap();
        let cond = mu.conditioned_on(&[0, 1]).unwrap();
        assert!((cond.get(0) - 1.0 / 3.0).abs() < 1e-14);
        assert!((cond.get(1) - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(cond.get(2), 0.0);
    }
}
