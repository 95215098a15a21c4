//! Sparse linear-system plumbing behind the exact computations.
//!
//! Systems up to [`DENSE_CAP`] states go through a dense LU factorization with
//! iterative refinement; larger ones fall back to Jacobi-preconditioned
//! BiCGSTAB on the sparse matrix. Every solve is verified a posteriori: the
//! componentwise backward error must not exceed [`SOLVE_TOL`], otherwise the
//! solve is reported as failed rather than returning a silently bad vector.

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::numeric::inf_norm;
use nalgebra::{DMatrix, DVector};

/// Largest dimension handled by the dense factorization path.
pub const DENSE_CAP: usize = 4096;

/// Relative backward-error contract for every linear solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Square sparse matrix in compressed-row layout.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            debug_assert!(i < n && j < n);
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                row_ptr[i + 1] += 1;
                col_idx.push(j);
                vals.push(v);
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col_idx, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.vals[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.vals[k];
            }
        }
        m
    }
}

enum Backend {
    Dense(nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    /// Jacobi-preconditioned BiCGSTAB; holds the inverted diagonal.
    Iterative(Vec<f64>),
}

/// A factored (or preconditioned) linear system `A x = b`.
///
/// Immutable after construction, so concurrent solves against one factorization
/// are safe; solves against distinct systems run fully in parallel.
pub struct Solver {
    a: CsrMatrix,
    a_norm: f64,
    backend: Backend,
}

impl Solver {
    pub fn new(a: CsrMatrix) -> Result<Solver> {
        let a_norm = a.inf_norm();
        let backend = if a.dim() <= DENSE_CAP {
            Backend::Dense(nalgebra::linalg::LU::new(a.to_dense()))
        } else {
            let diag = a.diagonal();
            let inv = diag
                .iter()
                .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
                .collect();
            Backend::Iterative(inv)
        };
        Ok(Solver { a, a_norm, backend })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    fn backward_error(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut r = vec![0.0; self.a.dim()];
        self.a.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let denom = self.a_norm * inf_norm(x) + inf_norm(b);
        if denom <= 0.0 {
            inf_norm(&r)
        } else {
            inf_norm(&r) / denom
        }
    }

    /// Solves `A x = b`, verifying the backward error against [`SOLVE_TOL`].
    pub fn solve(&self, b: &[f64], context: &str) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.a.dim());
        let mut x = match &self.backend {
            Backend::Dense(lu) => {
                let rhs = DVector::from_column_slice(b);
                let mut x = lu.solve(&rhs).ok_or_else(|| Error::SolveFailed {
                    context: format!("{context}: matrix is singular"),
                    residual: f64::INFINITY,
                    tolerance: SOLVE_TOL,
                })?;
                // Up to two refinement sweeps; dense LU on these
                // diagonally-dominant systems rarely needs more than one.
                for _ in 0..2 {
                    if self.backward_error(x.as_slice(), b) <= 1e-14 {
                        break;
                    }
                    let mut r = vec![0.0; b.len()];
                    self.a.apply(x.as_slice(), &mut r);
                    for (ri, bi) in r.iter_mut().zip(b) {
                        *ri = bi - *ri;
                    }
                    if let Some(dx) = lu.solve(&DVector::from_column_slice(&r)) {
                        x += dx;
                    } else {
                        break;
                    }
                }
                x.as_slice().to_vec()
            }
            Backend::Iterative(diag_inv) => self.bicgstab(b, diag_inv, context)?,
        };
        let be = self.backward_error(&x, b);
        if be > SOLVE_TOL {
            // One last refinement attempt through the same backend.
            let mut r = vec![0.0; b.len()];
            self.a.apply(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            if let Ok(dx) = self.solve_raw(&r) {
                for (xi, di) in x.iter_mut().zip(&dx) {
                    *xi += di;
                }
            }
            let be = self.backward_error(&x, b);
            if be > SOLVE_TOL {
                return Err(Error::SolveFailed {
                    context: context.to_string(),
                    residual: be,
                    tolerance: SOLVE_TOL,
                });
            }
        }
        Ok(x)
    }

    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Dense(lu) => lu
                .solve(&DVector::from_column_slice(b))
                .map(|v| v.as_slice().to_vec())
                .ok_or_else(|| Error::SolveFailed {
                    context: "refinement".into(),
                    residual: f64::INFINITY,
                    tolerance: SOLVE_TOL,
                }),
            Backend::Iterative(diag_inv) => self.bicgstab(b, diag_inv, "refinement"),
        }
    }

    fn bicgstab(&self, b: &[f64], diag_inv: &[f64], context: &str) -> Result<Vec<f64>> {
        let n = b.len();
        let b_norm = inf_norm(b);
        if b_norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let target = 1e-13 * b_norm;
        let max_iter = 40 * n + 1000;

        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let r_hat = r.clone();
        let mut rho = 1.0f64;
        let mut alpha = 1.0f64;
        let mut omega = 1.0f64;
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut ph = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut sh = vec![0.0; n];
        let mut t = vec![0.0; n];

        let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

        for _ in 0..max_iter {
            let rho_next = dot(&r_hat, &r);
            if rho_next.abs() < 1e-300 {
                break;
            }
            let beta = (rho_next / rho) * (alpha / omega);
            rho = rho_next;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            for i in 0..n {
                ph[i] = diag_inv[i] * p[i];
            }
            self.a.apply(&ph, &mut v);
            let denom = dot(&r_hat, &v);
            if denom.abs() < 1e-300 {
                break;
            }
            alpha = rho / denom;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if inf_norm(&s) <= target {
                for i in 0..n {
                    x[i] += alpha * ph[i];
                }
                return Ok(x);
            }
            for i in 0..n {
                sh[i] = diag_inv[i] * s[i];
            }
            self.a.apply(&sh, &mut t);
            let tt = dot(&t, &t);
            if tt <= 0.0 {
                break;
            }
            omega = dot(&t, &s) / tt;
            for i in 0..n {
                x[i] += alpha * ph[i] + omega * sh[i];
                r[i] = s[i] - omega * t[i];
            }
            if inf_norm(&r) <= target {
                return Ok(x);
            }
            if omega.abs() < 1e-300 {
                break;
            }
        }
        // Return whatever we have; the caller's backward-error gate decides.
        if self.backward_error(&x, b) <= SOLVE_TOL {
            Ok(x)
        } else {
            Err(Error::SolveFailed {
                context: format!("{context}: iterative solver stalled"),
                residual: self.backward_error(&x, b),
                tolerance: SOLVE_TOL,
            })
        }
    }
}

/// The subsystem `(lambda I - L) restricted to a kept set of states`.
///
/// This is the workhorse for equilibrium potentials (kept set = complement of
/// the boundary sets, lambda = 0), mean hitting times, occupation times, and
/// the complement-block elimination behind trace generators. The matrix is
/// factored once and reused across right-hand sides.
pub struct RestrictedSystem {
    /// Kept states, ascending global indices; position = local index.
    pub kept: Vec<usize>,
    /// Global index -> local index, `usize::MAX` when dropped.
    pub local_of: Vec<usize>,
    solver: Solver,
}

impl RestrictedSystem {
    pub fn new(chain: &MarkovChain, kept: &[usize], lambda: f64) -> Result<RestrictedSystem> {
        let n = chain.n_states();
        let mut kept: Vec<usize> = kept.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if kept.is_empty() {
            return Err(Error::BadSets { context: "restricted system over an empty set".into() });
        }
        if *kept.last().unwrap() >= n {
            return Err(Error::StateOutOfRange { index: *kept.last().unwrap(), n_states: n });
        }
        let mut local_of = vec![usize::MAX; n];
        for (loc, &g) in kept.iter().enumerate() {
            local_of[g] = loc;
        }
        let m = kept.len();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(m * 4);
        for (loc, &g) in kept.iter().enumerate() {
            triplets.push((loc, loc, lambda + chain.holding(g)));
            for (j, r) in chain.row(g) {
                let lj = local_of[j];
                if lj != usize::MAX {
                    triplets.push((loc, lj, -r));
                }
            }
        }
        let solver = Solver::new(CsrMatrix::from_triplets(m, triplets))?;
        Ok(RestrictedSystem { kept, local_of, solver })
    }

    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    /// Solves against a local right-hand side (indexed like `kept`).
    pub fn solve(&self, rhs: &[f64], context: &str) -> Result<Vec<f64>> {
        self.solver.solve(rhs, context)
    }

    /// Scatters a local solution into a full-length vector, with `fill`
    /// elsewhere.
    pub fn scatter(&self, local: &[f64], n: usize, fill: f64) -> Vec<f64> {
        let mut full = vec![fill; n];
        for (loc, &g) in self.kept.iter().enumerate() {
            full[g] = local[loc];
        }
        full
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_apply_and_norm() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)]);
        let mut y = vec![0.0; 2];
        a.apply(&[1.0, 0.0], &mut y);
        assert_eq!(y, vec![2.0, -1.0]);
        assert_eq!(a.inf_norm(), 3.0);
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = CsrMatrix::from_triplets(1, vec![(0, 0, 1.5), (0, 0, 0.5)]);
        let mut y = vec![0.0];
        a.apply(&[2.0], &mut y);
        assert_eq!(y, vec![4.0]);
    }

    #[test]
    fn dense_solve_two_by_two() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)]);
        let s = Solver::new(a).unwrap();
        let x = s.solve(&[1.0, 0.0], "test").unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_dense_system_is_reported() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let s = Solver::new(a).unwrap();
        assert!(matches!(s.solve(&[1.0, 0.0], "test"), Err(Error::SolveFailed { .. })));
    }

    #[test]
    fn iterative_path_matches_dense_on_a_laplacian() {
        // Diagonally dominant tridiagonal system, solved both ways.
        let n = 600;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 2.5));
            if i > 0 {
                trip.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                trip.push((i, i + 1, -1.0));
            }
        }
        let b: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let dense = Solver::new(CsrMatrix::from_triplets(n, trip.clone())).unwrap();
        let xd = dense.solve(&b, "dense").unwrap();

        // Force the iterative backend through a solver built the same way but
        // exercised via bicgstab directly.
        let a = CsrMatrix::from_triplets(n, trip);
        let diag_inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let s = Solver { a_norm: a.inf_norm(), a, backend: Backend::Iterative(diag_inv.clone()) };
        let xi = s.solve(&b, "iterative").unwrap();
        assert!(crate::numeric::max_abs_diff(&xd, &xi) < 1e-8);
    }

    #[test]
    fn restricted_system_solves_harmonic_interior() {
        // 4-path with unit rates; keep the interior {1, 2} at lambda = 0.
        let chain = MarkovChain::from_rates(
            4,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
        )
        .unwrap();
        let rs = RestrictedSystem::new(&chain, &[1, 2], 0.0).unwrap();
        // Boundary data h(0) = 1, h(3) = 0: rhs is the rate into state 0.
        let h = rs.solve(&[1.0, 0.0], "interior").unwrap();
        assert!((h[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((h[1] - 1.0 / 3.0).abs() < 1e-12);
        let full = rs.scatter(&h, 4, -1.0);
        assert_eq!(full[0], -1.0);
        assert!((full[1] - 2.0 / 3.0).abs() < 1e-12);
    }
}
