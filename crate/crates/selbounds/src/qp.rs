//! Exact convex quadratic programming by active-set enumeration.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x - f' x
//!     subject to  G x <= h
//! ```
//!
//! for a positive semidefinite `H` and a handful of variables. Every subset of
//! constraints is treated as a set of equalities, the equality-constrained
//! minimizer (minimum norm when not unique) is computed in closed form, and
//! the best feasible candidate wins. Branches whose equality system is
//! inconsistent, or whose added row is linearly dependent on the active rows,
//! are pruned; for the problem sizes in this crate (at most a dozen variables)
//! the search is exhaustive and therefore exact.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Tolerance for constraint activity and feasibility.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Outcome of a QP solve.
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Objective `1/2 x'Hx - f'x` at the solution.
    pub objective: f64,
    /// Indices of constraints with `|G_i x - h_i| <= ACTIVE_TOL`.
    pub active: Vec<usize>,
    /// True when the unconstrained minimizer violates some constraint, i.e.
    /// the constraints changed the answer.
    pub binding: bool,
}

/// Quadratic program in the form described in the module docs.
#[derive(Clone, Debug)]
pub struct Qp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub hvec: DVector<f64>,
}

impl Qp {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) - self.f.dot(x)
    }

    fn feasible(&self, x: &DVector<f64>) -> bool {
        if self.g.nrows() == 0 {
            return true;
        }
        let r = &self.g * x - &self.hvec;
        r.iter().all(|&v| v <= ACTIVE_TOL)
    }

    /// Solve; `None` only if no subset yields a feasible point (empty polytope).
    pub fn solve(&self) -> Option<QpSolution> {
        let n = self.f.len();
        let unconstrained = self.equality_minimizer(&[])?;
        if self.feasible(&unconstrained.0) {
            return Some(self.finish(unconstrained.0, false));
        }
        let mut best: Option<(DVector<f64>, f64)> = None;
        let mut active = Vec::new();
        self.search(0, 0, n, &mut active, &mut best);
        best.map(|(x, _)| self.finish(x, true))
    }

    fn finish(&self, x: DVector<f64>, binding: bool) -> QpSolution {
        let active = if self.g.nrows() == 0 {
            Vec::new()
        } else {
            let r = &self.g * &x - &self.hvec;
            r.iter().enumerate().filter(|(_, v)| v.abs() <= ACTIVE_TOL).map(|(i, _)| i).collect()
        };
        QpSolution { objective: self.objective(&x), x: x.iter().copied().collect(), active, binding }
    }

    fn search(
        &self,
        start: usize,
        rank: usize,
        n: usize,
        active: &mut Vec<usize>,
        best: &mut Option<(DVector<f64>, f64)>,
    ) {
        for i in start..self.g.nrows() {
            active.push(i);
            if let Some((x, new_rank)) = self.equality_minimizer(active) {
                if new_rank > rank {
                    if self.feasible(&x) {
                        let obj = self.objective(&x);
                        let better = match best {
                            None => true,
                            Some((bx, bobj)) => {
                                let tol = 1e-12 * (1.0 + bobj.abs());
                                obj < *bobj - tol || ((obj - *bobj).abs() <= tol && x.norm() < bx.norm())
                            }
                        };
                        if better {
                            *best = Some((x, obj));
                        }
                    }
                    if new_rank < n {
                        self.search(i + 1, new_rank, n, active, best);
                    }
                }
            }
            active.pop();
        }
    }

    /// Minimum-norm minimizer subject to `G_A x = h_A`, with the rank of `G_A`.
    /// `None` if the equality system is inconsistent.
    fn equality_minimizer(&self, active: &[usize]) -> Option<(DVector<f64>, usize)> {
        let n = self.f.len();
        if active.is_empty() {
            let x = psd_pinv(&self.h) * &self.f;
            return Some((x, 0));
        }
        let a = DMatrix::from_fn(active.len(), n, |r, c| self.g[(active[r], c)]);
        let b = DVector::from_fn(active.len(), |r, _| self.hvec[active[r]]);
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = 1e-10 * smax.max(1.0);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let xp = svd.clone().pseudo_inverse(tol).ok()? * &b;
        if (&a * &xp - &b).norm() > 1e-9 * (1.0 + b.norm()) {
            return None;
        }
        if rank == n {
            return Some((xp, rank));
        }
        let v_t = svd.v_t.as_ref()?;
        // Null-space basis: right singular vectors with (numerically) zero singular values.
        let mut null_cols = Vec::new();
        for (k, s) in svd.singular_values.iter().enumerate() {
            if *s <= tol {
                null_cols.push(v_t.row(k).transpose());
            }
        }
        // v_t from a thin SVD has min(k, n) rows; complete the basis when k < n.
        if v_t.nrows() < n {
            let full = complete_null_space(n, v_t);
            null_cols.extend(full);
        }
        if null_cols.is_empty() {
            return Some((xp, rank));
        }
        let nmat = DMatrix::from_columns(&null_cols);
        let hn = nmat.transpose() * &self.h * &nmat;
        let g = nmat.transpose() * (&self.f - &self.h * &xp);
        let xi = psd_pinv(&hn) * g;
        Some((xp + nmat * xi, rank))
    }
}

/// Orthonormal vectors spanning the complement of the rows of `v_t`; this is
/// the part of the null space a thin SVD does not report when the matrix has
/// fewer rows than columns.
fn complete_null_space(n: usize, v_t: &DMatrix<f64>) -> Vec<DVector<f64>> {
    // Orthogonal complement of the row space spanned by v_t's rows, via the
    // eigen-decomposition of the projector I - V V'.
    let v = v_t.transpose();
    let proj = DMatrix::<f64>::identity(n, n) - &v * v.transpose();
    let eig = SymmetricEigen::new(proj);
    (0..n)
        .filter(|&k| eig.eigenvalues[k] > 0.5)
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect()
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix.
fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-12 * lmax.max(1e-300);
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l > tol {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    out
}
