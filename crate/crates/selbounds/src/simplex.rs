//! Dense bounded-variable primal simplex.
//!
//! Solves
//!
//! ```text
//!     minimize c'x  subject to  A x = b,  lo <= x <= hi
//! ```
//!
//! with finite lower bounds and possibly infinite upper bounds. Nonbasic
//! variables sit at one of their bounds; Bland's smallest-index rule picks
//! both the entering and the leaving variable, so the method cannot cycle.
//! Phase one minimizes the sum of artificial variables added to every row;
//! phase two keeps them in the tableau with their upper bound set to zero.
//!
//! The basis inverse is refactorized from scratch at each iteration. That is
//! wasteful for large problems but the linear programs in this crate have a
//! few dozen columns, and refactorization keeps the iterates accurate.
//!
//! At the optimum the solver reports a dual certificate: row prices
//! `y = c_B' B^{-1}`, reduced costs `d = c - A'y`, and the dual bound
//! `b'y + Σ_j d_j · (bound where x_j rests)`, which equals the primal
//! objective for an optimal basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const MAX_ITER: usize = 50_000;

/// A linear program in bounded standard form.
#[derive(Clone, Debug)]
pub struct Lp {
    pub c: Vec<f64>,
    /// Row-major constraint matrix, `b.len()` rows by `c.len()` columns.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Optimal solution with its dual certificate.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row prices.
    pub duals: Vec<f64>,
    /// Reduced costs of the original columns.
    pub reduced_costs: Vec<f64>,
    /// Lower bound on the optimum implied by the certificate.
    pub dual_bound: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub fn duality_gap(&self) -> f64 {
        (self.objective - self.dual_bound).abs()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum State {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    iterations: usize,
}

impl Tableau {
    fn binv(&self) -> Result<DMatrix<f64>> {
        let m = self.b.len();
        let bm = DMatrix::from_fn(m, m, |r, c| self.a[(r, self.basis[c])]);
        bm.try_inverse().ok_or_else(|| Error::Numerical("singular simplex basis".into()))
    }

    /// Recompute basic values from the nonbasic ones.
    fn refresh(&mut self, binv: &DMatrix<f64>) {
        let n = self.x.len();
        let mut rhs = self.b.clone();
        for j in 0..n {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                rhs -= self.a.column(j) * self.x[j];
            }
        }
        let xb = binv * rhs;
        for (i, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[i];
        }
    }

    fn prices(&self, binv: &DMatrix<f64>, cost: &[f64]) -> DVector<f64> {
        let cb = DVector::from_fn(self.basis.len(), |i, _| cost[self.basis[i]]);
        binv.transpose() * cb
    }

    /// Run simplex iterations for `cost` until optimal.
    fn optimize(&mut self, cost: &[f64]) -> Result<()> {
        let n = self.x.len();
        loop {
            if self.iterations >= MAX_ITER {
                return Err(Error::Numerical("simplex iteration limit reached".into()));
            }
            let binv = self.binv()?;
            self.refresh(&binv);
            let y = self.prices(&binv, cost);
            // Bland: first improving nonbasic column.
            let mut entering = None;
            for j in 0..n {
                if self.state[j] == State::Basic || self.hi[j] - self.lo[j] <= 0.0 {
                    continue;
                }
                let d = cost[j] - self.a.column(j).dot(&y);
                if (self.state[j] == State::AtLower && d < -COST_TOL) || (self.state[j] == State::AtUpper && d > COST_TOL) {
                    entering = Some((j, if self.state[j] == State::AtLower { 1.0 } else { -1.0 }));
                    break;
                }
            }
            let Some((j, dir)) = entering else { return Ok(()) };
            self.iterations += 1;
            let alpha = &binv * self.a.column(j);
            // x_B(t) = x_B - t * dir * alpha.
            let mut step = self.hi[j] - self.lo[j];
            let mut leave: Option<(usize, State)> = None;
            for (i, &bj) in self.basis.iter().enumerate() {
                let rate = dir * alpha[i];
                let (room, hit) = if rate > PIVOT_TOL {
                    ((self.x[bj] - self.lo[bj]).max(0.0) / rate, State::AtLower)
                } else if rate < -PIVOT_TOL {
                    ((self.hi[bj] - self.x[bj]).max(0.0) / -rate, State::AtUpper)
                } else {
                    continue;
                };
                if room.is_infinite() {
                    continue;
                }
                let tol = 1e-12 * (1.0 + room);
                let better = if room < step - tol {
                    true
                } else if room <= step + tol {
                    // Tie: Bland prefers the smallest variable index.
                    leave.is_none_or(|(li, _)| bj < self.basis[li])
                } else {
                    false
                };
                if better {
                    step = room;
                    leave = Some((i, hit));
                }
            }
            if step.is_infinite() {
                return Err(Error::Unbounded);
            }
            match leave {
                None => {
                    // Bound flip of the entering variable.
                    self.state[j] = if dir > 0.0 { State::AtUpper } else { State::AtLower };
                    self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
                Some((i, hit)) => {
                    let out = self.basis[i];
                    self.state[out] = hit;
                    self.x[out] = if hit == State::AtLower { self.lo[out] } else { self.hi[out] };
                    self.x[j] += dir * step;
                    self.state[j] = State::Basic;
                    self.basis[i] = j;
                }
            }
        }
    }
}

impl Lp {
    fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.a.len() != self.b.len() || self.a.iter().any(|r| r.len() != n) || self.lo.len() != n || self.hi.len() != n {
            return Err(Error::Usage("linear program dimensions are inconsistent".into()));
        }
        for j in 0..n {
            if !self.lo[j].is_finite() || self.hi[j].is_nan() || self.hi[j] < self.lo[j] {
                return Err(Error::Usage(format!("variable {j} has invalid bounds [{}, {}]", self.lo[j], self.hi[j])));
            }
        }
        Ok(())
    }

    /// Minimize `c'x`.
    pub fn minimize(&self) -> Result<LpSolution> {
        self.validate()?;
        let (m, n) = (self.b.len(), self.c.len());
        // Structural columns start at their lower bounds; one artificial per row absorbs the residual.
        let mut resid = self.b.clone();
        for (i, row) in self.a.iter().enumerate() {
            for j in 0..n {
                resid[i] -= row[j] * self.lo[j];
            }
        }
        let a = DMatrix::from_fn(m, n + m, |r, c| {
            if c < n {
                self.a[r][c]
            } else if c - n == r {
                if resid[r] >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        });
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        lo.extend(std::iter::repeat_n(0.0, m));
        hi.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut x = self.lo.clone();
        x.extend(resid.iter().map(|r| r.abs()));
        let mut state = vec![State::AtLower; n];
        state.extend(std::iter::repeat_n(State::Basic, m));
        let mut t = Tableau { a, b: DVector::from_vec(self.b.clone()), lo, hi, x, state, basis: (n..n + m).collect(), iterations: 0 };

        let mut phase1 = vec![0.0; n];
        phase1.extend(std::iter::repeat_n(1.0, m));
        t.optimize(&phase1)?;
        let infeas: f64 = t.x[n..].iter().fold(0.0, |acc, &v| acc.max(v));
        if infeas > FEAS_TOL * (1.0 + self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
            return Err(Error::Infeasible { max_violation: infeas });
        }
        for k in n..n + m {
            t.hi[k] = 0.0;
            if t.state[k] != State::Basic {
                t.x[k] = 0.0;
                t.state[k] = State::AtLower;
            }
        }
        let mut cost = self.c.clone();
        cost.extend(std::iter::repeat_n(0.0, m));
        t.optimize(&cost)?;

        let binv = t.binv()?;
        t.refresh(&binv);
        let y = t.prices(&binv, &cost);
        let mut dual_bound = DVector::from_vec(self.b.clone()).dot(&y);
        let mut reduced = Vec::with_capacity(n);
        for j in 0..n + m {
            let d = cost[j] - t.a.column(j).dot(&y);
            if j < n {
                reduced.push(d);
            }
            if t.state[j] != State::Basic {
                dual_bound += d * t.x[j];
            }
        }
        let xs: Vec<f64> = t.x[..n].to_vec();
        let objective = self.c.iter().zip(&xs).map(|(c, x)| c * x).sum();
        Ok(LpSolution { x: xs, objective, duals: y.iter().copied().collect(), reduced_costs: reduced, dual_bound, iterations: t.iterations })
    }

    /// Maximize `c'x`; the reported objective and dual bound are for the maximization.
    pub fn maximize(&self) -> Result<LpSolution> {
        let neg = Lp { c: self.c.iter().map(|v| -v).collect(), ..self.clone() };
        let mut s = neg.minimize()?;
        s.objective = -s.objective;
        s.dual_bound = -s.dual_bound;
        s.duals.iter_mut().for_each(|v| *v = -*v);
        s.reduced_costs.iter_mut().for_each(|v| *v = -*v);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(c: &[f64], a: &[&[f64]], b: &[f64], lo: &[f64], hi: &[f64]) -> Lp {
        Lp { c: c.to_vec(), a: a.iter().map(|r| r.to_vec()).collect(), b: b.to_vec(), lo: lo.to_vec(), hi: hi.to_vec() }
    }

    #[test]
    fn small_textbook_problem() {
        // max 3x + 2y  s.t. x + y + s1 = 4, x + 3y + s2 = 6, x, y, s >= 0 -> x = 4, y = 0, value 12.
        let inf = f64::INFINITY;
        let p = lp(&[3., 2., 0., 0.], &[&[1., 1., 1., 0.], &[1., 3., 0., 1.]], &[4., 6.], &[0.; 4], &[inf; 4]);
        let s = p.maximize().unwrap();
        assert!((s.objective - 12.0).abs() < 1e-10);
        assert!((s.x[0] - 4.0).abs() < 1e-10 && s.x[1].abs() < 1e-10);
        assert!(s.duality_gap() < 1e-8);
    }

    #[test]
    fn upper_bounds_bind_without_rows() {
        let p = lp(&[1., -2.], &[], &[], &[0., -1.], &[3., 5.]);
        let s = p.minimize().unwrap();
        assert_eq!(s.x, vec![0.0, 5.0]);
        assert!((s.objective + 10.0).abs() < 1e-12);
        assert!(s.duality_gap() < 1e-12);
    }

    #[test]
    fn infeasibility_reports_the_violation() {
        // x + y = 3 with x, y in [0, 1].
        let p = lp(&[0., 0.], &[&[1., 1.]], &[3.], &[0., 0.], &[1., 1.]);
        match p.minimize() {
            Err(Error::Infeasible { max_violation }) => assert!((max_violation - 1.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbounded_direction_is_detected() {
        let inf = f64::INFINITY;
        let p = lp(&[-1., 0.], &[&[1., -1.]], &[0.], &[0., 0.], &[inf, inf]);
        assert!(matches!(p.minimize(), Err(Error::Unbounded)));
    }

    #[test]
    fn degenerate_problem_terminates() {
        // A classic cycling example under the largest-coefficient rule.
        let inf = f64::INFINITY;
        let p = lp(
            &[-0.75, 150.0, -0.02, 6.0, 0., 0., 0.],
            &[&[0.25, -60.0, -0.04, 9.0, 1., 0., 0.], &[0.5, -90.0, -0.02, 3.0, 0., 1., 0.], &[0., 0., 1., 0., 0., 0., 1.]],
            &[0., 0., 1.],
            &[0.; 7],
            &[inf; 7],
        );
        let s = p.minimize().unwrap();
        assert!((s.objective + 0.05).abs() < 1e-9, "{}", s.objective);
        assert!(s.duality_gap() < 1e-8);
    }

    /// Exhaustive vertex enumeration for box-constrained problems with one equality row.
    fn brute_force(c: &[f64], row: &[f64], rhs: f64, lo: &[f64], hi: &[f64]) -> Option<f64> {
        let n = c.len();
        let mut best: Option<f64> = None;
        for free in 0..n {
            for mask in 0..(1u32 << n) {
                if mask & (1 << free) != 0 {
                    continue;
                }
                let mut x: Vec<f64> = (0..n).map(|j| if mask & (1 << j) != 0 { hi[j] } else { lo[j] }).collect();
                if row[free].abs() < 1e-9 {
                    continue;
                }
                let rest: f64 = (0..n).filter(|&j| j != free).map(|j| row[j] * x[j]).sum();
                x[free] = (rhs - rest) / row[free];
                if x[free] < lo[free] - 1e-9 || x[free] > hi[free] + 1e-9 {
                    continue;
                }
                let v: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        best
    }

    proptest! {
        #[test]
        fn matches_vertex_enumeration(
            c in prop::collection::vec(-3.0..3.0f64, 4),
            row in prop::collection::vec(-2.0..2.0f64, 4),
            lo in prop::collection::vec(-1.0..0.0f64, 4),
            width in prop::collection::vec(0.1..2.0f64, 4),
            frac in 0.0..1.0f64,
        ) {
            let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
            // A right-hand side inside the attainable range.
            let min_r: f64 = (0..4).map(|j| (row[j] * lo[j]).min(row[j] * hi[j])).sum();
            let max_r: f64 = (0..4).map(|j| (row[j] * lo[j]).max(row[j] * hi[j])).sum();
            let rhs = min_r + frac * (max_r - min_r);
            let p = Lp { c: c.clone(), a: vec![row.clone()], b: vec![rhs], lo: lo.clone(), hi: hi.clone() };
            let s = p.minimize().unwrap();
            let oracle = brute_force(&c, &row, rhs, &lo, &hi).unwrap();
            prop_assert!((s.objective - oracle).abs() < 1e-7, "{} vs {}", s.objective, oracle);
            prop_assert!(s.duality_gap() < 1e-8);
            let r: f64 = row.iter().zip(&s.x).map(|(a, b)| a * b).sum();
            prop_assert!((r - rhs).abs() < 1e-8);
        }
    }
}
