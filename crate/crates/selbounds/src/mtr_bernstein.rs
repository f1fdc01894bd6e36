//! Flexible parametric marginal treatment response (MTR) functions.
//!
//! Each arm `d` of a target variable `A` (the outcome `Y` or the selection
//! indicator `S`) is modeled as a Bernstein polynomial in the latent
//! resistance `u`,
//!
//! ```text
//!     m_d(u) = sum_{l=0}^{L-1} theta_{d,l} C(L-1, l) u^l (1-u)^{L-1-l}.
//! ```
//!
//! With a discrete instrument, the data identify the conditional means of `A`
//! in each `(propensity, treatment)` cell:
//!
//! ```text
//!     E[A | P = p, D = 0] = int_p^1 m_0(u) du / (1 - p)
//!     E[A | P = p, D = 1] = int_0^p m_1(u) du / p
//! ```
//!
//! which are linear in the coefficients. Fitting is weighted least squares of
//! the observed `A` on these cell means, subject to a feasible set for the
//! coefficients, solved exactly by [`crate::qp`].

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::data_io::{PropensityTable, Sample};
use crate::error::{Error, Result};
use crate::qp::Qp;

/// Target variable of an MTR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variable {
    /// Observable outcome `Y = S * Y*`.
    Y,
    /// Selection indicator.
    S,
}

impl Variable {
    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Y => "Y",
            Variable::S => "S",
        }
    }
}

/// Treatment arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Untreated,
    Treated,
}

impl Arm {
    pub fn from_d(d: u8) -> Arm {
        if d == 1 {
            Arm::Treated
        } else {
            Arm::Untreated
        }
    }

    pub fn index(self) -> usize {
        match self {
            Arm::Untreated => 0,
            Arm::Treated => 1,
        }
    }
}

/// Admissible set for the stacked coefficients `(theta_0, theta_1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeasibleSet {
    /// All coefficients nonnegative.
    Nonneg,
    /// Coefficients in `[0, 1]` with `theta_1 >= theta_0` elementwise.
    UnitBoxIncreasing,
    /// Coefficients in `[0, 1]` with `theta_1 <= theta_0` elementwise.
    UnitBoxDecreasing,
    /// Coefficients in `[0, 1]`.
    UnitBox,
    /// No restriction.
    Unrestricted,
}

impl FeasibleSet {
    pub fn is_unit_box(self) -> bool {
        matches!(self, FeasibleSet::UnitBox | FeasibleSet::UnitBoxIncreasing | FeasibleSet::UnitBoxDecreasing)
    }

    /// Linear inequalities `G theta <= h` over the stacked `2L` coefficients.
    fn constraints(self, l: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = 2 * l;
        let unit = |i: usize, s: f64| {
            let mut r = vec![0.0; n];
            r[i] = s;
            r
        };
        let mut g = Vec::new();
        let mut h = Vec::new();
        match self {
            FeasibleSet::Unrestricted => {}
            FeasibleSet::Nonneg => {
                for i in 0..n {
                    g.push(unit(i, -1.0));
                    h.push(0.0);
                }
            }
            FeasibleSet::UnitBox | FeasibleSet::UnitBoxIncreasing | FeasibleSet::UnitBoxDecreasing => {
                for i in 0..n {
                    g.push(unit(i, -1.0));
                    h.push(0.0);
                    g.push(unit(i, 1.0));
                    h.push(1.0);
                }
                let sign = match self {
                    FeasibleSet::UnitBoxIncreasing => Some(1.0),
                    FeasibleSet::UnitBoxDecreasing => Some(-1.0),
                    _ => None,
                };
                if let Some(sgn) = sign {
                    // increasing: theta_0 - theta_1 <= 0
                    for k in 0..l {
                        let mut r = vec![0.0; n];
                        r[k] = sgn;
                        r[l + k] = -sgn;
                        g.push(r);
                        h.push(0.0);
                    }
                }
            }
        }
        (g, h)
    }

    /// Snap coefficients that violate the set by at most the activity
    /// tolerance back onto it, so that the set holds exactly.
    fn project(self, theta0: &mut [f64], theta1: &mut [f64]) {
        let clamp = |v: &mut f64, lo: f64, hi: f64| *v = v.clamp(lo, hi);
        match self {
            FeasibleSet::Unrestricted => {}
            FeasibleSet::Nonneg => theta0.iter_mut().chain(theta1.iter_mut()).for_each(|v| clamp(v, 0.0, f64::INFINITY)),
            _ => {
                theta0.iter_mut().chain(theta1.iter_mut()).for_each(|v| clamp(v, 0.0, 1.0));
                for (a, b) in theta0.iter_mut().zip(theta1.iter_mut()) {
                    match self {
                        FeasibleSet::UnitBoxIncreasing if *b < *a => *b = *a,
                        FeasibleSet::UnitBoxDecreasing if *b > *a => *b = *a,
                        _ => {}
                    }
                }
            }
        }
    }

    pub fn contains(self, theta0: &[f64], theta1: &[f64]) -> bool {
        let all = || theta0.iter().chain(theta1.iter());
        match self {
            FeasibleSet::Unrestricted => true,
            FeasibleSet::Nonneg => all().all(|&v| v >= 0.0),
            FeasibleSet::UnitBox => all().all(|&v| (0.0..=1.0).contains(&v)),
            FeasibleSet::UnitBoxIncreasing => {
                all().all(|&v| (0.0..=1.0).contains(&v)) && theta0.iter().zip(theta1).all(|(a, b)| b >= a)
            }
            FeasibleSet::UnitBoxDecreasing => {
                all().all(|&v| (0.0..=1.0).contains(&v)) && theta0.iter().zip(theta1).all(|(a, b)| b <= a)
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis functions of degree `L-1` at `u` (no domain check).
pub fn basis(l: usize, u: f64) -> Vec<f64> {
    let deg = l - 1;
    (0..l)
        .map(|k| binomial(deg, k) * u.powi(k as i32) * (1.0 - u).powi((deg - k) as i32))
        .collect()
}

/// `int_0^x b_k(u) du` for every basis function, using
/// `int_0^x b_{k,n} = (1/(n+1)) sum_{j>k} b_{j,n+1}(x)`.
pub fn basis_integral_from_zero(l: usize, x: f64) -> Vec<f64> {
    let up = basis(l + 1, x);
    let scale = 1.0 / l as f64;
    (0..l).map(|k| up[k + 1..].iter().sum::<f64>() * scale).collect()
}

fn check_unit(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::Domain(format!("u = {u} is outside [0, 1]")))
    }
}

/// Evaluate the Bernstein polynomial with coefficients `theta` at `u`
/// (de Casteljau's algorithm).
pub fn bernstein_eval(theta: &[f64], u: f64) -> Result<f64> {
    check_unit(u)?;
    if theta.is_empty() {
        return Err(Error::Domain("empty coefficient vector".into()));
    }
    let mut b = theta.to_vec();
    for r in 1..b.len() {
        for k in 0..b.len() - r {
            b[k] = (1.0 - u) * b[k] + u * b[k + 1];
        }
    }
    Ok(b[0])
}

/// `int_a^b M(u, theta) du` for `0 <= a <= b <= 1`.
pub fn bernstein_integral(theta: &[f64], a: f64, b: f64) -> Result<f64> {
    check_unit(a)?;
    check_unit(b)?;
    let l = theta.len();
    let ia = basis_integral_from_zero(l, a);
    let ib = basis_integral_from_zero(l, b);
    Ok(theta.iter().zip(ia.iter().zip(&ib)).map(|(t, (x, y))| t * (y - x)).sum())
}

/// Linear map `theta -> E[A | P = p, D = d]` as a row vector.
pub fn cell_mean_row(l: usize, p: f64, arm: Arm) -> Result<Vec<f64>> {
    check_unit(p)?;
    let from_zero = basis_integral_from_zero(l, p);
    match arm {
        Arm::Treated => {
            if p <= 0.0 {
                return Err(Error::Domain("treated cell mean needs p > 0".into()));
            }
            Ok(from_zero.iter().map(|v| v / p).collect())
        }
        Arm::Untreated => {
            if p >= 1.0 {
                return Err(Error::Domain("untreated cell mean needs p < 1".into()));
            }
            // int_p^1 b_k = 1/L - int_0^p b_k
            let total = 1.0 / l as f64;
            Ok(from_zero.iter().map(|v| (total - v) / (1.0 - p)).collect())
        }
    }
}

/// Conditional mean of `A` in the `(p, arm)` cell implied by `theta`.
pub fn cell_mean(theta: &[f64], p: f64, arm: Arm) -> Result<f64> {
    let row = cell_mean_row(theta.len(), p, arm)?;
    Ok(row.iter().zip(theta).map(|(r, t)| r * t).sum())
}

/// Map the coefficients of the OLS model with arm-specific intercepts and
/// propensity slopes, `A = (1-D)(a0 + b0 P) + D (a1 + b1 P)`, to linear
/// (`L = 2`) Bernstein coefficients.
pub fn map_ols_to_theta(a0: f64, b0: f64, a1: f64, b1: f64) -> ([f64; 2], [f64; 2]) {
    ([a0 - b0, a0 + b0], [a1, a1 + 2.0 * b1])
}

/// Inverse of [`map_ols_to_theta`]: returns `(a0, b0, a1, b1)`.
pub fn map_theta_to_ols(theta0: [f64; 2], theta1: [f64; 2]) -> (f64, f64, f64, f64) {
    (
        0.5 * (theta0[0] + theta0[1]),
        0.5 * (theta0[1] - theta0[0]),
        theta1[0],
        0.5 * (theta1[1] - theta1[0]),
    )
}

/// Bernstein MTR pair for one variable.
#[derive(Clone, Debug, PartialEq)]
pub struct BernsteinMTR {
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub variable: Variable,
    pub feasible_set: FeasibleSet,
}

impl BernsteinMTR {
    /// Build and check that the coefficients satisfy the declared set.
    pub fn new(theta0: Vec<f64>, theta1: Vec<f64>, variable: Variable, feasible_set: FeasibleSet) -> Result<Self> {
        if theta0.is_empty() || theta0.len() != theta1.len() {
            return Err(Error::validation("theta0 and theta1 must be nonempty and of equal length"));
        }
        if variable == Variable::S && !feasible_set.is_unit_box() {
            return Err(Error::validation("the selection MTR requires a unit-box feasible set"));
        }
        if !feasible_set.contains(&theta0, &theta1) {
            return Err(Error::validation(format!("coefficients violate the {feasible_set:?} feasible set")));
        }
        Ok(Self { theta0, theta1, variable, feasible_set })
    }

    /// Number of coefficients per arm.
    pub fn degree_params(&self) -> usize {
        self.theta0.len()
    }

    pub fn theta(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Untreated => &self.theta0,
            Arm::Treated => &self.theta1,
        }
    }

    pub fn eval(&self, arm: Arm, u: f64) -> Result<f64> {
        bernstein_eval(self.theta(arm), u)
    }

    /// `int_0^1 m_d(u) du`, the mean of the coefficients.
    pub fn integral(&self, arm: Arm) -> f64 {
        let t = self.theta(arm);
        t.iter().sum::<f64>() / t.len() as f64
    }
}

/// The four MTR curves at one value of `u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MtrValues {
    pub m0y: f64,
    pub m1y: f64,
    pub m0s: f64,
    pub m1s: f64,
}

impl MtrValues {
    /// `Delta_S = m1S - m0S`.
    pub fn delta_s(&self) -> f64 {
        self.m1s - self.m0s
    }
}

/// Outcome and selection MTRs together.
#[derive(Clone, Debug, PartialEq)]
pub struct MTRSet {
    pub y: BernsteinMTR,
    pub s: BernsteinMTR,
}

impl MTRSet {
    pub fn new(y: BernsteinMTR, s: BernsteinMTR) -> Result<Self> {
        if y.variable != Variable::Y || s.variable != Variable::S {
            return Err(Error::validation("MTRSet needs a Y model and an S model"));
        }
        Ok(Self { y, s })
    }

    /// Linear MTRs from the `(a0, b0, a1, b1)` coefficient layout
    /// `(theta_{0,0}, theta_{0,1}, theta_{1,0}, theta_{1,1})`.
    pub fn linear(theta_y: [f64; 4], theta_s: [f64; 4]) -> Result<Self> {
        let y = BernsteinMTR::new(theta_y[..2].to_vec(), theta_y[2..].to_vec(), Variable::Y, FeasibleSet::Nonneg)?;
        let s = BernsteinMTR::new(
            theta_s[..2].to_vec(),
            theta_s[2..].to_vec(),
            Variable::S,
            FeasibleSet::UnitBoxIncreasing,
        )?;
        Self::new(y, s)
    }

    pub fn values(&self, u: f64) -> Result<MtrValues> {
        Ok(MtrValues {
            m0y: self.y.eval(Arm::Untreated, u)?,
            m1y: self.y.eval(Arm::Treated, u)?,
            m0s: self.s.eval(Arm::Untreated, u)?,
            m1s: self.s.eval(Arm::Treated, u)?,
        })
    }
}

/// Sample moment for one `(arm, p)` cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellMoment {
    pub arm: Arm,
    pub p: f64,
    /// `E[A | P = p, D = d]`.
    pub mean: f64,
    /// Weight of the cell in the least-squares criterion.
    pub weight: f64,
}

/// How cells are weighted in the least-squares criterion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CellWeighting {
    /// Each cell weighted by its total design weight: the sample OLS.
    #[default]
    SampleOls,
    /// Every `(arm, p)` cell weighted equally.
    EqualCell,
}

/// Weighted cell means of `A` by `(arm, p(z))`.
pub fn cell_moments(sample: &Sample, propensity: &PropensityTable, variable: Variable) -> Result<Vec<CellMoment>> {
    // Cells are keyed by the bit pattern of p so that instruments sharing a
    // propensity value pool into one cell.
    let mut acc: BTreeMap<(usize, u64), (f64, f64, f64)> = BTreeMap::new();
    for r in sample.records() {
        let e = propensity
            .get(r.z)
            .ok_or_else(|| Error::validation(format!("instrument value {} missing from propensity table", r.z)))?;
        let a = match variable {
            Variable::Y => r.y,
            Variable::S => f64::from(r.s),
        };
        let arm = Arm::from_d(r.d);
        let slot = acc.entry((arm.index(), e.p.to_bits())).or_insert((e.p, 0.0, 0.0));
        slot.1 += r.w;
        slot.2 += r.w * a;
    }
    Ok(acc
        .into_iter()
        .map(|((arm, _), (p, w, wa))| CellMoment {
            arm: if arm == 1 { Arm::Treated } else { Arm::Untreated },
            p,
            mean: wa / w,
            weight: w,
        })
        .collect())
}

/// Diagnostics from a constrained fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Weighted sum of squared cell residuals at the solution.
    pub objective: f64,
    /// Constraints active at the solution (indices into the feasible-set rows).
    pub active: Vec<usize>,
    /// True when the constraints moved the solution away from the
    /// unconstrained least-squares fit.
    pub binding: bool,
}

/// Weighted least-squares fit of Bernstein coefficients to cell moments.
pub fn fit_cell_moments(
    cells: &[CellMoment],
    variable: Variable,
    l: usize,
    feasible_set: FeasibleSet,
    weighting: CellWeighting,
) -> Result<(BernsteinMTR, FitReport)> {
    if l == 0 {
        return Err(Error::Usage("the number of Bernstein coefficients must be positive".into()));
    }
    if variable == Variable::S && !feasible_set.is_unit_box() {
        return Err(Error::Usage("the selection MTR requires a unit-box feasible set".into()));
    }
    let mut support: Vec<f64> = cells.iter().map(|c| c.p).collect();
    support.sort_by(f64::total_cmp);
    support.dedup();
    if support.len() < 2 {
        return Err(Error::InsufficientVariation(format!(
            "need at least two distinct propensity values, found {}",
            support.len()
        )));
    }
    if l > support.len() {
        return Err(Error::Usage(format!(
            "L = {l} exceeds the number of distinct propensity values N = {}",
            support.len()
        )));
    }
    let n = 2 * l;
    let mut hmat = DMatrix::<f64>::zeros(n, n);
    let mut fvec = DVector::<f64>::zeros(n);
    let mut const_term = 0.0;
    for c in cells {
        let w = match weighting {
            CellWeighting::SampleOls => c.weight,
            CellWeighting::EqualCell => 1.0,
        };
        let row = cell_mean_row(l, c.p, c.arm)?;
        let off = c.arm.index() * l;
        for i in 0..l {
            fvec[off + i] += w * row[i] * c.mean;
            for j in 0..l {
                hmat[(off + i, off + j)] += w * row[i] * row[j];
            }
        }
        const_term += w * c.mean * c.mean;
    }
    // Each arm needs some cell to pin its coefficients down.
    for arm in [Arm::Untreated, Arm::Treated] {
        if !cells.iter().any(|c| c.arm == arm) {
            return Err(Error::Rank(format!("no observations in the {arm:?} arm")));
        }
    }
    let (g, h) = feasible_set.constraints(l);
    let qp = Qp {
        h: hmat,
        f: fvec,
        g: DMatrix::from_fn(g.len(), n, |r, c| g[r][c]),
        hvec: DVector::from_vec(h),
    };
    // The criterion equals 2 * (1/2 x'Hx - f'x) + sum w m^2.
    let sol = qp.solve().ok_or_else(|| Error::Rank("no feasible coefficient vector".into()))?;
    let mut theta0 = sol.x[..l].to_vec();
    let mut theta1 = sol.x[l..].to_vec();
    feasible_set.project(&mut theta0, &mut theta1);
    let objective = (2.0 * sol.objective + const_term).max(0.0);
    let mtr = BernsteinMTR::new(theta0, theta1, variable, feasible_set)?;
    Ok((mtr, FitReport { objective, active: sol.active, binding: sol.binding }))
}

/// Constrained least-squares fit of the MTRs of `variable` from micro-data.
///
/// Each record's prediction is the model cell mean at its `(p(z), d)`; the
/// weighted criterion reduces to weighted squared deviations of the cell
/// means, which is what is minimized.
pub fn fit_constrained(
    sample: &Sample,
    propensity: &PropensityTable,
    variable: Variable,
    l: usize,
    feasible_set: FeasibleSet,
) -> Result<BernsteinMTR> {
    fit_constrained_with(sample, propensity, variable, l, feasible_set, CellWeighting::SampleOls).map(|r| r.0)
}

/// [`fit_constrained`] with an explicit cell weighting, also returning diagnostics.
pub fn fit_constrained_with(
    sample: &Sample,
    propensity: &PropensityTable,
    variable: Variable,
    l: usize,
    feasible_set: FeasibleSet,
    weighting: CellWeighting,
) -> Result<(BernsteinMTR, FitReport)> {
    sample.check_nondegenerate()?;
    let cells = cell_moments(sample, propensity, variable)?;
    fit_cell_moments(&cells, variable, l, feasible_set, weighting)
}

/// Write coefficient tables as CSV rows `(variable, arm, l, theta)`.
pub fn write_theta<W: Write>(models: &[&BernsteinMTR], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["variable", "arm", "l", "theta"])?;
    for m in models {
        for arm in [Arm::Untreated, Arm::Treated] {
            for (k, t) in m.theta(arm).iter().enumerate() {
                wtr.write_record([m.variable.as_str().to_string(), arm.index().to_string(), k.to_string(), t.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Read coefficient tables written by [`write_theta`] into an [`MTRSet`].
///
/// The file does not record feasible sets; the outcome model is tagged
/// nonnegative and the selection model unit-box increasing unless the
/// coefficients only satisfy a weaker set, in which case the tightest
/// applicable tag is used.
pub fn read_theta<R: Read>(reader: R) -> Result<MTRSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for name in ["variable", "arm", "l", "theta"] {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::validation(format!("missing required column '{name}'")));
        }
    }
    let idx = |name: &str| headers.iter().position(|h| h == name).unwrap_or(0);
    let (iv, ia, il, it) = (idx("variable"), idx("arm"), idx("l"), idx("theta"));
    let mut coef: BTreeMap<(String, usize), BTreeMap<usize, f64>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let get = |j: usize| rec.get(j).unwrap_or("");
        let arm: usize = get(ia).parse().map_err(|_| Error::Parse { row, msg: "arm must be 0 or 1".into() })?;
        let l: usize = get(il).parse().map_err(|_| Error::Parse { row, msg: "l must be a nonnegative integer".into() })?;
        let t: f64 = get(it).parse().map_err(|_| Error::Parse { row, msg: "theta must be a number".into() })?;
        if arm > 1 {
            return Err(Error::Parse { row, msg: "arm must be 0 or 1".into() });
        }
        coef.entry((get(iv).to_uppercase(), arm)).or_default().insert(l, t);
    }
    let take = |var: &str, arm: usize| -> Result<Vec<f64>> {
        let m = coef
            .get(&(var.to_string(), arm))
            .ok_or_else(|| Error::validation(format!("no coefficients for variable {var}, arm {arm}")))?;
        if m.keys().copied().ne(0..m.len()) {
            return Err(Error::validation(format!("coefficient indices for {var}, arm {arm} are not 0..L-1")));
        }
        Ok(m.values().copied().collect())
    };
    let (y0, y1, s0, s1) = (take("Y", 0)?, take("Y", 1)?, take("S", 0)?, take("S", 1)?);
    let yset = [FeasibleSet::Nonneg, FeasibleSet::Unrestricted].into_iter().find(|f| f.contains(&y0, &y1)).unwrap();
    let sset = [FeasibleSet::UnitBoxIncreasing, FeasibleSet::UnitBoxDecreasing, FeasibleSet::UnitBox]
        .into_iter()
        .find(|f| f.contains(&s0, &s1))
        .ok_or_else(|| Error::validation("selection coefficients must lie in [0, 1]"))?;
    MTRSet::new(
        BernsteinMTR::new(y0, y1, Variable::Y, yset)?,
        BernsteinMTR::new(s0, s1, Variable::S, sset)?,
    )
}
