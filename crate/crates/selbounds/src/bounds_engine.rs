//! Closed-form bounds on the always-observed marginal treatment effect.
//!
//! For a latent resistance value `u`, the target is
//!
//! ```text
//!     MTE_OO(u) = E[Y1* - Y0* | U = u, S0 = 1, S1 = 1].
//! ```
//!
//! With selection increasing in treatment, the untreated component equals
//! `m0Y(u) / m0S(u)`. The treated component mixes always-observed units with
//! units observed only when treated, whose share is `Delta_S = m1S - m0S`;
//! trimming that share off the top or bottom of the outcome support gives the
//! brackets. Optional mean-dominance assumptions compare the always-observed
//! and observed-only-when-treated means and replace one end of the bracket by
//! `m1Y / m1S`. If selection decreases in treatment, the arms swap roles; if
//! the direction is unknown, the union of both directional intervals is used.
//!
//! All evaluation is pointwise in `u`. Points where a denominator falls below
//! [`EPS`] are flagged and reported as uninformative rather than clamped.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::mtr_bernstein::{MTRSet, MtrValues};

/// Denominator guard for selection probabilities.
pub const EPS: f64 = 1e-8;

/// Which ends of the potential-outcome support are finite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupportCase {
    /// Known finite lower end, unbounded above.
    BelowBounded,
    /// Known finite upper end, unbounded below.
    AboveBounded,
    /// Both ends finite.
    TwoSided,
    /// The whole real line.
    RealLine,
}

/// Support `[y_lower, y_upper]` of the latent outcome `Y*`; either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportSpec {
    pub y_lower: f64,
    pub y_upper: f64,
}

impl SupportSpec {
    pub fn new(y_lower: f64, y_upper: f64) -> Result<Self> {
        if y_lower.is_nan() || y_upper.is_nan() || y_lower == f64::INFINITY || y_upper == f64::NEG_INFINITY {
            return Err(Error::Usage("support ends must be numbers, lower < +inf and upper > -inf".into()));
        }
        if y_lower >= y_upper {
            return Err(Error::Usage(format!("support lower end {y_lower} must be below the upper end {y_upper}")));
        }
        Ok(Self { y_lower, y_upper })
    }

    /// `[y_lower, +inf)`.
    pub fn below_bounded(y_lower: f64) -> Self {
        Self { y_lower, y_upper: f64::INFINITY }
    }

    pub fn real_line() -> Self {
        Self { y_lower: f64::NEG_INFINITY, y_upper: f64::INFINITY }
    }

    pub fn case(&self) -> SupportCase {
        match (self.y_lower.is_finite(), self.y_upper.is_finite()) {
            (true, true) => SupportCase::TwoSided,
            (true, false) => SupportCase::BelowBounded,
            (false, true) => SupportCase::AboveBounded,
            (false, false) => SupportCase::RealLine,
        }
    }
}

/// Direction of the effect of treatment on selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionDirection {
    /// `S1 >= S0` for everyone.
    Increasing,
    /// `S1 <= S0` for everyone.
    Decreasing,
    /// Monotone, direction unknown.
    Agnostic,
    /// No monotonicity; the bounds are uninformative.
    NonMonotone,
}

/// Mean-dominance assumption on treated outcomes across principal strata.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeanDominance {
    None,
    /// Always-observed treated mean at least the observed-only-when-treated mean.
    AlwaysObservedGe,
    /// Always-observed treated mean at most the observed-only-when-treated mean.
    AlwaysObservedLe,
}

/// A complete assumption regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AssumptionProfile {
    pub selection: SelectionDirection,
    pub mean_dominance: MeanDominance,
}

impl AssumptionProfile {
    pub fn new(selection: SelectionDirection, mean_dominance: MeanDominance) -> Result<Self> {
        let p = Self { selection, mean_dominance };
        p.validate()?;
        Ok(p)
    }

    pub fn increasing(mean_dominance: MeanDominance) -> Self {
        Self { selection: SelectionDirection::Increasing, mean_dominance }
    }

    /// Mean dominance is defined relative to the stratum that is observed
    /// only when treated, which exists only under increasing selection.
    pub fn validate(&self) -> Result<()> {
        if self.mean_dominance != MeanDominance::None && self.selection != SelectionDirection::Increasing {
            return Err(Error::Usage("mean dominance requires increasing selection".into()));
        }
        Ok(())
    }
}

/// Per-point diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PointFlags {
    pub point_identified: bool,
    pub empty_interval: bool,
    pub denominator_guard: bool,
}

impl PointFlags {
    pub fn any(&self) -> bool {
        self.point_identified || self.empty_interval || self.denominator_guard
    }

    fn render(&self) -> String {
        let mut v = Vec::new();
        if self.point_identified {
            v.push("point-identified");
        }
        if self.empty_interval {
            v.push("empty-interval");
        }
        if self.denominator_guard {
            v.push("denominator-guard");
        }
        v.join(";")
    }

    fn parse(s: &str, row: usize) -> Result<Self> {
        let mut f = PointFlags::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "point-identified" => f.point_identified = true,
                "empty-interval" => f.empty_interval = true,
                "denominator-guard" => f.denominator_guard = true,
                other => return Err(Error::Parse { row, msg: format!("unknown flag '{other}'") }),
            }
        }
        Ok(f)
    }
}

/// Bounds at a single `u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointBounds {
    pub lower: f64,
    pub upper: f64,
    pub flags: PointFlags,
}

impl PointBounds {
    pub(crate) fn guarded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            flags: PointFlags { denominator_guard: true, ..PointFlags::default() },
        }
    }

    pub(crate) fn classified(lower: f64, upper: f64) -> Self {
        let mut flags = PointFlags::default();
        if lower.is_finite() && upper.is_finite() {
            let tol = 1e-12 * (1.0 + lower.abs().max(upper.abs()));
            if (upper - lower).abs() <= tol {
                flags.point_identified = true;
            } else if lower > upper {
                flags.empty_interval = true;
            }
        } else if lower > upper {
            flags.empty_interval = true;
        }
        Self { lower, upper, flags }
    }
}

/// `E[Y0* | u, S0 = 1, S1 = 1] = m0Y / m0S` under increasing selection.
pub fn untreated_component(v: &MtrValues) -> Result<f64> {
    if v.m0s <= EPS {
        return Err(Error::Numerical(format!("untreated selection probability {} is below the guard", v.m0s)));
    }
    Ok(v.m0y / v.m0s)
}

/// Bracket for the always-observed mean of an arm whose observed population
/// (outcome moment `my`, selection probability `ms_obs`) mixes the
/// always-observed stratum (probability `ms_common`) with an extra stratum of
/// probability `extra = ms_obs - ms_common`.
fn trimmed_bracket(my: f64, ms_common: f64, extra: f64, support: &SupportSpec) -> (f64, f64) {
    let (ylo, yhi) = (support.y_lower, support.y_upper);
    // Extra stratum at the top of the support pushes the always-observed mean down, and vice versa.
    let from_top = (my - yhi * extra) / ms_common;
    let from_bottom = (my - ylo * extra) / ms_common;
    match support.case() {
        SupportCase::BelowBounded => (ylo, from_bottom),
        SupportCase::AboveBounded => (from_top, yhi),
        SupportCase::TwoSided => (from_top.max(ylo), from_bottom.min(yhi)),
        SupportCase::RealLine => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Bounds on `E[Y1* | u, S0 = 1, S1 = 1]` under increasing selection.
pub fn treated_component_bounds(v: &MtrValues, support: &SupportSpec) -> Result<(f64, f64)> {
    if v.m0s <= EPS {
        return Err(Error::Numerical(format!("untreated selection probability {} is below the guard", v.m0s)));
    }
    Ok(trimmed_bracket(v.m1y, v.m0s, v.delta_s(), support))
}

fn increasing_bounds(v: &MtrValues, support: &SupportSpec, md: MeanDominance) -> PointBounds {
    if v.m0s <= EPS || (md != MeanDominance::None && v.m1s <= EPS) {
        return PointBounds::guarded();
    }
    let c0 = v.m0y / v.m0s;
    let (tlo, thi) = trimmed_bracket(v.m1y, v.m0s, v.delta_s(), support);
    let (mut lower, mut upper) = (tlo - c0, thi - c0);
    match md {
        MeanDominance::None => {}
        MeanDominance::AlwaysObservedGe => lower = v.m1y / v.m1s - c0,
        MeanDominance::AlwaysObservedLe => upper = v.m1y / v.m1s - c0,
    }
    PointBounds::classified(lower, upper)
}

fn decreasing_bounds(v: &MtrValues, support: &SupportSpec) -> PointBounds {
    if v.m1s <= EPS {
        return PointBounds::guarded();
    }
    let c1 = v.m1y / v.m1s;
    // Under decreasing selection the untreated arm contains the extra stratum.
    let (e0lo, e0hi) = trimmed_bracket(v.m0y, v.m1s, v.m0s - v.m1s, support);
    PointBounds::classified(c1 - e0hi, c1 - e0lo)
}

/// Bounds on `MTE_OO` at one point given the four MTR values.
pub fn bounds_at(v: &MtrValues, support: &SupportSpec, profile: &AssumptionProfile) -> Result<PointBounds> {
    profile.validate()?;
    Ok(match profile.selection {
        SelectionDirection::Increasing => increasing_bounds(v, support, profile.mean_dominance),
        SelectionDirection::Decreasing => decreasing_bounds(v, support),
        SelectionDirection::Agnostic => {
            let inc = increasing_bounds(v, support, MeanDominance::None);
            let dec = decreasing_bounds(v, support);
            if inc.flags.denominator_guard || dec.flags.denominator_guard {
                PointBounds::guarded()
            } else {
                PointBounds::classified(inc.lower.min(dec.lower), inc.upper.max(dec.upper))
            }
        }
        SelectionDirection::NonMonotone => {
            let width = support.y_upper - support.y_lower;
            PointBounds::classified(-width, width)
        }
    })
}

/// Per-`u` bound envelopes and diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCurve {
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub flags: Vec<PointFlags>,
    pub profile: AssumptionProfile,
    pub support: SupportSpec,
}

impl BoundCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Build from per-point bounds.
    pub fn from_points(grid: Vec<f64>, points: &[PointBounds], profile: AssumptionProfile, support: SupportSpec) -> Self {
        Self {
            lower: points.iter().map(|p| p.lower).collect(),
            upper: points.iter().map(|p| p.upper).collect(),
            flags: points.iter().map(|p| p.flags).collect(),
            grid,
            profile,
            support,
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Usage("empty u-grid".into()));
    }
    if grid.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(Error::Domain("u-grid values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Bounds on `MTE_OO(u)` over a grid.
///
/// Under increasing (decreasing) selection the fitted selection MTRs must be
/// ordered accordingly on the grid, up to [`EPS`].
pub fn mte_oo_bounds(mtr: &MTRSet, support: &SupportSpec, profile: &AssumptionProfile, grid: &[f64]) -> Result<BoundCurve> {
    profile.validate()?;
    check_grid(grid)?;
    let mut points = Vec::with_capacity(grid.len());
    for &u in grid {
        let v = mtr.values(u)?;
        match profile.selection {
            SelectionDirection::Increasing if v.delta_s() < -EPS => {
                return Err(Error::validation(format!("m1S < m0S at u = {u}, contradicting increasing selection")))
            }
            SelectionDirection::Decreasing if v.delta_s() > EPS => {
                return Err(Error::validation(format!("m1S > m0S at u = {u}, contradicting decreasing selection")))
            }
            _ => {}
        }
        points.push(bounds_at(&v, support, profile)?);
    }
    Ok(BoundCurve::from_points(grid.to_vec(), &points, *profile, *support))
}

/// Bounds on `E[Y1* | u, S0 = 0, S1 = 1]`, the treated mean of the stratum
/// observed only when treated, under increasing selection.
///
/// Mean dominance caps (`AlwaysObservedGe`) or floors (`AlwaysObservedLe`)
/// the bracket at `m1Y / m1S`, since the observed treated mean is a mixture
/// of the two strata.
pub fn m1_no_bounds(mtr: &MTRSet, support: &SupportSpec, md: MeanDominance, grid: &[f64]) -> Result<BoundCurve> {
    check_grid(grid)?;
    let profile = AssumptionProfile::increasing(md);
    let mut points = Vec::with_capacity(grid.len());
    for &u in grid {
        let v = mtr.values(u)?;
        let delta = v.delta_s();
        if delta <= EPS {
            points.push(PointBounds::guarded());
            continue;
        }
        // Same trimming as for the always-observed mean with the strata swapped.
        let (mut lo, mut hi) = trimmed_bracket(v.m1y, delta, v.m0s, support);
        if v.m1s > EPS {
            let ratio = v.m1y / v.m1s;
            match md {
                MeanDominance::None => {}
                MeanDominance::AlwaysObservedGe => hi = hi.min(ratio),
                MeanDominance::AlwaysObservedLe => lo = lo.max(ratio),
            }
        }
        points.push(PointBounds::classified(lo, hi));
    }
    Ok(BoundCurve::from_points(grid.to_vec(), &points, profile, *support))
}

/// Write a bound curve as CSV `(u, lower, upper, flags)`; infinities as `inf` / `-inf`.
pub fn write_bound_curve<W: Write>(curve: &BoundCurve, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["u", "lower", "upper", "flags"])?;
    for i in 0..curve.len() {
        wtr.write_record([
            curve.grid[i].to_string(),
            curve.lower[i].to_string(),
            curve.upper[i].to_string(),
            curve.flags[i].render(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read the envelopes of a bound curve written by [`write_bound_curve`].
/// The assumption profile and support are not part of the file and must be supplied.
pub fn read_bound_curve<R: Read>(reader: R, profile: AssumptionProfile, support: SupportSpec) -> Result<BoundCurve> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut points = Vec::new();
    let mut grid = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |j: usize, name: &str| -> Result<f64> {
            rec.get(j)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::Parse { row, msg: format!("{name} is not a number") })
        };
        grid.push(num(0, "u")?);
        points.push(PointBounds {
            lower: num(1, "lower")?,
            upper: num(2, "upper")?,
            flags: PointFlags::parse(rec.get(3).unwrap_or(""), row)?,
        });
    }
    Ok(BoundCurve::from_points(grid, &points, profile, support))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::unit_grid;
    use proptest::prelude::*;

    fn illustration_mtr() -> MTRSet {
        MTRSet::linear([2.96, 5.74, 3.00, 8.39], [0.46, 0.66, 0.46, 0.89]).unwrap()
    }

    fn vals(m0y: f64, m1y: f64, m0s: f64, m1s: f64) -> MtrValues {
        MtrValues { m0y, m1y, m0s, m1s }
    }

    #[test]
    fn untreated_component_examples() {
        let t = illustration_mtr();
        assert!((untreated_component(&t.values(0.0).unwrap()).unwrap() - 2.96 / 0.46).abs() < 1e-12);
        assert!((untreated_component(&t.values(0.0).unwrap()).unwrap() - 6.4348).abs() < 1e-4);
        assert!((untreated_component(&t.values(1.0).unwrap()).unwrap() - 8.6970).abs() < 1e-4);
        assert!((untreated_component(&vals(1.5, 0.0, 0.3, 0.4)).unwrap() - 5.0).abs() < 1e-12);
        assert!(untreated_component(&vals(1.0, 1.0, 0.0, 0.5)).is_err());
    }

    #[test]
    fn treated_component_examples() {
        let below = SupportSpec::below_bounded(0.0);
        let v = illustration_mtr().values(1.0).unwrap();
        let (lo, hi) = treated_component_bounds(&v, &below).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 8.39 / 0.66).abs() < 1e-12);
        assert!((hi - 12.7121).abs() < 1e-4);
        let two = SupportSpec::new(0.0, 20.0).unwrap();
        let v = vals(2.0, 3.0, 0.5, 0.5);
        let (lo, hi) = treated_component_bounds(&v, &two).unwrap();
        assert_eq!((lo, hi), (6.0, 6.0));
        let (lo, hi) = treated_component_bounds(&v, &SupportSpec::real_line()).unwrap();
        assert!(lo == f64::NEG_INFINITY && hi == f64::INFINITY);
    }

    #[test]
    fn illustration_examples() {
        let t = illustration_mtr();
        let below = SupportSpec::below_bounded(0.0);
        let md = AssumptionProfile::increasing(MeanDominance::AlwaysObservedGe);
        let c = mte_oo_bounds(&t, &below, &md, &[0.0, 1.0]).unwrap();
        assert!((c.lower[1] - (8.39 / 0.89 - 5.74 / 0.66)).abs() < 1e-12);
        assert!((c.lower[1] - 0.7300).abs() < 1e-4);
        assert!((c.upper[1] - 4.0152).abs() < 1e-4);
        assert!((c.lower[0] - 0.04 / 0.46).abs() < 1e-12 && (c.upper[0] - 0.04 / 0.46).abs() < 1e-12);
        assert!(c.flags[0].point_identified);
        let nomd = AssumptionProfile::increasing(MeanDominance::None);
        let c = mte_oo_bounds(&t, &below, &nomd, &[0.0]).unwrap();
        assert!((c.lower[0] + 6.4348).abs() < 1e-4);
    }

    #[test]
    fn real_line_keeps_a_finite_md_lower_bound() {
        let c = mte_oo_bounds(
            &illustration_mtr(),
            &SupportSpec::real_line(),
            &AssumptionProfile::increasing(MeanDominance::AlwaysObservedGe),
            &[0.5],
        )
        .unwrap();
        assert!(c.lower[0].is_finite() && c.upper[0] == f64::INFINITY);
        let c = mte_oo_bounds(&illustration_mtr(), &SupportSpec::real_line(), &AssumptionProfile::increasing(MeanDominance::None), &[0.5])
            .unwrap();
        assert!(c.lower[0] == f64::NEG_INFINITY && c.upper[0] == f64::INFINITY);
    }

    #[test]
    fn md_le_moves_the_upper_end() {
        let v = illustration_mtr().values(0.6).unwrap();
        let s = SupportSpec::below_bounded(0.0);
        let none = bounds_at(&v, &s, &AssumptionProfile::increasing(MeanDominance::None)).unwrap();
        let le = bounds_at(&v, &s, &AssumptionProfile::increasing(MeanDominance::AlwaysObservedLe)).unwrap();
        assert_eq!(le.lower, none.lower);
        assert!((le.upper - (v.m1y / v.m1s - v.m0y / v.m0s)).abs() < 1e-12);
    }

    #[test]
    fn decreasing_case_formulas() {
        // m1S < m0S: treated arm is the always-observed one.
        let v = vals(6.0, 3.0, 0.8, 0.5);
        let below = SupportSpec::below_bounded(1.0);
        let p = AssumptionProfile::new(SelectionDirection::Decreasing, MeanDominance::None).unwrap();
        let b = bounds_at(&v, &below, &p).unwrap();
        let c1 = 3.0 / 0.5;
        assert!((b.lower - (c1 - (6.0 - 1.0 * 0.3) / 0.5)).abs() < 1e-12);
        assert!((b.upper - (c1 - 1.0)).abs() < 1e-12);
        let above = SupportSpec::new(f64::NEG_INFINITY, 10.0).unwrap();
        let b = bounds_at(&v, &above, &p).unwrap();
        assert!((b.lower - (c1 - 10.0)).abs() < 1e-12);
        assert!((b.upper - (c1 - (6.0 - 10.0 * 0.3) / 0.5)).abs() < 1e-12);
        let two = SupportSpec::new(1.0, 10.0).unwrap();
        let b = bounds_at(&v, &two, &p).unwrap();
        assert!((b.lower - (c1 - ((6.0 - 0.3) / 0.5f64).min(10.0))).abs() < 1e-12);
        assert!((b.upper - (c1 - ((6.0 - 3.0) / 0.5f64).max(1.0))).abs() < 1e-12);
    }

    #[test]
    fn mean_dominance_needs_increasing_selection() {
        assert!(AssumptionProfile::new(SelectionDirection::Decreasing, MeanDominance::AlwaysObservedGe).is_err());
        assert!(AssumptionProfile::new(SelectionDirection::Agnostic, MeanDominance::AlwaysObservedLe).is_err());
    }

    #[test]
    fn non_monotone_profile_is_uninformative() {
        let p = AssumptionProfile::new(SelectionDirection::NonMonotone, MeanDominance::None).unwrap();
        let b = bounds_at(&vals(1.0, 1.0, 0.5, 0.6), &SupportSpec::new(2.0, 5.0).unwrap(), &p).unwrap();
        assert_eq!((b.lower, b.upper), (-3.0, 3.0));
    }

    #[test]
    fn guards_and_empty_intervals_are_flagged() {
        let p = AssumptionProfile::increasing(MeanDominance::AlwaysObservedGe);
        let b = bounds_at(&vals(0.0, 1.0, 0.0, 0.5), &SupportSpec::below_bounded(0.0), &p).unwrap();
        assert!(b.flags.denominator_guard);
        // m1Y/m1S far above the trimmed upper end: mean dominance crosses.
        let two = SupportSpec::new(0.0, 1.0).unwrap();
        let b = bounds_at(&vals(0.1, 0.9, 0.5, 0.9), &two, &p).unwrap();
        assert!(!b.flags.empty_interval);
        let b = bounds_at(&vals(0.25, 0.6, 0.5, 0.6), &SupportSpec::new(0.0, 1.0).unwrap(), &p).unwrap();
        assert!(b.lower <= b.upper);
        let b = PointBounds::classified(1.0, 0.5);
        assert!(b.flags.empty_interval);
    }

    #[test]
    fn increasing_profile_rejects_crossing_selection_mtrs() {
        let bad = MTRSet::new(
            illustration_mtr().y,
            crate::mtr_bernstein::BernsteinMTR::new(
                vec![0.6, 0.6],
                vec![0.5, 0.5],
                crate::mtr_bernstein::Variable::S,
                crate::mtr_bernstein::FeasibleSet::UnitBox,
            )
            .unwrap(),
        )
        .unwrap();
        let r = mte_oo_bounds(&bad, &SupportSpec::below_bounded(0.0), &AssumptionProfile::increasing(MeanDominance::None), &[0.5]);
        assert!(r.is_err());
    }

    #[test]
    fn m1_no_examples() {
        let t = illustration_mtr();
        let below = SupportSpec::below_bounded(0.0);
        let c = m1_no_bounds(&t, &below, MeanDominance::None, &[1.0]).unwrap();
        assert_eq!(c.lower[0], 0.0);
        assert!((c.upper[0] - 8.39 / 0.23).abs() < 1e-9);
        assert!((c.upper[0] - 36.478).abs() < 1e-3);
        let c = m1_no_bounds(&t, &below, MeanDominance::AlwaysObservedGe, &[1.0]).unwrap();
        assert!((c.upper[0] - 9.4270).abs() < 1e-4);
        // Saturation: m1Y = ybar * m1S puts the lower end at the top of the support.
        let y = crate::mtr_bernstein::BernsteinMTR::new(
            vec![1.0, 1.0],
            vec![0.8 * 10.0, 0.8 * 10.0],
            crate::mtr_bernstein::Variable::Y,
            crate::mtr_bernstein::FeasibleSet::Nonneg,
        )
        .unwrap();
        let s = crate::mtr_bernstein::BernsteinMTR::new(
            vec![0.5, 0.5],
            vec![0.8, 0.8],
            crate::mtr_bernstein::Variable::S,
            crate::mtr_bernstein::FeasibleSet::UnitBoxIncreasing,
        )
        .unwrap();
        let set = MTRSet::new(y, s).unwrap();
        let c = m1_no_bounds(&set, &SupportSpec::new(0.0, 10.0).unwrap(), MeanDominance::None, &[0.3]).unwrap();
        assert!((c.lower[0] - 10.0).abs() < 1e-12);
        // Zero Delta_S: stratum absent, flagged.
        let c = m1_no_bounds(&illustration_mtr(), &below, MeanDominance::None, &[0.0]).unwrap();
        assert!(c.flags[0].denominator_guard);
    }

    #[test]
    fn csv_roundtrip_with_infinities() {
        let c = mte_oo_bounds(&illustration_mtr(), &SupportSpec::real_line(), &AssumptionProfile::increasing(MeanDominance::None), &unit_grid(5))
            .unwrap();
        let mut buf = Vec::new();
        write_bound_curve(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("-inf,inf"));
        let back = read_bound_curve(buf.as_slice(), c.profile, c.support).unwrap();
        assert_eq!(back, c);
    }

    /// Random feasible values for the four MTRs with `m1S >= m0S`, an outcome
    /// support `[ylo, yhi]`, and outcome moments consistent with it.
    fn feasible_values() -> impl Strategy<Value = (MtrValues, f64, f64)> {
        (0.01..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, -5.0..5.0f64, 0.1..10.0f64).prop_map(
            |(m0s, frac, r0, r1, ylo, width)| {
                let m1s = m0s + frac * (1.0 - m0s);
                let yhi = ylo + width;
                let m0y = m0s * (ylo + r0 * width);
                let m1y = m1s * (ylo + r1 * width);
                (MtrValues { m0y, m1y, m0s, m1s }, ylo, yhi)
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn md_lower_is_weakly_tighter((v, ylo, yhi) in feasible_values()) {
            for support in [SupportSpec::new(ylo, yhi).unwrap(), SupportSpec::below_bounded(ylo),
                            SupportSpec::new(f64::NEG_INFINITY, yhi).unwrap(), SupportSpec::real_line()] {
                let a = bounds_at(&v, &support, &AssumptionProfile::increasing(MeanDominance::None)).unwrap();
                let b = bounds_at(&v, &support, &AssumptionProfile::increasing(MeanDominance::AlwaysObservedGe)).unwrap();
                prop_assert!(b.lower >= a.lower - 1e-12 * (1.0 + a.lower.abs()));
                prop_assert_eq!(a.upper, b.upper);
            }
        }

        #[test]
        fn agnostic_is_the_envelope((v, ylo, yhi) in feasible_values()) {
            let s = SupportSpec::new(ylo, yhi).unwrap();
            let inc = bounds_at(&v, &s, &AssumptionProfile::increasing(MeanDominance::None)).unwrap();
            let dec = bounds_at(&v, &s, &AssumptionProfile::new(SelectionDirection::Decreasing, MeanDominance::None).unwrap()).unwrap();
            let ag = bounds_at(&v, &s, &AssumptionProfile::new(SelectionDirection::Agnostic, MeanDominance::None).unwrap()).unwrap();
            prop_assert_eq!(ag.lower, inc.lower.min(dec.lower));
            prop_assert_eq!(ag.upper, inc.upper.max(dec.upper));
        }

        #[test]
        fn two_sided_outputs_stay_in_range((v, ylo, yhi) in feasible_values()) {
            let s = SupportSpec::new(ylo, yhi).unwrap();
            for md in [MeanDominance::None, MeanDominance::AlwaysObservedGe, MeanDominance::AlwaysObservedLe] {
                let b = bounds_at(&v, &s, &AssumptionProfile::increasing(md)).unwrap();
                let w = yhi - ylo + 1e-9;
                prop_assert!(b.lower >= -w && b.upper <= w);
            }
        }

        /// Holds whenever the support straddles zero; with `0 < ylo` the
        /// clipped width `(m1Y - ylo m1S) / m0S` shrinks as `m1S` grows.
        #[test]
        fn width_grows_with_delta((v, ylo, yhi) in feasible_values(), bump in 0.0..1.0f64) {
            let s = SupportSpec::new(ylo.min(0.0), yhi.max(0.0)).unwrap();
            let p = AssumptionProfile::increasing(MeanDominance::None);
            let wider = MtrValues { m1s: v.m1s + bump * (1.0 - v.m1s), ..v };
            let a = bounds_at(&v, &s, &p).unwrap();
            let b = bounds_at(&wider, &s, &p).unwrap();
            prop_assert!(b.upper - b.lower >= a.upper - a.lower - 1e-12);
        }

        #[test]
        fn zero_delta_point_identifies_two_sided((v, ylo, yhi) in feasible_values()) {
            let z = MtrValues { m1s: v.m0s, m1y: v.m0s * (v.m1y / v.m1s), ..v };
            let b = bounds_at(&z, &SupportSpec::new(ylo, yhi).unwrap(), &AssumptionProfile::increasing(MeanDominance::None)).unwrap();
            prop_assert!(b.flags.point_identified, "{:?}", b);
        }
    }
}
