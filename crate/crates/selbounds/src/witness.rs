//! Explicit distributions attaining interior points of the bounds.
//!
//! The bounds are sharp: every `δ` strictly between the lower and upper bound
//! at `ū` is the always-observed MTE of some joint distribution of
//! `(V, S0, S1, Y0*, Y1*)` given `U = ū` that reproduces the four MTR values.
//! This module builds that distribution and checks it.
//!
//! Given `α = δ + m0Y/m0S` and `γ = (m1Y - α m0S) / Δ_S`, the construction is
//!
//! * a latent selection index `V` with a piecewise-linear CDF through
//!   `(q0, m0S)` and `(q1, m1S)`, where `q_d = ∫ m_d^S`, and `S_d = 1{V <= q_d}`;
//! * on `V <= q0` (always observed): `Y0* = m0Y/m0S` and `Y1* = α`;
//! * on `q0 < V <= q1` (observed only when treated): `Y1* = γ`;
//! * everywhere else the outcome is never observed and set to a filler value
//!   inside the support.
//!
//! Interior `δ` puts `α` and `γ` strictly inside the support. In the
//! two-point mode (two-sided support only) each conditional law is instead a
//! mixture of the two support endpoints with the required mean.

use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::bounds_engine::{bounds_at, AssumptionProfile, MeanDominance, SupportCase, SupportSpec, EPS};
use crate::error::{Error, Result};
use crate::mtr_bernstein::{BernsteinMTR, FeasibleSet, MTRSet, MtrValues, Variable};
use crate::rng;

/// Required distance of `δ` from either bound.
pub const INTERIOR_MARGIN: f64 = 1e-9;

/// Tolerance of the analytic identities, relative to `max(1, |target|)`.
pub const ANALYTIC_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdMode {
    Off,
    /// Additionally require the always-observed treated mean to dominate.
    Ge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WitnessMode {
    /// Point masses at the required conditional means.
    PointMass,
    /// Two-point laws on the support endpoints.
    TwoPoint,
}

/// Conditional law of a potential outcome on one `V` segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutcomeLaw {
    Point(f64),
    /// `hi` with probability `p_hi`, otherwise `lo`.
    TwoPoint { lo: f64, hi: f64, p_hi: f64 },
}

impl OutcomeLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            OutcomeLaw::Point(v) => v,
            OutcomeLaw::TwoPoint { lo, hi, p_hi } => lo + p_hi * (hi - lo),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            OutcomeLaw::Point(v) => v,
            OutcomeLaw::TwoPoint { lo, hi, p_hi } => {
                if rng.random::<f64>() < p_hi {
                    hi
                } else {
                    lo
                }
            }
        }
    }
}

/// The constructed conditional distribution at `U = ū`.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessDistribution {
    pub u_bar: f64,
    pub delta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub q0: f64,
    pub q1: f64,
    /// MTR values at `ū` that the distribution must reproduce.
    pub values: MtrValues,
    pub md_mode: MdMode,
    pub mode: WitnessMode,
    /// Laws of `(Y0*, Y1*)` on the segments `V <= q0`, `q0 < V <= q1`, `V > q1`.
    pub segments: [(OutcomeLaw, OutcomeLaw); 3],
}

impl WitnessDistribution {
    /// CDF of `V` given `U = ū`.
    pub fn v_cdf(&self, v: f64) -> f64 {
        let m = &self.values;
        if v <= 0.0 {
            0.0
        } else if v <= self.q0 {
            v * m.m0s / self.q0
        } else if v <= self.q1 {
            m.m0s + (v - self.q0) * m.delta_s() / (self.q1 - self.q0)
        } else if v < 1.0 {
            m.m1s + (v - self.q1) * (1.0 - m.m1s) / (1.0 - self.q1)
        } else {
            1.0
        }
    }

    /// Inverse CDF of `V`.
    pub fn v_quantile(&self, w: f64) -> f64 {
        let m = &self.values;
        if w <= m.m0s {
            w * self.q0 / m.m0s
        } else if w <= m.m1s {
            self.q0 + (w - m.m0s) * (self.q1 - self.q0) / m.delta_s()
        } else {
            self.q1 + (w - m.m1s) * (1.0 - self.q1) / (1.0 - m.m1s)
        }
    }

    fn segment(&self, v: f64) -> usize {
        if v <= self.q0 {
            0
        } else if v <= self.q1 {
            1
        } else {
            2
        }
    }
}

fn filler(support: &SupportSpec) -> f64 {
    match support.case() {
        SupportCase::TwoSided => 0.5 * (support.y_lower + support.y_upper),
        SupportCase::BelowBounded => support.y_lower + 1.0,
        SupportCase::AboveBounded => support.y_upper - 1.0,
        SupportCase::RealLine => 0.0,
    }
}

fn two_point(mean: f64, support: &SupportSpec) -> OutcomeLaw {
    let (lo, hi) = (support.y_lower, support.y_upper);
    OutcomeLaw::TwoPoint { lo, hi, p_hi: (mean - lo) / (hi - lo) }
}

/// Build the witness with point-mass conditional laws.
pub fn build_witness(mtr: &MTRSet, u_bar: f64, delta: f64, support: &SupportSpec, md_mode: MdMode) -> Result<WitnessDistribution> {
    build_witness_with(mtr, u_bar, delta, support, md_mode, WitnessMode::PointMass)
}

/// Build the witness in the requested mode.
pub fn build_witness_with(
    mtr: &MTRSet,
    u_bar: f64,
    delta: f64,
    support: &SupportSpec,
    md_mode: MdMode,
    mode: WitnessMode,
) -> Result<WitnessDistribution> {
    if mode == WitnessMode::TwoPoint && support.case() != SupportCase::TwoSided {
        return Err(Error::Usage("the two-point witness needs a two-sided support".into()));
    }
    let v = mtr.values(u_bar)?;
    let q0 = mtr.s.integral(crate::mtr_bernstein::Arm::Untreated);
    let q1 = mtr.s.integral(crate::mtr_bernstein::Arm::Treated);
    if !(q0 > 0.0 && q0 < q1 && q1 < 1.0) {
        return Err(Error::Degenerate(format!("selection shares must satisfy 0 < q0 < q1 < 1, got q0 = {q0}, q1 = {q1}")));
    }
    if v.m0s <= EPS || v.delta_s() <= EPS || v.m1s >= 1.0 {
        return Err(Error::Degenerate(format!(
            "witness needs m0S > 0, m1S - m0S > 0 and m1S < 1 at u = {u_bar} (m0S = {}, m1S = {})",
            v.m0s, v.m1s
        )));
    }
    let b = bounds_at(&v, support, &AssumptionProfile::increasing(MeanDominance::None))?;
    let margin = INTERIOR_MARGIN * (1.0 - 1e-6);
    if !(delta - b.lower >= margin && b.upper - delta >= margin) {
        return Err(Error::OutOfInterior { delta, lower: b.lower, upper: b.upper });
    }
    let c0 = v.m0y / v.m0s;
    let alpha = delta + c0;
    let gamma = (v.m1y - alpha * v.m0s) / v.delta_s();
    let ratio = v.m1y / v.m1s;
    if md_mode == MdMode::Ge && gamma > ratio {
        return Err(Error::MeanDominanceViolation { gamma, ratio });
    }
    let fill = match mode {
        WitnessMode::PointMass => filler(support),
        WitnessMode::TwoPoint => support.y_upper,
    };
    let law = |m: f64| match mode {
        WitnessMode::PointMass => OutcomeLaw::Point(m),
        WitnessMode::TwoPoint => two_point(m, support),
    };
    let segments = [
        (law(c0), law(alpha)),
        (OutcomeLaw::Point(fill), law(gamma)),
        (OutcomeLaw::Point(fill), OutcomeLaw::Point(fill)),
    ];
    Ok(WitnessDistribution { u_bar, delta, alpha, gamma, q0, q1, values: v, md_mode, mode, segments })
}

/// One verified moment.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessCheck {
    pub name: &'static str,
    pub target: f64,
    pub analytic: f64,
    pub analytic_ok: bool,
    /// Simulated value and its standard error, when simulated.
    pub empirical: Option<(f64, f64)>,
    pub empirical_ok: bool,
}

/// Outcome of [`verify_witness`].
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessReport {
    pub checks: Vec<WitnessCheck>,
    pub n_draws: usize,
    pub seed: u64,
}

impl WitnessReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.analytic_ok && c.empirical_ok)
    }

    /// CSV `(check, target, analytic, empirical, se, analytic_ok, empirical_ok)`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["check", "target", "analytic", "empirical", "se", "analytic_ok", "empirical_ok"])?;
        for c in &self.checks {
            let (e, s) = c.empirical.map(|(e, s)| (e.to_string(), s.to_string())).unwrap_or_default();
            wtr.write_record([
                c.name.to_string(),
                c.target.to_string(),
                c.analytic.to_string(),
                e,
                s,
                c.analytic_ok.to_string(),
                c.empirical_ok.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl fmt::Display for WitnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "witness verification ({} draws, seed {})", self.n_draws, self.seed)?;
        for c in &self.checks {
            write!(f, "  {:<28} target {:>14.8}  analytic {:>14.8} [{}]", c.name, c.target, c.analytic, ok(c.analytic_ok))?;
            if let Some((e, s)) = c.empirical {
                write!(f, "  simulated {e:>12.6} (se {s:.2e}) [{}]", ok(c.empirical_ok))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// Running mean and variance (Welford), exact for constant streams.
#[derive(Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn mean_se(&self) -> (f64, f64) {
        let var = (self.m2 / (self.n - 1.0)).max(0.0);
        (self.mean, (var / self.n).sqrt())
    }
}

/// Check the analytic identities of `w` and simulate `n_draws` units from it.
///
/// A failed analytic identity means the construction itself is wrong and is
/// returned as an error; simulation checks are reported (within four
/// Monte Carlo standard errors, or exactly when the standard error is zero).
pub fn verify_witness(w: &WitnessDistribution, n_draws: usize, seed: u64) -> Result<WitnessReport> {
    if n_draws < 10_000 {
        return Err(Error::Usage("witness verification needs at least 10^4 draws".into()));
    }
    let m = &w.values;
    let f0 = w.v_cdf(w.q0);
    let f1 = w.v_cdf(w.q1);
    let (a, b) = (&w.segments[0], &w.segments[1]);
    let mut analytic = vec![
        ("P[S0=1]", m.m0s, f0),
        ("P[S1=1]", m.m1s, f1),
        ("P[S0=0,S1=1]", m.delta_s(), f1 - f0),
        ("P[S0=1,S1=1]", m.m0s, f0.min(f1)),
        ("E[S0*Y0]", m.m0y, f0 * a.0.mean()),
        ("E[S1*Y1]", m.m1y, f0 * a.1.mean() + (f1 - f0) * b.1.mean()),
        ("E[Y1-Y0|S0=1,S1=1]", w.delta, a.1.mean() - a.0.mean()),
    ];
    if w.md_mode == MdMode::Ge {
        // Dominance holds iff the always-observed mean is at least m1Y/m1S.
        let ratio = m.m1y / m.m1s;
        analytic.push(("mean dominance margin", 0.0, (a.1.mean() - ratio).min(0.0)));
    }
    let mut checks: Vec<WitnessCheck> = analytic
        .into_iter()
        .map(|(name, target, value)| WitnessCheck {
            name,
            target,
            analytic: value,
            analytic_ok: (value - target).abs() <= ANALYTIC_TOL * target.abs().max(1.0),
            empirical: None,
            empirical_ok: true,
        })
        .collect();
    if let Some(bad) = checks.iter().find(|c| !c.analytic_ok) {
        return Err(Error::Construction(format!("{}: {} vs target {}", bad.name, bad.analytic, bad.target)));
    }

    let mut rng = rng::stream(seed, 0);
    let (mut s0, mut s1, mut s0y0, mut s1y1, mut diff) =
        (Moments::default(), Moments::default(), Moments::default(), Moments::default(), Moments::default());
    for _ in 0..n_draws {
        let v = w.v_quantile(rng.random::<f64>());
        let (l0, l1) = &w.segments[w.segment(v)];
        let y0 = l0.draw(&mut rng);
        let y1 = l1.draw(&mut rng);
        let (d0, d1) = (f64::from(u8::from(v <= w.q0)), f64::from(u8::from(v <= w.q1)));
        s0.push(d0);
        s1.push(d1);
        s0y0.push(d0 * y0);
        s1y1.push(d1 * y1);
        if d0 == 1.0 && d1 == 1.0 {
            diff.push(y1 - y0);
        }
    }
    let sims = [("P[S0=1]", s0), ("P[S1=1]", s1), ("E[S0*Y0]", s0y0), ("E[S1*Y1]", s1y1), ("E[Y1-Y0|S0=1,S1=1]", diff)];
    for (name, mom) in sims {
        let c = checks.iter_mut().find(|c| c.name == name).expect("check exists");
        let (mean, se) = mom.mean_se();
        let err = (mean - c.target).abs();
        c.empirical = Some((mean, se));
        c.empirical_ok = if se > 0.0 { err <= 4.0 * se } else { err <= 1e-12 * c.target.abs().max(1.0) };
    }
    Ok(WitnessReport { checks, n_draws, seed })
}

/// A random MTR set satisfying increasing selection with a strictly
/// positive `Delta_S`, selection shares below one, and outcome MTRs whose
/// implied conditional means lie in `support` (the upper end is capped at
/// `y_lower + 10` for one-sided supports).
pub fn random_feasible_mtrset<R: Rng>(rng: &mut R, support: &SupportSpec, l: usize) -> Result<MTRSet> {
    let (ylo, yhi) = match support.case() {
        SupportCase::TwoSided => (support.y_lower, support.y_upper),
        SupportCase::BelowBounded => (support.y_lower, support.y_lower + 10.0),
        SupportCase::AboveBounded => (support.y_upper - 10.0, support.y_upper),
        SupportCase::RealLine => (-5.0, 5.0),
    };
    let theta0s: Vec<f64> = (0..l).map(|_| rng.random_range(0.05..0.8)).collect();
    let theta1s: Vec<f64> = theta0s.iter().map(|t| t + rng.random_range(0.02..0.15)).collect();
    let mut scale = |ts: &[f64]| -> Vec<f64> { ts.iter().map(|t| t * rng.random_range(ylo..yhi)).collect() };
    let theta0y = scale(&theta0s);
    let theta1y = scale(&theta1s);
    let yset = if ylo >= 0.0 { FeasibleSet::Nonneg } else { FeasibleSet::Unrestricted };
    MTRSet::new(
        BernsteinMTR::new(theta0y, theta1y, Variable::Y, yset)?,
        BernsteinMTR::new(theta0s, theta1s, Variable::S, FeasibleSet::UnitBoxIncreasing)?,
    )
}

/// Draw `δ` uniformly from the middle 98% of the bounds at `u` (a span of 10
/// above a finite lower bound when the upper bound is infinite, and similarly below).
pub fn random_interior_delta<R: Rng>(rng: &mut R, v: &MtrValues, support: &SupportSpec, md_mode: MdMode) -> Result<f64> {
    let md = if md_mode == MdMode::Ge { MeanDominance::AlwaysObservedGe } else { MeanDominance::None };
    let b = bounds_at(v, support, &AssumptionProfile::increasing(md))?;
    let t = rng.random_range(0.01..0.99);
    Ok(match (b.lower.is_finite(), b.upper.is_finite()) {
        (true, true) => b.lower + t * (b.upper - b.lower),
        (true, false) => b.lower + 10.0 * t,
        (false, true) => b.upper - 10.0 * t,
        (false, false) => 10.0 * (t - 0.5),
    })
}

/// Convenience: a seeded random case for property tests.
pub fn random_case(seed: u64, index: u64, support: &SupportSpec, md_mode: MdMode) -> Result<(MTRSet, f64, f64)> {
    let mut r = rng::stream(seed, index);
    let l = r.random_range(1..=4);
    let mtr = random_feasible_mtrset(&mut r, support, l)?;
    let u = r.random_range(0.0..=1.0);
    let delta = random_interior_delta(&mut r, &mtr.values(u)?, support, md_mode)?;
    Ok((mtr, u, delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn illustration_mtr() -> MTRSet {
        MTRSet::linear([2.96, 5.74, 3.00, 8.39], [0.46, 0.66, 0.46, 0.89]).unwrap()
    }

    #[test]
    fn illustration_example() {
        let w = build_witness(&illustration_mtr(), 0.5, 1.0, &SupportSpec::below_bounded(0.0), MdMode::Off).unwrap();
        assert!((w.values.m0s - 0.56).abs() < 1e-12 && (w.values.m1s - 0.675).abs() < 1e-12);
        assert!((w.values.m0y - 4.35).abs() < 1e-12 && (w.values.m1y - 5.695).abs() < 1e-12);
        assert!((w.alpha - (1.0 + 4.35 / 0.56)).abs() < 1e-12);
        assert!((w.alpha - 8.7679).abs() < 1e-4);
        assert!((w.gamma - 6.8258).abs() < 1e-3, "{}", w.gamma);
        assert!((w.alpha * 0.56 + w.gamma * 0.115 - 5.695).abs() < 1e-12);
        assert!((w.q0 - 0.56).abs() < 1e-12 && (w.q1 - 0.675).abs() < 1e-12);
        let rep = verify_witness(&w, 100_000, 11).unwrap();
        assert!(rep.all_pass(), "{rep}");
    }

    #[test]
    fn symmetric_null() {
        // theta_Y = 2.5 theta_S in both arms, delta = 0 -> alpha = gamma = m0Y/m0S.
        let set = MTRSet::linear([1.0, 1.25, 1.5, 2.0], [0.4, 0.5, 0.6, 0.8]).unwrap();
        let w = build_witness(&set, 0.3, 0.0, &SupportSpec::below_bounded(0.0), MdMode::Off).unwrap();
        let c0 = w.values.m0y / w.values.m0s;
        assert!((w.alpha - c0).abs() < 1e-12 && (w.gamma - c0).abs() < 1e-12);
    }

    #[test]
    fn md_boundary_limit() {
        let set = illustration_mtr();
        let v = set.values(0.5).unwrap();
        let lower = v.m1y / v.m1s - v.m0y / v.m0s;
        let w = build_witness(&set, 0.5, lower + 1e-9, &SupportSpec::below_bounded(0.0), MdMode::Ge).unwrap();
        assert!((w.alpha - v.m1y / v.m1s).abs() < 1e-8 && (w.gamma - v.m1y / v.m1s).abs() < 1e-7);
        assert!(matches!(
            build_witness(&set, 0.5, lower - 0.1, &SupportSpec::below_bounded(0.0), MdMode::Ge),
            Err(Error::MeanDominanceViolation { .. })
        ));
    }

    #[test]
    fn out_of_interior_is_refused() {
        let set = illustration_mtr();
        let s = SupportSpec::below_bounded(0.0);
        let v = set.values(0.5).unwrap();
        let b = bounds_at(&v, &s, &AssumptionProfile::increasing(MeanDominance::None)).unwrap();
        assert!(matches!(build_witness(&set, 0.5, b.lower, &s, MdMode::Off), Err(Error::OutOfInterior { .. })));
        assert!(matches!(build_witness(&set, 0.5, b.upper + 1.0, &s, MdMode::Off), Err(Error::OutOfInterior { .. })));
        assert!(build_witness(&set, 0.5, b.lower + 1e-9, &s, MdMode::Off).is_ok());
        // Delta_S = 0 at u = 0 leaves no interior.
        assert!(matches!(build_witness(&set, 0.0, 0.0, &s, MdMode::Off), Err(Error::Degenerate(_))));
    }

    #[test]
    fn v_cdf_is_valid_and_inverted() {
        let w = build_witness(&illustration_mtr(), 0.7, 1.5, &SupportSpec::below_bounded(0.0), MdMode::Off).unwrap();
        let mut prev = 0.0;
        for i in 0..=1000 {
            let v = i as f64 / 1000.0;
            let f = w.v_cdf(v);
            assert!(f >= prev - 1e-15);
            prev = f;
            assert!((w.v_cdf(w.v_quantile(f)) - f).abs() < 1e-12);
        }
        assert_eq!(w.v_cdf(0.0), 0.0);
        assert_eq!(w.v_cdf(1.0), 1.0);
    }

    #[test]
    fn two_point_mode() {
        let s = SupportSpec::new(0.0, 20.0).unwrap();
        let w = build_witness_with(&illustration_mtr(), 0.5, 1.0, &s, MdMode::Off, WitnessMode::TwoPoint).unwrap();
        assert!(matches!(w.segments[0].1, OutcomeLaw::TwoPoint { .. }));
        let rep = verify_witness(&w, 200_000, 5).unwrap();
        assert!(rep.all_pass(), "{rep}");
        assert!(build_witness_with(&illustration_mtr(), 0.5, 1.0, &SupportSpec::below_bounded(0.0), MdMode::Off, WitnessMode::TwoPoint).is_err());
    }

    #[test]
    fn delta_to_alpha_gamma_is_affine_and_round_trips() {
        let s = SupportSpec::below_bounded(0.0);
        let w1 = build_witness(&illustration_mtr(), 0.5, 0.5, &s, MdMode::Off).unwrap();
        let w2 = build_witness(&illustration_mtr(), 0.5, 1.0, &s, MdMode::Off).unwrap();
        let w3 = build_witness(&illustration_mtr(), 0.5, 1.5, &s, MdMode::Off).unwrap();
        assert!(((w3.alpha - w2.alpha) - (w2.alpha - w1.alpha)).abs() < 1e-12);
        assert!(((w3.gamma - w2.gamma) - (w2.gamma - w1.gamma)).abs() < 1e-12);
        assert_eq!(w2.segments[0].1.mean() - w2.segments[0].0.mean(), w2.alpha - w2.values.m0y / w2.values.m0s);
    }

    #[test]
    fn random_cases_verify() {
        for support in [SupportSpec::below_bounded(0.0), SupportSpec::new(-2.0, 6.0).unwrap()] {
            for i in 0..10 {
                let (set, u, delta) = random_case(99, i, &support, MdMode::Off).unwrap();
                let w = build_witness(&set, u, delta, &support, MdMode::Off).unwrap();
                let rep = verify_witness(&w, 20_000, i).unwrap();
                assert!(rep.checks.iter().all(|c| c.analytic_ok), "{rep}");
            }
        }
    }

    #[test]
    fn report_csv_has_a_row_per_check() {
        let w = build_witness(&illustration_mtr(), 0.5, 1.0, &SupportSpec::below_bounded(0.0), MdMode::Ge).unwrap();
        let rep = verify_witness(&w, 10_000, 1).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rep.checks.len() + 1);
    }
}
