//! Local instrumental variable identification of MTRs.
//!
//! When the propensity score varies continuously, the MTR of any variable `A`
//! is pinned down by the conditional mean of `A` given `P = p` within each
//! treatment arm and its derivative in `p`:
//!
//! ```text
//! m0(p) = E[A | P=p, D=0] - (1 - p) d/dp E[A | P=p, D=0]
//! m1(p) = E[A | P=p, D=1] +      p  d/dp E[A | P=p, D=1]
//! ```
//!
//! Both follow from `(1-p) E[A|p,D=0] = ∫_p^1 m0(u) du` and
//! `p E[A|p,D=1] = ∫_0^p m1(u) du`. The conditional means and slopes are
//! estimated by Epanechnikov local-linear regression; grid points whose
//! kernel window leaves the observed propensity range are not reported.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mtr_bernstein::{bernstein_integral, Arm, BernsteinMTR};
use crate::rng;

/// Multiplier applied to the Silverman rule of thumb.
pub const BANDWIDTH_SCALE: f64 = 1.5;

fn epanechnikov(t: f64) -> f64 {
    if t.abs() < 1.0 {
        0.75 * (1.0 - t * t)
    } else {
        0.0
    }
}

/// Weighted local-linear fit at `p0`: returns `(value, slope)`.
///
/// `points` holds `(p_i, a_i, w_i)`. Fails with `BandwidthTooSmall` when fewer
/// than two distinct points receive positive kernel weight.
pub fn local_linear(points: &[(f64, f64, f64)], p0: f64, bandwidth: f64) -> Result<(f64, f64)> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Usage(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut effective = 0usize;
    for &(p, a, w) in points {
        let k = w * epanechnikov((p - p0) / bandwidth);
        if k <= 0.0 {
            continue;
        }
        effective += 1;
        let x = p - p0;
        s0 += k;
        s1 += k * x;
        s2 += k * x * x;
        t0 += k * a;
        t1 += k * x * a;
    }
    let det = s0 * s2 - s1 * s1;
    if effective < 2 || det <= 1e-14 * s0 * s2.max(f64::MIN_POSITIVE) {
        return Err(Error::BandwidthTooSmall { at: p0, effective });
    }
    let value = (s2 * t0 - s1 * t1) / det;
    let slope = (s0 * t1 - s1 * t0) / det;
    Ok((value, slope))
}

/// Silverman's rule `1.06 σ n^{-1/5}` on the propensity values, times [`BANDWIDTH_SCALE`].
pub fn default_bandwidth(ps: &[f64]) -> Result<f64> {
    let n = ps.len();
    if n < 2 {
        return Err(Error::InsufficientVariation("need at least two propensity values".into()));
    }
    let mean = ps.iter().sum::<f64>() / n as f64;
    let sd = (ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if sd <= 0.0 {
        return Err(Error::InsufficientVariation("propensity score does not vary".into()));
    }
    Ok(BANDWIDTH_SCALE * 1.06 * sd * (n as f64).powf(-0.2))
}

/// Conditional mean of a variable given `P = p` within one arm, with its slope.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMeanCurve {
    pub arm: Arm,
    pub grid: Vec<f64>,
    pub value: Vec<f64>,
    pub derivative: Vec<f64>,
}

impl ConditionalMeanCurve {
    pub fn new(arm: Arm, grid: Vec<f64>, value: Vec<f64>, derivative: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.len() != value.len() || grid.len() != derivative.len() {
            return Err(Error::validation("grid, value and derivative must be non-empty and equally long"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::validation("grid must be strictly increasing inside (0, 1)"));
        }
        if value.iter().chain(&derivative).any(|v| !v.is_finite()) {
            return Err(Error::validation("conditional means and slopes must be finite"));
        }
        Ok(Self { arm, grid, value, derivative })
    }

    /// MTR implied at grid index `i`.
    pub fn mtr_at(&self, i: usize) -> f64 {
        let p = self.grid[i];
        match self.arm {
            Arm::Untreated => self.value[i] - self.derivative[i] * (1.0 - p),
            Arm::Treated => self.value[i] + self.derivative[i] * p,
        }
    }

    /// CSV `(p, value, slope, mtr)`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["p", "value", "slope", "mtr"])?;
        for i in 0..self.grid.len() {
            wtr.write_record([
                self.grid[i].to_string(),
                self.value[i].to_string(),
                self.derivative[i].to_string(),
                self.mtr_at(i).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Estimate the conditional-mean curve for one arm on `grid`.
///
/// `points` holds `(p_i, a_i, w_i)` for the units in that arm. The bandwidth
/// defaults to [`default_bandwidth`]. Grid points within one bandwidth of the
/// edge of the observed propensity range are dropped.
pub fn estimate_curve(points: &[(f64, f64, f64)], arm: Arm, grid: &[f64], bandwidth: Option<f64>) -> Result<ConditionalMeanCurve> {
    if points.is_empty() {
        return Err(Error::InsufficientVariation("no observations in this arm".into()));
    }
    let h = match bandwidth {
        Some(h) => h,
        None => default_bandwidth(&points.iter().map(|p| p.0).collect::<Vec<_>>())?,
    };
    let (pmin, pmax) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let inside: Vec<f64> = grid.iter().copied().filter(|&p| p - h >= pmin && p + h <= pmax).collect();
    if inside.is_empty() {
        return Err(Error::BandwidthTooSmall { at: f64::NAN, effective: 0 });
    }
    let fits: Vec<(f64, f64)> = inside.par_iter().map(|&p0| local_linear(points, p0, h)).collect::<Result<_>>()?;
    let (value, derivative) = fits.into_iter().unzip();
    ConditionalMeanCurve::new(arm, inside, value, derivative)
}

/// MTR at `p`, interpolated linearly between grid points.
pub fn mtr_from_liv(curve: &ConditionalMeanCurve, p: f64) -> Result<f64> {
    let g = &curve.grid;
    let (lo, hi) = (g[0], g[g.len() - 1]);
    if !(p >= lo && p <= hi) {
        return Err(Error::Extrapolation { p, lo, hi });
    }
    let j = g.partition_point(|&x| x < p);
    if g[j] == p {
        return Ok(curve.mtr_at(j));
    }
    let t = (p - g[j - 1]) / (g[j] - g[j - 1]);
    Ok((1.0 - t) * curve.mtr_at(j - 1) + t * curve.mtr_at(j))
}

/// The exact conditional-mean curve implied by a Bernstein MTR.
pub fn curve_from_mtr(mtr: &BernsteinMTR, arm: Arm, grid: &[f64]) -> Result<ConditionalMeanCurve> {
    let theta = mtr.theta(arm);
    let mut value = Vec::with_capacity(grid.len());
    let mut derivative = Vec::with_capacity(grid.len());
    for &p in grid {
        let m = mtr.eval(arm, p)?;
        let (v, d) = match arm {
            Arm::Untreated => {
                let v = bernstein_integral(theta, p, 1.0)? / (1.0 - p);
                (v, (v - m) / (1.0 - p))
            }
            Arm::Treated => {
                let v = bernstein_integral(theta, 0.0, p)? / p;
                (v, (m - v) / p)
            }
        };
        value.push(v);
        derivative.push(d);
    }
    ConditionalMeanCurve::new(arm, grid.to_vec(), value, derivative)
}

/// Draws from a continuous-instrument selection design.
#[derive(Clone, Debug, PartialEq)]
pub struct LivDraws {
    pub p: Vec<f64>,
    pub d: Vec<u8>,
    pub s: Vec<u8>,
}

impl LivDraws {
    /// `(p, s, 1)` triples for one arm.
    pub fn points(&self, arm: Arm) -> Vec<(f64, f64, f64)> {
        let want = arm.index() as u8;
        (0..self.p.len()).filter(|&i| self.d[i] == want).map(|i| (self.p[i], f64::from(self.s[i]), 1.0)).collect()
    }
}

/// Simulate `P ~ U(0,1)`, `U ~ U(0,1)`, `D = 1{U <= P}`, `V ~ U(0,1)` and
/// `S_d = 1{V <= m_d(U)}` with the given selection MTRs.
pub fn simulate_continuous_instrument(n: usize, seed: u64, m0s: impl Fn(f64) -> f64, m1s: impl Fn(f64) -> f64) -> LivDraws {
    let mut r = rng::stream(seed, 0);
    let mut out = LivDraws { p: Vec::with_capacity(n), d: Vec::with_capacity(n), s: Vec::with_capacity(n) };
    for _ in 0..n {
        let p: f64 = r.random();
        let u: f64 = r.random();
        let v: f64 = r.random();
        let d = u <= p;
        let m = if d { m1s(u) } else { m0s(u) };
        out.p.push(p);
        out.d.push(u8::from(d));
        out.s.push(u8::from(v <= m));
    }
    out
}

/// The linear selection MTRs used in the employment illustration.
pub fn illustration_m0s(u: f64) -> f64 {
    0.46 + 0.20 * u
}

pub fn illustration_m1s(u: f64) -> f64 {
    0.46 + 0.43 * u
}
