//! Treatment-effect intervals as weighted integrals of the bound curves.
//!
//! Each summary effect is `∫ MTE(u) ω(u) du` for a known or identifiable
//! weight `ω`. Integrating the lower and upper envelopes against a
//! nonnegative weight gives bounds on the effect for the always-observed
//! population.
//!
//! The named weights are step functions of `u` (jumps at the propensity atoms
//! or at the LATE endpoints). Integration treats the bound curve as the
//! piecewise-linear interpolant of its grid values and integrates it exactly
//! against the step weight, splitting cells at the jumps. This is the
//! trapezoid rule on the grid refined by the jump locations, so every named
//! weight integrates to one exactly and the ATT/ATU mixture identity holds to
//! rounding error. Custom weight tables are interpolated linearly and
//! integrated with the trapezoid rule on the curve grid.

use std::io::Write;

use crate::bounds_engine::BoundCurve;
use crate::data_io::PropensityTable;
use crate::error::{Error, Result};
use crate::quadrature::trapezoid;

/// Default grid size for effect summaries.
pub const EFFECT_GRID: usize = 1001;

/// Weighting function defining an effect.
#[derive(Clone, Debug, PartialEq)]
pub enum EffectWeight {
    Ate,
    Att(PropensityTable),
    Atu(PropensityTable),
    /// Compliers with `P` moving from `lo` to `hi`.
    Late { lo: f64, hi: f64 },
    /// Weight values on a grid of `u`, linearly interpolated.
    Custom { grid: Vec<f64>, values: Vec<f64> },
}

impl EffectWeight {
    pub fn late(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::Usage(format!("LATE endpoints must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})")));
        }
        Ok(EffectWeight::Late { lo, hi })
    }

    pub fn custom(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(Error::Usage("custom weight table needs matching grid and values of length >= 2".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < 0.0 || grid[grid.len() - 1] > 1.0 {
            return Err(Error::Usage("custom weight grid must be strictly increasing within [0, 1]".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Usage("custom weights must be finite and nonnegative".into()));
        }
        Ok(EffectWeight::Custom { grid, values })
    }

    /// Short label used in tables.
    pub fn label(&self) -> String {
        match self {
            EffectWeight::Ate => "ATE".into(),
            EffectWeight::Att(_) => "ATT".into(),
            EffectWeight::Atu(_) => "ATU".into(),
            EffectWeight::Late { lo, hi } => format!("LATE({lo},{hi})"),
            EffectWeight::Custom { .. } => "custom".into(),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            EffectWeight::Att(p) | EffectWeight::Atu(p) => {
                let m = p.mean_p();
                if m <= 0.0 || m >= 1.0 {
                    return Err(Error::Degenerate(format!("E[P] = {m}; ATT/ATU weights need 0 < E[P] < 1")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Points in `(0, 1)` where the weight jumps.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            EffectWeight::Att(p) | EffectWeight::Atu(p) => p.support_p().to_vec(),
            EffectWeight::Late { lo, hi } => vec![*lo, *hi],
            _ => Vec::new(),
        }
    }
}

/// Evaluate the weight at `u`.
pub fn weight_eval(weight: &EffectWeight, u: f64) -> Result<f64> {
    weight.check()?;
    Ok(match weight {
        EffectWeight::Ate => 1.0,
        EffectWeight::Att(p) => p.prob_p_ge(u) / p.mean_p(),
        EffectWeight::Atu(p) => p.prob_p_lt(u) / (1.0 - p.mean_p()),
        EffectWeight::Late { lo, hi } => {
            if (*lo..=*hi).contains(&u) {
                1.0 / (hi - lo)
            } else {
                0.0
            }
        }
        EffectWeight::Custom { grid, values } => interpolate(grid, values, u),
    })
}

fn interpolate(grid: &[f64], values: &[f64], u: f64) -> f64 {
    if u < grid[0] || u > grid[grid.len() - 1] {
        return 0.0;
    }
    let k = grid.partition_point(|&g| g <= u).clamp(1, grid.len() - 1);
    let (a, b) = (grid[k - 1], grid[k]);
    let t = (u - a) / (b - a);
    values[k - 1] + t * (values[k] - values[k - 1])
}

/// Interval for a summary effect.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectBounds {
    pub kind: String,
    pub lower: f64,
    pub upper: f64,
    /// True when an envelope was infinite on the support of the weight.
    pub infinite: bool,
}

/// `∫ f ω` for the piecewise-linear interpolant `f` of `(grid, values)`.
fn integrate_envelope(grid: &[f64], values: &[f64], weight: &EffectWeight) -> Result<f64> {
    if let EffectWeight::Custom { .. } = weight {
        let prod: Vec<f64> = grid
            .iter()
            .zip(values)
            .map(|(&u, &v)| {
                let w = weight_eval(weight, u)?;
                Ok(if w == 0.0 { 0.0 } else { v * w })
            })
            .collect::<Result<_>>()?;
        return Ok(trapezoid(grid, &prod));
    }
    let breaks = weight.breakpoints();
    let mut total = 0.0;
    for k in 1..grid.len() {
        let (a, b) = (grid[k - 1], grid[k]);
        let (fa, fb) = (values[k - 1], values[k]);
        let mut cuts = vec![a];
        cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
        cuts.push(b);
        for w in cuts.windows(2) {
            let (s, e) = (w[0], w[1]);
            if e <= s {
                continue;
            }
            let wt = weight_eval(weight, 0.5 * (s + e))?;
            if wt == 0.0 {
                continue;
            }
            if !fa.is_finite() || !fb.is_finite() {
                // An infinite node makes the interpolant infinite on the whole cell.
                let inf = if fa.is_infinite() { fa } else { fb };
                return Ok(inf);
            }
            let at = |x: f64| fa + (fb - fa) * (x - a) / (b - a);
            total += wt * (e - s) * 0.5 * (at(s) + at(e));
        }
    }
    Ok(total)
}

/// Integrate both envelopes of `curve` against `weight`.
///
/// The curve grid must span `[0, 1]`. Grid points flagged by the
/// denominator guard are an error when the weight is positive next to them;
/// infinite envelope values on the weight's support give infinite endpoints
/// with `infinite` set.
pub fn effect_bounds(curve: &BoundCurve, weight: &EffectWeight) -> Result<EffectBounds> {
    weight.check()?;
    let g = &curve.grid;
    if g.len() < 2 || g[0] != 0.0 || g[g.len() - 1] != 1.0 || g.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Usage("effect integration needs an increasing u-grid from 0 to 1".into()));
    }
    for (i, f) in curve.flags.iter().enumerate() {
        if !f.denominator_guard {
            continue;
        }
        let lo = if i > 0 { g[i - 1] } else { g[i] };
        let hi = if i + 1 < g.len() { g[i + 1] } else { g[i] };
        let near = [0.5 * (lo + g[i]), g[i], 0.5 * (g[i] + hi)];
        for u in near {
            if weight_eval(weight, u)? > 0.0 {
                return Err(Error::Numerical(format!(
                    "denominator guard at u = {} inside the support of the {} weight",
                    g[i],
                    weight.label()
                )));
            }
        }
    }
    let lower = integrate_envelope(g, &curve.lower, weight)?;
    let upper = integrate_envelope(g, &curve.upper, weight)?;
    Ok(EffectBounds { kind: weight.label(), lower, upper, infinite: lower.is_infinite() || upper.is_infinite() })
}

/// One row of a Table-7-style summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectRow {
    pub effect: String,
    pub mean_dominance: bool,
    pub lower: f64,
    pub upper: f64,
    /// Confidence interval and the method that produced it, if computed.
    pub ci: Option<(f64, f64, String)>,
}

/// Write rows as CSV `(effect, md_flag, lower, upper, ci_lower, ci_upper, ci_method)`.
pub fn write_effect_table<W: Write>(rows: &[EffectRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["effect", "md_flag", "lower", "upper", "ci_lower", "ci_upper", "ci_method"])?;
    for r in rows {
        let (cl, cu, cm) = match &r.ci {
            Some((l, u, m)) => (l.to_string(), u.to_string(), m.clone()),
            None => (String::new(), String::new(), String::new()),
        };
        wtr.write_record([
            r.effect.clone(),
            (r.mean_dominance as u8).to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            cl,
            cu,
            cm,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
