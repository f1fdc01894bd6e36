//! Bootstrap inference for bound endpoints.
//!
//! Two confidence intervals are offered for a partially identified parameter
//! with estimated bounds `[l̂, û]`:
//!
//! * the conservative interval joins the lower percentile of the lower-bound
//!   replicates to the upper percentile of the upper-bound replicates, and
//!   covers the whole identified set;
//! * the interval-parameter interval `[l̂ - C σ_l, û + C σ_u]` covers the
//!   parameter itself, with `C` solving
//!   `Φ(C + (û - l̂) / max(σ_l, σ_u)) - Φ(-C) = level`.
//!
//! `C` moves from the two-sided normal quantile (point identification) to the
//! one-sided quantile (wide identified set), so the second interval is the
//! tighter of the two.
//!
//! Resampling draws rows with replacement and keeps each row's design weight.
//! Replicate `r` uses the random stream `(seed, r)`, so results do not depend
//! on thread scheduling.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data_io::Sample;
use crate::error::{Error, Result};
use crate::rng;

/// Share of failed replicates above which the bootstrap is abandoned.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

/// Share of replicates with binding constraints above which results are flagged.
pub const BINDING_FLAG_SHARE: f64 = 0.50;

/// Output of the pipeline on one (re)sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Replicate {
    pub values: Vec<f64>,
    /// Whether a shape constraint bound in the underlying fit.
    pub binding: bool,
}

impl From<Vec<f64>> for Replicate {
    fn from(values: Vec<f64>) -> Self {
        Self { values, binding: false }
    }
}

/// Replicate matrix and bookkeeping.
#[derive(Clone, Debug)]
pub struct BootstrapResult {
    /// One row per successful replicate, in replicate-index order.
    pub replicates: Vec<Vec<f64>>,
    pub seed: u64,
    pub n_reps: usize,
    /// `(replicate index, reason)` for each failed replicate.
    pub failures: Vec<(usize, String)>,
    /// Share of successful replicates in which a constraint bound.
    pub binding_share: f64,
}

impl BootstrapResult {
    /// True when constraints bound in more than half of the replicates, in
    /// which case the bootstrap distribution is typically non-normal.
    pub fn binding_flag(&self) -> bool {
        self.binding_share > BINDING_FLAG_SHARE
    }

    /// Column `j` across successful replicates.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r[j]).collect()
    }

    /// Write the replicate matrix as CSV with the given statistic names.
    pub fn write_csv<W: Write>(&self, names: &[String], writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["replicate".to_string()];
        header.extend(names.iter().cloned());
        wtr.write_record(&header)?;
        for (i, r) in self.replicates.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(r.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn resample(sample: &Sample, seed: u64, rep: usize) -> Sample {
    let mut rng = rng::stream(seed, rep as u64);
    let recs = sample.records();
    let n = recs.len();
    let drawn = (0..n).map(|_| recs[rng.random_range(0..n)].clone()).collect();
    Sample::from_resample(drawn, sample.support_z().to_vec())
}

/// Nonparametric bootstrap of `pipeline` over rows of `sample`.
///
/// Failed replicates are dropped and recorded; more than 10% failures is an
/// error. Every successful replicate must return the same number of values.
pub fn bootstrap<F>(sample: &Sample, pipeline: F, n_reps: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&Sample) -> Result<Replicate> + Sync,
{
    if n_reps < 2 {
        return Err(Error::Usage("the bootstrap needs at least two replicates".into()));
    }
    if sample.is_empty() {
        return Err(Error::Usage("cannot bootstrap an empty sample".into()));
    }
    let outcomes: Vec<Result<Replicate>> = (0..n_reps).into_par_iter().map(|r| pipeline(&resample(sample, seed, r))).collect();
    let mut replicates = Vec::with_capacity(n_reps);
    let mut failures = Vec::new();
    let mut binding = 0usize;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => {
                if let Some(first) = replicates.first().map(|r: &Vec<f64>| r.len()) {
                    if first != rep.values.len() {
                        return Err(Error::Numerical(format!(
                            "replicate {i} returned {} values, expected {first}",
                            rep.values.len()
                        )));
                    }
                }
                binding += usize::from(rep.binding);
                replicates.push(rep.values);
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * n_reps as f64 {
        return Err(Error::TooManyFailures { failed: failures.len(), total: n_reps, first: failures[0].1.clone() });
    }
    let binding_share = binding as f64 / replicates.len() as f64;
    Ok(BootstrapResult { replicates, seed, n_reps, failures, binding_share })
}

/// How an interval was built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiMethod {
    Conservative,
    IntervalParameter,
}

impl CiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CiMethod::Conservative => "conservative",
            CiMethod::IntervalParameter => "interval-parameter",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub method: CiMethod,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Usage(format!("confidence level {level} must lie in (0, 1)")))
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (the default definition of most statistics packages).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    if lo == hi || v[lo] == v[hi] {
        v[lo]
    } else {
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    }
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Percentile interval joining the lower tail of the lower-bound replicates
/// to the upper tail of the upper-bound replicates.
pub fn ci_conservative(lower_reps: &[f64], upper_reps: &[f64], level: f64) -> Result<ConfidenceInterval> {
    check_level(level)?;
    if lower_reps.len() < 100 || upper_reps.len() < 100 {
        return Err(Error::Usage("the conservative interval needs at least 100 successful replicates".into()));
    }
    Ok(ConfidenceInterval {
        lo: quantile(lower_reps, (1.0 - level) / 2.0),
        hi: quantile(upper_reps, (1.0 + level) / 2.0),
        level,
        method: CiMethod::Conservative,
    })
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Critical value `C` solving `Φ(C + ratio) - Φ(-C) = level` by bisection.
/// `ratio = ∞` gives the one-sided quantile `z_level`.
pub fn im_critical_value(ratio: f64, level: f64) -> Result<f64> {
    check_level(level)?;
    if ratio.is_nan() || ratio < 0.0 {
        return Err(Error::Usage(format!("width ratio {ratio} must be nonnegative")));
    }
    let n = std_normal();
    if ratio.is_infinite() {
        return Ok(n.inverse_cdf(level));
    }
    let f = |c: f64| n.cdf(c + ratio) - n.cdf(-c) - level;
    // f is increasing; the root lies between the one- and two-sided quantiles.
    let (mut lo, mut hi) = (n.inverse_cdf(level) - 1e-9, n.inverse_cdf(0.5 + level / 2.0) + 1e-9);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Interval covering the partially identified parameter itself.
///
/// `σ_l`, `σ_u` are bootstrap standard deviations of the endpoint
/// replicates. An infinite endpoint estimate gives an infinite CI endpoint
/// and makes the width ratio infinite.
pub fn ci_interval_parameter(
    lower_reps: &[f64],
    upper_reps: &[f64],
    (l_hat, u_hat): (f64, f64),
    level: f64,
) -> Result<ConfidenceInterval> {
    check_level(level)?;
    if u_hat < l_hat {
        return Err(Error::EmptyInterval { lower: l_hat, upper: u_hat });
    }
    let sl = if l_hat.is_finite() { std_dev(lower_reps) } else { 0.0 };
    let su = if u_hat.is_finite() { std_dev(upper_reps) } else { 0.0 };
    if !sl.is_finite() || !su.is_finite() {
        return Err(Error::Numerical("non-finite bootstrap standard deviation".into()));
    }
    let sigma = sl.max(su);
    if sigma <= 0.0 && l_hat.is_finite() && u_hat.is_finite() {
        return Err(Error::Degenerate("bootstrap standard errors are zero".into()));
    }
    let ratio = if l_hat.is_finite() && u_hat.is_finite() { (u_hat - l_hat) / sigma } else { f64::INFINITY };
    let c = im_critical_value(ratio, level)?;
    Ok(ConfidenceInterval { lo: l_hat - c * sl, hi: u_hat + c * su, level, method: CiMethod::IntervalParameter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::ObservationRecord;
    use statrs::distribution::Normal;

    fn bernoulli_sample(n: usize) -> Sample {
        let recs = (0..n).map(|i| ObservationRecord::new((i % 2) as f64, 1, (i % 2) as u8, (i % 3) as i64, 1.0)).collect();
        Sample::new(recs).unwrap()
    }

    fn mean_y(s: &Sample) -> Result<Replicate> {
        let (w, wy) = s.records().iter().fold((0.0, 0.0), |(a, b), r| (a + r.w, b + r.w * r.y));
        Ok(vec![wy / w].into())
    }

    #[test]
    fn constant_data_gives_constant_replicates() {
        let recs = (0..50).map(|i| ObservationRecord::new(3.5, 1, (i % 2) as u8, (i % 2) as i64, 1.0 + i as f64)).collect();
        let s = Sample::new(recs).unwrap();
        let b = bootstrap(&s, mean_y, 20, 1).unwrap();
        assert!(b.replicates.iter().all(|r| (r[0] - 3.5).abs() < 1e-12));
    }

    #[test]
    fn bootstrap_sd_matches_the_analytic_standard_error() {
        let s = bernoulli_sample(10_000);
        let b = bootstrap(&s, mean_y, 1000, 7).unwrap();
        let sd = std_dev(&b.column(0));
        assert!((sd / 0.005 - 1.0).abs() < 0.15, "sd {sd}");
    }

    #[test]
    fn same_seed_same_matrix() {
        let s = bernoulli_sample(500);
        let a = bootstrap(&s, mean_y, 50, 3).unwrap();
        let b = bootstrap(&s, mean_y, 50, 3).unwrap();
        assert_eq!(a.replicates, b.replicates);
        let c = bootstrap(&s, mean_y, 50, 4).unwrap();
        assert_ne!(a.replicates, c.replicates);
    }

    #[test]
    fn failures_are_counted_and_capped() {
        let s = bernoulli_sample(100);
        let flaky = |s: &Sample| {
            if s.records()[0].y > 0.5 {
                Err(Error::Numerical("boom".into()))
            } else {
                mean_y(s)
            }
        };
        assert!(matches!(bootstrap(&s, flaky, 100, 1), Err(Error::TooManyFailures { .. })));
        let rare = |s: &Sample| {
            if s.records()[..4].iter().all(|r| r.y > 0.5) {
                Err(Error::Numerical("rare".into()))
            } else {
                mean_y(s)
            }
        };
        let b = bootstrap(&s, rare, 200, 1).unwrap();
        assert_eq!(b.replicates.len() + b.failures.len(), 200);
        assert!(!b.failures.is_empty());
    }

    #[test]
    fn binding_share_is_reported() {
        let s = bernoulli_sample(100);
        let b = bootstrap(&s, |s| Ok(Replicate { values: vec![0.0], binding: s.records()[0].y > 0.5 }), 400, 2).unwrap();
        assert!((b.binding_share - 0.5).abs() < 0.1);
        let always = bootstrap(&s, |_| Ok(Replicate { values: vec![0.0], binding: true }), 10, 2).unwrap();
        assert!(always.binding_flag());
    }

    #[test]
    fn critical_value_limits() {
        assert!((im_critical_value(1e6, 0.90).unwrap() - 1.2816).abs() < 1e-4);
        assert!((im_critical_value(f64::INFINITY, 0.90).unwrap() - 1.2816).abs() < 1e-4);
        assert!((im_critical_value(0.0, 0.90).unwrap() - 1.6449).abs() < 1e-4);
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let c = im_critical_value(k as f64 * 0.1, 0.9).unwrap();
            assert!(c <= prev + 1e-12 && (1.2815..=1.6450).contains(&c));
            prev = c;
        }
        // The defining equation holds to the bisection tolerance.
        let n = Normal::standard();
        let c = im_critical_value(0.7, 0.95).unwrap();
        assert!((n.cdf(c + 0.7) - n.cdf(-c) - 0.95).abs() < 1e-9);
    }

    #[test]
    fn degenerate_and_point_identified_intervals() {
        let l = vec![1.0; 200];
        let u = vec![2.0; 200];
        let ci = ci_conservative(&l, &u, 0.9).unwrap();
        assert_eq!((ci.lo, ci.hi), (1.0, 2.0));
        // Identical lower and upper replicates: the ordinary percentile interval.
        let x: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let ci = ci_conservative(&x, &x, 0.9).unwrap();
        assert!((ci.lo - quantile(&x, 0.05)).abs() < 1e-15 && (ci.hi - quantile(&x, 0.95)).abs() < 1e-15);
        assert!(ci_conservative(&x[..50], &x[..50], 0.9).is_err());
    }

    #[test]
    fn interval_parameter_ci_refuses_crossed_estimates() {
        let x: Vec<f64> = (0..200).map(|i| i as f64).collect();
        assert!(matches!(ci_interval_parameter(&x, &x, (2.0, 1.0), 0.9), Err(Error::EmptyInterval { .. })));
    }

    #[test]
    fn infinite_upper_estimate() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 / 199.0) - 0.5).collect();
        let inf = vec![f64::INFINITY; 200];
        let ci = ci_interval_parameter(&x, &inf, (0.0, f64::INFINITY), 0.9).unwrap();
        assert_eq!(ci.hi, f64::INFINITY);
        assert!((ci.lo + 1.2816 * std_dev(&x)).abs() < 1e-3);
    }

    #[test]
    fn quantile_matches_type_seven() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.1) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn conservative_nests_interval_parameter_on_normal_replicates() {
        // Replicates at exact normal quantiles: the percentile and standard
        // deviation views of the spread agree up to discretisation of the
        // empirical quantile, so nesting holds to a small tolerance.
        let n = Normal::standard();
        let k = 2000;
        let z: Vec<f64> = (0..k).map(|i| n.inverse_cdf((i as f64 + 0.5) / k as f64)).collect();
        for (width, sl, su) in [(0.0, 1.0, 1.0), (0.5, 0.3, 0.6), (3.0, 1.0, 0.2), (10.0, 0.5, 0.5)] {
            let l_hat = 1.0;
            let u_hat = l_hat + width;
            let lr: Vec<f64> = z.iter().map(|v| l_hat + sl * v).collect();
            let ur: Vec<f64> = z.iter().map(|v| u_hat + su * v).collect();
            let cons = ci_conservative(&lr, &ur, 0.9).unwrap();
            let im = ci_interval_parameter(&lr, &ur, (l_hat, u_hat), 0.9).unwrap();
            assert!(cons.lo <= im.lo + 5e-3 && cons.hi >= im.hi - 5e-3, "{cons:?} {im:?}");
        }
    }
}
