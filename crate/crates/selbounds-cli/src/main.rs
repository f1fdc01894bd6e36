//! `selbounds` command-line tool.
//!
//! Subcommands fit the MTR models, compute MTE bound curves, summary effects,
//! bootstrap confidence intervals, and run the Monte Carlo designs. Every
//! output is a CSV file in the output directory.
//!
//! Options may also come from a `key=value` file given with `--config`; keys
//! are the long flag names without dashes (`y-lower=0`, `bootstrap=1000`).
//! Command-line flags take precedence over the file, which takes precedence
//! over built-in defaults.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use selbounds::bounds_engine::{
    mte_oo_bounds, write_bound_curve, AssumptionProfile, BoundCurve, MeanDominance, SelectionDirection, SupportSpec,
};
use selbounds::data_io::{
    estimate_propensity, load_sample, read_propensity, save_sample, write_propensity, ColumnMap, PropensityTable, Sample,
};
use selbounds::effects::{effect_bounds, write_effect_table, EffectRow, EffectWeight, EFFECT_GRID};
use selbounds::inference::{bootstrap, ci_conservative, ci_interval_parameter, BootstrapResult, CiMethod, ConfidenceInterval, Replicate};
use selbounds::mc_harness::{coverage_experiment, CoverageConfig, MonteCarloDesign};
use selbounds::mtr_bernstein::{fit_constrained_with, read_theta, write_theta, CellWeighting, FeasibleSet, MTRSet, Variable};
use selbounds::quadrature::unit_grid;
use selbounds::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "selbounds", version, about = "Bounds on marginal treatment effects under sample selection")]
struct Cli {
    /// Plain `key=value` file with default options.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit outcome and selection MTRs by constrained least squares.
    Fit(Common),
    /// MTE bound curve on a u-grid.
    Bounds(Common),
    /// ATE/ATT/ATU/LATE bounds, with bootstrap intervals when data are given.
    Effects(Common),
    /// Pointwise bootstrap confidence intervals for the MTE bounds.
    Ci(Common),
    /// Draw a sample from a Monte Carlo design.
    Simulate(SimArgs),
    /// Coverage experiment for a Monte Carlo design.
    Coverage(SimArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Sample CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Coefficient CSV written by `fit` (used instead of refitting).
    #[arg(long)]
    theta: Option<PathBuf>,
    /// Propensity CSV written by `fit`.
    #[arg(long)]
    propensity: Option<PathBuf>,
    #[arg(long = "col-y")]
    col_y: Option<String>,
    #[arg(long = "col-s")]
    col_s: Option<String>,
    #[arg(long = "col-d")]
    col_d: Option<String>,
    #[arg(long = "col-z")]
    col_z: Option<String>,
    #[arg(long = "col-w")]
    col_w: Option<String>,
    /// Lower end of the outcome support (`-inf` allowed).
    #[arg(long = "y-lower", allow_hyphen_values = true)]
    y_lower: Option<f64>,
    /// Upper end of the outcome support (`inf` allowed).
    #[arg(long = "y-upper", allow_hyphen_values = true)]
    y_upper: Option<f64>,
    /// increasing, decreasing, agnostic or nonmonotone.
    #[arg(long)]
    selection: Option<String>,
    /// Mean dominance: none, ge or le (requires increasing selection).
    #[arg(long)]
    md: Option<String>,
    /// Bernstein coefficients per arm.
    #[arg(long)]
    degree: Option<usize>,
    /// Number of u-grid points on [0, 1].
    #[arg(long)]
    grid: Option<usize>,
    /// Bootstrap replicates.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// One minus the confidence level.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SimArgs {
    /// Design number, 1 to 6.
    #[arg(long)]
    design: Option<u8>,
    /// Sample size (simulate only).
    #[arg(long)]
    n: Option<usize>,
    /// Number of simulations (coverage only).
    #[arg(long)]
    sims: Option<usize>,
    /// Bootstrap replicates per simulation (coverage only).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Use the full 1,000 x 5,000 scale (coverage only).
    #[arg(long)]
    full: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Options from the config file, keyed by long flag name.
struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self(HashMap::new())) };
        let text = fs::read_to_string(path)?;
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    /// Flag value, else file value, else `default`.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            Some(s) => s.parse().map_err(|_| Error::Usage(format!("config value for '{key}' is invalid: {s}"))),
            None => Ok(default),
        }
    }

    fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.0
            .get(key)
            .map(|s| s.parse().map_err(|_| Error::Usage(format!("config value for '{key}' is invalid: {s}"))))
            .transpose()
    }
}

/// Fully resolved options of a data subcommand.
#[derive(Debug)]
struct RunConfig {
    input: Option<PathBuf>,
    theta: Option<PathBuf>,
    propensity: Option<PathBuf>,
    columns: ColumnMap,
    support: SupportSpec,
    profile: AssumptionProfile,
    degree: usize,
    grid: usize,
    bootstrap: usize,
    alpha: f64,
    seed: u64,
    out: PathBuf,
}

fn parse_selection(s: &str) -> Result<SelectionDirection> {
    Ok(match s {
        "increasing" => SelectionDirection::Increasing,
        "decreasing" => SelectionDirection::Decreasing,
        "agnostic" => SelectionDirection::Agnostic,
        "nonmonotone" => SelectionDirection::NonMonotone,
        other => return Err(Error::Usage(format!("unknown selection direction '{other}'"))),
    })
}

fn parse_md(s: &str) -> Result<MeanDominance> {
    Ok(match s {
        "none" => MeanDominance::None,
        "ge" => MeanDominance::AlwaysObservedGe,
        "le" => MeanDominance::AlwaysObservedLe,
        other => return Err(Error::Usage(format!("unknown mean-dominance option '{other}'"))),
    })
}

impl RunConfig {
    fn resolve(c: Common, f: &FileConfig) -> Result<Self> {
        let defaults = ColumnMap::default();
        let columns = ColumnMap {
            y: f.pick(c.col_y, "col-y", defaults.y)?,
            s: f.pick(c.col_s, "col-s", defaults.s)?,
            d: f.pick(c.col_d, "col-d", defaults.d)?,
            z: f.pick(c.col_z, "col-z", defaults.z)?,
            w: f.pick(c.col_w, "col-w", defaults.w)?,
            cell: defaults.cell,
        };
        let support = SupportSpec::new(f.pick(c.y_lower, "y-lower", 0.0)?, f.pick(c.y_upper, "y-upper", f64::INFINITY)?)?;
        let profile = AssumptionProfile::new(
            parse_selection(&f.pick(c.selection, "selection", "increasing".to_string())?)?,
            parse_md(&f.pick(c.md, "md", "none".to_string())?)?,
        )?;
        let alpha = f.pick(c.alpha, "alpha", 0.10)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Usage(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let grid = f.pick(c.grid, "grid", 101)?;
        if grid < 2 {
            return Err(Error::Usage("the grid needs at least two points".into()));
        }
        Ok(Self {
            input: f.pick_opt(c.input, "input")?,
            theta: f.pick_opt(c.theta, "theta")?,
            propensity: f.pick_opt(c.propensity, "propensity")?,
            columns,
            support,
            profile,
            degree: f.pick(c.degree, "degree", 2)?,
            grid,
            bootstrap: f.pick(c.bootstrap, "bootstrap", 5000)?,
            alpha,
            seed: f.pick(c.seed, "seed", 1)?,
            out: f.pick(c.out, "out", PathBuf::from("."))?,
        })
    }

    fn level(&self) -> f64 {
        1.0 - self.alpha
    }

    fn sample(&self) -> Result<Sample> {
        let path = self.input.as_ref().ok_or_else(|| Error::Usage("--input is required".into()))?;
        load_sample(path, &self.columns)
    }

    fn output(&self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn u_grid(&self) -> Vec<f64> {
        unit_grid(self.grid)
    }

    fn profile_label(&self) -> String {
        let sel = match self.profile.selection {
            SelectionDirection::Increasing => "increasing",
            SelectionDirection::Decreasing => "decreasing",
            SelectionDirection::Agnostic => "agnostic",
            SelectionDirection::NonMonotone => "nonmonotone",
        };
        let md = match self.profile.mean_dominance {
            MeanDominance::None => "none",
            MeanDominance::AlwaysObservedGe => "ge",
            MeanDominance::AlwaysObservedLe => "le",
        };
        format!("{sel}_md-{md}")
    }
}

/// Fit both MTR models; returns the set, the propensity table and whether a constraint bound.
fn fit_models(sample: &Sample, degree: usize) -> Result<(MTRSet, PropensityTable, bool)> {
    let prop = estimate_propensity(sample)?;
    let (y, ry) = fit_constrained_with(sample, &prop, Variable::Y, degree, FeasibleSet::Nonneg, CellWeighting::SampleOls)?;
    let (s, rs) =
        fit_constrained_with(sample, &prop, Variable::S, degree, FeasibleSet::UnitBoxIncreasing, CellWeighting::SampleOls)?;
    Ok((MTRSet::new(y, s)?, prop, ry.binding || rs.binding))
}

/// MTR set and propensity table from `--theta`/`--propensity`, or by fitting `--input`.
fn models(cfg: &RunConfig, need_propensity: bool) -> Result<(MTRSet, Option<PropensityTable>)> {
    if let Some(theta) = &cfg.theta {
        let mtr = read_theta(File::open(theta)?)?;
        let prop = match &cfg.propensity {
            Some(p) => Some(read_propensity(File::open(p)?)?),
            None if need_propensity && cfg.input.is_some() => Some(estimate_propensity(&cfg.sample()?)?),
            None if need_propensity => return Err(Error::Usage("--propensity (or --input) is required with --theta".into())),
            None => None,
        };
        return Ok((mtr, prop));
    }
    let (mtr, prop, _) = fit_models(&cfg.sample()?, cfg.degree)?;
    Ok((mtr, Some(prop)))
}

fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let sample = cfg.sample()?;
    let (mtr, prop, binding) = fit_models(&sample, cfg.degree)?;
    write_theta(&[&mtr.y, &mtr.s], cfg.output("theta.csv")?)?;
    write_propensity(&prop, cfg.output("propensity.csv")?)?;
    if binding {
        eprintln!("note: a shape constraint binds at the fitted coefficients");
    }
    Ok(())
}

fn cmd_bounds(cfg: &RunConfig) -> Result<()> {
    let (mtr, _) = models(cfg, false)?;
    let curve = mte_oo_bounds(&mtr, &cfg.support, &cfg.profile, &cfg.u_grid())?;
    write_bound_curve(&curve, cfg.output(&format!("bounds_{}.csv", cfg.profile_label()))?)
}

fn effect_weights(prop: &PropensityTable) -> Result<Vec<(&'static str, EffectWeight)>> {
    let mut w = vec![("ATE", EffectWeight::Ate), ("ATT", EffectWeight::Att(prop.clone())), ("ATU", EffectWeight::Atu(prop.clone()))];
    let ps = prop.support_p();
    if ps.len() >= 2 {
        w.push(("LATE", EffectWeight::late(ps[0], ps[ps.len() - 1])?));
    }
    Ok(w)
}

fn effect_values(mtr: &MTRSet, prop: &PropensityTable, cfg: &RunConfig) -> Result<Vec<(f64, f64)>> {
    let curve = mte_oo_bounds(mtr, &cfg.support, &cfg.profile, &unit_grid(EFFECT_GRID))?;
    effect_weights(prop)?
        .iter()
        .map(|(_, w)| effect_bounds(&curve, w).map(|e| (e.lower, e.upper)))
        .collect()
}

/// Both interval types for every `(lower, upper)` column pair of `boot`.
fn intervals(boot: &BootstrapResult, estimates: &[(f64, f64)], level: f64) -> Vec<[Option<ConfidenceInterval>; 2]> {
    let mut notes = Vec::new();
    let out = estimates
        .iter()
        .enumerate()
        .map(|(k, &(l, u))| {
            if !(l.is_finite() && u.is_finite()) || u < l {
                return [None, None];
            }
            let (lo, hi) = (boot.column(2 * k), boot.column(2 * k + 1));
            [
                ci_conservative(&lo, &hi, level).map_err(|e| notes.push(e.to_string())).ok(),
                ci_interval_parameter(&lo, &hi, (l, u), level).map_err(|e| notes.push(e.to_string())).ok(),
            ]
        })
        .collect();
    notes.sort();
    notes.dedup();
    for n in notes {
        eprintln!("note: interval left blank: {n}");
    }
    out
}

fn warn_binding(boot: &BootstrapResult) {
    if boot.binding_flag() {
        eprintln!(
            "warning: shape constraints bind in {:.0}% of bootstrap replicates; intervals may be unreliable",
            100.0 * boot.binding_share
        );
    }
    if !boot.failures.is_empty() {
        eprintln!("note: {} of {} bootstrap replicates failed and were dropped", boot.failures.len(), boot.n_reps);
    }
}

fn cmd_effects(cfg: &RunConfig) -> Result<()> {
    let (mtr, prop) = models(cfg, true)?;
    let prop = prop.expect("propensity requested");
    let names: Vec<&str> = effect_weights(&prop)?.iter().map(|(n, _)| *n).collect();
    let est = effect_values(&mtr, &prop, cfg)?;
    let md = cfg.profile.mean_dominance != MeanDominance::None;
    let mut rows = Vec::new();
    if cfg.input.is_some() && cfg.theta.is_none() && cfg.bootstrap > 0 {
        let sample = cfg.sample()?;
        let pipeline = |s: &Sample| -> Result<Replicate> {
            let (m, p, binding) = fit_models(s, cfg.degree)?;
            let v = effect_values(&m, &p, cfg)?;
            if v.len() != est.len() {
                return Err(Error::Numerical("resample lost a propensity value".into()));
            }
            Ok(Replicate { values: v.into_iter().flat_map(|(l, u)| [l, u]).collect(), binding })
        };
        let boot = bootstrap(&sample, pipeline, cfg.bootstrap, cfg.seed)?;
        warn_binding(&boot);
        for ((name, &(l, u)), cis) in names.iter().zip(&est).zip(intervals(&boot, &est, cfg.level())) {
            for ci in cis {
                rows.push(EffectRow {
                    effect: name.to_string(),
                    mean_dominance: md,
                    lower: l,
                    upper: u,
                    ci: ci.map(|c| (c.lo, c.hi, c.method.as_str().to_string())),
                });
            }
        }
    } else {
        for (name, &(l, u)) in names.iter().zip(&est) {
            rows.push(EffectRow { effect: name.to_string(), mean_dominance: md, lower: l, upper: u, ci: None });
        }
    }
    write_effect_table(&rows, cfg.output("effects.csv")?)
}

fn cmd_ci(cfg: &RunConfig) -> Result<()> {
    let sample = cfg.sample()?;
    let grid = cfg.u_grid();
    let curve_of = |s: &Sample| -> Result<(BoundCurve, bool)> {
        let (m, _, binding) = fit_models(s, cfg.degree)?;
        Ok((mte_oo_bounds(&m, &cfg.support, &cfg.profile, &grid)?, binding))
    };
    let (curve, _) = curve_of(&sample)?;
    let pipeline = |s: &Sample| -> Result<Replicate> {
        let (c, binding) = curve_of(s)?;
        Ok(Replicate { values: c.lower.iter().zip(&c.upper).flat_map(|(&l, &u)| [l, u]).collect(), binding })
    };
    let boot = bootstrap(&sample, pipeline, cfg.bootstrap, cfg.seed)?;
    warn_binding(&boot);
    let est: Vec<(f64, f64)> = curve.lower.iter().copied().zip(curve.upper.iter().copied()).collect();
    let mut wtr = csv::Writer::from_writer(cfg.output(&format!("ci_{}.csv", cfg.profile_label()))?);
    wtr.write_record(["u", "lower", "upper", "ci_method", "ci_lower", "ci_upper", "level"]).map_err(Error::from)?;
    for ((u, &(l, h)), cis) in grid.iter().zip(&est).zip(intervals(&boot, &est, cfg.level())) {
        for (method, ci) in [CiMethod::Conservative, CiMethod::IntervalParameter].into_iter().zip(cis) {
            let (a, b) = ci.map(|c| (c.lo.to_string(), c.hi.to_string())).unwrap_or_default();
            wtr.write_record([u.to_string(), l.to_string(), h.to_string(), method.as_str().to_string(), a, b, cfg.level().to_string()])
                .map_err(Error::from)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn design_of(args: &SimArgs, f: &FileConfig) -> Result<MonteCarloDesign> {
    let id = f
        .pick_opt(args.design, "design")?
        .ok_or_else(|| Error::Usage("--design is required".into()))?;
    MonteCarloDesign::new(id)
}

fn out_dir(args: &SimArgs, f: &FileConfig) -> Result<PathBuf> {
    let out: PathBuf = f.pick(args.out.clone(), "out", PathBuf::from("."))?;
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn cmd_simulate(args: SimArgs, f: &FileConfig) -> Result<()> {
    let design = design_of(&args, f)?;
    let design = design.with_n(f.pick(args.n, "n", design.n)?);
    let sample = design.simulate(f.pick(args.seed, "seed", 1)?);
    save_sample(&sample, out_dir(&args, f)?.join(format!("design{}_sample.csv", design.id)))
}

fn cmd_coverage(args: SimArgs, f: &FileConfig) -> Result<()> {
    let design = design_of(&args, f)?;
    let seed = f.pick(args.seed, "seed", 1)?;
    let full = args.full || f.pick_opt(None::<bool>, "full")?.unwrap_or(false);
    let base = if full { CoverageConfig::full(seed) } else { CoverageConfig::reduced(seed) };
    let alpha = f.pick(args.alpha, "alpha", 1.0 - base.level)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Usage(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let cfg = CoverageConfig {
        n_sims: f.pick(args.sims, "sims", base.n_sims)?,
        n_boot: f.pick(args.bootstrap, "bootstrap", base.n_boot)?,
        level: 1.0 - alpha,
        ..base
    };
    let table = coverage_experiment(&design, &cfg)?;
    for (k, why) in &table.failures {
        eprintln!("simulation {k} failed: {why}");
    }
    let out = out_dir(&args, f)?;
    table.write_csv(BufWriter::new(File::create(out.join(format!("design{}_coverage.csv", design.id)))?))
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Fit(c) => cmd_fit(&RunConfig::resolve(c, &file)?),
        Command::Bounds(c) => cmd_bounds(&RunConfig::resolve(c, &file)?),
        Command::Effects(c) => cmd_effects(&RunConfig::resolve(c, &file)?),
        Command::Ci(c) => cmd_ci(&RunConfig::resolve(c, &file)?),
        Command::Simulate(a) => cmd_simulate(a, &file),
        Command::Coverage(a) => cmd_coverage(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
