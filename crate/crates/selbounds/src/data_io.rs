//! Loading, validating and summarizing weighted micro-data, plus discrete
//! propensity scores.
//!
//! A row carries the observable outcome `y = s * y*`, the selection indicator
//! `s`, the treatment `d`, an integer-coded instrument `z`, a positive design
//! weight and an optional covariate-cell label. Rows whose treatment is
//! missing are dropped and counted; every other malformed value is an error.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    /// Observable outcome; zero whenever `s == 0`.
    pub y: f64,
    /// Selection (observation) indicator.
    pub s: u8,
    /// Treatment indicator.
    pub d: u8,
    /// Instrument code.
    pub z: i64,
    /// Positive design weight.
    pub w: f64,
    /// Optional discrete covariate cell.
    pub cell: Option<String>,
}

impl ObservationRecord {
    pub fn new(y: f64, s: u8, d: u8, z: i64, w: f64) -> Self {
        Self { y, s, d, z, w, cell: None }
    }

    fn validate(&self, row: Option<usize>) -> Result<()> {
        let fail = |msg: &str| Err(Error::Validation { row, msg: msg.to_string() });
        if self.s > 1 {
            return fail("s must be 0 or 1");
        }
        if self.d > 1 {
            return fail("d must be 0 or 1");
        }
        if !(self.w > 0.0) || !self.w.is_finite() {
            return fail("weight must be positive and finite");
        }
        if !self.y.is_finite() {
            return fail("y must be finite");
        }
        if self.s == 0 && self.y != 0.0 {
            return fail("y must be 0 when s=0");
        }
        Ok(())
    }
}

/// A validated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    records: Vec<ObservationRecord>,
    support_z: Vec<i64>,
    dropped_missing_d: usize,
}

impl Sample {
    /// Validate records and build a sample.
    ///
    /// Row-level invariants are enforced here; the nondegeneracy requirement
    /// (two instrument values, both treatment arms present) is checked by
    /// [`Sample::check_nondegenerate`], which every estimator calls, so that
    /// tiny files can still be loaded and inspected.
    pub fn new(records: Vec<ObservationRecord>) -> Result<Self> {
        Self::with_dropped(records, 0)
    }

    fn with_dropped(records: Vec<ObservationRecord>, dropped_missing_d: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::validation("sample is empty"));
        }
        for (i, r) in records.iter().enumerate() {
            r.validate(Some(i + 1))?;
        }
        let mut support_z: Vec<i64> = records.iter().map(|r| r.z).collect();
        support_z.sort_unstable();
        support_z.dedup();
        Ok(Self { records, support_z, dropped_missing_d })
    }

    /// At least two instrument values and both treated and untreated units.
    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.support_z.len() < 2 {
            return Err(Error::InsufficientVariation("instrument takes fewer than two distinct values".into()));
        }
        let treated = self.records.iter().any(|r| r.d == 1);
        let untreated = self.records.iter().any(|r| r.d == 0);
        if !(treated && untreated) {
            return Err(Error::InsufficientVariation("sample needs both treated and untreated units".into()));
        }
        Ok(())
    }

    /// Build without the nondegeneracy checks. Used for bootstrap resamples,
    /// which may by chance miss a group; downstream estimators report that.
    pub(crate) fn from_resample(records: Vec<ObservationRecord>, support_z: Vec<i64>) -> Self {
        Self { records, support_z, dropped_missing_d: 0 }
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted distinct instrument values.
    pub fn support_z(&self) -> &[i64] {
        &self.support_z
    }

    /// Number of rows dropped at load time because the treatment was missing.
    pub fn dropped_missing_d(&self) -> usize {
        self.dropped_missing_d
    }

    /// Distinct covariate cells (including `None` if unlabeled rows exist).
    pub fn cells(&self) -> Vec<Option<String>> {
        let mut cells: Vec<Option<String>> = self.records.iter().map(|r| r.cell.clone()).collect();
        cells.sort();
        cells.dedup();
        cells
    }

    /// Restrict to one covariate cell; estimation is always run per cell.
    pub fn subset_cell(&self, cell: Option<&str>) -> Result<Sample> {
        let recs: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.cell.as_deref() == cell)
            .cloned()
            .collect();
        Sample::new(recs)
    }
}

/// Column names used when reading and writing sample files.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMap {
    pub y: String,
    pub s: String,
    pub d: String,
    pub z: String,
    pub w: String,
    pub cell: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            y: "y".into(),
            s: "s".into(),
            d: "d".into(),
            z: "z".into(),
            w: "weight".into(),
            cell: "cell".into(),
        }
    }
}

/// Read a sample from a CSV file.
pub fn load_sample(path: impl AsRef<Path>, schema: &ColumnMap) -> Result<Sample> {
    let file = std::fs::File::open(path.as_ref())?;
    read_sample(file, schema)
}

/// Read a sample from any CSV source with a header row.
pub fn read_sample<R: Read>(reader: R, schema: &ColumnMap) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col = |name: &str| find(name).ok_or_else(|| Error::validation(format!("missing required column '{name}'")));
    let (iy, is, id, iz, iw) = (col(&schema.y)?, col(&schema.s)?, col(&schema.d)?, col(&schema.z)?, col(&schema.w)?);
    let icell = find(&schema.cell);

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        if field(id).is_empty() {
            dropped += 1;
            continue;
        }
        let s = parse_binary(field(is), "s", row)?;
        let d = parse_binary(field(id), "d", row)?;
        let y = match field(iy) {
            "" if s == 0 => 0.0,
            "" => return Err(Error::Validation { row: Some(row), msg: "y is missing for an observed unit (s=1)".into() }),
            v => parse_f64(v, "y", row)?,
        };
        let z = parse_int(field(iz), "z", row)?;
        let w = parse_f64(field(iw), "weight", row)?;
        let cell = icell.map(|j| field(j).to_string()).filter(|c| !c.is_empty());
        let r = ObservationRecord { y, s, d, z, w, cell };
        r.validate(Some(row))?;
        records.push(r);
    }
    Sample::with_dropped(records, dropped)
}

fn parse_f64(v: &str, name: &str, row: usize) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::Parse { row, msg: format!("{name}: cannot parse '{v}' as a number") })
}

fn parse_int(v: &str, name: &str, row: usize) -> Result<i64> {
    if let Ok(i) = v.parse::<i64>() {
        return Ok(i);
    }
    let x = parse_f64(v, name, row)?;
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        Ok(x as i64)
    } else {
        Err(Error::Parse { row, msg: format!("{name}: '{v}' is not an integer code") })
    }
}

fn parse_binary(v: &str, name: &str, row: usize) -> Result<u8> {
    let x = parse_f64(v, name, row)?;
    if x == 0.0 {
        Ok(0)
    } else if x == 1.0 {
        Ok(1)
    } else {
        Err(Error::Validation { row: Some(row), msg: format!("{name} must be 0 or 1, got '{v}'") })
    }
}

/// Write a sample as CSV with the default column names.
pub fn write_sample<W: Write>(sample: &Sample, writer: W) -> Result<()> {
    let with_cell = sample.records.iter().any(|r| r.cell.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["y", "s", "d", "z", "weight"];
    if with_cell {
        header.push("cell");
    }
    wtr.write_record(&header)?;
    for r in &sample.records {
        let mut row = vec![r.y.to_string(), r.s.to_string(), r.d.to_string(), r.z.to_string(), r.w.to_string()];
        if with_cell {
            row.push(r.cell.clone().unwrap_or_default());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write a sample to a file path.
pub fn save_sample(sample: &Sample, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_sample(sample, std::io::BufWriter::new(file))
}

/// Propensity and probability mass of one instrument value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropensityEntry {
    pub p: f64,
    pub mass: f64,
}

/// Discrete propensity score `P(D=1 | Z=z)` and the instrument distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityTable {
    entries: BTreeMap<i64, PropensityEntry>,
    support_p: Vec<f64>,
}

impl PropensityTable {
    /// Build from `(z, p, mass)` triples. Masses are checked, not rescaled.
    pub fn from_entries(entries: impl IntoIterator<Item = (i64, f64, f64)>) -> Result<Self> {
        let entries: BTreeMap<i64, PropensityEntry> =
            entries.into_iter().map(|(z, p, mass)| (z, PropensityEntry { p, mass })).collect();
        if entries.is_empty() {
            return Err(Error::validation("propensity table is empty"));
        }
        let mut total = 0.0;
        for e in entries.values() {
            if !(0.0..=1.0).contains(&e.p) || !(0.0..=1.0).contains(&e.mass) {
                return Err(Error::validation("propensities and masses must lie in [0, 1]"));
            }
            total += e.mass;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("instrument masses sum to {total}, not 1")));
        }
        let mut support_p: Vec<f64> = entries.values().map(|e| e.p).collect();
        support_p.sort_by(f64::total_cmp);
        support_p.dedup();
        Ok(Self { entries, support_p })
    }

    pub fn entries(&self) -> &BTreeMap<i64, PropensityEntry> {
        &self.entries
    }

    pub fn get(&self, z: i64) -> Option<PropensityEntry> {
        self.entries.get(&z).copied()
    }

    /// Sorted distinct propensity values `p_1 < ... < p_N`.
    pub fn support_p(&self) -> &[f64] {
        &self.support_p
    }

    /// `E[P(Z)]`.
    pub fn mean_p(&self) -> f64 {
        self.entries.values().map(|e| e.mass * e.p).sum()
    }

    /// `P[P(Z) >= u]`, counting an atom located exactly at `u`.
    pub fn prob_p_ge(&self, u: f64) -> f64 {
        self.entries.values().filter(|e| e.p >= u).map(|e| e.mass).sum()
    }

    /// `P[P(Z) < u]`.
    pub fn prob_p_lt(&self, u: f64) -> f64 {
        self.entries.values().filter(|e| e.p < u).map(|e| e.mass).sum()
    }
}

/// Estimate `p(z)` as the weighted mean of `d` within each instrument group
/// and `mass(z)` as the weighted share of the group.
pub fn estimate_propensity(sample: &Sample) -> Result<PropensityTable> {
    let mut acc: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    for r in sample.records() {
        let e = acc.entry(r.z).or_insert((0.0, 0.0));
        e.0 += r.w;
        e.1 += r.w * f64::from(r.d);
    }
    let total: f64 = acc.values().map(|v| v.0).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("total weight is zero".into()));
    }
    let mut entries = Vec::with_capacity(acc.len());
    for (&z, &(w, wd)) in &acc {
        if !(w > 0.0) {
            return Err(Error::Degenerate(format!("instrument group z={z} has zero total weight")));
        }
        entries.push((z, (wd / w).clamp(0.0, 1.0), w / total));
    }
    // Fix the last mass so that the masses sum to one up to rounding of a single addition.
    let head: f64 = entries[..entries.len() - 1].iter().map(|e| e.2).sum();
    let last = entries.len() - 1;
    entries[last].2 = (1.0 - head).max(0.0);
    PropensityTable::from_entries(entries)
}

/// Write a propensity table as CSV `(z, p, mass)`.
pub fn write_propensity<W: Write>(table: &PropensityTable, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["z", "p", "mass"])?;
    for (z, e) in table.entries() {
        wtr.write_record([z.to_string(), e.p.to_string(), e.mass.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read a propensity table written by [`write_propensity`].
pub fn read_propensity<R: Read>(reader: R) -> Result<PropensityTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("missing required column '{name}'")))
    };
    let (iz, ip, im) = (col("z")?, col("p")?, col("mass")?);
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |j: usize, what: &str| -> Result<f64> {
            rec.get(j).unwrap_or("").parse().map_err(|_| Error::Parse { row, msg: format!("{what} must be a number") })
        };
        let z: i64 = rec.get(iz).unwrap_or("").parse().map_err(|_| Error::Parse { row, msg: "z must be an integer".into() })?;
        entries.push((z, num(ip, "p")?, num(im, "mass")?));
    }
    PropensityTable::from_entries(entries)
}

/// Grouping keys for [`weighted_summary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupKey {
    D,
    Z,
    S,
    Cell,
}

/// Weighted mean and standard error of one variable within one group.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryStat {
    pub mean: f64,
    pub se: f64,
}

/// One row of a grouped summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    /// Group labels, in the order of the requested keys.
    pub group: Vec<String>,
    pub n: usize,
    pub total_weight: f64,
    pub y: SummaryStat,
    pub s: SummaryStat,
    pub d: SummaryStat,
}

/// Weighted means of `y`, `s` and `d` per group.
///
/// The standard error is the linearization formula for a weighted mean,
/// `sqrt(sum w_i^2 (x_i - m)^2) / sum w_i`, which reduces to the usual
/// `sd / sqrt(n)` (population sd) with unit weights.
pub fn weighted_summary(sample: &Sample, by: &[GroupKey]) -> Vec<SummaryRow> {
    let label = |r: &ObservationRecord, k: GroupKey| match k {
        GroupKey::D => r.d.to_string(),
        GroupKey::Z => r.z.to_string(),
        GroupKey::S => r.s.to_string(),
        GroupKey::Cell => r.cell.clone().unwrap_or_default(),
    };
    let mut groups: BTreeMap<Vec<String>, Vec<&ObservationRecord>> = BTreeMap::new();
    for r in sample.records() {
        groups.entry(by.iter().map(|&k| label(r, k)).collect()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(group, rows)| {
            let total_weight: f64 = rows.iter().map(|r| r.w).sum();
            let stat = |f: &dyn Fn(&ObservationRecord) -> f64| {
                let mean = rows.iter().map(|r| r.w * f(r)).sum::<f64>() / total_weight;
                let ss: f64 = rows.iter().map(|r| (r.w * (f(r) - mean)).powi(2)).sum();
                SummaryStat { mean, se: ss.sqrt() / total_weight }
            };
            SummaryRow {
                n: rows.len(),
                total_weight,
                y: stat(&|r| r.y),
                s: stat(&|r| f64::from(r.s)),
                d: stat(&|r| f64::from(r.d)),
                group,
            }
        })
        .collect()
}
