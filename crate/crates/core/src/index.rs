//! The two-area SST difference index, its seasonal correlations with
//! cluster rainfall, and the season-aware objective
//! `q = (r_onset² + r_retreat²) / 2`.

use std::fmt;
use std::ops::{Deref, Range};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::YearMonth;
use crate::fsio;
use crate::geogrid::{area_cells, AreaSet, GridError, OceanMask, SstField};
use crate::stations::ClusterSeries;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("zero variance in {0}")]
    ZeroVariance(Side),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("{season} season has {got} samples, need at least 3")]
    InsufficientSeasonSamples { season: &'static str, got: usize },
    #[error("index and rainfall series are not on the same time axis")]
    AxisMismatch,
    #[error("reference window {start}..{end} does not fit a series of length {len}")]
    InvalidWindow { start: usize, end: usize, len: usize },
    #[error("malformed index csv: {0}")]
    Format(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which argument of a two-series computation was degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    X,
    Y,
    Reference,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::X => "x",
            Side::Y => "y",
            Side::Reference => "reference window",
        })
    }
}

/// Calendar months of the onset season; the rest form the retreat season.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeasonMask {
    onset: [bool; 12],
}

impl Default for SeasonMask {
    /// Onset October to March, retreat April to September.
    fn default() -> Self {
        Self::from_onset_months(&[10, 11, 12, 1, 2, 3]).expect("valid months")
    }
}

impl SeasonMask {
    /// `months` are 1-based calendar months.
    pub fn from_onset_months(months: &[u32]) -> Option<Self> {
        let mut onset = [false; 12];
        for &m in months {
            if !(1..=12).contains(&m) {
                return None;
            }
            onset[m as usize - 1] = true;
        }
        Some(Self { onset })
    }

    pub fn is_onset(&self, ym: YearMonth) -> bool {
        self.onset[ym.month0()]
    }

    pub fn onset_months(&self) -> Vec<u32> {
        (1..=12).filter(|m| self.onset[*m as usize - 1]).collect()
    }

    pub fn retreat_months(&self) -> Vec<u32> {
        (1..=12).filter(|m| !self.onset[*m as usize - 1]).collect()
    }
}

/// Standardized monthly index aligned to a time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    pub start: YearMonth,
    pub values: Vec<f64>,
    /// Months whose mean/std define the standardization.
    pub reference: Range<usize>,
}

impl IndexSeries {
    pub fn month(&self, t: usize) -> YearMonth {
        self.start.add_months(t as i64)
    }
}

/// Outcome of scoring one (A, B) candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub r_onset: f64,
    pub r_retreat: f64,
    pub q: f64,
    pub valid: bool,
    pub violation: Option<String>,
}

impl ObjectiveReport {
    pub fn invalid(reason: impl Into<String>) -> Self {
        Self {
            r_onset: f64::NAN,
            r_retreat: f64::NAN,
            q: f64::NAN,
            valid: false,
            violation: Some(reason.into()),
        }
    }

    /// `q` for valid reports, `None` otherwise.
    pub fn score(&self) -> Option<f64> {
        self.valid.then_some(self.q)
    }
}

/// Rainfall targets for both seasons on a common time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonTargets {
    pub onset: ClusterSeries,
    pub retreat: ClusterSeries,
}

impl SeasonTargets {
    /// Same targets with each calendar month's mean removed.
    pub fn to_anomalies(&self) -> Self {
        fn deseason(s: &ClusterSeries) -> ClusterSeries {
            let mut sum = [0.0; 12];
            let mut n = [0usize; 12];
            for (t, v) in s.values.iter().enumerate() {
                let m = s.start.add_months(t as i64).month0();
                sum[m] += v;
                n[m] += 1;
            }
            let values = s
                .values
                .iter()
                .enumerate()
                .map(|(t, v)| {
                    let m = s.start.add_months(t as i64).month0();
                    v - sum[m] / n[m] as f64
                })
                .collect();
            ClusterSeries {
                values,
                ..s.clone()
            }
        }
        Self {
            onset: deseason(&self.onset),
            retreat: deseason(&self.retreat),
        }
    }
}

/// `SST_B(t) − SST_A(t)` in °C.
pub fn raw_index(field: &SstField, a: &AreaSet, b: &AreaSet) -> Result<Vec<f64>, IndexError> {
    let sa = field.mean_series(&field.ocean_cells(a))?;
    let sb = field.mean_series(&field.ocean_cells(b))?;
    Ok(sb.iter().zip(&sa).map(|(b, a)| b - a).collect())
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores every point of `series` with the population mean and standard
/// deviation of the `reference` window.
pub fn normalise_series(
    series: &[f64],
    start: YearMonth,
    reference: Range<usize>,
) -> Result<IndexSeries, IndexError> {
    if reference.start >= reference.end || reference.end > series.len() {
        return Err(IndexError::InvalidWindow {
            start: reference.start,
            end: reference.end,
            len: series.len(),
        });
    }
    let window = &series[reference.clone()];
    if window.len() < 2 {
        return Err(IndexError::TooShort {
            needed: 2,
            got: window.len(),
        });
    }
    let (mean, std) = mean_std(window);
    let scale = window.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(std > 1e-12 * scale) || !std.is_finite() {
        return Err(IndexError::ZeroVariance(Side::Reference));
    }
    Ok(IndexSeries {
        start,
        values: series.iter().map(|v| (v - mean) / std).collect(),
        reference,
    })
}

/// Sample Pearson correlation, accumulated with single-pass co-moment updates.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, IndexError> {
    if x.len() != y.len() {
        return Err(IndexError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(IndexError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if !(sxx > 0.0) {
        return Err(IndexError::ZeroVariance(Side::X));
    }
    if !(syy > 0.0) {
        return Err(IndexError::ZeroVariance(Side::Y));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Month indices of each season on an axis starting at `start`.
fn season_indices(start: YearMonth, len: usize, mask: &SeasonMask) -> (Vec<usize>, Vec<usize>) {
    (0..len).partition(|&t| mask.is_onset(start.add_months(t as i64)))
}

fn gather(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&t| values[t]).collect()
}

/// `(r_onset, r_retreat)`: Pearson correlation of the index with each target,
/// restricted to that target's season.
pub fn seasonal_correlations(
    z: &IndexSeries,
    targets: &SeasonTargets,
    mask: &SeasonMask,
) -> Result<(f64, f64), IndexError> {
    let len = z.values.len();
    for s in [&targets.onset, &targets.retreat] {
        if s.start != z.start || s.values.len() != len {
            return Err(IndexError::AxisMismatch);
        }
    }
    let (on, re) = season_indices(z.start, len, mask);
    correlate_seasons(&z.values, targets, &on, &re)
}

fn correlate_seasons(
    z: &[f64],
    targets: &SeasonTargets,
    onset_idx: &[usize],
    retreat_idx: &[usize],
) -> Result<(f64, f64), IndexError> {
    if onset_idx.len() < 3 {
        return Err(IndexError::InsufficientSeasonSamples {
            season: "onset",
            got: onset_idx.len(),
        });
    }
    if retreat_idx.len() < 3 {
        return Err(IndexError::InsufficientSeasonSamples {
            season: "retreat",
            got: retreat_idx.len(),
        });
    }
    let r_on = pearson(&gather(z, onset_idx), &gather(&targets.onset.values, onset_idx))?;
    let r_re = pearson(&gather(z, retreat_idx), &gather(&targets.retreat.values, retreat_idx))?;
    Ok((r_on, r_re))
}

pub fn objective_q(r_onset: f64, r_retreat: f64) -> f64 {
    (r_onset * r_onset + r_retreat * r_retreat) / 2.0
}

/// Reusable scorer for many candidate pairs against one field and one set of
/// targets. Works with borrowed (`&SstField`) or shared (`Arc<SstField>`)
/// inputs. Pure; safe to share across threads.
#[derive(Debug, Clone)]
pub struct PairEvaluator<F, T> {
    field: F,
    mask: OceanMask,
    targets: T,
    min_ocean: f64,
    reference: Range<usize>,
    onset_idx: Vec<usize>,
    retreat_idx: Vec<usize>,
}

impl<F, T> PairEvaluator<F, T>
where
    F: Deref<Target = SstField>,
    T: Deref<Target = SeasonTargets>,
{
    pub fn new(
        field: F,
        targets: T,
        season: &SeasonMask,
        min_ocean: f64,
        reference: Range<usize>,
    ) -> Result<Self, IndexError> {
        let spec = field.spec();
        for s in [&targets.onset, &targets.retreat] {
            if s.start != spec.t0 || s.values.len() != spec.nt {
                return Err(IndexError::AxisMismatch);
            }
        }
        if reference.start >= reference.end || reference.end > spec.nt {
            return Err(IndexError::InvalidWindow {
                start: reference.start,
                end: reference.end,
                len: spec.nt,
            });
        }
        let (onset_idx, retreat_idx) = season_indices(spec.t0, spec.nt, season);
        let mask = field.ocean_mask();
        Ok(Self {
            field,
            mask,
            targets,
            min_ocean,
            reference,
            onset_idx,
            retreat_idx,
        })
    }

    pub fn field(&self) -> &SstField {
        &self.field
    }

    pub fn targets(&self) -> &SeasonTargets {
        &self.targets
    }

    pub fn reference(&self) -> Range<usize> {
        self.reference.clone()
    }

    pub fn mask(&self) -> &OceanMask {
        &self.mask
    }

    pub fn min_ocean(&self) -> f64 {
        self.min_ocean
    }

    /// `None` when the area satisfies the ocean-coverage rule, otherwise the
    /// violation text.
    pub fn check_area(&self, name: &str, area: &AreaSet) -> Option<String> {
        let cells = area_cells(area, &self.mask.spec);
        if cells.is_empty() {
            return Some(format!("area {name} covers no grid cells"));
        }
        let ocean = cells.iter().filter(|&&(i, j)| self.mask.is_ocean(i, j)).count();
        let frac = ocean as f64 / cells.len() as f64;
        (frac < self.min_ocean).then(|| {
            format!(
                "ocean_fraction({name}) = {frac:.3} < {:.3}",
                self.min_ocean
            )
        })
    }

    pub fn evaluate(&self, a: &AreaSet, b: &AreaSet) -> ObjectiveReport {
        if let Some(v) = self.check_area("A", a).or_else(|| self.check_area("B", b)) {
            return ObjectiveReport::invalid(v);
        }
        match raw_index(&self.field, a, b) {
            Ok(raw) => self.evaluate_raw(&raw),
            Err(e) => ObjectiveReport::invalid(e.to_string()),
        }
    }

    /// Scores an already computed `SST_B − SST_A` series.
    pub fn evaluate_raw(&self, raw: &[f64]) -> ObjectiveReport {
        match self.try_evaluate_raw(raw) {
            Ok((r_onset, r_retreat)) => ObjectiveReport {
                r_onset,
                r_retreat,
                q: objective_q(r_onset, r_retreat),
                valid: true,
                violation: None,
            },
            Err(e) => ObjectiveReport::invalid(e.to_string()),
        }
    }

    fn try_evaluate_raw(&self, raw: &[f64]) -> Result<(f64, f64), IndexError> {
        let z = normalise_series(raw, self.field.spec().t0, self.reference.clone())?;
        correlate_seasons(&z.values, &self.targets, &self.onset_idx, &self.retreat_idx)
    }

    /// The standardized index for a pair, regardless of the ocean rule.
    pub fn index(&self, a: &AreaSet, b: &AreaSet) -> Result<IndexSeries, IndexError> {
        let raw = raw_index(&self.field, a, b)?;
        normalise_series(&raw, self.field.spec().t0, self.reference.clone())
    }
}

/// Scores the pair `(A, B)`. Never fails: constraint violations and
/// degenerate series come back as invalid reports.
pub fn evaluate_pair(
    field: &SstField,
    a: &AreaSet,
    b: &AreaSet,
    targets: &SeasonTargets,
    season: &SeasonMask,
    min_ocean: f64,
    reference: Range<usize>,
) -> ObjectiveReport {
    match PairEvaluator::new(field, targets, season, min_ocean, reference) {
        Ok(ev) => ev.evaluate(a, b),
        Err(e) => ObjectiveReport::invalid(e.to_string()),
    }
}

fn fmt_opt(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

#[derive(Serialize)]
struct ReportRow {
    r_onset: String,
    r_retreat: String,
    q: String,
    valid: bool,
    violation: String,
}

pub fn write_objective_csv(reports: &[ObjectiveReport], path: &Path) -> Result<(), IndexError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(ReportRow {
            r_onset: fmt_opt(r.r_onset),
            r_retreat: fmt_opt(r.r_retreat),
            q: fmt_opt(r.q),
            valid: r.valid,
            violation: r.violation.clone().unwrap_or_default(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    year: i32,
    month: u32,
    z: f64,
}

pub fn write_index_csv(index: &IndexSeries, path: &Path) -> Result<(), IndexError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (t, z) in index.values.iter().enumerate() {
        let ym = index.month(t);
        w.serialize(IndexRow {
            year: ym.year,
            month: ym.month,
            z: *z,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

/// Reads a `year,month,z` file into `(first month, values)`. Rows must be
/// consecutive months.
pub fn read_index_csv(path: &Path) -> Result<(YearMonth, Vec<f64>), IndexError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut start = None;
    let mut values = Vec::new();
    for row in reader.deserialize() {
        let row: IndexRow = row?;
        let ym = YearMonth::new(row.year, row.month)
            .ok_or_else(|| IndexError::Format(format!("month {} out of range", row.month)))?;
        let first = *start.get_or_insert(ym);
        if first.add_months(values.len() as i64) != ym {
            return Err(IndexError::Format(format!("gap or disorder at {ym}")));
        }
        values.push(row.z);
    }
    let start = start.ok_or_else(|| IndexError::Format("no rows".into()))?;
    Ok((start, values))
}
