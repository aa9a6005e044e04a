//! Rain-gauge stations: quality control, median imputation, and the
//! climatology/PCA/centroid-linkage clustering that groups stations into
//! rainfall regions.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{YearMonth, MONTH_NAMES};
use crate::fsio;

#[derive(Debug, Error)]
pub enum StationError {
    #[error("station {station}: no observed values for {}", MONTH_NAMES[*month])]
    NoObservations { station: String, month: usize },
    #[error("station {0} still has missing values")]
    NotImputed(String),
    #[error("feature column `{0}` has zero variance across stations")]
    DegenerateColumn(String),
    #[error("need at least {needed} stations, got {got}")]
    TooFewStations { needed: usize, got: usize },
    #[error("invalid station {station}: {message}")]
    InvalidStation { station: String, message: String },
    #[error("stations are not on a common time axis")]
    AxisMismatch,
    #[error("unknown station id `{0}`")]
    UnknownStation(String),
    #[error("invalid cluster parameters: {0}")]
    InvalidParams(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Monthly rainfall (mm/month) at one gauge; `None` marks a missing month.
#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub start: YearMonth,
    pub rain: Vec<Option<f64>>,
}

impl Station {
    pub fn validate(&self) -> Result<(), StationError> {
        let bad = |m: String| StationError::InvalidStation {
            station: self.id.clone(),
            message: m,
        };
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(bad(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(bad(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        if let Some(v) = self.rain.iter().flatten().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(bad(format!("rainfall value {v} is negative or not finite")));
        }
        Ok(())
    }

    pub fn month_of(&self, t: usize) -> YearMonth {
        self.start.add_months(t as i64)
    }

    pub fn is_complete(&self) -> bool {
        self.rain.iter().all(Option::is_some)
    }

    /// Values of the series, or `NotImputed` if any month is missing.
    pub fn values(&self) -> Result<Vec<f64>, StationError> {
        self.rain
            .iter()
            .map(|v| v.ok_or_else(|| StationError::NotImputed(self.id.clone())))
            .collect()
    }
}

/// Keeps a station iff for every calendar month the share of years with an
/// observation is at least `completeness`.
pub fn qc_filter(stations: &[Station], completeness: f64) -> Vec<Station> {
    stations
        .iter()
        .filter(|s| {
            let mut present = [0usize; 12];
            let mut total = [0usize; 12];
            for (t, v) in s.rain.iter().enumerate() {
                let m = s.month_of(t).month0();
                total[m] += 1;
                present[m] += v.is_some() as usize;
            }
            (0..12).all(|m| total[m] > 0 && present[m] as f64 >= completeness * total[m] as f64)
        })
        .cloned()
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Fills each missing month with the median of the station's observed values
/// for that calendar month.
pub fn impute_monthly_median(station: &Station) -> Result<Station, StationError> {
    let mut observed: [Vec<f64>; 12] = Default::default();
    for (t, v) in station.rain.iter().enumerate() {
        if let Some(v) = v {
            observed[station.month_of(t).month0()].push(*v);
        }
    }
    let mut medians = [f64::NAN; 12];
    let mut needed = [false; 12];
    for (t, v) in station.rain.iter().enumerate() {
        if v.is_none() {
            needed[station.month_of(t).month0()] = true;
        }
    }
    for m in 0..12 {
        if !needed[m] {
            continue;
        }
        if observed[m].is_empty() {
            return Err(StationError::NoObservations {
                station: station.id.clone(),
                month: m,
            });
        }
        medians[m] = median(&mut observed[m]);
    }
    let rain = station
        .rain
        .iter()
        .enumerate()
        .map(|(t, v)| Some(v.unwrap_or(medians[station.month_of(t).month0()])))
        .collect();
    Ok(Station {
        rain,
        ..station.clone()
    })
}

/// Mean rainfall of each calendar month, January first.
pub fn monthly_climatology(station: &Station) -> Result<[f64; 12], StationError> {
    let values = station.values()?;
    let mut sum = [0.0; 12];
    let mut count = [0usize; 12];
    for (t, v) in values.iter().enumerate() {
        let m = station.month_of(t).month0();
        sum[m] += v;
        count[m] += 1;
    }
    let mut out = [f64::NAN; 12];
    for m in 0..12 {
        if count[m] == 0 {
            return Err(StationError::NoObservations {
                station: station.id.clone(),
                month: m,
            });
        }
        out[m] = sum[m] / count[m] as f64;
    }
    Ok(out)
}

/// Standardized clustering features, one row per station.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub station_ids: Vec<String>,
    pub columns: Vec<String>,
    pub data: DMatrix<f64>,
}

pub fn feature_names() -> Vec<String> {
    let mut names = vec!["lat".to_string(), "lon".to_string()];
    names.extend(MONTH_NAMES.iter().map(|m| format!("clim_{}", &m[..3].to_lowercase())));
    names
}

/// Rows `[lat, lon, 12 monthly means]`, every column z-scored with the
/// population standard deviation across stations.
pub fn build_features(stations: &[Station]) -> Result<FeatureMatrix, StationError> {
    if stations.len() < 2 {
        return Err(StationError::TooFewStations {
            needed: 2,
            got: stations.len(),
        });
    }
    let columns = feature_names();
    let mut data = DMatrix::zeros(stations.len(), columns.len());
    for (r, s) in stations.iter().enumerate() {
        data[(r, 0)] = s.lat;
        data[(r, 1)] = s.lon;
        for (m, v) in monthly_climatology(s)?.iter().enumerate() {
            data[(r, 2 + m)] = *v;
        }
    }
    let n = stations.len() as f64;
    for c in 0..columns.len() {
        let col = data.column(c);
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 1e-12 * (1.0 + mean.abs())) {
            return Err(StationError::DegenerateColumn(columns[c].clone()));
        }
        for v in data.column_mut(c).iter_mut() {
            *v = (*v - mean) / std;
        }
    }
    Ok(FeatureMatrix {
        station_ids: stations.iter().map(|s| s.id.clone()).collect(),
        columns,
        data,
    })
}

/// Principal axes of a data matrix, sorted by descending eigenvalue of the
/// population column covariance.
#[derive(Debug, Clone)]
pub struct Pca {
    pub means: Vec<f64>,
    /// Columns are unit eigenvectors; the largest-magnitude loading of each is positive.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &DMatrix<f64>) -> Pca {
        let (rows, cols) = x.shape();
        let means: Vec<f64> = (0..cols)
            .map(|c| x.column(c).iter().sum::<f64>() / rows as f64)
            .collect();
        let centered = center(x, &means);
        let cov = centered.transpose() * &centered / rows as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = DMatrix::zeros(cols, cols);
        let mut eigenvalues = Vec::with_capacity(cols);
        for (k, &src) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).clone_owned();
            let mut pivot = 0;
            for i in 1..cols {
                if v[i].abs() > v[pivot].abs() {
                    pivot = i;
                }
            }
            if v[pivot] < 0.0 {
                v.neg_mut();
            }
            components.set_column(k, &v);
            eigenvalues.push(eig.eigenvalues[src].max(0.0));
        }
        Pca {
            means,
            components,
            eigenvalues,
        }
    }

    /// Scores of `x` on the first `n` components.
    pub fn transform(&self, x: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        center(x, &self.means) * self.components.columns(0, n)
    }

    /// Maps scores on the first `n` components back to the input space.
    pub fn inverse_transform(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let n = scores.ncols();
        let mut out = scores * self.components.columns(0, n).transpose();
        for (c, m) in self.means.iter().enumerate() {
            out.column_mut(c).add_scalar_mut(*m);
        }
        out
    }
}

fn center(x: &DMatrix<f64>, means: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (c, m) in means.iter().enumerate() {
        out.column_mut(c).add_scalar_mut(-m);
    }
    out
}

/// Projects `x` onto its top `n` principal components.
pub fn pca_reduce(x: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    assert!(n >= 1 && n <= x.ncols(), "component count {n} out of range");
    Pca::fit(x).transform(x, n)
}

/// `d`: centroid-distance merge threshold; `n`: number of PCA components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub d: f64,
    pub n: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { d: 2.0, n: 2 }
    }
}

impl ClusterParams {
    pub fn validate(&self, feature_dim: usize) -> Result<(), StationError> {
        if !(self.d > 0.0) {
            return Err(StationError::InvalidParams(format!("d must be > 0, got {}", self.d)));
        }
        if self.n < 1 || self.n > feature_dim {
            return Err(StationError::InvalidParams(format!(
                "n must be in 1..={feature_dim}, got {}",
                self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: u32,
    /// Sorted station ids.
    pub member_ids: Vec<String>,
    pub centroid: Vec<f64>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

struct Group {
    rows: Vec<usize>,
    centroid: Vec<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Agglomerative centroid-linkage clustering of the rows of `features`.
///
/// Starting from singletons, the closest pair of clusters is merged while
/// their centroid distance is below `d`. Equal distances go to the pair with
/// the lexicographically smallest internal ids; a merged cluster takes the
/// next unused id. Output ids run 1..K by descending size, then by smallest
/// member id.
pub fn cluster_stations(features: &DMatrix<f64>, station_ids: &[String], d: f64) -> Vec<Cluster> {
    assert_eq!(features.nrows(), station_ids.len());
    let dim = features.ncols();
    let mut groups: Vec<Group> = (0..features.nrows())
        .map(|r| Group {
            rows: vec![r],
            centroid: features.row(r).iter().copied().collect(),
        })
        .collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let dist = distance(&groups[a].centroid, &groups[b].centroid);
                // groups stay in id order, so (a, b) is the lexicographic pair order
                if best.map_or(true, |(bd, _, _)| dist < bd) {
                    best = Some((dist, a, b));
                }
            }
        }
        let Some((dist, a, b)) = best else { break };
        if !(dist < d) {
            break;
        }
        let gb = groups.remove(b);
        let ga = groups.remove(a);
        let mut rows = ga.rows;
        rows.extend(gb.rows);
        rows.sort_unstable();
        let mut centroid = vec![0.0; dim];
        for &r in &rows {
            for (c, v) in centroid.iter_mut().enumerate() {
                *v += features[(r, c)];
            }
        }
        for v in &mut centroid {
            *v /= rows.len() as f64;
        }
        // merged groups get fresh, larger ids, so pushing keeps id order
        groups.push(Group { rows, centroid });
    }

    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|g| {
            let mut member_ids: Vec<String> = g.rows.iter().map(|&r| station_ids[r].clone()).collect();
            member_ids.sort();
            Cluster {
                id: 0,
                member_ids,
                centroid: g.centroid,
            }
        })
        .collect();
    clusters.sort_by(|x, y| y.len().cmp(&x.len()).then_with(|| x.member_ids[0].cmp(&y.member_ids[0])));
    for (k, c) in clusters.iter_mut().enumerate() {
        c.id = k as u32 + 1;
    }
    clusters
}

/// Full grouping pipeline on QC'd, imputed stations: features, PCA, clustering.
pub fn cluster_pipeline(stations: &[Station], params: ClusterParams) -> Result<Vec<Cluster>, StationError> {
    let features = build_features(stations)?;
    params.validate(features.columns.len())?;
    let reduced = pca_reduce(&features.data, params.n);
    Ok(cluster_stations(&reduced, &features.station_ids, params.d))
}

/// QC followed by imputation, dropping nothing else.
pub fn prepare_stations(stations: &[Station], completeness: f64) -> Result<Vec<Station>, StationError> {
    qc_filter(stations, completeness)
        .iter()
        .map(impute_monthly_median)
        .collect()
}

/// Mean monthly rainfall across a group of stations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSeries {
    pub cluster_id: u32,
    pub start: YearMonth,
    pub values: Vec<f64>,
}

/// Pointwise unweighted mean of the members' series.
pub fn cluster_mean_series(cluster: &Cluster, stations: &[Station]) -> Result<ClusterSeries, StationError> {
    let (start, values) = pooled_mean(&cluster.member_ids, stations)?;
    Ok(ClusterSeries {
        cluster_id: cluster.id,
        start,
        values,
    })
}

/// Mean series over the union of members of several clusters.
pub fn pooled_cluster_series(
    clusters: &[Cluster],
    ids: &[u32],
    stations: &[Station],
) -> Result<ClusterSeries, StationError> {
    let mut members: Vec<String> = clusters
        .iter()
        .filter(|c| ids.contains(&c.id))
        .flat_map(|c| c.member_ids.iter().cloned())
        .collect();
    members.sort();
    members.dedup();
    let (start, values) = pooled_mean(&members, stations)?;
    Ok(ClusterSeries {
        cluster_id: ids.first().copied().unwrap_or(0),
        start,
        values,
    })
}

fn pooled_mean(member_ids: &[String], stations: &[Station]) -> Result<(YearMonth, Vec<f64>), StationError> {
    if member_ids.is_empty() {
        return Err(StationError::TooFewStations { needed: 1, got: 0 });
    }
    let by_id: HashMap<&str, &Station> = stations.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut members = Vec::with_capacity(member_ids.len());
    for id in member_ids {
        let s = by_id
            .get(id.as_str())
            .ok_or_else(|| StationError::UnknownStation(id.clone()))?;
        members.push(*s);
    }
    // sorted member order makes the floating-point sum order-independent
    members.sort_by(|a, b| a.id.cmp(&b.id));
    let start = members[0].start;
    let len = members[0].rain.len();
    let mut sum = vec![0.0; len];
    for s in &members {
        if s.start != start || s.rain.len() != len {
            return Err(StationError::AxisMismatch);
        }
        for (acc, v) in sum.iter_mut().zip(s.values()?) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    Ok((start, sum.into_iter().map(|v| v / n).collect()))
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let comb2 = |k: u64| (k * k.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&k| comb2(k)).sum();
    let sum_rows: f64 = rows.values().map(|&k| comb2(k)).sum();
    let sum_cols: f64 = cols.values().map(|&k| comb2(k)).sum();
    let total = comb2(n as u64);
    let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Serialize, Deserialize)]
struct StationRow {
    station_id: String,
    lat: f64,
    lon: f64,
    year: i32,
    month: u32,
    rain_mm: Option<f64>,
}

/// Reads `station_id,lat,lon,year,month,rain_mm` rows. All stations are placed
/// on the common axis spanning the earliest to the latest month in the file;
/// months without a row are missing.
pub fn read_stations_csv(path: &Path) -> Result<Vec<Station>, StationError> {
    let mut reader = csv::Reader::from_path(path)?;
    parse_station_rows(reader.deserialize())
}

fn parse_station_rows<I>(rows: I) -> Result<Vec<Station>, StationError>
where
    I: Iterator<Item = Result<StationRow, csv::Error>>,
{
    let mut by_id: BTreeMap<String, (f64, f64, BTreeMap<YearMonth, Option<f64>>)> = BTreeMap::new();
    let mut first: Option<YearMonth> = None;
    let mut last: Option<YearMonth> = None;
    for row in rows {
        let row = row?;
        let ym = YearMonth::new(row.year, row.month).ok_or_else(|| StationError::InvalidStation {
            station: row.station_id.clone(),
            message: format!("month {} out of range", row.month),
        })?;
        first = Some(first.map_or(ym, |f| f.min(ym)));
        last = Some(last.map_or(ym, |l| l.max(ym)));
        let entry = by_id
            .entry(row.station_id.clone())
            .or_insert_with(|| (row.lat, row.lon, BTreeMap::new()));
        if entry.0 != row.lat || entry.1 != row.lon {
            return Err(StationError::InvalidStation {
                station: row.station_id,
                message: "coordinates differ between rows".into(),
            });
        }
        if entry.2.insert(ym, row.rain_mm).is_some() {
            return Err(StationError::InvalidStation {
                station: row.station_id,
                message: format!("duplicate row for {ym}"),
            });
        }
    }
    let (Some(first), Some(last)) = (first, last) else {
        return Ok(Vec::new());
    };
    let len = first.months_until(last) as usize + 1;
    by_id
        .into_iter()
        .map(|(id, (lat, lon, months))| {
            let rain = (0..len)
                .map(|t| months.get(&first.add_months(t as i64)).copied().flatten())
                .collect();
            let s = Station {
                id,
                lat,
                lon,
                start: first,
                rain,
            };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

pub fn write_stations_csv(stations: &[Station], path: &Path) -> Result<(), StationError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in stations {
        for (t, v) in s.rain.iter().enumerate() {
            let ym = s.month_of(t);
            w.serialize(StationRow {
                station_id: s.id.clone(),
                lat: s.lat,
                lon: s.lon,
                year: ym.year,
                month: ym.month,
                rain_mm: *v,
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterRow {
    cluster_id: u32,
    station_id: String,
}

pub fn write_clusters_csv(clusters: &[Cluster], path: &Path) -> Result<(), StationError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in clusters {
        for id in &c.member_ids {
            w.serialize(ClusterRow {
                cluster_id: c.id,
                station_id: id.clone(),
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

/// Reads `cluster_id,station_id` rows. Centroids are not stored and come back empty.
pub fn read_clusters_csv(path: &Path) -> Result<Vec<Cluster>, StationError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut members: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: ClusterRow = row?;
        members.entry(row.cluster_id).or_default().push(row.station_id);
    }
    Ok(members
        .into_iter()
        .map(|(id, mut member_ids)| {
            member_ids.sort();
            Cluster {
                id,
                member_ids,
                centroid: Vec::new(),
            }
        })
        .collect())
}
