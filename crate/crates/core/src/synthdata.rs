//! Deterministic synthetic worlds with a planted SST dipole.
//!
//! A unit-variance AR(1) latent `s(t)` drives three things:
//!
//! * SST: cells inside the planted rect B* get `+α·s(t)`, cells inside A*
//!   get `−α·s(t)`, on top of a seasonal cycle, a latitude gradient and iid
//!   cell noise. Land is a western coastal band.
//! * Rainfall at "S" (southern) stations: `c_m·(1 + k·s(t) + …)` during the
//!   onset months, and at "U" (upper) stations during the retreat months,
//!   where `c_m` is the regime's monthly climatology.
//! * Surrogate global indices with fixed sample correlations to a target.
//!
//! Every output is a pure function of `(spec, seed)`; each component draws
//! from its own ChaCha stream.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::forecast::FeatureMatrix;
use crate::geogrid::{rect_cells, AreaSet, GridError, GridSpec, Rect, SstField};
use crate::index::{SeasonMask, SeasonTargets};
use crate::rl_env::AreaPair;
use crate::stations::{cluster_mean_series, prepare_stations, Cluster, ClusterSeries, Station, StationError};

const STREAM_LATENT: u64 = 1;
const STREAM_SST: u64 = 2;
const STREAM_STATIONS: u64 = 3;
const STREAM_INDICES: u64 = 4;
const STREAM_FORECAST: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Monthly rainfall climatology (mm/month, January first) of the southern
/// regime: wet October to January.
pub const SOUTH_CLIMATOLOGY: [f64; 12] = [
    200.0, 170.0, 180.0, 100.0, 110.0, 100.0, 100.0, 110.0, 130.0, 230.0, 280.0, 260.0,
];

/// Monthly rainfall climatology of the upper regime: wet May to
/// September, dry winter.
pub const UPPER_CLIMATOLOGY: [f64; 12] = [
    15.0, 25.0, 45.0, 190.0, 220.0, 200.0, 210.0, 240.0, 270.0, 170.0, 50.0, 20.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Coupled to the latent during the onset months.
    South,
    /// Coupled to the latent during the retreat months.
    Upper,
}

impl Regime {
    pub fn prefix(self) -> char {
        match self {
            Regime::South => 'S',
            Regime::Upper => 'U',
        }
    }

    pub fn climatology(self) -> &'static [f64; 12] {
        match self {
            Regime::South => &SOUTH_CLIMATOLOGY,
            Regime::Upper => &UPPER_CLIMATOLOGY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub grid: GridSpec,
    /// Minimum width of the western land band, in cells.
    pub coast_cells: usize,
    /// Extra land width that varies with latitude, in cells.
    pub coast_wiggle: usize,
    pub planted_a: Rect,
    pub planted_b: Rect,
    /// Starting areas for the optimizer, offset from the planted ones.
    pub initial: AreaPair,
    /// Lag-one autocorrelation of the latent.
    pub phi: f64,
    /// SST response to the latent inside the planted rects, °C.
    pub alpha: f64,
    pub sst_noise: f64,
    pub sst_base: f64,
    pub sst_seasonal_amp: f64,
    /// °C per degree of latitude.
    pub sst_lat_gradient: f64,
    /// Relative rainfall response to the latent, onset-coupled stations.
    pub k_onset: f64,
    /// Relative rainfall response to the latent, retreat-coupled stations.
    pub k_retreat: f64,
    /// Relative sd of noise shared by all stations of a regime.
    pub regional_noise: f64,
    /// Relative sd of per-station noise.
    pub station_noise: f64,
    pub stations_per_regime: usize,
    /// Extra stations per regime with a month below the QC bar.
    pub faulty_per_regime: usize,
    /// Chance that a good station misses a value.
    pub missing_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let r = |a, b, c, d| Rect::new(a, b, c, d).expect("valid rect");
        Self {
            grid: GridSpec {
                lat0: 0.25,
                lon0: 100.25,
                dlat: 0.5,
                dlon: 0.5,
                nlat: 40,
                nlon: 40,
                t0: YearMonth::new(1982, 1).expect("valid month"),
                nt: 240,
            },
            coast_cells: 3,
            coast_wiggle: 3,
            planted_a: r(12.0, 15.0, 110.0, 114.0),
            planted_b: r(4.0, 7.0, 106.0, 110.0),
            initial: AreaPair {
                a: AreaSet::single(r(11.0, 14.0, 111.0, 115.0)),
                b: AreaSet::single(r(5.0, 8.0, 105.0, 109.0)),
            },
            phi: 0.8,
            alpha: 0.25,
            sst_noise: 1.0,
            sst_base: 27.5,
            sst_seasonal_amp: 1.5,
            sst_lat_gradient: -0.1,
            k_onset: 0.3,
            k_retreat: 0.3,
            regional_noise: 0.1,
            station_noise: 0.3,
            stations_per_regime: 20,
            faulty_per_regime: 2,
            missing_rate: 0.01,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        self.grid.validate()?;
        let dom = self.grid.bounds();
        for r in [&self.planted_a, &self.planted_b] {
            if !dom.contains_rect(r) {
                return Err(GridError::InvalidSpec(format!("planted rect {:?} outside grid", r.to_array())));
            }
        }
        if !(self.phi.abs() < 1.0) {
            return Err(GridError::InvalidSpec("phi must be in (-1, 1)".into()));
        }
        Ok(())
    }

    /// The full grid as a search domain.
    pub fn domain(&self) -> Rect {
        self.grid.bounds()
    }

    pub fn planted(&self) -> AreaPair {
        AreaPair {
            a: AreaSet::single(self.planted_a),
            b: AreaSet::single(self.planted_b),
        }
    }

    /// Number of land cells at the western edge of latitude row `i`.
    pub fn land_width(&self, i: usize) -> usize {
        let phase = i as f64 / self.grid.nlat as f64 * std::f64::consts::TAU;
        let extra = (0.5 * (1.0 + phase.sin()) * self.coast_wiggle as f64).round() as usize;
        self.coast_cells + extra
    }

    pub fn is_land(&self, i: usize, j: usize) -> bool {
        j < self.land_width(i)
    }
}

/// The AR(1) latent, stationary with unit variance.
pub fn gen_latent(n: usize, phi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut s = Vec::with_capacity(n);
    let mut x = normal(rng);
    for _ in 0..n {
        s.push(x);
        x = phi * x + innov * normal(rng);
    }
    s
}

pub fn latent(spec: &SynthSpec, seed: u64) -> Vec<f64> {
    gen_latent(spec.grid.nt, spec.phi, &mut rng_for(seed, STREAM_LATENT))
}

pub fn gen_sst(spec: &SynthSpec, seed: u64) -> Result<SstField, GridError> {
    spec.validate()?;
    let g = &spec.grid;
    let s = latent(spec, seed);
    let mut rng = rng_for(seed, STREAM_SST);
    let n = g.cells_per_slice();
    let mut sign = vec![0.0; n];
    for (i, j) in rect_cells(&spec.planted_b, g) {
        sign[i * g.nlon + j] += 1.0;
    }
    for (i, j) in rect_cells(&spec.planted_a, g) {
        sign[i * g.nlon + j] -= 1.0;
    }
    let mut values = Vec::with_capacity(n * g.nt);
    for (t, st) in s.iter().enumerate() {
        let m = g.month(t).month0() as f64;
        let seasonal = spec.sst_seasonal_amp * (std::f64::consts::TAU * (m - 3.0) / 12.0).cos();
        for i in 0..g.nlat {
            let (lat, _) = g.cell_center(i, 0);
            let base = spec.sst_base + seasonal + spec.sst_lat_gradient * (lat - 10.0);
            for j in 0..g.nlon {
                let noise = spec.sst_noise * normal(&mut rng);
                if spec.is_land(i, j) {
                    values.push(f32::NAN);
                } else {
                    let v = base + spec.alpha * sign[i * g.nlon + j] * st + noise;
                    values.push(v as f32);
                }
            }
        }
    }
    SstField::new(g.clone(), values)
}

/// Generated stations with their planted regime.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthStations {
    pub stations: Vec<Station>,
    pub regimes: HashMap<String, Regime>,
}

impl SynthStations {
    pub fn regime(&self, id: &str) -> Option<Regime> {
        self.regimes.get(id).copied()
    }
}

/// Per-station scale factors, evenly spread with mean exactly one.
pub fn station_scales(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|k| 0.95 + 0.1 * k as f64 / (n - 1) as f64).collect()
}

pub fn gen_stations(spec: &SynthSpec, seed: u64) -> Result<SynthStations, GridError> {
    spec.validate()?;
    let s = latent(spec, seed);
    let mut rng = rng_for(seed, STREAM_STATIONS);
    let season = SeasonMask::default();
    let g = &spec.grid;
    let mut stations = Vec::new();
    let mut regimes = HashMap::new();
    for regime in [Regime::South, Regime::Upper] {
        let (lat_c, lon_c, k, coupled_onset) = match regime {
            Regime::South => (6.5, 100.5, spec.k_onset, true),
            Regime::Upper => (17.0, 99.5, spec.k_retreat, false),
        };
        let clim = regime.climatology();
        let regional: Vec<f64> = (0..g.nt).map(|_| normal(&mut rng)).collect();
        let n_good = spec.stations_per_regime;
        let scales = station_scales(n_good);
        for idx in 0..n_good + spec.faulty_per_regime {
            let faulty = idx >= n_good;
            let scale = if faulty { 1.0 } else { scales[idx] };
            let lat = lat_c + rng.random_range(-0.5..0.5);
            let lon = lon_c + rng.random_range(-0.3..0.3);
            let dead_month = rng.random_range(0..12usize);
            let mut rain = Vec::with_capacity(g.nt);
            for (t, st) in s.iter().enumerate() {
                let ym = g.month(t);
                let m = ym.month0();
                let coupled = season.is_onset(ym) == coupled_onset;
                let signal = if coupled { k * st } else { 0.0 };
                let e = normal(&mut rng);
                let rel = 1.0 + signal + spec.regional_noise * regional[t] + spec.station_noise * e;
                let value = (scale * clim[m] * rel).max(0.0);
                let miss_draw: f64 = rng.random();
                let missing = if faulty {
                    // a quarter of this month's values gone, plus scattered gaps
                    (m == dead_month && (t / 12) % 4 != 0) || miss_draw < spec.missing_rate
                } else {
                    miss_draw < spec.missing_rate
                };
                rain.push(if missing { None } else { Some(value) });
            }
            let id = format!("{}{:02}", regime.prefix(), idx + 1);
            regimes.insert(id.clone(), regime);
            stations.push(Station {
                id,
                lat,
                lon,
                start: g.t0,
                rain,
            });
        }
    }
    Ok(SynthStations { stations, regimes })
}

/// Onset and retreat targets built from the true regime membership of the
/// stations that pass QC (80% completeness), after imputation.
pub fn planted_targets(st: &SynthStations) -> Result<SeasonTargets, StationError> {
    let kept = prepare_stations(&st.stations, 0.8)?;
    let series = |regime: Regime, id: u32| -> Result<ClusterSeries, StationError> {
        let members: Vec<String> = kept
            .iter()
            .filter(|s| st.regime(&s.id) == Some(regime))
            .map(|s| s.id.clone())
            .collect();
        let cluster = Cluster {
            id,
            member_ids: members,
            centroid: Vec::new(),
        };
        cluster_mean_series(&cluster, &kept)
    };
    Ok(SeasonTargets {
        onset: series(Regime::South, 1)?,
        retreat: series(Regime::Upper, 2)?,
    })
}

/// Closed-form correlation between the area-mean index of the planted
/// rects and the latent: `2α / sqrt(4α² + σ²(1/N_A + 1/N_B))`.
pub fn expected_rho_index(spec: &SynthSpec) -> f64 {
    let ocean = |r: &Rect| {
        rect_cells(r, &spec.grid)
            .into_iter()
            .filter(|&(i, j)| !spec.is_land(i, j))
            .count() as f64
    };
    let na = ocean(&spec.planted_a);
    let nb = ocean(&spec.planted_b);
    let signal = 2.0 * spec.alpha;
    let noise = spec.sst_noise * spec.sst_noise * (1.0 / na + 1.0 / nb);
    signal / (signal * signal + noise).sqrt()
}

/// Closed-form correlation between a regime's cluster-mean rainfall and the
/// latent, over the months where that regime is coupled.
///
/// With `Y = c_m(1 + k·s + r·ε + Σ w_i e_i)`, month uniform over the
/// season: `Cov(Y, s) = k·E[c]`, `Var(Y) = Var(c) + E[c²](k² + r² + Σw²)`.
/// Clamping at zero and imputation are ignored.
pub fn expected_rho_rain(spec: &SynthSpec, regime: Regime) -> f64 {
    let season = SeasonMask::default();
    let (months, k) = match regime {
        Regime::South => (season.onset_months(), spec.k_onset),
        Regime::Upper => (season.retreat_months(), spec.k_retreat),
    };
    let clim = regime.climatology();
    let c: Vec<f64> = months.iter().map(|&m| clim[m as usize - 1]).collect();
    let n = c.len() as f64;
    let mean = c.iter().sum::<f64>() / n;
    let mean_sq = c.iter().map(|v| v * v).sum::<f64>() / n;
    let var = mean_sq - mean * mean;
    let scales = station_scales(spec.stations_per_regime);
    let n_st = scales.len() as f64;
    let w_sq: f64 = scales.iter().map(|w| (w / n_st).powi(2)).sum();
    let noise = spec.regional_noise.powi(2) + spec.station_noise.powi(2) * w_sq;
    k * mean / (var + mean_sq * (k * k + noise)).sqrt()
}

/// Expected `(r_onset, r_retreat, q)` at the planted areas.
pub fn expected_objective(spec: &SynthSpec) -> (f64, f64, f64) {
    let z = expected_rho_index(spec);
    let r_on = z * expected_rho_rain(spec, Regime::South);
    let r_re = z * expected_rho_rain(spec, Regime::Upper);
    (r_on, r_re, crate::index::objective_q(r_on, r_re))
}

/// Default surrogate names and their constructed correlation with the target.
pub const DEFAULT_SURROGATES: [(&str, f64); 7] = [
    ("ONI", 0.8),
    ("DMI", 0.3),
    ("MEI", 0.7),
    ("PDO", 0.2),
    ("MJO", 0.0),
    ("BSISO", 0.45),
    ("SWM", 0.65),
];

fn standardize_on(x: &[f64], rows: &std::ops::Range<usize>) -> Vec<f64> {
    let w = &x[rows.clone()];
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Surrogate indices whose Pearson correlation with `target` over `rows` is
/// exactly the requested value: `r·ẑ + sqrt(1 − r²)·ê`, with ê noise made
/// orthogonal to ẑ on those rows. Columns have mean 0 and unit variance on
/// `rows`.
pub fn gen_global_indices(
    target: &[f64],
    start: YearMonth,
    rows: std::ops::Range<usize>,
    surrogates: &[(&str, f64)],
    seed: u64,
) -> FeatureMatrix {
    assert!(rows.end <= target.len() && rows.len() >= 3);
    let mut rng = rng_for(seed, STREAM_INDICES);
    let z = standardize_on(target, &rows);
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for &(name, r) in surrogates {
        let raw: Vec<f64> = (0..target.len()).map(|_| normal(&mut rng)).collect();
        let e = standardize_on(&raw, &rows);
        let n = rows.len() as f64;
        let proj = rows.clone().map(|t| e[t] * z[t]).sum::<f64>() / n;
        let resid: Vec<f64> = e.iter().zip(&z).map(|(e, z)| e - proj * z).collect();
        let resid = standardize_on(&resid, &rows);
        let col: Vec<f64> = z
            .iter()
            .zip(&resid)
            .map(|(z, e)| r * z + (1.0 - r * r).sqrt() * e)
            .collect();
        names.push(name.to_string());
        columns.push(col);
    }
    FeatureMatrix {
        start,
        names,
        columns,
    }
}

/// Surrogates for the forecasting world: one column above the selection
/// bar, the rest below it.
pub const FORECAST_SURROGATES: [(&str, f64); 5] =
    [("ONI", 0.8), ("DMI", 0.3), ("PDO", 0.2), ("MJO", 0.0), ("BSISO", 0.45)];

/// Layout of the forecasting world.
///
/// The coupled cluster's relative rainfall anomaly is driven by
/// `x(t) = sqrt(1 − w²)·u(t) + w·u(t − lead)`, where `u` is the index.
/// Both terms keep the contemporaneous correlation above the selection bar;
/// the lagged term is what makes the index useful for forecasting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastWorldSpec {
    pub start: YearMonth,
    pub months: usize,
    /// AR(1) coefficient of the index.
    pub phi: f64,
    pub lead: usize,
    /// Weight `w` of the lagged index term.
    pub lagged_weight: f64,
    /// Relative rainfall response to `x`.
    pub k: f64,
    pub rain_noise: f64,
    pub climatology: [f64; 12],
    /// Months whose surrogates are built to exact correlation.
    pub train_months: usize,
    /// Surrogate names and their correlation with the coupled cluster.
    pub surrogates: Vec<(String, f64)>,
}

impl Default for ForecastWorldSpec {
    fn default() -> Self {
        Self {
            start: YearMonth::new(1982, 1).expect("valid month"),
            // 1982-01 .. 2024-12
            months: 43 * 12,
            phi: 0.9,
            lead: 12,
            lagged_weight: 0.76,
            k: 0.35,
            rain_noise: 0.05,
            climatology: [
                190.0, 180.0, 185.0, 195.0, 205.0, 215.0, 220.0, 215.0, 210.0, 205.0, 200.0, 195.0,
            ],
            // 1982 .. 2019
            train_months: 38 * 12,
            surrogates: FORECAST_SURROGATES.iter().map(|(n, r)| (n.to_string(), *r)).collect(),
        }
    }
}

/// Index, per-cluster rainfall and surrogate indices for the forecasting
/// harness. Cluster 1 follows the index; cluster 2 follows an unrelated
/// latent with the same dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWorld {
    pub start: YearMonth,
    pub ne_index: Vec<f64>,
    pub clusters: Vec<(u32, Vec<f64>)>,
    pub indices: FeatureMatrix,
}

pub fn gen_forecast_world(spec: &ForecastWorldSpec, seed: u64) -> ForecastWorld {
    let mut rng = rng_for(seed, STREAM_FORECAST);
    let n = spec.months + spec.lead;
    let u = gen_latent(n, spec.phi, &mut rng);
    let v = gen_latent(n, spec.phi, &mut rng);
    let w = spec.lagged_weight;
    let now = (1.0 - w * w).sqrt();
    let rain = |latent: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..spec.months)
            .map(|t| {
                let m = spec.start.add_months(t as i64).month0();
                let x = now * latent[t + spec.lead] + w * latent[t];
                let rel = 1.0 + spec.k * x + spec.rain_noise * normal(rng);
                (spec.climatology[m] * rel).max(0.0)
            })
            .collect()
    };
    let coupled = rain(&u, &mut rng);
    let unrelated = rain(&v, &mut rng);
    let surrogates: Vec<(&str, f64)> = spec.surrogates.iter().map(|(n, r)| (n.as_str(), *r)).collect();
    let indices = gen_global_indices(&coupled, spec.start, 0..spec.train_months, &surrogates, seed);
    ForecastWorld {
        start: spec.start,
        ne_index: u[spec.lead..].to_vec(),
        clusters: vec![(1, coupled), (2, unrelated)],
        indices,
    }
}
