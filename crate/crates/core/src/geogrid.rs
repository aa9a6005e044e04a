//! Gridded monthly SST fields, lat/lon rectangles and area reductions.
//!
//! Cells are addressed by `(lat index, lon index)`. A cell belongs to a
//! rectangle when its center lies inside the closed rectangle. Land cells
//! carry a NaN in every month; the ocean mask is derived from that sentinel.
//!
//! On disk a field is a directory holding `grid.json` and `sst.f32`
//! (little-endian `f32`, time-major, then latitude row, then longitude).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::YearMonth;
use crate::fsio;

/// Slack used when testing whether a cell center lies on a rectangle edge.
const EDGE_EPS: f64 = 1e-9;

/// Plausible range for ocean SST values, in °C.
pub const SST_RANGE: (f32, f32) = (-5.0, 45.0);

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid rectangle [{lat_min}, {lat_max}, {lon_min}, {lon_max}]: extents must be positive")]
    InvalidRect {
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
    },
    #[error("an area needs at least one rectangle")]
    EmptyAreaSet,
    #[error("area covers no grid cells")]
    EmptyArea,
    #[error("area contains no ocean cells")]
    NoOceanCells,
    #[error("month index {t} out of range (nt = {nt})")]
    MonthOutOfRange { t: usize, nt: usize },
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("format error in {field} at byte {offset}: {message}")]
    Format {
        field: String,
        offset: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regular lat/lon grid on a monthly time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub nlat: usize,
    pub nlon: usize,
    pub t0: YearMonth,
    pub nt: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: &str| Err(GridError::InvalidSpec(m.to_string()));
        if !(self.dlat > 0.0 && self.dlat.is_finite()) {
            return bad("dlat must be > 0");
        }
        if !(self.dlon > 0.0 && self.dlon.is_finite()) {
            return bad("dlon must be > 0");
        }
        if !self.lat0.is_finite() || !self.lon0.is_finite() {
            return bad("lat0/lon0 must be finite");
        }
        if self.nlat == 0 || self.nlon == 0 || self.nt == 0 {
            return bad("nlat, nlon and nt must be >= 1");
        }
        Ok(())
    }

    pub fn cells_per_slice(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.lat0 + i as f64 * self.dlat,
            self.lon0 + j as f64 * self.dlon,
        )
    }

    pub fn month(&self, t: usize) -> YearMonth {
        self.t0.add_months(t as i64)
    }

    /// Rectangle spanned by the outer cell edges.
    pub fn bounds(&self) -> Rect {
        Rect {
            lat_min: self.lat0 - self.dlat / 2.0,
            lat_max: self.lat0 + (self.nlat as f64 - 0.5) * self.dlat,
            lon_min: self.lon0 - self.dlon / 2.0,
            lon_max: self.lon0 + (self.nlon as f64 - 0.5) * self.dlon,
        }
    }
}

/// Monthly SST in °C with NaN on land.
#[derive(Debug, Clone, PartialEq)]
pub struct SstField {
    spec: GridSpec,
    values: Vec<f32>,
}

impl SstField {
    /// Validates shape, the SST range of ocean values and that land cells are
    /// land in every month.
    pub fn new(spec: GridSpec, values: Vec<f32>) -> Result<Self, GridError> {
        spec.validate()?;
        let slice = spec.cells_per_slice();
        if values.len() != slice * spec.nt {
            return Err(GridError::InvalidField(format!(
                "expected {} values, got {}",
                slice * spec.nt,
                values.len()
            )));
        }
        for c in 0..slice {
            let land = values[c].is_nan();
            for t in 0..spec.nt {
                let v = values[t * slice + c];
                if v.is_nan() != land {
                    return Err(GridError::InvalidField(format!(
                        "cell {} changes land/ocean status at month {}",
                        c, t
                    )));
                }
                if !land && !(SST_RANGE.0..=SST_RANGE.1).contains(&v) {
                    return Err(GridError::InvalidField(format!(
                        "value {} at month {}, cell {} outside [{}, {}]",
                        v, t, c, SST_RANGE.0, SST_RANGE.1
                    )));
                }
            }
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> f32 {
        self.values[t * self.spec.cells_per_slice() + i * self.spec.nlon + j]
    }

    pub fn ocean_mask(&self) -> OceanMask {
        OceanMask {
            spec: self.spec.clone(),
            ocean: self.values[..self.spec.cells_per_slice()]
                .iter()
                .map(|v| !v.is_nan())
                .collect(),
        }
    }

    /// Flat in-slice indices of the ocean cells of `area`, sorted.
    pub fn ocean_cells(&self, area: &AreaSet) -> Vec<usize> {
        let slice = &self.values[..self.spec.cells_per_slice()];
        area_cells(area, &self.spec)
            .into_iter()
            .map(|(i, j)| i * self.spec.nlon + j)
            .filter(|&c| !slice[c].is_nan())
            .collect()
    }

    /// Mean SST over pre-resolved ocean cells, for every month.
    pub fn mean_series(&self, cells: &[usize]) -> Result<Vec<f64>, GridError> {
        if cells.is_empty() {
            return Err(GridError::NoOceanCells);
        }
        let slice = self.spec.cells_per_slice();
        let n = cells.len() as f64;
        Ok(self
            .values
            .chunks_exact(slice)
            .map(|month| cells.iter().map(|&c| month[c] as f64).sum::<f64>() / n)
            .collect())
    }
}

/// Ocean (`true`) / land per cell of one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct OceanMask {
    pub spec: GridSpec,
    pub ocean: Vec<bool>,
}

impl OceanMask {
    pub fn is_ocean(&self, i: usize, j: usize) -> bool {
        self.ocean[i * self.spec.nlon + j]
    }
}

/// Closed lat/lon rectangle, serialized as `[lat_min, lat_max, lon_min, lon_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Rect {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, GridError> {
        let r = Rect {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        if r.is_valid() {
            Ok(r)
        } else {
            Err(GridError::InvalidRect {
                lat_min,
                lat_max,
                lon_min,
                lon_max,
            })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite())
            && self.lat_min < self.lat_max
            && self.lon_min < self.lon_max
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
    }

    pub fn lat_extent(&self) -> f64 {
        self.lat_max - self.lat_min
    }

    pub fn lon_extent(&self) -> f64 {
        self.lon_max - self.lon_min
    }

    pub fn translated(self, dlat: f64, dlon: f64) -> Rect {
        Rect {
            lat_min: self.lat_min + dlat,
            lat_max: self.lat_max + dlat,
            lon_min: self.lon_min + dlon,
            lon_max: self.lon_max + dlon,
        }
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.lat_min >= self.lat_min
            && other.lat_max <= self.lat_max
            && other.lon_min >= self.lon_min
            && other.lon_max <= self.lon_max
    }
}

impl TryFrom<[f64; 4]> for Rect {
    type Error = GridError;

    fn try_from(a: [f64; 4]) -> Result<Self, Self::Error> {
        Rect::new(a[0], a[1], a[2], a[3])
    }
}

impl Serialize for Rect {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rect {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 4]>::deserialize(d)?;
        Rect::try_from(a).map_err(serde::de::Error::custom)
    }
}

/// Ordered, nonempty list of rectangles treated as one area.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct AreaSet {
    rects: Vec<Rect>,
}

impl AreaSet {
    pub fn new(rects: Vec<Rect>) -> Result<Self, GridError> {
        if rects.is_empty() {
            return Err(GridError::EmptyAreaSet);
        }
        if let Some(r) = rects.iter().find(|r| !r.is_valid()) {
            return Err(GridError::InvalidRect {
                lat_min: r.lat_min,
                lat_max: r.lat_max,
                lon_min: r.lon_min,
                lon_max: r.lon_max,
            });
        }
        Ok(Self { rects })
    }

    pub fn single(rect: Rect) -> Self {
        Self { rects: vec![rect] }
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }
}

impl<'de> Deserialize<'de> for AreaSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rects = Vec::<Rect>::deserialize(d)?;
        AreaSet::new(rects).map_err(serde::de::Error::custom)
    }
}

fn index_range(lo: f64, hi: f64, origin: f64, step: f64, n: usize) -> Option<(usize, usize)> {
    let first = ((lo - origin) / step - EDGE_EPS).ceil().max(0.0);
    let last = ((hi - origin) / step + EDGE_EPS).floor();
    if last < 0.0 || first > last || first >= n as f64 {
        return None;
    }
    Some((first as usize, (last as usize).min(n - 1)))
}

/// Cells whose centers fall inside `rect` (closed bounds), sorted.
pub fn rect_cells(rect: &Rect, spec: &GridSpec) -> Vec<(usize, usize)> {
    let Some((i0, i1)) = index_range(rect.lat_min, rect.lat_max, spec.lat0, spec.dlat, spec.nlat)
    else {
        return Vec::new();
    };
    let Some((j0, j1)) = index_range(rect.lon_min, rect.lon_max, spec.lon0, spec.dlon, spec.nlon)
    else {
        return Vec::new();
    };
    (i0..=i1)
        .flat_map(|i| (j0..=j1).map(move |j| (i, j)))
        .collect()
}

/// Union of the cells of every rectangle in `area`.
pub fn area_cells(area: &AreaSet, spec: &GridSpec) -> BTreeSet<(usize, usize)> {
    area.rects()
        .iter()
        .flat_map(|r| rect_cells(r, spec))
        .collect()
}

/// Share of the area's cells that are ocean; overlapping rectangles count once.
pub fn ocean_fraction(area: &AreaSet, mask: &OceanMask) -> Result<f64, GridError> {
    let cells = area_cells(area, &mask.spec);
    if cells.is_empty() {
        return Err(GridError::EmptyArea);
    }
    let ocean = cells.iter().filter(|&&(i, j)| mask.is_ocean(i, j)).count();
    Ok(ocean as f64 / cells.len() as f64)
}

/// Unweighted mean over the area's ocean cells at month `t`.
pub fn area_mean_sst(field: &SstField, area: &AreaSet, t: usize) -> Result<f64, GridError> {
    let nt = field.spec().nt;
    if t >= nt {
        return Err(GridError::MonthOutOfRange { t, nt });
    }
    let cells = field.ocean_cells(area);
    if cells.is_empty() {
        return Err(GridError::NoOceanCells);
    }
    let slice = &field.values()[t * field.spec().cells_per_slice()..];
    Ok(cells.iter().map(|&c| slice[c] as f64).sum::<f64>() / cells.len() as f64)
}

/// Mean SST over the area's ocean cells for every month.
pub fn area_mean_series(field: &SstField, area: &AreaSet) -> Result<Vec<f64>, GridError> {
    field.mean_series(&field.ocean_cells(area))
}

pub const GRID_FILE: &str = "grid.json";
pub const DATA_FILE: &str = "sst.f32";

pub fn save_sst(field: &SstField, dir: &Path) -> Result<(), GridError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_vec_pretty(field.spec()).expect("grid spec serializes");
    let mut bytes = Vec::with_capacity(field.values.len() * 4);
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fsio::write_atomic(&dir.join(DATA_FILE), &bytes)?;
    fsio::write_atomic(&dir.join(GRID_FILE), &json)?;
    Ok(())
}

pub fn load_sst(dir: &Path) -> Result<SstField, GridError> {
    let header = fs::read(dir.join(GRID_FILE))?;
    let spec: GridSpec = serde_json::from_slice(&header).map_err(|e| GridError::Format {
        field: GRID_FILE.to_string(),
        offset: byte_offset(&header, e.line(), e.column()),
        message: e.to_string(),
    })?;
    spec.validate().map_err(|e| GridError::Format {
        field: GRID_FILE.to_string(),
        offset: 0,
        message: e.to_string(),
    })?;
    let payload = fs::read(dir.join(DATA_FILE))?;
    let expected = spec.cells_per_slice() * spec.nt * 4;
    if payload.len() != expected {
        return Err(GridError::Format {
            field: DATA_FILE.to_string(),
            offset: payload.len().min(expected),
            message: format!(
                "payload has {} bytes but grid.json implies {} (nlat*nlon*nt*4)",
                payload.len(),
                expected
            ),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    SstField::new(spec, values)
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (n, l) in text.split(|&b| b == b'\n').enumerate() {
        if n + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    text.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(nlat: usize, nlon: usize, d: f64, nt: usize) -> GridSpec {
        GridSpec {
            lat0: 0.0,
            lon0: 100.0,
            dlat: d,
            dlon: d,
            nlat,
            nlon,
            t0: YearMonth::new(2000, 1).unwrap(),
            nt,
        }
    }

    fn rect(a: f64, b: f64, c: f64, d: f64) -> Rect {
        Rect::new(a, b, c, d).unwrap()
    }

    #[test]
    fn rect_covering_grid_takes_every_cell() {
        let s = spec(4, 5, 0.5, 1);
        let cells = rect_cells(&s.bounds(), &s);
        assert_eq!(cells.len(), 20);
    }

    #[test]
    fn rect_between_centers_is_empty() {
        let s = spec(4, 4, 0.5, 1);
        // centers at 0.0, 0.5, ...; this rect sits strictly between 0.5 and 1.0
        assert!(rect_cells(&rect(0.6, 0.9, 100.0, 101.5), &s).is_empty());
        assert!(rect_cells(&rect(0.0, 1.5, 100.1, 100.4), &s).is_empty());
    }

    #[test]
    fn rect_spanning_two_by_three_centers() {
        // lat centers 0, .5, 1, 1.5 ; lon centers 100, 100.5, 101, 101.5
        let s = spec(4, 4, 0.5, 1);
        let cells = rect_cells(&rect(0.4, 1.0, 100.5, 101.5), &s);
        assert_eq!(cells, vec![(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)]);
    }

    #[test]
    fn closed_bounds_include_edge_centers() {
        let s = spec(4, 4, 0.5, 1);
        assert_eq!(rect_cells(&rect(0.5, 0.5 + 1e-12, 100.0, 100.0 + 1e-12), &s).len(), 1);
        assert_eq!(rect_cells(&rect(0.5, 1.0, 100.0, 100.5), &s).len(), 4);
    }

    #[test]
    fn rect_outside_grid_is_empty() {
        let s = spec(4, 4, 0.5, 1);
        assert!(rect_cells(&rect(10.0, 12.0, 100.0, 101.0), &s).is_empty());
        assert!(rect_cells(&rect(-3.0, -1.0, 100.0, 101.0), &s).is_empty());
    }

    fn mask(s: &GridSpec, ocean: &[bool]) -> OceanMask {
        OceanMask {
            spec: s.clone(),
            ocean: ocean.to_vec(),
        }
    }

    #[test]
    fn ocean_fraction_counts() {
        let s = spec(2, 2, 1.0, 1);
        let all = AreaSet::single(s.bounds());
        assert_eq!(ocean_fraction(&all, &mask(&s, &[true; 4])).unwrap(), 1.0);
        assert_eq!(
            ocean_fraction(&all, &mask(&s, &[true, true, false, true])).unwrap(),
            0.75
        );
    }

    #[test]
    fn ocean_fraction_does_not_double_count() {
        // 1x2 strip, one ocean one land, two identical rects over it
        let s = spec(1, 2, 1.0, 1);
        let r = s.bounds();
        let area = AreaSet::new(vec![r, r]).unwrap();
        assert_eq!(ocean_fraction(&area, &mask(&s, &[true, false])).unwrap(), 0.5);
    }

    #[test]
    fn ocean_fraction_empty_area_errors() {
        let s = spec(2, 2, 1.0, 1);
        let area = AreaSet::single(rect(0.2, 0.8, 100.2, 100.8));
        assert!(matches!(
            ocean_fraction(&area, &mask(&s, &[true; 4])),
            Err(GridError::EmptyArea)
        ));
    }

    #[test]
    fn area_mean_cases() {
        let s = spec(1, 3, 1.0, 1);
        let f = SstField::new(s.clone(), vec![20.0, 22.0, f32::NAN]).unwrap();
        let both = AreaSet::single(rect(0.0, 0.0 + 0.5, 100.0, 101.0));
        assert_eq!(area_mean_sst(&f, &both, 0).unwrap(), 21.0);
        // land cell is excluded from the denominator
        let with_land = AreaSet::single(s.bounds());
        assert_eq!(area_mean_sst(&f, &with_land, 0).unwrap(), 21.0);
        let land = AreaSet::single(rect(-0.5, 0.5, 101.5, 102.5));
        assert!(matches!(area_mean_sst(&f, &land, 0), Err(GridError::NoOceanCells)));
        assert!(matches!(
            area_mean_sst(&f, &both, 1),
            Err(GridError::MonthOutOfRange { .. })
        ));
    }

    #[test]
    fn uniform_field_mean_is_the_constant() {
        let s = spec(3, 3, 1.0, 2);
        let f = SstField::new(s.clone(), vec![27.5; 18]).unwrap();
        let area = AreaSet::single(rect(0.0, 1.0, 100.0, 102.0));
        assert_eq!(area_mean_sst(&f, &area, 1).unwrap(), 27.5);
    }

    #[test]
    fn field_validation() {
        let s = spec(1, 2, 1.0, 2);
        assert!(SstField::new(s.clone(), vec![1.0, 2.0, 3.0]).is_err());
        // land in month 0 but not month 1
        assert!(SstField::new(s.clone(), vec![f32::NAN, 2.0, 3.0, 4.0]).is_err());
        assert!(SstField::new(s.clone(), vec![50.0, 2.0, 3.0, 4.0]).is_err());
        assert!(SstField::new(s, vec![f32::NAN, 2.0, f32::NAN, 4.0]).is_ok());
    }

    #[test]
    fn rect_rejects_non_positive_extent() {
        assert!(Rect::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, 1.0, 2.0, 1.0).is_err());
        assert!(AreaSet::new(vec![]).is_err());
    }

    #[test]
    fn rect_json_order() {
        let r: Rect = serde_json::from_str("[10,16.25,110,118.75]").unwrap();
        assert_eq!(r.lat_max, 16.25);
        assert_eq!(r.lon_min, 110.0);
        assert_eq!(serde_json::to_string(&r).unwrap(), "[10.0,16.25,110.0,118.75]");
        assert!(serde_json::from_str::<Rect>("[10,5,110,118.75]").is_err());
    }

    fn sample_field() -> SstField {
        let s = spec(3, 4, 0.25, 5);
        let values = (0..60)
            .map(|k| if k % 12 == 5 { f32::NAN } else { 20.0 + (k as f32) * 0.1 })
            .collect();
        SstField::new(s, values).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let f = sample_field();
        save_sst(&f, dir.path()).unwrap();
        let g = load_sst(dir.path()).unwrap();
        assert_eq!(f.spec(), g.spec());
        let a: Vec<u32> = f.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = g.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        save_sst(&sample_field(), dir.path()).unwrap();
        let p = dir.path().join(DATA_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        match load_sst(dir.path()) {
            Err(GridError::Format { field, .. }) => assert_eq!(field, DATA_FILE),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn header_nt_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let f = sample_field();
        save_sst(&f, dir.path()).unwrap();
        let mut spec = f.spec().clone();
        spec.nt += 1;
        fs::write(dir.path().join(GRID_FILE), serde_json::to_vec(&spec).unwrap()).unwrap();
        assert!(matches!(load_sst(dir.path()), Err(GridError::Format { .. })));
    }

    #[test]
    fn header_with_unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_sst(&sample_field(), dir.path()).unwrap();
        let text = r#"{"lat0":0,"lon0":100,"dlat":0.25,"dlon":0.25,"nlat":3,"nlon":4,"t0":"2000-01","nt":5,"extra":1}"#;
        fs::write(dir.path().join(GRID_FILE), text).unwrap();
        match load_sst(dir.path()) {
            Err(GridError::Format { field, message, .. }) => {
                assert_eq!(field, GRID_FILE);
                assert!(message.contains("extra"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
