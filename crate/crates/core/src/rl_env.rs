//! Rectangle-placement environment: discrete shift/resize actions on two
//! areas, constraint checks, Δq rewards and fixed-length episodes.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqn::{Environment, StepOutcome};
use crate::fsio;
use crate::geogrid::{ocean_fraction, AreaSet, OceanMask, Rect, SstField};
use crate::index::{ObjectiveReport, PairEvaluator, SeasonMask, SeasonTargets};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("initial areas are not a valid state: {0}")]
    InvalidInitialAreas(String),
    #[error("episode is over; call reset")]
    EpisodeOver,
    #[error("step called before reset")]
    NotReset,
    #[error("action {0} is out of range")]
    UnknownAction(usize),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ActionMode {
    #[default]
    #[serde(rename = "shift-only")]
    ShiftOnly,
    #[serde(rename = "shift-resize")]
    ShiftAndResize,
}

impl ActionMode {
    pub fn n_actions(self) -> usize {
        match self {
            ActionMode::ShiftOnly => 8,
            ActionMode::ShiftAndResize => 16,
        }
    }
}

impl std::str::FromStr for ActionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shift-only" => Ok(ActionMode::ShiftOnly),
            "shift-resize" => Ok(ActionMode::ShiftAndResize),
            other => Err(format!("unknown mode `{other}`, expected shift-only or shift-resize")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Lat,
    Lon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    ShiftPlus,
    ShiftMinus,
    Expand,
    Shrink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub target: Target,
    pub axis: Axis,
    pub kind: Kind,
}

impl Action {
    /// The action that undoes this one.
    pub fn inverse(self) -> Action {
        let kind = match self.kind {
            Kind::ShiftPlus => Kind::ShiftMinus,
            Kind::ShiftMinus => Kind::ShiftPlus,
            Kind::Expand => Kind::Shrink,
            Kind::Shrink => Kind::Expand,
        };
        Action { kind, ..self }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = match self.axis {
            Axis::Lat => "lat",
            Axis::Lon => "lon",
        };
        let kind = match self.kind {
            Kind::ShiftPlus => "shift+",
            Kind::ShiftMinus => "shift-",
            Kind::Expand => "expand",
            Kind::Shrink => "shrink",
        };
        write!(f, "{:?} {axis} {kind}", self.target)
    }
}

/// Actions in index order: target (A, B) × axis (lat, lon) × kind.
pub fn enumerate_actions(mode: ActionMode) -> Vec<Action> {
    let kinds: &[Kind] = match mode {
        ActionMode::ShiftOnly => &[Kind::ShiftPlus, Kind::ShiftMinus],
        ActionMode::ShiftAndResize => &[Kind::ShiftPlus, Kind::ShiftMinus, Kind::Expand, Kind::Shrink],
    };
    let mut out = Vec::with_capacity(mode.n_actions());
    for target in [Target::A, Target::B] {
        for axis in [Axis::Lat, Axis::Lon] {
            for &kind in kinds {
                out.push(Action { target, axis, kind });
            }
        }
    }
    out
}

/// The two index areas. Serialized as `{"A": [[...], ...], "B": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaPair {
    #[serde(rename = "A")]
    pub a: AreaSet,
    #[serde(rename = "B")]
    pub b: AreaSet,
}

impl AreaPair {
    pub fn get(&self, t: Target) -> &AreaSet {
        match t {
            Target::A => &self.a,
            Target::B => &self.b,
        }
    }

    /// Coordinates rounded to micro-degrees, usable as a hash key.
    pub fn lattice_key(&self) -> Vec<i64> {
        self.a
            .rects()
            .iter()
            .chain(self.b.rects())
            .flat_map(|r| r.to_array())
            .map(|x| (x * 1e6).round() as i64)
            .collect()
    }

    pub fn read_json(path: &Path) -> Result<AreaPair, RlError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), RlError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fsio::write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

fn default_step() -> f64 {
    0.5
}
fn default_episode_len() -> usize {
    64
}
fn default_min_ocean() -> f64 {
    0.8
}
fn default_penalty() -> f64 {
    0.05
}
fn default_jitter() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default)]
    pub mode: ActionMode,
    /// Shift distance in degrees; resizing changes an extent by the same
    /// amount in total.
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
    pub domain: Rect,
    #[serde(default = "default_min_ocean")]
    pub min_ocean: f64,
    /// Subtracted from the reward when an action is rejected.
    #[serde(default = "default_penalty")]
    pub invalid_penalty: f64,
    /// Reset perturbation, in whole steps per axis per rect.
    #[serde(default = "default_jitter")]
    pub jitter: u32,
    pub initial: AreaPair,
}

impl EnvConfig {
    pub fn new(domain: Rect, initial: AreaPair) -> Self {
        Self {
            mode: ActionMode::default(),
            step: default_step(),
            episode_len: default_episode_len(),
            domain,
            min_ocean: default_min_ocean(),
            invalid_penalty: default_penalty(),
            jitter: default_jitter(),
            initial,
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if self.episode_len == 0 {
            return bad("episode_len must be at least 1");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step must be positive");
        }
        if !self.domain.is_valid() {
            return bad("domain must be a valid rect");
        }
        if !(0.0..=1.0).contains(&self.min_ocean) {
            return bad("min_ocean must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub areas: AreaPair,
    pub t_step: usize,
    pub last_q: f64,
}

/// Why a proposed geometry was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfDomain(Target),
    NonPositiveExtent(Target),
    LowOcean { target: Target, fraction: f64 },
    NoOcean(Target),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfDomain(t) => write!(f, "area {t:?} leaves the domain"),
            Violation::NonPositiveExtent(t) => write!(f, "area {t:?} has a non-positive extent"),
            Violation::LowOcean { target, fraction } => {
                write!(f, "ocean_fraction({target:?}) = {fraction:.3}")
            }
            Violation::NoOcean(t) => write!(f, "area {t:?} covers no grid cells"),
        }
    }
}

/// Checks the domain, extent and ocean-coverage constraints.
pub fn check_geometry(areas: &AreaPair, config: &EnvConfig, mask: &OceanMask) -> Result<(), Violation> {
    for t in [Target::A, Target::B] {
        let area = areas.get(t);
        if area.rects().iter().any(|r| !r.is_valid()) {
            return Err(Violation::NonPositiveExtent(t));
        }
        if area.rects().iter().any(|r| !config.domain.contains_rect(r)) {
            return Err(Violation::OutOfDomain(t));
        }
    }
    for t in [Target::A, Target::B] {
        let fraction = ocean_fraction(areas.get(t), mask).map_err(|_| Violation::NoOcean(t))?;
        if fraction < config.min_ocean {
            return Err(Violation::LowOcean { target: t, fraction });
        }
    }
    Ok(())
}

fn moved(rect: &Rect, axis: Axis, kind: Kind, step: f64) -> Option<Rect> {
    let half = step / 2.0;
    let [mut lat0, mut lat1, mut lon0, mut lon1] = rect.to_array();
    let (lo, hi) = match axis {
        Axis::Lat => (&mut lat0, &mut lat1),
        Axis::Lon => (&mut lon0, &mut lon1),
    };
    match kind {
        Kind::ShiftPlus => {
            *lo += step;
            *hi += step;
        }
        Kind::ShiftMinus => {
            *lo -= step;
            *hi -= step;
        }
        Kind::Expand => {
            *lo -= half;
            *hi += half;
        }
        Kind::Shrink => {
            *lo += half;
            *hi -= half;
        }
    }
    Rect::new(lat0, lat1, lon0, lon1).ok()
}

/// Geometry after `action`, or the violated constraint. Shifts move every
/// rect of the target area rigidly; resizes act on each rect about its own
/// center.
pub fn apply_action(
    areas: &AreaPair,
    action: Action,
    config: &EnvConfig,
    mask: &OceanMask,
) -> Result<AreaPair, Violation> {
    let rects = areas
        .get(action.target)
        .rects()
        .iter()
        .map(|r| moved(r, action.axis, action.kind, config.step))
        .collect::<Option<Vec<Rect>>>()
        .ok_or(Violation::NonPositiveExtent(action.target))?;
    let area = AreaSet::new(rects).map_err(|_| Violation::NonPositiveExtent(action.target))?;
    let next = match action.target {
        Target::A => AreaPair {
            a: area,
            b: areas.b.clone(),
        },
        Target::B => AreaPair {
            a: areas.a.clone(),
            b: area,
        },
    };
    check_geometry(&next, config, mask)?;
    Ok(next)
}

/// Each rect of A then of B as `(lat_min, lat_max, lon_min, lon_max)`
/// min-max scaled against the domain.
pub fn encode_state(areas: &AreaPair, domain: &Rect) -> Vec<f64> {
    let lat = |x: f64| (x - domain.lat_min) / domain.lat_extent();
    let lon = |x: f64| (x - domain.lon_min) / domain.lon_extent();
    areas
        .a
        .rects()
        .iter()
        .chain(areas.b.rects())
        .flat_map(|r| [lat(r.lat_min), lat(r.lat_max), lon(r.lon_min), lon(r.lon_max)])
        .collect()
}

/// Result of [`step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    /// `None` when the action was accepted.
    pub rejected: Option<String>,
}

/// Advances `state` by `action`. A rejected action (broken constraint or an
/// unscorable geometry) leaves the areas unchanged and costs the penalty;
/// an accepted one earns the change in objective.
pub fn step(
    state: &EnvState,
    action: Action,
    config: &EnvConfig,
    mask: &OceanMask,
    evaluate: impl FnOnce(&AreaPair) -> ObjectiveReport,
) -> Result<Transition, RlError> {
    if state.t_step >= config.episode_len {
        return Err(RlError::EpisodeOver);
    }
    let t_step = state.t_step + 1;
    let done = t_step == config.episode_len;
    let outcome = apply_action(&state.areas, action, config, mask)
        .map_err(|v| v.to_string())
        .and_then(|areas| {
            let report = evaluate(&areas);
            match report.score() {
                Some(q) => Ok((areas, q)),
                None => Err(report.violation.unwrap_or_default()),
            }
        });
    Ok(match outcome {
        Ok((areas, q)) => Transition {
            reward: q - state.last_q,
            state: EnvState {
                areas,
                t_step,
                last_q: q,
            },
            done,
            rejected: None,
        },
        Err(why) => Transition {
            state: EnvState {
                t_step,
                ..state.clone()
            },
            reward: -config.invalid_penalty,
            done,
            rejected: Some(why),
        },
    })
}

fn jittered(initial: &AreaPair, config: &EnvConfig, rng: &mut ChaCha8Rng) -> AreaPair {
    let j = config.jitter as i64;
    let mut shift = |area: &AreaSet| {
        let rects = area
            .rects()
            .iter()
            .map(|r| {
                let di = rng.random_range(-j..=j) as f64 * config.step;
                let dj = rng.random_range(-j..=j) as f64 * config.step;
                r.translated(di, dj)
            })
            .collect();
        AreaSet::new(rects).expect("translation keeps rects valid")
    };
    AreaPair {
        a: shift(&initial.a),
        b: shift(&initial.b),
    }
}

const MAX_RESET_DRAWS: usize = 1000;

/// Objective evaluator holding shared, read-only inputs.
pub type SharedEvaluator = PairEvaluator<Arc<SstField>, Arc<SeasonTargets>>;

/// The placement environment over one SST field and one pair of rainfall
/// targets, with a per-geometry objective cache.
#[derive(Debug, Clone)]
pub struct SstEnv {
    evaluator: SharedEvaluator,
    config: EnvConfig,
    actions: Vec<Action>,
    cache: HashMap<Vec<i64>, ObjectiveReport>,
    state: Option<EnvState>,
    evaluations: u64,
}

impl SstEnv {
    pub fn new(
        field: Arc<SstField>,
        targets: Arc<SeasonTargets>,
        season: &SeasonMask,
        reference: std::ops::Range<usize>,
        config: EnvConfig,
    ) -> Result<Self, RlError> {
        config.validate()?;
        let evaluator = PairEvaluator::new(field, targets, season, config.min_ocean, reference)?;
        let env = Self {
            evaluator,
            actions: enumerate_actions(config.mode),
            config,
            cache: HashMap::new(),
            state: None,
            evaluations: 0,
        };
        env.initial_report()?;
        Ok(env)
    }

    fn initial_report(&self) -> Result<f64, RlError> {
        check_geometry(&self.config.initial, &self.config, self.evaluator.mask())
            .map_err(|v| RlError::InvalidInitialAreas(v.to_string()))?;
        let rep = self.evaluator.evaluate(&self.config.initial.a, &self.config.initial.b);
        rep.score()
            .ok_or_else(|| RlError::InvalidInitialAreas(rep.violation.unwrap_or_default()))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn evaluator(&self) -> &SharedEvaluator {
        &self.evaluator
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Distinct geometries scored so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Cached objective report for a geometry.
    pub fn evaluate(&mut self, areas: &AreaPair) -> ObjectiveReport {
        let key = areas.lattice_key();
        if let Some(r) = self.cache.get(&key) {
            return r.clone();
        }
        self.evaluations += 1;
        let r = self.evaluator.evaluate(&areas.a, &areas.b);
        self.cache.insert(key, r.clone());
        r
    }

    pub fn reset_state(&mut self, seed: u64) -> Result<&EnvState, RlError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = self.config.initial.clone();
        let mut chosen = None;
        if self.config.jitter > 0 {
            for _ in 0..MAX_RESET_DRAWS {
                let cand = jittered(&initial, &self.config, &mut rng);
                if check_geometry(&cand, &self.config, self.evaluator.mask()).is_ok() {
                    if let Some(q) = self.evaluate(&cand).score() {
                        chosen = Some((cand, q));
                        break;
                    }
                }
            }
        }
        let (areas, last_q) = match chosen {
            Some(c) => c,
            None => {
                let q = self.initial_report()?;
                (initial, q)
            }
        };
        self.state = Some(EnvState {
            areas,
            t_step: 0,
            last_q,
        });
        Ok(self.state.as_ref().unwrap())
    }

    pub fn step_action(&mut self, action: Action) -> Result<Transition, RlError> {
        let state = self.state.take().ok_or(RlError::NotReset)?;
        let config = self.config.clone();
        let mask = self.evaluator.mask().clone();
        let result = step(&state, action, &config, &mask, |a| self.evaluate(a));
        match result {
            Ok(tr) => {
                self.state = Some(tr.state.clone());
                Ok(tr)
            }
            Err(e) => {
                self.state = Some(state);
                Err(e)
            }
        }
    }
}

impl Environment for SstEnv {
    type Snapshot = AreaPair;
    type Error = RlError;

    fn n_actions(&self) -> usize {
        self.actions.len()
    }

    fn state_dim(&self) -> usize {
        4 * (self.config.initial.a.len() + self.config.initial.b.len())
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, RlError> {
        let areas = self.reset_state(seed)?.areas.clone();
        Ok(encode_state(&areas, &self.config.domain))
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, RlError> {
        let a = *self.actions.get(action).ok_or(RlError::UnknownAction(action))?;
        let tr = self.step_action(a)?;
        Ok(StepOutcome {
            observation: encode_state(&tr.state.areas, &self.config.domain),
            reward: tr.reward,
            done: tr.done,
            truncated: false,
            accepted: tr.rejected.is_none(),
        })
    }

    fn snapshot(&self) -> AreaPair {
        self.state
            .as_ref()
            .map_or_else(|| self.config.initial.clone(), |s| s.areas.clone())
    }

    fn score(&self) -> Option<f64> {
        self.state.as_ref().map(|s| s.last_q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::YearMonth;
    use crate::geogrid::GridSpec;
    use crate::stations::ClusterSeries;

    fn rect(a: f64, b: f64, c: f64, d: f64) -> Rect {
        Rect::new(a, b, c, d).unwrap()
    }

    fn pair(a: Rect, b: Rect) -> AreaPair {
        AreaPair {
            a: AreaSet::single(a),
            b: AreaSet::single(b),
        }
    }

    /// All-ocean 0.25° grid over [0, 20] × [100, 124].
    fn ocean_mask() -> OceanMask {
        let spec = GridSpec {
            lat0: 0.125,
            lon0: 100.125,
            dlat: 0.25,
            dlon: 0.25,
            nlat: 80,
            nlon: 96,
            t0: YearMonth::new(2000, 1).unwrap(),
            nt: 1,
        };
        OceanMask {
            ocean: vec![true; spec.cells_per_slice()],
            spec,
        }
    }

    fn config(mode: ActionMode) -> EnvConfig {
        let mut c = EnvConfig::new(
            rect(0.0, 20.0, 100.0, 124.0),
            pair(rect(10.0, 16.25, 110.0, 118.75), rect(2.0, 4.0, 102.0, 104.0)),
        );
        c.mode = mode;
        c
    }

    #[test]
    fn action_counts_and_order() {
        let shift = enumerate_actions(ActionMode::ShiftOnly);
        let all = enumerate_actions(ActionMode::ShiftAndResize);
        assert_eq!(shift.len(), 8);
        assert_eq!(all.len(), 16);
        for acts in [&shift, &all] {
            assert_eq!(
                acts[0],
                Action {
                    target: Target::A,
                    axis: Axis::Lat,
                    kind: Kind::ShiftPlus
                }
            );
        }
        assert_eq!(shift[1].kind, Kind::ShiftMinus);
        assert_eq!(shift[2].axis, Axis::Lon);
        assert_eq!(shift[4].target, Target::B);
        assert_eq!(all[2].kind, Kind::Expand);
        assert_eq!(all[3].kind, Kind::Shrink);
        assert!(shift.iter().all(|a| matches!(a.kind, Kind::ShiftPlus | Kind::ShiftMinus)));
    }

    #[test]
    fn shift_and_expand_examples() {
        let c = config(ActionMode::ShiftAndResize);
        let m = ocean_mask();
        let up = Action {
            target: Target::A,
            axis: Axis::Lat,
            kind: Kind::ShiftPlus,
        };
        let next = apply_action(&c.initial, up, &c, &m).unwrap();
        assert_eq!(next.a.rects()[0].to_array(), [10.5, 16.75, 110.0, 118.75]);
        assert_eq!(next.b, c.initial.b);

        let start = pair(rect(12.5, 13.75, 108.5, 116.0), rect(2.0, 4.0, 102.0, 104.0));
        let grow = Action { kind: Kind::Expand, ..up };
        let next = apply_action(&start, grow, &c, &m).unwrap();
        assert_eq!(next.a.rects()[0].to_array(), [12.25, 14.0, 108.5, 116.0]);
    }

    #[test]
    fn shrinking_a_half_degree_rect_is_invalid() {
        let c = config(ActionMode::ShiftAndResize);
        let start = pair(rect(12.0, 12.5, 108.5, 116.0), rect(2.0, 4.0, 102.0, 104.0));
        let shrink = Action {
            target: Target::A,
            axis: Axis::Lat,
            kind: Kind::Shrink,
        };
        assert_eq!(
            apply_action(&start, shrink, &c, &ocean_mask()),
            Err(Violation::NonPositiveExtent(Target::A))
        );
    }

    #[test]
    fn leaving_the_domain_is_invalid() {
        let c = config(ActionMode::ShiftOnly);
        let start = pair(rect(12.0, 13.0, 108.5, 116.0), rect(0.0, 2.0, 102.0, 104.0));
        let down = Action {
            target: Target::B,
            axis: Axis::Lat,
            kind: Kind::ShiftMinus,
        };
        assert_eq!(apply_action(&start, down, &c, &ocean_mask()), Err(Violation::OutOfDomain(Target::B)));
    }

    #[test]
    fn rigid_shift_moves_every_rect() {
        let c = config(ActionMode::ShiftOnly);
        let a = AreaSet::new(vec![rect(5.0, 6.0, 110.0, 111.0), rect(8.0, 9.5, 112.0, 113.0)]).unwrap();
        let start = AreaPair {
            a,
            b: AreaSet::single(rect(2.0, 4.0, 102.0, 104.0)),
        };
        let east = Action {
            target: Target::A,
            axis: Axis::Lon,
            kind: Kind::ShiftPlus,
        };
        let next = apply_action(&start, east, &c, &ocean_mask()).unwrap();
        assert_eq!(next.a.rects()[0].to_array(), [5.0, 6.0, 110.5, 111.5]);
        assert_eq!(next.a.rects()[1].to_array(), [8.0, 9.5, 112.5, 113.5]);
    }

    #[test]
    fn encoding_endpoints_and_symmetry() {
        let dom = rect(0.0, 20.0, 100.0, 120.0);
        let whole = pair(dom, dom);
        assert_eq!(encode_state(&whole, &dom), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let centered = pair(rect(9.5, 10.5, 109.5, 110.5), dom);
        let e = encode_state(&centered, &dom);
        assert!((e[0] + e[1] - 1.0).abs() < 1e-12);
        assert!((e[2] + e[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encoding_is_injective_on_a_small_lattice() {
        // every rect on a 0.25° lattice inside a 2° × 2° domain
        let dom = rect(0.0, 2.0, 100.0, 102.0);
        let ticks: Vec<f64> = (0..=8).map(|k| k as f64 * 0.25).collect();
        let mut seen = std::collections::HashSet::new();
        let mut count = 0;
        for (i0, &a) in ticks.iter().enumerate() {
            for &b in &ticks[i0 + 1..] {
                for (j0, &c) in ticks.iter().enumerate() {
                    for &d in &ticks[j0 + 1..] {
                        let p = pair(rect(a, b, 100.0 + c, 100.0 + d), dom);
                        let key: Vec<u64> = encode_state(&p, &dom).iter().map(|v| v.to_bits()).collect();
                        assert!(seen.insert(key));
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 36 * 36);
    }

    #[test]
    fn area_json_shape() {
        let p = pair(rect(1.0, 2.0, 101.0, 102.5), rect(3.0, 4.0, 103.0, 104.0));
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"A":[[1.0,2.0,101.0,102.5]],"B":[[3.0,4.0,103.0,104.0]]}"#);
        assert_eq!(serde_json::from_str::<AreaPair>(&text).unwrap(), p);
    }

    #[test]
    fn step_penalty_and_episode_end() {
        let mut c = config(ActionMode::ShiftOnly);
        c.episode_len = 2;
        let m = ocean_mask();
        let s0 = EnvState {
            areas: pair(rect(12.0, 13.0, 108.5, 116.0), rect(0.0, 2.0, 102.0, 104.0)),
            t_step: 0,
            last_q: 0.3,
        };
        let down_b = Action {
            target: Target::B,
            axis: Axis::Lat,
            kind: Kind::ShiftMinus,
        };
        let tr = step(&s0, down_b, &c, &m, |_| unreachable!()).unwrap();
        assert_eq!(tr.reward, -0.05);
        assert_eq!(tr.state.areas, s0.areas);
        assert_eq!(tr.state.t_step, 1);
        assert!(!tr.done);
        let score = |_: &AreaPair| ObjectiveReport {
            r_onset: 0.6,
            r_retreat: 0.0,
            q: 0.18,
            valid: true,
            violation: None,
        };
        let tr = step(&tr.state, down_b.inverse(), &c, &m, score).unwrap();
        assert!((tr.reward - (0.18 - 0.3)).abs() < 1e-12);
        assert!(tr.done);
        assert!(matches!(step(&tr.state, down_b, &c, &m, score), Err(RlError::EpisodeOver)));
    }

    #[test]
    fn inverse_actions_restore_geometry() {
        let c = config(ActionMode::ShiftAndResize);
        let m = ocean_mask();
        for a in enumerate_actions(ActionMode::ShiftAndResize) {
            if let Ok(next) = apply_action(&c.initial, a, &c, &m) {
                if let Ok(back) = apply_action(&next, a.inverse(), &c, &m) {
                    assert_eq!(back, c.initial, "{a}");
                }
            }
        }
    }

    fn tiny_env(jitter: u32) -> SstEnv {
        // 1° grid, 8 × 8 ocean, 36 months of structured noise
        let spec = GridSpec {
            lat0: 0.5,
            lon0: 100.5,
            dlat: 1.0,
            dlon: 1.0,
            nlat: 8,
            nlon: 8,
            t0: YearMonth::new(2000, 1).unwrap(),
            nt: 36,
        };
        let values: Vec<f32> = (0..36 * 64)
            .map(|k| 20.0 + ((k as u64 * 2654435761) % 1000) as f32 / 500.0)
            .collect();
        let t0 = spec.t0;
        let field = Arc::new(SstField::new(spec, values).unwrap());
        let series = |id, m: u64| ClusterSeries {
            cluster_id: id,
            start: t0,
            values: (0..36u64).map(|t| ((t * m) % 17) as f64).collect(),
        };
        let targets = Arc::new(SeasonTargets {
            onset: series(1, 7),
            retreat: series(2, 5),
        });
        let mut c = EnvConfig::new(
            rect(0.0, 8.0, 100.0, 108.0),
            pair(rect(1.0, 3.0, 101.0, 103.0), rect(5.0, 7.0, 105.0, 107.0)),
        );
        c.step = 1.0;
        c.jitter = jitter;
        c.episode_len = 10;
        SstEnv::new(field, targets, &SeasonMask::default(), 0..36, c).unwrap()
    }

    #[test]
    fn reset_without_jitter_is_the_configured_state() {
        let mut env = tiny_env(0);
        let s = env.reset_state(5).unwrap().clone();
        assert_eq!(s.areas, env.config().initial);
        assert_eq!(s.t_step, 0);
        let rep = env.evaluator().evaluate(&s.areas.a, &s.areas.b);
        assert_eq!(s.last_q, rep.q);
    }

    #[test]
    fn jittered_reset_is_seeded() {
        let mut env = tiny_env(2);
        let a = env.reset_state(11).unwrap().clone();
        let b = env.reset_state(11).unwrap().clone();
        assert_eq!(a, b);
        let distinct: std::collections::HashSet<Vec<i64>> =
            (0..20).map(|s| env.reset_state(s).unwrap().areas.lattice_key()).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn invalid_initial_areas_are_rejected() {
        let env = tiny_env(0);
        let mut c = env.config().clone();
        c.initial = pair(rect(1.0, 3.0, 101.0, 103.0), rect(5.0, 7.0, 105.0, 109.0));
        let field = Arc::new(env.evaluator().field().clone());
        let targets = Arc::new(env.evaluator().targets().clone());
        assert!(matches!(
            SstEnv::new(field, targets, &SeasonMask::default(), 0..36, c),
            Err(RlError::InvalidInitialAreas(_))
        ));
    }

    #[test]
    fn rewards_telescope_over_valid_steps() {
        let mut env = tiny_env(0);
        let q0 = env.reset_state(0).unwrap().last_q;
        let mut total = 0.0;
        let mut all_valid = true;
        for k in [0usize, 2, 5, 7, 1, 3] {
            let out = Environment::step(&mut env, k).unwrap();
            all_valid &= out.accepted;
            total += out.reward;
        }
        assert!(all_valid);
        let q = env.score().unwrap();
        assert!((total - (q - q0)).abs() < 1e-12);
    }

    #[test]
    fn step_after_done_is_an_error() {
        let mut env = tiny_env(0);
        env.reset_state(0).unwrap();
        for k in 0..10 {
            let out = Environment::step(&mut env, k % 2).unwrap();
            assert_eq!(out.done, k == 9);
        }
        assert!(matches!(Environment::step(&mut env, 0), Err(RlError::EpisodeOver)));
    }
}
