//! Deep Q-learning: replay buffer, epsilon-greedy policy, TD(0) regression
//! against a periodically synced target network, best-state tracking, and
//! the brute-force placement oracle used to judge it.

use std::error::Error as StdError;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsio;
use crate::geogrid::{AreaSet, GridError, Rect, SstField};
use crate::index::{normalise_series, PairEvaluator, SeasonTargets};
use crate::nn::{Adam, Mlp};
use crate::rl_env::AreaPair;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("invalid dqn config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at update {update}")]
    NonFiniteLoss { loss: f64, update: u64 },
    #[error("environment error: {0}")]
    Env(Box<dyn StdError + Send + Sync>),
    #[error("{count} candidate pairs exceed the limit of {limit}")]
    TooManyCandidates { count: usize, limit: usize },
    #[error("no valid placement in the search domain")]
    NoValidPlacement,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Terminal: the TD target does not bootstrap past this transition.
    pub done: bool,
    /// Episode cut short by a time limit; bootstrapping continues.
    pub truncated: bool,
    /// False when the action was rejected and the state left unchanged.
    pub accepted: bool,
}

/// Discrete-action environment the learner can drive.
pub trait Environment {
    /// Cheap copy of the current configuration, used for best-state tracking
    /// and audits.
    type Snapshot: Clone;
    type Error: StdError + Send + Sync + 'static;

    fn n_actions(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, Self::Error>;
    fn step(&mut self, action: usize) -> Result<StepOutcome, Self::Error>;
    fn snapshot(&self) -> Self::Snapshot;
    /// Objective value of the current state, if it has one.
    fn score(&self) -> Option<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    pub decay_fraction: f64,
    pub total_timesteps: u64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub target_sync_every: u64,
    pub learn_start: u64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon_initial: 1.0,
            epsilon_final: 0.1,
            decay_fraction: 0.1,
            total_timesteps: 100_000,
            batch: 64,
            buffer_capacity: 10_000,
            target_sync_every: 500,
            learn_start: 1_000,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0 <= self.epsilon_final
            && self.epsilon_final <= self.epsilon_initial
            && self.epsilon_initial <= 1.0)
        {
            return bad("need 0 <= epsilon_final <= epsilon_initial <= 1");
        }
        if !(0.0..=1.0).contains(&self.decay_fraction) {
            return bad("decay_fraction must be in [0, 1]");
        }
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return bad("batch must be positive and fit in the buffer");
        }
        if self.target_sync_every == 0 {
            return bad("target_sync_every must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }

    fn decay_steps(&self) -> f64 {
        self.decay_fraction * self.total_timesteps as f64
    }
}

/// Linear schedule from `epsilon_initial` to `epsilon_final` over the first
/// `decay_fraction` of training, flat afterwards.
pub fn epsilon_at(t: u64, config: &DqnConfig) -> f64 {
    let span = config.decay_steps();
    if span <= 0.0 || t as f64 >= span {
        return config.epsilon_final;
    }
    let frac = t as f64 / span;
    config.epsilon_initial + frac * (config.epsilon_final - config.epsilon_initial)
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// The action-value network: an MLP from encoded state to one value per
/// action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub mlp: Mlp,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut R) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_actions);
        Self {
            mlp: Mlp::new(&sizes, rng),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn qvalues(&self, state: &[f64]) -> Vec<f64> {
        self.mlp.forward_one(state)
    }
}

/// Epsilon-greedy action choice.
pub fn act<R: Rng + ?Sized>(state: &[f64], qnet: &QNetwork, epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..qnet.n_actions())
    } else {
        argmax(&qnet.qvalues(state))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.head] = e;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    /// `n` distinct transitions chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Experience> {
        sample(rng, self.items.len(), n).into_iter().map(|k| &self.items[k]).collect()
    }
}

fn stack(rows: &[&[f64]]) -> DMatrix<f64> {
    let dim = rows[0].len();
    DMatrix::from_fn(dim, rows.len(), |r, c| rows[c][r])
}

/// `y = r + γ · max_a' Q_target(s', a') · (1 − done)` for each transition.
pub fn td_targets(batch: &[&Experience], target: &QNetwork, gamma: f64) -> Vec<f64> {
    assert!(!batch.is_empty());
    let next: Vec<&[f64]> = batch.iter().map(|e| e.next_state.as_slice()).collect();
    let q_next = target.mlp.forward(&stack(&next));
    batch
        .iter()
        .enumerate()
        .map(|(c, e)| {
            if e.done {
                e.reward
            } else {
                let best = q_next.column(c).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                e.reward + gamma * best
            }
        })
        .collect()
}

/// Mean squared TD error and its gradient with respect to the online
/// network's parameters.
pub fn td_loss_and_grad(qnet: &QNetwork, batch: &[&Experience], targets: &[f64]) -> (f64, Vec<f64>) {
    let states: Vec<&[f64]> = batch.iter().map(|e| e.state.as_slice()).collect();
    let tape = qnet.mlp.forward_tape(&stack(&states));
    let n = batch.len() as f64;
    let mut d_out = DMatrix::zeros(qnet.n_actions(), batch.len());
    let mut loss = 0.0;
    for (c, e) in batch.iter().enumerate() {
        let err = tape.output[(e.action, c)] - targets[c];
        loss += err * err / n;
        d_out[(e.action, c)] = 2.0 * err / n;
    }
    let grad = qnet.mlp.backward(&tape, &d_out);
    (loss, grad)
}

/// One optimizer update on a batch; returns the loss before the update.
pub fn train_step(
    qnet: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Experience],
    gamma: f64,
    opt: &mut Adam,
) -> Result<f64, DqnError> {
    let y = td_targets(batch, target, gamma);
    let (loss, grad) = td_loss_and_grad(qnet, batch, &y);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(DqnError::NonFiniteLoss {
            loss,
            update: opt.steps_taken(),
        });
    }
    opt.step(qnet.mlp.params_mut(), &grad);
    Ok(loss)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<S> {
    pub step: u64,
    pub episode: u64,
    pub reward: f64,
    pub best_q: Option<f64>,
    pub epsilon: f64,
    pub accepted: bool,
    /// Objective of the state after the step.
    pub q: Option<f64>,
    /// State after the step.
    pub state: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History<S> {
    pub steps: Vec<StepRecord<S>>,
    /// `(step, state)` for each episode start; `step` is the first step
    /// taken from that state.
    pub resets: Vec<(u64, S, Option<f64>)>,
    pub losses: Vec<f64>,
}

impl<S> Default for History<S> {
    fn default() -> Self {
        Self {
            steps: Vec::new(),
            resets: Vec::new(),
            losses: Vec::new(),
        }
    }
}

impl<S> History<S> {
    /// Per-episode sums of rewards, in episode order.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.steps {
            let e = r.episode as usize;
            if out.len() <= e {
                out.resize(e + 1, 0.0);
            }
            out[e] += r.reward;
        }
        out
    }

    /// Every state the learner occupied, with its objective.
    pub fn visited(&self) -> impl Iterator<Item = (&S, Option<f64>)> {
        self.resets
            .iter()
            .map(|(_, s, q)| (s, *q))
            .chain(self.steps.iter().map(|r| (&r.state, r.q)))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub best: Option<(S, f64)>,
    pub history: History<S>,
    pub qnet: QNetwork,
}

impl<S> TrainOutcome<S> {
    pub fn best_q(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, q)| *q)
    }
}

fn env_err<E: StdError + Send + Sync + 'static>(e: E) -> DqnError {
    DqnError::Env(Box::new(e))
}

/// Online network, target network, optimizer state and replay memory.
#[derive(Debug, Clone)]
pub struct Learner {
    pub qnet: QNetwork,
    pub target: QNetwork,
    pub buffer: ReplayBuffer,
    opt: Adam,
    gamma: f64,
    batch: usize,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, n_actions: usize, config: &DqnConfig, rng: &mut R) -> Self {
        let qnet = QNetwork::new(state_dim, &config.hidden, n_actions, rng);
        Self {
            target: qnet.clone(),
            opt: Adam::new(qnet.mlp.params().len(), config.learning_rate),
            qnet,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            gamma: config.gamma,
            batch: config.batch,
        }
    }

    /// One update on a fresh sample; `None` until the buffer holds a batch.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>, DqnError> {
        if self.buffer.len() < self.batch {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.batch, rng);
        train_step(&mut self.qnet, &self.target, &batch, self.gamma, &mut self.opt).map(Some)
    }

    pub fn sync_target(&mut self) {
        self.target.mlp.params_mut().copy_from_slice(self.qnet.mlp.params());
    }
}

/// Runs deep Q-learning for `config.total_timesteps` environment steps.
///
/// Deterministic given the config seed and a deterministic environment.
pub fn train<E: Environment>(env: &mut E, config: &DqnConfig) -> Result<TrainOutcome<E::Snapshot>, DqnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut learner = Learner::new(env.state_dim(), env.n_actions(), config, &mut rng);
    let mut history = History::default();
    let mut best: Option<(E::Snapshot, f64)> = None;

    let track = |best: &mut Option<(E::Snapshot, f64)>, env: &E| {
        if let Some(q) = env.score() {
            if best.as_ref().is_none_or(|(_, b)| q > *b) {
                *best = Some((env.snapshot(), q));
            }
        }
    };

    let mut episode = 0u64;
    let mut obs = env.reset(rng.random()).map_err(env_err)?;
    history.resets.push((0, env.snapshot(), env.score()));
    track(&mut best, env);

    for t in 0..config.total_timesteps {
        let epsilon = epsilon_at(t, config);
        let action = act(&obs, &learner.qnet, epsilon, &mut rng);
        let out = env.step(action).map_err(env_err)?;
        if out.accepted {
            track(&mut best, env);
        }
        history.steps.push(StepRecord {
            step: t,
            episode,
            reward: out.reward,
            best_q: best.as_ref().map(|(_, b)| *b),
            epsilon,
            accepted: out.accepted,
            q: env.score(),
            state: env.snapshot(),
        });
        learner.buffer.push(Experience {
            state: std::mem::take(&mut obs),
            action,
            reward: out.reward,
            next_state: out.observation.clone(),
            done: out.done,
        });

        if t >= config.learn_start {
            if let Some(loss) = learner.learn(&mut rng)? {
                history.losses.push(loss);
            }
        }
        if (t + 1) % config.target_sync_every == 0 {
            learner.sync_target();
        }

        if out.done || out.truncated {
            episode += 1;
            obs = env.reset(rng.random()).map_err(env_err)?;
            history.resets.push((t + 1, env.snapshot(), env.score()));
            track(&mut best, env);
        } else {
            obs = out.observation;
        }
    }

    Ok(TrainOutcome {
        best,
        history,
        qnet: learner.qnet,
    })
}

#[derive(Serialize)]
struct HistoryRow {
    step: u64,
    episode: u64,
    reward: f64,
    best_q: Option<f64>,
    epsilon: f64,
}

pub fn write_history_csv<S>(history: &History<S>, path: &Path) -> Result<(), DqnError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &history.steps {
        w.serialize(HistoryRow {
            step: r.step,
            episode: r.episode,
            reward: r.reward,
            best_q: r.best_q,
            epsilon: r.epsilon,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

/// Five-state corridor: states 0..=3 are interior, moving right from 3
/// reaches the goal with reward 1 and ends the episode. Action 0 moves
/// left (blocked at 0), action 1 moves right. Episodes start in a random
/// interior state and are truncated after `max_steps`.
#[derive(Debug, Clone)]
pub struct ChainEnv {
    pub max_steps: usize,
    pos: usize,
    t: usize,
    rng: ChaCha8Rng,
}

#[derive(Debug, Error)]
#[error("chain environment stepped after termination")]
pub struct ChainError;

impl ChainEnv {
    pub const N_STATES: usize = 5;
    pub const GOAL: usize = 4;

    pub fn new(max_steps: usize) -> Self {
        Self {
            max_steps,
            pos: 0,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn one_hot(pos: usize) -> Vec<f64> {
        let mut v = vec![0.0; Self::N_STATES];
        v[pos] = 1.0;
        v
    }

    /// Optimal state values by value iteration.
    pub fn value_iteration(gamma: f64) -> [f64; 5] {
        let mut v = [0.0; 5];
        for _ in 0..10_000 {
            let mut next = v;
            for s in 0..Self::GOAL {
                let left = gamma * v[s.saturating_sub(1)];
                let right = if s + 1 == Self::GOAL { 1.0 } else { gamma * v[s + 1] };
                next[s] = left.max(right);
            }
            if next.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-15) {
                break;
            }
            v = next;
        }
        v
    }
}

impl Environment for ChainEnv {
    type Snapshot = usize;
    type Error = ChainError;

    fn n_actions(&self) -> usize {
        2
    }

    fn state_dim(&self) -> usize {
        Self::N_STATES
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, ChainError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = self.rng.random_range(0..Self::GOAL);
        self.t = 0;
        Ok(Self::one_hot(self.pos))
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, ChainError> {
        if self.pos == Self::GOAL {
            return Err(ChainError);
        }
        self.pos = if action == 0 { self.pos.saturating_sub(1) } else { self.pos + 1 };
        self.t += 1;
        let done = self.pos == Self::GOAL;
        Ok(StepOutcome {
            observation: Self::one_hot(self.pos),
            reward: if done { 1.0 } else { 0.0 },
            done,
            truncated: !done && self.t >= self.max_steps,
            accepted: true,
        })
    }

    fn snapshot(&self) -> usize {
        self.pos
    }

    fn score(&self) -> Option<f64> {
        None
    }
}

/// Best placement found by [`exhaustive_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: AreaPair,
    pub best_q: f64,
    pub placements_a: usize,
    pub placements_b: usize,
    pub evaluated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Lattice spacing in degrees.
    pub step: f64,
    pub min_ocean: f64,
    pub max_candidates: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            min_ocean: 0.8,
            max_candidates: 5_000_000,
        }
    }
}

/// All rigid translations of `area` by whole lattice steps that keep every
/// rect inside `domain`, in (lat offset, lon offset) order.
pub fn lattice_translations(area: &AreaSet, domain: &Rect, step: f64) -> Vec<AreaSet> {
    let rects = area.rects();
    let lat_lo = rects.iter().map(|r| r.lat_min).fold(f64::INFINITY, f64::min);
    let lat_hi = rects.iter().map(|r| r.lat_max).fold(f64::NEG_INFINITY, f64::max);
    let lon_lo = rects.iter().map(|r| r.lon_min).fold(f64::INFINITY, f64::min);
    let lon_hi = rects.iter().map(|r| r.lon_max).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9;
    let k_min = |lo: f64, dom: f64| ((dom - lo) / step - tol).ceil() as i64;
    let k_max = |hi: f64, dom: f64| ((dom - hi) / step + tol).floor() as i64;
    let mut out = Vec::new();
    for ki in k_min(lat_lo, domain.lat_min)..=k_max(lat_hi, domain.lat_max) {
        for kj in k_min(lon_lo, domain.lon_min)..=k_max(lon_hi, domain.lon_max) {
            let moved = rects
                .iter()
                .map(|r| r.translated(ki as f64 * step, kj as f64 * step))
                .collect();
            out.push(AreaSet::new(moved).expect("translation keeps rects valid"));
        }
    }
    out
}

fn area_key(area: &AreaSet) -> Vec<[f64; 4]> {
    area.rects().iter().map(|r| r.to_array()).collect()
}

fn geometry_cmp(a: &AreaPair, b: &AreaPair) -> std::cmp::Ordering {
    let ka = (area_key(&a.a), area_key(&a.b));
    let kb = (area_key(&b.a), area_key(&b.b));
    ka.partial_cmp(&kb).expect("finite coordinates")
}

/// Scores every shift-only lattice placement of the template areas (A and
/// B moved independently) and returns the best. Ties go to the
/// lexicographically smallest geometry. Candidate pairs are scored in
/// parallel.
pub fn exhaustive_search<F, T>(
    evaluator: &PairEvaluator<F, T>,
    template: &AreaPair,
    domain: &Rect,
    config: &SearchConfig,
) -> Result<SearchResult, DqnError>
where
    F: std::ops::Deref<Target = SstField> + Sync,
    T: std::ops::Deref<Target = SeasonTargets> + Sync,
{
    let field = evaluator.field();
    let prepare = |name: &str, area: &AreaSet| -> Vec<(AreaSet, Vec<f64>)> {
        lattice_translations(area, domain, config.step)
            .into_iter()
            .filter(|p| evaluator.check_area(name, p).is_none())
            .filter_map(|p| {
                let series = field.mean_series(&field.ocean_cells(&p)).ok()?;
                Some((p, series))
            })
            .collect()
    };
    let pa = prepare("A", &template.a);
    let pb = prepare("B", &template.b);
    let count = pa.len() * pb.len();
    if count > config.max_candidates {
        return Err(DqnError::TooManyCandidates {
            count,
            limit: config.max_candidates,
        });
    }

    let start = field.spec().t0;
    let reference = evaluator.reference();
    let best = (0..pa.len())
        .into_par_iter()
        .flat_map_iter(|ia| (0..pb.len()).map(move |ib| (ia, ib)))
        .filter_map(|(ia, ib)| {
            let raw: Vec<f64> = pb[ib].1.iter().zip(&pa[ia].1).map(|(b, a)| b - a).collect();
            // skip degenerate pairs cheaply before the full evaluation
            normalise_series(&raw, start, reference.clone()).ok()?;
            let rep = evaluator.evaluate_raw(&raw);
            rep.score().map(|q| (q, ia, ib))
        })
        .reduce_with(|x, y| {
            let pair = |(_, ia, ib): (f64, usize, usize)| AreaPair {
                a: pa[ia].0.clone(),
                b: pb[ib].0.clone(),
            };
            match x.0.partial_cmp(&y.0).expect("finite q") {
                std::cmp::Ordering::Greater => x,
                std::cmp::Ordering::Less => y,
                std::cmp::Ordering::Equal => {
                    if geometry_cmp(&pair(x), &pair(y)).is_le() {
                        x
                    } else {
                        y
                    }
                }
            }
        });
    let (best_q, ia, ib) = best.ok_or(DqnError::NoValidPlacement)?;
    Ok(SearchResult {
        best: AreaPair {
            a: pa[ia].0.clone(),
            b: pb[ib].0.clone(),
        },
        best_q,
        placements_a: pa.len(),
        placements_b: pb.len(),
        evaluated: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(state: Vec<f64>, action: usize, reward: f64, next: Vec<f64>, done: bool) -> Experience {
        Experience {
            state,
            action,
            reward,
            next_state: next,
            done,
        }
    }

    #[test]
    fn epsilon_schedule_points() {
        let c = DqnConfig {
            total_timesteps: 1000,
            ..Default::default()
        };
        assert_eq!(epsilon_at(0, &c), 1.0);
        assert!((epsilon_at(50, &c) - 0.55).abs() < 1e-12);
        assert_eq!(epsilon_at(100, &c), 0.1);
        assert_eq!(epsilon_at(10_000, &c), 0.1);
        let mut prev = f64::INFINITY;
        for t in 0..200 {
            let e = epsilon_at(t, &c);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn config_validation() {
        assert!(DqnConfig::default().validate().is_ok());
        let bad = DqnConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DqnConfig {
            epsilon_final: 0.5,
            epsilon_initial: 0.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0, 1.0, 3.0, 2.0, 1.0, 3.0]), 2);
        assert_eq!(argmax(&[5.0]), 0);
    }

    fn linear_qnet(n_actions: usize, biases: &[f64]) -> QNetwork {
        // state dim 1, no hidden layers: q = 0 * s + b
        let mut params = vec![0.0; n_actions];
        params.extend_from_slice(biases);
        QNetwork {
            mlp: Mlp::from_params(&[1, n_actions], params),
        }
    }

    #[test]
    fn greedy_act_and_tie_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = linear_qnet(6, &[0.0, 1.0, 4.0, 2.0, 3.0, 4.0]);
        assert_eq!(act(&[1.0], &q, 0.0, &mut rng), 2);
        let q = linear_qnet(3, &[0.5, -1.0, 0.7]);
        assert_eq!(act(&[1.0], &q, 0.0, &mut rng), 2);
    }

    #[test]
    fn fully_random_act_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = linear_qnet(8, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let n = 10_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[act(&[0.0], &q, 1.0, &mut rng)] += 1;
        }
        let p = 1.0 / 8.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn td_target_cases() {
        let zero = linear_qnet(2, &[0.0, 0.0]);
        let two = linear_qnet(2, &[2.0, -1.0]);
        let terminal = exp(vec![0.0], 0, 0.3, vec![0.0], true);
        let live = exp(vec![0.0], 1, 1.0, vec![0.0], false);
        assert_eq!(td_targets(&[&terminal], &two, 0.99), vec![0.3]);
        assert!((td_targets(&[&live], &two, 0.99)[0] - 2.98).abs() < 1e-12);
        assert_eq!(td_targets(&[&terminal, &live], &zero, 0.99), vec![0.3, 1.0]);
    }

    #[test]
    fn replay_buffer_is_fifo_and_bounded() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..7 {
            b.push(exp(vec![k as f64], 0, 0.0, vec![], false));
            assert!(b.len() <= 3);
        }
        let kept: Vec<f64> = b.iter().map(|e| e.state[0]).collect();
        assert_eq!(kept, vec![4.0, 5.0, 6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(3, &mut rng);
        let mut got: Vec<f64> = s.iter().map(|e| e.state[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![4.0, 5.0, 6.0]);
    }

    fn random_batch(rng: &mut ChaCha8Rng, dim: usize, n_actions: usize, n: usize) -> Vec<Experience> {
        (0..n)
            .map(|_| {
                exp(
                    (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
                    rng.random_range(0..n_actions),
                    rng.random_range(-0.2..0.2),
                    (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
                    rng.random_bool(0.2),
                )
            })
            .collect()
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut q = QNetwork::new(8, &[64, 64], 8, &mut rng);
        let target = q.clone();
        let data = random_batch(&mut rng, 8, 8, 64);
        let batch: Vec<&Experience> = data.iter().collect();
        let mut opt = Adam::new(q.mlp.params().len(), 1e-3);
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let loss = train_step(&mut q, &target, &batch, 0.99, &mut opt).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn zero_td_error_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = QNetwork::new(4, &[16, 16], 4, &mut rng);
        let data = random_batch(&mut rng, 4, 4, 16);
        let batch: Vec<&Experience> = data.iter().collect();
        let y: Vec<f64> = data.iter().map(|e| q.qvalues(&e.state)[e.action]).collect();
        let (loss, grad) = td_loss_and_grad(&q, &batch, &y);
        assert!(loss < 1e-24);
        assert!(grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut q = QNetwork::new(2, &[4], 2, &mut rng);
        let target = q.clone();
        let data = vec![exp(vec![0.1, 0.2], 0, f64::NAN, vec![0.0, 0.0], true)];
        let batch: Vec<&Experience> = data.iter().collect();
        let mut opt = Adam::new(q.mlp.params().len(), 1e-3);
        assert!(matches!(
            train_step(&mut q, &target, &batch, 0.99, &mut opt),
            Err(DqnError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn chain_value_iteration() {
        let v = ChainEnv::value_iteration(0.99);
        for s in 0..4 {
            assert!((v[s] - 0.99f64.powi(3 - s as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_env_mechanics() {
        let mut env = ChainEnv::new(10);
        env.reset(0).unwrap();
        env.pos = 3;
        let out = env.step(1).unwrap();
        assert!(out.done && out.reward == 1.0);
        assert!(env.step(1).is_err());
        env.reset(0).unwrap();
        env.pos = 0;
        let out = env.step(0).unwrap();
        assert_eq!(env.snapshot(), 0);
        assert!(!out.done && out.reward == 0.0);
    }

    #[test]
    fn target_network_only_changes_at_sync() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = DqnConfig {
            batch: 8,
            buffer_capacity: 32,
            hidden: vec![8],
            ..Default::default()
        };
        let mut learner = Learner::new(3, 4, &config, &mut rng);
        for e in random_batch(&mut rng, 3, 4, 20) {
            learner.buffer.push(e);
        }
        let frozen = learner.target.clone();
        for _ in 0..10 {
            learner.learn(&mut rng).unwrap().unwrap();
            assert_eq!(learner.target, frozen);
        }
        assert_ne!(learner.qnet, frozen);
        learner.sync_target();
        assert_eq!(learner.target.mlp.params(), learner.qnet.mlp.params());
    }

    #[test]
    fn training_is_deterministic() {
        let config = DqnConfig {
            total_timesteps: 300,
            learn_start: 20,
            batch: 8,
            buffer_capacity: 50,
            target_sync_every: 7,
            hidden: vec![8],
            seed: 3,
            ..Default::default()
        };
        let a = train(&mut ChainEnv::new(20), &config).unwrap();
        let b = train(&mut ChainEnv::new(20), &config).unwrap();
        assert_eq!(a.qnet, b.qnet);
        assert_eq!(a.history, b.history);
    }
}
