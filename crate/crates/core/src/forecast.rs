//! Multi-month rainfall forecasting with a stacked LSTM, and the with/without
//! ablation that measures what an extra index adds.
//!
//! Inputs are 24-month windows of standardized features; the network maps
//! the final hidden state to all 12 forecast months at once.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::YearMonth;
use crate::fsio;
use crate::index::pearson;
use crate::nn::Adam;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("cluster {cluster_id} skipped: |r(index, rainfall)| = {r:.3} does not exceed {threshold}")]
    SkippedCluster { cluster_id: u32, r: f64, threshold: f64 },
    #[error("{split} split of fold {fold} has no samples")]
    EmptySplit { fold: usize, split: &'static str },
    #[error("no input features")]
    NoFeatures,
    #[error("series are not on a common monthly axis")]
    AxisMismatch,
    #[error("invalid forecast config: {0}")]
    InvalidConfig(String),
    #[error("malformed indices csv: {0}")]
    Format(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Named monthly feature columns on a shared axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub start: YearMonth,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(start: YearMonth, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, ForecastError> {
        if names.len() != columns.len() {
            return Err(ForecastError::ShapeMismatch("names and columns differ in count".into()));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(ForecastError::AxisMismatch);
            }
        }
        Ok(Self { start, names, columns })
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.columns[k].as_slice())
    }

    /// Rows `start .. start + len` on the calendar axis.
    pub fn window(&self, start: YearMonth, len: usize) -> Result<FeatureMatrix, ForecastError> {
        let off = self.start.months_until(start);
        if off < 0 || off as usize + len > self.len() {
            return Err(ForecastError::AxisMismatch);
        }
        let r = off as usize..off as usize + len;
        Ok(FeatureMatrix {
            start,
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[r.clone()].to_vec()).collect(),
        })
    }
}

#[derive(Deserialize, Serialize)]
struct IndexRow {
    index_name: String,
    year: i32,
    month: u32,
    value: f64,
}

/// Reads `index_name,year,month,value` rows. Every index must cover the same
/// consecutive months; column order follows first appearance.
pub fn read_indices_csv(path: &Path) -> Result<FeatureMatrix, ForecastError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut series: HashMap<String, Vec<(YearMonth, f64)>> = HashMap::new();
    for row in reader.deserialize() {
        let row: IndexRow = row?;
        let ym = YearMonth::new(row.year, row.month)
            .ok_or_else(|| ForecastError::Format(format!("month {} out of range", row.month)))?;
        if !series.contains_key(&row.index_name) {
            order.push(row.index_name.clone());
        }
        series.entry(row.index_name).or_default().push((ym, row.value));
    }
    if order.is_empty() {
        return Err(ForecastError::Format("no rows".into()));
    }
    let mut start = None;
    let mut columns = Vec::new();
    for name in &order {
        let mut rows = series.remove(name).unwrap_or_default();
        rows.sort_by_key(|(ym, _)| *ym);
        let first = rows[0].0;
        for (k, (ym, _)) in rows.iter().enumerate() {
            if first.add_months(k as i64) != *ym {
                return Err(ForecastError::Format(format!("{name}: gap or duplicate at {ym}")));
            }
        }
        if *start.get_or_insert(first) != first {
            return Err(ForecastError::AxisMismatch);
        }
        columns.push(rows.into_iter().map(|(_, v)| v).collect());
    }
    FeatureMatrix::new(start.expect("nonempty"), order, columns)
}

pub fn write_indices_csv(features: &FeatureMatrix, path: &Path) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (name, col) in features.names.iter().zip(&features.columns) {
        for (t, v) in col.iter().enumerate() {
            let ym = features.start.add_months(t as i64);
            w.serialize(IndexRow {
                index_name: name.clone(),
                year: ym.year,
                month: ym.month,
                value: *v,
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

/// Columns whose absolute correlation with `target` over `rows` is strictly
/// above `threshold`. Constant columns are never selected.
pub fn select_features(features: &FeatureMatrix, target: &[f64], rows: Range<usize>, threshold: f64) -> Vec<usize> {
    features
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            pearson(&c[rows.clone()], &target[rows.clone()]).is_ok_and(|r| r.abs() > threshold)
        })
        .map(|(k, _)| k)
        .collect()
}

/// One training example: `input` is features × window, `target` the
/// following `horizon` months.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    /// Axis index of the first input month.
    pub start: usize,
    pub input: DMatrix<f64>,
    pub target: Vec<f64>,
}

impl WindowedSample {
    /// Axis indices of the target months.
    pub fn target_range(&self) -> Range<usize> {
        let s = self.start + self.input.ncols();
        s..s + self.target.len()
    }
}

/// Stride-one windows over `inputs` (features × months), in chronological
/// order. Yields `max(0, T − window − horizon + 1)` samples.
pub fn make_windows(inputs: &DMatrix<f64>, target: &[f64], window: usize, horizon: usize) -> Vec<WindowedSample> {
    assert_eq!(inputs.ncols(), target.len());
    let t = target.len();
    if window == 0 || horizon == 0 || t < window + horizon {
        return Vec::new();
    }
    (0..=t - window - horizon)
        .map(|s| WindowedSample {
            start: s,
            input: inputs.columns(s, window).into_owned(),
            target: target[s + window..s + window + horizon].to_vec(),
        })
        .collect()
}

/// Pooled root mean squared error.
pub fn rmse(observed: &[f64], predicted: &[f64]) -> Result<f64, ForecastError> {
    if observed.len() != predicted.len() || observed.is_empty() {
        return Err(ForecastError::ShapeMismatch(format!(
            "{} observed vs {} predicted values",
            observed.len(),
            predicted.len()
        )));
    }
    let sse: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    Ok((sse / observed.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LstmShape {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

impl LstmShape {
    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.hidden
        }
    }

    fn layer_len(&self, l: usize) -> usize {
        let g = 4 * self.hidden;
        g * self.layer_in(l) + g * self.hidden + g
    }

    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| self.layer_len(k)).sum()
    }

    fn head_offset(&self) -> usize {
        self.layer_offset(self.layers)
    }

    pub fn param_count(&self) -> usize {
        self.head_offset() + self.output * self.hidden + self.output
    }
}

/// Stacked LSTM with a linear head on the last hidden state.
///
/// Per layer the flat parameters hold `W_x` (4H × in), `W_h` (4H × H) and
/// one bias (4H), column-major, gate blocks in the order input, forget,
/// candidate, output. The head `W_y` (out × H) and its bias follow the last
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub shape: LstmShape,
    pub params: Vec<f64>,
}

/// Activations kept by a forward pass.
pub struct LstmTape {
    /// `[layer][t]` layer inputs, after dropout.
    inputs: Vec<Vec<DMatrix<f64>>>,
    /// `[layer][t]` activated gates (4H × B).
    gates: Vec<Vec<DMatrix<f64>>>,
    /// `[layer][t]` cell states.
    cells: Vec<Vec<DMatrix<f64>>>,
    /// `[layer][t]` hidden states.
    hiddens: Vec<Vec<DMatrix<f64>>>,
    masks: Option<Vec<Vec<DMatrix<f64>>>>,
    pub output: DMatrix<f64>,
}

impl LstmTape {
    /// Hidden states of every layer at every step.
    pub fn hidden_states(&self) -> &[Vec<DMatrix<f64>>] {
        &self.hiddens
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    /// Uniform(±1/√H) initialization.
    pub fn new<R: Rng + ?Sized>(shape: LstmShape, rng: &mut R) -> Self {
        let k = 1.0 / (shape.hidden as f64).sqrt();
        let params = (0..shape.param_count()).map(|_| rng.random_range(-k..k)).collect();
        Self { shape, params }
    }

    pub fn zeros(shape: LstmShape) -> Self {
        Self {
            shape,
            params: vec![0.0; shape.param_count()],
        }
    }

    fn wx(&self, l: usize) -> DMatrixView<'_, f64> {
        let s = &self.shape;
        let o = s.layer_offset(l);
        DMatrixView::from_slice(&self.params[o..], 4 * s.hidden, s.layer_in(l))
    }

    fn wh(&self, l: usize) -> DMatrixView<'_, f64> {
        let s = &self.shape;
        let o = s.layer_offset(l) + 4 * s.hidden * s.layer_in(l);
        DMatrixView::from_slice(&self.params[o..], 4 * s.hidden, s.hidden)
    }

    fn bias(&self, l: usize) -> &[f64] {
        let s = &self.shape;
        let o = s.layer_offset(l) + 4 * s.hidden * (s.layer_in(l) + s.hidden);
        &self.params[o..o + 4 * s.hidden]
    }

    fn wy(&self) -> DMatrixView<'_, f64> {
        let s = &self.shape;
        DMatrixView::from_slice(&self.params[s.head_offset()..], s.output, s.hidden)
    }

    fn by(&self) -> &[f64] {
        let s = &self.shape;
        let o = s.head_offset() + s.output * s.hidden;
        &self.params[o..o + s.output]
    }

    /// Runs the network over `xs` (one in × B matrix per time step).
    /// `masks[l][t]` multiplies the hidden state of layer `l` before it
    /// enters layer `l + 1`.
    pub fn forward(&self, xs: &[DMatrix<f64>], masks: Option<Vec<Vec<DMatrix<f64>>>>) -> LstmTape {
        let s = self.shape;
        let h = s.hidden;
        let batch = xs[0].ncols();
        let steps = xs.len();
        let mut inputs: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(s.layers);
        let mut gates = Vec::with_capacity(s.layers);
        let mut cells = Vec::with_capacity(s.layers);
        let mut hiddens: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(s.layers);
        for l in 0..s.layers {
            let layer_inputs: Vec<DMatrix<f64>> = if l == 0 {
                xs.to_vec()
            } else {
                match &masks {
                    Some(m) => hiddens[l - 1]
                        .iter()
                        .zip(&m[l - 1])
                        .map(|(hv, mk)| hv.component_mul(mk))
                        .collect(),
                    None => hiddens[l - 1].clone(),
                }
            };
            let (wx, wh, b) = (self.wx(l), self.wh(l), self.bias(l));
            let mut hp = DMatrix::<f64>::zeros(h, batch);
            let mut cp = DMatrix::<f64>::zeros(h, batch);
            let mut lg = Vec::with_capacity(steps);
            let mut lc = Vec::with_capacity(steps);
            let mut lh = Vec::with_capacity(steps);
            for x in &layer_inputs {
                let mut a = wx * x + wh * &hp;
                for mut col in a.column_iter_mut() {
                    for (r, v) in col.iter_mut().enumerate() {
                        let z = *v + b[r];
                        *v = if (2 * h..3 * h).contains(&r) { z.tanh() } else { sigmoid(z) };
                    }
                }
                let mut c = DMatrix::<f64>::zeros(h, batch);
                let mut hn = DMatrix::<f64>::zeros(h, batch);
                for bi in 0..batch {
                    for r in 0..h {
                        let (ig, fg, gg, og) = (a[(r, bi)], a[(h + r, bi)], a[(2 * h + r, bi)], a[(3 * h + r, bi)]);
                        let cv = fg * cp[(r, bi)] + ig * gg;
                        c[(r, bi)] = cv;
                        hn[(r, bi)] = og * cv.tanh();
                    }
                }
                lg.push(a);
                hp = hn.clone();
                cp = c.clone();
                lc.push(c);
                lh.push(hn);
            }
            inputs.push(layer_inputs);
            gates.push(lg);
            cells.push(lc);
            hiddens.push(lh);
        }
        let last = &hiddens[s.layers - 1][steps - 1];
        let mut output = self.wy() * last;
        let by = self.by();
        for mut col in output.column_iter_mut() {
            for (v, bias) in col.iter_mut().zip(by) {
                *v += bias;
            }
        }
        LstmTape {
            inputs,
            gates,
            cells,
            hiddens,
            masks,
            output,
        }
    }

    /// Backpropagation through time of `d_out` (gradient of the loss with
    /// respect to the taped outputs).
    pub fn backward(&self, tape: &LstmTape, d_out: &DMatrix<f64>) -> Vec<f64> {
        let s = self.shape;
        let h = s.hidden;
        let steps = tape.inputs[0].len();
        let batch = d_out.ncols();
        let mut grads = vec![0.0; self.params.len()];

        let last = &tape.hiddens[s.layers - 1][steps - 1];
        let d_wy = d_out * last.transpose();
        let ho = s.head_offset();
        grads[ho..ho + s.output * h].copy_from_slice(d_wy.as_slice());
        for (r, g) in grads[ho + s.output * h..].iter_mut().enumerate() {
            *g = d_out.row(r).sum();
        }

        // gradient flowing into each hidden state of the current layer from above
        let mut dh_above: Vec<DMatrix<f64>> = vec![DMatrix::zeros(h, batch); steps];
        dh_above[steps - 1] = self.wy().transpose() * d_out;

        for l in (0..s.layers).rev() {
            let n_in = s.layer_in(l);
            let (wx, wh) = (self.wx(l), self.wh(l));
            let mut d_wx = DMatrix::<f64>::zeros(4 * h, n_in);
            let mut d_wh = DMatrix::<f64>::zeros(4 * h, h);
            let mut d_b = vec![0.0; 4 * h];
            let mut dx: Vec<DMatrix<f64>> = Vec::with_capacity(steps);
            let mut dh_next = DMatrix::<f64>::zeros(h, batch);
            let mut dc_next = DMatrix::<f64>::zeros(h, batch);
            let zero = DMatrix::<f64>::zeros(h, batch);
            for t in (0..steps).rev() {
                let a = &tape.gates[l][t];
                let c = &tape.cells[l][t];
                let c_prev = if t > 0 { &tape.cells[l][t - 1] } else { &zero };
                let h_prev = if t > 0 { &tape.hiddens[l][t - 1] } else { &zero };
                let dh = &dh_above[t] + &dh_next;
                let mut da = DMatrix::<f64>::zeros(4 * h, batch);
                for bi in 0..batch {
                    for r in 0..h {
                        let (ig, fg, gg, og) = (a[(r, bi)], a[(h + r, bi)], a[(2 * h + r, bi)], a[(3 * h + r, bi)]);
                        let tc = c[(r, bi)].tanh();
                        let dhv = dh[(r, bi)];
                        let dc = dhv * og * (1.0 - tc * tc) + dc_next[(r, bi)];
                        da[(r, bi)] = dc * gg * ig * (1.0 - ig);
                        da[(h + r, bi)] = dc * c_prev[(r, bi)] * fg * (1.0 - fg);
                        da[(2 * h + r, bi)] = dc * ig * (1.0 - gg * gg);
                        da[(3 * h + r, bi)] = dhv * tc * og * (1.0 - og);
                        dc_next[(r, bi)] = dc * fg;
                    }
                }
                d_wx += &da * tape.inputs[l][t].transpose();
                d_wh += &da * h_prev.transpose();
                for (r, g) in d_b.iter_mut().enumerate() {
                    *g += da.row(r).sum();
                }
                dh_next = wh.transpose() * &da;
                if l > 0 {
                    dx.push(wx.transpose() * &da);
                }
            }
            let o = s.layer_offset(l);
            let nx = 4 * h * n_in;
            grads[o..o + nx].copy_from_slice(d_wx.as_slice());
            grads[o + nx..o + nx + 4 * h * h].copy_from_slice(d_wh.as_slice());
            grads[o + nx + 4 * h * h..o + nx + 4 * h * h + 4 * h].copy_from_slice(&d_b);
            if l > 0 {
                dx.reverse();
                dh_above = match &tape.masks {
                    Some(m) => dx.iter().zip(&m[l - 1]).map(|(d, mk)| d.component_mul(mk)).collect(),
                    None => dx,
                };
            }
        }
        grads
    }
}

/// Inverted-dropout masks for the hidden states passed between layers:
/// `[layer][t]`, entries 0 or `1/(1 − p)`.
pub fn dropout_masks<R: Rng + ?Sized>(
    shape: &LstmShape,
    steps: usize,
    batch: usize,
    p: f64,
    rng: &mut R,
) -> Vec<Vec<DMatrix<f64>>> {
    let keep = 1.0 / (1.0 - p);
    (0..shape.layers.saturating_sub(1))
        .map(|_| {
            (0..steps)
                .map(|_| DMatrix::from_fn(shape.hidden, batch, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep }))
                .collect()
        })
        .collect()
}

/// Time-major batch: one features × B matrix per step.
pub fn batch_inputs(samples: &[&WindowedSample]) -> Vec<DMatrix<f64>> {
    let (f, steps) = samples[0].input.shape();
    (0..steps)
        .map(|t| DMatrix::from_fn(f, samples.len(), |r, b| samples[b].input[(r, t)]))
        .collect()
}

pub fn batch_targets(samples: &[&WindowedSample]) -> DMatrix<f64> {
    let horizon = samples[0].target.len();
    DMatrix::from_fn(horizon, samples.len(), |r, b| samples[b].target[r])
}

/// Mean squared error over all outputs of a batch and its gradient.
pub fn mse_loss_and_grad(
    lstm: &Lstm,
    xs: &[DMatrix<f64>],
    y: &DMatrix<f64>,
    masks: Option<Vec<Vec<DMatrix<f64>>>>,
) -> (f64, Vec<f64>) {
    let tape = lstm.forward(xs, masks);
    let diff = &tape.output - y;
    let n = diff.len() as f64;
    let loss = diff.norm_squared() / n;
    let d_out = diff * (2.0 / n);
    (loss, lstm.backward(&tape, &d_out))
}

/// The 12 outputs for one input window (features × months).
pub fn lstm_forward(lstm: &Lstm, window: &DMatrix<f64>) -> Result<Vec<f64>, ForecastError> {
    if window.nrows() != lstm.shape.input || window.ncols() == 0 {
        return Err(ForecastError::ShapeMismatch(format!(
            "window is {}x{}, network expects {} features",
            window.nrows(),
            window.ncols(),
            lstm.shape.input
        )));
    }
    if lstm.params.len() != lstm.shape.param_count() {
        return Err(ForecastError::ShapeMismatch("parameter count does not match shape".into()));
    }
    let xs: Vec<DMatrix<f64>> = (0..window.ncols()).map(|t| window.columns(t, 1).into_owned()).collect();
    Ok(lstm.forward(&xs, None).output.as_slice().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain minibatch gradient descent.
    Sgd,
    Adam,
}

enum OptState {
    Sgd(f64),
    Adam(Adam),
}

impl OptState {
    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            OptState::Sgd(lr) => params.iter_mut().zip(grads).for_each(|(p, g)| *p -= *lr * g),
            OptState::Adam(a) => a.step(params, grads),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            layers: 1,
            dropout: 0.0,
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            max_epochs: 200,
            patience: 20,
            batch_size: 32,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: &str| Err(ForecastError::InvalidConfig(m.into()));
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return bad("learning_rate, batch_size and max_epochs must be positive");
        }
        Ok(())
    }
}

/// Hyperparameter grid searched by [`grid_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastGrid {
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for ForecastGrid {
    fn default() -> Self {
        Self {
            hidden: vec![16, 32, 64],
            layers: vec![1, 2, 3],
            dropout: vec![0.0, 0.2, 0.5],
        }
    }
}

impl ForecastGrid {
    /// Every combination, hidden-major.
    pub fn configs(&self, base: &ForecasterConfig) -> Vec<ForecasterConfig> {
        let mut out = Vec::new();
        for &hidden in &self.hidden {
            for &layers in &self.layers {
                for &dropout in &self.dropout {
                    out.push(ForecasterConfig {
                        hidden,
                        layers,
                        dropout,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedForecaster {
    pub config: ForecasterConfig,
    pub lstm: Lstm,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainedForecaster {
    pub fn epochs_run(&self) -> usize {
        self.val_curve.len()
    }

    /// Network outputs per sample.
    pub fn predict(&self, samples: &[WindowedSample]) -> Vec<Vec<f64>> {
        if samples.is_empty() {
            return Vec::new();
        }
        let refs: Vec<&WindowedSample> = samples.iter().collect();
        let out = self.lstm.forward(&batch_inputs(&refs), None).output;
        out.column_iter().map(|c| c.iter().copied().collect()).collect()
    }
}

fn eval_loss(lstm: &Lstm, samples: &[WindowedSample]) -> f64 {
    let refs: Vec<&WindowedSample> = samples.iter().collect();
    let out = lstm.forward(&batch_inputs(&refs), None).output;
    (out - batch_targets(&refs)).norm_squared() / (samples.len() * samples[0].target.len()) as f64
}

/// Minibatch training with early stopping on validation loss; returns the
/// parameters from the best validation epoch.
pub fn train_forecaster(
    train: &[WindowedSample],
    val: &[WindowedSample],
    config: &ForecasterConfig,
) -> Result<TrainedForecaster, ForecastError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ForecastError::EmptySplit { fold: 0, split: "train" });
    }
    if val.is_empty() {
        return Err(ForecastError::EmptySplit { fold: 0, split: "validation" });
    }
    let shape = LstmShape {
        input: train[0].input.nrows(),
        hidden: config.hidden,
        layers: config.layers,
        output: train[0].target.len(),
    };
    if shape.input == 0 {
        return Err(ForecastError::NoFeatures);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lstm = Lstm::new(shape, &mut rng);
    let mut opt = match config.optimizer {
        Optimizer::Sgd => OptState::Sgd(config.learning_rate),
        Optimizer::Adam => OptState::Adam(Adam::new(shape.param_count(), config.learning_rate)),
    };
    let mut best_params = lstm.params.clone();
    let mut best_val = eval_loss(&lstm, val);
    let mut best_epoch = 0;
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps = train[0].input.ncols();
    let use_dropout = config.dropout > 0.0 && config.layers > 1;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&WindowedSample> = chunk.iter().map(|&k| &train[k]).collect();
            let masks = use_dropout.then(|| dropout_masks(&shape, steps, batch.len(), config.dropout, &mut rng));
            let (loss, mut grad) = mse_loss_and_grad(&lstm, &batch_inputs(&batch), &batch_targets(&batch), masks);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ForecastError::NonFiniteLoss { epoch });
            }
            if let Some(cap) = config.clip_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cap {
                    grad.iter_mut().for_each(|g| *g *= cap / norm);
                }
            }
            opt.step(&mut lstm.params, &grad);
            total += loss * batch.len() as f64;
        }
        train_curve.push(total / train.len() as f64);
        let v = eval_loss(&lstm, val);
        if !v.is_finite() {
            return Err(ForecastError::NonFiniteLoss { epoch });
        }
        val_curve.push(v);
        if v < best_val {
            best_val = v;
            best_epoch = epoch;
            best_params.copy_from_slice(&lstm.params);
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    lstm.params = best_params;
    Ok(TrainedForecaster {
        config: config.clone(),
        lstm,
        train_curve,
        val_curve,
        best_epoch,
        best_val_loss: best_val,
    })
}

/// Trains every grid configuration (in parallel) and keeps the lowest
/// validation loss; ties go to the smaller network, then to grid order.
pub fn grid_search(
    train: &[WindowedSample],
    val: &[WindowedSample],
    grid: &ForecastGrid,
    base: &ForecasterConfig,
) -> Result<TrainedForecaster, ForecastError> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(ForecastError::InvalidConfig("empty grid".into()));
    }
    let results: Vec<TrainedForecaster> = configs
        .par_iter()
        .map(|c| train_forecaster(train, val, c))
        .collect::<Result<_, _>>()?;
    let best = results
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.best_val_loss
                .total_cmp(&b.best_val_loss)
                .then(a.lstm.shape.param_count().cmp(&b.lstm.shape.param_count()))
                .then(ia.cmp(ib))
        })
        .map(|(_, t)| t)
        .expect("nonempty");
    Ok(best)
}

/// Train / validation / test calendar years, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSpec {
    pub train: (i32, i32),
    pub val: (i32, i32),
    pub test: (i32, i32),
}

impl FoldSpec {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let ok = |r: (i32, i32)| r.0 <= r.1;
        if !(ok(self.train) && ok(self.val) && ok(self.test) && self.train.1 < self.val.0 && self.val.1 < self.test.0) {
            return Err(ForecastError::InvalidConfig(format!(
                "fold ranges must be nonempty, disjoint and ordered: {self:?}"
            )));
        }
        Ok(())
    }

    /// Axis indices of the months in `years`, clipped to the axis.
    pub fn rows(years: (i32, i32), start: YearMonth, len: usize) -> Range<usize> {
        let clip = |ym: YearMonth| start.months_until(ym).clamp(0, len as i64) as usize;
        clip(YearMonth::new(years.0, 1).expect("valid"))..clip(YearMonth::new(years.1 + 1, 1).expect("valid"))
    }
}

pub fn default_folds() -> Vec<FoldSpec> {
    vec![
        FoldSpec {
            train: (1982, 2019),
            val: (2020, 2020),
            test: (2021, 2021),
        },
        FoldSpec {
            train: (1982, 2022),
            val: (2023, 2023),
            test: (2024, 2024),
        },
    ]
}

/// Samples of one fold, assigned by where all of their target months fall.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: Vec<WindowedSample>,
    pub val: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
    /// Training-fold statistics used to standardize the target.
    pub target_mean: f64,
    pub target_std: f64,
}

impl FoldData {
    pub fn to_mm(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }
}

/// Population mean and sd over `rows`.
pub fn fold_stats(x: &[f64], rows: Range<usize>) -> (f64, f64) {
    let w = &x[rows];
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn standardized(x: &[f64], rows: Range<usize>) -> (Vec<f64>, f64, f64) {
    let (mean, sd) = fold_stats(x, rows);
    let sd = if sd > 0.0 { sd } else { 1.0 };
    (x.iter().map(|v| (v - mean) / sd).collect(), mean, sd)
}

/// Standardizes `columns` and `target` with training-fold statistics,
/// windows them and splits the windows into train / validation / test.
pub fn prepare_fold(
    start: YearMonth,
    columns: &[&[f64]],
    target: &[f64],
    fold: &FoldSpec,
    window: usize,
    horizon: usize,
) -> Result<FoldData, ForecastError> {
    fold.validate()?;
    let len = target.len();
    if columns.is_empty() {
        return Err(ForecastError::NoFeatures);
    }
    if columns.iter().any(|c| c.len() != len) {
        return Err(ForecastError::AxisMismatch);
    }
    let train_rows = FoldSpec::rows(fold.train, start, len);
    if train_rows.len() < 2 {
        return Err(ForecastError::EmptySplit { fold: 0, split: "train" });
    }
    let mut inputs = DMatrix::<f64>::zeros(columns.len(), len);
    for (r, c) in columns.iter().enumerate() {
        let (z, _, _) = standardized(c, train_rows.clone());
        for (t, v) in z.into_iter().enumerate() {
            inputs[(r, t)] = v;
        }
    }
    let (y, target_mean, target_std) = standardized(target, train_rows);
    let within = |years: (i32, i32), s: &WindowedSample| {
        s.target_range().all(|t| {
            let y = start.add_months(t as i64).year;
            years.0 <= y && y <= years.1
        })
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in make_windows(&inputs, &y, window, horizon) {
        if within(fold.train, &s) {
            train.push(s);
        } else if within(fold.val, &s) {
            val.push(s);
        } else if within(fold.test, &s) {
            test.push(s);
        }
    }
    Ok(FoldData {
        train,
        val,
        test,
        target_mean,
        target_std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "base+ne")]
    WithNe,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::Base => "base",
            Arm::WithNe => "base+ne",
        })
    }
}

/// One line of the forecast report; `fold` is the fold number or `mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cluster_id: u32,
    pub fold: String,
    pub arm: Arm,
    pub rmse_mm_month: f64,
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    fsio::write_atomic(path, &bytes)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub threshold: f64,
    pub window: usize,
    pub horizon: usize,
    /// Feed the target's own history as an input column.
    pub include_history: bool,
    pub folds: Vec<FoldSpec>,
    pub grid: ForecastGrid,
    pub base: ForecasterConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            window: 24,
            horizon: 12,
            include_history: true,
            folds: default_folds(),
            grid: ForecastGrid::default(),
            base: ForecasterConfig::default(),
        }
    }
}

/// Per-fold and mean test RMSE for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub arm: Arm,
    pub fold_rmse: Vec<f64>,
    pub selected: Vec<Vec<String>>,
    pub models: Vec<ForecasterConfig>,
}

impl ArmResult {
    pub fn mean_rmse(&self) -> f64 {
        self.fold_rmse.iter().sum::<f64>() / self.fold_rmse.len() as f64
    }
}

fn run_arm(
    arm: Arm,
    target: &[f64],
    candidates: &FeatureMatrix,
    ne: Option<&[f64]>,
    cfg: &AblationConfig,
) -> Result<ArmResult, ForecastError> {
    let mut fold_rmse = Vec::new();
    let mut selected = Vec::new();
    let mut models = Vec::new();
    for (k, fold) in cfg.folds.iter().enumerate() {
        let train_rows = FoldSpec::rows(fold.train, candidates.start, target.len());
        let picked = select_features(candidates, target, train_rows, cfg.threshold);
        let mut names: Vec<String> = picked.iter().map(|&c| candidates.names[c].clone()).collect();
        let mut cols: Vec<&[f64]> = picked.iter().map(|&c| candidates.columns[c].as_slice()).collect();
        if cfg.include_history {
            names.push("target".into());
            cols.push(target);
        }
        if let Some(ne) = ne {
            // an exact copy of an existing input adds nothing
            if !cols.iter().any(|c| *c == ne) {
                names.push("ne".into());
                cols.push(ne);
            }
        }
        let data = prepare_fold(candidates.start, &cols, target, fold, cfg.window, cfg.horizon)?;
        for (split, set) in [("train", &data.train), ("validation", &data.val), ("test", &data.test)] {
            if set.is_empty() {
                return Err(ForecastError::EmptySplit { fold: k + 1, split });
            }
        }
        let model = grid_search(&data.train, &data.val, &cfg.grid, &cfg.base)?;
        let preds = model.predict(&data.test);
        let mut obs = Vec::new();
        let mut pred = Vec::new();
        for (s, p) in data.test.iter().zip(&preds) {
            obs.extend(s.target.iter().map(|z| data.to_mm(*z)));
            pred.extend(p.iter().map(|z| data.to_mm(*z)));
        }
        fold_rmse.push(rmse(&obs, &pred)?);
        selected.push(names);
        models.push(model.config);
    }
    Ok(ArmResult {
        arm,
        fold_rmse,
        selected,
        models,
    })
}

fn check_axis(target: &[f64], candidates: &FeatureMatrix, ne: Option<&[f64]>) -> Result<(), ForecastError> {
    if candidates.len() != target.len() || ne.is_some_and(|n| n.len() != target.len()) {
        return Err(ForecastError::AxisMismatch);
    }
    Ok(())
}

/// Report rows for one arm: per-fold RMSE then the fold mean.
pub fn report_rows(cluster_id: u32, result: &ArmResult) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = result
        .fold_rmse
        .iter()
        .enumerate()
        .map(|(k, r)| ReportRow {
            cluster_id,
            fold: (k + 1).to_string(),
            arm: result.arm,
            rmse_mm_month: *r,
        })
        .collect();
    rows.push(ReportRow {
        cluster_id,
        fold: "mean".into(),
        arm: result.arm,
        rmse_mm_month: result.mean_rmse(),
    });
    rows
}

/// Forecasts with the selected indices only.
pub fn base_experiment(
    target: &[f64],
    candidates: &FeatureMatrix,
    cfg: &AblationConfig,
) -> Result<ArmResult, ForecastError> {
    check_axis(target, candidates, None)?;
    run_arm(Arm::Base, target, candidates, None, cfg)
}

/// Both arms with identical seeds and grids: selected indices alone, then
/// with `ne` appended. Skips the cluster unless `|r(ne, target)|` exceeds
/// the threshold on every fold's training rows.
pub fn ablation_experiment(
    cluster_id: u32,
    target: &[f64],
    candidates: &FeatureMatrix,
    ne: &[f64],
    cfg: &AblationConfig,
) -> Result<(ArmResult, ArmResult), ForecastError> {
    check_axis(target, candidates, Some(ne))?;
    for fold in &cfg.folds {
        let rows = FoldSpec::rows(fold.train, candidates.start, target.len());
        let r = pearson(&ne[rows.clone()], &target[rows]).unwrap_or(0.0);
        if !(r.abs() > cfg.threshold) {
            return Err(ForecastError::SkippedCluster {
                cluster_id,
                r,
                threshold: cfg.threshold,
            });
        }
    }
    let base = run_arm(Arm::Base, target, candidates, None, cfg)?;
    let with = run_arm(Arm::WithNe, target, candidates, Some(ne), cfg)?;
    Ok((base, with))
}

/// Central-difference check of [`mse_loss_and_grad`] on the listed
/// parameter coordinates; returns the largest relative error.
pub fn gradient_check(
    lstm: &Lstm,
    xs: &[DMatrix<f64>],
    y: &DMatrix<f64>,
    masks: Option<Vec<Vec<DMatrix<f64>>>>,
    coords: &[usize],
    eps: f64,
) -> f64 {
    let (_, grad) = mse_loss_and_grad(lstm, xs, y, masks.clone());
    let loss_at = |p: &Lstm| {
        let out = p.forward(xs, masks.clone()).output;
        (out - y).norm_squared() / y.len() as f64
    };
    let mut probe = lstm.clone();
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    for &k in coords {
        let orig = probe.params[k];
        probe.params[k] = orig + eps;
        let up = loss_at(&probe);
        probe.params[k] = orig - eps;
        let down = loss_at(&probe);
        probe.params[k] = orig;
        analytic.push(grad[k]);
        numeric.push((up - down) / (2.0 * eps));
    }
    crate::nn::max_relative_error(&analytic, &numeric, GRAD_CHECK_FLOOR)
}

/// Denominator floor for relative gradient errors.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;

    fn ym(y: i32, m: u32) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.0, 2.0, 3.0], &[6.0, 7.0, 8.0]).unwrap() - 5.0).abs() < 1e-12);
        assert!((rmse(&[0.0, 3.0], &[4.0, 3.0]).unwrap() - 2.8284).abs() < 1e-4);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn window_counts_and_shapes() {
        let x = DMatrix::from_fn(3, 48, |r, c| (r * 100 + c) as f64);
        let y: Vec<f64> = (0..48).map(|t| t as f64).collect();
        let w = make_windows(&x, &y, 24, 12);
        assert_eq!(w.len(), 13);
        for s in &w {
            assert_eq!(s.input.shape(), (3, 24));
            assert_eq!(s.target.len(), 12);
            // no overlap between inputs and targets
            assert_eq!(s.target[0], (s.start + 24) as f64);
            assert_eq!(s.input[(0, 23)], (s.start + 23) as f64);
        }
        let x = DMatrix::zeros(3, 35);
        assert!(make_windows(&x, &[0.0; 35], 24, 12).is_empty());
    }

    #[test]
    fn selection_threshold_is_strict() {
        let target: Vec<f64> = (0..50).map(|t| ((t * 7) % 11) as f64).collect();
        let table = crate::synthdata::gen_global_indices(
            &target,
            ym(2000, 1),
            0..50,
            &[("self", 1.0), ("r59", 0.59), ("r60", 0.6), ("r61", 0.61)],
            1,
        );
        let picked = select_features(&table, &target, 0..50, 0.6);
        let names: Vec<&str> = picked.iter().map(|&k| table.names[k].as_str()).collect();
        assert_eq!(names, vec!["self", "r61"]);
    }

    #[test]
    fn zero_network_outputs_head_bias() {
        let shape = LstmShape {
            input: 2,
            hidden: 3,
            layers: 2,
            output: 12,
        };
        let mut net = Lstm::zeros(shape);
        let o = shape.head_offset() + 12 * 3;
        for k in 0..12 {
            net.params[o + k] = k as f64 * 0.5;
        }
        let window = DMatrix::from_fn(2, 24, |r, c| (r + c) as f64 * 0.1);
        let out = lstm_forward(&net, &window).unwrap();
        let expect: Vec<f64> = (0..12).map(|k| k as f64 * 0.5).collect();
        assert_eq!(out, expect);
        let xs: Vec<DMatrix<f64>> = (0..window.ncols()).map(|t| window.columns(t, 1).into_owned()).collect();
        let tape = net.forward(&xs, None);
        assert!(tape.hidden_states().iter().flatten().all(|h| h.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_step_hand_example() {
        // H = 1, one input, one output; gate pre-activations a = w_x x + b
        let shape = LstmShape {
            input: 1,
            hidden: 1,
            layers: 1,
            output: 1,
        };
        // W_x = [0.5, -0.3, 0.8, 0.1], W_h = 0, b = [0.1, 0.2, -0.1, 0.3], W_y = 2, b_y = 0.5
        let params = vec![0.5, -0.3, 0.8, 0.1, 0.0, 0.0, 0.0, 0.0, 0.1, 0.2, -0.1, 0.3, 2.0, 0.5];
        let net = Lstm { shape, params };
        let x = 1.5;
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = s(0.5 * x + 0.1);
        let g = (0.8 * x - 0.1f64).tanh();
        let o = s(0.1 * x + 0.3);
        let c = i * g;
        let h = o * c.tanh();
        let out = lstm_forward(&net, &DMatrix::from_element(1, 1, x)).unwrap();
        assert!((out[0] - (2.0 * h + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn hidden_states_are_bounded() {
        let shape = LstmShape {
            input: 3,
            hidden: 5,
            layers: 2,
            output: 12,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Lstm::new(shape, &mut rng);
        net.params.iter_mut().for_each(|p| *p *= 20.0);
        let xs: Vec<DMatrix<f64>> = (0..24).map(|_| DMatrix::from_fn(3, 4, |_, _| rng.random_range(-5.0..5.0))).collect();
        let tape = net.forward(&xs, None);
        assert!(tape.hidden_states().iter().flatten().all(|h| h.iter().all(|v| v.abs() < 1.0)));
    }

    fn random_problem(shape: LstmShape, steps: usize, batch: usize, seed: u64) -> (Lstm, Vec<DMatrix<f64>>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Lstm::new(shape, &mut rng);
        let xs = (0..steps)
            .map(|_| DMatrix::from_fn(shape.input, batch, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let y = DMatrix::from_fn(shape.output, batch, |_, _| rng.random_range(-1.0..1.0));
        (net, xs, y)
    }

    #[test]
    fn bptt_matches_finite_differences_all_coordinates() {
        let shape = LstmShape {
            input: 3,
            hidden: 4,
            layers: 2,
            output: 5,
        };
        let (net, xs, y) = random_problem(shape, 6, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let masks = dropout_masks(&shape, 6, 3, 0.3, &mut rng);
        let coords: Vec<usize> = (0..shape.param_count()).collect();
        assert!(gradient_check(&net, &xs, &y, None, &coords, 1e-5) < 1e-4);
        assert!(gradient_check(&net, &xs, &y, Some(masks), &coords, 1e-5) < 1e-4);
    }

    #[test]
    fn tiny_dataset_is_memorized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<WindowedSample> = (0..3)
            .map(|k| WindowedSample {
                start: k,
                input: DMatrix::from_fn(2, 24, |_, _| rng.random_range(-1.0..1.0)),
                target: (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let grid = ForecastGrid {
            hidden: vec![16, 32],
            layers: vec![1],
            dropout: vec![0.0],
        };
        let base = ForecasterConfig {
            max_epochs: 200,
            patience: 200,
            ..Default::default()
        };
        let model = grid_search(&samples, &samples, &grid, &base).unwrap();
        let preds = model.predict(&samples);
        let obs: Vec<f64> = samples.iter().flat_map(|s| s.target.clone()).collect();
        let pred: Vec<f64> = preds.into_iter().flatten().collect();
        let (_, sd) = fold_stats(&obs, 0..obs.len());
        assert!(rmse(&obs, &pred).unwrap() < 0.05 * sd);
    }

    #[test]
    fn early_stopping_on_a_plateau() {
        // validation targets are pure noise unrelated to inputs
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut ChaCha8Rng, n: usize| -> Vec<WindowedSample> {
            (0..n)
                .map(|k| WindowedSample {
                    start: k,
                    input: DMatrix::from_fn(1, 24, |_, _| rng.random_range(-1.0..1.0)),
                    target: (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect()
        };
        let train = mk(&mut rng, 8);
        let val = mk(&mut rng, 4);
        let cfg = ForecasterConfig {
            patience: 5,
            ..Default::default()
        };
        let m = train_forecaster(&train, &val, &cfg).unwrap();
        assert!(m.epochs_run() < 200);
        assert_eq!(m.epochs_run(), m.best_epoch + 5);
        assert!(m.val_curve.iter().all(|v| *v >= m.best_val_loss));
    }

    #[test]
    fn fold_split_never_leaks() {
        let start = ym(1982, 1);
        let n = 43 * 12;
        let y: Vec<f64> = (0..n).map(|t| (t as f64 * 0.3).sin()).collect();
        for fold in default_folds() {
            let d = prepare_fold(start, &[&y], &y, &fold, 24, 12).unwrap();
            let last_train = d.train.iter().map(|s| s.target_range().end).max().unwrap();
            let first_other = d.val.iter().chain(&d.test).map(|s| s.target_range().start).min().unwrap();
            assert!(last_train <= first_other);
            assert_eq!(d.val.len(), 1);
            assert_eq!(d.test.len(), 1);
            assert_eq!(d.train.len(), (fold.train.1 - 1982 + 1) as usize * 12 - 35);
            // standardized training rows have zero mean, unit sd
            let rows = FoldSpec::rows(fold.train, start, n);
            let z: Vec<f64> = y.iter().map(|v| (v - d.target_mean) / d.target_std).collect();
            let (m, s) = fold_stats(&z, rows);
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn folds_validate() {
        assert!(default_folds().iter().all(|f| f.validate().is_ok()));
        let bad = FoldSpec {
            train: (1982, 2020),
            val: (2020, 2020),
            test: (2021, 2021),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn indices_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.csv");
        let fm = FeatureMatrix::new(
            ym(1999, 11),
            vec!["ONI".into(), "DMI".into()],
            vec![vec![0.5, -1.0, 2.0], vec![1.0, 1.5, -0.25]],
        )
        .unwrap();
        write_indices_csv(&fm, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("index_name,year,month,value\nONI,1999,11,0.5\n"));
        assert_eq!(read_indices_csv(&p).unwrap(), fm);
    }

    #[test]
    fn report_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let res = ArmResult {
            arm: Arm::WithNe,
            fold_rmse: vec![10.0, 20.0],
            selected: vec![],
            models: vec![],
        };
        write_report_csv(&report_rows(3, &res), &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "cluster_id,fold,arm,rmse_mm_month\n3,1,base+ne,10.0\n3,2,base+ne,20.0\n3,mean,base+ne,15.0\n"
        );
    }

    #[test]
    fn weak_index_skips_the_cluster() {
        let w = crate::synthdata::gen_forecast_world(&Default::default(), 0);
        let (_, unrelated) = &w.clusters[1];
        let cfg = AblationConfig::default();
        assert!(matches!(
            ablation_experiment(2, unrelated, &w.indices, &w.ne_index, &cfg),
            Err(ForecastError::SkippedCluster { cluster_id: 2, .. })
        ));
    }

    #[test]
    fn gradient_check_every_grid_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for cfg in ForecastGrid::default().configs(&ForecasterConfig::default()) {
            let shape = LstmShape {
                input: 3,
                hidden: cfg.hidden,
                layers: cfg.layers,
                output: 12,
            };
            let (net, xs, y) = random_problem(shape, 8, 2, rng.random());
            let masks = (cfg.dropout > 0.0).then(|| dropout_masks(&shape, 8, 2, cfg.dropout, &mut rng));
            let coords: Vec<usize> = (0..40).map(|_| rng.random_range(0..shape.param_count())).collect();
            let err = gradient_check(&net, &xs, &y, masks, &coords, 1e-5);
            assert!(err < 1e-4, "{cfg:?}: {err}");
        }
    }

    fn quick_config() -> AblationConfig {
        AblationConfig {
            grid: ForecastGrid {
                hidden: vec![4],
                layers: vec![1],
                dropout: vec![0.0],
            },
            base: ForecasterConfig {
                max_epochs: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn duplicate_index_gives_identical_arms() {
        let w = crate::synthdata::gen_forecast_world(&Default::default(), 1);
        let target = &w.clusters[0].1;
        let copy = w.indices.column("ONI").unwrap().to_vec();
        let (base, with) = ablation_experiment(1, target, &w.indices, &copy, &quick_config()).unwrap();
        assert_eq!(base.fold_rmse, with.fold_rmse);
        assert_eq!(base.selected, with.selected);
    }

    #[test]
    fn runs_are_reproducible() {
        let w = crate::synthdata::gen_forecast_world(&Default::default(), 2);
        let target = &w.clusters[0].1;
        let cfg = quick_config();
        let a = ablation_experiment(1, target, &w.indices, &w.ne_index, &cfg).unwrap();
        let b = ablation_experiment(1, target, &w.indices, &w.ne_index, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.1.selected[0].contains(&"ne".to_string()));
        assert_eq!(a.0.selected[0], vec!["ONI".to_string(), "target".to_string()]);
    }

    proptest::proptest! {
        #[test]
        fn rmse_ignores_order(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50), seed in 0u64..1000) {
            let (o, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (os, ps): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
            let a = rmse(&o, &p).unwrap();
            let b = rmse(&os, &ps).unwrap();
            proptest::prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
