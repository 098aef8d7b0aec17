//! Binary MLP classifier trained from scratch: layer-normalized SiLU hidden
//! layers, a single sigmoid output unit, minibatch Adam on binary
//! cross-entropy, and an AUROC trace recorded during training.
//!
//! The same network with an identity output and squared-error loss serves as
//! the regression model for utility metrics.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, ScoreSeries, StatsError};
use crate::{derive_seed, seeded_rng};

const LN_EPS: f64 = 1e-5;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MIN_IMPROVEMENT: f64 = 1e-6;
pub const SMOOTHING_WINDOW: f64 = 0.10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("dimension mismatch: expected {expected} features, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} rows but {1} targets")]
    Length(usize, usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Epochs between trace recordings.
    pub eval_every: usize,
    pub norm_placement: NormPlacement,
    pub seed: u64,
}

/// Where each hidden layer's normalization sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// Normalize the layer's input row, then the affine map.
    Input,
    /// Affine map, then normalize before the activation.
    PreActivation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![100, 50],
            learning_rate: 5e-3,
            max_epochs: 1000,
            batch_size: 500,
            patience: 50,
            eval_every: 2,
            norm_placement: NormPlacement::PreActivation,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.contains(&0) {
            return Err(TrainError::Config("hidden layer of width 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 || self.eval_every == 0 {
            return Err(TrainError::Config(
                "max_epochs, batch_size, patience and eval_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Sigmoid output, binary cross-entropy.
    Logistic,
    /// Identity output, mean squared error.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub offset: Array1<f64>,
}

/// Affine map `input · weight + bias`, optionally preceded by layer
/// normalization of its input.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<LayerNorm>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
            norm: self.norm.as_ref().map(|n| LayerNorm {
                gain: Array1::zeros(n.gain.len()),
                offset: Array1::zeros(n.offset.len()),
            }),
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![
            self.weight.as_slice().expect("contiguous"),
            self.bias.as_slice().expect("contiguous"),
        ];
        if let Some(n) = &self.norm {
            v.push(n.gain.as_slice().expect("contiguous"));
            v.push(n.offset.as_slice().expect("contiguous"));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.weight.as_slice_mut().expect("contiguous"),
            self.bias.as_slice_mut().expect("contiguous"),
        ];
        if let Some(n) = &mut self.norm {
            v.push(n.gain.as_slice_mut().expect("contiguous"));
            v.push(n.offset.as_slice_mut().expect("contiguous"));
        }
        v
    }
}

/// Network parameters plus Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpState {
    layers: Vec<Layer>,
    first_moment: Vec<Layer>,
    second_moment: Vec<Layer>,
    step: u64,
    epoch: usize,
    head: Head,
    norm_placement: NormPlacement,
}

/// Glorot-uniform weights, zero biases, unit gains and zero offsets.
pub fn mlp_init(input_dim: usize, cfg: &MlpConfig) -> Result<MlpState> {
    mlp_init_with_head(input_dim, cfg, Head::Logistic)
}

pub fn mlp_init_with_head(input_dim: usize, cfg: &MlpConfig, head: Head) -> Result<MlpState> {
    if input_dim == 0 {
        return Err(TrainError::Config("input dimension must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = seeded_rng(derive_seed(cfg.seed, 0));
    let mut widths = vec![input_dim];
    widths.extend_from_slice(&cfg.hidden_sizes);
    widths.push(1);
    let n_hidden = cfg.hidden_sizes.len();
    let layers: Vec<Layer> = widths
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight =
                Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
            Layer {
                weight,
                bias: Array1::zeros(fan_out),
                norm: (l < n_hidden).then(|| {
                    let width = match cfg.norm_placement {
                        NormPlacement::Input => fan_in,
                        NormPlacement::PreActivation => fan_out,
                    };
                    LayerNorm {
                        gain: Array1::ones(width),
                        offset: Array1::zeros(width),
                    }
                }),
            }
        })
        .collect();
    let zeros: Vec<Layer> = layers.iter().map(Layer::zeros_like).collect();
    Ok(MlpState {
        first_moment: zeros.clone(),
        second_moment: zeros,
        layers,
        step: 0,
        epoch: 0,
        head,
        norm_placement: cfg.norm_placement,
    })
}

struct LayerCache {
    /// Input to the affine map (normalized when the norm sits on the input).
    affine_in: Array2<f64>,
    /// Input to the activation (normalized when the norm sits after the
    /// affine map).
    act_in: Array2<f64>,
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

fn layer_norm(x: &Array2<f64>, norm: &LayerNorm) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        *s = is;
    }
    let out = &xhat * &norm.gain + &norm.offset;
    (out, xhat, inv_std)
}

/// Backpropagates through a layer norm: accumulates gain/offset gradients
/// into `grads` and returns the gradient with respect to the norm's input.
fn norm_backward(dout: &Array2<f64>, layer: &Layer, cache: &LayerCache, grads: &mut Layer) -> Array2<f64> {
    let norm = layer.norm.as_ref().expect("layer has a norm");
    let xhat = cache.xhat.as_ref().expect("cached normalized input");
    let inv_std = cache.inv_std.as_ref().expect("cached inverse std");
    let g = grads.norm.as_mut().expect("norm gradients");
    g.gain = (dout * xhat).sum_axis(Axis(0));
    g.offset = dout.sum_axis(Axis(0));
    let dxhat = dout * &norm.gain;
    let d = dxhat.ncols() as f64;
    let mut dx = Array2::zeros(dxhat.raw_dim());
    for (((mut out_row, dh), xh), &is) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(xhat.rows())
        .zip(inv_std)
    {
        let m1 = dh.sum() / d;
        let m2 = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        for ((o, &a), &b) in out_row.iter_mut().zip(dh).zip(xh) {
            *o = is * (a - m1 - b * m2);
        }
    }
    dx
}

/// Target values a training run fits.
#[derive(Clone, Copy)]
enum Targets<'a> {
    Binary(&'a [bool]),
    Real(&'a [f64]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Binary(y) => y.len(),
            Targets::Real(y) => y.len(),
        }
    }
}

impl MlpState {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .map(|t| t.len())
            .sum()
    }

    /// All parameters, flattened in a fixed order.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    /// Copy with the output layer negated, so logits change sign.
    pub fn with_output_negated(&self) -> MlpState {
        let mut s = self.clone();
        let last = s.layers.last_mut().expect("at least one layer");
        last.weight.mapv_inplace(|v| -v);
        last.bias.mapv_inplace(|v| -v);
        s
    }

    fn check_dim(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(TrainError::Dimension {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward_cached(&self, x: &Array2<f64>) -> (Vec<LayerCache>, Array1<f64>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut xhat = None;
            let mut inv_std = None;
            let affine_in = match (&layer.norm, self.norm_placement) {
                (Some(norm), NormPlacement::Input) => {
                    let (out, xh, is) = layer_norm(&act, norm);
                    xhat = Some(xh);
                    inv_std = Some(is);
                    out
                }
                _ => act,
            };
            let pre = affine_in.dot(&layer.weight) + &layer.bias;
            let act_in = match (&layer.norm, self.norm_placement) {
                (Some(norm), NormPlacement::PreActivation) => {
                    let (out, xh, is) = layer_norm(&pre, norm);
                    xhat = Some(xh);
                    inv_std = Some(is);
                    out
                }
                _ => pre,
            };
            act = if l < last { act_in.mapv(silu) } else { act_in.clone() };
            caches.push(LayerCache {
                affine_in,
                act_in,
                xhat,
                inv_std,
            });
        }
        (caches, act.column(0).to_owned())
    }

    /// Output-unit pre-activations (logits for the logistic head).
    pub fn predict_raw(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_dim(x)?;
        Ok(self.forward_cached(x).1)
    }

    fn loss_and_output_grad(&self, out: &Array1<f64>, targets: Targets<'_>) -> (f64, Array1<f64>) {
        let n = out.len() as f64;
        let mut grad = Array1::zeros(out.len());
        let mut loss = 0.0;
        match targets {
            // Written so that (z, y) and (-z, !y) produce exactly negated gradients.
            Targets::Binary(y) => {
                for ((g, &z), &yi) in grad.iter_mut().zip(out).zip(y) {
                    if yi {
                        loss += softplus(-z);
                        *g = -sigmoid(-z) / n;
                    } else {
                        loss += softplus(z);
                        *g = sigmoid(z) / n;
                    }
                }
            }
            Targets::Real(y) => {
                for ((g, &z), &yi) in grad.iter_mut().zip(out).zip(y) {
                    let r = z - yi;
                    loss += r * r;
                    *g = 2.0 * r / n;
                }
            }
        }
        (loss / n, grad)
    }

    fn loss(&self, x: &Array2<f64>, targets: Targets<'_>) -> f64 {
        let (_, out) = self.forward_cached(x);
        self.loss_and_output_grad(&out, targets).0
    }

    /// Mean loss and its gradient with respect to every parameter.
    fn loss_and_grad(&self, x: &Array2<f64>, targets: Targets<'_>) -> (f64, Vec<Layer>) {
        let (caches, out) = self.forward_cached(x);
        let (loss, dout) = self.loss_and_output_grad(&out, targets);
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let input_norm = self.norm_placement == NormPlacement::Input;
        let mut dpre = dout.insert_axis(Axis(1));
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let cache = &caches[l];
            grads[l].weight = cache.affine_in.t().dot(&dpre);
            grads[l].bias = dpre.sum_axis(Axis(0));
            let has_input_norm = input_norm && layer.norm.is_some();
            if l == 0 && !has_input_norm {
                break;
            }
            let mut dinput = dpre.dot(&layer.weight.t());
            if has_input_norm {
                dinput = norm_backward(&dinput, layer, cache, &mut grads[l]);
            }
            if l == 0 {
                break;
            }
            let prev = &caches[l - 1];
            let dact_in = &dinput * &prev.act_in.mapv(silu_grad);
            dpre = if !input_norm && self.layers[l - 1].norm.is_some() {
                norm_backward(&dact_in, &self.layers[l - 1], prev, &mut grads[l - 1])
            } else {
                dact_in
            };
        }
        (loss, grads)
    }

    fn adam_step(&mut self, grads: &[Layer], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, m), v), g) in self
            .layers
            .iter_mut()
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
            .zip(grads)
        {
            for (((pt, mt), vt), gt) in p
                .tensors_mut()
                .into_iter()
                .zip(m.tensors_mut())
                .zip(v.tensors_mut())
                .zip(g.tensors())
            {
                for (((pi, mi), vi), &gi) in pt.iter_mut().zip(mt.iter_mut()).zip(vt.iter_mut()).zip(gt) {
                    *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                    *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                    let mhat = *mi / c1;
                    let vhat = *vi / c2;
                    *pi -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Class-1 probabilities.
pub fn mlp_forward(state: &MlpState, batch: &Array2<f64>) -> Result<Array1<f64>> {
    Ok(state.predict_raw(batch)?.mapv(sigmoid))
}

/// Discriminator AUROC over training: on the training set and on the target set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub train_series: ScoreSeries,
    pub target_series: ScoreSeries,
    pub smoothed_target: ScoreSeries,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State after the last epoch.
    pub state: MlpState,
    pub trace: ScoreTrace,
    /// State at the first recording whose training AUROC reached the snapshot
    /// threshold.
    pub snapshot: Option<(usize, MlpState)>,
    /// State at the last recording.
    pub last_recorded: Option<(usize, MlpState)>,
    pub epochs_run: usize,
    pub final_loss: f64,
}

/// Trains a fresh network on `(train_x, train_y)`, recording the AUROC trace.
/// Training never reads `eval`; it is only scored.
pub fn train_with_trace(
    train_x: &Array2<f64>,
    train_y: &[bool],
    eval: Option<(&Array2<f64>, &[bool])>,
    cfg: &MlpConfig,
) -> Result<(MlpState, ScoreTrace)> {
    let out = train_classifier(train_x, train_y, eval, cfg, None)?;
    Ok((out.state, out.trace))
}

/// [`train_with_trace`] with a snapshot of the state at the first recording
/// whose training AUROC is at least `snapshot_threshold`.
pub fn train_classifier(
    train_x: &Array2<f64>,
    train_y: &[bool],
    eval: Option<(&Array2<f64>, &[bool])>,
    cfg: &MlpConfig,
    snapshot_threshold: Option<f64>,
) -> Result<TrainOutcome> {
    let state = mlp_init(train_x.ncols(), cfg)?;
    train_classifier_from(state, train_x, train_y, eval, cfg, snapshot_threshold)
}

/// Continues training from a given initial state.
pub fn train_classifier_from(
    state: MlpState,
    train_x: &Array2<f64>,
    train_y: &[bool],
    eval: Option<(&Array2<f64>, &[bool])>,
    cfg: &MlpConfig,
    snapshot_threshold: Option<f64>,
) -> Result<TrainOutcome> {
    if !train_y.iter().any(|&y| y) || train_y.iter().all(|&y| y) {
        return Err(TrainError::SingleClass);
    }
    if let Some((ex, ey)) = eval {
        state.check_dim(ex)?;
        if ex.nrows() != ey.len() {
            return Err(TrainError::Length(ex.nrows(), ey.len()));
        }
    }
    fit(state, train_x, Targets::Binary(train_y), eval, cfg, snapshot_threshold)
}

/// Least-squares regression with the identity head.
pub fn train_regression(x: &Array2<f64>, y: &[f64], cfg: &MlpConfig) -> Result<MlpState> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Config("non-finite regression target".into()));
    }
    let state = mlp_init_with_head(x.ncols(), cfg, Head::Linear)?;
    Ok(fit(state, x, Targets::Real(y), None, cfg, None)?.state)
}

fn fit(
    mut state: MlpState,
    x: &Array2<f64>,
    targets: Targets<'_>,
    eval: Option<(&Array2<f64>, &[bool])>,
    cfg: &MlpConfig,
    snapshot_threshold: Option<f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    state.check_dim(x)?;
    if x.nrows() != targets.len() {
        return Err(TrainError::Length(x.nrows(), targets.len()));
    }
    let n = x.nrows();
    let mut rng = seeded_rng(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = ScoreTrace::default();
    let mut snapshot = None;
    let mut last_recorded = None;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut epoch_loss = f64::NAN;
    let mut epochs_run = 0;

    let mut batch_y_bool = Vec::with_capacity(cfg.batch_size);
    let mut batch_y_real = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), chunk);
            let bt = match targets {
                Targets::Binary(y) => {
                    batch_y_bool.clear();
                    batch_y_bool.extend(chunk.iter().map(|&i| y[i]));
                    Targets::Binary(&batch_y_bool)
                }
                Targets::Real(y) => {
                    batch_y_real.clear();
                    batch_y_real.extend(chunk.iter().map(|&i| y[i]));
                    Targets::Real(&batch_y_real)
                }
            };
            let (loss, grads) = state.loss_and_grad(&bx, bt);
            total += loss * chunk.len() as f64;
            state.adam_step(&grads, cfg.learning_rate);
        }
        epoch_loss = total / n as f64;
        state.epoch = epoch;
        epochs_run = epoch;
        if !epoch_loss.is_finite() {
            return Err(TrainError::Divergence { epoch });
        }

        if epoch % cfg.eval_every == 0 {
            if let Targets::Binary(y) = targets {
                let p_train = stats::auroc(state.predict_raw(x)?.as_slice().unwrap(), y)?;
                trace.train_series.push(epoch, p_train)?;
                if let Some((ex, ey)) = eval {
                    let p_target = stats::auroc(state.predict_raw(ex)?.as_slice().unwrap(), ey)?;
                    trace.target_series.push(epoch, p_target)?;
                }
                if snapshot.is_none() && snapshot_threshold.is_some_and(|t| p_train >= t) {
                    snapshot = Some((epoch, state.clone()));
                }
                last_recorded = Some((epoch, state.clone()));
            }
        }

        if epoch_loss < best - MIN_IMPROVEMENT {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if !trace.target_series.is_empty() {
        trace.smoothed_target = stats::smooth_centered(&trace.target_series, SMOOTHING_WINDOW)?;
    }
    Ok(TrainOutcome {
        state,
        trace,
        snapshot,
        last_recorded,
        epochs_run,
        final_loss: epoch_loss,
    })
}

/// Largest relative error between the analytic gradient of the mean binary
/// cross-entropy and central finite differences (step 1e-4), over every
/// parameter. Relative error is `|a - n| / max(|a| + |n|, 1e-5)`; the floor
/// keeps rounding noise on near-zero gradients from dominating.
pub fn gradient_check(state: &MlpState, batch: &Array2<f64>, labels: &[bool]) -> Result<f64> {
    state.check_dim(batch)?;
    if batch.nrows() != labels.len() {
        return Err(TrainError::Length(batch.nrows(), labels.len()));
    }
    const STEP: f64 = 1e-4;
    let targets = Targets::Binary(labels);
    let (_, grads) = state.loss_and_grad(batch, targets);
    let mut probe = state.clone();
    let mut worst: f64 = 0.0;
    for (l, g_layer) in grads.iter().enumerate() {
        let g_tensors: Vec<Vec<f64>> = g_layer.tensors().iter().map(|t| t.to_vec()).collect();
        for (t, g_tensor) in g_tensors.iter().enumerate() {
            for (i, &analytic) in g_tensor.iter().enumerate() {
                let orig = probe.layers[l].tensors()[t][i];
                probe.layers[l].tensors_mut()[t][i] = orig + STEP;
                let up = probe.loss(batch, targets);
                probe.layers[l].tensors_mut()[t][i] = orig - STEP;
                let down = probe.loss(batch, targets);
                probe.layers[l].tensors_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-5);
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}
