//! Loss, analytic gradients, optimizer, and the training loop.
//!
//! The gradient is computed in closed form by backpropagating through
//! softmax-cross-entropy, the power detector |y|^2 (conjugate-sensitivity
//! rule), the channel, and the layered forward chain. Per-image noise vectors
//! are drawn before the forward pass and held constant during
//! differentiation, so the gradient is finite-difference checkable.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::{ChannelRealization, RedrawPolicy};
use crate::error::{Result, SimError};
use crate::propagation::PropagationOperators;
use crate::rng::{stream, StreamLabel};
use crate::wavemodel::{forward_block, SimWeights, EPS_AMP};
use rand::seq::SliceRandom;
use rand::Rng;

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const TAU: f64 = std::f64::consts::TAU;
/// Fixed work-splitting granularity; independent of the thread count so
/// parallel and sequential execution reduce in the same order.
const GRAD_CHUNK: usize = 32;
const EVAL_CHUNK: usize = 256;

/// How received powers are conditioned before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerScaleMode {
    /// Divide |y|^2 by the noise power (SNR units).
    Snr,
    /// Use |y|^2 as-is.
    Raw,
}

/// Projection applied after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Per-layer min-max rescaling into the feasible ranges.
    MinMax,
    /// Clamp amplitudes, wrap phases modulo 2*pi.
    ClampWrap,
}

/// Hyperparameters and run controls for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub plateau_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub power_scale_mode: PowerScaleMode,
    pub softmax_temperature: f64,
    pub projection: ProjectionMode,
    pub tx_power: f64,
    pub redraw_policy: RedrawPolicy,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(SimError::config("learning_rate", "must be >= 0"));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < v && v < 1.0) {
                return Err(SimError::config(name, format!("must be in (0, 1), got {v}")));
            }
        }
        if !(self.eps_adam > 0.0) {
            return Err(SimError::config("eps_adam", "must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(SimError::config("batch_size", "must be >= 1"));
        }
        if !(self.softmax_temperature > 0.0) {
            return Err(SimError::config("softmax_temperature", "must be > 0"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(SimError::config("decay_factor", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Optimizer state across mini-batches.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub weights: SimWeights,
    pub m_amp: Array2<f64>,
    pub v_amp: Array2<f64>,
    pub m_phase: Array2<f64>,
    pub v_phase: Array2<f64>,
    /// Mini-batch iteration counter; increments by exactly one per update.
    pub t: u64,
    pub current_lr: f64,
    pub epochs_since_improvement: usize,
    pub best_loss: f64,
}

impl TrainState {
    pub fn new(weights: SimWeights, lr: f64) -> Self {
        let shape = weights.amplitudes.raw_dim();
        TrainState {
            weights,
            m_amp: Array2::zeros(shape),
            v_amp: Array2::zeros(shape),
            m_phase: Array2::zeros(shape),
            v_phase: Array2::zeros(shape),
            t: 0,
            current_lr: lr,
            epochs_since_improvement: 0,
            best_loss: f64::INFINITY,
        }
    }
}

/// Per-batch loss bookkeeping.
#[derive(Debug, Clone)]
pub struct LossRecord {
    pub per_image: Vec<f64>,
    pub total: f64,
    /// Softmax outputs, one column per image.
    pub probabilities: Array2<f64>,
}

/// Gradient of the batch total loss with respect to every amplitude and phase.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grad_amp: Array2<f64>,
    pub grad_phase: Array2<f64>,
    pub record: LossRecord,
}

/// One training sample with its pre-drawn noise.
#[derive(Debug, Clone)]
pub struct BatchSample {
    pub z0: Array1<Complex64>,
    /// 0-based class index (antenna = class + 1).
    pub class: usize,
    pub noise: Array1<Complex64>,
}

/// Condition powers for the softmax argument. Ranking is preserved for any
/// mode and temperature. A non-positive noise power (noise-free override)
/// degrades SNR mode to an unscaled divisor of one.
pub fn scale_powers(powers: &[f64], noise_power: f64, mode: PowerScaleMode, tau: f64) -> Vec<f64> {
    let divisor = match mode {
        PowerScaleMode::Snr if noise_power > 0.0 => noise_power * tau,
        PowerScaleMode::Snr => tau,
        PowerScaleMode::Raw => tau,
    };
    powers.iter().map(|p| p / divisor).collect()
}

/// Shift-stabilized softmax; output sums to one.
pub fn softmax(u: &[f64]) -> Vec<f64> {
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = u.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// -sum_m q_m log(y_m) for a one-hot q.
pub fn cross_entropy(probabilities: &[f64], one_hot: &[f64]) -> Result<f64> {
    if probabilities.len() != one_hot.len() {
        return Err(SimError::dimension(
            format!("len {}", probabilities.len()),
            format!("len {}", one_hot.len()),
            "cross_entropy",
        ));
    }
    let mut hot = None;
    for (i, &q) in one_hot.iter().enumerate() {
        if q == 1.0 {
            if hot.is_some() {
                return Err(SimError::config("one_hot_target", "multiple entries set"));
            }
            hot = Some(i);
        } else if q != 0.0 {
            return Err(SimError::config(
                "one_hot_target",
                format!("entry {i} is {q}, expected 0 or 1"),
            ));
        }
    }
    let hot = hot.ok_or_else(|| SimError::config("one_hot_target", "no entry set"))?;
    Ok(-probabilities[hot].max(1e-300).ln())
}

/// Uniform init: a ~ U[0,1), phi ~ U[0, 2*pi).
pub fn initialize_weights(layer_count: usize, atoms_per_layer: usize, seed: u64) -> SimWeights {
    let mut rng = stream(seed, StreamLabel::WeightsInit, 0);
    let amplitudes =
        Array2::from_shape_fn((layer_count, atoms_per_layer), |_| rng.gen::<f64>());
    let phases =
        Array2::from_shape_fn((layer_count, atoms_per_layer), |_| rng.gen::<f64>() * TAU);
    SimWeights { amplitudes, phases }
}

/// Project weights back to the feasible set.
pub fn project(weights: &mut SimWeights, mode: ProjectionMode) {
    match mode {
        ProjectionMode::MinMax => {
            for mut row in weights.amplitudes.rows_mut() {
                let (mn, mx) = min_max(row.iter().cloned());
                if mx == mn {
                    row.fill(0.5 * (1.0 - EPS_AMP));
                } else {
                    let span = mx - mn + EPS_AMP;
                    row.map_inplace(|a| *a = (*a - mn) / span);
                }
            }
            for mut row in weights.phases.rows_mut() {
                let (mn, mx) = min_max(row.iter().cloned());
                if mx == mn {
                    row.fill(std::f64::consts::PI * (1.0 - EPS_AMP));
                } else {
                    let span = mx - mn + EPS_AMP;
                    row.map_inplace(|p| *p = TAU * (*p - mn) / span);
                }
            }
        }
        ProjectionMode::ClampWrap => {
            weights.amplitudes.map_inplace(|a| *a = a.clamp(0.0, 1.0 - EPS_AMP));
            weights.phases.map_inplace(|p| *p = p.rem_euclid(TAU));
        }
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), v| (mn.min(v), mx.max(v)))
}

/// One Adam update over the concatenated (a, phi) parameters.
pub fn adam_step(
    state: &mut TrainState,
    grads: (&Array2<f64>, &Array2<f64>),
    cfg: &TrainConfig,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let lr = state.current_lr;
    let update = |params: &mut Array2<f64>,
                  m: &mut Array2<f64>,
                  v: &mut Array2<f64>,
                  g: &Array2<f64>| {
        ndarray::Zip::from(params).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps_adam);
        });
    };
    update(&mut state.weights.amplitudes, &mut state.m_amp, &mut state.v_amp, grads.0);
    update(&mut state.weights.phases, &mut state.m_phase, &mut state.v_phase, grads.1);
}

/// Exact gradient of the summed cross-entropy over a mini-batch.
///
/// Noise vectors are inputs and treated as constants; the input-layer diagonal
/// is never differentiated.
pub fn batch_gradient(
    samples: &[BatchSample],
    weights: &SimWeights,
    ops: &PropagationOperators,
    channel: &ChannelRealization,
    cfg: &TrainConfig,
) -> Result<BatchGradient> {
    if samples.is_empty() {
        return Err(SimError::config("batch", "empty mini-batch"));
    }
    let m = channel.h.nrows();
    for s in samples {
        if s.class >= m {
            return Err(SimError::config(
                "class",
                format!("class {} out of range for {m} antennas", s.class),
            ));
        }
    }
    // conj-transposed operators for the adjoint pass
    let h_adj = conj_transpose(&channel.h);
    let w_adj = conj_transpose(ops.layer(1));

    let chunks: Vec<&[BatchSample]> = samples.chunks(GRAD_CHUNK).collect();
    let partials: Vec<Result<ChunkOutput>> = chunks
        .par_iter()
        .map(|chunk| chunk_gradient(chunk, weights, ops, channel, cfg, &h_adj, &w_adj))
        .collect();

    let shape = weights.amplitudes.raw_dim();
    let mut grad_amp = Array2::zeros(shape);
    let mut grad_phase = Array2::zeros(shape);
    let mut per_image = Vec::with_capacity(samples.len());
    let mut probabilities = Array2::zeros((m, samples.len()));
    let mut total = 0.0;
    let mut col = 0usize;
    for partial in partials {
        let part = partial?;
        grad_amp += &part.grad_amp;
        grad_phase += &part.grad_phase;
        total += part.total;
        for (i, ce) in part.per_image.iter().enumerate() {
            per_image.push(*ce);
            probabilities.column_mut(col + i).assign(&part.probabilities.column(i));
        }
        col += part.per_image.len();
    }
    Ok(BatchGradient {
        grad_amp,
        grad_phase,
        record: LossRecord { per_image, total, probabilities },
    })
}

struct ChunkOutput {
    grad_amp: Array2<f64>,
    grad_phase: Array2<f64>,
    per_image: Vec<f64>,
    probabilities: Array2<f64>,
    total: f64,
}

fn conj_transpose(a: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = Array2::zeros((a.ncols(), a.nrows()));
    for ((i, j), v) in a.indexed_iter() {
        out[[j, i]] = v.conj();
    }
    out
}

fn chunk_gradient(
    samples: &[BatchSample],
    weights: &SimWeights,
    ops: &PropagationOperators,
    channel: &ChannelRealization,
    cfg: &TrainConfig,
    h_adj: &Array2<Complex64>,
    w_adj: &Array2<Complex64>,
) -> Result<ChunkOutput> {
    let n = ops.atoms_per_layer();
    let m = channel.h.nrows();
    let b = samples.len();
    let layer_count = weights.layer_count();

    let mut z0_block = Array2::zeros((n, b));
    let mut noise_block = Array2::zeros((m, b));
    for (i, s) in samples.iter().enumerate() {
        z0_block.column_mut(i).assign(&s.z0);
        noise_block.column_mut(i).assign(&s.noise);
    }

    let cache = forward_block(weights, ops, &z0_block, cfg.tx_power, ONE, true)?;
    for (l, t) in cache.propagated.iter().enumerate() {
        if t.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SimError::numeric(format!(
                "non-finite field after propagation into layer {}",
                l + 1
            )));
        }
    }

    let y = channel.h.dot(&cache.output) + &noise_block;
    let scale = match cfg.power_scale_mode {
        PowerScaleMode::Snr if channel.noise_power > 0.0 => {
            1.0 / (channel.noise_power * cfg.softmax_temperature)
        }
        _ => 1.0 / cfg.softmax_temperature,
    };

    let mut probabilities = Array2::zeros((m, b));
    let mut per_image = Vec::with_capacity(b);
    let mut total = 0.0;
    // dL/dU, real M x B
    let mut g_u = Array2::<f64>::zeros((m, b));
    for (i, s) in samples.iter().enumerate() {
        let powers: Vec<f64> = y.column(i).iter().map(|z| z.norm_sqr()).collect();
        let u: Vec<f64> = powers.iter().map(|p| p * scale).collect();
        let probs = softmax(&u);
        let ce = -probs[s.class].max(1e-300).ln();
        per_image.push(ce);
        total += ce;
        for (mm, &p) in probs.iter().enumerate() {
            probabilities[[mm, i]] = p;
            g_u[[mm, i]] = p - if mm == s.class { 1.0 } else { 0.0 };
        }
    }

    // Conjugate sensitivity at the antennas: dL/d(conj y) = scale * g_u * y.
    let mut s_y = y;
    ndarray::Zip::from(&mut s_y).and(&g_u).for_each(|sy, &g| *sy *= scale * g);
    // back through the channel, then the layers
    let mut s_x = h_adj.dot(&s_y);

    let shape = weights.amplitudes.raw_dim();
    let mut grad_amp = Array2::zeros(shape);
    let mut grad_phase = Array2::zeros(shape);
    for l in (0..layer_count).rev() {
        let t_block = &cache.propagated[l];
        let z = weights.layer_coefficients(l);
        for atom in 0..n {
            // r = sum_b t[n,b] * conj(s_x[n,b])
            let mut r = Complex64::new(0.0, 0.0);
            for (tv, sv) in t_block.row(atom).iter().zip(s_x.row(atom).iter()) {
                r += tv * sv.conj();
            }
            let phase = weights.phases[[l, atom]];
            grad_amp[[l, atom]] = 2.0 * (Complex64::from_polar(1.0, phase) * r).re;
            grad_phase[[l, atom]] = -2.0 * (z[atom] * r).im;
        }
        if l > 0 {
            // s_t = conj(z) .* s_x, then pull back through the propagation
            for (mut row, zn) in s_x.outer_iter_mut().zip(z.iter()) {
                let zc = zn.conj();
                row.map_inplace(|v| *v *= zc);
            }
            s_x = w_adj.dot(&s_x);
        }
    }
    if grad_amp.iter().any(|g| !g.is_finite()) || grad_phase.iter().any(|g| !g.is_finite()) {
        return Err(SimError::numeric("non-finite gradient".to_string()));
    }
    Ok(ChunkOutput { grad_amp, grad_phase, per_image, probabilities, total })
}

// ---------------------------------------------------------------------------
// Dataset containers
// ---------------------------------------------------------------------------

/// Images already mapped to input-layer coefficients, packed as columns.
#[derive(Debug, Clone)]
pub struct EncodedSet {
    /// N x count, each column one image's clamped pixel vector.
    pub pixels: Array2<f64>,
    /// 0-based class indices, one per column.
    pub classes: Vec<usize>,
}

impl EncodedSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    fn z0_column(&self, i: usize) -> Array1<Complex64> {
        self.pixels.column(i).mapv(|p| Complex64::new(p, 0.0))
    }
}

/// Train/val/test splits, encoded and class-indexed.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub train: EncodedSet,
    pub val: EncodedSet,
    pub test: EncodedSet,
    /// Digit value for each class index.
    pub class_digits: Vec<u8>,
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Accuracy plus confusion counts over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// confusion[i][j]: true class i, predicted class j.
    pub confusion: Array2<usize>,
    pub per_class_accuracy: Vec<f64>,
    pub count: usize,
}

/// Classify a split, drawing fresh per-sample noise from the given stream.
pub fn evaluate(
    weights: &SimWeights,
    set: &EncodedSet,
    ops: &PropagationOperators,
    channel: &ChannelRealization,
    tx_power: f64,
    noise_seed: u64,
    noise_label: StreamLabel,
    noise_index_base: u64,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(SimError::data("cannot evaluate an empty split"));
    }
    let m = channel.h.nrows();
    let n = ops.atoms_per_layer();
    let count = set.len();

    let starts: Vec<usize> = (0..count).step_by(EVAL_CHUNK).collect();
    let chunk_preds: Vec<Result<Vec<usize>>> = starts
        .par_iter()
        .map(|&start| {
            let stop = (start + EVAL_CHUNK).min(count);
            let width = stop - start;
            let mut z0_block = Array2::zeros((n, width));
            for (i, col) in (start..stop).enumerate() {
                z0_block
                    .column_mut(i)
                    .assign(&set.pixels.column(col).mapv(|p| Complex64::new(p, 0.0)));
            }
            let cache = forward_block(weights, ops, &z0_block, tx_power, ONE, false)?;
            let mut y = channel.h.dot(&cache.output);
            for (i, col) in (start..stop).enumerate() {
                let v = crate::channel::draw_noise(
                    m,
                    channel.noise_power,
                    noise_seed,
                    noise_label,
                    noise_index_base + col as u64,
                );
                let mut ycol = y.column_mut(i);
                ycol += &v;
            }
            let preds = (0..width)
                .map(|i| {
                    let powers: Vec<f64> = y.column(i).iter().map(|z| z.norm_sqr()).collect();
                    crate::wavemodel::classify(&powers).map(|antenna| antenna - 1)
                })
                .collect::<Result<Vec<usize>>>()?;
            Ok(preds)
        })
        .collect();

    let mut confusion = Array2::zeros((m, m));
    let mut correct = 0usize;
    let mut idx = 0usize;
    for preds in chunk_preds {
        for pred in preds? {
            let truth = set.classes[idx];
            confusion[[truth, pred]] += 1;
            if truth == pred {
                correct += 1;
            }
            idx += 1;
        }
    }
    let per_class_accuracy = (0..m)
        .map(|i| {
            let row_total: usize = confusion.row(i).sum();
            if row_total == 0 {
                0.0
            } else {
                confusion[[i, i]] as f64 / row_total as f64
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: correct as f64 / count as f64,
        confusion,
        per_class_accuracy,
        count,
    })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One row of the metrics history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub lr: f64,
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the best validation-accuracy epoch.
    pub weights: SimWeights,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Run the mini-batch training loop and return the best-validation weights.
pub fn train(
    data: &PreparedDataset,
    ops: &PropagationOperators,
    channel: &ChannelRealization,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(data, ops, channel, cfg, |_| {})
}

/// [`train`], invoking `on_epoch` after each epoch's record is final.
pub fn train_with_progress(
    data: &PreparedDataset,
    ops: &PropagationOperators,
    channel: &ChannelRealization,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = ops.atoms_per_layer();
    let layer_count = ops.layer_count;
    let n_train = data.train.len();
    if n_train == 0 {
        return Err(SimError::data("training split is empty"));
    }

    let mut state = TrainState::new(
        initialize_weights(layer_count, n, cfg.seed),
        cfg.learning_rate,
    );
    project(&mut state.weights, cfg.projection);

    let mut best_weights = state.weights.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut active_channel = channel.clone();

    for epoch in 0..cfg.epochs {
        if cfg.redraw_policy == RedrawPolicy::PerEpoch && epoch > 0 {
            active_channel = crate::channel::draw_channel_linear(
                ops,
                channel.rician_k,
                channel.path_loss,
                channel.noise_power,
                cfg.seed,
                epoch as u64,
            );
        }
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut stream(cfg.seed, StreamLabel::Shuffle, epoch as u64));

        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let first_sample = (epoch * n_train + batch_index * cfg.batch_size) as u64;
            let samples: Vec<BatchSample> = batch
                .iter()
                .enumerate()
                .map(|(i, &idx)| BatchSample {
                    z0: data.train.z0_column(idx),
                    class: data.train.classes[idx],
                    noise: crate::channel::draw_noise(
                        active_channel.h.nrows(),
                        active_channel.noise_power,
                        cfg.seed,
                        StreamLabel::TrainNoise,
                        first_sample + i as u64,
                    ),
                })
                .collect();
            let grad = batch_gradient(&samples, &state.weights, ops, &active_channel, cfg)?;
            epoch_loss += grad.record.total;
            adam_step(&mut state, (&grad.grad_amp, &grad.grad_phase), cfg);
            project(&mut state.weights, cfg.projection);
        }
        let mean_loss = epoch_loss / n_train as f64;

        let val = evaluate(
            &state.weights,
            &data.val,
            ops,
            &active_channel,
            cfg.tx_power,
            cfg.seed,
            StreamLabel::ValNoise,
            (epoch * data.val.len()) as u64,
        )?;
        if val.accuracy > best_val {
            best_val = val.accuracy;
            best_weights = state.weights.clone();
            best_epoch = epoch + 1;
        }

        // Learning-rate plateau: decay when the best epoch loss has not
        // improved by 1e-4 (relative) for `plateau_epochs` consecutive epochs.
        let improved = mean_loss < state.best_loss * (1.0 - 1e-4);
        if improved {
            state.best_loss = mean_loss;
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.plateau_epochs {
                state.current_lr *= cfg.decay_factor;
                state.epochs_since_improvement = 0;
            }
        }

        let record = EpochRecord {
            epoch: epoch + 1,
            mean_train_loss: mean_loss,
            val_accuracy: val.accuracy,
            test_accuracy: None,
            lr: state.current_lr,
        };
        on_epoch(&record);
        history.push(record);
    }

    if cfg.epochs == 0 {
        best_weights = state.weights;
        best_epoch = 0;
        best_val = f64::NAN;
    }
    Ok(TrainOutcome { weights: best_weights, best_epoch, best_val_accuracy: best_val, history })
}

/// Metrics history as CSV: header row, nine significant digits.
pub fn write_metrics_csv(path: &std::path::Path, history: &[EpochRecord]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,mean_train_loss,val_accuracy,test_accuracy,lr")?;
    for r in history {
        let test = r.test_accuracy.map(|t| format!("{t:.8e}")).unwrap_or_default();
        writeln!(
            f,
            "{},{:.8e},{:.8e},{},{:.8e}",
            r.epoch, r.mean_train_loss, r.val_accuracy, test, r.lr
        )?;
    }
    Ok(())
}
