//! Stochastic wireless channel: Rician fading, path loss, receiver noise.
//!
//! dB-valued configuration is converted to linear ratios once, at the edge;
//! everything below works in linear units (watts, ratios).

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::propagation::PropagationOperators;
use crate::rng::{standard_normal_pair, stream, StreamLabel};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Distance-power law p(d) = c0 * d^-gamma, both factors linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    /// Linear power ratio at the 1 m reference distance.
    pub c0: f64,
    /// Path loss exponent.
    pub exponent: f64,
}

impl PathLossModel {
    pub fn from_db(c0_db: f64, exponent: f64) -> Self {
        PathLossModel { c0: db_to_linear(c0_db), exponent }
    }
}

/// Evaluate the path loss at distance `d` meters.
pub fn path_loss(model: &PathLossModel, d: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(SimError::config("distance", format!("path loss needs d > 0, got {d}")));
    }
    Ok(model.c0 * d.powf(-model.exponent))
}

/// One drawn channel between the output layer and the receive array.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Array2<Complex64>,
    /// Rician factor as a linear ratio.
    pub rician_k: f64,
    /// Linear path-loss power ratio.
    pub path_loss: f64,
    pub noise_power: f64,
    pub seed: u64,
}

/// Draw H = sqrt(K p/(1+K)) H_los + sqrt(p/(1+K)) H_nlos with i.i.d. unit-
/// variance circularly-symmetric Gaussian scatter entries.
pub fn draw_channel(
    ops: &PropagationOperators,
    rician_k_db: f64,
    path_loss: f64,
    noise_power: f64,
    seed: u64,
) -> Result<ChannelRealization> {
    if path_loss <= 0.0 {
        return Err(SimError::config("path_loss", format!("must be > 0, got {path_loss}")));
    }
    Ok(draw_channel_linear(ops, db_to_linear(rician_k_db), path_loss, noise_power, seed, 0))
}

/// Same draw with a linear Rician factor and an explicit substream index
/// (index 0 is the run's initial realization; per-epoch redraws pass the
/// epoch number).
pub fn draw_channel_linear(
    ops: &PropagationOperators,
    rician_k: f64,
    path_loss: f64,
    noise_power: f64,
    seed: u64,
    index: u64,
) -> ChannelRealization {
    let k = rician_k;
    let los_scale = (k * path_loss / (1.0 + k)).sqrt();
    let nlos_scale = (path_loss / (1.0 + k)).sqrt();
    let mut rng = stream(seed, StreamLabel::Channel, index);
    let h = ops.h_los.mapv(|los| {
        let (re, im) = standard_normal_pair(&mut rng);
        let scatter = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
        los_scale * los + nlos_scale * scatter
    });
    ChannelRealization { h, rician_k: k, path_loss, noise_power, seed }
}

/// Additive receiver noise for one sample, CN(0, noise_power * I).
///
/// The generator is keyed by `(seed, label, sample_index)`, so any worker can
/// reproduce sample `i`'s noise without drawing samples 0..i first.
pub fn draw_noise(
    rx_count: usize,
    noise_power: f64,
    seed: u64,
    label: StreamLabel,
    sample_index: u64,
) -> Array1<Complex64> {
    if noise_power == 0.0 {
        return Array1::zeros(rx_count);
    }
    let mut rng = stream(seed, label, sample_index);
    let sigma = (noise_power / 2.0).sqrt();
    Array1::from_iter((0..rx_count).map(|_| {
        let (re, im) = standard_normal_pair(&mut rng);
        Complex64::new(sigma * re, sigma * im)
    }))
}

/// Noise for a contiguous run of samples, as columns of an M x B matrix.
pub fn draw_noise_block(
    rx_count: usize,
    noise_power: f64,
    seed: u64,
    label: StreamLabel,
    first_sample: u64,
    count: usize,
) -> Array2<Complex64> {
    let mut block = Array2::zeros((rx_count, count));
    for b in 0..count {
        let v = draw_noise(rx_count, noise_power, seed, label, first_sample + b as u64);
        block.column_mut(b).assign(&v);
    }
    block
}

/// Redraw policy for the block-fading channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedrawPolicy {
    /// One realization for the whole run (the default).
    Fixed,
    /// A fresh realization at the start of every epoch.
    PerEpoch,
}
