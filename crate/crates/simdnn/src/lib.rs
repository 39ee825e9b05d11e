//! Wave-domain diffractive neural network simulator.
//!
//! A stack of programmable metasurfaces in front of a single feed antenna
//! encodes an image (input layer) and steers the resulting field toward one of
//! M receive antennas (trainable layers); the receiver classifies by picking
//! the antenna with the most energy. This crate builds the propagation
//! operators from 3-D geometry, models the Rician fading link, and trains the
//! per-atom transmission coefficients with analytic gradients and Adam.

pub mod channel;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod propagation;
pub mod rng;
pub mod training;
pub mod wavemodel;
pub mod weights_io;

pub use error::{ErrorCategory, Result, SimError};

/// Cap the rayon worker pool from `SIMDNN_THREADS` (best effort; falls back to
/// the core count). Safe to call more than once.
pub fn init_threads_from_env() {
    if let Ok(value) = std::env::var("SIMDNN_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
