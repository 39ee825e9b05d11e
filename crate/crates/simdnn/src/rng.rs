//! Seeded, labeled random streams.
//!
//! Every source of randomness in a run is derived from the global seed plus a
//! fixed label, so channel draws, weight init, dataset shuffles, and per-sample
//! noise are independent streams that do not perturb each other. Per-sample
//! substreams are keyed by a counter, which makes batch evaluation
//! order-independent: workers can draw "their" samples in any order and still
//! produce the values a sequential pass would.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose label for a derived stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamLabel {
    Channel,
    WeightsInit,
    Split,
    Shuffle,
    TrainNoise,
    ValNoise,
    TestNoise,
    Generic,
}

impl StreamLabel {
    fn salt(self) -> u64 {
        match self {
            StreamLabel::Channel => 0x6368_616e_6e65_6c00,
            StreamLabel::WeightsInit => 0x7765_6967_6874_7300,
            StreamLabel::Split => 0x7370_6c69_7400_0000,
            StreamLabel::Shuffle => 0x7368_7566_666c_6500,
            StreamLabel::TrainNoise => 0x7472_6e6f_6973_6500,
            StreamLabel::ValNoise => 0x7661_6c6e_6f69_7365,
            StreamLabel::TestNoise => 0x7473_746e_6f69_7365,
            StreamLabel::Generic => 0x6765_6e65_7269_6300,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic ChaCha stream keyed by (seed, label, index).
pub fn stream(seed: u64, label: StreamLabel, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ label.salt();
    let mut key = [0u8; 32];
    let a = splitmix64(&mut state);
    state ^= index;
    let b = splitmix64(&mut state);
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// One standard-normal pair via Box-Muller.
pub fn standard_normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    // gen::<f64>() is in [0, 1); flip to (0, 1] so the log is finite.
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}
