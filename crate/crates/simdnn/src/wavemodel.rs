//! Differentiable forward model: image in, per-antenna powers out.
//!
//! The transmissive stack applies, per layer, a diagonal of trainable
//! coefficients a * e^{j*phi} followed by fixed diffraction to the next layer.
//! The input layer is not trained; its diagonal is set from the image pixels.
//! Classification reads the receive antenna with the largest |y|^2.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::propagation::PropagationOperators;

/// Amplitudes live in [0, 1); this keeps the open bound representable.
pub const EPS_AMP: f64 = 1e-6;

/// Trainable per-layer transmission coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SimWeights {
    /// Shape (L, N); each entry in [0, 1) after projection.
    pub amplitudes: Array2<f64>,
    /// Shape (L, N); each entry in [0, 2*pi) after projection.
    pub phases: Array2<f64>,
}

impl SimWeights {
    pub fn layer_count(&self) -> usize {
        self.amplitudes.nrows()
    }

    pub fn atoms_per_layer(&self) -> usize {
        self.amplitudes.ncols()
    }

    /// z^l_n = a^l_n * e^{j*phi^l_n} for one layer.
    pub fn layer_coefficients(&self, l: usize) -> Array1<Complex64> {
        Array1::from_iter(
            self.amplitudes
                .row(l)
                .iter()
                .zip(self.phases.row(l).iter())
                .map(|(&a, &p)| Complex64::from_polar(a, p)),
        )
    }

    pub fn bounds_hold(&self) -> bool {
        self.amplitudes.iter().all(|&a| (0.0..1.0).contains(&a))
            && self.phases.iter().all(|&p| (0.0..std::f64::consts::TAU).contains(&p))
    }
}

/// Input-layer diagonal derived from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSource {
    pub z0: Array1<Complex64>,
}

/// Map pixels onto the input layer, row-major, clamped below the open bound.
pub fn encode_source(image: &Array2<f64>, rows: usize, cols: usize) -> Result<EncodedSource> {
    if image.nrows() != rows || image.ncols() != cols {
        return Err(SimError::dimension(
            format!("{rows}x{cols}"),
            format!("{}x{}", image.nrows(), image.ncols()),
            "encode_source",
        ));
    }
    let z0 = Array1::from_iter(
        image.iter().map(|&p| Complex64::new(p.min(1.0 - EPS_AMP), 0.0)),
    );
    Ok(EncodedSource { z0 })
}

/// Per-layer intermediates kept for backpropagation.
pub struct ForwardCache {
    /// t^l = W^l x^{l-1} for l = 1..=L, as N x B blocks.
    pub propagated: Vec<Array2<Complex64>>,
    /// x^L, the field leaving the output layer, N x B.
    pub output: Array2<Complex64>,
}

/// Batched layer-by-layer evaluation over images packed as columns.
///
/// Returns the output field x^L; with `keep_cache` the per-layer inputs are
/// retained so a backward pass can run without recomputation.
pub fn forward_block(
    weights: &SimWeights,
    ops: &PropagationOperators,
    z0_block: &Array2<Complex64>,
    p_t: f64,
    carrier: Complex64,
    keep_cache: bool,
) -> Result<ForwardCache> {
    let n = ops.atoms_per_layer();
    if z0_block.nrows() != n {
        return Err(SimError::dimension(
            format!("{n} rows"),
            format!("{} rows", z0_block.nrows()),
            "forward_block",
        ));
    }
    if weights.atoms_per_layer() != n {
        return Err(SimError::dimension(
            format!("{n} atoms"),
            format!("{} atoms", weights.atoms_per_layer()),
            "forward_block weights",
        ));
    }
    debug_assert!((carrier.norm() - 1.0).abs() < 1e-9, "carrier must be unit modulus");

    let amp = p_t.sqrt() * carrier;
    // x^0 = sqrt(p_t) * s * Z^0 w^0, one column per image
    let mut x = z0_block.clone();
    for (mut col, _) in x.axis_iter_mut(ndarray::Axis(1)).zip(0..) {
        col.zip_mut_with(&ops.w0, |v, w| *v = amp * *v * *w);
    }

    let layer_count = weights.layer_count();
    let mut propagated = Vec::with_capacity(if keep_cache { layer_count } else { 0 });
    for l in 0..layer_count {
        let t = ops.layer(l + 1).dot(&x);
        let z = weights.layer_coefficients(l);
        let mut next = t.clone();
        for (mut row, zn) in next.outer_iter_mut().zip(z.iter()) {
            row.map_inplace(|v| *v *= zn);
        }
        if keep_cache {
            propagated.push(t);
        }
        x = next;
    }
    Ok(ForwardCache { propagated, output: x })
}

/// Single-image wrapper: x_tilde for one encoded source.
pub fn forward(
    weights: &SimWeights,
    ops: &PropagationOperators,
    src: &EncodedSource,
    p_t: f64,
    carrier: Complex64,
) -> Result<Array1<Complex64>> {
    let block = src
        .z0
        .view()
        .into_shape_with_order((src.z0.len(), 1))
        .expect("column reshape");
    let cache = forward_block(weights, ops, &block.to_owned(), p_t, carrier, false)?;
    Ok(cache.output.column(0).to_owned())
}

/// The signal at the receive array for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSample {
    pub y: Array1<Complex64>,
    pub powers: Vec<f64>,
    /// 1-based antenna index with the maximum power (lowest index on ties).
    pub predicted: usize,
}

/// y = H x_tilde + v, plus powers and the decoded antenna.
pub fn receive(
    x_tilde: &Array1<Complex64>,
    h: &Array2<Complex64>,
    noise: &Array1<Complex64>,
) -> Result<ReceivedSample> {
    if h.ncols() != x_tilde.len() {
        return Err(SimError::dimension(
            format!("{} cols", x_tilde.len()),
            format!("{} cols", h.ncols()),
            "receive channel",
        ));
    }
    if h.nrows() != noise.len() {
        return Err(SimError::dimension(
            format!("{} rows", h.nrows()),
            format!("len {}", noise.len()),
            "receive noise",
        ));
    }
    let y = h.dot(x_tilde) + noise;
    let powers: Vec<f64> = y.iter().map(|z| z.norm_sqr()).collect();
    let predicted = classify(&powers)?;
    Ok(ReceivedSample { y, powers, predicted })
}

/// Index (1-based) of the antenna with maximum energy; ties break low.
pub fn classify(powers: &[f64]) -> Result<usize> {
    if powers.is_empty() {
        return Err(SimError::dimension("M >= 1", "empty power vector", "classify"));
    }
    let mut best = 0usize;
    for (m, &p) in powers.iter().enumerate() {
        if p > powers[best] {
            best = m;
        }
    }
    Ok(best + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometryConfig};
    use crate::rng::{standard_normal_pair, stream, StreamLabel};
    use ndarray::Array2;
    use rand::Rng;

    const ONE: Complex64 = Complex64::new(1.0, 0.0);

    fn tiny_ops(rows: usize, layers: usize, m: usize) -> PropagationOperators {
        let lambda = 10.7e-3;
        let g = build_geometry(&GeometryConfig {
            wavelength: lambda,
            layer_count: layers,
            rows,
            cols: rows,
            atom_spacing: lambda,
            atom_area: None,
            sim_thickness: 10.0 * lambda,
            feed_distance: 10.0 * lambda / layers as f64,
            rx_count: m,
            rx_spacing: lambda / 2.0,
            sim_rx_distance: 1.0,
        })
        .unwrap();
        PropagationOperators::build(&g)
    }

    fn random_weights(layers: usize, n: usize, seed: u64) -> SimWeights {
        let mut rng = stream(seed, StreamLabel::WeightsInit, 0);
        SimWeights {
            amplitudes: Array2::from_shape_fn((layers, n), |_| rng.gen::<f64>()),
            phases: Array2::from_shape_fn((layers, n), |_| {
                rng.gen::<f64>() * std::f64::consts::TAU
            }),
        }
    }

    /// Dense-product oracle: explicitly form B = Z^L W^L ... Z^1 W^1 and
    /// multiply once, instead of evaluating layer by layer.
    fn dense_forward(
        weights: &SimWeights,
        ops: &PropagationOperators,
        z0: &Array1<Complex64>,
        p_t: f64,
        carrier: Complex64,
    ) -> Array1<Complex64> {
        let n = ops.atoms_per_layer();
        let mut b = Array2::<Complex64>::eye(n);
        for l in 1..=weights.layer_count() {
            let w = ops.layer(l);
            let zw = {
                let mut zw = w.dot(&b);
                let z = weights.layer_coefficients(l - 1);
                for (mut row, zn) in zw.outer_iter_mut().zip(z.iter()) {
                    row.map_inplace(|v| *v *= zn);
                }
                zw
            };
            b = zw;
        }
        let x: Array1<Complex64> = z0
            .iter()
            .zip(ops.w0.iter())
            .map(|(z, w)| p_t.sqrt() * carrier * z * w)
            .collect();
        b.dot(&x)
    }

    #[test]
    fn encode_clamps_and_flattens_row_major() {
        let mut img = Array2::zeros((2, 3));
        img[[0, 0]] = 0.25;
        img[[0, 2]] = 1.0;
        img[[1, 1]] = 128.0 / 255.0;
        let src = encode_source(&img, 2, 3).unwrap();
        assert_eq!(src.z0.len(), 6);
        assert_eq!(src.z0[0], Complex64::new(0.25, 0.0));
        assert_eq!(src.z0[2], Complex64::new(1.0 - EPS_AMP, 0.0));
        assert!((src.z0[4].re - 0.5019607843137255).abs() < 1e-15);
        assert!(src.z0.iter().all(|z| z.im == 0.0 && z.re >= 0.0 && z.re < 1.0));
    }

    #[test]
    fn encode_rejects_shape_mismatch() {
        let img = Array2::zeros((3, 3));
        assert!(encode_source(&img, 2, 3).is_err());
    }

    #[test]
    fn all_zero_image_passes_nothing() {
        let ops = tiny_ops(3, 2, 4);
        let w = random_weights(2, 9, 1);
        let src = encode_source(&Array2::zeros((3, 3)), 3, 3).unwrap();
        let x = forward(&w, &ops, &src, 10.0, ONE).unwrap();
        assert!(x.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn opaque_stack_blocks_everything() {
        let ops = tiny_ops(3, 2, 4);
        let mut w = random_weights(2, 9, 2);
        w.amplitudes.fill(0.0);
        let src = encode_source(&Array2::from_elem((3, 3), 0.5), 3, 3).unwrap();
        let x = forward(&w, &ops, &src, 10.0, ONE).unwrap();
        assert!(x.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn quadrupling_power_doubles_magnitudes() {
        let ops = tiny_ops(3, 2, 4);
        let w = random_weights(2, 9, 3);
        let src = encode_source(&Array2::from_elem((3, 3), 0.5), 3, 3).unwrap();
        let x1 = forward(&w, &ops, &src, 1.0, ONE).unwrap();
        let x4 = forward(&w, &ops, &src, 4.0, ONE).unwrap();
        for (a, b) in x1.iter().zip(x4.iter()) {
            assert!((b.norm() - 2.0 * a.norm()).abs() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn layered_matches_dense_oracle() {
        let ops = tiny_ops(3, 3, 4);
        let mut rng = stream(99, StreamLabel::Generic, 0);
        for trial in 0..50 {
            let w = random_weights(3, 9, 100 + trial);
            let img = Array2::from_shape_fn((3, 3), |_| rng.gen::<f64>());
            let src = encode_source(&img, 3, 3).unwrap();
            let fast = forward(&w, &ops, &src, 10.0, ONE).unwrap();
            let slow = dense_forward(&w, &ops, &src.z0, 10.0, ONE);
            let scale = slow.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).norm() <= 1e-10 * scale, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_is_linear_in_source() {
        let ops = tiny_ops(3, 2, 4);
        let w = random_weights(2, 9, 5);
        let img = Array2::from_elem((3, 3), 0.4);
        let src = encode_source(&img, 3, 3).unwrap();
        let x1 = forward(&w, &ops, &src, 1.0, ONE).unwrap();
        // scale z0 by a complex constant directly
        let c = Complex64::new(0.3, -0.4);
        let scaled = EncodedSource { z0: src.z0.mapv(|z| c * z) };
        let x2 = forward(&w, &ops, &scaled, 1.0, ONE).unwrap();
        for (a, b) in x1.iter().zip(x2.iter()) {
            assert!((c * a - b).norm() <= 1e-12 * b.norm().max(1e-300));
        }
    }

    #[test]
    fn receive_computes_powers_and_argmax() {
        let h = Array2::from_shape_fn((3, 2), |(m, n)| {
            Complex64::new((m + n) as f64, 0.0)
        });
        let x = Array1::from_vec(vec![ONE, ONE]);
        let v = Array1::zeros(3);
        let r = receive(&x, &h, &v).unwrap();
        // rows sum: [1, 3, 5] -> powers [1, 9, 25] -> antenna 3
        assert_eq!(r.powers, vec![1.0, 9.0, 25.0]);
        assert_eq!(r.predicted, 3);
    }

    #[test]
    fn receive_zero_field_ties_to_first_antenna() {
        let h = Array2::from_elem((4, 2), ONE);
        let x = Array1::zeros(2);
        let v = Array1::zeros(4);
        let r = receive(&x, &h, &v).unwrap();
        assert!(r.powers.iter().all(|&p| p == 0.0));
        assert_eq!(r.predicted, 1);
    }

    #[test]
    fn receive_identity_passthrough_selects_unit_entry() {
        // H = [I | 0], x = e_k -> antenna k
        let m = 3;
        let n = 5;
        let h = Array2::from_shape_fn((m, n), |(i, j)| {
            if i == j { ONE } else { Complex64::new(0.0, 0.0) }
        });
        for k in 0..m {
            let mut x = Array1::zeros(n);
            x[k] = ONE;
            let r = receive(&x, &h, &Array1::zeros(m)).unwrap();
            assert_eq!(r.predicted, k + 1);
        }
    }

    #[test]
    fn classify_tie_breaks_low_and_scales_invariantly() {
        assert_eq!(classify(&[5.0, 5.0, 1.0]).unwrap(), 1);
        assert_eq!(classify(&[0.1, 0.9, 0.3]).unwrap(), 2);
        assert_eq!(classify(&[7.0]).unwrap(), 1);
        assert!(classify(&[]).is_err());
        let p = [0.2, 0.7, 0.1, 0.65];
        let base = classify(&p).unwrap();
        for c in [1e-9, 3.0, 1e12] {
            let scaled: Vec<f64> = p.iter().map(|x| c * x).collect();
            assert_eq!(classify(&scaled).unwrap(), base);
        }
        // strictly increasing transform
        let mapped: Vec<f64> = p.iter().map(|x| x.exp()).collect();
        assert_eq!(classify(&mapped).unwrap(), base);
    }

    #[test]
    fn noise_free_pipeline_is_deterministic() {
        let ops = tiny_ops(3, 2, 4);
        let w = random_weights(2, 9, 8);
        let img = Array2::from_elem((3, 3), 0.3);
        let src = encode_source(&img, 3, 3).unwrap();
        let mut rng = stream(4, StreamLabel::Generic, 0);
        let h = Array2::from_shape_fn((4, 9), |_| {
            let (re, im) = standard_normal_pair(&mut rng);
            Complex64::new(re, im)
        });
        let v = Array1::zeros(4);
        let a = receive(&forward(&w, &ops, &src, 10.0, ONE).unwrap(), &h, &v).unwrap();
        let b = receive(&forward(&w, &ops, &src, 10.0, ONE).unwrap(), &h, &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_block_matches_per_image_forward() {
        let ops = tiny_ops(3, 3, 4);
        let w = random_weights(3, 9, 13);
        let mut rng = stream(14, StreamLabel::Generic, 0);
        let imgs: Vec<Array2<f64>> = (0..5)
            .map(|_| Array2::from_shape_fn((3, 3), |_| rng.gen::<f64>()))
            .collect();
        let mut block = Array2::zeros((9, imgs.len()));
        for (b, img) in imgs.iter().enumerate() {
            let src = encode_source(img, 3, 3).unwrap();
            block.column_mut(b).assign(&src.z0);
        }
        let batched = forward_block(&w, &ops, &block, 10.0, ONE, false).unwrap();
        for (b, img) in imgs.iter().enumerate() {
            let src = encode_source(img, 3, 3).unwrap();
            let single = forward(&w, &ops, &src, 10.0, ONE).unwrap();
            for (x, y) in batched.output.column(b).iter().zip(single.iter()) {
                assert!((x - y).norm() <= 1e-12 * y.norm().max(1e-300));
            }
        }
    }
}
