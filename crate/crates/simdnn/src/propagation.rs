//! Fixed complex propagation operators.
//!
//! Three operators are precomputed from geometry alone and never change during
//! training: the feed-to-input-layer coupling vector, the inter-layer
//! propagation matrix (identical for every layer gap because the lattices are
//! identical), and the deterministic line-of-sight channel from the output
//! layer to the receive array.
//!
//! The per-entry coupling follows the Rayleigh-Sommerfeld diffraction
//! coefficient
//!
//! ```text
//! w = (axial_gap * S_a / d^2) * (1/(2*pi*d) - j/lambda) * exp(j*2*pi*d/lambda)
//! ```
//!
//! with the phase argument in cycles of d/lambda, which keeps the expression
//! dimensionally consistent with the e^{-j*2*pi*d/lambda} convention of the
//! LOS channel.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::geometry::{distance, SimGeometry};

const TAU: f64 = std::f64::consts::TAU;

/// Rayleigh-Sommerfeld coupling between two points.
///
/// `axial_gap` is the perpendicular distance between the planes, `d` the full
/// propagation distance, `area` the meta-atom area.
pub fn diffraction_coefficient(
    axial_gap: f64,
    d: f64,
    area: f64,
    wavelength: f64,
) -> Result<Complex64> {
    if d == 0.0 {
        return Err(SimError::numeric("diffraction coefficient singular at d = 0"));
    }
    let magnitude = axial_gap * area / (d * d);
    let core = Complex64::new(1.0 / (TAU * d), -1.0 / wavelength);
    let phase = Complex64::from_polar(1.0, TAU * d / wavelength);
    Ok(magnitude * core * phase)
}

/// Feed antenna to input layer: entry `n` couples the feed to atom `n`.
pub fn build_input_vector(g: &SimGeometry) -> Array1<Complex64> {
    let feed = g.feed_position;
    Array1::from_iter((0..g.atoms_per_layer).map(|n| {
        let d = distance(feed, g.atom_position(0, n));
        diffraction_coefficient(g.feed_distance, d, g.atom_area, g.wavelength)
            .expect("feed distance is positive")
    }))
}

/// One layer-to-next-layer propagation matrix; entry (n, n*) couples atom n*
/// on the source layer to atom n on the destination layer.
pub fn build_interlayer_matrix(g: &SimGeometry) -> Array2<Complex64> {
    let n = g.atoms_per_layer;
    Array2::from_shape_fn((n, n), |(dst, src)| {
        let d = distance(g.atom_position(0, src), g.atom_position(1, dst));
        diffraction_coefficient(g.layer_spacing, d, g.atom_area, g.wavelength)
            .expect("layer spacing is positive")
    })
}

/// LOS channel: entry (m, n) = exp(-j*2*pi*d_{m,n}/lambda), unit magnitude.
pub fn build_los_channel(g: &SimGeometry) -> Array2<Complex64> {
    let n = g.atoms_per_layer;
    let out_layer = g.layer_count;
    Array2::from_shape_fn((g.rx_count, n), |(m, atom)| {
        let d = distance(g.rx_positions[m], g.atom_position(out_layer, atom));
        Complex64::from_polar(1.0, -TAU * d / g.wavelength)
    })
}

/// The precomputed operator set for one geometry.
///
/// All inter-layer gaps share one matrix because every lattice is identical;
/// [`PropagationOperators::layer`] hands out the shared reference `L` times.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperators {
    pub w0: Array1<Complex64>,
    interlayer: Array2<Complex64>,
    pub layer_count: usize,
    pub h_los: Array2<Complex64>,
}

impl PropagationOperators {
    pub fn build(g: &SimGeometry) -> Self {
        PropagationOperators {
            w0: build_input_vector(g),
            interlayer: build_interlayer_matrix(g),
            layer_count: g.layer_count,
            h_los: build_los_channel(g),
        }
    }

    /// Assemble operators directly, for synthetic studies and tests.
    pub fn from_parts(
        w0: Array1<Complex64>,
        interlayer: Array2<Complex64>,
        layer_count: usize,
        h_los: Array2<Complex64>,
    ) -> Self {
        assert_eq!(interlayer.nrows(), w0.len());
        assert_eq!(interlayer.ncols(), w0.len());
        assert_eq!(h_los.ncols(), w0.len());
        PropagationOperators { w0, interlayer, layer_count, h_los }
    }

    /// Propagation matrix from layer `l - 1` to layer `l`, l in 1..=layer_count.
    pub fn layer(&self, l: usize) -> &Array2<Complex64> {
        assert!(l >= 1 && l <= self.layer_count, "layer index {l} out of 1..={}", self.layer_count);
        &self.interlayer
    }

    /// All `L` propagation matrices in order.
    pub fn layers(&self) -> impl Iterator<Item = &Array2<Complex64>> {
        std::iter::repeat(&self.interlayer).take(self.layer_count)
    }

    pub fn atoms_per_layer(&self) -> usize {
        self.w0.len()
    }

    pub fn rx_count(&self) -> usize {
        self.h_los.nrows()
    }
}

// ---------------------------------------------------------------------------
// Operator cache file
// ---------------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 8] = b"SIMDNNOP";
const CACHE_VERSION: u32 = 1;

/// FNV-1a over a canonical little-endian encoding of the geometry scalars and
/// positions; any change invalidates cached operators.
pub fn geometry_hash(g: &SimGeometry) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for v in [
        g.wavelength,
        g.atom_spacing,
        g.atom_area,
        g.sim_thickness,
        g.layer_spacing,
        g.feed_distance,
        g.rx_spacing,
        g.sim_rx_distance,
    ] {
        eat(&v.to_le_bytes());
    }
    for v in [g.layer_count, g.rows, g.cols, g.rx_count] {
        eat(&(v as u64).to_le_bytes());
    }
    for [x, y] in &g.lattice {
        eat(&x.to_le_bytes());
        eat(&y.to_le_bytes());
    }
    for p in &g.rx_positions {
        for c in p {
            eat(&c.to_le_bytes());
        }
    }
    h
}

fn write_complex_slice<W: Write>(w: &mut W, data: &[Complex64]) -> std::io::Result<()> {
    for z in data {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_complex_vec<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<Complex64>> {
    let mut buf = vec![0u8; len * 16];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect())
}

/// Persist operators with a version tag and geometry hash.
pub fn save_operators(path: &Path, g: &SimGeometry, ops: &PropagationOperators) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&geometry_hash(g).to_le_bytes())?;
    let n = ops.atoms_per_layer() as u64;
    let m = ops.rx_count() as u64;
    let l = ops.layer_count as u64;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&m.to_le_bytes())?;
    w.write_all(&l.to_le_bytes())?;
    write_complex_slice(&mut w, ops.w0.as_slice().unwrap())?;
    write_complex_slice(&mut w, ops.interlayer.as_slice().unwrap())?;
    write_complex_slice(&mut w, ops.h_los.as_slice().unwrap())?;
    Ok(())
}

/// Load operators if the file matches this geometry; `Ok(None)` means the
/// cache is stale (or from another version) and should be rebuilt.
pub fn load_operators(path: &Path, g: &SimGeometry) -> Result<Option<PropagationOperators>> {
    let mut r = match std::fs::File::open(path) {
        Ok(f) => std::io::BufReader::new(f),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(SimError::parse("operator cache: bad magic", 0));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != CACHE_VERSION {
        return Ok(None);
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    if u64::from_le_bytes(u64buf) != geometry_hash(g) {
        return Ok(None);
    }
    r.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let m = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u64buf)?;
    let l = u64::from_le_bytes(u64buf) as usize;
    if n != g.atoms_per_layer || m != g.rx_count || l != g.layer_count {
        return Ok(None);
    }
    let w0 = Array1::from_vec(read_complex_vec(&mut r, n)?);
    let interlayer = Array2::from_shape_vec((n, n), read_complex_vec(&mut r, n * n)?)
        .map_err(|e| SimError::parse(format!("operator cache: {e}"), 28))?;
    let h_los = Array2::from_shape_vec((m, n), read_complex_vec(&mut r, m * n)?)
        .map_err(|e| SimError::parse(format!("operator cache: {e}"), 28))?;
    Ok(Some(PropagationOperators { w0, interlayer, layer_count: l, h_los }))
}
