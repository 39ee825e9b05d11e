//! 3-D layout of the metasurface stack, feed antenna, and receiving array.
//!
//! Frame convention: the boresight axis is +z, running from the feed through
//! the stack to the receiver. Each metasurface layer is a square lattice in an
//! x-y plane; layer `l` sits at axial offset `l * layer_spacing` with the input
//! layer at z = 0 and the feed at z = -feed_distance. The receiver is a uniform
//! linear array along x, centered on the axis, at `sim_rx_distance` beyond the
//! output layer.

use crate::error::{Result, SimError};

/// 3-D point in meters.
pub type Point3 = [f64; 3];

/// Euclidean distance between two points.
pub fn distance(p: Point3, q: Point3) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Scalar inputs for [`build_geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    pub wavelength: f64,
    pub layer_count: usize,
    pub rows: usize,
    pub cols: usize,
    pub atom_spacing: f64,
    /// Meta-atom area; defaults to `atom_spacing^2` when `None`.
    pub atom_area: Option<f64>,
    /// Total stack thickness D; layer spacing is D / layer_count.
    pub sim_thickness: f64,
    pub feed_distance: f64,
    pub rx_count: usize,
    pub rx_spacing: f64,
    pub sim_rx_distance: f64,
}

/// Immutable positions and spacings of everything in the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGeometry {
    pub wavelength: f64,
    pub layer_count: usize,
    pub rows: usize,
    pub cols: usize,
    pub atoms_per_layer: usize,
    pub atom_spacing: f64,
    pub atom_area: f64,
    pub sim_thickness: f64,
    pub layer_spacing: f64,
    pub feed_distance: f64,
    pub rx_count: usize,
    pub rx_spacing: f64,
    pub sim_rx_distance: f64,
    /// In-plane (x, y) of each atom, row-major over (row, col); identical for
    /// every layer. Layer `l` adds z = `l * layer_spacing`.
    pub lattice: Vec<[f64; 2]>,
    pub feed_position: Point3,
    pub rx_positions: Vec<Point3>,
}

impl SimGeometry {
    /// Position of atom `n` (row-major) on layer `l` (0 = input layer).
    pub fn atom_position(&self, layer: usize, n: usize) -> Point3 {
        let [x, y] = self.lattice[n];
        [x, y, layer as f64 * self.layer_spacing]
    }

    /// z coordinate of the output (last trainable) layer.
    pub fn output_layer_z(&self) -> f64 {
        self.layer_count as f64 * self.layer_spacing
    }
}

fn positive(value: f64, field: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(SimError::config(field, format!("must be positive and finite, got {value}")))
    }
}

/// Construct every position from scalar configuration.
pub fn build_geometry(cfg: &GeometryConfig) -> Result<SimGeometry> {
    if cfg.layer_count < 1 {
        return Err(SimError::config("layer_count", "must be >= 1"));
    }
    if cfg.rows * cfg.cols < 1 {
        return Err(SimError::config("rows*cols", "lattice must have at least one atom"));
    }
    if cfg.rx_count < 1 {
        return Err(SimError::config("rx_count", "must be >= 1"));
    }
    let wavelength = positive(cfg.wavelength, "wavelength")?;
    let atom_spacing = positive(cfg.atom_spacing, "atom_spacing")?;
    let sim_thickness = positive(cfg.sim_thickness, "sim_thickness")?;
    let feed_distance = positive(cfg.feed_distance, "feed_distance")?;
    let rx_spacing = positive(cfg.rx_spacing, "rx_spacing")?;
    let sim_rx_distance = positive(cfg.sim_rx_distance, "sim_rx_distance")?;
    let atom_area = match cfg.atom_area {
        Some(a) => positive(a, "atom_area")?,
        None => atom_spacing * atom_spacing,
    };

    let layer_spacing = sim_thickness / cfg.layer_count as f64;

    // Centered lattice: even counts land on half-spacing offsets. Row-major
    // with row 0 at the top (largest y), matching image pixel order.
    let mut lattice = Vec::with_capacity(cfg.rows * cfg.cols);
    for row in 0..cfg.rows {
        for col in 0..cfg.cols {
            let x = (col as f64 - (cfg.cols as f64 - 1.0) / 2.0) * atom_spacing;
            let y = ((cfg.rows as f64 - 1.0) / 2.0 - row as f64) * atom_spacing;
            lattice.push([x, y]);
        }
    }

    let output_z = cfg.layer_count as f64 * layer_spacing;
    let rx_positions = (0..cfg.rx_count)
        .map(|m| {
            [
                (m as f64 - (cfg.rx_count as f64 - 1.0) / 2.0) * rx_spacing,
                0.0,
                output_z + sim_rx_distance,
            ]
        })
        .collect();

    Ok(SimGeometry {
        wavelength,
        layer_count: cfg.layer_count,
        rows: cfg.rows,
        cols: cfg.cols,
        atoms_per_layer: cfg.rows * cfg.cols,
        atom_spacing,
        atom_area,
        sim_thickness,
        layer_spacing,
        feed_distance,
        rx_count: cfg.rx_count,
        rx_spacing,
        sim_rx_distance,
        lattice,
        feed_position: [0.0, 0.0, -feed_distance],
        rx_positions,
    })
}
