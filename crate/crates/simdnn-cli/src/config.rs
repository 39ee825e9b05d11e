//! Run configuration: a flat, sectioned key-value file.
//!
//! ```text
//! [geometry]
//! layers = 7
//! rows = 21
//! ...
//! ```
//!
//! Unknown sections or keys are hard errors; a misspelled physics parameter
//! silently falling back to a default would corrupt a reproduction. Absent
//! keys take defaults mirroring the reference operating point (28 GHz,
//! 10-wavelength stack, -35 dB reference path loss, 40 dBm transmit power,
//! -104 dBm noise, batch 64, 100 epochs).
//!
//! Sweeps re-resolve a mutated copy of the raw key-value map, so derived
//! defaults (layer spacing, feed distance) follow the swept parameter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use simdnn::channel::RedrawPolicy;
use simdnn::error::{Result, SimError};
use simdnn::geometry::GeometryConfig;
use simdnn::training::{PowerScaleMode, ProjectionMode, TrainConfig};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const SECTIONS: [&str; 5] = ["geometry", "channel", "training", "data", "run"];

/// Parsed but unresolved key-value pairs, keyed by (section, key).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                if !SECTIONS.contains(&name) {
                    return Err(SimError::config(
                        name,
                        format!("unknown section at line {}", lineno + 1),
                    ));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SimError::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got {line:?}"),
                )
            })?;
            let section = section.clone().ok_or_else(|| {
                SimError::config(
                    key.trim(),
                    format!("key outside any [section] at line {}", lineno + 1),
                )
            })?;
            entries.insert(
                (section, key.trim().to_string()),
                value.trim().to_string(),
            );
        }
        Ok(RawConfig { entries })
    }

    pub fn load(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config(path.display().to_string(), e.to_string()))?;
        RawConfig::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.entries
            .insert((section.to_string(), key.to_string()), value.to_string());
    }

    /// Apply a `section.key=value` override string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec.split_once('=').ok_or_else(|| {
            SimError::config("override", format!("expected section.key=value, got {spec:?}"))
        })?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| {
            SimError::config("override", format!("expected section.key=value, got {spec:?}"))
        })?;
        if !SECTIONS.contains(&section) {
            return Err(SimError::config(section, "unknown section in override"));
        }
        self.set(section, key, value.trim());
        Ok(())
    }
}

/// A taker that records which keys were consumed so leftovers can be rejected.
struct Taker<'a> {
    raw: &'a RawConfig,
    used: Vec<(String, String)>,
}

impl<'a> Taker<'a> {
    fn new(raw: &'a RawConfig) -> Self {
        Taker { raw, used: Vec::new() }
    }

    fn get(&mut self, section: &str, key: &str) -> Option<&'a str> {
        let id = (section.to_string(), key.to_string());
        let value = self.raw.entries.get(&id).map(String::as_str);
        if value.is_some() {
            self.used.push(id);
        }
        value
    }

    fn parse<T: std::str::FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| {
                SimError::config(format!("{section}.{key}"), format!("cannot parse {s:?}"))
            }),
        }
    }

    fn finish(self) -> Result<()> {
        for id in self.raw.entries.keys() {
            if !self.used.contains(id) {
                return Err(SimError::config(
                    format!("{}.{}", id.0, id.1),
                    "unknown key",
                ));
            }
        }
        Ok(())
    }
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub wavelength: f64,
    pub layers: usize,
    pub rows: usize,
    pub cols: usize,
    pub atom_spacing: f64,
    pub atom_area: f64,
    pub sim_thickness: f64,
    pub feed_distance: f64,
    pub rx_count: usize,
    pub rx_spacing: f64,
    pub sim_rx_distance: f64,

    pub rician_k_db: f64,
    pub c0_db: f64,
    pub gamma: f64,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub redraw_policy: RedrawPolicy,

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

    pub images_path: PathBuf,
    pub labels_path: PathBuf,
    pub test_images_path: PathBuf,
    pub test_labels_path: PathBuf,
    pub classes: Vec<u8>,
    pub crop: bool,
    pub crop_size: usize,

    pub output_dir: PathBuf,
    pub seed: u64,
}

pub fn resolve(raw: &RawConfig) -> Result<RunConfig> {
    let mut take = Taker::new(raw);

    // wavelength: explicit, from carrier frequency, or the 28 GHz value
    let wavelength_m = take.get("geometry", "wavelength_m").map(str::to_string);
    let frequency_ghz = take.get("geometry", "frequency_ghz").map(str::to_string);
    let wavelength = match (wavelength_m, frequency_ghz) {
        (Some(_), Some(_)) => {
            return Err(SimError::config(
                "geometry.wavelength_m",
                "set either wavelength_m or frequency_ghz, not both",
            ))
        }
        (Some(w), None) => w.parse::<f64>().map_err(|_| {
            SimError::config("geometry.wavelength_m", format!("cannot parse {w:?}"))
        })?,
        (None, Some(f)) => {
            let f: f64 = f.parse().map_err(|_| {
                SimError::config("geometry.frequency_ghz", format!("cannot parse {f:?}"))
            })?;
            if f <= 0.0 {
                return Err(SimError::config("geometry.frequency_ghz", "must be > 0"));
            }
            SPEED_OF_LIGHT / (f * 1e9)
        }
        (None, None) => 10.7e-3,
    };

    let layers = take.parse("geometry", "layers", 7usize)?;
    let rows = take.parse("geometry", "rows", 21usize)?;
    let cols = take.parse("geometry", "cols", 21usize)?;
    let atom_spacing = take.parse("geometry", "atom_spacing_m", wavelength)?;
    let atom_area = take.parse("geometry", "atom_area_m2", atom_spacing * atom_spacing)?;
    let sim_thickness = take.parse("geometry", "sim_thickness_m", 10.0 * wavelength)?;
    if layers == 0 {
        return Err(SimError::config("geometry.layers", "must be >= 1"));
    }
    let feed_distance =
        take.parse("geometry", "feed_distance_m", sim_thickness / layers as f64)?;
    let rx_count = take.parse("geometry", "rx_count", 8usize)?;
    let rx_spacing = take.parse("geometry", "rx_spacing_m", wavelength / 2.0)?;
    let sim_rx_distance = take.parse("geometry", "sim_rx_distance_m", 10.0f64)?;

    let rician_k_db = take.parse("channel", "rician_k_db", 3.0f64)?;
    let c0_db = take.parse("channel", "c0_db", -35.0f64)?;
    let gamma = take.parse("channel", "gamma", 2.8f64)?;
    let tx_power_dbm = take.parse("channel", "tx_power_dbm", 40.0f64)?;
    let noise_power_dbm = take.parse("channel", "noise_power_dbm", -104.0f64)?;
    let redraw_policy = match take.get("channel", "redraw_policy").unwrap_or("fixed") {
        "fixed" => RedrawPolicy::Fixed,
        "per_epoch" => RedrawPolicy::PerEpoch,
        other => {
            return Err(SimError::config(
                "channel.redraw_policy",
                format!("expected fixed or per_epoch, got {other:?}"),
            ))
        }
    };

    let learning_rate = take.parse("training", "learning_rate", 1e-3f64)?;
    let decay_factor = take.parse("training", "decay_factor", 0.8f64)?;
    let plateau_epochs = take.parse("training", "plateau_epochs", 5usize)?;
    let beta1 = take.parse("training", "beta1", 0.9f64)?;
    let beta2 = take.parse("training", "beta2", 0.999f64)?;
    let eps_adam = take.parse("training", "eps_adam", 1e-8f64)?;
    let batch_size = take.parse("training", "batch_size", 64usize)?;
    let epochs = take.parse("training", "epochs", 100usize)?;
    let power_scale_mode = match take.get("training", "power_scale_mode").unwrap_or("snr") {
        "snr" => PowerScaleMode::Snr,
        "raw" => PowerScaleMode::Raw,
        other => {
            return Err(SimError::config(
                "training.power_scale_mode",
                format!("expected snr or raw, got {other:?}"),
            ))
        }
    };
    let softmax_temperature = take.parse("training", "softmax_temperature", 1.0f64)?;
    let projection = match take.get("training", "projection").unwrap_or("minmax") {
        "minmax" => ProjectionMode::MinMax,
        "clamp_wrap" => ProjectionMode::ClampWrap,
        other => {
            return Err(SimError::config(
                "training.projection",
                format!("expected minmax or clamp_wrap, got {other:?}"),
            ))
        }
    };

    let images_path = PathBuf::from(
        take.get("data", "images_path")
            .unwrap_or("data/mnist/train-images-idx3-ubyte.gz"),
    );
    let labels_path = PathBuf::from(
        take.get("data", "labels_path")
            .unwrap_or("data/mnist/train-labels-idx1-ubyte.gz"),
    );
    let test_images_path = PathBuf::from(
        take.get("data", "test_images_path")
            .unwrap_or("data/mnist/t10k-images-idx3-ubyte.gz"),
    );
    let test_labels_path = PathBuf::from(
        take.get("data", "test_labels_path")
            .unwrap_or("data/mnist/t10k-labels-idx1-ubyte.gz"),
    );
    let classes: Vec<u8> = match take.get("data", "classes") {
        None => {
            if rx_count > 10 {
                return Err(SimError::config(
                    "geometry.rx_count",
                    "more than 10 antennas needs an explicit class list",
                ));
            }
            (0..rx_count as u8).collect()
        }
        Some(list) => {
            let mut classes = Vec::new();
            for part in list.split(',') {
                let c: u8 = part.trim().parse().map_err(|_| {
                    SimError::config("data.classes", format!("bad class {part:?}"))
                })?;
                if c > 9 {
                    return Err(SimError::config("data.classes", format!("class {c} > 9")));
                }
                if classes.contains(&c) {
                    return Err(SimError::config("data.classes", format!("class {c} repeated")));
                }
                classes.push(c);
            }
            classes.sort_unstable();
            classes
        }
    };
    if classes.len() != rx_count {
        return Err(SimError::config(
            "data.classes",
            format!("{} classes but {rx_count} receive antennas", classes.len()),
        ));
    }
    let crop = take.parse("data", "crop", true)?;
    let crop_size = take.parse("data", "crop_size", 21usize)?;
    if crop && (crop_size != rows || crop_size != cols) {
        return Err(SimError::config(
            "data.crop_size",
            format!("crop {crop_size} must match the {rows}x{cols} lattice"),
        ));
    }

    let output_dir = PathBuf::from(take.get("run", "output_dir").unwrap_or("out"));
    let seed = take.parse("run", "seed", 1u64)?;

    take.finish()?;
    Ok(RunConfig {
        wavelength,
        layers,
        rows,
        cols,
        atom_spacing,
        atom_area,
        sim_thickness,
        feed_distance,
        rx_count,
        rx_spacing,
        sim_rx_distance,
        rician_k_db,
        c0_db,
        gamma,
        tx_power_dbm,
        noise_power_dbm,
        redraw_policy,
        learning_rate,
        decay_factor,
        plateau_epochs,
        beta1,
        beta2,
        eps_adam,
        batch_size,
        epochs,
        power_scale_mode,
        softmax_temperature,
        projection,
        images_path,
        labels_path,
        test_images_path,
        test_labels_path,
        classes,
        crop,
        crop_size,
        output_dir,
        seed,
    })
}

impl RunConfig {
    pub fn geometry_config(&self) -> GeometryConfig {
        GeometryConfig {
            wavelength: self.wavelength,
            layer_count: self.layers,
            rows: self.rows,
            cols: self.cols,
            atom_spacing: self.atom_spacing,
            atom_area: Some(self.atom_area),
            sim_thickness: self.sim_thickness,
            feed_distance: self.feed_distance,
            rx_count: self.rx_count,
            rx_spacing: self.rx_spacing,
            sim_rx_distance: self.sim_rx_distance,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            decay_factor: self.decay_factor,
            plateau_epochs: self.plateau_epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_adam: self.eps_adam,
            batch_size: self.batch_size,
            epochs: self.epochs,
            power_scale_mode: self.power_scale_mode,
            softmax_temperature: self.softmax_temperature,
            projection: self.projection,
            tx_power: simdnn::channel::dbm_to_watts(self.tx_power_dbm),
            redraw_policy: self.redraw_policy,
            seed: self.seed,
        }
    }

    pub fn noise_power_watts(&self) -> f64 {
        simdnn::channel::dbm_to_watts(self.noise_power_dbm)
    }

    /// Emit every resolved key; parsing the result reproduces this config.
    pub fn to_resolved_text(&self) -> String {
        let mut s = String::new();
        let f = |v: f64| format!("{v:.16e}");
        writeln!(s, "[geometry]").unwrap();
        writeln!(s, "wavelength_m = {}", f(self.wavelength)).unwrap();
        writeln!(s, "layers = {}", self.layers).unwrap();
        writeln!(s, "rows = {}", self.rows).unwrap();
        writeln!(s, "cols = {}", self.cols).unwrap();
        writeln!(s, "atom_spacing_m = {}", f(self.atom_spacing)).unwrap();
        writeln!(s, "atom_area_m2 = {}", f(self.atom_area)).unwrap();
        writeln!(s, "sim_thickness_m = {}", f(self.sim_thickness)).unwrap();
        writeln!(s, "feed_distance_m = {}", f(self.feed_distance)).unwrap();
        writeln!(s, "rx_count = {}", self.rx_count).unwrap();
        writeln!(s, "rx_spacing_m = {}", f(self.rx_spacing)).unwrap();
        writeln!(s, "sim_rx_distance_m = {}", f(self.sim_rx_distance)).unwrap();
        writeln!(s, "\n[channel]").unwrap();
        writeln!(s, "rician_k_db = {}", f(self.rician_k_db)).unwrap();
        writeln!(s, "c0_db = {}", f(self.c0_db)).unwrap();
        writeln!(s, "gamma = {}", f(self.gamma)).unwrap();
        writeln!(s, "tx_power_dbm = {}", f(self.tx_power_dbm)).unwrap();
        writeln!(s, "noise_power_dbm = {}", f(self.noise_power_dbm)).unwrap();
        let policy = match self.redraw_policy {
            RedrawPolicy::Fixed => "fixed",
            RedrawPolicy::PerEpoch => "per_epoch",
        };
        writeln!(s, "redraw_policy = {policy}").unwrap();
        writeln!(s, "\n[training]").unwrap();
        writeln!(s, "learning_rate = {}", f(self.learning_rate)).unwrap();
        writeln!(s, "decay_factor = {}", f(self.decay_factor)).unwrap();
        writeln!(s, "plateau_epochs = {}", self.plateau_epochs).unwrap();
        writeln!(s, "beta1 = {}", f(self.beta1)).unwrap();
        writeln!(s, "beta2 = {}", f(self.beta2)).unwrap();
        writeln!(s, "eps_adam = {}", f(self.eps_adam)).unwrap();
        writeln!(s, "batch_size = {}", self.batch_size).unwrap();
        writeln!(s, "epochs = {}", self.epochs).unwrap();
        let mode = match self.power_scale_mode {
            PowerScaleMode::Snr => "snr",
            PowerScaleMode::Raw => "raw",
        };
        writeln!(s, "power_scale_mode = {mode}").unwrap();
        writeln!(s, "softmax_temperature = {}", f(self.softmax_temperature)).unwrap();
        let projection = match self.projection {
            ProjectionMode::MinMax => "minmax",
            ProjectionMode::ClampWrap => "clamp_wrap",
        };
        writeln!(s, "projection = {projection}").unwrap();
        writeln!(s, "\n[data]").unwrap();
        writeln!(s, "images_path = {}", self.images_path.display()).unwrap();
        writeln!(s, "labels_path = {}", self.labels_path.display()).unwrap();
        writeln!(s, "test_images_path = {}", self.test_images_path.display()).unwrap();
        writeln!(s, "test_labels_path = {}", self.test_labels_path.display()).unwrap();
        let classes: Vec<String> = self.classes.iter().map(|c| c.to_string()).collect();
        writeln!(s, "classes = {}", classes.join(",")).unwrap();
        writeln!(s, "crop = {}", self.crop).unwrap();
        writeln!(s, "crop_size = {}", self.crop_size).unwrap();
        writeln!(s, "\n[run]").unwrap();
        writeln!(s, "output_dir = {}", self.output_dir.display()).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        s
    }
}
