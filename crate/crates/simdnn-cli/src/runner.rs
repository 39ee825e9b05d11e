//! Command implementations: train, eval, energy, sweep.
//!
//! Every command resolves a configuration, builds geometry and operators,
//! draws the run's channel from the seed, and writes plot-ready files into the
//! output directory. Randomness is always derived from the run seed, so a
//! command is reproducible from its resolved config alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use simdnn::channel::{self, ChannelRealization, PathLossModel};
use simdnn::dataio;
use simdnn::error::{Result, SimError};
use simdnn::geometry::build_geometry;
use simdnn::propagation::PropagationOperators;
use simdnn::rng::StreamLabel;
use simdnn::training::{
    self, EncodedSet, EvalReport, PreparedDataset, TrainOutcome,
};
use simdnn::wavemodel::{classify, SimWeights, EPS_AMP};
use simdnn::weights_io;

use crate::config::RunConfig;

/// Which split an index-based command addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitChoice {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitChoice::Train),
            "val" => Ok(SplitChoice::Val),
            "test" => Ok(SplitChoice::Test),
            other => Err(SimError::config(
                "split",
                format!("expected train, val, or test, got {other:?}"),
            )),
        }
    }
}

/// Load both IDX pairs, filter to the configured classes, preprocess to the
/// lattice size, and pack each split as pixel columns.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<PreparedDataset> {
    let train_set = dataio::load_image_set(&cfg.images_path, &cfg.labels_path)?;
    let test_set = dataio::load_image_set(&cfg.test_images_path, &cfg.test_labels_path)?;
    let splits = dataio::make_splits(&train_set, &test_set, &cfg.classes, cfg.seed)?;

    let class_index = |label: u8| -> usize {
        cfg.classes.iter().position(|&c| c == label).expect("filtered label")
    };
    let n = cfg.rows * cfg.cols;
    let preprocess = |img: &Array2<f64>| -> Result<Vec<f64>> {
        let sized = if cfg.crop {
            dataio::center_crop(img, cfg.crop_size)?
        } else {
            dataio::bilinear_resize(img, cfg.rows, cfg.cols)?
        };
        Ok(sized.iter().map(|&p| p.min(1.0 - EPS_AMP)).collect())
    };
    let encode = |set: &dataio::LabeledImageSet, indices: &[usize]| -> Result<EncodedSet> {
        let mut pixels = Array2::zeros((n, indices.len()));
        let mut classes = Vec::with_capacity(indices.len());
        for (col, &i) in indices.iter().enumerate() {
            let flat = preprocess(&set.images[i])?;
            pixels
                .column_mut(col)
                .assign(&ndarray::Array1::from_vec(flat));
            classes.push(class_index(set.labels[i]));
        }
        Ok(EncodedSet { pixels, classes })
    };

    Ok(PreparedDataset {
        train: encode(&train_set, &splits.train)?,
        val: encode(&train_set, &splits.val)?,
        test: encode(&test_set, &splits.test)?,
        class_digits: cfg.classes.clone(),
    })
}

/// Geometry, operators, and channel realization for one run.
pub struct Scene {
    pub ops: PropagationOperators,
    pub channel: ChannelRealization,
}

pub fn build_scene(cfg: &RunConfig) -> Result<Scene> {
    let geometry = build_geometry(&cfg.geometry_config())?;
    let ops = PropagationOperators::build(&geometry);
    let loss_model = PathLossModel::from_db(cfg.c0_db, cfg.gamma);
    let p = channel::path_loss(&loss_model, cfg.sim_rx_distance)?;
    let channel = channel::draw_channel(
        &ops,
        cfg.rician_k_db,
        p,
        cfg.noise_power_watts(),
        cfg.seed,
    )?;
    Ok(Scene { ops, channel })
}

fn format_report(report: &EvalReport, class_digits: &[u8], heading: &str) -> String {
    let mut s = String::new();
    writeln!(s, "{heading}").unwrap();
    writeln!(s, "samples: {}", report.count).unwrap();
    writeln!(s, "accuracy: {:.8e}", report.accuracy).unwrap();
    writeln!(s, "per-class accuracy:").unwrap();
    for (i, acc) in report.per_class_accuracy.iter().enumerate() {
        writeln!(s, "  digit {}: {:.8e}", class_digits[i], acc).unwrap();
    }
    writeln!(s, "confusion matrix (rows true, cols predicted):").unwrap();
    write!(s, "true\\pred").unwrap();
    for &d in class_digits {
        write!(s, " {d:>6}").unwrap();
    }
    s.push('\n');
    for (i, row) in report.confusion.rows().into_iter().enumerate() {
        write!(s, "{:>9}", class_digits[i]).unwrap();
        for v in row.iter() {
            write!(s, " {v:>6}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn write_confusion_csv(path: &Path, report: &EvalReport, class_digits: &[u8]) -> Result<()> {
    let mut s = String::from("true_digit,predicted_digit,count\n");
    for (i, row) in report.confusion.rows().into_iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            writeln!(s, "{},{},{}", class_digits[i], class_digits[j], count).unwrap();
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Artifacts produced by a training run.
#[derive(Debug)]
pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub test_report: EvalReport,
    pub weights_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Train end to end: writes weights, metrics history, test report, and the
/// resolved config into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.resolved"), cfg.to_resolved_text())?;

    let data = prepare_dataset(cfg)?;
    let scene = build_scene(cfg)?;
    let train_cfg = cfg.train_config();

    let total_epochs = train_cfg.epochs;
    let mut outcome = training::train_with_progress(
        &data,
        &scene.ops,
        &scene.channel,
        &train_cfg,
        |record| {
            eprintln!(
                "epoch {}/{total_epochs}: train loss {:.6}, val accuracy {:.4}, lr {:.3e}",
                record.epoch, record.mean_train_loss, record.val_accuracy, record.lr
            );
        },
    )?;

    let test_report = training::evaluate(
        &outcome.weights,
        &data.test,
        &scene.ops,
        &scene.channel,
        train_cfg.tx_power,
        cfg.seed,
        StreamLabel::TestNoise,
        0,
    )?;
    if let Some(last) = outcome.history.last_mut() {
        last.test_accuracy = Some(test_report.accuracy);
    }

    let weights_path = cfg.output_dir.join("weights.txt");
    weights_io::save_weights(&weights_path, &outcome.weights, cfg.rows, cfg.cols)?;
    let metrics_path = cfg.output_dir.join("metrics.csv");
    training::write_metrics_csv(&metrics_path, &outcome.history)?;

    let mut report = format_report(&test_report, &data.class_digits, "test report");
    writeln!(report, "best_epoch: {}", outcome.best_epoch).unwrap();
    if outcome.best_val_accuracy.is_finite() {
        writeln!(report, "best_val_accuracy: {:.8e}", outcome.best_val_accuracy).unwrap();
    }
    std::fs::write(cfg.output_dir.join("report.txt"), report)?;
    write_confusion_csv(&cfg.output_dir.join("confusion.csv"), &test_report, &data.class_digits)?;

    Ok(TrainArtifacts { outcome, test_report, weights_path, metrics_path })
}

fn load_weights_checked(path: &Path, cfg: &RunConfig) -> Result<SimWeights> {
    let (weights, header) = weights_io::load_weights(path)?;
    if header.layers != cfg.layers || header.rows != cfg.rows || header.cols != cfg.cols {
        return Err(SimError::dimension(
            format!("{} layers, {}x{} lattice", cfg.layers, cfg.rows, cfg.cols),
            format!("{} layers, {}x{} lattice", header.layers, header.rows, header.cols),
            "weights file vs geometry",
        ));
    }
    Ok(weights)
}

/// Evaluate stored weights on the test split and write the report.
pub fn cmd_eval(weights_path: &Path, cfg: &RunConfig) -> Result<EvalReport> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let weights = load_weights_checked(weights_path, cfg)?;
    let data = prepare_dataset(cfg)?;
    let scene = build_scene(cfg)?;
    let report = training::evaluate(
        &weights,
        &data.test,
        &scene.ops,
        &scene.channel,
        simdnn::channel::dbm_to_watts(cfg.tx_power_dbm),
        cfg.seed,
        StreamLabel::TestNoise,
        0,
    )?;
    std::fs::write(
        cfg.output_dir.join("eval_report.txt"),
        format_report(&report, &data.class_digits, "eval report"),
    )?;
    write_confusion_csv(&cfg.output_dir.join("eval_confusion.csv"), &report, &data.class_digits)?;
    Ok(report)
}

/// Per-antenna energy record for one image, for bar-chart plotting.
pub fn cmd_energy(
    weights_path: &Path,
    cfg: &RunConfig,
    split: SplitChoice,
    index: usize,
) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let weights = load_weights_checked(weights_path, cfg)?;
    let data = prepare_dataset(cfg)?;
    let scene = build_scene(cfg)?;
    let (set, label) = match split {
        SplitChoice::Train => (&data.train, StreamLabel::TrainNoise),
        SplitChoice::Val => (&data.val, StreamLabel::ValNoise),
        SplitChoice::Test => (&data.test, StreamLabel::TestNoise),
    };
    if index >= set.len() {
        return Err(SimError::data(format!(
            "image index {index} out of range for split of {}",
            set.len()
        )));
    }

    let z0 = set
        .pixels
        .column(index)
        .mapv(|p| num_complex::Complex64::new(p, 0.0))
        .into_shape_with_order((set.pixels.nrows(), 1))
        .expect("column reshape");
    let cache = simdnn::wavemodel::forward_block(
        &weights,
        &scene.ops,
        &z0,
        simdnn::channel::dbm_to_watts(cfg.tx_power_dbm),
        num_complex::Complex64::new(1.0, 0.0),
        false,
    )?;
    let noise = channel::draw_noise(
        cfg.rx_count,
        scene.channel.noise_power,
        cfg.seed,
        label,
        index as u64,
    );
    let y = scene.channel.h.dot(&cache.output.column(0)) + &noise;
    let powers: Vec<f64> = y.iter().map(|z| z.norm_sqr()).collect();
    let predicted = classify(&powers)?;
    let scaled = training::scale_powers(
        &powers,
        scene.channel.noise_power,
        cfg.power_scale_mode,
        cfg.softmax_temperature,
    );
    let probs = training::softmax(&scaled);
    let true_digit = data.class_digits[set.classes[index]];

    let mut s = String::from("antenna_index,power,probability,predicted,true_label\n");
    for m in 0..cfg.rx_count {
        writeln!(
            s,
            "{},{:.8e},{:.8e},{},{}",
            m + 1,
            powers[m],
            probs[m],
            predicted,
            true_digit
        )
        .unwrap();
    }
    let out = cfg
        .output_dir
        .join(format!("energy_{}_{}.csv", split_name(split), index));
    std::fs::write(&out, s)?;
    Ok(out)
}

fn split_name(split: SplitChoice) -> &'static str {
    match split {
        SplitChoice::Train => "train",
        SplitChoice::Val => "val",
        SplitChoice::Test => "test",
    }
}

/// A parameter that can be swept across training runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Layers,
    Atoms,
    RxDistance,
    RxCount,
}

impl std::str::FromStr for SweepParam {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(SweepParam::Layers),
            "N" => Ok(SweepParam::Atoms),
            "d_sr" => Ok(SweepParam::RxDistance),
            "M" => Ok(SweepParam::RxCount),
            other => Err(SimError::config(
                "sweep param",
                format!("expected one of L, N, d_sr, M; got {other:?}"),
            )),
        }
    }
}

/// One summary row per sweep value; failed runs are recorded, not fatal.
pub fn cmd_sweep(
    base: &crate::config::RawConfig,
    param: SweepParam,
    values: &[String],
) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(SimError::config("sweep values", "empty value list"));
    }
    let base_cfg = crate::config::resolve(base)?;
    std::fs::create_dir_all(&base_cfg.output_dir)?;

    let param_name = match param {
        SweepParam::Layers => "L",
        SweepParam::Atoms => "N",
        SweepParam::RxDistance => "d_sr",
        SweepParam::RxCount => "M",
    };
    let mut summary = String::from("param,value,test_accuracy,status\n");
    for (run_index, value) in values.iter().enumerate() {
        let mut raw = base.clone();
        match param {
            SweepParam::Layers => raw.set("geometry", "layers", value),
            SweepParam::Atoms => {
                let n: usize = value.parse().map_err(|_| {
                    SimError::config("sweep values", format!("bad atom count {value:?}"))
                })?;
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    return Err(SimError::config(
                        "sweep values",
                        format!("N = {n} is not a square lattice"),
                    ));
                }
                raw.set("geometry", "rows", &side.to_string());
                raw.set("geometry", "cols", &side.to_string());
            }
            SweepParam::RxDistance => raw.set("geometry", "sim_rx_distance_m", value),
            SweepParam::RxCount => {
                let m: usize = value.parse().map_err(|_| {
                    SimError::config("sweep values", format!("bad antenna count {value:?}"))
                })?;
                raw.set("geometry", "rx_count", &m.to_string());
                let classes: Vec<String> = (0..m).map(|c| c.to_string()).collect();
                raw.set("data", "classes", &classes.join(","));
            }
        }
        raw.set(
            "run",
            "output_dir",
            &base_cfg
                .output_dir
                .join(format!("sweep_{param_name}_{value}"))
                .display()
                .to_string(),
        );
        raw.set("run", "seed", &(base_cfg.seed + run_index as u64).to_string());

        let row = match crate::config::resolve(&raw).and_then(|cfg| cmd_train(&cfg)) {
            Ok(artifacts) => format!(
                "{param_name},{value},{:.8e},ok\n",
                artifacts.test_report.accuracy
            ),
            Err(e) => {
                eprintln!("sweep {param_name}={value} failed: {e}");
                format!("{param_name},{value},,failed\n")
            }
        };
        summary.push_str(&row);
    }
    let out = base_cfg.output_dir.join("sweep_summary.csv");
    std::fs::write(&out, &summary)?;
    Ok(out)
}
