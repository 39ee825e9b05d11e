//! Text container for trained weights.
//!
//! Line-oriented, self-describing, decimal with 17 significant digits so the
//! round trip is value-exact for f64:
//!
//! ```text
//! simdnn-weights v1
//! layers 7
//! rows 11
//! cols 11
//! a 0 <N values>
//! ...
//! p 0 <N values>
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Result, SimError};
use crate::wavemodel::SimWeights;

const HEADER: &str = "simdnn-weights v1";

pub fn save_weights(path: &Path, weights: &SimWeights, rows: usize, cols: usize) -> Result<()> {
    let layers = weights.layer_count();
    let n = weights.atoms_per_layer();
    if rows * cols != n {
        return Err(SimError::dimension(
            format!("{rows}x{cols} = {}", rows * cols),
            format!("{n}"),
            "save_weights lattice",
        ));
    }
    let mut text = String::new();
    writeln!(text, "{HEADER}").unwrap();
    writeln!(text, "layers {layers}").unwrap();
    writeln!(text, "rows {rows}").unwrap();
    writeln!(text, "cols {cols}").unwrap();
    let mut dump = |tag: &str, data: &Array2<f64>| {
        for l in 0..layers {
            write!(text, "{tag} {l}").unwrap();
            for v in data.row(l).iter() {
                write!(text, " {v:.16e}").unwrap();
            }
            text.push('\n');
        }
    };
    dump("a", &weights.amplitudes);
    dump("p", &weights.phases);
    std::fs::write(path, text)?;
    Ok(())
}

/// Dimensions stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightsHeader {
    pub layers: usize,
    pub rows: usize,
    pub cols: usize,
}

pub fn load_weights(path: &Path) -> Result<(SimWeights, WeightsHeader)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if first != HEADER {
        return Err(SimError::data(format!(
            "{}: not a weights file (header {first:?})",
            path.display()
        )));
    }
    let mut header_field = |name: &str| -> Result<usize> {
        let line = lines
            .next()
            .ok_or_else(|| SimError::data(format!("{}: missing {name}", path.display())))?;
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| SimError::data(format!("{}: malformed {name} line", path.display())))?;
        if key != name {
            return Err(SimError::data(format!(
                "{}: expected {name}, found {key}",
                path.display()
            )));
        }
        value
            .parse()
            .map_err(|_| SimError::data(format!("{}: bad {name} value {value:?}", path.display())))
    };
    let layers = header_field("layers")?;
    let rows = header_field("rows")?;
    let cols = header_field("cols")?;
    let n = rows * cols;

    let mut amplitudes = Array2::zeros((layers, n));
    let mut phases = Array2::zeros((layers, n));
    let mut seen_a = vec![false; layers];
    let mut seen_p = vec![false; layers];
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        let layer: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SimError::data(format!("{}: bad layer index", path.display())))?;
        if layer >= layers {
            return Err(SimError::data(format!(
                "{}: layer {layer} out of range 0..{layers}",
                path.display()
            )));
        }
        let values: Vec<f64> = parts
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    SimError::data(format!("{}: unparseable value {s:?}", path.display()))
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != n {
            return Err(SimError::data(format!(
                "{}: layer {layer} has {} values, expected {n}",
                path.display(),
                values.len()
            )));
        }
        let (target, seen) = match tag {
            "a" => (&mut amplitudes, &mut seen_a),
            "p" => (&mut phases, &mut seen_p),
            other => {
                return Err(SimError::data(format!(
                    "{}: unknown row tag {other:?}",
                    path.display()
                )))
            }
        };
        for (slot, v) in target.row_mut(layer).iter_mut().zip(values) {
            *slot = v;
        }
        seen[layer] = true;
    }
    if seen_a.iter().any(|s| !s) || seen_p.iter().any(|s| !s) {
        return Err(SimError::data(format!("{}: missing layer rows", path.display())));
    }
    Ok((SimWeights { amplitudes, phases }, WeightsHeader { layers, rows, cols }))
}
