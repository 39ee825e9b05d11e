//! MNIST IDX parsing, image preprocessing, and dataset splits.
//!
//! IDX containers are big-endian: a 4-byte magic (0x00000803 for images,
//! 0x00000801 for labels), one big-endian u32 per dimension, then the
//! unsigned-byte payload. Files may be gzip-compressed; the 0x1f 0x8b magic
//! selects transparent decompression.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{Result, SimError};
use crate::rng::{stream, StreamLabel};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images scaled to [0, 1] with their labels and source digests.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub images: Vec<Array2<f64>>,
    pub labels: Vec<u8>,
    /// FNV-1a digests of the raw files this set was parsed from.
    pub provenance: Vec<u64>,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(SimError::parse(
            format!("truncated header: need {end} bytes, have {}", bytes.len()),
            offset,
        ));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parse an IDX image payload into row-major matrices scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Array2<f64>>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(SimError::parse(
            format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
            0,
        ));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let pixel_count = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| SimError::parse("dimension product overflows", 4))?;
    let expected = 16 + pixel_count;
    if bytes.len() != expected {
        return Err(SimError::parse(
            format!("payload is {} bytes, header implies {expected}", bytes.len()),
            bytes.len().min(expected),
        ));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let img = Array2::from_shape_fn((rows, cols), |(r, c)| {
            bytes[start + r * cols + c] as f64 / 255.0
        });
        images.push(img);
    }
    Ok(images)
}

/// Parse an IDX label payload.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(SimError::parse(
            format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
            0,
        ));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(SimError::parse(
            format!("payload is {} bytes, header implies {expected}", bytes.len()),
            bytes.len().min(expected),
        ));
    }
    Ok(bytes[8..].to_vec())
}

/// Read a possibly gzip-compressed file into memory.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)
        .map_err(|e| SimError::data(format!("{}: {e}", path.display())))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| SimError::data(format!("{}: gzip: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Load a matched image/label file pair.
pub fn load_image_set(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    let image_bytes = read_maybe_gzip(images_path)?;
    let label_bytes = read_maybe_gzip(labels_path)?;
    let images = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if images.len() != labels.len() {
        return Err(SimError::data(format!(
            "{} images but {} labels ({} / {})",
            images.len(),
            labels.len(),
            images_path.display(),
            labels_path.display(),
        )));
    }
    Ok(LabeledImageSet {
        images,
        labels,
        provenance: vec![fnv1a(&image_bytes), fnv1a(&label_bytes)],
    })
}

/// Centered crop; the window starts at floor((in - size) / 2) on both axes.
pub fn center_crop(image: &Array2<f64>, size: usize) -> Result<Array2<f64>> {
    let (rows, cols) = (image.nrows(), image.ncols());
    if size > rows || size > cols {
        return Err(SimError::dimension(
            format!("crop {size} <= {rows}x{cols}"),
            format!("{size}"),
            "center_crop",
        ));
    }
    let r0 = (rows - size) / 2;
    let c0 = (cols - size) / 2;
    Ok(image.slice(ndarray::s![r0..r0 + size, c0..c0 + size]).to_owned())
}

/// Bilinear resize on the corner-aligned grid: source coordinate
/// `i * (in - 1) / (out - 1)`; an output axis of one sample takes the center.
pub fn bilinear_resize(image: &Array2<f64>, out_rows: usize, out_cols: usize) -> Result<Array2<f64>> {
    let (rows, cols) = (image.nrows(), image.ncols());
    if rows == 0 || cols == 0 {
        return Err(SimError::dimension("nonempty input", "0", "bilinear_resize"));
    }
    if out_rows == 0 || out_cols == 0 {
        return Err(SimError::dimension("nonzero output", "0", "bilinear_resize"));
    }
    let src_coord = |i: usize, out: usize, inn: usize| -> f64 {
        if out > 1 {
            i as f64 * (inn as f64 - 1.0) / (out as f64 - 1.0)
        } else {
            (inn as f64 - 1.0) / 2.0
        }
    };
    Ok(Array2::from_shape_fn((out_rows, out_cols), |(r, c)| {
        let y = src_coord(r, out_rows, rows);
        let x = src_coord(c, out_cols, cols);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(rows - 1);
        let x1 = (x0 + 1).min(cols - 1);
        let wy = y - y0 as f64;
        let wx = x - x0 as f64;
        image[[y0, x0]] * (1.0 - wy) * (1.0 - wx)
            + image[[y1, x0]] * wy * (1.0 - wx)
            + image[[y0, x1]] * (1.0 - wy) * wx
            + image[[y1, x1]] * wy * wx
    }))
}

/// Index lists defining the train/val/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    /// Indices into the training set.
    pub train: Vec<usize>,
    /// Indices into the training set (20% carve-out).
    pub val: Vec<usize>,
    /// Indices into the test set.
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Filter both native partitions to the requested digit classes and carve 20%
/// of the training portion into validation with a seeded shuffle.
pub fn make_splits(
    train_set: &LabeledImageSet,
    test_set: &LabeledImageSet,
    classes: &[u8],
    seed: u64,
) -> Result<SplitSpec> {
    if classes.is_empty() {
        return Err(SimError::config("classes", "must select at least one class"));
    }
    let wanted = |label: u8| classes.contains(&label);
    for &c in classes {
        if !train_set.labels.iter().any(|&l| l == c) {
            return Err(SimError::data(format!("class {c} absent from training set")));
        }
        if !test_set.labels.iter().any(|&l| l == c) {
            return Err(SimError::data(format!("class {c} absent from test set")));
        }
    }
    let mut train_pool: Vec<usize> = (0..train_set.len())
        .filter(|&i| wanted(train_set.labels[i]))
        .collect();
    let test: Vec<usize> =
        (0..test_set.len()).filter(|&i| wanted(test_set.labels[i])).collect();

    train_pool.shuffle(&mut stream(seed, StreamLabel::Split, 0));
    let val_len = train_pool.len() / 5;
    let val = train_pool[..val_len].to_vec();
    let train = train_pool[val_len..].to_vec();
    Ok(SplitSpec { train, val, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Serialize matrices back into an IDX image payload (test fixture).
    fn idx_image_bytes(images: &[Array2<f64>]) -> Vec<u8> {
        let rows = images[0].nrows();
        let cols = images[0].ncols();
        let mut out = Vec::new();
        out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        out.extend_from_slice(&(images.len() as u32).to_be_bytes());
        out.extend_from_slice(&(rows as u32).to_be_bytes());
        out.extend_from_slice(&(cols as u32).to_be_bytes());
        for img in images {
            for v in img.iter() {
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }

    fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn parses_synthetic_single_image() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend(std::iter::repeat(0u8).take(784));
        let images = parse_idx_images(&bytes).unwrap();
        assert_eq!(images.len(), 1);
        assert_eq!(images[0].dim(), (28, 28));
        assert!(images[0].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn parse_serialize_roundtrip_is_value_exact() {
        let imgs = vec![
            Array2::from_shape_fn((5, 4), |(r, c)| ((r * 4 + c) % 256) as f64 / 255.0),
            Array2::from_elem((5, 4), 128.0 / 255.0),
        ];
        let bytes = idx_image_bytes(&imgs);
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!(parsed, imgs);
        let reserialized = idx_image_bytes(&parsed);
        assert_eq!(reserialized, bytes);

        let labels = vec![0u8, 3, 9, 7];
        let lbytes = idx_label_bytes(&labels);
        assert_eq!(parse_idx_labels(&lbytes).unwrap(), labels);
    }

    #[test]
    fn rejects_bad_magic_with_offset() {
        let mut bytes = idx_label_bytes(&[1, 2, 3]);
        bytes[3] = 0x99;
        let err = parse_idx_labels(&bytes).unwrap_err();
        match err {
            SimError::Parse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        // image parser refuses label magic
        let bytes = idx_label_bytes(&[1]);
        assert!(parse_idx_images(&bytes).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = idx_image_bytes(&[Array2::from_elem((4, 4), 0.5)]);
        bytes.truncate(bytes.len() - 3);
        let err = parse_idx_images(&bytes).unwrap_err();
        match err {
            SimError::Parse { offset, message } => {
                assert_eq!(offset, bytes.len());
                assert!(message.contains("header implies"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_dimension_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        let err = parse_idx_images(&bytes).unwrap_err();
        assert!(err.to_string().contains("overflow"), "{err}");
    }

    #[test]
    fn crop_is_centered_with_floor_offset() {
        // impulse at (14, 14) of a 28x28 lands at (11, 11) in the 21x21 crop
        let mut img = Array2::zeros((28, 28));
        img[[14, 14]] = 1.0;
        let crop = center_crop(&img, 21).unwrap();
        assert_eq!(crop.dim(), (21, 21));
        assert_eq!(crop[[11, 11]], 1.0);
        assert_eq!(crop.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn crop_full_size_is_identity_and_constant_stays_constant() {
        let img = Array2::from_shape_fn((28, 28), |(r, c)| (r * 28 + c) as f64);
        assert_eq!(center_crop(&img, 28).unwrap(), img);
        let flat = Array2::from_elem((28, 28), 0.7);
        let crop = center_crop(&flat, 21).unwrap();
        assert!(crop.iter().all(|&v| v == 0.7));
        assert!(center_crop(&flat, 29).is_err());
    }

    #[test]
    fn bilinear_constant_and_identity() {
        let flat = Array2::from_elem((7, 5), 0.3);
        let out = bilinear_resize(&flat, 12, 9).unwrap();
        assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let img = Array2::from_shape_fn((6, 6), |(r, c)| (r * 6 + c) as f64 / 35.0);
        let same = bilinear_resize(&img, 6, 6).unwrap();
        assert_eq!(same, img);
    }

    #[test]
    fn bilinear_midpoint_closed_form() {
        // 2x1 column (0, 1) resized to 3x1 -> (0, 0.5, 1)
        let img = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        let out = bilinear_resize(&img, 3, 1).unwrap();
        assert_eq!(out[[0, 0]], 0.0);
        assert!((out[[1, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(out[[2, 0]], 1.0);
    }

    #[test]
    fn bilinear_respects_input_range() {
        let img = Array2::from_shape_fn((9, 9), |(r, c)| ((r * 31 + c * 17) % 7) as f64 / 6.0);
        let (mn, mx) = img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
        let out = bilinear_resize(&img, 21, 21).unwrap();
        assert!(out.iter().all(|&v| v >= mn - 1e-12 && v <= mx + 1e-12));
        assert!(bilinear_resize(&img, 0, 5).is_err());
    }

    #[test]
    fn crop_then_resize_same_size_is_identity() {
        let img = Array2::from_shape_fn((28, 28), |(r, c)| ((r + c) % 5) as f64 / 4.0);
        let crop = center_crop(&img, 21).unwrap();
        let resized = bilinear_resize(&crop, 21, 21).unwrap();
        assert_eq!(resized, crop);
    }

    fn synthetic_sets() -> (LabeledImageSet, LabeledImageSet) {
        let image = Array2::zeros((4, 4));
        let train_labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let test_labels: Vec<u8> = (0..40).map(|i| (i % 10) as u8).collect();
        let train = LabeledImageSet {
            images: vec![image.clone(); train_labels.len()],
            labels: train_labels,
            provenance: vec![],
        };
        let test = LabeledImageSet {
            images: vec![image; test_labels.len()],
            labels: test_labels,
            provenance: vec![],
        };
        (train, test)
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let (train_set, test_set) = synthetic_sets();
        let classes: Vec<u8> = (0..8).collect();
        let spec = make_splits(&train_set, &test_set, &classes, 5).unwrap();
        // 80 filtered train -> 16 val + 64 train
        assert_eq!(spec.val.len(), 16);
        assert_eq!(spec.train.len(), 64);
        assert_eq!(spec.test.len(), 32);
        let mut all: Vec<usize> = spec.train.iter().chain(spec.val.iter()).cloned().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 80);
        assert!(all.iter().all(|&i| classes.contains(&train_set.labels[i])));
    }

    #[test]
    fn single_class_filter_is_pure() {
        let (train_set, test_set) = synthetic_sets();
        let spec = make_splits(&train_set, &test_set, &[0], 9).unwrap();
        for &i in spec.train.iter().chain(spec.val.iter()) {
            assert_eq!(train_set.labels[i], 0);
        }
        for &i in &spec.test {
            assert_eq!(test_set.labels[i], 0);
        }
    }

    #[test]
    fn splits_are_seed_deterministic() {
        let (train_set, test_set) = synthetic_sets();
        let a = make_splits(&train_set, &test_set, &[0, 1, 2], 7).unwrap();
        let b = make_splits(&train_set, &test_set, &[0, 1, 2], 7).unwrap();
        assert_eq!(a, b);
        let c = make_splits(&train_set, &test_set, &[0, 1, 2], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn missing_class_is_an_error() {
        let (mut train_set, test_set) = synthetic_sets();
        train_set.labels.iter_mut().for_each(|l| {
            if *l == 9 {
                *l = 0;
            }
        });
        let err = make_splits(&train_set, &test_set, &[9], 1).unwrap_err();
        assert!(err.to_string().contains("class 9"), "{err}");
        assert!(make_splits(&train_set, &test_set, &[], 1).is_err());
    }

    #[test]
    fn gzip_detection_roundtrip() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let labels = idx_label_bytes(&[1, 2, 3, 4]);

        let plain = dir.path().join("plain.idx");
        std::fs::write(&plain, &labels).unwrap();
        assert_eq!(read_maybe_gzip(&plain).unwrap(), labels);

        let gz = dir.path().join("packed.idx.gz");
        let mut enc =
            flate2::write::GzEncoder::new(std::fs::File::create(&gz).unwrap(), Default::default());
        enc.write_all(&labels).unwrap();
        enc.finish().unwrap();
        assert_eq!(read_maybe_gzip(&gz).unwrap(), labels);
    }
}
