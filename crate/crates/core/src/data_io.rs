//! Dataset loading: IDX (MNIST family), CIFAR-10 binary batches and a small
//! procedural shape set for quick runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::{inflate_if_gzip, sha256_hex, ByteReader};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Images (`H×W`, pixels in `[0, 1]`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<u8>,
    pub name: String,
    /// Hex SHA-256 of the source bytes.
    pub checksum: String,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(images: Vec<Tensor<T>>, labels: Vec<u8>, name: impl Into<String>, checksum: impl Into<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::input(format!("{} images but {} labels", images.len(), labels.len())));
        }
        for (i, img) in images.iter().enumerate() {
            if img.shape().len() != 2 {
                return Err(Error::input(format!("image {i} is not two-dimensional")));
            }
            if !img.data().iter().all(|&v| v >= T::zero() && v <= T::one()) {
                return Err(Error::input(format!("image {i} has pixels outside [0, 1]")));
            }
        }
        Ok(Self {
            images,
            labels,
            name: name.into(),
            checksum: checksum.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.images.first().map(|t| (t.shape()[0], t.shape()[1]))
    }

    pub fn class_counts(&self) -> BTreeMap<u8, usize> {
        let mut m = BTreeMap::new();
        for &l in &self.labels {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }

    pub fn indices_of(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Images and labels at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::input(format!("index {bad} out of range for {} samples", self.len())));
        }
        Ok(Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            name: name.into(),
            checksum: self.checksum.clone(),
        })
    }
}

fn read_raw(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file (already inflated).
pub fn parse_idx_images<T: Scalar>(bytes: &[u8], context: &str) -> Result<Vec<Tensor<T>>> {
    let mut r = ByteReader::new(bytes, context);
    let magic = r.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(context, 0, format!("expected image magic 0x{IDX_IMAGE_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(r.error(format!("degenerate header: {count} images of {rows}x{cols}")));
    }
    let pixels = rows.checked_mul(cols).filter(|&p| p <= 1 << 24).ok_or_else(|| r.error("image dimensions too large"))?;
    let expected = count.checked_mul(pixels).ok_or_else(|| r.error("image count too large"))?;
    if expected != r.remaining() {
        return Err(r.error(format!("header promises {expected} pixel bytes, file holds {}", r.remaining())));
    }
    let scale = T::one() / T::lit(255.0);
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = r.take(pixels)?;
        let data = raw.iter().map(|&b| T::lit(b as f64) * scale).collect();
        images.push(Tensor::new(vec![rows, cols], data)?);
    }
    r.finish()?;
    Ok(images)
}

/// Parses an IDX label file (already inflated).
pub fn parse_idx_labels(bytes: &[u8], context: &str) -> Result<Vec<u8>> {
    let mut r = ByteReader::new(bytes, context);
    let magic = r.u32_be()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(context, 0, format!("expected label magic 0x{IDX_LABEL_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let count = r.u32_be()? as usize;
    if count == 0 {
        return Err(r.error("label file is empty"));
    }
    if count != r.remaining() {
        return Err(r.error(format!("header promises {count} labels, file holds {}", r.remaining())));
    }
    let labels = r.take(count)?.to_vec();
    r.finish()?;
    Ok(labels)
}

/// Loads an IDX image/label pair; either file may be gzip-compressed.
pub fn load_idx<T: Scalar>(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset<T>> {
    let raw_images = read_raw(images_path)?;
    let raw_labels = read_raw(labels_path)?;
    let checksum = sha256_hex([raw_images.as_slice(), raw_labels.as_slice()]);
    let img_ctx = images_path.display().to_string();
    let lbl_ctx = labels_path.display().to_string();
    let images = parse_idx_images(&inflate_if_gzip(raw_images, &img_ctx)?, &img_ctx)?;
    let labels = parse_idx_labels(&inflate_if_gzip(raw_labels, &lbl_ctx)?, &lbl_ctx)?;
    if images.len() != labels.len() {
        return Err(Error::format(
            lbl_ctx,
            4,
            format!("{} labels for {} images", labels.len(), images.len()),
        ));
    }
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    LabeledDataset::new(images, labels, name, checksum)
}

/// Grayscale value of one RGB pixel in `[0, 1]`.
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    (299 * r as u32 + 587 * g as u32 + 114 * b as u32) as f64 / 255_000.0
}

/// Parses one CIFAR-10 binary batch into 32×32 grayscale images.
pub fn parse_cifar10<T: Scalar>(bytes: &[u8], context: &str) -> Result<(Vec<Tensor<T>>, Vec<u8>)> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::format(
            context,
            (bytes.len() - bytes.len() % CIFAR_RECORD_LEN) as u64,
            format!("length {} is not a positive multiple of {CIFAR_RECORD_LEN}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(context, (i * CIFAR_RECORD_LEN) as u64, format!("label {} out of range", rec[0])));
        }
        labels.push(rec[0]);
        let (r, rest) = rec[1..].split_at(1024);
        let (g, b) = rest.split_at(1024);
        let data = (0..1024).map(|p| T::lit(luma(r[p], g[p], b[p]))).collect();
        images.push(Tensor::new(vec![32, 32], data)?);
    }
    Ok((images, labels))
}

/// Loads CIFAR-10 binary batches. Nothing is returned unless every batch
/// parses.
pub fn load_cifar10<T: Scalar>(batch_paths: &[PathBuf]) -> Result<LabeledDataset<T>> {
    if batch_paths.is_empty() {
        return Err(Error::input("no CIFAR-10 batch files given"));
    }
    let mut raws = Vec::with_capacity(batch_paths.len());
    for p in batch_paths {
        raws.push(read_raw(p)?);
    }
    let checksum = sha256_hex(raws.iter().map(|r| r.as_slice()));
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (p, raw) in batch_paths.iter().zip(raws) {
        let ctx = p.display().to_string();
        let (im, lb) = parse_cifar10(&inflate_if_gzip(raw, &ctx)?, &ctx)?;
        images.extend(im);
        labels.extend(lb);
    }
    LabeledDataset::new(images, labels, "cifar10", checksum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Cross,
    Bar,
    Ring,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Disk,
        ShapeKind::Cross,
        ShapeKind::Bar,
        ShapeKind::Ring,
        ShapeKind::Square,
        ShapeKind::Triangle,
    ];

    /// Whether the point `(u, v)`, in shape-local units where the shape spans
    /// roughly `[-1, 1]²`, is covered.
    fn covers(self, u: f64, v: f64) -> bool {
        let t = 0.28;
        match self {
            ShapeKind::Disk => u * u + v * v <= 1.0,
            ShapeKind::Ring => ((u * u + v * v).sqrt() - 0.8).abs() <= 0.2,
            ShapeKind::Cross => (u.abs() <= t && v.abs() <= 1.0) || (v.abs() <= t && u.abs() <= 1.0),
            ShapeKind::Bar => u.abs() <= 1.0 && v.abs() <= t,
            ShapeKind::Square => {
                let m = u.abs().max(v.abs());
                m <= 1.0 && m >= 1.0 - t
            }
            ShapeKind::Triangle => v.abs() <= 1.0 && u.abs() <= (v + 1.0) / 2.0,
        }
    }
}

/// Procedural shapes, one kind per class, with jittered position, size and
/// rotation; labels cycle through the classes. Pixels are 2×2 supersampled.
pub fn synth_shapes<T: Scalar>(count: usize, image_size: usize, class_count: usize, seed: u64) -> Result<LabeledDataset<T>> {
    if count == 0 || image_size < 8 {
        return Err(Error::input("synth_shapes needs count > 0 and image_size >= 8"));
    }
    if class_count == 0 || class_count > ShapeKind::ALL.len() {
        return Err(Error::input(format!(
            "class_count must be within 1..={}, got {class_count}",
            ShapeKind::ALL.len()
        )));
    }
    let mut rng = SeededRng::new(seed).derive_named("synth_shapes");
    let s = image_size as f64;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % class_count;
        let kind = ShapeKind::ALL[label];
        let cx = s / 2.0 + rng.uniform_range(-0.1, 0.1) * s;
        let cy = s / 2.0 + rng.uniform_range(-0.1, 0.1) * s;
        let r = rng.uniform_range(0.25, 0.35) * s;
        let angle = rng.uniform_range(-0.3, 0.3);
        let (sin, cos) = angle.sin_cos();
        let mut data = Vec::with_capacity(image_size * image_size);
        for y in 0..image_size {
            for x in 0..image_size {
                let mut hits = 0;
                for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                    let dx = (x as f64 + ox - cx) / r;
                    let dy = (y as f64 + oy - cy) / r;
                    let u = cos * dx + sin * dy;
                    let v = -sin * dx + cos * dy;
                    hits += kind.covers(u, v) as u32;
                }
                data.push(T::lit(hits as f64 / 4.0));
            }
        }
        images.push(Tensor::new(vec![image_size, image_size], data)?);
        labels.push(label as u8);
    }
    let checksum = sha256_hex([format!("synth_shapes:{count}:{image_size}:{class_count}:{seed}").as_bytes()]);
    LabeledDataset::new(images, labels, "synth_shapes", checksum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = IDX_LABEL_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn sha256_matches_published_vector() {
        assert_eq!(
            sha256_hex([b"abc".as_slice()]),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn idx_pixels_scale_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let im = write(dir.path(), "im", &idx_images(2, 1, 1, &[0, 255]));
        let lb = write(dir.path(), "lb", &idx_labels(&[3, 7]));
        let ds: LabeledDataset<f64> = load_idx(&im, &lb).unwrap();
        assert_eq!(ds.images[0].data(), &[0.0]);
        assert_eq!(ds.images[1].data(), &[1.0]);
        assert_eq!(ds.labels, vec![3, 7]);
        let again: LabeledDataset<f64> = load_idx(&im, &lb).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn idx_gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&idx_images(1, 2, 2, &[0, 51, 102, 255])).unwrap();
        let im = write(dir.path(), "im.gz", &enc.finish().unwrap());
        let lb = write(dir.path(), "lb", &idx_labels(&[1]));
        let ds: LabeledDataset<f64> = load_idx(&im, &lb).unwrap();
        assert_eq!(ds.images[0].shape(), &[2, 2]);
        assert_eq!(ds.images[0].data()[1], 0.2);
    }

    #[test]
    fn idx_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let im = write(dir.path(), "im", &idx_images(2, 1, 1, &[0, 255]));
        let lb = write(dir.path(), "lb", &idx_labels(&[3, 7]));
        let wrong_magic = write(dir.path(), "wm", &idx_images(2, 1, 1, &[0, 255]));
        // label file carrying the image magic
        assert!(matches!(load_idx::<f64>(&im, &wrong_magic), Err(Error::Format { .. })));
        let short = write(dir.path(), "short", &idx_images(3, 1, 1, &[0, 255]));
        assert!(matches!(load_idx::<f64>(&short, &lb), Err(Error::Format { .. })));
        let one = write(dir.path(), "one", &idx_labels(&[1]));
        assert!(matches!(load_idx::<f64>(&im, &one), Err(Error::Format { .. })));
        let huge = write(dir.path(), "huge", &idx_images(u32::MAX, 60000, 60000, &[]));
        assert!(matches!(load_idx::<f64>(&huge, &lb), Err(Error::Format { .. })));
        assert!(matches!(load_idx::<f64>(&dir.path().join("missing"), &lb), Err(Error::Io { .. })));
    }

    fn cifar_record(label: u8, rgb: [u8; 3]) -> Vec<u8> {
        let mut rec = vec![label];
        for c in rgb {
            rec.extend(std::iter::repeat_n(c, 1024));
        }
        rec
    }

    #[test]
    fn cifar_white_is_one_and_luma_weights_apply() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = cifar_record(4, [255, 255, 255]);
        bytes.extend(cifar_record(9, [255, 0, 0]));
        let p = write(dir.path(), "b1", &bytes);
        let ds: LabeledDataset<f64> = load_cifar10(&[p]).unwrap();
        assert_eq!(ds.labels, vec![4, 9]);
        assert!(ds.images[0].data().iter().all(|&v| v == 1.0));
        assert!((ds.images[1].data()[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn cifar_truncation_and_bad_labels_fail_whole_load() {
        let dir = tempfile::tempdir().unwrap();
        let good = write(dir.path(), "good", &cifar_record(1, [1, 2, 3]));
        let mut t = cifar_record(1, [1, 2, 3]);
        t.pop();
        let trunc = write(dir.path(), "trunc", &t);
        assert!(matches!(load_cifar10::<f64>(&[good.clone(), trunc]), Err(Error::Format { .. })));
        let bad = write(dir.path(), "bad", &cifar_record(10, [0, 0, 0]));
        assert!(matches!(load_cifar10::<f64>(&[good, bad]), Err(Error::Format { .. })));
    }

    #[test]
    fn synth_shapes_deterministic_and_in_range() {
        let a: LabeledDataset<f64> = synth_shapes(30, 28, 6, 11).unwrap();
        let b: LabeledDataset<f64> = synth_shapes(30, 28, 6, 11).unwrap();
        assert_eq!(a, b);
        let c: LabeledDataset<f64> = synth_shapes(30, 28, 6, 12).unwrap();
        assert_ne!(a.images, c.images);
        for img in &a.images {
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(img.sum() > 10.0);
        }
        assert_eq!(a.class_counts().values().copied().collect::<Vec<_>>(), vec![5; 6]);
        assert!(synth_shapes::<f64>(10, 28, 7, 0).is_err());
    }
}
