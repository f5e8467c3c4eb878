//! Shallow supervised novelty detector.
//!
//! `score = sigmoid(w2 · sigmoid(W1 · standardize(f) + b1) + b2)`, trained
//! with binary cross entropy on clean inlier features (label 0) against
//! features of noise-distorted inliers (label 1). Higher scores mean more
//! novel.

use std::path::Path;

use crate::codec::{put_affine, put_f64s, put_u32, read_file, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector};
use crate::layers::{sigmoid, AffineLayer, LayerGrad};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 40,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::input("detector hidden, epochs and batch_size must be positive"));
        }
        self.adam().validate()
    }

    /// Freshly initialized `(layer1, layer2)` for a feature dimension.
    pub fn initial_layers<T: Scalar>(&self, feature_dim: usize) -> (AffineLayer<T>, AffineLayer<T>) {
        let mut rng = SeededRng::new(self.seed).derive_named("detector/init");
        let l1 = AffineLayer::glorot(self.hidden, feature_dim, &mut rng);
        let l2 = AffineLayer::glorot(1, self.hidden, &mut rng);
        (l1, l2)
    }
}

/// Per-dimension affine standardization fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    pub fn from_parts(mean: Vec<T>, std: Vec<T>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::input("standardizer mean/std lengths differ or are empty"));
        }
        if std.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::input("standardizer std must be positive"));
        }
        Ok(Self { mean, std })
    }

    /// Mean and (population) standard deviation over `rows`, std floored at
    /// [`STD_FLOOR`].
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [T]> + Clone) -> Result<Self> {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        for r in rows.clone() {
            if n == 0 {
                mean = vec![0.0; r.len()];
            } else if r.len() != mean.len() {
                return Err(Error::input("standardizer rows differ in length"));
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v.to_f64_lossy();
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::input("cannot fit a standardizer on no rows"));
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0f64; mean.len()];
        for r in rows {
            for ((s, m), v) in var.iter_mut().zip(&mean).zip(r) {
                let d = v.to_f64_lossy() - m;
                *s += d * d;
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR));
        Ok(Self {
            mean: mean.iter().map(|&m| T::from_f64_lossy(m)).collect(),
            std: std.map(T::from_f64_lossy).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn std(&self) -> &[T] {
        &self.std
    }

    pub fn apply_into(&self, values: &[T], out: &mut [T]) {
        for (((o, &v), &m), &s) in out.iter_mut().zip(values).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel<T> {
    feature_kind: FeatureKind,
    source_layer: Option<usize>,
    standardizer: Standardizer<T>,
    layer1: AffineLayer<T>,
    layer2: AffineLayer<T>,
}

impl<T: Scalar> DetectorModel<T> {
    pub fn new(
        feature_kind: FeatureKind,
        source_layer: Option<usize>,
        standardizer: Standardizer<T>,
        layer1: AffineLayer<T>,
        layer2: AffineLayer<T>,
    ) -> Result<Self> {
        if layer1.in_dim() != standardizer.dim() {
            return Err(Error::input(format!(
                "layer1 expects {} inputs but the standardizer has {}",
                layer1.in_dim(),
                standardizer.dim()
            )));
        }
        if layer2.in_dim() != layer1.out_dim() || layer2.out_dim() != 1 {
            return Err(Error::input("layer2 must map the hidden layer to a single score"));
        }
        Ok(Self {
            feature_kind,
            source_layer,
            standardizer,
            layer1,
            layer2,
        })
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.feature_kind
    }

    pub fn source_layer(&self) -> Option<usize> {
        self.source_layer
    }

    pub fn feature_dim(&self) -> usize {
        self.layer1.in_dim()
    }

    pub fn hidden(&self) -> usize {
        self.layer1.out_dim()
    }

    pub fn standardizer(&self) -> &Standardizer<T> {
        &self.standardizer
    }

    pub fn layer1(&self) -> &AffineLayer<T> {
        &self.layer1
    }

    pub fn layer2(&self) -> &AffineLayer<T> {
        &self.layer2
    }

    /// Novelty score in `(0, 1)`.
    pub fn score(&self, feature: &FeatureVector<T>) -> Result<T> {
        if feature.kind != self.feature_kind {
            return Err(Error::input(format!(
                "detector trained on {} features was given {} features",
                self.feature_kind, feature.kind
            )));
        }
        if feature.dim() != self.feature_dim() {
            return Err(Error::input(format!(
                "detector expects dimension {}, feature has {}",
                self.feature_dim(),
                feature.dim()
            )));
        }
        let mut z = vec![T::zero(); self.feature_dim()];
        self.standardizer.apply_into(feature.values.data(), &mut z);
        let mut h = vec![T::zero(); self.hidden()];
        Ok(self.forward(&z, &mut h))
    }

    /// Score from standardized input; leaves hidden activations in `h`.
    fn forward(&self, z: &[T], h: &mut [T]) -> T {
        self.layer1.apply_into(z, h);
        h.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut a = [T::zero()];
        self.layer2.apply_into(h, &mut a);
        sigmoid(a[0])
    }
}

/// Convenience wrapper for [`DetectorModel::score`].
pub fn detector_score<T: Scalar>(model: &DetectorModel<T>, feature: &FeatureVector<T>) -> Result<T> {
    model.score(feature)
}

/// Clean and distorted features of the same inliers.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSet<'a, T> {
    pub inliers: &'a [FeatureVector<T>],
    pub distorted: &'a [FeatureVector<T>],
}

impl<'a, T: Scalar> FeatureSet<'a, T> {
    fn labeled(&self) -> impl Iterator<Item = (&'a FeatureVector<T>, T)> + Clone + 'a {
        let (a, b) = (self.inliers, self.distorted);
        a.iter()
            .map(|f| (f, T::zero()))
            .chain(b.iter().map(|f| (f, T::one())))
    }

    fn len(&self) -> usize {
        self.inliers.len() + self.distorted.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation set was supplied.
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedDetector<T> {
    pub model: DetectorModel<T>,
    pub trace: Vec<DetectorEpoch>,
    pub best_epoch: usize,
}

fn bce<T: Scalar>(score: T, label: T) -> f64 {
    let p = score.to_f64_lossy().clamp(1e-7, 1.0 - 1e-7);
    let y = label.to_f64_lossy();
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn mean_bce<T: Scalar>(model: &DetectorModel<T>, set: &FeatureSet<'_, T>) -> f64 {
    let mut z = vec![T::zero(); model.feature_dim()];
    let mut h = vec![T::zero(); model.hidden()];
    let total: f64 = set
        .labeled()
        .map(|(f, y)| {
            model.standardizer.apply_into(f.values.data(), &mut z);
            bce(model.forward(&z, &mut h), y)
        })
        .sum();
    total / set.len() as f64
}

fn check_set<T: Scalar>(set: &FeatureSet<'_, T>, what: &str) -> Result<(FeatureKind, Option<usize>, usize)> {
    let (Some(a), Some(_)) = (set.inliers.first(), set.distorted.first()) else {
        return Err(Error::input(format!("{what} set needs both inlier and distorted features")));
    };
    for f in set.inliers.iter().chain(set.distorted) {
        if f.kind != a.kind || f.dim() != a.dim() || f.source_layer != a.source_layer {
            return Err(Error::input(format!("{what} features differ in kind, dimension or layer")));
        }
    }
    Ok((a.kind, a.source_layer, a.dim()))
}

/// Trains on `train`; when `validation` is given, returns the weights of the
/// epoch with the lowest validation BCE (training BCE otherwise).
/// Standardization statistics come from `train` only.
pub fn train_detector<T: Scalar>(
    train: FeatureSet<'_, T>,
    validation: Option<FeatureSet<'_, T>>,
    config: &DetectorConfig,
) -> Result<TrainedDetector<T>> {
    config.validate()?;
    let (kind, layer, dim) = check_set(&train, "training")?;
    if let Some(v) = &validation {
        if check_set(v, "validation")? != (kind, layer, dim) {
            return Err(Error::input("validation features do not match training features"));
        }
    }

    let standardizer = Standardizer::fit(train.labeled().map(|(f, _)| f.values.data()))?;
    let (l1, l2) = config.initial_layers(dim);
    let mut model = DetectorModel::new(kind, layer, standardizer, l1, l2)?;
    let examples: Vec<(&FeatureVector<T>, T)> = train.labeled().collect();

    let mut g1 = LayerGrad::zeros(config.hidden, dim);
    let mut g2 = LayerGrad::zeros(1, config.hidden);
    let mut adam = Adam::new(config.adam(), &[g1.weight.len(), g1.bias.len(), g2.weight.len(), g2.bias.len()]);
    let mut order_rng = SeededRng::new(config.seed).derive_named("detector/order");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut z = vec![T::zero(); dim];
    let mut h = vec![T::zero(); config.hidden];
    let mut dh = vec![T::zero(); config.hidden];

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, DetectorModel<T>)> = None;
    for epoch in 0..config.epochs {
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            g1.fill_zero();
            g2.fill_zero();
            for &i in batch {
                let (f, y) = examples[i];
                model.standardizer.apply_into(f.values.data(), &mut z);
                let s = model.forward(&z, &mut h);
                let loss = bce(s, y);
                if !loss.is_finite() || !s.is_finite() {
                    return Err(Error::NonFinite(format!("detector loss at epoch {epoch}, sample {}", f.sample_id)));
                }
                total += loss;
                let da2 = [s - y];
                model.layer2.accumulate_param_grads(&h, &da2, &mut g2);
                model.layer2.input_grad_into(&da2, &mut dh);
                for (d, &hv) in dh.iter_mut().zip(&h) {
                    *d *= hv * (T::one() - hv);
                }
                model.layer1.accumulate_param_grads(&z, &dh, &mut g1);
            }
            let inv = T::one() / T::lit(batch.len() as f64);
            for g in [&mut g1, &mut g2] {
                g.weight.data_mut().iter_mut().for_each(|v| *v *= inv);
                g.bias.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            let (w1, b1) = model.layer1.params_mut();
            let (w2, b2) = {
                // split borrows of the two layers
                let l2 = &mut model.layer2;
                l2.params_mut()
            };
            adam.step(
                vec![w1, b1, w2, b2],
                vec![g1.weight.data(), g1.bias.data(), g2.weight.data(), g2.bias.data()],
            );
        }
        let train_loss = total / examples.len() as f64;
        let validation_loss = validation.as_ref().map(|v| mean_bce(&model, v));
        trace.push(DetectorEpoch {
            epoch,
            train_loss,
            validation_loss,
        });
        let criterion = validation_loss.unwrap_or(train_loss);
        if !criterion.is_finite() {
            return Err(Error::NonFinite(format!("detector validation loss at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(b, _, _)| criterion < *b) {
            best = Some((criterion, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainedDetector {
        model,
        trace,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// GNDET1 checkpoint (little-endian)
//
//   "GNDET1"        6 bytes
//   feature kind    u8
//   source_layer    u32 (0xFFFF_FFFF when absent)
//   feature_dim     u32
//   hidden          u32
//   mean            f64[feature_dim]
//   std             f64[feature_dim]
//   layer1, layer2  out_dim u32, in_dim u32, weights f64[out·in], bias f64[out]

pub const DETECTOR_MAGIC: &[u8; 6] = b"GNDET1";

pub fn encode_detector<T: Scalar>(model: &DetectorModel<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DETECTOR_MAGIC);
    buf.push(model.feature_kind.tag());
    put_u32(&mut buf, model.source_layer.map_or(u32::MAX, |l| l as u32));
    put_u32(&mut buf, model.feature_dim() as u32);
    put_u32(&mut buf, model.hidden() as u32);
    put_f64s(&mut buf, &model.standardizer.mean);
    put_f64s(&mut buf, &model.standardizer.std);
    put_affine(&mut buf, &model.layer1);
    put_affine(&mut buf, &model.layer2);
    buf
}

pub fn decode_detector<T: Scalar>(bytes: &[u8]) -> Result<DetectorModel<T>> {
    let mut r = ByteReader::new(bytes, "detector checkpoint");
    r.expect_magic(DETECTOR_MAGIC)?;
    let tag = r.u8()?;
    let kind = FeatureKind::from_tag(tag).ok_or_else(|| r.error(format!("unknown feature kind tag {tag}")))?;
    let layer = r.u32_le()?;
    let dim = r.u32_le()? as usize;
    let hidden = r.u32_le()? as usize;
    let mean = r.f64_vec(dim)?;
    let std = r.f64_vec(dim)?;
    let l1 = r.affine()?;
    let l2 = r.affine()?;
    r.finish()?;
    if l1.out_dim() != hidden {
        return Err(r.error("hidden width disagrees with layer1"));
    }
    let standardizer = Standardizer::from_parts(mean, std).map_err(|e| r.error(e.to_string()))?;
    DetectorModel::new(kind, (layer != u32::MAX).then_some(layer as usize), standardizer, l1, l2)
        .map_err(|e| r.error(e.to_string()))
}

pub fn save_detector<T: Scalar>(model: &DetectorModel<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_detector(model))
}

pub fn load_detector<T: Scalar>(path: &Path) -> Result<DetectorModel<T>> {
    decode_detector(&read_file(path)?)
}
