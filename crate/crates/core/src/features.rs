//! Per-sample representations of a query image under a trained VAE.
//!
//! * [`FeatureKind::ReconError`]: per-pixel BCE vector.
//! * [`FeatureKind::LatentLoss`]: per-dimension KL vector.
//! * [`FeatureKind::Gradient`]: flattened gradient of the reconstruction BCE
//!   with respect to one decoder layer's weights (and optionally biases).
//!
//! Extraction always uses the deterministic latent path `z = mu` and only
//! reads the model.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{put_u32, put_u64, read_file, write_atomic, ByteReader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vae::{kl_loss, loss::bce_per_pixel, VaeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "recon")]
    ReconError,
    #[serde(rename = "latent")]
    LatentLoss,
    #[serde(rename = "gradient")]
    Gradient,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::ReconError, FeatureKind::LatentLoss, FeatureKind::Gradient];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::ReconError => "recon",
            FeatureKind::LatentLoss => "latent",
            FeatureKind::Gradient => "gradient",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::ReconError => 0,
            FeatureKind::LatentLoss => 1,
            FeatureKind::Gradient => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recon" | "recon_error" => Ok(FeatureKind::ReconError),
            "latent" | "latent_loss" => Ok(FeatureKind::LatentLoss),
            "gradient" => Ok(FeatureKind::Gradient),
            other => Err(Error::input(format!("unknown feature kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub kind: FeatureKind,
    pub values: Tensor<T>,
    /// Decoder layer the gradient came from; `None` for activation features.
    pub source_layer: Option<usize>,
    pub sample_id: u64,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(kind: FeatureKind, values: Vec<T>, source_layer: Option<usize>, sample_id: u64) -> Result<Self> {
        match (kind, source_layer) {
            (FeatureKind::Gradient, None) => return Err(Error::input("gradient features need a source layer")),
            (FeatureKind::ReconError | FeatureKind::LatentLoss, Some(_)) => {
                return Err(Error::input(format!("{kind} features carry no source layer")))
            }
            _ => {}
        }
        if values.is_empty() {
            return Err(Error::input("empty feature vector"));
        }
        Ok(Self {
            kind,
            values: Tensor::from_vec(values),
            source_layer,
            sample_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// What to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSpec {
    ReconError,
    LatentLoss,
    Gradient { layer: usize, include_bias: bool },
}

impl FeatureSpec {
    pub fn kind(self) -> FeatureKind {
        match self {
            FeatureSpec::ReconError => FeatureKind::ReconError,
            FeatureSpec::LatentLoss => FeatureKind::LatentLoss,
            FeatureSpec::Gradient { .. } => FeatureKind::Gradient,
        }
    }

    /// Gradient layer index, or `None` for activation features.
    pub fn layer(self) -> Option<usize> {
        match self {
            FeatureSpec::Gradient { layer, .. } => Some(layer),
            _ => None,
        }
    }

    /// Feature dimensionality for a given model.
    pub fn dim<T: Scalar>(self, model: &VaeModel<T>) -> Result<usize> {
        match self {
            FeatureSpec::ReconError => Ok(model.input_dim()),
            FeatureSpec::LatentLoss => Ok(model.latent_dim()),
            FeatureSpec::Gradient { layer, include_bias } => {
                let l = model
                    .decoder_layer(layer)
                    .ok_or_else(|| Error::input(format!("decoder layer index {layer} out of range")))?;
                Ok(l.in_dim() * l.out_dim() + if include_bias { l.out_dim() } else { 0 })
            }
        }
    }

    pub fn extract<T: Scalar>(self, model: &VaeModel<T>, x: &Tensor<T>, sample_id: u64) -> Result<FeatureVector<T>> {
        match self {
            FeatureSpec::ReconError => recon_error_feature(model, x, sample_id),
            FeatureSpec::LatentLoss => latent_loss_feature(model, x, sample_id),
            FeatureSpec::Gradient { layer, include_bias } => gradient_feature(model, x, layer, include_bias, sample_id),
        }
    }
}

/// Per-pixel BCE between `x` and its reconstruction through `z = mu`.
pub fn recon_error_feature<T: Scalar>(model: &VaeModel<T>, x: &Tensor<T>, sample_id: u64) -> Result<FeatureVector<T>> {
    let trace = model.forward(x.data(), None)?;
    let per = bce_per_pixel(trace.recon(), x.data())?;
    FeatureVector::new(FeatureKind::ReconError, per, None, sample_id)
}

/// Per-dimension KL of the encoded posterior from the prior.
pub fn latent_loss_feature<T: Scalar>(model: &VaeModel<T>, x: &Tensor<T>, sample_id: u64) -> Result<FeatureVector<T>> {
    let (_, mu, logvar) = model.encode(x.data())?;
    let per = kl_loss(&mu, &logvar)?.per_element.into_vec();
    FeatureVector::new(FeatureKind::LatentLoss, per, None, sample_id)
}

/// Gradient of the reconstruction BCE with respect to decoder layer
/// `layer_index`: weights row-major, then biases when `include_bias`.
pub fn gradient_feature<T: Scalar>(
    model: &VaeModel<T>,
    x: &Tensor<T>,
    layer_index: usize,
    include_bias: bool,
    sample_id: u64,
) -> Result<FeatureVector<T>> {
    let set = model.decoder_recon_gradients(x.data(), sample_id, &[layer_index])?;
    let values = set.layers[&layer_index].flatten(include_bias);
    FeatureVector::new(FeatureKind::Gradient, values, Some(layer_index), sample_id)
}

/// Euclidean norm of [`gradient_feature`].
pub fn gradient_l2_norm<T: Scalar>(model: &VaeModel<T>, x: &Tensor<T>, layer_index: usize, include_bias: bool) -> Result<T> {
    Ok(gradient_feature(model, x, layer_index, include_bias, 0)?.values.l2_norm())
}

/// Scalar summaries of one sample: total BCE, total KL, gradient norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStatistics<T> {
    pub recon_total: T,
    pub kl_total: T,
    pub gradient_norm: T,
}

pub fn sample_statistics<T: Scalar>(
    model: &VaeModel<T>,
    x: &Tensor<T>,
    layer_index: usize,
    include_bias: bool,
) -> Result<SampleStatistics<T>> {
    let trace = model.forward(x.data(), None)?;
    let terms = model.loss_terms(&trace, x.data())?;
    Ok(SampleStatistics {
        recon_total: terms.recon_total,
        kl_total: terms.kl_total,
        gradient_norm: gradient_l2_norm(model, x, layer_index, include_bias)?,
    })
}

/// Extracts features for `(sample_id, image)` pairs in parallel. Output order
/// follows input order.
pub fn extract_batch<T: Scalar>(
    model: &VaeModel<T>,
    samples: &[(u64, &Tensor<T>)],
    spec: FeatureSpec,
) -> Result<Vec<FeatureVector<T>>> {
    samples
        .par_iter()
        .map(|&(id, x)| spec.extract(model, x, id))
        .collect()
}

// ---------------------------------------------------------------------------
// GNFEA1 feature cache
//
//   "GNFEA1"        6 bytes
//   kind            u8    (0 recon, 1 latent, 2 gradient)
//   feature_dim     u64
//   count           u64
//   source_layer    u32   (0xFFFF_FFFF when absent)
//   count × { sample_id u64, values f32[feature_dim] }
// All integers and floats little-endian.

pub const FEATURE_MAGIC: &[u8; 6] = b"GNFEA1";
const NO_LAYER: u32 = u32::MAX;

pub fn encode_features<T: Scalar>(features: &[FeatureVector<T>]) -> Result<Vec<u8>> {
    let first = features
        .first()
        .ok_or_else(|| Error::input("cannot write an empty feature cache"))?;
    let dim = first.dim();
    if features
        .iter()
        .any(|f| f.kind != first.kind || f.dim() != dim || f.source_layer != first.source_layer)
    {
        return Err(Error::input("feature cache entries must share kind, dimension and layer"));
    }
    let mut buf = Vec::with_capacity(31 + features.len() * (8 + 4 * dim));
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.push(first.kind.tag());
    put_u64(&mut buf, dim as u64);
    put_u64(&mut buf, features.len() as u64);
    put_u32(&mut buf, first.source_layer.map_or(NO_LAYER, |l| l as u32));
    for f in features {
        put_u64(&mut buf, f.sample_id);
        for v in f.values.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_features<T: Scalar>(bytes: &[u8]) -> Result<Vec<FeatureVector<T>>> {
    let mut r = ByteReader::new(bytes, "feature cache");
    r.expect_magic(FEATURE_MAGIC)?;
    let tag = r.u8()?;
    let kind = FeatureKind::from_tag(tag).ok_or_else(|| r.error(format!("unknown feature kind tag {tag}")))?;
    let dim = r.u64_le()?;
    let count = r.u64_le()?;
    let layer = r.u32_le()?;
    let source_layer = (layer != NO_LAYER).then_some(layer as usize);
    let record = dim
        .checked_mul(4)
        .and_then(|b| b.checked_add(8))
        .ok_or_else(|| r.error("record size overflow"))?;
    if dim == 0 || count.checked_mul(record) != Some(r.remaining() as u64) {
        return Err(r.error(format!(
            "{count} records of dimension {dim} do not fit the {} payload bytes",
            r.remaining()
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = r.u64_le()?;
        let values = r.f32_vec(dim as usize)?;
        out.push(FeatureVector::new(kind, values, source_layer, id).map_err(|e| r.error(e.to_string()))?);
    }
    r.finish()?;
    Ok(out)
}

pub fn save_features<T: Scalar>(features: &[FeatureVector<T>], path: &Path) -> Result<()> {
    write_atomic(path, &encode_features(features)?)
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<Vec<FeatureVector<T>>> {
    decode_features(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::AffineLayer;
    use crate::rng::SeededRng;
    use crate::vae::{bce_recon_loss, VaeArchitecture};

    fn model(seed: u64) -> VaeModel<f64> {
        let arch = VaeArchitecture {
            input_dim: 9,
            hidden: vec![6, 4],
            latent_dim: 3,
        };
        VaeModel::new(&arch, &mut SeededRng::new(seed)).unwrap()
    }

    fn image(rng: &mut SeededRng, n: usize) -> Tensor<f64> {
        Tensor::from_vec((0..n).map(|_| rng.uniform()).collect())
    }

    /// A model whose encoder ignores its input, and the target its decoder emits.
    fn constant_encoder_model() -> (VaeModel<f64>, Tensor<f64>) {
        let mut m = model(4);
        for i in 0..2 {
            let l = m.encoder_layer_mut(i).unwrap();
            l.weights_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let mu = m.encode(&[0.0; 9]).unwrap().1;
        let target = m.decode(mu.data()).unwrap();
        (m, target)
    }

    #[test]
    fn recon_feature_reuses_bce_components() {
        let m = model(1);
        let mut rng = SeededRng::new(2);
        let x = image(&mut rng, 9);
        let f = recon_error_feature(&m, &x, 3).unwrap();
        assert_eq!(f.dim(), 9);
        assert_eq!(f.source_layer, None);
        let recon = m.forward(x.data(), None).unwrap().recon().to_vec();
        let reference = bce_recon_loss(&Tensor::from_vec(recon), &x).unwrap();
        assert_eq!(f.values.data(), reference.per_element.data());
    }

    #[test]
    fn recon_feature_near_zero_for_perfect_reconstruction() {
        let mut m = model(6);
        *m.decoder_layer_mut(2).unwrap() = AffineLayer::new(
            Tensor::zeros(&[9, 6]),
            Tensor::from_vec(vec![40.0, -40.0, 40.0, -40.0, 40.0, -40.0, 40.0, -40.0, 40.0]),
        )
        .unwrap();
        let x = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let f = recon_error_feature(&m, &x, 0).unwrap();
        assert!(f.values.data().iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn latent_feature_reuses_kl_components() {
        let m = model(1);
        let mut rng = SeededRng::new(3);
        let x = image(&mut rng, 9);
        let f = latent_loss_feature(&m, &x, 0).unwrap();
        assert_eq!(f.dim(), 3);
        let (_, mu, lv) = m.encode(x.data()).unwrap();
        assert_eq!(f.values.data(), kl_loss(&mu, &lv).unwrap().per_element.data());
        assert!(f.values.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn latent_feature_zero_at_prior() {
        let mut m = model(1);
        *m.mu_head_mut() = AffineLayer::zeros(3, 4);
        *m.logvar_head_mut() = AffineLayer::zeros(3, 4);
        let f = latent_loss_feature(&m, &Tensor::from_vec(vec![0.3; 9]), 0).unwrap();
        assert!(f.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_vanishes_at_stationary_point() {
        let (m, target) = constant_encoder_model();
        for layer in 0..3 {
            let f = gradient_feature(&m, &target, layer, true, 0).unwrap();
            assert!(f.values.data().iter().all(|&v| v == 0.0), "layer {layer}");
            assert_eq!(gradient_l2_norm(&m, &target, layer, true).unwrap(), 0.0);
        }
    }

    #[test]
    fn gradient_dimensions() {
        let m = VaeModel::<f64>::new(&VaeArchitecture::default(), &mut SeededRng::new(0)).unwrap();
        let x = Tensor::filled(&[28, 28], 0.2);
        assert_eq!(gradient_feature(&m, &x, 0, true, 0).unwrap().dim(), 704);
        assert_eq!(gradient_feature(&m, &x, 0, false, 0).unwrap().dim(), 640);
        assert_eq!(FeatureSpec::Gradient { layer: 2, include_bias: true }.dim(&m).unwrap(), 256 * 784 + 784);
        assert_eq!(FeatureSpec::ReconError.dim(&m).unwrap(), 784);
        assert!(gradient_feature(&m, &x, 3, true, 0).is_err());
    }

    #[test]
    fn gradient_norm_is_definitional() {
        let m = model(9);
        let mut rng = SeededRng::new(10);
        let x = image(&mut rng, 9);
        for layer in 0..3 {
            let f = gradient_feature(&m, &x, layer, true, 0).unwrap();
            let direct = f.values.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let n = gradient_l2_norm(&m, &x, layer, true).unwrap();
            assert!((n - direct).abs() <= 1e-12 * direct.max(1e-300));
        }
    }

    #[test]
    fn extraction_does_not_mutate_model() {
        let m = model(3);
        let before = crate::vae::checkpoint::encode_vae(&m);
        let mut rng = SeededRng::new(1);
        let imgs: Vec<Tensor<f64>> = (0..5).map(|_| image(&mut rng, 9)).collect();
        let samples: Vec<(u64, &Tensor<f64>)> = imgs.iter().enumerate().map(|(i, x)| (i as u64, x)).collect();
        for spec in [
            FeatureSpec::ReconError,
            FeatureSpec::LatentLoss,
            FeatureSpec::Gradient { layer: 1, include_bias: true },
        ] {
            let a = extract_batch(&m, &samples, spec).unwrap();
            let b = extract_batch(&m, &samples, spec).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.iter().map(|f| f.sample_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        }
        assert_eq!(crate::vae::checkpoint::encode_vae(&m), before);
    }

    #[test]
    fn feature_vector_invariants() {
        assert!(FeatureVector::<f64>::new(FeatureKind::Gradient, vec![1.0], None, 0).is_err());
        assert!(FeatureVector::<f64>::new(FeatureKind::LatentLoss, vec![1.0], Some(0), 0).is_err());
        assert!(FeatureVector::<f64>::new(FeatureKind::ReconError, vec![], None, 0).is_err());
    }

    #[test]
    fn cache_roundtrip_and_rejection() {
        let feats: Vec<FeatureVector<f64>> = (0..4)
            .map(|i| FeatureVector::new(FeatureKind::Gradient, vec![i as f64 * 0.5, -1.25, 3.0], Some(2), 100 + i).unwrap())
            .collect();
        let bytes = encode_features(&feats).unwrap();
        let back: Vec<FeatureVector<f64>> = decode_features(&bytes).unwrap();
        assert_eq!(back, feats);
        assert!(decode_features::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_features::<f64>(&bad).is_err());
        let mixed = vec![
            feats[0].clone(),
            FeatureVector::new(FeatureKind::Gradient, vec![1.0, 2.0, 3.0], Some(1), 0).unwrap(),
        ];
        assert!(encode_features(&mixed).is_err());
    }
}
