//! Novelty detection from the perspective of the model.
//!
//! A variational autoencoder is trained on inlier images. Each query image is
//! then characterized by how much it would *change the model*: the
//! backpropagated gradient of its reconstruction error with respect to a
//! decoder layer. Activation-based baselines (per-pixel reconstruction error
//! and per-dimension latent loss) are produced alongside. A shallow detector is
//! trained on clean inliers against noise-distorted inliers and scored with
//! AUROC on novel classes or novel acquisition conditions.
//!
//! All numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases at
//! the crate root fix it to `f64`, which is what the pipeline uses.

pub mod codec;
pub mod data_io;
pub mod detector;
pub mod error;
pub mod eval;
pub mod features;
pub mod layers;
pub mod optim;
pub mod outlier_synth;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Affine64 = layers::AffineLayer<f64>;
pub type Vae64 = vae::VaeModel<f64>;
pub type Vae32 = vae::VaeModel<f32>;
pub type Detector64 = detector::DetectorModel<f64>;
pub type Dataset64 = data_io::LabeledDataset<f64>;
pub type Features64 = features::FeatureVector<f64>;
