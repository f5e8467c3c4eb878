//! Mini-batch Adam training of the VAE.

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{VaeArchitecture, VaeGrads, VaeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub latent_dim: usize,
    /// Encoder hidden widths, mirrored by the decoder.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            latent_dim: 10,
            hidden: vec![256, 64],
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn architecture(&self, input_dim: usize) -> VaeArchitecture {
        VaeArchitecture {
            input_dim,
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::input("epochs and batch_size must be positive"));
        }
        self.adam().validate()?;
        self.architecture(1).validate()
    }

    /// The model `train_vae` starts from for this config.
    pub fn initial_model<T: Scalar>(&self, input_dim: usize) -> Result<VaeModel<T>> {
        let mut rng = SeededRng::new(self.seed).derive_named("vae/init");
        VaeModel::new(&self.architecture(input_dim), &mut rng)
    }
}

/// Per-sample means over one epoch, measured while training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedVae<T> {
    pub model: VaeModel<T>,
    pub trace: Vec<EpochStats>,
}

/// Trains on `inliers` (flattened or 2-D images in `[0, 1]`).
///
/// Bit-deterministic given `config.seed`: initialization, epoch shuffling and
/// reparameterization noise come from separate derived streams.
pub fn train_vae<T: Scalar>(inliers: &[Tensor<T>], config: &TrainConfig) -> Result<TrainedVae<T>> {
    config.validate()?;
    let Some(first) = inliers.first() else {
        return Err(Error::input("cannot train a VAE on an empty dataset"));
    };
    let dim = first.len();
    for (i, x) in inliers.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::input(format!("image {i} has {} pixels, expected {dim}", x.len())));
        }
        if !x.data().iter().all(|&v| v >= T::zero() && v <= T::one()) {
            return Err(Error::input(format!("image {i} has pixels outside [0, 1]")));
        }
    }

    let root = SeededRng::new(config.seed);
    let mut order_rng = root.derive_named("vae/order");
    let mut eps_rng = root.derive_named("vae/epsilon");
    let mut model: VaeModel<T> = config.initial_model(dim)?;
    let mut grads = VaeGrads::zeros_for(&model);
    let sizes: Vec<usize> = grads.slices().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(config.adam(), &sizes);

    let mut order: Vec<usize> = (0..inliers.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let latent = model.latent_dim();
    let mut eps = vec![T::zero(); latent];
    for epoch in 0..config.epochs {
        order_rng.shuffle(&mut order);
        let (mut sum_loss, mut sum_recon, mut sum_kl) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            grads.fill_zero();
            for &i in batch {
                eps.iter_mut().for_each(|e| *e = eps_rng.normal_as());
                let terms = model.accumulate_loss_gradients(inliers[i].data(), &eps, &mut grads)?;
                let loss = terms.loss.to_f64_lossy();
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "VAE loss {loss} at epoch {epoch}, sample {i} (recon {}, kl {})",
                        terms.recon_total, terms.kl_total
                    )));
                }
                sum_loss += loss;
                sum_recon += terms.recon_total.to_f64_lossy();
                sum_kl += terms.kl_total.to_f64_lossy();
            }
            grads.scale(T::one() / T::lit(batch.len() as f64));
            adam.step(model.param_slices_mut(), grads.slices());
        }
        let n = inliers.len() as f64;
        trace.push(EpochStats {
            epoch,
            loss: sum_loss / n,
            recon: sum_recon / n,
            kl: sum_kl / n,
        });
    }
    Ok(TrainedVae { model, trace })
}
