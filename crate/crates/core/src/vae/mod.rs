//! Fully connected variational autoencoder.
//!
//! Encoder: `input → hidden… → (mu, logvar)`, sigmoid after every hidden layer
//! and plain affine heads. Decoder mirrors the hidden widths and ends in a
//! sigmoid over pixels. Decoder layer `0` is the one fed by the latent code;
//! the last decoder layer produces the image.

pub mod checkpoint;
pub mod loss;
pub mod train;

use std::collections::BTreeMap;

pub use loss::{bce_recon_grad, bce_recon_loss, kl_loss, ElementwiseLoss, BCE_CLAMP};
pub use train::{train_vae, EpochStats, TrainConfig, TrainedVae};

use crate::error::{Error, Result};
use crate::layers::{sigmoid_backward_in_place, sigmoid_in_place, AffineLayer, GradientSet, LayerGrad};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VaeArchitecture {
    pub input_dim: usize,
    /// Encoder hidden widths; the decoder uses them in reverse.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for VaeArchitecture {
    fn default() -> Self {
        Self {
            input_dim: 784,
            hidden: vec![256, 64],
            latent_dim: 10,
        }
    }
}

impl VaeArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::input(format!("architecture dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Reparameterized latent draw; `z = mu + exp(logvar / 2) ⊙ epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
    pub epsilon: Tensor<T>,
    pub z: Tensor<T>,
}

/// Draws `epsilon ~ N(0, I)` from `rng` and forms `z`.
pub fn reparameterize<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, rng: &mut SeededRng) -> Result<LatentSample<T>> {
    let eps = Tensor::from_vec((0..mu.len()).map(|_| rng.normal_as()).collect());
    reparameterize_with(mu, logvar, eps)
}

/// Forms `z` from a caller-supplied `epsilon`.
pub fn reparameterize_with<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>, epsilon: Tensor<T>) -> Result<LatentSample<T>> {
    if mu.len() != logvar.len() || mu.len() != epsilon.len() {
        return Err(Error::Shape {
            expected: vec![mu.len()],
            actual: vec![logvar.len(), epsilon.len()],
        });
    }
    let half = T::lit(0.5);
    let z = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(epsilon.data())
        .map(|((&m, &lv), &e)| m + (lv * half).exp() * e)
        .collect();
    Ok(LatentSample {
        mu: mu.clone(),
        logvar: logvar.clone(),
        epsilon,
        z: Tensor::from_vec(z),
    })
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// `[x, h1, h2, …]`: input to each encoder layer plus the final hidden state.
    pub encoder_acts: Vec<Vec<T>>,
    pub latent: LatentSample<T>,
    /// `[z, d1, …, recon]`: input to each decoder layer plus the output.
    pub decoder_acts: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn recon(&self) -> &[T] {
        self.decoder_acts.last().expect("decoder has at least one layer")
    }
}

/// Scalar loss terms of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub loss: T,
    pub recon_total: T,
    pub kl_total: T,
}

/// Full result of [`vae_loss`].
#[derive(Debug, Clone)]
pub struct VaeLoss<T> {
    pub loss: T,
    pub recon_total: T,
    pub kl_total: T,
    pub latent: LatentSample<T>,
    pub recon: Tensor<T>,
}

/// Parameter gradients laid out like [`VaeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct VaeGrads<T> {
    pub encoder: Vec<LayerGrad<T>>,
    pub mu_head: LayerGrad<T>,
    pub logvar_head: LayerGrad<T>,
    pub decoder: Vec<LayerGrad<T>>,
}

fn zeros_like<T: Scalar>(l: &AffineLayer<T>) -> LayerGrad<T> {
    LayerGrad::zeros(l.out_dim(), l.in_dim())
}

impl<T: Scalar> VaeGrads<T> {
    pub fn zeros_for(model: &VaeModel<T>) -> Self {
        Self {
            encoder: model.encoder.iter().map(zeros_like).collect(),
            mu_head: zeros_like(&model.mu_head),
            logvar_head: zeros_like(&model.logvar_head),
            decoder: model.decoder.iter().map(zeros_like).collect(),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &LayerGrad<T>> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.logvar_head])
            .chain(&self.decoder)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrad<T>> {
        self.encoder
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.logvar_head])
            .chain(&mut self.decoder)
    }

    pub fn fill_zero(&mut self) {
        self.layers_mut().for_each(LayerGrad::fill_zero);
    }

    pub fn scale(&mut self, factor: T) {
        for l in self.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
            l.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Same order as [`VaeModel::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers()
            .flat_map(|l| [l.weight.data(), l.bias.data()])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel<T> {
    encoder: Vec<AffineLayer<T>>,
    mu_head: AffineLayer<T>,
    logvar_head: AffineLayer<T>,
    decoder: Vec<AffineLayer<T>>,
}

/// Backward through a chain of `affine → sigmoid` layers.
///
/// `grad` is the derivative with respect to the chain output. Layers below
/// `lowest` are skipped. `sink(i, input, upstream)` receives every visited
/// layer's input and pre-activation gradient. Returns the gradient with
/// respect to the chain input when `want_input_grad` is set and `lowest == 0`.
fn sigmoid_chain_backward<T: Scalar>(
    layers: &[AffineLayer<T>],
    acts: &[Vec<T>],
    mut grad: Vec<T>,
    lowest: usize,
    want_input_grad: bool,
    mut sink: impl FnMut(usize, &[T], &[T]),
) -> Option<Vec<T>> {
    for i in (lowest..layers.len()).rev() {
        sigmoid_backward_in_place(&acts[i + 1], &mut grad);
        sink(i, &acts[i], &grad);
        if i == lowest && !(want_input_grad && lowest == 0) {
            return None;
        }
        let mut below = vec![T::zero(); layers[i].in_dim()];
        layers[i].input_grad_into(&grad, &mut below);
        grad = below;
    }
    Some(grad)
}

fn sigmoid_chain_forward<T: Scalar>(layers: &[AffineLayer<T>], input: &[T]) -> Vec<Vec<T>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.to_vec());
    for l in layers {
        let mut out = vec![T::zero(); l.out_dim()];
        l.apply_into(acts.last().unwrap(), &mut out);
        sigmoid_in_place(&mut out);
        acts.push(out);
    }
    acts
}

impl<T: Scalar> VaeModel<T> {
    /// Glorot-initialized model.
    pub fn new(arch: &VaeArchitecture, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let mut encoder = Vec::new();
        let mut prev = arch.input_dim;
        for &h in &arch.hidden {
            encoder.push(AffineLayer::glorot(h, prev, rng));
            prev = h;
        }
        let mu_head = AffineLayer::glorot(arch.latent_dim, prev, rng);
        let logvar_head = AffineLayer::glorot(arch.latent_dim, prev, rng);
        let mut decoder = Vec::new();
        let mut prev = arch.latent_dim;
        for &h in arch.hidden.iter().rev() {
            decoder.push(AffineLayer::glorot(h, prev, rng));
            prev = h;
        }
        decoder.push(AffineLayer::glorot(arch.input_dim, prev, rng));
        Self::from_layers(encoder, mu_head, logvar_head, decoder)
    }

    /// Assembles a model, checking that adjacent dimensions chain.
    pub fn from_layers(
        encoder: Vec<AffineLayer<T>>,
        mu_head: AffineLayer<T>,
        logvar_head: AffineLayer<T>,
        decoder: Vec<AffineLayer<T>>,
    ) -> Result<Self> {
        let bad = |what: &str| Err(Error::input(format!("inconsistent VAE layer dimensions: {what}")));
        if decoder.is_empty() {
            return bad("decoder has no layers");
        }
        for pair in encoder.windows(2).chain(decoder.windows(2)) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return bad("hidden layers do not chain");
            }
        }
        let trunk_out = encoder.last().map_or(mu_head.in_dim(), |l| l.out_dim());
        if mu_head.in_dim() != trunk_out || logvar_head.in_dim() != trunk_out {
            return bad("heads do not match the encoder output");
        }
        if mu_head.out_dim() != logvar_head.out_dim() {
            return bad("mu and logvar heads differ in width");
        }
        if decoder[0].in_dim() != mu_head.out_dim() {
            return bad("decoder input differs from latent dimension");
        }
        let input_dim = encoder.first().map_or(mu_head.in_dim(), |l| l.in_dim());
        if decoder.last().unwrap().out_dim() != input_dim {
            return bad("decoder output differs from input dimension");
        }
        Ok(Self {
            encoder,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().map_or(self.mu_head.in_dim(), |l| l.in_dim())
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.out_dim()
    }

    pub fn encoder_layers(&self) -> &[AffineLayer<T>] {
        &self.encoder
    }

    pub fn mu_head(&self) -> &AffineLayer<T> {
        &self.mu_head
    }

    pub fn logvar_head(&self) -> &AffineLayer<T> {
        &self.logvar_head
    }

    pub fn decoder_layers(&self) -> &[AffineLayer<T>] {
        &self.decoder
    }

    pub fn decoder_depth(&self) -> usize {
        self.decoder.len()
    }

    /// Decoder layer by index; `0` is fed by the latent code.
    pub fn decoder_layer(&self, index: usize) -> Option<&AffineLayer<T>> {
        self.decoder.get(index)
    }

    pub fn decoder_layer_mut(&mut self, index: usize) -> Option<&mut AffineLayer<T>> {
        self.decoder.get_mut(index)
    }

    pub fn encoder_layer_mut(&mut self, index: usize) -> Option<&mut AffineLayer<T>> {
        self.encoder.get_mut(index)
    }

    pub fn mu_head_mut(&mut self) -> &mut AffineLayer<T> {
        &mut self.mu_head
    }

    pub fn logvar_head_mut(&mut self) -> &mut AffineLayer<T> {
        &mut self.logvar_head
    }

    /// All layers in storage order: encoder, mu head, logvar head, decoder.
    pub fn layers(&self) -> impl Iterator<Item = &AffineLayer<T>> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.logvar_head])
            .chain(&self.decoder)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(AffineLayer::param_count).sum()
    }

    /// Weight and bias slices in the order used by [`VaeGrads::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in self
            .encoder
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.logvar_head])
            .chain(&mut self.decoder)
        {
            let (w, b) = l.params_mut();
            out.push(w);
            out.push(b);
        }
        out
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: vec![self.input_dim()],
                actual: vec![x.len()],
            });
        }
        Ok(())
    }

    /// Encoder activations plus `(mu, logvar)`.
    pub fn encode(&self, x: &[T]) -> Result<(Vec<Vec<T>>, Tensor<T>, Tensor<T>)> {
        self.check_input(x)?;
        let acts = sigmoid_chain_forward(&self.encoder, x);
        let h = acts.last().unwrap();
        let mu = Tensor::from_vec(self.mu_head.apply(h)?);
        let logvar = Tensor::from_vec(self.logvar_head.apply(h)?);
        Ok((acts, mu, logvar))
    }

    pub fn decode(&self, z: &[T]) -> Result<Tensor<T>> {
        if z.len() != self.latent_dim() {
            return Err(Error::Shape {
                expected: vec![self.latent_dim()],
                actual: vec![z.len()],
            });
        }
        let mut acts = sigmoid_chain_forward(&self.decoder, z);
        Ok(Tensor::from_vec(acts.pop().unwrap()))
    }

    /// Forward pass. With `epsilon = None` the latent path is deterministic
    /// (`z = mu`, recorded epsilon all zeros).
    pub fn forward(&self, x: &[T], epsilon: Option<&[T]>) -> Result<ForwardTrace<T>> {
        let (encoder_acts, mu, logvar) = self.encode(x)?;
        let eps = match epsilon {
            Some(e) => Tensor::from_vec(e.to_vec()),
            None => Tensor::zeros(&[self.latent_dim()]),
        };
        let latent = reparameterize_with(&mu, &logvar, eps)?;
        let decoder_acts = sigmoid_chain_forward(&self.decoder, latent.z.data());
        Ok(ForwardTrace {
            encoder_acts,
            latent,
            decoder_acts,
        })
    }

    /// Loss terms of a traced sample against `target`.
    pub fn loss_terms(&self, trace: &ForwardTrace<T>, target: &[T]) -> Result<LossTerms<T>> {
        let recon_total: T = loss::bce_per_pixel(trace.recon(), target)?.into_iter().sum();
        let kl_total = kl_loss(&trace.latent.mu, &trace.latent.logvar)?.total;
        Ok(LossTerms {
            loss: recon_total + kl_total,
            recon_total,
            kl_total,
        })
    }

    /// Adds the gradient of `J = BCE + KL` for one sample (with the given
    /// epsilon) into `grads` and returns the sample's loss terms.
    pub fn accumulate_loss_gradients(&self, x: &[T], epsilon: &[T], grads: &mut VaeGrads<T>) -> Result<LossTerms<T>> {
        let trace = self.forward(x, Some(epsilon))?;
        let terms = self.loss_terms(&trace, x)?;

        let mut g = vec![T::zero(); x.len()];
        bce_recon_grad(trace.recon(), x, &mut g);
        let dz = sigmoid_chain_backward(&self.decoder, &trace.decoder_acts, g, 0, true, |i, input, up| {
            self.decoder[i].accumulate_param_grads(input, up, &mut grads.decoder[i])
        })
        .expect("input gradient requested");

        let half = T::lit(0.5);
        let lat = &trace.latent;
        let mut dmu = vec![T::zero(); dz.len()];
        let mut dlogvar = vec![T::zero(); dz.len()];
        for i in 0..dz.len() {
            let m = lat.mu.data()[i];
            let lv = lat.logvar.data()[i];
            let e = lat.epsilon.data()[i];
            dmu[i] = dz[i] + m;
            dlogvar[i] = dz[i] * e * half * (half * lv).exp() + half * (lv.exp() - T::one());
        }
        let h = trace.encoder_acts.last().unwrap();
        self.mu_head.accumulate_param_grads(h, &dmu, &mut grads.mu_head);
        self.logvar_head.accumulate_param_grads(h, &dlogvar, &mut grads.logvar_head);
        if !self.encoder.is_empty() {
            let mut dh = vec![T::zero(); h.len()];
            let mut tmp = vec![T::zero(); h.len()];
            self.mu_head.input_grad_into(&dmu, &mut dh);
            self.logvar_head.input_grad_into(&dlogvar, &mut tmp);
            dh.iter_mut().zip(&tmp).for_each(|(a, b)| *a += *b);
            sigmoid_chain_backward(&self.encoder, &trace.encoder_acts, dh, 0, false, |i, input, up| {
                self.encoder[i].accumulate_param_grads(input, up, &mut grads.encoder[i])
            });
        }
        Ok(terms)
    }

    /// Gradient of the loss `J` for one sample with a fixed epsilon.
    pub fn loss_gradients(&self, x: &[T], epsilon: &[T]) -> Result<(LossTerms<T>, VaeGrads<T>)> {
        let mut grads = VaeGrads::zeros_for(self);
        let terms = self.accumulate_loss_gradients(x, epsilon, &mut grads)?;
        Ok((terms, grads))
    }

    /// Per-sample gradients of the reconstruction BCE alone with respect to the
    /// requested decoder layers, using the deterministic path `z = mu`.
    /// The model is only read.
    pub fn decoder_recon_gradients(&self, x: &[T], sample_id: u64, layers: &[usize]) -> Result<GradientSet<T>> {
        let Some(&lowest) = layers.iter().min() else {
            return Err(Error::input("no decoder layer requested"));
        };
        if let Some(&bad) = layers.iter().find(|&&i| i >= self.decoder.len()) {
            return Err(Error::input(format!(
                "decoder layer index {bad} out of range (decoder has {} layers)",
                self.decoder.len()
            )));
        }
        let (_, mu, _) = self.encode(x)?;
        let acts = sigmoid_chain_forward(&self.decoder, mu.data());
        let mut g = vec![T::zero(); x.len()];
        bce_recon_grad(acts.last().unwrap(), x, &mut g);
        let mut out = BTreeMap::new();
        sigmoid_chain_backward(&self.decoder, &acts, g, lowest, false, |i, input, up| {
            if layers.contains(&i) {
                let mut lg = zeros_like(&self.decoder[i]);
                self.decoder[i].accumulate_param_grads(input, up, &mut lg);
                out.insert(i, lg);
            }
        });
        Ok(GradientSet { sample_id, layers: out })
    }
}

/// One stochastic evaluation of `J(x) = BCE(x, recon) + KL`, drawing epsilon from `rng`.
pub fn vae_loss<T: Scalar>(model: &VaeModel<T>, x: &Tensor<T>, rng: &mut SeededRng) -> Result<VaeLoss<T>> {
    let eps: Vec<T> = (0..model.latent_dim()).map(|_| rng.normal_as()).collect();
    let trace = model.forward(x.data(), Some(&eps))?;
    let terms = model.loss_terms(&trace, x.data())?;
    Ok(VaeLoss {
        loss: terms.loss,
        recon_total: terms.recon_total,
        kl_total: terms.kl_total,
        recon: Tensor::new(x.shape().to_vec(), trace.recon().to_vec())?,
        latent: trace.latent,
    })
}
