//! Affine and sigmoid layers with explicit forward/backward passes.
//!
//! Each layer offers two entry points:
//! * a cached API (`forward` then `backward`) that mirrors a classic
//!   single-sample layer object and errors if `backward` runs without a
//!   preceding `forward`;
//! * a pure API (`apply`, `accumulate_backward`) taking the activations
//!   explicitly, so an immutable parameter snapshot can be shared across
//!   threads while each worker keeps its own activations.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::{axpy, dot, Scalar};
use crate::tensor::Tensor;

/// Logistic function, branching on sign so `exp` never overflows.
#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Weight and bias gradient of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LayerGrad<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn fill_zero(&mut self) {
        self.weight.data_mut().iter_mut().for_each(|v| *v = T::zero());
        self.bias.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }

    /// Weights (row-major) followed by biases.
    pub fn flatten(&self, include_bias: bool) -> Vec<T> {
        let mut out = Vec::with_capacity(self.weight.len() + self.bias.len());
        out.extend_from_slice(self.weight.data());
        if include_bias {
            out.extend_from_slice(self.bias.data());
        }
        out
    }
}

/// Result of [`AffineLayer::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBackward<T> {
    pub input_grad: Tensor<T>,
    pub weight_grad: Tensor<T>,
    pub bias_grad: Tensor<T>,
}

/// Per-sample parameter gradients keyed by layer index. Never batch-summed.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub sample_id: u64,
    pub layers: BTreeMap<usize, LayerGrad<T>>,
}

/// `output = weights · input + bias`, weights stored `[out_dim × in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer<T> {
    weights: Tensor<T>,
    bias: Tensor<T>,
    cached_input: Option<Vec<T>>,
}

impl<T: Scalar> AffineLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::input(format!(
                "affine weights must be 2-D, got shape {:?}",
                weights.shape()
            )));
        }
        let out_dim = weights.shape()[0];
        if bias.shape() != [out_dim] {
            return Err(Error::Shape {
                expected: vec![out_dim],
                actual: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weights,
            bias,
            cached_input: None,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
            cached_input: None,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| T::from_f64_lossy(rng.uniform_range(-limit, limit)))
            .collect();
        Self {
            weights: Tensor::new(vec![out_dim, in_dim], data).expect("shape is consistent"),
            bias: Tensor::zeros(&[out_dim]),
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        self.weights.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        self.bias.data_mut()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn params_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.weights.data_mut(), self.bias.data_mut())
    }

    fn check_len(&self, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Shape {
                expected: vec![want],
                actual: vec![got],
            });
        }
        Ok(())
    }

    /// Pure forward pass; does not touch the cache.
    pub fn apply(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_len(input.len(), self.in_dim())?;
        let mut out = vec![T::zero(); self.out_dim()];
        self.apply_into(input, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, input: &[T], out: &mut [T]) {
        let in_dim = self.in_dim();
        for ((o, row), b) in out
            .iter_mut()
            .zip(self.weights.data().chunks_exact(in_dim))
            .zip(self.bias.data())
        {
            *o = dot(row, input) + *b;
        }
    }

    /// Forward pass that caches `input` for a later [`backward`](Self::backward).
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply(input.data())?;
        self.cached_input = Some(input.data().to_vec());
        Ok(Tensor::from_vec(out))
    }

    /// Consumes the cached input from the preceding `forward`.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<AffineBackward<T>> {
        self.check_len(upstream.len(), self.out_dim())?;
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::State("affine backward called without a preceding forward".into()))?;
        let mut grads = LayerGrad::zeros(self.out_dim(), self.in_dim());
        let mut input_grad = vec![T::zero(); self.in_dim()];
        self.accumulate_backward(&input, upstream.data(), &mut grads, Some(&mut input_grad));
        Ok(AffineBackward {
            input_grad: Tensor::from_vec(input_grad),
            weight_grad: grads.weight,
            bias_grad: grads.bias,
        })
    }

    /// Adds this sample's parameter gradients into `grads` and, when asked,
    /// writes (overwrites) the gradient with respect to the input.
    pub fn accumulate_backward(
        &self,
        input: &[T],
        upstream: &[T],
        grads: &mut LayerGrad<T>,
        input_grad: Option<&mut [T]>,
    ) {
        self.accumulate_param_grads(input, upstream, grads);
        if let Some(ig) = input_grad {
            self.input_grad_into(upstream, ig);
        }
    }

    pub(crate) fn accumulate_param_grads(&self, input: &[T], upstream: &[T], grads: &mut LayerGrad<T>) {
        let in_dim = self.in_dim();
        debug_assert_eq!(input.len(), in_dim);
        debug_assert_eq!(upstream.len(), self.out_dim());
        for ((g_row, &u), gb) in grads
            .weight
            .data_mut()
            .chunks_exact_mut(in_dim)
            .zip(upstream)
            .zip(grads.bias.data_mut())
        {
            if u != T::zero() {
                axpy(u, input, g_row);
            }
            *gb += u;
        }
    }

    /// `input_grad = weightsᵀ · upstream`
    pub(crate) fn input_grad_into(&self, upstream: &[T], input_grad: &mut [T]) {
        input_grad.iter_mut().for_each(|v| *v = T::zero());
        for (row, &u) in self.weights.data().chunks_exact(self.in_dim()).zip(upstream) {
            if u != T::zero() {
                axpy(u, row, input_grad);
            }
        }
    }
}

/// Elementwise logistic activation with an output cache.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sigmoid<T> {
    cached_output: Option<Vec<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { cached_output: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Tensor<T> {
        let out = input.map(sigmoid);
        self.cached_output = Some(out.data().to_vec());
        out
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self
            .cached_output
            .take()
            .ok_or_else(|| Error::State("sigmoid backward called without a preceding forward".into()))?;
        if s.len() != upstream.len() {
            return Err(Error::Shape {
                expected: vec![s.len()],
                actual: upstream.shape().to_vec(),
            });
        }
        let mut g = upstream.data().to_vec();
        sigmoid_backward_in_place(&s, &mut g);
        Tensor::new(upstream.shape().to_vec(), g)
    }
}

pub(crate) fn sigmoid_in_place<T: Scalar>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = sigmoid(*x));
}

/// `grad *= s (1 - s)` where `s` is the sigmoid output.
pub(crate) fn sigmoid_backward_in_place<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &s) in grad.iter_mut().zip(output) {
        *g *= s * (T::one() - s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec())
    }

    fn layer(w: &[f64], out: usize, inp: usize, b: &[f64]) -> AffineLayer<f64> {
        AffineLayer::new(Tensor::new(vec![out, inp], w.to_vec()).unwrap(), t(b)).unwrap()
    }

    #[test]
    fn affine_identity() {
        let mut l = layer(&[1.0, 0.0, 0.0, 1.0], 2, 2, &[0.0, 0.0]);
        assert_eq!(l.forward(&t(&[3.0, -1.0])).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn affine_zero_weights_gives_bias() {
        let mut l = layer(&[0.0; 4], 2, 2, &[5.0, 5.0]);
        assert_eq!(l.forward(&t(&[0.3, -7.0])).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn affine_matrix_vector() {
        let mut l = layer(&[1.0, 2.0, 3.0, 4.0], 2, 2, &[0.0, 0.0]);
        assert_eq!(l.forward(&t(&[1.0, 1.0])).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn affine_dimension_mismatch() {
        let mut l = AffineLayer::<f64>::zeros(2, 3);
        assert!(matches!(l.forward(&t(&[1.0, 2.0])), Err(Error::Shape { .. })));
        assert!(AffineLayer::new(Tensor::<f64>::zeros(&[2, 3]), Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn affine_backward_requires_forward() {
        let mut l = AffineLayer::<f64>::zeros(2, 2);
        assert!(matches!(l.backward(&t(&[1.0, 1.0])), Err(Error::State(_))));
        l.forward(&t(&[1.0, 1.0])).unwrap();
        l.backward(&t(&[1.0, 1.0])).unwrap();
        // the cache is consumed
        assert!(matches!(l.backward(&t(&[1.0, 1.0])), Err(Error::State(_))));
    }

    #[test]
    fn affine_zero_upstream() {
        let mut rng = SeededRng::new(1);
        let mut l = AffineLayer::<f64>::glorot(3, 4, &mut rng);
        l.forward(&t(&[0.1, 0.2, 0.3, 0.4])).unwrap();
        let g = l.backward(&t(&[0.0, 0.0, 0.0])).unwrap();
        assert!(g.input_grad.data().iter().all(|&v| v == 0.0));
        assert!(g.weight_grad.data().iter().all(|&v| v == 0.0));
        assert!(g.bias_grad.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.weight_grad.shape(), l.weights().shape());
        assert_eq!(g.bias_grad.shape(), l.bias().shape());
    }

    #[test]
    fn affine_identity_transpose() {
        let mut l = layer(&[1.0, 0.0, 0.0, 1.0], 2, 2, &[0.0, 0.0]);
        l.forward(&t(&[9.0, 9.0])).unwrap();
        let g = l.backward(&t(&[0.25, -2.0])).unwrap();
        assert_eq!(g.input_grad.data(), &[0.25, -2.0]);
        assert_eq!(g.weight_grad.data(), &[2.25, 2.25, -18.0, -18.0]);
    }

    #[test]
    fn affine_weight_grad_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        let mut l = AffineLayer::<f64>::glorot(3, 4, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let probe: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let loss = |l: &AffineLayer<f64>| -> f64 {
            l.apply(&x).unwrap().iter().zip(&probe).map(|(o, c)| c * o * o).sum()
        };
        let out = l.forward(&Tensor::from_vec(x.clone())).unwrap();
        let upstream: Vec<f64> = out.data().iter().zip(&probe).map(|(o, c)| 2.0 * c * o).collect();
        let g = l.backward(&Tensor::from_vec(upstream)).unwrap();
        let h = 1e-5;
        for k in 0..12 {
            let mut plus = l.clone();
            plus.weights_mut()[k] += h;
            let mut minus = l.clone();
            minus.weights_mut()[k] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = g.weight_grad.data()[k];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-12);
            assert!(rel < 1e-6, "entry {k}: analytic {an}, numeric {fd}");
        }
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(500.0f64) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-500.0f64) >= 0.0);
        assert!(sigmoid(-500.0f64).is_finite());
        assert!((sigmoid(3.0f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_backward_values() {
        let mut s = Sigmoid::<f64>::new();
        assert!(matches!(s.backward(&t(&[1.0])), Err(Error::State(_))));
        s.forward(&t(&[0.0]));
        assert_eq!(s.backward(&t(&[1.0])).unwrap().data(), &[0.25]);
        s.forward(&t(&[3.7]));
        assert_eq!(s.backward(&t(&[0.0])).unwrap().data(), &[0.0]);
    }

    #[test]
    fn sigmoid_backward_matches_finite_differences() {
        let mut rng = SeededRng::new(5);
        let xs: Vec<f64> = (0..8).map(|_| 3.0 * rng.normal()).collect();
        let probe: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let mut s = Sigmoid::new();
        s.forward(&Tensor::from_vec(xs.clone()));
        let g = s.backward(&Tensor::from_vec(probe.clone())).unwrap();
        let h = 1e-5;
        for i in 0..8 {
            let fd = probe[i] * (sigmoid(xs[i] + h) - sigmoid(xs[i] - h)) / (2.0 * h);
            let an = g.data()[i];
            assert!((fd - an).abs() / an.abs().max(1e-12) < 1e-6, "{i}: {an} vs {fd}");
        }
    }

    #[test]
    fn pure_and_cached_paths_agree() {
        let mut rng = SeededRng::new(8);
        let mut l = AffineLayer::<f64>::glorot(5, 7, &mut rng);
        let x: Vec<f64> = (0..7).map(|_| rng.normal()).collect();
        let u: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        assert_eq!(l.apply(&x).unwrap(), l.forward(&Tensor::from_vec(x.clone())).unwrap().into_vec());
        let cached = l.backward(&Tensor::from_vec(u.clone())).unwrap();
        let mut acc = LayerGrad::zeros(5, 7);
        let mut ig = vec![0.0; 7];
        l.accumulate_backward(&x, &u, &mut acc, Some(&mut ig));
        assert_eq!(acc.weight, cached.weight_grad);
        assert_eq!(acc.bias, cached.bias_grad);
        assert_eq!(ig, cached.input_grad.into_vec());
    }
}
