//! Reconstruction (binary cross entropy) and latent (KL) loss terms.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reconstructions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking
/// logs. The same clamp is applied in [`bce_recon_grad`], where a clamped
/// element has zero derivative.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ElementwiseLoss<T> {
    pub per_element: Tensor<T>,
    pub total: T,
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            expected: vec![a],
            actual: vec![b],
        });
    }
    Ok(())
}

/// Per-pixel `-(t ln p + (1 - t) ln(1 - p))` and its sum.
pub fn bce_recon_loss<T: Scalar>(recon: &Tensor<T>, target: &Tensor<T>) -> Result<ElementwiseLoss<T>> {
    check_same_len(target.len(), recon.len())?;
    let per = bce_per_pixel(recon.data(), target.data())?;
    let total = per.iter().copied().sum();
    Ok(ElementwiseLoss {
        per_element: Tensor::new(recon.shape().to_vec(), per)?,
        total,
    })
}

pub(crate) fn bce_per_pixel<T: Scalar>(recon: &[T], target: &[T]) -> Result<Vec<T>> {
    let eps = T::lit(BCE_CLAMP);
    let hi = T::one() - eps;
    recon
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            if !(t >= T::zero() && t <= T::one()) {
                return Err(Error::input(format!("BCE target {t} outside [0, 1]")));
            }
            if p.is_nan() {
                return Err(Error::NonFinite("reconstruction contains NaN".into()));
            }
            let p = p.max(eps).min(hi);
            Ok(-(t * p.ln() + (T::one() - t) * (T::one() - p).ln()))
        })
        .collect()
}

/// Derivative of the summed BCE with respect to each reconstruction value.
pub fn bce_recon_grad<T: Scalar>(recon: &[T], target: &[T], out: &mut [T]) {
    let eps = T::lit(BCE_CLAMP);
    let hi = T::one() - eps;
    for ((o, &p), &t) in out.iter_mut().zip(recon).zip(target) {
        *o = if p < eps || p > hi {
            T::zero()
        } else {
            (T::one() - t) / (T::one() - p) - t / p
        };
    }
}

/// KL divergence of `N(mu, exp(logvar))` from `N(0, I)`, per latent dimension.
pub fn kl_loss<T: Scalar>(mu: &Tensor<T>, logvar: &Tensor<T>) -> Result<ElementwiseLoss<T>> {
    check_same_len(mu.len(), logvar.len())?;
    let half = T::lit(0.5);
    let per: Vec<T> = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .collect();
    let total = per.iter().copied().sum();
    Ok(ElementwiseLoss {
        per_element: Tensor::new(mu.shape().to_vec(), per)?,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn bce_closed_forms() {
        let l = bce_recon_loss(&t(&[0.5]), &t(&[1.0])).unwrap();
        assert!((l.total - 2f64.ln()).abs() < 1e-15);
        let l = bce_recon_loss(&t(&[0.8]), &t(&[1.0])).unwrap();
        assert!((l.total - 0.223144).abs() < 1e-6);
    }

    #[test]
    fn bce_perfect_binary_reconstruction() {
        let target = t(&[0.0, 1.0, 1.0, 0.0, 1.0]);
        let l = bce_recon_loss(&target, &target).unwrap();
        assert!(l.total >= 0.0 && l.total < 5.0 * 1e-6, "{}", l.total);
    }

    #[test]
    fn bce_rejects_targets_outside_unit_interval() {
        assert!(bce_recon_loss(&t(&[0.5]), &t(&[1.5])).is_err());
        assert!(bce_recon_loss(&t(&[0.5, 0.5]), &t(&[1.0])).is_err());
    }

    #[test]
    fn bce_grad_vanishes_at_target_and_when_clamped() {
        let mut g = [1.0; 3];
        bce_recon_grad(&[0.3, 0.0, 1.0], &[0.3, 1.0, 0.0], &mut g);
        assert_eq!(g, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_loss(&t(&[0.0]), &t(&[0.0])).unwrap().total, 0.0);
        assert_eq!(kl_loss(&t(&[1.0]), &t(&[0.0])).unwrap().total, 0.5);
        let v = kl_loss(&t(&[0.0]), &t(&[2f64.ln()])).unwrap().total;
        assert!((v - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.153426).abs() < 1e-6);
    }

    #[test]
    fn kl_is_zero_only_at_the_prior() {
        assert!(kl_loss(&t(&[1e-3, 0.0]), &t(&[0.0, 0.0])).unwrap().total > 1e-12);
        assert!(kl_loss(&t(&[0.0, 0.0]), &t(&[0.0, -1e-3])).unwrap().total > 1e-12);
    }
}
