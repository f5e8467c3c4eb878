//! Synthetic distortions: Gaussian-noise pseudo-outliers for detector
//! training, and five-level acquisition/environment challenges for
//! novel-condition evaluation.
//!
//! Level maps (level `l` in 1..=5, sizes scale with `min(h, w) / 28`):
//!
//! | kind           | effect                                                   |
//! |----------------|----------------------------------------------------------|
//! | GaussianNoise  | additive N(0, (0.1 l)²)                                  |
//! | GaussianBlur   | Gaussian kernel, σ = 0.5 l                               |
//! | LensBlur       | uniform disk kernel, radius l                            |
//! | DirtyLens      | 2 l soft dark blobs, alpha-blended towards black          |
//! | Rain           | 3 l bright streaks along the (1, 2) diagonal             |
//! | Haze           | mild blur (σ = 0.5) then blend with white, weight 0.15 l |
//!
//! Level 0 is the identity for every kind. Random elements are drawn one
//! after another from the caller's generator, so with equal seeds level `l`
//! reuses exactly the blobs/streaks of level `l - 1` and adds more.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_LEVEL: u8 = 5;

/// Default sigma for the Gaussian-noise training outliers.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengeKind {
    GaussianNoise,
    GaussianBlur,
    LensBlur,
    DirtyLens,
    Rain,
    Haze,
}

impl ChallengeKind {
    pub const ALL: [ChallengeKind; 6] = [
        ChallengeKind::GaussianNoise,
        ChallengeKind::GaussianBlur,
        ChallengeKind::LensBlur,
        ChallengeKind::DirtyLens,
        ChallengeKind::Rain,
        ChallengeKind::Haze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChallengeKind::GaussianNoise => "gaussian_noise",
            ChallengeKind::GaussianBlur => "gaussian_blur",
            ChallengeKind::LensBlur => "lens_blur",
            ChallengeKind::DirtyLens => "dirty_lens",
            ChallengeKind::Rain => "rain",
            ChallengeKind::Haze => "haze",
        }
    }
}

impl fmt::Display for ChallengeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChallengeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::input(format!("unknown challenge kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChallengeSpec {
    pub kind: ChallengeKind,
    pub level: u8,
}

impl ChallengeSpec {
    pub fn new(kind: ChallengeKind, level: u8) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::input(format!("challenge level {level} outside 0..={MAX_LEVEL}")));
        }
        Ok(Self { kind, level })
    }
}

fn check_unit<T: Scalar>(x: &Tensor<T>) -> Result<()> {
    if !x.data().iter().all(|&v| v >= T::zero() && v <= T::one()) {
        return Err(Error::input("image values must lie in [0, 1]"));
    }
    Ok(())
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// `clamp(x + sigma * N(0, 1), 0, 1)` per pixel.
pub fn gaussian_noise<T: Scalar>(x: &Tensor<T>, sigma: f64, rng: &mut SeededRng) -> Result<Tensor<T>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::input(format!("noise sigma must be >= 0, got {sigma}")));
    }
    check_unit(x)?;
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let s = T::lit(sigma);
    let data = x.data().iter().map(|&v| clamp01(v + s * rng.normal_as::<T>())).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Applies a challenge to a 2-D `[h, w]` image.
pub fn apply_challenge<T: Scalar>(x: &Tensor<T>, spec: ChallengeSpec, rng: &mut SeededRng) -> Result<Tensor<T>> {
    let spec = ChallengeSpec::new(spec.kind, spec.level)?;
    let &[h, w] = x.shape() else {
        return Err(Error::input(format!("challenges need a 2-D image, got shape {:?}", x.shape())));
    };
    check_unit(x)?;
    if spec.level == 0 {
        return Ok(x.clone());
    }
    let level = spec.level as f64;
    let scale = h.min(w) as f64 / 28.0;
    let img: Vec<f64> = x.data().iter().map(|v| v.to_f64_lossy()).collect();
    let out = match spec.kind {
        ChallengeKind::GaussianNoise => return gaussian_noise(x, 0.1 * level, rng),
        ChallengeKind::GaussianBlur => convolve_reflect(&img, h, w, &gaussian_kernel(0.5 * level)),
        ChallengeKind::LensBlur => convolve_reflect(&img, h, w, &disk_kernel(level)),
        ChallengeKind::DirtyLens => dirty_lens(&img, h, w, 2 * spec.level as usize, scale, rng),
        ChallengeKind::Rain => rain(&img, h, w, 3 * spec.level as usize, scale, rng),
        ChallengeKind::Haze => {
            let strength = (3 * spec.level as usize) as f64 / 20.0;
            convolve_reflect(&img, h, w, &gaussian_kernel(0.5))
                .into_iter()
                .map(|v| v * (1.0 - strength) + strength)
                .collect()
        }
    };
    Tensor::new(vec![h, w], out.into_iter().map(|v| T::from_f64_lossy(v.clamp(0.0, 1.0))).collect())
}

/// Square convolution kernel, odd side length, weights summing to one.
#[derive(Debug, Clone)]
pub struct Kernel {
    radius: usize,
    weights: Vec<f64>,
}

pub fn gaussian_kernel(sigma: f64) -> Kernel {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let side = 2 * radius + 1;
    let r = radius as f64;
    let mut weights = Vec::with_capacity(side * side);
    for dy in 0..side {
        for dx in 0..side {
            let (y, x) = (dy as f64 - r, dx as f64 - r);
            weights.push((-(x * x + y * y) / (2.0 * sigma * sigma)).exp());
        }
    }
    normalized(radius, weights)
}

pub fn disk_kernel(radius: f64) -> Kernel {
    let rad = radius.ceil() as usize;
    let side = 2 * rad + 1;
    let r = rad as f64;
    let mut weights = Vec::with_capacity(side * side);
    for dy in 0..side {
        for dx in 0..side {
            let (y, x) = (dy as f64 - r, dx as f64 - r);
            weights.push(if x * x + y * y <= radius * radius { 1.0 } else { 0.0 });
        }
    }
    normalized(rad, weights)
}

fn normalized(radius: usize, mut weights: Vec<f64>) -> Kernel {
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= sum);
    Kernel { radius, weights }
}

/// Mirror index into `0..n` without repeating the edge sample (`-1 → 1`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

pub fn convolve_reflect(img: &[f64], h: usize, w: usize, kernel: &Kernel) -> Vec<f64> {
    let r = kernel.radius as isize;
    let side = 2 * kernel.radius + 1;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..side {
                let sy = reflect(y as isize + ky as isize - r, h);
                let row = &img[sy * w..(sy + 1) * w];
                for kx in 0..side {
                    let wgt = kernel.weights[ky * side + kx];
                    if wgt != 0.0 {
                        acc += wgt * row[reflect(x as isize + kx as isize - r, w)];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn dirty_lens(img: &[f64], h: usize, w: usize, blobs: usize, scale: f64, rng: &mut SeededRng) -> Vec<f64> {
    let mut out = img.to_vec();
    for _ in 0..blobs {
        let cy = rng.uniform() * h as f64;
        let cx = rng.uniform() * w as f64;
        let radius = rng.uniform_range(1.5, 4.0) * scale;
        let opacity = rng.uniform_range(0.5, 0.9);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                let alpha = opacity * (-d2 / (2.0 * radius * radius)).exp();
                out[y * w + x] *= 1.0 - alpha;
            }
        }
    }
    out
}

fn rain(img: &[f64], h: usize, w: usize, streaks: usize, scale: f64, rng: &mut SeededRng) -> Vec<f64> {
    let mut out = img.to_vec();
    let (dx, dy) = (1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt());
    let mut touched = vec![false; h * w];
    for _ in 0..streaks {
        let y0 = rng.uniform() * h as f64;
        let x0 = rng.uniform() * w as f64;
        let length = rng.uniform_range(5.0, 10.0) * scale;
        let intensity = rng.uniform_range(0.6, 0.9);
        touched.iter_mut().for_each(|t| *t = false);
        let steps = (length * 2.0).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 * 0.5;
            let (y, x) = ((y0 + t * dy).floor(), (x0 + t * dx).floor());
            if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                break;
            }
            let k = y as usize * w + x as usize;
            if !touched[k] {
                touched[k] = true;
                out[k] += (1.0 - out[k]) * intensity;
            }
        }
    }
    out
}
