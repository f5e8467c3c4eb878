//! Independent numerical oracles shared by the integration tests and the
//! acceptance suite.

#![allow(dead_code)]

use std::path::Path;

use gradnovel::data_io::{load_cifar10, load_idx};
use gradnovel::eval::auroc;
use gradnovel::layers::AffineLayer;
use gradnovel::vae::{kl_loss, VaeArchitecture, VaeModel};
use gradnovel::{Error, SeededRng, Tensor64};

/// Norm-wise relative error `|a - b| / max(|a| + |b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

fn random_layer(out: usize, inp: usize, scale: f64, rng: &mut SeededRng) -> AffineLayer<f64> {
    let w = Tensor64::new(vec![out, inp], (0..out * inp).map(|_| rng.normal() * scale).collect()).unwrap();
    let b = Tensor64::new(vec![out], (0..out).map(|_| rng.normal() * 0.1).collect()).unwrap();
    AffineLayer::new(w, b).unwrap()
}

/// Random VAE: Glorot-like weights rescaled so activations stay away from
/// saturation.
pub fn random_vae(arch: &VaeArchitecture, rng: &mut SeededRng) -> VaeModel<f64> {
    let mut dims = vec![arch.input_dim];
    dims.extend(&arch.hidden);
    let enc: Vec<_> = dims
        .windows(2)
        .map(|w| random_layer(w[1], w[0], (1.0 / w[0] as f64).sqrt(), rng))
        .collect();
    let last = *dims.last().unwrap();
    let mu = random_layer(arch.latent_dim, last, (1.0 / last as f64).sqrt(), rng);
    let lv = random_layer(arch.latent_dim, last, 0.5 * (1.0 / last as f64).sqrt(), rng);
    let mut rdims: Vec<usize> = vec![arch.latent_dim];
    rdims.extend(arch.hidden.iter().rev());
    rdims.push(arch.input_dim);
    let dec: Vec<_> = rdims
        .windows(2)
        .map(|w| random_layer(w[1], w[0], (1.0 / w[0] as f64).sqrt(), rng))
        .collect();
    VaeModel::from_layers(enc, mu, lv, dec).unwrap()
}

fn total_loss(model: &VaeModel<f64>, x: &[f64], eps: &[f64]) -> f64 {
    let trace = model.forward(x, Some(eps)).unwrap();
    model.loss_terms(&trace, x).unwrap().loss
}

fn recon_loss_mu(model: &VaeModel<f64>, x: &[f64]) -> f64 {
    let trace = model.forward(x, None).unwrap();
    model.loss_terms(&trace, x).unwrap().recon_total
}

/// Central differences of `f` at `coords` of parameter slice `slice`.
fn central_diff(
    model: &VaeModel<f64>,
    slice: usize,
    coords: &[usize],
    h: f64,
    f: &dyn Fn(&VaeModel<f64>) -> f64,
) -> Vec<f64> {
    let mut m = model.clone();
    coords
        .iter()
        .map(|&c| {
            let orig = m.param_slices_mut()[slice][c];
            m.param_slices_mut()[slice][c] = orig + h;
            let up = f(&m);
            m.param_slices_mut()[slice][c] = orig - h;
            let down = f(&m);
            m.param_slices_mut()[slice][c] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradReport {
    pub configurations: usize,
    pub comparisons: usize,
    pub worst_rel_err: f64,
}

impl GradReport {
    fn add(&mut self, err: f64) {
        self.comparisons += 1;
        self.worst_rel_err = self.worst_rel_err.max(err);
    }
}

/// Architectures: mostly small random ones plus the largest supported shape.
fn architecture(i: usize, rng: &mut SeededRng) -> VaeArchitecture {
    if i.is_multiple_of(25) {
        return VaeArchitecture {
            input_dim: 784,
            hidden: vec![64],
            latent_dim: 10,
        };
    }
    let depth = 1 + rng.below(2);
    VaeArchitecture {
        input_dim: 2 + rng.below(30),
        hidden: (0..depth).map(|_| 1 + rng.below(16)).collect(),
        latent_dim: 1 + rng.below(6),
    }
}

/// Checks the full loss J = BCE + KL for every parameter slice of
/// `configurations` random VAEs, plus the BCE-only decoder gradient used as
/// the feature, against central differences (up to `per_slice` sampled
/// coordinates per slice).
pub fn vae_gradient_suite(configurations: usize, per_slice: usize, seed: u64) -> GradReport {
    let mut rng = SeededRng::new(seed);
    let mut report = GradReport::default();
    let h = 1e-5;
    for i in 0..configurations {
        let arch = architecture(i, &mut rng);
        let model = random_vae(&arch, &mut rng);
        let x: Vec<f64> = (0..arch.input_dim)
            .map(|_| if rng.uniform() < 0.3 { rng.below(2) as f64 } else { rng.uniform() })
            .collect();
        let eps: Vec<f64> = (0..arch.latent_dim).map(|_| rng.normal()).collect();

        let (_, grads) = model.loss_gradients(&x, &eps).unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        for (slice, g) in analytic.iter().enumerate() {
            let coords: Vec<usize> = if g.len() <= per_slice {
                (0..g.len()).collect()
            } else {
                rng.sample_indices(g.len(), per_slice)
            };
            let fd = central_diff(&model, slice, &coords, h, &|m| total_loss(m, &x, &eps));
            let an: Vec<f64> = coords.iter().map(|&c| g[c]).collect();
            report.add(rel_err(&an, &fd));
        }

        // feature gradient: reconstruction BCE only, z = mu
        let n_slices = analytic.len();
        let depth = model.decoder_depth();
        let layers: Vec<usize> = (0..depth).collect();
        let set = model.decoder_recon_gradients(&x, 0, &layers).unwrap();
        for l in 0..depth {
            let lg = &set.layers[&l];
            let w_slice = n_slices - 2 * depth + 2 * l;
            for (slice, g) in [(w_slice, lg.weight.data()), (w_slice + 1, lg.bias.data())] {
                let coords: Vec<usize> = if g.len() <= per_slice {
                    (0..g.len()).collect()
                } else {
                    rng.sample_indices(g.len(), per_slice)
                };
                let fd = central_diff(&model, slice, &coords, h, &|m| recon_loss_mu(m, &x));
                let an: Vec<f64> = coords.iter().map(|&c| g[c]).collect();
                report.add(rel_err(&an, &fd));
            }
        }
        report.configurations += 1;
    }
    report
}

/// Affine and sigmoid layers against central differences of `L = r · y`.
pub fn layer_gradient_suite(configurations: usize, seed: u64) -> GradReport {
    use gradnovel::layers::Sigmoid;
    let mut rng = SeededRng::new(seed);
    let mut report = GradReport::default();
    let h = 1e-6;
    for _ in 0..configurations {
        let (out, inp) = (1 + rng.below(12), 1 + rng.below(12));
        let mut layer = random_layer(out, inp, 1.0, &mut rng);
        let x = Tensor64::new(vec![inp], (0..inp).map(|_| rng.normal()).collect()).unwrap();
        let r: Vec<f64> = (0..out).map(|_| rng.normal()).collect();
        let rt = Tensor64::new(vec![out], r.clone()).unwrap();
        let objective = |l: &AffineLayer<f64>, x: &[f64]| -> f64 { l.apply(x).unwrap().iter().zip(&r).map(|(a, b)| a * b).sum() };

        layer.forward(&x).unwrap();
        let back = layer.backward(&rt).unwrap();
        let mut fd_w = Vec::new();
        for c in 0..out * inp {
            let mut l = layer.clone();
            l.weights_mut()[c] += h;
            let up = objective(&l, x.data());
            l.weights_mut()[c] -= 2.0 * h;
            fd_w.push((up - objective(&l, x.data())) / (2.0 * h));
        }
        report.add(rel_err(back.weight_grad.data(), &fd_w));
        let mut fd_b = Vec::new();
        for c in 0..out {
            let mut l = layer.clone();
            l.bias_mut()[c] += h;
            let up = objective(&l, x.data());
            l.bias_mut()[c] -= 2.0 * h;
            fd_b.push((up - objective(&l, x.data())) / (2.0 * h));
        }
        report.add(rel_err(back.bias_grad.data(), &fd_b));
        let mut fd_x = Vec::new();
        for c in 0..inp {
            let mut xp = x.data().to_vec();
            xp[c] += h;
            let up = objective(&layer, &xp);
            xp[c] -= 2.0 * h;
            fd_x.push((up - objective(&layer, &xp)) / (2.0 * h));
        }
        report.add(rel_err(back.input_grad.data(), &fd_x));

        let z = Tensor64::new(vec![out], (0..out).map(|_| rng.normal() * 3.0).collect()).unwrap();
        let mut sig = Sigmoid::new();
        sig.forward(&z);
        let g = sig.backward(&rt).unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let fd: Vec<f64> = (0..out)
            .map(|c| (s(z.data()[c] + h) - s(z.data()[c] - h)) / (2.0 * h) * r[c])
            .collect();
        report.add(rel_err(g.data(), &fd));
        report.configurations += 1;
    }
    report
}

fn brute_force_auroc(inl: &[f64], out: &[f64]) -> f64 {
    let mut twice = 0u64;
    for o in out {
        for i in inl {
            twice += if o > i { 2 } else if o == i { 1 } else { 0 };
        }
    }
    twice as f64 / 2.0 / (out.len() * inl.len()) as f64
}

/// Number of exact mismatches between `auroc` and the pairwise count over
/// `cases` random score-list pairs (lengths 1..=500, ties injected).
pub fn auroc_oracle_suite(cases: usize, seed: u64) -> usize {
    let mut rng = SeededRng::new(seed);
    let mut mismatches = 0;
    for _ in 0..cases {
        let draw = |rng: &mut SeededRng| -> Vec<f64> {
            let n = 1 + rng.below(500);
            let grid = rng.uniform() < 0.5;
            (0..n)
                .map(|_| if grid { rng.below(8) as f64 / 4.0 } else { rng.normal() })
                .collect()
        };
        let mut a = draw(&mut rng);
        let b = draw(&mut rng);
        // copy some outlier values into the inliers so ties occur across roles
        let k = a.len().min(b.len()) / 3;
        a[..k].copy_from_slice(&b[..k]);
        if auroc(&a, &b).unwrap() != brute_force_auroc(&a, &b) {
            mismatches += 1;
        }
    }
    mismatches
}

/// Largest |closed form - Monte-Carlo| KL over `pairs` random (mu, logvar).
pub fn kl_monte_carlo_suite(pairs: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let mu = rng.uniform_range(-1.5, 1.5);
        let lv = rng.uniform_range(-1.5, 1.0);
        let sigma = (0.5 * lv).exp();
        // E_q[log q(z) - log p(z)] with z = mu + sigma·e
        let mut sum = 0.0;
        for _ in 0..samples {
            let e = rng.normal();
            let z = mu + sigma * e;
            sum += -0.5 * e * e - 0.5 * lv + 0.5 * z * z;
        }
        let mc = sum / samples as f64;
        let closed = kl_loss(&Tensor64::from_vec(vec![mu]), &Tensor64::from_vec(vec![lv])).unwrap().total;
        worst = worst.max((mc - closed).abs());
    }
    worst
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzReport {
    pub files: usize,
    pub format_errors: usize,
    pub other_errors: usize,
    pub successes: usize,
}

/// Feeds `files` random byte files to both IDX slots and the CIFAR-10 loader.
pub fn parser_fuzz_suite(files: usize, seed: u64, dir: &Path) -> FuzzReport {
    let mut rng = SeededRng::new(seed);
    let mut report = FuzzReport::default();
    // a valid companion pair so each slot is exercised on its own
    let good_images = dir.join("good-images");
    let good_labels = dir.join("good-labels");
    let mut gi = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
    gi.extend([0, 64, 128, 255]);
    std::fs::write(&good_images, gi).unwrap();
    std::fs::write(&good_labels, [0, 0, 8, 1, 0, 0, 0, 1, 4]).unwrap();
    for i in 0..files {
        let len = match rng.below(4) {
            0 => rng.below(32),
            1 => rng.below(4096),
            _ => rng.below(20_000),
        };
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
        // some files start like a real header so deeper checks run
        match i % 5 {
            1 if len >= 4 => bytes[..4].copy_from_slice(&[0, 0, 8, 3]),
            2 if len >= 4 => bytes[..4].copy_from_slice(&[0, 0, 8, 1]),
            3 if len >= 2 => bytes[..2].copy_from_slice(&[0x1f, 0x8b]),
            _ => {}
        }
        let path = dir.join(format!("fuzz-{i}"));
        std::fs::write(&path, &bytes).unwrap();
        let outcomes = [
            load_idx::<f64>(&path, &good_labels).map(|_| ()),
            load_idx::<f64>(&good_images, &path).map(|_| ()),
            load_cifar10::<f64>(std::slice::from_ref(&path)).map(|_| ()),
        ];
        for o in outcomes {
            match o {
                Err(Error::Format { .. }) => report.format_errors += 1,
                Err(_) => report.other_errors += 1,
                Ok(()) => report.successes += 1,
            }
        }
        report.files += 1;
    }
    report
}
