use rayon::prelude::*;

use super::metrics::{auroc, histogram, Histogram};
use super::report::{AurocRecord, OverlapRecord, CLASS_GROUP};
use super::splits::{make_splits, FoldSplit, SplitSpec};
use crate::data_io::LabeledDataset;
use crate::detector::{train_detector, DetectorConfig, DetectorModel, FeatureSet};
use crate::error::{Error, Result};
use crate::features::{extract_batch, sample_statistics, FeatureKind, FeatureSpec, FeatureVector};
use crate::outlier_synth::{apply_challenge, gaussian_noise, ChallengeKind, ChallengeSpec};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vae::train::{train_vae, EpochStats, TrainConfig};
use crate::vae::VaeModel;

/// Set in the sample id of noise-distorted training images.
pub const DISTORTED_ID_BIT: u64 = 1 << 62;
/// Set in the sample id of challenge-transformed test images.
pub const CHALLENGED_ID_BIT: u64 = 1 << 63;

/// Anything that maps a feature to a novelty score (higher = more novel).
pub trait Scorer<T>: Send + Sync {
    fn score(&self, feature: &FeatureVector<T>) -> Result<f64>;
}

impl<T: Scalar> Scorer<T> for DetectorModel<T> {
    fn score(&self, feature: &FeatureVector<T>) -> Result<f64> {
        Ok(DetectorModel::score(self, feature)?.to_f64_lossy())
    }
}

pub struct ConstantScorer(pub f64);

impl<T> Scorer<T> for ConstantScorer {
    fn score(&self, _: &FeatureVector<T>) -> Result<f64> {
        Ok(self.0)
    }
}

pub struct FnScorer<F>(pub F);

impl<T, F: Fn(&FeatureVector<T>) -> f64 + Send + Sync> Scorer<T> for FnScorer<F> {
    fn score(&self, feature: &FeatureVector<T>) -> Result<f64> {
        Ok((self.0)(feature))
    }
}

/// Builds a scorer from training and validation features.
pub trait DetectorFactory<T>: Sync {
    fn fit(&self, train: FeatureSet<'_, T>, validation: FeatureSet<'_, T>, config: &DetectorConfig) -> Result<Box<dyn Scorer<T>>>;
}

/// The default factory: [`train_detector`] with validation model selection.
pub struct TrainDetector;

impl<T: Scalar> DetectorFactory<T> for TrainDetector {
    fn fit(&self, train: FeatureSet<'_, T>, validation: FeatureSet<'_, T>, config: &DetectorConfig) -> Result<Box<dyn Scorer<T>>> {
        Ok(Box::new(train_detector(train, Some(validation), config)?.model))
    }
}

impl<T, F> DetectorFactory<T> for F
where
    F: for<'a> Fn(FeatureSet<'a, T>, FeatureSet<'a, T>, &DetectorConfig) -> Result<Box<dyn Scorer<T>>> + Sync,
{
    fn fit(&self, train: FeatureSet<'_, T>, validation: FeatureSet<'_, T>, config: &DetectorConfig) -> Result<Box<dyn Scorer<T>>> {
        self(train, validation, config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub vae: TrainConfig,
    pub detector: DetectorConfig,
    /// Sigma of the Gaussian noise that makes pseudo-outliers.
    pub noise_sigma: f64,
    pub feature_kinds: Vec<FeatureKind>,
    /// Decoder layer for gradient features; `None` picks the protocol
    /// default (first layer for classes, last layer for conditions).
    pub gradient_layer: Option<usize>,
    pub include_bias: bool,
    pub fold_count: usize,
    /// Which folds to run.
    pub folds: Vec<usize>,
    /// Random subset of the training inliers to keep, if set.
    pub max_train_inliers: Option<usize>,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            vae: TrainConfig::default(),
            detector: DetectorConfig::default(),
            noise_sigma: crate::outlier_synth::DEFAULT_NOISE_SIGMA,
            feature_kinds: FeatureKind::ALL.to_vec(),
            gradient_layer: None,
            include_bias: true,
            fold_count: 5,
            folds: (0..5).collect(),
            max_train_inliers: None,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.vae.validate()?;
        self.detector.validate()?;
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::input(format!("noise sigma must be positive, got {}", self.noise_sigma)));
        }
        if self.feature_kinds.is_empty() {
            return Err(Error::input("no feature kinds selected"));
        }
        if self.folds.is_empty() || self.folds.iter().any(|&f| f >= self.fold_count) {
            return Err(Error::input(format!("folds {:?} must be non-empty and below {}", self.folds, self.fold_count)));
        }
        if self.max_train_inliers == Some(0) {
            return Err(Error::input("max_train_inliers must be positive"));
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            fold_count: self.fold_count,
            seed: self.seed,
        }
    }

    /// Random stream for a named job; every seed in a run derives from here.
    pub fn job(&self, label: &str) -> SeededRng {
        SeededRng::new(self.seed).derive_named(label)
    }

    /// VAE training config for a job, seeded from the job label.
    pub fn vae_for(&self, job: &str) -> TrainConfig {
        let mut cfg = self.vae.clone();
        cfg.seed = self.job(&format!("{job}/vae")).seed();
        cfg
    }

    /// Detector config for one feature kind within a job.
    pub fn detector_for(&self, job: &str, kind: FeatureKind) -> DetectorConfig {
        let mut cfg = self.detector.clone();
        cfg.seed = self.job(&format!("{job}/detector/{kind}")).seed();
        cfg
    }

    pub fn feature_spec(&self, kind: FeatureKind, default_layer: usize) -> FeatureSpec {
        match kind {
            FeatureKind::ReconError => FeatureSpec::ReconError,
            FeatureKind::LatentLoss => FeatureSpec::LatentLoss,
            FeatureKind::Gradient => FeatureSpec::Gradient {
                layer: self.gradient_layer.unwrap_or(default_layer),
                include_bias: self.include_bias,
            },
        }
    }

    fn train_inlier_vae<T: Scalar>(&self, dataset: &LabeledDataset<T>, indices: &[usize], job: &str) -> Result<(VaeModel<T>, Vec<EpochStats>)> {
        let cfg = self.vae_for(job);
        let images: Vec<Tensor<T>> = indices.iter().map(|&i| dataset.images[i].clone()).collect();
        let trained = train_vae(&images, &cfg)?;
        Ok((trained.model, trained.trace))
    }

    pub fn cap(&self, mut indices: Vec<usize>, job: &str) -> Vec<usize> {
        if let Some(max) = self.max_train_inliers {
            if indices.len() > max {
                let picks = self.job(&format!("{job}/subset")).sample_indices(indices.len(), max);
                let mut kept: Vec<usize> = picks.into_iter().map(|p| indices[p]).collect();
                kept.sort_unstable();
                indices = kept;
            }
        }
        indices
    }
}

/// Job label of one (class, fold) run of the class protocol.
pub fn class_job(class: u8, fold: usize) -> String {
    format!("class{class}/fold{fold}")
}

/// Job label of one fold of the condition protocol.
pub fn condition_job(fold: usize) -> String {
    format!("condition/fold{fold}")
}

/// Dataset indices used by one (class, fold) job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InlierSplit {
    /// Inlier training images, capped by `max_train_inliers`.
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Other-class test images, as many as `test`.
    pub outliers: Vec<usize>,
}

pub fn inlier_split<T: Scalar>(
    dataset: &LabeledDataset<T>,
    class: u8,
    split: &FoldSplit,
    config: &ProtocolConfig,
    job: &str,
) -> Result<InlierSplit> {
    let is_in = |i: &usize| dataset.labels[*i] == class;
    let train = config.cap(split.train.iter().copied().filter(is_in).collect(), job);
    let validation: Vec<usize> = split.validation.iter().copied().filter(is_in).collect();
    let test: Vec<usize> = split.test.iter().copied().filter(is_in).collect();
    let others: Vec<usize> = split.test.iter().copied().filter(|i| !is_in(i)).collect();
    if train.is_empty() || validation.is_empty() || test.is_empty() {
        return Err(Error::input(format!("class {class} has an empty split part")));
    }
    if others.len() < test.len() {
        return Err(Error::input(format!(
            "only {} outlier test images for {} inliers of class {class}",
            others.len(),
            test.len()
        )));
    }
    let mut outliers: Vec<usize> = config
        .job(&format!("{job}/outliers"))
        .sample_indices(others.len(), test.len())
        .into_iter()
        .map(|k| others[k])
        .collect();
    outliers.sort_unstable();
    Ok(InlierSplit {
        train,
        validation,
        test,
        outliers,
    })
}

pub fn fold_split(splits: &[FoldSplit], fold: usize) -> Result<&FoldSplit> {
    splits.get(fold).ok_or_else(|| Error::input(format!("fold {fold} does not exist")))
}

pub fn distort<T: Scalar>(dataset: &LabeledDataset<T>, indices: &[usize], sigma: f64, root: &SeededRng) -> Result<Vec<Tensor<T>>> {
    indices
        .par_iter()
        .map(|&i| gaussian_noise(&dataset.images[i], sigma, &mut root.derive(i as u64)))
        .collect()
}

fn pairs<'a, T>(ids: &[usize], images: impl Fn(usize) -> &'a Tensor<T>, id_bits: u64) -> Vec<(u64, &'a Tensor<T>)> {
    ids.iter().enumerate().map(|(k, &i)| (i as u64 | id_bits, images(k))).collect()
}

fn score_all<T: Scalar>(scorer: &dyn Scorer<T>, features: &[FeatureVector<T>]) -> Result<Vec<f64>> {
    features.par_iter().map(|f| scorer.score(f)).collect()
}

/// Images used to train and select one detector.
struct DetectorData<'a, T> {
    train: Vec<(u64, &'a Tensor<T>)>,
    train_distorted: Vec<(u64, &'a Tensor<T>)>,
    val: Vec<(u64, &'a Tensor<T>)>,
    val_distorted: Vec<(u64, &'a Tensor<T>)>,
}

fn fit_detector<T: Scalar>(
    model: &VaeModel<T>,
    data: &DetectorData<'_, T>,
    spec: FeatureSpec,
    config: &DetectorConfig,
    factory: &dyn DetectorFactory<T>,
) -> Result<Box<dyn Scorer<T>>> {
    let train_in = extract_batch(model, &data.train, spec)?;
    let train_out = extract_batch(model, &data.train_distorted, spec)?;
    let val_in = extract_batch(model, &data.val, spec)?;
    let val_out = extract_batch(model, &data.val_distorted, spec)?;
    factory.fit(
        FeatureSet {
            inliers: &train_in,
            distorted: &train_out,
        },
        FeatureSet {
            inliers: &val_in,
            distorted: &val_out,
        },
        config,
    )
}

#[derive(Debug, Clone)]
pub struct ClassOutcome<T> {
    pub class: u8,
    /// One record per (fold, feature kind).
    pub records: Vec<AurocRecord>,
    pub vae_traces: Vec<Vec<EpochStats>>,
    /// The VAE of each configured fold, in fold order.
    pub models: Vec<VaeModel<T>>,
}

impl<T> ClassOutcome<T> {
    pub fn mean_auroc(&self, kind: FeatureKind) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter(|r| r.feature_kind == kind).map(|r| r.auroc).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Novel-class detection with `class` as the inlier class.
///
/// Per fold: a VAE is trained on the inlier training block, one detector per
/// feature kind is trained on inliers vs. their noisy copies (selected on the
/// validation block), and the detector scores the inlier test block against
/// an equal number of test images drawn uniformly from the other classes.
pub fn run_class_protocol<T: Scalar>(
    dataset: &LabeledDataset<T>,
    class: u8,
    config: &ProtocolConfig,
    factory: &dyn DetectorFactory<T>,
) -> Result<ClassOutcome<T>> {
    config.validate()?;
    if !dataset.labels.contains(&class) {
        return Err(Error::input(format!("class {class} does not occur in {}", dataset.name)));
    }
    let splits = make_splits(&dataset.labels, config.split_spec())?;
    let mut records = Vec::new();
    let mut vae_traces = Vec::new();
    let mut models = Vec::new();
    for &fold in &config.folds {
        let split = fold_split(&splits, fold)?;
        let job = class_job(class, fold);
        let InlierSplit {
            train,
            validation: val,
            test,
            outliers,
        } = inlier_split(dataset, class, split, config, &job)?;

        let (model, trace) = config.train_inlier_vae(dataset, &train, &job)?;
        vae_traces.push(trace);
        let noise = config.job(&format!("{job}/noise"));
        let train_noisy = distort(dataset, &train, config.noise_sigma, &noise)?;
        let val_noisy = distort(dataset, &val, config.noise_sigma, &noise)?;
        let img = |i: usize| &dataset.images[i];
        let data = DetectorData {
            train: pairs(&train, |k| img(train[k]), 0),
            train_distorted: pairs(&train, |k| &train_noisy[k], DISTORTED_ID_BIT),
            val: pairs(&val, |k| img(val[k]), 0),
            val_distorted: pairs(&val, |k| &val_noisy[k], DISTORTED_ID_BIT),
        };
        let test_in = pairs(&test, |k| img(test[k]), 0);
        let test_out = pairs(&outliers, |k| img(outliers[k]), 0);

        for &kind in &config.feature_kinds {
            let spec = config.feature_spec(kind, 0);
            let det_cfg = config.detector_for(&job, kind);
            let scorer = fit_detector(&model, &data, spec, &det_cfg, factory)?;
            let s_in = score_all(scorer.as_ref(), &extract_batch(&model, &test_in, spec)?)?;
            let s_out = score_all(scorer.as_ref(), &extract_batch(&model, &test_out, spec)?)?;
            records.push(AurocRecord {
                dataset: dataset.name.clone(),
                feature_kind: kind,
                group: CLASS_GROUP.into(),
                key: class as u32,
                fold,
                auroc: auroc(&s_in, &s_out)?,
                inliers: s_in.len(),
                outliers: s_out.len(),
            });
        }
        models.push(model);
    }
    Ok(ClassOutcome {
        class,
        records,
        vae_traces,
        models,
    })
}

#[derive(Debug, Clone)]
pub struct ConditionOutcome {
    /// One record per (fold, feature kind, challenge, level).
    pub records: Vec<AurocRecord>,
    pub vae_traces: Vec<Vec<EpochStats>>,
}

/// Novel-condition detection on a clean dataset.
///
/// Per fold: a VAE and one detector per feature kind are trained on clean
/// training images (detectors against noisy copies, selected on the
/// validation block). Clean test images are then scored against
/// challenge-transformed copies of the same images at each level.
pub fn run_condition_protocol<T: Scalar>(
    clean: &LabeledDataset<T>,
    challenges: &[ChallengeKind],
    levels: &[u8],
    config: &ProtocolConfig,
    factory: &dyn DetectorFactory<T>,
) -> Result<ConditionOutcome> {
    config.validate()?;
    if clean.is_empty() {
        return Err(Error::input("clean dataset is empty"));
    }
    if challenges.is_empty() || levels.is_empty() {
        return Err(Error::input("no challenges or levels selected"));
    }
    let specs = challenges
        .iter()
        .flat_map(|&kind| levels.iter().map(move |&level| ChallengeSpec::new(kind, level)))
        .collect::<Result<Vec<_>>>()?;
    let splits = make_splits(&clean.labels, config.split_spec())?;
    let mut records = Vec::new();
    let mut vae_traces = Vec::new();
    for &fold in &config.folds {
        let split = fold_split(&splits, fold)?;
        let job = condition_job(fold);
        let train = config.cap(split.train.clone(), &job);
        let (val, test) = (&split.validation, &split.test);
        let (model, trace) = config.train_inlier_vae(clean, &train, &job)?;
        vae_traces.push(trace);
        let last = model.decoder_depth() - 1;
        let noise = config.job(&format!("{job}/noise"));
        let train_noisy = distort(clean, &train, config.noise_sigma, &noise)?;
        let val_noisy = distort(clean, val, config.noise_sigma, &noise)?;
        let img = |i: usize| &clean.images[i];
        let data = DetectorData {
            train: pairs(&train, |k| img(train[k]), 0),
            train_distorted: pairs(&train, |k| &train_noisy[k], DISTORTED_ID_BIT),
            val: pairs(val, |k| img(val[k]), 0),
            val_distorted: pairs(val, |k| &val_noisy[k], DISTORTED_ID_BIT),
        };
        let test_in = pairs(test, |k| img(test[k]), 0);

        for &kind in &config.feature_kinds {
            let spec = config.feature_spec(kind, last);
            let det_cfg = config.detector_for(&job, kind);
            let scorer = fit_detector(&model, &data, spec, &det_cfg, factory)?;
            let s_in = score_all(scorer.as_ref(), &extract_batch(&model, &test_in, spec)?)?;
            for &cs in &specs {
                let root = config.job(&format!("{job}/challenge/{}/{}", cs.kind.name(), cs.level));
                let challenged: Vec<Tensor<T>> = test
                    .par_iter()
                    .map(|&i| apply_challenge(&clean.images[i], cs, &mut root.derive(i as u64)))
                    .collect::<Result<_>>()?;
                let test_out = pairs(test, |k| &challenged[k], CHALLENGED_ID_BIT);
                let s_out = score_all(scorer.as_ref(), &extract_batch(&model, &test_out, spec)?)?;
                records.push(AurocRecord {
                    dataset: clean.name.clone(),
                    feature_kind: kind,
                    group: cs.kind.name().into(),
                    key: cs.level as u32,
                    fold,
                    auroc: auroc(&s_in, &s_out)?,
                    inliers: s_in.len(),
                    outliers: s_out.len(),
                });
            }
        }
    }
    Ok(ConditionOutcome { records, vae_traces })
}

/// Names of the three scalar statistics compared by overlap analysis.
pub const OVERLAP_STATISTICS: [&str; 3] = ["recon_total", "kl_total", "gradient_norm"];

/// Histograms of total reconstruction BCE, total KL and gradient norm for
/// held-out inliers vs. an equal number of held-out other-class images.
#[derive(Debug, Clone)]
pub struct OverlapOutcome {
    pub inlier_class: u8,
    /// In [`OVERLAP_STATISTICS`] order.
    pub histograms: [Histogram; 3],
    pub inlier_values: [Vec<f64>; 3],
    pub outlier_values: [Vec<f64>; 3],
    /// Empty when a trained VAE was passed in.
    pub vae_trace: Vec<EpochStats>,
}

impl OverlapOutcome {
    pub fn records(&self) -> Vec<OverlapRecord> {
        OVERLAP_STATISTICS
            .iter()
            .zip(&self.histograms)
            .zip(&self.inlier_values)
            .map(|((name, h), inl)| OverlapRecord {
                statistic: (*name).into(),
                inlier_class: self.inlier_class as u32,
                bins: h.bin_count(),
                percent: h.overlap_percent,
                inliers: inl.len(),
                outliers: h.outlier_counts.iter().sum(),
            })
            .collect()
    }
}

/// Histograms over the validation and test blocks of the first configured
/// fold. The VAE is the one the class protocol trains for the same
/// (class, fold); pass it as `trained` to skip retraining. Gradient norms use
/// the configured layer (first decoder layer by default).
pub fn run_overlap_analysis<T: Scalar>(
    dataset: &LabeledDataset<T>,
    class: u8,
    config: &ProtocolConfig,
    bins: usize,
    trained: Option<&VaeModel<T>>,
) -> Result<OverlapOutcome> {
    config.validate()?;
    if !dataset.labels.contains(&class) {
        return Err(Error::input(format!("class {class} does not occur in {}", dataset.name)));
    }
    let splits = make_splits(&dataset.labels, config.split_spec())?;
    let fold = config.folds[0];
    let split = fold_split(&splits, fold)?;
    let job = class_job(class, fold);
    let is_in = |i: &usize| dataset.labels[*i] == class;
    let held: Vec<usize> = split.validation.iter().chain(&split.test).copied().collect();
    let inl: Vec<usize> = held.iter().copied().filter(is_in).collect();
    let others: Vec<usize> = held.iter().copied().filter(|i| !is_in(i)).collect();
    if inl.is_empty() || others.len() < inl.len() {
        return Err(Error::input(format!("not enough held-out images for class {class}")));
    }
    let mut out: Vec<usize> = config
        .job(&format!("{job}/overlap_outliers"))
        .sample_indices(others.len(), inl.len())
        .into_iter()
        .map(|k| others[k])
        .collect();
    out.sort_unstable();

    let (model, vae_trace) = match trained {
        Some(m) => (m.clone(), Vec::new()),
        None => {
            let train = config.cap(split.train.iter().copied().filter(is_in).collect(), &job);
            config.train_inlier_vae(dataset, &train, &job)?
        }
    };
    let layer = config.gradient_layer.unwrap_or(0);
    let stats = |ids: &[usize]| -> Result<[Vec<f64>; 3]> {
        let s = ids
            .par_iter()
            .map(|&i| sample_statistics(&model, &dataset.images[i], layer, config.include_bias))
            .collect::<Result<Vec<_>>>()?;
        Ok([
            s.iter().map(|v| v.recon_total.to_f64_lossy()).collect(),
            s.iter().map(|v| v.kl_total.to_f64_lossy()).collect(),
            s.iter().map(|v| v.gradient_norm.to_f64_lossy()).collect(),
        ])
    };
    let inlier_values = stats(&inl)?;
    let outlier_values = stats(&out)?;
    let histograms = [
        histogram(&inlier_values[0], &outlier_values[0], bins)?,
        histogram(&inlier_values[1], &outlier_values[1], bins)?,
        histogram(&inlier_values[2], &outlier_values[2], bins)?,
    ];
    Ok(OverlapOutcome {
        inlier_class: class,
        histograms,
        inlier_values,
        outlier_values,
        vae_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::synth_shapes;

    fn small_config() -> ProtocolConfig {
        ProtocolConfig {
            vae: TrainConfig {
                epochs: 2,
                hidden: vec![32, 16],
                latent_dim: 4,
                ..Default::default()
            },
            detector: DetectorConfig {
                hidden: 4,
                epochs: 2,
                ..Default::default()
            },
            folds: vec![0, 3],
            seed: 5,
            ..Default::default()
        }
    }

    fn constant<'a>(_: FeatureSet<'a, f64>, _: FeatureSet<'a, f64>, _: &DetectorConfig) -> Result<Box<dyn Scorer<f64>>> {
        Ok(Box::new(ConstantScorer(0.25)))
    }

    #[test]
    fn constant_scorer_gives_chance_auroc() {
        let ds: LabeledDataset<f64> = synth_shapes(60, 12, 3, 1).unwrap();
        let out = run_class_protocol(&ds, 1, &small_config(), &constant).unwrap();
        assert_eq!(out.records.len(), 2 * 3);
        for r in &out.records {
            assert_eq!(r.auroc, 0.5);
            assert_eq!(r.inliers, r.outliers);
        }
    }

    #[test]
    fn label_oracle_gives_perfect_auroc() {
        let ds: LabeledDataset<f64> = synth_shapes(60, 12, 3, 1).unwrap();
        let labels = ds.labels.clone();
        let oracle = move |_: FeatureSet<'_, f64>, _: FeatureSet<'_, f64>, _: &DetectorConfig| -> Result<Box<dyn Scorer<f64>>> {
            let labels = labels.clone();
            Ok(Box::new(FnScorer(move |f: &FeatureVector<f64>| (labels[f.sample_id as usize] != 2) as u8 as f64)))
        };
        let out = run_class_protocol(&ds, 2, &small_config(), &oracle).unwrap();
        assert!(out.records.iter().all(|r| r.auroc == 1.0));
        let c = run_condition_protocol(
            &ds,
            &[ChallengeKind::Rain],
            &[1, 5],
            &small_config(),
            &|_: FeatureSet<'_, f64>, _: FeatureSet<'_, f64>, _: &DetectorConfig| -> Result<Box<dyn Scorer<f64>>> {
                Ok(Box::new(FnScorer(|f: &FeatureVector<f64>| (f.sample_id & CHALLENGED_ID_BIT != 0) as u8 as f64)))
            },
        )
        .unwrap();
        assert_eq!(c.records.len(), 2 * 3 * 2);
        assert!(c.records.iter().all(|r| r.auroc == 1.0 && r.inliers == r.outliers));
    }

    #[test]
    fn identity_challenge_is_indistinguishable() {
        let ds: LabeledDataset<f64> = synth_shapes(60, 12, 3, 2).unwrap();
        let mut cfg = small_config();
        cfg.folds = vec![0];
        let c = run_condition_protocol(&ds, &[ChallengeKind::GaussianBlur], &[0], &cfg, &TrainDetector).unwrap();
        for r in &c.records {
            assert!((r.auroc - 0.5).abs() <= 0.1, "{r:?}");
        }
    }

    #[test]
    fn overlap_analysis_uses_balanced_held_out_sets() {
        let ds: LabeledDataset<f64> = synth_shapes(50, 12, 2, 3).unwrap();
        let cfg = small_config();
        let out = run_overlap_analysis(&ds, 0, &cfg, 10, None).unwrap();
        for rec in out.records() {
            assert_eq!(rec.inliers, 10);
            assert_eq!(rec.outliers, 10);
            assert!((0.0..=100.0).contains(&rec.percent));
        }
        // the class protocol trains the same VAE for this (class, fold)
        let mut one = cfg.clone();
        one.folds = vec![0];
        let class = run_class_protocol(&ds, 0, &one, &constant).unwrap();
        let shared = run_overlap_analysis(&ds, 0, &cfg, 10, Some(&class.models[0])).unwrap();
        assert_eq!(shared.inlier_values, out.inlier_values);
        assert_eq!(shared.outlier_values, out.outlier_values);
    }

    #[test]
    fn runs_are_deterministic() {
        let ds: LabeledDataset<f64> = synth_shapes(40, 12, 2, 4).unwrap();
        let mut cfg = small_config();
        cfg.folds = vec![1];
        let a = run_class_protocol(&ds, 0, &cfg, &TrainDetector).unwrap();
        let b = run_class_protocol(&ds, 0, &cfg, &TrainDetector).unwrap();
        assert_eq!(a.records, b.records);
    }
}
