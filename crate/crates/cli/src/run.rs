//! Subcommand implementations. Every command computes its outputs in memory
//! and writes them only once all work has succeeded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use gradnovel::codec::{sha256_hex, write_atomic};
use gradnovel::data_io::{load_cifar10, load_idx, synth_shapes};
use gradnovel::detector::{decode_detector, encode_detector, train_detector, DetectorEpoch, FeatureSet};
use gradnovel::eval::{
    auroc, class_job, condition_job, distort, fold_split, inlier_split, make_splits, run_class_protocol,
    run_condition_protocol, run_overlap_analysis, AurocRecord, EvalReport, OverlapOutcome, ProtocolConfig,
    TrainDetector, CLASS_GROUP, DISTORTED_ID_BIT, OVERLAP_STATISTICS,
};
use gradnovel::features::{decode_features, encode_features, extract_batch, FeatureKind};
use gradnovel::vae::checkpoint::{decode_vae, encode_vae};
use gradnovel::vae::{train_vae, EpochStats};
use gradnovel::{Dataset64, Features64, SeededRng, Tensor64, Vae64};

use crate::config::{ConfigError, DatasetSource, EvalSource, RunConfig};
use crate::svg;

pub const VAE_FILE: &str = "vae.gnvae";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const HISTOGRAM_SVG: &str = "histogram.svg";
pub const MANIFEST: &str = "manifest.json";
const FEATURE_PARTS: [&str; 6] = ["train_in", "train_noisy", "val_in", "val_noisy", "test_in", "test_out"];

/// Distinguishes bad invocations (exit 2) from failures while running (exit 1).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TrainVae,
    ExtractFeatures,
    TrainDetector,
    Evaluate,
    Histogram,
    Reproduce,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TrainVae => "train-vae",
            Command::ExtractFeatures => "extract-features",
            Command::TrainDetector => "train-detector",
            Command::Evaluate => "evaluate",
            Command::Histogram => "histogram",
            Command::Reproduce => "reproduce",
        }
    }
}

/// Files produced by a command, keyed by path relative to the output dir.
#[derive(Default)]
struct Outputs {
    files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), bytes.into());
    }
}

#[derive(Serialize)]
struct DatasetInfo {
    name: String,
    checksum: String,
    files: Vec<String>,
    images: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config_fingerprint: String,
    config: BTreeMap<&'a str, &'a str>,
    dataset: DatasetInfo,
    formats: BTreeMap<&'static str, &'static str>,
    artifacts: BTreeMap<String, String>,
}

pub struct Run {
    pub command: Command,
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(command: Command, mut config: RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            config.override_seed(s);
        }
        config.check_inputs()?;
        let out = out.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("gradnovel-out"));
        if out.exists() && !out.is_dir() {
            return Err(CliError::Usage(format!("output path {} is not a directory", out.display())));
        }
        let needs_class = matches!(
            command,
            Command::ExtractFeatures | Command::TrainDetector | Command::Histogram | Command::Reproduce
        );
        if needs_class && config.inlier_class.is_none() {
            return Err(CliError::Usage(format!("{} needs `class.inlier`", command.name())));
        }
        let needs = |file: &str| -> Result<(), CliError> {
            if out.join(file).is_file() {
                Ok(())
            } else {
                Err(CliError::Usage(format!(
                    "{} is missing; run the earlier pipeline step first",
                    out.join(file).display()
                )))
            }
        };
        match command {
            Command::ExtractFeatures => needs(VAE_FILE)?,
            Command::TrainDetector => {
                for kind in &config.protocol.feature_kinds {
                    for part in &FEATURE_PARTS[..4] {
                        needs(&feature_file(*kind, part))?;
                    }
                }
            }
            Command::Evaluate if config.eval_source == EvalSource::Artifacts => {
                if config.inlier_class.is_none() {
                    return Err(CliError::Usage("evaluate.source = artifacts needs `class.inlier`".into()));
                }
                for kind in &config.protocol.feature_kinds {
                    needs(&detector_file(*kind))?;
                    needs(&feature_file(*kind, "test_in"))?;
                    needs(&feature_file(*kind, "test_out"))?;
                }
            }
            Command::Evaluate if config.classes.is_empty() && config.challenges.is_empty() && config.inlier_class.is_none() => {
                return Err(CliError::Usage(
                    "evaluate needs `class.classes`, `class.inlier` or `condition.challenges`".into(),
                ));
            }
            _ => {}
        }
        Ok(Self { command, config, out })
    }

    pub fn execute(&self) -> Result<(), CliError> {
        let dataset = self.load_dataset()?;
        let mut outputs = Outputs::default();
        match self.command {
            Command::TrainVae => self.train_vae(&dataset, &mut outputs)?,
            Command::ExtractFeatures => self.extract_features(&dataset, &mut outputs)?,
            Command::TrainDetector => self.train_detectors(&mut outputs)?,
            Command::Evaluate => self.evaluate(&dataset, &mut outputs)?,
            Command::Histogram => self.histogram(&dataset, &mut outputs)?,
            Command::Reproduce => self.reproduce(&dataset, &mut outputs)?,
        }
        self.write(&dataset, outputs)?;
        Ok(())
    }

    fn load_dataset(&self) -> Result<Dataset64> {
        let kind = self.config.canonical.get("dataset.kind").cloned().unwrap_or_default();
        let mut ds = match &self.config.dataset {
            DatasetSource::Idx { images, labels } => load_idx(images, labels).context("loading IDX dataset")?,
            DatasetSource::Cifar10 { batches } => load_cifar10(batches).context("loading CIFAR-10 batches")?,
            DatasetSource::SynthShapes { count, size, classes, seed } => synth_shapes(*count, *size, *classes, *seed)?,
        };
        ds.name = kind;
        Ok(ds)
    }

    fn fold(&self) -> usize {
        self.config.protocol.folds[0]
    }

    fn class(&self) -> u8 {
        self.config.inlier_class.expect("checked in Run::new")
    }

    /// Clean images for the condition protocol.
    fn clean_subset(&self, ds: &Dataset64) -> Result<Dataset64> {
        match self.config.clean_limit {
            Some(n) if n < ds.len() => {
                let mut picks = SeededRng::new(self.config.seed).derive_named("condition/clean").sample_indices(ds.len(), n);
                picks.sort_unstable();
                Ok(ds.subset(&picks, ds.name.clone())?)
            }
            _ => Ok(ds.clone()),
        }
    }

    fn condition_protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            detector: self.config.condition_detector.clone(),
            ..self.config.protocol.clone()
        }
    }

    fn train_vae(&self, ds: &Dataset64, out: &mut Outputs) -> Result<()> {
        let p = &self.config.protocol;
        let fold = self.fold();
        let (data, indices, job) = match self.config.inlier_class {
            Some(class) => {
                let splits = make_splits(&ds.labels, p.split_spec())?;
                let job = class_job(class, fold);
                let split = inlier_split(ds, class, fold_split(&splits, fold)?, p, &job)?;
                (ds.clone(), split.train, job)
            }
            None => {
                let clean = self.clean_subset(ds)?;
                let splits = make_splits(&clean.labels, p.split_spec())?;
                let job = condition_job(fold);
                let train = p.cap(fold_split(&splits, fold)?.train.clone(), &job);
                (clean, train, job)
            }
        };
        let images: Vec<Tensor64> = indices.iter().map(|&i| data.images[i].clone()).collect();
        eprintln!("training VAE on {} images ({job})", images.len());
        let started = Instant::now();
        let trained = train_vae(&images, &p.vae_for(&job))?;
        eprintln!("VAE trained in {:.1}s", started.elapsed().as_secs_f64());
        out.add(VAE_FILE, encode_vae(&trained.model));
        out.add("vae_trace.csv", vae_trace_csv(&trained.trace));
        let last = trained.trace.last().expect("at least one epoch");
        println!("final epoch {}: loss {:.4} (recon {:.4}, kl {:.4})", last.epoch, last.loss, last.recon, last.kl);
        Ok(())
    }

    fn extract_features(&self, ds: &Dataset64, out: &mut Outputs) -> Result<()> {
        let model: Vae64 = decode_vae(&std::fs::read(self.out.join(VAE_FILE))?)?;
        let p = &self.config.protocol;
        let (class, fold) = (self.class(), self.fold());
        let job = class_job(class, fold);
        let splits = make_splits(&ds.labels, p.split_spec())?;
        let split = inlier_split(ds, class, fold_split(&splits, fold)?, p, &job)?;
        let noise = p.job(&format!("{job}/noise"));
        let train_noisy = distort(ds, &split.train, p.noise_sigma, &noise)?;
        let val_noisy = distort(ds, &split.validation, p.noise_sigma, &noise)?;
        let clean = |ids: &[usize]| -> Vec<(u64, &Tensor64)> { ids.iter().map(|&i| (i as u64, &ds.images[i])).collect() };
        let parts = [
            clean(&split.train),
            noisy(&split.train, &train_noisy),
            clean(&split.validation),
            noisy(&split.validation, &val_noisy),
            clean(&split.test),
            clean(&split.outliers),
        ];
        for &kind in &p.feature_kinds {
            let spec = p.feature_spec(kind, 0);
            for (name, samples) in FEATURE_PARTS.iter().zip(&parts) {
                let feats = extract_batch(&model, samples, spec)?;
                out.add(feature_file(kind, name), encode_features(&feats)?);
            }
            println!("{kind}: {} features of dimension {}", parts.iter().map(Vec::len).sum::<usize>(), spec.dim(&model)?);
        }
        Ok(())
    }

    fn read_features(&self, kind: FeatureKind, part: &str) -> Result<Vec<Features64>> {
        let path = self.out.join(feature_file(kind, part));
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(decode_features(&bytes)?)
    }

    fn train_detectors(&self, out: &mut Outputs) -> Result<()> {
        let p = &self.config.protocol;
        let job = class_job(self.class(), self.fold());
        for &kind in &p.feature_kinds {
            let [ti, tn, vi, vn] = ["train_in", "train_noisy", "val_in", "val_noisy"].map(|part| self.read_features(kind, part));
            let (ti, tn, vi, vn) = (ti?, tn?, vi?, vn?);
            let trained = train_detector(
                FeatureSet { inliers: &ti, distorted: &tn },
                Some(FeatureSet { inliers: &vi, distorted: &vn }),
                &p.detector_for(&job, kind),
            )?;
            out.add(detector_file(kind), encode_detector(&trained.model));
            out.add(format!("detectors/{kind}_trace.csv"), detector_trace_csv(&trained.trace));
            println!("{kind}: best epoch {} of {}", trained.best_epoch, trained.trace.len());
        }
        Ok(())
    }

    fn evaluate(&self, ds: &Dataset64, out: &mut Outputs) -> Result<()> {
        let records = match self.config.eval_source {
            EvalSource::Artifacts => self.evaluate_artifacts()?,
            EvalSource::InRun => {
                let mut classes = self.config.classes.clone();
                if classes.is_empty() && self.config.challenges.is_empty() {
                    classes.push(self.class());
                }
                let mut records = self.class_records(ds, &classes, &mut Vec::new())?;
                records.extend(self.condition_records(ds)?);
                records
            }
        };
        self.emit_report(ds, records, None, out);
        Ok(())
    }

    fn evaluate_artifacts(&self) -> Result<Vec<AurocRecord>> {
        let mut records = Vec::new();
        for &kind in &self.config.protocol.feature_kinds {
            let model: gradnovel::Detector64 = decode_detector(&std::fs::read(self.out.join(detector_file(kind)))?)?;
            let score = |feats: Vec<Features64>| -> Result<Vec<f64>> { feats.iter().map(|f| Ok(model.score(f)?)).collect() };
            let s_in = score(self.read_features(kind, "test_in")?)?;
            let s_out = score(self.read_features(kind, "test_out")?)?;
            records.push(AurocRecord {
                dataset: self.config.canonical.get("dataset.kind").cloned().unwrap_or_default(),
                feature_kind: kind,
                group: CLASS_GROUP.into(),
                key: self.class() as u32,
                fold: self.fold(),
                auroc: auroc(&s_in, &s_out)?,
                inliers: s_in.len(),
                outliers: s_out.len(),
            });
        }
        Ok(records)
    }

    /// Runs the class protocol; keeps the trained VAEs of the inlier class
    /// for reuse by the histogram.
    fn class_records(&self, ds: &Dataset64, classes: &[u8], keep: &mut Vec<Vae64>) -> Result<Vec<AurocRecord>> {
        let mut records = Vec::new();
        for &class in classes {
            let started = Instant::now();
            let outcome = run_class_protocol(ds, class, &self.config.protocol, &TrainDetector)
                .with_context(|| format!("class protocol for class {class}"))?;
            eprintln!("class {class}: done in {:.1}s", started.elapsed().as_secs_f64());
            for r in &outcome.records {
                eprintln!("  fold {} {:<8} AUROC {:.4}", r.fold, r.feature_kind.to_string(), r.auroc);
            }
            if Some(class) == self.config.inlier_class {
                *keep = outcome.models;
            }
            records.extend(outcome.records);
        }
        Ok(records)
    }

    fn condition_records(&self, ds: &Dataset64) -> Result<Vec<AurocRecord>> {
        if self.config.challenges.is_empty() {
            return Ok(Vec::new());
        }
        let clean = self.clean_subset(ds)?;
        let started = Instant::now();
        let outcome = run_condition_protocol(
            &clean,
            &self.config.challenges,
            &self.config.levels,
            &self.condition_protocol(),
            &TrainDetector,
        )
        .context("condition protocol")?;
        eprintln!("condition protocol: done in {:.1}s", started.elapsed().as_secs_f64());
        Ok(outcome.records)
    }

    fn histogram(&self, ds: &Dataset64, out: &mut Outputs) -> Result<()> {
        let outcome = run_overlap_analysis(ds, self.class(), &self.config.protocol, self.config.bins, None)?;
        self.emit_histogram(&outcome, out);
        out.add("overlap.csv", overlap_csv(&outcome));
        Ok(())
    }

    fn reproduce(&self, ds: &Dataset64, out: &mut Outputs) -> Result<()> {
        let mut models = Vec::new();
        let records = self.class_records(ds, &self.config.classes, &mut models)?;
        let overlap = run_overlap_analysis(ds, self.class(), &self.config.protocol, self.config.bins, models.first())?;
        self.emit_histogram(&overlap, out);
        let mut records = records;
        records.extend(self.condition_records(ds)?);
        self.emit_report(ds, records, Some(&overlap), out);
        Ok(())
    }

    fn emit_histogram(&self, outcome: &OverlapOutcome, out: &mut Outputs) {
        let titles = ["reconstruction error", "latent loss", "gradient l2 norm"];
        let panels: Vec<(&str, &gradnovel::eval::Histogram)> = titles.iter().copied().zip(outcome.histograms.iter()).collect();
        let caption = format!(
            "inlier class {} vs. other classes, {} samples each",
            outcome.inlier_class,
            outcome.inlier_values[0].len()
        );
        out.add(HISTOGRAM_SVG, svg::render(&panels, &caption));
        for (name, h) in OVERLAP_STATISTICS.iter().zip(&outcome.histograms) {
            println!("overlap {name:<14} {:.2}%", h.overlap_percent);
        }
    }

    fn emit_report(&self, ds: &Dataset64, records: Vec<AurocRecord>, overlap: Option<&OverlapOutcome>, out: &mut Outputs) {
        let mut report = EvalReport {
            dataset: ds.name.clone(),
            dataset_checksum: ds.checksum.clone(),
            seed: self.config.seed,
            config_fingerprint: self.config.fingerprint(),
            hyperparameters: self.config.hyperparameters(),
            records,
            overlaps: overlap.map(OverlapOutcome::records).unwrap_or_default(),
            summary: Vec::new(),
        };
        report.summarize();
        for s in &report.summary {
            println!(
                "{:<14} {:<8} mean AUROC {:.4} (variance {:.5} over {} keys)",
                s.group,
                s.feature_kind.to_string(),
                s.mean,
                s.variance,
                s.keys
            );
        }
        out.add(REPORT_CSV, report.to_csv());
        out.add(REPORT_JSON, report.to_json());
    }

    fn write(&self, ds: &Dataset64, mut outputs: Outputs) -> Result<()> {
        let artifacts = outputs.files.iter().map(|(k, v)| (k.clone(), sha256_hex([v.as_slice()]))).collect();
        let manifest = Manifest {
            tool: "gradnovel",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.name(),
            seed: self.config.seed,
            config_fingerprint: self.config.fingerprint(),
            config: self
                .config
                .canonical
                .iter()
                .filter(|(k, _)| k.as_str() != "out")
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .collect(),
            dataset: DatasetInfo {
                name: ds.name.clone(),
                checksum: ds.checksum.clone(),
                files: self
                    .config
                    .canonical
                    .iter()
                    .filter(|(k, _)| matches!(k.as_str(), "dataset.images" | "dataset.labels" | "dataset.batches"))
                    .map(|(_, v)| v.clone())
                    .collect(),
                images: ds.len(),
            },
            formats: [
                ("vae", "GNVAE1"),
                ("features", "GNFEA1"),
                ("detector", "GNDET1"),
            ]
            .into(),
            artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        outputs.add(MANIFEST, text);

        for name in outputs.files.keys() {
            let dir = self.out.join(name);
            let dir = dir.parent().expect("file under the output directory");
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        for (name, bytes) in &outputs.files {
            write_atomic(&self.out.join(name), bytes)?;
        }
        eprintln!("wrote {} files to {}", outputs.files.len(), self.out.display());
        Ok(())
    }
}

fn feature_file(kind: FeatureKind, part: &str) -> String {
    format!("features/{kind}/{part}.gnfea")
}

fn detector_file(kind: FeatureKind) -> String {
    format!("detectors/{kind}.gndet")
}

fn vae_trace_csv(trace: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,recon,kl\n");
    for e in trace {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.loss, e.recon, e.kl);
    }
    s
}

fn detector_trace_csv(trace: &[DetectorEpoch]) -> String {
    let mut s = String::from("epoch,train_loss,validation_loss\n");
    for e in trace {
        let v = e.validation_loss.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, v);
    }
    s
}

fn overlap_csv(o: &OverlapOutcome) -> String {
    let mut s = String::from("statistic,inlier_class,bins,overlap_percent\n");
    for r in o.records() {
        let _ = writeln!(s, "{},{},{},{}", r.statistic, r.inlier_class, r.bins, r.percent);
    }
    s
}

fn noisy<'a>(ids: &[usize], images: &'a [Tensor64]) -> Vec<(u64, &'a Tensor64)> {
    ids.iter().zip(images).map(|(&i, t)| (i as u64 | DISTORTED_ID_BIT, t)).collect()
}
