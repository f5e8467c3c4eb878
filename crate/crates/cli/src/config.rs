//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! dataset.kind = mnist
//! vae.epochs = 30
//! ```
//!
//! Keys are dotted lowercase identifiers, each may appear once, and unknown
//! keys are rejected. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gradnovel::detector::DetectorConfig;
use gradnovel::eval::ProtocolConfig;
use gradnovel::features::FeatureKind;
use gradnovel::outlier_synth::{ChallengeKind, MAX_LEVEL};
use gradnovel::vae::train::TrainConfig;

/// MNIST files as stored by `scripts/fetch_mnist.sh`, named in the error
/// when one is missing.
const KNOWN_FILES: [(&str, &str); 4] = [
    ("train-images-idx3-ubyte.gz", "0b367032e93c5d0cea0925647cfdb18614af8ee15f83e6f2fc2ad904a6835971"),
    ("train-labels-idx1-ubyte.gz", "1787548bbe0bff1ec2ecdc0ef292b02df999e2d1a6002d27500982c652b17203"),
    ("t10k-images-idx3-ubyte.gz", "1a1a05eab793c14bb050b398624a11b0ffd1a2953baed553b1b9bd079e2a20be"),
    ("t10k-labels-idx1-ubyte.gz", "b91679a0acfe4ba0e50a2437a903084cba1f5f92592b016a25a7dfd00455798b"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

/// Parsed but uninterpreted entries: key → (value, line number).
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, (String, usize)>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(err(Some(line), format!("expected `key = value`, found `{content}`")));
        };
        let key = key.trim();
        let valid = !key.is_empty()
            && key.split('.').all(|part| {
                !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            });
        if !valid {
            return Err(err(Some(line), format!("invalid key `{key}`")));
        }
        if let Some((_, first)) = out.insert(key.to_string(), (value.trim().to_string(), line)) {
            return Err(err(Some(line), format!("duplicate key `{key}` (first set on line {first})")));
        }
    }
    Ok(out)
}

/// Consumes entries by key and reports whatever was never asked for.
struct Fields {
    entries: BTreeMap<String, (String, usize)>,
}

impl Fields {
    fn take_raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn get<V: FromStr>(&mut self, key: &str) -> Result<Option<V>, ConfigError>
    where
        V::Err: fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| err(Some(line), format!("bad value `{v}` for `{key}`: {e}"))),
        }
    }

    fn set<V: FromStr>(&mut self, key: &str, slot: &mut V) -> Result<(), ConfigError>
    where
        V::Err: fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<V: FromStr>(&mut self, key: &str) -> Result<Option<Vec<V>>, ConfigError>
    where
        V::Err: fmt::Display,
    {
        let Some((v, line)) = self.take_raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| err(Some(line), format!("bad item `{s}` in `{key}`: {e}"))))
            .collect::<Result<Vec<V>, _>>()
            .map(Some)
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().min_by_key(|(_, (_, line))| *line) {
            None => Ok(()),
            Some((key, (_, line))) => Err(err(Some(line), format!("unknown key `{key}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Idx { images: PathBuf, labels: PathBuf },
    Cifar10 { batches: Vec<PathBuf> },
    SynthShapes { count: usize, size: usize, classes: usize, seed: u64 },
}

impl DatasetSource {
    pub fn files(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Idx { images, labels } => vec![images, labels],
            DatasetSource::Cifar10 { batches } => batches.iter().map(PathBuf::as_path).collect(),
            DatasetSource::SynthShapes { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSource {
    /// Train everything inside `evaluate`.
    InRun,
    /// Score saved test features with saved detectors.
    Artifacts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub path: PathBuf,
    pub dataset: DatasetSource,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub protocol: ProtocolConfig,
    /// Inlier class for single-model commands and the histogram.
    pub inlier_class: Option<u8>,
    /// Classes for the novel-class protocol.
    pub classes: Vec<u8>,
    pub challenges: Vec<ChallengeKind>,
    pub levels: Vec<u8>,
    /// Random subset of the dataset used as clean images.
    pub clean_limit: Option<usize>,
    pub condition_detector: DetectorConfig,
    pub bins: usize,
    pub eval_source: EvalSource,
    /// Resolved settings (paths as written), used for fingerprints.
    pub canonical: BTreeMap<String, String>,
}

fn parse_challenge(s: &str) -> Result<ChallengeKind, String> {
    s.parse::<ChallengeKind>().map_err(|e| e.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let canonical = entries.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut f = Fields { entries };

        let kind: String = f.get("dataset.kind")?.ok_or_else(|| err(None, "missing `dataset.kind`"))?;
        let dataset = match kind.as_str() {
            "idx" | "mnist" | "fmnist" => {
                let images = f.get::<String>("dataset.images")?.ok_or_else(|| err(None, "missing `dataset.images`"))?;
                let labels = f.get::<String>("dataset.labels")?.ok_or_else(|| err(None, "missing `dataset.labels`"))?;
                DatasetSource::Idx {
                    images: resolve(images),
                    labels: resolve(labels),
                }
            }
            "cifar10" => {
                let batches: Vec<String> = f.list("dataset.batches")?.ok_or_else(|| err(None, "missing `dataset.batches`"))?;
                if batches.is_empty() {
                    return Err(err(None, "`dataset.batches` is empty"));
                }
                DatasetSource::Cifar10 {
                    batches: batches.into_iter().map(resolve).collect(),
                }
            }
            "synth_shapes" => DatasetSource::SynthShapes {
                count: f.get("dataset.count")?.unwrap_or(600),
                size: f.get("dataset.size")?.unwrap_or(28),
                classes: f.get("dataset.classes")?.unwrap_or(2),
                seed: f.get("dataset.seed")?.unwrap_or(0),
            },
            other => return Err(err(None, format!("unknown dataset.kind `{other}` (idx, mnist, fmnist, cifar10, synth_shapes)"))),
        };

        let seed = f.get("seed")?.unwrap_or(0);
        let out = f.get::<String>("out")?.map(resolve);

        let mut vae = TrainConfig::default();
        f.set("vae.epochs", &mut vae.epochs)?;
        f.set("vae.batch_size", &mut vae.batch_size)?;
        f.set("vae.learning_rate", &mut vae.learning_rate)?;
        f.set("vae.beta1", &mut vae.beta1)?;
        f.set("vae.beta2", &mut vae.beta2)?;
        f.set("vae.epsilon", &mut vae.epsilon)?;
        f.set("vae.latent_dim", &mut vae.latent_dim)?;
        if let Some(h) = f.list("vae.hidden")? {
            vae.hidden = h;
        }

        let mut detector = DetectorConfig::default();
        f.set("detector.hidden", &mut detector.hidden)?;
        f.set("detector.epochs", &mut detector.epochs)?;
        f.set("detector.batch_size", &mut detector.batch_size)?;
        f.set("detector.learning_rate", &mut detector.learning_rate)?;
        f.set("detector.beta1", &mut detector.beta1)?;
        f.set("detector.beta2", &mut detector.beta2)?;
        f.set("detector.epsilon", &mut detector.epsilon)?;

        let mut protocol = ProtocolConfig {
            vae,
            detector: detector.clone(),
            seed,
            ..Default::default()
        };
        f.set("noise.sigma", &mut protocol.noise_sigma)?;
        if let Some(kinds) = f.list::<FeatureKind>("features.kinds")? {
            protocol.feature_kinds = kinds;
        }
        protocol.gradient_layer = f.get("features.layer")?;
        f.set("features.include_bias", &mut protocol.include_bias)?;
        f.set("split.folds", &mut protocol.fold_count)?;
        protocol.folds = f.list("split.run_folds")?.unwrap_or_else(|| (0..protocol.fold_count).collect());
        protocol.max_train_inliers = f.get("split.max_train_inliers")?;

        let inlier_class = f.get("class.inlier")?;
        let classes = f.list("class.classes")?.unwrap_or_default();

        let challenges = match f.take_raw("condition.challenges") {
            None => Vec::new(),
            Some((v, line)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_challenge(s).map_err(|e| err(Some(line), e)))
                .collect::<Result<_, _>>()?,
        };
        let levels = f.list("condition.levels")?.unwrap_or_else(|| (1..=MAX_LEVEL).collect());
        let clean_limit = f.get("condition.clean_limit")?;
        let mut condition_detector = detector;
        f.set("condition.detector_hidden", &mut condition_detector.hidden)?;
        f.set("condition.detector_epochs", &mut condition_detector.epochs)?;

        let bins = f.get("histogram.bins")?.unwrap_or(100);
        let eval_source = match f.get::<String>("evaluate.source")?.as_deref() {
            None | Some("in_run") => EvalSource::InRun,
            Some("artifacts") => EvalSource::Artifacts,
            Some(other) => return Err(err(None, format!("unknown evaluate.source `{other}` (in_run, artifacts)"))),
        };
        f.finish()?;

        let cfg = RunConfig {
            path: path.to_path_buf(),
            dataset,
            seed,
            out,
            protocol,
            inlier_class,
            classes,
            challenges,
            levels,
            clean_limit,
            condition_detector,
            bins,
            eval_source,
            canonical,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.protocol.validate().map_err(|e| err(None, e.to_string()))?;
        self.condition_detector.validate().map_err(|e| err(None, e.to_string()))?;
        if let Some(bad) = self.levels.iter().find(|&&l| l > MAX_LEVEL) {
            return Err(err(None, format!("challenge level {bad} exceeds {MAX_LEVEL}")));
        }
        if self.bins < 2 {
            return Err(err(None, "histogram.bins must be at least 2"));
        }
        if self.clean_limit == Some(0) {
            return Err(err(None, "condition.clean_limit must be positive"));
        }
        if let Some(l) = self.protocol.gradient_layer {
            let depth = self.protocol.vae.hidden.len() + 1;
            if l >= depth {
                return Err(err(None, format!("features.layer {l} is out of range for {depth} decoder layers")));
            }
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.protocol.seed = seed;
        self.canonical.insert("seed".into(), seed.to_string());
    }

    /// Every referenced input file must exist before any work starts.
    pub fn check_inputs(&self) -> Result<(), ConfigError> {
        for p in self.dataset.files() {
            if !p.is_file() {
                let mut msg = format!("dataset file {} does not exist", p.display());
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if let Some((_, sum)) = KNOWN_FILES.iter().find(|(f, _)| *f == name) {
                    msg.push_str(&format!(
                        "; expected {name} with sha256 {sum} (scripts/fetch_mnist.sh fetches it)"
                    ));
                }
                return Err(err(None, msg));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` text (output directory excluded).
    pub fn canonical_text(&self) -> String {
        self.canonical
            .iter()
            .filter(|(k, _)| k.as_str() != "out")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn fingerprint(&self) -> String {
        gradnovel::codec::sha256_hex([self.canonical_text().as_bytes()])
    }

    pub fn hyperparameters(&self) -> BTreeMap<String, String> {
        let p = &self.protocol;
        let v = &p.vae;
        let d = &p.detector;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, val: String| {
            m.insert(k.to_string(), val);
        };
        put("vae.epochs", v.epochs.to_string());
        put("vae.batch_size", v.batch_size.to_string());
        put("vae.learning_rate", v.learning_rate.to_string());
        put("vae.betas", format!("{}, {}", v.beta1, v.beta2));
        put("vae.epsilon", v.epsilon.to_string());
        put("vae.latent_dim", v.latent_dim.to_string());
        put("vae.hidden", join(&v.hidden));
        put("detector.hidden", d.hidden.to_string());
        put("detector.epochs", d.epochs.to_string());
        put("detector.batch_size", d.batch_size.to_string());
        put("detector.learning_rate", d.learning_rate.to_string());
        put("condition.detector_hidden", self.condition_detector.hidden.to_string());
        put("condition.detector_epochs", self.condition_detector.epochs.to_string());
        put("noise.sigma", p.noise_sigma.to_string());
        put("features.include_bias", p.include_bias.to_string());
        put(
            "features.layer",
            p.gradient_layer.map_or("protocol default".into(), |l| l.to_string()),
        );
        put("split.folds", p.fold_count.to_string());
        put("split.run_folds", join(&p.folds));
        put(
            "split.max_train_inliers",
            p.max_train_inliers.map_or("all".into(), |n| n.to_string()),
        );
        put("histogram.bins", self.bins.to_string());
        m
    }
}

fn join<V: fmt::Display>(v: &[V]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}
