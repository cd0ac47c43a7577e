//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored and
//! unknown or repeated keys are rejected. Every key has a default; the
//! effective configuration is written back out by [`RunConfig::render`] in a
//! form that parses to the same value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use drsae_core::analysis::Thresholds;
use drsae_core::trainer::{Phase, TrainConfig};
use drsae_core::{Hyper, Split};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}` ({reason})")]
    Value { key: String, value: String, reason: String },
    #[error("key `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub out_dir: PathBuf,

    pub iterations: usize,
    pub hidden: usize,
    pub classes: usize,
    pub lambda: f64,
    pub alpha: Option<f64>,
    pub lr_base: f64,
    pub d_bound: f64,
    pub c_bound: f64,
    pub clf_lr_divisor: f64,
    pub seed: u64,

    pub epochs_max: usize,
    pub lr_decay: f64,
    pub patience: usize,
    pub minibatch: usize,
    pub shuffle_seed: Option<u64>,
    pub threads: usize,
    /// Fine-tuning overrides; `None` inherits the shared value.
    pub finetune_lr_base: Option<f64>,
    pub finetune_patience: Option<usize>,
    pub finetune_init_c: InitC,
    pub probe_lr_base: Option<f64>,

    pub train_count: usize,
    pub val_count: usize,
    /// Restrict the test split to its first `test_count` items; `None` keeps all.
    pub test_count: Option<usize>,
    /// Keep only the first `k` items per class of the train (validation)
    /// split; `None` keeps them all.
    pub train_per_class: Option<usize>,
    pub val_per_class: Option<usize>,
    pub split_seed: Option<u64>,

    pub eval_split: Split,
    pub analysis_split: Split,
    pub part_threshold: f64,
    pub categorical_threshold: f64,
    pub prototypes_k: usize,
    pub progressive_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyper::default();
        let mnist = Path::new("data/mnist");
        RunConfig {
            train_images: mnist.join("train-images-idx3-ubyte"),
            train_labels: mnist.join("train-labels-idx1-ubyte"),
            test_images: mnist.join("t10k-images-idx3-ubyte"),
            test_labels: mnist.join("t10k-labels-idx1-ubyte"),
            out_dir: PathBuf::from("runs/default"),
            iterations: h.iterations,
            hidden: h.hidden,
            classes: h.classes,
            lambda: h.lambda,
            alpha: h.alpha,
            lr_base: h.lr_base,
            d_bound: h.d_bound,
            c_bound: h.c_bound,
            clf_lr_divisor: h.clf_lr_divisor,
            seed: h.seed,
            epochs_max: 50,
            lr_decay: 0.97,
            patience: 5,
            minibatch: 1,
            shuffle_seed: None,
            threads: 1,
            finetune_lr_base: None,
            finetune_patience: None,
            finetune_init_c: InitC::Zero,
            probe_lr_base: None,
            train_count: 50_000,
            val_count: 10_000,
            test_count: None,
            train_per_class: None,
            val_per_class: None,
            split_seed: None,
            eval_split: Split::Test,
            analysis_split: Split::Test,
            part_threshold: 0.5,
            categorical_threshold: 0.7,
            prototypes_k: 3,
            progressive_samples: 4,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), value: value.into(), reason: e.to_string() })
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_split(key: &str, value: &str) -> Result<Split, ConfigError> {
    match value {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        _ => Err(ConfigError::Value { key: key.into(), value: value.into(), reason: "expected train, val or test".into() }),
    }
}

/// How fine-tuning initializes the classifier matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitC {
    /// Keep the pretrained `C`, which is zero.
    Zero,
    /// Start from the `C` of the linear probe on the pretrained code.
    Probe,
}

impl InitC {
    pub fn name(self) -> &'static str {
        match self {
            InitC::Zero => "zero",
            InitC::Probe => "probe",
        }
    }

    fn parse(key: &str, value: &str) -> Result<Self, ConfigError> {
        match value {
            "zero" => Ok(InitC::Zero),
            "probe" => Ok(InitC::Probe),
            _ => Err(ConfigError::Value { key: key.into(), value: value.into(), reason: "expected zero or probe".into() }),
        }
    }
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".into(), T::to_string)
}

/// Every key in rendering order.
pub const KEYS: &[&str] = &[
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "out_dir",
    "iterations",
    "hidden",
    "classes",
    "lambda",
    "alpha",
    "lr_base",
    "d_bound",
    "c_bound",
    "clf_lr_divisor",
    "seed",
    "epochs_max",
    "lr_decay",
    "patience",
    "minibatch",
    "shuffle_seed",
    "threads",
    "finetune_lr_base",
    "finetune_patience",
    "finetune_init_c",
    "probe_lr_base",
    "train_count",
    "val_count",
    "test_count",
    "train_per_class",
    "val_per_class",
    "split_seed",
    "eval_split",
    "analysis_split",
    "part_threshold",
    "categorical_threshold",
    "prototypes_k",
    "progressive_samples",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "train_images" => self.train_images = v.into(),
            "train_labels" => self.train_labels = v.into(),
            "test_images" => self.test_images = v.into(),
            "test_labels" => self.test_labels = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "iterations" => self.iterations = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "classes" => self.classes = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "alpha" => self.alpha = parse_auto(key, v)?,
            "lr_base" => self.lr_base = parse_num(key, v)?,
            "d_bound" => self.d_bound = parse_num(key, v)?,
            "c_bound" => self.c_bound = parse_num(key, v)?,
            "clf_lr_divisor" => self.clf_lr_divisor = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "epochs_max" => self.epochs_max = parse_num(key, v)?,
            "lr_decay" => self.lr_decay = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "minibatch" => self.minibatch = parse_num(key, v)?,
            "shuffle_seed" => self.shuffle_seed = parse_auto(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "finetune_lr_base" => self.finetune_lr_base = parse_auto(key, v)?,
            "finetune_patience" => self.finetune_patience = parse_auto(key, v)?,
            "finetune_init_c" => self.finetune_init_c = InitC::parse(key, v)?,
            "probe_lr_base" => self.probe_lr_base = parse_auto(key, v)?,
            "train_count" => self.train_count = parse_num(key, v)?,
            "val_count" => self.val_count = parse_num(key, v)?,
            "test_count" => self.test_count = parse_auto(key, v)?,
            "train_per_class" => self.train_per_class = parse_auto(key, v)?,
            "val_per_class" => self.val_per_class = parse_auto(key, v)?,
            "split_seed" => self.split_seed = parse_auto(key, v)?,
            "eval_split" => self.eval_split = parse_split(key, v)?,
            "analysis_split" => self.analysis_split = parse_split(key, v)?,
            "part_threshold" => self.part_threshold = parse_num(key, v)?,
            "categorical_threshold" => self.categorical_threshold = parse_num(key, v)?,
            "prototypes_k" => self.prototypes_k = parse_num(key, v)?,
            "progressive_samples" => self.progressive_samples = parse_num(key, v)?,
            _ => unreachable!("keys are checked against KEYS"),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        // Delegate the numeric checks to the core types, then name the key.
        let invalid = |key, message: String| Err(ConfigError::Invalid { key, message });
        if self.iterations == 0 {
            return invalid("iterations", "must be ≥ 1".into());
        }
        if self.hidden == 0 {
            return invalid("hidden", "must be ≥ 1".into());
        }
        if self.classes == 0 || self.classes > 256 {
            return invalid("classes", "must lie in 1..=256".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid("lambda", "must be finite and ≥ 0".into());
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return invalid("alpha", "must be > 0 or auto".into());
            }
        }
        for (key, v) in [("lr_base", self.lr_base), ("d_bound", self.d_bound), ("c_bound", self.c_bound), ("clf_lr_divisor", self.clf_lr_divisor)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(key, "must be finite and > 0".into());
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid("lr_decay", "must lie in (0, 1]".into());
        }
        if self.patience == 0 {
            return invalid("patience", "must be ≥ 1".into());
        }
        if self.finetune_patience == Some(0) {
            return invalid("finetune_patience", "must be ≥ 1 or auto".into());
        }
        for (key, v) in [("finetune_lr_base", self.finetune_lr_base), ("probe_lr_base", self.probe_lr_base)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return invalid(key, "must be finite and > 0 or auto".into());
                }
            }
        }
        if self.minibatch == 0 {
            return invalid("minibatch", "must be ≥ 1".into());
        }
        if self.threads == 0 {
            return invalid("threads", "must be ≥ 1".into());
        }
        if !(self.part_threshold >= 0.0 && self.part_threshold <= self.categorical_threshold) {
            return invalid("part_threshold", "must satisfy 0 ≤ part_threshold ≤ categorical_threshold".into());
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let p = |p: &PathBuf| p.display().to_string();
        let values: Vec<String> = vec![
            p(&self.train_images),
            p(&self.train_labels),
            p(&self.test_images),
            p(&self.test_labels),
            p(&self.out_dir),
            self.iterations.to_string(),
            self.hidden.to_string(),
            self.classes.to_string(),
            format!("{:?}", self.lambda),
            self.alpha.map_or_else(|| "auto".into(), |a| format!("{a:?}")),
            format!("{:?}", self.lr_base),
            format!("{:?}", self.d_bound),
            format!("{:?}", self.c_bound),
            format!("{:?}", self.clf_lr_divisor),
            self.seed.to_string(),
            self.epochs_max.to_string(),
            format!("{:?}", self.lr_decay),
            self.patience.to_string(),
            self.minibatch.to_string(),
            auto(&self.shuffle_seed),
            self.threads.to_string(),
            self.finetune_lr_base.map_or_else(|| "auto".into(), |a| format!("{a:?}")),
            auto(&self.finetune_patience),
            self.finetune_init_c.name().into(),
            self.probe_lr_base.map_or_else(|| "auto".into(), |a| format!("{a:?}")),
            self.train_count.to_string(),
            self.val_count.to_string(),
            auto(&self.test_count),
            auto(&self.train_per_class),
            auto(&self.val_per_class),
            auto(&self.split_seed),
            self.eval_split.name().into(),
            self.analysis_split.name().into(),
            format!("{:?}", self.part_threshold),
            format!("{:?}", self.categorical_threshold),
            self.prototypes_k.to_string(),
            self.progressive_samples.to_string(),
        ];
        let mut out = String::from("# effective drsae configuration\n");
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        }
        out
    }

    /// `input_dim` comes from the data, not the config.
    pub fn hyper(&self, input_dim: usize) -> Hyper {
        Hyper {
            iterations: self.iterations,
            hidden: self.hidden,
            input_dim,
            classes: self.classes,
            lambda: self.lambda,
            alpha: self.alpha,
            lr_base: self.lr_base,
            d_bound: self.d_bound,
            c_bound: self.c_bound,
            clf_lr_divisor: self.clf_lr_divisor,
            seed: self.seed,
        }
    }

    /// Fine-tuning applies its overrides on top of the shared settings.
    pub fn train_config(&self, phase: Phase, input_dim: usize) -> TrainConfig {
        let mut hyper = self.hyper(input_dim);
        let mut patience = self.patience;
        if phase == Phase::Finetune {
            hyper.lr_base = self.finetune_lr_base.unwrap_or(self.lr_base);
            patience = self.finetune_patience.unwrap_or(self.patience);
        }
        TrainConfig {
            phase,
            epochs_max: self.epochs_max,
            lr_decay: self.lr_decay,
            patience,
            minibatch: self.minibatch,
            hyper,
            rng_seed: self.shuffle_seed.unwrap_or(self.seed),
        }
    }

    /// Settings for the linear probe on a frozen encoder.
    pub fn probe_config(&self, input_dim: usize) -> TrainConfig {
        let mut cfg = self.train_config(Phase::Finetune, input_dim);
        cfg.hyper.lr_base = self.probe_lr_base.unwrap_or(self.lr_base);
        cfg
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { part: self.part_threshold, categorical: self.categorical_threshold }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }
}
