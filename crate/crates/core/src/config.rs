//! Flat `key=value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are rejected.
//! Relative paths are resolved against the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::decoder::ModelConfig;
use crate::error::{Error, Result};
use crate::feature_store::SyntheticConfig;
use crate::org::{OrgConfig, OrgMode, TopK};
use crate::trl::{ElmConfig, Interpolation};

/// How reference captions are turned into training examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Every caption is one example per epoch.
    PerCaption,
    /// One randomly drawn caption per video per epoch.
    Sample,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_caption" => Ok(Self::PerCaption),
            "sample" => Ok(Self::Sample),
            other => Err(Error::config(format!(
                "train.pairing must be per_caption or sample, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Pairing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerCaption => "per_caption",
            Self::Sample => "sample",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub synth: SyntheticConfig,
    pub vocab_path: PathBuf,
    pub min_count: usize,
    pub caption_max_len: usize,
    pub org: OrgConfig,
    pub hidden: usize,
    pub word_dim: usize,
    pub attn_dim: usize,
    pub beam: usize,
    pub decode_max_len: usize,
    pub elm: ElmConfig,
    pub elm_path: PathBuf,
    pub trl_k: usize,
    pub temperature: f64,
    pub lambda: f64,
    pub soft_path: PathBuf,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub abort_norm: f64,
    pub pairing: Pairing,
    pub patience: usize,
    pub validation: Option<PathBuf>,
    pub checkpoints: PathBuf,
    pub log: PathBuf,
    pub resume: bool,
    pub checkpoint: Option<PathBuf>,
    pub captions: PathBuf,
    pub metrics: PathBuf,
    pub metrics_per_video: PathBuf,
    pub grad_eps: f64,
    pub grad_samples: usize,
    pub grad_tolerance: f64,
}

/// Every accepted key with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "seed",
        "13",
        "seed for data generation, initialization and shuffling (--seed overrides)",
    ),
    ("data.dir", "data", "directory written by gen-synth"),
    (
        "data.manifest",
        "data/manifest.json",
        "dataset manifest (JSON)",
    ),
    ("synth.videos", "20", "synthetic video count"),
    ("synth.frames", "8", "frames per video (L)"),
    ("synth.objects", "4", "objects per frame (N)"),
    ("synth.appearance_dim", "32", "appearance feature width d_a"),
    ("synth.motion_dim", "32", "motion feature width d_m"),
    ("synth.object_dim", "32", "object feature width d_o"),
    ("synth.noise", "0.1", "standard deviation of feature noise"),
    ("vocab.path", "vocab.txt", "vocabulary file"),
    (
        "vocab.min_count",
        "2",
        "minimum corpus count for a word to get an id",
    ),
    (
        "caption.max_len",
        "24",
        "content words kept per training caption",
    ),
    ("org.mode", "c_org", "p_org or c_org"),
    ("org.top_k", "5", "neighbours per node in c_org, or \"all\""),
    ("org.dim", "512", "graph feature width d (= d')"),
    (
        "decoder.hidden",
        "512",
        "LSTM and frame projection width d_h",
    ),
    ("decoder.word_dim", "300", "word embedding width"),
    ("decoder.attn_dim", "256", "attention hidden width"),
    ("decoder.beam", "5", "beam size at inference"),
    ("decoder.max_len", "24", "maximum generated content words"),
    (
        "elm.order",
        "3",
        "n-gram order of the reference language model",
    ),
    ("elm.alpha", "0.01", "add-alpha smoothing constant"),
    ("elm.interpolation", "recursive", "recursive or uniform"),
    ("elm.path", "elm.json", "trained language model"),
    ("trl.k", "50", "soft targets per step"),
    ("trl.temperature", "1.5", "language model temperature T_e"),
    ("trl.lambda", "0.3", "weight of the soft-target loss"),
    ("trl.store", "soft_targets.bin", "soft-target store"),
    ("train.lr", "0.0003", "Adam learning rate"),
    ("train.batch", "8", "examples per step"),
    ("train.epochs", "50", "maximum epochs"),
    ("train.clip", "5.0", "global gradient norm clip"),
    (
        "train.abort_norm",
        "10000",
        "abort when the gradient norm exceeds this",
    ),
    ("train.pairing", "per_caption", "per_caption or sample"),
    (
        "train.patience",
        "10",
        "epochs without validation CIDEr gain before stopping",
    ),
    (
        "train.validation",
        "",
        "manifest of a validation split (empty disables early stopping)",
    ),
    ("train.checkpoints", "checkpoints", "checkpoint directory"),
    ("train.log", "train_log.jsonl", "per-step JSON lines log"),
    (
        "train.resume",
        "false",
        "continue from the latest checkpoint",
    ),
    (
        "infer.checkpoint",
        "",
        "checkpoint to decode with (empty: best, else latest)",
    ),
    (
        "infer.output",
        "captions.tsv",
        "generated captions, video_id<TAB>caption",
    ),
    ("eval.output", "metrics.txt", "corpus metric report"),
    (
        "eval.per_video",
        "metrics_per_video.tsv",
        "per-video metric breakdown",
    ),
    ("gradcheck.eps", "1.5e-4", "central difference step"),
    ("gradcheck.samples", "64", "coordinates checked per suite"),
    (
        "gradcheck.tolerance",
        "1e-4",
        "maximum accepted relative error",
    ),
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl Default for Config {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data_dir: PathBuf::new(),
            manifest: PathBuf::new(),
            synth: SyntheticConfig::default(),
            vocab_path: PathBuf::new(),
            min_count: 0,
            caption_max_len: 0,
            org: OrgConfig::default(),
            hidden: 0,
            word_dim: 0,
            attn_dim: 0,
            beam: 0,
            decode_max_len: 0,
            elm: ElmConfig::default(),
            elm_path: PathBuf::new(),
            trl_k: 0,
            temperature: 0.0,
            lambda: 0.0,
            soft_path: PathBuf::new(),
            lr: 0.0,
            batch: 0,
            epochs: 0,
            clip: 0.0,
            abort_norm: 0.0,
            pairing: Pairing::PerCaption,
            patience: 0,
            validation: None,
            checkpoints: PathBuf::new(),
            log: PathBuf::new(),
            resume: false,
            checkpoint: None,
            captions: PathBuf::new(),
            metrics: PathBuf::new(),
            metrics_per_video: PathBuf::new(),
            grad_eps: 0.0,
            grad_samples: 0,
            grad_tolerance: 0.0,
        };
        for (key, value, _) in KEYS {
            cfg.set(key, value).expect("built-in defaults parse");
        }
        cfg
    }
}

impl Config {
    /// Parses a configuration file body on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key=value, got {raw:?}", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::config(format!("override must be key=value, got {assignment:?}"))
        })?;
        self.set(key.trim(), value.trim())?;
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data.dir" => self.data_dir = value.into(),
            "data.manifest" => self.manifest = value.into(),
            "synth.videos" => self.synth.videos = parse(key, value)?,
            "synth.frames" => self.synth.frames = parse(key, value)?,
            "synth.objects" => self.synth.objects = parse(key, value)?,
            "synth.appearance_dim" => self.synth.appearance_dim = parse(key, value)?,
            "synth.motion_dim" => self.synth.motion_dim = parse(key, value)?,
            "synth.object_dim" => self.synth.object_dim = parse(key, value)?,
            "synth.noise" => self.synth.noise = parse(key, value)?,
            "vocab.path" => self.vocab_path = value.into(),
            "vocab.min_count" => self.min_count = parse(key, value)?,
            "caption.max_len" => self.caption_max_len = parse(key, value)?,
            "org.mode" => self.org.mode = value.parse::<OrgMode>()?,
            "org.top_k" => self.org.top_k = value.parse::<TopK>()?,
            "org.dim" => self.org.dim = parse(key, value)?,
            "decoder.hidden" => self.hidden = parse(key, value)?,
            "decoder.word_dim" => self.word_dim = parse(key, value)?,
            "decoder.attn_dim" => self.attn_dim = parse(key, value)?,
            "decoder.beam" => self.beam = parse(key, value)?,
            "decoder.max_len" => self.decode_max_len = parse(key, value)?,
            "elm.order" => self.elm.order = parse(key, value)?,
            "elm.alpha" => self.elm.alpha = parse(key, value)?,
            "elm.interpolation" => self.elm.interpolation = value.parse::<Interpolation>()?,
            "elm.path" => self.elm_path = value.into(),
            "trl.k" => self.trl_k = parse(key, value)?,
            "trl.temperature" => self.temperature = parse(key, value)?,
            "trl.lambda" => self.lambda = parse(key, value)?,
            "trl.store" => self.soft_path = value.into(),
            "train.lr" => self.lr = parse(key, value)?,
            "train.batch" => self.batch = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.clip" => self.clip = parse(key, value)?,
            "train.abort_norm" => self.abort_norm = parse(key, value)?,
            "train.pairing" => self.pairing = value.parse()?,
            "train.patience" => self.patience = parse(key, value)?,
            "train.validation" => self.validation = optional_path(value),
            "train.checkpoints" => self.checkpoints = value.into(),
            "train.log" => self.log = value.into(),
            "train.resume" => self.resume = parse(key, value)?,
            "infer.checkpoint" => self.checkpoint = optional_path(value),
            "infer.output" => self.captions = value.into(),
            "eval.output" => self.metrics = value.into(),
            "eval.per_video" => self.metrics_per_video = value.into(),
            "gradcheck.eps" => self.grad_eps = parse(key, value)?,
            "gradcheck.samples" => self.grad_samples = parse(key, value)?,
            "gradcheck.tolerance" => self.grad_tolerance = parse(key, value)?,
            other => return Err(Error::config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("synth.videos", self.synth.videos),
            ("synth.frames", self.synth.frames),
            ("synth.objects", self.synth.objects),
            ("vocab.min_count", self.min_count),
            ("caption.max_len", self.caption_max_len),
            ("org.dim", self.org.dim),
            ("decoder.hidden", self.hidden),
            ("decoder.word_dim", self.word_dim),
            ("decoder.attn_dim", self.attn_dim),
            ("decoder.beam", self.beam),
            ("decoder.max_len", self.decode_max_len),
            ("elm.order", self.elm.order),
            ("trl.k", self.trl_k),
            ("train.batch", self.batch),
            ("gradcheck.samples", self.grad_samples),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{key} must be positive")));
            }
        }
        let reals = [
            ("elm.alpha", self.elm.alpha),
            ("trl.temperature", self.temperature),
            ("train.lr", self.lr),
            ("train.clip", self.clip),
            ("train.abort_norm", self.abort_norm),
            ("gradcheck.eps", self.grad_eps),
            ("gradcheck.tolerance", self.grad_tolerance),
        ];
        for (key, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{key} must be a positive number")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("trl.lambda must lie in [0, 1]"));
        }
        if !(self.synth.noise >= 0.0) {
            return Err(Error::config("synth.noise must be non-negative"));
        }
        Ok(())
    }

    /// Model shapes for a dataset with the given feature widths.
    pub fn model_config(
        &self,
        appearance_dim: usize,
        motion_dim: usize,
        object_dim: usize,
        vocab_size: usize,
    ) -> ModelConfig {
        ModelConfig {
            appearance_dim,
            motion_dim,
            object_dim,
            vocab_size,
            org: self.org,
            hidden: self.hidden,
            word_dim: self.word_dim,
            attn_dim: self.attn_dim,
        }
    }

    /// Every key with its current value, in documentation order.
    pub fn to_text(&self) -> String {
        let path = |p: &Path| p.display().to_string();
        let opt = |p: &Option<PathBuf>| p.as_deref().map(path).unwrap_or_default();
        let mut out = String::new();
        for (key, _, _) in KEYS {
            let value = match *key {
                "seed" => self.seed.to_string(),
                "data.dir" => path(&self.data_dir),
                "data.manifest" => path(&self.manifest),
                "synth.videos" => self.synth.videos.to_string(),
                "synth.frames" => self.synth.frames.to_string(),
                "synth.objects" => self.synth.objects.to_string(),
                "synth.appearance_dim" => self.synth.appearance_dim.to_string(),
                "synth.motion_dim" => self.synth.motion_dim.to_string(),
                "synth.object_dim" => self.synth.object_dim.to_string(),
                "synth.noise" => self.synth.noise.to_string(),
                "vocab.path" => path(&self.vocab_path),
                "vocab.min_count" => self.min_count.to_string(),
                "caption.max_len" => self.caption_max_len.to_string(),
                "org.mode" => self.org.mode.to_string(),
                "org.top_k" => self.org.top_k.to_string(),
                "org.dim" => self.org.dim.to_string(),
                "decoder.hidden" => self.hidden.to_string(),
                "decoder.word_dim" => self.word_dim.to_string(),
                "decoder.attn_dim" => self.attn_dim.to_string(),
                "decoder.beam" => self.beam.to_string(),
                "decoder.max_len" => self.decode_max_len.to_string(),
                "elm.order" => self.elm.order.to_string(),
                "elm.alpha" => self.elm.alpha.to_string(),
                "elm.interpolation" => self.elm.interpolation.to_string(),
                "elm.path" => path(&self.elm_path),
                "trl.k" => self.trl_k.to_string(),
                "trl.temperature" => self.temperature.to_string(),
                "trl.lambda" => self.lambda.to_string(),
                "trl.store" => path(&self.soft_path),
                "train.lr" => self.lr.to_string(),
                "train.batch" => self.batch.to_string(),
                "train.epochs" => self.epochs.to_string(),
                "train.clip" => self.clip.to_string(),
                "train.abort_norm" => self.abort_norm.to_string(),
                "train.pairing" => self.pairing.to_string(),
                "train.patience" => self.patience.to_string(),
                "train.validation" => opt(&self.validation),
                "train.checkpoints" => path(&self.checkpoints),
                "train.log" => path(&self.log),
                "train.resume" => self.resume.to_string(),
                "infer.checkpoint" => opt(&self.checkpoint),
                "infer.output" => path(&self.captions),
                "eval.output" => path(&self.metrics),
                "eval.per_video" => path(&self.metrics_per_video),
                "gradcheck.eps" => self.grad_eps.to_string(),
                "gradcheck.samples" => self.grad_samples.to_string(),
                "gradcheck.tolerance" => self.grad_tolerance.to_string(),
                _ => unreachable!("every documented key is rendered"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut out = String::from("Configuration keys (key = default: meaning):\n");
    for (key, default, doc) in KEYS {
        let shown = if default.is_empty() { "\"\"" } else { default };
        let _ = writeln!(out, "  {key} = {shown}: {doc}");
    }
    out
}
