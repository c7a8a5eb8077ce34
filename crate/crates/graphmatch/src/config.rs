//! `key = value` run configuration. Every key has a default; the resolved
//! form lists all of them and parses back to an identical configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use graphmatch_core::data::SynthConfig;
use graphmatch_core::gnb::GnbConfig;
use graphmatch_core::training::{InferenceOptions, TrainConfig};

use crate::error::{self, Error, Result};

pub const RESOLVED_NAME: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Feeds every random stream: synthesis, initialization and shuffling.
    pub seed: u64,
    pub synth: SynthConfig,
    pub latent_widths: Vec<usize>,
    pub hidden: BTreeMap<String, Vec<usize>>,
    pub train: TrainConfig,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub threshold: f64,
    pub top_k: usize,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Vocabulary order; empty means embedding file order.
    pub labels: Vec<String>,
    pub checkpoint: Option<PathBuf>,
    /// Starting point for `train` instead of fresh initialization.
    pub resume: Option<PathBuf>,
    /// Record to explain in `predict`; empty means every record.
    pub predict_id: Option<String>,
    pub gradcheck_eps: f64,
    pub gradcheck_tolerance: f64,
    pub gradcheck_widths: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            latent_widths: vec![512, 256],
            hidden: BTreeMap::new(),
            train: TrainConfig::default(),
            checkpoint_every: 0,
            threshold: 0.5,
            top_k: 3,
            train_data: None,
            val_data: None,
            test_data: None,
            embeddings: None,
            labels: Vec::new(),
            checkpoint: None,
            resume: None,
            predict_id: None,
            gradcheck_eps: 1e-5,
            gradcheck_tolerance: 1e-3,
            gradcheck_widths: vec![4, 3],
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| value(key, s)).collect()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let s = &mut self.synth;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = value(key, v)?,
            "synth.num_labels" => s.num_labels = value(key, v)?,
            "synth.feature_dim" => s.feature_dim = value(key, v)?,
            "synth.embed_dim" => s.embed_dim = value(key, v)?,
            "synth.train_images" => s.train_images = value(key, v)?,
            "synth.test_images" => s.test_images = value(key, v)?,
            "synth.min_instances" => s.min_instances = value(key, v)?,
            "synth.max_instances" => s.max_instances = value(key, v)?,
            "synth.distractor_rate" => s.distractor_rate = value(key, v)?,
            "synth.noise_sigma" => s.noise_sigma = value(key, v)?,
            "synth.cluster_positives" => s.cluster_positives = value(key, v)?,
            "model.latent_widths" => self.latent_widths = list(key, v)?,
            "train.epochs" => t.epochs = value(key, v)?,
            "train.lr" => t.lr = value(key, v)?,
            "train.lr_decay" => t.lr_decay = value(key, v)?,
            "train.lr_period" => t.lr_period = value(key, v)?,
            "train.momentum" => t.momentum = value(key, v)?,
            "train.weight_decay" => t.weight_decay = value(key, v)?,
            "train.beta" => t.beta = value(key, v)?,
            "train.top_m" => t.top_m = value(key, v)?,
            "train.knn_k" => t.knn_k = value(key, v)?,
            "train.accumulate" => t.accumulate = value(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = value(key, v)?,
            "train.resume" => self.resume = path(v),
            "eval.threshold" => self.threshold = value(key, v)?,
            "eval.top_k" => self.top_k = value(key, v)?,
            "data.train" => self.train_data = path(v),
            "data.val" => self.val_data = path(v),
            "data.test" => self.test_data = path(v),
            "data.embeddings" => self.embeddings = path(v),
            "data.labels" => self.labels = list(key, v)?,
            "checkpoint" => self.checkpoint = path(v),
            "predict.id" => self.predict_id = (!v.is_empty()).then(|| v.to_string()),
            "gradcheck.eps" => self.gradcheck_eps = value(key, v)?,
            "gradcheck.tolerance" => self.gradcheck_tolerance = value(key, v)?,
            "gradcheck.latent_widths" => self.gradcheck_widths = list(key, v)?,
            _ => match key.strip_prefix("model.hidden.") {
                Some(family) => {
                    self.hidden.insert(family.to_string(), list(key, v)?);
                }
                None => return Err(Error::Config(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Defaults overlaid with the lines of `text`. Blank lines and `#` comments are skipped.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(path, &error::read_to_string(path)?)
    }

    /// Every key with its current value, sorted by key.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let s = &self.synth;
        let t = &self.train;
        let mut m: BTreeMap<String, String> = [
            ("seed", self.seed.to_string()),
            ("synth.num_labels", s.num_labels.to_string()),
            ("synth.feature_dim", s.feature_dim.to_string()),
            ("synth.embed_dim", s.embed_dim.to_string()),
            ("synth.train_images", s.train_images.to_string()),
            ("synth.test_images", s.test_images.to_string()),
            ("synth.min_instances", s.min_instances.to_string()),
            ("synth.max_instances", s.max_instances.to_string()),
            ("synth.distractor_rate", s.distractor_rate.to_string()),
            ("synth.noise_sigma", s.noise_sigma.to_string()),
            ("synth.cluster_positives", s.cluster_positives.to_string()),
            ("model.latent_widths", show_list(&self.latent_widths)),
            ("train.epochs", t.epochs.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.lr_decay", t.lr_decay.to_string()),
            ("train.lr_period", t.lr_period.to_string()),
            ("train.momentum", t.momentum.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.beta", t.beta.to_string()),
            ("train.top_m", t.top_m.to_string()),
            ("train.knn_k", t.knn_k.to_string()),
            ("train.accumulate", t.accumulate.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("train.resume", show_path(&self.resume)),
            ("eval.threshold", self.threshold.to_string()),
            ("eval.top_k", self.top_k.to_string()),
            ("data.train", show_path(&self.train_data)),
            ("data.val", show_path(&self.val_data)),
            ("data.test", show_path(&self.test_data)),
            ("data.embeddings", show_path(&self.embeddings)),
            ("data.labels", self.labels.join(",")),
            ("checkpoint", show_path(&self.checkpoint)),
            ("predict.id", self.predict_id.clone().unwrap_or_default()),
            ("gradcheck.eps", self.gradcheck_eps.to_string()),
            ("gradcheck.tolerance", self.gradcheck_tolerance.to_string()),
            ("gradcheck.latent_widths", show_list(&self.gradcheck_widths)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (family, widths) in &self.hidden {
            m.insert(format!("model.hidden.{family}"), show_list(widths));
        }
        m
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_NAME);
        error::write(&path, self.to_text())?;
        Ok(path)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn gnb_config(&self, feature_dim: usize, embed_dim: usize) -> Result<GnbConfig> {
        let cfg = GnbConfig {
            feature_dim,
            embed_dim,
            latent_widths: self.latent_widths.clone(),
            hidden: self.hidden.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn inference(&self) -> InferenceOptions {
        InferenceOptions {
            top_m: self.train.top_m,
            knn_k: self.train.knn_k,
            threshold: self.threshold,
            top_k: self.top_k,
        }
    }

    /// The path stored under `key`, or a config error naming the key.
    pub fn require<'a>(&self, key: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is not set")))
    }
}
