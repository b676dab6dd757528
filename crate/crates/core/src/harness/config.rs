use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::consensus::{LossConfig, LossKind};
use crate::error::{Error, Result};

/// Where consensus training gets its blob maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlobSource {
    /// The blob map written by the generator.
    Synth,
    /// One blob per class present.
    Classes,
    /// One blob per connected same-class region.
    Components,
}

impl BlobSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synth" => Ok(BlobSource::Synth),
            "classes" => Ok(BlobSource::Classes),
            "components" => Ok(BlobSource::Components),
            other => Err(Error::Config(format!(
                "unknown blob source {other:?} (synth | classes | components)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BlobSource::Synth => "synth",
            BlobSource::Classes => "classes",
            BlobSource::Components => "components",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub max_occluders: usize,
    pub noise: f64,
    pub loss: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub blobs: BlobSource,
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_floor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub flip: bool,
    pub dropout: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            image_size: 64,
            n_train: 500,
            n_val: 100,
            n_test: 100,
            max_occluders: 3,
            noise: 0.25,
            loss: LossKind::Consensus,
            alpha: 10.0,
            beta: 5.0,
            blobs: BlobSource::Synth,
            lr: 1e-3,
            lr_factor: 0.1,
            lr_patience: 5,
            lr_floor: 1e-5,
            epochs: 40,
            batch_size: 16,
            flip: false,
            dropout: 0.0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for {key}"))),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_value(key, v)?,
            "image_size" => self.image_size = parse_value(key, v)?,
            "n_train" => self.n_train = parse_value(key, v)?,
            "n_val" => self.n_val = parse_value(key, v)?,
            "n_test" => self.n_test = parse_value(key, v)?,
            "max_occluders" => self.max_occluders = parse_value(key, v)?,
            "noise" => self.noise = parse_value(key, v)?,
            "loss" => self.loss = LossKind::parse(v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "beta" => self.beta = parse_value(key, v)?,
            "blobs" => self.blobs = BlobSource::parse(v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "lr_factor" => self.lr_factor = parse_value(key, v)?,
            "lr_patience" => self.lr_patience = parse_value(key, v)?,
            "lr_floor" => self.lr_floor = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "flip" => self.flip = parse_bool(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Defaults overlaid with `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                cfg.apply(line)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("n_test", self.n_test),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.image_size.is_multiple_of(2) || self.image_size < 8 {
            return Err(Error::Config("image_size must be even and at least 8".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be a nonnegative number".into()));
        }
        if !(self.lr >= 0.0 && self.lr_floor >= 0.0 && self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::Config("learning-rate schedule out of range".into()));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            ..LossConfig::default()
        }
    }

    /// Round-trips through [`ExperimentConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("image_size", self.image_size.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_val", self.n_val.to_string());
        kv("n_test", self.n_test.to_string());
        kv("max_occluders", self.max_occluders.to_string());
        kv("noise", format!("{:?}", self.noise));
        kv("loss", self.loss.name().to_string());
        kv("alpha", format!("{:?}", self.alpha));
        kv("beta", format!("{:?}", self.beta));
        kv("blobs", self.blobs.name().to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("lr_factor", format!("{:?}", self.lr_factor));
        kv("lr_patience", self.lr_patience.to_string());
        kv("lr_floor", format!("{:?}", self.lr_floor));
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("flip", self.flip.to_string());
        kv("dropout", format!("{:?}", self.dropout));
        s
    }
}
