//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use snowseg::model::WidthScale;
use snowseg::trainer::TrainConfig;
use snowseg::{Error, ModelConfig, Result};

/// Everything a training run needs. Paths are resolved against the directory
/// holding the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    /// `None` means "as many classes as the class table lists".
    pub num_classes: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub classes: Option<PathBuf>,
}

pub const KEYS: [&str; 14] = [
    "num_classes",
    "width_scale",
    "input_h",
    "input_w",
    "seed",
    "learn_upsampling",
    "train_manifest",
    "val_manifest",
    "classes",
    "batch_size",
    "epochs",
    "lr",
    "momentum",
    "eval_every",
];

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            // A missing config is a usage problem, not a runtime one.
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        RunConfig::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let base = origin.parent().unwrap_or(Path::new(""));
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key '{key}'")));
            }
            if seen.contains(&key) {
                return Err(err(format!("key '{key}' is set twice")));
            }
            seen.push(key);
            cfg.set(key, value, base).map_err(err)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("{key}: '{v}' is not a valid number"))
        }
        let path = || base.join(value);
        match key {
            "num_classes" => self.num_classes = Some(num(key, value)?),
            "width_scale" => {
                self.model.width_scale = value.parse::<WidthScale>().map_err(|e| e.to_string())?
            }
            "input_h" => self.model.input_h = num(key, value)?,
            "input_w" => self.model.input_w = num(key, value)?,
            "seed" => {
                let seed = num(key, value)?;
                self.model.seed = seed;
                self.train.seed = seed;
            }
            "learn_upsampling" => {
                self.model.learn_upsampling = match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(format!(
                            "learn_upsampling: expected true or false, got '{value}'"
                        ))
                    }
                }
            }
            "train_manifest" => self.train_manifest = Some(path()),
            "val_manifest" => self.val_manifest = Some(path()),
            "classes" => self.classes = Some(path()),
            "batch_size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "momentum" => self.train.momentum = num(key, value)?,
            "eval_every" => self.train.eval_every = num(key, value)?,
            _ => unreachable!("keys are checked against KEYS"),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
    }

    /// Applies a named batch-size/epoch regime.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let p = TrainConfig::preset(name)?;
        self.train.batch_size = p.batch_size;
        self.train.epochs = p.epochs;
        Ok(())
    }
}
