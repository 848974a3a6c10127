//! Plain `key=value` experiment configuration. One setting per line, `#`
//! starts a comment, unknown or repeated keys are errors. [`ExperimentConfig::render`]
//! writes every key, so a rendered config reproduces a run exactly.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::began::{EquilibriumState, GanTrainOptions, NetConfig};
use crate::classifier::{ClassifierConfig, ClassifierTrainOptions};
use crate::data::Scenario;
use crate::error::ConfigError;
use crate::losses::LossConfig;

/// GAN image side: a fixed size or the scenario's native size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageSize {
    Native,
    Fixed(usize),
}

impl ImageSize {
    pub fn resolve(self, scenario: Scenario) -> usize {
        match self {
            ImageSize::Native => scenario.native_size(),
            ImageSize::Fixed(s) => s,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub image_size: ImageSize,
    pub base_filters: usize,
    pub latent_dim: usize,
    pub extra_convs_per_block: usize,
    pub final_nonlinear: bool,
    pub omega: f64,
    pub n_bins: usize,
    pub sharpness: f64,
    pub value_lo: f64,
    pub value_hi: f64,
    pub gamma: f64,
    pub lambda_k: f64,
    pub k0: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub sample_every: usize,
    pub cls_input_size: usize,
    pub cls_base_width: usize,
    pub cls_blocks: Vec<usize>,
    pub cls_head: Vec<usize>,
    pub cls_epochs: usize,
    pub cls_batch: usize,
    pub cls_lr: f64,
    pub train_frac: f64,
    pub toy_per_class: usize,
    /// Synthetic patches per real patch of the augmented class.
    pub synthetic_ratio: f64,
    pub augment_label: u8,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        let loss = LossConfig::default();
        let eq = EquilibriumState::default();
        let cls = ClassifierConfig::default();
        let cls_opts = ClassifierTrainOptions::default();
        ExperimentConfig {
            seed: 0,
            scenario: Scenario::Simple,
            image_size: ImageSize::Fixed(net.image_size),
            base_filters: net.base_filters,
            latent_dim: net.latent_dim,
            extra_convs_per_block: net.extra_convs_per_block,
            final_nonlinear: net.final_nonlinear,
            omega: loss.omega,
            n_bins: loss.n_bins,
            sharpness: loss.sharpness,
            value_lo: loss.value_range.0,
            value_hi: loss.value_range.1,
            gamma: eq.gamma,
            lambda_k: eq.lambda_k,
            k0: eq.k,
            lr: 1e-4,
            batch: 16,
            steps: 2000,
            sample_every: 500,
            cls_input_size: cls.input_size,
            cls_base_width: cls.base_width,
            cls_blocks: cls.blocks_per_stage,
            cls_head: cls.head_dims,
            cls_epochs: cls_opts.epochs,
            cls_batch: cls_opts.batch,
            cls_lr: cls_opts.lr,
            train_frac: 0.8,
            toy_per_class: 100,
            synthetic_ratio: 5100.0 / 25000.0,
            augment_label: 0,
        }
    }
}

fn value_err(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| value_err(key, value, e.to_string()))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 30] = [
        "seed",
        "scenario",
        "image_size",
        "base_filters",
        "latent_dim",
        "extra_convs_per_block",
        "final_nonlinear",
        "omega",
        "n_bins",
        "sharpness",
        "value_lo",
        "value_hi",
        "gamma",
        "lambda_k",
        "k0",
        "lr",
        "batch",
        "steps",
        "sample_every",
        "cls_input_size",
        "cls_base_width",
        "cls_blocks",
        "cls_head",
        "cls_epochs",
        "cls_batch",
        "cls_lr",
        "train_frac",
        "toy_per_class",
        "synthetic_ratio",
        "augment_label",
    ];

    /// Apply one setting. Returns false for an unknown key.
    fn set(&mut self, key: &str, v: &str) -> Result<bool, ConfigError> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "scenario" => {
                self.scenario = Scenario::parse(v).ok_or_else(|| value_err(key, v, "expected hard, intermediate or simple"))?
            }
            "image_size" => {
                self.image_size = if v == "native" {
                    ImageSize::Native
                } else {
                    ImageSize::Fixed(num(key, v)?)
                }
            }
            "base_filters" => self.base_filters = num(key, v)?,
            "latent_dim" => self.latent_dim = num(key, v)?,
            "extra_convs_per_block" => self.extra_convs_per_block = num(key, v)?,
            "final_nonlinear" => self.final_nonlinear = num(key, v)?,
            "omega" => self.omega = num(key, v)?,
            "n_bins" => self.n_bins = num(key, v)?,
            "sharpness" => self.sharpness = num(key, v)?,
            "value_lo" => self.value_lo = num(key, v)?,
            "value_hi" => self.value_hi = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "lambda_k" => self.lambda_k = num(key, v)?,
            "k0" => self.k0 = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "sample_every" => self.sample_every = num(key, v)?,
            "cls_input_size" => self.cls_input_size = num(key, v)?,
            "cls_base_width" => self.cls_base_width = num(key, v)?,
            "cls_blocks" => self.cls_blocks = list(key, v)?,
            "cls_head" => self.cls_head = list(key, v)?,
            "cls_epochs" => self.cls_epochs = num(key, v)?,
            "cls_batch" => self.cls_batch = num(key, v)?,
            "cls_lr" => self.cls_lr = num(key, v)?,
            "train_frac" => self.train_frac = num(key, v)?,
            "toy_per_class" => self.toy_per_class = num(key, v)?,
            "synthetic_ratio" => self.synthetic_ratio = num(key, v)?,
            "augment_label" => self.augment_label = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Defaults overridden by the settings in `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !cfg.set(key, value)? {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Cross-field checks, reported before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |key: &str, e: &dyn std::fmt::Display| value_err(key, "", e.to_string());
        self.net_config()
            .validate()
            .map_err(|e| wrap("image_size/base_filters/latent_dim", &e))?;
        self.loss_config()
            .validate()
            .map_err(|e| wrap("omega/n_bins/sharpness/value_lo/value_hi", &e))?;
        self.classifier_config()
            .validate()
            .map_err(|e| wrap("cls_input_size/cls_blocks/cls_head", &e))?;
        if !(0.0..=1.0).contains(&self.k0) {
            return Err(value_err("k0", &self.k0.to_string(), "must lie in [0,1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(value_err("gamma", &self.gamma.to_string(), "must lie in (0,1]"));
        }
        if self.lambda_k.is_nan() || self.lambda_k <= 0.0 {
            return Err(value_err("lambda_k", &self.lambda_k.to_string(), "must be > 0"));
        }
        for (key, v) in [("lr", self.lr), ("cls_lr", self.cls_lr)] {
            if v.is_nan() || v <= 0.0 {
                return Err(value_err(key, &v.to_string(), "must be > 0"));
            }
        }
        for (key, v) in [("batch", self.batch), ("cls_batch", self.cls_batch)] {
            if v == 0 {
                return Err(value_err(key, "0", "must be >= 1"));
            }
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(value_err("train_frac", &self.train_frac.to_string(), "must lie in (0,1)"));
        }
        if self.synthetic_ratio.is_nan() || self.synthetic_ratio < 0.0 {
            return Err(value_err("synthetic_ratio", &self.synthetic_ratio.to_string(), "must be >= 0"));
        }
        if self.augment_label as usize >= crate::data::N_CLASSES {
            return Err(value_err("augment_label", &self.augment_label.to_string(), "must be < 7"));
        }
        Ok(())
    }

    /// Every key with its resolved value, in [`Self::KEYS`] order.
    pub fn render(&self) -> String {
        let image_size = match self.image_size {
            ImageSize::Native => "native".to_string(),
            ImageSize::Fixed(s) => s.to_string(),
        };
        let values: [String; 30] = [
            self.seed.to_string(),
            self.scenario.as_str().to_string(),
            image_size,
            self.base_filters.to_string(),
            self.latent_dim.to_string(),
            self.extra_convs_per_block.to_string(),
            self.final_nonlinear.to_string(),
            self.omega.to_string(),
            self.n_bins.to_string(),
            self.sharpness.to_string(),
            self.value_lo.to_string(),
            self.value_hi.to_string(),
            self.gamma.to_string(),
            self.lambda_k.to_string(),
            self.k0.to_string(),
            self.lr.to_string(),
            self.batch.to_string(),
            self.steps.to_string(),
            self.sample_every.to_string(),
            self.cls_input_size.to_string(),
            self.cls_base_width.to_string(),
            join(&self.cls_blocks),
            join(&self.cls_head),
            self.cls_epochs.to_string(),
            self.cls_batch.to_string(),
            self.cls_lr.to_string(),
            self.train_frac.to_string(),
            self.toy_per_class.to_string(),
            self.synthetic_ratio.to_string(),
            self.augment_label.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            image_size: self.image_size.resolve(self.scenario),
            base_filters: self.base_filters,
            latent_dim: self.latent_dim,
            extra_convs_per_block: self.extra_convs_per_block,
            final_nonlinear: self.final_nonlinear,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            omega: self.omega,
            n_bins: self.n_bins,
            sharpness: self.sharpness,
            value_range: (self.value_lo, self.value_hi),
        }
    }

    pub fn equilibrium(&self) -> EquilibriumState {
        EquilibriumState {
            k: self.k0,
            gamma: self.gamma,
            lambda_k: self.lambda_k,
        }
    }

    pub fn gan_options(&self) -> GanTrainOptions {
        GanTrainOptions {
            steps: self.steps,
            batch: self.batch,
            seed: self.seed,
            sample_every: self.sample_every,
            grid_side: 4,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            input_size: self.cls_input_size,
            base_width: self.cls_base_width,
            blocks_per_stage: self.cls_blocks.clone(),
            head_dims: self.cls_head.clone(),
            n_classes: crate::data::N_CLASSES,
        }
    }

    pub fn classifier_options(&self) -> ClassifierTrainOptions {
        ClassifierTrainOptions {
            epochs: self.cls_epochs,
            batch: self.cls_batch,
            lr: self.cls_lr,
            seed: self.seed,
            stop_at_train_acc: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parses_back_to_the_same_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.omega = 0.1 + 0.2;
        cfg.image_size = ImageSize::Native;
        cfg.scenario = Scenario::Hard;
        cfg.cls_blocks = vec![2, 1, 1];
        let text = cfg.render();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), ExperimentConfig::KEYS.len());
        assert!(text.contains("omega=0.30000000000000004\n"));
    }

    #[test]
    fn comments_blanks_and_overrides() {
        let cfg = ExperimentConfig::parse("# desk run\n\nsteps = 10 # short\nscenario=hard\n").unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.scenario, Scenario::Hard);
        assert_eq!(cfg.lr, 1e-4);
    }

    #[test]
    fn errors_are_specific() {
        assert!(matches!(
            ExperimentConfig::parse("stpes=3"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("seed=1\nseed=2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(ExperimentConfig::parse("steps"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(ExperimentConfig::parse("steps=-1"), Err(ConfigError::Value { .. })));
        assert!(matches!(ExperimentConfig::parse("image_size=24"), Err(ConfigError::Value { .. })));
        assert!(matches!(ExperimentConfig::parse("cls_head=256,6"), Err(ConfigError::Value { .. })));
        assert!(matches!(ExperimentConfig::parse("gamma=0"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn native_size_follows_scenario() {
        let cfg = ExperimentConfig::parse("image_size=native\nscenario=hard").unwrap();
        assert_eq!(cfg.net_config().image_size, 160);
        let cfg = ExperimentConfig::parse("image_size=native\nscenario=intermediate").unwrap();
        assert_eq!(cfg.net_config().image_size, 80);
    }
}
