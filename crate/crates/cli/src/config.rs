//! Flat `key = value` run configuration.
//!
//! Precedence, lowest first: built-in defaults, `COMPAT_GRAPH_SEED` (seed
//! only), the `--config` file, `--set` overrides, dedicated flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use compat_core::features::Modality;
use compat_core::neural::OptimizerKind;
use compat_core::trainer::TrainConfig;
use compat_core::{Error, ModelKind, Result};

pub const SEED_ENV: &str = "COMPAT_GRAPH_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Fitb,
    Compat,
    Both,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Fitb => "fitb",
            Task::Compat => "compat",
            Task::Both => "both",
        }
    }

    pub fn fitb(self) -> bool {
        matches!(self, Task::Fitb | Task::Both)
    }

    pub fn compat(self) -> bool {
        matches!(self, Task::Compat | Task::Both)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fitb" => Ok(Task::Fitb),
            "compat" => Ok(Task::Compat),
            "both" => Ok(Task::Both),
            other => Err(Error::Argument(format!(
                "unknown task `{other}` (expected fitb, compat or both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub raw_dir: PathBuf,
    /// Unset paths resolve relative to `data_dir` / `run_dir`.
    pub visual_store: Option<PathBuf>,
    pub text_store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,

    pub subset: usize,
    pub min_category_count: usize,
    pub min_outfit_size: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub vocab_min_frequency: usize,

    pub synth_outfits: usize,
    pub synth_categories: usize,
    pub synth_items_per_category: usize,
    pub synth_groups: usize,
    pub synth_noise: f64,
    pub synth_feature_dim: usize,
    pub synth_feature_noise: f64,
    pub synth_seed: u64,

    pub model: ModelKind,
    pub modality: Modality,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub lambda_l2: f64,
    pub hidden: usize,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,

    pub task: Task,
    pub random: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let synth = compat_core::dataset::SyntheticConfig::default();
        RunConfig {
            seed: DEFAULT_SEED,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs/default"),
            raw_dir: PathBuf::from("raw"),
            visual_store: None,
            text_store: None,
            checkpoint: None,
            subset: 0,
            min_category_count: 100,
            min_outfit_size: 3,
            train_fraction: 0.7,
            validation_fraction: 0.1,
            vocab_min_frequency: 5,
            synth_outfits: synth.n_outfits,
            synth_categories: synth.n_categories,
            synth_items_per_category: synth.items_per_category,
            synth_groups: synth.planted_groups,
            synth_noise: synth.noise,
            synth_feature_dim: synth.feature_dim,
            synth_feature_noise: synth.feature_noise,
            synth_seed: synth.seed,
            model: train.model,
            modality: train.modality,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            beta: train.beta,
            lambda_l2: train.lambda_l2,
            hidden: train.hidden,
            steps: train.steps,
            optimizer: train.optimizer,
            max_epochs: train.max_epochs,
            patience: train.patience,
            min_delta: train.min_delta,
            task: Task::Both,
            random: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Argument(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Argument(format!("invalid value `{value}` for `{key}` (expected true or false)"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Defaults with the seed taken from the environment when set.
    pub fn from_env() -> Result<Self> {
        let mut config = RunConfig::default();
        if let Ok(value) = std::env::var(SEED_ENV) {
            config.seed = parse(SEED_ENV, value.trim())?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "run_dir" => self.run_dir = PathBuf::from(value),
            "raw_dir" => self.raw_dir = PathBuf::from(value),
            "visual_store" => self.visual_store = optional_path(value),
            "text_store" => self.text_store = optional_path(value),
            "checkpoint" => self.checkpoint = optional_path(value),
            "subset" => self.subset = parse(key, value)?,
            "min_category_count" => self.min_category_count = parse(key, value)?,
            "min_outfit_size" => self.min_outfit_size = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "vocab_min_frequency" => self.vocab_min_frequency = parse(key, value)?,
            "synth_outfits" => self.synth_outfits = parse(key, value)?,
            "synth_categories" => self.synth_categories = parse(key, value)?,
            "synth_items_per_category" => self.synth_items_per_category = parse(key, value)?,
            "synth_groups" => self.synth_groups = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,
            "synth_feature_dim" => self.synth_feature_dim = parse(key, value)?,
            "synth_feature_noise" => self.synth_feature_noise = parse(key, value)?,
            "synth_seed" => self.synth_seed = parse(key, value)?,
            "model" => self.model = value.parse()?,
            "modality" => self.modality = value.parse()?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "lambda_l2" => self.lambda_l2 = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "min_delta" => self.min_delta = parse(key, value)?,
            "task" => self.task = value.parse()?,
            "random" => self.random = parse_bool(key, value)?,
            _ => return Err(Error::Argument(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("expected KEY=VALUE, got `{pair}`")))?;
        self.set(key.trim(), value)
    }

    /// Applies every `key = value` line; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Argument(format!("config line {}: expected `key = value`", n + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| e.context(format!("config line {}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| e.context(path.display().to_string()))
    }

    pub fn visual_store_path(&self) -> PathBuf {
        self.visual_store
            .clone()
            .unwrap_or_else(|| self.data_dir.join("visual.embd"))
    }

    pub fn text_store_path(&self) -> PathBuf {
        self.text_store
            .clone()
            .unwrap_or_else(|| self.data_dir.join("text.embd"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.run_dir.join("best.ckpt"))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            beta: self.beta,
            lambda_l2: self.lambda_l2,
            hidden: self.hidden,
            steps: self.steps,
            optimizer: self.optimizer,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.seed,
            model: self.model,
            modality: self.modality,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn synthetic_config(&self) -> compat_core::dataset::SyntheticConfig {
        compat_core::dataset::SyntheticConfig {
            n_outfits: self.synth_outfits,
            n_categories: self.synth_categories,
            items_per_category: self.synth_items_per_category,
            planted_groups: self.synth_groups,
            noise: self.synth_noise,
            feature_dim: self.synth_feature_dim,
            feature_noise: self.synth_feature_noise,
            seed: self.synth_seed,
        }
    }

    /// Every key with its effective value, defaults and derived paths
    /// included, one `key = value` line each.
    pub fn resolved(&self) -> String {
        let path = |p: PathBuf| p.display().to_string();
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data_dir", path(self.data_dir.clone())),
            ("run_dir", path(self.run_dir.clone())),
            ("raw_dir", path(self.raw_dir.clone())),
            ("visual_store", path(self.visual_store_path())),
            ("text_store", path(self.text_store_path())),
            ("checkpoint", path(self.checkpoint_path())),
            ("subset", self.subset.to_string()),
            ("min_category_count", self.min_category_count.to_string()),
            ("min_outfit_size", self.min_outfit_size.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("vocab_min_frequency", self.vocab_min_frequency.to_string()),
            ("synth_outfits", self.synth_outfits.to_string()),
            ("synth_categories", self.synth_categories.to_string()),
            ("synth_items_per_category", self.synth_items_per_category.to_string()),
            ("synth_groups", self.synth_groups.to_string()),
            ("synth_noise", self.synth_noise.to_string()),
            ("synth_feature_dim", self.synth_feature_dim.to_string()),
            ("synth_feature_noise", self.synth_feature_noise.to_string()),
            ("synth_seed", self.synth_seed.to_string()),
            ("model", self.model.to_string()),
            ("modality", self.modality.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta", self.beta.to_string()),
            ("lambda_l2", self.lambda_l2.to_string()),
            ("hidden", self.hidden.to_string()),
            ("steps", self.steps.to_string()),
            ("optimizer", self.optimizer.name().to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("min_delta", self.min_delta.to_string()),
            ("task", self.task.as_str().to_string()),
            ("random", self.random.to_string()),
        ];
        let mut out = String::new();
        for (key, value) in entries {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.resolved()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_training_defaults() {
        let c = RunConfig::default();
        let t = c.train_config().unwrap();
        assert_eq!(t.learning_rate, 0.001);
        assert_eq!(t.batch_size, 16);
        assert_eq!(t.beta, 0.2);
        assert_eq!(t.lambda_l2, 0.001);
        assert_eq!(t.hidden, 12);
        assert_eq!(t.steps, 3);
        assert_eq!(t.seed, DEFAULT_SEED);
    }

    #[test]
    fn resolved_text_reproduces_the_config() {
        let mut c = RunConfig::default();
        c.apply_text("model = hgnn\nmodality=visual\n# comment\n\nlearning_rate = 0.0123456789\nsubset = 1600\n")
            .unwrap();
        c.set_pair("beta=0.35").unwrap();
        let text = c.resolved();
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(back.resolved(), text);
        assert_eq!(back.model, ModelKind::Hgnn);
        assert_eq!(back.learning_rate, 0.0123456789);
        assert_eq!(back.visual_store_path(), PathBuf::from("data/visual.embd"));
        assert!(!text.contains("threads"));
    }

    #[test]
    fn every_key_is_settable() {
        let text = RunConfig::default().resolved();
        let mut c = RunConfig::default();
        for line in text.lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            c.set(k, v).unwrap();
        }
    }

    #[test]
    fn bad_input_is_an_argument_error() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(Error::Argument(_))));
        assert!(matches!(c.set("model", "gcn"), Err(Error::Argument(_))));
        assert!(matches!(c.set("batch_size", "-1"), Err(Error::Argument(_))));
        assert!(matches!(c.set_pair("seed"), Err(Error::Argument(_))));
        let err = c.apply_text("seed = 1\nbroken line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = c.apply_text("seed = x\n").unwrap_err();
        assert!(matches!(err.root(), Error::Argument(_)));
    }
}
