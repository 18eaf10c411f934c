//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use super::toy::generate_toy_corpus;
use super::treebank::{load_treebank_files, Treebank};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Stop training once training-set scores reach all three values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub f1: f64,
    pub uas: f64,
    pub las: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Seeds initialization, shuffling and dropout.
    pub seed: u64,
    /// Tags skipped by attachment scores.
    pub punctuation: Vec<String>,
    pub checkpoint: Option<PathBuf>,
    /// Evaluate on the training set every this many epochs (0 = never).
    pub eval_every: usize,
    pub stop_at: Option<Targets>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 7,
            punctuation: super::eval::default_punctuation().into_iter().collect(),
            checkpoint: None,
            eval_every: 0,
            stop_at: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is not a finite non-negative number", self.learning_rate)));
        }
        Ok(())
    }
}

/// Where the training (and optional evaluation) data come from. Without
/// tree/dependency files a toy corpus is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub trees: Option<PathBuf>,
    pub deps: Option<PathBuf>,
    pub dev_trees: Option<PathBuf>,
    pub dev_deps: Option<PathBuf>,
    pub toy_seed: u64,
    pub toy_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            trees: None,
            deps: None,
            dev_trees: None,
            dev_deps: None,
            toy_seed: 7,
            toy_size: 50,
        }
    }
}

impl DataConfig {
    pub fn training_set(&self) -> Result<Treebank> {
        match (&self.trees, &self.deps) {
            (Some(t), Some(d)) => load_treebank_files(t, d),
            (None, None) => generate_toy_corpus(self.toy_seed, self.toy_size),
            _ => Err(Error::Config("data.trees and data.deps must be given together".into())),
        }
    }

    pub fn dev_set(&self) -> Result<Option<Treebank>> {
        match (&self.dev_trees, &self.dev_deps) {
            (Some(t), Some(d)) => load_treebank_files(t, d).map(Some),
            (None, None) => Ok(None),
            _ => Err(Error::Config("data.dev_trees and data.dev_deps must be given together".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Residual dropout probability used by ablation rows with RD enabled.
    pub ablation_dropout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            ablation_dropout: 0.2,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.train.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative data paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut c.data.trees,
            &mut c.data.deps,
            &mut c.data.dev_trees,
            &mut c.data.dev_deps,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }
}
