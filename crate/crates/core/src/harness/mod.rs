//! Data loading, training, evaluation, checkpoints and experiment drivers.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod experiments;
pub mod optim;
pub mod toy;
pub mod train;
pub mod treebank;

pub use config::{DataConfig, RunConfig, Targets, TrainConfig};
pub use eval::{default_punctuation, evaluate, score, EvalReport, SentencePrediction};
pub use experiments::{ablate, layer_sweep, Ablation, Table};
pub use optim::{Adam, Optimizer, OptimizerKind};
pub use toy::{generate_toy_corpus, toy_grammar, Grammar};
pub use train::{init_parser, train, EpochLog, TrainOutcome};
pub use treebank::{load_treebank, load_treebank_files, parse_trees, Example, Treebank};
