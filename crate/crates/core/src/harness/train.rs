//! Mini-batch training on the joint loss.

use std::collections::BTreeSet;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::config::TrainConfig;
use super::eval::{evaluate, EvalReport};
use super::optim::Optimizer;
use super::treebank::Treebank;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parser, PreparedExample};
use crate::tensor::Gradients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean joint loss per sentence.
    pub loss: f64,
    pub constituency_loss: f64,
    pub dependency_loss: f64,
    pub train_eval: Option<EvalReport>,
    pub dev_eval: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochLog>,
    pub reached_targets: bool,
}

/// Builds a parser over `data`'s vocabulary, seeded from `train.seed`.
pub fn init_parser(model: &ModelConfig, data: &Treebank, train: &TrainConfig) -> Result<Parser> {
    Parser::new(model.clone(), data.vocab.clone(), train.seed)
}

/// Summed loss and gradients of `batch`, computed in parallel and reduced
/// in batch order so results do not depend on thread scheduling.
fn batch_gradients(
    parser: &Parser,
    batch: &[(&PreparedExample, Option<u64>)],
) -> Result<(f64, f64, Gradients)> {
    let results: Vec<_> = batch
        .par_iter()
        .map(|(ex, seed)| parser.gradients(ex, *seed))
        .collect::<Result<_>>()?;
    let mut grads = Gradients::default();
    let (mut lc, mut ld) = (0.0, 0.0);
    for (parts, g) in &results {
        lc += parts.constituency;
        ld += parts.dependency;
        grads.merge(g);
    }
    Ok((lc, ld, grads))
}

/// Trains `parser` in place. Training-set evaluation happens every
/// `eval_every` epochs; with `stop_at` set, training ends as soon as those
/// scores are reached.
pub fn train(
    parser: &mut Parser,
    data: &Treebank,
    dev: Option<&Treebank>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let prepared: Vec<PreparedExample> = data
        .examples
        .iter()
        .map(|e| parser.prepare(&e.sentence, &e.tree, &e.arcs))
        .collect::<Result<_>>()?;
    let punct: BTreeSet<String> = config.punctuation.iter().cloned().collect();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &parser.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let use_dropout = parser.config.residual_dropout > 0.0;

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut logs = Vec::new();
    let mut reached = false;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut lc, mut ld) = (0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&PreparedExample, Option<u64>)> = chunk
                .iter()
                .map(|&i| {
                    let seed: u64 = rng.gen();
                    (&prepared[i], use_dropout.then_some(seed))
                })
                .collect();
            let (bc, bd, mut grads) = batch_gradients(parser, &batch)?;
            let total = bc + bd;
            if !total.is_finite() || grads.params().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: total,
                });
            }
            grads.scale(1.0 / chunk.len() as f64);
            optimizer.step(&mut parser.params, &grads);
            lc += bc;
            ld += bd;
        }
        let m = prepared.len() as f64;
        let mut log = EpochLog {
            epoch,
            loss: (lc + ld) / m,
            constituency_loss: lc / m,
            dependency_loss: ld / m,
            train_eval: None,
            dev_eval: None,
        };
        let due = config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        if due {
            let r = evaluate(parser, data, &punct)?;
            if let Some(t) = config.stop_at {
                reached = r.f1 >= t.f1 && r.uas >= t.uas && r.las >= t.las;
            }
            log.train_eval = Some(r);
            if let Some(d) = dev {
                log.dev_eval = Some(evaluate(parser, d, &punct)?);
            }
        }
        info!(
            "epoch {epoch}: loss {:.4} (constituency {:.4}, dependency {:.4}){}",
            log.loss,
            log.constituency_loss,
            log.dependency_loss,
            log.train_eval
                .as_ref()
                .map(|r| format!(" train F1 {:.2} UAS {:.2} LAS {:.2}", r.f1, r.uas, r.las))
                .unwrap_or_default()
        );
        logs.push(log);
        if reached {
            break;
        }
    }
    if let Some(path) = &config.checkpoint {
        checkpoint::save(parser, path)?;
    }
    Ok(TrainOutcome {
        epochs: logs,
        reached_targets: reached,
    })
}
