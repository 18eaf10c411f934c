//! Labeled-bracket and attachment scores.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::treebank::{Example, Treebank};
use crate::constituency::LabeledSpan;
use crate::error::{Error, Result};
use crate::model::Parser;

/// Part-of-speech tags excluded from attachment scores.
pub fn default_punctuation() -> BTreeSet<String> {
    ["PUNCT", ".", ",", ":", "``", "''", "-LRB-", "-RRB-", "#", "$"]
        .into_iter()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketScore {
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BracketScore {
    pub fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let precision = percent(matched, predicted, gold);
        let recall = percent(matched, gold, predicted);
        BracketScore {
            gold,
            predicted,
            matched,
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachmentScore {
    pub words: usize,
    pub correct_heads: usize,
    pub correct_labeled: usize,
    pub uas: f64,
    pub las: f64,
}

impl AttachmentScore {
    pub fn from_counts(words: usize, correct_heads: usize, correct_labeled: usize) -> Self {
        AttachmentScore {
            words,
            correct_heads,
            correct_labeled,
            uas: percent(correct_heads, words, 0),
            las: percent(correct_labeled, words, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub uas: f64,
    pub las: f64,
    pub brackets: BracketScore,
    pub attachment: AttachmentScore,
    /// Keyed by constituency label.
    pub per_label: BTreeMap<String, BracketScore>,
    /// Keyed by gold dependency label.
    pub per_dep_label: BTreeMap<String, AttachmentScore>,
}

/// `100 · num / den`; an empty denominator scores 100 when `other` is also
/// empty (nothing to find, nothing found) and 0 otherwise.
fn percent(num: usize, den: usize, other: usize) -> f64 {
    if den == 0 {
        if other == 0 {
            100.0
        } else {
            0.0
        }
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Predicted structures for one sentence, with string labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePrediction {
    pub spans: Vec<LabeledSpan<String>>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

#[derive(Default)]
struct Counts {
    gold: usize,
    predicted: usize,
    matched: usize,
}

#[derive(Default)]
struct DepCounts {
    words: usize,
    heads: usize,
    labeled: usize,
}

/// Scores `predictions` against the gold examples.
pub fn score(
    gold: &[Example],
    predictions: &[SentencePrediction],
    punctuation: &BTreeSet<String>,
) -> Result<EvalReport> {
    if gold.len() != predictions.len() {
        return Err(Error::Alignment(format!(
            "{} gold sentences, {} predictions",
            gold.len(),
            predictions.len()
        )));
    }
    let mut total = Counts::default();
    let mut per_label: BTreeMap<String, Counts> = BTreeMap::new();
    let mut dep = DepCounts::default();
    let mut per_dep: BTreeMap<String, DepCounts> = BTreeMap::new();

    for (ex, pred) in gold.iter().zip(predictions) {
        let n = ex.sentence.len();
        if pred.heads.len() != n || pred.labels.len() != n {
            return Err(Error::Alignment(format!(
                "prediction with {} heads for a sentence of {n} words",
                pred.heads.len()
            )));
        }
        let mut remaining: BTreeMap<&LabeledSpan<String>, usize> = BTreeMap::new();
        let gold_spans = ex.tree.labeled_spans();
        for s in &gold_spans {
            *remaining.entry(s).or_default() += 1;
            per_label.entry(s.label.clone()).or_default().gold += 1;
        }
        total.gold += gold_spans.len();
        total.predicted += pred.spans.len();
        for s in &pred.spans {
            let entry = per_label.entry(s.label.clone()).or_default();
            entry.predicted += 1;
            if let Some(k) = remaining.get_mut(s) {
                if *k > 0 {
                    *k -= 1;
                    entry.matched += 1;
                    total.matched += 1;
                }
            }
        }

        for i in 0..n {
            if punctuation.contains(&ex.sentence.tags[i]) {
                continue;
            }
            let head_ok = pred.heads[i] == ex.arcs.heads[i];
            let label_ok = head_ok && pred.labels[i] == ex.arcs.labels[i];
            let e = per_dep.entry(ex.arcs.labels[i].clone()).or_default();
            for c in [&mut dep, e] {
                c.words += 1;
                c.heads += head_ok as usize;
                c.labeled += label_ok as usize;
            }
        }
    }

    let brackets = BracketScore::from_counts(total.gold, total.predicted, total.matched);
    let attachment = AttachmentScore::from_counts(dep.words, dep.heads, dep.labeled);
    Ok(EvalReport {
        sentences: gold.len(),
        precision: brackets.precision,
        recall: brackets.recall,
        f1: brackets.f1,
        uas: attachment.uas,
        las: attachment.las,
        brackets,
        attachment,
        per_label: per_label
            .into_iter()
            .map(|(k, c)| (k, BracketScore::from_counts(c.gold, c.predicted, c.matched)))
            .collect(),
        per_dep_label: per_dep
            .into_iter()
            .map(|(k, c)| (k, AttachmentScore::from_counts(c.words, c.heads, c.labeled)))
            .collect(),
    })
}

/// The gold structures of `example` in prediction form.
pub fn gold_prediction(example: &Example) -> SentencePrediction {
    SentencePrediction {
        spans: example.tree.labeled_spans(),
        heads: example.arcs.heads.clone(),
        labels: example.arcs.labels.clone(),
    }
}

/// Fails when a gold label of `treebank` is unknown to the parser.
pub fn check_vocab(parser: &Parser, treebank: &Treebank) -> Result<()> {
    for ex in &treebank.examples {
        ex.tree.to_parse_tree_with(&parser.vocab.labels)?;
        if let Some(l) = ex.arcs.labels.iter().find(|l| parser.vocab.dep_labels.get(l).is_none()) {
            return Err(Error::Vocab(format!("dependency label '{l}' unknown to the model")));
        }
    }
    Ok(())
}

/// Parses every sentence (in parallel) and collects string-labeled output.
pub fn predict(parser: &Parser, treebank: &Treebank) -> Result<Vec<SentencePrediction>> {
    treebank
        .examples
        .par_iter()
        .map(|ex| {
            let p = parser.parse(&ex.sentence)?;
            Ok(SentencePrediction {
                spans: p.tree.labeled_spans(&parser.vocab.labels),
                heads: p.arcs.heads,
                labels: p.arcs.labels,
            })
        })
        .collect()
}

pub fn evaluate(parser: &Parser, treebank: &Treebank, punctuation: &BTreeSet<String>) -> Result<EvalReport> {
    check_vocab(parser, treebank)?;
    let predictions = predict(parser, treebank)?;
    score(&treebank.examples, &predictions, punctuation)
}
