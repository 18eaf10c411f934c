//! Span charts, tree scores, CKY decoding and the structured hinge loss.

use std::collections::HashSet;

use super::span::SpanIndex;
use super::tree::{LabeledSpan, ParseTree};
use crate::encoder::EMPTY_LABEL;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Scores `s(i, j, l)` for all spans and labels; label 0 is the empty
/// category and always scores 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanChart {
    n: usize,
    num_labels: usize,
    scores: Tensor,
}

impl SpanChart {
    /// Builds a chart from `[spans, num_labels - 1]` scores laid out by
    /// `index` (non-empty labels only).
    pub fn from_span_scores(index: &SpanIndex, scores: &Tensor) -> Result<Self> {
        if scores.shape().len() != 2 || scores.rows() != index.len() {
            return Err(Error::dim(format!(
                "span scores {:?} do not cover {} spans",
                scores.shape(),
                index.len()
            )));
        }
        let n = index.n();
        let num_labels = scores.cols() + 1;
        let mut chart = Tensor::zeros(&[n + 1, n + 1, num_labels]);
        for (k, &(i, j)) in index.pairs().iter().enumerate() {
            let base = (i * (n + 1) + j) * num_labels;
            chart.data_mut()[base + 1..base + num_labels].copy_from_slice(scores.row(k));
        }
        Ok(SpanChart {
            n,
            num_labels,
            scores: chart,
        })
    }

    /// Wraps a `[n+1, n+1, labels]` tensor; the empty-label plane is zeroed.
    pub fn from_tensor(mut scores: Tensor) -> Result<Self> {
        let shape = scores.shape().to_vec();
        if shape.len() != 3 || shape[0] != shape[1] || shape[0] < 2 || shape[2] == 0 {
            return Err(Error::dim(format!("chart shape {shape:?} is not [n+1, n+1, labels]")));
        }
        let labels = shape[2];
        for cell in scores.data_mut().chunks_mut(labels) {
            cell[EMPTY_LABEL] = 0.0;
        }
        Ok(SpanChart {
            n: shape[0] - 1,
            num_labels: labels,
            scores,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn score(&self, i: usize, j: usize, label: usize) -> f64 {
        self.scores.data()[(i * (self.n + 1) + j) * self.num_labels + label]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.scores
    }
}

/// s(T): sum of the chart scores of the tree's labeled spans, in span order.
pub fn tree_score(chart: &SpanChart, tree: &ParseTree) -> Result<f64> {
    let mut total = 0.0;
    for s in &tree.spans {
        if s.end > chart.n() || s.start >= s.end || s.label >= chart.num_labels() {
            return Err(Error::Input(format!(
                "span ({}, {}, {}) outside chart of n = {} with {} labels",
                s.start,
                s.end,
                s.label,
                chart.n(),
                chart.num_labels()
            )));
        }
        if s.label != EMPTY_LABEL {
            total += chart.score(s.start, s.end, s.label);
        }
    }
    Ok(total)
}

/// Hamming loss on labeled spans: predicted non-empty spans absent from gold.
pub fn hamming_loss(predicted: &ParseTree, gold: &ParseTree) -> usize {
    let gold: HashSet<(usize, usize, usize)> = gold.labeled().map(|s| (s.start, s.end, s.label)).collect();
    predicted
        .labeled()
        .filter(|s| !gold.contains(&(s.start, s.end, s.label)))
        .count()
}

/// Per-span cost added during loss-augmented decoding.
pub struct Augmentation {
    gold: HashSet<(usize, usize, usize)>,
}

impl Augmentation {
    pub fn new(gold: &ParseTree) -> Self {
        Augmentation {
            gold: gold.labeled().map(|s| (s.start, s.end, s.label)).collect(),
        }
    }

    /// 1 for a non-empty label that is not in the gold tree, else 0.
    pub fn cost(&self, i: usize, j: usize, label: usize) -> f64 {
        if label != EMPTY_LABEL && !self.gold.contains(&(i, j, label)) {
            1.0
        } else {
            0.0
        }
    }
}

/// Highest-scoring binary labeled tree and its score.
///
/// With `augment`, decodes over `s(T) + Δ(T, gold)` and the returned score
/// includes Δ. Ties go to the lowest label id and the leftmost split.
pub fn cky_decode(chart: &SpanChart, augment: Option<&ParseTree>) -> (ParseTree, f64) {
    let n = chart.n();
    let aug = augment.map(Augmentation::new);
    let stride = n + 1;
    let mut best = vec![0.0; stride * stride];
    let mut best_label = vec![EMPTY_LABEL; stride * stride];
    let mut best_split = vec![0usize; stride * stride];

    for len in 1..=n {
        for i in 0..=n - len {
            let j = i + len;
            let mut label = EMPTY_LABEL;
            let mut label_score = f64::NEG_INFINITY;
            for l in 0..chart.num_labels() {
                let mut s = chart.score(i, j, l);
                if let Some(a) = &aug {
                    s += a.cost(i, j, l);
                }
                if s > label_score {
                    label_score = s;
                    label = l;
                }
            }
            let cell = i * stride + j;
            best_label[cell] = label;
            if len == 1 {
                best[cell] = label_score;
                continue;
            }
            let mut split = i + 1;
            let mut split_score = f64::NEG_INFINITY;
            for k in i + 1..j {
                let s = best[i * stride + k] + best[k * stride + j];
                if s > split_score {
                    split_score = s;
                    split = k;
                }
            }
            best_split[cell] = split;
            best[cell] = label_score + split_score;
        }
    }

    let mut spans = Vec::with_capacity(2 * n - 1);
    let mut stack = vec![(0, n)];
    while let Some((i, j)) = stack.pop() {
        let cell = i * stride + j;
        spans.push(LabeledSpan::new(i, j, best_label[cell]));
        if j - i > 1 {
            let k = best_split[cell];
            stack.push((k, j));
            stack.push((i, k));
        }
    }
    (ParseTree { n, spans }, best[n])
}

/// Value of the hinge loss `max(0, max_T[s(T) + Δ(T, gold)] - s(gold))`.
pub fn hinge_loss_value(chart: &SpanChart, gold: &ParseTree) -> Result<f64> {
    let (_, augmented) = cky_decode(chart, Some(gold));
    let gold_score = tree_score(chart, gold)?;
    Ok((augmented - gold_score).max(0.0))
}

/// Differentiable hinge loss over `[spans, labels - 1]` span scores.
///
/// Returns the loss node and the loss-augmented argmax tree. When the margin
/// is satisfied the loss is a constant zero with no gradient; otherwise the
/// subgradient is +1 on the violator's labeled spans and -1 on the gold
/// tree's labeled spans.
pub fn hinge_loss(
    g: &mut Graph<'_>,
    span_scores: Var,
    index: &SpanIndex,
    gold: &ParseTree,
) -> Result<(Var, ParseTree)> {
    if gold.n != index.n() {
        return Err(Error::Alignment(format!(
            "gold tree over {} words, chart over {}",
            gold.n,
            index.n()
        )));
    }
    let chart = SpanChart::from_span_scores(index, g.value(span_scores))?;
    let (predicted, augmented) = cky_decode(&chart, Some(gold));
    let gold_score = tree_score(&chart, gold)?;
    let width = chart.num_labels() - 1;
    let flat = |s: &LabeledSpan<usize>| -> Result<usize> {
        let pos = index
            .position(s.start, s.end)
            .ok_or_else(|| Error::Input(format!("span ({}, {}) outside chart", s.start, s.end)))?;
        Ok(pos * width + s.label - 1)
    };

    if augmented - gold_score <= 0.0 {
        let zero = g.weighted_sum(span_scores, Vec::new())?;
        return Ok((zero, predicted));
    }
    let mut entries = Vec::new();
    for s in predicted.labeled() {
        entries.push((flat(s)?, 1.0));
    }
    for s in gold.labeled() {
        entries.push((flat(s)?, -1.0));
    }
    let diff = g.weighted_sum(span_scores, entries)?;
    let delta = hamming_loss(&predicted, gold) as f64;
    let delta = g.constant(Tensor::scalar(delta));
    let margin = g.add(diff, delta)?;
    Ok((g.relu(margin), predicted))
}
