//! Per-head contributions to span vectors, attention traces and corpus
//! statistics over the top-contributing heads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::constituency::{cky_decode, span_vector, ParseTree, SpanChart, SpanVector};
use crate::encoder::Sentence;
use crate::error::{Error, Result};
use crate::model::Parser;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContributionMode {
    /// Share of the summed L1 norms of the head slices.
    #[default]
    L1Average,
    /// Softmax over the mean absolute activation of each slice.
    Softmax,
}

impl std::str::FromStr for ContributionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1_average" | "l1" => Ok(ContributionMode::L1Average),
            "softmax" => Ok(ContributionMode::Softmax),
            other => Err(Error::Config(format!("unknown contribution mode '{other}'"))),
        }
    }
}

/// Contribution of each head's slice to `span`; sums to 1.
pub fn head_contributions(span: &SpanVector, mode: ContributionMode) -> Result<Vec<f64>> {
    if !span.identifiable {
        return Err(Error::Contract(
            "head contributions need word representations built without the position-wise \
             feed-forward layer and with concatenated heads; slices are mixed otherwise"
                .into(),
        ));
    }
    if span.heads == 0 || span.values.len() != span.heads * span.d_out {
        return Err(Error::dim(format!(
            "span vector of length {} is not {} heads × {}",
            span.values.len(),
            span.heads,
            span.d_out
        )));
    }
    let h = span.heads;
    let l1: Vec<f64> = (0..h)
        .map(|k| span.head_slice(k).iter().map(|v| v.abs()).sum())
        .collect();
    Ok(match mode {
        ContributionMode::L1Average => {
            let total: f64 = l1.iter().sum();
            if total == 0.0 {
                vec![1.0 / h as f64; h]
            } else {
                l1.iter().map(|v| v / total).collect()
            }
        }
        ContributionMode::Softmax => {
            let means: Vec<f64> = l1.iter().map(|v| v / span.d_out as f64).collect();
            let m = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = means.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        }
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn top_head(contributions: &[f64]) -> usize {
    let mut best = 0;
    for (k, &c) in contributions.iter().enumerate() {
        if c > contributions[best] {
            best = k;
        }
    }
    best
}

/// Contributions and attention for one predicted span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrace {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub contributions: Vec<f64>,
    /// `heads × n`: each head's attention distribution over the words.
    pub attention: Vec<Vec<f64>>,
    /// Empty string for spans the parser left unlabeled.
    pub predicted_label: String,
    /// Gold label of the same span (empty when it is not a gold
    /// constituent); `None` without a gold tree.
    pub gold_label: Option<String>,
    pub span_vector: Vec<f64>,
}

/// Traces every span of the predicted tree of `sentence`.
pub fn attention_trace(
    parser: &Parser,
    sentence: &Sentence,
    gold: Option<&ParseTree>,
    mode: ContributionMode,
) -> Result<Vec<HeadTrace>> {
    if !parser.heads_identifiable() {
        return Err(Error::Contract(
            "attention traces need a model without the position-wise feed-forward layer \
             and with concatenated heads"
                .into(),
        ));
    }
    let n = sentence.len();
    if let Some(g) = gold {
        if g.n != n {
            return Err(Error::Alignment(format!("gold tree over {} words, sentence has {n}", g.n)));
        }
    }
    let (word_ids, tag_ids) = sentence.ids(&parser.vocab);
    let mut g = Graph::new(&parser.params);
    let fp = parser.forward(&mut g, &word_ids, &tag_ids, None)?;
    let chart = SpanChart::from_span_scores(&fp.index, g.value(fp.span_scores))?;
    let (tree, _) = cky_decode(&chart, None);

    let attention: Vec<Vec<f64>> = fp
        .attention
        .head_attention
        .iter()
        .map(|&a| mean_rows(g.value(a)))
        .collect();
    let padded = parser.padded_representations(g.value(fp.attention.word_reps))?;
    let labels = &parser.vocab.labels;
    let gold_label = |i: usize, j: usize| {
        gold.map(|t| {
            t.spans
                .iter()
                .find(|s| s.start == i && s.end == j)
                .map(|s| labels.name(s.label).to_string())
                .unwrap_or_default()
        })
    };

    tree.spans
        .iter()
        .map(|s| {
            let sv = span_vector(&padded, s.start, s.end, parser.num_heads(), parser.d_out())?;
            Ok(HeadTrace {
                sentence: 0,
                start: s.start,
                end: s.end,
                contributions: head_contributions(&sv, mode)?,
                attention: attention.clone(),
                predicted_label: labels.name(s.label).to_string(),
                gold_label: gold_label(s.start, s.end),
                span_vector: sv.values,
            })
        })
        .collect()
}

/// `[1, n]` stays as is; `[n, n]` (query matrices) is averaged over queries.
fn mean_rows(t: &Tensor) -> Vec<f64> {
    let (r, c) = (t.rows(), t.cols());
    (0..c)
        .map(|j| (0..r).map(|i| t.at(i, j)).sum::<f64>() / r as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub count: usize,
    /// Fraction of this label's spans whose top head is `h`.
    pub top_head_frequency: Vec<f64>,
    pub mean_contribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadStats {
    pub num_heads: usize,
    pub num_traces: usize,
    /// Keyed by predicted label.
    pub labels: BTreeMap<String, LabelStats>,
    /// Top-head frequencies of mislabeled spans, keyed by gold label.
    pub confusion: BTreeMap<String, LabelStats>,
}

#[derive(Default)]
struct Acc {
    count: usize,
    top: Vec<usize>,
    sum: Vec<f64>,
}

impl Acc {
    fn add(&mut self, c: &[f64]) {
        if self.top.is_empty() {
            self.top = vec![0; c.len()];
            self.sum = vec![0.0; c.len()];
        }
        self.count += 1;
        self.top[top_head(c)] += 1;
        for (s, v) in self.sum.iter_mut().zip(c) {
            *s += v;
        }
    }

    fn finish(self) -> LabelStats {
        let n = self.count as f64;
        LabelStats {
            count: self.count,
            top_head_frequency: self.top.iter().map(|&t| t as f64 / n).collect(),
            mean_contribution: self.sum.iter().map(|s| s / n).collect(),
        }
    }
}

pub fn aggregate_stats(traces: &[HeadTrace]) -> Result<HeadStats> {
    let Some(first) = traces.first() else {
        return Err(Error::Contract("no traces to aggregate".into()));
    };
    let h = first.contributions.len();
    let mut labels: BTreeMap<String, Acc> = BTreeMap::new();
    let mut confusion: BTreeMap<String, Acc> = BTreeMap::new();
    for t in traces {
        if t.contributions.len() != h {
            return Err(Error::dim(format!(
                "trace with {} heads among traces with {h}",
                t.contributions.len()
            )));
        }
        labels.entry(t.predicted_label.clone()).or_default().add(&t.contributions);
        if let Some(gold) = &t.gold_label {
            if *gold != t.predicted_label {
                confusion.entry(gold.clone()).or_default().add(&t.contributions);
            }
        }
    }
    Ok(HeadStats {
        num_heads: h,
        num_traces: traces.len(),
        labels: labels.into_iter().map(|(k, a)| (k, a.finish())).collect(),
        confusion: confusion.into_iter().map(|(k, a)| (k, a.finish())).collect(),
    })
}

/// One JSON object per line.
pub fn traces_to_jsonl(traces: &[HeadTrace]) -> Result<String> {
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

/// `label,head,frequency,mean_contribution` rows, labels in sorted order.
pub fn head_stats_csv(stats: &HeadStats) -> String {
    // Writing into memory cannot fail, and every field is already UTF-8.
    write_head_stats(stats).expect("in-memory csv")
}

fn write_head_stats(stats: &HeadStats) -> std::result::Result<String, Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "head", "frequency", "mean_contribution"])?;
    for (label, s) in &stats.labels {
        for h in 0..stats.num_heads {
            w.write_record([
                label.clone(),
                h.to_string(),
                s.top_head_frequency[h].to_string(),
                s.mean_contribution[h].to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
