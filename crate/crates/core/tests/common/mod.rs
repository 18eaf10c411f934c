//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use lal_parser::attention::{CombineMode, LabelAttention, LabelAttentionConfig, QueryMode};
use lal_parser::constituency::{Augmentation, LabeledSpan, SpanChart, SpanVector, Tree};
use lal_parser::dependency::DepArcs;
use lal_parser::harness::{generate_toy_corpus, EvalReport, SentencePrediction, Treebank};
use lal_parser::interpret::HeadTrace;
use lal_parser::model::ModelConfig;
use lal_parser::tensor::{Graph, ParamSet, Tensor};
use lal_parser::Parser;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A model small enough for exhaustive gradient checks.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        d_content: 12,
        d_position: 4,
        max_len: 16,
        self_attention_heads: 2,
        self_attention_d_ff: 16,
        label_heads: Some(3),
        d_qk: 6,
        d_v: 6,
        d_out: 4,
        use_pfl: true,
        pfl_d_ff: 16,
        residual_dropout: 0.0,
        query_mode: QueryMode::Vector,
        combine_mode: CombineMode::Concat,
        span_hidden: 10,
        arc_hidden: 8,
        label_hidden: 6,
    }
}

pub fn toy(seed: u64, size: usize) -> Treebank {
    generate_toy_corpus(seed, size).expect("toy corpus")
}

pub fn parser_for(config: ModelConfig, data: &Treebank, seed: u64) -> Parser {
    Parser::new(config, data.vocab.clone(), seed).expect("parser")
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Random chart over `labels` non-empty labels (plus the empty label).
pub fn random_chart(rng: &mut ChaCha8Rng, n: usize, labels: usize) -> SpanChart {
    let t = random_tensor(rng, &[n + 1, n + 1, labels + 1], 2.0);
    SpanChart::from_tensor(t).unwrap()
}

/// Scores of every binary bracketing × label assignment of span (i, j),
/// each computed as `label + (left + right)`, the decoder's order.
pub fn all_subtree_scores(chart: &SpanChart, aug: Option<&Augmentation>, i: usize, j: usize) -> Vec<f64> {
    let label_scores: Vec<f64> = (0..chart.num_labels())
        .map(|l| chart.score(i, j, l) + aug.map_or(0.0, |a| a.cost(i, j, l)))
        .collect();
    if j - i == 1 {
        return label_scores;
    }
    let mut out = Vec::new();
    for k in i + 1..j {
        let left = all_subtree_scores(chart, aug, i, k);
        let right = all_subtree_scores(chart, aug, k, j);
        for &ls in &left {
            for &rs in &right {
                let children = ls + rs;
                for &lab in &label_scores {
                    out.push(lab + children);
                }
            }
        }
    }
    out
}

pub fn brute_force_best(chart: &SpanChart, aug: Option<&Augmentation>) -> f64 {
    all_subtree_scores(chart, aug, 0, chart.n())
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Every labeled binary tree over (i, j) as a span list.
pub fn all_trees(n_labels: usize, i: usize, j: usize) -> Vec<Vec<LabeledSpan<usize>>> {
    let mut out = Vec::new();
    if j - i == 1 {
        for l in 0..n_labels {
            out.push(vec![LabeledSpan::new(i, j, l)]);
        }
        return out;
    }
    for k in i + 1..j {
        let left = all_trees(n_labels, i, k);
        let right = all_trees(n_labels, k, j);
        for l in 0..n_labels {
            for a in &left {
                for b in &right {
                    let mut t = vec![LabeledSpan::new(i, j, l)];
                    t.extend(a.iter().cloned());
                    t.extend(b.iter().cloned());
                    out.push(t);
                }
            }
        }
    }
    out
}

/// Whether `heads` (0 = root, words 1..=n) is a tree with one root child,
/// checked by walking every word up to the root.
pub fn is_single_root_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    if heads.iter().filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    for start in 1..=n {
        let mut v = start;
        let mut steps = 0;
        while v != 0 {
            let h = heads[v - 1];
            if h == v || h > n {
                return false;
            }
            v = h;
            steps += 1;
            if steps > n {
                return false;
            }
        }
    }
    true
}

/// Σ_i scores[i][heads[i]] in word order.
pub fn arc_total(scores: &Tensor, heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(i, &h)| scores.at(i, h)).sum()
}

/// Best total over all single-root trees, by enumerating every head
/// assignment.
pub fn brute_force_arborescence(scores: &Tensor) -> f64 {
    let n = scores.rows();
    let mut heads = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        if is_single_root_tree(&heads) {
            best = best.max(arc_total(scores, &heads));
        }
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            heads[k] += 1;
            if heads[k] <= n {
                break;
            }
            heads[k] = 0;
            k += 1;
        }
    }
}

/// Overwrites every parameter with uniform noise in ±`scale`.
pub fn randomize(params: &mut ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for v in params.get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// A random label attention configuration with concatenated heads and no
/// feed-forward layer.
pub fn random_lal_config(rng: &mut ChaCha8Rng) -> LabelAttentionConfig {
    let mut c = LabelAttentionConfig::new(
        rng.gen_range(1..=5),
        rng.gen_range(2..=10),
        rng.gen_range(1..=6),
        rng.gen_range(1..=6),
        2 * rng.gen_range(1..=3),
    );
    c.use_pfl = false;
    c
}

/// Perturbs each parameter of each head in turn and checks that only that
/// head's output slice moves, and that slices equal the per-head outputs.
pub fn head_locality_case(seed: u64) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = random_lal_config(&mut rng);
    let mut params = ParamSet::new();
    let layer = LabelAttention::new(&mut params, "lal", &config, &mut rng).map_err(|e| e.to_string())?;
    randomize(&mut params, &mut rng, 1.0);
    let n = rng.gen_range(1..=5);
    let x = random_tensor(&mut rng, &[n, config.d_model], 1.0);
    let d = config.d_out;

    let run = |p: &ParamSet| -> (Tensor, Vec<Tensor>) {
        let mut g = Graph::new(p);
        let xv = g.constant(x.clone());
        let out = layer.forward(&mut g, xv, None).unwrap();
        let heads = out.per_head_outputs.iter().map(|&v| g.value(v).clone()).collect();
        (g.value(out.word_reps).clone(), heads)
    };
    let (base, per_head) = run(&params);
    for (h, ph) in per_head.iter().enumerate() {
        if base.slice(1, h * d, (h + 1) * d).unwrap() != *ph {
            return Err(format!("seed {seed}: slice {h} differs from per-head output"));
        }
    }
    for h in 0..config.num_heads {
        for id in layer.head_param_ids(h) {
            let mut p = params.clone();
            for v in p.get_mut(id).data_mut() {
                *v += rng.gen_range(0.1..0.5);
            }
            let (out, _) = run(&p);
            for other in 0..config.num_heads {
                let before = base.slice(1, other * d, (other + 1) * d).unwrap();
                let after = out.slice(1, other * d, (other + 1) * d).unwrap();
                if other != h && before != after {
                    return Err(format!(
                        "seed {seed}: perturbing {} moved head {other}",
                        params.name(id)
                    ));
                }
                let is_bias = params.name(id).ends_with("norm.bias");
                if other == h && is_bias && before == after {
                    return Err(format!("seed {seed}: perturbing {} left head {h} unchanged", params.name(id)));
                }
            }
        }
    }
    Ok(())
}

/// count(query matrices) − count(query vectors) for a random configuration,
/// with the expected H·d_qk·(d_model − 1).
pub fn parameter_count_case(seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = random_lal_config(&mut rng);
    config.use_pfl = rng.gen_bool(0.5);
    let count = |mode: QueryMode| {
        let mut c = config.clone();
        c.query_mode = mode;
        let mut params = ParamSet::new();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        LabelAttention::new(&mut params, "lal", &c, &mut r).unwrap();
        params.count()
    };
    let diff = count(QueryMode::Matrix) - count(QueryMode::Vector);
    (diff, config.num_heads * config.d_qk * (config.d_model - 1))
}

/// A random identifiable span vector with 1..=8 heads.
pub fn random_span_vector(rng: &mut ChaCha8Rng) -> SpanVector {
    let heads = rng.gen_range(1..=8);
    let d_out = 2 * rng.gen_range(1..=4);
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    SpanVector {
        start: 0,
        end: 1,
        values: (0..heads * d_out).map(|_| rng.gen_range(-scale..scale)).collect(),
        heads,
        d_out,
        identifiable: true,
    }
}

/// Label → planted top-head distribution over `heads` heads.
pub fn planted_distributions(rng: &mut ChaCha8Rng, labels: &[&str], heads: usize) -> BTreeMap<String, Vec<f64>> {
    labels
        .iter()
        .map(|l| {
            let w: Vec<f64> = (0..heads).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
            let z: f64 = w.iter().sum();
            (l.to_string(), w.into_iter().map(|v| v / z).collect())
        })
        .collect()
}

/// `count` traces split evenly over the labels. Within a label the number
/// of traces whose top head is `h` is the planted probability times the
/// label's share, rounded by largest remainder, so the planted frequencies
/// hold up to 1/share. Trace order is shuffled. The top head gets weight
/// 0.5 and the rest share the remainder unevenly, so it is always the
/// unique maximum.
pub fn planted_traces(rng: &mut ChaCha8Rng, plant: &BTreeMap<String, Vec<f64>>, count: usize) -> Vec<HeadTrace> {
    let share = count / plant.len();
    let mut traces = Vec::with_capacity(count);
    for (label, dist) in plant {
        let h = dist.len();
        let exact: Vec<f64> = dist.iter().map(|p| p * share as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..h).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let missing = share - quota.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            quota[i] += 1;
        }
        for (top, &q) in quota.iter().enumerate() {
            for _ in 0..q {
                let rest: Vec<f64> = (0..h).map(|i| if i == top { 0.0 } else { rng.gen_range(0.1..1.0) }).collect();
                let rz: f64 = rest.iter().sum();
                let contributions = (0..h)
                    .map(|i| match (i == top, h) {
                        (true, 1) => 1.0,
                        (true, _) => 0.5,
                        _ => 0.5 * rest[i] / rz,
                    })
                    .collect();
                traces.push(HeadTrace {
                    sentence: 0,
                    start: 0,
                    end: 1,
                    contributions,
                    attention: vec![vec![1.0]; h],
                    predicted_label: label.clone(),
                    gold_label: None,
                    span_vector: Vec::new(),
                });
            }
        }
    }
    traces.shuffle(rng);
    for (k, t) in traces.iter_mut().enumerate() {
        t.sentence = k;
    }
    traces
}

pub fn span(i: usize, j: usize, l: &str) -> LabeledSpan<String> {
    LabeledSpan::new(i, j, l.to_string())
}

/// Two gold sentences and predictions with known mistakes. Counted by hand:
/// 6 gold brackets, 7 predicted, 4 matched; 6 non-punctuation words, 5
/// correct heads, 4 correct labeled arcs.
pub fn metric_fixture() -> (Treebank, Vec<SentencePrediction>) {
    let pairs = vec![
        (
            Tree::parse("(S (NP (D the) (N cat)) (VP (V sat)) (PUNCT .))").unwrap(),
            DepArcs {
                heads: vec![2, 3, 0, 3],
                labels: vec!["det".into(), "nsubj".into(), "root".into(), "punct".into()],
            },
        ),
        (
            Tree::parse("(S (NP (D a) (N dog)) (VP (V ran)))").unwrap(),
            DepArcs {
                heads: vec![2, 3, 0],
                labels: vec!["det".into(), "nsubj".into(), "root".into()],
            },
        ),
    ];
    let preds = vec![
        SentencePrediction {
            // VP attached too wide
            spans: vec![span(0, 4, "S"), span(0, 2, "NP"), span(2, 4, "VP")],
            // the punctuation head is wrong but not scored; "cat" has the
            // right head and the wrong label
            heads: vec![2, 3, 0, 2],
            labels: vec!["det".into(), "obj".into(), "root".into(), "punct".into()],
        },
        SentencePrediction {
            // NP misplaced plus one extra bracket
            spans: vec![span(0, 3, "S"), span(1, 3, "NP"), span(0, 1, "NP"), span(2, 3, "VP")],
            heads: vec![3, 3, 0],
            labels: vec!["det".into(), "nsubj".into(), "root".into()],
        },
    ];
    (Treebank::from_pairs(pairs).unwrap(), preds)
}

/// Exact comparison of a fixture report against the hand counts.
pub fn check_metric_fixture(r: &EvalReport) -> Result<(), String> {
    let p = 100.0 * 4.0 / 7.0;
    let rc = 100.0 * 4.0 / 6.0;
    let f1 = 2.0 * p * rc / (p + rc);
    let got = (r.brackets.gold, r.brackets.predicted, r.brackets.matched);
    if got != (6, 7, 4) {
        return Err(format!("bracket counts {got:?}"));
    }
    let got = (r.attachment.words, r.attachment.correct_heads, r.attachment.correct_labeled);
    if got != (6, 5, 4) {
        return Err(format!("attachment counts {got:?}"));
    }
    let expected = [p, rc, f1, 100.0 * 5.0 / 6.0, 100.0 * 4.0 / 6.0];
    let actual = [r.precision, r.recall, r.f1, r.uas, r.las];
    if expected != actual {
        return Err(format!("metrics {actual:?}, expected {expected:?}"));
    }
    if (r.f1 - 800.0 / 13.0).abs() > 1e-12 {
        return Err(format!("F1 {} is not 800/13", r.f1));
    }
    Ok(())
}
