//! Biaffine arc and label scorers and the dependency cross-entropy loss.

use rand_chacha::ChaCha8Rng;

use crate::attention::Linear;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

/// One-layer perceptron `ReLU(x W + b)`.
#[derive(Debug, Clone)]
pub struct Perceptron(pub Linear);

impl Perceptron {
    fn new(params: &mut ParamSet, prefix: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Perceptron(Linear::new(params, prefix, d_in, d_out, true, rng))
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.0.forward(g, x)?;
        Ok(g.relu(h))
    }
}

/// `α_ij = d_iᵀ W h_j + Uᵀ d_i + Vᵀ h_j + b`.
#[derive(Debug, Clone)]
pub struct ArcScorer {
    pub dep_mlp: Perceptron,
    pub head_mlp: Perceptron,
    pub bilinear: ParamId,
    pub dep_linear: ParamId,
    pub head_linear: ParamId,
    pub bias: ParamId,
}

impl ArcScorer {
    pub fn new(params: &mut ParamSet, width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        ArcScorer {
            dep_mlp: Perceptron::new(params, "arc.dep_mlp", width, hidden, rng),
            head_mlp: Perceptron::new(params, "arc.head_mlp", width, hidden, rng),
            bilinear: params.add_uniform("arc.W", &[hidden, hidden], hidden, rng),
            dep_linear: params.add_uniform("arc.U", &[hidden, 1], hidden, rng),
            head_linear: params.add_uniform("arc.V", &[hidden, 1], hidden, rng),
            bias: params.add_constant("arc.b", &[1], 0.0),
        }
    }

    /// `words: [n, width]`, `heads: [n + 1, width]` (row 0 = root) →
    /// `[n, n + 1]` scores.
    pub fn forward(&self, g: &mut Graph<'_>, words: Var, heads: Var) -> Result<Var> {
        let d = self.dep_mlp.forward(g, words)?;
        let h = self.head_mlp.forward(g, heads)?;
        let w = g.param(self.bilinear);
        let u = g.param(self.dep_linear);
        let v = g.param(self.head_linear);
        let b = g.param(self.bias);
        let dw = g.matmul(d, w)?;
        let ht = g.transpose(h)?;
        let bilinear = g.matmul(dw, ht)?;
        let dep_term = g.matmul(d, u)?;
        let hv = g.matmul(h, v)?;
        let head_term = g.transpose(hv)?;
        let s = g.add_broadcast(bilinear, dep_term)?;
        let s = g.add_broadcast(s, head_term)?;
        g.add_broadcast(s, b)
    }
}

/// Per-label biaffine scorer over (dependent, head) pairs.
#[derive(Debug, Clone)]
pub struct LabelScorer {
    pub dep_mlp: Perceptron,
    pub head_mlp: Perceptron,
    /// `[hidden, labels · hidden]`: label l's matrix in columns l·hidden..
    pub bilinear: ParamId,
    pub dep_linear: ParamId,
    pub head_linear: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
    pub num_labels: usize,
}

impl LabelScorer {
    pub fn new(params: &mut ParamSet, width: usize, hidden: usize, num_labels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::Config("dependency label set is empty".into()));
        }
        Ok(LabelScorer {
            dep_mlp: Perceptron::new(params, "label.dep_mlp", width, hidden, rng),
            head_mlp: Perceptron::new(params, "label.head_mlp", width, hidden, rng),
            bilinear: params.add_uniform("label.W", &[hidden, num_labels * hidden], hidden, rng),
            dep_linear: params.add_uniform("label.U", &[hidden, num_labels], hidden, rng),
            head_linear: params.add_uniform("label.V", &[hidden, num_labels], hidden, rng),
            bias: params.add_constant("label.b", &[num_labels], 0.0),
            hidden,
            num_labels,
        })
    }

    /// Scores every label for each word paired with `head_of[i]`:
    /// `[n, labels]`. `candidates` is `[n + 1, width]` with the root at row 0.
    pub fn forward(&self, g: &mut Graph<'_>, words: Var, candidates: Var, head_of: &[usize]) -> Result<Var> {
        let n = g.shape(words)[0];
        if head_of.len() != n {
            return Err(Error::dim(format!("{} heads for {n} words", head_of.len())));
        }
        let (k, m) = (self.hidden, self.num_labels);
        let d = self.dep_mlp.forward(g, words)?;
        let chosen = g.gather_rows(candidates, head_of)?;
        let h = self.head_mlp.forward(g, chosen)?;

        let w = g.param(self.bilinear);
        let dw = g.matmul(d, w)?; // [n, m·k]
        let tiled: Vec<Var> = vec![h; m];
        let h_tiled = g.concat(&tiled, 1)?;
        let prod = g.mul(dw, h_tiled)?;
        let mut block = Tensor::zeros(&[m * k, m]);
        for l in 0..m {
            for c in 0..k {
                block.data_mut()[(l * k + c) * m + l] = 1.0;
            }
        }
        let block = g.constant(block);
        let bilinear = g.matmul(prod, block)?;

        let u = g.param(self.dep_linear);
        let v = g.param(self.head_linear);
        let b = g.param(self.bias);
        let du = g.matmul(d, u)?;
        let hv = g.matmul(h, v)?;
        let s = g.add(bilinear, du)?;
        let s = g.add(s, hv)?;
        g.add_broadcast(s, b)
    }
}

/// Arc and label scorers sharing a learned root representation.
#[derive(Debug, Clone)]
pub struct DependencyScorer {
    pub root: ParamId,
    pub arcs: ArcScorer,
    pub labels: LabelScorer,
}

impl DependencyScorer {
    pub fn new(
        params: &mut ParamSet,
        width: usize,
        arc_hidden: usize,
        label_hidden: usize,
        num_labels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(DependencyScorer {
            root: params.add_uniform("dep.root", &[1, width], width, rng),
            arcs: ArcScorer::new(params, width, arc_hidden, rng),
            labels: LabelScorer::new(params, width, label_hidden, num_labels, rng)?,
        })
    }

    /// `[n + 1, width]`: the root row followed by the words.
    pub fn candidates(&self, g: &mut Graph<'_>, words: Var) -> Result<Var> {
        let root = g.param(self.root);
        g.concat(&[root, words], 0)
    }
}

/// `-Σ_i [log P(h_i | d_i) + log P(l_i | d_i, h_i)]` where the arc
/// distribution is a softmax over the n + 1 candidate heads and the label
/// distribution a softmax over labels scored for the gold pair.
pub fn dep_loss(
    g: &mut Graph<'_>,
    arc_scores: Var,
    label_scores: Var,
    gold_heads: &[usize],
    gold_labels: &[usize],
) -> Result<Var> {
    let n = gold_heads.len();
    let arc_shape = g.shape(arc_scores).to_vec();
    let label_shape = g.shape(label_scores).to_vec();
    if arc_shape != [n, n + 1] || gold_labels.len() != n || label_shape.len() != 2 || label_shape[0] != n {
        return Err(Error::dim(format!(
            "arc scores {arc_shape:?} / label scores {label_shape:?} do not fit {n} gold arcs"
        )));
    }
    let m = label_shape[1];
    let mut arc_entries = Vec::with_capacity(n);
    let mut label_entries = Vec::with_capacity(n);
    for i in 0..n {
        if gold_heads[i] > n || gold_labels[i] >= m {
            return Err(Error::Input(format!("gold arc {i} out of range")));
        }
        arc_entries.push((i * (n + 1) + gold_heads[i], -1.0));
        label_entries.push((i * m + gold_labels[i], -1.0));
    }
    let arc_lp = g.log_softmax(arc_scores, 1)?;
    let label_lp = g.log_softmax(label_scores, 1)?;
    let arc_nll = g.weighted_sum(arc_lp, arc_entries)?;
    let label_nll = g.weighted_sum(label_lp, label_entries)?;
    g.add(arc_nll, label_nll)
}

/// Labels each (word, head) pair with its highest-scoring dependency label.
pub fn label_arcs(
    g: &mut Graph<'_>,
    scorer: &LabelScorer,
    words: Var,
    candidates: Var,
    heads: &[usize],
) -> Result<Vec<usize>> {
    let scores = scorer.forward(g, words, candidates, heads)?;
    Ok(argmax_labels(g.value(scores)))
}

/// Highest-scoring label per row; ties go to the lowest label id.
pub fn argmax_labels(label_scores: &Tensor) -> Vec<usize> {
    (0..label_scores.rows())
        .map(|i| {
            let row = label_scores.row(i);
            let mut best = 0;
            for (l, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = l;
                }
            }
            best
        })
        .collect()
}
