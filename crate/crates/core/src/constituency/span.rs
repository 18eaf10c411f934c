//! Span vectors built from head-specific forward/backward halves.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{LayerNormParams, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamSet, Tensor, Var};

/// Enumeration of all spans `(i, j)`, `0 ≤ i < j ≤ n`, ordered by `i` then `j`.
#[derive(Debug, Clone)]
pub struct SpanIndex {
    n: usize,
    pairs: Vec<(usize, usize)>,
    lookup: Vec<usize>,
}

impl SpanIndex {
    pub fn new(n: usize) -> Self {
        let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
        let mut lookup = vec![usize::MAX; (n + 1) * (n + 1)];
        for i in 0..n {
            for j in i + 1..=n {
                lookup[i * (n + 1) + j] = pairs.len();
                pairs.push((i, j));
            }
        }
        SpanIndex { n, pairs, lookup }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        if i < j && j <= self.n {
            Some(self.lookup[i * (self.n + 1) + j])
        } else {
            None
        }
    }
}

/// Span representation with its per-head layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanVector {
    pub start: usize,
    pub end: usize,
    pub values: Vec<f64>,
    pub heads: usize,
    pub d_out: usize,
    /// False when the word representations went through a feed-forward layer
    /// that mixes heads, in which case slices no longer belong to one head.
    pub identifiable: bool,
}

impl SpanVector {
    pub fn head_slice(&self, h: usize) -> &[f64] {
        &self.values[h * self.d_out..(h + 1) * self.d_out]
    }
}

fn check_layout(width: usize, heads: usize, d_out: usize) -> Result<()> {
    if d_out == 0 || !d_out.is_multiple_of(2) {
        return Err(Error::Config(format!("per-head width {d_out} must be even and positive")));
    }
    if heads * d_out != width {
        return Err(Error::dim(format!("width {width} is not {heads} heads × {d_out}")));
    }
    Ok(())
}

/// Stacks the START row, the word rows and the STOP row: `[n + 2, width]`.
pub fn pad_boundaries(word_reps: &Tensor, start: &[f64], stop: &[f64]) -> Result<Tensor> {
    let w = word_reps.cols();
    if start.len() != w || stop.len() != w {
        return Err(Error::dim("boundary rows do not match word width"));
    }
    let s = Tensor::new(vec![1, w], start.to_vec())?;
    let e = Tensor::new(vec![1, w], stop.to_vec())?;
    Tensor::concat(&[&s, word_reps, &e], 0)
}

/// Span vector for `(i, j)` from boundary-padded word representations.
///
/// Row `k` of `padded` is word `k` (1-indexed); rows 0 and n+1 are the
/// START/STOP representations. Each head block of width `d_out` is split in
/// half: forward difference `h→[j] - h→[i]` then backward difference
/// `h←[j+1] - h←[i+1]`.
pub fn span_vector(padded: &Tensor, i: usize, j: usize, heads: usize, d_out: usize) -> Result<SpanVector> {
    let rows = padded.rows();
    if rows < 3 {
        return Err(Error::dim("padded representations need at least one word"));
    }
    let n = rows - 2;
    if i >= j || j > n {
        return Err(Error::Input(format!("span ({i}, {j}) invalid for n = {n}")));
    }
    let w = padded.cols();
    check_layout(w, heads, d_out)?;
    let half = d_out / 2;
    let mut values = vec![0.0; w];
    for h in 0..heads {
        for c in 0..d_out {
            let col = h * d_out + c;
            values[col] = if c < half {
                padded.at(j, col) - padded.at(i, col)
            } else {
                padded.at(j + 1, col) - padded.at(i + 1, col)
            };
        }
    }
    Ok(SpanVector {
        start: i,
        end: j,
        values,
        heads,
        d_out,
        identifiable: true,
    })
}

/// Span vectors for every span of `index` on the tape: `[spans, width]`.
pub fn span_matrix(
    g: &mut Graph<'_>,
    padded: Var,
    index: &SpanIndex,
    heads: usize,
    d_out: usize,
) -> Result<Var> {
    let w = g.shape(padded)[1];
    check_layout(w, heads, d_out)?;
    let pairs = index.pairs();
    let (i_rows, j_rows): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let i_next: Vec<usize> = i_rows.iter().map(|i| i + 1).collect();
    let j_next: Vec<usize> = j_rows.iter().map(|j| j + 1).collect();

    let half = d_out / 2;
    let fwd_row: Vec<f64> = (0..w).map(|c| if c % d_out < half { 1.0 } else { 0.0 }).collect();
    let fwd_mask: Vec<f64> = fwd_row.iter().copied().cycle().take(w * pairs.len()).collect();
    let bwd_mask: Vec<f64> = fwd_mask.iter().map(|m| 1.0 - m).collect();
    let fwd_mask = g.constant(Tensor::new(vec![pairs.len(), w], fwd_mask)?);
    let bwd_mask = g.constant(Tensor::new(vec![pairs.len(), w], bwd_mask)?);

    let hj = g.gather_rows(padded, &j_rows)?;
    let hi = g.gather_rows(padded, &i_rows)?;
    let hj1 = g.gather_rows(padded, &j_next)?;
    let hi1 = g.gather_rows(padded, &i_next)?;
    let fwd = g.sub(hj, hi)?;
    let bwd = g.sub(hj1, hi1)?;
    let fwd = g.mul(fwd, fwd_mask)?;
    let bwd = g.mul(bwd, bwd_mask)?;
    g.add(fwd, bwd)
}

/// `S(i,j) = W₂ ReLU(LN(W₁ s + b₁)) + b₂`, one score per non-empty label.
#[derive(Debug, Clone)]
pub struct SpanScorer {
    pub hidden: Linear,
    pub norm: LayerNormParams,
    pub output: Linear,
}

impl SpanScorer {
    pub fn new(params: &mut ParamSet, width: usize, hidden: usize, num_labels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if num_labels == 0 || hidden == 0 {
            return Err(Error::Config("span scorer needs labels and a hidden width".into()));
        }
        Ok(SpanScorer {
            hidden: Linear::new(params, "span.hidden", width, hidden, true, rng),
            norm: LayerNormParams::new(params, "span.norm", hidden),
            output: Linear::new(params, "span.output", hidden, num_labels, true, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, spans: Var) -> Result<Var> {
        let h = self.hidden.forward(g, spans)?;
        let h = self.norm.forward(g, h)?;
        let h = g.relu(h);
        self.output.forward(g, h)
    }
}
