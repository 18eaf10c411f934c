//! Label attention and multi-head self-attention layers.
//!
//! In a label attention layer every head owns one learned query vector, so
//! it yields a single attention distribution over the words of the sentence
//! (head → words) instead of a word → word matrix. The resulting context
//! vector is added to every word's value vector (one residual connection per
//! head), projected down to `d_out` and normalized; head outputs are then
//! concatenated so each head's contribution stays identifiable.
//!
//! The `query_mode` and `combine_mode` switches produce the hybrid variants:
//! a per-word query matrix instead of query vectors, and a shared dense
//! projection over all heads instead of per-head projection + concatenation.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamSet, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// One learned query vector per head.
    Vector,
    /// A query projection matrix per head: one query per word.
    Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Per-head down-projection and normalization, then concatenation.
    Concat,
    /// Concatenate the residual head outputs and apply one shared projection.
    Project,
}

fn default_d_qk() -> usize {
    128
}

fn default_d_ff() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAttentionConfig {
    pub num_heads: usize,
    pub d_model: usize,
    #[serde(default = "default_d_qk")]
    pub d_qk: usize,
    #[serde(default = "default_d_qk")]
    pub d_v: usize,
    pub d_out: usize,
    #[serde(default = "yes")]
    pub use_pfl: bool,
    /// Hidden width of the position-wise feed-forward layer.
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default)]
    pub residual_dropout: f64,
    #[serde(default = "vector_mode")]
    pub query_mode: QueryMode,
    #[serde(default = "concat_mode")]
    pub combine_mode: CombineMode,
}

fn yes() -> bool {
    true
}

fn vector_mode() -> QueryMode {
    QueryMode::Vector
}

fn concat_mode() -> CombineMode {
    CombineMode::Concat
}

impl LabelAttentionConfig {
    pub fn new(num_heads: usize, d_model: usize, d_qk: usize, d_v: usize, d_out: usize) -> Self {
        LabelAttentionConfig {
            num_heads,
            d_model,
            d_qk,
            d_v,
            d_out,
            use_pfl: true,
            d_ff: default_d_ff(),
            residual_dropout: 0.0,
            query_mode: QueryMode::Vector,
            combine_mode: CombineMode::Concat,
        }
    }

    pub fn output_width(&self) -> usize {
        self.num_heads * self.d_out
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("d_qk", self.d_qk),
            ("d_v", self.d_v),
            ("d_out", self.d_out),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::Config(format!("label attention {name} must be positive")));
            }
        }
        if self.use_pfl && self.d_ff == 0 {
            return Err(Error::Config("feed-forward width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.residual_dropout) {
            return Err(Error::Config(format!(
                "residual dropout {} outside [0, 1)",
                self.residual_dropout
            )));
        }
        Ok(())
    }
}

/// Outputs of an attention layer for one sentence.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `[n, width]` word representations.
    pub word_reps: Var,
    /// One entry per head: `[1, n]` for query vectors, `[n, n]` otherwise.
    pub head_attention: Vec<Var>,
    /// One `[n, d_out]` matrix per head.
    pub per_head_outputs: Vec<Var>,
}

/// Row-wise layer normalization parameters.
#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(params: &mut ParamSet, prefix: &str, width: usize) -> Self {
        LayerNormParams {
            gain: params.add_constant(format!("{prefix}.gain"), &[width], 1.0),
            bias: params.add_constant(format!("{prefix}.bias"), &[width], 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Dense layer `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = params.add_uniform(format!("{prefix}.weight"), &[d_in, d_out], d_in, rng);
        let bias = bias.then(|| params.add_uniform(format!("{prefix}.bias"), &[d_out], d_in, rng));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_broadcast(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Position-wise feed-forward block with residual connection:
/// `LN(x + W₂ ReLU(W₁ x + b₁) + b₂)`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
    pub norm: LayerNormParams,
}

impl FeedForward {
    pub fn new(params: &mut ParamSet, prefix: &str, width: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            inner: Linear::new(params, &format!("{prefix}.ff1"), width, d_ff, true, rng),
            outer: Linear::new(params, &format!("{prefix}.ff2"), d_ff, width, true, rng),
            norm: LayerNormParams::new(params, &format!("{prefix}.ff_norm"), width),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h);
        let h = self.outer.forward(g, h)?;
        let r = g.add(x, h)?;
        self.norm.forward(g, r)
    }
}

/// softmax(q Kᵀ / √d) over the words, one row per query.
///
/// `query` is `[1, d]` (or `[m, d]` for per-word queries) and `keys` is
/// `[n, d]`; the result is `[1, n]` (or `[m, n]`).
pub fn attention_weights(g: &mut Graph<'_>, query: Var, keys: Var) -> Result<Var> {
    let d = g.shape(query)[g.shape(query).len() - 1];
    if g.shape(keys)[1] != d {
        return Err(Error::dim(format!(
            "query width {d} does not match key width {}",
            g.shape(keys)[1]
        )));
    }
    let kt = g.transpose(keys)?;
    let scores = g.matmul(query, kt)?;
    let scaled = g.scale(scores, 1.0 / (d as f64).sqrt());
    g.softmax(scaled, 1)
}

/// Tensor-level attention weights for a single query vector of width `d`
/// against `keys: [n, d]`.
pub fn lal_attention_weights(query: &[f64], keys: &Tensor, d: usize) -> Result<Tensor> {
    if query.len() != d || keys.shape().len() != 2 || keys.cols() != d {
        return Err(Error::dim(format!(
            "query of length {} and keys {:?} disagree with d = {d}",
            query.len(),
            keys.shape()
        )));
    }
    let q = Tensor::new(vec![1, d], query.to_vec())?;
    let scores = q.matmul(&keys.transpose()?)?;
    scores.scale(1.0 / (d as f64).sqrt()).softmax(1)
}

/// K = X W^K and V = X W^V for `x: [n, d_model]`.
pub fn compute_keys_values(x: &Tensor, w_key: &Tensor, w_value: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((x.matmul(w_key)?, x.matmul(w_value)?))
}

/// Attention-weighted mixture of the value rows: `weights: [n]`, `values: [n, d_v]`.
pub fn context_vector(weights: &[f64], values: &Tensor) -> Result<Vec<f64>> {
    if values.shape().len() != 2 || values.rows() != weights.len() {
        return Err(Error::dim(format!(
            "{} attention weights for values {:?}",
            weights.len(),
            values.shape()
        )));
    }
    let a = Tensor::new(vec![1, weights.len()], weights.to_vec())?;
    Ok(a.matmul(values)?.into_data())
}

#[derive(Debug, Clone)]
pub struct LabelAttentionHead {
    /// `[1, d_qk]` query vector or `[d_model, d_qk]` query matrix.
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    /// Down-projection and normalization, present in concat mode.
    pub output: Option<(ParamId, LayerNormParams)>,
}

/// Parameters of one label attention layer.
#[derive(Debug, Clone)]
pub struct LabelAttention {
    pub config: LabelAttentionConfig,
    pub heads: Vec<LabelAttentionHead>,
    /// Shared projection and normalization, present in project mode.
    pub projection: Option<(ParamId, LayerNormParams)>,
    pub pfl: Option<FeedForward>,
}

impl LabelAttention {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: &LabelAttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut heads = Vec::with_capacity(c.num_heads);
        for h in 0..c.num_heads {
            let p = format!("{prefix}.head{h}");
            let query = match c.query_mode {
                QueryMode::Vector => params.add_uniform(format!("{p}.query"), &[1, c.d_qk], c.d_qk, rng),
                QueryMode::Matrix => {
                    params.add_uniform(format!("{p}.query"), &[c.d_model, c.d_qk], c.d_model, rng)
                }
            };
            let key = params.add_uniform(format!("{p}.key"), &[c.d_model, c.d_qk], c.d_model, rng);
            let value = params.add_uniform(format!("{p}.value"), &[c.d_model, c.d_v], c.d_model, rng);
            let output = match c.combine_mode {
                CombineMode::Concat => Some((
                    params.add_uniform(format!("{p}.out"), &[c.d_v, c.d_out], c.d_v, rng),
                    LayerNormParams::new(params, &format!("{p}.norm"), c.d_out),
                )),
                CombineMode::Project => None,
            };
            heads.push(LabelAttentionHead {
                query,
                key,
                value,
                output,
            });
        }
        let projection = match c.combine_mode {
            CombineMode::Concat => None,
            CombineMode::Project => {
                let d_in = c.num_heads * c.d_v;
                Some((
                    params.add_uniform(format!("{prefix}.proj"), &[d_in, c.output_width()], d_in, rng),
                    LayerNormParams::new(params, &format!("{prefix}.proj_norm"), c.output_width()),
                ))
            }
        };
        let pfl = c
            .use_pfl
            .then(|| FeedForward::new(params, &format!("{prefix}.pfl"), c.output_width(), c.d_ff, rng));
        Ok(LabelAttention {
            config: config.clone(),
            heads,
            projection,
            pfl,
        })
    }

    /// Residual head output `V + C` (`[n, d_v]`) and the head's attention.
    fn head_residual(
        &self,
        g: &mut Graph<'_>,
        head: &LabelAttentionHead,
        x: Var,
        dropout: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        let wk = g.param(head.key);
        let wv = g.param(head.value);
        let keys = g.matmul(x, wk)?;
        let values = g.matmul(x, wv)?;
        let query = match self.config.query_mode {
            QueryMode::Vector => g.param(head.query),
            QueryMode::Matrix => {
                let wq = g.param(head.query);
                g.matmul(x, wq)?
            }
        };
        let attn = attention_weights(g, query, keys)?;
        let mut context = g.matmul(attn, values)?;
        if let Some(rng) = dropout.as_deref_mut() {
            context = g.dropout(context, self.config.residual_dropout, rng)?;
        }
        let residual = match self.config.query_mode {
            QueryMode::Vector => g.add_broadcast(values, context)?,
            QueryMode::Matrix => g.add(values, context)?,
        };
        Ok((residual, attn))
    }

    /// Runs the layer on `x: [n, d_model]`. Passing an RNG selects training
    /// mode (residual dropout active).
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<AttentionOutput> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.d_model {
            return Err(Error::dim(format!(
                "label attention expects [n×{}] input, got {:?}",
                self.config.d_model, shape
            )));
        }
        let mut head_attention = Vec::with_capacity(self.heads.len());
        let mut residuals = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (res, attn) = self.head_residual(g, head, x, &mut dropout)?;
            residuals.push(res);
            head_attention.push(attn);
        }

        let (combined, per_head_outputs) = match self.config.combine_mode {
            CombineMode::Concat => {
                let mut outs = Vec::with_capacity(self.heads.len());
                for (head, res) in self.heads.iter().zip(&residuals) {
                    let (w_out, norm) = head.output.as_ref().expect("concat head projection");
                    let w = g.param(*w_out);
                    let y = g.matmul(*res, w)?;
                    outs.push(norm.forward(g, y)?);
                }
                (g.concat(&outs, 1)?, outs)
            }
            CombineMode::Project => {
                let (w_proj, norm) = self.projection.as_ref().expect("shared projection");
                let cat = g.concat(&residuals, 1)?;
                let w = g.param(*w_proj);
                let y = g.matmul(cat, w)?;
                let y = norm.forward(g, y)?;
                let d = self.config.d_out;
                let mut outs = Vec::with_capacity(self.heads.len());
                for h in 0..self.heads.len() {
                    outs.push(g.slice(y, 1, h * d, (h + 1) * d)?);
                }
                (y, outs)
            }
        };

        let word_reps = match &self.pfl {
            Some(ff) => ff.forward(g, combined)?,
            None => combined,
        };
        Ok(AttentionOutput {
            word_reps,
            head_attention,
            per_head_outputs,
        })
    }

    /// Parameter ids owned by head `h` (shared parameters excluded).
    pub fn head_param_ids(&self, h: usize) -> Vec<ParamId> {
        let head = &self.heads[h];
        let mut ids = vec![head.query, head.key, head.value];
        if let Some((w, norm)) = &head.output {
            ids.extend([*w, norm.gain, norm.bias]);
        }
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttentionConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
}

/// Standard post-norm transformer layer: scaled dot-product multi-head
/// attention with residual and normalization, then a feed-forward block.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub config: SelfAttentionConfig,
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub norm: LayerNormParams,
    pub ff: FeedForward,
}

impl SelfAttention {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: &SelfAttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = config.d_model;
        if config.num_heads == 0 || d == 0 || !d.is_multiple_of(config.num_heads) {
            return Err(Error::Config(format!(
                "self-attention width {d} must be a positive multiple of {} heads",
                config.num_heads
            )));
        }
        if config.d_ff == 0 {
            return Err(Error::Config("feed-forward width must be positive".into()));
        }
        Ok(SelfAttention {
            config: config.clone(),
            query: params.add_uniform(format!("{prefix}.query"), &[d, d], d, rng),
            key: params.add_uniform(format!("{prefix}.key"), &[d, d], d, rng),
            value: params.add_uniform(format!("{prefix}.value"), &[d, d], d, rng),
            output: params.add_uniform(format!("{prefix}.out"), &[d, d], d, rng),
            norm: LayerNormParams::new(params, &format!("{prefix}.norm"), d),
            ff: FeedForward::new(params, prefix, d, config.d_ff, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<AttentionOutput> {
        let d = self.config.d_model;
        if g.shape(x).len() != 2 || g.shape(x)[1] != d {
            return Err(Error::dim(format!(
                "self-attention expects [n×{d}] input, got {:?}",
                g.shape(x)
            )));
        }
        let dk = d / self.config.num_heads;
        let (wq, wk, wv, wo) = (
            g.param(self.query),
            g.param(self.key),
            g.param(self.value),
            g.param(self.output),
        );
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let mut head_attention = Vec::new();
        let mut per_head_outputs = Vec::new();
        for h in 0..self.config.num_heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let qh = g.slice(q, 1, lo, hi)?;
            let kh = g.slice(k, 1, lo, hi)?;
            let vh = g.slice(v, 1, lo, hi)?;
            let attn = attention_weights(g, qh, kh)?;
            per_head_outputs.push(g.matmul(attn, vh)?);
            head_attention.push(attn);
        }
        let cat = g.concat(&per_head_outputs, 1)?;
        let mixed = g.matmul(cat, wo)?;
        let res = g.add(x, mixed)?;
        let normed = self.norm.forward(g, res)?;
        let word_reps = self.ff.forward(g, normed)?;
        Ok(AttentionOutput {
            word_reps,
            head_attention,
            per_head_outputs,
        })
    }
}
