//! The joint constituency + dependency parser.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionOutput, CombineMode, LabelAttentionConfig, QueryMode};
use crate::constituency::{
    cky_decode, hinge_loss, pad_boundaries, span_matrix, ParseTree, SpanChart, SpanIndex, SpanScorer, Tree,
};
use crate::dependency::{decode_arcs, dep_loss, label_arcs, DecodeMode, DepArcs, DependencyScorer};
use crate::encoder::{Encoder, EncoderConfig, Sentence, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, ParamId, ParamSet, Tensor, Var};

/// Model hyperparameters. Defaults are the desk-scale configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_content: usize,
    pub d_position: usize,
    pub max_len: usize,
    pub self_attention_heads: usize,
    pub self_attention_d_ff: usize,
    /// Label attention heads; `None` means one head per phrase label.
    pub label_heads: Option<usize>,
    pub d_qk: usize,
    pub d_v: usize,
    pub d_out: usize,
    pub use_pfl: bool,
    pub pfl_d_ff: usize,
    pub residual_dropout: f64,
    pub query_mode: QueryMode,
    pub combine_mode: CombineMode,
    pub span_hidden: usize,
    pub arc_hidden: usize,
    pub label_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 3,
            d_content: 48,
            d_position: 16,
            max_len: 64,
            self_attention_heads: 4,
            self_attention_d_ff: 128,
            label_heads: Some(12),
            d_qk: 16,
            d_v: 16,
            d_out: 8,
            use_pfl: true,
            pfl_d_ff: 128,
            residual_dropout: 0.0,
            query_mode: QueryMode::Vector,
            combine_mode: CombineMode::Concat,
            span_hidden: 64,
            arc_hidden: 64,
            label_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn encoder_config(&self, vocab: &Vocab) -> EncoderConfig {
        let heads = self.label_heads.unwrap_or_else(|| vocab.num_phrase_labels().max(1));
        EncoderConfig {
            num_layers: self.num_layers,
            d_content: self.d_content,
            d_position: self.d_position,
            max_len: self.max_len,
            self_attention_heads: self.self_attention_heads,
            self_attention_d_ff: self.self_attention_d_ff,
            label_attention: LabelAttentionConfig {
                num_heads: heads,
                d_model: self.d_content + self.d_position,
                d_qk: self.d_qk,
                d_v: self.d_v,
                d_out: self.d_out,
                use_pfl: self.use_pfl,
                d_ff: self.pfl_d_ff,
                residual_dropout: self.residual_dropout,
                query_mode: self.query_mode,
                combine_mode: self.combine_mode,
            },
        }
    }
}

/// A sentence with its gold annotation mapped to ids.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub word_ids: Vec<usize>,
    pub tag_ids: Vec<usize>,
    pub tree: ParseTree,
    pub heads: Vec<usize>,
    pub dep_labels: Vec<usize>,
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub attention: AttentionOutput,
    pub index: SpanIndex,
    /// `[spans, width]` span vectors.
    pub spans: Var,
    /// `[spans, labels - 1]` span scores.
    pub span_scores: Var,
    pub candidates: Var,
    /// `[n, n + 1]` arc scores.
    pub arc_scores: Var,
}

/// Loss values of one sentence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub constituency: f64,
    pub dependency: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.constituency + self.dependency
    }
}

/// Parser output for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tree: ParseTree,
    pub score: f64,
    pub arcs: DepArcs,
}

#[derive(Debug, Clone)]
struct Network {
    encoder: Encoder,
    start: ParamId,
    stop: ParamId,
    spans: SpanScorer,
    deps: DependencyScorer,
}

#[derive(Debug, Clone)]
pub struct Parser {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamSet,
    net: Network,
    pub decode_mode: DecodeMode,
}

impl Parser {
    /// Builds a freshly initialized parser; `seed` fixes all initial values.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if vocab.num_phrase_labels() == 0 {
            return Err(Error::Config("no constituency labels in vocabulary".into()));
        }
        if vocab.dep_labels.is_empty() {
            return Err(Error::Config("no dependency labels in vocabulary".into()));
        }
        let enc_config = config.encoder_config(&vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::new(&mut params, &enc_config, &vocab, &mut rng)?;
        let width = enc_config.label_attention.output_width();
        if !config.d_out.is_multiple_of(2) {
            return Err(Error::Config(format!("d_out = {} must be even", config.d_out)));
        }
        let start = params.add_uniform("span.start", &[1, width], width, &mut rng);
        let stop = params.add_uniform("span.stop", &[1, width], width, &mut rng);
        let spans = SpanScorer::new(&mut params, width, config.span_hidden, vocab.num_phrase_labels(), &mut rng)?;
        let deps = DependencyScorer::new(
            &mut params,
            width,
            config.arc_hidden,
            config.label_hidden,
            vocab.dep_labels.len(),
            &mut rng,
        )?;
        Ok(Parser {
            config,
            vocab,
            params,
            net: Network {
                encoder,
                start,
                stop,
                spans,
                deps,
            },
            decode_mode: DecodeMode::Tree,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.net.encoder
    }

    pub fn num_heads(&self) -> usize {
        self.net.encoder.config.label_attention.num_heads
    }

    pub fn d_out(&self) -> usize {
        self.config.d_out
    }

    /// Whether head slices of word representations are attributable to
    /// single heads (no feed-forward layer after the concatenation).
    pub fn heads_identifiable(&self) -> bool {
        !self.config.use_pfl && self.config.combine_mode == CombineMode::Concat
    }

    /// Maps a gold example to ids. Unknown words/tags become `<unk>`;
    /// unknown labels are a vocabulary error.
    pub fn prepare(&self, sentence: &Sentence, tree: &Tree, arcs: &DepArcs) -> Result<PreparedExample> {
        let (word_ids, tag_ids) = sentence.ids(&self.vocab);
        let parse = tree.to_parse_tree_with(&self.vocab.labels)?;
        if parse.n != sentence.len() || arcs.len() != sentence.len() {
            return Err(Error::Alignment(format!(
                "sentence of {} words, tree over {}, {} arcs",
                sentence.len(),
                parse.n,
                arcs.len()
            )));
        }
        let dep_labels = arcs
            .labels
            .iter()
            .map(|l| {
                self.vocab
                    .dep_labels
                    .get(l)
                    .ok_or_else(|| Error::Vocab(format!("unknown dependency label '{l}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedExample {
            word_ids,
            tag_ids,
            tree: parse,
            heads: arcs.heads.clone(),
            dep_labels,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        word_ids: &[usize],
        tag_ids: &[usize],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass> {
        let attention = self.net.encoder.encode(g, word_ids, tag_ids, dropout)?;
        let words = attention.word_reps;
        let n = word_ids.len();
        let index = SpanIndex::new(n);
        let start = g.param(self.net.start);
        let stop = g.param(self.net.stop);
        let padded = g.concat(&[start, words, stop], 0)?;
        let spans = span_matrix(g, padded, &index, self.num_heads(), self.config.d_out)?;
        let span_scores = self.net.spans.forward(g, spans)?;
        let candidates = self.net.deps.candidates(g, words)?;
        let arc_scores = self.net.deps.arcs.forward(g, words, candidates)?;
        Ok(ForwardPass {
            attention,
            index,
            spans,
            span_scores,
            candidates,
            arc_scores,
        })
    }

    /// Joint loss `L_c + L_d` on the tape.
    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        example: &PreparedExample,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, LossParts)> {
        let fp = self.forward(g, &example.word_ids, &example.tag_ids, dropout)?;
        let (lc, _) = hinge_loss(g, fp.span_scores, &fp.index, &example.tree)?;
        let label_scores =
            self.net
                .deps
                .labels
                .forward(g, fp.attention.word_reps, fp.candidates, &example.heads)?;
        let ld = dep_loss(g, fp.arc_scores, label_scores, &example.heads, &example.dep_labels)?;
        let parts = LossParts {
            constituency: g.value(lc).data()[0],
            dependency: g.value(ld).data()[0],
        };
        Ok((g.add(lc, ld)?, parts))
    }

    /// Loss and parameter gradients for one sentence. A `dropout_seed`
    /// selects training mode.
    pub fn gradients(&self, example: &PreparedExample, dropout_seed: Option<u64>) -> Result<(LossParts, Gradients)> {
        let mut g = Graph::new(&self.params);
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (loss, parts) = self.loss(&mut g, example, rng.as_mut())?;
        Ok((parts, g.backward(loss)?))
    }

    pub fn parse(&self, sentence: &Sentence) -> Result<Prediction> {
        let (word_ids, tag_ids) = sentence.ids(&self.vocab);
        let mut g = Graph::new(&self.params);
        let fp = self.forward(&mut g, &word_ids, &tag_ids, None)?;
        let chart = SpanChart::from_span_scores(&fp.index, g.value(fp.span_scores))?;
        let (tree, score) = cky_decode(&chart, None);
        let heads = decode_arcs(g.value(fp.arc_scores), self.decode_mode)?;
        let label_ids = label_arcs(
            &mut g,
            &self.net.deps.labels,
            fp.attention.word_reps,
            fp.candidates,
            &heads,
        )?;
        let labels = label_ids
            .into_iter()
            .map(|l| self.vocab.dep_labels.name(l).to_string())
            .collect();
        Ok(Prediction {
            tree,
            score,
            arcs: DepArcs { heads, labels },
        })
    }

    /// Word representations framed by the learned START and STOP rows.
    pub fn padded_representations(&self, word_reps: &Tensor) -> Result<Tensor> {
        pad_boundaries(
            word_reps,
            self.params.get(self.net.start).data(),
            self.params.get(self.net.stop).data(),
        )
    }

    /// Label attention output rows for `sentence` in eval mode.
    pub fn word_representations(&self, sentence: &Sentence) -> Result<Tensor> {
        let (word_ids, tag_ids) = sentence.ids(&self.vocab);
        let mut g = Graph::new(&self.params);
        let out = self.net.encoder.encode(&mut g, &word_ids, &tag_ids, None)?;
        Ok(g.value(out.word_reps).clone())
    }

    /// Rebuilds a parser with the same architecture and copies `values`
    /// into it in declaration order.
    pub fn from_parts(config: ModelConfig, vocab: Vocab, values: Vec<Vec<f64>>) -> Result<Self> {
        let mut parser = Parser::new(config, vocab, 0)?;
        parser.params.load_values(values)?;
        Ok(parser)
    }
}
