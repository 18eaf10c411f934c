//! Token embeddings and the self-attention stack that feeds the label
//! attention layer.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionOutput, LabelAttention, LabelAttentionConfig, SelfAttention, SelfAttentionConfig};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamSet, Var};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
/// Constituency label id reserved for "no constituent".
pub const EMPTY_LABEL: usize = 0;

/// Dense string ↔ id table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Interner {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Interner {
    fn from(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Interner { items, index }
    }
}

impl From<Interner> for Vec<String> {
    fn from(i: Interner) -> Self {
        i.items
    }
}

impl Interner {
    pub fn with_reserved(reserved: &[&str]) -> Self {
        let mut i = Interner::default();
        for r in reserved {
            i.intern(r);
        }
        i
    }

    pub fn intern(&mut self, s: &str) -> usize {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        self.items.push(s.to_string());
        self.index.insert(s.to_string(), self.items.len() - 1);
        self.items.len() - 1
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }
}

/// Word, tag, constituency-label and dependency-label tables.
///
/// Words and tags reserve [`PAD_ID`] and [`UNK_ID`]; constituency labels
/// reserve [`EMPTY_LABEL`] for the empty category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub words: Interner,
    pub tags: Interner,
    pub labels: Interner,
    pub dep_labels: Interner,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab {
            words: Interner::with_reserved(&[PAD, UNK]),
            tags: Interner::with_reserved(&[PAD, UNK]),
            labels: Interner::with_reserved(&[""]),
            dep_labels: Interner::default(),
        }
    }
}

impl Vocab {
    pub fn word_id(&self, w: &str) -> usize {
        self.words.get(w).unwrap_or(UNK_ID)
    }

    pub fn tag_id(&self, t: &str) -> usize {
        self.tags.get(t).unwrap_or(UNK_ID)
    }

    /// Number of non-empty constituency labels.
    pub fn num_phrase_labels(&self) -> usize {
        self.labels.len() - 1
    }
}

/// A tokenized sentence with its part-of-speech tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl Sentence {
    pub fn new(words: Vec<String>, tags: Vec<String>) -> Result<Self> {
        if words.len() != tags.len() {
            return Err(Error::Input(format!(
                "{} words but {} tags",
                words.len(),
                tags.len()
            )));
        }
        if words.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        Ok(Sentence { words, tags })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn ids(&self, vocab: &Vocab) -> (Vec<usize>, Vec<usize>) {
        (
            self.words.iter().map(|w| vocab.word_id(w)).collect(),
            self.tags.iter().map(|t| vocab.tag_id(t)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub d_content: usize,
    pub d_position: usize,
    pub max_len: usize,
    pub self_attention_heads: usize,
    pub self_attention_d_ff: usize,
    pub label_attention: LabelAttentionConfig,
}

impl EncoderConfig {
    pub fn d_model(&self) -> usize {
        self.d_content + self.d_position
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_content == 0 || self.d_position == 0 || self.max_len == 0 {
            return Err(Error::Config("embedding widths and max_len must be positive".into()));
        }
        if self.label_attention.d_model != self.d_model() {
            return Err(Error::Config(format!(
                "label attention input width {} differs from d_content + d_position = {}",
                self.label_attention.d_model,
                self.d_model()
            )));
        }
        self.label_attention.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub word_emb: ParamId,
    pub tag_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<SelfAttention>,
    pub label_attention: LabelAttention,
}

impl Encoder {
    pub fn new(
        params: &mut ParamSet,
        config: &EncoderConfig,
        vocab: &Vocab,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let dc = config.d_content;
        let word_emb = params.add_uniform("embed.word", &[vocab.words.len(), dc], dc, rng);
        let tag_emb = params.add_uniform("embed.tag", &[vocab.tags.len(), dc], dc, rng);
        let pos_emb = params.add_uniform(
            "embed.position",
            &[config.max_len, config.d_position],
            config.d_position,
            rng,
        );
        let sa = SelfAttentionConfig {
            d_model: config.d_model(),
            num_heads: config.self_attention_heads,
            d_ff: config.self_attention_d_ff,
        };
        let layers = (0..config.num_layers)
            .map(|l| SelfAttention::new(params, &format!("encoder.layer{l}"), &sa, rng))
            .collect::<Result<Vec<_>>>()?;
        let label_attention = LabelAttention::new(params, "lal", &config.label_attention, rng)?;
        Ok(Encoder {
            config: config.clone(),
            word_emb,
            tag_emb,
            pos_emb,
            layers,
            label_attention,
        })
    }

    /// Row j = [word_emb[w_j] + tag_emb[t_j] ; position_emb[j]].
    pub fn embed(&self, g: &mut Graph<'_>, words: &[usize], tags: &[usize]) -> Result<Var> {
        let n = words.len();
        if n == 0 || n != tags.len() {
            return Err(Error::Input(format!("{n} words with {} tags", tags.len())));
        }
        if n > self.config.max_len {
            return Err(Error::Input(format!(
                "sentence of {n} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        let we = g.param(self.word_emb);
        let te = g.param(self.tag_emb);
        let pe = g.param(self.pos_emb);
        let w = g.gather_rows(we, words)?;
        let t = g.gather_rows(te, tags)?;
        let content = g.add(w, t)?;
        let positions: Vec<usize> = (0..n).collect();
        let p = g.gather_rows(pe, &positions)?;
        g.concat(&[content, p], 1)
    }

    /// Embeddings → self-attention layers → label attention.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        words: &[usize],
        tags: &[usize],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<AttentionOutput> {
        let mut x = self.embed(g, words, tags)?;
        for layer in &self.layers {
            x = layer.forward(g, x)?.word_reps;
        }
        self.label_attention.forward(g, x, dropout)
    }
}
