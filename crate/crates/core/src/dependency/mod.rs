//! Biaffine dependency scoring, cross-entropy training and tree decoding.

mod biaffine;
mod cle;
mod conll;

pub use biaffine::{argmax_labels, dep_loss, label_arcs, ArcScorer, DependencyScorer, LabelScorer, Perceptron};
pub use cle::{chu_liu_edmonds, decode_arcs, is_arborescence, single_root_arborescence, DecodeMode};
pub use conll::{parse_conll, write_conll, DepSentence};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Head (0 = root) and dependency label for each word, in word order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepArcs {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl DepArcs {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Checks the gold-tree invariants: heads in range, a single root, no
    /// cycles.
    pub fn validate(&self) -> Result<()> {
        let n = self.heads.len();
        if self.labels.len() != n {
            return Err(Error::Input(format!("{n} heads but {} labels", self.labels.len())));
        }
        if let Some(i) = self.heads.iter().position(|&h| h > n) {
            return Err(Error::Input(format!("head {} of word {} out of range", self.heads[i], i + 1)));
        }
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(Error::Input(format!("{roots} words attached to the root, expected 1")));
        }
        if !is_arborescence(&self.heads, true) {
            return Err(Error::Input("arcs contain a cycle".into()));
        }
        Ok(())
    }
}
