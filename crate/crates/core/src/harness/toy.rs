//! A small probabilistic grammar generating sentences of 3 to 10 words
//! with constituency trees and head-percolated dependency arcs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::treebank::Treebank;
use crate::constituency::Tree;
use crate::dependency::DepArcs;
use crate::error::Result;

/// A right-hand-side symbol and the dependency label it receives when it is
/// not the head child.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Child {
    pub symbol: &'static str,
    pub label: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub lhs: &'static str,
    pub rhs: Vec<Child>,
    pub prob: f64,
    /// Index of the head child in `rhs`.
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub start: &'static str,
    pub rules: Vec<Rule>,
    /// Preterminal tag and its words, chosen uniformly.
    pub lexicon: Vec<(&'static str, Vec<&'static str>)>,
}

/// Nonterminals printed under a different label in the trees.
pub fn tree_label(symbol: &str) -> &str {
    match symbol {
        "NPb" => "NP",
        s => s,
    }
}

fn c(symbol: &'static str, label: &'static str) -> Child {
    Child { symbol, label }
}

fn r(lhs: &'static str, rhs: Vec<Child>, prob: f64, head: usize) -> Rule {
    Rule { lhs, rhs, prob, head }
}

pub fn toy_grammar() -> Grammar {
    let h = "";
    Grammar {
        start: "S",
        rules: vec![
            r("S", vec![c("NP", "nsubj"), c("VP", h)], 0.7, 1),
            r("S", vec![c("NP", "nsubj"), c("VP", h), c("PUNCT", "punct")], 0.3, 1),
            r("NP", vec![c("D", "det"), c("N", h)], 0.5, 1),
            r("NP", vec![c("D", "det"), c("A", "amod"), c("N", h)], 0.3, 2),
            r("NP", vec![c("D", "det"), c("N", h), c("PP", "prep")], 0.2, 1),
            r("PP", vec![c("P", h), c("NPb", "pobj")], 1.0, 0),
            r("NPb", vec![c("D", "det"), c("N", h)], 0.5, 1),
            r("NPb", vec![c("N", h)], 0.5, 0),
            r("VP", vec![c("V", h)], 0.3, 0),
            r("VP", vec![c("V", h), c("NPb", "obj")], 0.4, 0),
            r("VP", vec![c("V", h), c("PP", "prep")], 0.3, 0),
        ],
        lexicon: vec![
            ("D", vec!["the", "a", "every"]),
            ("N", vec!["cat", "dog", "man", "park", "telescope", "bird", "hill", "girl"]),
            ("V", vec!["saw", "sat", "ran", "liked", "watched"]),
            ("A", vec!["big", "small", "old"]),
            ("P", vec!["in", "with", "on", "near"]),
            ("PUNCT", vec!["."]),
        ],
    }
}

impl Grammar {
    fn words(&self, tag: &str) -> Option<&[&'static str]> {
        self.lexicon.iter().find(|(t, _)| *t == tag).map(|(_, w)| w.as_slice())
    }

    fn choose(&self, lhs: &str, rng: &mut ChaCha8Rng) -> &Rule {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = None;
        for rule in self.rules.iter().filter(|r| r.lhs == lhs) {
            acc += rule.prob;
            last = Some(rule);
            if u < acc {
                return rule;
            }
        }
        last.expect("nonterminal has rules")
    }

    /// Expands `symbol`; returns the subtree and the index of its head word.
    /// `heads`/`labels` receive one entry per generated word.
    fn expand(
        &self,
        symbol: &str,
        rng: &mut ChaCha8Rng,
        heads: &mut Vec<usize>,
        labels: &mut Vec<String>,
    ) -> (Tree, usize) {
        if let Some(words) = self.words(symbol) {
            let word = words[rng.gen_range(0..words.len())];
            heads.push(0);
            labels.push(String::new());
            let tree = Tree::Leaf {
                tag: symbol.to_string(),
                word: word.to_string(),
            };
            return (tree, heads.len() - 1);
        }
        let rule = self.choose(symbol, rng).clone();
        let mut children = Vec::with_capacity(rule.rhs.len());
        let mut child_heads = Vec::with_capacity(rule.rhs.len());
        for ch in &rule.rhs {
            let (t, hw) = self.expand(ch.symbol, rng, heads, labels);
            children.push(t);
            child_heads.push(hw);
        }
        let head_word = child_heads[rule.head];
        for (k, ch) in rule.rhs.iter().enumerate() {
            if k != rule.head {
                heads[child_heads[k]] = head_word + 1;
                labels[child_heads[k]] = ch.label.to_string();
            }
        }
        let tree = Tree::Node {
            label: tree_label(symbol).to_string(),
            children,
        };
        (tree, head_word)
    }

    pub fn generate(&self, rng: &mut ChaCha8Rng) -> (Tree, DepArcs) {
        let mut heads = Vec::new();
        let mut labels = Vec::new();
        let (tree, root) = self.expand(self.start, rng, &mut heads, &mut labels);
        heads[root] = 0;
        labels[root] = "root".to_string();
        (tree, DepArcs { heads, labels })
    }
}

/// `size` sentences from the toy grammar; identical seeds give identical
/// corpora.
pub fn generate_toy_corpus(seed: u64, size: usize) -> Result<Treebank> {
    let grammar = toy_grammar();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..size).map(|_| grammar.generate(&mut rng)).collect();
    Treebank::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_probabilities_sum_to_one() {
        let g = toy_grammar();
        for lhs in ["S", "NP", "NPb", "PP", "VP"] {
            let total: f64 = g.rules.iter().filter(|r| r.lhs == lhs).map(|r| r.prob).sum();
            assert!((total - 1.0).abs() < 1e-12, "{lhs}: {total}");
        }
    }

    #[test]
    fn lengths_and_arcs_are_valid() {
        let tb = generate_toy_corpus(3, 300).unwrap();
        for e in &tb.examples {
            let n = e.sentence.len();
            assert!((3..=10).contains(&n), "length {n}");
            e.arcs.validate().unwrap();
        }
    }

    #[test]
    fn seed_determines_corpus() {
        assert_eq!(generate_toy_corpus(5, 20).unwrap(), generate_toy_corpus(5, 20).unwrap());
        assert_ne!(generate_toy_corpus(5, 20).unwrap(), generate_toy_corpus(6, 20).unwrap());
    }
}
