//! Bracketed trees and their labeled-span representation.

use std::collections::HashSet;
use std::fmt;

use crate::encoder::{Interner, Sentence, EMPTY_LABEL};
use crate::error::{Error, Result};

/// Separator joining the labels of a collapsed unary chain.
pub const UNARY_JOIN: char = '+';

/// An n-ary phrase-structure tree whose leaves are (POS word) preterminals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tree {
    Leaf { tag: String, word: String },
    Node { label: String, children: Vec<Tree> },
}

/// A labeled span under the fencepost convention: `(start, end)` covers
/// words `start+1 ..= end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledSpan<L> {
    pub start: usize,
    pub end: usize,
    pub label: L,
}

impl<L> LabeledSpan<L> {
    pub fn new(start: usize, end: usize, label: L) -> Self {
        LabeledSpan { start, end, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Atom(String),
}

fn tokenize(s: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut atom = String::new();
    let flush = |atom: &mut String, out: &mut Vec<Token>| {
        if !atom.is_empty() {
            out.push(Token::Atom(std::mem::take(atom)));
        }
    };
    for ch in s.chars() {
        match ch {
            '(' => {
                flush(&mut atom, &mut out);
                out.push(Token::Open);
            }
            ')' => {
                flush(&mut atom, &mut out);
                out.push(Token::Close);
            }
            c if c.is_whitespace() => flush(&mut atom, &mut out),
            c => atom.push(c),
        }
    }
    flush(&mut atom, &mut out);
    out
}

impl Tree {
    /// Parses one S-expression such as `(S (NP (D the) (N cat)) (VP (V sat)))`.
    ///
    /// A wrapper node with an empty label and a single child, as in PTB's
    /// `( (S ...))`, is removed.
    pub fn parse(s: &str) -> std::result::Result<Tree, String> {
        let tokens = tokenize(s);
        let mut pos = 0;
        let tree = parse_node(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err("trailing input after tree".into());
        }
        Ok(match tree {
            Tree::Node { label, mut children } if label.is_empty() && children.len() == 1 => {
                let only = children.pop().expect("one child");
                match only {
                    leaf @ Tree::Leaf { .. } => Tree::Node {
                        label,
                        children: vec![leaf],
                    },
                    node => node,
                }
            }
            t => t,
        })
    }

    pub fn leaves(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a str, &'a str)>) {
        match self {
            Tree::Leaf { tag, word } => out.push((word, tag)),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn sentence(&self) -> Sentence {
        let (words, tags) = self
            .leaves()
            .into_iter()
            .map(|(w, t)| (w.to_string(), t.to_string()))
            .unzip();
        Sentence { words, tags }
    }

    pub fn len(&self) -> usize {
        self.leaves().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All phrase-level spans (preterminals excluded, empty labels
    /// excluded). Each node of a unary chain contributes its own span.
    pub fn labeled_spans(&self) -> Vec<LabeledSpan<String>> {
        let mut out = Vec::new();
        self.spans_from(0, &mut out);
        out
    }

    fn spans_from(&self, start: usize, out: &mut Vec<LabeledSpan<String>>) -> usize {
        match self {
            Tree::Leaf { .. } => start + 1,
            Tree::Node { label, children } => {
                let mut end = start;
                let slot = out.len();
                if !label.is_empty() {
                    out.push(LabeledSpan::new(start, start, label.clone()));
                }
                for c in children {
                    end = c.spans_from(end, out);
                }
                if !label.is_empty() {
                    out[slot].end = end;
                }
                end
            }
        }
    }

    /// Converts to a binary chart tree: unary chains collapse into composite
    /// `A+B` labels, n-ary nodes are right-binarized with empty intermediate
    /// nodes, and uncovered single words become empty-labeled spans.
    /// Labels are interned into `labels`.
    pub fn to_parse_tree(&self, labels: &mut Interner) -> ParseTree {
        let n = self.len();
        let mut spans = Vec::new();
        collapse_and_binarize(self, 0, labels, &mut spans);
        ParseTree { n, spans }
    }

    /// Like [`Tree::to_parse_tree`] but fails on labels missing from
    /// `labels` instead of adding them.
    pub fn to_parse_tree_with(&self, labels: &Interner) -> Result<ParseTree> {
        let mut probe = labels.clone();
        let before = probe.len();
        let tree = self.to_parse_tree(&mut probe);
        if probe.len() != before {
            let unknown: Vec<&str> = probe.iter().skip(before).collect();
            return Err(Error::Vocab(format!("unknown constituency labels {unknown:?}")));
        }
        Ok(tree)
    }
}

/// Phrase node after unary collapsing: composite label and child pieces.
enum Piece<'a> {
    Word,
    Phrase(String, Vec<&'a Tree>),
}

fn collapse(tree: &Tree) -> Piece<'_> {
    match tree {
        Tree::Leaf { .. } => Piece::Word,
        Tree::Node { label, children } => {
            let mut labels = Vec::new();
            if !label.is_empty() {
                labels.push(label.clone());
            }
            let mut kids: Vec<&Tree> = children.iter().collect();
            while kids.len() == 1 {
                match kids[0] {
                    Tree::Node { label, children } => {
                        if !label.is_empty() {
                            labels.push(label.clone());
                        }
                        kids = children.iter().collect();
                    }
                    Tree::Leaf { .. } => break,
                }
            }
            Piece::Phrase(labels.join(&UNARY_JOIN.to_string()), kids)
        }
    }
}

fn width(tree: &Tree) -> usize {
    match tree {
        Tree::Leaf { .. } => 1,
        Tree::Node { children, .. } => children.iter().map(width).sum(),
    }
}

fn collapse_and_binarize(
    tree: &Tree,
    start: usize,
    labels: &mut Interner,
    out: &mut Vec<LabeledSpan<usize>>,
) -> usize {
    match collapse(tree) {
        Piece::Word => {
            out.push(LabeledSpan::new(start, start + 1, EMPTY_LABEL));
            start + 1
        }
        Piece::Phrase(label, kids) => {
            let end = start + kids.iter().map(|k| width(k)).sum::<usize>();
            out.push(LabeledSpan::new(start, end, labels.intern(&label)));
            if kids.len() == 1 {
                // a single preterminal: the phrase span already covers the word
                return end;
            }
            binarize_children(&kids, start, labels, out);
            end
        }
    }
}

fn binarize_children(
    kids: &[&Tree],
    start: usize,
    labels: &mut Interner,
    out: &mut Vec<LabeledSpan<usize>>,
) {
    let first_end = collapse_and_binarize(kids[0], start, labels, out);
    let rest = &kids[1..];
    if rest.len() == 1 {
        collapse_and_binarize(rest[0], first_end, labels, out);
    } else {
        let end = first_end + rest.iter().map(|k| width(k)).sum::<usize>();
        out.push(LabeledSpan::new(first_end, end, EMPTY_LABEL));
        binarize_children(rest, first_end, labels, out);
    }
}

fn parse_node(tokens: &[Token], pos: &mut usize) -> std::result::Result<Tree, String> {
    if tokens.get(*pos) != Some(&Token::Open) {
        return Err("expected '('".into());
    }
    *pos += 1;
    let label = match tokens.get(*pos) {
        Some(Token::Atom(a)) => {
            *pos += 1;
            a.clone()
        }
        Some(Token::Open) => String::new(),
        Some(Token::Close) => return Err("empty node '()'".into()),
        None => return Err("unbalanced brackets: input ends after '('".into()),
    };
    // (TAG word)
    if let Some(Token::Atom(word)) = tokens.get(*pos) {
        let word = word.clone();
        *pos += 1;
        return match tokens.get(*pos) {
            Some(Token::Close) => {
                *pos += 1;
                Ok(Tree::Leaf { tag: label, word })
            }
            _ => Err(format!("preterminal ({label} {word} ...) must hold exactly one word")),
        };
    }
    let mut children = Vec::new();
    loop {
        match tokens.get(*pos) {
            Some(Token::Close) => {
                *pos += 1;
                break;
            }
            Some(Token::Open) => children.push(parse_node(tokens, pos)?),
            Some(Token::Atom(a)) => return Err(format!("unexpected word '{a}' among phrases")),
            None => return Err("unbalanced brackets: missing ')'".into()),
        }
    }
    if children.is_empty() {
        return Err(format!("node '{label}' has no children"));
    }
    Ok(Tree::Node { label, children })
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf { tag, word } => write!(f, "({tag} {word})"),
            Tree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Chart-level tree over label ids; [`EMPTY_LABEL`] marks spans that are
/// not constituents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub n: usize,
    pub spans: Vec<LabeledSpan<usize>>,
}

impl ParseTree {
    /// Validates fencepost bounds, nesting, uniqueness and presence of the
    /// full span.
    pub fn new(n: usize, spans: Vec<LabeledSpan<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("tree over zero words".into()));
        }
        let mut seen = HashSet::new();
        for s in &spans {
            if s.start >= s.end || s.end > n {
                return Err(Error::Input(format!("span ({}, {}) invalid for n = {n}", s.start, s.end)));
            }
            if !seen.insert((s.start, s.end)) {
                return Err(Error::Input(format!("duplicate span ({}, {})", s.start, s.end)));
            }
        }
        if !seen.contains(&(0, n)) {
            return Err(Error::Input(format!("full span (0, {n}) missing")));
        }
        for a in &spans {
            for b in &spans {
                let crossing = a.start < b.start && b.start < a.end && a.end < b.end;
                if crossing {
                    return Err(Error::Input(format!(
                        "crossing brackets ({}, {}) and ({}, {})",
                        a.start, a.end, b.start, b.end
                    )));
                }
            }
        }
        Ok(ParseTree { n, spans })
    }

    /// Whether every multi-word span has exactly two child spans that
    /// partition it, and every word has a span.
    pub fn is_binary(&self) -> bool {
        let set: HashSet<(usize, usize)> = self.spans.iter().map(|s| (s.start, s.end)).collect();
        if set.len() != 2 * self.n - 1 {
            return false;
        }
        self.spans.iter().all(|s| {
            s.end - s.start == 1
                || (s.start + 1..s.end)
                    .filter(|&k| set.contains(&(s.start, k)) && set.contains(&(k, s.end)))
                    .count()
                    == 1
        })
    }

    /// Non-empty labeled spans.
    pub fn labeled(&self) -> impl Iterator<Item = &LabeledSpan<usize>> {
        self.spans.iter().filter(|s| s.label != EMPTY_LABEL)
    }

    /// Phrase-level spans with string labels, composite labels expanded.
    pub fn labeled_spans(&self, labels: &Interner) -> Vec<LabeledSpan<String>> {
        let mut out = Vec::new();
        for s in self.labeled() {
            for part in labels.name(s.label).split(UNARY_JOIN) {
                out.push(LabeledSpan::new(s.start, s.end, part.to_string()));
            }
        }
        out
    }

    /// Rebuilds an n-ary tree over `sentence`, dropping empty spans and
    /// expanding composite labels into unary chains. An empty-labeled root
    /// is kept as an unlabeled wrapper node.
    pub fn to_tree(&self, sentence: &Sentence, labels: &Interner) -> Result<Tree> {
        if sentence.len() != self.n {
            return Err(Error::Alignment(format!(
                "tree over {} words, sentence has {}",
                self.n,
                sentence.len()
            )));
        }
        let mut spans: Vec<&LabeledSpan<usize>> = self.labeled().collect();
        spans.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
        let mut pos = 0;
        let mut idx = 0;
        let children = build_children(&spans, &mut idx, &mut pos, self.n, sentence, labels);
        let root_is_full = spans.first().is_some_and(|s| s.start == 0 && s.end == self.n);
        if root_is_full && children.len() == 1 {
            return Ok(children.into_iter().next().expect("root"));
        }
        Ok(Tree::Node {
            label: String::new(),
            children,
        })
    }
}

fn build_children(
    spans: &[&LabeledSpan<usize>],
    idx: &mut usize,
    pos: &mut usize,
    end: usize,
    sentence: &Sentence,
    labels: &Interner,
) -> Vec<Tree> {
    let mut out = Vec::new();
    while *pos < end {
        if *idx < spans.len() && spans[*idx].start == *pos && spans[*idx].end <= end {
            let s = spans[*idx];
            *idx += 1;
            let inner = build_children(spans, idx, pos, s.end, sentence, labels);
            let mut node_children = inner;
            let name = labels.name(s.label);
            for part in name.rsplit(UNARY_JOIN) {
                node_children = vec![Tree::Node {
                    label: part.to_string(),
                    children: node_children,
                }];
            }
            out.extend(node_children);
        } else {
            out.push(Tree::Leaf {
                tag: sentence.tags[*pos].clone(),
                word: sentence.words[*pos].clone(),
            });
            *pos += 1;
        }
    }
    out
}
