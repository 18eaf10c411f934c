//! Paired bracket/dependency corpora.

use std::fmt::Write as _;
use std::path::Path;

use crate::constituency::{ParseTree, Tree};
use crate::dependency::{parse_conll, write_conll, DepArcs};
use crate::encoder::{Sentence, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sentence: Sentence,
    pub tree: Tree,
    /// Binarized chart form of `tree` over the treebank vocabulary.
    pub parse: ParseTree,
    pub arcs: DepArcs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Treebank {
    pub examples: Vec<Example>,
    pub vocab: Vocab,
}

impl Treebank {
    /// Builds the vocabulary (first-seen order) and checks that each tree
    /// and arc set agrees with its sentence.
    pub fn from_pairs(pairs: Vec<(Tree, DepArcs)>) -> Result<Self> {
        let mut vocab = Vocab::default();
        let mut examples = Vec::with_capacity(pairs.len());
        for (k, (tree, arcs)) in pairs.into_iter().enumerate() {
            let sentence = tree.sentence();
            if sentence.is_empty() {
                return Err(Error::Input(format!("sentence {} is empty", k + 1)));
            }
            if arcs.len() != sentence.len() {
                return Err(Error::Alignment(format!(
                    "sentence {}: tree has {} words, dependency entry has {}",
                    k + 1,
                    sentence.len(),
                    arcs.len()
                )));
            }
            arcs.validate()?;
            for w in &sentence.words {
                vocab.words.intern(w);
            }
            for t in &sentence.tags {
                vocab.tags.intern(t);
            }
            for l in &arcs.labels {
                vocab.dep_labels.intern(l);
            }
            let chart = tree.to_parse_tree(&mut vocab.labels);
            let parse = ParseTree::new(chart.n, chart.spans)?;
            examples.push(Example {
                sentence,
                tree,
                parse,
                arcs,
            });
        }
        Ok(Treebank { examples, vocab })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One canonical bracketed tree per line.
    pub fn trees_text(&self) -> String {
        let mut s = String::new();
        for e in &self.examples {
            let _ = writeln!(s, "{}", e.tree);
        }
        s
    }

    pub fn conll_text(&self) -> String {
        let mut s = String::new();
        for e in &self.examples {
            s.push_str(&write_conll(&e.sentence, &e.arcs));
            s.push('\n');
        }
        s
    }

    /// Writes `trees.txt` and `deps.conll` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trees.txt"), self.trees_text())?;
        std::fs::write(dir.join("deps.conll"), self.conll_text())?;
        Ok(())
    }
}

/// Splits bracket text into top-level trees, returning each with the line
/// it starts on. Trees may span several lines.
pub fn parse_trees(text: &str) -> Result<Vec<(usize, Tree)>> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut buf = String::new();
    let mut start_line = 0;
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        for ch in line.chars() {
            match ch {
                '(' => {
                    if depth == 0 {
                        start_line = line_no;
                    }
                    depth += 1;
                }
                ')' => {
                    if depth == 0 {
                        return Err(Error::parse(line_no, "unbalanced brackets: unexpected ')'"));
                    }
                    depth -= 1;
                }
                c if depth == 0 && !c.is_whitespace() => {
                    return Err(Error::parse(line_no, format!("text '{c}' outside any tree")));
                }
                _ => {}
            }
            if depth > 0 || ch == ')' {
                buf.push(ch);
            }
            if depth == 0 && ch == ')' {
                let tree = Tree::parse(&buf).map_err(|m| Error::parse(start_line, m))?;
                out.push((start_line, tree));
                buf.clear();
            }
        }
        if depth > 0 {
            buf.push(' ');
        }
    }
    if depth > 0 {
        return Err(Error::parse(start_line, "unbalanced brackets: missing ')'"));
    }
    Ok(out)
}

/// Reads a bracket file and a dependency file describing the same
/// sentences in the same order.
pub fn load_treebank(trees_text: &str, deps_text: &str) -> Result<Treebank> {
    let trees = parse_trees(trees_text)?;
    let deps = parse_conll(deps_text)?;
    if trees.len() != deps.len() {
        return Err(Error::Alignment(format!(
            "{} trees but {} dependency sentences",
            trees.len(),
            deps.len()
        )));
    }
    let mut pairs = Vec::with_capacity(trees.len());
    for ((line, tree), dep) in trees.into_iter().zip(deps) {
        let s = tree.sentence();
        if s.words != dep.sentence.words {
            return Err(Error::Alignment(format!(
                "tree at line {line} and dependency sentence at line {} have different words",
                dep.line
            )));
        }
        pairs.push((tree, dep.arcs));
    }
    Treebank::from_pairs(pairs)
}

pub fn load_treebank_files(trees: &Path, deps: &Path) -> Result<Treebank> {
    let t = std::fs::read_to_string(trees)?;
    let d = std::fs::read_to_string(deps)?;
    load_treebank(&t, &d)
}
