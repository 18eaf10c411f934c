//! Tab-separated dependency files: `index  word  POS  head  label`, one
//! token per line, blank line between sentences. Lines starting with `#`
//! are comments.

use std::fmt::Write as _;

use super::DepArcs;
use crate::encoder::Sentence;
use crate::error::{Error, Result};

/// One sentence from a dependency file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepSentence {
    pub sentence: Sentence,
    pub arcs: DepArcs,
    /// 1-based line number of the first token.
    pub line: usize,
}

pub fn parse_conll(text: &str) -> Result<Vec<DepSentence>> {
    let mut out = Vec::new();
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut heads = Vec::new();
    let mut labels = Vec::new();
    let mut first_line = 0;

    let mut flush = |words: &mut Vec<String>,
                     tags: &mut Vec<String>,
                     heads: &mut Vec<usize>,
                     labels: &mut Vec<String>,
                     first_line: usize|
     -> Result<()> {
        if words.is_empty() {
            return Ok(());
        }
        let arcs = DepArcs {
            heads: std::mem::take(heads),
            labels: std::mem::take(labels),
        };
        arcs.validate()
            .map_err(|e| Error::parse(first_line, format!("invalid dependency tree: {e}")))?;
        out.push(DepSentence {
            sentence: Sentence {
                words: std::mem::take(words),
                tags: std::mem::take(tags),
            },
            arcs,
            line: first_line,
        });
        Ok(())
    };

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut words, &mut tags, &mut heads, &mut labels, first_line)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(line_no, format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let index: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad token index '{}'", cols[0])))?;
        if index != words.len() + 1 {
            return Err(Error::parse(line_no, format!("token index {index}, expected {}", words.len() + 1)));
        }
        let head: usize = cols[3]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad head index '{}'", cols[3])))?;
        if words.is_empty() {
            first_line = line_no;
        }
        words.push(cols[1].to_string());
        tags.push(cols[2].to_string());
        heads.push(head);
        labels.push(cols[4].to_string());
    }
    flush(&mut words, &mut tags, &mut heads, &mut labels, first_line)?;
    Ok(out)
}

pub fn write_conll(sentence: &Sentence, arcs: &DepArcs) -> String {
    let mut s = String::new();
    for i in 0..sentence.len() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            i + 1,
            sentence.words[i],
            sentence.tags[i],
            arcs.heads[i],
            arcs.labels[i]
        );
    }
    s
}
