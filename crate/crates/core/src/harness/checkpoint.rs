//! Single-file model checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian u64 header length, the JSON
//! header (config, vocabulary, parameter names and shapes), then for each
//! parameter in declaration order a u64 value count followed by that many
//! little-endian f64 values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parser};

const MAGIC: &[u8; 8] = b"LALPARS1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    params: Vec<(String, Vec<usize>)>,
}

pub fn to_bytes(parser: &Parser) -> Result<Vec<u8>> {
    let header = Header {
        config: parser.config.clone(),
        vocab: parser.vocab.clone(),
        params: parser
            .params
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 16 + 8 * parser.params.count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in parser.params.iter() {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Parser> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a parser checkpoint (bad magic bytes)".into()));
    }
    let len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut blocks = Vec::with_capacity(header.params.len());
    for (name, shape) in &header.params {
        let n = r.u64()? as usize;
        if n != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("block for {name} has {n} values, shape {shape:?}")));
        }
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?;
        blocks.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let parser = Parser::from_parts(header.config, header.vocab, blocks)?;
    for ((_, name, t), (hname, hshape)) in parser.params.iter().zip(&header.params) {
        if name != hname || t.shape() != hshape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {hname} {hshape:?} does not match model layout {name} {:?}",
                t.shape()
            )));
        }
    }
    Ok(parser)
}

pub fn save(parser: &Parser, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_bytes(parser)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Parser> {
    from_bytes(&std::fs::read(path)?)
}
