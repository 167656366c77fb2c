//! Checkpoint files.
//!
//! ```text
//! ckpt-v1
//! config vocab_size=.. embed_dim=.. hidden_dim=.. num_layers=.. num_heads=.. max_seq_len=..
//! meta key=value ...
//! tensors <n>
//! <n x (u32 name_len, name, u32 rows, u32 cols, rows*cols f32 LE)>
//! <u64 LE FNV-1a of all preceding bytes> <u64 LE byte count of all preceding bytes>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::{Precision, Tensor};
use crate::error::{Error, Result};

use super::{ModelConfig, Parameters};

const MAGIC: &str = "ckpt-v1";

/// Free-form `key=value` annotations stored with a checkpoint.
pub type CheckpointMeta = BTreeMap<String, String>;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn config_line(c: &ModelConfig) -> String {
    format!(
        "config vocab_size={} embed_dim={} hidden_dim={} num_layers={} num_heads={} max_seq_len={}",
        c.vocab_size, c.embed_dim, c.hidden_dim, c.num_layers, c.num_heads, c.max_seq_len
    )
}

pub fn save_checkpoint(params: &Parameters<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(MAGIC.as_bytes());
    body.push(b'\n');
    body.extend_from_slice(config_line(params.config()).as_bytes());
    body.push(b'\n');
    let mut meta_line = String::from("meta");
    for (k, v) in meta {
        if k.is_empty() || k.contains(['=', ' ', '\n']) || v.contains([' ', '\n']) {
            return Err(Error::Data(format!(
                "checkpoint meta entry {k:?}={v:?} must be space-free"
            )));
        }
        meta_line.push_str(&format!(" {k}={v}"));
    }
    body.extend_from_slice(meta_line.as_bytes());
    body.push(b'\n');
    body.extend_from_slice(format!("tensors {}\n", params.len()).as_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        body.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&body);
    let len = body.len() as u64;
    body.extend_from_slice(&sum.to_le_bytes());
    body.extend_from_slice(&len.to_le_bytes());
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &body).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CheckpointCorrupt {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.corrupt("unterminated header line"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| self.corrupt("header is not UTF-8"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt("unexpected end of tensor data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

fn parse_config(line: &str, r: &Reader<'_>) -> Result<ModelConfig> {
    let rest = line
        .strip_prefix("config ")
        .ok_or_else(|| r.corrupt("missing config line"))?;
    let mut kv = BTreeMap::new();
    for item in rest.split_whitespace() {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| r.corrupt(format!("bad config item {item:?}")))?;
        let v: usize = v.parse().map_err(|_| r.corrupt(format!("bad config value {item:?}")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| r.corrupt(format!("config lacks {k}")));
    Ok(ModelConfig {
        vocab_size: get("vocab_size")?,
        embed_dim: get("embed_dim")?,
        hidden_dim: get("hidden_dim")?,
        num_layers: get("num_layers")?,
        num_heads: get("num_heads")?,
        max_seq_len: get("max_seq_len")?,
        precision: Precision::F32,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(Parameters<f32>, CheckpointMeta)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let first = buf.split(|&b| b == b'\n').next().unwrap_or(&[]);
    let first = String::from_utf8_lossy(first);
    if first != MAGIC {
        if first.starts_with("ckpt-") {
            return Err(Error::CheckpointVersion {
                found: first.into_owned(),
                expected: MAGIC,
            });
        }
        return Err(Error::CheckpointCorrupt {
            path: path.to_path_buf(),
            reason: "missing ckpt header".into(),
        });
    }
    let corrupt = |reason: &str| Error::CheckpointCorrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if buf.len() < 16 {
        return Err(corrupt("file too short"));
    }
    let body_len = buf.len() - 16;
    let sum = u64::from_le_bytes(buf[body_len..body_len + 8].try_into().expect("8 bytes"));
    let len = u64::from_le_bytes(buf[body_len + 8..].try_into().expect("8 bytes"));
    if len != body_len as u64 {
        return Err(corrupt("length trailer does not match file size (truncated?)"));
    }
    if fnv1a(&buf[..body_len]) != sum {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader {
        buf: &buf[..body_len],
        pos: 0,
        path,
    };
    r.line()?;
    let config = parse_config(r.line()?, &r)?;
    let meta_line = r.line()?;
    let meta_rest = meta_line
        .strip_prefix("meta")
        .ok_or_else(|| r.corrupt("missing meta line"))?;
    let mut meta = CheckpointMeta::new();
    for item in meta_rest.split_whitespace() {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| r.corrupt(format!("bad meta item {item:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let n: usize = r
        .line()?
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| r.corrupt("missing tensor count"))?;
    let mut named = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.corrupt("tensor name is not UTF-8"))?
            .to_string();
        let rows = r.u32()?;
        let cols = r.u32()?;
        let bytes = r.take(rows * cols * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        named.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    if r.pos != body_len {
        return Err(r.corrupt("trailing bytes after tensors"));
    }
    let params = Parameters::from_named(config, named)?;
    Ok((params, meta))
}

/// Loads a checkpoint and checks it was built for a vocabulary of `vocab_size`.
pub fn load_checkpoint_with_vocab(path: &Path, vocab_size: usize) -> Result<(Parameters<f32>, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    if params.config().vocab_size != vocab_size {
        return Err(Error::CheckpointShape(format!(
            "{} was trained with |V| = {}, active vocabulary has {vocab_size}",
            path.display(),
            params.config().vocab_size
        )));
    }
    Ok((params, meta))
}
