use crate::autodiff::{AttnLayout, Scalar, Tape, Var};
use crate::error::{Error, Result};

use super::*;

/// Parameters placed on a tape, with the helpers that build the forward graph.
///
/// Batches are batch-major: row `b * t + i` holds step `i` of sequence `b`.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    layout: Layout,
    config: ModelConfig,
}

/// Keys and values of every layer accumulated on a tape.
///
/// `key_start[b]` is the first real (non-padding) time step of sequence `b`;
/// positions are counted from there.
#[derive(Clone, Debug)]
pub struct TapeCache {
    layers: Vec<Option<(Var, Var)>>,
    len: usize,
    batch: usize,
    key_start: Option<Vec<usize>>,
}

impl TapeCache {
    pub fn new(config: &ModelConfig, batch: usize, key_start: Option<Vec<usize>>) -> Self {
        TapeCache {
            layers: vec![None; config.num_layers],
            len: 0,
            batch,
            key_start,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn key_start(&self) -> Option<&[usize]> {
        self.key_start.as_deref()
    }

    pub(crate) fn layer(&self, l: usize) -> Option<(Var, Var)> {
        self.layers[l]
    }

    pub(crate) fn from_parts(
        layers: Vec<Option<(Var, Var)>>,
        len: usize,
        batch: usize,
        key_start: Option<Vec<usize>>,
    ) -> Self {
        TapeCache {
            layers,
            len,
            batch,
            key_start,
        }
    }

    fn start(&self, b: usize) -> usize {
        self.key_start.as_ref().map_or(0, |s| s[b])
    }
}

/// Token ids (looked up) or soft one-hot rows (`batch * t x |V|`, multiplied in).
#[derive(Clone, Copy, Debug)]
pub enum EmbedInput<'a> {
    Ids(&'a [usize]),
    Soft(Var),
}

impl Bound {
    pub(crate) fn new(vars: Vec<Var>, layout: Layout, config: ModelConfig) -> Self {
        Bound { vars, layout, config }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn blk(&self, l: usize, k: usize) -> Var {
        self.vars[self.layout.block(l, k)]
    }

    /// Embeds `tq` new steps per sequence, continuing after `cache.len()` cached steps.
    pub fn embed<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        input: EmbedInput<'_>,
        cache: &TapeCache,
        tq: usize,
    ) -> Result<Var> {
        let batch = cache.batch;
        let tok = self.vars[self.layout.tok];
        let e = match input {
            EmbedInput::Ids(ids) => {
                if ids.len() != batch * tq {
                    return Err(Error::Shape(format!(
                        "{} ids for batch {batch} x {tq} steps",
                        ids.len()
                    )));
                }
                tape.gather(tok, ids)?
            }
            EmbedInput::Soft(x) => {
                let v = tape.value(x);
                if v.rows() != batch * tq || v.cols() != self.config.vocab_size {
                    return Err(Error::Shape(format!(
                        "soft input {:?} for batch {batch} x {tq}",
                        v.shape()
                    )));
                }
                tape.matmul(x, tok, false)?
            }
        };
        let e = match self.layout.proj {
            Some(p) => tape.matmul(e, self.vars[p], false)?,
            None => e,
        };
        let end = cache.len + tq;
        if end > self.config.max_seq_len {
            return Err(Error::Shape(format!(
                "sequence of {end} steps exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        let mut positions = Vec::with_capacity(batch * tq);
        for b in 0..batch {
            let s = cache.start(b);
            positions.extend((cache.len..end).map(|t| t.saturating_sub(s)));
        }
        let pos = tape.gather(self.vars[self.layout.pos], &positions)?;
        tape.add(e, pos)
    }

    /// Runs the transformer blocks over `tq` embedded steps and extends `cache`.
    /// Returns the final layer-normed hidden states `o`.
    pub fn blocks<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, cache: &mut TapeCache, tq: usize) -> Result<Var> {
        let d = self.config.hidden_dim;
        let batch = cache.batch;
        let offset = cache.len;
        let mut x = x;
        for l in 0..self.config.num_layers {
            let h = tape.layer_norm(x, self.blk(l, LN1_G), self.blk(l, LN1_B))?;
            let qkv = tape.matmul(h, self.blk(l, W_QKV), false)?;
            let qkv = tape.add_bias(qkv, self.blk(l, B_QKV))?;
            let q = tape.slice_cols(qkv, 0, d)?;
            let k = tape.slice_cols(qkv, d, d)?;
            let v = tape.slice_cols(qkv, 2 * d, d)?;
            let (k, v) = match cache.layers[l] {
                Some((pk, pv)) => (tape.concat_time(&[pk, k], batch)?, tape.concat_time(&[pv, v], batch)?),
                None => (k, v),
            };
            cache.layers[l] = Some((k, v));
            let layout = AttnLayout {
                batch,
                heads: self.config.num_heads,
                tq,
                tk: offset + tq,
                offset,
                key_start: cache.key_start.clone(),
            };
            let a = tape.attention(q, k, v, layout)?;
            let a = tape.matmul(a, self.blk(l, W_PROJ), false)?;
            let a = tape.add_bias(a, self.blk(l, B_PROJ))?;
            x = tape.add(x, a)?;
            let h = tape.layer_norm(x, self.blk(l, LN2_G), self.blk(l, LN2_B))?;
            let f = tape.matmul(h, self.blk(l, W_FC), false)?;
            let f = tape.add_bias(f, self.blk(l, B_FC))?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, self.blk(l, W_FC2), false)?;
            let f = tape.add_bias(f, self.blk(l, B_FC2))?;
            x = tape.add(x, f)?;
        }
        cache.len += tq;
        tape.layer_norm(x, self.vars[self.layout.ln_f], self.vars[self.layout.ln_f + 1])
    }

    /// Embedding followed by the blocks.
    pub fn run<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        input: EmbedInput<'_>,
        cache: &mut TapeCache,
        tq: usize,
    ) -> Result<Var> {
        let x = self.embed(tape, input, cache, tq)?;
        self.blocks(tape, x, cache, tq)
    }

    /// `o W_o^T`: one row of next-token logits per hidden row.
    pub fn logits<T: Scalar>(&self, tape: &mut Tape<T>, hidden: Var) -> Result<Var> {
        tape.matmul(hidden, self.vars[self.layout.out], true)
    }

    /// `W_d · mean(o[group]) + b` for each `(start_row, len)` group, as an `n x 1` column.
    pub fn disc_logits<T: Scalar>(&self, tape: &mut Tape<T>, hidden: Var, groups: Vec<(usize, usize)>) -> Result<Var> {
        let pooled = tape.mean_groups(hidden, groups)?;
        let z = tape.matmul(pooled, self.vars[self.layout.disc_w], true)?;
        tape.add_bias(z, self.vars[self.layout.disc_b])
    }

    /// Full causal pass over right-padded sequences. Returns the hidden states
    /// and the padded length `t`. Padding sits after every real token, so it
    /// never influences real positions.
    pub fn run_padded<T: Scalar>(&self, tape: &mut Tape<T>, seqs: &[&[usize]]) -> Result<(Var, usize)> {
        let t = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if t == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut ids = Vec::with_capacity(seqs.len() * t);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(crate::corpus::PAD, t - s.len()));
        }
        let mut cache = TapeCache::new(&self.config, seqs.len(), None);
        let h = self.run(tape, EmbedInput::Ids(&ids), &mut cache, t)?;
        Ok((h, t))
    }
}
