//! Gradient-free entry points: full and soft forward passes, incremental
//! decoding with a key/value cache, sequence log-probabilities and
//! discriminator scores.

use std::sync::Arc;

use crate::autodiff::{log_softmax_rows, softmax_in_place, Scalar, Tape, Tensor, Var};
use crate::corpus::{LMSequence, StyleScorer, SEP};
use crate::error::{Error, Result};

use super::graph::{Bound, EmbedInput, TapeCache};
use super::{ModelConfig, Parameters};

const CHUNK: usize = 64;

/// Per-position logits and final hidden states of one sequence.
#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Scalar> {
    pub logits: Tensor<T>,
    pub hidden: Tensor<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    /// Next-token distribution after position `t`.
    pub fn distribution(&self, t: usize) -> Vec<T> {
        let mut row = self.logits.row(t).to_vec();
        softmax_in_place(&mut row);
        row
    }
}

fn check_len(config: &ModelConfig, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Shape("empty input sequence".into()));
    }
    if n > config.max_seq_len {
        return Err(Error::Shape(format!(
            "sequence of {n} exceeds max_seq_len {}",
            config.max_seq_len
        )));
    }
    Ok(())
}

struct Pass<T: Scalar> {
    tape: Tape<T>,
    bound: Bound,
    hidden: Var,
    logits: Var,
}

fn forward_input<T: Scalar>(params: &Parameters<T>, input: DiscInput<'_, T>) -> Result<Pass<T>> {
    let cfg = params.config();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let mut cache = TapeCache::new(cfg, 1, None);
    let hidden = match input {
        DiscInput::Ids(ids) => {
            check_len(cfg, ids.len())?;
            bound.run(&mut tape, EmbedInput::Ids(ids), &mut cache, ids.len())?
        }
        DiscInput::Soft(x) => {
            check_len(cfg, x.rows())?;
            check_soft(x, cfg.vocab_size)?;
            let xv = tape.constant(x.clone());
            bound.run(&mut tape, EmbedInput::Soft(xv), &mut cache, x.rows())?
        }
    };
    let logits = bound.logits(&mut tape, hidden)?;
    Ok(Pass {
        tape,
        bound,
        hidden,
        logits,
    })
}

pub(crate) fn check_soft<T: Scalar>(x: &Tensor<T>, vocab: usize) -> Result<()> {
    if x.cols() != vocab {
        return Err(Error::Shape(format!("soft input width {} != |V| {vocab}", x.cols())));
    }
    for r in 0..x.rows() {
        let row = x.row(r);
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-5 || row.iter().any(|v| !(v.as_f64() >= 0.0)) {
            return Err(Error::Data(format!(
                "soft input row {r} is not a distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Causal pass over one token sequence.
pub fn forward_full<T: Scalar>(params: &Parameters<T>, ids: &[usize]) -> Result<ForwardOutput<T>> {
    let p = forward_input(params, DiscInput::Ids(ids))?;
    Ok(ForwardOutput {
        logits: p.tape.value(p.logits).clone(),
        hidden: p.tape.value(p.hidden).clone(),
    })
}

/// Causal pass where step `t` is embedded as `x_t E` for a probability row `x_t`.
pub fn forward_soft<T: Scalar>(params: &Parameters<T>, soft: &Tensor<T>) -> Result<ForwardOutput<T>> {
    let p = forward_input(params, DiscInput::Soft(soft))?;
    Ok(ForwardOutput {
        logits: p.tape.value(p.logits).clone(),
        hidden: p.tape.value(p.hidden).clone(),
    })
}

/// Cached per-layer keys and values for a batch of sequences.
#[derive(Clone, Debug)]
pub struct KvCache<T: Scalar> {
    config: ModelConfig,
    layers: Vec<(Arc<Tensor<T>>, Arc<Tensor<T>>)>,
    len: usize,
    batch: usize,
    key_start: Option<Vec<usize>>,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(config: &ModelConfig, batch: usize) -> Self {
        KvCache {
            config: *config,
            layers: Vec::new(),
            len: 0,
            batch,
            key_start: None,
        }
    }

    /// Number of cached steps, the same for every layer.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Cached keys of `layer`, `batch * len x d_c`.
    pub fn keys(&self, layer: usize) -> Option<&Tensor<T>> {
        self.layers.get(layer).map(|(k, _)| &**k)
    }

    /// Replicates each sequence `n` times (`b` becomes rows `b*n .. b*n+n`).
    pub fn repeat_each(&self, n: usize) -> Result<Self> {
        let rep = |t: &Tensor<T>| -> Result<Arc<Tensor<T>>> {
            let per = self.len;
            let d = t.cols();
            let mut data = Vec::with_capacity(t.len() * n);
            for b in 0..self.batch {
                let block = &t.data()[b * per * d..(b + 1) * per * d];
                for _ in 0..n {
                    data.extend_from_slice(block);
                }
            }
            Ok(Arc::new(Tensor::from_vec(self.batch * n * per, d, data)?))
        };
        let layers = self
            .layers
            .iter()
            .map(|(k, v)| Ok((rep(k)?, rep(v)?)))
            .collect::<Result<Vec<_>>>()?;
        let key_start = self
            .key_start
            .as_ref()
            .map(|s| s.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect());
        Ok(KvCache {
            config: self.config,
            layers,
            len: self.len,
            batch: self.batch * n,
            key_start,
        })
    }
}

/// Runs `tq` new steps per sequence through the cache; returns `batch * tq` logit rows.
fn run_cached<T: Scalar>(
    params: &Parameters<T>,
    cache: &mut KvCache<T>,
    ids: &[usize],
    tq: usize,
) -> Result<Tensor<T>> {
    let cfg = params.config();
    if cache.config != *cfg {
        return Err(Error::Shape("key/value cache was built for a different model".into()));
    }
    if ids.len() != cache.batch * tq {
        return Err(Error::Shape(format!(
            "{} ids for a cache of batch {}",
            ids.len(),
            cache.batch
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let layers = if cache.layers.is_empty() {
        vec![None; cfg.num_layers]
    } else {
        cache
            .layers
            .iter()
            .map(|(k, v)| {
                Some((
                    tape.leaf_shared(Arc::clone(k), false),
                    tape.leaf_shared(Arc::clone(v), false),
                ))
            })
            .collect()
    };
    let mut tc = TapeCache::from_parts(layers, cache.len, cache.batch, cache.key_start.clone());
    let hidden = bound.run(&mut tape, EmbedInput::Ids(ids), &mut tc, tq)?;
    let logits = bound.logits(&mut tape, hidden)?;
    cache.layers = (0..cfg.num_layers)
        .map(|l| {
            let (k, v) = tc.layer(l).expect("every layer ran");
            (tape.value_arc(k), tape.value_arc(v))
        })
        .collect();
    cache.len = tc.len();
    Ok(tape.value(logits).clone())
}

/// Feeds left-padded contexts into a fresh cache and returns it with the
/// next-token logits after each context (`batch x |V|`).
pub fn prefill<T: Scalar>(params: &Parameters<T>, contexts: &[&[usize]]) -> Result<(KvCache<T>, Tensor<T>)> {
    let cfg = params.config();
    let t = contexts.iter().map(|c| c.len()).max().unwrap_or(0);
    if contexts.iter().any(|c| c.is_empty()) {
        return Err(Error::Shape("empty context".into()));
    }
    check_len(cfg, t)?;
    let mut ids = Vec::with_capacity(contexts.len() * t);
    let mut starts = Vec::with_capacity(contexts.len());
    for c in contexts {
        let pad = t - c.len();
        starts.push(pad);
        ids.extend(std::iter::repeat_n(crate::corpus::PAD, pad));
        ids.extend_from_slice(c);
    }
    let mut cache = KvCache::new(cfg, contexts.len());
    cache.key_start = starts.iter().any(|&s| s > 0).then_some(starts);
    let logits = run_cached(params, &mut cache, &ids, t)?;
    let v = cfg.vocab_size;
    let mut last = Tensor::zeros(contexts.len(), v);
    for b in 0..contexts.len() {
        last.row_mut(b).copy_from_slice(logits.row(b * t + t - 1));
    }
    Ok((cache, last))
}

/// One decoding step for every sequence in the cache; returns `batch x |V|` logits.
pub fn step_batch<T: Scalar>(params: &Parameters<T>, ids: &[usize], cache: &mut KvCache<T>) -> Result<Tensor<T>> {
    run_cached(params, cache, ids, 1)
}

/// Incremental step for a single sequence: appends `token` and returns the
/// next-token distribution.
pub fn forward_step<T: Scalar>(params: &Parameters<T>, token: usize, cache: &mut KvCache<T>) -> Result<Vec<T>> {
    if cache.batch != 1 {
        return Err(Error::Shape("forward_step expects a single-sequence cache".into()));
    }
    let logits = run_cached(params, cache, &[token], 1)?;
    let mut row = logits.into_data();
    softmax_in_place(&mut row);
    Ok(row)
}

/// Sum of log next-token probabilities over the masked positions of `seq`.
pub fn sequence_logprob<T: Scalar>(params: &Parameters<T>, seq: &LMSequence) -> Result<f64> {
    Ok(sequence_logprobs(params, &[seq])?[0])
}

/// Batched [`sequence_logprob`].
pub fn sequence_logprobs<T: Scalar>(params: &Parameters<T>, seqs: &[&LMSequence]) -> Result<Vec<f64>> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(CHUNK) {
        for s in chunk {
            check_len(cfg, s.len())?;
        }
        let ids: Vec<&[usize]> = chunk.iter().map(|s| s.ids.as_slice()).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let (hidden, t) = bound.run_padded(&mut tape, &ids)?;
        let mut rows = Vec::new();
        let mut picks = Vec::new();
        for (b, s) in chunk.iter().enumerate() {
            for i in 1..s.len() {
                if s.loss_mask[i] {
                    picks.push((b, rows.len(), s.ids[i]));
                    rows.push(b * t + i - 1);
                }
            }
        }
        let mut lps = vec![0.0; chunk.len()];
        if !rows.is_empty() {
            let picked = tape.gather(hidden, &rows)?;
            let logits = bound.logits(&mut tape, picked)?;
            let logp = log_softmax_rows(tape.value(logits));
            for (b, r, id) in picks {
                lps[b] += logp.get(r, id).as_f64();
            }
        }
        out.extend(lps);
    }
    Ok(out)
}

/// Discriminator input: exact token ids or soft one-hot rows.
#[derive(Clone, Copy, Debug)]
pub enum DiscInput<'a, T: Scalar> {
    Ids(&'a [usize]),
    Soft(&'a Tensor<T>),
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(W_d · mean_t o_t + b)` over every position of the input.
pub fn discriminator_score<T: Scalar>(params: &Parameters<T>, input: DiscInput<'_, T>) -> Result<f64> {
    let mut p = forward_input(params, input)?;
    let n = p.tape.value(p.hidden).rows();
    let z = p.bound.disc_logits(&mut p.tape, p.hidden, vec![(0, n)])?;
    Ok(sigmoid(p.tape.value(z).item().as_f64()))
}

/// Batched [`discriminator_score`] over exact token sequences.
pub fn discriminator_scores<T: Scalar>(params: &Parameters<T>, seqs: &[&[usize]]) -> Result<Vec<f64>> {
    Ok(discriminator_logits(params, seqs)?.into_iter().map(sigmoid).collect())
}

/// Pre-sigmoid discriminator outputs `W_d · mean_t o_t + b`.
pub fn discriminator_logits<T: Scalar>(params: &Parameters<T>, seqs: &[&[usize]]) -> Result<Vec<f64>> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(CHUNK) {
        for s in chunk {
            check_len(cfg, s.len())?;
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let (hidden, t) = bound.run_padded(&mut tape, chunk)?;
        let groups = chunk.iter().enumerate().map(|(b, s)| (b * t, s.len())).collect();
        let z = bound.disc_logits(&mut tape, hidden, groups)?;
        out.extend(tape.value(z).data().iter().map(|z| z.as_f64()));
    }
    Ok(out)
}

/// Scores a response as the discriminator sees it during training: the
/// tokens followed by `SEP`.
pub fn disc_sequence(tokens: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(tokens.len() + 1);
    s.extend_from_slice(tokens);
    s.push(SEP);
    s
}

impl<T: Scalar> StyleScorer for Parameters<T> {
    fn style_scores(&self, seqs: &[&[usize]]) -> Result<Vec<f64>> {
        let owned: Vec<Vec<usize>> = seqs.iter().map(|s| disc_sequence(s)).collect();
        let refs: Vec<&[usize]> = owned.iter().map(Vec::as_slice).collect();
        discriminator_scores(self, &refs)
    }
}
