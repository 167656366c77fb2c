//! Top-k temperature sampling and sample-and-rank response selection.


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Scalar;
use crate::corpus::{make_lm_sequence, ConvPair, LMSequence, StyleScorer, PAD, SEP};
use crate::error::{Error, Result};
use crate::model::{prefill, sequence_logprobs, step_batch, Parameters};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub k: usize,
    pub temperature: f64,
    /// Candidates sampled per context.
    pub num_candidates: usize,
    /// Weight of relevance against intensity when ranking.
    pub beta: f64,
    /// Most tokens sampled per candidate, closing `SEP` included.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k: 40,
            temperature: 1.0,
            num_candidates: 50,
            beta: 0.5,
            max_len: 20,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.k == 0 || self.k > vocab_size {
            return Err(Error::Config(format!(
                "k must lie in [1, {vocab_size}], got {}",
                self.k
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.num_candidates == 0 || self.max_len == 0 {
            return Err(Error::Config("num_candidates and max_len must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// A scored response.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Position in the sampled pool.
    pub index: usize,
    /// Response tokens without the closing `SEP`.
    pub tokens: Vec<usize>,
    /// `exp` of the mean log-probability per predicted token.
    pub relevance: f64,
    pub intensity: f64,
    pub score: f64,
}

/// `beta * relevance + (1 - beta) * intensity`.
pub fn blend_score(relevance: f64, intensity: f64, beta: f64) -> f64 {
    beta * relevance + (1.0 - beta) * intensity
}

/// Samples from `softmax(logits / temperature)` restricted to the `k`
/// largest logits. Ties at the cutoff go to the lower id; `-inf` entries are
/// never drawn.
pub fn sample_logits<R: Rng>(logits: &[f64], k: usize, temperature: f64, rng: &mut R) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    let mut order: Vec<usize> = (0..scaled.len()).filter(|&i| scaled[i] > f64::NEG_INFINITY).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
    order.truncate(k.max(1));
    let Some(&top) = order.first() else {
        return 0;
    };
    let m = scaled[top];
    let w: Vec<f64> = order.iter().map(|&i| (scaled[i] - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&i, &wi) in order.iter().zip(&w) {
        if u < wi {
            return i;
        }
        u -= wi;
    }
    *order.last().expect("non-empty")
}

/// Top-k sampling from a probability vector (logits are its logarithm).
pub fn top_k_sample<R: Rng>(distribution: &[f64], k: usize, temperature: f64, rng: &mut R) -> usize {
    let logits: Vec<f64> = distribution.iter().map(|&p| p.ln()).collect();
    sample_logits(&logits, k, temperature, rng)
}

/// Candidates decoded together. Fixed so each candidate's arithmetic does not
/// depend on the pool size.
const GROUP: usize = 10;

/// Noise stream of candidate `i`.
fn candidate_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Samples `dcfg.num_candidates` responses to `context`. Each sequence ends
/// with `SEP` or stops at `max_len` tokens (fewer if the model's window runs
/// out). `PAD` is never sampled and `SEP` is barred as the first token.
/// Candidate `i` depends only on the seed and `i`, so smaller pools are
/// prefixes of larger ones.
pub fn generate_candidates<T: Scalar>(
    gen: &Parameters<T>,
    context: &[usize],
    dcfg: &DecodeConfig,
) -> Result<Vec<Vec<usize>>> {
    let cfg = gen.config();
    dcfg.validate(cfg.vocab_size)?;
    if context.is_empty() {
        return Err(Error::Data("empty context".into()));
    }
    let mut prompt = context.to_vec();
    prompt.push(SEP);
    let max_len = dcfg.max_len.min(cfg.max_seq_len.saturating_sub(prompt.len()));
    if max_len == 0 {
        return Err(Error::Data(format!(
            "context of {} tokens leaves no room to respond",
            context.len()
        )));
    }
    let (cache, first) = prefill(gen, &[&prompt])?;
    let n = dcfg.num_candidates;
    let mut out = Vec::with_capacity(n);
    for g0 in (0..n).step_by(GROUP) {
        let mut cache = cache.repeat_each(GROUP)?;
        let mut rngs: Vec<ChaCha8Rng> = (g0..g0 + GROUP).map(|i| candidate_rng(dcfg.seed, i)).collect();
        let mut seqs: Vec<Vec<usize>> = vec![Vec::new(); GROUP];
        let mut done = vec![false; GROUP];
        let mut logits: Vec<Vec<f64>> = vec![first.row(0).iter().map(|x| x.as_f64()).collect(); GROUP];
        for step in 0..max_len {
            for c in 0..GROUP {
                if done[c] {
                    continue;
                }
                let row = &mut logits[c];
                row[PAD] = f64::NEG_INFINITY;
                if step == 0 {
                    row[SEP] = f64::NEG_INFINITY;
                }
                let tok = sample_logits(row, dcfg.k, dcfg.temperature, &mut rngs[c]);
                seqs[c].push(tok);
                done[c] = tok == SEP;
            }
            if step + 1 == max_len || done.iter().all(|&d| d) {
                break;
            }
            let ids: Vec<usize> = seqs.iter().map(|s| *s.last().expect("one step taken")).collect();
            let next = step_batch(gen, &ids, &mut cache)?;
            for (c, row) in logits.iter_mut().enumerate() {
                if !done[c] {
                    *row = next.row(c).iter().map(|x| x.as_f64()).collect();
                }
            }
        }
        out.extend(seqs.into_iter().take(n - g0));
    }
    Ok(out)
}

fn strip_sep(seq: &[usize]) -> &[usize] {
    seq.strip_suffix(&[SEP]).unwrap_or(seq)
}

/// Scores every candidate and sorts by descending score; equal scores keep
/// pool order.
pub fn rank_candidates<T: Scalar, S: StyleScorer + ?Sized>(
    candidates: &[Vec<usize>],
    gen: &Parameters<T>,
    disc: &S,
    context: &[usize],
    beta: f64,
) -> Result<Vec<Candidate>> {
    if candidates.is_empty() {
        return Err(Error::Data("no candidates to rank".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    let responses: Vec<&[usize]> = candidates.iter().map(|c| strip_sep(c)).collect();
    let seqs: Vec<LMSequence> = responses
        .iter()
        .map(|r| Ok(make_lm_sequence(&ConvPair::new(context.to_vec(), r.to_vec())?)))
        .collect::<Result<_>>()?;
    let refs: Vec<&LMSequence> = seqs.iter().collect();
    let lps = sequence_logprobs(gen, &refs)?;
    let intensities = disc.style_scores(&responses)?;
    let mut ranked: Vec<Candidate> = responses
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let relevance = (lps[i] / seqs[i].num_targets() as f64).exp();
            Candidate {
                index: i,
                tokens: r.to_vec(),
                relevance,
                intensity: intensities[i],
                score: blend_score(relevance, intensities[i], beta),
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(ranked)
}

/// Best-scoring candidate from a freshly sampled pool.
pub fn respond<T: Scalar, S: StyleScorer + ?Sized>(
    context: &[usize],
    gen: &Parameters<T>,
    disc: &S,
    dcfg: &DecodeConfig,
) -> Result<Candidate> {
    let pool = generate_candidates(gen, context, dcfg)?;
    let ranked = rank_candidates(&pool, gen, disc, context, dcfg.beta)?;
    Ok(ranked.into_iter().next().expect("non-empty pool"))
}
