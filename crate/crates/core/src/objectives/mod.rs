//! Fine-tuning losses: word-level KL toward a frozen style LM, the
//! sentence-level discriminator loss over a Gumbel-softmax rollout, NLL, and
//! their weighted sum.
//!
//! Value-level functions (`word_level_loss`, `gumbel_softmax`, ...) work on
//! plain numbers; the `*_term` functions build the same quantities on a tape
//! so training can differentiate them.

mod rollout;


use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{log_softmax_rows, Scalar, Tape, Tensor, Var};
use crate::corpus::{make_style_sequence, LMSequence};
use crate::error::{Error, Result};
use crate::model::{sequence_logprob, Bound, Parameters};

pub use rollout::{rollout_on_tape, rollout_soft, sentence_level_loss, sentence_level_term, Rollout};

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_w: f64,
    pub lambda_s: f64,
    pub lambda_nll: f64,
}

impl LossWeights {
    /// Defaults tuned for the arXiv-style task.
    pub const ARXIV: LossWeights = LossWeights {
        lambda_w: 0.0005,
        lambda_s: 0.05,
        lambda_nll: 1.0,
    };
    /// Defaults tuned for the Holmes-style task.
    pub const HOLMES: LossWeights = LossWeights {
        lambda_w: 0.005,
        lambda_s: 0.05,
        lambda_nll: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_w", self.lambda_w),
            ("lambda_s", self.lambda_s),
            ("lambda_nll", self.lambda_nll),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::ARXIV
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GumbelConfig {
    pub tau: f64,
    pub max_rollout_len: usize,
    pub seed: u64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            tau: 0.1,
            max_rollout_len: 20,
            seed: 0,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.max_rollout_len == 0 {
            return Err(Error::Config("max_rollout_len must be positive".into()));
        }
        Ok(())
    }
}

/// Next-token distributions of one response, one row per prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistributions {
    rows: Tensor<f64>,
}

impl StepDistributions {
    pub fn new(rows: Tensor<f64>) -> Result<Self> {
        for r in 0..rows.rows() {
            let row = rows.row(r);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Data(format!("step {r} is not a distribution (sum {s})")));
            }
        }
        Ok(StepDistributions { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        StepDistributions::new(Tensor::from_rows(rows)?)
    }

    pub fn steps(&self) -> usize {
        self.rows.rows()
    }

    pub fn rows(&self) -> &Tensor<f64> {
        &self.rows
    }
}

/// `sum_i KL(p_i || q_i)` in nats.
pub fn word_level_loss(p: &StepDistributions, q: &StepDistributions) -> Result<f64> {
    if p.rows.shape() != q.rows.shape() {
        return Err(Error::Shape(format!(
            "step distributions {:?} vs {:?}",
            p.rows.shape(),
            q.rows.shape()
        )));
    }
    let mut total = 0.0;
    for r in 0..p.steps() {
        for (&a, &b) in p.rows.row(r).iter().zip(q.rows.row(r)) {
            if a > 0.0 {
                total += a * (a.ln() - b.ln());
            }
        }
    }
    Ok(total)
}

/// `softmax((logits + noise) / tau)`.
pub fn gumbel_softmax(logits: &[f64], tau: f64, noise: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Standard Gumbel draws `-ln(-ln u)` with `u` uniform in the open interval (0, 1).
pub fn gumbel_noise<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            -(-u.ln()).ln()
        })
        .collect()
}

/// Negative log-likelihood of the masked positions of `seq`.
pub fn nll_loss<T: Scalar>(params: &Parameters<T>, seq: &LMSequence) -> Result<f64> {
    Ok(-sequence_logprob(params, seq)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_w: f64,
    pub l_s: f64,
    pub l_nll: f64,
    pub total: f64,
}

pub fn total_loss(l_w: f64, l_s: f64, l_nll: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in [("l_w", l_w), ("l_s", l_s), ("l_nll", l_nll)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is {v}")));
        }
    }
    let total = weights.lambda_w * l_w + weights.lambda_s * l_s + weights.lambda_nll * l_nll;
    Ok(LossBreakdown { l_w, l_s, l_nll, total })
}

/// The generator's pass over a batch of conversation sequences.
pub struct LmPass {
    /// One logit row per masked prediction, in batch order.
    pub logits: Var,
    pub targets: Vec<usize>,
    /// Rows of each sequence: `spans[b].0 .. spans[b].0 + spans[b].1`.
    pub spans: Vec<(usize, usize)>,
}

impl LmPass {
    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }
}

/// Runs the model over right-padded `seqs`, projecting only the hidden
/// states that predict a masked token.
pub fn lm_pass<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, seqs: &[&LMSequence]) -> Result<LmPass> {
    let ids: Vec<&[usize]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
    let (hidden, t) = bound.run_padded(tape, &ids)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut spans = Vec::with_capacity(seqs.len());
    for (b, s) in seqs.iter().enumerate() {
        let start = rows.len();
        for i in 1..s.len() {
            if s.loss_mask[i] {
                rows.push(b * t + i - 1);
                targets.push(s.ids[i]);
            }
        }
        spans.push((start, rows.len() - start));
    }
    if rows.is_empty() {
        return Err(Error::Data("batch has no prediction targets".into()));
    }
    let picked = tape.gather(hidden, &rows)?;
    let logits = bound.logits(tape, picked)?;
    Ok(LmPass { logits, targets, spans })
}

/// NLL averaged per masked token.
pub fn nll_term<T: Scalar>(tape: &mut Tape<T>, pass: &LmPass) -> Result<Var> {
    let ls = tape.log_softmax(pass.logits);
    let picks = pass.targets.iter().copied().enumerate().collect();
    let lp = tape.pick_sum(ls, picks)?;
    Ok(tape.scale(lp, T::from_f64(-1.0 / pass.num_targets() as f64)))
}

/// Log next-token rows of the style LM over each response alone
/// (`SEP response SEP`), aligned with the generator's masked rows.
pub fn style_log_probs<T: Scalar>(style: &Parameters<T>, seqs: &[&LMSequence]) -> Result<Tensor<T>> {
    let style_seqs: Vec<LMSequence> = seqs
        .iter()
        .map(|s| make_style_sequence(&s.ids[s.context_len..s.len() - 1]))
        .collect();
    let ids: Vec<&[usize]> = style_seqs.iter().map(|s| s.ids.as_slice()).collect();
    let mut tape = Tape::new();
    let bound = style.bind(&mut tape, false);
    let (hidden, t) = bound.run_padded(&mut tape, &ids)?;
    let logits = bound.logits(&mut tape, hidden)?;
    let full = tape.value(logits);
    let n: usize = style_seqs.iter().map(|s| s.num_targets()).sum();
    let mut sel = Tensor::zeros(n, full.cols());
    let mut r = 0;
    for (b, s) in style_seqs.iter().enumerate() {
        for i in s.context_len..s.len() {
            sel.row_mut(r).copy_from_slice(full.row(b * t + i - 1));
            r += 1;
        }
    }
    Ok(log_softmax_rows(&sel))
}

/// `KL(p_Y || p̂_Y)` averaged per masked token; `log_q` rows come from
/// [`style_log_probs`] and carry no gradient.
pub fn word_level_term<T: Scalar>(tape: &mut Tape<T>, pass: &LmPass, log_q: Tensor<T>) -> Result<Var> {
    let n = pass.num_targets();
    let rows: Vec<usize> = (0..n).collect();
    let kl = tape.kl_rows(pass.logits, &rows, log_q)?;
    Ok(tape.scale(kl, T::from_f64(1.0 / n as f64)))
}

/// Appends one `step, l_w, l_s, l_nll, total` line per logged step.
pub struct TrainLog {
    out: BufWriter<File>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step\tl_w\tl_s\tl_nll\ttotal";

    /// Creates (or truncates) the log and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", Self::HEADER).map_err(|e| Error::io(path, e))?;
        Ok(TrainLog { out })
    }

    pub fn append(&mut self, step: usize, b: &LossBreakdown) -> Result<()> {
        writeln!(
            self.out,
            "{step}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            b.l_w, b.l_s, b.l_nll, b.total
        )
        .and_then(|_| self.out.flush())
        .map_err(|e| Error::io("train_log.tsv", e))
    }
}
