//! Adam, batching and the optimization loops for the base LM, the style LM,
//! the discriminator and the stylized fine-tune.

mod phases;

#[cfg(test)]
mod tests;

use std::collections::VecDeque;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Scalar, Tensor};
use crate::corpus::LMSequence;
use crate::error::{Error, Result};
use crate::model::{sequence_logprobs, Parameters};
use crate::objectives::{GumbelConfig, LossWeights};

pub use phases::{finetune_style_lm, finetune_styledgpt, pretrain_base_lm, train_discriminator, DiscData};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 5e-7,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        let zeros = || {
            params
                .tensors()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Gradient per parameter tensor; `None` counts as zero.
pub type ParamGrads<T> = Vec<Option<Tensor<T>>>;

fn check_grads<T: Scalar>(params: &Parameters<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} tensors",
            grads.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.shape() != params.tensor(i).shape() {
                return Err(Error::Shape(format!(
                    "gradient of {} has shape {:?}",
                    params.names()[i],
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {}", params.names()[i])));
            }
        }
    }
    Ok(())
}

/// One bias-corrected Adam update, in place. Nothing is modified when a
/// gradient is non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    ocfg: &OptimizerConfig,
) -> Result<()> {
    ocfg.validate()?;
    check_grads(params, grads)?;
    if state.m.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match the parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(ocfg.beta1), T::from_f64(ocfg.beta2));
    let (c1, c2) = (T::from_f64(1.0 - ocfg.beta1), T::from_f64(1.0 - ocfg.beta2));
    let bc1 = T::from_f64(1.0 - ocfg.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - ocfg.beta2.powi(t));
    let lr = T::from_f64(ocfg.learning_rate);
    let eps = T::from_f64(ocfg.epsilon);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        match g {
            Some(g) => {
                let p = params.tensor_mut(i).data_mut();
                for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                    *m = b1 * *m + c1 * g;
                    *v = b2 * *v + c2 * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                }
            }
            None if m.iter().all(|&x| x == T::zero()) => {}
            None => {
                let p = params.tensor_mut(i).data_mut();
                for ((p, m), v) in p.iter_mut().zip(m).zip(v) {
                    *m = b1 * *m;
                    *v = b2 * *v;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> Result<f64> {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data().iter())
        .map(|x| {
            let x = x.as_f64();
            x * x
        })
        .sum();
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    StyleLm,
    Discriminator,
    StyledGpt,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Pretrain, Phase::StyleLm, Phase::Discriminator, Phase::StyledGpt];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::StyleLm => "style_lm",
            Phase::Discriminator => "discriminator",
            Phase::StyledGpt => "styledgpt",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown phase {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Applied on top of `optimizer.learning_rate`.
    pub lr_multiplier: f64,
    pub clip_norm: Option<f64>,
    pub weights: LossWeights,
    pub gumbel: GumbelConfig,
    pub log_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Desk-scale defaults for `phase`.
    pub fn for_phase(phase: Phase) -> Self {
        let from_scratch = OptimizerConfig {
            learning_rate: 3e-4,
            ..OptimizerConfig::default()
        };
        let base = TrainConfig {
            phase,
            batch_size: 32,
            max_steps: 1000,
            eval_interval: 100,
            patience: 5,
            seed: 0,
            optimizer: from_scratch,
            lr_multiplier: 1.0,
            clip_norm: None,
            weights: LossWeights {
                lambda_w: 0.0,
                lambda_s: 0.0,
                lambda_nll: 1.0,
            },
            gumbel: GumbelConfig::default(),
            log_path: None,
        };
        match phase {
            Phase::Pretrain => base,
            Phase::StyleLm => TrainConfig {
                max_steps: 300,
                eval_interval: 50,
                ..base
            },
            Phase::Discriminator => TrainConfig {
                max_steps: 500,
                eval_interval: 50,
                ..base
            },
            Phase::StyledGpt => TrainConfig {
                batch_size: 16,
                max_steps: 300,
                eval_interval: 50,
                optimizer: OptimizerConfig::default(),
                lr_multiplier: 100.0,
                clip_norm: Some(1.0),
                weights: LossWeights::default(),
                ..base
            },
        }
    }

    pub fn effective_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.optimizer.learning_rate * self.lr_multiplier,
            ..self.optimizer
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config("batch_size and eval_interval must be positive".into()));
        }
        if !(self.lr_multiplier > 0.0) || !self.lr_multiplier.is_finite() {
            return Err(Error::Config(format!(
                "lr_multiplier must be > 0, got {}",
                self.lr_multiplier
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        self.effective_optimizer().validate()?;
        self.weights.validate()?;
        self.gumbel.validate()
    }
}

/// What a training run did.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub steps_run: usize,
    /// Step whose parameters were returned (0 = the starting point).
    pub best_step: usize,
    pub best_val: f64,
    /// `(step, validation loss)` for every evaluation, step 0 included.
    pub evals: Vec<(usize, f64)>,
    pub stopped_early: bool,
    /// Training loss of every step.
    pub train_losses: Vec<f64>,
    /// Discriminator phase only: accuracy of the returned parameters.
    pub val_accuracy: Option<f64>,
}

/// Endless stream of index batches. Each pass shuffles the data, sorts
/// windows of consecutive batches by length to cut padding, then shuffles
/// the batch order.
pub(crate) struct BatchPlan {
    lens: Vec<usize>,
    batch: usize,
    rng: ChaCha8Rng,
    queue: VecDeque<Vec<usize>>,
}

const SORT_WINDOW: usize = 16;

impl BatchPlan {
    pub(crate) fn new(lens: Vec<usize>, batch: usize, seed: u64) -> Self {
        BatchPlan {
            lens,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: VecDeque::new(),
        }
    }

    fn refill(&mut self) {
        let mut order: Vec<usize> = (0..self.lens.len()).collect();
        order.shuffle(&mut self.rng);
        let mut batches = Vec::new();
        for window in order.chunks_mut(self.batch * SORT_WINDOW) {
            window.sort_by_key(|&i| self.lens[i]);
            batches.extend(window.chunks(self.batch).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut self.rng);
        self.queue.extend(batches);
    }
}

impl Iterator for BatchPlan {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.lens.is_empty() {
            return None;
        }
        if self.queue.is_empty() {
            self.refill();
        }
        self.queue.pop_front()
    }
}

/// `exp` of the mean NLL per masked token.
pub fn evaluate_perplexity<T: Scalar>(params: &Parameters<T>, dataset: &[LMSequence]) -> Result<f64> {
    Ok(mean_nll(params, dataset)?.exp())
}

pub(crate) fn mean_nll<T: Scalar>(params: &Parameters<T>, dataset: &[LMSequence]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("perplexity needs a non-empty dataset".into()));
    }
    let refs: Vec<&LMSequence> = dataset.iter().collect();
    let lps = sequence_logprobs(params, &refs)?;
    let n: usize = dataset.iter().map(LMSequence::num_targets).sum();
    let nll = -lps.iter().sum::<f64>() / n as f64;
    if !nll.is_finite() {
        return Err(Error::Numeric(format!("validation NLL is {nll}")));
    }
    Ok(nll)
}

/// Tracks the best validation value and decides when to stop.
pub(crate) struct EarlyStopping<T: Scalar> {
    patience: usize,
    best: Option<(usize, f64, Parameters<T>)>,
    stale: usize,
    evals: Vec<(usize, f64)>,
}

impl<T: Scalar> EarlyStopping<T> {
    pub(crate) fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
            evals: Vec::new(),
        }
    }

    /// Records an evaluation; returns `true` when training should stop.
    pub(crate) fn observe(&mut self, step: usize, val: f64, params: &Parameters<T>) -> Result<bool> {
        if !val.is_finite() {
            return Err(Error::Numeric(format!("validation loss is {val} at step {step}")));
        }
        self.evals.push((step, val));
        match &self.best {
            Some((_, b, _)) if val >= *b => {
                self.stale += 1;
            }
            _ => {
                self.best = Some((step, val, params.clone()));
                self.stale = 0;
            }
        }
        Ok(self.patience > 0 && self.stale >= self.patience)
    }

    pub(crate) fn last_step(&self) -> Option<usize> {
        self.evals.last().map(|e| e.0)
    }

    pub(crate) fn finish(
        self,
        steps_run: usize,
        stopped_early: bool,
        train_losses: Vec<f64>,
    ) -> (Parameters<T>, TrainReport) {
        let (best_step, best_val, params) = self.best.expect("evaluated at least once");
        let report = TrainReport {
            steps_run,
            best_step,
            best_val,
            evals: self.evals,
            stopped_early,
            train_losses,
            val_accuracy: None,
        };
        (params, report)
    }
}
