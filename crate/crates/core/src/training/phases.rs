use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Var};
use crate::corpus::{negative_sample_batches, ConvPair, NegativeRatio, StyleSentence};
use crate::model::{disc_sequence, discriminator_logits, Bound};
use crate::objectives::{
    lm_pass, nll_term, rollout_on_tape, sentence_level_term, style_log_probs, total_loss, word_level_term,
    LossBreakdown, TrainLog,
};

const VAL_CHUNK: usize = 32;

fn take_grads<T: Scalar>(tape: &Tape<T>, bound: &Bound, loss: Var) -> Result<ParamGrads<T>> {
    let mut g = tape.backward(loss)?;
    Ok(bound.vars().iter().map(|&v| g.take(v)).collect())
}

fn open_log(cfg: &TrainConfig) -> Result<Option<TrainLog>> {
    cfg.log_path.as_deref().map(TrainLog::create).transpose()
}

fn update<T: Scalar>(
    params: &mut Parameters<T>,
    mut grads: ParamGrads<T>,
    state: &mut OptimizerState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if let Some(c) = cfg.clip_norm {
        clip_grad_norm(&mut grads, c)?;
    }
    adam_step(params, &grads, state, &cfg.effective_optimizer())
}

fn context_of(s: &LMSequence) -> &[usize] {
    &s.ids[..s.context_len - 1]
}

struct Frozen<'a, T: Scalar> {
    style: Option<&'a Parameters<T>>,
    disc: Option<&'a Parameters<T>>,
}

/// Weighted loss of one batch built on `tape`, with its breakdown. Terms
/// with zero weight are skipped and reported as 0.
fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    batch: &[&LMSequence],
    frozen: &Frozen<'_, T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, LossBreakdown)> {
    let w = cfg.weights;
    let pass = lm_pass(tape, bound, batch)?;
    let nll = nll_term(tape, &pass)?;
    let mut parts = vec![(w.lambda_nll, nll)];
    let mut l_w = 0.0;
    if w.lambda_w > 0.0 {
        let style = frozen
            .style
            .ok_or_else(|| Error::Config("lambda_w > 0 needs a style LM".into()))?;
        let log_q = style_log_probs(style, batch)?;
        let term = word_level_term(tape, &pass, log_q)?;
        l_w = tape.value(term).item().as_f64();
        parts.push((w.lambda_w, term));
    }
    let mut l_s = 0.0;
    if w.lambda_s > 0.0 {
        let disc = frozen
            .disc
            .ok_or_else(|| Error::Config("lambda_s > 0 needs a discriminator".into()))?;
        let d = disc.bind(tape, false);
        let contexts: Vec<&[usize]> = batch.iter().map(|s| context_of(s)).collect();
        let rollout = rollout_on_tape(tape, bound, &contexts, &cfg.gumbel, rng)?;
        let term = sentence_level_term(tape, &d, &rollout)?;
        l_s = tape.value(term).item().as_f64();
        parts.push((w.lambda_s, term));
    }
    let l_nll = tape.value(nll).item().as_f64();
    let breakdown = total_loss(l_w, l_s, l_nll, &w)?;
    let mut total: Option<Var> = None;
    for (lambda, term) in parts {
        if lambda == 0.0 {
            continue;
        }
        let scaled = if lambda == 1.0 {
            term
        } else {
            tape.scale(term, T::from_f64(lambda))
        };
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let total = total.ok_or_else(|| Error::Config("every loss weight is zero".into()))?;
    Ok((total, breakdown))
}

fn rollout_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Weighted validation loss. Rollouts use fixed noise streams so the value
/// only changes with the parameters.
fn generator_val<T: Scalar>(
    params: &Parameters<T>,
    val: &[LMSequence],
    frozen: &Frozen<'_, T>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let w = cfg.weights;
    let mut total = w.lambda_nll * mean_nll(params, val)?;
    if w.lambda_w > 0.0 || w.lambda_s > 0.0 {
        let (mut kl, mut ntok, mut ls) = (0.0, 0usize, 0.0);
        for (i, chunk) in val.chunks(VAL_CHUNK).enumerate() {
            let refs: Vec<&LMSequence> = chunk.iter().collect();
            let inner = TrainConfig {
                weights: LossWeights { lambda_nll: 1.0, ..w },
                ..cfg.clone()
            };
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let mut rng = rollout_rng(cfg.gumbel.seed, u64::MAX - i as u64);
            let (_, b) = batch_loss(&mut tape, &bound, &refs, frozen, &inner, &mut rng)?;
            let n: usize = chunk.iter().map(LMSequence::num_targets).sum();
            kl += b.l_w * n as f64;
            ntok += n;
            ls += b.l_s * chunk.len() as f64;
        }
        total += w.lambda_w * kl / ntok as f64 + w.lambda_s * ls / val.len() as f64;
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("validation loss is {total}")));
    }
    Ok(total)
}

fn generator_loop<T: Scalar>(
    train: &[LMSequence],
    val: &[LMSequence],
    init: &Parameters<T>,
    frozen: Frozen<'_, T>,
    cfg: &TrainConfig,
) -> Result<(Parameters<T>, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let mut params = init.clone();
    let mut state = OptimizerState::new(&params);
    let mut plan = BatchPlan::new(train.iter().map(LMSequence::len).collect(), cfg.batch_size, cfg.seed);
    let mut log = open_log(cfg)?;
    let mut stop = EarlyStopping::new(cfg.patience);
    stop.observe(0, generator_val(&params, val, &frozen, cfg)?, &params)?;
    let mut losses = Vec::new();
    let mut stopped = false;
    for step in 1..=cfg.max_steps {
        let idx = plan.next().expect("non-empty training set");
        let batch: Vec<&LMSequence> = idx.iter().map(|&i| &train[i]).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let mut rng = rollout_rng(cfg.gumbel.seed, step as u64);
        let (loss, breakdown) = batch_loss(&mut tape, &bound, &batch, &frozen, cfg, &mut rng)?;
        let grads = take_grads(&tape, &bound, loss)?;
        drop(tape);
        update(&mut params, grads, &mut state, cfg)?;
        if let Some(log) = log.as_mut() {
            log.append(step, &breakdown)?;
        }
        losses.push(breakdown.total);
        if step % cfg.eval_interval == 0 && stop.observe(step, generator_val(&params, val, &frozen, cfg)?, &params)? {
            stopped = true;
            break;
        }
    }
    let steps_run = losses.len();
    if stop.last_step() != Some(steps_run) {
        stop.observe(steps_run, generator_val(&params, val, &frozen, cfg)?, &params)?;
    }
    Ok(stop.finish(steps_run, stopped, losses))
}

fn nll_only(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        weights: LossWeights {
            lambda_w: 0.0,
            lambda_s: 0.0,
            lambda_nll: 1.0,
        },
        ..cfg.clone()
    }
}

/// Trains a conditional LM on conversation sequences starting from `init`.
/// Returns the parameters with the best validation NLL.
pub fn pretrain_base_lm<T: Scalar>(
    train: &[LMSequence],
    val: &[LMSequence],
    init: &Parameters<T>,
    cfg: &TrainConfig,
) -> Result<(Parameters<T>, TrainReport)> {
    let frozen = Frozen {
        style: None,
        disc: None,
    };
    generator_loop(train, val, init, frozen, &nll_only(cfg))
}

/// Fine-tunes `base` into an unconditional LM over style sequences
/// (see [`crate::corpus::make_style_sequence`]).
pub fn finetune_style_lm<T: Scalar>(
    train: &[LMSequence],
    val: &[LMSequence],
    base: &Parameters<T>,
    cfg: &TrainConfig,
) -> Result<(Parameters<T>, TrainReport)> {
    let frozen = Frozen {
        style: None,
        disc: None,
    };
    generator_loop(train, val, base, frozen, &nll_only(cfg))
}

fn check_vocab<T: Scalar>(base: &Parameters<T>, other: &Parameters<T>, what: &str) -> Result<()> {
    let (a, b) = (base.config().vocab_size, other.config().vocab_size);
    if a != b {
        return Err(Error::CheckpointShape(format!(
            "{what} has |V| = {b}, generator has {a}"
        )));
    }
    Ok(())
}

/// Fine-tunes the generator on the weighted objective. `style` and `disc`
/// are only read.
pub fn finetune_styledgpt<T: Scalar>(
    train: &[LMSequence],
    val: &[LMSequence],
    base: &Parameters<T>,
    style: &Parameters<T>,
    disc: &Parameters<T>,
    cfg: &TrainConfig,
) -> Result<(Parameters<T>, TrainReport)> {
    check_vocab(base, style, "style LM")?;
    check_vocab(base, disc, "discriminator")?;
    let frozen = Frozen {
        style: Some(style),
        disc: Some(disc),
    };
    generator_loop(train, val, base, frozen, cfg)
}

/// Style sentences (positives) and conversation pairs whose responses serve
/// as negatives.
#[derive(Clone, Copy, Debug)]
pub struct DiscData<'a> {
    pub style: &'a [StyleSentence],
    pub conv: &'a [ConvPair],
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy and accuracy on `val`.
fn disc_val<T: Scalar>(params: &Parameters<T>, val: DiscData<'_>) -> Result<(f64, f64)> {
    let mut seqs: Vec<Vec<usize>> = val.style.iter().map(|s| disc_sequence(s.tokens())).collect();
    seqs.extend(val.conv.iter().map(|p| disc_sequence(p.response())));
    let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
    let z = discriminator_logits(params, &refs)?;
    let npos = val.style.len();
    let (mut bce, mut correct) = (0.0, 0usize);
    for (i, &z) in z.iter().enumerate() {
        let positive = i < npos;
        bce += if positive { softplus(-z) } else { softplus(z) };
        correct += usize::from((z > 0.0) == positive);
    }
    Ok((bce / z.len() as f64, correct as f64 / z.len() as f64))
}

/// Trains the style classifier from `base` on 1:5 positive/negative batches.
/// Returns the parameters with the best validation cross-entropy; the report
/// carries their validation accuracy.
pub fn train_discriminator<T: Scalar>(
    train: DiscData<'_>,
    val: DiscData<'_>,
    base: &Parameters<T>,
    cfg: &TrainConfig,
) -> Result<(Parameters<T>, TrainReport)> {
    cfg.validate()?;
    if val.style.is_empty() || val.conv.is_empty() {
        return Err(Error::Data("discriminator validation needs both classes".into()));
    }
    let mut batches = negative_sample_batches(
        train.style,
        train.conv,
        NegativeRatio::default(),
        cfg.batch_size,
        cfg.seed,
    )?;
    let mut params = base.clone();
    let mut state = OptimizerState::new(&params);
    let mut log = open_log(cfg)?;
    let mut stop = EarlyStopping::new(cfg.patience);
    stop.observe(0, disc_val(&params, val)?.0, &params)?;
    let mut losses = Vec::new();
    let mut stopped = false;
    for step in 1..=cfg.max_steps {
        let batch = batches.next().expect("endless stream");
        let seqs: Vec<Vec<usize>> = batch.iter().map(|(t, _)| disc_sequence(t)).collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let targets: Vec<T> = batch
            .iter()
            .map(|&(_, y)| if y { T::one() } else { T::zero() })
            .collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let (hidden, t) = bound.run_padded(&mut tape, &refs)?;
        let groups = refs.iter().enumerate().map(|(b, s)| (b * t, s.len())).collect();
        let z = bound.disc_logits(&mut tape, hidden, groups)?;
        let bce = tape.bce_logits(z, targets)?;
        let loss = tape.scale(bce, T::from_f64(1.0 / batch.len() as f64));
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("discriminator loss is {value} at step {step}")));
        }
        let grads = take_grads(&tape, &bound, loss)?;
        drop(tape);
        update(&mut params, grads, &mut state, cfg)?;
        if let Some(log) = log.as_mut() {
            let b = LossBreakdown {
                l_w: 0.0,
                l_s: 0.0,
                l_nll: 0.0,
                total: value,
            };
            log.append(step, &b)?;
        }
        losses.push(value);
        if step % cfg.eval_interval == 0 && stop.observe(step, disc_val(&params, val)?.0, &params)? {
            stopped = true;
            break;
        }
    }
    let steps_run = losses.len();
    if stop.last_step() != Some(steps_run) {
        stop.observe(steps_run, disc_val(&params, val)?.0, &params)?;
    }
    let (params, mut report) = stop.finish(steps_run, stopped, losses);
    report.val_accuracy = Some(disc_val(&params, val)?.1);
    Ok((params, report))
}
