use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gumbel_noise, GumbelConfig};
use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::corpus::{PAD, SEP};
use crate::error::{Error, Result};
use crate::model::{Bound, EmbedInput, Parameters, TapeCache};

/// Soft responses generated for a batch of contexts.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// One `batch x |V|` node per step.
    pub steps: Vec<Var>,
    /// Emitted vectors per sequence, counting the one whose argmax is `SEP`.
    pub lengths: Vec<usize>,
    pub ended_with_sep: Vec<bool>,
}

impl Rollout {
    pub fn batch(&self) -> usize {
        self.lengths.len()
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Autoregressive Gumbel-softmax rollout from `context SEP` for every context.
///
/// Each step feeds the previous soft vector back through the soft embedding,
/// so the whole chain stays differentiable. A sequence stops once its vector's
/// argmax is `SEP`; the batch runs until every sequence has stopped or the
/// step cap is reached.
pub fn rollout_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    gen: &Bound,
    contexts: &[&[usize]],
    gcfg: &GumbelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    gcfg.validate()?;
    let batch = contexts.len();
    if batch == 0 || contexts.iter().any(|c| c.is_empty()) {
        return Err(Error::Data("rollout needs non-empty contexts".into()));
    }
    let cfg = *gen.config();
    let t = contexts.iter().map(|c| c.len()).max().unwrap_or(0) + 1;
    let cap = gcfg.max_rollout_len.min(cfg.max_seq_len.saturating_sub(t));
    if cap == 0 {
        return Err(Error::Data(format!("context of {t} steps leaves no room to roll out")));
    }
    let mut ids = Vec::with_capacity(batch * t);
    let mut starts = Vec::with_capacity(batch);
    for c in contexts {
        let pad = t - 1 - c.len();
        starts.push(pad);
        ids.extend(std::iter::repeat_n(PAD, pad));
        ids.extend_from_slice(c);
        ids.push(SEP);
    }
    let mut cache = TapeCache::new(&cfg, batch, starts.iter().any(|&s| s > 0).then_some(starts));
    let hidden = gen.run(tape, EmbedInput::Ids(&ids), &mut cache, t)?;
    let last: Vec<usize> = (0..batch).map(|b| b * t + t - 1).collect();
    let hidden = tape.gather(hidden, &last)?;
    let mut logits = gen.logits(tape, hidden)?;

    let v = cfg.vocab_size;
    let inv_tau = T::from_f64(1.0 / gcfg.tau);
    let mut steps = Vec::with_capacity(cap);
    let mut lengths = vec![0; batch];
    let mut ended = vec![false; batch];
    for step in 0..cap {
        let noise: Vec<T> = gumbel_noise(rng, batch * v).into_iter().map(T::from_f64).collect();
        let noise = tape.constant(Tensor::from_vec(batch, v, noise)?);
        let z = tape.add(logits, noise)?;
        let z = tape.scale(z, inv_tau);
        let y = tape.softmax(z);
        steps.push(y);
        let yv = tape.value(y);
        for b in 0..batch {
            if !ended[b] {
                lengths[b] += 1;
                if argmax(yv.row(b)) == SEP {
                    ended[b] = true;
                }
            }
        }
        if ended.iter().all(|&e| e) || step + 1 == cap {
            break;
        }
        let h = gen.run(tape, EmbedInput::Soft(y), &mut cache, 1)?;
        logits = gen.logits(tape, h)?;
    }
    Ok(Rollout {
        steps,
        lengths,
        ended_with_sep: ended,
    })
}

/// `-log p(S | Ỹ)` averaged over the rollout batch. Sequences that hit the
/// step cap get a hard `SEP` appended, matching how the discriminator sees
/// token responses. Bind `disc` frozen so no gradient reaches it.
pub fn sentence_level_term<T: Scalar>(tape: &mut Tape<T>, disc: &Bound, rollout: &Rollout) -> Result<Var> {
    let batch = rollout.batch();
    let steps = rollout.steps.len();
    if steps == 0 || rollout.lengths.iter().any(|&l| l == 0) {
        return Err(Error::Data("zero-length rollout".into()));
    }
    let cfg = *disc.config();
    let mut sep = Tensor::zeros(batch, cfg.vocab_size);
    for b in 0..batch {
        sep.set(b, SEP, T::one());
    }
    let sep = tape.constant(sep);
    let mut parts = rollout.steps.clone();
    parts.push(sep);
    let x = tape.concat_time(&parts, batch)?;
    let len = steps + 1;
    let mut cache = TapeCache::new(&cfg, batch, None);
    let hidden = disc.run(tape, EmbedInput::Soft(x), &mut cache, len)?;
    let groups = (0..batch)
        .map(|b| (b * len, rollout.lengths[b] + usize::from(!rollout.ended_with_sep[b])))
        .collect();
    let z = disc.disc_logits(tape, hidden, groups)?;
    let bce = tape.bce_logits(z, vec![T::one(); batch])?;
    Ok(tape.scale(bce, T::from_f64(1.0 / batch as f64)))
}

/// Soft response vectors for one context (rows sum to one).
pub fn rollout_soft<T: Scalar>(gen: &Parameters<T>, context: &[usize], gcfg: &GumbelConfig) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = gen.bind(&mut tape, false);
    let mut rng = ChaCha8Rng::seed_from_u64(gcfg.seed);
    let r = rollout_on_tape(&mut tape, &bound, &[context], gcfg, &mut rng)?;
    let n = r.lengths[0];
    let rows: Vec<Vec<T>> = r.steps[..n].iter().map(|&s| tape.value(s).row(0).to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// Value of the sentence-level loss for one context.
pub fn sentence_level_loss<T: Scalar>(
    gen: &Parameters<T>,
    disc: &Parameters<T>,
    context: &[usize],
    gcfg: &GumbelConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let g = gen.bind(&mut tape, false);
    let d = disc.bind(&mut tape, false);
    let mut rng = ChaCha8Rng::seed_from_u64(gcfg.seed);
    let r = rollout_on_tape(&mut tape, &g, &[context], gcfg, &mut rng)?;
    let loss = sentence_level_term(&mut tape, &d, &r)?;
    Ok(tape.value(loss).item().as_f64())
}
