use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Precision, Scalar};
use crate::model::{ModelConfig, Parameters};

pub(crate) fn tiny() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        embed_dim: 16,
        hidden_dim: 16,
        num_layers: 2,
        num_heads: 2,
        max_seq_len: 16,
        precision: Precision::F64,
    }
}

/// Adds uniform noise to every tensor so no gradient path is trivially zero.
pub(crate) fn jitter<T: Scalar>(p: &mut Parameters<T>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..p.len() {
        for x in p.tensor_mut(i).data_mut() {
            *x += T::from_f64(rng.random_range(-scale..scale));
        }
    }
}

pub(crate) fn jittered<T: Scalar>(cfg: ModelConfig, seed: u64) -> Parameters<T> {
    let mut p = Parameters::init(cfg, seed).unwrap();
    jitter(&mut p, 0.3, seed + 100);
    p
}

pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

/// Compares analytic parameter gradients with central differences at step `h`.
/// `loss(params, want_grads)` returns the loss and, when asked, one optional
/// gradient per parameter tensor. Returns the number of entries compared.
pub(crate) fn check_param_grads<F>(p: &Parameters<f64>, h: f64, tol: f64, loss: F) -> usize
where
    F: Fn(&Parameters<f64>, bool) -> (f64, Option<Vec<Option<crate::autodiff::Tensor<f64>>>>),
{
    let grads = loss(p, true).1.expect("gradients requested");
    let mut checked = 0;
    for (ti, g) in grads.iter().enumerate() {
        for e in 0..p.tensor(ti).len() {
            let a = g.as_ref().map_or(0.0, |g| g.data()[e]);
            let mut plus = p.clone();
            plus.tensor_mut(ti).data_mut()[e] += h;
            let mut minus = p.clone();
            minus.tensor_mut(ti).data_mut()[e] -= h;
            let fd = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * h);
            if a.abs() > 1e-8 {
                assert!(
                    rel_err(a, fd) < tol,
                    "{} entry {e}: analytic {a} vs fd {fd}",
                    p.names()[ti]
                );
                checked += 1;
            } else {
                assert!(fd.abs() < 1e-6, "{} entry {e}: analytic {a} vs fd {fd}", p.names()[ti]);
            }
        }
    }
    checked
}
