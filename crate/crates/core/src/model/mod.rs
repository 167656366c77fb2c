//! A small pre-norm causal transformer shared by the dialogue model, the
//! style language model and the discriminator.
//!
//! Token embeddings are stored one row per token (`|V| x d_e`), so a soft
//! input row `x*` embeds as `x* E`. The output projection `W_o` is `|V| x d_c`
//! and the discriminator head is `W_d` (`1 x d_c`) plus a scalar bias applied
//! to the mean of the final hidden states.

mod checkpoint;
mod forward;
mod graph;


use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Precision, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, load_checkpoint_with_vocab, save_checkpoint, CheckpointMeta};
pub use forward::{
    disc_sequence, discriminator_logits, discriminator_score, discriminator_scores, forward_full, forward_soft,
    forward_step, prefill, sequence_logprob, sequence_logprobs, step_batch, DiscInput, ForwardOutput, KvCache,
};
pub use graph::{Bound, EmbedInput, TapeCache};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub precision: Precision,
}

impl ModelConfig {
    /// Desk-scale defaults for a vocabulary of `vocab_size` tokens.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 128,
            hidden_dim: 128,
            num_layers: 4,
            num_heads: 4,
            max_seq_len: 64,
            precision: Precision::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.num_layers,
            self.num_heads,
            self.max_seq_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    fn ffn_dim(&self) -> usize {
        4 * self.hidden_dim
    }
}

const PER_BLOCK: usize = 12;

/// Positions of the named tensors in [`Parameters`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub(crate) tok: usize,
    pub(crate) proj: Option<usize>,
    pub(crate) pos: usize,
    pub(crate) blocks: usize,
    pub(crate) ln_f: usize,
    pub(crate) out: usize,
    pub(crate) disc_w: usize,
    pub(crate) disc_b: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let proj = (cfg.embed_dim != cfg.hidden_dim).then_some(1);
        let pos = 1 + proj.is_some() as usize;
        let blocks = pos + 1;
        let ln_f = blocks + cfg.num_layers * PER_BLOCK;
        Layout {
            tok: 0,
            proj,
            pos,
            blocks,
            ln_f,
            out: ln_f + 2,
            disc_w: ln_f + 3,
            disc_b: ln_f + 4,
        }
    }

    pub(crate) fn block(&self, layer: usize, k: usize) -> usize {
        self.blocks + layer * PER_BLOCK + k
    }

    #[cfg(test)]
    fn len(&self) -> usize {
        self.disc_b + 1
    }
}

// Offsets inside a block.
pub(crate) const LN1_G: usize = 0;
pub(crate) const LN1_B: usize = 1;
pub(crate) const W_QKV: usize = 2;
pub(crate) const B_QKV: usize = 3;
pub(crate) const W_PROJ: usize = 4;
pub(crate) const B_PROJ: usize = 5;
pub(crate) const LN2_G: usize = 6;
pub(crate) const LN2_B: usize = 7;
pub(crate) const W_FC: usize = 8;
pub(crate) const B_FC: usize = 9;
pub(crate) const W_FC2: usize = 10;
pub(crate) const B_FC2: usize = 11;

const BLOCK_NAMES: [&str; PER_BLOCK] = [
    "ln1.g",
    "ln1.b",
    "attn.w_qkv",
    "attn.b_qkv",
    "attn.w_proj",
    "attn.b_proj",
    "ln2.g",
    "ln2.b",
    "mlp.w_fc",
    "mlp.b_fc",
    "mlp.w_out",
    "mlp.b_out",
];

/// Every learnable tensor of one model, in a fixed canonical order.
#[derive(Clone, Debug)]
pub struct Parameters<T: Scalar> {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl<T: Scalar> PartialEq for Parameters<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a == b)
    }
}

fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let (v, de, d, f) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.ffn_dim());
    let mut out = vec![("tok_emb".to_string(), (v, de))];
    if de != d {
        out.push(("emb_proj".into(), (de, d)));
    }
    out.push(("pos_emb".into(), (cfg.max_seq_len, d)));
    for l in 0..cfg.num_layers {
        let shapes = [
            (1, d),
            (1, d),
            (d, 3 * d),
            (1, 3 * d),
            (d, d),
            (1, d),
            (1, d),
            (1, d),
            (d, f),
            (1, f),
            (f, d),
            (1, d),
        ];
        for (name, shape) in BLOCK_NAMES.iter().zip(shapes) {
            out.push((format!("h{l}.{name}"), shape));
        }
    }
    out.push(("ln_f.g".into(), (1, d)));
    out.push(("ln_f.b".into(), (1, d)));
    out.push(("w_out".into(), (v, d)));
    out.push(("disc.w".into(), (1, d)));
    out.push(("disc.b".into(), (1, 1)));
    out
}

impl<T: Scalar> Parameters<T> {
    /// Random initialization: normal(0, 0.02) weights, residual output
    /// projections scaled down by `sqrt(2 l)`, unit layer-norm gains, and a zero
    /// discriminator head.
    pub fn init(mut config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        config.precision = T::PRECISION;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let resid = 1.0 / (2.0 * config.num_layers as f64).sqrt();
        let shapes = expected_shapes(&config);
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, (r, c)) in &shapes {
            let t = if name.ends_with(".g") {
                Tensor::filled(*r, *c, T::one())
            } else if is_zero_init(name) {
                Tensor::zeros(*r, *c)
            } else {
                let s = if name.ends_with("w_proj") || name.ends_with("mlp.w_out") {
                    resid
                } else {
                    1.0
                };
                let data = (0..r * c).map(|_| T::from_f64(normal.sample(&mut rng) * s)).collect();
                Tensor::from_vec(*r, *c, data)?
            };
            tensors.push(Arc::new(t));
        }
        Ok(Parameters {
            config,
            layout: Layout::new(&config),
            names: shapes.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    /// Builds parameters from named tensors, checking names and shapes.
    pub fn from_named(mut config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        config.precision = T::PRECISION;
        let shapes = expected_shapes(&config);
        if named.len() != shapes.len() {
            return Err(Error::CheckpointShape(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want, shape)) in named.into_iter().zip(&shapes) {
            if &name != want || t.shape() != *shape {
                return Err(Error::CheckpointShape(format!(
                    "tensor {name} {:?}, expected {want} {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("tensor {name} has non-finite entries")));
            }
            tensors.push(Arc::new(t));
        }
        Ok(Parameters {
            config,
            layout: Layout::new(&config),
            names: shapes.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    #[cfg(test)]
    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.tensors.iter().map(|t| &**t)
    }

    /// Mutable access; copies the tensor first if a tape still shares it.
    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &*self.tensors[i])
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Shape(format!("no parameter named {name}")))?;
        if value.shape() != self.tensors[i].shape() {
            return Err(Error::Shape(format!(
                "parameter {name} is {:?}, got {:?}",
                self.tensors[i].shape(),
                value.shape()
            )));
        }
        self.tensors[i] = Arc::new(value);
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        let mut config = self.config;
        config.precision = U::PRECISION;
        Parameters {
            config,
            layout: self.layout,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    /// Puts every tensor on `tape` as a leaf; gradients flow only if `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| tape.leaf_shared(Arc::clone(t), trainable))
            .collect();
        Bound::new(vars, self.layout, self.config)
    }
}

fn is_zero_init(name: &str) -> bool {
    name.ends_with(".b") || name.contains(".b_") || name.starts_with("disc.")
}

#[cfg(test)]
mod init_tests {
    use super::*;
    use crate::testutil::tiny;

    #[test]
    fn layout_matches_names() {
        for de in [16, 24] {
            let cfg = ModelConfig {
                embed_dim: de,
                ..tiny()
            };
            let p = Parameters::<f64>::init(cfg, 0).unwrap();
            let l = p.layout();
            assert_eq!(p.names()[l.tok], "tok_emb");
            assert_eq!(l.proj.map(|i| p.names()[i].as_str()), (de != 16).then_some("emb_proj"));
            assert_eq!(p.names()[l.pos], "pos_emb");
            assert_eq!(p.names()[l.block(1, W_FC2)], "h1.mlp.w_out");
            assert_eq!(p.names()[l.ln_f], "ln_f.g");
            assert_eq!(p.names()[l.out], "w_out");
            assert_eq!(p.names()[l.disc_b], "disc.b");
            assert_eq!(l.len(), p.len());
        }
    }

    #[test]
    fn init_is_seeded_and_head_is_zero() {
        let a = Parameters::<f32>::init(tiny(), 3).unwrap();
        let b = Parameters::<f32>::init(tiny(), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.get("disc.w").unwrap().data().iter().all(|&x| x == 0.0));
        assert!(a.get("h0.ln1.g").unwrap().data().iter().all(|&x| x == 1.0));
        assert_ne!(a, Parameters::<f32>::init(tiny(), 4).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ModelConfig { num_heads: 3, ..tiny() }.validate().is_err());
        assert!(ModelConfig {
            num_layers: 0,
            ..tiny()
        }
        .validate()
        .is_err());
        let mut p = Parameters::<f32>::init(tiny(), 0).unwrap();
        assert!(p.set("w_out", Tensor::zeros(2, 2)).is_err());
        assert!(p.set("nope", Tensor::zeros(2, 2)).is_err());
    }
}
