//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use stylegen::autodiff::Precision;
use stylegen::corpus::SyntheticStyleSpec;
use stylegen::decoding::DecodeConfig;
use stylegen::model::ModelConfig;
use stylegen::objectives::{GumbelConfig, LossWeights};
use stylegen::training::{OptimizerConfig, Phase, TrainConfig};
use stylegen::{Error, Result};

/// A value stored under a config key.
pub trait ConfigValue: Sized {
    const KIND: &'static str;
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

impl ConfigValue for usize {
    const KIND: &'static str = "integer";
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    const KIND: &'static str = "integer";
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for f64 {
    const KIND: &'static str = "number";
    fn parse_value(s: &str) -> Option<Self> {
        s.parse().ok().filter(|v: &f64| v.is_finite())
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    const KIND: &'static str = "string";
    fn parse_value(s: &str) -> Option<Self> {
        Some(s.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Vec<usize> {
    const KIND: &'static str = "comma-separated integers";
    fn parse_value(s: &str) -> Option<Self> {
        s.split(',')
            .map(|x| x.trim().parse().ok())
            .collect::<Option<Vec<_>>>()
            .filter(|v| !v.is_empty())
    }
    fn render(&self) -> String {
        self.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

macro_rules! config_keys {
    ($( $group:literal { $( $key:ident : $ty:ty = $default:expr ; $help:literal )* } )*) => {
        /// Every setting of an experiment.
        #[derive(Clone, Debug, PartialEq)]
        pub struct ExperimentConfig {
            $( $( pub $key: $ty, )* )*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                ExperimentConfig { $( $( $key: $default, )* )* }
            }
        }

        /// `(group, key, help)` for every key, in file order.
        pub const KEYS: &[(&str, &str, &str)] = &[ $( $( ($group, stringify!($key), $help), )* )* ];

        impl ExperimentConfig {
            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $( stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value).ok_or_else(|| {
                            Error::Config(format!(
                                "{}: expected {}, got {value:?}",
                                stringify!($key),
                                <$ty as ConfigValue>::KIND
                            ))
                        })?;
                    } )* )*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( $( stringify!($key) => Some(self.$key.render()), )* )*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "general" {
        seed: u64 = 0; "global seed; every stage derives its own seed from it"
    }
    "data" {
        conv_train: String = String::new(); "training pairs, context<TAB>response per line (empty: <run>/data/conv_train.tsv)"
        conv_valid: String = String::new(); "held-out pairs for validation and perplexity (empty: <run>/data/conv_valid.tsv)"
        style_train: String = String::new(); "style sentences, one per line (empty: <run>/data/style_train.txt)"
        style_valid: String = String::new(); "held-out style sentences (empty: <run>/data/style_valid.txt)"
        test_set: String = String::new(); "test contexts, context<TAB>reference<TAB>... per line (empty: <run>/data/test.tsv)"
        min_freq: usize = 2; "vocabulary frequency cutoff"
        max_train_pairs: usize = 0; "use only the first n training pairs (0: all)"
    }
    "synthetic corpora" {
        synth_conv: usize = 50_000; "synthetic training pairs"
        synth_style: usize = 10_000; "synthetic style sentences"
        synth_conv_valid: usize = 1000; "synthetic held-out pairs"
        synth_style_valid: usize = 500; "synthetic held-out style sentences"
        synth_test_contexts: usize = 100; "synthetic test contexts"
        synth_refs: usize = 4; "candidate references per test context"
        synth_test_style_rate: f64 = 0.5; "probability that a candidate reference is written in the style register"
        insertion_rate: f64 = 0.8; "probability that a style sentence carries marker words"
        conv_marker_rate: f64 = 0.02; "marker rate of conversation responses"
        synth_min_len: usize = 4; "shortest synthetic sentence"
        synth_max_len: usize = 24; "longest synthetic sentence"
        synth_topics: usize = 110; "topics of the synthetic grammar"
        synth_nouns: usize = 16; "nouns per topic"
    }
    "model" {
        embed_dim: usize = 128; "token embedding width"
        hidden_dim: usize = 128; "transformer width"
        num_layers: usize = 4; "transformer blocks"
        num_heads: usize = 4; "attention heads"
        max_seq_len: usize = 64; "longest sequence the model accepts"
    }
    "training" {
        pretrain_steps: usize = 1000; "base LM steps"
        pretrain_batch: usize = 32; "base LM batch size"
        pretrain_lr: f64 = 3e-4; "base LM learning rate"
        pretrain_eval: usize = 100; "steps between base LM validations"
        style_lm_steps: usize = 300; "style LM steps"
        style_lm_batch: usize = 32; "style LM batch size"
        style_lm_lr: f64 = 3e-4; "style LM learning rate"
        style_lm_eval: usize = 50; "steps between style LM validations"
        disc_steps: usize = 500; "discriminator steps"
        disc_batch: usize = 32; "discriminator batch size (1:5 positives to negatives)"
        disc_lr: f64 = 3e-4; "discriminator learning rate"
        disc_eval: usize = 50; "steps between discriminator validations"
        finetune_steps: usize = 300; "fine-tuning steps"
        finetune_batch: usize = 16; "fine-tuning batch size"
        learning_rate: f64 = 5e-7; "fine-tuning base learning rate"
        lr_multiplier: f64 = 100.0; "fine-tuning learning-rate multiplier"
        finetune_eval: usize = 50; "steps between fine-tuning validations"
        finetune_valid_pairs: usize = 128; "held-out pairs scored at each fine-tuning validation (0: all)"
        patience: usize = 5; "validations without improvement before stopping"
        clip_norm: f64 = 1.0; "fine-tuning gradient-norm clip (0: off)"
        adam_beta1: f64 = 0.9; "Adam first-moment decay"
        adam_beta2: f64 = 0.999; "Adam second-moment decay"
        adam_eps: f64 = 1e-8; "Adam epsilon"
        lambda_w: f64 = 0.0005; "weight of the word-level KL loss"
        lambda_s: f64 = 0.05; "weight of the sentence-level loss"
        lambda_nll: f64 = 1.0; "weight of the NLL loss"
        tau: f64 = 0.1; "Gumbel-softmax temperature"
        max_rollout_len: usize = 20; "tokens per relaxed rollout"
    }
    "decoding" {
        model: String = String::new(); "generator checkpoint for generate/evaluate/sweep-n (empty: <run>/styledgpt.ckpt)"
        k: usize = 40; "top-k cutoff"
        temperature: f64 = 1.0; "sampling temperature T"
        num_candidates: usize = 50; "candidates per context N"
        beta: f64 = 0.5; "ranking weight of relevance against intensity"
        max_len: usize = 20; "most tokens per response"
    }
    "evaluation" {
        lexicon_cutoff: u64 = 10; "minimum pooled count of a lexicon n-gram"
        test_threshold: f64 = 0.4; "references must score above this intensity"
        sweep_ns: Vec<usize> = vec![1, 10, 30, 50]; "pool sizes for sweep-n"
    }
}

fn parse_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then_some((k, v.trim()))
}

/// Stage-specific seed derived from the global one.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub(crate) mod stage {
    pub const SYNTH: u64 = 1;
    pub const TEST_POOL: u64 = 2;
    pub const INIT: u64 = 3;
    pub const PRETRAIN: u64 = 4;
    pub const STYLE_LM: u64 = 5;
    pub const DISC: u64 = 6;
    pub const FINETUNE: u64 = 7;
    pub const GUMBEL: u64 = 8;
    pub const DECODE: u64 = 9;
}

impl ExperimentConfig {
    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = parse_pair(line)
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    /// Applies `key=value` command-line overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = parse_pair(o).ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then the overrides.
    pub fn load<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                e => e,
            })?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key in file order, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut group = "";
        for &(g, k, _) in KEYS {
            if g != group {
                if !group.is_empty() {
                    s.push('\n');
                }
                writeln!(s, "# {g}").expect("writing to a string");
                group = g;
            }
            writeln!(s, "{k} = {}", self.get(k).expect("listed key")).expect("writing to a string");
        }
        s
    }

    /// Hex digest of every setting except the seed.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for &(_, k, _) in KEYS {
            if k != "seed" {
                h.update(format!("{k}={}\n", self.get(k).expect("listed key")).as_bytes());
            }
        }
        h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// `<hash>-s<seed>`.
    pub fn run_name(&self) -> String {
        format!("{}-s{}", self.hash(), self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_spec().validate()?;
        self.model_config(2).validate()?;
        for p in Phase::ALL {
            self.train_config(p).validate()?;
        }
        if self.max_len == 0 || self.num_candidates == 0 || self.k == 0 {
            return Err(Error::Config("k, num_candidates and max_len must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.test_threshold) || !(0.0..=1.0).contains(&self.synth_test_style_rate) {
            return Err(Error::Config(
                "test_threshold and synth_test_style_rate must lie in [0, 1]".into(),
            ));
        }
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be >= 1".into()));
        }
        if self.sweep_ns.contains(&0) {
            return Err(Error::Config("sweep_ns must be positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config(format!("clip_norm must be >= 0, got {}", self.clip_norm)));
        }
        Ok(())
    }

    pub fn synth_spec(&self) -> SyntheticStyleSpec {
        SyntheticStyleSpec {
            min_len: self.synth_min_len,
            max_len: self.synth_max_len,
            insertion_rate: self.insertion_rate,
            conv_marker_rate: self.conv_marker_rate,
            num_topics: self.synth_topics,
            nouns_per_topic: self.synth_nouns,
            ..SyntheticStyleSpec::default()
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            max_seq_len: self.max_seq_len,
            precision: Precision::F32,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_w: self.lambda_w,
            lambda_s: self.lambda_s,
            lambda_nll: self.lambda_nll,
        }
    }

    pub fn train_config(&self, phase: Phase) -> TrainConfig {
        let base = TrainConfig::for_phase(phase);
        let optimizer = |lr: f64| OptimizerConfig {
            learning_rate: lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_eps,
        };
        let (steps, batch, lr, eval, stage) = match phase {
            Phase::Pretrain => (
                self.pretrain_steps,
                self.pretrain_batch,
                self.pretrain_lr,
                self.pretrain_eval,
                stage::PRETRAIN,
            ),
            Phase::StyleLm => (
                self.style_lm_steps,
                self.style_lm_batch,
                self.style_lm_lr,
                self.style_lm_eval,
                stage::STYLE_LM,
            ),
            Phase::Discriminator => (
                self.disc_steps,
                self.disc_batch,
                self.disc_lr,
                self.disc_eval,
                stage::DISC,
            ),
            Phase::StyledGpt => (
                self.finetune_steps,
                self.finetune_batch,
                self.learning_rate,
                self.finetune_eval,
                stage::FINETUNE,
            ),
        };
        let mut cfg = TrainConfig {
            batch_size: batch,
            max_steps: steps,
            eval_interval: eval,
            patience: self.patience,
            seed: stage_seed(self.seed, stage),
            optimizer: optimizer(lr),
            ..base
        };
        if phase == Phase::StyledGpt {
            cfg.lr_multiplier = self.lr_multiplier;
            cfg.clip_norm = (self.clip_norm > 0.0).then_some(self.clip_norm);
            cfg.weights = self.loss_weights();
            cfg.gumbel = GumbelConfig {
                tau: self.tau,
                max_rollout_len: self.max_rollout_len,
                seed: stage_seed(self.seed, stage::GUMBEL),
            };
        }
        cfg
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            k: self.k,
            temperature: self.temperature,
            num_candidates: self.num_candidates,
            beta: self.beta,
            max_len: self.max_len,
            seed: stage_seed(self.seed, stage::DECODE),
        }
    }
}

/// Key reference for `--help`.
pub fn keys_help() -> String {
    let defaults = ExperimentConfig::default();
    let mut s = String::from("Configuration keys (file lines or key=value overrides):\n");
    let mut group = "";
    for &(g, k, help) in KEYS {
        if g != group {
            writeln!(s, "\n  [{g}]").expect("writing to a string");
            group = g;
        }
        writeln!(
            s,
            "  {k:<22} {help} [default: {}]",
            defaults.get(k).expect("listed key")
        )
        .expect("writing to a string");
    }
    s
}
