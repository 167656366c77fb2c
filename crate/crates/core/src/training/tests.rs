use super::*;
use crate::corpus::{make_lm_sequence, make_style_sequence, ConvPair, StyleSentence};
use crate::model::{ModelConfig, Parameters};
use crate::testutil::tiny;

fn toy_params(values: [f64; 3]) -> Parameters<f64> {
    let mut p = Parameters::<f64>::init(tiny(), 0).unwrap();
    let t = p.tensor_mut(0);
    t.data_mut()[..3].copy_from_slice(&values);
    p
}

fn grads_for(p: &Parameters<f64>, first: [f64; 3]) -> ParamGrads<f64> {
    let mut g: ParamGrads<f64> = vec![None; p.len()];
    let mut t = Tensor::zeros(p.tensor(0).rows(), p.tensor(0).cols());
    t.data_mut()[..3].copy_from_slice(&first);
    g[0] = Some(t);
    g
}

#[test]
fn first_adam_step_moves_by_learning_rate_against_the_sign() {
    let mut p = toy_params([0.5, -1.0, 2.0]);
    let before = p.clone();
    let mut st = OptimizerState::new(&p);
    let ocfg = OptimizerConfig {
        learning_rate: 0.01,
        epsilon: 1e-300,
        ..OptimizerConfig::default()
    };
    let g = grads_for(&p, [3.0, -0.2, 7.5]);
    adam_step(&mut p, &g, &mut st, &ocfg).unwrap();
    let d: Vec<f64> = (0..3)
        .map(|i| p.tensor(0).data()[i] - before.tensor(0).data()[i])
        .collect();
    assert!((d[0] + 0.01).abs() < 1e-15);
    assert!((d[1] - 0.01).abs() < 1e-15);
    assert!((d[2] + 0.01).abs() < 1e-15);
    assert_eq!(p.tensor(0).data()[3..], before.tensor(0).data()[3..]);
    assert_eq!(st.step(), 1);
}

#[test]
fn adam_matches_hand_computation_over_three_steps() {
    let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
    let mut p = toy_params([1.0, -2.0, 0.25]);
    let mut st = OptimizerState::new(&p);
    let ocfg = OptimizerConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    };
    // gradient of f(x) = x0^2 + 3 x1 + x0 x2
    let grad = |x: &[f64]| [2.0 * x[0] + x[2], 3.0, x[0]];

    let mut x = [1.0f64, -2.0, 0.25];
    let (mut m, mut v) = ([0.0f64; 3], [0.0f64; 3]);
    for t in 1..=3 {
        let g = grad(&x);
        for i in 0..3 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            x[i] -= lr * mh / (vh.sqrt() + eps);
        }
        let cur: Vec<f64> = p.tensor(0).data()[..3].to_vec();
        let gp = grads_for(&p, grad(&cur));
        adam_step(&mut p, &gp, &mut st, &ocfg).unwrap();
    }
    for i in 0..3 {
        assert!((p.tensor(0).data()[i] - x[i]).abs() < 1e-12, "entry {i}");
    }
    assert_eq!(st.step(), 3);
}

#[test]
fn zero_gradient_leaves_parameters_alone() {
    let mut p = toy_params([1.0, 2.0, 3.0]);
    let before = p.clone();
    let mut st = OptimizerState::new(&p);
    let mut g = grads_for(&p, [0.0; 3]);
    g[1] = Some(Tensor::zeros(p.tensor(1).rows(), p.tensor(1).cols()));
    adam_step(&mut p, &g, &mut st, &OptimizerConfig::default()).unwrap();
    assert_eq!(p, before);
    assert_eq!(st.step(), 1);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut p = toy_params([0.1, 0.2, 0.3]);
        let mut st = OptimizerState::new(&p);
        let g = grads_for(&p, [1.0, -1.0, 0.5]);
        adam_step(&mut p, &g, &mut st, &OptimizerConfig::default()).unwrap();
        (p, st)
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_gradient_aborts_without_touching_anything() {
    let mut p = toy_params([0.1, 0.2, 0.3]);
    let before = p.clone();
    let mut st = OptimizerState::new(&p);
    let g = grads_for(&p, [1.0, f64::NAN, 0.5]);
    let err = adam_step(&mut p, &g, &mut st, &OptimizerConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert_eq!(p, before);
    assert_eq!(st.step(), 0);
}

#[test]
fn optimizer_config_is_validated() {
    let bad = [
        OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        },
        OptimizerConfig {
            beta1: 1.0,
            ..Default::default()
        },
        OptimizerConfig {
            beta2: -0.1,
            ..Default::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
    let d = OptimizerConfig::default();
    assert_eq!((d.learning_rate, d.beta1, d.beta2, d.epsilon), (5e-7, 0.9, 0.999, 1e-8));
}

#[test]
fn clipping_rescales_to_the_global_norm() {
    let mut g: ParamGrads<f64> = vec![
        Some(Tensor::from_vec(1, 2, vec![3.0, 0.0]).unwrap()),
        None,
        Some(Tensor::from_vec(1, 1, vec![4.0]).unwrap()),
    ];
    assert_eq!(clip_grad_norm(&mut g, 1.0).unwrap(), 5.0);
    assert!((g[0].as_ref().unwrap().data()[0] - 0.6).abs() < 1e-15);
    assert!((g[2].as_ref().unwrap().data()[0] - 0.8).abs() < 1e-15);
    let snapshot = g.clone();
    clip_grad_norm(&mut g, 2.0).unwrap();
    assert_eq!(g, snapshot);
}

#[test]
fn batch_plan_visits_everything_once_per_pass() {
    let lens: Vec<usize> = (0..103).map(|i| (i * 7) % 13 + 1).collect();
    let mut plan = BatchPlan::new(lens.clone(), 8, 4);
    let mut seen = vec![0; lens.len()];
    let mut total = 0;
    while total < lens.len() {
        let b = plan.next().unwrap();
        assert!(!b.is_empty() && b.len() <= 8);
        total += b.len();
        for i in b {
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    let a: Vec<Vec<usize>> = BatchPlan::new(lens.clone(), 8, 4).take(30).collect();
    let b: Vec<Vec<usize>> = BatchPlan::new(lens, 8, 4).take(30).collect();
    assert_eq!(a, b);
}

#[test]
fn phase_names_round_trip() {
    for p in Phase::ALL {
        assert_eq!(p.name().parse::<Phase>().unwrap(), p);
    }
    assert!("finetune2".parse::<Phase>().is_err());
}

#[test]
fn finetune_defaults_scale_the_reference_rate() {
    let c = TrainConfig::for_phase(Phase::StyledGpt);
    assert!((c.effective_optimizer().learning_rate - 5e-5).abs() < 1e-18);
    assert_eq!(c.clip_norm, Some(1.0));
    assert_eq!(c.patience, 5);
    assert_eq!(
        TrainConfig::for_phase(Phase::Pretrain)
            .effective_optimizer()
            .learning_rate,
        3e-4
    );
}

/// Responses are a fixed function of the context over ids 3..12.
fn toy_corpus(n: usize, offset: usize) -> Vec<LMSequence> {
    (0..n)
        .map(|i| {
            let a = 3 + (i + offset) % 9;
            let b = 3 + (i * 5 + offset) % 9;
            let pair = ConvPair::new(vec![a, b], vec![3 + (a + b) % 9, a]).unwrap();
            make_lm_sequence(&pair)
        })
        .collect()
}

fn tiny32() -> ModelConfig {
    ModelConfig {
        precision: crate::autodiff::Precision::F32,
        ..tiny()
    }
}

fn quick(phase: Phase, steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_steps: steps,
        eval_interval: 20,
        patience: 0,
        seed: 11,
        ..TrainConfig::for_phase(phase)
    }
}

#[test]
fn uniform_model_has_perplexity_vocab_size() {
    let mut p = Parameters::<f64>::init(tiny(), 0).unwrap();
    let i = p.index_of("w_out").unwrap();
    p.tensor_mut(i).data_mut().fill(0.0);
    let data = toy_corpus(10, 0);
    let ppl = evaluate_perplexity(&p, &data).unwrap();
    assert!((ppl - 12.0).abs() < 1e-9, "{ppl}");
    assert!(evaluate_perplexity(&p, &[]).is_err());
}

#[test]
fn perplexity_does_not_depend_on_batching() {
    let p = crate::testutil::jittered::<f32>(tiny32(), 1);
    let data = toy_corpus(40, 3);
    let batched = evaluate_perplexity(&p, &data).unwrap();
    let mut lp = 0.0;
    let mut n = 0;
    for s in &data {
        lp += crate::model::sequence_logprob(&p, s).unwrap();
        n += s.num_targets();
    }
    let single = (-lp / n as f64).exp();
    assert!(batched >= 1.0);
    assert!((batched - single).abs() < 1e-6 * single, "{batched} vs {single}");
}

#[test]
fn pretraining_lowers_the_loss_and_is_reproducible() {
    let train = toy_corpus(200, 0);
    let val = toy_corpus(30, 1);
    let init = Parameters::<f32>::init(tiny32(), 5).unwrap();
    let cfg = quick(Phase::Pretrain, 60);
    let (p1, r1) = pretrain_base_lm(&train, &val, &init, &cfg).unwrap();
    let (p2, r2) = pretrain_base_lm(&train, &val, &init, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1, r2);
    let head: f64 = r1.train_losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = r1.train_losses[50..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
    assert!(evaluate_perplexity(&p1, &val).unwrap() < 12.0);
    assert_eq!(r1.evals[0].0, 0);
    assert_eq!(r1.steps_run, 60);
}

#[test]
fn early_stopping_returns_the_best_evaluation() {
    let train = toy_corpus(100, 0);
    let val = toy_corpus(20, 1);
    let init = Parameters::<f32>::init(tiny32(), 5).unwrap();
    let cfg = TrainConfig {
        eval_interval: 5,
        patience: 2,
        optimizer: OptimizerConfig {
            learning_rate: 0.5,
            ..OptimizerConfig::default()
        },
        ..quick(Phase::Pretrain, 200)
    };
    let (p, r) = pretrain_base_lm(&train, &val, &init, &cfg).unwrap();
    assert!(r.stopped_early, "{:?}", r.evals);
    let best = r.evals.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val, best);
    assert!((evaluate_perplexity(&p, &val).unwrap().ln() - best).abs() < 1e-9);
}

#[test]
fn zero_steps_return_the_input() {
    let style: Vec<LMSequence> = (3..12).map(|i| make_style_sequence(&[i, 3 + (i + 1) % 9])).collect();
    let base = crate::testutil::jittered::<f32>(tiny32(), 2);
    let (p, r) = finetune_style_lm(&style, &style, &base, &quick(Phase::StyleLm, 0)).unwrap();
    assert_eq!(p, base);
    assert_eq!(r.steps_run, 0);
}

#[test]
fn nll_only_finetune_follows_pretraining_exactly() {
    let train = toy_corpus(100, 0);
    let val = toy_corpus(20, 1);
    let base = crate::testutil::jittered::<f32>(tiny32(), 3);
    let style = crate::testutil::jittered::<f32>(tiny32(), 4);
    let disc = crate::testutil::jittered::<f32>(tiny32(), 5);
    let cfg = TrainConfig {
        weights: LossWeights {
            lambda_w: 0.0,
            lambda_s: 0.0,
            lambda_nll: 1.0,
        },
        ..quick(Phase::StyledGpt, 25)
    };
    let (a, ra) = finetune_styledgpt(&train, &val, &base, &style, &disc, &cfg).unwrap();
    let (b, rb) = pretrain_base_lm(&train, &val, &base, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.train_losses, rb.train_losses);
}

#[test]
fn finetune_updates_only_the_generator_and_logs_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let train = toy_corpus(60, 0);
    let val = toy_corpus(10, 1);
    let base = crate::testutil::jittered::<f32>(tiny32(), 3);
    let style = crate::testutil::jittered::<f32>(tiny32(), 4);
    let disc = crate::testutil::jittered::<f32>(tiny32(), 5);
    let (style0, disc0) = (style.clone(), disc.clone());
    let log = dir.path().join("train_log.tsv");
    let cfg = TrainConfig {
        gumbel: GumbelConfig {
            max_rollout_len: 4,
            ..GumbelConfig::default()
        },
        weights: LossWeights {
            lambda_w: 0.5,
            lambda_s: 0.5,
            lambda_nll: 1.0,
        },
        log_path: Some(log.clone()),
        ..quick(Phase::StyledGpt, 6)
    };
    let (gen, r) = finetune_styledgpt(&train, &val, &base, &style, &disc, &cfg).unwrap();
    assert_ne!(gen, base);
    assert_eq!(style, style0);
    assert_eq!(disc, disc0);
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + r.steps_run);
    let fields: Vec<f64> = lines[1].split('\t').map(|x| x.parse().unwrap()).collect();
    assert!(fields[1] > 0.0 && fields[2] > 0.0 && fields[3] > 0.0, "{}", lines[1]);
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let train = toy_corpus(10, 0);
    let base = Parameters::<f32>::init(tiny32(), 1).unwrap();
    let other = Parameters::<f32>::init(
        ModelConfig {
            vocab_size: 13,
            ..tiny32()
        },
        1,
    )
    .unwrap();
    let cfg = quick(Phase::StyledGpt, 1);
    let err = finetune_styledgpt(&train, &train, &base, &other, &base, &cfg).unwrap_err();
    assert!(matches!(err, Error::CheckpointShape(_)));
}

#[test]
fn nan_parameters_abort_training() {
    let train = toy_corpus(10, 0);
    let mut base = Parameters::<f32>::init(tiny32(), 1).unwrap();
    base.tensor_mut(0).data_mut()[train[0].ids[0] * 16] = f32::NAN;
    let err = pretrain_base_lm(&train, &train, &base, &quick(Phase::Pretrain, 3)).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
}

fn disc_corpora(n: usize, offset: usize) -> (Vec<StyleSentence>, Vec<ConvPair>) {
    let style = (0..n)
        .map(|i| StyleSentence::new(vec![11, 3 + (i + offset) % 7]).unwrap())
        .collect();
    let conv = (0..5 * n)
        .map(|i| ConvPair::new(vec![4], vec![3 + (i + offset) % 7, 3 + (i * 3) % 7]).unwrap())
        .collect();
    (style, conv)
}

#[test]
fn zero_head_discriminator_predicts_the_majority_class() {
    let (s, c) = disc_corpora(10, 0);
    let val = DiscData { style: &s, conv: &c };
    let base = Parameters::<f32>::init(tiny32(), 1).unwrap();
    let (p, r) = train_discriminator(val, val, &base, &quick(Phase::Discriminator, 0)).unwrap();
    assert_eq!(p, base);
    let acc = r.val_accuracy.unwrap();
    assert!((acc - 50.0 / 60.0).abs() < 1e-12, "{acc}");
}

#[test]
fn discriminator_separates_marked_sentences() {
    let (s, c) = disc_corpora(40, 0);
    let (vs, vc) = disc_corpora(10, 3);
    let base = Parameters::<f32>::init(tiny32(), 1).unwrap();
    let cfg = TrainConfig {
        optimizer: OptimizerConfig {
            learning_rate: 3e-3,
            ..OptimizerConfig::default()
        },
        ..quick(Phase::Discriminator, 150)
    };
    let train = DiscData { style: &s, conv: &c };
    let val = DiscData { style: &vs, conv: &vc };
    let (_, r) = train_discriminator(train, val, &base, &cfg).unwrap();
    assert!(r.val_accuracy.unwrap() > 0.95, "{r:?}");
}
