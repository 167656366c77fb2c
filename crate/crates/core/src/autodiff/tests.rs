use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Central-difference check of `f` with respect to each input tensor.
fn check<F>(inputs: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let eval = |ins: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let o = f(&mut t, &vs);
        t.value(o).item()
    };
    let h = 1e-6;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[which])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));
        for e in 0..input.len() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[e] += h;
            let mut minus = inputs.clone();
            minus[which].data_mut()[e] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[e];
            let err = (a - fd).abs() / (1e-6 + a.abs().max(fd.abs()));
            assert!(err < 1e-5, "input {which} entry {e}: analytic {a} vs fd {fd}");
        }
    }
}

#[test]
fn matmul_add_bias_gelu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(3, 4, &mut rng);
    let w = random(4, 5, &mut rng);
    let b = random(1, 5, &mut rng);
    check(vec![x, w, b], |t, v| {
        let h = t.matmul(v[0], v[1], false).unwrap();
        let h = t.add_bias(h, v[2]).unwrap();
        let h = t.gelu(h);
        let h = t.scale(h, 0.7);
        t.sum_all(h)
    });
}

#[test]
fn matmul_transposed_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(3, 4, &mut rng);
    let w = random(6, 4, &mut rng);
    check(vec![x, w], |t, v| {
        let h = t.matmul(v[0], v[1], true).unwrap();
        let l = t.log_softmax(h);
        t.pick_sum(l, vec![(0, 1), (1, 5), (2, 0), (2, 0)]).unwrap()
    });
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(4, 6, &mut rng);
    let g = random(1, 6, &mut rng);
    let b = random(1, 6, &mut rng);
    let w = random(6, 6, &mut rng);
    check(vec![x, g, b, w], |t, v| {
        let h = t.layer_norm(v[0], v[1], v[2]).unwrap();
        let h = t.matmul(h, v[3], false).unwrap();
        let h = t.softmax(h);
        t.pick_sum(h, vec![(0, 0), (3, 2), (1, 5)]).unwrap()
    });
}

#[test]
fn attention_gradient_with_offset_and_key_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (batch, tq, tk, d) = (2, 2, 4, 6);
    let q = random(batch * tq, d, &mut rng);
    let k = random(batch * tk, d, &mut rng);
    let v = random(batch * tk, d, &mut rng);
    let w = random(batch * tq, d, &mut rng);
    check(vec![q, k, v, w], |t, vars| {
        let layout = AttnLayout {
            batch,
            heads: 2,
            tq,
            tk,
            offset: 2,
            key_start: Some(vec![0, 1]),
        };
        let o = t.attention(vars[0], vars[1], vars[2], layout).unwrap();
        let prod = t.matmul(o, vars[3], true).unwrap();
        t.sum_all(prod)
    });
}

#[test]
fn gather_slice_concat_mean_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let table = random(5, 4, &mut rng);
    let extra = random(2, 4, &mut rng);
    let w = random(1, 2, &mut rng);
    check(vec![table, extra, w], |t, v| {
        let a = t.gather(v[0], &[3, 1, 3, 0]).unwrap(); // batch 2, t 2
        let c = t.concat_time(&[a, v[1]], 2).unwrap(); // batch 2, t 3
        let s = t.slice_cols(c, 1, 2).unwrap();
        let m = t.mean_groups(s, vec![(0, 3), (3, 2)]).unwrap();
        let z = t.matmul(m, v[2], true).unwrap();
        t.bce_logits(z, vec![1.0, 0.0]).unwrap()
    });
}

#[test]
fn kl_rows_gradient_and_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = random(3, 5, &mut rng);
    let q_logits = random(2, 5, &mut rng);
    let log_q = log_softmax_rows(&q_logits);
    {
        let mut t = Tape::new();
        let zv = t.constant(z.clone());
        let kl = t.kl_rows(zv, &[2, 0], log_q.clone()).unwrap();
        let p = softmax_rows(&z);
        let mut expect = 0.0;
        for (i, &r) in [2usize, 0].iter().enumerate() {
            for c in 0..5 {
                let pv = p.get(r, c);
                expect += pv * (pv.ln() - log_q.get(i, c));
            }
        }
        assert!((t.value(kl).item() - expect).abs() < 1e-12);
    }
    check(vec![z], move |t, v| t.kl_rows(v[0], &[2, 0], log_q.clone()).unwrap());
}

#[test]
fn frozen_leaves_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::filled(2, 2, 1.0), true);
    let b = tape.constant(Tensor::filled(2, 2, 2.0));
    let c = tape.matmul(a, b, false).unwrap();
    let s = tape.sum_all(c);
    let g = tape.backward(s).unwrap();
    assert!(g.get(a).is_some());
    assert!(g.get(b).is_none());
}
