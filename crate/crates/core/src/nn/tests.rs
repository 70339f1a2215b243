use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;
use crate::tensor::{finite_difference_check, Tape, Tensor};

const TOL: f64 = 1e-3;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, NnError> {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let shape = tape.shape(y).to_vec();
    let n = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| r.random_range(0.5..1.5)).collect()).unwrap();
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Input and parameter gradient checks for a block at several seeds.
fn check_block<B>(seeds: u64, input_shape: &[usize], build: impl Fn(&mut ParamStore, &mut Init) -> B, fwd: impl Fn(&B, &mut Tape<f64>, &Bound, Var) -> Result<Var, NnError>)
{
    for seed in 0..seeds {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let block = build(&mut store, &mut init);
        let store = store.cast::<f64>();
        let x = random(input_shape, 1000 + seed);
        let err_x = finite_difference_check(
            |t, xv| {
                let p = store.bind(t, false);
                let y = fwd(&block, t, &p, xv).map_err(|e| match e {
                    NnError::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
                weighted_sum(t, y, seed).map_err(|_| unreachable!())
            },
            &x,
            1e-4,
        )
        .unwrap();
        let err_p = param_gradient_check(
            &store,
            |t, p| {
                let xv = t.constant(x.clone());
                let y = fwd(&block, t, p, xv)?;
                weighted_sum(t, y, seed)
            },
            1e-4,
        )
        .unwrap();
        assert!(err_x < TOL, "seed {seed}: input grad error {err_x}");
        assert!(err_p < TOL, "seed {seed}: param grad error {err_p}");
    }
}

#[test]
fn linear_identity_and_hand_case() {
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 3, 3, &mut Init::new(0));
    *store.get_mut(lin.weight) = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let x = Tensor::new(vec![2, 3], vec![1., -2., 3., 0.5, 0.25, -1.]).unwrap();
    let xv = t.constant(x.clone());
    let y = lin.forward(&mut t, &p, xv).unwrap();
    assert_eq!(t.value(y), &x);

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 2, 1, &mut Init::new(0));
    *store.get_mut(lin.weight) = Tensor::new(vec![2, 1], vec![1., 2.]).unwrap();
    *store.get_mut(lin.bias) = Tensor::from_vec(vec![0.5]);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let xv = t.constant(Tensor::new(vec![1, 2], vec![1., 1.]).unwrap());
    let y = lin.forward(&mut t, &p, xv).unwrap();
    assert_eq!(t.value(y).data(), &[3.5]);

    let bad = t.constant(Tensor::zeros(&[1, 3]));
    assert!(lin.forward(&mut t, &p, bad).is_err());
}

#[test]
fn linear_gradients() {
    check_block(10, &[4, 5], |s, i| Linear::new(s, "l", 5, 3, i), |b, t, p, x| b.forward(t, p, x));
}

#[test]
fn layer_norm_definition() {
    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 4);
    *store.get_mut(ln.shift) = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let x = t.constant(Tensor::full(&[1, 4], 7.0));
    let y = ln.forward(&mut t, &p, x).unwrap();
    assert_eq!(t.value(y).data(), &[0.1, 0.2, 0.3, 0.4]);

    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 16);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let x = t.constant(random(&[3, 16], 5).map(|v| v * 4.0 + 2.0).cast());
    let y = ln.forward(&mut t, &p, x).unwrap();
    for row in t.value(y).data().chunks(16) {
        let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-3);
    }
    let bad = t.constant(Tensor::zeros(&[2, 3]));
    assert!(ln.forward(&mut t, &p, bad).is_err());
}

#[test]
fn layer_norm_gradients() {
    check_block(
        10,
        &[3, 6],
        |s, i| {
            let ln = LayerNorm::new(s, "ln", 6);
            // non-trivial affine parameters
            *s.get_mut(ln.gain) = i.glorot(&[6], 1, 1).map(|v| v + 1.0);
            *s.get_mut(ln.shift) = i.glorot(&[6], 1, 1);
            ln
        },
        |b, t, p, x| b.forward(t, p, x),
    );
}

#[test]
fn attention_single_token_returns_projected_value() {
    let mut store = ParamStore::new();
    let mut init = Init::new(3);
    let attn = MultiHeadSelfAttention::new(&mut store, "a", 4, 2, &mut init).unwrap();
    for id in [attn.w_v.bias, attn.w_o.bias] {
        *store.get_mut(id) = init.glorot(&[4], 1, 1);
    }
    let x = random(&[2, 1, 4], 9).cast::<f32>();
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let xv = t.constant(x.clone());
    let (out, w) = attn.forward_with_weights(&mut t, &p, xv).unwrap();
    assert!(t.value(w).data().iter().all(|&v| v == 1.0));

    let vproj = attn.w_v.forward(&mut t, &p, xv).unwrap();
    let expected = attn.w_o.forward(&mut t, &p, vproj).unwrap();
    for (a, b) in t.value(out).data().iter().zip(t.value(expected).data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut store = ParamStore::new();
    let attn = MultiHeadSelfAttention::new(&mut store, "a", 8, 4, &mut Init::new(1)).unwrap();
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let xv = t.constant(random(&[3, 5, 8], 2).map(|v| 3.0 * v).cast());
    let (out, w) = attn.forward_with_weights(&mut t, &p, xv).unwrap();
    assert_eq!(t.shape(out), &[3, 5, 8]);
    assert_eq!(t.shape(w), &[12, 5, 5]);
    for row in t.value(w).data().chunks(5) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}

#[test]
fn attention_two_tokens_identity_projections() {
    let mut store = ParamStore::new();
    let attn = MultiHeadSelfAttention::new(&mut store, "a", 2, 1, &mut Init::new(0)).unwrap();
    let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    for lin in [&attn.w_q, &attn.w_v, &attn.w_o] {
        *store.get_mut(lin.weight) = eye.clone();
    }
    *store.get_mut(attn.w_k) = eye.clone();
    let tokens = [[1.0f32, 0.0], [0.5, 1.0]];
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let xv = t.constant(Tensor::new(vec![1, 2, 2], tokens.concat()).unwrap());
    let (out, w) = attn.forward_with_weights(&mut t, &p, xv).unwrap();

    // Pairwise dots: <t0,t0>=1, <t0,t1>=0.5, <t1,t1>=1.25, scaled by 1/sqrt(2).
    let s = 1.0 / 2f64.sqrt();
    let row = |a: f64, b: f64| {
        let (ea, eb) = ((a * s).exp(), (b * s).exp());
        [ea / (ea + eb), eb / (ea + eb)]
    };
    let expected = [row(1.0, 0.5), row(0.5, 1.25)].concat();
    for (a, b) in t.value(w).data().iter().zip(&expected) {
        assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
    }
    // Output row i is the weighted average of the token vectors.
    let o = t.value(out).data();
    for i in 0..2 {
        for d in 0..2 {
            let e = expected[2 * i] * tokens[0][d] as f64 + expected[2 * i + 1] * tokens[1][d] as f64;
            assert!((o[2 * i + d] as f64 - e).abs() < 1e-6);
        }
    }
}

#[test]
fn attention_rejects_bad_shapes() {
    let mut store = ParamStore::new();
    assert!(MultiHeadSelfAttention::new(&mut store, "a", 6, 4, &mut Init::new(0)).is_err());
    let attn = MultiHeadSelfAttention::new(&mut store, "b", 8, 2, &mut Init::new(0)).unwrap();
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let xv = t.constant(Tensor::zeros(&[2, 3, 6]));
    assert!(attn.forward(&mut t, &p, xv).is_err());
}

#[test]
fn attention_gradients() {
    check_block(
        10,
        &[2, 3, 4],
        |s, i| MultiHeadSelfAttention::new(s, "a", 4, 2, i).unwrap(),
        |b, t, p, x| b.forward(t, p, x),
    );
}

#[test]
fn encoder_block_with_zeroed_outputs_is_double_layer_norm() {
    let mut store = ParamStore::new();
    let block = TransformerEncoderBlock::new(&mut store, "enc", 8, 2, 16, &mut Init::new(4)).unwrap();
    for id in [
        block.attention.w_o.weight,
        block.attention.w_o.bias,
        block.ffn_out.weight,
        block.ffn_out.bias,
    ] {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = Tensor::zeros(&shape);
    }
    let x = random(&[2, 3, 8], 5).map(|v| 2.0 * v + 0.3);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let xv = t.constant(x.cast());
    let y = block.forward(&mut t, &p, xv).unwrap();

    let ln = |row: &[f64]| -> Vec<f64> {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / row.len() as f64;
        row.iter().map(|x| (x - m) / (v + 1e-5).sqrt()).collect()
    };
    for (row, got) in x.data().chunks(8).zip(t.value(y).data().chunks(8)) {
        let expected = ln(&ln(row));
        for (e, g) in expected.iter().zip(got) {
            assert!((e - *g as f64).abs() < 1e-4, "{e} vs {g}");
        }
    }
}

#[test]
fn encoder_block_gradients() {
    check_block(
        10,
        &[2, 3, 4],
        |s, i| TransformerEncoderBlock::new(s, "enc", 4, 2, 6, i).unwrap(),
        |b, t, p, x| b.forward(t, p, x),
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn encoder_preserves_shape(batch in 1usize..4, tokens in 1usize..6, heads in 1usize..4, head_dim in 1usize..4) {
        let dim = heads * head_dim;
        let mut store = ParamStore::new();
        let block = TransformerEncoderBlock::new(&mut store, "enc", dim, heads, 2 * dim, &mut Init::new(7)).unwrap();
        let mut t = Tape::new();
        let p = store.bind(&mut t, false);
        let xv = t.constant(random(&[batch, tokens, dim], 3).cast());
        let y = block.forward(&mut t, &p, xv).unwrap();
        prop_assert_eq!(t.shape(y), &[batch, tokens, dim]);
        prop_assert!(t.value(y).all_finite());
    }
}

#[test]
fn se_gate_saturation_and_range() {
    let mut store = ParamStore::new();
    let se = SeBlock::new(&mut store, "se", 8, 4, &mut Init::new(2)).unwrap();
    let x = random(&[5, 8], 6).cast::<f32>();
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let xv = t.constant(x.clone());
    let g = se.gate(&mut t, &p, xv).unwrap();
    assert!(t.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));

    *store.get_mut(se.fc_expand.bias) = Tensor::full(&[8], 60.0);
    let mut t = Tape::new();
    let p = store.bind(&mut t, false);
    let xv = t.constant(x.clone());
    let y = se.forward(&mut t, &p, xv).unwrap();
    for (a, b) in t.value(y).data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(SeBlock::new(&mut store, "bad", 10, 4, &mut Init::new(0)).is_err());
}

#[test]
fn se_gradients() {
    check_block(10, &[3, 8], |s, i| SeBlock::new(s, "se", 8, 4, i).unwrap(), |b, t, p, x| b.forward(t, p, x));
}

#[test]
fn mlp_gradients() {
    check_block(
        10,
        &[3, 5],
        |s, i| Mlp::new(s, "mlp", &[5, 7, 4, 2], crate::tensor::Activation::LeakyRelu, i),
        |b, t, p, x| b.forward(t, p, x),
    );
}

fn tiny_store() -> ParamStore {
    let mut store = ParamStore::new();
    Linear::new(&mut store, "l", 3, 2, &mut Init::new(0));
    store
}

#[test]
fn adam_zero_gradient_is_fixed_point() {
    let mut store = tiny_store();
    let before = store.clone();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    for _ in 0..5 {
        let grads = store.tensors().iter().map(|t| Some(Tensor::zeros_like(t))).collect();
        adam.step(&mut store, grads).unwrap();
    }
    assert_eq!(store, before);
    assert_eq!(adam.t, 5);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut store = tiny_store();
    let before = store.clone();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let grads = store.tensors().iter().map(|t| Some(Tensor::ones_like(t))).collect();
    adam.step(&mut store, grads).unwrap();
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    for (a, b) in store.tensors().iter().zip(before.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(((x - y) as f64 + 1e-3).abs() < 1e-6);
        }
    }
}

#[test]
fn adam_second_moment_stays_nonnegative() {
    let mut store = tiny_store();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let mut r = Xoshiro256PlusPlus::seed_from_u64(5);
    for _ in 0..100 {
        let grads = store
            .tensors()
            .iter()
            .map(|t| {
                let data = (0..t.len()).map(|_| r.random_range(-10.0..10.0)).collect();
                Some(Tensor::new(t.shape().to_vec(), data).unwrap())
            })
            .collect();
        adam.step(&mut store, grads).unwrap();
        assert!(adam.second_moments().iter().flatten().all(|&v| v >= 0.0));
    }
}

#[test]
fn adam_requires_every_gradient() {
    let mut store = tiny_store();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let grads = vec![Some(Tensor::zeros(&[3, 2])), None];
    assert_eq!(adam.step(&mut store, grads), Err(NnError::MissingGrad("l.bias".into())));
}

#[test]
fn init_is_deterministic_glorot() {
    let build = |seed| {
        let mut s = ParamStore::new();
        Mlp::new(&mut s, "m", &[30, 128, 64, 1], crate::tensor::Activation::Relu, &mut Init::new(seed));
        s
    };
    assert_eq!(build(11), build(11));
    assert_ne!(build(11), build(12));
    for (name, t) in build(11).iter() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    let (fan_in, fan_out) = (60, 40);
    let w = Init::new(3).glorot(&[100, 100], fan_in, fan_out);
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    assert!(w.data().iter().all(|&v| (v as f64).abs() <= a));
    let mean = w.data().iter().map(|&v| v as f64).sum::<f64>() / 10_000.0;
    let sigma = a / (3.0f64 * 10_000.0).sqrt();
    assert!(mean.abs() < 3.0 * sigma, "mean {mean}, 3 sigma {}", 3.0 * sigma);
}
