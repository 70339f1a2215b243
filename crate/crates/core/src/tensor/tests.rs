use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// `sum(w * y)` with fixed pseudo-random weights keeps every output coupled
/// to the scalar without cancelling.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let w = random(tape.shape(y), seed ^ 0xABCD, 0.5, 1.5);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[test]
fn add_example() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
    let b = t.constant(Tensor::from_vec(vec![3.0, 4.0]));
    let c = t.add(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn mul_by_ones_is_identity() {
    let x = random(&[3, 5], 1, -2.0, 2.0);
    let mut t = Tape::new();
    let a = t.constant(x.clone());
    let o = t.constant(Tensor::ones_like(&x));
    let y = t.mul(a, o).unwrap();
    assert_eq!(t.value(y), &x);
}

#[test]
fn grad_of_sum_product_is_other_factor() {
    let a_val = random(&[4], 2, -1.0, 1.0);
    let b_val = random(&[4], 3, -1.0, 1.0);
    let mut t = Tape::new();
    let a = t.param(a_val);
    let b = t.constant(b_val.clone());
    let p = t.mul(a, b).unwrap();
    let s = t.sum(p);
    t.backward(s).unwrap();
    assert_eq!(t.grad(a).unwrap().data(), b_val.data());
    assert!(t.grad(b).is_none());
}

#[test]
fn broadcasting_rules() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let row = t.constant(Tensor::from_vec(vec![10., 20., 30.]));
    let s = t.add(a, row).unwrap();
    assert_eq!(t.value(s).data(), &[11., 22., 33., 14., 25., 36.]);
    let bad = t.constant(Tensor::from_vec(vec![1., 2.]));
    assert!(matches!(t.add(a, bad), Err(TensorError::ShapeMismatch { .. })));
    let scalar = t.constant(Tensor::scalar(2.0));
    let m = t.mul(a, scalar).unwrap();
    assert_eq!(t.value(m).data()[5], 12.0);
}

#[test]
fn broadcast_gradient_sums_over_repeats() {
    let err = finite_difference_check(
        |t, b| {
            let a = t.constant(random(&[3, 2, 4], 5, -1.0, 1.0));
            let y = t.mul(a, b)?;
            let y = t.div(y, b)?;
            let y = t.mul(y, b)?;
            let y = t.sub(y, b)?;
            weighted_sum(t, y, 6)
        },
        &random(&[2, 4], 7, 0.5, 1.5),
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn division_is_guarded() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::from_vec(vec![1.0, -1.0]));
    let z = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
    let q = t.div(a, z).unwrap();
    assert!(t.value(q).all_finite());
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
    let b = t.constant(Tensor::new(vec![2, 2], vec![5., 6., 7., 8.]).unwrap());
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.value(c).data(), &[19., 22., 43., 50.]);
    let eye = t.constant(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap());
    let ai = t.matmul(a, eye).unwrap();
    assert_eq!(t.value(ai).data(), t.value(a).data());
    let wrong = t.constant(Tensor::zeros(&[3, 2]));
    assert!(t.matmul(a, wrong).is_err());
}

#[test]
fn matmul_gradients_match_central_differences() {
    for seed in 0..10 {
        let b = random(&[4, 2], seed + 100, -1.0, 1.0);
        let err_a = finite_difference_check(
            |t, a| {
                let bv = t.constant(b.clone());
                let c = t.matmul(a, bv)?;
                weighted_sum(t, c, seed)
            },
            &random(&[3, 4], seed, -1.0, 1.0),
            1e-3,
        )
        .unwrap();
        let a = random(&[3, 4], seed, -1.0, 1.0);
        let err_b = finite_difference_check(
            |t, bv| {
                let av = t.constant(a.clone());
                let c = t.matmul(av, bv)?;
                weighted_sum(t, c, seed)
            },
            &b,
            1e-3,
        )
        .unwrap();
        assert!(err_a < 1e-3 && err_b < 1e-3, "seed {seed}: {err_a} {err_b}");
    }
}

#[test]
fn batched_matmul_and_permute_gradients() {
    let other = random(&[2, 3, 4, 5], 11, -1.0, 1.0);
    let err = finite_difference_check(
        |t, x| {
            let o = t.constant(other.clone());
            let xt = t.permute(x, &[0, 1, 3, 2])?;
            let y = t.matmul(xt, o)?;
            let y = t.reshape(y, &[6, 25])?;
            weighted_sum(t, y, 12)
        },
        &random(&[2, 3, 4, 5], 13, -1.0, 1.0),
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn permute_round_trip() {
    let x = random(&[2, 3, 4], 9, -1.0, 1.0);
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let p = t.permute(v, &[2, 0, 1]).unwrap();
    assert_eq!(t.shape(p), &[4, 2, 3]);
    let back = t.permute(p, &[1, 2, 0]).unwrap();
    assert_eq!(t.value(back), &x);
    assert!(t.permute(v, &[0, 0, 1]).is_err());
}

#[test]
fn reductions() {
    let mut t = Tape::<f32>::new();
    let a = t.param(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    let s = t.sum(a);
    assert_eq!(t.value(s).item(), 6.0);
    let c = t.constant(Tensor::full(&[4, 3], 2.5));
    let m = t.mean(c);
    assert_eq!(t.value(m).item(), 2.5);
    let m = t.mean(a);
    t.backward(m).unwrap();
    for g in t.grad(a).unwrap().data() {
        assert!((g - 1.0 / 3.0).abs() < 1e-7);
    }
    assert_eq!(
        t.sum_axis(a, 1).unwrap_err(),
        TensorError::AxisOutOfRange { axis: 1, rank: 1 }
    );
}

#[test]
fn axis_reductions_and_gradients() {
    let mut t = Tape::<f32>::new();
    let a = t.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let s0 = t.sum_axis(a, 0).unwrap();
    assert_eq!(t.value(s0).data(), &[5., 7., 9.]);
    let m1 = t.mean_axis(a, 1).unwrap();
    assert_eq!(t.value(m1).data(), &[2., 5.]);
    for axis in 0..3 {
        let err = finite_difference_check(
            |t, x| {
                let s = t.sum_axis(x, axis)?;
                let m = t.mean_axis(x, axis)?;
                let y = t.mul(s, m)?;
                weighted_sum(t, y, axis as u64)
            },
            &random(&[2, 3, 4], 40 + axis as u64, -1.0, 1.0),
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3, "axis {axis}: {err}");
    }
}

#[test]
fn activation_values() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::from_vec(vec![0.0]));
    let s = t.sigmoid(x);
    assert_eq!(t.value(s).item(), 0.5);
    let x = t.constant(Tensor::from_vec(vec![-1.0, 2.0]));
    let r = t.relu(x);
    assert_eq!(t.value(r).data(), &[0.0, 2.0]);
    let l = t.leaky_relu(x);
    assert_eq!(t.value(l).data(), &[-0.2, 2.0]);
}

#[test]
fn activations_match_central_differences_at_random_points() {
    let acts = [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Gelu,
        Activation::Exp,
        Activation::Log,
    ];
    for act in acts {
        let mut r = rng(17);
        let points: Vec<f64> = (0..100)
            .map(|_| {
                let v: f64 = r.random_range(0.05..3.0);
                match act {
                    Activation::Log => v,
                    _ if r.random_bool(0.5) => -v,
                    _ => v,
                }
            })
            .collect();
        let err = finite_difference_check(
            |t, x| {
                let y = t.activation(x, act);
                Ok(t.sum(y))
            },
            &Tensor::from_vec(points),
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-3, "{act:?}: {err}");
    }
}

#[test]
fn softmax_examples() {
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
    let s = t.softmax(x, 0).unwrap();
    assert_eq!(t.value(s).data(), &[0.5, 0.5]);
    let x = t.constant(Tensor::from_vec(vec![3.0, 1003.0]));
    let s = t.softmax(x, 0).unwrap();
    let v = t.value(s).data();
    assert!(v.iter().all(|x| x.is_finite()));
    assert!(v[0] < 1e-6 && (v[1] - 1.0).abs() < 1e-6);
    assert!(t.softmax(x, 1).is_err());
}

#[test]
fn softmax_rows_normalize() {
    let x = random(&[8, 8], 21, -5.0, 5.0).cast::<f32>();
    let mut t = Tape::<f32>::new();
    let v = t.constant(x);
    let s = t.softmax(v, 1).unwrap();
    for row in t.value(s).data().chunks(8) {
        let total: f64 = row.iter().map(|&x| x as f64).sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn softmax_gradient_any_axis() {
    for axis in 0..3 {
        let err = finite_difference_check(
            |t, x| {
                let y = t.softmax(x, axis)?;
                weighted_sum(t, y, 3)
            },
            &random(&[2, 3, 4], 50 + axis as u64, -2.0, 2.0),
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-3, "axis {axis}: {err}");
    }
}

#[test]
fn loss_examples() {
    let mut t = Tape::<f32>::new();
    let z = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
    let y = t.constant(Tensor::from_vec(vec![1.0, 0.3]));
    let l = t.bce_with_logits(z, y).unwrap();
    assert!((t.value(l).item() - std::f32::consts::LN_2).abs() < 1e-6);

    let x = t.constant(Tensor::from_vec(vec![1.5, -2.0]));
    let l = t.mse(x, x).unwrap();
    assert_eq!(t.value(l).item(), 0.0);

    let z = t.constant(Tensor::from_vec(vec![50.0, -50.0, 50.0, -50.0]));
    let y = t.constant(Tensor::from_vec(vec![0.0, 1.0, 1.0, 0.0]));
    let l = t.bce_with_logits(z, y).unwrap();
    let v = t.value(l).item();
    assert!(v.is_finite() && v >= 0.0);
    assert!((v - 25.0).abs() < 1e-3);

    let short = t.constant(Tensor::from_vec(vec![0.0]));
    assert!(t.mse(z, short).is_err());
}

#[test]
fn loss_gradients() {
    let target = random(&[3, 4], 61, 0.0, 1.0);
    for seed in 0..10 {
        let x = random(&[3, 4], seed, -3.0, 3.0);
        let bce = finite_difference_check(
            |t, z| {
                let y = t.constant(target.clone());
                t.bce_with_logits(z, y)
            },
            &x,
            1e-4,
        )
        .unwrap();
        let mse = finite_difference_check(
            |t, p| {
                let y = t.constant(target.clone());
                t.mse(p, y)
            },
            &x,
            1e-4,
        )
        .unwrap();
        let mse_target = finite_difference_check(
            |t, y| {
                let p = t.constant(x.clone());
                t.mse(p, y)
            },
            &target,
            1e-4,
        )
        .unwrap();
        assert!(bce < 1e-3 && mse < 1e-3 && mse_target < 1e-3, "{bce} {mse} {mse_target}");
    }
}

#[test]
fn layer_norm_gradient() {
    for seed in 0..10 {
        let gain = random(&[6], seed + 1, 0.5, 1.5);
        let shift = random(&[6], seed + 2, -0.5, 0.5);
        let err = finite_difference_check(
            |t, x| {
                let g = t.param(gain.clone());
                let s = t.param(shift.clone());
                let y = t.layer_norm(x, g, s, 1e-5)?;
                weighted_sum(t, y, seed)
            },
            &random(&[2, 3, 6], seed, -2.0, 2.0),
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn backward_examples() {
    let mut t = Tape::<f32>::new();
    let x = t.param(Tensor::scalar(2.0));
    let y = t.scale(x, 3.0);
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap().item(), 3.0);

    let mut t = Tape::<f32>::new();
    let x = t.param(Tensor::scalar(2.0));
    let y = t.add(x, x).unwrap();
    t.backward(y).unwrap();
    assert_eq!(t.grad(x).unwrap().item(), 2.0);

    let v = t.param(Tensor::from_vec(vec![1.0, 2.0]));
    assert_eq!(t.backward(v), Err(TensorError::NotScalar(vec![2])));
}

#[test]
fn finite_difference_oracle_examples() {
    let x = random(&[5], 70, -2.0, 2.0);
    let err = finite_difference_check(
        |t, x| {
            let sq = t.mul(x, x)?;
            Ok(t.sum(sq))
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    let err = finite_difference_check(
        |t, x| {
            let y = t.scale(x, 2.5);
            let y = t.add_scalar(y, 1.0);
            Ok(t.sum(y))
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut t = Tape::<f32>::new();
        let a = t.param(random(&[4, 6], 1, -1.0, 1.0).cast());
        let b = t.param(random(&[6, 3], 2, -1.0, 1.0).cast());
        let c = t.matmul(a, b).unwrap();
        let c = t.gelu(c);
        let s = t.softmax(c, 1).unwrap();
        let l = t.mean(s);
        t.backward(l).unwrap();
        (t.take_grad(a).unwrap(), t.take_grad(b).unwrap())
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a1), bits(&a2));
    assert_eq!(bits(&b1), bits(&b2));
}

#[test]
fn forward_ops_stay_finite_on_large_inputs() {
    let x = random(&[4, 8], 80, -1e3, 1e3).cast::<f32>();
    let mut t = Tape::<f32>::new();
    let v = t.constant(x);
    let mut outs = vec![];
    for act in [
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Gelu,
        Activation::Exp,
        Activation::Log,
    ] {
        outs.push(t.activation(v, act));
    }
    outs.push(t.softmax(v, 1).unwrap());
    let g = t.constant(Tensor::ones(&[8]));
    let s = t.constant(Tensor::zeros(&[8]));
    outs.push(t.layer_norm(v, g, s, 1e-5).unwrap());
    outs.push(t.div(v, v).unwrap());
    let vt = t.transpose(v).unwrap();
    outs.push(t.matmul(v, vt).unwrap());
    let target = t.constant(Tensor::full(&[4, 8], 1.0));
    outs.push(t.bce_with_logits(v, target).unwrap());
    for o in outs {
        assert!(t.value(o).all_finite());
    }
}
