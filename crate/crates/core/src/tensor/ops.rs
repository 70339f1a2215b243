//! Forward kernels and gradient helpers shared by the tape.

use super::{Element, TensorError, STABILITY_EPS};

/// Exponent arguments are clamped to this magnitude so `exp` stays finite in f32.
const EXP_CLAMP: f64 = 80.0;
const LEAKY_SLOPE: f64 = 0.2;
const GELU_COEF: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Leaky ReLU with slope 0.2 on the negative side.
    LeakyRelu,
    Sigmoid,
    Tanh,
    /// Tanh approximation of GELU.
    Gelu,
    Exp,
    /// Natural log of `max(x, 0) + 1e-8`.
    Log,
}

pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    pub(crate) fn forward<T: Element>(self, x: T) -> T {
        let c = T::from_f64;
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    x * c(LEAKY_SLOPE)
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => {
                let k = c((2.0 / std::f64::consts::PI).sqrt());
                let u = k * (x + c(GELU_COEF) * x * x * x);
                c(0.5) * x * (T::one() + u.tanh())
            }
            Activation::Exp => x.max(c(-EXP_CLAMP)).min(c(EXP_CLAMP)).exp(),
            Activation::Log => (x.max(T::zero()) + c(STABILITY_EPS)).ln(),
        }
    }

    /// Derivative given the input `x` and the cached output `y`.
    pub(crate) fn derivative<T: Element>(self, x: T, y: T) -> T {
        let c = T::from_f64;
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    c(LEAKY_SLOPE)
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Gelu => {
                let k = c((2.0 / std::f64::consts::PI).sqrt());
                let u = k * (x + c(GELU_COEF) * x * x * x);
                let t = u.tanh();
                let du = k * (T::one() + c(3.0 * GELU_COEF) * x * x);
                c(0.5) * (T::one() + t) + c(0.5) * x * (T::one() - t * t) * du
            }
            Activation::Exp => {
                if x.abs() <= c(EXP_CLAMP) {
                    y
                } else {
                    T::zero()
                }
            }
            Activation::Log => {
                if x >= T::zero() {
                    T::one() / (x + c(STABILITY_EPS))
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Denominator with the stability guard pushed away from zero.
pub(crate) fn guarded<T: Element>(d: T) -> T {
    let eps = T::from_f64(STABILITY_EPS);
    if d >= T::zero() {
        d + eps
    } else {
        d - eps
    }
}

/// Whether `b` can be broadcast onto `a` by repeating along leading dims.
pub(crate) fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    let b_len: usize = b.iter().product();
    if b_len == 1 {
        return true;
    }
    let first = b.iter().position(|&d| d != 1).unwrap_or(b.len());
    let b = &b[first..];
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

pub(crate) fn check_axis(axis: usize, rank: usize) -> Result<(), TensorError> {
    if axis >= rank {
        return Err(TensorError::AxisOutOfRange { axis, rank });
    }
    Ok(())
}

/// (outer, n, inner) decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Flat input index for every flat output index of a permutation.
pub(crate) fn permute_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    if total == 0 {
        return map;
    }
    if rank == 0 {
        map.push(0);
        return map;
    }
    // Odometer over the output index; the innermost dimension is a strided run.
    let (inner, inner_stride) = (out_shape[rank - 1], strides[rank - 1]);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    loop {
        map.extend((0..inner).map(|j| offset + j * inner_stride));
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return map;
            }
            d -= 1;
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= idx[d] * strides[d];
            idx[d] = 0;
        }
    }
}

/// Batched `c[b] = a[b] * b[b]` where `b` may be shared across the batch.
pub(crate) fn matmul_kernel<T: Element>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_shared: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        let a_blk = &a[bi * m * k..(bi + 1) * m * k];
        let b_blk = if b_shared {
            b
        } else {
            &b[bi * k * n..(bi + 1) * k * n]
        };
        let c_blk = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let c_row = &mut c_blk[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a_blk[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let b_row = &b_blk[p * n..(p + 1) * n];
                for (c, &bv) in c_row.iter_mut().zip(b_row) {
                    *c += av * bv;
                }
            }
        }
    }
    out
}

/// Numerically stable `log(1 + exp(x))`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
