use serde::{Deserialize, Serialize};

use super::{check_width, require_both, sigmoid, ClassifierError, Scorer};
use crate::data::{Dataset, Matrix};
use crate::tensor::{Element, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { epochs: 500, lr: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl LogisticModel {
    pub fn zeros(n_features: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; n_features],
            bias: 0.0,
        }
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.weights.iter().zip(row).map(|(&w, x)| w as f64 * x).sum::<f64>() + self.bias as f64
    }
}

impl Scorer for LogisticModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, rows: &Matrix) -> Result<Vec<f64>, ClassifierError> {
        check_width(self.weights.len(), rows)?;
        Ok(rows.iter_rows().map(|r| sigmoid(self.margin(r))).collect())
    }
}

/// Mean BCE of `sigmoid(x w + b)` against `y`; `x` is `[n, d]`, `w` is
/// `[d, 1]`, `b` is `[1]` and `y` is `[n, 1]`.
pub fn lr_loss<T: Element>(tape: &mut Tape<T>, x: Var, y: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    let xw = tape.matmul(x, w)?;
    let logits = tape.add(xw, b)?;
    tape.bce_with_logits(logits, y)
}

/// Full-batch gradient descent from zero weights, so the result does not
/// depend on any seed.
pub fn lr_train(d: &Dataset, cfg: &LrConfig) -> Result<LogisticModel, ClassifierError> {
    require_both(d)?;
    let n = d.len();
    let k = d.n_features();
    let x = Tensor::new(vec![n, k], d.features.to_f32())?;
    let y = Tensor::new(vec![n, 1], d.labels.iter().map(|&l| l as f32).collect())?;
    let mut w = Tensor::<f32>::zeros(&[k, 1]);
    let mut b = Tensor::<f32>::zeros(&[1]);
    let lr = cfg.lr as f32;
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let wv = tape.param(w.clone());
        let bv = tape.param(b.clone());
        let loss = lr_loss(&mut tape, xv, yv, wv, bv)?;
        tape.backward(loss)?;
        let gw = tape.take_grad(wv).expect("weight gradient");
        let gb = tape.take_grad(bv).expect("bias gradient");
        for (p, g) in w.data_mut().iter_mut().zip(gw.data()) {
            *p -= lr * g;
        }
        b.data_mut()[0] -= lr * gb.data()[0];
    }
    Ok(LogisticModel {
        weights: w.into_data(),
        bias: b.data()[0],
    })
}
