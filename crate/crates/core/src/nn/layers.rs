use super::{Bound, Init, NnError, ParamId, ParamStore};
use crate::tensor::{Activation, Element, Tape, Tensor, Var};

/// Affine map `x W + b` over the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, init: &mut Init) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init.glorot(&[in_dim, out_dim], in_dim, out_dim),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, NnError> {
        let y = tape.matmul(x, p.var(self.weight))?;
        Ok(tape.add(y, p.var(self.bias))?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim])),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[dim])),
            dim,
        }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, NnError> {
        Ok(tape.layer_norm(x, p.var(self.gain), p.var(self.shift), Self::EPS)?)
    }
}

/// Stack of linear layers with a shared hidden activation and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
}

impl Mlp {
    /// `dims` lists every width, input first: `[30, 128, 64, 1]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], hidden: Activation, init: &mut Init) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], init))
            .collect();
        Mlp { layers, hidden }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, NnError> {
        Ok(self.forward_with_features(tape, p, x)?.0)
    }

    /// Returns `(output, penultimate activations)`.
    pub fn forward_with_features<T: Element>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
    ) -> Result<(Var, Var), NnError> {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for layer in &self.layers[..last] {
            let z = layer.forward(tape, p, h)?;
            h = tape.activation(z, self.hidden);
        }
        let out = match self.layers.last() {
            Some(layer) => layer.forward(tape, p, h)?,
            None => h,
        };
        Ok((out, h))
    }
}
