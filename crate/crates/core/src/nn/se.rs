use super::{Bound, Init, Linear, NnError, ParamStore};
use crate::tensor::{Element, Tape, Var};

/// Squeeze-and-excitation gate for per-row feature vectors.
///
/// A tabular row has no spatial extent to pool over, so the squeeze step is
/// the identity: `out = x * sigmoid(expand(relu(reduce(x))))`.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub fc_reduce: Linear,
    pub fc_expand: Linear,
    pub reduction: usize,
}

impl SeBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, reduction: usize, init: &mut Init) -> Result<Self, NnError> {
        if reduction == 0 || !dim.is_multiple_of(reduction) || dim < reduction {
            return Err(NnError::Config(format!(
                "SE dim {dim} must be a positive multiple of reduction {reduction}"
            )));
        }
        let hidden = dim / reduction;
        Ok(SeBlock {
            fc_reduce: Linear::new(store, &format!("{name}.reduce"), dim, hidden, init),
            fc_expand: Linear::new(store, &format!("{name}.expand"), hidden, dim, init),
            reduction,
        })
    }

    pub fn gate<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, NnError> {
        let h = self.fc_reduce.forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = self.fc_expand.forward(tape, p, h)?;
        Ok(tape.sigmoid(h))
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, NnError> {
        let g = self.gate(tape, p, x)?;
        Ok(tape.mul(x, g)?)
    }
}
