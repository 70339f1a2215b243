use super::{Bound, Init, LayerNorm, Linear, NnError, ParamId, ParamStore};
use crate::tensor::{Element, Tape, TensorError, Var};

/// Unmasked scaled dot-product self-attention over `[batch, tokens, dim]`.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub num_heads: usize,
    pub head_dim: usize,
    pub w_q: Linear,
    /// Key projection weight only: a key bias shifts every score in a query
    /// row by the same amount, which softmax cancels.
    pub w_k: ParamId,
    pub w_v: Linear,
    pub w_o: Linear,
}

impl MultiHeadSelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, num_heads: usize, init: &mut Init) -> Result<Self, NnError> {
        if num_heads == 0 || !dim.is_multiple_of(num_heads) {
            return Err(NnError::Config(format!(
                "model dim {dim} is not a multiple of {num_heads} heads"
            )));
        }
        Ok(MultiHeadSelfAttention {
            num_heads,
            head_dim: dim / num_heads,
            w_q: Linear::new(store, &format!("{name}.q"), dim, dim, init),
            w_k: store.add(format!("{name}.k.weight"), init.glorot(&[dim, dim], dim, dim)),
            w_v: Linear::new(store, &format!("{name}.v"), dim, dim, init),
            w_o: Linear::new(store, &format!("{name}.o"), dim, dim, init),
        })
    }

    pub fn model_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, NnError> {
        Ok(self.forward_with_weights(tape, p, x)?.0)
    }

    /// Also returns the attention weights, shaped `[batch * heads, tokens, tokens]`.
    pub fn forward_with_weights<T: Element>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
    ) -> Result<(Var, Var), NnError> {
        let shape = tape.shape(x).to_vec();
        let dim = self.model_dim();
        if shape.len() != 3 || shape[2] != dim {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                left: shape,
                right: vec![dim],
            }
            .into());
        }
        let (b, t, h, hd) = (shape[0], shape[1], self.num_heads, self.head_dim);

        let heads = |tape: &mut Tape<T>, v: Var| -> Result<Var, TensorError> {
            let v = tape.reshape(v, &[b, t, h, hd])?;
            let v = tape.permute(v, &[0, 2, 1, 3])?;
            tape.reshape(v, &[b * h, t, hd])
        };
        let q = self.w_q.forward(tape, p, x)?;
        let q = heads(tape, q)?;
        let k = tape.matmul(x, p.var(self.w_k))?;
        let k = heads(tape, k)?;
        let v = self.w_v.forward(tape, p, x)?;
        let v = heads(tape, v)?;

        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
        let weights = tape.softmax(scores, 2)?;
        let ctx = tape.matmul(weights, v)?;

        let ctx = tape.reshape(ctx, &[b, h, t, hd])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, t, dim])?;
        let out = self.w_o.forward(tape, p, ctx)?;
        Ok((out, weights))
    }
}

/// Post-norm encoder layer: `x' = LN(x + Attn(x))`, `out = LN(x' + FFN(x'))`.
#[derive(Debug, Clone)]
pub struct TransformerEncoderBlock {
    pub attention: MultiHeadSelfAttention,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

impl TransformerEncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        num_heads: usize,
        ffn_hidden: usize,
        init: &mut Init,
    ) -> Result<Self, NnError> {
        Ok(TransformerEncoderBlock {
            attention: MultiHeadSelfAttention::new(store, &format!("{name}.attn"), dim, num_heads, init)?,
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), dim, ffn_hidden, init),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), ffn_hidden, dim, init),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, NnError> {
        let a = self.attention.forward(tape, p, x)?;
        let r = tape.add(x, a)?;
        let x1 = self.norm1.forward(tape, p, r)?;
        let f = self.ffn_in.forward(tape, p, x1)?;
        let f = tape.gelu(f);
        let f = self.ffn_out.forward(tape, p, f)?;
        let r = tape.add(x1, f)?;
        self.norm2.forward(tape, p, r)
    }
}
