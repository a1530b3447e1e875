//! Building blocks shared by both branches and the fusion heads.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{Bound, Init, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;

/// `x · W (+ b)` with `W` stored as `[in × out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.insert(format!("{name}.weight"), init.fan_in(&[inputs, outputs], inputs))?;
        let bias = if bias {
            Some(store.insert(format!("{name}.bias"), Tensor::zeros(&[outputs]))?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        match self.bias {
            Some(b) => tape.add_row_bias(y, p[b]),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.insert(format!("{name}.gain"), Tensor::full(&[dim], 1.0))?,
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias], LN_EPS)
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(store, init, &format!("{name}.fc1"), dim, hidden, true)?,
            fc2: Linear::new(store, init, &format!("{name}.fc2"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.gelu(h)?;
        self.fc2.forward(tape, p, h)
    }
}

/// `softmax(q·kᵀ/√d)·v` for one head.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let probs = attention_probs(tape, q, k)?;
    tape.matmul(probs, v)
}

/// `softmax(q·kᵀ/√d)` where `d` is the column count of `q`.
pub fn attention_probs(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let d = *tape.shape(q).last().unwrap_or(&1);
    if tape.shape(k).last() != Some(&d) {
        return Err(Error::dim(format!(
            "attention: query width {} vs key shape {:?}",
            d,
            tape.shape(k)
        )));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    tape.softmax_rows(scores)
}

/// Self-attention with full `D×D` projections split into heads after
/// projection. No output projection.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "embedding dim {} is not divisible by {} heads",
                dim, heads
            )));
        }
        Ok(MultiHeadAttention {
            wq: store.insert(format!("{name}.wq"), init.fan_in(&[dim, dim], dim))?,
            wk: store.insert(format!("{name}.wk"), init.fan_in(&[dim, dim], dim))?,
            wv: store.insert(format!("{name}.wv"), init.fan_in(&[dim, dim], dim))?,
            heads,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let q = tape.matmul(x, p[self.wq])?;
        let k = tape.matmul(x, p[self.wk])?;
        let v = tape.matmul(x, p[self.wv])?;
        if self.heads == 1 {
            return scaled_dot_attention(tape, q, k, v);
        }
        let dim = tape.shape(q)[1];
        let d = dim / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * d, (h + 1) * d)?;
            let kh = tape.slice_cols(k, h * d, (h + 1) * d)?;
            let vh = tape.slice_cols(v, h * d, (h + 1) * d)?;
            outs.push(scaled_dot_attention(tape, qh, kh, vh)?);
        }
        tape.concat_cols(&outs)
    }
}

/// 1-D convolution over a `[channels × time]` input with per-channel bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv1dLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Conv1dLayer {
            kernel: store.insert(
                format!("{name}.kernel"),
                init.fan_in(&[cout, cin, kernel], cin * kernel),
            )?,
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv1d(x, p[self.kernel], self.stride, self.padding)?;
        tape.add_col_bias(y, p[self.bias])
    }

    /// Applies the convolution along the token axis of a `[tokens × D]`
    /// sequence and returns `[tokens' × D']`.
    pub fn forward_tokens(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let xt = tape.transpose(x)?;
        let y = self.forward(tape, p, xt)?;
        tape.transpose(y)
    }
}

/// Average-pools the last axis of `x[rows × n]` to `target` columns when
/// `n` differs from `target`; identity otherwise.
pub fn adapt_last_axis(tape: &mut Tape, x: Var, target: usize) -> Result<Var> {
    if tape.shape(x)[1] == target {
        Ok(x)
    } else {
        tape.adaptive_avg_pool(x, target)
    }
}
