//! Visual branch: temporal downsampling, linear patch embedding, a class
//! token with learned positions, and residual transformer blocks.
//!
//! Input is a `[T × C]` feature sequence (time × features); output is
//! `[(L+1) × D]` with the class token in row 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{adapt_last_axis, Conv1dLayer, LayerNorm, Mlp, MultiHeadAttention};
use crate::numerics::{Tape, Var};
use crate::params::{Bound, Init, ParamId, ParamStore, EMBED_STD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoFrontendConfig {
    /// Feature dimension `C` the frontend is built for.
    pub input_dim: usize,
    /// Sequence length `L` after downsampling.
    pub fixed_length: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub down_kernel: usize,
    pub down_stride: usize,
    pub down_padding: usize,
}

impl VideoFrontendConfig {
    /// Default desk-scale configuration: `L=32, D=64`, two blocks, four heads.
    pub fn desk(input_dim: usize) -> Self {
        VideoFrontendConfig {
            input_dim,
            fixed_length: 32,
            embed_dim: 64,
            num_blocks: 2,
            num_heads: 4,
            mlp_hidden: 128,
            down_kernel: 3,
            down_stride: 1,
            down_padding: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("video frontend: {}", m)));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.fixed_length == 0 {
            return bad("fixed_length must be at least 1");
        }
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1");
        }
        if self.embed_dim == 0 || self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad("embed_dim must be a positive multiple of num_heads");
        }
        if self.mlp_hidden == 0 || self.down_kernel == 0 || self.down_stride == 0 {
            return bad("mlp_hidden, down_kernel and down_stride must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VideoBlockParams {
    pub attn: MultiHeadAttention,
    pub mlp_norm: LayerNorm,
    pub mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct VideoBranchParams {
    pub config: VideoFrontendConfig,
    pub down_conv: Conv1dLayer,
    pub down_norm: LayerNorm,
    /// `[C × D]`
    pub embed: ParamId,
    /// `[1 × D]`
    pub cls: ParamId,
    /// `[(L+1) × D]`
    pub pos: ParamId,
    pub blocks: Vec<VideoBlockParams>,
}

impl VideoBranchParams {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        config: &VideoFrontendConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (c, d) = (config.input_dim, config.embed_dim);
        let down_conv = Conv1dLayer::new(
            store,
            init,
            &format!("{prefix}.down.conv"),
            c,
            c,
            config.down_kernel,
            config.down_stride,
            config.down_padding,
        )?;
        let down_norm = LayerNorm::new(store, &format!("{prefix}.down.norm"), c)?;
        let embed = store.insert(format!("{prefix}.embed"), init.fan_in(&[c, d], c))?;
        let cls = store.insert(format!("{prefix}.cls"), init.normal(&[1, d], EMBED_STD))?;
        let pos = store.insert(
            format!("{prefix}.pos"),
            init.normal(&[config.fixed_length + 1, d], EMBED_STD),
        )?;
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for n in 0..config.num_blocks {
            let name = format!("{prefix}.block{n}");
            blocks.push(VideoBlockParams {
                attn: MultiHeadAttention::new(store, init, &format!("{name}.attn"), d, config.num_heads)?,
                mlp_norm: LayerNorm::new(store, &format!("{name}.mlp_norm"), d)?,
                mlp: Mlp::new(store, init, &format!("{name}.mlp"), d, config.mlp_hidden)?,
            });
        }
        Ok(VideoBranchParams {
            config: config.clone(),
            down_conv,
            down_norm,
            embed,
            cls,
            pos,
            blocks,
        })
    }
}

/// Convolution, feature normalization and adaptive pooling: `[T × C] -> [L × C]`.
///
/// Inputs whose feature count differs from the configured `C` are first
/// average-pooled along the feature axis.
pub fn downsample_temporal(
    tape: &mut Tape,
    p: &Bound,
    params: &VideoBranchParams,
    x: Var,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::arg(format!(
            "video input must be a non-empty [T x C] matrix, got {:?}",
            shape
        )));
    }
    let x = adapt_last_axis(tape, x, params.config.input_dim)?;
    let xt = tape.transpose(x)?;
    let y = params.down_conv.forward(tape, p, xt)?;
    let y = tape.transpose(y)?;
    let y = params.down_norm.forward(tape, p, y)?;
    let y = tape.transpose(y)?;
    let y = tape.adaptive_avg_pool(y, params.config.fixed_length)?;
    tape.transpose(y)
}

/// `x[L × C] · W_emb[C × D]`, no bias.
pub fn patch_embed(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    tape.matmul(x, w)
}

/// Row 0 becomes the class token, rows `1..=L` the embeddings, then the
/// positional encoding is added elementwise.
pub fn prepend_cls_and_pos(tape: &mut Tape, xe: Var, cls: Var, pos: Var) -> Result<Var> {
    let rows = tape.shape(xe)[0];
    if tape.shape(pos).first() != Some(&(rows + 1)) {
        return Err(Error::Config(format!(
            "positional encoding has shape {:?}, expected {} rows",
            tape.shape(pos),
            rows + 1
        )));
    }
    let seq = tape.concat_rows(&[cls, xe])?;
    tape.add(seq, pos)
}

/// `Z = MHSA(x)`, `R = Z + x`, output `MLP(LN(R)) + R`.
pub fn self_attention_block(
    tape: &mut Tape,
    p: &Bound,
    block: &VideoBlockParams,
    x: Var,
) -> Result<Var> {
    let z = block.attn.forward(tape, p, x)?;
    let r = tape.add(z, x)?;
    let h = block.mlp_norm.forward(tape, p, r)?;
    let h = block.mlp.forward(tape, p, h)?;
    tape.add(h, r)
}

/// Full visual branch: `[T × C] -> [(L+1) × D]`.
pub fn video_forward(
    tape: &mut Tape,
    p: &Bound,
    params: &VideoBranchParams,
    x: Var,
) -> Result<Var> {
    let xd = downsample_temporal(tape, p, params, x)?;
    let xe = patch_embed(tape, xd, p[params.embed])?;
    let mut h = prepend_cls_and_pos(tape, xe, p[params.cls], p[params.pos])?;
    for block in &params.blocks {
        h = self_attention_block(tape, p, block, h)?;
    }
    Ok(h)
}
