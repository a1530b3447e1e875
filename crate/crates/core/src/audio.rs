//! Acoustic branch: time-frequency projection, overlapping 2-D patches with
//! interpolated positional embeddings, class and distillation tokens, and a
//! post-norm transformer encoder.
//!
//! Input is a `[F × T]` feature matrix (features × frames); output is
//! `[(M+2) × D]` with the class token in row 0 and the distillation token in
//! row 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{adapt_last_axis, Conv1dLayer, LayerNorm, Mlp, MultiHeadAttention};
use crate::numerics::{conv_out_len, Tape, Var};
use crate::params::{Bound, Init, ParamId, ParamStore, EMBED_STD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioFrontendConfig {
    /// Feature dimension `F` the frontend is built for.
    pub input_dim: usize,
    pub target_freq: usize,
    pub target_time: usize,
    pub patch: (usize, usize),
    pub stride: (usize, usize),
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub base_grid: (usize, usize),
    /// Odd kernel size of the frequency-projection convolution.
    pub proj_kernel: usize,
}

impl AudioFrontendConfig {
    /// Default desk-scale configuration: `F'=T'=16`, 4×4 patches with
    /// stride 4, `D=64`, two layers, four heads, `12×101` base grid.
    pub fn desk(input_dim: usize) -> Self {
        AudioFrontendConfig {
            input_dim,
            target_freq: 16,
            target_time: 16,
            patch: (4, 4),
            stride: (4, 4),
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_hidden: 128,
            base_grid: (12, 101),
            proj_kernel: 1,
        }
    }

    /// Patch grid `(h, w)`.
    pub fn grid(&self) -> Result<(usize, usize)> {
        Ok((
            conv_out_len(self.target_freq, self.patch.0, self.stride.0, 0)?,
            conv_out_len(self.target_time, self.patch.1, self.stride.1, 0)?,
        ))
    }

    /// Number of patches `M = h·w`.
    pub fn num_patches(&self) -> Result<usize> {
        self.grid().map(|(h, w)| h * w)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("audio frontend: {}", m)));
        if self.input_dim == 0 || self.target_freq == 0 || self.target_time == 0 {
            return bad("input_dim, target_freq and target_time must be positive");
        }
        if self.patch.0 == 0 || self.patch.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return bad("patch and stride sizes must be positive");
        }
        if self.target_freq < self.patch.0 || self.target_time < self.patch.1 {
            return bad("patch does not fit in the projected input");
        }
        if self.embed_dim == 0 || self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad("embed_dim must be a positive multiple of num_heads");
        }
        if self.num_layers == 0 || self.mlp_hidden == 0 {
            return bad("num_layers and mlp_hidden must be positive");
        }
        if self.base_grid.0 == 0 || self.base_grid.1 == 0 {
            return bad("base_grid must be positive");
        }
        if self.proj_kernel.is_multiple_of(2) {
            return bad("proj_kernel must be odd");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub mlp: Mlp,
    pub norm2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct AudioBranchParams {
    pub config: AudioFrontendConfig,
    pub proj_conv: Conv1dLayer,
    pub proj_norm: LayerNorm,
    /// `[D × 1 × p_f × p_t]`
    pub patch_kernels: ParamId,
    /// `[D × h_base × w_base]`
    pub pos_base: ParamId,
    pub x_cls: ParamId,
    pub x_dist: ParamId,
    pub e_cls: ParamId,
    pub e_dist: ParamId,
    pub layers: Vec<EncoderLayerParams>,
}

impl AudioBranchParams {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        config: &AudioFrontendConfig,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let proj_conv = Conv1dLayer::new(
            store,
            init,
            &format!("{prefix}.proj.conv"),
            config.input_dim,
            config.target_freq,
            config.proj_kernel,
            1,
            config.proj_kernel / 2,
        )?;
        let proj_norm = LayerNorm::new(store, &format!("{prefix}.proj.norm"), config.target_freq)?;
        let (pf, pt) = config.patch;
        let patch_kernels = store.insert(
            format!("{prefix}.patch"),
            init.fan_in(&[d, 1, pf, pt], pf * pt),
        )?;
        let (hb, wb) = config.base_grid;
        let pos_base = store.insert(format!("{prefix}.pos_base"), init.normal(&[d, hb, wb], EMBED_STD))?;
        let mut token = |name: &str| store.insert(format!("{prefix}.{name}"), init.normal(&[1, d], EMBED_STD));
        let x_cls = token("x_cls")?;
        let x_dist = token("x_dist")?;
        let e_cls = token("e_cls")?;
        let e_dist = token("e_dist")?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for n in 0..config.num_layers {
            let name = format!("{prefix}.layer{n}");
            layers.push(EncoderLayerParams {
                attn: MultiHeadAttention::new(store, init, &format!("{name}.attn"), d, config.num_heads)?,
                norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
                mlp: Mlp::new(store, init, &format!("{name}.mlp"), d, config.mlp_hidden)?,
                norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            });
        }
        Ok(AudioBranchParams {
            config: config.clone(),
            proj_conv,
            proj_norm,
            patch_kernels,
            pos_base,
            x_cls,
            x_dist,
            e_cls,
            e_dist,
            layers,
        })
    }
}

/// `[F × T] -> [1 × F' × T']`: frequency convolution, per-frame
/// normalization across the projected channels, adaptive time pooling.
pub fn time_freq_project(
    tape: &mut Tape,
    p: &Bound,
    params: &AudioBranchParams,
    xf: Var,
) -> Result<Var> {
    let shape = tape.shape(xf).to_vec();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::arg(format!(
            "audio input must be a non-empty [F x T] matrix, got {:?}",
            shape
        )));
    }
    let cfg = &params.config;
    let x = if shape[0] != cfg.input_dim {
        let xt = tape.transpose(xf)?;
        let xt = adapt_last_axis(tape, xt, cfg.input_dim)?;
        tape.transpose(xt)?
    } else {
        xf
    };
    let y = params.proj_conv.forward(tape, p, x)?;
    let y = tape.transpose(y)?;
    let y = params.proj_norm.forward(tape, p, y)?;
    let y = tape.transpose(y)?;
    let y = tape.adaptive_avg_pool(y, cfg.target_time)?;
    tape.reshape(y, &[1, cfg.target_freq, cfg.target_time])
}

/// Patch convolution, then flatten the `h×w` grid row-major: `[M × D]`.
pub fn patchify(tape: &mut Tape, x: Var, kernels: Var, stride: (usize, usize)) -> Result<Var> {
    let y = tape.conv2d_patches(x, kernels, stride)?;
    flatten_grid(tape, y)
}

/// Bilinear resize of the base grid to `(h, w)`, flattened like the patches.
pub fn interp_pos_embed(tape: &mut Tape, base: Var, target: (usize, usize)) -> Result<Var> {
    let y = tape.bilinear_resize2d(base, target)?;
    flatten_grid(tape, y)
}

fn flatten_grid(tape: &mut Tape, y: Var) -> Result<Var> {
    let s = tape.shape(y).to_vec();
    let flat = tape.reshape(y, &[s[0], s[1] * s[2]])?;
    tape.transpose(flat)
}

/// `[x_cls + e_cls; x_dist + e_dist; xp + xe]`.
pub fn assemble_sequence(
    tape: &mut Tape,
    xp: Var,
    xe: Var,
    tokens: [Var; 4],
) -> Result<Var> {
    let [x_cls, e_cls, x_dist, e_dist] = tokens;
    let cls = tape.add(x_cls, e_cls)?;
    let dist = tape.add(x_dist, e_dist)?;
    let patches = tape.add(xp, xe)?;
    tape.concat_rows(&[cls, dist, patches])
}

/// Post-norm layer: `U = LN(X + MHSA(X))`, `Z = LN(U + MLP(U))`.
pub fn encoder_layer(
    tape: &mut Tape,
    p: &Bound,
    layer: &EncoderLayerParams,
    x: Var,
) -> Result<Var> {
    let a = layer.attn.forward(tape, p, x)?;
    let u = tape.add(x, a)?;
    let u = layer.norm1.forward(tape, p, u)?;
    let m = layer.mlp.forward(tape, p, u)?;
    let z = tape.add(u, m)?;
    layer.norm2.forward(tape, p, z)
}

/// Full acoustic branch: `[F × T] -> [(M+2) × D]`.
pub fn audio_forward(
    tape: &mut Tape,
    p: &Bound,
    params: &AudioBranchParams,
    xf: Var,
) -> Result<Var> {
    let cfg = &params.config;
    let x = time_freq_project(tape, p, params, xf)?;
    let xp = patchify(tape, x, p[params.patch_kernels], cfg.stride)?;
    let xe = interp_pos_embed(tape, p[params.pos_base], cfg.grid()?)?;
    let mut h = assemble_sequence(
        tape,
        xp,
        xe,
        [
            p[params.x_cls],
            p[params.e_cls],
            p[params.x_dist],
            p[params.e_dist],
        ],
    )?;
    for layer in &params.layers {
        h = encoder_layer(tape, p, layer, h)?;
    }
    Ok(h)
}
