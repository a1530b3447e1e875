//! Forward kernels on plain tensors.
//!
//! These are the value-level definitions. The [`Tape`](super::Tape) calls
//! them for its forward pass and pairs each with a backward rule.

use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};

/// `floor((len + 2·padding − kernel) / stride) + 1`.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::arg("stride must be at least 1"));
    }
    if kernel == 0 {
        return Err(Error::arg("kernel size must be at least 1"));
    }
    let padded = len + 2 * padding;
    if padded < kernel {
        return Err(Error::dim(format!(
            "kernel {} larger than padded input {}",
            kernel, padded
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (k2, n) = matrix_dims(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: [{}x{}] x [{}x{}]",
            m, k, k2, n
        )));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    finish(vec![m, n], out, "matmul")
}

/// `out += a[m×k] · b[k×n]`
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_bt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += a[k×m]ᵀ · b[k×n]`
pub(crate) fn matmul_at_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = matrix_dims(a, "transpose")?;
    let src = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Row-wise softmax over the last axis, with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let n = last_dim(x)?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    finish(x.shape().to_vec(), out, "softmax_rows")
}

pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes each position over the last axis, then applies `gain` and `bias`.
///
/// Zero-variance rows with `eps == 0` normalize to zero instead of dividing
/// by zero.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_cached(x, gain, bias, eps).map(|(t, _)| t)
}

pub(crate) fn layer_norm_cached(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let d = last_dim(x)?;
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::dim(format!(
            "layer_norm over {} features with gain {:?} and bias {:?}",
            d,
            gain.shape(),
            bias.shape()
        )));
    }
    if !(eps >= 0.0) {
        return Err(Error::arg("layer_norm eps must be non-negative"));
    }
    let rows = x.numel() / d;
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; x.numel()];
    let (g, b) = (gain.data(), bias.data());
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let denom = var + eps;
        let is = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
    let t = finish(x.shape().to_vec(), out, "layer_norm")?;
    Ok((t, LayerNormCache { xhat, inv_std }))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    let out = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    finish(x.shape().to_vec(), out, "gelu")
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// 1-D cross-correlation of `x[C_in×T]` with `kernels[C_out×C_in×K]`, zero padded.
pub fn conv1d(x: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (cin, t) = matrix_dims(x, "conv1d input")?;
    let (cout, kcin, k) = conv1d_kernel_dims(kernels)?;
    if kcin != cin {
        return Err(Error::dim(format!(
            "conv1d kernel expects {} input channels, input has {}",
            kcin, cin
        )));
    }
    let tout = conv_out_len(t, k, stride, padding)?;
    let (xd, kd) = (x.data(), kernels.data());
    let mut out = vec![0.0; cout * tout];
    for o in 0..cout {
        for c in 0..cin {
            let krow = &kd[(o * cin + c) * k..(o * cin + c + 1) * k];
            let xrow = &xd[c * t..(c + 1) * t];
            for to in 0..tout {
                let base = (to * stride) as isize - padding as isize;
                let mut acc = 0.0;
                for (j, kv) in krow.iter().enumerate() {
                    let ti = base + j as isize;
                    if ti >= 0 && (ti as usize) < t {
                        acc += kv * xrow[ti as usize];
                    }
                }
                out[o * tout + to] += acc;
            }
        }
    }
    finish(vec![cout, tout], out, "conv1d")
}

pub(crate) fn conv1d_kernel_dims(k: &Tensor) -> Result<(usize, usize, usize)> {
    match k.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::dim(format!(
            "conv1d kernels must be [C_out, C_in, K], got {:?}",
            s
        ))),
    }
}

/// Strided 2-D patch convolution: `x[C×F×T]` with `kernels[D×C×p_f×p_t]`
/// gives `[D×h×w]`, `h = floor((F−p_f)/s_f)+1`, `w = floor((T−p_t)/s_t)+1`.
pub fn conv2d_patches(x: &Tensor, kernels: &Tensor, stride: (usize, usize)) -> Result<Tensor> {
    let (c, f, t) = conv2d_input_dims(x)?;
    let (d, kc, pf, pt) = conv2d_kernel_dims(kernels)?;
    if kc != c {
        return Err(Error::dim(format!(
            "patch kernel expects {} channels, input has {}",
            kc, c
        )));
    }
    let h = conv_out_len(f, pf, stride.0, 0)?;
    let w = conv_out_len(t, pt, stride.1, 0)?;
    let (xd, kd) = (x.data(), kernels.data());
    let mut out = vec![0.0; d * h * w];
    for o in 0..d {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for ch in 0..c {
                    for a in 0..pf {
                        let xr = ch * f * t + (i * stride.0 + a) * t + j * stride.1;
                        let kr = ((o * c + ch) * pf + a) * pt;
                        for b in 0..pt {
                            acc += kd[kr + b] * xd[xr + b];
                        }
                    }
                }
                out[(o * h + i) * w + j] = acc;
            }
        }
    }
    finish(vec![d, h, w], out, "conv2d_patches")
}

pub(crate) fn conv2d_input_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, f, t] => Ok((*c, *f, *t)),
        s => Err(Error::dim(format!(
            "conv2d input must be [C, F, T], got {:?}",
            s
        ))),
    }
}

pub(crate) fn conv2d_kernel_dims(k: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match k.shape() {
        [d, c, pf, pt] => Ok((*d, *c, *pf, *pt)),
        s => Err(Error::dim(format!(
            "patch kernels must be [D, C, p_f, p_t], got {:?}",
            s
        ))),
    }
}

/// Bin `i` of `target` covers `[floor(i·T/target), ceil((i+1)·T/target))`.
pub fn pool_bin(i: usize, len: usize, target: usize) -> (usize, usize) {
    let start = i * len / target;
    let end = ((i + 1) * len).div_ceil(target);
    (start, end)
}

/// Adaptive average pooling of `x[C×T]` along the last axis to `target` bins.
pub fn adaptive_avg_pool(x: &Tensor, target: usize) -> Result<Tensor> {
    if target == 0 {
        return Err(Error::arg("adaptive_avg_pool target must be at least 1"));
    }
    let (c, t) = matrix_dims(x, "adaptive_avg_pool")?;
    if t == 0 {
        return Err(Error::arg("adaptive_avg_pool input has no time steps"));
    }
    let xd = x.data();
    let mut out = vec![0.0; c * target];
    for ch in 0..c {
        let row = &xd[ch * t..(ch + 1) * t];
        for i in 0..target {
            let (s, e) = pool_bin(i, t, target);
            out[ch * target + i] = row[s..e].iter().sum::<f64>() / (e - s) as f64;
        }
    }
    finish(vec![c, target], out, "adaptive_avg_pool")
}

/// Align-corners source coordinate for output index `i`.
pub(crate) fn align_corners_coord(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    if dst <= 1 || src <= 1 {
        return (0, 0, 0.0);
    }
    let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize of `x[D×h0×w0]` to `[D×h×w]` with aligned corners.
pub fn bilinear_resize2d(x: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (d, h0, w0) = conv2d_input_dims(x)?;
    let (h, w) = target;
    if h0 == 0 || w0 == 0 || h == 0 || w == 0 {
        return Err(Error::arg("bilinear_resize2d sizes must be positive"));
    }
    let xd = x.data();
    let mut out = vec![0.0; d * h * w];
    for i in 0..h {
        let (y0, y1, wy) = align_corners_coord(i, h0, h);
        for j in 0..w {
            let (x0, x1, wx) = align_corners_coord(j, w0, w);
            for c in 0..d {
                let base = c * h0 * w0;
                let v = (1.0 - wy) * (1.0 - wx) * xd[base + y0 * w0 + x0]
                    + (1.0 - wy) * wx * xd[base + y0 * w0 + x1]
                    + wy * (1.0 - wx) * xd[base + y1 * w0 + x0]
                    + wy * wx * xd[base + y1 * w0 + x1];
                out[(c * h + i) * w + j] = v;
            }
        }
    }
    finish(vec![d, h, w], out, "bilinear_resize2d")
}

pub(crate) fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::dim(format!("{} expects a matrix, got {:?}", what, s))),
    }
}

pub(crate) fn last_dim(t: &Tensor) -> Result<usize> {
    match t.shape().last() {
        Some(&d) if d > 0 => Ok(d),
        _ => Err(Error::dim(format!(
            "expected a non-empty last axis, got {:?}",
            t.shape()
        ))),
    }
}

pub(crate) fn finish(shape: Vec<usize>, data: Vec<f64>, what: &str) -> Result<Tensor> {
    check_finite(&data, what)?;
    Ok(Tensor::from_parts(shape, data))
}
