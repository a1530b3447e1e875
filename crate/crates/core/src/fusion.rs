//! Cross-modal fusion heads.
//!
//! All strategies end in the same affine classifier producing two logits
//! (index 0 = non-depressed, 1 = depressed). Branch outputs are token
//! sequences `[tokens × D]`; pooled features are concatenated audio first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{attention_probs, Conv1dLayer};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{Bound, Init, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FusionStrategy {
    LateTransformer,
    IntermediateTransformer,
    IntermediateAttention,
    Add,
    Multiply,
    Concat,
    TensorFusion,
    AudioOnly,
    VideoOnly,
}

impl FusionStrategy {
    /// Ablation table order: baselines, proposed fusions, unimodal rows.
    pub const ALL: [FusionStrategy; 9] = [
        FusionStrategy::Add,
        FusionStrategy::Multiply,
        FusionStrategy::Concat,
        FusionStrategy::TensorFusion,
        FusionStrategy::LateTransformer,
        FusionStrategy::IntermediateTransformer,
        FusionStrategy::IntermediateAttention,
        FusionStrategy::AudioOnly,
        FusionStrategy::VideoOnly,
    ];

    /// The seven audio+video strategies.
    pub const MULTIMODAL: [FusionStrategy; 7] = [
        FusionStrategy::LateTransformer,
        FusionStrategy::IntermediateTransformer,
        FusionStrategy::IntermediateAttention,
        FusionStrategy::Add,
        FusionStrategy::Multiply,
        FusionStrategy::Concat,
        FusionStrategy::TensorFusion,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FusionStrategy::LateTransformer => "LT",
            FusionStrategy::IntermediateTransformer => "IT",
            FusionStrategy::IntermediateAttention => "IA",
            FusionStrategy::Add => "add",
            FusionStrategy::Multiply => "multi",
            FusionStrategy::Concat => "concat",
            FusionStrategy::TensorFusion => "tf",
            FusionStrategy::AudioOnly => "audio",
            FusionStrategy::VideoOnly => "video",
        }
    }

    pub fn uses_audio(self) -> bool {
        self != FusionStrategy::VideoOnly
    }

    pub fn uses_video(self) -> bool {
        self != FusionStrategy::AudioOnly
    }

    pub fn is_multimodal(self) -> bool {
        self.uses_audio() && self.uses_video()
    }

    /// Width of the feature vector fed to the classifier.
    pub fn head_width(self, d: usize) -> usize {
        match self {
            FusionStrategy::Add | FusionStrategy::Multiply => d,
            FusionStrategy::AudioOnly | FusionStrategy::VideoOnly => d,
            FusionStrategy::TensorFusion => (d + 1) * (d + 1),
            _ => 2 * d,
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionStrategy::ALL
            .into_iter()
            .find(|f| f.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown fusion `{}` (expected LT|IT|IA|add|multi|concat|tf|audio|video)",
                    s
                ))
            })
    }
}

impl TryFrom<String> for FusionStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FusionStrategy> for String {
    fn from(f: FusionStrategy) -> String {
        f.tag().to_string()
    }
}

/// Query, key and value projections of one attention direction, all `[D × D]`.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl CrossAttentionParams {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize) -> Result<Self> {
        Ok(CrossAttentionParams {
            wq: store.insert(format!("{name}.wq"), init.fan_in(&[d, d], d))?,
            wk: store.insert(format!("{name}.wk"), init.fan_in(&[d, d], d))?,
            wv: store.insert(format!("{name}.wv"), init.fan_in(&[d, d], d))?,
        })
    }
}

/// Affine map from a feature vector to two logits.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierHead {
    /// `[k × 2]`
    pub weight: ParamId,
    /// `[2]`
    pub bias: ParamId,
    pub width: usize,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, width: usize) -> Result<Self> {
        Ok(ClassifierHead {
            weight: store.insert(format!("{name}.weight"), init.fan_in(&[width, 2], width))?,
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[2]))?,
            width,
        })
    }
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub strategy: FusionStrategy,
    pub audio_convs: Vec<Conv1dLayer>,
    pub video_convs: Vec<Conv1dLayer>,
    /// Audio queries, visual keys and values.
    pub v_to_a: Option<CrossAttentionParams>,
    /// Visual queries, acoustic keys and values.
    pub a_to_v: Option<CrossAttentionParams>,
    pub post_audio: Option<Conv1dLayer>,
    pub post_video: Option<Conv1dLayer>,
    pub head: ClassifierHead,
}

impl FusionParams {
    /// `kernel` is the width of the token-axis convolutions (same-length padding).
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        strategy: FusionStrategy,
        d: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fusion conv kernel must be odd, got {}",
                kernel
            )));
        }
        let mut audio_convs = vec![];
        let mut video_convs = vec![];
        let (mut v_to_a, mut a_to_v) = (None, None);
        let (mut post_audio, mut post_video) = (None, None);
        let proposed = matches!(
            strategy,
            FusionStrategy::LateTransformer
                | FusionStrategy::IntermediateTransformer
                | FusionStrategy::IntermediateAttention
        );
        if proposed {
            let pad = kernel / 2;
            for (side, convs) in [("audio", &mut audio_convs), ("video", &mut video_convs)] {
                for i in 0..2 {
                    convs.push(Conv1dLayer::new(
                        store,
                        init,
                        &format!("fusion.{side}.conv{i}"),
                        d,
                        d,
                        kernel,
                        1,
                        pad,
                    )?);
                }
            }
            v_to_a = Some(CrossAttentionParams::new(store, init, "fusion.v_to_a", d)?);
            a_to_v = Some(CrossAttentionParams::new(store, init, "fusion.a_to_v", d)?);
            let post_kernel = match strategy {
                FusionStrategy::IntermediateTransformer => Some(kernel),
                FusionStrategy::IntermediateAttention => Some(1),
                _ => None,
            };
            if let Some(k) = post_kernel {
                let mut mk = |side: &str| {
                    Conv1dLayer::new(store, init, &format!("fusion.{side}.post"), d, d, k, 1, k / 2)
                };
                post_audio = Some(mk("audio")?);
                post_video = Some(mk("video")?);
            }
        }
        let head = ClassifierHead::new(store, init, "head", strategy.head_width(d))?;
        Ok(FusionParams {
            strategy,
            audio_convs,
            video_convs,
            v_to_a,
            a_to_v,
            post_audio,
            post_video,
            head,
        })
    }
}

/// `softmax(q_src·W_q·W_kᵀ·kv_srcᵀ/√d)·kv_src·W_v`.
pub fn cross_attention(
    tape: &mut Tape,
    q_src: Var,
    kv_src: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<Var> {
    check_shared_width(tape, q_src, kv_src)?;
    let probs = attention_map(tape, q_src, kv_src, wq, wk)?;
    let v = tape.matmul(kv_src, wv)?;
    tape.matmul(probs, v)
}

/// Row-softmax score matrix `[n_q × n_k]` without a value projection.
pub fn attention_map(tape: &mut Tape, q_src: Var, k_src: Var, wq: Var, wk: Var) -> Result<Var> {
    check_shared_width(tape, q_src, k_src)?;
    let q = tape.matmul(q_src, wq)?;
    let k = tape.matmul(k_src, wk)?;
    attention_probs(tape, q, k)
}

fn check_shared_width(tape: &Tape, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::dim(format!(
            "cross-modal inputs must share the embedding width: {:?} vs {:?}",
            sa, sb
        )));
    }
    Ok(())
}

/// Saliency-weighted average of `kv_feats` rows.
///
/// Key `j` receives saliency `s_j = Σ_i map[i, j]`, the total attention
/// mass it gets from all queries; output is `Σ_j s_j·kv_feats[j] / Σ_j s_j`.
pub fn attention_pool(tape: &mut Tape, map: Var, kv_feats: Var) -> Result<Var> {
    let (ms, fs) = (tape.shape(map).to_vec(), tape.shape(kv_feats).to_vec());
    if ms.len() != 2 || fs.len() != 2 || ms[1] != fs[0] {
        return Err(Error::dim(format!(
            "attention_pool: map {:?} vs features {:?}",
            ms, fs
        )));
    }
    let saliency = tape.sum_rows(map)?;
    let total = tape.sum(saliency)?;
    let weights = tape.div_scalar(saliency, total)?;
    let weights = tape.reshape(weights, &[1, ms[1]])?;
    let pooled = tape.matmul(weights, kv_feats)?;
    tape.reshape(pooled, &[fs[1]])
}

/// Affine head: `features[k] -> logits[2]`.
pub fn classify_head(tape: &mut Tape, p: &Bound, head: &ClassifierHead, features: Var) -> Result<Var> {
    let k = tape.value(features).numel();
    if tape.shape(features).len() != 1 || k != head.width {
        return Err(Error::Config(format!(
            "classifier expects {} features, got shape {:?}",
            head.width,
            tape.shape(features)
        )));
    }
    let row = tape.reshape(features, &[1, k])?;
    let y = tape.matmul(row, p[head.weight])?;
    let y = tape.add_row_bias(y, p[head.bias])?;
    tape.reshape(y, &[2])
}

fn conv_stack(tape: &mut Tape, p: &Bound, convs: &[Conv1dLayer], x: Var) -> Result<Var> {
    let mut h = x;
    for c in convs {
        h = c.forward_tokens(tape, p, h)?;
        h = tape.gelu(h)?;
    }
    Ok(h)
}

fn expect<T: Copy>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("fusion parameters lack {}", what)))
}

fn cross(tape: &mut Tape, p: &Bound, ca: CrossAttentionParams, q: Var, kv: Var) -> Result<Var> {
    cross_attention(tape, q, kv, p[ca.wq], p[ca.wk], p[ca.wv])
}

/// Conv stacks, cross-attention both ways, mean pooling, concat, classifier.
pub fn fuse_late_transformer(
    tape: &mut Tape,
    p: &Bound,
    params: &FusionParams,
    xv: Var,
    xa: Var,
) -> Result<Var> {
    let a = conv_stack(tape, p, &params.audio_convs, xa)?;
    let v = conv_stack(tape, p, &params.video_convs, xv)?;
    let oa = cross(tape, p, expect(params.v_to_a, "V->A attention")?, a, v)?;
    let ov = cross(tape, p, expect(params.a_to_v, "A->V attention")?, v, a)?;
    let pa = tape.mean_rows(oa)?;
    let pv = tape.mean_rows(ov)?;
    let f = tape.concat_rows(&[pa, pv])?;
    classify_head(tape, p, &params.head, f)
}

/// Two convs per branch, cross-attention both ways, residual fusion with
/// the branch features, one more conv, mean pooling, concat, classifier.
pub fn fuse_intermediate_transformer(
    tape: &mut Tape,
    p: &Bound,
    params: &FusionParams,
    xv: Var,
    xa: Var,
) -> Result<Var> {
    let a = conv_stack(tape, p, &params.audio_convs, xa)?;
    let v = conv_stack(tape, p, &params.video_convs, xv)?;
    let oa = cross(tape, p, expect(params.v_to_a, "V->A attention")?, a, v)?;
    let ov = cross(tape, p, expect(params.a_to_v, "A->V attention")?, v, a)?;
    let fa = tape.add(oa, a)?;
    let fv = tape.add(ov, v)?;
    let post_a = expect(params.post_audio, "audio post conv")?;
    let post_v = expect(params.post_video, "video post conv")?;
    let fa = conv_stack(tape, p, &[post_a], fa)?;
    let fv = conv_stack(tape, p, &[post_v], fv)?;
    let pa = tape.mean_rows(fa)?;
    let pv = tape.mean_rows(fv)?;
    let f = tape.concat_rows(&[pa, pv])?;
    classify_head(tape, p, &params.head, f)
}

/// Two convs per branch, attention maps both ways, saliency pooling of each
/// key sequence, a pointwise refinement, concat, classifier.
pub fn fuse_intermediate_attention(
    tape: &mut Tape,
    p: &Bound,
    params: &FusionParams,
    xv: Var,
    xa: Var,
) -> Result<Var> {
    let a = conv_stack(tape, p, &params.audio_convs, xa)?;
    let v = conv_stack(tape, p, &params.video_convs, xv)?;
    let va = expect(params.v_to_a, "V->A attention")?;
    let av = expect(params.a_to_v, "A->V attention")?;
    let map_va = attention_map(tape, a, v, p[va.wq], p[va.wk])?;
    let map_av = attention_map(tape, v, a, p[av.wq], p[av.wk])?;
    let vec_v = attention_pool(tape, map_va, v)?;
    let vec_a = attention_pool(tape, map_av, a)?;
    let ra = refine_vector(tape, p, expect(params.post_audio, "audio post conv")?, vec_a)?;
    let rv = refine_vector(tape, p, expect(params.post_video, "video post conv")?, vec_v)?;
    let f = tape.concat_rows(&[ra, rv])?;
    classify_head(tape, p, &params.head, f)
}

fn refine_vector(tape: &mut Tape, p: &Bound, conv: Conv1dLayer, x: Var) -> Result<Var> {
    let d = tape.value(x).numel();
    let seq = tape.reshape(x, &[1, d])?;
    let y = conv_stack(tape, p, &[conv], seq)?;
    tape.reshape(y, &[d])
}

/// Combines pooled branch vectors with a fixed operator, then classifies.
///
/// `Add`/`Multiply` are elementwise, `Concat` stacks audio then video,
/// `TensorFusion` flattens `[1; xa] ⊗ [1; xv]`.
pub fn fuse_baseline(
    tape: &mut Tape,
    p: &Bound,
    head: &ClassifierHead,
    strategy: FusionStrategy,
    xv_pooled: Var,
    xa_pooled: Var,
) -> Result<Var> {
    let f = baseline_features(tape, strategy, xv_pooled, xa_pooled)?;
    classify_head(tape, p, head, f)
}

/// The fused feature vector of a baseline strategy.
pub fn baseline_features(
    tape: &mut Tape,
    strategy: FusionStrategy,
    xv_pooled: Var,
    xa_pooled: Var,
) -> Result<Var> {
    if tape.shape(xv_pooled).len() != 1 || tape.shape(xv_pooled) != tape.shape(xa_pooled) {
        return Err(Error::dim(format!(
            "baseline fusion expects equal-length vectors, got {:?} and {:?}",
            tape.shape(xv_pooled),
            tape.shape(xa_pooled)
        )));
    }
    match strategy {
        FusionStrategy::Add => tape.add(xa_pooled, xv_pooled),
        FusionStrategy::Multiply => tape.mul(xa_pooled, xv_pooled),
        FusionStrategy::Concat => tape.concat_rows(&[xa_pooled, xv_pooled]),
        FusionStrategy::TensorFusion => {
            let one = Tensor::vector(vec![1.0])?;
            let one_a = tape.constant(one.clone());
            let one_v = tape.constant(one);
            let a1 = tape.concat_rows(&[one_a, xa_pooled])?;
            let v1 = tape.concat_rows(&[one_v, xv_pooled])?;
            let o = tape.outer(a1, v1)?;
            let n = tape.value(o).numel();
            tape.reshape(o, &[n])
        }
        other => Err(Error::arg(format!(
            "`{}` is not a baseline fusion",
            other
        ))),
    }
}

/// Logits for any strategy from branch token sequences `[n × D]`.
///
/// Baselines mean-pool both sequences first; unimodal strategies mean-pool
/// their own branch and ignore the other input, which may be `None`.
pub fn fuse_tokens(
    tape: &mut Tape,
    p: &Bound,
    params: &FusionParams,
    xv: Option<Var>,
    xa: Option<Var>,
) -> Result<Var> {
    let s = params.strategy;
    let missing = || Error::Config(format!("`{}` fusion is missing a branch input", s));
    match s {
        FusionStrategy::AudioOnly | FusionStrategy::VideoOnly => {
            let x = if s == FusionStrategy::AudioOnly { xa } else { xv }.ok_or_else(missing)?;
            let pooled = tape.mean_rows(x)?;
            classify_head(tape, p, &params.head, pooled)
        }
        _ => {
            let (v, a) = (xv.ok_or_else(missing)?, xa.ok_or_else(missing)?);
            match s {
                FusionStrategy::LateTransformer => fuse_late_transformer(tape, p, params, v, a),
                FusionStrategy::IntermediateTransformer => {
                    fuse_intermediate_transformer(tape, p, params, v, a)
                }
                FusionStrategy::IntermediateAttention => {
                    fuse_intermediate_attention(tape, p, params, v, a)
                }
                _ => {
                    let pa = tape.mean_rows(a)?;
                    let pv = tape.mean_rows(v)?;
                    fuse_baseline(tape, p, &params.head, s, pv, pa)
                }
            }
        }
    }
}
