//! Self-check suite: gradient checks, shape contracts and oracle
//! comparisons that a correct build must pass. Each check yields one
//! pass/fail line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{audio_forward, interp_pos_embed, AudioBranchParams, AudioFrontendConfig};
use crate::data::{plan_folds, generate_synthetic, SynthMode, SynthSpec};
use crate::error::Result;
use crate::fusion::{
    attention_map, baseline_features, cross_attention, fuse_tokens, FusionParams, FusionStrategy,
};
use crate::metrics::{compute_metrics, ConfusionMatrix};
use crate::model::{Model, ModelConfig};
use crate::numerics::gradcheck::check_gradients_with;
use crate::numerics::{conv_out_len, GradFault, Tape, Tensor, Var};
use crate::params::{Bound, Init, ParamStore};
use crate::train::{adam_step, AdamState, Checkpoint, TrainConfig};
use crate::video::{video_forward, VideoBranchParams, VideoFrontendConfig};

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 3e-5;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {}", e)),
        }
    }

    /// `PASS name: detail` / `FAIL name: detail`.
    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Seeds per gradient check.
    pub seeds: u64,
    /// Random forwards for the attention normalization check.
    pub forwards: usize,
    /// Deliberately wrong backward rule, to prove the suite notices.
    pub fault: Option<GradFault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seeds: 5,
            forwards: 20,
            fault: None,
        }
    }
}

/// `C=4, L=5, D=8`, two blocks, two heads.
pub fn toy_video_config() -> VideoFrontendConfig {
    VideoFrontendConfig {
        input_dim: 4,
        fixed_length: 5,
        embed_dim: 8,
        num_blocks: 2,
        num_heads: 2,
        mlp_hidden: 16,
        down_kernel: 3,
        down_stride: 1,
        down_padding: 1,
    }
}

/// `F=6 -> F'=8, T'=8`, 4×4 patches with stride 4, `D=8`, two layers.
pub fn toy_audio_config() -> AudioFrontendConfig {
    AudioFrontendConfig {
        input_dim: 6,
        target_freq: 8,
        target_time: 8,
        patch: (4, 4),
        stride: (4, 4),
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
        mlp_hidden: 16,
        base_grid: (3, 4),
        proj_kernel: 3,
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite")
}

fn store_tensors(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, t)| t.clone()).collect()
}

/// Scalar probe `Σ w ⊙ y` with a fixed random `w`, so every output
/// coordinate reaches the loss.
fn probe(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = random_tensor(&mut rng, tape.shape(y), 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn fault_tape(fault: Option<GradFault>) -> Option<Box<dyn Fn() -> Tape>> {
    fault.map(|f| Box::new(move || Tape::with_fault(f)) as Box<dyn Fn() -> Tape>)
}

/// Max relative gradient error of the visual branch (parameters and input).
pub fn video_grad_error(seed: u64, fault: Option<GradFault>) -> Result<f64> {
    let cfg = toy_video_config();
    let mut store = ParamStore::new();
    let params = VideoBranchParams::new(&mut store, &mut Init::new(seed), "video", &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.gen_range(3..=12);
    let mut inputs = store_tensors(&store);
    inputs.push(random_tensor(&mut rng, &[t, cfg.input_dim], 1.0));
    let n = store.len();
    let maker = fault_tape(fault);
    let report = check_gradients_with(&inputs, FD_STEP, maker.as_deref(), |tape, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        let y = video_forward(tape, &p, &params, v[n])?;
        probe(tape, y, seed)
    })?;
    Ok(report.max_rel_error())
}

/// Max relative gradient error of the acoustic branch.
pub fn audio_grad_error(seed: u64, fault: Option<GradFault>) -> Result<f64> {
    let cfg = toy_audio_config();
    let mut store = ParamStore::new();
    let params = AudioBranchParams::new(&mut store, &mut Init::new(seed), "audio", &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.gen_range(5..=14);
    let mut inputs = store_tensors(&store);
    inputs.push(random_tensor(&mut rng, &[cfg.input_dim, t], 1.0));
    let n = store.len();
    let maker = fault_tape(fault);
    let report = check_gradients_with(&inputs, FD_STEP, maker.as_deref(), |tape, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        let y = audio_forward(tape, &p, &params, v[n])?;
        probe(tape, y, seed)
    })?;
    Ok(report.max_rel_error())
}

/// Max relative gradient error of one fusion path (including its
/// classifier) under a cross-entropy loss, from random token sequences.
pub fn fusion_grad_error(strategy: FusionStrategy, seed: u64, fault: Option<GradFault>) -> Result<f64> {
    let d = 6;
    let mut store = ParamStore::new();
    let params = FusionParams::new(&mut store, &mut Init::new(seed), strategy, d, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (na, nv) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
    let label = rng.gen_range(0..2);
    let mut inputs = store_tensors(&store);
    inputs.push(random_tensor(&mut rng, &[na, d], 1.0));
    inputs.push(random_tensor(&mut rng, &[nv, d], 1.0));
    let n = store.len();
    let maker = fault_tape(fault);
    let report = check_gradients_with(&inputs, FD_STEP, maker.as_deref(), |tape, v| {
        let p = Bound::from_vars(v[..n].to_vec());
        let y = fuse_tokens(tape, &p, &params, Some(v[n + 1]), Some(v[n]))?;
        tape.cross_entropy(y, label)
    })?;
    Ok(report.max_rel_error())
}

/// Directional-derivative check of a whole model: `∇L·u` against
/// `(L(θ+hu) − L(θ−hu))/2h` for a random unit direction `u`.
pub fn model_directional_error(strategy: FusionStrategy, seed: u64, fault: Option<GradFault>) -> Result<f64> {
    let mut cfg = ModelConfig::compact(6, 4, strategy);
    cfg.video = toy_video_config();
    cfg.audio = toy_audio_config();
    let model = Model::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let audio = random_tensor(&mut rng, &[6, 10], 1.0);
    let video = random_tensor(&mut rng, &[9, 4], 1.0);
    let label = rng.gen_range(0..2);
    let (_, grads) = model.loss_and_grads(&audio, &video, label, fault)?;
    let dir: Vec<Tensor> = model
        .params()
        .iter()
        .map(|(_, t)| random_tensor(&mut rng, t.shape(), 1.0))
        .collect();
    let norm = dir.iter().flat_map(|t| t.data()).map(|x| x * x).sum::<f64>().sqrt();
    let analytic: f64 = grads
        .iter()
        .zip(&dir)
        .map(|(g, u)| g.data().iter().zip(u.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum::<f64>()
        / norm;
    let h = 1e-5;
    let shifted = |sign: f64| -> Result<f64> {
        let mut m = model.clone();
        let ids: Vec<_> = m.params().ids().collect();
        for (id, u) in ids.into_iter().zip(&dir) {
            for (p, x) in m.params_mut().get_mut(id).data_mut().iter_mut().zip(u.data()) {
                *p += sign * h * x / norm;
            }
        }
        let z = m.logits(&audio, &video)?;
        let mx = z[0].max(z[1]);
        Ok(mx + ((z[0] - mx).exp() + (z[1] - mx).exp()).ln() - z[label])
    };
    let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
    Ok((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6))
}

/// Number of patch positions by direct enumeration.
pub fn enumerate_patches(len: usize, patch: usize, stride: usize) -> usize {
    (0..len).step_by(stride.max(1)).filter(|&s| s + patch <= len).count()
}

/// Naive triple-loop `softmax(q Wq (k Wk)ᵀ/√d)`.
pub fn naive_attention_map(q: &Tensor, k: &Tensor, wq: &Tensor, wk: &Tensor) -> Vec<Vec<f64>> {
    let proj = |x: &Tensor, w: &Tensor| -> Vec<Vec<f64>> {
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let e = w.shape()[1];
        (0..n)
            .map(|i| (0..e).map(|j| (0..d).map(|t| x.get(&[i, t]) * w.get(&[t, j])).sum()).collect())
            .collect()
    };
    let (qp, kp) = (proj(q, wq), proj(k, wk));
    let d = wq.shape()[1] as f64;
    qp.iter()
        .map(|qi| {
            let scores: Vec<f64> = kp
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Naive `naive_attention_map(q, kv) · (kv Wv)`.
pub fn naive_cross_attention(q: &Tensor, kv: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor) -> Vec<Vec<f64>> {
    let a = naive_attention_map(q, kv, wq, wk);
    let (nk, d) = (kv.shape()[0], kv.shape()[1]);
    let e = wv.shape()[1];
    a.iter()
        .map(|row| {
            (0..e)
                .map(|j| {
                    (0..nk)
                        .map(|t| row[t] * (0..d).map(|c| kv.get(&[t, c]) * wv.get(&[c, j])).sum::<f64>())
                        .sum()
                })
                .collect()
        })
        .collect()
}

fn max_diff(t: &Tensor, rows: &[Vec<f64>]) -> f64 {
    rows.iter()
        .flatten()
        .zip(t.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn check_grads(opts: &VerifyOptions, name: &str, f: impl Fn(u64) -> Result<f64>) -> CheckOutcome {
    let r = (0..opts.seeds).try_fold(0.0f64, |acc, s| f(s).map(|e| acc.max(e)));
    CheckOutcome::from_result(
        name,
        r.map(|e| (e < GRAD_TOL, format!("max rel error {:.3e} over {} seeds", e, opts.seeds))),
    )
}

fn shapes_check() -> Result<(bool, String)> {
    let cfg = toy_video_config();
    let mut store = ParamStore::new();
    let params = VideoBranchParams::new(&mut store, &mut Init::new(0), "video", &cfg)?;
    let l = cfg.fixed_length;
    for t in [3, l, 5 * l] {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::full(&[t, cfg.input_dim], 0.5));
        let y = video_forward(&mut tape, &p, &params, x)?;
        if tape.shape(y) != [l + 1, cfg.embed_dim] {
            return Ok((false, format!("video T={} gave {:?}", t, tape.shape(y))));
        }
    }
    let mut cases = 0;
    for len in 1..=12 {
        for patch in 1..=len {
            for stride in 1..=12 {
                cases += 1;
                if conv_out_len(len, patch, stride, 0)? != enumerate_patches(len, patch, stride) {
                    return Ok((false, format!("patch count mismatch at len={} p={} s={}", len, patch, stride)));
                }
            }
        }
    }
    let acfg = toy_audio_config();
    let mut store = ParamStore::new();
    let params = AudioBranchParams::new(&mut store, &mut Init::new(0), "audio", &acfg)?;
    let m = acfg.num_patches()?;
    for t in [1, 8, 40] {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::full(&[acfg.input_dim, t], 0.5));
        let y = audio_forward(&mut tape, &p, &params, x)?;
        if tape.shape(y) != [m + 2, acfg.embed_dim] {
            return Ok((false, format!("audio T={} gave {:?}", t, tape.shape(y))));
        }
    }
    Ok((true, format!("3 video lengths, 3 audio lengths, {} patch-count cases", cases)))
}

fn attention_rows_check(forwards: usize) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut rows = 0;
    for i in 0..forwards {
        let strategy = FusionStrategy::ALL[i % FusionStrategy::ALL.len()];
        let mut cfg = ModelConfig::compact(6, 4, strategy);
        cfg.video = toy_video_config();
        cfg.audio = toy_audio_config();
        let model = Model::new(cfg, i as u64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mut tape = Tape::new();
        let p = model.params().bind_frozen(&mut tape);
        let (ta, tv) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let a = tape.constant(random_tensor(&mut rng, &[6, ta], 3.0));
        let v = tape.constant(random_tensor(&mut rng, &[tv, 4], 3.0));
        model.forward(&mut tape, &p, a, v)?;
        for t in tape.softmax_outputs() {
            let (r, c) = t.dims2()?;
            for i in 0..r {
                let s: f64 = t.data()[i * c..(i + 1) * c].iter().sum();
                worst = worst.max((s - 1.0).abs());
                rows += 1;
            }
        }
    }
    Ok((worst <= 1e-9, format!("{} rows, max |sum-1| {:.2e}", rows, worst)))
}

fn cross_attention_oracle_check() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (nq, nk, d) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let q = random_tensor(&mut rng, &[nq, d], 2.0);
        let kv = random_tensor(&mut rng, &[nk, d], 2.0);
        let ws: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, &[d, d], 1.0)).collect();
        let mut tape = Tape::new();
        let vq = tape.constant(q.clone());
        let vkv = tape.constant(kv.clone());
        let w: Vec<Var> = ws.iter().map(|t| tape.constant(t.clone())).collect();
        let o = cross_attention(&mut tape, vq, vkv, w[0], w[1], w[2])?;
        let m = attention_map(&mut tape, vq, vkv, w[0], w[1])?;
        worst = worst.max(max_diff(tape.value(o), &naive_cross_attention(&q, &kv, &ws[0], &ws[1], &ws[2])));
        worst = worst.max(max_diff(tape.value(m), &naive_attention_map(&q, &kv, &ws[0], &ws[1])));
    }
    Ok((worst <= 1e-10, format!("50 instances, max diff {:.2e}", worst)))
}

fn positional_identity_check() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = random_tensor(&mut rng, &[3, 4, 5], 1.0);
    let mut tape = Tape::new();
    let b = tape.constant(base.clone());
    let y = interp_pos_embed(&mut tape, b, (4, 5))?;
    let y = tape.value(y);
    let mut worst = 0.0f64;
    for c in 0..3 {
        for i in 0..4 {
            for j in 0..5 {
                worst = worst.max((y.get(&[i * 5 + j, c]) - base.get(&[c, i, j])).abs());
            }
        }
    }
    let mid = crate::numerics::bilinear_resize2d(&Tensor::new(vec![1, 1, 2], vec![0.0, 2.0])?, (1, 3))?;
    let exact = mid.data() == [0.0, 1.0, 2.0];
    Ok((worst <= 1e-12 && exact, format!("identity diff {:.2e}, midpoint {:?}", worst, mid.data())))
}

fn tensor_fusion_check() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in [2, 4, 8] {
        let mut tape = Tape::new();
        let a = tape.constant(random_tensor(&mut rng, &[d], 1.0));
        let v = tape.constant(random_tensor(&mut rng, &[d], 1.0));
        let f = baseline_features(&mut tape, FusionStrategy::TensorFusion, v, a)?;
        let t = tape.value(f);
        if t.numel() != (d + 1) * (d + 1) || t.data()[0] != 1.0 {
            return Ok((false, format!("D={} gave {} elements, first {}", d, t.numel(), t.data()[0])));
        }
    }
    Ok((true, "dimension (D+1)^2 and unit corner for D in {2,4,8}".into()))
}

fn metrics_check() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut c = [[0u64; 2]; 2];
        c.iter_mut().flatten().for_each(|x| *x = rng.gen_range(0..=100));
        if c.iter().flatten().sum::<u64>() == 0 {
            c[0][0] = 1;
        }
        let got = compute_metrics(&ConfusionMatrix::new(c))?.values.to_array();
        let want = naive_metrics(c);
        for (a, b) in got.iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    let worked = compute_metrics(&ConfusionMatrix::new([[50, 10], [5, 35]]))?.values;
    let ok_worked = (worked.waa - 0.85).abs() < 1e-12 && (worked.uaa - (50.0 / 60.0 + 35.0 / 40.0) / 2.0).abs() < 1e-12;
    Ok((worst <= 1e-12 && ok_worked, format!("1000 matrices, max diff {:.2e}", worst)))
}

/// Per-class loop over predicted/actual pairs.
fn naive_metrics(c: [[u64; 2]; 2]) -> [f64; 8] {
    let n: u64 = c.iter().flatten().sum();
    let safe = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let mut stats = Vec::new();
    for k in 0..2 {
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for a in 0..2 {
            for p in 0..2 {
                let x = c[a][p];
                if a == k && p == k {
                    tp += x;
                } else if p == k {
                    fp += x;
                } else if a == k {
                    fneg += x;
                }
            }
        }
        let prec = safe(tp as f64, (tp + fp) as f64);
        let rec = safe(tp as f64, (tp + fneg) as f64);
        stats.push((prec, rec, safe(2.0 * prec * rec, prec + rec), (tp + fneg) as f64));
    }
    let n = n as f64;
    let w = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| stats.iter().map(|s| f(s) * s.3).sum::<f64>() / n;
    let u = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| stats.iter().map(f).sum::<f64>() / 2.0;
    let acc = (c[0][0] + c[1][1]) as f64 / n;
    [
        acc,
        w(&|s| s.0),
        w(&|s| s.1),
        w(&|s| s.2),
        u(&|s| s.1),
        u(&|s| s.0),
        u(&|s| s.1),
        u(&|s| s.2),
    ]
}

fn checkpoint_check() -> Result<(bool, String)> {
    let mut cfg = ModelConfig::compact(6, 4, FusionStrategy::IntermediateAttention);
    cfg.video = toy_video_config();
    cfg.audio = toy_audio_config();
    let model = Model::new(cfg, 21)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = random_tensor(&mut rng, &[6, 9], 1.0);
    let v = random_tensor(&mut rng, &[7, 4], 1.0);
    let before = model.logits(&a, &v)?;
    let ck = Checkpoint::from_model(&model, &TrainConfig::default());
    let back = Checkpoint::from_bytes(&ck.to_bytes()?)?;
    let after = back.model()?.logits(&a, &v)?;
    let exact = before[0].to_bits() == after[0].to_bits() && before[1].to_bits() == after[1].to_bits();
    Ok((exact && back == ck, format!("logits {:?} -> {:?}", before, after)))
}

fn adam_check() -> Result<(bool, String)> {
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        weight_decay: 0.1,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    store.insert("w", random_tensor(&mut rng, &[3], 1.0))?;
    let mut state = AdamState::new(&store);
    let (mut p, mut m, mut v) = (store.get(store.ids().next().expect("one")).data().to_vec(), [0.0; 3], [0.0; 3]);
    let (b1, b2) = cfg.adam_betas;
    let mut worst = 0.0f64;
    for t in 1..=100 {
        let g = random_tensor(&mut rng, &[3], 1.0);
        adam_step(&mut store, std::slice::from_ref(&g), &mut state, &cfg)?;
        for i in 0..3 {
            m[i] = b1 * m[i] + (1.0 - b1) * g.data()[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g.data()[i].powi(2);
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            p[i] -= cfg.learning_rate * (mh / (vh.sqrt() + cfg.adam_epsilon) + cfg.weight_decay * p[i]);
        }
        let got = store.iter().next().expect("one").1.data();
        worst = worst.max(got.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok((worst <= 1e-12, format!("100 steps, max diff {:.2e}", worst)))
}

fn folds_check() -> Result<(bool, String)> {
    for n in 10..=50 {
        let mut spec = SynthSpec::small(n, SynthMode::BothRedundant, 1.0, n as u64);
        spec.audio_len = crate::data::Length::Fixed(2);
        spec.video_len = crate::data::Length::Fixed(2);
        let ds = generate_synthetic(&spec)?;
        let plan = plan_folds(&ds.samples, 10, 3)?;
        let total_pos = ds.positives() as f64;
        let mut seen = 0;
        for f in 0..10 {
            let members = plan.members(f);
            seen += members.len();
            let pos = members
                .iter()
                .filter(|id| ds.samples.iter().any(|s| &s.id == *id && s.label == 1))
                .count() as f64;
            if (pos - total_pos / 10.0).abs() > 1.0 {
                return Ok((false, format!("n={} fold {} has {} positives", n, f, pos)));
            }
        }
        if seen != n || plan.assignments.len() != n {
            return Ok((false, format!("n={} folds cover {} ids", n, seen)));
        }
    }
    Ok((true, "disjoint, exhaustive, stratified for n in 10..=50".into()))
}

/// Runs every check in a fixed order.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let fault = opts.fault;
    let mut out = vec![
        check_grads(opts, "gradient video branch", |s| video_grad_error(s, fault)),
        check_grads(opts, "gradient audio branch", |s| audio_grad_error(s, fault)),
    ];
    for strategy in FusionStrategy::ALL {
        out.push(check_grads(opts, &format!("gradient fusion {}", strategy), |s| {
            fusion_grad_error(strategy, s, fault)
        }));
    }
    out.push(check_grads(opts, "gradient full model (directional)", |s| {
        let strategy = FusionStrategy::ALL[s as usize % FusionStrategy::ALL.len()];
        model_directional_error(strategy, s, fault)
    }));
    out.push(CheckOutcome::from_result("shape contracts", shapes_check()));
    out.push(CheckOutcome::from_result("attention rows sum to one", attention_rows_check(opts.forwards)));
    out.push(CheckOutcome::from_result("cross-attention loop oracle", cross_attention_oracle_check()));
    out.push(CheckOutcome::from_result("positional interpolation identity", positional_identity_check()));
    out.push(CheckOutcome::from_result("tensor fusion structure", tensor_fusion_check()));
    out.push(CheckOutcome::from_result("metrics oracle", metrics_check()));
    out.push(CheckOutcome::from_result("checkpoint round trip", checkpoint_check()));
    out.push(CheckOutcome::from_result("adam recurrence", adam_check()));
    out.push(CheckOutcome::from_result("fold partition", folds_check()));
    out
}
