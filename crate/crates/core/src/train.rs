//! Optimizer, training loop with early stopping, checkpoints and the
//! cross-validation, ablation and cross-corpus drivers.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{plan_folds, Dataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::metrics::{aggregate_runs, compute_metrics, ConfusionMatrix, MetricReport};
use crate::model::{predict, Model, ModelConfig};
use crate::numerics::Tensor;
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_epsilon: f64,
    pub adam_betas: (f64, f64),
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Number of cross-validation folds; each fold is one evaluated run.
    pub repeats: usize,
    /// Re-runs the whole cross-validation with derived seeds and pools all
    /// fold reports into the aggregate.
    pub seed_repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_epochs: 225,
            learning_rate: 1e-5,
            weight_decay: 0.1,
            adam_epsilon: 1e-8,
            adam_betas: (0.9, 0.999),
            early_stop_patience: 15,
            seed: 0,
            repeats: 10,
            seed_repeats: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("max_epochs and early_stop_patience must be positive".into());
        }
        if self.early_stop_patience >= self.max_epochs {
            return bad(format!(
                "early_stop_patience ({}) must be below max_epochs ({})",
                self.early_stop_patience, self.max_epochs
            ));
        }
        if self.repeats < 2 || self.seed_repeats == 0 {
            return bad("repeats must be at least 2 and seed_repeats at least 1".into());
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("adam betas must lie in [0, 1), got {:?}", self.adam_betas));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("adam_epsilon", self.adam_epsilon),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{} must be finite and >= 0, got {}", name, v));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, one tensor per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction and decoupled weight decay:
/// `p -= lr·m̂/(√v̂ + ε) + lr·wd·p`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Contract(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (id, g) in params.ids().zip(grads) {
        if params.get(id).shape() != g.shape() || state.m[id.index()].shape() != g.shape() {
            return Err(Error::Contract(format!(
                "adam: gradient for `{}` has shape {:?}, parameter {:?}",
                params.name(id),
                g.shape(),
                params.get(id).shape()
            )));
        }
    }
    state.step += 1;
    let (b1, b2) = cfg.adam_betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, wd, eps) = (cfg.learning_rate, cfg.weight_decay, cfg.adam_epsilon);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (m, &g) in m.iter_mut().zip(g) {
            *m = b1 * *m + (1.0 - b1) * g;
        }
        let v = state.v[i].data_mut();
        for (v, &g) in v.iter_mut().zip(g) {
            *v = b2 * *v + (1.0 - b2) * g * g;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        let p = params.get_mut(id).data_mut();
        for ((p, &m), &v) in p.iter_mut().zip(m).zip(v) {
            let mh = m / c1;
            let vh = v / c2;
            *p -= lr * mh / (vh.sqrt() + eps) + lr * wd * *p;
        }
    }
    Ok(())
}

/// Model weights plus the training state they were saved with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
    pub epoch: usize,
    pub best_metric: f64,
}

const MAGIC: &[u8; 4] = b"MMFF";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    train: TrainConfig,
}

impl Checkpoint {
    pub fn from_model(model: &Model, train_config: &TrainConfig) -> Self {
        Checkpoint {
            model_config: model.config().clone(),
            train_config: train_config.clone(),
            params: model.params().clone(),
            adam: None,
            epoch: 0,
            best_metric: 0.0,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.model_config.clone(), &self.params)
    }

    /// Layout: `MMFF`, version u32, config JSON (u64 length + bytes), u64
    /// record count, then records of u64 name length, UTF-8 name, u64 rank,
    /// u64 dims and little-endian f64 payload. Optimizer moments are stored
    /// as `adam.m.<name>` / `adam.v.<name>`, scalars as `state.*`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let mut records: Vec<(String, &Tensor)> =
            self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(a) = &self.adam {
            for ((name, _), m) in self.params.iter().zip(&a.m) {
                records.push((format!("adam.m.{name}"), m));
            }
            for ((name, _), v) in self.params.iter().zip(&a.v) {
                records.push((format!("adam.v.{name}"), v));
            }
        }
        let scalars = [
            ("state.epoch", Tensor::scalar(self.epoch as f64)?),
            ("state.best_metric", Tensor::scalar(self.best_metric)?),
            (
                "state.adam_step",
                Tensor::scalar(self.adam.as_ref().map_or(-1.0, |a| a.step as f64))?,
            ),
        ];
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&((records.len() + scalars.len()) as u64).to_le_bytes());
        let mut put = |name: &str, t: &Tensor| {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, t) in &records {
            put(name, t);
        }
        for (name, t) in &scalars {
            put(name, t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", version)));
        }
        let hlen = r.u64()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Format(e.to_string()))?;
        let count = r.u64()? as usize;
        let mut params = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        let (mut epoch, mut best, mut step) = (0.0, 0.0, -1.0);
        for _ in 0..count {
            let nlen = r.u64()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Format("record name is not UTF-8".into()))?
                .to_string();
            let rank = r.u64()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n.checked_mul(8).ok_or_else(|| Error::Format("record too large".into()))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data)?;
            match name.as_str() {
                "state.epoch" => epoch = t.data()[0],
                "state.best_metric" => best = t.data()[0],
                "state.adam_step" => step = t.data()[0],
                _ if name.starts_with("adam.m.") => m.push(t),
                _ if name.starts_with("adam.v.") => v.push(t),
                _ => {
                    params.insert(name, t)?;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint records".into()));
        }
        let adam = if step >= 0.0 {
            if m.len() != params.len() || v.len() != params.len() {
                return Err(Error::Format("optimizer moments do not match parameters".into()));
            }
            Some(AdamState {
                m,
                v,
                step: step as u64,
            })
        } else {
            None
        };
        Ok(Checkpoint {
            model_config: header.model,
            train_config: header.train,
            params,
            adam,
            epoch: epoch as usize,
            best_metric: best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_waf1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch.
    pub checkpoint: Checkpoint,
    pub curves: Vec<EpochLog>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub epochs_trained: usize,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub report: MetricReport,
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
}

/// Predicts every sample and scores the predictions.
pub fn evaluate(model: &Model, samples: &[&MultimodalSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty split"));
    }
    let mut cm = ConfusionMatrix::default();
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let z = model.logits(&s.audio, &s.video)?;
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        loss += lse - z[s.label];
        let p = predict(&z);
        cm.record(s.label, p);
        predictions.push(p);
    }
    Ok(Evaluation {
        confusion: cm,
        report: compute_metrics(&cm)?,
        mean_loss: loss / samples.len() as f64,
        predictions,
    })
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The freshly initialized model `train_one` starts from for `seed`.
pub fn initial_model(model_config: &ModelConfig, seed: u64) -> Result<Model> {
    Model::new(model_config.clone(), mix(seed, 1))
}

/// Trains one model with mini-batch Adam and early stopping on validation
/// WAF1. Returns the best-epoch weights (ties on WAF1 broken by lower
/// validation loss). Training halts once WAF1 has not strictly improved for
/// `patience` consecutive epochs.
pub fn train_one(
    model_config: &ModelConfig,
    train: &[&MultimodalSample],
    val: &[&MultimodalSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::arg("training and validation splits must be non-empty"));
    }
    let mut model = initial_model(model_config, cfg.seed)?;
    let mut adam = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curves = Vec::new();
    let mut best: Option<(f64, f64, usize, ParamStore)> = None;
    let mut last_gain = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1000 + epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut sum: Option<Vec<Tensor>> = None;
            for &i in batch {
                let s = train[i];
                let (loss, grads) = model.loss_and_grads(&s.audio, &s.video, s.label, None)?;
                epoch_loss += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam_step(model.params_mut(), &grads, &mut adam, cfg)?;
        }
        let eval = evaluate(&model, val)?;
        let waf1 = eval.report.values.waf1;
        curves.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss: eval.mean_loss,
            val_waf1: waf1,
        });
        let improved = best.as_ref().is_none_or(|b| waf1 > b.0);
        let tie_better = best
            .as_ref()
            .is_some_and(|b| waf1 == b.0 && eval.mean_loss < b.1);
        if improved {
            last_gain = epoch;
        }
        if improved || tie_better {
            best = Some((waf1, eval.mean_loss, epoch, model.params().clone()));
        }
        if epoch - last_gain >= cfg.early_stop_patience {
            break;
        }
    }
    let (best_metric, _, best_epoch, params) = best.expect("at least one epoch");
    let epochs_trained = curves.len();
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model_config: model_config.clone(),
            train_config: cfg.clone(),
            params,
            adam: Some(adam),
            epoch: best_epoch,
            best_metric,
        },
        curves,
        best_epoch,
        epochs_trained,
    })
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    /// Seed-repeat index (0 unless `seed_repeats > 1`).
    pub repeat: usize,
    pub report: MetricReport,
    pub confusion: ConfusionMatrix,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub curves: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub fusion: FusionStrategy,
    pub folds: Vec<FoldResult>,
    pub aggregate: MetricReport,
    pub wall_clock_secs: f64,
}

/// Worker count for parallel folds: `MMFF_THREADS` if set, otherwise the
/// number of logical processors.
pub fn fold_threads() -> usize {
    std::env::var("MMFF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn in_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(fold_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    Ok(pool.install(f))
}

/// k-fold cross-validation: fold `i` is the test set, fold `(i+1) mod k`
/// validates early stopping, the rest trains. Folds run in parallel and
/// are reduced in fold order.
pub fn run_cv(dataset: &Dataset, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let k = cfg.repeats;
    let mut jobs = Vec::new();
    for rep in 0..cfg.seed_repeats {
        let seed = if rep == 0 { cfg.seed } else { mix(cfg.seed, 7 + rep as u64) };
        let plan = plan_folds(&dataset.samples, k, seed)?;
        for fold in 0..k {
            let val_fold = (fold + 1) % k;
            let mut train = Vec::new();
            let mut val = Vec::new();
            let mut test = Vec::new();
            for s in &dataset.samples {
                let f = plan.fold_of(&s.id).expect("plan covers every sample");
                if f == fold {
                    test.push(s);
                } else if f == val_fold {
                    val.push(s);
                } else {
                    train.push(s);
                }
            }
            let fold_cfg = TrainConfig {
                seed: mix(seed, 100 + fold as u64),
                ..cfg.clone()
            };
            jobs.push((rep, fold, train, val, test, fold_cfg));
        }
    }
    let folds = in_pool(|| {
        jobs.par_iter()
            .map(|(rep, fold, train, val, test, fold_cfg)| {
                let out = train_one(model_config, train, val, fold_cfg)?;
                let model = out.checkpoint.model()?;
                let eval = evaluate(&model, test)?;
                Ok(FoldResult {
                    fold: *fold,
                    repeat: *rep,
                    report: eval.report,
                    confusion: eval.confusion,
                    best_epoch: out.best_epoch,
                    epochs_trained: out.epochs_trained,
                    curves: out.curves,
                    checkpoint: out.checkpoint,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let reports: Vec<_> = folds.iter().map(|f| f.report.clone()).collect();
    Ok(ExperimentResult {
        fusion: model_config.fusion,
        aggregate: aggregate_runs(&reports)?,
        folds,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Cross-validates every strategy in `strategies` with otherwise identical
/// settings, in the given order.
pub fn run_ablation(
    dataset: &Dataset,
    base: &ModelConfig,
    strategies: &[FusionStrategy],
    cfg: &TrainConfig,
) -> Result<Vec<ExperimentResult>> {
    strategies
        .iter()
        .map(|&s| {
            let mc = ModelConfig {
                fusion: s,
                ..base.clone()
            };
            run_cv(dataset, &mc, cfg)
        })
        .collect()
}

/// Trains on all of `train_set` (10% held out by stratified draw for early
/// stopping) and tests on all of `test_set`.
pub fn run_cross_corpus(
    train_set: &Dataset,
    test_set: &Dataset,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let ids: HashSet<&str> = train_set.samples.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = test_set.samples.iter().find(|s| ids.contains(s.id.as_str())) {
        return Err(Error::arg(format!(
            "train and test corpora share sample `{}`",
            s.id
        )));
    }
    if test_set.is_empty() {
        return Err(Error::arg("test corpus is empty"));
    }
    let start = Instant::now();
    let plan = plan_folds(&train_set.samples, 10, cfg.seed)?;
    let (val, train): (Vec<_>, Vec<_>) = train_set
        .samples
        .iter()
        .partition(|s| plan.fold_of(&s.id) == Some(0));
    let out = train_one(model_config, &train, &val, cfg)?;
    let model = out.checkpoint.model()?;
    let test: Vec<_> = test_set.samples.iter().collect();
    let eval = evaluate(&model, &test)?;
    let fold = FoldResult {
        fold: 0,
        repeat: 0,
        report: eval.report.clone(),
        confusion: eval.confusion,
        best_epoch: out.best_epoch,
        epochs_trained: out.epochs_trained,
        curves: out.curves,
        checkpoint: out.checkpoint,
    };
    Ok(ExperimentResult {
        fusion: model_config.fusion,
        folds: vec![fold],
        aggregate: eval.report,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
