//! Sample ingestion, synthetic corpora and stratified fold planning.
//!
//! On disk a dataset is a JSON manifest plus one headerless CSV per modality
//! per sample. Audio files hold `[F × T]` (rows are features), video files
//! hold `[T × C]` (rows are time steps). Paths in the manifest are relative
//! to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    pub id: String,
    /// `[F × T_a]`
    pub audio: Tensor,
    /// `[T_v × C]`
    pub video: Tensor,
    /// 0 = non-depressed, 1 = depressed.
    pub label: usize,
}

impl MultimodalSample {
    pub fn new(id: impl Into<String>, audio: Tensor, video: Tensor, label: usize) -> Result<Self> {
        let id = id.into();
        let bad = |msg: String| Error::Ingest {
            id: id.clone(),
            msg,
        };
        if label > 1 {
            return Err(bad(format!("label must be 0 or 1, got {}", label)));
        }
        for (name, t) in [("audio", &audio), ("video", &video)] {
            if t.rank() != 2 || t.numel() == 0 {
                return Err(bad(format!("{} must be a non-empty matrix, got {:?}", name, t.shape())));
            }
            if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
                return Err(bad(format!("{} holds a non-finite value at flat index {}", name, i)));
            }
        }
        Ok(MultimodalSample {
            id,
            audio,
            video,
            label,
        })
    }

    pub fn audio_dim(&self) -> usize {
        self.audio.shape()[0]
    }

    pub fn video_dim(&self) -> usize {
        self.video.shape()[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub audio: usize,
    pub video: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    pub video: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub feature_dims: FeatureDims,
    pub samples: Vec<ManifestEntry>,
}

/// An in-memory corpus, samples ordered by id.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub dims: FeatureDims,
    pub samples: Vec<MultimodalSample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dims: FeatureDims, mut samples: Vec<MultimodalSample>) -> Result<Self> {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        for w in samples.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::arg(format!("duplicate sample id `{}`", w[0].id)));
            }
        }
        for s in &samples {
            check_dims(s, dims)?;
        }
        Ok(Dataset {
            name: name.into(),
            dims,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }
}

fn check_dims(s: &MultimodalSample, dims: FeatureDims) -> Result<()> {
    if s.audio_dim() != dims.audio {
        return Err(Error::Ingest {
            id: s.id.clone(),
            msg: format!("audio has {} feature rows, manifest declares {}", s.audio_dim(), dims.audio),
        });
    }
    if s.video_dim() != dims.video {
        return Err(Error::Ingest {
            id: s.id.clone(),
            msg: format!("video has {} feature columns, manifest declares {}", s.video_dim(), dims.video),
        });
    }
    Ok(())
}

/// Reads a headerless CSV of decimal floats into a matrix.
pub fn read_matrix_csv(path: &Path) -> std::result::Result<Tensor, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| format!("{}: {}", path.display(), e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| format!("{}: {}", path.display(), e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("{}: `{}` is not a number", path.display(), f))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!(
                    "{}: row {} has {} columns, expected {}",
                    path.display(),
                    rows.len() + 1,
                    row.len(),
                    first.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format!("{}: empty feature file", path.display()));
    }
    Tensor::from_rows(&rows).map_err(|e| format!("{}: {}", path.display(), e))
}

/// Writes a matrix as headerless CSV using shortest round-trip formatting.
pub fn write_matrix_csv(path: &Path, t: &Tensor) -> Result<()> {
    let (r, c) = t.dims2()?;
    let mut out = String::with_capacity(r * c * 12);
    for i in 0..r {
        let row = &t.data()[i * c..(i + 1) * c];
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))
}

/// Loads every sample named by the manifest, validating dims and values.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::arg(format!("duplicate sample id `{}` in manifest", e.id)));
        }
        let ingest = |msg: String| Error::Ingest {
            id: e.id.clone(),
            msg,
        };
        let audio = read_matrix_csv(&base.join(&e.audio)).map_err(ingest)?;
        let video = read_matrix_csv(&base.join(&e.video)).map_err(ingest)?;
        let s = MultimodalSample::new(e.id.clone(), audio, video, e.label)?;
        check_dims(&s, manifest.feature_dims)?;
        samples.push(s);
    }
    Dataset::new(manifest.name, manifest.feature_dims, samples)
}

/// Writes `manifest.json` and `features/<id>.{audio,video}.csv` under `dir`
/// and returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let audio = PathBuf::from("features").join(format!("{}.audio.csv", s.id));
        let video = PathBuf::from("features").join(format!("{}.video.csv", s.id));
        write_matrix_csv(&dir.join(&audio), &s.audio)?;
        write_matrix_csv(&dir.join(&video), &s.video)?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            audio,
            video,
            label: s.label,
        });
    }
    let manifest = DatasetManifest {
        name: dataset.name.clone(),
        feature_dims: dataset.dims,
        samples: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    AudioInformative,
    VideoInformative,
    BothRedundant,
    XorCrossmodal,
}

impl std::str::FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            Error::arg(format!(
                "unknown synthetic mode `{}` (expected audio-informative|video-informative|both-redundant|xor-crossmodal)",
                s
            ))
        })
    }
}

/// A sequence length: fixed, or drawn uniformly from `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Length {
    Fixed(usize),
    Range([usize; 2]),
}

impl Length {
    fn draw(self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            Length::Fixed(n) => n,
            Length::Range([lo, hi]) => rng.gen_range(lo..=hi),
        }
    }

    fn validate(self, what: &str) -> Result<()> {
        let ok = match self {
            Length::Fixed(n) => n >= 1,
            Length::Range([lo, hi]) => lo >= 1 && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid {} length {:?}", what, self)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "SynthSpec::default_name")]
    pub name: String,
    pub n_samples: usize,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub audio_len: Length,
    pub video_len: Length,
    pub mode: SynthMode,
    /// Distance between the two class means in units of the noise std.
    pub separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn default_name() -> String {
        "synthetic".into()
    }

    /// 8 audio features, 8 video features, 16 frames per modality.
    pub fn small(n_samples: usize, mode: SynthMode, separation: f64, seed: u64) -> Self {
        SynthSpec {
            name: Self::default_name(),
            n_samples,
            audio_dim: 8,
            video_dim: 8,
            audio_len: Length::Fixed(16),
            video_len: Length::Fixed(16),
            mode,
            separation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.audio_dim == 0 || self.video_dim == 0 {
            return Err(Error::arg("n_samples and feature dims must be positive"));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::arg(format!("separation must be finite and >= 0, got {}", self.separation)));
        }
        self.audio_len.validate("audio")?;
        self.video_len.validate("video")
    }
}

/// Alternating `+1, -1, ...` direction along which class means shift.
fn direction(dim: usize) -> Vec<f64> {
    (0..dim).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

/// Class-conditional Gaussian sequences with unit noise per frame.
///
/// Each modality carries a binary latent `z` and every frame is
/// `(z - 1/2)·separation·μ + ε`, so the two latent means are `separation`
/// apart per feature. Labels alternate by index. In `xor-crossmodal` mode
/// the audio latent is balanced within each class and the video latent is
/// `label XOR audio latent`, so neither modality alone carries label
/// information. In single-modality modes the other modality has no shift.
/// Ids are `s<seed>-<index>`, so corpora drawn with different seeds never
/// share an id.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mu_a = direction(spec.audio_dim);
    let mu_v = direction(spec.video_dim);
    let width = spec.n_samples.to_string().len().max(4);
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let label = i % 2;
        let (za, zv) = match spec.mode {
            SynthMode::AudioInformative => (Some(label), None),
            SynthMode::VideoInformative => (None, Some(label)),
            SynthMode::BothRedundant => (Some(label), Some(label)),
            SynthMode::XorCrossmodal => {
                let za = (i / 2) % 2;
                (Some(za), Some(label ^ za))
            }
        };
        let ta = spec.audio_len.draw(&mut rng);
        let tv = spec.video_len.draw(&mut rng);
        let shift = |z: Option<usize>| z.map_or(0.0, |z| (z as f64 - 0.5) * spec.separation);
        let (sa, sv) = (shift(za), shift(zv));
        // audio is [F × T]: feature f shifted by sa·μ_f in every frame
        let mut audio = Vec::with_capacity(spec.audio_dim * ta);
        for &m in &mu_a {
            for _ in 0..ta {
                let e: f64 = rng.sample(StandardNormal);
                audio.push(sa * m + e);
            }
        }
        let mut video = Vec::with_capacity(tv * spec.video_dim);
        for _ in 0..tv {
            for &m in &mu_v {
                let e: f64 = rng.sample(StandardNormal);
                video.push(sv * m + e);
            }
        }
        samples.push(MultimodalSample::new(
            format!("s{}-{:0width$}", spec.seed, i, width = width),
            Tensor::new(vec![spec.audio_dim, ta], audio)?,
            Tensor::new(vec![tv, spec.video_dim], video)?,
            label,
        )?);
    }
    Dataset::new(
        spec.name.clone(),
        FeatureDims {
            audio: spec.audio_dim,
            video: spec.video_dim,
        },
        samples,
    )
}

/// Assignment of every sample id to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// Ids in `fold`, sorted.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Stratified k-fold partition. Each class is shuffled with `seed` and dealt
/// round-robin; negatives continue from the fold after the last positive so
/// fold sizes also differ by at most one.
pub fn plan_folds(samples: &[MultimodalSample], k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || samples.len() < k {
        return Err(Error::arg(format!(
            "cannot split {} samples into {} folds",
            samples.len(),
            k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<&str> = samples.iter().filter(|s| s.label == 1).map(|s| s.id.as_str()).collect();
    let mut neg: Vec<&str> = samples.iter().filter(|s| s.label == 0).map(|s| s.id.as_str()).collect();
    pos.sort_unstable();
    neg.sort_unstable();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignments = BTreeMap::new();
    for (i, id) in pos.iter().chain(neg.iter()).enumerate() {
        if assignments.insert(id.to_string(), i % k).is_some() {
            return Err(Error::arg(format!("duplicate sample id `{}`", id)));
        }
    }
    Ok(FoldPlan { k, assignments })
}
