//! The full classifier: acoustic and visual branches joined by a fusion head.

use serde::{Deserialize, Serialize};

use crate::audio::{audio_forward, AudioBranchParams, AudioFrontendConfig};
use crate::error::{Error, Result};
use crate::fusion::{fuse_tokens, FusionParams, FusionStrategy};
use crate::numerics::{GradFault, Tape, Tensor, Var};
use crate::params::{Bound, Init, ParamStore};
use crate::video::{video_forward, VideoBranchParams, VideoFrontendConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub audio: AudioFrontendConfig,
    pub video: VideoFrontendConfig,
    pub fusion: FusionStrategy,
    /// Odd kernel width of the fusion convolutions.
    pub fusion_kernel: usize,
}

impl ModelConfig {
    pub fn desk(audio_dim: usize, video_dim: usize, fusion: FusionStrategy) -> Self {
        ModelConfig {
            audio: AudioFrontendConfig::desk(audio_dim),
            video: VideoFrontendConfig::desk(video_dim),
            fusion,
            fusion_kernel: 3,
        }
    }

    /// Small preset for fast experiments: `D=16`, two heads, `L=8`,
    /// `F'=T'=8` with 4×4 patches (four patches), two blocks per branch.
    pub fn compact(audio_dim: usize, video_dim: usize, fusion: FusionStrategy) -> Self {
        let mut c = Self::desk(audio_dim, video_dim, fusion).with_embed_dim(16, 2);
        c.video.fixed_length = 8;
        c.audio.target_freq = 8;
        c.audio.target_time = 8;
        c
    }

    /// Shrinks both branches to a shared embedding width.
    pub fn with_embed_dim(mut self, d: usize, heads: usize) -> Self {
        self.audio.embed_dim = d;
        self.audio.num_heads = heads;
        self.audio.mlp_hidden = 2 * d;
        self.video.embed_dim = d;
        self.video.num_heads = heads;
        self.video.mlp_hidden = 2 * d;
        self
    }

    pub fn embed_dim(&self) -> usize {
        self.audio.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.video.validate()?;
        if self.audio.embed_dim != self.video.embed_dim {
            return Err(Error::Config(format!(
                "audio and video embedding widths differ: {} vs {}",
                self.audio.embed_dim, self.video.embed_dim
            )));
        }
        if self.fusion_kernel.is_multiple_of(2) {
            return Err(Error::Config("fusion_kernel must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    audio: Option<AudioBranchParams>,
    video: Option<VideoBranchParams>,
    fusion: FusionParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let audio = if config.fusion.uses_audio() {
            Some(AudioBranchParams::new(&mut store, &mut init, "audio", &config.audio)?)
        } else {
            None
        };
        let video = if config.fusion.uses_video() {
            Some(VideoBranchParams::new(&mut store, &mut init, "video", &config.video)?)
        } else {
            None
        };
        let fusion = FusionParams::new(
            &mut store,
            &mut init,
            config.fusion,
            config.embed_dim(),
            config.fusion_kernel,
        )?;
        Ok(Model {
            config,
            store,
            audio,
            video,
            fusion,
        })
    }

    /// Rebuilds a model from saved parameters. Every name and shape of the
    /// freshly built layout must be present; extra entries are an error.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, model expects {}",
                params.len(),
                model.store.len()
            )));
        }
        for (name, t) in params.iter() {
            model
                .store
                .set(name, t.clone())
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fusion(&self) -> FusionStrategy {
        self.config.fusion
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn audio_params(&self) -> Option<&AudioBranchParams> {
        self.audio.as_ref()
    }

    pub fn video_params(&self) -> Option<&VideoBranchParams> {
        self.video.as_ref()
    }

    pub fn fusion_params(&self) -> &FusionParams {
        &self.fusion
    }

    /// Records the forward pass on `tape` and returns the logits `[2]`.
    /// `audio` is `[F × T]`, `video` is `[T × C]`; an input whose branch is
    /// unused by the fusion strategy is ignored.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, audio: Var, video: Var) -> Result<Var> {
        let xa = match &self.audio {
            Some(a) => Some(audio_forward(tape, p, a, audio)?),
            None => None,
        };
        let xv = match &self.video {
            Some(v) => Some(video_forward(tape, p, v, video)?),
            None => None,
        };
        fuse_tokens(tape, p, &self.fusion, xv, xa)
    }

    /// Inference logits for one sample.
    pub fn logits(&self, audio: &Tensor, video: &Tensor) -> Result<[f64; 2]> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let a = tape.constant(audio.clone());
        let v = tape.constant(video.clone());
        let y = self.forward(&mut tape, &p, a, v)?;
        let d = tape.value(y).data();
        Ok([d[0], d[1]])
    }

    /// Cross-entropy loss of one sample and the gradient of every parameter,
    /// in store order.
    pub fn loss_and_grads(
        &self,
        audio: &Tensor,
        video: &Tensor,
        label: usize,
        fault: Option<GradFault>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = match fault {
            Some(f) => Tape::with_fault(f),
            None => Tape::new(),
        };
        let p = self.store.bind(&mut tape);
        let a = tape.constant(audio.clone());
        let v = tape.constant(video.clone());
        let y = self.forward(&mut tape, &p, a, v)?;
        let loss = tape.cross_entropy(y, label)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        let out = p
            .vars()
            .iter()
            .zip(self.store.iter())
            .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, out))
    }
}

/// Index of the larger logit; ties go to class 0.
pub fn predict(logits: &[f64; 2]) -> usize {
    usize::from(logits[1] > logits[0])
}
