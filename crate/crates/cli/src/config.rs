//! Flat JSON run configuration. Keys left out of the file take their
//! defaults; command-line flags override both.

use std::collections::BTreeSet;
use std::path::Path;

use mmff::fusion::FusionStrategy;
use mmff::model::ModelConfig;
use mmff::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub fusion: FusionStrategy,
    /// `desk` or `compact`; the remaining model keys adjust the preset.
    pub preset: String,
    pub embed_dim: Option<usize>,
    pub num_heads: Option<usize>,
    pub video_length: Option<usize>,
    pub video_blocks: Option<usize>,
    pub audio_freq: Option<usize>,
    pub audio_time: Option<usize>,
    pub audio_layers: Option<usize>,
    pub patch: Option<(usize, usize)>,
    pub stride: Option<(usize, usize)>,
    pub base_grid: Option<(usize, usize)>,
    pub proj_kernel: Option<usize>,
    pub fusion_kernel: Option<usize>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fusion: FusionStrategy::IntermediateAttention,
            preset: "desk".into(),
            embed_dim: None,
            num_heads: None,
            video_length: None,
            video_blocks: None,
            audio_freq: None,
            audio_time: None,
            audio_layers: None,
            patch: None,
            stride: None,
            base_grid: None,
            proj_kernel: None,
            fusion_kernel: None,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` on top and validates.
    pub fn resolve(path: Option<&Path>, overrides: Map<String, Value>) -> Result<Self, String> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read config {}: {}", p.display(), e))?;
                match serde_json::from_str(&text) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(format!("config {} must hold a JSON object", p.display())),
                    Err(e) => return Err(format!("config {}: {}", p.display(), e)),
                }
            }
            None => Map::new(),
        };
        let known: BTreeSet<String> = match serde_json::to_value(RunConfig::default()) {
            Ok(Value::Object(m)) => m.into_iter().map(|(k, _)| k).collect(),
            _ => unreachable!("RunConfig serializes to an object"),
        };
        if let Some(k) = map.keys().find(|k| !known.contains(*k)) {
            return Err(format!("unknown config key `{}`", k));
        }
        map.extend(overrides);
        let cfg: RunConfig = serde_json::from_value(Value::Object(map)).map_err(|e| format!("config: {}", e))?;
        cfg.train.validate().map_err(|e| e.to_string())?;
        if cfg.preset != "desk" && cfg.preset != "compact" {
            return Err(format!("unknown preset `{}` (expected desk|compact)", cfg.preset));
        }
        Ok(cfg)
    }

    pub fn model_config(&self, audio_dim: usize, video_dim: usize) -> Result<ModelConfig, String> {
        self.model_config_for(audio_dim, video_dim, self.fusion)
    }

    pub fn model_config_for(&self, audio_dim: usize, video_dim: usize, fusion: FusionStrategy) -> Result<ModelConfig, String> {
        let mut mc = if self.preset == "compact" {
            ModelConfig::compact(audio_dim, video_dim, fusion)
        } else {
            ModelConfig::desk(audio_dim, video_dim, fusion)
        };
        if self.embed_dim.is_some() || self.num_heads.is_some() {
            let d = self.embed_dim.unwrap_or(mc.embed_dim());
            let heads = self.num_heads.unwrap_or(mc.video.num_heads);
            mc = mc.with_embed_dim(d, heads);
        }
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut mc.video.fixed_length, self.video_length);
        set(&mut mc.video.num_blocks, self.video_blocks);
        set(&mut mc.audio.target_freq, self.audio_freq);
        set(&mut mc.audio.target_time, self.audio_time);
        set(&mut mc.audio.num_layers, self.audio_layers);
        set(&mut mc.audio.proj_kernel, self.proj_kernel);
        set(&mut mc.fusion_kernel, self.fusion_kernel);
        mc.audio.patch = self.patch.unwrap_or(mc.audio.patch);
        mc.audio.stride = self.stride.unwrap_or(mc.audio.stride);
        mc.audio.base_grid = self.base_grid.unwrap_or(mc.audio.base_grid);
        mc.validate().map_err(|e| e.to_string())?;
        Ok(mc)
    }
}
