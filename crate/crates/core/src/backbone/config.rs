//! Backbone configuration file.
//!
//! ```toml
//! model_id = "toy"          # "toy", "toy-full-width" or "sd"
//! total_steps = 1000
//! schedule = "scaled_linear"
//! d_emb = 64
//! latent_channels = 4
//! image_side = 256
//! ```

use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::schedule::{ScheduleConfig, ScheduleFamily};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub model_id: String,
    /// Release of the pretrained denoiser; only consulted for `model_id = "sd"`.
    pub version: String,
    pub total_steps: usize,
    pub schedule: ScheduleFamily,
    pub beta_start: f64,
    pub beta_end: f64,
    pub d_emb: Option<usize>,
    pub latent_channels: usize,
    pub image_side: usize,
    /// Denoiser widths at latent, 1/2 and 1/4 latent resolution.
    pub block_channels: Option<Vec<usize>>,
    pub encoder_channels: Option<Vec<usize>>,
    pub norm_groups: Option<usize>,
    pub vocab_size: usize,
    pub latent_scale: Option<f64>,
    pub precision: Option<Precision>,
    /// Seed of the random weight draw for the toy models.
    pub seed: u64,
    pub weights: Option<PathBuf>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            model_id: "toy".into(),
            version: "v2.1".into(),
            total_steps: 1000,
            schedule: ScheduleFamily::ScaledLinear,
            beta_start: 0.00085,
            beta_end: 0.012,
            d_emb: None,
            latent_channels: 4,
            image_side: 256,
            block_channels: None,
            encoder_channels: None,
            norm_groups: None,
            vocab_size: 4096,
            latent_scale: None,
            precision: None,
            seed: 0,
            weights: None,
        }
    }
}

/// Fully resolved layer widths and numeric settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub d_emb: usize,
    pub latent_channels: usize,
    pub block_channels: [usize; 3],
    pub encoder_channels: [usize; 3],
    pub norm_groups: usize,
    pub vocab_size: usize,
    pub latent_scale: f64,
    pub dtype: DType,
}

impl Architecture {
    /// Channel widths of the four upsampling block outputs, in block order.
    pub fn up_channels(&self) -> [usize; 4] {
        let [c0, c1, c2] = self.block_channels;
        [c2, c2, c1, c0]
    }
}

impl BackboneConfig {
    pub fn toy() -> Self {
        Self::default()
    }

    /// Seeded random weights at the reference denoiser's full widths.
    pub fn toy_full_width() -> Self {
        Self {
            model_id: "toy-full-width".into(),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("backbone config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("backbone config: {e}")))
    }

    pub fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig {
            total_steps: self.total_steps,
            family: self.schedule,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let (d_emb, blocks, encoder, groups, scale, precision) = match self.model_id.as_str() {
            "toy" => (64, [20, 40, 80], [8, 16, 32], 4, 4.0, Precision::F64),
            "toy-full-width" => (
                1024,
                [320, 640, 1280],
                [32, 64, 128],
                32,
                4.0,
                Precision::F32,
            ),
            "sd" => {
                let d_emb = match self.version.as_str() {
                    "v1.4" | "v1.5" => 768,
                    "v2.0" | "v2.1" => 1024,
                    other => {
                        return Err(Error::Config(format!("unknown backbone version `{other}`")))
                    }
                };
                if self.weights.is_none() {
                    return Err(Error::Config(format!(
                        "model_id `sd` ({}) needs a `weights` safetensors file",
                        self.version
                    )));
                }
                (
                    d_emb,
                    [320, 640, 1280],
                    [128, 256, 512],
                    32,
                    0.18215,
                    Precision::F32,
                )
            }
            other => return Err(Error::Config(format!("unknown model_id `{other}`"))),
        };
        let block_channels = fixed3("block_channels", self.block_channels.as_deref(), blocks)?;
        let encoder_channels = fixed3(
            "encoder_channels",
            self.encoder_channels.as_deref(),
            encoder,
        )?;
        let norm_groups = self.norm_groups.unwrap_or(groups);
        if norm_groups == 0 {
            return Err(Error::Config("norm_groups must be positive".into()));
        }
        for c in block_channels.iter().chain(encoder_channels.iter()) {
            if *c == 0 || c % norm_groups != 0 {
                return Err(Error::Config(format!(
                    "channel width {c} is not a positive multiple of norm_groups {norm_groups}"
                )));
            }
        }
        if self.latent_channels == 0 {
            return Err(Error::Config("latent_channels must be positive".into()));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config("vocab_size must be at least 3".into()));
        }
        if self.image_side == 0 || !self.image_side.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "image_side {} must be a positive multiple of 32",
                self.image_side
            )));
        }
        Ok(Architecture {
            d_emb: self.d_emb.unwrap_or(d_emb),
            latent_channels: self.latent_channels,
            block_channels,
            encoder_channels,
            norm_groups,
            vocab_size: self.vocab_size,
            latent_scale: self.latent_scale.unwrap_or(scale),
            dtype: self.precision.unwrap_or(precision).dtype(),
        })
    }
}

fn fixed3(key: &str, given: Option<&[usize]>, preset: [usize; 3]) -> Result<[usize; 3]> {
    match given {
        None => Ok(preset),
        Some([a, b, c]) => Ok([*a, *b, *c]),
        Some(other) => Err(Error::Config(format!(
            "{key} needs exactly 3 entries, got {}",
            other.len()
        ))),
    }
}
