//! Frozen text-conditioned latent denoiser: latent encoding, forward noising,
//! single-pass denoising with activation capture, and text embedding.

mod config;
mod layers;
pub(crate) mod params;
mod schedule;
mod text;
mod unet;
mod vae;

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Architecture, BackboneConfig, Precision};
pub use params::ParamStore;
pub use schedule::{NoiseSchedule, ScheduleConfig, ScheduleFamily};
pub use text::{Tokenized, Tokenizer};

use crate::error::{Error, Result};
use params::ParamBuilder;
use text::TextEncoder;
use unet::Unet;
use vae::ImageEncoder;

/// Token rows of every conditioning matrix.
pub const CONTEXT_LENGTH: usize = 77;

/// Default feature timestep on the 1000-step schedule.
pub const DEFAULT_TIMESTEP: usize = 273;

/// A batch of latents `(B, d_lat, h/8, w/8)`.
#[derive(Debug, Clone)]
pub struct LatentImage {
    pub data: Tensor,
    pub source_id: Option<String>,
}

impl LatentImage {
    pub fn new(data: Tensor) -> Self {
        Self {
            data,
            source_id: None,
        }
    }

    pub fn batch(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[1]
    }

    /// `(height, width)` of the latent grid.
    pub fn spatial(&self) -> (usize, usize) {
        let d = self.data.dims();
        (d[2], d[3])
    }
}

/// Conditioning matrix `(77, d_emb)`.
#[derive(Debug, Clone)]
pub struct TextEmbedding {
    matrix: Tensor,
}

impl TextEmbedding {
    pub fn new(matrix: Tensor) -> Result<Self> {
        match matrix.dims() {
            [CONTEXT_LENGTH, _] => Ok(Self { matrix }),
            other => Err(Error::Shape(format!(
                "conditioning must be ({CONTEXT_LENGTH}, d_emb), got {other:?}"
            ))),
        }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn d_emb(&self) -> usize {
        self.matrix.dims()[1]
    }

    pub fn to_vec2(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.matrix.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }
}

/// Activations captured during one denoising pass, each `(B, C, H, W)`.
#[derive(Debug, Clone)]
pub struct BackboneFeatures {
    /// Upsampling block outputs, block 1 first.
    pub up: [Tensor; 4],
    /// Downsampling path outputs (two downsampled stages, the deepest stage, the middle block).
    pub down: [Tensor; 4],
    pub t: usize,
    pub predicted_noise: Tensor,
}

impl BackboneFeatures {
    /// Shape of upsampling block `n` (1-based) as `(height, width, channels)`.
    pub fn up_shape_hwc(&self, n: usize) -> (usize, usize, usize) {
        let d = self.up[n - 1].dims();
        (d[2], d[3], d[1])
    }
}

/// Emitted when a prompt exceeds the token budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationWarning {
    pub prompt: String,
    pub dropped_tokens: usize,
}

/// Uniform interface over a frozen denoiser. Implementations never mutate weights
/// after construction and are safe to share across threads.
pub trait Backbone: Send + Sync {
    fn config(&self) -> &BackboneConfig;

    fn architecture(&self) -> &Architecture;

    fn schedule(&self) -> &NoiseSchedule;

    fn device(&self) -> &Device;

    fn dtype(&self) -> DType {
        self.architecture().dtype
    }

    /// Encodes `(B, 3, h, w)` images in `[-1, 1]`. Uses the posterior mean unless a
    /// sampling seed is given.
    fn encode_to_latent(&self, images: &Tensor, sample_seed: Option<u64>) -> Result<LatentImage>;

    /// One denoising pass capturing the block activations; differentiable in `z_t` and `cond`.
    fn denoise_capture(
        &self,
        z_t: &LatentImage,
        t: usize,
        cond: &TextEmbedding,
    ) -> Result<BackboneFeatures>;

    fn embed_text_reported(
        &self,
        prompt: &str,
    ) -> Result<(TextEmbedding, Option<TruncationWarning>)>;

    /// Empty prompt gives the null-prompt embedding.
    fn embed_text(&self, prompt: &str) -> Result<TextEmbedding> {
        let (emb, warning) = self.embed_text_reported(prompt)?;
        if let Some(w) = warning {
            log::warn!(
                "prompt truncated to {CONTEXT_LENGTH} tokens ({} dropped): {:?}",
                w.dropped_tokens,
                w.prompt
            );
        }
        Ok(emb)
    }

    /// Digest over every frozen parameter.
    fn parameter_checksum(&self) -> Result<String>;

    fn forward_noise(&self, z0: &LatentImage, t: usize, eps: &Tensor) -> Result<LatentImage> {
        self.schedule().forward_noise(z0, t, eps)
    }
}

/// The seeded-weight denoiser behind `model_id` `toy`/`toy-full-width`, or the same
/// architecture loaded from a safetensors file.
pub struct LatentDenoiser {
    config: BackboneConfig,
    arch: Architecture,
    schedule: NoiseSchedule,
    device: Device,
    encoder: ImageEncoder,
    unet: Unet,
    text: TextEncoder,
    tokenizer: Tokenizer,
    params: ParamStore,
}

impl LatentDenoiser {
    pub fn load(config: &BackboneConfig) -> Result<Self> {
        let arch = config.architecture()?;
        let schedule = NoiseSchedule::build(&config.schedule_config())?;
        let device = Device::Cpu;
        let mut pb = match &config.weights {
            Some(path) => ParamBuilder::from_file(path, arch.dtype, &device)?,
            None => ParamBuilder::seeded(config.seed, arch.dtype, &device),
        };
        let encoder = ImageEncoder::new(
            &mut pb,
            arch.encoder_channels,
            arch.norm_groups,
            arch.latent_channels,
        )?;
        let unet = Unet::new(
            &mut pb,
            arch.block_channels,
            arch.norm_groups,
            arch.latent_channels,
            arch.d_emb,
        )?;
        let text = TextEncoder::new(&mut pb, arch.vocab_size, arch.d_emb)?;
        let params = pb.finish()?;
        Ok(Self {
            config: config.clone(),
            tokenizer: Tokenizer::new(arch.vocab_size),
            arch,
            schedule,
            device,
            encoder,
            unet,
            text,
            params,
        })
    }

    pub fn toy() -> Result<Self> {
        Self::load(&BackboneConfig::toy())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        self.params.save_safetensors(path)
    }
}

impl Backbone for LatentDenoiser {
    fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn device(&self) -> &Device {
        &self.device
    }

    fn encode_to_latent(&self, images: &Tensor, sample_seed: Option<u64>) -> Result<LatentImage> {
        let (_, c, h, w) = images.dims4().map_err(|_| {
            Error::Shape(format!(
                "images must be (B, 3, h, w), got {:?}",
                images.dims()
            ))
        })?;
        if c != 3 || h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "images must be (B, 3, h, w) with h, w divisible by 8, got {:?}",
                images.dims()
            )));
        }
        let images = images.to_dtype(self.arch.dtype)?;
        let (mean, logvar) = self.encoder.moments(&images)?;
        let z = match sample_seed {
            None => mean,
            Some(seed) => {
                let eps = seeded_normal(seed, mean.dims(), mean.dtype(), &self.device)?;
                (mean + (logvar * 0.5)?.exp()?.mul(&eps)?)?
            }
        };
        Ok(LatentImage::new(z.affine(self.arch.latent_scale, 0.0)?))
    }

    fn denoise_capture(
        &self,
        z_t: &LatentImage,
        t: usize,
        cond: &TextEmbedding,
    ) -> Result<BackboneFeatures> {
        self.schedule.alpha_bar(t)?;
        let dims = z_t.data.dims();
        if dims.len() != 4
            || dims[1] != self.arch.latent_channels
            || !dims[2].is_multiple_of(4)
            || !dims[3].is_multiple_of(4)
            || dims[2] == 0
            || dims[3] == 0
        {
            return Err(Error::Shape(format!(
                "latent must be (B, {}, H, W) with H, W divisible by 4, got {dims:?}",
                self.arch.latent_channels
            )));
        }
        if cond.d_emb() != self.arch.d_emb {
            return Err(Error::Shape(format!(
                "conditioning width {} differs from backbone d_emb {}",
                cond.d_emb(),
                self.arch.d_emb
            )));
        }
        let b = dims[0];
        let cond = cond
            .matrix()
            .to_dtype(self.arch.dtype)?
            .unsqueeze(0)?
            .broadcast_as((b, CONTEXT_LENGTH, self.arch.d_emb))?
            .contiguous()?;
        let z = z_t.data.to_dtype(self.arch.dtype)?;
        let out = self.unet.forward(&z, t, &cond)?;
        Ok(BackboneFeatures {
            up: out.up,
            down: out.down,
            t,
            predicted_noise: out.noise,
        })
    }

    fn embed_text_reported(
        &self,
        prompt: &str,
    ) -> Result<(TextEmbedding, Option<TruncationWarning>)> {
        let tokens = self.tokenizer.encode(prompt);
        let warning = (tokens.dropped > 0).then(|| TruncationWarning {
            prompt: prompt.to_string(),
            dropped_tokens: tokens.dropped,
        });
        Ok((self.text.forward(&tokens, &self.device)?, warning))
    }

    fn parameter_checksum(&self) -> Result<String> {
        self.params.checksum()
    }
}

/// Standard normal tensor from a ChaCha stream; identical across platforms for a given seed.
pub fn seeded_normal(seed: u64, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
}
