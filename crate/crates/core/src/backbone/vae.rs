//! Convolutional image encoder into the latent space (posterior mean and log-variance).

use candle_core::Tensor;

use super::layers::{silu, Conv2d, GroupNorm};
use super::params::ParamBuilder;
use crate::error::Result;

#[derive(Debug, Clone)]
pub(crate) struct ImageEncoder {
    conv_in: Conv2d,
    down: [Conv2d; 3],
    norm_out: GroupNorm,
    conv_out: Conv2d,
    latent_channels: usize,
}

impl ImageEncoder {
    pub fn new(
        pb: &mut ParamBuilder,
        channels: [usize; 3],
        groups: usize,
        latent_channels: usize,
    ) -> Result<Self> {
        let [e0, e1, e2] = channels;
        Ok(Self {
            conv_in: Conv2d::new(pb, "encoder.conv_in", 3, e0, 3, 1)?,
            down: [
                Conv2d::new(pb, "encoder.down.0", e0, e1, 3, 2)?,
                Conv2d::new(pb, "encoder.down.1", e1, e2, 3, 2)?,
                Conv2d::new(pb, "encoder.down.2", e2, e2, 3, 2)?,
            ],
            norm_out: GroupNorm::new(pb, "encoder.norm_out", groups, e2)?,
            conv_out: Conv2d::new(pb, "encoder.conv_out", e2, 2 * latent_channels, 1, 1)?,
            latent_channels,
        })
    }

    /// Returns `(mean, log_variance)`, each `(B, latent_channels, H/8, W/8)`.
    pub fn moments(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = self.conv_in.forward(images)?;
        for conv in &self.down {
            h = conv.forward(&silu(&h)?)?;
        }
        let h = self.conv_out.forward(&silu(&self.norm_out.forward(&h)?)?)?;
        let l = self.latent_channels;
        let mean = h.narrow(1, 0, l)?;
        let logvar = h.narrow(1, l, l)?.clamp(-30.0, 20.0)?;
        Ok((mean, logvar))
    }
}
