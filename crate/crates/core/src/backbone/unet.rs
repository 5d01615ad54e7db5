//! Time- and text-conditioned denoising UNet with two downsampling stages and
//! four captured upsampling blocks.
//!
//! With latent side `H` and widths `[c0, c1, c2]` the upsampling block outputs are
//! `(c2, H/4)`, `(c2, H/2)`, `(c1, H)`, `(c0, H)`.

use candle_core::{DType, Device, Tensor};

use super::layers::{silu, Conv2d, CrossAttention, GroupNorm, Linear, ResBlock};
use super::params::ParamBuilder;
use crate::error::Result;

#[derive(Debug, Clone)]
struct Stage {
    res: ResBlock,
    attn: CrossAttention,
}

impl Stage {
    fn new(
        pb: &mut ParamBuilder,
        name: &str,
        groups: usize,
        c_in: usize,
        c_out: usize,
        temb: usize,
        d_cond: usize,
    ) -> Result<Self> {
        Ok(Self {
            res: ResBlock::new(pb, &format!("{name}.res"), groups, c_in, c_out, temb)?,
            attn: CrossAttention::new(pb, &format!("{name}.attn"), groups, c_out, d_cond)?,
        })
    }

    fn forward(&self, x: &Tensor, temb: &Tensor, cond: &Tensor) -> Result<Tensor> {
        self.attn.forward(&self.res.forward(x, temb)?, cond)
    }
}

#[derive(Debug, Clone)]
struct Upsample {
    conv: Conv2d,
}

impl Upsample {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        self.conv.forward(&x.upsample_nearest2d(2 * h, 2 * w)?)
    }
}

pub(crate) struct UnetOutputs {
    pub down: [Tensor; 4],
    pub up: [Tensor; 4],
    pub noise: Tensor,
}

#[derive(Debug, Clone)]
pub(crate) struct Unet {
    time_dim: usize,
    time_in: Linear,
    time_out: Linear,
    conv_in: Conv2d,
    down_stages: [Stage; 3],
    downsample: [Conv2d; 2],
    mid: Stage,
    up_stages: [Stage; 4],
    upsample: [Upsample; 2],
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Unet {
    pub fn new(
        pb: &mut ParamBuilder,
        channels: [usize; 3],
        groups: usize,
        latent_channels: usize,
        d_cond: usize,
    ) -> Result<Self> {
        let [c0, c1, c2] = channels;
        let temb = 4 * c0;
        let g = groups;
        Ok(Self {
            time_dim: c0,
            time_in: Linear::new(pb, "unet.time_embedding.linear_1", c0, temb)?,
            time_out: Linear::new(pb, "unet.time_embedding.linear_2", temb, temb)?,
            conv_in: Conv2d::new(pb, "unet.conv_in", latent_channels, c0, 3, 1)?,
            down_stages: [
                Stage::new(pb, "unet.down.0", g, c0, c0, temb, d_cond)?,
                Stage::new(pb, "unet.down.1", g, c0, c1, temb, d_cond)?,
                Stage::new(pb, "unet.down.2", g, c1, c2, temb, d_cond)?,
            ],
            downsample: [
                Conv2d::new(pb, "unet.downsample.0", c0, c0, 3, 2)?,
                Conv2d::new(pb, "unet.downsample.1", c1, c1, 3, 2)?,
            ],
            mid: Stage::new(pb, "unet.mid", g, c2, c2, temb, d_cond)?,
            up_stages: [
                Stage::new(pb, "unet.up.0", g, c2 + c2, c2, temb, d_cond)?,
                Stage::new(pb, "unet.up.1", g, c2 + c1, c2, temb, d_cond)?,
                Stage::new(pb, "unet.up.2", g, c2 + c0, c1, temb, d_cond)?,
                Stage::new(pb, "unet.up.3", g, c1 + c0, c0, temb, d_cond)?,
            ],
            upsample: [
                Upsample {
                    conv: Conv2d::new(pb, "unet.upsample.0", c2, c2, 3, 1)?,
                },
                Upsample {
                    conv: Conv2d::new(pb, "unet.upsample.1", c2, c2, 3, 1)?,
                },
            ],
            norm_out: GroupNorm::new(pb, "unet.norm_out", g, c0)?,
            conv_out: Conv2d::new(pb, "unet.conv_out", c0, latent_channels, 3, 1)?,
        })
    }

    fn time_embedding(&self, t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
        let half = self.time_dim / 2;
        let mut v = vec![0.0f64; self.time_dim];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            v[i] = (t as f64 * freq).cos();
            v[half + i] = (t as f64 * freq).sin();
        }
        let sinusoid = Tensor::from_vec(v, (1, self.time_dim), device)?.to_dtype(dtype)?;
        self.time_out
            .forward(&silu(&self.time_in.forward(&sinusoid)?)?)
    }

    /// `z` is `(B, latent, H, W)` with `H`, `W` divisible by 4; `cond` is `(B, 77, d_cond)`.
    pub fn forward(&self, z: &Tensor, t: usize, cond: &Tensor) -> Result<UnetOutputs> {
        let temb = self.time_embedding(t, z.dtype(), z.device())?;
        let h0 = self.conv_in.forward(z)?;
        let h1 = self.down_stages[0].forward(&h0, &temb, cond)?;
        let d1 = self.downsample[0].forward(&h1)?;
        let h2 = self.down_stages[1].forward(&d1, &temb, cond)?;
        let d2 = self.downsample[1].forward(&h2)?;
        let h3 = self.down_stages[2].forward(&d2, &temb, cond)?;
        let m = self.mid.forward(&h3, &temb, cond)?;

        let u1 = self.up_stages[0].forward(&Tensor::cat(&[&m, &h3], 1)?, &temb, cond)?;
        let x = self.upsample[0].forward(&u1)?;
        let u2 = self.up_stages[1].forward(&Tensor::cat(&[&x, &h2], 1)?, &temb, cond)?;
        let x = self.upsample[1].forward(&u2)?;
        let u3 = self.up_stages[2].forward(&Tensor::cat(&[&x, &h1], 1)?, &temb, cond)?;
        let u4 = self.up_stages[3].forward(&Tensor::cat(&[&u3, &h0], 1)?, &temb, cond)?;
        let noise = self
            .conv_out
            .forward(&silu(&self.norm_out.forward(&u4)?)?)?;
        Ok(UnetOutputs {
            down: [d1, d2, h3, m],
            up: [u1, u2, u3, u4],
            noise,
        })
    }
}
