//! Differentiable building blocks of the seeded denoiser and encoder.

use candle_core::{Tensor, D};

use super::params::ParamBuilder;
use crate::error::Result;

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weight = pb.normal(
            &format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            fan_in.sqrt().recip(),
        )?;
        let bias = pb.constant(&format!("{name}.bias"), &[c_out], 0.0)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    weight_t: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let weight = pb.normal(
            &format!("{name}.weight"),
            &[d_out, d_in],
            (d_in as f64).sqrt().recip(),
        )?;
        let bias = pb.constant(&format!("{name}.bias"), &[d_out], 0.0)?;
        Ok(Self {
            weight_t: weight.t()?.contiguous()?,
            bias,
        })
    }

    /// Applies to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight_t)?
            .broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GroupNorm {
    groups: usize,
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl GroupNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, groups: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            groups,
            gamma: pb.constant(&format!("{name}.weight"), &[channels], 1.0)?,
            beta: pb.constant(&format!("{name}.bias"), &[channels], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let xg = x.reshape((b, self.groups, (c / self.groups) * h * w))?;
        let mean = xg.mean_keepdim(D::Minus1)?;
        let centered = xg.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let normed = normed.reshape((b, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.constant(&format!("{name}.weight"), &[dim], 1.0)?,
            beta: pb.constant(&format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?)
    }
}

pub(crate) fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::silu(x)?)
}

/// Residual block conditioned on the timestep embedding.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        groups: usize,
        c_in: usize,
        c_out: usize,
        temb_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(pb, &format!("{name}.norm1"), groups, c_in)?,
            conv1: Conv2d::new(pb, &format!("{name}.conv1"), c_in, c_out, 3, 1)?,
            time_proj: Linear::new(pb, &format!("{name}.time_proj"), temb_dim, c_out)?,
            norm2: GroupNorm::new(pb, &format!("{name}.norm2"), groups, c_out)?,
            conv2: Conv2d::new(pb, &format!("{name}.conv2"), c_out, c_out, 3, 1)?,
            skip: if c_in == c_out {
                None
            } else {
                Some(Conv2d::new(pb, &format!("{name}.skip"), c_in, c_out, 1, 1)?)
            },
        })
    }

    /// `temb` has shape `(B, temb_dim)`.
    pub fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&silu(&self.norm1.forward(x)?)?)?;
        let t = self.time_proj.forward(&silu(temb)?)?;
        let (b, c) = t.dims2()?;
        let h = h.broadcast_add(&t.reshape((b, c, 1, 1))?)?;
        let h = self.conv2.forward(&silu(&self.norm2.forward(&h)?)?)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?)
    }
}

/// Single-head cross-attention from spatial positions to conditioning tokens.
#[derive(Debug, Clone)]
pub(crate) struct CrossAttention {
    norm: GroupNorm,
    to_q: Linear,
    to_k: Linear,
    to_v: Linear,
    to_out: Linear,
    scale: f64,
}

impl CrossAttention {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        groups: usize,
        channels: usize,
        d_cond: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm: GroupNorm::new(pb, &format!("{name}.norm"), groups, channels)?,
            to_q: Linear::new(pb, &format!("{name}.to_q"), channels, channels)?,
            to_k: Linear::new(pb, &format!("{name}.to_k"), d_cond, channels)?,
            to_v: Linear::new(pb, &format!("{name}.to_v"), d_cond, channels)?,
            to_out: Linear::new(pb, &format!("{name}.to_out"), channels, channels)?,
            scale: (channels as f64).sqrt().recip(),
        })
    }

    /// `cond` has shape `(B, tokens, d_cond)`.
    pub fn forward(&self, x: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let seq = self
            .norm
            .forward(x)?
            .reshape((b, c, h * w))?
            .transpose(1, 2)?
            .contiguous()?;
        let q = self.to_q.forward(&seq)?;
        let k = self.to_k.forward(cond)?;
        let v = self.to_v.forward(cond)?;
        let scores = (q.broadcast_matmul(&k.transpose(1, 2)?.contiguous()?)? * self.scale)?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = self.to_out.forward(&attn.broadcast_matmul(&v)?)?;
        let out = out.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?;
        Ok((x + out)?)
    }
}
