//! Pixel-space border prompt.

use candle_core::{DType, Device, Tensor, Var};

use crate::error::{Error, Result};

/// Trainable values on a border band of width `border`; the interior is held at zero.
/// Values are channel-major `(3, h, w)`.
#[derive(Debug, Clone)]
pub struct VisualPrompt {
    values: Var,
    mask: Tensor,
    height: usize,
    width: usize,
    border: usize,
}

/// `2 * c * d * (h + w - 2d)` with `c = 3`.
pub fn border_parameter_count(h: usize, w: usize, d: usize) -> usize {
    2 * 3 * d * (h + w - 2 * d)
}

pub(crate) fn on_border(x: usize, y: usize, h: usize, w: usize, d: usize) -> bool {
    x < d || x >= w - d || y < d || y >= h - d
}

impl VisualPrompt {
    pub fn zeros(h: usize, w: usize, border: usize, dtype: DType, device: &Device) -> Result<Self> {
        Self::from_values(&vec![0.0; 3 * h * w], h, w, border, dtype, device)
    }

    /// Builds from channel-major values; interior entries must be zero.
    pub fn from_values(
        values: &[f64],
        h: usize,
        w: usize,
        border: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        if border == 0 || 2 * border >= h.min(w) {
            return Err(Error::Config(format!(
                "border width {border} must be in [1, min(h, w) / 2) for a {h}x{w} image"
            )));
        }
        if values.len() != 3 * h * w {
            return Err(Error::Shape(format!(
                "expected {} prompt values, got {}",
                3 * h * w,
                values.len()
            )));
        }
        let mut mask = vec![0.0f64; 3 * h * w];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let i = (c * h + y) * w + x;
                    if on_border(x, y, h, w, border) {
                        mask[i] = 1.0;
                    } else if values[i] != 0.0 {
                        return Err(Error::Data(format!(
                            "visual prompt interior value at ({c}, {y}, {x}) is nonzero"
                        )));
                    }
                }
            }
        }
        let mask = Tensor::from_vec(mask, (3, h, w), device)?.to_dtype(dtype)?;
        let values = Tensor::from_vec(values.to_vec(), (3, h, w), device)?.to_dtype(dtype)?;
        Ok(Self {
            values: Var::from_tensor(&values)?,
            mask,
            height: h,
            width: w,
            border,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn border(&self) -> usize {
        self.border
    }

    pub fn var(&self) -> &Var {
        &self.values
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn trainable_count(&self) -> usize {
        border_parameter_count(self.height, self.width, self.border)
    }

    /// Nonzero entries of the mask.
    pub fn mask_popcount(&self) -> Result<usize> {
        Ok(self
            .mask
            .to_dtype(DType::F64)?
            .sum_all()?
            .to_scalar::<f64>()? as usize)
    }

    /// Prompt with the interior forced to zero; differentiable in the border values.
    pub fn masked(&self) -> Result<Tensor> {
        Ok(self.values.as_tensor().mul(&self.mask)?)
    }

    /// `I + P_v` on `(3, h, w)` or `(B, 3, h, w)`, without clamping.
    pub fn apply(&self, images: &Tensor) -> Result<Tensor> {
        let dims = images.dims();
        let ok = match dims {
            [3, h, w] | [_, 3, h, w] => *h == self.height && *w == self.width,
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!(
                "image shape {dims:?} does not match a (3, {}, {}) prompt",
                self.height, self.width
            )));
        }
        let p = self.masked()?.to_dtype(images.dtype())?;
        Ok(images.broadcast_add(&p)?)
    }

    /// Re-zeroes the interior after an optimizer step.
    pub fn enforce_interior_zero(&self) -> Result<()> {
        let v = self.values.as_tensor().mul(&self.mask)?;
        self.values.set(&v)?;
        Ok(())
    }

    /// Channel-major values.
    pub fn values(&self) -> Result<Vec<f64>> {
        Ok(self
            .values
            .as_tensor()
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?)
    }

    /// Deep copy with its own storage.
    pub fn snapshot(&self) -> Result<Self> {
        Self::from_values(
            &self.values()?,
            self.height,
            self.width,
            self.border,
            self.values.dtype(),
            self.values.device(),
        )
    }
}
