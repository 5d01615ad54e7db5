//! Forward-noising schedule.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::LatentImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    /// β linear in t.
    Linear,
    /// √β linear in t.
    ScaledLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub family: ScheduleFamily,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            family: ScheduleFamily::ScaledLinear,
            beta_start: 0.00085,
            beta_end: 0.012,
        }
    }
}

/// Per-step `alphas` and their running products `alpha_bars`; step `t` is zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(cfg: &ScheduleConfig) -> Result<Self> {
        if cfg.total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        for (name, beta) in [("beta_start", cfg.beta_start), ("beta_end", cfg.beta_end)] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::Config(format!("{name} = {beta} is outside (0, 1)")));
            }
        }
        let n = cfg.total_steps;
        let frac = |i: usize| {
            if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            }
        };
        let betas: Vec<f64> = match cfg.family {
            ScheduleFamily::Linear => (0..n)
                .map(|i| cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac(i))
                .collect(),
            ScheduleFamily::ScaledLinear => {
                let (a, b) = (cfg.beta_start.sqrt(), cfg.beta_end.sqrt());
                (0..n).map(|i| (a + (b - a) * frac(i)).powi(2)).collect()
            }
        };
        Self::from_alphas(betas.iter().map(|b| 1.0 - b).collect())
    }

    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(bad) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("alpha {bad} is outside (0, 1]")));
        }
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { alphas, alpha_bars })
    }

    /// Every alpha exactly 1: noising leaves latents untouched.
    pub fn identity(total_steps: usize) -> Result<Self> {
        Self::from_alphas(vec![1.0; total_steps])
    }

    pub fn total_steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or_else(|| {
            Error::Range(format!(
                "timestep {t} outside [0, {})",
                self.alpha_bars.len()
            ))
        })
    }

    /// `z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps`, elementwise and
    /// differentiable in `z0`.
    pub fn forward_noise(&self, z0: &LatentImage, t: usize, eps: &Tensor) -> Result<LatentImage> {
        let ab = self.alpha_bar(t)?;
        if eps.dims() != z0.data.dims() {
            return Err(Error::Shape(format!(
                "noise shape {:?} differs from latent shape {:?}",
                eps.dims(),
                z0.data.dims()
            )));
        }
        let eps = eps.to_dtype(z0.data.dtype())?;
        let data = (z0.data.affine(ab.sqrt(), 0.0)? + eps.affine((1.0 - ab).sqrt(), 0.0)?)?;
        Ok(LatentImage {
            data,
            source_id: z0.source_id.clone(),
        })
    }
}
