//! Principal-component rendering of a captured feature map as an RGB image.

use std::path::Path;

use candle_core::{DType, Tensor};
use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcaRender {
    pub height: usize,
    pub width: usize,
    /// Row-major `(height * width)` RGB triples in `[0, 1]`.
    pub pixels: Vec<[f64; 3]>,
    /// Top principal directions (unit length, up to three), strongest first.
    pub components: Vec<Vec<f64>>,
    /// Set when the channel covariance has rank below three; missing channels are zero.
    pub degenerate: bool,
}

impl PcaRender {
    pub fn to_image(&self, scale: u32) -> RgbImage {
        let scale = scale.max(1);
        RgbImage::from_fn(
            self.width as u32 * scale,
            self.height as u32 * scale,
            |x, y| {
                let p = self.pixels[(y / scale) as usize * self.width + (x / scale) as usize];
                Rgb(p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
            },
        )
    }

    pub fn save_png(&self, path: &Path, scale: u32) -> Result<()> {
        self.to_image(scale).save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Projects every pixel of a `(C, H, W)` (or `(1, C, H, W)`) map onto the top three
/// eigenvectors of the channel covariance and min-max scales each projection to `[0, 1]`.
pub fn pca_render(feature_map: &Tensor) -> Result<PcaRender> {
    let map = match feature_map.rank() {
        3 => feature_map.clone(),
        4 if feature_map.dims()[0] == 1 => feature_map.squeeze(0)?,
        _ => {
            return Err(Error::Shape(format!(
                "expected a (C, H, W) feature map, got {:?}",
                feature_map.dims()
            )))
        }
    };
    let (c, h, w) = map.dims3()?;
    if c < 3 {
        return Err(Error::Shape(format!(
            "pca render needs >= 3 channels, got {c}"
        )));
    }
    let n = h * w;
    let rows = map
        .to_dtype(DType::F64)?
        .reshape((c, n))?
        .t()?
        .contiguous()?
        .to_vec2::<f64>()?;
    let mut x = DMatrix::from_fn(n, c, |i, j| rows[i][j]);
    for j in 0..c {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let denom = (n.max(2) - 1) as f64;

    // Eigenvectors of the covariance; through the Gram matrix when pixels < channels.
    let (values, vectors): (Vec<f64>, Vec<nalgebra::DVector<f64>>) = if n < c {
        let eig = SymmetricEigen::new((&x * x.transpose()) / denom);
        let order = descending(eig.eigenvalues.as_slice());
        order
            .into_iter()
            .map(|i| {
                let lambda = eig.eigenvalues[i].max(0.0);
                let v = x.transpose() * eig.eigenvectors.column(i);
                let norm = v.norm();
                let v = if norm > 0.0 { v / norm } else { v };
                (lambda, v)
            })
            .unzip()
    } else {
        let eig = SymmetricEigen::new((x.transpose() * &x) / denom);
        let order = descending(eig.eigenvalues.as_slice());
        order
            .into_iter()
            .map(|i| {
                (
                    eig.eigenvalues[i].max(0.0),
                    eig.eigenvectors.column(i).into_owned(),
                )
            })
            .unzip()
    };

    let top = values.first().copied().unwrap_or(0.0);
    let tol = top * 1e-9 + 1e-300;
    let mut components = Vec::new();
    for (lambda, v) in values.iter().zip(&vectors).take(3) {
        if *lambda <= tol {
            break;
        }
        components.push(canonical_sign(v.as_slice().to_vec()));
    }
    let degenerate = components.len() < 3;

    let mut pixels = vec![[0.0; 3]; n];
    for (k, comp) in components.iter().enumerate() {
        let v = nalgebra::DVector::from_column_slice(comp);
        let proj = &x * v;
        let (lo, hi) = proj
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(*p), hi.max(*p))
            });
        let span = hi - lo;
        for (i, p) in proj.iter().enumerate() {
            pixels[i][k] = if span > 0.0 { (p - lo) / span } else { 0.0 };
        }
    }
    Ok(PcaRender {
        height: h,
        width: w,
        pixels,
        components,
        degenerate,
    })
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*b].total_cmp(&values[*a]));
    order
}

/// Flips a direction so its largest-magnitude entry is positive.
fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}
