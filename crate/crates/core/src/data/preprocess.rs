//! Image loading and normalization to `[-1, 1]`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{imageops::FilterType, DynamicImage, GrayImage, Luma, Rgb, RgbImage};

use super::manifest::Modality;
use crate::error::{Error, Result};

/// Gray level (in `[0, 1]`) below which a sketch pixel counts as ink.
pub const SKETCH_THRESHOLD: f32 = 0.5;

/// Channel-major `(3, height, width)` pixels in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    /// `(width, height)` of the decoded file.
    pub original_size: (u32, u32),
}

impl ImageRecord {
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(
            Tensor::from_vec(self.pixels.clone(), (3, self.height, self.width), device)?
                .to_dtype(dtype)?,
        )
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        let plane = self.height * self.width;
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            Rgb([0, 1, 2].map(|c| ((self.pixels[c * plane + i] + 1.0) * 127.5).round() as u8))
        })
    }
}

/// Resizes preserving aspect ratio, centers on a white `side x side` canvas and scales to
/// `[-1, 1]`. Sketches are binarized to black ink on white.
pub fn preprocess_image(img: &DynamicImage, side: u32, modality: Modality) -> ImageRecord {
    let original_size = (img.width(), img.height());
    let (w, h) = original_size;
    let scale = side as f64 / w.max(h).max(1) as f64;
    let nw = ((w as f64 * scale).round() as u32).clamp(1, side);
    let nh = ((h as f64 * scale).round() as u32).clamp(1, side);
    let (ox, oy) = ((side - nw) / 2, (side - nh) / 2);

    let rgb = match modality {
        Modality::Photo => {
            let src = img.to_rgb8();
            let resized = if (nw, nh) == (w, h) {
                src
            } else {
                image::imageops::resize(&src, nw, nh, FilterType::Triangle)
            };
            let mut canvas = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
            image::imageops::overlay(&mut canvas, &resized, ox as i64, oy as i64);
            canvas
        }
        Modality::Sketch => {
            let src = img.to_luma8();
            let resized = if (nw, nh) == (w, h) {
                src
            } else {
                image::imageops::resize(&src, nw, nh, FilterType::Triangle)
            };
            let mut canvas = GrayImage::from_pixel(side, side, Luma([255]));
            image::imageops::overlay(&mut canvas, &resized, ox as i64, oy as i64);
            RgbImage::from_fn(side, side, |x, y| {
                let g = canvas.get_pixel(x, y)[0] as f32 / 255.0;
                if g < SKETCH_THRESHOLD {
                    Rgb([0, 0, 0])
                } else {
                    Rgb([255, 255, 255])
                }
            })
        }
    };
    let n = (side * side) as usize;
    let mut pixels = vec![0.0f32; 3 * n];
    for (i, p) in rgb.pixels().enumerate() {
        for c in 0..3 {
            pixels[c * n + i] = p[c] as f32 / 127.5 - 1.0;
        }
    }
    ImageRecord {
        height: side as usize,
        width: side as usize,
        pixels,
        original_size,
    }
}

pub fn load_and_preprocess(path: &Path, side: u32, modality: Modality) -> Result<ImageRecord> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(preprocess_image(&img, side, modality))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_sketch_page_is_all_ones() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(100, 60, Luma([250])));
        let r = preprocess_image(&img, 64, Modality::Sketch);
        assert_eq!(r.pixels.len(), 3 * 64 * 64);
        assert!(r.pixels.iter().all(|v| *v == 1.0));
        assert_eq!(r.original_size, (100, 60));
    }

    #[test]
    fn values_in_range_and_idempotent() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_fn(50, 30, |x, y| {
            Rgb([(x * 5) as u8, (y * 8) as u8, ((x + y) * 3) as u8])
        }));
        for m in [Modality::Photo, Modality::Sketch] {
            let r = preprocess_image(&img, 32, m);
            assert!(r.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
            let again = preprocess_image(&DynamicImage::ImageRgb8(r.to_rgb_image()), 32, m);
            assert_eq!(r.pixels, again.pixels);
            assert_eq!(r, preprocess_image(&img, 32, m));
        }
    }

    #[test]
    fn undecodable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("broken.png");
        std::fs::write(&p, b"not a png").unwrap();
        match load_and_preprocess(&p, 32, Modality::Photo) {
            Err(Error::Image { path, .. }) => assert_eq!(path, p),
            other => panic!("unexpected {other:?}"),
        }
    }
}
