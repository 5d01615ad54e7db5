//! Procedural sketch/photo dataset with class-specific geometry.
//!
//! Each class fixes a vertex count, a star depth, an aspect ratio, an orientation and a
//! size; each instance jitters scale, rotation, position and vertex radii. The photo is a filled, striped rendering on
//! a noisy background, the sketch the black outline of the same polygon on white.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, ManifestItem, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub manifest: DatasetManifest,
    /// Per-instance geometry `[vertex count, star depth, aspect]`, keyed by instance id.
    pub geometry: BTreeMap<String, [f64; 3]>,
}

#[derive(Debug, Clone, Copy)]
struct ClassShape {
    vertices: usize,
    star_depth: f64,
    aspect: f64,
    rotation: f64,
    scale: f64,
}

fn class_shape(c: usize) -> ClassShape {
    ClassShape {
        vertices: 3 + c % 5,
        star_depth: [0.0, 0.45, 0.25][(c / 5) % 3],
        aspect: [1.0, 1.6][(c / 15) % 2],
        rotation: (c as f64 * 0.61803398875 * TAU) % TAU,
        scale: [0.30, 0.40, 0.35][c % 3],
    }
}

pub fn class_name(c: usize) -> String {
    format!("class_{c:02}")
}

fn polygon(shape: ClassShape, side: f64, rng: &mut ChaCha8Rng) -> (Vec<(f64, f64)>, [f64; 3]) {
    let radius = side * shape.scale * rng.random_range(0.92..1.08);
    let rotation = shape.rotation + rng.random_range(-0.2..0.2);
    let aspect = shape.aspect * rng.random_range(0.95..1.05);
    let cx = side * (0.5 + rng.random_range(-0.06..0.06));
    let cy = side * (0.5 + rng.random_range(-0.06..0.06));
    let corners = if shape.star_depth > 0.0 {
        2 * shape.vertices
    } else {
        shape.vertices
    };
    let pts = (0..corners)
        .map(|k| {
            let inner = shape.star_depth > 0.0 && k % 2 == 1;
            let r = radius
                * rng.random_range(0.92..1.08)
                * if inner { 1.0 - shape.star_depth } else { 1.0 };
            let a = TAU * k as f64 / corners as f64;
            let (x, y) = (r * a.cos() * aspect, r * a.sin());
            let (s, c) = rotation.sin_cos();
            (cx + x * c - y * s, cy + x * s + y * c)
        })
        .collect();
    (pts, [shape.vertices as f64, shape.star_depth, aspect])
}

fn inside(pts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let n = pts.len();
    for i in 0..n {
        let (x1, y1) = pts[i];
        let (x2, y2) = pts[(i + 1) % n];
        if (y1 > y) != (y2 > y) && x < x1 + (y - y1) * (x2 - x1) / (y2 - y1) {
            hit = !hit;
        }
    }
    hit
}

fn edge_distance(pts: &[(f64, f64)], x: f64, y: f64) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (ax, ay) = pts[i];
            let (bx, by) = pts[(i + 1) % n];
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            ((x - ax - t * dx).powi(2) + (y - ay - t * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

fn render_photo(pts: &[(f64, f64)], side: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let fill: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(30.0..220.0));
    let back: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(170.0..250.0));
    let freq = rng.random_range(0.15..0.35);
    let phase = rng.random_range(0.0..TAU);
    let noise: Vec<f64> = (0..side * side)
        .map(|_| rng.random_range(-12.0..12.0))
        .collect();
    RgbImage::from_fn(side, side, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let n = noise[(y * side + x) as usize];
        let rgb = if inside(pts, px, py) {
            let stripe = 0.8 + 0.2 * ((px + py) * freq + phase).sin();
            fill.map(|c| c * stripe)
        } else {
            back.map(|c| c + n)
        };
        Rgb(rgb.map(|c| c.round().clamp(0.0, 255.0) as u8))
    })
}

fn render_sketch(pts: &[(f64, f64)], side: u32) -> RgbImage {
    let half_width = (side as f64 / 48.0).max(0.75);
    RgbImage::from_fn(side, side, |x, y| {
        if edge_distance(pts, x as f64 + 0.5, y as f64 + 0.5) <= half_width {
            Rgb([0, 0, 0])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes `n_classes * n_instances` photo/sketch pairs under `out_root` in the
/// `sketchy_like` layout, plus `manifest.json` and `captions.jsonl`.
pub fn generate_toy_dataset(
    n_classes: usize,
    n_instances: usize,
    side: u32,
    seed: u64,
    out_root: &Path,
) -> Result<ToyDataset> {
    if n_classes < 2 || n_instances < 2 {
        return Err(Error::Config(
            "toy dataset needs at least 2 classes and 2 instances".into(),
        ));
    }
    if n_classes > 30 {
        return Err(Error::Config(
            "toy geometry supports at most 30 classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    let mut geometry = BTreeMap::new();
    let mut captions = Vec::new();
    for c in 0..n_classes {
        let shape = class_shape(c);
        let cname = class_name(c);
        for i in 0..n_instances {
            let stem = format!("i{i:03}");
            let instance = format!("{cname}/{stem}");
            let (pts, geo) = polygon(shape, side as f64, &mut rng);
            geometry.insert(instance.clone(), geo);
            for (modality, img) in [
                (Modality::Photo, render_photo(&pts, side, &mut rng)),
                (Modality::Sketch, render_sketch(&pts, side)),
            ] {
                let rel = format!("{}/{cname}/{stem}.png", modality.as_str());
                let path = out_root.join(&rel);
                save(&img, &path)?;
                let id = format!("{}/{cname}/{stem}", modality.as_str());
                let caption = format!(
                    "a {} of a {}-cornered{} shape",
                    if modality == Modality::Photo {
                        "photo"
                    } else {
                        "sketch"
                    },
                    shape.vertices,
                    if shape.star_depth > 0.0 { " star" } else { "" }
                );
                captions.push(serde_json::json!({ "id": id, "caption": caption }));
                items.push(ManifestItem {
                    id,
                    modality,
                    class_name: cname.clone(),
                    instance_id: Some(instance.clone()),
                    path,
                    caption: Some(caption),
                });
            }
        }
    }
    let manifest = DatasetManifest::from_items(items)?;
    let mut portable = manifest.clone();
    for item in &mut portable.items {
        if let Ok(rel) = item.path.strip_prefix(out_root) {
            item.path = rel.to_path_buf();
        }
    }
    portable.save_json(&out_root.join("manifest.json"))?;
    let cap_path = out_root.join("captions.jsonl");
    let mut f = std::fs::File::create(&cap_path).map_err(|e| Error::io(&cap_path, e))?;
    for row in captions {
        writeln!(f, "{row}").map_err(|e| Error::io(&cap_path, e))?;
    }
    Ok(ToyDataset { manifest, geometry })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_have_distinct_shapes() {
        let shapes: Vec<_> = (0..30)
            .map(|c| {
                let s = class_shape(c);
                (
                    s.vertices,
                    (s.star_depth * 100.0) as i64,
                    (s.aspect * 10.0) as i64,
                )
            })
            .collect();
        let unique: std::collections::BTreeSet<_> = shapes.iter().collect();
        assert_eq!(unique.len(), 30);
    }

    #[test]
    fn point_in_polygon() {
        let sq = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        assert!(inside(&sq, 2.0, 2.0));
        assert!(!inside(&sq, 5.0, 2.0));
        assert!((edge_distance(&sq, 2.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_requests() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_toy_dataset(1, 5, 32, 0, dir.path()).is_err());
        assert!(generate_toy_dataset(3, 1, 32, 0, dir.path()).is_err());
    }
}
