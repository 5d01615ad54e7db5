//! Gallery feature index, exhaustive nearest-neighbour queries and the `DFEA` store.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{Backbone, TextEmbedding};
use crate::data::{load_and_preprocess, ManifestItem, Modality};
use crate::error::{Error, Result};
use crate::features::{extract_ensembled_tensor, l2_normalize, ExtractionConfig};
use crate::prompting::{PromptSet, VisualPrompt};

pub const DFEA_MAGIC: &[u8; 4] = b"DFEA";
pub const DFEA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub class_name: String,
    pub instance_id: Option<String>,
}

impl From<&ManifestItem> for ItemMeta {
    fn from(item: &ManifestItem) -> Self {
        Self {
            class_name: item.class_name.clone(),
            instance_id: item.instance_id.clone(),
        }
    }
}

/// 64-bit digest of the extraction recipe and the prompt file checksum.
pub fn fingerprint(cfg: &ExtractionConfig, prompt_checksum: &str) -> Result<u64> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    h.update(b"\0");
    h.update(prompt_checksum.as_bytes());
    let digest = h.finalize();
    Ok(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

pub fn prompt_fingerprint(cfg: &ExtractionConfig, prompts: &PromptSet) -> Result<u64> {
    fingerprint(cfg, &prompts.checksum()?)
}

/// Row-normalized feature matrix over gallery items.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    ids: Vec<String>,
    meta: Vec<ItemMeta>,
    features: Vec<f32>,
    d_feat: usize,
    fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked_ids: Vec<String>,
    pub distances: Vec<f64>,
}

/// Items left out of a gallery build.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub skipped: Vec<SkippedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub id: String,
    pub path: PathBuf,
    pub reason: String,
}

const NORM_TOLERANCE: f64 = 1e-5;

impl GalleryIndex {
    /// Rows are renormalized in f64 before being stored as f32.
    pub fn new(
        ids: Vec<String>,
        meta: Vec<ItemMeta>,
        rows: Vec<Vec<f64>>,
        d_feat: usize,
        fingerprint: u64,
    ) -> Result<Self> {
        if ids.len() != meta.len() || ids.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} meta entries and {} rows",
                ids.len(),
                meta.len(),
                rows.len()
            )));
        }
        let mut features = Vec::with_capacity(rows.len() * d_feat);
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != d_feat {
                return Err(Error::Shape(format!(
                    "row `{id}` has {} values, expected {d_feat}",
                    row.len()
                )));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Numerical(format!("row `{id}` has norm {norm}")));
            }
            features.extend(row.iter().map(|v| (v / norm) as f32));
        }
        Self::from_parts(ids, meta, features, d_feat, fingerprint)
    }

    fn from_parts(
        ids: Vec<String>,
        meta: Vec<ItemMeta>,
        features: Vec<f32>,
        d_feat: usize,
        fingerprint: u64,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate gallery id `{id}`")));
            }
        }
        let index = Self {
            ids,
            meta,
            features,
            d_feat,
            fingerprint,
        };
        for i in 0..index.len() {
            let norm = index
                .row(i)
                .iter()
                .map(|v| (*v as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Data(format!(
                    "gallery row `{}` has norm {norm}",
                    index.ids[i]
                )));
            }
        }
        Ok(index)
    }

    pub fn empty(d_feat: usize, fingerprint: u64) -> Self {
        Self {
            ids: Vec::new(),
            meta: Vec::new(),
            features: Vec::new(),
            d_feat,
            fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn meta(&self) -> &[ItemMeta] {
        &self.meta
    }

    pub fn meta_of(&self, id: &str) -> Option<&ItemMeta> {
        self.ids.iter().position(|i| i == id).map(|i| &self.meta[i])
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.d_feat..(i + 1) * self.d_feat]
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// Refuses to serve features produced by a different recipe.
    pub fn check_fingerprint(&self, expected: u64) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::Fingerprint(format!(
                "gallery was built with fingerprint {:016x} but the current extraction config \
                 and prompts give {expected:016x}; rebuild the gallery with the same recipe",
                self.fingerprint
            )));
        }
        Ok(())
    }

    /// Euclidean distances in f64 from a query row (rounded to f32 first, like stored rows).
    pub fn distances(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.d_feat {
            return Err(Error::Shape(format!(
                "query has {} values, gallery rows have {}",
                query.len(),
                self.d_feat
            )));
        }
        let q: Vec<f64> = query.iter().map(|v| *v as f32 as f64).collect();
        Ok((0..self.len())
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| (*a as f64 - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    /// Top-`k` rows by ascending distance, ties by ascending id; `k > N` yields `N`.
    pub fn rank(&self, query_id: &str, query: &[f64], k: usize) -> Result<RetrievalResult> {
        let dist = self.distances(query)?;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            dist[a]
                .total_cmp(&dist[b])
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        order.truncate(k.min(self.len()));
        Ok(RetrievalResult {
            query_id: query_id.to_string(),
            ranked_ids: order.iter().map(|&i| self.ids[i].clone()).collect(),
            distances: order.iter().map(|&i| dist[i]).collect(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(32 + self.features.len() * 4);
        out.extend_from_slice(DFEA_MAGIC);
        out.extend_from_slice(&DFEA_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.d_feat as u32).to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let block = StoredMeta {
            ids: self.ids.clone(),
            meta: self.meta.clone(),
        };
        out.extend_from_slice(&serde_json::to_vec(&block)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 4 + 8 + 4 + 8;
        if bytes.len() < HEADER {
            return Err(Error::Format("feature store is truncated".into()));
        }
        if &bytes[..4] != DFEA_MAGIC {
            return Err(Error::Format("not a feature store (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != DFEA_VERSION {
            return Err(Error::Format(format!(
                "unsupported feature store version {version}"
            )));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let d_feat = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
        let fp = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
        let matrix_end = n
            .checked_mul(d_feat)
            .and_then(|c| c.checked_mul(4))
            .and_then(|c| c.checked_add(HEADER))
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| Error::Format("feature matrix is truncated".into()))?;
        let features = bytes[HEADER..matrix_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let block: StoredMeta = serde_json::from_slice(&bytes[matrix_end..])
            .map_err(|e| Error::Format(format!("feature store metadata: {e}")))?;
        if block.ids.len() != n || block.meta.len() != n {
            return Err(Error::Format(format!(
                "header declares {n} rows but metadata lists {} ids",
                block.ids.len()
            )));
        }
        Self::from_parts(block.ids, block.meta, features, d_feat, fp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredMeta {
    ids: Vec<String>,
    meta: Vec<ItemMeta>,
}

/// Prompted, ensembled and renormalized feature of one preprocessed `(3, h, w)` image.
pub fn prompted_feature(
    backbone: &dyn Backbone,
    image: &Tensor,
    visual: &VisualPrompt,
    cond: &TextEmbedding,
    cfg: &ExtractionConfig,
) -> Result<Vec<f64>> {
    let prompted = visual.apply(&image.to_dtype(backbone.dtype())?)?;
    let f = extract_ensembled_tensor(backbone, &prompted, cond, cfg, cfg.base_seed)?;
    let f = l2_normalize(&f.unsqueeze(0)?)?.squeeze(0)?;
    let values = f.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite feature values".into()));
    }
    Ok(values)
}

fn load_item(backbone: &dyn Backbone, item: &ManifestItem) -> Result<Tensor> {
    let side = backbone.config().image_side as u32;
    load_and_preprocess(&item.path, side, item.modality)?
        .to_tensor(backbone.dtype(), backbone.device())
}

/// Extracts every photo with the photo-side prompt and the learned textual prompt.
/// Unreadable images are skipped and listed in the report.
pub fn build_gallery(
    photos: &[&ManifestItem],
    prompts: &PromptSet,
    cfg: &ExtractionConfig,
    backbone: &dyn Backbone,
) -> Result<(GalleryIndex, BuildReport)> {
    check_task(prompts, cfg)?;
    cfg.validate(backbone.architecture())?;
    let d_feat = cfg.feature_dim(backbone.architecture());
    let fp = prompt_fingerprint(cfg, prompts)?;
    let cond = prompts.textual().embedding()?;
    let mut report = BuildReport::default();
    let (mut ids, mut meta, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for item in photos {
        if item.modality != Modality::Photo {
            return Err(Error::Data(format!(
                "gallery item `{}` is not a photo",
                item.id
            )));
        }
        let image = match load_item(backbone, item) {
            Ok(t) => t,
            Err(e @ (Error::Image { .. } | Error::Io { .. })) => {
                log::warn!("skipping gallery item `{}`: {e}", item.id);
                report.skipped.push(SkippedItem {
                    id: item.id.clone(),
                    path: item.path.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        rows.push(prompted_feature(
            backbone,
            &image,
            prompts.visual_photo(),
            &cond,
            cfg,
        )?);
        ids.push(item.id.clone());
        meta.push(ItemMeta::from(*item));
    }
    if rows.is_empty() {
        return Ok((GalleryIndex::empty(d_feat, fp), report));
    }
    Ok((GalleryIndex::new(ids, meta, rows, d_feat, fp)?, report))
}

fn check_task(prompts: &PromptSet, cfg: &ExtractionConfig) -> Result<()> {
    if prompts.task() != cfg.task {
        return Err(Error::Config(format!(
            "prompts were trained for {} retrieval but the extraction config is for {}",
            prompts.task().as_str(),
            cfg.task.as_str()
        )));
    }
    Ok(())
}

/// Feature of a sketch query under the sketch-side prompt and `cond`.
pub fn query_feature(
    sketch: &ManifestItem,
    prompts: &PromptSet,
    cfg: &ExtractionConfig,
    backbone: &dyn Backbone,
    cond: &TextEmbedding,
) -> Result<Vec<f64>> {
    check_task(prompts, cfg)?;
    let image = load_item(backbone, sketch)?;
    prompted_feature(backbone, &image, prompts.visual_sketch(), cond, cfg)
}

/// Ranks the gallery for one sketch after checking the recipe fingerprint.
pub fn query(
    sketch: &ManifestItem,
    prompts: &PromptSet,
    cfg: &ExtractionConfig,
    index: &GalleryIndex,
    k: usize,
    backbone: &dyn Backbone,
    cond: &TextEmbedding,
) -> Result<RetrievalResult> {
    index.check_fingerprint(prompt_fingerprint(cfg, prompts)?)?;
    let f = query_feature(sketch, prompts, cfg, backbone, cond)?;
    index.rank(&sketch.id, &f, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn meta(c: &str) -> ItemMeta {
        ItemMeta {
            class_name: c.into(),
            instance_id: None,
        }
    }

    fn random_index(n: usize, d: usize, seed: u64) -> GalleryIndex {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ids = (0..n).map(|i| format!("p{i:03}")).collect();
        GalleryIndex::new(ids, (0..n).map(|_| meta("c")).collect(), rows, d, 7).unwrap()
    }

    #[test]
    fn rows_are_unit_norm_and_ids_unique() {
        let idx = random_index(10, 16, 1);
        for i in 0..idx.len() {
            let n: f64 = idx
                .row(i)
                .iter()
                .map(|v| (*v as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        let dup = GalleryIndex::new(
            vec!["a".into(), "a".into()],
            vec![meta("c"), meta("c")],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            2,
            0,
        );
        assert!(matches!(dup, Err(Error::Data(_))));
    }

    #[test]
    fn empty_index_answers_with_nothing() {
        let idx = GalleryIndex::empty(4, 0);
        let r = idx.rank("q", &[1.0, 0.0, 0.0, 0.0], 10).unwrap();
        assert!(r.ranked_ids.is_empty() && r.distances.is_empty());
    }

    #[test]
    fn exact_duplicate_is_first_at_distance_zero() {
        let idx = random_index(20, 8, 2);
        let q: Vec<f64> = idx.row(13).iter().map(|v| *v as f64).collect();
        let r = idx.rank("q", &q, 1).unwrap();
        assert_eq!(r.ranked_ids, vec!["p013"]);
        assert_eq!(r.distances, vec![0.0]);
    }

    #[test]
    fn ties_order_by_id_and_k_is_capped() {
        let ids = vec!["c".to_string(), "a".into(), "b".into()];
        let rows = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let idx = GalleryIndex::new(ids, vec![meta("x"); 3], rows, 2, 0).unwrap();
        let r = idx.rank("q", &[1.0, 0.0], 10).unwrap();
        assert_eq!(r.ranked_ids, vec!["b", "a", "c"]);
        assert_eq!(r.distances[1], r.distances[2]);
    }

    #[test]
    fn store_round_trip_and_corruption() {
        let idx = random_index(6, 5, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.dfea");
        idx.save(&path).unwrap();
        let back = GalleryIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        let bytes = idx.to_bytes().unwrap();
        assert!(matches!(
            GalleryIndex::from_bytes(&bytes[..30]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(
            GalleryIndex::from_bytes(&bad),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn fingerprint_tracks_recipe() {
        let cfg = ExtractionConfig::default();
        let a = fingerprint(&cfg, "abc").unwrap();
        assert_eq!(a, fingerprint(&cfg, "abc").unwrap());
        assert_ne!(a, fingerprint(&cfg, "abd").unwrap());
        let mut other = cfg.clone();
        other.t = 300;
        assert_ne!(a, fingerprint(&other, "abc").unwrap());
        let idx = GalleryIndex::empty(4, a);
        assert!(idx.check_fingerprint(a).is_ok());
        assert!(matches!(
            idx.check_fingerprint(a ^ 1),
            Err(Error::Fingerprint(_))
        ));
    }
}
