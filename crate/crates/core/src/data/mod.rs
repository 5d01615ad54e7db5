//! Dataset ingestion, preprocessing and the procedural toy dataset.

mod manifest;
mod preprocess;
mod scan;
mod toy;

pub use manifest::{DatasetManifest, ManifestItem, Modality, Pairing};
pub use preprocess::{load_and_preprocess, preprocess_image, ImageRecord, SKETCH_THRESHOLD};
pub use scan::{scan_dataset, IntegrityReport, Layout};
pub use toy::{class_name, generate_toy_dataset, ToyDataset};

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};

use crate::error::Result;

/// Loads and caches preprocessed item tensors `(3, side, side)`.
pub struct ImageCache {
    side: u32,
    dtype: DType,
    device: Device,
    cache: HashMap<String, Tensor>,
}

impl ImageCache {
    pub fn new(side: u32, dtype: DType, device: &Device) -> Self {
        Self {
            side,
            dtype,
            device: device.clone(),
            cache: HashMap::new(),
        }
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn get(&mut self, item: &ManifestItem) -> Result<Tensor> {
        if let Some(t) = self.cache.get(&item.id) {
            return Ok(t.clone());
        }
        let record = load_and_preprocess(&item.path, self.side, item.modality)?;
        let t = record.to_tensor(self.dtype, &self.device)?;
        self.cache.insert(item.id.clone(), t.clone());
        Ok(t)
    }

    /// Stacks the items into `(B, 3, side, side)`.
    pub fn batch(&mut self, items: &[&ManifestItem]) -> Result<Tensor> {
        let ts = items
            .iter()
            .map(|i| self.get(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&ts, 0)?)
    }
}
