//! Named parameter storage for the seeded denoiser.
//!
//! Parameters are plain tensors, never `Var`s, so no optimizer can reach them.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.elem_count()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    /// SHA-256 over every parameter name, shape and value, in name order.
    pub fn checksum(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, tensor) in &self.tensors {
            hasher.update(name.as_bytes());
            for d in tensor.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let values = tensor
                .flatten_all()?
                .to_dtype(DType::F64)?
                .to_vec1::<f64>()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex_string(&hasher.finalize()))
    }

    pub fn save_safetensors(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds parameters either from a seeded normal draw or from a loaded weight file.
pub(crate) struct ParamBuilder {
    rng: ChaCha8Rng,
    loaded: Option<HashMap<String, Tensor>>,
    store: BTreeMap<String, Tensor>,
    dtype: DType,
    device: Device,
}

impl ParamBuilder {
    pub fn seeded(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            loaded: None,
            store: BTreeMap::new(),
            dtype,
            device: device.clone(),
        }
    }

    pub fn from_file(path: &Path, dtype: DType, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "weight file not found"),
            ));
        }
        let loaded = candle_core::safetensors::load(path, device)?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            loaded: Some(loaded),
            store: BTreeMap::new(),
            dtype,
            device: device.clone(),
        })
    }

    fn take_loaded(&mut self, name: &str, shape: &[usize]) -> Result<Option<Tensor>> {
        let Some(loaded) = self.loaded.as_mut() else {
            return Ok(None);
        };
        let tensor = loaded
            .remove(name)
            .ok_or_else(|| Error::Config(format!("weight file is missing parameter `{name}`")))?;
        if tensor.dims() != shape {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, architecture expects {shape:?}",
                tensor.dims()
            )));
        }
        Ok(Some(tensor.to_dtype(self.dtype)?))
    }

    fn insert(&mut self, name: &str, tensor: Tensor) -> Result<Tensor> {
        if self
            .store
            .insert(name.to_string(), tensor.clone())
            .is_some()
        {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        Ok(tensor)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        if let Some(t) = self.take_loaded(name, shape)? {
            return self.insert(name, t);
        }
        let n: usize = shape.iter().product();
        let tensor = match self.dtype {
            DType::F32 => {
                let v: Vec<f32> = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        (z * std) as f32
                    })
                    .collect();
                Tensor::from_vec(v, shape, &self.device)?
            }
            _ => {
                let v: Vec<f64> = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        z * std
                    })
                    .collect();
                Tensor::from_vec(v, shape, &self.device)?.to_dtype(self.dtype)?
            }
        };
        self.insert(name, tensor)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        if let Some(t) = self.take_loaded(name, shape)? {
            return self.insert(name, t);
        }
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        self.insert(name, t)
    }

    pub fn finish(self) -> Result<ParamStore> {
        if let Some(loaded) = &self.loaded {
            if let Some(extra) = loaded.keys().next() {
                return Err(Error::Config(format!(
                    "weight file has parameter `{extra}` unknown to the architecture"
                )));
            }
        }
        Ok(ParamStore {
            tensors: self.store,
        })
    }
}
