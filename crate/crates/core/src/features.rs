//! Pooled retrieval features from captured denoiser activations.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::backbone::{seeded_normal, Architecture, Backbone, LatentImage, TextEmbedding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Same-class photo retrieval.
    Category,
    /// Paired-instance photo retrieval.
    Finegrained,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Category => "category",
            Task::Finegrained => "finegrained",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category" => Ok(Task::Category),
            "finegrained" | "fine-grained" | "fg" => Ok(Task::Finegrained),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineRule {
    Mean,
    Concat,
}

/// Which captured path feeds the pooled features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub task: Task,
    pub t: usize,
    /// 1-based block indices.
    pub layers: Vec<usize>,
    pub combine: CombineRule,
    pub ensemble_size: usize,
    pub source: FeatureSource,
    /// L2-normalize each draw after combining.
    pub normalize: bool,
    /// Draw `k` of an ensemble uses noise seed `base_seed + k`.
    pub base_seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self::for_task(Task::Category)
    }
}

impl ExtractionConfig {
    /// Blocks 1+2 averaged for category retrieval, blocks 3+4 concatenated for fine-grained.
    pub fn for_task(task: Task) -> Self {
        let (layers, combine) = match task {
            Task::Category => (vec![1, 2], CombineRule::Mean),
            Task::Finegrained => (vec![3, 4], CombineRule::Concat),
        };
        Self {
            task,
            t: crate::backbone::DEFAULT_TIMESTEP,
            layers,
            combine,
            ensemble_size: 6,
            source: FeatureSource::Up,
            normalize: true,
            base_seed: 0,
        }
    }

    pub fn block_channels(&self, arch: &Architecture) -> [usize; 4] {
        match self.source {
            FeatureSource::Up => arch.up_channels(),
            FeatureSource::Down => {
                let [c0, c1, c2] = arch.block_channels;
                [c0, c1, c2, c2]
            }
        }
    }

    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        if self.ensemble_size < 1 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("layer set is empty".into()));
        }
        let mut seen = [false; 4];
        for &n in &self.layers {
            if !(1..=4).contains(&n) {
                return Err(Error::Config(format!("layer {n} outside 1..=4")));
            }
            if std::mem::replace(&mut seen[n - 1], true) {
                return Err(Error::Config(format!("layer {n} listed twice")));
            }
        }
        if self.combine == CombineRule::Mean {
            let widths = self.block_channels(arch);
            let first = widths[self.layers[0] - 1];
            if self.layers.iter().any(|n| widths[n - 1] != first) {
                return Err(Error::Shape(format!(
                    "mean combine needs equal widths, layers {:?} have {:?}",
                    self.layers,
                    self.layers
                        .iter()
                        .map(|n| widths[n - 1])
                        .collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }

    /// Length of the combined feature for this architecture.
    pub fn feature_dim(&self, arch: &Architecture) -> usize {
        let widths = self.block_channels(arch);
        match self.combine {
            CombineRule::Mean => widths[self.layers[0] - 1],
            CombineRule::Concat => self.layers.iter().map(|n| widths[n - 1]).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub task: Task,
    pub layers: Vec<usize>,
    pub t: usize,
    pub ensemble_size: usize,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Channelwise maximum over spatial positions: `(B, C, H, W)` to `(B, C)`.
pub fn pool_max(feature_map: &Tensor) -> Result<Tensor> {
    let (b, c, _, _) = feature_map.dims4()?;
    Ok(feature_map.reshape((b, c, ()))?.max(D::Minus1)?)
}

/// Combines pooled `(B, C_i)` vectors; concat keeps the given block order.
pub fn combine(pooled: &[Tensor], rule: CombineRule) -> Result<Tensor> {
    if pooled.is_empty() {
        return Err(Error::Shape("nothing to combine".into()));
    }
    match rule {
        CombineRule::Concat => Ok(Tensor::cat(pooled, 1)?),
        CombineRule::Mean => {
            let dims = pooled[0].dims();
            if let Some(bad) = pooled.iter().find(|p| p.dims() != dims) {
                return Err(Error::Shape(format!(
                    "mean over unequal shapes {dims:?} and {:?}",
                    bad.dims()
                )));
            }
            let mut acc = pooled[0].clone();
            for p in &pooled[1..] {
                acc = (acc + p)?;
            }
            Ok((acc / pooled.len() as f64)?)
        }
    }
}

/// Row-wise L2 normalization of `(B, C)`.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-24)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// Differentiable core: noises the latents of `images` `(B, 3, h, w)` with one seeded
/// draw per row, captures, pools and combines into `(B, d_feat)`.
pub fn extract_batch(
    backbone: &dyn Backbone,
    images: &Tensor,
    cond: &TextEmbedding,
    cfg: &ExtractionConfig,
    seeds: &[u64],
) -> Result<Tensor> {
    let z0 = backbone.encode_to_latent(images, None)?;
    features_from_latent(backbone, &z0, cond, cfg, seeds)
}

fn features_from_latent(
    backbone: &dyn Backbone,
    z0: &LatentImage,
    cond: &TextEmbedding,
    cfg: &ExtractionConfig,
    seeds: &[u64],
) -> Result<Tensor> {
    cfg.validate(backbone.architecture())?;
    let b = z0.batch();
    if seeds.len() != b {
        return Err(Error::Shape(format!(
            "{} seeds for a batch of {b}",
            seeds.len()
        )));
    }
    let dims = z0.data.dims();
    let item_shape = [1, dims[1], dims[2], dims[3]];
    let eps = seeds
        .iter()
        .map(|s| seeded_normal(*s, &item_shape, z0.data.dtype(), backbone.device()))
        .collect::<Result<Vec<_>>>()?;
    let eps = Tensor::cat(&eps, 0)?;
    let zt = backbone.forward_noise(z0, cfg.t, &eps)?;
    let captured = backbone.denoise_capture(&zt, cfg.t, cond)?;
    let maps = match cfg.source {
        crate::features::FeatureSource::Up => &captured.up,
        crate::features::FeatureSource::Down => &captured.down,
    };
    let pooled = cfg
        .layers
        .iter()
        .map(|n| pool_max(&maps[n - 1]))
        .collect::<Result<Vec<_>>>()?;
    let combined = combine(&pooled, cfg.combine)?;
    if cfg.normalize {
        l2_normalize(&combined)
    } else {
        Ok(combined)
    }
}

fn single_image(image: &Tensor) -> Result<Tensor> {
    match image.rank() {
        3 => Ok(image.unsqueeze(0)?),
        4 if image.dims()[0] == 1 => Ok(image.clone()),
        _ => Err(Error::Shape(format!(
            "expected one (3, h, w) image, got {:?}",
            image.dims()
        ))),
    }
}

fn to_feature(row: &Tensor, cfg: &ExtractionConfig, k: usize) -> Result<FeatureVector> {
    Ok(FeatureVector {
        values: row.to_dtype(DType::F64)?.to_vec1::<f64>()?,
        task: cfg.task,
        layers: cfg.layers.clone(),
        t: cfg.t,
        ensemble_size: k,
    })
}

/// One noise draw.
pub fn extract(
    backbone: &dyn Backbone,
    image: &Tensor,
    cond: &TextEmbedding,
    cfg: &ExtractionConfig,
    seed: u64,
) -> Result<FeatureVector> {
    let f = extract_batch(backbone, &single_image(image)?, cond, cfg, &[seed])?;
    to_feature(&f.get(0)?, cfg, 1)
}

/// Differentiable mean of `cfg.ensemble_size` draws with seeds `base_seed + k`, computed
/// as one batched pass over repeated latents. Returns `(d_feat,)`.
pub fn extract_ensembled_tensor(
    backbone: &dyn Backbone,
    image: &Tensor,
    cond: &TextEmbedding,
    cfg: &ExtractionConfig,
    base_seed: u64,
) -> Result<Tensor> {
    let k = cfg.ensemble_size;
    if k < 1 {
        return Err(Error::Config("ensemble_size must be at least 1".into()));
    }
    let z0 = backbone.encode_to_latent(&single_image(image)?, None)?;
    let repeated = LatentImage {
        data: z0.data.repeat((k, 1, 1, 1))?,
        source_id: z0.source_id,
    };
    let seeds: Vec<u64> = (0..k as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let draws = features_from_latent(backbone, &repeated, cond, cfg, &seeds)?;
    Ok(draws.mean(0)?)
}

pub fn extract_ensembled(
    backbone: &dyn Backbone,
    image: &Tensor,
    cond: &TextEmbedding,
    cfg: &ExtractionConfig,
    base_seed: u64,
) -> Result<FeatureVector> {
    let f = extract_ensembled_tensor(backbone, image, cond, cfg, base_seed)?;
    to_feature(&f, cfg, cfg.ensemble_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::{Rng, SeedableRng};

    fn hwc_to_tensor(v: &[f64], a: usize, b: usize, c: usize) -> Tensor {
        Tensor::from_vec(v.to_vec(), (1, a, b, c), &Device::Cpu)
            .unwrap()
            .permute((0, 3, 1, 2))
            .unwrap()
            .contiguous()
            .unwrap()
    }

    #[test]
    fn pool_max_matches_loop_oracle() {
        let (a, b, c) = (8, 8, 1280);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..a * b * c)
            .map(|_| rng.random_range(-5.0..5.0))
            .collect();
        let mut oracle = vec![f64::NEG_INFINITY; c];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    let x = v[(i * b + j) * c + k];
                    if x > oracle[k] {
                        oracle[k] = x;
                    }
                }
            }
        }
        let got = pool_max(&hwc_to_tensor(&v, a, b, c)).unwrap();
        assert_eq!(got.get(0).unwrap().to_vec1::<f64>().unwrap(), oracle);
    }

    #[test]
    fn pool_max_constant_and_spike() {
        let t = (Tensor::ones((1, 3, 4, 4), DType::F64, &Device::Cpu).unwrap() * 2.5).unwrap();
        assert_eq!(
            pool_max(&t).unwrap().to_vec2::<f64>().unwrap(),
            vec![vec![2.5; 3]]
        );
        let mut v = vec![0.0; 3 * 16];
        v[5] = 7.0;
        v[16 + 9] = 3.0;
        v[32] = 1.5;
        let t = Tensor::from_vec(v, (1, 3, 4, 4), &Device::Cpu).unwrap();
        assert_eq!(
            pool_max(&t).unwrap().to_vec2::<f64>().unwrap(),
            vec![vec![7.0, 3.0, 1.5]]
        );
    }

    #[test]
    fn combine_dims_and_errors() {
        let dev = Device::Cpu;
        let a = Tensor::randn(0f64, 1.0, (2, 1280), &dev).unwrap();
        let b = Tensor::randn(0f64, 1.0, (2, 1280), &dev).unwrap();
        assert_eq!(
            combine(&[a.clone(), b], CombineRule::Mean).unwrap().dims(),
            &[2, 1280]
        );
        let c = Tensor::randn(0f64, 1.0, (2, 640), &dev).unwrap();
        let d = Tensor::randn(0f64, 1.0, (2, 320), &dev).unwrap();
        let cat = combine(&[c.clone(), d.clone()], CombineRule::Concat).unwrap();
        assert_eq!(cat.dims(), &[2, 960]);
        let head = cat.narrow(1, 0, 640).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(head, c.to_vec2::<f64>().unwrap());
        assert!(matches!(
            combine(&[c, d], CombineRule::Mean),
            Err(Error::Shape(_))
        ));
        let same = combine(&[a.clone(), a.clone()], CombineRule::Mean).unwrap();
        assert_eq!(same.to_vec2::<f64>().unwrap(), a.to_vec2::<f64>().unwrap());
    }

    #[test]
    fn config_validation() {
        let arch = crate::backbone::BackboneConfig::toy()
            .architecture()
            .unwrap();
        let cat = ExtractionConfig::for_task(Task::Category);
        let fg = ExtractionConfig::for_task(Task::Finegrained);
        assert_eq!(cat.t, 273);
        assert_eq!(cat.ensemble_size, 6);
        assert_eq!(cat.feature_dim(&arch), 80);
        assert_eq!(fg.feature_dim(&arch), 60);
        let mut bad = cat.clone();
        bad.layers = vec![2, 3];
        assert!(matches!(bad.validate(&arch), Err(Error::Shape(_))));
        bad.layers = vec![1, 1];
        assert!(bad.validate(&arch).is_err());
        let mut zero = cat;
        zero.ensemble_size = 0;
        assert!(matches!(zero.validate(&arch), Err(Error::Config(_))));
    }
}
