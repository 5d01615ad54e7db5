//! Prompt optimization through the frozen backbone.

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::file::write_prompts;
use super::loss::{triplet_loss_tensor, DEFAULT_MARGIN};
use super::sampling::{TripletBatch, TripletSampler};
use super::{init_prompts, PromptSet};
use crate::backbone::Backbone;
use crate::data::{DatasetManifest, ImageCache, ManifestItem};
use crate::error::{Error, Result};
use crate::features::{extract_batch, ExtractionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub margin: f64,
    pub border_width: usize,
    pub seed: u64,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    /// Where the prompts are dumped if the loss stops being finite.
    pub diagnostic_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.09,
            batch_size: 64,
            epochs: 100,
            margin: DEFAULT_MARGIN,
            border_width: 16,
            seed: 0,
            max_steps: None,
            diagnostic_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!(
                "margin {} must be positive",
                self.margin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub steps: usize,
}

impl TrainingLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.mean_loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_loss)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Fresh prompts for `extraction.task`, trained on `manifest`. Training uses a single
/// noise draw per item regardless of `extraction.ensemble_size`.
pub fn train_prompts(
    manifest: &DatasetManifest,
    extraction: &ExtractionConfig,
    cfg: &TrainConfig,
    backbone: &dyn Backbone,
) -> Result<(PromptSet, TrainingLog)> {
    let side = backbone.config().image_side;
    let prompts = init_prompts(extraction.task, side, side, cfg.border_width, backbone)?;
    let log = continue_training(&prompts, manifest, extraction, cfg, backbone)?;
    Ok((prompts, log))
}

/// Triplet loss of one batch under `prompts`, differentiable in the prompt vars.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    prompts: &PromptSet,
    batch: &TripletBatch,
    images: &mut ImageCache,
    manifest: &DatasetManifest,
    backbone: &dyn Backbone,
    extraction: &ExtractionConfig,
    margin: f64,
    seeds: &[u64],
) -> Result<Tensor> {
    let index = manifest.index();
    let lookup = |members: &[super::TripletMember]| -> Result<Vec<&ManifestItem>> {
        members
            .iter()
            .map(|m| {
                index
                    .get(m.id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("unknown item `{}`", m.id)))
            })
            .collect()
    };
    let b = batch.len();
    let anchors = prompts
        .visual_sketch()
        .apply(&images.batch(&lookup(&batch.anchors)?)?)?;
    let pos = images.batch(&lookup(&batch.positives)?)?;
    let neg = images.batch(&lookup(&batch.negatives)?)?;
    let photos = prompts
        .visual_photo()
        .apply(&Tensor::cat(&[pos, neg], 0)?)?;
    let all = Tensor::cat(&[anchors, photos], 0)?;
    let cond = prompts.textual().embedding()?;
    let f = extract_batch(backbone, &all, &cond, extraction, seeds)?;
    triplet_loss_tensor(
        &f.narrow(0, 0, b)?,
        &f.narrow(0, b, b)?,
        &f.narrow(0, 2 * b, b)?,
        margin,
    )
}

fn diagnostic(prompts: &PromptSet, cfg: &TrainConfig, epoch: usize, step: usize) -> Error {
    let mut msg = format!("non-finite loss at epoch {epoch}, step {step}");
    let norms: Vec<String> = prompts
        .vars()
        .iter()
        .map(|v| {
            v.as_tensor()
                .sqr()
                .and_then(|t| t.sum_all())
                .and_then(|t| t.to_dtype(candle_core::DType::F64))
                .and_then(|t| t.to_scalar::<f64>())
                .map(|s| format!("{:.4e}", s.sqrt()))
                .unwrap_or_else(|_| "?".into())
        })
        .collect();
    msg.push_str(&format!("; prompt norms [{}]", norms.join(", ")));
    if let Some(path) = &cfg.diagnostic_path {
        match write_prompts(prompts, path) {
            Ok(()) => msg.push_str(&format!("; snapshot written to {}", path.display())),
            Err(e) => msg.push_str(&format!("; snapshot failed: {e}")),
        }
    }
    Error::Numerical(msg)
}

/// Optimizes the vars of `prompts` in place. Only prompt tensors receive updates.
pub fn continue_training(
    prompts: &PromptSet,
    manifest: &DatasetManifest,
    extraction: &ExtractionConfig,
    cfg: &TrainConfig,
    backbone: &dyn Backbone,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let task = prompts.task();
    let side = backbone.config().image_side;
    if prompts.height() != side || prompts.width() != side {
        return Err(Error::Shape(format!(
            "prompts are {}x{} but the backbone expects {side}x{side} images",
            prompts.height(),
            prompts.width()
        )));
    }
    if prompts.d_emb() != backbone.architecture().d_emb {
        return Err(Error::Shape(format!(
            "textual prompt width {} does not match d_emb {}",
            prompts.d_emb(),
            backbone.architecture().d_emb
        )));
    }
    if extraction.task != task {
        return Err(Error::Config(format!(
            "{} prompts cannot be trained with a {} extraction config",
            task.as_str(),
            extraction.task.as_str()
        )));
    }
    let mut extraction = extraction.clone();
    extraction.ensemble_size = 1;
    extraction.validate(backbone.architecture())?;

    let sampler = TripletSampler::new(manifest, task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut images = ImageCache::new(side as u32, backbone.dtype(), backbone.device());
    let mut opt = AdamW::new(
        prompts.vars(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..ParamsAdamW::default()
        },
    )?;
    let mut log = TrainingLog::default();
    let mut stop = false;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in sampler.epoch(cfg.batch_size, &mut rng) {
            if cfg.max_steps.is_some_and(|m| log.steps >= m) {
                stop = true;
                break;
            }
            let seeds: Vec<u64> = (0..3 * batch.len()).map(|_| rng.random()).collect();
            let loss = batch_loss(
                prompts,
                &batch,
                &mut images,
                manifest,
                backbone,
                &extraction,
                cfg.margin,
                &seeds,
            )?;
            let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(diagnostic(prompts, cfg, epoch, log.steps));
            }
            opt.backward_step(&loss)?;
            prompts.enforce_interior_zero()?;
            total += value * batch.len() as f64;
            count += batch.len();
            log.steps += 1;
        }
        if count == 0 {
            break;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: total / count.max(1) as f64,
            lr: opt.learning_rate(),
        };
        log::info!("epoch {} mean loss {:.6}", record.epoch, record.mean_loss);
        log.records.push(record);
        if stop {
            break;
        }
    }
    Ok(log)
}
