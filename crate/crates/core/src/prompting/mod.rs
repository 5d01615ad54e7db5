//! Learned visual and textual prompts, triplet training and handcrafted conditioning.

mod file;
mod loss;
mod sampling;
mod train;
mod visual;

pub use file::{read_prompts, write_prompts, DPRM_MAGIC, DPRM_VERSION};
pub use loss::{triplet_loss, triplet_loss_tensor, triplet_loss_values, DEFAULT_MARGIN};
pub use sampling::{sample_triplets, TripletBatch, TripletMember, TripletSampler};
pub use train::{
    batch_loss, continue_training, train_prompts, EpochRecord, TrainConfig, TrainingLog,
};
pub use visual::{border_parameter_count, VisualPrompt};

use candle_core::{DType, Device, Tensor, Var};
use sha2::{Digest, Sha256};

use crate::backbone::{Backbone, TextEmbedding, CONTEXT_LENGTH};
use crate::error::{Error, Result};
use crate::features::Task;

/// A `(77, d_emb)` conditioning matrix, every entry trainable.
#[derive(Debug, Clone)]
pub struct TextualPrompt {
    matrix: Var,
}

impl TextualPrompt {
    pub fn from_embedding(embedding: &TextEmbedding) -> Result<Self> {
        Ok(Self {
            matrix: Var::from_tensor(&embedding.matrix().detach())?,
        })
    }

    pub fn from_values(
        values: &[f64],
        d_emb: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        if values.len() != CONTEXT_LENGTH * d_emb {
            return Err(Error::Shape(format!(
                "textual prompt needs {} values, got {}",
                CONTEXT_LENGTH * d_emb,
                values.len()
            )));
        }
        let t =
            Tensor::from_vec(values.to_vec(), (CONTEXT_LENGTH, d_emb), device)?.to_dtype(dtype)?;
        Ok(Self {
            matrix: Var::from_tensor(&t)?,
        })
    }

    pub fn d_emb(&self) -> usize {
        self.matrix.dims()[1]
    }

    pub fn var(&self) -> &Var {
        &self.matrix
    }

    /// Conditioning view that stays connected to the trainable matrix.
    pub fn embedding(&self) -> Result<TextEmbedding> {
        TextEmbedding::new(self.matrix.as_tensor().clone())
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        Ok(self
            .matrix
            .as_tensor()
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?)
    }

    pub fn snapshot(&self) -> Result<Self> {
        Self::from_values(
            &self.values()?,
            self.d_emb(),
            self.matrix.dtype(),
            self.matrix.device(),
        )
    }
}

/// Prompts for one task. Fine-grained runs share one visual prompt across both branches.
#[derive(Debug, Clone)]
pub struct PromptSet {
    task: Task,
    visual_sketch: VisualPrompt,
    visual_photo: Option<VisualPrompt>,
    textual: TextualPrompt,
}

impl PromptSet {
    pub fn new(
        task: Task,
        visual_sketch: VisualPrompt,
        visual_photo: Option<VisualPrompt>,
        textual: TextualPrompt,
    ) -> Result<Self> {
        match (task, &visual_photo) {
            (Task::Category, None) => {
                return Err(Error::Config(
                    "category prompts need a photo visual prompt".into(),
                ))
            }
            (Task::Finegrained, Some(_)) => {
                return Err(Error::Config(
                    "fine-grained prompts share one visual prompt".into(),
                ))
            }
            (Task::Category, Some(p)) => {
                let s = &visual_sketch;
                if (p.height(), p.width(), p.border()) != (s.height(), s.width(), s.border()) {
                    return Err(Error::Shape(
                        "sketch and photo prompts differ in geometry".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(Self {
            task,
            visual_sketch,
            visual_photo,
            textual,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn visual_sketch(&self) -> &VisualPrompt {
        &self.visual_sketch
    }

    /// The photo-branch prompt; the sketch prompt itself for fine-grained runs.
    pub fn visual_photo(&self) -> &VisualPrompt {
        self.visual_photo.as_ref().unwrap_or(&self.visual_sketch)
    }

    pub fn visual_for(&self, modality: crate::data::Modality) -> &VisualPrompt {
        match modality {
            crate::data::Modality::Sketch => self.visual_sketch(),
            crate::data::Modality::Photo => self.visual_photo(),
        }
    }

    pub fn shares_visual_prompt(&self) -> bool {
        self.visual_photo.is_none()
    }

    pub fn textual(&self) -> &TextualPrompt {
        &self.textual
    }

    pub fn height(&self) -> usize {
        self.visual_sketch.height()
    }

    pub fn width(&self) -> usize {
        self.visual_sketch.width()
    }

    pub fn border(&self) -> usize {
        self.visual_sketch.border()
    }

    pub fn d_emb(&self) -> usize {
        self.textual.d_emb()
    }

    /// Every distinct trainable tensor.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.visual_sketch.var().clone()];
        if let Some(p) = &self.visual_photo {
            v.push(p.var().clone());
        }
        v.push(self.textual.var().clone());
        v
    }

    pub fn enforce_interior_zero(&self) -> Result<()> {
        self.visual_sketch.enforce_interior_zero()?;
        if let Some(p) = &self.visual_photo {
            p.enforce_interior_zero()?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<Self> {
        Ok(Self {
            task: self.task,
            visual_sketch: self.visual_sketch.snapshot()?,
            visual_photo: self
                .visual_photo
                .as_ref()
                .map(|p| p.snapshot())
                .transpose()?,
            textual: self.textual.snapshot()?,
        })
    }

    /// SHA-256 over the serialized file bytes.
    pub fn checksum(&self) -> Result<String> {
        let bytes = file::encode(self)?;
        Ok(crate::backbone::params::hex_string(&Sha256::digest(&bytes)))
    }
}

/// Zero visual prompts and a textual prompt at the empty-string embedding.
pub fn init_prompts(
    task: Task,
    h: usize,
    w: usize,
    border: usize,
    backbone: &dyn Backbone,
) -> Result<PromptSet> {
    let dtype = backbone.dtype();
    let device = backbone.device();
    let sketch = VisualPrompt::zeros(h, w, border, dtype, device)?;
    let photo = match task {
        Task::Category => Some(VisualPrompt::zeros(h, w, border, dtype, device)?),
        Task::Finegrained => None,
    };
    let textual = TextualPrompt::from_embedding(&backbone.embed_text("")?)?;
    PromptSet::new(task, sketch, photo, textual)
}

/// Applies `vp` to `(3, h, w)` or `(B, 3, h, w)` images.
pub fn apply_visual_prompt(image: &Tensor, vp: &VisualPrompt) -> Result<Tensor> {
    vp.apply(image)
}

pub const CLASS_TEMPLATE: &str = "a photo of {CLASS}";

/// Handcrafted conditioning for sketch+text retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandcraftedPrompt {
    Class(String),
    Caption(String),
}

impl HandcraftedPrompt {
    /// The string handed to the text encoder.
    pub fn text(&self) -> String {
        match self {
            Self::Class(c) if c.trim().is_empty() => String::new(),
            Self::Class(c) => CLASS_TEMPLATE.replace("{CLASS}", c.trim()),
            Self::Caption(c) => c.clone(),
        }
    }
}

pub fn class_prompt_embedding(
    backbone: &dyn Backbone,
    prompt: &HandcraftedPrompt,
) -> Result<TextEmbedding> {
    if let HandcraftedPrompt::Class(c) = prompt {
        if c.trim().is_empty() {
            log::warn!("empty class name; conditioning on the null prompt");
        }
    }
    backbone.embed_text(&prompt.text())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::LatentDenoiser;

    #[test]
    fn init_matches_null_prompt_and_task_layout() {
        let bb = LatentDenoiser::toy().unwrap();
        let cat = init_prompts(Task::Category, 64, 64, 4, &bb).unwrap();
        assert!(!cat.shares_visual_prompt());
        assert_eq!(cat.vars().len(), 3);
        let fg = init_prompts(Task::Finegrained, 64, 64, 4, &bb).unwrap();
        assert!(fg.shares_visual_prompt());
        assert_eq!(fg.vars().len(), 2);
        let null = bb.embed_text("").unwrap().to_vec2().unwrap();
        assert_eq!(fg.textual().embedding().unwrap().to_vec2().unwrap(), null);
        assert!(fg
            .visual_sketch()
            .values()
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(matches!(
            init_prompts(Task::Category, 64, 64, 0, &bb),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            init_prompts(Task::Category, 64, 64, 32, &bb),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn handcrafted_text() {
        assert_eq!(
            HandcraftedPrompt::Class("cat".into()).text(),
            "a photo of cat"
        );
        let cap = "A Small  cat, sitting.";
        assert_eq!(HandcraftedPrompt::Caption(cap.into()).text(), cap);
        assert_eq!(HandcraftedPrompt::Class("  ".into()).text(), "");
    }

    #[test]
    fn class_embeddings() {
        let bb = LatentDenoiser::toy().unwrap();
        let a = class_prompt_embedding(&bb, &HandcraftedPrompt::Class("cat".into())).unwrap();
        let b = bb.embed_text("a photo of cat").unwrap();
        let c = class_prompt_embedding(&bb, &HandcraftedPrompt::Class("cat".into())).unwrap();
        assert_eq!(a.to_vec2().unwrap(), b.to_vec2().unwrap());
        assert_eq!(a.to_vec2().unwrap(), c.to_vec2().unwrap());
        let empty = class_prompt_embedding(&bb, &HandcraftedPrompt::Class(String::new())).unwrap();
        assert_eq!(
            empty.to_vec2().unwrap(),
            bb.embed_text("").unwrap().to_vec2().unwrap()
        );
    }
}
