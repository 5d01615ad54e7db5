//! Triplet composition from a manifest.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data::{DatasetManifest, ManifestItem, Modality};
use crate::error::{Error, Result};
use crate::features::Task;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletMember {
    pub id: String,
    pub class_name: String,
    pub instance_id: Option<String>,
}

impl From<&ManifestItem> for TripletMember {
    fn from(item: &ManifestItem) -> Self {
        Self {
            id: item.id.clone(),
            class_name: item.class_name.clone(),
            instance_id: item.instance_id.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub anchors: Vec<TripletMember>,
    pub positives: Vec<TripletMember>,
    pub negatives: Vec<TripletMember>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Checks the class/instance constraints for `task`.
    pub fn violations(&self, task: Task) -> usize {
        self.anchors
            .iter()
            .zip(&self.positives)
            .zip(&self.negatives)
            .filter(|((a, p), n)| match task {
                Task::Category => p.class_name != a.class_name || n.class_name == a.class_name,
                Task::Finegrained => {
                    a.instance_id.is_none()
                        || p.instance_id != a.instance_id
                        || n.class_name != a.class_name
                        || n.instance_id == a.instance_id
                }
            })
            .count()
    }
}

/// Anchors with their positive and negative pools.
pub struct TripletSampler<'a> {
    task: Task,
    anchors: Vec<&'a ManifestItem>,
    photos_by_class: BTreeMap<&'a str, Vec<&'a ManifestItem>>,
    photos_by_instance: BTreeMap<&'a str, Vec<&'a ManifestItem>>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(manifest: &'a DatasetManifest, task: Task) -> Result<Self> {
        let mut photos_by_class: BTreeMap<&str, Vec<&ManifestItem>> = BTreeMap::new();
        let mut photos_by_instance: BTreeMap<&str, Vec<&ManifestItem>> = BTreeMap::new();
        for p in manifest.of_modality(Modality::Photo) {
            photos_by_class.entry(&p.class_name).or_default().push(p);
            if let Some(inst) = &p.instance_id {
                photos_by_instance.entry(inst).or_default().push(p);
            }
        }
        let anchors: Vec<&ManifestItem> = manifest.of_modality(Modality::Sketch).collect();
        if anchors.is_empty() {
            return Err(Error::Sampling("manifest has no sketches".into()));
        }
        for a in &anchors {
            let class = a.class_name.as_str();
            match task {
                Task::Category => {
                    if !photos_by_class.contains_key(class) {
                        return Err(Error::Sampling(format!("class `{class}` has no photos")));
                    }
                    if photos_by_class.keys().all(|c| *c == class) {
                        return Err(Error::Sampling(format!(
                            "no negative class for `{class}`: category triplets need at least 2 classes"
                        )));
                    }
                }
                Task::Finegrained => {
                    let inst = a.instance_id.as_deref().ok_or_else(|| {
                        Error::Sampling(format!("sketch `{}` has no instance id", a.id))
                    })?;
                    if !photos_by_instance.contains_key(inst) {
                        return Err(Error::Sampling(format!("instance `{inst}` has no photo")));
                    }
                    let has_negative = photos_by_class[class]
                        .iter()
                        .any(|p| p.instance_id.as_deref() != Some(inst));
                    if !has_negative {
                        return Err(Error::Sampling(format!(
                            "no negative instance in class `{class}`: fine-grained triplets need at least 2 instances"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            task,
            anchors,
            photos_by_class,
            photos_by_instance,
        })
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    fn complete<R: Rng + ?Sized>(
        &self,
        anchor: &ManifestItem,
        rng: &mut R,
        batch: &mut TripletBatch,
    ) {
        let class = anchor.class_name.as_str();
        let (positive, negative) = match self.task {
            Task::Category => {
                let positive = *self.photos_by_class[class].choose(rng).expect("validated");
                let others: Vec<&ManifestItem> = self
                    .photos_by_class
                    .iter()
                    .filter(|(c, _)| **c != class)
                    .flat_map(|(_, v)| v.iter().copied())
                    .collect();
                (positive, *others.choose(rng).expect("validated"))
            }
            Task::Finegrained => {
                let inst = anchor.instance_id.as_deref().expect("validated");
                let positive = *self.photos_by_instance[inst]
                    .choose(rng)
                    .expect("validated");
                let others: Vec<&ManifestItem> = self.photos_by_class[class]
                    .iter()
                    .copied()
                    .filter(|p| p.instance_id.as_deref() != Some(inst))
                    .collect();
                (positive, *others.choose(rng).expect("validated"))
            }
        };
        batch.anchors.push(anchor.into());
        batch.positives.push(positive.into());
        batch.negatives.push(negative.into());
    }

    /// `batch_size` anchors drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> TripletBatch {
        let mut batch = TripletBatch::default();
        for _ in 0..batch_size {
            let anchor = *self.anchors.choose(rng).expect("non-empty");
            self.complete(anchor, rng, &mut batch);
        }
        batch
    }

    /// One pass over every anchor in shuffled order, chunked into batches.
    pub fn epoch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<TripletBatch> {
        let mut order = self.anchors.clone();
        order.shuffle(rng);
        order
            .chunks(batch_size.max(1))
            .map(|chunk| {
                let mut batch = TripletBatch::default();
                for a in chunk {
                    self.complete(a, rng, &mut batch);
                }
                batch
            })
            .collect()
    }
}

pub fn sample_triplets<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    task: Task,
    batch_size: usize,
    rng: &mut R,
) -> Result<TripletBatch> {
    Ok(TripletSampler::new(manifest, task)?.sample(batch_size, rng))
}
