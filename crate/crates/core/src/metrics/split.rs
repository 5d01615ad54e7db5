//! Disjoint class splits and per-class training subsamples.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, ManifestItem, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seen_classes: BTreeSet<String>,
    pub unseen_classes: BTreeSet<String>,
}

impl SplitSpec {
    /// Explicit lists; any class in both is a configuration error.
    pub fn explicit<I, J, S, T>(seen: I, unseen: J) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        let seen: BTreeSet<String> = seen.into_iter().map(Into::into).collect();
        let unseen: BTreeSet<String> = unseen.into_iter().map(Into::into).collect();
        let overlap: Vec<&String> = seen.intersection(&unseen).collect();
        if !overlap.is_empty() {
            return Err(Error::Config(format!(
                "classes listed as both seen and unseen: {overlap:?}"
            )));
        }
        Ok(Self {
            seen_classes: seen,
            unseen_classes: unseen,
        })
    }

    pub fn is_seen(&self, class: &str) -> bool {
        self.seen_classes.contains(class)
    }
}

/// Seeded random split with `n_unseen` held-out classes.
pub fn make_split(all_classes: &BTreeSet<String>, n_unseen: usize, seed: u64) -> Result<SplitSpec> {
    if n_unseen == 0 || n_unseen >= all_classes.len() {
        return Err(Error::Config(format!(
            "n_unseen must be in 1..{}, got {n_unseen}",
            all_classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unseen: BTreeSet<String> = all_classes
        .iter()
        .cloned()
        .choose_multiple(&mut rng, n_unseen)
        .into_iter()
        .collect();
    let seen = all_classes.difference(&unseen).cloned().collect();
    Ok(SplitSpec {
        seen_classes: seen,
        unseen_classes: unseen,
    })
}

/// Number kept out of `n` at `fraction`, at least one.
pub fn subsample_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// Per-class uniform subsample. Paired classes keep whole instances (all sketches and
/// photos of a chosen pair); unpaired items are subsampled per modality.
pub fn low_data_subsample(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fraction {fraction} must be in (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(manifest.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<&str, Vec<&ManifestItem>> = BTreeMap::new();
    for item in &manifest.items {
        by_class.entry(&item.class_name).or_default().push(item);
    }
    let mut keep: BTreeSet<&str> = BTreeSet::new();
    for items in by_class.values() {
        let instances: BTreeSet<&str> = items
            .iter()
            .filter_map(|i| i.instance_id.as_deref())
            .collect();
        if !instances.is_empty() {
            let mut list: Vec<&str> = instances.into_iter().collect();
            list.shuffle(&mut rng);
            let chosen: BTreeSet<&str> = list[..subsample_count(list.len(), fraction)]
                .iter()
                .copied()
                .collect();
            keep.extend(
                items
                    .iter()
                    .filter(|i| i.instance_id.as_deref().is_some_and(|x| chosen.contains(x)))
                    .map(|i| i.id.as_str()),
            );
        }
        for modality in [Modality::Sketch, Modality::Photo] {
            let mut loose: Vec<&str> = items
                .iter()
                .filter(|i| i.instance_id.is_none() && i.modality == modality)
                .map(|i| i.id.as_str())
                .collect();
            if loose.is_empty() {
                continue;
            }
            loose.shuffle(&mut rng);
            keep.extend(&loose[..subsample_count(loose.len(), fraction)]);
        }
    }
    DatasetManifest::from_items(
        manifest
            .items
            .iter()
            .filter(|i| keep.contains(i.id.as_str()))
            .cloned()
            .collect(),
    )
}
