//! Dataset manifest: items, modalities and instance pairing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Sketch,
    Photo,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Sketch => "sketch",
            Modality::Photo => "photo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub modality: Modality,
    pub class_name: String,
    /// Globally unique instance key (`class/stem`), present for paired layouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub sketches: Vec<String>,
    pub photos: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub items: Vec<ManifestItem>,
    pub pairing: BTreeMap<String, Pairing>,
}

impl DatasetManifest {
    /// Validates ids and builds the pairing from `instance_id`s.
    pub fn from_items(items: Vec<ManifestItem>) -> Result<Self> {
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Data(format!("duplicate item id `{}`", item.id)));
            }
        }
        let mut pairing: BTreeMap<String, Pairing> = BTreeMap::new();
        let mut instance_class: BTreeMap<&str, &str> = BTreeMap::new();
        for item in &items {
            let Some(inst) = &item.instance_id else {
                continue;
            };
            match instance_class.insert(inst, &item.class_name) {
                Some(prev) if prev != item.class_name => {
                    return Err(Error::Data(format!(
                        "instance `{inst}` spans classes `{prev}` and `{}`",
                        item.class_name
                    )))
                }
                _ => {}
            }
            let entry = pairing.entry(inst.clone()).or_default();
            match item.modality {
                Modality::Sketch => entry.sketches.push(item.id.clone()),
                Modality::Photo => entry.photos.push(item.id.clone()),
            }
        }
        Ok(Self { items, pairing })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn index(&self) -> BTreeMap<&str, &ManifestItem> {
        self.items.iter().map(|i| (i.id.as_str(), i)).collect()
    }

    pub fn of_modality(&self, modality: Modality) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.modality == modality)
    }

    pub fn classes(&self) -> BTreeSet<String> {
        self.items.iter().map(|i| i.class_name.clone()).collect()
    }

    /// Items whose class is in `classes`.
    pub fn restrict_to_classes(&self, classes: &BTreeSet<String>) -> Result<Self> {
        Self::from_items(
            self.items
                .iter()
                .filter(|i| classes.contains(&i.class_name))
                .cloned()
                .collect(),
        )
    }

    /// Items sorted by id; pairing lists sorted.
    pub fn normalized(&self) -> Self {
        let mut items = self.items.clone();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let mut out = Self::from_items(items).expect("already validated");
        for p in out.pairing.values_mut() {
            p.sketches.sort();
            p.photos.sort();
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Relative item paths are resolved against the manifest's directory.
    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut raw: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for item in &mut raw.items {
            if item.path.is_relative() {
                item.path = base.join(&item.path);
            }
        }
        // Rebuild so a hand-edited pairing cannot disagree with the items.
        Self::from_items(raw.items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, m: Modality, class: &str, inst: Option<&str>) -> ManifestItem {
        ManifestItem {
            id: id.into(),
            modality: m,
            class_name: class.into(),
            instance_id: inst.map(String::from),
            path: PathBuf::from(format!("{id}.png")),
            caption: None,
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let items = vec![
            item("a", Modality::Photo, "cat", None),
            item("a", Modality::Sketch, "cat", None),
        ];
        assert!(matches!(
            DatasetManifest::from_items(items),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn pairing_is_built_and_class_consistent() {
        let m = DatasetManifest::from_items(vec![
            item("p1", Modality::Photo, "cat", Some("cat/1")),
            item("s1", Modality::Sketch, "cat", Some("cat/1")),
            item("s2", Modality::Sketch, "cat", Some("cat/1")),
        ])
        .unwrap();
        assert_eq!(m.pairing["cat/1"].photos, vec!["p1"]);
        assert_eq!(m.pairing["cat/1"].sketches, vec!["s1", "s2"]);
        let bad = DatasetManifest::from_items(vec![
            item("p1", Modality::Photo, "cat", Some("x")),
            item("s1", Modality::Sketch, "dog", Some("x")),
        ]);
        assert!(bad.is_err());
    }
}
