//! Directory scanners for the supported dataset layouts.
//!
//! * `sketchy_like`: `root/{photo,sketch}/<class>/<instance>[_k].<ext>`, paired by stem.
//! * `tu_berlin_like`: `root/{images,sketches}/<class>/*.<ext>`, unpaired.
//! * `quickdraw_like`: `root/{image,sketch}/<class>/*.<ext>`, unpaired.
//! * `flat_pairs`: `root/<class>__<instance>__{sketch,photo}[_k].<ext>`, paired.
//!
//! Captions, when present, live in `root/captions.jsonl` as `{"id": .., "caption": ..}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestItem, Modality};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    SketchyLike,
    TuBerlinLike,
    QuickdrawLike,
    FlatPairs,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sketchy_like" => Ok(Layout::SketchyLike),
            "tu_berlin_like" => Ok(Layout::TuBerlinLike),
            "quickdraw_like" => Ok(Layout::QuickdrawLike),
            "flat_pairs" => Ok(Layout::FlatPairs),
            other => Err(Error::Config(format!("unknown dataset layout `{other}`"))),
        }
    }
}

/// Problems found while scanning; offending files are excluded from the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntegrityReport {
    pub orphan_sketches: Vec<PathBuf>,
    pub unrecognized: Vec<PathBuf>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.orphan_sketches.is_empty() && self.unrecognized.is_empty()
    }
}

impl fmt::Display for IntegrityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "orphan sketches (no paired photo): {}",
            self.orphan_sketches.len()
        )?;
        for p in &self.orphan_sketches {
            writeln!(f, "  {}", p.display())?;
        }
        writeln!(f, "unrecognized files: {}", self.unrecognized.len())?;
        for p in &self.unrecognized {
            writeln!(f, "  {}", p.display())?;
        }
        Ok(())
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Strips a trailing `_<digits>` sketch index.
fn instance_stem(stem: &str) -> &str {
    match stem.rsplit_once('_') {
        Some((head, tail)) if !head.is_empty() && tail.chars().all(|c| c.is_ascii_digit()) => head,
        _ => stem,
    }
}

struct Found {
    modality: Modality,
    class_name: String,
    stem: String,
    instance: Option<String>,
    path: PathBuf,
}

fn scan_class_tree(
    root: &Path,
    dirs: [(&str, Modality); 2],
    paired: bool,
    report: &mut IntegrityReport,
) -> Result<Vec<Found>> {
    let mut found = Vec::new();
    for (dir_name, modality) in dirs {
        let dir = root.join(dir_name);
        if !dir.is_dir() {
            continue;
        }
        for class_dir in sorted_entries(&dir)? {
            if !class_dir.is_dir() {
                report.unrecognized.push(class_dir);
                continue;
            }
            let class_name = class_dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            for file in sorted_entries(&class_dir)? {
                if !file.is_file() || !is_image(&file) {
                    report.unrecognized.push(file);
                    continue;
                }
                let stem = file_stem(&file);
                let instance = paired.then(|| {
                    let base = match modality {
                        Modality::Sketch => instance_stem(&stem),
                        Modality::Photo => stem.as_str(),
                    };
                    format!("{class_name}/{base}")
                });
                found.push(Found {
                    modality,
                    class_name: class_name.clone(),
                    stem,
                    instance,
                    path: file,
                });
            }
        }
    }
    Ok(found)
}

fn scan_flat(root: &Path, report: &mut IntegrityReport) -> Result<Vec<Found>> {
    let mut found = Vec::new();
    for file in sorted_entries(root)? {
        if !file.is_file() || !is_image(&file) {
            if file
                .file_name()
                .is_some_and(|n| n != "captions.jsonl" && n != "manifest.json")
            {
                report.unrecognized.push(file);
            }
            continue;
        }
        let stem = file_stem(&file);
        let parts: Vec<&str> = stem.split("__").collect();
        let [class_name, instance, kind] = parts.as_slice() else {
            report.unrecognized.push(file);
            continue;
        };
        let modality = match instance_stem(kind) {
            "sketch" => Modality::Sketch,
            "photo" => Modality::Photo,
            _ => {
                report.unrecognized.push(file);
                continue;
            }
        };
        found.push(Found {
            modality,
            class_name: class_name.to_string(),
            instance: Some(format!("{class_name}/{instance}")),
            stem: stem.clone(),
            path: file,
        });
    }
    Ok(found)
}

fn read_captions(root: &Path) -> Result<BTreeMap<String, String>> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        caption: String,
    }
    let path = root.join("captions.jsonl");
    if !path.is_file() {
        return Ok(BTreeMap::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: Row = serde_json::from_str(line)?;
        out.insert(row.id, row.caption);
    }
    Ok(out)
}

/// Scans `root` into a manifest. Sketches whose instance has no photo in a paired layout
/// are listed in the report and left out.
pub fn scan_dataset(root: &Path, layout: Layout) -> Result<(DatasetManifest, IntegrityReport)> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "dataset root is not a directory",
            ),
        ));
    }
    let mut report = IntegrityReport::default();
    let found = match layout {
        Layout::SketchyLike => scan_class_tree(
            root,
            [("photo", Modality::Photo), ("sketch", Modality::Sketch)],
            true,
            &mut report,
        )?,
        Layout::TuBerlinLike => scan_class_tree(
            root,
            [("images", Modality::Photo), ("sketches", Modality::Sketch)],
            false,
            &mut report,
        )?,
        Layout::QuickdrawLike => scan_class_tree(
            root,
            [("image", Modality::Photo), ("sketch", Modality::Sketch)],
            false,
            &mut report,
        )?,
        Layout::FlatPairs => scan_flat(root, &mut report)?,
    };
    let photo_instances: BTreeSet<&str> = found
        .iter()
        .filter(|f| f.modality == Modality::Photo)
        .filter_map(|f| f.instance.as_deref())
        .collect();
    let captions = read_captions(root)?;
    let mut items = Vec::new();
    for f in &found {
        if f.modality == Modality::Sketch {
            if let Some(inst) = &f.instance {
                if !photo_instances.contains(inst.as_str()) {
                    report.orphan_sketches.push(f.path.clone());
                    continue;
                }
            }
        }
        let id = match layout {
            Layout::FlatPairs => format!("{}/{}", f.modality.as_str(), f.stem),
            _ => format!("{}/{}/{}", f.modality.as_str(), f.class_name, f.stem),
        };
        items.push(ManifestItem {
            caption: captions.get(&id).cloned(),
            id,
            modality: f.modality,
            class_name: f.class_name.clone(),
            instance_id: f.instance.clone(),
            path: f.path.clone(),
        });
    }
    Ok((DatasetManifest::from_items(items)?, report))
}
