//! Configuration-driven train/evaluate runs and ablation sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, LatentDenoiser, TextEmbedding};
use crate::data::{scan_dataset, DatasetManifest, IntegrityReport, Layout, ManifestItem, Modality};
use crate::error::{Error, Result};
use crate::features::{CombineRule, ExtractionConfig, FeatureSource, Task};
use crate::metrics::{evaluate, low_data_subsample, make_split, EvalReport, Metric, SplitSpec};
use crate::plot::{numeric_ticks, save_line_plot, Series};
use crate::prompting::{
    class_prompt_embedding, train_prompts, write_prompts, HandcraftedPrompt, PromptSet,
    TrainConfig, TrainingLog,
};
use crate::retrieval::{build_gallery, BuildReport, GalleryIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub layout: Layout,
    /// Prebuilt manifest; the root is scanned when absent.
    pub manifest: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            layout: Layout::SketchyLike,
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Held-out class count for a seeded split.
    pub n_unseen: usize,
    pub seed: u64,
    /// Explicit class lists; used instead of the seeded split when `unseen` is non-empty.
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n_unseen: 2,
            seed: 0,
            seen: Vec::new(),
            unseen: Vec::new(),
        }
    }
}

impl SplitConfig {
    pub fn resolve(&self, classes: &BTreeSet<String>) -> Result<SplitSpec> {
        if self.unseen.is_empty() {
            return make_split(classes, self.n_unseen, self.seed);
        }
        let unseen: BTreeSet<String> = self.unseen.iter().cloned().collect();
        let seen: Vec<String> = if self.seen.is_empty() {
            classes.difference(&unseen).cloned().collect()
        } else {
            self.seen.clone()
        };
        SplitSpec::explicit(seen, unseen)
    }
}

/// Source of the query-side conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    Learned,
    ClassTemplate,
    Caption,
}

impl std::str::FromStr for TextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(TextMode::Learned),
            "class_template" => Ok(TextMode::ClassTemplate),
            "caption" => Ok(TextMode::Caption),
            other => Err(Error::Config(format!("unknown text mode `{other}`"))),
        }
    }
}

/// Extraction fields left unset take the task defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSettings {
    pub t: Option<usize>,
    pub layers: Option<Vec<usize>>,
    pub combine: Option<CombineRule>,
    pub ensemble_size: Option<usize>,
    pub source: Option<FeatureSource>,
    pub normalize: Option<bool>,
    pub base_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub text_mode: TextMode,
    pub metrics: Vec<Metric>,
    /// Fraction of training pairs kept per seen class.
    pub data_fraction: f64,
    pub data_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub backbone: BackboneConfig,
    pub extraction: ExtractionSettings,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Category,
            text_mode: TextMode::Learned,
            metrics: vec![
                Metric::MapAt(200),
                Metric::PrecisionAt(200),
                Metric::MapAll,
                Metric::AccuracyAt(1),
            ],
            data_fraction: 1.0,
            data_seed: 0,
            output_dir: None,
            backbone: BackboneConfig::default(),
            extraction: ExtractionSettings::default(),
            train: TrainConfig::default(),
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("experiment config: {e}"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// Applies `dotted.key=value` overrides. Values are read as TOML and fall back to
    /// plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<Self> {
        let mut root = toml::Table::try_from(self).map_err(config_err)?;
        for set in sets {
            let set = set.as_ref();
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{set}` is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
            let parts: Vec<&str> = key.trim().split('.').collect();
            let mut table = &mut root;
            for part in &parts[..parts.len() - 1] {
                let entry = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                table = entry.as_table_mut().ok_or_else(|| {
                    Error::Config(format!("override `{key}`: `{part}` is not a table"))
                })?;
            }
            table.insert(parts[parts.len() - 1].to_string(), value);
        }
        root.try_into().map_err(config_err)
    }

    pub fn extraction_config(&self) -> ExtractionConfig {
        let mut cfg = ExtractionConfig::for_task(self.task);
        let s = &self.extraction;
        if let Some(t) = s.t {
            cfg.t = t;
        }
        if let Some(l) = &s.layers {
            cfg.layers = l.clone();
        }
        if let Some(c) = s.combine {
            cfg.combine = c;
        }
        if let Some(k) = s.ensemble_size {
            cfg.ensemble_size = k;
        }
        if let Some(src) = s.source {
            cfg.source = src;
        }
        if let Some(n) = s.normalize {
            cfg.normalize = n;
        }
        if let Some(b) = s.base_seed {
            cfg.base_seed = b;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data_fraction {} must be in (0, 1]",
                self.data_fraction
            )));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        self.train.validate()?;
        let arch = self.backbone.architecture()?;
        let cfg = self.extraction_config();
        cfg.validate(&arch)?;
        if cfg.t >= self.backbone.total_steps {
            return Err(Error::Range(format!(
                "timestep {} outside [0, {})",
                cfg.t, self.backbone.total_steps
            )));
        }
        Ok(())
    }
}

pub fn load_manifest(cfg: &DatasetConfig) -> Result<(DatasetManifest, IntegrityReport)> {
    match &cfg.manifest {
        Some(path) => Ok((
            DatasetManifest::load_json(path)?,
            IntegrityReport::default(),
        )),
        None => scan_dataset(&cfg.root, cfg.layout),
    }
}

/// Conditioning for a query under `mode`; the gallery always uses the learned prompt.
pub fn query_conditioning(
    mode: TextMode,
    backbone: &dyn Backbone,
    prompts: &PromptSet,
    item: &ManifestItem,
) -> Result<TextEmbedding> {
    match mode {
        TextMode::Learned => prompts.textual().embedding(),
        TextMode::ClassTemplate => {
            class_prompt_embedding(backbone, &HandcraftedPrompt::Class(item.class_name.clone()))
        }
        TextMode::Caption => match &item.caption {
            Some(c) => class_prompt_embedding(backbone, &HandcraftedPrompt::Caption(c.clone())),
            None => {
                log::warn!("`{}` has no caption; using the null prompt", item.id);
                backbone.embed_text("")
            }
        },
    }
}

pub struct ExperimentOutcome {
    pub split: SplitSpec,
    pub prompts: PromptSet,
    pub log: TrainingLog,
    pub index: GalleryIndex,
    pub build_report: BuildReport,
    pub report: EvalReport,
}

/// Seen-class training manifest after the low-data subsample.
pub fn training_manifest(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    split: &SplitSpec,
) -> Result<DatasetManifest> {
    let seen = manifest.restrict_to_classes(&split.seen_classes)?;
    low_data_subsample(&seen, cfg.data_fraction, cfg.data_seed)
}

/// Gallery photos and query sketches of the unseen classes.
pub fn evaluation_items<'a>(
    manifest: &'a DatasetManifest,
    split: &SplitSpec,
) -> (Vec<&'a ManifestItem>, Vec<&'a ManifestItem>) {
    let unseen = |i: &&ManifestItem| split.unseen_classes.contains(&i.class_name);
    (
        manifest
            .of_modality(Modality::Photo)
            .filter(unseen)
            .collect(),
        manifest
            .of_modality(Modality::Sketch)
            .filter(unseen)
            .collect(),
    )
}

pub fn evaluate_prompts(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    split: &SplitSpec,
    prompts: &PromptSet,
    backbone: &dyn Backbone,
) -> Result<(GalleryIndex, BuildReport, EvalReport)> {
    let extraction = cfg.extraction_config();
    let (photos, sketches) = evaluation_items(manifest, split);
    let (index, build_report) = build_gallery(&photos, prompts, &extraction, backbone)?;
    let cond_for = |item: &ManifestItem| query_conditioning(cfg.text_mode, backbone, prompts, item);
    let mut report = evaluate(
        &index,
        &sketches,
        prompts,
        &extraction,
        backbone,
        &cond_for,
        split,
        &cfg.metrics,
    )?;
    report.config = serde_json::to_value(cfg)?;
    Ok((index, build_report, report))
}

/// Train on the seen classes, then build and evaluate on the unseen classes.
pub fn run_with(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    backbone: &dyn Backbone,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let split = cfg.split.resolve(&manifest.classes())?;
    let train_set = training_manifest(cfg, manifest, &split)?;
    let mut train_cfg = cfg.train.clone();
    if train_cfg.diagnostic_path.is_none() {
        train_cfg.diagnostic_path = cfg.output_dir.as_ref().map(|d| d.join("diagnostic.dprm"));
    }
    let (prompts, log) = train_prompts(&train_set, &cfg.extraction_config(), &train_cfg, backbone)?;
    let (index, build_report, report) =
        evaluate_prompts(cfg, manifest, &split, &prompts, backbone)?;
    Ok(ExperimentOutcome {
        split,
        prompts,
        log,
        index,
        build_report,
        report,
    })
}

pub fn write_outcome(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfg.save(&dir.join("config.toml"))?;
    write_prompts(&out.prompts, &dir.join("prompts.dprm"))?;
    out.log.write_jsonl(&dir.join("train_log.jsonl"))?;
    out.index.save(&dir.join("gallery.dfea"))?;
    out.report.save_json(&dir.join("report.json"))?;
    let path = dir.join("build_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&out.build_report)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Loads data and backbone from the config, runs, and writes artifacts to `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (manifest, integrity) = load_manifest(&cfg.dataset)?;
    if !integrity.is_clean() {
        log::warn!("{integrity}");
    }
    let backbone = LatentDenoiser::load(&cfg.backbone)?;
    let out = run_with(cfg, &manifest, &backbone)?;
    if let Some(dir) = &cfg.output_dir {
        write_outcome(dir, cfg, &out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Timestep,
    LayerGrid,
    BorderWidth,
    EnsembleSize,
    DataFraction,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Timestep => "timestep",
            SweepAxis::LayerGrid => "layer_grid",
            SweepAxis::BorderWidth => "border_width",
            SweepAxis::EnsembleSize => "ensemble_size",
            SweepAxis::DataFraction => "data_fraction",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: Vec<&str> = match self {
            SweepAxis::Timestep => {
                return (0..=900).step_by(100).map(|t| t.to_string()).collect();
            }
            SweepAxis::LayerGrid => vec!["1", "2", "3", "4", "1+2", "2+3", "3+4", "1+2+3+4"],
            SweepAxis::BorderWidth => vec!["2", "4", "8", "12", "16"],
            SweepAxis::EnsembleSize => vec!["1", "2", "4", "6", "8"],
            SweepAxis::DataFraction => vec!["0.1", "0.3", "0.5", "0.7", "1.0"],
        };
        v.into_iter().map(String::from).collect()
    }

    fn is_numeric(self) -> bool {
        self != SweepAxis::LayerGrid
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timestep" => Ok(SweepAxis::Timestep),
            "layer_grid" => Ok(SweepAxis::LayerGrid),
            "border_width" => Ok(SweepAxis::BorderWidth),
            "ensemble_size" => Ok(SweepAxis::EnsembleSize),
            "data_fraction" => Ok(SweepAxis::DataFraction),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

/// `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_sweep_values(text: &str) -> Result<Vec<String>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad range `{text}`")))
        };
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(Error::Config(format!("bad range `{text}`")));
        }
        let integral = [start, stop, step].iter().all(|v| v.fract() == 0.0);
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n)
            .map(|i| {
                let v = start + step * i as f64;
                if integral {
                    format!("{}", v as i64)
                } else {
                    format!("{}", (v * 1e9).round() / 1e9)
                }
            })
            .collect());
    }
    let values: Vec<String> = text
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::Config("empty sweep value list".into()));
    }
    Ok(values)
}

fn parse_layers(value: &str) -> Result<Vec<usize>> {
    value
        .split('+')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad layer set `{value}`")))
        })
        .collect()
}

/// The base config with one axis set to `value`. Layer sets keep the task's combine
/// rule when it applies and fall back to concatenation otherwise.
pub fn apply_axis(
    base: &ExperimentConfig,
    axis: SweepAxis,
    value: &str,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    let bad = || Error::Config(format!("bad {} value `{value}`", axis.as_str()));
    match axis {
        SweepAxis::Timestep => cfg.extraction.t = Some(value.parse().map_err(|_| bad())?),
        SweepAxis::BorderWidth => cfg.train.border_width = value.parse().map_err(|_| bad())?,
        SweepAxis::EnsembleSize => {
            cfg.extraction.ensemble_size = Some(value.parse().map_err(|_| bad())?)
        }
        SweepAxis::DataFraction => cfg.data_fraction = value.parse().map_err(|_| bad())?,
        SweepAxis::LayerGrid => {
            cfg.extraction.layers = Some(parse_layers(value)?);
            cfg.extraction.combine = None;
            let arch = cfg.backbone.architecture()?;
            if cfg.extraction_config().validate(&arch).is_err() {
                cfg.extraction.combine = Some(CombineRule::Concat);
            }
        }
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: String,
    pub metrics: BTreeMap<String, f64>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub metric_keys: Vec<String>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![self.axis.as_str().to_string()];
        header.extend(self.metric_keys.iter().cloned());
        header.push("final_loss".into());
        header.push("error".into());
        w.write_record(&header)
            .map_err(|e| Error::Format(e.to_string()))?;
        for c in &self.cells {
            let mut row = vec![c.value.clone()];
            for k in &self.metric_keys {
                row.push(
                    c.metrics
                        .get(k)
                        .map(|v| format!("{v:.6}"))
                        .unwrap_or_default(),
                );
            }
            row.push(c.final_loss.map(|v| format!("{v:.6}")).unwrap_or_default());
            row.push(c.error.clone().unwrap_or_default());
            w.write_record(&row)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// One line per metric over the axis values; failed cells are left out.
    pub fn save_plot(&self, path: &Path) -> Result<()> {
        let numeric =
            self.axis.is_numeric() && self.cells.iter().all(|c| c.value.parse::<f64>().is_ok());
        let x_of = |i: usize, c: &SweepCell| {
            if numeric {
                c.value.parse::<f64>().unwrap_or(i as f64)
            } else {
                i as f64
            }
        };
        let series: Vec<Series> = self
            .metric_keys
            .iter()
            .map(|k| Series {
                name: k.clone(),
                points: self
                    .cells
                    .iter()
                    .enumerate()
                    .filter_map(|(i, c)| c.metrics.get(k).map(|v| (x_of(i, c), *v)))
                    .collect(),
            })
            .collect();
        let ticks = if numeric {
            numeric_ticks(
                &self
                    .cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| x_of(i, c))
                    .collect::<Vec<_>>(),
            )
        } else {
            self.cells
                .iter()
                .enumerate()
                .map(|(i, c)| (i as f64, c.value.clone()))
                .collect()
        };
        let y_label = if self.metric_keys.len() == 1 {
            self.metric_keys[0].clone()
        } else {
            "metric value".to_string()
        };
        save_line_plot(path, &series, self.axis.as_str(), &y_label, &ticks)
    }

    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("sweep_{}.csv", self.axis.as_str()));
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let png_path = dir.join(format!("sweep_{}.png", self.axis.as_str()));
        self.save_plot(&png_path)?;
        Ok((csv_path, png_path))
    }
}

/// One full train/evaluate cycle per value. Failing cells record their error and the
/// sweep moves on.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    manifest: &DatasetManifest,
    backbone: &dyn Backbone,
) -> SweepTable {
    let metric_keys: Vec<String> = base.metrics.iter().map(|m| m.key()).collect();
    let cells = values
        .iter()
        .map(|value| {
            let run = apply_axis(base, axis, value).and_then(|mut cfg| {
                cfg.output_dir = None;
                run_with(&cfg, manifest, backbone)
            });
            match run {
                Ok(out) => SweepCell {
                    value: value.clone(),
                    metrics: out.report.metrics,
                    final_loss: out.log.last_loss(),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell {}={value} failed: {e}", axis.as_str());
                    SweepCell {
                        value: value.clone(),
                        metrics: BTreeMap::new(),
                        final_loss: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    SweepTable {
        axis,
        metric_keys,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.train.weight_decay, 0.09);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.epochs, 100);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::default()
            .with_overrides(&[
                "train.lr=0.01",
                "task=finegrained",
                "extraction.t=300",
                "dataset.root=/tmp/x",
                "metrics=[\"mAP@all\", \"Acc@5\"]",
            ])
            .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.task, Task::Finegrained);
        assert_eq!(cfg.dataset.root, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.metrics, vec![Metric::MapAll, Metric::AccuracyAt(5)]);
        let ex = cfg.extraction_config();
        assert_eq!(
            (ex.t, ex.layers.clone(), ex.combine),
            (300, vec![3, 4], CombineRule::Concat)
        );
        assert!(ExperimentConfig::default()
            .with_overrides(&["nope=1"])
            .is_err());
        assert!(ExperimentConfig::default()
            .with_overrides(&["train.lr"])
            .is_err());
    }

    #[test]
    fn sweep_values() {
        let t = parse_sweep_values("0:900:100").unwrap();
        assert_eq!(t, SweepAxis::Timestep.default_values());
        assert_eq!(t.len(), 10);
        assert_eq!(
            parse_sweep_values("0.1:0.5:0.2").unwrap(),
            vec!["0.1", "0.3", "0.5"]
        );
        assert_eq!(parse_sweep_values("1+2, 3+4").unwrap(), vec!["1+2", "3+4"]);
        let grid = SweepAxis::LayerGrid.default_values();
        assert!(grid.contains(&"1+2".to_string()) && grid.contains(&"3+4".to_string()));
    }

    #[test]
    fn layer_axis_picks_a_valid_combine() {
        let base = ExperimentConfig::default();
        let a = apply_axis(&base, SweepAxis::LayerGrid, "1+2")
            .unwrap()
            .extraction_config();
        assert_eq!(a.combine, CombineRule::Mean);
        let b = apply_axis(&base, SweepAxis::LayerGrid, "3+4")
            .unwrap()
            .extraction_config();
        assert_eq!(b.combine, CombineRule::Concat);
        assert!(apply_axis(&base, SweepAxis::Timestep, "abc").is_err());
    }
}
