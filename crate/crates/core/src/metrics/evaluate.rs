//! Zero-shot evaluation over a gallery index.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ranking::{
    accuracy_at_q, average_precision_at_k, precision_at_k, relevance_vector, Metric, RelevanceMode,
};
use super::split::SplitSpec;
use crate::backbone::{Backbone, TextEmbedding};
use crate::data::ManifestItem;
use crate::error::{Error, Result};
use crate::features::ExtractionConfig;
use crate::prompting::PromptSet;
use crate::retrieval::{
    prompt_fingerprint, query_feature, GalleryIndex, ItemMeta, RetrievalResult,
};

#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeature {
    pub id: String,
    pub meta: ItemMeta,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub class_name: String,
    /// Per-query AP for every requested mAP metric.
    pub average_precision: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub per_query: Vec<QueryRecord>,
    pub n_queries: usize,
    pub n_gallery: usize,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.metrics.get(&metric.key()).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

const MAX_LISTED: usize = 10;

/// Fails when a query or gallery item belongs to a seen class, naming the items.
pub fn check_zero_shot<'a>(
    split: &SplitSpec,
    items: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<()> {
    let mut leaked = Vec::new();
    let mut outside = Vec::new();
    for (id, class) in items {
        if split.is_seen(class) {
            leaked.push(format!("{id} ({class})"));
        } else if !split.unseen_classes.contains(class) {
            outside.push(format!("{id} ({class})"));
        }
    }
    let list = |v: &[String]| {
        let mut s = v
            .iter()
            .take(MAX_LISTED)
            .cloned()
            .collect::<Vec<_>>()
            .join(", ");
        if v.len() > MAX_LISTED {
            s.push_str(&format!(" and {} more", v.len() - MAX_LISTED));
        }
        s
    };
    if !leaked.is_empty() {
        return Err(Error::Leakage(format!(
            "{} evaluation items belong to seen classes: {}",
            leaked.len(),
            list(&leaked)
        )));
    }
    if !outside.is_empty() {
        return Err(Error::Config(format!(
            "{} evaluation items belong to classes outside the unseen split: {}",
            outside.len(),
            list(&outside)
        )));
    }
    Ok(())
}

/// Ranks every query against the full gallery and aggregates `metrics`.
pub fn evaluate_features(
    index: &GalleryIndex,
    queries: &[QueryFeature],
    split: &SplitSpec,
    metrics: &[Metric],
    config: serde_json::Value,
) -> Result<EvalReport> {
    check_zero_shot(
        split,
        index
            .ids()
            .iter()
            .zip(index.meta())
            .map(|(id, m)| (id.as_str(), m.class_name.as_str()))
            .chain(
                queries
                    .iter()
                    .map(|q| (q.id.as_str(), q.meta.class_name.as_str())),
            ),
    )?;
    if queries.is_empty() {
        return Err(Error::Data("no queries to evaluate".into()));
    }
    let n = index.len();
    let meta: HashMap<String, ItemMeta> = index
        .ids()
        .iter()
        .cloned()
        .zip(index.meta().iter().cloned())
        .collect();
    let mut class_counts: HashMap<&str, usize> = HashMap::new();
    for m in index.meta() {
        *class_counts.entry(&m.class_name).or_default() += 1;
    }
    let results: Vec<RetrievalResult> = queries
        .iter()
        .map(|q| index.rank(&q.id, &q.values, n))
        .collect::<Result<_>>()?;
    let mut per_query = Vec::with_capacity(queries.len());
    let mut sums: BTreeMap<Metric, f64> = BTreeMap::new();
    for (q, r) in queries.iter().zip(&results) {
        let rel = relevance_vector(r, &q.meta, &meta, RelevanceMode::ClassMatch)?;
        let total = class_counts
            .get(q.meta.class_name.as_str())
            .copied()
            .unwrap_or(0);
        let mut aps = BTreeMap::new();
        for m in metrics {
            let v = match *m {
                Metric::MapAt(k) => average_precision_at_k(&rel, k, total),
                Metric::MapAll => average_precision_at_k(&rel, n, total),
                Metric::PrecisionAt(k) => precision_at_k(&rel, k),
                Metric::AccuracyAt(_) => continue,
            };
            if matches!(m, Metric::MapAt(_) | Metric::MapAll) {
                aps.insert(m.key(), v);
            }
            *sums.entry(*m).or_default() += v;
        }
        per_query.push(QueryRecord {
            query_id: q.id.clone(),
            class_name: q.meta.class_name.clone(),
            average_precision: aps,
        });
    }
    let query_meta: HashMap<String, ItemMeta> = queries
        .iter()
        .map(|q| (q.id.clone(), q.meta.clone()))
        .collect();
    let mut out = BTreeMap::new();
    for m in metrics {
        let v = match *m {
            Metric::AccuracyAt(q) => accuracy_at_q(&results, &query_meta, &meta, q)?,
            _ => sums[m] / queries.len() as f64,
        };
        debug_assert!((0.0..=1.0).contains(&v));
        out.insert(m.key(), v);
    }
    Ok(EvalReport {
        metrics: out,
        per_query,
        n_queries: queries.len(),
        n_gallery: n,
        config,
    })
}

/// Extracts query features under the sketch-side prompt and evaluates.
/// `cond_for` supplies the conditioning of each query.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    index: &GalleryIndex,
    queries: &[&ManifestItem],
    prompts: &PromptSet,
    cfg: &ExtractionConfig,
    backbone: &dyn Backbone,
    cond_for: &dyn Fn(&ManifestItem) -> Result<TextEmbedding>,
    split: &SplitSpec,
    metrics: &[Metric],
) -> Result<EvalReport> {
    index.check_fingerprint(prompt_fingerprint(cfg, prompts)?)?;
    check_zero_shot(
        split,
        queries
            .iter()
            .map(|q| (q.id.as_str(), q.class_name.as_str())),
    )?;
    let features = queries
        .iter()
        .map(|q| {
            Ok(QueryFeature {
                id: q.id.clone(),
                meta: ItemMeta::from(*q),
                values: query_feature(q, prompts, cfg, backbone, &cond_for(q)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let config = serde_json::json!({ "extraction": cfg, "split": split });
    evaluate_features(index, &features, split, metrics, config)
}
