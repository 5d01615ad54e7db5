//! Ranked-retrieval metrics over binary relevance vectors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{ItemMeta, RetrievalResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceMode {
    ClassMatch,
    InstanceMatch,
}

/// 1 where the ranked item matches the query's class (or instance).
pub fn relevance_vector(
    result: &RetrievalResult,
    query: &ItemMeta,
    meta: &HashMap<String, ItemMeta>,
    mode: RelevanceMode,
) -> Result<Vec<bool>> {
    if mode == RelevanceMode::InstanceMatch && query.instance_id.is_none() {
        return Err(Error::Data(format!(
            "query `{}` has no instance pairing",
            result.query_id
        )));
    }
    result
        .ranked_ids
        .iter()
        .map(|id| {
            let m = meta
                .get(id)
                .ok_or_else(|| Error::Data(format!("ranked id `{id}` missing from metadata")))?;
            Ok(match mode {
                RelevanceMode::ClassMatch => m.class_name == query.class_name,
                RelevanceMode::InstanceMatch => {
                    m.instance_id.is_some() && m.instance_id == query.instance_id
                }
            })
        })
        .collect()
}

/// Sum of precision at each relevant rank within the top `k`, over
/// `min(total_relevant, k)`; 0 when nothing is relevant. `k` is capped at `rel.len()`.
pub fn average_precision_at_k(rel: &[bool], k: usize, total_relevant: usize) -> f64 {
    let k = k.min(rel.len());
    let denom = total_relevant.min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, r) in rel[..k].iter().enumerate() {
        if *r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Fraction of the top `k` that is relevant; 0 for `k = 0`.
pub fn precision_at_k(rel: &[bool], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    rel.iter().take(k).filter(|r| **r).count() as f64 / k as f64
}

/// Fraction of queries whose paired instance appears in the top `q`.
pub fn accuracy_at_q(
    results: &[RetrievalResult],
    queries: &HashMap<String, ItemMeta>,
    meta: &HashMap<String, ItemMeta>,
    q: usize,
) -> Result<f64> {
    if results.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for r in results {
        let query = queries
            .get(&r.query_id)
            .ok_or_else(|| Error::Data(format!("query `{}` missing from metadata", r.query_id)))?;
        let rel = relevance_vector(r, query, meta, RelevanceMode::InstanceMatch)?;
        if rel.iter().take(q).any(|x| *x) {
            hits += 1;
        }
    }
    Ok(hits as f64 / results.len() as f64)
}

/// A requested aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    MapAt(usize),
    MapAll,
    PrecisionAt(usize),
    AccuracyAt(usize),
}

impl Metric {
    pub fn key(&self) -> String {
        match self {
            Metric::MapAt(k) => format!("mAP@{k}"),
            Metric::MapAll => "mAP@all".into(),
            Metric::PrecisionAt(k) => format!("P@{k}"),
            Metric::AccuracyAt(q) => format!("Acc@{q}"),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.key())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, arg) = lower
            .split_once('@')
            .ok_or_else(|| Error::Config(format!("metric `{s}` needs the form name@k")))?;
        let number = || {
            arg.parse::<usize>()
                .ok()
                .filter(|k| *k > 0)
                .ok_or_else(|| Error::Config(format!("metric `{s}` needs a positive cutoff")))
        };
        match name {
            "map" if arg == "all" => Ok(Metric::MapAll),
            "map" => Ok(Metric::MapAt(number()?)),
            "p" | "prec" | "precision" => Ok(Metric::PrecisionAt(number()?)),
            "acc" | "accuracy" => Ok(Metric::AccuracyAt(number()?)),
            _ => Err(Error::Config(format!("unknown metric `{s}`"))),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let ap = average_precision_at_k(&[true, false, true], 3, 2);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision_at_k(&[true; 5], 5, 5), 1.0);
        assert_eq!(average_precision_at_k(&[false; 5], 5, 3), 0.0);
        assert_eq!(average_precision_at_k(&[true, true], 2, 0), 0.0);
        assert_eq!(precision_at_k(&[true, false, true, false], 2), 0.5);
        assert_eq!(precision_at_k(&[true; 4], 4), 1.0);
        assert_eq!(precision_at_k(&[false; 4], 4), 0.0);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [
            Metric::MapAt(200),
            Metric::MapAll,
            Metric::PrecisionAt(100),
            Metric::AccuracyAt(1),
        ] {
            assert_eq!(m.key().parse::<Metric>().unwrap(), m);
        }
        assert!("map".parse::<Metric>().is_err());
        assert!("p@0".parse::<Metric>().is_err());
        assert!("f1@3".parse::<Metric>().is_err());
    }
}
