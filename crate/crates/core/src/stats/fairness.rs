use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{t_two_sample, StatResult};
use crate::error::{Error, Result};
use crate::numeric::mean;

/// Each SG's score minus the unweighted mean over SGs.
pub fn relative_to_sg_average(per_sg: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    if per_sg.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least two speaker groups, got {}", per_sg.len())));
    }
    let values: Vec<f64> = per_sg.values().copied().collect();
    let avg = mean(&values);
    Ok(per_sg.iter().map(|(k, v)| (k.clone(), v - avg)).collect())
}

/// Identifies where a score was measured, so single-SG and balanced scores
/// can only be differenced when they share a replication and test set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreTag {
    pub replication_index: usize,
    pub layer: u32,
    pub test_set: String,
}

/// `single − balanced` for scores taken on the same test set and replication.
pub fn relative_to_balanced(single: f64, single_tag: &ScoreTag, balanced: f64, balanced_tag: &ScoreTag) -> Result<f64> {
    if single_tag != balanced_tag {
        return Err(Error::InvalidInput(format!("replication metadata differ: {single_tag:?} vs {balanced_tag:?}")));
    }
    Ok(single - balanced)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub variable: String,
    pub best_sg: String,
    pub worst_sg: String,
    pub best: f64,
    pub worst: f64,
    /// `100 × (best − worst) / best`.
    pub gap: f64,
}

pub fn fairness_gap(variable: &str, per_sg: &BTreeMap<String, f64>) -> Result<GapRecord> {
    if per_sg.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least two speaker groups, got {}", per_sg.len())));
    }
    let mut best = per_sg.iter().next().expect("non-empty");
    let mut worst = best;
    for entry in per_sg {
        if entry.1 > best.1 {
            best = entry;
        }
        if entry.1 < worst.1 {
            worst = entry;
        }
    }
    if !(*best.1 > 0.0) {
        return Err(Error::InvalidInput(format!("best score must be positive, got {}", best.1)));
    }
    Ok(GapRecord {
        variable: variable.to_string(),
        best_sg: best.0.clone(),
        worst_sg: worst.0.clone(),
        best: *best.1,
        worst: *worst.1,
        gap: 100.0 * (best.1 - worst.1) / best.1,
    })
}

/// A cell of an audit table. `condition` names the training setting or metric;
/// `phoneme` is `None` for SG-level aggregates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub variable: String,
    pub condition: String,
    pub sg: String,
    pub layer: u32,
    pub phoneme: Option<String>,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}/layer{}/{}",
            self.variable,
            self.condition,
            self.sg,
            self.layer,
            self.phoneme.as_deref().unwrap_or("*")
        )
    }
}

/// Replicate values per cell, e.g. relative F1 for each of the five replications.
pub type ReplicateTable = BTreeMap<CellKey, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub key: CellKey,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_b − mean_a`.
    pub delta: f64,
    /// `None` when either side has zero spread.
    pub test: Option<StatResult>,
    pub significant: bool,
}

/// Cellwise differences between two audits with a two-sided Welch test per cell.
pub fn detdat_delta(a: &ReplicateTable, b: &ReplicateTable, alpha: f64) -> Result<Vec<DeltaRecord>> {
    let mut divergent: Vec<String> = a
        .iter()
        .filter(|(k, va)| b.get(*k).is_none_or(|vb| vb.len() != va.len()))
        .map(|(k, _)| k.to_string())
        .collect();
    divergent.extend(b.keys().filter(|k| !a.contains_key(*k)).map(ToString::to_string));
    if !divergent.is_empty() {
        divergent.sort();
        return Err(Error::SchemaMismatch(divergent));
    }
    let mut out = Vec::with_capacity(a.len());
    for (key, va) in a {
        let vb = &b[key];
        let (mean_a, mean_b) = (mean(va), mean(vb));
        let test = match t_two_sample(va, vb) {
            Ok(t) => Some(t),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        let significant = test.as_ref().is_some_and(|t| t.significant(alpha));
        out.push(DeltaRecord { key: key.clone(), mean_a, mean_b, delta: mean_b - mean_a, test, significant });
    }
    Ok(out)
}
