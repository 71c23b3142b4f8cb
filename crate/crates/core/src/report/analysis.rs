use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::tables::{CorrelationPoint, DeltaRow, ProbeF1Row, RelativeRow, SgKnnRow, SpeakerKnnRow, ALL};
use crate::cohorts::Setting;
use crate::error::{Error, Result};
use crate::stats::{detdat_delta, pearson_r, CellKey, ReplicateTable};

/// Significance threshold used for correlation annotations.
pub const CORRELATION_ALPHA: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n: usize,
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

/// Joins balanced-probe per-phoneme F1 with per-SG KNN distance, one point per
/// (variable, layer, SG, phoneme), and correlates them per variable.
pub fn correlate(
    f1: &[ProbeF1Row],
    knn: &[SgKnnRow],
) -> Result<(Vec<CorrelationPoint>, BTreeMap<String, CorrelationSummary>)> {
    let balanced = Setting::Balanced.to_string();
    let probe_layers: BTreeSet<u32> = f1.iter().map(|r| r.layer).collect();
    let knn_layers: BTreeSet<u32> = knn.iter().map(|r| r.layer).collect();
    if probe_layers != knn_layers {
        return Err(Error::InvalidInput(format!(
            "layer sets differ: probe report has {probe_layers:?}, variance report has {knn_layers:?}"
        )));
    }
    let mut scores: BTreeMap<(&str, u32, &str, &str), Vec<f64>> = BTreeMap::new();
    for r in f1.iter().filter(|r| r.setting == balanced && r.sg != ALL && r.phoneme != ALL) {
        scores.entry((r.variable.as_str(), r.layer, r.sg.as_str(), r.phoneme.as_str())).or_default().push(r.f1);
    }
    let mut points = Vec::new();
    for r in knn.iter().filter(|r| r.phoneme != ALL) {
        if let Some(v) = scores.get(&(r.variable.as_str(), r.layer, r.sg.as_str(), r.phoneme.as_str())) {
            points.push(CorrelationPoint {
                variable: r.variable.clone(),
                layer: r.layer,
                sg: r.sg.clone(),
                phoneme: r.phoneme.clone(),
                knn_distance: r.knn_distance,
                f1: v.iter().sum::<f64>() / v.len() as f64,
                replications: v.len(),
            });
        }
    }
    points.sort_by(|a, b| (&a.variable, a.layer, &a.sg, &a.phoneme).cmp(&(&b.variable, b.layer, &b.sg, &b.phoneme)));
    if points.is_empty() {
        return Err(Error::InvalidInput(
            "probe and variance reports share no (variable, layer, SG, phoneme) cell".into(),
        ));
    }
    let mut by_var: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in &points {
        let e = by_var.entry(p.variable.clone()).or_default();
        e.0.push(p.knn_distance);
        e.1.push(p.f1);
    }
    let summary = by_var
        .into_iter()
        .map(|(var, (x, y))| {
            let n = x.len();
            let s = match pearson_r(&x, &y) {
                Ok(t) => CorrelationSummary {
                    n,
                    r: Some(t.statistic),
                    p_value: Some(t.p_value),
                    significant: t.p_value < CORRELATION_ALPHA,
                },
                Err(_) => CorrelationSummary { n, r: None, p_value: None, significant: false },
            };
            (var, s)
        })
        .collect();
    Ok((points, summary))
}

fn phoneme_key(p: &str) -> Option<String> {
    (p != ALL).then(|| p.to_string())
}

/// Replicates of relative-to-balanced F1, ordered by replication.
pub fn probe_replicates(rows: &[RelativeRow]) -> ReplicateTable {
    let mut cells: BTreeMap<CellKey, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        let key = CellKey {
            variable: r.variable.clone(),
            condition: r.setting.clone(),
            sg: r.sg.clone(),
            layer: r.layer,
            phoneme: phoneme_key(&r.phoneme),
        };
        cells.entry(key).or_default().push((r.replication, r.relative_f1));
    }
    sorted_values(cells)
}

/// Per-speaker KNN distance (absolute and relative), ordered by speaker id.
pub fn knn_replicates(rows: &[SpeakerKnnRow]) -> ReplicateTable {
    let mut cells: BTreeMap<CellKey, Vec<(String, f64)>> = BTreeMap::new();
    for r in rows {
        for (condition, v) in [("knn_absolute", r.knn_distance), ("knn_relative", r.relative_knn)] {
            let key = CellKey {
                variable: r.variable.clone(),
                condition: condition.into(),
                sg: r.sg.clone(),
                layer: r.layer,
                phoneme: phoneme_key(&r.phoneme),
            };
            cells.entry(key).or_default().push((r.speaker_id.clone(), v));
        }
    }
    sorted_values(cells)
}

fn sorted_values<O: Ord>(cells: BTreeMap<CellKey, Vec<(O, f64)>>) -> ReplicateTable {
    cells
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.0.cmp(&b.0));
            (k, v.into_iter().map(|x| x.1).collect())
        })
        .collect()
}

/// Cellwise `b − a` deltas with two-sided Welch tests.
pub fn compare_tables(a: &ReplicateTable, b: &ReplicateTable, alpha: f64) -> Result<Vec<DeltaRow>> {
    Ok(detdat_delta(a, b, alpha)?
        .into_iter()
        .map(|d| DeltaRow {
            replicates: a[&d.key].len(),
            variable: d.key.variable,
            condition: d.key.condition,
            sg: d.key.sg,
            layer: d.key.layer,
            phoneme: d.key.phoneme.unwrap_or_else(|| ALL.to_string()),
            mean_a: d.mean_a,
            mean_b: d.mean_b,
            delta: d.delta,
            statistic: d.test.as_ref().map(|t| t.statistic),
            df: d.test.as_ref().map(|t| t.df),
            p_value: d.test.as_ref().map(|t| t.p_value),
            significant: d.significant,
        })
        .collect())
}
