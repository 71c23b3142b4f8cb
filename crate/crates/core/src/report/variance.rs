use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::config::AuditConfig;
use super::probe::SampleIndex;
use super::tables::{SgKnnRow, SgTestRow, SpeakerKnnRow, ALL};
use crate::cohorts::SpeakerMetadata;
use crate::embedding_store::{EmbeddingContainer, PhonemeSample};
use crate::error::{Error, Result};
use crate::geometry::{variance_audit, VarianceRecord};
use crate::stats::t_two_sample;

#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub records: Vec<VarianceRecord>,
    pub speakers: Vec<SpeakerKnnRow>,
    pub by_sg: Vec<SgKnnRow>,
    pub tests: Vec<SgTestRow>,
    pub summary: Value,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs the KNN protocol and summarizes it per speaker group.
pub fn variance_report(
    container: &EmbeddingContainer,
    speakers: &[SpeakerMetadata],
    config: &AuditConfig,
) -> Result<VarianceReport> {
    config.validate()?;
    let index = SampleIndex::new(&container.records);
    let layers = index.select_layers(&config.layers)?;
    let selected: Vec<PhonemeSample> =
        container.records.iter().filter(|r| layers.binary_search(&r.layer).is_ok()).cloned().collect();
    let audit = variance_audit(&selected, &config.knn, config.seed)?;

    // per-speaker means over phonemes
    let mut speaker_all: BTreeMap<(&str, u32), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &audit.records {
        let e = speaker_all.entry((r.speaker_id.as_str(), r.layer)).or_default();
        e.0.push(r.knn_distance);
        e.1.push(r.mean_distance);
    }

    let mut speaker_rows = Vec::new();
    let mut sg_rows = Vec::new();
    let mut tests = Vec::new();
    let groups = config.speaker_groups(speakers)?;
    for (variable, sg_of) in &groups {
        // (layer, phoneme) → speaker rows before the relative column is known
        let mut cells: BTreeMap<(u32, String), Vec<SpeakerKnnRow>> = BTreeMap::new();
        let mut push = |layer: u32, phoneme: &str, spk: &str, sg: &str, knn: f64, md: f64| {
            cells.entry((layer, phoneme.to_string())).or_default().push(SpeakerKnnRow {
                variable: variable.to_string(),
                layer,
                sg: sg.to_string(),
                speaker_id: spk.to_string(),
                phoneme: phoneme.to_string(),
                knn_distance: knn,
                mean_distance: md,
                relative_knn: 0.0,
            });
        };
        for r in &audit.records {
            if let Some(sg) = sg_of.get(&r.speaker_id) {
                push(r.layer, &r.phoneme, &r.speaker_id, sg, r.knn_distance, r.mean_distance);
            }
        }
        for ((spk, layer), (knn, md)) in &speaker_all {
            if let Some(sg) = sg_of.get(*spk) {
                push(*layer, ALL, spk, sg, mean(knn), mean(md));
            }
        }

        for ((layer, phoneme), mut rows) in cells {
            let mut per_sg: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for r in &rows {
                let e = per_sg.entry(r.sg.clone()).or_default();
                e.0.push(r.knn_distance);
                e.1.push(r.mean_distance);
            }
            let sg_means: BTreeMap<&String, f64> = per_sg.iter().map(|(g, (k, _))| (g, mean(k))).collect();
            let baseline = sg_means.values().sum::<f64>() / sg_means.len() as f64;
            for r in &mut rows {
                r.relative_knn = r.knn_distance - baseline;
            }
            for (sg, (knn, md)) in &per_sg {
                sg_rows.push(SgKnnRow {
                    variable: variable.to_string(),
                    layer,
                    sg: sg.clone(),
                    phoneme: phoneme.clone(),
                    n_speakers: knn.len(),
                    knn_distance: sg_means[sg],
                    mean_distance: mean(md),
                    relative_knn: sg_means[sg] - baseline,
                });
            }
            if phoneme == ALL {
                let names: Vec<&String> = per_sg.keys().collect();
                for (i, a) in names.iter().enumerate() {
                    for b in &names[i + 1..] {
                        let (va, vb) = (&per_sg[*a].0, &per_sg[*b].0);
                        let test = if va.len() >= 2 && vb.len() >= 2 { t_two_sample(va, vb).ok() } else { None };
                        tests.push(SgTestRow {
                            variable: variable.to_string(),
                            layer,
                            sg_a: a.to_string(),
                            sg_b: b.to_string(),
                            n_a: va.len(),
                            n_b: vb.len(),
                            mean_a: mean(va),
                            mean_b: mean(vb),
                            statistic: test.as_ref().map(|t| t.statistic),
                            df: test.as_ref().map(|t| t.df),
                            p_value: test.as_ref().map(|t| t.p_value),
                            significant: test.as_ref().is_some_and(|t| t.significant(config.alpha)),
                        });
                    }
                }
            }
            rows.sort_by(|a, b| (&a.sg, &a.speaker_id).cmp(&(&b.sg, &b.speaker_id)));
            speaker_rows.extend(rows);
        }
    }
    if audit.records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no (speaker, phoneme, layer) cell has {} samples",
            config.knn.n_samples
        )));
    }

    let summary = json!({
        "toolkit": concat!("phonaudit ", env!("CARGO_PKG_VERSION")),
        "command": "variance-audit",
        "config_hash": config.hash(),
        "config": config,
        "seed": config.seed,
        "layers": layers,
        "cells_measured": audit.records.len(),
        "cells_skipped": audit.skipped.len(),
        "knn_distance": "mean over points of the mean squared L2 distance to the k nearest same-phoneme neighbours",
        "relative_knn": "value minus the unweighted mean of the per-group means",
        "variables": groups.keys().map(ToString::to_string).collect::<Vec<_>>(),
    });
    Ok(VarianceReport { records: audit.records, speakers: speaker_rows, by_sg: sg_rows, tests, summary })
}
