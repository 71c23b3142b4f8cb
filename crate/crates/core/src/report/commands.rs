//! File-level entry points behind each CLI subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::json;

use super::analysis::{compare_tables, correlate, knn_replicates, probe_replicates, CORRELATION_ALPHA};
use super::config::AuditConfig;
use super::probe::{probe_audit, speakers_from_container};
use super::tables::*;
use super::variance::variance_report;
use crate::cohorts::{read_speaker_metadata, write_speaker_metadata, SpeakerMetadata};
use crate::embedding_store::tabular::{read_frames_csv, read_samples_csv, read_spans_csv};
use crate::embedding_store::{ingest_utterances, read_container, write_container, ContainerHeader, EmbeddingContainer};
use crate::error::{Error, Result};
use crate::synth::{generate, scenario, ScenarioOverrides};

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Reads a PHEM container, or a samples CSV when the path ends in `.csv`.
pub fn load_container(path: &Path) -> Result<EmbeddingContainer> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let records = read_samples_csv(path)?;
        let dim = records.first().map_or(0, |r| r.vector.len());
        let layers = records.iter().map(|r| r.layer + 1).max().unwrap_or(0);
        return EmbeddingContainer::new(ContainerHeader::new(dim, layers), records);
    }
    read_container(path)
}

fn load_speakers(container: &EmbeddingContainer, metadata: Option<&Path>) -> Result<Vec<SpeakerMetadata>> {
    match metadata {
        Some(p) => read_speaker_metadata(p),
        None => speakers_from_container(container),
    }
}

/// Builds a container from frame dumps and alignment spans.
pub fn cmd_ingest(
    frames: &Path,
    spans: &Path,
    metadata: Option<&Path>,
    out: &Path,
    config: &AuditConfig,
) -> Result<PathBuf> {
    let utterances = read_frames_csv(frames)?;
    let spans = read_spans_csv(spans)?;
    let labels: BTreeMap<String, BTreeMap<String, String>> = match metadata {
        Some(p) => read_speaker_metadata(p)?.into_iter().map(|m| (m.speaker_id.clone(), m.to_groups())).collect(),
        None => BTreeMap::new(),
    };
    let result = ingest_utterances(&utterances, &spans, &labels, &config.ingest_config())?;
    prepare_out(out)?;
    let path = out.join(CONTAINER);
    write_container(&path, &result.container)?;
    let skips: Vec<[String; 3]> =
        result.skips.iter().map(|s| [s.utterance_id.clone(), s.phoneme.clone(), s.reason.clone()]).collect();
    let skip_path = out.join(INGEST_SKIPS);
    let mut w = csv::Writer::from_path(&skip_path).map_err(|e| Error::parse(&skip_path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::parse(&skip_path, e.to_string());
    w.write_record(["utterance_id", "phoneme", "reason"]).map_err(wrap)?;
    for s in &skips {
        w.write_record(s).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(&skip_path, e))?;
    if !result.skips.is_empty() {
        warn!("{} alignment spans skipped; see {}", result.skips.len(), skip_path.display());
    }
    info!("wrote {} samples to {}", result.container.records.len(), path.display());
    Ok(path)
}

pub fn cmd_probe_audit(container: &Path, metadata: Option<&Path>, out: &Path, config: &AuditConfig) -> Result<()> {
    let c = load_container(container)?;
    let speakers = load_speakers(&c, metadata)?;
    let audit = probe_audit(&c, &speakers, config)?;
    prepare_out(out)?;
    write_csv(&out.join(PROBE_F1), &audit.f1)?;
    write_csv(&out.join(PROBE_RELATIVE_AVG), &audit.relative_avg)?;
    write_csv(&out.join(PROBE_RELATIVE_BALANCED), &audit.relative_balanced)?;
    write_csv(&out.join(PROBE_TESTS), &audit.tests)?;
    write_csv(&out.join(PROBE_GAP), &audit.gaps)?;
    write_json(&out.join(SUMMARY), &audit.summary)
}

pub fn cmd_variance_audit(container: &Path, metadata: Option<&Path>, out: &Path, config: &AuditConfig) -> Result<()> {
    let c = load_container(container)?;
    let speakers = load_speakers(&c, metadata)?;
    let report = variance_report(&c, &speakers, config)?;
    prepare_out(out)?;
    write_csv(&out.join(VARIANCE_RECORDS), &report.records)?;
    write_csv(&out.join(VARIANCE_SPEAKER), &report.speakers)?;
    write_csv(&out.join(VARIANCE_BY_SG), &report.by_sg)?;
    write_csv(&out.join(VARIANCE_SG_TESTS), &report.tests)?;
    write_json(&out.join(SUMMARY), &report.summary)
}

pub fn cmd_correlate(probe_dir: &Path, variance_dir: &Path, out: &Path) -> Result<()> {
    let f1: Vec<ProbeF1Row> = read_csv(&probe_dir.join(PROBE_F1))?;
    let knn: Vec<SgKnnRow> = read_csv(&variance_dir.join(VARIANCE_BY_SG))?;
    let (points, summary) = correlate(&f1, &knn)?;
    prepare_out(out)?;
    write_csv(&out.join(CORRELATION_POINTS), &points)?;
    write_json(
        &out.join(CORRELATION_SUMMARY),
        &json!({
            "toolkit": concat!("phonaudit ", env!("CARGO_PKG_VERSION")),
            "command": "correlate",
            "x": "knn_distance (mean over speakers of the group)",
            "y": "per-phoneme F1 under balanced training (mean over replications)",
            "alpha": CORRELATION_ALPHA,
            "by_variable": summary,
        }),
    )
}

/// Compares two audit directories; probe and variance tables are compared
/// whenever both directories contain them.
pub fn cmd_compare(a: &Path, b: &Path, out: &Path, alpha: f64) -> Result<()> {
    let both = |name: &str| a.join(name).is_file() && b.join(name).is_file();
    let mut rows = Vec::new();
    let mut compared = Vec::new();
    if both(PROBE_RELATIVE_BALANCED) {
        let ra: Vec<RelativeRow> = read_csv(&a.join(PROBE_RELATIVE_BALANCED))?;
        let rb: Vec<RelativeRow> = read_csv(&b.join(PROBE_RELATIVE_BALANCED))?;
        rows.extend(compare_tables(&probe_replicates(&ra), &probe_replicates(&rb), alpha)?);
        compared.push("relative_to_balanced_f1");
    }
    if both(VARIANCE_SPEAKER) {
        let sa: Vec<SpeakerKnnRow> = read_csv(&a.join(VARIANCE_SPEAKER))?;
        let sb: Vec<SpeakerKnnRow> = read_csv(&b.join(VARIANCE_SPEAKER))?;
        rows.extend(compare_tables(&knn_replicates(&sa), &knn_replicates(&sb), alpha)?);
        compared.push("knn_distance");
    }
    if compared.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} and {} share neither {PROBE_RELATIVE_BALANCED} nor {VARIANCE_SPEAKER}",
            a.display(),
            b.display()
        )));
    }
    prepare_out(out)?;
    write_csv(&out.join(COMPARE_DELTAS), &rows)?;
    write_json(
        &out.join(SUMMARY),
        &json!({
            "toolkit": concat!("phonaudit ", env!("CARGO_PKG_VERSION")),
            "command": "compare",
            "compared": compared,
            "delta": "mean_b - mean_a",
            "test": "two-sided Welch t-test per cell",
            "alpha": alpha,
            "cells": rows.len(),
            "significant_cells": rows.iter().filter(|r| r.significant).count(),
        }),
    )
}

pub fn cmd_synth(name: &str, overrides: &ScenarioOverrides, out: &Path) -> Result<()> {
    let config = scenario(name, overrides)?;
    let data = generate(&config)?;
    prepare_out(out)?;
    write_container(out.join(CONTAINER), &data.container)?;
    let path = out.join(SPEAKERS);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_speaker_metadata(file, &data.speakers)?;
    write_json(&out.join(TRUTH), &json!({ "scenario": name, "truth": data.truth, "config": config }))
}
