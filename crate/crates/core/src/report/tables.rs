//! Row types for every emitted table, with CSV/JSON helpers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Phoneme or SG column value for rows aggregated over that dimension.
pub const ALL: &str = "*";

pub const PROBE_F1: &str = "probe_f1.csv";
pub const PROBE_RELATIVE_AVG: &str = "probe_relative_avg.csv";
pub const PROBE_RELATIVE_BALANCED: &str = "probe_relative_balanced.csv";
pub const PROBE_TESTS: &str = "probe_tests.csv";
pub const PROBE_GAP: &str = "probe_gap.csv";
pub const VARIANCE_RECORDS: &str = "variance_records.csv";
pub const VARIANCE_SPEAKER: &str = "variance_speaker.csv";
pub const VARIANCE_BY_SG: &str = "variance_by_sg.csv";
pub const VARIANCE_SG_TESTS: &str = "variance_sg_tests.csv";
pub const CORRELATION_POINTS: &str = "correlation_points.csv";
pub const CORRELATION_SUMMARY: &str = "correlation.json";
pub const COMPARE_DELTAS: &str = "compare_deltas.csv";
pub const SUMMARY: &str = "summary.json";
pub const CONTAINER: &str = "embeddings.phem";
pub const SPEAKERS: &str = "speakers.csv";
pub const TRUTH: &str = "truth.json";
pub const INGEST_SKIPS: &str = "ingest_skips.csv";

/// Macro or per-phoneme scores of one probe on one SG's test speakers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeF1Row {
    pub variable: String,
    pub layer: u32,
    pub setting: String,
    pub replication: usize,
    pub cohort_hash: String,
    /// Test SG, or `*` for all test speakers pooled.
    pub sg: String,
    /// Phoneme, or `*` for the macro average.
    pub phoneme: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRow {
    pub variable: String,
    pub layer: u32,
    pub setting: String,
    pub replication: usize,
    pub cohort_hash: String,
    pub sg: String,
    pub phoneme: String,
    pub relative_f1: f64,
}

/// One-sample t-test of replicate relative scores against zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub analysis: String,
    pub variable: String,
    pub layer: u32,
    pub setting: String,
    pub sg: String,
    pub phoneme: String,
    pub replications: usize,
    pub cohort_hash: String,
    pub mean: f64,
    pub statistic: Option<f64>,
    pub p_lower: Option<f64>,
    pub p_upper: Option<f64>,
    /// `above`, `below`, empty, or `degenerate` when replicates do not vary.
    pub direction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub variable: String,
    pub layer: u32,
    pub setting: String,
    pub replications: usize,
    pub cohort_hash: String,
    pub best_sg: String,
    pub worst_sg: String,
    pub best: f64,
    pub worst: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerKnnRow {
    pub variable: String,
    pub layer: u32,
    pub sg: String,
    pub speaker_id: String,
    pub phoneme: String,
    pub knn_distance: f64,
    pub mean_distance: f64,
    /// KNN distance minus the unweighted mean of the SG means.
    pub relative_knn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgKnnRow {
    pub variable: String,
    pub layer: u32,
    pub sg: String,
    pub phoneme: String,
    pub n_speakers: usize,
    pub knn_distance: f64,
    pub mean_distance: f64,
    pub relative_knn: f64,
}

/// Welch test of per-speaker KNN distance between two SGs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgTestRow {
    pub variable: String,
    pub layer: u32,
    pub sg_a: String,
    pub sg_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub statistic: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub variable: String,
    pub layer: u32,
    pub sg: String,
    pub phoneme: String,
    pub knn_distance: f64,
    pub f1: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub variable: String,
    pub condition: String,
    pub sg: String,
    pub layer: u32,
    pub phoneme: String,
    pub replicates: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub delta: f64,
    pub statistic: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file).deserialize().map(|r| r.map_err(|e| Error::parse(path, e.to_string()))).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}
