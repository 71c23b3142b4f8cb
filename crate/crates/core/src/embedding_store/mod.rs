//! Pooled phoneme embeddings: the on-disk container plus the processing that
//! turns aligned frame dumps into one vector per phoneme instance.
//!
//! The pipeline is: standardize every frame matrix over its utterance, mean-pool
//! the middle third of each aligned span, keep the most frequent phonemes, and
//! drop instances whose distance to their (speaker, phoneme, layer) centroid is
//! an outlier.

mod container;
mod ingest;
pub mod tabular;

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric;

pub use container::{
    read_container, write_container, ContainerHeader, ContainerReader, ContainerWriter, EmbeddingContainer,
    FORMAT_VERSION, MAGIC,
};
pub use ingest::{ingest_utterances, IngestConfig, IngestOutput, SkipRecord};

/// Frame-level hidden states of one utterance at one layer (rows are frames).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub utterance_id: String,
    pub layer: u32,
    pub frames: DMatrix<f64>,
}

impl FrameMatrix {
    pub fn new(utterance_id: impl Into<String>, layer: u32, frames: DMatrix<f64>) -> Result<Self> {
        let m = FrameMatrix { utterance_id: utterance_id.into(), layer, frames };
        m.validate()?;
        Ok(m)
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.n_frames() == 0 || self.dim() == 0 {
            return Err(Error::InvalidInput(format!(
                "utterance {} layer {}: frame matrix is {}x{}",
                self.utterance_id,
                self.layer,
                self.n_frames(),
                self.dim()
            )));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataQuality(format!(
                "utterance {} layer {}: non-finite frame value",
                self.utterance_id, self.layer
            )));
        }
        Ok(())
    }
}

/// An aligned phoneme interval, in frames; `end_frame` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhonemeSpan {
    pub utterance_id: String,
    pub phoneme: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl PhonemeSpan {
    pub fn len(&self) -> usize {
        self.end_frame.saturating_sub(self.start_frame)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One pooled phoneme embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeSample {
    pub speaker_id: String,
    pub phoneme: String,
    pub layer: u32,
    /// Unique within the (speaker, phoneme, layer) group.
    pub sample_index: u32,
    /// Raw demographic labels keyed by variable name; absent labels are omitted.
    pub groups: BTreeMap<String, String>,
    pub vector: Vec<f32>,
}

impl PhonemeSample {
    pub fn vector_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Standardizes each dimension of an utterance's frames to zero mean and unit
/// (population) standard deviation. Constant dimensions become all zeros.
pub fn normalize_utterance(frames: &FrameMatrix) -> Result<FrameMatrix> {
    frames.validate()?;
    let mut out = frames.clone();
    numeric::standardize_columns(&mut out.frames);
    Ok(out)
}

/// Half-open frame range used for pooling: the middle third of the span, or
/// the whole span when it is shorter than three frames.
pub fn pooling_window(span_len: usize) -> (usize, usize) {
    if span_len < 3 {
        return (0, span_len);
    }
    let lo = span_len / 3;
    let hi = (2 * span_len).div_ceil(3);
    (lo, hi)
}

/// Mean of the span's middle-third frames.
pub fn pool_phoneme(frames: &FrameMatrix, span: &PhonemeSpan) -> Result<Vec<f64>> {
    if span.is_empty() {
        return Err(Error::InvalidInput(format!("empty span for {:?} in {}", span.phoneme, span.utterance_id)));
    }
    if span.end_frame > frames.n_frames() {
        return Err(Error::InvalidInput(format!(
            "span [{}, {}) for {:?} exceeds {} frames of {}",
            span.start_frame,
            span.end_frame,
            span.phoneme,
            frames.n_frames(),
            frames.utterance_id
        )));
    }
    let (lo, hi) = pooling_window(span.len());
    let rows = frames.frames.rows(span.start_frame + lo, hi - lo);
    let n = (hi - lo) as f64;
    Ok(rows.row_sum().iter().map(|s| s / n).collect())
}

/// The `n` most frequent phonemes, ordered by descending count then label.
pub fn select_top_phonemes(counts: &BTreeMap<String, u64>, n: usize) -> Result<Vec<String>> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("no phoneme counts".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("must select at least one phoneme".into()));
    }
    if n > counts.len() {
        return Err(Error::InvalidInput(format!("asked for {n} phonemes but only {} labels exist", counts.len())));
    }
    let mut ranked: Vec<(&String, u64)> = counts.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(n).map(|(k, _)| k.clone()).collect())
}

/// Drops samples whose Euclidean distance to the group mean has a z-score
/// (sample standard deviation over the group's distances) above `z_max`.
///
/// Expects samples from a single (speaker, phoneme, layer) group. Order of the
/// survivors is preserved.
pub fn filter_outliers(samples: &[PhonemeSample], z_max: f64) -> Result<Vec<PhonemeSample>> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!("outlier filtering needs at least 2 samples, got {}", samples.len())));
    }
    let dim = samples[0].vector.len();
    if let Some(bad) = samples.iter().find(|s| s.vector.len() != dim) {
        return Err(Error::DimMismatch { expected: dim, found: bad.vector.len() });
    }
    let vectors: Vec<Vec<f64>> = samples.iter().map(PhonemeSample::vector_f64).collect();
    let keep = outlier_mask(&vectors, z_max);
    Ok(samples.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect())
}

/// `true` for every vector that survives the distance z-score filter.
pub(crate) fn outlier_mask(vectors: &[Vec<f64>], z_max: f64) -> Vec<bool> {
    let centroid = numeric::centroid(vectors);
    let dists: Vec<f64> = vectors.iter().map(|v| numeric::squared_distance(v, &centroid).sqrt()).collect();
    let (mean, sd) = numeric::mean_and_sample_std(&dists);
    if !(sd > 0.0) || z_max.is_infinite() {
        return vec![true; vectors.len()];
    }
    dists.iter().map(|d| (d - mean) / sd <= z_max).collect()
}
