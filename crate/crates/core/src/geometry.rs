//! Representation-spread measurements: per-speaker standardization, PCA,
//! KNN distance and distance-to-centroid.

use std::collections::BTreeMap;

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::PhonemeSample;
use crate::error::{Error, Result};
use crate::numeric::{centroid, matrix_to_rows, rows_to_matrix, squared_distance, standardize_columns};
use crate::seed::SeedMixer;

/// Cumulative explained-variance slack when comparing against the threshold.
const RATIO_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub n_samples: usize,
    pub k: usize,
    pub variance_threshold: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { n_samples: 30, k: 3, variance_threshold: 0.95 }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.k >= self.n_samples {
            return Err(Error::Config(format!("need 1 <= k < n_samples, got k={} n={}", self.k, self.n_samples)));
        }
        if !(self.variance_threshold > 0.0 && self.variance_threshold <= 1.0) {
            return Err(Error::Config(format!("variance threshold {} outside (0, 1]", self.variance_threshold)));
        }
        Ok(())
    }
}

/// Standardizes every dimension across all of one speaker's samples at one layer.
pub fn standardize_speaker_layer(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if vectors.len() < 2 {
        return Err(Error::InvalidInput(format!("standardization needs >= 2 samples, got {}", vectors.len())));
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimMismatch { expected: d, found: v.len() });
    }
    let mut m = rows_to_matrix(vectors);
    standardize_columns(&mut m);
    Ok(matrix_to_rows(&m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `m × D`, orthonormal rows ordered by decreasing variance.
    pub components: DMatrix<f64>,
    pub explained_ratio: Vec<f64>,
}

impl PcaProjection {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .row_iter()
            .map(|c| c.iter().zip(v.iter().zip(&self.mean)).map(|(w, (x, mu))| w * (x - mu)).sum())
            .collect()
    }
}

/// Principal components retaining at least `threshold` of the total variance.
///
/// Uses the `n × n` Gram matrix when there are fewer samples than dimensions.
pub fn pca_fit(samples: &[Vec<f64>], threshold: f64) -> Result<PcaProjection> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs >= 2 samples, got {n}")));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("variance threshold {threshold} outside (0, 1]")));
    }
    let d = samples[0].len();
    if let Some(v) = samples.iter().find(|v| v.len() != d) {
        return Err(Error::DimMismatch { expected: d, found: v.len() });
    }
    let mean = centroid(samples);
    let x = DMatrix::from_fn(n, d, |r, c| samples[r][c] - mean[c]);
    let scale = 1.0 / (n - 1) as f64;

    let (values, vectors, gram) = if n < d {
        let e = SymmetricEigen::new(&x * x.transpose() * scale);
        (e.eigenvalues, e.eigenvectors, true)
    } else {
        let e = SymmetricEigen::new(x.transpose() * &x * scale);
        (e.eigenvalues, e.eigenvectors, false)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let largest = values[order[0]];
    if !(total > 0.0) || largest <= 1e-12 * x.iter().fold(0.0f64, |m, v| m.max(v.abs())).powi(2) {
        return Err(Error::Degenerate("all samples identical; no variance to decompose".into()));
    }

    let mut explained_ratio = Vec::new();
    let mut cumulative = 0.0;
    for &i in &order {
        let ratio = values[i].max(0.0) / total;
        explained_ratio.push(ratio);
        cumulative += ratio;
        if cumulative >= threshold - RATIO_SLACK {
            break;
        }
    }
    let m = explained_ratio.len();
    let mut components = DMatrix::zeros(m, d);
    for (row, &i) in order[..m].iter().enumerate() {
        let mut axis = if gram { x.transpose() * vectors.column(i) } else { vectors.column(i).into_owned() };
        let norm = axis.norm();
        axis /= norm;
        components.row_mut(row).copy_from(&axis.transpose());
    }
    Ok(PcaProjection { mean, components, explained_ratio })
}

/// Per-point mean squared L2 distance to the `k` nearest other points
/// (ties broken by lower index).
pub fn knn_distances(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if k == 0 || n <= k {
        return Err(Error::InvalidInput(format!("KNN needs N > k >= 1, got N={n} k={k}")));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = squared_distance(&points[i], &points[j]);
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    let mut row: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            row.clear();
            row.extend((0..n).filter(|&j| j != i).map(|j| (dist[i * n + j], j)));
            row.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            row[..k].iter().map(|(v, _)| v).sum::<f64>() / k as f64
        })
        .collect())
}

/// Group KNN distance: mean of [`knn_distances`].
pub fn knn_distance(points: &[Vec<f64>], k: usize) -> Result<f64> {
    let per_point = knn_distances(points, k)?;
    Ok(per_point.iter().sum::<f64>() / per_point.len() as f64)
}

/// Mean squared L2 distance to the centroid.
pub fn mean_distance(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!("mean distance needs >= 2 points, got {}", points.len())));
    }
    let c = centroid(points);
    Ok(points.iter().map(|p| squared_distance(p, &c)).sum::<f64>() / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRecord {
    pub speaker_id: String,
    pub phoneme: String,
    pub layer: u32,
    pub knn_distance: f64,
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedCell {
    pub speaker_id: String,
    pub phoneme: String,
    pub layer: u32,
    pub available: usize,
}

#[derive(Debug, Clone, Default)]
pub struct VarianceAudit {
    pub records: Vec<VarianceRecord>,
    pub skipped: Vec<SkippedCell>,
}

/// Full spread protocol over a sample store, records sorted by (speaker, phoneme, layer).
pub fn variance_audit(samples: &[PhonemeSample], config: &KnnConfig, seed: u64) -> Result<VarianceAudit> {
    config.validate()?;
    let mut groups: BTreeMap<(&str, u32), Vec<&PhonemeSample>> = BTreeMap::new();
    for s in samples {
        groups.entry((s.speaker_id.as_str(), s.layer)).or_default().push(s);
    }
    let parts: Vec<Result<VarianceAudit>> = groups
        .into_par_iter()
        .map(|((speaker, layer), mut members)| {
            members.sort_by(|a, b| (&a.phoneme, a.sample_index).cmp(&(&b.phoneme, b.sample_index)));
            audit_speaker_layer(speaker, layer, &members, config, seed)
        })
        .collect();
    let mut out = VarianceAudit::default();
    for p in parts {
        let p = p?;
        out.records.extend(p.records);
        out.skipped.extend(p.skipped);
    }
    out.records.sort_by(|a, b| (&a.speaker_id, &a.phoneme, a.layer).cmp(&(&b.speaker_id, &b.phoneme, b.layer)));
    out.skipped.sort_by(|a, b| (&a.speaker_id, &a.phoneme, a.layer).cmp(&(&b.speaker_id, &b.phoneme, b.layer)));
    for s in &out.skipped {
        warn!(
            "skipping {}/{}/layer {}: {} samples < {}",
            s.speaker_id, s.phoneme, s.layer, s.available, config.n_samples
        );
    }
    Ok(out)
}

fn audit_speaker_layer(
    speaker: &str,
    layer: u32,
    members: &[&PhonemeSample],
    config: &KnnConfig,
    seed: u64,
) -> Result<VarianceAudit> {
    let mut out = VarianceAudit::default();
    let skip_all = |out: &mut VarianceAudit| {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for m in members {
            *counts.entry(m.phoneme.as_str()).or_default() += 1;
        }
        for (ph, n) in counts {
            out.skipped.push(SkippedCell { speaker_id: speaker.into(), phoneme: ph.into(), layer, available: n });
        }
    };
    if members.len() < 2 {
        skip_all(&mut out);
        return Ok(out);
    }
    let raw: Vec<Vec<f64>> = members.iter().map(|s| s.vector_f64()).collect();
    let standardized = standardize_speaker_layer(&raw)?;
    let projected: Vec<Vec<f64>> = match pca_fit(&standardized, config.variance_threshold) {
        Ok(pca) => {
            debug!("{speaker} layer {layer}: {} components", pca.n_components());
            standardized.iter().map(|v| pca.project(v)).collect()
        }
        Err(Error::Degenerate(_)) => vec![Vec::new(); standardized.len()],
        Err(e) => return Err(e),
    };

    let mut by_phoneme: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in members.iter().enumerate() {
        by_phoneme.entry(m.phoneme.as_str()).or_default().push(i);
    }
    for (phoneme, idx) in by_phoneme {
        if idx.len() < config.n_samples {
            out.skipped.push(SkippedCell {
                speaker_id: speaker.into(),
                phoneme: phoneme.into(),
                layer,
                available: idx.len(),
            });
            continue;
        }
        let chosen: Vec<usize> = if idx.len() > config.n_samples {
            let mut rng = SeedMixer::new(seed).str("knn").str(speaker).str(phoneme).num(u64::from(layer)).rng();
            let mut pick = index::sample(&mut rng, idx.len(), config.n_samples).into_vec();
            pick.sort_unstable();
            pick.into_iter().map(|p| idx[p]).collect()
        } else {
            idx
        };
        let points: Vec<Vec<f64>> = chosen.iter().map(|&i| projected[i].clone()).collect();
        out.records.push(VarianceRecord {
            speaker_id: speaker.into(),
            phoneme: phoneme.into(),
            layer,
            knn_distance: knn_distance(&points, config.k)?,
            mean_distance: mean_distance(&points)?,
        });
    }
    Ok(out)
}
