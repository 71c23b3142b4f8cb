//! Synthetic phoneme-embedding worlds with known per-group bias and variance.
//!
//! Every sample is drawn from an isotropic Gaussian around its phoneme mode,
//! shifted by the group's bias offset and a per-speaker jitter, with the
//! group's standard deviation. The canonical scenarios place phonemes in two
//! confusable pairs far apart from each other, so that per-speaker
//! standardization keeps within-phoneme spread proportional to the group's
//! variance while the probe still has to separate close neighbours.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohorts::{DemographicVariable, SpeakerMetadata};
use crate::embedding_store::{ContainerHeader, EmbeddingContainer, PhonemeSample};
use crate::error::{Error, Result};
use crate::seed::SeedMixer;

/// Distance between the two confusable phonemes of a pair.
pub const PAIR_SEPARATION: f64 = 6.0;
/// Distance between the centres of the two phoneme pairs.
pub const CLUSTER_SEPARATION: f64 = 200.0;
/// Bias offset applied to the first phoneme in the "bias" and "mixed" scenarios.
pub const BIAS_SHIFT: f64 = 3.0;
/// Distance between the two modes of the bimodal phoneme.
pub const BIMODAL_SEPARATION: f64 = 20.0;

pub const SCENARIOS: [&str; 6] = ["equal", "variance", "bias", "mixed", "graded", "bimodal"];

const PHONEMES: [&str; 4] = ["AA", "AH", "IY", "IH"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPhoneme {
    pub label: String,
    /// One mode, or two for a bimodal phoneme (each sample picks one uniformly).
    pub modes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroup {
    pub label: String,
    pub sigma: f64,
    /// Offset per phoneme label; phonemes not listed are unbiased.
    #[serde(default)]
    pub bias: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub phonemes: Vec<SynthPhoneme>,
    pub groups: Vec<SynthGroup>,
    pub speakers_per_group: usize,
    pub samples_per_speaker_phoneme: usize,
    /// Standard deviation of each speaker's per-phoneme mode offset.
    pub speaker_jitter: f64,
    pub layers: u32,
    /// Demographic variable whose labels are the synthetic groups.
    pub variable: DemographicVariable,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("synthetic dim must be >= 2, got {}", self.dim)));
        }
        if self.phonemes.len() < 2 || self.groups.is_empty() {
            return Err(Error::Config("need at least two phonemes and one group".into()));
        }
        if self.speakers_per_group == 0 || self.samples_per_speaker_phoneme == 0 || self.layers == 0 {
            return Err(Error::Config("speaker, sample and layer counts must be positive".into()));
        }
        if !(self.speaker_jitter >= 0.0 && self.speaker_jitter.is_finite()) {
            return Err(Error::Config(format!("speaker jitter must be >= 0, got {}", self.speaker_jitter)));
        }
        let labels: BTreeSet<&str> = self.phonemes.iter().map(|p| p.label.as_str()).collect();
        if labels.len() != self.phonemes.len() {
            return Err(Error::Config("duplicate phoneme labels".into()));
        }
        for p in &self.phonemes {
            if p.modes.is_empty() || p.modes.len() > 2 || p.modes.iter().any(|m| m.len() != self.dim) {
                return Err(Error::Config(format!(
                    "phoneme {} needs one or two modes of length {}",
                    p.label, self.dim
                )));
            }
        }
        for (i, a) in self.phonemes.iter().enumerate() {
            for b in &self.phonemes[i + 1..] {
                if a.modes[0] == b.modes[0] {
                    return Err(Error::Config(format!("phonemes {} and {} share a mode", a.label, b.label)));
                }
            }
        }
        let groups: BTreeSet<&str> = self.groups.iter().map(|g| g.label.as_str()).collect();
        if groups.len() != self.groups.len() || groups.contains("") {
            return Err(Error::Config("group labels must be unique and non-empty".into()));
        }
        for g in &self.groups {
            if !(g.sigma > 0.0 && g.sigma.is_finite()) {
                return Err(Error::Config(format!("group {} sigma must be > 0", g.label)));
            }
            for (ph, off) in &g.bias {
                if !labels.contains(ph.as_str()) || off.len() != self.dim {
                    return Err(Error::Config(format!("group {} has an invalid bias for {ph}", g.label)));
                }
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> SynthTruth {
        let min_sigma = self.groups.iter().map(|g| g.sigma).fold(f64::INFINITY, f64::min);
        SynthTruth {
            biased_groups: self
                .groups
                .iter()
                .filter(|g| g.bias.values().any(|o| o.iter().any(|v| *v != 0.0)))
                .map(|g| g.label.clone())
                .collect(),
            high_variance_groups: self.groups.iter().filter(|g| g.sigma > min_sigma).map(|g| g.label.clone()).collect(),
            sigmas: self.groups.iter().map(|g| (g.label.clone(), g.sigma)).collect(),
            offsets: self
                .groups
                .iter()
                .flat_map(|g| {
                    g.bias.iter().map(|(ph, o)| BiasOffset {
                        group: g.label.clone(),
                        phoneme: ph.clone(),
                        offset: o.clone(),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasOffset {
    pub group: String,
    pub phoneme: String,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub biased_groups: Vec<String>,
    pub high_variance_groups: Vec<String>,
    pub sigmas: BTreeMap<String, f64>,
    pub offsets: Vec<BiasOffset>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub container: EmbeddingContainer,
    pub truth: SynthTruth,
    pub speakers: Vec<SpeakerMetadata>,
}

/// Speaker id for the `index`-th speaker of a group.
pub fn speaker_id(group: &str, index: usize) -> String {
    format!("{group}{index:03}")
}

fn speaker_metadata(id: String, variable: DemographicVariable, group: &str) -> SpeakerMetadata {
    let mut m = SpeakerMetadata {
        speaker_id: id,
        gender: Some("female".into()),
        age: Some("adult".into()),
        dialect: Some("Native".into()),
        ethnicity: None,
    };
    let slot = match variable {
        DemographicVariable::Gender => &mut m.gender,
        DemographicVariable::Age => &mut m.age,
        DemographicVariable::Dialect => &mut m.dialect,
        DemographicVariable::Ethnicity => &mut m.ethnicity,
    };
    *slot = Some(group.to_string());
    m
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws the dataset described by `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let d = config.dim;
    let mut records = Vec::new();
    let mut speakers = Vec::new();
    for g in &config.groups {
        for i in 0..config.speakers_per_group {
            let id = speaker_id(&g.label, i);
            let meta = speaker_metadata(id.clone(), config.variable, &g.label);
            let labels = meta.to_groups();
            let mut rng = SeedMixer::new(config.seed).str("synth").str(&id).rng();
            let mut phonemes: Vec<&SynthPhoneme> = config.phonemes.iter().collect();
            phonemes.sort_by(|a, b| a.label.cmp(&b.label));
            for p in phonemes {
                let jitter: Vec<f64> = (0..d).map(|_| config.speaker_jitter * normal(&mut rng)).collect();
                let zero = vec![0.0; d];
                let bias = g.bias.get(&p.label).unwrap_or(&zero);
                for layer in 0..config.layers {
                    for s in 0..config.samples_per_speaker_phoneme {
                        let mode = if p.modes.len() == 2 { &p.modes[rng.random_range(0..2usize)] } else { &p.modes[0] };
                        let vector = (0..d)
                            .map(|k| (mode[k] + bias[k] + jitter[k] + g.sigma * normal(&mut rng)) as f32)
                            .collect();
                        records.push(PhonemeSample {
                            speaker_id: id.clone(),
                            phoneme: p.label.clone(),
                            layer,
                            sample_index: s as u32,
                            groups: labels.clone(),
                            vector,
                        });
                    }
                }
            }
            speakers.push(meta);
        }
    }
    // speaker, then phoneme, then layer
    records.sort_by(|a, b| {
        (&a.speaker_id, &a.phoneme, a.layer, a.sample_index).cmp(&(&b.speaker_id, &b.phoneme, b.layer, b.sample_index))
    });
    speakers.sort_by(|a, b| a.speaker_id.cmp(&b.speaker_id));
    let mut header = ContainerHeader::new(d, config.layers);
    header
        .metadata
        .insert("synth".into(), serde_json::to_value(config).map_err(|e| Error::InvalidInput(e.to_string()))?);
    Ok(SynthOutput { container: EmbeddingContainer::new(header, records)?, truth: config.truth(), speakers })
}

/// Optional adjustments to a canonical scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOverrides {
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    pub speakers_per_group: Option<usize>,
    pub samples_per_speaker_phoneme: Option<usize>,
    pub speaker_jitter: Option<f64>,
    pub layers: Option<u32>,
    pub variable: Option<DemographicVariable>,
}

/// Unit vector with `+1/√2` at `i` and `−1/√2` at `i + 1`.
fn pair_axis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = std::f64::consts::FRAC_1_SQRT_2;
    v[i + 1] = -std::f64::consts::FRAC_1_SQRT_2;
    v
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

fn group(label: &str, sigma: f64) -> SynthGroup {
    SynthGroup { label: label.into(), sigma, bias: BTreeMap::new() }
}

/// Canonical scenario configs: dim 16, four phonemes, two groups of 20
/// speakers, 30 samples per speaker and phoneme.
///
/// `graded` uses four groups with sigma 1, 1.5, 2 and 3; `bimodal` splits the
/// first phoneme into two modes.
pub fn scenario(name: &str, overrides: &ScenarioOverrides) -> Result<SynthConfig> {
    let dim = overrides.dim.unwrap_or(16);
    let min_dim = if name == "bimodal" { 6 } else { 4 };
    if dim < min_dim {
        return Err(Error::Config(format!("scenario {name} needs dim >= {min_dim}, got {dim}")));
    }
    let across = vec![1.0 / (dim as f64).sqrt(); dim];
    let (e1, e2) = (pair_axis(dim, 0), pair_axis(dim, 2));
    let left = axpy(&vec![0.0; dim], -0.5 * CLUSTER_SEPARATION, &across);
    let right = axpy(&vec![0.0; dim], 0.5 * CLUSTER_SEPARATION, &across);
    let modes = [
        axpy(&left, -0.5 * PAIR_SEPARATION, &e1),
        axpy(&left, 0.5 * PAIR_SEPARATION, &e1),
        axpy(&right, -0.5 * PAIR_SEPARATION, &e2),
        axpy(&right, 0.5 * PAIR_SEPARATION, &e2),
    ];
    let mut phonemes: Vec<SynthPhoneme> =
        PHONEMES.iter().zip(modes).map(|(l, m)| SynthPhoneme { label: l.to_string(), modes: vec![m] }).collect();
    // first phoneme shifted towards its pair partner
    let toward_partner: Vec<f64> = e1.iter().map(|v| BIAS_SHIFT * v).collect();

    let groups = match name {
        "equal" => vec![group("A", 1.0), group("B", 1.0)],
        "variance" => vec![group("A", 1.0), group("B", 2.0)],
        "bias" | "mixed" => {
            let mut b = group("B", if name == "mixed" { 2.0 } else { 1.0 });
            b.bias.insert(PHONEMES[0].to_string(), toward_partner);
            vec![group("A", 1.0), b]
        }
        "graded" => [("A", 1.0), ("B", 1.5), ("C", 2.0), ("D", 3.0)].iter().map(|(l, s)| group(l, *s)).collect(),
        "bimodal" => {
            let e3 = pair_axis(dim, 4);
            let centre = phonemes[0].modes[0].clone();
            phonemes[0].modes =
                vec![axpy(&centre, -0.5 * BIMODAL_SEPARATION, &e3), axpy(&centre, 0.5 * BIMODAL_SEPARATION, &e3)];
            vec![group("A", 1.0), group("B", 1.0)]
        }
        other => {
            return Err(Error::Config(format!("unknown scenario {other:?}; expected one of {}", SCENARIOS.join(", "))))
        }
    };
    let config = SynthConfig {
        dim,
        phonemes,
        groups,
        speakers_per_group: overrides.speakers_per_group.unwrap_or(20),
        samples_per_speaker_phoneme: overrides.samples_per_speaker_phoneme.unwrap_or(30),
        speaker_jitter: overrides.speaker_jitter.unwrap_or(0.3),
        layers: overrides.layers.unwrap_or(1),
        variable: overrides.variable.unwrap_or(DemographicVariable::Dialect),
        seed: overrides.seed.unwrap_or(0),
    };
    config.validate()?;
    Ok(config)
}
