use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohorts::{
    aggregate_groups, mode_filter, AggregationRule, DemographicVariable, ModeProfile, ProfileValue, SpeakerMetadata,
    DEFAULT_TEST_FRACTION, REPLICATIONS,
};
use crate::embedding_store::IngestConfig;
use crate::error::{Error, Result};
use crate::geometry::KnnConfig;
use crate::probes::ProbeHyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub replications: usize,
    pub test_fraction: f64,
    /// Training speakers per cohort; defaults to the smallest SG's training pool.
    pub speakers_per_sg: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let h = ProbeHyper::default();
        ProbeConfig {
            learning_rate: h.learning_rate,
            l2: h.l2,
            max_epochs: h.max_epochs,
            tolerance: h.tolerance,
            replications: REPLICATIONS,
            test_fraction: DEFAULT_TEST_FRACTION,
            speakers_per_sg: None,
        }
    }
}

impl ProbeConfig {
    pub fn hyper(&self, seed: u64) -> ProbeHyper {
        ProbeHyper {
            learning_rate: self.learning_rate,
            l2: self.l2,
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub top_phonemes: usize,
    pub instances_per_phoneme: usize,
    pub z_max: f64,
}

impl Default for IngestSettings {
    fn default() -> Self {
        let d = IngestConfig::default();
        IngestSettings { top_phonemes: d.top_phonemes, instances_per_phoneme: d.instances_per_phoneme, z_max: d.z_max }
    }
}

/// Everything a run needs besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: u64,
    /// Variables to audit; empty means every variable with at least two SGs.
    pub variables: Vec<DemographicVariable>,
    /// Layers to audit; empty means all layers in the container.
    pub layers: Vec<u32>,
    /// Significance level for report flags.
    pub alpha: f64,
    pub probe: ProbeConfig,
    pub knn: KnnConfig,
    pub ingest: IngestSettings,
    pub aggregation: Vec<AggregationRule>,
    /// Per target variable: required label of other variables ("" = absent).
    pub mode_profile: BTreeMap<String, BTreeMap<String, String>>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: 0,
            variables: Vec::new(),
            layers: Vec::new(),
            alpha: 0.05,
            probe: ProbeConfig::default(),
            knn: KnnConfig::default(),
            ingest: IngestSettings::default(),
            aggregation: Vec::new(),
            mode_profile: BTreeMap::new(),
        }
    }
}

impl AuditConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: AuditConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        self.probe.hyper(self.seed).validate()?;
        if self.probe.replications < 2 {
            return Err(Error::Config("at least two replications are needed for t-tests".into()));
        }
        if self.probe.speakers_per_sg == Some(0) {
            return Err(Error::Config("speakers_per_sg must be at least 1".into()));
        }
        self.knn.validate()?;
        for target in self.mode_profile.keys() {
            self.profile(target.parse()?)?;
        }
        Ok(())
    }

    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            top_phonemes: self.ingest.top_phonemes,
            instances_per_phoneme: self.ingest.instances_per_phoneme,
            z_max: self.ingest.z_max,
            seed: self.seed,
        }
    }

    pub fn profile(&self, variable: DemographicVariable) -> Result<ModeProfile> {
        let mut out = ModeProfile::new();
        if let Some(raw) = self.mode_profile.get(variable.as_str()) {
            for (k, v) in raw {
                out.insert(k.parse()?, ProfileValue::parse(v));
            }
        }
        Ok(out)
    }

    /// Short hash of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex_prefix(&Sha256::digest(&bytes))
    }

    /// Speaker → SG for each audited variable, after aggregation and mode filtering.
    pub fn speaker_groups(
        &self,
        speakers: &[SpeakerMetadata],
    ) -> Result<BTreeMap<DemographicVariable, BTreeMap<String, String>>> {
        let table = aggregate_groups(speakers, &self.aggregation)?;
        let explicit = !self.variables.is_empty();
        let vars: Vec<DemographicVariable> =
            if explicit { self.variables.clone() } else { DemographicVariable::ALL.to_vec() };
        let mut out = BTreeMap::new();
        for var in vars {
            let distinct: std::collections::BTreeSet<&str> = table.iter().filter_map(|s| s.group(var)).collect();
            if !explicit && distinct.len() < 2 {
                log::info!("skipping {var}: fewer than two speaker groups");
                continue;
            }
            out.insert(var, mode_filter(&table, var, &self.profile(var)?)?);
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("no demographic variable has two or more speaker groups".into()));
        }
        Ok(out)
    }
}

pub(crate) fn hex_prefix(digest: &[u8]) -> String {
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Order-sensitive hash over a list of strings.
pub(crate) fn combine_hashes<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex_prefix(&h.finalize())
}
