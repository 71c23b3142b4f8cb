use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::index;
use serde_json::{json, Map, Value};

use super::tabular::UtteranceFrames;
use super::{
    filter_outliers, normalize_utterance, pool_phoneme, select_top_phonemes, ContainerHeader, EmbeddingContainer,
    PhonemeSample, PhonemeSpan,
};
use crate::error::{Error, Result};
use crate::seed::SeedMixer;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub top_phonemes: usize,
    pub instances_per_phoneme: usize,
    pub z_max: f64,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { top_phonemes: 25, instances_per_phoneme: 30, z_max: 3.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipRecord {
    pub utterance_id: String,
    pub phoneme: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub container: EmbeddingContainer,
    pub selected_phonemes: Vec<String>,
    pub skips: Vec<SkipRecord>,
}

/// Turns normalized, aligned frame dumps into pooled phoneme samples.
///
/// Instances are subsampled per (speaker, phoneme) before pooling so that the
/// same phoneme occurrences are used at every layer. `speaker_labels` maps a
/// speaker to its raw demographic labels, which are inlined into each record.
pub fn ingest_utterances(
    utterances: &BTreeMap<String, UtteranceFrames>,
    spans: &[PhonemeSpan],
    speaker_labels: &BTreeMap<String, BTreeMap<String, String>>,
    config: &IngestConfig,
) -> Result<IngestOutput> {
    if config.instances_per_phoneme == 0 || config.top_phonemes == 0 {
        return Err(Error::Config("instances_per_phoneme and top_phonemes must be positive".into()));
    }
    let dim = utterances
        .values()
        .flat_map(|u| u.layers.values())
        .map(|f| f.dim())
        .next()
        .ok_or_else(|| Error::InvalidInput("no frames to ingest".into()))?;
    let layers: BTreeSet<u32> = utterances.values().flat_map(|u| u.layers.keys().copied()).collect();
    for u in utterances.values() {
        if let Some(f) = u.layers.values().find(|f| f.dim() != dim) {
            return Err(Error::DimMismatch { expected: dim, found: f.dim() });
        }
    }

    let mut normalized = BTreeMap::new();
    for (utt, u) in utterances {
        for (layer, fm) in &u.layers {
            normalized.insert((utt.as_str(), *layer), normalize_utterance(fm)?);
        }
    }

    let mut skips = Vec::new();
    let mut valid: Vec<&PhonemeSpan> = Vec::new();
    for span in spans {
        let Some(u) = utterances.get(&span.utterance_id) else {
            skips.push(skip(span, "utterance missing from frame dumps"));
            continue;
        };
        let short = u.layers.values().any(|f| span.end_frame > f.n_frames());
        if short || u.layers.len() != layers.len() {
            skips.push(skip(span, "span exceeds frames or utterance lacks layers"));
            continue;
        }
        valid.push(span);
    }

    let mut header = ContainerHeader::new(dim, layers.iter().next_back().map_or(0, |l| l + 1));
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for s in &valid {
        *counts.entry(s.phoneme.clone()).or_default() += 1;
    }
    if counts.is_empty() {
        warn!("no usable alignment spans; writing an empty container");
        header.metadata = provenance(config, &[]);
        return Ok(IngestOutput {
            container: EmbeddingContainer::new(header, vec![])?,
            selected_phonemes: vec![],
            skips,
        });
    }
    let n = config.top_phonemes.min(counts.len());
    if n < config.top_phonemes {
        warn!("only {} phoneme labels present; keeping all of them", counts.len());
    }
    let selected = select_top_phonemes(&counts, n)?;
    let selected_set: BTreeSet<&str> = selected.iter().map(String::as_str).collect();

    // instances per (speaker, phoneme), in (utterance, start) order
    let mut instances: BTreeMap<(&str, &str), Vec<&PhonemeSpan>> = BTreeMap::new();
    for s in valid {
        if !selected_set.contains(s.phoneme.as_str()) {
            continue;
        }
        let spk = utterances[&s.utterance_id].speaker_id.as_str();
        instances.entry((spk, s.phoneme.as_str())).or_default().push(s);
    }

    let mut records = Vec::new();
    for ((spk, ph), mut list) in instances {
        list.sort_by(|a, b| (&a.utterance_id, a.start_frame).cmp(&(&b.utterance_id, b.start_frame)));
        if list.len() > config.instances_per_phoneme {
            let mut rng = SeedMixer::new(config.seed).str(spk).str(ph).rng();
            let mut picked = index::sample(&mut rng, list.len(), config.instances_per_phoneme).into_vec();
            picked.sort_unstable();
            list = picked.into_iter().map(|i| list[i]).collect();
        }
        let groups = match speaker_labels.get(spk) {
            Some(g) => g.clone(),
            None => {
                warn!("speaker {spk} has no metadata; records carry no group labels");
                BTreeMap::new()
            }
        };
        for &layer in &layers {
            let mut group = Vec::with_capacity(list.len());
            for span in &list {
                let pooled = pool_phoneme(&normalized[&(span.utterance_id.as_str(), layer)], span)?;
                group.push(PhonemeSample {
                    speaker_id: spk.to_string(),
                    phoneme: ph.to_string(),
                    layer,
                    sample_index: 0,
                    groups: groups.clone(),
                    vector: pooled.into_iter().map(|v| v as f32).collect(),
                });
            }
            let kept = if group.len() >= 2 { filter_outliers(&group, config.z_max)? } else { group };
            for (i, mut s) in kept.into_iter().enumerate() {
                s.sample_index = i as u32;
                records.push(s);
            }
        }
    }
    header.metadata = provenance(config, &selected);
    Ok(IngestOutput { container: EmbeddingContainer::new(header, records)?, selected_phonemes: selected, skips })
}

fn skip(span: &PhonemeSpan, reason: &str) -> SkipRecord {
    SkipRecord { utterance_id: span.utterance_id.clone(), phoneme: span.phoneme.clone(), reason: reason.into() }
}

fn provenance(config: &IngestConfig, selected: &[String]) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert(
        "ingest".into(),
        json!({
            "top_phonemes": config.top_phonemes,
            "instances_per_phoneme": config.instances_per_phoneme,
            "z_max": config.z_max,
            "seed": config.seed,
            "selected_phonemes": selected,
        }),
    );
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::FrameMatrix;
    use nalgebra::DMatrix;

    fn utt(speaker: &str, t: usize, layers: u32) -> UtteranceFrames {
        UtteranceFrames {
            speaker_id: speaker.into(),
            layers: (0..layers)
                .map(|l| {
                    let m = DMatrix::from_fn(t, 2, |r, c| (r * (c + 1)) as f64 + f64::from(l));
                    (l, FrameMatrix::new("u", l, m).unwrap())
                })
                .collect(),
        }
    }

    fn span(u: &str, p: &str, s: usize, e: usize) -> PhonemeSpan {
        PhonemeSpan { utterance_id: u.into(), phoneme: p.into(), start_frame: s, end_frame: e }
    }

    #[test]
    fn two_utterances_three_phonemes_give_six_samples() {
        let utts: BTreeMap<_, _> = [("u1".to_string(), utt("s1", 12, 1)), ("u2".to_string(), utt("s2", 12, 1))].into();
        let spans: Vec<_> = ["u1", "u2"]
            .iter()
            .flat_map(|u| vec![span(u, "AA", 0, 4), span(u, "IY", 4, 8), span(u, "S", 8, 12)])
            .collect();
        let out = ingest_utterances(&utts, &spans, &BTreeMap::new(), &IngestConfig::default()).unwrap();
        assert_eq!(out.container.records.len(), 6);
        assert_eq!(out.selected_phonemes, vec!["AA", "IY", "S"]);
    }

    #[test]
    fn empty_alignment_gives_empty_container() {
        let utts: BTreeMap<_, _> = [("u1".to_string(), utt("s1", 5, 2))].into();
        let out = ingest_utterances(&utts, &[], &BTreeMap::new(), &IngestConfig::default()).unwrap();
        assert!(out.container.records.is_empty());
        assert_eq!(out.container.header.dim, 2);
    }

    #[test]
    fn caps_instances_and_keeps_same_occurrences_across_layers() {
        let utts: BTreeMap<_, _> = [("u1".to_string(), utt("s1", 200, 2))].into();
        let spans: Vec<_> = (0..50).map(|i| span("u1", "AA", 4 * i, 4 * i + 4)).collect();
        let cfg = IngestConfig { instances_per_phoneme: 30, z_max: f64::INFINITY, ..Default::default() };
        let out = ingest_utterances(&utts, &spans, &BTreeMap::new(), &cfg).unwrap();
        let l0: Vec<_> = out.container.records.iter().filter(|r| r.layer == 0).collect();
        let l1: Vec<_> = out.container.records.iter().filter(|r| r.layer == 1).collect();
        assert_eq!(l0.len(), 30);
        assert_eq!(l1.len(), 30);
        // layer 1 frames are layer 0 frames shifted by a constant, so after
        // utterance normalization the pooled vectors coincide
        for (a, b) in l0.iter().zip(&l1) {
            assert_eq!(a.vector, b.vector);
        }
    }

    #[test]
    fn spans_past_the_end_are_skipped() {
        let utts: BTreeMap<_, _> = [("u1".to_string(), utt("s1", 5, 1))].into();
        let spans = vec![span("u1", "AA", 0, 3), span("u1", "AA", 3, 9), span("zz", "AA", 0, 1)];
        let out = ingest_utterances(&utts, &spans, &BTreeMap::new(), &IngestConfig::default()).unwrap();
        assert_eq!(out.container.records.len(), 1);
        assert_eq!(out.skips.len(), 2);
    }
}
