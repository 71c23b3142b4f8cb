use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{info, warn};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{combine_hashes, AuditConfig};
use super::tables::{GapRow, ProbeF1Row, RelativeRow, TestRow, ALL};
use crate::cohorts::{Cohort, CohortPlan, DemographicVariable, Setting, SpeakerMetadata};
use crate::embedding_store::{EmbeddingContainer, PhonemeSample};
use crate::error::{Error, Result};
use crate::probes::{evaluate_probe, train_probe, EvalResult, LabeledSet, ProbeHyper};
use crate::stats::{fairness_gap, relative_to_balanced, relative_to_sg_average, t_one_sample, ScoreTag, Side};

/// Every table produced by a probe audit.
#[derive(Debug, Clone)]
pub struct ProbeAudit {
    pub f1: Vec<ProbeF1Row>,
    pub relative_avg: Vec<RelativeRow>,
    pub relative_balanced: Vec<RelativeRow>,
    pub tests: Vec<TestRow>,
    pub gaps: Vec<GapRow>,
    pub summary: Value,
}

pub(crate) const GAP_FORMULA: &str = "gap = 100 * (best - worst) / best";

/// Samples of each (layer, speaker).
pub(crate) struct SampleIndex<'a> {
    by_key: HashMap<u32, HashMap<&'a str, Vec<&'a PhonemeSample>>>,
    pub layers: BTreeSet<u32>,
    pub speakers: BTreeSet<&'a str>,
    pub phonemes: Vec<String>,
}

impl<'a> SampleIndex<'a> {
    pub fn new(samples: &'a [PhonemeSample]) -> Self {
        let mut by_key: HashMap<u32, HashMap<&str, Vec<&PhonemeSample>>> = HashMap::new();
        let mut phonemes = BTreeSet::new();
        for s in samples {
            by_key.entry(s.layer).or_default().entry(s.speaker_id.as_str()).or_default().push(s);
            phonemes.insert(s.phoneme.clone());
        }
        SampleIndex {
            layers: by_key.keys().copied().collect(),
            speakers: by_key.values().flat_map(|m| m.keys().copied()).collect(),
            by_key,
            phonemes: phonemes.into_iter().collect(),
        }
    }

    pub fn get(&self, layer: u32, speaker: &str) -> &[&'a PhonemeSample] {
        self.by_key.get(&layer).and_then(|m| m.get(speaker)).map_or(&[], Vec::as_slice)
    }

    /// Requested layers, or all layers when none are requested.
    pub fn select_layers(&self, requested: &[u32]) -> Result<Vec<u32>> {
        if requested.is_empty() {
            return Ok(self.layers.iter().copied().collect());
        }
        let missing: Vec<String> =
            requested.iter().filter(|l| !self.layers.contains(l)).map(ToString::to_string).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("layers not present in the container: {}", missing.join(", "))));
        }
        let set: BTreeSet<u32> = requested.iter().copied().collect();
        Ok(set.into_iter().collect())
    }
}

/// Speaker labels from the records themselves; all records of a speaker must agree.
pub fn speakers_from_container(container: &EmbeddingContainer) -> Result<Vec<SpeakerMetadata>> {
    let mut seen: BTreeMap<&str, &BTreeMap<String, String>> = BTreeMap::new();
    for r in &container.records {
        match seen.get(r.speaker_id.as_str()) {
            Some(g) if *g != &r.groups => {
                return Err(Error::DataQuality(format!("speaker {} carries inconsistent group labels", r.speaker_id)))
            }
            Some(_) => {}
            None => {
                seen.insert(&r.speaker_id, &r.groups);
            }
        }
    }
    Ok(seen.into_iter().map(|(id, g)| SpeakerMetadata::from_groups(id, g)).collect())
}

struct Task {
    variable: DemographicVariable,
    layer: u32,
    replication: usize,
    setting: Setting,
    cohort_hash: String,
    cohort: Cohort,
}

fn labeled<'a>(
    index: &SampleIndex<'a>,
    layer: u32,
    speakers: impl IntoIterator<Item = &'a String>,
    class_of: &BTreeMap<&str, usize>,
) -> LabeledSet {
    let mut set = LabeledSet::default();
    for spk in speakers {
        for s in index.get(layer, spk) {
            if let Some(&c) = class_of.get(s.phoneme.as_str()) {
                set.push(s.vector_f64(), c);
            }
        }
    }
    set
}

fn run_task(
    task: &Task,
    index: &SampleIndex<'_>,
    classes: &[String],
    class_of: &BTreeMap<&str, usize>,
    hyper: &ProbeHyper,
) -> Result<EvalResult> {
    let train = labeled(index, task.layer, &task.cohort.train_speakers, class_of);
    let model = train_probe(&train, classes, hyper)?;
    let test: BTreeMap<String, LabeledSet> = task
        .cohort
        .test_speakers_by_sg
        .iter()
        .map(|(sg, spk)| (sg.clone(), labeled(index, task.layer, spk, class_of)))
        .collect();
    evaluate_probe(&model, &test)
}

/// Trains and evaluates probes for every variable, layer, setting and replication.
pub fn probe_audit(
    container: &EmbeddingContainer,
    speakers: &[SpeakerMetadata],
    config: &AuditConfig,
) -> Result<ProbeAudit> {
    config.validate()?;
    let index = SampleIndex::new(&container.records);
    let layers = index.select_layers(&config.layers)?;
    let classes = index.phonemes.clone();
    let class_of: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let hyper = config.probe.hyper(config.seed);

    let mut tasks = Vec::new();
    let mut variables_meta = serde_json::Map::new();
    let mut test_set_of: BTreeMap<DemographicVariable, String> = BTreeMap::new();
    for (variable, sg_of) in config.speaker_groups(speakers)? {
        let sg_of: BTreeMap<String, String> =
            sg_of.into_iter().filter(|(spk, _)| index.speakers.contains(spk.as_str())).collect();
        let plan = CohortPlan::new(&sg_of, variable, config.seed, config.probe.test_fraction)?;
        let n = config.probe.speakers_per_sg.unwrap_or_else(|| plan.default_speakers_per_sg());
        let test_ids: Vec<String> =
            plan.test_sets().iter().flat_map(|(sg, s)| s.iter().map(move |x| format!("{sg}:{x}"))).collect();
        let test_hash = combine_hashes(test_ids.iter().map(String::as_str));
        let mut settings: Vec<Setting> = plan.groups().map(|g| Setting::SingleSg(g.to_string())).collect();
        settings.push(Setting::Balanced);
        for &layer in &layers {
            for replication in 0..config.probe.replications {
                for setting in &settings {
                    let spec = plan.spec(setting.clone(), Some(n), replication);
                    tasks.push(Task {
                        variable,
                        layer,
                        replication,
                        setting: setting.clone(),
                        cohort_hash: spec.spec_hash(),
                        cohort: plan.cohort(&spec)?,
                    });
                }
            }
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for g in sg_of.values() {
            *counts.entry(g.as_str()).or_default() += 1;
        }
        variables_meta.insert(
            variable.to_string(),
            json!({
                "speakers_per_group": counts,
                "test_speakers_per_group": plan.test_sets().iter().map(|(g, s)| (g.clone(), s.len())).collect::<BTreeMap<_, _>>(),
                "train_speakers_per_cohort": n,
                "balanced_remainder": "assigned to seeded-random groups per replication",
            }),
        );
        test_set_of.insert(variable, test_hash);
        info!("{variable}: {} groups, {n} training speakers per cohort", counts.len());
    }

    let results: Vec<Result<EvalResult>> =
        tasks.par_iter().map(|t| run_task(t, &index, &classes, &class_of, &hyper)).collect();

    let mut f1 = Vec::new();
    for (task, result) in tasks.iter().zip(results) {
        let eval = result?;
        let base = |sg: &str, phoneme: &str, precision: f64, recall: f64, f1: f64, support: usize| ProbeF1Row {
            variable: task.variable.to_string(),
            layer: task.layer,
            setting: task.setting.to_string(),
            replication: task.replication,
            cohort_hash: task.cohort_hash.clone(),
            sg: sg.to_string(),
            phoneme: phoneme.to_string(),
            precision,
            recall,
            f1,
            support,
        };
        for (sg, scores) in eval.per_sg.iter().map(|(k, v)| (k.as_str(), v)).chain([(ALL, &eval.overall)]) {
            let support: usize = scores.per_class.iter().map(|c| c.support).sum();
            let n_supported = scores.per_class.iter().filter(|c| c.support > 0).count().max(1) as f64;
            let mean_of = |f: fn(&crate::probes::ClassScore) -> f64| {
                scores.per_class.iter().filter(|c| c.support > 0).map(f).sum::<f64>() / n_supported
            };
            f1.push(base(sg, ALL, mean_of(|c| c.precision), mean_of(|c| c.recall), scores.macro_f1, support));
            if sg == ALL {
                continue;
            }
            for (class, c) in classes.iter().zip(&scores.per_class) {
                if c.support > 0 {
                    f1.push(base(sg, class, c.precision, c.recall, c.f1, c.support));
                }
            }
        }
    }

    let relative_avg = relative_to_average_rows(&f1)?;
    let relative_balanced = relative_to_balanced_rows(&f1, &test_set_of)?;
    let mut tests = test_rows("relative_avg", &relative_avg, config.alpha);
    tests.extend(test_rows("relative_balanced", &relative_balanced, config.alpha));
    let gaps = gap_rows(&f1);

    let summary = json!({
        "toolkit": concat!("phonaudit ", env!("CARGO_PKG_VERSION")),
        "command": "probe-audit",
        "config_hash": config.hash(),
        "config": config,
        "seed": config.seed,
        "layers": layers,
        "classes": classes,
        "variables": variables_meta,
        "probes_trained": tasks.len(),
        "gap_formula": GAP_FORMULA,
        "tests": "one-sample t-test of replicate relative F1 against 0; p_lower / p_upper are the one-sided p-values",
    });
    Ok(ProbeAudit { f1, relative_avg, relative_balanced, tests, gaps, summary })
}

fn is_macro(r: &ProbeF1Row) -> bool {
    r.phoneme == ALL && r.sg != ALL
}

fn relative_to_average_rows(f1: &[ProbeF1Row]) -> Result<Vec<RelativeRow>> {
    let mut groups: BTreeMap<(&str, u32, &str, usize), (String, BTreeMap<String, f64>)> = BTreeMap::new();
    for r in f1.iter().filter(|r| is_macro(r)) {
        let e = groups
            .entry((r.variable.as_str(), r.layer, r.setting.as_str(), r.replication))
            .or_insert_with(|| (r.cohort_hash.clone(), BTreeMap::new()));
        e.1.insert(r.sg.clone(), r.f1);
    }
    let mut out = Vec::new();
    for ((variable, layer, setting, replication), (hash, per_sg)) in groups {
        if per_sg.len() < 2 {
            warn!("{variable} layer {layer} {setting}: fewer than two test groups; no relative scores");
            continue;
        }
        for (sg, v) in relative_to_sg_average(&per_sg)? {
            out.push(RelativeRow {
                variable: variable.into(),
                layer,
                setting: setting.into(),
                replication,
                cohort_hash: hash.clone(),
                sg,
                phoneme: ALL.into(),
                relative_f1: v,
            });
        }
    }
    Ok(out)
}

fn relative_to_balanced_rows(
    f1: &[ProbeF1Row],
    test_set_of: &BTreeMap<DemographicVariable, String>,
) -> Result<Vec<RelativeRow>> {
    let balanced = Setting::Balanced.to_string();
    let test_set = |variable: &str| -> String {
        variable.parse::<DemographicVariable>().ok().and_then(|v| test_set_of.get(&v).cloned()).unwrap_or_default()
    };
    let base: BTreeMap<(&str, u32, usize, &str, &str), &ProbeF1Row> = f1
        .iter()
        .filter(|r| r.setting == balanced && r.sg != ALL)
        .map(|r| ((r.variable.as_str(), r.layer, r.replication, r.sg.as_str(), r.phoneme.as_str()), r))
        .collect();
    let mut out = Vec::new();
    for r in f1.iter().filter(|r| r.setting != balanced && r.sg != ALL) {
        let Some(b) = base.get(&(r.variable.as_str(), r.layer, r.replication, r.sg.as_str(), r.phoneme.as_str()))
        else {
            continue;
        };
        let tag = |row: &ProbeF1Row| ScoreTag {
            replication_index: row.replication,
            layer: row.layer,
            test_set: test_set(&row.variable),
        };
        out.push(RelativeRow {
            variable: r.variable.clone(),
            layer: r.layer,
            setting: r.setting.clone(),
            replication: r.replication,
            cohort_hash: combine_hashes([r.cohort_hash.as_str(), b.cohort_hash.as_str()]),
            sg: r.sg.clone(),
            phoneme: r.phoneme.clone(),
            relative_f1: relative_to_balanced(r.f1, &tag(r), b.f1, &tag(b))?,
        });
    }
    out.sort_by(|a, b| {
        (&a.variable, a.layer, &a.setting, &a.sg, &a.phoneme, a.replication).cmp(&(
            &b.variable,
            b.layer,
            &b.setting,
            &b.sg,
            &b.phoneme,
            b.replication,
        ))
    });
    Ok(out)
}

/// One-sample t-tests of replicate relative scores, one row per cell.
pub(crate) fn test_rows(analysis: &str, rows: &[RelativeRow], alpha: f64) -> Vec<TestRow> {
    let mut cells: BTreeMap<(&str, u32, &str, &str, &str), Vec<&RelativeRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.variable.as_str(), r.layer, r.setting.as_str(), r.sg.as_str(), r.phoneme.as_str()))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((variable, layer, setting, sg, phoneme), mut reps)| {
            reps.sort_by_key(|r| r.replication);
            let values: Vec<f64> = reps.iter().map(|r| r.relative_f1).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let (statistic, p_lower, p_upper, direction) = match t_one_sample(&values, 0.0, Side::Upper) {
                Ok(t) => {
                    let lower = Side::Lower.p_value(t.statistic, t.df);
                    let dir = if t.p_value < alpha {
                        "above"
                    } else if lower < alpha {
                        "below"
                    } else {
                        ""
                    };
                    (Some(t.statistic), Some(lower), Some(t.p_value), dir.to_string())
                }
                Err(_) => (None, None, None, "degenerate".to_string()),
            };
            TestRow {
                analysis: analysis.into(),
                variable: variable.into(),
                layer,
                setting: setting.into(),
                sg: sg.into(),
                phoneme: phoneme.into(),
                replications: values.len(),
                cohort_hash: combine_hashes(reps.iter().map(|r| r.cohort_hash.as_str())),
                mean,
                statistic,
                p_lower,
                p_upper,
                direction,
            }
        })
        .collect()
}

fn gap_rows(f1: &[ProbeF1Row]) -> Vec<GapRow> {
    type Cell = (Vec<String>, BTreeMap<String, Vec<f64>>);
    let mut cells: BTreeMap<(&str, u32, &str), Cell> = BTreeMap::new();
    for r in f1.iter().filter(|r| is_macro(r)) {
        let e = cells.entry((r.variable.as_str(), r.layer, r.setting.as_str())).or_default();
        if !e.0.contains(&r.cohort_hash) {
            e.0.push(r.cohort_hash.clone());
        }
        e.1.entry(r.sg.clone()).or_default().push(r.f1);
    }
    let mut out = Vec::new();
    for ((variable, layer, setting), (hashes, per_sg)) in cells {
        let replications = per_sg.values().map(Vec::len).max().unwrap_or(0);
        let means: BTreeMap<String, f64> =
            per_sg.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect();
        match fairness_gap(variable, &means) {
            Ok(g) => out.push(GapRow {
                variable: variable.into(),
                layer,
                setting: setting.into(),
                replications,
                cohort_hash: combine_hashes(hashes.iter().map(String::as_str)),
                best_sg: g.best_sg,
                worst_sg: g.worst_sg,
                best: g.best,
                worst: g.worst,
                gap: g.gap,
            }),
            Err(e) => warn!("{variable} layer {layer} {setting}: no gap ({e})"),
        }
    }
    out
}
