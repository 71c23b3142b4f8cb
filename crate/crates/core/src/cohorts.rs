//! Speaker-group labelling and probe-training cohorts.
//!
//! Raw demographic labels are first merged into speaker groups (SGs) by
//! [`aggregate_groups`]. [`mode_filter`] then keeps only speakers that match the
//! modal profile on every other variable, so one variable is studied at a time.
//! Finally [`CohortPlan`] fixes a per-SG held-out test set and draws training
//! speakers for the single-SG and balanced settings across replications.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::SeedMixer;

/// Number of replications per probe experiment.
pub const REPLICATIONS: usize = 5;

/// Default share of each SG's speakers held out for testing.
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemographicVariable {
    Gender,
    Age,
    Dialect,
    Ethnicity,
}

impl DemographicVariable {
    pub const ALL: [DemographicVariable; 4] = [
        DemographicVariable::Gender,
        DemographicVariable::Age,
        DemographicVariable::Dialect,
        DemographicVariable::Ethnicity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DemographicVariable::Gender => "gender",
            DemographicVariable::Age => "age",
            DemographicVariable::Dialect => "dialect",
            DemographicVariable::Ethnicity => "ethnicity",
        }
    }
}

impl fmt::Display for DemographicVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DemographicVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DemographicVariable::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown demographic variable {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpeakerMetadata {
    pub speaker_id: String,
    pub gender: Option<String>,
    pub age: Option<String>,
    pub dialect: Option<String>,
    pub ethnicity: Option<String>,
}

impl SpeakerMetadata {
    pub fn label(&self, var: DemographicVariable) -> Option<&str> {
        match var {
            DemographicVariable::Gender => self.gender.as_deref(),
            DemographicVariable::Age => self.age.as_deref(),
            DemographicVariable::Dialect => self.dialect.as_deref(),
            DemographicVariable::Ethnicity => self.ethnicity.as_deref(),
        }
    }

    fn slot(&mut self, var: DemographicVariable) -> &mut Option<String> {
        match var {
            DemographicVariable::Gender => &mut self.gender,
            DemographicVariable::Age => &mut self.age,
            DemographicVariable::Dialect => &mut self.dialect,
            DemographicVariable::Ethnicity => &mut self.ethnicity,
        }
    }

    /// Labels as inlined in container records (absent labels omitted).
    pub fn to_groups(&self) -> BTreeMap<String, String> {
        DemographicVariable::ALL
            .into_iter()
            .filter_map(|v| self.label(v).map(|l| (v.as_str().to_string(), l.to_string())))
            .collect()
    }

    pub fn from_groups(speaker_id: &str, groups: &BTreeMap<String, String>) -> Self {
        let mut m = SpeakerMetadata { speaker_id: speaker_id.to_string(), ..Default::default() };
        for v in DemographicVariable::ALL {
            *m.slot(v) = groups.get(v.as_str()).cloned();
        }
        m
    }
}

const METADATA_KEYS: [&str; 5] = ["speaker_id", "gender", "age", "dialect", "ethnicity"];

/// Reads the speaker table; an empty field means the label is absent.
pub fn read_speaker_metadata(path: impl AsRef<Path>) -> Result<Vec<SpeakerMetadata>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| Error::parse(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != METADATA_KEYS {
        return Err(Error::parse(path, format!("expected header {}", METADATA_KEYS.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        let opt = |i: usize| rec.get(i).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string);
        let speaker_id = opt(0).ok_or_else(|| {
            Error::parse(path, format!("line {}: empty speaker_id", rec.position().map_or(0, |p| p.line())))
        })?;
        out.push(SpeakerMetadata { speaker_id, gender: opt(1), age: opt(2), dialect: opt(3), ethnicity: opt(4) });
    }
    Ok(out)
}

pub fn write_speaker_metadata<W: Write>(out: W, speakers: &[SpeakerMetadata]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(METADATA_KEYS).map_err(wrap)?;
    for s in speakers {
        let f = |o: &Option<String>| o.clone().unwrap_or_default();
        w.write_record([s.speaker_id.clone(), f(&s.gender), f(&s.age), f(&s.dialect), f(&s.ethnicity)])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Maps the raw labels of one variable onto aggregated SG labels.
///
/// An empty `merge` map means identity labelling; a non-empty one must cover
/// every raw label that is not dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationRule {
    pub variable: DemographicVariable,
    #[serde(default)]
    pub merge: BTreeMap<String, String>,
    #[serde(default)]
    pub drop: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Assignment {
    Group(String),
    /// No raw label recorded for this variable.
    Absent,
    /// Raw label dropped by an aggregation rule.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSpeaker {
    pub speaker_id: String,
    pub assignments: BTreeMap<DemographicVariable, Assignment>,
}

impl LabeledSpeaker {
    pub fn group(&self, var: DemographicVariable) -> Option<&str> {
        match self.assignments.get(&var) {
            Some(Assignment::Group(g)) => Some(g),
            _ => None,
        }
    }
}

/// Applies the aggregation rules to every speaker; output is sorted by speaker id.
pub fn aggregate_groups(metadata: &[SpeakerMetadata], rules: &[AggregationRule]) -> Result<Vec<LabeledSpeaker>> {
    let mut by_var: BTreeMap<DemographicVariable, &AggregationRule> = BTreeMap::new();
    for r in rules {
        if by_var.insert(r.variable, r).is_some() {
            return Err(Error::Config(format!("two aggregation rules for {}", r.variable)));
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(metadata.len());
    for m in metadata {
        if !seen.insert(m.speaker_id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate speaker id {}", m.speaker_id)));
        }
        let mut assignments = BTreeMap::new();
        for var in DemographicVariable::ALL {
            let a = match (m.label(var), by_var.get(&var)) {
                (None, _) => Assignment::Absent,
                (Some(raw), None) => Assignment::Group(raw.to_string()),
                (Some(raw), Some(rule)) => {
                    if rule.drop.contains(raw) {
                        Assignment::Excluded
                    } else if rule.merge.is_empty() {
                        Assignment::Group(raw.to_string())
                    } else if let Some(sg) = rule.merge.get(raw) {
                        Assignment::Group(sg.clone())
                    } else {
                        return Err(Error::UnknownLabel { variable: var.to_string(), label: raw.to_string() });
                    }
                }
            };
            assignments.insert(var, a);
        }
        out.push(LabeledSpeaker { speaker_id: m.speaker_id.clone(), assignments });
    }
    out.sort_by(|a, b| a.speaker_id.cmp(&b.speaker_id));
    Ok(out)
}

/// A required value for one non-target variable in a mode profile.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ProfileValue {
    Absent,
    Label(String),
}

impl ProfileValue {
    /// Config spelling: an empty string means "label absent".
    pub fn parse(s: &str) -> Self {
        if s.is_empty() {
            ProfileValue::Absent
        } else {
            ProfileValue::Label(s.to_string())
        }
    }

    fn matches(&self, a: Option<&Assignment>) -> bool {
        match (self, a) {
            (ProfileValue::Absent, Some(Assignment::Absent) | None) => true,
            (ProfileValue::Label(l), Some(Assignment::Group(g))) => l == g,
            _ => false,
        }
    }
}

pub type ModeProfile = BTreeMap<DemographicVariable, ProfileValue>;

/// Keeps speakers that have an SG for `variable` and match `profile` on every
/// variable the profile names. Returns speaker → SG label.
///
/// Variables missing from the profile are left unconstrained.
pub fn mode_filter(
    speakers: &[LabeledSpeaker],
    variable: DemographicVariable,
    profile: &ModeProfile,
) -> Result<BTreeMap<String, String>> {
    if profile.contains_key(&variable) {
        return Err(Error::Config(format!("mode profile for {variable} constrains {variable} itself")));
    }
    let kept: BTreeMap<String, String> = speakers
        .iter()
        .filter(|s| profile.iter().all(|(v, want)| want.matches(s.assignments.get(v))))
        .filter_map(|s| s.group(variable).map(|g| (s.speaker_id.clone(), g.to_string())))
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(format!("no speaker matches the mode profile for {variable}; review the profile")));
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    SingleSg(String),
    Balanced,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::SingleSg(g) => write!(f, "single:{g}"),
            Setting::Balanced => f.write_str("balanced"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub variable: DemographicVariable,
    pub setting: Setting,
    /// Training speakers per cohort; `None` uses the smallest SG's training pool.
    pub speakers_per_sg: Option<usize>,
    pub replication_seed: u64,
    pub replication_index: usize,
    pub test_fraction: f64,
}

impl CohortSpec {
    /// Short stable hash of this cohort spec, carried by every report row.
    pub fn spec_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("cohort spec serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    pub train_speakers: BTreeSet<String>,
    /// Training speakers drawn from each SG.
    pub train_by_sg: BTreeMap<String, BTreeSet<String>>,
    pub test_speakers_by_sg: BTreeMap<String, BTreeSet<String>>,
}

/// The fixed part of one experiment: per-SG test reserves and shuffled
/// training pools. Cohorts for any setting and replication derive from it.
#[derive(Debug, Clone)]
pub struct CohortPlan {
    variable: DemographicVariable,
    seed: u64,
    test_fraction: f64,
    test: BTreeMap<String, BTreeSet<String>>,
    pools: BTreeMap<String, Vec<String>>,
}

impl CohortPlan {
    pub fn new(
        sg_of: &BTreeMap<String, String>,
        variable: DemographicVariable,
        seed: u64,
        test_fraction: f64,
    ) -> Result<Self> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
        }
        let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (spk, sg) in sg_of {
            members.entry(sg.clone()).or_default().push(spk.clone());
        }
        if members.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "{variable} needs at least two speaker groups, found {}",
                members.len()
            )));
        }
        let deficits: Vec<_> =
            members.iter().filter(|(_, m)| m.len() < 2).map(|(sg, m)| (sg.clone(), m.len(), 2)).collect();
        if !deficits.is_empty() {
            return Err(Error::InsufficientSpeakers(deficits));
        }
        let mut test = BTreeMap::new();
        let mut pools = BTreeMap::new();
        for (sg, mut m) in members {
            let mut rng = SeedMixer::new(seed).str(variable.as_str()).str("split").str(&sg).rng();
            m.shuffle(&mut rng);
            let n_test = ((m.len() as f64 * test_fraction).round() as usize).clamp(1, m.len() - 1);
            let pool = m.split_off(n_test);
            test.insert(sg.clone(), m.into_iter().collect());
            pools.insert(sg, pool);
        }
        Ok(CohortPlan { variable, seed, test_fraction, test, pools })
    }

    pub fn groups(&self) -> impl Iterator<Item = &str> {
        self.pools.keys().map(String::as_str)
    }

    pub fn test_sets(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.test
    }

    /// Smallest training pool over SGs.
    pub fn default_speakers_per_sg(&self) -> usize {
        self.pools.values().map(Vec::len).min().unwrap_or(0)
    }

    pub fn spec(&self, setting: Setting, speakers_per_sg: Option<usize>, replication_index: usize) -> CohortSpec {
        CohortSpec {
            variable: self.variable,
            setting,
            speakers_per_sg,
            replication_seed: self.seed,
            replication_index,
            test_fraction: self.test_fraction,
        }
    }

    pub fn cohort(&self, spec: &CohortSpec) -> Result<Cohort> {
        if spec.variable != self.variable
            || spec.replication_seed != self.seed
            || spec.test_fraction != self.test_fraction
        {
            return Err(Error::InvalidInput("cohort spec does not belong to this plan".into()));
        }
        let n = spec.speakers_per_sg.unwrap_or_else(|| self.default_speakers_per_sg());
        if n == 0 {
            return Err(Error::Config("speakers_per_sg must be at least 1".into()));
        }
        let deficits: Vec<_> = self
            .pools
            .iter()
            .filter(|(_, p)| p.len() < n)
            .map(|(sg, p)| (sg.clone(), p.len() + self.test[sg].len(), n + self.test[sg].len()))
            .collect();
        if !deficits.is_empty() {
            return Err(Error::InsufficientSpeakers(deficits));
        }
        if let Setting::SingleSg(g) = &spec.setting {
            if !self.pools.contains_key(g) {
                return Err(Error::Config(format!("unknown speaker group {g:?} for {}", self.variable)));
            }
        }

        let mut train_by_sg = BTreeMap::new();
        for sg in self.pools.keys() {
            let picked = self.draw(&spec.setting, sg, n, spec.replication_index);
            if !picked.is_empty() {
                train_by_sg.insert(sg.clone(), picked);
            }
        }
        let train_speakers = train_by_sg.values().flatten().cloned().collect();
        Ok(Cohort { train_speakers, train_by_sg, test_speakers_by_sg: self.test.clone() })
    }

    /// How many training speakers `sg` contributes under `setting` in replication `rep`.
    fn allocation(&self, setting: &Setting, sg: &str, n: usize, rep: usize) -> usize {
        match setting {
            Setting::SingleSg(g) => {
                if g == sg {
                    n
                } else {
                    0
                }
            }
            Setting::Balanced => {
                let g = self.pools.len();
                let (base, rem) = (n / g, n % g);
                if rem == 0 {
                    return base;
                }
                let mut order: Vec<&String> = self.pools.keys().collect();
                let mut rng =
                    SeedMixer::new(self.seed).str(self.variable.as_str()).str("remainder").num(rep as u64).rng();
                order.shuffle(&mut rng);
                base + usize::from(order[..rem].iter().any(|s| s.as_str() == sg))
            }
        }
    }

    fn draw(&self, setting: &Setting, sg: &str, n: usize, rep: usize) -> BTreeSet<String> {
        let count = self.allocation(setting, sg, n, rep);
        if count == 0 {
            return BTreeSet::new();
        }
        let pool = &self.pools[sg];
        let offset: usize = (0..rep).map(|r| self.allocation(setting, sg, n, r)).sum();
        if offset + count <= pool.len() {
            return pool[offset..offset + count].iter().cloned().collect();
        }
        // supply exhausted: resample without replacement within this replication
        let mut rng = SeedMixer::new(self.seed)
            .str(self.variable.as_str())
            .str("resample")
            .str(&setting.to_string())
            .str(sg)
            .num(rep as u64)
            .rng();
        index::sample(&mut rng, pool.len(), count).into_iter().map(|i| pool[i].clone()).collect()
    }
}

/// Builds a single cohort; prefer [`CohortPlan`] when drawing many.
pub fn build_cohort(sg_of: &BTreeMap<String, String>, spec: &CohortSpec) -> Result<Cohort> {
    CohortPlan::new(sg_of, spec.variable, spec.replication_seed, spec.test_fraction)?.cohort(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, g: Option<&str>, a: Option<&str>, d: Option<&str>, e: Option<&str>) -> SpeakerMetadata {
        SpeakerMetadata {
            speaker_id: id.into(),
            gender: g.map(Into::into),
            age: a.map(Into::into),
            dialect: d.map(Into::into),
            ethnicity: e.map(Into::into),
        }
    }

    fn groups(sizes: &[(&str, usize)]) -> BTreeMap<String, String> {
        sizes.iter().flat_map(|(sg, n)| (0..*n).map(move |i| (format!("{sg}{i:03}"), sg.to_string()))).collect()
    }

    fn dialect_rule() -> AggregationRule {
        let usa = ["Inland-North", "Midland", "New-England", "Southern", "Western", "Mid-Atlantic"];
        let mut merge: BTreeMap<String, String> = usa.iter().map(|d| (d.to_string(), "Native".to_string())).collect();
        merge.insert("Latino".into(), "Latino".into());
        merge.insert("Asian".into(), "Asian".into());
        AggregationRule { variable: DemographicVariable::Dialect, merge, drop: BTreeSet::new() }
    }

    #[test]
    fn six_usa_dialects_become_native() {
        let usa = ["Inland-North", "Midland", "New-England", "Southern", "Western", "Mid-Atlantic"];
        let md: Vec<_> = usa
            .iter()
            .enumerate()
            .map(|(i, d)| meta(&format!("s{i}"), Some("female"), Some("adult"), Some(d), None))
            .collect();
        let out = aggregate_groups(&md, &[dialect_rule()]).unwrap();
        assert!(out.iter().all(|s| s.group(DemographicVariable::Dialect) == Some("Native")));
    }

    #[test]
    fn identity_without_merge_map() {
        let md = vec![meta("a", Some("male"), Some("adult"), Some("Native"), None)];
        let rule =
            AggregationRule { variable: DemographicVariable::Gender, merge: BTreeMap::new(), drop: BTreeSet::new() };
        let out = aggregate_groups(&md, &[rule]).unwrap();
        assert_eq!(out[0].group(DemographicVariable::Gender), Some("male"));
        assert_eq!(out[0].group(DemographicVariable::Dialect), Some("Native"));
        assert_eq!(out[0].assignments[&DemographicVariable::Ethnicity], Assignment::Absent);
    }

    #[test]
    fn dropped_age_is_excluded() {
        let md = vec![meta("old", Some("male"), Some("55-100"), Some("Native"), None)];
        let mut merge = BTreeMap::new();
        merge.insert("18-22".to_string(), "adult".to_string());
        let rule = AggregationRule { variable: DemographicVariable::Age, merge, drop: ["55-100".to_string()].into() };
        let out = aggregate_groups(&md, &[rule]).unwrap();
        assert_eq!(out[0].assignments[&DemographicVariable::Age], Assignment::Excluded);
        let profile: ModeProfile = [(DemographicVariable::Dialect, ProfileValue::parse("Native"))].into();
        assert!(mode_filter(&out, DemographicVariable::Age, &profile).is_err());
    }

    #[test]
    fn unknown_label_is_named() {
        let md = vec![meta("x", None, None, Some("Martian"), None)];
        let err = aggregate_groups(&md, &[dialect_rule()]).unwrap_err();
        assert!(err.to_string().contains("Martian"), "{err}");
    }

    #[test]
    fn gender_mode_filter_removes_children_non_native_and_ethnicity() {
        let md = vec![
            meta("keep1", Some("female"), Some("adult"), Some("Native"), None),
            meta("keep2", Some("male"), Some("adult"), Some("Native"), None),
            meta("child", Some("male"), Some("child"), Some("Native"), None),
            meta("latino", Some("female"), Some("adult"), Some("Latino"), None),
            meta("eth", Some("female"), Some("adult"), Some("Native"), Some("Caucasian")),
        ];
        let table = aggregate_groups(&md, &[]).unwrap();
        let profile: ModeProfile = [
            (DemographicVariable::Age, ProfileValue::parse("adult")),
            (DemographicVariable::Dialect, ProfileValue::parse("Native")),
            (DemographicVariable::Ethnicity, ProfileValue::parse("")),
        ]
        .into();
        let kept = mode_filter(&table, DemographicVariable::Gender, &profile).unwrap();
        assert_eq!(kept.keys().collect::<Vec<_>>(), vec!["keep1", "keep2"]);
    }

    #[test]
    fn dialect_mode_filter_excludes_children_only() {
        let md = vec![
            meta("a", Some("female"), Some("adult"), Some("Native"), None),
            meta("b", Some("male"), Some("child"), Some("Latino"), None),
            meta("c", Some("male"), Some("adult"), Some("Asian"), Some("Caucasian")),
        ];
        let table = aggregate_groups(&md, &[]).unwrap();
        let profile: ModeProfile = [(DemographicVariable::Age, ProfileValue::parse("adult"))].into();
        let kept = mode_filter(&table, DemographicVariable::Dialect, &profile).unwrap();
        assert_eq!(kept.keys().collect::<Vec<_>>(), vec!["a", "c"]);
    }

    #[test]
    fn matching_profile_is_identity() {
        let md: Vec<_> = (0..4)
            .map(|i| meta(&format!("s{i}"), Some(["f", "m"][i % 2]), Some("adult"), Some("Native"), None))
            .collect();
        let table = aggregate_groups(&md, &[]).unwrap();
        let profile: ModeProfile = [
            (DemographicVariable::Age, ProfileValue::parse("adult")),
            (DemographicVariable::Dialect, ProfileValue::parse("Native")),
            (DemographicVariable::Ethnicity, ProfileValue::Absent),
        ]
        .into();
        assert_eq!(mode_filter(&table, DemographicVariable::Gender, &profile).unwrap().len(), 4);
    }

    #[test]
    fn balanced_and_single_have_equal_totals() {
        let sg = groups(&[("A", 10), ("B", 10)]);
        let plan = CohortPlan::new(&sg, DemographicVariable::Gender, 11, DEFAULT_TEST_FRACTION).unwrap();
        let bal = plan.cohort(&plan.spec(Setting::Balanced, Some(6), 0)).unwrap();
        let single = plan.cohort(&plan.spec(Setting::SingleSg("A".into()), Some(6), 0)).unwrap();
        assert_eq!(bal.train_by_sg["A"].len(), 3);
        assert_eq!(bal.train_by_sg["B"].len(), 3);
        assert_eq!(single.train_by_sg["A"].len(), 6);
        assert!(!single.train_by_sg.contains_key("B"));
        assert_eq!(bal.train_speakers.len(), 6);
        assert_eq!(single.train_speakers.len(), 6);
        assert_eq!(bal.test_speakers_by_sg, single.test_speakers_by_sg);
        for c in [&bal, &single] {
            for t in c.test_speakers_by_sg.values() {
                assert!(!t.is_empty());
                assert!(t.is_disjoint(&c.train_speakers));
            }
        }
    }

    #[test]
    fn odd_split_gives_remainder_to_one_group() {
        let sg = groups(&[("A", 10), ("B", 10), ("C", 10)]);
        let plan = CohortPlan::new(&sg, DemographicVariable::Dialect, 3, DEFAULT_TEST_FRACTION).unwrap();
        for rep in 0..REPLICATIONS {
            let c = plan.cohort(&plan.spec(Setting::Balanced, Some(7), rep)).unwrap();
            let mut sizes: Vec<usize> = c.train_by_sg.values().map(BTreeSet::len).collect();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![2, 2, 3]);
        }
    }

    #[test]
    fn replications_are_disjoint_when_supply_allows() {
        let sg = groups(&[("A", 30), ("B", 30)]);
        let plan = CohortPlan::new(&sg, DemographicVariable::Gender, 5, DEFAULT_TEST_FRACTION).unwrap();
        let cohorts: Vec<_> =
            (0..REPLICATIONS).map(|r| plan.cohort(&plan.spec(Setting::Balanced, Some(6), r)).unwrap()).collect();
        for i in 0..REPLICATIONS {
            for j in i + 1..REPLICATIONS {
                assert!(cohorts[i].train_speakers.is_disjoint(&cohorts[j].train_speakers), "{i} vs {j}");
            }
        }
    }

    #[test]
    fn exhausted_supply_resamples() {
        let sg = groups(&[("A", 10), ("B", 10)]);
        let plan = CohortPlan::new(&sg, DemographicVariable::Gender, 5, DEFAULT_TEST_FRACTION).unwrap();
        for r in 0..REPLICATIONS {
            let c = plan.cohort(&plan.spec(Setting::SingleSg("B".into()), Some(6), r)).unwrap();
            assert_eq!(c.train_speakers.len(), 6);
            assert!(c.train_speakers.iter().all(|s| s.starts_with('B')));
        }
    }

    #[test]
    fn insufficient_speakers_reports_deficits() {
        let sg = groups(&[("A", 10), ("B", 5)]);
        let spec = CohortSpec {
            variable: DemographicVariable::Age,
            setting: Setting::Balanced,
            speakers_per_sg: Some(6),
            replication_seed: 1,
            replication_index: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
        };
        match build_cohort(&sg, &spec) {
            Err(Error::InsufficientSpeakers(d)) => {
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].0, "B");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_speakers_per_sg_is_smallest_pool() {
        let sg = groups(&[("A", 10), ("B", 20)]);
        let plan = CohortPlan::new(&sg, DemographicVariable::Gender, 0, DEFAULT_TEST_FRACTION).unwrap();
        assert_eq!(plan.default_speakers_per_sg(), 8);
        let c = plan.cohort(&plan.spec(Setting::SingleSg("B".into()), None, 0)).unwrap();
        assert_eq!(c.train_speakers.len(), 8);
    }

    #[test]
    fn spec_hash_is_stable_and_distinguishes() {
        let sg = groups(&[("A", 10), ("B", 10)]);
        let plan = CohortPlan::new(&sg, DemographicVariable::Gender, 0, DEFAULT_TEST_FRACTION).unwrap();
        let a = plan.spec(Setting::Balanced, Some(4), 0);
        let b = plan.spec(Setting::Balanced, Some(4), 1);
        assert_eq!(a.spec_hash(), a.clone().spec_hash());
        assert_ne!(a.spec_hash(), b.spec_hash());
        assert_eq!(a.spec_hash().len(), 16);
    }
}
