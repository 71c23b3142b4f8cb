//! Speaker-group fairness diagnostics for phoneme-level speech embeddings.
//!
//! The crate covers the full audit pipeline: ingesting frame dumps into pooled
//! phoneme samples, grouping speakers, measuring per-group representation
//! spread, training linear phoneme probes, and testing group differences.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod cohorts;
pub mod embedding_store;
pub mod error;
pub mod geometry;
mod numeric;
pub mod probes;
pub mod report;
pub mod seed;
pub mod stats;
pub mod synth;

pub use cohorts::{
    aggregate_groups, build_cohort, mode_filter, AggregationRule, Assignment, Cohort, CohortPlan, CohortSpec,
    DemographicVariable, LabeledSpeaker, ModeProfile, ProfileValue, Setting, SpeakerMetadata,
};
pub use embedding_store::{EmbeddingContainer, FrameMatrix, PhonemeSample, PhonemeSpan};
pub use error::{Error, ErrorClass, Result};
