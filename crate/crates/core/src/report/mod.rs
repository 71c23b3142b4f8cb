//! Audit pipelines and the tables they emit.

mod analysis;
mod commands;
mod config;
mod probe;
pub mod tables;
mod variance;

pub use analysis::{
    compare_tables, correlate, knn_replicates, probe_replicates, CorrelationSummary, CORRELATION_ALPHA,
};
pub use commands::{
    cmd_compare, cmd_correlate, cmd_ingest, cmd_probe_audit, cmd_synth, cmd_variance_audit, load_container,
};
pub use config::{AuditConfig, IngestSettings, ProbeConfig};
pub use probe::{probe_audit, speakers_from_container, ProbeAudit};
pub use variance::{variance_report, VarianceReport};
