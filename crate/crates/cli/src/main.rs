use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phonaudit::report::{
    cmd_compare, cmd_correlate, cmd_ingest, cmd_probe_audit, cmd_synth, cmd_variance_audit, AuditConfig,
};
use phonaudit::stats::ALPHA;
use phonaudit::synth::{ScenarioOverrides, SCENARIOS};
use phonaudit::{DemographicVariable, Error, ErrorClass};

/// Speaker-group fairness diagnostics for phoneme-level speech embeddings.
#[derive(Debug, Parser)]
#[command(name = "phonaudit", version, about)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log more (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// TOML audit configuration.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Layers to audit, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<u32>>,

    /// Demographic variable(s) to audit (default: every variable with two or more groups).
    #[arg(long, value_delimiter = ',')]
    variable: Option<Vec<DemographicVariable>>,
}

impl AuditArgs {
    fn resolve(&self) -> phonaudit::Result<AuditConfig> {
        let mut config = match &self.config {
            Some(path) => AuditConfig::load(path)?,
            None => AuditConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(layers) = &self.layers {
            config.layers = layers.clone();
        }
        if let Some(vars) = &self.variable {
            config.variables = vars.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pool aligned phoneme spans from frame dumps into an embedding container.
    Ingest {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        spans: PathBuf,
        /// Speaker metadata CSV whose labels are stored with each sample.
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        audit: AuditArgs,
    },
    /// Train phoneme probes per training setting and score them per speaker group.
    ProbeAudit {
        #[arg(long)]
        container: PathBuf,
        /// Speaker metadata CSV (default: labels stored in the container).
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        audit: AuditArgs,
    },
    /// Measure per-speaker representation spread and compare speaker groups.
    VarianceAudit {
        #[arg(long)]
        container: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        audit: AuditArgs,
    },
    /// Correlate KNN distance with probe F1 across groups and phonemes.
    Correlate {
        /// Output directory of probe-audit.
        #[arg(long)]
        probe: PathBuf,
        /// Output directory of variance-audit.
        #[arg(long)]
        variance: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cellwise differences between two audit output directories (b minus a).
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ALPHA)]
        alpha: f64,
    },
    /// Write a synthetic container with known group effects.
    Synth {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SCENARIOS))]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        speakers_per_group: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        speaker_jitter: Option<f64>,
        #[arg(long)]
        layers: Option<u32>,
        /// Variable that carries the synthetic groups.
        #[arg(long)]
        variable: Option<DemographicVariable>,
    },
}

fn run(command: Command) -> phonaudit::Result<()> {
    match command {
        Command::Ingest { frames, spans, metadata, out, audit } => {
            let path = cmd_ingest(&frames, &spans, metadata.as_deref(), &out, &audit.resolve()?)?;
            println!("{}", path.display());
        }
        Command::ProbeAudit { container, metadata, out, audit } => {
            cmd_probe_audit(&container, metadata.as_deref(), &out, &audit.resolve()?)?;
            print_out(&out);
        }
        Command::VarianceAudit { container, metadata, out, audit } => {
            cmd_variance_audit(&container, metadata.as_deref(), &out, &audit.resolve()?)?;
            print_out(&out);
        }
        Command::Correlate { probe, variance, out } => {
            cmd_correlate(&probe, &variance, &out)?;
            print_out(&out);
        }
        Command::Compare { a, b, out, alpha } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
            }
            cmd_compare(&a, &b, &out, alpha)?;
            print_out(&out);
        }
        Command::Synth { scenario, out, seed, dim, speakers_per_group, samples, speaker_jitter, layers, variable } => {
            let overrides = ScenarioOverrides {
                seed,
                dim,
                speakers_per_group,
                samples_per_speaker_phoneme: samples,
                speaker_jitter,
                layers,
                variable,
            };
            cmd_synth(&scenario, &overrides, &out)?;
            print_out(&out);
        }
    }
    Ok(())
}

fn print_out(out: &Path) {
    println!("{}", out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = ["warn", "info", "debug"][usize::from(cli.verbose.min(2))];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Validation => ExitCode::from(2),
                ErrorClass::DataQuality => ExitCode::from(3),
            }
        }
    }
}
