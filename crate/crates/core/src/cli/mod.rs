//! Experiment orchestration: TOML configuration, validation, seeded
//! ensemble runs and digest-stamped output directories.

mod config;
mod experiments;
mod validate;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    ActionParams, ErgodicParams, ExperimentConfig, ExperimentKind, MomentParams, SimulateParams,
    SweepParams, SymplecticParams, DEFAULT_SEED,
};
pub use experiments::Artifact;
pub use validate::{has_failures, validate, Diagnostic, Status};

use crate::diagnostics::DiagnosticRecord;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const MANIFEST: &str = "manifest.json";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG_INVALID: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    /// SHA-256 of the resolved configuration without its output directory.
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub checks: Vec<DiagnosticRecord>,
    pub outputs: Vec<OutputDigest>,
    pub pass: bool,
}

/// Command-line overrides applied on top of a configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Applies `opts`, resolves defaults and checks every field.
pub fn prepare(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentConfig> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &opts.out {
        config.out = Some(out.clone());
    }
    let resolved = config.resolve()?;
    resolved.check_fields()?;
    Ok(resolved)
}

pub fn config_hash(resolved: &ExperimentConfig) -> String {
    let mut c = resolved.clone();
    c.out = None;
    sha256_hex(c.to_toml().as_bytes())
}

/// Runs the experiment and writes its outputs, the resolved configuration
/// and the manifest into the output directory. On any error the files
/// written by this call are removed again.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let started = unix_ms();
    let resolved = prepare(config, opts)?;
    let failures: Vec<String> = validate(&resolved)
        .into_iter()
        .filter(|d| d.status == Status::Fail)
        .map(|d| format!("{}: {}", d.check, d.message))
        .collect();
    if !failures.is_empty() {
        return Err(Error::config("validation", failures.join("; ")));
    }
    let ensemble = Ensemble::new(opts.threads);
    let outcome = experiments::execute(&resolved, &ensemble)?;
    let dir = resolved.out.clone().expect("resolved");
    let mut artifacts = outcome.artifacts;
    artifacts.push(Artifact {
        name: RESOLVED_CONFIG.into(),
        bytes: resolved.to_toml().into_bytes(),
    });
    let outputs = artifacts
        .iter()
        .map(|a| OutputDigest {
            file: a.name.clone(),
            sha256: sha256_hex(&a.bytes),
            bytes: a.bytes.len() as u64,
        })
        .collect();
    let pass = outcome.checks.iter().all(|c| c.pass);
    let manifest = RunManifest {
        kind: resolved.kind,
        config_hash: config_hash(&resolved),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: resolved.seed.expect("resolved"),
        threads: ensemble.threads(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        checks: outcome.checks,
        outputs,
        pass,
    };
    artifacts.push(Artifact {
        name: MANIFEST.into(),
        bytes: (serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
            .into_bytes(),
    });
    write_all(&dir, &artifacts)?;
    Ok(manifest)
}

fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    let created = !dir.exists();
    let mut written = Vec::new();
    let result = (|| -> Result<()> {
        fs::create_dir_all(dir)?;
        for a in artifacts {
            let path = dir.join(&a.name);
            fs::write(&path, &a.bytes)?;
            written.push(path);
        }
        Ok(())
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        if created {
            let _ = fs::remove_dir(dir);
        }
    }
    result
}

/// Recomputes the digest of every output listed in `dir/manifest.json`.
/// Returns the files whose content no longer matches.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{MANIFEST}: {e}")))?;
    let outputs: Vec<OutputDigest> = serde_json::from_value(value["outputs"].clone())
        .map_err(|e| Error::Format(format!("{MANIFEST}: outputs: {e}")))?;
    let mut bad = Vec::new();
    for o in outputs {
        match fs::read(dir.join(&o.file)) {
            Ok(bytes) if sha256_hex(&bytes) == o.sha256 => {}
            _ => bad.push(o.file),
        }
    }
    Ok(bad)
}

pub fn exit_code(result: &Result<RunManifest>) -> i32 {
    match result {
        Ok(m) if m.pass => EXIT_PASS,
        Ok(_) => EXIT_CHECK_FAILED,
        Err(Error::Config { .. }) => EXIT_CONFIG_INVALID,
        Err(_) => EXIT_CHECK_FAILED,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "stochham",
    version,
    about = "Marcus stochastic Hamiltonian experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML configuration; the built-in defaults of the subcommand when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: $STOCHHAM_THREADS, then all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Validate the configuration and print diagnostics without running.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate sample paths and write trajectories.
    Simulate(RunArgs),
    /// Symplectic defect under step refinement and first-integral drift.
    SymplecticCheck(RunArgs),
    /// Monte Carlo second moment of the noisy linear oscillator.
    OscillatorMoments(RunArgs),
    /// Generating-function relations of the stochastic action.
    ActionCheck(RunArgs),
    /// Time averages of cos² of an angle against the analytic law.
    ErgodicRate(RunArgs),
    /// Averaging-principle error over a list of ε.
    AveragingSweep(RunArgs),
    /// Print the resolved default configuration of an experiment kind.
    Defaults { kind: String },
    /// Check the digests listed in an output directory's manifest.
    Verify { dir: PathBuf },
}

fn parse_kind(name: &str) -> Option<ExperimentKind> {
    ExperimentKind::ALL.into_iter().find(|k| k.name() == name)
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    let (kind, args) = match cli.command {
        Command::Simulate(a) => (ExperimentKind::Simulate, a),
        Command::SymplecticCheck(a) => (ExperimentKind::SymplecticCheck, a),
        Command::OscillatorMoments(a) => (ExperimentKind::OscillatorMoments, a),
        Command::ActionCheck(a) => (ExperimentKind::ActionCheck, a),
        Command::ErgodicRate(a) => (ExperimentKind::ErgodicRate, a),
        Command::AveragingSweep(a) => (ExperimentKind::AveragingSweep, a),
        Command::Defaults { kind } => {
            let Some(kind) = parse_kind(&kind) else {
                eprintln!("error: unknown experiment kind {kind:?}");
                return EXIT_CONFIG_INVALID;
            };
            let resolved = ExperimentConfig::builtin(kind)
                .resolve()
                .expect("built-in defaults resolve");
            print!("{}", resolved.to_toml());
            return EXIT_PASS;
        }
        Command::Verify { dir } => {
            return match verify_manifest(&dir) {
                Ok(bad) if bad.is_empty() => {
                    println!("all digests match");
                    EXIT_PASS
                }
                Ok(bad) => {
                    for f in bad {
                        println!("mismatch: {f}");
                    }
                    EXIT_CHECK_FAILED
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_CHECK_FAILED
                }
            };
        }
    };
    let config = match &args.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) if c.kind == kind => c,
            Ok(c) => {
                eprintln!(
                    "error: {}: kind = \"{}\" but the subcommand is {kind}",
                    path.display(),
                    c.kind
                );
                return EXIT_CONFIG_INVALID;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG_INVALID;
            }
        },
        None => ExperimentConfig::builtin(kind),
    };
    let opts = RunOptions {
        seed: args.seed,
        out: args.out.clone(),
        threads: args.threads,
    };
    if args.check {
        let prepared = prepare(&config, &opts);
        let diags = match &prepared {
            Ok(c) => validate(c),
            Err(_) => validate(&config),
        };
        for d in &diags {
            let tag = match d.status {
                Status::Pass => "pass",
                Status::Warn => "warn",
                Status::Fail => "FAIL",
            };
            println!("[{tag}] {}: {}", d.check, d.message);
        }
        return if has_failures(&diags) || prepared.is_err() {
            EXIT_CONFIG_INVALID
        } else {
            EXIT_PASS
        };
    }
    let result = run(&config, &opts);
    match &result {
        Ok(m) => {
            for c in &m.checks {
                println!(
                    "[{}] {}: value {} (tolerance {})",
                    if c.pass { "pass" } else { "FAIL" },
                    c.check,
                    c.value,
                    c.tolerance
                );
            }
            println!("outputs in {}", config_out(&config, &opts).display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&result)
}

fn config_out(config: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    prepare(config, opts)
        .ok()
        .and_then(|c| c.out)
        .unwrap_or_default()
}

#[cfg(test)]
mod tests;
