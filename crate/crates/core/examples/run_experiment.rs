//! Runs an experiment from a TOML configuration (or the built-in defaults of
//! a kind) through the same orchestration as the `stochham` binary.
//!
//! cargo run --release --example run_experiment -- [config.toml | kind] [out-dir]

use std::path::PathBuf;

use stochastic_hamiltonian::cli::{run, validate, ExperimentConfig, ExperimentKind, RunOptions};

fn main() -> stochastic_hamiltonian::Result<()> {
    let arg = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "action-check".into());
    let out = std::env::args().nth(2).map(PathBuf::from);
    let config = match ExperimentKind::ALL.into_iter().find(|k| k.name() == arg) {
        Some(kind) => ExperimentConfig::builtin(kind),
        None => ExperimentConfig::load(arg.as_ref())?,
    };
    for d in validate(&config) {
        println!("{:?} {}: {}", d.status, d.check, d.message);
    }
    let manifest = run(
        &config,
        &RunOptions {
            out,
            ..Default::default()
        },
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&manifest).expect("manifest serializes")
    );
    Ok(())
}
