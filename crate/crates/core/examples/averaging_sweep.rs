//! ε-sweep of the perturbed four-dimensional oscillator against its averaged
//! system `H̄ᵢ(t) = Hᵢ(y₀) + t/2`.
//!
//! cargo run --release --example averaging_sweep -- [paths]

use stochastic_hamiltonian::averaging::{
    run_averaging_experiment, ActionAngleChart, AveragingParams, PerturbationSpec,
};
use stochastic_hamiltonian::ensemble::Ensemble;
use stochastic_hamiltonian::hamiltonian::harmonic_family;
use stochastic_hamiltonian::levy::{JumpDistribution, JumpSpec, LevyTriplet};
use stochastic_hamiltonian::marcus::IntegratorConfig;

fn main() -> stochastic_hamiltonian::Result<()> {
    let paths = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let sys = harmonic_family(&[1.0, 1.0])?;
    let chart = ActionAngleChart::new(vec![1.0, 1.0], 1e-3)?;
    let pert = PerturbationSpec::oscillator_example().build(&chart)?;
    let noise = LevyTriplet::standard(
        2,
        JumpSpec::compound_poisson(
            2.0,
            JumpDistribution::Uniform {
                low: -1.0,
                high: 1.0,
            },
        ),
    );
    let params = AveragingParams {
        paths,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let report = run_averaging_experiment(
        &sys,
        &chart,
        &pert,
        &noise,
        &[1.0, 1.0, 0.0, 0.0],
        &params,
        &IntegratorConfig::converged_midpoint(0.01),
        2024,
        &Ensemble::new(None),
    )?;
    report.write_csv(std::io::stdout())?;
    println!("trend: {:?}", report.trend);
    eprintln!("{paths} paths in {:.1?}", start.elapsed());
    Ok(())
}
