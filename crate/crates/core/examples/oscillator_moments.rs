//! Second moment of the linear oscillator driven by Brownian motion plus a
//! compensated Poisson atom, against `1 + σ²t + σ²t∫z²ν`.
//!
//! cargo run --release --example oscillator_moments -- [paths]

use stochastic_hamiltonian::diagnostics::{oscillator_moment_law, oscillator_moment_mc};
use stochastic_hamiltonian::ensemble::Ensemble;
use stochastic_hamiltonian::levy::{JumpSpec, LevyTriplet};
use stochastic_hamiltonian::marcus::IntegratorConfig;

fn main() -> stochastic_hamiltonian::Result<()> {
    let paths = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);
    let triplet = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 4.0)]));
    let times = [1.0, 2.0, 5.0];
    let start = std::time::Instant::now();
    let est = oscillator_moment_mc(
        1.0,
        &triplet,
        &times,
        paths,
        2024,
        &IntegratorConfig::new(0.01),
        &Ensemble::new(None),
    )?;
    println!("t,mean,se,law,z");
    for (t, (m, se)) in times.iter().zip(est) {
        let law = oscillator_moment_law(1.0, *t, &triplet.jumps)?;
        println!("{t},{m:.4},{se:.4},{law},{:.2}", (m - law) / se);
    }
    eprintln!("{paths} paths in {:.1?}", start.elapsed());
    Ok(())
}
