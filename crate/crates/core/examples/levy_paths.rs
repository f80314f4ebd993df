//! Samples Lévy driving paths and compares the empirical jump rate and
//! terminal variance with the triplet.
//!
//! cargo run --release --example levy_paths -- [paths]

use stochastic_hamiltonian::levy::{
    jump_second_moment, JumpDistribution, JumpSpec, LevyTriplet, NoiseSampler,
};
use stochastic_hamiltonian::rng::StreamId;
use stochastic_hamiltonian::stats::mean_se;

fn main() -> stochastic_hamiltonian::Result<()> {
    let paths: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2000);
    let jumps = JumpSpec::compound_poisson(3.0, JumpDistribution::Laplace { scale: 0.4 });
    let triplet = LevyTriplet::standard(1, jumps.clone());
    let sampler = NoiseSampler::new(&triplet)?;
    let (horizon, step) = (2.0, 0.01);

    let mut counts = Vec::new();
    let mut ends = Vec::new();
    for i in 0..paths {
        let path = sampler.sample(horizon, step, StreamId::new(7, i))?;
        counts.push(path.jumps().len() as f64);
        let brownian: f64 = (0..path.steps()).map(|k| path.increment(k)[0]).sum();
        let jumped: f64 = path.jumps().iter().map(|j| j.size).sum();
        ends.push(brownian + path.drift()[0] * horizon + jumped);
    }
    let (n, n_se) = mean_se(&counts);
    let sq: Vec<f64> = ends.iter().map(|x| x * x).collect();
    let (v, v_se) = mean_se(&sq);
    println!(
        "jumps per path  {n:.3} ± {n_se:.3}  (rate·t = {})",
        jumps.intensity() * horizon
    );
    println!(
        "E[L_t²]         {v:.3} ± {v_se:.3}  (t(1 + ∫z²ν) = {})",
        horizon * (1.0 + jump_second_moment(&jumps)?)
    );

    let one = sampler.sample(horizon, step, StreamId::new(7, 0))?;
    let slow = one.time_rescaled(0.1)?;
    println!(
        "rescaled by 0.1: horizon {} -> {}, {} jumps kept",
        one.horizon(),
        slow.horizon(),
        slow.jumps().len()
    );
    Ok(())
}
