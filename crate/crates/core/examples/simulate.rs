//! Integrates the noisy linear oscillator along one path and prints the
//! trajectory as CSV, flagging the rows that follow a jump.
//!
//! cargo run --release --example simulate -- [horizon] > trajectory.csv

use stochastic_hamiltonian::hamiltonian::linear_oscillator;
use stochastic_hamiltonian::levy::{sample_noise_path, JumpSpec, LevyTriplet};
use stochastic_hamiltonian::marcus::{integrate, IntegratorConfig, Trajectory};
use stochastic_hamiltonian::rng::StreamId;

fn main() -> stochastic_hamiltonian::Result<()> {
    let horizon = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5.0);
    let sys = linear_oscillator(1.0)?;
    let triplet = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 4.0)]));
    let noise = sample_noise_path(&triplet, horizon, 0.01, StreamId::new(1, 0))?;
    let traj = integrate(&sys, &noise, &[1.0, 0.0], &IntegratorConfig::new(0.01))?;
    traj.write_csv(std::io::stdout().lock())?;

    let mut bin = Vec::new();
    traj.write_binary(&mut bin)?;
    let back = Trajectory::read_binary(bin.as_slice())?;
    assert_eq!(back, traj);
    eprintln!(
        "{} states, {} jumps, binary {} bytes",
        traj.len(),
        traj.jumps().len(),
        bin.len()
    );
    Ok(())
}
