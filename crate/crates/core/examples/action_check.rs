//! The stochastic action of the linear oscillator as a generating function:
//! `∂S/∂q₀ = -p₀` and `∂S/∂q₁ = p₁` along random noise paths.
//!
//! cargo run --release --example action_check

use rand::Rng;
use stochastic_hamiltonian::diagnostics::generating_function_check;
use stochastic_hamiltonian::levy::{sample_noise_path, JumpSpec, LevyTriplet};
use stochastic_hamiltonian::rng::StreamId;

fn main() -> stochastic_hamiltonian::Result<()> {
    let triplet = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 4.0)]));
    println!("t1,q0,q1,p0,p1,residual_q0,residual_q1");
    for i in 0..10 {
        let id = StreamId::new(5, i);
        let mut rng = id.parameter_rng();
        let t1 = (rng.random_range(0.5..3.0f64) * 100.0).round() / 100.0;
        let (q0, q1) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let noise = sample_noise_path(&triplet, t1, 0.01, id)?;
        let r = generating_function_check(1.0, &noise, q0, q1, t1, 1e-4)?;
        println!(
            "{t1},{q0:.3},{q1:.3},{:.5},{:.5},{:.1e},{:.1e}",
            r.p0, r.p1, r.residual_q0, r.residual_q1
        );
    }
    Ok(())
}
