//! Symplectic defect of the flow Jacobian on the four-dimensional oscillator
//! under step halving, and the drift of the first integrals over many jumps.
//!
//! cargo run --release --example symplectic_check

use stochastic_hamiltonian::diagnostics::{flow_jacobian, symplectic_defect, JacobianMethod};
use stochastic_hamiltonian::hamiltonian::harmonic_family;
use stochastic_hamiltonian::levy::{sample_noise_path, JumpDistribution, JumpSpec, LevyTriplet};
use stochastic_hamiltonian::marcus::{integrate, IntegratorConfig, Scheme};
use stochastic_hamiltonian::rng::StreamId;
use stochastic_hamiltonian::stats::loglog_slope;

fn main() -> stochastic_hamiltonian::Result<()> {
    let sys = harmonic_family(&[1.0, 1.0])?;
    let triplet = LevyTriplet::standard(
        2,
        JumpSpec::compound_poisson(
            4.0,
            JumpDistribution::Uniform {
                low: -1.0,
                high: 1.0,
            },
        ),
    );
    let x0 = [1.0, 0.0, 0.0, 0.0];
    let steps: Vec<f64> = (0..5).map(|j| 1e-3 / (1 << j) as f64).collect();
    let noise = sample_noise_path(&triplet, 1.0, steps[4], StreamId::new(3, 0))?;
    for scheme in [Scheme::StratonovichMidpoint, Scheme::StratonovichHeun] {
        let mut defects = Vec::new();
        for &h in &steps {
            let cfg = IntegratorConfig {
                scheme,
                ..IntegratorConfig::new(h)
            };
            let jac = flow_jacobian(&sys, &noise, &x0, 1.0, JacobianMethod::VariationalSde, &cfg)?;
            defects.push(symplectic_defect(&jac).value);
        }
        let shown: Vec<String> = defects.iter().map(|d| format!("{d:.2e}")).collect();
        println!(
            "{scheme:?}: defects [{}], order {:.2}",
            shown.join(", "),
            loglog_slope(&steps, &defects)
        );
    }

    let long = sample_noise_path(&triplet, 10.0, 1e-3, StreamId::new(3, 1))?;
    let traj = integrate(&sys, &long, &x0, &IntegratorConfig::midpoint(1e-3))?;
    let h0 = sys.first_integrals(&x0);
    let drift = traj
        .states()
        .flat_map(|x| {
            sys.first_integrals(x)
                .into_iter()
                .zip(h0.clone())
                .map(|(a, b)| (a - b).abs())
        })
        .fold(0.0, f64::max);
    println!(
        "first-integral drift over t = 10 across {} jumps: {drift:.2e}",
        long.jumps().len()
    );
    Ok(())
}
