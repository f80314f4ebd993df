//! Time averages of `cos²θ₂` on the unperturbed four-dimensional oscillator
//! against the analytic moments, and the `t^{-1/2}` decay of the L² error.
//!
//! cargo run --release --example ergodic_rate -- [paths]

use stochastic_hamiltonian::averaging::{cos_squared_angle, ergodic_study};
use stochastic_hamiltonian::ensemble::Ensemble;
use stochastic_hamiltonian::hamiltonian::harmonic_family;
use stochastic_hamiltonian::levy::{JumpDistribution, JumpSpec, LevyTriplet};
use stochastic_hamiltonian::marcus::IntegratorConfig;

fn main() -> stochastic_hamiltonian::Result<()> {
    let paths = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let sys = harmonic_family(&[1.0, 1.0])?;
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
    let g = cos_squared_angle(2, 2);
    let cfg = IntegratorConfig::midpoint(0.01);
    let x0 = [1.0, 1.0, 0.0, 0.0];
    let ens = Ensemble::new(None);
    for windows in [&[1.0, 5.0, 20.0][..], &[10.0, 40.0, 160.0][..]] {
        let start = std::time::Instant::now();
        let study = ergodic_study(
            &sys,
            &noise,
            &x0,
            &g,
            windows,
            0.5,
            Some(&[1.0, 1.0]),
            paths,
            11,
            &cfg,
            &ens,
        )?;
        println!("window,mean,mean_se,predicted_mean,l2_deviation,predicted_l2");
        for w in &study.windows {
            println!(
                "{},{},{},{},{},{}",
                w.window,
                w.mean,
                w.mean_se,
                w.predicted_mean.unwrap_or(f64::NAN),
                w.l2_deviation,
                w.predicted_l2.unwrap_or(f64::NAN)
            );
        }
        println!("L2 rate exponent {:.3}", study.rate_exponent);
        eprintln!("{paths} paths in {:.1?}", start.elapsed());
    }
    Ok(())
}
