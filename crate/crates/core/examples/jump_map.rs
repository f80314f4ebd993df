//! The Marcus jump map of a linear field is the matrix exponential; here it
//! is checked against the rotation `exp(θJ)` and a Taylor series.
//!
//! cargo run --release --example jump_map

use stochastic_hamiltonian::field::FnField;
use stochastic_hamiltonian::marcus::{marcus_jump_map, DEFAULT_JUMP_SUBSTEPS};

fn expm_apply(m: &[f64], dz: f64, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut term = x.to_vec();
    let mut sum = x.to_vec();
    for k in 1..60 {
        let next: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| m[i * n + j] * term[j]).sum::<f64>() * dz / k as f64)
            .collect();
        term = next;
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
    }
    sum
}

fn main() -> stochastic_hamiltonian::Result<()> {
    // J∇(½(q² + p²)) = (p, -q)
    let rotation = FnField::linear(2, vec![0.0, 1.0, -1.0, 0.0]);
    for dz in [0.1, 1.0, -2.5, 6.0] {
        let y = marcus_jump_map(&rotation, &[1.0, 0.0], dz, DEFAULT_JUMP_SUBSTEPS)?;
        let err = ((y[0] - dz.cos()).powi(2) + (y[1] + dz.sin()).powi(2)).sqrt();
        println!("rotation  dz = {dz:5}  |Φ - exp| = {err:.2e}");
    }
    let m = vec![0.3, -1.1, 0.4, 0.9, -0.2, 0.5, -0.6, 0.7, 0.1];
    let field = FnField::linear(3, m.clone());
    let x = [0.5, -1.0, 2.0];
    for dz in [0.5, 1.0, 1.5] {
        let y = marcus_jump_map(&field, &x, dz, DEFAULT_JUMP_SUBSTEPS)?;
        let e = expm_apply(&m, dz, &x);
        let rel = y
            .iter()
            .zip(&e)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / e.iter().map(|b| b * b).sum::<f64>().sqrt();
        println!("general   dz = {dz:5}  relative error {rel:.2e}");
    }
    Ok(())
}
