//! The Marcus jump map: the time-one flow of `ξ' = V(ξ)·Δz`.

use crate::error::{Error, Result};
use crate::field::VectorField;

pub const DEFAULT_JUMP_SUBSTEPS: usize = 128;
pub(crate) const DIVERGENCE_BOUND: f64 = 1e12;

pub(crate) fn diverged(x: &[f64]) -> bool {
    x.iter()
        .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
}

/// Number of RK4 substeps for a flow of length `|a|`.
pub(crate) fn substeps_for(a: f64, base: usize) -> usize {
    base.max(1) * a.abs().max(1.0).ceil() as usize
}

/// Scratch space reused across jumps.
#[derive(Debug, Default)]
pub(crate) struct FlowScratch {
    k: [Vec<f64>; 4],
    y: Vec<f64>,
    jac: Vec<f64>,
    dk: [Vec<f64>; 4],
    dy: Vec<f64>,
}

impl FlowScratch {
    fn ensure(&mut self, m: usize, tangent: bool) {
        if self.y.len() != m {
            self.k.iter_mut().for_each(|v| v.resize(m, 0.0));
            self.y.resize(m, 0.0);
        }
        if tangent && self.jac.len() != m * m {
            self.jac.resize(m * m, 0.0);
            self.dk.iter_mut().for_each(|v| v.resize(m * m, 0.0));
            self.dy.resize(m * m, 0.0);
        }
    }
}

fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize) {
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = (0..m).map(|k| a[i * m + k] * b[k * m + j]).sum();
        }
    }
}

/// Flows `x` in place along `a·V` for unit time with `n` RK4 substeps.
/// When `tangent` is given it is replaced by `D(map)·tangent`, the exact
/// derivative of the discrete RK4 map.
pub(crate) fn flow(
    field: &dyn VectorField,
    a: f64,
    x: &mut [f64],
    n: usize,
    mut tangent: Option<&mut [f64]>,
    s: &mut FlowScratch,
) -> Result<()> {
    if a == 0.0 {
        return Ok(());
    }
    let m = x.len();
    s.ensure(m, tangent.is_some());
    let h = 1.0 / n as f64;
    let coef = [0.0, 0.5, 0.5, 1.0];
    for step in 0..n {
        for stage in 0..4 {
            for i in 0..m {
                s.y[i] = x[i]
                    + if stage == 0 {
                        0.0
                    } else {
                        coef[stage] * h * s.k[stage - 1][i]
                    };
            }
            field.eval(&s.y, &mut s.k[stage]);
            s.k[stage].iter_mut().for_each(|v| *v *= a);
            if let Some(t) = tangent.as_deref() {
                for i in 0..m * m {
                    s.dy[i] = t[i]
                        + if stage == 0 {
                            0.0
                        } else {
                            coef[stage] * h * s.dk[stage - 1][i]
                        };
                }
                field.jacobian(&s.y, &mut s.jac);
                s.jac.iter_mut().for_each(|v| *v *= a);
                matmul(&s.jac, &s.dy, &mut s.dk[stage], m);
            }
        }
        for i in 0..m {
            x[i] += h / 6.0 * (s.k[0][i] + 2.0 * s.k[1][i] + 2.0 * s.k[2][i] + s.k[3][i]);
        }
        if let Some(t) = tangent.as_deref_mut() {
            for i in 0..m * m {
                t[i] += h / 6.0 * (s.dk[0][i] + 2.0 * s.dk[1][i] + 2.0 * s.dk[2][i] + s.dk[3][i]);
            }
        }
        if diverged(x) {
            return Err(Error::Divergence {
                time: (step + 1) as f64 * h,
                partial: x.to_vec(),
            });
        }
    }
    Ok(())
}

/// `ξ(1)` for `ξ' = V(ξ)·Δz`, `ξ(0) = x`, by RK4 with
/// `substeps · ⌈max(1, |Δz|)⌉` steps. A divergence error carries the state
/// reached and the flow parameter at which it was detected.
pub fn marcus_jump_map(
    field: &dyn VectorField,
    x: &[f64],
    delta_z: f64,
    substeps: usize,
) -> Result<Vec<f64>> {
    check_dim(field, x)?;
    let mut y = x.to_vec();
    let n = substeps_for(delta_z, substeps);
    flow(field, delta_z, &mut y, n, None, &mut FlowScratch::default())?;
    Ok(y)
}

/// The jump map together with its row-major Jacobian.
pub fn marcus_jump_map_with_jacobian(
    field: &dyn VectorField,
    x: &[f64],
    delta_z: f64,
    substeps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(field, x)?;
    let m = x.len();
    let mut y = x.to_vec();
    let mut jac: Vec<f64> = (0..m * m)
        .map(|k| if k / m == k % m { 1.0 } else { 0.0 })
        .collect();
    let n = substeps_for(delta_z, substeps);
    flow(
        field,
        delta_z,
        &mut y,
        n,
        Some(&mut jac),
        &mut FlowScratch::default(),
    )?;
    Ok((y, jac))
}

fn check_dim(field: &dyn VectorField, x: &[f64]) -> Result<()> {
    if field.dim() != x.len() {
        Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x.len(),
        })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    #[test]
    fn zero_jump_is_identity() {
        let f = FnField::linear(2, vec![0.3, 1.0, -2.0, 0.1]);
        let x = [0.4, -0.9];
        assert_eq!(marcus_jump_map(&f, &x, 0.0, 16).unwrap(), x.to_vec());
    }

    #[test]
    fn constant_field_translates() {
        let f = FnField::constant(vec![0.0, -0.8]);
        let y = marcus_jump_map(&f, &[1.0, 2.0], 0.5, 4).unwrap();
        assert_eq!(y[0], 1.0);
        assert!((y[1] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn rotation_field_rotates() {
        // V = (p, −q): the flow for time a is a clockwise rotation by a.
        let f = FnField::linear(2, vec![0.0, 1.0, -1.0, 0.0]);
        let a = 1.3;
        let y = marcus_jump_map(&f, &[1.0, 0.0], a, DEFAULT_JUMP_SUBSTEPS).unwrap();
        assert!((y[0] - a.cos()).abs() < 1e-10 && (y[1] + a.sin()).abs() < 1e-10);
    }

    #[test]
    fn jacobian_matches_differences() {
        let f = FnField::new(2, |x, o| {
            o[0] = x[1] * x[1];
            o[1] = -x[0].sin();
        });
        let x = [0.3, 0.8];
        let (_, jac) = marcus_jump_map_with_jacobian(&f, &x, 0.7, 32).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let yp = marcus_jump_map(&f, &xp, 0.7, 32).unwrap();
            let ym = marcus_jump_map(&f, &xm, 0.7, 32).unwrap();
            for i in 0..2 {
                let fd = (yp[i] - ym[i]) / (2.0 * h);
                assert!((fd - jac[i * 2 + j]).abs() < 1e-7, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn runaway_flow_reports_divergence() {
        let f = FnField::new(1, |x, o| o[0] = x[0] * x[0]);
        match marcus_jump_map(&f, &[1.0], 2.0, 8) {
            Err(Error::Divergence { partial, .. }) => assert_eq!(partial.len(), 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
