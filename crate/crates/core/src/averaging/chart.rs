use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Action-angle chart of uncoupled oscillators,
/// `qᵢ = √(2Iᵢ/ϖᵢ) cos θᵢ`, `pᵢ = √(2ϖᵢIᵢ) sin θᵢ`, restricted to `Iᵢ ≥ I_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionAngleChart {
    pub frequencies: Vec<f64>,
    pub i_min: f64,
}

impl ActionAngleChart {
    pub fn new(frequencies: Vec<f64>, i_min: f64) -> Result<Self> {
        let chart = Self { frequencies, i_min };
        chart.validate()?;
        Ok(chart)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty()
            || self
                .frequencies
                .iter()
                .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(Error::Validation(
                "chart frequencies must be positive".into(),
            ));
        }
        if !(self.i_min.is_finite() && self.i_min > 0.0) {
            return Err(Error::Validation(format!(
                "chart i_min must be > 0, got {}",
                self.i_min
            )));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.frequencies.len()
    }

    /// `Iᵢ = (ϖᵢqᵢ² + pᵢ²/ϖᵢ)/2`, with no domain guard.
    pub fn actions(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d();
        self.frequencies
            .iter()
            .enumerate()
            .map(|(i, w)| 0.5 * (w * x[i] * x[i] + x[d + i] * x[d + i] / w))
            .collect()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != 2 * self.d() {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.d(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn guard(&self, actions: &[f64]) -> Result<()> {
        for (i, &a) in actions.iter().enumerate() {
            if !(a >= self.i_min) {
                return Err(Error::Singularity(format!(
                    "action I{} = {a} is below the chart guard {}",
                    i + 1,
                    self.i_min
                )));
            }
        }
        Ok(())
    }

    /// `(θ, I)` with angles in `[0, 2π)`.
    pub fn to_action_angle(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_point(x)?;
        let actions = self.actions(x);
        self.guard(&actions)?;
        let d = self.d();
        let angles = self
            .frequencies
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let s = w.sqrt();
                let a = (x[d + i] / s).atan2(x[i] * s);
                if a < 0.0 {
                    a + TAU
                } else {
                    a
                }
            })
            .collect();
        Ok((angles, actions))
    }

    pub fn from_action_angle(&self, angles: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        let d = self.d();
        if angles.len() != d || actions.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: angles.len().min(actions.len()),
            });
        }
        self.guard(actions)?;
        let mut x = vec![0.0; 2 * d];
        for i in 0..d {
            let w = self.frequencies[i];
            let (s, c) = angles[i].sin_cos();
            x[i] = (2.0 * actions[i] / w).sqrt() * c;
            x[d + i] = (2.0 * w * actions[i]).sqrt() * s;
        }
        Ok(x)
    }

    /// Harmonic-family integrals in action variables: `H₁ = ΣϖᵢIᵢ`, `H_k = I_k`.
    pub fn integrals(&self, actions: &[f64]) -> Vec<f64> {
        let mut h = actions.to_vec();
        h[0] = self
            .frequencies
            .iter()
            .zip(actions)
            .map(|(w, i)| w * i)
            .sum();
        h
    }

    /// Inverse of [`Self::integrals`].
    pub fn actions_for_integrals(&self, h: &[f64]) -> Result<Vec<f64>> {
        let d = self.d();
        if h.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: h.len(),
            });
        }
        let mut actions = h.to_vec();
        let rest: f64 = (1..d).map(|k| self.frequencies[k] * h[k]).sum();
        actions[0] = (h[0] - rest) / self.frequencies[0];
        self.guard(&actions)?;
        Ok(actions)
    }

    /// `(dθᵢ(v), dIᵢ(v))` for a tangent vector `v` at `x`.
    pub fn pushforward(&self, x: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.d();
        let actions = self.actions(x);
        let mut dtheta = vec![0.0; d];
        let mut daction = vec![0.0; d];
        for i in 0..d {
            let w = self.frequencies[i];
            let (q, p, vq, vp) = (x[i], x[d + i], v[i], v[d + i]);
            dtheta[i] = (q * vp - p * vq) / (2.0 * actions[i]);
            daction[i] = w * q * vq + p / w * vp;
        }
        (dtheta, daction)
    }
}

/// Mean of `g` over `[0, 2π)^d` by the tensor trapezoid rule with `points`
/// nodes per dimension. Exact for trigonometric polynomials of degree below
/// `points`.
pub fn torus_average(d: usize, points: usize, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
    let points = points.max(1);
    let total = points.pow(d as u32);
    let mut theta = vec![0.0; d];
    let mut acc = 0.0;
    for flat in 0..total {
        let mut r = flat;
        for t in theta.iter_mut() {
            *t = (r % points) as f64 * TAU / points as f64;
            r /= points;
        }
        acc += g(&theta);
    }
    acc / total as f64
}
