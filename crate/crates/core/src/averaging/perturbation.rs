use serde::{Deserialize, Serialize};

use super::chart::ActionAngleChart;
use crate::error::{Error, Result};
use crate::field::{FnField, VectorField};
use crate::hamiltonian::HamiltonianSystem;
use crate::levy::{JumpSpec, LevyTriplet};
use crate::marcus::Perturbation;

/// Transversal drift `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero,
    /// `K_{q_pair} = q/(q² + p²)` on oscillator pair `pair` (1-based), zero elsewhere.
    Radial {
        pair: usize,
    },
    Constant {
        vector: Vec<f64>,
    },
    /// Row-major `K(x) = M x`.
    Linear {
        matrix: Vec<f64>,
    },
}

/// What the `k`-th channel of the second noise moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSpec {
    /// No coupling.
    Zero,
    /// Channel `k` shifts the angle `θ_k` at unit rate and leaves all actions fixed.
    AngleShift,
}

/// `ε(K dt + Σ F_k ∘ dB̃^k + Σ G_k ◇ dL̃^k)` together with the law of `(B̃, L̃)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub drift: DriftSpec,
    #[serde(default = "angle_shift")]
    pub diffusion: ChannelSpec,
    #[serde(default = "angle_shift")]
    pub jumps: ChannelSpec,
    pub noise: LevyTriplet,
}

fn angle_shift() -> ChannelSpec {
    ChannelSpec::AngleShift
}

impl PerturbationSpec {
    /// The transversal perturbation of the perturbed oscillator example on ℝ⁴:
    /// `K = (0, q₂/(q₂²+p₂²), 0, 0)` and angle shifts driven by a standard
    /// Brownian motion plus uniform compound-Poisson jumps.
    pub fn oscillator_example() -> Self {
        Self {
            drift: DriftSpec::Radial { pair: 2 },
            diffusion: ChannelSpec::AngleShift,
            jumps: ChannelSpec::AngleShift,
            noise: LevyTriplet::standard(
                2,
                JumpSpec::compound_poisson(
                    1.0,
                    crate::levy::JumpDistribution::Uniform {
                        low: -1.0,
                        high: 1.0,
                    },
                ),
            ),
        }
    }

    /// No perturbation at all; the slow variables must then stay put.
    pub fn unperturbed(d: usize) -> Self {
        Self {
            drift: DriftSpec::Zero,
            diffusion: ChannelSpec::Zero,
            jumps: ChannelSpec::Zero,
            noise: LevyTriplet::standard(d, JumpSpec::None),
        }
    }

    pub fn build(&self, chart: &ActionAngleChart) -> Result<PerturbationFields> {
        let d = chart.d();
        let m = 2 * d;
        self.noise.validate()?;
        if self.noise.dim() != d {
            return Err(Error::ChannelMismatch {
                system: d,
                noise: self.noise.dim(),
            });
        }
        let k: Option<Box<dyn VectorField>> = match &self.drift {
            DriftSpec::Zero => None,
            DriftSpec::Radial { pair } => {
                if *pair == 0 || *pair > d {
                    return Err(Error::IndexOutOfRange {
                        index: *pair,
                        max: d,
                    });
                }
                Some(Box::new(RadialDrift { n: d, i: pair - 1 }))
            }
            DriftSpec::Constant { vector } => {
                if vector.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        got: vector.len(),
                    });
                }
                Some(Box::new(FnField::constant(vector.clone())))
            }
            DriftSpec::Linear { matrix } => {
                if matrix.len() != m * m {
                    return Err(Error::DimensionMismatch {
                        expected: m * m,
                        got: matrix.len(),
                    });
                }
                Some(Box::new(FnField::linear(m, matrix.clone())))
            }
        };
        let channel = |spec: ChannelSpec| -> Vec<Box<dyn VectorField>> {
            match spec {
                ChannelSpec::Zero => Vec::new(),
                ChannelSpec::AngleShift => (0..d).map(|i| angle_shift_field(chart, i)).collect(),
            }
        };
        Ok(PerturbationFields {
            k,
            f: channel(self.diffusion),
            g: channel(self.jumps),
            noise: self.noise.clone(),
        })
    }
}

/// `q_i/(q_i² + p_i²)` in the `q_i` slot.
struct RadialDrift {
    n: usize,
    i: usize,
}

impl VectorField for RadialDrift {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (q, p) = (x[self.i], x[self.n + self.i]);
        out[self.i] = q / (q * q + p * p);
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let m = 2 * self.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        let (q, p) = (x[self.i], x[self.n + self.i]);
        let r2 = q * q + p * p;
        out[self.i * m + self.i] = (p * p - q * q) / (r2 * r2);
        out[self.i * m + self.n + self.i] = -2.0 * q * p / (r2 * r2);
    }
}

/// `∂/∂θ_i` in canonical coordinates: `(−p_i/ϖ_i, ϖ_i q_i)`.
fn angle_shift_field(chart: &ActionAngleChart, i: usize) -> Box<dyn VectorField> {
    let d = chart.d();
    let m = 2 * d;
    let w = chart.frequencies[i];
    let mut matrix = vec![0.0; m * m];
    matrix[i * m + d + i] = -1.0 / w;
    matrix[(d + i) * m + i] = w;
    Box::new(FnField::linear(m, matrix))
}

/// Built perturbation fields.
pub struct PerturbationFields {
    pub k: Option<Box<dyn VectorField>>,
    pub f: Vec<Box<dyn VectorField>>,
    pub g: Vec<Box<dyn VectorField>>,
    pub noise: LevyTriplet,
}

impl PerturbationFields {
    pub fn as_perturbation(&self) -> Perturbation<'_> {
        Perturbation {
            k: self.k.as_deref(),
            f: self.f.iter().map(|b| b.as_ref()).collect(),
            g: self.g.iter().map(|b| b.as_ref()).collect(),
        }
    }

    /// `g_i(x) = ω²(V_i, K)(x) = ∇H_i(x)·K(x)`, `i = 1..d`.
    pub fn transversal_rates(&self, sys: &HamiltonianSystem, x: &[f64]) -> Result<Vec<f64>> {
        let m = x.len();
        let mut kx = vec![0.0; m];
        if let Some(k) = &self.k {
            k.eval(x, &mut kx);
        }
        let mut grad = vec![0.0; m];
        (1..=sys.channels())
            .map(|i| {
                sys.hamiltonian(i)?.gradient(x, &mut grad);
                Ok(grad.iter().zip(&kx).map(|(a, b)| a * b).sum())
            })
            .collect()
    }
}

/// Probe-based checks of the perturbation structure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    /// Largest change of the chart components of `F_k`, `G_k` along angles.
    pub angle_dependence: f64,
    /// Largest `|ω²(V_i, K)|` seen on the probes.
    pub transversal_strength: f64,
    pub constancy_pass: bool,
    pub transversal_pass: bool,
}

/// Checks that every `F_k`, `G_k` has chart components depending only on
/// the actions, and that `K` is transversal somewhere on the probes.
pub fn check_perturbation(
    sys: &HamiltonianSystem,
    chart: &ActionAngleChart,
    fields: &PerturbationFields,
    probes: &[Vec<f64>],
    tol: f64,
) -> Result<PerturbationReport> {
    let m = 2 * chart.d();
    let mut worst = 0.0f64;
    let mut strength = 0.0f64;
    let mut v = vec![0.0; m];
    for x in probes {
        let (theta, actions) = chart.to_action_angle(x)?;
        strength = strength.max(
            fields
                .transversal_rates(sys, x)?
                .iter()
                .fold(0.0, |a: f64, g| a.max(g.abs())),
        );
        for field in fields.f.iter().chain(&fields.g) {
            field.eval(x, &mut v);
            let (a_theta, a_action) = chart.pushforward(x, &v);
            for shift in [0.7, 2.1, 4.4] {
                let moved: Vec<f64> = theta
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t + shift * (i + 1) as f64)
                    .collect();
                let y = chart.from_action_angle(&moved, &actions)?;
                field.eval(&y, &mut v);
                let (b_theta, b_action) = chart.pushforward(&y, &v);
                for (a, b) in a_theta
                    .iter()
                    .chain(&a_action)
                    .zip(b_theta.iter().chain(&b_action))
                {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    Ok(PerturbationReport {
        angle_dependence: worst,
        transversal_strength: strength,
        constancy_pass: worst <= tol,
        transversal_pass: strength > tol,
    })
}
