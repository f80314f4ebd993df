//! Scalar and vector fields on ℝᵐ.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FD_STEP: f64 = 1e-5;

pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// Row-major Hessian. The default differences the gradient.
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let m = self.dim();
        let mut xp = x.to_vec();
        let (mut gp, mut gm) = (vec![0.0; m], vec![0.0; m]);
        for j in 0..m {
            let h = FD_STEP * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            self.gradient(&xp, &mut gp);
            xp[j] = x[j] - h;
            self.gradient(&xp, &mut gm);
            xp[j] = x[j];
            for i in 0..m {
                out[i * m + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        // symmetrize
        for i in 0..m {
            for j in 0..i {
                let s = 0.5 * (out[i * m + j] + out[j * m + i]);
                out[i * m + j] = s;
                out[j * m + i] = s;
            }
        }
    }
}

pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Row-major Jacobian, `out[i*m + j] = ∂fᵢ/∂xⱼ`. The default uses
    /// central differences.
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let m = self.dim();
        let mut xp = x.to_vec();
        let (mut fp, mut fm) = (vec![0.0; m], vec![0.0; m]);
        for j in 0..m {
            let h = FD_STEP * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            self.eval(&xp, &mut fp);
            xp[j] = x[j] - h;
            self.eval(&xp, &mut fm);
            xp[j] = x[j];
            for i in 0..m {
                out[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }
}

/// Central-difference gradient, used to cross-check analytic gradients.
pub fn fd_gradient(f: &dyn ScalarField, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let hj = h * x[j].abs().max(1.0);
            xp[j] = x[j] + hj;
            let fp = f.value(&xp);
            xp[j] = x[j] - hj;
            let fm = f.value(&xp);
            xp[j] = x[j];
            (fp - fm) / (2.0 * hj)
        })
        .collect()
}

/// One monomial `coefficient · Π xᵢ^eᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

/// Polynomial scalar field with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Result<Self> {
        let p = Self {
            dim,
            terms: terms
                .into_iter()
                .map(|(exponents, coefficient)| Monomial {
                    exponents,
                    coefficient,
                })
                .collect(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    /// `c · xᵢ`.
    pub fn linear(dim: usize, i: usize, c: f64) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        Self {
            dim,
            terms: vec![Monomial {
                exponents: e,
                coefficient: c,
            }],
        }
    }

    /// `½ Σᵢ wᵢ xᵢ²`.
    pub fn diagonal_quadratic(weights: &[f64]) -> Self {
        let dim = weights.len();
        let terms = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| {
                let mut e = vec![0; dim];
                e[i] = 2;
                Monomial {
                    exponents: e,
                    coefficient: 0.5 * w,
                }
            })
            .collect();
        Self { dim, terms }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.terms.iter().enumerate() {
            if t.exponents.len() != self.dim {
                return Err(Error::Validation(format!(
                    "term {i}: {} exponents for a {}-dimensional polynomial",
                    t.exponents.len(),
                    self.dim
                )));
            }
            if !t.coefficient.is_finite() {
                return Err(Error::Validation(format!(
                    "term {i}: non-finite coefficient"
                )));
            }
        }
        Ok(())
    }
}

fn powi(x: f64, e: u32) -> f64 {
    x.powi(e as i32)
}

impl ScalarField for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coefficient
                    * t.exponents
                        .iter()
                        .zip(x)
                        .map(|(&e, &v)| powi(v, e))
                        .product::<f64>()
            })
            .sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for t in &self.terms {
            for (j, &ej) in t.exponents.iter().enumerate() {
                if ej == 0 {
                    continue;
                }
                let mut v = t.coefficient * ej as f64 * powi(x[j], ej - 1);
                for (i, &ei) in t.exponents.iter().enumerate() {
                    if i != j {
                        v *= powi(x[i], ei);
                    }
                }
                out[j] += v;
            }
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let m = self.dim;
        out.iter_mut().for_each(|h| *h = 0.0);
        for t in &self.terms {
            let e = &t.exponents;
            for a in 0..m {
                for b in 0..m {
                    let fa = e[a] as f64;
                    let coef = if a == b {
                        if e[a] < 2 {
                            continue;
                        }
                        fa * (fa - 1.0)
                    } else {
                        if e[a] == 0 || e[b] == 0 {
                            continue;
                        }
                        fa * e[b] as f64
                    };
                    let mut v = t.coefficient * coef;
                    for (i, &ei) in e.iter().enumerate() {
                        let d = (i == a) as u32 + (i == b) as u32;
                        v *= powi(x[i], ei - d);
                    }
                    out[a * m + b] += v;
                }
            }
        }
    }
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Scalar field given by closures for the value and the gradient.
#[derive(Clone)]
pub struct FnScalar {
    dim: usize,
    value: Arc<ScalarFn>,
    gradient: Arc<VectorFn>,
}

impl FnScalar {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }
}

impl fmt::Debug for FnScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnScalar(dim = {})", self.dim)
    }
}

impl ScalarField for FnScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
}

/// Vector field given by a closure, with an optional analytic Jacobian.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    eval: Arc<VectorFn>,
    jacobian: Option<Arc<VectorFn>>,
}

impl FnField {
    pub fn new(dim: usize, eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// `x ↦ M x` for a row-major `m × m` matrix.
    pub fn linear(m: usize, matrix: Vec<f64>) -> Self {
        assert_eq!(matrix.len(), m * m);
        let a = Arc::new(matrix);
        let b = a.clone();
        Self::new(m, move |x, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..m).map(|j| a[i * m + j] * x[j]).sum();
            }
        })
        .with_jacobian(move |_, out| out.copy_from_slice(&b))
    }

    /// A field that is constant in space.
    pub fn constant(v: Vec<f64>) -> Self {
        let m = v.len();
        Self::new(m, move |_, out| out.copy_from_slice(&v)).with_jacobian(|_, out| out.fill(0.0))
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FnField(dim = {}, analytic jacobian = {})",
            self.dim,
            self.jacobian.is_some()
        )
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        match &self.jacobian {
            Some(j) => j(x, out),
            None => {
                let m = self.dim;
                let mut xp = x.to_vec();
                let (mut fp, mut fm) = (vec![0.0; m], vec![0.0; m]);
                for j in 0..m {
                    let h = FD_STEP * x[j].abs().max(1.0);
                    xp[j] = x[j] + h;
                    self.eval(&xp, &mut fp);
                    xp[j] = x[j] - h;
                    self.eval(&xp, &mut fm);
                    xp[j] = x[j];
                    for i in 0..m {
                        out[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
            }
        }
    }
}
