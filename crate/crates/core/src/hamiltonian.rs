//! Hamiltonian systems in canonical coordinates `x = (q₁…qₙ, p₁…pₙ)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fd_gradient, Polynomial, ScalarField, VectorField};

/// Applies `J = [[0, I], [−I, 0]]` to `v`.
pub fn apply_j(v: &[f64], out: &mut [f64]) {
    let n = v.len() / 2;
    for i in 0..n {
        out[i] = v[n + i];
        out[n + i] = -v[i];
    }
}

/// `ω²(u, v) = uᵀ J v`.
pub fn symplectic_form(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.len() % 2 != 0 {
        return Err(Error::DimensionMismatch {
            expected: u.len() + u.len() % 2,
            got: v.len(),
        });
    }
    let n = u.len() / 2;
    Ok((0..n).map(|i| u[i] * v[n + i] - u[n + i] * v[i]).sum())
}

/// The field `J∇H`.
#[derive(Clone)]
pub struct HamiltonianField {
    h: Arc<dyn ScalarField>,
}

impl HamiltonianField {
    pub fn new(h: Arc<dyn ScalarField>) -> Self {
        Self { h }
    }
}

impl VectorField for HamiltonianField {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let m = x.len();
        if m <= 16 {
            let mut g = [0.0; 16];
            self.h.gradient(x, &mut g[..m]);
            apply_j(&g[..m], out);
        } else {
            let mut g = vec![0.0; m];
            self.h.gradient(x, &mut g);
            apply_j(&g, out);
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let m = x.len();
        let n = m / 2;
        let mut hess = vec![0.0; m * m];
        self.h.hessian(x, &mut hess);
        for j in 0..m {
            for i in 0..n {
                out[i * m + j] = hess[(n + i) * m + j];
                out[(n + i) * m + j] = -hess[i * m + j];
            }
        }
    }
}

/// Outcome of the integrability probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrabilityReport {
    pub max_violation: f64,
    /// Pair `(i, j)` attaining the maximum.
    pub worst_pair: Option<(usize, usize)>,
    /// Smallest singular value of `[V₁ … V_d]` over the probes.
    pub min_singular_value: f64,
    /// Probes where the noise fields are (numerically) dependent.
    pub degenerate_probes: Vec<usize>,
    pub tolerance: f64,
    pub pass: bool,
}

/// `H₀ … H_d` on ℝ²ⁿ; `H₀` drives the time drift and `H_k` noise channel `k`.
#[derive(Clone)]
pub struct HamiltonianSystem {
    name: String,
    n: usize,
    hamiltonians: Vec<Arc<dyn ScalarField>>,
    labels: Vec<String>,
}

impl fmt::Debug for HamiltonianSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("labels", &self.labels)
            .finish()
    }
}

const GRADIENT_PROBES: usize = 8;
const GRADIENT_RTOL: f64 = 1e-6;

impl HamiltonianSystem {
    /// Builds the system and cross-checks every analytic gradient against
    /// central differences at random probe points.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        hamiltonians: Vec<Arc<dyn ScalarField>>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("phase space needs n >= 1".into()));
        }
        if hamiltonians.is_empty() {
            return Err(Error::Validation("at least H0 must be given".into()));
        }
        for (k, h) in hamiltonians.iter().enumerate() {
            if h.dim() != 2 * n {
                return Err(Error::Validation(format!(
                    "H{k} lives in dimension {}, expected {}",
                    h.dim(),
                    2 * n
                )));
            }
        }
        let labels =
            labels.unwrap_or_else(|| (0..hamiltonians.len()).map(|k| format!("H{k}")).collect());
        if labels.len() != hamiltonians.len() {
            return Err(Error::Validation("one label per Hamiltonian".into()));
        }
        let sys = Self {
            name: name.into(),
            n,
            hamiltonians,
            labels,
        };
        sys.check_gradients(GRADIENT_PROBES, GRADIENT_RTOL)?;
        Ok(sys)
    }

    fn check_gradients(&self, probes: usize, rtol: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
        let m = 2 * self.n;
        let mut g = vec![0.0; m];
        for _ in 0..probes {
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.5..1.5)).collect();
            for (k, h) in self.hamiltonians.iter().enumerate() {
                h.gradient(&x, &mut g);
                let fd = fd_gradient(h.as_ref(), &x, 1e-5);
                let scale = g.iter().chain(&fd).fold(1.0f64, |a, v| a.max(v.abs()));
                for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
                    if (a - b).abs() > rtol * scale {
                        return Err(Error::Validation(format!(
                            "{}: gradient of {} component {i} is {a}, finite differences give {b}",
                            self.name, self.labels[k]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Half-dimension of phase space.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n
    }

    /// Number of noise channels.
    pub fn channels(&self) -> usize {
        self.hamiltonians.len() - 1
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.hamiltonians.len() {
            Err(Error::IndexOutOfRange {
                index: k,
                max: self.channels(),
            })
        } else {
            Ok(())
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != 2 * self.n {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.n,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("phase point has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn hamiltonian(&self, k: usize) -> Result<&Arc<dyn ScalarField>> {
        self.check_index(k)?;
        Ok(&self.hamiltonians[k])
    }

    pub fn energy(&self, k: usize, x: &[f64]) -> Result<f64> {
        self.check_index(k)?;
        self.check_point(x)?;
        Ok(self.hamiltonians[k].value(x))
    }

    /// `H₁(x) … H_d(x)`.
    pub fn first_integrals(&self, x: &[f64]) -> Vec<f64> {
        self.hamiltonians[1..].iter().map(|h| h.value(x)).collect()
    }

    /// `V_k(x) = (∂H_k/∂p, −∂H_k/∂q)`.
    pub fn vector_field(&self, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_index(k)?;
        self.check_point(x)?;
        let mut out = vec![0.0; x.len()];
        self.field(k)?.eval(x, &mut out);
        Ok(out)
    }

    pub fn field(&self, k: usize) -> Result<HamiltonianField> {
        self.check_index(k)?;
        Ok(HamiltonianField::new(self.hamiltonians[k].clone()))
    }

    /// `{H_i, H_j}(x) = ∇H_iᵀ J ∇H_j = ω²(V_i, V_j)`, so that `{q, p} = 1`.
    pub fn poisson_bracket(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        self.check_point(x)?;
        let m = x.len();
        let (mut gi, mut gj, mut jg) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        self.hamiltonians[i].gradient(x, &mut gi);
        self.hamiltonians[j].gradient(x, &mut gj);
        apply_j(&gj, &mut jg);
        Ok(gi.iter().zip(&jg).map(|(a, b)| a * b).sum())
    }

    /// Probes `|{H_i, H_j}|` for all pairs and the independence of the noise
    /// fields. Degenerate probes are reported, not treated as errors.
    pub fn check_integrability(&self, probes: &[Vec<f64>], tol: f64) -> IntegrabilityReport {
        let d = self.channels();
        let mut max_violation = 0.0f64;
        let mut worst_pair = None;
        let mut min_sv = f64::INFINITY;
        let mut degenerate = Vec::new();
        for (pi, x) in probes.iter().enumerate() {
            if self.check_point(x).is_err() {
                degenerate.push(pi);
                continue;
            }
            for i in 0..=d {
                for j in i + 1..=d {
                    let b = self.poisson_bracket(i, j, x).unwrap_or(f64::NAN).abs();
                    if b > max_violation || b.is_nan() {
                        max_violation = b;
                        worst_pair = Some((i, j));
                    }
                }
            }
            if d > 0 {
                let m = x.len();
                let mut cols = DMatrix::zeros(m, d);
                for k in 1..=d {
                    let v = self.vector_field(k, x).expect("checked point");
                    for r in 0..m {
                        cols[(r, k - 1)] = v[r];
                    }
                }
                let sv = cols.singular_values().min();
                min_sv = min_sv.min(sv);
                if sv <= tol.max(1e-12) {
                    degenerate.push(pi);
                }
            }
        }
        IntegrabilityReport {
            max_violation,
            worst_pair,
            min_singular_value: if min_sv.is_finite() { min_sv } else { 0.0 },
            degenerate_probes: degenerate,
            tolerance: tol,
            pass: max_violation <= tol,
        }
    }
}

/// Linear stochastic oscillator: `H₀ = ½(q² + p²)`, `H₁ = σ q`, so that
/// `dq = p dt`, `dp = −q dt − σ ◇ dL`.
pub fn linear_oscillator(sigma: f64) -> Result<HamiltonianSystem> {
    let h0 = Polynomial::diagonal_quadratic(&[1.0, 1.0]);
    let h1 = Polynomial::linear(2, 0, sigma);
    HamiltonianSystem::new(
        "linear-oscillator",
        1,
        vec![Arc::new(h0), Arc::new(h1)],
        Some(vec!["H0".into(), "H1".into()]),
    )
}

/// Harmonic family on ℝ²ᵈ with frequencies `ϖ`: `H₀ = 0`,
/// `H₁ = ½Σ(pᵢ² + ϖᵢ²qᵢ²)` and `H_k = ½(p_k²/ϖ_k + ϖ_k q_k²)` for `k ≥ 2`.
pub fn harmonic_family(freqs: &[f64]) -> Result<HamiltonianSystem> {
    let d = freqs.len();
    if d == 0 || freqs.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Validation("frequencies must be positive".into()));
    }
    let m = 2 * d;
    let mut hs: Vec<Arc<dyn ScalarField>> = vec![Arc::new(Polynomial::zero(m))];
    let mut w1 = vec![0.0; m];
    for (i, w) in freqs.iter().enumerate() {
        w1[i] = w * w;
        w1[d + i] = 1.0;
    }
    hs.push(Arc::new(Polynomial::diagonal_quadratic(&w1)));
    for k in 1..d {
        let mut wk = vec![0.0; m];
        wk[k] = freqs[k];
        wk[d + k] = 1.0 / freqs[k];
        hs.push(Arc::new(Polynomial::diagonal_quadratic(&wk)));
    }
    HamiltonianSystem::new("harmonic-family", d, hs, None)
}

/// Serializable description of a system, as used by the configuration format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    LinearOscillator {
        #[serde(default = "one")]
        sigma: f64,
    },
    HarmonicFamily {
        #[serde(default = "unit_pair")]
        frequencies: Vec<f64>,
    },
    /// `hamiltonians[0]` is `H₀`; the rest are the noise Hamiltonians.
    Polynomial {
        n: usize,
        hamiltonians: Vec<Polynomial>,
    },
}

fn one() -> f64 {
    1.0
}

fn unit_pair() -> Vec<f64> {
    vec![1.0, 1.0]
}

impl SystemSpec {
    pub fn build(&self) -> Result<HamiltonianSystem> {
        match self {
            SystemSpec::LinearOscillator { sigma } => linear_oscillator(*sigma),
            SystemSpec::HarmonicFamily { frequencies } => harmonic_family(frequencies),
            SystemSpec::Polynomial { n, hamiltonians } => {
                for p in hamiltonians {
                    p.validate()?;
                }
                let hs = hamiltonians
                    .iter()
                    .map(|p| Arc::new(p.clone()) as Arc<dyn ScalarField>)
                    .collect();
                HamiltonianSystem::new("polynomial", *n, hs, None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnScalar;

    fn probes(m: usize, count: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        (0..count)
            .map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    fn custom(n: usize, hs: Vec<Polynomial>) -> HamiltonianSystem {
        SystemSpec::Polynomial {
            n,
            hamiltonians: hs,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn oscillator_field() {
        let sys = custom(1, vec![Polynomial::diagonal_quadratic(&[1.0, 1.0])]);
        assert_eq!(sys.vector_field(0, &[1.0, 0.0]).unwrap(), vec![0.0, -1.0]);
        let constant = custom(1, vec![Polynomial::new(2, [(vec![0, 0], 3.0)]).unwrap()]);
        assert_eq!(
            constant.vector_field(0, &[0.3, -2.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let lin = linear_oscillator(0.7).unwrap();
        for x in probes(2, 5) {
            assert_eq!(lin.vector_field(1, &x).unwrap(), vec![0.0, -0.7]);
        }
        assert!(matches!(
            lin.vector_field(2, &[0.0, 0.0]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn symplectic_form_pairing() {
        assert_eq!(symplectic_form(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let u = [0.3, -1.2, 0.5, 2.0];
        let v = [1.1, 0.4, -0.7, 0.9];
        assert_eq!(symplectic_form(&u, &u).unwrap(), 0.0);
        assert_eq!(
            symplectic_form(&u, &v).unwrap(),
            -symplectic_form(&v, &u).unwrap()
        );
        assert!(symplectic_form(&u, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn canonical_bracket_and_harmonic_family() {
        let qp = custom(
            1,
            vec![Polynomial::linear(2, 0, 1.0), Polynomial::linear(2, 1, 1.0)],
        );
        for x in probes(2, 4) {
            assert_eq!(qp.poisson_bracket(0, 1, &x).unwrap(), 1.0);
            assert_eq!(qp.poisson_bracket(1, 1, &x).unwrap(), 0.0);
        }
        let report = qp.check_integrability(&probes(2, 4), 1e-10);
        assert!(!report.pass);
        assert_eq!(report.max_violation, 1.0);

        let fam = harmonic_family(&[1.0, 2.5]).unwrap();
        let rep = fam.check_integrability(&probes(4, 20), 1e-10);
        assert!(rep.pass, "{rep:?}");
        assert!(rep.max_violation < 1e-12);
    }

    #[test]
    fn function_of_the_noise_hamiltonian_commutes() {
        // H₀ = H₁² with H₁ = ½(q² + p²) + q p
        let h1 =
            Polynomial::new(2, [(vec![2, 0], 0.5), (vec![0, 2], 0.5), (vec![1, 1], 1.0)]).unwrap();
        let h0 = {
            let a = h1.clone();
            let b = h1.clone();
            FnScalar::new(
                2,
                move |x| a.value(x).powi(2),
                move |x, g| {
                    b.gradient(x, g);
                    let v = 2.0 * b.value(x);
                    g.iter_mut().for_each(|c| *c *= v);
                },
            )
        };
        let sys =
            HamiltonianSystem::new("square", 1, vec![Arc::new(h0), Arc::new(h1)], None).unwrap();
        let rep = sys.check_integrability(&probes(2, 10), 1e-10);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn bracket_equals_form_of_fields() {
        let a = Polynomial::new(4, [(vec![1, 2, 0, 1], 0.8), (vec![0, 0, 3, 0], -0.2)]).unwrap();
        let b = Polynomial::new(4, [(vec![2, 0, 1, 0], 1.1), (vec![0, 1, 0, 2], 0.4)]).unwrap();
        let sys = custom(2, vec![a, b]);
        for x in probes(4, 10) {
            let br = sys.poisson_bracket(0, 1, &x).unwrap();
            let w = symplectic_form(
                &sys.vector_field(0, &x).unwrap(),
                &sys.vector_field(1, &x).unwrap(),
            )
            .unwrap();
            assert!((br - w).abs() <= 1e-10 * br.abs().max(1.0));
        }
    }

    #[test]
    fn hamiltonian_field_is_tangent_to_level_sets() {
        let sys = harmonic_family(&[1.0, 1.7]).unwrap();
        for x in probes(4, 10) {
            for k in 1..=2 {
                let v = sys.vector_field(k, &x).unwrap();
                let mut g = vec![0.0; 4];
                sys.hamiltonian(k).unwrap().gradient(&x, &mut g);
                let dh: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
                assert!(dh.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let bad = FnScalar::new(2, |x| x[0] * x[0], |_, g| g.copy_from_slice(&[0.0, 1.0]));
        let err = HamiltonianSystem::new("bad", 1, vec![Arc::new(bad)], None).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn field_jacobian_is_j_times_hessian() {
        let sys = harmonic_family(&[2.0]).unwrap();
        let f = sys.field(1).unwrap();
        let mut jac = [0.0; 4];
        f.jacobian(&[0.3, 0.1], &mut jac);
        // V = (p, −4q)
        assert_eq!(jac, [0.0, 1.0, -4.0, 0.0]);
    }
}
