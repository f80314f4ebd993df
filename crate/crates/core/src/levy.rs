//! Lévy generating triplets and sampled driving paths.
//!
//! A [`LevyTriplet`] `(γ, A, ν)` is sampled through its Lévy–Itô
//! decomposition: a Brownian part with covariance `A`, a finite-activity jump
//! part for `ν` (optionally truncated below a threshold `δ`), and a drift that
//! combines `γ` with the compensator of the jumps smaller than one. The drift
//! is not baked into the increments; it rides along on the [`NoisePath`] and
//! the integrator applies it as a time slope.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::rng::{StreamId, Substream};

const QUAD_PANELS: usize = 64;

/// Jump-size law of a compound Poisson component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JumpDistribution {
    Uniform {
        low: f64,
        high: f64,
    },
    Normal {
        mean: f64,
        std_dev: f64,
    },
    Laplace {
        scale: f64,
    },
    /// `±size` with probability one half each.
    Symmetric {
        size: f64,
    },
    /// Heavy tailed; has no second moment.
    Cauchy {
        scale: f64,
    },
}

impl JumpDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            JumpDistribution::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low < high
            }
            JumpDistribution::Normal { mean, std_dev } => {
                mean.is_finite() && std_dev.is_finite() && std_dev > 0.0
            }
            JumpDistribution::Laplace { scale }
            | JumpDistribution::Symmetric { size: scale }
            | JumpDistribution::Cauchy { scale } => scale.is_finite() && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "bad jump distribution parameters: {self:?}"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpDistribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            JumpDistribution::Normal { mean, std_dev } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std_dev * z
            }
            JumpDistribution::Laplace { scale } => {
                let u = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            JumpDistribution::Symmetric { size } => {
                if rng.random::<bool>() {
                    size
                } else {
                    -size
                }
            }
            JumpDistribution::Cauchy { scale } => {
                scale * (std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan()
            }
        }
    }

    pub fn has_moment(&self, p: f64) -> bool {
        !matches!(self, JumpDistribution::Cauchy { .. }) || p <= 0.0
    }

    fn density(&self, z: f64) -> f64 {
        match *self {
            JumpDistribution::Uniform { low, high } => {
                if (low..=high).contains(&z) {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
            JumpDistribution::Normal { mean, std_dev } => {
                let x = (z - mean) / std_dev;
                (-0.5 * x * x).exp() / (std_dev * (2.0 * std::f64::consts::PI).sqrt())
            }
            JumpDistribution::Laplace { scale } => (-z.abs() / scale).exp() / (2.0 * scale),
            JumpDistribution::Cauchy { scale } => {
                scale / (std::f64::consts::PI * (scale * scale + z * z))
            }
            JumpDistribution::Symmetric { .. } => unreachable!("atomic law has no density"),
        }
    }

    /// Interval carrying all but a negligible amount of the mass.
    fn support(&self) -> (f64, f64) {
        match *self {
            JumpDistribution::Uniform { low, high } => (low, high),
            JumpDistribution::Normal { mean, std_dev } => {
                (mean - 40.0 * std_dev, mean + 40.0 * std_dev)
            }
            JumpDistribution::Laplace { scale } => (-80.0 * scale, 80.0 * scale),
            JumpDistribution::Symmetric { size } => (-size, size),
            // Only ever integrated over bounded bands.
            JumpDistribution::Cauchy { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// E[f(Z); lo ≤ |Z| < hi]. `hi` may be infinite except for Cauchy.
    fn expect_band(&self, f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        if let JumpDistribution::Symmetric { size } = *self {
            let a = size.abs();
            return if a >= lo && a < hi {
                0.5 * (f(a) + f(-a))
            } else {
                0.0
            };
        }
        let (slo, shi) = self.support();
        let g = |z: f64| f(z) * self.density(z);
        let (p0, p1) = (lo.max(slo), hi.min(shi));
        let (n0, n1) = ((-hi).max(slo), (-lo).min(shi));
        debug_assert!(p1.is_finite() && n0.is_finite());
        quadrature::integrate(g, p0, p1, QUAD_PANELS)
            + quadrature::integrate(g, n0, n1, QUAD_PANELS)
    }

    /// E cos(uZ) over the whole line.
    fn mean_cos(&self, u: f64) -> f64 {
        match *self {
            JumpDistribution::Uniform { low, high } => {
                if u == 0.0 {
                    1.0
                } else {
                    ((u * high).sin() - (u * low).sin()) / (u * (high - low))
                }
            }
            JumpDistribution::Normal { mean, std_dev } => {
                (u * mean).cos() * (-0.5 * u * u * std_dev * std_dev).exp()
            }
            JumpDistribution::Laplace { scale } => 1.0 / (1.0 + scale * scale * u * u),
            JumpDistribution::Symmetric { size } => (u * size).cos(),
            JumpDistribution::Cauchy { scale } => (-scale * u.abs()).exp(),
        }
    }

    fn full_second_moment(&self) -> Result<f64> {
        Ok(match *self {
            JumpDistribution::Uniform { low, high } => (low * low + low * high + high * high) / 3.0,
            JumpDistribution::Normal { mean, std_dev } => mean * mean + std_dev * std_dev,
            JumpDistribution::Laplace { scale } => 2.0 * scale * scale,
            JumpDistribution::Symmetric { size } => size * size,
            JumpDistribution::Cauchy { .. } => {
                return Err(Error::Domain(
                    "Cauchy jump sizes have no second moment".into(),
                ))
            }
        })
    }

    /// P(|Z| ≥ δ).
    fn tail_probability(&self, delta: f64) -> f64 {
        if delta <= 0.0 {
            return 1.0;
        }
        match *self {
            JumpDistribution::Cauchy { scale } => {
                1.0 - 2.0 / std::f64::consts::PI * (delta / scale).atan()
            }
            _ => 1.0 - self.expect_band(&|_| 1.0, 0.0, delta),
        }
    }
}

/// One atom `rate · δ_size` of a discrete Lévy measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub size: Vec<f64>,
    pub rate: f64,
}

/// Finite-activity representation of the Lévy measure ν.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JumpSpec {
    #[default]
    None,
    DiscreteAtoms {
        atoms: Vec<Atom>,
        #[serde(default)]
        truncation: f64,
    },
    /// Jumps arrive at total rate `rate`; each arrival hits one component
    /// chosen uniformly and draws its size from `distribution`.
    CompoundPoisson {
        rate: f64,
        distribution: JumpDistribution,
        #[serde(default)]
        truncation: f64,
        /// Replace the discarded jumps below `truncation` by a Brownian
        /// term with the same variance.
        #[serde(default)]
        gaussian_correction: bool,
    },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl JumpSpec {
    pub fn atoms(atoms: impl IntoIterator<Item = (Vec<f64>, f64)>) -> Self {
        JumpSpec::DiscreteAtoms {
            atoms: atoms
                .into_iter()
                .map(|(size, rate)| Atom { size, rate })
                .collect(),
            truncation: 0.0,
        }
    }

    pub fn compound_poisson(rate: f64, distribution: JumpDistribution) -> Self {
        JumpSpec::CompoundPoisson {
            rate,
            distribution,
            truncation: 0.0,
            gaussian_correction: false,
        }
    }

    pub fn truncation(&self) -> f64 {
        match *self {
            JumpSpec::None => 0.0,
            JumpSpec::DiscreteAtoms { truncation, .. }
            | JumpSpec::CompoundPoisson { truncation, .. } => truncation,
        }
    }

    /// Checks rates and truncation, and that atom sizes live in dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let delta = self.truncation();
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Validation(format!(
                "jumps.truncation must be >= 0, got {delta}"
            )));
        }
        match self {
            JumpSpec::None => Ok(()),
            JumpSpec::DiscreteAtoms { atoms, .. } => {
                for (i, a) in atoms.iter().enumerate() {
                    if !(a.rate.is_finite() && a.rate > 0.0) {
                        return Err(Error::Validation(format!(
                            "atom {i}: rate must be > 0, got {}",
                            a.rate
                        )));
                    }
                    if a.size.len() != dim {
                        return Err(Error::Validation(format!(
                            "atom {i}: size has {} components, noise has {dim}",
                            a.size.len()
                        )));
                    }
                    if a.size.iter().any(|z| !z.is_finite()) {
                        return Err(Error::Validation(format!("atom {i}: non-finite size")));
                    }
                }
                Ok(())
            }
            JumpSpec::CompoundPoisson {
                rate, distribution, ..
            } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::Validation(format!(
                        "jumps.rate must be > 0, got {rate}"
                    )));
                }
                if dim == 0 {
                    return Err(Error::Validation(
                        "compound Poisson jumps need at least one component".into(),
                    ));
                }
                distribution.validate()
            }
        }
    }

    /// Rate of the jumps that survive truncation.
    pub fn intensity(&self) -> f64 {
        match self {
            JumpSpec::None => 0.0,
            JumpSpec::DiscreteAtoms { atoms, truncation } => atoms
                .iter()
                .filter(|a| norm(&a.size) >= *truncation)
                .map(|a| a.rate)
                .sum(),
            JumpSpec::CompoundPoisson {
                rate,
                distribution,
                truncation,
                ..
            } => rate * distribution.tail_probability(*truncation),
        }
    }

    /// ∫_{lo ≤ |z| < hi} |z|^p ν(dz), restricted to the jumps kept after truncation.
    fn band_moment(&self, p: f64, lo: f64, hi: f64) -> Result<f64> {
        let lo = lo.max(self.truncation());
        if hi <= lo {
            return Ok(0.0);
        }
        match self {
            JumpSpec::None => Ok(0.0),
            JumpSpec::DiscreteAtoms { atoms, .. } => Ok(atoms
                .iter()
                .map(|a| (norm(&a.size), a.rate))
                .filter(|(r, _)| *r >= lo && *r < hi)
                .map(|(r, rate)| rate * r.powf(p))
                .sum()),
            JumpSpec::CompoundPoisson {
                rate, distribution, ..
            } => {
                let unbounded = hi.is_infinite();
                if unbounded && !distribution.has_moment(p) {
                    return Err(Error::Domain(format!(
                        "jump distribution {distribution:?} has no moment of order {p}"
                    )));
                }
                if unbounded && p == 2.0 {
                    let inner = distribution.expect_band(&|z| z * z, 0.0, lo);
                    return Ok(rate * (distribution.full_second_moment()? - inner));
                }
                Ok(rate * distribution.expect_band(&|z: f64| z.abs().powf(p), lo, hi))
            }
        }
    }

    /// ∫|z|^p ν(dz) over the retained jumps.
    pub fn abs_moment(&self, p: f64) -> Result<f64> {
        self.band_moment(p, 0.0, f64::INFINITY)
    }

    /// ∫_{|z| < c} |z|² ν(dz) over the retained jumps.
    pub fn second_moment_below(&self, c: f64) -> Result<f64> {
        self.band_moment(2.0, 0.0, c)
    }

    /// ∫_{δ ≤ |z| < 1} z ν(dz), the compensator of the small jumps.
    pub fn compensator(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        let delta = self.truncation();
        match self {
            JumpSpec::None => {}
            JumpSpec::DiscreteAtoms { atoms, .. } => {
                for a in atoms {
                    let r = norm(&a.size);
                    if r >= delta && r < 1.0 {
                        for (o, z) in out.iter_mut().zip(&a.size) {
                            *o += a.rate * z;
                        }
                    }
                }
            }
            JumpSpec::CompoundPoisson {
                rate, distribution, ..
            } => {
                let m = distribution.expect_band(&|z| z, delta, 1.0);
                out.iter_mut().for_each(|o| *o = rate / dim as f64 * m);
            }
        }
        out
    }

    /// Per-component variance of the discarded jumps, used by the Gaussian
    /// correction. Zero unless the correction is enabled.
    pub(crate) fn small_jump_variance(&self, dim: usize) -> Vec<f64> {
        match self {
            JumpSpec::CompoundPoisson {
                rate,
                distribution,
                truncation,
                gaussian_correction: true,
            } if *truncation > 0.0 => {
                let v = distribution.expect_band(&|z| z * z, 0.0, *truncation);
                vec![rate / dim as f64 * v; dim]
            }
            _ => vec![0.0; dim],
        }
    }
}

/// `∫|z|² ν(dz)` over the jumps kept after truncation.
pub fn jump_second_moment(spec: &JumpSpec) -> Result<f64> {
    spec.abs_moment(2.0)
}

/// `Re η₀(u) = ∫ [cos(u·z) − 1] ν(dz)`; the dimension is `u.len()`.
pub fn characteristic_exponent_real(spec: &JumpSpec, u: &[f64]) -> f64 {
    let dim = u.len();
    match spec {
        JumpSpec::None => 0.0,
        JumpSpec::DiscreteAtoms { atoms, truncation } => atoms
            .iter()
            .filter(|a| norm(&a.size) >= *truncation)
            .map(|a| {
                let dot: f64 = a.size.iter().zip(u).map(|(z, v)| z * v).sum();
                a.rate * (dot.cos() - 1.0)
            })
            .sum(),
        JumpSpec::CompoundPoisson {
            rate,
            distribution,
            truncation,
            ..
        } => {
            let per = rate / dim as f64;
            u.iter()
                .map(|&uk| {
                    let full = distribution.mean_cos(uk) - 1.0;
                    let inner = if *truncation > 0.0 {
                        distribution.expect_band(&|z| (uk * z).cos() - 1.0, 0.0, *truncation)
                    } else {
                        0.0
                    };
                    per * (full - inner)
                })
                .sum()
        }
    }
}

/// Generating triplet `(γ, A, ν)` of a `d`-dimensional Lévy process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyTriplet {
    pub drift: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    #[serde(default)]
    pub jumps: JumpSpec,
}

impl LevyTriplet {
    pub fn new(drift: Vec<f64>, covariance: Vec<Vec<f64>>, jumps: JumpSpec) -> Self {
        Self {
            drift,
            covariance,
            jumps,
        }
    }

    /// `(0, I, ν)` in dimension `dim`.
    pub fn standard(dim: usize, jumps: JumpSpec) -> Self {
        let covariance = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(vec![0.0; dim], covariance, jumps)
    }

    /// `(0, 0, ν)`.
    pub fn pure_jump(dim: usize, jumps: JumpSpec) -> Self {
        Self::new(vec![0.0; dim], vec![vec![0.0; dim]; dim], jumps)
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.drift.iter().any(|g| !g.is_finite()) {
            return Err(Error::Validation("drift has non-finite entries".into()));
        }
        if self.covariance.len() != d || self.covariance.iter().any(|r| r.len() != d) {
            return Err(Error::Validation(format!("covariance must be {d}x{d}")));
        }
        let a = self.covariance_matrix();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "covariance has non-finite entries".into(),
            ));
        }
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if (&a - a.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
            return Err(Error::Validation("covariance is not symmetric".into()));
        }
        if d > 0 {
            let min_eig = SymmetricEigen::new(a).eigenvalues.min();
            if min_eig < -1e-10 * scale {
                return Err(Error::Validation(format!(
                    "covariance is not positive semidefinite (eigenvalue {min_eig:e})"
                )));
            }
        }
        self.jumps.validate(d)
    }

    fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.covariance[i][j])
    }

    /// `γ − ∫_{δ≤|z|<1} z ν(dz)`: the time slope the integrator applies.
    pub fn effective_drift(&self) -> Vec<f64> {
        let comp = self.jumps.compensator(self.dim());
        self.drift.iter().zip(comp).map(|(g, c)| g - c).collect()
    }

    /// Row-major factor `S` with `S Sᵀ` equal to the Brownian covariance
    /// (plus the small-jump correction when enabled). `None` when zero.
    fn brownian_factor(&self) -> Option<Vec<f64>> {
        let d = self.dim();
        let mut a = self.covariance_matrix();
        for (i, v) in self.jumps.small_jump_variance(d).into_iter().enumerate() {
            a[(i, i)] += v;
        }
        if a.iter().all(|v| *v == 0.0) {
            return None;
        }
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || a[(i, j)] == 0.0));
        let s = if diagonal {
            DMatrix::from_fn(d, d, |i, j| {
                if i == j {
                    a[(i, i)].max(0.0).sqrt()
                } else {
                    0.0
                }
            })
        } else {
            let eig = SymmetricEigen::new(a);
            let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
        };
        Some((0..d * d).map(|k| s[(k / d, k % d)]).collect())
    }
}

/// One jump of one noise component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub component: usize,
    pub size: f64,
}

/// A realized driving path on a time grid.
///
/// Brownian increments are stored per grid step (already shaped by the
/// covariance). Jumps are listed separately; simultaneous jumps of several
/// components are ordered by component index.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    grid: Vec<f64>,
    increments: Vec<f64>,
    jumps: Vec<JumpEvent>,
    drift: Vec<f64>,
    dim: usize,
    seed: Option<StreamId>,
}

impl NoisePath {
    /// Builds a path from explicit parts, checking the invariants.
    pub fn from_parts(
        grid: Vec<f64>,
        increments: Vec<f64>,
        jumps: Vec<JumpEvent>,
        drift: Vec<f64>,
        seed: Option<StreamId>,
    ) -> Result<Self> {
        let dim = drift.len();
        if grid.len() < 2 {
            return Err(Error::Argument(
                "noise grid needs at least two points".into(),
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument(
                "noise grid must be strictly increasing".into(),
            ));
        }
        if increments.len() != (grid.len() - 1) * dim {
            return Err(Error::DimensionMismatch {
                expected: (grid.len() - 1) * dim,
                got: increments.len(),
            });
        }
        let (t0, tn) = (grid[0], grid[grid.len() - 1]);
        for (i, j) in jumps.iter().enumerate() {
            if !(j.time > t0 && j.time <= tn) {
                return Err(Error::Argument(format!(
                    "jump {i} at t = {} lies outside ({t0}, {tn}]",
                    j.time
                )));
            }
            if j.component >= dim {
                return Err(Error::IndexOutOfRange {
                    index: j.component,
                    max: dim.saturating_sub(1),
                });
            }
            if i > 0 {
                let p = &jumps[i - 1];
                if j.time < p.time || (j.time == p.time && j.component <= p.component) {
                    return Err(Error::Argument(format!("jump {i} is out of order")));
                }
            }
        }
        Ok(Self {
            grid,
            increments,
            jumps,
            drift,
            dim,
            seed,
        })
    }

    /// A path with no randomness at all.
    pub fn zero(dim: usize, horizon: f64, step: f64) -> Result<Self> {
        let grid = uniform_grid(horizon, step)?;
        let n = grid.len() - 1;
        Ok(Self {
            grid,
            increments: vec![0.0; n * dim],
            jumps: Vec::new(),
            drift: vec![0.0; dim],
            dim,
            seed: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn horizon(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    /// Brownian increment of step `i` (between `grid[i]` and `grid[i+1]`).
    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.dim..(i + 1) * self.dim]
    }

    pub fn jumps(&self) -> &[JumpEvent] {
        &self.jumps
    }

    /// Drift rate the integrator applies per unit time.
    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn seed(&self) -> Option<StreamId> {
        self.seed
    }

    /// Brownian value at the grid points, `B(grid[k]) − B(grid[0])`.
    pub fn brownian_at_grid(&self) -> Vec<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut out = vec![acc.clone()];
        for i in 0..self.steps() {
            for (a, db) in acc.iter_mut().zip(self.increment(i)) {
                *a += db;
            }
            out.push(acc.clone());
        }
        out
    }

    /// Keeps every `factor`-th grid point and sums the increments in between.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::Argument(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.steps()
            )));
        }
        let n = self.steps() / factor;
        let grid: Vec<f64> = (0..=n).map(|k| self.grid[k * factor]).collect();
        let mut increments = vec![0.0; n * self.dim];
        for k in 0..n {
            for j in 0..factor {
                let src = self.increment(k * factor + j);
                for (o, v) in increments[k * self.dim..(k + 1) * self.dim]
                    .iter_mut()
                    .zip(src)
                {
                    *o += v;
                }
            }
        }
        Ok(Self {
            grid,
            increments,
            ..self.clone()
        })
    }

    /// The path up to the grid point at `t_end`.
    pub fn restrict(&self, t_end: f64) -> Result<Self> {
        let tol = 1e-9 * t_end.abs().max(1.0);
        let idx = self
            .grid
            .iter()
            .position(|t| (t - t_end).abs() <= tol)
            .ok_or_else(|| {
                Error::Argument(format!("t = {t_end} is not a grid point of the noise path"))
            })?;
        if idx == 0 {
            return Err(Error::Argument(
                "cannot restrict a path to its start point".into(),
            ));
        }
        let end = self.grid[idx];
        Ok(Self {
            grid: self.grid[..=idx].to_vec(),
            increments: self.increments[..idx * self.dim].to_vec(),
            jumps: self
                .jumps
                .iter()
                .copied()
                .filter(|j| j.time <= end)
                .collect(),
            ..self.clone()
        })
    }

    /// Inserts every jump time into the grid, splitting the Brownian
    /// increments linearly exactly as the integrator does.
    pub fn refine_at_jumps(&self) -> Self {
        let mut grid = vec![self.grid[0]];
        let mut increments = Vec::with_capacity(self.increments.len());
        for_each_segment(&[self], |seg| {
            if let Segment::Flow { t1, step, frac, .. } = seg {
                grid.push(t1);
                increments.extend(self.increment(step).iter().map(|v| v * frac));
            }
            Ok(true)
        })
        .expect("single path walk cannot fail");
        Self {
            grid,
            increments,
            ..self.clone()
        }
    }

    /// Image of the path under `s = ε t`: the Brownian increments are scaled by
    /// `√ε` so the Brownian part stays standard in the new clock, the drift
    /// keeps its rate, and jumps keep their sizes at the rescaled times.
    pub fn time_rescaled(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Argument(format!(
                "rescaling factor must be > 0, got {epsilon}"
            )));
        }
        let root = epsilon.sqrt();
        Ok(Self {
            grid: self.grid.iter().map(|t| t * epsilon).collect(),
            increments: self.increments.iter().map(|v| v * root).collect(),
            jumps: self
                .jumps
                .iter()
                .map(|j| JumpEvent {
                    time: j.time * epsilon,
                    ..*j
                })
                .collect(),
            ..self.clone()
        })
    }
}

fn uniform_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Argument(format!(
            "horizon must be > 0, got {horizon}"
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Argument(format!("step must be > 0, got {step}")));
    }
    let n = (horizon / step).round().max(1.0) as usize;
    let h = horizon / n as f64;
    if (h - step).abs() > 1e-9 * step {
        return Err(Error::Argument(format!(
            "horizon {horizon} is not an integer multiple of step {step}"
        )));
    }
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    grid[n] = horizon;
    Ok(grid)
}

/// Reusable sampler for one triplet; precomputes the covariance factor and
/// the jump tables.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    dim: usize,
    factor: Option<Vec<f64>>,
    drift: Vec<f64>,
    jumps: JumpSpec,
    cumulative_rates: Vec<f64>,
    total_rate: f64,
}

impl NoiseSampler {
    pub fn new(triplet: &LevyTriplet) -> Result<Self> {
        triplet.validate()?;
        let (cumulative_rates, total_rate) = match &triplet.jumps {
            JumpSpec::None => (Vec::new(), 0.0),
            JumpSpec::DiscreteAtoms { atoms, .. } => {
                let mut acc = 0.0;
                let c: Vec<f64> = atoms
                    .iter()
                    .map(|a| {
                        acc += a.rate;
                        acc
                    })
                    .collect();
                (c, acc)
            }
            JumpSpec::CompoundPoisson { rate, .. } => (Vec::new(), *rate),
        };
        Ok(Self {
            dim: triplet.dim(),
            factor: triplet.brownian_factor(),
            drift: triplet.effective_drift(),
            jumps: triplet.jumps.clone(),
            cumulative_rates,
            total_rate,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, horizon: f64, step: f64, seed: StreamId) -> Result<NoisePath> {
        let grid = uniform_grid(horizon, step)?;
        let d = self.dim;
        let n = grid.len() - 1;
        let mut increments = vec![0.0; n * d];
        if let Some(s) = &self.factor {
            let mut rng = seed.rng(Substream::Brownian);
            let mut z = vec![0.0; d];
            for i in 0..n {
                let root = (grid[i + 1] - grid[i]).sqrt();
                z.iter_mut()
                    .for_each(|v| *v = StandardNormal.sample(&mut rng));
                let out = &mut increments[i * d..(i + 1) * d];
                for (r, o) in out.iter_mut().enumerate() {
                    *o = root * (0..d).map(|c| s[r * d + c] * z[c]).sum::<f64>();
                }
            }
        }
        let jumps = self.sample_jumps(horizon, seed)?;
        Ok(NoisePath {
            grid,
            increments,
            jumps,
            drift: self.drift.clone(),
            dim: d,
            seed: Some(seed),
        })
    }

    fn sample_jumps(&self, horizon: f64, seed: StreamId) -> Result<Vec<JumpEvent>> {
        let mut events = Vec::new();
        if self.total_rate <= 0.0 {
            return Ok(events);
        }
        let mut rng = seed.rng(Substream::Jumps);
        let gaps = Exp::new(self.total_rate).map_err(|e| Error::Validation(e.to_string()))?;
        let delta = self.jumps.truncation();
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut rng);
            if t > horizon {
                break;
            }
            match &self.jumps {
                JumpSpec::None => unreachable!(),
                JumpSpec::DiscreteAtoms { atoms, .. } => {
                    let u = rng.random::<f64>() * self.total_rate;
                    let k = self
                        .cumulative_rates
                        .partition_point(|c| *c <= u)
                        .min(atoms.len() - 1);
                    let atom = &atoms[k];
                    if norm(&atom.size) < delta {
                        continue;
                    }
                    for (component, &size) in atom.size.iter().enumerate() {
                        if size != 0.0 {
                            events.push(JumpEvent {
                                time: t,
                                component,
                                size,
                            });
                        }
                    }
                }
                JumpSpec::CompoundPoisson { distribution, .. } => {
                    let component = if self.dim > 1 {
                        rng.random_range(0..self.dim)
                    } else {
                        0
                    };
                    let size = distribution.sample(&mut rng);
                    if size.abs() < delta {
                        continue;
                    }
                    events.push(JumpEvent {
                        time: t,
                        component,
                        size,
                    });
                }
            }
        }
        Ok(events)
    }
}

/// Samples one driving path of `triplet` on `[0, horizon]`.
pub fn sample_noise_path(
    triplet: &LevyTriplet,
    horizon: f64,
    step: f64,
    seed: StreamId,
) -> Result<NoisePath> {
    NoiseSampler::new(triplet)?.sample(horizon, step, seed)
}

/// One piece of the refined grid walked by the integrator.
#[derive(Debug)]
pub(crate) enum Segment<'a> {
    /// Continuous motion over `[t0, t1]`. `dl` holds `drift·dt + ΔB` for every
    /// component of every path, concatenated in path order.
    /// `frac` is the share of the Brownian increment of grid step `step`.
    Flow {
        t0: f64,
        t1: f64,
        dt: f64,
        step: usize,
        frac: f64,
        dl: &'a [f64],
    },
    Jump {
        path: usize,
        index: usize,
        event: JumpEvent,
    },
}

/// Walks the common grid of `paths`, refined by all their jump times.
///
/// Within a grid step the Brownian increment is split linearly at jump
/// times. A jump at `τ` is applied after the flow that ends at `τ`
/// (left-limit convention); simultaneous jumps are ordered by path and then
/// by component. The callback returns `false` to stop early.
pub(crate) fn for_each_segment(
    paths: &[&NoisePath],
    mut f: impl FnMut(Segment<'_>) -> Result<bool>,
) -> Result<()> {
    let first = paths
        .first()
        .ok_or_else(|| Error::Argument("no noise paths".into()))?;
    for p in &paths[1..] {
        if p.grid != first.grid {
            return Err(Error::Argument(
                "noise paths do not share a time grid".into(),
            ));
        }
    }
    let total: usize = paths.iter().map(|p| p.dim).sum();
    let mut dl = vec![0.0; total];
    let mut cursors = vec![0usize; paths.len()];
    let mut pending: Vec<(f64, usize, usize)> = Vec::new();
    let grid = &first.grid;

    for n in 0..grid.len() - 1 {
        let (ta, tb) = (grid[n], grid[n + 1]);
        let width = tb - ta;
        pending.clear();
        for (pi, p) in paths.iter().enumerate() {
            while cursors[pi] < p.jumps.len() && p.jumps[cursors[pi]].time <= tb {
                pending.push((p.jumps[cursors[pi]].time, pi, cursors[pi]));
                cursors[pi] += 1;
            }
        }
        pending.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut t = ta;
        let mut k = 0;
        loop {
            let next = if k < pending.len() { pending[k].0 } else { tb };
            if next > t {
                let fa = (t - ta) / width;
                let fb = (next - ta) / width;
                let dt = next - t;
                let frac = fb - fa;
                let mut off = 0;
                for p in paths {
                    let db = p.increment(n);
                    for c in 0..p.dim {
                        dl[off + c] = p.drift[c] * dt + db[c] * frac;
                    }
                    off += p.dim;
                }
                if !f(Segment::Flow {
                    t0: t,
                    t1: next,
                    dt,
                    step: n,
                    frac,
                    dl: &dl,
                })? {
                    return Ok(());
                }
                t = next;
            }
            if k >= pending.len() {
                break;
            }
            let (_, pi, idx) = pending[k];
            if !f(Segment::Jump {
                path: pi,
                index: idx,
                event: paths[pi].jumps[idx],
            })? {
                return Ok(());
            }
            k += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn uniform_cp(rate: f64) -> JumpSpec {
        JumpSpec::compound_poisson(
            rate,
            JumpDistribution::Uniform {
                low: -1.0,
                high: 1.0,
            },
        )
    }

    #[test]
    fn null_noise_has_no_increments_or_jumps() {
        let t = LevyTriplet::pure_jump(1, JumpSpec::None);
        let p = sample_noise_path(&t, 1.0, 0.01, StreamId::new(0, 0)).unwrap();
        assert!(p.jumps().is_empty());
        assert!((0..p.steps()).all(|i| p.increment(i)[0] == 0.0));
        assert_eq!(p.steps(), 100);
    }

    #[test]
    fn argument_errors() {
        let t = LevyTriplet::standard(1, JumpSpec::None);
        assert!(matches!(
            sample_noise_path(&t, 0.0, 0.1, StreamId::new(0, 0)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            sample_noise_path(&t, 1.0, -0.1, StreamId::new(0, 0)),
            Err(Error::Argument(_))
        ));
        let bad = LevyTriplet::new(vec![0.0], vec![vec![-1.0]], JumpSpec::None);
        assert!(matches!(
            sample_noise_path(&bad, 1.0, 0.1, StreamId::new(0, 0)),
            Err(Error::Validation(_))
        ));
        let asym = LevyTriplet::new(
            vec![0.0; 2],
            vec![vec![1.0, 0.5], vec![0.0, 1.0]],
            JumpSpec::None,
        );
        assert!(asym.validate().is_err());
        let bad_rate = LevyTriplet::pure_jump(1, JumpSpec::atoms([(vec![1.0], 0.0)]));
        assert!(bad_rate.validate().is_err());
    }

    #[test]
    fn same_seed_same_path() {
        let t = LevyTriplet::standard(2, uniform_cp(3.0));
        let a = sample_noise_path(&t, 2.0, 0.01, StreamId::new(11, 5)).unwrap();
        let b = sample_noise_path(&t, 2.0, 0.01, StreamId::new(11, 5)).unwrap();
        let c = sample_noise_path(&t, 2.0, 0.01, StreamId::new(11, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn poisson_count_mean() {
        // Oracle: N(10) ~ Poisson(20), so the mean over 1e4 seeds has SE √20/100.
        let t = LevyTriplet::pure_jump(1, uniform_cp(2.0));
        let sampler = NoiseSampler::new(&t).unwrap();
        let counts: Vec<f64> = (0..10_000)
            .map(|s| {
                sampler
                    .sample(10.0, 1.0, StreamId::new(1, s))
                    .unwrap()
                    .jumps()
                    .len() as f64
            })
            .collect();
        let (m, _) = stats::mean_se(&counts);
        assert!(
            (m - 20.0).abs() < 3.0 * 20f64.sqrt() / 100.0,
            "mean count {m}"
        );
    }

    #[test]
    fn brownian_variance_at_one() {
        let t = LevyTriplet::standard(1, JumpSpec::None);
        let sampler = NoiseSampler::new(&t).unwrap();
        let b1: Vec<f64> = (0..10_000)
            .map(|s| {
                let p = sampler.sample(1.0, 0.01, StreamId::new(2, s)).unwrap();
                (0..p.steps()).map(|i| p.increment(i)[0]).sum::<f64>()
            })
            .collect();
        let var = stats::sample_variance(&b1);
        // SE of the sample variance of a Gaussian is σ²√(2/(n−1)).
        assert!(
            (var - 1.0).abs() < 3.0 * (2.0f64 / 9_999.0).sqrt(),
            "variance {var}"
        );
    }

    #[test]
    fn correlated_covariance_is_reproduced() {
        let cov = vec![vec![2.0, 0.6], vec![0.6, 0.5]];
        let t = LevyTriplet::new(vec![0.0; 2], cov.clone(), JumpSpec::None);
        let sampler = NoiseSampler::new(&t).unwrap();
        let h = 0.1;
        let n = 10_000;
        let mut s = [[0.0; 2]; 2];
        let mut samples = Vec::new();
        for k in 0..n {
            let p = sampler.sample(h, h, StreamId::new(3, k)).unwrap();
            let v = p.increment(0).to_vec();
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] += v[i] * v[j];
                }
            }
            samples.push(v);
        }
        for i in 0..2 {
            for j in 0..2 {
                let est = s[i][j] / n as f64;
                let target = cov[i][j] * h;
                // Var(XY) = A_ii A_jj + A_ij² for zero-mean Gaussians.
                let se = ((cov[i][i] * cov[j][j] + cov[i][j].powi(2)) * h * h / n as f64).sqrt();
                assert!(
                    (est - target).abs() < 5.0 * se,
                    "entry ({i},{j}): {est} vs {target}"
                );
            }
        }
    }

    #[test]
    fn jump_second_moments() {
        assert_eq!(jump_second_moment(&JumpSpec::None).unwrap(), 0.0);
        assert_eq!(
            jump_second_moment(&JumpSpec::atoms([(vec![1.0], 3.0)])).unwrap(),
            3.0
        );
        let m = jump_second_moment(&uniform_cp(2.0)).unwrap();
        assert!((m - 2.0 / 3.0).abs() < 1e-14);
        let cauchy = JumpSpec::compound_poisson(1.0, JumpDistribution::Cauchy { scale: 1.0 });
        assert!(matches!(jump_second_moment(&cauchy), Err(Error::Domain(_))));
    }

    #[test]
    fn truncated_second_moment_uses_the_retained_band() {
        let spec = JumpSpec::CompoundPoisson {
            rate: 2.0,
            distribution: JumpDistribution::Uniform {
                low: -1.0,
                high: 1.0,
            },
            truncation: 0.5,
            gaussian_correction: false,
        };
        // 2 · ∫_{0.5<|z|<1} z²/2 dz = 2 · (1 − 1/8)/3
        let m = jump_second_moment(&spec).unwrap();
        assert!((m - 2.0 * 0.875 / 3.0).abs() < 1e-13, "{m}");
        assert!((spec.intensity() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn characteristic_exponent_examples() {
        assert_eq!(characteristic_exponent_real(&JumpSpec::None, &[1.3]), 0.0);
        let u = 0.7;
        let spec = JumpSpec::atoms([(vec![std::f64::consts::PI / u], 1.0)]);
        assert!((characteristic_exponent_real(&spec, &[u]) + 2.0).abs() < 1e-14);
        for spec in [
            uniform_cp(3.0),
            JumpSpec::compound_poisson(
                1.0,
                JumpDistribution::Normal {
                    mean: 0.2,
                    std_dev: 0.5,
                },
            ),
            JumpSpec::compound_poisson(1.0, JumpDistribution::Laplace { scale: 0.3 }),
            JumpSpec::compound_poisson(1.0, JumpDistribution::Cauchy { scale: 0.3 }),
        ] {
            assert_eq!(characteristic_exponent_real(&spec, &[0.0, 0.0]), 0.0);
        }
    }

    #[test]
    fn characteristic_exponent_matches_quadrature_under_truncation() {
        let dist = JumpDistribution::Laplace { scale: 0.4 };
        let spec = JumpSpec::CompoundPoisson {
            rate: 1.5,
            distribution: dist.clone(),
            truncation: 0.1,
            gaussian_correction: false,
        };
        let u = 2.3;
        let direct = 1.5
            * (crate::quadrature::integrate(
                |z| ((u * z).cos() - 1.0) * (-z / 0.4).exp() / 0.8,
                0.1,
                40.0,
                400,
            ) * 2.0);
        let got = characteristic_exponent_real(&spec, &[u]);
        assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
    }

    #[test]
    fn compensator_of_one_sided_atoms() {
        let t = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 4.0), (vec![2.0], 1.0)]));
        // Only the atom below one is compensated.
        assert_eq!(t.effective_drift(), vec![-2.0]);
    }

    #[test]
    fn atom_vectors_expand_in_component_order() {
        let spec = JumpSpec::atoms([(vec![0.3, -0.2], 5.0)]);
        let t = LevyTriplet::pure_jump(2, spec);
        let p = sample_noise_path(&t, 4.0, 0.5, StreamId::new(4, 0)).unwrap();
        assert!(!p.jumps().is_empty());
        for pair in p.jumps().chunks(2) {
            assert_eq!(pair[0].time, pair[1].time);
            assert_eq!((pair[0].component, pair[1].component), (0, 1));
        }
    }

    #[test]
    fn coarsen_and_restrict() {
        let t = LevyTriplet::standard(2, uniform_cp(2.0));
        let p = sample_noise_path(&t, 1.0, 0.125, StreamId::new(5, 0)).unwrap();
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.steps(), 2);
        let direct: f64 = (0..4).map(|i| p.increment(i)[1]).sum();
        assert_eq!(c.increment(0)[1], direct);
        assert_eq!(c.jumps(), p.jumps());
        assert!(p.coarsen(3).is_err());
        let r = p.restrict(0.5).unwrap();
        assert_eq!(r.steps(), 4);
        assert!(r.jumps().iter().all(|j| j.time <= 0.5));
        assert!(p.restrict(0.3).is_err());
    }

    #[test]
    fn refinement_puts_jumps_on_the_grid() {
        let t = LevyTriplet::standard(1, uniform_cp(5.0));
        let p = sample_noise_path(&t, 2.0, 0.1, StreamId::new(6, 1)).unwrap();
        let r = p.refine_at_jumps();
        for j in r.jumps() {
            assert!(r.grid().contains(&j.time));
        }
        let total: f64 = (0..p.steps()).map(|i| p.increment(i)[0]).sum();
        let refined: f64 = (0..r.steps()).map(|i| r.increment(i)[0]).sum();
        assert!((total - refined).abs() < 1e-12);
    }

    #[test]
    fn from_parts_rejects_bad_jumps() {
        let grid = vec![0.0, 0.5, 1.0];
        let inc = vec![0.0, 0.0];
        let late = vec![JumpEvent {
            time: 1.5,
            component: 0,
            size: 1.0,
        }];
        assert!(NoisePath::from_parts(grid.clone(), inc.clone(), late, vec![0.0], None).is_err());
        let unordered = vec![
            JumpEvent {
                time: 0.7,
                component: 0,
                size: 1.0,
            },
            JumpEvent {
                time: 0.6,
                component: 0,
                size: 1.0,
            },
        ];
        assert!(NoisePath::from_parts(grid, inc, unordered, vec![0.0], None).is_err());
    }

    #[test]
    fn gaussian_correction_adds_small_jump_variance() {
        let spec = JumpSpec::CompoundPoisson {
            rate: 4.0,
            distribution: JumpDistribution::Uniform {
                low: -1.0,
                high: 1.0,
            },
            truncation: 0.5,
            gaussian_correction: true,
        };
        let small = spec.small_jump_variance(1)[0];
        // 4 · ∫_{|z|<0.5} z²/2 dz = 4 · (0.125/3)
        assert!((small - 4.0 * 0.125 / 3.0).abs() < 1e-13);
        let t = LevyTriplet::pure_jump(1, spec);
        let factor = t.brownian_factor().unwrap();
        assert!((factor[0] * factor[0] - small).abs() < 1e-13);
    }
}
