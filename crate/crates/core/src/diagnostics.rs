//! Numerical certificates for the structural properties of Marcus
//! Hamiltonian flows, and the exact linear-oscillator oracles.

use serde::{Deserialize, Serialize, Serializer};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::hamiltonian::{apply_j, HamiltonianSystem};
use crate::levy::{
    for_each_segment, jump_second_moment, JumpSpec, LevyTriplet, NoisePath, NoiseSampler, Segment,
};
use crate::marcus::{self, IntegratorConfig, JumpAnnotation, Provenance, Trajectory};
use crate::quadrature;
use crate::rng::StreamId;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum JacobianMethod {
    /// Central differences of the flow with step `h`, all runs on the same path.
    FiniteDifference { h: f64 },
    /// Linearized flow propagated with the state.
    VariationalSde,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowJacobian {
    pub dim: usize,
    /// Row-major `∂X_t/∂x₀`.
    pub matrix: Vec<f64>,
    pub method: JacobianMethod,
    pub base_point: Vec<f64>,
    pub time: f64,
}

impl FlowJacobian {
    pub fn identity(x0: &[f64], method: JacobianMethod, time: f64) -> Self {
        let m = x0.len();
        Self {
            dim: m,
            matrix: (0..m * m)
                .map(|k| if k / m == k % m { 1.0 } else { 0.0 })
                .collect(),
            method,
            base_point: x0.to_vec(),
            time,
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }
}

/// Flow Jacobian of the Marcus Hamiltonian SDE at time `t` on a fixed path.
pub fn flow_jacobian(
    sys: &HamiltonianSystem,
    noise: &NoisePath,
    x0: &[f64],
    t: f64,
    method: JacobianMethod,
    cfg: &IntegratorConfig,
) -> Result<FlowJacobian> {
    if (t - noise.start()).abs() <= 1e-12 * t.abs().max(1.0) {
        return Ok(FlowJacobian::identity(x0, method, t));
    }
    let noise = noise.restrict(t)?;
    let m = x0.len();
    let matrix = match method {
        JacobianMethod::VariationalSde => marcus::integrate_with_tangent(sys, &noise, x0, cfg)?
            .tangent
            .expect("tangent requested"),
        JacobianMethod::FiniteDifference { h } => {
            if !(h > 0.0) {
                return Err(Error::Argument(format!(
                    "finite-difference step must be > 0, got {h}"
                )));
            }
            let mut jac = vec![0.0; m * m];
            let mut x = x0.to_vec();
            for j in 0..m {
                x[j] = x0[j] + h;
                let plus = marcus::integrate(sys, &noise, &x, cfg)?;
                x[j] = x0[j] - h;
                let minus = marcus::integrate(sys, &noise, &x, cfg)?;
                x[j] = x0[j];
                for i in 0..m {
                    jac[i * m + j] = (plus.final_state()[i] - minus.final_state()[i]) / (2.0 * h);
                }
            }
            jac
        }
    };
    Ok(FlowJacobian {
        dim: m,
        matrix,
        method,
        base_point: x0.to_vec(),
        time: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymplecticDefect {
    pub value: f64,
    pub step: Option<f64>,
    pub h: Option<f64>,
}

/// `‖DΦᵀ J DΦ − J‖_F`.
pub fn symplectic_defect(jac: &FlowJacobian) -> SymplecticDefect {
    let m = jac.dim;
    let a = &jac.matrix;
    // J·DΦ, column by column
    let mut jphi = vec![0.0; m * m];
    let mut col = vec![0.0; m];
    let mut out = vec![0.0; m];
    for c in 0..m {
        for r in 0..m {
            col[r] = a[r * m + c];
        }
        apply_j(&col, &mut out);
        for r in 0..m {
            jphi[r * m + c] = out[r];
        }
    }
    let n = m / 2;
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            let v: f64 = (0..m).map(|k| a[k * m + i] * jphi[k * m + j]).sum();
            let jij = if i < n && j == i + n {
                1.0
            } else if i >= n && j + n == i {
                -1.0
            } else {
                0.0
            };
            sum += (v - jij).powi(2);
        }
    }
    let h = match jac.method {
        JacobianMethod::FiniteDifference { h } => Some(h),
        JacobianMethod::VariationalSde => None,
    };
    SymplecticDefect {
        value: sum.sqrt(),
        step: None,
        h,
    }
}

/// Rate `c = ΔL/Δt` over a flow segment of the scalar noise.
fn segment_rate(dl: &[f64], dt: f64) -> f64 {
    dl[0] / dt
}

/// Exact flow of `dq = p dt`, `dp = −q dt − σ c dt` over time `u`.
fn oscillator_segment(z: [f64; 2], u: f64, sigma: f64, c: f64) -> [f64; 2] {
    let (s, co) = u.sin_cos();
    [
        co * z[0] + s * z[1] - sigma * c * (1.0 - co),
        -s * z[0] + co * z[1] - sigma * c * s,
    ]
}

fn check_scalar_noise(noise: &NoisePath) -> Result<()> {
    if noise.dim() != 1 {
        return Err(Error::ChannelMismatch {
            system: 1,
            noise: noise.dim(),
        });
    }
    Ok(())
}

/// Exact solution of the linear oscillator on the path, by propagating each
/// linear piece of the noise through the closed-form affine flow.
///
/// With `t_grid = None` the states are reported on the noise grid refined by
/// its jump times; otherwise at the requested times (inside the horizon,
/// increasing), where a time equal to a jump time reports the post-jump state.
pub fn exact_linear_oscillator(
    noise: &NoisePath,
    x0: [f64; 2],
    sigma: f64,
    t_grid: Option<&[f64]>,
) -> Result<Trajectory> {
    check_scalar_noise(noise)?;
    if let Some(ts) = t_grid {
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Argument("t_grid must be increasing".into()));
        }
        if ts
            .iter()
            .any(|&t| t < noise.start() || t > noise.horizon() + 1e-12)
        {
            return Err(Error::Argument("t_grid leaves the noise horizon".into()));
        }
    }
    let provenance = Provenance {
        system: "linear-oscillator-exact".into(),
        seed: noise.seed(),
        config_hash: "exact".into(),
    };
    let mut traj = Trajectory::new(2, provenance);
    let mut z = x0;
    let mut next = 0usize;
    let want = |k: usize| t_grid.map(|ts| ts.get(k).copied());
    match want(0) {
        None => traj.push(noise.start(), &z),
        Some(_) => {
            while let Some(Some(t)) = want(next) {
                if t > noise.start() {
                    break;
                }
                traj.push(t, &z);
                next += 1;
            }
        }
    }
    for_each_segment(&[noise], |seg| {
        match seg {
            Segment::Flow { t0, t1, dt, dl, .. } => {
                let c = segment_rate(dl, dt);
                if t_grid.is_some() {
                    while let Some(Some(t)) = want(next) {
                        if t >= t1 {
                            break;
                        }
                        let zt = oscillator_segment(z, t - t0, sigma, c);
                        traj.push(t, &zt);
                        next += 1;
                    }
                }
                z = oscillator_segment(z, dt, sigma, c);
                match want(next) {
                    None => traj.push(t1, &z),
                    Some(Some(t)) if (t - t1).abs() <= 1e-12 * t1.abs().max(1.0) => {
                        traj.push(t, &z);
                        next += 1;
                    }
                    _ => {}
                }
            }
            Segment::Jump { index, event, .. } => {
                let pre = z;
                z[1] -= sigma * event.size;
                let on_grid = traj
                    .times()
                    .last()
                    .is_some_and(|&t| (t - event.time).abs() <= 1e-12 * t.abs().max(1.0));
                if on_grid {
                    traj.overwrite_last(&z);
                    traj.annotate(JumpAnnotation {
                        time_index: traj.len() - 1,
                        path: 0,
                        noise_index: index,
                        component: 0,
                        size: event.size,
                        pre: pre.to_vec(),
                        post: z.to_vec(),
                    });
                }
            }
        }
        Ok(true)
    })?;
    Ok(traj)
}

/// `E(q² + p²)` at time `t` from `(1, 0)`, `1 + σ²t + σ²t ∫|z|² ν(dz)`,
/// valid when the driving process is a martingale.
pub fn oscillator_moment_law(sigma: f64, t: f64, spec: &JumpSpec) -> Result<f64> {
    let m2 = jump_second_moment(spec)?;
    Ok(1.0 + sigma * sigma * t + sigma * sigma * t * m2)
}

/// Monte Carlo estimate of `E(q² + p²)` at each of `times`, simulating the
/// oscillator with the Marcus integrator. Returns `(mean, standard error)`.
pub fn oscillator_moment_mc(
    sigma: f64,
    triplet: &LevyTriplet,
    times: &[f64],
    paths: usize,
    master_seed: u64,
    cfg: &IntegratorConfig,
    ensemble: &Ensemble,
) -> Result<Vec<(f64, f64)>> {
    let sys = crate::hamiltonian::linear_oscillator(sigma)?;
    let sampler = NoiseSampler::new(triplet)?;
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let per_path = ensemble.map(paths, |i| {
        let noise = sampler.sample(horizon, cfg.step, StreamId::new(master_seed, i))?;
        let fields = [sys.field(0)?, sys.field(1)?];
        let model = marcus::SdeModel::hamiltonian(&fields);
        let mut out = vec![f64::NAN; times.len()];
        let mut last = (noise.start(), vec![1.0, 0.0]);
        marcus::integrate_model(&model, &[&noise], &[1.0, 0.0], cfg, false, |t, x, _| {
            last = (t, x.to_vec());
            for (k, &tk) in times.iter().enumerate() {
                if (t - tk).abs() <= 1e-9 * tk.max(1.0) {
                    out[k] = x[0] * x[0] + x[1] * x[1];
                }
            }
            true
        })?;
        Ok(out)
    })?;
    Ok((0..times.len())
        .map(|k| {
            let col: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
            stats::mean_se(&col)
        })
        .collect())
}

/// Walks a trajectory against the noise that produced it, passing the state
/// before and after every flow segment and every jump.
enum Walk<'a> {
    Flow {
        a: &'a [f64],
        b: &'a [f64],
        dt: f64,
        dl: &'a [f64],
    },
    Jump {
        pre: &'a [f64],
        ann: &'a JumpAnnotation,
    },
}

fn walk_trajectory(
    traj: &Trajectory,
    noise: &NoisePath,
    mut visit: impl FnMut(Walk<'_>) -> Result<()>,
) -> Result<()> {
    if traj.provenance().seed != noise.seed() {
        return Err(Error::Provenance(
            "trajectory and noise path have different seeds".into(),
        ));
    }
    let mut i = 0usize;
    let mut cur = traj.state(0).to_vec();
    let mut jump_cursor = 0usize;
    let jumps = traj.jumps();
    for_each_segment(&[noise], |seg| {
        match seg {
            Segment::Flow { t1, dt, dl, .. } => {
                i += 1;
                if i >= traj.len() || (traj.times()[i] - t1).abs() > 1e-12 * t1.abs().max(1.0) {
                    return Err(Error::Provenance(format!(
                        "trajectory is not on the grid of the noise path at t = {t1}"
                    )));
                }
                let next = match jumps.get(jump_cursor) {
                    Some(a) if a.time_index == i => a.pre.clone(),
                    _ => traj.state(i).to_vec(),
                };
                visit(Walk::Flow {
                    a: &cur,
                    b: &next,
                    dt,
                    dl,
                })?;
                cur = next;
            }
            Segment::Jump { index, .. } => {
                let a = jumps.get(jump_cursor).ok_or_else(|| {
                    Error::Provenance(
                        "trajectory lacks jump annotations (record_jumps = false?)".into(),
                    )
                })?;
                if a.noise_index != index || a.time_index != i {
                    return Err(Error::Provenance(format!(
                        "jump {index} does not match the trajectory"
                    )));
                }
                visit(Walk::Jump { pre: &cur, ann: a })?;
                cur = a.post.clone();
                jump_cursor += 1;
            }
        }
        Ok(true)
    })?;
    if i + 1 != traj.len() {
        return Err(Error::Provenance(
            "trajectory is longer than the noise path".into(),
        ));
    }
    Ok(())
}

/// RK4 flow of the jump field augmented with `Δz ∫₀¹ (p·∂H/∂p − H)(ξ(s)) ds`.
fn jump_action(
    sys: &HamiltonianSystem,
    k: usize,
    x: &[f64],
    dz: f64,
    substeps: usize,
) -> Result<f64> {
    let h = sys.hamiltonian(k)?.clone();
    let f = sys.field(k)?;
    let m = x.len();
    let n = m / 2;
    let rhs = |y: &[f64], dy: &mut [f64]| -> f64 {
        f.eval(y, dy);
        let pq: f64 = (0..n).map(|i| y[n + i] * dy[i]).sum();
        dy.iter_mut().for_each(|v| *v *= dz);
        dz * (pq - h.value(y))
    };
    let steps = substeps.max(1) * dz.abs().max(1.0).ceil() as usize;
    let dt = 1.0 / steps as f64;
    let mut y = x.to_vec();
    let mut acc = 0.0;
    let mut k_ = vec![vec![0.0; m]; 4];
    let mut tmp = vec![0.0; m];
    for _ in 0..steps {
        let mut a = [0.0; 4];
        for s in 0..4 {
            let c = [0.0, 0.5, 0.5, 1.0][s];
            for i in 0..m {
                tmp[i] = y[i] + if s == 0 { 0.0 } else { c * dt * k_[s - 1][i] };
            }
            a[s] = rhs(&tmp, &mut k_[s]);
        }
        for i in 0..m {
            y[i] += dt / 6.0 * (k_[0][i] + 2.0 * k_[1][i] + 2.0 * k_[2][i] + k_[3][i]);
        }
        acc += dt / 6.0 * (a[0] + 2.0 * a[1] + 2.0 * a[2] + a[3]);
    }
    Ok(acc)
}

/// Stochastic action `∫(p·q̇ − H₀)dt − Σ_k ∫H_k ◇ dL^k` along a simulated
/// trajectory. Continuous pieces use the trapezoid rule on the refined grid
/// (midpoint `p` against `Δq`); each jump contributes the action accumulated
/// along the same jump flow the integrator used.
pub fn action_integral(
    traj: &Trajectory,
    sys: &HamiltonianSystem,
    noise: &NoisePath,
) -> Result<f64> {
    if noise.dim() != sys.channels() {
        return Err(Error::ChannelMismatch {
            system: sys.channels(),
            noise: noise.dim(),
        });
    }
    let n = sys.n();
    let d = sys.channels();
    let mut total = 0.0;
    walk_trajectory(traj, noise, |w| {
        match w {
            Walk::Flow { a, b, dt, dl } => {
                let pdq: f64 = (0..n)
                    .map(|i| 0.5 * (a[n + i] + b[n + i]) * (b[i] - a[i]))
                    .sum();
                let h0 = 0.5 * (sys.energy(0, a).unwrap() + sys.energy(0, b).unwrap());
                let noise_term: f64 = (1..=d)
                    .map(|k| {
                        0.5 * (sys.energy(k, a).unwrap() + sys.energy(k, b).unwrap()) * dl[k - 1]
                    })
                    .sum();
                total += pdq - h0 * dt - noise_term;
            }
            Walk::Jump { pre, ann } => {
                total += jump_action(
                    sys,
                    ann.component + 1,
                    pre,
                    ann.size,
                    marcus::DEFAULT_JUMP_SUBSTEPS,
                )?;
            }
        }
        Ok(())
    })?;
    Ok(total)
}

/// Integrated residual of Hamilton's (equivalently the stochastic
/// Euler–Lagrange) equations along a trajectory: the largest deviation of
/// `x(t) − x(0)` from the trapezoid quadrature of `V₀ dt + Σ V_k ∘ dL^k_c`
/// plus the recomputed jump increments.
pub fn euler_lagrange_residual(
    traj: &Trajectory,
    sys: &HamiltonianSystem,
    noise: &NoisePath,
) -> Result<f64> {
    let m = sys.state_dim();
    let d = sys.channels();
    let fields: Vec<_> = (0..=d).map(|k| sys.field(k)).collect::<Result<_>>()?;
    let mut predicted = traj.state(0).to_vec();
    let x0 = traj.state(0).to_vec();
    let mut worst = 0.0f64;
    let (mut fa, mut fb) = (vec![0.0; m], vec![0.0; m]);
    let mut step = 0usize;
    walk_trajectory(traj, noise, |w| {
        match w {
            Walk::Flow { a, b, dt, dl } => {
                for (k, f) in fields.iter().enumerate() {
                    let w = if k == 0 { dt } else { dl[k - 1] };
                    f.eval(a, &mut fa);
                    f.eval(b, &mut fb);
                    for i in 0..m {
                        predicted[i] += 0.5 * w * (fa[i] + fb[i]);
                    }
                }
                step += 1;
                let dev = (0..m)
                    .map(|i| ((b[i] - x0[i]) - (predicted[i] - x0[i])).abs())
                    .fold(0.0, f64::max);
                worst = worst.max(dev);
            }
            Walk::Jump { pre, ann } => {
                let post = marcus::marcus_jump_map(
                    &fields[ann.component + 1],
                    pre,
                    ann.size,
                    marcus::DEFAULT_JUMP_SUBSTEPS,
                )?;
                for i in 0..m {
                    predicted[i] += post[i] - pre[i];
                }
            }
        }
        Ok(())
    })?;
    Ok(worst)
}

/// Result of the generating-function check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratingFunctionReport {
    pub q0: f64,
    pub q1: f64,
    pub t1: f64,
    pub p0: f64,
    pub p1: f64,
    pub action: f64,
    pub ds_dq0: f64,
    pub ds_dq1: f64,
    /// `|∂S/∂q₀ + p₀|`
    pub residual_q0: f64,
    /// `|∂S/∂q₁ − p₁|`
    pub residual_q1: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const CONJUGATE_THRESHOLD: f64 = 1e-6;

/// Endpoint of the oscillator from `z` on the first `t1` of the path and the
/// stochastic action along the way, both exact on the piecewise-linear path.
fn oscillator_action(noise: &NoisePath, sigma: f64, z0: [f64; 2]) -> Result<([f64; 2], f64)> {
    let mut z = z0;
    let mut action = 0.0;
    for_each_segment(&[noise], |seg| {
        match seg {
            Segment::Flow { dt, dl, .. } => {
                let c = segment_rate(dl, dt);
                let start = z;
                // p q̇ − H₀ − H₁ L̇ with q̇ = p on the exact solution
                let integrand = |u: f64| {
                    let [x, y] = oscillator_segment(start, u, sigma, c);
                    y * y - 0.5 * (x * x + y * y) - sigma * c * x
                };
                action +=
                    quadrature::integrate(integrand, 0.0, dt, 1.max((dt / 0.25).ceil() as usize));
                z = oscillator_segment(z, dt, sigma, c);
            }
            Segment::Jump { event, .. } => {
                // q is frozen along the jump flow, so only −H₁ Δz contributes.
                action -= sigma * z[0] * event.size;
                z[1] -= sigma * event.size;
            }
        }
        Ok(true)
    })?;
    Ok((z, action))
}

/// Solves the two-point problem `q(0) = q₀`, `q(t₁) = q₁` for the linear
/// oscillator on a fixed path and checks `∂S/∂q₀ = −p₀`, `∂S/∂q₁ = p₁` by
/// central differences.
pub fn generating_function_check(
    sigma: f64,
    noise: &NoisePath,
    q0: f64,
    q1: f64,
    t1: f64,
    tolerance: f64,
) -> Result<GeneratingFunctionReport> {
    check_scalar_noise(noise)?;
    let sin_t1 = (t1 - noise.start()).sin();
    if sin_t1.abs() < CONJUGATE_THRESHOLD {
        return Err(Error::ConjugatePoint {
            sin_t1,
            threshold: CONJUGATE_THRESHOLD,
        });
    }
    let noise = noise.restrict(t1)?;
    let (eta, _) = oscillator_action(&noise, sigma, [0.0, 0.0])?;
    let cos_t1 = (t1 - noise.start()).cos();
    let solve = |a: f64, b: f64| -> Result<(f64, [f64; 2], f64)> {
        let p0 = (b - a * cos_t1 - eta[0]) / sin_t1;
        let (end, s) = oscillator_action(&noise, sigma, [a, p0])?;
        Ok((p0, end, s))
    };
    let (p0, end, action) = solve(q0, q1)?;
    let h = 1e-3 * q0.abs().max(q1.abs()).max(1.0);
    let ds_dq0 = (solve(q0 + h, q1)?.2 - solve(q0 - h, q1)?.2) / (2.0 * h);
    let ds_dq1 = (solve(q0, q1 + h)?.2 - solve(q0, q1 - h)?.2) / (2.0 * h);
    let residual_q0 = (ds_dq0 + p0).abs();
    let residual_q1 = (ds_dq1 - end[1]).abs();
    Ok(GeneratingFunctionReport {
        q0,
        q1,
        t1,
        p0,
        p1: end[1],
        action,
        ds_dq0,
        ds_dq1,
        residual_q0,
        residual_q1,
        tolerance,
        pass: residual_q0 <= tolerance && residual_q1 <= tolerance,
    })
}

fn as_string<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

/// `{check, value, tolerance, pass, provenance}`; numbers are written as
/// strings so that no precision is lost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRecord {
    pub check: String,
    #[serde(serialize_with = "as_string")]
    pub value: f64,
    #[serde(serialize_with = "as_string")]
    pub tolerance: f64,
    pub pass: bool,
    pub provenance: String,
}

impl DiagnosticRecord {
    pub fn new(
        check: impl Into<String>,
        value: f64,
        tolerance: f64,
        pass: bool,
        provenance: impl Into<String>,
    ) -> Self {
        Self {
            check: check.into(),
            value,
            tolerance,
            pass,
            provenance: provenance.into(),
        }
    }

    /// Passes when `value ≤ tolerance`.
    pub fn at_most(
        check: impl Into<String>,
        value: f64,
        tolerance: f64,
        provenance: impl Into<String>,
    ) -> Self {
        Self {
            check: check.into(),
            value,
            tolerance,
            pass: value <= tolerance,
            provenance: provenance.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{harmonic_family, linear_oscillator};
    use crate::levy::{sample_noise_path, JumpDistribution, JumpEvent};
    use std::f64::consts::PI;

    fn zero(horizon: f64, step: f64) -> NoisePath {
        NoisePath::zero(1, horizon, step).unwrap()
    }

    #[test]
    fn identity_at_time_zero_and_rotation_at_quarter_period() {
        let sys = linear_oscillator(0.0).unwrap();
        let noise = zero(PI / 2.0, PI / 2000.0);
        let cfg = IntegratorConfig::new(PI / 2000.0);
        let j0 = flow_jacobian(
            &sys,
            &noise,
            &[1.0, 0.0],
            0.0,
            JacobianMethod::VariationalSde,
            &cfg,
        )
        .unwrap();
        assert_eq!(j0.matrix, vec![1.0, 0.0, 0.0, 1.0]);
        for method in [
            JacobianMethod::VariationalSde,
            JacobianMethod::FiniteDifference { h: 1e-5 },
        ] {
            let j = flow_jacobian(&sys, &noise, &[1.0, 0.0], PI / 2.0, method, &cfg).unwrap();
            for (a, b) in j.matrix.iter().zip([0.0, 1.0, -1.0, 0.0]) {
                assert!((a - b).abs() < 1e-6, "{method:?}: {:?}", j.matrix);
            }
        }
    }

    #[test]
    fn additive_noise_does_not_enter_the_jacobian() {
        let sys = linear_oscillator(0.8).unwrap();
        let t = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 2.0)]));
        let noise = sample_noise_path(&t, 1.0, 1e-3, StreamId::new(4, 4)).unwrap();
        let j = flow_jacobian(
            &sys,
            &noise,
            &[0.3, 0.2],
            1.0,
            JacobianMethod::VariationalSde,
            &IntegratorConfig::new(1e-3),
        )
        .unwrap();
        let (s, c) = 1.0f64.sin_cos();
        for (a, b) in j.matrix.iter().zip([c, s, -s, c]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn defects_of_exact_maps() {
        let id = FlowJacobian::identity(&[0.0; 4], JacobianMethod::VariationalSde, 0.0);
        assert_eq!(symplectic_defect(&id).value, 0.0);
        let (s, c) = 0.7f64.sin_cos();
        let rot = FlowJacobian {
            matrix: vec![c, s, -s, c],
            ..FlowJacobian::identity(&[0.0; 2], JacobianMethod::VariationalSde, 1.0)
        };
        assert!(symplectic_defect(&rot).value < 1e-15);
        let stretch = FlowJacobian {
            matrix: vec![2.0, 0.0, 0.0, 1.0],
            ..rot.clone()
        };
        assert!((symplectic_defect(&stretch).value - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_oscillator_without_noise_is_a_rotation() {
        let noise = zero(3.0, 0.01);
        let traj = exact_linear_oscillator(&noise, [1.0, 0.0], 1.0, None).unwrap();
        for (i, &t) in traj.times().iter().enumerate() {
            assert!((traj.state(i)[0] - t.cos()).abs() < 1e-12);
            assert!((traj.state(i)[1] + t.sin()).abs() < 1e-12);
        }
        let t = LevyTriplet::standard(1, JumpSpec::atoms([(vec![1.0], 3.0)]));
        let noisy = sample_noise_path(&t, 3.0, 0.01, StreamId::new(1, 1)).unwrap();
        let silent =
            exact_linear_oscillator(&noisy, [0.4, -0.2], 0.0, Some(&[0.5, 1.7, 3.0])).unwrap();
        for (i, &t) in silent.times().iter().enumerate() {
            let (s, c) = t.sin_cos();
            assert!((silent.state(i)[0] - (0.4 * c - 0.2 * s)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_jump_response() {
        // One jump Δz at s: x(t) shifts by −σ sin(t − s) Δz afterwards.
        let (s, dz, sigma) = (0.7, 0.9, 1.3);
        let noise = NoisePath::from_parts(
            (0..=200).map(|i| i as f64 * 0.01).collect(),
            vec![0.0; 200],
            vec![JumpEvent {
                time: s,
                component: 0,
                size: dz,
            }],
            vec![0.0],
            None,
        )
        .unwrap();
        let ts = [0.5, 1.0, 1.5, 2.0];
        let traj = exact_linear_oscillator(&noise, [1.0, 0.0], sigma, Some(&ts)).unwrap();
        for (i, &t) in ts.iter().enumerate() {
            let shift = if t > s {
                -sigma * (t - s).sin() * dz
            } else {
                0.0
            };
            assert!(
                (traj.state(i)[0] - (t.cos() + shift)).abs() < 1e-12,
                "t = {t}"
            );
        }
    }

    #[test]
    fn exact_and_integrated_agree() {
        let sys = linear_oscillator(1.0).unwrap();
        let t = LevyTriplet::standard(
            1,
            JumpSpec::compound_poisson(
                2.0,
                JumpDistribution::Uniform {
                    low: -1.0,
                    high: 1.0,
                },
            ),
        );
        let noise = sample_noise_path(&t, 2.0, 1e-3, StreamId::new(5, 0)).unwrap();
        let exact = exact_linear_oscillator(&noise, [1.0, 0.0], 1.0, None).unwrap();
        let num =
            marcus::integrate(&sys, &noise, &[1.0, 0.0], &IntegratorConfig::new(1e-3)).unwrap();
        assert_eq!(exact.len(), num.len());
        let err = (0..num.len())
            .map(|i| {
                (0..2)
                    .map(|k| (exact.state(i)[k] - num.state(i)[k]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "error {err}");
    }

    #[test]
    fn moment_law_values() {
        assert_eq!(
            oscillator_moment_law(0.0, 7.0, &JumpSpec::None).unwrap(),
            1.0
        );
        assert_eq!(
            oscillator_moment_law(1.0, 2.0, &JumpSpec::None).unwrap(),
            3.0
        );
        assert_eq!(
            oscillator_moment_law(1.0, 1.0, &JumpSpec::atoms([(vec![0.5], 4.0)])).unwrap(),
            3.0
        );
        let cauchy = JumpSpec::compound_poisson(1.0, JumpDistribution::Cauchy { scale: 1.0 });
        assert!(oscillator_moment_law(1.0, 1.0, &cauchy).is_err());
    }

    #[test]
    fn action_of_static_and_periodic_orbits() {
        use crate::field::{Polynomial, ScalarField};
        use std::sync::Arc;
        let h0: Arc<dyn ScalarField> = Arc::new(Polynomial::new(2, [(vec![0, 0], 2.5)]).unwrap());
        let h1: Arc<dyn ScalarField> = Arc::new(Polynomial::zero(2));
        let sys = HamiltonianSystem::new("static", 1, vec![h0, h1], None).unwrap();
        let noise = NoisePath::zero(1, 2.0, 0.1).unwrap();
        let traj =
            marcus::integrate(&sys, &noise, &[0.3, 0.4], &IntegratorConfig::new(0.1)).unwrap();
        assert!((action_integral(&traj, &sys, &noise).unwrap() + 5.0).abs() < 1e-12);

        let osc = harmonic_family(&[1.0]).unwrap();
        let h = 2.0 * PI / 4000.0;
        let noise = NoisePath::zero(1, 2.0 * PI, h).unwrap();
        let traj = marcus::integrate(&osc, &noise, &[1.0, 0.0], &IntegratorConfig::new(h)).unwrap();
        assert!(action_integral(&traj, &osc, &noise).unwrap().abs() < 1e-5);
    }

    #[test]
    fn classical_action_through_the_endpoints() {
        let sys = linear_oscillator(1.0).unwrap();
        let (q0, t1) = (0.8, 1.1);
        let h = 1e-4;
        let noise = zero(t1, h);
        let p0 = 0.35;
        let traj = marcus::integrate(&sys, &noise, &[q0, p0], &IntegratorConfig::new(h)).unwrap();
        let q1 = traj.final_state()[0];
        let classical = ((q0 * q0 + q1 * q1) * t1.cos() - 2.0 * q0 * q1) / (2.0 * t1.sin());
        let s = action_integral(&traj, &sys, &noise).unwrap();
        assert!((s - classical).abs() < 1e-6, "{s} vs {classical}");
        let q1 = q0 * t1.cos() + p0 * t1.sin();
        let classical = ((q0 * q0 + q1 * q1) * t1.cos() - 2.0 * q0 * q1) / (2.0 * t1.sin());
        let (_, exact) = oscillator_action(&noise, 1.0, [q0, p0]).unwrap();
        assert!((exact - classical).abs() < 1e-12, "{exact} vs {classical}");
    }

    #[test]
    fn generating_function_zero_noise() {
        let noise = zero(PI / 2.0, PI / 200.0);
        let r = generating_function_check(1.0, &noise, 1.0, 0.0, PI / 2.0, 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.p0.abs() < 1e-12);
        let noise = zero(1.3, 0.01);
        let sym = generating_function_check(1.0, &noise, 0.6, 0.6, 1.3, 1e-6).unwrap();
        assert!((sym.p0 + sym.p1).abs() < 1e-12);
        let near = zero(PI, PI / 100.0);
        assert!(matches!(
            generating_function_check(1.0, &near, 1.0, 0.0, PI, 1e-6),
            Err(Error::ConjugatePoint { .. })
        ));
    }

    #[test]
    fn generating_function_noisy() {
        let t = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 4.0)]));
        let noise = sample_noise_path(&t, 2.0, 0.01, StreamId::new(8, 3)).unwrap();
        let r = generating_function_check(1.0, &noise, 0.4, -0.9, 2.0, 1e-4).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn euler_lagrange_residual_shrinks_with_step() {
        let sys = linear_oscillator(1.0).unwrap();
        let t = LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 4.0)]));
        let fine = sample_noise_path(&t, 1.0, 1e-4, StreamId::new(2, 2)).unwrap();
        let r: Vec<f64> = [8usize, 4, 2, 1]
            .iter()
            .map(|&k| {
                let noise = fine.coarsen(k).unwrap();
                let cfg = IntegratorConfig::new(1e-4 * k as f64);
                let traj = marcus::integrate(&sys, &noise, &[1.0, 0.0], &cfg).unwrap();
                euler_lagrange_residual(&traj, &sys, &noise).unwrap()
            })
            .collect();
        assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
        assert!(r[3] < 1e-3);
    }

    #[test]
    fn record_json_keeps_digits() {
        let rec = DiagnosticRecord::at_most("symplectic-defect", 0.1 + 0.2, 1e-3, "test");
        assert!(!rec.pass);
        assert!(rec.to_json().contains("\"0.30000000000000004\""));
    }
}
