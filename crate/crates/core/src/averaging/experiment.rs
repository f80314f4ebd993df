use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::chart::{torus_average, ActionAngleChart};
use super::perturbation::PerturbationFields;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::hamiltonian::HamiltonianSystem;
use crate::levy::{LevyTriplet, NoisePath, NoiseSampler};
use crate::marcus::{self, Channel, IntegratorConfig, SdeModel};
use crate::rng::StreamId;
use crate::stats;

/// `Q^{g_i}(h)`: the torus average of `g_i = ω²(V_i, K)` over the fiber at
/// integral level `h`.
pub fn averaged_rhs(
    sys: &HamiltonianSystem,
    chart: &ActionAngleChart,
    pert: &PerturbationFields,
    h: &[f64],
    points: usize,
) -> Result<Vec<f64>> {
    let d = chart.d();
    let actions = chart.actions_for_integrals(h)?;
    let mut acc = vec![0.0; d];
    let mut err = None;
    let total = points.pow(d as u32) as f64;
    torus_average(d, points, |theta| {
        match chart
            .from_action_angle(theta, &actions)
            .and_then(|x| pert.transversal_rates(sys, &x))
        {
            Ok(g) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
            Err(e) => err = Some(e),
        }
        0.0
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(acc.into_iter().map(|a| a / total).collect())
}

/// `ω²(V_i, F)` at one point of the fiber over `h`; for admissible `F` this
/// depends on `h` only.
fn action_coefficients(
    sys: &HamiltonianSystem,
    chart: &ActionAngleChart,
    field: &dyn VectorField,
    h: &[f64],
) -> Result<Vec<f64>> {
    let d = chart.d();
    let actions = chart.actions_for_integrals(h)?;
    let x = chart.from_action_angle(&vec![0.0; d], &actions)?;
    let mut v = vec![0.0; x.len()];
    field.eval(&x, &mut v);
    let mut grad = vec![0.0; x.len()];
    (1..=d)
        .map(|i| {
            sys.hamiltonian(i)?.gradient(&x, &mut grad);
            Ok(grad.iter().zip(&v).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// The averaged system as vector fields on the integral space.
struct AveragedDrift<'a> {
    sys: &'a HamiltonianSystem,
    chart: &'a ActionAngleChart,
    pert: &'a PerturbationFields,
    points: usize,
}

impl VectorField for AveragedDrift<'_> {
    fn dim(&self) -> usize {
        self.chart.d()
    }

    fn eval(&self, h: &[f64], out: &mut [f64]) {
        match averaged_rhs(self.sys, self.chart, self.pert, h, self.points) {
            Ok(v) => out.copy_from_slice(&v),
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    }
}

struct ActionCoefficient<'a> {
    sys: &'a HamiltonianSystem,
    chart: &'a ActionAngleChart,
    field: &'a dyn VectorField,
}

impl VectorField for ActionCoefficient<'_> {
    fn dim(&self) -> usize {
        self.chart.d()
    }

    fn eval(&self, h: &[f64], out: &mut [f64]) {
        match action_coefficients(self.sys, self.chart, self.field, h) {
            Ok(v) => out.copy_from_slice(&v),
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    }
}

/// A path `h(t)` of the averaged system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragedPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl AveragedPath {
    /// Value at `t`, linear between stored times.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let idx = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        match (self.times.get(idx), self.times.get(idx + 1)) {
            (Some(&a), Some(&b)) if b > a && t > a => {
                let w = ((t - a) / (b - a)).min(1.0);
                for (o, (x, y)) in out
                    .iter_mut()
                    .zip(self.values[idx].iter().zip(&self.values[idx + 1]))
                {
                    *o = x + w * (y - x);
                }
            }
            _ => out.copy_from_slice(&self.values[idx]),
        }
    }
}

/// Integrates `dH̄ = Q^g(H̄) dt + Σ F_{I,k}(H̄) ∘ dB̃^k + Σ G_{I,k}(H̄) ◇ dL̃^k`
/// on `noise2` (in the slow clock).
#[allow(clippy::too_many_arguments)]
pub fn solve_averaged(
    sys: &HamiltonianSystem,
    chart: &ActionAngleChart,
    pert: &PerturbationFields,
    h0: &[f64],
    noise2: &NoisePath,
    cfg: &IntegratorConfig,
    points: usize,
) -> Result<AveragedPath> {
    chart.actions_for_integrals(h0)?;
    let d = chart.d();
    let drift = AveragedDrift {
        sys,
        chart,
        pert,
        points,
    };
    let fs: Vec<ActionCoefficient> = pert
        .f
        .iter()
        .map(|f| ActionCoefficient {
            sys,
            chart,
            field: f.as_ref(),
        })
        .collect();
    let gs: Vec<ActionCoefficient> = pert
        .g
        .iter()
        .map(|g| ActionCoefficient {
            sys,
            chart,
            field: g.as_ref(),
        })
        .collect();
    let mut channels = Vec::new();
    for (k, f) in fs.iter().enumerate() {
        channels.push(Channel {
            cont: Some(f as &dyn VectorField),
            jump: None,
            scale: 1.0,
            path: 0,
            component: k,
        });
    }
    for (k, g) in gs.iter().enumerate() {
        channels.push(Channel {
            cont: None,
            jump: Some(g as &dyn VectorField),
            scale: 1.0,
            path: 0,
            component: k,
        });
    }
    let model = SdeModel {
        dim: d,
        drifts: vec![(&drift as &dyn VectorField, 1.0)],
        channels,
    };
    let mut path = AveragedPath {
        times: Vec::new(),
        values: Vec::new(),
    };
    let mut bad = None;
    marcus::integrate_model(&model, &[noise2], h0, cfg, false, |t, h, kind| {
        if h.iter().any(|v| !v.is_finite()) {
            bad = Some(t);
            return false;
        }
        if let marcus::StepKind::Jump { .. } = kind {
            if let Some(last) = path.values.last_mut() {
                last.copy_from_slice(h);
                return true;
            }
        }
        path.times.push(t);
        path.values.push(h.to_vec());
        true
    })?;
    if let Some(t) = bad {
        return Err(Error::Singularity(format!(
            "averaged system left the chart domain at t = {t}"
        )));
    }
    Ok(path)
}

/// Whether `F` and `G` leave the integrals untouched on a few fibers, in
/// which case the averaged system is deterministic.
fn averaged_noise_vanishes(
    sys: &HamiltonianSystem,
    chart: &ActionAngleChart,
    pert: &PerturbationFields,
    h0: &[f64],
) -> Result<bool> {
    for scale in [1.0, 1.3, 0.8] {
        let h: Vec<f64> = h0.iter().map(|v| v * scale).collect();
        for f in pert.f.iter().chain(&pert.g) {
            if action_coefficients(sys, chart, f.as_ref(), &h)?
                .iter()
                .any(|v| v.abs() > 1e-14)
            {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Parameters of an ε-sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragingParams {
    /// Slow-clock horizon `t`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Order of the sup-error norm.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Action box `U₀ = {I_min ≤ Iᵢ ≤ I_max}`.
    #[serde(default = "default_i_min")]
    pub i_min: f64,
    #[serde(default = "default_i_max")]
    pub i_max: f64,
    /// Radius `r` of the integral ball; half the box radius when absent.
    #[serde(default)]
    pub r: Option<f64>,
    /// `δ` of the exit-probability row; `r/4` when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_points")]
    pub quadrature_points: usize,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_epsilons() -> Vec<f64> {
    vec![0.1, 0.05, 0.02, 0.01]
}
fn default_paths() -> usize {
    500
}
fn default_p() -> f64 {
    2.0
}
fn default_i_min() -> f64 {
    0.05
}
fn default_i_max() -> f64 {
    4.0
}
fn default_points() -> usize {
    16
}

impl Default for AveragingParams {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            epsilons: default_epsilons(),
            paths: default_paths(),
            p: default_p(),
            i_min: default_i_min(),
            i_max: default_i_max(),
            r: None,
            delta: None,
            quadrature_points: default_points(),
        }
    }
}

impl AveragingParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!(
                "averaging.horizon must be > 0, got {}",
                self.horizon
            ));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return bad("averaging.epsilons must lie in (0, 1]".into());
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return bad("averaging.epsilons must be strictly descending".into());
        }
        if self.paths < 2 {
            return bad("averaging.paths must be >= 2".into());
        }
        if !(self.p >= 2.0) {
            return bad(format!("averaging.p must be >= 2, got {}", self.p));
        }
        if !(self.i_min > 0.0 && self.i_max > self.i_min) {
            return bad("averaging needs 0 < i_min < i_max".into());
        }
        if self.quadrature_points < 8 {
            return bad("averaging.quadrature_points must be >= 8".into());
        }
        for (name, v) in [("r", self.r), ("delta", self.delta)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return bad(format!("averaging.{name} must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// One ε of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragingRow {
    pub epsilon: f64,
    pub horizon: f64,
    pub p: f64,
    /// `E[sup_{s≤t∧τ} maxᵢ|Hᵢ^ε(s) − H̄ᵢ(s)|^p]^{1/p}`
    pub sup_error_mean: f64,
    pub sup_error_se: f64,
    /// Same norm for each integral separately.
    pub component_errors: Vec<f64>,
    /// Empirical `P(τ^ε < τ_δ)`.
    pub exit_prob: f64,
    /// Fraction of paths leaving `U₀` before the horizon.
    pub exit_fraction: f64,
    /// Mean of `τ^ε ∧ t`.
    pub mean_exit_time: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragingTrend {
    /// Log-log slope of the sup-error against ε.
    pub exponent: f64,
    /// Number of consecutive rows where the error grows as ε shrinks.
    pub inversions: usize,
    /// At most one inversion, and that one within two standard errors.
    pub monotone: bool,
    /// Error at the smallest ε below half the error at the largest.
    pub halved: bool,
    /// Exit probability never grows as ε shrinks.
    pub exit_non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragingReport {
    pub rows: Vec<AveragingRow>,
    pub trend: AveragingTrend,
    pub r: f64,
    pub delta: f64,
    /// `τ_δ` of the averaged path, `None` if it stays inside past the horizon.
    pub tau_delta: Option<f64>,
}

impl AveragingReport {
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(
            w,
            "epsilon,horizon,p,sup_error_mean,sup_error_se,exit_prob,paths"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epsilon, r.horizon, r.p, r.sup_error_mean, r.sup_error_se, r.exit_prob, r.paths
            )?;
        }
        Ok(())
    }

    /// JSON summary with every number written as a string.
    pub fn summary_json(&self) -> serde_json::Value {
        fn s(v: f64) -> serde_json::Value {
            serde_json::Value::String(v.to_string())
        }
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "epsilon": s(r.epsilon),
                    "horizon": s(r.horizon),
                    "p": s(r.p),
                    "sup_error_mean": s(r.sup_error_mean),
                    "sup_error_se": s(r.sup_error_se),
                    "component_errors": r.component_errors.iter().map(|v| s(*v)).collect::<Vec<_>>(),
                    "exit_prob": s(r.exit_prob),
                    "exit_fraction": s(r.exit_fraction),
                    "mean_exit_time": s(r.mean_exit_time),
                    "paths": r.paths.to_string(),
                })
            })
            .collect();
        serde_json::json!({
            "rows": rows,
            "r": s(self.r),
            "delta": s(self.delta),
            "tau_delta": self.tau_delta.map(s),
            "trend": {
                "exponent": s(self.trend.exponent),
                "inversions": self.trend.inversions.to_string(),
                "monotone": self.trend.monotone,
                "halved": self.trend.halved,
                "exit_non_increasing": self.trend.exit_non_increasing,
            }
        })
    }
}

struct PathResult {
    sup: Vec<f64>,
    exit: Option<f64>,
    tau_delta: Option<f64>,
}

fn in_box(actions: &[f64], lo: f64, hi: f64) -> bool {
    actions.iter().all(|&a| a >= lo && a <= hi)
}

fn first_departure(path: &AveragedPath, h0: &[f64], level: f64) -> Option<f64> {
    path.times
        .iter()
        .zip(&path.values)
        .find(|(_, h)| h.iter().zip(h0).any(|(a, b)| (a - b).abs() >= level))
        .map(|(t, _)| *t)
}

/// The ε-sweep: for each ε, `paths` runs of `Y^ε` over the fast horizon
/// `t/ε` compared with the averaged system on the same second noise.
///
/// The sweep reuses the path seeds across ε. Runs stop at the first exit
/// from the action box.
#[allow(clippy::too_many_arguments)]
pub fn run_averaging_experiment(
    sys: &HamiltonianSystem,
    chart: &ActionAngleChart,
    pert: &PerturbationFields,
    noise: &LevyTriplet,
    y0: &[f64],
    params: &AveragingParams,
    cfg: &IntegratorConfig,
    master_seed: u64,
    ensemble: &Ensemble,
) -> Result<AveragingReport> {
    params.validate()?;
    cfg.validate()?;
    let d = chart.d();
    if sys.channels() != d || sys.n() != d {
        return Err(Error::ChannelMismatch {
            system: sys.channels(),
            noise: d,
        });
    }
    if noise.dim() != d {
        return Err(Error::ChannelMismatch {
            system: d,
            noise: noise.dim(),
        });
    }
    let actions0 = chart.actions(y0);
    if !in_box(&actions0, params.i_min, params.i_max) {
        return Err(Error::Domain(format!(
            "y0 has actions {actions0:?} outside the box U0"
        )));
    }
    let box_radius = actions0
        .iter()
        .map(|a| (a - params.i_min).min(params.i_max - a))
        .fold(f64::INFINITY, f64::min);
    let r = params.r.unwrap_or(0.5 * box_radius);
    let delta = params.delta.unwrap_or(0.25 * r);
    let h0 = sys.first_integrals(y0);
    let deterministic = averaged_noise_vanishes(sys, chart, pert, &h0)?;

    let sampler = NoiseSampler::new(noise)?;
    let sampler2 = NoiseSampler::new(&pert.noise)?;
    let fields: Vec<_> = (0..=d).map(|k| sys.field(k)).collect::<Result<_>>()?;
    let base = SdeModel::hamiltonian(&fields);
    let perturbation = pert.as_perturbation();
    let avg_cfg = IntegratorConfig::new(cfg.step);

    // The deterministic averaged path is shared by every run.
    let shared = if deterministic {
        let zero = NoisePath::zero(d, params.horizon, cfg.step)?;
        Some(solve_averaged(
            sys,
            chart,
            pert,
            &h0,
            &zero,
            &avg_cfg,
            params.quadrature_points,
        )?)
    } else {
        None
    };
    let tau_delta_shared = shared
        .as_ref()
        .and_then(|p| first_departure(p, &h0, r - delta));

    let n_eps = params.epsilons.len();
    let results = ensemble.map(n_eps * params.paths, |flat| {
        let e = params.epsilons[flat as usize / params.paths];
        let path = flat % params.paths as u64;
        let fast_horizon = params.horizon / e;
        let seed = StreamId::new(master_seed, path);
        let main = sampler.sample(fast_horizon, cfg.step, seed)?;
        let second = sampler2.sample(fast_horizon, cfg.step, seed.with_lane(1))?;
        let owned;
        let (avg, tau_delta) = match &shared {
            Some(p) => (p, tau_delta_shared),
            None => {
                owned = solve_averaged(
                    sys,
                    chart,
                    pert,
                    &h0,
                    &second.time_rescaled(e)?,
                    &IntegratorConfig::new(cfg.step * e),
                    params.quadrature_points,
                )?;
                let td = first_departure(&owned, &h0, r - delta);
                (&owned, td)
            }
        };
        let model = perturbation.extend(&base, e);
        let mut sup = vec![0.0f64; d];
        let mut exit = None;
        let mut hbar = vec![0.0; d];
        marcus::integrate_model(&model, &[&main, &second], y0, cfg, false, |t, x, _| {
            let s = e * t;
            avg.interpolate(s, &mut hbar);
            for (i, sup_i) in sup.iter_mut().enumerate() {
                let h = sys.energy(i + 1, x).unwrap_or(f64::NAN);
                *sup_i = sup_i.max((h - hbar[i]).abs());
            }
            if !in_box(&chart.actions(x), params.i_min, params.i_max) {
                exit = Some(s);
                return false;
            }
            true
        })?;
        Ok(PathResult {
            sup,
            exit,
            tau_delta,
        })
    })?;

    let mut rows = Vec::with_capacity(n_eps);
    for (k, &e) in params.epsilons.iter().enumerate() {
        let chunk = &results[k * params.paths..(k + 1) * params.paths];
        if chunk.iter().all(|r| r.exit == Some(0.0)) {
            return Err(Error::Domain("every path starts outside U0".into()));
        }
        let pth = |v: &[f64]| -> (f64, f64) {
            let (m, se) = stats::mean_se(v);
            if m > 0.0 {
                let root = m.powf(1.0 / params.p);
                (root, se * root / (params.p * m))
            } else {
                (0.0, 0.0)
            }
        };
        let joint: Vec<f64> = chunk
            .iter()
            .map(|r| r.sup.iter().fold(0.0f64, |a, b| a.max(*b)).powf(params.p))
            .collect();
        let (err, se) = pth(&joint);
        let component_errors = (0..d)
            .map(|i| {
                pth(&chunk
                    .iter()
                    .map(|r| r.sup[i].powf(params.p))
                    .collect::<Vec<_>>())
                .0
            })
            .collect();
        let n = chunk.len() as f64;
        let early = chunk
            .iter()
            .filter(|r| match (r.exit, r.tau_delta) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                (None, _) => false,
            })
            .count();
        rows.push(AveragingRow {
            epsilon: e,
            horizon: params.horizon,
            p: params.p,
            sup_error_mean: err,
            sup_error_se: se,
            component_errors,
            exit_prob: early as f64 / n,
            exit_fraction: chunk.iter().filter(|r| r.exit.is_some()).count() as f64 / n,
            mean_exit_time: chunk
                .iter()
                .map(|r| r.exit.unwrap_or(params.horizon).min(params.horizon))
                .sum::<f64>()
                / n,
            paths: chunk.len(),
        });
    }
    let trend = fit_trend(&rows);
    Ok(AveragingReport {
        rows,
        trend,
        r,
        delta,
        tau_delta: tau_delta_shared,
    })
}

/// Trend of a sweep whose rows are sorted by ε descending.
pub fn fit_trend(rows: &[AveragingRow]) -> AveragingTrend {
    let mut inversions = 0;
    let mut within = true;
    for w in rows.windows(2) {
        if w[1].sup_error_mean > w[0].sup_error_mean {
            inversions += 1;
            let band = 2.0 * (w[0].sup_error_se.powi(2) + w[1].sup_error_se.powi(2)).sqrt();
            within &= w[1].sup_error_mean - w[0].sup_error_mean <= band;
        }
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sup_error_mean).collect();
    let exponent = if rows.len() >= 2 && ys.iter().all(|y| *y > 0.0) {
        stats::loglog_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    let halved = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if rows.len() >= 2 => b.sup_error_mean < 0.5 * a.sup_error_mean,
        _ => false,
    };
    AveragingTrend {
        exponent,
        inversions,
        monotone: inversions == 0 || (inversions == 1 && within),
        halved,
        exit_non_increasing: rows.windows(2).all(|w| w[1].exit_prob <= w[0].exit_prob),
    }
}
