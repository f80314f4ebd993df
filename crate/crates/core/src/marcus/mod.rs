//! Marcus-form SDE integration.
//!
//! Between jumps the Stratonovich equation is advanced with Heun's scheme or
//! an implicit midpoint rule solved by fixed-point sweeps; each jump applies
//! the time-one flow of the channel's jump field scaled by the jump size.

mod jump_map;
mod trajectory;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::hamiltonian::{HamiltonianField, HamiltonianSystem};
use crate::levy::{for_each_segment, JumpEvent, NoisePath, Segment};

pub use jump_map::{marcus_jump_map, marcus_jump_map_with_jacobian, DEFAULT_JUMP_SUBSTEPS};
pub use trajectory::{JumpAnnotation, Provenance, Trajectory};

use jump_map::{diverged, substeps_for, FlowScratch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    StratonovichHeun,
    /// Implicit midpoint, solved by `midpoint_sweeps` fixed-point sweeps
    /// (fewer if successive iterates agree to `midpoint_tol`).
    StratonovichMidpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub step: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_substeps")]
    pub jump_map_substeps: usize,
    #[serde(default = "yes")]
    pub record_jumps: bool,
    #[serde(default = "default_sweeps")]
    pub midpoint_sweeps: usize,
    #[serde(default)]
    pub midpoint_tol: f64,
}

fn default_substeps() -> usize {
    DEFAULT_JUMP_SUBSTEPS
}
fn default_sweeps() -> usize {
    4
}
fn yes() -> bool {
    true
}

impl IntegratorConfig {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            scheme: Scheme::StratonovichHeun,
            jump_map_substeps: DEFAULT_JUMP_SUBSTEPS,
            record_jumps: true,
            midpoint_sweeps: default_sweeps(),
            midpoint_tol: 0.0,
        }
    }

    pub fn midpoint(step: f64) -> Self {
        Self {
            scheme: Scheme::StratonovichMidpoint,
            ..Self::new(step)
        }
    }

    /// Midpoint iterated to convergence at roundoff level.
    pub fn converged_midpoint(step: f64) -> Self {
        Self {
            midpoint_sweeps: 60,
            midpoint_tol: 1e-15,
            ..Self::midpoint(step)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Validation(format!(
                "integrator.step must be > 0, got {}",
                self.step
            )));
        }
        if self.jump_map_substeps == 0 {
            return Err(Error::Validation(
                "integrator.jump_map_substeps must be >= 1".into(),
            ));
        }
        if self.midpoint_sweeps == 0 {
            return Err(Error::Validation(
                "integrator.midpoint_sweeps must be >= 1".into(),
            ));
        }
        if !(self.midpoint_tol >= 0.0) {
            return Err(Error::Validation(
                "integrator.midpoint_tol must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Short digest identifying the configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

/// One noise channel of an [`SdeModel`].
///
/// `cont` multiplies the continuous increment (drift slope plus Brownian
/// part) of component `component` of noise path `path` in the Stratonovich
/// sense; `jump` is flowed for `scale · Δz` at each jump of that component.
#[derive(Clone, Copy)]
pub struct Channel<'a> {
    pub cont: Option<&'a dyn VectorField>,
    pub jump: Option<&'a dyn VectorField>,
    pub scale: f64,
    pub path: usize,
    pub component: usize,
}

/// `dX = Σ cᵢ Fᵢ(X) dt + Σ_channels scale·V ◇ dL`.
#[derive(Clone)]
pub struct SdeModel<'a> {
    pub dim: usize,
    pub drifts: Vec<(&'a dyn VectorField, f64)>,
    pub channels: Vec<Channel<'a>>,
}

/// What the observer is being shown.
#[derive(Debug, Clone, Copy)]
pub enum StepKind<'a> {
    Start,
    Flow,
    /// The state passed alongside is the post-jump value.
    Jump {
        path: usize,
        index: usize,
        event: JumpEvent,
        pre: &'a [f64],
    },
}

/// Final state of a run, plus the propagated tangent when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub time: f64,
    pub state: Vec<f64>,
    /// Row-major `∂X_t/∂x₀`.
    pub tangent: Option<Vec<f64>>,
    /// `false` when the observer stopped the run early.
    pub completed: bool,
}

struct Workspace {
    m: usize,
    offsets: Vec<usize>,
    f0: Vec<f64>,
    f1: Vec<f64>,
    tmp: Vec<f64>,
    y: Vec<f64>,
    y_next: Vec<f64>,
    mid: Vec<f64>,
    jac: Vec<f64>,
    jac_tmp: Vec<f64>,
    dy: Vec<f64>,
    dy_next: Vec<f64>,
    dmid: Vec<f64>,
    prod: Vec<f64>,
    flow: FlowScratch,
}

impl Workspace {
    fn new(m: usize, paths: &[&NoisePath]) -> Self {
        let mut offsets = Vec::with_capacity(paths.len());
        let mut acc = 0;
        for p in paths {
            offsets.push(acc);
            acc += p.dim();
        }
        let v = || vec![0.0; m];
        let mm = || vec![0.0; m * m];
        Self {
            m,
            offsets,
            f0: v(),
            f1: v(),
            tmp: v(),
            y: v(),
            y_next: v(),
            mid: v(),
            jac: mm(),
            jac_tmp: mm(),
            dy: mm(),
            dy_next: mm(),
            dmid: mm(),
            prod: mm(),
            flow: FlowScratch::default(),
        }
    }
}

fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize) {
    for i in 0..m {
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..m {
                s += a[i * m + k] * b[k * m + j];
            }
            out[i * m + j] = s;
        }
    }
}

impl<'a> SdeModel<'a> {
    /// The Marcus Hamiltonian system: `V₀ dt + Σ V_k ◇ dL^k` with `L` the
    /// single noise path, component `k−1` driving channel `k`.
    pub fn hamiltonian(fields: &'a [HamiltonianField]) -> Self {
        let dim = fields[0].dim();
        let channels = fields[1..]
            .iter()
            .enumerate()
            .map(|(k, f)| Channel {
                cont: Some(f as &dyn VectorField),
                jump: Some(f as &dyn VectorField),
                scale: 1.0,
                path: 0,
                component: k,
            })
            .collect();
        Self {
            dim,
            drifts: vec![(&fields[0] as &dyn VectorField, 1.0)],
            channels,
        }
    }

    fn check(&self, paths: &[&NoisePath], x0: &[f64]) -> Result<()> {
        if x0.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(
                "initial state has non-finite entries".into(),
            ));
        }
        for ch in &self.channels {
            let p = paths.get(ch.path).ok_or_else(|| {
                Error::Argument(format!("channel uses missing noise path {}", ch.path))
            })?;
            if ch.component >= p.dim() {
                return Err(Error::ChannelMismatch {
                    system: ch.component + 1,
                    noise: p.dim(),
                });
            }
        }
        Ok(())
    }

    /// `out = Σ cᵢFᵢ(x)·dt + Σ scale·V(x)·dl`.
    fn increment(
        &self,
        x: &[f64],
        dt: f64,
        dl: &[f64],
        ws_off: &[usize],
        out: &mut [f64],
        tmp: &mut [f64],
    ) {
        out.fill(0.0);
        for (f, c) in &self.drifts {
            let w = c * dt;
            if w != 0.0 {
                f.eval(x, tmp);
                out.iter_mut()
                    .zip(tmp.iter())
                    .for_each(|(o, t)| *o += w * t);
            }
        }
        for ch in &self.channels {
            if let Some(f) = ch.cont {
                let w = ch.scale * dl[ws_off[ch.path] + ch.component];
                if w != 0.0 {
                    f.eval(x, tmp);
                    out.iter_mut()
                        .zip(tmp.iter())
                        .for_each(|(o, t)| *o += w * t);
                }
            }
        }
    }

    /// Jacobian of [`Self::increment`] in `x`.
    fn increment_jacobian(
        &self,
        x: &[f64],
        dt: f64,
        dl: &[f64],
        ws_off: &[usize],
        out: &mut [f64],
        tmp: &mut [f64],
    ) {
        out.fill(0.0);
        for (f, c) in &self.drifts {
            let w = c * dt;
            if w != 0.0 {
                f.jacobian(x, tmp);
                out.iter_mut()
                    .zip(tmp.iter())
                    .for_each(|(o, t)| *o += w * t);
            }
        }
        for ch in &self.channels {
            if let Some(f) = ch.cont {
                let w = ch.scale * dl[ws_off[ch.path] + ch.component];
                if w != 0.0 {
                    f.jacobian(x, tmp);
                    out.iter_mut()
                        .zip(tmp.iter())
                        .for_each(|(o, t)| *o += w * t);
                }
            }
        }
    }

    /// One continuous step from `x` over `dt` with increments `dl`.
    fn flow_step(
        &self,
        cfg: &IntegratorConfig,
        x: &mut [f64],
        mut tangent: Option<&mut [f64]>,
        dt: f64,
        dl: &[f64],
        w: &mut Workspace,
    ) {
        let m = w.m;
        let off = std::mem::take(&mut w.offsets);
        match cfg.scheme {
            Scheme::StratonovichHeun => {
                self.increment(x, dt, dl, &off, &mut w.f0, &mut w.tmp);
                for i in 0..m {
                    w.y[i] = x[i] + w.f0[i];
                }
                self.increment(&w.y, dt, dl, &off, &mut w.f1, &mut w.tmp);
                if let Some(t) = tangent.as_deref_mut() {
                    // Φ' = Φ + ½(DF(x)Φ + DF(y)(Φ + DF(x)Φ))
                    self.increment_jacobian(x, dt, dl, &off, &mut w.jac, &mut w.jac_tmp);
                    matmul(&w.jac, t, &mut w.dy, m);
                    for i in 0..m * m {
                        w.dmid[i] = t[i] + w.dy[i];
                    }
                    self.increment_jacobian(&w.y, dt, dl, &off, &mut w.jac, &mut w.jac_tmp);
                    matmul(&w.jac, &w.dmid, &mut w.prod, m);
                    for i in 0..m * m {
                        t[i] += 0.5 * (w.dy[i] + w.prod[i]);
                    }
                }
                for i in 0..m {
                    x[i] += 0.5 * (w.f0[i] + w.f1[i]);
                }
            }
            Scheme::StratonovichMidpoint => {
                // y ← x + F((x + y)/2), starting from y = x
                w.y.copy_from_slice(x);
                if let Some(t) = tangent.as_deref() {
                    w.dy.copy_from_slice(t);
                }
                for _ in 0..cfg.midpoint_sweeps {
                    for i in 0..m {
                        w.mid[i] = 0.5 * (x[i] + w.y[i]);
                    }
                    self.increment(&w.mid, dt, dl, &off, &mut w.f0, &mut w.tmp);
                    for i in 0..m {
                        w.y_next[i] = x[i] + w.f0[i];
                    }
                    if let Some(t) = tangent.as_deref() {
                        self.increment_jacobian(&w.mid, dt, dl, &off, &mut w.jac, &mut w.jac_tmp);
                        for i in 0..m * m {
                            w.dmid[i] = 0.5 * (t[i] + w.dy[i]);
                        }
                        matmul(&w.jac, &w.dmid, &mut w.prod, m);
                        for i in 0..m * m {
                            w.dy_next[i] = t[i] + w.prod[i];
                        }
                        std::mem::swap(&mut w.dy, &mut w.dy_next);
                    }
                    let change =
                        w.y.iter()
                            .zip(&w.y_next)
                            .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
                    std::mem::swap(&mut w.y, &mut w.y_next);
                    if cfg.midpoint_tol > 0.0 && change <= cfg.midpoint_tol * (1.0 + norm_inf(x)) {
                        break;
                    }
                }
                x.copy_from_slice(&w.y);
                if let Some(t) = tangent {
                    t.copy_from_slice(&w.dy);
                }
            }
        }
        w.offsets = off;
    }
}

fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Resolves the grid the integrator runs on: the noise grid itself, or a
/// coarsening of it when `cfg.step` is an integer multiple of its spacing.
/// A non-uniform grid is used as is when `cfg.step` covers its widest step.
fn align<'p>(
    paths: &[&'p NoisePath],
    cfg: &IntegratorConfig,
) -> Result<Vec<std::borrow::Cow<'p, NoisePath>>> {
    use std::borrow::Cow;
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let native = (p.horizon() - p.start()) / p.steps() as f64;
        let widest = p.grid().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        if widest > native * (1.0 + 1e-9) {
            // non-uniform grids (refined at jumps) are integrated on their own nodes
            if cfg.step < widest * (1.0 - 1e-9) {
                return Err(Error::Argument(format!(
                    "integrator step {} is finer than the widest noise step {widest}",
                    cfg.step
                )));
            }
            out.push(Cow::Borrowed(*p));
            continue;
        }
        let ratio = cfg.step / native;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * ratio.max(1.0) || k < 1.0 {
            return Err(Error::Argument(format!(
                "integrator step {} is not a multiple of the noise step {native}",
                cfg.step
            )));
        }
        out.push(if k == 1.0 {
            Cow::Borrowed(*p)
        } else {
            Cow::Owned(p.coarsen(k as usize)?)
        });
    }
    Ok(out)
}

/// Runs `model` on the common grid of `paths`, reporting every state to
/// `observe`. The observer returns `false` to stop the run.
pub fn integrate_model(
    model: &SdeModel<'_>,
    paths: &[&NoisePath],
    x0: &[f64],
    cfg: &IntegratorConfig,
    propagate_tangent: bool,
    mut observe: impl FnMut(f64, &[f64], StepKind<'_>) -> bool,
) -> Result<Outcome> {
    cfg.validate()?;
    model.check(paths, x0)?;
    let aligned = align(paths, cfg)?;
    let refs: Vec<&NoisePath> = aligned.iter().map(|c| c.as_ref()).collect();
    let m = model.dim;
    let mut w = Workspace::new(m, &refs);
    let mut x = x0.to_vec();
    let mut tangent: Option<Vec<f64>> = propagate_tangent.then(|| {
        (0..m * m)
            .map(|k| if k / m == k % m { 1.0 } else { 0.0 })
            .collect()
    });
    let mut t = refs[0].start();
    let mut completed = observe(t, &x, StepKind::Start);
    let mut pre = vec![0.0; m];
    if completed {
        let mut finished = true;
        for_each_segment(&refs, |seg| {
            match seg {
                Segment::Flow { t1, dt, dl, .. } => {
                    model.flow_step(cfg, &mut x, tangent.as_deref_mut(), dt, dl, &mut w);
                    t = t1;
                    if diverged(&x) {
                        return Err(Error::Divergence {
                            time: t,
                            partial: x.clone(),
                        });
                    }
                    if !observe(t, &x, StepKind::Flow) {
                        finished = false;
                        return Ok(false);
                    }
                }
                Segment::Jump { path, index, event } => {
                    pre.copy_from_slice(&x);
                    for ch in model
                        .channels
                        .iter()
                        .filter(|c| c.path == path && c.component == event.component)
                    {
                        if let Some(f) = ch.jump {
                            let a = ch.scale * event.size;
                            let n = substeps_for(a, cfg.jump_map_substeps);
                            jump_map::flow(f, a, &mut x, n, tangent.as_deref_mut(), &mut w.flow)
                                .map_err(|e| match e {
                                    Error::Divergence { partial, .. } => Error::Divergence {
                                        time: event.time,
                                        partial,
                                    },
                                    other => other,
                                })?;
                        }
                    }
                    if !observe(
                        t,
                        &x,
                        StepKind::Jump {
                            path,
                            index,
                            event,
                            pre: &pre,
                        },
                    ) {
                        finished = false;
                        return Ok(false);
                    }
                }
            }
            Ok(true)
        })?;
        completed = finished;
    }
    Ok(Outcome {
        time: t,
        state: x,
        tangent,
        completed,
    })
}

fn hamiltonian_fields(sys: &HamiltonianSystem) -> Vec<HamiltonianField> {
    (0..=sys.channels())
        .map(|k| sys.field(k).expect("index in range"))
        .collect()
}

fn check_channels(sys: &HamiltonianSystem, noise: &NoisePath) -> Result<()> {
    if sys.channels() != noise.dim() {
        return Err(Error::ChannelMismatch {
            system: sys.channels(),
            noise: noise.dim(),
        });
    }
    Ok(())
}

fn record<'t>(
    traj: &'t mut Trajectory,
    record_jumps: bool,
) -> impl FnMut(f64, &[f64], StepKind<'_>) -> bool + 't {
    move |t, x, kind| {
        match kind {
            StepKind::Start | StepKind::Flow => traj.push(t, x),
            StepKind::Jump {
                path,
                index,
                event,
                pre,
            } => {
                traj.overwrite_last(x);
                if record_jumps {
                    traj.annotate(JumpAnnotation {
                        time_index: traj.len() - 1,
                        path,
                        noise_index: index,
                        component: event.component,
                        size: event.size,
                        pre: pre.to_vec(),
                        post: x.to_vec(),
                    });
                } else {
                    traj.flag_last();
                }
            }
        }
        true
    }
}

/// Integrates the Marcus Hamiltonian SDE driven by `noise`.
pub fn integrate(
    sys: &HamiltonianSystem,
    noise: &NoisePath,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_channels(sys, noise)?;
    let fields = hamiltonian_fields(sys);
    let model = SdeModel::hamiltonian(&fields);
    let mut traj = Trajectory::new(
        sys.state_dim(),
        Provenance::new(sys.name(), noise.seed(), cfg),
    );
    integrate_model(
        &model,
        &[noise],
        x0,
        cfg,
        false,
        record(&mut traj, cfg.record_jumps),
    )?;
    Ok(traj)
}

/// Final state and flow Jacobian `∂X_t/∂x₀` of the Marcus Hamiltonian SDE,
/// propagated alongside the state with the derivative of each discrete step.
pub fn integrate_with_tangent(
    sys: &HamiltonianSystem,
    noise: &NoisePath,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Outcome> {
    check_channels(sys, noise)?;
    let fields = hamiltonian_fields(sys);
    let model = SdeModel::hamiltonian(&fields);
    integrate_model(&model, &[noise], x0, cfg, true, |_, _, _| true)
}

/// Perturbation of a Hamiltonian system: `ε(K dt + Σ F_k ∘ dB̃ + Σ G_k ◇ dL̃)`.
///
/// `F_k` is driven by the continuous part (drift and Brownian increments) of
/// component `k` of the second noise path and `G_k` by its jumps.
pub struct Perturbation<'a> {
    pub k: Option<&'a dyn VectorField>,
    pub f: Vec<&'a dyn VectorField>,
    pub g: Vec<&'a dyn VectorField>,
}

impl<'a> Perturbation<'a> {
    /// Extends the unperturbed model with the `ε`-scaled terms.
    pub fn extend(&self, base: &SdeModel<'a>, epsilon: f64) -> SdeModel<'a> {
        let mut model = base.clone();
        if let Some(k) = self.k {
            model.drifts.push((k, epsilon));
        }
        for (c, f) in self.f.iter().enumerate() {
            model.channels.push(Channel {
                cont: Some(*f),
                jump: None,
                scale: epsilon,
                path: 1,
                component: c,
            });
        }
        for (c, g) in self.g.iter().enumerate() {
            model.channels.push(Channel {
                cont: None,
                jump: Some(*g),
                scale: epsilon,
                path: 1,
                component: c,
            });
        }
        model
    }
}

/// Integrates the perturbed system. With `ε = 0` this is exactly
/// [`integrate`] on `noise`.
pub fn integrate_perturbed(
    sys: &HamiltonianSystem,
    noise: &NoisePath,
    pert: &Perturbation<'_>,
    epsilon: f64,
    noise2: &NoisePath,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if epsilon == 0.0 {
        return integrate(sys, noise, x0, cfg);
    }
    check_channels(sys, noise)?;
    if pert.f.len() > noise2.dim() || pert.g.len() > noise2.dim() {
        return Err(Error::ChannelMismatch {
            system: pert.f.len().max(pert.g.len()),
            noise: noise2.dim(),
        });
    }
    let fields = hamiltonian_fields(sys);
    let model = pert.extend(&SdeModel::hamiltonian(&fields), epsilon);
    let mut traj = Trajectory::new(
        sys.state_dim(),
        Provenance::new(sys.name(), noise.seed(), cfg),
    );
    integrate_model(
        &model,
        &[noise, noise2],
        x0,
        cfg,
        false,
        record(&mut traj, cfg.record_jumps),
    )?;
    Ok(traj)
}
