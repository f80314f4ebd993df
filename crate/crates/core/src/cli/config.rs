use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::averaging::{AveragingParams, PerturbationSpec};
use crate::diagnostics::JacobianMethod;
use crate::error::{Error, Result};
use crate::hamiltonian::SystemSpec;
use crate::levy::{JumpDistribution, JumpSpec, LevyTriplet};
use crate::marcus::IntegratorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    SymplecticCheck,
    OscillatorMoments,
    ActionCheck,
    ErgodicRate,
    AveragingSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Simulate,
        ExperimentKind::SymplecticCheck,
        ExperimentKind::OscillatorMoments,
        ExperimentKind::ActionCheck,
        ExperimentKind::ErgodicRate,
        ExperimentKind::AveragingSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::SymplecticCheck => "symplectic-check",
            ExperimentKind::OscillatorMoments => "oscillator-moments",
            ExperimentKind::ActionCheck => "action-check",
            ExperimentKind::ErgodicRate => "ergodic-rate",
            ExperimentKind::AveragingSweep => "averaging-sweep",
        }
    }

    /// Whether the experiment relies on the integrals being in involution.
    pub fn needs_integrability(self) -> bool {
        matches!(
            self,
            ExperimentKind::SymplecticCheck
                | ExperimentKind::ErgodicRate
                | ExperimentKind::AveragingSweep
        )
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One experiment as read from a TOML file. Everything except `kind` may be
/// omitted; [`ExperimentConfig::resolve`] fills in the defaults of the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<LevyTriplet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateParams>,
    #[serde(
        default,
        rename = "symplectic-check",
        skip_serializing_if = "Option::is_none"
    )]
    pub symplectic_check: Option<SymplecticParams>,
    #[serde(
        default,
        rename = "oscillator-moments",
        skip_serializing_if = "Option::is_none"
    )]
    pub oscillator_moments: Option<MomentParams>,
    #[serde(
        default,
        rename = "action-check",
        skip_serializing_if = "Option::is_none"
    )]
    pub action_check: Option<ActionParams>,
    #[serde(
        default,
        rename = "ergodic-rate",
        skip_serializing_if = "Option::is_none"
    )]
    pub ergodic_rate: Option<ErgodicParams>,
    #[serde(
        default,
        rename = "averaging-sweep",
        skip_serializing_if = "Option::is_none"
    )]
    pub averaging_sweep: Option<SweepParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    #[serde(default = "ten")]
    pub horizon: f64,
    /// Defaults to `(1, 0, …, 0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Also write `trajectory.bin` for path 0.
    #[serde(default = "yes")]
    pub binary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymplecticParams {
    #[serde(default = "one")]
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Coarsest step of the refinement study; `integrator.step` is ignored here.
    #[serde(default = "milli")]
    pub base_step: f64,
    #[serde(default = "four")]
    pub halvings: usize,
    #[serde(default = "jacobian_method")]
    pub method: JacobianMethod,
    /// Defect bound at `base_step`.
    #[serde(default = "milli")]
    pub tolerance: f64,
    #[serde(default = "min_order")]
    pub min_order: f64,
    #[serde(default = "ten")]
    pub conservation_horizon: f64,
    #[serde(default = "milli")]
    pub conservation_step: f64,
    #[serde(default = "conservation_tolerance")]
    pub conservation_tolerance: f64,
    #[serde(default = "twenty")]
    pub min_jumps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentParams {
    #[serde(default = "moment_times")]
    pub times: Vec<f64>,
    /// Allowed deviation in standard errors.
    #[serde(default = "three")]
    pub tolerance_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionParams {
    #[serde(default = "twenty")]
    pub instances: usize,
    #[serde(default = "half")]
    pub t1_min: f64,
    #[serde(default = "three")]
    pub t1_max: f64,
    /// Endpoints are drawn from `[-endpoint_range, endpoint_range]`.
    #[serde(default = "one")]
    pub endpoint_range: f64,
    /// Instances with `|sin t1|` below this are redrawn.
    #[serde(default = "conjugate_margin")]
    pub conjugate_margin: f64,
    #[serde(default = "action_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicParams {
    #[serde(default = "mean_windows")]
    pub mean_windows: Vec<f64>,
    #[serde(default = "rate_windows")]
    pub rate_windows: Vec<f64>,
    /// Paths for the rate study; the top-level `paths` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_paths: Option<usize>,
    /// 1-based oscillator pair whose angle enters `cos²θ`.
    #[serde(default = "two")]
    pub pair: usize,
    /// `θ = ⟨u, W⟩` for the analytic prediction; empty to skip it.
    #[serde(default = "unit_pair")]
    pub u: Vec<f64>,
    #[serde(default = "unit_quad")]
    pub x0: Vec<f64>,
    #[serde(default = "three")]
    pub tolerance_se: f64,
    #[serde(default = "minus_half")]
    pub expected_slope: f64,
    #[serde(default = "tenth")]
    pub slope_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    #[serde(default = "unit_quad")]
    pub y0: Vec<f64>,
    /// Guard of the action-angle chart.
    #[serde(default = "chart_guard")]
    pub chart_i_min: f64,
    #[serde(default)]
    pub sweep: AveragingParams,
    #[serde(default = "PerturbationSpec::oscillator_example")]
    pub perturbation: PerturbationSpec,
}

fn yes() -> bool {
    true
}
fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn three() -> f64 {
    3.0
}
fn ten() -> f64 {
    10.0
}
fn tenth() -> f64 {
    0.1
}
fn minus_half() -> f64 {
    -0.5
}
fn milli() -> f64 {
    1e-3
}
fn two() -> usize {
    2
}
fn four() -> usize {
    4
}
fn twenty() -> usize {
    20
}
fn min_order() -> f64 {
    0.8
}
fn conservation_tolerance() -> f64 {
    1e-4
}
fn conjugate_margin() -> f64 {
    0.05
}
fn action_tolerance() -> f64 {
    1e-4
}
fn chart_guard() -> f64 {
    1e-3
}
fn jacobian_method() -> JacobianMethod {
    JacobianMethod::VariationalSde
}
fn moment_times() -> Vec<f64> {
    vec![1.0, 2.0, 5.0]
}
fn mean_windows() -> Vec<f64> {
    vec![1.0, 5.0, 20.0]
}
fn rate_windows() -> Vec<f64> {
    vec![10.0, 40.0, 160.0]
}
fn unit_pair() -> Vec<f64> {
    vec![1.0, 1.0]
}
fn unit_quad() -> Vec<f64> {
    vec![1.0, 1.0, 0.0, 0.0]
}

pub const DEFAULT_SEED: u64 = 2024;

fn uniform_jumps(rate: f64) -> JumpSpec {
    JumpSpec::compound_poisson(
        rate,
        JumpDistribution::Uniform {
            low: -1.0,
            high: 1.0,
        },
    )
}

fn oscillator_noise() -> LevyTriplet {
    LevyTriplet::standard(1, JumpSpec::atoms([(vec![0.5], 4.0)]))
}

impl ExperimentConfig {
    /// The built-in configuration of `kind`, before resolution.
    pub fn builtin(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: None,
            out: None,
            paths: None,
            system: None,
            noise: None,
            integrator: None,
            simulate: None,
            symplectic_check: None,
            oscillator_moments: None,
            action_check: None,
            ergodic_rate: None,
            averaging_sweep: None,
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let span = e.span().map(|s| line_of(text, s.start));
            let at = match span {
                Some(line) => format!("{origin}:{line}"),
                None => origin.to_string(),
            };
            Error::config(at, message)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Materializes every default of the kind. Sections belonging to other
    /// kinds are rejected.
    pub fn resolve(&self) -> Result<Self> {
        use ExperimentKind::*;
        let kind = self.kind;
        let foreign = [
            (Simulate, self.simulate.is_some(), "simulate"),
            (
                SymplecticCheck,
                self.symplectic_check.is_some(),
                "symplectic-check",
            ),
            (
                OscillatorMoments,
                self.oscillator_moments.is_some(),
                "oscillator-moments",
            ),
            (ActionCheck, self.action_check.is_some(), "action-check"),
            (ErgodicRate, self.ergodic_rate.is_some(), "ergodic-rate"),
            (
                AveragingSweep,
                self.averaging_sweep.is_some(),
                "averaging-sweep",
            ),
        ];
        for (k, present, section) in foreign {
            if present && k != kind {
                return Err(Error::config(
                    section,
                    format!("section does not apply to kind = \"{kind}\""),
                ));
            }
        }
        let (system, noise, integrator, paths) = match kind {
            Simulate => (
                SystemSpec::LinearOscillator { sigma: 1.0 },
                oscillator_noise(),
                IntegratorConfig::new(0.01),
                1,
            ),
            SymplecticCheck => (
                SystemSpec::HarmonicFamily {
                    frequencies: vec![1.0, 1.0],
                },
                LevyTriplet::standard(2, uniform_jumps(4.0)),
                IntegratorConfig::midpoint(1e-3),
                4,
            ),
            OscillatorMoments => (
                SystemSpec::LinearOscillator { sigma: 1.0 },
                oscillator_noise(),
                IntegratorConfig::new(0.01),
                10_000,
            ),
            ActionCheck => (
                SystemSpec::LinearOscillator { sigma: 1.0 },
                oscillator_noise(),
                IntegratorConfig::new(0.01),
                1,
            ),
            ErgodicRate => (
                SystemSpec::HarmonicFamily {
                    frequencies: vec![1.0, 1.0],
                },
                LevyTriplet::standard(2, uniform_jumps(2.0)),
                IntegratorConfig::midpoint(0.01),
                1000,
            ),
            AveragingSweep => (
                SystemSpec::HarmonicFamily {
                    frequencies: vec![1.0, 1.0],
                },
                LevyTriplet::standard(2, uniform_jumps(2.0)),
                IntegratorConfig::converged_midpoint(0.01),
                500,
            ),
        };
        let paths = self.paths.unwrap_or(paths);
        let mut out = Self {
            kind,
            seed: Some(self.seed.unwrap_or(DEFAULT_SEED)),
            out: Some(
                self.out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from(format!("out/{kind}"))),
            ),
            paths: Some(paths),
            system: Some(self.system.clone().unwrap_or(system)),
            noise: Some(self.noise.clone().unwrap_or(noise)),
            integrator: Some(self.integrator.clone().unwrap_or(integrator)),
            ..Self::builtin(kind)
        };
        match kind {
            Simulate => {
                let mut p = self.simulate.clone().unwrap_or(defaults());
                let dim = out
                    .system
                    .as_ref()
                    .unwrap()
                    .build()
                    .map(|s| s.state_dim())
                    .unwrap_or(2);
                p.x0.get_or_insert_with(|| unit_point(dim));
                out.simulate = Some(p);
            }
            SymplecticCheck => {
                let mut p = self.symplectic_check.clone().unwrap_or(defaults());
                let dim = out
                    .system
                    .as_ref()
                    .unwrap()
                    .build()
                    .map(|s| s.state_dim())
                    .unwrap_or(2);
                p.x0.get_or_insert_with(|| unit_point(dim));
                out.symplectic_check = Some(p);
            }
            OscillatorMoments => {
                out.oscillator_moments =
                    Some(self.oscillator_moments.clone().unwrap_or(defaults()));
            }
            ActionCheck => {
                out.action_check = Some(self.action_check.clone().unwrap_or(defaults()));
            }
            ErgodicRate => {
                let mut p = self.ergodic_rate.clone().unwrap_or(defaults());
                p.rate_paths.get_or_insert(paths);
                out.ergodic_rate = Some(p);
            }
            AveragingSweep => {
                let mut p = self.averaging_sweep.clone().unwrap_or(defaults());
                p.sweep.paths = paths;
                out.averaging_sweep = Some(p);
            }
        }
        Ok(out)
    }

    /// Semantic checks on a resolved configuration, reported with the path
    /// of the offending field.
    pub fn check_fields(&self) -> Result<()> {
        let paths = self.paths.unwrap_or(0);
        if paths == 0 {
            return Err(Error::config("paths", "must be >= 1"));
        }
        let integrator = self
            .integrator
            .as_ref()
            .ok_or_else(|| Error::config("integrator", "missing"))?;
        integrator
            .validate()
            .map_err(|e| Error::config("integrator", strip(&e)))?;
        let noise = self
            .noise
            .as_ref()
            .ok_or_else(|| Error::config("noise", "missing"))?;
        noise
            .validate()
            .map_err(|e| Error::config("noise", strip(&e)))?;
        let system = self
            .system
            .as_ref()
            .ok_or_else(|| Error::config("system", "missing"))?
            .build()
            .map_err(|e| Error::config("system", strip(&e)))?;
        if noise.dim() != system.channels() {
            return Err(Error::config(
                "noise.covariance",
                format!(
                    "noise has {} components but the system has {} noise Hamiltonians",
                    noise.dim(),
                    system.channels()
                ),
            ));
        }
        let m = system.state_dim();
        let positive = |path: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be > 0, got {v}")))
            }
        };
        let state = |path: &str, x: &[f64]| -> Result<()> {
            if x.len() != m {
                return Err(Error::config(
                    path,
                    format!("expected {m} coordinates, got {}", x.len()),
                ));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(path, "coordinates must be finite"));
            }
            Ok(())
        };
        match self.kind {
            ExperimentKind::Simulate => {
                let p = self.simulate.as_ref().expect("resolved");
                positive("simulate.horizon", p.horizon)?;
                state("simulate.x0", p.x0.as_deref().unwrap_or_default())?;
            }
            ExperimentKind::SymplecticCheck => {
                let p = self.symplectic_check.as_ref().expect("resolved");
                positive("symplectic-check.time", p.time)?;
                positive("symplectic-check.base_step", p.base_step)?;
                positive("symplectic-check.tolerance", p.tolerance)?;
                positive(
                    "symplectic-check.conservation_horizon",
                    p.conservation_horizon,
                )?;
                positive("symplectic-check.conservation_step", p.conservation_step)?;
                positive(
                    "symplectic-check.conservation_tolerance",
                    p.conservation_tolerance,
                )?;
                if p.halvings == 0 {
                    return Err(Error::config("symplectic-check.halvings", "must be >= 1"));
                }
                if let JacobianMethod::FiniteDifference { h } = p.method {
                    positive("symplectic-check.method.h", h)?;
                }
                state("symplectic-check.x0", p.x0.as_deref().unwrap_or_default())?;
            }
            ExperimentKind::OscillatorMoments => {
                let p = self.oscillator_moments.as_ref().expect("resolved");
                if !matches!(self.system, Some(SystemSpec::LinearOscillator { .. })) {
                    return Err(Error::config(
                        "system.name",
                        "oscillator-moments needs the linear-oscillator system",
                    ));
                }
                if p.times.is_empty() {
                    return Err(Error::config(
                        "oscillator-moments.times",
                        "must not be empty",
                    ));
                }
                for &t in &p.times {
                    positive("oscillator-moments.times", t)?;
                }
                positive("oscillator-moments.tolerance_se", p.tolerance_se)?;
                if paths < 2 {
                    return Err(Error::config(
                        "paths",
                        "a moment estimate needs at least 2 paths",
                    ));
                }
            }
            ExperimentKind::ActionCheck => {
                let p = self.action_check.as_ref().expect("resolved");
                if !matches!(self.system, Some(SystemSpec::LinearOscillator { .. })) {
                    return Err(Error::config(
                        "system.name",
                        "action-check needs the linear-oscillator system",
                    ));
                }
                if p.instances == 0 {
                    return Err(Error::config("action-check.instances", "must be >= 1"));
                }
                positive("action-check.t1_min", p.t1_min)?;
                if !(p.t1_max > p.t1_min) {
                    return Err(Error::config("action-check.t1_max", "must exceed t1_min"));
                }
                if !(p.t1_max - p.t1_min >= integrator.step) {
                    return Err(Error::config(
                        "action-check.t1_max",
                        "interval is shorter than one step",
                    ));
                }
                positive("action-check.endpoint_range", p.endpoint_range)?;
                positive("action-check.tolerance", p.tolerance)?;
                if !(p.conjugate_margin > 0.0 && p.conjugate_margin < 0.5) {
                    return Err(Error::config(
                        "action-check.conjugate_margin",
                        "must lie in (0, 0.5)",
                    ));
                }
            }
            ExperimentKind::ErgodicRate => {
                let p = self.ergodic_rate.as_ref().expect("resolved");
                let d = system.n();
                if !(1..=d).contains(&p.pair) {
                    return Err(Error::config(
                        "ergodic-rate.pair",
                        format!("must lie in 1..={d}"),
                    ));
                }
                state("ergodic-rate.x0", &p.x0)?;
                for (name, ws) in [
                    ("mean_windows", &p.mean_windows),
                    ("rate_windows", &p.rate_windows),
                ] {
                    if ws.is_empty() {
                        return Err(Error::config(
                            format!("ergodic-rate.{name}"),
                            "must not be empty",
                        ));
                    }
                    for &w in ws {
                        positive(&format!("ergodic-rate.{name}"), w)?;
                    }
                }
                if p.rate_windows.len() < 2 {
                    return Err(Error::config(
                        "ergodic-rate.rate_windows",
                        "a slope needs at least 2 windows",
                    ));
                }
                if !p.u.is_empty() && p.u.len() != noise.dim() {
                    return Err(Error::config(
                        "ergodic-rate.u",
                        format!("expected {} components, got {}", noise.dim(), p.u.len()),
                    ));
                }
                if paths < 2 || p.rate_paths.unwrap_or(paths) < 2 {
                    return Err(Error::config(
                        "paths",
                        "an ergodic study needs at least 2 paths",
                    ));
                }
            }
            ExperimentKind::AveragingSweep => {
                let p = self.averaging_sweep.as_ref().expect("resolved");
                if !matches!(self.system, Some(SystemSpec::HarmonicFamily { .. })) {
                    return Err(Error::config(
                        "system.name",
                        "averaging-sweep needs the harmonic-family system",
                    ));
                }
                state("averaging-sweep.y0", &p.y0)?;
                positive("averaging-sweep.chart_i_min", p.chart_i_min)?;
                p.sweep
                    .validate()
                    .map_err(|e| Error::config("averaging-sweep.sweep", strip(&e)))?;
                p.perturbation
                    .noise
                    .validate()
                    .map_err(|e| Error::config("averaging-sweep.perturbation.noise", strip(&e)))?;
                if p.perturbation.noise.dim() != system.n() {
                    return Err(Error::config(
                        "averaging-sweep.perturbation.noise",
                        format!(
                            "expected {} components, got {}",
                            system.n(),
                            p.perturbation.noise.dim()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn defaults<T: serde::de::DeserializeOwned>() -> T {
    toml::from_str("").expect("every field has a default")
}

fn unit_point(dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    if let Some(first) = x.first_mut() {
        *first = 1.0;
    }
    x
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn strip(e: &Error) -> String {
    match e {
        Error::Validation(m) | Error::Argument(m) | Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}
