use rand::Rng;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use crate::averaging::{check_perturbation, ActionAngleChart};
use crate::hamiltonian::{HamiltonianSystem, SystemSpec};
use crate::levy::LevyTriplet;
use crate::rng::StreamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    /// The property can only be sampled, or does not matter for this kind.
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub check: String,
    pub status: Status,
    pub message: String,
}

impl Diagnostic {
    fn new(check: &str, status: Status, message: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            status,
            message: message.into(),
        }
    }
}

pub fn has_failures(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.status == Status::Fail)
}

const PROBES: usize = 64;
const BRACKET_TOL: f64 = 1e-9;

fn probes(m: usize, seed: u64, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let mut rng = StreamId::new(seed, 0).parameter_rng();
    (0..PROBES)
        .map(|_| (0..m).map(|_| rng.random_range(lo..hi)).collect())
        .collect()
}

/// Machine checks of the standing assumptions. Never fails itself: every
/// problem, including an unreadable configuration, becomes a diagnostic.
pub fn validate(config: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let cfg = match config.resolve() {
        Ok(c) => c,
        Err(e) => {
            out.push(Diagnostic::new("schema", Status::Fail, e.to_string()));
            return out;
        }
    };
    match cfg.check_fields() {
        Ok(()) => out.push(Diagnostic::new("schema", Status::Pass, "all fields valid")),
        Err(e) => out.push(Diagnostic::new("schema", Status::Fail, e.to_string())),
    }
    let kind = cfg.kind;
    let spec = cfg.system.as_ref().expect("resolved");
    let sys = match spec.build() {
        Ok(s) => {
            out.push(Diagnostic::new(
                "gradient-consistency",
                Status::Pass,
                "analytic gradients agree with finite differences on random probes",
            ));
            s
        }
        Err(e) => {
            out.push(Diagnostic::new(
                "gradient-consistency",
                Status::Fail,
                e.to_string(),
            ));
            return out;
        }
    };
    out.push(growth(spec, &sys));
    out.push(integrability(kind, &sys));
    let noise = cfg.noise.as_ref().expect("resolved");
    let order = cfg
        .averaging_sweep
        .as_ref()
        .map_or(2.0, |p| p.sweep.p.max(2.0));
    out.push(moment("moment-finiteness", noise, order));
    if let Some(p) = &cfg.averaging_sweep {
        out.push(moment(
            "moment-finiteness-perturbation-noise",
            &p.perturbation.noise,
            p.sweep.p,
        ));
        out.push(transversality(&sys, spec, p));
    }
    out
}

fn growth(spec: &SystemSpec, sys: &HamiltonianSystem) -> Diagnostic {
    let degree = match spec {
        SystemSpec::LinearOscillator { .. } | SystemSpec::HarmonicFamily { .. } => 2,
        SystemSpec::Polynomial { hamiltonians, .. } => hamiltonians
            .iter()
            .flat_map(|h| &h.terms)
            .filter(|t| t.coefficient != 0.0)
            .map(|t| t.exponents.iter().sum::<u32>())
            .max()
            .unwrap_or(0),
    };
    if degree <= 2 {
        return Diagnostic::new(
            "linear-growth",
            Status::Pass,
            "all Hamiltonians are at most quadratic",
        );
    }
    let m = sys.state_dim();
    let mut worst = 0.0f64;
    for x in probes(m, 3, -3.0, 3.0) {
        let r = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for k in 0..=sys.channels() {
            if let Ok(v) = sys.vector_field(k, &x) {
                let dot: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum();
                worst = worst.max(dot / (r * r));
            }
        }
    }
    Diagnostic::new(
        "linear-growth",
        Status::Warn,
        format!("degree {degree} Hamiltonians; one-sided growth only sampled, max <x, V(x)>/(1+|x|)^2 = {worst:.3e}"),
    )
}

fn integrability(kind: ExperimentKind, sys: &HamiltonianSystem) -> Diagnostic {
    let report = sys.check_integrability(&probes(sys.state_dim(), 1, -1.5, 1.5), BRACKET_TOL);
    let detail = match report.worst_pair {
        Some((i, j)) => format!(
            "max |{{H{i}, H{j}}}| = {:.3e} on {PROBES} probes",
            report.max_violation
        ),
        None => format!("brackets vanish on {PROBES} probes"),
    };
    let status = match (report.pass, kind.needs_integrability()) {
        (true, _) => Status::Pass,
        (false, true) => Status::Fail,
        (false, false) => Status::Warn,
    };
    let message = if status == Status::Warn {
        format!("{detail}; {kind} does not rely on involution")
    } else {
        detail
    };
    Diagnostic::new("integrability", status, message)
}

fn moment(check: &str, noise: &LevyTriplet, p: f64) -> Diagnostic {
    match noise.jumps.abs_moment(p) {
        Ok(m) if m.is_finite() => {
            Diagnostic::new(check, Status::Pass, format!("int |z|^{p} nu(dz) = {m:.6e}"))
        }
        Ok(_) => Diagnostic::new(
            check,
            Status::Fail,
            format!("int |z|^{p} nu(dz) is infinite"),
        ),
        Err(e) => Diagnostic::new(
            check,
            Status::Fail,
            format!("no finite moment of order {p}: {e}"),
        ),
    }
}

fn transversality(
    sys: &HamiltonianSystem,
    spec: &SystemSpec,
    p: &super::config::SweepParams,
) -> Diagnostic {
    let SystemSpec::HarmonicFamily { frequencies } = spec else {
        return Diagnostic::new(
            "transversality",
            Status::Fail,
            "needs the harmonic-family system",
        );
    };
    let built = ActionAngleChart::new(frequencies.clone(), p.chart_i_min)
        .and_then(|chart| p.perturbation.build(&chart).map(|f| (chart, f)));
    let (chart, fields) = match built {
        Ok(v) => v,
        Err(e) => return Diagnostic::new("transversality", Status::Fail, e.to_string()),
    };
    // probes spread over the action box
    let d = chart.d();
    let mut rng = StreamId::new(5, 0).parameter_rng();
    let lo = p.sweep.i_min.max(p.chart_i_min);
    let pts: Vec<Vec<f64>> = (0..PROBES)
        .map(|_| {
            let theta: Vec<f64> = (0..d)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let actions: Vec<f64> = (0..d)
                .map(|_| rng.random_range(lo..p.sweep.i_max))
                .collect();
            chart
                .from_action_angle(&theta, &actions)
                .expect("inside the chart")
        })
        .collect();
    match check_perturbation(sys, &chart, &fields, &pts, 1e-8) {
        Ok(r) if r.constancy_pass && r.transversal_pass => Diagnostic::new(
            "transversality",
            Status::Pass,
            format!(
                "max |w(V_i, K)| = {:.3e}; F, G angle dependence {:.1e}",
                r.transversal_strength, r.angle_dependence
            ),
        ),
        Ok(r) => Diagnostic::new(
            "transversality",
            Status::Fail,
            format!(
                "transversal strength {:.3e} (pass {}), angle dependence {:.3e} (pass {})",
                r.transversal_strength, r.transversal_pass, r.angle_dependence, r.constancy_pass
            ),
        ),
        Err(e) => Diagnostic::new("transversality", Status::Fail, e.to_string()),
    }
}
