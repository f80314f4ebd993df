use std::fmt::Write as _;

use rand::Rng;

use super::config::{ExperimentConfig, ExperimentKind};
use crate::averaging::{
    cos_squared_angle, ergodic_study, run_averaging_experiment, ActionAngleChart, ErgodicStudy,
};
use crate::diagnostics::{
    flow_jacobian, generating_function_check, oscillator_moment_law, oscillator_moment_mc,
    symplectic_defect, DiagnosticRecord,
};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianSystem, SystemSpec};
use crate::levy::{LevyTriplet, NoiseSampler};
use crate::marcus::{integrate, IntegratorConfig};
use crate::rng::StreamId;
use crate::stats;

/// A named output file, held in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn text(name: &str, body: String) -> Self {
        Self {
            name: name.into(),
            bytes: body.into_bytes(),
        }
    }
}

pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub checks: Vec<DiagnosticRecord>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    sys: HamiltonianSystem,
    noise: &'a LevyTriplet,
    integrator: &'a IntegratorConfig,
    seed: u64,
    paths: usize,
    ensemble: &'a Ensemble,
}

/// Runs a resolved, field-checked configuration.
pub fn execute(cfg: &ExperimentConfig, ensemble: &Ensemble) -> Result<Outcome> {
    let ctx = Ctx {
        cfg,
        sys: cfg.system.as_ref().expect("resolved").build()?,
        noise: cfg.noise.as_ref().expect("resolved"),
        integrator: cfg.integrator.as_ref().expect("resolved"),
        seed: cfg.seed.expect("resolved"),
        paths: cfg.paths.expect("resolved"),
        ensemble,
    };
    match cfg.kind {
        ExperimentKind::Simulate => simulate(&ctx),
        ExperimentKind::SymplecticCheck => symplectic(&ctx),
        ExperimentKind::OscillatorMoments => moments(&ctx),
        ExperimentKind::ActionCheck => action(&ctx),
        ExperimentKind::ErgodicRate => ergodic(&ctx),
        ExperimentKind::AveragingSweep => sweep(&ctx),
    }
}

fn sigma_of(spec: &SystemSpec) -> Result<f64> {
    match spec {
        SystemSpec::LinearOscillator { sigma } => Ok(*sigma),
        _ => Err(Error::config("system.name", "expected linear-oscillator")),
    }
}

fn simulate(ctx: &Ctx) -> Result<Outcome> {
    let p = ctx.cfg.simulate.as_ref().expect("resolved");
    let x0 = p.x0.clone().expect("resolved");
    let sampler = NoiseSampler::new(ctx.noise)?;
    let runs = ctx.ensemble.map(ctx.paths, |i| {
        let noise = sampler.sample(p.horizon, ctx.integrator.step, StreamId::new(ctx.seed, i))?;
        let traj = integrate(&ctx.sys, &noise, &x0, ctx.integrator)?;
        let last = traj.final_state().to_vec();
        let jumps = noise.jumps().len();
        Ok((if i == 0 { Some(traj) } else { None }, last, jumps))
    })?;
    let mut artifacts = Vec::new();
    let first = runs[0].0.as_ref().expect("path 0 kept");
    let mut csv = Vec::new();
    first.write_csv(&mut csv)?;
    artifacts.push(Artifact {
        name: "trajectory.csv".into(),
        bytes: csv,
    });
    if p.binary {
        let mut bin = Vec::new();
        first.write_binary(&mut bin)?;
        artifacts.push(Artifact {
            name: "trajectory.bin".into(),
            bytes: bin,
        });
    }
    let n = ctx.sys.n();
    let mut fin = String::from("path,jumps");
    (1..=n).for_each(|i| write!(fin, ",q{i}").unwrap());
    (1..=n).for_each(|i| write!(fin, ",p{i}").unwrap());
    fin.push('\n');
    let mut largest = 0.0f64;
    for (i, (_, x, jumps)) in runs.iter().enumerate() {
        write!(fin, "{i},{jumps}").unwrap();
        for v in x {
            write!(fin, ",{v}").unwrap();
            largest = largest.max(v.abs());
        }
        fin.push('\n');
    }
    artifacts.push(Artifact::text("final_states.csv", fin));
    let checks = vec![DiagnosticRecord::new(
        "final-states-finite",
        largest,
        f64::INFINITY,
        largest.is_finite(),
        ctx.integrator.hash(),
    )];
    Ok(Outcome { artifacts, checks })
}

fn symplectic(ctx: &Ctx) -> Result<Outcome> {
    let p = ctx.cfg.symplectic_check.as_ref().expect("resolved");
    let x0 = p.x0.clone().expect("resolved");
    let sampler = NoiseSampler::new(ctx.noise)?;
    let steps: Vec<f64> = (0..=p.halvings)
        .map(|j| p.base_step / (1u64 << j) as f64)
        .collect();
    let finest = *steps.last().unwrap();
    let defects = ctx.ensemble.map(ctx.paths, |i| {
        let noise = sampler.sample(p.time, finest, StreamId::new(ctx.seed, i))?;
        steps
            .iter()
            .map(|&h| {
                let cfg = IntegratorConfig {
                    step: h,
                    ..ctx.integrator.clone()
                };
                let jac = flow_jacobian(&ctx.sys, &noise, &x0, p.time, p.method, &cfg)?;
                Ok(symplectic_defect(&jac).value)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut csv = String::from("step,defect_mean,defect_se,paths\n");
    let mut means = Vec::new();
    for (j, h) in steps.iter().enumerate() {
        let col: Vec<f64> = defects.iter().map(|d| d[j]).collect();
        let (m, se) = stats::mean_se(&col);
        writeln!(csv, "{h},{m},{se},{}", col.len()).unwrap();
        means.push(m);
    }
    let order = if means.iter().all(|m| *m > 0.0) {
        stats::loglog_slope(&steps, &means)
    } else {
        f64::INFINITY
    };
    let provenance = ctx.integrator.hash();

    // first integrals across the unperturbed flow
    let n_int = ctx.sys.channels() + 1;
    let drifts = ctx.ensemble.map(ctx.paths, |i| {
        let noise = sampler.sample(
            p.conservation_horizon,
            p.conservation_step,
            StreamId::new(ctx.seed, i).with_lane(2),
        )?;
        let cfg = IntegratorConfig {
            step: p.conservation_step,
            ..ctx.integrator.clone()
        };
        let traj = integrate(&ctx.sys, &noise, &x0, &cfg)?;
        let h0 = ctx.sys.first_integrals(&x0);
        let mut worst = vec![0.0f64; n_int];
        for x in traj.states() {
            for (w, (a, b)) in worst
                .iter_mut()
                .zip(ctx.sys.first_integrals(x).iter().zip(&h0))
            {
                *w = w.max((a - b).abs());
            }
        }
        Ok((noise.jumps().len(), worst))
    })?;
    let mut cons = String::from("path,jumps");
    (0..n_int).for_each(|k| write!(cons, ",max_drift_h{k}").unwrap());
    cons.push('\n');
    let mut max_drift = 0.0f64;
    let mut min_jumps = usize::MAX;
    for (i, (jumps, worst)) in drifts.iter().enumerate() {
        write!(cons, "{i},{jumps}").unwrap();
        for w in worst {
            write!(cons, ",{w}").unwrap();
            max_drift = max_drift.max(*w);
        }
        cons.push('\n');
        min_jumps = min_jumps.min(*jumps);
    }
    let checks = vec![
        DiagnosticRecord::at_most(
            "symplectic-defect",
            means[0],
            p.tolerance,
            provenance.clone(),
        ),
        DiagnosticRecord::new(
            "symplectic-order",
            order,
            p.min_order,
            order >= p.min_order,
            provenance.clone(),
        ),
        DiagnosticRecord::at_most(
            "first-integral-drift",
            max_drift,
            p.conservation_tolerance,
            provenance.clone(),
        ),
        DiagnosticRecord::new(
            "jumps-crossed",
            min_jumps as f64,
            p.min_jumps as f64,
            min_jumps >= p.min_jumps,
            provenance,
        ),
    ];
    Ok(Outcome {
        artifacts: vec![
            Artifact::text("symplectic.csv", csv),
            Artifact::text("conservation.csv", cons),
        ],
        checks,
    })
}

fn moments(ctx: &Ctx) -> Result<Outcome> {
    let p = ctx.cfg.oscillator_moments.as_ref().expect("resolved");
    let sigma = sigma_of(ctx.cfg.system.as_ref().unwrap())?;
    let est = oscillator_moment_mc(
        sigma,
        ctx.noise,
        &p.times,
        ctx.paths,
        ctx.seed,
        ctx.integrator,
        ctx.ensemble,
    )?;
    let mut csv = String::from("t,mean,se,predicted,z\n");
    let mut checks = Vec::new();
    for (&t, &(mean, se)) in p.times.iter().zip(&est) {
        let predicted = oscillator_moment_law(sigma, t, &ctx.noise.jumps)?;
        let z = (mean - predicted) / se;
        writeln!(csv, "{t},{mean},{se},{predicted},{z}").unwrap();
        checks.push(DiagnosticRecord::at_most(
            format!("moment-law-t={t}"),
            z.abs(),
            p.tolerance_se,
            ctx.integrator.hash(),
        ));
    }
    Ok(Outcome {
        artifacts: vec![Artifact::text("moments.csv", csv)],
        checks,
    })
}

fn action(ctx: &Ctx) -> Result<Outcome> {
    let p = ctx.cfg.action_check.as_ref().expect("resolved");
    let sigma = sigma_of(ctx.cfg.system.as_ref().unwrap())?;
    let sampler = NoiseSampler::new(ctx.noise)?;
    let step = ctx.integrator.step;
    let reports = ctx.ensemble.map(p.instances, |i| {
        let id = StreamId::new(ctx.seed, i);
        let mut rng = id.parameter_rng();
        // t1 on the noise grid, away from multiples of π
        let t1 = loop {
            let t = rng.random_range(p.t1_min..p.t1_max);
            let t = ((t / step).round() * step).max(step);
            if t.sin().abs() >= p.conjugate_margin {
                break t;
            }
        };
        let q0 = rng.random_range(-p.endpoint_range..p.endpoint_range);
        let q1 = rng.random_range(-p.endpoint_range..p.endpoint_range);
        let noise = sampler.sample(t1, step, id)?;
        generating_function_check(sigma, &noise, q0, q1, t1, p.tolerance)
    })?;
    let mut csv = String::from("instance,t1,q0,q1,p0,p1,action,residual_q0,residual_q1\n");
    let mut worst = 0.0f64;
    for (i, r) in reports.iter().enumerate() {
        writeln!(
            csv,
            "{i},{},{},{},{},{},{},{},{}",
            r.t1, r.q0, r.q1, r.p0, r.p1, r.action, r.residual_q0, r.residual_q1
        )
        .unwrap();
        worst = worst.max(r.residual_q0.abs()).max(r.residual_q1.abs());
    }
    let checks = vec![DiagnosticRecord::at_most(
        "generating-function",
        worst,
        p.tolerance,
        "exact-segment-action",
    )];
    Ok(Outcome {
        artifacts: vec![Artifact::text("action.csv", csv)],
        checks,
    })
}

fn ergodic(ctx: &Ctx) -> Result<Outcome> {
    let p = ctx.cfg.ergodic_rate.as_ref().expect("resolved");
    let g = cos_squared_angle(ctx.sys.n(), p.pair);
    let u = (!p.u.is_empty()).then_some(p.u.as_slice());
    let run = |windows: &[f64], paths: usize, lane_seed: u64| -> Result<ErgodicStudy> {
        ergodic_study(
            &ctx.sys,
            ctx.noise,
            &p.x0,
            &g,
            windows,
            0.5,
            u,
            paths,
            lane_seed,
            ctx.integrator,
            ctx.ensemble,
        )
    };
    let mean = run(&p.mean_windows, ctx.paths, ctx.seed)?;
    let rate = run(
        &p.rate_windows,
        p.rate_paths.unwrap_or(ctx.paths),
        ctx.seed.wrapping_add(1),
    )?;
    let mut csv = String::from(
        "study,window,mean,mean_se,predicted_mean,l2_deviation,l2_se,predicted_l2,paths\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (name, study) in [("mean", &mean), ("rate", &rate)] {
        for w in &study.windows {
            writeln!(
                csv,
                "{name},{},{},{},{},{},{},{},{}",
                w.window,
                w.mean,
                w.mean_se,
                opt(w.predicted_mean),
                w.l2_deviation,
                w.l2_se,
                opt(w.predicted_l2),
                study.paths
            )
            .unwrap();
        }
    }
    let provenance = ctx.integrator.hash();
    let mut checks = Vec::new();
    for w in &mean.windows {
        if let Some(pred) = w.predicted_mean {
            checks.push(DiagnosticRecord::at_most(
                format!("ergodic-mean-t={}", w.window),
                ((w.mean - pred) / w.mean_se).abs(),
                p.tolerance_se,
                provenance.clone(),
            ));
        }
    }
    checks.push(DiagnosticRecord::at_most(
        "ergodic-rate-slope",
        (rate.rate_exponent - p.expected_slope).abs(),
        p.slope_tolerance,
        provenance,
    ));
    Ok(Outcome {
        artifacts: vec![Artifact::text("ergodic.csv", csv)],
        checks,
    })
}

fn sweep(ctx: &Ctx) -> Result<Outcome> {
    let p = ctx.cfg.averaging_sweep.as_ref().expect("resolved");
    let SystemSpec::HarmonicFamily { frequencies } = ctx.cfg.system.as_ref().unwrap() else {
        return Err(Error::config("system.name", "expected harmonic-family"));
    };
    let chart = ActionAngleChart::new(frequencies.clone(), p.chart_i_min)?;
    let pert = p.perturbation.build(&chart)?;
    let report = run_averaging_experiment(
        &ctx.sys,
        &chart,
        &pert,
        ctx.noise,
        &p.y0,
        &p.sweep,
        ctx.integrator,
        ctx.seed,
        ctx.ensemble,
    )?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let t = &report.trend;
    let first = report.rows.first().map(|r| r.sup_error_mean).unwrap_or(0.0);
    let last = report.rows.last().map(|r| r.sup_error_mean).unwrap_or(0.0);
    let provenance = ctx.integrator.hash();
    let checks = vec![
        DiagnosticRecord::new(
            "averaging-monotone",
            t.inversions as f64,
            1.0,
            t.monotone,
            provenance.clone(),
        ),
        DiagnosticRecord::new(
            "averaging-halved",
            last / first,
            0.5,
            t.halved,
            provenance.clone(),
        ),
        DiagnosticRecord::new(
            "exit-probability-non-increasing",
            report.rows.iter().map(|r| r.exit_prob).fold(0.0, f64::max),
            1.0,
            t.exit_non_increasing,
            provenance,
        ),
    ];
    Ok(Outcome {
        artifacts: vec![
            Artifact {
                name: "averaging.csv".into(),
                bytes: csv,
            },
            Artifact::text(
                "averaging.json",
                serde_json::to_string_pretty(&report.summary_json()).expect("json") + "\n",
            ),
        ],
        checks,
    })
}
