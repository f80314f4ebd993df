use super::*;
use crate::field::Polynomial;
use crate::hamiltonian::SystemSpec;
use crate::levy::{JumpDistribution, JumpSpec, LevyTriplet};
use crate::marcus::IntegratorConfig;

fn parse(text: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_str(text, "test.toml")
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn opts(dir: &Path, threads: usize) -> RunOptions {
    RunOptions {
        seed: None,
        out: Some(dir.to_path_buf()),
        threads: Some(threads),
    }
}

#[test]
fn unknown_keys_are_rejected_with_location() {
    let err = parse("kind = \"simulate\"\npaths = 2\nbogus = 1\n").unwrap_err();
    let Error::Config { path, message } = err else {
        panic!("expected a config error")
    };
    assert_eq!(path, "test.toml:3");
    assert!(message.contains("bogus"), "{message}");
    let nested = parse("kind = \"simulate\"\n[integrator]\nstep = 0.1\nstpe = 2\n").unwrap_err();
    assert!(nested.to_string().contains("stpe"));
}

#[test]
fn field_errors_name_the_field() {
    let mut c = parse("kind = \"simulate\"\n[integrator]\nstep = -1.0\n")
        .unwrap()
        .resolve()
        .unwrap();
    let err = c.check_fields().unwrap_err();
    assert!(
        matches!(&err, Error::Config { path, .. } if path == "integrator"),
        "{err}"
    );
    c.integrator = Some(IntegratorConfig::new(0.1));
    c.simulate.as_mut().unwrap().x0 = Some(vec![1.0]);
    let err = c.check_fields().unwrap_err();
    assert!(
        matches!(&err, Error::Config { path, .. } if path == "simulate.x0"),
        "{err}"
    );
    let foreign = parse("kind = \"simulate\"\n[action-check]\ninstances = 3\n")
        .unwrap()
        .resolve()
        .unwrap_err();
    assert!(matches!(&foreign, Error::Config { path, .. } if path == "action-check"));
}

#[test]
fn resolved_config_round_trips() {
    for kind in ExperimentKind::ALL {
        let resolved = ExperimentConfig::builtin(kind).resolve().unwrap();
        resolved.check_fields().unwrap();
        let back = parse(&resolved.to_toml()).unwrap();
        assert_eq!(back, resolved, "{kind}");
        assert_eq!(back.resolve().unwrap(), resolved, "{kind}");
    }
}

#[test]
fn builtin_configs_validate_cleanly() {
    for kind in ExperimentKind::ALL {
        let diags = validate(&ExperimentConfig::builtin(kind));
        assert!(!has_failures(&diags), "{kind}: {diags:?}");
    }
    let diags = validate(&ExperimentConfig::builtin(ExperimentKind::AveragingSweep));
    for check in [
        "integrability",
        "transversality",
        "moment-finiteness",
        "gradient-consistency",
    ] {
        let d = diags.iter().find(|d| d.check == check).unwrap();
        assert_eq!(d.status, Status::Pass, "{d:?}");
    }
}

#[test]
fn non_involutive_pair_fails_integrability() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::SymplecticCheck);
    c.system = Some(SystemSpec::Polynomial {
        n: 1,
        hamiltonians: vec![Polynomial::linear(2, 0, 1.0), Polynomial::linear(2, 1, 1.0)],
    });
    c.noise = Some(LevyTriplet::standard(1, JumpSpec::None));
    let diags = validate(&c);
    let d = diags.iter().find(|d| d.check == "integrability").unwrap();
    assert_eq!(d.status, Status::Fail, "{d:?}");
    assert!(run(&c, &RunOptions::default()).is_err());
}

#[test]
fn heavy_tails_fail_the_moment_check() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::Simulate);
    c.noise = Some(LevyTriplet::standard(
        1,
        JumpSpec::compound_poisson(1.0, JumpDistribution::Cauchy { scale: 1.0 }),
    ));
    let diags = validate(&c);
    let d = diags
        .iter()
        .find(|d| d.check == "moment-finiteness")
        .unwrap();
    assert_eq!(d.status, Status::Fail);
}

#[test]
fn zero_drift_is_not_transversal() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::AveragingSweep)
        .resolve()
        .unwrap();
    c.averaging_sweep.as_mut().unwrap().perturbation.drift = crate::averaging::DriftSpec::Zero;
    let diags = validate(&c);
    let d = diags.iter().find(|d| d.check == "transversality").unwrap();
    assert_eq!(d.status, Status::Fail);
}

#[test]
fn higher_degree_growth_is_only_a_warning() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::Simulate);
    let quartic = Polynomial::new(2, [(vec![4, 0], 0.25), (vec![0, 2], 0.5)]).unwrap();
    c.system = Some(SystemSpec::Polynomial {
        n: 1,
        hamiltonians: vec![quartic, Polynomial::linear(2, 0, 1.0)],
    });
    let diags = validate(&c);
    assert_eq!(
        diags
            .iter()
            .find(|d| d.check == "linear-growth")
            .unwrap()
            .status,
        Status::Warn
    );
}

#[test]
fn noiseless_simulation_is_reproducible_and_verifiable() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::Simulate);
    c.noise = Some(LevyTriplet::new(vec![0.0], vec![vec![0.0]], JumpSpec::None));
    c.paths = Some(3);
    c.simulate = Some(SimulateParams {
        horizon: 2.0,
        x0: None,
        binary: true,
    });
    let (a, b) = (tmp(), tmp());
    let ma = run(&c, &opts(a.path(), 1)).unwrap();
    let mb = run(&c, &opts(b.path(), 2)).unwrap();
    assert!(ma.pass);
    assert_eq!(ma.config_hash, mb.config_hash);
    // the resolved copy records its own output directory
    let data = |m: &RunManifest| -> Vec<OutputDigest> {
        m.outputs
            .iter()
            .filter(|o| o.file != RESOLVED_CONFIG)
            .cloned()
            .collect()
    };
    assert_eq!(data(&ma), data(&mb));
    for f in [
        "trajectory.csv",
        "trajectory.bin",
        "final_states.csv",
        RESOLVED_CONFIG,
        MANIFEST,
    ] {
        assert!(a.path().join(f).exists(), "{f}");
    }
    assert!(verify_manifest(a.path()).unwrap().is_empty());
    std::fs::write(a.path().join("final_states.csv"), "tampered").unwrap();
    assert_eq!(
        verify_manifest(a.path()).unwrap(),
        vec!["final_states.csv".to_string()]
    );

    // the noiseless oscillator rotates rigidly, up to the O(h²) Heun phase error
    let text = std::fs::read_to_string(b.path().join("final_states.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(2)
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(
        (row[0] - 2f64.cos()).abs() < 1e-4 && (row[1] + 2f64.sin()).abs() < 1e-4,
        "{row:?}"
    );
}

#[test]
fn resolved_copy_reproduces_the_run() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::ActionCheck);
    c.action_check = Some(ActionParams {
        instances: 4,
        t1_min: 0.5,
        t1_max: 3.0,
        endpoint_range: 1.0,
        conjugate_margin: 0.05,
        tolerance: 1e-4,
    });
    let (a, b) = (tmp(), tmp());
    let first = run(&c, &opts(a.path(), 1)).unwrap();
    let again = ExperimentConfig::load(&a.path().join(RESOLVED_CONFIG)).unwrap();
    let second = run(&again, &opts(b.path(), 1)).unwrap();
    assert_eq!(first.config_hash, second.config_hash);
    assert_eq!(
        std::fs::read(a.path().join("action.csv")).unwrap(),
        std::fs::read(b.path().join("action.csv")).unwrap()
    );
    let mut other = RunOptions {
        seed: Some(99),
        ..opts(b.path(), 1)
    };
    other.out = Some(b.path().join("seed99"));
    let third = run(&c, &other).unwrap();
    assert_ne!(third.config_hash, first.config_hash);
    assert_eq!(third.seed, 99);
}

#[test]
fn failed_checks_give_exit_one() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::ActionCheck);
    c.action_check = Some(ActionParams {
        instances: 2,
        t1_min: 0.5,
        t1_max: 3.0,
        endpoint_range: 1.0,
        conjugate_margin: 0.05,
        tolerance: 1e-30,
    });
    let dir = tmp();
    let result = run(&c, &opts(dir.path(), 1));
    assert!(!result.as_ref().unwrap().pass);
    assert_eq!(exit_code(&result), EXIT_CHECK_FAILED);
    assert!(dir.path().join(MANIFEST).exists());
}

#[test]
fn invalid_config_gives_exit_two_and_no_outputs() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::Simulate);
    c.paths = Some(0);
    let dir = tmp();
    let out = dir.path().join("never");
    let result = run(
        &c,
        &RunOptions {
            out: Some(out.clone()),
            ..Default::default()
        },
    );
    assert_eq!(exit_code(&result), EXIT_CONFIG_INVALID);
    assert!(!out.exists());
}

#[test]
fn write_failure_removes_partial_outputs() {
    let dir = tmp();
    // a directory where a file should go makes the second write fail
    std::fs::create_dir(dir.path().join("trajectory.bin")).unwrap();
    let mut c = ExperimentConfig::builtin(ExperimentKind::Simulate);
    c.simulate = Some(SimulateParams {
        horizon: 0.5,
        x0: None,
        binary: true,
    });
    let result = run(&c, &opts(dir.path(), 1));
    assert!(matches!(result, Err(Error::Io(_))));
    assert_eq!(exit_code(&result), EXIT_CHECK_FAILED);
    assert!(!dir.path().join("trajectory.csv").exists());
    assert!(!dir.path().join(MANIFEST).exists());
}

#[test]
fn runtime_errors_leave_nothing_behind() {
    let mut c = ExperimentConfig::builtin(ExperimentKind::AveragingSweep)
        .resolve()
        .unwrap();
    let p = c.averaging_sweep.as_mut().unwrap();
    p.y0 = vec![4.0, 4.0, 0.0, 0.0];
    c.paths = Some(2);
    let dir = tmp();
    let out = dir.path().join("sweep");
    let result = run(
        &c,
        &RunOptions {
            out: Some(out.clone()),
            threads: Some(1),
            ..Default::default()
        },
    );
    assert!(matches!(result, Err(Error::Domain(_))), "{result:?}");
    assert!(!out.exists());
}

#[test]
fn cli_parses_subcommands_and_flags() {
    let cli = Cli::try_parse_from([
        "stochham",
        "oscillator-moments",
        "--seed",
        "7",
        "--out",
        "x",
        "--threads",
        "4",
        "--check",
    ])
    .unwrap();
    let Command::OscillatorMoments(a) = cli.command else {
        panic!()
    };
    assert_eq!((a.seed, a.threads, a.check), (Some(7), Some(4), true));
    assert_eq!(a.out, Some(PathBuf::from("x")));
    for kind in ExperimentKind::ALL {
        assert!(
            Cli::try_parse_from(["stochham", kind.name()]).is_ok(),
            "{kind}"
        );
    }
    assert!(Cli::try_parse_from(["stochham", "simulate", "--bogus"]).is_err());
}

#[test]
fn check_flag_reports_without_running() {
    let dir = tmp();
    let out = dir.path().join("checked");
    let cli = Cli::try_parse_from([
        "stochham",
        "averaging-sweep",
        "--check",
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    assert_eq!(main_with(cli), EXIT_PASS);
    assert!(!out.exists());
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"simulate\"\npaths = \"many\"\n").unwrap();
    let cli =
        Cli::try_parse_from(["stochham", "simulate", "--config", bad.to_str().unwrap()]).unwrap();
    assert_eq!(main_with(cli), EXIT_CONFIG_INVALID);
    let cli = Cli::try_parse_from([
        "stochham",
        "action-check",
        "--config",
        bad.to_str().unwrap(),
    ])
    .unwrap();
    assert_eq!(main_with(cli), EXIT_CONFIG_INVALID);
}
