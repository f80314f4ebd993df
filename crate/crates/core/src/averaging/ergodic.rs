use serde::Serialize;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSystem;
use crate::levy::{characteristic_exponent_real, JumpSpec, LevyTriplet, NoisePath, NoiseSampler};
use crate::marcus::{self, IntegratorConfig, SdeModel, StepKind};
use crate::rng::StreamId;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicEstimate {
    pub window: f64,
    pub time_average: f64,
    pub prediction: Option<f64>,
    /// `|time_average − prediction|`
    pub deviation: Option<f64>,
    /// Fitted exponent of the L² deviation against the window, when estimated
    /// over several windows.
    pub rate_exponent: Option<f64>,
}

/// `(1/t)∫₀ᵗ g(X_r) dr` for every window in `windows` (increasing, on the
/// noise grid), by the trapezoid rule over the flow segments of one run.
pub fn time_averages(
    sys: &HamiltonianSystem,
    noise: &NoisePath,
    x0: &[f64],
    g: &dyn Fn(&[f64]) -> f64,
    windows: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    if windows.is_empty()
        || windows.iter().any(|w| !(*w > 0.0))
        || windows.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::Argument(
            "windows must be positive and increasing".into(),
        ));
    }
    let horizon = windows[windows.len() - 1];
    let noise = noise.restrict(noise.start() + horizon)?;
    let fields: Vec<_> = (0..=sys.channels())
        .map(|k| sys.field(k))
        .collect::<Result<_>>()?;
    let model = SdeModel::hamiltonian(&fields);
    let start = noise.start();
    let mut acc = 0.0;
    let mut last = (start, g(x0));
    let mut out = Vec::with_capacity(windows.len());
    marcus::integrate_model(&model, &[&noise], x0, cfg, false, |t, x, kind| {
        let gx = g(x);
        if let StepKind::Flow = kind {
            acc += 0.5 * (last.1 + gx) * (t - last.0);
            if let Some(&w) = windows.get(out.len()) {
                if (t - start - w).abs() <= 1e-9 * w.max(1.0) {
                    out.push(acc / w);
                }
            }
        }
        last = (t, gx);
        true
    })?;
    if out.len() != windows.len() {
        return Err(Error::Argument("windows must lie on the noise grid".into()));
    }
    Ok(out)
}

/// Time average of `g` over one window, paired with a prediction if given.
pub fn ergodic_average(
    sys: &HamiltonianSystem,
    noise: &NoisePath,
    x0: &[f64],
    g: &dyn Fn(&[f64]) -> f64,
    window: f64,
    prediction: Option<f64>,
    cfg: &IntegratorConfig,
) -> Result<ErgodicEstimate> {
    let avg = time_averages(sys, noise, x0, g, &[window], cfg)?[0];
    Ok(ErgodicEstimate {
        window,
        time_average: avg,
        prediction,
        deviation: prediction.map(|p| (avg - p).abs()),
        rate_exponent: None,
    })
}

/// First and second moments of `(1/t)∫₀ᵗ cos²⟨u, B_s + L_s⟩ ds` with `B`
/// standard Brownian motion and `L` a symmetric pure-jump process.
///
/// With `a(v) = ½|v|² − Re η₀(v)`, `A = a(2u)`, `B = a(4u) − a(2u)` the mean
/// is `1/2 + (1 − e^{−At})/(2At)` and the second moment is `1/(4t²)` times
/// `∫₀ᵗ∫₀ʳ [e^{−Ar−Bs} + e^{−A(r−s)} + 2e^{−As} + 2e^{−Ar} + 2] ds dr`, which
/// is evaluated in closed form.
pub fn analytic_ergodic_moment(u: &[f64], t: f64, spec: &JumpSpec) -> Result<(f64, f64)> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Argument(format!("window must be > 0, got {t}")));
    }
    let a = |scale: f64| -> f64 {
        let v: Vec<f64> = u.iter().map(|x| scale * x).collect();
        0.5 * v.iter().map(|x| x * x).sum::<f64>() - characteristic_exponent_real(spec, &v)
    };
    let big_a = a(2.0);
    let big_b = a(4.0) - big_a;
    let big_c = big_a;
    if !(big_a > 0.0) || !(big_c > 0.0) {
        return Err(Error::Domain(format!(
            "ergodic rate A = {big_a} must be positive"
        )));
    }
    let ea = (-big_a * t).exp();
    let mean = 0.5 + (1.0 - ea) / (2.0 * big_a * t);
    // ∫₀ᵗ e^{−Ar}(1 − e^{−Br})/B dr, with the B → 0 limit
    let first = if big_b.abs() * t < 1e-8 {
        (1.0 - ea * (1.0 + big_a * t)) / (big_a * big_a)
    } else {
        let ab = big_a + big_b;
        ((1.0 - ea) / big_a - (1.0 - (-ab * t).exp()) / ab) / big_b
    };
    let second_term = t / big_c - (1.0 - (-big_c * t).exp()) / (big_c * big_c);
    let third = 2.0 * t / big_a - 2.0 * (1.0 - ea) / (big_a * big_a);
    let fourth = 2.0 * (1.0 - ea * (1.0 + big_a * t)) / (big_a * big_a);
    let second = (first + second_term + third + fourth + t * t) / (4.0 * t * t);
    Ok((mean, second))
}

/// `√(E[(avg − ½)²])` from the analytic moments.
pub fn analytic_l2_deviation(u: &[f64], t: f64, spec: &JumpSpec) -> Result<f64> {
    let (m, s) = analytic_ergodic_moment(u, t, spec)?;
    Ok((s - m + 0.25).max(0.0).sqrt())
}

/// Monte Carlo statistics of a time average at several windows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicWindow {
    pub window: f64,
    pub mean: f64,
    pub mean_se: f64,
    /// `√(mean of (avg − target)²)`
    pub l2_deviation: f64,
    pub l2_se: f64,
    pub predicted_mean: Option<f64>,
    pub predicted_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicStudy {
    pub target: f64,
    pub paths: usize,
    pub windows: Vec<ErgodicWindow>,
    /// Log-log slope of the L² deviation against the window.
    pub rate_exponent: f64,
}

/// Time averages of `g` at `windows` over `paths` independent runs from
/// `x0`, compared with `target`. When `u` is given, the analytic moments of
/// `cos²⟨u, W⟩` are attached.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_study(
    sys: &HamiltonianSystem,
    triplet: &LevyTriplet,
    x0: &[f64],
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    windows: &[f64],
    target: f64,
    u: Option<&[f64]>,
    paths: usize,
    master_seed: u64,
    cfg: &IntegratorConfig,
    ensemble: &Ensemble,
) -> Result<ErgodicStudy> {
    if paths < 2 {
        return Err(Error::Argument(
            "an ergodic study needs at least 2 paths".into(),
        ));
    }
    let sampler = NoiseSampler::new(triplet)?;
    let horizon = windows
        .last()
        .copied()
        .ok_or_else(|| Error::Argument("no windows".into()))?;
    let runs = ensemble.map(paths, |i| {
        let noise = sampler.sample(horizon, cfg.step, StreamId::new(master_seed, i))?;
        time_averages(sys, &noise, x0, g, windows, cfg)
    })?;
    let mut out = Vec::with_capacity(windows.len());
    for (k, &w) in windows.iter().enumerate() {
        let col: Vec<f64> = runs.iter().map(|r| r[k]).collect();
        let (mean, mean_se) = stats::mean_se(&col);
        let sq: Vec<f64> = col.iter().map(|a| (a - target).powi(2)).collect();
        let (msq, msq_se) = stats::mean_se(&sq);
        let l2 = msq.sqrt();
        let predicted = match u {
            Some(u) => Some((
                analytic_ergodic_moment(u, w, &triplet.jumps)?.0,
                analytic_l2_deviation(u, w, &triplet.jumps)?,
            )),
            None => None,
        };
        out.push(ErgodicWindow {
            window: w,
            mean,
            mean_se,
            l2_deviation: l2,
            l2_se: if l2 > 0.0 { msq_se / (2.0 * l2) } else { 0.0 },
            predicted_mean: predicted.map(|p| p.0),
            predicted_l2: predicted.map(|p| p.1),
        });
    }
    let rate_exponent = if out.len() >= 2 {
        let xs: Vec<f64> = out.iter().map(|w| w.window).collect();
        let ys: Vec<f64> = out.iter().map(|w| w.l2_deviation).collect();
        stats::loglog_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    Ok(ErgodicStudy {
        target,
        paths,
        windows: out,
        rate_exponent,
    })
}

/// `g = q_k²/(q_k² + p_k²) = cos²θ_k` on oscillator pair `k` (1-based) of ℝ²ⁿ.
pub fn cos_squared_angle(n: usize, k: usize) -> impl Fn(&[f64]) -> f64 + Send + Sync {
    move |x: &[f64]| {
        let (q, p) = (x[k - 1], x[n + k - 1]);
        q * q / (q * q + p * p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::harmonic_family;
    use crate::levy::{sample_noise_path, JumpDistribution};

    /// Independent oracle: nested Simpson rule for the double integral.
    fn second_moment_quadrature(a: f64, b: f64, t: f64) -> f64 {
        let n = 400;
        let simpson = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| {
            let h = (hi - lo) / n as f64;
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let inner = |r: f64| {
            simpson(
                &|s: f64| {
                    (-a * r - b * s).exp()
                        + (-a * (r - s)).exp()
                        + 2.0 * (-a * s).exp()
                        + 2.0 * (-a * r).exp()
                        + 2.0
                },
                0.0,
                r,
            )
        };
        simpson(&inner, 0.0, t) / (4.0 * t * t)
    }

    #[test]
    fn brownian_only_values() {
        let (m, s) = analytic_ergodic_moment(&[1.0, 1.0], 1.0, &JumpSpec::None).unwrap();
        assert!((m - ((1.0 - (-4.0f64).exp()) / 8.0 + 0.5)).abs() < 1e-15);
        // A = 4, B = 12
        assert!((s - second_moment_quadrature(4.0, 12.0, 1.0)).abs() < 1e-9);
    }

    #[test]
    fn closed_form_matches_quadrature_with_jumps() {
        let spec = JumpSpec::compound_poisson(
            2.0,
            JumpDistribution::Uniform {
                low: -1.0,
                high: 1.0,
            },
        );
        for t in [0.3, 2.0, 7.0] {
            let (_, s) = analytic_ergodic_moment(&[1.0, 1.0], t, &spec).unwrap();
            let re = |v: [f64; 2]| characteristic_exponent_real(&spec, &v);
            let a = 4.0 - re([2.0, 2.0]);
            let b = 16.0 - re([4.0, 4.0]) - a;
            assert!(
                (s - second_moment_quadrature(a, b, t)).abs() < 1e-9,
                "t = {t}"
            );
        }
    }

    #[test]
    fn long_window_limits() {
        let (m, s) = analytic_ergodic_moment(&[1.0, 1.0], 1e7, &JumpSpec::None).unwrap();
        assert!((m - 0.5).abs() < 1e-7 && (s - 0.25).abs() < 1e-7);
        let d10 = analytic_l2_deviation(&[1.0, 1.0], 10.0, &JumpSpec::None).unwrap();
        let d1000 = analytic_l2_deviation(&[1.0, 1.0], 1000.0, &JumpSpec::None).unwrap();
        assert!(((d1000 / d10).ln() / 100f64.ln() + 0.5).abs() < 0.01);
    }

    #[test]
    fn degenerate_rate_is_rejected() {
        assert!(analytic_ergodic_moment(&[0.0, 0.0], 1.0, &JumpSpec::None).is_err());
        assert!(analytic_ergodic_moment(&[1.0, 1.0], 0.0, &JumpSpec::None).is_err());
    }

    #[test]
    fn constant_observable_averages_to_itself() {
        let sys = harmonic_family(&[1.0, 1.0]).unwrap();
        let t = LevyTriplet::standard(2, JumpSpec::atoms([(vec![0.5, 0.0], 1.0)]));
        let noise = sample_noise_path(&t, 3.0, 0.01, StreamId::new(1, 1)).unwrap();
        let e = ergodic_average(
            &sys,
            &noise,
            &[1.0, 1.0, 0.0, 0.0],
            &|_| 2.5,
            3.0,
            Some(2.5),
            &IntegratorConfig::new(0.01),
        )
        .unwrap();
        assert!((e.time_average - 2.5).abs() < 1e-12);
        assert!(e.deviation.unwrap() < 1e-12);
    }

    #[test]
    fn angle_follows_the_noise() {
        // g depends on θ₂ = −(W¹ + W²) only; compare with the exact angle.
        let sys = harmonic_family(&[1.0, 1.0]).unwrap();
        let t = LevyTriplet::standard(2, JumpSpec::None);
        let noise = sample_noise_path(&t, 2.0, 1e-3, StreamId::new(3, 0)).unwrap();
        let g = cos_squared_angle(2, 2);
        let num = time_averages(
            &sys,
            &noise,
            &[1.0, 1.0, 0.0, 0.0],
            &g,
            &[2.0],
            &IntegratorConfig::midpoint(1e-3),
        )
        .unwrap()[0];
        let w = noise.brownian_at_grid();
        let vals: Vec<f64> = w.iter().map(|b| (b[0] + b[1]).cos().powi(2)).collect();
        let exact: f64 = vals
            .windows(2)
            .map(|v| 0.5 * (v[0] + v[1]) * 1e-3)
            .sum::<f64>()
            / 2.0;
        // the midpoint rotation lags the exact phase by about w³/12 per step
        assert!((num - exact).abs() < 2e-4, "{num} vs {exact}");
    }
}
