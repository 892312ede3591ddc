//! Self-checks of a configured scenario against the independent oracles.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constants::hz_to_rad;
use crate::error::Result;
use crate::fitting::{fit_background, FitOptions, Param, ParamSet};
use crate::linalg::C64;
use crate::model::{build_evolution_matrix, noise_matrix, propagate_moments, DriveVector, ModelParams, MomentVector};
use crate::oracle::{integrate_moments, psd_quadrature, synthesize_traces, DriveSchedule};
use crate::scenario::Scenario;
use crate::spectrum::{SpectrumWindow, ThermalMode};
use crate::thermal::{lyapunov_solve, thermal_closed_form};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSettings {
    /// Replaces every check's own tolerance.
    pub tolerance: Option<f64>,
    pub random_sets: usize,
    pub n_traces: usize,
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            tolerance: None,
            random_sets: 20,
            n_traces: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Measured deviation; NaN when the check could not run.
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail,
        }
    }

    fn failed(name: &'static str, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            measured: f64::NAN,
            tolerance,
            passed: false,
            detail,
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {:<34} deviation {:.3e} (tolerance {:.1e})",
            self.name, self.measured, self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams {
        omega_rf: hz_to_rad(2.6896e6),
        detuning_ion: hz_to_rad(rng.random_range(-50.0..50.0)),
        detuning_q: hz_to_rad(rng.random_range(-50.0..50.0)),
        gamma_ion: hz_to_rad(rng.random_range(0.01..10.0)),
        gamma_q: hz_to_rad(rng.random_range(1.0..100.0)),
        g: C64::from_polar(hz_to_rad(rng.random_range(0.1..20.0)), rng.random_range(-3.1..3.1)),
        n_ion: rng.random_range(0.0..1e7),
        n_q: rng.random_range(0.0..1e7),
        v0: 2.6e-11,
        ..ModelParams::default()
    }
}

fn thermal_agreement(sc: &Scenario, s: &CheckSettings, tol: f64) -> CheckOutcome {
    const NAME: &str = "thermal closed form vs Lyapunov";
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut sets = vec![sc.params];
    sets.extend((0..s.random_sets).map(|_| random_params(&mut rng)));
    let mut worst = 0.0f64;
    for p in &sets {
        let (cf, ly) = match (
            thermal_closed_form(p),
            lyapunov_solve(&build_evolution_matrix(p), &noise_matrix(p)),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return CheckOutcome::failed(NAME, tol, e.to_string()),
        };
        let scale = cf.t.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let dev = (cf.t - ly.t).iter().fold(0.0f64, |a, z| a.max(z.norm())) / scale;
        worst = worst.max(dev);
    }
    CheckOutcome::new(NAME, worst, tol, format!("{} parameter sets", sets.len()))
}

fn stationary_residual(sc: &Scenario, tol: f64) -> CheckOutcome {
    const NAME: &str = "stationary equation residual";
    let p = &sc.params;
    match thermal_closed_form(p) {
        Ok(th) => {
            let c = noise_matrix(p);
            CheckOutcome::new(
                NAME,
                th.lyapunov_residual(&build_evolution_matrix(p), &c) / c.norm(),
                tol,
                String::new(),
            )
        }
        Err(e) => CheckOutcome::failed(NAME, tol, e.to_string()),
    }
}

fn propagation(sc: &Scenario, tol: f64) -> CheckOutcome {
    const NAME: &str = "propagator vs ODE";
    let p = &sc.params;
    let horizon = 5.0 / p.gamma_q;
    let times: Vec<f64> = (1..=20).map(|k| horizon * k as f64 / 20.0).collect();
    let start = sc.drive_off;
    let scale = start.abs_a().max(start.abs_b()).max(1.0);
    let ode = match integrate_moments(p, &start, &DriveSchedule::off(), 0.0, &times, 1e-13) {
        Ok(t) => t,
        Err(e) => return CheckOutcome::failed(NAME, tol, e.to_string()),
    };
    let e = build_evolution_matrix(p);
    let mut worst = 0.0f64;
    for (t, m) in times.iter().zip(&ode.moments) {
        match propagate_moments(&e, &start, &DriveVector::ZERO, *t) {
            Ok(x) => worst = worst.max((x.a - m.a).norm().max((x.b - m.b).norm()) / scale),
            Err(e) => return CheckOutcome::failed(NAME, tol, e.to_string()),
        }
    }
    CheckOutcome::new(
        NAME,
        worst,
        tol,
        format!("relative to max(|a|, |b|) = {scale:.3e} over [0, 5/γ_q]"),
    )
}

/// Five grid points across both resonances at t₀ = 14 ms.
fn quadrature(sc: &Scenario, tol: f64) -> CheckOutcome {
    const NAME: &str = "closed form vs double quadrature";
    let run = || -> Result<f64> {
        let t0 = 0.014;
        let m = sc.moments_at(t0)?;
        let nu_ion = crate::constants::rad_to_hz(sc.params.detuning_ion);
        let nu_q = crate::constants::rad_to_hz(sc.params.detuning_q);
        let mut hz = vec![nu_ion - 10.0, nu_ion, nu_q, nu_q + 15.0, nu_q + 40.0];
        hz.sort_by(f64::total_cmp);
        hz.dedup();
        let win = SpectrumWindow::from_hz(t0, sc.td, &hz)?;
        let th = sc.thermal()?;
        let closed = crate::spectrum::total_psd(&sc.params, &m, &th, 0.0, &win, ThermalMode::FiniteWindow)?;
        let quad = psd_quadrature(&sc.params, &th, &m, &win, Default::default())?;
        let peak = closed.max_value();
        Ok(closed
            .values
            .iter()
            .zip(&quad.values)
            .filter(|(c, _)| **c > 0.05 * peak)
            .map(|(c, q)| (c - q).abs() / c)
            .fold(0.0, f64::max))
    };
    match run() {
        Ok(d) => CheckOutcome::new(NAME, d, tol, "relative, where S > 5% of the maximum".into()),
        Err(e) => CheckOutcome::failed(NAME, tol, e.to_string()),
    }
}

fn parseval(sc: &Scenario, s: &CheckSettings, tol: f64) -> CheckOutcome {
    const NAME: &str = "Parseval of synthetic traces";
    let run = || -> Result<f64> {
        let t0 = 0.014;
        let syn = synthesize_traces(
            &sc.params,
            &sc.moments_at(t0)?,
            &sc.thermal()?,
            sc.s_noise,
            &sc.window(t0)?,
            &sc.plan()?,
            4,
            s.seed,
        )?;
        Ok(syn.parseval.iter().copied().fold(0.0, f64::max))
    };
    match run() {
        Ok(d) => CheckOutcome::new(NAME, d, tol, "relative".into()),
        Err(e) => CheckOutcome::failed(NAME, tol, e.to_string()),
    }
}

/// Fraction of bins outside 3 standard errors, against an allowance of 5%.
fn coverage(sc: &Scenario, s: &CheckSettings, tol: f64) -> CheckOutcome {
    const NAME: &str = "periodogram within 3 SE";
    let run = || -> Result<f64> {
        let t0 = 0.014;
        let data = sc.synthesize(t0, s.n_traces, s.seed)?;
        let model = sc.closed_form(t0, ThermalMode::FiniteWindow)?;
        let sigma = data.sigma.as_ref().expect("periodograms carry σ");
        let outside = model
            .values
            .iter()
            .zip(&data.values)
            .zip(sigma)
            .filter(|((m, d), e)| (*m - *d).abs() > 3.0 * **e)
            .count();
        Ok(outside as f64 / model.len() as f64)
    };
    match run() {
        Ok(d) => CheckOutcome::new(NAME, d, tol, format!("fraction of bins outside, {} traces", s.n_traces)),
        Err(e) => CheckOutcome::failed(NAME, tol, e.to_string()),
    }
}

fn background_recovery(sc: &Scenario, tol: f64) -> CheckOutcome {
    const NAME: &str = "background fit recovers truth";
    let run = || -> Result<f64> {
        let bg = sc.background();
        let clean = bg.closed_form(0.0, ThermalMode::FiniteWindow)?;
        let sigma = clean.values.iter().map(|v| v / 20f64.sqrt()).collect();
        let r = fit_background(&[clean.with_sigma(sigma)?], &bg.params, &FitOptions::default())?;
        let truth = ParamSet::from_model(&bg.params, &MomentVector::ZERO, bg.s_noise);
        Ok([Param::NQ, Param::GammaQHz, Param::SNoise, Param::NuQHz]
            .iter()
            .map(|p| (r.value(*p) - truth.get(*p)).abs() / truth.get(*p).abs().max(1.0))
            .fold(0.0, f64::max))
    };
    match run() {
        Ok(d) => CheckOutcome::new(NAME, d, tol, "relative, noiseless data".into()),
        Err(e) => CheckOutcome::failed(NAME, tol, e.to_string()),
    }
}

/// Runs every check. An invalid scenario yields a single failed
/// precondition check.
pub fn run_checks(sc: &Scenario, s: &CheckSettings) -> Vec<CheckOutcome> {
    let tol = |default: f64| s.tolerance.unwrap_or(default);
    if let Err(e) = sc.validate().and_then(|_| sc.thermal().map(|_| ())) {
        return vec![CheckOutcome::failed("preconditions", 0.0, e.to_string())];
    }
    vec![
        thermal_agreement(sc, s, tol(1e-10)),
        stationary_residual(sc, tol(1e-12)),
        propagation(sc, tol(1e-8)),
        quadrature(sc, tol(1e-2)),
        parseval(sc, s, tol(1e-10)),
        coverage(sc, s, tol(0.05)),
        background_recovery(sc, tol(1e-6)),
    ]
}
