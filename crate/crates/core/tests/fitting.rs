use std::collections::BTreeMap;

use quartzion::fitting::{timeseries_at, ParamSet};
use quartzion::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

fn with_sigma(s: Spectrum, n_traces: f64) -> Spectrum {
    let sigma = s.values.iter().map(|v| v / n_traces.sqrt()).collect();
    s.with_sigma(sigma).unwrap()
}

fn noiseless(sc: &Scenario, m: &MomentVector, t0: f64) -> Spectrum {
    with_sigma(sc.closed_form_with(m, t0, ThermalMode::FiniteWindow).unwrap(), 20.0)
}

fn truth(sc: &Scenario, m: &MomentVector) -> ParamSet {
    ParamSet::from_model(&sc.params, m, sc.s_noise)
}

fn relative_residual(problem: &FitProblem, r: &FitResult) -> f64 {
    let model = problem.model_spectra(r).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (m, d) in model.iter().zip(&problem.spectra) {
        for (a, b) in m.values.iter().zip(&d.values) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    (num / den).sqrt()
}

fn perturbed(free: &[Param], t: &ParamSet, signs: &[f64]) -> BTreeMap<Param, FreeParam> {
    free.iter()
        .zip(signs.iter().cycle())
        .map(|(p, s)| {
            let v = t.get(*p);
            let start = if *p == Param::DeltaRad {
                v + 0.2 * s * v.abs().max(1.0)
            } else {
                v * (1.0 + 0.2 * s)
            };
            (*p, FreeParam::new(*p, start))
        })
        .collect()
}

fn fixed_from(params: &[Param], t: &ParamSet) -> BTreeMap<Param, f64> {
    params.iter().map(|p| (*p, t.get(*p))).collect()
}

const SIGN_PATTERNS: [[f64; 3]; 3] = [[1.0, -1.0, 1.0], [-1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]];

#[test]
fn background_recovers_noiseless_truth_from_perturbed_starts() {
    let sc = Scenario::published().background();
    let data = noiseless(&sc, &MomentVector::ZERO, 0.0);
    let t = truth(&sc, &MomentVector::ZERO);
    let free = [Param::NQ, Param::GammaQHz, Param::SNoise, Param::NuQHz];
    for signs in SIGN_PATTERNS {
        let problem = FitProblem::new(
            FitModel::Background,
            vec![data.clone()],
            sc.params,
            BTreeMap::new(),
            perturbed(&free, &t, &signs),
            FitOptions::default(),
        )
        .unwrap();
        let r = problem.solve().unwrap();
        for p in free {
            assert!(
                (r.value(p) - t.get(p)).abs() <= 1e-6 * t.get(p).abs(),
                "{p}: {} vs {}",
                r.value(p),
                t.get(p)
            );
        }
        assert!(relative_residual(&problem, &r) < 1e-8);
    }
}

#[test]
fn full_spectrum_recovers_noiseless_truth_from_perturbed_starts() {
    let sc = Scenario::published();
    for t0 in [0.014, 0.05] {
        let m = sc.moments_with_erp(t0, 150f64.to_radians());
        let data = noiseless(&sc, &m, t0);
        let t = truth(&sc, &m);
        let free = [Param::DeltaRad, Param::NuIonHz, Param::NuQHz, Param::AAbs, Param::BAbs];
        let fixed = fixed_from(
            &[Param::GammaQHz, Param::GammaIonHz, Param::NQ, Param::GHz, Param::SNoise],
            &t,
        );
        for signs in SIGN_PATTERNS {
            let problem = FitProblem::new(
                FitModel::Full,
                vec![data.clone()],
                sc.params,
                fixed.clone(),
                perturbed(&free, &t, &signs),
                FitOptions::default(),
            )
            .unwrap();
            let r = problem.solve().unwrap();
            for p in free {
                assert!(
                    (r.value(p) - t.get(p)).abs() <= 1e-6 * t.get(p).abs().max(1.0),
                    "{p} at t0 = {t0}: {} vs {}",
                    r.value(p),
                    t.get(p)
                );
            }
            assert!(relative_residual(&problem, &r) < 1e-8);
            assert!((r.erp().unwrap().to_degrees() - 150.0).abs() < 1e-4);
        }
    }
}

/// At |⟨a(0)⟩| = 3e3 the ion amplitude at ν₁ is dominated by what the quartz
/// pumps in, |⟨a(0)⟩| and δ(0) are barely constrained and a ±20% start can land
/// in a secondary minimum. Ten times more initial ion motion removes it.
fn identifiable() -> Scenario {
    let mut sc = Scenario::published();
    sc.drive_off = MomentVector::from_polar(3e4, sc.drive_off.relative_phase(), 1e6, 0.0);
    sc
}

fn coupling_series(sc: &Scenario) -> Vec<Spectrum> {
    let spectra: Vec<Spectrum> = (0..=60)
        .map(|k| {
            let t0 = 0.01 * k as f64;
            noiseless(sc, &sc.moments_at(t0).unwrap(), t0)
        })
        .collect();
    timeseries_at(&spectra, 1.35).unwrap()
}

fn coupling_problem(sc: &Scenario, series: Vec<Spectrum>, signs: &[f64]) -> (FitProblem, ParamSet) {
    let t = truth(sc, &sc.drive_off);
    let free = [Param::GHz, Param::AAbs, Param::BAbs, Param::DeltaRad];
    let fixed = fixed_from(
        &[
            Param::NQ,
            Param::GammaQHz,
            Param::SNoise,
            Param::NuQHz,
            Param::NuIonHz,
            Param::GammaIonHz,
        ],
        &t,
    );
    let problem = FitProblem::new(
        FitModel::CouplingTimeSeries,
        series,
        sc.params,
        fixed,
        perturbed(&free, &t, signs),
        FitOptions::default(),
    )
    .unwrap();
    (problem, t)
}

#[test]
fn coupling_recovers_noiseless_truth_from_perturbed_starts() {
    let sc = identifiable();
    let series = coupling_series(&sc);
    for signs in SIGN_PATTERNS {
        let (problem, t) = coupling_problem(&sc, series.clone(), &signs);
        let r = problem.solve().unwrap();
        for p in [Param::GHz, Param::AAbs, Param::BAbs, Param::DeltaRad] {
            assert!(
                (r.value(p) - t.get(p)).abs() <= 1e-6 * t.get(p).abs(),
                "{p}: {} vs {}",
                r.value(p),
                t.get(p)
            );
        }
        assert!(relative_residual(&problem, &r) < 1e-8);
    }
}

#[test]
fn doubling_both_amplitudes_quadruples_coherent_part_and_keeps_g() {
    let sc = identifiable();
    let mut doubled = sc.clone();
    doubled.drive_off = MomentVector::from_polar(2.0 * sc.drive_off.abs_a(), sc.drive_off.relative_phase(), 2e6, 0.0);
    let c1 = sc
        .closed_form(0.02, ThermalMode::FiniteWindow)
        .unwrap()
        .components
        .unwrap();
    let c2 = doubled
        .closed_form(0.02, ThermalMode::FiniteWindow)
        .unwrap()
        .components
        .unwrap();
    for (a, b) in c1.coherent.iter().zip(&c2.coherent) {
        assert!((4.0 * a - b).abs() <= 1e-12 * b.abs());
    }
    let (p1, _) = coupling_problem(&sc, coupling_series(&sc), &[1.0]);
    let (p2, _) = coupling_problem(&doubled, coupling_series(&doubled), &[1.0]);
    let (r1, r2) = (p1.solve().unwrap(), p2.solve().unwrap());
    assert!((r1.value(Param::GHz) - r2.value(Param::GHz)).abs() < 1e-8 * r1.value(Param::GHz));
    assert!((r1.value(Param::DeltaRad) - r2.value(Param::DeltaRad)).abs() < 1e-8);
    assert!((r2.value(Param::AAbs) / r1.value(Param::AAbs) - 2.0).abs() < 1e-8);
}

#[test]
fn common_phase_of_a_and_b_does_not_change_the_fit() {
    let sc = Scenario::published();
    let m = sc.moments_with_erp(0.014, 150f64.to_radians());
    let base = noiseless(&sc, &m, 0.014);
    let shifted = noiseless(&sc, &m.rotated(1.234), 0.014);
    for (a, b) in base.values.iter().zip(&shifted.values) {
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }
    let t = truth(&sc, &m);
    let free = [Param::DeltaRad, Param::NuIonHz, Param::NuQHz, Param::AAbs, Param::BAbs];
    let fixed = fixed_from(
        &[Param::GammaQHz, Param::GammaIonHz, Param::NQ, Param::GHz, Param::SNoise],
        &t,
    );
    let fit = |s: &Spectrum| {
        FitProblem::new(
            FitModel::Full,
            vec![s.clone()],
            sc.params,
            fixed.clone(),
            perturbed(&free, &t, &[1.0, -1.0]),
            FitOptions::default(),
        )
        .unwrap()
        .solve()
        .unwrap()
    };
    let (r1, r2) = (fit(&base), fit(&shifted));
    for p in free {
        assert!(
            (r1.value(p) - r2.value(p)).abs() <= 1e-9 * r1.value(p).abs().max(1.0),
            "{p}"
        );
    }
}

#[test]
fn chi_squared_examples() {
    let sc = Scenario::published();
    let data = noiseless(&sc, &sc.drive_off, 0.0);
    assert_eq!(chi_squared(&data, &data, 5).unwrap(), (0.0, 0.0));

    let sigma = data.sigma.clone().unwrap();
    let off_by_one: Vec<f64> = data
        .values
        .iter()
        .zip(&sigma)
        .enumerate()
        .map(|(k, (v, s))| if k % 2 == 0 { v + s } else { v - s })
        .collect();
    let model = Spectrum::new(data.window.clone(), off_by_one).unwrap();
    let (chi2, nu) = chi_squared(&model, &data, 5).unwrap();
    let n = data.len() as f64;
    assert!((chi2 - n).abs() < 1e-9 * n);
    assert!((nu - n / (n - 5.0)).abs() < 1e-12);

    let other = noiseless(&sc, &sc.drive_off, 0.014);
    assert!(matches!(chi_squared(&other, &data, 5), Err(Error::GridMismatch(_))));
    let mut shifted = sc.clone();
    shifted.grid.start_hz += 0.5;
    let moved = noiseless(&shifted, &sc.drive_off, 0.0);
    assert!(matches!(chi_squared(&moved, &data, 5), Err(Error::GridMismatch(_))));
}

#[test]
fn flat_background_is_rejected() {
    let sc = Scenario::published();
    let win = sc.window(0.0).unwrap();
    let flat = with_sigma(
        Spectrum::new(win.clone(), vec![sc.s_noise; win.offsets.len()]).unwrap(),
        20.0,
    );
    let err = fit_background(&[flat], &sc.params, &FitOptions::default()).unwrap_err();
    assert!(
        matches!(err, Error::DegenerateFit(_) | Error::NonConvergence { .. }),
        "{err}"
    );
}

#[test]
fn coupling_fit_without_ion_signal_reports_degeneracy() {
    let sc = Scenario::published();
    let mut quartz_only = sc.background();
    quartz_only.drive_off = MomentVector::from_polar(0.0, 0.0, 1e6, 0.0);
    let series = coupling_series(&quartz_only);
    let bg = fit_background(
        &[noiseless(&sc.background(), &MomentVector::ZERO, 0.0)],
        &sc.params,
        &FitOptions::default(),
    )
    .unwrap();
    let start = CouplingStart {
        nu_ion_hz: 1.35,
        g_hz: 1.2,
        a_abs: 2e3,
        b_abs: 1.2e6,
        delta_rad: 0.3,
        gamma_ion_hz: None,
    };
    match fit_coupling_timeseries(&series, &bg, &start, &FitOptions::default()) {
        Ok(r) => assert!(r.has_degeneracy(), "{:?}", r.diagnostics),
        Err(e) => assert!(matches!(e, Error::DegenerateFit(_)), "{e}"),
    }
}

#[test]
fn full_fit_without_ions_reports_degeneracy() {
    let sc = Scenario::published();
    let m = MomentVector::from_polar(0.0, 0.0, 3e4, 0.0);
    let data = noiseless(&sc.background(), &m, 0.014);
    let t = truth(&sc, &sc.moments_with_erp(0.014, 150f64.to_radians()));
    let free = [Param::DeltaRad, Param::NuIonHz, Param::NuQHz, Param::AAbs, Param::BAbs];
    let fixed = fixed_from(
        &[Param::GammaQHz, Param::GammaIonHz, Param::NQ, Param::GHz, Param::SNoise],
        &t,
    );
    let problem = FitProblem::new(
        FitModel::Full,
        vec![data],
        sc.params,
        fixed,
        perturbed(&free, &t, &[1.0]),
        FitOptions::default(),
    )
    .unwrap();
    match problem.solve() {
        Ok(r) => assert!(r.has_degeneracy(), "{:?}", r.diagnostics),
        Err(e) => assert!(matches!(e, Error::DegenerateFit(_)), "{e}"),
    }
}

#[test]
fn accepted_steps_never_raise_chi2_on_noisy_data() {
    let sc = Scenario::published();
    let data = sc.synthesize(0.014, 20, 7).unwrap();
    let bg = fit_background(
        &[sc.background().synthesize(0.0, 20, 8).unwrap()],
        &sc.params,
        &FitOptions::default(),
    )
    .unwrap();
    let start = CouplingStart {
        nu_ion_hz: 1.35,
        g_hz: 1.449,
        a_abs: 3e3,
        b_abs: 1e6,
        delta_rad: sc.drive_off.relative_phase(),
        gamma_ion_hz: None,
    };
    let r = fit_shortened(&data, &bg, &start, 1.0, &FitOptions::default()).unwrap();
    assert!(r.chi2_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.chi2_history);
    assert!(r.chi2_history.len() > 1);
}

#[test]
fn joint_fit_recovers_shared_coupling() {
    let sc = Scenario::published();
    let spectra: Vec<Spectrum> = [0.0, 0.014, 0.025, 0.05]
        .iter()
        .map(|&t0| noiseless(&sc, &sc.moments_at(t0).unwrap(), t0))
        .collect();
    let (problem, t) = coupling_problem(&sc, coupling_series(&sc), &[1.0, -1.0]);
    let coupling = problem.solve().unwrap();
    let mut previous = coupling.clone();
    previous.values.set(Param::GHz, 1.3);
    let r = fit_joint(&spectra, &previous, &FitOptions::default()).unwrap();
    assert!((r.value(Param::GHz) - t.get(Param::GHz)).abs() < 1e-6 * t.get(Param::GHz));
    assert!((r.value(Param::NuIonHz) - 1.35).abs() < 1e-6);
}

#[test]
fn shortened_fit_scales_coupling_with_ion_number() {
    let mut sc = Scenario::published();
    let ratio: f64 = 0.25;
    sc.params.g *= ratio.sqrt();
    sc.params.gamma_q *= 1.1;
    let m = sc.moments_with_erp(0.014, 150f64.to_radians());
    let data = noiseless(&sc, &m, 0.014);
    let bg = fit_background(
        &[noiseless(&Scenario::published().background(), &MomentVector::ZERO, 0.0)],
        &sc.params,
        &FitOptions::default(),
    )
    .unwrap();
    let start = CouplingStart {
        nu_ion_hz: 1.3,
        g_hz: 1.449,
        a_abs: 0.8 * m.abs_a(),
        b_abs: 1.2 * m.abs_b(),
        delta_rad: m.relative_phase() + 0.2,
        gamma_ion_hz: None,
    };
    let r = fit_shortened(&data, &bg, &start, ratio, &FitOptions::default()).unwrap();
    assert!((r.value(Param::GHz) - 1.449 * 0.5).abs() < 1e-12);
    assert!((r.value(Param::GammaQHz) - 39.81 * 1.1).abs() < 1e-5);
    assert!((r.value(Param::NuIonHz) - 1.35).abs() < 1e-6);
}

/// Per bin, |c + X|² with deterministic c and circular Gaussian X has
/// variance S_st(S_st + 2|c|²).
fn exact_sigma(model: &Spectrum, n_traces: f64) -> Vec<f64> {
    let c = model.components.as_ref().unwrap();
    c.coherent
        .iter()
        .zip(&c.thermal)
        .map(|(coh, th)| {
            let st = th + c.noise;
            (st * (st + 2.0 * coh) / n_traces).sqrt()
        })
        .collect()
}

#[test]
fn reduced_chi_squared_of_twenty_trace_averages() {
    let sc = Scenario::published();
    let model = sc.closed_form(0.014, ThermalMode::FiniteWindow).unwrap();
    let sigma = exact_sigma(&model, 20.0);
    let inside = (0..20u64)
        .filter(|&seed| {
            let data = sc
                .synthesize(0.014, 20, 1000 + seed)
                .unwrap()
                .with_sigma(sigma.clone())
                .unwrap();
            let (_, nu) = chi_squared(&model, &data, 0).unwrap();
            (0.7..=1.4).contains(&nu)
        })
        .count();
    assert!(inside >= 19, "{inside}/20 seeds inside [0.7, 1.4]");
}

/// The per-bin sample standard error of twenty traces scatters with the data
/// and pulls χ²_ν above 1.
#[test]
fn sample_standard_errors_bias_reduced_chi_squared_upward() {
    let sc = Scenario::published();
    let model = sc.closed_form(0.014, ThermalMode::FiniteWindow).unwrap();
    let mean: f64 = (0..10u64)
        .map(|seed| {
            chi_squared(&model, &sc.synthesize(0.014, 20, 1000 + seed).unwrap(), 0)
                .unwrap()
                .1
        })
        .sum::<f64>()
        / 10.0;
    assert!(mean > 1.1, "mean χ²_ν = {mean}");
}

/// Twenty-trace averages of background periodograms are Γ(20, S/20)
/// distributed bin by bin, which is cheap to sample directly.
#[test]
fn one_sigma_intervals_cover_about_68_percent() {
    let sc = Scenario::published().background();
    let clean = sc.closed_form(0.0, ThermalMode::FiniteWindow).unwrap();
    let t = truth(&sc, &MomentVector::ZERO);
    let params = [Param::NQ, Param::GammaQHz, Param::SNoise, Param::NuQHz];
    let mut hits = [0usize; 4];
    let reps = 200;
    for seed in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = clean
            .values
            .iter()
            .map(|s| Gamma::new(20.0, s / 20.0).unwrap().sample(&mut rng))
            .collect();
        let data = Spectrum::new(clean.window.clone(), values).unwrap();
        let opts = FitOptions {
            weighting: Weighting::Model { n_traces: 20 },
            ..FitOptions::default()
        };
        let r = fit_background(&[data], &sc.params, &opts).unwrap();
        for (h, p) in hits.iter_mut().zip(params) {
            if (r.value(p) - t.get(p)).abs() <= r.sigma(p).unwrap() {
                *h += 1;
            }
        }
    }
    for (h, p) in hits.iter().zip(params) {
        let frac = *h as f64 / reps as f64;
        assert!((frac - 0.6827).abs() <= 0.07, "{p}: coverage {frac}");
    }
}
