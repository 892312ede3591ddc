//! The staged pipeline: background, coupling time series, full spectrum, and
//! the joint and shortened variants.

use std::collections::BTreeMap;

use super::{Diagnostic, FitModel, FitOptions, FitProblem, FitResult, FreeParam, Param};
use crate::constants::TWO_PI;
use crate::error::{Error, Result};
use crate::model::{build_evolution_matrix, propagate_moments, DriveVector, ModelParams, MomentVector};
use crate::spectrum::{Spectrum, SpectrumWindow};

/// Starting values for the fits that involve the ions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingStart {
    /// ν_ion − ν_RF (Hz); pinned to ν₁ in the time-series fit.
    pub nu_ion_hz: f64,
    /// |g|/2π (Hz).
    pub g_hz: f64,
    pub a_abs: f64,
    pub b_abs: f64,
    pub delta_rad: f64,
    /// `Some(start)` frees γ_ion/2π; `None` pins it to 0.
    pub gamma_ion_hz: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Starting values for the background fit read off one spectrum: the floor
/// from the outer fifth of the grid, ν_q at the (5-bin smoothed) maximum,
/// γ_q from the full width at half maximum above the floor, and n_q from the
/// peak height 2V₀²n_q/γ_q.
pub fn background_guess(s: &Spectrum, v0: f64) -> Result<BTreeMap<Param, f64>> {
    let n = s.len();
    if n < 5 {
        return Err(Error::FitSetup(format!(
            "a background guess needs at least 5 bins, got {n}"
        )));
    }
    let hz = s.window.offsets_hz();
    let smooth: Vec<f64> = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(2);
            let hi = (k + 3).min(n);
            s.values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let edge = (n / 10).max(1);
    let floor = median(s.values[..edge].iter().chain(&s.values[n - edge..]).copied().collect());
    let (kmax, &peak) = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let height = (peak - floor).max(f64::MIN_POSITIVE);
    let half = floor + 0.5 * height;
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = kmax;
        for k in range {
            if smooth[k] < half {
                let t = (smooth[prev] - half) / (smooth[prev] - smooth[k]);
                return Some(hz[prev] + t * (hz[k] - hz[prev]));
            }
            prev = k;
        }
        None
    };
    let left = crossing(&mut (0..kmax).rev());
    let right = crossing(&mut (kmax + 1..n));
    let step = if n > 1 {
        (hz[n - 1] - hz[0]) / (n - 1) as f64
    } else {
        1.0
    };
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (hz[kmax] - l),
        (None, Some(r)) => 2.0 * (r - hz[kmax]),
        (None, None) => 10.0 * step,
    }
    .max(step.abs());
    let gamma = TWO_PI * fwhm;
    let mut out = BTreeMap::new();
    out.insert(Param::NuQHz, hz[kmax]);
    out.insert(Param::GammaQHz, fwhm);
    out.insert(Param::SNoise, floor.max(1e-6 * peak.abs()).max(f64::MIN_POSITIVE));
    out.insert(Param::NQ, (height * gamma / (2.0 * v0 * v0)).max(f64::MIN_POSITIVE));
    Ok(out)
}

/// Step 1: S^th + S^noise with |g| = 0 on spectra recorded without ions.
/// Returns n_q, γ_q, S_noise and a provisional ν_q.
pub fn fit_background(spectra: &[Spectrum], base: &ModelParams, options: &FitOptions) -> Result<FitResult> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::FitSetup("no background spectra".into()))?;
    let guess = background_guess(first, base.v0)?;
    let free = guess.iter().map(|(p, v)| (*p, FreeParam::new(*p, *v))).collect();
    let problem = FitProblem::new(
        FitModel::Background,
        spectra.to_vec(),
        ModelParams {
            g: crate::linalg::C64::from(0.0),
            ..*base
        },
        BTreeMap::new(),
        free,
        options.clone(),
    )?;
    let mut result = problem.solve()?;
    result.base = *base;
    if let Some(Diagnostic::Unconstrained { params }) = result
        .diagnostics
        .iter()
        .find(|d| matches!(d, Diagnostic::Unconstrained { .. }))
    {
        let names: Vec<&str> = params.iter().map(|p| p.name()).collect();
        return Err(Error::DegenerateFit(format!(
            "background data do not constrain {}; is there a resonance in the window?",
            names.join(", ")
        )));
    }
    result.diagnostics.push(Diagnostic::Provisional(Param::NuQHz));
    Ok(result)
}

/// Extracts the bin at ν₁ from each spectrum as a single-bin spectrum.
pub fn timeseries_at(spectra: &[Spectrum], nu1_hz: f64) -> Result<Vec<Spectrum>> {
    spectra
        .iter()
        .map(|s| {
            let hz = s.window.offsets_hz();
            let k = hz
                .iter()
                .position(|f| (f - nu1_hz).abs() <= 1e-9 * nu1_hz.abs().max(1.0))
                .ok_or_else(|| {
                    Error::GridMismatch(format!(
                        "ν₁ = {nu1_hz} Hz is not a bin of the spectrum at t0 = {} s",
                        s.window.t0
                    ))
                })?;
            let win = SpectrumWindow::new(s.window.t0, s.window.td, vec![s.window.offsets[k]])?;
            let mut out = Spectrum::new(win, vec![s.values[k]])?;
            if let Some(sig) = &s.sigma {
                out = out.with_sigma(vec![sig[k]])?;
            }
            Ok(out)
        })
        .collect()
}

fn inherit(from: &FitResult, params: &[Param], fixed: &mut BTreeMap<Param, f64>) {
    for p in params {
        fixed.insert(*p, from.value(*p));
    }
}

/// Step 2: the PSD at ν₁ as a function of t₀, with moments propagated freely
/// from drive-off. Background parameters are fixed, ν_ion = ν₁ and γ_ion = 0
/// unless `start.gamma_ion_hz` frees it; |g|, |⟨a(0)⟩|, |⟨b(0)⟩| and δ(0) are
/// fitted. With γ_ion pinned, |g| is an upper limit, and the correlation that
/// freeing γ_ion would produce is reported. A freed γ_ion starts from the
/// optimum with γ_ion pinned.
pub fn fit_coupling_timeseries(
    series: &[Spectrum],
    background: &FitResult,
    start: &CouplingStart,
    options: &FitOptions,
) -> Result<FitResult> {
    let mut fixed = BTreeMap::new();
    inherit(
        background,
        &[Param::NQ, Param::GammaQHz, Param::SNoise, Param::NuQHz],
        &mut fixed,
    );
    if !options.tie_n_ion {
        fixed.insert(Param::NIon, background.value(Param::NQ));
    }
    fixed.insert(Param::NuIonHz, start.nu_ion_hz);
    let mut free = BTreeMap::new();
    free.insert(Param::GHz, FreeParam::new(Param::GHz, start.g_hz));
    free.insert(Param::AAbs, FreeParam::new(Param::AAbs, start.a_abs));
    free.insert(Param::BAbs, FreeParam::new(Param::BAbs, start.b_abs));
    free.insert(Param::DeltaRad, FreeParam::new(Param::DeltaRad, start.delta_rad));
    let mut options = options.clone();
    match start.gamma_ion_hz {
        Some(g) => {
            // Freed from the pinned optimum, over three decades of γ_ion.
            let pinned = fit_coupling_timeseries(
                series,
                background,
                &CouplingStart {
                    gamma_ion_hz: None,
                    ..*start
                },
                &options,
            )?;
            for p in [Param::GHz, Param::AAbs, Param::BAbs, Param::DeltaRad] {
                free.insert(p, FreeParam::new(p, pinned.value(p)));
            }
            let mut best: Option<Result<FitResult>> = None;
            for scale in [1.0, 0.1, 0.01] {
                let mut free = free.clone();
                free.insert(Param::GammaIonHz, FreeParam::new(Param::GammaIonHz, g * scale));
                let problem = FitProblem::new(
                    FitModel::CouplingTimeSeries,
                    series.to_vec(),
                    background.base,
                    fixed.clone(),
                    free,
                    options.clone(),
                )?;
                let r = problem.solve();
                best = match (best, r) {
                    (None, r) => Some(r),
                    (Some(Ok(b)), Ok(r)) => Some(Ok(if r.chi2 < b.chi2 { r } else { b })),
                    (Some(Err(_)), Ok(r)) => Some(Ok(r)),
                    (Some(b), Err(_)) => Some(b),
                };
            }
            return best.expect("three starts");
        }
        None => {
            fixed.insert(Param::GammaIonHz, 0.0);
            if !options.probe.contains(&Param::GammaIonHz) {
                options.probe.push(Param::GammaIonHz);
            }
        }
    }
    let problem = FitProblem::new(
        FitModel::CouplingTimeSeries,
        series.to_vec(),
        background.base,
        fixed,
        free,
        options,
    )?;
    let mut result = problem.solve()?;
    if start.gamma_ion_hz.is_none() {
        result.diagnostics.push(Diagnostic::UpperLimit(Param::GHz));
    }
    Ok(result)
}

/// Moments of a previous fit carried to `t0`: propagated from drive-off when
/// the previous fit referenced drive-off, taken as they are otherwise.
fn moments_at(previous: &FitResult, t0: f64) -> Result<MomentVector> {
    let m = previous.moments();
    match previous.model {
        FitModel::CouplingTimeSeries | FitModel::Joint => {
            let e = build_evolution_matrix(&previous.model_params());
            propagate_moments(&e, &m, &DriveVector::ZERO, t0)
        }
        _ => Ok(m),
    }
}

fn positive_start(v: f64, scale: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        (1e-6 * scale).max(1e-3)
    }
}

/// Step 3: one spectrum with γ_q, γ_ion, n_q = n_ion, |g| and S_noise fixed
/// from `previous`; δ, ν_ion, ν_q, |⟨a(t₀)⟩| and |⟨b(t₀)⟩| are fitted, starting
/// from the previous fit's moments carried to t₀.
pub fn fit_full_spectrum(spectrum: &Spectrum, previous: &FitResult, options: &FitOptions) -> Result<FitResult> {
    let mut fixed = BTreeMap::new();
    inherit(
        previous,
        &[Param::GammaQHz, Param::GammaIonHz, Param::NQ, Param::GHz, Param::SNoise],
        &mut fixed,
    );
    if !options.tie_n_ion {
        inherit(previous, &[Param::NIon], &mut fixed);
    }
    let m = moments_at(previous, spectrum.window.t0)?;
    let scale = m.abs_a().max(m.abs_b());
    let mut free = BTreeMap::new();
    free.insert(Param::DeltaRad, FreeParam::new(Param::DeltaRad, m.relative_phase()));
    free.insert(
        Param::NuIonHz,
        FreeParam::new(Param::NuIonHz, previous.value(Param::NuIonHz)),
    );
    free.insert(Param::NuQHz, FreeParam::new(Param::NuQHz, previous.value(Param::NuQHz)));
    free.insert(
        Param::AAbs,
        FreeParam::new(Param::AAbs, positive_start(m.abs_a(), scale)),
    );
    free.insert(
        Param::BAbs,
        FreeParam::new(Param::BAbs, positive_start(m.abs_b(), scale)),
    );
    let problem = FitProblem::new(
        FitModel::Full,
        vec![spectrum.clone()],
        previous.base,
        fixed,
        free,
        options.clone(),
    )?;
    problem.solve()
}

/// All spectra at once with a shared |g|: moments at drive-off, ν_ion and ν_q
/// free, background parameters and γ_ion fixed from `previous`.
pub fn fit_joint(spectra: &[Spectrum], previous: &FitResult, options: &FitOptions) -> Result<FitResult> {
    let mut fixed = BTreeMap::new();
    inherit(
        previous,
        &[Param::GammaQHz, Param::GammaIonHz, Param::NQ, Param::SNoise],
        &mut fixed,
    );
    if !options.tie_n_ion {
        inherit(previous, &[Param::NIon], &mut fixed);
    }
    let m = moments_at(previous, 0.0)?;
    let scale = m.abs_a().max(m.abs_b());
    let mut free = BTreeMap::new();
    free.insert(Param::GHz, FreeParam::new(Param::GHz, previous.value(Param::GHz)));
    free.insert(Param::DeltaRad, FreeParam::new(Param::DeltaRad, m.relative_phase()));
    free.insert(
        Param::NuIonHz,
        FreeParam::new(Param::NuIonHz, previous.value(Param::NuIonHz)),
    );
    free.insert(Param::NuQHz, FreeParam::new(Param::NuQHz, previous.value(Param::NuQHz)));
    free.insert(
        Param::AAbs,
        FreeParam::new(Param::AAbs, positive_start(m.abs_a(), scale)),
    );
    free.insert(
        Param::BAbs,
        FreeParam::new(Param::BAbs, positive_start(m.abs_b(), scale)),
    );
    let problem = FitProblem::new(
        FitModel::Joint,
        spectra.to_vec(),
        previous.base,
        fixed,
        free,
        options.clone(),
    )?;
    problem.solve()
}

/// Shortened procedure for a cloud of N' ions: |g| is the reference value
/// scaled by √(N'/N) and held fixed, γ_q is fitted together with the five
/// spectral parameters; n_q and S_noise come from `background`.
pub fn fit_shortened(
    spectrum: &Spectrum,
    background: &FitResult,
    start: &CouplingStart,
    n_ratio: f64,
    options: &FitOptions,
) -> Result<FitResult> {
    if !(n_ratio > 0.0 && n_ratio.is_finite()) {
        return Err(Error::FitSetup(format!(
            "ion-number ratio N'/N must be > 0, got {n_ratio}"
        )));
    }
    let mut fixed = BTreeMap::new();
    inherit(background, &[Param::NQ, Param::SNoise], &mut fixed);
    if !options.tie_n_ion {
        fixed.insert(Param::NIon, background.value(Param::NQ));
    }
    fixed.insert(Param::GHz, start.g_hz * n_ratio.sqrt());
    fixed.insert(Param::GammaIonHz, start.gamma_ion_hz.unwrap_or(0.0));
    let mut free = BTreeMap::new();
    free.insert(
        Param::GammaQHz,
        FreeParam::new(Param::GammaQHz, background.value(Param::GammaQHz)),
    );
    free.insert(Param::DeltaRad, FreeParam::new(Param::DeltaRad, start.delta_rad));
    free.insert(Param::NuIonHz, FreeParam::new(Param::NuIonHz, start.nu_ion_hz));
    free.insert(
        Param::NuQHz,
        FreeParam::new(Param::NuQHz, background.value(Param::NuQHz)),
    );
    free.insert(Param::AAbs, FreeParam::new(Param::AAbs, start.a_abs));
    free.insert(Param::BAbs, FreeParam::new(Param::BAbs, start.b_abs));
    let problem = FitProblem::new(
        FitModel::Shortened,
        vec![spectrum.clone()],
        background.base,
        fixed,
        free,
        options.clone(),
    )?;
    problem.solve()
}
