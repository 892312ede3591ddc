//! Monte-Carlo voltage traces and their averaged periodogram.
//!
//! A trace is the deterministic coherent voltage plus stationary Gaussian
//! noise with the thermal-plus-floor spectrum. The rotating-frame signal is
//! mixed down to a carrier ν_c so that the real trace keeps the positive and
//! negative frequency halves apart; offset Δ from ν_RF appears at ν_c + Δ/2π.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::constants::{hz_to_rad, TWO_PI};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::model::{build_evolution_matrix, ModelParams, MomentVector};
use crate::spectrum::{thermal_psd_finite, Spectrum, SpectrumWindow};
use crate::thermal::ThermalCorrelators;

/// Sample rate and heterodyne carrier of a synthetic acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub sample_rate: f64,
    pub carrier_hz: f64,
}

impl SamplingPlan {
    /// Carrier near a quarter of the sample rate, shifted so that every grid
    /// offset lands on a DFT bin of a window of length `td`.
    pub fn aligned(sample_rate: f64, win: &SpectrumWindow) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::param("sample_rate", "must be > 0"));
        }
        let first_hz = win.offsets[0] / TWO_PI;
        let lattice = (first_hz * win.td).rem_euclid(1.0);
        let carrier_hz = ((0.25 * sample_rate * win.td).round() - lattice) / win.td;
        let plan = Self {
            sample_rate,
            carrier_hz,
        };
        plan.bins(win)?;
        Ok(plan)
    }

    /// Number of samples in a window.
    pub fn samples(&self, td: f64) -> Result<usize> {
        let n = self.sample_rate * td;
        if (n - n.round()).abs() > 1e-6 || n < 2.0 {
            return Err(Error::param(
                "sample_rate",
                format!("f_s·t_d = {n} must be an integer ≥ 2"),
            ));
        }
        Ok(n.round() as usize)
    }

    /// DFT bin index of every grid offset.
    pub fn bins(&self, win: &SpectrumWindow) -> Result<Vec<usize>> {
        let n = self.samples(win.td)?;
        let top = win.offsets.iter().map(|w| (w / TWO_PI).abs()).fold(0.0, f64::max);
        let lowest = self.carrier_hz + win.offsets[0] / TWO_PI;
        if self.sample_rate <= 2.0 * (self.carrier_hz + top) || lowest <= 0.0 {
            return Err(Error::Aliasing(format!(
                "f_s = {} Hz must exceed 2(ν_c + max|Δ|) = {} Hz with all lines above 0 Hz",
                self.sample_rate,
                2.0 * (self.carrier_hz + top)
            )));
        }
        win.offsets
            .iter()
            .map(|&w| {
                let k = (self.carrier_hz + w / TWO_PI) * win.td;
                if (k - k.round()).abs() > 1e-6 {
                    return Err(Error::GridMismatch(format!(
                        "offset {} Hz falls between DFT bins (bin index {k})",
                        w / TWO_PI
                    )));
                }
                let k = k.round() as usize;
                if k == 0 || k >= n / 2 {
                    return Err(Error::Aliasing(format!("bin {k} outside (0, N/2)")));
                }
                Ok(k)
            })
            .collect()
    }
}

/// Sampled voltage traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEnsemble {
    pub sample_rate: f64,
    pub duration: f64,
    pub carrier_hz: f64,
    /// Start of the window after drive-off (s); sample n sits at t₀ + (n + ½)/f_s.
    pub t0: f64,
    pub traces: Vec<Vec<f64>>,
    pub rng_seed: u64,
}

/// Output of [`synthesize_traces`].
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub ensemble: TraceEnsemble,
    /// Mean periodogram on the window grid; σ is the standard error of the mean.
    pub periodogram: Spectrum,
    /// |Σ_k P_k / t_d − ⟨x²⟩| / ⟨x²⟩ for each trace.
    pub parseval: Vec<f64>,
}

/// Coherent voltage V₀√2·Re[⟨b(t)⟩e^{−iω_c(t − t₀)}] at the sample midpoints.
pub fn coherent_trace(p: &ModelParams, a_t0: &MomentVector, plan: &SamplingPlan, td: f64) -> Result<Vec<f64>> {
    let n = plan.samples(td)?;
    let dt = 1.0 / plan.sample_rate;
    let e = build_evolution_matrix(p);
    let step = e.block_exp(dt).0;
    let mut state = e.block_exp(0.5 * dt).0 * nalgebra::Vector2::new(a_t0.a, a_t0.b);
    let wc = hz_to_rad(plan.carrier_hz);
    let scale = p.v0 * std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = (k as f64 + 0.5) * dt;
        out.push(scale * (state[1] * C64::from_polar(1.0, -wc * t)).re);
        state = step * state;
    }
    Ok(out)
}

/// Noise target S^th + S_noise on every non-negative DFT bin.
fn noise_target(
    p: &ModelParams,
    th: &ThermalCorrelators,
    s_noise: f64,
    plan: &SamplingPlan,
    n: usize,
    td: f64,
) -> Vec<f64> {
    let offsets: Vec<f64> = (0..=n / 2)
        .map(|k| hz_to_rad(k as f64 / td - plan.carrier_hz))
        .collect();
    thermal_psd_finite(p, th, &offsets, td)
        .into_iter()
        .map(|s| (s + s_noise).max(0.0))
        .collect()
}

/// Draws `n_traces` traces and averages their periodograms
/// P_k = (Δt/N)|Σ_n x_n e^{−2πikn/N}|² on the window grid.
///
/// The mirror line of the real trace leaks into the window bins through the
/// window edges with relative cross term ≈ |γ_q/2 + iΔ|/f_s, so f_s sets how
/// closely the periodogram follows the closed forms.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_traces(
    p: &ModelParams,
    a_t0: &MomentVector,
    th: &ThermalCorrelators,
    s_noise: f64,
    win: &SpectrumWindow,
    plan: &SamplingPlan,
    n_traces: usize,
    seed: u64,
) -> Result<Synthesis> {
    synthesize(p, a_t0, th, s_noise, win, plan, n_traces, seed, true)
}

/// As [`synthesize_traces`] but drops the traces once their periodograms are
/// taken; `ensemble.traces` is empty.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_periodogram(
    p: &ModelParams,
    a_t0: &MomentVector,
    th: &ThermalCorrelators,
    s_noise: f64,
    win: &SpectrumWindow,
    plan: &SamplingPlan,
    n_traces: usize,
    seed: u64,
) -> Result<Synthesis> {
    synthesize(p, a_t0, th, s_noise, win, plan, n_traces, seed, false)
}

#[allow(clippy::too_many_arguments)]
fn synthesize(
    p: &ModelParams,
    a_t0: &MomentVector,
    th: &ThermalCorrelators,
    s_noise: f64,
    win: &SpectrumWindow,
    plan: &SamplingPlan,
    n_traces: usize,
    seed: u64,
    keep: bool,
) -> Result<Synthesis> {
    p.validate()?;
    if n_traces == 0 {
        return Err(Error::param("n_traces", "at least one trace is required"));
    }
    let bins = plan.bins(win)?;
    let n = plan.samples(win.td)?;
    let dt = 1.0 / plan.sample_rate;
    let coherent = coherent_trace(p, a_t0, plan, win.td)?;
    let target = noise_target(p, th, s_noise, plan, n, win.td);
    // E|X_k|² = N·S_k/Δt
    let amp: Vec<f64> = target.iter().map(|s| (n as f64 * s / dt).sqrt()).collect();

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let per_trace: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n_traces)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut spec = vec![C64::default(); n];
            for k in 0..=n / 2 {
                let z = if k == 0 || 2 * k == n {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    C64::from(amp[k] * g)
                } else {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    C64::new(re, im) * (amp[k] * std::f64::consts::FRAC_1_SQRT_2)
                };
                spec[k] = z;
                if k != 0 && 2 * k != n {
                    spec[n - k] = z.conj();
                }
            }
            inverse.process(&mut spec);
            let trace: Vec<f64> = spec.iter().zip(&coherent).map(|(z, c)| z.re / n as f64 + c).collect();

            let mut buf: Vec<C64> = trace.iter().map(|&x| C64::from(x)).collect();
            forward.process(&mut buf);
            let pgram: Vec<f64> = buf.iter().map(|z| dt / n as f64 * z.norm_sqr()).collect();
            let power: f64 = pgram.iter().sum::<f64>() / win.td;
            let mean_square = trace.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let parseval = (power - mean_square).abs() / mean_square;
            let selected = bins.iter().map(|&k| pgram[k]).collect();
            (if keep { trace } else { Vec::new() }, selected, parseval)
        })
        .collect();

    let m = bins.len();
    let mut mean = vec![0.0; m];
    for (_, sel, _) in &per_trace {
        for (acc, v) in mean.iter_mut().zip(sel) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n_traces as f64);
    let sigma: Vec<f64> = if n_traces > 1 {
        let mut var = vec![0.0; m];
        for (_, sel, _) in &per_trace {
            for ((acc, v), mu) in var.iter_mut().zip(sel).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        var.iter()
            .map(|v| (v / (n_traces as f64 - 1.0)).sqrt() / (n_traces as f64).sqrt())
            .collect()
    } else {
        // a single periodogram bin is exponentially distributed: σ equals the mean
        mean.clone()
    };

    let mut traces = Vec::with_capacity(n_traces);
    let mut parseval = Vec::with_capacity(n_traces);
    for (tr, _, pv) in per_trace {
        if keep {
            traces.push(tr);
        }
        parseval.push(pv);
    }
    Ok(Synthesis {
        ensemble: TraceEnsemble {
            sample_rate: plan.sample_rate,
            duration: win.td,
            carrier_hz: plan.carrier_hz,
            t0: win.t0,
            traces,
            rng_seed: seed,
        },
        periodogram: Spectrum::new(win.clone(), mean)?.with_sigma(sigma)?,
        parseval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::coherent_psd;
    use crate::thermal::thermal_closed_form;
    use std::f64::consts::PI;

    fn params() -> ModelParams {
        ModelParams {
            detuning_ion: 2.0 * PI * 1.35,
            detuning_q: 2.0 * PI * 1.99,
            gamma_ion: 0.0,
            gamma_q: 2.0 * PI * 39.81,
            g: C64::new(0.0, 2.0 * PI * 1.449),
            n_ion: 2.3e6,
            n_q: 2.3e6,
            v0: 2.6e-11,
            ..ModelParams::default()
        }
    }

    #[test]
    fn aligned_plan_puts_offsets_on_bins() {
        let win = SpectrumWindow::uniform_hz(0.0, 1.0, -100.65, 1.0, 201).unwrap();
        let plan = SamplingPlan::aligned(2048.0, &win).unwrap();
        assert!((plan.carrier_hz - 511.65).abs() < 1e-9, "{}", plan.carrier_hz);
        let bins = plan.bins(&win).unwrap();
        assert_eq!(bins[0], 411);
        assert_eq!(bins[200], 611);
    }

    #[test]
    fn aliasing_is_rejected() {
        let win = SpectrumWindow::uniform_hz(0.0, 1.0, -100.0, 1.0, 201).unwrap();
        let plan = SamplingPlan {
            sample_rate: 256.0,
            carrier_hz: 64.0,
        };
        assert!(matches!(plan.bins(&win), Err(Error::Aliasing(_))));
    }

    #[test]
    fn off_bin_grid_is_rejected() {
        let win = SpectrumWindow::uniform_hz(0.0, 1.0, -10.0, 0.5, 41).unwrap();
        let plan = SamplingPlan {
            sample_rate: 2048.0,
            carrier_hz: 512.0,
        };
        assert!(matches!(plan.bins(&win), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn seeded_determinism() {
        let p = params();
        let th = thermal_closed_form(&p).unwrap();
        let win = SpectrumWindow::uniform_hz(0.0, 0.25, -40.0, 4.0, 21).unwrap();
        let plan = SamplingPlan::aligned(1024.0, &win).unwrap();
        let a0 = MomentVector::from_polar(6e3, 0.5, 1.3e5, 0.0);
        let x = synthesize_traces(&p, &a0, &th, 3.1e-18, &win, &plan, 3, 7).unwrap();
        let y = synthesize_traces(&p, &a0, &th, 3.1e-18, &win, &plan, 3, 7).unwrap();
        assert_eq!(x, y);
        let z = synthesize_traces(&p, &a0, &th, 3.1e-18, &win, &plan, 3, 8).unwrap();
        assert_ne!(x.ensemble.traces, z.ensemble.traces);
    }

    #[test]
    fn pure_coherent_periodogram() {
        let mut p = params();
        p.n_q = 0.0;
        p.n_ion = 0.0;
        let th = thermal_closed_form(&p).unwrap();
        let win = SpectrumWindow::uniform_hz(0.01, 1.0, -30.0, 1.0, 61).unwrap();
        let plan = SamplingPlan::aligned(131072.0, &win).unwrap();
        let a0 = MomentVector::from_polar(6e3, 0.5, 1.3e5, 0.0);
        let syn = synthesize_traces(&p, &a0, &th, 0.0, &win, &plan, 1, 1).unwrap();

        let coherent = coherent_trace(&p, &a0, &plan, win.td).unwrap();
        let n = coherent.len();
        let mut buf: Vec<C64> = coherent.iter().map(|&x| C64::from(x)).collect();
        FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
        let dt = 1.0 / plan.sample_rate;
        for (k, v) in plan.bins(&win).unwrap().iter().zip(&syn.periodogram.values) {
            let want = (buf[*k] * dt).norm_sqr() / win.td;
            assert!((v - want).abs() <= 1e-12 * want);
        }
        // and it approximates the continuous-time closed form
        let closed = coherent_psd(&p, &a0, &win).unwrap();
        let peak = closed.iter().cloned().fold(0.0, f64::max);
        for (c, v) in closed.iter().zip(&syn.periodogram.values) {
            assert!((c - v).abs() < 1e-3 * peak, "{c:e} vs {v:e}");
        }
    }

    #[test]
    fn mirror_leakage_shrinks_with_sample_rate() {
        let mut p = params();
        p.g = C64::from(0.0);
        p.detuning_q = 0.0;
        let win = SpectrumWindow::uniform_hz(0.0, 1.0, 30.0, 1.0, 1).unwrap();
        let a0 = MomentVector::from_polar(0.0, 0.0, 1e5, 0.0);
        let closed = coherent_psd(&p, &a0, &win).unwrap()[0];
        let th = thermal_closed_form(&ModelParams {
            n_q: 0.0,
            n_ion: 0.0,
            gamma_ion: 1.0,
            ..p
        })
        .unwrap();
        let kappa = C64::new(0.5 * p.gamma_q, 2.0 * PI * 30.0).norm();
        for fs in [2048.0, 16384.0] {
            let plan = SamplingPlan::aligned(fs, &win).unwrap();
            let syn = synthesize_traces(&p, &a0, &th, 0.0, &win, &plan, 1, 0).unwrap();
            let rel = (syn.periodogram.values[0] / closed - 1.0).abs();
            assert!(rel < 1.2 * kappa / fs && rel > 0.5 * kappa / fs, "{fs}: {rel}");
        }
    }

    #[test]
    fn periodogram_only_drops_traces() {
        let p = params();
        let th = thermal_closed_form(&p).unwrap();
        let win = SpectrumWindow::uniform_hz(0.0, 0.25, -40.0, 4.0, 21).unwrap();
        let plan = SamplingPlan::aligned(1024.0, &win).unwrap();
        let a0 = MomentVector::from_polar(6e3, 0.5, 1.3e5, 0.0);
        let x = synthesize_traces(&p, &a0, &th, 3.1e-18, &win, &plan, 2, 7).unwrap();
        let y = synthesize_periodogram(&p, &a0, &th, 3.1e-18, &win, &plan, 2, 7).unwrap();
        assert!(y.ensemble.traces.is_empty());
        assert_eq!(x.periodogram, y.periodogram);
    }

    #[test]
    fn parseval_per_trace() {
        let p = params();
        let th = thermal_closed_form(&p).unwrap();
        let win = SpectrumWindow::uniform_hz(0.0, 0.5, -40.0, 2.0, 41).unwrap();
        let plan = SamplingPlan::aligned(1024.0, &win).unwrap();
        let syn = synthesize_traces(
            &p,
            &MomentVector::from_polar(1e3, 0.0, 5e4, 0.0),
            &th,
            3.1e-18,
            &win,
            &plan,
            4,
            3,
        )
        .unwrap();
        assert!(syn.parseval.iter().all(|&r| r < 1e-10), "{:?}", syn.parseval);
    }
}
