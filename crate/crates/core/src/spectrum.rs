//! Closed-form power spectral density of the quartz voltage.
//!
//! Frequencies are offsets Δ = ω − ω_RF in rad/s, the same axis the detunings
//! live on. Values are two-sided densities at positive frequency, in V² per
//! hertz of bin width, i.e. what an averaged periodogram with 1/√t_d
//! normalization estimates.

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::linalg::{wrap_phase, C64, I};
use crate::model::{
    build_evolution_matrix, propagate_moments, DriveVector, EvolutionMatrix, ModelParams, MomentVector,
};
use crate::thermal::ThermalCorrelators;

/// Acquisition window [t₀, t₀ + t_d] and the offset grid the spectrum is sampled on.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumWindow {
    pub t0: f64,
    pub td: f64,
    /// Δ = ω − ω_RF (rad/s), strictly increasing.
    pub offsets: Vec<f64>,
}

impl SpectrumWindow {
    pub fn new(t0: f64, td: f64, offsets: Vec<f64>) -> Result<Self> {
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(Error::InvalidWindow(format!("t0 must be ≥ 0, got {t0}")));
        }
        if !(td > 0.0 && td.is_finite()) {
            return Err(Error::InvalidWindow(format!("td must be > 0, got {td}")));
        }
        if offsets.is_empty() {
            return Err(Error::InvalidWindow("empty frequency grid".into()));
        }
        if offsets.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidWindow("non-finite grid point".into()));
        }
        if let Some(i) = offsets.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidWindow(format!(
                "grid not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { t0, td, offsets })
    }

    /// Window with a grid given in hertz offsets from ν_RF.
    pub fn from_hz(t0: f64, td: f64, offsets_hz: &[f64]) -> Result<Self> {
        Self::new(
            t0,
            td,
            offsets_hz.iter().map(|&f| crate::constants::hz_to_rad(f)).collect(),
        )
    }

    /// Uniform grid of `n` points from `start_hz` with spacing `step_hz`.
    pub fn uniform_hz(t0: f64, td: f64, start_hz: f64, step_hz: f64, n: usize) -> Result<Self> {
        let hz: Vec<f64> = (0..n).map(|k| start_hz + k as f64 * step_hz).collect();
        Self::from_hz(t0, td, &hz)
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.td
    }

    pub fn offsets_hz(&self) -> Vec<f64> {
        self.offsets.iter().map(|&w| crate::constants::rad_to_hz(w)).collect()
    }

    pub fn with_t0(&self, t0: f64) -> Result<Self> {
        Self::new(t0, self.td, self.offsets.clone())
    }
}

/// Per-point breakdown of a total spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub coherent: Vec<f64>,
    pub thermal: Vec<f64>,
    pub noise: f64,
}

/// A sampled PSD with optional uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub window: SpectrumWindow,
    pub values: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    pub components: Option<Components>,
}

impl Spectrum {
    pub fn new(window: SpectrumWindow, values: Vec<f64>) -> Result<Self> {
        if values.len() != window.offsets.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} grid points",
                values.len(),
                window.offsets.len()
            )));
        }
        Ok(Self {
            window,
            values,
            sigma: None,
            components: None,
        })
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.values.len() {
            return Err(Error::GridMismatch(format!(
                "{} uncertainties for {} values",
                sigma.len(),
                self.values.len()
            )));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// How the thermal component treats the finite acquisition window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThermalMode {
    /// t_d → ∞ limit, the default fit function.
    #[default]
    LongWindow,
    /// Keeps the transient term of the windowed Green function.
    FiniteWindow,
}

/// P(Δ) = i(Δ − ω̃_ion) + γ_ion/2
fn ion_factor(p: &ModelParams, delta: f64) -> C64 {
    C64::new(0.5 * p.gamma_ion, delta - p.detuning_ion)
}

/// Q(Δ) = i(Δ − ω̃_q) + γ_q/2
fn quartz_factor(p: &ModelParams, delta: f64) -> C64 {
    C64::new(0.5 * p.gamma_q, delta - p.detuning_q)
}

/// F*(Δ) = 1 / ([i(Δ − ω̃_ion) + γ_ion/2][i(Δ − ω̃_q) + γ_q/2] + |g|²).
pub fn envelope(p: &ModelParams, delta: f64) -> C64 {
    1.0 / (ion_factor(p, delta) * quartz_factor(p, delta) + p.g.norm_sqr())
}

/// Envelope at an absolute (lab-axis) angular frequency.
pub fn envelope_absolute(p: &ModelParams, omega: f64) -> C64 {
    let ion = C64::new(0.5 * p.gamma_ion, omega - p.omega_ion());
    let quartz = C64::new(0.5 * p.gamma_q, omega - p.omega_q());
    1.0 / (ion * quartz + p.g.norm_sqr())
}

/// Ã₄(Δ): windowed Fourier amplitude of ⟨b†⟩ over [t₀, t₁].
pub fn coherent_amplitude(p: &ModelParams, a_t0: &MomentVector, a_t1: &MomentVector, td: f64, delta: f64) -> C64 {
    let phase = C64::from_polar(1.0, -delta * td);
    let f = envelope(p, delta);
    let ion = I * p.g.conj() * (phase * a_t1.a_dag - a_t0.a_dag);
    let quartz = ion_factor(p, delta) * (phase * a_t1.b_dag - a_t0.b_dag);
    -f * (ion + quartz)
}

/// S^coh(Δ) = V₀²/(2t_d)·|Ã₄(Δ)|², with ⟨A(t₁)⟩ from free decay of ⟨A(t₀)⟩.
pub fn coherent_psd(p: &ModelParams, a_t0: &MomentVector, win: &SpectrumWindow) -> Result<Vec<f64>> {
    let e = build_evolution_matrix(p);
    coherent_psd_with(&e, p, a_t0, win)
}

pub(crate) fn coherent_psd_with(
    e: &EvolutionMatrix,
    p: &ModelParams,
    a_t0: &MomentVector,
    win: &SpectrumWindow,
) -> Result<Vec<f64>> {
    let a_t1 = propagate_moments(e, a_t0, &DriveVector::ZERO, win.td)?;
    let scale = p.v0 * p.v0 / (2.0 * win.td);
    Ok(win
        .offsets
        .iter()
        .map(|&d| scale * coherent_amplitude(p, a_t0, &a_t1, win.td, d).norm_sqr())
        .collect())
}

/// ERP = π/2 − arg g − δ, wrapped to (−π, π].
pub fn effective_relative_phase(g: C64, delta: f64) -> Result<f64> {
    if g.norm() == 0.0 {
        return Err(Error::Domain("effective relative phase is undefined for g = 0".into()));
    }
    Ok(wrap_phase(std::f64::consts::FRAC_PI_2 - g.arg() - delta))
}

/// Relative phase δ that produces the requested ERP for a given g.
pub fn relative_phase_for_erp(g: C64, erp: f64) -> f64 {
    wrap_phase(std::f64::consts::FRAC_PI_2 - g.arg() - erp)
}

/// S^th(Δ) in the long-window limit: V₀²·Re[F*(i g*⟨a†b⟩ + P⟨b†b⟩)].
pub fn thermal_psd(p: &ModelParams, th: &ThermalCorrelators, offsets: &[f64]) -> Vec<f64> {
    let ab = th.a_dag_b();
    let bb = th.b_dag_b();
    let v2 = p.v0 * p.v0;
    offsets
        .iter()
        .map(|&d| v2 * (envelope(p, d) * (I * p.g.conj() * ab + ion_factor(p, d) * bb)).re)
        .collect()
}

/// S^th(Δ) over a window of length t_d, keeping the transient term:
/// V₀²·Re[(K⁻²(e^{K t_d} − 1)/t_d − K⁻¹)·t†₋] at the (b†, b) element, with
/// K = −iΔ − m*.
pub fn thermal_psd_finite(p: &ModelParams, th: &ThermalCorrelators, offsets: &[f64], td: f64) -> Vec<f64> {
    let e = build_evolution_matrix(p);
    thermal_psd_finite_with(&e, p, th, offsets, td)
}

pub(crate) fn thermal_psd_finite_with(
    e: &EvolutionMatrix,
    p: &ModelParams,
    th: &ThermalCorrelators,
    offsets: &[f64],
    td: f64,
) -> Vec<f64> {
    let mc = e.block().map(|z| z.conj());
    // e^{−m* t_d} is the conjugate of the cached block propagator
    let decay = e.block_exp(td).0.map(|z| z.conj());
    let tdm = th.t_dag_minus();
    let v2 = p.v0 * p.v0;
    offsets
        .iter()
        .map(|&d| {
            let k = -(mc + Matrix2::identity() * C64::new(0.0, d));
            let k_inv = invert2(&k);
            let ek = decay * C64::from_polar(1.0, -d * td);
            let q = k_inv * k_inv * (ek - Matrix2::identity()) / C64::from(td) - k_inv;
            let s = q * tdm;
            v2 * s[(1, 1)].re
        })
        .collect()
}

fn invert2(k: &Matrix2<C64>) -> Matrix2<C64> {
    let det = k[(0, 0)] * k[(1, 1)] - k[(0, 1)] * k[(1, 0)];
    Matrix2::new(k[(1, 1)], -k[(0, 1)], -k[(1, 0)], k[(0, 0)]) / det
}

/// S(Δ) = S^coh + S^th + S_noise with the breakdown retained.
pub fn total_psd(
    p: &ModelParams,
    a_t0: &MomentVector,
    th: &ThermalCorrelators,
    s_noise: f64,
    win: &SpectrumWindow,
    mode: ThermalMode,
) -> Result<Spectrum> {
    p.validate()?;
    if !(s_noise >= 0.0 && s_noise.is_finite()) {
        return Err(Error::param("s_noise", format!("must be ≥ 0, got {s_noise}")));
    }
    let e = build_evolution_matrix(p);
    let coherent = coherent_psd_with(&e, p, a_t0, win)?;
    let thermal = match mode {
        ThermalMode::LongWindow => thermal_psd(p, th, &win.offsets),
        ThermalMode::FiniteWindow => thermal_psd_finite_with(&e, p, th, &win.offsets, win.td),
    };
    let values = coherent.iter().zip(&thermal).map(|(c, t)| c + t + s_noise).collect();
    Ok(Spectrum {
        window: win.clone(),
        values,
        sigma: None,
        components: Some(Components {
            coherent,
            thermal,
            noise: s_noise,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::thermal_closed_form;
    use std::f64::consts::PI;

    fn params() -> ModelParams {
        ModelParams {
            omega_rf: 2.0 * PI * 2.69e6,
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
    fn envelope_at_common_resonance() {
        let mut p = params();
        p.g = C64::from(0.0);
        p.gamma_ion = 3.0;
        p.detuning_ion = p.detuning_q;
        let f = envelope(&p, p.detuning_q);
        assert!((f - C64::from(4.0 / (p.gamma_ion * p.gamma_q))).norm() < 1e-15 * f.norm());
    }

    #[test]
    fn envelope_symmetry_for_equal_damping() {
        let mut p = params();
        p.gamma_ion = p.gamma_q;
        let mid = 0.5 * (p.detuning_ion + p.detuning_q);
        for k in 1..200 {
            let x = k as f64 * 0.7;
            let a = envelope(&p, mid + x).norm();
            let b = envelope(&p, mid - x).norm();
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn envelope_large_detuning_asymptote() {
        let p = params();
        let d = 2.0 * PI * 5e4;
        let f = envelope(&p, d).norm();
        let want = 1.0 / ((d - p.detuning_ion).abs() * (d - p.detuning_q).abs());
        assert!((f - want).abs() < 1e-5 * want);
    }

    #[test]
    fn negative_frequency_envelope_is_negligible() {
        let p = params();
        let w = p.omega_q();
        let ratio = envelope_absolute(&p, -w).norm() / envelope_absolute(&p, w).norm();
        assert!(ratio < 1e-6, "{ratio:e}");
    }

    #[test]
    fn zero_moments_give_zero_coherent_spectrum() {
        let win = SpectrumWindow::uniform_hz(0.0, 1.0, -50.0, 1.0, 101).unwrap();
        let s = coherent_psd(&params(), &MomentVector::ZERO, &win).unwrap();
        assert!(s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn decoupled_thermal_lorentzian() {
        let mut p = params();
        p.g = C64::from(0.0);
        p.gamma_ion = 1.0;
        let th = thermal_closed_form(&p).unwrap();
        let win = SpectrumWindow::uniform_hz(0.0, 1.0, -100.0, 0.5, 401).unwrap();
        let s = thermal_psd(&p, &th, &win.offsets);
        for (d, v) in win.offsets.iter().zip(&s) {
            let x = d - p.detuning_q;
            let want = p.v0 * p.v0 * p.n_q * (0.5 * p.gamma_q) / (x * x + 0.25 * p.gamma_q * p.gamma_q);
            assert!((v - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn thermal_dip_at_the_ion_frequency() {
        let p = params();
        let th = thermal_closed_form(&p).unwrap();
        let offsets: Vec<f64> = (0..81).map(|k| p.detuning_ion + (k as f64 - 40.0) * 0.01).collect();
        let s = thermal_psd(&p, &th, &offsets);
        let imin = s
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!((offsets[imin] - p.detuning_ion).abs() < 0.02);
        assert!(s[imin] < 1e-6 * s[0]);
    }

    #[test]
    fn finite_window_correction_is_small_at_the_peak() {
        let mut p = params();
        p.g = C64::from(0.0);
        p.gamma_ion = 1.0;
        let th = thermal_closed_form(&p).unwrap();
        let peak = [p.detuning_q];
        let long = thermal_psd(&p, &th, &peak)[0];
        let finite = thermal_psd_finite(&p, &th, &peak, 1.0)[0];
        let rel = (long - finite).abs() / long;
        assert!(rel < 0.01 && rel > 1e-4, "{rel}");
        let very_long = thermal_psd_finite(&p, &th, &peak, 1e4)[0];
        assert!((very_long - long).abs() < 1e-4 * long);
    }

    #[test]
    fn erp_examples() {
        let g = C64::new(0.0, 2.0);
        let erp = effective_relative_phase(g, -150f64.to_radians()).unwrap();
        assert!((erp - 150f64.to_radians()).abs() < 1e-14);
        let g = C64::from_polar(1.0, 0.3);
        let erp = effective_relative_phase(g, PI / 2.0 - 0.3).unwrap();
        assert!(erp.abs() < 1e-15);
        assert!(effective_relative_phase(C64::from(0.0), 0.0).is_err());
        let delta = relative_phase_for_erp(g, 1.0);
        assert!((effective_relative_phase(g, delta).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn erp_controls_on_resonance_interference() {
        let mut p = params();
        p.detuning_ion = p.detuning_q;
        let win = SpectrumWindow::new(0.0, 1.0, vec![p.detuning_q]).unwrap();
        let abs_a = 3.0e3;
        let abs_b = 1.0e4;
        let eval = |erp: f64| {
            let delta = relative_phase_for_erp(p.g, erp);
            let v = MomentVector::from_polar(abs_a, delta, abs_b, 0.0);
            coherent_psd(&p, &v, &win).unwrap()[0]
        };
        let only_a = coherent_psd(&p, &MomentVector::from_polar(abs_a, 0.0, 0.0, 0.0), &win).unwrap()[0];
        let only_b = coherent_psd(&p, &MomentVector::from_polar(0.0, 0.0, abs_b, 0.0), &win).unwrap()[0];
        let incoherent = only_a + only_b;
        assert!(eval(PI) < incoherent, "{} vs {incoherent}", eval(PI));
        assert!(eval(0.0) > incoherent, "{} vs {incoherent}", eval(0.0));
    }

    #[test]
    fn total_is_component_sum() {
        let p = params();
        let th = thermal_closed_form(&p).unwrap();
        let win = SpectrumWindow::uniform_hz(0.01, 1.0, -60.0, 1.0, 121).unwrap();
        let a0 = MomentVector::from_polar(5e3, 0.4, 1e5, 0.0);
        let s = total_psd(&p, &a0, &th, 3.1e-18, &win, ThermalMode::LongWindow).unwrap();
        let c = s.components.as_ref().unwrap();
        for i in 0..s.len() {
            assert_eq!(s.values[i], c.coherent[i] + c.thermal[i] + c.noise);
            assert!(c.coherent[i] >= 0.0);
        }
    }

    #[test]
    fn flat_when_nothing_but_noise() {
        let mut p = params();
        p.g = C64::from(0.0);
        p.n_q = 0.0;
        p.n_ion = 0.0;
        let th = thermal_closed_form(&ModelParams { gamma_ion: 1.0, ..p }).unwrap();
        let win = SpectrumWindow::uniform_hz(0.0, 1.0, -10.0, 1.0, 21).unwrap();
        let s = total_psd(&p, &MomentVector::ZERO, &th, 2.0e-18, &win, ThermalMode::LongWindow).unwrap();
        assert!(s.values.iter().all(|&v| v == 2.0e-18));
    }

    #[test]
    fn window_validation() {
        assert!(SpectrumWindow::new(-1.0, 1.0, vec![0.0]).is_err());
        assert!(SpectrumWindow::new(0.0, 0.0, vec![0.0]).is_err());
        assert!(SpectrumWindow::new(0.0, 1.0, vec![1.0, 1.0]).is_err());
        assert!(SpectrumWindow::new(0.0, 1.0, vec![]).is_err());
        assert!(SpectrumWindow::new(0.0, 1.0, vec![3.0]).is_ok());
    }
}
