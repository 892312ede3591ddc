//! A complete synthetic experiment: model parameters, the drive-off state,
//! the acquisition grid and the sampling plan, with helpers that turn it into
//! closed-form spectra and Monte-Carlo periodograms at any window start.

use crate::constants::{hz_to_rad, TWO_PI};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::model::{build_evolution_matrix, propagate_moments, DriveVector, ModelParams, MomentVector};
use crate::oracle::{synthesize_periodogram, SamplingPlan};
use crate::spectrum::{relative_phase_for_erp, total_psd, Spectrum, SpectrumWindow, ThermalMode};
use crate::thermal::{thermal_closed_form, ThermalCorrelators};

/// Uniform frequency grid of offsets from ν_RF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start_hz: f64,
    pub step_hz: f64,
    pub len: usize,
}

impl Grid {
    pub fn offsets_hz(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.start_hz + k as f64 * self.step_hz).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ModelParams,
    /// S_noise (V²_RMS).
    pub s_noise: f64,
    /// ⟨A⟩ when the RF drive is switched off (t = 0).
    pub drive_off: MomentVector,
    /// Window length t_d (s).
    pub td: f64,
    pub grid: Grid,
    /// Sample rate of synthetic traces (Hz).
    pub sample_rate: f64,
}

/// Effective relative phase of the drive-off state in [`Scenario::published`].
pub const PUBLISHED_ERP_DEG: f64 = 150.0;

impl Scenario {
    /// Room-temperature quartz coupled to a Ca⁺ cloud at the scale of the
    /// published measurement: γ_q/2π = 39.81 Hz, |g|/2π = 1.449 Hz,
    /// ν_q − ν_RF = 1.99 Hz, ν_ion − ν_RF = 1.35 Hz, S_noise = 3.101e-18 V²_RMS,
    /// t_d = 1 s on a 1 Hz grid ±500 Hz around ν_RF. At t = 0 the quartz
    /// carries |⟨b⟩| = 1e6 and the ions |⟨a⟩| = 3e3 at ERP = 150°.
    pub fn published() -> Self {
        let params = ModelParams {
            omega_rf: hz_to_rad(2_689_600.0),
            detuning_ion: hz_to_rad(1.35),
            detuning_q: hz_to_rad(1.99),
            gamma_ion: 0.0,
            gamma_q: hz_to_rad(39.81),
            g: C64::new(0.0, hz_to_rad(1.449)),
            n_ion: 2.3e6,
            n_q: 2.3e6,
            v0: 2.6e-11,
            ..ModelParams::default()
        };
        let delta = relative_phase_for_erp(params.g, PUBLISHED_ERP_DEG.to_radians());
        Self {
            params,
            s_noise: 3.101e-18,
            drive_off: MomentVector::from_polar(3e3, delta, 1e6, 0.0),
            td: 1.0,
            grid: Grid {
                start_hz: -498.65,
                step_hz: 1.0,
                len: 1001,
            },
            sample_rate: 131_072.0,
        }
    }

    /// The same setup with no ions: g = 0 and no coherent motion.
    pub fn background(&self) -> Self {
        Self {
            params: ModelParams {
                g: C64::from(0.0),
                ..self.params
            },
            drive_off: MomentVector::ZERO,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.s_noise >= 0.0 && self.s_noise.is_finite()) {
            return Err(Error::param("s_noise", format!("must be ≥ 0, got {}", self.s_noise)));
        }
        if self.grid.len == 0 || !(self.grid.step_hz > 0.0 || self.grid.len == 1) || !self.grid.start_hz.is_finite() {
            return Err(Error::param("grid", "needs len ≥ 1 and a positive step"));
        }
        if !self.drive_off.is_physical() {
            return Err(Error::param(
                "drive_off",
                "⟨a†⟩, ⟨b†⟩ must be the conjugates of ⟨a⟩, ⟨b⟩",
            ));
        }
        Ok(())
    }

    pub fn window(&self, t0: f64) -> Result<SpectrumWindow> {
        SpectrumWindow::uniform_hz(t0, self.td, self.grid.start_hz, self.grid.step_hz, self.grid.len)
    }

    /// Stationary correlators. Without coupling and ion damping the ions never
    /// thermalize; their occupation is then taken as n_ion, which the quartz
    /// spectrum does not see.
    pub fn thermal(&self) -> Result<ThermalCorrelators> {
        if self.params.g.norm() == 0.0 && self.params.gamma_ion == 0.0 {
            self.params.validate()?;
            return Ok(ThermalCorrelators::decoupled(self.params.n_ion, self.params.n_q));
        }
        thermal_closed_form(&self.params)
    }

    /// ⟨A(t₀)⟩ by free propagation from drive-off.
    pub fn moments_at(&self, t0: f64) -> Result<MomentVector> {
        let e = build_evolution_matrix(&self.params);
        propagate_moments(&e, &self.drive_off, &DriveVector::ZERO, t0)
    }

    /// |⟨a⟩| held at its drive-off value, |⟨b⟩| decaying at γ_q/2 and the
    /// relative phase chosen for a given ERP; the state that keeps the
    /// dip-versus-peak morphology controlled by t₀ alone.
    pub fn moments_with_erp(&self, t0: f64, erp: f64) -> MomentVector {
        let delta = relative_phase_for_erp(self.params.g, erp);
        let b = self.drive_off.abs_b() * (-0.5 * self.params.gamma_q * t0).exp();
        MomentVector::from_polar(self.drive_off.abs_a(), delta, b, 0.0)
    }

    /// Closed-form S(Δ; t₀) with freely propagated moments.
    pub fn closed_form(&self, t0: f64, mode: ThermalMode) -> Result<Spectrum> {
        self.closed_form_with(&self.moments_at(t0)?, t0, mode)
    }

    pub fn closed_form_with(&self, a_t0: &MomentVector, t0: f64, mode: ThermalMode) -> Result<Spectrum> {
        total_psd(
            &self.params,
            a_t0,
            &self.thermal()?,
            self.s_noise,
            &self.window(t0)?,
            mode,
        )
    }

    /// Carrier aligned so that every grid offset sits on a DFT bin.
    pub fn plan(&self) -> Result<SamplingPlan> {
        SamplingPlan::aligned(self.sample_rate, &self.window(0.0)?)
    }

    /// Averaged periodogram of `n_traces` synthetic traces with freely
    /// propagated moments; σ is the standard error of the mean.
    pub fn synthesize(&self, t0: f64, n_traces: usize, seed: u64) -> Result<Spectrum> {
        self.synthesize_with(&self.moments_at(t0)?, t0, n_traces, seed)
    }

    pub fn synthesize_with(&self, a_t0: &MomentVector, t0: f64, n_traces: usize, seed: u64) -> Result<Spectrum> {
        let win = self.window(t0)?;
        let plan = self.plan()?;
        let th = self.thermal()?;
        Ok(synthesize_periodogram(&self.params, a_t0, &th, self.s_noise, &win, &plan, n_traces, seed)?.periodogram)
    }

    /// ν_RF + offset in Hz.
    pub fn absolute_hz(&self, offset_hz: f64) -> f64 {
        self.params.omega_rf / TWO_PI + offset_hz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::effective_relative_phase;

    #[test]
    fn published_point_is_valid() {
        let s = Scenario::published();
        s.validate().unwrap();
        let erp = effective_relative_phase(s.params.g, s.drive_off.relative_phase()).unwrap();
        assert!((erp.to_degrees() - PUBLISHED_ERP_DEG).abs() < 1e-9);
        let hz = s.window(0.0).unwrap().offsets_hz();
        assert!(hz.iter().any(|v| (v - 1.35).abs() < 1e-9));
        s.plan().unwrap();
    }

    #[test]
    fn background_has_no_ion_signal() {
        let s = Scenario::published().background();
        let sp = s.closed_form(0.0, ThermalMode::FiniteWindow).unwrap();
        let c = sp.components.unwrap();
        assert!(c.coherent.iter().all(|v| *v == 0.0));
        assert!(c.thermal.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn erp_moments_decay_only_in_b() {
        let s = Scenario::published();
        let m = s.moments_with_erp(0.05, 2.0);
        assert!((m.abs_a() - 3e3).abs() < 1e-9);
        assert!((m.abs_b() - 1e6 * (-0.5 * s.params.gamma_q * 0.05).exp()).abs() < 1e-6);
    }
}
