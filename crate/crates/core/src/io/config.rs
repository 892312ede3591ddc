use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::constants::hz_to_rad;
use crate::error::{Error, Result};
use crate::fitting::{CouplingStart, FitOptions, LmOptions, Param, Weighting};
use crate::linalg::C64;
use crate::model::{ModelParams, MomentVector};
use crate::scenario::{Grid, Scenario};
use crate::spectrum::{relative_phase_for_erp, ThermalMode};
use crate::trap::{QuartzConfig, TrapConfig};

/// Everything a run needs. Frequencies are in Hz, offsets from ν_RF where
/// the name says `offset`; the conversion to rad/s happens in
/// [`RunConfig::scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    pub window: WindowBlock,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub fit: FitBlock,
    #[serde(default)]
    pub io: IoBlock,
    #[serde(default)]
    pub check: CheckBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<TrapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quartz: Option<QuartzConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// ν_RF (Hz).
    pub nu_rf_hz: f64,
    /// ν_ion − ν_RF (Hz).
    pub nu_ion_offset_hz: f64,
    /// ν_q − ν_RF (Hz).
    pub nu_q_offset_hz: f64,
    /// γ_ion/2π (Hz).
    #[serde(default)]
    pub gamma_ion_hz: f64,
    /// γ_q/2π (Hz).
    pub gamma_q_hz: f64,
    /// |g|/2π (Hz); g is taken purely imaginary.
    pub g_hz: f64,
    pub n_ion: f64,
    pub n_q: f64,
    /// V₀ (V).
    pub v0_v: f64,
    /// S_noise (V²_RMS).
    pub s_noise_v2rms: f64,
    /// Drive amplitudes F/(ħ√2) over 2π (Hz) and phases (rad); only active
    /// before drive-off.
    #[serde(default)]
    pub f_ion_hz: f64,
    #[serde(default)]
    pub f_q_hz: f64,
    #[serde(default)]
    pub phi_ion_rad: f64,
    #[serde(default)]
    pub phi_q_rad: f64,
}

/// ⟨a⟩, ⟨b⟩ at drive-off; the phase is given either as ERP or as δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub a_abs: f64,
    pub b_abs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erp_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_rad: Option<f64>,
}

impl Default for InitialBlock {
    fn default() -> Self {
        Self {
            a_abs: 3e3,
            b_abs: 1e6,
            erp_deg: Some(150.0),
            delta_rad: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThermalModeName {
    #[default]
    FiniteWindow,
    LongWindow,
}

impl From<ThermalModeName> for ThermalMode {
    fn from(m: ThermalModeName) -> Self {
        match m {
            ThermalModeName::FiniteWindow => ThermalMode::FiniteWindow,
            ThermalModeName::LongWindow => ThermalMode::LongWindow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub start_hz: f64,
    pub step_hz: f64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowBlock {
    /// Window starts after drive-off (s).
    pub t0_s: Vec<f64>,
    /// t_d (s).
    pub td_s: f64,
    pub grid: GridBlock,
    #[serde(default)]
    pub thermal_mode: ThermalModeName,
}

/// How ⟨A(t₀)⟩ is obtained for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MomentsMode {
    /// Free propagation from drive-off.
    #[default]
    Free,
    /// |⟨a⟩| held, |⟨b⟩| decaying at γ_q/2, relative phase set by the ERP.
    Erp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    /// Traces per spectrum; 0 writes closed-form curves only.
    pub n_traces: usize,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub moments: MomentsMode,
    #[serde(default)]
    pub write_traces: bool,
    #[serde(default = "yes")]
    pub write_model: bool,
    /// Ion-free spectra at t₀ = 0 written for the background fit.
    #[serde(default = "one")]
    pub background_spectra: usize,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl Default for SimulateBlock {
    fn default() -> Self {
        Self {
            n_traces: 20,
            sample_rate_hz: 131_072.0,
            moments: MomentsMode::Free,
            write_traces: false,
            write_model: true,
            background_spectra: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Background,
    Coupling,
    Full,
    #[default]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingName {
    /// σ column of the data files.
    #[default]
    Data,
    /// σ from the model and `weight_traces`.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    pub stage: Stage,
    pub weighting: WeightingName,
    pub weight_traces: usize,
    pub max_iterations: usize,
    pub reweight_passes: usize,
    pub phase_starts: usize,
    pub tie_n_ion: bool,
    pub degeneracy_threshold: f64,
    /// Frequency of the coupling time series (Hz offset); defaults to the
    /// model's ν_ion offset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu1_hz: Option<f64>,
    /// Frees γ_ion in the coupling fit, starting from this value (Hz).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_ion_start_hz: Option<f64>,
    /// Starting values by parameter name, overriding the stage guesses.
    #[serde(default)]
    pub start: BTreeMap<String, f64>,
    /// Parameters pinned to a value by name.
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
}

impl Default for FitBlock {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            stage: Stage::All,
            weighting: WeightingName::Data,
            weight_traces: 20,
            max_iterations: o.lm.max_iterations,
            reweight_passes: o.reweight_passes,
            phase_starts: o.phase_starts,
            tie_n_ion: o.tie_n_ion,
            degeneracy_threshold: o.degeneracy_threshold,
            nu1_hz: None,
            gamma_ion_start_hz: None,
            start: BTreeMap::new(),
            fixed: BTreeMap::new(),
        }
    }
}

/// Paths are relative to the directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoBlock {
    pub out: PathBuf,
    pub seed: u64,
    /// Spectra recorded without ions.
    #[serde(default)]
    pub background: Vec<PathBuf>,
    /// Spectra with ions, one per t₀.
    #[serde(default)]
    pub spectra: Vec<PathBuf>,
}

impl Default for IoBlock {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            seed: 1,
            background: Vec::new(),
            spectra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBlock {
    /// Replaces every check's own tolerance when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Random parameter sets per randomized check.
    pub random_sets: usize,
    /// Traces for the periodogram check.
    pub n_traces: usize,
}

impl Default for CheckBlock {
    fn default() -> Self {
        Self {
            tolerance: None,
            random_sets: 20,
            n_traces: 200,
        }
    }
}

fn params_map(m: &BTreeMap<String, f64>, what: &str) -> Result<BTreeMap<Param, f64>> {
    m.iter()
        .map(|(k, v)| {
            let p: Param = k
                .parse()
                .map_err(|_| Error::Config(format!("fit.{what}: unknown parameter `{k}`")))?;
            Ok((p, *v))
        })
        .collect()
}

impl RunConfig {
    /// The published configuration: see [`Scenario::published`].
    pub fn published() -> Self {
        Self {
            model: ModelBlock {
                nu_rf_hz: 2_689_600.0,
                nu_ion_offset_hz: 1.35,
                nu_q_offset_hz: 1.99,
                gamma_ion_hz: 0.0,
                gamma_q_hz: 39.81,
                g_hz: 1.449,
                n_ion: 2.3e6,
                n_q: 2.3e6,
                v0_v: 2.6e-11,
                s_noise_v2rms: 3.101e-18,
                f_ion_hz: 0.0,
                f_q_hz: 0.0,
                phi_ion_rad: 0.0,
                phi_q_rad: 0.0,
            },
            initial: InitialBlock::default(),
            window: WindowBlock {
                t0_s: vec![0.0, 0.014, 0.025, 0.05],
                td_s: 1.0,
                grid: GridBlock {
                    start_hz: -498.65,
                    step_hz: 1.0,
                    len: 1001,
                },
                thermal_mode: ThermalModeName::FiniteWindow,
            },
            simulate: SimulateBlock::default(),
            fit: FitBlock::default(),
            io: IoBlock::default(),
            check: CheckBlock::default(),
            trap: None,
            quartz: None,
        }
    }

    /// Parses TOML; errors name `origin` and the offending line and column.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| {
                    let before = &text[..s.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    format!("{origin}:{line}:{col}")
                })
                .unwrap_or_else(|| origin.to_string());
            Error::Config(format!("{location}: {}", e.message()))
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_toml()?.as_bytes())
    }

    pub fn model_params(&self) -> ModelParams {
        let m = &self.model;
        ModelParams {
            omega_rf: hz_to_rad(m.nu_rf_hz),
            detuning_ion: hz_to_rad(m.nu_ion_offset_hz),
            detuning_q: hz_to_rad(m.nu_q_offset_hz),
            gamma_ion: hz_to_rad(m.gamma_ion_hz),
            gamma_q: hz_to_rad(m.gamma_q_hz),
            g: C64::new(0.0, hz_to_rad(m.g_hz)),
            n_ion: m.n_ion,
            n_q: m.n_q,
            f_ion: hz_to_rad(m.f_ion_hz),
            f_q: hz_to_rad(m.f_q_hz),
            phi_ion: m.phi_ion_rad,
            phi_q: m.phi_q_rad,
            v0: m.v0_v,
        }
    }

    /// Relative phase δ = θ_a − θ_b at drive-off.
    pub fn initial_delta(&self) -> Result<f64> {
        match (self.initial.erp_deg, self.initial.delta_rad) {
            (Some(_), Some(_)) => Err(Error::Config(
                "initial: give either erp_deg or delta_rad, not both".into(),
            )),
            (Some(erp), None) => Ok(relative_phase_for_erp(self.model_params().g, erp.to_radians())),
            (None, Some(d)) => Ok(d),
            (None, None) => Ok(0.0),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let i = &self.initial;
        if !(i.a_abs >= 0.0 && i.b_abs >= 0.0 && i.a_abs.is_finite() && i.b_abs.is_finite()) {
            return Err(Error::Config(format!(
                "initial: amplitudes must be finite and ≥ 0, got {} and {}",
                i.a_abs, i.b_abs
            )));
        }
        let g = &self.window.grid;
        let sc = Scenario {
            params: self.model_params(),
            s_noise: self.model.s_noise_v2rms,
            drive_off: MomentVector::from_polar(i.a_abs, self.initial_delta()?, i.b_abs, 0.0),
            td: self.window.td_s,
            grid: Grid {
                start_hz: g.start_hz,
                step_hz: g.step_hz,
                len: g.len,
            },
            sample_rate: self.simulate.sample_rate_hz,
        };
        sc.validate()?;
        for t0 in &self.window.t0_s {
            sc.window(*t0)?;
        }
        Ok(sc)
    }

    pub fn thermal_mode(&self) -> ThermalMode {
        self.window.thermal_mode.into()
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        let f = &self.fit;
        if !(f.degeneracy_threshold > 0.0 && f.degeneracy_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "fit.degeneracy_threshold must lie in (0, 1], got {}",
                f.degeneracy_threshold
            )));
        }
        let weighting = match f.weighting {
            WeightingName::Data => Weighting::Data,
            WeightingName::Model => Weighting::Model {
                n_traces: f.weight_traces,
            },
        };
        Ok(FitOptions {
            lm: LmOptions {
                max_iterations: f.max_iterations,
                ..LmOptions::default()
            },
            weighting,
            reweight_passes: f.reweight_passes,
            thermal_mode: self.thermal_mode(),
            tie_n_ion: f.tie_n_ion,
            degeneracy_threshold: f.degeneracy_threshold,
            probe: Vec::new(),
            phase_starts: f.phase_starts.max(1),
            pin: params_map(&f.fixed, "fixed")?,
            start: params_map(&f.start, "start")?,
        })
    }

    /// ν₁ for the coupling time series (Hz offset).
    pub fn nu1_hz(&self) -> f64 {
        self.fit.nu1_hz.unwrap_or(self.model.nu_ion_offset_hz)
    }

    /// Starting point of the ion fits taken from the model and initial blocks.
    pub fn coupling_start(&self) -> Result<CouplingStart> {
        Ok(CouplingStart {
            nu_ion_hz: self.nu1_hz(),
            g_hz: self.model.g_hz,
            a_abs: self.initial.a_abs,
            b_abs: self.initial.b_abs,
            delta_rad: self.initial_delta()?,
            gamma_ion_hz: self.fit.gamma_ion_start_hz,
        })
    }

    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}
