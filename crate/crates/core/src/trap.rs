//! Penning-trap eigenfrequencies and the geometric ion/quartz coupling constant.
//!
//! Everything here is plain arithmetic on SI inputs; angular frequencies are
//! returned in rad/s.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry, field and ion species of a Penning trap with a segmented ring
/// used as pick-up electrode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    /// Axial magnetic field B (T).
    pub magnetic_field: f64,
    /// Ring-to-endcap voltage U₀ (V).
    pub ring_voltage: f64,
    /// Characteristic trap dimension d = ½·√(2z₀² + r₀²) (m).
    pub char_distance: f64,
    /// Ion mass (kg).
    pub ion_mass: f64,
    /// Ion charge (C).
    pub ion_charge: f64,
    /// Geometrical factor α of the induced charge on the detection segment.
    pub geom_factor: f64,
    /// Distance d₀ entering the linearized induced charge (m).
    pub electrode_half_gap: f64,
    /// Number of stored ions N.
    pub ion_count: u64,
}

impl TrapConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("magnetic_field", self.magnetic_field),
            ("char_distance", self.char_distance),
            ("electrode_half_gap", self.electrode_half_gap),
            ("ion_mass", self.ion_mass),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !self.ring_voltage.is_finite() || !self.ion_charge.is_finite() || !self.geom_factor.is_finite() {
            return Err(Error::param("trap", "voltage, charge and α must be finite"));
        }
        if self.ion_count == 0 {
            return Err(Error::param("ion_count", "at least one ion is required"));
        }
        Ok(())
    }

    /// Free-space cyclotron frequency ω_c = qB/m.
    pub fn cyclotron_frequency(&self) -> f64 {
        self.ion_charge * self.magnetic_field / self.ion_mass
    }
}

/// Quartz resonator parameters. Only the ratio k/C_q enters the model, so it
/// is stored as a single scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuartzConfig {
    /// Piezoelectric constant over capacitance, k/C_q.
    pub piezo_ratio: f64,
    /// Effective mass of the oscillation mode m_q (kg).
    pub mode_mass: f64,
    /// Resonance ω_q (rad/s).
    pub resonant_freq: f64,
    /// Quality factor Q.
    pub quality_factor: f64,
    /// Bath temperature T_q (K).
    pub temperature: f64,
    /// Voltage scale V₀ of the quartz quadrature (V).
    pub voltage_scale: f64,
}

impl QuartzConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mode_mass", self.mode_mass),
            ("resonant_freq", self.resonant_freq),
            ("quality_factor", self.quality_factor),
            ("temperature", self.temperature),
            ("voltage_scale", self.voltage_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !self.piezo_ratio.is_finite() {
            return Err(Error::param("piezo_ratio", "must be finite"));
        }
        Ok(())
    }

    /// Damping rate γ_q = ω_q / Q.
    pub fn damping_rate(&self) -> f64 {
        self.resonant_freq / self.quality_factor
    }
}

/// Axial frequency ω_z = √(qU₀ / (m d²)).
pub fn axial_frequency(cfg: &TrapConfig) -> Result<f64> {
    cfg.validate()?;
    let radicand = cfg.ion_charge * cfg.ring_voltage;
    if radicand <= 0.0 {
        return Err(Error::Domain(format!(
            "q·U₀ = {radicand:e} is not confining (needs q·U₀ > 0)"
        )));
    }
    Ok((radicand / (cfg.ion_mass * cfg.char_distance * cfg.char_distance)).sqrt())
}

/// Modified-cyclotron and magnetron frequencies (ω₊, ω₋).
pub fn radial_frequencies(cfg: &TrapConfig) -> Result<(f64, f64)> {
    let omega_z = axial_frequency(cfg)?;
    radial_from_axial(cfg.cyclotron_frequency(), omega_z)
}

/// ω± = (ω_c ± √(ω_c² − 2ω_z²)) / 2.
///
/// The magnetron branch is evaluated as ω_z²/(2ω₊) so that ω₊ω₋ = ω_z²/2
/// holds to rounding even when ω₋ ≪ ω₊.
pub fn radial_from_axial(omega_c: f64, omega_z: f64) -> Result<(f64, f64)> {
    let disc = omega_c * omega_c - 2.0 * omega_z * omega_z;
    if !(disc > 0.0) || omega_c <= 0.0 {
        return Err(Error::TrappingCondition { discriminant: disc });
    }
    let plus = 0.5 * (omega_c + disc.sqrt());
    let minus = if omega_z == 0.0 {
        0.0
    } else {
        0.5 * omega_z * omega_z / plus
    };
    Ok((plus, minus))
}

/// Which branch of the coupling-constant formula to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingForm {
    Exact,
    /// ω₋ ≪ ω₊ and ω_q ≈ ω₊.
    Approximate,
}

/// Both evaluations of the ion/quartz coupling g (rad/s). Purely imaginary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConstant {
    pub exact: Complex64,
    pub approximate: Complex64,
}

impl CouplingConstant {
    pub fn select(&self, form: CouplingForm) -> Complex64 {
        match form {
            CouplingForm::Exact => self.exact,
            CouplingForm::Approximate => self.approximate,
        }
    }
}

/// Geometric coupling constant between the ion cloud's modified-cyclotron
/// mode and the quartz mode.
///
/// exact:  g = i (k/C_q) q α (ω_q + 2ω₋) / (8 d₀) · √(N m_q ω_q / (m (ω₊ − ω₋)))
/// approx: g ≈ i (k/C_q) q α ω₊ / (8 d₀) · √(N m_q / m)
pub fn coupling_constant(
    trap: &TrapConfig,
    quartz: &QuartzConfig,
    omega_plus: f64,
    omega_minus: f64,
) -> Result<CouplingConstant> {
    trap.validate()?;
    quartz.validate()?;
    if !(omega_plus > omega_minus) || omega_minus < 0.0 {
        return Err(Error::Domain(format!(
            "need ω₊ > ω₋ ≥ 0, got ω₊ = {omega_plus:e}, ω₋ = {omega_minus:e}"
        )));
    }
    let n = trap.ion_count as f64;
    let prefactor = quartz.piezo_ratio * trap.ion_charge * trap.geom_factor / (8.0 * trap.electrode_half_gap);
    let wq = quartz.resonant_freq;
    let exact = prefactor
        * (wq + 2.0 * omega_minus)
        * (n * quartz.mode_mass * wq / (trap.ion_mass * (omega_plus - omega_minus))).sqrt();
    let approximate = prefactor * omega_plus * (n * quartz.mode_mass / trap.ion_mass).sqrt();
    Ok(CouplingConstant {
        exact: Complex64::new(0.0, exact),
        approximate: Complex64::new(0.0, approximate),
    })
}
