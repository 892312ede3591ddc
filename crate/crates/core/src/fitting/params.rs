//! Fit parameter names, units and optimizer-space transforms.

use std::fmt;
use std::str::FromStr;

use crate::constants::{hz_to_rad, rad_to_hz};
use crate::error::{Error, Result};
use crate::linalg::{wrap_phase, C64};
use crate::model::{ModelParams, MomentVector};

/// A fittable quantity in file units: frequencies and rates in Hz, offsets
/// from ν_RF, phases in rad, PSD in V²_RMS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Param {
    NQ,
    NIon,
    GammaQHz,
    GammaIonHz,
    SNoise,
    NuQHz,
    NuIonHz,
    GHz,
    AAbs,
    BAbs,
    DeltaRad,
}

/// How a parameter is represented inside the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// u = ln v, keeps v > 0.
    Log,
    Linear,
    /// Unconstrained, wrapped to (−π, π] on output.
    Phase,
}

impl Param {
    pub const ALL: [Param; 11] = [
        Param::NQ,
        Param::NIon,
        Param::GammaQHz,
        Param::GammaIonHz,
        Param::SNoise,
        Param::NuQHz,
        Param::NuIonHz,
        Param::GHz,
        Param::AAbs,
        Param::BAbs,
        Param::DeltaRad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::NQ => "n_q",
            Param::NIon => "n_ion",
            Param::GammaQHz => "gamma_q_hz",
            Param::GammaIonHz => "gamma_ion_hz",
            Param::SNoise => "s_noise",
            Param::NuQHz => "nu_q_hz",
            Param::NuIonHz => "nu_ion_hz",
            Param::GHz => "g_hz",
            Param::AAbs => "a_abs",
            Param::BAbs => "b_abs",
            Param::DeltaRad => "delta_rad",
        }
    }

    /// γ_ion may sit exactly at 0, so it stays linear with a lower bound.
    pub fn transform(self) -> Transform {
        match self {
            Param::NuQHz | Param::NuIonHz | Param::GammaIonHz => Transform::Linear,
            Param::DeltaRad => Transform::Phase,
            _ => Transform::Log,
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::FitSetup(format!("unknown fit parameter `{s}`")))
    }
}

impl Transform {
    pub fn forward(self, v: f64) -> f64 {
        match self {
            Transform::Log => v.ln(),
            Transform::Linear | Transform::Phase => v,
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Log => u.exp(),
            Transform::Linear => u,
            Transform::Phase => wrap_phase(u),
        }
    }

    /// dv/du at u.
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Transform::Log => u.exp(),
            Transform::Linear | Transform::Phase => 1.0,
        }
    }
}

/// One value per [`Param`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSet(pub [f64; 11]);

impl ParamSet {
    /// Reads the fittable quantities out of model parameters and a moment
    /// vector (θ_b gauge: δ = θ_a − θ_b).
    pub fn from_model(p: &ModelParams, moments: &MomentVector, s_noise: f64) -> Self {
        let mut v = [0.0; 11];
        v[Param::NQ.index()] = p.n_q;
        v[Param::NIon.index()] = p.n_ion;
        v[Param::GammaQHz.index()] = rad_to_hz(p.gamma_q);
        v[Param::GammaIonHz.index()] = rad_to_hz(p.gamma_ion);
        v[Param::SNoise.index()] = s_noise;
        v[Param::NuQHz.index()] = rad_to_hz(p.detuning_q);
        v[Param::NuIonHz.index()] = rad_to_hz(p.detuning_ion);
        v[Param::GHz.index()] = rad_to_hz(p.g.norm());
        v[Param::AAbs.index()] = moments.abs_a();
        v[Param::BAbs.index()] = moments.abs_b();
        v[Param::DeltaRad.index()] = moments.relative_phase();
        Self(v)
    }

    pub fn get(&self, p: Param) -> f64 {
        self.0[p.index()]
    }

    pub fn set(&mut self, p: Param, v: f64) {
        self.0[p.index()] = v;
    }

    /// Model parameters with these values; everything else (ω_RF, arg g, V₀,
    /// drives) comes from `base`. With `tie_n_ion`, n_ion follows n_q.
    pub fn apply(&self, base: &ModelParams, tie_n_ion: bool) -> ModelParams {
        let g_phase = if base.g.norm() > 0.0 {
            base.g.arg()
        } else {
            std::f64::consts::FRAC_PI_2
        };
        let n_q = self.get(Param::NQ);
        ModelParams {
            n_q,
            n_ion: if tie_n_ion { n_q } else { self.get(Param::NIon) },
            gamma_q: hz_to_rad(self.get(Param::GammaQHz)),
            gamma_ion: hz_to_rad(self.get(Param::GammaIonHz)),
            detuning_q: hz_to_rad(self.get(Param::NuQHz)),
            detuning_ion: hz_to_rad(self.get(Param::NuIonHz)),
            g: C64::from_polar(hz_to_rad(self.get(Param::GHz)), g_phase),
            ..*base
        }
    }

    /// ⟨A⟩ with θ_b = 0 and θ_a = δ.
    pub fn moments(&self) -> MomentVector {
        MomentVector::from_polar(
            self.get(Param::AAbs),
            self.get(Param::DeltaRad),
            self.get(Param::BAbs),
            0.0,
        )
    }
}
