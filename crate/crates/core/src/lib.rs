//! Coupled quartz-resonator / trapped-ion oscillator model.
//!
//! Moment dynamics, stationary correlators and the closed-form power spectrum
//! of the quartz voltage, independent numerical oracles for all of them, and
//! the least-squares pipeline that extracts the coupling constant and the
//! motional frequencies from measured or synthetic spectra.

pub mod check;
pub mod constants;
pub mod error;
pub mod fitting;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod scenario;
pub mod spectrum;
pub mod thermal;
pub mod trap;

pub use error::{Error, Result};
pub use fitting::{
    chi_squared, fit_background, fit_coupling_timeseries, fit_full_spectrum, fit_joint, fit_shortened, CouplingStart,
    Diagnostic, FitModel, FitOptions, FitProblem, FitResult, FreeParam, Param, Weighting,
};
pub use linalg::C64;
pub use model::{
    build_evolution_matrix, driven_steady_state, noise_matrix, propagate_moments, propagator, DriveVector,
    EvolutionMatrix, ExpMethod, ModelParams, MomentVector, Propagator,
};
pub use scenario::{Grid, Scenario};
pub use spectrum::{
    coherent_psd, effective_relative_phase, envelope, thermal_psd, thermal_psd_finite, total_psd, Spectrum,
    SpectrumWindow, ThermalMode,
};
pub use thermal::{lyapunov_solve, occupation_from_temperature, thermal_closed_form, ThermalCorrelators};
pub use trap::{axial_frequency, coupling_constant, radial_frequencies, CouplingForm, QuartzConfig, TrapConfig};
