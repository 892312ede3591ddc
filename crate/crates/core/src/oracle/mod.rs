//! Independent brute-force references and synthetic data.

pub mod dynamics;
pub mod ode;
pub mod psd;
pub mod quad;
pub mod traces;

pub use dynamics::{
    correlator_dynamics, integrate_moments, two_time_correlator, DriveSchedule, EigenPropagator, SecondMoments,
    Trajectory,
};
pub use psd::{psd_quadrature, PsdQuadratureOptions};
pub use traces::{coherent_trace, synthesize_periodogram, synthesize_traces, SamplingPlan, Synthesis, TraceEnsemble};
