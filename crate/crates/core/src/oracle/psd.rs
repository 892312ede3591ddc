//! The windowed PSD as a literal double time integral of the two-time
//! correlator, by nested adaptive quadrature.

use rayon::prelude::*;

use super::dynamics::EigenPropagator;
use super::quad::{self, QuadTolerance};
use crate::error::Result;
use crate::linalg::C64;
use crate::model::{ModelParams, MomentVector};
use crate::spectrum::{Spectrum, SpectrumWindow};
use crate::thermal::ThermalCorrelators;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdQuadratureOptions {
    pub inner: QuadTolerance,
    pub outer: QuadTolerance,
}

impl Default for PsdQuadratureOptions {
    fn default() -> Self {
        Self {
            inner: QuadTolerance {
                rel: 1e-8,
                abs: 0.0,
                max_intervals: 4000,
            },
            outer: QuadTolerance {
                rel: 1e-8,
                abs: 0.0,
                max_intervals: 4000,
            },
        }
    }
}

/// S(Δ) = (V₀²/2)(1/t_d) ∫∫ e^{−iΔ(τ₂−τ₁)} ⟨b†(τ₂) b(τ₁)⟩ dτ₁ dτ₂ over
/// [t₀, t₁]², the positive-frequency part of the symmetrized voltage
/// correlator. `a_t0` holds the means at t₀; evolution is free afterwards.
pub fn psd_quadrature(
    p: &ModelParams,
    th: &ThermalCorrelators,
    a_t0: &MomentVector,
    win: &SpectrumWindow,
    opts: PsdQuadratureOptions,
) -> Result<Spectrum> {
    p.validate()?;
    let prop = EigenPropagator::new(p)?;
    let (t0, t1) = (win.t0, win.t1());
    let start = a_t0.to_vector();
    let t = th.t;

    // ⟨b(τ)⟩ and ⟨b†(τ)⟩ by forward evolution from t₀
    let mean_b = |tau: f64| -> C64 {
        let row = prop.row(1, tau - t0);
        (0..4).map(|k| row[k] * start[k]).sum()
    };
    let mean_b_dag = |tau: f64| -> C64 {
        let row = prop.row(3, tau - t0);
        (0..4).map(|k| row[k] * start[k]).sum()
    };
    // ⟨b†(τ₂) b(τ₁)⟩ − ⟨b†(τ₂)⟩⟨b(τ₁)⟩
    let fluct = |tau2: f64, tau1: f64| -> C64 {
        let lag = tau2 - tau1;
        if lag >= 0.0 {
            let row = prop.row(3, lag);
            (0..4).map(|r| row[r] * t[(r, 1)]).sum()
        } else {
            let row = prop.row(1, -lag);
            (0..4).map(|r| t[(3, r)] * row[r]).sum()
        }
    };

    let values: Result<Vec<f64>> = win
        .offsets
        .par_iter()
        .map(|&delta| {
            let inner = |tau2: f64| -> Result<C64> {
                let b_dag_2 = mean_b_dag(tau2);
                let integrand = |tau1: f64| {
                    let corr = b_dag_2 * mean_b(tau1) + fluct(tau2, tau1);
                    C64::from_polar(1.0, delta * (tau1 - tau2)) * corr
                };
                Ok(quad::integrate(integrand, t0, t1, &[tau2], opts.inner)?.value)
            };
            let mut failure = None;
            let outer = quad::integrate(
                |tau2| match inner(tau2) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        C64::default()
                    }
                },
                t0,
                t1,
                &[],
                opts.outer,
            )?;
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(0.5 * p.v0 * p.v0 / win.td * outer.value.re)
        })
        .collect();
    Spectrum::new(win.clone(), values?)
}
