//! Brute-force moment dynamics: ODE integration of the first and second
//! moments, and the two-time correlator from the regression theorem.
//!
//! Nothing here calls the closed-form propagator of [`crate::model`]; the
//! drift is assembled directly from the parameters, and exponentials come from
//! a numerical Schur decomposition.

use nalgebra::{Matrix4, Schur, Vector4};

use super::ode::{self, OdeTolerance};
use crate::error::{Error, Result};
use crate::linalg::{C64, I};
use crate::model::{noise_matrix, ModelParams, MomentVector};
use crate::thermal::ThermalCorrelators;

/// Intervals [start, end) during which the constant drive is on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriveSchedule {
    pub on: Vec<(f64, f64)>,
}

impl DriveSchedule {
    pub fn off() -> Self {
        Self { on: Vec::new() }
    }

    pub fn always_on() -> Self {
        Self {
            on: vec![(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    /// Drive on before `t_off`, off afterwards.
    pub fn until(t_off: f64) -> Self {
        Self {
            on: vec![(f64::NEG_INFINITY, t_off)],
        }
    }

    pub fn is_on(&self, t: f64) -> bool {
        self.on.iter().any(|&(a, b)| t >= a && t < b)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.on
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .filter(|x| x.is_finite())
            .collect()
    }
}

/// M assembled entry by entry from the parameters.
fn drift(p: &ModelParams) -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    m[(0, 0)] = C64::new(0.5 * p.gamma_ion, p.detuning_ion);
    m[(0, 1)] = I * p.g.conj();
    m[(1, 0)] = I * p.g;
    m[(1, 1)] = C64::new(0.5 * p.gamma_q, p.detuning_q);
    m[(2, 2)] = C64::new(0.5 * p.gamma_ion, -p.detuning_ion);
    m[(2, 3)] = -I * p.g;
    m[(3, 2)] = -I * p.g.conj();
    m[(3, 3)] = C64::new(0.5 * p.gamma_q, -p.detuning_q);
    m
}

fn force(p: &ModelParams) -> Vector4<C64> {
    let fi = C64::from_polar(p.f_ion, -p.phi_ion);
    let fq = C64::from_polar(p.f_q, -p.phi_q);
    Vector4::new(fi, fq, fi.conj(), fq.conj())
}

/// Sampled first-moment trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub moments: Vec<MomentVector>,
}

/// Splits [t_start, last sample] at every sample time and schedule switch so
/// that the drive is constant on each ODE leg.
fn legs(t_start: f64, samples: &[f64], schedule: &DriveSchedule) -> Result<Vec<(f64, f64, Option<usize>)>> {
    if samples.windows(2).any(|w| w[1] < w[0]) || samples.first().is_some_and(|&s| s < t_start) {
        return Err(Error::Domain("sample times must be sorted and ≥ t_start".into()));
    }
    let t_end = samples.last().copied().unwrap_or(t_start);
    let mut cuts: Vec<(f64, Option<usize>)> = samples.iter().enumerate().map(|(i, &t)| (t, Some(i))).collect();
    for b in schedule.breakpoints() {
        if b > t_start && b < t_end {
            cuts.push((b, None));
        }
    }
    cuts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out = Vec::with_capacity(cuts.len());
    let mut t = t_start;
    for (c, idx) in cuts {
        out.push((t, c, idx));
        t = c;
    }
    Ok(out)
}

/// Adaptive Runge–Kutta solution of d⟨A⟩/dt = −M⟨A⟩ + F(t), with F switched
/// by `schedule`, sampled at `samples` (sorted, ≥ `t_start`).
pub fn integrate_moments(
    p: &ModelParams,
    a0: &MomentVector,
    schedule: &DriveSchedule,
    t_start: f64,
    samples: &[f64],
    tol: f64,
) -> Result<Trajectory> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be > 0"));
    }
    let m = drift(p);
    let f = force(p);
    let tolerance = OdeTolerance::new(tol);
    let mut y: Vec<C64> = a0.to_vector().iter().copied().collect();
    let mut moments = vec![MomentVector::ZERO; samples.len()];
    for (a, b, idx) in legs(t_start, samples, schedule)? {
        if b > a {
            let drive = if schedule.is_on(0.5 * (a + b)) {
                f
            } else {
                Vector4::zeros()
            };
            let rhs = |_t: f64, y: &[C64], dy: &mut [C64]| {
                for r in 0..4 {
                    let mut acc = drive[r];
                    for c in 0..4 {
                        acc -= m[(r, c)] * y[c];
                    }
                    dy[r] = acc;
                }
            };
            y = ode::integrate(rhs, a, &y, b, tolerance)?.0;
        }
        if let Some(i) = idx {
            moments[i] = MomentVector {
                a: y[0],
                b: y[1],
                a_dag: y[2],
                b_dag: y[3],
            };
        }
    }
    Ok(Trajectory {
        times: samples.to_vec(),
        moments,
    })
}

/// Means and same-time second moments ⟨A_m A_n⟩ at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoments {
    pub means: MomentVector,
    pub second: Matrix4<C64>,
}

/// Integrates the same-time correlator equations
/// d⟨A_mA_n⟩/dt = −M_mr⟨A_rA_n⟩ − M_ns⟨A_mA_s⟩ + F_m⟨A_n⟩ + ⟨A_m⟩F_n + C_mn
/// jointly with the first moments.
pub fn correlator_dynamics(
    p: &ModelParams,
    initial: &SecondMoments,
    schedule: &DriveSchedule,
    t_start: f64,
    samples: &[f64],
    tol: f64,
) -> Result<Vec<SecondMoments>> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be > 0"));
    }
    let m = drift(p);
    let f = force(p);
    let c = noise_matrix(p).map(C64::from);
    let tolerance = OdeTolerance::new(tol);

    let mut y = Vec::with_capacity(20);
    y.extend(initial.means.to_vector().iter().copied());
    y.extend(initial.second.iter().copied());
    let mut out = vec![initial.clone(); samples.len()];

    for (a, b, idx) in legs(t_start, samples, schedule)? {
        if b > a {
            let drive = if schedule.is_on(0.5 * (a + b)) {
                f
            } else {
                Vector4::zeros()
            };
            let rhs = |_t: f64, y: &[C64], dy: &mut [C64]| {
                let mean = Vector4::from_column_slice(&y[..4]);
                let t = Matrix4::from_column_slice(&y[4..]);
                let dm = drive - m * mean;
                let dt = -(m * t) - t * m.transpose() + drive * mean.transpose() + mean * drive.transpose() + c;
                dy[..4].copy_from_slice(dm.as_slice());
                dy[4..].copy_from_slice(dt.as_slice());
            };
            y = ode::integrate(rhs, a, &y, b, tolerance)?.0;
        }
        if let Some(i) = idx {
            out[i] = SecondMoments {
                means: MomentVector::from_vector(&Vector4::from_column_slice(&y[..4])),
                second: Matrix4::from_column_slice(&y[4..]),
            };
        }
    }
    Ok(out)
}

/// exp(−M τ) for any real τ through a numerical eigendecomposition of M.
#[derive(Debug, Clone)]
pub struct EigenPropagator {
    lambda: [C64; 4],
    v: Matrix4<C64>,
    v_inv: Matrix4<C64>,
}

impl EigenPropagator {
    pub fn new(p: &ModelParams) -> Result<Self> {
        Self::from_matrix(drift(p))
    }

    pub fn from_matrix(m: Matrix4<C64>) -> Result<Self> {
        let (q, t) = Schur::new(m).unpack();
        let lambda = [t[(0, 0)], t[(1, 1)], t[(2, 2)], t[(3, 3)]];
        // eigenvectors of the triangular factor by back substitution
        let mut y = Matrix4::<C64>::zeros();
        let scale = m.norm().max(f64::MIN_POSITIVE);
        for k in 0..4 {
            y[(k, k)] = C64::from(1.0);
            for i in (0..k).rev() {
                let mut acc = C64::default();
                for j in i + 1..=k {
                    acc += t[(i, j)] * y[(j, k)];
                }
                let mut d = lambda[k] - t[(i, i)];
                if d.norm() < 1e-13 * scale {
                    d = C64::from(1e-13 * scale);
                }
                y[(i, k)] = acc / d;
            }
        }
        let v = q * y;
        let v_inv = v
            .try_inverse()
            .ok_or_else(|| Error::Domain("drift matrix is defective; eigen route unavailable".into()))?;
        Ok(Self { lambda, v, v_inv })
    }

    pub fn eigenvalues(&self) -> [C64; 4] {
        self.lambda
    }

    pub fn at(&self, tau: f64) -> Matrix4<C64> {
        let mut scaled = self.v;
        for k in 0..4 {
            let e = (-self.lambda[k] * tau).exp();
            for r in 0..4 {
                scaled[(r, k)] *= e;
            }
        }
        scaled * self.v_inv
    }

    /// Row `r` of exp(−Mτ).
    pub fn row(&self, r: usize, tau: f64) -> [C64; 4] {
        let mut w = [C64::default(); 4];
        for k in 0..4 {
            w[k] = self.v[(r, k)] * (-self.lambda[k] * tau).exp();
        }
        let mut out = [C64::default(); 4];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|k| w[k] * self.v_inv[(k, c)]).sum();
        }
        out
    }

    /// Free evolution of a moment vector by τ (either sign).
    pub fn evolve(&self, a: &MomentVector, tau: f64) -> MomentVector {
        MomentVector::from_vector(&(self.at(tau) * a.to_vector()))
    }
}

/// ⟨A_m(t+τ) A_n(t)⟩ for free evolution after the drive is off, given the
/// means at t. For τ ≥ 0 this is ⟨A_m(t+τ)⟩⟨A_n(t)⟩ + U_mr(τ)T_rn; for τ < 0
/// it is ⟨A_m(t+τ)⟩⟨A_n(t)⟩ + T_mr U_nr(|τ|).
pub fn two_time_correlator(
    p: &ModelParams,
    th: &ThermalCorrelators,
    a_t: &MomentVector,
    tau: f64,
) -> Result<Matrix4<C64>> {
    let prop = EigenPropagator::new(p)?;
    Ok(two_time_with(&prop, th, a_t, tau))
}

pub(crate) fn two_time_with(
    prop: &EigenPropagator,
    th: &ThermalCorrelators,
    a_t: &MomentVector,
    tau: f64,
) -> Matrix4<C64> {
    let now = a_t.to_vector();
    let shifted = prop.at(tau) * now;
    let means = shifted * now.transpose();
    let fluct = if tau >= 0.0 {
        prop.at(tau) * th.t
    } else {
        th.t * prop.at(-tau).transpose()
    };
    means + fluct
}
