//! Levenberg–Marquardt on a weighted residual vector with a central-difference
//! Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Actual and predicted relative χ² reduction below which a step ends the fit.
    pub ftol: f64,
    /// Relative step size below which a near-Gauss–Newton step ends the fit.
    pub xtol: f64,
    /// Largest cosine between r and a Jacobian column at a stationary point.
    pub gtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-10,
            xtol: 1e-10,
            gtol: 1e-10,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Reduction,
    Step,
    /// No damping makes χ² decrease: stationary to working precision.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Jacobian of the residuals at `x`.
    pub jacobian: DMatrix<f64>,
    pub chi2: f64,
    /// χ² after the start and after every accepted step.
    pub chi2_history: Vec<f64>,
    pub iterations: usize,
    /// ‖Jᵀr‖∞ at `x`.
    pub gradient_norm: f64,
    pub termination: Termination,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn evaluate<F: Fn(&[f64]) -> Result<Vec<f64>>>(f: &F, x: &[f64]) -> Option<Vec<f64>> {
    match f(x) {
        Ok(r) if r.iter().all(|v| v.is_finite()) => Some(r),
        _ => None,
    }
}

/// Central differences with step `steps[j]`; falls back to a one-sided
/// difference when one neighbour lies outside the model's domain.
pub fn jacobian<F: Fn(&[f64]) -> Result<Vec<f64>>>(
    f: &F,
    x: &[f64],
    r0: &[f64],
    steps: &[f64],
) -> Result<DMatrix<f64>> {
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = steps[j];
        probe[j] = x[j] + h;
        let up = evaluate(f, &probe);
        probe[j] = x[j] - h;
        let down = evaluate(f, &probe);
        probe[j] = x[j];
        let column: Vec<f64> = match (up, down) {
            (Some(u), Some(d)) => u.iter().zip(&d).map(|(a, b)| (a - b) / (2.0 * h)).collect(),
            (Some(u), None) => u.iter().zip(r0).map(|(a, b)| (a - b) / h).collect(),
            (None, Some(d)) => r0.iter().zip(&d).map(|(a, b)| (a - b) / h).collect(),
            (None, None) => {
                return Err(Error::FitSetup(format!(
                    "model undefined on both sides of parameter {j} (step {h:e})"
                )))
            }
        };
        jac.set_column(j, &DVector::from_vec(column));
    }
    Ok(jac)
}

/// Minimizes Σ r_i(x)² from `x0`. `f` returns an error (or non-finite
/// residuals) outside its domain; such trial points count as rejected steps.
pub fn minimize<F: Fn(&[f64]) -> Result<Vec<f64>>>(
    f: F,
    x0: &[f64],
    steps: &[f64],
    opts: &LmOptions,
) -> Result<LmReport> {
    let open = vec![(f64::NEG_INFINITY, f64::INFINITY); x0.len()];
    minimize_bounded(f, x0, steps, &open, opts)
}

/// As [`minimize`] inside the box `bounds`. Trial points are projected onto
/// the box, and coordinates held on a bound by the gradient are frozen for
/// the step.
pub fn minimize_bounded<F: Fn(&[f64]) -> Result<Vec<f64>>>(
    f: F,
    x0: &[f64],
    steps: &[f64],
    bounds: &[(f64, f64)],
    opts: &LmOptions,
) -> Result<LmReport> {
    let n = x0.len();
    if steps.len() != n || bounds.len() != n {
        return Err(Error::FitSetup(
            "one difference step and one bound pair per parameter are required".into(),
        ));
    }
    if x0.iter().zip(bounds).any(|(x, (lo, hi))| !(lo <= x && x <= hi)) {
        return Err(Error::FitSetup("initial point lies outside the bounds".into()));
    }
    let mut x = x0.to_vec();
    let mut r = evaluate(&f, &x).ok_or_else(|| Error::FitSetup("model is undefined at the initial guess".into()))?;
    if r.len() < n {
        return Err(Error::FitSetup(format!(
            "{} residuals cannot constrain {n} parameters",
            r.len()
        )));
    }
    let mut chi2 = sum_sq(&r);
    let mut history = vec![chi2];
    let mut lambda = opts.initial_lambda;
    let mut jac = jacobian(&f, &x, &r, steps)?;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let rv = DVector::from_column_slice(&r);
        let grad = jac.tr_mul(&rv);
        // descent would leave the box through these coordinates
        let active: Vec<bool> = (0..n)
            .map(|j| (x[j] <= bounds[j].0 && grad[j] > 0.0) || (x[j] >= bounds[j].1 && grad[j] < 0.0))
            .collect();
        let rnorm = chi2.sqrt();
        let cosine = (0..n)
            .filter(|&j| !active[j])
            .map(|j| {
                let cn = jac.column(j).norm();
                if cn > 0.0 && rnorm > 0.0 {
                    grad[j].abs() / (cn * rnorm)
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        if cosine <= opts.gtol {
            termination = Termination::Gradient;
            break;
        }

        let mut normal = jac.tr_mul(&jac);
        let mut rhs = -&grad;
        for j in (0..n).filter(|&j| active[j]) {
            normal.row_mut(j).fill(0.0);
            normal.column_mut(j).fill(0.0);
            normal[(j, j)] = 1.0;
            rhs[j] = 0.0;
        }
        let dmax = normal.diagonal().max();
        let damp: Vec<f64> = normal
            .diagonal()
            .iter()
            .map(|&d| {
                if d > 0.0 {
                    d
                } else {
                    (1e-12 * dmax).max(f64::MIN_POSITIVE)
                }
            })
            .collect();
        let mut accepted = None;
        let mut growth = 2.0;
        while lambda < 1e20 {
            let mut a = normal.clone();
            for j in 0..n {
                a[(j, j)] += lambda * damp[j];
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = x
                .iter()
                .zip(step.iter())
                .zip(bounds)
                .map(|((a, b), (lo, hi))| (a + b).clamp(*lo, *hi))
                .collect();
            let step = DVector::from_iterator(n, trial.iter().zip(&x).map(|(t, a)| t - a));
            // reduction the linearized model promises for this step
            let predicted = chi2 - (&rv + &jac * &step).norm_squared();
            match evaluate(&f, &trial) {
                Some(rt) if sum_sq(&rt) < chi2 => {
                    let actual = chi2 - sum_sq(&rt);
                    // Nielsen's update: shrink λ when the model predicted the
                    // reduction well, grow it when it did not
                    let rho = if predicted > 0.0 { actual / predicted } else { 0.0 };
                    let near_gauss_newton = lambda < 1.0;
                    lambda = (lambda * (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0)).max(1e-15);
                    accepted = Some((trial, rt, step, predicted, near_gauss_newton));
                    break;
                }
                _ => {
                    lambda *= growth;
                    growth *= 2.0;
                }
            }
        }
        let Some((trial, rt, step, predicted, near_gauss_newton)) = accepted else {
            termination = Termination::Stalled;
            break;
        };
        let new_chi2 = sum_sq(&rt);
        let reduction = (chi2 - new_chi2) / chi2;
        let predicted = predicted / chi2;
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let small_step = step.norm() <= opts.xtol * (xnorm + opts.xtol);
        x = trial;
        r = rt;
        chi2 = new_chi2;
        history.push(chi2);
        jac = jacobian(&f, &x, &r, steps)?;
        if reduction <= opts.ftol && predicted.abs() <= opts.ftol {
            termination = Termination::Reduction;
            break;
        }
        if near_gauss_newton && small_step {
            termination = Termination::Step;
            break;
        }
    }

    let gradient_norm = jac.tr_mul(&DVector::from_column_slice(&r)).amax();
    Ok(LmReport {
        x,
        residuals: r,
        jacobian: jac,
        chi2,
        chi2_history: history,
        iterations,
        gradient_norm,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let rep = minimize(f, &[-1.2, 1.0], &[1e-7, 1e-7], &LmOptions::default()).unwrap();
        assert!(rep.converged());
        assert!(
            (rep.x[0] - 1.0).abs() < 1e-8 && (rep.x[1] - 1.0).abs() < 1e-8,
            "{:?}",
            rep.x
        );
    }

    #[test]
    fn exponential_decay_fit() {
        let t: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-1.3 * t).exp() + 0.2).collect();
        let f = |x: &[f64]| {
            Ok(t.iter()
                .zip(&y)
                .map(|(t, y)| x[0] * (-x[1] * t).exp() + x[2] - y)
                .collect())
        };
        let rep = minimize(f, &[1.0, 0.5, 0.0], &[1e-6; 3], &LmOptions::default()).unwrap();
        assert!((rep.x[0] - 3.0).abs() < 1e-8 && (rep.x[1] - 1.3).abs() < 1e-8 && (rep.x[2] - 0.2).abs() < 1e-8);
        assert!(rep.chi2 < 1e-20);
    }

    #[test]
    fn accepted_steps_never_raise_chi2() {
        let f = |x: &[f64]| {
            Ok(vec![
                x[0].sin() * 4.0 - 1.0,
                x[1] * x[0] - 2.0,
                x[1] - 0.3 * x[0] * x[0],
            ])
        };
        let rep = minimize(f, &[2.5, -1.0], &[1e-6; 2], &LmOptions::default()).unwrap();
        assert!(rep.chi2_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn domain_errors_are_rejected_steps() {
        // 1/x on x > 0; the undamped first step from x = 4 lands on x = 0
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                Err(Error::Domain("non-positive".into()))
            } else {
                Ok(vec![1.0 / x[0] - 0.5, x[1] - 1.0])
            }
        };
        let opts = LmOptions {
            initial_lambda: 1e-12,
            ..Default::default()
        };
        let rep = minimize(f, &[4.0, 0.0], &[1e-6; 2], &opts).unwrap();
        assert!(rep.converged());
        assert!(
            (rep.x[0] - 2.0).abs() < 1e-8 && (rep.x[1] - 1.0).abs() < 1e-8,
            "{:?}",
            rep.x
        );
    }

    #[test]
    fn bounded_optimum_on_the_boundary() {
        let f = |x: &[f64]| Ok(vec![x[0] + 1.0, x[1] - 2.0, 0.1 * x[0] * x[1]]);
        let rep = minimize_bounded(
            f,
            &[1.0, 1.0],
            &[1e-6; 2],
            &[(0.0, 5.0), (f64::NEG_INFINITY, 1.5)],
            &LmOptions::default(),
        )
        .unwrap();
        assert!(rep.converged(), "{:?}", rep.termination);
        assert_eq!(rep.x, vec![0.0, 1.5]);
        assert!(rep.iterations < 20);
    }

    #[test]
    fn max_iterations() {
        let f = |x: &[f64]| Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let opts = LmOptions {
            max_iterations: 2,
            ..Default::default()
        };
        let rep = minimize(f, &[-1.2, 1.0], &[1e-7, 1e-7], &opts).unwrap();
        assert_eq!(rep.termination, Termination::MaxIterations);
    }

    #[test]
    fn underdetermined_is_rejected() {
        let f = |x: &[f64]| Ok(vec![x[0] + x[1]]);
        assert!(minimize(f, &[0.0, 0.0], &[1e-6; 2], &LmOptions::default()).is_err());
    }
}
