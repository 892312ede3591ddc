//! Dormand–Prince 5(4) with embedded error control on complex state vectors.

use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeTolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl OdeTolerance {
    pub fn new(tol: f64) -> Self {
        Self { rtol: tol, atol: tol }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// difference between the 5th- and 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates y' = f(t, y) from `t_start` to `t_end`, returning y(t_end) and
/// the number of accepted steps.
pub fn integrate<F>(mut f: F, t_start: f64, y0: &[C64], t_end: f64, tol: OdeTolerance) -> Result<(Vec<C64>, usize)>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t_end == t_start {
        return Ok((y, 0));
    }
    if !(t_end > t_start) {
        return Err(Error::Domain(format!(
            "integration must run forward, got [{t_start}, {t_end}]"
        )));
    }
    let span = t_end - t_start;
    let mut k: Vec<Vec<C64>> = vec![vec![C64::default(); n]; 7];
    let mut tmp = vec![C64::default(); n];
    let mut y_new = vec![C64::default(); n];

    let mut t = t_start;
    f(t, &y, &mut k[0]);
    let mut h = initial_step(&y, &k[0], span, tol);
    let mut accepted = 0;

    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        if h <= 1e-14 * t.abs().max(span) {
            return Err(Error::StepSizeUnderflow { t, h });
        }

        let stage = |coeffs: &[(usize, f64)], k: &[Vec<C64>], y: &[C64], out: &mut [C64]| {
            for i in 0..y.len() {
                let mut acc = y[i];
                for &(j, a) in coeffs {
                    acc += k[j][i] * (a * h);
                }
                out[i] = acc;
            }
        };

        stage(&[(0, A21)], &k, &y, &mut tmp);
        f(t + C2 * h, &tmp, &mut k[1]);
        stage(&[(0, A31), (1, A32)], &k, &y, &mut tmp);
        f(t + C3 * h, &tmp, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], &k, &y, &mut tmp);
        f(t + C4 * h, &tmp, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &k, &y, &mut tmp);
        f(t + C5 * h, &tmp, &mut k[4]);
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &k, &y, &mut tmp);
        f(t + h, &tmp, &mut k[5]);
        stage(&[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)], &k, &y, &mut y_new);
        f(t + h, &y_new, &mut k[6]);

        let mut err = 0.0f64;
        for i in 0..n {
            let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7) * h;
            let sc = tol.atol + tol.rtol * y[i].norm().max(y_new[i].norm());
            err = err.max(e.norm() / sc);
        }

        if err <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            accepted += 1;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    Ok((y, accepted))
}

fn initial_step(y: &[C64], dy: &[C64], span: f64, tol: OdeTolerance) -> f64 {
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for (yi, di) in y.iter().zip(dy) {
        let sc = tol.atol + tol.rtol * yi.norm();
        d0 = d0.max(yi.norm() / sc);
        d1 = d1.max(di.norm() / sc);
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span
    } else {
        0.01 * d0 / d1
    };
    h.min(span).max(1e-12 * span)
}
