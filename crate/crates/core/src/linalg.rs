//! Small dense complex helpers shared by the model, the spectrum and the oracles.

use nalgebra::SMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

pub type C64 = Complex64;

pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Wraps a phase to (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Maximum absolute column sum.
pub fn norm_one<const N: usize>(a: &SMatrix<C64, N, N>) -> f64 {
    (0..N)
        .map(|j| (0..N).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(A) by Taylor series with scaling and squaring.
///
/// Used as the fallback for nearly defective blocks and as an independent
/// reference for the closed-form propagator.
pub fn expm_series<const N: usize>(a: &SMatrix<C64, N, N>) -> SMatrix<C64, N, N> {
    let norm = norm_one(a);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / C64::from(2f64.powi(squarings));

    let mut sum = SMatrix::<C64, N, N>::identity();
    let mut term = SMatrix::<C64, N, N>::identity();
    for k in 1..40 {
        term = term * scaled / C64::from(k as f64);
        sum += term;
        if norm_one(&term) <= 1e-18 * norm_one(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// sinh(z)/z, accurate near zero.
pub(crate) fn sinhc(z: C64) -> C64 {
    if z.norm() < 0.1 {
        let z2 = z * z;
        // Horner form of 1 + z²/3! + z⁴/5! + … + z¹⁰/11!
        let mut acc = C64::from(1.0);
        for k in (1..=5).rev() {
            let denom = ((2 * k) * (2 * k + 1)) as f64;
            acc = C64::from(1.0) + z2 * acc / denom;
        }
        acc
    } else {
        z.sinh() / z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_phase(0.3) - 0.3).abs() < 1e-16);
    }

    #[test]
    fn series_exp_of_diagonal() {
        let a = Matrix2::new(
            C64::new(-1.0, 2.0),
            C64::from(0.0),
            C64::from(0.0),
            C64::new(0.5, -30.0),
        );
        let e = expm_series(&a);
        assert!((e[(0, 0)] - a[(0, 0)].exp()).norm() < 1e-13);
        assert!((e[(1, 1)] - a[(1, 1)].exp()).norm() < 1e-13);
        assert!(e[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn series_exp_of_nilpotent() {
        let a = Matrix2::new(C64::from(0.0), C64::new(3.0, 1.0), C64::from(0.0), C64::from(0.0));
        let e = expm_series(&a);
        assert!((e[(0, 1)] - a[(0, 1)]).norm() < 1e-14);
        assert!((e[(0, 0)] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn sinhc_branches_meet() {
        for z in [C64::new(0.0999, 0.0), C64::new(0.0, 0.0999), C64::new(0.07, 0.07)] {
            let direct = z.sinh() / z;
            assert!((sinhc(z) - direct).norm() < 1e-15);
        }
        assert_eq!(sinhc(C64::from(0.0)), C64::from(1.0));
    }
}
