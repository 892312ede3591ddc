//! The two-oscillator model in the frame rotating at the drive frequency.
//!
//! The moment vector is ordered (a, b, a†, b†) with `a` the ion cloud's
//! modified-cyclotron mode and `b` the quartz mode. First moments obey
//! d⟨A⟩/dt = −M⟨A⟩ + F with M = diag(m, m*).

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::linalg::{expm_series, sinhc, wrap_phase, C64, I};
use crate::thermal::occupation_from_temperature;
use crate::trap::QuartzConfig;

/// Physical constants of the coupled system.
///
/// Absolute frequencies sit near 2π·2.7 MHz while everything of interest
/// happens within a few hundred hertz of the drive, so the drive frequency is
/// stored together with the two detunings instead of three absolute values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Drive (rotating-frame) frequency ω_RF (rad/s).
    pub omega_rf: f64,
    /// ω̃_ion = ω_ion − ω_RF (rad/s).
    pub detuning_ion: f64,
    /// ω̃_q = ω_q − ω_RF (rad/s).
    pub detuning_q: f64,
    /// Ion damping γ_ion (rad/s), ≥ 0.
    pub gamma_ion: f64,
    /// Quartz damping γ_q (rad/s), > 0.
    pub gamma_q: f64,
    /// Coupling constant g (rad/s).
    pub g: C64,
    /// Bath occupation of the ion mode.
    pub n_ion: f64,
    /// Bath occupation of the quartz mode.
    pub n_q: f64,
    /// Effective drive amplitude on the ions, F/(ħ√2) (rad/s).
    pub f_ion: f64,
    /// Effective drive amplitude on the quartz (rad/s).
    pub f_q: f64,
    pub phi_ion: f64,
    pub phi_q: f64,
    /// Voltage scale of the quartz quadrature (V).
    pub v0: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            omega_rf: 0.0,
            detuning_ion: 0.0,
            detuning_q: 0.0,
            gamma_ion: 0.0,
            gamma_q: 1.0,
            g: C64::from(0.0),
            n_ion: 0.0,
            n_q: 0.0,
            f_ion: 0.0,
            f_q: 0.0,
            phi_ion: 0.0,
            phi_q: 0.0,
            v0: 1.0,
        }
    }
}

impl ModelParams {
    /// Builds parameters from absolute lab-frame frequencies.
    pub fn from_absolute(omega_ion: f64, omega_q: f64, omega_rf: f64) -> Self {
        Self {
            omega_rf,
            detuning_ion: omega_ion - omega_rf,
            detuning_q: omega_q - omega_rf,
            ..Self::default()
        }
    }

    /// Quartz damping and occupation taken from a resonator description. The
    /// quartz detuning is set from its resonance relative to `omega_rf`.
    pub fn with_quartz(mut self, quartz: &QuartzConfig) -> Result<Self> {
        quartz.validate()?;
        self.gamma_q = quartz.damping_rate();
        self.detuning_q = quartz.resonant_freq - self.omega_rf;
        self.n_q = occupation_from_temperature(quartz.resonant_freq, quartz.temperature)?.exact;
        self.v0 = quartz.voltage_scale;
        Ok(self)
    }

    pub fn omega_ion(&self) -> f64 {
        self.omega_rf + self.detuning_ion
    }

    pub fn omega_q(&self) -> f64 {
        self.omega_rf + self.detuning_q
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("omega_rf", self.omega_rf),
            ("detuning_ion", self.detuning_ion),
            ("detuning_q", self.detuning_q),
            ("f_ion", self.f_ion),
            ("f_q", self.f_q),
            ("phi_ion", self.phi_ion),
            ("phi_q", self.phi_q),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if !(self.gamma_q.is_finite() && self.gamma_q > 0.0) {
            return Err(Error::param("gamma_q", format!("must be > 0, got {}", self.gamma_q)));
        }
        for (name, v) in [("gamma_ion", self.gamma_ion), ("n_ion", self.n_ion), ("n_q", self.n_q)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("must be ≥ 0, got {v}")));
            }
        }
        if !(self.g.re.is_finite() && self.g.im.is_finite()) {
            return Err(Error::param("g", "must be finite"));
        }
        if !(self.v0.is_finite() && self.v0 > 0.0) {
            return Err(Error::param("v0", "must be > 0"));
        }
        Ok(())
    }
}

/// Expectation values ⟨a⟩, ⟨b⟩, ⟨a†⟩, ⟨b†⟩ at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentVector {
    pub a: C64,
    pub b: C64,
    pub a_dag: C64,
    pub b_dag: C64,
}

impl MomentVector {
    pub const ZERO: Self = Self {
        a: C64::new(0.0, 0.0),
        b: C64::new(0.0, 0.0),
        a_dag: C64::new(0.0, 0.0),
        b_dag: C64::new(0.0, 0.0),
    };

    /// A physical moment vector with conjugate-paired entries.
    pub fn physical(a: C64, b: C64) -> Self {
        Self {
            a,
            b,
            a_dag: a.conj(),
            b_dag: b.conj(),
        }
    }

    pub fn from_polar(abs_a: f64, theta_a: f64, abs_b: f64, theta_b: f64) -> Self {
        Self::physical(C64::from_polar(abs_a, theta_a), C64::from_polar(abs_b, theta_b))
    }

    pub fn to_vector(&self) -> Vector4<C64> {
        Vector4::new(self.a, self.b, self.a_dag, self.b_dag)
    }

    pub fn from_vector(v: &Vector4<C64>) -> Self {
        Self {
            a: v[0],
            b: v[1],
            a_dag: v[2],
            b_dag: v[3],
        }
    }

    pub fn is_physical(&self) -> bool {
        self.a_dag == self.a.conj() && self.b_dag == self.b.conj()
    }

    pub fn abs_a(&self) -> f64 {
        self.a.norm()
    }

    pub fn theta_a(&self) -> f64 {
        self.a.arg()
    }

    pub fn abs_b(&self) -> f64 {
        self.b.norm()
    }

    pub fn theta_b(&self) -> f64 {
        self.b.arg()
    }

    /// δ = θ_a − θ_b wrapped to (−π, π].
    pub fn relative_phase(&self) -> f64 {
        wrap_phase(self.theta_a() - self.theta_b())
    }

    /// Multiplies ⟨a⟩ and ⟨b⟩ by e^{iφ} (and their conjugates accordingly).
    pub fn rotated(&self, phi: f64) -> Self {
        let r = C64::from_polar(1.0, phi);
        Self {
            a: self.a * r,
            b: self.b * r,
            a_dag: self.a_dag * r.conj(),
            b_dag: self.b_dag * r.conj(),
        }
    }
}

/// Constant force term of the rotating-frame equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveVector {
    pub entries: [C64; 4],
}

impl DriveVector {
    pub const ZERO: Self = Self {
        entries: [C64::new(0.0, 0.0); 4],
    };

    pub fn from_params(p: &ModelParams) -> Self {
        let fi = C64::from_polar(p.f_ion, -p.phi_ion);
        let fq = C64::from_polar(p.f_q, -p.phi_q);
        Self {
            entries: [fi, fq, fi.conj(), fq.conj()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|z| *z == C64::from(0.0))
    }

    pub fn to_vector(&self) -> Vector4<C64> {
        Vector4::from_column_slice(&self.entries)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// How a propagator block was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpMethod {
    /// Trace/discriminant closed form of the 2×2 exponential.
    ClosedForm,
    /// Scaling-and-squaring series, used when the block is nearly defective.
    Series,
}

/// Drift matrix M = diag(m, m*) with the spectral data of m cached.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionMatrix {
    m: Matrix2<C64>,
    full: Matrix4<C64>,
    /// mean of the eigenvalues
    mu: C64,
    /// half the eigenvalue difference
    kappa: C64,
    eigenvalues: [C64; 2],
    eigenvectors: Option<Matrix2<C64>>,
    near_defective: bool,
}

/// Relative discriminant size below which m is treated as defective.
const DEFECTIVE_THRESHOLD: f64 = 1e-12;

pub fn build_evolution_matrix(p: &ModelParams) -> EvolutionMatrix {
    EvolutionMatrix::new(p)
}

impl EvolutionMatrix {
    pub fn new(p: &ModelParams) -> Self {
        let m = Matrix2::new(
            C64::new(0.5 * p.gamma_ion, p.detuning_ion),
            I * p.g.conj(),
            I * p.g,
            C64::new(0.5 * p.gamma_q, p.detuning_q),
        );
        Self::from_block(m)
    }

    /// Builds the drift matrix from an arbitrary upper block m.
    pub fn from_block(m: Matrix2<C64>) -> Self {
        let mut full = Matrix4::zeros();
        full.fixed_view_mut::<2, 2>(0, 0).copy_from(&m);
        full.fixed_view_mut::<2, 2>(2, 2).copy_from(&m.map(|z| z.conj()));

        let (p, q, r, s) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let mu = 0.5 * (p + s);
        let half_diff = 0.5 * (p - s);
        let disc = half_diff * half_diff + q * r;
        let root = disc.sqrt();
        let scale = m.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let near_defective = disc.norm() <= DEFECTIVE_THRESHOLD * scale;
        // larger-modulus root first, the other from the determinant to avoid cancellation
        let big = if (mu + root).norm() >= (mu - root).norm() {
            mu + root
        } else {
            mu - root
        };
        let det = p * s - q * r;
        let small = if big.norm() > 0.0 { det / big } else { C64::from(0.0) };
        let eigenvalues = [big, small];
        let kappa = 0.5 * (big - small);
        let mu = 0.5 * (big + small);

        let eigenvectors = if near_defective {
            None
        } else {
            let column = |lambda: C64| {
                // (m − λ)v = 0: take whichever row gives the better-conditioned vector
                let v1 = Vector2::new(q, lambda - p);
                let v2 = Vector2::new(lambda - s, r);
                let v = if v1.norm() >= v2.norm() { v1 } else { v2 };
                if v.norm() == 0.0 {
                    // m is already diagonal in this direction
                    if (lambda - p).norm() <= (lambda - s).norm() {
                        Vector2::new(C64::from(1.0), C64::from(0.0))
                    } else {
                        Vector2::new(C64::from(0.0), C64::from(1.0))
                    }
                } else {
                    v.unscale(v.norm())
                }
            };
            let mut v = Matrix2::zeros();
            v.set_column(0, &column(eigenvalues[0]));
            v.set_column(1, &column(eigenvalues[1]));
            Some(v)
        };

        Self {
            m,
            full,
            mu,
            kappa,
            eigenvalues,
            eigenvectors,
            near_defective,
        }
    }

    /// The 2×2 block m.
    pub fn block(&self) -> &Matrix2<C64> {
        &self.m
    }

    /// The full 4×4 drift matrix M.
    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.full
    }

    /// Eigenvalues of m, larger modulus first.
    pub fn eigenvalues(&self) -> [C64; 2] {
        self.eigenvalues
    }

    /// Unit-norm eigenvectors of m as columns; `None` when m is nearly defective.
    pub fn eigenvectors(&self) -> Option<&Matrix2<C64>> {
        self.eigenvectors.as_ref()
    }

    pub fn is_near_defective(&self) -> bool {
        self.near_defective
    }

    /// exp(−m·t) for the upper block.
    pub fn block_exp(&self, t: f64) -> (Matrix2<C64>, ExpMethod) {
        if t == 0.0 {
            return (Matrix2::identity(), ExpMethod::ClosedForm);
        }
        if self.near_defective {
            return (expm_series(&(self.m * C64::from(-t))), ExpMethod::Series);
        }
        let [big, small] = self.eigenvalues;
        let kt = self.kappa * t;
        if kt.norm() < 0.1 {
            // e^{−μt}[cosh(κt) − (m − μ) sinh(κt)/κ]
            let decay = (-self.mu * t).exp();
            let shifted = self.m - Matrix2::identity() * self.mu;
            let cosh_part = decay * kt.cosh();
            let sinh_part = decay * t * sinhc(kt);
            return (
                Matrix2::identity() * cosh_part - shifted * sinh_part,
                ExpMethod::ClosedForm,
            );
        }
        // Sylvester interpolation on the two eigenvalues
        let id = Matrix2::<C64>::identity();
        let e_big = (-big * t).exp();
        let e_small = (-small * t).exp();
        let u = ((self.m - id * big) * e_small - (self.m - id * small) * e_big) / (small - big);
        (u, ExpMethod::ClosedForm)
    }
}

/// U(t) = exp(−M·t) together with the evaluation route.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub u: Matrix4<C64>,
    pub method: ExpMethod,
}

impl Propagator {
    pub fn upper(&self) -> Matrix2<C64> {
        self.u.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

pub fn propagator(e: &EvolutionMatrix, t: f64) -> Result<Propagator> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "propagation time must be finite and ≥ 0, got {t}"
        )));
    }
    let (block, method) = e.block_exp(t);
    let mut u = Matrix4::zeros();
    u.fixed_view_mut::<2, 2>(0, 0).copy_from(&block);
    u.fixed_view_mut::<2, 2>(2, 2).copy_from(&block.map(|z| z.conj()));
    Ok(Propagator { u, method })
}

fn upper_pair(v: &MomentVector) -> Vector2<C64> {
    Vector2::new(v.a, v.b)
}

fn lower_pair(v: &MomentVector) -> Vector2<C64> {
    Vector2::new(v.a_dag, v.b_dag)
}

fn from_pairs(upper: Vector2<C64>, lower: Vector2<C64>) -> MomentVector {
    MomentVector {
        a: upper[0],
        b: upper[1],
        a_dag: lower[0],
        b_dag: lower[1],
    }
}

fn solve_block(m: &Matrix2<C64>, rhs: Vector2<C64>) -> Vector2<C64> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Vector2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    )
}

/// A_F = M⁻¹F, the unique fixed point of d⟨A⟩/dt = −M⟨A⟩ + F.
pub fn driven_steady_state(e: &EvolutionMatrix, f: &DriveVector) -> Result<MomentVector> {
    if f.is_zero() {
        return Ok(MomentVector::ZERO);
    }
    let m = e.block();
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let scale = m.iter().map(|z| z.norm_sqr()).sum::<f64>();
    if det.norm() <= 1e-14 * scale || scale == 0.0 {
        let mode = if m[(0, 0)].norm() <= 1e-14 * scale.sqrt() && m[(0, 1)].norm() <= 1e-14 * scale.sqrt() {
            "the ion mode"
        } else {
            "a normal mode of the coupled system"
        };
        return Err(Error::SingularDrift { mode });
    }
    let mc = m.map(|z| z.conj());
    let fu = Vector2::new(f.entries[0], f.entries[1]);
    let fl = Vector2::new(f.entries[2], f.entries[3]);
    Ok(from_pairs(solve_block(m, fu), solve_block(&mc, fl)))
}

/// ⟨A(t)⟩ = U(t)⟨A(0)⟩ + (1 − U(t))A_F.
pub fn propagate_moments(e: &EvolutionMatrix, a0: &MomentVector, f: &DriveVector, t: f64) -> Result<MomentVector> {
    let p = propagator(e, t)?;
    let block = p.upper();
    let block_c = block.map(|z| z.conj());
    let mut upper = block * upper_pair(a0);
    let mut lower = block_c * lower_pair(a0);
    if !f.is_zero() {
        let af = driven_steady_state(e, f)?;
        let id = Matrix2::<C64>::identity();
        upper += (id - block) * upper_pair(&af);
        lower += (id - block_c) * lower_pair(&af);
    }
    Ok(from_pairs(upper, lower))
}

/// Real noise-injection matrix C of the stationary equation M T + T Mᵀ = C,
/// with T_mn = ⟨A_m A_n⟩.
pub fn noise_matrix(p: &ModelParams) -> Matrix4<f64> {
    let mut c = Matrix4::zeros();
    c[(0, 2)] = p.gamma_ion * (p.n_ion + 1.0);
    c[(1, 3)] = p.gamma_q * (p.n_q + 1.0);
    c[(2, 0)] = p.gamma_ion * p.n_ion;
    c[(3, 1)] = p.gamma_q * p.n_q;
    c
}
