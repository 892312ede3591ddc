//! Stationary second moments: closed forms and a dense Lyapunov solve.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};

use crate::constants::{BOLTZMANN, HBAR};
use crate::error::{Error, Result};
use crate::linalg::{C64, I};
use crate::model::{EvolutionMatrix, ModelParams};

/// Stationary correlation matrix T with T_mn = ⟨A_m A_n⟩ for A = (a, b, a†, b†).
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalCorrelators {
    pub t: Matrix4<C64>,
}

impl ThermalCorrelators {
    /// ⟨a†a⟩
    pub fn a_dag_a(&self) -> f64 {
        self.t[(2, 0)].re
    }

    /// ⟨b†b⟩
    pub fn b_dag_b(&self) -> f64 {
        self.t[(3, 1)].re
    }

    /// ⟨a†b⟩
    pub fn a_dag_b(&self) -> C64 {
        self.t[(2, 1)]
    }

    /// ⟨b†a⟩
    pub fn b_dag_a(&self) -> C64 {
        self.t[(3, 0)]
    }

    /// Block t₋† = [[⟨aa†⟩, ⟨ab†⟩], [⟨ba†⟩, ⟨bb†⟩]].
    pub fn t_minus_dag(&self) -> Matrix2<C64> {
        self.t.fixed_view::<2, 2>(0, 2).into_owned()
    }

    /// Block t†₋ = [[⟨a†a⟩, ⟨a†b⟩], [⟨b†a⟩, ⟨b†b⟩]].
    pub fn t_dag_minus(&self) -> Matrix2<C64> {
        self.t.fixed_view::<2, 2>(2, 0).into_owned()
    }

    /// ‖M T + T Mᵀ − C‖ in the Frobenius norm.
    pub fn lyapunov_residual(&self, e: &EvolutionMatrix, c: &Matrix4<f64>) -> f64 {
        let m = e.matrix();
        (m * self.t + self.t * m.transpose() - c.map(C64::from)).norm()
    }

    /// Uncoupled modes at their bath occupations.
    pub fn decoupled(n_ion: f64, n_q: f64) -> Self {
        let t_dag_minus = Matrix2::new(C64::from(n_ion), C64::from(0.0), C64::from(0.0), C64::from(n_q));
        Self::from_blocks(t_dag_minus + Matrix2::identity(), t_dag_minus)
    }

    fn from_blocks(t_minus_dag: Matrix2<C64>, t_dag_minus: Matrix2<C64>) -> Self {
        let mut t = Matrix4::zeros();
        t.fixed_view_mut::<2, 2>(0, 2).copy_from(&t_minus_dag);
        t.fixed_view_mut::<2, 2>(2, 0).copy_from(&t_dag_minus);
        Self { t }
    }
}

/// Closed-form stationary correlators.
///
/// With Γ₊ = γ_ion + γ_q, Ω₋ = ω̃_ion − ω̃_q, Δn = n_ion − n_q and
/// D = 4|g|²Γ₊² + γ_ion γ_q (Γ₊² + 4Ω₋²):
///
/// ⟨b†b⟩ = n_q + 4|g|² Δn γ_ion Γ₊ / D
/// ⟨a†a⟩ = n_ion − 4|g|² Δn γ_q Γ₊ / D
/// ⟨a†b⟩ = −2i g γ_ion γ_q Δn (Γ₊ + 2iΩ₋) / D
pub fn thermal_closed_form(p: &ModelParams) -> Result<ThermalCorrelators> {
    p.validate()?;
    let gp = p.gamma_ion + p.gamma_q;
    let om = p.detuning_ion - p.detuning_q;
    let g2 = p.g.norm_sqr();
    let den = 4.0 * g2 * gp * gp + p.gamma_ion * p.gamma_q * (gp * gp + 4.0 * om * om);
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator(format!(
            "4|g|²Γ₊² + γ_ion·γ_q(Γ₊² + 4Ω₋²) = {den:e}; with γ_ion = 0 and g = 0 the ion mode never thermalizes"
        )));
    }
    let dn = p.n_ion - p.n_q;
    let bb = p.n_q + 4.0 * g2 * dn * p.gamma_ion * gp / den;
    let aa = p.n_ion - 4.0 * g2 * dn * p.gamma_q * gp / den;
    let ab = -2.0 * I * p.g * (p.gamma_ion * p.gamma_q * dn) * C64::new(gp, 2.0 * om) / den;

    let t_dag_minus = Matrix2::new(C64::from(aa), ab, ab.conj(), C64::from(bb));
    let t_minus_dag = t_dag_minus.transpose() + Matrix2::identity();
    Ok(ThermalCorrelators::from_blocks(t_minus_dag, t_dag_minus))
}

/// Solves M T + T Mᵀ = C as a dense 16×16 linear system.
pub fn lyapunov_solve(e: &EvolutionMatrix, c: &Matrix4<f64>) -> Result<ThermalCorrelators> {
    let m = e.matrix();
    let n = 4;
    // column-major vec: vec(M T) = (1 ⊗ M) vec T, vec(T Mᵀ) = (M ⊗ 1) vec T
    let mut op = DMatrix::<C64>::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let row = i + n * j;
            for k in 0..n {
                op[(row, k + n * j)] += m[(i, k)];
                op[(row, i + n * k)] += m[(j, k)];
            }
        }
    }
    let rhs = DVector::<C64>::from_iterator(n * n, c.iter().map(|&x| C64::from(x)));
    let lu = op.lu();
    let scale = lu.u().diagonal().iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let smallest = lu.u().diagonal().iter().fold(f64::INFINITY, |a, z| a.min(z.norm()));
    if !(smallest > 1e-14 * scale) {
        return Err(Error::SingularLyapunov(format!(
            "pivot ratio {:e}; an undamped mode has no stationary state",
            smallest / scale
        )));
    }
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularLyapunov("LU solve failed".into()))?;
    Ok(ThermalCorrelators {
        t: Matrix4::from_column_slice(x.as_slice()),
    })
}

/// Bose–Einstein occupation and its high-temperature approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupation {
    /// 1/(e^{ħω/k_BT} − 1)
    pub exact: f64,
    /// k_BT/(ħω)
    pub high_temperature: f64,
    /// |high_temperature − exact| / exact
    pub relative_difference: f64,
}

pub fn occupation_from_temperature(omega: f64, temperature: f64) -> Result<Occupation> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::param("omega", format!("must be > 0, got {omega}")));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param("temperature", format!("must be > 0, got {temperature}")));
    }
    let x = HBAR * omega / (BOLTZMANN * temperature);
    let exact = 1.0 / x.exp_m1();
    let high_temperature = 1.0 / x;
    let relative_difference = if exact > 0.0 {
        (high_temperature - exact).abs() / exact
    } else {
        f64::INFINITY
    };
    Ok(Occupation {
        exact,
        high_temperature,
        relative_difference,
    })
}
