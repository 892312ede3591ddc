//! Weighted least-squares extraction of model parameters from spectra: the
//! background fit, the coupling fit of a single-frequency time series, the
//! full-spectrum fit, and the joint and shortened variants.

mod lm;
mod params;
mod stages;

pub use lm::{jacobian, minimize, minimize_bounded, LmOptions, LmReport, Termination};
pub use params::{Param, ParamSet, Transform};
pub use stages::{
    background_guess, fit_background, fit_coupling_timeseries, fit_full_spectrum, fit_joint, fit_shortened,
    timeseries_at, CouplingStart,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::constants::TWO_PI;
use crate::error::{Error, Result};
use crate::model::{build_evolution_matrix, propagate_moments, DriveVector, ModelParams, MomentVector};
use crate::spectrum::{effective_relative_phase, total_psd, Spectrum, ThermalMode};
use crate::thermal::{thermal_closed_form, ThermalCorrelators};

/// Which fit function and which parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    /// S^th + S^noise with |g| = 0.
    Background,
    /// Full model at fixed frequencies, moments given at drive-off (t = 0) and
    /// propagated to each t₀.
    CouplingTimeSeries,
    /// Full model on one spectrum, moments given at its t₀.
    Full,
    /// Full model on several spectra at once, moments given at drive-off.
    Joint,
    /// As `Full`, with γ_q free and |g| supplied from a rescaled reference.
    Shortened,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reference {
    None,
    DriveOff,
    WindowStart,
}

impl FitModel {
    pub fn name(self) -> &'static str {
        match self {
            FitModel::Background => "background",
            FitModel::CouplingTimeSeries => "coupling",
            FitModel::Full => "full",
            FitModel::Joint => "joint",
            FitModel::Shortened => "shortened",
        }
    }

    /// Parameters the fit function depends on; n_ion drops out when tied to n_q.
    pub fn parameters(self, tie_n_ion: bool) -> Vec<Param> {
        match self {
            FitModel::Background => vec![Param::NQ, Param::GammaQHz, Param::SNoise, Param::NuQHz],
            _ => Param::ALL
                .iter()
                .copied()
                .filter(|&p| !(tie_n_ion && p == Param::NIon))
                .collect(),
        }
    }

    fn reference(self) -> Reference {
        match self {
            FitModel::Background => Reference::None,
            FitModel::CouplingTimeSeries | FitModel::Joint => Reference::DriveOff,
            FitModel::Full | FitModel::Shortened => Reference::WindowStart,
        }
    }
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            FitModel::Background,
            FitModel::CouplingTimeSeries,
            FitModel::Full,
            FitModel::Joint,
            FitModel::Shortened,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::FitSetup(format!("unknown fit model `{s}`")))
    }
}

/// Per-bin uncertainty used in the residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    /// The spectra's own σ (standard error of the periodogram mean).
    Data,
    /// σ_k² = S_st(S_st + 2S_coh)/n from the model, with S_st the stochastic
    /// part; refreshed at the optimum for `reweight_passes` further fits.
    Model { n_traces: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub lm: LmOptions,
    pub weighting: Weighting,
    pub reweight_passes: usize,
    pub thermal_mode: ThermalMode,
    pub tie_n_ion: bool,
    /// |ρ| above which two parameters are reported as degenerate.
    pub degeneracy_threshold: f64,
    /// Fixed parameters whose would-be correlation with the free ones is
    /// reported.
    pub probe: Vec<Param>,
    /// Starts δ₀ + 2πk/n (k < n) tried when δ is free. A later start wins only
    /// by lowering χ² by more than 1e-6·(1 + χ²).
    pub phase_starts: usize,
    /// Parameters held at the given value even where a stage would fit them.
    pub pin: BTreeMap<Param, f64>,
    /// Starting values that replace a stage's own guesses.
    pub start: BTreeMap<Param, f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lm: LmOptions::default(),
            weighting: Weighting::Data,
            reweight_passes: 2,
            thermal_mode: ThermalMode::FiniteWindow,
            tie_n_ion: true,
            degeneracy_threshold: 0.95,
            probe: Vec::new(),
            phase_starts: 4,
            pin: BTreeMap::new(),
            start: BTreeMap::new(),
        }
    }
}

/// Initial value and bounds of a free parameter, in file units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParam {
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParam {
    /// Default bounds: (0, ∞) for log-space parameters and γ_ion, open otherwise.
    pub fn new(p: Param, initial: f64) -> Self {
        let lower = match (p.transform(), p) {
            (Transform::Log, _) | (_, Param::GammaIonHz) => 0.0,
            _ => f64::NEG_INFINITY,
        };
        Self {
            initial,
            lower,
            upper: f64::INFINITY,
        }
    }

    pub fn bounded(initial: f64, lower: f64, upper: f64) -> Self {
        Self { initial, lower, upper }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    Degenerate {
        a: Param,
        b: Param,
        correlation: f64,
    },
    /// Directions in parameter space the data do not constrain at all.
    Unconstrained {
        params: Vec<Param>,
    },
    /// Correlation a fixed parameter would have with a free one if freed.
    LatentDegeneracy {
        fixed: Param,
        with: Param,
        correlation: f64,
    },
    /// Value to be refined by a later stage.
    Provisional(Param),
    /// Value is an upper limit because a competing parameter is pinned.
    UpperLimit(Param),
    /// The fit function is not expected to converge for such windows.
    LongWindow {
        td: f64,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Degenerate { a, b, correlation } => {
                write!(f, "{a} and {b} are degenerate (correlation {correlation:.4})")
            }
            Diagnostic::Unconstrained { params } => {
                let names: Vec<&str> = params.iter().map(|p| p.name()).collect();
                write!(f, "data do not constrain {}", names.join(", "))
            }
            Diagnostic::LatentDegeneracy {
                fixed,
                with,
                correlation,
            } => write!(
                f,
                "freeing {fixed} would make it degenerate with {with} (correlation {correlation:.4})"
            ),
            Diagnostic::Provisional(p) => write!(f, "{p} is provisional"),
            Diagnostic::UpperLimit(p) => write!(f, "{p} is an upper limit"),
            Diagnostic::LongWindow { td } => write!(f, "t_d = {td} s exceeds 2 s; the fit function may not converge"),
        }
    }
}

/// A weighted least-squares problem over one or more spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    pub model: FitModel,
    pub spectra: Vec<Spectrum>,
    /// Source of everything outside the parameter list (ω_RF, arg g, V₀).
    pub base: ModelParams,
    pub fixed: BTreeMap<Param, f64>,
    pub free: BTreeMap<Param, FreeParam>,
    pub options: FitOptions,
}

/// Fitted values with uncertainties and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: FitModel,
    pub base: ModelParams,
    pub tie_n_ion: bool,
    /// Optimum, fixed parameters included.
    pub values: ParamSet,
    /// Free parameters in covariance order.
    pub free: Vec<Param>,
    /// 1σ of each free parameter; ∞ when unconstrained.
    pub sigma: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub chi2_nu: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub chi2_history: Vec<f64>,
    /// (model − data)/σ.
    pub residuals: Vec<f64>,
    pub diagnostics: Vec<Diagnostic>,
}

impl FitResult {
    pub fn value(&self, p: Param) -> f64 {
        self.values.get(p)
    }

    /// 1σ of a free parameter; `None` for fixed ones.
    pub fn sigma(&self, p: Param) -> Option<f64> {
        self.free.iter().position(|&q| q == p).map(|i| self.sigma[i])
    }

    pub fn is_free(&self, p: Param) -> bool {
        self.free.contains(&p)
    }

    pub fn correlation(&self, a: Param, b: Param) -> Option<f64> {
        let i = self.free.iter().position(|&q| q == a)?;
        let j = self.free.iter().position(|&q| q == b)?;
        let c = self.covariance[(i, j)] / (self.covariance[(i, i)] * self.covariance[(j, j)]).sqrt();
        c.is_finite().then_some(c)
    }

    pub fn model_params(&self) -> ModelParams {
        let mut p = self.values.apply(&self.base, self.tie_n_ion);
        if self.model == FitModel::Background {
            p.g = crate::linalg::C64::from(0.0);
        }
        p
    }

    /// Moments at the model's reference time (drive-off or window start).
    pub fn moments(&self) -> MomentVector {
        self.values.moments()
    }

    /// ERP of the fitted moments; `None` for the background fit.
    pub fn erp(&self) -> Option<f64> {
        if self.model == FitModel::Background {
            return None;
        }
        effective_relative_phase(self.model_params().g, self.value(Param::DeltaRad)).ok()
    }

    /// The fitted model evaluated on the windows of `spectra`.
    pub fn model_for(&self, spectra: &[Spectrum], mode: ThermalMode) -> Result<Vec<Spectrum>> {
        let problem = FitProblem {
            model: self.model,
            spectra: spectra.to_vec(),
            base: self.base,
            fixed: BTreeMap::new(),
            free: BTreeMap::new(),
            options: FitOptions {
                tie_n_ion: self.tie_n_ion,
                thermal_mode: mode,
                ..FitOptions::default()
            },
        };
        problem.evaluate(&self.values)
    }

    pub fn has_degeneracy(&self) -> bool {
        self.diagnostics.iter().any(|d| {
            matches!(
                d,
                Diagnostic::Degenerate { .. } | Diagnostic::Unconstrained { .. } | Diagnostic::LatentDegeneracy { .. }
            )
        })
    }
}

impl FitProblem {
    pub fn new(
        model: FitModel,
        spectra: Vec<Spectrum>,
        base: ModelParams,
        mut fixed: BTreeMap<Param, f64>,
        mut free: BTreeMap<Param, FreeParam>,
        options: FitOptions,
    ) -> Result<Self> {
        let own = model.parameters(options.tie_n_ion);
        for (p, v) in &options.pin {
            if own.contains(p) {
                free.remove(p);
                fixed.insert(*p, *v);
            }
        }
        for (p, v) in &options.start {
            if let Some(fp) = free.get_mut(p) {
                fp.initial = *v;
            }
        }
        if spectra.is_empty() {
            return Err(Error::FitSetup("no spectra to fit".into()));
        }
        if matches!(model, FitModel::Full | FitModel::Shortened) && spectra.len() != 1 {
            return Err(Error::FitSetup(format!(
                "the {model} fit takes exactly one spectrum, got {}",
                spectra.len()
            )));
        }
        if options.weighting == Weighting::Data {
            for s in &spectra {
                let ok = s
                    .sigma
                    .as_ref()
                    .is_some_and(|sig| sig.iter().all(|v| v.is_finite() && *v > 0.0));
                if !ok {
                    return Err(Error::FitSetup(format!(
                        "spectrum at t0 = {} s needs positive finite uncertainties for data weighting",
                        s.window.t0
                    )));
                }
            }
        }
        if let Weighting::Model { n_traces: 0 } = options.weighting {
            return Err(Error::FitSetup("model weighting needs n_traces ≥ 1".into()));
        }
        let wanted = model.parameters(options.tie_n_ion);
        for p in fixed.keys() {
            if free.contains_key(p) {
                return Err(Error::FitSetup(format!("{p} is both fixed and free")));
            }
        }
        for p in &wanted {
            if !fixed.contains_key(p) && !free.contains_key(p) {
                return Err(Error::FitSetup(format!(
                    "{p} is neither fixed nor free for the {model} fit"
                )));
            }
        }
        for p in fixed.keys().chain(free.keys()) {
            if !wanted.contains(p) {
                return Err(Error::FitSetup(format!("{p} is not a parameter of the {model} fit")));
            }
        }
        if free.is_empty() {
            return Err(Error::FitSetup("no free parameters".into()));
        }
        for (p, f) in &free {
            if !(f.initial.is_finite() && f.lower <= f.initial && f.initial <= f.upper) {
                return Err(Error::FitSetup(format!(
                    "initial {p} = {} outside [{}, {}]",
                    f.initial, f.lower, f.upper
                )));
            }
            if p.transform() == Transform::Log && f.initial <= 0.0 {
                return Err(Error::FitSetup(format!(
                    "{p} is fitted in log space and needs a positive start"
                )));
            }
        }
        Ok(Self {
            model,
            spectra,
            base,
            fixed,
            free,
            options,
        })
    }

    pub fn free_params(&self) -> Vec<Param> {
        self.free.keys().copied().collect()
    }

    fn start(&self) -> ParamSet {
        let mut v = ParamSet::from_model(&self.base, &MomentVector::ZERO, 0.0);
        for (p, x) in &self.fixed {
            v.set(*p, *x);
        }
        for (p, f) in &self.free {
            v.set(*p, f.initial);
        }
        v
    }

    fn values_from(&self, free: &[Param], u: &[f64]) -> ParamSet {
        let mut v = self.start();
        for (p, x) in free.iter().zip(u) {
            v.set(*p, p.transform().inverse(*x));
        }
        v
    }

    /// Model spectra (with component breakdown) for the given values.
    pub fn evaluate(&self, values: &ParamSet) -> Result<Vec<Spectrum>> {
        let mut p = values.apply(&self.base, self.options.tie_n_ion);
        if self.model == FitModel::Background {
            p.g = crate::linalg::C64::from(0.0);
        }
        p.validate()?;
        let s_noise = values.get(Param::SNoise);
        let th = if self.model == FitModel::Background {
            ThermalCorrelators::decoupled(p.n_ion, p.n_q)
        } else {
            thermal_closed_form(&p)?
        };
        let e = build_evolution_matrix(&p);
        let reference = values.moments();
        self.spectra
            .iter()
            .map(|s| {
                let at = match self.model.reference() {
                    Reference::None => MomentVector::ZERO,
                    Reference::DriveOff => propagate_moments(&e, &reference, &DriveVector::ZERO, s.window.t0)?,
                    Reference::WindowStart => reference,
                };
                total_psd(&p, &at, &th, s_noise, &s.window, self.options.thermal_mode)
            })
            .collect()
    }

    fn model_sigma(&self, values: &ParamSet, n_traces: usize) -> Result<Vec<Vec<f64>>> {
        let n = n_traces as f64;
        self.evaluate(values)?
            .iter()
            .map(|s| {
                let c = s.components.as_ref().expect("total_psd keeps components");
                c.coherent
                    .iter()
                    .zip(&c.thermal)
                    .map(|(coh, th)| {
                        let st = (th + c.noise).max(0.0);
                        let sig = (st * (st + 2.0 * coh.max(0.0)) / n).sqrt();
                        if sig > 0.0 && sig.is_finite() {
                            Ok(sig)
                        } else {
                            Err(Error::FitSetup("model weighting produced a non-positive σ".into()))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn data_sigma(&self) -> Vec<Vec<f64>> {
        self.spectra
            .iter()
            .map(|s| s.sigma.clone().expect("checked in new"))
            .collect()
    }

    fn residuals(&self, values: &ParamSet, sigma: &[Vec<f64>]) -> Result<Vec<f64>> {
        let model = self.evaluate(values)?;
        let mut r = Vec::with_capacity(sigma.iter().map(Vec::len).sum());
        for ((m, d), s) in model.iter().zip(&self.spectra).zip(sigma) {
            for ((mv, dv), sv) in m.values.iter().zip(&d.values).zip(s) {
                r.push((mv - dv) / sv);
            }
        }
        Ok(r)
    }

    fn steps(free: &[Param], u0: &[f64]) -> Vec<f64> {
        free.iter()
            .zip(u0)
            .map(|(p, u)| match p.transform() {
                Transform::Linear => 1e-6 * u.abs().max(1.0),
                _ => 1e-6,
            })
            .collect()
    }

    pub fn solve(&self) -> Result<FitResult> {
        let free = self.free_params();
        let u0: Vec<f64> = free
            .iter()
            .map(|p| p.transform().forward(self.free[p].initial))
            .collect();
        let steps = Self::steps(&free, &u0);
        let bounds: Vec<(f64, f64)> = free
            .iter()
            .map(|p| {
                let f = self.free[p];
                match p.transform() {
                    Transform::Log => (
                        if f.lower > 0.0 { f.lower.ln() } else { f64::NEG_INFINITY },
                        if f.upper > 0.0 { f.upper.ln() } else { f64::NEG_INFINITY },
                    ),
                    Transform::Linear => (f.lower, f.upper),
                    Transform::Phase => (f64::NEG_INFINITY, f64::INFINITY),
                }
            })
            .collect();
        let (mut sigma, passes) = match self.options.weighting {
            Weighting::Data => (self.data_sigma(), 1),
            Weighting::Model { n_traces } => (
                self.model_sigma(&self.start(), n_traces)?,
                1 + self.options.reweight_passes,
            ),
        };

        let mut u = u0;
        let mut report = None;
        for pass in 0..passes {
            if pass > 0 {
                if let Weighting::Model { n_traces } = self.options.weighting {
                    sigma = self.model_sigma(&self.values_from(&free, &u), n_traces)?;
                }
            }
            let phase = free.iter().position(|&p| p == Param::DeltaRad);
            let starts: Vec<Vec<f64>> = match phase {
                Some(j) if pass == 0 && self.options.phase_starts > 1 => (0..self.options.phase_starts)
                    .map(|k| {
                        let mut x = u.clone();
                        x[j] += TWO_PI * k as f64 / self.options.phase_starts as f64;
                        x
                    })
                    .collect(),
                _ => vec![u.clone()],
            };
            let mut best: Option<LmReport> = None;
            for x0 in &starts {
                let rep = minimize_bounded(
                    |x| self.residuals(&self.values_from(&free, x), &sigma),
                    x0,
                    &steps,
                    &bounds,
                    &self.options.lm,
                )?;
                best = match best {
                    None => Some(rep),
                    Some(b) => {
                        let better = match (rep.converged(), b.converged()) {
                            (true, false) => true,
                            (false, true) => false,
                            _ => rep.chi2 < b.chi2 - 1e-6 * (1.0 + b.chi2),
                        };
                        Some(if better { rep } else { b })
                    }
                };
            }
            let rep = best.expect("at least one start");
            if !rep.converged() {
                let v = self.values_from(&free, &rep.x);
                let (_, _, diagnostics) = self.covariance(&free, &rep.x, &rep.jacobian);
                let pairs: Vec<String> = diagnostics.iter().map(ToString::to_string).collect();
                if !pairs.is_empty() {
                    return Err(Error::DegenerateFit(format!(
                        "no convergence after {} iterations (χ² = {:e}) along a degenerate direction: {}",
                        rep.iterations,
                        rep.chi2,
                        pairs.join("; ")
                    )));
                }
                return Err(Error::NonConvergence {
                    iterations: rep.iterations,
                    chi2: rep.chi2,
                    last: free.iter().map(|p| (p.name().to_string(), v.get(*p))).collect(),
                });
            }
            u = rep.x.clone();
            report = Some(rep);
        }
        let rep = report.expect("at least one pass");
        let values = self.values_from(&free, &rep.x);

        for p in &free {
            let f = self.free[p];
            let v = values.get(*p);
            if v < f.lower || v > f.upper {
                return Err(Error::BoundsViolation {
                    name: p.name().into(),
                    value: v,
                    lower: f.lower,
                    upper: f.upper,
                });
            }
        }

        let n = free.len();
        let (covariance, sigma_out, mut diagnostics) = self.covariance(&free, &rep.x, &rep.jacobian);
        for q in &self.options.probe {
            if self.fixed.contains_key(q) {
                diagnostics.extend(self.probe(*q, &free, &rep.x, &sigma, &steps)?);
            }
        }
        if let Some(td) = self.spectra.iter().map(|s| s.window.td).find(|&td| td > 2.0) {
            diagnostics.push(Diagnostic::LongWindow { td });
        }

        let n_points = rep.residuals.len();
        let chi2_nu = if n_points > n {
            rep.chi2 / (n_points - n) as f64
        } else {
            f64::NAN
        };
        Ok(FitResult {
            model: self.model,
            base: self.base,
            tie_n_ion: self.options.tie_n_ion,
            values,
            free,
            sigma: sigma_out,
            covariance,
            chi2: rep.chi2,
            chi2_nu,
            n_points,
            iterations: rep.iterations,
            gradient_norm: rep.gradient_norm,
            termination: rep.termination,
            chi2_history: rep.chi2_history,
            residuals: rep.residuals,
            diagnostics,
        })
    }

    /// Covariance in file units, 1σ (∞ along null directions), and the
    /// unconstrained / degenerate diagnostics at optimizer point `u`.
    fn covariance(&self, free: &[Param], u: &[f64], jac: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, Vec<Diagnostic>) {
        let n = free.len();
        let (cov_u, null) = pseudo_inverse_normal(jac);
        let scale: Vec<f64> = free.iter().zip(u).map(|(p, u)| p.transform().derivative(*u)).collect();
        let mut covariance = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                covariance[(i, j)] = scale[i] * cov_u[(i, j)] * scale[j];
            }
        }
        let mut unconstrained = vec![false; n];
        for v in &null {
            for j in 0..n {
                if v[j].abs() > 1e-3 {
                    unconstrained[j] = true;
                }
            }
        }
        let sigma: Vec<f64> = (0..n)
            .map(|j| {
                if unconstrained[j] {
                    f64::INFINITY
                } else {
                    covariance[(j, j)].max(0.0).sqrt()
                }
            })
            .collect();
        for j in 0..n {
            if unconstrained[j] {
                for i in 0..n {
                    covariance[(i, j)] = f64::INFINITY;
                    covariance[(j, i)] = f64::INFINITY;
                }
            }
        }

        let mut diagnostics = Vec::new();
        let lost: Vec<Param> = free
            .iter()
            .zip(&unconstrained)
            .filter(|(_, &u)| u)
            .map(|(p, _)| *p)
            .collect();
        if !lost.is_empty() {
            diagnostics.push(Diagnostic::Unconstrained { params: lost });
        }
        for i in 0..n {
            for j in i + 1..n {
                if unconstrained[i] || unconstrained[j] {
                    continue;
                }
                let rho = covariance[(i, j)] / (sigma[i] * sigma[j]);
                if rho.abs() > self.options.degeneracy_threshold {
                    diagnostics.push(Diagnostic::Degenerate {
                        a: free[i],
                        b: free[j],
                        correlation: rho,
                    });
                }
            }
        }
        (covariance, sigma, diagnostics)
    }

    /// Correlations a fixed parameter would acquire if it were freed at its
    /// current value.
    fn probe(&self, q: Param, free: &[Param], u: &[f64], sigma: &[Vec<f64>], steps: &[f64]) -> Result<Vec<Diagnostic>> {
        let mut ext: Vec<Param> = free.to_vec();
        ext.push(q);
        let mut x = u.to_vec();
        let q0 = q.transform().forward(self.fixed[&q]);
        x.push(q0);
        let mut st = steps.to_vec();
        st.push(match q.transform() {
            Transform::Linear => 1e-6 * q0.abs().max(1.0),
            _ => 1e-6,
        });
        let f = |x: &[f64]| {
            let mut v = self.start();
            for (p, xv) in ext.iter().zip(x) {
                v.set(*p, p.transform().inverse(*xv));
            }
            self.residuals(&v, sigma)
        };
        let r0 = f(&x)?;
        let jac = jacobian(&f, &x, &r0, &st)?;
        let (cov, null) = pseudo_inverse_normal(&jac);
        let k = free.len();
        let mut out = Vec::new();
        for (j, p) in free.iter().enumerate() {
            let in_null = null.iter().any(|v| v[j].abs() > 1e-3 && v[k].abs() > 1e-3);
            let rho = if in_null {
                1.0
            } else {
                cov[(j, k)] / (cov[(j, j)] * cov[(k, k)]).sqrt()
            };
            if rho.abs() > self.options.degeneracy_threshold {
                out.push(Diagnostic::LatentDegeneracy {
                    fixed: q,
                    with: *p,
                    correlation: rho,
                });
            }
        }
        Ok(out)
    }

    /// Model spectra at a fit's optimum.
    pub fn model_spectra(&self, result: &FitResult) -> Result<Vec<Spectrum>> {
        self.evaluate(&result.values)
    }
}

/// (JᵀJ)⁺ from the SVD of J, and the right singular vectors dropped as null.
fn pseudo_inverse_normal(jac: &DMatrix<f64>) -> (DMatrix<f64>, Vec<Vec<f64>>) {
    let n = jac.ncols();
    let svd = jac.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let mut cov = DMatrix::zeros(n, n);
    let mut null = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(i);
        if !(s > 1e-10 * smax) {
            null.push(v.iter().copied().collect());
            continue;
        }
        cov += v.transpose() * v / (s * s);
    }
    (cov, null)
}

/// χ² = Σ((S_model − S_data)/σ)² and χ²_ν = χ²/(n − n_free).
pub fn chi_squared(model: &Spectrum, data: &Spectrum, n_free: usize) -> Result<(f64, f64)> {
    if model.len() != data.len() || model.window.t0 != data.window.t0 || model.window.td != data.window.td {
        return Err(Error::GridMismatch(format!(
            "model has {} bins at t0 = {} s, data {} bins at t0 = {} s",
            model.len(),
            model.window.t0,
            data.len(),
            data.window.t0
        )));
    }
    for (a, b) in model.window.offsets.iter().zip(&data.window.offsets) {
        if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1.0) {
            return Err(Error::GridMismatch(format!("offset {a} rad/s against {b} rad/s")));
        }
    }
    let sigma = data
        .sigma
        .as_ref()
        .ok_or_else(|| Error::FitSetup("data spectrum carries no uncertainties".into()))?;
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::FitSetup("uncertainties must be positive".into()));
    }
    let chi2: f64 = model
        .values
        .iter()
        .zip(&data.values)
        .zip(sigma)
        .map(|((m, d), s)| ((m - d) / s).powi(2))
        .sum();
    if data.len() <= n_free {
        return Err(Error::FitSetup(format!(
            "{} points cannot support {n_free} free parameters",
            data.len()
        )));
    }
    Ok((chi2, chi2 / (data.len() - n_free) as f64))
}
