use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::fitting::{FitModel, FitResult, Param, ParamSet, Termination};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub model: String,
    /// Window starts of the fitted spectra (s).
    pub t0_s: Vec<f64>,
    pub termination: String,
    pub chi2: f64,
    pub chi2_nu: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub tie_n_ion: bool,
    pub free: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erp_deg: Option<f64>,
}

/// One fit as written to disk: values in file units (Hz offsets, V²_RMS),
/// 1σ of the free parameters, their correlation matrix and the diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub fit: FitSummary,
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub uncertainties: BTreeMap<String, f64>,
    #[serde(default)]
    pub correlations: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Gradient => "gradient",
        Termination::Reduction => "reduction",
        Termination::Step => "step",
        Termination::Stalled => "stalled",
        Termination::MaxIterations => "max-iterations",
    }
}

fn parse_termination(s: &str) -> Result<Termination> {
    [
        Termination::Gradient,
        Termination::Reduction,
        Termination::Step,
        Termination::Stalled,
        Termination::MaxIterations,
    ]
    .into_iter()
    .find(|t| termination_name(*t) == s)
    .ok_or_else(|| Error::Format(format!("unknown termination `{s}`")))
}

impl ResultFile {
    pub fn from_fit(r: &FitResult, t0_s: Vec<f64>) -> Self {
        let parameters = Param::ALL.iter().map(|p| (p.name().to_string(), r.value(*p))).collect();
        let uncertainties = r
            .free
            .iter()
            .zip(&r.sigma)
            .map(|(p, s)| (p.name().to_string(), *s))
            .collect();
        let correlations = r
            .free
            .iter()
            .map(|a| {
                let row = r
                    .free
                    .iter()
                    .filter(|b| *b != a)
                    .map(|b| (b.name().to_string(), r.correlation(*a, *b).unwrap_or(f64::NAN)))
                    .collect();
                (a.name().to_string(), row)
            })
            .collect();
        Self {
            fit: FitSummary {
                model: r.model.name().to_string(),
                t0_s,
                termination: termination_name(r.termination).to_string(),
                chi2: r.chi2,
                chi2_nu: r.chi2_nu,
                n_points: r.n_points,
                iterations: r.iterations,
                gradient_norm: r.gradient_norm,
                tie_n_ion: r.tie_n_ion,
                free: r.free.iter().map(|p| p.name().to_string()).collect(),
                erp_deg: r.erp().map(f64::to_degrees),
            },
            parameters,
            uncertainties,
            correlations,
            diagnostics: r.diagnostics.iter().map(ToString::to_string).collect(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot serialize fit result: {e}")))
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("{origin}: {e}")))
    }

    /// Rebuilds a [`FitResult`] that later stages can start from. `base`
    /// supplies ω_RF, arg g and V₀; residuals, χ² history and structured
    /// diagnostics are not stored and come back empty.
    pub fn to_fit_result(&self, base: &ModelParams) -> Result<FitResult> {
        let model: FitModel = self.fit.model.parse()?;
        let mut values = ParamSet([0.0; 11]);
        for p in Param::ALL {
            let v = self
                .parameters
                .get(p.name())
                .ok_or_else(|| Error::Format(format!("parameters: `{p}` missing")))?;
            values.set(p, *v);
        }
        let free: Vec<Param> = self.fit.free.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        let sigma: Vec<f64> = free
            .iter()
            .map(|p| {
                self.uncertainties
                    .get(p.name())
                    .copied()
                    .ok_or_else(|| Error::Format(format!("no uncertainty for free parameter `{p}`")))
            })
            .collect::<Result<_>>()?;
        let n = free.len();
        let covariance = DMatrix::from_fn(n, n, |i, j| {
            let rho = if i == j {
                1.0
            } else {
                self.correlations
                    .get(free[i].name())
                    .and_then(|row| row.get(free[j].name()))
                    .copied()
                    .unwrap_or(f64::NAN)
            };
            rho * sigma[i] * sigma[j]
        });
        Ok(FitResult {
            model,
            base: *base,
            tie_n_ion: self.fit.tie_n_ion,
            values,
            free,
            sigma,
            covariance,
            chi2: self.fit.chi2,
            chi2_nu: self.fit.chi2_nu,
            n_points: self.fit.n_points,
            iterations: self.fit.iterations,
            gradient_norm: self.fit.gradient_norm,
            termination: parse_termination(&self.fit.termination)?,
            chi2_history: Vec::new(),
            residuals: Vec::new(),
            diagnostics: Vec::new(),
        })
    }
}

pub fn write_result(path: &Path, r: &ResultFile) -> Result<()> {
    write_atomic(path, r.to_toml()?.as_bytes())
}

pub fn read_result(path: &Path) -> Result<ResultFile> {
    ResultFile::from_toml(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{fit_background, FitOptions};
    use crate::scenario::Scenario;
    use crate::spectrum::ThermalMode;

    fn background_fit() -> FitResult {
        let sc = Scenario::published().background();
        let s = sc.closed_form(0.0, ThermalMode::FiniteWindow).unwrap();
        let sigma = s.values.iter().map(|v| v / 20f64.sqrt()).collect();
        fit_background(&[s.with_sigma(sigma).unwrap()], &sc.params, &FitOptions::default()).unwrap()
    }

    #[test]
    fn result_file_round_trips_through_toml() {
        let r = background_fit();
        let file = ResultFile::from_fit(&r, vec![0.0]);
        let text = file.to_toml().unwrap();
        for section in ["[fit]", "[parameters]", "[uncertainties]", "[correlations.n_q]"] {
            assert!(text.contains(section), "{section} missing from\n{text}");
        }
        let back = ResultFile::from_toml(&text, "mem").unwrap();
        assert_eq!(back, file);
        let rebuilt = back.to_fit_result(&r.base).unwrap();
        assert_eq!(rebuilt.values, r.values);
        assert_eq!(rebuilt.free, r.free);
        assert_eq!(rebuilt.sigma, r.sigma);
        let c = rebuilt.correlation(Param::NQ, Param::GammaQHz).unwrap();
        assert!((c - r.correlation(Param::NQ, Param::GammaQHz).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = ResultFile::from_fit(&background_fit(), vec![0.0]).to_toml().unwrap();
        let bad = text.replacen("[fit]\n", "[fit]\nbogus = 1\n", 1);
        let e = ResultFile::from_toml(&bad, "r.toml").unwrap_err().to_string();
        assert!(e.contains("r.toml") && e.contains("bogus"), "{e}");
    }
}
