//! Configuration loading, command-line overrides and exit codes.

use std::fmt;
use std::path::{Path, PathBuf};

use quartzion::io::RunConfig;
use quartzion::Error;

use crate::{Common, ConfigArg};

/// Why a command stopped; each kind has its own exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, configuration, input files or I/O.
    Usage(String),
    /// A fit did not converge or converged along a degenerate direction.
    Fit(String),
    /// At least one check failed.
    Check(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Fit(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    /// Classifies a library error raised while doing `what`.
    pub fn from_error(what: impl fmt::Display, e: Error) -> Self {
        let msg = format!("{what}: {e}");
        match e {
            Error::NonConvergence { .. } | Error::DegenerateFit(_) | Error::BoundsViolation { .. } => Failure::Fit(msg),
            _ => Failure::Usage(msg),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Fit(m) | Failure::Check(m) => f.write_str(m),
        }
    }
}

pub fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// A loaded configuration and the directory its relative paths refer to.
pub struct Context {
    pub config: RunConfig,
    pub base: PathBuf,
    /// Output directory, already resolved.
    pub out: PathBuf,
}

pub fn load(arg: &ConfigArg) -> Result<(RunConfig, PathBuf), Failure> {
    match &arg.config {
        Some(p) => {
            let cfg = RunConfig::load(p).map_err(usage)?;
            let base = p
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new("."))
                .to_path_buf();
            Ok((cfg, base))
        }
        None => Ok((RunConfig::published(), PathBuf::from("."))),
    }
}

impl Context {
    pub fn new(c: &Common) -> Result<Self, Failure> {
        let (mut config, base) = load(&c.config)?;
        if let Some(s) = c.seed {
            config.io.seed = s;
        }
        if let Some(t0) = &c.t0 {
            config.window.t0_s = t0.clone();
        }
        let out = match &c.out {
            Some(o) => o.clone(),
            None => config.resolve(&base, &config.io.out),
        };
        Ok(Self { config, base, out })
    }

    pub fn ensure_out(&self) -> Result<(), Failure> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| Failure::Usage(format!("cannot create output directory {}: {e}", self.out.display())))
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// `14ms`, `0.014` and `0.014s` are the same window start.
pub fn parse_t0(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, scale) = if let Some(v) = s.strip_suffix("ms") {
        (v, 1e-3)
    } else if let Some(v) = s.strip_suffix('s') {
        (v, 1.0)
    } else {
        (s, 1.0)
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("`{s}` is not a time"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("window start must be ≥ 0, got `{s}`"));
    }
    Ok(v * scale)
}

/// File-name tag of a window start, e.g. `t0_14ms` or `t0_2.5ms`.
pub fn t0_tag(t0: f64) -> String {
    format!("t0_{}ms", (t0 * 1e6).round() / 1e3)
}
