use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::spectrum::{Spectrum, SpectrumWindow};

pub const COLUMNS: [&str; 3] = ["frequency_offset_hz", "psd_v2rms", "sigma_v2rms"];

/// Header fields besides the window. `n_traces = 0` marks a closed-form curve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpectrumMeta {
    pub n_traces: usize,
    pub seed: u64,
    /// Further `key=value` lines, kept in order of key.
    pub extra: BTreeMap<String, String>,
}

const REQUIRED: [&str; 4] = ["t0_s", "td_s", "n_traces", "seed"];

/// `{:e}` prints the shortest decimal that parses back to the same f64.
pub fn format_spectrum(s: &Spectrum, meta: &SpectrumMeta) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# t0_s={:e}", s.window.t0);
    let _ = writeln!(out, "# td_s={:e}", s.window.td);
    let _ = writeln!(out, "# n_traces={}", meta.n_traces);
    let _ = writeln!(out, "# seed={}", meta.seed);
    for (k, v) in &meta.extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    let _ = writeln!(out, "# {}", COLUMNS.join("\t"));
    let hz = s.window.offsets_hz();
    for (k, f) in hz.iter().enumerate() {
        let sigma = s.sigma.as_ref().map_or(f64::NAN, |v| v[k]);
        let _ = writeln!(out, "{:e}\t{:e}\t{:e}", f, s.values[k], sigma);
    }
    out
}

fn parse_f64(tok: &str, what: &str, at: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| Error::Format(format!("{at}: {what} `{tok}` is not a number")))
}

/// Parses a spectrum file. `origin` prefixes error locations (`origin:line`).
/// A σ column that is NaN throughout means the file carries no uncertainties.
pub fn parse_spectrum(text: &str, origin: &str) -> Result<(Spectrum, SpectrumMeta)> {
    let mut header: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut columns_seen = false;
    let (mut hz, mut psd, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    for (i, raw) in text.lines().enumerate() {
        let at = format!("{origin}:{}", i + 1);
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((k, v)) = rest.split_once('=') {
                if !hz.is_empty() {
                    return Err(Error::Format(format!("{at}: header line after data")));
                }
                let k = k.trim().to_string();
                if header.contains_key(&k) {
                    return Err(Error::Format(format!("{at}: duplicate header key `{k}`")));
                }
                header.insert(k, (v.trim().to_string(), i + 1));
            } else if rest.split_whitespace().eq(COLUMNS.iter().copied()) {
                columns_seen = true;
            } else if !rest.is_empty() {
                return Err(Error::Format(format!(
                    "{at}: expected `key=value` or the column header, got `{rest}`"
                )));
            }
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Format(format!("{at}: expected 3 columns, got {}", toks.len())));
        }
        hz.push(parse_f64(toks[0], COLUMNS[0], &at)?);
        psd.push(parse_f64(toks[1], COLUMNS[1], &at)?);
        sigma.push(parse_f64(toks[2], COLUMNS[2], &at)?);
    }
    if !columns_seen {
        return Err(Error::Format(format!(
            "{origin}: missing column header `# {}`",
            COLUMNS.join(" ")
        )));
    }
    for k in REQUIRED {
        if !header.contains_key(k) {
            return Err(Error::Format(format!("{origin}: missing header key `{k}`")));
        }
    }
    let mut take = |k: &str| header.remove(k).expect("checked above");
    let (t0, l_t0) = take("t0_s");
    let (td, l_td) = take("td_s");
    let (n, l_n) = take("n_traces");
    let (seed, l_seed) = take("seed");
    let t0 = parse_f64(&t0, "t0_s", &format!("{origin}:{l_t0}"))?;
    let td = parse_f64(&td, "td_s", &format!("{origin}:{l_td}"))?;
    let n_traces = n
        .parse()
        .map_err(|_| Error::Format(format!("{origin}:{l_n}: n_traces `{n}` is not a count")))?;
    let seed = seed
        .parse()
        .map_err(|_| Error::Format(format!("{origin}:{l_seed}: seed `{seed}` is not a u64")))?;
    let window = SpectrumWindow::from_hz(t0, td, &hz).map_err(|e| Error::Format(format!("{origin}: {e}")))?;
    let mut spectrum = Spectrum::new(window, psd)?;
    if !sigma.iter().all(|s| s.is_nan()) {
        spectrum = spectrum.with_sigma(sigma)?;
    }
    let extra = header.into_iter().map(|(k, (v, _))| (k, v)).collect();
    Ok((spectrum, SpectrumMeta { n_traces, seed, extra }))
}

pub fn write_spectrum(path: &Path, s: &Spectrum, meta: &SpectrumMeta) -> Result<()> {
    write_atomic(path, format_spectrum(s, meta).as_bytes())
}

pub fn read_spectrum(path: &Path) -> Result<(Spectrum, SpectrumMeta)> {
    parse_spectrum(&read_text(path)?, &path.display().to_string())
}
