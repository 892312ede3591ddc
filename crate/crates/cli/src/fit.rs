use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use quartzion::fitting::timeseries_at;
use quartzion::io::{
    read_result, read_spectrum, write_atomic, write_result, write_spectrum, ResultFile, SpectrumMeta, Stage,
};
use quartzion::{fit_background, fit_coupling_timeseries, fit_full_spectrum, Error, FitResult, Param, Spectrum};

use crate::run::{t0_tag, usage, Context, Failure};

struct Input {
    path: PathBuf,
    spectrum: Spectrum,
}

fn read_inputs(paths: &[PathBuf]) -> Result<Vec<Input>, Failure> {
    paths
        .iter()
        .map(|p| {
            Ok(Input {
                path: p.clone(),
                spectrum: read_spectrum(p).map_err(usage)?.0,
            })
        })
        .collect()
}

/// `prefix*.dat` in `dir`, sorted by name.
fn discover(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(".dat"))
        })
        .collect();
    found.sort();
    found
}

/// Command line first, then the configuration, then what `simulate` leaves
/// in the output directory.
fn inputs(
    ctx: &Context,
    given: &[PathBuf],
    configured: &[PathBuf],
    prefix: &str,
    what: &str,
) -> Result<Vec<Input>, Failure> {
    let paths: Vec<PathBuf> = if !given.is_empty() {
        given.to_vec()
    } else if !configured.is_empty() {
        configured.iter().map(|p| ctx.config.resolve(&ctx.base, p)).collect()
    } else {
        discover(&ctx.out, prefix)
    };
    if paths.is_empty() {
        return Err(Failure::Usage(format!(
            "no {what} spectra: pass them on the command line, list them in the configuration, or simulate into {}",
            ctx.out.display()
        )));
    }
    let mut v = read_inputs(&paths)?;
    v.sort_by(|a, b| a.spectrum.window.t0.total_cmp(&b.spectrum.window.t0));
    Ok(v)
}

fn same_grid(a: &Spectrum, b: &Spectrum) -> bool {
    a.len() == b.len()
        && a.window.td == b.window.td
        && a.window
            .offsets
            .iter()
            .zip(&b.window.offsets)
            .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0))
}

fn check_grids(reference: &Input, others: &[Input]) -> Result<(), Failure> {
    match others.iter().find(|o| !same_grid(&reference.spectrum, &o.spectrum)) {
        Some(o) => Err(usage(Error::GridMismatch(format!(
            "{} ({} bins) and {} ({} bins) use different frequency grids or window lengths",
            reference.path.display(),
            reference.spectrum.len(),
            o.path.display(),
            o.spectrum.len()
        )))),
        None => Ok(()),
    }
}

fn print_summary(stage: &str, r: &FitResult) {
    println!(
        "{stage}: χ² = {:.6e}, χ²_ν = {:.4}, {} points, {} iterations",
        r.chi2, r.chi2_nu, r.n_points, r.iterations
    );
    for (p, s) in r.free.iter().zip(&r.sigma) {
        println!("  {:<14} {:>14.6e} ± {:.3e}", p.name(), r.value(*p), s);
    }
    for d in &r.diagnostics {
        println!("  note: {d}");
    }
}

fn save_result(ctx: &Context, name: &str, r: &FitResult, t0: Vec<f64>) -> Result<(), Failure> {
    let path = ctx.out_file(name);
    write_result(&path, &ResultFile::from_fit(r, t0)).map_err(usage)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// The fitted curve on the data's grid, carrying the data's σ.
fn save_model(ctx: &Context, name: &str, r: &FitResult, data: &Input, stage: &str) -> Result<(), Failure> {
    let mut model = r
        .model_for(std::slice::from_ref(&data.spectrum), ctx.config.thermal_mode())
        .map_err(usage)?
        .remove(0);
    model.components = None;
    model.sigma = data.spectrum.sigma.clone();
    let source = data
        .path
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let meta = SpectrumMeta {
        n_traces: 0,
        seed: ctx.config.io.seed,
        extra: [
            ("kind".into(), "model".into()),
            ("stage".into(), stage.into()),
            ("source".into(), source),
        ]
        .into(),
    };
    let path = ctx.out_file(name);
    write_spectrum(&path, &model, &meta).map_err(usage)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn background_stage(ctx: &Context, data: &[Input]) -> Result<FitResult, Failure> {
    check_grids(&data[0], &data[1..])?;
    let spectra: Vec<Spectrum> = data.iter().map(|d| d.spectrum.clone()).collect();
    let options = ctx.config.fit_options().map_err(usage)?;
    let r = fit_background(&spectra, &ctx.config.model_params(), &options)
        .map_err(|e| Failure::from_error(format!("background fit of {} spectra", spectra.len()), e))?;
    print_summary("background", &r);
    save_result(
        ctx,
        "background.toml",
        &r,
        spectra.iter().map(|s| s.window.t0).collect(),
    )?;
    save_model(ctx, "background_model.dat", &r, &data[0], "background")?;
    Ok(r)
}

fn coupling_stage(ctx: &Context, background: &FitResult, data: &[Input]) -> Result<FitResult, Failure> {
    let nu1 = ctx.config.nu1_hz();
    let spectra: Vec<Spectrum> = data.iter().map(|d| d.spectrum.clone()).collect();
    let series = timeseries_at(&spectra, nu1).map_err(usage)?;
    let options = ctx.config.fit_options().map_err(usage)?;
    let start = ctx.config.coupling_start().map_err(usage)?;
    let r = fit_coupling_timeseries(&series, background, &start, &options)
        .map_err(|e| Failure::from_error(format!("coupling fit at ν₁ = {nu1} Hz on {} spectra", series.len()), e))?;
    print_summary("coupling", &r);
    save_result(ctx, "coupling.toml", &r, spectra.iter().map(|s| s.window.t0).collect())?;

    let model = r.model_for(&series, ctx.config.thermal_mode()).map_err(usage)?;
    let mut text = format!("# nu1_hz={nu1:e}\n# t0_s\tpsd_v2rms\tsigma_v2rms\tmodel_v2rms\n");
    for (d, m) in series.iter().zip(&model) {
        let sigma = d.sigma.as_ref().map_or(f64::NAN, |s| s[0]);
        let _ = writeln!(
            text,
            "{:e}\t{:e}\t{:e}\t{:e}",
            d.window.t0, d.values[0], sigma, m.values[0]
        );
    }
    let path = ctx.out_file("coupling_series.dat");
    write_atomic(&path, text.as_bytes()).map_err(usage)?;
    println!("wrote {}", path.display());
    Ok(r)
}

fn full_stage(ctx: &Context, previous: &FitResult, data: &[Input]) -> Result<(), Failure> {
    let options = ctx.config.fit_options().map_err(usage)?;
    let mut failed = Vec::new();
    for d in data {
        let t0 = d.spectrum.window.t0;
        let tag = t0_tag(t0);
        match fit_full_spectrum(&d.spectrum, previous, &options) {
            Ok(r) => {
                println!(
                    "full {tag}: ν_ion = {:.5} ± {:.5} Hz, ν_q = {:.5} ± {:.5} Hz, χ²_ν = {:.4}",
                    r.value(Param::NuIonHz),
                    r.sigma(Param::NuIonHz).unwrap_or(f64::NAN),
                    r.value(Param::NuQHz),
                    r.sigma(Param::NuQHz).unwrap_or(f64::NAN),
                    r.chi2_nu
                );
                save_result(ctx, &format!("full_{tag}.toml"), &r, vec![t0])?;
                save_model(ctx, &format!("full_{tag}_model.dat"), &r, d, "full")?;
            }
            Err(e) => {
                let f = Failure::from_error(format!("full fit of {}", d.path.display()), e);
                eprintln!("{f}");
                failed.push(f);
            }
        }
    }
    match failed.into_iter().next() {
        None => Ok(()),
        Some(first) => Err(first),
    }
}

fn previous(ctx: &Context, name: &str) -> Result<FitResult, Failure> {
    let path = ctx.out_file(name);
    let file = read_result(&path).map_err(|e| Failure::Usage(format!("{e} (run the earlier stage first)")))?;
    file.to_fit_result(&ctx.config.model_params()).map_err(usage)
}

pub fn run(ctx: &Context, background: &[PathBuf], spectra: &[PathBuf]) -> Result<(), Failure> {
    let stage = ctx.config.fit.stage;
    ctx.ensure_out()?;
    let io = &ctx.config.io;
    let needs_spectra = stage != Stage::Background;
    let ions = if needs_spectra {
        inputs(ctx, spectra, &io.spectra, "spectrum_", "ion")?
    } else {
        Vec::new()
    };
    if let Some(first) = ions.first() {
        check_grids(first, &ions[1..])?;
    }

    let bg = match stage {
        Stage::Background | Stage::All => {
            let data = inputs(ctx, background, &io.background, "background_", "background")?;
            if let Some(first) = ions.first() {
                check_grids(&data[0], std::slice::from_ref(first))?;
            }
            Some(background_stage(ctx, &data)?)
        }
        _ => None,
    };
    let coupling = match stage {
        Stage::Coupling | Stage::All => {
            let bg = match bg {
                Some(b) => b,
                None => previous(ctx, "background.toml")?,
            };
            Some(coupling_stage(ctx, &bg, &ions)?)
        }
        _ => None,
    };
    if matches!(stage, Stage::Full | Stage::All) {
        let prev = match coupling {
            Some(c) => c,
            None => previous(ctx, "coupling.toml")?,
        };
        full_stage(ctx, &prev, &ions)?;
    }
    Ok(())
}
