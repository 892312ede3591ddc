use std::fmt::Write as _;

use quartzion::io::{write_atomic, write_spectrum, MomentsMode, SpectrumMeta};
use quartzion::oracle::{synthesize_periodogram, synthesize_traces, TraceEnsemble};
use quartzion::{effective_relative_phase, MomentVector, Scenario};

use crate::run::{t0_tag, usage, Context, Failure};

/// Independent seeds per (stream, index) for any base seed (splitmix64).
fn derived_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base ^ (stream << 32 | index).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for _ in 0..2 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn meta(n_traces: usize, seed: u64, kind: &str) -> SpectrumMeta {
    SpectrumMeta {
        n_traces,
        seed,
        extra: [("kind".to_string(), kind.to_string())].into(),
    }
}

fn format_traces(e: &TraceEnsemble, td: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# t0_s={:e}", e.t0);
    let _ = writeln!(out, "# td_s={td:e}");
    let _ = writeln!(out, "# n_traces={}", e.traces.len());
    let _ = writeln!(out, "# seed={}", e.rng_seed);
    let _ = writeln!(out, "# sample_rate_hz={:e}", e.sample_rate);
    let _ = writeln!(out, "# carrier_hz={:e}", e.carrier_hz);
    let names: Vec<String> = (0..e.traces.len()).map(|k| format!("v{k}_v")).collect();
    let _ = writeln!(out, "# time_s\t{}", names.join("\t"));
    let n = e.traces.first().map_or(0, Vec::len);
    for i in 0..n {
        let _ = write!(out, "{:e}", e.t0 + (i as f64 + 0.5) / e.sample_rate);
        for tr in &e.traces {
            let _ = write!(out, "\t{:e}", tr[i]);
        }
        out.push('\n');
    }
    out
}

fn moments(ctx: &Context, sc: &Scenario, t0: f64) -> Result<MomentVector, Failure> {
    match ctx.config.simulate.moments {
        MomentsMode::Free => sc.moments_at(t0).map_err(usage),
        MomentsMode::Erp => {
            let g = sc.params.g;
            let erp = match ctx.config.initial.erp_deg {
                Some(d) => d.to_radians(),
                None => effective_relative_phase(g, sc.drive_off.relative_phase()).map_err(usage)?,
            };
            Ok(sc.moments_with_erp(t0, erp))
        }
    }
}

pub fn run(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let sc = cfg.scenario().map_err(usage)?;
    let sim = &cfg.simulate;
    let mode = cfg.thermal_mode();
    let seed = cfg.io.seed;
    ctx.ensure_out()?;
    let write = |name: &str, r: quartzion::Result<()>| -> Result<(), Failure> {
        r.map_err(usage)?;
        println!("wrote {}", ctx.out_file(name).display());
        Ok(())
    };

    for (k, &t0) in cfg.window.t0_s.iter().enumerate() {
        let tag = t0_tag(t0);
        let m = moments(ctx, &sc, t0)?;
        if sim.write_model {
            let name = format!("model_{tag}.dat");
            let s = sc.closed_form_with(&m, t0, mode).map_err(usage)?;
            write(&name, write_spectrum(&ctx.out_file(&name), &s, &meta(0, seed, "model")))?;
        }
        if sim.n_traces == 0 {
            continue;
        }
        let trace_seed = derived_seed(seed, 1, k as u64);
        let th = sc.thermal().map_err(usage)?;
        let win = sc.window(t0).map_err(usage)?;
        let plan = sc.plan().map_err(usage)?;
        let syn = if sim.write_traces {
            synthesize_traces(&sc.params, &m, &th, sc.s_noise, &win, &plan, sim.n_traces, trace_seed)
        } else {
            synthesize_periodogram(&sc.params, &m, &th, sc.s_noise, &win, &plan, sim.n_traces, trace_seed)
        }
        .map_err(usage)?;
        let name = format!("spectrum_{tag}.dat");
        let meta = meta(sim.n_traces, trace_seed, "periodogram");
        write(&name, write_spectrum(&ctx.out_file(&name), &syn.periodogram, &meta))?;
        if sim.write_traces {
            let name = format!("traces_{tag}.dat");
            write(
                &name,
                write_atomic(&ctx.out_file(&name), format_traces(&syn.ensemble, sc.td).as_bytes()),
            )?;
        }
    }

    if sim.n_traces > 0 {
        let bg = sc.background();
        for j in 0..sim.background_spectra {
            let bg_seed = derived_seed(seed, 2, j as u64);
            let s = bg.synthesize(0.0, sim.n_traces, bg_seed).map_err(usage)?;
            let name = format!("background_{j:02}.dat");
            write(
                &name,
                write_spectrum(&ctx.out_file(&name), &s, &meta(sim.n_traces, bg_seed, "background")),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_do_not_collide_across_bases() {
        let mut seen = std::collections::BTreeSet::new();
        for base in 0..50u64 {
            for stream in 1..3 {
                for i in 0..100 {
                    assert!(seen.insert(derived_seed(base, stream, i)));
                }
            }
        }
    }
}
