use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/synthetic.toml");

fn quartzion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quartzion"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// The fixture with the first `key = …` line of each pair replaced.
fn fixture_with(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = std::fs::read_to_string(FIXTURE).unwrap();
    for (key, value) in edits {
        let start = text
            .lines()
            .scan(0, |pos, l| {
                let at = *pos;
                *pos += l.len() + 1;
                Some((at, l))
            })
            .find(|(_, l)| l.split('=').next().is_some_and(|k| k.trim() == *key))
            .map(|(at, _)| at)
            .unwrap_or_else(|| panic!("no `{key}` in the fixture"));
        let end = start + text[start..].find('\n').unwrap();
        text.replace_range(start..end, &format!("{key} = {value}"));
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Small and fast: two traces, one background spectrum.
fn quick(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut all = vec![("n_traces", "2"), ("background_spectra", "1")];
    all.extend_from_slice(edits);
    fixture_with(dir, name, &all)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// (offset, psd) rows of a spectrum file.
fn rows(path: &Path) -> Vec<(f64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut c = l.split('\t').map(|x| x.parse::<f64>().unwrap());
            (c.next().unwrap(), c.next().unwrap())
        })
        .collect()
}

fn chi2(out: &str, stage: &str) -> f64 {
    let line = out
        .lines()
        .find(|l| l.starts_with(&format!("{stage}: χ² = ")))
        .expect("summary line");
    line[format!("{stage}: χ² = ").len()..]
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

/// A value from the `[parameters]` table of a result file.
fn parameter(path: &Path, name: &str) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip_while(|l| l.trim() != "[parameters]")
        .take_while(|l| !l.is_empty())
        .find_map(|l| l.strip_prefix(&format!("{name} = ")))
        .unwrap_or_else(|| panic!("no {name} in {}", path.display()))
        .parse()
        .unwrap()
}

#[test]
fn simulate_dips_then_peaks_at_the_ion_frequency() {
    let dir = TempDir::new().unwrap();
    let cfg = quick(dir.path(), "c.toml", &[("moments", "\"erp\""), ("write_model", "true")]);
    let out = dir.path().join("out");
    let o = quartzion(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--t0",
        "0,14ms,25ms,50ms",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for (tag, dip) in [("0ms", true), ("14ms", true), ("25ms", true), ("50ms", false)] {
        assert!(out.join(format!("spectrum_t0_{tag}.dat")).exists());
        let m = rows(&out.join(format!("model_t0_{tag}.dat")));
        let k = m.iter().position(|r| (r.0 - 1.35).abs() < 1e-6).unwrap();
        let (left, here, right) = (m[k - 1].1, m[k].1, m[k + 1].1);
        if dip {
            assert!(here < left && here < right, "{tag}: no dip");
        } else {
            assert!(here > left && here > right, "{tag}: no peak");
        }
    }
    assert!(out.join("background_00.dat").exists());
}

#[test]
fn one_trace_with_a_fixed_seed_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = quick(dir.path(), "c.toml", &[("n_traces", "1")]);
    let run = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        let o = quartzion(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--t0",
            "14ms",
            "--seed",
            seed,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(out.join("spectrum_t0_14ms.dat")).unwrap()
    };
    let first = run("a", "7");
    assert_eq!(first, run("b", "7"));
    assert_ne!(first, run("c", "8"));
    let text = String::from_utf8(first).unwrap();
    assert!(text.contains("# n_traces=1\n") && text.contains("# t0_s=1.4e-2\n"));
}

#[test]
fn a_one_point_grid_is_valid() {
    let dir = TempDir::new().unwrap();
    let cfg = quick(
        dir.path(),
        "c.toml",
        &[("start_hz", "1.35"), ("len", "1"), ("write_model", "true")],
    );
    let out = dir.path().join("out");
    let o = quartzion(&["simulate", "--config", s(&cfg), "--out", s(&out), "--t0", "0.014"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["model_t0_14ms.dat", "spectrum_t0_14ms.dat"] {
        let r = rows(&out.join(name));
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, 1.35);
        assert!(r[0].1 > 0.0);
    }
}

/// Simulates the bundled fixture, fits it from perturbed starts, then refits
/// the background stage's own model curve.
#[test]
fn three_stage_fit_recovers_the_coupling() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = quartzion(&["simulate", "--config", FIXTURE, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let perturbed = fixture_with(
        dir.path(),
        "fit.toml",
        &[
            ("g_hz", "1.2"),
            ("a_abs", "2500.0"),
            ("b_abs", "1200000.0"),
            ("erp_deg", "130.0"),
        ],
    );
    let o = quartzion(&["fit", "--config", s(&perturbed), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    let g = parameter(&out.join("coupling.toml"), "g_hz");
    assert!((g - 1.449).abs() / 1.449 <= 0.01, "|g|/2π = {g}");
    assert!(out.join("full_t0_600ms.toml").exists() && out.join("coupling_series.dat").exists());

    let refit = dir.path().join("refit");
    let model = out.join("background_model.dat");
    let o = quartzion(&[
        "fit",
        "--config",
        FIXTURE,
        "--out",
        s(&refit),
        "--stage",
        "background",
        "--background",
        s(&model),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = chi2(&stdout(&o), "background");
    assert!(c < 1e-12, "χ² = {c}");
}

#[test]
fn mismatched_grids_are_rejected() {
    let dir = TempDir::new().unwrap();
    let narrow = quick(dir.path(), "a.toml", &[("start_hz", "-8.65"), ("len", "21")]);
    let wide = quick(dir.path(), "b.toml", &[("start_hz", "-18.65"), ("len", "41")]);
    for (cfg, sub) in [(&narrow, "a"), (&wide, "b")] {
        let o = quartzion(&[
            "simulate",
            "--config",
            s(cfg),
            "--out",
            s(&dir.path().join(sub)),
            "--t0",
            "0.1",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = dir.path().join("a/spectrum_t0_100ms.dat");
    let b = dir.path().join("b/spectrum_t0_100ms.dat");
    let o = quartzion(&[
        "fit",
        "--config",
        s(&narrow),
        "--out",
        s(&dir.path().join("f")),
        s(&a),
        s(&b),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("frequency grids do not match"), "{}", stderr(&o));

    let bg = dir.path().join("b/background_00.dat");
    let o = quartzion(&[
        "fit",
        "--config",
        s(&narrow),
        "--out",
        s(&dir.path().join("f")),
        "--background",
        s(&bg),
        "--",
        s(&a),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("frequency grids do not match"), "{}", stderr(&o));
}

#[test]
fn fit_non_convergence_exits_2() {
    let dir = TempDir::new().unwrap();
    let sim = quick(dir.path(), "sim.toml", &[("start_hz", "-18.65"), ("len", "41")]);
    let out = dir.path().join("out");
    assert_eq!(
        code(&quartzion(&[
            "simulate",
            "--config",
            s(&sim),
            "--out",
            s(&out),
            "--t0",
            "0"
        ])),
        0
    );
    let fit = quick(
        dir.path(),
        "fit.toml",
        &[
            ("start_hz", "-18.65"),
            ("len", "41"),
            ("gamma_q_hz", "20.0"),
            ("max_iterations", "1"),
        ],
    );
    let o = quartzion(&["fit", "--config", s(&fit), "--out", s(&out), "--stage", "background"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("did not converge"));
}

#[test]
fn check_passes_by_default() {
    let o = quartzion(&["check"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("7 of 7 checks passed"));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn check_rejects_a_zero_quartz_linewidth() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture_with(dir.path(), "c.toml", &[("gamma_q_hz", "0.0")]);
    let o = quartzion(&["check", "--config", s(&cfg)]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL preconditions"), "{}", stdout(&o));
}

#[test]
fn check_fails_at_an_unreachable_tolerance() {
    let o = quartzion(&["check", "--tolerance", "1e-16"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn trap_freqs_sum_to_the_cyclotron_frequency() {
    let o = quartzion(&["trap-freqs", "--config", FIXTURE]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("ν_+ + ν_- − ν_c         = 0"), "{out}");
    assert!(out.contains("coupling |g|/2π"));

    let o = quartzion(&["trap-freqs"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("[trap]"));
}

#[test]
fn unknown_configuration_keys_are_located() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture_with(dir.path(), "c.toml", &[("td_s", "1.0\nbogus = 1")]);
    let o = quartzion(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(
        err.contains("unknown field `bogus`") && err.contains("c.toml:"),
        "{err}"
    );
    assert!(!dir.path().join("out").exists());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&quartzion(&["bogus"])), 1);
    assert_eq!(code(&quartzion(&["fit", "--stage", "sideways"])), 1);
    assert_eq!(code(&quartzion(&["simulate", "--t0", "-5ms"])), 1);
    assert_eq!(code(&quartzion(&["--help"])), 0);
}
