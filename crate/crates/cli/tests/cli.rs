use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ddclock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddclock")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json_stdout(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn f(v: &Value, path: &[&str]) -> f64 {
    let mut cur = v;
    for k in path {
        cur = &cur[*k];
    }
    cur.as_f64().unwrap_or_else(|| panic!("{path:?} is not a number in {v}"))
}

#[test]
fn empty_scan_grid_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "c.toml",
        "omega_d_mhz = 6.0\nomega_b_mhz = 6.0\nt_limit_us = 100.0\nscan_start_mhz = 15.0\nscan_stop_mhz = 25.0\nscan_points = 0\n",
    );
    assert_eq!(code(&ddclock(&["scan", &p])), 2);
}

#[test]
fn zero_trials_is_config_error() {
    assert_eq!(code(&ddclock(&["protocol", "--preset", "fid-bare", "--trials", "0"])), 2);
}

#[test]
fn unknown_key_and_unknown_preset_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "omega_d_mhz = 6.0\nomega_b_mhz = 6.0\nomega_mhz = 1.0\n");
    assert_eq!(code(&ddclock(&["spectrum", &p])), 2);
    assert_eq!(code(&ddclock(&["spectrum", "--preset", "nope"])), 2);
    assert_eq!(code(&ddclock(&["spectrum", "--preset", "fig3-point", "--workers", "0"])), 2);
}

#[test]
fn unsolvable_interval_is_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "omega_d_mhz = 6.0\nomega_b_mhz = 6.0\nsearch_lo_mhz = 30.0\nsearch_hi_mhz = 40.0\n");
    let o = ddclock(&["optimize", &p]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no sign change"));
}

#[test]
fn degenerate_levels_exit_3() {
    // with Ω_B = 0, B̃ sits at −Δ and d̃ at −Ω_D
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "omega_d_mhz = 6.0\nomega_b_mhz = 0.0\ndelta_mhz = 6.0\n");
    assert_eq!(code(&ddclock(&["spectrum", &p])), 3);
}

#[test]
fn uncoupled_bright_state_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "omega_d_mhz = 6.0\nomega_b_mhz = 0.0\ndelta_mhz = 10.0\n");
    let v = json_stdout(&ddclock(&["spectrum", &p]));
    assert!((f(&v, &["energies_mhz", "u"]) - 6.0).abs() < 1e-9);
    assert!((f(&v, &["energies_mhz", "B"]) + 10.0).abs() < 1e-9);
    assert!((f(&v, &["energies_mhz", "d"]) + 6.0).abs() < 1e-9);
}

#[test]
fn clock_point_preset_has_vanishing_susceptibility_difference() {
    let v = json_stdout(&ddclock(&["spectrum", "--preset", "fig3-point"]));
    let diff = f(&v, &["susceptibility_diff_mhz"]);
    let scale = f(&v, &["susceptibility_mhz", "B"]).abs();
    assert!(diff.abs() < 1e-3 * scale, "diff {diff} vs scale {scale}");
}

#[test]
fn spectrum_is_idempotent_through_its_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let base = write(
        dir.path(),
        "c.toml",
        "omega_d_mhz = 2.0\nomega_b_mhz = 2.0\ndelta_mhz = 8.9956\ndelta0_mhz = 1.7386\nsigma_khz = 56.8\n",
    );
    assert_eq!(code(&ddclock(&["spectrum", &base, "--out", out1.to_str().unwrap()])), 0);
    let first = read_json(&out1.join("spectrum.json"));
    let cfg = toml::to_string(&first["meta"]["config"]).unwrap();
    let again = write(dir.path(), "again.toml", &cfg);
    let second = json_stdout(&ddclock(&["spectrum", &again]));

    fn compare(a: &Value, b: &Value, path: &str) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                for (k, v) in y {
                    compare(&x[k], v, &format!("{path}.{k}"));
                }
            }
            (Value::Number(x), Value::Number(y)) => {
                let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{path}: {x} vs {y}");
            }
            _ => assert_eq!(a, b, "{path}"),
        }
    }
    compare(&first, &second, "");
    assert!(first["mixing"]["amplitude"].is_number());
}

#[test]
fn sidecar_records_config_version_rng_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = ddclock(&["protocol", "--preset", "fid-bare", "--seed", "77", "--trials", "50", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("protocol.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("tau_s,mean,stderr"));
    assert_eq!(csv.lines().count(), 162);
    let side = read_json(&out.join("protocol.json"));
    assert_eq!(side["seed"], 77);
    assert_eq!(side["config"]["seed"], 77);
    assert_eq!(side["config"]["trials"], 50);
    assert!(side["config"]["sigma_khz"].is_number(), "calibrated σ is recorded");
    assert!(side["rng"].as_str().unwrap().contains("ChaCha8"));
    assert_eq!(side["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(side["output"], "protocol.csv");
}

#[test]
fn csv_is_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "c.toml",
        "scheme = \"basic\"\nomega_d_mhz = 6.0\nomega_b_mhz = 6.0\nsigma_khz = 56.8\nprotocol = \"dressed-ramsey\"\n\
         tau_start_us = 0.0\ntau_stop_us = 2.0\ntau_points = 41\nfit_skip_us = 0.0\ntrials = 20\nseed = 3\n",
    );
    let runs: Vec<Vec<u8>> = ["1", "2", "3", "1"]
        .iter()
        .map(|w| {
            let o = ddclock(&["protocol", &p, "--workers", w]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            o.stdout
        })
        .collect();
    assert!(runs.windows(2).all(|w| w[0] == w[1]));
    let other = ddclock(&["protocol", &p, "--seed", "4"]);
    assert_ne!(other.stdout, runs[0], "seed changes the output");
}

#[test]
fn failed_analysis_keeps_the_data() {
    // the default 20 µs Ramsey fit window lies beyond this 2 µs grid
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let p = write(
        dir.path(),
        "c.toml",
        "omega_d_mhz = 6.0\nomega_b_mhz = 6.0\nsigma_khz = 56.8\nprotocol = \"dressed-ramsey\"\n\
         tau_start_us = 0.0\ntau_stop_us = 2.0\ntau_points = 41\ntrials = 4\n",
    );
    let o = ddclock(&["protocol", &p, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let side = read_json(&out.join("protocol.json"));
    assert!(side["summary"]["analysis_error"].as_str().unwrap().contains("need at least"));
    assert_eq!(std::fs::read_to_string(out.join("protocol.csv")).unwrap().lines().count(), 42);
}

#[test]
fn dt_flag_reaches_the_integrator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = ddclock(&["protocol", "--preset", "fid-bare", "--trials", "10", "--dt", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let side = read_json(&out.join("protocol.json"));
    assert!((f(&side, &["summary", "dt_s"]) - 1e-8).abs() < 1e-15);
    assert_eq!(side["config"]["dt_ns"], 10.0);
}

#[test]
fn improved_preset_solves_the_working_point() {
    let v = json_stdout(&ddclock(&["optimize", "--preset", "improved-2mhz"]));
    assert!((f(&v, &["delta_mhz"]) / 8.9956 - 1.0).abs() <= 0.01);
    assert!((f(&v, &["delta0_mhz"]) / 1.7386 - 1.0).abs() <= 0.01);
}

#[test]
fn basic_optimum_at_six_mhz() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "omega_d_mhz = 6.0\nomega_b_mhz = 6.0\nsigma_khz = 56.8\n");
    let v = json_stdout(&ddclock(&["optimize", &p]));
    assert!((f(&v, &["delta_mhz"]) - 19.35).abs() <= 0.05);
    assert_eq!(f(&v, &["delta0_mhz"]), 0.0);
}

fn scan_summary(preset: &str) -> (Value, String) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = ddclock(&["scan", "--preset", preset, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (read_json(&out.join("scan.json")), std::fs::read_to_string(out.join("scan.csv")).unwrap())
}

#[test]
fn detuning_scan_preset_peaks_at_the_clock_point() {
    let (side, csv) = scan_summary("fig3");
    assert_eq!(csv.lines().next(), Some("delta_mhz,t2_us,t2_err_us"));
    assert!((f(&side, &["summary", "peak_delta_mhz"]) - 19.35).abs() <= 0.05);
    let t2 = f(&side, &["summary", "peak_t2_us"]);
    assert!((t2 / 1000.0 - 1.0).abs() <= 0.3, "{t2}");
    assert_eq!(side["summary"]["peak_on_boundary"], false);
}

#[test]
fn imbalanced_scan_preset_is_asymmetric_and_shifted() {
    let (side, csv) = scan_summary("fig4-theory");
    let peak = f(&side, &["summary", "peak_delta_mhz"]);
    assert!((f(&side, &["summary", "peak_t2_us"]) / 190.0 - 1.0).abs() <= 0.05);
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (c[0], c[1])
        })
        .collect();
    let at = |d: f64| rows.iter().min_by(|a, b| (a.0 - d).abs().total_cmp(&(b.0 - d).abs())).unwrap().1;
    let (lo, hi) = (at(0.75 * peak), at(1.25 * peak));
    assert!((lo - hi).abs() / lo.max(hi) > 0.1, "{lo} vs {hi}");

    // the correlated-noise clock point for the same drive
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "omega_d_mhz = 2.27\nomega_b_mhz = 2.27\nsigma_khz = 56.8\n");
    let correlated = f(&json_stdout(&ddclock(&["optimize", &p])), &["delta_mhz"]);
    assert!((peak - correlated).abs() > 1.0, "{peak} vs {correlated}");
}

#[test]
fn drive_scan_presets_find_interior_maxima() {
    let (side, csv) = scan_summary("fig3-inset");
    assert_eq!(csv.lines().next(), Some("omega_mhz,delta_mhz,delta0_mhz,t2_us"));
    let w = f(&side, &["summary", "best_omega_mhz"]);
    assert!((8.0..=12.0).contains(&w), "{w}");
    assert!((f(&side, &["summary", "best_t2_us"]) / 1200.0 - 1.0).abs() <= 0.3);

    let (side, _) = scan_summary("fig5");
    let w = f(&side, &["summary", "best_omega_mhz"]);
    assert!(w > 0.3 && w < 6.0, "{w}");
    assert!(f(&side, &["summary", "best_t2_us"]) > 1200.0);
}

#[test]
fn fid_preset_recovers_the_calibrated_dephasing_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = ddclock(&["protocol", "--preset", "fid-bare", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = f(&read_json(&out.join("protocol.json")), &["summary", "t2_star_us"]);
    assert!((t / 2.0 - 1.0).abs() <= 0.1, "{t}");
}

#[test]
fn survival_preset_envelope_within_factor_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = ddclock(&["protocol", "--preset", "fig5-inset", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = f(&read_json(&out.join("protocol.json")), &["summary", "envelope_time_constant_us"]);
    assert!((5300.0 / 2.0..=5300.0 * 2.0).contains(&t), "{t}");
}
