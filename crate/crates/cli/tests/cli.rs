use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spinphoton(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinphoton"))
        .args(args)
        .env_remove("SPINPHOTON_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in summary"))
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn budget_ends_with_generation_probability() {
    let o = spinphoton(&["budget", "--preset", "v1"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().last().unwrap(), "generation_probability = 2.0e-4");
    assert!(out.contains("purcell_budget = 0.740"));
}

#[test]
fn validate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.cfg", "[run]\nexperiment = entanglement\nshots = 10\n");
    let o = spinphoton(&["validate", &ok]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "ok, 0 issues");

    let zero = write(dir.path(), "zero.cfg", "experiment = entanglement\nshots = 0\n");
    let o = spinphoton(&["validate", &zero]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("shots: must be at least 1"));

    let typo = write(dir.path(), "typo.cfg", "experiment = entanglement\n[params]\neta_x = 0.2\n");
    let o = spinphoton(&["validate", &typo]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("eta_x: unknown parameter; did you mean `eta_"));

    let o = spinphoton(&["validate", &dir.path().join("missing.cfg").to_string_lossy()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn every_documented_key_validates() {
    let dir = tempfile::tempdir().unwrap();
    let text = "\
[run]
experiment = entanglement
preset = custom
shots = 5
seed = 18446744073709551615
scan = 0:10:1
output = out
bases = eigen/up, eigen/down, super
mode = trajectory
apparatus = full

[params]
d_gs = 2.2
delta_zfs_optical = 1000
gamma_b = 2.8
b_field = 10
es_lifetime = 6.1
eta_q = 0.5
eta_d = 0.08
ms_lifetime = 322
ms_branching = 0.28, 0.28, 0.22, 0.22
linewidth_a1 = 26
linewidth_a2 = 26
t2_star = 1.68
t2 = 11
mw_pi_fidelity = 0.96
init_fidelity = 0.96
mw_pi_time = 920
optical_pi_error = 0.01

[detection]
objective = 0.7
solid_angle_with_sil = 0.13
path = 0.33
window_fraction = 0.46
fiber = 0.36
mz_interferometer = 0.63
snspd = 0.85
visibility = 0.9
phase_jitter_deg = 11
phase_setpoint = 0
delay = 1060
extinction_db = 30
dark_count_rate = 1e-8
psb_dark_count_rate = 1e-8
afterpulse_prob = 0.01
leak_fraction = 0.02
zpl_window_start = 2.5
zpl_window_end = 12.5
eta = 0.01
bin_gap = 1060
instantaneous_mw = false
";
    let p = write(dir.path(), "all.cfg", text);
    let o = spinphoton(&["validate", &p]);
    assert_eq!(stdout(&o).trim(), "ok, 0 issues", "{}", stdout(&o));
}

#[test]
fn simulate_is_reproducible_and_analyze_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = spinphoton(&[
            "simulate",
            "--experiment",
            "entanglement",
            "--preset",
            "v2",
            "--apparatus",
            "ideal",
            "--detect",
            "bin_gap=100",
            "--shots",
            "50000",
            "--seed",
            "7",
            "--out",
            &out.to_string_lossy(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["clicks.csv", "summary.txt", "runs.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    for key in ["Ve", "Vs", "F", "g2_uH", "g2_pm"] {
        summary_value(&summary, key);
    }
    assert!(summary_value(&summary, "F") > 0.9);

    let eta = summary_value(&summary, "eta").to_string();
    let c = dir.path().join("c");
    let o = spinphoton(&[
        "analyze",
        &a.join("clicks.csv").to_string_lossy(),
        "--runs",
        &a.join("runs.csv").to_string_lossy(),
        "--eta",
        &eta,
        "--out",
        &c.to_string_lossy(),
    ]);
    assert!(o.status.success());
    let again = fs::read_to_string(c.join("summary.txt")).unwrap();
    assert!(summary.ends_with(&again));
}

#[test]
fn odmr_scan_finds_both_dips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("odmr");
    let o = spinphoton(&["simulate", "--experiment", "odmr", "--scan", "58:75:0.25", "--out", &out.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!((summary_value(&summary, "mw1_center_mhz") - 62.0).abs() < 0.2);
    assert!((summary_value(&summary, "mw2_center_mhz") - 70.8).abs() < 0.2);
    let series = fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(series.lines().next().unwrap(), "mw_freq_mhz,bright_fraction,yerr");
    assert_eq!(series.lines().count(), 1 + 69);
}

#[test]
fn config_errors_exit_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = spinphoton(&["simulate", "--experiment", "odmrx", "--out", &out.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("did you mean `odmr`"));
    assert!(!out.exists());
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_spinphoton"))
        .args(["simulate", "--experiment", "eta_calibration", "--scan", "0:1:1"])
        .env("SPINPHOTON_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let s = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    // imperfect initialization leaves some population outside the bright level
    let p = summary_value(&s, "mean_psb_click_probability");
    assert!(p > 0.0096 && p < 0.01, "{p}");
}

#[test]
fn unreadable_click_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "clicks.csv", "not,a,click,file\n1,2\n");
    let o = spinphoton(&["analyze", &p, "--out", &dir.path().join("o").to_string_lossy()]);
    assert_eq!(o.status.code(), Some(3));
}
