//! Text and CSV outputs.

use std::fmt::Write;

use anyhow::{bail, Context};

use spinphoton_core::analysis::{
    build_table, fidelity_estimate, g2_cross, visibility, CoincidenceTable, Estimate, FitResult,
    RunCounts,
};
use spinphoton_core::detection::{ClickRecord, MeasureBasis, ETA_TARGET};
use spinphoton_core::experiment::{
    fit_hahn, fit_odmr, fit_ple, fit_rabi, fit_ramsey, measure_basis, run_standard,
};
use spinphoton_core::sequence::{ReadoutBasis, StandardPreset};

use crate::config::RunConfig;

pub fn runs_csv(runs: &RunCounts) -> String {
    let mut s = String::from("basis_context,runs\n");
    for (k, v) in runs {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

pub fn parse_runs_csv(text: &str) -> anyhow::Result<RunCounts> {
    let mut out = RunCounts::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(',')
            .with_context(|| format!("runs file line {}: expected context,runs", n + 1))?;
        let v: u64 = v.trim().parse().with_context(|| format!("runs file line {}", n + 1))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

fn est(s: &mut String, key: &str, e: Estimate) {
    let _ = writeln!(s, "{key} = {:.6}", e.value);
    let _ = writeln!(s, "{key}_err = {:.6}", e.error);
}

fn table_block(s: &mut String, t: &CoincidenceTable, v_key: &str) -> Option<Estimate> {
    let tag = match t.basis {
        MeasureBasis::Eigen => "eigen",
        MeasureBasis::Super => "super",
    };
    let _ = writeln!(s, "runs_{tag} = {}", t.total_runs());
    let _ = writeln!(s, "exclusion_{tag} = {:.6}", t.exclusion_rate());
    let (sl, pl) = (t.spin_labels(), t.photon_labels());
    let g2 = g2_cross(t).ok();
    for i in 0..2 {
        for j in 0..2 {
            let name = format!("{}{}", sl[i], pl[j]);
            let _ = writeln!(s, "n_{name} = {}", t.counts[i][j]);
            let _ = writeln!(s, "C_{name} = {:.6e}", t.c(i, j));
            let _ = writeln!(s, "C_{name}_err = {:.6e}", t.c_sigma(i, j));
            if let Some(g) = &g2 {
                est(s, &format!("g2_{name}"), g[i][j]);
            }
        }
    }
    match visibility(t) {
        Ok(v) => {
            est(s, v_key, v);
            Some(v)
        }
        Err(e) => {
            let _ = writeln!(s, "{v_key} = nan  # {e}");
            None
        }
    }
}

/// Coincidence analysis of every basis with both readout contexts present.
pub fn entanglement_summary(clicks: &[ClickRecord], runs: &RunCounts, eta: f64) -> anyhow::Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "eta = {eta}");
    let present = |b: MeasureBasis| {
        ReadoutBasis::ALL
            .iter()
            .filter(|c| measure_basis(**c) == b)
            .all(|c| runs.get(c.context()).is_some_and(|&n| n > 0))
    };
    let mut vis = [None, None];
    let mut seen = false;
    for (k, (basis, key)) in [(MeasureBasis::Eigen, "Ve"), (MeasureBasis::Super, "Vs")].into_iter().enumerate() {
        if present(basis) {
            let t = build_table(clicks, basis, eta, runs)?;
            vis[k] = table_block(&mut s, &t, key);
            seen = true;
        }
    }
    match vis {
        [Some(ve), Some(vs)] => {
            let f = fidelity_estimate(ve, vs);
            est(&mut s, "F", f.fidelity);
            let _ = writeln!(s, "entangled = {}", f.entangled);
        }
        _ if !seen => bail!("no basis has both readout contexts"),
        _ => {}
    }
    Ok(s)
}

fn fit_lines(s: &mut String, prefix: &str, f: &FitResult, names: &[(&str, &str, f64)]) {
    for (param, key, scale) in names {
        if let Some((v, e)) = f.get(param) {
            let _ = writeln!(s, "{prefix}{key} = {:.6}", v * scale);
            let _ = writeln!(s, "{prefix}{key}_err = {:.6}", e * scale);
        }
    }
    let _ = writeln!(s, "{prefix}fit_converged = {}", f.converged);
    let _ = writeln!(s, "{prefix}reduced_chi2 = {:.6e}", f.reduced_chi2);
}

/// Projected shot-noise error of one point.
fn point_error(preset: StandardPreset, y: f64, shots: f64) -> f64 {
    let binomial = |q: f64| (q.clamp(0.0, 1.0) * (1.0 - q.clamp(0.0, 1.0)) / shots).sqrt();
    match preset {
        StandardPreset::EtaCalibration => binomial(y),
        StandardPreset::PleScan => (y.max(0.0) / shots).sqrt(),
        StandardPreset::TwoPulseMs => y * (2.0 / shots).sqrt(),
        _ => binomial(y * ETA_TARGET) / ETA_TARGET,
    }
}

/// series.csv and summary.txt of a scan experiment.
pub fn scan_files(preset: StandardPreset, cfg: &RunConfig) -> anyhow::Result<Vec<(&'static str, Vec<u8>)>> {
    let grid = cfg.scan.as_deref().context("scan experiments need a grid")?;
    let series = run_standard(preset, grid, &cfg.params)?;
    let mut csv = format!("{},{},yerr\n", series.x_label, series.y_label);
    for (x, y) in series.x.iter().zip(&series.y) {
        let _ = writeln!(csv, "{x},{y:.9},{:.9}", point_error(preset, *y, cfg.shots as f64));
    }
    let mut s = String::new();
    let _ = writeln!(s, "experiment = {}", preset.name());
    let _ = writeln!(s, "points = {}", series.x.len());
    let _ = writeln!(s, "shots_per_point = {}", cfg.shots);
    let fitted = match preset {
        StandardPreset::Odmr => fit_odmr(&series, &cfg.params).map(|[a, b]| {
            fit_lines(&mut s, "mw1_", &a, &[("center", "center_mhz", 1.0), ("hwhm", "hwhm_mhz", 1.0)]);
            fit_lines(&mut s, "mw2_", &b, &[("center", "center_mhz", 1.0), ("hwhm", "hwhm_mhz", 1.0)]);
        }),
        StandardPreset::Ramsey => {
            fit_ramsey(&series).map(|f| fit_lines(&mut s, "", &f, &[("tau", "t2_star_us", 1e-3)]))
        }
        StandardPreset::Hahn => fit_hahn(&series).map(|f| fit_lines(&mut s, "", &f, &[("tau", "t2_us", 1e-3)])),
        StandardPreset::Rabi => {
            fit_rabi(&series).map(|f| fit_lines(&mut s, "", &f, &[("frequency", "rabi_frequency_per_ns", 1.0)]))
        }
        StandardPreset::PleScan => fit_ple(&series).map(|f| {
            fit_lines(&mut s, "", &f, &[("center", "center_mhz", 1.0), ("hwhm", "hwhm_mhz", 1.0)])
        }),
        StandardPreset::TwoPulseMs | StandardPreset::EtaCalibration => {
            let mean = series.y.iter().sum::<f64>() / series.y.len() as f64;
            let _ = writeln!(s, "mean_{} = {mean:.6}", series.y_label);
            Ok(())
        }
    };
    if let Err(e) = fitted {
        let _ = writeln!(s, "fit = failed: {e}");
    }
    Ok(vec![("series.csv", csv.into_bytes()), ("summary.txt", s.into_bytes())])
}
