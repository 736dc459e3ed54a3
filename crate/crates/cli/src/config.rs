//! Flat `key = value` run configuration with `[run]`, `[params]` and
//! `[detection]` sections.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use spinphoton_core::defect::DefectParams;
use spinphoton_core::experiment::EntanglementSetup;
use spinphoton_core::sequence::{grid, ReadoutBasis, StandardPreset};

pub const RUN_KEYS: &[&str] = &[
    "experiment", "preset", "shots", "seed", "scan", "output", "bases", "mode", "apparatus",
];

pub const DETECTION_KEYS: &[&str] = &[
    "objective",
    "solid_angle_with_sil",
    "path",
    "window_fraction",
    "fiber",
    "mz_interferometer",
    "snspd",
    "visibility",
    "phase_jitter_deg",
    "phase_setpoint",
    "delay",
    "extinction_db",
    "dark_count_rate",
    "psb_dark_count_rate",
    "afterpulse_prob",
    "leak_fraction",
    "zpl_window_start",
    "zpl_window_end",
    "eta",
    "bin_gap",
    "instantaneous_mw",
];

pub const EXPERIMENTS: &[&str] = &[
    "entanglement",
    "odmr",
    "rabi",
    "ramsey",
    "hahn",
    "ple_scan",
    "two_pulse_ms",
    "eta_calibration",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Entanglement,
    Standard(StandardPreset),
}

impl Experiment {
    pub fn parse(name: &str) -> Option<Self> {
        if name == "entanglement" {
            return Some(Experiment::Entanglement);
        }
        StandardPreset::from_name(name).ok().map(Experiment::Standard)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Runs drawn from the exact per-run outcome distribution.
    Fast,
    /// Quantum trajectories through the sampled detection chain.
    Trajectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Apparatus {
    Full,
    Ideal,
}

/// One violated rule, tied to the key that caused it.
#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn issue(key: &str, message: impl Into<String>) -> Issue {
    Issue {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Raw entries per section, in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    pub run: BTreeMap<String, String>,
    pub params: Vec<(String, String)>,
    pub detection: Vec<(String, String)>,
}

impl RawConfig {
    /// Parses the text form; syntax problems are returned as issues.
    pub fn parse(text: &str) -> (Self, Vec<Issue>) {
        let mut raw = RawConfig::default();
        let mut issues = Vec::new();
        let mut section = "run".to_string();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["run", "params", "detection"].contains(&section.as_str()) {
                    issues.push(issue(
                        &format!("[{section}]"),
                        format!("line {}: unknown section{}", n + 1, suggest(&section, &["run", "params", "detection"])),
                    ));
                }
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                issues.push(issue(&format!("line {}", n + 1), "expected `key = value`"));
                continue;
            };
            raw.insert(&section, k.trim(), v.trim());
        }
        (raw, issues)
    }

    pub fn insert(&mut self, section: &str, key: &str, value: &str) {
        let entry = (key.to_string(), value.to_string());
        match section {
            "run" => {
                self.run.insert(entry.0, entry.1);
            }
            "params" => self.params.push(entry),
            "detection" => self.detection.push(entry),
            _ => {}
        }
    }
}

/// Nearest valid key as a `; did you mean ...` suffix.
pub fn suggest(key: &str, valid: &[&str]) -> String {
    valid
        .iter()
        .map(|v| (strsim::jaro_winkler(key, v), *v))
        .filter(|(s, _)| *s > 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, v)| format!("; did you mean `{v}`?"))
        .unwrap_or_default()
}

/// Fully checked configuration of one run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub preset: String,
    pub shots: u64,
    pub seed: u64,
    pub scan: Option<Vec<f64>>,
    pub output: PathBuf,
    pub bases: Vec<ReadoutBasis>,
    pub mode: Mode,
    pub apparatus: Apparatus,
    pub params: DefectParams,
    pub setup: EntanglementSetup,
}

pub fn default_output() -> PathBuf {
    std::env::var_os("SPINPHOTON_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("spinphoton-out"))
}

fn parse_scan(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("expected start:stop:step, got `{s}`"))?;
    if parts.len() != 3 {
        return Err(format!("expected start:stop:step, got `{s}`"));
    }
    grid(parts[0], parts[1], parts[2]).map_err(|e| e.to_string())
}

fn parse_bases(s: &str) -> Result<Vec<ReadoutBasis>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "eigen" => out.extend([ReadoutBasis::EigenUp, ReadoutBasis::EigenDown]),
            "super" => out.extend([ReadoutBasis::SuperPlus, ReadoutBasis::SuperMinus]),
            "all" => out.extend(ReadoutBasis::ALL),
            ctx => out.push(ReadoutBasis::from_context(ctx).ok_or_else(|| {
                format!("unknown basis `{ctx}` (eigen, super, all or a context such as eigen/up)")
            })?),
        }
    }
    out.dedup();
    if out.is_empty() {
        return Err("no basis given".into());
    }
    Ok(out)
}

fn apply_detection(setup: &mut EntanglementSetup, key: &str, value: &str) -> Result<(), String> {
    if key == "instantaneous_mw" {
        setup.timing.instantaneous_mw = value
            .parse()
            .map_err(|_| format!("expected true or false, got `{value}`"))?;
        return Ok(());
    }
    let v: f64 = value.parse().map_err(|_| format!("not a number: `{value}`"))?;
    let (c, i, n) = (&mut setup.chain, &mut setup.ifm, &mut setup.noise);
    match key {
        "objective" => c.objective = v,
        "solid_angle_with_sil" => c.solid_angle_with_sil = v,
        "path" => c.path = v,
        "window_fraction" => c.window_fraction = v,
        "fiber" => c.fiber = v,
        "mz_interferometer" => c.mz_interferometer = v,
        "snspd" => c.snspd = v,
        "visibility" => i.visibility = v,
        "phase_jitter_deg" => i.phase_jitter_deg = v,
        "phase_setpoint" => i.phase_setpoint = v,
        "delay" => i.delay = v,
        "extinction_db" => n.extinction_db = v,
        "dark_count_rate" => n.dark_count_rate = v,
        "psb_dark_count_rate" => n.psb_dark_count_rate = v,
        "afterpulse_prob" => n.afterpulse_prob = v,
        "leak_fraction" => n.leak_fraction = v,
        "zpl_window_start" => n.zpl_window.0 = v,
        "zpl_window_end" => n.zpl_window.1 = v,
        "eta" => setup.eta = v,
        "bin_gap" => setup.timing.bin_gap = v,
        _ => return Err(format!("unknown detection key{}", suggest(key, DETECTION_KEYS))),
    }
    Ok(())
}

impl RunConfig {
    /// Checks every rule and returns either the config or all issues found.
    pub fn from_raw(raw: &RawConfig) -> Result<Self, Vec<Issue>> {
        let mut issues = Vec::new();
        let get = |k: &str| raw.run.get(k).map(String::as_str);
        for k in raw.run.keys() {
            if !RUN_KEYS.contains(&k.as_str()) {
                issues.push(issue(k, format!("unknown run key{}", suggest(k, RUN_KEYS))));
            }
        }
        let experiment = match get("experiment") {
            None => {
                issues.push(issue("experiment", "missing"));
                None
            }
            Some(e) => Experiment::parse(e).or_else(|| {
                issues.push(issue("experiment", format!("unknown experiment `{e}`{}", suggest(e, EXPERIMENTS))));
                None
            }),
        };
        let preset = get("preset").unwrap_or("v1").to_string();
        let mut params = match preset.as_str() {
            "custom" => DefectParams::v1(),
            p => DefectParams::preset(p).unwrap_or_else(|_| {
                issues.push(issue("preset", format!("unknown preset `{p}` (v1, v2 or custom)")));
                DefectParams::v1()
            }),
        };
        let shots = match get("shots").map(str::parse::<u64>) {
            None => 1000,
            Some(Ok(n)) if n >= 1 => n,
            Some(Ok(_)) => {
                issues.push(issue("shots", "must be at least 1"));
                1
            }
            Some(Err(_)) => {
                issues.push(issue("shots", "not a non-negative integer"));
                1
            }
        };
        let seed = match get("seed").map(str::parse::<u64>) {
            None => 0,
            Some(Ok(s)) => s,
            Some(Err(_)) => {
                issues.push(issue("seed", "not a 64-bit unsigned integer"));
                0
            }
        };
        let scan = get("scan").and_then(|s| {
            parse_scan(s).map_err(|m| issues.push(issue("scan", m))).ok()
        });
        if let (Some(Experiment::Standard(_)), None) = (experiment, &scan) {
            if get("scan").is_none() {
                issues.push(issue("scan", "required for scan experiments"));
            }
        }
        let bases = parse_bases(get("bases").unwrap_or("all")).unwrap_or_else(|m| {
            issues.push(issue("bases", m));
            ReadoutBasis::ALL.to_vec()
        });
        let mode = match get("mode").unwrap_or("fast") {
            "fast" => Mode::Fast,
            "trajectory" => Mode::Trajectory,
            m => {
                issues.push(issue("mode", format!("unknown mode `{m}` (fast or trajectory)")));
                Mode::Fast
            }
        };
        let apparatus = match get("apparatus").unwrap_or("full") {
            "full" => Apparatus::Full,
            "ideal" => Apparatus::Ideal,
            a => {
                issues.push(issue("apparatus", format!("unknown apparatus `{a}` (full or ideal)")));
                Apparatus::Full
            }
        };
        for (k, v) in &raw.params {
            if !DefectParams::KEYS.contains(&k.as_str()) {
                issues.push(issue(k, format!("unknown parameter{}", suggest(k, DefectParams::KEYS))));
            } else if let Err(e) = params.set(k, v) {
                issues.push(issue(k, e.to_string()));
            }
        }
        for (k, why) in params.issues() {
            issues.push(issue(k, why));
        }
        let mut setup = match apparatus {
            Apparatus::Full => EntanglementSetup::full_noise(&params),
            Apparatus::Ideal => EntanglementSetup::ideal_apparatus(&params),
        };
        let mut chain_touched = false;
        for (k, v) in &raw.detection {
            match apply_detection(&mut setup, k, v) {
                Ok(()) => chain_touched |= ["mz_interferometer", "snspd"].contains(&k.as_str()),
                Err(m) => issues.push(issue(k, m)),
            }
        }
        if chain_touched && apparatus == Apparatus::Full {
            setup.ifm.efficiency = setup.chain.measurement();
        }
        if issues.is_empty() {
            if let Err(e) = setup.validate() {
                issues.push(issue("detection", e.to_string()));
            }
        }
        let output = get("output").map(PathBuf::from).unwrap_or_else(default_output);
        match (issues.is_empty(), experiment) {
            (true, Some(experiment)) => Ok(Self {
                experiment,
                preset,
                shots,
                seed,
                scan,
                output,
                bases,
                mode,
                apparatus,
                params: setup.params.clone(),
                setup,
            }),
            _ => Err(issues),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(text: &str) -> Result<RunConfig, Vec<Issue>> {
        let (raw, mut issues) = RawConfig::parse(text);
        let out = RunConfig::from_raw(&raw);
        match out {
            Ok(c) if issues.is_empty() => Ok(c),
            Ok(_) => Err(issues),
            Err(e) => {
                issues.extend(e);
                Err(issues)
            }
        }
    }

    #[test]
    fn valid_file() {
        let c = check("[run]\nexperiment = odmr\nscan = 55:80:0.5\nseed = 3\n[params]\neta_q = 0.5\n").unwrap();
        assert_eq!(c.experiment, Experiment::Standard(StandardPreset::Odmr));
        assert_eq!(c.scan.unwrap().len(), 51);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn zero_shots_is_reported() {
        let e = check("experiment = entanglement\nshots = 0\n").unwrap_err();
        assert_eq!(e[0].key, "shots");
    }

    #[test]
    fn unknown_key_gets_a_suggestion() {
        let e = check("experiment = entanglement\n[params]\neta_x = 0.3\n").unwrap_err();
        assert_eq!(e[0].key, "eta_x");
        assert!(e[0].message.contains("did you mean `eta_"));
    }

    #[test]
    fn all_issues_are_listed() {
        let e = check("experiment = odmrr\nshots = -1\nmode = slow\n[params]\neta_q = 2\n").unwrap_err();
        let keys: Vec<_> = e.iter().map(|i| i.key.as_str()).collect();
        for k in ["experiment", "shots", "mode", "eta_q"] {
            assert!(keys.contains(&k), "{keys:?}");
        }
    }
}
