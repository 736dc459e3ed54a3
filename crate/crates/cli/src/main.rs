use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use spinphoton_core::budget::{
    detected_probability, generation_breakdown, generation_probability, ms_survival_fraction,
    nonradiative_fidelity, purcell_budget, InfidelityInputs, PurcellInputs,
};
use spinphoton_core::defect::DefectParams;
use spinphoton_core::detection::{read_clicks, write_clicks, EfficiencyChain};
use spinphoton_core::experiment::{simulate_fast, simulate_trajectories, SimulatedClicks};

mod config;
mod report;

use config::{Apparatus, Experiment, Mode, RawConfig, RunConfig};

#[derive(Parser)]
#[command(name = "spinphoton", version, about = "Spin-photon entanglement simulator and analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write clicks.csv, runs.csv, series.csv and summary.txt.
    Simulate(SimulateArgs),
    /// Re-run the analysis on an existing clicks.csv.
    Analyze(AnalyzeArgs),
    /// Print the photon budget and the non-radiative fidelity oracle.
    Budget(BudgetArgs),
    /// Check a configuration file without running it.
    Validate { path: PathBuf },
}

#[derive(Args, Default)]
struct SimulateArgs {
    /// Configuration file; flags override its `[run]` entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    /// v1, v2 or custom.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    shots: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// start:stop:step
    #[arg(long)]
    scan: Option<String>,
    /// eigen, super, all or a comma-separated list of contexts.
    #[arg(long)]
    bases: Option<String>,
    /// fast or trajectory.
    #[arg(long)]
    mode: Option<String>,
    /// full or ideal.
    #[arg(long)]
    apparatus: Option<String>,
    /// Output directory (default: $SPINPHOTON_OUT or ./spinphoton-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defect parameter override, key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Detection override, key=value.
    #[arg(long = "detect", value_name = "KEY=VALUE")]
    detection: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    clicks: PathBuf,
    /// Run counts per context; inferred from trajectory ids when absent.
    #[arg(long)]
    runs: Option<PathBuf>,
    #[arg(long, default_value_t = spinphoton_core::detection::ETA_TARGET)]
    eta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value = "v1")]
    preset: String,
    /// Bin gap used for the MS survival, ns; infinite by default.
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Budget(a) => budget(a),
        Command::Validate { path } => validate(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn split_pair(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Failure::Config(format!("expected key=value, got `{s}`")))
}

fn raw_from_args(a: &SimulateArgs) -> Result<RawConfig, Failure> {
    let mut raw = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            let (raw, issues) = RawConfig::parse(&text);
            if let Some(i) = issues.first() {
                return Err(Failure::Config(i.to_string()));
            }
            raw
        }
        None => RawConfig::default(),
    };
    let flags = [
        ("experiment", &a.experiment),
        ("preset", &a.preset),
        ("shots", &a.shots),
        ("seed", &a.seed),
        ("scan", &a.scan),
        ("bases", &a.bases),
        ("mode", &a.mode),
        ("apparatus", &a.apparatus),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            raw.insert("run", k, v);
        }
    }
    if let Some(out) = &a.out {
        raw.insert("run", "output", &out.to_string_lossy());
    }
    for p in &a.params {
        let (k, v) = split_pair(p)?;
        raw.insert("params", k, v);
    }
    for p in &a.detection {
        let (k, v) = split_pair(p)?;
        raw.insert("detection", k, v);
    }
    Ok(raw)
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let raw = raw_from_args(&a)?;
    let cfg = RunConfig::from_raw(&raw).map_err(|issues| {
        Failure::Config(issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))
    })?;
    let files = match cfg.experiment {
        Experiment::Entanglement => {
            let sim = match cfg.mode {
                Mode::Fast => simulate_fast(&cfg.setup, &cfg.bases, cfg.shots, cfg.seed),
                Mode::Trajectory => simulate_trajectories(&cfg.setup, &cfg.bases, cfg.shots, cfg.seed),
            }
            .context("simulation failed")?;
            entanglement_files(&sim, cfg.setup.eta, &run_header(&cfg))?
        }
        Experiment::Standard(preset) => report::scan_files(preset, &cfg)?,
    };
    write_outputs(&cfg.output, &files)?;
    println!("wrote {} files to {}", files.len(), cfg.output.display());
    Ok(())
}

fn run_header(cfg: &RunConfig) -> String {
    let apparatus = match cfg.apparatus {
        Apparatus::Full => "full",
        Apparatus::Ideal => "ideal",
    };
    let mode = match cfg.mode {
        Mode::Fast => "fast",
        Mode::Trajectory => "trajectory",
    };
    format!(
        "experiment = entanglement\npreset = {}\napparatus = {apparatus}\nmode = {mode}\nshots = {}\nseed = {}\n",
        cfg.preset, cfg.shots, cfg.seed
    )
}

fn entanglement_files(
    sim: &SimulatedClicks,
    eta: f64,
    header: &str,
) -> anyhow::Result<Vec<(&'static str, Vec<u8>)>> {
    let mut clicks = Vec::new();
    write_clicks(&mut clicks, &sim.clicks)?;
    let summary = header.to_string() + &report::entanglement_summary(&sim.clicks, &sim.runs, eta)?;
    Ok(vec![
        ("clicks.csv", clicks),
        ("runs.csv", report::runs_csv(&sim.runs).into_bytes()),
        ("summary.txt", summary.into_bytes()),
    ])
}

/// Writes all files or none: anything written before a failure is removed.
fn write_outputs(dir: &Path, files: &[(&str, Vec<u8>)]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e).with_context(|| format!("cannot write {}", path.display()));
        }
        written.push(path);
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let file = fs::File::open(&a.clicks)
        .with_context(|| format!("cannot open {}", a.clicks.display()))?;
    let clicks = read_clicks(file).context("malformed click file")?;
    let runs = match &a.runs {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            report::parse_runs_csv(&text)?
        }
        None => {
            eprintln!("warning: run counts inferred from trajectory ids (lower bound)");
            spinphoton_core::analysis::infer_run_counts(&clicks)
        }
    };
    let summary = report::entanglement_summary(&clicks, &runs, a.eta)?;
    let out = a.out.unwrap_or_else(config::default_output);
    write_outputs(&out, &[("summary.txt", summary.clone().into_bytes())])?;
    print!("{summary}");
    Ok(())
}

fn budget(a: BudgetArgs) -> Result<(), Failure> {
    let mut params = DefectParams::preset(&a.preset).map_err(|e| Failure::Config(e.to_string()))?;
    for p in &a.params {
        let (k, v) = split_pair(p)?;
        params.set(k, v).map_err(|e| Failure::Config(e.to_string()))?;
    }
    let chain = EfficiencyChain::default();
    for (name, v) in generation_breakdown(&chain, params.eta_q, params.eta_d) {
        println!("{name} = {v}");
    }
    let gap = a.gap.unwrap_or(f64::INFINITY);
    let nr = nonradiative_fidelity(&InfidelityInputs::from_params(&params, gap));
    println!("ms_survival = {:.4}", ms_survival_fraction(gap, params.ms_lifetime));
    println!("w1 = {:.4e}", nr.w1);
    println!("w2 = {:.4e}", nr.w2);
    println!("nonradiative_fidelity = {:.4}", nr.fidelity);
    println!("purcell_budget = {:.3}", purcell_budget(&PurcellInputs::default()));
    println!("detected_probability = {:.1e}", detected_probability(&chain, params.eta_q, params.eta_d));
    println!("generation_probability = {:.1e}", generation_probability(&chain, params.eta_q, params.eta_d));
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let (raw, mut issues) = RawConfig::parse(&text);
    if let Err(more) = RunConfig::from_raw(&raw) {
        issues.extend(more);
    }
    if issues.is_empty() {
        println!("ok, 0 issues");
        return Ok(());
    }
    println!("{} issue{}", issues.len(), if issues.len() == 1 { "" } else { "s" });
    for i in &issues {
        println!("  {i}");
    }
    Err(Failure::Config(format!("{} invalid", path.display())))
}
