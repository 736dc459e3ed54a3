//! Spin characterization experiments evaluated with the exact engine.

use rayon::prelude::*;

use crate::analysis::{fit, FitModel, FitResult};
use crate::defect::{transition_table, DefectParams, DEFECT_DIM};
use crate::detection::{PsbReadout, ETA_TARGET};
use crate::dynamics::{run_sequence_exact_detailed, ExactOptions};
use crate::error::{Error, Result};
use crate::sequence::{compile, preset_standard, Segment, StandardPreset, SPIN_READOUT};
use crate::state::Factor;

/// One measured curve.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinSeries {
    pub preset: StandardPreset,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_label: &'static str,
    pub y_label: &'static str,
}

impl SpinSeries {
    /// CSV text with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}\n", self.x_label, self.y_label);
        for (x, y) in self.x.iter().zip(&self.y) {
            s.push_str(&format!("{x},{y:.9}\n"));
        }
        s
    }
}

fn labels(preset: StandardPreset) -> (&'static str, &'static str) {
    match preset {
        StandardPreset::Odmr => ("mw_freq_mhz", "bright_fraction"),
        StandardPreset::Rabi => ("mw_duration_ns", "bright_fraction"),
        StandardPreset::Ramsey | StandardPreset::Hahn => ("free_time_ns", "bright_fraction"),
        StandardPreset::PleScan => ("laser_detuning_mhz", "photons_per_pulse"),
        StandardPreset::TwoPulseMs => ("delay_ns", "n2_over_n1"),
        StandardPreset::EtaCalibration => ("point", "psb_click_probability"),
    }
}

/// Evaluates a standard experiment at each grid point.
///
/// Spin experiments report the PSB click probability divided by the
/// calibrated `P(click | ↑)`, i.e. the bright (±3/2) fraction.
pub fn run_standard(preset: StandardPreset, grid: &[f64], params: &DefectParams) -> Result<SpinSeries> {
    params.validate()?;
    let seqs = preset_standard(preset, grid, params)?;
    let readout = PsbReadout::calibrated(params, SPIN_READOUT, ETA_TARGET)?;
    let clicks = readout.click_probabilities();
    let y: Vec<f64> = seqs
        .par_iter()
        .map(|s| {
            let c = compile(s, params)?;
            let run = run_sequence_exact_detailed(&c, params, &ExactOptions::default())?;
            Ok(match preset {
                StandardPreset::PleScan => run.fluxes.iter().map(|f| f.total(|t| t.is_radiative())).sum(),
                StandardPreset::TwoPulseMs => two_pulse_ratio(&c, &run)?,
                _ => {
                    let rho = run.state.partial_trace(&[Factor::Defect])?;
                    let p: f64 = (0..DEFECT_DIM).map(|i| rho[(i, i)].re * clicks[i]).sum();
                    if preset == StandardPreset::EtaCalibration {
                        p
                    } else {
                        p / ETA_TARGET
                    }
                }
            })
        })
        .collect::<Result<_>>()?;
    let (x_label, y_label) = labels(preset);
    Ok(SpinSeries {
        preset,
        x: grid.to_vec(),
        y,
        x_label,
        y_label,
    })
}

/// Radiative photons after the second optical π over those after the first.
fn two_pulse_ratio(seq: &crate::sequence::CompiledSequence, run: &crate::dynamics::ExactRun) -> Result<f64> {
    let pulses: Vec<f64> = {
        let mut t = Vec::new();
        let mut now = 0.0;
        for s in &seq.segments {
            match s {
                Segment::Unitary(_) => t.push(now),
                Segment::Evolve(e) => now = e.end(),
                _ => {}
            }
        }
        t
    };
    if pulses.len() < 2 {
        return Err(Error::Sequence("two-pulse sequence needs two optical pulses".into()));
    }
    let rad = |t: crate::dynamics::JumpTag| t.is_radiative();
    let n1 = run.flux_between(pulses[0], pulses[1], rad);
    let n2 = run.flux_between(pulses[1], f64::INFINITY, rad);
    if n1 <= 0.0 {
        return Err(Error::param("two_pulse", "no emission after the first pulse"));
    }
    Ok(n2 / n1)
}

/// Lorentzian fits of the two ODMR dips, MW1 first.
pub fn fit_odmr(series: &SpinSeries, params: &DefectParams) -> Result<[FitResult; 2]> {
    let tt = transition_table(params);
    let split = 0.5 * (tt.mw1_freq + tt.mw2_freq);
    let part = |lower: bool| {
        let (x, y): (Vec<f64>, Vec<f64>) = series
            .x
            .iter()
            .zip(&series.y)
            .filter(|(x, _)| (**x < split) == lower)
            .map(|(a, b)| (*a, *b))
            .unzip();
        fit(&x, &y, &[], FitModel::Lorentzian)
    };
    let (a, b) = (part(true)?, part(false)?);
    Ok(if tt.mw1_freq < tt.mw2_freq { [a, b] } else { [b, a] })
}

/// Gaussian decay fit of a Ramsey curve; `tau` is T2* in ns.
pub fn fit_ramsey(series: &SpinSeries) -> Result<FitResult> {
    fit(&series.x, &series.y, &[], FitModel::GaussianDecay)
}

/// Exponential fit of a Hahn echo curve; `tau` is T2 in ns.
pub fn fit_hahn(series: &SpinSeries) -> Result<FitResult> {
    fit(&series.x, &series.y, &[], FitModel::Exponential)
}

/// Sinusoid fit of a Rabi curve.
pub fn fit_rabi(series: &SpinSeries) -> Result<FitResult> {
    fit(&series.x, &series.y, &[], FitModel::Sinusoid)
}

/// Lorentzian fit of a PLE scan (fitted as a negative dip).
pub fn fit_ple(series: &SpinSeries) -> Result<FitResult> {
    let y: Vec<f64> = series.y.iter().map(|v| -v).collect();
    fit(&series.x, &y, &[], FitModel::Lorentzian)
}
