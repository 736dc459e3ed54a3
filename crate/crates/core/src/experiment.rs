//! Virtual experiments built from sequences, dynamics and the detection chain.

use rayon::prelude::*;

use crate::analysis::{Estimate, RunCounts};
use crate::defect::DefectParams;
use crate::detection::{
    detect_pure, sample_arrival, zpl_classes, ClickChannel, ClickRecord, DetectionSetup,
    EfficiencyChain, InterferometerModel, MeasureBasis, NoiseModel, PsbReadout, TimeBin,
    ETA_TARGET,
};
use crate::dynamics::{run_sequence_exact, TrajectoryPlan};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RandomStream};
use crate::sequence::{
    compile, preset_entanglement, CompiledSequence, EntanglementTiming, ReadoutBasis, Segment,
};
use crate::state::{conditional_fidelity, BellTarget, CompositeState};

mod spin;

pub use spin::*;

/// Readout contexts measured in a basis: spin outcome ↑/+ first.
pub fn basis_contexts(basis: MeasureBasis) -> [ReadoutBasis; 2] {
    match basis {
        MeasureBasis::Eigen => [ReadoutBasis::EigenUp, ReadoutBasis::EigenDown],
        MeasureBasis::Super => [ReadoutBasis::SuperPlus, ReadoutBasis::SuperMinus],
    }
}

pub fn measure_basis(basis: ReadoutBasis) -> MeasureBasis {
    if basis.is_eigen() {
        MeasureBasis::Eigen
    } else {
        MeasureBasis::Super
    }
}

/// Defect, timing and apparatus of an entanglement run.
#[derive(Clone, Debug)]
pub struct EntanglementSetup {
    pub params: DefectParams,
    pub timing: EntanglementTiming,
    pub chain: EfficiencyChain,
    /// Basis-independent interferometer settings; the basis is set per context.
    pub ifm: InterferometerModel,
    pub noise: NoiseModel,
    /// Target `P(PSB click | ↑)` of the calibrated readout.
    pub eta: f64,
}

impl EntanglementSetup {
    /// Every modeled imperfection at its default value.
    pub fn full_noise(params: &DefectParams) -> Self {
        let chain = EfficiencyChain::default();
        Self {
            params: params.clone(),
            timing: EntanglementTiming::for_params(params),
            chain,
            ifm: InterferometerModel {
                efficiency: chain.measurement(),
                ..Default::default()
            },
            noise: NoiseModel::default(),
            eta: ETA_TARGET,
        }
    }

    /// Lossless, noiseless apparatus with perfect spin control and full PSB
    /// collection. Defect rates and decoherence are kept.
    pub fn ideal_apparatus(params: &DefectParams) -> Self {
        let params = DefectParams {
            init_fidelity: 1.0,
            mw_pi_fidelity: 1.0,
            optical_pi_error: 0.0,
            ..params.clone()
        };
        let timing = EntanglementTiming::for_params(&params);
        let eta = PsbReadout::new(&params, timing.readout, 1.0).click_probabilities()[0];
        Self {
            timing,
            params,
            chain: EfficiencyChain::ideal(),
            ifm: InterferometerModel {
                visibility: 1.0,
                phase_jitter_deg: 0.0,
                efficiency: 1.0,
                ..Default::default()
            },
            noise: NoiseModel::silent(),
            eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let issues: Vec<_> = self
            .chain
            .issues()
            .into_iter()
            .chain(self.ifm.issues())
            .chain(self.noise.issues())
            .collect();
        if let Some((k, why)) = issues.into_iter().next() {
            return Err(Error::param(k, why));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::BadEta(self.eta));
        }
        Ok(())
    }

    pub fn sequence(&self, basis: ReadoutBasis) -> Result<CompiledSequence> {
        compile(&preset_entanglement(self.timing, basis)?, &self.params)
    }

    pub fn readout(&self) -> Result<PsbReadout> {
        let mut r = PsbReadout::calibrated(&self.params, self.timing.readout, self.eta)?;
        r.dark_rate = self.noise.psb_dark_count_rate;
        Ok(r)
    }

    /// Detection settings for one readout context of a compiled sequence.
    pub fn detection(&self, seq: &CompiledSequence, basis: ReadoutBasis) -> Result<DetectionSetup> {
        let excitations = excitation_times(seq);
        let (readout_start, _) = seq
            .readout()
            .ok_or_else(|| Error::Sequence("entanglement sequence without readout".into()))?;
        Ok(DetectionSetup {
            params: self.params.clone(),
            chain: self.chain,
            ifm: self.ifm.with_basis(measure_basis(basis)),
            noise: self.noise,
            readout: self.readout()?,
            excitations,
            readout_start,
            bin_window: self.timing.window,
            basis_context: basis.context().to_string(),
        })
    }
}

/// Start times of the early and late bins.
fn excitation_times(seq: &CompiledSequence) -> [f64; 2] {
    let mut out = [0.0; 2];
    let mut k = 0;
    for s in &seq.segments {
        if let Segment::Evolve(e) = s {
            if let Some((_, t)) = e.bin {
                if k < 2 && (k == 0 || t > out[0]) {
                    out[k] = t;
                    k += 1;
                }
            }
        }
    }
    out
}

/// Exact Bell fidelity of the state before readout, conditioned on a photon
/// in either bin.
pub fn exact_conditional_fidelity(params: &DefectParams, timing: EntanglementTiming) -> Result<f64> {
    let seq = compile(&preset_entanglement(timing, ReadoutBasis::EigenUp)?, params)?;
    conditional_fidelity(&run_sequence_exact(&seq, params)?, &BellTarget)
}

/// Trajectory estimate of the conditional Bell fidelity (ratio estimator
/// with a first-order error).
pub fn trajectory_conditional_fidelity(
    params: &DefectParams,
    timing: EntanglementTiming,
    shots: u64,
    seed: u64,
) -> Result<Estimate> {
    if shots < 2 {
        return Err(Error::ZeroRuns);
    }
    let seq = compile(&preset_entanglement(timing, ReadoutBasis::EigenUp)?, params)?;
    let plan = TrajectoryPlan::new(&seq, params)?;
    let target = BellTarget.vector();
    let pairs: Vec<(f64, f64)> = (0..shots)
        .into_par_iter()
        .map(|i| {
            let r = plan.run(seed, i)?;
            let psi = r.final_state.data();
            let w = 1.0 - r.final_state.photon_weights()[0];
            Ok((psi.inner(&target).norm_sqr(), w))
        })
        .collect::<Result<_>>()?;
    let n = shots as f64;
    let (sf, sw) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    if sw <= 0.0 {
        return Err(Error::ZeroRuns);
    }
    let ratio = sf / sw;
    let var = pairs
        .iter()
        .map(|(f, w)| (f - ratio * w).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let err = (var / n).sqrt() / (sw / n);
    Ok(Estimate::new(ratio, err))
}

/// Outcome distribution of one run: `p[class][psb]` with ZPL classes none,
/// single `j = 0`, single `j = 1`, several; `psb` is 1 when the spin readout
/// clicked.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunDistribution {
    pub context: ReadoutBasis,
    pub p: [[f64; 2]; 4],
}

impl RunDistribution {
    pub fn flat(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for c in 0..4 {
            for b in 0..2 {
                out[2 * c + b] = self.p[c][b].max(0.0);
            }
        }
        out
    }
}

/// Exact outcome distribution of one readout context including detector
/// background.
pub fn run_distribution(setup: &EntanglementSetup, basis: ReadoutBasis) -> Result<RunDistribution> {
    let seq = setup.sequence(basis)?;
    let det = setup.detection(&seq, basis)?;
    let state = run_sequence_exact(&seq, &setup.params)?;
    Ok(distribution_from_state(&state, &det, basis))
}

fn distribution_from_state(state: &CompositeState, det: &DetectionSetup, basis: ReadoutBasis) -> RunDistribution {
    let t = det.fiber_transmission() * det.window_probability();
    let classes = zpl_classes(state, t, &det.ifm);
    let clicks = det.readout.click_probabilities();
    let psb = |m: &crate::linalg::ComplexMatrix| -> f64 {
        (0..clicks.len()).map(|i| m[(i, i)].re * clicks[i]).sum()
    };
    // [class][psb] of the signal alone
    let sig: Vec<[f64; 2]> = classes
        .iter()
        .map(|(p, m)| {
            let c = psb(m).clamp(0.0, *p);
            [p - c, c]
        })
        .collect();
    let windows = match measure_basis(basis) {
        MeasureBasis::Eigen => 2.0,
        MeasureBasis::Super => 1.0,
    };
    let lambda = 2.0 * windows * det.noise.background_per_window(&det.chain);
    let p0 = (-lambda).exp();
    let p1 = lambda * p0;
    let p2 = 1.0 - p0 - p1;
    let mut p = [[0.0; 2]; 4];
    for b in 0..2 {
        p[0][b] = sig[0][b] * p0;
        p[1][b] = sig[0][b] * p1 / 2.0 + sig[1][b] * p0;
        p[2][b] = sig[0][b] * p1 / 2.0 + sig[2][b] * p0;
        p[3][b] = sig[0][b] * p2 + (sig[1][b] + sig[2][b]) * (1.0 - p0) + sig[3][b];
    }
    RunDistribution { context: basis, p }
}

/// Closed-form expectation of a coincidence table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedTable {
    pub basis: MeasureBasis,
    pub p_ij: [[f64; 2]; 2],
    pub p_i: [f64; 2],
    pub p_j: [f64; 2],
    pub eta: f64,
}

impl ExpectedTable {
    pub fn from_distributions(basis: MeasureBasis, d: [RunDistribution; 2], eta: f64) -> Self {
        let mut t = ExpectedTable {
            basis,
            p_ij: [[0.0; 2]; 2],
            p_i: [0.0; 2],
            p_j: [0.0; 2],
            eta,
        };
        for (i, di) in d.iter().enumerate() {
            for j in 0..2 {
                t.p_ij[i][j] = di.p[1 + j][1];
                t.p_j[j] += 0.5 * (di.p[1 + j][0] + di.p[1 + j][1]);
            }
            t.p_i[i] = (0..4).map(|c| di.p[c][1]).sum();
        }
        t
    }

    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.p_ij[i][j] / self.eta
    }

    pub fn visibility(&self) -> f64 {
        let a = self.c(0, 0) + self.c(1, 1);
        let b = self.c(0, 1) + self.c(1, 0);
        (a - b) / (a + b)
    }

    pub fn g2(&self) -> [[f64; 2]; 2] {
        let mut g = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = self.p_ij[i][j] / (self.p_i[i] * self.p_j[j]);
            }
        }
        g
    }
}

pub fn expected_table(setup: &EntanglementSetup, basis: MeasureBasis) -> Result<ExpectedTable> {
    setup.validate()?;
    let [a, b] = basis_contexts(basis);
    Ok(ExpectedTable::from_distributions(
        basis,
        [run_distribution(setup, a)?, run_distribution(setup, b)?],
        setup.eta,
    ))
}

/// Expected visibilities and the fidelity estimate of a setup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedSummary {
    pub eigen: ExpectedTable,
    pub super_: ExpectedTable,
}

impl ExpectedSummary {
    pub fn fidelity(&self) -> f64 {
        (1.0 + self.eigen.visibility() + 2.0 * self.super_.visibility()) / 4.0
    }
}

pub fn expected_summary(setup: &EntanglementSetup) -> Result<ExpectedSummary> {
    Ok(ExpectedSummary {
        eigen: expected_table(setup, MeasureBasis::Eigen)?,
        super_: expected_table(setup, MeasureBasis::Super)?,
    })
}

/// Click records of `runs` protocol runs per readout context.
#[derive(Clone, Debug, Default)]
pub struct SimulatedClicks {
    pub clicks: Vec<ClickRecord>,
    pub runs: RunCounts,
}

fn context_index(basis: ReadoutBasis) -> u64 {
    ReadoutBasis::ALL.iter().position(|b| *b == basis).unwrap() as u64
}

/// Fast path: runs are drawn from the exact per-run outcome distribution.
///
/// Each run yields at most one PSB record, placed uniformly in the readout
/// window; only its presence enters the analysis.
pub fn simulate_fast(
    setup: &EntanglementSetup,
    contexts: &[ReadoutBasis],
    runs: u64,
    seed: u64,
) -> Result<SimulatedClicks> {
    setup.validate()?;
    if runs == 0 {
        return Err(Error::ZeroRuns);
    }
    let mut out = SimulatedClicks::default();
    for &basis in contexts {
        let seq = setup.sequence(basis)?;
        let det = setup.detection(&seq, basis)?;
        let state = run_sequence_exact(&seq, &setup.params)?;
        let dist = distribution_from_state(&state, &det, basis).flat();
        let mut rng = RandomStream::new(seed, Purpose::FastRun, context_index(basis));
        let pair = ClickChannel::zpl_pair(measure_basis(basis));
        let (w0, w1) = det.noise.zpl_window;
        for id in 0..runs {
            let k = rng.categorical(&dist);
            let (class, psb) = (k / 2, k % 2 == 1);
            let mut zpl = |j: usize, rng: &mut RandomStream| {
                let (bin, base) = match (measure_basis(basis), j) {
                    (MeasureBasis::Eigen, 1) => (TimeBin::E, det.excitations[0]),
                    _ => (TimeBin::L, det.excitations[1]),
                };
                let s = loop {
                    let s = sample_arrival(&det.params, det.bin_window, rng);
                    if s >= w0 && s <= w1 {
                        break s;
                    }
                };
                out.clicks.push(ClickRecord {
                    trajectory_id: id,
                    channel: pair[j],
                    time: base + s,
                    bin,
                    basis_context: det.basis_context.clone(),
                });
            };
            match class {
                1 | 2 => zpl(class - 1, &mut rng),
                3 => {
                    let a = (rng.uniform() * 2.0) as usize;
                    let b = (rng.uniform() * 2.0) as usize;
                    zpl(a, &mut rng);
                    zpl(b, &mut rng);
                }
                _ => {}
            }
            if psb {
                out.clicks.push(ClickRecord {
                    trajectory_id: id,
                    channel: ClickChannel::Psb,
                    time: det.readout_start + rng.uniform() * det.readout.duration,
                    bin: TimeBin::Na,
                    basis_context: det.basis_context.clone(),
                });
            }
        }
        out.runs.insert(basis.context().to_string(), runs);
    }
    Ok(out)
}

/// Full path: every run is a quantum trajectory followed by the sampled
/// detection chain.
pub fn simulate_trajectories(
    setup: &EntanglementSetup,
    contexts: &[ReadoutBasis],
    runs: u64,
    seed: u64,
) -> Result<SimulatedClicks> {
    setup.validate()?;
    if runs == 0 {
        return Err(Error::ZeroRuns);
    }
    let mut out = SimulatedClicks::default();
    for &basis in contexts {
        let seq = setup.sequence(basis)?;
        let det = setup.detection(&seq, basis)?;
        let plan = TrajectoryPlan::new(&seq, &setup.params)?;
        let offset = context_index(basis) * runs;
        let per_run: Vec<Vec<ClickRecord>> = (0..runs)
            .into_par_iter()
            .map(|id| {
                let traj = plan.run(seed, offset + id)?;
                let mut rng = RandomStream::new(seed, Purpose::Detection, offset + id);
                detect_pure(&traj.final_state, id, &det, &mut rng)
            })
            .collect::<Result<_>>()?;
        out.clicks.extend(per_run.into_iter().flatten());
        out.runs.insert(basis.context().to_string(), runs);
    }
    Ok(out)
}
