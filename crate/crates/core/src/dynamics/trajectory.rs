//! Quantum-jump trajectories.
//!
//! Constant segments are propagated exactly: the effective non-Hermitian
//! Hamiltonian splits into small connected blocks whose exponentials are
//! taken directly. Bin segments use the closed-form matched-mode solution.
//! Jump times are located by bisection on the squared norm.

use rayon::prelude::*;

use crate::defect::{DefectParams, DEFECT_DIM, MS_INDEX, TWICE_M};
use crate::dynamics::exact::{embed_channels, segment_hamiltonian};
use crate::dynamics::jumps::{
    bin_coupling, defect_channels, mode_fraction, zpl_rate, Channel, JumpTag, Space,
};
use crate::dynamics::lindblad::Generator;
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64, ONE, ZERO};
use crate::rng::{Purpose, RandomStream, StreamId};
use crate::sequence::{Bin, CompiledSequence, EvolveSegment, Segment};
use crate::state::{CompositeState, COMPOSITE_DIM, PHOTON_DIM};

/// Bisection stops once the bracket is shorter than this, ns.
const TIME_RESOLUTION: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmissionRecord {
    pub time: f64,
    pub tag: JumpTag,
    /// Defect levels before and after the jump (dominant component).
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryResult {
    pub emissions: Vec<EmissionRecord>,
    /// Normalized pure state at the start of readout.
    pub final_state: CompositeState,
    pub stream: StreamId,
    /// Sampled quasi-static detuning, rad/ns.
    pub detuning: f64,
}

#[derive(Clone, Debug)]
struct Block {
    idx: Vec<usize>,
    /// Row-major restriction of `H_eff` to the block.
    m: Vec<C64>,
}

#[derive(Clone, Debug)]
struct Planned {
    seg: EvolveSegment,
    blocks: Vec<Block>,
    channels: Vec<Channel>,
    frame_idx: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
enum Step {
    Prepare(Vec<f64>),
    Unitary(ComplexMatrix),
    Evolve(Planned),
    Readout,
}

/// Precomputed per-sequence data shared by every trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryPlan {
    space: Space,
    steps: Vec<Step>,
    params: DefectParams,
    /// `m` of every basis index (zero on MS).
    m_of: Vec<f64>,
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut k = i;
    while parent[k] != r {
        let next = parent[k];
        parent[k] = r;
        k = next;
    }
    r
}

fn blocks_of(h_eff: &crate::linalg::SparseOp) -> Vec<Block> {
    let n = h_eff.dim;
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j, _) in &h_eff.entries {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        groups[r].push(i);
    }
    let dense = h_eff.to_dense();
    groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|idx| {
            let k = idx.len();
            let mut m = vec![ZERO; k * k];
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    m[a * k + b] = dense[(i, j)];
                }
            }
            Block { idx, m }
        })
        .collect()
}

/// `exp(-i M τ)` for a 2x2 block.
fn expm2(m: &[C64], tau: f64) -> [C64; 4] {
    let s = C64::new(0.0, -tau);
    let a = [m[0] * s, m[1] * s, m[2] * s, m[3] * s];
    let mu = (a[0] + a[3]) * 0.5;
    let b = [a[0] - mu, a[1], a[2], a[3] - mu];
    let q = (b[0] * b[0] + b[1] * b[2]).sqrt();
    let (ch, sh_q) = if q.norm() < 1e-8 {
        (ONE + q * q * 0.5, ONE + q * q / 6.0)
    } else {
        (q.cosh(), q.sinh() / q)
    };
    let e = mu.exp();
    [
        e * (ch + sh_q * b[0]),
        e * sh_q * b[1],
        e * sh_q * b[2],
        e * (ch + sh_q * b[3]),
    ]
}

impl TrajectoryPlan {
    pub fn new(seq: &CompiledSequence, params: &DefectParams) -> Result<Self> {
        params.validate()?;
        let space = if seq.has_bins {
            Space::Composite
        } else {
            Space::Defect
        };
        let k = space.sectors();
        let m_of: Vec<f64> = (0..space.dim())
            .map(|i| {
                let d = i / k;
                if d == MS_INDEX {
                    0.0
                } else {
                    TWICE_M[d % 4] as f64 / 2.0
                }
            })
            .collect();
        let mut steps = Vec::new();
        for seg in &seq.segments {
            steps.push(match seg {
                Segment::Prepare(r) => {
                    let off = (0..DEFECT_DIM)
                        .flat_map(|i| (0..DEFECT_DIM).map(move |j| (i, j)))
                        .filter(|(i, j)| i != j)
                        .map(|(i, j)| r[(i, j)].norm())
                        .fold(0.0, f64::max);
                    if off > 1e-12 {
                        return Err(Error::Sequence(
                            "trajectories need a diagonal initial density".into(),
                        ));
                    }
                    Step::Prepare((0..DEFECT_DIM).map(|i| r[(i, i)].re.max(0.0)).collect())
                }
                Segment::Unitary(u) => Step::Unitary(u.clone()),
                Segment::Readout { .. } => Step::Readout,
                Segment::Evolve(e) => {
                    let channels = embed_channels(
                        space,
                        defect_channels(params, &e.pump, e.bin.is_none()),
                    );
                    if e.bin.is_some() && (!e.hamiltonian.is_empty() || !e.frame.is_empty()) {
                        return Err(Error::Sequence("drive active inside a time bin".into()));
                    }
                    let h = segment_hamiltonian(space, e, 0.0);
                    let gen = Generator::new(&h, channels.clone());
                    let frame_idx = e
                        .frame
                        .iter()
                        .flat_map(|&(slot, d)| (0..k).map(move |p| (slot * k + p, d)))
                        .collect();
                    Step::Evolve(Planned {
                        seg: e.clone(),
                        blocks: blocks_of(gen.h_eff()),
                        channels,
                        frame_idx,
                    })
                }
            });
        }
        Ok(Self {
            space,
            steps,
            params: params.clone(),
            m_of,
        })
    }

    pub fn run(&self, seed: u64, index: u64) -> Result<TrajectoryResult> {
        let mut rng = RandomStream::new(seed, Purpose::Trajectory, index);
        let sigma = self.params.detuning_sigma();
        let delta = if sigma > 0.0 { rng.normal(0.0, sigma) } else { 0.0 };
        let n = self.space.dim();
        let k = self.space.sectors();
        let mut psi = vec![ZERO; n];
        psi[0] = ONE;
        let mut run = Runner {
            plan: self,
            rng,
            delta,
            threshold: 0.0,
            emissions: Vec::new(),
        };
        run.threshold = run.rng.uniform_open();
        for step in &self.steps {
            match step {
                Step::Prepare(w) => {
                    let level = run.rng.categorical(w);
                    psi.iter_mut().for_each(|z| *z = ZERO);
                    psi[level * k] = ONE;
                    run.threshold = run.rng.uniform_open();
                }
                Step::Unitary(u) => psi = apply_defect_unitary(u, &psi, k),
                Step::Readout => break,
                Step::Evolve(p) => run.evolve(p, &mut psi),
            }
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut full = vec![ZERO; COMPOSITE_DIM];
        for (i, z) in psi.iter().enumerate() {
            let target = if k == 1 { i * PHOTON_DIM } else { i };
            full[target] = z / norm;
        }
        Ok(TrajectoryResult {
            emissions: run.emissions,
            final_state: CompositeState::pure(ComplexMatrix::column(&full))?,
            stream: run.rng.id(),
            detuning: delta,
        })
    }
}

fn apply_defect_unitary(u: &ComplexMatrix, psi: &[C64], k: usize) -> Vec<C64> {
    let mut out = vec![ZERO; psi.len()];
    for i in 0..DEFECT_DIM {
        for j in 0..DEFECT_DIM {
            let z = u[(i, j)];
            if z == ZERO {
                continue;
            }
            for p in 0..k {
                out[i * k + p] += z * psi[j * k + p];
            }
        }
    }
    out
}

fn norm_sqr(psi: &[C64]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

struct Runner<'a> {
    plan: &'a TrajectoryPlan,
    rng: RandomStream,
    delta: f64,
    threshold: f64,
    emissions: Vec<EmissionRecord>,
}

impl Runner<'_> {
    fn evolve(&mut self, p: &Planned, psi: &mut Vec<C64>) {
        let seg = &p.seg;
        for &(i, d) in &p.frame_idx {
            psi[i] *= C64::from_polar(1.0, d * seg.start);
        }
        let mut t = seg.start;
        let end = seg.end();
        loop {
            let candidate = self.propagate(p, psi, t, end);
            if norm_sqr(&candidate) > self.threshold {
                *psi = candidate;
                break;
            }
            let (mut lo, mut hi) = (t, end);
            while hi - lo > TIME_RESOLUTION {
                let mid = 0.5 * (lo + hi);
                if norm_sqr(&self.propagate(p, psi, t, mid)) > self.threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            *psi = self.propagate(p, psi, t, hi);
            t = hi;
            self.jump(p, psi, t);
            if t >= end {
                break;
            }
        }
        for &(i, d) in &p.frame_idx {
            psi[i] *= C64::from_polar(1.0, -d * end);
        }
    }

    fn propagate(&self, p: &Planned, psi: &[C64], t0: f64, t1: f64) -> Vec<C64> {
        let tau = t1 - t0;
        if tau <= 0.0 {
            return psi.to_vec();
        }
        match p.seg.bin {
            Some((bin, excite)) => self.propagate_bin(psi, bin, t0 - excite, t1 - excite),
            None => {
                let mut out = psi.to_vec();
                for b in &p.blocks {
                    if b.idx.iter().all(|&i| psi[i] == ZERO) {
                        continue;
                    }
                    match b.idx.len() {
                        1 => {
                            let i = b.idx[0];
                            let h = b.m[0] + self.delta * self.plan.m_of[i];
                            out[i] = psi[i] * (C64::new(0.0, -tau) * h).exp();
                        }
                        2 => {
                            let (i, j) = (b.idx[0], b.idx[1]);
                            let mut m = b.m.clone();
                            m[0] += self.delta * self.plan.m_of[i];
                            m[3] += self.delta * self.plan.m_of[j];
                            let u = expm2(&m, tau);
                            out[i] = u[0] * psi[i] + u[1] * psi[j];
                            out[j] = u[2] * psi[i] + u[3] * psi[j];
                        }
                        kk => {
                            let mut m = ComplexMatrix::from_vec(kk, kk, b.m.clone())
                                .expect("block shape");
                            for (a, &i) in b.idx.iter().enumerate() {
                                m[(a, a)] += self.delta * self.plan.m_of[i];
                            }
                            let u = m.scale(C64::new(0.0, -tau)).expm();
                            for (a, &i) in b.idx.iter().enumerate() {
                                out[i] = b
                                    .idx
                                    .iter()
                                    .enumerate()
                                    .map(|(c, &j)| u[(a, c)] * psi[j])
                                    .sum();
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Closed-form matched-mode propagation from bin time `s1` to `s2`.
    fn propagate_bin(&self, psi: &[C64], bin: Bin, s1: f64, s2: f64) -> Vec<C64> {
        let params = &self.plan.params;
        let gamma = params.es_rate();
        let gz = zpl_rate(params);
        let deph = params.dephasing_rate();
        let tau = s2 - s1;
        let bit = match bin {
            Bin::Early => 2,
            Bin::Late => 1,
        };
        let n1 = mode_fraction(gamma, s1);
        let n2 = mode_fraction(gamma, s2);
        let hold = (n1 / n2).sqrt();
        let feed = (gz / gamma).sqrt() * (-0.5 * gamma * s1).exp() * (-(-gamma * tau).exp_m1())
            / n2.sqrt();
        let es_decay = (-0.5 * gamma * tau).exp();
        let ms_decay = (-0.5 * tau / params.ms_lifetime).exp();
        let mut out = vec![ZERO; COMPOSITE_DIM];
        for d in 0..DEFECT_DIM {
            let common = if d == MS_INDEX {
                C64::new(ms_decay, 0.0)
            } else {
                let m = TWICE_M[d % 4] as f64 / 2.0;
                C64::new(-deph * m * m * tau, -self.delta * m * tau).exp()
            };
            for p in 0..PHOTON_DIM {
                let k = d * PHOTON_DIM + p;
                let photon = p & bit != 0;
                let mut z = psi[k] * common;
                if (4..8).contains(&d) {
                    z *= es_decay;
                }
                if photon {
                    z *= hold;
                    if d < 4 {
                        let src = (d + 4) * PHOTON_DIM + (p & !bit);
                        z += common * feed * psi[src];
                    }
                }
                out[k] = z;
            }
        }
        out
    }

    fn jump(&mut self, p: &Planned, psi: &mut Vec<C64>, t: f64) {
        let mut channels: Vec<&Channel> = p.channels.iter().collect();
        let km;
        if let Some((bin, excite)) = p.seg.bin {
            km = bin_coupling(&self.plan.params, bin, (t - excite).max(1e-12)).1;
            channels.push(&km);
        }
        let candidates: Vec<Vec<C64>> = channels.iter().map(|c| c.op.apply(psi)).collect();
        let weights: Vec<f64> = candidates.iter().map(|v| norm_sqr(v)).collect();
        let total: f64 = weights.iter().sum();
        self.threshold = self.rng.uniform_open();
        if !(total > 0.0) {
            return;
        }
        let k = self.rng.categorical(&weights);
        let chan = channels[k];
        let sectors = self.plan.space.sectors();
        let from = dominant(psi, sectors);
        let mut next = candidates[k].clone();
        let norm = norm_sqr(&next).sqrt();
        next.iter_mut().for_each(|z| *z /= norm);
        let to = dominant(&next, sectors);
        *psi = next;
        self.emissions.push(EmissionRecord {
            time: t,
            tag: chan.tag,
            from,
            to,
        });
    }
}

fn dominant(psi: &[C64], sectors: usize) -> usize {
    let mut w = [0.0; DEFECT_DIM];
    for (i, z) in psi.iter().enumerate() {
        w[i / sectors] += z.norm_sqr();
    }
    (0..DEFECT_DIM)
        .max_by(|a, b| w[*a].partial_cmp(&w[*b]).unwrap())
        .unwrap_or(0)
}

/// One trajectory with stream `(seed, index)`.
pub fn run_trajectory(
    seq: &CompiledSequence,
    params: &DefectParams,
    seed: u64,
    index: u64,
) -> Result<TrajectoryResult> {
    TrajectoryPlan::new(seq, params)?.run(seed, index)
}

/// Trajectories `0..count`, run in parallel and returned in index order.
pub fn run_trajectories(
    seq: &CompiledSequence,
    params: &DefectParams,
    seed: u64,
    count: u64,
) -> Result<Vec<TrajectoryResult>> {
    let plan = TrajectoryPlan::new(seq, params)?;
    (0..count).into_par_iter().map(|i| plan.run(seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm2_matches_series() {
        let m = [
            C64::new(0.3, -0.1),
            C64::new(0.2, 0.05),
            C64::new(0.2, -0.05),
            C64::new(-0.4, -0.02),
        ];
        let got = expm2(&m, 1.7);
        let dense = ComplexMatrix::from_vec(2, 2, m.to_vec())
            .unwrap()
            .scale(C64::new(0.0, -1.7))
            .expm();
        for (a, b) in got.iter().zip(dense.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        let diag = [ONE, ZERO, ZERO, ONE];
        let u = expm2(&diag, 0.5);
        assert!((u[0] - C64::new(0.0, -0.5).exp()).norm() < 1e-14);
    }
}
