//! Master-equation propagation through a compiled sequence.
//!
//! Quasi-static detuning is averaged with Gauss-Hermite quadrature; every
//! node is an independent deterministic propagation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::defect::{DefectParams, DEFECT_DIM};
use crate::dynamics::jumps::{bin_coupling, defect_channels, sz, Channel, JumpTag, Space};
use crate::dynamics::lindblad::{hermitize, rk4_step, Generator};
use crate::error::Result;
use crate::linalg::{ComplexMatrix, SparseOp, C64, ZERO};
use crate::sequence::{CompiledSequence, EvolveSegment, Segment};
use crate::state::CompositeState;

/// Smallest bin time at which the matched-mode coupling is switched on, ns.
pub const BIN_START: f64 = 1e-7;
/// Largest step in a bin relative to the elapsed bin time.
pub const BIN_STEP_RATIO: f64 = 0.1;
/// Target `dt * max_rate` used when picking steps.
pub const STEP_PRODUCT: f64 = 0.09;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactOptions {
    /// Gauss-Hermite nodes for the quasi-static detuning average.
    pub quadrature_nodes: usize,
    /// Raise the node count when the accumulated phase spread `σ T` is large.
    pub adaptive: bool,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            quadrature_nodes: 12,
            adaptive: true,
        }
    }
}

const MAX_NODES: usize = 400;

/// Nodes needed to average `cos(a x)` over a standard normal to ~1e-5.
fn nodes_for_spread(a: f64) -> usize {
    (0.25 * a * a + 3.0 * a + 6.0).ceil() as usize
}

fn evolution_span(seq: &CompiledSequence) -> f64 {
    seq.segments
        .iter()
        .filter_map(|s| match s {
            Segment::Evolve(e) => Some(e.end()),
            _ => None,
        })
        .fold(0.0, f64::max)
}

/// Integrated jump flux of one evolution segment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentFlux {
    pub start: f64,
    pub end: f64,
    pub by_tag: BTreeMap<JumpTag, f64>,
}

impl SegmentFlux {
    pub fn total(&self, pred: impl Fn(JumpTag) -> bool) -> f64 {
        self.by_tag.iter().filter(|(t, _)| pred(**t)).map(|(_, v)| v).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ExactRun {
    pub state: CompositeState,
    pub fluxes: Vec<SegmentFlux>,
}

impl ExactRun {
    /// Flux of tags matching `pred` over segments inside `[from, to]`.
    pub fn flux_between(&self, from: f64, to: f64, pred: impl Fn(JumpTag) -> bool + Copy) -> f64 {
        self.fluxes
            .iter()
            .filter(|f| f.start >= from - 1e-9 && f.end <= to + 1e-9)
            .map(|f| f.total(pred))
            .sum()
    }
}

/// Nodes and weights for `E[f(x)]`, `x ~ N(0, 1)`.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    if n <= 1 {
        return vec![(0.0, 1.0)];
    }
    let j = DMatrix::from_fn(n, n, |a, b| {
        if a + 1 == b || b + 1 == a {
            (a.max(b) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Final mixed state just before readout.
pub fn run_sequence_exact(seq: &CompiledSequence, params: &DefectParams) -> Result<CompositeState> {
    Ok(run_sequence_exact_detailed(seq, params, &ExactOptions::default())?.state)
}

/// Detuning-averaged state and fluxes.
pub fn run_sequence_exact_detailed(
    seq: &CompiledSequence,
    params: &DefectParams,
    opts: &ExactOptions,
) -> Result<ExactRun> {
    params.validate()?;
    let sigma = params.detuning_sigma();
    let nodes = if sigma > 0.0 {
        let mut n = opts.quadrature_nodes;
        if opts.adaptive {
            n = n.max(nodes_for_spread(sigma * evolution_span(seq)).min(MAX_NODES));
        }
        gauss_hermite(n)
    } else {
        vec![(0.0, 1.0)]
    };
    let mut acc: Option<(ComplexMatrix, Vec<SegmentFlux>)> = None;
    for (x, w) in nodes {
        let run = run_at_detuning(seq, params, sigma * x)?;
        let rho = run.state.density().scale_real(w);
        acc = Some(match acc {
            None => (
                rho,
                run.fluxes.into_iter().map(|f| scale_flux(f, w)).collect(),
            ),
            Some((r, fl)) => (
                &r + &rho,
                fl.into_iter()
                    .zip(run.fluxes)
                    .map(|(mut a, b)| {
                        for (t, v) in b.by_tag {
                            *a.by_tag.entry(t).or_insert(0.0) += w * v;
                        }
                        a
                    })
                    .collect(),
            ),
        });
    }
    let (mut rho, fluxes) = acc.expect("at least one node");
    let n = rho.rows();
    hermitize(rho.data_mut(), n);
    Ok(ExactRun {
        state: CompositeState::mixed(rho)?,
        fluxes,
    })
}

fn scale_flux(mut f: SegmentFlux, w: f64) -> SegmentFlux {
    f.by_tag.values_mut().for_each(|v| *v *= w);
    f
}

fn space_for(seq: &CompiledSequence) -> Space {
    if seq.has_bins {
        Space::Composite
    } else {
        Space::Defect
    }
}

/// Embeds a 9x9 defect density into the engine space with photons in vacuum.
fn prepare(space: Space, rho9: &ComplexMatrix) -> Vec<C64> {
    let k = space.sectors();
    let n = space.dim();
    let mut rho = vec![ZERO; n * n];
    for i in 0..DEFECT_DIM {
        for j in 0..DEFECT_DIM {
            rho[(i * k) * n + j * k] = rho9[(i, j)];
        }
    }
    rho
}

fn to_composite(space: Space, rho: Vec<C64>) -> Result<CompositeState> {
    let n = space.dim();
    let m = ComplexMatrix::from_vec(n, n, rho)?;
    match space {
        Space::Composite => CompositeState::mixed(m),
        Space::Defect => CompositeState::from_defect(&m),
    }
}

fn conjugate(rho: &[C64], u: &ComplexMatrix) -> Vec<C64> {
    let n = u.rows();
    let r = ComplexMatrix::from_vec(n, n, rho.to_vec()).expect("square state");
    u.matmul(&r).matmul(&u.dagger()).into_data()
}

/// Diagonal frame phase `e^{i Δ t}` on the listed GS slots.
pub(crate) fn frame_unitary(space: Space, frame: &[(usize, f64)], t: f64, sign: f64) -> ComplexMatrix {
    let mut u = ComplexMatrix::identity(DEFECT_DIM);
    for &(slot, delta) in frame {
        u[(slot, slot)] = C64::from_polar(1.0, sign * delta * t);
    }
    space.embed_dense(&u)
}

pub(crate) fn embed_channels(space: Space, chans: Vec<Channel>) -> Vec<Channel> {
    chans
        .into_iter()
        .map(|c| Channel {
            op: space.embed(&c.op),
            tag: c.tag,
        })
        .collect()
}

/// Segment Hamiltonian with the quasi-static detuning `delta` added.
pub(crate) fn segment_hamiltonian(space: Space, seg: &EvolveSegment, delta: f64) -> SparseOp {
    let mut h = seg.hamiltonian.clone();
    if delta != 0.0 {
        h = h.plus(&sz().scale(C64::new(delta, 0.0)));
    }
    space.embed(&h)
}

/// Propagation at one fixed quasi-static detuning (rad/ns).
pub fn run_at_detuning(seq: &CompiledSequence, params: &DefectParams, delta: f64) -> Result<ExactRun> {
    let space = space_for(seq);
    let n = space.dim();
    let mut up = ComplexMatrix::zeros(DEFECT_DIM, DEFECT_DIM);
    up[(0, 0)] = C64::new(1.0, 0.0);
    let mut rho = prepare(space, &up);
    let mut fluxes = Vec::new();
    for seg in &seq.segments {
        match seg {
            Segment::Prepare(r9) => rho = prepare(space, r9),
            Segment::Unitary(u9) => rho = conjugate(&rho, &space.embed_dense(u9)),
            Segment::Readout { .. } => break,
            Segment::Evolve(e) => {
                fluxes.push(evolve_segment(&mut rho, space, e, params, delta));
                hermitize(&mut rho, n);
            }
        }
    }
    Ok(ExactRun {
        state: to_composite(space, rho)?,
        fluxes,
    })
}

fn evolve_segment(
    rho: &mut Vec<C64>,
    space: Space,
    seg: &EvolveSegment,
    params: &DefectParams,
    delta: f64,
) -> SegmentFlux {
    if !seg.frame.is_empty() {
        *rho = conjugate(rho, &frame_unitary(space, &seg.frame, seg.start, 1.0));
    }
    let h = segment_hamiltonian(space, seg, delta);
    let mut acc = Vec::new();
    let tags: Vec<JumpTag>;
    match seg.bin {
        Some((bin, excite)) => {
            let base = embed_channels(space, defect_channels(params, &seg.pump, false));
            let at = |t: f64| {
                let (hk, lk) = bin_coupling(params, bin, (t - excite).max(BIN_START));
                let mut chans = base.clone();
                chans.push(lk);
                Generator::new(&h.plus(&hk), chans)
            };
            tags = at(seg.start + 1.0).jumps().iter().map(|c| c.tag).collect();
            let mut t = seg.start.max(excite + BIN_START);
            let end = seg.end();
            while t < end - 1e-12 {
                let step = (BIN_STEP_RATIO * (t - excite)).min(seg.dt).min(end - t);
                rk4_step(rho, t, step, &at, Some(&mut acc));
                t += step;
            }
        }
        None => {
            let local = defect_channels(params, &seg.pump, true);
            let mut h9 = seg.hamiltonian.clone();
            if delta != 0.0 {
                h9 = h9.plus(&sz().scale(C64::new(delta, 0.0)));
            }
            if let Some(flux) = evolve_diagonal(rho, space, &h9, &local, seg.duration) {
                tags = local.iter().map(|c| c.tag).collect();
                acc = flux;
            } else {
                let chans = embed_channels(space, local);
                let gen = Generator::new(&h, chans);
                tags = gen.jumps().iter().map(|c| c.tag).collect();
                let dt = if gen.max_rate() > 0.0 {
                    seg.dt.min(STEP_PRODUCT / gen.max_rate())
                } else {
                    seg.dt
                };
                let steps = (seg.duration / dt).ceil().max(1.0) as usize;
                let step = seg.duration / steps as f64;
                let at = |_t: f64| gen.clone();
                for k in 0..steps {
                    rk4_step(rho, seg.start + k as f64 * step, step, &at, Some(&mut acc));
                }
            }
        }
    }
    if !seg.frame.is_empty() {
        *rho = conjugate(rho, &frame_unitary(space, &seg.frame, seg.end(), -1.0));
    }
    let mut by_tag = BTreeMap::new();
    for (tag, v) in tags.into_iter().zip(acc) {
        *by_tag.entry(tag).or_insert(0.0) += v;
    }
    SegmentFlux {
        start: seg.start,
        end: seg.end(),
        by_tag,
    }
}

/// Closed-form propagation when the Hamiltonian is diagonal and every
/// channel is diagonal or moves population between two levels.
///
/// Coherences between different defect levels then decay independently and
/// populations follow a classical rate equation. Returns the integrated flux
/// per channel, or `None` when the structure does not apply.
fn evolve_diagonal(
    rho: &mut [C64],
    space: Space,
    h9: &SparseOp,
    chans: &[Channel],
    duration: f64,
) -> Option<Vec<f64>> {
    let d = DEFECT_DIM;
    let mut energy = [0.0; DEFECT_DIM];
    for &(i, j, z) in &h9.entries {
        if i != j {
            return None;
        }
        energy[i] += z.re;
    }
    enum Kind {
        Diagonal([C64; DEFECT_DIM]),
        Transfer { to: usize, from: usize, rate: f64 },
    }
    let mut kinds = Vec::with_capacity(chans.len());
    for c in chans {
        let e = &c.op.entries;
        if e.iter().all(|(i, j, _)| i == j) {
            let mut v = [ZERO; DEFECT_DIM];
            for &(i, _, z) in e {
                v[i] += z;
            }
            kinds.push(Kind::Diagonal(v));
        } else if e.len() == 1 {
            let (to, from, z) = e[0];
            kinds.push(Kind::Transfer { to, from, rate: z.norm_sqr() });
        } else {
            return None;
        }
    }
    let mut loss = [0.0; DEFECT_DIM];
    // [[R T, 0], [T, 0]] yields e^{RT} and its time integral
    let mut aug = ComplexMatrix::zeros(2 * d, 2 * d);
    for k in &kinds {
        if let Kind::Transfer { to, from, rate } = *k {
            loss[from] += rate;
            aug[(to, from)] += C64::new(rate * duration, 0.0);
            aug[(from, from)] -= C64::new(rate * duration, 0.0);
        }
    }
    for i in 0..d {
        aug[(d + i, i)] = C64::new(duration, 0.0);
    }
    let e = aug.expm();
    let rate_of = |a: usize, b: usize| {
        let mut z = C64::new(-0.5 * (loss[a] + loss[b]), -(energy[a] - energy[b]));
        for k in &kinds {
            if let Kind::Diagonal(v) = k {
                z += v[a] * v[b].conj() - 0.5 * (v[a].norm_sqr() + v[b].norm_sqr());
            }
        }
        (z * duration).exp()
    };
    let sectors = space.sectors();
    let n = space.dim();
    let mut integral = [0.0; DEFECT_DIM];
    for p in 0..sectors {
        for q in 0..sectors {
            let v: Vec<C64> = (0..d).map(|a| rho[(a * sectors + p) * n + a * sectors + q]).collect();
            for a in 0..d {
                let mut acc = ZERO;
                for b in 0..d {
                    acc += e[(a, b)] * v[b];
                }
                rho[(a * sectors + p) * n + a * sectors + q] = acc;
                if p == q {
                    for b in 0..d {
                        integral[a] += (e[(d + a, b)] * v[b]).re;
                    }
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..d {
            if a == b {
                continue;
            }
            let f = rate_of(a, b);
            for p in 0..sectors {
                for q in 0..sectors {
                    rho[(a * sectors + p) * n + b * sectors + q] *= f;
                }
            }
        }
    }
    Some(
        kinds
            .iter()
            .map(|k| match *k {
                Kind::Transfer { from, rate, .. } => rate * integral[from],
                Kind::Diagonal(v) => (0..d).map(|a| v[a].norm_sqr() * integral[a]).sum(),
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_rk4() {
        let params = DefectParams::v1();
        let pump = [0.1, 0.0, 0.0, 0.05];
        let space = Space::Composite;
        let n = space.dim();
        // random positive state
        let mut a = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let x = ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.4;
                let y = ((i * 11 + j * 5) % 19) as f64 / 19.0 - 0.5;
                a[(i, j)] = C64::new(x, y);
            }
        }
        let m = a.matmul(&a.dagger());
        let rho0: Vec<C64> = m.scale_real(1.0 / m.trace().re).into_data();
        let mut h9 = SparseOp::new(DEFECT_DIM);
        h9.push(1, 1, C64::new(0.3, 0.0));
        let h9 = h9.plus(&sz().scale(C64::new(0.02, 0.0)));
        let local = defect_channels(&params, &pump, true);
        let duration = 7.3;
        let mut fast = rho0.clone();
        let flux = evolve_diagonal(&mut fast, space, &h9, &local, duration).unwrap();
        let gen = Generator::new(&space.embed(&h9), embed_channels(space, local));
        let mut slow = rho0;
        let mut acc = Vec::new();
        let steps = 20_000;
        let dt = duration / steps as f64;
        for k in 0..steps {
            rk4_step(&mut slow, k as f64 * dt, dt, &|_| gen.clone(), Some(&mut acc));
        }
        let diff = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        for (a, b) in flux.iter().zip(&acc) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn driven_segments_use_the_integrator() {
        let mut h9 = SparseOp::new(DEFECT_DIM);
        h9.push(0, 1, C64::new(0.1, 0.0));
        h9.push(1, 0, C64::new(0.1, 0.0));
        let mut rho = prepare(Space::Defect, &ComplexMatrix::identity(DEFECT_DIM));
        assert!(evolve_diagonal(&mut rho, Space::Defect, &h9, &[], 1.0).is_none());
    }

    #[test]
    fn gauss_hermite_moments() {
        let q = gauss_hermite(12);
        let m = |p: i32| q.iter().map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-12);
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-10);
        // E[cos(a x)] = exp(-a²/2)
        let a: f64 = 2.0;
        let c: f64 = q.iter().map(|(x, w)| w * (a * x).cos()).sum();
        assert!((c - (-a * a / 2.0).exp()).abs() < 1e-6);
    }
}
