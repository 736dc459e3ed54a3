//! Dissipative channels of the defect and their embedding into the
//! composite space.
//!
//! Emission into an open time bin uses a matched-mode (virtual cavity)
//! construction: the ZPL lowering operator `c` feeds the bin mode through a
//! time-dependent coupling, so the emitted photon is stored coherently in
//! the state instead of being recorded as a jump.

use crate::defect::{DefectParams, OpticalCategory, DEFECT_DIM, MS_INDEX, TWICE_M};
use crate::linalg::{ComplexMatrix, SparseOp, C64, I};
use crate::sequence::Bin;
use crate::state::{COMPOSITE_DIM, PHOTON_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JumpTag {
    ZplEarly,
    ZplLate,
    ZplUnbinned,
    Psb,
    Isc,
    /// MS decay into the GS slot given.
    MsDecay(usize),
    Dephasing,
    /// Incoherent optical pumping of the GS slot given.
    Pump(usize),
}

impl JumpTag {
    pub fn is_radiative(self) -> bool {
        matches!(
            self,
            JumpTag::ZplEarly | JumpTag::ZplLate | JumpTag::ZplUnbinned | JumpTag::Psb
        )
    }
}

/// Which time bin is open while a channel list is in force.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinPhase {
    Early,
    Late,
    None,
}

impl From<Option<Bin>> for BinPhase {
    fn from(b: Option<Bin>) -> Self {
        match b {
            Some(Bin::Early) => BinPhase::Early,
            Some(Bin::Late) => BinPhase::Late,
            None => BinPhase::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpOperator {
    pub matrix: ComplexMatrix,
    pub rate: f64,
    pub tag: JumpTag,
}

/// Hilbert space used by the engine: the bare defect or the full composite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Defect,
    Composite,
}

impl Space {
    pub fn dim(self) -> usize {
        match self {
            Space::Defect => DEFECT_DIM,
            Space::Composite => COMPOSITE_DIM,
        }
    }

    pub fn sectors(self) -> usize {
        match self {
            Space::Defect => 1,
            Space::Composite => PHOTON_DIM,
        }
    }

    /// Defect operator tensored with the photon identity.
    pub fn embed(self, op: &SparseOp) -> SparseOp {
        let k = self.sectors();
        let mut out = SparseOp::new(self.dim());
        for &(i, j, z) in &op.entries {
            for p in 0..k {
                out.push(i * k + p, j * k + p, z);
            }
        }
        out
    }

    pub fn embed_dense(self, m: &ComplexMatrix) -> ComplexMatrix {
        self.embed(&SparseOp::from_dense(m)).to_dense()
    }
}

/// A channel with `√rate` folded into the operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub op: SparseOp,
    pub tag: JumpTag,
}

fn transition(from: usize, to: usize, amp: f64) -> SparseOp {
    let mut op = SparseOp::new(DEFECT_DIM);
    op.push(to, from, C64::new(amp, 0.0));
    op
}

/// ZPL rate, ns⁻¹.
pub fn zpl_rate(params: &DefectParams) -> f64 {
    params.eta_q * params.eta_d / params.es_lifetime
}

pub fn psb_rate(params: &DefectParams) -> f64 {
    params.eta_q * (1.0 - params.eta_d) / params.es_lifetime
}

pub fn isc_rate(params: &DefectParams) -> f64 {
    (1.0 - params.eta_q) / params.es_lifetime
}

/// `Sz` on GS and ES, zero on MS.
pub fn sz() -> SparseOp {
    let mut op = SparseOp::new(DEFECT_DIM);
    for (slot, t) in TWICE_M.iter().enumerate() {
        let m = C64::new(*t as f64 / 2.0, 0.0);
        op.push(slot, slot, m);
        op.push(slot + 4, slot + 4, m);
    }
    op
}

/// ZPL lowering `Σ_m |g_m⟩⟨e_m|` without rate.
pub fn emitter_lowering() -> SparseOp {
    let mut op = SparseOp::new(DEFECT_DIM);
    for slot in 0..4 {
        op.push(slot, slot + 4, C64::new(1.0, 0.0));
    }
    op
}

/// Defect channels, ZPL included as unbinned emission when `zpl` is set.
pub fn defect_channels(params: &DefectParams, pump: &[f64; 4], zpl: bool) -> Vec<Channel> {
    let mut out = Vec::new();
    let mut push_per_m = |rate: f64, tag: JumpTag, to_ms: bool| {
        if rate <= 0.0 {
            return;
        }
        // one operator per m: the four lines are distinguishable
        for slot in 0..4 {
            let to = if to_ms { MS_INDEX } else { slot };
            out.push(Channel {
                op: transition(slot + 4, to, rate.sqrt()),
                tag,
            });
        }
    };
    if zpl {
        push_per_m(zpl_rate(params), JumpTag::ZplUnbinned, false);
    }
    push_per_m(psb_rate(params), JumpTag::Psb, false);
    push_per_m(isc_rate(params), JumpTag::Isc, true);
    for slot in 0..4 {
        let rate = params.branching_to_slot(slot) / params.ms_lifetime;
        if rate > 0.0 {
            out.push(Channel {
                op: transition(MS_INDEX, slot, rate.sqrt()),
                tag: JumpTag::MsDecay(slot),
            });
        }
    }
    let gamma = params.dephasing_rate();
    if gamma > 0.0 {
        out.push(Channel {
            op: sz().scale(C64::new((2.0 * gamma).sqrt(), 0.0)),
            tag: JumpTag::Dephasing,
        });
    }
    for (slot, &rate) in pump.iter().enumerate() {
        if rate > 0.0 {
            out.push(Channel {
                op: transition(slot, slot + 4, rate.sqrt()),
                tag: JumpTag::Pump(slot),
            });
        }
    }
    out
}

fn mode_bit(bin: Bin) -> usize {
    match bin {
        Bin::Early => 2,
        Bin::Late => 1,
    }
}

/// Annihilation operator of a bin mode in the composite space.
pub fn mode_annihilation(bin: Bin) -> SparseOp {
    let bit = mode_bit(bin);
    let mut op = SparseOp::new(COMPOSITE_DIM);
    for k in 0..COMPOSITE_DIM {
        if k & bit != 0 {
            op.push(k - bit, k, C64::new(1.0, 0.0));
        }
    }
    op
}

/// Normalized matched-mode fraction `1 - e^{-Γ s}`.
pub fn mode_fraction(gamma: f64, s: f64) -> f64 {
    -(-gamma * s).exp_m1()
}

/// Virtual-cavity coupling `g(s)` for an exponential mode of rate `gamma`.
pub fn mode_coupling(gamma: f64, s: f64) -> f64 {
    -gamma.sqrt() * (-0.5 * gamma * s).exp() / mode_fraction(gamma, s).sqrt()
}

/// Matched-mode Hamiltonian and out-of-mode channel at bin time `s`.
pub fn bin_coupling(params: &DefectParams, bin: Bin, s: f64) -> (SparseOp, Channel) {
    let gamma = params.es_rate();
    let c = Space::Composite.embed(&emitter_lowering().scale(C64::new(zpl_rate(params).sqrt(), 0.0)));
    let a = mode_annihilation(bin);
    let g = mode_coupling(gamma, s);
    let cd_a = c.dagger().compose(&a);
    let ad_c = a.dagger().compose(&c);
    let h = cd_a
        .plus(&ad_c.scale(C64::new(-1.0, 0.0)))
        .scale(I * (0.5 * g));
    let l = c.plus(&a.scale(C64::new(g, 0.0)));
    (
        h,
        Channel {
            op: l,
            tag: JumpTag::ZplUnbinned,
        },
    )
}

/// Channel list in force for a given bin phase, as dense 36×36 operators.
///
/// While a bin is open the ZPL entry is the bare emitter lowering tagged
/// with the bin; the engine routes it into the bin mode.
pub fn build_jump_operators(params: &DefectParams, phase: BinPhase) -> Vec<JumpOperator> {
    let mut out = Vec::new();
    let zr = zpl_rate(params);
    if zr > 0.0 {
        let tag = match phase {
            BinPhase::Early => JumpTag::ZplEarly,
            BinPhase::Late => JumpTag::ZplLate,
            BinPhase::None => JumpTag::ZplUnbinned,
        };
        out.push(JumpOperator {
            matrix: Space::Composite.embed(&emitter_lowering()).to_dense(),
            rate: zr,
            tag,
        });
    }
    for ch in defect_channels(params, &[0.0; 4], false) {
        let rate = if ch.tag == JumpTag::Dephasing {
            params.dephasing_rate()
        } else {
            ch.op.entries.iter().map(|e| e.2.norm_sqr()).fold(0.0, f64::max)
        };
        let unit = ch.op.scale(C64::new(1.0 / rate.sqrt(), 0.0));
        out.push(JumpOperator {
            matrix: Space::Composite.embed(&unit).to_dense(),
            rate,
            tag: ch.tag,
        });
    }
    out
}

/// Categories whose GS slots a pump rate array drives.
pub fn pumped_categories(pump: &[f64; 4]) -> Vec<OpticalCategory> {
    let mut v = Vec::new();
    for c in [OpticalCategory::A1, OpticalCategory::A2] {
        if c.slots().iter().any(|&s| pump[s] > 0.0) {
            v.push(c);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_es_decay_rate() {
        let p = DefectParams::v1();
        let total = zpl_rate(&p) + psb_rate(&p) + isc_rate(&p);
        assert!((total - 1.0 / 6.7).abs() < 1e-15);
        assert!(((zpl_rate(&p) + psb_rate(&p)) / total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_psb_when_debye_waller_is_one() {
        let p = DefectParams {
            eta_d: 1.0,
            ..DefectParams::v1()
        };
        let ops = build_jump_operators(&p, BinPhase::Early);
        assert!(ops.iter().all(|o| o.tag != JumpTag::Psb));
        assert_eq!(ops.iter().filter(|o| o.tag == JumpTag::ZplEarly).count(), 1);
    }

    #[test]
    fn incoherent_channels_leave_photons_alone() {
        let ops = build_jump_operators(&DefectParams::v1(), BinPhase::None);
        for o in ops {
            for i in 0..COMPOSITE_DIM {
                for j in 0..COMPOSITE_DIM {
                    if o.matrix[(i, j)].norm() > 0.0 {
                        assert_eq!(i % PHOTON_DIM, j % PHOTON_DIM);
                    }
                }
            }
            assert!(o.rate >= 0.0);
        }
    }

    #[test]
    fn dephasing_kills_qubit_coherence_at_t2() {
        // (γ/2)(λ_a - λ_b)² with λ = √2 m gives γ for Δm = 1
        let l = sz().scale(C64::new(2f64.sqrt(), 0.0)).to_dense();
        let d = l[(0, 0)].re - l[(1, 1)].re;
        assert!((0.5 * d * d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matched_mode_normalization() {
        let gamma = 1.0 / 6.7;
        for s in [0.01, 1.0, 10.0] {
            let g = mode_coupling(gamma, s);
            let n = mode_fraction(gamma, s);
            let dn = gamma * (-gamma * s).exp();
            assert!((g * g - dn / n).abs() < 1e-12);
        }
    }
}
