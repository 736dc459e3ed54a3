//! Fixed-step Runge-Kutta integration of the GKSL master equation.

use crate::dynamics::jumps::{Channel, JumpOperator};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, SparseOp, C64, I, ZERO};
use crate::state::{CompositeState, COMPOSITE_DIM};
use crate::tolerance;

/// Master-equation generator `-i[H, ρ] + Σ (L ρ L† - ½{L†L, ρ})`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub dim: usize,
    h_eff: SparseOp,
    h_eff_dag: SparseOp,
    jumps: Vec<Channel>,
    /// `L†L` per jump, for flux bookkeeping.
    rates: Vec<SparseOp>,
    max_rate: f64,
}

impl Generator {
    pub fn new(hamiltonian: &SparseOp, jumps: Vec<Channel>) -> Self {
        let dim = hamiltonian.dim;
        let rates: Vec<SparseOp> = jumps.iter().map(|j| j.op.dagger().compose(&j.op)).collect();
        let mut decay = SparseOp::new(dim);
        for r in &rates {
            decay.entries.extend_from_slice(&r.entries);
        }
        let decay = decay.compact();
        let h_eff = hamiltonian.plus(&decay.scale(I * -0.5));
        let mut row_h = vec![0.0; dim];
        for &(i, _, z) in &hamiltonian.entries {
            row_h[i] += z.norm();
        }
        let mut row_d = vec![0.0; dim];
        for &(i, _, z) in &decay.entries {
            row_d[i] += z.norm();
        }
        let max_rate = row_h
            .iter()
            .zip(&row_d)
            .map(|(a, b)| a + b)
            .fold(0.0, f64::max);
        Self {
            dim,
            h_eff_dag: h_eff.dagger(),
            h_eff,
            jumps,
            rates,
            max_rate,
        }
    }

    /// Bound on the fastest rate or frequency of the generator, ns⁻¹.
    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    pub fn jumps(&self) -> &[Channel] {
        &self.jumps
    }

    pub fn h_eff(&self) -> &SparseOp {
        &self.h_eff
    }

    pub fn derivative(&self, rho: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        self.h_eff.left_mul_acc(rho, -I, out);
        self.h_eff_dag.right_mul_acc(rho, I, out);
        for j in &self.jumps {
            j.op.sandwich_acc(rho, C64::new(1.0, 0.0), out);
        }
    }

    /// `tr(L†L ρ)` for each jump.
    pub fn fluxes(&self, rho: &[C64]) -> Vec<f64> {
        let n = self.dim;
        self.rates
            .iter()
            .map(|r| r.entries.iter().map(|&(i, j, z)| (z * rho[j * n + i]).re).sum())
            .collect()
    }
}

/// Accumulated `∫ tr(L†L ρ) dt` per jump of a generator family.
pub type FluxSink<'a> = Option<&'a mut Vec<f64>>;

/// One RK4 step from `t` to `t + dt` with a possibly time-dependent generator.
pub fn rk4_step(
    rho: &mut Vec<C64>,
    t: f64,
    dt: f64,
    generator_at: &dyn Fn(f64) -> Generator,
    flux: FluxSink<'_>,
) {
    let n2 = rho.len();
    let g0 = generator_at(t);
    let gm = generator_at(t + 0.5 * dt);
    let g1 = generator_at(t + dt);
    let mut k1 = vec![ZERO; n2];
    let mut k2 = vec![ZERO; n2];
    let mut k3 = vec![ZERO; n2];
    let mut k4 = vec![ZERO; n2];
    let mut tmp = vec![ZERO; n2];
    g0.derivative(rho, &mut k1);
    let f1 = g0.fluxes(rho);
    for i in 0..n2 {
        tmp[i] = rho[i] + k1[i] * (0.5 * dt);
    }
    gm.derivative(&tmp, &mut k2);
    let f2 = gm.fluxes(&tmp);
    for i in 0..n2 {
        tmp[i] = rho[i] + k2[i] * (0.5 * dt);
    }
    gm.derivative(&tmp, &mut k3);
    let f3 = gm.fluxes(&tmp);
    for i in 0..n2 {
        tmp[i] = rho[i] + k3[i] * dt;
    }
    g1.derivative(&tmp, &mut k4);
    let f4 = g1.fluxes(&tmp);
    for i in 0..n2 {
        rho[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
    }
    if let Some(acc) = flux {
        if acc.len() < f1.len() {
            acc.resize(f1.len(), 0.0);
        }
        for k in 0..f1.len() {
            acc[k] += (f1[k] + 2.0 * (f2[k] + f3[k]) + f4[k]) * (dt / 6.0);
        }
    }
}

/// Symmetrizes `ρ` to remove round-off anti-Hermitian drift.
pub fn hermitize(rho: &mut [C64], n: usize) {
    for i in 0..n {
        rho[i * n + i].im = 0.0;
        for j in (i + 1)..n {
            let a = (rho[i * n + j] + rho[j * n + i].conj()) * 0.5;
            rho[i * n + j] = a;
            rho[j * n + i] = a.conj();
        }
    }
}

/// Advances a mixed state under a constant Hamiltonian and jump set.
pub fn lindblad_evolve(
    state: &CompositeState,
    hamiltonian: &ComplexMatrix,
    jumps: &[JumpOperator],
    duration: f64,
    dt: f64,
) -> Result<CompositeState> {
    if hamiltonian.rows() != COMPOSITE_DIM || !hamiltonian.is_square() {
        return Err(Error::Dimension("Hamiltonian must be 36x36".into()));
    }
    let dev = hamiltonian.hermitian_deviation();
    if dev > tolerance::HERMITIAN {
        return Err(Error::NotHermitian(dev));
    }
    if !(dt > 0.0) || dt > duration {
        return Err(Error::StepSize(format!("dt = {dt} must lie in (0, duration = {duration}]")));
    }
    let channels: Vec<Channel> = jumps
        .iter()
        .filter(|j| j.rate > 0.0)
        .map(|j| Channel {
            op: SparseOp::from_dense(&j.matrix).scale(C64::new(j.rate.sqrt(), 0.0)),
            tag: j.tag,
        })
        .collect();
    let gen = Generator::new(&SparseOp::from_dense(hamiltonian), channels);
    if dt * gen.max_rate() >= tolerance::MAX_STEP_PRODUCT {
        return Err(Error::StepSize(format!(
            "dt * max_rate = {:.3} exceeds {}",
            dt * gen.max_rate(),
            tolerance::MAX_STEP_PRODUCT
        )));
    }
    let rho0 = state.density();
    let trace0 = rho0.trace().re;
    let mut rho = rho0.into_data();
    let steps = (duration / dt).ceil() as usize;
    let h = duration / steps as f64;
    let at = |_t: f64| gen.clone();
    for k in 0..steps {
        rk4_step(&mut rho, k as f64 * h, h, &at, None);
    }
    hermitize(&mut rho, COMPOSITE_DIM);
    let out = ComplexMatrix::from_vec(COMPOSITE_DIM, COMPOSITE_DIM, rho)?;
    let drift = (out.trace().re - trace0).abs();
    if drift > tolerance::EVOLVE_DRIFT {
        return Err(Error::NotNormalized(drift));
    }
    CompositeState::mixed(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defect::{DefectParams, SpinLevel};
    use crate::dynamics::jumps::{build_jump_operators, BinPhase};

    #[test]
    fn nothing_happens_without_generator() {
        let s = CompositeState::basis(SpinLevel::es(3), 0, 0).to_mixed();
        let h = ComplexMatrix::zeros(COMPOSITE_DIM, COMPOSITE_DIM);
        let out = lindblad_evolve(&s, &h, &[], 50.0, 1.0).unwrap();
        assert!((&out.density() - &s.density()).max_abs() < 1e-12);
    }

    #[test]
    fn excited_state_decays_exponentially() {
        let p = DefectParams::v1();
        let jumps = build_jump_operators(&p, BinPhase::None);
        let h = ComplexMatrix::zeros(COMPOSITE_DIM, COMPOSITE_DIM);
        let mut s = CompositeState::basis(SpinLevel::es(3), 0, 0).to_mixed();
        for k in 1..=8 {
            s = lindblad_evolve(&s, &h, &jumps, 5.0, 0.05).unwrap();
            let pes: f64 = s.defect_populations()[4..8].iter().sum();
            assert!((pes - (-(5.0 * k as f64) / 6.7).exp()).abs() < 1e-4);
        }
    }

    #[test]
    fn step_size_violation() {
        let p = DefectParams::v1();
        let jumps = build_jump_operators(&p, BinPhase::None);
        let h = ComplexMatrix::zeros(COMPOSITE_DIM, COMPOSITE_DIM);
        let s = CompositeState::basis(SpinLevel::UP, 0, 0);
        assert!(matches!(
            lindblad_evolve(&s, &h, &jumps, 10.0, 1.0),
            Err(Error::StepSize(_))
        ));
        assert!(lindblad_evolve(&s, &h, &jumps, 1.0, 2.0).is_err());
    }
}
