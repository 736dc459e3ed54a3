//! Composite state on (9-level defect) ⊗ (early mode) ⊗ (late mode).
//!
//! Composite index is `d * 4 + e * 2 + l` with `e`, `l` the early and late
//! photon occupations.

use crate::defect::{SpinLevel, DEFECT_DIM};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64, ONE, ZERO};
use crate::tolerance;

pub const PHOTON_DIM: usize = 4;
pub const COMPOSITE_DIM: usize = DEFECT_DIM * PHOTON_DIM;
pub const FACTOR_DIMS: [usize; 3] = [DEFECT_DIM, 2, 2];

pub fn composite_index(defect: usize, early: usize, late: usize) -> usize {
    defect * PHOTON_DIM + early * 2 + late
}

/// Splits a composite index into `(defect, early, late)`.
pub fn split_index(k: usize) -> (usize, usize, usize) {
    (k / PHOTON_DIM, (k / 2) % 2, k % 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Factor {
    Defect,
    Early,
    Late,
}

impl Factor {
    fn position(self) -> usize {
        match self {
            Factor::Defect => 0,
            Factor::Early => 1,
            Factor::Late => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    Pure,
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeState {
    kind: StateKind,
    data: ComplexMatrix,
}

impl CompositeState {
    pub fn pure(amplitudes: ComplexMatrix) -> Result<Self> {
        if amplitudes.rows() != COMPOSITE_DIM || amplitudes.cols() != 1 {
            return Err(Error::Dimension(format!(
                "pure state must be {COMPOSITE_DIM}x1, got {}x{}",
                amplitudes.rows(),
                amplitudes.cols()
            )));
        }
        Ok(Self {
            kind: StateKind::Pure,
            data: amplitudes,
        })
    }

    pub fn mixed(rho: ComplexMatrix) -> Result<Self> {
        if rho.rows() != COMPOSITE_DIM || rho.cols() != COMPOSITE_DIM {
            return Err(Error::Dimension(format!(
                "density matrix must be {COMPOSITE_DIM}x{COMPOSITE_DIM}, got {}x{}",
                rho.rows(),
                rho.cols()
            )));
        }
        let dev = rho.hermitian_deviation();
        if dev > tolerance::HERMITIAN {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self {
            kind: StateKind::Mixed,
            data: rho,
        })
    }

    /// Defect density matrix with both photon modes in vacuum.
    pub fn from_defect(rho_d: &ComplexMatrix) -> Result<Self> {
        if rho_d.rows() != DEFECT_DIM || rho_d.cols() != DEFECT_DIM {
            return Err(Error::Dimension("defect density must be 9x9".into()));
        }
        let mut vac = ComplexMatrix::zeros(PHOTON_DIM, PHOTON_DIM);
        vac[(0, 0)] = ONE;
        Self::mixed(rho_d.kron(&vac))
    }

    /// Basis state `|level, early, late⟩`.
    pub fn basis(level: SpinLevel, early: usize, late: usize) -> Self {
        Self {
            kind: StateKind::Pure,
            data: ComplexMatrix::basis(COMPOSITE_DIM, composite_index(level.index(), early, late)),
        }
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn data(&self) -> &ComplexMatrix {
        &self.data
    }

    /// Density matrix (promotes pure states).
    pub fn density(&self) -> ComplexMatrix {
        match self.kind {
            StateKind::Pure => ComplexMatrix::outer(&self.data, &self.data),
            StateKind::Mixed => self.data.clone(),
        }
    }

    pub fn to_mixed(&self) -> Self {
        Self {
            kind: StateKind::Mixed,
            data: self.density(),
        }
    }

    /// Squared norm (pure) or trace (mixed).
    pub fn weight(&self) -> f64 {
        match self.kind {
            StateKind::Pure => self.data.inner(&self.data).re,
            StateKind::Mixed => self.data.trace().re,
        }
    }

    pub fn is_normalized(&self) -> bool {
        let tol = match self.kind {
            StateKind::Pure => tolerance::PURE_NORM,
            StateKind::Mixed => tolerance::TRACE,
        };
        (self.weight() - 1.0).abs() <= tol
    }

    /// Checks every container invariant, including positivity.
    pub fn validate(&self) -> Result<()> {
        if !self.is_normalized() {
            return Err(Error::NotNormalized((self.weight() - 1.0).abs()));
        }
        if self.kind == StateKind::Mixed {
            let dev = self.data.hermitian_deviation();
            if dev > tolerance::HERMITIAN {
                return Err(Error::NotHermitian(dev));
            }
            let min = self.data.hermitian_eigenvalues()[0];
            if min < tolerance::POSITIVITY {
                return Err(Error::param("state", format!("negative eigenvalue {min:.3e}")));
            }
        }
        Ok(())
    }

    pub fn normalized(&self) -> Result<Self> {
        let w = self.weight();
        if !(w > 0.0) {
            return Err(Error::NotNormalized(1.0));
        }
        let s = match self.kind {
            StateKind::Pure => 1.0 / w.sqrt(),
            StateKind::Mixed => 1.0 / w,
        };
        Ok(Self {
            kind: self.kind,
            data: self.data.scale_real(s),
        })
    }

    /// Diagonal of the density matrix.
    pub fn populations(&self) -> Vec<f64> {
        match self.kind {
            StateKind::Pure => self.data.data().iter().map(|z| z.norm_sqr()).collect(),
            StateKind::Mixed => (0..COMPOSITE_DIM).map(|i| self.data[(i, i)].re).collect(),
        }
    }

    /// Population of each defect level summed over photon sectors.
    pub fn defect_populations(&self) -> [f64; DEFECT_DIM] {
        let p = self.populations();
        let mut out = [0.0; DEFECT_DIM];
        for (k, v) in p.iter().enumerate() {
            out[k / PHOTON_DIM] += v;
        }
        out
    }

    /// Weight of each photon sector `e * 2 + l`.
    pub fn photon_weights(&self) -> [f64; PHOTON_DIM] {
        let p = self.populations();
        let mut out = [0.0; PHOTON_DIM];
        for (k, v) in p.iter().enumerate() {
            out[k % PHOTON_DIM] += v;
        }
        out
    }

    /// Unnormalized projection onto the photon sectors selected by `keep`.
    pub fn project_photons(&self, keep: impl Fn(usize) -> bool) -> Self {
        let rho = self.density();
        let data = ComplexMatrix::from_fn(COMPOSITE_DIM, COMPOSITE_DIM, |i, j| {
            if keep(i % PHOTON_DIM) && keep(j % PHOTON_DIM) {
                rho[(i, j)]
            } else {
                ZERO
            }
        });
        Self {
            kind: StateKind::Mixed,
            data,
        }
    }

    /// Reduced density matrix on the kept factors, in defect-early-late order.
    pub fn partial_trace(&self, keep: &[Factor]) -> Result<ComplexMatrix> {
        if keep.is_empty() {
            return Err(Error::EmptyKeep);
        }
        let mut kept: Vec<usize> = keep.iter().map(|f| f.position()).collect();
        kept.sort_unstable();
        kept.dedup();
        let dims: Vec<usize> = kept.iter().map(|&p| FACTOR_DIMS[p]).collect();
        let out_dim: usize = dims.iter().product();
        let reduce = |k: usize| -> (usize, Vec<usize>) {
            let (d, e, l) = split_index(k);
            let parts = [d, e, l];
            let mut idx = 0;
            for &p in &kept {
                idx = idx * FACTOR_DIMS[p] + parts[p];
            }
            let traced: Vec<usize> = (0..3).filter(|p| !kept.contains(p)).map(|p| parts[p]).collect();
            (idx, traced)
        };
        let rho = self.density();
        let mut out = ComplexMatrix::zeros(out_dim, out_dim);
        let reduced: Vec<(usize, Vec<usize>)> = (0..COMPOSITE_DIM).map(reduce).collect();
        for i in 0..COMPOSITE_DIM {
            for j in 0..COMPOSITE_DIM {
                if reduced[i].1 == reduced[j].1 {
                    out[(reduced[i].0, reduced[j].0)] += rho[(i, j)];
                }
            }
        }
        Ok(out)
    }
}

/// `(|↑⟩|L⟩ + |↓⟩|E⟩)/√2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BellTarget;

impl BellTarget {
    pub fn vector(&self) -> ComplexMatrix {
        let mut v = ComplexMatrix::zeros(COMPOSITE_DIM, 1);
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        v[(composite_index(SpinLevel::UP.index(), 0, 1), 0)] = a;
        v[(composite_index(SpinLevel::DOWN.index(), 1, 0), 0)] = a;
        v
    }

    pub fn state(&self) -> CompositeState {
        CompositeState::pure(self.vector()).expect("fixed dimension")
    }
}

/// `⟨Ψ|ρ|Ψ⟩` against the Bell target.
pub fn state_fidelity(state: &CompositeState, target: &BellTarget) -> Result<f64> {
    if !state.is_normalized() {
        return Err(Error::NotNormalized((state.weight() - 1.0).abs()));
    }
    Ok(overlap(state, &target.vector()))
}

fn overlap(state: &CompositeState, psi: &ComplexMatrix) -> f64 {
    match state.kind {
        StateKind::Pure => state.data.inner(psi).norm_sqr(),
        StateKind::Mixed => psi.inner(&state.data.matmul(psi)).re,
    }
}

/// Fidelity conditioned on at least one photon-mode excitation.
pub fn conditional_fidelity(state: &CompositeState, target: &BellTarget) -> Result<f64> {
    let projected = state.project_photons(|s| s != 0);
    let w = projected.weight();
    if !(w > 0.0) {
        return Err(Error::NotNormalized(1.0));
    }
    Ok(overlap(&projected, &target.vector()) / w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ket(level: SpinLevel, e: usize, l: usize) -> ComplexMatrix {
        ComplexMatrix::basis(COMPOSITE_DIM, composite_index(level.index(), e, l))
    }

    fn projector(level: SpinLevel, e: usize, l: usize) -> ComplexMatrix {
        let k = ket(level, e, l);
        ComplexMatrix::outer(&k, &k)
    }

    #[test]
    fn bell_target_shape() {
        let v = BellTarget.vector();
        let nz: Vec<f64> = v.data().iter().map(|z| z.norm_sqr()).filter(|p| *p > 0.0).collect();
        assert_eq!(nz.len(), 2);
        assert!(nz.iter().all(|p| (p - 0.5).abs() < 1e-15));
        assert!(BellTarget.state().is_normalized());
    }

    #[test]
    fn partial_trace_of_bell_target() {
        let s = BellTarget.state();
        let d = s.partial_trace(&[Factor::Defect]).unwrap();
        let mut expect = ComplexMatrix::zeros(9, 9);
        expect[(0, 0)] = C64::new(0.5, 0.0);
        expect[(1, 1)] = C64::new(0.5, 0.0);
        assert!((&d - &expect).max_abs() < 1e-15);

        let ph = s.partial_trace(&[Factor::Early, Factor::Late]).unwrap();
        // {E, L} = photon sectors 2 and 1, each with weight one half
        assert!((ph[(2, 2)].re - 0.5).abs() < 1e-15);
        assert!((ph[(1, 1)].re - 0.5).abs() < 1e-15);
        assert!(ph[(1, 2)].norm() < 1e-15);
        assert!(s.partial_trace(&[]).is_err());
    }

    #[test]
    fn partial_trace_of_product_state() {
        let rho_d = ComplexMatrix::from_fn(9, 9, |i, j| {
            if i == j {
                C64::new((i + 1) as f64 / 45.0, 0.0)
            } else if i + 1 == j {
                C64::new(0.01, 0.02)
            } else if j + 1 == i {
                C64::new(0.01, -0.02)
            } else {
                ZERO
            }
        });
        let rho_p = ComplexMatrix::from_real(4, 4, &[
            0.4, 0.1, 0.0, 0.0, 0.1, 0.3, 0.0, 0.0, 0.0, 0.0, 0.2, 0.05, 0.0, 0.0, 0.05, 0.1,
        ])
        .unwrap();
        let s = CompositeState::mixed(rho_d.kron(&rho_p)).unwrap();
        let d = s.partial_trace(&[Factor::Defect]).unwrap();
        assert!((&d - &rho_d).max_abs() < 1e-12);
        let p = s.partial_trace(&[Factor::Early, Factor::Late]).unwrap();
        assert!((&p - &rho_p).max_abs() < 1e-12);
    }

    #[test]
    fn fidelity_examples() {
        let f = state_fidelity(&BellTarget.state(), &BellTarget).unwrap();
        assert!((f - 1.0).abs() < 1e-15);

        let dephased = &projector(SpinLevel::UP, 0, 1).scale_real(0.5)
            + &projector(SpinLevel::DOWN, 1, 0).scale_real(0.5);
        let f = state_fidelity(&CompositeState::mixed(dephased).unwrap(), &BellTarget).unwrap();
        assert!((f - 0.5).abs() < 1e-15);

        // |↑L⟩ has overlap one half with the target, so the incoherent
        // admixture leaves 0.055/2 of fidelity behind.
        let psi = BellTarget.vector();
        let rho = &(&ComplexMatrix::outer(&psi, &psi)
            + &projector(SpinLevel::UP, 0, 1).scale_real(0.055))
            + &projector(SpinLevel::gs(-3), 0, 1).scale_real(0.07);
        let rho = rho.scale_real(1.0 / 1.125);
        let f = state_fidelity(&CompositeState::mixed(rho).unwrap(), &BellTarget).unwrap();
        assert!((f - (1.0 + 0.0275) / 1.125).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let s = CompositeState::pure(BellTarget.vector().scale_real(2.0)).unwrap();
        assert!(state_fidelity(&s, &BellTarget).is_err());
    }

    fn density_from(seed: Vec<f64>) -> ComplexMatrix {
        let a = ComplexMatrix::from_fn(COMPOSITE_DIM, 3, |i, j| {
            C64::new(seed[(i * 3 + j) % seed.len()], seed[(i * 7 + j + 1) % seed.len()])
        });
        let rho = a.matmul(&a.dagger());
        let t = rho.trace().re;
        rho.scale_real(1.0 / t)
    }

    proptest! {
        #[test]
        fn partial_trace_composes(seed in proptest::collection::vec(-1.0f64..1.0, 11)) {
            prop_assume!(seed.iter().any(|x| x.abs() > 0.1));
            let s = CompositeState::mixed(density_from(seed)).unwrap();
            let once = s.partial_trace(&[Factor::Defect]).unwrap();
            // trace out the late mode first, then the early mode
            let de = s.partial_trace(&[Factor::Defect, Factor::Early]).unwrap();
            let mut twice = ComplexMatrix::zeros(9, 9);
            for i in 0..9 {
                for j in 0..9 {
                    twice[(i, j)] = de[(2 * i, 2 * j)] + de[(2 * i + 1, 2 * j + 1)];
                }
            }
            prop_assert!((&once - &twice).max_abs() < 1e-12);
            prop_assert!((once.trace().re - 1.0).abs() < 1e-12);
        }

        #[test]
        fn fidelity_is_linear(a in proptest::collection::vec(-1.0f64..1.0, 7),
                              b in proptest::collection::vec(-1.0f64..1.0, 5),
                              lambda in 0.0f64..1.0) {
            prop_assume!(a.iter().any(|x| x.abs() > 0.1) && b.iter().any(|x| x.abs() > 0.1));
            let r1 = density_from(a);
            let r2 = density_from(b);
            let mix = &r1.scale_real(lambda) + &r2.scale_real(1.0 - lambda);
            let f = |r: ComplexMatrix| state_fidelity(&CompositeState::mixed(r).unwrap(), &BellTarget).unwrap();
            let lhs = f(mix);
            let rhs = lambda * f(r1) + (1.0 - lambda) * f(r2);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
