//! Closed-form budgets: photon generation, Purcell projection and the
//! pathway-enumeration infidelity estimate.

use crate::defect::DefectParams;
use crate::detection::EfficiencyChain;

/// `η_q η_d · objective · solid_angle · path · window · fiber`.
pub fn generation_probability(chain: &EfficiencyChain, eta_q: f64, eta_d: f64) -> f64 {
    eta_q * eta_d * chain.collection() * chain.path * chain.window_fraction * chain.fiber
}

/// Generation probability after the interferometer and detector.
pub fn detected_probability(chain: &EfficiencyChain, eta_q: f64, eta_d: f64) -> f64 {
    generation_probability(chain, eta_q, eta_d) * chain.mz_interferometer * chain.snspd
}

/// Labeled factors of the generation budget, in multiplication order.
pub fn generation_breakdown(chain: &EfficiencyChain, eta_q: f64, eta_d: f64) -> Vec<(&'static str, f64)> {
    vec![
        ("eta_q", eta_q),
        ("eta_d", eta_d),
        ("objective", chain.objective),
        ("solid_angle_with_sil", chain.solid_angle_with_sil),
        ("path", chain.path),
        ("window_fraction", chain.window_fraction),
        ("fiber", chain.fiber),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PurcellMode {
    /// Use the enhanced efficiencies as given.
    Fixed { eta_d: f64, eta_q: f64 },
    /// `η' = F η / (F η + 1 - η)` for both efficiencies.
    Formula,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PurcellInputs {
    pub purcell_factor: f64,
    pub eta_d_bare: f64,
    pub eta_q_bare: f64,
    pub eta_t: f64,
    pub eta_c: f64,
    pub mode: PurcellMode,
}

impl Default for PurcellInputs {
    fn default() -> Self {
        Self {
            purcell_factor: 134.0,
            eta_d_bare: 0.08,
            eta_q_bare: 0.50,
            eta_t: 0.94,
            eta_c: 0.93,
            mode: PurcellMode::Fixed {
                eta_d: 0.92,
                eta_q: 0.92,
            },
        }
    }
}

fn enhance(f: f64, eta: f64) -> f64 {
    f * eta / (f * eta + 1.0 - eta)
}

/// Enhanced `(η_d, η_q)`; a vanishing Purcell factor means no cavity.
pub fn purcell_efficiencies(inputs: &PurcellInputs) -> (f64, f64) {
    if inputs.purcell_factor <= 0.0 {
        return (inputs.eta_d_bare, inputs.eta_q_bare);
    }
    match inputs.mode {
        PurcellMode::Fixed { eta_d, eta_q } => (eta_d, eta_q),
        PurcellMode::Formula => (
            enhance(inputs.purcell_factor, inputs.eta_d_bare),
            enhance(inputs.purcell_factor, inputs.eta_q_bare),
        ),
    }
}

/// `η_d η_q η_t η_c`; bare `η_d η_q` without a cavity.
pub fn purcell_budget(inputs: &PurcellInputs) -> f64 {
    let (d, q) = purcell_efficiencies(inputs);
    if inputs.purcell_factor <= 0.0 {
        return d * q;
    }
    d * q * inputs.eta_t * inputs.eta_c
}

/// Fraction of MS population that has decayed after `t_gap`; an infinite
/// gap means complete return.
pub fn ms_survival_fraction(t_gap: f64, ms_lifetime: f64) -> f64 {
    -(-t_gap / ms_lifetime).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfidelityInputs {
    pub p_superposition_excited: f64,
    pub p_nonradiative: f64,
    pub branch_to_up_partner: f64,
    pub branch_to_minus_three_halves: f64,
    pub t_gap: f64,
    pub ms_lifetime: f64,
}

impl InfidelityInputs {
    /// `branch_to_up_partner` is the MS branching into +1/2 (the MW2 partner
    /// of |↑⟩); the other weight uses the -3/2 branching.
    pub fn from_params(params: &DefectParams, t_gap: f64) -> Self {
        Self {
            p_superposition_excited: 0.5,
            p_nonradiative: 1.0 - params.eta_q,
            branch_to_up_partner: params.ms_branching[2],
            branch_to_minus_three_halves: params.ms_branching[1],
            t_gap,
            ms_lifetime: params.ms_lifetime,
        }
    }

    pub fn survival(&self) -> f64 {
        ms_survival_fraction(self.t_gap, self.ms_lifetime)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonradiativeFidelity {
    /// Incoherent |↑, L⟩ weight.
    pub w1: f64,
    /// Incoherent |-3/2, L⟩ weight.
    pub w2: f64,
    pub fidelity: f64,
}

/// Pathway enumeration with the coherent part carrying weight one.
pub fn nonradiative_fidelity(inputs: &InfidelityInputs) -> NonradiativeFidelity {
    let base = inputs.p_superposition_excited * inputs.p_nonradiative * inputs.survival();
    let w1 = base * inputs.branch_to_up_partner;
    let w2 = base * inputs.branch_to_minus_three_halves;
    NonradiativeFidelity {
        w1,
        w2,
        fidelity: 1.0 / (1.0 + w1 + w2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_chain_gives_one() {
        let chain = EfficiencyChain::ideal();
        assert_eq!(generation_probability(&chain, 1.0, 1.0), 1.0);
    }

    #[test]
    fn purcell_limits() {
        let ideal = PurcellInputs {
            eta_t: 1.0,
            eta_c: 1.0,
            mode: PurcellMode::Fixed { eta_d: 1.0, eta_q: 1.0 },
            ..Default::default()
        };
        assert_eq!(purcell_budget(&ideal), 1.0);
        let none = PurcellInputs {
            purcell_factor: 0.0,
            ..Default::default()
        };
        assert!((purcell_budget(&none) - 0.04).abs() < 1e-15);
        let formula = PurcellInputs {
            mode: PurcellMode::Formula,
            ..Default::default()
        };
        let (d, q) = purcell_efficiencies(&formula);
        assert!((d - 134.0 * 0.08 / (134.0 * 0.08 + 0.92)).abs() < 1e-15);
        assert!(q > 0.99);
    }

    #[test]
    fn survival_edges() {
        assert_eq!(ms_survival_fraction(0.0, 322.0), 0.0);
        assert!((ms_survival_fraction(1060.0, 322.0) - 0.963).abs() < 5e-4);
    }

    #[test]
    fn no_isc_means_unit_fidelity() {
        let mut i = InfidelityInputs::from_params(&DefectParams::v1(), 1060.0);
        i.p_nonradiative = 0.0;
        assert_eq!(nonradiative_fidelity(&i).fidelity, 1.0);
    }

    #[test]
    fn fidelity_monotone_over_grid() {
        let p = DefectParams::v1();
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let f = nonradiative_fidelity(&InfidelityInputs::from_params(&p, 20.0 * k as f64)).fidelity;
            assert!(f <= last);
            last = f;
        }
        let mut last = f64::INFINITY;
        for k in 0..=20 {
            let mut i = InfidelityInputs::from_params(&p, 500.0);
            i.p_nonradiative = k as f64 / 20.0;
            let f = nonradiative_fidelity(&i).fidelity;
            assert!(f <= last);
            last = f;
        }
    }
}
