use proptest::prelude::*;

use spinphoton_core::analysis::{
    build_table, fidelity_estimate, g2_cross, shuffle_spin_records, visibility, CoincidenceTable,
    Estimate, RunCounts,
};
use spinphoton_core::budget::{
    generation_probability, nonradiative_fidelity, InfidelityInputs,
};
use spinphoton_core::defect::DefectParams;
use spinphoton_core::detection::{
    povm_operators, zpl_probabilities, ClickChannel, ClickRecord, EfficiencyChain,
    InterferometerModel, MeasureBasis, TimeBin,
};
use spinphoton_core::rng::{Purpose, RandomStream};
use spinphoton_core::state::composite_index;
use spinphoton_core::{tolerance, ComplexMatrix, CompositeState, C64};

fn table(counts: [[u64; 2]; 2], eta: f64) -> CoincidenceTable {
    CoincidenceTable {
        basis: MeasureBasis::Eigen,
        counts,
        runs: [1_000_000, 1_000_000],
        spin_clicks: [10_000, 10_000],
        photon_clicks: [5_000, 5_000],
        excluded_runs: 0,
        eta,
    }
}

proptest! {
    #[test]
    fn visibility_ignores_uniform_scaling(c in proptest::array::uniform4(0u64..5000), eta in 1e-3f64..1.0, k in 1e-3f64..1e3) {
        prop_assume!(c.iter().sum::<u64>() > 0);
        let counts = [[c[0], c[1]], [c[2], c[3]]];
        let a = visibility(&table(counts, eta)).unwrap().value;
        let b = visibility(&table(counts, eta * k)).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn fidelity_is_affine_and_monotone(ve in -1.0f64..1.0, vs in -1.0f64..1.0, d in 0.0f64..0.5) {
        let f = |a: f64, b: f64| fidelity_estimate(Estimate::new(a, 0.0), Estimate::new(b, 0.0)).fidelity.value;
        prop_assert!((f(ve + d, vs) - f(ve, vs) - d / 4.0).abs() < 1e-12);
        prop_assert!((f(ve, vs + d) - f(ve, vs) - d / 2.0).abs() < 1e-12);
        prop_assert!(f(ve + d, vs) >= f(ve, vs) && f(ve, vs + d) >= f(ve, vs));
    }

    #[test]
    fn povm_is_complete(phase in -10.0f64..10.0, v in 0.0f64..1.0, eff in 0.0f64..1.0, jitter in 0.0f64..30.0) {
        for basis in [MeasureBasis::Eigen, MeasureBasis::Super] {
            let ifm = InterferometerModel { visibility: v, efficiency: eff, phase_jitter_deg: jitter, ..Default::default() }
                .with_basis(basis);
            let ops = povm_operators(&ifm, phase);
            let sum = &(&ops[0] + &ops[1]) + &ops[2];
            let dev = (&sum + &ComplexMatrix::identity(2).scale_real(-1.0)).max_abs();
            prop_assert!(dev <= tolerance::POVM);
            for op in &ops {
                prop_assert!(op.hermitian_eigenvalues().iter().all(|e| *e >= -1e-12));
            }
        }
    }

    #[test]
    fn outcome_probabilities_sum_to_one(amps in proptest::collection::vec(-1.0f64..1.0, 12), phase in -4.0f64..4.0, v in 0.0f64..1.0) {
        prop_assume!(amps.iter().any(|a| a.abs() > 0.1));
        let mut psi = ComplexMatrix::zeros(36, 1);
        for k in 0..3 {
            psi[(composite_index(k, 0, 0), 0)] = C64::new(amps[4 * k], 0.0);
            psi[(composite_index(k, 1, 0), 0)] = C64::new(amps[4 * k + 1], amps[4 * k + 2]);
            psi[(composite_index(k, 0, 1), 0)] = C64::new(0.0, amps[4 * k + 3]);
        }
        let norm = psi.norm();
        let psi = psi.scale_real(1.0 / norm);
        let state = CompositeState::pure(psi).unwrap();
        for basis in [MeasureBasis::Eigen, MeasureBasis::Super] {
            let ifm = InterferometerModel { visibility: v, efficiency: 0.8, ..Default::default() }.with_basis(basis);
            let p = zpl_probabilities(&state, &ifm, phase).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|x| *x >= -1e-12));
        }
    }

    #[test]
    fn nonradiative_fidelity_is_monotone(t1 in 0.0f64..5000.0, dt in 0.0f64..5000.0, p in 0.0f64..1.0, dp in 0.0f64..1.0) {
        let base = InfidelityInputs::from_params(&DefectParams::v1(), t1);
        let later = InfidelityInputs { t_gap: t1 + dt, ..base };
        prop_assert!(nonradiative_fidelity(&later).fidelity <= nonradiative_fidelity(&base).fidelity);
        let a = InfidelityInputs { p_nonradiative: p, ..base };
        let b = InfidelityInputs { p_nonradiative: (p + dp).min(1.0), ..base };
        prop_assert!(nonradiative_fidelity(&b).fidelity <= nonradiative_fidelity(&a).fidelity);
    }

    #[test]
    fn budget_is_bit_identical(q in 0.0f64..1.0, d in 0.0f64..1.0, fiber in 0.0f64..1.0) {
        let chain = EfficiencyChain { fiber, ..Default::default() };
        prop_assert_eq!(
            generation_probability(&chain, q, d).to_bits(),
            generation_probability(&chain, q, d).to_bits()
        );
    }
}

/// Perfectly correlated eigen-basis records: spin ↑ pairs with H.
fn correlated_clicks(runs: u64, seed: u64) -> (Vec<ClickRecord>, RunCounts) {
    let mut rng = RandomStream::new(seed, Purpose::Test, 0);
    let mut clicks = Vec::new();
    let mut counts = RunCounts::new();
    for (ctx, photon) in [("eigen/up", ClickChannel::ZplH), ("eigen/down", ClickChannel::ZplV)] {
        for id in 0..runs {
            let emitted = rng.bernoulli(0.5);
            if emitted && rng.bernoulli(0.3) {
                clicks.push(ClickRecord { trajectory_id: id, channel: photon, time: 5.0, bin: TimeBin::L, basis_context: ctx.into() });
            }
            if emitted && rng.bernoulli(0.4) {
                clicks.push(ClickRecord { trajectory_id: id, channel: ClickChannel::Psb, time: 2000.0, bin: TimeBin::Na, basis_context: ctx.into() });
            }
            // the other photon outcome shows up uncorrelated with the spin
            if rng.bernoulli(0.15) {
                let other = if photon == ClickChannel::ZplH { ClickChannel::ZplV } else { ClickChannel::ZplH };
                clicks.push(ClickRecord { trajectory_id: id, channel: other, time: 5.0, bin: TimeBin::L, basis_context: ctx.into() });
            }
        }
        counts.insert(ctx.into(), runs);
    }
    (clicks, counts)
}

#[test]
fn shuffled_records_decorrelate() {
    for seed in 0..4 {
        let (clicks, runs) = correlated_clicks(40_000, seed);
        let before = g2_cross(&build_table(&clicks, MeasureBasis::Eigen, 0.2, &runs).unwrap()).unwrap();
        assert!(before[0][0].value > 1.3);
        let mut rng = RandomStream::new(seed, Purpose::Shuffle, 0);
        let shuffled = shuffle_spin_records(&clicks, &runs, &mut rng);
        let g = g2_cross(&build_table(&shuffled, MeasureBasis::Eigen, 0.2, &runs).unwrap()).unwrap();
        for e in g.iter().flatten() {
            assert!((e.value - 1.0).abs() <= 3.0 * e.error, "seed {seed}: {e:?}");
        }
    }
}
