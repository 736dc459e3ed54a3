//! Level structure and physical constants of the V1/V2 silicon vacancy.
//!
//! Basis ordering (index 0..9): ground state `+3/2, +1/2, -1/2, -3/2`,
//! excited state in the same order, then the single effective metastable
//! level. Energies are detunings in MHz; every ES sublevel shares the
//! Zeeman and ZFS shifts of its GS partner in the optical rotating frame.

use crate::error::{Error, Result};

pub const DEFECT_DIM: usize = 9;
pub const MS_INDEX: usize = 8;

/// Twice the spin projection, in GS/ES index order.
pub const TWICE_M: [i8; 4] = [3, 1, -1, -3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Manifold {
    Gs,
    Es,
    Ms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpinLevel {
    pub manifold: Manifold,
    /// Twice the spin projection; `None` for the metastable level.
    pub twice_m: Option<i8>,
}

impl SpinLevel {
    pub const fn gs(twice_m: i8) -> Self {
        Self {
            manifold: Manifold::Gs,
            twice_m: Some(twice_m),
        }
    }

    pub const fn es(twice_m: i8) -> Self {
        Self {
            manifold: Manifold::Es,
            twice_m: Some(twice_m),
        }
    }

    pub const MS: Self = Self {
        manifold: Manifold::Ms,
        twice_m: None,
    };

    /// Qubit level |↑⟩ = GS +3/2.
    pub const UP: Self = Self::gs(3);
    /// Qubit level |↓⟩ = GS +1/2.
    pub const DOWN: Self = Self::gs(1);

    pub fn m(&self) -> Option<f64> {
        self.twice_m.map(|t| t as f64 / 2.0)
    }

    pub fn index(&self) -> usize {
        let sub = |t: i8| m_slot(t).expect("spin level holds a valid projection");
        match (self.manifold, self.twice_m) {
            (Manifold::Gs, Some(t)) => sub(t),
            (Manifold::Es, Some(t)) => 4 + sub(t),
            _ => MS_INDEX,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0..=3 => Some(Self::gs(TWICE_M[index])),
            4..=7 => Some(Self::es(TWICE_M[index - 4])),
            MS_INDEX => Some(Self::MS),
            _ => None,
        }
    }
}

/// Slot 0..4 of a spin projection given as twice m.
pub fn m_slot(twice_m: i8) -> Option<usize> {
    TWICE_M.iter().position(|&t| t == twice_m)
}

/// Optical transition category. A2 drives both ±3/2 pairs, A1 both ±1/2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpticalCategory {
    A1,
    A2,
}

impl OpticalCategory {
    pub fn of_slot(slot: usize) -> Self {
        if slot == 0 || slot == 3 {
            OpticalCategory::A2
        } else {
            OpticalCategory::A1
        }
    }

    /// GS/ES slots driven by this category.
    pub fn slots(self) -> [usize; 2] {
        match self {
            OpticalCategory::A2 => [0, 3],
            OpticalCategory::A1 => [1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefectParams {
    /// GS zero-field-splitting parameter D, MHz.
    pub d_gs: f64,
    /// A1 minus A2 optical frequency, MHz.
    pub delta_zfs_optical: f64,
    /// Zeeman splitting per unit m, MHz.
    pub gamma_b: f64,
    /// Informational only, gauss.
    pub b_field: f64,
    pub es_lifetime: f64,
    pub eta_q: f64,
    pub eta_d: f64,
    pub ms_lifetime: f64,
    /// MS decay fractions to `+3/2, -3/2, +1/2, -1/2`.
    pub ms_branching: [f64; 4],
    pub linewidth_a1: f64,
    pub linewidth_a2: f64,
    /// μs.
    pub t2_star: f64,
    /// μs.
    pub t2: f64,
    pub mw_pi_fidelity: f64,
    pub init_fidelity: f64,
    /// Duration of a calibrated MW π pulse, ns.
    pub mw_pi_time: f64,
    /// Probability that an optical π pulse fails to transfer population.
    pub optical_pi_error: f64,
}

impl Default for DefectParams {
    fn default() -> Self {
        Self::v1()
    }
}

impl DefectParams {
    pub fn v1() -> Self {
        Self {
            d_gs: 2.2,
            delta_zfs_optical: 966.0,
            gamma_b: 66.4,
            b_field: 23.4,
            es_lifetime: 6.7,
            eta_q: 0.5,
            eta_d: 0.08,
            ms_lifetime: 322.0,
            ms_branching: [0.28, 0.28, 0.22, 0.22],
            linewidth_a1: 73.0,
            linewidth_a2: 61.0,
            t2_star: 1.68,
            t2: 11.0,
            mw_pi_fidelity: 0.96,
            init_fidelity: 0.96,
            mw_pi_time: 920.0,
            optical_pi_error: 0.0,
        }
    }

    /// V2 centre: 70 MHz GS ZFS and 60 ns MW π, rates inherited from V1.
    pub fn v2() -> Self {
        Self {
            d_gs: 35.0,
            mw_pi_time: 60.0,
            ..Self::v1()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "v1" | "custom" => Ok(Self::v1()),
            "v2" => Ok(Self::v2()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    /// Ideal defect: unit efficiencies, no dephasing, perfect control.
    pub fn ideal(&self) -> Self {
        Self {
            eta_q: 1.0,
            eta_d: 1.0,
            t2_star: f64::INFINITY,
            t2: f64::INFINITY,
            mw_pi_fidelity: 1.0,
            init_fidelity: 1.0,
            optical_pi_error: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        match issues.into_iter().next() {
            None => Ok(()),
            Some((name, reason)) => Err(Error::param(name, reason)),
        }
    }

    /// Every violated invariant as `(key, reason)`.
    pub fn issues(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let prob = |out: &mut Vec<_>, name: &'static str, v: f64| {
            if !(0.0..=1.0).contains(&v) {
                out.push((name, format!("must lie in [0, 1], got {v}")));
            }
        };
        prob(&mut out, "eta_q", self.eta_q);
        prob(&mut out, "eta_d", self.eta_d);
        prob(&mut out, "mw_pi_fidelity", self.mw_pi_fidelity);
        prob(&mut out, "init_fidelity", self.init_fidelity);
        prob(&mut out, "optical_pi_error", self.optical_pi_error);
        for b in self.ms_branching {
            prob(&mut out, "ms_branching", b);
        }
        let sum: f64 = self.ms_branching.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            out.push(("ms_branching", format!("must sum to 1, got {sum}")));
        }
        let positive = |out: &mut Vec<_>, name: &'static str, v: f64| {
            if !(v > 0.0) {
                out.push((name, format!("must be positive, got {v}")));
            }
        };
        positive(&mut out, "es_lifetime", self.es_lifetime);
        positive(&mut out, "ms_lifetime", self.ms_lifetime);
        positive(&mut out, "t2_star", self.t2_star);
        positive(&mut out, "mw_pi_time", self.mw_pi_time);
        if self.t2 < self.t2_star {
            out.push(("t2", format!("must be >= t2_star ({})", self.t2_star)));
        }
        for (name, v) in [
            ("d_gs", self.d_gs),
            ("delta_zfs_optical", self.delta_zfs_optical),
            ("gamma_b", self.gamma_b),
            ("b_field", self.b_field),
            ("linewidth_a1", self.linewidth_a1),
            ("linewidth_a2", self.linewidth_a2),
        ] {
            if !v.is_finite() {
                out.push((name, format!("must be finite, got {v}")));
            }
        }
        out
    }

    pub const KEYS: &'static [&'static str] = &[
        "d_gs",
        "delta_zfs_optical",
        "gamma_b",
        "b_field",
        "es_lifetime",
        "eta_q",
        "eta_d",
        "ms_lifetime",
        "ms_branching",
        "linewidth_a1",
        "linewidth_a2",
        "t2_star",
        "t2",
        "mw_pi_fidelity",
        "init_fidelity",
        "mw_pi_time",
        "optical_pi_error",
    ];

    /// Sets a parameter from its canonical key and textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::param(key, format!("not a number: `{value}`")))
        };
        match key {
            "d_gs" => self.d_gs = num()?,
            "delta_zfs_optical" => self.delta_zfs_optical = num()?,
            "gamma_b" => self.gamma_b = num()?,
            "b_field" => self.b_field = num()?,
            "es_lifetime" => self.es_lifetime = num()?,
            "eta_q" => self.eta_q = num()?,
            "eta_d" => self.eta_d = num()?,
            "ms_lifetime" => self.ms_lifetime = num()?,
            "linewidth_a1" => self.linewidth_a1 = num()?,
            "linewidth_a2" => self.linewidth_a2 = num()?,
            "t2_star" => self.t2_star = num()?,
            "t2" => self.t2 = num()?,
            "mw_pi_fidelity" => self.mw_pi_fidelity = num()?,
            "init_fidelity" => self.init_fidelity = num()?,
            "mw_pi_time" => self.mw_pi_time = num()?,
            "optical_pi_error" => self.optical_pi_error = num()?,
            "ms_branching" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::param(key, format!("not a number list: `{value}`")))?;
                if parts.len() != 4 {
                    return Err(Error::param(key, "expects four comma-separated fractions"));
                }
                self.ms_branching.copy_from_slice(&parts);
            }
            _ => return Err(Error::param(key, "unknown parameter")),
        }
        Ok(())
    }

    /// MS branching fraction into GS slot `slot` (index order).
    pub fn branching_to_slot(&self, slot: usize) -> f64 {
        match slot {
            0 => self.ms_branching[0],
            3 => self.ms_branching[1],
            1 => self.ms_branching[2],
            2 => self.ms_branching[3],
            _ => 0.0,
        }
    }

    /// Total ES decay rate, ns⁻¹.
    pub fn es_rate(&self) -> f64 {
        1.0 / self.es_lifetime
    }

    /// Standard deviation of the quasi-static qubit detuning, rad/ns.
    pub fn detuning_sigma(&self) -> f64 {
        if self.t2_star.is_finite() {
            std::f64::consts::SQRT_2 / (self.t2_star * 1e3)
        } else {
            0.0
        }
    }

    /// Markovian dephasing rate of the qubit coherence, ns⁻¹.
    pub fn dephasing_rate(&self) -> f64 {
        if self.t2.is_finite() {
            1.0 / (self.t2 * 1e3)
        } else {
            0.0
        }
    }
}

/// Energy of GS sublevel `m`: `D m² + γB m`, MHz.
pub fn energy(params: &DefectParams, m: f64) -> f64 {
    params.d_gs * m * m + params.gamma_b * m
}

/// GS energies in slot order `+3/2, +1/2, -1/2, -3/2`.
pub fn ground_energies(params: &DefectParams) -> [(f64, f64); 4] {
    TWICE_M.map(|t| {
        let m = t as f64 / 2.0;
        (m, energy(params, m))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTable {
    /// `E(-1/2) - E(-3/2)`, MHz.
    pub mw1_freq: f64,
    /// `E(+3/2) - E(+1/2)`, MHz.
    pub mw2_freq: f64,
    pub a1_offset: f64,
    pub a2_offset: f64,
    /// Optical offset of each GS↔ES pair in slot order, MHz.
    pub optical_offsets: [f64; 4],
}

pub fn transition_table(params: &DefectParams) -> TransitionTable {
    let e = ground_energies(params);
    let a2_offset = 0.0;
    let a1_offset = params.delta_zfs_optical;
    let optical_offsets = [0, 1, 2, 3].map(|s| match OpticalCategory::of_slot(s) {
        OpticalCategory::A1 => a1_offset,
        OpticalCategory::A2 => a2_offset,
    });
    TransitionTable {
        mw1_freq: e[2].1 - e[3].1,
        mw2_freq: e[0].1 - e[1].1,
        a1_offset,
        a2_offset,
        optical_offsets,
    }
}

/// MHz to angular frequency in rad/ns.
pub fn mhz_to_rad_per_ns(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f * 1e-3
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn index_bijection() {
        for i in 0..DEFECT_DIM {
            let level = SpinLevel::from_index(i).unwrap();
            assert_eq!(level.index(), i);
            assert_eq!(level.m().is_some(), level.manifold != Manifold::Ms);
        }
        assert!(SpinLevel::from_index(9).is_none());
        assert_eq!(SpinLevel::UP.index(), 0);
        assert_eq!(SpinLevel::DOWN.index(), 1);
    }

    #[test]
    fn zero_field_splitting_is_even() {
        let p = DefectParams {
            gamma_b: 0.0,
            ..DefectParams::v1()
        };
        let e = ground_energies(&p);
        assert!((e[0].1 - e[1].1 - 4.4).abs() < 1e-12);
        assert_eq!(e[0].1, e[3].1);
        assert_eq!(e[1].1, e[2].1);
    }

    #[test]
    fn v1_microwave_lines() {
        let t = transition_table(&DefectParams::v1());
        assert!((t.mw2_freq - 70.8).abs() < 1e-9);
        assert!((t.mw1_freq - 62.0).abs() < 1e-9);
        assert!((t.mw2_freq - t.mw1_freq - 8.8).abs() < 1e-9);
    }

    #[test]
    fn optical_offsets() {
        let t = transition_table(&DefectParams::v1());
        assert_eq!(t.a1_offset - t.a2_offset, 966.0);
        assert_eq!(t.optical_offsets, [0.0, 966.0, 966.0, 0.0]);
        assert_eq!(OpticalCategory::A2.slots(), [0, 3]);
    }

    #[test]
    fn degenerate_identity_case() {
        let p = DefectParams {
            d_gs: 0.0,
            gamma_b: 0.0,
            ..DefectParams::v1()
        };
        let t = transition_table(&p);
        assert_eq!(t.mw1_freq, 0.0);
        assert_eq!(t.mw2_freq, 0.0);
        assert!(ground_energies(&p).iter().all(|(_, e)| *e == 0.0));
    }

    #[test]
    fn v2_preset() {
        let p = DefectParams::v2();
        let e = ground_energies(&DefectParams { gamma_b: 0.0, ..p.clone() });
        assert!((e[0].1 - e[1].1 - 70.0).abs() < 1e-12);
        assert_eq!(p.mw_pi_time, 60.0);
        p.validate().unwrap();
    }

    #[test]
    fn invalid_params_are_reported() {
        let mut p = DefectParams::v1();
        p.eta_q = 1.5;
        p.ms_branching = [0.3, 0.3, 0.3, 0.3];
        p.t2 = 1.0;
        let keys: Vec<_> = p.issues().into_iter().map(|(k, _)| k).collect();
        assert!(keys.contains(&"eta_q"));
        assert!(keys.contains(&"ms_branching"));
        assert!(keys.contains(&"t2"));
    }

    #[test]
    fn set_by_key() {
        let mut p = DefectParams::v1();
        p.set("eta_d", "0.5").unwrap();
        p.set("ms_branching", "0.25, 0.25, 0.25, 0.25").unwrap();
        assert_eq!(p.eta_d, 0.5);
        assert_eq!(p.ms_branching, [0.25; 4]);
        assert!(p.set("eta_x", "1").is_err());
        for k in DefectParams::KEYS {
            assert!(p.clone().set(k, "0.25,0.25,0.25,0.25").is_ok() || p.clone().set(k, "1").is_ok());
        }
    }

    proptest! {
        #[test]
        fn mw_separation_is_four_d(d in -100.0f64..100.0, g in -500.0f64..500.0) {
            let p = DefectParams { d_gs: d, gamma_b: g, ..DefectParams::v1() };
            let t = transition_table(&p);
            prop_assert!((t.mw2_freq - t.mw1_freq - 4.0 * d).abs() <= 1e-9 * (1.0 + d.abs() + g.abs()));
        }

        #[test]
        fn zeeman_term_is_odd(d in -100.0f64..100.0, g in -500.0f64..500.0) {
            let p = DefectParams { d_gs: d, gamma_b: g, ..DefectParams::v1() };
            let e = ground_energies(&p);
            for (a, b) in [(0, 3), (1, 2)] {
                let zfs = d * e[a].0 * e[a].0;
                prop_assert!(((e[a].1 - zfs) + (e[b].1 - zfs)).abs() < 1e-9 * (1.0 + g.abs()));
            }
        }

        #[test]
        fn table_is_pure(d in -100.0f64..100.0, g in -500.0f64..500.0) {
            let p = DefectParams { d_gs: d, gamma_b: g, ..DefectParams::v1() };
            prop_assert_eq!(transition_table(&p), transition_table(&p));
        }
    }
}
