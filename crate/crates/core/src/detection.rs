//! Detection chain: efficiency thinning, time-bin interferometer, PSB spin
//! readout, noise injection and the click-record format.

use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::defect::{DefectParams, DEFECT_DIM, MS_INDEX};
use crate::dynamics::jumps::{isc_rate, mode_fraction};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64, ZERO};
use crate::rng::RandomStream;
use crate::sequence::BIN_WINDOW;
use crate::state::{CompositeState, PHOTON_DIM};
use crate::tolerance;

/// Photon sector index of `|E⟩` (early occupied, late empty).
pub const SECTOR_E: usize = 2;
/// Photon sector index of `|L⟩`.
pub const SECTOR_L: usize = 1;
pub const SECTOR_EL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EfficiencyChain {
    pub objective: f64,
    pub solid_angle_with_sil: f64,
    /// Beam splitter, filters and polarizer combined.
    pub path: f64,
    pub window_fraction: f64,
    pub fiber: f64,
    pub mz_interferometer: f64,
    pub snspd: f64,
}

impl Default for EfficiencyChain {
    fn default() -> Self {
        Self {
            objective: 0.70,
            solid_angle_with_sil: 0.13,
            path: 0.33,
            window_fraction: 0.46,
            fiber: 0.36,
            mz_interferometer: 0.63,
            snspd: 0.85,
        }
    }
}

impl EfficiencyChain {
    pub fn ideal() -> Self {
        Self {
            objective: 1.0,
            solid_angle_with_sil: 1.0,
            path: 1.0,
            window_fraction: 1.0,
            fiber: 1.0,
            mz_interferometer: 1.0,
            snspd: 1.0,
        }
    }

    /// Optical path sub-factors: beam splitter, filters, polarizer.
    pub const PATH_PARTS: [(&'static str, f64); 3] =
        [("beam_splitter", 0.90), ("filters", 0.93), ("polarizer", 0.39)];

    /// `objective · solid_angle`.
    pub fn collection(&self) -> f64 {
        self.objective * self.solid_angle_with_sil
    }

    /// Emission to fiber output, without temporal filtering.
    pub fn to_fiber(&self) -> f64 {
        self.collection() * self.path * self.fiber
    }

    /// Interferometer and detector.
    pub fn measurement(&self) -> f64 {
        self.mz_interferometer * self.snspd
    }

    pub fn issues(&self) -> Vec<(&'static str, String)> {
        [
            ("objective", self.objective),
            ("solid_angle_with_sil", self.solid_angle_with_sil),
            ("path", self.path),
            ("window_fraction", self.window_fraction),
            ("fiber", self.fiber),
            ("mz_interferometer", self.mz_interferometer),
            ("snspd", self.snspd),
        ]
        .into_iter()
        .filter(|(_, v)| !(0.0..=1.0).contains(v))
        .map(|(k, v)| (k, format!("must lie in [0, 1], got {v}")))
        .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeasureBasis {
    Eigen,
    Super,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterferometerModel {
    pub delay: f64,
    /// Half-wave plate angle: 0 for the eigenbasis, π/8 for superpositions.
    pub hwp_angle: f64,
    pub phase_setpoint: f64,
    pub visibility: f64,
    pub phase_jitter_deg: f64,
    /// Interferometer transmission times detector efficiency.
    pub efficiency: f64,
}

impl Default for InterferometerModel {
    fn default() -> Self {
        Self {
            delay: 1060.0,
            hwp_angle: 0.0,
            phase_setpoint: 0.0,
            visibility: 0.90,
            phase_jitter_deg: 11.0,
            efficiency: 1.0,
        }
    }
}

impl InterferometerModel {
    pub fn with_basis(mut self, basis: MeasureBasis) -> Self {
        self.hwp_angle = match basis {
            MeasureBasis::Eigen => 0.0,
            MeasureBasis::Super => PI / 8.0,
        };
        self
    }

    pub fn basis(&self) -> MeasureBasis {
        if (self.hwp_angle - PI / 8.0).abs() < 1e-6 {
            MeasureBasis::Super
        } else {
            MeasureBasis::Eigen
        }
    }

    pub fn jitter_rad(&self) -> f64 {
        self.phase_jitter_deg.to_radians()
    }

    pub fn issues(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.visibility) {
            out.push(("visibility", format!("must lie in [0, 1], got {}", self.visibility)));
        }
        if !(self.delay > 0.0) {
            out.push(("delay", format!("must be positive, got {}", self.delay)));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            out.push(("efficiency", format!("must lie in [0, 1], got {}", self.efficiency)));
        }
        if self.phase_jitter_deg < 0.0 {
            out.push(("phase_jitter_deg", "must be non-negative".into()));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub extinction_db: f64,
    /// Per ZPL detector, counts/ns.
    pub dark_count_rate: f64,
    /// Per PSB detector, counts/ns.
    pub psb_dark_count_rate: f64,
    pub afterpulse_prob: f64,
    /// `(start, end)` relative to each excitation, ns.
    pub zpl_window: (f64, f64),
    pub snr_target: f64,
    /// Fraction of one excitation-pulse photon that reaches the fiber at 0 dB.
    pub leak_fraction: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            extinction_db: 30.0,
            dark_count_rate: 1e-8,
            psb_dark_count_rate: 1e-8,
            afterpulse_prob: 0.01,
            zpl_window: (2.5, 12.5),
            snr_target: 30.0,
            leak_fraction: 0.02,
        }
    }
}

impl NoiseModel {
    pub fn silent() -> Self {
        Self {
            dark_count_rate: 0.0,
            psb_dark_count_rate: 0.0,
            afterpulse_prob: 0.0,
            extinction_db: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn window_length(&self) -> f64 {
        self.zpl_window.1 - self.zpl_window.0
    }

    /// Expected leaked excitation photons per pulse reaching the ZPL detectors.
    pub fn leak_per_pulse(&self, chain: &EfficiencyChain) -> f64 {
        if !self.extinction_db.is_finite() {
            return 0.0;
        }
        10f64.powf(-self.extinction_db / 10.0)
            * self.leak_fraction
            * chain.path
            * chain.fiber
            * chain.measurement()
    }

    /// Expected background clicks per channel and window.
    pub fn background_per_window(&self, chain: &EfficiencyChain) -> f64 {
        self.dark_count_rate * self.window_length() + 0.5 * self.leak_per_pulse(chain)
    }

    pub fn issues(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.zpl_window.0 < self.zpl_window.1) {
            out.push(("zpl_window", "start must precede end".into()));
        }
        if self.extinction_db < 0.0 {
            out.push(("extinction_db", "must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.afterpulse_prob) {
            out.push(("afterpulse_prob", "must lie in [0, 1]".into()));
        }
        if self.dark_count_rate < 0.0 || self.psb_dark_count_rate < 0.0 {
            out.push(("dark_count_rate", "must be non-negative".into()));
        }
        out
    }
}

/// Probability that a photon stored in a bin mode arrives inside the window.
pub fn window_probability(params: &DefectParams, window: (f64, f64), bin_window: f64) -> f64 {
    let g = params.es_rate();
    let lo = window.0.clamp(0.0, bin_window);
    let hi = window.1.clamp(0.0, bin_window);
    ((-g * lo).exp() - (-g * hi).exp()) / mode_fraction(g, bin_window)
}

/// Arrival time of a stored photon, drawn from the mode shape on `[0, bin_window]`.
pub fn sample_arrival(params: &DefectParams, bin_window: f64, rng: &mut RandomStream) -> f64 {
    let g = params.es_rate();
    let u = rng.uniform();
    -(1.0 - u * mode_fraction(g, bin_window)).ln() / g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClickChannel {
    ZplPlus,
    ZplMinus,
    ZplH,
    ZplV,
    Psb,
    Dark,
}

impl ClickChannel {
    pub fn token(self) -> &'static str {
        match self {
            ClickChannel::ZplPlus => "ZPL_PLUS",
            ClickChannel::ZplMinus => "ZPL_MINUS",
            ClickChannel::ZplH => "ZPL_H",
            ClickChannel::ZplV => "ZPL_V",
            ClickChannel::Psb => "PSB",
            ClickChannel::Dark => "DARK",
        }
    }

    pub fn from_token(s: &str) -> Result<Self> {
        Ok(match s {
            "ZPL_PLUS" => ClickChannel::ZplPlus,
            "ZPL_MINUS" => ClickChannel::ZplMinus,
            "ZPL_H" => ClickChannel::ZplH,
            "ZPL_V" => ClickChannel::ZplV,
            "PSB" => ClickChannel::Psb,
            "DARK" => ClickChannel::Dark,
            other => return Err(Error::Parse(format!("unknown channel `{other}`"))),
        })
    }

    pub fn is_zpl(self) -> bool {
        matches!(
            self,
            ClickChannel::ZplPlus | ClickChannel::ZplMinus | ClickChannel::ZplH | ClickChannel::ZplV
        )
    }

    pub fn zpl_pair(basis: MeasureBasis) -> [ClickChannel; 2] {
        match basis {
            MeasureBasis::Eigen => [ClickChannel::ZplH, ClickChannel::ZplV],
            MeasureBasis::Super => [ClickChannel::ZplPlus, ClickChannel::ZplMinus],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimeBin {
    E,
    L,
    Na,
}

impl TimeBin {
    pub fn token(self) -> &'static str {
        match self {
            TimeBin::E => "E",
            TimeBin::L => "L",
            TimeBin::Na => "NA",
        }
    }

    pub fn from_token(s: &str) -> Result<Self> {
        Ok(match s {
            "E" => TimeBin::E,
            "L" => TimeBin::L,
            "NA" => TimeBin::Na,
            other => return Err(Error::Parse(format!("unknown bin `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClickRecord {
    pub trajectory_id: u64,
    pub channel: ClickChannel,
    pub time: f64,
    pub bin: TimeBin,
    pub basis_context: String,
}

pub const CSV_HEADER: [&str; 5] = ["trajectory_id", "channel", "time_ns", "bin", "basis_context"];

pub fn write_clicks<W: Write>(out: W, clicks: &[ClickRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for c in clicks {
        w.write_record([
            c.trajectory_id.to_string(),
            c.channel.token().to_string(),
            format!("{:.4}", c.time),
            c.bin.token().to_string(),
            c.basis_context.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_clicks<R: Read>(input: R) -> Result<Vec<ClickRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Parse(format!("row with {} fields", rec.len())));
        }
        out.push(ClickRecord {
            trajectory_id: rec[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad trajectory id `{}`", &rec[0])))?,
            channel: ClickChannel::from_token(&rec[1])?,
            time: rec[2]
                .parse()
                .map_err(|_| Error::Parse(format!("bad time `{}`", &rec[2])))?,
            bin: TimeBin::from_token(&rec[3])?,
            basis_context: rec[4].to_string(),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ZplOutcome {
    Plus,
    Minus,
    H,
    V,
    None,
}

impl ZplOutcome {
    pub fn channel(self) -> Option<ClickChannel> {
        match self {
            ZplOutcome::Plus => Some(ClickChannel::ZplPlus),
            ZplOutcome::Minus => Some(ClickChannel::ZplMinus),
            ZplOutcome::H => Some(ClickChannel::ZplH),
            ZplOutcome::V => Some(ClickChannel::ZplV),
            ZplOutcome::None => None,
        }
    }
}

/// Defect block `⟨a|ρ|b⟩` between photon sectors `a` and `b`.
fn defect_block(rho: &ComplexMatrix, a: usize, b: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(DEFECT_DIM, DEFECT_DIM, |i, j| {
        rho[(i * PHOTON_DIM + a, j * PHOTON_DIM + b)]
    })
}

/// Amplitude-damping loss on both photon modes.
pub fn apply_mode_loss(state: &CompositeState, t_early: f64, t_late: f64) -> CompositeState {
    let rho = state.density();
    let n = rho.rows();
    let mut out = ComplexMatrix::zeros(n, n);
    let t = [t_late, t_early];
    // Kraus operators act bitwise: bit 1 = late, bit 2 = early
    for i in 0..n {
        for j in 0..n {
            let z = rho[(i, j)];
            if z == ZERO {
                continue;
            }
            let (pi, pj) = (i % PHOTON_DIM, j % PHOTON_DIM);
            let (di, dj) = (i - pi, j - pj);
            for lost in 0..PHOTON_DIM {
                // photons in `lost` are removed from both sides
                if lost & pi != lost || lost & pj != lost {
                    continue;
                }
                let mut f = 1.0;
                for (bit, tb) in [(1usize, t[0]), (2usize, t[1])] {
                    let in_i = pi & bit != 0;
                    let in_j = pj & bit != 0;
                    if lost & bit != 0 {
                        f *= 1.0 - tb;
                    } else {
                        if in_i {
                            f *= tb.sqrt();
                        }
                        if in_j {
                            f *= tb.sqrt();
                        }
                    }
                }
                out[(di + (pi & !lost), dj + (pj & !lost))] += z * f;
            }
        }
    }
    CompositeState::mixed(out).expect("loss map preserves hermiticity")
}

/// POVM elements `(first, second, none)` on the single-photon space,
/// ordered `(|E⟩, |L⟩)`.
pub fn povm_operators(ifm: &InterferometerModel, phase: f64) -> [ComplexMatrix; 3] {
    let eta = ifm.efficiency;
    let diag = |e: f64, l: f64| {
        let mut m = ComplexMatrix::zeros(2, 2);
        m[(0, 0)] = C64::new(e, 0.0);
        m[(1, 1)] = C64::new(l, 0.0);
        m
    };
    let (first, second) = match ifm.basis() {
        MeasureBasis::Eigen => (diag(0.0, eta), diag(eta, 0.0)),
        MeasureBasis::Super => {
            let v = ifm.visibility;
            let off = C64::new(phase.cos(), -phase.sin()) * (0.5 * eta * v);
            let half = |sign: f64| {
                let mut m = diag(0.5 * eta, 0.5 * eta);
                m[(0, 1)] = off * sign;
                m[(1, 0)] = off.conj() * sign;
                m
            };
            (half(1.0), half(-1.0))
        }
    };
    [first, second, diag(1.0 - eta, 1.0 - eta)]
}

/// Outcome probabilities `(first, second, none)` of a single-excitation state.
pub fn zpl_probabilities(state: &CompositeState, ifm: &InterferometerModel, phase: f64) -> Result<[f64; 3]> {
    let rho = state.density();
    let w = state.photon_weights();
    if w[SECTOR_EL] > tolerance::DOUBLE_EXCITATION {
        return Err(Error::DoubleExcitation(w[SECTOR_EL]));
    }
    let total: f64 = w.iter().sum();
    let eta = ifm.efficiency;
    let (we, wl) = (w[SECTOR_E] / total, w[SECTOR_L] / total);
    Ok(match ifm.basis() {
        MeasureBasis::Eigen => [eta * wl, eta * we, 1.0 - eta * (we + wl)],
        MeasureBasis::Super => {
            let c = defect_block(&rho, SECTOR_L, SECTOR_E).trace() / total;
            let corr = ifm.visibility * (phase.cos() * 2.0 * c.re + phase.sin() * 2.0 * c.im);
            let single = we + wl;
            [
                eta * 0.5 * (single + corr),
                eta * 0.5 * (single - corr),
                1.0 - eta * single,
            ]
        }
    })
}

/// Measures the photonic qubit and returns the normalized defect state.
///
/// Eigenbasis outcomes are `H` (late) and `V` (early); superposition
/// outcomes are `Plus` and `Minus`.
pub fn zpl_measure(
    joint: &CompositeState,
    ifm: &InterferometerModel,
    rng: &mut RandomStream,
) -> Result<(ZplOutcome, ComplexMatrix)> {
    let total = joint.weight();
    if (total - 1.0).abs() > tolerance::TRACE {
        return Err(Error::NotNormalized((total - 1.0).abs()));
    }
    let phase = ifm.phase_setpoint
        + if ifm.basis() == MeasureBasis::Super && ifm.phase_jitter_deg > 0.0 {
            rng.normal(0.0, ifm.jitter_rad())
        } else {
            0.0
        };
    let p = zpl_probabilities(joint, ifm, phase)?;
    let k = rng.categorical(&p);
    let rho = joint.density();
    let eta = ifm.efficiency;
    let block = |a, b| defect_block(&rho, a, b);
    let (outcome, post) = match (ifm.basis(), k) {
        (_, 2) => {
            // no click: photon lost or vacuum
            let keep = &(&block(0, 0) + &block(SECTOR_E, SECTOR_E).scale_real(1.0 - eta))
                + &block(SECTOR_L, SECTOR_L).scale_real(1.0 - eta);
            (ZplOutcome::None, keep)
        }
        (MeasureBasis::Eigen, 0) => (ZplOutcome::H, block(SECTOR_L, SECTOR_L)),
        (MeasureBasis::Eigen, _) => (ZplOutcome::V, block(SECTOR_E, SECTOR_E)),
        (MeasureBasis::Super, k) => {
            let sign = if k == 0 { 1.0 } else { -1.0 };
            let diag = &block(SECTOR_E, SECTOR_E) + &block(SECTOR_L, SECTOR_L);
            // tr_ph[(X cos + Y sin) ρ] = e^{-iφ} ⟨E|ρ|L⟩ + e^{iφ} ⟨L|ρ|E⟩
            let coh = &block(SECTOR_L, SECTOR_E).scale(C64::from_polar(1.0, phase))
                + &block(SECTOR_E, SECTOR_L).scale(C64::from_polar(1.0, -phase));
            let m = &diag + &coh.scale_real(sign * ifm.visibility);
            (
                if k == 0 { ZplOutcome::Plus } else { ZplOutcome::Minus },
                m.scale_real(0.5),
            )
        }
    };
    let w = post.trace().re;
    let post = if w > 0.0 { post.scale_real(1.0 / w) } else { post };
    Ok((outcome, post))
}

/// Signal ZPL outcome classes of one run: none, single `j = 0`, single
/// `j = 1` and several clicks. Each entry is the class probability and the
/// unnormalized defect state left behind (trace equals the probability).
pub fn zpl_classes(
    state: &CompositeState,
    transmission: f64,
    ifm: &InterferometerModel,
) -> [(f64, ComplexMatrix); 4] {
    let rho = apply_mode_loss(state, transmission, transmission).density();
    let eta = ifm.efficiency;
    let block = |a, b| defect_block(&rho, a, b);
    let (e, l, el) = (block(SECTOR_E, SECTOR_E), block(SECTOR_L, SECTOR_L), block(SECTOR_EL, SECTOR_EL));
    let none = &(&block(0, 0) + &(&e + &l).scale_real(1.0 - eta)) + &el.scale_real((1.0 - eta).powi(2));
    let one_of_two = el.scale_real(eta * (1.0 - eta));
    let (first, second) = match ifm.basis() {
        MeasureBasis::Eigen => (
            &l.scale_real(eta) + &one_of_two,
            &e.scale_real(eta) + &one_of_two,
        ),
        MeasureBasis::Super => {
            // Gaussian phase jitter averages the fringe contrast
            let v = ifm.visibility * (-0.5 * ifm.jitter_rad().powi(2)).exp();
            let phi = ifm.phase_setpoint;
            let diag = (&e + &l).scale_real(0.5 * eta);
            let coh = (&block(SECTOR_L, SECTOR_E).scale(C64::from_polar(1.0, phi))
                + &block(SECTOR_E, SECTOR_L).scale(C64::from_polar(1.0, -phi)))
                .scale_real(0.5 * eta * v);
            (
                &(&diag + &coh) + &one_of_two,
                &(&diag - &coh) + &one_of_two,
            )
        }
    };
    let multi = el.scale_real(eta * eta);
    [none, first, second, multi].map(|m| (m.trace().re, m))
}

/// Continuous A2 readout of the defect population.
#[derive(Clone, Debug, PartialEq)]
pub struct PsbReadout {
    /// Pump rate of the ±3/2 cycling transitions, ns⁻¹.
    pub pump_rate: f64,
    /// Probability that a PSB photon is detected.
    pub collection: f64,
    pub duration: f64,
    pub dark_rate: f64,
    params: DefectParams,
}

/// Target `P(click | ↑)` used to calibrate the PSB collection.
pub const ETA_TARGET: f64 = 0.01;
/// Default readout pump rate, ns⁻¹.
pub const READOUT_PUMP: f64 = 0.1;

impl PsbReadout {
    pub fn new(params: &DefectParams, duration: f64, collection: f64) -> Self {
        Self {
            pump_rate: READOUT_PUMP,
            collection,
            duration,
            dark_rate: 0.0,
            params: params.clone(),
        }
    }

    /// Readout whose collection is tuned so that `P(click | ↑) = eta`.
    pub fn calibrated(params: &DefectParams, duration: f64, eta: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::param("duration", "readout duration must be positive"));
        }
        let mut r = Self::new(params, duration, 1.0);
        if r.click_probabilities()[0] < eta {
            return Err(Error::param("eta", format!("{eta} is unreachable with full collection")));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            r.collection = 0.5 * (lo + hi);
            if r.click_probabilities()[0] < eta {
                lo = r.collection;
            } else {
                hi = r.collection;
            }
        }
        r.collection = 0.5 * (lo + hi);
        Ok(r)
    }

    fn psb_detect_rate(&self) -> f64 {
        self.params.eta_q * (1.0 - self.params.eta_d) / self.params.es_lifetime * self.collection
    }

    /// Generator of the population dynamics with detected emission removed.
    fn killed_rates(&self) -> Vec<(usize, usize, f64)> {
        let p = &self.params;
        let rad = p.eta_q / p.es_lifetime;
        let detect = self.psb_detect_rate();
        let mut r = Vec::new();
        for slot in [0usize, 3] {
            r.push((slot, slot + 4, self.pump_rate));
        }
        for slot in 0..4 {
            r.push((slot + 4, slot, rad - detect));
            r.push((slot + 4, MS_INDEX, isc_rate(p)));
            r.push((slot + 4, usize::MAX, detect));
            r.push((MS_INDEX, slot, p.branching_to_slot(slot) / p.ms_lifetime));
        }
        r
    }

    /// `P(at least one signal click)` for each starting level.
    pub fn click_probabilities(&self) -> [f64; DEFECT_DIM] {
        let rates = self.killed_rates();
        let max_out = rates.iter().map(|r| r.2).fold(0.0, f64::max) * 2.0;
        let dt_bound = 0.05f64.min(0.1 / max_out.max(1e-12));
        let steps = (self.duration / dt_bound).ceil() as usize;
        let dt = self.duration / steps as f64;
        // backward equation: u_i = P(no click | start in i), du/dt = Q u
        let deriv = |u: &[f64; DEFECT_DIM]| {
            let mut d = [0.0; DEFECT_DIM];
            for &(from, to, k) in &rates {
                let target = if to == usize::MAX { 0.0 } else { u[to] };
                d[from] += k * (target - u[from]);
            }
            d
        };
        let mut u = [1.0; DEFECT_DIM];
        for _ in 0..steps {
            let k1 = deriv(&u);
            let a = add(&u, &k1, 0.5 * dt);
            let k2 = deriv(&a);
            let b = add(&u, &k2, 0.5 * dt);
            let k3 = deriv(&b);
            let c = add(&u, &k3, dt);
            let k4 = deriv(&c);
            for i in 0..DEFECT_DIM {
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let dark = (-self.dark_rate * self.duration).exp();
        u.map(|x| 1.0 - x * dark)
    }

    /// Click probability of a defect density (linear in its populations).
    pub fn click_probability(&self, rho_d: &ComplexMatrix) -> f64 {
        let c = self.click_probabilities();
        (0..DEFECT_DIM).map(|i| rho_d[(i, i)].re * c[i]).sum()
    }

    /// Samples the click times of one readout starting in `level`.
    pub fn sample(&self, level: usize, start: f64, rng: &mut RandomStream) -> Vec<f64> {
        let p = &self.params;
        let gamma = p.es_rate();
        let end = start + self.duration;
        let mut t = start;
        let mut level = level;
        let mut clicks = Vec::new();
        loop {
            let rate = match level {
                0 | 3 => self.pump_rate,
                4..=7 => gamma,
                MS_INDEX => 1.0 / p.ms_lifetime,
                _ => 0.0,
            };
            if rate <= 0.0 {
                break;
            }
            t += rng.exponential(rate);
            if t >= end {
                break;
            }
            level = match level {
                0 | 3 => level + 4,
                4..=7 => {
                    let u = rng.uniform();
                    if u < p.eta_q {
                        if rng.uniform() < 1.0 - p.eta_d && rng.bernoulli(self.collection) {
                            clicks.push(t);
                        }
                        level - 4
                    } else {
                        MS_INDEX
                    }
                }
                _ => {
                    let w = [0, 1, 2, 3].map(|s| p.branching_to_slot(s));
                    rng.categorical(&w)
                }
            };
        }
        if self.dark_rate > 0.0 {
            let n = rng.poisson(self.dark_rate * self.duration);
            for _ in 0..n {
                clicks.push(start + rng.uniform() * self.duration);
            }
        }
        clicks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        clicks
    }
}

fn add(u: &[f64; DEFECT_DIM], k: &[f64; DEFECT_DIM], h: f64) -> [f64; DEFECT_DIM] {
    let mut o = *u;
    for i in 0..DEFECT_DIM {
        o[i] += h * k[i];
    }
    o
}

/// Everything the detection pipeline needs to turn a final state into clicks.
#[derive(Clone, Debug)]
pub struct DetectionSetup {
    pub params: DefectParams,
    pub chain: EfficiencyChain,
    pub ifm: InterferometerModel,
    pub noise: NoiseModel,
    pub readout: PsbReadout,
    /// Times of the early and late excitation pulses, ns.
    pub excitations: [f64; 2],
    pub readout_start: f64,
    pub bin_window: f64,
    pub basis_context: String,
}

impl DetectionSetup {
    /// Transmission of a stored photon to the interferometer input, without
    /// temporal filtering.
    pub fn fiber_transmission(&self) -> f64 {
        self.chain.to_fiber()
    }

    pub fn window_probability(&self) -> f64 {
        window_probability(&self.params, self.noise.zpl_window, self.bin_window)
    }
}

fn sample_pure_loss(
    psi: &[C64],
    transmissions: [f64; 2],
    rng: &mut RandomStream,
) -> Vec<C64> {
    // bit 2 = early (transmissions[0]), bit 1 = late (transmissions[1])
    let mut state = psi.to_vec();
    for (bit, t) in [(2usize, transmissions[0]), (1usize, transmissions[1])] {
        let mut kept = vec![ZERO; state.len()];
        let mut lost = vec![ZERO; state.len()];
        for (k, z) in state.iter().enumerate() {
            if k & bit != 0 {
                kept[k] = z * t.sqrt();
                lost[k - bit] += z * (1.0 - t).sqrt();
            } else {
                kept[k] = *z;
            }
        }
        let pk: f64 = kept.iter().map(|z| z.norm_sqr()).sum();
        let pl: f64 = lost.iter().map(|z| z.norm_sqr()).sum();
        let chosen = if rng.uniform() * (pk + pl) < pk { kept } else { lost };
        let n = chosen.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        state = chosen.into_iter().map(|z| z / n).collect();
    }
    state
}

/// Clicks of one protocol run from its final pure state.
pub fn detect_pure(
    psi: &CompositeState,
    trajectory_id: u64,
    setup: &DetectionSetup,
    rng: &mut RandomStream,
) -> Result<Vec<ClickRecord>> {
    let amps = psi.data().data().to_vec();
    let ctx = setup.basis_context.clone();
    let mut clicks = Vec::new();
    let click = |channel, time, bin| ClickRecord {
        trajectory_id,
        channel,
        time,
        bin,
        basis_context: ctx.clone(),
    };
    let win = setup.noise.zpl_window;
    let arrivals = [
        sample_arrival(&setup.params, setup.bin_window, rng),
        sample_arrival(&setup.params, setup.bin_window, rng),
    ];
    let inside = |s: f64| s >= win.0 && s <= win.1;
    let t_fiber = setup.fiber_transmission();
    let trans = arrivals.map(|s| if inside(s) { t_fiber } else { 0.0 });
    let after = sample_pure_loss(&amps, trans, rng);
    let joint = CompositeState::pure(ComplexMatrix::column(&after))?;
    let basis = setup.ifm.basis();
    // photon number is resolved first: both modes occupied, or at most one
    let double = rng.uniform() < joint.photon_weights()[SECTOR_EL];
    let joint = joint
        .project_photons(|s| (s == SECTOR_EL) == double)
        .normalized()?;
    let weights = joint.photon_weights();
    let rho_d;
    if double {
        // both photons survived: each is detected independently
        let eta = setup.ifm.efficiency;
        let pair = ClickChannel::zpl_pair(basis);
        for (b, s) in [(TimeBin::E, arrivals[0]), (TimeBin::L, arrivals[1])] {
            if rng.bernoulli(eta) {
                let ch = match basis {
                    MeasureBasis::Eigen if b == TimeBin::E => ClickChannel::ZplV,
                    MeasureBasis::Eigen => ClickChannel::ZplH,
                    MeasureBasis::Super => pair[(rng.uniform() * 2.0) as usize],
                };
                let base = if b == TimeBin::E { setup.excitations[0] } else { setup.excitations[1] };
                clicks.push(click(ch, base + s, b));
            }
        }
        rho_d = defect_block(&joint.density(), SECTOR_EL, SECTOR_EL);
    } else {
        let (outcome, post) = zpl_measure(&joint, &setup.ifm, rng)?;
        if let Some(ch) = outcome.channel() {
            let (b, s, base) = match outcome {
                ZplOutcome::V => (TimeBin::E, arrivals[0], setup.excitations[0]),
                ZplOutcome::H => (TimeBin::L, arrivals[1], setup.excitations[1]),
                _ => {
                    let s = if weights[SECTOR_E] > weights[SECTOR_L] { arrivals[0] } else { arrivals[1] };
                    (TimeBin::L, s, setup.excitations[1])
                }
            };
            clicks.push(click(ch, base + s, b));
        }
        rho_d = post;
    }
    // spin readout
    let pops: Vec<f64> = (0..DEFECT_DIM).map(|i| rho_d[(i, i)].re.max(0.0)).collect();
    let level = rng.categorical(&pops);
    for t in setup.readout.sample(level, setup.readout_start, rng) {
        clicks.push(click(ClickChannel::Psb, t, TimeBin::Na));
    }
    inject_noise(&mut clicks, setup, rng, trajectory_id);
    clicks.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    Ok(clicks)
}

/// Adds background clicks inside the ZPL windows and afterpulses.
pub fn inject_noise(
    clicks: &mut Vec<ClickRecord>,
    setup: &DetectionSetup,
    rng: &mut RandomStream,
    trajectory_id: u64,
) {
    let basis = setup.ifm.basis();
    let pair = ClickChannel::zpl_pair(basis);
    let mean = setup.noise.background_per_window(&setup.chain);
    let windows: Vec<(TimeBin, f64)> = match basis {
        MeasureBasis::Eigen => vec![(TimeBin::E, setup.excitations[0]), (TimeBin::L, setup.excitations[1])],
        MeasureBasis::Super => vec![(TimeBin::L, setup.excitations[1])],
    };
    let (w0, w1) = setup.noise.zpl_window;
    if mean > 0.0 {
        for (bin, base) in windows {
            for _ in 0..pair.len() {
                for _ in 0..rng.poisson(mean) {
                    clicks.push(ClickRecord {
                        trajectory_id,
                        channel: pair[(rng.uniform() * 2.0) as usize],
                        time: base + w0 + rng.uniform() * (w1 - w0),
                        bin,
                        basis_context: setup.basis_context.clone(),
                    });
                }
            }
        }
    }
    if setup.noise.afterpulse_prob > 0.0 {
        let real: Vec<f64> = clicks.iter().filter(|c| c.channel.is_zpl()).map(|c| c.time).collect();
        for t in real {
            if rng.bernoulli(setup.noise.afterpulse_prob) {
                // afterpulses land after the window closes
                clicks.push(ClickRecord {
                    trajectory_id,
                    channel: ClickChannel::Dark,
                    time: t + (w1 - w0) + rng.exponential(1.0 / 20.0),
                    bin: TimeBin::Na,
                    basis_context: setup.basis_context.clone(),
                });
            }
        }
    }
}

/// Expected signal-to-background ratio of ZPL clicks over the windows of one run.
pub fn signal_to_background(params: &DefectParams, chain: &EfficiencyChain, noise: &NoiseModel, ifm: &InterferometerModel) -> f64 {
    // one excitation of |↑⟩ per run on average (half of each pulse)
    let emitted = params.eta_q * params.eta_d * mode_fraction(params.es_rate(), BIN_WINDOW);
    let signal = emitted * window_probability(params, noise.zpl_window, BIN_WINDOW) * chain.to_fiber() * ifm.efficiency;
    let background = 2.0 * 2.0 * noise.background_per_window(chain);
    signal / background
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defect::SpinLevel;
    use crate::rng::Purpose;
    use crate::state::composite_index;

    fn photon_state(e: C64, l: C64) -> CompositeState {
        let mut v = ComplexMatrix::zeros(36, 1);
        v[(composite_index(0, 1, 0), 0)] = e;
        v[(composite_index(0, 0, 1), 0)] = l;
        CompositeState::pure(v).unwrap()
    }

    fn ideal_ifm(basis: MeasureBasis, visibility: f64) -> InterferometerModel {
        InterferometerModel {
            visibility,
            phase_jitter_deg: 0.0,
            ..Default::default()
        }
        .with_basis(basis)
    }

    #[test]
    fn early_photon_maps_to_v() {
        let s = photon_state(C64::new(1.0, 0.0), ZERO);
        let p = zpl_probabilities(&s, &ideal_ifm(MeasureBasis::Eigen, 0.9), 0.0).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-15);
        let mut rng = RandomStream::new(1, Purpose::Test, 0);
        let (o, _) = zpl_measure(&s, &ideal_ifm(MeasureBasis::Eigen, 0.9), &mut rng).unwrap();
        assert_eq!(o, ZplOutcome::V);
    }

    #[test]
    fn superposition_plus_is_certain() {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let s = photon_state(h, h);
        let p = zpl_probabilities(&s, &ideal_ifm(MeasureBasis::Super, 1.0), 0.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        let p = zpl_probabilities(&s, &ideal_ifm(MeasureBasis::Super, 0.9), 0.0).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_excitation_is_rejected() {
        let s = CompositeState::basis(SpinLevel::UP, 1, 1);
        let mut rng = RandomStream::new(1, Purpose::Test, 0);
        assert!(matches!(
            zpl_measure(&s, &InterferometerModel::default(), &mut rng),
            Err(Error::DoubleExcitation(_))
        ));
    }

    #[test]
    fn loss_map_preserves_trace() {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let s = photon_state(h, h);
        let out = apply_mode_loss(&s, 0.3, 0.6);
        assert!((out.weight() - 1.0).abs() < 1e-14);
        let w = out.photon_weights();
        assert!((w[SECTOR_E] - 0.15).abs() < 1e-14);
        assert!((w[SECTOR_L] - 0.30).abs() < 1e-14);
    }

    #[test]
    fn psb_readout_is_linear() {
        let p = DefectParams::v1();
        let r = PsbReadout::calibrated(&p, 1000.0, ETA_TARGET).unwrap();
        let c = r.click_probabilities();
        assert!((c[0] - ETA_TARGET).abs() < 1e-9);
        assert_eq!(c[1], 0.0);
        assert_eq!(c[2], 0.0);
        let mut rho = ComplexMatrix::zeros(9, 9);
        rho[(0, 0)] = C64::new(0.5, 0.0);
        rho[(1, 1)] = C64::new(0.5, 0.0);
        assert!((r.click_probability(&rho) - ETA_TARGET / 2.0).abs() < 1e-12);
    }

    #[test]
    fn psb_sampling_matches_killed_ode() {
        let p = DefectParams::v1();
        let r = PsbReadout::calibrated(&p, 1000.0, 0.2).unwrap();
        let mut rng = RandomStream::new(3, Purpose::Test, 0);
        let n = 20_000;
        let hits = (0..n).filter(|_| !r.sample(0, 0.0, &mut rng).is_empty()).count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.2).abs() < 4.0 * (0.2 * 0.8 / n as f64).sqrt(), "{f}");
    }

    #[test]
    fn default_snr_exceeds_target() {
        let snr = signal_to_background(
            &DefectParams::v1(),
            &EfficiencyChain::default(),
            &NoiseModel::default(),
            &InterferometerModel {
                efficiency: EfficiencyChain::default().measurement(),
                ..Default::default()
            },
        );
        assert!(snr >= 30.0, "{snr}");
    }

    #[test]
    fn csv_round_trip() {
        let clicks = vec![
            ClickRecord {
                trajectory_id: 3,
                channel: ClickChannel::ZplPlus,
                time: 1072.5,
                bin: TimeBin::L,
                basis_context: "super/plus".into(),
            },
            ClickRecord {
                trajectory_id: 3,
                channel: ClickChannel::Psb,
                time: 1500.25,
                bin: TimeBin::Na,
                basis_context: "super/plus".into(),
            },
        ];
        let mut buf = Vec::new();
        write_clicks(&mut buf, &clicks).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("trajectory_id,channel,time_ns,bin,basis_context\n"));
        assert_eq!(read_clicks(&buf[..]).unwrap(), clicks);
    }

    #[test]
    fn povm_is_complete_and_matches_probabilities() {
        let psi = photon_state(C64::new(0.6, 0.0), C64::new(0.0, 0.8));
        for basis in [MeasureBasis::Eigen, MeasureBasis::Super] {
            let ifm = InterferometerModel {
                efficiency: 0.7,
                ..Default::default()
            }
            .with_basis(basis);
            let ops = povm_operators(&ifm, 0.4);
            let sum = &(&ops[0] + &ops[1]) + &ops[2];
            let dev = (&sum + &ComplexMatrix::identity(2).scale_real(-1.0)).max_abs();
            assert!(dev < tolerance::POVM);
            let rho = ComplexMatrix::from_fn(2, 2, |i, j| {
                let a = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
                a[i] * a[j].conj()
            });
            let p = zpl_probabilities(&psi, &ifm, 0.4).unwrap();
            for k in 0..3 {
                assert!((rho.matmul(&ops[k]).trace().re - p[k]).abs() < 1e-12);
            }
        }
    }
}
