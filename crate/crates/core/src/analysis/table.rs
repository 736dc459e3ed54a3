use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;

use crate::detection::{ClickChannel, ClickRecord, MeasureBasis};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::sequence::ReadoutBasis;

/// Number of protocol runs per `basis_context`, including runs without clicks.
pub type RunCounts = BTreeMap<String, u64>;

/// A value with its 1σ uncertainty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn new(value: f64, error: f64) -> Self {
        Self { value, error }
    }
}

/// Wilson score half-width at one standard deviation, used as σ of a
/// binomial proportion.
pub fn wilson_sigma(successes: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    (p * (1.0 - p) / n + 1.0 / (4.0 * n * n)).sqrt() / (1.0 + 1.0 / n)
}

/// Spin outcome index: 0 for ↑ or +, 1 for ↓ or −.
fn spin_index(basis: ReadoutBasis) -> usize {
    match basis {
        ReadoutBasis::EigenUp | ReadoutBasis::SuperPlus => 0,
        ReadoutBasis::EigenDown | ReadoutBasis::SuperMinus => 1,
    }
}

/// Photon outcome index: 0 for H or +, 1 for V or −.
fn photon_index(ch: ClickChannel) -> Option<usize> {
    match ch {
        ClickChannel::ZplH | ClickChannel::ZplPlus => Some(0),
        ClickChannel::ZplV | ClickChannel::ZplMinus => Some(1),
        _ => None,
    }
}

fn contexts(basis: MeasureBasis) -> [ReadoutBasis; 2] {
    match basis {
        MeasureBasis::Eigen => [ReadoutBasis::EigenUp, ReadoutBasis::EigenDown],
        MeasureBasis::Super => [ReadoutBasis::SuperPlus, ReadoutBasis::SuperMinus],
    }
}

/// Spin-photon coincidences of one measurement basis.
///
/// Row `i` is the spin outcome (↑/+ then ↓/−), column `j` the photon outcome
/// (H/+ then V/−). Each spin outcome is measured in its own set of runs.
#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceTable {
    pub basis: MeasureBasis,
    pub counts: [[u64; 2]; 2],
    /// Runs per spin outcome.
    pub runs: [u64; 2],
    /// Runs with a PSB click, per spin outcome.
    pub spin_clicks: [u64; 2],
    /// Runs with exactly one ZPL click of outcome `j`, over all runs.
    pub photon_clicks: [u64; 2],
    /// Runs with zero or several ZPL clicks.
    pub excluded_runs: u64,
    pub eta: f64,
}

impl CoincidenceTable {
    pub fn total_runs(&self) -> u64 {
        self.runs[0] + self.runs[1]
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.counts[i][j] as f64 / self.runs[i] as f64
    }

    pub fn p_sigma(&self, i: usize, j: usize) -> f64 {
        wilson_sigma(self.counts[i][j], self.runs[i])
    }

    /// `C_ij = p_ij / η`.
    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.p(i, j) / self.eta
    }

    pub fn c_sigma(&self, i: usize, j: usize) -> f64 {
        self.p_sigma(i, j) / self.eta
    }

    pub fn c_matrix(&self) -> [[f64; 2]; 2] {
        [[self.c(0, 0), self.c(0, 1)], [self.c(1, 0), self.c(1, 1)]]
    }

    /// Spin single `p_i`.
    pub fn p_spin(&self, i: usize) -> f64 {
        self.spin_clicks[i] as f64 / self.runs[i] as f64
    }

    /// Photon single `p_j`.
    pub fn p_photon(&self, j: usize) -> f64 {
        self.photon_clicks[j] as f64 / self.total_runs() as f64
    }

    /// Fraction of runs excluded for having zero or several ZPL clicks.
    pub fn exclusion_rate(&self) -> f64 {
        self.excluded_runs as f64 / self.total_runs() as f64
    }

    pub fn spin_labels(&self) -> [&'static str; 2] {
        match self.basis {
            MeasureBasis::Eigen => ["u", "d"],
            MeasureBasis::Super => ["p", "m"],
        }
    }

    pub fn photon_labels(&self) -> [&'static str; 2] {
        match self.basis {
            MeasureBasis::Eigen => ["H", "V"],
            MeasureBasis::Super => ["p", "m"],
        }
    }

    /// Merges counts from disjoint run sets with the same η.
    pub fn merge(&self, other: &CoincidenceTable) -> Result<CoincidenceTable> {
        if self.basis != other.basis || self.eta != other.eta {
            return Err(Error::param("table", "bases or normalizers differ"));
        }
        let mut out = self.clone();
        for i in 0..2 {
            for j in 0..2 {
                out.counts[i][j] += other.counts[i][j];
            }
            out.runs[i] += other.runs[i];
            out.spin_clicks[i] += other.spin_clicks[i];
            out.photon_clicks[i] += other.photon_clicks[i];
        }
        out.excluded_runs += other.excluded_runs;
        Ok(out)
    }
}

#[derive(Default)]
struct RunTally {
    zpl: Vec<usize>,
    psb: bool,
}

/// Builds the coincidence table of one basis from click records.
///
/// A run enters `n_ij` when it holds exactly one ZPL click (outcome `j`) and
/// at least one PSB click; `i` is the spin state selected by the run's
/// readout context.
pub fn build_table(
    clicks: &[ClickRecord],
    basis: MeasureBasis,
    eta: f64,
    runs: &RunCounts,
) -> Result<CoincidenceTable> {
    if !(eta > 0.0) {
        return Err(Error::BadEta(eta));
    }
    let ctx = contexts(basis);
    let mut table = CoincidenceTable {
        basis,
        counts: [[0; 2]; 2],
        runs: [0; 2],
        spin_clicks: [0; 2],
        photon_clicks: [0; 2],
        excluded_runs: 0,
        eta,
    };
    for b in ctx {
        table.runs[spin_index(b)] = runs.get(b.context()).copied().unwrap_or(0);
    }
    if table.runs.iter().any(|&n| n == 0) {
        return Err(Error::ZeroRuns);
    }
    let mut tallies: HashMap<(usize, u64), RunTally> = HashMap::new();
    for c in clicks {
        let Some(b) = ReadoutBasis::from_context(&c.basis_context) else {
            continue;
        };
        if !ctx.contains(&b) {
            continue;
        }
        let t = tallies.entry((spin_index(b), c.trajectory_id)).or_default();
        match c.channel {
            ClickChannel::Psb => t.psb = true,
            ch => {
                if let Some(j) = photon_index(ch) {
                    if ClickChannel::zpl_pair(basis).contains(&ch) {
                        t.zpl.push(j);
                    }
                }
            }
        }
    }
    let mut with_single = 0u64;
    for ((i, _), t) in &tallies {
        if t.psb {
            table.spin_clicks[*i] += 1;
        }
        if t.zpl.len() == 1 {
            with_single += 1;
            let j = t.zpl[0];
            table.photon_clicks[j] += 1;
            if t.psb {
                table.counts[*i][j] += 1;
            }
        }
    }
    table.excluded_runs = table.total_runs() - with_single;
    Ok(table)
}

/// `(C_diag − C_off)/(C_diag + C_off)` with first-order error propagation.
pub fn visibility(table: &CoincidenceTable) -> Result<Estimate> {
    let c = table.c_matrix();
    let a = c[0][0] + c[1][1];
    let b = c[0][1] + c[1][0];
    if a + b <= 0.0 {
        return Err(Error::EmptyTable);
    }
    let sa2 = table.c_sigma(0, 0).powi(2) + table.c_sigma(1, 1).powi(2);
    let sb2 = table.c_sigma(0, 1).powi(2) + table.c_sigma(1, 0).powi(2);
    let s = (a + b).powi(2);
    let err = ((2.0 * b / s).powi(2) * sa2 + (2.0 * a / s).powi(2) * sb2).sqrt();
    Ok(Estimate::new((a - b) / (a + b), err))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelityEstimate {
    pub fidelity: Estimate,
    /// `F − 2σ > 0.5`.
    pub entangled: bool,
}

/// `F = (1 + Vₑ + 2Vₛ)/4` with quadrature errors.
pub fn fidelity_estimate(v_e: Estimate, v_s: Estimate) -> FidelityEstimate {
    let f = (1.0 + v_e.value + 2.0 * v_s.value) / 4.0;
    let err = (v_e.error.powi(2) + 4.0 * v_s.error.powi(2)).sqrt() / 4.0;
    FidelityEstimate {
        fidelity: Estimate::new(f, err),
        entangled: f - 2.0 * err > 0.5,
    }
}

/// `g²_ij = p_ij / (p_i p_j)` for all four entries.
pub fn g2_cross(table: &CoincidenceTable) -> Result<[[Estimate; 2]; 2]> {
    let labels = table.spin_labels();
    let plabels = table.photon_labels();
    let mut out = [[Estimate::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        let pi = table.p_spin(i);
        if pi <= 0.0 {
            return Err(Error::ZeroSingles(format!("spin {}", labels[i])));
        }
        let si = wilson_sigma(table.spin_clicks[i], table.runs[i]);
        for j in 0..2 {
            let pj = table.p_photon(j);
            if pj <= 0.0 {
                return Err(Error::ZeroSingles(format!("photon {}", plabels[j])));
            }
            let sj = wilson_sigma(table.photon_clicks[j], table.total_runs());
            let pij = table.p(i, j);
            let g = pij / (pi * pj);
            let err = ((table.p_sigma(i, j) / (pi * pj)).powi(2)
                + g * g * ((si / pi).powi(2) + (sj / pj).powi(2)))
            .sqrt();
            out[i][j] = Estimate::new(g, err);
        }
    }
    Ok(out)
}

/// Reassigns every run's PSB clicks to a uniformly random run of the same
/// readout context, destroying spin-photon correlations.
pub fn shuffle_spin_records(
    clicks: &[ClickRecord],
    runs: &RunCounts,
    rng: &mut RandomStream,
) -> Vec<ClickRecord> {
    let mut by_ctx: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for c in clicks.iter().filter(|c| c.channel == ClickChannel::Psb) {
        by_ctx.entry(c.basis_context.as_str()).or_default().push(c.trajectory_id);
    }
    let mut remap: HashMap<(&str, u64), u64> = HashMap::new();
    for (ctx, mut ids) in by_ctx {
        ids.sort_unstable();
        ids.dedup();
        let n = runs.get(ctx).copied().unwrap_or(0).max(ids.last().map_or(0, |m| m + 1));
        let targets = sample(rng, n as usize, ids.len());
        for (id, t) in ids.into_iter().zip(targets.into_iter()) {
            remap.insert((ctx, id), t as u64);
        }
    }
    clicks
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if c.channel == ClickChannel::Psb {
                c.trajectory_id = remap[&(c.basis_context.as_str(), c.trajectory_id)];
            }
            c
        })
        .collect()
}

/// Run counts inferred from the largest trajectory id seen per context.
///
/// This is a lower bound when the last runs produced no clicks.
pub fn infer_run_counts(clicks: &[ClickRecord]) -> RunCounts {
    let mut out = RunCounts::new();
    for c in clicks {
        let e = out.entry(c.basis_context.clone()).or_insert(0);
        *e = (*e).max(c.trajectory_id + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::TimeBin;

    fn click(id: u64, ch: ClickChannel, ctx: &str) -> ClickRecord {
        ClickRecord {
            trajectory_id: id,
            channel: ch,
            time: 0.0,
            bin: TimeBin::Na,
            basis_context: ctx.into(),
        }
    }

    fn runs(n: u64, basis: MeasureBasis) -> RunCounts {
        contexts(basis).iter().map(|b| (b.context().to_string(), n)).collect()
    }

    #[test]
    fn empty_clicks_is_zero_runs() {
        let e = build_table(&[], MeasureBasis::Eigen, 0.01, &RunCounts::new());
        assert!(matches!(e, Err(Error::ZeroRuns)));
        let e = build_table(&[], MeasureBasis::Eigen, 0.0, &runs(10, MeasureBasis::Eigen));
        assert!(matches!(e, Err(Error::BadEta(_))));
    }

    #[test]
    fn perfect_correlations() {
        // every run emits one photon; spin readout is deterministic
        let n = 1000;
        let mut clicks = Vec::new();
        for id in 0..n {
            let h = id % 2 == 0;
            let ch = if h { ClickChannel::ZplH } else { ClickChannel::ZplV };
            clicks.push(click(id, ch, "eigen/up"));
            if h {
                clicks.push(click(id, ClickChannel::Psb, "eigen/up"));
            }
            clicks.push(click(id, ch, "eigen/down"));
            if !h {
                clicks.push(click(id, ClickChannel::Psb, "eigen/down"));
            }
        }
        let t = build_table(&clicks, MeasureBasis::Eigen, 1.0, &runs(n, MeasureBasis::Eigen)).unwrap();
        assert_eq!(t.c(0, 0), 0.5);
        assert_eq!(t.c(1, 1), 0.5);
        assert_eq!(t.c(0, 1), 0.0);
        assert_eq!(t.c(1, 0), 0.0);
        assert_eq!(visibility(&t).unwrap().value, 1.0);
        let g = g2_cross(&t).unwrap();
        assert!((g[0][0].value - 2.0).abs() < 1e-12);
        assert_eq!(g[0][1].value, 0.0);
    }

    #[test]
    fn double_clicks_are_excluded() {
        let clicks = vec![
            click(0, ClickChannel::ZplH, "eigen/up"),
            click(0, ClickChannel::ZplV, "eigen/up"),
            click(0, ClickChannel::Psb, "eigen/up"),
            click(1, ClickChannel::ZplH, "eigen/down"),
        ];
        let t = build_table(&clicks, MeasureBasis::Eigen, 1.0, &runs(2, MeasureBasis::Eigen)).unwrap();
        assert_eq!(t.counts, [[0, 0], [0, 0]]);
        assert_eq!(t.excluded_runs, 3);
        assert_eq!(t.photon_clicks, [1, 0]);
    }

    #[test]
    fn fidelity_examples() {
        let f = |a, b| fidelity_estimate(Estimate::new(a, 0.0), Estimate::new(b, 0.0)).fidelity.value;
        assert_eq!(f(1.0, 1.0), 1.0);
        assert_eq!(f(0.0, 0.0), 0.25);
        assert!((f(0.810, 0.609) - 0.757).abs() < 5e-4);
        let e = fidelity_estimate(Estimate::new(0.6, 0.2), Estimate::new(0.4, 0.1));
        assert!(!e.entangled);
    }

    #[test]
    fn wilson_sigma_is_positive_at_zero() {
        assert!(wilson_sigma(0, 100) > 0.0);
        assert!((wilson_sigma(50, 100) - 0.05).abs() < 1e-3);
    }
}
