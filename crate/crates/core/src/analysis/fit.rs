use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FitModel {
    /// `c − A γ² / ((x − x0)² + γ²)`, parameters `[x0, γ, A, c]`.
    Lorentzian,
    /// `A cos(2π f x + φ) + c`, parameters `[A, f, φ, c]`.
    Sinusoid,
    /// `A e^{−x/τ} + c`, parameters `[A, τ, c]`.
    Exponential,
    /// `A e^{−(x/τ)²} + c`, parameters `[A, τ, c]`.
    GaussianDecay,
}

impl FitModel {
    pub fn name(self) -> &'static str {
        match self {
            FitModel::Lorentzian => "lorentzian",
            FitModel::Sinusoid => "sinusoid",
            FitModel::Exponential => "exponential",
            FitModel::GaussianDecay => "gaussian_decay",
        }
    }

    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            FitModel::Lorentzian => &["center", "hwhm", "depth", "offset"],
            FitModel::Sinusoid => &["amplitude", "frequency", "phase", "offset"],
            FitModel::Exponential | FitModel::GaussianDecay => &["amplitude", "tau", "offset"],
        }
    }

    pub fn n_params(self) -> usize {
        self.parameter_names().len()
    }

    pub fn eval(self, p: &[f64], x: f64) -> f64 {
        match self {
            FitModel::Lorentzian => {
                let g2 = p[1] * p[1];
                p[3] - p[2] * g2 / ((x - p[0]).powi(2) + g2)
            }
            FitModel::Sinusoid => p[0] * (2.0 * PI * p[1] * x + p[2]).cos() + p[3],
            FitModel::Exponential => p[0] * (-x / p[1]).exp() + p[2],
            FitModel::GaussianDecay => p[0] * (-(x / p[1]).powi(2)).exp() + p[2],
        }
    }

    /// Candidate starting points spread over the nonlinear parameter.
    fn starts(self, x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
        let (xmin, xmax) = bounds(x);
        let (ymin, ymax) = bounds(y);
        let span = (xmax - xmin).max(f64::MIN_POSITIVE);
        let imin = argmin(y);
        let fracs = [0.1, 0.3, 0.5, 0.7, 0.9];
        match self {
            FitModel::Lorentzian => {
                let mut s = vec![vec![x[imin], span / 20.0, ymax - ymin, ymax]];
                s.extend(fracs[..4].iter().map(|f| vec![xmin + f * span, span / 20.0, ymax - ymin, ymax]));
                s
            }
            FitModel::Sinusoid => {
                let amp = 0.5 * (ymax - ymin);
                let mid = 0.5 * (ymax + ymin);
                let phase = if y[0] >= mid { 0.0 } else { PI };
                [0.5, 1.0, 1.5, 2.0, 3.0]
                    .iter()
                    .map(|c| vec![amp, c / span, phase, mid])
                    .collect()
            }
            FitModel::Exponential | FitModel::GaussianDecay => {
                let first = y[argmin(&x.iter().map(|v| v.abs()).collect::<Vec<_>>())];
                let last = y[argmin(&x.iter().map(|v| -v).collect::<Vec<_>>())];
                fracs
                    .iter()
                    .map(|f| vec![first - last, f * span, last])
                    .collect()
            }
        }
    }
}

fn bounds(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &x)| if x < bv { (i, x) } else { (bi, bv) })
        .0
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub model: FitModel,
    pub params: Vec<f64>,
    pub errors: Vec<f64>,
    /// `sqrt(Σ ((y − f)/σ)²)`.
    pub residual_norm: f64,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.model.parameter_names().iter().position(|n| *n == name)?;
        Some((self.params[k], self.errors[k]))
    }
}

const MAX_ITER: usize = 500;

struct Problem<'a> {
    model: FitModel,
    x: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .zip(&self.w)
                .map(|((x, y), w)| (y - self.model.eval(p, *x)) * w),
        )
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.x.len();
        let k = p.len();
        let mut j = DMatrix::zeros(n, k);
        for c in 0..k {
            let h = 1e-7 * p[c].abs().max(1e-7);
            let mut lo = p.to_vec();
            let mut hi = p.to_vec();
            lo[c] -= h;
            hi[c] += h;
            for r in 0..n {
                let d = (self.model.eval(&hi, self.x[r]) - self.model.eval(&lo, self.x[r])) / (2.0 * h);
                j[(r, c)] = d * self.w[r];
            }
        }
        j
    }

    fn cost(&self, p: &[f64]) -> f64 {
        let r = self.residuals(p);
        let c = r.norm_squared();
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    }

    fn levenberg_marquardt(&self, start: Vec<f64>) -> (Vec<f64>, f64, bool, usize) {
        let mut p = start;
        let mut cost = self.cost(&p);
        let mut lambda = 1e-3;
        for it in 0..MAX_ITER {
            let j = self.jacobian(&p);
            let r = self.residuals(&p);
            let jtj = j.transpose() * &j;
            let g = j.transpose() * r;
            let mut improved = false;
            while lambda < 1e12 {
                let mut a = jtj.clone();
                for d in 0..a.nrows() {
                    a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
                }
                let Some(step) = a.lu().solve(&g) else {
                    lambda *= 10.0;
                    continue;
                };
                let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let c = self.cost(&trial);
                if c < cost {
                    let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    let small = step
                        .iter()
                        .zip(&trial)
                        .all(|(s, v)| s.abs() <= 1e-10 * (v.abs() + 1e-10));
                    p = trial;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-14 || small {
                        return (p, cost, true, it + 1);
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                // no downhill step at any damping: at a minimum
                return (p, cost, true, it + 1);
            }
        }
        (p, cost, false, MAX_ITER)
    }
}

/// Weighted least-squares fit with Levenberg–Marquardt damping from several
/// starting points. `yerr` of zero or empty means unit weights, with errors
/// scaled by the reduced χ².
pub fn fit(x: &[f64], y: &[f64], yerr: &[f64], model: FitModel) -> Result<FitResult> {
    let k = model.n_params();
    if x.len() != y.len() || (!yerr.is_empty() && yerr.len() != y.len()) {
        return Err(Error::Dimension(format!(
            "x, y, yerr lengths {}, {}, {}",
            x.len(),
            y.len(),
            yerr.len()
        )));
    }
    if x.len() < k {
        return Err(Error::TooFewPoints { needed: k, got: x.len() });
    }
    let weighted = !yerr.is_empty() && yerr.iter().all(|&e| e > 0.0);
    let w = if weighted {
        yerr.iter().map(|e| 1.0 / e).collect()
    } else {
        vec![1.0; x.len()]
    };
    let prob = Problem { model, x, y, w };
    let mut best: Option<(Vec<f64>, f64, bool, usize)> = None;
    for s in model.starts(x, y) {
        let r = prob.levenberg_marquardt(s);
        if best.as_ref().map_or(true, |b| r.1 < b.1) {
            best = Some(r);
        }
    }
    let (mut params, cost, converged, iterations) = best.expect("at least one start");
    // canonical signs
    match model {
        FitModel::Lorentzian => params[1] = params[1].abs(),
        FitModel::GaussianDecay => params[1] = params[1].abs(),
        _ => {}
    }
    let dof = (x.len() - k).max(1) as f64;
    let reduced = cost / dof;
    let j = prob.jacobian(&params);
    let cov = (j.transpose() * &j).try_inverse();
    let scale = if weighted { 1.0 } else { reduced };
    let errors = match cov {
        Some(c) => (0..k).map(|d| (c[(d, d)] * scale).max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; k],
    };
    Ok(FitResult {
        model,
        params,
        errors,
        residual_norm: cost.sqrt(),
        reduced_chi2: reduced,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(model: FitModel, p: &[f64], x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| model.eval(p, v)).collect()
    }

    #[test]
    fn lorentzian_round_trip() {
        let x: Vec<f64> = (0..81).map(|i| 50.0 + 0.375 * i as f64).collect();
        let truth = [62.0, 1.2, 0.3, 1.0];
        let y = samples(FitModel::Lorentzian, &truth, &x);
        let r = fit(&x, &y, &[], FitModel::Lorentzian).unwrap();
        assert!(r.converged);
        assert!((r.params[0] - 62.0).abs() / 62.0 < 1e-6, "{:?}", r.params);
    }

    #[test]
    fn sinusoid_with_unknown_phase() {
        let x: Vec<f64> = (0..60).map(|i| 5.0 * i as f64).collect();
        let truth = [0.4, 0.0123, 1.1, 0.5];
        let y = samples(FitModel::Sinusoid, &truth, &x);
        let r = fit(&x, &y, &[], FitModel::Sinusoid).unwrap();
        assert!((r.params[1] - truth[1]).abs() < 1e-6, "{:?}", r.params);
    }

    #[test]
    fn decays_round_trip() {
        let x: Vec<f64> = (0..40).map(|i| 0.1 * i as f64).collect();
        for model in [FitModel::Exponential, FitModel::GaussianDecay] {
            let y = samples(model, &[0.5, 1.68, 0.5], &x);
            let r = fit(&x, &y, &[], model).unwrap();
            assert!((r.params[1] - 1.68).abs() < 1e-6, "{model:?} {:?}", r.params);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            fit(&[1.0, 2.0], &[1.0, 2.0], &[], FitModel::Lorentzian),
            Err(Error::TooFewPoints { needed: 4, got: 2 })
        ));
    }
}
