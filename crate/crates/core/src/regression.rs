//! Weighted logistic (Newton–Raphson MLE) and least-squares fits on small
//! dense designs. Designs are row-major `n x p` slices that already contain
//! the intercept column.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Newton–Raphson controls for the propensity model.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct NewtonSettings {
    /// Stop once the gradient of the mean log-likelihood has this Euclidean norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Step-halvings tried when a full step does not increase the likelihood.
    pub max_halvings: usize,
    /// A fitted index `|x'b|` above this marks (quasi-)complete separation.
    pub separation_index: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { tol: 1e-8, max_iter: 100, max_halvings: 30, separation_index: 15.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitFit {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[cfg(test)]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn linear_index(design: &[f64], p: usize, beta: &[f64], out: &mut [f64]) {
    fn fixed<const P: usize>(design: &[f64], beta: &[f64], out: &mut [f64]) {
        let beta: &[f64; P] = beta.try_into().expect("coefficient length");
        for (row, eta) in design.chunks_exact(P).zip(out.iter_mut()) {
            let row: &[f64; P] = row.try_into().expect("row length");
            let mut acc = 0.0;
            for a in 0..P {
                acc += row[a] * beta[a];
            }
            *eta = acc;
        }
    }
    match p {
        1 => fixed::<1>(design, beta, out),
        2 => fixed::<2>(design, beta, out),
        3 => fixed::<3>(design, beta, out),
        4 => fixed::<4>(design, beta, out),
        5 => fixed::<5>(design, beta, out),
        6 => fixed::<6>(design, beta, out),
        _ => {
            for (row, eta) in design.chunks_exact(p).zip(out.iter_mut()) {
                *eta = row.iter().zip(beta).map(|(x, b)| x * b).sum();
            }
        }
    }
}

/// Gradient and lower triangle of the negative Hessian of the log-likelihood.
fn score(design: &[f64], p: usize, prob: &[f64], y: &[f64], w: &[f64], grad: &mut [f64], hess: &mut [f64]) {
    fn fixed<const P: usize>(design: &[f64], prob: &[f64], y: &[f64], w: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let mut g = [0.0; P];
        let mut h = [[0.0; P]; P];
        for ((row, &pi), (&yi, &wi)) in design.chunks_exact(P).zip(prob).zip(y.iter().zip(w)) {
            let row: &[f64; P] = row.try_into().expect("row length");
            let r = wi * (yi - pi);
            let v = wi * pi * (1.0 - pi);
            for a in 0..P {
                g[a] += r * row[a];
                let va = v * row[a];
                for b in 0..=a {
                    h[a][b] += va * row[b];
                }
            }
        }
        grad.copy_from_slice(&g);
        for a in 0..P {
            hess[a * P..(a + 1) * P].copy_from_slice(&h[a]);
        }
    }
    match p {
        1 => fixed::<1>(design, prob, y, w, grad, hess),
        2 => fixed::<2>(design, prob, y, w, grad, hess),
        3 => fixed::<3>(design, prob, y, w, grad, hess),
        4 => fixed::<4>(design, prob, y, w, grad, hess),
        5 => fixed::<5>(design, prob, y, w, grad, hess),
        6 => fixed::<6>(design, prob, y, w, grad, hess),
        _ => {
            grad.fill(0.0);
            hess.fill(0.0);
            for ((row, &pi), (&yi, &wi)) in design.chunks_exact(p).zip(prob).zip(y.iter().zip(w)) {
                let r = wi * (yi - pi);
                let v = wi * pi * (1.0 - pi);
                for a in 0..p {
                    grad[a] += r * row[a];
                    for b in 0..=a {
                        hess[a * p + b] += v * row[a] * row[b];
                    }
                }
            }
        }
    }
}

/// `e^x` and `ln(1 + e^x)` for `x <= 0`. The second value only feeds
/// likelihood comparisons, where `ln(1 + s)` is accurate enough.
#[cfg(feature = "std")]
#[inline]
fn exp_log1p(x: f64) -> (f64, f64) {
    let e = x.exp();
    (e, (1.0 + e).ln())
}

#[cfg(not(feature = "std"))]
#[inline]
fn exp_log1p(x: f64) -> (f64, f64) {
    let e = libm::exp(x);
    (e, libm::log1p(e))
}

/// Log-likelihood at `eta`, also storing the fitted probabilities.
fn log_lik(eta: &[f64], y: &[f64], w: &[f64], prob: &mut [f64]) -> f64 {
    let mut ll = 0.0;
    for (((&e, &yi), &wi), pr) in eta.iter().zip(y).zip(w).zip(prob.iter_mut()) {
        let (s, l) = exp_log1p(-e.abs());
        *pr = if e >= 0.0 { 1.0 / (1.0 + s) } else { s / (1.0 + s) };
        ll += wi * (yi * e - (e.max(0.0) + l));
    }
    ll
}

/// Maximum-likelihood logit of `y` (0/1) on `design` with frequency weights.
pub fn fit_logit(
    design: &[f64],
    p: usize,
    y: &[f64],
    w: &[f64],
    settings: &NewtonSettings,
) -> Result<LogitFit> {
    fit_logit_from(design, p, y, w, settings, None)
}

/// [`fit_logit`] started from `start` instead of the intercept-only fit.
pub fn fit_logit_from(
    design: &[f64],
    p: usize,
    y: &[f64],
    w: &[f64],
    settings: &NewtonSettings,
    start: Option<&[f64]>,
) -> Result<LogitFit> {
    let n = y.len();
    debug_assert_eq!(design.len(), n * p);
    let w1: f64 = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum();
    let w_total: f64 = w.iter().sum();
    let w0 = w_total - w1;
    if w1 <= 0.0 || w0 <= 0.0 {
        return Err(Error::NoVariation);
    }

    let mut beta = match start {
        Some(b) if b.len() == p && b.iter().all(|v| v.is_finite()) => b.to_vec(),
        _ => {
            let mut b = vec![0.0; p];
            b[0] = libm::log(w1 / w0);
            b
        }
    };
    let mut eta = vec![0.0; n];
    let mut prob = vec![0.0; n];
    linear_index(design, p, &beta, &mut eta);
    let mut ll = log_lik(&eta, y, w, &mut prob);
    let mut trial = vec![0.0; p];
    let mut trial_eta = vec![0.0; n];
    let mut trial_prob = vec![0.0; n];
    let mut grad = vec![0.0; p];
    let mut hess = vec![0.0; p * p];

    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        score(design, p, &prob, y, w, &mut grad, &mut hess);
        let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if norm / w_total < settings.tol {
            converged = true;
            break;
        }
        let h = DMatrix::from_fn(p, p, |a, b| if b <= a { hess[a * p + b] } else { hess[b * p + a] });
        iterations += 1;
        let step = match Cholesky::new(h) {
            Some(ch) => ch.solve(&DVector::from_column_slice(&grad)),
            None => return Err(separation_or_rank(&eta, settings)),
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=settings.max_halvings {
            for a in 0..p {
                trial[a] = beta[a] + scale * step[a];
            }
            linear_index(design, p, &trial, &mut trial_eta);
            let trial_ll = log_lik(&trial_eta, y, w, &mut trial_prob);
            // rounding slack so full Newton steps near the optimum are not rejected
            if trial_ll >= ll - 1e-13 * (1.0 + ll.abs()) {
                beta.copy_from_slice(&trial);
                core::mem::swap(&mut eta, &mut trial_eta);
                core::mem::swap(&mut prob, &mut trial_prob);
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if eta.iter().zip(w).any(|(e, &wi)| wi > 0.0 && e.abs() > settings.separation_index) {
        return Err(Error::PerfectSeparation);
    }
    Ok(LogitFit { coefficients: beta, fitted: prob, converged, iterations })
}

fn separation_or_rank(eta: &[f64], settings: &NewtonSettings) -> Error {
    if eta.iter().any(|e| e.abs() > settings.separation_index) {
        Error::PerfectSeparation
    } else {
        Error::RankDeficientDesign
    }
}

/// Weighted least-squares fit, keeping the factorized Gram matrix for
/// linearization of downstream estimators.
#[derive(Clone, Debug)]
pub struct WlsFit {
    pub coefficients: Vec<f64>,
    gram: Cholesky<f64, Dyn>,
}

impl WlsFit {
    /// Solves `(X'WX) v = rhs`.
    pub fn solve_gram(&self, rhs: &[f64]) -> Vec<f64> {
        let v = self.gram.solve(&DVector::from_column_slice(rhs));
        v.iter().copied().collect()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

/// Factorized weighted Gram matrix `X'WX` of a design.
#[derive(Clone, Debug)]
pub struct Gram(Cholesky<f64, Dyn>);

impl Gram {
    pub fn new(design: &[f64], p: usize, w: &[f64]) -> Result<Gram> {
        let n_eff = w.iter().filter(|&&wi| wi > 0.0).count();
        if n_eff < p {
            return Err(Error::InsufficientControls { needed: p, found: n_eff });
        }
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for (row, &wi) in design.chunks_exact(p).zip(w) {
            if wi == 0.0 {
                continue;
            }
            for a in 0..p {
                for b in 0..=a {
                    gram[(a, b)] += wi * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let max_diag = (0..p).map(|a| gram[(a, a)]).fold(0.0_f64, f64::max);
        let chol = Cholesky::new(gram).ok_or(Error::RankDeficientDesign)?;
        let l = chol.l_dirty();
        if (0..p).any(|a| l[(a, a)] * l[(a, a)] <= 1e-12 * max_diag) {
            return Err(Error::RankDeficientDesign);
        }
        Ok(Gram(chol))
    }

    /// Least-squares coefficients of `y` on the design the matrix came from.
    pub fn fit(&self, design: &[f64], y: &[f64], w: &[f64]) -> WlsFit {
        let p = self.0.l_dirty().nrows();
        let mut rhs = DVector::<f64>::zeros(p);
        for ((row, &yi), &wi) in design.chunks_exact(p).zip(y).zip(w) {
            for a in 0..p {
                rhs[a] += wi * row[a] * yi;
            }
        }
        let beta = self.0.solve(&rhs);
        WlsFit { coefficients: beta.iter().copied().collect(), gram: self.0.clone() }
    }
}

pub fn fit_wls(design: &[f64], p: usize, y: &[f64], w: &[f64]) -> Result<WlsFit> {
    Ok(Gram::new(design, p, w)?.fit(design, y, w))
}
