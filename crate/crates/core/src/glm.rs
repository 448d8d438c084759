//! Ridge logistic regression, permutation importance, Spearman correlation
//! and the likelihood-ratio test for nested models.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::evalmetrics::midranks;

pub const MAX_IRLS_ITER: usize = 100;
pub const DEVIANCE_TOL: f64 = 1e-8;
pub const GRADIENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LRModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub feature_names: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
}

impl LRModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "feature vector of length {}, model expects {}",
                f.len(),
                self.weights.len()
            )));
        }
        Ok(self.intercept + f.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_xy(f: ArrayView2<f64>, y: &[bool]) -> Result<()> {
    if f.nrows() != y.len() {
        return Err(Error::Shape(format!("{} feature rows but {} labels", f.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("no rows to fit".into()));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }
    Ok(())
}

/// Design matrix with a leading column of ones.
fn design(f: ArrayView2<f64>) -> DMatrix<f64> {
    let (n, d) = f.dim();
    DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { f[[i, j - 1]] })
}

fn penalized_ll(x: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>, lambda: f64) -> f64 {
    let z = x * beta;
    let ll: f64 = z
        .iter()
        .zip(y)
        .map(|(z, &t)| if t { z - softplus(*z) } else { -softplus(*z) })
        .sum();
    let ridge: f64 = beta.iter().skip(1).map(|w| w * w).sum();
    ll - 0.5 * lambda * ridge
}

fn gradient(x: &DMatrix<f64>, y: &[bool], beta: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let z = x * beta;
    let r = DVector::from_fn(y.len(), |i, _| f64::from(u8::from(y[i])) - sigmoid(z[i]));
    let mut g = x.transpose() * r;
    for j in 1..g.len() {
        g[j] -= lambda * beta[j];
    }
    g
}

fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = h.clone().cholesky() {
        return ch.solve(g);
    }
    let lu = h.clone().lu();
    match lu.solve(g) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => h.svd(true, true).solve(g, 1e-12).unwrap_or_else(|_| g.clone()),
    }
}

/// Maximizes `l(w, b) - lambda / 2 |w|^2` by iteratively reweighted least
/// squares with step halving. The intercept is not penalized.
pub fn lr_fit(f: ArrayView2<f64>, y: &[bool], lambda: f64, feature_names: Vec<String>) -> Result<LRModel> {
    check_xy(f, y)?;
    let (n, d) = f.dim();
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 && n <= d {
        return Err(Error::InvalidArgument(format!(
            "unpenalized fit needs more rows ({n}) than features ({d})"
        )));
    }
    if feature_names.len() != d {
        return Err(Error::Shape(format!("{} feature names for {d} columns", feature_names.len())));
    }
    let x = design(f);
    let mut beta = DVector::zeros(d + 1);
    let mut obj = penalized_ll(&x, y, &beta, lambda);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_IRLS_ITER {
        iterations += 1;
        let g = gradient(&x, y, &beta, lambda);
        let z = &x * &beta;
        let mut h = DMatrix::zeros(d + 1, d + 1);
        for i in 0..n {
            let p = sigmoid(z[i]);
            let w = p * (1.0 - p);
            let row = x.row(i);
            h.ger(w, &row.transpose(), &row.transpose(), 1.0);
        }
        for j in 1..=d {
            h[(j, j)] += lambda;
        }
        let step = newton_direction(h, &g);
        let mut t = 1.0;
        let mut next = &beta + &step;
        let mut next_obj = penalized_ll(&x, y, &next, lambda);
        while next_obj < obj && t > 1e-10 {
            t *= 0.5;
            next = &beta + &step * t;
            next_obj = penalized_ll(&x, y, &next, lambda);
        }
        if next_obj < obj {
            break;
        }
        let change = 2.0 * (next_obj - obj);
        beta = next;
        obj = next_obj;
        if change.abs() < DEVIANCE_TOL {
            let g = gradient(&x, y, &beta, lambda);
            if g.amax() < GRADIENT_TOL {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("logistic regression did not converge after {iterations} iterations");
    }
    Ok(LRModel {
        weights: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        lambda,
        feature_names,
        converged,
        iterations,
    })
}

/// Gradient of the penalized log-likelihood at the model's coefficients,
/// intercept first.
pub fn penalized_gradient(model: &LRModel, f: ArrayView2<f64>, y: &[bool]) -> Result<Vec<f64>> {
    check_xy(f, y)?;
    let beta = model_beta(model, f.ncols())?;
    Ok(gradient(&design(f), y, &beta, model.lambda).iter().copied().collect())
}

fn model_beta(model: &LRModel, d: usize) -> Result<DVector<f64>> {
    if d != model.n_features() {
        return Err(Error::Shape(format!("{d} feature columns, model expects {}", model.n_features())));
    }
    Ok(DVector::from_iterator(
        d + 1,
        std::iter::once(model.intercept).chain(model.weights.iter().copied()),
    ))
}

pub fn lr_predict(model: &LRModel, f: &[f64]) -> Result<f64> {
    Ok(sigmoid(model.logit(f)?))
}

pub fn lr_predict_rows(model: &LRModel, f: ArrayView2<f64>) -> Result<Vec<f64>> {
    f.outer_iter().map(|r| lr_predict(model, &r.to_vec())).collect()
}

/// Unpenalized log-likelihood summed over rows.
pub fn log_likelihood(model: &LRModel, f: ArrayView2<f64>, y: &[bool]) -> Result<f64> {
    check_xy(f, y)?;
    let beta = model_beta(model, f.ncols())?;
    Ok(penalized_ll(&design(f), y, &beta, 0.0))
}

/// Mean negative log-likelihood.
pub fn log_loss(model: &LRModel, f: ArrayView2<f64>, y: &[bool]) -> Result<f64> {
    Ok(-log_likelihood(model, f, y)? / y.len() as f64)
}

/// Relative increase of the log-loss when one column is shuffled, averaged
/// over `repeats` shuffles.
pub fn permutation_importance(
    model: &LRModel,
    f: ArrayView2<f64>,
    y: &[bool],
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be positive".into()));
    }
    let base = log_loss(model, f, y)?;
    if !(base > 0.0) {
        return Err(Error::UndefinedMetric(format!("base log-loss {base}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Array2<f64> = f.to_owned();
    let mut out = Vec::with_capacity(f.ncols());
    for j in 0..f.ncols() {
        let original = f.column(j).to_vec();
        let mut total = 0.0;
        for _ in 0..repeats {
            let mut col = original.clone();
            col.shuffle(&mut rng);
            work.column_mut(j).assign(&ndarray::Array1::from(col));
            total += (log_loss(model, work.view(), y)? - base) / base;
        }
        work.column_mut(j).assign(&ndarray::Array1::from(original));
        out.push(total / repeats as f64);
    }
    Ok(out)
}

/// Rank correlation and its two-sided p-value from the t approximation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("Spearman correlation needs 3 points, got {n}")));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("Spearman correlation of a constant input".into()));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    if 1.0 - rho.abs() < 1e-15 {
        return Ok((rho, 0.0));
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((rho, (2.0 * dist.sf(t.abs())).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub lambda_lr: f64,
    pub df: usize,
    pub p_value: f64,
    pub alpha_adjusted: f64,
    pub reject: bool,
    pub ll_reduced: f64,
    pub ll_full: f64,
}

/// Survival function of the chi-squared distribution; `exp(-x / 2)` for two
/// degrees of freedom.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if df == 0 || x <= 0.0 {
        return 1.0;
    }
    if df == 2 {
        return (-x / 2.0).exp();
    }
    ChiSquared::new(df as f64).map_or(1.0, |d| d.sf(x))
}

/// Likelihood-ratio test of `reduced` against `full`. Columns of `f` follow
/// `full.feature_names`; the reduced model's features must be a subset.
/// Rejects when the p-value is below `alpha / n_tests`.
pub fn lrt(
    reduced: &LRModel,
    full: &LRModel,
    f: ArrayView2<f64>,
    y: &[bool],
    alpha: f64,
    n_tests: usize,
) -> Result<LrtResult> {
    if n_tests == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} with {n_tests} tests")));
    }
    let cols: Vec<usize> = reduced
        .feature_names
        .iter()
        .map(|name| {
            full.feature_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("models are not nested: '{name}' missing from full model")))
        })
        .collect::<Result<_>>()?;
    let sub = f.select(ndarray::Axis(1), &cols);
    let ll_full = log_likelihood(full, f, y)?;
    let ll_reduced = log_likelihood(reduced, sub.view(), y)?;
    let lambda_lr = (2.0 * (ll_full - ll_reduced)).max(0.0);
    let df = full.n_features() - reduced.n_features();
    let p_value = chi2_sf(lambda_lr, df);
    let alpha_adjusted = alpha / n_tests as f64;
    Ok(LrtResult {
        lambda_lr,
        df,
        p_value,
        alpha_adjusted,
        reject: p_value < alpha_adjusted,
        ll_reduced,
        ll_full,
    })
}
