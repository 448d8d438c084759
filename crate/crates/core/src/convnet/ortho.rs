//! Semi-orthogonality of convolution kernels.
//!
//! A kernel is semi-orthogonal when its matricization `M` (output features by
//! taps x input features) has orthonormal rows: `M M^T = I`. Projection uses
//! the iteration `M <- M - nu (M M^T - I) M`, which drives every singular
//! value of `M` towards one.

use nalgebra::DMatrix;
use ndarray::Array2;

use super::Conv1DLayer;
use crate::error::{Error, Result};

/// Step size `nu` of the projection iteration; `1/2` is the Newton-Schulz
/// step with quadratic convergence near the constraint set.
pub const PROJECTION_STEP: f64 = 0.5;

/// Residual below which a layer counts as semi-orthogonal.
pub const PROJECTION_TOL: f64 = 1e-3;

/// Matrices with spectral norm above this are rescaled before iterating.
const SCALE_GUARD: f64 = 1.1;

fn check_feasible(layer: &Conv1DLayer) -> Result<()> {
    let rows = layer.out_features();
    let cols = layer.taps() * layer.in_features();
    if rows > cols {
        return Err(Error::Infeasible { rows, cols });
    }
    Ok(())
}

fn gram_minus_identity(m: &Array2<f64>) -> Array2<f64> {
    let mut p = m.dot(&m.t());
    for i in 0..p.nrows() {
        p[[i, i]] -= 1.0;
    }
    p
}

/// Frobenius norm of `M M^T - I`.
pub fn semi_orth_residual(layer: &Conv1DLayer) -> Result<f64> {
    check_feasible(layer)?;
    let d = gram_minus_identity(&layer.matricize());
    Ok(d.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Largest singular value of `m`.
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let p = m.dot(&m.t());
    let n = p.nrows();
    let p = DMatrix::from_row_iterator(n, n, p.iter().copied());
    p.symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// Runs up to `iters` projection steps and returns the layer with the
/// residual before the first step and after each accepted step. Iteration
/// stops early once a step no longer lowers the residual, which only
/// happens at the rounding floor.
pub fn semi_orth_project_traced(layer: &Conv1DLayer, iters: usize) -> Result<(Conv1DLayer, Vec<f64>)> {
    check_feasible(layer)?;
    let mut m = layer.matricize();
    let norm = spectral_norm(&m);
    if norm > SCALE_GUARD {
        m.mapv_inplace(|v| v / norm);
    }
    let residual = |d: &Array2<f64>| d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut d = gram_minus_identity(&m);
    let mut history = Vec::with_capacity(iters + 1);
    history.push(residual(&d));
    for _ in 0..iters {
        let mut next = m.clone();
        next.scaled_add(-PROJECTION_STEP, &d.dot(&m));
        let next_d = gram_minus_identity(&next);
        let r = residual(&next_d);
        if r >= *history.last().expect("nonempty") {
            break;
        }
        m = next;
        d = next_d;
        history.push(r);
    }
    Ok((Conv1DLayer::from_matrix(m, layer.taps())?, history))
}

pub fn semi_orth_project(layer: &Conv1DLayer, iters: usize) -> Result<Conv1DLayer> {
    semi_orth_project_traced(layer, iters).map(|(l, _)| l)
}
