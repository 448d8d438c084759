//! Deconvolutional reconstruction: map the deepest pooled features back to
//! input space by undoing pooling, ReLU and convolution block by block.

use ndarray::{Array2, ArrayView2};

use crate::convnet::{Conv1DLayer, Conv1DNet, ForwardTrace};
use crate::error::{Error, Result};

/// Adjoint of the same-padded convolution:
/// `x[k, j] = sum_{r,i} w[i, r, k] * g[i, j - r + R]`.
pub fn transpose_conv1d(g: ArrayView2<f64>, layer: &Conv1DLayer) -> Result<Array2<f64>> {
    let (n_out, n) = g.dim();
    if n_out != layer.out_features() {
        return Err(Error::Shape(format!(
            "gradient has {n_out} features, layer produces {}",
            layer.out_features()
        )));
    }
    let g = g.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let half = layer.half_width() as isize;
    let w = layer.weights();
    let mut x = Array2::zeros((layer.in_features(), n));
    for (k, mut xk) in x.outer_iter_mut().enumerate() {
        let xk = xk.as_slice_mut().expect("owned row");
        for r in 0..layer.taps() {
            // x[j] += w * g[j - off] with off = r - R
            let off = r as isize - half;
            let lo = off.max(0) as usize;
            let hi = (n as isize + off).clamp(0, n as isize) as usize;
            if lo >= hi {
                continue;
            }
            for i in 0..n_out {
                let wv = w[[i, r, k]];
                if wv == 0.0 {
                    continue;
                }
                let src = &gs[i * n + (lo as isize - off) as usize..i * n + (hi as isize - off) as usize];
                for (d, s) in xk[lo..hi].iter_mut().zip(src) {
                    *d += wv * s;
                }
            }
        }
    }
    Ok(x)
}

/// Reverses a size-2 max-pool. Each pooled value returns to its switch
/// position; the other element of the window is linearly interpolated
/// between the neighbouring restored maxima and clamped to `[0, window max]`.
/// The output is truncated to `target_len` (one less than twice the pooled
/// length when the forward pass padded).
pub fn unpool(pooled: ArrayView2<f64>, switches: ArrayView2<u8>, target_len: usize) -> Result<Array2<f64>> {
    let (f, m) = pooled.dim();
    if switches.dim() != (f, m) {
        return Err(Error::Shape(format!(
            "switches {:?} do not match pooled {:?}",
            switches.dim(),
            (f, m)
        )));
    }
    if let Some(s) = switches.iter().find(|s| **s > 1) {
        return Err(Error::InvalidArgument(format!("switch value {s} outside {{0, 1}}")));
    }
    if target_len != 2 * m && target_len + 1 != 2 * m {
        return Err(Error::Shape(format!(
            "target length {target_len} incompatible with pooled length {m}"
        )));
    }
    let mut out = Array2::zeros((f, 2 * m));
    for c in 0..f {
        let pos = |j: usize| 2 * j + switches[[c, j]] as usize;
        for j in 0..m {
            let v = pooled[[c, j]];
            let p = pos(j);
            out[[c, p]] = v;
            let q = 2 * j + 1 - switches[[c, j]] as usize;
            let (left, right) = if q < p {
                (if j > 0 { Some(j - 1) } else { None }, Some(j))
            } else {
                (Some(j), if j + 1 < m { Some(j + 1) } else { None })
            };
            let interp = match (left, right) {
                (Some(a), Some(b)) => {
                    let (pa, pb) = (pos(a) as f64, pos(b) as f64);
                    let (va, vb) = (pooled[[c, a]], pooled[[c, b]]);
                    va + (vb - va) * (q as f64 - pa) / (pb - pa)
                }
                (Some(a), None) | (None, Some(a)) => pooled[[c, a]],
                (None, None) => v,
            };
            let (lo, hi) = if v >= 0.0 { (0.0, v) } else { (v, 0.0) };
            out[[c, q]] = interp.clamp(lo, hi);
        }
    }
    if target_len < 2 * m {
        out = out.slice(ndarray::s![.., ..target_len]).to_owned();
    }
    Ok(out)
}

pub fn inverse_relu(x: ArrayView2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Runs the inversion from the deepest block down to input space.
pub fn reconstruct(net: &Conv1DNet, trace: &ForwardTrace) -> Result<Array2<f64>> {
    if trace.blocks.len() != net.convs.len() {
        return Err(Error::Shape(format!(
            "trace has {} blocks, network has {}",
            trace.blocks.len(),
            net.convs.len()
        )));
    }
    let mut g = trace.deepest_pooled().clone();
    for (block, layer) in trace.blocks.iter().zip(&net.convs).rev() {
        let up = unpool(g.view(), block.switches.view(), block.activated.ncols())?;
        let act = inverse_relu(up.view());
        g = transpose_conv1d(act.view(), layer)?;
    }
    Ok(g)
}

/// Forward pass followed by reconstruction.
pub fn reconstruct_input(net: &Conv1DNet, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (_, trace) = net.forward(x)?;
    reconstruct(net, &trace)
}
