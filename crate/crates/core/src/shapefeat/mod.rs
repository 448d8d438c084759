//! Salient segments, K-shape centroids, presence features and kernel PCA.

mod kpca;
mod kshape;
mod sbd;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use kpca::{auto_gamma, KernelPca};
pub use kshape::{kshape_fit, kshape_refit, KShapeModel, ShapeCentroid};
pub use sbd::{
    ncc_at, prepare_rows, sbd, sbd_multi, sbd_prepared, shift_series, znorm, znorm_rows,
    CrossCorrelator, Prepared,
};

/// Start and contents of the window of `len` samples with the largest mean
/// saliency over all leads; ties go to the earliest start.
pub fn most_salient_segment(x: ArrayView2<f64>, phi: ArrayView2<f64>, len: usize) -> Result<(usize, Array2<f64>)> {
    if x.dim() != phi.dim() {
        return Err(Error::Shape(format!("instance {:?} and saliency {:?} differ", x.dim(), phi.dim())));
    }
    let n = x.ncols();
    if len == 0 || len > n {
        return Err(Error::InvalidArgument(format!("segment length {len} outside 1..={n}")));
    }
    let col: Vec<f64> = phi.columns().into_iter().map(|c| c.sum()).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for t in 0..=n - len {
        let s: f64 = col[t..t + len].iter().sum();
        if s > best.1 {
            best = (t, s);
        }
    }
    let t = best.0;
    Ok((t, x.slice(ndarray::s![.., t..t + len]).to_owned()))
}

/// Minimum over offsets `t` of the entrywise L1 distance between
/// `x[:, t..t+L]` and the centroid.
pub fn presence(x: ArrayView2<f64>, centroid: ArrayView2<f64>) -> Result<f64> {
    let (l, n) = x.dim();
    let (cl, len) = centroid.dim();
    if l != cl {
        return Err(Error::Shape(format!("instance has {l} leads, centroid {cl}")));
    }
    if len == 0 || len > n {
        return Err(Error::InvalidArgument(format!("centroid length {len} outside 1..={n}")));
    }
    let x = x.as_standard_layout();
    let c = centroid.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cs = c.as_slice().expect("standard layout");
    // per-lead prefix sums give the lower bound |sum(x) - sum(c)| <= L1
    let prefix: Vec<Vec<f64>> = (0..l)
        .map(|r| {
            let mut p = Vec::with_capacity(n + 1);
            p.push(0.0);
            let mut acc = 0.0;
            for v in &xs[r * n..(r + 1) * n] {
                acc += v;
                p.push(acc);
            }
            p
        })
        .collect();
    let csum: Vec<f64> = (0..l).map(|r| cs[r * len..(r + 1) * len].iter().sum()).collect();
    let mut best = f64::INFINITY;
    for t in 0..=n - len {
        if best.is_finite() {
            let lb: f64 = (0..l).map(|r| (prefix[r][t + len] - prefix[r][t] - csum[r]).abs()).sum();
            if lb > best + 1e-7 * (1.0 + best) {
                continue;
            }
        }
        let mut acc = 0.0;
        'leads: for r in 0..l {
            let w = &xs[r * n + t..r * n + t + len];
            let k = &cs[r * len..(r + 1) * len];
            for (chunk_w, chunk_k) in w.chunks(64).zip(k.chunks(64)) {
                for (a, b) in chunk_w.iter().zip(chunk_k) {
                    acc += (a - b).abs();
                }
                if acc > best {
                    break 'leads;
                }
            }
        }
        if acc < best {
            best = acc;
        }
    }
    Ok(best)
}

/// Presence of every centroid in every instance: rows are instances.
pub fn presence_matrix(instances: &[ArrayView2<f64>], centroids: &[ShapeCentroid]) -> Result<Array2<f64>> {
    if centroids.is_empty() {
        return Err(Error::InvalidArgument("no centroids".into()));
    }
    let rows = instances
        .par_iter()
        .map(|x| centroids.iter().map(|c| presence(x.view(), c.values.view())).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let k = centroids.len();
    Array2::from_shape_vec((rows.len(), k), rows.concat()).map_err(|e| Error::Shape(e.to_string()))
}

/// Presence and kernel-PCA features of a set of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub presence: Array2<f64>,
    pub kpca: Array2<f64>,
}

/// Presence features, projected with `model` or with a model fitted on
/// these rows when `model` is `None`.
pub fn extract_features(
    instances: &[ArrayView2<f64>],
    centroids: &[ShapeCentroid],
    model: Option<&KernelPca>,
    gamma: Option<f64>,
) -> Result<(FeatureMatrix, KernelPca)> {
    let presence = presence_matrix(instances, centroids)?;
    let model = match model {
        Some(m) => m.clone(),
        None => KernelPca::fit(presence.view(), gamma, centroids.len())?,
    };
    let kpca = model.transform_rows(presence.view())?;
    Ok((FeatureMatrix { presence, kpca }, model))
}
