//! RBF kernel PCA on standardized feature rows.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPca {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub gamma: f64,
    /// Standardized training rows.
    pub train: Array2<f64>,
    /// Eigenvectors divided by the square root of their eigenvalue, one
    /// column per component.
    pub alphas: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    kernel_col_means: Vec<f64>,
    kernel_mean: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `1 / (2 median^2)` of the pairwise Euclidean distances; 1 when the median is zero.
pub fn auto_gamma(rows: ArrayView2<f64>) -> f64 {
    let n = rows.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(rows.row(i), rows.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 1 { d[mid] } else { 0.5 * (d[mid - 1] + d[mid]) };
    if med > 0.0 {
        1.0 / (2.0 * med * med)
    } else {
        1.0
    }
}

impl KernelPca {
    /// Fits on the rows of `f`. `gamma = None` selects [`auto_gamma`] on the
    /// standardized rows.
    pub fn fit(f: ArrayView2<f64>, gamma: Option<f64>, n_components: usize) -> Result<Self> {
        let (n, d) = f.dim();
        if n_components == 0 || n < n_components {
            return Err(Error::InvalidArgument(format!(
                "kernel PCA with {n_components} components needs at least that many rows, got {n}"
            )));
        }
        if let Some(g) = gamma {
            if !(g > 0.0) {
                return Err(Error::InvalidArgument(format!("gamma must be positive, got {g}")));
            }
        }
        let mean: Vec<f64> = (0..d).map(|j| f.column(j).mean().unwrap_or(0.0)).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let sd = f.column(j).std(0.0);
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let train = Array2::from_shape_fn((n, d), |(i, j)| (f[[i, j]] - mean[j]) / scale[j]);
        let gamma = gamma.unwrap_or_else(|| auto_gamma(train.view()));
        let k = Array2::from_shape_fn((n, n), |(i, j)| (-gamma * sq_dist(train.row(i), train.row(j))).exp());
        let col_means = k.mean_axis(Axis(0)).expect("nonempty");
        let total = col_means.mean().unwrap_or(0.0);
        let kc = DMatrix::from_fn(n, n, |i, j| k[[i, j]] - col_means[i] - col_means[j] + total);
        let eig = kc.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lmax = eig.eigenvalues[order[0]].max(0.0);
        let mut alphas = Array2::zeros((n, n_components));
        let mut eigenvalues = Vec::with_capacity(n_components);
        for (c, &o) in order.iter().take(n_components).enumerate() {
            let lambda = eig.eigenvalues[o];
            eigenvalues.push(lambda);
            if !(lambda > 1e-12 * lmax) {
                continue;
            }
            let v = eig.eigenvectors.column(o);
            let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            let s = sign / lambda.sqrt();
            for i in 0..n {
                alphas[[i, c]] = v[i] * s;
            }
        }
        Ok(Self {
            mean,
            scale,
            gamma,
            train,
            alphas,
            eigenvalues,
            kernel_col_means: col_means.to_vec(),
            kernel_mean: total,
        })
    }

    pub fn n_components(&self) -> usize {
        self.alphas.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, f: &[f64]) -> Result<Array1<f64>> {
        if f.len() != self.n_features() {
            return Err(Error::Shape(format!(
                "feature vector of length {}, model expects {}",
                f.len(),
                self.n_features()
            )));
        }
        let z: Array1<f64> = f
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let k: Array1<f64> = self
            .train
            .outer_iter()
            .map(|r| (-self.gamma * sq_dist(r, z.view())).exp())
            .collect();
        let km = k.mean().unwrap_or(0.0);
        let kc: Array1<f64> = k
            .iter()
            .zip(&self.kernel_col_means)
            .map(|(v, c)| v - km - c + self.kernel_mean)
            .collect();
        Ok(self.alphas.t().dot(&kc))
    }

    pub fn transform_rows(&self, f: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((f.nrows(), self.n_components()));
        for (i, row) in f.outer_iter().enumerate() {
            out.row_mut(i).assign(&self.transform(&row.to_vec())?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_points_project_symmetrically() {
        let f = array![[0.0, 1.0], [2.0, 5.0]];
        let m = KernelPca::fit(f.view(), None, 1).unwrap();
        let p = m.transform_rows(f.view()).unwrap();
        // standardized rows differ by 2 in each of 2 columns: median distance
        // sqrt(8), so exp(-gamma d^2) = exp(-1/2)
        let c = ((1.0 - (-0.5f64).exp()) / 2.0).sqrt();
        assert!((p[[0, 0]].abs() - c).abs() < 1e-12);
        assert!((p[[0, 0]] + p[[1, 0]]).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = array![[0.0], [1.0]];
        assert!(KernelPca::fit(f.view(), Some(0.0), 1).is_err());
        assert!(KernelPca::fit(f.view(), None, 3).is_err());
        let m = KernelPca::fit(f.view(), None, 1).unwrap();
        assert!(m.transform(&[1.0, 2.0]).is_err());
    }
}
