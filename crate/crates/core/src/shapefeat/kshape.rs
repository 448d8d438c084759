//! K-shape clustering of multilead segments.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sbd::{prepare_rows, sbd_prepared, shift_series, znorm, znorm_rows, CrossCorrelator, Prepared};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCentroid {
    /// Leads by samples, each lead z-normalized.
    pub values: Array2<f64>,
    pub l_seconds: f64,
    pub cluster_id: usize,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KShapeModel {
    pub centroids: Vec<ShapeCentroid>,
    pub assignments: Vec<usize>,
    /// Sum of member-to-centroid distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Workspace {
    cc: CrossCorrelator,
    segments: Vec<Array2<f64>>,
    prepared: Vec<Vec<Prepared>>,
}

impl Workspace {
    fn new(segments: &[Array2<f64>]) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidArgument("no segments to cluster".into()))?;
        if segments.iter().any(|s| s.dim() != first.dim()) {
            return Err(Error::Shape("segments must share one shape".into()));
        }
        let cc = CrossCorrelator::new(first.ncols());
        let segments: Vec<Array2<f64>> = segments.iter().map(|s| znorm_rows(s.view())).collect();
        let prepared = segments.iter().map(|s| prepare_rows(&cc, s.view())).collect();
        Ok(Self { cc, segments, prepared })
    }

    fn distances_to(&self, centroid: ArrayView2<f64>) -> Vec<(f64, isize)> {
        let c = prepare_rows(&self.cc, centroid);
        self.prepared
            .par_iter()
            .map(|s| sbd_prepared(&self.cc, &c, s))
            .collect()
    }

    fn assign(&self, centroids: &[Array2<f64>]) -> (Vec<usize>, f64) {
        let prepared: Vec<Vec<Prepared>> = centroids.iter().map(|c| prepare_rows(&self.cc, c.view())).collect();
        let best: Vec<(usize, f64)> = self
            .prepared
            .par_iter()
            .map(|s| {
                let mut best = (0, f64::INFINITY);
                for (j, c) in prepared.iter().enumerate() {
                    let (d, _) = sbd_prepared(&self.cc, c, s);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect();
        let objective = best.iter().map(|b| b.1).sum();
        (best.into_iter().map(|b| b.0).collect(), objective)
    }

    /// Summed distance from `members` to `centroid`.
    fn spread(&self, members: &[usize], centroid: &Array2<f64>) -> f64 {
        let c = prepare_rows(&self.cc, centroid.view());
        members.iter().map(|&i| sbd_prepared(&self.cc, &c, &self.prepared[i]).0).sum()
    }

    /// Shape extraction: align members to `reference`, z-normalize, and take
    /// the dominant right singular vector per lead.
    fn extract(&self, members: &[usize], reference: &Array2<f64>) -> Array2<f64> {
        if members.is_empty() {
            return reference.clone();
        }
        let ref_nonzero = reference.iter().any(|v| *v != 0.0);
        let aligned: Vec<Array2<f64>> = if ref_nonzero {
            let r = prepare_rows(&self.cc, reference.view());
            members
                .iter()
                .map(|&i| {
                    let (_, s) = sbd_prepared(&self.cc, &r, &self.prepared[i]);
                    znorm_rows(shift_series(self.segments[i].view(), s).view())
                })
                .collect()
        } else {
            members.iter().map(|&i| self.segments[i].clone()).collect()
        };
        let (n_leads, len) = reference.dim();
        let mut out = Array2::zeros((n_leads, len));
        for l in 0..n_leads {
            let x = DMatrix::from_fn(aligned.len(), len, |i, t| aligned[i][[l, t]]);
            let mut v = principal_right_vector(&x);
            let r = reference.row(l);
            let mut dir: f64 = v.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            if dir == 0.0 {
                dir = (0..x.nrows()).map(|i| x.row(i).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()).sum();
            }
            if dir < 0.0 {
                v.iter_mut().for_each(|e| *e = -*e);
            }
            znorm(&mut v);
            out.row_mut(l).assign(&ndarray::Array1::from(v));
        }
        out
    }
}

/// Unit right singular vector of `x` for its largest singular value.
fn principal_right_vector(x: &DMatrix<f64>) -> Vec<f64> {
    let (m, n) = x.shape();
    let pick = |eig: nalgebra::SymmetricEigen<f64, nalgebra::Dyn>| {
        let k = (0..eig.eigenvalues.len())
            .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
            .unwrap_or(0);
        eig.eigenvectors.column(k).clone_owned()
    };
    let v = if m < n {
        let u = pick((x * x.transpose()).symmetric_eigen());
        x.transpose() * u
    } else {
        pick((x.transpose() * x).symmetric_eigen())
    };
    let norm = v.norm();
    if norm == 0.0 {
        return vec![0.0; n];
    }
    v.iter().map(|e| e / norm).collect()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "K = {k} must lie in 1..={n} (number of segments)"
        )));
    }
    Ok(())
}

fn seed_centroids(ws: &Workspace, k: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    let n = ws.segments.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut nearest = vec![f64::INFINITY; n];
    while chosen.len() < k {
        let last = *chosen.last().unwrap();
        for (i, (d, _)) in ws.distances_to(ws.segments[last].view()).into_iter().enumerate() {
            nearest[i] = nearest[i].min(d.max(0.0));
        }
        for &c in &chosen {
            nearest[c] = 0.0;
        }
        let weights: Vec<f64> = nearest.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = 0;
            for (i, w) in weights.iter().enumerate().filter(|(_, w)| **w > 0.0) {
                pick = i;
                if u < *w {
                    break;
                }
                u -= w;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
    }
    chosen.iter().map(|&i| ws.segments[i].clone()).collect()
}

fn iterate(
    ws: &Workspace,
    mut centroids: Vec<Array2<f64>>,
    mut assignments: Vec<usize>,
    mut objective: Vec<f64>,
    max_iter: usize,
) -> (Vec<Array2<f64>>, Vec<usize>, Vec<f64>, usize, bool) {
    let k = centroids.len();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centroids = (0..k)
            .into_par_iter()
            .map(|j| {
                let members: Vec<usize> = (0..assignments.len()).filter(|&i| assignments[i] == j).collect();
                let candidate = ws.extract(&members, &centroids[j]);
                if ws.spread(&members, &candidate) <= ws.spread(&members, &centroids[j]) {
                    candidate
                } else {
                    centroids[j].clone()
                }
            })
            .collect();
        let (next, obj) = ws.assign(&centroids);
        objective.push(obj);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    (centroids, assignments, objective, iterations, converged)
}

fn finish(
    centroids: Vec<Array2<f64>>,
    assignments: Vec<usize>,
    objective: Vec<f64>,
    iterations: usize,
    converged: bool,
    l_seconds: f64,
) -> KShapeModel {
    let centroids = centroids
        .into_iter()
        .enumerate()
        .map(|(j, values)| ShapeCentroid {
            values,
            l_seconds,
            cluster_id: j,
            member_count: assignments.iter().filter(|a| **a == j).count(),
        })
        .collect();
    KShapeModel {
        centroids,
        assignments,
        objective,
        iterations,
        converged,
    }
}

/// Clusters segments into `k` shapes. Segments are z-normalized per lead
/// first; seeding is distance-weighted from a seeded generator.
pub fn kshape_fit(segments: &[Array2<f64>], k: usize, seed: u64, max_iter: usize, l_seconds: f64) -> Result<KShapeModel> {
    let ws = Workspace::new(segments)?;
    check_k(k, segments.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = seed_centroids(&ws, k, &mut rng);
    let (assignments, obj) = ws.assign(&init);
    let (c, a, o, it, conv) = iterate(&ws, init, assignments, vec![obj], max_iter);
    Ok(finish(c, a, o, it, conv, l_seconds))
}

/// Continues iterating from an earlier model's assignment and centroids.
pub fn kshape_refit(segments: &[Array2<f64>], model: &KShapeModel, max_iter: usize) -> Result<KShapeModel> {
    let ws = Workspace::new(segments)?;
    if model.assignments.len() != segments.len() {
        return Err(Error::Shape("model was fitted on a different number of segments".into()));
    }
    let centroids: Vec<Array2<f64>> = model.centroids.iter().map(|c| c.values.clone()).collect();
    let l_seconds = model.centroids.first().map_or(0.0, |c| c.l_seconds);
    let (c, a, o, it, conv) = iterate(&ws, centroids, model.assignments.clone(), Vec::new(), max_iter);
    Ok(finish(c, a, o, it, conv, l_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_bounds() {
        let segs = vec![Array2::from_elem((1, 8), 1.0); 3];
        assert!(kshape_fit(&segs, 0, 0, 10, 1.0).is_err());
        assert!(kshape_fit(&segs, 4, 0, 10, 1.0).is_err());
    }

    #[test]
    fn singleton_clusters_reproduce_segments() {
        let segs: Vec<Array2<f64>> = (0..4)
            .map(|i| Array2::from_shape_fn((2, 16), |(l, t)| ((t * (i + 2) + l * 5) as f64 * 0.37).sin()))
            .collect();
        let model = kshape_fit(&segs, 4, 3, 20, 1.0).unwrap();
        for (i, s) in segs.iter().enumerate() {
            let c = &model.centroids[model.assignments[i]].values;
            let z = znorm_rows(s.view());
            assert!((c - &z).iter().all(|d| d.abs() < 1e-9));
        }
    }
}
