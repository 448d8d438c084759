//! SMOTE oversampling, edited nearest neighbours, and their combination.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SMOTE_K: usize = 5;
pub const ENN_K: usize = 3;

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest rows of `x` to row `i` among `candidates`
/// (excluding `i`), nearest first; ties broken by index.
fn nearest(x: ArrayView2<f64>, i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let row = x.row(i);
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (sq_dist(row, x.row(j)), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

fn check_rows(x: ArrayView2<f64>, y: &[bool]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    Ok(())
}

/// Oversamples the minority class up to the majority count. Synthetic rows
/// are appended after the originals. `gap` fixes the interpolation weight
/// instead of drawing it uniformly.
pub fn smote_with<R: Rng>(
    x: ArrayView2<f64>,
    y: &[bool],
    k: usize,
    gap: Option<f64>,
    rng: &mut R,
) -> Result<(Array2<f64>, Vec<bool>)> {
    check_rows(x, y)?;
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let (minority, n_major, label) = if pos.len() <= neg.len() {
        (pos, neg.len(), true)
    } else {
        (neg, pos.len(), false)
    };
    let n_new = n_major - minority.len();
    if n_new == 0 {
        return Ok((x.to_owned(), y.to_vec()));
    }
    if minority.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "minority class has {} member(s); at least 2 are needed",
            minority.len()
        )));
    }
    let k = k.min(minority.len() - 1).max(1);
    let neighbours: Vec<Vec<usize>> = minority.iter().map(|&i| nearest(x, i, &minority, k)).collect();
    let mut out = Array2::zeros((x.nrows() + n_new, x.ncols()));
    out.slice_mut(ndarray::s![..x.nrows(), ..]).assign(&x);
    for s in 0..n_new {
        let a = rng.gen_range(0..minority.len());
        let b = *neighbours[a].choose(rng).expect("k >= 1");
        let u = gap.unwrap_or_else(|| rng.gen::<f64>());
        let (ra, rb) = (x.row(minority[a]), x.row(b));
        let mut dst = out.row_mut(x.nrows() + s);
        for ((d, va), vb) in dst.iter_mut().zip(ra.iter()).zip(rb.iter()) {
            *d = va + u * (vb - va);
        }
    }
    let mut labels = y.to_vec();
    labels.extend(std::iter::repeat(label).take(n_new));
    Ok((out, labels))
}

pub fn smote<R: Rng>(x: ArrayView2<f64>, y: &[bool], k: usize, rng: &mut R) -> Result<(Array2<f64>, Vec<bool>)> {
    smote_with(x, y, k, None, rng)
}

/// Mask of rows kept by edited nearest neighbours: a row is dropped when
/// its label disagrees with the majority of its `k` nearest neighbours.
pub fn enn_mask(x: ArrayView2<f64>, y: &[bool], k: usize) -> Result<Vec<bool>> {
    check_rows(x, y)?;
    if y.len() <= k {
        return Err(Error::InvalidArgument(format!(
            "edited nearest neighbours needs more than {k} rows, got {}",
            y.len()
        )));
    }
    let all: Vec<usize> = (0..y.len()).collect();
    Ok((0..y.len())
        .map(|i| {
            let nb = nearest(x, i, &all, k);
            let agree = nb.iter().filter(|&&j| y[j] == y[i]).count();
            let disagree = nb.len() - agree;
            disagree <= agree
        })
        .collect())
}

pub fn enn(x: ArrayView2<f64>, y: &[bool], k: usize) -> Result<(Array2<f64>, Vec<bool>)> {
    let keep = enn_mask(x, y, k)?;
    Ok(select(x, y, &keep))
}

fn select(x: ArrayView2<f64>, y: &[bool], keep: &[bool]) -> (Array2<f64>, Vec<bool>) {
    let idx: Vec<usize> = (0..y.len()).filter(|&i| keep[i]).collect();
    (x.select(Axis(0), &idx), idx.iter().map(|&i| y[i]).collect())
}

/// SMOTE followed by ENN. If cleaning would empty a class, the SMOTE output
/// is returned unchanged.
pub fn smoteenn(x: ArrayView2<f64>, y: &[bool], seed: u64) -> Result<(Array2<f64>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ys) = smote(x, y, SMOTE_K, &mut rng)?;
    if ys.len() <= ENN_K {
        return Ok((xs, ys));
    }
    let keep = enn_mask(xs.view(), &ys, ENN_K)?;
    let kept_pos = ys.iter().zip(&keep).filter(|(l, k)| **l && **k).count();
    let kept_neg = ys.iter().zip(&keep).filter(|(l, k)| !**l && **k).count();
    if kept_pos == 0 || kept_neg == 0 {
        log::warn!("edited nearest neighbours would remove a whole class; skipping cleaning");
        return Ok((xs, ys));
    }
    Ok(select(xs.view(), &ys, &keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn midpoint_with_fixed_gap() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [2.0, 4.0], [10.0, 10.0], [11.0, 11.0]];
        let y = [false, false, false, true, true];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (xo, yo) = smote_with(x.view(), &y, 5, Some(0.5), &mut rng).unwrap();
        assert_eq!(yo.len(), 6);
        assert_eq!(xo.row(5).to_vec(), vec![10.5, 10.5]);
        assert_eq!(xo.slice(ndarray::s![..5, ..]), x);
    }

    #[test]
    fn counts_equalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((14, 3), |(i, j)| (i * 3 + j) as f64);
        let y: Vec<bool> = (0..14).map(|i| i < 4).collect();
        let (xo, yo) = smote(x.view(), &y, 5, &mut rng).unwrap();
        assert_eq!(xo.nrows(), 20);
        assert_eq!(yo.iter().filter(|l| **l).count(), 10);
    }

    #[test]
    fn single_minority_is_an_error() {
        let x = array![[0.0], [1.0], [2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(smote(x.view(), &[true, false, false], 5, &mut rng).is_err());
    }

    #[test]
    fn enn_removes_surrounded_point() {
        let x = array![[0.0], [0.1], [-0.1], [0.2], [5.0], [5.1], [5.2]];
        let y = [true, false, false, false, true, true, true];
        let keep = enn_mask(x.view(), &y, 3).unwrap();
        assert_eq!(keep, vec![false, true, true, true, true, true, true]);
    }

    #[test]
    fn enn_keeps_separated_clusters() {
        let x = array![[0.0], [0.1], [0.2], [0.3], [9.0], [9.1], [9.2], [9.3]];
        let y = [false, false, false, false, true, true, true, true];
        assert!(enn_mask(x.view(), &y, 3).unwrap().iter().all(|k| *k));
    }

    #[test]
    fn smoteenn_is_deterministic() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let y: Vec<bool> = (0..30).map(|i| i % 4 == 0).collect();
        let a = smoteenn(x.view(), &y, 9).unwrap();
        let b = smoteenn(x.view(), &y, 9).unwrap();
        assert_eq!(a, b);
    }
}
