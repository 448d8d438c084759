//! Shape-based distance: one minus the maximal normalized cross-correlation
//! over all shifts, with one shift shared across leads.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Below this length cross-correlations are summed directly.
const DIRECT_MAX: usize = 32;

/// Full linear cross-correlation of equal-length series.
#[derive(Clone)]
pub struct CrossCorrelator {
    m: usize,
    nfft: usize,
    fwd: Option<Arc<dyn Fft<f64>>>,
    inv: Option<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for CrossCorrelator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CrossCorrelator").field("m", &self.m).field("nfft", &self.nfft).finish()
    }
}

/// A series prepared for repeated correlation: its samples, norm and spectrum.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub values: Vec<f64>,
    pub norm: f64,
    spectrum: Vec<Complex64>,
}

impl CrossCorrelator {
    pub fn new(m: usize) -> Self {
        if m <= DIRECT_MAX {
            return Self { m, nfft: 0, fwd: None, inv: None };
        }
        let nfft = (2 * m - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            m,
            nfft,
            fwd: Some(planner.plan_fft_forward(nfft)),
            inv: Some(planner.plan_fft_inverse(nfft)),
        }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn prepare(&self, a: &[f64]) -> Prepared {
        assert_eq!(a.len(), self.m, "series length differs from correlator length");
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let spectrum = match &self.fwd {
            Some(fft) => {
                let mut buf: Vec<Complex64> = a.iter().map(|v| Complex64::new(*v, 0.0)).collect();
                buf.resize(self.nfft, Complex64::new(0.0, 0.0));
                fft.process(&mut buf);
                buf
            }
            None => Vec::new(),
        };
        Prepared { values: a.to_vec(), norm, spectrum }
    }

    /// `cc[s + m - 1] = sum_t a[t] * b[t + s]` for `s` in `-(m-1)..=(m-1)`.
    pub fn correlate(&self, a: &Prepared, b: &Prepared) -> Vec<f64> {
        let m = self.m;
        if m == 0 {
            return Vec::new();
        }
        match &self.inv {
            None => (0..2 * m - 1)
                .map(|idx| {
                    let s = idx as isize - (m as isize - 1);
                    let lo = (-s).max(0) as usize;
                    let hi = (m as isize - s).min(m as isize) as usize;
                    (lo..hi).map(|t| a.values[t] * b.values[(t as isize + s) as usize]).sum()
                })
                .collect(),
            Some(ifft) => {
                let mut buf: Vec<Complex64> = a
                    .spectrum
                    .iter()
                    .zip(&b.spectrum)
                    .map(|(x, y)| x.conj() * y)
                    .collect();
                ifft.process(&mut buf);
                let scale = 1.0 / self.nfft as f64;
                (0..2 * m - 1)
                    .map(|idx| {
                        let s = idx as isize - (m as isize - 1);
                        let k = if s < 0 { (self.nfft as isize + s) as usize } else { s as usize };
                        buf[k].re * scale
                    })
                    .collect()
            }
        }
    }
}

/// Candidate shifts in order of preference for ties: 0, -1, 1, -2, 2, ...
fn shift_order(m: usize) -> impl Iterator<Item = isize> {
    std::iter::once(0).chain((1..m as isize).flat_map(|s| [-s, s]))
}

/// Multilead distance and shared shift between prepared series `a` and `b`
/// (one `Prepared` per lead). The shift maximizes the summed per-lead
/// normalized correlation; the distance sums `1 - ncc` over leads.
pub fn sbd_prepared(cc: &CrossCorrelator, a: &[Prepared], b: &[Prepared]) -> (f64, isize) {
    let m = cc.len();
    if m == 0 {
        return (a.len() as f64, 0);
    }
    let per_lead: Vec<Option<Vec<f64>>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.norm * y.norm;
            (d > 0.0).then(|| cc.correlate(x, y).into_iter().map(|v| v / d).collect())
        })
        .collect();
    let total = |s: isize| -> f64 {
        let idx = (s + m as isize - 1) as usize;
        per_lead.iter().flatten().map(|c| c[idx]).sum()
    };
    let mut best_shift = 0;
    let mut best = f64::NEG_INFINITY;
    for s in shift_order(m) {
        let t = total(s);
        if t > best {
            best = t;
            best_shift = s;
        }
    }
    let idx = (best_shift + m as isize - 1) as usize;
    let dist = per_lead
        .iter()
        .map(|c| 1.0 - c.as_ref().map_or(0.0, |c| c[idx]))
        .sum();
    (dist, best_shift)
}

pub fn prepare_rows(cc: &CrossCorrelator, x: ArrayView2<f64>) -> Vec<Prepared> {
    x.outer_iter().map(|r| cc.prepare(&r.to_vec())).collect()
}

/// Multilead shape-based distance of two leads-by-samples matrices.
pub fn sbd_multi(a: ArrayView2<f64>, b: ArrayView2<f64>) -> (f64, isize) {
    assert_eq!(a.dim(), b.dim(), "sbd needs equal shapes");
    let cc = CrossCorrelator::new(a.ncols());
    sbd_prepared(&cc, &prepare_rows(&cc, a), &prepare_rows(&cc, b))
}

/// Univariate shape-based distance in `[0, 2]` and the maximizing shift
/// `s` of `sum_t a[t] b[t + s]`. A zero-norm input gives `(1, 0)`.
pub fn sbd(a: &[f64], b: &[f64]) -> (f64, isize) {
    assert_eq!(a.len(), b.len(), "sbd needs equal lengths");
    let cc = CrossCorrelator::new(a.len());
    sbd_prepared(&cc, &[cc.prepare(a)], &[cc.prepare(b)])
}

/// Normalized correlation of `a` and `b` at a fixed shift.
pub fn ncc_at(a: &[f64], b: &[f64], shift: isize) -> f64 {
    let m = a.len();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let lo = (-shift).max(0) as usize;
    let hi = (m as isize - shift).clamp(0, m as isize) as usize;
    (lo..hi).map(|t| a[t] * b[(t as isize + shift) as usize]).sum::<f64>() / (na * nb)
}

/// `y[l, t] = x[l, t + s]`, zero where `t + s` falls outside.
pub fn shift_series(x: ArrayView2<f64>, s: isize) -> Array2<f64> {
    let (l, m) = x.dim();
    Array2::from_shape_fn((l, m), |(r, t)| {
        let src = t as isize + s;
        if src >= 0 && (src as usize) < m {
            x[[r, src as usize]]
        } else {
            0.0
        }
    })
}

/// In-place z-normalization with the population standard deviation;
/// constant input becomes zeros.
pub fn znorm(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
}

pub fn znorm_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.outer_iter_mut() {
        znorm(row.as_slice_mut().expect("owned row"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bump(m: usize, c: f64) -> Vec<f64> {
        (0..m).map(|t| (-(t as f64 - c).powi(2) / 8.0).exp() + 0.1 * (t as f64 * 0.3).sin()).collect()
    }

    #[test]
    fn identical_series() {
        for m in [10, 100] {
            let a = bump(m, m as f64 / 2.0);
            let (d, s) = sbd(&a, &a);
            assert!(d.abs() < 1e-12);
            assert_eq!(s, 0);
        }
    }

    #[test]
    fn recovers_shift() {
        for m in [20, 200] {
            let a = bump(m, m as f64 / 2.0);
            let b: Vec<f64> = (0..m).map(|t| if t >= 3 { a[t - 3] } else { 0.0 }).collect();
            let (d, s) = sbd(&a, &b);
            assert_eq!(s, 3);
            assert!(d < 0.02, "{d}");
        }
    }

    #[test]
    fn negation_at_zero_shift() {
        let a = bump(50, 25.0);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((1.0 - ncc_at(&a, &neg, 0) - 2.0).abs() < 1e-12);
        let (d, _) = sbd(&a, &neg);
        assert!(d > 0.0 && d <= 2.0);
    }

    #[test]
    fn zero_norm_input() {
        assert_eq!(sbd(&[0.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), (1.0, 0));
    }

    #[test]
    fn fft_and_direct_agree() {
        let a = bump(40, 10.0);
        let b = bump(40, 30.0);
        let fast = CrossCorrelator::new(40);
        let fa = fast.prepare(&a);
        let fb = fast.prepare(&b);
        let direct: Vec<f64> = (-39..40isize)
            .map(|s| ncc_at(&a, &b, s) * fa.norm * fb.norm)
            .collect();
        for (x, y) in fast.correlate(&fa, &fb).iter().zip(&direct) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_and_znorm() {
        let x = array![[1.0, 2.0, 3.0]];
        assert_eq!(shift_series(x.view(), 1), array![[2.0, 3.0, 0.0]]);
        assert_eq!(shift_series(x.view(), -1), array![[0.0, 1.0, 2.0]]);
        let mut c = vec![4.0; 3];
        znorm(&mut c);
        assert_eq!(c, vec![0.0; 3]);
    }
}
