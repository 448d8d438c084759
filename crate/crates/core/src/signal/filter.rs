//! IIR and polynomial filters used by the ECG preprocessing chain.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Low,
    High,
}

/// One second-order section in transposed direct form II, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Filter state reached after an infinitely long unit step.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * y;
        let z1 = self.b[1] - self.a[1] * y + z2;
        [z1, z2]
    }

    fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z1 * self.a[1] + z2 * self.a[2];
        num / den
    }
}

/// Digital Butterworth filter designed by bilinear transform with cutoff
/// prewarping, stored as cascaded second-order sections.
#[derive(Debug, Clone)]
pub struct Butterworth {
    sections: Vec<Biquad>,
}

impl Butterworth {
    pub fn design(order: usize, cutoff_hz: f64, kind: FilterKind, fs_hz: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("filter order must be >= 1".into()));
        }
        if !(fs_hz > 0.0) || !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
                fs_hz / 2.0
            )));
        }
        let k = 2.0 * fs_hz;
        let warped = k * (PI * cutoff_hz / fs_hz).tan();
        let bilinear = |s: Complex64| (k + s) / (k - s);

        // normalized analog prototype poles, upper half plane first
        let proto = |i: usize| {
            let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        };
        let analog_pole = |q: Complex64| match kind {
            FilterKind::Low => q * warped,
            FilterKind::High => warped / q,
        };
        let (zero_coef, reference) = match kind {
            FilterKind::Low => (1.0, 0.0),
            FilterKind::High => (-1.0, PI),
        };

        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            let zp = bilinear(analog_pole(proto(i)));
            let mut s = Biquad {
                b: [1.0, 2.0 * zero_coef, 1.0],
                a: [1.0, -2.0 * zp.re, zp.norm_sqr()],
            };
            let g = s.response(reference).norm();
            s.b.iter_mut().for_each(|c| *c /= g);
            sections.push(s);
        }
        if order % 2 == 1 {
            let zp = bilinear(analog_pole(Complex64::new(-1.0, 0.0)));
            let mut s = Biquad {
                b: [1.0, zero_coef, 0.0],
                a: [1.0, -zp.re, 0.0],
            };
            let g = s.response(reference).norm();
            s.b.iter_mut().for_each(|c| *c /= g);
            sections.push(s);
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Magnitude of a single pass at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / fs_hz;
        self.sections
            .iter()
            .map(|s| s.response(omega))
            .product::<Complex64>()
            .norm()
    }

    fn initial_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let st = s.step_state();
                let out = [st[0] * scale, st[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], mut state: Vec<[f64; 2]>) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z[0];
                z[0] = s.b[1] * input - s.a[1] * y + z[1];
                z[1] = s.b[2] * input - s.a[2] * y;
                *v = y;
            }
        }
    }

    /// Causal single pass starting from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, vec![[0.0; 2]; self.sections.len()]);
        y
    }

    /// Zero-phase forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let trailing_zeros = self
            .sections
            .iter()
            .filter(|s| s.b[2] == 0.0 && s.a[2] == 0.0)
            .count();
        let ntaps = 2 * self.sections.len() + 1 - trailing_zeros;
        let pad = (3 * ntaps).min(n - 1);

        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.initial_state();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();

        let x0 = ext[0];
        self.run(&mut ext, scaled(x0));
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, scaled(y0));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Order-`order` zero-phase Butterworth filter.
pub fn butterworth_filter(
    x: &[f64],
    order: usize,
    cutoff_hz: f64,
    kind: FilterKind,
    fs_hz: f64,
) -> Result<Vec<f64>> {
    Ok(Butterworth::design(order, cutoff_hz, kind, fs_hz)?.filtfilt(x))
}

/// Savitzky-Golay smoother. Interior samples use the centered least-squares
/// kernel; the first and last half-windows are evaluated from the polynomial
/// fitted to the outermost full window.
pub fn savgol_smooth(x: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("window {window} must be odd")));
    }
    if window > n {
        return Err(Error::InvalidArgument(format!(
            "window {window} longer than signal ({n} samples)"
        )));
    }
    if polyorder >= window {
        return Err(Error::InvalidArgument(format!(
            "polyorder {polyorder} must be < window {window}"
        )));
    }
    let half = window / 2;
    let hat = hat_matrix(window, polyorder);

    let mut out = vec![0.0; n];
    let center = hat.row(half);
    for i in half..n - half {
        let seg = &x[i - half..=i + half];
        out[i] = center.iter().zip(seg).map(|(c, v)| c * v).sum();
    }
    let head = &x[..window];
    let tail = &x[n - window..];
    for t in 0..half {
        out[t] = hat.row(t).iter().zip(head).map(|(c, v)| c * v).sum();
        let r = window - half + t;
        out[n - half + t] = hat.row(r).iter().zip(tail).map(|(c, v)| c * v).sum();
    }
    Ok(out)
}

/// Removes the Savitzky-Golay baseline estimate from `x`.
pub fn savgol_detrend(x: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    let smooth = savgol_smooth(x, window, polyorder)?;
    Ok(x.iter().zip(&smooth).map(|(a, b)| a - b).collect())
}

/// Projection onto polynomials of degree `polyorder` sampled on `window`
/// points; row `t` estimates the value at offset `t` from the fitted window.
fn hat_matrix(window: usize, polyorder: usize) -> DMatrix<f64> {
    let half = (window / 2).max(1) as f64;
    let basis = DMatrix::from_fn(window, polyorder + 1, |i, j| {
        ((i as f64 - (window / 2) as f64) / half).powi(j as i32)
    });
    let qr = basis.qr();
    let q = qr.q();
    &q * q.transpose()
}

/// Tukey (tapered cosine) window; `alpha = 0` is rectangular, `alpha = 1` Hann.
pub fn tukey_window(n: usize, alpha: f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![1.0];
    }
    if alpha <= 0.0 {
        return vec![1.0; n];
    }
    let alpha = alpha.min(1.0);
    (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            if x < alpha / 2.0 {
                0.5 * (1.0 - (2.0 * PI * x / alpha).cos())
            } else if x > 1.0 - alpha / 2.0 {
                0.5 * (1.0 - (2.0 * PI * (1.0 - x) / alpha).cos())
            } else {
                1.0
            }
        })
        .collect()
}
