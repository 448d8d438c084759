//! Dataset model, ECG preprocessing, synthetic ECG generation and the
//! CNN/LR dataset splitting protocol.

mod filter;
mod io;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{
    butterworth_filter, savgol_detrend, savgol_smooth, tukey_window, Biquad, Butterworth,
    FilterKind,
};
pub use io::{
    load_dataset, load_split_tags, read_matrix_csv, save_dataset, save_split_tags,
    write_instance_csv, write_matrix_csv, DatasetFormat, SPLITS_FILE,
};
pub use split::split_dataset;
pub use synth::{
    standard_lead_names, synth_cohort, synth_ecg, CohortConfig, NoiseConfig, Pathology, SynthConfig,
    Wave,
};

/// One patient's multi-lead record: `values` is leads x samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesInstance {
    pub id: String,
    pub values: Array2<f64>,
    pub sample_rate_hz: f64,
    pub lead_names: Vec<String>,
    pub label: bool,
    pub age: Option<f64>,
    pub sex: Option<u8>,
}

impl TimeSeriesInstance {
    pub fn n_leads(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    /// Copy of this instance carrying different signal values.
    pub fn with_values(&self, values: Array2<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_leads() == 0 {
            return Err(Error::Shape(format!("instance {} has no leads", self.id)));
        }
        if self.lead_names.len() != self.n_leads() {
            return Err(Error::Shape(format!(
                "instance {}: {} lead names for {} leads",
                self.id,
                self.lead_names.len(),
                self.n_leads()
            )));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "instance {}: sample rate must be positive",
                self.id
            )));
        }
        if matches!(self.sex, Some(s) if s > 1) {
            return Err(Error::InvalidArgument(format!(
                "instance {}: sex must be 0 or 1",
                self.id
            )));
        }
        Ok(())
    }
}

/// Partition membership assigned by [`split_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    /// CNN half, cross-validation fold `f`.
    CnnVal(usize),
    /// CNN half, held-out test set.
    CnnTest,
    /// Half reserved for the logistic model.
    LrHalf,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTag::CnnVal(k) => write!(f, "cnn_val:{k}"),
            SplitTag::CnnTest => f.write_str("cnn_test"),
            SplitTag::LrHalf => f.write_str("lr_half"),
        }
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn_test" => Ok(SplitTag::CnnTest),
            "lr_half" => Ok(SplitTag::LrHalf),
            _ => s
                .strip_prefix("cnn_val:")
                .and_then(|k| k.parse().ok())
                .map(SplitTag::CnnVal)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown split tag '{s}'"))),
        }
    }
}

impl Serialize for SplitTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SplitTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub instances: Vec<TimeSeriesInstance>,
    /// Either empty (untagged) or one tag per instance.
    pub split_tags: Vec<SplitTag>,
}

impl Dataset {
    pub fn new(instances: Vec<TimeSeriesInstance>) -> Self {
        Self {
            instances,
            split_tags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn is_tagged(&self) -> bool {
        !self.instances.is_empty() && self.split_tags.len() == self.instances.len()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.instances.iter().map(|x| x.label).collect()
    }

    /// Indices whose tag satisfies `pred`, in dataset order.
    pub fn indices_where(&self, pred: impl Fn(SplitTag) -> bool) -> Vec<usize> {
        self.split_tags
            .iter()
            .enumerate()
            .filter(|(_, t)| pred(**t))
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of cross-validation folds present in the tags.
    pub fn n_folds(&self) -> usize {
        self.split_tags
            .iter()
            .filter_map(|t| match t {
                SplitTag::CnnVal(k) => Some(k + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// (training, validation) indices for CNN fold `fold`.
    pub fn fold_indices(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let train = self.indices_where(|t| matches!(t, SplitTag::CnnVal(k) if k != fold));
        let val = self.indices_where(|t| t == SplitTag::CnnVal(fold));
        (train, val)
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&TimeSeriesInstance> {
        idx.iter().map(|&i| &self.instances[i]).collect()
    }
}

/// Savitzky-Golay window and Tukey fraction used by [`preprocess`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessParams {
    pub butter_order: usize,
    pub lowpass_hz: f64,
    pub highpass_hz: f64,
    pub savgol_seconds: f64,
    pub savgol_polyorder: usize,
    pub scale: f64,
    pub tukey_alpha: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            butter_order: 4,
            lowpass_hz: 50.0,
            highpass_hz: 0.5,
            savgol_seconds: 2.0,
            savgol_polyorder: 3,
            scale: 1e-3,
            tukey_alpha: 0.1,
        }
    }
}

impl PreprocessParams {
    /// Window length in samples: `savgol_seconds` worth, rounded up to odd and
    /// capped at the longest odd length that fits the record.
    pub fn savgol_window(&self, fs_hz: f64, n_samples: usize) -> usize {
        let mut w = (self.savgol_seconds * fs_hz).ceil() as usize;
        if w % 2 == 0 {
            w += 1;
        }
        let cap = if n_samples % 2 == 0 { n_samples.saturating_sub(1) } else { n_samples };
        let p = self.savgol_polyorder;
        w.min(cap).max(p + 1 + ((p + 1) % 2 == 0) as usize)
    }

    /// Band-pass and baseline removal only, without rescaling or taper.
    pub fn filter_chain(&self, lead: &[f64], fs_hz: f64) -> Result<Vec<f64>> {
        let low = Butterworth::design(self.butter_order, self.lowpass_hz, FilterKind::Low, fs_hz)?;
        let high =
            Butterworth::design(self.butter_order, self.highpass_hz, FilterKind::High, fs_hz)?;
        let y = high.filtfilt(&low.filtfilt(lead));
        savgol_detrend(&y, self.savgol_window(fs_hz, lead.len()), self.savgol_polyorder)
    }
}

/// Full preprocessing chain with the default parameters.
pub fn preprocess(raw: &TimeSeriesInstance) -> Result<TimeSeriesInstance> {
    preprocess_with(raw, &PreprocessParams::default())
}

/// Per lead: Butterworth low-pass then high-pass (zero phase), Savitzky-Golay
/// detrend, rescale, remove the taper-weighted mean and apply the Tukey taper.
///
/// The mean removed is weighted by the taper so that the tapered output has
/// zero mean exactly.
pub fn preprocess_with(
    raw: &TimeSeriesInstance,
    params: &PreprocessParams,
) -> Result<TimeSeriesInstance> {
    raw.validate()?;
    if !(raw.sample_rate_hz > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sample rate {} Hz must exceed 1 Hz",
            raw.sample_rate_hz
        )));
    }
    let n = raw.n_samples();
    let taper = tukey_window(n, params.tukey_alpha);
    let taper_sum: f64 = taper.iter().sum();
    let mut out = Array2::zeros(raw.values.raw_dim());
    for (lead, mut dst) in raw.values.outer_iter().zip(out.outer_iter_mut()) {
        let lead = lead.to_vec();
        let y = params.filter_chain(&lead, raw.sample_rate_hz)?;
        let scaled: Vec<f64> = y.iter().map(|v| v * params.scale).collect();
        let weighted_mean = if taper_sum > 0.0 {
            scaled.iter().zip(&taper).map(|(v, w)| v * w).sum::<f64>() / taper_sum
        } else {
            0.0
        };
        for ((d, v), w) in dst.iter_mut().zip(&scaled).zip(&taper) {
            *d = (v - weighted_mean) * w;
        }
    }
    Ok(raw.with_values(out))
}

/// Preprocesses every instance, keeping tags.
pub fn preprocess_dataset(ds: &Dataset, params: &PreprocessParams) -> Result<Dataset> {
    let instances = ds
        .instances
        .iter()
        .map(|x| preprocess_with(x, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        instances,
        split_tags: ds.split_tags.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn instance(values: Array2<f64>, fs: f64) -> TimeSeriesInstance {
        let n = values.nrows();
        TimeSeriesInstance {
            id: "x".into(),
            values,
            sample_rate_hz: fs,
            lead_names: (0..n).map(|i| format!("L{i}")).collect(),
            label: false,
            age: None,
            sex: None,
        }
    }

    #[test]
    fn zeros_stay_zero() {
        let x = instance(Array2::zeros((2, 1000)), 250.0);
        let y = preprocess(&x).unwrap();
        assert!(y.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_and_endpoints_vanish() {
        let v = Array2::from_shape_fn((3, 1200), |(l, i)| {
            let t = i as f64 / 300.0;
            500.0 * (2.0 * std::f64::consts::PI * (1.3 + l as f64) * t).sin() + 40.0 * t + 7.0
        });
        let y = preprocess(&instance(v, 300.0)).unwrap();
        for lead in y.values.outer_iter() {
            let mean = lead.sum() / lead.len() as f64;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!(lead[0].abs() < 1e-9);
            assert!(lead[lead.len() - 1].abs() < 1e-9);
        }
    }

    #[test]
    fn low_rate_propagates_filter_error() {
        let x = instance(Array2::zeros((1, 100)), 80.0);
        assert!(matches!(preprocess(&x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn split_tag_text_round_trip() {
        for t in [SplitTag::CnnVal(0), SplitTag::CnnVal(4), SplitTag::CnnTest, SplitTag::LrHalf] {
            assert_eq!(t.to_string().parse::<SplitTag>().unwrap(), t);
        }
        assert!("cnn_train".parse::<SplitTag>().is_err());
    }

    #[test]
    fn savgol_window_rounding() {
        let p = PreprocessParams::default();
        assert_eq!(p.savgol_window(250.0, 5000), 501);
        assert_eq!(p.savgol_window(200.0, 5000), 401);
        assert_eq!(p.savgol_window(200.0, 300), 299);
    }
}
