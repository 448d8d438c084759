//! On-disk dataset formats.
//!
//! `csv_dir`: one `<id>.csv` per instance (header = lead names, one row per
//! sample) plus a `<id>.meta.json` sidecar, and an optional `splits.csv`
//! with `id,tag` rows.
//!
//! `bundle`: a single JSON document holding every instance and the tags.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, SplitTag, TimeSeriesInstance};
use crate::error::{Error, Result};

pub const SPLITS_FILE: &str = "splits.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    CsvDir,
    Bundle,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceMeta {
    id: String,
    sample_rate_hz: f64,
    label: bool,
    #[serde(default)]
    age: Option<f64>,
    #[serde(default)]
    sex: Option<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    #[serde(flatten)]
    meta: InstanceMeta,
    lead_names: Vec<String>,
    /// leads x samples
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Bundle {
    instances: Vec<InstanceRecord>,
    #[serde(default)]
    split_tags: Vec<SplitTag>,
}

fn meta_of(x: &TimeSeriesInstance) -> InstanceMeta {
    InstanceMeta {
        id: x.id.clone(),
        sample_rate_hz: x.sample_rate_hz,
        label: x.label,
        age: x.age,
        sex: x.sex,
    }
}

fn instance_from(meta: InstanceMeta, lead_names: Vec<String>, values: Array2<f64>) -> TimeSeriesInstance {
    TimeSeriesInstance {
        id: meta.id,
        values,
        sample_rate_hz: meta.sample_rate_hz,
        lead_names,
        label: meta.label,
        age: meta.age,
        sex: meta.sex,
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Bundle => save_bundle(ds, path),
        DatasetFormat::CsvDir => save_csv_dir(ds, path),
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let ds = match format {
        DatasetFormat::Bundle => load_bundle(path)?,
        DatasetFormat::CsvDir => load_csv_dir(path)?,
    };
    for x in &ds.instances {
        x.validate()?;
    }
    Ok(ds)
}

fn save_bundle(ds: &Dataset, path: &Path) -> Result<()> {
    let bundle = Bundle {
        instances: ds
            .instances
            .iter()
            .map(|x| InstanceRecord {
                meta: meta_of(x),
                lead_names: x.lead_names.clone(),
                values: x.values.outer_iter().map(|r| r.to_vec()).collect(),
            })
            .collect(),
        split_tags: ds.split_tags.clone(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string(&bundle)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_bundle(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bundle: Bundle = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        row: e.line(),
        msg: e.to_string(),
    })?;
    let mut instances = Vec::with_capacity(bundle.instances.len());
    for (row, rec) in bundle.instances.into_iter().enumerate() {
        let n_leads = rec.values.len();
        let n = rec.values.first().map_or(0, Vec::len);
        if rec.values.iter().any(|l| l.len() != n) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                row,
                msg: format!("instance {} has ragged leads", rec.meta.id),
            });
        }
        let flat: Vec<f64> = rec.values.into_iter().flatten().collect();
        let values = Array2::from_shape_vec((n_leads, n), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        instances.push(instance_from(rec.meta, rec.lead_names, values));
    }
    let ds = Dataset {
        instances,
        split_tags: bundle.split_tags,
    };
    check_tags(&ds, path)?;
    Ok(ds)
}

fn check_tags(ds: &Dataset, path: &Path) -> Result<()> {
    if !ds.split_tags.is_empty() && ds.split_tags.len() != ds.instances.len() {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            row: 0,
            msg: format!(
                "{} split tags for {} instances",
                ds.split_tags.len(),
                ds.instances.len()
            ),
        });
    }
    Ok(())
}

fn csv_err(file: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        row,
        msg: msg.into(),
    }
}

fn save_csv_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for x in &ds.instances {
        let csv_path = dir.join(format!("{}.csv", x.id));
        write_instance_csv(x, &csv_path)?;
        let meta_path = dir.join(format!("{}.meta.json", x.id));
        let text = serde_json::to_string_pretty(&meta_of(x))?;
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    }
    if ds.is_tagged() {
        write_splits(ds, &dir.join(SPLITS_FILE))?;
    }
    Ok(())
}

/// Writes lead values of one instance as CSV, samples as rows.
pub fn write_instance_csv(x: &TimeSeriesInstance, path: &Path) -> Result<()> {
    write_matrix_csv(&x.lead_names, &x.values, path)
}

/// Writes a leads x samples matrix with `header` naming the rows.
pub fn write_matrix_csv(header: &[String], values: &Array2<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header).map_err(io_err)?;
    for col in values.columns() {
        w.write_record(col.iter().map(|v| v.to_string())).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`write_matrix_csv`]: returns header and leads x samples.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, 0, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(csv_err(path, 0, "missing header"));
    }
    let n_leads = header.len();
    let mut flat = Vec::new();
    let mut n_rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(path, row, e.to_string()))?;
        if rec.len() != n_leads {
            return Err(csv_err(
                path,
                row,
                format!("{} columns, header declares {n_leads}", rec.len()),
            ));
        }
        for cell in rec.iter() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| csv_err(path, row, format!("non-numeric cell '{cell}'")))?;
            flat.push(v);
        }
        n_rows += 1;
    }
    let samples_by_leads =
        Array2::from_shape_vec((n_rows, n_leads), flat).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((header, samples_by_leads.t().to_owned()))
}

fn write_splits(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["id", "tag"]).map_err(io_err)?;
    for (x, t) in ds.instances.iter().zip(&ds.split_tags) {
        w.write_record([x.id.as_str(), &t.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `id,tag` rows for a tagged dataset.
pub fn save_split_tags(ds: &Dataset, path: &Path) -> Result<()> {
    if !ds.is_tagged() {
        return Err(Error::InvalidArgument("dataset carries no split tags".into()));
    }
    write_splits(ds, path)
}

/// Applies an `id,tag` file to `ds`; every instance must be listed.
pub fn load_split_tags(ds: &mut Dataset, path: &Path) -> Result<()> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut by_id = std::collections::HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, i + 1, e.to_string()))?;
        if rec.len() != 2 {
            return Err(csv_err(path, i + 1, "expected id,tag"));
        }
        let tag: SplitTag = rec[1]
            .parse()
            .map_err(|e: Error| csv_err(path, i + 1, e.to_string()))?;
        by_id.insert(rec[0].to_string(), tag);
    }
    ds.split_tags = ds
        .instances
        .iter()
        .enumerate()
        .map(|(i, x)| {
            by_id
                .get(&x.id)
                .copied()
                .ok_or_else(|| csv_err(path, i, format!("no tag for instance {}", x.id)))
        })
        .collect::<Result<_>>()?;
    Ok(())
}

fn load_csv_dir(dir: &Path) -> Result<Dataset> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().is_some_and(|n| n != SPLITS_FILE)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        log::warn!("no instance files in {}", dir.display());
        return Ok(Dataset::default());
    }
    let mut instances = Vec::with_capacity(files.len());
    for csv_path in files {
        let stem = csv_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let meta_path = dir.join(format!("{stem}.meta.json"));
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: InstanceMeta = serde_json::from_str(&text)
            .map_err(|e| csv_err(&meta_path, e.line(), e.to_string()))?;
        let (header, values) = read_matrix_csv(&csv_path)?;
        instances.push(instance_from(meta, header, values));
    }
    let mut ds = Dataset::new(instances);
    let splits = dir.join(SPLITS_FILE);
    if splits.exists() {
        load_split_tags(&mut ds, &splits)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let values = Array2::from_shape_fn((2, 5), |(l, i)| (l as f64 + 0.1) * (i as f64).sin() / 3.0);
        let x = TimeSeriesInstance {
            id: "a1".into(),
            values,
            sample_rate_hz: 250.0,
            lead_names: vec!["I".into(), "II".into()],
            label: true,
            age: Some(61.5),
            sex: Some(1),
        };
        let mut y = x.clone();
        y.id = "b2".into();
        y.label = false;
        y.age = None;
        y.sex = None;
        y.values.mapv_inplace(|v| v * 1e-7 + std::f64::consts::PI);
        Dataset {
            instances: vec![x, y],
            split_tags: vec![SplitTag::CnnTest, SplitTag::LrHalf],
        }
    }

    #[test]
    fn round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_dataset(&ds, &dir.path().join("b.json"), DatasetFormat::Bundle).unwrap();
        assert_eq!(load_dataset(&dir.path().join("b.json"), DatasetFormat::Bundle).unwrap(), ds);
        save_dataset(&ds, &dir.path().join("csv"), DatasetFormat::CsvDir).unwrap();
        assert_eq!(load_dataset(&dir.path().join("csv"), DatasetFormat::CsvDir).unwrap(), ds);
    }

    #[test]
    fn short_row_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path(), DatasetFormat::CsvDir).unwrap();
        let f = dir.path().join("a1.csv");
        let mut text = fs::read_to_string(&f).unwrap();
        text.push_str("1.0\n");
        fs::write(&f, text).unwrap();
        let err = load_dataset(dir.path(), DatasetFormat::CsvDir).unwrap_err();
        match err {
            Error::Parse { file, row, .. } => {
                assert!(file.ends_with("a1.csv"));
                assert_eq!(row, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_named() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path(), DatasetFormat::CsvDir).unwrap();
        fs::write(dir.path().join("b2.csv"), "I,II\n1,2\n3,x\n").unwrap();
        let err = load_dataset(dir.path(), DatasetFormat::CsvDir).unwrap_err();
        assert!(err.to_string().contains("b2.csv"));
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn empty_dir_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_dataset(dir.path(), DatasetFormat::CsvDir).unwrap();
        assert!(ds.is_empty());
    }
}
