//! Time-series CSV ingestion: sliding windows with end-of-window labels,
//! optional grouping (windows never cross groups), and feature
//! standardization fitted on training data only.
//!
//! CSV dialect: comma-separated, header row required, UTF-8, `.` decimal.
//! A window of `w` consecutive rows contributes the flattened feature block
//! `[row_t f_1..f_k, row_{t+1} f_1..f_k, ...]` and is labeled with the label
//! column at its final row.

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::synthdata::{Dataset, DatasetRole};

/// How to window a CSV file into samples.
#[derive(Debug, Clone)]
pub struct WindowSpec {
    pub window_size: usize,
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub stride: usize,
    /// Rows are grouped by this column's value (in order of first
    /// appearance) and windows stay within one group.
    pub group_column: Option<String>,
}

impl WindowSpec {
    pub fn new(
        window_size: usize,
        feature_columns: Vec<String>,
        label_column: String,
    ) -> WindowSpec {
        WindowSpec {
            window_size,
            feature_columns,
            label_column,
            stride: 1,
            group_column: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::InvalidParameter {
                name: "window_size",
                reason: "must be at least 1".into(),
            });
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter {
                name: "stride",
                reason: "must be at least 1".into(),
            });
        }
        if self.feature_columns.is_empty() {
            return Err(Error::InvalidParameter {
                name: "feature_columns",
                reason: "need at least one feature column".into(),
            });
        }
        if let Some(group) = &self.group_column {
            if self.feature_columns.contains(group) || &self.label_column == group {
                return Err(Error::InvalidParameter {
                    name: "group_column",
                    reason: "must be disjoint from feature and label columns".into(),
                });
            }
        }
        Ok(())
    }
}

/// Number of windows a group of `len` rows yields.
pub fn windows_in_group(len: usize, window_size: usize, stride: usize) -> usize {
    if len < window_size {
        0
    } else {
        (len - window_size) / stride + 1
    }
}

/// Loads a CSV file and windows it into a flat design matrix of
/// `window_size * n_features` columns with end-of-window labels.
pub fn load_csv(path: &Path, spec: &WindowSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let feature_idx: Vec<usize> = spec
        .feature_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let label_idx = col_index(&spec.label_column)?;
    let group_idx = spec
        .group_column
        .as_deref()
        .map(col_index)
        .transpose()?;

    // Parse rows into (group key, features, label), groups in order of
    // first appearance, rows in file order within each group.
    let mut group_order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<(Vec<f64>, f64)>> =
        std::collections::HashMap::new();
    for (record_no, record) in reader.records().enumerate() {
        let record = record?;
        let record_no = record_no + 1;
        let parse = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
                column: headers.get(idx).unwrap_or("?").to_string(),
                record: record_no,
                value: raw.to_string(),
            })
        };
        let features: Vec<f64> = feature_idx.iter().map(|&i| parse(i)).collect::<Result<_>>()?;
        let label = parse(label_idx)?;
        let key = match group_idx {
            Some(g) => record.get(g).unwrap_or("").to_string(),
            None => String::new(),
        };
        if !groups.contains_key(&key) {
            group_order.push(key.clone());
        }
        groups.entry(key).or_default().push((features, label));
    }

    let n_features = feature_idx.len();
    let width = spec.window_size * n_features;
    let n_windows: usize = group_order
        .iter()
        .map(|k| windows_in_group(groups[k].len(), spec.window_size, spec.stride))
        .sum();
    if n_windows == 0 {
        return Err(Error::EmptyDataset(format!(
            "window size {} exceeds every group in {}",
            spec.window_size,
            path.display()
        )));
    }

    let mut x = Array2::<f64>::zeros((n_windows, width));
    let mut y = Vec::with_capacity(n_windows);
    let mut row = 0;
    for key in &group_order {
        let rows = &groups[key];
        let count = windows_in_group(rows.len(), spec.window_size, spec.stride);
        for w in 0..count {
            let start = w * spec.stride;
            for (t, (features, _)) in rows[start..start + spec.window_size].iter().enumerate() {
                for (f, &v) in features.iter().enumerate() {
                    x[[row, t * n_features + f]] = v;
                }
            }
            y.push(rows[start + spec.window_size - 1].1);
            row += 1;
        }
    }

    Ok(Dataset {
        x,
        y,
        role: DatasetRole::Source,
    })
}

/// Per-feature mean and standard deviation fitted on training data.
/// Constant features are flagged and passed through unscaled.
#[derive(Debug, Clone)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

pub fn fit_standardize(x: ArrayView2<'_, f64>) -> Result<StandardizationStats> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset("standardization fit".into()));
    }
    let n = x.nrows() as f64;
    let mut mean = Vec::with_capacity(x.ncols());
    let mut std = Vec::with_capacity(x.ncols());
    let mut constant = Vec::with_capacity(x.ncols());
    for col in x.columns() {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = var.sqrt();
        mean.push(m);
        std.push(s);
        constant.push(s == 0.0);
    }
    Ok(StandardizationStats {
        mean,
        std,
        constant,
    })
}

/// Applies frozen standardization stats: `(x - mean) / std` per feature,
/// identity on flagged constant features.
pub fn apply_standardize(stats: &StandardizationStats, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != stats.mean.len() {
        return Err(Error::DimensionMismatch {
            left: x.ncols(),
            right: stats.mean.len(),
        });
    }
    let mut out = x.to_owned();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        if stats.constant[j] {
            continue;
        }
        let (m, s) = (stats.mean[j], stats.std[j]);
        for v in col.iter_mut() {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

/// Writes a dataset as CSV with columns `x0..x{d-1},y`. Floats use shortest
/// round-trip formatting, so reloading with a window of 1 is exact.
pub fn export_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    writer.write_record(&header)?;
    for (row, yi) in data.x.rows().into_iter().zip(&data.y) {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        record.push(yi.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Identity window spec for a dataset exported by [`export_csv`].
pub fn identity_spec(dim: usize) -> WindowSpec {
    WindowSpec::new(1, (0..dim).map(|j| format!("x{j}")).collect(), "y".into())
}

/// Caches a windowed dataset in a flat text format (`meewindows v1` header,
/// one `n d` shape line, then one whitespace-separated row per sample with
/// the label last).
pub fn save_windows(data: &Dataset, path: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("meewindows v1\n");
    writeln!(out, "{} {}", data.n(), data.dim()).unwrap();
    for (row, yi) in data.x.rows().into_iter().zip(&data.y) {
        for v in row.iter() {
            write!(out, "{v} ").unwrap();
        }
        writeln!(out, "{yi}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_windows(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("meewindows v1") {
        return Err(Error::ModelFormat("bad windows-cache header".into()));
    }
    let shape = lines
        .next()
        .ok_or_else(|| Error::ModelFormat("missing shape line".into()))?;
    let mut parts = shape.split_whitespace();
    let n: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::ModelFormat("bad shape line".into()))?;
    let d: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::ModelFormat("bad shape line".into()))?;
    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i >= n {
            return Err(Error::ModelFormat("too many rows".into()));
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::ModelFormat(format!("bad float `{tok}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != d + 1 {
            return Err(Error::ModelFormat(format!(
                "row {i} has {} values, expected {}",
                values.len(),
                d + 1
            )));
        }
        for (j, v) in values[..d].iter().enumerate() {
            x[[i, j]] = *v;
        }
        y.push(values[d]);
    }
    if y.len() != n {
        return Err(Error::ModelFormat("row count mismatch".into()));
    }
    Ok(Dataset {
        x,
        y,
        role: DatasetRole::Source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn five_rows_window_three() {
        let f = write_csv("a,b,label\n1,10,100\n2,20,200\n3,30,300\n4,40,400\n5,50,500\n");
        let spec = WindowSpec::new(3, vec!["a".into(), "b".into()], "label".into());
        let data = load_csv(f.path(), &spec).unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.dim(), 6);
        assert_eq!(data.y, vec![300.0, 400.0, 500.0]);
        // First window is rows 1..3 flattened time-major.
        assert_eq!(
            data.x.row(0).to_vec(),
            vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]
        );
    }

    #[test]
    fn short_group_contributes_no_windows() {
        let f = write_csv("g,a,label\n1,1,10\n1,2,20\n2,3,30\n2,4,40\n2,5,50\n");
        let mut spec = WindowSpec::new(3, vec!["a".into()], "label".into());
        spec.group_column = Some("g".into());
        let data = load_csv(f.path(), &spec).unwrap();
        // Group 1 has 2 rows (no window); group 2 has 3 rows (one window).
        assert_eq!(data.n(), 1);
        assert_eq!(data.y, vec![50.0]);
    }

    #[test]
    fn windows_never_cross_groups() {
        let f = write_csv(
            "g,a,label\n1,1,10\n1,2,20\n1,3,30\n1,4,40\n2,5,50\n2,6,60\n2,7,70\n2,8,80\n",
        );
        let mut spec = WindowSpec::new(4, vec!["a".into()], "label".into());
        spec.group_column = Some("g".into());
        let data = load_csv(f.path(), &spec).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.x.row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(data.x.row(1).to_vec(), vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn missing_column_reported() {
        let f = write_csv("a,label\n1,2\n");
        let spec = WindowSpec::new(1, vec!["b".into()], "label".into());
        assert!(matches!(
            load_csv(f.path(), &spec),
            Err(Error::MissingColumn(c)) if c == "b"
        ));
    }

    #[test]
    fn non_numeric_cell_reports_record() {
        let f = write_csv("a,label\n1,2\nbad,3\n");
        let spec = WindowSpec::new(1, vec!["a".into()], "label".into());
        match load_csv(f.path(), &spec) {
            Err(Error::NonNumeric { column, record, value }) => {
                assert_eq!(column, "a");
                assert_eq!(record, 2);
                assert_eq!(value, "bad");
            }
            other => panic!("expected NonNumeric, got {other:?}"),
        }
    }

    #[test]
    fn window_longer_than_every_group_errors() {
        let f = write_csv("a,label\n1,2\n3,4\n");
        let spec = WindowSpec::new(5, vec!["a".into()], "label".into());
        assert!(matches!(
            load_csv(f.path(), &spec),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn standardize_fit_apply() {
        let x = ndarray::arr2(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0]]);
        let stats = fit_standardize(x.view()).unwrap();
        assert!(!stats.constant[0]);
        assert!(stats.constant[1]);
        let z = apply_standardize(&stats, x.view()).unwrap();
        // Non-constant column: mean 0, std 1.
        let col0: Vec<f64> = z.column(0).to_vec();
        let m = crate::stats::mean(&col0);
        let s = crate::stats::std_dev(&col0);
        assert!(m.abs() < 1e-9);
        assert!((s - 1.0).abs() < 1e-9);
        // Constant column passes through.
        assert_eq!(z.column(1).to_vec(), vec![5.0; 4]);
    }

    #[test]
    fn standardize_preserves_shift_of_new_data() {
        let x = ndarray::arr2(&[[0.0], [1.0], [2.0], [3.0]]);
        let stats = fit_standardize(x.view()).unwrap();
        let shifted = x.mapv(|v| v + 2.0);
        let z = apply_standardize(&stats, shifted.view()).unwrap();
        let col: Vec<f64> = z.column(0).to_vec();
        let m = crate::stats::mean(&col);
        assert!(m > 1.0, "shift must remain visible, mean {m}");
    }

    #[test]
    fn windows_cache_round_trip() {
        let data = Dataset {
            x: ndarray::arr2(&[[0.125, -3.5], [7.25, 0.0625]]),
            y: vec![1.5, -2.25],
            role: DatasetRole::Source,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.txt");
        save_windows(&data, &path).unwrap();
        let loaded = load_windows(&path).unwrap();
        assert_eq!(loaded.x, data.x);
        assert_eq!(loaded.y, data.y);
    }

    proptest! {
        #[test]
        fn window_count_matches_enumeration(
            lens in proptest::collection::vec(0usize..12, 1..5),
            window in 1usize..6,
            stride in 1usize..4,
        ) {
            for &len in &lens {
                // Brute-force slide over positions.
                let mut count = 0;
                let mut start = 0;
                while start + window <= len {
                    count += 1;
                    start += stride;
                }
                prop_assert_eq!(windows_in_group(len, window, stride), count);
            }
        }
    }
}
