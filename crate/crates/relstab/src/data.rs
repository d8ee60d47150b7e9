//! Tabular dataset ingestion, synthetic generators, splitting, and
//! standardization.
//!
//! CSV input is comma-separated with one header row; the column layout is
//! described by a JSON sidecar schema (an array of `{name, kind, role}`
//! objects). Binary columns are declared by the schema, never inferred from
//! values.

use crate::error::{Error, Result};
use crate::seeding;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn continuous_feature(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            role: ColumnRole::Feature,
        }
    }

    pub fn binary_feature(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Binary,
            role: ColumnRole::Feature,
        }
    }

    pub fn label(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Binary,
            role: ColumnRole::Label,
        }
    }
}

/// Reads a schema sidecar: a JSON array of `{name, kind, role}`.
pub fn load_schema(path: &Path) -> Result<Vec<ColumnSpec>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// A feature matrix with integer labels and the schema that produced it.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// N×d feature matrix, columns in schema feature order.
    pub x: Array2<f64>,
    /// N labels in `0..n_classes`.
    pub y: Vec<usize>,
    /// Full schema, features plus the single label column.
    pub specs: Vec<ColumnSpec>,
    /// Set once a fitted standardizer has been applied.
    pub standardization: Option<Standardizer>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, specs: Vec<ColumnSpec>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        let labels = specs
            .iter()
            .filter(|s| s.role == ColumnRole::Label)
            .count();
        if labels != 1 {
            return Err(Error::BadLabelCount(labels));
        }
        let d = specs
            .iter()
            .filter(|s| s.role == ColumnRole::Feature)
            .count();
        if x.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.ncols(),
            });
        }
        Ok(Dataset {
            x,
            y,
            specs,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Number of classes, `max(y) + 1`.
    pub fn n_classes(&self) -> usize {
        self.y.iter().max().map_or(0, |m| m + 1)
    }

    /// Feature columns of the schema, in matrix column order.
    pub fn feature_specs(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.specs.iter().filter(|s| s.role == ColumnRole::Feature)
    }

    /// `true` for each feature column declared binary.
    pub fn binary_mask(&self) -> Vec<bool> {
        self.feature_specs()
            .map(|s| s.kind == ColumnKind::Binary)
            .collect()
    }

    /// Per-feature means, the Integrated Gradients / SHAP baseline.
    pub fn feature_means(&self) -> Array1<f64> {
        let n = self.n().max(1) as f64;
        let mut means = Array1::zeros(self.d());
        for row in self.x.rows() {
            means += &row;
        }
        means / n
    }

    fn select_rows(&self, idx: &[usize]) -> Dataset {
        let d = self.d();
        let mut x = Array2::zeros((idx.len(), d));
        let mut y = Vec::with_capacity(idx.len());
        for (out, &i) in idx.iter().enumerate() {
            x.row_mut(out).assign(&self.x.row(i));
            y.push(self.y[i]);
        }
        Dataset {
            x,
            y,
            specs: self.specs.clone(),
            standardization: self.standardization.clone(),
        }
    }
}

/// Loads a CSV file against a declared schema.
///
/// Extra CSV columns are ignored; every schema column must be present in the
/// header. Any unparseable or out-of-contract cell aborts the load with the
/// 1-based data row index and column name.
pub fn load_csv(path: &Path, schema: &[ColumnSpec]) -> Result<Dataset> {
    let labels = schema
        .iter()
        .filter(|s| s.role == ColumnRole::Label)
        .count();
    if labels != 1 {
        return Err(Error::BadLabelCount(labels));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let mut feature_cols = Vec::new();
    let mut label_col = 0;
    for spec in schema {
        let idx = position(&spec.name)?;
        match spec.role {
            ColumnRole::Feature => feature_cols.push((spec.clone(), idx)),
            ColumnRole::Label => label_col = idx,
        }
    }
    let label_name = schema
        .iter()
        .find(|s| s.role == ColumnRole::Label)
        .expect("label presence checked above")
        .name
        .clone();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = row_idx + 1;
        let parse = |col: &str, idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| Error::NonNumericCell {
                column: col.to_string(),
                row: row_no,
                value: raw.to_string(),
            })
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for (spec, idx) in &feature_cols {
            let v = parse(&spec.name, *idx)?;
            if spec.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryValue {
                    column: spec.name.clone(),
                    row: row_no,
                    value: record.get(*idx).unwrap_or("").to_string(),
                });
            }
            features.push(v);
        }
        let label = parse(&label_name, label_col)?;
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::NonNumericCell {
                column: label_name.clone(),
                row: row_no,
                value: record.get(label_col).unwrap_or("").to_string(),
            });
        }
        rows.push(features);
        y.push(label as usize);
    }

    let d = feature_cols.len();
    let mut x = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
    }
    Dataset::new(x, y, schema.to_vec())
}

/// Splits a dataset into train/val/test row partitions.
///
/// The permutation is a pure function of `seed`; sizes are
/// `floor(N·r_train)`, `floor(N·r_val)`, and the remainder.
pub fn split(
    ds: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }
    let n = ds.n();
    let n_train = (n as f64 * ratios.0).floor() as usize;
    let n_val = (n as f64 * ratios.1).floor() as usize;
    let n_test = n - n_train - n_val;
    if n < 10 || n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::SplitTooSmall { n, ratios });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeding::rng_from(seed));
    let train = ds.select_rows(&perm[..n_train]);
    let val = ds.select_rows(&perm[n_train..n_train + n_val]);
    let test = ds.select_rows(&perm[n_train + n_val..]);
    Ok((train, val, test))
}

/// How a single column is handled by a fitted [`Standardizer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnScale {
    /// Continuous column mapped to `(x − mean) / std`.
    Scaled { mean: f64, std: f64 },
    /// Binary column, passed through untouched.
    Binary,
    /// Continuous column with zero variance on the train split; flagged and
    /// passed through unchanged.
    Degenerate { mean: f64 },
}

/// Per-column affine transform fitted on a train split (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<ColumnScale>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Standardizer> {
        if train.n() < 2 {
            return Err(Error::InvalidParameter(format!(
                "standardizer needs at least 2 rows, got {}",
                train.n()
            )));
        }
        let n = train.n() as f64;
        let kinds: Vec<ColumnKind> = train.feature_specs().map(|s| s.kind).collect();
        let mut columns = Vec::with_capacity(train.d());
        for (j, kind) in kinds.iter().enumerate() {
            if *kind == ColumnKind::Binary {
                columns.push(ColumnScale::Binary);
                continue;
            }
            let col = train.x.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std == 0.0 {
                columns.push(ColumnScale::Degenerate { mean });
            } else {
                columns.push(ColumnScale::Scaled { mean, std });
            }
        }
        Ok(Standardizer { columns })
    }

    /// Columns flagged as degenerate (zero train-split variance).
    pub fn degenerate_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter_map(|(j, c)| matches!(c, ColumnScale::Degenerate { .. }).then_some(j))
            .collect()
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.check_width(ds)?;
        let mut out = ds.clone();
        for (j, scale) in self.columns.iter().enumerate() {
            if let ColumnScale::Scaled { mean, std } = scale {
                out.x.column_mut(j).mapv_inplace(|v| (v - mean) / std);
            }
        }
        out.standardization = Some(self.clone());
        Ok(out)
    }

    pub fn inverse_transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.check_width(ds)?;
        let mut out = ds.clone();
        for (j, scale) in self.columns.iter().enumerate() {
            if let ColumnScale::Scaled { mean, std } = scale {
                out.x.column_mut(j).mapv_inplace(|v| v * std + mean);
            }
        }
        out.standardization = None;
        Ok(out)
    }

    fn check_width(&self, ds: &Dataset) -> Result<()> {
        if ds.d() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                got: ds.d(),
            });
        }
        Ok(())
    }
}

fn two_feature_schema() -> Vec<ColumnSpec> {
    vec![
        ColumnSpec::continuous_feature("x0"),
        ColumnSpec::continuous_feature("x1"),
        ColumnSpec::label("label"),
    ]
}

/// Two concentric rings: `n/2` points near radius 1 (class 0) and `n/2` near
/// radius `factor` (class 1), evenly spaced angles, i.i.d. Gaussian noise of
/// `noise_std` added per coordinate.
pub fn make_circles(n: usize, noise_std: f64, factor: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "make_circles needs an even, positive n, got {n}"
        )));
    }
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "make_circles factor must lie in (0, 1), got {factor}"
        )));
    }
    let half = n / 2;
    let mut rng = seeding::rng_from(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..half {
        let theta = 2.0 * std::f64::consts::PI * (i as f64) / (half as f64);
        x[[i, 0]] = theta.cos();
        x[[i, 1]] = theta.sin();
        y.push(0);
        x[[half + i, 0]] = factor * theta.cos();
        x[[half + i, 1]] = factor * theta.sin();
        y.push(1);
    }
    for i in 0..n {
        for j in 0..2 {
            let g: f64 = rng.sample(StandardNormal);
            x[[i, j]] += noise_std * g;
        }
    }
    Dataset::new(x, y, two_feature_schema())
}

/// Two Gaussian blobs in 2-d centred at `(±separation/2, 0)`.
pub fn make_blobs(n: usize, separation: f64, std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "make_blobs needs an even, positive n, got {n}"
        )));
    }
    let half = n / 2;
    let mut rng = seeding::rng_from(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= half);
        let cx = if class == 0 {
            -separation / 2.0
        } else {
            separation / 2.0
        };
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        x[[i, 0]] = cx + std * gx;
        x[[i, 1]] = std * gy;
        y.push(class);
    }
    Dataset::new(x, y, two_feature_schema())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("relstab-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!(
            "t{}.csv",
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn schema_2c() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::continuous_feature("a"),
            ColumnSpec::continuous_feature("b"),
            ColumnSpec::label("y"),
        ]
    }

    #[test]
    fn load_csv_parses_small_file() {
        let path = write_temp("a,b,y\n1.0,2.0,0\n3.5,-1.0,1\n0.0,0.5,0\n");
        let ds = load_csv(&path, &schema_2c()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.x[[1, 0]], 3.5);
        assert_eq!(ds.y, vec![0, 1, 0]);
    }

    #[test]
    fn load_csv_rejects_non_binary_value() {
        let schema = vec![
            ColumnSpec::binary_feature("flag"),
            ColumnSpec::label("y"),
        ];
        let path = write_temp("flag,y\n0,0\n2,1\n");
        let err = load_csv(&path, &schema).unwrap_err();
        match err {
            Error::NonBinaryValue { column, row, .. } => {
                assert_eq!(column, "flag");
                assert_eq!(row, 2);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_csv_reports_missing_column() {
        let path = write_temp("a,y\n1.0,0\n");
        let err = load_csv(&path, &schema_2c()).unwrap_err();
        match err {
            Error::MissingColumn(name) => assert_eq!(name, "b"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_csv_reports_non_numeric_cell() {
        let path = write_temp("a,b,y\n1.0,oops,0\n");
        let err = load_csv(&path, &schema_2c()).unwrap_err();
        match err {
            Error::NonNumericCell { column, row, value } => {
                assert_eq!(column, "b");
                assert_eq!(row, 1);
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = make_circles(100, 0.1, 0.5, 3).unwrap();
        let (tr, va, te) = split(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((tr.n(), va.n(), te.n()), (80, 10, 10));
        let (tr2, _, _) = split(&ds, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(tr.x, tr2.x);
        assert_eq!(tr.y, tr2.y);
        let (tr3, _, _) = split(&ds, (0.8, 0.1, 0.1), 8).unwrap();
        assert_ne!(tr.x, tr3.x);
    }

    #[test]
    fn split_rejects_small_n() {
        let ds = make_circles(8, 0.0, 0.5, 0).unwrap();
        assert!(matches!(
            split(&ds, (0.8, 0.1, 0.1), 0),
            Err(Error::SplitTooSmall { .. })
        ));
    }

    #[test]
    fn standardizer_hand_values() {
        let x = ndarray::array![[0.0], [2.0]];
        let ds = Dataset::new(
            x,
            vec![0, 1],
            vec![
                ColumnSpec::continuous_feature("a"),
                ColumnSpec::label("y"),
            ],
        )
        .unwrap();
        let st = Standardizer::fit(&ds).unwrap();
        match &st.columns[0] {
            ColumnScale::Scaled { mean, std } => {
                assert_eq!(*mean, 1.0);
                assert_eq!(*std, 1.0);
            }
            other => panic!("unexpected scale: {other:?}"),
        }
        let out = st.transform(&ds).unwrap();
        assert_eq!(out.x[[0, 0]], -1.0);
        assert_eq!(out.x[[1, 0]], 1.0);
    }

    #[test]
    fn standardizer_flags_constant_column_and_skips_binary() {
        let x = ndarray::array![[5.0, 1.0], [5.0, 0.0], [5.0, 1.0]];
        let ds = Dataset::new(
            x.clone(),
            vec![0, 1, 0],
            vec![
                ColumnSpec::continuous_feature("c"),
                ColumnSpec::binary_feature("flag"),
                ColumnSpec::label("y"),
            ],
        )
        .unwrap();
        let st = Standardizer::fit(&ds).unwrap();
        assert_eq!(st.degenerate_columns(), vec![0]);
        assert_eq!(st.columns[1], ColumnScale::Binary);
        let out = st.transform(&ds).unwrap();
        assert_eq!(out.x, x);
    }

    #[test]
    fn standardize_then_invert_is_identity() {
        let ds = make_circles(40, 0.3, 0.4, 11).unwrap();
        let st = Standardizer::fit(&ds).unwrap();
        let fwd = st.transform(&ds).unwrap();
        let back = st.inverse_transform(&fwd).unwrap();
        for (a, b) in ds.x.iter().zip(back.x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_train_columns_have_unit_moments() {
        let ds = make_circles(200, 0.2, 0.5, 5).unwrap();
        let st = Standardizer::fit(&ds).unwrap();
        let out = st.transform(&ds).unwrap();
        let n = out.n() as f64;
        for j in 0..out.d() {
            let col = out.x.column(j);
            let mean = col.sum() / n;
            let std = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9, "col {j} mean {mean}");
            assert!((std - 1.0).abs() < 1e-9, "col {j} std {std}");
        }
    }

    #[test]
    fn circles_zero_noise_sits_on_radii() {
        let ds = make_circles(8, 0.0, 0.5, 9).unwrap();
        for i in 0..ds.n() {
            let r = (ds.x[[i, 0]].powi(2) + ds.x[[i, 1]].powi(2)).sqrt();
            let expect = if ds.y[i] == 0 { 1.0 } else { 0.5 };
            assert!((r - expect).abs() < 1e-12, "row {i}: r={r}");
        }
    }

    #[test]
    fn circles_noisy_radius_statistics() {
        let ds = make_circles(400, 0.05, 0.5, 13).unwrap();
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..ds.n() {
            if ds.y[i] == 0 {
                sum += (ds.x[[i, 0]].powi(2) + ds.x[[i, 1]].powi(2)).sqrt();
                count += 1.0;
            }
        }
        let mean_r = sum / count;
        assert!((0.97..=1.03).contains(&mean_r), "mean class-0 radius {mean_r}");
    }

    #[test]
    fn circles_deterministic_in_seed() {
        let a = make_circles(64, 0.05, 0.5, 21).unwrap();
        let b = make_circles(64, 0.05, 0.5, 21).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn circles_rejects_bad_factor() {
        assert!(make_circles(8, 0.0, 1.5, 0).is_err());
        assert!(make_circles(8, 0.0, 0.0, 0).is_err());
        assert!(make_circles(7, 0.0, 0.5, 0).is_err());
    }

    #[test]
    fn blobs_are_separated() {
        let ds = make_blobs(100, 4.0, 0.5, 2).unwrap();
        for i in 0..ds.n() {
            let expected = usize::from(ds.x[[i, 0]] > 0.0);
            assert_eq!(ds.y[i], expected, "row {i} at x0={}", ds.x[[i, 0]]);
        }
    }
}
