//! Datasets: CSV ingestion, preprocessing, splitting and synthetic generators.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::nn::Batch;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

/// Origin of a feature column; only numeric columns are standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    OneHot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub task: Task,
    pub feature_names: Vec<String>,
    pub column_kinds: Vec<ColumnKind>,
    pub target_name: String,
    /// Class labels in one-hot column order (classification only).
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Regression dataset with all-numeric features named `x0, x1, …`.
    pub fn regression(features: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        let m = features.ncols();
        let n = targets.len();
        Self {
            features,
            targets: DMatrix::from_column_slice(n, 1, targets.as_slice()),
            task: Task::Regression,
            feature_names: (0..m).map(|k| format!("x{k}")).collect(),
            column_kinds: vec![ColumnKind::Numeric; m],
            target_name: "y".into(),
            class_names: Vec::new(),
        }
        .validated()
    }

    /// Classification dataset from integer labels in `0..classes`.
    pub fn classification(features: DMatrix<f64>, labels: &[usize], classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        let m = features.ncols();
        let targets =
            DMatrix::from_fn(labels.len(), classes, |i, k| if labels[i] == k { 1.0 } else { 0.0 });
        Self {
            features,
            targets,
            task: Task::Classification { classes },
            feature_names: (0..m).map(|k| format!("x{k}")).collect(),
            column_kinds: vec![ColumnKind::Numeric; m],
            target_name: "label".into(),
            class_names: (0..classes).map(|k| k.to_string()).collect(),
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        let n = self.features.nrows();
        if n < 2 {
            return Err(Error::Data(format!("a dataset needs at least 2 rows, got {n}")));
        }
        if self.targets.nrows() != n {
            return Err(Error::mismatch("target rows", n, self.targets.nrows()));
        }
        if self.feature_names.len() != self.features.ncols()
            || self.column_kinds.len() != self.features.ncols()
        {
            return Err(Error::mismatch(
                "feature metadata",
                self.features.ncols(),
                self.feature_names.len(),
            ));
        }
        if !self.features.iter().chain(self.targets.iter()).all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite value in dataset".into()));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 || self.targets.ncols() != classes {
                return Err(Error::Data(format!(
                    "classification needs at least 2 one-hot target columns, got {}",
                    self.targets.ncols()
                )));
            }
            for (i, row) in self.targets.row_iter().enumerate() {
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != classes {
                    return Err(Error::Data(format!("target row {i} is not one-hot")));
                }
            }
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_width(&self) -> usize {
        self.features.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.targets.ncols()
    }

    /// Integer labels from the one-hot targets.
    pub fn labels(&self) -> Option<Vec<usize>> {
        match self.task {
            Task::Regression => None,
            Task::Classification { .. } => Some(
                self.targets
                    .row_iter()
                    .map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0))
                    .collect(),
            ),
        }
    }

    /// Copies the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            targets: self.targets.select_rows(rows),
            ..self.clone()
        }
    }

    pub fn batch(&self, rows: &[usize]) -> Result<Batch> {
        Batch::new(self.features.select_rows(rows), self.targets.select_rows(rows))
    }

    pub fn full_batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.targets.clone())
    }
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| {
        Error::Data(format!(
            "line {line}, column `{column}`: cannot parse `{cell}` as a number"
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!(
            "line {line}, column `{column}`: non-finite value `{cell}`"
        )));
    }
    Ok(v)
}

/// Distinct values of one column, in order of first appearance.
fn levels(rows: &[csv::StringRecord], col: usize) -> Vec<String> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for row in rows {
        let v = row.get(col).unwrap_or("").trim().to_string();
        if !seen.contains_key(&v) {
            seen.insert(v.clone(), out.len());
            out.push(v);
        }
    }
    out
}

/// Loads a headed CSV file.
///
/// Columns listed in `categoricals` are one-hot encoded with one column per
/// distinct value. Listing the target there makes the task classification.
pub fn load_csv(path: impl AsRef<Path>, target: &str, categoricals: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let index_of = |name: &str| headers.iter().position(|h| h == name);
    let target_idx = index_of(target)
        .ok_or_else(|| Error::Data(format!("target column `{target}` not found in {headers:?}")))?;
    for cat in categoricals {
        if index_of(cat).is_none() {
            return Err(Error::Data(format!("categorical column `{cat}` not found")));
        }
    }
    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "{} has {} data rows; at least 2 are required",
            path.display(),
            rows.len()
        )));
    }
    let is_cat = |col: usize| categoricals.iter().any(|c| c == &headers[col]);

    let mut feature_names = Vec::new();
    let mut column_kinds = Vec::new();
    let mut encoders: Vec<(usize, Option<Vec<String>>)> = Vec::new();
    for col in (0..headers.len()).filter(|&c| c != target_idx) {
        if is_cat(col) {
            let lv = levels(&rows, col);
            for v in &lv {
                feature_names.push(format!("{}={v}", headers[col]));
                column_kinds.push(ColumnKind::OneHot);
            }
            encoders.push((col, Some(lv)));
        } else {
            feature_names.push(headers[col].clone());
            column_kinds.push(ColumnKind::Numeric);
            encoders.push((col, None));
        }
    }

    let n = rows.len();
    let mut features = DMatrix::zeros(n, feature_names.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        let mut k = 0;
        for (col, enc) in &encoders {
            let cell = row.get(*col).unwrap_or("");
            match enc {
                None => {
                    features[(i, k)] = parse_cell(cell, line, &headers[*col])?;
                    k += 1;
                }
                Some(lv) => {
                    let hot = lv.iter().position(|v| v == cell.trim()).unwrap_or(0);
                    features[(i, k + hot)] = 1.0;
                    k += lv.len();
                }
            }
        }
    }

    let (targets, task, class_names) = if is_cat(target_idx) {
        let classes = levels(&rows, target_idx);
        let targets = DMatrix::from_fn(n, classes.len(), |i, k| {
            if rows[i].get(target_idx).unwrap_or("").trim() == classes[k] {
                1.0
            } else {
                0.0
            }
        });
        let task = Task::Classification {
            classes: classes.len(),
        };
        (targets, task, classes)
    } else {
        let mut t = DMatrix::zeros(n, 1);
        for (i, row) in rows.iter().enumerate() {
            t[(i, 0)] = parse_cell(row.get(target_idx).unwrap_or(""), i + 2, target)?;
        }
        (t, Task::Regression, Vec::new())
    };

    Dataset {
        features,
        targets,
        task,
        feature_names,
        column_kinds,
        target_name: target.to_string(),
        class_names,
    }
    .validated()
}

/// Writes features and the target (class name for classification) as CSV.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = ds.feature_names.clone();
    header.push(ds.target_name.clone());
    writer.write_record(&header)?;
    let labels = ds.labels();
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(match &labels {
            Some(l) => ds.class_names[l[i]].clone(),
            None => ds.targets[(i, 0)].to_string(),
        });
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-column affine transform fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; `None` marks columns left untouched.
    pub std: Vec<Option<f64>>,
}

const MIN_STD: f64 = 1e-12;

impl Standardizer {
    /// Fits on the numeric columns of `train`.
    pub fn fit(train: &Dataset) -> Self {
        let n = train.len() as f64;
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for (k, kind) in train.column_kinds.iter().enumerate() {
            let col = train.features.column(k);
            match kind {
                ColumnKind::Numeric => {
                    let mu = col.sum() / n;
                    let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                    mean.push(mu);
                    std.push(Some(var.sqrt()));
                }
                ColumnKind::OneHot => {
                    mean.push(0.0);
                    std.push(None);
                }
            }
        }
        Self { mean, std }
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.input_width() != self.mean.len() {
            return Err(Error::mismatch("feature columns", self.mean.len(), ds.input_width()));
        }
        let mut out = ds.clone();
        for (k, s) in self.std.iter().enumerate() {
            let Some(s) = *s else { continue };
            let mu = self.mean[k];
            for v in out.features.column_mut(k).iter_mut() {
                *v = if s < MIN_STD { 0.0 } else { (*v - mu) / s };
            }
        }
        Ok(out)
    }
}

/// Standardizes numeric features with statistics from `train` only.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    if train.feature_names != test.feature_names {
        return Err(Error::Data("train and test schemas differ".into()));
    }
    let st = Standardizer::fit(train);
    Ok((st.transform(train)?, st.transform(test)?, st))
}

/// Target scaling for regression; metrics are reported after undoing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.task != Task::Regression {
            return Err(Error::Data("target scaling applies to regression only".into()));
        }
        let col = train.targets.column(0);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            mean,
            std: if std < MIN_STD { 1.0 } else { std },
        })
    }

    pub fn transform(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        out.targets.apply(|v| *v = (*v - self.mean) / self.std);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Seeded shuffle, then `⌈N(1 − f)⌉` training rows and the rest for testing.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::Data("cannot split fewer than 2 rows".into()));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::config(
            "data.test_fraction",
            format!("must lie in (0, 1), got {}", spec.test_fraction),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    // The epsilon keeps e.g. 10 · 0.9 = 9.000000000000002 from rounding up.
    let n_train = ((n as f64 * (1.0 - spec.test_fraction)) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, n - 1);
    Ok((ds.select(&idx[..n_train]), ds.select(&idx[n_train..])))
}

/// Hidden two-layer ReLU network that generates regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    /// `hidden × m`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

/// Hidden width of the regression teacher.
pub const TEACHER_WIDTH: usize = 8;

impl Teacher {
    /// Random teacher whose output has roughly unit variance on `N(0, I)` inputs.
    pub fn random(m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ea_c4e7);
        let h = TEACHER_WIDTH;
        let mut sample = || -> f64 { StandardNormal.sample(&mut rng) };
        let w1 = DMatrix::from_fn(h, m, |_, _| sample() / (m as f64).sqrt());
        let b1 = DVector::from_fn(h, |_, _| 0.5 * sample());
        let w2 = DVector::from_fn(h, |_, _| sample());
        let b2 = 0.0;
        let mut teacher = Self { w1, b1, w2, b2 };
        // Normalize the output on a fixed probe sample.
        let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9_0be5);
        let probe = DMatrix::from_fn(4096, m, |_, _| StandardNormal.sample(&mut probe_rng));
        let out = teacher.predict(&probe);
        let mu = out.mean();
        let sd = (out.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
        let scale = if sd > MIN_STD { 1.0 / sd } else { 1.0 };
        teacher.w2 *= scale;
        teacher.b2 = -mu * scale;
        teacher
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let hidden = (x * self.w1.transpose()).map_with_location(|_, j, v| (v + self.b1[j]).max(0.0));
        hidden * &self.w2 + DVector::from_element(x.nrows(), self.b2)
    }
}

/// `N` samples with `x ~ N(0, I_m)` and `y = teacher(x) + N(0, noise_std²)`.
///
/// The teacher is [`Teacher::random`]`(m, seed)`, so its RMSE on the data is
/// about `noise_std`.
pub fn synth_regression(n: usize, m: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one feature".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid noise level {noise_std}")));
    }
    let teacher = Teacher::random(m, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
    let clean = teacher.predict(&x);
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        clean[i] + noise_std * e
    });
    Dataset::regression(x, y)
}

/// Gaussian clusters with unit covariance around centroids at distance
/// `separation` from the origin; labels uniform over `c` classes.
pub fn synth_classification(
    n: usize,
    m: usize,
    c: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if c < 2 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "need c >= 2 and m >= 1, got c={c}, m={m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = class_centroids(m, c, separation, seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let x = DMatrix::from_fn(n, m, |i, k| centroids[(labels[i], k)] + unit.sample(&mut rng));
    Dataset::classification(x, &labels, c)
}

/// Centroids used by [`synth_classification`], `c × m`.
pub fn class_centroids(m: usize, c: usize, separation: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a55);
    let mut out = DMatrix::from_fn(c, m, |_, _| StandardNormal.sample(&mut rng));
    for mut row in out.row_iter_mut() {
        let norm: f64 = row.norm();
        let norm = norm.max(MIN_STD);
        row *= separation / norm;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn temp_csv(name: &str, body: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("egn-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn categorical_column_full_one_hot() {
        let path = temp_csv("cat.csv", "a,color,y\n1.0,red,3\n2.0,blue,4\n3.5,red,5\n");
        let ds = load_csv(&path, "y", &["color".to_string()]).unwrap();
        assert_eq!(ds.input_width(), 3);
        assert_eq!(ds.feature_names, vec!["a", "color=red", "color=blue"]);
        assert_eq!(ds.features.row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.0, 1.0]);
        for k in 1..3 {
            assert_eq!(ds.column_kinds[k], ColumnKind::OneHot);
        }
        assert_eq!(ds.targets.column(0).as_slice(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn categorical_target_is_classification() {
        let path = temp_csv("cls.csv", "a,label\n1,cat\n2,dog\n3,cat\n4,bird\n");
        let ds = load_csv(&path, "label", &["label".to_string()]).unwrap();
        assert_eq!(ds.task, Task::Classification { classes: 3 });
        assert_eq!(ds.labels().unwrap(), vec![0, 1, 0, 2]);
        for row in ds.targets.row_iter() {
            assert_eq!(row.sum(), 1.0);
        }
    }

    #[test]
    fn missing_target_is_named() {
        let path = temp_csv("nt.csv", "a,b\n1,2\n3,4\n");
        let err = load_csv(&path, "price", &[]).unwrap_err().to_string();
        assert!(err.contains("price"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv("/definitely/not/here.csv", "y", &[]).unwrap_err();
        assert_eq!(err.kind(), "io");
    }

    #[test]
    fn bad_cells_report_line_and_column() {
        let path = temp_csv("bad.csv", "a,y\n1,2\noops,3\n");
        let err = load_csv(&path, "y", &[]).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("`a`"), "{err}");
        let path = temp_csv("nan.csv", "a,y\n1,2\n2,NaN\n");
        let err = load_csv(&path, "y", &[]).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("`y`"), "{err}");
        let path = temp_csv("inf.csv", "a,y\ninf,2\n2,1\n");
        assert!(load_csv(&path, "y", &[]).is_err());
    }

    #[test]
    fn too_few_rows() {
        let path = temp_csv("one.csv", "a,y\n1,2\n");
        assert!(load_csv(&path, "y", &[]).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let ds = synth_regression(50, 3, 0.1, 4).unwrap();
        let path = temp_csv("rt.csv", "");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, "y", &[]).unwrap();
        assert_eq!(back, ds);

        let cls = synth_classification(40, 2, 3, 2.0, 1).unwrap();
        write_csv(&cls, &path).unwrap();
        let back = load_csv(&path, "label", &["label".to_string()]).unwrap();
        assert_eq!(back.features, cls.features);
        // Class columns follow first appearance in the file.
        let relabel: Vec<usize> = back.class_names.iter().map(|c| c.parse().unwrap()).collect();
        let original = cls.labels().unwrap();
        let loaded: Vec<usize> = back.labels().unwrap().iter().map(|&k| relabel[k]).collect();
        assert_eq!(loaded, original);
    }

    fn numeric(rows: &[[f64; 2]]) -> Dataset {
        let x = DMatrix::from_fn(rows.len(), 2, |i, k| rows[i][k]);
        Dataset::regression(x, DVector::zeros(rows.len())).unwrap()
    }

    #[test]
    fn standardize_two_point_and_constant() {
        let train = numeric(&[[0.0, 5.0], [2.0, 5.0]]);
        let (tr, te, _) = standardize(&train, &train).unwrap();
        assert_eq!(tr.features.column(0).as_slice(), &[-1.0, 1.0]);
        assert_eq!(tr.features.column(1).as_slice(), &[0.0, 0.0]);
        assert_eq!(te, tr);
    }

    #[test]
    fn standardize_uses_train_statistics_only() {
        let train = numeric(&[[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]]);
        let test_a = numeric(&[[1.0, 1.0], [9.0, 2.0]]);
        let test_b = numeric(&[[100.0, -50.0], [7.0, 0.0]]);
        let (tr_a, _, st_a) = standardize(&train, &test_a).unwrap();
        let (tr_b, _, st_b) = standardize(&train, &test_b).unwrap();
        assert_eq!(tr_a, tr_b);
        assert_eq!(st_a, st_b);
    }

    #[test]
    fn one_hot_columns_are_not_scaled() {
        let path = temp_csv("oh.csv", "a,c,y\n1,u,0\n5,v,1\n9,u,0\n");
        let ds = load_csv(&path, "y", &["c".to_string()]).unwrap();
        let (tr, _, _) = standardize(&ds, &ds).unwrap();
        assert_eq!(tr.features.column(1), ds.features.column(1));
        assert_eq!(tr.features.column(2), ds.features.column(2));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = synth_regression(10, 2, 0.1, 0).unwrap();
        let spec = SplitSpec { test_fraction: 0.1, seed: 3 };
        let (tr, te) = split(&ds, spec).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        assert_eq!(split(&ds, spec).unwrap(), (tr, te));
        assert!(split(&ds, SplitSpec { test_fraction: 1.0, seed: 0 }).is_err());
    }

    #[test]
    fn teacher_rmse_matches_noise() {
        let noise = 0.1;
        let ds = synth_regression(20_000, 8, noise, 7).unwrap();
        let teacher = Teacher::random(8, 7);
        let pred = teacher.predict(&ds.features);
        let resid = pred - ds.targets.column(0);
        let rmse = (resid.norm_squared() / ds.len() as f64).sqrt();
        assert!((rmse - noise).abs() <= 0.1 * noise, "{rmse}");
        let y = ds.targets.column(0);
        let var = y.iter().map(|v| (v - y.mean()).powi(2)).sum::<f64>() / y.len() as f64;
        assert!(var > 0.5 && var < 2.0, "target variance {var}");
    }

    #[test]
    fn generators_are_reproducible() {
        assert_eq!(synth_regression(30, 4, 0.1, 2).unwrap(), synth_regression(30, 4, 0.1, 2).unwrap());
        assert_ne!(synth_regression(30, 4, 0.1, 2).unwrap(), synth_regression(30, 4, 0.1, 3).unwrap());
        assert_eq!(
            synth_classification(30, 4, 3, 1.0, 2).unwrap(),
            synth_classification(30, 4, 3, 1.0, 2).unwrap()
        );
    }

    #[test]
    fn binary_classes_are_balanced() {
        let ds = synth_classification(10_000, 3, 2, 1.0, 5).unwrap();
        let ones = ds.labels().unwrap().iter().filter(|&&l| l == 1).count() as f64;
        assert!((ones / 10_000.0 - 0.5).abs() <= 0.05);
    }

    #[test]
    fn well_separated_clusters_are_nearest_centroid_separable() {
        let (m, c, sep, seed) = (4, 5, 1e3, 9);
        let ds = synth_classification(500, m, c, sep, seed).unwrap();
        let centroids = class_centroids(m, c, sep, seed);
        let labels = ds.labels().unwrap();
        for (i, row) in ds.features.row_iter().enumerate() {
            let nearest = (0..c)
                .min_by(|&a, &b| {
                    let da = (row - centroids.row(a)).norm();
                    let db = (row - centroids.row(b)).norm();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(nearest, labels[i]);
        }
    }

    proptest! {
        #[test]
        fn split_preserves_rows(n in 2usize..60, f in 0.05f64..0.95, seed in 0u64..1000) {
            let ds = synth_regression(n, 2, 0.1, seed).unwrap();
            let (tr, te) = split(&ds, SplitSpec { test_fraction: f, seed }).unwrap();
            prop_assert_eq!(tr.len() + te.len(), n);
            prop_assert!(!tr.is_empty() && !te.is_empty());
            let key = |d: &Dataset| {
                let mut rows: Vec<Vec<u64>> = (0..d.len())
                    .map(|i| d.features.row(i).iter().chain(d.targets.row(i).iter()).map(|v| v.to_bits()).collect())
                    .collect();
                rows.sort();
                rows
            };
            let mut joined = key(&tr);
            joined.extend(key(&te));
            joined.sort();
            prop_assert_eq!(joined, key(&ds));
        }

        #[test]
        fn standardized_moments(seed in 0u64..1000, n in 3usize..200) {
            let ds = synth_regression(n, 3, 0.5, seed).unwrap();
            let (tr, _, _) = standardize(&ds, &ds).unwrap();
            for col in tr.features.column_iter() {
                let mu = col.sum() / n as f64;
                let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
                prop_assert!(mu.abs() <= 1e-12);
                prop_assert!((sd - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn one_hot_rows_sum_to_one(seed in 0u64..1000, c in 2usize..6) {
            let ds = synth_classification(50, 2, c, 1.0, seed).unwrap();
            for row in ds.targets.row_iter() {
                prop_assert_eq!(row.sum(), 1.0);
            }
        }
    }
}
