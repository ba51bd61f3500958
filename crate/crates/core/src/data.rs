//! Synthetic datasets with known feature provenance, CSV I/O and vertical
//! partitioning.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Informative,
    Redundant,
    Noisy,
    /// Loaded from a file without provenance metadata.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VflDataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub kinds: Vec<FeatureKind>,
    pub names: Vec<String>,
    pub task: Task,
}

impl VflDataset {
    pub fn new(x: Matrix, y: Vec<f64>, provenance: Vec<Provenance>, kinds: Vec<FeatureKind>, task: Task) -> Result<Self> {
        if y.len() != x.rows {
            return Err(Error::shape(format!("{} labels", x.rows), y.len()));
        }
        if provenance.len() != x.cols || kinds.len() != x.cols {
            return Err(Error::shape(format!("{} feature tags", x.cols), provenance.len().min(kinds.len())));
        }
        if let Task::Classification { classes } = task {
            if let Some(bad) = y.iter().find(|&&v| v < 0.0 || v.fract() != 0.0 || v as usize >= classes) {
                return Err(Error::Data(format!("label {bad} is not a class in 0..{classes}")));
            }
        }
        let names = (0..x.cols).map(|j| format!("f{j}")).collect();
        Ok(VflDataset {
            x,
            y,
            provenance,
            kinds,
            names,
            task,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.rows
    }

    pub fn n_features(&self) -> usize {
        self.x.cols
    }

    pub fn classes(&self) -> Option<usize> {
        match self.task {
            Task::Classification { classes } => Some(classes),
            Task::Regression => None,
        }
    }

    pub fn informative_mask(&self) -> Vec<bool> {
        self.provenance.iter().map(|&p| p == Provenance::Informative).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> VflDataset {
        VflDataset {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            ..self.clone()
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> VflDataset {
        VflDataset {
            x: self.x.select_columns(cols),
            y: self.y.clone(),
            provenance: cols.iter().map(|&c| self.provenance[c]).collect(),
            kinds: cols.iter().map(|&c| self.kinds[c]).collect(),
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
            task: self.task,
        }
    }

    /// Shuffled split into `(train, test)` with `round(test_fraction * N)` test rows.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(VflDataset, VflDataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.n_samples()).collect();
        idx.shuffle(&mut stream(seed, Stream::Data));
        let n_test = (test_fraction * self.n_samples() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((self.select_rows(train), self.select_rows(test)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MadelonSpec {
    pub n_informative: usize,
    #[serde(default)]
    pub n_redundant: usize,
    #[serde(default)]
    pub n_noisy: usize,
    pub n_samples: usize,
    #[serde(default = "default_class_sep")]
    pub class_sep: f64,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_clusters")]
    pub clusters_per_class: usize,
}

fn default_class_sep() -> f64 {
    2.0
}
fn default_classes() -> usize {
    2
}
fn default_clusters() -> usize {
    2
}

impl Default for MadelonSpec {
    fn default() -> Self {
        MadelonSpec {
            n_informative: 5,
            n_redundant: 5,
            n_noisy: 40,
            n_samples: 1000,
            class_sep: default_class_sep(),
            n_classes: default_classes(),
            clusters_per_class: default_clusters(),
        }
    }
}

/// Classification data in the MADELON style: Gaussian clusters centred on
/// distinct hypercube vertices (scaled by `class_sep`), several clusters per
/// class, redundant columns as unit-norm combinations of the informative
/// ones, and independent standard-normal noise columns. Columns are shuffled.
pub fn gen_madelon_like(spec: &MadelonSpec, seed: u64) -> Result<VflDataset> {
    if spec.n_informative == 0 {
        return Err(Error::Config("need at least one informative feature".into()));
    }
    if spec.n_classes < 2 || spec.clusters_per_class == 0 {
        return Err(Error::Config("need at least two classes and one cluster per class".into()));
    }
    let n_clusters = spec.n_classes * spec.clusters_per_class;
    if spec.n_informative < 64 && (1u64 << spec.n_informative) < n_clusters as u64 {
        return Err(Error::Config(format!(
            "{} informative features give fewer than {n_clusters} hypercube vertices",
            spec.n_informative
        )));
    }
    let mut rng = stream(seed, Stream::Data);
    let k = spec.n_informative;

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(n_clusters);
    while centroids.len() < n_clusters {
        let v: Vec<f64> = (0..k)
            .map(|_| if rng.random::<bool>() { spec.class_sep } else { -spec.class_sep })
            .collect();
        if !centroids.contains(&v) {
            centroids.push(v);
        }
    }

    let n = spec.n_samples;
    let d = k + spec.n_redundant + spec.n_noisy;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        let cluster = i % n_clusters;
        let class = cluster % spec.n_classes;
        let inf: Vec<f64> = centroids[cluster]
            .iter()
            .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
            .collect();
        rows.push((inf, class as f64));
    }
    rows.shuffle(&mut rng);

    let mut mix = Matrix::zeros(spec.n_redundant, k);
    for r in 0..spec.n_redundant {
        let coef: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = coef.iter().map(|c| c * c).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (c, v) in mix.row_mut(r).iter_mut().zip(coef) {
            *c = v / norm;
        }
    }

    let mut provenance = vec![Provenance::Informative; k];
    provenance.extend(std::iter::repeat_n(Provenance::Redundant, spec.n_redundant));
    provenance.extend(std::iter::repeat_n(Provenance::Noisy, spec.n_noisy));
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);

    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for (i, (inf, label)) in rows.into_iter().enumerate() {
        let mut full = Vec::with_capacity(d);
        full.extend_from_slice(&inf);
        full.extend(mix.matvec(&inf)?);
        full.extend((0..spec.n_noisy).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let out = x.row_mut(i);
        for (dst, &src) in out.iter_mut().zip(&perm) {
            *dst = full[src];
        }
        y.push(label);
    }
    let provenance = perm.iter().map(|&p| provenance[p]).collect();
    VflDataset::new(
        x,
        y,
        provenance,
        vec![FeatureKind::Continuous; d],
        Task::Classification {
            classes: spec.n_classes,
        },
    )
}

/// `10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5`
pub fn friedman_target(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Regression data with five informative uniform features feeding the
/// Friedman #1 target and `n_noisy` irrelevant uniform features. Columns are
/// shuffled.
pub fn gen_friedman_like(n_noisy: usize, n_samples: usize, noise_std: f64, seed: u64) -> Result<VflDataset> {
    if n_samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let mut rng = stream(seed, Stream::Data);
    let d = 5 + n_noisy;
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let mut x = Matrix::zeros(n_samples, d);
    let mut y = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let full: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let noise: f64 = rng.sample(StandardNormal);
        y.push(friedman_target(&full[..5]) + noise_std * noise);
        for (dst, &src) in x.row_mut(i).iter_mut().zip(&perm) {
            *dst = full[src];
        }
    }
    let provenance = perm
        .iter()
        .map(|&p| if p < 5 { Provenance::Informative } else { Provenance::Noisy })
        .collect();
    VflDataset::new(x, y, provenance, vec![FeatureKind::Continuous; d], Task::Regression)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    Random,
    Contiguous,
}

/// Feature indices owned by each client, each list sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalPartition {
    pub features: Vec<Vec<usize>>,
}

impl VerticalPartition {
    pub fn clients(&self) -> usize {
        self.features.len()
    }

    pub fn views(&self, ds: &VflDataset) -> Vec<Matrix> {
        self.features.iter().map(|f| ds.x.select_columns(f)).collect()
    }

    /// Maps per-client vectors back into global feature order.
    pub fn scatter<T: Clone + Default>(&self, per_client: &[Vec<T>], d: usize) -> Vec<T> {
        let mut out = vec![T::default(); d];
        for (idx, vals) in self.features.iter().zip(per_client) {
            for (&j, v) in idx.iter().zip(vals) {
                out[j] = v.clone();
            }
        }
        out
    }
}

pub fn partition_vertical(d: usize, m: usize, strategy: PartitionStrategy, seed: u64) -> Result<VerticalPartition> {
    if m == 0 || m > d {
        return Err(Error::Config(format!("cannot split {d} features across {m} clients")));
    }
    let mut order: Vec<usize> = (0..d).collect();
    if strategy == PartitionStrategy::Random {
        order.shuffle(&mut stream(seed, Stream::Data));
    }
    let mut features = Vec::with_capacity(m);
    let mut start = 0;
    for c in 0..m {
        let size = d / m + usize::from(c < d % m);
        let mut part = order[start..start + size].to_vec();
        part.sort_unstable();
        features.push(part);
        start += size;
    }
    Ok(VerticalPartition { features })
}

/// Sidecar metadata written next to a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvMeta {
    task: Task,
    provenance: BTreeMap<String, Provenance>,
    kinds: BTreeMap<String, FeatureKind>,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

/// Writes a header row, one row per sample with the label in a final
/// `label` column, and a `<path>.provenance.json` sidecar.
pub fn save_csv(ds: &VflDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = ds.names.iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    for r in 0..ds.n_samples() {
        let mut rec: Vec<String> = ds.x.row(r).iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{:?}", ds.y[r]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = CsvMeta {
        task: ds.task,
        provenance: ds.names.iter().cloned().zip(ds.provenance.iter().copied()).collect(),
        kinds: ds.names.iter().cloned().zip(ds.kinds.iter().copied()).collect(),
    };
    fs::write(meta_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Reads a CSV with a header row. Without a sidecar, provenance is
/// `Unknown`, kinds come from `kinds` (or default to continuous) and
/// integral non-negative labels make a classification task.
pub fn load_csv(path: &Path, label_column: &str, kinds: Option<&[FeatureKind]>) -> Result<VflDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("no label column {label_column:?} in {}", path.display())))?;
    let names: Vec<String> = header.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.clone()).collect();
    let d = names.len();
    let mut data = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() != header.len() {
            return Err(Error::Data(format!("row {row} has {} fields, header has {}", rec.len(), header.len())));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("row {row}, column {:?}: {cell:?} is not a number", header[c])))?;
            if c == label_idx {
                y.push(v);
            } else {
                data.push(v);
            }
        }
    }
    let n = y.len();
    let x = Matrix::from_vec(n, d, data)?;

    let meta_file = meta_path(path);
    let (provenance, kinds, task) = if meta_file.exists() {
        let meta: CsvMeta = serde_json::from_slice(&fs::read(&meta_file)?)?;
        let prov = names
            .iter()
            .map(|n| meta.provenance.get(n).copied().unwrap_or(Provenance::Unknown))
            .collect();
        let kinds = names
            .iter()
            .map(|n| meta.kinds.get(n).copied().unwrap_or(FeatureKind::Continuous))
            .collect();
        (prov, kinds, meta.task)
    } else {
        let kinds = match kinds {
            Some(k) if k.len() == d => k.to_vec(),
            Some(k) => return Err(Error::shape(format!("{d} feature kinds"), k.len())),
            None => vec![FeatureKind::Continuous; d],
        };
        let task = if y.iter().all(|v| *v >= 0.0 && v.fract() == 0.0) {
            let classes = y.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
            Task::Classification { classes }
        } else {
            Task::Regression
        };
        (vec![Provenance::Unknown; d], kinds, task)
    };
    let mut ds = VflDataset::new(x, y, provenance, kinds, task)?;
    ds.names = names;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain logistic regression by full-batch gradient descent; returns
    /// training accuracy. Reference classifier for provenance checks.
    fn logistic_train_acc(x: &Matrix, y: &[f64], eval: Option<(&Matrix, &[f64])>) -> f64 {
        let d = x.cols;
        let mut w = vec![0.0; d + 1];
        for _ in 0..500 {
            let mut g = vec![0.0; d + 1];
            for r in 0..x.rows {
                let z: f64 = w[d] + x.row(r).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let p = crate::nn::layer::sigmoid(z);
                let e = p - y[r];
                for j in 0..d {
                    g[j] += e * x.get(r, j);
                }
                g[d] += e;
            }
            for (wj, gj) in w.iter_mut().zip(&g) {
                *wj -= 0.5 * gj / x.rows as f64;
            }
        }
        let (ex, ey) = eval.unwrap_or((x, y));
        let correct = (0..ex.rows)
            .filter(|&r| {
                let z: f64 = w[d] + ex.row(r).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                (z > 0.0) == (ey[r] > 0.5)
            })
            .count();
        correct as f64 / ex.rows as f64
    }

    fn columns_with(ds: &VflDataset, tag: Provenance) -> Vec<usize> {
        (0..ds.n_features()).filter(|&j| ds.provenance[j] == tag).collect()
    }

    #[test]
    fn madelon_counts_and_determinism() {
        let spec = MadelonSpec::default();
        let a = gen_madelon_like(&spec, 7).unwrap();
        let b = gen_madelon_like(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_features(), 50);
        assert_eq!(columns_with(&a, Provenance::Informative).len(), 5);
        assert_eq!(columns_with(&a, Provenance::Redundant).len(), 5);
        assert_ne!(a, gen_madelon_like(&spec, 8).unwrap());
        assert!(a.y.iter().filter(|&&v| v == 1.0).count() == 500);
    }

    #[test]
    fn redundant_columns_are_combinations_of_informative() {
        let ds = gen_madelon_like(&MadelonSpec::default(), 3).unwrap();
        let inf = ds.select_columns(&columns_with(&ds, Provenance::Informative));
        let red = ds.select_columns(&columns_with(&ds, Provenance::Redundant));
        // Least squares of each redundant column on the informative block
        // must leave no residual.
        for j in 0..red.n_features() {
            let target: Vec<f64> = (0..ds.n_samples()).map(|r| red.x.get(r, j)).collect();
            let coef = least_squares(&inf.x, &target);
            let worst = (0..ds.n_samples())
                .map(|r| (crate::nn::matrix::dot(inf.x.row(r), &coef) - target[r]).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-9, "column {j}: residual {worst}");
            let norm = coef.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    fn least_squares(a: &Matrix, b: &[f64]) -> Vec<f64> {
        // Normal equations, solved by Gaussian elimination with pivoting.
        let k = a.cols;
        let mut m = vec![vec![0.0; k + 1]; k];
        for r in 0..a.rows {
            for i in 0..k {
                for j in 0..k {
                    m[i][j] += a.get(r, i) * a.get(r, j);
                }
                m[i][k] += a.get(r, i) * b[r];
            }
        }
        for col in 0..k {
            let piv = (col..k).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
            m.swap(col, piv);
            for row in 0..k {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for c in col..=k {
                        m[row][c] -= f * m[col][c];
                    }
                }
            }
        }
        (0..k).map(|i| m[i][k] / m[i][i]).collect()
    }

    #[test]
    fn madelon_signal_lives_in_informative_columns() {
        let spec = MadelonSpec {
            n_redundant: 0,
            n_noisy: 45,
            ..MadelonSpec::default()
        };
        let ds = gen_madelon_like(&spec, 11).unwrap();
        let inf = ds.select_columns(&columns_with(&ds, Provenance::Informative));
        let noisy = ds.select_columns(&columns_with(&ds, Provenance::Noisy));
        let acc_inf = logistic_train_acc(&inf.x, &inf.y, None);
        assert!(acc_inf >= 0.9, "informative-only accuracy {acc_inf}");
        // 45 noise columns overfit the training rows a little, so judge the
        // noise-only model on held-out rows.
        let (ntrain, ntest) = noisy.split(0.3, 1).unwrap();
        let acc_noisy = logistic_train_acc(&ntrain.x, &ntrain.y, Some((&ntest.x, &ntest.y)));
        assert!((acc_noisy - 0.5).abs() < 0.08, "noise-only accuracy {acc_noisy}");

        // Zeroing the noisy columns costs less than two points on held-out data.
        let (train, test) = ds.split(0.2, 1).unwrap();
        let mut zeroed = test.clone();
        let mut zeroed_train = train.clone();
        for j in columns_with(&ds, Provenance::Noisy) {
            for r in 0..zeroed.n_samples() {
                zeroed.x.set(r, j, 0.0);
            }
            for r in 0..zeroed_train.n_samples() {
                zeroed_train.x.set(r, j, 0.0);
            }
        }
        let all = logistic_train_acc(&train.x, &train.y, Some((&test.x, &test.y)));
        let clean = logistic_train_acc(&zeroed_train.x, &zeroed_train.y, Some((&zeroed.x, &zeroed.y)));
        assert!(clean > all - 0.02, "zeroing noise: {clean} vs {all}");
    }

    #[test]
    fn separable_without_noise() {
        let spec = MadelonSpec {
            n_informative: 3,
            n_redundant: 0,
            n_noisy: 0,
            n_samples: 400,
            class_sep: 6.0,
            ..MadelonSpec::default()
        };
        let ds = gen_madelon_like(&spec, 2).unwrap();
        assert!(logistic_train_acc(&ds.x, &ds.y, None) > 0.97);
    }

    #[test]
    fn friedman_formula_and_generator() {
        let x = [0.5; 5];
        assert!((friedman_target(&x) - 14.5710678).abs() < 1e-7);
        let mut x3 = [0.2, 0.9, 0.5, 0.1, 0.3];
        let base = friedman_target(&x3);
        x3[2] = 0.5;
        assert_eq!(friedman_target(&x3), base);
        let ds = gen_friedman_like(45, 800, 0.0, 4).unwrap();
        assert_eq!(ds.n_features(), 50);
        assert_eq!(ds.task, Task::Regression);
        assert_eq!(columns_with(&ds, Provenance::Informative).len(), 5);
        assert_eq!(gen_friedman_like(45, 800, 0.0, 4).unwrap(), ds);
        assert!(ds.x.data.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn friedman_duplicate_rows_give_duplicate_targets() {
        let ds = gen_friedman_like(3, 20, 0.0, 9).unwrap();
        let dup = ds.select_rows(&[4, 4]);
        assert_eq!(dup.y[0], dup.y[1]);
    }

    #[test]
    fn partitions() {
        let p = partition_vertical(4, 2, PartitionStrategy::Contiguous, 0).unwrap();
        assert_eq!(p.features, vec![vec![0, 1], vec![2, 3]]);
        let a = partition_vertical(10, 3, PartitionStrategy::Random, 5).unwrap();
        assert_eq!(a, partition_vertical(10, 3, PartitionStrategy::Random, 5).unwrap());
        let mut all: Vec<usize> = a.features.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let one_each = partition_vertical(3, 3, PartitionStrategy::Random, 1).unwrap();
        assert!(one_each.features.iter().all(|f| f.len() == 1));
        assert!(matches!(partition_vertical(2, 3, PartitionStrategy::Contiguous, 0), Err(Error::Config(_))));
        assert_eq!(p.scatter(&[vec![1, 2], vec![3, 4]], 4), vec![1, 2, 3, 4]);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = gen_madelon_like(
            &MadelonSpec {
                n_samples: 30,
                ..MadelonSpec::default()
            },
            1,
        )
        .unwrap();
        save_csv(&ds, &path).unwrap();
        assert_eq!(load_csv(&path, "label", None).unwrap(), ds);

        fs::remove_file(meta_path(&path)).unwrap();
        let bare = load_csv(&path, "label", None).unwrap();
        assert!(bare.provenance.iter().all(|&p| p == Provenance::Unknown));
        assert_eq!(bare.x, ds.x);
        assert_eq!(bare.task, Task::Classification { classes: 2 });

        let ragged = dir.path().join("r.csv");
        fs::write(&ragged, "a,b,label\n1,2,0\n3,1\n").unwrap();
        let err = load_csv(&ragged, "label", None).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        let bad = dir.path().join("b.csv");
        fs::write(&bad, "a,label\nx,0\n").unwrap();
        assert!(matches!(load_csv(&bad, "label", None), Err(Error::Data(_))));
        assert!(matches!(load_csv(&bad, "target", None), Err(Error::Data(_))));
    }

    #[test]
    fn split_sizes() {
        let ds = gen_friedman_like(1, 100, 0.1, 1).unwrap();
        let (tr, te) = ds.split(0.2, 3).unwrap();
        assert_eq!((tr.n_samples(), te.n_samples()), (80, 20));
    }
}
