//! Synthetic data generation and real-dataset ingestion.
//!
//! Synthetic features are `x = U diag(sqrt(l)) z` with `z ~ N(0, I)`, so
//! `Cov(x) = U diag(l) U^T` with `l` evenly spaced in `[eigen_min, eigen_max]`
//! and `U` Haar-distributed. Responses are `x.theta* + N(0, sigma^2)` (linear)
//! or `Bernoulli(sigmoid(x.theta*))` (logistic).
//!
//! Real datasets are read from CSV or libsvm text, optionally one-hot encoded
//! and standardized, then split into train / init / test parts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, SymMatrix};
use crate::problems::{sigmoid, Batch};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
}

/// Gaussian-design regression model with a prescribed spectrum.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    d: usize,
    kind: ModelKind,
    eigenvalues: Vec<f64>,
    /// `U diag(sqrt(l))`, row-major and as a matrix.
    transform: Vec<f64>,
    transform_matrix: DMatrix<f64>,
    rotation: DMatrix<f64>,
    covariance: SymMatrix,
    theta_star: Vec<f64>,
    noise_sigma: f64,
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal(d: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

pub fn evenly_spaced(lo: f64, hi: f64, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![hi];
    }
    (0..d)
        .map(|i| lo + (hi - lo) * i as f64 / (d - 1) as f64)
        .collect()
}

impl SyntheticModel {
    /// Draws `U` and `theta* ~ N(0, I)` from `rng`.
    pub fn new(
        d: usize,
        eigen_min: f64,
        eigen_max: f64,
        noise_sigma: f64,
        kind: ModelKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        let theta_star = (0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>();
        Self::with_theta_star(d, eigen_min, eigen_max, noise_sigma, kind, theta_star, rng)
    }

    pub fn with_theta_star(
        d: usize,
        eigen_min: f64,
        eigen_max: f64,
        noise_sigma: f64,
        kind: ModelKind,
        theta_star: Vec<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if !(eigen_min > 0.0 && eigen_max >= eigen_min) {
            return Err(Error::Config(format!(
                "eigenvalue range [{eigen_min}, {eigen_max}] is invalid"
            )));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        if theta_star.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: theta_star.len(),
            });
        }
        let eigenvalues = evenly_spaced(eigen_min, eigen_max, d);
        let u = random_orthogonal(d, rng);
        let mut transform = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                transform[i * d + j] = u[(i, j)] * eigenvalues[j].sqrt();
            }
        }
        let transform_matrix = DMatrix::from_row_slice(d, d, &transform);
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigenvalues.clone()));
        let cov = &u * lambda * u.transpose();
        let covariance = SymMatrix::from_dmatrix(&((&cov + cov.transpose()) * 0.5))?;
        Ok(SyntheticModel {
            d,
            kind,
            eigenvalues,
            transform,
            transform_matrix,
            rotation: u,
            covariance,
            theta_star,
            noise_sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn condition_number(&self) -> f64 {
        self.eigenvalues[self.d - 1] / self.eigenvalues[0]
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// One feature vector; `z` is scratch space of length `d`.
    pub fn sample_features(&self, rng: &mut Rng, z: &mut [f64], x: &mut [f64]) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let d = self.d;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = dot(&self.transform[i * d..(i + 1) * d], z);
        }
    }

    pub fn sample_response(&self, rng: &mut Rng, x: &[f64]) -> f64 {
        let m = dot(x, &self.theta_star);
        let u = self.response_draw(rng);
        self.response(m, u)
    }

    fn response_draw(&self, rng: &mut Rng) -> f64 {
        match self.kind {
            ModelKind::Linear => rng.sample(StandardNormal),
            ModelKind::Logistic => rng.random::<f64>(),
        }
    }

    fn response(&self, margin: f64, draw: f64) -> f64 {
        match self.kind {
            ModelKind::Linear => margin + self.noise_sigma * draw,
            ModelKind::Logistic => {
                if draw < sigmoid(margin) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `b` samples. Draws are consumed per sample (features, then response
    /// noise) so the sample sequence does not depend on `b`; the feature
    /// transform is applied as one matrix product.
    pub fn sample_batch(&self, rng: &mut Rng, b: usize) -> Batch {
        let d = self.d;
        let mut z = vec![0.0; b * d];
        let mut draws = Vec::with_capacity(b);
        for i in 0..b {
            for zi in &mut z[i * d..(i + 1) * d] {
                *zi = rng.sample(StandardNormal);
            }
            draws.push(self.response_draw(rng));
        }
        // Column i of the d x b product is sample i, so the column-major
        // storage is the row-major feature block.
        let zt = DMatrix::from_vec(d, b, z);
        let xt = &self.transform_matrix * zt;
        let x: Vec<f64> = xt.data.into();
        let y = (0..b)
            .map(|i| self.response(dot(&x[i * d..(i + 1) * d], &self.theta_star), draws[i]))
            .collect();
        Batch::new(d, x, y).expect("synthetic batch is well formed")
    }
}

/// Single-pass stream of synthetic batches covering `n_samples` draws.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    model: SyntheticModel,
    rng: Rng,
    b: usize,
    remaining: usize,
    drop_last: bool,
}

impl SyntheticStream {
    pub fn new(model: SyntheticModel, rng: Rng, b: usize, n_samples: usize, drop_last: bool) -> Self {
        assert!(b >= 1, "batch size must be at least 1");
        SyntheticStream {
            model,
            rng,
            b,
            remaining: n_samples,
            drop_last,
        }
    }
}

impl Iterator for SyntheticStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.remaining == 0 || (self.drop_last && self.remaining < self.b) {
            return None;
        }
        let n = self.b.min(self.remaining);
        self.remaining -= n;
        Some(self.model.sample_batch(&mut self.rng, n))
    }
}

pub fn gen_synthetic(
    model: &SyntheticModel,
    rng: Rng,
    b: usize,
    n_samples: usize,
) -> SyntheticStream {
    SyntheticStream::new(model.clone(), rng, b, n_samples, true)
}

/// Consecutive disjoint blocks of an in-memory sample set; each sample is
/// visited at most once.
#[derive(Debug, Clone)]
pub struct Batcher<'a> {
    source: &'a Batch,
    b: usize,
    pos: usize,
    drop_last: bool,
}

pub fn batcher(source: &Batch, b: usize, drop_last: bool) -> Batcher<'_> {
    assert!(b >= 1, "batch size must be at least 1");
    Batcher {
        source,
        b,
        pos: 0,
        drop_last,
    }
}

impl Batcher<'_> {
    /// Start offset of the next block.
    pub fn position(&self) -> usize {
        self.pos
    }
}

impl Iterator for Batcher<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let n = self.source.len();
        if self.pos >= n {
            return None;
        }
        let end = (self.pos + self.b).min(n);
        if self.drop_last && end - self.pos < self.b {
            self.pos = n;
            return None;
        }
        let out = self.source.slice(self.pos, end);
        self.pos = end;
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Libsvm,
}

/// Loading and preprocessing options. Defaults reproduce the usual
/// benchmark protocol: 20% test, init set `max(pool/100, 2d)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub format: DataFormat,
    /// CSV label column index; negative counts from the end.
    pub label_column: i64,
    pub has_header: bool,
    /// Label value mapped to 1, every other value to 0. Without it labels
    /// must be `{0, 1}` or `{-1, 1}`.
    pub positive_label: Option<String>,
    pub one_hot: bool,
    pub standardize: bool,
    pub intercept: bool,
    pub test_fraction: f64,
    pub init_fraction: f64,
    /// Minimum init size as a multiple of the final dimension.
    pub init_min_per_dim: f64,
    /// libsvm feature count; inferred from the largest index when absent.
    pub libsvm_dim: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            format: DataFormat::Csv,
            label_column: -1,
            has_header: false,
            positive_label: None,
            one_hot: true,
            standardize: true,
            intercept: true,
            test_fraction: 0.2,
            init_fraction: 0.01,
            init_min_per_dim: 2.0,
            libsvm_dim: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub d: usize,
    pub n_train: usize,
    pub n_init: usize,
    pub n_test: usize,
    pub standardized: bool,
    pub intercept: bool,
    pub one_hot_columns: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Batch,
    pub init: Batch,
    pub test: Batch,
    pub meta: DatasetMeta,
    pub train_idx: Vec<usize>,
    pub init_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Split sizes `(train, init, test)` for `n` rows at dimension `d`:
/// `test = ceil(test_fraction n)`, `init = max(floor(init_fraction pool),
/// init_min_per_dim d)` capped so the train part keeps at least one row.
pub fn split_sizes(n: usize, d: usize, opts: &LoadOptions) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::Empty(format!("need at least 3 rows to split, got {n}")));
    }
    let test = ((opts.test_fraction * n as f64).ceil() as usize).clamp(1, n - 2);
    let pool = n - test;
    let by_fraction = (opts.init_fraction * pool as f64).floor() as usize;
    let by_dim = (opts.init_min_per_dim * d as f64).ceil() as usize;
    let init = by_fraction.max(by_dim).clamp(1, pool - 1);
    Ok((pool - init, init, test))
}

struct RawTable {
    columns: Vec<Vec<String>>,
    labels: Vec<String>,
    header: Option<Vec<String>>,
}

fn read_csv_table(path: &Path, opts: &LoadOptions) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = if opts.has_header {
        Some(reader.headers()?.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width: Option<usize> = header.as_ref().map(|h| h.len());
    let mut columns: Vec<Vec<String>> = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(k + 1 + opts.has_header as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                line,
                msg: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        if w < 2 {
            return Err(Error::Parse {
                line,
                msg: "need at least one feature and a label".into(),
            });
        }
        let label_col = if opts.label_column < 0 {
            (w as i64 + opts.label_column) as usize
        } else {
            opts.label_column as usize
        };
        if label_col >= w {
            return Err(Error::Config(format!("label column {} out of range", opts.label_column)));
        }
        if columns.is_empty() {
            columns = vec![Vec::new(); w - 1];
        }
        let mut c = 0;
        for (j, field) in rec.iter().enumerate() {
            if j == label_col {
                labels.push(field.to_owned());
            } else {
                columns[c].push(field.to_owned());
                c += 1;
            }
        }
    }
    Ok(RawTable {
        columns,
        labels,
        header,
    })
}

fn parse_label(raw: &str, line: usize, opts: &LoadOptions) -> Result<f64> {
    if let Some(pos) = &opts.positive_label {
        return Ok(if raw == pos { 1.0 } else { 0.0 });
    }
    match raw.parse::<f64>() {
        Ok(v) if v == 1.0 => Ok(1.0),
        Ok(v) if v == 0.0 || v == -1.0 => Ok(0.0),
        _ => Err(Error::Parse {
            line,
            msg: format!("unknown label value {raw:?} (set positive_label to map it)"),
        }),
    }
}

/// Parsed and encoded corpus, before splitting and standardization.
#[derive(Debug, Clone)]
pub struct ParsedDataset {
    name: String,
    d_raw: usize,
    rows: Vec<f64>,
    labels: Vec<f64>,
    /// Columns eligible for standardization.
    numeric: Vec<bool>,
    one_hot_columns: usize,
}

fn csv_to_dense(table: RawTable, opts: &LoadOptions) -> Result<ParsedDataset> {
    let n = table.labels.len();
    let first_line = 1 + opts.has_header as usize;
    let labels = table
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| parse_label(l, first_line + i, opts))
        .collect::<Result<Vec<_>>>()?;

    // Each source column expands to one numeric column or a block of indicators.
    enum Col {
        Numeric(Vec<f64>),
        Categorical(Vec<String>, BTreeMap<String, usize>),
    }
    let mut cols = Vec::with_capacity(table.columns.len());
    for (j, col) in table.columns.into_iter().enumerate() {
        let parsed: std::result::Result<Vec<f64>, usize> = col
            .iter()
            .enumerate()
            .map(|(i, v)| v.parse::<f64>().map_err(|_| i))
            .collect();
        match parsed {
            Ok(v) => {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Parse {
                        line: first_line + i,
                        msg: format!("non-finite value in column {j}"),
                    });
                }
                cols.push(Col::Numeric(v))
            }
            Err(i) if !opts.one_hot => {
                let name = table
                    .header
                    .as_ref()
                    .and_then(|h| h.get(j).cloned())
                    .unwrap_or_else(|| j.to_string());
                return Err(Error::Parse {
                    line: first_line + i,
                    msg: format!("non-numeric value {:?} in column {name}", col[i]),
                });
            }
            Err(_) => {
                let levels: BTreeSet<&String> = col.iter().collect();
                let map = levels
                    .into_iter()
                    .enumerate()
                    .map(|(k, s)| (s.clone(), k))
                    .collect();
                cols.push(Col::Categorical(col, map));
            }
        }
    }

    let mut numeric = Vec::new();
    let mut one_hot_columns = 0;
    for c in &cols {
        match c {
            Col::Numeric(_) => numeric.push(true),
            Col::Categorical(_, map) => {
                one_hot_columns += 1;
                numeric.extend(std::iter::repeat_n(false, map.len()));
            }
        }
    }
    let d_raw = numeric.len();
    let mut rows = vec![0.0; n * d_raw];
    let mut offset = 0;
    for c in &cols {
        match c {
            Col::Numeric(v) => {
                for i in 0..n {
                    rows[i * d_raw + offset] = v[i];
                }
                offset += 1;
            }
            Col::Categorical(v, map) => {
                for i in 0..n {
                    rows[i * d_raw + offset + map[&v[i]]] = 1.0;
                }
                offset += map.len();
            }
        }
    }
    Ok(ParsedDataset {
        name: String::new(),
        d_raw,
        rows,
        labels,
        numeric,
        one_hot_columns,
    })
}

fn read_libsvm<R: BufRead>(reader: R, opts: &LoadOptions) -> Result<ParsedDataset> {
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let label_raw = parts.next().unwrap();
        labels.push(parse_label(label_raw, line_no, opts)?);
        let mut row = Vec::new();
        for tok in parts {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("malformed feature {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature value {val:?}"),
            })?;
            if let Some(d) = opts.libsvm_dim {
                if idx > d {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("feature index {idx} exceeds dimension {d}"),
                    });
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        entries.push(row);
    }
    let d_raw = opts.libsvm_dim.unwrap_or(max_index);
    let n = entries.len();
    let mut rows = vec![0.0; n * d_raw];
    for (i, row) in entries.iter().enumerate() {
        for &(j, v) in row {
            rows[i * d_raw + j] = v;
        }
    }
    Ok(ParsedDataset {
        name: String::new(),
        d_raw,
        rows,
        labels,
        numeric: vec![true; d_raw],
        one_hot_columns: 0,
    })
}

impl ParsedDataset {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature count after encoding, before the intercept.
    pub fn raw_dim(&self) -> usize {
        self.d_raw
    }
}

pub fn parse_dataset(path: &Path, opts: &LoadOptions) -> Result<ParsedDataset> {
    let mut table = match opts.format {
        DataFormat::Csv => csv_to_dense(read_csv_table(path, opts)?, opts)?,
        DataFormat::Libsvm => {
            let f = std::fs::File::open(path)?;
            read_libsvm(std::io::BufReader::new(f), opts)?
        }
    };
    table.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(table)
}

/// Parses, encodes, splits (shuffled by `rng`), standardizes with
/// train+init statistics and appends the intercept column.
pub fn load_dataset(path: &Path, opts: &LoadOptions, rng: &mut Rng) -> Result<DatasetSplit> {
    split_dataset(&parse_dataset(path, opts)?, opts, rng)
}

pub fn split_dataset(table: &ParsedDataset, opts: &LoadOptions, rng: &mut Rng) -> Result<DatasetSplit> {
    let n = table.labels.len();
    let d_raw = table.d_raw;
    let d = d_raw + opts.intercept as usize;
    if d == 0 {
        return Err(Error::Empty("dataset has no features".into()));
    }
    let (n_train, n_init, n_test) = split_sizes(n, d, opts)?;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let train_idx = perm[..n_train].to_vec();
    let init_idx = perm[n_train..n_train + n_init].to_vec();
    let test_idx = perm[n_train + n_init..].to_vec();

    let mut mean = vec![0.0; d_raw];
    let mut scale = vec![1.0; d_raw];
    if opts.standardize {
        let fit: Vec<usize> = train_idx.iter().chain(&init_idx).cloned().collect();
        let m = fit.len() as f64;
        for j in 0..d_raw {
            if !table.numeric[j] {
                continue;
            }
            let mu = fit.iter().map(|&i| table.rows[i * d_raw + j]).sum::<f64>() / m;
            let var = fit
                .iter()
                .map(|&i| (table.rows[i * d_raw + j] - mu).powi(2))
                .sum::<f64>()
                / m;
            mean[j] = mu;
            scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
    }

    let assemble = |idx: &[usize]| -> Result<Batch> {
        let mut x = Vec::with_capacity(idx.len() * d);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            for j in 0..d_raw {
                x.push((table.rows[i * d_raw + j] - mean[j]) / scale[j]);
            }
            if opts.intercept {
                x.push(1.0);
            }
            y.push(table.labels[i]);
        }
        Batch::new(d, x, y)
    };

    Ok(DatasetSplit {
        train: assemble(&train_idx)?,
        init: assemble(&init_idx)?,
        test: assemble(&test_idx)?,
        meta: DatasetMeta {
            name: table.name.clone(),
            d,
            n_train,
            n_init,
            n_test,
            standardized: opts.standardize,
            intercept: opts.intercept,
            one_hot_columns: table.one_hot_columns,
        },
        train_idx,
        init_idx,
        test_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::io::Write;

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = rng::from_seed(1);
        for d in [1, 2, 7, 30] {
            let u = random_orthogonal(d, &mut rng);
            let err = (u.transpose() * &u - DMatrix::identity(d, d)).norm();
            assert!(err <= 1e-10, "d={d}: {err}");
        }
    }

    #[test]
    fn isotropic_model_has_identity_covariance() {
        let mut rng = rng::from_seed(2);
        let d = 4;
        let model = SyntheticModel::new(d, 1.0, 1.0, 1.0, ModelKind::Linear, &mut rng).unwrap();
        let n = 100_000;
        let batch = model.sample_batch(&mut rng, n);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let x = nalgebra::DVector::from_row_slice(batch.row(i));
            cov += &x * x.transpose();
        }
        cov /= n as f64;
        let rel = (cov - DMatrix::identity(d, d)).norm() / (d as f64).sqrt();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn logistic_labels_balanced_at_zero_parameter() {
        let mut rng = rng::from_seed(3);
        let model = SyntheticModel::with_theta_star(
            3,
            0.01,
            1.0,
            1.0,
            ModelKind::Logistic,
            vec![0.0; 3],
            &mut rng,
        )
        .unwrap();
        let batch = model.sample_batch(&mut rng, 100_000);
        let mean = batch.labels().iter().sum::<f64>() / 1e5;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn ill_conditioned_empirical_covariance() {
        let mut rng = rng::from_seed(4);
        let d = 10;
        let model = SyntheticModel::new(d, 1e-2, 1.0, 1.0, ModelKind::Linear, &mut rng).unwrap();
        assert!((model.condition_number() - 100.0).abs() < 1e-9);
        let n = 1_000_000;
        let mut acc = DMatrix::<f64>::zeros(d, d);
        let mut z = vec![0.0; d];
        let mut x = vec![0.0; d];
        for _ in 0..n {
            model.sample_features(&mut rng, &mut z, &mut x);
            let v = nalgebra::DVector::from_row_slice(&x);
            acc += &v * v.transpose();
        }
        acc /= n as f64;
        let sigma = model.covariance().to_dmatrix();
        let rel = (&acc - &sigma).norm() / sigma.norm();
        assert!(rel < 0.05, "relative covariance error {rel}");
        let eig = nalgebra::SymmetricEigen::new(acc);
        let cond = eig.eigenvalues.max() / eig.eigenvalues.min();
        assert!((cond - 100.0).abs() <= 20.0, "condition number {cond}");
    }

    #[test]
    fn batch_matches_per_sample_draws() {
        let mut rng = rng::from_seed(21);
        let model = SyntheticModel::new(7, 0.01, 1.0, 1.0, ModelKind::Linear, &mut rng).unwrap();
        let batch = model.sample_batch(&mut rng::from_seed(22), 5);
        let mut r = rng::from_seed(22);
        let (mut z, mut x) = (vec![0.0; 7], vec![0.0; 7]);
        for i in 0..5 {
            model.sample_features(&mut r, &mut z, &mut x);
            let y = model.sample_response(&mut r, &x);
            for j in 0..7 {
                assert!((x[j] - batch.row(i)[j]).abs() < 1e-12);
            }
            assert!((y - batch.labels()[i]).abs() < 1e-12);
        }
        // Splitting the stream into different batch sizes gives the same samples.
        let mut r = rng::from_seed(22);
        let a = model.sample_batch(&mut r, 2);
        let b = model.sample_batch(&mut r, 3);
        assert_eq!(a.row(1), batch.row(1));
        assert_eq!(b.row(2), batch.row(4));
    }

    #[test]
    fn batcher_counts() {
        let batch = Batch::new(1, (0..10).map(|v| v as f64).collect(), vec![0.0; 10]).unwrap();
        assert_eq!(batcher(&batch, 3, true).count(), 3);
        assert_eq!(batcher(&batch, 3, false).count(), 4);
        assert_eq!(batcher(&batch, 10, true).count(), 1);
        let seen: Vec<f64> = batcher(&batch, 3, false)
            .flat_map(|b| b.features().to_vec())
            .collect();
        assert_eq!(seen, (0..10).map(|v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn synthetic_stream_iterations() {
        let mut rng = rng::from_seed(5);
        let model = SyntheticModel::new(100, 0.01, 1.0, 1.0, ModelKind::Linear, &mut rng).unwrap();
        let stream = gen_synthetic(&model, rng::from_seed(6), 100, 10_000);
        assert_eq!(stream.count(), 100);
    }

    #[test]
    fn libsvm_line() {
        let opts = LoadOptions {
            format: DataFormat::Libsvm,
            libsvm_dim: Some(3),
            ..Default::default()
        };
        let t = read_libsvm("1 1:0.5 3:2.0\n".as_bytes(), &opts).unwrap();
        assert_eq!(t.rows, vec![0.5, 0.0, 2.0]);
        assert_eq!(t.labels, vec![1.0]);

        let err = read_libsvm("1 1:0.5\n0 x:2\n".as_bytes(), &opts);
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })));
        let err = read_libsvm("7 1:0.5\n".as_bytes(), &opts);
        assert!(matches!(err, Err(Error::Parse { line: 1, .. })));
    }

    fn write_tmp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_split_is_deterministic() {
        let f = write_tmp("1.0,2.0,0\n2.0,1.0,1\n3.0,0.5,1\n0.5,0.1,0\n1.5,2.5,1\n", ".csv");
        let opts = LoadOptions::default();
        let a = load_dataset(f.path(), &opts, &mut rng::from_seed(9)).unwrap();
        let b = load_dataset(f.path(), &opts, &mut rng::from_seed(9)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.init, b.init);
        assert_eq!(a.test, b.test);
        assert_eq!(a.meta.d, 3);
        assert_eq!(a.meta.n_train + a.meta.n_init + a.meta.n_test, 5);
        assert_eq!(a.meta.n_test, 1);
        let mut all: Vec<usize> = a.train_idx.iter().chain(&a.init_idx).chain(&a.test_idx).cloned().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let f = write_tmp("1.0,2.0,0\n2.0,1\n", ".csv");
        let err = load_dataset(f.path(), &LoadOptions::default(), &mut rng::from_seed(1));
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })), "{err:?}");

        let f = write_tmp("1.0,2.0,0\n2.0,1.0,5\n1,1,1\n", ".csv");
        let err = load_dataset(f.path(), &LoadOptions::default(), &mut rng::from_seed(1));
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })), "{err:?}");
    }

    #[test]
    fn csv_one_hot_and_positive_label() {
        let f = write_tmp(
            "cap,size,class\nx,1.0,e\ny,2.0,p\nx,3.0,p\nz,4.0,e\nx,5.0,e\ny,6.0,p\n",
            ".csv",
        );
        let opts = LoadOptions {
            has_header: true,
            positive_label: Some("p".into()),
            standardize: false,
            ..Default::default()
        };
        let s = load_dataset(f.path(), &opts, &mut rng::from_seed(2)).unwrap();
        // 3 indicators + 1 numeric + intercept
        assert_eq!(s.meta.d, 5);
        assert_eq!(s.meta.one_hot_columns, 1);
        for part in [&s.train, &s.init, &s.test] {
            for i in 0..part.len() {
                let r = part.row(i);
                assert_eq!(r[0] + r[1] + r[2], 1.0);
                assert_eq!(r[4], 1.0);
            }
        }
        let strict = LoadOptions {
            one_hot: false,
            ..opts
        };
        assert!(matches!(
            load_dataset(f.path(), &strict, &mut rng::from_seed(2)),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn standardization_uses_fit_rows_only() {
        let mut content = String::new();
        for i in 0..200 {
            content.push_str(&format!("{},{}\n", i as f64 * 0.5, i % 2));
        }
        let f = write_tmp(&content, ".csv");
        let s = load_dataset(f.path(), &LoadOptions::default(), &mut rng::from_seed(3)).unwrap();
        let fit: Vec<f64> = (0..s.train.len())
            .map(|i| s.train.row(i)[0])
            .chain((0..s.init.len()).map(|i| s.init.row(i)[0]))
            .collect();
        let m = fit.iter().sum::<f64>() / fit.len() as f64;
        let v = fit.iter().map(|x| (x - m).powi(2)).sum::<f64>() / fit.len() as f64;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_split_rule() {
        let opts = LoadOptions::default();
        // (total rows, dimension with intercept) -> (train, init, test)
        let cases = [
            (48_841, 98, (38_682, 390, 9_769)),
            (67_556, 85, (53_504, 540, 13_512)),
            (581_011, 55, (460_160, 4_648, 116_203)),
            (70_000, 785, (54_430, 1_570, 14_000)),
            (8_124, 95, (6_309, 190, 1_625)),
            (11_054, 39, (8_755, 88, 2_211)),
        ];
        for (n, d, expected) in cases {
            assert_eq!(split_sizes(n, d, &opts).unwrap(), expected, "n={n} d={d}");
        }
    }

    proptest::proptest! {
        #[test]
        fn split_sizes_partition(n in 3usize..200_000, d in 1usize..500, test in 0.01f64..0.9) {
            let opts = LoadOptions { test_fraction: test, ..LoadOptions::default() };
            let (tr, init, te) = split_sizes(n, d, &opts).unwrap();
            proptest::prop_assert_eq!(tr + init + te, n);
            proptest::prop_assert!(tr >= 1 && init >= 1 && te >= 1);
        }
    }
}
