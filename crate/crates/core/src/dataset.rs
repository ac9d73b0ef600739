//! Tabular data with a label column and a sensitive-attribute column.
//!
//! Besides the container itself this module holds the synthetic two-Gaussian
//! generator, CSV reading and writing, the `(y, z)` group index, the seeded
//! train/test split and the Cutting baseline.

use std::f64::consts::FRAC_PI_4;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::{self, Stream};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset must contain at least one row")]
    Empty,
    #[error("column length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("row {row}: {what} value {value} is outside the alphabet of size {size}")]
    OutOfAlphabet { row: usize, what: &'static str, value: usize, size: usize },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: cannot parse `{value}` as {expected}")]
    Parse { line: u64, column: String, value: String, expected: &'static str },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("{0}: file is empty")]
    EmptyFile(String),
    #[error("{0}: header present but no data rows")]
    NoRows(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("train fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("sensitive group z={0} has no rows")]
    EmptyGroup(usize),
}

/// Feature matrix plus label and sensitive-attribute columns.
///
/// Features are stored row-major. Labels range over `0..n_y` and sensitive
/// values over `0..n_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    features: Vec<f64>,
    labels: Vec<usize>,
    sensitive: Vec<usize>,
    n_y: usize,
    n_z: usize,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<usize>,
        sensitive: Vec<usize>,
        n_y: usize,
        n_z: usize,
    ) -> Result<Self, DatasetError> {
        let n = labels.len();
        let k = feature_names.len();
        if sensitive.len() != n {
            return Err(DatasetError::LengthMismatch { what: "sensitive", got: sensitive.len(), expected: n });
        }
        if features.len() != n * k {
            return Err(DatasetError::LengthMismatch { what: "features", got: features.len(), expected: n * k });
        }
        for (row, (&y, &z)) in labels.iter().zip(&sensitive).enumerate() {
            if y >= n_y {
                return Err(DatasetError::OutOfAlphabet { row, what: "label", value: y, size: n_y });
            }
            if z >= n_z {
                return Err(DatasetError::OutOfAlphabet { row, what: "sensitive", value: z, size: n_z });
            }
        }
        Ok(Self { feature_names, features, labels, sensitive, n_y, n_z })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_features();
        &self.features[i * k..(i + 1) * k]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn sensitive(&self, i: usize) -> usize {
        self.sensitive[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sensitive_values(&self) -> &[usize] {
        &self.sensitive
    }

    /// Rows at `indices`, in the given order, keeping both alphabets.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features());
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            feature_names: self.feature_names.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sensitive: indices.iter().map(|&i| self.sensitive[i]).collect(),
            n_y: self.n_y,
            n_z: self.n_z,
        }
    }

    /// Appends indicator columns for the sensitive attribute: one column per
    /// non-reference value `z = 1..n_z`. With a binary attribute this is the
    /// single column `z`.
    pub fn with_sensitive_indicators(&self) -> Dataset {
        let extra = self.n_z.saturating_sub(1);
        let mut feature_names = self.feature_names.clone();
        if extra == 1 {
            feature_names.push("z".into());
        } else {
            feature_names.extend((1..self.n_z).map(|v| format!("z={v}")));
        }
        let mut features = Vec::with_capacity(self.len() * (self.n_features() + extra));
        for i in 0..self.len() {
            features.extend_from_slice(self.row(i));
            features.extend((1..self.n_z).map(|v| if self.sensitive[i] == v { 1.0 } else { 0.0 }));
        }
        Dataset {
            feature_names,
            features,
            labels: self.labels.clone(),
            sensitive: self.sensitive.clone(),
            n_y: self.n_y,
            n_z: self.n_z,
        }
    }

    /// Writes the features in order, then the sensitive column, then the label.
    ///
    /// Floats use the shortest representation that parses back to the same
    /// value, so [`load_csv`] reproduces the dataset exactly.
    pub fn write_csv(
        &self,
        path: impl AsRef<Path>,
        label_column: &str,
        sensitive_column: &str,
    ) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let io_err = |source| DatasetError::Io { path: path.display().to_string(), source };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        let mut header = self.feature_names.join(",");
        if !header.is_empty() {
            header.push(',');
        }
        writeln!(out, "{header}{sensitive_column},{label_column}").map_err(io_err)?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            for v in self.row(i) {
                line.push_str(&format!("{v:?},"));
            }
            line.push_str(&format!("{},{}", self.sensitive[i], self.labels[i]));
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Bivariate normal distribution.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian2 {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Gaussian2 {
    pub const fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        Self { mean, cov }
    }

    fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let det = self.det();
        let dx = x[0] - self.mean[0];
        let dy = x[1] - self.mean[1];
        // inverse of [[a, b], [b, c]] is [[c, -b], [-b, a]] / det
        let q = (self.cov[1][1] * dx * dx - 2.0 * self.cov[0][1] * dx * dy + self.cov[0][0] * dy * dy) / det;
        -0.5 * q - (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln()
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.log_density(x).exp()
    }

    /// Maps a standard-normal pair through the Cholesky factor of the covariance.
    pub fn transform(&self, e: [f64; 2]) -> [f64; 2] {
        let l00 = self.cov[0][0].sqrt();
        let l10 = self.cov[1][0] / l00;
        let l11 = (self.cov[1][1] - l10 * l10).sqrt();
        [self.mean[0] + l00 * e[0], self.mean[1] + l10 * e[0] + l11 * e[1]]
    }
}

/// Class-conditional feature distribution for `y = 0`.
pub const NEGATIVE_CLASS: Gaussian2 = Gaussian2::new([-2.0, -2.0], [[10.0, 1.0], [1.0, 3.0]]);
/// Class-conditional feature distribution for `y = 1`.
pub const POSITIVE_CLASS: Gaussian2 = Gaussian2::new([2.0, 2.0], [[5.0, 1.0], [1.0, 5.0]]);

/// Direction of the π/4 rotation applied before scoring the sensitive attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZRotation {
    /// `x' = (x1 cos θ + x2 sin θ, -x1 sin θ + x2 cos θ)`: the row vector times
    /// the rotation matrix, as in the widely used reference generator.
    #[default]
    Clockwise,
    /// `x' = (x1 cos θ - x2 sin θ, x1 sin θ + x2 cos θ)`.
    CounterClockwise,
}

impl ZRotation {
    pub fn apply(self, x: [f64; 2], angle: f64) -> [f64; 2] {
        let (s, c) = angle.sin_cos();
        match self {
            ZRotation::Clockwise => [x[0] * c + x[1] * s, -x[0] * s + x[1] * c],
            ZRotation::CounterClockwise => [x[0] * c - x[1] * s, x[0] * s + x[1] * c],
        }
    }
}

/// Knobs of the synthetic generator that the defaults pin down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    /// `Pr(y = 1)`.
    pub positive_rate: f64,
    pub rotation: ZRotation,
    pub angle: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { positive_rate: 0.5, rotation: ZRotation::default(), angle: FRAC_PI_4 }
    }
}

/// `n` rows of the two-Gaussian synthetic task with a biased sensitive attribute.
pub fn gen_synthetic(n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    gen_synthetic_with(n, seed, &SyntheticConfig::default())
}

/// Labels, features and the sensitive attribute each come from their own
/// stream of `seed`: `y ~ Bernoulli(positive_rate)`, `x | y` from the class
/// Gaussian, and `z = 1` with probability `p1(x') / (p0(x') + p1(x'))` where
/// `x'` is `x` rotated by `angle`.
pub fn gen_synthetic_with(n: usize, seed: u64, cfg: &SyntheticConfig) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Empty);
    }
    let mut y_rng = rng::stream(seed, Stream::Labels);
    let mut x_rng = rng::stream(seed, Stream::Features);
    let mut z_rng = rng::stream(seed, Stream::Sensitive);

    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let mut sensitive = Vec::with_capacity(n);
    for _ in 0..n {
        let y = usize::from(y_rng.random_bool(cfg.positive_rate));
        let e = [x_rng.sample(StandardNormal), x_rng.sample(StandardNormal)];
        let x = if y == 1 { POSITIVE_CLASS.transform(e) } else { NEGATIVE_CLASS.transform(e) };
        let r = cfg.rotation.apply(x, cfg.angle);
        // p1 / (p0 + p1) in log space so far-tail rows never divide 0 by 0
        let p_z1 = 1.0 / (1.0 + (NEGATIVE_CLASS.log_density(r) - POSITIVE_CLASS.log_density(r)).exp());
        let z = usize::from(z_rng.random::<f64>() < p_z1);
        features.extend_from_slice(&x);
        labels.push(y);
        sensitive.push(z);
    }
    Dataset::new(vec!["x1".into(), "x2".into()], features, labels, sensitive, 2, 2)
}

/// Reads a comma-separated file with a header row.
///
/// Every column other than `label_column` and `sensitive_column` becomes a
/// feature, in header order. Alphabet sizes are one more than the largest
/// value seen in each of the two columns.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, sensitive_column: &str) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| DatasetError::Io { path: shown.clone(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(DatasetError::EmptyFile(shown));
    }
    let names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let find =
        |name: &str| names.iter().position(|h| h == name).ok_or_else(|| DatasetError::MissingColumn(name.to_string()));
    let label_at = find(label_column)?;
    let sensitive_at = find(sensitive_column)?;
    let feature_cols: Vec<usize> = (0..names.len()).filter(|&c| c != label_at && c != sensitive_at).collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut sensitive = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(DatasetError::RaggedRow { line, expected: names.len(), found: record.len() });
        }
        for &c in &feature_cols {
            let cell = record[c].trim();
            let v: f64 = cell.parse().map_err(|_| DatasetError::Parse {
                line,
                column: names[c].clone(),
                value: cell.to_string(),
                expected: "a number",
            })?;
            features.push(v);
        }
        labels.push(parse_category(&record[label_at], line, &names[label_at])?);
        sensitive.push(parse_category(&record[sensitive_at], line, &names[sensitive_at])?);
    }
    if labels.is_empty() {
        return Err(DatasetError::NoRows(shown));
    }
    let n_y = labels.iter().max().map_or(0, |m| m + 1);
    let n_z = sensitive.iter().max().map_or(0, |m| m + 1);
    let feature_names = feature_cols.iter().map(|&c| names[c].clone()).collect();
    Dataset::new(feature_names, features, labels, sensitive, n_y, n_z)
}

/// Accepts `3` as well as integral floats such as `3.0`.
fn parse_category(cell: &str, line: u64, column: &str) -> Result<usize, DatasetError> {
    let cell = cell.trim();
    let err = || DatasetError::Parse {
        line,
        column: column.to_string(),
        value: cell.to_string(),
        expected: "a non-negative integer",
    };
    if let Ok(v) = cell.parse::<usize>() {
        return Ok(v);
    }
    let v: f64 = cell.parse().map_err(|_| err())?;
    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(err())
    }
}

/// Row indices of every `(y, z)` cell together with the cell counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    n_y: usize,
    n_z: usize,
    cells: Vec<Vec<usize>>,
}

impl GroupIndex {
    pub fn build(d: &Dataset) -> Self {
        let mut cells = vec![Vec::new(); d.n_y * d.n_z];
        for i in 0..d.len() {
            cells[d.labels[i] * d.n_z + d.sensitive[i]].push(i);
        }
        Self { n_y: d.n_y, n_z: d.n_z, cells }
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    /// Flat position of cell `(y, z)`; cells are laid out label-major.
    pub fn cell_id(&self, y: usize, z: usize) -> usize {
        y * self.n_z + z
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Sorted row indices with `y_i = y` and `z_i = z`.
    pub fn cell(&self, y: usize, z: usize) -> &[usize] {
        &self.cells[self.cell_id(y, z)]
    }

    pub fn cell_by_id(&self, id: usize) -> &[usize] {
        &self.cells[id]
    }

    /// `m_{y,z}`
    pub fn count(&self, y: usize, z: usize) -> usize {
        self.cell(y, z).len()
    }

    /// `m_{y,★}`
    pub fn label_count(&self, y: usize) -> usize {
        (0..self.n_z).map(|z| self.count(y, z)).sum()
    }

    /// `m_{★,z}`
    pub fn group_count(&self, z: usize) -> usize {
        (0..self.n_y).map(|y| self.count(y, z)).sum()
    }

    /// `m`
    pub fn total(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }
}

/// Fraction of rows assigned to the training side, and the partition seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Seeded row-level partition into `⌊n·f⌋` training rows and the rest.
///
/// Both halves keep the original row order.
pub fn split(d: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset), DatasetError> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(DatasetError::InvalidFraction(f));
    }
    let n = d.len();
    // the epsilon absorbs representation error in fractions such as 2/3
    let n_train = (((n as f64) * f + 1e-9).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(spec.seed, Stream::Split));
    let (train, test) = order.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.subset(train), d.subset(test)))
}

/// Cutting baseline: every sensitive group is subsampled without replacement
/// down to the size of the smallest group.
pub fn cutting(d: &Dataset, seed: u64) -> Result<Dataset, DatasetError> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); d.n_z];
    for (i, &z) in d.sensitive.iter().enumerate() {
        groups[z].push(i);
    }
    if let Some(z) = groups.iter().position(Vec::is_empty) {
        return Err(DatasetError::EmptyGroup(z));
    }
    let keep = groups.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = rng::stream(seed, Stream::Cutting);
    let mut chosen = Vec::with_capacity(keep * d.n_z);
    for members in &groups {
        let picks = rand::seq::index::sample(&mut rng, members.len(), keep);
        chosen.extend(picks.iter().map(|p| members[p]));
    }
    chosen.sort_unstable();
    Ok(d.subset(&chosen))
}
