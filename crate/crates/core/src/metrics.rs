//! Group-conditional losses and the three disparity measures.
//!
//! Disparities are computed from hard predictions; the loss table feeds the
//! λ updates and uses whatever loss it is asked for (soft cross-entropy
//! during training).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, GroupIndex};
use crate::model::{example_loss, Loss, ModelParams};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot evaluate on an empty dataset")]
    EmptyDataset,
    #[error("no rows with y=1; true-positive rates are undefined")]
    NoPositives,
    #[error("cell (y={y}, z={z}) is empty; its conditional rate is undefined")]
    EmptyCell { y: usize, z: usize },
    #[error("sensitive group z={0} is empty")]
    EmptyGroup(usize),
    #[error("{0} requires binary labels and a binary sensitive attribute")]
    NotBinary(&'static str),
}

/// What each row's loss is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Target {
    /// The row's own label.
    #[default]
    Label,
    /// A fixed class for every row, e.g. class 1 for the demographic-parity update.
    Class(usize),
}

/// Summed and averaged losses per `(y, z)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLossTable {
    n_y: usize,
    n_z: usize,
    counts: Vec<usize>,
    sums: Vec<f64>,
    empty_cells: Vec<(usize, usize)>,
}

impl GroupLossTable {
    /// Builds a table from per-cell counts and loss sums, laid out label-major.
    pub fn from_sums(n_y: usize, n_z: usize, counts: Vec<usize>, sums: Vec<f64>) -> Self {
        assert_eq!(counts.len(), n_y * n_z);
        assert_eq!(sums.len(), n_y * n_z);
        let empty_cells =
            (0..n_y).flat_map(|y| (0..n_z).map(move |z| (y, z))).filter(|&(y, z)| counts[y * n_z + z] == 0).collect();
        Self { n_y, n_z, counts, sums, empty_cells }
    }

    /// Builds a table whose cell means are `means` for the given counts.
    pub fn from_means(n_y: usize, n_z: usize, counts: Vec<usize>, means: &[f64]) -> Self {
        let sums = counts.iter().zip(means).map(|(&c, &m)| c as f64 * m).collect();
        Self::from_sums(n_y, n_z, counts, sums)
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    fn at(&self, y: usize, z: usize) -> usize {
        y * self.n_z + z
    }

    /// `m_{y,z}`
    pub fn count(&self, y: usize, z: usize) -> usize {
        self.counts[self.at(y, z)]
    }

    /// `L_{y,z}`; an empty cell reads as 0 and is listed in [`Self::empty_cells`].
    pub fn mean(&self, y: usize, z: usize) -> f64 {
        let i = self.at(y, z);
        if self.counts[i] == 0 {
            0.0
        } else {
            self.sums[i] / self.counts[i] as f64
        }
    }

    /// `L_{y,★}`
    pub fn label_mean(&self, y: usize) -> f64 {
        let (s, c) = (0..self.n_z).fold((0.0, 0), |(s, c), z| (s + self.sums[self.at(y, z)], c + self.count(y, z)));
        ratio(s, c)
    }

    /// `L_{★,z}`
    pub fn group_mean(&self, z: usize) -> f64 {
        let (s, c) = (0..self.n_y).fold((0.0, 0), |(s, c), y| (s + self.sums[self.at(y, z)], c + self.count(y, z)));
        ratio(s, c)
    }

    /// `L`
    pub fn overall(&self) -> f64 {
        ratio(self.sums.iter().sum(), self.counts.iter().sum())
    }

    /// `m_{★,z}`
    pub fn group_count(&self, z: usize) -> usize {
        (0..self.n_y).map(|y| self.count(y, z)).sum()
    }

    /// `L'_{y,z} = (m_{y,z} / m_{★,z}) L_{y,z}`: the cell's loss sum over its group size.
    pub fn normalized(&self, y: usize, z: usize) -> f64 {
        ratio(self.sums[self.at(y, z)], self.group_count(z))
    }

    /// `c = m_{0,0}/m_{★,0} - m_{0,1}/m_{★,1}` for binary alphabets.
    pub fn dp_constant(&self) -> f64 {
        ratio(self.count(0, 0) as f64, self.group_count(0)) - ratio(self.count(0, 1) as f64, self.group_count(1))
    }

    /// Cell means as a `[y][z]` matrix.
    pub fn means(&self) -> Vec<Vec<f64>> {
        (0..self.n_y).map(|y| (0..self.n_z).map(|z| self.mean(y, z)).collect()).collect()
    }

    /// Cells that had no rows when the table was built.
    pub fn empty_cells(&self) -> &[(usize, usize)] {
        &self.empty_cells
    }
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Mean loss of every `(y, z)` cell against each row's own label.
pub fn group_losses(p: &ModelParams, d: &Dataset, gi: &GroupIndex, loss: Loss) -> GroupLossTable {
    group_losses_against(p, d, gi, loss, Target::Label)
}

pub fn group_losses_against(
    p: &ModelParams,
    d: &Dataset,
    gi: &GroupIndex,
    loss: Loss,
    target: Target,
) -> GroupLossTable {
    let mut counts = Vec::with_capacity(gi.n_cells());
    let mut sums = Vec::with_capacity(gi.n_cells());
    for id in 0..gi.n_cells() {
        let rows = gi.cell_by_id(id);
        counts.push(rows.len());
        sums.push(
            rows.iter()
                .map(|&i| {
                    let y = match target {
                        Target::Label => d.label(i),
                        Target::Class(c) => c,
                    };
                    example_loss(p, d.row(i), y, loss)
                })
                .sum(),
        );
    }
    GroupLossTable::from_sums(gi.n_y(), gi.n_z(), counts, sums)
}

pub fn hard_predictions(p: &ModelParams, d: &Dataset) -> Vec<usize> {
    (0..d.len()).map(|i| p.predict(d.row(i))).collect()
}

pub fn accuracy(p: &ModelParams, d: &Dataset) -> Result<f64, MetricsError> {
    accuracy_of(&hard_predictions(p, d), d)
}

pub fn accuracy_of(preds: &[usize], d: &Dataset) -> Result<f64, MetricsError> {
    if d.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let hits = preds.iter().zip(d.labels()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / d.len() as f64)
}

fn rate(preds: &[usize], rows: &[usize], class: usize) -> f64 {
    rows.iter().filter(|&&i| preds[i] == class).count() as f64 / rows.len() as f64
}

/// `max_z |Pr(ŷ=1 | z, y=1) - Pr(ŷ=1 | y=1)|`
pub fn eo_disparity(p: &ModelParams, d: &Dataset, gi: &GroupIndex) -> Result<f64, MetricsError> {
    eo_from_predictions(&hard_predictions(p, d), gi)
}

pub fn eo_from_predictions(preds: &[usize], gi: &GroupIndex) -> Result<f64, MetricsError> {
    if gi.n_y() < 2 || gi.label_count(1) == 0 {
        return Err(MetricsError::NoPositives);
    }
    let hits: usize = (0..gi.n_z()).map(|z| gi.cell(1, z).iter().filter(|&&i| preds[i] == 1).count()).sum();
    let overall = hits as f64 / gi.label_count(1) as f64;
    let mut worst: f64 = 0.0;
    for z in 0..gi.n_z() {
        let rows = gi.cell(1, z);
        if rows.is_empty() {
            return Err(MetricsError::EmptyCell { y: 1, z });
        }
        worst = worst.max((rate(preds, rows, 1) - overall).abs());
    }
    Ok(worst)
}

/// `max_{z, y, ŷ} |Pr(ŷ | z, y) - Pr(ŷ | y)|` over every label and predicted class.
pub fn ed_disparity(p: &ModelParams, d: &Dataset, gi: &GroupIndex) -> Result<f64, MetricsError> {
    ed_from_predictions(&hard_predictions(p, d), gi)
}

pub fn ed_from_predictions(preds: &[usize], gi: &GroupIndex) -> Result<f64, MetricsError> {
    let classes = gi.n_y().max(2);
    let mut worst: f64 = 0.0;
    for y in 0..gi.n_y() {
        for z in 0..gi.n_z() {
            if gi.count(y, z) == 0 {
                return Err(MetricsError::EmptyCell { y, z });
            }
        }
        let label_rows: Vec<usize> = (0..gi.n_z()).flat_map(|z| gi.cell(y, z).iter().copied()).collect();
        for class in 0..classes {
            let overall = rate(preds, &label_rows, class);
            for z in 0..gi.n_z() {
                worst = worst.max((rate(preds, gi.cell(y, z), class) - overall).abs());
            }
        }
    }
    Ok(worst)
}

/// `max_z |Pr(ŷ=1 | z) - Pr(ŷ=1)|`
pub fn dp_disparity(p: &ModelParams, d: &Dataset, gi: &GroupIndex) -> Result<f64, MetricsError> {
    dp_from_predictions(&hard_predictions(p, d), gi)
}

pub fn dp_from_predictions(preds: &[usize], gi: &GroupIndex) -> Result<f64, MetricsError> {
    let group_rows = |z: usize| -> Vec<usize> { (0..gi.n_y()).flat_map(|y| gi.cell(y, z).iter().copied()).collect() };
    let all: Vec<usize> = (0..gi.n_z()).flat_map(group_rows).collect();
    if all.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let overall = rate(preds, &all, 1);
    let mut worst: f64 = 0.0;
    for z in 0..gi.n_z() {
        let rows = group_rows(z);
        if rows.is_empty() {
            return Err(MetricsError::EmptyGroup(z));
        }
        worst = worst.max((rate(preds, &rows, 1) - overall).abs());
    }
    Ok(worst)
}

/// Accuracy and the three disparities of one model on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub accuracy: f64,
    pub eo: f64,
    pub ed: f64,
    pub dp: f64,
}

impl DisparityReport {
    pub fn evaluate(p: &ModelParams, d: &Dataset, gi: &GroupIndex) -> Result<Self, MetricsError> {
        let preds = hard_predictions(p, d);
        Ok(Self {
            accuracy: accuracy_of(&preds, d)?,
            eo: eo_from_predictions(&preds, gi)?,
            ed: ed_from_predictions(&preds, gi)?,
            dp: dp_from_predictions(&preds, gi)?,
        })
    }
}

/// `max{ |L'_{1,0} - L'_{1,1}|, |L'_{0,0} - L'_{0,1}|_c }` with `|x|_c = max{x - c, c - x}`.
///
/// Zero exactly when the normalized losses satisfy the sufficient condition
/// for demographic parity.
pub fn dp_sufficient_objective(t: &GroupLossTable) -> Result<f64, MetricsError> {
    if t.n_y() != 2 || t.n_z() != 2 {
        return Err(MetricsError::NotBinary("the demographic-parity objective"));
    }
    let c = t.dp_constant();
    let positives = (t.normalized(1, 0) - t.normalized(1, 1)).abs();
    let x = t.normalized(0, 0) - t.normalized(0, 1);
    let negatives = (x - c).max(c - x);
    Ok(positives.max(negatives))
}
