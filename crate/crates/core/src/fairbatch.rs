//! The FairBatch sampler.
//!
//! Training examples are grouped into `(y, z)` sampling sets. A criterion
//! arranges some of those sets into *strata*: ordered runs of cells whose
//! total probability is fixed at the stratum's share of the data, while λ
//! decides how that share is divided. Cells outside every stratum keep their
//! natural share.
//!
//! | criterion | strata                             | d        |
//! |-----------|------------------------------------|----------|
//! | eqopp     | `(1, 0..n_z)`                      | n_z − 1  |
//! | eqodds    | `(y, 0..n_z)` for every label `y`  | n_y(n_z − 1) |
//! | dp        | `(0..2, z)` for `z ∈ {0, 1}`       | 2        |
//!
//! Within a stratum with cells `s_0 … s_{k-1}` and capacity `c`, the
//! coordinates are cumulative: `λ_j` is the probability of `s_0 ∪ … ∪ s_j`,
//! so `Pr(s_0) = λ_0`, `Pr(s_j) = λ_j − λ_{j−1}` and `Pr(s_{k−1}) = c − λ_{k−2}`.
//! With two cells this is the familiar `(λ, c − λ)` split. Each coordinate
//! lives in `[0, c]`, and within a stratum the coordinates stay ordered.
//!
//! After each epoch the sampler compares group losses, picks the single
//! coordinate with the largest signed disparity and moves it by `±α`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, GroupIndex};
use crate::metrics::{group_losses_against, GroupLossTable, Target};
use crate::model::{Loss, ModelParams};

#[derive(Debug, Error, PartialEq)]
pub enum FairBatchError {
    #[error("step size must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("threshold must be finite and non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("cell (y={y}, z={z}) is empty but λ controls its sampling probability")]
    EmptyCell { y: usize, z: usize },
    #[error("{criterion} is not supported here: {reason}")]
    Unsupported { criterion: CriterionKind, reason: &'static str },
    #[error("λ has {got} coordinates, the criterion needs {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("λ[{index}] = {value} is outside its feasible interval [{lower}, {upper}]")]
    OutOfBounds { index: usize, value: f64, lower: f64, upper: f64 },
    #[error("internal error: sampling set {cell} received probability {value}")]
    NegativeProbability { cell: usize, value: f64 },
    #[error("sampling set (y={y}, z={z}) has positive probability but no rows")]
    EmptySet { y: usize, z: usize },
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("expected {expected} per-example losses, got {got}")]
    LossCount { got: usize, expected: usize },
    #[error("per-example losses must be finite and non-negative")]
    InvalidLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionKind {
    /// Equal opportunity.
    #[serde(rename = "eqopp")]
    EqualOpportunity,
    /// Equalized odds.
    #[serde(rename = "eqodds")]
    EqualizedOdds,
    /// Demographic parity.
    #[serde(rename = "dp")]
    DemographicParity,
}

impl CriterionKind {
    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::EqualOpportunity => "eqopp",
            CriterionKind::EqualizedOdds => "eqodds",
            CriterionKind::DemographicParity => "dp",
        }
    }
}

impl std::fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CriterionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eqopp" => Ok(CriterionKind::EqualOpportunity),
            "eqodds" => Ok(CriterionKind::EqualizedOdds),
            "dp" => Ok(CriterionKind::DemographicParity),
            other => Err(format!("unknown criterion `{other}` (expected eqopp, eqodds or dp)")),
        }
    }
}

/// Fairness target plus the dead band `T`: a disparity of magnitude `≤ T`
/// leaves λ alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessCriterion {
    pub kind: CriterionKind,
    pub threshold: f64,
}

impl FairnessCriterion {
    pub fn new(kind: CriterionKind) -> Self {
        Self { kind, threshold: 0.0 }
    }

    pub fn with_threshold(kind: CriterionKind, threshold: f64) -> Result<Self, FairBatchError> {
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(FairBatchError::InvalidThreshold(threshold));
        }
        Ok(Self { kind, threshold })
    }

    /// Target the per-cell losses are measured against when updating λ.
    /// Demographic parity scores every row against class 1.
    pub fn loss_target(&self) -> Target {
        match self.kind {
            CriterionKind::DemographicParity => Target::Class(1),
            _ => Target::Label,
        }
    }
}

/// Mean cross-entropy table that [`update_lambda`] expects for `criterion`.
pub fn criterion_loss_table(
    criterion: &FairnessCriterion,
    p: &ModelParams,
    d: &Dataset,
    gi: &GroupIndex,
) -> GroupLossTable {
    group_losses_against(p, d, gi, Loss::CrossEntropy, criterion.loss_target())
}

#[derive(Debug, Clone)]
struct Stratum {
    cells: Vec<usize>,
    capacity: f64,
    first_dim: usize,
}

/// How a criterion carves the cells into strata and fixed cells.
#[derive(Debug, Clone)]
struct Layout {
    strata: Vec<Stratum>,
    fixed: Vec<usize>,
    dims: usize,
}

impl Layout {
    fn new(kind: CriterionKind, n_y: usize, n_z: usize) -> Result<Self, FairBatchError> {
        let unsupported = |reason| FairBatchError::Unsupported { criterion: kind, reason };
        if n_z < 2 {
            return Err(unsupported("at least two sensitive groups are required"));
        }
        let cell = |y: usize, z: usize| y * n_z + z;
        let groups: Vec<Vec<usize>> = match kind {
            CriterionKind::EqualOpportunity => {
                if n_y < 2 {
                    return Err(unsupported("the label alphabet has no class 1"));
                }
                vec![(0..n_z).map(|z| cell(1, z)).collect()]
            }
            CriterionKind::EqualizedOdds => (0..n_y).map(|y| (0..n_z).map(|z| cell(y, z)).collect()).collect(),
            CriterionKind::DemographicParity => {
                if n_y != 2 || n_z != 2 {
                    return Err(unsupported("labels and the sensitive attribute must both be binary"));
                }
                (0..2).map(|z| vec![cell(0, z), cell(1, z)]).collect()
            }
        };
        let mut in_stratum = vec![false; n_y * n_z];
        let mut strata = Vec::with_capacity(groups.len());
        let mut dims = 0;
        for cells in groups {
            for &c in &cells {
                in_stratum[c] = true;
            }
            let k = cells.len();
            strata.push(Stratum { cells, capacity: 0.0, first_dim: dims });
            dims += k - 1;
        }
        let fixed = (0..n_y * n_z).filter(|&c| !in_stratum[c]).collect();
        Ok(Self { strata, fixed, dims })
    }

    fn with_capacities(mut self, gi: &GroupIndex) -> Self {
        let m = gi.total() as f64;
        for s in &mut self.strata {
            s.capacity = s.cells.iter().map(|&c| gi.cell_by_id(c).len()).sum::<usize>() as f64 / m;
        }
        self
    }

    /// Stratum owning coordinate `dim` and the coordinate's position inside it.
    fn locate(&self, dim: usize) -> (&Stratum, usize) {
        let s = self.strata.iter().rev().find(|s| s.first_dim <= dim).expect("dimension belongs to a stratum");
        (s, dim - s.first_dim)
    }
}

/// The outer variable: one coordinate per controlled split, its upper bound
/// and the step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaState {
    pub lambda: Vec<f64>,
    pub bounds: Vec<f64>,
    pub alpha: f64,
}

impl LambdaState {
    /// Number of coordinates `d`.
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Feasible interval of coordinate `i` given the other coordinates of
    /// its stratum.
    fn interval(&self, layout: &Layout, i: usize) -> (f64, f64) {
        let (s, j) = layout.locate(i);
        let k = s.cells.len() - 1;
        let lower = if j == 0 { 0.0 } else { self.lambda[i - 1] };
        let upper = if j + 1 == k { self.bounds[i] } else { self.lambda[i + 1] };
        (lower, upper)
    }
}

/// λ that reproduces uniform sampling over examples: every coordinate is the
/// cumulative data share of its stratum's leading cells.
pub fn init_lambda(criterion: &FairnessCriterion, gi: &GroupIndex, alpha: f64) -> Result<LambdaState, FairBatchError> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(FairBatchError::InvalidAlpha(alpha));
    }
    let layout = Layout::new(criterion.kind, gi.n_y(), gi.n_z())?.with_capacities(gi);
    let m = gi.total() as f64;
    let mut lambda = Vec::with_capacity(layout.dims);
    let mut bounds = Vec::with_capacity(layout.dims);
    for s in &layout.strata {
        if let Some(&c) = s.cells.iter().find(|&&c| gi.cell_by_id(c).is_empty()) {
            return Err(FairBatchError::EmptyCell { y: c / gi.n_z(), z: c % gi.n_z() });
        }
        let mut running = 0usize;
        for &c in &s.cells[..s.cells.len() - 1] {
            running += gi.cell_by_id(c).len();
            lambda.push(running as f64 / m);
            bounds.push(s.capacity);
        }
    }
    Ok(LambdaState { lambda, bounds, alpha })
}

/// Probability of each sampling set and the per-example probabilities it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    set_probs: Vec<f64>,
    example_probs: Vec<f64>,
    members: Vec<Vec<usize>>,
    n_z: usize,
    uniform_within: bool,
}

impl SamplingDistribution {
    /// Plain uniform sampling over all examples.
    pub fn uniform(gi: &GroupIndex) -> Self {
        let m = gi.total() as f64;
        let set_probs = (0..gi.n_cells()).map(|c| gi.cell_by_id(c).len() as f64 / m).collect();
        Self::from_set_probs(gi, set_probs).expect("counts give valid probabilities")
    }

    /// Members of each set are equally likely.
    pub fn from_set_probs(gi: &GroupIndex, set_probs: Vec<f64>) -> Result<Self, FairBatchError> {
        let members: Vec<Vec<usize>> = (0..gi.n_cells()).map(|c| gi.cell_by_id(c).to_vec()).collect();
        let mut example_probs = vec![0.0; gi.total()];
        for (c, rows) in members.iter().enumerate() {
            let p = set_probs[c];
            if p < 0.0 || !p.is_finite() {
                return Err(FairBatchError::NegativeProbability { cell: c, value: p });
            }
            if p > 0.0 && rows.is_empty() {
                return Err(FairBatchError::EmptySet { y: c / gi.n_z(), z: c % gi.n_z() });
            }
            for &i in rows {
                example_probs[i] = p / rows.len() as f64;
            }
        }
        Ok(Self { set_probs, example_probs, members, n_z: gi.n_z(), uniform_within: true })
    }

    /// Probability of picking set `(y, z)`.
    pub fn set_prob(&self, y: usize, z: usize) -> f64 {
        self.set_probs[y * self.n_z + z]
    }

    /// Set probabilities laid out label-major.
    pub fn set_probs(&self) -> &[f64] {
        &self.set_probs
    }

    /// `p_i` for every training row.
    pub fn example_probs(&self) -> &[f64] {
        &self.example_probs
    }

    pub fn members(&self, cell: usize) -> &[usize] {
        &self.members[cell]
    }
}

/// Set probabilities implied by λ under `criterion`.
pub fn sampling_distribution(
    ls: &LambdaState,
    criterion: &FairnessCriterion,
    gi: &GroupIndex,
) -> Result<SamplingDistribution, FairBatchError> {
    let layout = Layout::new(criterion.kind, gi.n_y(), gi.n_z())?.with_capacities(gi);
    if ls.dim() != layout.dims || ls.bounds.len() != layout.dims {
        return Err(FairBatchError::Dimension { got: ls.dim(), expected: layout.dims });
    }
    for i in 0..ls.dim() {
        let (lower, upper) = ls.interval(&layout, i);
        let v = ls.lambda[i];
        if !(v >= lower && v <= upper) {
            return Err(FairBatchError::OutOfBounds { index: i, value: v, lower, upper });
        }
    }
    let m = gi.total() as f64;
    let mut set_probs = vec![0.0; gi.n_cells()];
    for &c in &layout.fixed {
        set_probs[c] = gi.cell_by_id(c).len() as f64 / m;
    }
    for s in &layout.strata {
        let coords = &ls.lambda[s.first_dim..s.first_dim + s.cells.len() - 1];
        let mut previous = 0.0;
        for (j, &c) in s.cells.iter().enumerate() {
            let cumulative = coords.get(j).copied().unwrap_or(ls.bounds[s.first_dim]);
            let mut p = cumulative - previous;
            if p < 0.0 && p > -1e-12 {
                p = 0.0;
            }
            if p < 0.0 {
                return Err(FairBatchError::NegativeProbability { cell: c, value: p });
            }
            set_probs[c] = p;
            previous = cumulative;
        }
    }
    SamplingDistribution::from_set_probs(gi, set_probs)
}

/// Minibatches for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn batches_per_epoch(&self) -> usize {
        self.batches.len()
    }
}

/// How a batch is filled from the set probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Composition {
    /// Every element independently: a set from the categorical
    /// distribution, then a member of that set.
    #[default]
    Iid,
    /// Fixed per-set counts, `b · Pr(set)` rounded by largest remainder,
    /// with members drawn independently.
    Stratified,
}

/// `num_batches` batches of `b` rows drawn i.i.d. with replacement.
pub fn draw_epoch<R: Rng + ?Sized>(
    sd: &SamplingDistribution,
    b: usize,
    num_batches: usize,
    rng: &mut R,
) -> Result<BatchPlan, FairBatchError> {
    draw_epoch_with(sd, b, num_batches, Composition::Iid, rng)
}

pub fn draw_epoch_with<R: Rng + ?Sized>(
    sd: &SamplingDistribution,
    b: usize,
    num_batches: usize,
    composition: Composition,
    rng: &mut R,
) -> Result<BatchPlan, FairBatchError> {
    if b == 0 {
        return Err(FairBatchError::ZeroBatch);
    }
    for (c, (&p, rows)) in sd.set_probs.iter().zip(&sd.members).enumerate() {
        if p > 0.0 && rows.is_empty() {
            return Err(FairBatchError::EmptySet { y: c / sd.n_z, z: c % sd.n_z });
        }
    }
    let member_pickers: Vec<Option<WeightedIndex<f64>>> = sd
        .members
        .iter()
        .zip(&sd.set_probs)
        .map(|(rows, &p)| {
            if sd.uniform_within || p <= 0.0 {
                None
            } else {
                WeightedIndex::new(rows.iter().map(|&i| sd.example_probs[i])).ok()
            }
        })
        .collect();
    let pick_member = |cell: usize, rng: &mut R| -> usize {
        let rows = &sd.members[cell];
        match &member_pickers[cell] {
            Some(w) => rows[w.sample(rng)],
            None => rows[rng.random_range(0..rows.len())],
        }
    };

    let mut batches = Vec::with_capacity(num_batches);
    match composition {
        Composition::Iid => {
            let sets = WeightedIndex::new(&sd.set_probs)
                .map_err(|_| FairBatchError::NegativeProbability { cell: 0, value: sd.set_probs.iter().sum() })?;
            for _ in 0..num_batches {
                let batch = (0..b)
                    .map(|_| {
                        let cell = sets.sample(rng);
                        pick_member(cell, rng)
                    })
                    .collect();
                batches.push(batch);
            }
        }
        Composition::Stratified => {
            let counts = largest_remainder(&sd.set_probs, b);
            for _ in 0..num_batches {
                let mut batch = Vec::with_capacity(b);
                for (cell, &n) in counts.iter().enumerate() {
                    for _ in 0..n {
                        batch.push(pick_member(cell, rng));
                    }
                }
                batches.push(batch);
            }
        }
    }
    Ok(BatchPlan { batch_size: b, batches })
}

/// Integer counts summing to `total`, proportional to `weights`; leftover
/// units go to the largest fractional parts, lower index first on ties.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// One signed group-loss disparity and the λ coordinate it steers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub dim: usize,
    pub disparity: f64,
}

/// Signed disparities the next update chooses from.
///
/// Equal opportunity compares adjacent sensitive groups within `y = 1`.
/// Equalized odds does the same within every label and keeps only the
/// label whose largest adjacent gap is biggest. Demographic parity uses the
/// group-size-normalized losses `L'_{y,0} − L'_{y,1}` of the table, which
/// should be scored against class 1 (see [`criterion_loss_table`]).
///
/// With `n_z` groups only the `n_z − 1` adjacent gaps are controlled, so the
/// widest gap between any two groups can reach `(n_z − 1)` times the largest
/// adjacent one.
pub fn multigroup_objectives(
    t: &GroupLossTable,
    criterion: &FairnessCriterion,
) -> Result<Vec<Objective>, FairBatchError> {
    let (n_y, n_z) = (t.n_y(), t.n_z());
    Layout::new(criterion.kind, n_y, n_z)?;
    let adjacent = |y: usize, first_dim: usize| -> Vec<Objective> {
        (0..n_z - 1).map(|j| Objective { dim: first_dim + j, disparity: t.mean(y, j) - t.mean(y, j + 1) }).collect()
    };
    Ok(match criterion.kind {
        CriterionKind::EqualOpportunity => adjacent(1, 0),
        CriterionKind::EqualizedOdds => {
            let mut chosen = adjacent(0, 0);
            let widest = |objs: &[Objective]| objs.iter().map(|o| o.disparity.abs()).fold(0.0, f64::max);
            for y in 1..n_y {
                let candidate = adjacent(y, y * (n_z - 1));
                if widest(&candidate) >= widest(&chosen) {
                    chosen = candidate;
                }
            }
            chosen
        }
        CriterionKind::DemographicParity => vec![
            Objective { dim: 0, disparity: t.normalized(0, 0) - t.normalized(0, 1) },
            Objective { dim: 1, disparity: t.normalized(1, 0) - t.normalized(1, 1) },
        ],
    })
}

/// Index of the objective with the largest magnitude; ties go to the later one.
pub fn select_objective(objectives: &[Objective]) -> Option<Objective> {
    let mut best: Option<Objective> = None;
    for o in objectives {
        if best.is_none_or(|b| o.disparity.abs() >= b.disparity.abs()) {
            best = Some(*o);
        }
    }
    best
}

/// Moves the coordinate with the largest disparity by `±α`, or nothing if that
/// disparity is within the threshold, then projects back onto the feasible set.
///
/// Equal opportunity and equalized odds raise the share of the cell with the
/// larger loss. Demographic parity follows its own sign table: a positive
/// `y = 0` gap lowers λ₁ while a positive `y = 1` gap raises λ₂.
pub fn update_lambda(
    ls: &LambdaState,
    criterion: &FairnessCriterion,
    t: &GroupLossTable,
) -> Result<LambdaState, FairBatchError> {
    let layout = Layout::new(criterion.kind, t.n_y(), t.n_z())?;
    if ls.dim() != layout.dims {
        return Err(FairBatchError::Dimension { got: ls.dim(), expected: layout.dims });
    }
    let mut next = ls.clone();
    let Some(obj) = select_objective(&multigroup_objectives(t, criterion)?) else {
        return Ok(next);
    };
    if obj.disparity.abs() <= criterion.threshold {
        return Ok(next);
    }
    let direction = match (criterion.kind, obj.dim) {
        (CriterionKind::DemographicParity, 0) => -sign(obj.disparity),
        _ => sign(obj.disparity),
    };
    let (lower, upper) = ls.interval(&layout, obj.dim);
    next.lambda[obj.dim] = (ls.lambda[obj.dim] + direction * ls.alpha).clamp(lower, upper);
    Ok(next)
}

/// `sign` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-dimensional signed descent `λ ← clamp(λ − α·sign(g − f), 0, c)`, where
/// `eval(λ)` returns `(f, g)` at the inner solution for λ. Returns all
/// `steps + 1` iterates.
pub fn signed_gd_1d<E>(
    mut eval: impl FnMut(f64) -> Result<(f64, f64), E>,
    lambda0: f64,
    alpha: f64,
    upper: f64,
    steps: usize,
) -> Result<Vec<f64>, E> {
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut lambda = lambda0;
    trajectory.push(lambda);
    for _ in 0..steps {
        let (f, g) = eval(lambda)?;
        lambda = (lambda - alpha * sign(g - f)).clamp(0.0, upper);
        trajectory.push(lambda);
    }
    Ok(trajectory)
}

/// Upper bound on `|λ_t − λ*|` for signed descent on a quasiconvex objective.
pub fn convergence_envelope(lambda0: f64, lambda_star: f64, alpha: f64, t: usize) -> f64 {
    ((lambda0 - lambda_star).abs() - t as f64 * alpha).max(alpha)
}

/// Keeps the set probabilities and reweights members of each set by loss
/// rank: the `r`-th largest loss gets weight `1 / r^temperature`, tied losses
/// share their average rank, and weights are normalized per set.
pub fn loss_weighted_within_group(
    sd: &SamplingDistribution,
    losses: &[f64],
    temperature: f64,
) -> Result<SamplingDistribution, FairBatchError> {
    if losses.len() != sd.example_probs.len() {
        return Err(FairBatchError::LossCount { got: losses.len(), expected: sd.example_probs.len() });
    }
    if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(FairBatchError::InvalidLoss);
    }
    let mut out = sd.clone();
    out.uniform_within = false;
    for (rows, &p) in sd.members.iter().zip(&sd.set_probs) {
        if rows.is_empty() {
            continue;
        }
        let weights = rank_weights(&rows.iter().map(|&i| losses[i]).collect::<Vec<_>>(), temperature);
        let total: f64 = weights.iter().sum();
        for (&i, w) in rows.iter().zip(weights) {
            out.example_probs[i] = p * w / total;
        }
    }
    Ok(out)
}

/// `1 / rank^temperature` with rank 1 for the largest value and average
/// ranks for ties.
fn rank_weights(values: &[f64], temperature: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks.into_iter().map(|r| r.powf(-temperature)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    /// Balanced data: `per_cell` rows in each of the four binary cells.
    fn balanced(per_cell: usize) -> GroupIndex {
        counts_index(&[per_cell; 4], 2, 2)
    }

    fn counts_index(counts: &[usize], n_y: usize, n_z: usize) -> GroupIndex {
        let mut labels = Vec::new();
        let mut sens = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c / n_z, n));
            sens.extend(std::iter::repeat_n(c % n_z, n));
        }
        let d = Dataset::new(vec![], vec![], labels, sens, n_y, n_z).unwrap();
        GroupIndex::build(&d)
    }

    fn crit(kind: CriterionKind) -> FairnessCriterion {
        FairnessCriterion::new(kind)
    }

    fn table(means: [f64; 4]) -> GroupLossTable {
        GroupLossTable::from_means(2, 2, vec![25; 4], &means)
    }

    #[test]
    fn init_eqopp_balanced() {
        let ls = init_lambda(&crit(CriterionKind::EqualOpportunity), &balanced(25), 0.005).unwrap();
        assert_eq!(ls.lambda, vec![0.25]);
        assert_eq!(ls.bounds, vec![0.5]);
    }

    #[test]
    fn init_eqodds_and_dp_balanced() {
        let gi = balanced(25);
        let eo = init_lambda(&crit(CriterionKind::EqualizedOdds), &gi, 0.005).unwrap();
        assert_eq!(eo.lambda, vec![0.25, 0.25]);
        let dp = init_lambda(&crit(CriterionKind::DemographicParity), &gi, 0.005).unwrap();
        assert_eq!(dp.lambda, vec![0.25, 0.25]);
        assert_eq!(dp.bounds, vec![0.5, 0.5]);
    }

    #[test]
    fn init_uses_the_documented_cells() {
        // m00=10, m01=20, m10=30, m11=40
        let gi = counts_index(&[10, 20, 30, 40], 2, 2);
        let eqopp = init_lambda(&crit(CriterionKind::EqualOpportunity), &gi, 0.1).unwrap();
        assert_eq!((eqopp.lambda[0], eqopp.bounds[0]), (0.3, 0.7));
        let eqodds = init_lambda(&crit(CriterionKind::EqualizedOdds), &gi, 0.1).unwrap();
        assert_eq!(eqodds.lambda, vec![0.1, 0.3]);
        assert_eq!(eqodds.bounds, vec![0.3, 0.7]);
        let dp = init_lambda(&crit(CriterionKind::DemographicParity), &gi, 0.1).unwrap();
        assert_eq!(dp.lambda, vec![0.1, 0.2]);
        assert_eq!(dp.bounds, vec![0.4, 0.6]);
    }

    #[test]
    fn init_rejects_empty_controlled_cell() {
        let gi = counts_index(&[10, 20, 30, 0], 2, 2);
        assert_eq!(
            init_lambda(&crit(CriterionKind::EqualOpportunity), &gi, 0.1),
            Err(FairBatchError::EmptyCell { y: 1, z: 1 })
        );
        assert!(init_lambda(&crit(CriterionKind::EqualOpportunity), &gi, -1.0).is_err());
    }

    #[test]
    fn init_gives_uniform_examples() {
        let gi = counts_index(&[7, 11, 13, 17], 2, 2);
        for kind in [CriterionKind::EqualOpportunity, CriterionKind::EqualizedOdds, CriterionKind::DemographicParity] {
            let c = crit(kind);
            let sd = sampling_distribution(&init_lambda(&c, &gi, 0.01).unwrap(), &c, &gi).unwrap();
            for p in sd.example_probs() {
                assert!((p - 1.0 / 48.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eqopp_upper_bound_starves_the_other_cell() {
        let gi = balanced(25);
        let c = crit(CriterionKind::EqualOpportunity);
        let mut ls = init_lambda(&c, &gi, 0.01).unwrap();
        ls.lambda[0] = ls.bounds[0];
        let sd = sampling_distribution(&ls, &c, &gi).unwrap();
        assert_eq!(sd.set_prob(1, 1), 0.0);
        let plan = draw_epoch(&sd, 50, 20, &mut rng::stream(1, Stream::Batches)).unwrap();
        assert!(plan.batches.iter().flatten().all(|i| !gi.cell(1, 1).contains(i)));
    }

    #[test]
    fn eqodds_set_probabilities() {
        let gi = balanced(25);
        let c = crit(CriterionKind::EqualizedOdds);
        let ls = LambdaState { lambda: vec![0.3, 0.2], bounds: vec![0.5, 0.5], alpha: 0.01 };
        let sd = sampling_distribution(&ls, &c, &gi).unwrap();
        let expected = [0.3, 0.2, 0.2, 0.3];
        for (p, e) in sd.set_probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn eqopp_negative_class_split_proportionally() {
        let gi = counts_index(&[10, 30, 25, 35], 2, 2);
        let c = crit(CriterionKind::EqualOpportunity);
        let ls = LambdaState { lambda: vec![0.5], bounds: vec![0.6], alpha: 0.01 };
        let sd = sampling_distribution(&ls, &c, &gi).unwrap();
        assert!((sd.set_prob(0, 0) - 0.1).abs() < 1e-15);
        assert!((sd.set_prob(0, 1) - 0.3).abs() < 1e-15);
        assert!((sd.set_prob(1, 1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_lambda_is_rejected() {
        let gi = balanced(25);
        let c = crit(CriterionKind::EqualOpportunity);
        let ls = LambdaState { lambda: vec![0.6], bounds: vec![0.5], alpha: 0.01 };
        assert!(matches!(sampling_distribution(&ls, &c, &gi), Err(FairBatchError::OutOfBounds { .. })));
    }

    #[test]
    fn eqopp_update_branches() {
        let c = crit(CriterionKind::EqualOpportunity);
        let ls = LambdaState { lambda: vec![0.25], bounds: vec![0.5], alpha: 0.005 };
        let up = update_lambda(&ls, &c, &table([0.0, 0.0, 0.9, 0.3])).unwrap();
        assert!((up.lambda[0] - 0.255).abs() < 1e-15);
        let down = update_lambda(&ls, &c, &table([0.0, 0.0, 0.3, 0.9])).unwrap();
        assert!((down.lambda[0] - 0.245).abs() < 1e-15);
        let tie = update_lambda(&ls, &c, &table([0.0, 0.0, 0.4, 0.4])).unwrap();
        assert_eq!(tie, ls);
    }

    #[test]
    fn eqodds_updates_only_the_wider_gap() {
        let c = crit(CriterionKind::EqualizedOdds);
        let ls = LambdaState { lambda: vec![0.25, 0.25], bounds: vec![0.5, 0.5], alpha: 0.01 };
        // d_{y=0} = +0.2, d_{y=1} = -0.05
        let next = update_lambda(&ls, &c, &table([0.5, 0.3, 0.30, 0.35])).unwrap();
        assert!((next.lambda[0] - 0.26).abs() < 1e-15);
        assert_eq!(next.lambda[1], 0.25);
        // equal magnitudes go to λ₂
        let tie = update_lambda(&ls, &c, &table([0.5, 0.25, 0.25, 0.5])).unwrap();
        assert_eq!(tie.lambda[0], 0.25);
        assert!((tie.lambda[1] - 0.24).abs() < 1e-15);
    }

    #[test]
    fn dp_sign_table() {
        let c = crit(CriterionKind::DemographicParity);
        let ls = LambdaState { lambda: vec![0.25, 0.25], bounds: vec![0.5, 0.5], alpha: 0.01 };
        // normalized y=0 gap positive and dominant → λ₁ − α
        let t = table([0.8, 0.2, 0.5, 0.5]);
        let next = update_lambda(&ls, &c, &t).unwrap();
        assert!((next.lambda[0] - 0.24).abs() < 1e-15);
        assert_eq!(next.lambda[1], 0.25);
        // y=1 gap positive and dominant → λ₂ + α
        let t = table([0.5, 0.5, 0.8, 0.2]);
        let next = update_lambda(&ls, &c, &t).unwrap();
        assert!((next.lambda[1] - 0.26).abs() < 1e-15);
        // negative y=0 gap → λ₁ + α
        let next = update_lambda(&ls, &c, &table([0.2, 0.8, 0.5, 0.5])).unwrap();
        assert!((next.lambda[0] - 0.26).abs() < 1e-15);
    }

    #[test]
    fn update_clamps_at_bounds() {
        let c = crit(CriterionKind::EqualOpportunity);
        let ls = LambdaState { lambda: vec![0.5], bounds: vec![0.5], alpha: 0.01 };
        assert_eq!(update_lambda(&ls, &c, &table([0.0, 0.0, 0.9, 0.1])).unwrap().lambda, vec![0.5]);
        let ls = LambdaState { lambda: vec![0.004], bounds: vec![0.5], alpha: 0.01 };
        assert_eq!(update_lambda(&ls, &c, &table([0.0, 0.0, 0.1, 0.9])).unwrap().lambda, vec![0.0]);
    }

    #[test]
    fn threshold_suppresses_small_disparities() {
        let c = FairnessCriterion::with_threshold(CriterionKind::EqualOpportunity, 0.1).unwrap();
        let ls = LambdaState { lambda: vec![0.25], bounds: vec![0.5], alpha: 0.01 };
        assert_eq!(update_lambda(&ls, &c, &table([0.0, 0.0, 0.5, 0.45])).unwrap(), ls);
        assert_ne!(update_lambda(&ls, &c, &table([0.0, 0.0, 0.5, 0.3])).unwrap(), ls);
        assert!(FairnessCriterion::with_threshold(CriterionKind::EqualOpportunity, -0.1).is_err());
    }

    #[test]
    fn update_moves_sampling_mass_towards_the_worse_group() {
        let gi = balanced(25);
        let c = crit(CriterionKind::EqualOpportunity);
        let ls = init_lambda(&c, &gi, 0.01).unwrap();
        let before = sampling_distribution(&ls, &c, &gi).unwrap();
        let next = update_lambda(&ls, &c, &table([0.1, 0.1, 0.7, 0.2])).unwrap();
        let after = sampling_distribution(&next, &c, &gi).unwrap();
        assert!((after.set_prob(1, 0) - before.set_prob(1, 0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn three_group_objectives() {
        let t = GroupLossTable::from_means(2, 3, vec![5; 6], &[0.0, 0.0, 0.0, 0.2, 0.5, 0.4]);
        let objs = multigroup_objectives(&t, &crit(CriterionKind::EqualOpportunity)).unwrap();
        assert_eq!(objs.len(), 2);
        assert!((objs[0].disparity + 0.3).abs() < 1e-15);
        assert!((objs[1].disparity - 0.1).abs() < 1e-15);
        assert_eq!(select_objective(&objs).unwrap().dim, 0);
    }

    #[test]
    fn two_groups_reduce_to_the_binary_difference() {
        let t = table([0.0, 0.0, 0.7, 0.2]);
        let objs = multigroup_objectives(&t, &crit(CriterionKind::EqualOpportunity)).unwrap();
        assert_eq!(objs.len(), 1);
        assert!((objs[0].disparity - 0.5).abs() < 1e-15);
    }

    #[test]
    fn multigroup_needs_two_groups() {
        let t = GroupLossTable::from_means(2, 1, vec![5; 2], &[0.1, 0.2]);
        assert!(multigroup_objectives(&t, &crit(CriterionKind::EqualOpportunity)).is_err());
    }

    #[test]
    fn multiclass_eqodds_picks_the_worst_label() {
        // 3 labels × 3 groups; label 2 carries the widest adjacent gap
        let means = [0.1, 0.2, 0.1, 0.3, 0.3, 0.3, 0.2, 0.9, 0.5];
        let t = GroupLossTable::from_means(3, 3, vec![4; 9], &means);
        let c = crit(CriterionKind::EqualizedOdds);
        let objs = multigroup_objectives(&t, &c).unwrap();
        assert_eq!(objs.iter().map(|o| o.dim).collect::<Vec<_>>(), vec![4, 5]);
        let gi = counts_index(&[4; 9], 3, 3);
        let ls = init_lambda(&c, &gi, 0.01).unwrap();
        assert_eq!(ls.dim(), 6);
        let next = update_lambda(&ls, &c, &t).unwrap();
        // gap (2,0)-(2,1) = -0.7 → cumulative coordinate 4 shrinks
        assert!((next.lambda[4] - (ls.lambda[4] - 0.01)).abs() < 1e-15);
        let changed = next.lambda.iter().zip(&ls.lambda).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 1);
        let sd = sampling_distribution(&next, &c, &gi).unwrap();
        assert!((sd.set_probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chained_coordinates_stay_ordered() {
        let gi = counts_index(&[3, 3, 3, 3, 3, 3], 2, 3);
        let c = crit(CriterionKind::EqualOpportunity);
        let ls = LambdaState { lambda: vec![0.2, 0.2], bounds: vec![0.5, 0.5], alpha: 0.05 };
        // gap (1,0)-(1,1) positive: λ₀ wants to rise past λ₁ and is held at it
        let t = GroupLossTable::from_means(2, 3, vec![3; 6], &[0.0, 0.0, 0.0, 0.9, 0.1, 0.1]);
        let next = update_lambda(&ls, &c, &t).unwrap();
        assert_eq!(next.lambda, vec![0.2, 0.2]);
        assert!(sampling_distribution(&next, &c, &gi).is_ok());
    }

    #[test]
    fn draw_is_deterministic_and_sized() {
        let gi = balanced(25);
        let sd = SamplingDistribution::uniform(&gi);
        let a = draw_epoch(&sd, 10, 7, &mut rng::stream(4, Stream::Batches)).unwrap();
        let b = draw_epoch(&sd, 10, 7, &mut rng::stream(4, Stream::Batches)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.batches_per_epoch(), 7);
        assert!(a.batches.iter().all(|batch| batch.len() == 10 && batch.iter().all(|&i| i < 100)));
        assert_eq!(draw_epoch(&sd, 0, 1, &mut rng::stream(4, Stream::Batches)), Err(FairBatchError::ZeroBatch));
    }

    #[test]
    fn uniform_draw_frequencies() {
        let gi = balanced(25);
        let sd = SamplingDistribution::uniform(&gi);
        let batches = 10_000;
        let plan = draw_epoch(&sd, 100, batches, &mut rng::stream(11, Stream::Batches)).unwrap();
        let mut hits = [0usize; 100];
        for &i in plan.batches.iter().flatten() {
            hits[i] += 1;
        }
        let draws = (batches * 100) as f64;
        let sigma = (draws * 0.01 * 0.99).sqrt();
        for h in hits {
            assert!((h as f64 - draws * 0.01).abs() <= 4.5 * sigma, "count {h}");
        }
    }

    #[test]
    fn stratified_draws_hit_exact_counts() {
        let gi = balanced(25);
        let ls = LambdaState { lambda: vec![0.3, 0.2], bounds: vec![0.5, 0.5], alpha: 0.01 };
        let c = crit(CriterionKind::EqualizedOdds);
        let sd = sampling_distribution(&ls, &c, &gi).unwrap();
        let plan = draw_epoch_with(&sd, 10, 3, Composition::Stratified, &mut rng::stream(1, Stream::Batches)).unwrap();
        for batch in &plan.batches {
            let in00 = batch.iter().filter(|i| gi.cell(0, 0).contains(i)).count();
            assert_eq!(in00, 3);
            assert_eq!(batch.len(), 10);
        }
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 3), vec![1, 1, 1]);
        assert_eq!(largest_remainder(&[0.7, 0.2, 0.1], 4), vec![3, 1, 0]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10).iter().sum::<usize>(), 10);
    }

    #[test]
    fn signed_descent_constant_on_ties() {
        let traj = signed_gd_1d(|_| Ok::<_, ()>((1.0, 1.0)), 0.3, 0.1, 1.0, 5).unwrap();
        assert!(traj.iter().all(|&l| l == 0.3));
    }

    #[test]
    fn signed_descent_tracks_a_crossing() {
        // f - g = 0.6 - λ decreases through λ* = 0.6
        let traj = signed_gd_1d(|l| Ok::<_, ()>((0.6 - l, 0.0)), 0.0, 0.05, 1.0, 40).unwrap();
        for (t, &l) in traj.iter().enumerate() {
            assert!((l - 0.6).abs() <= convergence_envelope(0.0, 0.6, 0.05, t) + 1e-12);
        }
    }

    #[test]
    fn envelope_arithmetic() {
        assert!((convergence_envelope(0.0, 0.3, 0.05, 4) - 0.1).abs() < 1e-15);
        assert_eq!(convergence_envelope(0.0, 0.3, 0.05, 100), 0.05);
    }

    #[test]
    fn loss_weighting_equal_losses_is_identity() {
        let gi = balanced(5);
        let sd = SamplingDistribution::uniform(&gi);
        let merged = loss_weighted_within_group(&sd, &[0.7; 20], 1.0).unwrap();
        assert_eq!(merged.set_probs(), sd.set_probs());
        for (a, b) in merged.example_probs().iter().zip(sd.example_probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_weighting_favours_large_losses() {
        let gi = balanced(5);
        let sd = SamplingDistribution::uniform(&gi);
        let mut losses = vec![0.1; 20];
        let heavy = gi.cell(1, 0)[2];
        losses[heavy] = 5.0;
        let merged = loss_weighted_within_group(&sd, &losses, 1.0).unwrap();
        assert!(merged.example_probs()[heavy] > sd.set_prob(1, 0) / 5.0);
        assert!((merged.example_probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_weighting_two_member_ratio() {
        let gi = counts_index(&[2, 1, 1, 1], 2, 2);
        let sd = SamplingDistribution::uniform(&gi);
        let (a, b) = (gi.cell(0, 0)[0], gi.cell(0, 0)[1]);
        let mut losses = vec![0.0; 5];
        losses[a] = 1.0;
        let temperature = 1.5;
        let merged = loss_weighted_within_group(&sd, &losses, temperature).unwrap();
        // ranks 1 and 2 → weights 1 and 2^{-1.5}
        let ratio = merged.example_probs()[a] / merged.example_probs()[b];
        assert!((ratio - 2f64.powf(1.5)).abs() < 1e-12);
        assert!(loss_weighted_within_group(&sd, &[f64::NAN; 5], 1.0).is_err());
        assert!(loss_weighted_within_group(&sd, &[0.0; 3], 1.0).is_err());
    }

    #[test]
    fn dp_rejects_non_binary_alphabets() {
        let gi = counts_index(&[2; 6], 2, 3);
        assert!(matches!(
            init_lambda(&crit(CriterionKind::DemographicParity), &gi, 0.1),
            Err(FairBatchError::Unsupported { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn kind() -> impl Strategy<Value = CriterionKind> {
            prop_oneof![
                Just(CriterionKind::EqualOpportunity),
                Just(CriterionKind::EqualizedOdds),
                Just(CriterionKind::DemographicParity),
            ]
        }

        /// Counts for a binary-label index with `n_z` groups; DP gets two groups.
        fn setting() -> impl Strategy<Value = (CriterionKind, usize, Vec<usize>)> {
            kind().prop_flat_map(|k| {
                let n_z = if k == CriterionKind::DemographicParity { 2..3usize } else { 2..5usize };
                n_z.prop_flat_map(move |n_z| (Just(k), Just(n_z), prop::collection::vec(1..40usize, 2 * n_z)))
            })
        }

        proptest! {
            #[test]
            fn distribution_sums_to_one_for_random_lambda(
                (k, n_z, counts) in setting(),
                fractions in prop::collection::vec(0.0..=1.0f64, 8),
            ) {
                let gi = counts_index(&counts, 2, n_z);
                let c = crit(k);
                let mut ls = init_lambda(&c, &gi, 0.01).unwrap();
                // random feasible point: ordered draws scaled into [0, c] per stratum
                let layout = Layout::new(k, 2, n_z).unwrap().with_capacities(&gi);
                for s in &layout.strata {
                    let k = s.cells.len() - 1;
                    let mut draws: Vec<f64> = fractions.iter().cycle().skip(s.first_dim).take(k).copied().collect();
                    draws.sort_by(f64::total_cmp);
                    for (j, v) in draws.into_iter().enumerate() {
                        ls.lambda[s.first_dim + j] = v * s.capacity;
                    }
                }
                let sd = sampling_distribution(&ls, &c, &gi).unwrap();
                prop_assert!(sd.set_probs().iter().all(|&p| p >= 0.0));
                prop_assert!((sd.set_probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(sd.example_probs().iter().all(|&p| p >= 0.0));
                prop_assert!((sd.example_probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn init_is_uniform((k, n_z, counts) in setting()) {
                let gi = counts_index(&counts, 2, n_z);
                let c = crit(k);
                let sd = sampling_distribution(&init_lambda(&c, &gi, 0.01).unwrap(), &c, &gi).unwrap();
                let m = gi.total() as f64;
                for &p in sd.example_probs() {
                    prop_assert!((p - 1.0 / m).abs() < 1e-12);
                }
            }

            #[test]
            fn repeated_updates_stay_feasible_and_touch_one_coordinate(
                (k, n_z, counts) in setting(),
                rounds in prop::collection::vec(prop::collection::vec(0.0..3.0f64, 8), 1..30),
                alpha in 0.001..0.2f64,
            ) {
                let gi = counts_index(&counts, 2, n_z);
                let c = crit(k);
                let mut ls = init_lambda(&c, &gi, alpha).unwrap();
                for means in rounds {
                    let t = GroupLossTable::from_means(2, n_z, counts.clone(), &means[..2 * n_z]);
                    let next = update_lambda(&ls, &c, &t).unwrap();
                    let changed = next.lambda.iter().zip(&ls.lambda).filter(|(a, b)| a != b).count();
                    prop_assert!(changed <= 1);
                    prop_assert!(sampling_distribution(&next, &c, &gi).is_ok());
                    ls = next;
                }
            }

            #[test]
            fn adjacent_gaps_bound_every_pairwise_gap(
                losses in prop::collection::vec(0.0..5.0f64, 2..8),
            ) {
                let n_z = losses.len();
                let mut means = vec![0.0; n_z];
                means.extend_from_slice(&losses);
                let t = GroupLossTable::from_means(2, n_z, vec![3; 2 * n_z], &means);
                let objs = multigroup_objectives(&t, &crit(CriterionKind::EqualOpportunity)).unwrap();
                let eps = objs.iter().map(|o| o.disparity.abs()).fold(0.0, f64::max);
                let widest = losses.iter().cloned().fold(f64::MIN, f64::max) - losses.iter().cloned().fold(f64::MAX, f64::min);
                prop_assert!(widest <= (n_z - 1) as f64 * eps + 1e-12);
            }

            #[test]
            fn loss_weighting_preserves_set_mass(
                counts in prop::collection::vec(1..10usize, 4),
                raw in prop::collection::vec(0.0..10.0f64, 40),
                temperature in 0.0..3.0f64,
            ) {
                let gi = counts_index(&counts, 2, 2);
                let sd = SamplingDistribution::uniform(&gi);
                let losses = &raw[..gi.total()];
                let merged = loss_weighted_within_group(&sd, losses, temperature).unwrap();
                for cell in 0..4 {
                    let mass: f64 = gi.cell_by_id(cell).iter().map(|&i| merged.example_probs()[i]).sum();
                    prop_assert!((mass - sd.set_probs()[cell]).abs() < 1e-12);
                }
            }
        }
    }
}
