//! End-to-end experiments: data preparation, the training loop with a
//! chosen sampler, per-epoch records and the theory report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, Dataset, DatasetError, GroupIndex, SplitSpec};
use crate::fairbatch::{
    self, Composition, CriterionKind, FairBatchError, FairnessCriterion, LambdaState, SamplingDistribution,
};
use crate::lab::{self, InnerProblem1D, LabError, OuterSurface, SuiteConfig, SuiteReport};
use crate::metrics::{self, MetricsError};
use crate::model::{self, AdamConfig, AdamState, Loss, ModelError, ModelParams};
use crate::rng::{self, Stream};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    FairBatch(#[from] FairBatchError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic { n: usize },
    Csv { path: PathBuf, label_column: String, sensitive_column: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Adaptive λ-driven sampling.
    FairBatch,
    /// Uniform sampling, the unconstrained baseline.
    Uniform,
    /// Uniform sampling after shrinking every sensitive group to the
    /// smallest one.
    Cutting,
}

impl std::str::FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fairbatch" => Ok(Sampler::FairBatch),
            "uniform" => Ok(Sampler::Uniform),
            "cutting" => Ok(Sampler::Cutting),
            other => Err(format!("unknown sampler `{other}` (expected fairbatch, uniform or cutting)")),
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub criterion: CriterionKind,
    pub sampler: Sampler,
    pub alpha: f64,
    pub threshold: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub train_fraction: f64,
    /// Update λ after every this many batches instead of once per epoch.
    pub update_every: Option<usize>,
    pub composition: Composition,
    /// Rank-weight members of each sampling set by their current loss with
    /// this temperature.
    pub loss_weighting: Option<f64>,
    /// Give the model indicator columns for the sensitive attribute.
    pub sensitive_as_feature: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic { n: 3000 },
            criterion: CriterionKind::EqualOpportunity,
            sampler: Sampler::FairBatch,
            alpha: 0.005,
            threshold: 0.0,
            batch_size: 100,
            epochs: 400,
            seed: 0,
            adam: AdamConfig::default(),
            train_fraction: 2.0 / 3.0,
            update_every: None,
            composition: Composition::Iid,
            loss_weighting: None,
            sensitive_as_feature: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Config(msg));
        if !(self.alpha.is_finite() && (0.0..1.0).contains(&self.alpha)) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return bad(format!("threshold must be non-negative, got {}", self.threshold));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.adam.lr.is_finite() && self.adam.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.adam.lr));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train fraction must lie in (0, 1], got {}", self.train_fraction));
        }
        if self.update_every == Some(0) {
            return bad("update interval must be at least 1 batch".into());
        }
        if let Some(t) = self.loss_weighting {
            if !(t.is_finite() && t >= 0.0) {
                return bad(format!("loss-weighting temperature must be non-negative, got {t}"));
            }
        }
        if let DataSource::Synthetic { n: 0 } = self.data {
            return bad("synthetic dataset needs at least one row".into());
        }
        Ok(())
    }

    pub fn fairness(&self) -> FairnessCriterion {
        FairnessCriterion { kind: self.criterion, threshold: self.threshold }
    }
}

/// State of a run after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Test-set disparities; `None` when the test split lacks a required group.
    pub eo: Option<f64>,
    pub ed: Option<f64>,
    pub dp: Option<f64>,
    /// λ after this epoch's update.
    pub lambda: Vec<f64>,
    /// Mean training cross-entropy of every `(y, z)` cell, indexed `[y][z]`.
    pub cell_losses: Vec<Vec<f64>>,
    /// The formal demographic-parity objective on the training set, for
    /// binary labels and groups only.
    pub dp_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub records: Vec<EpochRecord>,
    pub model: ModelParams,
    pub lambda: Option<LambdaState>,
}

impl TrainOutput {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("at least one epoch")
    }

    /// One JSON object per line.
    pub fn write_ndjson(&self, out: &mut impl Write) -> Result<(), RunError> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n").map_err(|source| RunError::Io { path: "<metrics>".into(), source })?;
        }
        Ok(())
    }

    pub fn ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

pub fn load_data(source: &DataSource, seed: u64) -> Result<Dataset, RunError> {
    Ok(match source {
        DataSource::Synthetic { n } => dataset::gen_synthetic(*n, seed)?,
        DataSource::Csv { path, label_column, sensitive_column } => {
            dataset::load_csv(path, label_column, sensitive_column)?
        }
    })
}

/// Train and test sets for a configuration, after any cutting.
pub fn prepare(cfg: &RunConfig) -> Result<(Dataset, Dataset), RunError> {
    let mut full = load_data(&cfg.data, cfg.seed)?;
    if cfg.sensitive_as_feature {
        full = full.with_sensitive_indicators();
    }
    let (train, test) = dataset::split(&full, SplitSpec { train_fraction: cfg.train_fraction, seed: cfg.seed })?;
    if train.is_empty() {
        return Err(RunError::Config("the training split is empty".into()));
    }
    let train = match cfg.sampler {
        Sampler::Cutting => dataset::cutting(&train, cfg.seed)?,
        _ => train,
    };
    Ok((train, test))
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainOutput, RunError> {
    cfg.validate()?;
    let (train, test) = prepare(cfg)?;
    train_on(cfg, &train, &test)
}

/// The training loop on already prepared data.
///
/// Sampling starts uniform. Each epoch draws `⌈n_train / b⌉` batches, takes
/// one Adam step per batch and then, for the FairBatch sampler, updates λ
/// from the group losses of the whole training set.
pub fn train_on(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutput, RunError> {
    cfg.validate()?;
    let criterion = cfg.fairness();
    let gi = GroupIndex::build(train);
    let test_gi = GroupIndex::build(test);
    let mut params = ModelParams::zeros(train.n_features(), train.n_y());
    let mut adam = AdamState::new(&params, cfg.adam);

    let adaptive = cfg.sampler == Sampler::FairBatch;
    let mut lambda = match fairbatch::init_lambda(&criterion, &gi, cfg.alpha) {
        Ok(ls) => Some(ls),
        Err(e) if adaptive => return Err(e.into()),
        Err(_) => None,
    };
    let mut sd = match (&lambda, adaptive) {
        (Some(ls), true) => fairbatch::sampling_distribution(ls, &criterion, &gi)?,
        _ => SamplingDistribution::uniform(&gi),
    };

    let mut rng = rng::stream(cfg.seed, Stream::Batches);
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let chunk = cfg.update_every.unwrap_or(per_epoch).min(per_epoch);
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut remaining = per_epoch;
        while remaining > 0 {
            let take = chunk.min(remaining);
            let plan = fairbatch::draw_epoch_with(&sd, cfg.batch_size, take, cfg.composition, &mut rng)?;
            for batch in &plan.batches {
                let grad = model::batch_gradient(&params, batch, train, Loss::CrossEntropy)?;
                adam.step(&mut params, &grad)?;
            }
            remaining -= take;
            if adaptive {
                let ls = lambda.as_ref().expect("adaptive runs have λ");
                let table = fairbatch::criterion_loss_table(&criterion, &params, train, &gi);
                let next = fairbatch::update_lambda(ls, &criterion, &table)?;
                sd = fairbatch::sampling_distribution(&next, &criterion, &gi)?;
                if let Some(temperature) = cfg.loss_weighting {
                    let losses: Vec<f64> = (0..train.len())
                        .map(|i| model::example_loss(&params, train.row(i), train.label(i), Loss::CrossEntropy))
                        .collect();
                    sd = fairbatch::loss_weighted_within_group(&sd, &losses, temperature)?;
                }
                lambda = Some(next);
            }
        }
        records.push(record(epoch, &params, train, &gi, test, &test_gi, lambda.as_ref())?);
    }
    Ok(TrainOutput { records, model: params, lambda: if adaptive { lambda } else { None } })
}

fn record(
    epoch: usize,
    params: &ModelParams,
    train: &Dataset,
    gi: &GroupIndex,
    test: &Dataset,
    test_gi: &GroupIndex,
    lambda: Option<&LambdaState>,
) -> Result<EpochRecord, RunError> {
    let table = metrics::group_losses(params, train, gi, Loss::CrossEntropy);
    let dp_table = metrics::group_losses_against(params, train, gi, Loss::CrossEntropy, metrics::Target::Class(1));
    let (test_accuracy, eo, ed, dp) = if test.is_empty() {
        (None, None, None, None)
    } else {
        let preds = metrics::hard_predictions(params, test);
        (
            Some(metrics::accuracy_of(&preds, test)?),
            metrics::eo_from_predictions(&preds, test_gi).ok(),
            metrics::ed_from_predictions(&preds, test_gi).ok(),
            metrics::dp_from_predictions(&preds, test_gi).ok(),
        )
    };
    Ok(EpochRecord {
        epoch,
        train_accuracy: metrics::accuracy(params, train)?,
        test_accuracy,
        eo,
        ed,
        dp,
        lambda: lambda.map(|ls| ls.lambda.clone()).unwrap_or_default(),
        cell_losses: table.means(),
        dp_objective: metrics::dp_sufficient_objective(&dp_table).ok(),
    })
}

/// Trains and writes the NDJSON metrics and the JSON checkpoint.
pub fn run_train_to(cfg: &RunConfig, metrics_path: &Path, checkpoint_path: &Path) -> Result<TrainOutput, RunError> {
    let file = File::create(metrics_path).map_err(io_error(metrics_path))?;
    let out = run_train(cfg)?;
    let mut w = BufWriter::new(file);
    out.write_ndjson(&mut w)?;
    w.flush().map_err(io_error(metrics_path))?;
    out.model.save(checkpoint_path)?;
    Ok(out)
}

/// Writes `n` synthetic rows as `x1,x2,z,y`.
pub fn run_generate(n: usize, seed: u64, out: &Path) -> Result<Dataset, RunError> {
    let d = dataset::gen_synthetic(n, seed)?;
    d.write_csv(out, "y", "z")?;
    Ok(d)
}

/// A named lab problem: `counterexample` or any fixture name.
pub fn lab_problem(name: &str) -> Option<InnerProblem1D> {
    if name == "counterexample" {
        return Some(InnerProblem1D::counterexample());
    }
    lab::fixtures().into_iter().find(|f| f.name == name).map(|f| f.problem)
}

pub fn run_sweep(problem: &InnerProblem1D, grid_size: usize) -> Result<OuterSurface, RunError> {
    Ok(lab::sweep_surface(problem, grid_size)?)
}

/// `lambda,w,f,g,F` rows of a swept surface.
pub fn write_surface_csv(s: &OuterSurface, out: impl Write) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "w", "f", "g", "F"])?;
    for (i, (&l, &v)) in s.lambdas.iter().zip(&s.values).enumerate() {
        let sol = &s.solutions[i];
        w.write_record([l, sol.w, sol.f, sol.g, v].map(|x| format!("{x:?}")))?;
    }
    w.flush().map_err(|source| RunError::Io { path: "<sweep>".into(), source })?;
    Ok(())
}

pub fn run_verify(cfg: &SuiteConfig) -> Result<SuiteReport, RunError> {
    Ok(lab::run_suite(cfg)?)
}

/// Plain-text rendering of a theory report.
pub fn render_report(r: &SuiteReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "counterexample endpoints: F(0) = {:.12} (closed form {:.12}), F(1) = {:.12} (closed form {:.12})\n",
        r.endpoints[0], r.endpoint_closed_forms[0], r.endpoints[1], r.endpoint_closed_forms[1]
    ));
    for c in &r.checks {
        s.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    let failed = r.failures().count();
    s.push_str(&format!("{} checks, {} failed\n", r.checks.len(), failed));
    s
}
