use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairbatch::fairbatch::{Composition, CriterionKind};
use fairbatch::lab::SuiteConfig;
use fairbatch::model::AdamConfig;
use fairbatch::runner::{self, DataSource, RunConfig, Sampler};

#[derive(Parser)]
#[command(name = "fairbatch", version, about = "Fairness-aware adaptive minibatch sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV with columns x1,x2,z,y.
    Generate {
        #[arg(long = "synthetic-n", default_value_t = 3000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train logistic regression with the chosen sampler and write per-epoch metrics.
    Train(TrainArgs),
    /// Sweep the outer objective of a one-dimensional bilevel problem.
    Sweep {
        /// `counterexample` or the name of a verify fixture.
        #[arg(long, default_value = "counterexample")]
        fixture: String,
        #[arg(long, default_value_t = 2001)]
        grid: usize,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the bilevel theory checks. Exits non-zero if any check fails.
    Verify {
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
        /// Add a W-shaped surface that must fail the quasiconvexity check.
        #[arg(long)]
        inject_w_shape: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// CSV input; the synthetic generator is used when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long = "synthetic-n", default_value_t = 3000, conflicts_with = "data")]
    synthetic_n: usize,
    #[arg(long = "label-col", default_value = "y")]
    label_col: String,
    #[arg(long = "sensitive-col", default_value = "z")]
    sensitive_col: String,
    #[arg(long, value_enum, default_value_t = CriterionArg::Eqopp)]
    criterion: CriterionArg,
    #[arg(long, value_enum, default_value_t = SamplerArg::Fairbatch)]
    sampler: SamplerArg,
    #[arg(long, default_value_t = 0.005)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long = "batch-size", default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    split: f64,
    /// Update λ after every k batches instead of once per epoch.
    #[arg(long = "update-every")]
    update_every: Option<usize>,
    #[arg(long, value_enum, default_value_t = CompositionArg::Iid)]
    composition: CompositionArg,
    /// Rank-weight examples inside each sampling set by loss, with this temperature.
    #[arg(long = "loss-weighting")]
    loss_weighting: Option<f64>,
    /// Train on the features alone, without sensitive-attribute indicator columns.
    #[arg(long = "no-sensitive-feature")]
    no_sensitive_feature: bool,
    /// NDJSON metrics destination.
    #[arg(long)]
    out: PathBuf,
    /// Model checkpoint destination; defaults to the metrics path with a
    /// `.checkpoint.json` extension.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Eqopp,
    Eqodds,
    Dp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Fairbatch,
    Uniform,
    Cutting,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompositionArg {
    Iid,
    Stratified,
}

impl TrainArgs {
    fn config(&self) -> RunConfig {
        let data = match &self.data {
            Some(path) => DataSource::Csv {
                path: path.clone(),
                label_column: self.label_col.clone(),
                sensitive_column: self.sensitive_col.clone(),
            },
            None => DataSource::Synthetic { n: self.synthetic_n },
        };
        RunConfig {
            data,
            criterion: match self.criterion {
                CriterionArg::Eqopp => CriterionKind::EqualOpportunity,
                CriterionArg::Eqodds => CriterionKind::EqualizedOdds,
                CriterionArg::Dp => CriterionKind::DemographicParity,
            },
            sampler: match self.sampler {
                SamplerArg::Fairbatch => Sampler::FairBatch,
                SamplerArg::Uniform => Sampler::Uniform,
                SamplerArg::Cutting => Sampler::Cutting,
            },
            alpha: self.alpha,
            threshold: self.threshold,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
            train_fraction: self.split,
            update_every: self.update_every,
            composition: match self.composition {
                CompositionArg::Iid => Composition::Iid,
                CompositionArg::Stratified => Composition::Stratified,
            },
            loss_weighting: self.loss_weighting,
            sensitive_as_feature: !self.no_sensitive_feature,
        }
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.with_extension("checkpoint.json"))
    }
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => {
            Box::new(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { n, seed, out } => {
            let d = runner::run_generate(n, seed, &out)?;
            eprintln!("wrote {} rows to {}", d.len(), out.display());
        }
        Command::Train(args) => {
            let cfg = args.config();
            let checkpoint = args.checkpoint_path();
            let out = runner::run_train_to(&cfg, &args.out, &checkpoint)?;
            let last = out.last();
            let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            eprintln!(
                "epoch {}: test accuracy {}, EO {}, ED {}, DP {}, lambda {:?}",
                last.epoch,
                show(last.test_accuracy),
                show(last.eo),
                show(last.ed),
                show(last.dp),
                last.lambda
            );
        }
        Command::Sweep { fixture, grid, out } => {
            let Some(problem) = runner::lab_problem(&fixture) else {
                bail!("unknown fixture `{fixture}`");
            };
            let surface = runner::run_sweep(&problem, grid)?;
            let mut w = open_output(out.as_deref())?;
            runner::write_surface_csv(&surface, &mut w)?;
            w.flush()?;
        }
        Command::Verify { json, inject_w_shape, out } => {
            let report = runner::run_verify(&SuiteConfig { inject_w_shape, ..SuiteConfig::default() })?;
            let mut w = open_output(out.as_deref())?;
            if json {
                serde_json::to_writer_pretty(&mut w, &report)?;
                writeln!(w)?;
            } else {
                write!(w, "{}", runner::render_report(&report))?;
            }
            w.flush()?;
            if !report.passed() {
                bail!("{} theory check(s) failed", report.failures().count());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
