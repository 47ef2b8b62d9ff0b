use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use epf_core::data::{load_dataset, write_dataset, DEFAULT_CALIBRATION_DAYS, DEFAULT_TEST_DAYS};
use epf_core::eval::{pvalue_matrix, write_gw_matrix, ForecastSeries};
use epf_core::experiment::{
    evaluate_run, resume_with_limit, run_experiment, run_hyperopt, DatasetSummary, EvaluationReport, ModelKind,
    RunConfig,
};
use epf_core::features::{Encoding, FeatureSpec};
use epf_core::hyperopt::SpacePreset;
use epf_core::lear::Criterion;
use epf_core::synthetic::{generate, SyntheticConfig};

#[derive(Parser)]
#[command(name = "epf", version, about = "Day-ahead electricity price forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print a summary.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        market: String,
    },
    /// Run only the hyperparameter search for a network model.
    Hyperopt {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "dnn24")]
        mode: NetworkMode,
    },
    /// Run the rolling forecasting experiment (continues an existing run
    /// directory with the same configuration).
    Forecast {
        #[command(flatten)]
        run: RunArgs,
        /// Model to run; repeat for several. Defaults to all four.
        #[arg(long = "model")]
        models: Vec<ModelKind>,
        /// Stop after this many test days per model.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Continue an interrupted run from its directory.
    Resume {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Recompute metrics.csv and gw_matrix.csv for a finished run.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise forecast comparison of arbitrary forecast files.
    Gw {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        market: String,
        /// Forecast files (`date,h1..h24`); the model name is the file stem
        /// without a `forecasts_` prefix.
        #[arg(long = "forecasts", num_args = 2.., required = true)]
        forecasts: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        norm: u32,
        #[arg(long, default_value_t = 1)]
        lags: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset with weekly seasonality and two drivers.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 600)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NetworkMode {
    Dnn24,
    Dnn1,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Aic,
    Aicc,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    market: String,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Search trials per network (per hour for dnn1).
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_DAYS)]
    calibration_days: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_DAYS)]
    test_days: usize,
    /// Narrow layer widths for short windows and quick runs.
    #[arg(long)]
    small: bool,
    #[arg(long, default_value_t = 1)]
    recalibration_interval: usize,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    gw_lags: usize,
    /// Information criterion for the LEAR penalty.
    #[arg(long, value_enum, default_value = "aicc")]
    lear_criterion: CriterionArg,
    /// Keep per-window coefficients and networks under models/.
    #[arg(long)]
    save_models: bool,
}

impl RunArgs {
    fn config(&self, models: Vec<ModelKind>) -> RunConfig {
        let mut c = RunConfig::new(&self.data, &self.market, &self.out);
        if !models.is_empty() {
            c.models = models;
        }
        c.seed = self.seed;
        c.hyperopt_trials = self.trials;
        c.calibration_days = self.calibration_days;
        c.test_days = self.test_days;
        c.space = if self.small { SpacePreset::Small } else { SpacePreset::Default };
        c.recalibration_interval = self.recalibration_interval;
        if let Some(e) = self.max_epochs {
            c.train.max_epochs = e;
        }
        c.gw_lags = self.gw_lags;
        c.lear.criterion = match self.lear_criterion {
            CriterionArg::Aic => Criterion::Aic,
            CriterionArg::Aicc => Criterion::Aicc,
        };
        c.save_models = self.save_models;
        c
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Prepare { data, market } => prepare(&data, &market),
        Command::Hyperopt { run, mode } => {
            let model = match mode {
                NetworkMode::Dnn24 => ModelKind::Dnn24,
                NetworkMode::Dnn1 => ModelKind::Dnn1,
            };
            let found = run_hyperopt(&run.config(vec![model]), model)?;
            serde_json::to_writer_pretty(io::stdout().lock(), &found)?;
            println!();
            Ok(())
        }
        Command::Forecast { run, models, limit } => {
            let config = RunConfig { window_limit: limit, ..run.config(models) };
            print_report(&run_experiment(&config)?)
        }
        Command::Resume { out, limit } => print_report(&resume_with_limit(&out, limit)?),
        Command::Evaluate { out } => print_report(&evaluate_run(&out)?),
        Command::Gw { data, market, forecasts, norm, lags, out } => gw(&data, &market, &forecasts, norm, lags, out),
        Command::Synth { out, days, seed } => {
            let ds = generate(&SyntheticConfig { days, seed, ..Default::default() });
            write_dataset(&ds, BufWriter::new(File::create(&out)?))?;
            println!("wrote {days} days to {}", out.display());
            Ok(())
        }
    }
}

fn prepare(data: &Path, market: &str) -> Result<()> {
    let ds = load_dataset(data, market).with_context(|| format!("loading {}", data.display()))?;
    let s = DatasetSummary::of(&ds);
    println!("market        {}", s.market);
    println!("days          {} ({} to {})", s.days, s.first_date, s.last_date);
    println!("fingerprint   {}", s.fingerprint);
    println!("dnn inputs    {}", FeatureSpec::all(Encoding::DnnMultiValue).len());
    println!("lear inputs   {}", FeatureSpec::all(Encoding::LearOneHot).len());
    let usable = ds.len().saturating_sub(DEFAULT_TEST_DAYS);
    if usable < DEFAULT_CALIBRATION_DAYS {
        println!("note: shorter than the default {DEFAULT_CALIBRATION_DAYS}+{DEFAULT_TEST_DAYS} days; pass --calibration-days/--test-days");
    }
    Ok(())
}

fn gw(data: &Path, market: &str, files: &[PathBuf], norm: u32, lags: usize, out: Option<PathBuf>) -> Result<()> {
    let ds = load_dataset(data, market)?;
    let mut series = Vec::new();
    for f in files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let id = stem.strip_prefix("forecasts_").unwrap_or(stem);
        let file = File::open(f).with_context(|| format!("opening {}", f.display()))?;
        series.push(ForecastSeries::read_csv(id, &ds, file).with_context(|| format!("reading {}", f.display()))?);
    }
    let models: Vec<String> = series.iter().map(|s| s.model_id.clone()).collect();
    let matrix = pvalue_matrix(&ds, &series, norm, lags)?;
    match out {
        Some(p) => write_gw_matrix(&models, &matrix, BufWriter::new(File::create(p)?))?,
        None => write_gw_matrix(&models, &matrix, io::stdout().lock())?,
    }
    Ok(())
}

fn print_report(r: &EvaluationReport) -> Result<()> {
    let mut out = io::stdout().lock();
    if !r.complete {
        for (m, n) in r.models.iter().zip(&r.rows) {
            writeln!(out, "{m}: {n} test days done")?;
        }
        writeln!(out, "run incomplete; continue with `epf resume --out {}`", r.run_dir.display())?;
        return Ok(());
    }
    writeln!(out, "{:<8} {:>8}", "model", "rMAE")?;
    for m in &r.models {
        let Some(v) = r.rmae(m, "joint") else { bail!("no joint metric for {m}") };
        writeln!(out, "{m:<8} {v:>8.4}")?;
    }
    for a in &r.models {
        for b in &r.models {
            if let Some(g) = r.gw(a, b) {
                if g.p_value < 0.05 && g.statistic.is_finite() {
                    writeln!(out, "{a} vs {b}: p = {:.4} ({:?} better)", g.p_value, g.better)?;
                }
            }
        }
    }
    writeln!(out, "results in {}", r.run_dir.display())?;
    Ok(())
}
