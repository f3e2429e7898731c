//! Command-line driver for quantile BVAR forecasting experiments.
//!
//! Every subcommand reads the same TOML experiment config. `run` does the
//! whole recursive experiment; the other subcommands expose its stages one
//! at a time. Failures exit nonzero with a one-line JSON summary on stderr.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use qbvar::combine::{write_curve_csv, write_weights_csv};
use qbvar::data::io::write_panel;
use qbvar::data::YearMonth;
use qbvar::experiment::{
    combine_all, forecast_bytes, ratio_outputs, report, run_recursive, score_windows,
    scores_bytes, ExperimentConfig, ModelDraws, ModelSpec, FORECASTS_FILE, RATIOS_FILE,
    RATIOS_TEXT_FILE, SCORES_FILE,
};
use qbvar::forecast::{merge_quantile_sets, read_forecasts, write_forecasts, QuantileForecastSet};
use qbvar::qbvar::{read_draws, write_draws, ErrorModel};

#[derive(Parser)]
#[command(
    name = "qbvar",
    version,
    about = "Quantile Bayesian VAR forecasting experiments",
    after_help = "Environment: QBVAR_THREADS sets the worker count, QBVAR_OUTPUT_DIR the run directory. RUST_LOG sets log verbosity."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the transformed estimation panel from the raw data.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        /// Panel file to write.
        #[arg(long)]
        output: PathBuf,
        /// Use only rows dated on or before this month.
        #[arg(long)]
        through: Option<YearMonth>,
    },
    /// Estimate models at one origin and dump their posterior draws.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        origin: YearMonth,
        /// Restrict to one model id.
        #[arg(long)]
        model: Option<String>,
        /// Directory for the draw dumps.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Turn draw dumps into quantile forecasts.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        /// Draw dumps written by `estimate`.
        #[arg(long, required = true, num_args = 1..)]
        draws: Vec<PathBuf>,
        /// Model id; inferred when the config has one model of the dump's kind.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score forecasts over the configured windows and write ratio tables.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Combine forecasts with the configured strategies.
    Combine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the full recursive experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; overrides the config and the environment.
        #[arg(long)]
        threads: Option<usize>,
        /// Run directory; overrides the config and the environment.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Render the ratio tables of a completed run.
    Report {
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<qbvar::Error>())
                .map_or("error", |q| q.kind());
            let message = format!("{e:#}");
            let summary = serde_json::json!({ "error": { "kind": kind, "message": message } });
            eprintln!("{summary}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    config.apply_overrides(|k| std::env::var(k).ok())?;
    Ok(config)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest { config, output, through } => {
            let config = load_config(&config)?;
            let mut raw = config.load_raw()?;
            if let Some(t) = through {
                raw = raw.truncate_through(t);
            }
            let panel = config.prepare_panel(&raw)?;
            if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_panel(&panel, &output)?;
            log::info!("wrote {} rows to {}", panel.len(), output.display());
        }
        Command::Estimate { config, origin, model, out_dir } => {
            let config = load_config(&config)?;
            let raw = config.load_raw()?;
            let draws = config.estimate_origin(&raw, origin, model.as_deref())?;
            if draws.is_empty() {
                bail!("nothing to estimate: the selected models have no posterior");
            }
            for d in &draws {
                let mut buf = Vec::new();
                write_draws(&d.draws, Some(d.origin), &mut buf)?;
                let path = out_dir.join(d.file_name());
                write_file(&path, &buf)?;
                println!("{}", path.display());
            }
        }
        Command::Forecast { config, draws, model, output } => {
            let config = load_config(&config)?;
            let raw = config.load_raw()?;
            let mut grouped: BTreeMap<(String, YearMonth), Vec<QuantileForecastSet>> = BTreeMap::new();
            for path in &draws {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let (key, set) = read_draws(file).with_context(|| format!("reading {}", path.display()))?;
                let origin = key
                    .origin
                    .ok_or_else(|| anyhow!("{} does not record a forecast origin", path.display()))?;
                let model_id = match &model {
                    Some(m) => m.clone(),
                    None => infer_model(&config, set.meta.model)?,
                };
                let d = ModelDraws { model_id, quantile: key.quantile, origin, draws: set };
                let y = config.estimation_sample(&raw, origin)?;
                let f = config.forecast_from_draws(&y, &d)?;
                grouped.entry((d.model_id.clone(), origin)).or_default().push(f);
            }
            let sets = grouped
                .into_values()
                .map(merge_quantile_sets)
                .collect::<qbvar::Result<Vec<_>>>()?;
            if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_forecasts(&output, &sets)?;
        }
        Command::Evaluate { config, forecasts, out_dir } => {
            let config = load_config(&config)?;
            let realizations = config.realizations(&config.load_raw()?)?;
            let sets = read_forecasts(&forecasts)?;
            let windows = score_windows(&config, &sets, &realizations)?;
            write_file(&out_dir.join(SCORES_FILE), &scores_bytes(&windows)?)?;
            let (csv, text) = ratio_outputs(&windows)?;
            write_file(&out_dir.join(RATIOS_FILE), &csv)?;
            write_file(&out_dir.join(RATIOS_TEXT_FILE), text.as_bytes())?;
            print!("{text}");
        }
        Command::Combine { config, forecasts, out_dir } => {
            let config = load_config(&config)?;
            let realizations = config.realizations(&config.load_raw()?)?;
            let sets = read_forecasts(&forecasts)?;
            let combined = combine_all(&config, &sets, &realizations)?;
            write_file(&out_dir.join(FORECASTS_FILE), &forecast_bytes(&combined.forecasts)?)?;
            for (pair, series) in &combined.weights {
                let mut buf = Vec::new();
                write_weights_csv(series, &mut buf)?;
                write_file(&out_dir.join(format!("weights_{pair}.csv")), &buf)?;
            }
            for (pair, points) in &combined.curves {
                let mut buf = Vec::new();
                write_curve_csv(points, &mut buf)?;
                write_file(&out_dir.join(format!("lambda_curve_{pair}.csv")), &buf)?;
            }
        }
        Command::Run { config, threads, output_dir } => {
            let mut config = load_config(&config)?;
            if let Some(n) = threads {
                config.threads = (n > 0).then_some(n);
            }
            if let Some(dir) = output_dir {
                config.output_dir = dir;
            }
            let result = run_recursive(&config)?;
            let m = &result.manifest;
            println!(
                "{} origins, {} failed; results in {}",
                m.origins.len(),
                m.failed_origins.len(),
                result.output_dir.display()
            );
        }
        Command::Report { run_dir } => {
            print!("{}", report(&run_dir)?);
        }
    }
    Ok(())
}

/// The id of the only configured model estimated under `kind`.
fn infer_model(config: &ExperimentConfig, kind: ErrorModel) -> Result<String> {
    let matching: Vec<&str> = config
        .models
        .iter()
        .filter(|m| match (m, kind) {
            (ModelSpec::Qbvar { .. }, ErrorModel::AsymmetricLaplace { .. }) => true,
            (ModelSpec::Bvar { .. }, ErrorModel::Gaussian) => true,
            _ => false,
        })
        .map(ModelSpec::id)
        .collect();
    match matching.as_slice() {
        [one] => Ok(one.to_string()),
        [] => bail!("no configured model matches the dump; pass --model"),
        _ => bail!("several configured models match the dump; pass --model"),
    }
}
