//! Recursive out-of-sample experiment.
//!
//! At every forecast origin the estimation panel is rebuilt from the raw rows
//! dated on or before the origin, so no model can see later data. Each model
//! is re-estimated on that expanding window and its quantile forecasts kept.
//! Scores, ratio tables and combinations are computed once every origin is
//! done. Results go to a run directory whose manifest lists each file with
//! its SHA-256 digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bvar::{run_bvar_chain, BvarConfig};
use crate::combine::{
    combine_recursive, lambda_curve, write_curve_csv, write_weights_csv, CombinationWeightSeries,
    CurvePoint, Strategy,
};
use crate::data::io::{read_panel, read_tcodes};
use crate::data::{build_lag_design, deflate, splice_by_growth, TimeSeriesPanel, YearMonth};
use crate::dist::RngSeed;
use crate::eval::{
    average_qs, crossing_summary, qs_ratio, render_ratio_tables, write_ratio_csv, DateRule,
    EventWindow, Level, MissingPolicy, RatioTable, ScoreCell, ScoreKey, ScoreTable,
};
use crate::forecast::{
    merge_quantile_sets, predictive_quantile_forecast, qbvar_quantile_forecast,
    random_walk_forecast, simulate_paths, write_forecasts_to, QuantileForecastSet,
};
use crate::qbvar::{
    run_chain, write_draws, CoefficientPrior, McmcSchedule, PosteriorDrawSet, PriorConfig,
    QbvarConfig, QuantileLevel, SigmaUpdate,
};
use crate::{Error, Result};

/// Share of origins allowed to fail before the whole run fails.
pub const MAX_FAILED_ORIGIN_SHARE: f64 = 0.01;

pub const THREADS_ENV: &str = "QBVAR_THREADS";
pub const OUTPUT_DIR_ENV: &str = "QBVAR_OUTPUT_DIR";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const RATIOS_FILE: &str = "ratios.csv";
pub const RATIOS_TEXT_FILE: &str = "ratios.txt";
pub const CONFIG_FILE: &str = "config.toml";

/// Builds the real target price before transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealPrice {
    /// Price index dividing the nominal target, normalized to its last value.
    #[serde(default)]
    pub deflator: Option<String>,
    /// Series whose growth rates extend the target back over its missing head.
    #[serde(default)]
    pub splice_donor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// One quantile VAR per level of the experiment's quantile grid.
    Qbvar {
        #[serde(default = "qbvar_id")]
        id: String,
        #[serde(default = "qbvar_lags")]
        lags: usize,
        #[serde(default = "one")]
        factors: usize,
        #[serde(default)]
        coefficient_prior: CoefficientPrior,
        #[serde(default)]
        sigma_update: SigmaUpdate,
    },
    /// Gaussian factor BVAR; quantiles taken from its predictive distribution.
    Bvar {
        #[serde(default = "bvar_id")]
        id: String,
        #[serde(default = "bvar_lags")]
        lags: usize,
        #[serde(default = "one")]
        factors: usize,
        #[serde(default)]
        coefficient_prior: CoefficientPrior,
    },
    /// No-change forecast of the growth rate.
    Rw {
        #[serde(default = "rw_id")]
        id: String,
    },
}

fn qbvar_id() -> String {
    "qbvar".into()
}
fn bvar_id() -> String {
    "bvar".into()
}
fn rw_id() -> String {
    "rw".into()
}
fn qbvar_lags() -> usize {
    4
}
fn bvar_lags() -> usize {
    12
}
fn one() -> usize {
    1
}

impl ModelSpec {
    pub fn id(&self) -> &str {
        match self {
            ModelSpec::Qbvar { id, .. } | ModelSpec::Bvar { id, .. } | ModelSpec::Rw { id } => id,
        }
    }

    pub fn lags(&self) -> Option<usize> {
        match self {
            ModelSpec::Qbvar { lags, .. } | ModelSpec::Bvar { lags, .. } => Some(*lags),
            ModelSpec::Rw { .. } => None,
        }
    }
}

/// Combinations of `model` (weight `λ`) with `benchmark` (weight `1 - λ`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinationSpec {
    pub model: String,
    pub benchmark: String,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
}

fn default_strategies() -> Vec<Strategy> {
    vec![
        Strategy::Fixed { lambda: 0.5 },
        Strategy::Performance { window: 50 },
        Strategy::Optimal { window: 75 },
    ]
}

impl CombinationSpec {
    fn pair_label(&self) -> String {
        format!("{}_vs_{}", self.model, self.benchmark)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Delimited panel of raw levels.
    pub data: PathBuf,
    /// Transformation-code sidecar; series without a code stay untransformed.
    #[serde(default)]
    pub tcodes: Option<PathBuf>,
    /// Forecast target, the first variable of every system.
    pub target: String,
    /// The other endogenous variables, in order.
    #[serde(default)]
    pub companions: Vec<String>,
    #[serde(default)]
    pub real_price: Option<RealPrice>,
    pub models: Vec<ModelSpec>,
    /// Denominator of every ratio table.
    pub benchmark: String,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    #[serde(default = "default_max_horizon")]
    pub max_horizon: usize,
    /// Forecast origins span these windows; each gets its own score table.
    #[serde(default = "default_evaluation_windows")]
    pub evaluation_windows: Vec<EventWindow>,
    #[serde(default = "default_evaluation_rule")]
    pub evaluation_rule: DateRule,
    #[serde(default)]
    pub event_windows: Vec<EventWindow>,
    #[serde(default)]
    pub event_rule: DateRule,
    #[serde(default)]
    pub combinations: Vec<CombinationSpec>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub mcmc: McmcSchedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Keep the posterior draws of every origin in the run directory.
    #[serde(default)]
    pub cache_draws: bool,
    /// Grid resolution of the weight curves.
    #[serde(default = "default_curve_steps")]
    pub curve_steps: usize,
}

fn default_quantiles() -> Vec<f64> {
    vec![0.1, 0.5, 0.9]
}
fn default_max_horizon() -> usize {
    12
}
fn default_evaluation_rule() -> DateRule {
    DateRule::Origin
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("run")
}
fn default_curve_steps() -> usize {
    100
}

fn default_evaluation_windows() -> Vec<EventWindow> {
    let ym = |y, m| YearMonth::new(y, m).expect("valid month");
    vec![
        EventWindow { label: "2008M1-2025M2".into(), start: ym(2008, 1), end: ym(2025, 2) },
        EventWindow { label: "2013M1-2025M2".into(), start: ym(2013, 1), end: ym(2025, 2) },
    ]
}

/// Posterior draws of one model (and quantile level) at one origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDraws {
    pub model_id: String,
    pub quantile: Option<f64>,
    pub origin: YearMonth,
    pub draws: PosteriorDrawSet,
}

impl ModelDraws {
    /// File name used when draws are cached: `qbvar_2010-01_q0.1.bin`.
    pub fn file_name(&self) -> String {
        match self.quantile {
            Some(q) => format!("{}_{}_q{}.bin", self.model_id, self.origin, q),
            None => format!("{}_{}.bin", self.model_id, self.origin),
        }
    }
}

/// Everything produced at one origin.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginBundle {
    pub origin: YearMonth,
    /// One set per model, all quantile levels merged.
    pub forecasts: Vec<QuantileForecastSet>,
    pub draws: Vec<ModelDraws>,
}

/// One unit of estimation work at an origin.
#[derive(Debug, Clone, Copy)]
enum Task {
    Quantile { model: usize, level: usize },
    Gaussian { model: usize },
    RandomWalk { model: usize },
}

impl ExperimentConfig {
    /// Parses a TOML config. Relative `data`, `tcodes` and `output_dir` paths
    /// are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        config.data = resolve(&config.data);
        config.tcodes = config.tcodes.as_deref().map(resolve);
        config.output_dir = resolve(&config.output_dir);
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::format("experiment config", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("experiment config", e))
    }

    /// Applies the thread-count and output-directory overrides found by
    /// `lookup`, normally `std::env::var`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(raw) = lookup(THREADS_ENV) {
            let n: usize = raw
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV}=`{raw}` is not a count")))?;
            self.threads = (n > 0).then_some(n);
        }
        if let Some(dir) = lookup(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidParameter(m));
        if self.models.is_empty() {
            return invalid("no models configured".into());
        }
        let mut ids: Vec<&str> = self.models.iter().map(ModelSpec::id).collect();
        for spec in &self.combinations {
            for s in &spec.strategies {
                s.validate()?;
            }
            for name in [&spec.model, &spec.benchmark] {
                if !ids.contains(&name.as_str()) {
                    return invalid(format!("combination refers to unknown model `{name}`"));
                }
            }
        }
        let combo_ids: Vec<String> = self.combination_ids();
        ids.extend(combo_ids.iter().map(String::as_str));
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
                return invalid(format!("model id `{id}` must be non-empty ASCII letters, digits, `_`, `-` or `.`"));
            }
            if ids[..i].contains(id) {
                return invalid(format!("model id `{id}` is used twice"));
            }
        }
        if !ids.contains(&self.benchmark.as_str()) {
            return invalid(format!("benchmark `{}` is not a configured model", self.benchmark));
        }
        let system = self.system();
        for (i, name) in system.iter().enumerate() {
            if system[..i].contains(name) {
                return invalid(format!("series `{name}` appears twice in the system"));
            }
        }
        if self.quantiles.is_empty() {
            return invalid("empty quantile grid".into());
        }
        for (i, &q) in self.quantiles.iter().enumerate() {
            QuantileLevel::new(q)?;
            if i > 0 && q <= self.quantiles[i - 1] {
                return invalid("quantile grid must be strictly increasing".into());
            }
        }
        if self.max_horizon == 0 {
            return invalid("max_horizon must be at least 1".into());
        }
        if self.evaluation_windows.is_empty() {
            return invalid("no evaluation windows".into());
        }
        let mut labels: Vec<&str> = Vec::new();
        for w in self.evaluation_windows.iter().chain(&self.event_windows) {
            EventWindow::new(w.label.clone(), w.start, w.end)?;
            if labels.contains(&w.label.as_str()) {
                return invalid(format!("window label `{}` is used twice", w.label));
            }
            labels.push(&w.label);
        }
        for m in &self.models {
            match m {
                ModelSpec::Qbvar { lags, factors, coefficient_prior, sigma_update, .. } => {
                    let mut c = QbvarConfig::new(QuantileLevel::new(self.quantiles[0])?);
                    c.lags = *lags;
                    c.factors = *factors;
                    c.prior = self.prior;
                    c.coefficient_prior = *coefficient_prior;
                    c.sigma_update = *sigma_update;
                    c.mcmc = self.mcmc;
                    c.validate()?;
                }
                ModelSpec::Bvar { lags, factors, coefficient_prior, .. } => {
                    let c = BvarConfig {
                        lags: *lags,
                        factors: *factors,
                        prior: self.prior,
                        coefficient_prior: *coefficient_prior,
                        mcmc: self.mcmc,
                        seed: RngSeed(self.seed),
                    };
                    c.validate()?;
                }
                ModelSpec::Rw { .. } => {}
            }
        }
        Ok(())
    }

    /// Target followed by the companion series.
    pub fn system(&self) -> Vec<String> {
        std::iter::once(self.target.clone())
            .chain(self.companions.iter().cloned())
            .collect()
    }

    /// Ids of the combined forecasts, in configuration order.
    pub fn combination_ids(&self) -> Vec<String> {
        self.combinations
            .iter()
            .flat_map(|c| c.strategies.iter().map(Strategy::label))
            .collect()
    }

    /// Model ids followed by combination ids.
    pub fn all_ids(&self) -> Vec<String> {
        self.models
            .iter()
            .map(|m| m.id().to_string())
            .chain(self.combination_ids())
            .collect()
    }

    pub fn horizons(&self) -> Vec<usize> {
        (1..=self.max_horizon).collect()
    }

    /// The panel named by `data`, with codes from `tcodes`.
    pub fn load_raw(&self) -> Result<TimeSeriesPanel> {
        let codes = self.tcodes.as_deref().map(read_tcodes).transpose()?;
        read_panel(&self.data, codes.as_ref())
    }

    /// Real-price construction, column selection and transformation. The
    /// first column of the result is the target.
    pub fn prepare_panel(&self, raw: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
        let mut panel = raw.clone();
        if let Some(rp) = &self.real_price {
            let code = panel.tcode(&self.target)?;
            let mut values = panel.column(&self.target)?.to_vec();
            if let Some(donor) = &rp.splice_donor {
                values = splice_observed(&values, panel.column(donor)?)?;
            }
            if let Some(cpi) = &rp.deflator {
                values = deflate_observed(&values, panel.column(cpi)?)?;
            }
            panel.set_column(&self.target, values, code)?;
        }
        let names = self.system();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        panel.select(&refs)?.transform()
    }

    /// Transformed target values by date, from the full panel.
    pub fn realizations(&self, raw: &TimeSeriesPanel) -> Result<BTreeMap<YearMonth, f64>> {
        let prepared = self.prepare_panel(raw)?;
        Ok(target_values(&prepared))
    }

    /// Monthly origins from the earliest evaluation-window start to the
    /// latest end, stopping one month before the last transformed date.
    pub fn origins(&self, prepared: &TimeSeriesPanel) -> Result<Vec<YearMonth>> {
        let (Some(first_data), Some(last_data)) = (prepared.first_date(), prepared.last_date()) else {
            return Err(Error::Empty("transformed panel".into()));
        };
        let start = self.evaluation_windows.iter().map(|w| w.start).min().expect("validated");
        let end = self.evaluation_windows.iter().map(|w| w.end).max().expect("validated");
        let end = end.min(last_data.add_months(-1));
        if start <= first_data || start > end {
            return Err(Error::InvalidParameter(format!(
                "evaluation windows {start} to {end} do not fit the data ({first_data} to {last_data})"
            )));
        }
        Ok((0..=start.months_until(end)).map(|k| start.add_months(k)).collect())
    }

    fn tasks(&self) -> Vec<Task> {
        let mut out = Vec::new();
        for (model, spec) in self.models.iter().enumerate() {
            match spec {
                ModelSpec::Qbvar { .. } => {
                    out.extend((0..self.quantiles.len()).map(|level| Task::Quantile { model, level }))
                }
                ModelSpec::Bvar { .. } => out.push(Task::Gaussian { model }),
                ModelSpec::Rw { .. } => out.push(Task::RandomWalk { model }),
            }
        }
        out
    }

    fn task_seed(&self, origin: YearMonth, model: usize, level: usize, stage: u64) -> RngSeed {
        RngSeed(self.seed).derive(&[origin.index() as u64, model as u64, level as u64, stage])
    }

    /// Transformed data through `origin`, as a `T×n` matrix. Only rows dated
    /// on or before the origin are read.
    pub fn estimation_sample(&self, raw: &TimeSeriesPanel, origin: YearMonth) -> Result<DMatrix<f64>> {
        let window = raw.truncate_through(origin);
        if window.last_date() != Some(origin) {
            return Err(Error::Empty(format!("no data dated {origin}")));
        }
        self.prepare_panel(&window)?.to_matrix()
    }

    fn model_index(&self, id: &str) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m.id() == id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown model `{id}`")))
    }

    fn level_index(&self, q: f64) -> Result<usize> {
        self.quantiles
            .iter()
            .position(|&g| crate::forecast::same_level(g, q))
            .ok_or_else(|| Error::InvalidParameter(format!("quantile {q} is not on the grid")))
    }

    fn estimate_task(&self, y: &DMatrix<f64>, origin: YearMonth, task: Task) -> Result<Option<ModelDraws>> {
        let names = self.system();
        match task {
            Task::RandomWalk { .. } => Ok(None),
            Task::Quantile { model, level } => {
                let ModelSpec::Qbvar { id, lags, factors, coefficient_prior, sigma_update } = &self.models[model] else {
                    unreachable!("quantile task on a non-quantile model")
                };
                let q = self.quantiles[level];
                let design = build_lag_design(y, *lags, names)?;
                let config = QbvarConfig {
                    quantile: QuantileLevel::new(q)?,
                    lags: *lags,
                    factors: *factors,
                    prior: self.prior,
                    coefficient_prior: *coefficient_prior,
                    sigma_update: *sigma_update,
                    mcmc: self.mcmc,
                    seed: self.task_seed(origin, model, level, 0),
                };
                Ok(Some(ModelDraws {
                    model_id: id.clone(),
                    quantile: Some(q),
                    origin,
                    draws: run_chain(&design, &config)?,
                }))
            }
            Task::Gaussian { model } => {
                let ModelSpec::Bvar { id, lags, factors, coefficient_prior } = &self.models[model] else {
                    unreachable!("gaussian task on a non-gaussian model")
                };
                let design = build_lag_design(y, *lags, names)?;
                let config = BvarConfig {
                    lags: *lags,
                    factors: *factors,
                    prior: self.prior,
                    coefficient_prior: *coefficient_prior,
                    mcmc: self.mcmc,
                    seed: self.task_seed(origin, model, 0, 0),
                };
                Ok(Some(ModelDraws {
                    model_id: id.clone(),
                    quantile: None,
                    origin,
                    draws: run_bvar_chain(&design, &config)?,
                }))
            }
        }
    }

    /// Quantile forecasts implied by `draws`, estimated on `y`.
    pub fn forecast_from_draws(&self, y: &DMatrix<f64>, draws: &ModelDraws) -> Result<QuantileForecastSet> {
        let model = self.model_index(&draws.model_id)?;
        let level = match draws.quantile {
            Some(q) => self.level_index(q)?,
            None => 0,
        };
        let p = draws.draws.meta.lags;
        if y.nrows() < p {
            return Err(Error::InsufficientObservations { needed: p, have: y.nrows() });
        }
        let tail = y.rows(y.nrows() - p, p).into_owned();
        let mut rng = self.task_seed(draws.origin, model, level, 1).rng();
        let paths = simulate_paths(&draws.draws, &tail, self.max_horizon, &mut rng)?;
        match draws.quantile {
            Some(q) => qbvar_quantile_forecast(&draws.model_id, draws.origin, &paths, 0, q),
            None => predictive_quantile_forecast(&draws.model_id, draws.origin, &paths, 0, &self.quantiles),
        }
    }

    /// Estimates the models selected by `model` (all when `None`) at `origin`.
    pub fn estimate_origin(
        &self,
        raw: &TimeSeriesPanel,
        origin: YearMonth,
        model: Option<&str>,
    ) -> Result<Vec<ModelDraws>> {
        let y = self.estimation_sample(raw, origin)?;
        let wanted = model.map(|m| self.model_index(m)).transpose()?;
        let tasks: Vec<Task> = self
            .tasks()
            .into_iter()
            .filter(|t| wanted.is_none_or(|w| task_model(*t) == w))
            .collect();
        let results: Vec<Result<Option<ModelDraws>>> =
            tasks.par_iter().map(|&t| self.estimate_task(&y, origin, t)).collect();
        let mut out = Vec::new();
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Estimates and forecasts every model at `origin`.
    pub fn forecast_origin(&self, raw: &TimeSeriesPanel, origin: YearMonth) -> Result<OriginBundle> {
        let y = self.estimation_sample(raw, origin)?;
        let tasks = self.tasks();
        let results: Vec<Result<(usize, QuantileForecastSet, Option<ModelDraws>)>> = tasks
            .par_iter()
            .map(|&task| {
                let model = task_model(task);
                if let Task::RandomWalk { .. } = task {
                    let id = self.models[model].id();
                    return Ok((model, random_walk_forecast(id, origin, &self.horizons(), &self.quantiles), None));
                }
                let draws = self.estimate_task(&y, origin, task)?.expect("estimated model");
                let set = self.forecast_from_draws(&y, &draws)?;
                Ok((model, set, Some(draws)))
            })
            .collect();
        let mut per_model: Vec<Vec<QuantileForecastSet>> = vec![Vec::new(); self.models.len()];
        let mut draws = Vec::new();
        for r in results {
            let (model, set, d) = r?;
            per_model[model].push(set);
            if self.cache_draws {
                draws.extend(d);
            }
        }
        let forecasts = per_model
            .into_iter()
            .map(merge_quantile_sets)
            .collect::<Result<Vec<_>>>()?;
        Ok(OriginBundle { origin, forecasts, draws })
    }
}

fn task_model(task: Task) -> usize {
    match task {
        Task::Quantile { model, .. } | Task::Gaussian { model } | Task::RandomWalk { model } => model,
    }
}

fn target_values(prepared: &TimeSeriesPanel) -> BTreeMap<YearMonth, f64> {
    let target = prepared.column(&prepared.names()[0]).expect("first column exists");
    prepared.dates().iter().copied().zip(target.iter().copied()).collect()
}

fn first_observed(values: &[f64]) -> usize {
    values.iter().position(|v| !v.is_nan()).unwrap_or(values.len())
}

/// Deflates from the first date where both series are observed; earlier
/// values stay missing.
fn deflate_observed(nominal: &[f64], cpi: &[f64]) -> Result<Vec<f64>> {
    let start = first_observed(nominal).max(first_observed(cpi));
    let mut out = vec![f64::NAN; nominal.len()];
    if start < nominal.len() {
        let real = deflate(&nominal[start..], &cpi[start..])?;
        out[start..].copy_from_slice(&real);
    }
    Ok(out)
}

/// Splices back only as far as the donor is observed.
fn splice_observed(target: &[f64], donor: &[f64]) -> Result<Vec<f64>> {
    let start = first_observed(donor).min(first_observed(target));
    let mut out = target.to_vec();
    if start < target.len() {
        let spliced = splice_by_growth(&target[start..], &donor[start..])?;
        out[start..].copy_from_slice(&spliced);
    }
    Ok(out)
}

/// Runs `f` on a pool of `threads` workers, or the global pool.
fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Evaluation,
    Event,
}

/// Scores and ratios over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScores {
    pub window: EventWindow,
    pub kind: WindowKind,
    pub rule: DateRule,
    pub table: ScoreTable,
    /// Every model and combination over the benchmark, in configuration order.
    pub ratios: Vec<RatioTable>,
}

impl WindowScores {
    fn title(&self) -> String {
        let kind = match self.kind {
            WindowKind::Evaluation => "Evaluation window",
            WindowKind::Event => "Event window",
        };
        let rule = match self.rule {
            DateRule::Origin => "origin",
            DateRule::Realization => "realization",
        };
        format!(
            "{kind} {} ({} to {}, by {rule} date)",
            self.window.label, self.window.start, self.window.end
        )
    }
}

/// Combined forecasts with their weights and in-sample weight curves.
#[derive(Debug, Clone, PartialEq)]
pub struct Combinations {
    pub forecasts: Vec<QuantileForecastSet>,
    /// Per combination pair: the pair label and one series per strategy.
    pub weights: Vec<(String, Vec<CombinationWeightSeries>)>,
    pub curves: Vec<(String, Vec<CurvePoint>)>,
}

fn sets_of(forecasts: &[QuantileForecastSet], id: &str) -> Vec<QuantileForecastSet> {
    forecasts.iter().filter(|s| s.model_id == id).cloned().collect::<Vec<_>>()
}

/// Runs every configured combination over `forecasts`.
pub fn combine_all(
    config: &ExperimentConfig,
    forecasts: &[QuantileForecastSet],
    realizations: &BTreeMap<YearMonth, f64>,
) -> Result<Combinations> {
    let mut out = Combinations { forecasts: Vec::new(), weights: Vec::new(), curves: Vec::new() };
    for spec in &config.combinations {
        let a = sets_of(forecasts, &spec.model);
        let b = sets_of(forecasts, &spec.benchmark);
        let mut series = Vec::new();
        for &strategy in &spec.strategies {
            let (sets, weights) = combine_recursive(&a, &b, realizations, strategy)?;
            out.forecasts.extend(sets);
            series.push(weights);
        }
        out.weights.push((spec.pair_label(), series));
        out.curves.push((spec.pair_label(), lambda_curve(&a, &b, realizations, config.curve_steps)?));
    }
    Ok(out)
}

/// Score tables and ratio tables over every evaluation and event window.
pub fn score_windows(
    config: &ExperimentConfig,
    forecasts: &[QuantileForecastSet],
    realizations: &BTreeMap<YearMonth, f64>,
) -> Result<Vec<WindowScores>> {
    let windows = config
        .evaluation_windows
        .iter()
        .map(|w| (w, WindowKind::Evaluation, config.evaluation_rule))
        .chain(config.event_windows.iter().map(|w| (w, WindowKind::Event, config.event_rule)));
    let ids = config.all_ids();
    let mut out = Vec::new();
    for (window, kind, rule) in windows {
        let table = average_qs(forecasts, realizations, Some(window), rule, MissingPolicy::Skip)?;
        let ratios = ratio_tables(&table, &ids, &config.benchmark)?;
        out.push(WindowScores { window: window.clone(), kind, rule, table, ratios });
    }
    Ok(out)
}

fn ratio_tables(table: &ScoreTable, ids: &[String], benchmark: &str) -> Result<Vec<RatioTable>> {
    let present = table.models();
    ids.iter()
        .filter(|id| present.contains(id))
        .map(|id| qs_ratio(table, id, benchmark))
        .collect()
}

/// Origin that failed, with the error that stopped it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedOrigin {
    pub origin: YearMonth,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub label: String,
    pub start: YearMonth,
    pub end: YearMonth,
    pub kind: WindowKind,
    pub rule: DateRule,
}

/// Run description written next to the outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub benchmark: String,
    /// Models and combinations, in configuration order.
    pub models: Vec<String>,
    pub windows: Vec<WindowRecord>,
    pub origins: Vec<YearMonth>,
    pub failed_origins: Vec<FailedOrigin>,
    /// Relative path to SHA-256 hex digest, for every other file in the run.
    pub files: BTreeMap<String, String>,
}

/// Version string of the library, with the build commit when
/// `QBVAR_BUILD_COMMIT` was set at compile time.
pub fn version_string() -> String {
    let base = format!("v{}", env!("CARGO_PKG_VERSION"));
    match option_env!("QBVAR_BUILD_COMMIT") {
        Some(commit) if !commit.is_empty() => format!("{base}-g{commit}"),
        _ => base,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Outputs of a completed run, held in memory as well as on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    /// Model and combination forecasts, sorted by model then origin.
    pub forecasts: Vec<QuantileForecastSet>,
    pub windows: Vec<WindowScores>,
    pub combinations: Combinations,
}

/// Loads the configured data and runs the experiment.
pub fn run_recursive(config: &ExperimentConfig) -> Result<RunResult> {
    let raw = config.load_raw()?;
    run_on_panel(config, &raw)
}

/// Forecasts at every origin, in order; failures are returned, not raised.
pub fn forecast_all(
    config: &ExperimentConfig,
    raw: &TimeSeriesPanel,
    origins: &[YearMonth],
) -> Result<Vec<(YearMonth, Result<OriginBundle>)>> {
    with_pool(config.threads, || {
        origins
            .par_iter()
            .map(|&o| (o, config.forecast_origin(raw, o)))
            .collect()
    })
}

/// Runs the experiment on an in-memory raw panel and writes the run directory.
pub fn run_on_panel(config: &ExperimentConfig, raw: &TimeSeriesPanel) -> Result<RunResult> {
    config.validate()?;
    let full = config.prepare_panel(raw)?;
    let realizations = target_values(&full);
    let origins = config.origins(&full)?;
    log::info!("{} origins from {} to {}", origins.len(), origins[0], origins[origins.len() - 1]);

    let mut forecasts = Vec::new();
    let mut draws = Vec::new();
    let mut failed = Vec::new();
    for (origin, outcome) in forecast_all(config, raw, &origins)? {
        match outcome {
            Ok(bundle) => {
                forecasts.extend(bundle.forecasts);
                draws.extend(bundle.draws);
            }
            Err(e) => {
                log::warn!("origin {origin} failed: {e}");
                failed.push(FailedOrigin { origin, kind: e.kind().to_string(), message: e.to_string() });
            }
        }
    }
    if failed.len() as f64 > MAX_FAILED_ORIGIN_SHARE * origins.len() as f64 {
        return Err(Error::TooManyFailedOrigins {
            failed: failed.len(),
            total: origins.len(),
            first: format!("{}: {}", failed[0].origin, failed[0].message),
        });
    }

    let combinations = combine_all(config, &forecasts, &realizations)?;
    forecasts.extend(combinations.forecasts.iter().cloned());
    let order: BTreeMap<String, usize> =
        config.all_ids().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
    forecasts.sort_by_key(|s| (order[&s.model_id], s.origin));
    let windows = score_windows(config, &forecasts, &realizations)?;

    let identity = run_identity(config);
    let mut files = BTreeMap::new();
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_text = identity.to_toml()?;
    put(&dir, CONFIG_FILE, config_text.as_bytes(), &mut files)?;
    put(&dir, FORECASTS_FILE, &forecast_bytes(&forecasts)?, &mut files)?;
    put(&dir, SCORES_FILE, &scores_bytes(&windows)?, &mut files)?;
    let (ratio_csv, ratio_text) = ratio_outputs(&windows)?;
    put(&dir, RATIOS_FILE, &ratio_csv, &mut files)?;
    put(&dir, RATIOS_TEXT_FILE, ratio_text.as_bytes(), &mut files)?;
    put(&dir, "crossing.csv", &crossing_bytes(&forecasts)?, &mut files)?;
    for (pair, series) in &combinations.weights {
        let mut buf = Vec::new();
        write_weights_csv(series, &mut buf)?;
        put(&dir, &format!("weights_{pair}.csv"), &buf, &mut files)?;
    }
    for (pair, points) in &combinations.curves {
        let mut buf = Vec::new();
        write_curve_csv(points, &mut buf)?;
        put(&dir, &format!("lambda_curve_{pair}.csv"), &buf, &mut files)?;
    }
    for d in &draws {
        let mut buf = Vec::new();
        write_draws(&d.draws, Some(d.origin), &mut buf)?;
        put(&dir, &format!("draws/{}", d.file_name()), &buf, &mut files)?;
    }

    let manifest = Manifest {
        version: version_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: config.seed,
        benchmark: config.benchmark.clone(),
        models: config.all_ids(),
        windows: windows
            .iter()
            .map(|w| WindowRecord {
                label: w.window.label.clone(),
                start: w.window.start,
                end: w.window.end,
                kind: w.kind,
                rule: w.rule,
            })
            .collect(),
        origins,
        failed_origins: failed,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format("manifest", e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    Ok(RunResult { output_dir: dir, manifest, forecasts, windows, combinations })
}

/// The config with the settings that do not affect results cleared, so that
/// runs differing only in location or thread count hash alike.
fn run_identity(config: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig { output_dir: PathBuf::from("."), threads: None, ..config.clone() }
}

fn put(dir: &Path, name: &str, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    files.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

pub fn forecast_bytes(forecasts: &[QuantileForecastSet]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_forecasts_to(forecasts, &mut buf, b',')?;
    Ok(buf)
}

/// Score tables of all windows in one CSV. The raw sum is kept so that ratios
/// recomputed from the file match the in-memory ones exactly.
pub fn scores_bytes(windows: &[WindowScores]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["window", "model", "quantile", "horizon", "score", "sum", "count"])?;
    for ws in windows {
        for (k, c) in &ws.table.cells {
            w.write_record([
                ws.window.label.clone(),
                k.model.clone(),
                k.quantile.0.to_string(),
                k.horizon.to_string(),
                c.mean().map(|s| s.to_string()).unwrap_or_default(),
                c.sum.to_string(),
                c.count.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::io("<score table>", e.into_error()))
}

/// Ratio tables as CSV and as plain text, one text block per window.
pub fn ratio_outputs(windows: &[WindowScores]) -> Result<(Vec<u8>, String)> {
    let mut csv_buf = Vec::new();
    let pairs: Vec<(&str, &RatioTable)> = windows
        .iter()
        .flat_map(|w| w.ratios.iter().map(move |t| (w.window.label.as_str(), t)))
        .collect();
    write_ratio_csv(&pairs, &mut csv_buf)?;
    let text = windows
        .iter()
        .map(|w| render_ratio_tables(&w.title(), &w.ratios))
        .collect::<Vec<_>>()
        .join("\n");
    Ok((csv_buf, text))
}

fn crossing_bytes(forecasts: &[QuantileForecastSet]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "crossing_share"])?;
    for (model, share) in crossing_summary(forecasts) {
        w.write_record([model, share.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::io("<crossing table>", e.into_error()))
}

/// Reads a run manifest and checks every listed file against its digest.
pub fn verify_run(run_dir: &Path) -> Result<Manifest> {
    let incomplete = |detail: String| Error::IncompleteRun { dir: run_dir.to_path_buf(), detail };
    let path = run_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|_| incomplete(format!("no {MANIFEST_FILE}")))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| incomplete(format!("unreadable manifest: {e}")))?;
    for required in [FORECASTS_FILE, SCORES_FILE] {
        if !manifest.files.contains_key(required) {
            return Err(incomplete(format!("manifest does not list {required}")));
        }
    }
    for (name, digest) in &manifest.files {
        let bytes = fs::read(run_dir.join(name)).map_err(|_| incomplete(format!("missing {name}")))?;
        if &sha256_hex(&bytes) != digest {
            return Err(incomplete(format!("{name} does not match its manifest digest")));
        }
    }
    Ok(manifest)
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    window: String,
    model: String,
    quantile: f64,
    horizon: usize,
    sum: f64,
    count: usize,
}

/// Score tables read back from a run directory, keyed by window label.
pub fn read_scores(path: &Path) -> Result<BTreeMap<String, ScoreTable>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<String, ScoreTable> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: ScoreRow = row?;
        out.entry(row.window).or_default().cells.insert(
            ScoreKey { model: row.model, quantile: Level(row.quantile), horizon: row.horizon },
            ScoreCell { sum: row.sum, count: row.count },
        );
    }
    Ok(out)
}

/// Ratio tables per window rebuilt from a completed run directory.
pub fn report_windows(run_dir: &Path) -> Result<Vec<WindowScores>> {
    let manifest = verify_run(run_dir)?;
    let mut tables = read_scores(&run_dir.join(SCORES_FILE))?;
    manifest
        .windows
        .iter()
        .map(|w| {
            let table = tables.remove(&w.label).ok_or_else(|| Error::IncompleteRun {
                dir: run_dir.to_path_buf(),
                detail: format!("no scores for window `{}`", w.label),
            })?;
            let ratios = ratio_tables(&table, &manifest.models, &manifest.benchmark)?;
            Ok(WindowScores {
                window: EventWindow { label: w.label.clone(), start: w.start, end: w.end },
                kind: w.kind,
                rule: w.rule,
                table,
                ratios,
            })
        })
        .collect()
}

/// Renders the ratio tables of a completed run and writes them, as text and
/// CSV, to `report/` inside the run directory. Returns the text.
pub fn report(run_dir: &Path) -> Result<String> {
    let windows = report_windows(run_dir)?;
    let (csv_bytes, text) = ratio_outputs(&windows)?;
    let dir = run_dir.join("report");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(RATIOS_TEXT_FILE, text.as_bytes())?;
    write(RATIOS_FILE, &csv_bytes)?;
    Ok(text)
}
