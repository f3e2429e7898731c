//! Iterated multi-step forecasts from posterior draws.
//!
//! Each retained draw produces one simulated path: future factors and
//! idiosyncratic shocks are drawn afresh at every step, and the lag vector is
//! rolled forward with the simulated values. Quantile forecasts are then read
//! off the cross-draw distribution of the target variable.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{regressor_from_tail, YearMonth};
use crate::qbvar::PosteriorDrawSet;
use crate::{Error, Result};

/// Share of non-finite paths above which a forecast origin fails.
pub const MAX_ABORT_SHARE: f64 = 0.01;

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition). Sorts `values` in place.
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    values.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}

/// Simulated future paths, one `H×n` matrix per surviving draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPaths {
    pub paths: Vec<DMatrix<f64>>,
    pub aborted: usize,
}

impl SimulatedPaths {
    pub fn horizon(&self) -> usize {
        self.paths.first().map_or(0, |p| p.nrows())
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Values of variable `var` at step `h` (1-based) across paths.
    pub fn at(&self, h: usize, var: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[(h - 1, var)]).collect()
    }
}

/// Simulates `horizon` steps ahead from every draw.
///
/// `tail` holds the last `p` observations, oldest first. At each step
/// `y = Φx + Λf + v` with `f ~ N(0, I_r)` and `v ~ N(0, diag(σ))`, so the
/// shock has covariance `ΛΛ' + diag(σ)`.
pub fn simulate_paths<R: Rng + ?Sized>(
    draws: &PosteriorDrawSet,
    tail: &DMatrix<f64>,
    horizon: usize,
    rng: &mut R,
) -> Result<SimulatedPaths> {
    if draws.is_empty() {
        return Err(Error::Empty("posterior draw set".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("forecast horizon must be positive".into()));
    }
    let lags = draws.meta.lags;
    let n = draws.meta.n_vars;
    if tail.nrows() != lags || tail.ncols() != n {
        return Err(Error::LengthMismatch(format!(
            "forecast tail is {}x{}, expected {lags}x{n}",
            tail.nrows(),
            tail.ncols()
        )));
    }

    let mut paths = Vec::with_capacity(draws.len());
    let mut aborted = 0;
    for draw in &draws.draws {
        let r = draw.lambda.ncols();
        let sd: Vec<f64> = draw.sigma.iter().map(|s| s.sqrt()).collect();
        let mut window = tail.clone();
        let mut path = DMatrix::zeros(horizon, n);
        let mut finite = true;
        for h in 0..horizon {
            let x = DVector::from_vec(regressor_from_tail(&window, lags)?);
            let mut y = &draw.phi * x;
            if r > 0 {
                let f = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
                y += &draw.lambda * f;
            }
            for (yi, s) in y.iter_mut().zip(&sd) {
                *yi += s * rng.sample::<f64, _>(StandardNormal);
            }
            if y.iter().any(|v| !v.is_finite()) {
                finite = false;
                break;
            }
            path.row_mut(h).copy_from(&y.transpose());
            roll(&mut window, &y);
        }
        if finite {
            paths.push(path);
        } else {
            aborted += 1;
        }
    }
    let total = draws.len();
    if aborted as f64 > MAX_ABORT_SHARE * total as f64 {
        return Err(Error::NonFinitePaths { aborted, total });
    }
    Ok(SimulatedPaths { paths, aborted })
}

/// Drops the oldest row of `window` and appends `y`.
fn roll(window: &mut DMatrix<f64>, y: &DVector<f64>) {
    let p = window.nrows();
    for row in 1..p {
        let next = window.row(row).into_owned();
        window.row_mut(row - 1).copy_from(&next);
    }
    window.row_mut(p - 1).copy_from(&y.transpose());
}

/// Point forecasts per horizon and quantile level for one model and origin.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecastSet {
    pub model_id: String,
    pub origin: YearMonth,
    pub horizons: Vec<usize>,
    pub quantiles: Vec<f64>,
    /// `values[h_index][q_index]`.
    pub values: Vec<Vec<f64>>,
}

impl QuantileForecastSet {
    pub fn new(
        model_id: impl Into<String>,
        origin: YearMonth,
        horizons: Vec<usize>,
        quantiles: Vec<f64>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let set = QuantileForecastSet {
            model_id: model_id.into(),
            origin,
            horizons,
            quantiles,
            values,
        };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<()> {
        if self.values.len() != self.horizons.len()
            || self.values.iter().any(|row| row.len() != self.quantiles.len())
        {
            return Err(Error::LengthMismatch(format!(
                "forecast grid for `{}` does not match {} horizons x {} quantiles",
                self.model_id,
                self.horizons.len(),
                self.quantiles.len()
            )));
        }
        if self.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "forecast `{}` at {} has non-finite values",
                self.model_id, self.origin
            )));
        }
        Ok(())
    }

    pub fn horizon_index(&self, h: usize) -> Option<usize> {
        self.horizons.iter().position(|&x| x == h)
    }

    pub fn quantile_index(&self, q: f64) -> Option<usize> {
        self.quantiles.iter().position(|&x| same_level(x, q))
    }

    pub fn get(&self, h: usize, q: f64) -> Option<f64> {
        Some(self.values[self.horizon_index(h)?][self.quantile_index(q)?])
    }

    /// True when both sets cover the same origin, horizons and quantiles.
    pub fn aligned_with(&self, other: &Self) -> bool {
        self.origin == other.origin
            && self.horizons == other.horizons
            && self.quantiles.len() == other.quantiles.len()
            && self.quantiles.iter().zip(&other.quantiles).all(|(a, b)| same_level(*a, *b))
    }

    /// Share of horizons at which the forecasts are not non-decreasing in `q`.
    pub fn crossing_frequency(&self) -> f64 {
        if self.horizons.is_empty() {
            return 0.0;
        }
        let mut order: Vec<usize> = (0..self.quantiles.len()).collect();
        order.sort_by(|&a, &b| self.quantiles[a].total_cmp(&self.quantiles[b]));
        let crossed = self
            .values
            .iter()
            .filter(|row| order.windows(2).any(|w| row[w[1]] < row[w[0]]))
            .count();
        crossed as f64 / self.horizons.len() as f64
    }
}

/// Quantile levels are compared with a tolerance so config and file values
/// such as `0.1` written and parsed back always match.
pub fn same_level(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Forecast of the level-`q` quantile model: the median over draws of the
/// simulated target at each horizon.
pub fn qbvar_quantile_forecast(
    model_id: &str,
    origin: YearMonth,
    paths: &SimulatedPaths,
    target: usize,
    q: f64,
) -> Result<QuantileForecastSet> {
    if paths.is_empty() {
        return Err(Error::Empty("simulated paths".into()));
    }
    let horizons: Vec<usize> = (1..=paths.horizon()).collect();
    let values = horizons
        .iter()
        .map(|&h| vec![empirical_quantile(&mut paths.at(h, target), 0.5)])
        .collect();
    QuantileForecastSet::new(model_id, origin, horizons, vec![q], values)
}

/// Forecast of a model with a full predictive distribution: the empirical
/// `q`-quantile over draws for each requested level.
pub fn predictive_quantile_forecast(
    model_id: &str,
    origin: YearMonth,
    paths: &SimulatedPaths,
    target: usize,
    quantiles: &[f64],
) -> Result<QuantileForecastSet> {
    if paths.is_empty() {
        return Err(Error::Empty("simulated paths".into()));
    }
    let horizons: Vec<usize> = (1..=paths.horizon()).collect();
    let values = horizons
        .iter()
        .map(|&h| {
            let mut sample = paths.at(h, target);
            quantiles.iter().map(|&q| empirical_quantile(&mut sample, q)).collect()
        })
        .collect();
    QuantileForecastSet::new(model_id, origin, horizons, quantiles.to_vec(), values)
}

/// No-change forecast on growth rates: zero at every horizon and level.
pub fn random_walk_forecast(
    model_id: &str,
    origin: YearMonth,
    horizons: &[usize],
    quantiles: &[f64],
) -> QuantileForecastSet {
    QuantileForecastSet {
        model_id: model_id.to_string(),
        origin,
        horizons: horizons.to_vec(),
        quantiles: quantiles.to_vec(),
        values: vec![vec![0.0; quantiles.len()]; horizons.len()],
    }
}

/// Joins single-level sets of one model and origin into one set, ordered by
/// quantile level.
pub fn merge_quantile_sets(mut sets: Vec<QuantileForecastSet>) -> Result<QuantileForecastSet> {
    let first = sets.first().ok_or_else(|| Error::Empty("forecast sets to merge".into()))?;
    let (model_id, origin, horizons) = (first.model_id.clone(), first.origin, first.horizons.clone());
    if sets
        .iter()
        .any(|s| s.model_id != model_id || s.origin != origin || s.horizons != horizons)
    {
        return Err(Error::Misaligned("merging sets of different models, origins or horizons".into()));
    }
    sets.sort_by(|a, b| a.quantiles[0].total_cmp(&b.quantiles[0]));
    let mut quantiles = Vec::new();
    let mut values = vec![Vec::new(); horizons.len()];
    for set in &sets {
        for (qi, &q) in set.quantiles.iter().enumerate() {
            if quantiles.iter().any(|&x| same_level(x, q)) {
                return Err(Error::Misaligned(format!("quantile {q} appears twice")));
            }
            quantiles.push(q);
            for (hi, row) in values.iter_mut().enumerate() {
                row.push(set.values[hi][qi]);
            }
        }
    }
    QuantileForecastSet::new(model_id, origin, horizons, quantiles, values)
}

/// One line of a forecast file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model_id: String,
    pub origin: YearMonth,
    pub horizon: usize,
    pub quantile: f64,
    pub value: f64,
}

pub fn forecast_records(sets: &[QuantileForecastSet]) -> Vec<ForecastRecord> {
    let mut out = Vec::new();
    for set in sets {
        for (hi, &h) in set.horizons.iter().enumerate() {
            for (qi, &q) in set.quantiles.iter().enumerate() {
                out.push(ForecastRecord {
                    model_id: set.model_id.clone(),
                    origin: set.origin,
                    horizon: h,
                    quantile: q,
                    value: set.values[hi][qi],
                });
            }
        }
    }
    out
}

pub fn write_forecasts_to<W: Write>(sets: &[QuantileForecastSet], writer: W, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    for rec in forecast_records(sets) {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io("<forecast output>", e))?;
    Ok(())
}

pub fn write_forecasts(path: &Path, sets: &[QuantileForecastSet]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_forecasts_to(sets, std::io::BufWriter::new(file), crate::data::io::delimiter_for(path))
}

/// Reads a forecast file back into sets, one per (model, origin), with
/// horizons and quantiles in ascending order.
pub fn read_forecasts_from<R: Read>(reader: R, delimiter: u8) -> Result<Vec<QuantileForecastSet>> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(reader);
    let mut records = Vec::new();
    for rec in rdr.deserialize() {
        let rec: ForecastRecord = rec?;
        records.push(rec);
    }
    sets_from_records(records)
}

pub fn read_forecasts(path: &Path) -> Result<Vec<QuantileForecastSet>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_forecasts_from(std::io::BufReader::new(file), crate::data::io::delimiter_for(path))
}

pub fn sets_from_records(records: Vec<ForecastRecord>) -> Result<Vec<QuantileForecastSet>> {
    use std::collections::BTreeMap;
    let mut grouped: BTreeMap<(String, YearMonth), Vec<ForecastRecord>> = BTreeMap::new();
    for rec in records {
        grouped.entry((rec.model_id.clone(), rec.origin)).or_default().push(rec);
    }
    let mut sets = Vec::with_capacity(grouped.len());
    for ((model_id, origin), recs) in grouped {
        let mut horizons: Vec<usize> = recs.iter().map(|r| r.horizon).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let mut quantiles: Vec<f64> = Vec::new();
        for r in &recs {
            if !quantiles.iter().any(|&q| same_level(q, r.quantile)) {
                quantiles.push(r.quantile);
            }
        }
        quantiles.sort_by(f64::total_cmp);
        let mut values = vec![vec![f64::NAN; quantiles.len()]; horizons.len()];
        for r in &recs {
            let hi = horizons.binary_search(&r.horizon).expect("horizon collected above");
            let qi = quantiles.iter().position(|&q| same_level(q, r.quantile)).expect("level collected above");
            if !values[hi][qi].is_nan() {
                return Err(Error::format(
                    "forecast file",
                    format!("duplicate row for {model_id} {origin} h={} q={}", r.horizon, r.quantile),
                ));
            }
            values[hi][qi] = r.value;
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::format(
                "forecast file",
                format!("incomplete horizon x quantile grid for {model_id} {origin}"),
            ));
        }
        sets.push(QuantileForecastSet::new(model_id, origin, horizons, quantiles, values)?);
    }
    Ok(sets)
}
