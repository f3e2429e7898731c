//! Quantile scores, benchmark-relative ratio tables and event windows.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::YearMonth;
use crate::forecast::{same_level, QuantileForecastSet};
use crate::{Error, Result};

/// Check function `ρ_q(u) = u (q - 1{u < 0})` of the error `u = y - ŷ`.
pub fn pinball(u: f64, q: f64) -> f64 {
    if u < 0.0 {
        u * (q - 1.0)
    } else {
        u * q
    }
}

/// Quantile level usable as an ordered map key.
#[derive(Debug, Clone, Copy)]
pub struct Level(pub f64);

impl PartialEq for Level {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Level {}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> Ordering {
        if same_level(self.0, other.0) {
            Ordering::Equal
        } else {
            self.0.total_cmp(&other.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ScoreKey {
    pub model: String,
    pub quantile: Level,
    pub horizon: usize,
}

/// Sum and count of pinball losses for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreCell {
    pub sum: f64,
    pub count: usize,
}

impl ScoreCell {
    /// Average score, or `None` when nothing was scored.
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Which date decides membership in an evaluation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateRule {
    /// The date the forecast targets, `origin + h`.
    #[default]
    Realization,
    /// The date the forecast was made.
    Origin,
}

/// What to do with forecasts whose target date has no realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    Error,
    /// Leave the pair out; used for targets beyond the end of the sample.
    Skip,
}

/// Named closed date range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventWindow {
    pub label: String,
    pub start: YearMonth,
    pub end: YearMonth,
}

impl EventWindow {
    pub fn new(label: impl Into<String>, start: YearMonth, end: YearMonth) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidParameter(format!("window starts at {start}, ends at {end}")));
        }
        Ok(Self {
            label: label.into(),
            start,
            end,
        })
    }

    pub fn contains(&self, date: YearMonth) -> bool {
        self.start <= date && date <= self.end
    }
}

/// Average pinball loss per (model, quantile, horizon).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub cells: BTreeMap<ScoreKey, ScoreCell>,
}

impl ScoreTable {
    pub fn get(&self, model: &str, q: f64, h: usize) -> Option<&ScoreCell> {
        self.cells.get(&ScoreKey {
            model: model.to_string(),
            quantile: Level(q),
            horizon: h,
        })
    }

    pub fn score(&self, model: &str, q: f64, h: usize) -> Option<f64> {
        self.get(model, q, h)?.mean()
    }

    pub fn models(&self) -> Vec<String> {
        let mut m: Vec<String> = self.cells.keys().map(|k| k.model.clone()).collect();
        m.dedup();
        m
    }

    /// Cells of one model keyed by (quantile, horizon).
    pub fn model_cells(&self, model: &str) -> BTreeMap<(Level, usize), ScoreCell> {
        self.cells
            .iter()
            .filter(|(k, _)| k.model == model)
            .map(|(k, c)| ((k.quantile, k.horizon), *c))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "quantile", "horizon", "score", "count"])?;
        for (k, c) in &self.cells {
            let score = c.mean().map(|s| s.to_string()).unwrap_or_default();
            w.write_record([
                k.model.clone(),
                k.quantile.0.to_string(),
                k.horizon.to_string(),
                score,
                c.count.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<score table>", e))?;
        Ok(())
    }
}

/// Scores every forecast cell against `realizations`.
///
/// A forecast made at origin `t` for horizon `h` is scored against the value
/// dated `t + h`. With a `window`, only pairs whose date under `rule` falls
/// inside it count; every cell present in the forecasts still appears in the
/// table, possibly with a zero count.
pub fn average_qs(
    forecasts: &[QuantileForecastSet],
    realizations: &BTreeMap<YearMonth, f64>,
    window: Option<&EventWindow>,
    rule: DateRule,
    missing: MissingPolicy,
) -> Result<ScoreTable> {
    let mut table = ScoreTable::default();
    for set in forecasts {
        for (hi, &h) in set.horizons.iter().enumerate() {
            let target = set.origin.add_months(h as i64);
            let decisive = match rule {
                DateRule::Realization => target,
                DateRule::Origin => set.origin,
            };
            let inside = window.is_none_or(|w| w.contains(decisive));
            let realized = realizations.get(&target).copied();
            if inside && realized.is_none() && missing == MissingPolicy::Error {
                return Err(Error::MissingRealization { date: target });
            }
            for (qi, &q) in set.quantiles.iter().enumerate() {
                let cell = table
                    .cells
                    .entry(ScoreKey {
                        model: set.model_id.clone(),
                        quantile: Level(q),
                        horizon: h,
                    })
                    .or_default();
                if let (true, Some(y)) = (inside, realized) {
                    cell.sum += pinball(y - set.values[hi][qi], q);
                    cell.count += 1;
                }
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioCell {
    Value(f64),
    /// Benchmark score zero, or no scored pairs.
    Undefined,
}

impl RatioCell {
    pub fn value(&self) -> Option<f64> {
        match self {
            RatioCell::Value(v) => Some(*v),
            RatioCell::Undefined => None,
        }
    }
}

/// `QS(numerator) / QS(benchmark)` per (quantile, horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub numerator: String,
    pub benchmark: String,
    pub cells: BTreeMap<(Level, usize), RatioCell>,
}

impl RatioTable {
    pub fn get(&self, q: f64, h: usize) -> Option<RatioCell> {
        self.cells.get(&(Level(q), h)).copied()
    }

    pub fn quantiles(&self) -> Vec<f64> {
        let mut qs: Vec<f64> = self.cells.keys().map(|(q, _)| q.0).collect();
        qs.dedup_by(|a, b| same_level(*a, *b));
        qs
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut hs: Vec<usize> = self.cells.keys().map(|(_, h)| *h).collect();
        hs.sort_unstable();
        hs.dedup();
        hs
    }
}

/// Both models must cover the same cells with the same number of scored
/// pairs.
pub fn qs_ratio(table: &ScoreTable, numerator: &str, benchmark: &str) -> Result<RatioTable> {
    let num = table.model_cells(numerator);
    let bench = table.model_cells(benchmark);
    if num.is_empty() {
        return Err(Error::UnknownSeries(numerator.to_string()));
    }
    if bench.is_empty() {
        return Err(Error::UnknownSeries(benchmark.to_string()));
    }
    if num.len() != bench.len() {
        return Err(Error::CoverageMismatch(format!(
            "`{numerator}` has {} cells, `{benchmark}` has {}",
            num.len(),
            bench.len()
        )));
    }
    let mut cells = BTreeMap::new();
    for (key, n) in &num {
        let b = bench.get(key).ok_or_else(|| {
            Error::CoverageMismatch(format!("`{benchmark}` lacks q={} h={}", key.0 .0, key.1))
        })?;
        if n.count != b.count {
            return Err(Error::CoverageMismatch(format!(
                "q={} h={}: {} vs {} scored pairs",
                key.0 .0, key.1, n.count, b.count
            )));
        }
        let cell = match (n.mean(), b.mean()) {
            (Some(x), Some(y)) if y > 0.0 => RatioCell::Value(x / y),
            _ => RatioCell::Undefined,
        };
        cells.insert(*key, cell);
    }
    Ok(RatioTable {
        numerator: numerator.to_string(),
        benchmark: benchmark.to_string(),
        cells,
    })
}

pub fn write_ratio_csv<W: Write>(tables: &[(&str, &RatioTable)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window", "numerator", "benchmark", "quantile", "horizon", "ratio", "below_one"])?;
    for (window, t) in tables {
        for ((q, h), cell) in &t.cells {
            let (ratio, flag) = match cell {
                RatioCell::Value(v) => (v.to_string(), (*v < 1.0).to_string()),
                RatioCell::Undefined => ("n/a".to_string(), String::new()),
            };
            w.write_record([
                window.to_string(),
                t.numerator.clone(),
                t.benchmark.clone(),
                q.0.to_string(),
                h.to_string(),
                ratio,
                flag,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<ratio table>", e))?;
    Ok(())
}

/// Column label of a quantile level: `0.1` becomes `QS10`.
pub fn level_label(q: f64) -> String {
    format!("QS{}", (q * 100.0).round() as i64)
}

/// Plain-text layout: one row per horizon, one column triplet of quantile
/// levels per numerator model. Ratios below one carry a `*`; undefined cells
/// print `n/a`.
pub fn render_ratio_tables(title: &str, tables: &[RatioTable]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let Some(first) = tables.first() else {
        let _ = writeln!(out, "(no tables)");
        return out;
    };
    let levels = first.quantiles();
    let horizons = first.horizons();
    let width = 8;
    let mut header1 = format!("{:>4}", "");
    let mut header2 = format!("{:>4}", "h");
    for t in tables {
        let span = levels.len() * (width + 1);
        let name = format!("{} / {}", t.numerator, t.benchmark);
        let _ = write!(header1, " |{name:^span$}");
        let _ = write!(header2, " |");
        for &q in &levels {
            let _ = write!(header2, "{:>width$} ", level_label(q));
        }
    }
    let _ = writeln!(out, "{}", header1.trim_end());
    let _ = writeln!(out, "{}", header2.trim_end());
    let _ = writeln!(out, "{}", "-".repeat(header2.trim_end().len()));
    for &h in &horizons {
        let mut line = format!("{h:>4}");
        for t in tables {
            let _ = write!(line, " |");
            for &q in &levels {
                let text = match t.get(q, h) {
                    Some(RatioCell::Value(v)) => {
                        format!("{v:.2}{}", if v < 1.0 { "*" } else { " " })
                    }
                    _ => "n/a ".to_string(),
                };
                let _ = write!(line, "{text:>width$} ");
            }
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out
}

/// Share of (origin, horizon) pairs with crossing quantiles, per model.
pub fn crossing_summary(forecasts: &[QuantileForecastSet]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for set in forecasts {
        let e = acc.entry(set.model_id.clone()).or_default();
        e.0 += set.crossing_frequency() * set.horizons.len() as f64;
        e.1 += set.horizons.len();
    }
    acc.into_iter()
        .map(|(m, (crossed, total))| (m, if total > 0 { crossed / total as f64 } else { 0.0 }))
        .collect()
}
