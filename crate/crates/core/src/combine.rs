//! Two-model forecast combinations.
//!
//! The combined quantile forecast is `λ q̂_A + (1 - λ) q̂_B` with `λ` fixed,
//! set from the ratio of recent average scores, or chosen to minimize the
//! recent average score of the combination itself. Recent means the `S` most
//! recent origins whose targets are already observed at the forecast origin.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::YearMonth;
use crate::eval::{pinball, Level};
use crate::forecast::QuantileForecastSet;
use crate::{Error, Result};

/// Weight used before enough history has accumulated.
pub const FALLBACK_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Fixed { lambda: f64 },
    Performance { window: usize },
    Optimal { window: usize },
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Fixed { lambda } => format!("comb_fixed_{lambda}"),
            Strategy::Performance { window } => format!("comb_perf_s{window}"),
            Strategy::Optimal { window } => format!("comb_opt_s{window}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Fixed { lambda } if !(0.0..=1.0).contains(&lambda) => {
                Err(Error::InvalidParameter(format!("fixed weight {lambda} outside [0, 1]")))
            }
            Strategy::Performance { window } | Strategy::Optimal { window } if window == 0 => {
                Err(Error::InvalidParameter("combination window must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Cellwise `λ a + (1 - λ) b` under the id `model_id`.
pub fn combine_fixed(
    model_id: &str,
    a: &QuantileForecastSet,
    b: &QuantileForecastSet,
    lambda: f64,
) -> Result<QuantileForecastSet> {
    combine_cellwise(model_id, a, b, |_, _| lambda)
}

fn combine_cellwise(
    model_id: &str,
    a: &QuantileForecastSet,
    b: &QuantileForecastSet,
    mut weight: impl FnMut(usize, usize) -> f64,
) -> Result<QuantileForecastSet> {
    if !a.aligned_with(b) {
        return Err(Error::Misaligned(format!(
            "`{}` and `{}` at {} / {}",
            a.model_id, b.model_id, a.origin, b.origin
        )));
    }
    let mut values = a.values.clone();
    for (hi, row) in values.iter_mut().enumerate() {
        for (qi, v) in row.iter_mut().enumerate() {
            let lambda = weight(hi, qi);
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidParameter(format!("weight {lambda} outside [0, 1]")));
            }
            *v = lambda * a.values[hi][qi] + (1.0 - lambda) * b.values[hi][qi];
        }
    }
    QuantileForecastSet::new(model_id, a.origin, a.horizons.clone(), a.quantiles.clone(), values)
}

/// `1 - QS_A / (QS_A + QS_B)`; equal weights when both scores are zero.
pub fn performance_weight(score_a: f64, score_b: f64) -> f64 {
    let total = score_a + score_b;
    if total > 0.0 {
        1.0 - score_a / total
    } else {
        FALLBACK_WEIGHT
    }
}

/// One scored pair from the past: both forecasts and the realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PastPair {
    pub forecast_a: f64,
    pub forecast_b: f64,
    pub realization: f64,
}

/// Average pinball loss of the combination with weight `lambda`.
pub fn window_loss(pairs: &[PastPair], q: f64, lambda: f64) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            let f = lambda * p.forecast_a + (1.0 - lambda) * p.forecast_b;
            pinball(p.realization - f, q)
        })
        .sum();
    sum / pairs.len() as f64
}

/// Minimizer over `[0, 1]` of [`window_loss`].
///
/// The loss is convex and piecewise linear with kinks where the combination
/// hits a realization, so the minimum is attained at an endpoint or a kink.
/// All candidates are evaluated; when the minimizers form an interval the
/// point of it closest to 0.5 is returned.
pub fn optimal_weight(pairs: &[PastPair], q: f64) -> f64 {
    if pairs.is_empty() {
        return FALLBACK_WEIGHT;
    }
    let mut candidates = vec![0.0, 1.0];
    for p in pairs {
        let d = p.forecast_a - p.forecast_b;
        if d != 0.0 {
            let kink = (p.realization - p.forecast_b) / d;
            if kink > 0.0 && kink < 1.0 {
                candidates.push(kink);
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let losses: Vec<f64> = candidates.iter().map(|&l| window_loss(pairs, q, l)).collect();
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
    let optimal = candidates
        .iter()
        .zip(&losses)
        .filter(|(_, &loss)| loss - best <= tol)
        .map(|(&l, _)| l);
    let (lo, hi) = optimal.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| (lo.min(l), hi.max(l)));
    FALLBACK_WEIGHT.clamp(lo, hi)
}

/// Weight of one (origin, quantile, horizon) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightEntry {
    pub lambda: f64,
    /// True when the fallback weight was used for lack of history.
    pub warmup: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinationWeightSeries {
    pub strategy: Strategy,
    pub entries: BTreeMap<(YearMonth, Level, usize), WeightEntry>,
}

impl CombinationWeightSeries {
    pub fn get(&self, origin: YearMonth, q: f64, h: usize) -> Option<WeightEntry> {
        self.entries.get(&(origin, Level(q), h)).copied()
    }

    /// Origins with at least one warm-up cell.
    pub fn warmup_origins(&self) -> Vec<YearMonth> {
        let mut out: Vec<YearMonth> = self
            .entries
            .iter()
            .filter(|(_, e)| e.warmup)
            .map(|((o, _, _), _)| *o)
            .collect();
        out.dedup();
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_weights_csv(std::slice::from_ref(self), writer)
    }
}

/// Several weight series in one table, keyed by strategy label.
pub fn write_weights_csv<W: Write>(series: &[CombinationWeightSeries], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "origin", "quantile", "horizon", "lambda", "warmup"])?;
    for s in series {
        let label = s.strategy.label();
        for ((o, q, h), e) in &s.entries {
            w.write_record([
                label.clone(),
                o.to_string(),
                q.0.to_string(),
                h.to_string(),
                e.lambda.to_string(),
                e.warmup.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<weight series>", e))?;
    Ok(())
}

/// Pairs of sets for the two models, matched by origin.
fn match_origins<'a>(
    a: &'a [QuantileForecastSet],
    b: &'a [QuantileForecastSet],
) -> Result<Vec<(&'a QuantileForecastSet, &'a QuantileForecastSet)>> {
    let by_origin: BTreeMap<YearMonth, &QuantileForecastSet> = b.iter().map(|s| (s.origin, s)).collect();
    let mut out = Vec::with_capacity(a.len());
    for sa in a {
        let sb = by_origin
            .get(&sa.origin)
            .ok_or_else(|| Error::Misaligned(format!("no benchmark forecast at {}", sa.origin)))?;
        if !sa.aligned_with(sb) {
            return Err(Error::Misaligned(format!("grids differ at {}", sa.origin)));
        }
        out.push((sa, *sb));
    }
    if out.len() != b.len() {
        return Err(Error::Misaligned("benchmark has origins the first model lacks".into()));
    }
    out.sort_by_key(|(s, _)| s.origin);
    Ok(out)
}

/// The `window` most recent pairs usable at `origin` for horizon index `hi`
/// and level index `qi`: earlier origins whose target `o + h` is at or before
/// `origin` and has a realization.
fn recent_pairs(
    matched: &[(&QuantileForecastSet, &QuantileForecastSet)],
    realizations: &BTreeMap<YearMonth, f64>,
    origin: YearMonth,
    h: usize,
    hi: usize,
    qi: usize,
    window: usize,
) -> Vec<PastPair> {
    let mut pairs: Vec<PastPair> = matched
        .iter()
        .rev()
        .filter(|(a, _)| a.origin.add_months(h as i64) <= origin)
        .filter_map(|(a, b)| {
            let y = *realizations.get(&a.origin.add_months(h as i64))?;
            Some(PastPair {
                forecast_a: a.values[hi][qi],
                forecast_b: b.values[hi][qi],
                realization: y,
            })
        })
        .take(window)
        .collect();
    pairs.reverse();
    pairs
}

/// Runs `strategy` over every origin. Returns the combined sets, labelled
/// with the strategy, and the weights used.
pub fn combine_recursive(
    a: &[QuantileForecastSet],
    b: &[QuantileForecastSet],
    realizations: &BTreeMap<YearMonth, f64>,
    strategy: Strategy,
) -> Result<(Vec<QuantileForecastSet>, CombinationWeightSeries)> {
    strategy.validate()?;
    let matched = match_origins(a, b)?;
    let label = strategy.label();
    let mut sets = Vec::with_capacity(matched.len());
    let mut entries = BTreeMap::new();
    for (sa, sb) in &matched {
        let mut weights = vec![vec![FALLBACK_WEIGHT; sa.quantiles.len()]; sa.horizons.len()];
        for (hi, &h) in sa.horizons.iter().enumerate() {
            for (qi, &q) in sa.quantiles.iter().enumerate() {
                let entry = match strategy {
                    Strategy::Fixed { lambda } => WeightEntry { lambda, warmup: false },
                    Strategy::Performance { window } | Strategy::Optimal { window } => {
                        let pairs = recent_pairs(&matched, realizations, sa.origin, h, hi, qi, window);
                        if pairs.len() < window {
                            WeightEntry { lambda: FALLBACK_WEIGHT, warmup: true }
                        } else if let Strategy::Performance { .. } = strategy {
                            let n = pairs.len() as f64;
                            let qa = pairs.iter().map(|p| pinball(p.realization - p.forecast_a, q)).sum::<f64>() / n;
                            let qb = pairs.iter().map(|p| pinball(p.realization - p.forecast_b, q)).sum::<f64>() / n;
                            WeightEntry { lambda: performance_weight(qa, qb), warmup: false }
                        } else {
                            WeightEntry { lambda: optimal_weight(&pairs, q), warmup: false }
                        }
                    }
                };
                weights[hi][qi] = entry.lambda;
                entries.insert((sa.origin, Level(q), h), entry);
            }
        }
        sets.push(combine_cellwise(&label, sa, sb, |hi, qi| weights[hi][qi])?);
    }
    Ok((sets, CombinationWeightSeries { strategy, entries }))
}

/// One point of a score-versus-weight curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub quantile: f64,
    pub horizon: usize,
    pub lambda: f64,
    /// Average score of the fixed-weight combination.
    pub score: f64,
    /// `score` over the score of the second model alone.
    pub ratio: f64,
    /// Marks the in-sample minimizer.
    pub optimal: bool,
}

/// Score of the fixed-weight combination on a grid of weights, per
/// (quantile, horizon), over all pairs with an observed target, plus the
/// in-sample optimal weight.
pub fn lambda_curve(
    a: &[QuantileForecastSet],
    b: &[QuantileForecastSet],
    realizations: &BTreeMap<YearMonth, f64>,
    grid_steps: usize,
) -> Result<Vec<CurvePoint>> {
    let matched = match_origins(a, b)?;
    let Some((first, _)) = matched.first() else {
        return Ok(Vec::new());
    };
    let grid: Vec<f64> = (0..=grid_steps).map(|i| i as f64 / grid_steps.max(1) as f64).collect();
    let mut out = Vec::new();
    for (hi, &h) in first.horizons.iter().enumerate() {
        for (qi, &q) in first.quantiles.iter().enumerate() {
            let pairs: Vec<PastPair> = matched
                .iter()
                .filter_map(|(sa, sb)| {
                    let y = *realizations.get(&sa.origin.add_months(h as i64))?;
                    Some(PastPair { forecast_a: sa.values[hi][qi], forecast_b: sb.values[hi][qi], realization: y })
                })
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let bench = window_loss(&pairs, q, 0.0);
            let point = |lambda: f64, optimal: bool| {
                let score = window_loss(&pairs, q, lambda);
                CurvePoint {
                    quantile: q,
                    horizon: h,
                    lambda,
                    score,
                    ratio: if bench > 0.0 { score / bench } else { f64::NAN },
                    optimal,
                }
            };
            out.extend(grid.iter().map(|&l| point(l, false)));
            out.push(point(optimal_weight(&pairs, q), true));
        }
    }
    Ok(out)
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["quantile", "horizon", "lambda", "score", "ratio", "optimal"])?;
    for p in points {
        let ratio = if p.ratio.is_nan() { String::new() } else { p.ratio.to_string() };
        w.write_record([
            p.quantile.to_string(),
            p.horizon.to_string(),
            p.lambda.to_string(),
            p.score.to_string(),
            ratio,
            p.optimal.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<lambda curve>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::RngSeed;
    use proptest::prelude::{prop_assert, proptest};
    use rand::Rng;

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    fn one(model: &str, origin: YearMonth, v: f64) -> QuantileForecastSet {
        QuantileForecastSet::new(model, origin, vec![1], vec![0.5], vec![vec![v]]).unwrap()
    }

    #[test]
    fn fixed_endpoints_and_midpoint() {
        let o = ym("2000-01");
        let a = one("a", o, 2.0);
        let b = one("b", o, 4.0);
        assert_eq!(combine_fixed("c", &a, &b, 1.0).unwrap().values, a.values);
        assert_eq!(combine_fixed("c", &a, &b, 0.0).unwrap().values, b.values);
        assert_eq!(combine_fixed("c", &a, &b, 0.5).unwrap().values, vec![vec![3.0]]);
        assert!(combine_fixed("c", &a, &b, 1.5).is_err());
        assert!(combine_fixed("c", &a, &one("b", ym("2000-02"), 4.0), 0.5).is_err());
    }

    #[test]
    fn performance_weight_examples() {
        assert_eq!(performance_weight(2.0, 2.0), 0.5);
        assert_eq!(performance_weight(1.0, 3.0), 0.75);
        assert_eq!(performance_weight(0.0, 3.0), 1.0);
        assert_eq!(performance_weight(0.0, 0.0), 0.5);
    }

    proptest! {
        #[test]
        fn performance_weight_is_scale_invariant(a in 0.0f64..10.0, b in 0.001f64..10.0, c in 0.001f64..1000.0) {
            let w = performance_weight(a, b);
            prop_assert!((0.0..=1.0).contains(&w));
            prop_assert!((performance_weight(c * a, c * b) - w).abs() < 1e-12);
        }
    }

    fn random_pairs(rng: &mut impl Rng, n: usize) -> Vec<PastPair> {
        (0..n)
            .map(|_| PastPair {
                forecast_a: rng.random_range(-2.0..2.0),
                forecast_b: rng.random_range(-2.0..2.0),
                realization: rng.random_range(-2.0..2.0),
            })
            .collect()
    }

    #[test]
    fn optimal_weight_special_cases() {
        let perfect: Vec<PastPair> = (0..10)
            .map(|i| PastPair { forecast_a: i as f64, forecast_b: 0.5 * i as f64 + 3.0, realization: i as f64 })
            .collect();
        assert_eq!(optimal_weight(&perfect, 0.3), 1.0);
        let same: Vec<PastPair> = (0..10)
            .map(|i| PastPair { forecast_a: i as f64, forecast_b: i as f64, realization: 1.0 })
            .collect();
        assert_eq!(optimal_weight(&same, 0.7), 0.5);
        assert_eq!(optimal_weight(&[], 0.7), 0.5);
    }

    #[test]
    fn optimal_weight_matches_grid_search() {
        let mut rng = RngSeed(1).rng();
        for _ in 0..100 {
            let pairs = random_pairs(&mut rng, 20);
            let q = [0.1, 0.5, 0.9][rng.random_range(0..3)];
            let exact = optimal_weight(&pairs, q);
            let grid_best = (0..=10_000)
                .map(|i| window_loss(&pairs, q, i as f64 * 1e-4))
                .fold(f64::INFINITY, f64::min);
            let got = window_loss(&pairs, q, exact);
            assert!(got <= grid_best + 1e-12 && grid_best - got < 1e-3);
            assert!(got <= window_loss(&pairs, q, 0.0) && got <= window_loss(&pairs, q, 1.0));
        }
    }

    proptest! {
        #[test]
        fn window_loss_is_convex(seed in 0u64..10_000, l1 in 0.0f64..1.0, l2 in 0.0f64..1.0, q in 0.05f64..0.95) {
            let pairs = random_pairs(&mut RngSeed(seed).rng(), 15);
            let mid = window_loss(&pairs, q, 0.5 * (l1 + l2));
            prop_assert!(mid <= 0.5 * (window_loss(&pairs, q, l1) + window_loss(&pairs, q, l2)) + 1e-12);
        }
    }

    fn history(n: usize, seed: u64) -> (Vec<QuantileForecastSet>, Vec<QuantileForecastSet>, BTreeMap<YearMonth, f64>) {
        let mut rng = RngSeed(seed).rng();
        let start = ym("2000-01");
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut real = BTreeMap::new();
        for i in 0..n as i64 {
            let o = start.add_months(i);
            let mk = |m: &str, rng: &mut crate::dist::SamplerRng| {
                let values = (0..2).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
                QuantileForecastSet::new(m, o, vec![1, 2], vec![0.1, 0.9], values).unwrap()
            };
            a.push(mk("a", &mut rng));
            b.push(mk("b", &mut rng));
            real.insert(o, rng.random_range(-1.0..1.0));
        }
        for i in n as i64..n as i64 + 3 {
            real.insert(start.add_months(i), rng.random_range(-1.0..1.0));
        }
        (a, b, real)
    }

    #[test]
    fn recursive_weights_use_exactly_s_observable_pairs() {
        let (a, b, real) = history(30, 2);
        let s = 5;
        let (_, perf) = combine_recursive(&a, &b, &real, Strategy::Performance { window: s }).unwrap();
        for (i, sa) in a.iter().enumerate() {
            for h in [1usize, 2] {
                let e = perf.get(sa.origin, 0.1, h).unwrap();
                // Origins o with o + h <= t: i - h + 1 of them.
                let available = (i + 1).saturating_sub(h);
                assert_eq!(e.warmup, available < s, "origin {i} h {h}");
                if !e.warmup {
                    let hi = h - 1;
                    let used: Vec<usize> = (available - s..available).collect();
                    let mean = |sets: &[QuantileForecastSet]| {
                        used.iter()
                            .map(|&j| pinball(real[&sets[j].origin.add_months(h as i64)] - sets[j].values[hi][0], 0.1))
                            .sum::<f64>()
                            / s as f64
                    };
                    let want = performance_weight(mean(&a), mean(&b));
                    assert!((e.lambda - want).abs() < 1e-14);
                }
            }
        }
        assert_eq!(perf.warmup_origins().len(), s + 1);
    }

    #[test]
    fn recursive_combination_does_not_look_ahead() {
        let (a, b, real) = history(25, 3);
        let strat = Strategy::Optimal { window: 6 };
        let (sets, weights) = combine_recursive(&a, &b, &real, strat).unwrap();
        let cut = ym("2001-01");
        let truncated: BTreeMap<_, _> = real.iter().filter(|(d, _)| **d <= cut).map(|(d, v)| (*d, *v)).collect();
        let keep = |s: &&QuantileForecastSet| s.origin <= cut;
        let a2: Vec<_> = a.iter().filter(keep).cloned().collect();
        let b2: Vec<_> = b.iter().filter(keep).cloned().collect();
        let (sets2, _) = combine_recursive(&a2, &b2, &truncated, strat).unwrap();
        assert_eq!(&sets[..sets2.len()], &sets2[..]);
        assert!(weights.entries.values().all(|e| (0.0..=1.0).contains(&e.lambda)));
        assert_eq!(sets[0].model_id, "comb_opt_s6");
    }

    #[test]
    fn fixed_strategy_has_constant_weights() {
        let (a, b, real) = history(10, 4);
        let (_, w) = combine_recursive(&a, &b, &real, Strategy::Fixed { lambda: 0.3 }).unwrap();
        assert!(w.entries.values().all(|e| e.lambda == 0.3 && !e.warmup));
        assert!(combine_recursive(&a, &b, &real, Strategy::Fixed { lambda: -0.1 }).is_err());
    }

    #[test]
    fn curve_marks_optimum_below_endpoints() {
        let (a, b, real) = history(40, 5);
        let pts = lambda_curve(&a, &b, &real, 20).unwrap();
        assert_eq!(pts.len(), 2 * 2 * 22);
        for chunk in pts.chunks(22) {
            let opt = chunk.last().unwrap();
            assert!(opt.optimal);
            assert!(chunk[..21].iter().all(|p| opt.score <= p.score + 1e-12));
            assert!((chunk[0].ratio - 1.0).abs() < 1e-15);
        }
    }
}
