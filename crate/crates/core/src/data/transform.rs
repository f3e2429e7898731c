//! Stationarity transformations and price construction.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-series transformation code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum TransformCode {
    /// `x_t - x_{t-1}`.
    Difference,
    /// Leave the series as is.
    Level,
    /// `ln x_t - ln x_{t-1}`.
    LogDifference,
}

impl TransformCode {
    pub fn code(self) -> i64 {
        match self {
            TransformCode::Difference => 1,
            TransformCode::Level => 2,
            TransformCode::LogDifference => 5,
        }
    }

    /// Number of leading observations consumed by the transformation.
    pub fn lost_observations(self) -> usize {
        match self {
            TransformCode::Level => 0,
            TransformCode::Difference | TransformCode::LogDifference => 1,
        }
    }
}

impl TryFrom<i64> for TransformCode {
    type Error = Error;

    fn try_from(code: i64) -> Result<Self> {
        match code {
            1 => Ok(TransformCode::Difference),
            2 => Ok(TransformCode::Level),
            5 => Ok(TransformCode::LogDifference),
            other => Err(Error::UnknownTransformCode(other)),
        }
    }
}

impl From<TransformCode> for i64 {
    fn from(code: TransformCode) -> i64 {
        code.code()
    }
}

pub fn apply_transform(levels: &[f64], code: TransformCode) -> Result<Vec<f64>> {
    apply_transform_named(levels, code, "<unnamed>")
}

pub(crate) fn apply_transform_named(
    levels: &[f64],
    code: TransformCode,
    series: &str,
) -> Result<Vec<f64>> {
    if code.lost_observations() > 0 && levels.len() < 2 {
        return Err(Error::InsufficientObservations {
            needed: 1,
            have: levels.len(),
        });
    }
    match code {
        TransformCode::Level => Ok(levels.to_vec()),
        TransformCode::Difference => Ok(levels.windows(2).map(|w| w[1] - w[0]).collect()),
        TransformCode::LogDifference => {
            if let Some((row, &value)) = levels.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NonPositiveLevel {
                    series: series.to_string(),
                    row,
                    value,
                });
            }
            Ok(levels.windows(2).map(|w| w[1].ln() - w[0].ln()).collect())
        }
    }
}

/// Real prices in final-period currency: `nominal_t * cpi_last / cpi_t`.
pub fn deflate(nominal: &[f64], cpi: &[f64]) -> Result<Vec<f64>> {
    if nominal.len() != cpi.len() {
        return Err(Error::LengthMismatch(format!(
            "nominal series has {} observations, deflator {}",
            nominal.len(),
            cpi.len()
        )));
    }
    if let Some(&bad) = cpi.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::InvalidParameter(format!("deflator value {bad} is not positive")));
    }
    let Some(&base) = cpi.last() else {
        return Ok(Vec::new());
    };
    Ok(nominal
        .iter()
        .zip(cpi)
        .map(|(x, c)| x / (c / base))
        .collect())
}

/// Extends `target` backwards over its leading missing values by cumulating the
/// donor's log-differences: `target[t-1] = target[t] * donor[t-1] / donor[t]`.
///
/// Interior missing values in `target` are left alone; the panel ingestion step
/// rejects them.
pub fn splice_by_growth(target: &[f64], donor: &[f64]) -> Result<Vec<f64>> {
    if target.len() != donor.len() {
        return Err(Error::LengthMismatch(format!(
            "target has {} observations, donor {}",
            target.len(),
            donor.len()
        )));
    }
    let Some(first) = target.iter().position(|v| !v.is_nan()) else {
        return Err(Error::Empty("target series has no observations to splice onto".into()));
    };
    let mut out = target.to_vec();
    for t in (0..first).rev() {
        let (prev, next) = (donor[t], donor[t + 1]);
        if !(prev > 0.0 && next > 0.0) {
            return Err(Error::NonPositiveLevel {
                series: "donor".into(),
                row: if prev > 0.0 { t + 1 } else { t },
                value: if prev > 0.0 { next } else { prev },
            });
        }
        out[t] = out[t + 1] * (prev.ln() - next.ln()).exp();
    }
    Ok(out)
}
