use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Quantile level `q` with the mixture constants of the asymmetric Laplace
/// representation: `θ = (1-2q)/(q(1-q))` and `τ² = 2/(q(1-q))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel {
    q: f64,
    theta: f64,
    tau2: f64,
}

impl QuantileLevel {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParameter(format!("quantile level {q} not in (0, 1)")));
        }
        let w = q * (1.0 - q);
        Ok(Self {
            q,
            theta: (1.0 - 2.0 * q) / w,
            tau2: 2.0 / w,
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(q: f64) -> Result<Self> {
        QuantileLevel::new(q)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(level: QuantileLevel) -> f64 {
        level.q
    }
}
