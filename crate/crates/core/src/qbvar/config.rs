use serde::{Deserialize, Serialize};

use super::{QuantileLevel, SigmaUpdate};
use crate::dist::RngSeed;
use crate::{Error, Result};

/// Hyperparameters shared by the quantile and Gaussian samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Prior variance of each factor loading.
    pub v_lambda: f64,
    /// Inverse-gamma shape of the idiosyncratic scales.
    pub a_sigma: f64,
    /// Inverse-gamma scale of the idiosyncratic scales.
    pub b_sigma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            v_lambda: 1.0,
            a_sigma: 3.0,
            b_sigma: 1.0,
        }
    }
}

/// Prior on the VAR coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientPrior {
    /// Horseshoe with a single global scale per model.
    #[default]
    Horseshoe,
    /// `N(0, variance)` on every coefficient; shrinkage step skipped.
    Fixed { variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcSchedule {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for McmcSchedule {
    fn default() -> Self {
        Self {
            iterations: 3000,
            burn_in: 1000,
            thin: 5,
        }
    }
}

impl McmcSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::InvalidParameter(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thinning interval must be >= 1".into()));
        }
        if self.retained() == 0 {
            return Err(Error::InvalidParameter(
                "schedule retains no draws: need iterations - burn_in >= thin".into(),
            ));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin
    }

    /// Whether zero-based iteration `iter` is stored.
    pub fn keeps(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in + 1) % self.thin == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QbvarConfig {
    pub quantile: QuantileLevel,
    #[serde(default = "default_qbvar_lags")]
    pub lags: usize,
    #[serde(default = "default_factors")]
    pub factors: usize,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub coefficient_prior: CoefficientPrior,
    #[serde(default)]
    pub sigma_update: SigmaUpdate,
    #[serde(default)]
    pub mcmc: McmcSchedule,
    #[serde(default)]
    pub seed: RngSeed,
}

fn default_qbvar_lags() -> usize {
    4
}

fn default_factors() -> usize {
    1
}

impl Default for RngSeed {
    fn default() -> Self {
        RngSeed(0)
    }
}

impl QbvarConfig {
    /// Defaults: four lags, one factor, `V_λ = 1`, `a_σ = 3`, `b_σ = 1`,
    /// 3000 iterations with 1000 burn-in and thinning 5.
    pub fn new(quantile: QuantileLevel) -> Self {
        Self {
            quantile,
            lags: default_qbvar_lags(),
            factors: default_factors(),
            prior: PriorConfig::default(),
            coefficient_prior: CoefficientPrior::default(),
            sigma_update: SigmaUpdate::default(),
            mcmc: McmcSchedule::default(),
            seed: RngSeed::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lags == 0 {
            return Err(Error::InvalidParameter("lag order must be >= 1".into()));
        }
        if self.factors == 0 {
            return Err(Error::InvalidParameter("factor count must be >= 1".into()));
        }
        validate_prior(&self.prior, &self.coefficient_prior)?;
        self.mcmc.validate()
    }
}

pub(crate) fn validate_prior(prior: &PriorConfig, coef: &CoefficientPrior) -> Result<()> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
        }
    };
    positive("v_lambda", prior.v_lambda)?;
    positive("a_sigma", prior.a_sigma)?;
    positive("b_sigma", prior.b_sigma)?;
    if let CoefficientPrior::Fixed { variance } = coef {
        positive("fixed coefficient prior variance", *variance)?;
    }
    Ok(())
}
