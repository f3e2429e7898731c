//! Gaussian factor BVAR benchmark.
//!
//! `y_t = Φ x_t + Λ f_t + v_t`, `v_t ~ N(0, diag(σ))`, with the same
//! horseshoe prior on `Φ` and the same loading and scale priors as the
//! quantile model. Estimation reuses the quantile sampler's blocks with the
//! auxiliary step removed and the conjugate normal/inverse-gamma scale update.

use serde::{Deserialize, Serialize};

use crate::data::LagDesign;
use crate::dist::RngSeed;
use crate::qbvar::{
    run_sampler, CoefficientPrior, ErrorModel, McmcSchedule, PosteriorDrawSet, PriorConfig,
    SamplerSpec, SigmaUpdate,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvarConfig {
    #[serde(default = "default_bvar_lags")]
    pub lags: usize,
    /// Number of factors; zero gives independent Gaussian equations.
    #[serde(default = "default_factors")]
    pub factors: usize,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub coefficient_prior: CoefficientPrior,
    #[serde(default)]
    pub mcmc: McmcSchedule,
    #[serde(default)]
    pub seed: RngSeed,
}

fn default_bvar_lags() -> usize {
    12
}

fn default_factors() -> usize {
    1
}

impl Default for BvarConfig {
    fn default() -> Self {
        Self {
            lags: default_bvar_lags(),
            factors: default_factors(),
            prior: PriorConfig::default(),
            coefficient_prior: CoefficientPrior::default(),
            mcmc: McmcSchedule::default(),
            seed: RngSeed::default(),
        }
    }
}

impl BvarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lags == 0 {
            return Err(Error::InvalidParameter("lag order must be at least 1".into()));
        }
        self.mcmc.validate()
    }
}

pub fn run_bvar_chain(design: &LagDesign, config: &BvarConfig) -> Result<PosteriorDrawSet> {
    config.validate()?;
    if design.lags != config.lags {
        return Err(Error::InvalidParameter(format!(
            "design has {} lags, config asks for {}",
            design.lags, config.lags
        )));
    }
    let spec = SamplerSpec {
        model: ErrorModel::Gaussian,
        factors: config.factors,
        prior: config.prior,
        coefficient_prior: config.coefficient_prior,
        sigma_update: SigmaUpdate::default(),
        mcmc: config.mcmc,
        seed: config.seed,
    };
    run_sampler(design, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_lag_design;
    use crate::forecast::{predictive_quantile_forecast, simulate_paths};
    use crate::sim::{SimErrors, VarProcess};
    use crate::data::YearMonth;
    use nalgebra::{DMatrix, DVector};

    fn gaussian_process(phi: DMatrix<f64>, lambda: DMatrix<f64>, sigma: Vec<f64>) -> VarProcess {
        VarProcess {
            phi,
            lambda,
            sigma: DVector::from_vec(sigma),
            errors: SimErrors::Gaussian,
        }
    }

    #[test]
    fn defaults() {
        let c = BvarConfig::default();
        assert_eq!((c.lags, c.factors), (12, 1));
        assert_eq!(c.mcmc.retained(), 400);
        let parsed: BvarConfig = toml::from_str("lags = 2\nfactors = 0").unwrap();
        assert_eq!((parsed.lags, parsed.factors), (2, 0));
    }

    #[test]
    fn diffuse_univariate_posterior_mean_is_ols() {
        let process = gaussian_process(
            DMatrix::from_row_slice(1, 2, &[0.5, 0.6]),
            DMatrix::zeros(1, 0),
            vec![1.0],
        );
        let y = process.simulate(301, 100, &mut RngSeed(1).rng()).unwrap();
        let design = build_lag_design(&y, 1, vec!["y".into()]).unwrap();
        let config = BvarConfig {
            lags: 1,
            factors: 0,
            coefficient_prior: CoefficientPrior::Fixed { variance: 1e8 },
            mcmc: McmcSchedule { iterations: 6000, burn_in: 500, thin: 1 },
            seed: RngSeed(2),
            ..BvarConfig::default()
        };
        let set = run_bvar_chain(&design, &config).unwrap();
        let mean = set.mean_phi().unwrap();
        let ols = (design.x.transpose() * &design.x)
            .lu()
            .solve(&(design.x.transpose() * design.y.column(0)))
            .unwrap();
        // Monte-Carlo error: posterior sd / sqrt(draws), with a margin for
        // autocorrelation.
        let resid = &design.y.column(0) - &design.x * &ols;
        let s2 = resid.norm_squared() / design.n_obs() as f64;
        let cov = (design.x.transpose() * &design.x).try_inverse().unwrap() * s2;
        for j in 0..2 {
            let mc_se = (cov[(j, j)] / set.len() as f64).sqrt();
            assert!((mean[(0, j)] - ols[j]).abs() < 5.0 * mc_se, "{j}: {} vs {}", mean[(0, j)], ols[j]);
        }
    }

    #[test]
    fn implied_covariance_is_spd_for_every_draw() {
        let process = gaussian_process(
            DMatrix::from_row_slice(2, 3, &[0.1, 0.4, 0.0, 0.0, 0.1, 0.3]),
            DMatrix::from_column_slice(2, 1, &[0.6, 0.4]),
            vec![0.5, 0.5],
        );
        let y = process.simulate(201, 50, &mut RngSeed(3).rng()).unwrap();
        let design = build_lag_design(&y, 1, vec!["a".into(), "b".into()]).unwrap();
        let config = BvarConfig {
            lags: 1,
            mcmc: McmcSchedule { iterations: 400, burn_in: 100, thin: 5 },
            ..BvarConfig::default()
        };
        let set = run_bvar_chain(&design, &config).unwrap();
        for d in &set.draws {
            let omega = d.innovation_covariance();
            assert!((&omega - omega.transpose()).amax() == 0.0);
            let rebuilt = &d.lambda * d.lambda.transpose() + DMatrix::from_diagonal(&d.sigma);
            assert!((&omega - rebuilt).amax() < 1e-15);
            assert!(omega.symmetric_eigen().eigenvalues.iter().all(|&e| e > 0.0));
        }
    }

    #[test]
    fn recovers_coefficients_on_gaussian_data() {
        // Weak cross-lag dependence keeps the two lag regressors close to
        // orthogonal; with strong cross effects the sampling error of OLS
        // itself exceeds 0.05 at this sample size.
        let phi = DMatrix::from_row_slice(2, 3, &[0.2, 0.5, 0.05, -0.1, 0.0, 0.4]);
        let process = gaussian_process(phi.clone(), DMatrix::from_column_slice(2, 1, &[0.3, 0.2]), vec![0.1, 0.1]);
        let y = process.simulate(1001, 200, &mut RngSeed(4).rng()).unwrap();
        let design = build_lag_design(&y, 1, vec!["a".into(), "b".into()]).unwrap();
        let config = BvarConfig { lags: 1, seed: RngSeed(5), ..BvarConfig::default() };
        let set = run_bvar_chain(&design, &config).unwrap();
        let med = set.median_phi().unwrap();
        let err = (&med - &phi).amax();
        assert!(err < 0.05, "{err}\n{med}");
    }

    #[test]
    fn zero_loadings_give_independent_gaussian_predictives() {
        use crate::dist::mvn::tests::ks_two_sample;
        use rand::Rng;
        use rand_distr::StandardNormal;
        let process = gaussian_process(
            DMatrix::from_row_slice(2, 3, &[0.1, 0.5, 0.0, 0.0, 0.0, 0.3]),
            DMatrix::zeros(2, 0),
            vec![1.0, 0.5],
        );
        let y = process.simulate(201, 50, &mut RngSeed(6).rng()).unwrap();
        let design = build_lag_design(&y, 1, vec!["a".into(), "b".into()]).unwrap();
        let config = BvarConfig {
            lags: 1,
            factors: 0,
            mcmc: McmcSchedule { iterations: 3000, burn_in: 1000, thin: 1 },
            ..BvarConfig::default()
        };
        let set = run_bvar_chain(&design, &config).unwrap();
        let tail = design.y.rows(design.n_obs() - 1, 1).into_owned();
        let paths = simulate_paths(&set, &tail, 1, &mut RngSeed(7).rng()).unwrap();
        // Reference: each equation simulated on its own from the same draws.
        let mut rng = RngSeed(8).rng();
        for i in 0..2 {
            let mut joint = paths.at(1, i);
            let mut separate: Vec<f64> = set
                .draws
                .iter()
                .map(|d| {
                    let x = [1.0, tail[(0, 0)], tail[(0, 1)]];
                    let mean: f64 = (0..3).map(|j| d.phi[(i, j)] * x[j]).sum();
                    mean + d.sigma[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let ks = ks_two_sample(&mut joint, &mut separate);
            // 1% critical value for two samples of 2000.
            assert!(ks < 1.63 * (2.0f64 / 2000.0).sqrt(), "{i}: {ks}");
        }
        let origin: YearMonth = "2000-01".parse().unwrap();
        let f = predictive_quantile_forecast("bvar", origin, &paths, 0, &[0.1, 0.5, 0.9]).unwrap();
        assert!(f.values[0][0] < f.values[0][1] && f.values[0][1] < f.values[0][2]);
    }
}
