use nalgebra::DMatrix;

use super::steps::{step_factors, step_lambda, step_phi, step_shrinkage, step_sigma, step_z};
use super::{
    ChainDiagnostics, CoefficientPrior, DrawSetMeta, ErrorModel, McmcSchedule, PosteriorDraw,
    PosteriorDrawSet, PriorConfig, QbvarConfig, QbvarState, SigmaUpdate,
};
use crate::data::LagDesign;
use crate::dist::RngSeed;
use crate::{Error, Result};

/// Everything the shared Gibbs driver needs, independent of the error model.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub model: ErrorModel,
    pub factors: usize,
    pub prior: PriorConfig,
    pub coefficient_prior: CoefficientPrior,
    pub sigma_update: SigmaUpdate,
    pub mcmc: McmcSchedule,
    pub seed: RngSeed,
}

/// Runs the quantile sampler and keeps the thinned post-burn-in draws.
pub fn run_chain(design: &LagDesign, config: &QbvarConfig) -> Result<PosteriorDrawSet> {
    config.validate()?;
    if design.lags != config.lags {
        return Err(Error::InvalidParameter(format!(
            "design has {} lags, config asks for {}",
            design.lags, config.lags
        )));
    }
    let spec = SamplerSpec {
        model: ErrorModel::quantile(config.quantile),
        factors: config.factors,
        prior: config.prior,
        coefficient_prior: config.coefficient_prior,
        sigma_update: config.sigma_update,
        mcmc: config.mcmc,
        seed: config.seed,
    };
    run_sampler(design, &spec)
}

/// Systematic sweep per iteration: coefficients, loadings, factors,
/// auxiliaries (quantile model only), scales, shrinkage (horseshoe only).
pub fn run_sampler(design: &LagDesign, spec: &SamplerSpec) -> Result<PosteriorDrawSet> {
    spec.mcmc.validate()?;
    super::config::validate_prior(&spec.prior, &spec.coefficient_prior)?;
    if design.n_obs() == 0 {
        return Err(Error::InsufficientObservations { needed: 0, have: 0 });
    }
    let mut rng = spec.seed.rng();
    let mut state = QbvarState::initialize(design, spec.factors)?;
    if let CoefficientPrior::Fixed { variance } = spec.coefficient_prior {
        state.kappa = variance.sqrt();
    }

    let retained = spec.mcmc.retained();
    let mut draws = Vec::with_capacity(retained);
    let mut residual_norms = Vec::with_capacity(spec.mcmc.iterations);
    let (n, k) = (design.n_vars(), design.n_regressors());
    let mut half_sums = [DMatrix::zeros(n, k), DMatrix::zeros(n, k)];
    let mut half_counts = [0usize; 2];

    for iter in 0..spec.mcmc.iterations {
        let sweep = |state: &mut QbvarState, rng: &mut _| -> Result<()> {
            step_phi(state, design, &spec.model, rng)?;
            step_lambda(state, design, &spec.model, &spec.prior, rng)?;
            step_factors(state, design, &spec.model, rng)?;
            if let ErrorModel::AsymmetricLaplace { quantile } = &spec.model {
                step_z(state, design, quantile, rng)?;
            }
            step_sigma(state, design, &spec.model, &spec.prior, spec.sigma_update, rng)?;
            if spec.coefficient_prior == CoefficientPrior::Horseshoe {
                step_shrinkage(state, rng)?;
            }
            Ok(())
        };
        sweep(&mut state, &mut rng).map_err(|e| Error::Chain {
            iteration: iter,
            source: Box::new(e),
        })?;
        let norm = state.residuals(design).norm();
        if !norm.is_finite() || state.phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Chain {
                iteration: iter,
                source: Box::new(Error::InvalidParameter("non-finite parameter draw".into())),
            });
        }
        residual_norms.push(norm);

        if spec.mcmc.keeps(iter) {
            let half = usize::from(draws.len() >= retained / 2 && retained > 1);
            half_sums[half] += &state.phi;
            half_counts[half] += 1;
            draws.push(PosteriorDraw {
                phi: state.phi.clone(),
                lambda: state.lambda.clone(),
                sigma: state.sigma.clone(),
            });
        }
    }

    let [first, second] = half_sums;
    let mean = |sum: DMatrix<f64>, count: usize| (count > 0).then(|| sum / count as f64);
    Ok(PosteriorDrawSet {
        meta: DrawSetMeta {
            model: spec.model,
            lags: design.lags,
            n_vars: n,
            factors: spec.factors,
            mcmc: spec.mcmc,
            seed: spec.seed,
        },
        draws,
        diagnostics: ChainDiagnostics {
            residual_norms,
            phi_mean_first_half: mean(first, half_counts[0]),
            phi_mean_second_half: mean(second, half_counts[1]),
        },
    })
}
