//! Full-conditional updates of the Gibbs sampler.
//!
//! Conditional on the auxiliaries `z`, the quantile model is Gaussian with
//! observation `(i, t)` shifted by `θ z_it` and with variance `τ² σ_i z_it`.
//! The Gaussian benchmark is the special case with no shift and variance
//! `σ_i`; [`ErrorModel`] carries the difference so the coefficient, loading and
//! factor blocks are shared.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PriorConfig, QbvarState, QuantileLevel};
use crate::data::LagDesign;
use crate::dist::{
    draw_gig, draw_inverse_gamma, update_horseshoe, GigParams, PrecisionGaussian, SCALE_FLOOR,
};
use crate::{Error, Result};

/// Lower bound applied to every auxiliary draw.
pub const Z_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    /// Asymmetric-Laplace working likelihood at the given level.
    AsymmetricLaplace { quantile: QuantileLevel },
    /// Gaussian errors with variance `σ_i`.
    Gaussian,
}

impl ErrorModel {
    pub fn quantile(q: QuantileLevel) -> Self {
        ErrorModel::AsymmetricLaplace { quantile: q }
    }

    #[inline]
    fn shift(&self, z: f64) -> f64 {
        match self {
            ErrorModel::AsymmetricLaplace { quantile } => quantile.theta() * z,
            ErrorModel::Gaussian => 0.0,
        }
    }

    #[inline]
    fn variance(&self, sigma: f64, z: f64) -> f64 {
        match self {
            ErrorModel::AsymmetricLaplace { quantile } => quantile.tau2() * sigma * z,
            ErrorModel::Gaussian => sigma,
        }
    }
}

/// `X' W X` and `X' W y` for diagonal weights `w`.
fn weighted_normal_equations(
    x: &DMatrix<f64>,
    w: &[f64],
    y: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let mut xw = x.clone();
    for (t, wt) in w.iter().enumerate() {
        let s = wt.sqrt();
        xw.row_mut(t).scale_mut(s);
    }
    let gram = xw.tr_mul(&xw);
    let wy = DVector::from_iterator(y.len(), w.iter().zip(y).map(|(a, b)| a * b));
    let linear = x.tr_mul(&wy);
    (gram, linear)
}

/// Conditional of row `i` of `Φ`: precision `X'D_i^{-1}X + V_i^{-1}`, linear
/// term `X'D_i^{-1}ỹ_i` with `ỹ_it = y_it - λ_i'f_t - θ z_it`.
pub fn phi_row_posterior(
    state: &QbvarState,
    design: &LagDesign,
    model: &ErrorModel,
    i: usize,
) -> Result<PrecisionGaussian> {
    let t_obs = design.n_obs();
    let lf = factor_component(state, i);
    let mut w = Vec::with_capacity(t_obs);
    let mut target = Vec::with_capacity(t_obs);
    for t in 0..t_obs {
        let z = state.z[(t, i)];
        w.push(1.0 / model.variance(state.sigma[i], z));
        target.push(design.y[(t, i)] - lf.as_ref().map_or(0.0, |v| v[t]) - model.shift(z));
    }
    let (mut precision, linear) = weighted_normal_equations(&design.x, &w, &target);
    let kappa2 = state.kappa * state.kappa;
    for j in 0..design.n_regressors() {
        let prior_var = (state.psi[(i, j)] * state.psi[(i, j)] * kappa2).max(SCALE_FLOOR);
        precision[(j, j)] += 1.0 / prior_var;
    }
    PrecisionGaussian::new(&precision, &linear)
}

fn factor_component(state: &QbvarState, i: usize) -> Option<DVector<f64>> {
    (state.n_factors() > 0).then(|| &state.factors * state.lambda.row(i).transpose())
}

pub fn step_phi<R: Rng + ?Sized>(
    state: &mut QbvarState,
    design: &LagDesign,
    model: &ErrorModel,
    rng: &mut R,
) -> Result<()> {
    for i in 0..design.n_vars() {
        let draw = phi_row_posterior(state, design, model, i)?.sample(rng);
        state.phi.row_mut(i).copy_from(&draw.transpose());
    }
    Ok(())
}

/// Conditional of row `i` of `Λ`: precision `F'D_i^{-1}F + I/V_λ`, linear
/// term `F'D_i^{-1}ỹ_i` with `ỹ_it = y_it - φ_i'x_t - θ z_it`.
pub fn lambda_row_posterior(
    state: &QbvarState,
    design: &LagDesign,
    model: &ErrorModel,
    prior: &PriorConfig,
    i: usize,
) -> Result<PrecisionGaussian> {
    let t_obs = design.n_obs();
    let fitted = &design.x * state.phi.row(i).transpose();
    let mut w = Vec::with_capacity(t_obs);
    let mut target = Vec::with_capacity(t_obs);
    for t in 0..t_obs {
        let z = state.z[(t, i)];
        w.push(1.0 / model.variance(state.sigma[i], z));
        target.push(design.y[(t, i)] - fitted[t] - model.shift(z));
    }
    let (mut precision, linear) = weighted_normal_equations(&state.factors, &w, &target);
    for j in 0..state.n_factors() {
        precision[(j, j)] += 1.0 / prior.v_lambda;
    }
    PrecisionGaussian::new(&precision, &linear)
}

pub fn step_lambda<R: Rng + ?Sized>(
    state: &mut QbvarState,
    design: &LagDesign,
    model: &ErrorModel,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<()> {
    if state.n_factors() == 0 {
        return Ok(());
    }
    for i in 0..design.n_vars() {
        let draw = lambda_row_posterior(state, design, model, prior, i)?.sample(rng);
        state.lambda.row_mut(i).copy_from(&draw.transpose());
    }
    Ok(())
}

/// Conditional of `f_t`: precision `Λ'D_t^{-1}Λ + I_r`, linear term
/// `Λ'D_t^{-1}ỹ_t` with `ỹ_t = y_t - Φx_t - θ z_t`.
pub fn factor_posterior(
    state: &QbvarState,
    design: &LagDesign,
    model: &ErrorModel,
    t: usize,
) -> Result<PrecisionGaussian> {
    let fitted = &state.phi * design.x.row(t).transpose();
    factor_posterior_from(state, design, model, t, &fitted)
}

fn factor_posterior_from(
    state: &QbvarState,
    design: &LagDesign,
    model: &ErrorModel,
    t: usize,
    fitted: &DVector<f64>,
) -> Result<PrecisionGaussian> {
    let (n, r) = (design.n_vars(), state.n_factors());
    let mut precision = DMatrix::identity(r, r);
    let mut linear = DVector::zeros(r);
    for i in 0..n {
        let z = state.z[(t, i)];
        let w = 1.0 / model.variance(state.sigma[i], z);
        let target = design.y[(t, i)] - fitted[i] - model.shift(z);
        let li = state.lambda.row(i);
        for a in 0..r {
            linear[a] += li[a] * w * target;
            for b in 0..r {
                precision[(a, b)] += li[a] * w * li[b];
            }
        }
    }
    PrecisionGaussian::new(&precision, &linear)
}

pub fn step_factors<R: Rng + ?Sized>(
    state: &mut QbvarState,
    design: &LagDesign,
    model: &ErrorModel,
    rng: &mut R,
) -> Result<()> {
    if state.n_factors() == 0 {
        return Ok(());
    }
    let fitted_all = &design.x * state.phi.transpose(); // T×n
    for t in 0..design.n_obs() {
        let fitted = fitted_all.row(t).transpose();
        let draw = factor_posterior_from(state, design, model, t, &fitted)?.sample(rng);
        state.factors.row_mut(t).copy_from(&draw.transpose());
    }
    Ok(())
}

/// `GIG(1/2, e²/(τ²σ_i), θ²/(τ²σ_i) + 2)` for one auxiliary given its residual.
pub fn z_conditional(q: &QuantileLevel, residual: f64, sigma: f64) -> Result<GigParams> {
    let denom = q.tau2() * sigma;
    GigParams::new(
        0.5,
        residual * residual / denom,
        q.theta() * q.theta() / denom + 2.0,
    )
}

pub fn step_z<R: Rng + ?Sized>(
    state: &mut QbvarState,
    design: &LagDesign,
    q: &QuantileLevel,
    rng: &mut R,
) -> Result<()> {
    let e = state.residuals(design);
    for i in 0..design.n_vars() {
        let sigma = state.sigma[i];
        for t in 0..design.n_obs() {
            let params = z_conditional(q, e[(t, i)], sigma)?;
            state.z[(t, i)] = draw_gig(&params, rng).max(Z_FLOOR);
        }
    }
    Ok(())
}

/// How the quantile model's scale update is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaUpdate {
    /// Exact conditional of the mixture with `e_it - θ z_it ~ N(0, τ² σ_i z_it)`:
    /// `IG(a_σ + T/2, b_σ + Σ (e - θz)²/(2τ²z))`.
    #[default]
    Mixture,
    /// `IG(a_σ + T, b_σ + Σ e²/(2τ²z) + Σ θ²z/(2τ²))`, with the cross term
    /// dropped and a doubled shape.
    Literal,
}

/// Inverse-gamma `(shape, scale)` of `σ_i`, where `residuals` are
/// `y - XΦ' - FΛ'`.
///
/// Gaussian model: `(a_σ + T/2, b_σ + Σ e²/2)`. The quantile model follows
/// `rule`.
pub fn sigma_conditional(
    state: &QbvarState,
    residuals: &DMatrix<f64>,
    model: &ErrorModel,
    prior: &PriorConfig,
    rule: SigmaUpdate,
    i: usize,
) -> (f64, f64) {
    let t_obs = residuals.nrows() as f64;
    match model {
        ErrorModel::AsymmetricLaplace { quantile } => {
            let (tau2, theta) = (quantile.tau2(), quantile.theta());
            let mut scale = prior.b_sigma;
            let (ecol, zcol) = (residuals.column(i), state.z.column(i));
            let pairs = ecol.iter().zip(zcol.iter());
            match rule {
                SigmaUpdate::Mixture => {
                    for (e, z) in pairs {
                        let u = e - theta * z;
                        scale += u * u / (2.0 * tau2 * z);
                    }
                    (prior.a_sigma + 0.5 * t_obs, scale)
                }
                SigmaUpdate::Literal => {
                    for (e, z) in pairs {
                        scale += e * e / (2.0 * tau2 * z) + theta * theta * z / (2.0 * tau2);
                    }
                    (prior.a_sigma + t_obs, scale)
                }
            }
        }
        ErrorModel::Gaussian => {
            let ss = residuals.column(i).norm_squared();
            (prior.a_sigma + 0.5 * t_obs, prior.b_sigma + 0.5 * ss)
        }
    }
}

pub fn step_sigma<R: Rng + ?Sized>(
    state: &mut QbvarState,
    design: &LagDesign,
    model: &ErrorModel,
    prior: &PriorConfig,
    rule: SigmaUpdate,
    rng: &mut R,
) -> Result<()> {
    let e = state.residuals(design);
    for i in 0..design.n_vars() {
        let (shape, scale) = sigma_conditional(state, &e, model, prior, rule, i);
        state.sigma[i] = draw_inverse_gamma(shape, scale, rng)?;
    }
    Ok(())
}

/// One horseshoe sweep over every entry of `Φ`, sharing the global scale.
pub fn step_shrinkage<R: Rng + ?Sized>(state: &mut QbvarState, rng: &mut R) -> Result<()> {
    let (n, k) = state.phi.shape();
    if state.psi.shape() != (n, k) {
        return Err(Error::LengthMismatch("psi and phi shapes differ".into()));
    }
    // Row-major flattening so the sweep order is equation by equation.
    let coefs: Vec<f64> = (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).map(|ij| state.phi[ij]).collect();
    let mut local: Vec<f64> = (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).map(|ij| state.psi[ij]).collect();
    update_horseshoe(&coefs, &mut local, &mut state.kappa, rng)?;
    for (idx, v) in local.into_iter().enumerate() {
        state.psi[(idx / k, idx % k)] = v;
    }
    Ok(())
}
