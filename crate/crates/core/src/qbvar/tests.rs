use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::steps::*;
use super::*;
use crate::data::{build_lag_design, LagDesign};
use crate::dist::{draw_inverse_gamma, RngSeed};
use crate::Error;

fn toy_design(t: usize, n: usize, lags: usize, seed: u64) -> LagDesign {
    let mut rng = RngSeed(seed).rng();
    let y = DMatrix::from_fn(t + lags, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let names = (0..n).map(|i| format!("y{i}")).collect();
    build_lag_design(&y, lags, names).unwrap()
}

fn median_level() -> QuantileLevel {
    QuantileLevel::new(0.5).unwrap()
}

/// State with `Λ = 0`, `z = 1` and `σ = 1/τ²(0.5)`, so `D_i = I`.
fn unit_noise_state(design: &LagDesign, prior_var: f64) -> QbvarState {
    let mut s = QbvarState::initialize(design, 1).unwrap();
    s.sigma.fill(1.0 / median_level().tau2());
    s.psi.fill(1.0);
    s.kappa = prior_var.sqrt();
    s
}

/// `(A + B)^{-1} c` by LU, independent of the Cholesky path used by the
/// sampler.
fn lu_solve(a: DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    a.lu().solve(c).unwrap()
}

#[test]
fn phi_posterior_matches_ridge_closed_form() {
    let design = toy_design(60, 2, 2, 1);
    let v = 0.7;
    let state = unit_noise_state(&design, v);
    let model = ErrorModel::quantile(median_level());
    for i in 0..2 {
        let post = phi_row_posterior(&state, &design, &model, i).unwrap();
        let k = design.n_regressors();
        let a = design.x.transpose() * &design.x + DMatrix::identity(k, k) / v;
        let want = lu_solve(a.clone(), &(design.x.transpose() * design.y.column(i)));
        assert!((post.mean() - &want).amax() < 1e-8);
        let cov = a.try_inverse().unwrap();
        assert!((post.covariance() - cov).amax() < 1e-8);
    }
}

#[test]
fn phi_posterior_limits() {
    let design = toy_design(40, 1, 1, 2);
    let model = ErrorModel::quantile(median_level());
    let diffuse = unit_noise_state(&design, 1e12);
    let ols = lu_solve(design.x.transpose() * &design.x, &(design.x.transpose() * design.y.column(0)));
    let post = phi_row_posterior(&diffuse, &design, &model, 0).unwrap();
    assert!((post.mean() - ols).amax() < 1e-8);
    let tight = unit_noise_state(&design, 1e-14);
    let post = phi_row_posterior(&tight, &design, &model, 0).unwrap();
    assert!(post.mean().amax() < 1e-10);
}

#[test]
fn phi_posterior_uses_shifted_target_and_weights() {
    // General z, σ, Λ, F: compare with a weighted least-squares oracle
    // assembled entry by entry.
    let design = toy_design(30, 2, 1, 3);
    let q = QuantileLevel::new(0.25).unwrap();
    let model = ErrorModel::quantile(q);
    let mut rng = RngSeed(4).rng();
    let mut state = QbvarState::initialize(&design, 1).unwrap();
    state.lambda = DMatrix::from_column_slice(2, 1, &[0.4, -0.3]);
    state.factors = DMatrix::from_fn(30, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    state.z = DMatrix::from_fn(30, 2, |_, _| rng.sample::<f64, _>(Exp1));
    state.sigma = DVector::from_vec(vec![0.3, 1.7]);
    state.psi = DMatrix::from_fn(2, 3, |i, j| 0.5 + (i + j) as f64);
    state.kappa = 0.8;
    let i = 1;
    let k = 3;
    let mut a = DMatrix::zeros(k, k);
    let mut c = DVector::zeros(k);
    for t in 0..30 {
        let d = q.tau2() * state.sigma[i] * state.z[(t, i)];
        let target = design.y[(t, i)] - state.lambda[(i, 0)] * state.factors[(t, 0)] - q.theta() * state.z[(t, i)];
        for r in 0..k {
            c[r] += design.x[(t, r)] * target / d;
            for s in 0..k {
                a[(r, s)] += design.x[(t, r)] * design.x[(t, s)] / d;
            }
        }
    }
    for j in 0..k {
        a[(j, j)] += 1.0 / (state.psi[(i, j)].powi(2) * state.kappa.powi(2));
    }
    let want = lu_solve(a, &c);
    let got = phi_row_posterior(&state, &design, &model, i).unwrap();
    assert!((got.mean() - want).amax() < 1e-8);
}

#[test]
fn lambda_posterior_is_prior_without_factors() {
    let design = toy_design(50, 2, 1, 5);
    let model = ErrorModel::quantile(median_level());
    let state = unit_noise_state(&design, 1.0);
    let prior = PriorConfig::default();
    let post = lambda_row_posterior(&state, &design, &model, &prior, 0).unwrap();
    assert!(post.mean().amax() < 1e-15);
    assert!((post.covariance() - DMatrix::identity(1, 1)).amax() < 1e-8);

    let mut rng = RngSeed(6).rng();
    let draws: Vec<f64> = (0..100_000).map(|_| post.sample(&mut rng)[0]).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
    assert!(mean.abs() < 0.015 && (var - 1.0).abs() < 0.02, "{mean} {var}");
}

#[test]
fn lambda_posterior_matches_univariate_conjugate_regression() {
    let design = toy_design(80, 1, 1, 7);
    let model = ErrorModel::quantile(median_level());
    let mut state = unit_noise_state(&design, 1.0);
    let mut rng = RngSeed(8).rng();
    state.factors = DMatrix::from_fn(80, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    state.phi = DMatrix::from_row_slice(1, 2, &[0.1, 0.3]);
    let prior = PriorConfig { v_lambda: 2.5, ..PriorConfig::default() };
    let post = lambda_row_posterior(&state, &design, &model, &prior, 0).unwrap();
    let (mut sff, mut sfy) = (0.0, 0.0);
    for t in 0..80 {
        let f = state.factors[(t, 0)];
        let target = design.y[(t, 0)] - 0.1 - 0.3 * design.x[(t, 1)];
        sff += f * f;
        sfy += f * target;
    }
    let want = sfy / (sff + 1.0 / 2.5);
    assert!((post.mean()[0] - want).abs() < 1e-8);
    assert!((post.covariance()[(0, 0)] - 1.0 / (sff + 0.4)).abs() < 1e-8);

    let tight = PriorConfig { v_lambda: 1e-14, ..prior };
    let post = lambda_row_posterior(&state, &design, &model, &tight, 0).unwrap();
    assert!(post.mean()[0].abs() < 1e-10);
}

#[test]
fn factor_posterior_is_prior_with_zero_loadings() {
    let design = toy_design(20, 3, 1, 9);
    let model = ErrorModel::quantile(QuantileLevel::new(0.1).unwrap());
    let mut state = QbvarState::initialize(&design, 2).unwrap();
    state.lambda.fill(0.0);
    for t in 0..20 {
        let post = factor_posterior(&state, &design, &model, t).unwrap();
        assert_eq!(post.mean(), &DVector::zeros(2));
        assert!((post.covariance() - DMatrix::identity(2, 2)).amax() < 1e-8);
    }
}

#[test]
fn factor_posterior_scalar_formula() {
    let design = toy_design(10, 1, 1, 10);
    let model = ErrorModel::quantile(median_level());
    let mut state = unit_noise_state(&design, 1.0);
    state.sigma[0] = 0.6;
    state.lambda[(0, 0)] = 1.3;
    let d = median_level().tau2() * 0.6;
    for t in 0..10 {
        let resid = design.y[(t, 0)] - (state.phi.row(0) * design.x.row(t).transpose())[0];
        let want = 1.3 / d * resid / (1.3 * 1.3 / d + 1.0);
        let post = factor_posterior(&state, &design, &model, t).unwrap();
        assert!((post.mean()[0] - want).abs() < 1e-8);
    }
}

#[test]
fn factor_posterior_variance_is_below_identity() {
    let design = toy_design(15, 3, 1, 11);
    let model = ErrorModel::quantile(QuantileLevel::new(0.9).unwrap());
    let mut rng = RngSeed(12).rng();
    let mut state = QbvarState::initialize(&design, 2).unwrap();
    state.lambda = DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    state.z = DMatrix::from_fn(15, 3, |_, _| rng.sample::<f64, _>(Exp1));
    for t in 0..15 {
        let cov = factor_posterior(&state, &design, &model, t).unwrap().covariance();
        let gap = DMatrix::identity(2, 2) - cov;
        let eig = gap.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-12), "{eig}");
    }
}

#[test]
fn z_conditional_parameters() {
    let q = QuantileLevel::new(0.5).unwrap();
    let p = z_conditional(&q, 0.4, 2.0).unwrap();
    assert_eq!(p.p(), 0.5);
    assert!((p.a() - 0.16 / 16.0).abs() < 1e-15);
    assert_eq!(p.b(), 2.0);
    let q = QuantileLevel::new(0.1).unwrap();
    let p = z_conditional(&q, -1.0, 0.5).unwrap();
    let denom = q.tau2() * 0.5;
    assert!((p.a() - 1.0 / denom).abs() < 1e-15);
    assert!((p.b() - (q.theta().powi(2) / denom + 2.0)).abs() < 1e-12);
}

#[test]
fn z_draws_respect_floor_for_zero_residuals() {
    let design = toy_design(30, 1, 1, 13);
    let mut state = QbvarState::initialize(&design, 1).unwrap();
    // Exact fit: every residual is zero.
    state.phi.fill(0.0);
    let mut exact = design.clone();
    exact.y.fill(0.0);
    let mut rng = RngSeed(14).rng();
    step_z(&mut state, &exact, &QuantileLevel::new(0.05).unwrap(), &mut rng).unwrap();
    assert!(state.z.iter().all(|&z| z >= Z_FLOOR && z.is_finite()));
}

#[test]
fn sigma_shapes() {
    let design = toy_design(25, 2, 1, 15);
    let state = QbvarState::initialize(&design, 1).unwrap();
    let e = state.residuals(&design);
    let prior = PriorConfig::default();
    let model = ErrorModel::quantile(QuantileLevel::new(0.3).unwrap());
    for i in 0..2 {
        let (shape, _) = sigma_conditional(&state, &e, &model, &prior, SigmaUpdate::Literal, i);
        assert_eq!(shape, 3.0 + 25.0);
        let (shape, _) = sigma_conditional(&state, &e, &model, &prior, SigmaUpdate::Mixture, i);
        assert_eq!(shape, 3.0 + 12.5);
        let (shape, scale) = sigma_conditional(&state, &e, &ErrorModel::Gaussian, &prior, SigmaUpdate::Mixture, i);
        assert_eq!(shape, 3.0 + 12.5);
        assert!((scale - 1.0 - 0.5 * e.column(i).norm_squared()).abs() < 1e-12);
    }
}

#[test]
fn sigma_scale_at_median_has_no_shift_term() {
    let design = toy_design(25, 1, 1, 16);
    let mut state = QbvarState::initialize(&design, 1).unwrap();
    let mut rng = RngSeed(17).rng();
    state.z = DMatrix::from_fn(25, 1, |_, _| rng.sample::<f64, _>(Exp1));
    let e = state.residuals(&design);
    let prior = PriorConfig::default();
    let model = ErrorModel::quantile(median_level());
    let want = 1.0 + (0..25).map(|t| e[(t, 0)].powi(2) / (2.0 * 8.0 * state.z[(t, 0)])).sum::<f64>();
    for rule in [SigmaUpdate::Literal, SigmaUpdate::Mixture] {
        let (_, scale) = sigma_conditional(&state, &e, &model, &prior, rule, 0);
        assert!((scale - want).abs() < 1e-12);
    }
}

#[test]
fn sigma_conditional_concentrates_on_truth() {
    // Residuals and auxiliaries drawn from the mixture with known σ.
    let t = 2000;
    let sigma0 = 0.7;
    for q in [0.1, 0.5, 0.9] {
        let ql = QuantileLevel::new(q).unwrap();
        let mut rng = RngSeed(18).rng();
        let z = DMatrix::from_fn(t, 1, |_, _| rng.sample::<f64, _>(Exp1));
        let e = DMatrix::from_fn(t, 1, |r, _| {
            ql.theta() * z[(r, 0)] + (ql.tau2() * sigma0 * z[(r, 0)]).sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let design = toy_design(t, 1, 1, 19);
        let mut state = QbvarState::initialize(&design, 1).unwrap();
        state.z = z;
        let (shape, scale) = sigma_conditional(
            &state,
            &e,
            &ErrorModel::quantile(ql),
            &PriorConfig::default(),
            SigmaUpdate::Mixture,
            0,
        );
        let draws: Vec<f64> = (0..2000).map(|_| draw_inverse_gamma(shape, scale, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - sigma0).abs() < 0.1 * sigma0, "q={q}: {mean}");
    }
}

#[test]
fn shrinkage_step_keeps_scales_positive() {
    let design = toy_design(20, 2, 2, 20);
    let mut state = QbvarState::initialize(&design, 1).unwrap();
    state.phi.fill(0.0);
    let mut rng = RngSeed(21).rng();
    for _ in 0..200 {
        step_shrinkage(&mut state, &mut rng).unwrap();
    }
    state.check(&design).unwrap();
}

fn short_config(q: f64) -> QbvarConfig {
    let mut c = QbvarConfig::new(QuantileLevel::new(q).unwrap());
    c.lags = 1;
    c.mcmc = McmcSchedule { iterations: 60, burn_in: 20, thin: 4 };
    c
}

#[test]
fn schedule_arithmetic() {
    let design = toy_design(40, 2, 1, 22);
    let mut cfg = short_config(0.5);
    cfg.mcmc = McmcSchedule { iterations: 25, burn_in: 20, thin: 5 };
    let set = run_chain(&design, &cfg).unwrap();
    assert_eq!(set.len(), 1);
    assert_eq!(set.diagnostics.residual_norms.len(), 25);
    assert_eq!(McmcSchedule::default().retained(), 400);
}

#[test]
fn chain_is_reproducible_and_draws_are_valid() {
    let design = toy_design(50, 2, 1, 23);
    let cfg = short_config(0.1);
    let a = run_chain(&design, &cfg).unwrap();
    let b = run_chain(&design, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 10);
    for d in &a.draws {
        assert!(d.sigma.iter().all(|&s| s > 0.0));
        assert!(d.phi.iter().chain(d.lambda.iter()).all(|v| v.is_finite()));
    }
    let mut other = cfg.clone();
    other.seed = RngSeed(1);
    assert_ne!(run_chain(&design, &other).unwrap(), a);
}

#[test]
fn chain_rejects_bad_configs() {
    let design = toy_design(30, 1, 1, 24);
    let mut cfg = short_config(0.5);
    cfg.lags = 2;
    assert!(run_chain(&design, &cfg).is_err());
    let mut cfg = short_config(0.5);
    cfg.factors = 0;
    assert!(run_chain(&design, &cfg).is_err());
    let mut cfg = short_config(0.5);
    cfg.mcmc.burn_in = 60;
    assert!(run_chain(&design, &cfg).is_err());
}

#[test]
fn numeric_failures_report_the_iteration() {
    let mut design = toy_design(30, 1, 1, 25);
    design.y[(3, 0)] = f64::INFINITY;
    let err = run_chain(&design, &short_config(0.5)).unwrap_err();
    assert!(matches!(err, Error::Chain { .. } | Error::NotPositiveDefinite(_)), "{err}");
}

/// Simulation-based calibration on a one-equation model with a fixed
/// coefficient prior: parameters drawn from the prior, data from the model,
/// the rank of the truth among posterior draws must be uniform.
#[test]
fn simulation_based_calibration() {
    let q = QuantileLevel::new(0.25).unwrap();
    let prior = PriorConfig::default();
    let reps = 300;
    let mcmc = McmcSchedule { iterations: 1100, burn_in: 100, thin: 50 };
    let bins = mcmc.retained() + 1;
    let mut ranks = vec![vec![0usize; bins]; 3];
    let mut rng = RngSeed(26).rng();
    for rep in 0..reps {
        let phi0 = 0.5 * rng.sample::<f64, _>(StandardNormal);
        let phi1 = (0.5 * rng.sample::<f64, _>(StandardNormal)).clamp(-0.9, 0.9);
        let lambda = rng.sample::<f64, _>(StandardNormal);
        let sigma = draw_inverse_gamma(prior.a_sigma, prior.b_sigma, &mut rng).unwrap();
        let t = 40;
        let mut y = DMatrix::zeros(t + 1, 1);
        for s in 1..=t {
            let z: f64 = rng.sample(Exp1);
            let f: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.sample(StandardNormal);
            y[(s, 0)] = phi0 + phi1 * y[(s - 1, 0)] + lambda * f + q.theta() * z + (q.tau2() * z * sigma).sqrt() * u;
        }
        let design = build_lag_design(&y, 1, vec!["y".into()]).unwrap();
        let spec = SamplerSpec {
            model: ErrorModel::quantile(q),
            factors: 1,
            prior,
            coefficient_prior: CoefficientPrior::Fixed { variance: 0.25 },
            sigma_update: SigmaUpdate::Mixture,
            mcmc,
            seed: RngSeed(1000 + rep),
        };
        // The clamp on φ1 is a negligible deviation from the prior.
        let set = run_sampler(&design, &spec).unwrap();
        let truth = [phi0, phi1, sigma];
        for (p, &v) in truth.iter().enumerate() {
            let rank = set
                .draws
                .iter()
                .filter(|d| match p {
                    0 => d.phi[(0, 0)] < v,
                    1 => d.phi[(0, 1)] < v,
                    _ => d.sigma[0] < v,
                })
                .count();
            ranks[p][rank] += 1;
        }
    }
    // Chi-square against uniform over 21 bins, 20 degrees of freedom;
    // the 0.999 critical value is 45.3.
    let expected = reps as f64 / bins as f64;
    for (p, hist) in ranks.iter().enumerate() {
        let chi2: f64 = hist.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 45.3, "parameter {p}: chi2 {chi2}, {hist:?}");
    }
}
