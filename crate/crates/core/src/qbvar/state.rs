use nalgebra::{DMatrix, DVector};

use crate::data::LagDesign;
use crate::dist::SCALE_FLOOR;
use crate::{Error, Result};

/// Ridge penalty of the least-squares fit used to start the chain.
const INIT_RIDGE: f64 = 1e-4;

/// One complete parameter configuration of the sampler.
///
/// Shapes: `phi` n×k, `lambda` n×r, `factors` T×r, `z` T×n, `sigma` n,
/// `psi` n×k.
#[derive(Debug, Clone, PartialEq)]
pub struct QbvarState {
    pub phi: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub psi: DMatrix<f64>,
    pub kappa: f64,
}

impl QbvarState {
    /// Deterministic starting point: ridge least squares for `phi`, residual
    /// variances for `sigma`, zero loadings and factors, unit auxiliaries and
    /// unit shrinkage scales.
    pub fn initialize(design: &LagDesign, factors: usize) -> Result<Self> {
        let (t, n, k) = (design.n_obs(), design.n_vars(), design.n_regressors());
        let mut gram = design.x.tr_mul(&design.x);
        for j in 0..k {
            gram[(j, j)] += INIT_RIDGE;
        }
        let (chol, _) = crate::dist::cholesky_with_jitter(&gram)?;
        let xty = design.x.tr_mul(&design.y);
        let coef = chol.solve(&xty); // k×n
        let resid = &design.y - &design.x * &coef;
        let sigma = DVector::from_fn(n, |i, _| {
            (resid.column(i).norm_squared() / t as f64).max(SCALE_FLOOR)
        });
        Ok(Self {
            phi: coef.transpose(),
            lambda: DMatrix::zeros(n, factors),
            factors: DMatrix::zeros(t, factors),
            z: DMatrix::from_element(t, n, 1.0),
            sigma,
            psi: DMatrix::from_element(n, k, 1.0),
            kappa: 1.0,
        })
    }

    pub fn n_factors(&self) -> usize {
        self.lambda.ncols()
    }

    /// `y - X Φ' - F Λ'`, T×n.
    pub fn residuals(&self, design: &LagDesign) -> DMatrix<f64> {
        let mut e = &design.y - &design.x * self.phi.transpose();
        if self.n_factors() > 0 {
            e -= &self.factors * self.lambda.transpose();
        }
        e
    }

    /// Dimension consistency with `design` plus positivity of `z`, `sigma`,
    /// `psi` and `kappa`.
    pub fn check(&self, design: &LagDesign) -> Result<()> {
        let (t, n, k) = (design.n_obs(), design.n_vars(), design.n_regressors());
        let r = self.n_factors();
        let dims = [
            ("phi", self.phi.shape(), (n, k)),
            ("lambda", self.lambda.shape(), (n, r)),
            ("factors", self.factors.shape(), (t, r)),
            ("z", self.z.shape(), (t, n)),
            ("sigma", (self.sigma.len(), 1), (n, 1)),
            ("psi", self.psi.shape(), (n, k)),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::LengthMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        let positive = self.z.iter().all(|v| *v > 0.0)
            && self.sigma.iter().all(|v| *v > 0.0)
            && self.psi.iter().all(|v| *v > 0.0)
            && self.kappa > 0.0;
        if !positive {
            return Err(Error::InvalidParameter(
                "state has a non-positive auxiliary or scale".into(),
            ));
        }
        Ok(())
    }
}
