//! Synthetic data from known VAR processes, for tests and demo runs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::data::{regressor_from_tail, TimeSeriesPanel, TransformCode, YearMonth};
use crate::qbvar::QuantileLevel;
use crate::{Error, Result};

/// Idiosyncratic error law of a simulated process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimErrors {
    /// `N(0, σ_i)`.
    Gaussian,
    /// `θ z + N(0, τ² z σ_i)` with `z ~ Exp(1)`.
    QuantileMixture(QuantileLevel),
}

/// `y_t = Φ x_t + Λ f_t + e_t` with `f_t ~ N(0, I_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarProcess {
    pub phi: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub errors: SimErrors,
}

impl VarProcess {
    pub fn n_vars(&self) -> usize {
        self.phi.nrows()
    }

    pub fn lags(&self) -> usize {
        (self.phi.ncols() - 1) / self.n_vars()
    }

    /// Draws one idiosyncratic error for equation `i`.
    pub fn error<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> f64 {
        let normal: f64 = rng.sample(StandardNormal);
        match self.errors {
            SimErrors::Gaussian => self.sigma[i].sqrt() * normal,
            SimErrors::QuantileMixture(q) => {
                let z: f64 = rng.sample(Exp1);
                q.theta() * z + (q.tau2() * z * self.sigma[i]).sqrt() * normal
            }
        }
    }

    /// Simulates `len` observations after discarding `burn_in`, starting
    /// from zeros. Returns a `len×n` matrix.
    pub fn simulate<R: Rng + ?Sized>(&self, len: usize, burn_in: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let (n, lags) = (self.n_vars(), self.lags());
        if self.phi.ncols() != n * lags + 1 || self.lambda.nrows() != n || self.sigma.len() != n {
            return Err(Error::LengthMismatch("inconsistent process dimensions".into()));
        }
        let total = len + burn_in + lags;
        let mut y = DMatrix::zeros(total, n);
        let r = self.lambda.ncols();
        for t in lags..total {
            let tail = y.rows(t - lags, lags).into_owned();
            let x = DVector::from_vec(regressor_from_tail(&tail, lags)?);
            let mut yt = &self.phi * x;
            if r > 0 {
                let f = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
                yt += &self.lambda * f;
            }
            for i in 0..n {
                yt[i] += self.error(i, rng);
            }
            y.row_mut(t).copy_from(&yt.transpose());
        }
        Ok(y.rows(total - len, len).into_owned())
    }
}

/// Wraps a `T×n` matrix as an untransformed monthly panel whose first row is
/// dated `start`.
pub fn to_panel(y: &DMatrix<f64>, start: YearMonth, names: &[&str]) -> Result<TimeSeriesPanel> {
    if names.len() != y.ncols() {
        return Err(Error::LengthMismatch(format!("{} names for {} columns", names.len(), y.ncols())));
    }
    let dates = (0..y.nrows()).map(|t| start.add_months(t as i64)).collect();
    let columns = (0..y.ncols()).map(|j| y.column(j).iter().copied().collect()).collect();
    TimeSeriesPanel::new(
        dates,
        names.iter().map(|s| s.to_string()).collect(),
        columns,
        vec![TransformCode::Level; names.len()],
    )
}
