use nalgebra::DMatrix;

use crate::{Error, Result};

/// Regression design of a VAR(p) with intercept.
///
/// Row `t` of `x` is `(1, y_{t-1}', ..., y_{t-p}')`, lag-1 block first; `y`
/// holds the matching left-hand-side rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LagDesign {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub lags: usize,
    pub variable_names: Vec<String>,
}

impl LagDesign {
    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.y.ncols()
    }

    /// Regressors per equation, `n * p + 1`.
    pub fn n_regressors(&self) -> usize {
        self.x.ncols()
    }
}

pub fn build_lag_design(
    y_full: &DMatrix<f64>,
    lags: usize,
    variable_names: Vec<String>,
) -> Result<LagDesign> {
    let (t_full, n) = y_full.shape();
    if lags == 0 {
        return Err(Error::InvalidParameter("lag order must be at least 1".into()));
    }
    if t_full <= lags {
        return Err(Error::InsufficientObservations {
            needed: lags,
            have: t_full,
        });
    }
    if variable_names.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} variable names for {n} columns",
            variable_names.len()
        )));
    }
    if y_full.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("design input contains missing values".into()));
    }
    let t = t_full - lags;
    let k = n * lags + 1;
    let x = DMatrix::from_fn(t, k, |row, col| {
        if col == 0 {
            1.0
        } else {
            let lag = (col - 1) / n + 1;
            let var = (col - 1) % n;
            y_full[(row + lags - lag, var)]
        }
    });
    let y = y_full.rows(lags, t).into_owned();
    Ok(LagDesign {
        y,
        x,
        lags,
        variable_names,
    })
}

/// The regressor vector `(1, y_T', ..., y_{T-p+1}')` for a one-step forecast
/// from the last `lags` rows of `tail` (most recent row last).
pub fn regressor_from_tail(tail: &DMatrix<f64>, lags: usize) -> Result<Vec<f64>> {
    let (rows, n) = tail.shape();
    if rows < lags {
        return Err(Error::InsufficientObservations {
            needed: lags - 1,
            have: rows,
        });
    }
    let mut x = Vec::with_capacity(n * lags + 1);
    x.push(1.0);
    for lag in 1..=lags {
        x.extend(tail.row(rows - lag).iter().copied());
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_observation_case() {
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let d = build_lag_design(&y, 1, vec!["y".into()]).unwrap();
        assert_eq!(d.x, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]));
        assert_eq!(d.y, DMatrix::from_column_slice(2, 1, &[2.0, 3.0]));
    }

    #[test]
    fn degenerate_and_dimension_cases() {
        let y = DMatrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
        assert!(matches!(
            build_lag_design(&y, 5, vec!["a".into(), "b".into()]),
            Err(Error::InsufficientObservations { .. })
        ));
        let d = build_lag_design(&y, 2, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(d.n_regressors(), 5);
        assert_eq!(d.n_obs(), 3);
    }

    #[test]
    fn tail_regressor_matches_next_design_row() {
        let y = DMatrix::from_fn(6, 2, |i, j| (i * 10 + j) as f64);
        let d = build_lag_design(&y, 2, vec!["a".into(), "b".into()]).unwrap();
        // The regressor built from rows ..=t reproduces design row t+1-p.
        let tail = y.rows(0, 5).into_owned();
        let x = regressor_from_tail(&tail, 2).unwrap();
        assert_eq!(x, d.x.row(3).iter().copied().collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn rows_reconstruct_lagged_observations(
            t_full in 4usize..30,
            n in 1usize..4,
            p in 1usize..4,
            seed in any::<u64>(),
        ) {
            prop_assume!(t_full > p);
            let y = DMatrix::from_fn(t_full, n, |i, j| {
                ((seed.wrapping_mul(31).wrapping_add((i * 7 + j) as u64) % 1000) as f64) / 7.0
            });
            let names = (0..n).map(|j| format!("v{j}")).collect();
            let d = build_lag_design(&y, p, names).unwrap();
            prop_assert_eq!(d.n_obs(), t_full - p);
            for t in 0..d.n_obs() {
                prop_assert_eq!(d.x[(t, 0)], 1.0);
                for j in 1..=p {
                    for v in 0..n {
                        prop_assert_eq!(d.x[(t, 1 + (j - 1) * n + v)], y[(t + p - j, v)]);
                    }
                }
                for v in 0..n {
                    prop_assert_eq!(d.y[(t, v)], y[(t + p, v)]);
                }
            }
        }
    }
}
