//! Posterior draws and their binary dump.
//!
//! Dump layout (little endian): magic `QBVD`, `u16` version, `u8` model tag
//! (0 quantile, 1 Gaussian), `f64` quantile (NaN when Gaussian), `u8` origin
//! flag and `i64` origin month index, `u32` lags/n/k/r/draw count, `u64`
//! iterations/burn-in/thin/seed, then per draw the row-major `Φ` (n×k), `Λ`
//! (n×r) and `σ` (n).

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::{ErrorModel, McmcSchedule, QuantileLevel};
use crate::data::YearMonth;
use crate::dist::RngSeed;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"QBVD";
const VERSION: u16 = 1;

/// The parameters needed for forecasting, from one retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub phi: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub sigma: DVector<f64>,
}

impl PosteriorDraw {
    /// `ΛΛ' + diag(σ)`.
    pub fn innovation_covariance(&self) -> DMatrix<f64> {
        let mut omega = &self.lambda * self.lambda.transpose();
        for i in 0..self.sigma.len() {
            omega[(i, i)] += self.sigma[i];
        }
        omega
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawSetMeta {
    pub model: ErrorModel,
    pub lags: usize,
    pub n_vars: usize,
    pub factors: usize,
    pub mcmc: McmcSchedule,
    pub seed: RngSeed,
}

impl DrawSetMeta {
    pub fn n_regressors(&self) -> usize {
        self.n_vars * self.lags + 1
    }
}

/// Sampler health summaries kept alongside the draws.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainDiagnostics {
    /// Frobenius norm of `y - XΦ' - FΛ'` after every iteration.
    pub residual_norms: Vec<f64>,
    pub phi_mean_first_half: Option<DMatrix<f64>>,
    pub phi_mean_second_half: Option<DMatrix<f64>>,
}

impl ChainDiagnostics {
    /// Largest absolute difference between the two half-chain means of `Φ`.
    pub fn split_half_discrepancy(&self) -> Option<f64> {
        match (&self.phi_mean_first_half, &self.phi_mean_second_half) {
            (Some(a), Some(b)) => Some((a - b).amax()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDrawSet {
    pub meta: DrawSetMeta,
    pub draws: Vec<PosteriorDraw>,
    pub diagnostics: ChainDiagnostics,
}

impl PosteriorDrawSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Elementwise posterior median of `Φ`.
    pub fn median_phi(&self) -> Option<DMatrix<f64>> {
        let first = self.draws.first()?;
        let (n, k) = first.phi.shape();
        Some(DMatrix::from_fn(n, k, |i, j| {
            let mut v: Vec<f64> = self.draws.iter().map(|d| d.phi[(i, j)]).collect();
            crate::forecast::empirical_quantile(&mut v, 0.5)
        }))
    }

    pub fn mean_phi(&self) -> Option<DMatrix<f64>> {
        let first = self.draws.first()?;
        let sum = self
            .draws
            .iter()
            .skip(1)
            .fold(first.phi.clone(), |acc, d| acc + &d.phi);
        Some(sum / self.len() as f64)
    }
}

/// Identifies a dump: forecast origin and quantile level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawKey {
    pub origin: Option<YearMonth>,
    pub quantile: Option<f64>,
}

pub fn write_draws<W: Write>(set: &PosteriorDrawSet, origin: Option<YearMonth>, mut w: W) -> Result<()> {
    let io = |e| Error::io("<draw dump>", e);
    let m = &set.meta;
    let k = m.n_regressors();
    let mut buf = Vec::with_capacity(64 + set.len() * 8 * m.n_vars * (k + m.factors + 1));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let (tag, q) = match m.model {
        ErrorModel::AsymmetricLaplace { quantile } => (0u8, quantile.q()),
        ErrorModel::Gaussian => (1u8, f64::NAN),
    };
    buf.push(tag);
    buf.extend_from_slice(&q.to_le_bytes());
    buf.push(origin.is_some() as u8);
    buf.extend_from_slice(&origin.map_or(0, |d| d.index()).to_le_bytes());
    for v in [m.lags, m.n_vars, k, m.factors, set.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [m.mcmc.iterations as u64, m.mcmc.burn_in as u64, m.mcmc.thin as u64, m.seed.0] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for d in &set.draws {
        if d.phi.shape() != (m.n_vars, k)
            || d.lambda.shape() != (m.n_vars, m.factors)
            || d.sigma.len() != m.n_vars
        {
            return Err(Error::LengthMismatch("draw shape disagrees with metadata".into()));
        }
        for mat in [&d.phi, &d.lambda] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    buf.extend_from_slice(&mat[(i, j)].to_le_bytes());
                }
            }
        }
        for s in d.sigma.iter() {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("draw dump", "truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

pub fn read_draws<R: Read>(mut r: R) -> Result<(DrawKey, PosteriorDrawSet)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<draw dump>", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::format("draw dump", "bad magic"));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::format("draw dump", format!("unsupported version {version}")));
    }
    let tag = c.u8()?;
    let q = c.f64()?;
    let model = match tag {
        0 => ErrorModel::quantile(QuantileLevel::new(q)?),
        1 => ErrorModel::Gaussian,
        other => return Err(Error::format("draw dump", format!("unknown model tag {other}"))),
    };
    let has_origin = c.u8()? != 0;
    let origin_index = c.i64()?;
    let (lags, n, k, r_f, count) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    if k != n * lags + 1 {
        return Err(Error::format("draw dump", "inconsistent regressor count"));
    }
    let mcmc = McmcSchedule {
        iterations: c.u64()? as usize,
        burn_in: c.u64()? as usize,
        thin: c.u64()? as usize,
    };
    let seed = RngSeed(c.u64()?);
    let needed = count
        .checked_mul(8 * n * (k + r_f + 1))
        .ok_or_else(|| Error::format("draw dump", "size overflow"))?;
    if bytes.len() - c.pos != needed {
        return Err(Error::format(
            "draw dump",
            format!("expected {needed} payload bytes, found {}", bytes.len() - c.pos),
        ));
    }
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let phi = c.matrix(n, k)?;
        let lambda = c.matrix(n, r_f)?;
        let sigma = DVector::from_iterator(n, (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?);
        draws.push(PosteriorDraw { phi, lambda, sigma });
    }
    let key = DrawKey {
        origin: has_origin.then(|| YearMonth::from_index(origin_index)),
        quantile: (tag == 0).then_some(q),
    };
    let set = PosteriorDrawSet {
        meta: DrawSetMeta {
            model,
            lags,
            n_vars: n,
            factors: r_f,
            mcmc,
            seed,
        },
        draws,
        diagnostics: ChainDiagnostics::default(),
    };
    Ok((key, set))
}
