use crate::{Error, Result};

/// Sample skewness `m3 / m2^{3/2}` over trailing windows.
///
/// Element `i` of the output belongs to the window ending at index
/// `i + window - 1`. Windows with (numerically) zero variance yield `None`.
/// Moments are accumulated as sliding power sums around the series mean.
pub fn rolling_skewness(x: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    if window < 3 {
        return Err(Error::InvalidParameter(format!("window {window} < 3")));
    }
    if x.len() < window {
        return Err(Error::InsufficientObservations {
            needed: window - 1,
            have: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("rolling_skewness input is not finite".into()));
    }
    let reference = x.iter().sum::<f64>() / x.len() as f64;
    let w = window as f64;
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    let push = |v: f64, sign: f64, s1: &mut f64, s2: &mut f64, s3: &mut f64| {
        let d = v - reference;
        *s1 += sign * d;
        *s2 += sign * d * d;
        *s3 += sign * d * d * d;
    };
    let mut out = Vec::with_capacity(x.len() - window + 1);
    for (i, &v) in x.iter().enumerate() {
        push(v, 1.0, &mut s1, &mut s2, &mut s3);
        if i >= window {
            push(x[i - window], -1.0, &mut s1, &mut s2, &mut s3);
        }
        if i + 1 < window {
            continue;
        }
        let mean = s1 / w;
        let raw2 = s2 / w;
        let m2 = raw2 - mean * mean;
        let m3 = s3 / w - 3.0 * mean * raw2 + 2.0 * mean * mean * mean;
        if m2 <= 1e-12 * raw2.max(f64::MIN_POSITIVE) || m2 <= 0.0 {
            out.push(None);
        } else {
            out.push(Some(m3 / m2.powf(1.5)));
        }
    }
    Ok(out)
}
