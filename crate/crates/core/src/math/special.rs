//! Stable reductions and Gaussian special functions.

use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Max-shifted `log Σ exp(v)`.
///
/// Entries equal to `-inf` contribute nothing; if every entry is `-inf` the
/// result is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Domain("log_sum_exp of an empty vector".into()));
    }
    Ok(log_sum_exp_unchecked(v))
}

pub(crate) fn log_sum_exp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.len() == 1 || !max.is_finite() {
        return if v.len() == 1 { v[0] } else { max };
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse of [`std_normal_cdf`] on the open unit interval.
pub fn std_normal_inv_cdf(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("inverse normal CDF needs u in (0,1), got {u}")));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * u))
}

/// Scalar Gaussian log-density `log N(x; mean, var)`.
pub fn gaussian_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    debug_assert!(var > 0.0);
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * r * r / var
}

/// Isotropic multivariate Gaussian log-density `log N(x; mean, var·I)`.
pub fn gaussian_logpdf_iso(x: &[f64], mean: &[f64], var: f64) -> f64 {
    debug_assert_eq!(x.len(), mean.len());
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * x.len() as f64 * (LN_2PI + var.ln()) - 0.5 * sq / var
}
