//! Paired-sample skill statistics, generic over the scalar type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least 2 pairs, got {0}")]
    Insufficient(usize),
    #[error("zero variance: correlation undefined")]
    ZeroVariance,
}

fn check<S>(x: &[S], y: &[S]) -> Result<usize, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::Insufficient(x.len()));
    }
    Ok(x.len())
}

fn mean<S: Scalar>(v: &[S]) -> S {
    v.iter().copied().sum::<S>() / S::of(v.len() as f64)
}

pub fn pearson<S: Scalar>(x: &[S], y: &[S]) -> Result<S, StatsError> {
    check(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (S::zero(), S::zero(), S::zero());
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (*a - mx, *b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= S::zero() || syy <= S::zero() {
        return Err(StatsError::ZeroVariance);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-S::one()).min(S::one()))
}

/// mean(x − y).
pub fn bias<S: Scalar>(x: &[S], y: &[S]) -> Result<S, StatsError> {
    check(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| *a - *b).sum::<S>() / S::of(x.len() as f64))
}

pub fn rmse<S: Scalar>(x: &[S], y: &[S]) -> Result<S, StatsError> {
    check(x, y)?;
    Ok((x.iter().zip(y).map(|(a, b)| (*a - *b).powi(2)).sum::<S>() / S::of(x.len() as f64)).sqrt())
}

/// Centered-anomaly RMSE, `sqrt(mean(((x − x̄) − (y − ȳ))²))`.
pub fn ubrmse<S: Scalar>(x: &[S], y: &[S]) -> Result<S, StatsError> {
    check(x, y)?;
    let d = bias(x, y)?;
    Ok((x.iter().zip(y).map(|(a, b)| (*a - *b - d).powi(2)).sum::<S>() / S::of(x.len() as f64)).sqrt())
}

/// Product-vs-reference skill for one site. `r` is absent when either
/// series is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteStats<S> {
    pub r: Option<S>,
    pub ubrmse: S,
    pub bias: S,
    pub rmse: S,
    pub n: usize,
}

/// `product` first: bias is product minus reference.
pub fn site_stats<S: Scalar>(product: &[S], reference: &[S]) -> Result<SiteStats<S>, StatsError> {
    let n = check(product, reference)?;
    let r = match pearson(product, reference) {
        Ok(r) => Some(r),
        Err(StatsError::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    Ok(SiteStats { r, ubrmse: ubrmse(product, reference)?, bias: bias(product, reference)?, rmse: rmse(product, reference)?, n })
}
