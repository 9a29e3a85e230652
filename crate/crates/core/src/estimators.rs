//! Horvitz–Thompson and imputed estimators, population distribution function and
//! quantiles.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputation::ImputedDataset;

/// `Σ_S d_k y_k`.
pub fn ht_total(d: &[f64], y: &[f64]) -> f64 {
    d.iter().zip(y).map(|(d, y)| d * y).sum()
}

/// `N̂ = Σ_S d_k`.
pub fn nhat(d: &[f64]) -> f64 {
    d.iter().sum()
}

/// `Σ d_k r_k y_k + Σ d_k (1 − r_k) y_k*`.
pub fn imputed_total(ds: &ImputedDataset) -> f64 {
    ht_total(&ds.d, &ds.values)
}

/// The imputed total split as observed part, prediction part and residual part:
/// `(Σ d r y, Σ d (1 − r) zᵀB̂, Σ d (1 − r) v^{1/2} ε*)`.
pub fn imputed_total_terms(ds: &ImputedDataset) -> (f64, f64, f64) {
    let observed = (0..ds.d.len()).filter(|&k| ds.r[k]).map(|k| ds.d[k] * ds.values[k]).sum();
    let predicted = ds.imputed.iter().map(|u| ds.d[u.position] * u.prediction).sum();
    let residual = ds.imputed.iter().map(|u| ds.d[u.position] * u.scale * u.residual).sum();
    (observed, predicted, residual)
}

/// `F̂(t) = N̂⁻¹ Σ_S d_k 1(y_k ≤ t)`.
pub fn fhat(d: &[f64], y: &[f64], t: f64) -> f64 {
    let num: f64 = d.iter().zip(y).filter(|(_, &y)| y <= t).map(|(d, _)| d).sum();
    num / nhat(d)
}

/// Imputed distribution function: observed values for respondents and imputed
/// values for nonrespondents, all weighted by `d_k`.
pub fn imputed_fhat(ds: &ImputedDataset, t: f64) -> f64 {
    fhat(&ds.d, &ds.values, t)
}

/// `F̂` on a grid of thresholds in one pass over the sorted sample.
pub fn fhat_grid(d: &[f64], y: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let mut pairs: Vec<(f64, f64)> = y.iter().copied().zip(d.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = nhat(d);
    let mut order: Vec<usize> = (0..thresholds.len()).collect();
    order.sort_by(|&i, &j| thresholds[i].total_cmp(&thresholds[j]));
    let mut out = alloc::vec![0.0; thresholds.len()];
    let (mut idx, mut acc) = (0, 0.0);
    for i in order {
        while idx < pairs.len() && pairs[idx].0 <= thresholds[i] {
            acc += pairs[idx].1;
            idx += 1;
        }
        out[i] = acc / total;
    }
    out
}

/// `F_N(t) = N⁻¹ Σ_U 1(y_k ≤ t)`.
pub fn fn_population(y: &[f64], t: f64) -> f64 {
    y.iter().filter(|&&v| v <= t).count() as f64 / y.len() as f64
}

/// Smallest population value `y` with `F_N(y) ≥ α`.
pub fn quantile(y: &[f64], alpha: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Shape("quantile of an empty population".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(alloc::format!("quantile level {alpha} outside (0, 1]")));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    // smallest i with (i + 1) / n ≥ α; integer arithmetic avoids 0.5·4 = 1.9999…
    let mut i = libm::ceil(alpha * n as f64) as usize;
    i = i.clamp(1, n);
    while i > 1 && (i - 1) as f64 / n as f64 >= alpha {
        i -= 1;
    }
    while (i as f64) / (n as f64) < alpha && i < n {
        i += 1;
    }
    Ok(sorted[i - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub total_ht: Option<f64>,
    pub total_imputed: f64,
    pub nhat: f64,
    /// `(t, F̂_I(t))` pairs, increasing in `t`.
    pub fhat: Vec<(f64, f64)>,
}

impl EstimateReport {
    pub fn from_dataset(ds: &ImputedDataset, thresholds: &[f64], full_y: Option<&[f64]>) -> Self {
        let mut t: Vec<f64> = thresholds.to_vec();
        t.sort_by(|a, b| a.total_cmp(b));
        let values = fhat_grid(&ds.d, &ds.values, &t);
        EstimateReport {
            total_ht: full_y.map(|y| ht_total(&ds.d, y)),
            total_imputed: imputed_total(ds),
            nhat: nhat(&ds.d),
            fhat: t.into_iter().zip(values).collect(),
        }
    }
}
