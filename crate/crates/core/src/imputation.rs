//! Response mechanisms and residual imputation.
//!
//! Every method fills a missing `y_k` with `y_k* = z_kᵀB̂_ar + v_k^{1/2} ε_k*` and
//! differs only in how the residual `ε_k*` is produced:
//!
//! * [`impute_dri`]: `ε_k* = 0`.
//! * [`impute_rri`]: `ε_k*` drawn independently, with replacement, from the observed
//!   residuals with probabilities `ω̃_l`.
//! * [`impute_ebri`]: `ε_k* = Σ_l Ĩ_kl e_l` where `Ĩ` comes from the flight phase
//!   on the `n_m × n_r` grid of (nonrespondent, donor) cells, balanced so that
//!   `Σ_S d_k (1 − r_k) v_k^{1/2} ε_k* = Σ_S d_k (1 − r_k) v_k^{1/2} ē_r` exactly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cube::{flight_phase, BalanceProblem, FlightResult};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::regression::FittedModel;
use crate::sampling::SampleData;

const CALIBRATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResponseMechanism {
    /// Every unit responds with probability `phi0`.
    Mcar { phi0: f64 },
    /// `logit(φ_k) = λ₀ + λ₁ z1_k`.
    Mar { lambda0: f64, lambda1: f64 },
}

impl ResponseMechanism {
    /// Response probabilities `φ_k` for units with size variable `z1`. Each must lie
    /// strictly inside `(0, 1)`.
    pub fn probabilities(&self, z1: &[f64]) -> Result<Vec<f64>> {
        let phi: Vec<f64> = match *self {
            ResponseMechanism::Mcar { phi0 } => vec![phi0; z1.len()],
            ResponseMechanism::Mar { lambda0, lambda1 } => z1.iter().map(|z| logistic(lambda0 + lambda1 * z)).collect(),
        };
        if let Some(unit) = phi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::DegenerateResponseProbability { unit, phi: phi[unit] });
        }
        Ok(phi)
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Independent Bernoulli(φ_k) response indicators.
pub fn generate_response<R: Rng + ?Sized>(phi: &[f64], rng: &mut R) -> Vec<bool> {
    phi.iter().map(|&p| rng.random::<f64>() < p).collect()
}

/// `λ₀` such that the mean of `logistic(λ₀ + λ₁ z1_k)` equals `target`, by bisection.
pub fn calibrate_mar(z1: &[f64], lambda1: f64, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!("target mean response {target} must lie in (0, 1)")));
    }
    if z1.is_empty() || !lambda1.is_finite() || z1.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidParameter("calibration needs finite z1 values and λ₁".into()));
    }
    let n = z1.len() as f64;
    let gap = |l0: f64| z1.iter().map(|z| logistic(l0 + lambda1 * z)).sum::<f64>() / n - target;

    let (mut lo, mut hi) = (-1.0, 1.0);
    while gap(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e12 {
            return Err(Error::InvalidParameter(format!("mean response {target} unreachable")));
        }
    }
    while gap(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::InvalidParameter(format!("mean response {target} unreachable")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid);
        if g.abs() < CALIBRATION_TOL || hi - lo < 1e-15 * hi.abs().max(1.0) {
            return Ok(mid);
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dri,
    Rri,
    Ebri,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dri, Method::Rri, Method::Ebri];

    pub fn label(self) -> &'static str {
        match self {
            Method::Dri => "DRI",
            Method::Rri => "RRI",
            Method::Ebri => "EBRI",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Donor {
    /// Position of the respondent in the sample.
    pub respondent: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedUnit {
    /// Position of the nonrespondent in the sample.
    pub position: usize,
    /// `z_kᵀB̂_ar`.
    pub prediction: f64,
    /// `v_k^{1/2}`.
    pub scale: f64,
    /// `ε_k*`.
    pub residual: f64,
    /// Respondents whose residuals make up `ε_k*`, with their weights. Empty for DRI.
    pub donors: Vec<Donor>,
}

impl ImputedUnit {
    pub fn value(&self) -> f64 {
        self.prediction + self.scale * self.residual
    }

    /// Whether `ε_k*` is a single observed residual.
    pub fn is_pure(&self) -> bool {
        self.donors.len() == 1 && self.donors[0].weight == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedDataset {
    pub method: Method,
    pub d: Vec<f64>,
    pub r: Vec<bool>,
    /// Observed `y_k` for respondents, `y_k*` for nonrespondents.
    pub values: Vec<f64>,
    pub imputed: Vec<ImputedUnit>,
}

impl ImputedDataset {
    /// `Σ_S d_k (1 − r_k) v_k^{1/2} ε_k*`.
    pub fn achieved_balance(&self) -> f64 {
        self.imputed.iter().map(|u| self.d[u.position] * u.scale * u.residual).sum()
    }

    pub fn fractional_rows(&self) -> Vec<usize> {
        self.imputed.iter().filter(|u| !u.is_pure()).map(|u| u.position).collect()
    }
}

/// Final per-unit values: observed where available, imputed otherwise.
pub fn imputed_values(dataset: &ImputedDataset) -> Vec<f64> {
    dataset.values.clone()
}

/// `Σ_S d_k (1 − r_k) v_k^{1/2} ē_r`, the value the imputation term takes in expectation.
pub fn balance_target(fit: &FittedModel, sample: &SampleData) -> f64 {
    fit.nonrespondents()
        .iter()
        .map(|&k| sample.d[k] * fit.scales[k])
        .sum::<f64>()
        * fit.ebar_r
}

fn assemble(method: Method, fit: &FittedModel, sample: &SampleData, imputed: Vec<ImputedUnit>) -> ImputedDataset {
    let mut values = fit.observed.clone();
    for u in &imputed {
        values[u.position] = u.value();
    }
    ImputedDataset { method, d: sample.d.clone(), r: sample.r.clone(), values, imputed }
}

fn check_alignment(fit: &FittedModel, sample: &SampleData) -> Result<()> {
    if fit.observed.len() != sample.len() || sample.r.iter().filter(|&&r| r).count() != fit.respondents.len() {
        return Err(Error::Shape("fitted model does not belong to this sample".into()));
    }
    Ok(())
}

/// Deterministic regression imputation.
pub fn impute_dri(fit: &FittedModel, sample: &SampleData) -> Result<ImputedDataset> {
    check_alignment(fit, sample)?;
    let imputed = fit
        .nonrespondents()
        .into_iter()
        .map(|k| ImputedUnit {
            position: k,
            prediction: fit.predictions[k],
            scale: fit.scales[k],
            residual: 0.0,
            donors: Vec::new(),
        })
        .collect();
    Ok(assemble(Method::Dri, fit, sample, imputed))
}

/// Random regression imputation: residuals drawn independently with replacement.
pub fn impute_rri<R: Rng + ?Sized>(fit: &FittedModel, sample: &SampleData, rng: &mut R) -> Result<ImputedDataset> {
    check_alignment(fit, sample)?;
    let picker = WeightedIndex::new(&fit.omega_tilde)
        .map_err(|e| Error::InvalidParameter(format!("donor weights: {e}")))?;
    let imputed = fit
        .nonrespondents()
        .into_iter()
        .map(|k| {
            let j = picker.sample(rng);
            ImputedUnit {
                position: k,
                prediction: fit.predictions[k],
                scale: fit.scales[k],
                residual: fit.residuals[j],
                donors: vec![Donor { respondent: fit.respondents[j], weight: 1.0 }],
            }
        })
        .collect();
    Ok(assemble(Method::Rri, fit, sample, imputed))
}

/// The `n_m × n_r` grid of (nonrespondent, respondent) cells, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPopulation {
    /// Sample positions of the nonrespondents.
    pub rows: Vec<usize>,
    /// Sample positions of the respondents.
    pub cols: Vec<usize>,
    /// `ψ_kl = ω̃_l`.
    pub psi: Vec<f64>,
    /// `x⁰_kl = d_k v_k^{1/2} ψ_kl e_l`.
    pub x0: Vec<f64>,
    /// Whether the `n_m` row-indicator variables `x^i_kl = ψ_kl 1(k = i)` are balanced too.
    pub with_purity_vars: bool,
    /// `d_k v_k^{1/2} e_l`, i.e. `x⁰_kl / ψ_kl`.
    balance_row: Vec<f64>,
}

impl CellPopulation {
    pub fn build(fit: &FittedModel, sample: &SampleData, with_purity_vars: bool) -> Self {
        let rows = fit.nonrespondents();
        let cols = fit.respondents.clone();
        let n_r = cols.len();
        let mut psi = Vec::with_capacity(rows.len() * n_r);
        let mut x0 = Vec::with_capacity(rows.len() * n_r);
        let mut balance_row = Vec::with_capacity(rows.len() * n_r);
        for &k in &rows {
            let dk = sample.d[k] * fit.scales[k];
            for l in 0..n_r {
                let w = fit.omega_tilde[l];
                psi.push(w);
                x0.push(dk * w * fit.residuals[l]);
                balance_row.push(dk * fit.residuals[l]);
            }
        }
        CellPopulation { rows, cols, psi, x0, with_purity_vars, balance_row }
    }

    pub fn n_m(&self) -> usize {
        self.rows.len()
    }

    pub fn n_r(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.n_r() + col
    }

    /// Balancing matrix with columns `x_kl / ψ_kl`: the first row is
    /// `d_k v_k^{1/2} e_l`, followed (with purity variables) by one indicator row per
    /// nonrespondent. The quotients are written directly, which avoids `0/0` when a
    /// weight underflows.
    pub fn balance_problem(&self) -> Result<BalanceProblem> {
        let m = self.psi.len();
        let q = if self.with_purity_vars { 1 + self.n_m() } else { 1 };
        let mut a = DenseMatrix::zeros(q, m);
        for (c, &x) in self.balance_row.iter().enumerate() {
            a.set(0, c, x);
        }
        if self.with_purity_vars {
            for i in 0..self.n_m() {
                for l in 0..self.n_r() {
                    a.set(1 + i, self.cell(i, l), 1.0);
                }
            }
        }
        BalanceProblem::new(self.psi.clone(), a)
    }
}

/// Turns a flight-phase outcome on `cells` into imputed residuals
/// `ε_k* = Σ_l Ĩ_kl e_l`.
pub fn impute_from_cells(
    fit: &FittedModel,
    sample: &SampleData,
    cells: &CellPopulation,
    itilde: &[f64],
) -> Result<ImputedDataset> {
    check_alignment(fit, sample)?;
    if itilde.len() != cells.psi.len() {
        return Err(Error::Shape(format!("{} cell values for {} cells", itilde.len(), cells.psi.len())));
    }
    let imputed = cells
        .rows
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mut residual = 0.0;
            let mut donors = Vec::new();
            for (l, &resp) in cells.cols.iter().enumerate() {
                let w = itilde[cells.cell(i, l)];
                if w != 0.0 {
                    residual += w * fit.residuals[l];
                    donors.push(Donor { respondent: resp, weight: w });
                }
            }
            ImputedUnit { position: k, prediction: fit.predictions[k], scale: fit.scales[k], residual, donors }
        })
        .collect();
    Ok(assemble(Method::Ebri, fit, sample, imputed))
}

/// Exact balanced random imputation.
pub fn impute_ebri<R: Rng + ?Sized>(
    fit: &FittedModel,
    sample: &SampleData,
    rng: &mut R,
    with_purity_vars: bool,
) -> Result<ImputedDataset> {
    impute_ebri_detailed(fit, sample, rng, with_purity_vars).map(|(ds, _, _)| ds)
}

/// [`impute_ebri`] that also returns the cell grid and the raw flight result.
pub fn impute_ebri_detailed<R: Rng + ?Sized>(
    fit: &FittedModel,
    sample: &SampleData,
    rng: &mut R,
    with_purity_vars: bool,
) -> Result<(ImputedDataset, CellPopulation, Option<FlightResult>)> {
    check_alignment(fit, sample)?;
    let cells = CellPopulation::build(fit, sample, with_purity_vars);
    if cells.n_m() == 0 {
        return Ok((assemble(Method::Ebri, fit, sample, Vec::new()), cells, None));
    }
    let flight = flight_phase(&cells.balance_problem()?, rng)?;
    let ds = impute_from_cells(fit, sample, &cells, &flight.itilde)?;
    Ok((ds, cells, Some(flight)))
}
