//! Regularized weighted least squares for the imputation model
//! `y_k = z_kᵀβ + v_k^{1/2} ε_k`, and the observed residuals.
//!
//! With `Ĝ_r = N⁻¹ Σ_S r_k ω_k v_k⁻¹ z_k z_kᵀ = Σ_j η_j u_j u_jᵀ`, the regularized
//! matrix is `Ĝ_ar = Σ_j max(η_j, a) u_j u_jᵀ` and
//! `B̂_ar = Ĝ_ar⁻¹ (N⁻¹ Σ_S r_k ω_k v_k⁻¹ z_k y_k)`. Since every eigenvalue of
//! `Ĝ_ar` is at least `a`, `‖Ĝ_ar⁻¹‖ ≤ 1/a`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_sym, EigenDecomposition, SymMatrix};
use crate::population::Population;
use crate::sampling::SampleData;

/// Eigenvalues in `(-PSD_TOL, 0)` are rounding noise and are read as zero.
const PSD_TOL: f64 = 1e-10;

/// Imputation weights `ω_k`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationWeights {
    /// `ω_k = 1` for every unit.
    #[default]
    Uniform,
    /// One positive weight per population unit.
    PerUnit(Vec<f64>),
}

impl ImputationWeights {
    fn weight(&self, unit: usize) -> f64 {
        match self {
            ImputationWeights::Uniform => 1.0,
            ImputationWeights::PerUnit(w) => w[unit],
        }
    }
}

/// Choice of the regularization constant `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// `a = factor × trace(Ĝ_r) / K`.
    Relative(f64),
    /// A fixed `a > 0`.
    Absolute(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Relative(0.01)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Columns of the population `z` matrix to use; `None` takes all of them.
    #[serde(default)]
    pub columns: Option<Vec<usize>>,
    #[serde(default)]
    pub omega: ImputationWeights,
    #[serde(default)]
    pub regularization: Regularization,
}

impl ModelSpec {
    /// Ratio imputation with equal weights and the default spectral floor.
    pub fn ratio() -> Self {
        ModelSpec::default()
    }

    fn validate(&self, pop: &Population) -> Result<Vec<usize>> {
        let columns = match &self.columns {
            Some(c) if c.is_empty() => return Err(Error::InvalidParameter("no model columns selected".into())),
            Some(c) => c.clone(),
            None => (0..pop.k()).collect(),
        };
        if let Some(&c) = columns.iter().find(|&&c| c >= pop.k()) {
            return Err(Error::Shape(format!("model column {c} but population has {} columns", pop.k())));
        }
        if let ImputationWeights::PerUnit(w) = &self.omega {
            if w.len() != pop.len() {
                return Err(Error::Shape(format!("{} imputation weights for {} units", w.len(), pop.len())));
            }
            if let Some(x) = w.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidParameter(format!("imputation weight {x} must be positive")));
            }
        }
        match self.regularization {
            Regularization::Relative(f) | Regularization::Absolute(f) if !(f > 0.0 && f.is_finite()) => {
                Err(Error::InvalidParameter(format!("regularization constant {f} must be positive")))
            }
            _ => Ok(columns),
        }
    }
}

/// Result of fitting the imputation model on the respondents of a sample.
///
/// Per-unit vectors (`predictions`, `scales`, `observed`) are indexed by position
/// in the sample; per-respondent vectors (`residuals`, `omega_tilde`) follow
/// `respondents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub b_ar: Vec<f64>,
    pub g_r: SymMatrix,
    pub g_ar: SymMatrix,
    /// Eigenvalues of `Ĝ_r`, decreasing.
    pub eigenvalues: Vec<f64>,
    pub a: f64,
    pub respondents: Vec<usize>,
    /// `e_l = (y_l − z_lᵀB̂_ar) / v_l^{1/2}`.
    pub residuals: Vec<f64>,
    /// `ω̃_l = ω_l / Σ_{j ∈ S} ω_j r_j`.
    pub omega_tilde: Vec<f64>,
    /// `ē_r = Σ ω̃_j r_j e_j`.
    pub ebar_r: f64,
    /// `z_kᵀB̂_ar` for every sampled unit.
    pub predictions: Vec<f64>,
    /// `v_k^{1/2}` for every sampled unit.
    pub scales: Vec<f64>,
    /// Observed `y_k` for respondents, `NaN` for nonrespondents.
    pub observed: Vec<f64>,
}

impl FittedModel {
    pub fn nonrespondents(&self) -> Vec<usize> {
        let mut is_resp = vec![false; self.observed.len()];
        self.respondents.iter().for_each(|&i| is_resp[i] = true);
        (0..self.observed.len()).filter(|&i| !is_resp[i]).collect()
    }

    /// `‖Ĝ_ar⁻¹‖` (the inverse of the smallest regularized eigenvalue).
    pub fn inverse_norm(&self) -> f64 {
        1.0 / self.eigenvalues.iter().fold(f64::INFINITY, |acc, &e| acc.min(e.max(self.a)))
    }
}

/// `Σ_j max(η_j, a) u_j u_jᵀ` for the eigenpairs of `g`.
pub fn regularize(g: &SymMatrix, a: f64) -> Result<SymMatrix> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("regularization constant {a} must be positive")));
    }
    let eig = eig_sym(g)?;
    Ok(eig.spectral_map(|eta| clean_eigenvalue(eta).max(a)))
}

/// `Σ_j max(η_j, a)⁻¹ u_j u_jᵀ`, the inverse of [`regularize`] taken in the eigenbasis.
pub fn regularized_inverse(g: &SymMatrix, a: f64) -> Result<SymMatrix> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("regularization constant {a} must be positive")));
    }
    let eig = eig_sym(g)?;
    Ok(eig.spectral_map(|eta| 1.0 / clean_eigenvalue(eta).max(a)))
}

fn clean_eigenvalue(eta: f64) -> f64 {
    if eta < 0.0 && eta > -PSD_TOL {
        0.0
    } else {
        eta
    }
}

pub fn fit(sample: &SampleData, pop: &Population, spec: &ModelSpec) -> Result<FittedModel> {
    let columns = spec.validate(pop)?;
    let k = columns.len();
    if sample.r.len() != sample.len() {
        return Err(Error::Shape("response flags do not match the sample".into()));
    }
    if let Some(&u) = sample.indices.iter().find(|&&u| u >= pop.len()) {
        return Err(Error::Shape(format!("sampled unit {u} outside a population of {}", pop.len())));
    }
    let respondents: Vec<usize> = (0..sample.len()).filter(|&i| sample.r[i]).collect();
    if respondents.is_empty() {
        return Err(Error::NoRespondents);
    }

    let big_n = sample.population_size as f64;
    let z_of = |unit: usize| -> Vec<f64> {
        let row = pop.z_row(unit);
        columns.iter().map(|&c| row[c]).collect()
    };

    let mut g_r = SymMatrix::zeros(k);
    let mut rhs = vec![0.0; k];
    for &i in &respondents {
        let unit = sample.indices[i];
        let y = pop.y()[unit];
        if !y.is_finite() {
            return Err(Error::NonFinite("y of a respondent"));
        }
        let z = z_of(unit);
        let w = spec.omega.weight(unit) / pop.v()[unit];
        g_r.add_outer(&z, w);
        rhs.iter_mut().zip(&z).for_each(|(r, zj)| *r += w * zj * y);
    }
    g_r.scale(1.0 / big_n);
    rhs.iter_mut().for_each(|r| *r /= big_n);

    let eig: EigenDecomposition = eig_sym(&g_r)?;
    let a = match spec.regularization {
        Regularization::Absolute(a) => a,
        Regularization::Relative(f) => f * g_r.trace() / k as f64,
    };
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "regularization constant resolved to {a}; the respondents' auxiliaries are all zero"
        )));
    }
    let floor = |eta: f64| clean_eigenvalue(eta).max(a);
    let b_ar = eig.apply(|eta| 1.0 / floor(eta), &rhs);
    let g_ar = eig.spectral_map(floor);

    let predictions: Vec<f64> = sample
        .indices
        .iter()
        .map(|&u| z_of(u).iter().zip(&b_ar).map(|(z, b)| z * b).sum())
        .collect();
    let scales: Vec<f64> = sample.indices.iter().map(|&u| libm::sqrt(pop.v()[u])).collect();
    let observed: Vec<f64> = (0..sample.len())
        .map(|i| if sample.r[i] { pop.y()[sample.indices[i]] } else { f64::NAN })
        .collect();

    let residuals: Vec<f64> = respondents.iter().map(|&i| (observed[i] - predictions[i]) / scales[i]).collect();
    let omega: Vec<f64> = respondents.iter().map(|&i| spec.omega.weight(sample.indices[i])).collect();
    let omega_sum: f64 = omega.iter().sum();
    let omega_tilde: Vec<f64> = omega.iter().map(|w| w / omega_sum).collect();
    let ebar_r = omega_tilde.iter().zip(&residuals).map(|(w, e)| w * e).sum();

    Ok(FittedModel {
        b_ar,
        g_r,
        g_ar,
        eigenvalues: eig.values,
        a,
        respondents,
        residuals,
        omega_tilde,
        ebar_r,
        predictions,
        scales,
        observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;
    use crate::population::load_thompson_example;

    #[test]
    fn thompson_ratio_estimate_and_residuals() {
        let ex = load_thompson_example();
        let fit = fit(&ex.sample, &ex.units, &ModelSpec::ratio()).unwrap();
        assert!((fit.b_ar[0] - 33.9 / 35.9).abs() < 1e-12);
        assert_eq!(libm::round(fit.b_ar[0] * 100.0) / 100.0, 0.94);
        let table = [0.30, 0.93, -0.14, 0.69, 0.15, -0.89];
        for (e, t) in fit.residuals.iter().zip(table) {
            assert!((e - t).abs() <= 0.01, "{e} vs {t}");
        }
        assert_eq!(fit.respondents, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(fit.nonrespondents(), vec![6, 7, 8, 9]);
        assert!((fit.omega_tilde.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_fit_recovers_coefficients() {
        // y = 2 z_a − 0.5 z_b with two auxiliaries
        let za = [1.0, 2.0, 3.0, 4.0, 5.0, 1.5];
        let zb = [0.5, 4.0, 1.0, 2.0, 3.0, 2.5];
        let y: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let z: Vec<f64> = za.iter().zip(&zb).flat_map(|(a, b)| [*a, *b]).collect();
        let pop = Population::new(y, z, 2, vec![1.0; 6], za.to_vec()).unwrap();
        let sample = SampleData::new(6, (0..6).collect(), vec![1.0; 6]).unwrap();
        let spec = ModelSpec { regularization: Regularization::Absolute(1e-8), ..Default::default() };
        let fit = fit(&sample, &pop, &spec).unwrap();
        assert!((fit.b_ar[0] - 2.0).abs() < 1e-10 && (fit.b_ar[1] + 0.5).abs() < 1e-10);
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-10));
    }

    #[test]
    fn ratio_form_without_clipping() {
        let z1 = vec![2.0, 3.0, 5.0, 7.0, 11.0];
        let y = vec![1.0, 4.0, 4.5, 9.0, 10.0];
        let pop = Population::ratio(y.clone(), z1.clone()).unwrap();
        let sample = SampleData::new(40, (0..5).collect(), vec![0.125; 5])
            .unwrap()
            .with_response(vec![true, false, true, true, false])
            .unwrap();
        let fit = fit(&sample, &pop, &ModelSpec::ratio()).unwrap();
        let ratio = (1.0 + 4.5 + 9.0) / (2.0 + 5.0 + 7.0);
        assert!((fit.b_ar[0] - ratio).abs() < 1e-14);
    }

    #[test]
    fn zero_respondents_rejected() {
        let ex = load_thompson_example();
        let sample = ex.sample.clone().with_response(vec![false; 10]).unwrap();
        assert_eq!(fit(&sample, &ex.units, &ModelSpec::ratio()), Err(Error::NoRespondents));
    }

    #[test]
    fn unequal_weights_normalize() {
        let ex = load_thompson_example();
        let w: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let spec = ModelSpec { omega: ImputationWeights::PerUnit(w), ..Default::default() };
        let fit = fit(&ex.sample, &ex.units, &spec).unwrap();
        assert!((fit.omega_tilde[5] - 6.0 / 21.0).abs() < 1e-15);
        let ebar: f64 = fit.omega_tilde.iter().zip(&fit.residuals).map(|(w, e)| w * e).sum();
        assert_eq!(fit.ebar_r, ebar);
    }

    #[test]
    fn regularize_no_clipping_is_identity() {
        let g = SymMatrix::new(2, vec![3.0, 1.0, 1.0, 2.0]).unwrap();
        let out = regularize(&g, 0.5).unwrap();
        for (a, b) in g.as_slice().iter().zip(out.as_slice()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn regularize_diagonal_clipping() {
        let out = regularize(&SymMatrix::diagonal(&[2.0, 0.001]), 0.5).unwrap();
        let expect = [2.0, 0.0, 0.0, 0.5];
        for (a, b) in out.as_slice().iter().zip(expect) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert!(regularize(&SymMatrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn regularize_median_floor_bounds_inverse() {
        // B Bᵀ for a fixed B, so the matrix is PSD with a known spread of eigenvalues
        let b = [1.0, 0.2, -0.3, 0.0, 0.5, 2.0, 0.1, -1.0, 0.0, 0.3, 0.7, 0.2, 1.2, 0.0, 0.4, 0.05];
        let mut data = vec![0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                data[i * 4 + j] = (0..4).map(|k| b[i * 4 + k] * b[j * 4 + k]).sum();
            }
        }
        let g = SymMatrix::new(4, data).unwrap();
        let eig = eig_sym(&g).unwrap();
        let a = 0.5 * (eig.values[1] + eig.values[2]);
        let reg = regularize(&g, a).unwrap();
        let inv = eig_sym(&reg).unwrap().spectral_map(|e| 1.0 / e);
        assert!(spectral_norm(&inv).unwrap() <= 1.0 / a + 1e-10);
        let reg_eig = eig_sym(&reg).unwrap();
        for (r, e) in reg_eig.values.iter().zip(&eig.values) {
            assert!((r - e.max(a)).abs() < 1e-10);
        }
    }

    #[test]
    fn regularized_inverse_inverts_regularized_matrix() {
        let g = SymMatrix::new(3, vec![4.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let reg = regularize(&g, 0.3).unwrap();
        let inv = regularized_inverse(&g, 0.3).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..3).map(|i| inv.get(i, j)).collect();
            let e = reg.mul_vec(&col);
            for (i, x) in e.iter().enumerate() {
                assert!((x - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!((spectral_norm(&inv).unwrap() - 1.0 / 0.3).abs() < 1e-12);
        assert!(regularized_inverse(&g, -1.0).is_err());
    }
}
