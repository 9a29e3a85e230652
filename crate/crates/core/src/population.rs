//! Finite populations and the synthetic ratio-model generator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SampleData;

/// A finite population frame.
///
/// `z` is stored row-major with `k` columns. A `NaN` in `y` marks a value that is
/// not known (the nonrespondents of a survey file); every other field must be
/// finite and `v` strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    y: Vec<f64>,
    z: Vec<f64>,
    k: usize,
    v: Vec<f64>,
    z1: Vec<f64>,
}

impl Population {
    pub fn new(y: Vec<f64>, z: Vec<f64>, k: usize, v: Vec<f64>, z1: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Shape("population must contain at least one unit".into()));
        }
        if k == 0 || z.len() != n * k || v.len() != n || z1.len() != n {
            return Err(Error::Shape(format!(
                "population columns disagree: y {n}, z {} (k = {k}), v {}, z1 {}",
                z.len(),
                v.len(),
                z1.len()
            )));
        }
        if y.iter().any(|x| x.is_infinite()) {
            return Err(Error::NonFinite("y"));
        }
        if z.iter().chain(&v).chain(&z1).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("population auxiliaries"));
        }
        if let Some(i) = v.iter().position(|&x| x <= 0.0) {
            return Err(Error::InvalidParameter(format!("v[{i}] = {} must be positive", v[i])));
        }
        Ok(Population { y, z, k, v, z1 })
    }

    /// The ratio-model layout: a single auxiliary `z = z1` and `v = z1`.
    pub fn ratio(y: Vec<f64>, z1: Vec<f64>) -> Result<Self> {
        Self::new(y, z1.clone(), 1, z1.clone(), z1)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn z1(&self) -> &[f64] {
        &self.z1
    }

    /// Number of auxiliary columns in `z`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn z_row(&self, unit: usize) -> &[f64] {
        &self.z[unit * self.k..(unit + 1) * self.k]
    }

    /// Whether every `y` is known.
    pub fn is_complete(&self) -> bool {
        self.y.iter().all(|y| y.is_finite())
    }

    pub fn total(&self) -> f64 {
        self.y.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    /// Centered normal errors with variance `sigma2`.
    #[default]
    Normal,
}

/// Parameters of a synthetic ratio-model population:
/// `z1 ~ Gamma(shape, scale)`, `y = β z1 + z1^{1/2} ε` with `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationRecipe {
    pub size: usize,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_r2: Option<f64>,
}

impl PopulationRecipe {
    /// Recipe calibrated to a target model R² (share of `Var(y)` explained by `β z1`).
    pub fn with_target_r2(size: usize, beta: f64, gamma_shape: f64, gamma_scale: f64, r2: f64) -> Self {
        PopulationRecipe {
            size,
            beta: vec![beta],
            sigma2: None,
            gamma_shape,
            gamma_scale,
            noise: Noise::Normal,
            target_r2: Some(r2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidParameter("population size must be positive".into()));
        }
        if self.beta.len() != 1 {
            return Err(Error::InvalidParameter(format!(
                "the ratio-model generator takes exactly one coefficient, got {}",
                self.beta.len()
            )));
        }
        if !(self.gamma_shape > 0.0 && self.gamma_shape.is_finite())
            || !(self.gamma_scale > 0.0 && self.gamma_scale.is_finite())
        {
            return Err(Error::InvalidParameter("gamma shape and scale must be positive and finite".into()));
        }
        if !self.beta[0].is_finite() {
            return Err(Error::NonFinite("beta"));
        }
        match (self.sigma2, self.target_r2) {
            (Some(_), Some(_)) => Err(Error::InvalidParameter(
                "set either sigma2 or target_r2, not both (sigma2 is derived from the target)".into(),
            )),
            (None, None) => Err(Error::InvalidParameter("one of sigma2 or target_r2 is required".into())),
            (Some(s), None) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::InvalidParameter(format!("sigma2 = {s} must be non-negative")))
            }
            (None, Some(r)) if !(r > 0.0 && r < 1.0) => {
                Err(Error::InvalidParameter(format!("target_r2 = {r} must lie in (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Noise variance, derived from `target_r2` when that is set.
    ///
    /// With `Var(z1) = shape·scale²` and `E(z1) = shape·scale`, the model R² is
    /// `β²Var(z1) / (β²Var(z1) + σ²E(z1))`, which is solved for σ².
    pub fn resolved_sigma2(&self) -> Result<f64> {
        self.validate()?;
        if let Some(s) = self.sigma2 {
            return Ok(s);
        }
        let r2 = self.target_r2.expect("validated");
        let beta = self.beta[0];
        let var_z = self.gamma_shape * self.gamma_scale * self.gamma_scale;
        let mean_z = self.gamma_shape * self.gamma_scale;
        Ok(beta * beta * var_z * (1.0 - r2) / (r2 * mean_z))
    }
}

pub fn generate_population<R: Rng + ?Sized>(recipe: &PopulationRecipe, rng: &mut R) -> Result<Population> {
    let sigma2 = recipe.resolved_sigma2()?;
    let beta = recipe.beta[0];
    let gamma = Gamma::new(recipe.gamma_shape, recipe.gamma_scale)
        .map_err(|e| Error::InvalidParameter(format!("gamma distribution: {e}")))?;
    let normal = match recipe.noise {
        Noise::Normal => Normal::new(0.0, libm::sqrt(sigma2))
            .map_err(|e| Error::InvalidParameter(format!("normal distribution: {e}")))?,
    };

    let mut z1 = Vec::with_capacity(recipe.size);
    let mut y = Vec::with_capacity(recipe.size);
    for _ in 0..recipe.size {
        // Gamma draws can underflow to exactly 0 for tiny shapes; v must stay positive
        let mut z = gamma.sample(rng);
        while z <= 0.0 {
            z = gamma.sample(rng);
        }
        let eps = if sigma2 == 0.0 { 0.0 } else { normal.sample(rng) };
        y.push(beta * z + libm::sqrt(z) * eps);
        z1.push(z);
    }
    Population::ratio(y, z1)
}

/// Empirical model R² of a ratio-model population: `Var(β z1) / Var(y)`.
pub fn model_r2(pop: &Population, beta: f64) -> f64 {
    let fitted: Vec<f64> = pop.z1().iter().map(|z| beta * z).collect();
    let var_fit = variance(&fitted);
    let var_y = variance(pop.y());
    if var_y == 0.0 {
        1.0
    } else {
        var_fit / var_y
    }
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// The lecture-theatre sample: guessed amount `z1` and true amount `y` for a simple
/// random sample of 10 persons out of 53, with `y` missing for the last four.
#[derive(Debug, Clone)]
pub struct ThompsonExample {
    /// The ten sampled persons (ratio-model layout, `y = NaN` when missing).
    pub units: Population,
    /// All ten units selected with `π = 10/53`; `r` flags the six respondents.
    pub sample: SampleData,
}

pub const THOMPSON_POPULATION_SIZE: usize = 53;
pub const THOMPSON_Z1: [f64; 10] = [8.35, 1.5, 10.0, 0.6, 7.5, 7.95, 0.95, 4.4, 1.0, 0.5];
pub const THOMPSON_Y: [f64; 6] = [8.75, 2.55, 9.0, 1.1, 7.5, 5.0];

pub fn load_thompson_example() -> ThompsonExample {
    let y: Vec<f64> = (0..10).map(|i| THOMPSON_Y.get(i).copied().unwrap_or(f64::NAN)).collect();
    let units = Population::ratio(y, THOMPSON_Z1.to_vec()).expect("static data is valid");
    let pi = 10.0 / THOMPSON_POPULATION_SIZE as f64;
    let sample = SampleData::new(THOMPSON_POPULATION_SIZE, (0..10).collect(), vec![pi; 10])
        .expect("static data is valid")
        .with_response((0..10).map(|i| i < 6).collect())
        .expect("static data is valid");
    ThompsonExample { units, sample }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_gives_exact_ratio_line() {
        let recipe = PopulationRecipe {
            size: 500,
            beta: vec![1.0],
            sigma2: Some(0.0),
            gamma_shape: 2.0,
            gamma_scale: 5.0,
            noise: Noise::Normal,
            target_r2: None,
        };
        let pop = generate_population(&recipe, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(pop.y().iter().zip(pop.z1()).all(|(y, z)| y == z));
        assert_eq!(pop.v(), pop.z1());
        assert_eq!(pop.k(), 1);
    }

    #[test]
    fn sigma2_from_target_r2() {
        // 50 (1 - R²) / (10 R²)
        let r36 = PopulationRecipe::with_target_r2(10_000, 1.0, 2.0, 5.0, 0.36);
        assert!((r36.resolved_sigma2().unwrap() - 50.0 * 0.64 / 3.6).abs() < 1e-12);
        assert!((r36.resolved_sigma2().unwrap() - 8.888_888_888_9).abs() < 1e-9);
        let r64 = PopulationRecipe::with_target_r2(10_000, 1.0, 2.0, 5.0, 0.64);
        assert!((r64.resolved_sigma2().unwrap() - 2.8125).abs() < 1e-12);
    }

    #[test]
    fn empirical_r2_hits_target() {
        for (seed, target) in [(11u64, 0.36), (12, 0.64)] {
            let recipe = PopulationRecipe::with_target_r2(10_000, 1.0, 2.0, 5.0, target);
            let pop = generate_population(&recipe, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let r2 = model_r2(&pop, 1.0);
            assert!((r2 - target).abs() <= 0.03, "target {target}, got {r2}");
        }
    }

    #[test]
    fn gamma_moments_within_five_standard_errors() {
        let recipe = PopulationRecipe::with_target_r2(20_000, 1.0, 2.0, 5.0, 0.5);
        let pop = generate_population(&recipe, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let n = pop.len() as f64;
        let z = pop.z1();
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        // Gamma(k=2, θ=5): mean 10, variance 50, fourth central moment 3θ⁴k(k+2) = 15000
        assert!((mean - 10.0).abs() <= 5.0 * (50.0 / n).sqrt());
        let se_var = ((15_000.0 - 50.0 * 50.0) / n).sqrt();
        assert!((var - 50.0).abs() <= 5.0 * se_var, "var {var}");
    }

    #[test]
    fn recipe_validation() {
        let mut r = PopulationRecipe::with_target_r2(10, 1.0, 2.0, 5.0, 0.36);
        r.sigma2 = Some(1.0);
        assert!(r.validate().is_err());
        let mut r = PopulationRecipe::with_target_r2(10, 1.0, -2.0, 5.0, 0.36);
        assert!(generate_population(&r, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        r.gamma_shape = 2.0;
        r.target_r2 = Some(1.0);
        assert!(r.validate().is_err());
        r.target_r2 = Some(0.5);
        r.beta = vec![1.0, 2.0];
        assert!(r.validate().is_err());
    }

    #[test]
    fn thompson_table() {
        let ex = load_thompson_example();
        assert_eq!(ex.units.z1()[0], 8.35);
        assert_eq!(ex.units.y()[5], 5.0);
        let respondents = ex.sample.r.iter().filter(|&&r| r).count();
        assert_eq!(respondents, 6);
        assert_eq!(ex.sample.len() - respondents, 4);
        assert!(ex.units.y()[6..].iter().all(|y| y.is_nan()));
    }

    #[test]
    fn population_validation() {
        assert!(Population::ratio(vec![], vec![]).is_err());
        assert!(Population::ratio(vec![1.0], vec![0.0]).is_err());
        assert!(Population::ratio(vec![f64::INFINITY], vec![1.0]).is_err());
        assert!(Population::new(vec![1.0, 2.0], vec![1.0], 1, vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
    }
}
