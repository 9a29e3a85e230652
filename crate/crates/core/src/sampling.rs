//! Sampling designs and inclusion probabilities.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;
const REJECTIVE_MAX_ATTEMPTS: usize = 1_000_000;

/// First-order inclusion probabilities `π_k ∈ (0, 1]` summing to the sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionProbs(Vec<f64>);

impl InclusionProbs {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if let Some(i) = pi.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidParameter(format!("pi[{i}] = {} is outside (0, 1]", pi[i])));
        }
        let n = pi.iter().sum::<f64>();
        if (n - libm::round(n)).abs() > SUM_TOL * n.max(1.0) {
            return Err(Error::InvalidParameter(format!("inclusion probabilities sum to {n}, not an integer")));
        }
        Ok(InclusionProbs(pi))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// The expected sample size `Σ π_k`, rounded.
    pub fn sample_size(&self) -> usize {
        libm::round(self.0.iter().sum::<f64>()) as usize
    }
}

/// A drawn sample with its design weights and response indicators.
///
/// All vectors are indexed by position in the sample; `indices` maps a position
/// back to the population unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleData {
    pub population_size: usize,
    pub indices: Vec<usize>,
    pub pi: Vec<f64>,
    pub d: Vec<f64>,
    pub r: Vec<bool>,
}

impl SampleData {
    /// A fully responding sample with `d_k = 1 / π_k`.
    pub fn new(population_size: usize, indices: Vec<usize>, pi: Vec<f64>) -> Result<Self> {
        if indices.len() != pi.len() {
            return Err(Error::Shape(format!("{} indices but {} probabilities", indices.len(), pi.len())));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= population_size) {
            return Err(Error::Shape(format!("unit {i} outside a population of {population_size}")));
        }
        if let Some(p) = pi.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidParameter(format!("inclusion probability {p} outside (0, 1]")));
        }
        let d = pi.iter().map(|p| 1.0 / p).collect();
        let r = vec![true; indices.len()];
        Ok(SampleData { population_size, indices, pi, d, r })
    }

    pub fn with_response(mut self, r: Vec<bool>) -> Result<Self> {
        if r.len() != self.indices.len() {
            return Err(Error::Shape(format!("{} response flags for {} sampled units", r.len(), self.indices.len())));
        }
        self.r = r;
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn respondent_count(&self) -> usize {
        self.r.iter().filter(|&&r| r).count()
    }
}

/// π-ps inclusion probabilities `π_k = n z1_k / Σ z1_l`.
///
/// Units whose probability would exceed one are taken with certainty and the
/// formula is reapplied to the remaining units, until no probability exceeds one.
pub fn pips_probabilities(z1: &[f64], n: usize) -> Result<InclusionProbs> {
    let big_n = z1.len();
    if n > big_n {
        return Err(Error::SampleTooLarge { n, population: big_n });
    }
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    if let Some(i) = z1.iter().position(|&z| !(z > 0.0 && z.is_finite())) {
        return Err(Error::InvalidParameter(format!("size variable z1[{i}] = {} must be positive", z1[i])));
    }

    let mut certain = vec![false; big_n];
    let mut pi = vec![0.0; big_n];
    for _ in 0..=big_n {
        let fixed = certain.iter().filter(|&&c| c).count();
        let remaining = (n - fixed) as f64;
        let total: f64 = z1.iter().zip(&certain).filter(|(_, &c)| !c).map(|(z, _)| z).sum();
        let mut capped_any = false;
        for k in 0..big_n {
            if certain[k] {
                pi[k] = 1.0;
                continue;
            }
            pi[k] = remaining * z1[k] / total;
            if pi[k] >= 1.0 {
                certain[k] = true;
                capped_any = true;
            }
        }
        if !capped_any {
            break;
        }
        if certain.iter().filter(|&&c| c).count() >= n {
            // only possible through rounding when n certainty units exhaust the budget
            pi.iter_mut().zip(&certain).for_each(|(p, &c)| *p = if c { 1.0 } else { 0.0 });
            break;
        }
    }
    InclusionProbs::new(pi)
}

/// Simple random sampling without replacement, `π_k = n / N`.
pub fn srswor<R: Rng + ?Sized>(population_size: usize, n: usize, rng: &mut R) -> Result<SampleData> {
    if n > population_size {
        return Err(Error::SampleTooLarge { n, population: population_size });
    }
    let mut indices = rand::seq::index::sample(rng, population_size, n).into_vec();
    indices.sort_unstable();
    let pi = n as f64 / population_size as f64;
    SampleData::new(population_size, indices, vec![pi; n])
}

/// Poisson sampling: independent Bernoulli(π_k) draws. The sample size is random.
pub fn poisson_sample<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> Result<SampleData> {
    let indices: Vec<usize> = (0..pi.len()).filter(|&k| rng.random::<f64>() < pi[k]).collect();
    let p = indices.iter().map(|&k| pi[k]).collect();
    SampleData::new(pi.len(), indices, p)
}

/// Rejective (conditional Poisson) sampling of fixed size `n`.
///
/// Independent Bernoulli(π_k) draws over the whole population are repeated until
/// the realized size is `n`. The target `π` is used directly as the working
/// probability and recorded as the weight basis (`d_k = 1 / π_k`).
pub fn rejective_sample<R: Rng + ?Sized>(pi: &InclusionProbs, n: usize, rng: &mut R) -> Result<SampleData> {
    let p = pi.as_slice();
    if n > p.len() {
        return Err(Error::SampleTooLarge { n, population: p.len() });
    }
    let mut selected = Vec::with_capacity(n + 1);
    for _ in 0..REJECTIVE_MAX_ATTEMPTS {
        selected.clear();
        for (k, &pk) in p.iter().enumerate() {
            if rng.random::<f64>() < pk {
                selected.push(k);
                if selected.len() > n {
                    break;
                }
            }
        }
        if selected.len() == n {
            let sel_pi = selected.iter().map(|&k| p[k]).collect();
            return SampleData::new(p.len(), selected, sel_pi);
        }
    }
    Err(Error::RejectiveStalled { n, attempts: REJECTIVE_MAX_ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use proptest::prelude::*;

    fn close_all(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn pips_examples() {
        close_all(pips_probabilities(&[1.0; 4], 2).unwrap().as_slice(), &[0.5; 4], 1e-15);
        close_all(
            pips_probabilities(&[1.0, 2.0, 3.0, 4.0], 2).unwrap().as_slice(),
            &[0.2, 0.4, 0.6, 0.8],
            1e-15,
        );
        // 2·10/14 > 1, so unit 0 is certain and the remaining slot is shared by 4 equal units
        close_all(
            pips_probabilities(&[10.0, 1.0, 1.0, 1.0, 1.0], 2).unwrap().as_slice(),
            &[1.0, 0.25, 0.25, 0.25, 0.25],
            1e-15,
        );
        assert!(matches!(pips_probabilities(&[1.0, 1.0], 3), Err(Error::SampleTooLarge { .. })));
        assert!(pips_probabilities(&[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn pips_nested_capping() {
        // round 1: 3·100/112 > 1 caps unit 0; round 2: 2·10/12 > 1 caps unit 1
        let pi = pips_probabilities(&[100.0, 10.0, 1.0, 1.0], 3).unwrap();
        close_all(pi.as_slice(), &[1.0, 1.0, 0.5, 0.5], 1e-15);
    }

    #[test]
    fn srswor_census_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = srswor(7, 7, &mut rng).unwrap();
        assert_eq!(s.indices, (0..7).collect::<Vec<_>>());
        let s = srswor(53, 10, &mut rng).unwrap();
        assert!(s.d.iter().all(|&d| (d - 5.3).abs() < 1e-12));
        assert!(srswor(3, 4, &mut rng).is_err());
    }

    #[test]
    fn srswor_single_draw_uniform() {
        let (big_n, reps) = (10usize, 50_000usize);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = vec![0usize; big_n];
        for _ in 0..reps {
            counts[srswor(big_n, 1, &mut rng).unwrap().indices[0]] += 1;
        }
        let p = 1.0 / big_n as f64;
        let sigma = (reps as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - reps as f64 * p).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn srswor_inclusion_frequencies() {
        let (big_n, n, reps) = (20usize, 6usize, 10_000usize);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut counts = vec![0usize; big_n];
        for _ in 0..reps {
            srswor(big_n, n, &mut rng).unwrap().indices.iter().for_each(|&k| counts[k] += 1);
        }
        let p = n as f64 / big_n as f64;
        let sigma = (reps as f64 * p * (1.0 - p)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - reps as f64 * p).abs() <= 4.0 * sigma));
    }

    #[test]
    fn rejective_certainty_population() {
        let pi = InclusionProbs::new(vec![1.0; 5]).unwrap();
        let s = rejective_sample(&pi, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2, 3, 4]);
    }

    /// Conditional Poisson law of every size-n subset, by enumeration.
    fn conditioned_poisson_law(p: &[f64], n: usize) -> Vec<(u32, f64)> {
        let big_n = p.len();
        let mut law = Vec::new();
        for mask in 0u32..(1 << big_n) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let mass: f64 = (0..big_n).map(|k| if mask >> k & 1 == 1 { p[k] } else { 1.0 - p[k] }).product();
            law.push((mask, mass));
        }
        let total: f64 = law.iter().map(|x| x.1).sum();
        law.iter_mut().for_each(|x| x.1 /= total);
        law
    }

    fn check_against_enumeration(p: &[f64], n: usize, reps: usize, seed: u64) {
        let law = conditioned_poisson_law(p, n);
        let pi = InclusionProbs::new(p.to_vec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; 1 << p.len()];
        for _ in 0..reps {
            let s = rejective_sample(&pi, n, &mut rng).unwrap();
            counts[s.indices.iter().fold(0usize, |m, &k| m | (1 << k))] += 1;
        }
        for (mask, prob) in law {
            let sigma = (reps as f64 * prob * (1.0 - prob)).sqrt();
            let got = counts[mask as usize] as f64;
            assert!((got - reps as f64 * prob).abs() <= 4.0 * sigma, "mask {mask:b}: {got} vs {}", reps as f64 * prob);
        }
    }

    #[test]
    fn rejective_equal_probabilities_uniform_pairs() {
        let law = conditioned_poisson_law(&[0.5; 4], 2);
        assert_eq!(law.len(), 6);
        assert!(law.iter().all(|x| (x.1 - 1.0 / 6.0).abs() < 1e-15));
        check_against_enumeration(&[0.5; 4], 2, 20_000, 17);
    }

    #[test]
    fn rejective_unequal_probabilities() {
        // masses 0.27, 0.18, 0.03 over {01, 02, 12}, normalized by 0.48
        let law = conditioned_poisson_law(&[0.9, 0.6, 0.5], 2);
        let expected = [(0b011, 0.5625), (0b101, 0.375), (0b110, 0.0625)];
        for ((m, p), (em, ep)) in law.iter().zip(expected) {
            assert_eq!(*m, em);
            assert!((p - ep).abs() < 1e-12);
        }
        check_against_enumeration(&[0.9, 0.6, 0.5], 2, 20_000, 23);
    }

    #[test]
    fn poisson_sample_is_subset() {
        let p = [0.2, 0.9, 0.5];
        let s = poisson_sample(&p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (pos, &k) in s.indices.iter().enumerate() {
            assert_eq!(s.pi[pos], p[k]);
        }
    }

    proptest! {
        #[test]
        fn pips_sums_to_n_and_is_idempotent(
            z in proptest::collection::vec(0.01f64..1000.0, 2..60),
            frac in 0.05f64..1.0,
        ) {
            let n = ((z.len() as f64 * frac).ceil() as usize).clamp(1, z.len());
            let pi = pips_probabilities(&z, n).unwrap();
            let sum: f64 = pi.as_slice().iter().sum();
            prop_assert!((sum - n as f64).abs() <= 1e-9);
            prop_assert!(pi.as_slice().iter().all(|&p| p > 0.0 && p <= 1.0));
            let again = pips_probabilities(pi.as_slice(), n).unwrap();
            for (a, b) in pi.as_slice().iter().zip(again.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
