//! Flight phase of the cube method.
//!
//! Starting from `π(0) = π0`, each step picks a nonzero direction `v` in the kernel
//! of the balancing matrix restricted to the still-fractional coordinates, walks to
//! the boundary of `[0, 1]^M` in one of the two directions `±v` with probabilities
//! that keep every coordinate a martingale, and fixes at least one more coordinate
//! at 0 or 1. The walk stops when the restricted kernel is trivial, leaving at most
//! `q` fractional coordinates and `A π(T) = A π0`.
//!
//! The direction is the first kernel-basis vector of the balancing matrix
//! restricted to the smallest prefix of fractional columns (in index order) that
//! has more columns than nonzero rows. Such a prefix always has a nontrivial
//! kernel, and the vector is still in the kernel of the full restricted matrix, so
//! this is a valid choice of direction; it keeps each step at `O(q³)` instead of
//! eliminating the whole `q × M` system.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{nullspace_block, DenseMatrix};

/// Entries within this distance of 0 or 1 are treated as integral.
pub const INTEGER_TOL: f64 = 1e-9;
const DIRECTION_TOL: f64 = 1e-14;

/// Balancing problem: initial probabilities and the `q × M` balancing matrix whose
/// column `k` is `x_k / π_k`.
#[derive(Debug, Clone)]
pub struct BalanceProblem {
    pub pi0: Vec<f64>,
    pub a: DenseMatrix,
}

impl BalanceProblem {
    pub fn new(pi0: Vec<f64>, a: DenseMatrix) -> Result<Self> {
        if pi0.is_empty() || a.rows() == 0 {
            return Err(Error::Shape("balancing problem needs M >= 1 units and q >= 1 constraints".into()));
        }
        if a.cols() != pi0.len() {
            return Err(Error::Shape(alloc::format!(
                "balancing matrix has {} columns for {} probabilities",
                a.cols(),
                pi0.len()
            )));
        }
        if !a.is_finite() || pi0.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("balancing problem"));
        }
        if let Some(p) = pi0.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidParameter(alloc::format!("initial probability {p} outside [0, 1]")));
        }
        Ok(BalanceProblem { pi0, a })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightResult {
    pub itilde: Vec<f64>,
    /// Indices whose final value is strictly between 0 and 1.
    pub fractional_set: Vec<usize>,
    pub steps_taken: usize,
}

/// One row of an optional flight trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub fixed: usize,
    /// `max_i |(A (π(t) − π0))_i|`.
    pub balance_residual: f64,
}

#[inline]
fn is_integral(x: f64) -> bool {
    x == 0.0 || x == 1.0
}

/// Replaces entries within `tol` of 0 or 1 by exactly 0 or 1.
pub fn snap_integers(v: &[f64], tol: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    snap_in_place(&mut out, tol);
    out
}

fn snap_in_place(v: &mut [f64], tol: f64) {
    for x in v.iter_mut() {
        if x.abs() <= tol {
            *x = 0.0;
        } else if (*x - 1.0).abs() <= tol {
            *x = 1.0;
        }
    }
}

pub fn flight_phase<R: Rng + ?Sized>(problem: &BalanceProblem, rng: &mut R) -> Result<FlightResult> {
    run(problem, rng, None)
}

/// Flight phase that also records `(step, fixed count, balance residual)` after
/// every step (the residual costs `O(qM)` per step).
pub fn flight_phase_traced<R: Rng + ?Sized>(
    problem: &BalanceProblem,
    rng: &mut R,
    trace: &mut Vec<TraceRow>,
) -> Result<FlightResult> {
    run(problem, rng, Some(trace))
}

fn run<R: Rng + ?Sized>(
    problem: &BalanceProblem,
    rng: &mut R,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<FlightResult> {
    let a = &problem.a;
    let m = problem.pi0.len();
    let q = a.rows();
    let mut pi = problem.pi0.clone();
    snap_in_place(&mut pi, INTEGER_TOL);
    let start = pi.clone();

    // the direction always lives on a prefix of `free`, so only the front changes
    let mut free: VecDeque<usize> = (0..m).filter(|&k| !is_integral(pi[k])).collect();
    // nonzero rows of every column, computed once
    let col_rows: Vec<Vec<usize>> = (0..m).map(|k| (0..q).filter(|&r| a.get(r, k) != 0.0).collect()).collect();
    let mut touched = vec![false; q];
    let mut touched_rows: Vec<usize> = Vec::with_capacity(q);
    let mut block: Vec<f64> = Vec::new();
    let mut subset: Vec<usize> = Vec::with_capacity(q + 1);
    let mut steps = 0;

    let record = |pi: &[f64], step: usize, trace: &mut Option<&mut Vec<TraceRow>>| {
        if let Some(t) = trace.as_deref_mut() {
            let delta: Vec<f64> = pi.iter().zip(&start).map(|(x, s)| x - s).collect();
            let residual = a.mul_vec(&delta).iter().fold(0.0_f64, |acc, r| acc.max(r.abs()));
            let fixed = pi.iter().filter(|&&x| is_integral(x)).count();
            t.push(TraceRow { step, fixed, balance_residual: residual });
        }
    };
    record(&pi, 0, &mut trace);

    while !free.is_empty() {
        if steps > m {
            return Err(Error::FlightStalled { limit: m });
        }

        // smallest prefix of free columns with more columns than nonzero rows
        subset.clear();
        touched_rows.iter().for_each(|&r| touched[r] = false);
        touched_rows.clear();
        for &k in &free {
            subset.push(k);
            for &r in &col_rows[k] {
                if !touched[r] {
                    touched[r] = true;
                    touched_rows.push(r);
                }
            }
            if subset.len() > touched_rows.len() {
                break;
            }
        }
        touched_rows.sort_unstable();
        block.clear();
        for &r in &touched_rows {
            block.extend(subset.iter().map(|&k| a.get(r, k)));
        }

        let basis = nullspace_block(&mut block, touched_rows.len(), subset.len());
        let Some(mut v) = basis.into_iter().next() else {
            // only reachable when the subset is the whole free set
            break;
        };
        let vmax = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        v.iter_mut().for_each(|x| *x /= vmax);

        let mut lambda1 = f64::INFINITY;
        let mut lambda2 = f64::INFINITY;
        for (&k, &vk) in subset.iter().zip(&v) {
            let pk = pi[k];
            if vk > DIRECTION_TOL {
                lambda1 = lambda1.min((1.0 - pk) / vk);
                lambda2 = lambda2.min(pk / vk);
            } else if vk < -DIRECTION_TOL {
                lambda1 = lambda1.min(pk / -vk);
                lambda2 = lambda2.min((1.0 - pk) / -vk);
            }
        }
        if !(lambda1.is_finite() && lambda2.is_finite() && lambda1 > 0.0 && lambda2 > 0.0) {
            return Err(Error::DegenerateDirection { step: steps });
        }

        let step = if rng.random::<f64>() * (lambda1 + lambda2) < lambda2 { lambda1 } else { -lambda2 };
        for (&k, &vk) in subset.iter().zip(&v) {
            pi[k] = (pi[k] + step * vk).clamp(0.0, 1.0);
        }
        snap_in_place_subset(&mut pi, &subset);
        steps += 1;

        free.drain(..subset.len());
        let mut fixed_any = false;
        for &k in subset.iter().rev() {
            if is_integral(pi[k]) {
                fixed_any = true;
            } else {
                free.push_front(k);
            }
        }
        if !fixed_any {
            return Err(Error::DegenerateDirection { step: steps });
        }
        record(&pi, steps, &mut trace);
    }

    let fractional_set = (0..m).filter(|&k| !is_integral(pi[k])).collect();
    Ok(FlightResult { itilde: pi, fractional_set, steps_taken: steps })
}

fn snap_in_place_subset(pi: &mut [f64], subset: &[usize]) {
    for &k in subset {
        let x = pi[k];
        if x.abs() <= INTEGER_TOL {
            pi[k] = 0.0;
        } else if (x - 1.0).abs() <= INTEGER_TOL {
            pi[k] = 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use proptest::prelude::*;

    fn problem(pi0: &[f64], rows: usize, a: &[f64]) -> BalanceProblem {
        BalanceProblem::new(pi0.to_vec(), DenseMatrix::from_rows(rows, pi0.len(), a.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn snap_examples() {
        assert_eq!(snap_integers(&[1e-12, 0.5, 1.0 - 1e-12], 1e-9), vec![0.0, 0.5, 1.0]);
        assert_eq!(snap_integers(&[0.3], 1e-9), vec![0.3]);
        assert_eq!(snap_integers(&[0.5 + 1e-10], 1e-9), vec![0.5 + 1e-10]);
    }

    #[test]
    fn integral_start_is_untouched() {
        let p = problem(&[0.0, 1.0, 1.0, 0.0], 1, &[3.0, -1.0, 2.0, 7.0]);
        let out = flight_phase(&p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.itilde, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(out.steps_taken, 0);
        assert!(out.fractional_set.is_empty());
    }

    #[test]
    fn two_point_walk() {
        let p = problem(&[0.5, 0.5], 1, &[1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let reps = 20_000;
        let mut first = 0usize;
        for _ in 0..reps {
            let out = flight_phase(&p, &mut rng).unwrap();
            assert!(out.itilde == vec![1.0, 0.0] || out.itilde == vec![0.0, 1.0], "{:?}", out.itilde);
            first += (out.itilde[0] == 1.0) as usize;
        }
        let sigma = (reps as f64 * 0.25).sqrt();
        assert!((first as f64 - reps as f64 * 0.5).abs() <= 4.0 * sigma);
    }

    #[test]
    fn fixed_size_one() {
        let p = problem(&[0.25; 4], 1, &[1.0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reps = 20_000;
        let mut counts = [0usize; 4];
        for _ in 0..reps {
            let out = flight_phase(&p, &mut rng).unwrap();
            let ones: Vec<usize> = (0..4).filter(|&k| out.itilde[k] == 1.0).collect();
            assert_eq!(ones.len(), 1);
            assert!(out.itilde.iter().all(|&x| x == 0.0 || x == 1.0));
            counts[ones[0]] += 1;
        }
        let sigma = (reps as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - reps as f64 * 0.25).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn trace_records_constant_balance() {
        let pi0 = [0.3, 0.6, 0.2, 0.9, 0.5, 0.5];
        let a = [1.0, 2.0, 0.5, 1.5, 3.0, 0.7, 0.2, 1.0, 1.0, 0.0, 4.0, 1.0];
        let p = problem(&pi0, 2, &a);
        let mut trace = Vec::new();
        let out = flight_phase_traced(&p, &mut ChaCha8Rng::seed_from_u64(3), &mut trace).unwrap();
        assert_eq!(trace.len(), out.steps_taken + 1);
        let scale = p.a.norm_inf();
        for row in &trace {
            assert!(row.balance_residual <= 1e-8 * scale * (row.step.max(1) as f64));
        }
        assert!(trace.windows(2).all(|w| w[1].fixed > w[0].fixed));
    }

    #[test]
    fn rejects_bad_input() {
        let a = DenseMatrix::from_rows(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(BalanceProblem::new(vec![0.5, 1.5], a.clone()).is_err());
        assert!(BalanceProblem::new(vec![0.5, f64::NAN], a.clone()).is_err());
        assert!(BalanceProblem::new(vec![0.5], a).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, usize, Vec<f64>, u64)> {
        (1usize..=8, 1usize..=3).prop_flat_map(|(m, q)| {
            (
                proptest::collection::vec(prop_oneof![3 => 0.02f64..0.98, 1 => Just(0.0), 1 => Just(1.0)], m),
                Just(q),
                proptest::collection::vec(-5.0f64..5.0, q * m),
                any::<u64>(),
            )
        })
    }

    proptest! {
        #[test]
        fn balance_termination_and_fractional_bound((pi0, q, a, seed) in instance()) {
            let p = problem(&pi0, q, &a);
            let out = flight_phase(&p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let m = pi0.len();
            prop_assert!(out.steps_taken <= m);
            prop_assert!(out.fractional_set.len() <= q);
            let delta: Vec<f64> = out.itilde.iter().zip(&pi0).map(|(x, p)| x - p).collect();
            let tol = 1e-8 * p.a.norm_inf().max(1.0) * (out.steps_taken.max(1) as f64);
            for r in p.a.mul_vec(&delta) {
                prop_assert!(r.abs() <= tol);
            }
            for k in 0..m {
                prop_assert!((0.0..=1.0).contains(&out.itilde[k]));
                if pi0[k] == 0.0 || pi0[k] == 1.0 {
                    prop_assert_eq!(out.itilde[k], pi0[k]);
                }
            }
        }
    }

    #[test]
    fn martingale_on_small_instances() {
        let cases: [(&[f64], usize, &[f64]); 2] = [
            (&[0.3, 0.6, 0.2, 0.9, 0.5, 0.5], 2, &[1.0, 2.0, 0.5, 1.5, 3.0, 0.7, 0.2, 1.0, 1.0, 0.0, 4.0, 1.0]),
            (
                &[0.1, 0.45, 0.7, 0.33, 0.8, 0.25, 0.5, 0.6],
                3,
                &[
                    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, //
                    0.5, -1.0, 2.0, 0.0, 3.0, 1.0, -2.0, 0.5, //
                    1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0,
                ],
            ),
        ];
        for (ci, (pi0, q, a)) in cases.into_iter().enumerate() {
            let p = problem(pi0, q, a);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + ci as u64);
            let reps = 20_000;
            let m = pi0.len();
            let mut sum = vec![0.0; m];
            for _ in 0..reps {
                let out = flight_phase(&p, &mut rng).unwrap();
                for k in 0..m {
                    sum[k] += out.itilde[k];
                }
            }
            for k in 0..m {
                let mean = sum[k] / reps as f64;
                // Var(Ĩ_k) ≤ π(1 − π) since Ĩ_k ∈ [0, 1] with mean π
                let sigma = (pi0[k] * (1.0 - pi0[k]) / reps as f64).sqrt();
                assert!((mean - pi0[k]).abs() <= 4.0 * sigma, "case {ci} unit {k}: {mean} vs {}", pi0[k]);
            }
        }
    }
}
