//! Small dense linear algebra.
//!
//! Only what the regularized fit and the flight phase need: symmetric
//! eigendecomposition by cyclic Jacobi rotations, null-space bases restricted to a
//! subset of columns, and the spectral norm. Matrices here have a handful of rows
//! and columns, so nothing is blocked or vectorized.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const PIVOT_TOL: f64 = 1e-10;

/// A real symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from row-major entries.
    ///
    /// Entries must be finite and symmetric within `1e-12` relative to the largest
    /// entry; the stored matrix is the exact average of `m` and its transpose.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("matrix dimension must be positive".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::Shape(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        let scale = data.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())).max(1.0);
        let mut m = SymMatrix { dim, data };
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (m.get(i, j), m.get(j, i));
                let gap = (a - b).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
                let avg = 0.5 * (a + b);
                m.data[i * dim + j] = avg;
                m.data[j * dim + i] = avg;
            }
        }
        Ok(m)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = Self::zeros(dim);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * dim + i] = d;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Adds `weight * x xᵀ` in place.
    pub fn add_outer(&mut self, x: &[f64], weight: f64) {
        debug_assert_eq!(x.len(), self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.data[i * self.dim + j] += weight * x[i] * x[j];
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| {
                self.data[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }
}

/// Eigenvalues sorted in decreasing order with matching orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// Column-major: eigenvector `j` occupies `vectors[j * dim..(j + 1) * dim]`.
    vectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        let dim = self.dim();
        &self.vectors[j * dim..(j + 1) * dim]
    }

    /// `Σ_j f(η_j) u_j u_jᵀ`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let dim = self.dim();
        let mut out = SymMatrix::zeros(dim);
        for (j, &eta) in self.values.iter().enumerate() {
            out.add_outer(self.vector(j), f(eta));
        }
        out
    }

    /// `Σ_j f(η_j) u_j (u_jᵀ x)`, without forming the matrix.
    pub fn apply(&self, f: impl Fn(f64) -> f64, x: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut out = vec![0.0; dim];
        for (j, &eta) in self.values.iter().enumerate() {
            let u = self.vector(j);
            let coef = f(eta) * u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            out.iter_mut().zip(u).for_each(|(o, ui)| *o += coef * ui);
        }
        out
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.spectral_map(|eta| eta)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps stop once the off-diagonal Frobenius norm falls below `1e-12` times the
/// diagonal norm.
pub fn eig_sym(m: &SymMatrix) -> Result<EigenDecomposition> {
    let n = m.dim();
    let mut a = m.data.clone();
    // row-major working copy of V; column j is eigenvector j
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        libm::sqrt(s)
    };
    let diag_norm = |a: &[f64]| -> f64 { libm::sqrt((0..n).map(|i| a[i * n + i] * a[i * n + i]).sum()) };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_norm(&a);
        if off <= JACOBI_TOL * diag_norm(&a) || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_norm(&a) > JACOBI_TOL * diag_norm(&a) {
        return Err(Error::InvalidParameter(format!(
            "Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &j in &order {
        vectors.extend((0..n).map(|k| v[k * n + j]));
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Largest absolute eigenvalue.
pub fn spectral_norm(m: &SymMatrix) -> Result<f64> {
    let eig = eig_sym(m)?;
    Ok(eig.values.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())))
}

/// A general dense matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Basis of `{v : A v = 0, v_k = 0 for k ∉ cols}`.
///
/// Gauss–Jordan elimination with partial pivoting on the columns of `a` listed in
/// `cols` (in that order). Rows that vanish on `cols` are skipped. A pivot is
/// accepted when its magnitude exceeds `1e-10` times the largest restricted entry.
/// Each basis vector has length `a.cols()` and is zero outside `cols`.
pub fn kernel_basis(a: &DenseMatrix, cols: &[usize]) -> Result<Vec<Vec<f64>>> {
    let local = kernel_basis_local(a, cols)?;
    Ok(local
        .into_iter()
        .map(|u| {
            let mut v = vec![0.0; a.cols()];
            cols.iter().zip(u).for_each(|(&c, x)| v[c] = x);
            v
        })
        .collect())
}

/// [`kernel_basis`] with each vector given on `cols` only (entry `i` belongs to
/// column `cols[i]`).
pub fn kernel_basis_local(a: &DenseMatrix, cols: &[usize]) -> Result<Vec<Vec<f64>>> {
    if cols.is_empty() {
        return Err(Error::Shape("kernel_basis needs at least one column".into()));
    }
    if let Some(&bad) = cols.iter().find(|&&c| c >= a.cols()) {
        return Err(Error::Shape(format!("column {bad} out of range for {} columns", a.cols())));
    }
    let mut block: Vec<f64> = Vec::new();
    let mut height = 0;
    for r in 0..a.rows() {
        let row = a.row(r);
        if cols.iter().any(|&c| row[c] != 0.0) {
            block.extend(cols.iter().map(|&c| row[c]));
            height += 1;
        }
    }
    Ok(nullspace_block(&mut block, height, cols.len()))
}

/// Kernel basis of a row-major `height × width` block, which is overwritten by
/// its reduced row echelon form. Same pivoting rule as [`kernel_basis`].
pub fn nullspace_block(m: &mut [f64], height: usize, width: usize) -> Vec<Vec<f64>> {
    let scale = m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let tol = PIVOT_TOL * scale;

    let mut pivot_cols = Vec::new();
    let mut rank = 0;
    for c in 0..width {
        if rank == height {
            break;
        }
        let (best, best_abs) = (rank..height)
            .map(|r| (r, m[r * width + c].abs()))
            .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_abs <= tol {
            continue;
        }
        if best != rank {
            for k in 0..width {
                m.swap(best * width + k, rank * width + k);
            }
        }
        let p = m[rank * width + c];
        for k in 0..width {
            m[rank * width + k] /= p;
        }
        for r in 0..height {
            if r == rank {
                continue;
            }
            let f = m[r * width + c];
            if f != 0.0 {
                for k in 0..width {
                    m[r * width + k] -= f * m[rank * width + k];
                }
            }
        }
        pivot_cols.push(c);
        rank += 1;
    }

    let mut is_pivot = vec![false; width];
    pivot_cols.iter().for_each(|&c| is_pivot[c] = true);
    (0..width)
        .filter(|&c| !is_pivot[c])
        .map(|free| {
            let mut v = vec![0.0; width];
            v[free] = 1.0;
            for (r, &pc) in pivot_cols.iter().enumerate() {
                v[pc] = -m[r * width + free];
            }
            v
        })
        .collect()
}
