//! Dense symmetric storage and the masked kernels behind the inverse-Hessian
//! update.
//!
//! A masked Hessian keeps only the `ell` selected rows of a `d x d` Hessian
//! estimate. The update of the inverse estimate then needs one `ell x d` by
//! `d x d` product (`O(ell d^2)`), an `ell x ell` block (`O(ell^2 d)`) and a
//! scatter that writes `2 ell d - ell^2` entries of the stored matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Instrumentation counters, incremented by the kernels as they run.
///
/// Multiplies are counted per fused multiply-add in the inner loops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub hessian_mults: u64,
    pub norm_mults: u64,
    pub update_mults: u64,
    pub theta_mults: u64,
    pub a_writes: u64,
}

impl OpCounts {
    pub fn total_mults(&self) -> u64 {
        self.hessian_mults + self.norm_mults + self.update_mults + self.theta_mults
    }

    pub fn add(&mut self, other: &OpCounts) {
        self.hessian_mults += other.hessian_mults;
        self.norm_mults += other.norm_mults;
        self.update_mults += other.update_mults;
        self.theta_mults += other.theta_mults;
        self.a_writes += other.a_writes;
    }
}

/// Dense `d x d` symmetric matrix, stored in full row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    d: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(d: usize) -> Self {
        SymMatrix {
            d,
            data: vec![0.0; d * d],
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_diag(&vec![1.0; d])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = Self::zeros(d);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * d + i] = v;
        }
        m
    }

    /// Builds from row-major entries. The input is symmetrized as
    /// `(M + M^T) / 2`; it is rejected if the asymmetry exceeds `1e-8` relative.
    pub fn from_row_major(d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::DimMismatch {
                expected: d * d,
                got: data.len(),
            });
        }
        let mut m = SymMatrix { d, data };
        let scale = 1.0 + m.frob_norm();
        if m.asymmetry() > 1e-8 * scale {
            return Err(Error::Config(format!(
                "matrix is not symmetric (asymmetry {:e})",
                m.asymmetry()
            )));
        }
        m.symmetrize();
        Ok(m)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let d = m.nrows();
        if m.ncols() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: m.ncols(),
            });
        }
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = m[(i, j)];
            }
        }
        Self::from_row_major(d, data)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.d + j] = v;
        self.data[j * self.d + i] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||M - M^T||_F`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.d;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                let diff = self.data[i * d + j] - self.data[j * d + i];
                s += diff * diff;
            }
        }
        s.sqrt()
    }

    fn symmetrize(&mut self) {
        let d = self.d;
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = v;
                self.data[j * d + i] = v;
            }
        }
    }

    /// `out = self * v`, `d^2` multiplies.
    pub fn mat_vec(&self, v: &[f64], out: &mut [f64], ops: &mut OpCounts) {
        let d = self.d;
        assert_eq!(v.len(), d);
        assert_eq!(out.len(), d);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
        ops.theta_mults += (d * d) as u64;
    }

    /// `self = (1 - w) * self + w * other`, a dense pass over all entries.
    pub fn convex_combine(&mut self, other: &SymMatrix, w: f64) {
        assert_eq!(self.d, other.d);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = (1.0 - w) * *a + w * *b;
        }
    }

    /// Inverse of an SPD matrix through a Cholesky factorization.
    pub fn inverse_spd(&self) -> Result<SymMatrix> {
        let chol = self.to_dmatrix().cholesky().ok_or_else(|| {
            let min_eig = min_eigenvalue(self);
            Error::NotPositiveDefinite { min_eig }
        })?;
        let inv = chol.inverse();
        let mut out = SymMatrix::zeros(self.d);
        for i in 0..self.d {
            for j in i..self.d {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                out.set_sym(i, j, v);
            }
        }
        Ok(out)
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.d {
            self.data[i * self.d + i] += v;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `ell` selected rows of a Hessian estimate, representing `M * H`
/// without storing the zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedHessian {
    d: usize,
    indices: Vec<usize>,
    rows: Vec<f64>,
}

impl MaskedHessian {
    /// `indices` must be strictly increasing in `[0, d)`, with `1 <= len <= d`;
    /// `rows` is `len x d` row-major.
    pub fn new(d: usize, indices: Vec<usize>, rows: Vec<f64>) -> Result<Self> {
        validate_indices(d, &indices)?;
        if rows.len() != indices.len() * d {
            return Err(Error::DimMismatch {
                expected: indices.len() * d,
                got: rows.len(),
            });
        }
        Ok(MaskedHessian { d, indices, rows })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn ell(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.d..(k + 1) * self.d]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [f64] {
        &mut self.rows
    }

    /// Embeds as a dense `d x d` matrix with zero rows outside the mask.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d, self.d);
        for (k, &i) in self.indices.iter().enumerate() {
            for j in 0..self.d {
                m[(i, j)] = self.row(k)[j];
            }
        }
        m
    }
}

pub fn validate_indices(d: usize, indices: &[usize]) -> Result<()> {
    if indices.is_empty() || indices.len() > d {
        return Err(Error::InvalidMask(format!(
            "mask size {} outside [1, {d}]",
            indices.len()
        )));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidMask(
            "indices must be strictly increasing".into(),
        ));
    }
    if *indices.last().unwrap() >= d {
        return Err(Error::InvalidMask(format!("index out of range for d = {d}")));
    }
    Ok(())
}

/// Draws uniformly random `ell`-subsets of `{0, .., d-1}` by partial
/// Fisher-Yates over a persistent permutation.
#[derive(Debug, Clone)]
pub struct MaskSampler {
    d: usize,
    ell: usize,
    perm: Vec<usize>,
    rng: Rng,
}

impl MaskSampler {
    pub fn new(d: usize, ell: usize, rng: Rng) -> Result<Self> {
        if ell == 0 || ell > d {
            return Err(Error::InvalidMask(format!(
                "mask size {ell} outside [1, {d}]"
            )));
        }
        Ok(MaskSampler {
            d,
            ell,
            perm: (0..d).collect(),
            rng,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    /// Sorted index set of size `ell`.
    pub fn sample(&mut self) -> Vec<usize> {
        if self.ell == self.d {
            return (0..self.d).collect();
        }
        for i in 0..self.ell {
            let j = self.rng.random_range(i..self.d);
            self.perm.swap(i, j);
        }
        let mut out = self.perm[..self.ell].to_vec();
        out.sort_unstable();
        out
    }
}

/// How `||M H||_op` is evaluated for the truncation gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpNormMode {
    #[default]
    Exact,
    /// Frobenius norm of the stored rows, an upper bound of the operator norm.
    FrobeniusBound,
}

const DIRECT_EIG_MAX: usize = 64;

/// Operator norm of a masked Hessian: `sqrt(lambda_max(R R^T))` with `R` the
/// stored `ell x d` block.
pub fn masked_op_norm(h: &MaskedHessian) -> f64 {
    masked_op_norm_with(h, OpNormMode::Exact, &mut OpCounts::default())
}

pub fn masked_op_norm_with(h: &MaskedHessian, mode: OpNormMode, ops: &mut OpCounts) -> f64 {
    let ell = h.ell();
    let d = h.d;
    if mode == OpNormMode::FrobeniusBound {
        ops.norm_mults += (ell * d) as u64;
        return norm_sq(&h.rows).sqrt();
    }
    let mut gram = DMatrix::<f64>::zeros(ell, ell);
    for a in 0..ell {
        for b in a..ell {
            let v = dot(h.row(a), h.row(b));
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    ops.norm_mults += (ell * (ell + 1) / 2 * d) as u64;
    let lmax = if ell <= DIRECT_EIG_MAX {
        let eig = SymmetricEigen::new(gram);
        eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max)
    } else {
        power_iteration_max(&gram, 1e-10, 10 * ell)
    };
    lmax.max(0.0).sqrt()
}

fn power_iteration_max(g: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = g.nrows();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = g * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Nonzero rows of `M H A`: row `k` is `(row k of the mask block) * A`.
pub fn masked_product(h: &MaskedHessian, a: &SymMatrix) -> Result<Vec<f64>> {
    masked_product_with(h, a, &mut OpCounts::default())
}

pub fn masked_product_with(
    h: &MaskedHessian,
    a: &SymMatrix,
    ops: &mut OpCounts,
) -> Result<Vec<f64>> {
    let d = h.d;
    if a.dim() != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: a.dim(),
        });
    }
    let ell = h.ell();
    let mut out = vec![0.0; ell * d];
    for k in 0..ell {
        let r = h.row(k);
        let dst = &mut out[k * d..(k + 1) * d];
        for (m, &rm) in r.iter().enumerate() {
            axpy(rm, a.row(m), dst);
        }
    }
    ops.update_mults += (ell * d * d) as u64;
    Ok(out)
}

/// Symmetric `ell x ell` block `B R^T` where `B = R A`; only the upper
/// triangle is computed and mirrored.
pub fn masked_block(h: &MaskedHessian, b: &[f64], ops: &mut OpCounts) -> Vec<f64> {
    let ell = h.ell();
    let d = h.d;
    let mut c = vec![0.0; ell * ell];
    for p in 0..ell {
        for q in p..ell {
            let v = dot(&b[p * d..(p + 1) * d], h.row(q));
            c[p * ell + q] = v;
            c[q * ell + p] = v;
        }
    }
    ops.update_mults += (ell * (ell + 1) / 2 * d) as u64;
    c
}

/// Applies
/// `a += row_scale * (scatter B into rows I) + row_scale * (scatter B^T into
/// columns I) + block_scale * (C on I x I) + diag_add on diag(I)`.
///
/// Each touched entry is written exactly once; returns the number of writes,
/// `2 ell d - ell^2`.
#[allow(clippy::too_many_arguments)]
pub fn scatter_symmetric_update(
    a: &mut SymMatrix,
    indices: &[usize],
    b: &[f64],
    c: &[f64],
    diag_add: f64,
    row_scale: f64,
    block_scale: f64,
) -> Result<u64> {
    let d = a.d;
    validate_indices(d, indices)?;
    let ell = indices.len();
    if b.len() != ell * d {
        return Err(Error::DimMismatch {
            expected: ell * d,
            got: b.len(),
        });
    }
    if c.len() != ell * ell {
        return Err(Error::DimMismatch {
            expected: ell * ell,
            got: c.len(),
        });
    }
    let mut writes = 0u64;

    // Rows I, including the I x I block.
    for (p, &i) in indices.iter().enumerate() {
        let brow = &b[p * d..(p + 1) * d];
        let arow = &mut a.data[i * d..(i + 1) * d];
        let mut next = 0usize;
        for j in 0..d {
            let mut delta = row_scale * brow[j];
            if next < ell && indices[next] == j {
                let q = next;
                // column contribution of row q of B at column i
                delta += row_scale * b[q * d + i];
                delta += block_scale * c[p * ell + q];
                if q == p {
                    delta += diag_add;
                }
                next += 1;
            }
            arow[j] += delta;
            writes += 1;
        }
    }

    // Columns I outside the I x I block.
    let mut next = 0usize;
    for j in 0..d {
        if next < ell && indices[next] == j {
            next += 1;
            continue;
        }
        let arow = &mut a.data[j * d..(j + 1) * d];
        for (p, &i) in indices.iter().enumerate() {
            arow[i] += row_scale * b[p * d + j];
            writes += 1;
        }
    }
    Ok(writes)
}

/// `||a - b||_F`.
pub fn frob_dist(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.d != b.d {
        return Err(Error::DimMismatch {
            expected: a.d,
            got: b.d,
        });
    }
    Ok(a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

pub fn eigenvalues(a: &SymMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(a.to_dmatrix());
    let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    v
}

pub fn min_eigenvalue(a: &SymMatrix) -> f64 {
    eigenvalues(a).first().cloned().unwrap_or(f64::NAN)
}

pub fn max_eigenvalue(a: &SymMatrix) -> f64 {
    eigenvalues(a).last().cloned().unwrap_or(f64::NAN)
}
