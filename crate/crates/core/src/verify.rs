//! Dense reference computations, kept independent of the masked kernels.
//!
//! Everything here works on full `d x d` matrices with `O(d^3)` products and
//! is used to check the fast paths: the literal inverse-estimator update, the
//! closed-form gradients of the quadratic functional
//! `J(A) = ||H^{1/2} (A - H^{-1})||_F^2`, finite differences, and a
//! brute-force SPD inverse.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hessian_inverse::InverseEstimator;
use crate::linalg::{MaskSampler, MaskedHessian, SymMatrix};
use crate::rng::{self, Rng};
use crate::schedules::StepSchedule;

/// A masked Hessian embedded densely, with its 0/1 diagonal selector.
#[derive(Debug, Clone)]
pub struct DenseReference {
    pub h_embed: DMatrix<f64>,
    pub m_embed: DMatrix<f64>,
}

impl DenseReference {
    pub fn from_masked(h: &MaskedHessian) -> Self {
        let d = h.dim();
        let mut m = DMatrix::zeros(d, d);
        for &i in h.indices() {
            m[(i, i)] = 1.0;
        }
        DenseReference {
            h_embed: h.to_dense(),
            m_embed: m,
        }
    }
}

/// Literal evaluation of one inverse-estimator step with dense products and
/// an SVD operator norm.
pub fn dense_reference_update(
    a: &DMatrix<f64>,
    h_embed: &DMatrix<f64>,
    m_embed: &DMatrix<f64>,
    gamma: f64,
) -> DMatrix<f64> {
    let op_norm = h_embed.clone().singular_values().max();
    if gamma * op_norm > 0.5 {
        return a.clone();
    }
    let ha = h_embed * a;
    let first = (&ha + a * h_embed.transpose() - m_embed * 2.0) * gamma;
    let second = &ha * h_embed.transpose() * (gamma * gamma);
    a - first + second
}

/// `grad J(A) = 2 (H A - I)`.
pub fn grad_j(h: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = h.nrows();
    (h * a - DMatrix::identity(d, d)) * 2.0
}

/// `grad J_sym(A) = H A + A H - 2 I`.
pub fn grad_j_sym(h: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = h.nrows();
    h * a + a * h - DMatrix::identity(d, d) * 2.0
}

/// Symmetric square root through the eigendecomposition, eigenvalues
/// clamped at zero.
pub fn sqrt_spd(h: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// The functional `J`, evaluated from precomputed `H^{1/2}` and `H^{-1}`.
#[derive(Debug, Clone)]
pub struct QuadraticFunctional {
    sqrt_h: DMatrix<f64>,
    h_inv: DMatrix<f64>,
}

impl QuadraticFunctional {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        let sym = SymMatrix::from_dmatrix(h)?;
        Ok(QuadraticFunctional {
            sqrt_h: sqrt_spd(h),
            h_inv: brute_inverse(&sym)?.to_dmatrix(),
        })
    }

    pub fn value(&self, a: &DMatrix<f64>) -> f64 {
        (&self.sqrt_h * (a - &self.h_inv)).norm_squared()
    }

    /// `J_sym(A) = (J(A) + J(A^T)) / 2`.
    pub fn value_sym(&self, a: &DMatrix<f64>) -> f64 {
        0.5 * (self.value(a) + self.value(&a.transpose()))
    }
}

/// Central finite-difference gradient of a matrix functional, step
/// `1e-5 * (1 + |a_ij|)` per entry.
pub fn fd_matrix_gradient<F>(f: F, a: &DMatrix<f64>) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> f64,
{
    let (r, c) = a.shape();
    let mut g = DMatrix::zeros(r, c);
    let mut probe = a.clone();
    for i in 0..r {
        for j in 0..c {
            let h = 1e-5 * (1.0 + a[(i, j)].abs());
            probe[(i, j)] = a[(i, j)] + h;
            let up = f(&probe);
            probe[(i, j)] = a[(i, j)] - h;
            let down = f(&probe);
            probe[(i, j)] = a[(i, j)];
            g[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    g
}

/// Largest entrywise violation of `|x - y| <= rel * |y| + abs`, as a ratio
/// (`<= 1` means within tolerance).
pub fn max_tolerance_ratio(x: &DMatrix<f64>, y: &DMatrix<f64>, rel: f64, abs: f64) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b).abs() / (rel * b.abs() + abs))
        .fold(0.0, f64::max)
}

/// SPD inverse through the symmetric eigendecomposition `V diag(1/l) V^T`.
///
/// Rejects inputs whose smallest eigenvalue is not above `1e-12` times the
/// largest, and checks the residual `||M M^{-1} - I||_F <= 1e-8 d`.
pub fn brute_inverse(m: &SymMatrix) -> Result<SymMatrix> {
    let d = m.dim();
    let dense = m.to_dmatrix();
    let eig = SymmetricEigen::new(dense.clone());
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_eig > 1e-12 * max_eig) || !(max_eig > 0.0) {
        return Err(Error::Singular { min_eig, max_eig });
    }
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / l);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();
    let residual = (&dense * &inv - DMatrix::identity(d, d)).norm();
    if residual > 1e-8 * d as f64 {
        return Err(Error::Singular { min_eig, max_eig });
    }
    let sym = (&inv + inv.transpose()) * 0.5;
    SymMatrix::from_dmatrix(&sym)
}

/// Rows `idx` of `x x^T`, row-major.
pub fn rank_one_rows(x: &[f64], idx: &[usize]) -> Vec<f64> {
    let mut rows = Vec::with_capacity(idx.len() * x.len());
    for &i in idx {
        rows.extend(x.iter().map(|&xj| x[i] * xj));
    }
    rows
}

pub fn random_spd(rng: &mut Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    g.transpose() * &g / d as f64 + DMatrix::identity(d, d) * 0.2
}

pub fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Outcome of one verification property.
#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn report(name: &'static str, passed: bool, detail: String) -> PropertyReport {
    PropertyReport {
        name,
        passed,
        detail,
    }
}

/// Masked update vs. the dense literal update on random instances
/// `d in 2..=12`, `ell in 1..=d`, covering both branches of the gate.
/// Returns the worst relative Frobenius error and the truncation count.
pub fn check_oracle_equivalence(seed: u64, instances: usize) -> (f64, usize, usize) {
    let mut rng = rng::from_seed(seed);
    let mut worst = 0.0f64;
    let mut truncated = 0;
    for t in 0..instances {
        let d = rng.random_range(2..=12);
        let ell = rng.random_range(1..=d);
        let a0 = random_spd(&mut rng, d);
        let idx = MaskSampler::new(d, ell, rng::from_seed(rng.random()))
            .unwrap()
            .sample();
        let scale = if t % 2 == 0 { 0.2 } else { 3.0 };
        let rows = (0..ell * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let h = MaskedHessian::new(d, idx, rows).unwrap();
        let gamma = rng.random_range(0.01..0.5);
        let schedule = StepSchedule::new(1.0, 1.0, 1.0 / gamma - 1.0).unwrap();
        let gamma = schedule.value(1);
        let mut est = InverseEstimator::new(
            d,
            schedule,
            ell,
            rng::from_seed(0),
            None,
            Some(SymMatrix::from_dmatrix(&a0).unwrap()),
        )
        .unwrap();
        est.update(&h).unwrap();
        let r = DenseReference::from_masked(&h);
        let expected = dense_reference_update(&a0, &r.h_embed, &r.m_embed, gamma);
        if expected == a0 {
            truncated += 1;
        }
        let err = (est.estimate().to_dmatrix() - &expected).norm() / expected.norm();
        worst = worst.max(err);
    }
    (worst, truncated, instances - truncated)
}

/// Worst finite-difference mismatch ratio for `grad J` and `grad J_sym`.
pub fn check_gradient_formulas(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = rng.random_range(1..=6);
        let h = random_spd(&mut rng, d);
        let a = random_matrix(&mut rng, d, d);
        let j = QuadraticFunctional::new(&h)?;
        let fd = fd_matrix_gradient(|m| j.value(m), &a);
        let fd_sym = fd_matrix_gradient(|m| j.value_sym(m), &a);
        worst = worst.max(max_tolerance_ratio(&fd, &grad_j(&h, &a), 1e-6, 1e-8));
        worst = worst.max(max_tolerance_ratio(&fd_sym, &grad_j_sym(&h, &a), 1e-6, 1e-8));
    }
    Ok(worst)
}

/// Gradient of `A -> J(A^T)` by finite differences vs. `(grad J(A^T))^T`.
pub fn check_transpose_rule(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = rng.random_range(1..=5);
        let h = random_spd(&mut rng, d);
        let a = random_matrix(&mut rng, d, d);
        let j = QuadraticFunctional::new(&h)?;
        let fd = fd_matrix_gradient(|m| j.value(&m.transpose()), &a);
        let closed = grad_j(&h, &a.transpose()).transpose();
        worst = worst.max(max_tolerance_ratio(&fd, &closed, 1e-6, 1e-8));
    }
    Ok(worst)
}

/// `<N, A M>_F = <A^T N, M>_F`; returns the worst relative gap.
pub fn check_adjoint_identity(seed: u64, instances: usize) -> f64 {
    let mut rng = rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = rng.random_range(1..=8);
        let a = random_matrix(&mut rng, d, d);
        let m = random_matrix(&mut rng, d, d);
        let n = random_matrix(&mut rng, d, d);
        let lhs = n.dot(&(&a * &m));
        let rhs = (a.transpose() * &n).dot(&m);
        let scale = n.norm() * a.norm() * m.norm();
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    worst
}

/// Curvature of `J` along random directions, normalized into
/// `[2 lambda_min(H), 2 lambda_max(H)]`; returns the worst excursion outside
/// the interval relative to `lambda_max`.
pub fn check_curvature_bounds(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = rng.random_range(1..=6);
        let h = random_spd(&mut rng, d);
        let eig = SymmetricEigen::new(h.clone());
        let lmin = eig.eigenvalues.min();
        let lmax = eig.eigenvalues.max();
        let j = QuadraticFunctional::new(&h)?;
        let a = random_matrix(&mut rng, d, d);
        let e = random_matrix(&mut rng, d, d);
        // J is quadratic: J(A+E) + J(A-E) - 2 J(A) = 2 <E, H E>
        let second = j.value(&(&a + &e)) + j.value(&(&a - &e)) - 2.0 * j.value(&a);
        let q = second / e.norm_squared();
        let below = (2.0 * lmin - q).max(0.0);
        let above = (q - 2.0 * lmax).max(0.0);
        worst = worst.max((below + above) / lmax);
    }
    Ok(worst)
}

/// PD preservation over `updates` random masked steps at dimension `d`,
/// starting from the identity. Returns the smallest final eigenvalue.
pub fn check_positive_definiteness(seed: u64, d: usize, updates: usize) -> f64 {
    let mut rng = rng::from_seed(seed);
    let ell = rng.random_range(1..=d);
    let mut est = InverseEstimator::new(
        d,
        StepSchedule::new(0.75, 1.0, 0.0).unwrap(),
        ell,
        rng::from_seed(rng.random()),
        None,
        None,
    )
    .unwrap();
    for _ in 0..updates {
        let idx = est.sample_mask();
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let rows = rank_one_rows(&x, &idx);
        est.update(&MaskedHessian::new(d, idx, rows).unwrap()).unwrap();
    }
    crate::linalg::min_eigenvalue(est.estimate())
}

/// Largest deviation of the empirical mask mean from `ell / d`, in units of
/// the binomial standard error.
pub fn check_mask_unbiasedness(seed: u64, d: usize, ell: usize, draws: usize) -> f64 {
    let mut sampler = MaskSampler::new(d, ell, rng::from_seed(seed)).unwrap();
    let mut counts = vec![0usize; d];
    for _ in 0..draws {
        for i in sampler.sample() {
            counts[i] += 1;
        }
    }
    let p = ell as f64 / d as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    counts
        .iter()
        .map(|&c| {
            let mean = c as f64 / draws as f64;
            if se == 0.0 {
                if mean == p {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (mean - p).abs() / se
            }
        })
        .fold(0.0, f64::max)
}

/// Runs every property at a quick size; used by `bench verify`.
pub fn suite(seed: u64) -> Vec<PropertyReport> {
    let mut out = Vec::new();

    let (worst, trunc, applied) = check_oracle_equivalence(seed, 500);
    out.push(report(
        "masked update equals dense reference",
        worst <= 1e-12 && trunc > 0 && applied > 0,
        format!("worst rel err {worst:.3e} ({applied} applied, {trunc} truncated)"),
    ));

    let min_eig = (0..10)
        .map(|s| check_positive_definiteness(seed ^ s, 20, 1000))
        .fold(f64::INFINITY, f64::min);
    out.push(report(
        "estimator stays positive definite",
        min_eig > 1e-14,
        format!("smallest eigenvalue {min_eig:.3e}"),
    ));

    match check_gradient_formulas(seed, 50) {
        Ok(r) => out.push(report(
            "grad J and grad J_sym match finite differences",
            r <= 1.0,
            format!("worst tolerance ratio {r:.3}"),
        )),
        Err(e) => out.push(report("grad J and grad J_sym match finite differences", false, e.to_string())),
    }

    match check_transpose_rule(seed, 30) {
        Ok(r) => out.push(report(
            "gradient of composition with transpose",
            r <= 1.0,
            format!("worst tolerance ratio {r:.3}"),
        )),
        Err(e) => out.push(report("gradient of composition with transpose", false, e.to_string())),
    }

    let gap = check_adjoint_identity(seed, 100);
    out.push(report(
        "adjoint of left multiplication",
        gap <= 1e-12,
        format!("worst rel gap {gap:.3e}"),
    ));

    match check_curvature_bounds(seed, 100) {
        Ok(r) => out.push(report(
            "curvature of J within [2 lmin, 2 lmax]",
            r <= 1e-8,
            format!("worst excursion {r:.3e}"),
        )),
        Err(e) => out.push(report("curvature of J within [2 lmin, 2 lmax]", false, e.to_string())),
    }

    for (d, ell) in [(10, 1), (10, 3), (50, 7)] {
        let z = check_mask_unbiasedness(seed, d, ell, 100_000);
        out.push(report(
            "mask mean equals (ell/d) I",
            z <= 3.0,
            format!("d={d} ell={ell}: worst deviation {z:.2} standard errors"),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_update_trivial_cases() {
        let mut rng = rng::from_seed(1);
        let a = random_spd(&mut rng, 3);
        let h = random_matrix(&mut rng, 3, 3);
        let m = DMatrix::identity(3, 3);
        assert_eq!(dense_reference_update(&a, &h, &m, 0.0), a);

        let one = DMatrix::from_element(1, 1, 1.0);
        let out = dense_reference_update(&one, &one, &one, 0.5);
        assert!((out[(0, 0)] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn gradients_vanish_at_minimizer() {
        let mut rng = rng::from_seed(2);
        let h = random_spd(&mut rng, 4);
        let inv = brute_inverse(&SymMatrix::from_dmatrix(&h).unwrap()).unwrap().to_dmatrix();
        assert!(grad_j(&h, &inv).norm() < 1e-12);
        assert!(grad_j_sym(&h, &inv).norm() < 1e-12);
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(grad_j(&id, &id).norm(), 0.0);
        assert_eq!(grad_j_sym(&id, &id).norm(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences_d5() {
        let mut rng = rng::from_seed(3);
        let h = random_spd(&mut rng, 5);
        let a = random_matrix(&mut rng, 5, 5);
        let j = QuadraticFunctional::new(&h).unwrap();
        let fd = fd_matrix_gradient(|m| j.value(m), &a);
        assert!(max_tolerance_ratio(&fd, &grad_j(&h, &a), 1e-6, 1e-8) <= 1.0);
        let fd = fd_matrix_gradient(|m| j.value_sym(m), &a);
        assert!(max_tolerance_ratio(&fd, &grad_j_sym(&h, &a), 1e-6, 1e-8) <= 1.0);
    }

    #[test]
    fn brute_inverse_cases() {
        let inv = brute_inverse(&SymMatrix::identity(3)).unwrap();
        assert!((inv.to_dmatrix() - DMatrix::identity(3, 3)).norm() < 1e-14);
        let inv = brute_inverse(&SymMatrix::from_diag(&[2.0, 4.0])).unwrap();
        assert!((inv.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((inv.get(1, 1) - 0.25).abs() < 1e-15);
        assert!(inv.get(0, 1).abs() < 1e-15);

        let mut rng = rng::from_seed(4);
        let m = SymMatrix::from_dmatrix(&random_spd(&mut rng, 8)).unwrap();
        let inv = brute_inverse(&m).unwrap();
        let residual = (m.to_dmatrix() * inv.to_dmatrix() - DMatrix::identity(8, 8)).norm();
        assert!(residual <= 1e-8 * 8.0);

        let singular = SymMatrix::from_diag(&[1.0, 1e-14]);
        assert!(matches!(brute_inverse(&singular), Err(Error::Singular { .. })));
    }

    #[test]
    fn identities_hold() {
        assert!(check_transpose_rule(5, 10).unwrap() <= 1.0);
        assert!(check_adjoint_identity(6, 50) <= 1e-12);
        assert!(check_curvature_bounds(7, 50).unwrap() <= 1e-8);
    }

    #[test]
    fn suite_passes() {
        for r in suite(2024) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
