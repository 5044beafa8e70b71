//! Mini-batch oracles for the benchmark objectives.
//!
//! Per-sample losses:
//! - linear: `0.5 (y - x.theta)^2`
//! - logistic: `log(1 + exp(x.theta)) - y x.theta`, labels in `{0, 1}`
//! - ridge logistic: logistic plus `lambda/2 ||theta||^2`
//!
//! Gradients and Hessian rows are batch means. Hessian rows are built from
//! per-sample curvature weights without forming a `d x d` matrix.

use serde::{Deserialize, Serialize};

use crate::data::SyntheticModel;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, MaskedHessian, OpCounts, SymMatrix};
use crate::rng::Rng;
use crate::verify::brute_inverse;

/// A block of `b` samples, features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Batch {
    pub fn new(d: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Empty("batch has no samples".into()));
        }
        if x.len() != y.len() * d {
            return Err(Error::DimMismatch {
                expected: y.len() * d,
                got: x.len(),
            });
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("batch entries".into()));
        }
        Ok(Batch { d, x, y })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    /// Rows `start..end` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        Batch {
            d: self.d,
            x: self.x[start * self.d..end * self.d].to_vec(),
            y: self.y[start..end].to_vec(),
        }
    }

    /// Selects the given sample indices.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let mut x = Vec::with_capacity(idx.len() * self.d);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Batch { d: self.d, x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    Linear,
    Logistic,
    RidgeLogistic { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    pub kind: ProblemKind,
    pub d: usize,
}

/// Logistic function, branch form so `exp` never overflows.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Problem {
    pub fn new(kind: ProblemKind, d: usize) -> Result<Self> {
        if let ProblemKind::RidgeLogistic { lambda } = kind {
            if !(lambda >= 0.0) {
                return Err(Error::Config(format!("ridge lambda {lambda} must be >= 0")));
            }
        }
        Ok(Problem { kind, d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn ridge(&self) -> f64 {
        match self.kind {
            ProblemKind::RidgeLogistic { lambda } => lambda,
            _ => 0.0,
        }
    }

    fn check(&self, batch: &Batch, theta: &[f64]) -> Result<()> {
        if batch.dim() != self.d {
            return Err(Error::DimMismatch {
                expected: self.d,
                got: batch.dim(),
            });
        }
        if theta.len() != self.d {
            return Err(Error::DimMismatch {
                expected: self.d,
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// `x_i . theta` for every sample.
    pub fn margins(&self, batch: &Batch, theta: &[f64], ops: &mut OpCounts) -> Vec<f64> {
        ops.theta_mults += (batch.len() * self.d) as u64;
        (0..batch.len()).map(|i| dot(batch.row(i), theta)).collect()
    }

    /// Derivative of the per-sample loss with respect to the margin.
    #[inline]
    fn residual(&self, margin: f64, y: f64) -> f64 {
        match self.kind {
            ProblemKind::Linear => margin - y,
            ProblemKind::Logistic | ProblemKind::RidgeLogistic { .. } => sigmoid(margin) - y,
        }
    }

    /// Second derivative of the per-sample loss with respect to the margin.
    #[inline]
    fn curvature(&self, margin: f64) -> f64 {
        match self.kind {
            ProblemKind::Linear => 1.0,
            ProblemKind::Logistic | ProblemKind::RidgeLogistic { .. } => {
                let s = sigmoid(margin);
                s * (1.0 - s)
            }
        }
    }

    pub fn grad(&self, batch: &Batch, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(batch, theta)?;
        let mut ops = OpCounts::default();
        let m = self.margins(batch, theta, &mut ops);
        Ok(self.grad_from_margins(batch, theta, &m, &mut ops))
    }

    /// Mini-batch mean gradient from precomputed margins.
    pub fn grad_from_margins(
        &self,
        batch: &Batch,
        theta: &[f64],
        margins: &[f64],
        ops: &mut OpCounts,
    ) -> Vec<f64> {
        let b = batch.len();
        let inv_b = 1.0 / b as f64;
        let mut g = vec![0.0; self.d];
        for i in 0..b {
            let r = self.residual(margins[i], batch.labels()[i]);
            axpy(r * inv_b, batch.row(i), &mut g);
        }
        ops.theta_mults += (b * self.d) as u64;
        let lambda = self.ridge();
        if lambda != 0.0 {
            axpy(lambda, theta, &mut g);
        }
        g
    }

    pub fn hessian_rows(
        &self,
        batch: &Batch,
        theta: &[f64],
        indices: Vec<usize>,
    ) -> Result<MaskedHessian> {
        self.check(batch, theta)?;
        let mut ops = OpCounts::default();
        let m = self.margins(batch, theta, &mut ops);
        self.hessian_rows_from_margins(batch, &m, indices, &mut ops)
    }

    /// Rows `indices` of the mini-batch mean Hessian,
    /// `(1/b) sum_i w_i x_i[I_k] x_i`, plus the ridge on the diagonal.
    /// Costs `ell * b * d` multiplies.
    pub fn hessian_rows_from_margins(
        &self,
        batch: &Batch,
        margins: &[f64],
        indices: Vec<usize>,
        ops: &mut OpCounts,
    ) -> Result<MaskedHessian> {
        let d = self.d;
        let ell = indices.len();
        let b = batch.len();
        let inv_b = 1.0 / b as f64;
        let mut rows = vec![0.0; ell * d];
        for i in 0..b {
            let w = self.curvature(margins[i]) * inv_b;
            if w == 0.0 {
                continue;
            }
            let x = batch.row(i);
            for (k, &col) in indices.iter().enumerate() {
                axpy(w * x[col], x, &mut rows[k * d..(k + 1) * d]);
            }
        }
        ops.hessian_mults += (ell * b * d) as u64;
        let lambda = self.ridge();
        if lambda != 0.0 {
            for (k, &col) in indices.iter().enumerate() {
                rows[k * d + col] += lambda;
            }
        }
        MaskedHessian::new(d, indices, rows)
    }

    /// Dense mini-batch Hessian; `O(b d^2)`, used for the `A_0` warm start.
    pub fn empirical_hessian(&self, batch: &Batch, theta: &[f64]) -> Result<SymMatrix> {
        self.check(batch, theta)?;
        let d = self.d;
        let mut ops = OpCounts::default();
        let m = self.margins(batch, theta, &mut ops);
        let inv_b = 1.0 / batch.len() as f64;
        let mut h = SymMatrix::zeros(d);
        let mut acc = vec![0.0; d * d];
        for (i, &mi) in m.iter().enumerate() {
            let w = self.curvature(mi) * inv_b;
            let x = batch.row(i);
            for p in 0..d {
                let wp = w * x[p];
                for q in p..d {
                    acc[p * d + q] += wp * x[q];
                }
            }
        }
        let lambda = self.ridge();
        for p in 0..d {
            for q in p..d {
                let v = acc[p * d + q] + if p == q { lambda } else { 0.0 };
                h.set_sym(p, q, v);
            }
        }
        Ok(h)
    }

    pub fn sample_loss(&self, margin: f64, y: f64) -> f64 {
        match self.kind {
            ProblemKind::Linear => 0.5 * (y - margin) * (y - margin),
            ProblemKind::Logistic | ProblemKind::RidgeLogistic { .. } => {
                softplus(margin) - y * margin
            }
        }
    }

    /// Mean loss over the batch, including the ridge term.
    pub fn loss(&self, batch: &Batch, theta: &[f64]) -> Result<f64> {
        self.check(batch, theta)?;
        let mut ops = OpCounts::default();
        let m = self.margins(batch, theta, &mut ops);
        let mean = m
            .iter()
            .zip(batch.labels())
            .map(|(&mi, &y)| self.sample_loss(mi, y))
            .sum::<f64>()
            / batch.len() as f64;
        let lambda = self.ridge();
        Ok(mean + 0.5 * lambda * dot(theta, theta))
    }

    /// Fraction of samples whose sign of `x.theta` matches the `{0,1}` label.
    pub fn accuracy(&self, batch: &Batch, theta: &[f64]) -> Result<f64> {
        self.check(batch, theta)?;
        let correct = (0..batch.len())
            .filter(|&i| {
                let pred = if dot(batch.row(i), theta) > 0.0 { 1.0 } else { 0.0 };
                pred == batch.labels()[i]
            })
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }

    /// Per-sample gradient, used to check the batch identity.
    pub fn sample_grad(&self, x: &[f64], y: f64, theta: &[f64]) -> Vec<f64> {
        let r = self.residual(dot(x, theta), y);
        let lambda = self.ridge();
        x.iter().zip(theta).map(|(xi, ti)| r * xi + lambda * ti).collect()
    }
}

/// `H^{-1}` for a synthetic model: the exact inverse of `Sigma_X` for linear
/// regression, and the inverse of a Monte-Carlo estimate of
/// `E[s'(x.theta*) x x^T]` (plus the ridge) for the logistic kinds.
pub fn reference_inverse_hessian(
    problem: &Problem,
    model: &SyntheticModel,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<SymMatrix> {
    match problem.kind {
        ProblemKind::Linear => brute_inverse(model.covariance()),
        ProblemKind::Logistic | ProblemKind::RidgeLogistic { .. } => {
            let h = reference_hessian_mc(problem, model, mc_samples, rng)?;
            brute_inverse(&h)
        }
    }
}

/// Monte-Carlo estimate of the Hessian at `theta*`, streamed in chunks.
pub fn reference_hessian_mc(
    problem: &Problem,
    model: &SyntheticModel,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<SymMatrix> {
    if mc_samples == 0 {
        return Err(Error::Config("Monte-Carlo sample count must be positive".into()));
    }
    let d = model.dim();
    let theta = model.theta_star();
    let chunk = 4096.min(mc_samples);
    let mut acc = vec![0.0; d * d];
    let mut remaining = mc_samples;
    let mut x = vec![0.0; d];
    let mut z = vec![0.0; d];
    while remaining > 0 {
        let n = chunk.min(remaining);
        for _ in 0..n {
            model.sample_features(rng, &mut z, &mut x);
            let w = problem.curvature(dot(&x, theta));
            for p in 0..d {
                let wp = w * x[p];
                for q in p..d {
                    acc[p * d + q] += wp * x[q];
                }
            }
        }
        remaining -= n;
    }
    let mut h = SymMatrix::zeros(d);
    let inv = 1.0 / mc_samples as f64;
    let lambda = problem.ridge();
    for p in 0..d {
        for q in p..d {
            let v = acc[p * d + q] * inv + if p == q { lambda } else { 0.0 };
            h.set_sym(p, q, v);
        }
    }
    Ok(h)
}
