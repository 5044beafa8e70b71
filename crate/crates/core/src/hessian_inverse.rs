//! Online estimation of `H^{-1}` from masked Hessian samples.
//!
//! Each step applies
//!
//! ```text
//! A_n = A_{n-1} - 1{g ||H~|| <= 1/2} ( g (H~ A + A H~^T - 2 M) - g^2 H~ A H~^T )
//! ```
//!
//! with `g = gamma_n`, `H~ = M h_n` the masked Hessian and `M` the diagonal
//! selector of the mask. Equivalently `(I - g H~) A (I - g H~)^T + 2 g M`, so
//! the estimate stays symmetric positive definite from an SPD start. Only the
//! `ell` selected rows and columns of `A` are written.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::{
    masked_block, masked_op_norm_with, masked_product_with, min_eigenvalue,
    scatter_symmetric_update, MaskSampler, MaskedHessian, OpCounts, OpNormMode, SymMatrix,
};
use crate::rng::Rng;
use crate::schedules::{AveragingWeights, StepSchedule};

#[derive(Debug, Clone)]
struct Averaged {
    a_bar: SymMatrix,
    weights: AveragingWeights,
    cum_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    Truncated,
}

/// State of the recursive inverse-Hessian estimator.
#[derive(Debug, Clone)]
pub struct InverseEstimator {
    a: SymMatrix,
    n: u64,
    gamma: StepSchedule,
    sampler: MaskSampler,
    averaged: Option<Averaged>,
    norm_mode: OpNormMode,
    ops: OpCounts,
    truncations: u64,
    max_hessian_frob: f64,
}

impl InverseEstimator {
    /// Starts from `a0` (default `I_d`). A non-SPD `a0` is rejected.
    pub fn new(
        d: usize,
        gamma: StepSchedule,
        ell: usize,
        rng: Rng,
        averaging_tau: Option<f64>,
        a0: Option<SymMatrix>,
    ) -> Result<Self> {
        gamma.validate()?;
        let a = match a0 {
            Some(a0) => {
                if a0.dim() != d {
                    return Err(Error::DimMismatch {
                        expected: d,
                        got: a0.dim(),
                    });
                }
                let min_eig = min_eigenvalue(&a0);
                if !(min_eig > 0.0) {
                    return Err(Error::NotPositiveDefinite { min_eig });
                }
                a0
            }
            None => SymMatrix::identity(d),
        };
        let averaged = match averaging_tau {
            Some(tau) => {
                let weights = AveragingWeights::new(tau)?;
                Some(Averaged {
                    a_bar: a.clone(),
                    weights,
                    cum_weight: weights.value(0),
                })
            }
            None => None,
        };
        Ok(InverseEstimator {
            a,
            n: 0,
            gamma,
            sampler: MaskSampler::new(d, ell, rng)?,
            averaged,
            norm_mode: OpNormMode::Exact,
            ops: OpCounts::default(),
            truncations: 0,
            max_hessian_frob: 0.0,
        })
    }

    pub fn with_norm_mode(mut self, mode: OpNormMode) -> Self {
        self.norm_mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn ell(&self) -> usize {
        self.sampler.ell()
    }

    /// Number of updates applied or truncated so far.
    pub fn iterations(&self) -> u64 {
        self.n
    }

    pub fn truncations(&self) -> u64 {
        self.truncations
    }

    pub fn ops(&self) -> &OpCounts {
        &self.ops
    }

    /// Largest `||H~||_F` seen so far; a heavy-tail diagnostic for the
    /// Hessian oracle.
    pub fn max_hessian_frob(&self) -> f64 {
        self.max_hessian_frob
    }

    /// Draws the mask for the next update. Independent of everything before.
    pub fn sample_mask(&mut self) -> Vec<usize> {
        self.sampler.sample()
    }

    /// The current (non-averaged) estimate `A_n`.
    pub fn estimate(&self) -> &SymMatrix {
        &self.a
    }

    /// The weighted average `A_bar_n`, when averaging is enabled.
    pub fn averaged_estimate(&self) -> Option<&SymMatrix> {
        self.averaged.as_ref().map(|s| &s.a_bar)
    }

    pub fn update(&mut self, h: &MaskedHessian) -> Result<UpdateOutcome> {
        let d = self.a.dim();
        if h.dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: h.dim(),
            });
        }
        self.n += 1;
        let gamma = self.gamma.value(self.n);

        let frob = crate::linalg::norm_sq(h.rows()).sqrt();
        if frob > self.max_hessian_frob {
            self.max_hessian_frob = frob;
        }

        let norm = masked_op_norm_with(h, self.norm_mode, &mut self.ops);
        let outcome = if !(gamma * norm <= 0.5) {
            self.truncations += 1;
            UpdateOutcome::Truncated
        } else {
            let b = masked_product_with(h, &self.a, &mut self.ops)?;
            let c = masked_block(h, &b, &mut self.ops);
            let writes = scatter_symmetric_update(
                &mut self.a,
                h.indices(),
                &b,
                &c,
                2.0 * gamma,
                -gamma,
                gamma * gamma,
            )?;
            self.ops.a_writes += writes;
            UpdateOutcome::Applied
        };

        if let Some(avg) = self.averaged.as_mut() {
            let w = avg.weights.value(self.n);
            avg.cum_weight += w;
            if avg.cum_weight == 0.0 {
                avg.a_bar = self.a.clone();
            } else {
                avg.a_bar.convex_combine(&self.a, w / avg.cum_weight);
            }
            self.ops.a_writes += (d * d) as u64;
        }
        Ok(outcome)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"AINV";

/// Writes a matrix snapshot: magic `AINV`, then `d` and `n` as little-endian
/// `u64`, then `d * d` little-endian `f64` in row-major order.
pub fn write_snapshot<W: Write>(mut w: W, a: &SymMatrix, n: u64) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(a.dim() as u64).to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    for v in a.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<(SymMatrix, u64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: "bad snapshot magic".into(),
        });
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let d = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf);
    let mut data = Vec::with_capacity(d * d);
    for _ in 0..d * d {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok((SymMatrix::from_row_major(d, data)?, n))
}
