//! Per-iteration cost model and its comparison with the kernel counters.

use serde::Serialize;

use crate::linalg::OpCounts;

/// Multiplies (and entry writes to `A`) per iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OpEstimate {
    pub hessian_rows: f64,
    pub a_update: f64,
    pub theta_update: f64,
    pub a_writes: f64,
}

impl OpEstimate {
    pub fn total_mults(&self) -> f64 {
        self.hessian_rows + self.a_update + self.theta_update
    }
}

/// Analytic counts: Hessian rows `ell b d`, `A` update `ell d^2 + ell^2 d`,
/// parameter update `b d + d^2` and at most `2 ell d` writes. SGD pays only
/// `b d` for its gradient.
pub fn analytic(d: usize, b: usize, ell: usize, newton: bool) -> OpEstimate {
    let (d, b, l) = (d as f64, b as f64, ell as f64);
    if !newton {
        return OpEstimate {
            theta_update: b * d,
            ..Default::default()
        };
    }
    OpEstimate {
        hessian_rows: l * b * d,
        a_update: l * d * d + l * l * d,
        theta_update: b * d + d * d,
        a_writes: 2.0 * l * d,
    }
}

/// Mean instrumented counts over `iterations` steps. The operator-norm
/// Gram product is booked under the `A` update.
pub fn instrumented(ops: &OpCounts, iterations: u64) -> OpEstimate {
    if iterations == 0 {
        return OpEstimate::default();
    }
    let n = iterations as f64;
    OpEstimate {
        hessian_rows: ops.hessian_mults as f64 / n,
        a_update: (ops.update_mults + ops.norm_mults) as f64 / n,
        theta_update: ops.theta_mults as f64 / n,
        a_writes: ops.a_writes as f64 / n,
    }
}

/// Analytic multiplies for one pass over `n` samples.
pub fn per_pass(n: u64, d: usize, b: usize, ell: usize, newton: bool) -> f64 {
    (n / b as u64) as f64 * analytic(d, b, ell, newton).total_mults()
}
