//! Streaming optimizers: SGD, averaged SGD, mSNA and averaged mSNA.
//!
//! Each step consumes one mini-batch. The order within a step is fixed:
//! gradient at `theta_{n-1}`, parameter update with the conditioner
//! `A_{n-1} + nu_n I`, masked Hessian query and inverse-estimator update,
//! then the weighted average.

use std::time::{Duration, Instant};

use log::warn;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian_inverse::InverseEstimator;
use crate::linalg::{norm_sq, OpCounts, OpNormMode, SymMatrix};
use crate::problems::{Batch, Problem};
use crate::rng::Rng;
use crate::schedules::{AveragingWeights, RidgeSchedule, StepSchedule};

/// Iterates with a norm above this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdAvg,
    Msna,
    MsnaAvg,
}

impl OptimizerKind {
    pub fn is_newton(self) -> bool {
        matches!(self, OptimizerKind::Msna | OptimizerKind::MsnaAvg)
    }

    pub fn is_averaged(self) -> bool {
        matches!(self, OptimizerKind::SgdAvg | OptimizerKind::MsnaAvg)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdAvg => "sgd_avg",
            OptimizerKind::Msna => "msna",
            OptimizerKind::MsnaAvg => "msna_avg",
        }
    }
}

/// Point at which the Hessian oracle is queried.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianQueryPoint {
    /// `theta_{n-1}`; margins are shared with the gradient query.
    #[default]
    Current,
    /// `theta_bar_{n-1}`; costs one extra pass over the batch.
    Averaged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub alpha: StepSchedule,
    /// Step for the inverse estimator; ignored by SGD.
    pub gamma: StepSchedule,
    pub nu: f64,
    pub tau: f64,
    pub ell: usize,
    pub query_point: HessianQueryPoint,
    pub norm_mode: OpNormMode,
    /// Also maintain the weighted average of `A_n`.
    pub average_inverse: bool,
    /// When false `A` stays at `A_0`; an ablation switch.
    pub update_inverse: bool,
}

impl OptimizerConfig {
    /// Defaults used for synthetic runs: `n0 = d`, `tau = 2`,
    /// `gamma_n = 1/(n^0.75 + d)`, `nu = 0`.
    pub fn standard(kind: OptimizerKind, d: usize, ell: usize) -> Self {
        let df = d as f64;
        let alpha = if kind.is_averaged() {
            let s = df.powf(0.25);
            StepSchedule {
                exponent: 0.75,
                scale: s,
                shift: s * df,
            }
        } else {
            StepSchedule::harmonic(df)
        };
        OptimizerConfig {
            kind,
            alpha,
            gamma: StepSchedule {
                exponent: 0.75,
                scale: 1.0,
                shift: df,
            },
            nu: 0.0,
            tau: 2.0,
            ell,
            query_point: HessianQueryPoint::Current,
            norm_mode: OpNormMode::Exact,
            average_inverse: false,
            update_inverse: true,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.alpha.validate()?;
        RidgeSchedule::new(self.nu, self.alpha.exponent)?;
        AveragingWeights::new(self.tau)?;
        if self.kind.is_newton() {
            self.gamma.validate()?;
            if self.ell == 0 || self.ell > d {
                return Err(Error::Config(format!("ell = {} must lie in [1, {d}]", self.ell)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Running,
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    theta: Vec<f64>,
    theta_bar: Vec<f64>,
    cum_weight: f64,
    n: u64,
    alpha: StepSchedule,
    ridge: RidgeSchedule,
    weights: AveragingWeights,
    inv: Option<InverseEstimator>,
    query_point: HessianQueryPoint,
    update_inverse: bool,
    ops: OpCounts,
    status: RunStatus,
    samples_seen: u64,
    scratch: Vec<f64>,
}

impl OptimizerState {
    /// `a0` defaults to the identity; `mask_rng` drives the coordinate masks.
    pub fn new(
        config: &OptimizerConfig,
        theta0: Vec<f64>,
        a0: Option<SymMatrix>,
        mask_rng: Rng,
    ) -> Result<Self> {
        let d = theta0.len();
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        config.validate(d)?;
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial parameter".into()));
        }
        if config.alpha.exponent == 1.0 && config.alpha.scale <= 0.5 {
            warn!(
                "step scale {} <= 1/2 with exponent 1 falls outside the convergence guarantee",
                config.alpha.scale
            );
        }
        let inv = if config.kind.is_newton() {
            let tau = config.average_inverse.then_some(config.tau);
            Some(
                InverseEstimator::new(d, config.gamma, config.ell, mask_rng, tau, a0)?
                    .with_norm_mode(config.norm_mode),
            )
        } else {
            None
        };
        let weights = AveragingWeights::new(config.tau)?;
        Ok(OptimizerState {
            kind: config.kind,
            theta_bar: theta0.clone(),
            theta: theta0,
            cum_weight: weights.value(0),
            n: 0,
            alpha: config.alpha,
            ridge: RidgeSchedule::new(config.nu, config.alpha.exponent)?,
            weights,
            inv,
            query_point: config.query_point,
            update_inverse: config.update_inverse,
            ops: OpCounts::default(),
            status: RunStatus::Running,
            samples_seen: 0,
            scratch: vec![0.0; d],
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_bar(&self) -> &[f64] {
        &self.theta_bar
    }

    /// The reported estimate: `theta_bar` for averaged kinds, else `theta`.
    pub fn estimate(&self) -> &[f64] {
        if self.kind.is_averaged() {
            &self.theta_bar
        } else {
            &self.theta
        }
    }

    pub fn iterations(&self) -> u64 {
        self.n
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn inverse(&self) -> Option<&InverseEstimator> {
        self.inv.as_ref()
    }

    /// The inverse-Hessian estimate in use (averaged when maintained).
    pub fn inverse_estimate(&self) -> Option<&SymMatrix> {
        self.inv
            .as_ref()
            .map(|inv| inv.averaged_estimate().unwrap_or(inv.estimate()))
    }

    pub fn status(&self) -> &RunStatus {
        &self.status
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged(_))
    }

    /// Oracle multiplies plus the estimator's own counters.
    pub fn ops(&self) -> OpCounts {
        let mut total = self.ops;
        if let Some(inv) = &self.inv {
            total.add(inv.ops());
        }
        total
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.theta.len() {
            return Err(Error::DimMismatch {
                expected: self.theta.len(),
                got: len,
            });
        }
        Ok(())
    }

    fn flag(&mut self, why: String) -> Error {
        self.status = RunStatus::Diverged(why.clone());
        Error::NonFinite(why)
    }

    fn check_iterate(&mut self) -> Result<()> {
        let nsq = norm_sq(&self.theta);
        if !nsq.is_finite() {
            return Err(self.flag(format!("non-finite iterate at step {}", self.n)));
        }
        if nsq.sqrt() > DIVERGENCE_NORM {
            return Err(self.flag(format!("iterate norm exceeded {DIVERGENCE_NORM:e} at step {}", self.n)));
        }
        Ok(())
    }

    fn check_gradient(&mut self, g: &[f64]) -> Result<()> {
        self.check_dim(g.len())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(self.flag(format!("non-finite gradient at step {}", self.n + 1)));
        }
        Ok(())
    }

    /// `theta <- theta - alpha_n g`, then the average.
    pub fn sgd_step(&mut self, g: &[f64]) -> Result<()> {
        self.check_gradient(g)?;
        self.n += 1;
        let a = self.alpha.value(self.n);
        for (t, gi) in self.theta.iter_mut().zip(g) {
            *t -= a * gi;
        }
        self.check_iterate()?;
        self.averaged_update();
        Ok(())
    }

    /// `theta <- theta - alpha_n (A + nu_n I) g`, then the estimator update
    /// with `h` (which must come from the configured query point), then the
    /// average.
    pub fn msna_step(&mut self, g: &[f64], h: &crate::linalg::MaskedHessian) -> Result<()> {
        self.check_gradient(g)?;
        self.check_dim(h.dim())?;
        let Some(inv) = self.inv.as_mut() else {
            return Err(Error::Config("mSNA step on an optimizer without an inverse estimate".into()));
        };
        self.n += 1;
        let a = self.alpha.value(self.n);
        let nu = self.ridge.value(self.n);
        inv.estimate().mat_vec(g, &mut self.scratch, &mut self.ops);
        for ((t, ag), gi) in self.theta.iter_mut().zip(&self.scratch).zip(g) {
            *t -= a * (ag + nu * gi);
        }
        if self.update_inverse {
            inv.update(h)?;
            if !inv.estimate().is_finite() {
                return Err(self.flag(format!("non-finite inverse estimate at step {}", self.n)));
            }
        }
        self.check_iterate()?;
        self.averaged_update();
        Ok(())
    }

    /// `W <- W + w_n`; `theta_bar <- (1 - w_n/W) theta_bar + (w_n/W) theta`.
    pub fn averaged_update(&mut self) {
        let w = self.weights.value(self.n);
        self.cum_weight += w;
        if self.cum_weight == 0.0 {
            self.theta_bar.copy_from_slice(&self.theta);
            return;
        }
        let r = w / self.cum_weight;
        for (tb, t) in self.theta_bar.iter_mut().zip(&self.theta) {
            *tb = (1.0 - r) * *tb + r * t;
        }
    }

    /// Full step on one mini-batch: oracle queries plus the update.
    pub fn step(&mut self, problem: &Problem, batch: &Batch) -> Result<()> {
        if self.is_diverged() {
            return Err(Error::NonFinite("step on a diverged run".into()));
        }
        self.check_dim(batch.dim())?;
        let margins = problem.margins(batch, &self.theta, &mut self.ops);
        let g = problem.grad_from_margins(batch, &self.theta, &margins, &mut self.ops);
        self.samples_seen += batch.len() as u64;
        match self.inv.as_mut() {
            None => self.sgd_step(&g),
            Some(inv) => {
                let idx = inv.sample_mask();
                let h = match self.query_point {
                    HessianQueryPoint::Current => {
                        problem.hessian_rows_from_margins(batch, &margins, idx, &mut self.ops)?
                    }
                    HessianQueryPoint::Averaged => {
                        let m = problem.margins(batch, &self.theta_bar, &mut self.ops);
                        problem.hessian_rows_from_margins(batch, &m, idx, &mut self.ops)?
                    }
                };
                self.msna_step(&g, &h)
            }
        }
    }
}

/// Result of a driven run. `records` holds one entry per checkpoint reached;
/// on failure the records gathered so far are kept.
#[derive(Debug)]
pub struct RunOutcome<R> {
    pub records: Vec<R>,
    pub error: Option<Error>,
    /// Time spent inside optimizer steps, evaluation excluded.
    pub step_time: Duration,
}

/// Drives `state` over `batches`, calling `record` whenever `samples_seen`
/// reaches the next entry of `checkpoints` (sorted, in samples). The elapsed
/// step time is passed along so records can report it.
pub fn run<R, I, F>(
    state: &mut OptimizerState,
    problem: &Problem,
    batches: I,
    checkpoints: &[u64],
    mut record: F,
) -> RunOutcome<R>
where
    I: IntoIterator<Item = Batch>,
    F: FnMut(&OptimizerState, Duration) -> Result<R>,
{
    debug_assert!(checkpoints.windows(2).all(|w| w[0] <= w[1]));
    let mut out = RunOutcome {
        records: Vec::new(),
        error: None,
        step_time: Duration::ZERO,
    };
    let mut next = 0;
    while next < checkpoints.len() && checkpoints[next] == 0 {
        match record(state, out.step_time) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                out.error = Some(e);
                return out;
            }
        }
        next += 1;
    }
    for batch in batches {
        if next >= checkpoints.len() {
            break;
        }
        let t0 = Instant::now();
        let res = state.step(problem, &batch);
        out.step_time += t0.elapsed();
        if let Err(e) = res {
            out.error = Some(e);
            return out;
        }
        while next < checkpoints.len() && checkpoints[next] <= state.samples_seen() {
            match record(state, out.step_time) {
                Ok(r) => out.records.push(r),
                Err(e) => {
                    out.error = Some(e);
                    return out;
                }
            }
            next += 1;
        }
    }
    out
}

/// Uniform point on the unit sphere centred at `center`.
pub fn random_on_sphere(center: &[f64], rng: &mut Rng) -> Vec<f64> {
    loop {
        let z: Vec<f64> = center.iter().map(|_| rng.sample(StandardNormal)).collect();
        let r = norm_sq(&z).sqrt();
        if r > 1e-12 {
            return center.iter().zip(&z).map(|(c, zi)| c + zi / r).collect();
        }
    }
}

#[derive(Debug, Clone)]
pub struct WarmStart {
    pub theta0: Vec<f64>,
    pub learning_rate: f64,
    pub init_loss: f64,
}

/// Candidate constant learning rates for the warm-start line search.
pub fn line_search_grid() -> Vec<f64> {
    (0..10).map(|k| 10f64.powf(-3.0 + 5.0 * k as f64 / 9.0)).collect()
}

fn gradient_descent(problem: &Problem, batch: &Batch, lr: f64, steps: usize) -> Option<Vec<f64>> {
    let mut theta = vec![0.0; problem.dim()];
    for _ in 0..steps {
        let g = problem.grad(batch, &theta).ok()?;
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= lr * gi;
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    Some(theta)
}

/// `steps` full-batch gradient steps from zero on `init`, with the constant
/// rate from [`line_search_grid`] that gives the lowest final loss.
pub fn warm_start_theta(problem: &Problem, init: &Batch, steps: usize) -> Result<WarmStart> {
    let mut best: Option<WarmStart> = None;
    for lr in line_search_grid() {
        let Some(theta) = gradient_descent(problem, init, lr, steps) else {
            continue;
        };
        let loss = problem.loss(init, &theta)?;
        if loss.is_finite() && best.as_ref().is_none_or(|b| loss < b.init_loss) {
            best = Some(WarmStart {
                theta0: theta,
                learning_rate: lr,
                init_loss: loss,
            });
        }
    }
    best.ok_or_else(|| Error::NonFinite("every warm-start learning rate diverged".into()))
}

/// `(H_init(theta0) + 1e-10 I)^{-1}`.
pub fn warm_start_inverse(problem: &Problem, init: &Batch, theta0: &[f64]) -> Result<SymMatrix> {
    let mut h = problem.empirical_hessian(init, theta0)?;
    h.add_diag(1e-10);
    h.inverse_spd()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, ModelKind, SyntheticModel};
    use crate::linalg::{dist_sq, eigenvalues, MaskedHessian};
    use crate::problems::ProblemKind;
    use crate::rng;

    fn config(kind: OptimizerKind, alpha: StepSchedule, tau: f64) -> OptimizerConfig {
        OptimizerConfig {
            alpha,
            tau,
            ..OptimizerConfig::standard(kind, 1, 1)
        }
    }

    fn unit_step() -> StepSchedule {
        StepSchedule::new(1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let cfg = config(OptimizerKind::Sgd, unit_step(), 0.0);
        let mut s = OptimizerState::new(&cfg, vec![1.0], None, rng::from_seed(0)).unwrap();
        s.sgd_step(&[1.0]).unwrap();
        assert_eq!(s.theta(), &[0.0]);
        s.sgd_step(&[0.0]).unwrap();
        assert_eq!(s.theta(), &[0.0]);
    }

    #[test]
    fn sgd_descends_on_exact_quadratic() {
        let d = 5;
        let sigma = SymMatrix::from_diag(&[1.0, 0.5, 0.2, 0.1, 0.05]);
        let cfg = OptimizerConfig {
            alpha: StepSchedule::harmonic(1.0),
            ..OptimizerConfig::standard(OptimizerKind::Sgd, d, 1)
        };
        let theta0 = vec![1.0; d];
        let mut s = OptimizerState::new(&cfg, theta0.clone(), None, rng::from_seed(0)).unwrap();
        let mut g = vec![0.0; d];
        for _ in 0..1000 {
            sigma.mat_vec(s.theta(), &mut g, &mut OpCounts::default());
            s.sgd_step(&g).unwrap();
        }
        assert!(norm_sq(s.theta()) < norm_sq(&theta0));
    }

    #[test]
    fn msna_worked_example() {
        let cfg = OptimizerConfig {
            alpha: StepSchedule::new(1.0, 0.1, 0.0).unwrap(),
            nu: 0.5,
            update_inverse: false,
            ..OptimizerConfig::standard(OptimizerKind::Msna, 2, 1)
        };
        // nu_1 = nu / ln(1) is defined as nu; alpha_1 = 0.1.
        let a0 = SymMatrix::from_diag(&[2.0, 1.0]);
        let mut s = OptimizerState::new(&cfg, vec![1.0, 0.0], Some(a0), rng::from_seed(0)).unwrap();
        let h = MaskedHessian::new(2, vec![0], vec![1.0, 0.0]).unwrap();
        s.msna_step(&[1.0, 1.0], &h).unwrap();
        assert!((s.theta()[0] - 0.75).abs() < 1e-15);
        assert!((s.theta()[1] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn msna_zero_gradient_still_updates_inverse() {
        let cfg = OptimizerConfig::standard(OptimizerKind::Msna, 2, 1);
        let mut s = OptimizerState::new(&cfg, vec![1.0, 2.0], None, rng::from_seed(0)).unwrap();
        let before = s.inverse_estimate().unwrap().clone();
        let h = MaskedHessian::new(2, vec![1], vec![0.0, 0.3]).unwrap();
        s.msna_step(&[0.0, 0.0], &h).unwrap();
        assert_eq!(s.theta(), &[1.0, 2.0]);
        assert_ne!(s.inverse_estimate().unwrap(), &before);
    }

    #[test]
    fn frozen_identity_msna_matches_sgd_bitwise() {
        let d = 8;
        let mut mrng = rng::from_seed(11);
        let model = SyntheticModel::new(d, 0.01, 1.0, 1.0, ModelKind::Logistic, &mut mrng).unwrap();
        let problem = Problem::new(ProblemKind::Logistic, d).unwrap();
        let theta0 = random_on_sphere(model.theta_star(), &mut mrng);
        let sgd_cfg = OptimizerConfig::standard(OptimizerKind::Sgd, d, 2);
        let msna_cfg = OptimizerConfig {
            update_inverse: false,
            ..OptimizerConfig::standard(OptimizerKind::Msna, d, 2)
        };
        let mut a = OptimizerState::new(&sgd_cfg, theta0.clone(), None, rng::from_seed(1)).unwrap();
        let mut b = OptimizerState::new(&msna_cfg, theta0, None, rng::from_seed(1)).unwrap();
        for batch in gen_synthetic(&model, rng::from_seed(2), d, 2000 * d) {
            a.step(&problem, &batch).unwrap();
            b.step(&problem, &batch).unwrap();
        }
        assert_eq!(a.theta(), b.theta());
        assert_eq!(a.theta_bar(), b.theta_bar());
    }

    #[test]
    fn averaging_examples() {
        let cfg = config(OptimizerKind::SgdAvg, unit_step(), 0.0);
        let mut s = OptimizerState::new(&cfg, vec![0.0], None, rng::from_seed(0)).unwrap();
        // theta_1 = 1, theta_2 = 2, theta_3 = 3 with alpha_n = 1/n.
        for n in 1..=3 {
            s.sgd_step(&[-(n as f64)]).unwrap();
        }
        assert_eq!(s.theta(), &[3.0]);
        assert!((s.theta_bar()[0] - 1.5).abs() < 1e-15);

        let cfg = config(OptimizerKind::SgdAvg, unit_step(), 2.0);
        let s = OptimizerState::new(&cfg, vec![0.7], None, rng::from_seed(0)).unwrap();
        assert_eq!(s.theta_bar(), &[0.7]);
        assert_eq!(s.estimate(), &[0.7]);
    }

    #[test]
    fn averaging_matches_direct_sum() {
        for tau in [0.0, 1.0, 2.0, 3.5] {
            let cfg = config(OptimizerKind::SgdAvg, unit_step(), tau);
            let mut r = rng::from_seed(tau as u64);
            let mut s = OptimizerState::new(&cfg, vec![0.3, -0.2], None, rng::from_seed(0)).unwrap();
            let w = AveragingWeights::new(tau).unwrap();
            let mut num = [0.3 * w.value(0), -0.2 * w.value(0)];
            let mut den = w.value(0);
            for k in 1..=1000u64 {
                let g = [r.random::<f64>() - 0.5, r.random::<f64>() - 0.5];
                s.sgd_step(&g).unwrap();
                let wk = w.value(k);
                num[0] += wk * s.theta()[0];
                num[1] += wk * s.theta()[1];
                den += wk;
                for j in 0..2 {
                    let direct = num[j] / den;
                    let rel = (s.theta_bar()[j] - direct).abs() / direct.abs().max(1e-300);
                    assert!(rel <= 1e-10 || (s.theta_bar()[j] - direct).abs() < 1e-14, "tau={tau} k={k}");
                }
            }
        }
    }

    #[test]
    fn averaged_weights_k_values() {
        let cfg = config(OptimizerKind::SgdAvg, unit_step(), 2.0);
        let mut s = OptimizerState::new(&cfg, vec![0.0], None, rng::from_seed(0)).unwrap();
        // alpha_n = 1/n and g_n = -n give theta_k = k.
        for n in 1..=3 {
            s.sgd_step(&[-(n as f64)]).unwrap();
        }
        let w: Vec<f64> = (0..=3).map(|k| ((k + 1) as f64).ln().powi(2)).collect();
        let direct = (0..=3).map(|k| w[k] * k as f64).sum::<f64>() / w.iter().sum::<f64>();
        assert!((s.theta_bar()[0] - direct).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_flags_run() {
        let cfg = config(OptimizerKind::Sgd, unit_step(), 0.0);
        let mut s = OptimizerState::new(&cfg, vec![1.0], None, rng::from_seed(0)).unwrap();
        assert!(s.sgd_step(&[f64::NAN]).is_err());
        assert!(s.is_diverged());
        assert_eq!(s.theta(), &[1.0]);
    }

    #[test]
    fn divergence_guard() {
        let cfg = config(OptimizerKind::Sgd, unit_step(), 0.0);
        let mut s = OptimizerState::new(&cfg, vec![0.0], None, rng::from_seed(0)).unwrap();
        assert!(s.sgd_step(&[-1e9]).is_err());
        assert!(matches!(s.status(), RunStatus::Diverged(_)));
    }

    #[test]
    fn run_plumbing() {
        let d = 20;
        let mut mrng = rng::from_seed(3);
        let model = SyntheticModel::new(d, 0.01, 1.0, 1.0, ModelKind::Linear, &mut mrng).unwrap();
        let problem = Problem::new(ProblemKind::Linear, d).unwrap();
        let cfg = OptimizerConfig::standard(OptimizerKind::Msna, d, 4);
        let theta0 = random_on_sphere(model.theta_star(), &mut mrng);

        let mut s = OptimizerState::new(&cfg, theta0.clone(), None, rng::from_seed(4)).unwrap();
        let empty = run(&mut s, &problem, std::iter::empty(), &[20, 40], |_, _| Ok(()));
        assert!(empty.records.is_empty());
        assert_eq!(s.theta(), theta0.as_slice());

        let n = 200_000;
        let checkpoints: Vec<u64> = (1..=10).map(|k| (k * n / 10) as u64).collect();
        let out = run(
            &mut s,
            &problem,
            gen_synthetic(&model, rng::from_seed(5), d, n),
            &checkpoints,
            |st, _| Ok((st.samples_seen(), dist_sq(st.estimate(), model.theta_star()))),
        );
        assert!(out.error.is_none());
        assert_eq!(out.records.len(), checkpoints.len());
        assert!(out.records.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(out.records.last().unwrap().1 < 0.01);
    }

    #[test]
    fn exact_newton_on_noiseless_quadratic() {
        // Deterministic oracle: the batch is a fixed design with exact responses.
        let d = 6;
        let mut r = rng::from_seed(8);
        let model = SyntheticModel::new(d, 0.05, 1.0, 0.0, ModelKind::Linear, &mut r).unwrap();
        let problem = Problem::new(ProblemKind::Linear, d).unwrap();
        let design = model.sample_batch(&mut r, 200);
        let cfg = OptimizerConfig {
            alpha: StepSchedule::harmonic(d as f64),
            ..OptimizerConfig::standard(OptimizerKind::Msna, d, d)
        };
        let mut s = OptimizerState::new(&cfg, vec![0.0; d], None, rng::from_seed(9)).unwrap();
        let mut errs = Vec::new();
        for _ in 0..2000 {
            s.step(&problem, &design).unwrap();
            errs.push(dist_sq(s.theta(), model.theta_star()));
        }
        assert!(errs[1999] < errs[100]);
        assert!(errs[100..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
    }

    #[test]
    fn descent_on_noiseless_quadratic() {
        let d = 6;
        let mut r = rng::from_seed(10);
        let model = SyntheticModel::new(d, 0.05, 1.0, 0.0, ModelKind::Linear, &mut r).unwrap();
        let problem = Problem::new(ProblemKind::Linear, d).unwrap();
        let design = model.sample_batch(&mut r, 100);
        let cfg = OptimizerConfig::standard(OptimizerKind::Sgd, d, 1);
        let mut s = OptimizerState::new(&cfg, vec![0.0; d], None, rng::from_seed(0)).unwrap();
        let mut losses = Vec::new();
        for _ in 0..500 {
            s.step(&problem, &design).unwrap();
            losses.push(problem.loss(&design, s.theta()).unwrap());
        }
        assert!(losses[10..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn conditioner_stays_positive() {
        let d = 10;
        let mut r = rng::from_seed(12);
        let model = SyntheticModel::new(d, 0.01, 1.0, 1.0, ModelKind::Logistic, &mut r).unwrap();
        let problem = Problem::new(ProblemKind::Logistic, d).unwrap();
        let cfg = OptimizerConfig {
            nu: 0.1,
            ..OptimizerConfig::standard(OptimizerKind::MsnaAvg, d, 3)
        };
        let mut s = OptimizerState::new(&cfg, vec![0.0; d], None, rng::from_seed(13)).unwrap();
        let ridge = RidgeSchedule::new(0.1, cfg.alpha.exponent).unwrap();
        for (k, batch) in gen_synthetic(&model, rng::from_seed(14), d, 5000 * d).enumerate() {
            s.step(&problem, &batch).unwrap();
            if (k + 1) % 1000 == 0 {
                let nu = ridge.value(k as u64 + 2);
                let min = eigenvalues(s.inverse_estimate().unwrap())[0] + nu;
                assert!(min >= nu);
            }
        }
    }

    #[test]
    fn averaged_query_point_runs() {
        let d = 5;
        let mut r = rng::from_seed(15);
        let model = SyntheticModel::new(d, 0.1, 1.0, 1.0, ModelKind::Logistic, &mut r).unwrap();
        let problem = Problem::new(ProblemKind::Logistic, d).unwrap();
        let cfg = OptimizerConfig {
            query_point: HessianQueryPoint::Averaged,
            average_inverse: true,
            ..OptimizerConfig::standard(OptimizerKind::MsnaAvg, d, 2)
        };
        let theta0 = random_on_sphere(model.theta_star(), &mut r);
        let mut s = OptimizerState::new(&cfg, theta0, None, rng::from_seed(16)).unwrap();
        for batch in gen_synthetic(&model, rng::from_seed(17), d, 100_000) {
            s.step(&problem, &batch).unwrap();
        }
        assert!(dist_sq(s.estimate(), model.theta_star()) < 0.1);
        assert!(s.inverse().unwrap().averaged_estimate().is_some());
    }

    #[test]
    fn warm_start_reduces_loss() {
        let d = 6;
        let mut r = rng::from_seed(18);
        let model = SyntheticModel::new(d, 0.1, 1.0, 1.0, ModelKind::Logistic, &mut r).unwrap();
        let problem = Problem::new(ProblemKind::RidgeLogistic { lambda: 1e-3 }, d).unwrap();
        let init = model.sample_batch(&mut r, 200);
        let ws = warm_start_theta(&problem, &init, 100).unwrap();
        assert!(ws.init_loss < problem.loss(&init, &vec![0.0; d]).unwrap());
        let a0 = warm_start_inverse(&problem, &init, &ws.theta0).unwrap();
        assert!(eigenvalues(&a0)[0] > 0.0);
        assert_eq!(line_search_grid().len(), 10);
    }

    #[test]
    fn sphere_init_is_unit_distance() {
        let mut r = rng::from_seed(19);
        let c = vec![1.0, -2.0, 0.5];
        let p = random_on_sphere(&c, &mut r);
        assert!((dist_sq(&p, &c) - 1.0).abs() < 1e-12);
    }
}
