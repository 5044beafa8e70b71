//! TOML run configuration.
//!
//! Quantities that scale with the dimension (`ell`, batch size, schedule
//! constants) accept either a number or an expression in `d` such as
//! `"d"`, `"sqrt(d)"`, `"d^0.25"` or `"d^0.25*d"`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataFormat, LoadOptions};
use crate::error::{Error, Result};
use crate::linalg::OpNormMode;
use crate::optim::{HessianQueryPoint, OptimizerConfig, OptimizerKind};
use crate::problems::ProblemKind;
use crate::schedules::StepSchedule;

/// Product of factors, each a number, `d`, `d^p` or `sqrt(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimExpr {
    Value(f64),
    Expr(String),
}

impl DimExpr {
    pub fn expr(s: &str) -> Self {
        DimExpr::Expr(s.to_owned())
    }

    pub fn eval(&self, d: usize) -> Result<f64> {
        let s = match self {
            DimExpr::Value(v) => return Ok(*v),
            DimExpr::Expr(s) => s,
        };
        let df = d as f64;
        let mut acc = 1.0;
        for factor in s.split('*') {
            let f = factor.trim();
            let v = if f == "d" {
                df
            } else if f == "sqrt(d)" {
                df.sqrt()
            } else if let Some(p) = f.strip_prefix("d^") {
                let p: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad exponent in {s:?}")))?;
                df.powf(p)
            } else {
                f.parse::<f64>()
                    .map_err(|_| Error::Config(format!("cannot parse {f:?} in expression {s:?}")))?
            };
            acc *= v;
        }
        if !acc.is_finite() {
            return Err(Error::Config(format!("{s:?} is not finite at d = {d}")));
        }
        Ok(acc)
    }

    /// Rounded to the nearest integer, at least 1.
    pub fn count(&self, d: usize) -> Result<usize> {
        let v = self.eval(d)?;
        if !(v > 0.0) {
            return Err(Error::Config(format!("{self} must be positive at d = {d}")));
        }
        Ok((v.round() as usize).max(1))
    }
}

impl fmt::Display for DimExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimExpr::Value(v) => write!(f, "{v}"),
            DimExpr::Expr(s) => write!(f, "{s}"),
        }
    }
}

/// `scale / (n^exponent + shift)` with dimension-dependent constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub exponent: f64,
    pub scale: DimExpr,
    pub shift: DimExpr,
}

impl ScheduleSpec {
    pub fn resolve(&self, d: usize) -> Result<StepSchedule> {
        StepSchedule::new(self.exponent, self.scale.eval(d)?, self.shift.eval(d)?)
    }
}

fn default_ell() -> DimExpr {
    DimExpr::Value(1.0)
}

fn default_d() -> DimExpr {
    DimExpr::expr("d")
}

fn default_tau() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    /// Label in the output; defaults to the kind, plus `ell` for mSNA.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_ell")]
    pub ell: DimExpr,
    #[serde(default = "default_d")]
    pub batch: DimExpr,
    /// Offset `n0` of the default schedules.
    #[serde(default = "default_d")]
    pub n0: DimExpr,
    /// Overrides the default `1/(n + n0)` (or `d^0.25/(n^0.75 + d^0.25 n0)`
    /// for averaged kinds).
    #[serde(default)]
    pub alpha: Option<ScheduleSpec>,
    /// Overrides the default `1/(n^0.75 + n0)`.
    #[serde(default)]
    pub gamma: Option<ScheduleSpec>,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub query_point: HessianQueryPoint,
    #[serde(default)]
    pub norm_mode: OpNormMode,
    #[serde(default)]
    pub average_inverse: bool,
    /// 100 gradient steps on the init batch for `theta_0`. Defaults to true
    /// for datasets and false for synthetic data.
    #[serde(default)]
    pub warm_start: Option<bool>,
    /// `A_0` from the inverse init-batch Hessian; defaults to `warm_start`.
    #[serde(default)]
    pub init_inverse: Option<bool>,
}

impl OptimizerSpec {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerSpec {
            kind,
            name: None,
            ell: default_ell(),
            batch: default_d(),
            n0: default_d(),
            alpha: None,
            gamma: None,
            nu: 0.0,
            tau: default_tau(),
            query_point: HessianQueryPoint::Current,
            norm_mode: OpNormMode::Exact,
            average_inverse: false,
            warm_start: None,
            init_inverse: None,
        }
    }

    pub fn with_ell(mut self, ell: DimExpr) -> Self {
        self.ell = ell;
        self
    }

    pub fn resolve(&self, d: usize, dataset: bool) -> Result<ResolvedOptimizer> {
        let n0 = self.n0.eval(d)?;
        if !(n0 >= 0.0) {
            return Err(Error::Config(format!("n0 = {n0} must be >= 0")));
        }
        let newton = self.kind.is_newton();
        let ell = if newton { self.ell.count(d)? } else { 0 };
        if newton && ell > d {
            return Err(Error::Config(format!("ell = {ell} ({}) exceeds d = {d}", self.ell)));
        }
        let b = self.batch.count(d)?;
        let df = d as f64;
        let alpha = match &self.alpha {
            Some(s) => s.resolve(d)?,
            None if self.kind.is_averaged() => {
                let s = df.powf(0.25);
                StepSchedule::new(0.75, s, s * n0)?
            }
            None => StepSchedule::new(1.0, 1.0, n0)?,
        };
        let gamma = match &self.gamma {
            Some(s) => s.resolve(d)?,
            None => StepSchedule::new(0.75, 1.0, n0)?,
        };
        let optimizer = OptimizerConfig {
            kind: self.kind,
            alpha,
            gamma,
            nu: self.nu,
            tau: self.tau,
            ell: ell.max(1),
            query_point: self.query_point,
            norm_mode: self.norm_mode,
            average_inverse: self.average_inverse,
            update_inverse: true,
        };
        optimizer.validate(d)?;
        let warm_start = self.warm_start.unwrap_or(dataset);
        let init_inverse = newton && self.init_inverse.unwrap_or(warm_start);
        let name = self.name.clone().unwrap_or_else(|| {
            if newton {
                format!("{}_l{ell}", self.kind.name())
            } else {
                self.kind.name().to_owned()
            }
        });
        Ok(ResolvedOptimizer {
            name,
            optimizer,
            ell,
            batch: b,
            warm_start,
            init_inverse,
        })
    }
}

/// An optimizer spec with every dimension-dependent quantity fixed.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedOptimizer {
    pub name: String,
    pub optimizer: OptimizerConfig,
    /// 0 for SGD kinds.
    pub ell: usize,
    pub batch: usize,
    pub warm_start: bool,
    pub init_inverse: bool,
}

fn default_eigen_min() -> f64 {
    1e-2
}

fn default_one() -> f64 {
    1.0
}

fn default_eval_samples() -> usize {
    10_000
}

fn default_mc_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        d: usize,
        #[serde(default = "default_eigen_min")]
        eigen_min: f64,
        #[serde(default = "default_one")]
        eigen_max: f64,
        #[serde(default = "default_one")]
        noise_sigma: f64,
        /// Fresh samples used for the test metrics.
        #[serde(default = "default_eval_samples")]
        eval_samples: usize,
        /// Monte-Carlo draws for the reference Hessian of logistic models.
        #[serde(default = "default_mc_samples")]
        hessian_mc_samples: usize,
    },
    Dataset {
        path: PathBuf,
        #[serde(default)]
        format: Option<DataFormat>,
        #[serde(default)]
        label_column: Option<i64>,
        #[serde(default)]
        has_header: Option<bool>,
        #[serde(default)]
        positive_label: Option<String>,
        #[serde(default)]
        one_hot: Option<bool>,
        #[serde(default)]
        standardize: Option<bool>,
        #[serde(default)]
        intercept: Option<bool>,
        #[serde(default)]
        test_fraction: Option<f64>,
        #[serde(default)]
        libsvm_dim: Option<usize>,
    },
}

impl DataSpec {
    pub fn synthetic(d: usize) -> Self {
        DataSpec::Synthetic {
            d,
            eigen_min: default_eigen_min(),
            eigen_max: 1.0,
            noise_sigma: 1.0,
            eval_samples: default_eval_samples(),
            hessian_mc_samples: default_mc_samples(),
        }
    }

    pub fn is_dataset(&self) -> bool {
        matches!(self, DataSpec::Dataset { .. })
    }

    /// Loader options; relative paths are taken from `base`.
    pub fn load_options(&self, base: &Path) -> Option<(PathBuf, LoadOptions)> {
        let DataSpec::Dataset {
            path,
            format,
            label_column,
            has_header,
            positive_label,
            one_hot,
            standardize,
            intercept,
            test_fraction,
            libsvm_dim,
        } = self
        else {
            return None;
        };
        let def = LoadOptions::default();
        let format = format.clone().unwrap_or_else(|| {
            match path.extension().and_then(|e| e.to_str()) {
                Some("csv") => DataFormat::Csv,
                Some(_) | None => {
                    if path.to_string_lossy().contains("svm") {
                        DataFormat::Libsvm
                    } else {
                        DataFormat::Csv
                    }
                }
            }
        });
        let opts = LoadOptions {
            format,
            label_column: label_column.unwrap_or(def.label_column),
            has_header: has_header.unwrap_or(def.has_header),
            positive_label: positive_label.clone(),
            one_hot: one_hot.unwrap_or(def.one_hot),
            standardize: standardize.unwrap_or(def.standardize),
            intercept: intercept.unwrap_or(def.intercept),
            test_fraction: test_fraction.unwrap_or(def.test_fraction),
            libsvm_dim: *libsvm_dim,
            ..def
        };
        let full = if path.is_absolute() {
            path.clone()
        } else {
            base.join(path)
        };
        Some((full, opts))
    }
}

fn default_name() -> String {
    "run".into()
}

fn default_replications() -> u64 {
    1
}

fn default_workers() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_problem() -> ProblemKind {
    ProblemKind::Linear
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Samples streamed per run. For datasets, capped at (and defaulting to)
    /// one pass over the training part.
    #[serde(default)]
    pub n_samples: Option<u64>,
    /// Log-spaced checkpoint count. Defaults to 30 for synthetic data and 1
    /// (final iterate only) for datasets.
    #[serde(default)]
    pub checkpoints: Option<usize>,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Write the final `theta`, `A` and reference `H^{-1}` of every run.
    #[serde(default)]
    pub snapshots: bool,
    #[serde(default = "default_problem")]
    pub problem: ProblemKind,
    pub data: DataSpec,
    pub optimizers: Vec<OptimizerSpec>,
}

impl RunConfig {
    pub fn new(problem: ProblemKind, data: DataSpec, optimizers: Vec<OptimizerSpec>) -> Self {
        RunConfig {
            name: default_name(),
            n_samples: None,
            checkpoints: None,
            replications: 1,
            master_seed: 0,
            workers: 1,
            output_dir: default_output(),
            snapshots: false,
            problem,
            data,
            optimizers,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// `d = 1000`, `N = 10^7` for synthetic data.
    pub fn paper_scale(&mut self) {
        if let DataSpec::Synthetic { d, .. } = &mut self.data {
            *d = 1000;
            self.n_samples = Some(10_000_000);
        }
    }

    pub fn checkpoint_count(&self) -> usize {
        self.checkpoints
            .unwrap_or(if self.data.is_dataset() { 1 } else { 30 })
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.optimizers.is_empty() {
            return Err(Error::Config("at least one optimizer is required".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.checkpoint_count() == 0 {
            return Err(Error::Config("checkpoints must be at least 1".into()));
        }
        match &self.data {
            DataSpec::Synthetic {
                d,
                eigen_min,
                eigen_max,
                noise_sigma,
                eval_samples,
                hessian_mc_samples,
            } => {
                if *d == 0 {
                    return Err(Error::Config("d must be positive".into()));
                }
                if !(*eigen_min > 0.0 && eigen_max >= eigen_min) {
                    return Err(Error::Config("need 0 < eigen_min <= eigen_max".into()));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(Error::Config("noise_sigma must be >= 0".into()));
                }
                if *eval_samples == 0 || *hessian_mc_samples == 0 {
                    return Err(Error::Config("sample counts must be positive".into()));
                }
                if self.n_samples.is_none() {
                    return Err(Error::Config("n_samples is required for synthetic data".into()));
                }
            }
            DataSpec::Dataset { test_fraction, .. } => {
                if let Some(f) = test_fraction {
                    if !(*f > 0.0 && *f < 1.0) {
                        return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
                    }
                }
            }
        }
        let mut names = std::collections::BTreeSet::new();
        if let DataSpec::Synthetic { d, .. } = self.data {
            for spec in &self.optimizers {
                let r = spec.resolve(d, false)?;
                if !names.insert(r.name.clone()) {
                    return Err(Error::Config(format!("duplicate optimizer name {:?}", r.name)));
                }
            }
        }
        Ok(())
    }
}

/// Log-spaced iteration counts in `[1, iterations]`, deduplicated, as sample
/// counts (multiples of `b`).
pub fn checkpoint_schedule(iterations: u64, b: usize, count: usize) -> Vec<u64> {
    if iterations == 0 || count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![iterations * b as u64];
    }
    let top = (iterations as f64).ln();
    let mut out: Vec<u64> = (0..count)
        .map(|k| {
            let it = (top * k as f64 / (count - 1) as f64).exp().round() as u64;
            it.clamp(1, iterations) * b as u64
        })
        .collect();
    out.dedup();
    *out.last_mut().unwrap() = iterations * b as u64;
    out
}
