//! Orchestration of a configured experiment: one job per
//! (replication, optimizer), run on a worker pool, with the CSV written in
//! job order by a single writer.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, OnceLock};
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{checkpoint_schedule, DataSpec, ResolvedOptimizer, RunConfig};
use super::ops::{self, OpEstimate};
use crate::data::{
    parse_dataset, split_dataset, DatasetMeta, LoadOptions, ModelKind, ParsedDataset,
    SyntheticModel, SyntheticStream,
};
use crate::error::{Error, Result};
use crate::hessian_inverse::write_snapshot;
use crate::linalg::{dist_sq, frob_dist, SymMatrix};
use crate::optim::{
    random_on_sphere, run, warm_start_inverse, warm_start_theta, OptimizerState, RunStatus,
};
use crate::problems::{reference_inverse_hessian, Batch, Problem, ProblemKind};
use crate::rng::{stream, Purpose};

/// Gradient steps of the warm start.
pub const WARM_START_STEPS: usize = 100;

/// One row of the output table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub optimizer: String,
    pub replication: u64,
    pub samples_seen: u64,
    pub theta_err: Option<f64>,
    pub a_err: Option<f64>,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub wall_seconds: f64,
    pub flop_estimate: u64,
    #[serde(rename = "bytes_written_A")]
    pub bytes_written_a: u64,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "run_id",
    "optimizer",
    "replication",
    "samples_seen",
    "theta_err",
    "a_err",
    "train_loss",
    "test_loss",
    "train_acc",
    "test_acc",
    "wall_seconds",
    "flop_estimate",
    "bytes_written_A",
];

#[derive(Debug, Clone, Serialize)]
pub struct JobMeta {
    pub run_id: String,
    pub optimizer: ResolvedOptimizer,
    pub replication: u64,
    pub n_samples: u64,
    pub iterations: u64,
    pub truncations: u64,
    pub diverged: Option<String>,
    pub error: Option<String>,
    pub warm_start_lr: Option<f64>,
    pub a0_seconds: f64,
    pub ops_analytic: OpEstimate,
    pub ops_instrumented: OpEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationMeta {
    pub replication: u64,
    pub theta_star: Option<Vec<f64>>,
    pub split: Option<DatasetMeta>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentMeta {
    pub name: String,
    pub crate_version: &'static str,
    pub d: usize,
    pub config: RunConfig,
    pub csv: PathBuf,
    pub replications: Vec<ReplicationMeta>,
    pub jobs: Vec<JobMeta>,
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub records: Vec<RunRecord>,
    pub meta: ExperimentMeta,
}

/// Data shared by every optimizer of one replication.
struct Context {
    model: Option<SyntheticModel>,
    h_inv: Option<SymMatrix>,
    train: Option<Batch>,
    test: Batch,
    init: Batch,
    split: Option<DatasetMeta>,
    theta0: Vec<f64>,
    warm: OnceLock<std::result::Result<(Vec<f64>, f64), String>>,
}

enum Source {
    Synthetic {
        d: usize,
        eigen_min: f64,
        eigen_max: f64,
        noise_sigma: f64,
        eval_samples: usize,
        mc_samples: usize,
    },
    Dataset {
        parsed: ParsedDataset,
        opts: LoadOptions,
    },
}

struct Plan<'a> {
    config: &'a RunConfig,
    problem: Problem,
    source: Source,
    d: usize,
    n_samples: u64,
    optimizers: Vec<ResolvedOptimizer>,
    snapshot_dir: Option<PathBuf>,
}

fn model_kind(p: ProblemKind) -> ModelKind {
    match p {
        ProblemKind::Linear => ModelKind::Linear,
        _ => ModelKind::Logistic,
    }
}

fn is_classification(p: ProblemKind) -> bool {
    !matches!(p, ProblemKind::Linear)
}

impl Plan<'_> {
    fn context(&self, r: u64) -> Result<Context> {
        let seed = self.config.master_seed;
        match &self.source {
            Source::Synthetic {
                d,
                eigen_min,
                eigen_max,
                noise_sigma,
                eval_samples,
                mc_samples,
            } => {
                let mut mrng = stream(seed, r, 0, Purpose::Model);
                let model = SyntheticModel::new(
                    *d,
                    *eigen_min,
                    *eigen_max,
                    *noise_sigma,
                    model_kind(self.problem.kind),
                    &mut mrng,
                )?;
                let h_inv = reference_inverse_hessian(
                    &self.problem,
                    &model,
                    *mc_samples,
                    &mut stream(seed, r, 0, Purpose::MonteCarlo),
                )?;
                let test = model.sample_batch(&mut stream(seed, r, 0, Purpose::TestSet), *eval_samples);
                let init_size = (self.n_samples as usize / 100).max(2 * d);
                let init = model.sample_batch(&mut stream(seed, r, 1, Purpose::Init), init_size);
                let theta0 = random_on_sphere(model.theta_star(), &mut stream(seed, r, 0, Purpose::Init));
                Ok(Context {
                    model: Some(model),
                    h_inv: Some(h_inv),
                    train: None,
                    test,
                    init,
                    split: None,
                    theta0,
                    warm: OnceLock::new(),
                })
            }
            Source::Dataset { parsed, opts } => {
                let split = split_dataset(parsed, opts, &mut stream(seed, r, 0, Purpose::Split))?;
                Ok(Context {
                    model: None,
                    h_inv: None,
                    train: Some(split.train),
                    test: split.test,
                    init: split.init,
                    split: Some(split.meta),
                    theta0: vec![0.0; self.d],
                    warm: OnceLock::new(),
                })
            }
        }
    }

    fn run_id(&self, opt: &ResolvedOptimizer, r: u64) -> String {
        format!("{}-{}-r{r}", self.config.name, opt.name)
    }

    fn job(&self, ctx: &Context, r: u64, k: usize) -> (Vec<RunRecord>, JobMeta) {
        let opt = &self.optimizers[k];
        let seed = self.config.master_seed;
        let b = opt.batch;
        let n_avail = match &ctx.train {
            Some(t) => self.n_samples.min(t.len() as u64),
            None => self.n_samples,
        };
        let iterations = n_avail / b as u64;
        let run_id = self.run_id(opt, r);
        let mut meta = JobMeta {
            run_id: run_id.clone(),
            optimizer: opt.clone(),
            replication: r,
            n_samples: iterations * b as u64,
            iterations: 0,
            truncations: 0,
            diverged: None,
            error: None,
            warm_start_lr: None,
            a0_seconds: 0.0,
            ops_analytic: ops::analytic(self.d, b, opt.ell, opt.optimizer.kind.is_newton()),
            ops_instrumented: OpEstimate::default(),
        };

        let theta0 = if opt.warm_start {
            let warm = ctx.warm.get_or_init(|| {
                warm_start_theta(&self.problem, &ctx.init, WARM_START_STEPS)
                    .map(|w| (w.theta0, w.learning_rate))
                    .map_err(|e| e.to_string())
            });
            match warm {
                Ok((t, lr)) => {
                    meta.warm_start_lr = Some(*lr);
                    t.clone()
                }
                Err(e) => {
                    meta.error = Some(format!("warm start: {e}"));
                    return (Vec::new(), meta);
                }
            }
        } else {
            ctx.theta0.clone()
        };

        let mut a0_time = Duration::ZERO;
        let a0 = if opt.init_inverse {
            let t0 = Instant::now();
            let a0 = warm_start_inverse(&self.problem, &ctx.init, &theta0);
            a0_time = t0.elapsed();
            match a0 {
                Ok(a) => Some(a),
                Err(e) => {
                    meta.error = Some(format!("initial inverse: {e}"));
                    return (Vec::new(), meta);
                }
            }
        } else {
            None
        };
        meta.a0_seconds = a0_time.as_secs_f64();

        let mut state = match OptimizerState::new(
            &opt.optimizer,
            theta0,
            a0,
            stream(seed, r, k as u64, Purpose::Mask),
        ) {
            Ok(s) => s,
            Err(e) => {
                meta.error = Some(e.to_string());
                return (Vec::new(), meta);
            }
        };

        let checkpoints = checkpoint_schedule(iterations, b, self.config.checkpoint_count());
        let classification = is_classification(self.problem.kind);
        let newton = opt.optimizer.kind.is_newton();
        let record = |st: &OptimizerState, step_time: Duration| -> Result<RunRecord> {
            let est = st.estimate();
            let theta_err = ctx.model.as_ref().map(|m| dist_sq(est, m.theta_star()));
            let a_err = match (&ctx.h_inv, st.inverse_estimate()) {
                (Some(h), Some(a)) if newton => Some(frob_dist(a, h)?.powi(2)),
                _ => None,
            };
            let test_loss = Some(self.problem.loss(&ctx.test, est)?);
            let test_acc = if classification {
                Some(self.problem.accuracy(&ctx.test, est)?)
            } else {
                None
            };
            let (train_loss, train_acc) = match &ctx.train {
                Some(t) => (
                    Some(self.problem.loss(t, est)?),
                    if classification {
                        Some(self.problem.accuracy(t, est)?)
                    } else {
                        None
                    },
                ),
                None => (None, None),
            };
            let ops = st.ops();
            Ok(RunRecord {
                run_id: run_id.clone(),
                optimizer: opt.name.clone(),
                replication: r,
                samples_seen: st.samples_seen(),
                theta_err,
                a_err,
                train_loss,
                test_loss,
                train_acc,
                test_acc,
                wall_seconds: (step_time + a0_time).as_secs_f64(),
                flop_estimate: ops.total_mults(),
                bytes_written_a: ops.a_writes * 8,
            })
        };

        let outcome = match (&ctx.model, &ctx.train) {
            (Some(model), _) => {
                let batches = SyntheticStream::new(
                    model.clone(),
                    stream(seed, r, 0, Purpose::Data),
                    b,
                    meta.n_samples as usize,
                    true,
                );
                run(&mut state, &self.problem, batches, &checkpoints, record)
            }
            (None, Some(train)) => {
                let batches = crate::data::batcher(train, b, true).take(iterations as usize);
                run(&mut state, &self.problem, batches, &checkpoints, record)
            }
            (None, None) => unreachable!("context without a data source"),
        };

        meta.iterations = state.iterations();
        meta.truncations = state.inverse().map_or(0, |i| i.truncations());
        meta.ops_instrumented = ops::instrumented(&state.ops(), state.iterations());
        if let RunStatus::Diverged(why) = state.status() {
            meta.diverged = Some(why.clone());
        }
        if let Some(e) = outcome.error {
            meta.error = Some(e.to_string());
        }
        if let Some(dir) = &self.snapshot_dir {
            if let Err(e) = write_job_snapshot(dir, &run_id, &state) {
                meta.error.get_or_insert(format!("snapshot: {e}"));
            }
        }
        (outcome.records, meta)
    }
}

/// Final estimate as JSON and the inverse estimate in the binary snapshot
/// format.
fn write_job_snapshot(dir: &Path, run_id: &str, state: &OptimizerState) -> Result<()> {
    let f = File::create(dir.join(format!("{run_id}.theta.json")))?;
    serde_json::to_writer(BufWriter::new(f), state.estimate())?;
    if let Some(a) = state.inverse_estimate() {
        let f = File::create(dir.join(format!("{run_id}.ainv")))?;
        let mut w = BufWriter::new(f);
        write_snapshot(&mut w, a, state.iterations())?;
        w.flush()?;
    }
    Ok(())
}

pub fn csv_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(format!("{name}.csv"))
}

/// Runs every (replication, optimizer) job of `config`. Relative dataset
/// paths are resolved against `base_dir`. All validation happens before the
/// first job starts; job failures are recorded in the metadata and do not
/// stop the others.
pub fn run_experiment(config: &RunConfig, base_dir: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    let problem_kind = config.problem;
    let (source, d) = match &config.data {
        DataSpec::Synthetic {
            d,
            eigen_min,
            eigen_max,
            noise_sigma,
            eval_samples,
            hessian_mc_samples,
        } => (
            Source::Synthetic {
                d: *d,
                eigen_min: *eigen_min,
                eigen_max: *eigen_max,
                noise_sigma: *noise_sigma,
                eval_samples: *eval_samples,
                mc_samples: *hessian_mc_samples,
            },
            *d,
        ),
        DataSpec::Dataset { .. } => {
            let (path, opts) = config.data.load_options(base_dir).expect("dataset spec");
            let parsed = parse_dataset(&path, &opts)?;
            if parsed.is_empty() {
                return Err(Error::Empty(format!("{} has no rows", path.display())));
            }
            let d = parsed.raw_dim() + opts.intercept as usize;
            (Source::Dataset { parsed, opts }, d)
        }
    };
    let problem = Problem::new(problem_kind, d)?;
    let dataset = config.data.is_dataset();
    let optimizers = config
        .optimizers
        .iter()
        .map(|s| s.resolve(d, dataset))
        .collect::<Result<Vec<_>>>()?;
    {
        let mut names = std::collections::BTreeSet::new();
        for o in &optimizers {
            if !names.insert(&o.name) {
                return Err(Error::Config(format!("duplicate optimizer name {:?}", o.name)));
            }
        }
    }
    let n_samples = match (&source, config.n_samples) {
        (Source::Synthetic { .. }, Some(n)) => n,
        (Source::Synthetic { .. }, None) => unreachable!("validated"),
        (Source::Dataset { parsed, .. }, n) => n.unwrap_or(parsed.len() as u64),
    };

    std::fs::create_dir_all(&config.output_dir)?;
    let snapshot_dir = if config.snapshots {
        let dir = config.output_dir.join("snapshots");
        std::fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };
    let plan = Plan {
        config,
        problem,
        source,
        d,
        n_samples,
        optimizers,
        snapshot_dir,
    };

    let csv_path = csv_path(&config.output_dir, &config.name);
    let json_path = config.output_dir.join(format!("{}.json", config.name));
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(&csv_path)?;
    writer.write_record(CSV_COLUMNS)?;
    writer.flush()?;

    let n_opt = plan.optimizers.len();
    let n_jobs = config.replications as usize * n_opt;
    let contexts: Vec<OnceLock<std::result::Result<Arc<Context>, String>>> =
        (0..config.replications).map(|_| OnceLock::new()).collect();
    let next_job = AtomicUsize::new(0);
    let workers = config.workers.min(n_jobs).max(1);
    info!("{n_jobs} jobs on {workers} worker(s), d = {d}, N = {n_samples}");

    let mut all_records = Vec::new();
    let mut jobs_meta: Vec<Option<JobMeta>> = vec![None; n_jobs];
    let mut write_error: Option<Error> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Vec<RunRecord>, JobMeta)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let plan = &plan;
            let contexts = &contexts;
            let next_job = &next_job;
            scope.spawn(move || loop {
                let j = next_job.fetch_add(1, Ordering::Relaxed);
                if j >= n_jobs {
                    break;
                }
                let (r, k) = ((j / n_opt) as u64, j % n_opt);
                let ctx = contexts[r as usize]
                    .get_or_init(|| plan.context(r).map(Arc::new).map_err(|e| e.to_string()));
                let (records, meta) = match ctx {
                    Ok(ctx) => plan.job(ctx, r, k),
                    Err(e) => {
                        let opt = &plan.optimizers[k];
                        let meta = JobMeta {
                            run_id: plan.run_id(opt, r),
                            optimizer: opt.clone(),
                            replication: r,
                            n_samples: 0,
                            iterations: 0,
                            truncations: 0,
                            diverged: None,
                            error: Some(format!("replication setup: {e}")),
                            warm_start_lr: None,
                            a0_seconds: 0.0,
                            ops_analytic: OpEstimate::default(),
                            ops_instrumented: OpEstimate::default(),
                        };
                        (Vec::new(), meta)
                    }
                };
                if tx.send((j, records, meta)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder buffer: rows are written in job order as soon as the
        // prefix is complete.
        let mut pending: BTreeMap<usize, (Vec<RunRecord>, JobMeta)> = BTreeMap::new();
        let mut next_write = 0;
        for (j, records, meta) in rx {
            match (&meta.error, &meta.diverged) {
                (Some(e), _) => warn!("{}: {e}", meta.run_id),
                (None, Some(why)) => warn!("{} diverged: {why}", meta.run_id),
                (None, None) => info!("{} done ({} iterations)", meta.run_id, meta.iterations),
            }
            pending.insert(j, (records, meta));
            while let Some((records, meta)) = pending.remove(&next_write) {
                if write_error.is_none() {
                    let res = records
                        .iter()
                        .try_for_each(|rec| writer.serialize(rec))
                        .and_then(|_| writer.flush().map_err(csv::Error::from));
                    if let Err(e) = res {
                        write_error = Some(e.into());
                    }
                }
                all_records.extend(records);
                jobs_meta[next_write] = Some(meta);
                next_write += 1;
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    let replications = contexts
        .iter()
        .enumerate()
        .map(|(r, c)| {
            let ctx = c.get().and_then(|c| c.as_ref().ok());
            ReplicationMeta {
                replication: r as u64,
                theta_star: ctx.and_then(|c| c.model.as_ref().map(|m| m.theta_star().to_vec())),
                split: ctx.and_then(|c| c.split.clone()),
            }
        })
        .collect();
    if let Some(dir) = &plan.snapshot_dir {
        for (r, c) in contexts.iter().enumerate() {
            if let Some(Ok(ctx)) = c.get() {
                if let Some(h) = &ctx.h_inv {
                    let mut w = BufWriter::new(File::create(dir.join(format!("r{r}.hinv.ainv")))?);
                    write_snapshot(&mut w, h, 0)?;
                    w.flush()?;
                }
            }
        }
    }
    let meta = ExperimentMeta {
        name: config.name.clone(),
        crate_version: env!("CARGO_PKG_VERSION"),
        d,
        config: config.clone(),
        csv: csv_path.clone(),
        replications,
        jobs: jobs_meta.into_iter().map(|m| m.expect("every job reports")).collect(),
    };
    let f = File::create(&json_path)?;
    serde_json::to_writer_pretty(BufWriter::new(f), &meta)?;
    Ok(ExperimentSummary {
        csv_path,
        json_path,
        records: all_records,
        meta,
    })
}

/// Reads a CSV written by [`run_experiment`].
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
