use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use msna::bench::{emit_plots, run_experiment, summarize, DataSpec, DimExpr, OptimizerSpec, RunConfig};
use msna::hessian_inverse::read_snapshot;
use msna::linalg::{dist_sq, frob_dist};
use msna::optim::OptimizerKind;
use msna::problems::ProblemKind;
use msna::Error;

fn config(out: &Path, replications: u64, snapshots: bool) -> RunConfig {
    let mut cfg = RunConfig::new(
        ProblemKind::Linear,
        DataSpec::synthetic(5),
        vec![
            OptimizerSpec::new(OptimizerKind::SgdAvg),
            OptimizerSpec::new(OptimizerKind::Msna).with_ell(DimExpr::Value(2.0)),
        ],
    );
    cfg.n_samples = Some(5_000);
    cfg.checkpoints = Some(6);
    cfg.replications = replications;
    cfg.snapshots = snapshots;
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Textbook definition: position h = (n - 1) q between order statistics.
fn reference_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q;
    let i = h as usize;
    if i + 1 >= v.len() {
        return v[i];
    }
    v[i] + (h - i as f64) * (v[i + 1] - v[i])
}

#[test]
fn plot_band_matches_reference_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&config(dir.path(), 10, false), Path::new(".")).unwrap();
    let series = summarize(&s.csv_path, "theta_err").unwrap();
    assert_eq!(series.len(), 2);
    for sr in &series {
        assert_eq!(sr.points.len(), 6);
        for p in &sr.points {
            let vals: Vec<f64> = s
                .records
                .iter()
                .filter(|r| r.optimizer == sr.optimizer && r.samples_seen == p.samples_seen)
                .map(|r| r.theta_err.unwrap())
                .collect();
            assert_eq!(vals.len(), 10);
            assert_eq!(p.replications, 10);
            let (lo, hi) = p.band.unwrap();
            for (got, q) in [(lo, 0.25), (p.median, 0.5), (hi, 0.75)] {
                let want = reference_quantile(&vals, q);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300), "{got} vs {want}");
            }
        }
    }
    let (svg, _) = emit_plots(&s.csv_path, "theta_err", dir.path()).unwrap();
    assert!(svg.ends_with(format!("{}_theta_err.svg", s.meta.name)));
    let text = std::fs::read_to_string(svg).unwrap();
    assert!(text.contains("<svg"));
}

#[test]
fn single_replication_has_no_band() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&config(dir.path(), 1, false), Path::new(".")).unwrap();
    let series = summarize(&s.csv_path, "theta_err").unwrap();
    assert!(series.iter().flat_map(|s| &s.points).all(|p| p.band.is_none() && p.replications == 1));
    emit_plots(&s.csv_path, "theta_err", dir.path()).unwrap();
}

#[test]
fn empty_and_malformed_csv_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "optimizer,samples_seen,theta_err\n").unwrap();
    assert!(matches!(summarize(&empty, "theta_err"), Err(Error::Empty(_))));

    let partial = dir.path().join("partial.csv");
    std::fs::write(&partial, "optimizer,theta_err\nsgd,1.0\n").unwrap();
    match summarize(&partial, "a_err") {
        Err(Error::MissingColumns(cols)) => assert_eq!(cols, vec!["samples_seen", "a_err"]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn snapshots_reproduce_final_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(&config(dir.path(), 2, true), Path::new(".")).unwrap();
    let snaps = dir.path().join("snapshots");
    for job in &s.meta.jobs {
        let last = s
            .records
            .iter()
            .filter(|r| r.run_id == job.run_id)
            .max_by_key(|r| r.samples_seen)
            .unwrap();
        let rep = &s.meta.replications[job.replication as usize];
        let theta: Vec<f64> =
            serde_json::from_reader(File::open(snaps.join(format!("{}.theta.json", job.run_id))).unwrap()).unwrap();
        let theta_err = dist_sq(&theta, rep.theta_star.as_ref().unwrap());
        assert!((theta_err - last.theta_err.unwrap()).abs() <= 1e-12 * theta_err);

        let a_path = snaps.join(format!("{}.ainv", job.run_id));
        if job.optimizer.optimizer.kind.is_newton() {
            let (a, n) = read_snapshot(BufReader::new(File::open(a_path).unwrap())).unwrap();
            assert_eq!(n, job.iterations);
            let h_path = snaps.join(format!("r{}.hinv.ainv", job.replication));
            let (h, _) = read_snapshot(BufReader::new(File::open(h_path).unwrap())).unwrap();
            let a_err = frob_dist(&a, &h).unwrap().powi(2);
            assert!((a_err - last.a_err.unwrap()).abs() <= 1e-12 * a_err);
        } else {
            assert!(!a_path.exists());
        }
    }
}
