use std::path::Path;
use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn run_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    std::fs::write(
        &cfg,
        r#"
name = "smoke"
n_samples = 4000
checkpoints = 4
replications = 2

[problem]
kind = "logistic"

[data]
source = "synthetic"
d = 4
hessian_mc_samples = 2000
eval_samples = 500

[[optimizers]]
kind = "sgd"

[[optimizers]]
kind = "msna_avg"
ell = "sqrt(d)"
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let st = bench()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let csv = out.join("smoke.csv");
    assert!(out.join("smoke.json").exists());
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 1 + 2 * 2 * 4);

    let st = bench()
        .args(["plot", "--metric", "test_loss", "--csv"])
        .arg(&csv)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(out.join("smoke_test_loss.svg").exists());
}

#[test]
fn bad_inputs_exit_with_error_code() {
    let st = bench()
        .args(["run", "--config", "/nonexistent/run.toml"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "name = \"x\"\nunknown_key = 1\n[data]\nsource = \"synthetic\"\nd = 3\n").unwrap();
    let st = bench().args(["run", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(2));
    assert!(!Path::new("out/x.csv").exists());
}

#[test]
fn verify_subcommand_passes() {
    let out = bench().args(["verify", "--seed", "3"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["ill_conditioned.toml", "dataset.toml"] {
        let cfg = msna::bench::RunConfig::from_file(&dir.join(name)).unwrap();
        cfg.validate().unwrap();
    }
}
