use std::path::Path;
use std::process::Command;

fn sectlab(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_sectlab")).args(args).current_dir(cwd).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

const SWEEP: &str = r#"{"kind":"sweep","grid":{"dim":2,"n":16},"lambdas":"vline:re=-1,imax=100,n=10,spacing=log","seed":3,"out":"run"}"#;

#[test]
fn minimal_sweep_config_writes_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SWEEP).unwrap();
    let (code, stdout, _) = sectlab(&["sweep", "--config", "c.json", "--out", "a"], dir.path());
    assert_eq!(code, 0, "{stdout}");
    let csv = read(dir.path().join("a/sweep.csv"));
    assert!(csv.starts_with("re_lambda,im_lambda,norm,scaled_norm,status\n"));
    assert_eq!(csv.lines().count(), 11);
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path().join("a/sweep.meta.json"))).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["surrogate"], "l2");
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SWEEP.replace("\"seed\"", "\"surrogate\":\"holder\",\"probes\":4,\"seed\"")).unwrap();
    for out in ["a", "b"] {
        let (code, _, err) = sectlab(&["sweep", "--config", "c.json", "--out", out], dir.path());
        assert_eq!(code, 0, "{err}");
    }
    for f in ["sweep.csv", "sweep.meta.json", "config.meta.json"] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)), "{f}");
    }
    let args = ["flow", "--kind", "toy1d", "--n", "32", "--T", "0.004", "--tau", "1e-3"];
    sectlab(&[&args[..], &["--out", "f1"]].concat(), dir.path());
    sectlab(&[&args[..], &["--out", "f2"]].concat(), dir.path());
    assert_eq!(read(dir.path().join("f1/metrics.csv")), read(dir.path().join("f2/metrics.csv")));
    assert_eq!(read(dir.path().join("f1/state_4.json")), read(dir.path().join("f2/state_4.json")));
}

#[test]
fn unknown_experiment_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SWEEP.replace("\"sweep\"", "\"heatmap\"")).unwrap();
    let (code, _, err) = sectlab(&["sweep", "--config", "c.json"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("`kind`"), "{err}");
    let (code, _, _) = sectlab(&["heatmap"], dir.path());
    assert_eq!(code, 2);
}

#[test]
fn schema_errors_name_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SWEEP.replace("\"seed\"", "\"sede\"")).unwrap();
    let (code, _, err) = sectlab(&["sweep", "--config", "c.json"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("`sede`"), "{err}");
    std::fs::write(dir.path().join("d.json"), SWEEP.replace("\"kind\":\"sweep\"", "\"kind\":\"green\"")).unwrap();
    let (code, _, err) = sectlab(&["sweep", "--config", "d.json"], dir.path());
    assert_eq!(code, 2, "{err}");
}

#[test]
fn missing_inputs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["sweep"],
        &["sweep", "--lambdas", "vline:re=-1", "--dim", "2"],
        &["green", "--operator", "missing.json"],
        &["flow", "--kind", "bach4", "--dim", "2", "--n", "8"],
        &["flow", "--kind", "toy1d", "--u0", "nope.json"],
    ];
    for args in cases {
        let (code, _, err) = sectlab(args, dir.path());
        assert_eq!(code, 2, "{args:?}: {err}");
    }
    let (code, _, _) = sectlab(&["report", "no-such-dir"], dir.path());
    assert_eq!(code, 2);
}

#[test]
fn numeric_failure_exits_with_one() {
    // The sweep runs but the requested bound is violated.
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = sectlab(
        &["sweep", "--dim", "1", "--n", "16", "--lambdas", "vline:re=-1,imax=10,n=4", "--param", "bound=0.5"],
        dir.path(),
    );
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("FAIL"));
}

#[test]
fn report_collects_every_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    sectlab(&["check-admissible", "--dim", "2", "--n", "8", "--out", "r/adm"], dir.path());
    sectlab(&["evolve", "--operator", "bilaplacian", "--n", "32", "--times", "0.01", "--out", "r/ev"], dir.path());
    let (code, stdout, _) = sectlab(&["report", "r"], dir.path());
    assert_eq!(code, 0);
    assert!(stdout.contains("5 artifacts"), "{stdout}");
    let csv = read(dir.path().join("r/report.csv"));
    assert!(csv.lines().any(|l| l.starts_with("ev/evolve,evolve,")));
}

#[test]
fn toy_flow_trajectory_layout() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u0.json"), serde_json::to_string(&vec![0.1f64; 16]).unwrap()).unwrap();
    let (code, _, err) = sectlab(
        &["flow", "--kind", "toy1d", "--n", "16", "--u0", "u0.json", "--T", "0.003", "--tau", "1e-3", "--out", "t"],
        dir.path(),
    );
    assert_eq!(code, 0, "{err}");
    let metrics = read(dir.path().join("t/metrics.csv"));
    assert!(metrics.starts_with("t,step,l2_norm,sup_norm,trace_residual,divergence_residual,min_eigenvalue\n"));
    assert_eq!(metrics.lines().count(), 5);
    let state: serde_json::Value = serde_json::from_str(&read(dir.path().join("t/state_3.json"))).unwrap();
    assert_eq!(state["steps"], 3);
    assert_eq!(state["u"].as_array().unwrap().len(), 16);
}

#[test]
fn negative_zeta_does_not_swallow_the_next_flag() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["parametrix", "--operator", "divergence", "--scheme", "fd2", "--n", "64", "--eps", "0.5,0.25", "--zeta", "-1,0", "--param", "order=0"];
    let (code, stdout, err) = sectlab(&args, dir.path());
    assert_eq!(code, 0, "{stdout}{err}");
    let cfg: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/config.json"))).unwrap();
    assert_eq!(cfg["zeta"], serde_json::json!([-1.0, 0.0]));
    assert_eq!(cfg["params"]["order"], 0);
    let (code, _, _) = sectlab(&["parametrix", "--zeta", "-1"], dir.path());
    assert_eq!(code, 2);
}
