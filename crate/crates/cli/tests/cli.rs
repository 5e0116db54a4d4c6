use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vinestep::estimate::FitJson;
use vinestep::io::read_matrix_csv;
use vinestep::vinemodel::ModelJson;
use vinestep::VineModel;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vinestep"));
    c.env_remove("VINESTEP_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_args(out: &Path) -> Vec<String> {
    [
        "simulate",
        "--structure",
        "dvine",
        "--family",
        "gaussian",
        "--d",
        "10",
        "--theta-model",
        "harmonic",
        "--n",
        "1000",
        "--seed",
        "42",
        "--out",
        s(out),
    ]
    .iter()
    .map(|x| x.to_string())
    .collect()
}

fn run_owned(args: &[String]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn simulate_is_deterministic_with_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (p(dir.path(), "a.csv"), p(dir.path(), "b.csv"));
    assert!(run_owned(&simulate_args(&a)).status.success());
    assert!(run_owned(&simulate_args(&b)).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m = read_matrix_csv(&a).unwrap();
    assert_eq!((m.nrows(), m.ncols()), (1000, 10));
    assert!((0..10).flat_map(|j| m.col(j).to_vec()).all(|x| x > 0.0 && x < 1.0));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p(dir.path(), "a.csv.config.json")).unwrap()).unwrap();
    assert_eq!(side["subcommand"], "simulate");
    assert_eq!(side["config"]["seed"], 42);
    assert_eq!(side["config"]["theta_model"]["name"], "harmonic");
}

#[test]
fn fit_satisfies_first_order_condition_and_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let u = p(dir.path(), "u.csv");
    assert!(run_owned(&simulate_args(&u)).status.success());
    let fit = p(dir.path(), "fit.json");
    let edges = p(dir.path(), "edges.csv");
    ok(&[
        "fit",
        "--in",
        s(&u),
        "--structure",
        "dvine",
        "--family",
        "gaussian",
        "--margins",
        "known",
        "--out",
        s(&fit),
        "--edges-csv",
        s(&edges),
    ]);
    let text = std::fs::read_to_string(&fit).unwrap();
    let fj: FitJson = serde_json::from_str(&text).unwrap();
    assert_eq!(fj.edges.len(), 45);
    let mj: ModelJson = serde_json::from_str(&text).unwrap();
    let model = VineModel::from_json(&mj).unwrap();
    let data = read_matrix_csv(&u).unwrap();
    for (j, s) in model.phi_mean(&data).unwrap().iter().enumerate() {
        assert!(s.abs() <= 1e-6, "edge {j}: mean score {s}");
    }
    let csv = std::fs::read_to_string(&edges).unwrap();
    assert!(csv.starts_with("tree,a,b,D,family,param1,param2,converged,at_boundary,iterations\n"));
    assert_eq!(csv.lines().count(), 46);

    let again = p(dir.path(), "again.csv");
    ok(&["simulate", "--model", s(&fit), "--n", "500", "--seed", "1", "--out", s(&again)]);
    let m = read_matrix_csv(&again).unwrap();
    assert_eq!((m.nrows(), m.ncols()), (500, 10));
    let first = std::fs::read_to_string(&u).unwrap();
    let second = std::fs::read_to_string(&again).unwrap();
    let fields = |t: &str| t.lines().next().unwrap().split(',').count();
    assert_eq!(fields(&first), fields(&second));
}

#[test]
fn validate_a3_example_row_is_negative() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "a3.csv");
    ok(&[
        "validate-a3",
        "--structure",
        "cvine",
        "--family",
        "gaussian",
        "--theta-model",
        "geometric",
        "--d",
        "10",
        "--eps",
        "0.005",
        "--K",
        "50",
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "d,p,theta_model,alpha_rule,eps,K,N,seed,a3_hat,mn2_hat,dn_hat");
    assert_eq!(lines.len(), 2);
    let f: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&f[..4], &["10", "45", "geometric", "constant"]);
    assert_eq!(f[6], "4606");
    let a3: f64 = f[8].parse().unwrap();
    assert!(a3 < 0.0, "{a3}");
}

#[test]
fn validate_mndn_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "mn.csv");
    ok(&[
        "validate-mndn",
        "--structure",
        "cvine",
        "--theta-model",
        "geometric",
        "--d",
        "3,4",
        "--K",
        "3",
        "--out",
        s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r[8], "NaN");
        assert!(r[9].parse::<f64>().unwrap() > 0.0);
        assert!(r[10].parse::<f64>().unwrap() > 0.0);
    }
    let o = run(&[
        "validate-mndn",
        "--structure",
        "cvine",
        "--family",
        "gumbel",
        "--theta-model",
        "geometric",
        "--d",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn study_config_flags_override_and_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "study.json");
    std::fs::write(
        &cfg,
        r#"{"structure":"dvine","family":"gaussian","theta_model":{"name":"geometric"},
            "d":[4,6],"n":[100,400],"replications":3,"seed":1}"#,
    )
    .unwrap();
    let out = p(dir.path(), "study.csv");
    ok(&["study", "--config", s(&cfg), "--seed", "2", "--out", s(&out)]);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p(dir.path(), "study.csv.config.json")).unwrap()).unwrap();
    assert_eq!(side["config"]["seed"], 2);
    assert_eq!(side["config"]["replications"], 3);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with(
        "study_id,structure,family,theta_model,margins_mode,trunc,d,n,rep,seed,maxnorm_stat,sum_stat,nonconverged,wall_ms\n"
    ));
    assert_eq!(text.lines().count(), 13);
    assert!(p(dir.path(), "study.csv.theta.json").exists());

    let again = p(dir.path(), "again.csv");
    let o = bin()
        .args(["study", "--config", s(&cfg), "--seed", "2", "--out", s(&again)])
        .env("VINESTEP_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let reg = p(dir.path(), "reg.csv");
    ok(&["regimes", "--in", s(&out), "--out", s(&reg)]);
    let r = std::fs::read_to_string(&reg).unwrap();
    let lines: Vec<&str> = r.lines().collect();
    assert_eq!(lines[0], "regime,d,n_target,mean_maxnorm_interp");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("linear,4,100,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "x.csv");
    assert_eq!(run(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let o = run(&[
        "simulate",
        "--structure",
        "dvine",
        "--family",
        "clayton",
        "--d",
        "3",
        "--theta-model",
        "zero",
        "--n",
        "10",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    // missing output path
    let o = run(&["simulate", "--structure", "dvine", "--family", "gaussian", "--d", "3", "--theta-model", "zero", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    // bad config file
    let cfg = p(dir.path(), "bad.json");
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(run(&["study", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"structure":"dvine","unknown_key":1}"#).unwrap();
    assert_eq!(run(&["study", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
    // values outside the unit interval under known margins
    let data = p(dir.path(), "raw.csv");
    let rows: String = (0..50).map(|i| format!("{},{}\n", i as f64 * 0.3 - 4.0, (i as f64).sin())).collect();
    std::fs::write(&data, rows).unwrap();
    let fit = p(dir.path(), "f.json");
    let o = run(&["fit", "--in", s(&data), "--structure", "dvine", "--family", "gaussian", "--out", s(&fit)]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "numerical");
    // the same data with empirical margins is fine
    ok(&[
        "fit",
        "--in",
        s(&data),
        "--structure",
        "dvine",
        "--family",
        "gaussian",
        "--margins",
        "empirical",
        "--out",
        s(&fit),
    ]);
    let o = bin()
        .args(["simulate", "--model", s(&fit), "--n", "5", "--out", s(&out)])
        .env("VINESTEP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
