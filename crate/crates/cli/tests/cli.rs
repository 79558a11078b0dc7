use std::path::Path;
use std::process::{Command, Output};

fn shoot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirac-shoot")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

#[test]
fn exit_codes() {
    assert_eq!(code(&shoot(&["ground-state", "--omega", "1"])), 1);
    assert_eq!(code(&shoot(&["ground-state", "--m", "1", "--omega", "1.5"])), 1);
    assert_eq!(code(&shoot(&["classify", "--lambda", "-0.5"])), 1);
    assert_eq!(code(&shoot(&["classify", "--lambda", "0"])), 1);
    assert_eq!(code(&shoot(&["classify"])), 1);
    assert_eq!(code(&shoot(&["asymptotics", "--epsilon", "1.5"])), 1);
    assert_eq!(code(&shoot(&["nonsense"])), 1);
    assert_eq!(code(&shoot(&["--version"])), 0);
    // an unreachable tolerance exhausts the step budget: a computation failure
    let o = shoot(&["ground-state", "--tol-rel", "1e-30"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step budget"));
}

#[test]
fn verify_passes_and_detects_corruption() {
    let ok = shoot(&["verify"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let env = json(&ok);
    assert!(env["payload"].as_array().unwrap().iter().all(|c| c["passed"] == true));

    let bad = shoot(&["verify", "--inject-fault", "corrupt-bubble"]);
    assert_eq!(code(&bad), 3);
    let failed: Vec<String> = json(&bad)["payload"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(failed, vec!["bubble_residual"]);
}

#[test]
fn ground_state_envelope_and_determinism() {
    let a = shoot(&["ground-state"]);
    assert_eq!(code(&a), 0);
    let env = json(&a);
    assert_eq!(env["schema_version"], "1");
    assert_eq!(env["command"], "ground-state");
    assert_eq!(env["params"]["m"], 1.0);
    assert_eq!(env["payload"]["node_count"], 0);
    assert!(env["payload"]["decay_slope"].as_f64().unwrap() <= -0.2);
    let b = shoot(&["ground-state"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn classify_verdicts_in_input_order() {
    let o = shoot(&["classify", "--lambda", "10", "--lambda", "0.5,1.0"]);
    assert_eq!(code(&o), 0);
    let list = json(&o)["payload"].as_array().unwrap().clone();
    let lambdas: Vec<f64> = list.iter().map(|c| c["lambda"].as_f64().unwrap()).collect();
    assert_eq!(lambdas, vec![10.0, 0.5, 1.0]);
    assert!(list[0]["node_count"].as_u64().unwrap() >= 1);
    assert_eq!(list[1]["verdict"], serde_json::json!({"A": 0}));
}

#[test]
fn csv_headers_and_sibling_tables() {
    let o = shoot(&["ground-state", "--format", "csv"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("r,u,v,H\n"));
    assert!(!text.contains('\r'));
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 4);
    assert!(row[0].contains('e'));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gs.csv");
    let o = shoot(&["ground-state", "--format", "csv", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("r,u,v,H\n"));
    assert!(std::fs::read_to_string(dir.path().join("gs.summary.csv")).unwrap().starts_with("key,value\n"));

    let o = shoot(&["classify", "--lambda", "0.5", "--format", "csv"]);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("lambda,verdict,node_count,r,H,certificate_r,note\n"));
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# two masses\nm = 2\nomega = 1\nlambda = 0.5\n").unwrap();
    let c = cfg.to_str().unwrap();

    let env = json(&shoot(&["classify", "--config", c]));
    assert_eq!((env["params"]["m"].as_f64(), env["params"]["omega"].as_f64()), (Some(2.0), Some(1.0)));

    let env = json(&shoot(&["classify", "--config", c, "--omega", "0.25", "--lambda", "0.75"]));
    assert_eq!(env["params"]["m"], 2.0);
    assert_eq!(env["params"]["omega"], 0.25);
    assert_eq!(env["params"]["lambdas"], serde_json::json!([0.75]));

    std::fs::write(&cfg, "mass = 2\n").unwrap();
    assert_eq!(code(&shoot(&["classify", "--config", c])), 1);
    assert_eq!(code(&shoot(&["classify", "--config", "/nonexistent/run.cfg"])), 1);
}

#[test]
fn json_written_to_out_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("portrait.json");
    let o = shoot(&["portrait", "--resolution", "128", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let env: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(env["command"], "portrait");
    assert!(Path::new(&out).exists());
}

#[test]
fn asymptotics_table_shape() {
    let o = shoot(&["asymptotics"]);
    assert_eq!(code(&o), 0);
    let env = json(&o);
    let ratios = env["payload"]["study"]["ratios"].as_array().unwrap();
    assert_eq!(ratios.len(), 2);
    for r in ratios {
        assert!((3.0..=5.0).contains(&r.as_f64().unwrap()));
    }
    assert_eq!(env["payload"]["bounds"].as_array().unwrap().len(), 3);

    let o = shoot(&["asymptotics", "--epsilon", "0.05,0.2", "--format", "csv"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("epsilon,sup_error,ratio,"));
    assert!(lines.next().unwrap().starts_with("2.0000000000000001e-1,"));
    assert!(String::from_utf8(o.stderr).unwrap().contains("sorted"));
}

#[test]
fn portrait_contains_origin_and_attracted_runs() {
    let o = shoot(&["portrait", "--resolution", "256", "--lambda", "0.5,2.5"]);
    assert_eq!(code(&o), 0);
    let env = json(&o);
    let lines = env["payload"]["level_set"]["polylines"].as_array().unwrap();
    let closest = lines
        .iter()
        .flat_map(|l| l.as_array().unwrap())
        .map(|p| p["u"].as_f64().unwrap().abs() + p["v"].as_f64().unwrap().abs())
        .fold(f64::INFINITY, f64::min);
    assert!(closest < 1e-9, "{closest}");
    let trajectories = env["payload"]["trajectories"].as_array().unwrap();
    assert_eq!(trajectories.len(), 2);
    for t in trajectories {
        let report = &t["attraction"];
        assert!(report["terminal_energy"].as_f64().unwrap() < 0.0);
        assert!(report["terminal_distance"].as_f64().unwrap() < 0.05);
    }
}
