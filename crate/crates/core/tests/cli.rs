use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const ANNOTATIONS: &str = "\
item_id,group_id,annotator_id,kind,value
x1,a,d1,direct,toxic
x1,a,d2,direct,very toxic
x1,a,d3,direct,toxic
x1,a,d4,direct,healthy
x1,b,d5,direct,toxic
x1,b,d6,direct,healthy
x2,a,d1,direct,healthy
x2,a,d2,direct,neither
x2,b,d5,direct,very toxic
x1,a,p1,perspective,0.6
x1,a,p2,perspective,0.8
x1,b,p3,perspective,50%
x1,b,p4,perspective,30%
x2,a,p1,perspective,0.1
x2,b,p3,perspective,0.9
x2,b,p4,perspective,0.7
";

const PREDICTIONS: &str = "\
item_id,group_id,estimator_id,sample_idx,value
x1,a,llm,0,0.5
x1,a,llm,1,0.9
x1,b,llm,0,0.4
x1,b,llm,1,0.6
x2,a,llm,0,0.2
x2,a,llm,1,0.0
x2,b,llm,0,1.0
x2,b,llm,1,0.8
";

fn ptlens(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ptlens")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_matches_enumeration_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.csv", ANNOTATIONS);
    let pred = write(dir.path(), "pred.csv", PREDICTIONS);
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    for out in [&out1, &out2] {
        let (code, _, err) = ptlens(&[
            "analyze", "--annotations", &ann, "--predictions", &pred, "--out", s(out), "--seed", "7", "--k-max", "3",
        ]);
        assert_eq!(code, 0, "{err}");
    }
    let report = read_json(out1.join("metrics.json"));
    let items = report["report"]["items"].as_array().unwrap();
    // 2 items x 2 groups x 2 estimators x 3 budgets
    assert_eq!(items.len(), 24);
    let find = |est: &str, item: &str, group: &str, k: u64| {
        items
            .iter()
            .find(|m| m["estimator"] == est && m["item"] == item && m["group"] == group && m["k"] == k)
            .unwrap()
            .clone()
    };
    // pool {0.5, 0.9}, f* = 3/4
    let m = find("llm", "x1", "a", 1);
    assert!((m["mse"].as_f64().unwrap() - 0.0425).abs() < 1e-12);
    assert!((m["bias"].as_f64().unwrap() + 0.05).abs() < 1e-12);
    assert!((m["variance"].as_f64().unwrap() - 0.04).abs() < 1e-12);
    // k = 2 by enumeration of the four ordered pairs: means 0.5, 0.7, 0.7, 0.9
    let m = find("llm", "x1", "a", 2);
    let oracle = [0.5f64, 0.7, 0.7, 0.9].iter().map(|e| (e - 0.75).powi(2)).sum::<f64>() / 4.0;
    assert!((m["mse"].as_f64().unwrap() - oracle).abs() < 1e-12);
    // perspective pool of one annotator: no variance
    let m = find("human_pt", "x2", "a", 3);
    assert!((m["mse"].as_f64().unwrap() - 0.01).abs() < 1e-12);
    assert_eq!(m["variance"].as_f64().unwrap(), 0.0);

    for f in ["metrics.json", "summary.json", "manifest.json"] {
        assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f} differs");
    }
    let manifest = read_json(out1.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn analyze_csv_format_and_seed_changes_hash() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.csv", ANNOTATIONS);
    let pred = write(dir.path(), "pred.csv", PREDICTIONS);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let (code, _, err) = ptlens(&[
            "analyze", "--annotations", &ann, "--predictions", &pred, "--out", s(out), "--seed", seed, "--format", "csv",
            "--estimator", "llm",
        ]);
        assert_eq!(code, 0, "{err}");
    }
    let items = fs::read_to_string(a.join("metrics_items.csv")).unwrap();
    assert!(items.starts_with("item_id,group_id,estimator_id,k,"));
    assert!(!items.contains("human_pt"));
    assert!(a.join("metrics_aggregates.csv").exists());
    let ha = read_json(a.join("manifest.json"))["config_hash"].clone();
    let hb = read_json(b.join("manifest.json"))["config_hash"].clone();
    assert_ne!(ha, hb);
}

#[test]
fn analyze_validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ann = write(dir.path(), "ann.csv", ANNOTATIONS);
    let pred = write(dir.path(), "pred.csv", PREDICTIONS);
    let out = dir.path().join("out");

    let (code, _, err) = ptlens(&["analyze", "--annotations", &ann, "--predictions", &pred, "--out", s(&out), "--seed", "1", "--group", "zz"]);
    assert_eq!(code, 2);
    assert!(err.contains("empty join"), "{err}");

    let (code, _, err) = ptlens(&["analyze", "--annotations", &ann, "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("--seed"), "{err}");

    let (code, _, _) = ptlens(&["analyze", "--annotations", &ann, "--out", s(&out), "--seed", "1", "--k-min", "0"]);
    assert_eq!(code, 2);

    let bad = write(dir.path(), "bad.csv", "item_id,group_id,annotator_id,kind,value\nx1,a,d1,direct,maybe\n");
    let (code, _, err) = ptlens(&["analyze", "--annotations", &bad, "--out", s(&out), "--seed", "1"]);
    assert_eq!(code, 2);
    assert!(err.contains("row 2"), "{err}");

    let (code, _, _) = ptlens(&["analyze", "--annotations", "/no/such/file.csv", "--out", s(&out), "--seed", "1"]);
    assert_eq!(code, 2);

    let (code, _, _) = ptlens(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn decide_from_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        // identical specs
        (r#"{"llm": {"mu_w": 0.1, "var_eps": 0.05, "gamma": 0.2}, "human": {"mu_w": 0.1, "var_eps": 0.05, "gamma": 0.2}}"#, "tie", None),
        (r#"{"llm": {"mu_w": 0.0, "var_eps": 0.001}, "human": {"mu_w": 0.2, "var_eps": 0.05, "gamma": 0.1}, "human_budget": 5}"#, "llm", None),
        (r#"{"llm": {"mu_w": 0.15, "var_eps": 0.001}, "human": {"var_eps": 0.09, "gamma": 0.1}}"#, "llm", Some(6)),
    ];
    for (i, (cfg, winner, crossover)) in cases.iter().enumerate() {
        let path = write(dir.path(), &format!("cfg{i}.json"), cfg);
        let out = dir.path().join(format!("out{i}"));
        let (code, _, err) = ptlens(&["decide", "--config", &path, "--out", s(&out)]);
        assert_eq!(code, 0, "{err}");
        let d = &read_json(out.join("decision.json"))[0];
        assert_eq!(d["decision"]["winner"], *winner);
        if let Some(n) = crossover {
            assert_eq!(d["crossover"], *n);
        }
        assert_eq!(d["curves"].as_array().unwrap().len(), 20);
    }
    let bad = write(dir.path(), "bad.json", r#"{"llm": {"gamma": 1.5}, "human": {}}"#);
    let (code, _, _) = ptlens(&["decide", "--config", &bad, "--out", s(&dir.path().join("x"))]);
    assert_eq!(code, 2);
}

/// 60 items in one group: four direct labels each, two perspective
/// annotators and four LLM samples drawn from the annotator model.
fn fit_fixture(dir: &Path) -> (String, String) {
    use ptlens::annotator::{sample_panel, AnnotatorSpec};
    use rand::Rng;
    let mut r = ptlens::rng::substream(1, &["cli-fit"]);
    let llm = AnnotatorSpec::simple(0.15, 0.005, 0.3).unwrap();
    let human = AnnotatorSpec::simple(0.0, 0.04, 0.2).unwrap();
    let mut ann = String::from("item_id,group_id,annotator_id,kind,value\n");
    let mut pred = String::from("item_id,group_id,estimator_id,sample_idx,value\n");
    for i in 0..60 {
        let toxic = r.random_range(0..=4);
        for a in 0..4 {
            let level = if a < toxic { "toxic" } else { "healthy" };
            ann.push_str(&format!("x{i},g,d{a},direct,{level}\n"));
        }
        let f = toxic as f64 / 4.0;
        for (a, v) in sample_panel(&human, f, 2, &mut r, true).unwrap().predictions().iter().enumerate() {
            ann.push_str(&format!("x{i},g,p{a},perspective,{v:.6}\n"));
        }
        for (j, v) in sample_panel(&llm, f, 4, &mut r, true).unwrap().predictions().iter().enumerate() {
            pred.push_str(&format!("x{i},g,llm,{j},{v:.6}\n"));
        }
    }
    (write(dir, "ann.csv", &ann), write(dir, "pred.csv", &pred))
}

#[test]
fn decide_fits_from_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, pred) = fit_fixture(dir.path());
    let out = dir.path().join("out");
    let (code, _, err) = ptlens(&[
        "decide", "--annotations", &ann, "--predictions", &pred, "--llm", "llm", "--human", "human_pt", "--out", s(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let d = read_json(out.join("decision.json"));
    assert_eq!(d.as_array().unwrap().len(), 1);
    assert_eq!(d[0]["group"], "g");
    let fitted = d[0]["fitted"].as_array().unwrap();
    assert_eq!(fitted.len(), 2);
    assert!((fitted[0]["mu_hat"].as_f64().unwrap() - 0.15).abs() < 0.05, "{}", fitted[0]);
    assert!(d[0]["crossover"].is_u64());

    // two items per estimator cannot support a gamma estimate in [0, 1)
    let ann = write(dir.path(), "small_ann.csv", ANNOTATIONS);
    let pred = write(dir.path(), "small_pred.csv", PREDICTIONS);
    let (code, _, err) = ptlens(&[
        "decide", "--annotations", &ann, "--predictions", &pred, "--llm", "llm", "--human", "human_pt", "--group", "b",
        "--out", s(&out),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("gamma"), "{err}");
}

fn dpt_fixture(dir: &Path) -> (String, String) {
    // f*(a) = 1, 0.5, 0, 0.5 and f*(b) = 0, 0.5, 1, 1
    let labels = [("x1", "a", ["toxic", "toxic"]), ("x2", "a", ["toxic", "healthy"]), ("x3", "a", ["healthy", "healthy"]),
        ("x4", "a", ["healthy", "toxic"]), ("x1", "b", ["healthy", "healthy"]), ("x2", "b", ["toxic", "healthy"]),
        ("x3", "b", ["toxic", "toxic"]), ("x4", "b", ["toxic", "toxic"])];
    let mut ann = String::from("item_id,group_id,annotator_id,kind,value\n");
    let mut pred = String::from("item_id,group_id,estimator_id,sample_idx,value\n");
    let f = |l: &[&str; 2]| l.iter().filter(|x| **x == "toxic").count() as f64 / 2.0;
    for (item, group, l) in &labels {
        ann.push_str(&format!("{item},{group},u1,direct,{}\n{item},{group},u2,direct,{}\n", l[0], l[1]));
        pred.push_str(&format!("{item},{group},oracle,0,{}\n", f(l)));
        pred.push_str(&format!("{item},{group},flat,0,0.4\n"));
    }
    (write(dir, "ann.csv", &ann), write(dir, "pred.csv", &pred))
}

#[test]
fn dpt_isolates_pair_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, pred) = dpt_fixture(dir.path());
    let out = dir.path().join("out");
    let (code, _, err) = ptlens(&[
        "dpt", "--annotations", &ann, "--predictions", &pred, "--out", s(&out), "--seed", "3", "--bootstrap", "200",
    ]);
    assert_eq!(code, 0, "{err}");
    let entries = read_json(out.join("dpt.json"));
    let entries = entries.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    let oracle = entries.iter().find(|e| e["estimator"] == "oracle").unwrap();
    assert!((oracle["report"]["rho"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(oracle["report"]["directional_accuracy"], 1.0);
    let flat = entries.iter().find(|e| e["estimator"] == "flat").unwrap();
    assert!(flat["report"].is_null());
    assert!(flat["error"].as_str().unwrap().contains("correlation undefined"));
    assert!(out.join("scatter_oracle_a_b.csv").exists());

    let (code, _, _) = ptlens(&["dpt", "--annotations", &ann, "--predictions", &pred, "--out", s(&out), "--seed", "3", "--pair", "a"]);
    assert_eq!(code, 2);
}

#[test]
fn simulate_preset_and_synthesize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let (code, _, err) = ptlens(&[
        "simulate", "--preset", "degenerate", "--seed", "5", "--replications", "4000", "--synthesize", "6", "--out", s(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let report = read_json(out.join("scenario_report.json"));
    // identical estimators tie within Monte Carlo error
    for k in [1, 3, 9] {
        let aggs: Vec<&Value> = report["empirical"]["aggregates"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|a| a["k"] == k)
            .collect();
        assert_eq!(aggs.len(), 3);
        for x in &aggs {
            for y in &aggs {
                let gap = (x["mean_mse"].as_f64().unwrap() - y["mean_mse"].as_f64().unwrap()).abs();
                let se = x["mse_se"].as_f64().unwrap().hypot(y["mse_se"].as_f64().unwrap());
                assert!(gap <= 5.0 * se, "k={k}: gap {gap} se {se}");
            }
        }
    }
    let preds = fs::read_to_string(out.join("synthetic_predictions.csv")).unwrap();
    // 2 items x 3 estimators x 6 samples + header
    assert_eq!(preds.lines().count(), 37);
    assert!(out.join("synthetic_truth.csv").exists());

    let (code, _, _) = ptlens(&["simulate", "--preset", "nope", "--seed", "1", "--out", s(&out)]);
    assert_eq!(code, 2);
    let (code, _, _) = ptlens(&["simulate", "--preset", "degenerate", "--out", s(&out)]);
    assert_eq!(code, 2);
}

#[test]
fn simulate_scenario_file_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = r#"{
        "name": "tiny", "seed": 1, "replications": 500, "budgets": [1, 2],
        "items": [{"communities": [{"weight": 1.0, "mean": 0.4}]}],
        "estimators": {"e": {"kind": "annotator", "spec": {"mu_w": 0.1, "var_eps": 0.02}}, "d": {"kind": "direct"}}
    }"#;
    let path = write(dir.path(), "s.json", scenario);
    let out = dir.path().join("out");
    let (code, _, err) = ptlens(&["simulate", "--scenario", &path, "--seed", "2", "--format", "csv", "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let curves = fs::read_to_string(out.join("scenario_curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 5);
    assert_eq!(read_json(out.join("manifest.json"))["inputs"].as_array().unwrap().len(), 1);

    let bad = write(dir.path(), "bad.json", &scenario.replace("\"budgets\": [1, 2]", "\"budgets\": []"));
    let (code, _, _) = ptlens(&["simulate", "--scenario", &bad, "--seed", "2", "--out", s(&out)]);
    assert_eq!(code, 2);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let (code, stdout, err) = ptlens(&["verify", "--seed", "2", "--trials", "300", "--panels", "2000", "--out", s(&out)]);
    assert_eq!(code, 0, "{stdout}{err}");
    assert!(stdout.contains("overall: PASS"));
    let ledger = read_json(out.join("ledger.json"));
    assert_eq!(ledger["passed"], true);
    assert!(out.join("ledger.txt").exists());

    let (code, stdout, _) = ptlens(&[
        "verify", "--seed", "1", "--trials", "300", "--panels", "2000", "--inject-floor-offset", "0.001", "--out", s(&out),
    ]);
    assert_eq!(code, 3);
    assert!(stdout.contains("expanded_floor_identity") && stdout.contains("FAIL"));

    let (code, _, _) = ptlens(&["verify", "--seed", "1", "--trials", "0", "--out", s(&out)]);
    assert_eq!(code, 2);
}

#[test]
fn mix_appends_mixed_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let pred = write(
        dir.path(),
        "pred.csv",
        "item_id,group_id,estimator_id,sample_idx,value\nx,g,a,0,0.2\nx,g,a,1,0.4\nx,g,b,0,0.6\nx,g,b,1,0.8\nx,g,b,2,1.0\n",
    );
    let out = dir.path().join("mix");
    let (code, _, err) = ptlens(&["mix", "--predictions", &pred, "--members", "a,b", "--weights", "0.25,0.75", "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let table = ptlens::data::PredictionTable::load(out.join("predictions_mixed.csv")).unwrap();
    let mixed: Vec<f64> = table.records().iter().filter(|r| r.estimator_id == "mixed").map(|r| r.value).collect();
    assert_eq!(mixed.len(), 2);
    assert!((mixed[0] - 0.5).abs() < 1e-9 && (mixed[1] - 0.7).abs() < 1e-9);
    let summary = read_json(out.join("mix_summary.json"));
    assert_eq!(summary["truncations"].as_array().unwrap().len(), 1);

    let (code, _, _) = ptlens(&["mix", "--predictions", &pred, "--members", "a,zz", "--out", s(&out)]);
    assert_eq!(code, 2);
}
