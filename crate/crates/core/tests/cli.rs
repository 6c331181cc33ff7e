use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use csode::cli::{canonical_hash, run, RunManifest};
use csode::dynamics::{ArchSpec, VectorField};
use csode::training::scaling_lr;
use serde_json::Value;

fn csode_cmd(args: &[&str]) -> i32 {
    let mut full = vec!["csode"];
    full.extend_from_slice(args);
    run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn spiral_data(root: &Path) -> PathBuf {
    let d = root.join("spiral");
    assert_eq!(csode_cmd(&["simulate", "--system", "spiral", "--seed", "1", "--out", s(&d)]), 0);
    d
}

fn scalar_model(root: &Path, name: &str, a0: f64, a1: f64, w: f64) -> PathBuf {
    let mut f = VectorField::new(ArchSpec::csode(1, vec![1], vec![4]).with_seed(1)).unwrap();
    f.set_param("A0", &[a0]).unwrap();
    f.set_param("subnet.0.A", &[a1]).unwrap();
    f.set_param("subnet.0.W", &[w]).unwrap();
    f.zero_params("control");
    let p = root.join(name);
    f.save_model(&p).unwrap();
    p
}

#[test]
fn simulate_spiral_writes_one_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    assert!(d.join("manifest.json").exists());
    let trajs: Vec<_> = fs::read_dir(&d)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("traj_"))
        .collect();
    assert_eq!(trajs.len(), 1);
}

#[test]
fn simulate_hr_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(csode_cmd(&["simulate", "--system", "hr", "--n-sims", "5", "--seed", "7", "--out", s(d)]), 0);
    }
    let fa = dir_files(&a);
    assert_eq!(fa, dir_files(&b));
    let csvs: Vec<_> = fa.keys().filter(|k| k.ends_with(".csv")).collect();
    assert_eq!(csvs.len(), 5);
    for k in csvs {
        let text = std::str::from_utf8(&fa[k]).unwrap();
        assert_eq!(text.lines().count(), 3000 + 1, "{k}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(csode_cmd(&["simulate", "--system", "lorenz", "--out", s(&out)]), 2);
    assert_eq!(csode_cmd(&["simulate", "--system", "hr"]), 2);
    assert_eq!(csode_cmd(&["frobnicate"]), 2);
    assert_eq!(csode_cmd(&["train", "--data", s(&out), "--arch", "transformer", "--out", s(&out)]), 2);
    assert_eq!(csode_cmd(&["--help"]), 0);
}

#[test]
fn train_node_spiral_history_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    let out = tmp.path().join("node");
    let code = csode_cmd(&[
        "train", "--data", s(&d), "--arch", "node", "--epochs", "50", "--width", "8", "--lr", "1e-2", "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    let hist = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 51);
    let res = read_json(&out.join("results.json"));
    assert!(res["final_metrics"]["test_mae"].as_f64().unwrap().is_finite());
    assert!(res["wall_time_s"].as_f64().unwrap() >= 0.0);

    let manifest: RunManifest = serde_json::from_value(read_json(&out.join("run.json"))).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.seed, Some(0));
    assert_eq!(manifest.config_hash, canonical_hash(&manifest.config));
    for f in ["model.json", "history.csv", "results.json"] {
        assert!(manifest.artifacts.contains(&out.join(f)), "{f} missing from manifest");
    }
    for a in &manifest.artifacts {
        assert!(a.exists(), "{a:?}");
    }
}

#[test]
fn match_params_reports_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    let node = tmp.path().join("node");
    assert_eq!(
        csode_cmd(&["train", "--data", s(&d), "--arch", "node", "--epochs", "0", "--width", "32", "--out", s(&node)]),
        0
    );
    let target = read_json(&node.join("results.json"))["param_count"].as_u64().unwrap();
    let cs = tmp.path().join("cs");
    let t = target.to_string();
    assert_eq!(
        csode_cmd(&["train", "--data", s(&d), "--arch", "csode", "--epochs", "0", "--match-params", &t, "--out", s(&cs)]),
        0
    );
    let res = read_json(&cs.join("results.json"));
    let count = res["param_count"].as_u64().unwrap();
    assert_eq!(res["target_params"].as_u64(), Some(target));
    assert!((count as f64 - target as f64).abs() <= 0.01 * target as f64, "{count} vs {target}");
    let field = VectorField::load_model(&cs.join("model.json")).unwrap();
    assert_eq!(field.param_count() as u64, count);
}

#[test]
fn zero_epochs_persists_initial_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    let out = tmp.path().join("m");
    assert_eq!(
        csode_cmd(&["train", "--data", s(&d), "--arch", "csode", "--epochs", "0", "--width", "6", "--seed", "3", "--out", s(&out)]),
        0
    );
    let loaded = VectorField::load_model(&out.join("model.json")).unwrap();
    let fresh = VectorField::new(loaded.spec().clone()).unwrap();
    assert_eq!(loaded.spec().seed, 3);
    assert_eq!(loaded.params().flat(), fresh.params().flat());
    assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 1);
}

#[test]
fn divergent_training_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    let out = tmp.path().join("m");
    let code = csode_cmd(&[
        "train", "--data", s(&d), "--arch", "node", "--epochs", "20", "--lr", "1e100", "--hidden-activation", "identity", "--width", "8", "--out", s(&out),
    ]);
    assert_eq!(code, 4);
}

#[test]
fn evaluate_ground_truth_and_repeatability() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    let gt = tmp.path().join("gt.json");
    assert_eq!(csode_cmd(&["evaluate", "--model", "ground-truth", "--data", s(&d), "--out", s(&gt)]), 0);
    let r = read_json(&gt);
    assert_eq!(r["mse"].as_f64(), Some(0.0));
    assert_eq!(r["mae"].as_f64(), Some(0.0));
    assert_eq!(r["chamfer"].as_f64(), Some(0.0));
    assert_eq!(r["r2"].as_f64(), Some(1.0));

    let m = tmp.path().join("m");
    assert_eq!(
        csode_cmd(&["train", "--data", s(&d), "--arch", "anode", "--epochs", "3", "--width", "8", "--out", s(&m)]),
        0
    );
    let model = m.join("model.json");
    let (e1, e2) = (tmp.path().join("e1.json"), tmp.path().join("e2.json"));
    for e in [&e1, &e2] {
        let args = ["evaluate", "--model", s(&model), "--data", s(&d), "--metrics", "mse,mae,r2", "--out", s(e)];
        assert_eq!(csode_cmd(&args), 0);
    }
    assert_eq!(fs::read(&e1).unwrap(), fs::read(&e2).unwrap());
    assert!(read_json(&e1).get("chamfer").is_none_or(|v| v.is_null()));
}

#[test]
fn unknown_metric_lists_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_csode"))
        .args(["evaluate", "--model", "ground-truth", "--data", s(&d), "--metrics", "mse,rmse"])
        .args(["--out", s(&tmp.path().join("r.json"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["mse", "mae", "r2", "chamfer"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn layout_mismatch_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = tmp.path().join("hr");
    assert_eq!(csode_cmd(&["simulate", "--system", "hr", "--n-sims", "1", "--out", s(&hr)]), 0);
    let model = scalar_model(tmp.path(), "scalar.json", -2.0, -0.1, 1.0);
    let out = tmp.path().join("r.json");
    assert_eq!(csode_cmd(&["evaluate", "--model", s(&model), "--data", s(&hr), "--out", s(&out)]), 5);
}

#[test]
fn certify_scalar_model() {
    let tmp = tempfile::tempdir().unwrap();
    let model = scalar_model(tmp.path(), "scalar.json", -2.0, -0.1, 1.0);
    let out = tmp.path().join("verdict.json");
    assert_eq!(
        csode_cmd(&["certify", "--model", s(&model), "--search-scalar", "--samples", "500", "--out", s(&out)]),
        0
    );
    let v = read_json(&out);
    assert_eq!(v["certificate"], "Certified");
    assert_eq!(v["contraction"], "Contracting");
    assert_eq!(v["v_tilde_non_increasing"], true);
    assert_eq!(v["assumption3"]["satisfiability_ratio"].as_f64(), Some(1.0));
    assert_eq!(v["contraction_pairs"].as_array().unwrap().len(), 20);
}

#[test]
fn certify_unstable_model_not_contracting() {
    let tmp = tempfile::tempdir().unwrap();
    let model = scalar_model(tmp.path(), "unstable.json", 2.0, 0.0, 0.0);
    let out = tmp.path().join("verdict.json");
    assert_eq!(csode_cmd(&["certify", "--model", s(&model), "--search-scalar", "--out", s(&out)]), 0);
    let v = read_json(&out);
    assert_eq!(v["contraction"], "NotContracting");
    assert_ne!(v["certificate"], "Certified");
}

#[test]
fn certify_candidate_file() {
    let tmp = tempfile::tempdir().unwrap();
    let model = scalar_model(tmp.path(), "scalar.json", -2.0, -0.1, 1.0);
    let cand = tmp.path().join("cand.json");
    fs::write(
        &cand,
        r#"{"P":[[1.0]],"P_tilde":[[1.0]],"Lambda":[[[1.0]]],"Lambda_tilde":[[[0.0]]],
            "Xi":[[[1.0]],[[0.0]]],"Upsilon":[{"s":0,"r":1,"value":[[2.1]]}],
            "Xi_tilde0":[[2.0]],"Upsilon_tilde":[],"Gamma":[[[0.1]]],"Omega":[[[0.0]]],
            "Phi":[[6.0]],"gamma":1.0,"theta":1.0}"#,
    )
    .unwrap();
    let out = tmp.path().join("verdict.json");
    assert_eq!(
        csode_cmd(&["certify", "--model", s(&model), "--candidate", s(&cand), "--pairs", "3", "--out", s(&out)]),
        0
    );
    assert_eq!(read_json(&out)["certificate"], "Certified");
}

#[test]
fn certify_search_rejects_large_models() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("big.json");
    VectorField::new(ArchSpec::csode(3, vec![4], vec![4])).unwrap().save_model(&p).unwrap();
    let out = tmp.path().join("v.json");
    assert_eq!(csode_cmd(&["certify", "--model", s(&p), "--search-scalar", "--out", s(&out)]), 6);
    assert_eq!(csode_cmd(&["certify", "--model", s(&p), "--samples", "20", "--pairs", "2", "--out", s(&out)]), 0);
    let v = read_json(&out);
    assert_eq!(v["certificate"], "NotChecked");
    assert!(v["assumption3"]["satisfiability_ratio"].is_number());
}

#[test]
fn scale_writes_sorted_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    let out = tmp.path().join("scale");
    let args = [
        "scale", "--data", s(&d), "--widths", "64,32", "--subnets", "2,1", "--k", "0.1", "--epochs", "2", "--out", s(&out),
    ];
    assert_eq!(csode_cmd(&args), 0);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let cells: Vec<(usize, usize)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    assert_eq!(cells, vec![(32, 1), (32, 2), (64, 1), (64, 2)]);
    for (r, &(w, n)) in rows.iter().zip(&cells) {
        let lr: f64 = r[2].parse().unwrap();
        let oracle = 0.1 / (w as f64 * (n as f64).sqrt());
        assert!((lr - oracle).abs() <= 1e-12 * oracle);
        assert!((lr - scaling_lr(0.1, w, n)).abs() <= 1e-12 * oracle);
        assert!(r[3].parse::<f64>().unwrap().is_finite());
        assert!(out.join(format!("history_W{w}_N{n}.csv")).exists());
    }
}

#[test]
fn thread_cap_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let d = spiral_data(tmp.path());
    let mut models = Vec::new();
    for threads in ["1", "4"] {
        let out = tmp.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_csode"))
            .env("CSODE_THREADS", threads)
            .args(["train", "--data", s(&d), "--arch", "csode", "--epochs", "3", "--width", "8", "--batch-size", "1"])
            .args(["--out", s(&out)])
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        models.push(fs::read(out.join("model.json")).unwrap());
    }
    assert_eq!(models[0], models[1]);

    let bad = Command::new(env!("CARGO_BIN_EXE_csode"))
        .env("CSODE_THREADS", "lots")
        .args(["evaluate", "--model", "ground-truth", "--data", s(&d), "--out", s(&tmp.path().join("x.json"))])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_hash_ignores_key_order() {
    let a: Value = serde_json::from_str(r#"{"b": 1, "a": {"y": [1, 2], "x": "s"}}"#).unwrap();
    let b: Value = serde_json::from_str(r#"{"a": {"x": "s", "y": [1, 2]}, "b": 1}"#).unwrap();
    let c: Value = serde_json::from_str(r#"{"a": {"x": "s", "y": [2, 1]}, "b": 1}"#).unwrap();
    assert_eq!(canonical_hash(&a), canonical_hash(&b));
    assert_ne!(canonical_hash(&a), canonical_hash(&c));
    assert_eq!(canonical_hash(&a).len(), 64);
}
