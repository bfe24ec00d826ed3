use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nbm::data::{split_indices, RawTable, DEFAULT_RATIOS};
use serde_json::Value;

fn nbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = nbm(args);
    assert!(
        out.status.success(),
        "nbm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Writes a small config for `model` on `data` into `dir`.
fn write_config(dir: &Path, data: &Path, model: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{model}.conf"));
    let text = format!(
        "data = {}\ntarget = target\nmodel = {model}\nscaling = minmax\nhidden = 8,8\nnum_bases = 6\n\
         pair_bases = 5\nepochs = 5\nbatch_size = 64\nlr = 0.01\nseed = 3\n\
         checkpoint = {}\nhistory = {}\n{extra}",
        s(data),
        s(&dir.join(format!("{model}.json"))),
        s(&dir.join(format!("{model}.csv"))),
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn synth(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut all = vec!["synth", "--out", s(&out)];
    all.extend_from_slice(args);
    ok_json(&all);
    out
}

#[test]
fn bundled_synthetic_linear_task_fits() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "lin.csv", &["--truth", "linear", "--D", "4", "--rows", "2000"]);
    let conf = workspace().join("configs/synth_linear.conf");
    let ck = dir.path().join("m.json");
    let hist = dir.path().join("h.csv");
    let v = ok_json(&[
        "train",
        s(&conf),
        &format!("--data={}", s(&data)),
        &format!("--checkpoint={}", s(&ck)),
        &format!("--history={}", s(&hist)),
    ]);
    let rmse = v["test"].as_f64().unwrap();
    assert!(rmse * rmse < 1e-4, "test MSE {}", rmse * rmse);
    let history = std::fs::read_to_string(&hist).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,lr,train_loss,val_metric");
    assert_eq!(history.lines().count(), 201);
}

#[test]
fn missing_dataset_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let conf = write_config(dir.path(), &missing, "linear", "");
    let out = nbm(&["train", s(&conf)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));

    let out = nbm(&["train", s(&conf), "--epochs=oops"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", &["--rows", "300", "--noise", "0.1"]);
    let conf = write_config(dir.path(), &data, "nbm", "basis_dropout = 0.1\n");
    ok_json(&["train", s(&conf)]);
    let first = std::fs::read(dir.path().join("nbm.json")).unwrap();
    ok_json(&["train", s(&conf)]);
    assert_eq!(first, std::fs::read(dir.path().join("nbm.json")).unwrap());
}

#[test]
fn eval_replays_the_best_validation_metric() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", &["--rows", "400"]);
    for model in ["linear", "nam", "nbm", "nb2m"] {
        let conf = write_config(dir.path(), &data, model, "");
        let trained = ok_json(&["train", s(&conf)]);
        let table = RawTable::read(&data).unwrap();
        let [_, val, _] = split_indices(table.len(), DEFAULT_RATIOS, 0).unwrap();
        let mut text = table.header.join(",") + "\n";
        for r in val {
            text += &(table.rows[r].join(",") + "\n");
        }
        let val_path = dir.path().join("val.csv");
        std::fs::write(&val_path, text).unwrap();
        let report = ok_json(&["eval", s(&dir.path().join(format!("{model}.json"))), s(&val_path)]);
        assert_eq!(report["metric"], "rmse");
        let diff = (report["value"].as_f64().unwrap() - trained["val"].as_f64().unwrap()).abs();
        assert!(diff < 1e-9, "{model}: {diff}");
    }
}

#[test]
fn dense_checkpoint_accepts_sparse_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", &["--rows", "300", "--D", "3", "--truth", "mixed"]);
    let conf = write_config(dir.path(), &data, "nbm", "");
    ok_json(&["train", s(&conf)]);
    let table = RawTable::read(&data).unwrap();
    let mut sparse = String::new();
    for row in &table.rows {
        sparse += row.last().unwrap();
        for (i, v) in row[..row.len() - 1].iter().enumerate() {
            if v.parse::<f64>().unwrap() != 0.0 {
                sparse += &format!(" {i}:{v}");
            }
        }
        sparse += "\n";
    }
    let sp = dir.path().join("d.svm");
    std::fs::write(&sp, sparse).unwrap();
    let ck = dir.path().join("nbm.json");
    let dense = ok_json(&["eval", s(&ck), s(&data)]);
    let from_sparse = ok_json(&["eval", s(&ck), s(&sp)]);
    assert_eq!(from_sparse["sparse_path"], false);
    let diff = (dense["value"].as_f64().unwrap() - from_sparse["value"].as_f64().unwrap()).abs();
    assert!(diff < 1e-9, "{diff}");
}

#[test]
fn sparse_training_uses_the_sparse_path_for_nbm() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "s.svm",
        &["--rows", "300", "--D", "20", "--truth", "mixed", "--sparsity", "0.8"],
    );
    let conf = write_config(dir.path(), &data, "nbm", "");
    let text = std::fs::read_to_string(&conf).unwrap().replace("scaling = minmax", "scaling = none");
    std::fs::write(&conf, text).unwrap();
    ok_json(&["train", s(&conf)]);
    let report = ok_json(&["eval", s(&dir.path().join("nbm.json")), s(&data)]);
    assert_eq!(report["sparse_path"], true);
    assert_eq!(report["rows"], 300);

    let bad = write_config(dir.path(), &data, "linear", "");
    assert_eq!(nbm(&["train", s(&bad)]).status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", &["--rows", "100"]);
    let ck = dir.path().join("bad.json");
    std::fs::write(&ck, "{ not json").unwrap();
    assert_eq!(nbm(&["eval", s(&ck), s(&data)]).status.code(), Some(3));

    let conf = write_config(dir.path(), &data, "nbm", "");
    ok_json(&["train", s(&conf)]);
    let good = std::fs::read_to_string(dir.path().join("nbm.json")).unwrap();
    std::fs::write(&ck, good.replacen("\"version\": 1", "\"version\": 99", 1)).unwrap();
    assert_eq!(nbm(&["eval", s(&ck), s(&data)]).status.code(), Some(3));
    let mut v: Value = serde_json::from_str(&good).unwrap();
    v["model"]["params"]["class_weights"]["rows"] = Value::from(5);
    std::fs::write(&ck, v.to_string()).unwrap();
    assert_eq!(nbm(&["eval", s(&ck), s(&data)]).status.code(), Some(3));
}

#[test]
fn explain_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", &["--rows", "300", "--D", "3", "--truth", "mixed"]);
    for model in ["nbm", "nb2m"] {
        let conf = write_config(dir.path(), &data, model, "");
        ok_json(&["train", s(&conf)]);
        let ck = dir.path().join(format!("{model}.json"));
        let run = |out: &Path| {
            ok_json(&[
                "explain", s(&ck), s(&data), "--out", s(out), "--grid", "16", "--pair-grid", "4",
                "--pairs", "2",
            ])
        };
        let (a, b) = (dir.path().join(format!("{model}_a")), dir.path().join(format!("{model}_b")));
        let report = run(&a);
        run(&b);
        assert!(report["max_reconstruction_error"].as_f64().unwrap() < 1e-9);
        assert_eq!(report["reconstruction_rows"], 100);
        let csv = std::fs::read_to_string(a.join("shapes.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 16);
        for f in ["shapes.csv", "shapes.json"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
        let meta: Value = serde_json::from_slice(&std::fs::read(a.join("shapes.json")).unwrap()).unwrap();
        assert_eq!(meta["features"].as_array().unwrap().len(), 3);
        if model == "nb2m" {
            let pairs = std::fs::read_to_string(a.join("shapes_pairs.csv")).unwrap();
            assert_eq!(pairs.lines().count(), 1 + 2 * 16);
        }
    }
}

#[test]
fn explain_multiclass_writes_one_table_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "d.csv",
        &["--rows", "300", "--D", "3", "--truth", "mixed", "--task", "multiclass", "--classes", "3"],
    );
    let conf = write_config(dir.path(), &data, "nbm", "task = multiclass\nclasses = 3\n");
    let trained = ok_json(&["train", s(&conf)]);
    assert_eq!(trained["metric"], "accuracy");
    let out = dir.path().join("ex");
    let report = ok_json(&["explain", s(&dir.path().join("nbm.json")), s(&data), "--out", s(&out), "--grid", "8"]);
    assert!(report["max_reconstruction_error"].as_f64().unwrap() < 1e-9);
    for k in 0..3 {
        assert!(out.join(format!("shapes_class{k}.csv")).exists());
    }
}

#[test]
fn bench_reports_the_exact_parameter_count() {
    let v = ok_json(&["bench", "--model", "nbm", "--D", "8", "--batch", "256", "--repeats", "2", "--warmup", "1"]);
    assert_eq!(v["param_count"], 63_629);
    assert!(v["instances_per_second"].as_f64().unwrap() > 0.0);
    assert_eq!(v["threads"], 1);
    let v = ok_json(&["bench", "--model", "nam", "--input", "covertype", "--batch", "64", "--repeats", "1", "--warmup", "0"]);
    assert_eq!(v["config"]["num_features"], 54);
}

#[test]
fn stability_of_identical_seeds_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", &["--rows", "200"]);
    let conf = write_config(dir.path(), &data, "nbm", "basis_dropout = 0.2\n");
    let v = ok_json(&["stability", s(&conf), "--runs", "2", "--same-seed", "--grid", "16"]);
    assert_eq!(v[0]["stability"].as_f64().unwrap(), 0.0);
    let v = ok_json(&["stability", s(&conf), "--runs", "2", "--grid", "16", "--set", "epochs=2"]);
    assert!(v[0]["stability"].as_f64().unwrap() > 0.0);
}
