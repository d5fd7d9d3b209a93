use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"{
    "denoiser": {"latent_dim": 8, "encoder_layers": 1, "decoder_layers": 1, "heads": 2, "feedforward_dim": 16},
    "train": {"epochs": 2, "batch_size": 64, "timesteps": 5}
}"#;

fn tabdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabdiff"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Bundled mixed dataset (300 rows) plus a tiny config.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), TINY).unwrap();
        let out = tabdiff(&["dataset", "mixed", "--rows", "300", "--out", s(dir.path())]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, seed: &str) -> Output {
        tabdiff(&[
            "train",
            "--config",
            s(&self.path("config.json")),
            "--data",
            s(&self.path("data.csv")),
            "--schema",
            s(&self.path("schema.json")),
            "--seed",
            seed,
            "--out",
            s(&self.path(out)),
        ])
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_is_deterministic_and_reloads() {
    let w = Workspace::new();
    let a = w.train("a", "7");
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(w.train("b", "7").status.success());
    let ca = std::fs::read(w.path("a/model.ckpt")).unwrap();
    let cb = std::fs::read(w.path("b/model.ckpt")).unwrap();
    assert_eq!(ca, cb);
    assert!(tabdiff::model::Model::load(w.path("a/model.ckpt")).is_ok());
    let log = std::fs::read_to_string(w.path("a/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn missing_data_file_exits_2() {
    let w = Workspace::new();
    let missing = w.path("nope.csv");
    let o = tabdiff(&["train", "--config", s(&w.path("config.json")), "--data", s(&missing), "--out", s(&w.path("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn config_errors_exit_1() {
    let w = Workspace::new();
    std::fs::write(w.path("bad.json"), r#"{"train": {"epochz": 1}}"#).unwrap();
    let o = tabdiff(&["train", "--config", s(&w.path("bad.json")), "--data", s(&w.path("data.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochz"));
    let o = tabdiff(&["train", "--config", s(&w.path("config.json"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generate_writes_rows_and_sidecar() {
    let w = Workspace::new();
    assert!(w.train("m", "1").status.success());
    let ckpt = w.path("m/model.ckpt");
    let o = tabdiff(&["generate", "--checkpoint", s(&ckpt), "--rows", "100", "--seed", "3", "--out", s(&w.path("g"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(w.path("g/synthetic.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(w.path("g/synthetic.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 3);
    assert_eq!(sidecar["checkpoint_sha256"], tabdiff::model::file_digest(&ckpt).unwrap());

    std::fs::write(
        w.path("other.json"),
        r#"{"columns": [{"name": "x1", "kind": "numerical"}, {"name": "y", "kind": "categorical", "class_count": 2}]}"#,
    )
    .unwrap();
    let o = tabdiff(&["generate", "--checkpoint", s(&ckpt), "--schema", s(&w.path("other.json")), "--out", s(&w.path("g2"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn impute_of_complete_table_is_identity() {
    let w = Workspace::new();
    assert!(w.train("m", "1").status.success());
    let o = tabdiff(&[
        "impute",
        "--checkpoint",
        s(&w.path("m/model.ckpt")),
        "--data",
        s(&w.path("data.csv")),
        "--out",
        s(&w.path("i")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(w.path("i/imputed.csv")).unwrap(),
        std::fs::read(w.path("data.csv")).unwrap()
    );
}

#[test]
fn impute_fills_missing_cells() {
    let w = Workspace::new();
    assert!(w.train("m", "1").status.success());
    let text = std::fs::read_to_string(w.path("data.csv")).unwrap();
    let holed: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i > 0 && i % 5 == 0 {
                let mut f: Vec<&str> = l.split(',').collect();
                f[i % 3] = "NA";
                f.join(",")
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(w.path("holes.csv"), holed.join("\n") + "\n").unwrap();
    let o = tabdiff(&[
        "impute",
        "--checkpoint",
        s(&w.path("m/model.ckpt")),
        "--data",
        s(&w.path("holes.csv")),
        "--out",
        s(&w.path("i")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let done = std::fs::read_to_string(w.path("i/imputed.csv")).unwrap();
    assert!(!done.contains("NA"));
    assert_eq!(done.lines().count(), text.lines().count());
}

#[test]
fn evaluate_self_comparison() {
    let w = Workspace::new();
    let data = w.path("data.csv");
    let o = tabdiff(&["evaluate", "--real", s(&data), "--synthetic", s(&data), "--schema", s(&w.path("schema.json")), "--out", s(&w.path("e"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(w.path("e/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["avg_wasserstein"], 0.0);
    assert_eq!(m["corr_l2"], 0.0);
    assert_eq!(m["dcr"]["min"], 0.0);
}

#[test]
fn benchmark_single_spec_writes_one_report() {
    let w = Workspace::new();
    std::fs::write(
        w.path("bench.json"),
        r#"{
            "denoiser": {"latent_dim": 8, "encoder_layers": 1, "decoder_layers": 1, "heads": 2, "feedforward_dim": 16},
            "train": {"epochs": 2, "batch_size": 64, "timesteps": 5, "mask_mode": "dynamic"},
            "benchmark": {"specs": [{"mechanism": "MCAR", "rate": 0.10}]}
        }"#,
    )
    .unwrap();
    let o = tabdiff(&[
        "benchmark",
        "--config",
        s(&w.path("bench.json")),
        "--data",
        s(&w.path("data.csv")),
        "--schema",
        s(&w.path("schema.json")),
        "--out",
        s(&w.path("b")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut json: Vec<String> = std::fs::read_dir(w.path("b"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".json"))
        .collect();
    json.sort();
    assert_eq!(json, vec!["mcar_0.10.json"]);
    assert!(w.path("b/summary.csv").exists());
}

#[test]
fn invalid_thread_count_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_tabdiff"))
        .args(["dataset", "mixed"])
        .env("TABDIFF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
