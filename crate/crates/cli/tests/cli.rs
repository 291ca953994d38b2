use std::path::Path;
use std::process::{Command, Output};

fn tongue(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tongue"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn tongue")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tongue(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const QUICK: &str = r#"{
  "manifest": "data/manifest.jsonl",
  "seed": 3,
  "out_dir": "run",
  "extractor_train": {"learning_rate": 0.1, "epochs": 5, "batch_size": 32},
  "cnn_train": {"learning_rate": 0.05, "epochs": 5, "batch_size": 32},
  "head": "svm_tap",
  "workers": 2
}"#;

#[test]
fn stage_chain_and_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n-per-class", "6", "--separation", "1", "--pose-jitter", "0.03", "--seed", "2", "--out", "data"]);
    assert!(d.join("data/manifest.jsonl").is_file());
    std::fs::write(d.join("quick.json"), QUICK).unwrap();
    let c = ["--config", "quick.json"];
    let with = |extra: &[&str]| -> Vec<String> { c.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |extra: &[&str]| {
        let args = with(extra);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let text = run(&["register", "--manifest", "data/manifest.jsonl", "--out", "reg"]);
    assert!(text.contains("registered 12 images"), "{text}");
    assert!(d.join("reg/transforms.jsonl").is_file());
    run(&["regions", "--in", "reg", "--out", "regions"]);
    assert!(d.join("regions/healthy_0000_r5.png").is_file());
    run(&["train-extractors", "--regions", "regions", "--manifest", "data/manifest.jsonl", "--out", "ex"]);
    for k in 1..=4 {
        assert!(d.join(format!("ex/extractor_{k}.json")).is_file());
    }
    run(&["fuse", "--regions", "regions", "--extractors", "ex", "--manifest", "data/manifest.jsonl", "--out", "comp"]);
    let comp = "comp/composites.jsonl";
    assert_eq!(std::fs::read_to_string(d.join(comp)).unwrap().lines().count(), 12);
    run(&["train-cnn", "--composites", comp, "--dump-features", "feat", "--out", "cnn"]);
    assert_eq!(std::fs::read_dir(d.join("feat")).unwrap().count(), 6);

    let table = run(&["mi-select", "--features", "feat", "--bins", "6", "--out", "mi"]);
    let rows: Vec<&str> = table.lines().collect();
    assert!(rows[0].starts_with("rank"), "{table}");
    assert_eq!(rows.iter().filter(|r| r.starts_with(|c: char| c.is_ascii_digit())).count(), 3, "{table}");
    let selected = rows.last().unwrap().strip_prefix("selected ").expect("selected line").to_owned();
    assert!(d.join("mi/selected_layer.json").is_file());

    run(&["train-svm", "--composites", comp, "--cnn", "cnn/cnn.json", "--layer", &selected, "--out", "svm"]);
    let metrics = run(&[
        "eval", "--model", "svm/svm.json", "--manifest", comp, "--cnn", "cnn/cnn.json", "--layer", &selected, "--out", "eval",
    ]);
    assert!(metrics.contains("ACC"), "{metrics}");
    assert!(d.join("eval/eval_report.json").is_file());
    run(&["eval", "--model", "cnn/cnn.json", "--manifest", comp, "--out", "eval_cnn"]);
    run(&["train-svm", "--composites", comp, "--out", "svm_flat"]);

    // paths inside the config are relative to the config file, not the cwd
    let nested = d.join("nested");
    std::fs::create_dir(&nested).unwrap();
    std::fs::write(nested.join("quick.json"), QUICK.replace("data/manifest", "../data/manifest")).unwrap();
    let out = ok(d, &["--config", "nested/quick.json", "run"]);
    assert!(out.contains("report:"), "{out}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(nested.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 3);
    assert!(report["evaluation"]["metrics"]["acc"].is_number());
    assert!(nested.join("run/checkpoints/svm.json").is_file());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // usage errors and missing config
    assert_eq!(code(&tongue(d, &["run"])), 2);
    assert_eq!(code(&tongue(d, &["synth", "--separation", "0.5"])), 2);
    assert_eq!(code(&tongue(d, &["synth", "--n-per-class", "2", "--separation", "3", "--seed", "1", "--out", "x"])), 2);
    // io
    assert_eq!(code(&tongue(d, &["--out", "o", "register", "--manifest", "missing.jsonl"])), 3);
    std::fs::write(d.join("cfg.json"), r#"{"manifest": "nope.jsonl", "seed": 1}"#).unwrap();
    assert_ne!(code(&tongue(d, &["--config", "cfg.json", "run"])), 0);
    // numerical
    let out = tongue(d, &["gradcheck", "--model", "mlp", "--threshold", "1e-30", "--seed", "1"]);
    assert_eq!(code(&out), 4);
    let out = tongue(d, &["gradcheck", "--model", "both", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("cnn max relative error"));
}
