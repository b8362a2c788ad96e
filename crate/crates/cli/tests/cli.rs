use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn evact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evact")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = evact(args);
    assert!(out.status.success(), "evact {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic dataset: 3 train and 2 test clips per class, 1 s each.
fn small_dataset(root: &Path) {
    ok(&[
        "synth",
        "--out",
        s(&root.join("data")),
        "--train-per-class",
        "3",
        "--test-per-class",
        "2",
        "--duration-us",
        "1000000",
        "--height",
        "32",
        "--width",
        "32",
    ]);
}

#[test]
fn pipeline_runs_from_events_and_from_frames() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root);
    let data = root.join("data");

    ok(&["frames", "--manifest", s(&data.join("train.csv")), "--out-dir", s(&root.join("frames"))]);
    assert!(root.join("frames/manifest.csv").exists());
    ok(&["featurize", "--manifest", s(&data.join("train.csv")), "--out-dir", s(&root.join("feat"))]);

    for (name, manifest) in [("m_events", data.join("train.csv")), ("m_frames", root.join("frames/manifest.csv"))] {
        let model = root.join(name);
        ok(&["train", "--manifest", s(&manifest), "--out", s(&model), "--epochs", "5", "--classes", s(&data.join("classes.csv"))]);
        for f in ["model.bin", "train.json", "train_log.csv"] {
            assert!(model.join(f).exists(), "{name}/{f} missing");
        }
        let eval_dir = root.join(format!("{name}_eval"));
        let table = ok(&["eval", "--manifest", s(&data.join("test.csv")), "--model-dir", s(&model), "--out", s(&eval_dir)]);
        assert!(table.contains("Acc@1"));
        let body: Value = serde_json::from_slice(&std::fs::read(eval_dir.join("eval_map.json")).unwrap()).unwrap();
        let acc = body["report"]["overall"]["acc_mode"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    // Same clips, same features: models trained from events and from frames agree.
    assert_eq!(
        std::fs::read(root.join("m_events/model.bin")).unwrap(),
        std::fs::read(root.join("m_frames/model.bin")).unwrap()
    );
}

#[test]
fn eval_clip_rules_and_calibrate_all_methods() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root);
    let (data, model) = (root.join("data"), root.join("model"));
    ok(&["train", "--manifest", s(&data.join("train.csv")), "--out", s(&model), "--epochs", "5", "--laplace", "--ensemble", "2"]);

    let test = data.join("test.csv");
    let both = ok(&["eval", "--manifest", s(&test), "--model-dir", s(&model)]);
    assert!(both.lines().nth(1).unwrap().trim_end().ends_with("mode    prob"));
    let mode = ok(&["eval", "--manifest", s(&test), "--model-dir", s(&model), "--clip-rule", "mode"]);
    assert!(mode.contains("mode") && !mode.contains("prob"));
    let accum = ok(&["eval", "--manifest", s(&test), "--model-dir", s(&model), "--clip-rule", "accum"]);
    assert!(accum.contains("prob") && !accum.lines().nth(1).unwrap().contains("mode"));

    let cal = root.join("cal");
    let printed = ok(&["calibrate", "--manifest", s(&test), "--model-dir", s(&model), "--out", s(&cal)]);
    let rows: Vec<Value> = serde_json::from_slice(&std::fs::read(cal.join("calibration.json")).unwrap()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["map", "laplace", "ensemble", "laplace-ensemble"]);
    for r in &rows {
        let (ace, mce) = (r["ace"].as_f64().unwrap(), r["mce"].as_f64().unwrap());
        assert!(ace <= mce + 1e-12 && (0.0..=1.0).contains(&mce));
        let m = r["method"].as_str().unwrap();
        assert!(printed.contains(m));
        for ext in ["svg", "csv", "json"] {
            assert!(cal.join(format!("calibration_{m}.{ext}")).exists());
        }
    }

    ok(&["eval", "--manifest", s(&test), "--model-dir", s(&model), "--method", "laplace", "--out", s(&cal)]);
    let summary = ok(&["report", "--dir", s(&cal)]);
    assert!(summary.contains("laplace") && cal.join("report.md").exists());
}

#[test]
fn artifacts_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root);
    let data = root.join("data");
    for run in ["a", "b"] {
        let workers = if run == "a" { "1" } else { "3" };
        ok(&["--workers", workers, "featurize", "--manifest", s(&data.join("train.csv")), "--out-dir", s(&root.join(format!("f_{run}")))]);
        ok(&["--workers", workers, "train", "--manifest", s(&data.join("train.csv")), "--out", s(&root.join(format!("m_{run}"))), "--epochs", "3", "--laplace"]);
    }
    for f in ["model.bin", "posterior.bin", "train_log.csv", "train.json"] {
        assert_eq!(std::fs::read(root.join("m_a").join(f)).unwrap(), std::fs::read(root.join("m_b").join(f)).unwrap(), "{f}");
    }
    let listing = std::fs::read_to_string(root.join("f_a/manifest.csv")).unwrap();
    assert_eq!(listing, std::fs::read_to_string(root.join("f_b/manifest.csv")).unwrap());
    for entry in std::fs::read_dir(root.join("f_a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(root.join("f_a").join(&name)).unwrap(), std::fs::read(root.join("f_b").join(&name)).unwrap());
    }
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root);
    let data = root.join("data");
    let cfg = root.join("evact.toml");
    std::fs::write(&cfg, "workers = 1\n[train]\nepochs = 2\nlearning-rate = 0.01\n").unwrap();

    let from_file = root.join("m_file");
    ok(&["--config", s(&cfg), "train", "--manifest", s(&data.join("train.csv")), "--out", s(&from_file)]);
    let log = std::fs::read_to_string(from_file.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2);

    let overridden = root.join("m_flag");
    ok(&["--config", s(&cfg), "train", "--manifest", s(&data.join("train.csv")), "--out", s(&overridden), "--epochs", "4"]);
    let log = std::fs::read_to_string(overridden.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);
}

#[test]
fn failures_exit_with_distinct_codes_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let missing = root.join("nope.csv");

    let usage = evact(&["train", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(error_json(&usage)["error"]["kind"], "usage");

    let no_manifest = evact(&["train", "--out", s(root)]);
    assert_eq!(no_manifest.status.code(), Some(2));

    let not_found = evact(&["train", "--manifest", s(&missing), "--out", s(&root.join("m"))]);
    assert_eq!(not_found.status.code(), Some(4));
    let body = error_json(&not_found);
    assert_eq!(body["error"]["kind"], "missing_file");
    assert_eq!(body["error"]["exit_code"], 4);
    assert!(body["error"]["message"].as_str().unwrap().contains("nope.csv"));

    let cfg = root.join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochs = 0\n").unwrap();
    let bad = evact(&["--config", s(&cfg), "train", "--manifest", s(&missing), "--out", s(&root.join("m"))]);
    assert_eq!(bad.status.code(), Some(3));
    assert_eq!(error_json(&bad)["error"]["kind"], "invalid_config");

    std::fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let unknown = evact(&["--config", s(&cfg), "train", "--manifest", s(&missing), "--out", s(&root.join("m"))]);
    assert_eq!(unknown.status.code(), Some(3));

    let no_cfg = evact(&["--config", s(&root.join("absent.toml")), "bench", "--events", "10"]);
    assert_eq!(no_cfg.status.code(), Some(4));

    let bad_roi = evact(&["frames", "--input", s(&missing), "--output", s(&root.join("o.frm")), "--roi", "1,2,3"]);
    assert_eq!(bad_roi.status.code(), Some(3));
}

#[test]
fn help_documents_every_subcommand() {
    let top = ok(&["--help"]);
    let subcommands = ["synth", "ingest", "frames", "voxel", "blobs", "featurize", "train", "eval", "calibrate", "report", "bench"];
    for sub in subcommands {
        assert!(top.contains(sub), "{sub} missing from --help");
        let help = ok(&[sub, "--help"]);
        let flags: Vec<&str> = help.lines().map(str::trim_start).filter(|l| l.starts_with("--")).collect();
        assert!(!flags.is_empty(), "{sub} lists no options");
        for l in help.lines().map(str::trim_start).filter(|l| l.starts_with("--")) {
            let described = l.split_once("  ").is_some_and(|(_, d)| !d.trim().is_empty());
            let next_line = help.lines().skip_while(|x| x.trim_start() != l).nth(1).unwrap_or("");
            assert!(described || !next_line.trim().is_empty(), "{sub}: undocumented option `{l}`");
        }
    }
    assert!(ok(&["--version"]).starts_with("evact "));
}

#[test]
fn bench_reports_throughput() {
    let out = ok(&["bench", "--events", "20000", "--repeats", "1"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["events"], 20000);
    assert!(v["events_per_second"].as_f64().unwrap() > 0.0);
}

#[test]
fn single_file_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    small_dataset(root);
    let clips = std::fs::read_to_string(root.join("data/train.csv")).unwrap();
    let first = clips.lines().nth(1).unwrap().split(',').next().unwrap();
    let clip = root.join("data").join(first);

    let csv = root.join("clip.csv");
    let ingest = ok(&["ingest", "--input", s(&clip), "--output", s(&csv), "--refractory-us", "1000"]);
    assert!(ingest.contains("events_in"));
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);

    ok(&["frames", "--input", s(&csv), "--output", s(&root.join("c.frm"))]);
    ok(&["voxel", "--input", s(&csv), "--output", s(&root.join("c.vox")), "--bins", "4"]);
    ok(&["blobs", "--input", s(&clip), "--output", s(&root.join("c.ftr")), "--r-min", "4"]);
    ok(&["featurize", "--input", s(&root.join("c.frm")), "--output", s(&root.join("f.ftr"))]);
    for f in ["c.frm", "c.vox", "c.ftr", "f.ftr"] {
        assert!(std::fs::metadata(root.join(f)).unwrap().len() > 4, "{f}");
    }
}
