//! End-to-end runs of the `ah-fusion` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ah-fusion"))
        .args(args)
        .env_remove("AH_FUSION_SEED")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) -> PathBuf {
    ok(&[
        "gen-synth",
        "--out",
        s(dir),
        "--n-samples",
        "36",
        "--seed",
        seed,
        "--visual-len",
        "6:12",
        "--audio-len",
        "2:4",
    ]);
    dir.join("manifest.jsonl")
}

fn train_args<'a>(manifest: &'a str, ckpt: &'a str, history: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--manifest", manifest, "--fusion", "B", "--epochs", "3", "--seed", "5", "--out", ckpt,
        "--history", history,
    ]
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = synth(&data, "1");
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 36);

    // window one visual file
    let win = dir.path().join("win.csv");
    ok(&[
        "window",
        "--input",
        s(&data.join("features/syn00_visual.csv")),
        "--out",
        s(&win),
        "--length",
        "4",
        "--step",
        "2",
    ]);
    let text = std::fs::read_to_string(&win).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 80);
    assert_eq!(&header[..2], ["AU01_mean", "AU01_std"]);
    assert!(lines.all(|l| l.split(',').count() == 80));

    // train, then evaluate on the validation split
    let ckpt = dir.path().join("b.ckpt");
    let hist = dir.path().join("hist.csv");
    let report = dir.path().join("report.json");
    let mut args = train_args(s(&manifest), s(&ckpt), s(&hist));
    args.extend(["--report", s(&report)]);
    ok(&args);
    let history = std::fs::read_to_string(&hist).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_macro_f1,lr,best\n"));
    assert_eq!(history.lines().count(), 4);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["command"], "train");
    assert_eq!(rep["seed"], 5);
    assert!(rep["metadata"]["wall_time_s"].as_f64().unwrap() >= 0.0);

    let (_, meta) = ah_fusion::model::checkpoint::load(&ckpt).unwrap();
    let best = meta["best_val_macro_f1"].as_f64().unwrap();
    let eval_out = dir.path().join("eval.csv");
    ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--split",
        "val",
        "--out",
        s(&eval_out),
    ]);
    let csv = std::fs::read_to_string(&eval_out).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next().unwrap(), "variant,split,macro_f1,tp,fp,tn,fn");
    let fields: Vec<&str> = rows.next().unwrap().split(',').collect();
    assert_eq!(fields[..2], ["Fusion B (divergence)", "val"]);
    assert_eq!(fields[2].parse::<f64>().unwrap(), best);
    let counts: usize = fields[3..].iter().map(|f| f.parse::<usize>().unwrap()).sum();
    assert_eq!(counts, 6);

    // stdout variant of analyze
    let out = ok(&["analyze", "--manifest", s(&manifest)]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("feature,metric,mean_pos,mean_neg,U,Z,p,r,significant\n"));
    // 20 AUs × 5 summary statistics
    assert_eq!(stdout.lines().count(), 101);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = synth(&dir.path().join("a"), "3");
    let m2 = synth(&dir.path().join("b"), "3");
    let f = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(f(&dir.path().join("a/features/syn07_audio.csv")), f(&dir.path().join("b/features/syn07_audio.csv")));

    let mut outs = Vec::new();
    for (tag, m) in [("1", &m1), ("2", &m2)] {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let hist = dir.path().join(format!("{tag}.csv"));
        ok(&train_args(s(m), s(&ckpt), s(&hist)));
        let an = dir.path().join(format!("{tag}-analyze.csv"));
        ok(&["analyze", "--manifest", s(m), "--out", s(&an)]);
        outs.push((f(&ckpt), f(&hist), f(&an)));
    }
    assert!(outs[0] == outs[1]);
}

#[test]
fn fusion_all_writes_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("d"), "2");
    let out = dir.path().join("runs");
    ok(&["train", "--manifest", s(&manifest), "--fusion", "all", "--epochs", "1", "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "variant,macro_f1");
    for (row, l) in rows[1..].iter().zip(["A", "B", "C"]) {
        assert!(row.starts_with(&format!("Fusion {l},")), "{row}");
        assert!(out.join(format!("fusion-{l}.ckpt")).exists());
        assert!(out.join(format!("history-{l}.csv")).exists());
    }
    assert_eq!(rows.len(), 4);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("d"), "4");
    let out = dir.path().join("eval.csv");

    // missing checkpoint: data error, nothing written
    let r = run(&[
        "eval",
        "--checkpoint",
        s(&dir.path().join("nope.ckpt")),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&r.stderr).contains("error (data)"));

    let r = run(&["analyze", "--manifset", s(&manifest)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("valid flags: "));

    let r = run(&["window", "--input", s(&manifest), "--out", s(&out), "--length", "4", "--step", "9"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());

    // modality and fusion are mutually exclusive
    let r = run(&["train", "--manifest", s(&manifest), "--out", s(&out), "--fusion", "a", "--modality", "text"]);
    assert_eq!(r.status.code(), Some(2));

    for sub in ["gen-synth", "window", "train", "eval", "analyze"] {
        assert_eq!(run(&[sub, "--help"]).status.code(), Some(0), "{sub}");
    }
}
