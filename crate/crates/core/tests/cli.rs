use std::fs;
use std::path::Path;
use std::process::Command;

use flipfake::mom::MomModel;
use flipfake::seqdata::{load_sequences, SeqFormat};
use flipfake::Label;

fn flipfake(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_flipfake"))
        .args(args)
        .current_dir(dir)
        .env_remove("FLIPFAKE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = flipfake(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn generate_real_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--kind", "real", "--count", "137", "--length", "200", "--seed", "7", "--out", "a.csv"]);
    ok(d, &["generate", "--kind", "real", "--count", "137", "--length", "200", "--seed", "7", "--out", "b.csv"]);
    assert_eq!(read(d, "a.csv"), read(d, "b.csv"));
    let recs = load_sequences(&d.join("a.csv"), SeqFormat::Csv, Label::Real).unwrap();
    assert_eq!(recs.len(), 137);
    assert!(recs.iter().all(|r| r.len() == 200 && r.label == Label::Real));
    assert!(d.join("a.csv.provenance.json").exists());
    assert_eq!(read(d, "a.csv.provenance.json").len(), read(d, "b.csv.provenance.json").len());
}

#[test]
fn generate_simulator_and_mom() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--kind", "tf", "--eps", "0.05", "--count", "4", "--seed", "1", "--out", "tf.txt"]);
    let recs = load_sequences(&d.join("tf.txt"), SeqFormat::Lines, Label::Simulator).unwrap();
    assert_eq!(recs.len(), 4);
    ok(d, &["generate", "--kind", "rsc", "--count", "3", "--seed", "1", "--out", "rsc.csv"]);
    let recs = load_sequences(&d.join("rsc.csv"), SeqFormat::Csv, Label::Real).unwrap();
    assert!(recs.iter().all(|r| r.label == Label::Simulator));

    let missing = flipfake(d, &["generate", "--kind", "mom", "--count", "3", "--seed", "1"]);
    assert_eq!(missing.status.code(), Some(1));

    let model = MomModel::new(vec![vec![1.0]], vec![[[0.0, 1.0], [0.0, 1.0]]], vec![[0.5, 0.5]]).unwrap();
    model.save(&d.join("ones.json")).unwrap();
    ok(d, &["generate", "--kind", "mom", "--model", "ones.json", "--count", "2", "--length", "10", "--seed", "1", "--out", "m.csv"]);
    let recs = load_sequences(&d.join("m.csv"), SeqFormat::Csv, Label::Real).unwrap();
    assert!(recs.iter().all(|r| r.label == Label::Mom && r.flips().iter().all(|&b| b == 1)));
}

#[test]
fn default_output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_flipfake"))
        .args(["generate", "--kind", "real", "--count", "2", "--seed", "3"])
        .env("FLIPFAKE_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("real.csv").exists());
}

#[test]
fn train_classify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--kind", "real", "--count", "3", "--length", "60", "--seed", "2", "--out", "real.csv"]);
    ok(d, &["generate", "--kind", "tf", "--count", "3", "--length", "60", "--seed", "2", "--out", "tf.csv"]);
    let train = ["train", "--input", "real=real.csv", "--input", "simulator=tf.csv", "--states", "2", "--max-iters", "40", "--seed", "5"];
    ok(d, &[&train[..], &["--out", "bank1"]].concat());
    ok(d, &[&train[..], &["--out", "bank2"]].concat());
    for entry in fs::read_dir(d.join("bank1/models")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(d.join("bank1/models").join(&name)).unwrap();
        let b = fs::read(d.join("bank2/models").join(&name)).unwrap();
        assert_eq!(a, b);
        let m = MomModel::from_json(std::str::from_utf8(&a).unwrap()).unwrap();
        assert_eq!(m.states(), 3);
    }
    assert_eq!(read(d, "bank1/manifest.json"), read(d, "bank2/manifest.json"));

    ok(d, &["classify", "--input", "real.csv", "--bank", "bank1", "--mode", "correct-vs-rest", "--out", "v1.csv"]);
    ok(d, &["classify", "--input", "real.csv", "--bank", "bank1", "--mode", "correct-vs-rest", "--out", "v2.csv"]);
    assert_eq!(read(d, "v1.csv"), read(d, "v2.csv"));
    let text = String::from_utf8(read(d, "v1.csv")).unwrap();
    assert!(text.starts_with("id,true_label,predicted,score\n"));
    assert_eq!(text.lines().count(), 4);

    ok(d, &["confusion", "--predictions", "v1.csv"]);
}

#[test]
fn missing_training_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = flipfake(dir.path(), &["train", "--input", "real=nope.csv", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn dominance_bank_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut bank = flipfake::bank::ModelBank::new();
    bank.push("fair", Label::Real, MomModel::new(vec![vec![1.0]], vec![[[0.5, 0.5], [0.5, 0.5]]], vec![[0.5, 0.5]]).unwrap());
    bank.push("ones", Label::Simulator, MomModel::new(vec![vec![1.0]], vec![[[0.0, 1.0], [0.0, 1.0]]], vec![[0.0, 1.0]]).unwrap());
    bank.save(&d.join("bank")).unwrap();
    fs::write(d.join("in.txt"), format!("{}\n{}\n", "1".repeat(200), "10".repeat(100))).unwrap();
    ok(d, &["classify", "--input", "in.txt", "--bank", "bank", "--out", "v.csv"]);
    let text = String::from_utf8(read(d, "v.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows[0].starts_with("line-1,,Simulator,0"));
    assert!(rows[1].starts_with("line-2,,Real,"));
}

#[test]
fn particle_filter_classification() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--kind", "real", "--count", "2", "--length", "50", "--seed", "2", "--out", "real.csv"]);
    let no_tau = flipfake(d, &["classify", "--input", "real.csv", "--bpf", "--seed", "1", "--particles", "200"]);
    assert_eq!(no_tau.status.code(), Some(1));
    let args = ["classify", "--input", "real.csv", "--bpf", "--threshold", "0.01", "--seed", "1", "--particles", "200"];
    ok(d, &[&args[..], &["--out", "a.csv"]].concat());
    ok(d, &[&args[..], &["--out", "b.csv"]].concat());
    assert_eq!(read(d, "a.csv"), read(d, "b.csv"));

    ok(d, &["generate", "--kind", "tf", "--count", "2", "--length", "50", "--seed", "2", "--out", "tf.csv"]);
    ok(d, &["calibrate", "--input", "real.csv", "--input", "tf.csv", "--seed", "1", "--particles", "200", "--out", "cal.json"]);
    ok(d, &["classify", "--input", "tf.csv", "--bpf", "--calibration", "cal.json", "--seed", "1", "--particles", "200", "--out", "c.csv"]);
}

#[test]
fn evaluate_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["evaluate", "--count", "10", "--length", "50", "--trials", "2", "--particles", "200", "--states", "2", "--seed", "4"];
    let start = std::time::Instant::now();
    ok(d, &[&args[..], &["--out", "e1"]].concat());
    assert!(start.elapsed().as_secs() < 60);
    ok(d, &[&args[..], &["--out", "e2"]].concat());
    for f in ["report.json", "report.txt", "provenance.json"] {
        assert_eq!(read(d, &format!("e1/{f}")), read(d, &format!("e2/{f}")), "{f}");
    }
    let one = ["evaluate", "--count", "10", "--length", "50", "--trials", "1", "--particles", "200", "--states", "2", "--seed", "4", "--out", "e3"];
    ok(d, &one);
    let report: serde_json::Value = serde_json::from_slice(&read(d, "e3/report.json")).unwrap();
    for s in report["mom"]["per_type"].as_array().unwrap() {
        assert_eq!(s["std_dev"].as_f64(), Some(0.0));
    }
}

#[test]
fn confusion_matrix_from_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("quiz.csv"),
        "true,Real,Handwritten,Deepfake\nReal,320,260,250\nHandwritten,236,333,261\nDeepfake,310,252,268\n",
    )
    .unwrap();
    let out = flipfake(d, &["confusion", "--matrix", "quiz.csv", "--out", "m.json"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("True Handwritten: 333/830 correct (40.1%)"));
    let again = flipfake(d, &["confusion", "--matrix", "quiz.csv", "--out", "m2.json"]);
    assert_eq!(text, String::from_utf8(again.stdout).unwrap());
    assert_eq!(read(d, "m.json"), read(d, "m2.json"));
}
