use std::path::Path;
use std::process::{Command, Output};

fn lidkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidkit")).args(args).output().expect("spawn lidkit")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_corpus(dir: &Path) {
    let out = lidkit(&[
        "synth", "--languages", "2", "--speakers", "3", "--seconds", "12", "--seed", "5", "--out", s(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(lidkit(&[]).status.code(), Some(1));
    assert_eq!(lidkit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lidkit(&["train", "--backend", "svm", "--manifest", "m.csv", "--out", "x"]).status.code(), Some(1));
    assert_eq!(lidkit(&["evaluate", "--manifest", "m.csv", "--out", "x"]).status.code(), Some(1));
    assert_eq!(lidkit(&["--help"]).status.code(), Some(0));
    assert_eq!(lidkit(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_wav_exits_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = lidkit(&["extract", "--feat", "mfcc", s(&dir.path().join("nope.wav"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn extract_writes_feature_csv() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let wav = dir.path().join("lang00/spk00.wav");
    let csv = dir.path().join("f.csv");
    let out = lidkit(&["extract", "--feat", "rplp", s(&wav), "--out", s(&csv)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# kind=rplp rate=16000"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), (12 * 16000 - 400) / 240 + 1);
    assert!(rows.iter().all(|r| r.split(',').count() == 13));

    let stdout = lidkit(&["extract", "--feat", "rplp", s(&wav)]);
    assert_eq!(stdout.stdout, text.as_bytes());
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let wav = dir.path().join("lang01/spk02.wav");
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# defaults\nfeat = plp\nseed = 9\n").unwrap();
    let from_file = lidkit(&["--config", s(&cfg), "extract", s(&wav)]);
    assert!(from_file.status.success());
    assert!(String::from_utf8_lossy(&from_file.stdout).starts_with("# kind=plp"));
    assert!(String::from_utf8_lossy(&from_file.stderr).contains("seed=9"));
    let flag = lidkit(&["--config", s(&cfg), "extract", "--feat", "bfcc", s(&wav)]);
    assert!(String::from_utf8_lossy(&flag.stdout).starts_with("# kind=bfcc"));

    std::fs::write(&cfg, "feat plp\n").unwrap();
    assert_eq!(lidkit(&["--config", s(&cfg), "extract", s(&wav)]).status.code(), Some(1));
}

#[test]
fn train_identify_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    small_corpus(&corpus);
    let manifest = corpus.join("manifest.csv");
    let models = dir.path().join("models");
    let out = lidkit(&[
        "train", "--backend", "gmm", "--feat", "mfcc,plp", "--mixtures", "2,4", "--manifest", s(&manifest),
        "--out", s(&models), "--seed", "7",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&models)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["gmm_mfcc_m2.lidkit", "gmm_mfcc_m4.lidkit", "gmm_plp_m2.lidkit", "gmm_plp_m4.lidkit"]);
    let out = lidkit(&[
        "train", "--backend", "vq_dtw", "--feat", "mfcc", "--codebook", "8", "--manifest", s(&manifest),
        "--out", s(&models),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let model = models.join("gmm_mfcc_m4.lidkit");
    let wav = corpus.join("lang01/spk02.wav");
    let out = lidkit(&["identify", "--model", s(&model), s(&wav)]);
    assert!(out.status.success());
    let ranked = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = ranked.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("1\t"));

    let report = dir.path().join("report");
    let out = lidkit(&[
        "evaluate", "--manifest", s(&manifest), "--models", s(&models), "--segments", "2,4,10", "--out", s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["table.csv", "vq_dtw.csv", "confusion.csv", "decisions.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let table = std::fs::read_to_string(report.join("table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "feature,2s_m2,2s_m4,2s_avg,4s_m2,4s_m4,4s_avg,10s_m2,10s_m4,10s_avg");
    assert_eq!(table.lines().count(), 3);

    // a corrupted model is a data error
    let bad = dir.path().join("bad.lidkit");
    let mut bytes = std::fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&bad, bytes).unwrap();
    let out = lidkit(&["identify", "--model", s(&bad), s(&wav)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}
