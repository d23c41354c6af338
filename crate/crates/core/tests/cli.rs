use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: [&str; 16] = [
    "--set",
    "synth.height=16",
    "--set",
    "synth.width=16",
    "--set",
    "synth.n_frames=294",
    "--set",
    "dataset.train_hours=8",
    "--set",
    "dataset.block_hours=4",
    "--set",
    "train.epochs=2",
    "--set",
    "model.base_width=4",
    "--set",
    "eval.n_boot=10",
];

fn nowcast(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nowcast"))
        .env("RUST_LOG", "warn")
        .arg("--out-dir")
        .arg(out)
        .args(SMALL)
        .args(args)
        .output()
        .unwrap()
}

fn run_ok(out: &Path, args: &[&str]) -> PathBuf {
    let o = nowcast(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

/// Exit code and the single stderr line of a failing run.
fn run_err(out: &Path, args: &[&str]) -> (i32, String) {
    let o = nowcast(out, args);
    assert!(!o.status.success());
    let stderr = String::from_utf8(o.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    (o.status.code().unwrap(), lines[0].to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_writes_manifests_scores_and_maps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let synth = run_ok(out, &["--seed", "3", "synth"]);
    assert_eq!(synth.file_name().unwrap(), "synth-000");
    for f in ["crf.pgs", "u.pgs", "v.pgs", "manifest.txt"] {
        assert!(synth.join(f).is_file(), "{f}");
    }
    let manifest = std::fs::read_to_string(synth.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command=synth\n"));
    assert!(manifest.contains("seed=3\n"));
    assert!(manifest.contains("config.synth.height=16\n"));
    assert!(manifest.contains("source.synth.height=flag\n"));
    assert!(manifest.contains("source.synth.n_blobs=default\n"));

    let ds_dir = run_ok(out, &["dataset", s(&synth), "--lead-minutes", "30"]);
    let dataset = ds_dir.join("dataset.pds");
    assert!(ds_dir.join("samples.csv").is_file());
    let model = run_ok(out, &["train", s(&dataset)]).join("model.pnc");
    assert!(model.is_file());

    let checkpoint = format!("wind={}", s(&model));
    let eval = run_ok(
        out,
        &["eval", s(&dataset), "--checkpoint", &checkpoint, "--baseline", "persistence", "--baseline", "optflow"],
    );
    let scores = std::fs::read_to_string(eval.join("scores.csv")).unwrap();
    // Header plus 3 models x 3 classes x 3 metrics.
    assert_eq!(scores.lines().count(), 1 + 27);
    for model in ["wind", "persistence", "optflow"] {
        assert_eq!(scores.lines().filter(|l| l.starts_with(&format!("{model},"))).count(), 9, "{model}");
    }
    let png = std::fs::read(eval.join("maps/sample00_target.png")).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    assert!(eval.join("maps/sample00_wind_diff_class1.png").is_file());

    // Inputs are left alone and every run gets its own directory.
    let again = run_ok(out, &["--seed", "3", "synth"]);
    assert_eq!(again.file_name().unwrap(), "synth-001");
    for f in ["crf.pgs", "u.pgs", "v.pgs"] {
        assert_eq!(std::fs::read(synth.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn errors_are_one_categorized_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();

    let (code, line) = run_err(out, &["--bogus", "synth"]);
    assert_eq!(code, 17);
    assert!(line.starts_with("error[config]: "), "{line}");

    let (code, line) = run_err(out, &["--set", "noequals", "synth"]);
    assert_eq!(code, 17);
    assert!(line.starts_with("error[config]: "), "{line}");

    let (code, line) = run_err(out, &["dataset", s(&out.join("missing"))]);
    assert_eq!(code, 19);
    assert!(line.starts_with("error[io]: "), "{line}");

    let (code, _) = run_err(out, &["dataset", s(&out.join("missing")), "--lead-minutes", "7"]);
    assert_eq!(code, 17);

    let synth = run_ok(out, &["synth"]);
    let dataset = run_ok(out, &["dataset", s(&synth), "--no-wind"]).join("dataset.pds");
    let (code, line) = run_err(out, &["eval", s(&dataset)]);
    assert_eq!(code, 17);
    assert!(line.contains("--checkpoint"), "{line}");
    let (code, _) = run_err(out, &["eval", s(&dataset), "--baseline", "persistence", "--lead-minutes", "60"]);
    assert_eq!(code, 17);

    let junk = out.join("junk.pds");
    std::fs::write(&junk, b"not a dataset").unwrap();
    let (code, line) = run_err(out, &["train", s(&junk)]);
    assert_eq!(code, 18);
    assert!(line.starts_with("error[format]: "), "{line}");
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let cfg = out.join("run.conf");
    std::fs::write(&cfg, "synth.n_blobs=2\nsynth.width=32\n").unwrap();
    let dir = run_ok(out, &["--config", s(&cfg), "synth"]);
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.synth.n_blobs=2\n"));
    assert!(manifest.contains("source.synth.n_blobs=file\n"));
    // `--set synth.width=16` from the shared arguments wins over the file.
    assert!(manifest.contains("config.synth.width=16\n"));
    assert!(manifest.contains("source.synth.width=flag\n"));
}

#[test]
fn leadsweep_scores_every_lead() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let synth = run_ok(out, &["synth"]);
    let dir = run_ok(out, &["--set", "sweep.leads=10,30", "leadsweep", s(&synth)]);
    let csv = std::fs::read_to_string(dir.join("leadsweep.csv")).unwrap();
    // 2 leads x 3 models x 3 classes x 3 metrics.
    assert_eq!(csv.lines().count(), 1 + 54);
    assert!(dir.join("history_lead10.csv").is_file());
    assert!(dir.join("history_lead30.csv").is_file());
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("fact.persistence_f1_nonincreasing="));
}
