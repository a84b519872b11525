use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use caae_core::config::RunConfig;
use caae_core::dataio;
use caae_core::estimators::{self, InputKind};
use caae_core::features;

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/tiny.toml")
}

fn caae(args: &[&str], config: &Path, out: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_caae"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("CAAE_LOG", "warn")
        .output()
        .expect("spawn caae");
    out
}

fn ok(args: &[&str], config: &Path, out: &Path) -> String {
    let o = caae(args, config, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let o = Command::new(env!("CARGO_BIN_EXE_caae")).arg("--help").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in ["prepare", "train-aae", "train-classifier", "encode", "recognize", "experiment", "sweep", "report"] {
        assert!(text.contains(sub), "missing {sub} in\n{text}");
    }
}

#[test]
fn prepare_is_deterministic_and_counts_cells() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = ok(&["prepare"], &tiny(), a.path());
    ok(&["prepare"], &tiny(), b.path());
    assert!(first.contains("4 users x 3 activities"), "{first}");
    let bytes = |d: &Path| fs::read(d.join("archive").join(dataio::ARCHIVE_FILE)).unwrap();
    assert_eq!(bytes(a.path()), bytes(b.path()));
    let manifest = |d: &Path| fs::read_to_string(d.join("archive").join(dataio::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest(a.path()), manifest(b.path()));
}

#[test]
fn experiment_reports_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&["experiment"], &tiny(), a.path());
    ok(&["experiment"], &tiny(), b.path());
    let mut names: Vec<_> = fs::read_dir(a.path().join("reports")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5, "{names:?}");
    for n in &names {
        let x = fs::read(a.path().join("reports").join(n)).unwrap();
        let y = fs::read(b.path().join("reports").join(n)).unwrap();
        assert_eq!(x, y, "{n:?} differs");
    }
    let c = tempfile::tempdir().unwrap();
    ok(&["experiment", "--seed", "2", "--variant", "baseline"], &tiny(), c.path());
    assert_ne!(
        fs::read(a.path().join("reports/baseline.toml")).unwrap(),
        fs::read(c.path().join("reports/baseline.toml")).unwrap()
    );
    let summary = ok(&["report"], &tiny(), a.path());
    assert!(summary.contains("| Target | Baseline |"), "{summary}");
}

#[test]
fn sweep_writes_one_row_per_point() {
    let d = tempfile::tempdir().unwrap();
    ok(&["sweep"], &tiny(), d.path());
    let csv = fs::read_to_string(d.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4, "{csv}");
    assert!(csv.starts_with("epsilon,"));
}

#[test]
fn encode_then_recognize_round_trip() {
    let d = tempfile::tempdir().unwrap();
    for cmd in ["prepare", "train-aae", "train-classifier"] {
        ok(&[cmd], &tiny(), d.path());
    }
    let enc = ok(&["encode"], &tiny(), d.path());
    assert!(enc.contains("compression ratio 4.00"), "{enc}");
    ok(&["recognize"], &tiny(), d.path());

    let archive = dataio::read_archive(&d.path().join("archive")).unwrap();
    let test: Vec<_> = archive.split.as_ref().unwrap().test.iter().map(|&i| archive.windows[i].clone()).collect();
    let frames = caae_core::codec::read_frames(&fs::read(d.path().join("frames.bin")).unwrap()).unwrap();
    assert_eq!(frames.len(), test.len());
    assert!(frames.iter().all(|f| f.payload_bits() == 8 * 16 * 4));

    let csv = fs::read_to_string(d.path().join("predictions.csv")).unwrap();
    let predicted: Vec<u32> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(predicted.len(), test.len());
    let again = tempfile::tempdir().unwrap();
    for f in ["archive", "aae.bin", "classifier.bin", "frames.bin"] {
        let from = d.path().join(f);
        if from.is_dir() {
            fs::create_dir(again.path().join(f)).unwrap();
            for e in fs::read_dir(&from).unwrap() {
                let e = e.unwrap();
                fs::copy(e.path(), again.path().join(f).join(e.file_name())).unwrap();
            }
        } else {
            fs::copy(&from, again.path().join(f)).unwrap();
        }
    }
    ok(&["recognize"], &tiny(), again.path());
    assert_eq!(csv, fs::read_to_string(again.path().join("predictions.csv")).unwrap());

    // Server-side activity F1 against a classifier on raw features.
    let cfg = RunConfig::load(&tiny()).unwrap();
    let classes: Vec<u32> = (0..3).collect();
    let truth: Vec<u32> = test.iter().map(|w| w.activity_id).collect();
    let f1 = |p: &[u32]| {
        estimators::macro_f1(&estimators::densify(p, &classes).unwrap(), &estimators::densify(&truth, &classes).unwrap(), 3).unwrap()
    };
    let train: Vec<_> = archive.split.as_ref().unwrap().train.iter().map(|&i| archive.windows[i].clone()).collect();
    let x = features::extract_matrix(&train, archive.sample_rate_hz).unwrap();
    let y: Vec<u32> = train.iter().map(|w| w.activity_id).collect();
    let (base, _) = estimators::train_classifier(x.view(), &y, &cfg.eval.estimator, InputKind::FeatureVector).unwrap();
    let xt = features::extract_matrix(&test, archive.sample_rate_hz).unwrap();
    let baseline: Vec<u32> = base.predict_batch(xt.view()).unwrap().iter().map(|p| p.label).collect();
    let (ours, theirs) = (f1(&predicted), f1(&baseline));
    assert!(ours >= theirs - 0.05, "server path {ours} vs raw baseline {theirs}");
}

#[test]
fn corrupt_bundle_is_refused_with_version_message() {
    let d = tempfile::tempdir().unwrap();
    ok(&["prepare"], &tiny(), d.path());
    ok(&["train-aae"], &tiny(), d.path());
    let path = d.path().join("aae.bin");
    let mut bytes = fs::read(&path).unwrap();
    bytes[4] = 99;
    fs::write(&path, &bytes).unwrap();
    let o = caae(&["encode"], &tiny(), d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));

    fs::write(&path, b"not a bundle").unwrap();
    let o = caae(&["encode"], &tiny(), d.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_dataset_path_is_a_data_error_naming_the_path() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(
        &cfg,
        r#"[data]
path = "no/such/dir"

[data.dataset]
layout = "long"
sample_rate_hz = 50.0
user_column = "user"
activity_column = "activity"
channels = [
  { column = "ax", kind = "accelerometer", axis = "x" },
  { column = "ay", kind = "accelerometer", axis = "y" },
  { column = "az", kind = "accelerometer", axis = "z" },
]
"#,
    )
    .unwrap();
    let o = caae(&["prepare"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/dir"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_1_with_line_numbers() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "seed = 1\n\n[data.synthetic]\nn_users = \"many\"\n").unwrap();
    let o = caae(&["prepare"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.toml:4:"), "{}", stderr(&o));

    let o = caae(&["experiment", "--variant", "bogus"], &tiny(), d.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = caae(&["sweep"], &tiny(), d.path());
    assert!(o.status.success());
    fs::write(&cfg, "[data.synthetic]\n").unwrap();
    let o = caae(&["sweep"], &cfg, d.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn missing_model_files_are_data_errors() {
    let d = tempfile::tempdir().unwrap();
    let o = caae(&["encode"], &tiny(), d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("aae.bin"), "{}", stderr(&o));
    let o = caae(&["recognize"], &tiny(), d.path());
    assert_eq!(o.status.code(), Some(2));
}
