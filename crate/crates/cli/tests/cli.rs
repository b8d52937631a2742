use std::path::Path;
use std::process::{Command, Output};

fn drumscribe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drumscribe"))
        .args(args)
        .env_remove("DRUMSCRIBE_WORKDIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = drumscribe(args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn fails(args: &[&str]) -> String {
    let o = drumscribe(args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Toy corpus of `n` files built into a split dataset.
fn dataset(root: &Path, n: usize, schema: &str) -> std::path::PathBuf {
    let corpus = root.join("corpus");
    let ds = root.join("ds");
    ok(&["dataset", "toy-corpus", "--out", s(&corpus), "--n-tracks", &n.to_string(), "--min-duration", "30", "--seed", "3"]);
    ok(&["dataset", "build", "--corpus", s(&corpus), "--workdir", s(&ds), "--schema", schema]);
    ok(&["dataset", "split", "--workdir", s(&ds), "--val-fraction", "0.25"]);
    ds
}

#[test]
fn dataset_commands() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["dataset", "toy-corpus", "--out", s(&corpus), "--n-tracks", "5", "--ride-prob", "0.05"]);
    let ds = dir.path().join("ds");
    ok(&["dataset", "build", "--corpus", s(&corpus), "--workdir", s(&ds), "--schema", "8"]);
    let m = manifest(&ds);
    let n = m["tracks"].as_array().unwrap().len();
    assert!(n <= 5 && n + m["removed"].as_array().unwrap().len() == 5);

    ok(&["dataset", "balance", "--workdir", s(&ds)]);
    assert!(ds.join("swap_log.csv").exists());
    assert!(ds.join("run_config.balance.json").exists());

    let err = fails(&["dataset", "split", "--workdir", s(&ds), "--groups", "0,3;1,4"]);
    assert!(err.contains("soundfont 2"), "{err}");
    ok(&["dataset", "split", "--workdir", s(&ds)]);
    assert_eq!(manifest(&ds)["folds"].as_array().unwrap().len(), 3);
}

#[test]
fn workdir_from_environment_and_config_replay() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    ok(&["dataset", "toy-corpus", "--out", s(&corpus), "--n-tracks", "2"]);
    let ds = dir.path().join("ds");
    let o = Command::new(env!("CARGO_BIN_EXE_drumscribe"))
        .args(["dataset", "build", "--corpus", s(&corpus), "--schema", "3"])
        .env("DRUMSCRIBE_WORKDIR", &ds)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(ds.join("manifest.json")).unwrap();

    // Replaying the saved config into another directory gives the same
    // manifest; the flag overrides the stored workdir.
    let ds2 = dir.path().join("ds2");
    let cfg = ds.join("run_config.build.json");
    ok(&["dataset", "build", "--config", s(&cfg), "--workdir", s(&ds2)]);
    assert_eq!(first, std::fs::read(ds2.join("manifest.json")).unwrap());
    assert_eq!(manifest(&ds2)["schema"], "3");
}

#[test]
fn train_transcribe_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 6, "18");
    let out = dir.path().join("run");
    let args = [
        "train", "--workdir", s(&ds), "--out", s(&out), "--folds", "0", "--model", "crnn", "--schema", "18",
        "--size", "desk", "--max-epochs", "2", "--seq-len", "100",
    ];
    ok(&args);
    assert!(out.join("fold0/model.dsck").exists());
    assert!(!out.join("fold1").exists());
    let history = std::fs::read(out.join("fold0/history.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&history).lines().count(), 3);

    let model = drumscribe_core::model::TrainedModel::load(&out.join("fold0/model.dsck")).unwrap();
    assert_eq!(model.net.spec().n_classes, 18);

    let out2 = dir.path().join("run2");
    ok(&["train", "--config", s(&out.join("run_config.json")), "--out", s(&out2)]);
    assert_eq!(history, std::fs::read(out2.join("fold0/history.csv")).unwrap());

    let err = fails(&["train", "--workdir", s(&ds), "--schema", "8", "--out", s(&dir.path().join("x"))]);
    assert!(err.contains("does not match"), "{err}");

    // Silence gives no onsets; a rendered track gives some at a low threshold.
    let silence = dir.path().join("silence.wav");
    drumscribe_core::audio::write_wav(&silence, &drumscribe_core::AudioBuffer::silence(44_100 * 2, 44_100)).unwrap();
    let ck = out.join("fold0/model.dsck");
    let tr = dir.path().join("tr");
    ok(&["transcribe", s(&silence), "--checkpoint", s(&ck), "--out", s(&tr)]);
    assert_eq!(std::fs::read_to_string(tr.join("silence.txt")).unwrap().trim(), "");
    let track = ds.join("audio").join(std::fs::read_dir(ds.join("audio")).unwrap().next().unwrap().unwrap().file_name());
    ok(&["transcribe", s(&track), "--checkpoint", s(&ck), "--out", s(&tr), "--delta", "0.01", "--activations"]);
    let stem = track.file_stem().unwrap().to_str().unwrap();
    assert!(!std::fs::read_to_string(tr.join(format!("{stem}.txt"))).unwrap().trim().is_empty());
    assert!(tr.join(format!("{stem}.activations.csv")).exists());

    let err = fails(&["transcribe", s(&silence), "--checkpoint", s(&ck), "--schema", "3", "--out", s(&tr)]);
    assert!(err.contains("schema"), "{err}");
}

fn write(dir: &Path, name: &str, body: &str) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join(name), body).unwrap();
}

fn summary(out: &Path) -> (f64, f64) {
    let text = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let get = |k: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{k},")))
            .unwrap()
            .parse::<f64>()
            .unwrap()
    };
    (get("mean_f"), get("sum_f"))
}

#[test]
fn eval_command() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("ref");
    write(&refs, "a.txt", "0.5\tBD\n1.0\tSD\n1.5\tHH\n");
    write(&refs, "b.txt", "0.25\tHH\n");
    let out = dir.path().join("same");
    ok(&["eval", "--pred", s(&refs), "--ref", s(&refs), "--out", s(&out)]);
    assert_eq!(summary(&out), (1.0, 1.0));
    assert!(out.join("confusion_masking.svg").exists());

    let empty = dir.path().join("empty");
    write(&empty, "a.txt", "");
    write(&empty, "b.txt", "");
    let out = dir.path().join("empty_out");
    ok(&["eval", "--pred", s(&empty), "--ref", s(&refs), "--out", s(&out)]);
    assert_eq!(summary(&out).1, 0.0);

    // Hand-computed: per class BD (tp1), SD (fn1), HH (tp1 fp1) pooled over
    // tracks gives tp 2, fp 1, fn 2, so sum F = 4/7.
    let pred = dir.path().join("pred");
    write(&pred, "a.txt", "0.51\tBD\n1.49\tHH\n");
    write(&pred, "b.txt", "0.9\tHH\n");
    let out = dir.path().join("pred_out");
    ok(&["eval", "--pred", s(&pred), "--ref", s(&refs), "--out", s(&out), "--schema", "3"]);
    assert!((summary(&out).1 - 4.0 / 7.0).abs() < 1e-4);

    write(&pred, "c.txt", "");
    let err = fails(&["eval", "--pred", s(&pred), "--ref", s(&refs), "--out", s(&out)]);
    assert!(err.contains("[c]"), "{err}");
}
