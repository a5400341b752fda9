//! End-to-end tests against the compiled binary: the documented exit codes,
//! file outputs, and the simulate -> preprocess -> train -> decode ->
//! evaluate chain at a miniature scale.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mindspell");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed ({:?}):\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Miniature corpus and network: seconds, not minutes.
fn write_config(dir: &Path, sessions: usize) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            "[synth]\n\
             channels = 4\n\
             sessions = {sessions}\n\
             probe_reps = 1\n\
             \n\
             [network]\n\
             temporal_filters = 4\n\
             temporal_stride = 4\n\
             spatial_filters = 4\n\
             hidden = 8\n\
             \n\
             [train]\n\
             epochs = 2\n\
             batch_size = 8\n\
             learning_rate = 0.005\n\
             window_len = 512\n\
             \n\
             [decoder]\n\
             window_len = 512\n\
             shift = 256\n\
             \n\
             [eval]\n\
             seeds = [0]\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), 2);
    let cfg = s(&cfg_path);
    let data = tmp.path().join("data");

    let out = ok(&["simulate", "--config", cfg, "--out", s(&data), "--seed", "7"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mental_task: 216 segments"), "stdout: {stdout}");
    assert!(stdout.contains("direct: 72 segments"), "stdout: {stdout}");
    assert!(stdout.contains("probe: 4 segments"), "stdout: {stdout}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("# resolved configuration"), "stderr: {stderr}");
    assert!(stderr.contains("channels = 4"), "stderr: {stderr}");

    let staged = data.join("mental_task");
    let staged = s(&staged);

    // A preprocessed copy is marked and refuses a second pass.
    let clean = tmp.path().join("clean");
    ok(&["preprocess", "--config", cfg, "--data", staged, "--out", s(&clean)]);
    let sidecar = fs::read_to_string(clean.join("dataset.json")).unwrap();
    assert!(sidecar.contains("\"preprocessed\": true"));
    let clean2 = tmp.path().join("clean2");
    let twice = run(&["preprocess", "--config", cfg, "--data", s(&clean), "--out", s(&clean2)]);
    assert_eq!(code(&twice), 2);

    // Training writes a checkpoint plus one history row per epoch per split.
    let model = tmp.path().join("model.tsld");
    ok(&["train", "--config", cfg, "--data", staged, "--out", s(&model)]);
    assert!(model.exists());
    let history = fs::read_to_string(tmp.path().join("model.metrics.csv")).unwrap();
    assert!(history.starts_with("epoch,split,loss_mt,loss_es,acc_task,acc_eye\n"));
    assert_eq!(history.lines().count(), 1 + 2 * 2);

    // An existing checkpoint is refused without --force.
    let refused = run(&["train", "--config", cfg, "--data", staged, "--out", s(&model)]);
    assert_eq!(code(&refused), 3);
    ok(&["train", "--config", cfg, "--data", staged, "--out", s(&model), "--force"]);

    // Training accepts a preprocessed copy directly.
    let model2 = tmp.path().join("model2.tsld");
    ok(&["train", "--config", cfg, "--data", s(&clean), "--out", s(&model2)]);
    assert!(model2.exists());

    // Decode: three stage rows per character, byte-identical on a re-run.
    let report = tmp.path().join("report.csv");
    let out = ok(&[
        "decode", "--config", cfg, "--data", staged, "--model", s(&model), "--out", s(&report),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("decoded 72 characters"));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with(
        "character_gt,character_pred,stage_index,task_gt,task_pred,eye_gt,eye_pred,adjusted_prob\n"
    ));
    assert_eq!(text.lines().count(), 1 + 3 * 72);
    let report2 = tmp.path().join("report2.csv");
    ok(&[
        "decode", "--config", cfg, "--data", staged, "--model", s(&model), "--out", s(&report2),
    ]);
    assert_eq!(text, fs::read_to_string(&report2).unwrap());

    // One session only, selected by flag.
    let single = tmp.path().join("single.csv");
    let out = ok(&[
        "decode", "--config", cfg, "--data", staged, "--model", s(&model), "--out", s(&single),
        "--session", "0",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("decoded 36 characters"));

    // A staged checkpoint on direct data is a usage error.
    let direct_dir = data.join("direct");
    let mismatch = run(&[
        "decode", "--config", cfg, "--data", s(&direct_dir), "--model", s(&model), "--out",
        s(&tmp.path().join("x.csv")),
    ]);
    assert_eq!(code(&mismatch), 2);

    // Evaluate writes metrics and the optional curve.
    let evaldir = tmp.path().join("eval");
    ok(&[
        "evaluate", "--config", cfg, "--data", staged, "--out", s(&evaldir), "--epochs", "1",
        "--curve",
    ]);
    let json = fs::read_to_string(evaldir.join("metrics.json")).unwrap();
    assert!(json.contains("\"paradigm\": \"mental_task\""));
    assert!(json.contains("reference_top_k"));
    let csv = fs::read_to_string(evaldir.join("metrics.csv")).unwrap();
    // 2 folds x 1 seed, plus the header.
    assert_eq!(csv.lines().count(), 1 + 2);
    assert!(evaldir.join("curve.csv").exists());
}

#[test]
fn simulate_is_deterministic_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), 1);
    let cfg = s(&cfg_path);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--config", cfg, "--out", s(&a), "--seed", "11"]);
    ok(&["simulate", "--config", cfg, "--out", s(&b), "--seed", "11"]);
    for sub in ["mental_task", "direct", "probe"] {
        let sa = fs::read_to_string(a.join(sub).join("dataset.json")).unwrap();
        let sb = fs::read_to_string(b.join(sub).join("dataset.json")).unwrap();
        assert_eq!(sa, sb, "{sub} sidecars differ");
    }
    let fa = fs::read(a.join("mental_task/segments/s0_A_0.eegs")).unwrap();
    let fb = fs::read(b.join("mental_task/segments/s0_A_0.eegs")).unwrap();
    assert_eq!(fa, fb, "segment bytes differ");
    let c = tmp.path().join("c");
    ok(&["simulate", "--config", cfg, "--out", s(&c), "--seed", "12"]);
    let fc = fs::read(c.join("mental_task/segments/s0_A_0.eegs")).unwrap();
    assert_ne!(fa, fc, "different seeds must differ");
}

#[test]
fn divergent_training_exits_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("diverge.toml");
    fs::write(
        &cfg_path,
        "[synth]\nchannels = 4\nsessions = 1\nprobe_reps = 1\n\n\
         [network]\ntemporal_filters = 4\ntemporal_stride = 4\nspatial_filters = 4\nhidden = 8\n\n\
         [train]\nepochs = 3\nbatch_size = 8\nlearning_rate = 1e9\nwindow_len = 512\n",
    )
    .unwrap();
    let cfg = s(&cfg_path);
    let data = tmp.path().join("data");
    ok(&["simulate", "--config", cfg, "--out", s(&data)]);
    let staged = data.join("mental_task");
    let out = run(&[
        "train", "--config", cfg, "--data", s(&staged), "--out",
        s(&tmp.path().join("model.tsld")),
    ]);
    assert_eq!(code(&out), 4, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn usage_and_data_problems_use_their_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    // Unknown flag: clap's own usage exit.
    assert_eq!(code(&run(&["simulate", "--bogus"])), 2);

    // Missing required path.
    assert_eq!(code(&run(&["simulate"])), 2);

    // Unknown config key.
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[synth]\nchannells = 4\n").unwrap();
    assert_eq!(code(&run(&["simulate", "--config", s(&bad), "--out", s(&tmp.path().join("o"))])), 2);

    // Missing dataset directory.
    let out = run(&[
        "decode", "--data", "/nonexistent/data", "--model", "/nonexistent/m.tsld", "--out",
        s(&tmp.path().join("r.csv")),
    ]);
    assert_eq!(code(&out), 3);

    // Missing config file.
    assert_eq!(
        code(&run(&["simulate", "--config", "/nonexistent/cfg.toml", "--out", s(tmp.path())])),
        2
    );
}
