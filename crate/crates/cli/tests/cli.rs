//! Binary-level tests: exit codes, a micro train→generate round trip, and
//! evaluation of a hand-written generation file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// Run the binary from the workspace root so the bundled mini-corpus paths
/// in config files resolve.
fn fabula(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fabula"))
        .args(args)
        .current_dir(workspace_root())
        .output()
        .expect("spawn fabula")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "wibble = 3\n").unwrap();
    let out = fabula(&["--config", cfg.to_str().unwrap(), "train-ntm"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("wibble"));
}

#[test]
fn usage_error_exits_2() {
    let out = fabula(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_without_checkpoints_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = fabula(&[
        "--config",
        "data/mini/config.mini",
        "--checkpoint-dir",
        dir.path().to_str().unwrap(),
        "--skeleton-source",
        "none",
        "generate",
        "--title",
        "a quiet morning",
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("storygen"), "stderr: {}", stderr(&out));
}

/// Micro config on the bundled mini corpus: a tiny story model trained with
/// no skeletons, so only one stage is needed before generating.
fn micro_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("micro.cfg");
    fs::write(
        &cfg,
        "preset = rocstories\n\
         data.stories = data/mini/stories.jsonl\n\
         data.embed_dim = 20\n\
         vocab.topic = 300\n\
         vocab.generation = 500\n\
         topics = 4\n\
         n = 3\n\
         n_prime = 10\n\
         seed = 5\n\
         skeleton_source = none\n\
         storygen.d_model = 16\n\
         storygen.heads = 2\n\
         storygen.layers = 1\n\
         storygen.d_ff = 32\n\
         storygen.max_len = 64\n\
         storygen.steps = 40\n\
         storygen.batch = 4\n\
         storygen.warmup = 10\n\
         generate.max_tokens = 12\n",
    )
    .unwrap();
    cfg
}

#[test]
fn train_generate_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let ck = dir.path().join("ck");
    let ck = ck.to_str().unwrap();

    let out = fabula(&["--config", cfg, "--checkpoint-dir", ck, "train-storygen"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("storygen"), "stdout: {}", stdout(&out));

    let titles = dir.path().join("titles.txt");
    fs::write(&titles, "the tide and the lighthouse\na lantern in the pines\n").unwrap();
    let gen_a = dir.path().join("a.jsonl");
    let gen_b = dir.path().join("b.jsonl");
    for gen in [&gen_a, &gen_b] {
        let out = fabula(&[
            "--config",
            cfg,
            "--checkpoint-dir",
            ck,
            "generate",
            "--input",
            titles.to_str().unwrap(),
            "--output",
            gen.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    let a = fs::read(&gen_a).unwrap();
    assert_eq!(a, fs::read(&gen_b).unwrap(), "two generate runs differ");

    let text = String::from_utf8(a).unwrap();
    let records: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["title"], "the tide and the lighthouse");
    assert_eq!(records[0]["skeleton"].as_array().unwrap().len(), 0, "none source");
    assert!(!records[0]["story"].as_str().unwrap().is_empty());
}

#[test]
fn evaluate_reports_metrics_and_rouge() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen.jsonl");
    fs::write(
        &gen,
        concat!(
            r#"{"title":"t1","skeleton":["storm","harbor","gull"],"story":"the storm rolled in . the gull hid by the harbor ."}"#,
            "\n",
            r#"{"title":"t2","skeleton":["ember","cabin","frost"],"story":"frost climbed the window . an ember held the cabin warm ."}"#,
            "\n"
        ),
    )
    .unwrap();
    let refs = dir.path().join("refs.txt");
    fs::write(
        &refs,
        "the storm rolled in over the harbor .\nthe cabin stayed warm all winter .\n",
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let ck = dir.path().join("ck");
    fs::create_dir(&ck).unwrap();

    let out = fabula(&[
        "--checkpoint-dir",
        ck.to_str().unwrap(),
        "evaluate",
        "--generated",
        gen.to_str().unwrap(),
        "--references",
        refs.to_str().unwrap(),
        "--output",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for key in ["inter_s=", "intra_s=", "dist2=", "ent4=", "dist2_skeleton=", "rouge1=", "rougeL="]
    {
        assert!(text.contains(key), "missing {key} in: {text}");
    }
    // No scorer checkpoint in the directory, so no perplexity.
    assert!(!text.contains("ppl="), "unexpected ppl in: {text}");

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["dist2_skeleton"].as_f64().unwrap() > 0.0);
    assert!(json.get("ppl").is_none());
}
