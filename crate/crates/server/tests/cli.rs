use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FIXTURE: &str = r#"{"conversation_id":"c","speaker_id":"A","timestamp":1,"text":"hi"}
{"conversation_id":"c","speaker_id":"B","timestamp":2,"text":"hello"}
{"conversation_id":"c","speaker_id":"A","timestamp":3,"text":"bye"}
"#;

fn clonebot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clonebot")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture_engine(dir: &Path) -> (String, String) {
    let log = dir.join("log.jsonl");
    fs::write(&log, FIXTURE).unwrap();
    let corpus = dir.join("corpus").display().to_string();
    let engine = dir.join("engine").display().to_string();
    ok(clonebot(&["ingest", "--input", log.to_str().unwrap(), "--out", &corpus]));
    ok(clonebot(&["build-engine", "--corpus", &corpus, "--out", &engine, "--dim", "64"]));
    (corpus, engine)
}

#[test]
fn ingest_fixture_gives_one_conversation() {
    let dir = tempfile::tempdir().unwrap();
    fixture_engine(dir.path());
    let text = fs::read_to_string(dir.path().join("corpus/corpus.jsonl")).unwrap();
    let convs: std::collections::BTreeSet<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["conversation_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(convs.len(), 1);
    assert_eq!(text.lines().count(), 3);
    let split: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("corpus/split.json")).unwrap()).unwrap();
    assert_eq!(split["test_ids"], serde_json::json!([]));
}

#[test]
fn chat_answers_hi_with_hello() {
    let dir = tempfile::tempdir().unwrap();
    let (_, engine) = fixture_engine(dir.path());
    assert_eq!(ok(clonebot(&["chat", "--engine", &engine, "--target", "B", "hi"])), "hello\n");
    assert_eq!(ok(clonebot(&["chat", "--engine", &engine, "--target", "A", "hello"])), "bye\n");
}

#[test]
fn chat_reads_stdin_lines() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let (_, engine) = fixture_engine(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_clonebot"))
        .args(["chat", "--engine", &engine, "--target", "B"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"hi\n\nhi there\n").unwrap();
    let out = ok(child.wait_with_output().unwrap());
    assert_eq!(out, "B: hello\nB: hello\n");
}

#[test]
fn sampler_mode_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (_, engine) = fixture_engine(dir.path());
    let args = ["chat", "--engine", &engine, "--target", "B", "--mode", "sampler", "--preset", "kogpt2", "--seed", "3", "hi"];
    assert_eq!(ok(clonebot(&args)), ok(clonebot(&args)));
}

#[test]
fn mismatched_dimension_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, engine) = fixture_engine(dir.path());
    let out = clonebot(&["eval", "--corpus", &corpus, "--engine", &engine, "--dim", "32"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn exit_codes() {
    assert_eq!(clonebot(&["--help"]).status.code(), Some(0));
    assert_eq!(clonebot(&["--version"]).status.code(), Some(0));
    assert_eq!(clonebot(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(clonebot(&["ingest", "--input", "x.jsonl", "--out", "o", "--test-fraction", "1.5"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = clonebot(&["ingest", "--input", missing.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let (_, engine) = fixture_engine(dir.path());
    assert_eq!(clonebot(&["chat", "--engine", &engine, "--target", "Z", "hi"]).status.code(), Some(2));
    assert_eq!(clonebot(&["chat", "--engine", &engine, "--target", "B", "--k", "0", "hi"]).status.code(), Some(1));
}

#[test]
fn mostly_malformed_log_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    fs::write(&log, "{\n{\n{\"conversation_id\":\"c\",\"speaker_id\":\"A\",\"text\":\"hi\"}\n").unwrap();
    let out = clonebot(&["ingest", "--input", log.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed"));
}

#[test]
fn csv_input_with_column_map() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    fs::write(&log, "thread,who,body\nt,A,hi\nt,B,hello\n").unwrap();
    let out_dir = dir.path().join("o");
    ok(clonebot(&[
        "ingest", "--input", log.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
        "--col-conversation", "thread", "--col-speaker", "who", "--col-text", "body", "--no-timestamp-column",
    ]));
    assert_eq!(fs::read_to_string(out_dir.join("corpus.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn config_file_supplies_paths_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, engine) = fixture_engine(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, serde_json::json!({"corpus": corpus, "engine": engine, "k": 1}).to_string()).unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(ok(clonebot(&["--config", c, "chat", "--target", "B", "hi"])), "hello\n");
    assert_eq!(clonebot(&["--config", c, "chat", "--target", "B", "--k", "0", "hi"]).status.code(), Some(1));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"engine": "/no/such/dir"}"#).unwrap();
    assert_eq!(clonebot(&["--config", bad.to_str().unwrap(), "chat", "--target", "B", "hi"]).status.code(), Some(1));
}

#[test]
fn export_training_writes_examples() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = fixture_engine(dir.path());
    let out = dir.path().join("train.jsonl");
    let vocab = dir.path().join("vocab.txt");
    ok(clonebot(&["export-training", "--corpus", &corpus, "--out", out.to_str().unwrap(), "--vocab", vocab.to_str().unwrap(), "--format", "speaker-token-types"]));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["responder"], "B");
    assert!(fs::read_to_string(&vocab).unwrap().starts_with("<unk>\n<eos>\n"));
}
