use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_xaistore");
const DEMO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/demo_headlines.csv");

fn cli(data: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("XAI_STORAGE", "fs")
        .env("XAI_DATA_DIR", data)
        .env_remove("XAI_GENERATOR_URL")
        .env_remove("XAI_USER")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn ingest(data: &Path) -> String {
    ok(&cli(data, &["ingest", DEMO])).trim().to_string()
}

#[test]
fn explain_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let ds = ingest(dir.path());
    let a = ok(&cli(dir.path(), &["explain", &ds, "1", "--method", "lime", "--seed", "7", "--samples", "300"]));
    let b = ok(&cli(dir.path(), &["explain", &ds, "1", "--method", "lime", "--seed", "7", "--samples", "300"]));
    assert_eq!(a, b);
    assert!(a.contains("method lime"));
    let c = ok(&cli(dir.path(), &["explain", &ds, "1"]));
    let d = ok(&cli(dir.path(), &["explain", &ds, "1", "--method", "occlusion"]));
    assert_eq!(c, d);
    assert!(c.lines().nth(2).unwrap().contains("growth"), "{c}");

    let listed = ok(&cli(dir.path(), &["artifacts", "ls"]));
    assert_eq!(listed.lines().count(), 5);
    let id = listed.lines().find(|l| l.contains("text_lime")).unwrap().split_whitespace().next().unwrap();
    let record = ok(&cli(dir.path(), &["artifacts", "get", id]));
    assert!(record.contains("\"plot_type\": \"text_lime\""));

    let cmp = ok(&cli(dir.path(), &["compare", &format!("{ds}:1"), "--k", "2"]));
    assert!(cmp.contains("top_k_overlap"));
}

#[test]
fn eval_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let ds = ingest(dir.path());
    ok(&cli(dir.path(), &["explain", &ds, "1"]));
    ok(&cli(dir.path(), &["explain", &ds, "1", "--method", "lime"]));
    let table = ok(&cli(dir.path(), &["eval"]));
    let halluc = table.lines().find(|l| l.starts_with("Hallucination rate")).unwrap();
    assert_eq!(halluc.split_whitespace().skip(2).collect::<Vec<_>>(), ["0.00", "0.00"]);
    let grounding = table.lines().find(|l| l.starts_with("Grounding completeness")).unwrap();
    assert_eq!(grounding.split_whitespace().skip(2).collect::<Vec<_>>(), ["1.00", "1.00"]);
    assert!(table.lines().next().unwrap().contains("naive"));

    let one = ok(&cli(dir.path(), &["eval", "--strategy", "naive", "--persist"]));
    assert_eq!(one.lines().next().unwrap().split_whitespace().collect::<Vec<_>>(), ["Metric", "naive"]);
    assert!(ok(&cli(dir.path(), &["artifacts", "ls"])).contains("faithfulness_report"));
}

#[test]
fn rehydrate_and_chat() {
    let dir = tempfile::tempdir().unwrap();
    let ds = ingest(dir.path());
    ok(&cli(dir.path(), &["explain", &ds, "1"]));
    assert_eq!(ok(&cli(dir.path(), &["rehydrate"])).trim(), "2");
    assert_eq!(ok(&cli(dir.path(), &["rehydrate", "--user", "nobody"])).trim(), "0");

    let answer = ok(&cli(dir.path(), &["chat", "--question", "Which words drove the BioNTech prediction?"]));
    assert!(answer.contains("occlusion"), "{answer}");
    assert!(answer.lines().any(|l| l.starts_with("cited: ") && l != "cited: none"));

    let mut child = Command::new(BIN)
        .args(["chat", "--strategy", "naive"])
        .env("XAI_STORAGE", "fs")
        .env("XAI_DATA_DIR", dir.path())
        .env_remove("XAI_USER")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"How many headlines are there?\n\nWhich words matter?\nexit\nignored\n")
        .unwrap();
    let out = ok(&child.wait_with_output().unwrap());
    assert_eq!(out.lines().filter(|l| l.starts_with("cited: ")).count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["explain"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(cli(dir.path(), &["ingest", "/does/not/exist.csv"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["explain", "NOPE", "1"]).status.code(), Some(1));
    let ds = ingest(dir.path());
    assert_eq!(cli(dir.path(), &["explain", &ds, "1", "--seed", "3"]).status.code(), Some(1));

    let down = Command::new(BIN)
        .args(["rehydrate"])
        .env("XAI_STORAGE", "s3")
        .env("XAI_S3_ENDPOINT", "http://127.0.0.1:1")
        .env("XAI_S3_ACCESS_KEY", "a")
        .env("XAI_S3_SECRET_KEY", "b")
        .output()
        .unwrap();
    assert_eq!(down.status.code(), Some(2), "{}", String::from_utf8_lossy(&down.stderr));
}
