use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn delins(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delins")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn records(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn write_lines(path: &Path, lines: &[&str]) {
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn count_examples() {
    for (sub, seq, want) in [("bag", "babgbag", "5"), ("", "babgbag", "1"), ("babgbagx", "bag", "0")] {
        let o = delins(&["count", sub, seq, "--seed", "0"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).trim(), want, "{sub} in {seq}");
    }
    let o = delins(&["count", "a b", "a b a b", "--tokenizer", "whitespace", "--domain", "log", "--seed", "0"]);
    assert!(stdout(&o).starts_with("3.000000e0"), "{}", stdout(&o));
}

#[test]
fn count_grid_as_json() {
    let o = delins(&["count", "bag", "babgbag", "--grid", "--format", "json", "--seed", "0"]);
    let r = &records(&stdout(&o))[0];
    assert_eq!(r["count"], 5);
    let rows = r["grid"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let total: f64 = rows.iter().flat_map(|row| row.as_array().unwrap()).map(|x| x.as_f64().unwrap()).sum();
    assert_eq!(total, 5.0 * 4.0);
}

#[test]
fn exit_codes() {
    assert_eq!(delins(&["--help"]).status.code(), Some(0));
    assert_eq!(delins(&["--version"]).status.code(), Some(0));
    assert_eq!(delins(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(delins(&["count", "a", "b", "--domain", "fast"]).status.code(), Some(1));
    assert_eq!(delins(&["train", "--seed", "1"]).status.code(), Some(1));
    assert_eq!(delins(&["sample", "--checkpoint", "/nonexistent/model", "--seed", "1"]).status.code(), Some(3));
    assert_eq!(delins(&["verify", "--seed", "1"]).status.code(), Some(0));
    let faulty = delins(&["verify", "--inject-fault", "--seed", "1"]);
    assert_eq!(faulty.status.code(), Some(2));
    assert!(stdout(&faulty).contains("FAIL ratio-grand-sum"));
}

#[test]
fn bench_needs_two_lengths() {
    let o = delins(&["bench", "--lengths", "256", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 2"));
    let o = delins(&["bench", "--lengths", "16,32,64", "--reps", "3", "--batch", "2", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = records(&stdout(&o));
    assert_eq!(r.len(), 5);
    assert!(r[1]["var_ms2"].as_f64().unwrap() >= 0.0);
    assert!(r[4]["fit"]["exponent"].as_f64().unwrap().is_finite());
}

#[test]
fn omitted_seed_is_drawn_and_logged() {
    let o = delins(&["count", "a", "aa"]);
    assert!(stderr(&o).contains("drawn from entropy"));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_lines(&corpus, &["abc", "abd", "bcd"]);
    let out = dir.path().join("m.ckpt");
    let metrics = dir.path().join("m.jsonl");
    let o = delins(&["train", "--corpus", p(&corpus), "--out", p(&out), "--metrics", p(&metrics), "--dry-run", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = records(&stdout(&o));
    assert_eq!(r[0]["config"]["steps"], 1);
    assert_eq!(r[1]["dry_run"]["sequences"], 3);
    assert!(!out.exists() && !metrics.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn ragged_fixed_length_corpus_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_lines(&corpus, &["abcd", "", "abce", "abc", "abcd"]);
    let o = delins(&["train", "--corpus", p(&corpus), "--mode", "dice", "--out", p(&dir.path().join("m")), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn sample_zero_count_is_an_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_lines(&corpus, &["abc", "abd"]);
    let ckpt = dir.path().join("m.ckpt");
    let t = delins(&["train", "--corpus", p(&corpus), "--out", p(&ckpt), "--steps", "5", "--seed", "1"]);
    assert!(t.status.success(), "{}", stderr(&t));
    let o = delins(&["sample", "--checkpoint", p(&ckpt), "--count", "0", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = records(&stdout(&o));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0]["summary"]["count"], 0);
}

#[test]
fn fixed_length_samples_hit_k_and_keep_the_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_lines(&corpus, &["abcdefgh", "hgfedcba", "aabbccdd", "abababab"]);
    let ckpt = dir.path().join("m.ckpt");
    let t = delins(&["train", "--corpus", p(&corpus), "--mode", "dice", "--out", p(&ckpt), "--steps", "200", "--seed", "2"]);
    assert!(t.status.success(), "{}", stderr(&t));
    let o = delins(&["sample", "--checkpoint", p(&ckpt), "--count", "100", "--steps", "64", "--seed", "3"]);
    let r = records(&stdout(&o));
    assert_eq!(r.len(), 101);
    assert!(r[..100].iter().all(|x| x["length"] == 8), "{}", stdout(&o));
    assert_eq!(r[100]["summary"]["mean_length"], 8.0);

    let o = delins(&["sample", "--checkpoint", p(&ckpt), "--count", "20", "--steps", "64", "--prompt", "ab", "--seed", "4"]);
    for x in &records(&stdout(&o))[..20] {
        let text = x["text"].as_str().unwrap();
        assert!(text.starts_with("ab") && text.len() == 8, "{text}");
    }
    let o = delins(&["sample", "--checkpoint", p(&ckpt), "--prompt", "xyz", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_lines(&corpus, &["abcab", "bca", "cabbac", "aab", "bcbcb"]);
    let (full, part, resumed) = (dir.path().join("full"), dir.path().join("part"), dir.path().join("resumed"));
    let common = ["--corpus", p(&corpus), "--steps", "40", "--batch", "3", "--seed", "9", "--parallel", "false"];
    let run = |extra: &[&str]| {
        let o = delins(&[&["train"][..], &common, extra].concat());
        assert!(o.status.success(), "{}", stderr(&o));
        o
    };
    run(&["--out", p(&full)]);
    run(&["--out", p(&part), "--halt-at", "15"]);
    let o = run(&["--out", p(&resumed), "--resume", p(&part)]);
    let r = records(&stdout(&o));
    assert_eq!(r[1]["step"], 16);
    assert_eq!(r.last().unwrap()["done"]["steps"], 40);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&resumed).unwrap());
    let o = delins(&[&["train"][..], &common, &["--out", p(&part), "--resume", p(&full), "--mode", "dice"]].concat());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_lines(&corpus, &["abc", "bca"]);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!("seed = 4\n\n[train]\ncorpus = {:?}\nsteps = 7\nbatch = 2\nlr = 0.01\n", p(&corpus)),
    )
    .unwrap();
    let o = delins(&["train", "--config", p(&cfg), "--dry-run", "--steps", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = &records(&stdout(&o))[0]["config"];
    assert_eq!(c["steps"], 9);
    assert_eq!(c["batch"], 2);
    assert_eq!(c["lr"], 0.01);
    assert_eq!(c["seed"], 4);
    assert_eq!(c["lr_schedule"], "cosine");
    fs::write(&cfg, "[train]\nlearning_rate = 1\n").unwrap();
    assert_eq!(delins(&["train", "--config", p(&cfg), "--dry-run"]).status.code(), Some(1));
}

#[test]
fn checkpoint_version_mismatch_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_lines(&corpus, &["abc", "bca"]);
    let ckpt = dir.path().join("m.ckpt");
    assert!(delins(&["train", "--corpus", p(&corpus), "--out", p(&ckpt), "--steps", "2", "--seed", "1"]).status.success());
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    fs::write(&ckpt, bytes).unwrap();
    let o = delins(&["sample", "--checkpoint", p(&ckpt), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));
}

#[test]
fn trace_dump_holds_every_state() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    write_lines(&corpus, &["abc", "bca"]);
    let ckpt = dir.path().join("m.ckpt");
    assert!(delins(&["train", "--corpus", p(&corpus), "--out", p(&ckpt), "--steps", "2", "--seed", "1"]).status.success());
    let trace = dir.path().join("trace.jsonl");
    let o = delins(&["sample", "--checkpoint", p(&ckpt), "--count", "3", "--steps", "16", "--trace", p(&trace), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = records(&fs::read_to_string(&trace).unwrap());
    assert_eq!(t.len(), 3);
    let states = t[0]["states"].as_array().unwrap();
    assert_eq!(states.len(), 17);
    assert_eq!(states[0]["length"], 0);
    assert_eq!(states[16]["t"], 0.0);
}
