use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_mimicry-lab");

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/chat_corpus.txt")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MIMICRY_LAB_SEED")
        .output()
        .expect("spawn mimicry-lab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Trains the default model into `dir` and returns its path.
fn train(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let corpus = corpus();
    let mut args = vec!["train-lm", "--corpus", p(&corpus), "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "train-lm failed: {}", stderr(&o));
    out
}

fn checksum(o: &Output) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("checksum\t"))
        .expect("checksum line")
        .to_string()
}

#[test]
fn train_lm_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = run(&["train-lm", "--corpus", p(&corpus()), "--out", p(&dir.path().join("a.json"))]);
    let b = run(&["train-lm", "--corpus", p(&corpus()), "--out", p(&dir.path().join("b.json"))]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(checksum(&a), checksum(&b));
    assert!(stdout(&a).starts_with("vocab_size\t"));
}

#[test]
fn train_lm_rejects_empty_corpus() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "\n  \n").unwrap();
    let o = run(&["train-lm", "--corpus", p(&empty), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty corpus"), "{}", stderr(&o));
}

#[test]
fn generate_is_seeded() {
    let dir = TempDir::new().unwrap();
    let model = train(dir.path(), "m.json", &[]);
    let gen = |seed: &str| {
        let o = run(&["generate", "--model", p(&model), "--key", "0x2a", "--max-tokens", "40", "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert_eq!(gen("7"), gen("7"));
    assert_ne!(gen("7"), gen("8"));

    // The environment variable stands in for --seed.
    let env = Command::new(BIN)
        .args(["generate", "--model", p(&model), "--key", "42", "--max-tokens", "40"])
        .env("MIMICRY_LAB_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(stdout(&env), gen("7"));
}

fn detect(model: &Path, text: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["detect", "--model", p(model)];
    args.extend_from_slice(extra);
    args.push(p(text));
    run(&args)
}

#[test]
fn detect_exit_codes() {
    let dir = TempDir::new().unwrap();
    let model = train(dir.path(), "m.json", &[]);
    for scheme in ["greenlist", "expmin"] {
        let o = run(&[
            "generate", "--model", p(&model), "--scheme", scheme, "--key", "1234", "--seed", "1",
        ]);
        assert!(o.status.success());
        let text = dir.path().join(format!("{scheme}.txt"));
        fs::write(&text, stdout(&o)).unwrap();

        let own = detect(&model, &text, &["--scheme", scheme, "--key", "1234"]);
        assert_eq!(own.status.code(), Some(0), "{scheme}: {}", stdout(&own));
        let json: serde_json::Value = serde_json::from_str(stdout(&own).trim()).unwrap();
        assert!(json["p_value"].as_f64().unwrap() < 0.01);

        // Wrong keys: each is a level-0.01 test on unrelated text.
        let flags = (0..100)
            .filter(|k| {
                let key = (5000 + k).to_string();
                detect(&model, &text, &["--scheme", scheme, "--key", &key]).status.code() == Some(0)
            })
            .count();
        assert!(flags <= 3, "{scheme}: {flags} wrong keys flagged");

        // Masking every n-gram of the reference leaves nothing to score.
        let masked = detect(
            &model,
            &text,
            &["--scheme", scheme, "--key", "1234", "--dedup", "cross_prompt", "--reference", p(&text)],
        );
        assert_eq!(masked.status.code(), Some(1));
        let json: serde_json::Value = serde_json::from_str(stdout(&masked).trim()).unwrap();
        assert_eq!(json["scored"], 0);
        assert_eq!(json["p_value"], 1.0);
    }
}

#[test]
fn detect_reads_stdin() {
    let dir = TempDir::new().unwrap();
    let model = train(dir.path(), "m.json", &[]);
    let text = stdout(&run(&["generate", "--model", p(&model), "--key", "9", "--seed", "3"]));
    let mut child = Command::new(BIN)
        .args(["detect", "--model", p(&model), "--key", "9"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn detect_bad_flags_exit_2() {
    let dir = TempDir::new().unwrap();
    let model = train(dir.path(), "m.json", &[]);
    let text = dir.path().join("t.txt");
    fs::write(&text, "hello there").unwrap();
    let o = detect(&model, &text, &["--gamma", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = detect(&model, &text, &["--dedup", "cross_prompt"]);
    assert_eq!(o.status.code(), Some(2));
}

const SMALL_GRID: &str = r#"{
  "grid": {
    "schemes": ["greenlist", "expmin"],
    "keys": [11, 12],
    "h_values": [2, 4],
    "temperatures": [[1.0, 0.8]],
    "turns": 3,
    "concat_r": [1, 2],
    "conversations": 6,
    "alpha": 0.01,
    "gamma": 0.25,
    "delta": 4.0,
    "tokens_per_turn": 20,
    "base_dedup": "in_text"
  },
  "speaker_model": {"path": "model.json"},
  "lambda": 0.3,
  "min_match": 3,
  "out_dir": "out",
  "master_seed": 5
}"#;

#[test]
fn simulate_reruns_identically() {
    let dir = TempDir::new().unwrap();
    train(dir.path(), "model.json", &[]);
    let cfg = dir.path().join("small.json");
    fs::write(&cfg, SMALL_GRID).unwrap();
    let a = run(&["simulate", "--config", p(&cfg)]);
    assert!(a.status.success(), "{}", stderr(&a));
    let out = dir.path().join("out");
    let first: Vec<Vec<u8>> = ["results.jsonl", "results.csv", "summary.csv", "ngram_sweep.csv"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    let b = run(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("again")), "--jobs", "2"]);
    assert!(b.status.success(), "{}", stderr(&b));
    assert_eq!(fs::read(dir.path().join("again/results.jsonl")).unwrap(), first[0]);
    assert_eq!(fs::read(dir.path().join("again/results.csv")).unwrap(), first[1]);
    assert_eq!(stdout(&a), stdout(&b));

    // 2 schemes x 2 h x 2 R x 2 dedup variants.
    let summary = String::from_utf8(first[2].clone()).unwrap();
    assert_eq!(summary.lines().count(), 1 + 16);
    assert!(summary.lines().next().unwrap().contains("p_mean"));

    let c = run(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("seeded")), "--seed", "6"]);
    assert!(c.status.success());
    assert_ne!(fs::read(dir.path().join("seeded/results.jsonl")).unwrap(), first[0]);
}

#[test]
fn simulate_rejects_unknown_config_keys() {
    let dir = TempDir::new().unwrap();
    train(dir.path(), "model.json", &[]);
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, SMALL_GRID.replace("\"lambda\"", "\"lamda\": 0.1,\n  \"lambda\"")).unwrap();
    let o = run(&["simulate", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn annotate_marks_shared_spans() {
    let dir = TempDir::new().unwrap();
    let model = train(dir.path(), "m.json", &[]);
    let prompt = dir.path().join("prompt.txt");
    let response = dir.path().join("response.txt");
    fs::write(&prompt, "I cleaned the living room on friday evening. We are planning a trip.").unwrap();
    fs::write(&response, "Nice, I cleaned the living room on friday too.").unwrap();
    let html = dir.path().join("a.html");
    let o = run(&[
        "annotate", "--model", p(&model), "--prompt", p(&prompt), "--response", p(&response), "--html", p(&html),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    // Text is lowercased by the tokenizer.
    assert_eq!(text.matches("«i cleaned the living room on friday»").count(), 2, "{text}");
    assert!(text.contains("» evening"));
    let html = fs::read_to_string(html).unwrap();
    assert!(html.contains("prompt-reuse") && html.contains("response-reuse"));
}

fn write_jsonl(path: &Path, convs: &[Vec<(&str, String)>]) {
    let mut f = fs::File::create(path).unwrap();
    for turns in convs {
        let turns: Vec<_> = turns.iter().map(|(r, t)| serde_json::json!({"role": r, "text": t})).collect();
        writeln!(f, "{}", serde_json::json!({ "turns": turns })).unwrap();
    }
}

fn held_out() -> Vec<String> {
    fs::read_to_string(corpus())
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .skip(1)
        .step_by(2)
        .map(str::to_string)
        .collect()
}

#[test]
fn score_dataset_min_turns_filter() {
    let dir = TempDir::new().unwrap();
    let model = train(dir.path(), "m.json", &[]);
    let lines = held_out();
    let mut convs = Vec::new();
    for (i, chunk) in lines.chunks(4).take(40).enumerate() {
        let n = 1 + i % 4;
        let roles = ["user", "assistant"];
        convs.push((0..n).map(|j| (roles[j % 2], chunk[j].clone())).collect::<Vec<_>>());
    }
    let jsonl = dir.path().join("d.jsonl");
    write_jsonl(&jsonl, &convs);
    for min_turns in [0usize, 2, 3, 4] {
        let expected = convs.iter().filter(|c| c.len() >= min_turns).count();
        let o = run(&[
            "score-dataset", "--jsonl", p(&jsonl), "--detector", "greenlist", "--model", p(&model),
            "--min-turns", &min_turns.to_string(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let kept: usize = stderr(&o)
            .split_whitespace()
            .nth(1)
            .and_then(|w| w.parse().ok())
            .expect("kept count");
        assert_eq!(kept, expected, "min_turns {min_turns}");
        // Turn 0 always has every kept conversation.
        let mut csv = csv::Reader::from_reader(o.stdout.as_slice());
        let first: csv::StringRecord = csv.records().next().unwrap().unwrap();
        assert_eq!(first[2].parse::<usize>().unwrap(), expected);
    }
    let o = run(&[
        "score-dataset", "--jsonl", p(&jsonl), "--detector", "expmin", "--model", p(&model), "--min-turns", "9",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn score_dataset_calibration_holds_out() {
    let dir = TempDir::new().unwrap();
    let lines: Vec<String> = fs::read_to_string(corpus())
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    let train_file = dir.path().join("train.txt");
    fs::write(&train_file, lines.iter().step_by(2).cloned().collect::<Vec<_>>().join("\n")).unwrap();
    let mk = |name: &str, order: &str, k: &str| {
        let out = dir.path().join(name);
        let o = run(&["train-lm", "--corpus", p(&train_file), "--order", order, "--k", k, "--out", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let observer = mk("obs.json", "3", "1e-4");
    let performer = mk("perf.json", "4", "1e-6");
    let held = held_out();
    let (cal, test) = held.split_at(held.len() / 2);
    let cal_file = dir.path().join("cal.txt");
    fs::write(&cal_file, cal.join("\n")).unwrap();
    let convs: Vec<Vec<(&str, String)>> = test.iter().map(|l| vec![("human", l.clone())]).collect();
    let jsonl = dir.path().join("test.jsonl");
    write_jsonl(&jsonl, &convs);
    let o = run(&[
        "score-dataset", "--jsonl", p(&jsonl), "--detector", "ratio", "--model", p(&observer),
        "--performer", p(&performer), "--calibrate", p(&cal_file), "--fpr", "0.05", "--flags",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut csv = csv::Reader::from_reader(o.stdout.as_slice());
    let row = csv.records().next().unwrap().unwrap();
    let n: usize = row[2].parse().unwrap();
    let fpr: f64 = row[3].parse().unwrap();
    assert!(n > 1500, "{n}");
    // ~1900 test lines: the binomial 99.9% band around 5% is about ±1.7 points.
    assert!((0.033..=0.067).contains(&fpr), "held-out FPR {fpr}");

    let o = run(&[
        "score-dataset", "--jsonl", p(&jsonl), "--detector", "ratio", "--model", p(&observer), "--flags",
        "--performer", p(&performer),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
