use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use clinrag::config::RetrievalConfig;
use clinrag::synth::{
    near_duplicate, note_fixture, soap_text, synth_cases, synth_guidelines, write_fixture,
    SynthVocab,
};
use clinrag::{Engine, RetrieveOptions};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_clinrag"));
    for (k, _) in std::env::vars() {
        if k.starts_with("CLINRAG_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let sv = SynthVocab::generate(301);
        let mut cases = synth_cases(80, 302, &sv);
        cases.push(near_duplicate(&cases[3], "twin-of-3", &sv.vocab));
        write_fixture(
            &root.join("in"),
            &sv,
            &cases,
            &synth_guidelines(5, 303, &sv).docs,
        )
        .unwrap();
        fs::write(root.join("query.txt"), soap_text(&cases[3])).unwrap();
        Self { _tmp: tmp, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn ingest(&self, out: &str) -> Output {
        let i = |f: &str| self.p(&format!("in/{f}"));
        run(&[
            "ingest",
            "--cases",
            s(&i("cases.jsonl")),
            "--guidelines",
            s(&i("guidelines.jsonl")),
            "--vocab",
            s(&i("vocab.tsv")),
            "--rules",
            s(&i("rules.tsv")),
            "--qualifiers",
            s(&i("qualifiers.tsv")),
            "--out",
            s(&self.p(out)),
        ])
    }

    fn index(&self, store: &str, out: &str, seed: &str) -> Output {
        run(&[
            "index",
            "--store",
            s(&self.p(store)),
            "--embedder",
            "default",
            "--seed",
            seed,
            "--out",
            s(&self.p(out)),
        ])
    }

    fn built(self) -> Self {
        assert_eq!(code(&self.ingest("store")), 0);
        assert_eq!(code(&self.index("store", "idx", "4")), 0);
        self
    }
}

#[test]
fn ingest_is_byte_identical_across_runs() {
    let f = Fixture::new();
    let a = f.ingest("s1");
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert!(String::from_utf8_lossy(&a.stdout).contains("81 cases"));
    assert_eq!(code(&f.ingest("s2")), 0);
    for name in [
        "cases.jsonl",
        "guidelines.jsonl",
        "vocab.json",
        "graph.json",
    ] {
        let (x, y) = (
            fs::read(f.p("s1").join(name)).unwrap(),
            fs::read(f.p("s2").join(name)).unwrap(),
        );
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn index_twice_gives_identical_checksums() {
    let f = Fixture::new();
    assert_eq!(code(&f.ingest("store")), 0);
    let a = f.index("store", "i1", "9");
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let out = String::from_utf8_lossy(&a.stdout);
    assert!(
        out.lines()
            .any(|l| l.starts_with("patient_case") && l.trim_end().ends_with(" 81")),
        "{out}"
    );
    assert_eq!(code(&f.index("store", "i2", "9")), 0);
    let sums = |d: &str| fs::read_to_string(f.p(d).join("checksums.sha256")).unwrap();
    assert_eq!(sums("i1"), sums("i2"));
    assert_eq!(
        fs::read(f.p("i1").join("manifest.json")).unwrap(),
        fs::read(f.p("i2").join("manifest.json")).unwrap()
    );
}

#[test]
fn missing_input_exits_2() {
    let f = Fixture::new();
    let o = run(&[
        "ingest",
        "--cases",
        "/nonexistent.jsonl",
        "--guidelines",
        "x",
        "--vocab",
        "x",
        "--rules",
        "x",
        "--out",
        s(&f.p("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    assert_eq!(
        code(&run(&[
            "query",
            "--index",
            "/nonexistent",
            "--case",
            "/nonexistent"
        ])),
        2
    );
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn unreachable_embedder_exits_3() {
    let f = Fixture::new();
    assert_eq!(code(&f.ingest("store")), 0);
    let o = run(&[
        "index",
        "--store",
        s(&f.p("store")),
        "--embedder",
        "http://127.0.0.1:9/embed",
        "--out",
        s(&f.p("idx")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn query_json_equals_library_and_finds_duplicate() {
    let f = Fixture::new().built();
    let idx = f.p("idx");
    let q = f.p("query.txt");
    let o = run(&[
        "query",
        "--index",
        s(&idx),
        "--case",
        s(&q),
        "--json",
        "--k",
        "7",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let got: Value = serde_json::from_slice(&o.stdout).unwrap();
    // the query text is case-00003 itself; it is not excluded since its id differs
    let hits = got["evidence"]["patient_hits"].as_array().unwrap();
    assert_eq!(hits.len(), 7);
    let top2: Vec<&str> = hits[..2]
        .iter()
        .map(|h| h["case_id"].as_str().unwrap())
        .collect();
    assert!(
        top2.contains(&"twin-of-3") && top2.contains(&"case-00003"),
        "{top2:?}"
    );

    let engine = Engine::open(&idx, None, RetrievalConfig::default()).unwrap();
    let case = engine
        .lock_case(&fs::read_to_string(&q).unwrap(), "query:query")
        .unwrap();
    let want = engine
        .retrieve(
            &case,
            &RetrieveOptions {
                k_patients: Some(7),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(got, serde_json::to_value(want).unwrap());

    let again = run(&[
        "query",
        "--index",
        s(&idx),
        "--case",
        s(&q),
        "--json",
        "--k",
        "7",
    ]);
    assert_eq!(again.stdout, o.stdout);

    let off = run(&[
        "query",
        "--index",
        s(&idx),
        "--case",
        s(&q),
        "--json",
        "--toggles",
        "none",
    ]);
    assert_eq!(code(&off), 0);
    let v: Value = serde_json::from_slice(&off.stdout).unwrap();
    assert_eq!(v["evidence"]["patient_hits"], Value::Array(vec![]));
    assert_eq!(v["evidence"]["guideline_hits"], Value::Array(vec![]));

    let text = run(&["query", "--index", s(&idx), "--case", s(&q)]);
    assert_eq!(code(&text), 0);
    assert!(String::from_utf8_lossy(&text.stdout).contains("similar patients"));
}

#[test]
fn config_precedence_flag_env_file() {
    let f = Fixture::new().built();
    let cfg = f.p("c.toml");
    fs::write(&cfg, "[retrieval]\nk_patients = 4\n").unwrap();
    let hits = |extra: &[&str], env: Option<&str>| {
        let mut c = bin();
        c.args([
            "query",
            "--index",
            s(&f.p("idx")),
            "--case",
            s(&f.p("query.txt")),
            "--json",
            "--config",
            s(&cfg),
        ]);
        c.args(extra);
        if let Some(v) = env {
            c.env("CLINRAG_K_PATIENTS", v);
        }
        let o = c.output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        v["evidence"]["patient_hits"].as_array().unwrap().len()
    };
    assert_eq!(hits(&[], None), 4);
    assert_eq!(hits(&[], Some("2")), 2);
    assert_eq!(hits(&["--k", "3"], Some("2")), 3);
    fs::write(&cfg, "[retrieval]\nlambda = 4.0\n").unwrap();
    let o = run(&[
        "query",
        "--index",
        s(&f.p("idx")),
        "--case",
        s(&f.p("query.txt")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_subcommands_write_results() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sv = SynthVocab::generate(311);
    let (repo, items) = note_fixture(6, 60, 312, &sv);
    let cases: Vec<_> = repo.iter().cloned().collect();
    let files = write_fixture(
        &root.join("in"),
        &sv,
        &cases,
        &synth_guidelines(4, 313, &sv).docs,
    )
    .unwrap();
    let ok = |o: Output| {
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(run(&[
        "ingest",
        "--cases",
        s(&files.cases),
        "--guidelines",
        s(&files.guidelines),
        "--vocab",
        s(&files.vocab),
        "--rules",
        s(&files.rules),
        "--out",
        s(&root.join("store")),
    ]));
    ok(run(&[
        "index",
        "--store",
        s(&root.join("store")),
        "--out",
        s(&root.join("idx")),
    ]));
    let note_items: String = items
        .iter()
        .map(|i| serde_json::to_string(i).unwrap() + "\n")
        .collect();
    fs::write(root.join("notes.jsonl"), note_items).unwrap();
    let idx = root.join("idx");
    let out = root.join("ablation.json");
    let table = ok(run(&[
        "eval",
        "note",
        "--index",
        s(&idx),
        "--items",
        s(&root.join("notes.jsonl")),
        "--ablation",
        "--out",
        s(&out),
    ]));
    assert!(table.contains("+SPR") && table.contains("baseline"));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    let rl = |i: usize| runs[i]["report"]["mean"]["rouge_l"].as_f64().unwrap();
    assert!(rl(0) < rl(1) && rl(0) < rl(3));
    assert_eq!(runs[1]["report"]["items"].as_array().unwrap().len(), 6);

    let sweep = ok(run(&[
        "eval",
        "sweep",
        "--index",
        s(&idx),
        "--items",
        s(&root.join("notes.jsonl")),
        "--grid",
        "0,0.5,1",
    ]));
    assert!(sweep.contains("best lambda"));

    let mcq = r#"{"item_id":"m1","stem":"Which first?","options":["a","b"],"answer_index":0}"#;
    fs::write(root.join("mcq.jsonl"), format!("{mcq}\n")).unwrap();
    let r = ok(run(&[
        "eval",
        "mcq",
        "--index",
        s(&idx),
        "--items",
        s(&root.join("mcq.jsonl")),
        "--client",
        "mock",
    ]));
    assert!(r.contains("accuracy"));
    fs::write(root.join("bad.jsonl"), "{\"item_id\":1}\n").unwrap();
    let bad = run(&[
        "eval",
        "mcq",
        "--index",
        s(&idx),
        "--items",
        s(&root.join("bad.jsonl")),
    ]);
    assert_eq!(code(&bad), 2);
    let remote = run(&[
        "eval",
        "mcq",
        "--index",
        s(&idx),
        "--items",
        s(&root.join("mcq.jsonl")),
        "--client",
        "remote",
    ]);
    assert_eq!(code(&remote), 2);
    let down = bin()
        .args([
            "eval",
            "mcq",
            "--index",
            s(&idx),
            "--items",
            s(&root.join("mcq.jsonl")),
            "--client",
            "remote",
        ])
        .env(
            "CLINRAG_LLM_ENDPOINT",
            "http://127.0.0.1:9/v1/chat/completions",
        )
        .output()
        .unwrap();
    assert_eq!(code(&down), 3);
}

#[test]
fn serve_answers_health_checks() {
    let f = Fixture::new().built();
    let mut child = bin()
        .args([
            "serve",
            "--index",
            s(&f.p("idx")),
            "--port",
            "0",
            "--mock-llm",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .unwrap()
        .to_string();
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"loaded\":true"));
}
