use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nested_tagger::align::build_noisy_corpus;
use nested_tagger::corpus::{
    noisy_texts, read_noisy_texts, read_tsv, synth_generate, write_noisy_texts, write_tsv, write_tsv_layout,
    NoiseConfig, TsvLayout,
};
use nested_tagger::{AnnotatedEntry, Entity, Format, LabelSchema};
use tempfile::TempDir;

const SUMMARY_TOL: f64 = 1e-5;

const TINY_TRAIN: &str = "learning_rate = 0.001\nmax_steps = 60\neval_every = 20\npatience = 2\nhash_bits = 10\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nested-tagger"));
    c.env_remove("NESTED_TAGGER_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files_under(root: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path.clone());
            }
            out.insert(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    out
}

fn aubery() -> AnnotatedEntry {
    AnnotatedEntry::new(
        "aubery",
        "Aubery je. r. Quincamp. pass. Beaufort.",
        vec![
            Entity::outer("PER", 0, 3),
            Entity::outer("LOC", 3, 7),
            Entity::outer("LOC", 7, 10),
        ],
    )
}

fn column(tsv: &str, k: usize) -> Vec<String> {
    tsv.lines()
        .skip(1)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').nth(k).unwrap().to_string())
        .collect()
}

fn synth_corpus(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("gold.tsv");
    let o = run(&["synth", "--n", &n.to_string(), "--seed", "1", "--out", p(&path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

#[test]
fn aubery_conversion_merges_under_io_and_cannot_split_back() {
    let dir = TempDir::new().unwrap();
    let flat = LabelSchema::flat(&["PER", "LOC"]).unwrap();
    let schema = dir.path().join("flat.toml");
    fs::write(&schema, flat.to_document()).unwrap();
    let iob2 = dir.path().join("aubery.tsv");
    fs::write(&iob2, write_tsv_layout(&[aubery()], Format::Iob2, TsvLayout::L1)).unwrap();

    let io = dir.path().join("aubery.io.tsv");
    let o = run(&[
        "convert", "--in", p(&iob2), "--out", p(&io), "--to-format", "IO", "--mode", "l1", "--schema", p(&schema),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("merges 1 adjacent same-type entities in 1 entries"), "{}", stderr(&o));
    let io_text = fs::read_to_string(&io).unwrap();
    let want: Vec<String> = "I-PER I-PER I-PER I-LOC I-LOC I-LOC I-LOC I-LOC I-LOC I-LOC O"
        .split(' ')
        .map(String::from)
        .collect();
    assert_eq!(column(&io_text, 1), want);

    // the boundary between the two LOC entities is gone for good
    let back = dir.path().join("aubery.back.tsv");
    let o = run(&[
        "convert", "--in", p(&io), "--out", p(&back), "--from-format", "IO", "--mode", "l1", "--schema", p(&schema),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tags = column(&fs::read_to_string(&back).unwrap(), 1);
    assert_eq!(tags.iter().filter(|t| *t == "B-LOC").count(), 1);
    assert_eq!(read_tsv(&fs::read_to_string(&back).unwrap(), &flat).unwrap()[0].entities.len(), 2);
}

#[test]
fn identity_conversion_is_byte_stable_and_jsonl_round_trips() {
    let dir = TempDir::new().unwrap();
    let gold = synth_corpus(dir.path(), 50);
    let same = dir.path().join("same.tsv");
    let o = run(&["convert", "--in", p(&gold), "--out", p(&same)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&gold).unwrap(), fs::read(&same).unwrap());

    let jsonl = dir.path().join("gold.jsonl");
    let again = dir.path().join("again.tsv");
    assert_eq!(code(&run(&["convert", "--in", p(&gold), "--out", p(&jsonl)])), 0);
    assert_eq!(code(&run(&["convert", "--in", p(&jsonl), "--out", p(&again)])), 0);
    assert_eq!(fs::read(&gold).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn input_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let gold = synth_corpus(dir.path(), 10);
    let out = dir.path().join("x.tsv");

    let o = run(&["convert", "--in", p(&dir.path().join("missing.tsv")), "--out", p(&out)]);
    assert_eq!(code(&o), 1);

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "token\tL1\tL2\n# id = a\n# text = x\nx\tB-NOPE\tO\n").unwrap();
    assert_eq!(code(&run(&["convert", "--in", p(&bad), "--out", p(&out)])), 1);

    let o = run(&["convert", "--in", p(&gold), "--out", p(&out), "--from-format", "IO"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("B- tag in IO input"), "{}", stderr(&o));

    assert_eq!(code(&run(&["convert", "--bogus"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);

    let o = bin()
        .env("NESTED_TAGGER_SEED", "minus one")
        .args(["synth", "--n", "3", "--out", p(&out)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_is_seeded_and_the_environment_overrides_the_seed() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    let c = dir.path().join("c.tsv");
    assert_eq!(code(&run(&["synth", "--n", "30", "--seed", "4", "--out", p(&a)])), 0);
    assert_eq!(code(&run(&["synth", "--n", "30", "--seed", "4", "--out", p(&b)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let schema = LabelSchema::paris_directories();
    assert_eq!(fs::read_to_string(&a).unwrap(), write_tsv(&synth_generate(30, &schema, 4).entries, Format::Iob2));

    let o = bin()
        .env("NESTED_TAGGER_SEED", "9")
        .args(["synth", "--n", "30", "--seed", "4", "--out", p(&c)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&c).unwrap(), write_tsv(&synth_generate(30, &schema, 9).entries, Format::Iob2));
}

#[test]
fn projection_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let schema = LabelSchema::paris_directories();
    let corpus = synth_generate(40, &schema, 2);
    let gold = dir.path().join("gold.tsv");
    fs::write(&gold, write_tsv(&corpus.entries, Format::Iob2)).unwrap();

    let clean = dir.path().join("clean.jsonl");
    let texts: Vec<(String, String)> = corpus.entries.iter().map(|e| (e.source_id.clone(), e.text.clone())).collect();
    fs::write(&clean, write_noisy_texts(&texts).unwrap()).unwrap();
    let out = dir.path().join("out.tsv");
    let o = run(&["project", "--gold", p(&gold), "--noisy-text", p(&clean), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&gold).unwrap(), fs::read(&out).unwrap());

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let report = dir.path().join("report.json");
    let o = run(&[
        "project", "--gold", p(&gold), "--noisy-text", p(&empty), "--out", p(&out), "--report", p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read_tsv(&fs::read_to_string(&out).unwrap(), &schema).unwrap().is_empty());
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["entries_missing"], corpus.len());

    let noisy = dir.path().join("noisy.jsonl");
    let texts = noisy_texts(&corpus.entries, &NoiseConfig::with_rate(0.05, 0));
    fs::write(&noisy, write_noisy_texts(&texts).unwrap()).unwrap();
    let o = run(&[
        "project", "--gold", p(&gold), "--noisy-text", p(&noisy), "--out", p(&out), "--report", p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let map: HashMap<String, String> = read_noisy_texts(&fs::read_to_string(&noisy).unwrap()).unwrap();
    let (want, want_report) = build_noisy_corpus(&corpus.entries, &map, &schema);
    assert_eq!(fs::read_to_string(&out).unwrap(), write_tsv(&want, Format::Iob2));
    let got: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(got, serde_json::to_value(&want_report).unwrap());
}

#[test]
fn train_and_eval_report_violations_through_the_exit_code() {
    let dir = TempDir::new().unwrap();
    let gold = synth_corpus(dir.path(), 80);
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, TINY_TRAIN).unwrap();
    for strategy in ["M1", "M2"] {
        let model = dir.path().join(format!("{strategy}.model"));
        let o = run(&[
            "train", "--train", p(&gold), "--dev", p(&gold), "--strategy", strategy, "--config", p(&cfg), "--out",
            p(&model),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("best dev F1"));

        let csv = dir.path().join(format!("{strategy}.csv"));
        let o = run(&["eval", "--model", p(&model), "--corpus", p(&gold), "--out", p(&csv)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let violations: usize = fs::read_to_string(&csv)
            .unwrap()
            .lines()
            .find(|l| l.starts_with("violations,"))
            .and_then(|l| l.split(',').nth(5))
            .and_then(|v| v.parse().ok())
            .expect("violations row");
        if strategy == "M2" {
            assert_eq!(violations, 0);
        }
        let o = run(&["eval", "--model", p(&model), "--corpus", p(&gold), "--fail-on-violations"]);
        assert_eq!(code(&o), if violations == 0 { 0 } else { 2 }, "{strategy}: {}", stderr(&o));
    }
    let o = run(&["eval", "--model", p(&gold), "--corpus", p(&gold)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn experiment_is_reproducible_and_stays_in_its_directory() {
    let work = TempDir::new().unwrap();
    let gold = synth_corpus(work.path(), 100);
    let cfg = work.path().join("exp.toml");
    fs::write(&cfg, format!("[train]\n{TINY_TRAIN}")).unwrap();
    let before = files_under(work.path());

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = work.path().join(name);
        let o = run(&[
            "experiment", "--corpus", p(&gold), "--strategies", "M2", "--formats", "IO", "--seeds", "0", "--config",
            p(&cfg), "--out-dir", p(&out_dir), "--save-models", "--jobs", "1",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(out_dir);
    }
    let after = files_under(work.path());
    let added: Vec<&PathBuf> = after.difference(&before).collect();
    assert!(added.iter().all(|f| f.starts_with("a") || f.starts_with("b")), "{added:?}");

    let (a, b) = (&outputs[0], &outputs[1]);
    let files = files_under(a);
    assert_eq!(files, files_under(b));
    for f in files.iter().filter(|f| a.join(f).is_file()) {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{}", f.display());
    }

    let runs = fs::read_to_string(a.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 2);

    let summary = work.path().join("a").join("rebuilt.csv");
    let o = run(&["report", "--runs", p(&a.join("runs.csv")), "--out", p(&summary)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rebuilt = fs::read_to_string(&summary).unwrap();
    let written = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(rebuilt.lines().count(), written.lines().count());
    for (x, y) in rebuilt.lines().zip(written.lines()).skip(1) {
        let (x, y): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        assert_eq!(x[..4], y[..4]);
        for (u, v) in x[4..].iter().zip(&y[4..]) {
            let (u, v): (f64, f64) = (u.parse().unwrap(), v.parse().unwrap());
            assert!((u - v).abs() <= SUMMARY_TOL, "{u} vs {v}");
        }
    }
}
