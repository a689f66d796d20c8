use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctc_core::corpus::write_jsonl;
use ctc_core::synthetic::{self, SyntheticConfig};
use ctc_core::{Document, Label, Source};
use tempfile::TempDir;

fn ctc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctc"))
        .args(args)
        .env_remove("CTC_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Dictionary plus three small labeled synthetic corpora.
struct Fixture {
    dir: TempDir,
    dict: PathBuf,
    corpora: Vec<PathBuf>,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            docs_per_class: 60,
            ..SyntheticConfig::default()
        };
        let c = synthetic::corpus(&cfg, 3, 1);
        let dict = dir.path().join("dict.txt");
        fs::write(&dict, c.dictionary.to_text()).unwrap();
        let corpora = c
            .sources
            .iter()
            .map(|(s, docs)| {
                let p = dir.path().join(format!("{s}.jsonl"));
                write_jsonl(fs::File::create(&p).unwrap(), docs).unwrap();
                p
            })
            .collect();
        Fixture { dir, dict, corpora }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    /// Runs crossval with small networks, optionally saving the ensemble.
    fn crossval(&self, out: &Path, extra: &[&str]) -> Output {
        let mut args = vec!["crossval", "--dict", Self::s(&self.dict), "--hidden", "8", "--seed", "3"];
        args.push("--out-dir");
        args.push(Self::s(out));
        args.push("--corpora");
        args.extend(self.corpora.iter().map(|p| Self::s(p)));
        args.extend(extra);
        ctc(&args)
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&ctc(&["--help"])), 0);
    assert_eq!(code(&ctc(&["--version"])), 0);
    assert_eq!(code(&ctc(&[])), 1);
    assert_eq!(code(&ctc(&["prep", "--bogus"])), 1);
    let f = Fixture::new();
    let o = ctc(&["prep", "--input", "/nonexistent.jsonl", "--dict", Fixture::s(&f.dict), "--output", "x"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/nonexistent.jsonl"));
    let o = ctc(&["prep", "--input", Fixture::s(&f.corpora[0]), "--output", "x"]);
    assert_eq!(code(&o), 1, "missing dictionary is a usage error");
}

#[test]
fn prep_cleans_and_filters() {
    let f = Fixture::new();
    let input = f.path("raw.jsonl");
    let docs = vec![
        Document {
            id: "a".into(),
            source: Source::Reddit,
            label: Some(Label::Cyber),
            title: String::new(),
            body: "see https://x.example <b>bold</b> caf\u{e9}".into(),
        },
        Document {
            id: "b".into(),
            source: Source::Reddit,
            label: None,
            title: String::new(),
            body: "no dictionary words".into(),
        },
    ];
    write_jsonl(fs::File::create(&input).unwrap(), &docs).unwrap();
    let out = f.path("prepped.jsonl");
    let o = ctc(&[
        "prep",
        "--input",
        Fixture::s(&input),
        "--dict",
        Fixture::s(&f.dict),
        "--min-tokens",
        "0",
        "--output",
        Fixture::s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Neither document has dictionary words, and the minimum is at least one.
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
    let stats: serde_json::Value = serde_json::from_slice(&fs::read(f.path("prepped.jsonl.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["input_documents"], 2);
    assert_eq!(stats["kept_documents"], 0);

    let o = ctc(&["prep", "--input", Fixture::s(&f.corpora[0]), "--dict", Fixture::s(&f.dict), "--output", Fixture::s(&out)]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 120);
    assert!(!text.contains("http") && !text.contains("<b>"));
    assert!(f.path("prepped.jsonl.meta.json").exists());
}

#[test]
fn crossval_classify_and_reports() {
    let f = Fixture::new();
    let out = f.path("cv");
    let o = f.crossval(&out, &["--save-models"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("crossval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "family,train_source,validation_source,training_accuracy,fn_rate,fp_rate"
    );
    assert_eq!(lines.count(), 63);

    // Byte-identical on a rerun with the same seed.
    let again = f.path("cv2");
    assert_eq!(code(&f.crossval(&again, &[])), 0);
    assert_eq!(fs::read(again.join("crossval.csv")).unwrap(), csv.as_bytes());
    assert_eq!(
        fs::read(again.join("crossval.json")).unwrap(),
        fs::read(out.join("crossval.json")).unwrap()
    );

    let ensemble = out.join("ensemble");
    let input = f.path("three.jsonl");
    let docs: Vec<Document> = synthetic::corpus(&SyntheticConfig { docs_per_class: 2, ..Default::default() }, 1, 9)
        .sources
        .remove(0)
        .1
        .into_iter()
        .take(3)
        .collect();
    write_jsonl(fs::File::create(&input).unwrap(), &docs).unwrap();
    let o = ctc(&["classify", "--ensemble", Fixture::s(&ensemble), "--input", Fixture::s(&input)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let verdicts: Vec<serde_json::Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(verdicts.len(), 3);
    for (v, d) in verdicts.iter().zip(&docs) {
        assert_eq!(v["id"], d.id.as_str());
        assert_eq!(v["votes_total"], 21);
        assert_eq!(v["label"], d.label.unwrap().as_str());
    }

    let model = ensemble.join("reddit-logistic.ctcm");
    let bins = f.path("bins.csv");
    let o = ctc(&[
        "confidence",
        "--model",
        Fixture::s(&model),
        "--corpus",
        Fixture::s(&f.corpora[1]),
        "--dict",
        Fixture::s(&f.dict),
        "--bins",
        "10",
        "--out",
        Fixture::s(&bins),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&bins).unwrap();
    assert!(text.starts_with("bin_lo,bin_hi,count,fn_rate,fp_rate\n"));
    assert_eq!(text.lines().count(), 11);
    let svm = ensemble.join("reddit-linear_svm.ctcm");
    let o = ctc(&[
        "confidence",
        "--model",
        Fixture::s(&svm),
        "--corpus",
        Fixture::s(&f.corpora[1]),
        "--dict",
        Fixture::s(&f.dict),
        "--out",
        Fixture::s(&bins),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no continuous output"));

    let bench = f.path("bench.csv");
    let o = ctc(&[
        "bench",
        "--ensemble",
        Fixture::s(&ensemble),
        "--input",
        Fixture::s(&f.corpora[0]),
        "--sizes",
        "10,20,40",
        "--repeats",
        "1",
        "--out",
        Fixture::s(&bench),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&bench).unwrap();
    assert!(text.starts_with("n,wall_seconds,docs_per_hour\n"));
    assert_eq!(text.lines().count(), 4);

    // Flip one byte of a model file.
    let mut bytes = fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&model, bytes).unwrap();
    let o = ctc(&["classify", "--ensemble", Fixture::s(&ensemble), "--input", Fixture::s(&input)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("reddit-logistic.ctcm"));
}

#[test]
fn unfittable_dnn_exits_two() {
    let f = Fixture::new();
    let corpus = f.path("noise.jsonl");
    let text = "cyba cybe cybi cybo cybu cyda cyde cydi cydo cydu".to_string();
    let docs: Vec<Document> = (0..20)
        .map(|i| Document {
            id: format!("d{i}"),
            source: Source::Arxiv,
            label: Some(Label::from_index(i % 2)),
            title: String::new(),
            body: text.clone(),
        })
        .collect();
    write_jsonl(fs::File::create(&corpus).unwrap(), &docs).unwrap();
    let o = ctc(&[
        "train",
        "--corpus",
        Fixture::s(&corpus),
        "--dict",
        Fixture::s(&f.dict),
        "--family",
        "dnn",
        "--dnn-threshold",
        "0.99",
        "--hidden",
        "4",
        "--out",
        Fixture::s(&f.path("m.ctcm")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("best"), "{}", stderr(&o));
    assert!(!f.path("m.ctcm").exists());
}

#[test]
fn train_assemble_and_seed_resolution() {
    let f = Fixture::new();
    let config = f.path("run.cfg");
    fs::write(&config, format!("dictionary = {}\nseed = 11\nhidden = 6\n", f.dict.display())).unwrap();
    let mut models = Vec::new();
    for (i, family) in ["logistic", "decision_tree", "mlp"].iter().enumerate() {
        let out = f.path(&format!("m{i}.ctcm"));
        let o = ctc(&[
            "train",
            "--config",
            Fixture::s(&config),
            "--corpus",
            Fixture::s(&f.corpora[i]),
            "--family",
            family,
            "--out",
            Fixture::s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let meta: serde_json::Value = serde_json::from_slice(&fs::read(f.path(&format!("m{i}.ctcm.meta.json"))).unwrap()).unwrap();
        assert_eq!(meta["seed"], 11);
        models.push(out);
    }

    // The flag beats the config file, which beats CTC_SEED.
    let out = f.path("seeded.ctcm");
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ctc"));
        cmd.args(["train", "--corpus", Fixture::s(&f.corpora[0]), "--dict", Fixture::s(&f.dict), "--family", "logistic", "--out", Fixture::s(&out)]);
        cmd.args(extra);
        cmd.env_remove("CTC_SEED");
        if let Some(v) = env {
            cmd.env("CTC_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        let meta: serde_json::Value = serde_json::from_slice(&fs::read(f.path("seeded.ctcm.meta.json")).unwrap()).unwrap();
        meta["seed"].as_u64().unwrap()
    };
    assert_eq!(run(&[], Some("5")), 5);
    assert_eq!(run(&["--seed", "8"], Some("5")), 8);
    assert_eq!(run(&["--config", Fixture::s(&config)], Some("5")), 11);
    assert_eq!(run(&[], None), 42);

    let dir = f.path("ens");
    let mut args = vec!["assemble", "--dict", Fixture::s(&f.dict), "--out-dir", Fixture::s(&dir), "--models"];
    args.extend(models.iter().map(|p| Fixture::s(p)));
    let o = ctc(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("ensemble.json")).unwrap()).unwrap();
    assert_eq!(manifest["models"].as_array().unwrap().len(), 3);

    fs::remove_file(dir.join(manifest["models"][0]["file"].as_str().unwrap())).unwrap();
    let o = ctc(&["classify", "--ensemble", Fixture::s(&dir), "--input", Fixture::s(&f.corpora[0])]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("reddit-logistic.ctcm"), "{}", stderr(&o));
}

#[test]
fn sweep_tokens_report() {
    let f = Fixture::new();
    let out = f.path("sweep.csv");
    let o = ctc(&[
        "sweep-tokens",
        "--corpus",
        Fixture::s(&f.corpora[2]),
        "--dict",
        Fixture::s(&f.dict),
        "--families",
        "logistic,decision_tree",
        "--n-values",
        "5,20,45",
        "--subset",
        "all",
        "--out",
        Fixture::s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "min_tokens,family,n,fn_rate,fp_rate");
    assert_eq!(lines.len(), 7);
    // Documents have at most 40 tokens, so N = 45 is skipped.
    assert!(lines[5].starts_with("45,logistic,0,,"));
    assert!(stderr(&o).contains("N=45"));
}

#[test]
fn reproduce_end_to_end() {
    let f = Fixture::new();
    let out = f.path("repro");
    let mut args = vec![
        "reproduce",
        "--dict",
        Fixture::s(&f.dict),
        "--families",
        "logistic,linear_svm,mlp",
        "--hidden",
        "6",
        "--bench-sizes",
        "50,100",
        "--bench-repeats",
        "1",
        "--out-dir",
        Fixture::s(&out),
        "--corpora",
    ];
    args.extend(f.corpora.iter().map(|p| Fixture::s(p)));
    let o = ctc(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("crossval.csv")).unwrap().lines().count(), 28);
    assert!(out.join("ensemble/ensemble.json").exists());
    assert!(out.join("prep/arxiv.jsonl").exists());
    assert!(out.join("confidence/stackexchange-mlp.csv").exists());
    assert!(!out.join("confidence/stackexchange-linear_svm.csv").exists());
    assert!(out.join("bench.csv").exists());
    assert!(out.join("meta.json").exists());
}

#[test]
fn corpus_fitted_idf_round_trips() {
    let f = Fixture::new();
    let out = f.path("cv");
    let o = f.crossval(&out, &["--save-models", "--fit-on-corpus", "--families", "logistic,mlp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = ctc(&["classify", "--ensemble", Fixture::s(&out.join("ensemble")), "--input", Fixture::s(&f.corpora[0])]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 120);

    let o = ctc(&[
        "train",
        "--corpus",
        Fixture::s(&f.corpora[0]),
        "--dict",
        Fixture::s(&f.dict),
        "--family",
        "logistic",
        "--fit-on-corpus",
        "--out",
        Fixture::s(&f.path("m.ctcm")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
