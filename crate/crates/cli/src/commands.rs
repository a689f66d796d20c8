use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use ctc_core::corpus::{self, filter_by_token_length, ingest, split, CorpusStats, FilterConfig, Label, SplitSpec};
use ctc_core::eval::{self, prepare, SourceCorpus, SubsetSize};
use ctc_core::models::{train, DnnParams};
use ctc_core::persist::{self, load_ensemble, load_model, save_model, MANIFEST_NAME};
use ctc_core::textprep::clean;
use ctc_core::vectorizer::TfIdfModel;
use ctc_core::{ClassBalance, Dictionary, Document, Ensemble, Featurizer, ModelConfig, Source, TrainedModel};

use crate::config::{self, resolve, resolve_list, ConfigFile};
use crate::{
    AssembleArgs, BenchArgs, ClassifyArgs, Cli, CliError, Command, ConfidenceArgs, CrossvalArgs, PrepArgs,
    ReproduceArgs, SweepArgs, TrainArgs,
};

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Prep(a) => prep(a, &file),
        Command::Train(a) => train_cmd(a, &file),
        Command::Crossval(a) => crossval(a, &file),
        Command::Classify(a) => classify(a),
        Command::SweepTokens(a) => sweep(a, &file),
        Command::Confidence(a) => confidence(a, &file),
        Command::Bench(a) => bench(a, &file),
        Command::Assemble(a) => assemble(a, &file),
        Command::Reproduce(a) => reproduce(a, &file),
    }
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("ctc: {}", msg.as_ref());
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file {} does not exist", path.display())))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Run metadata, kept apart from the data outputs so those stay
/// byte-identical across runs.
fn write_meta(path: &Path, command: &str, seed: Option<u64>, started: SystemTime) -> CliResult {
    let meta = json!({
        "command": command,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": unix_seconds(started),
        "finished_unix": unix_seconds(SystemTime::now()),
    });
    write_json(path, &meta)
}

fn dictionary(flag: Option<PathBuf>, file: &ConfigFile) -> CliResult<Dictionary> {
    let path = flag
        .or_else(|| file.get("dictionary").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("no dictionary given; pass --dict or set `dictionary` in --config".into()))?;
    require_file(&path)?;
    Ok(Dictionary::load(&path)?)
}

fn min_tokens(flag: Option<usize>, file: &ConfigFile) -> CliResult<usize> {
    resolve(flag, file, "min_tokens", FilterConfig::default().min_tokens)
}

fn out_dir(flag: Option<PathBuf>, file: &ConfigFile) -> PathBuf {
    flag.or_else(|| file.get("out_dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ctc-out"))
}

/// Labeled documents with at least `min` usable tokens.
fn load_labeled(path: &Path, dict: &Dictionary, min: usize) -> CliResult<Vec<Document>> {
    require_file(path)?;
    let (docs, _) = ingest(path, true)?;
    let kept = filter_by_token_length(&docs, dict, FilterConfig { min_tokens: min });
    progress(format!(
        "{}: {} of {} documents have at least {min} usable tokens",
        path.display(),
        kept.len(),
        docs.len()
    ));
    Ok(kept)
}

/// `[SOURCE=]PATH`; without a prefix the source comes from the documents.
fn corpus_specs(flag: &[String], file: &ConfigFile) -> CliResult<Vec<(Option<Source>, PathBuf)>> {
    let specs: Vec<(Option<Source>, PathBuf)> = if flag.is_empty() {
        file.corpora().iter().map(|(s, p)| (Some(s.clone()), p.clone())).collect()
    } else {
        flag.iter()
            .map(|s| match s.split_once('=') {
                Some((src, path)) => (Some(src.parse().unwrap()), PathBuf::from(path)),
                None => (None, PathBuf::from(s)),
            })
            .collect()
    };
    if specs.is_empty() {
        return Err(CliError::Usage(
            "no corpora given; pass --corpora or set corpus.<source> in --config".into(),
        ));
    }
    for (_, p) in &specs {
        require_file(p)?;
    }
    Ok(specs)
}

fn source_of(flag: Option<Source>, docs: &[Document], path: &Path) -> CliResult<Source> {
    flag.or_else(|| docs.first().map(|d| d.source.clone()))
        .ok_or_else(|| CliError::Data(format!("{} has no usable documents", path.display())))
}

fn cleaned(docs: &[Document]) -> Vec<Document> {
    docs.iter()
        .map(|d| Document {
            title: clean(&d.title).into_string(),
            body: clean(&d.body).into_string(),
            ..d.clone()
        })
        .collect()
}

fn prep(a: PrepArgs, file: &ConfigFile) -> CliResult {
    let started = SystemTime::now();
    let dict = dictionary(a.dict, file)?;
    let min = min_tokens(a.min_tokens, file)?;
    require_file(&a.input)?;
    let (docs, _) = ingest(&a.input, false)?;
    let kept = filter_by_token_length(&cleaned(&docs), &dict, FilterConfig { min_tokens: min });
    let mut out = create(&a.output)?;
    corpus::write_jsonl(&mut out, &kept)?;
    out.flush().map_err(|e| io_err(&a.output, e))?;
    let stats = CorpusStats::from_documents(&kept).with_token_histogram(&kept, &dict);
    let stats_path = a.stats.unwrap_or_else(|| with_suffix(&a.output, ".stats.json"));
    write_json(
        &stats_path,
        &json!({
            "input_documents": docs.len(),
            "kept_documents": kept.len(),
            "min_tokens": min,
            "corpus": stats,
        }),
    )?;
    progress(format!("kept {} of {} documents", kept.len(), docs.len()));
    write_meta(&with_suffix(&a.output, ".meta.json"), "prep", None, started)
}

fn family(mut cfg: ModelConfig, threshold: Option<f64>, hidden: Option<Vec<usize>>) -> CliResult<ModelConfig> {
    if let Some(t) = threshold {
        match &mut cfg {
            ModelConfig::Dnn(p) => *p = DnnParams { hidden: p.hidden.clone(), ..DnnParams::with_threshold(t) },
            _ => return Err(CliError::Usage("--dnn-threshold applies only to --family dnn".into())),
        }
    }
    if let Some(h) = hidden {
        cfg = cfg.with_hidden(&h);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs, file: &ConfigFile) -> CliResult {
    let started = SystemTime::now();
    let dict = dictionary(a.dict, file)?;
    let min = min_tokens(a.min_tokens, file)?;
    let fraction = config::resolve_split(a.split, file)?;
    let seed = config::resolve_seed(a.seed, file)?;
    let hidden = resolve_list(a.hidden, file, "hidden", Vec::new())?;
    let cfg = family(a.family, a.dnn_threshold, (!hidden.is_empty()).then_some(hidden))?;
    let docs = load_labeled(&a.corpus, &dict, min)?;
    let source = source_of(a.source.map(|s| s.parse().unwrap()), &docs, &a.corpus)?;
    let (train_docs, held_docs) = split(&docs, SplitSpec::new(fraction, seed))?;
    let featurizer = featurizer(dict, a.fit_on_corpus.then_some(&train_docs[..]))?;
    let train_set = prepare(&train_docs, &featurizer)?;
    let balance = ClassBalance::from_labels(train_set.iter().map(|d| d.label))?;
    progress(format!(
        "training {} on {} documents from {source} (cyber weight {:.4})",
        cfg.name(),
        train_set.len(),
        balance.weight_cyber
    ));
    let examples: Vec<_> = train_set.iter().map(|d| d.example()).collect();
    let model = train(&cfg, &examples, &balance, seed)?.with_source(source);
    let rates = eval::evaluate(&model, &prepare(&held_docs, &featurizer)?)?;
    progress(format!(
        "training accuracy {:.4}; held-out fn_rate {} fp_rate {}",
        model.training_accuracy,
        fmt_rate(rates.fn_rate),
        fmt_rate(rates.fp_rate)
    ));
    save_model(&model, &a.out)?;
    write_meta(&with_suffix(&a.out, ".meta.json"), "train", Some(seed), started)
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

struct Corpora {
    featurizer: Featurizer,
    raw: Vec<(Source, Vec<Document>)>,
    prepared: Vec<SourceCorpus>,
}

/// Dictionary-fitted featurizer, or one whose IDF is fitted on `train_docs`.
fn featurizer(dict: Dictionary, train_docs: Option<&[Document]>) -> CliResult<Featurizer> {
    let base = Featurizer::new(dict)?;
    let Some(docs) = train_docs else {
        return Ok(base);
    };
    let tokens: Vec<_> = docs.iter().map(|d| base.tokens(&d.text())).collect();
    let tfidf = TfIdfModel::fit_on_corpus(base.dictionary(), &tokens)?;
    Ok(Featurizer::with_model(base.dictionary().clone(), tfidf)?)
}

/// Loads every corpus; with `idf_split`, IDF is fitted on the pooled training
/// splits that cross-validation will draw with the same spec.
fn load_corpora(
    specs: &[(Option<Source>, PathBuf)],
    dict: Dictionary,
    min: usize,
    idf_split: Option<SplitSpec>,
) -> CliResult<Corpora> {
    let mut raw = Vec::new();
    for (src, path) in specs {
        let docs = load_labeled(path, &dict, min)?;
        let source = source_of(src.clone(), &docs, path)?;
        raw.push((source, docs));
    }
    let featurizer = match idf_split {
        Some(spec) => {
            let mut pooled = Vec::new();
            for (_, docs) in &raw {
                pooled.extend(split(docs, spec)?.0);
            }
            featurizer(dict, Some(&pooled))?
        }
        None => featurizer(dict, None)?,
    };
    let mut prepared = Vec::new();
    for (source, docs) in &raw {
        prepared.push(SourceCorpus {
            source: source.clone(),
            docs: prepare(docs, &featurizer)?,
        });
    }
    Ok(Corpora {
        featurizer,
        raw,
        prepared,
    })
}

fn write_crossval(report: &eval::CrossValReport, dir: &Path) -> CliResult {
    let csv_path = dir.join("crossval.csv");
    let mut w = create(&csv_path)?;
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| io_err(&csv_path, e))?;
    write_json(&dir.join("crossval.json"), report)?;
    for c in report.cells.iter().filter(|c| c.error.is_some()) {
        progress(format!(
            "{} trained on {} / validated on {}: {}",
            c.family,
            c.train_source,
            c.validation_source,
            c.error.as_deref().unwrap_or_default()
        ));
    }
    Ok(())
}

fn trained_models(models: Vec<ctc_core::Result<TrainedModel>>) -> Vec<TrainedModel> {
    models.into_iter().filter_map(Result::ok).collect()
}

fn crossval(a: CrossvalArgs, file: &ConfigFile) -> CliResult {
    let started = SystemTime::now();
    let specs = corpus_specs(&a.corpora, file)?;
    let dict = dictionary(a.dict, file)?;
    let min = min_tokens(a.min_tokens, file)?;
    let fraction = config::resolve_split(a.split, file)?;
    let seed = config::resolve_seed(a.seed, file)?;
    let families = config::resolve_families(a.families, a.hidden, file)?;
    let dir = out_dir(a.out_dir, file);
    let spec = SplitSpec::new(fraction, seed);
    let corpora = load_corpora(&specs, dict, min, a.fit_on_corpus.then_some(spec))?;
    progress(format!(
        "training {} families on {} sources",
        families.len(),
        corpora.prepared.len()
    ));
    let run = eval::cross_validate(&corpora.prepared, &families, spec)?;
    write_crossval(&run.report, &dir)?;
    if a.save_models {
        let models = trained_models(run.models);
        let e = Ensemble::new(corpora.featurizer, models)?;
        let manifest = persist::save_ensemble(&e, dir.join("ensemble"))?;
        progress(format!("saved {} models to {}", e.len(), manifest.display()));
    }
    progress(format!("wrote {} cells to {}", run.report.cells.len(), dir.display()));
    write_meta(&dir.join("crossval.meta.json"), "crossval", Some(seed), started)
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_NAME)
    } else {
        p.to_path_buf()
    }
}

fn classify(a: ClassifyArgs) -> CliResult {
    let manifest = manifest_path(&a.ensemble);
    require_file(&manifest)?;
    require_file(&a.input)?;
    let e = load_ensemble(&manifest)?;
    let (docs, _) = ingest(&a.input, false)?;
    let verdicts = e.vote_batch(&docs);
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for v in &verdicts {
        serde_json::to_writer(&mut out, v).map_err(|e| CliError::Data(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| CliError::Data(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::Data(e.to_string()))?;
    let cyber = verdicts.iter().filter(|v| v.label == Label::Cyber).count();
    let empty = verdicts.iter().filter(|v| v.untokenizable()).count();
    progress(format!(
        "classified {} documents with {} models: {cyber} cyber, {empty} untokenizable",
        verdicts.len(),
        e.len()
    ));
    Ok(())
}

fn parse_subset(s: &str, source: &Source) -> CliResult<Option<SubsetSize>> {
    match s {
        "paper" => Ok(SubsetSize::for_source(source)),
        "all" => Ok(None),
        other => match config::parse_list::<usize>(other).map_err(CliError::Usage)?[..] {
            [cyber, noncyber] => Ok(Some(SubsetSize { cyber, noncyber })),
            _ => Err(CliError::Usage(format!("--subset {other:?}: expected CYBER,NONCYBER, paper or all"))),
        },
    }
}

fn sweep(a: SweepArgs, file: &ConfigFile) -> CliResult {
    let started = SystemTime::now();
    let dict = dictionary(a.dict, file)?;
    let seed = config::resolve_seed(a.seed, file)?;
    let families = config::resolve_families(a.families, a.hidden, file)?;
    let n_values = resolve_list(a.n_values, file, "n_values", vec![1, 5, 10, 15, 20, 30, 40, 50])?;
    require_file(&a.corpus)?;
    let (docs, _) = ingest(&a.corpus, true)?;
    let source = source_of(None, &docs, &a.corpus)?;
    let subset = parse_subset(&a.subset, &source)?;
    let featurizer = Featurizer::new(dict)?;
    let prepared = prepare(&docs, &featurizer)?;
    progress(format!("sweeping {} minimum lengths x {} families", n_values.len(), families.len()));
    let report = eval::token_sweep(&prepared, &families, &n_values, subset, seed)?;
    for r in report.rows.iter().filter(|r| r.skipped.is_some()) {
        progress(format!("N={} {}: skipped, {}", r.min_tokens, r.family, r.skipped.as_deref().unwrap_or_default()));
    }
    let mut w = create(&a.out)?;
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| io_err(&a.out, e))?;
    write_meta(&with_suffix(&a.out, ".meta.json"), "sweep-tokens", Some(seed), started)
}

fn bins(flag: Option<usize>, file: &ConfigFile) -> CliResult<usize> {
    resolve(flag, file, "bins", eval::DEFAULT_BINS)
}

fn write_bins(report: &eval::ConfidenceBinReport, path: &Path) -> CliResult {
    let mut w = create(path)?;
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

fn confidence(a: ConfidenceArgs, file: &ConfigFile) -> CliResult {
    let started = SystemTime::now();
    require_file(&a.model)?;
    let model = load_model(&a.model)?;
    let dict = dictionary(a.dict, file)?;
    let min = min_tokens(a.min_tokens, file)?;
    let n_bins = bins(a.bins, file)?;
    let docs = load_labeled(&a.corpus, &dict, min)?;
    let prepared = prepare(&docs, &Featurizer::new(dict)?)?;
    let report = eval::confidence_bins(&model, &prepared, n_bins)?;
    write_bins(&report, &a.out)?;
    progress(format!("binned {} documents for {}", report.total(), model.id()));
    write_meta(&with_suffix(&a.out, ".meta.json"), "confidence", None, started)
}

fn write_bench(report: &eval::BenchReport, path: &Path) -> CliResult {
    let mut w = create(path)?;
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))?;
    let (slope, intercept, r2) = report.linear_fit();
    progress(format!(
        "{:.1} us per document + {:.3} s fixed, R^2 {r2:.4} ({})",
        slope * 1e6,
        intercept,
        report.measured
    ));
    Ok(())
}

const DEFAULT_BENCH_SIZES: [usize; 4] = [1000, 2000, 4000, 8000];

fn bench(a: BenchArgs, file: &ConfigFile) -> CliResult {
    let started = SystemTime::now();
    let manifest = manifest_path(&a.ensemble);
    require_file(&manifest)?;
    require_file(&a.input)?;
    let seed = config::resolve_seed(a.seed, file)?;
    let sizes = resolve_list(a.sizes, file, "bench_sizes", DEFAULT_BENCH_SIZES.to_vec())?;
    let repeats = resolve(a.repeats, file, "bench_repeats", 3)?;
    let e = load_ensemble(&manifest)?;
    let (docs, _) = ingest(&a.input, false)?;
    let report = eval::bench(&e, &docs, &sizes, repeats, seed)?;
    write_bench(&report, &a.out)?;
    write_meta(&with_suffix(&a.out, ".meta.json"), "bench", Some(seed), started)
}

fn assemble(a: AssembleArgs, file: &ConfigFile) -> CliResult {
    let started = SystemTime::now();
    if a.models.is_empty() {
        return Err(CliError::Usage("--models needs at least one model file".into()));
    }
    let dict = dictionary(a.dict, file)?;
    let models = a
        .models
        .iter()
        .map(|p| {
            require_file(p)?;
            Ok(load_model(p)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let e = Ensemble::new(Featurizer::new(dict)?, models)?;
    let manifest = persist::save_ensemble(&e, &a.out_dir)?;
    progress(format!("assembled {} models into {}", e.len(), manifest.display()));
    write_meta(&a.out_dir.join("assemble.meta.json"), "assemble", None, started)
}

fn reproduce(a: ReproduceArgs, file: &ConfigFile) -> CliResult {
    let started = SystemTime::now();
    let specs = corpus_specs(&a.corpora, file)?;
    let dict = dictionary(a.dict, file)?;
    let min = min_tokens(a.min_tokens, file)?;
    let fraction = config::resolve_split(a.split, file)?;
    let seed = config::resolve_seed(a.seed, file)?;
    let families = config::resolve_families(a.families, a.hidden, file)?;
    let n_bins = bins(a.bins, file)?;
    let sizes = resolve_list(a.bench_sizes, file, "bench_sizes", DEFAULT_BENCH_SIZES.to_vec())?;
    let repeats = resolve(a.bench_repeats, file, "bench_repeats", 3)?;
    let dir = out_dir(a.out_dir, file);

    progress("step 1/5: prep");
    let spec = SplitSpec::new(fraction, seed);
    let corpora = load_corpora(&specs, dict, min, a.fit_on_corpus.then_some(spec))?;
    for (source, docs) in &corpora.raw {
        let path = dir.join("prep").join(format!("{source}.jsonl"));
        let kept = cleaned(docs);
        let mut w = create(&path)?;
        corpus::write_jsonl(&mut w, &kept)?;
        w.flush().map_err(|e| io_err(&path, e))?;
        let stats = CorpusStats::from_documents(&kept).with_token_histogram(&kept, corpora.featurizer.dictionary());
        write_json(&with_suffix(&path, ".stats.json"), &stats)?;
    }

    progress(format!(
        "step 2/5: train {} families x {} sources",
        families.len(),
        corpora.prepared.len()
    ));
    let run = eval::cross_validate(&corpora.prepared, &families, spec)?;

    progress("step 3/5: cross-source validation report");
    write_crossval(&run.report, &dir)?;
    let mut models = Vec::new();
    for (k, m) in run.models.iter().enumerate() {
        let source_index = k % corpora.prepared.len();
        if let Ok(m) = m {
            models.push((source_index, m.clone()));
        }
    }
    if models.is_empty() {
        return Err(CliError::Data("no model trained successfully".into()));
    }
    let e = Ensemble::new(corpora.featurizer.clone(), models.iter().map(|(_, m)| m.clone()).collect())?;
    let manifest = persist::save_ensemble(&e, dir.join("ensemble"))?;
    progress(format!("saved {}-model ensemble to {}", e.len(), manifest.display()));

    progress("step 4/5: confidence bins on held-out splits");
    for (s, m) in models.iter().filter(|(_, m)| m.continuous_output()) {
        let report = eval::confidence_bins(m, &run.held_out[*s], n_bins)?;
        write_bins(&report, &dir.join("confidence").join(format!("{}.csv", m.id())))?;
    }

    progress("step 5/5: throughput");
    let pooled: Vec<Document> = corpora.raw.iter().flat_map(|(_, d)| d.iter().cloned()).collect();
    let usable: Vec<usize> = sizes.iter().copied().filter(|&n| n <= pooled.len()).collect();
    if usable.len() < sizes.len() {
        progress(format!(
            "bench sizes above the {} available documents skipped",
            pooled.len()
        ));
    }
    if usable.is_empty() {
        progress("no bench size fits the corpora; throughput skipped");
    } else {
        let report = eval::bench(&e, &pooled, &usable, repeats, seed)?;
        write_bench(&report, &dir.join("bench.csv"))?;
    }
    write_meta(&dir.join("meta.json"), "reproduce", Some(seed), started)
}
