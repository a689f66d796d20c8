//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any fails. Criteria that share trained
//! models run on the same fixtures.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctc_core::corpus::{ClassBalance, Fraction, Label, SplitSpec};
use ctc_core::ensemble::{confidence, Ensemble};
use ctc_core::eval::{self, cross_validate, error_rates, prepare, CrossValRun, Prepared, SourceCorpus};
use ctc_core::models::nn::Network;
use ctc_core::models::{train, DnnParams, Example, LinearModel, ModelConfig, Params, ScorePair, TrainedModel};
use ctc_core::persist::{load_model, save_model};
use ctc_core::synthetic::{self, SyntheticConfig};
use ctc_core::textprep::TokenStream;
use ctc_core::{Dictionary, FeatureVector, Featurizer, Source, TfIdfModel};

type Check = Result<String, String>;

struct Runner {
    failures: usize,
}

impl Runner {
    fn run(&mut self, id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        if !pass {
            self.failures += 1;
        }
        println!(
            "[{}] {id:>2} {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Distance in representable doubles; both operands must be finite.
fn ulps(a: f64, b: f64) -> u64 {
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

fn confidence_formula() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let s = ScorePair::from_cyber(rng.gen_range(0.0..=1.0));
        let c = confidence(s).value();
        let expected = s.v0.max(s.v1) - 0.5;
        ensure(ulps(c, expected) <= 1, || format!("{s:?}: {c} vs {expected}"))?;
        ensure((0.0..=0.5).contains(&c), || format!("{s:?}: {c} outside [0, 0.5]"))?;
    }
    Ok("1000 pairs within 1 ulp, all in [0, 0.5]".into())
}

fn class_weight() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (n_c, n_nc) = (rng.gen_range(1..5_000_000usize), rng.gen_range(1..5_000_000usize));
        let b = ClassBalance::from_counts(n_c, n_nc).map_err(|e| e.to_string())?;
        let back = b.weight_cyber * n_c as f64;
        ensure(ulps(back, n_nc as f64) <= 1, || format!("({n_c}, {n_nc}): {back}"))?;
    }
    let (n_c, n_nc) = (164_750usize, 4_184_184usize);
    let w = ClassBalance::from_counts(n_c, n_nc).map_err(|e| e.to_string())?.weight_cyber;
    let oracle = n_nc as f64 / n_c as f64;
    ensure(w == oracle && (w - 25.3972).abs() < 5e-5, || format!("reddit weight {w}"))?;
    Ok(format!("50 random pairs within 1 ulp; reddit weight {w:.4}"))
}

fn constant_model(cyber: bool) -> TrainedModel {
    TrainedModel {
        config: ModelConfig::Logistic(Default::default()),
        params: Params::Linear(LinearModel {
            coef: vec![0.0; 2],
            intercept: if cyber { 2.0 } else { -2.0 },
        }),
        dim: 2,
        training_accuracy: 1.0,
        source: Source::Reddit,
        epochs: None,
    }
}

fn majority_vote() -> Check {
    let featurizer = Featurizer::new(Dictionary::from_words(["alpha", "beta"]).unwrap()).unwrap();
    let doc = ctc_core::Document {
        id: "d".into(),
        source: Source::Reddit,
        label: None,
        title: "alpha".into(),
        body: "beta".into(),
    };
    for k in 0..=21 {
        let models = (0..21).map(|i| constant_model(i < k)).collect();
        let e = Ensemble::new(featurizer.clone(), models).map_err(|e| e.to_string())?;
        let v = e.vote(&doc);
        ensure(v.votes_cyber == k && v.votes_total == 21, || format!("k={k}: counted {}", v.votes_cyber))?;
        let expected = if k >= 11 { Label::Cyber } else { Label::Noncyber };
        ensure(v.label == expected, || format!("k={k}: got {:?}", v.label))?;
    }
    Ok("k = 0..=21 cyber votes: cyber exactly when k >= 11".into())
}

fn vectorizer_oracle() -> Check {
    let words: Vec<String> = (0..500).map(|i| format!("w{}", "x".repeat(i % 7)) + &"y".repeat(i / 7)).collect();
    let dict = Dictionary::from_words(&words).map_err(|e| e.to_string())?;
    let tfidf = TfIdfModel::fit_to_dictionary(&dict).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(1..200);
        let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..dict.len() as u32)).collect();
        // Oracle: raw counts scaled to unit length.
        let mut counts = vec![0f64; dict.len()];
        for &t in &tokens {
            counts[t as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        let got = tfidf.transform(&TokenStream::new(tokens)).to_dense();
        for (g, c) in got.iter().zip(&counts) {
            worst = worst.max((*g as f64 - c / norm).abs());
        }
    }
    ensure(worst < 1e-5, || format!("max abs diff {worst:e}"))?;
    Ok(format!("100 streams, max abs diff {worst:.2e}"))
}

/// Fixture shared by the classifier-sanity, persistence, throughput and
/// matrix-shape criteria.
struct Baseline {
    featurizer: Featurizer,
    run: CrossValRun,
    models: Vec<TrainedModel>,
}

fn sources(corpus: &synthetic::SyntheticCorpus, f: &Featurizer) -> Result<Vec<SourceCorpus>, String> {
    corpus
        .sources
        .iter()
        .map(|(s, docs)| {
            Ok(SourceCorpus {
                source: s.clone(),
                docs: prepare(docs, f).map_err(|e| e.to_string())?,
            })
        })
        .collect()
}

fn classifier_sanity(slot: &mut Option<Baseline>) -> Check {
    let corpus = synthetic::corpus(&SyntheticConfig::default(), 3, 5);
    let featurizer = Featurizer::new(corpus.dictionary.clone()).map_err(|e| e.to_string())?;
    let corpora = sources(&corpus, &featurizer)?;
    let run = cross_validate(&corpora, &ModelConfig::canonical(), SplitSpec::new(Fraction::HALF, 5))
        .map_err(|e| e.to_string())?;
    let mut worst = (0.0f64, 0.0f64);
    for c in run.report.cells.iter().filter(|c| c.train_source == c.validation_source) {
        let r = c.rates.ok_or_else(|| format!("{} on {}: {:?}", c.family, c.train_source, c.error))?;
        let (fnr, fpr) = (r.fn_rate.unwrap_or(f64::NAN), r.fp_rate.unwrap_or(f64::NAN));
        ensure(fnr <= 0.10 && fpr <= 0.10, || {
            format!("{} on {}: fn {fnr:.3} fp {fpr:.3}", c.family, c.train_source)
        })?;
        worst = (worst.0.max(fnr), worst.1.max(fpr));
    }
    let models = run
        .models
        .iter()
        .map(|m| m.as_ref().cloned().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    *slot = Some(Baseline {
        featurizer,
        run,
        models,
    });
    Ok(format!(
        "7 families x 3 sources, worst held-out fn {:.3}, fp {:.3}",
        worst.0, worst.1
    ))
}

/// Harder three-source corpus: topic words leak across classes and sources
/// share only part of their vocabulary.
fn hard_config() -> SyntheticConfig {
    SyntheticConfig {
        docs_per_class: 1000,
        crossover: 0.3,
        source_shift: 15,
        min_len: 10,
        max_len: 20,
        ..SyntheticConfig::default()
    }
}

struct HardRun {
    seed: u64,
    models: Vec<TrainedModel>,
    held_out: Vec<Vec<Prepared>>,
}

fn ensemble_superiority(runs: &mut Vec<HardRun>) -> Check {
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let corpus = synthetic::corpus(&hard_config(), 3, 100 + seed);
        let featurizer = Featurizer::new(corpus.dictionary.clone()).map_err(|e| e.to_string())?;
        let corpora = sources(&corpus, &featurizer)?;
        let run = cross_validate(&corpora, &ModelConfig::canonical(), SplitSpec::new(Fraction::HALF, seed))
            .map_err(|e| e.to_string())?;
        let models = run
            .models
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let pooled: Vec<Prepared> = run.held_out.concat();
        let mut individual = models
            .iter()
            .map(|m| {
                eval::evaluate(m, &pooled)
                    .map_err(|e| e.to_string())?
                    .balanced_error()
                    .ok_or_else(|| "undefined balanced error".to_string())
            })
            .collect::<Result<Vec<f64>, String>>()?;
        individual.sort_by(f64::total_cmp);
        let median = individual[individual.len() / 2];
        let e = Ensemble::new(featurizer.clone(), models.clone()).map_err(|e| e.to_string())?;
        let items: Vec<(&str, &FeatureVector, usize)> =
            pooled.iter().map(|d| (d.id.as_str(), &d.vector, d.tokens)).collect();
        let verdicts = e.vote_vectors(&items).map_err(|e| e.to_string())?;
        let ens = error_rates(pooled.iter().zip(&verdicts).map(|(d, v)| (d.label, v.label)))
            .balanced_error()
            .ok_or("undefined ensemble error")?;
        ensure(ens <= median, || format!("seed {seed}: ensemble {ens:.4} > median {median:.4}"))?;
        lines.push(format!("{ens:.3}<={median:.3}"));
        runs.push(HardRun {
            seed,
            models,
            held_out: run.held_out,
        });
    }
    Ok(format!("ensemble vs median balanced error over 5 seeds: {}", lines.join(", ")))
}

/// Combined error of the least and most confident quarters of `docs`.
fn quartile_errors(m: &TrainedModel, docs: &[Prepared]) -> Result<(f64, f64), String> {
    let vs: Vec<&FeatureVector> = docs.iter().map(|d| &d.vector).collect();
    let scores = m.score_batch(&vs).map_err(|e| e.to_string())?;
    let mut ranked: Vec<(f64, bool)> = scores
        .iter()
        .zip(docs)
        .map(|(s, d)| (confidence(*s).value(), s.label() != d.label))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let q = ranked.len() / 4;
    let rate = |xs: &[(f64, bool)]| xs.iter().filter(|x| x.1).count() as f64 / xs.len() as f64;
    Ok((rate(&ranked[..q]), rate(&ranked[ranked.len() - q..])))
}

fn confidence_monotonicity(runs: &[HardRun]) -> Check {
    ensure(runs.len() == 5, || format!("needs the 5 ensemble runs, have {}", runs.len()))?;
    let mut lines = Vec::new();
    for run in runs {
        for family in ["logistic", "dnn-0.95"] {
            let m = run
                .models
                .iter()
                .find(|m| m.source == Source::Reddit && m.config.name() == family)
                .ok_or("model missing")?;
            let held = &run.held_out[0];
            let bins = eval::confidence_bins(m, held, eval::DEFAULT_BINS).map_err(|e| e.to_string())?;
            ensure(bins.total() == held.len(), || "bins do not partition the documents".into())?;
            let (bottom, top) = quartile_errors(m, held)?;
            ensure(top <= bottom, || {
                format!("seed {} {family}: top quartile {top:.3} > bottom {bottom:.3}", run.seed)
            })?;
            lines.push(format!("{family} {top:.3}<={bottom:.3}"));
        }
    }
    Ok(format!("top vs bottom quartile error: {}", lines.join(", ")))
}

/// First-layer pre-activations for `x`.
fn preactivations(net: &Network<f64>, x: &FeatureVector) -> Array1<f64> {
    let l = &net.layers()[0];
    let mut z = l.bias.clone();
    for (j, v) in x.iter() {
        z.scaled_add(v as f64, &l.weight.row(j as usize));
    }
    z
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut points = 0;
    while points < 20 {
        let net = Network::<f64>::glorot(&[4, 3, 2], &mut rng);
        let x = FeatureVector::from_dense(&(0..4).map(|_| rng.gen_range(0.0f32..1.0)).collect::<Vec<_>>());
        // Central differences are only valid away from the ReLU kink.
        if preactivations(&net, &x).iter().any(|z| z.abs() < 1e-3) {
            continue;
        }
        points += 1;
        let label = [rng.gen_range(0..2usize)];
        let weight = [rng.gen_range(0.5..3.0)];
        let batch = [&x];
        let fwd = net.forward(&batch).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = net.backward(&batch, &fwd, &label, &weight).flat().copied().collect();
        for (k, &g) in analytic.iter().enumerate() {
            let loss_at = |delta: f64| {
                let mut n = net.clone();
                *n.params_mut().nth(k).unwrap() += delta;
                let f = n.forward(&batch).unwrap();
                n.loss(&f, &label, &weight)
            };
            let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let scale = g.abs().max(numeric.abs());
            let rel = if scale < 1e-7 { 0.0 } else { (g - numeric).abs() / scale };
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("20 points on a 4-3-2 net, max relative error {worst:.2e}"))
}

fn early_stopping() -> Check {
    let cfg = SyntheticConfig {
        docs_per_class: 150,
        ..SyntheticConfig::default()
    };
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let corpus = synthetic::corpus(&cfg, 1, seed);
        let f = Featurizer::new(corpus.dictionary.clone()).map_err(|e| e.to_string())?;
        let docs = prepare(&corpus.sources[0].1, &f).map_err(|e| e.to_string())?;
        let data: Vec<Example> = docs.iter().map(Prepared::example).collect();
        let balance = ClassBalance::from_labels(data.iter().map(|e| e.label)).map_err(|e| e.to_string())?;
        let epochs = |t: f64| -> Result<usize, String> {
            let m = train(&ModelConfig::Dnn(DnnParams::with_threshold(t)), &data, &balance, seed)
                .map_err(|e| e.to_string())?;
            m.epochs.ok_or_else(|| "no epoch count".into())
        };
        let (e95, e99) = (epochs(0.95)?, epochs(0.99)?);
        ensure(e95 <= e99, || format!("seed {seed}: 0.95 took {e95} epochs, 0.99 took {e99}"))?;
        pairs.push(format!("{e95}/{e99}"));
    }
    Ok(format!("epochs at 0.95/0.99 over 10 seeds: {}", pairs.join(" ")))
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVector {
    let nnz = rng.gen_range(1..=dim.min(30));
    let mut pairs: Vec<(u32, f32)> = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let j = rng.gen_range(0..dim as u32);
        if !pairs.iter().any(|p| p.0 == j) {
            pairs.push((j, rng.gen_range(0.05f32..1.0)));
        }
    }
    let norm = pairs.iter().map(|p| p.1 * p.1).sum::<f32>().sqrt();
    FeatureVector::new(dim, pairs.into_iter().map(|(j, v)| (j, v / norm)).collect()).unwrap()
}

fn persistence(base: Option<&Baseline>) -> Check {
    let base = base.ok_or("classifier-sanity fixture unavailable")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut families = Vec::new();
    for m in base.models.iter().filter(|m| m.source == Source::Reddit) {
        let path = dir.path().join(format!("{}.ctcm", m.id()));
        save_model(m, &path).map_err(|e| e.to_string())?;
        let back = load_model(&path).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let v = random_unit_vector(&mut rng, m.dim);
            let (a, b) = (m.score(&v).map_err(|e| e.to_string())?, back.score(&v).map_err(|e| e.to_string())?);
            let bits = |s: ScorePair| (s.v0.to_bits(), s.v1.to_bits());
            ensure(bits(a) == bits(b), || format!("{}: {a:?} became {b:?}", m.id()))?;
        }
        families.push(m.config.name());
    }
    ensure(families.len() == 7, || format!("only {} families", families.len()))?;
    Ok(format!("{} families, 100 vectors each, bit-identical", families.len()))
}

fn throughput(base: Option<&Baseline>) -> Check {
    let base = base.ok_or("classifier-sanity fixture unavailable")?;
    let e = Ensemble::new(base.featurizer.clone(), base.models.clone()).map_err(|e| e.to_string())?;
    let cfg = SyntheticConfig {
        docs_per_class: 4000,
        ..SyntheticConfig::default()
    };
    let docs = synthetic::corpus(&cfg, 1, 11).sources.remove(0).1;
    // Warm up caches and the thread pool before timing.
    e.vote_batch(&docs[..500]);
    let report = eval::bench(&e, &docs, &[1000, 2000, 4000, 8000], 3, 11).map_err(|e| e.to_string())?;
    let (_, _, r2) = report.linear_fit();
    let ratios: Vec<f64> = report
        .rows
        .windows(2)
        .map(|w| w[1].wall_seconds / w[0].wall_seconds)
        .collect();
    let times: Vec<String> = report.rows.iter().map(|r| format!("{:.3}s", r.wall_seconds)).collect();
    ensure(r2 >= 0.98, || format!("R^2 {r2:.4} (times {times:?})"))?;
    ensure(ratios.iter().all(|r| (1.3..=2.7).contains(r)), || {
        format!("doubling ratios {ratios:.3?} (times {times:?})")
    })?;
    Ok(format!("times {}, R^2 {r2:.4}, doubling ratios {ratios:.2?}", times.join("/")))
}

fn matrix_shape(base: Option<&Baseline>) -> Check {
    let base = base.ok_or("classifier-sanity fixture unavailable")?;
    let report = &base.run.report;
    ensure(report.cells.len() == 63, || format!("{} cells", report.cells.len()))?;
    let with_acc = report.cells.iter().filter(|c| c.training_accuracy.is_some()).count();
    ensure(with_acc == 21, || format!("{with_acc} cells carry training accuracy"))?;
    ensure(
        report
            .cells
            .iter()
            .all(|c| c.training_accuracy.is_some() == (c.train_source == c.validation_source)),
        || "training accuracy on a cross-source cell".into(),
    )?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(|e| e.to_string())?;
    let text = String::from_utf8(csv).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    ensure(
        header == "family,train_source,validation_source,training_accuracy,fn_rate,fp_rate",
        || format!("header {header:?}"),
    )?;
    let rows: Vec<&str> = lines.collect();
    ensure(rows.len() == 63 && rows.iter().all(|r| r.split(',').count() == 6), || {
        "CSV rows malformed".into()
    })?;
    Ok("63 cells, 21 with training accuracy, CSV header exact".into())
}

fn main() -> ExitCode {
    let mut r = Runner { failures: 0 };
    let secs = Duration::from_secs;
    let mut baseline = None;
    let mut hard_runs = Vec::new();

    r.run(1, "confidence formula", secs(1), confidence_formula);
    r.run(2, "class weight", secs(1), class_weight);
    r.run(3, "majority vote", secs(10), majority_vote);
    r.run(4, "vectorizer oracle", secs(5), vectorizer_oracle);
    r.run(5, "classifier sanity", secs(600), || classifier_sanity(&mut baseline));
    r.run(6, "ensemble superiority", secs(1800), || ensemble_superiority(&mut hard_runs));
    r.run(7, "confidence monotonicity", secs(600), || confidence_monotonicity(&hard_runs));
    r.run(8, "gradient check", secs(5), gradient_check);
    r.run(9, "dnn early stopping", secs(300), early_stopping);
    r.run(10, "persistence round trip", secs(60), || persistence(baseline.as_ref()));
    r.run(11, "throughput linearity", secs(900), || throughput(baseline.as_ref()));
    r.run(12, "cross-validation matrix shape", secs(600), || matrix_shape(baseline.as_ref()));

    println!("acceptance: {} of 12 criteria passed", 12 - r.failures);
    if r.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
