//! Acceptance suite: one line per criterion, non-zero exit on any failure.

#[path = "../common/mod.rs"]
mod common;
mod oracle;

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uniqa::eval::metrics::{exact_match, keyword_accuracy, normalize_answer, retrieval_f1, token_f1};
use uniqa::eval::{run_ablation, run_eval, MetricsReport, REPORT_FILE, PER_EXAMPLE_FILE};
use uniqa::generation::generation_loss;
use uniqa::numerics::log_sum_exp;
use uniqa::pipeline::{answer_question, ingest_and_index, AnswerEnvelope, Engine, PipelineConfig, Session, SessionStore};
use uniqa::ranker::ranking_loss;
use uniqa::retrieval::{
    bm25_score, build_index, contrastive_retrieval_loss, retrieve_topk, CorpusStats, EmbeddingProvider,
    EmbeddingProviderSpec,
};
use uniqa::unirep::{linearize_table, make_clue, reconstruct_table, ContextualQuestion, TableDoc, TextualizationConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(started: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = started.elapsed();
    ensure!(took < limit, "{what} took {:.2} s, limit {} s", took.as_secs_f64(), limit.as_secs());
    Ok(())
}

// ---------------------------------------------------------------- tables

fn random_cell(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "horse", "Santa", "Derby", "is", "Row", "row", "the", "1987", ",", ".", "'", ":", "\"", "\"\"", " ", "  ",
        "one's", "Row one's", "the x is", "Table:", "Columns:", "é", "名",
    ];
    let n = rng.random_range(0..5);
    (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn table_roundtrip() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rows_total = 0;
    for i in 0..1000 {
        let cols = rng.random_range(1..=8);
        let nrows = rng.random_range(0..=20);
        let title = rng.random_bool(0.5).then(|| random_cell(&mut rng));
        let header = (0..cols).map(|_| random_cell(&mut rng)).collect();
        let rows = (0..nrows).map(|_| (0..cols).map(|_| random_cell(&mut rng)).collect()).collect();
        let t = TableDoc { id: String::new(), title, header, rows };
        rows_total += nrows;
        let text = linearize_table(&t).map_err(|e| format!("table {i}: {e}"))?;
        let back = reconstruct_table(&text).map_err(|e| format!("table {i}: {e}\n{text}"))?;
        ensure!(back == t, "table {i} differs after round trip:\n{text}\n{t:?}\n{back:?}");
    }
    within(started, Duration::from_secs(5), "1000 round trips")?;
    Ok(format!("1000 tables, {rows_total} rows"))
}

// ---------------------------------------------------------------- retrieval

fn brute_force(query: &[f32], index: &uniqa::retrieval::VectorIndex, k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = index
        .clues()
        .iter()
        .map(|c| {
            let v = index.vector(&c.id).unwrap();
            let s = v.values().iter().zip(query).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum::<f64>();
            (c.id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn retrieval_exactness() -> Outcome {
    let started = Instant::now();
    let provider = EmbeddingProvider::from_spec(&EmbeddingProviderSpec::local(256)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vocab: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
    let mut checks = 0;
    for corpus in 0..5 {
        let mut texts: Vec<String> = Vec::with_capacity(1000);
        for _ in 0..1000 {
            // some exact duplicates so ties occur
            if !texts.is_empty() && rng.random_bool(0.05) {
                let dup = texts.choose(&mut rng).unwrap().clone();
                texts.push(dup);
                continue;
            }
            let n = rng.random_range(3..15);
            texts.push((0..n).map(|_| vocab.choose(&mut rng).unwrap().as_str()).collect::<Vec<_>>().join(" "));
        }
        let docs: Vec<_> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                uniqa::unirep::SourceDoc::Text(uniqa::unirep::TextDoc {
                    id: format!("c{corpus}-{:04}", rng.random_range(0..10_000) * 1000 + i),
                    title: None,
                    text: t.clone(),
                })
            })
            .collect();
        let cfg = TextualizationConfig::default();
        let clues = docs.iter().map(|d| make_clue(d, &cfg).unwrap()).collect();
        let index = build_index(clues, &provider).map_err(|e| e.to_string())?;
        for qn in 0..10 {
            let text = if qn == 0 {
                texts[rng.random_range(0..texts.len())].clone()
            } else {
                (0..rng.random_range(1..6)).map(|_| vocab.choose(&mut rng).unwrap().as_str()).collect::<Vec<_>>().join(" ")
            };
            let q = ContextualQuestion { text: text.clone(), turn_count: 0 };
            let qv = provider.embed(&text).map_err(|e| e.to_string())?;
            for k in [1, 30, 1000] {
                let got = retrieve_topk(&q, &index, k, &provider).map_err(|e| e.to_string())?;
                let want = brute_force(qv.values(), &index, k);
                ensure!(got.items.len() == want.len(), "corpus {corpus} K={k}: {} vs {}", got.items.len(), want.len());
                for (rank, (g, (id, score))) in got.items.iter().zip(&want).enumerate() {
                    ensure!(
                        &g.clue_id == id && (g.score - score).abs() <= 1e-12,
                        "corpus {corpus} query {qn} K={k} rank {rank}: got {} ({}), want {id} ({score})",
                        g.clue_id,
                        g.score
                    );
                }
                checks += 1;
            }
        }
    }
    within(started, Duration::from_secs(10), "retrieval exactness")?;
    Ok(format!("{checks} (corpus, query, K) cases match the full sort"))
}

// ---------------------------------------------------------------- losses

fn close(name: &str, got: f64, want: f64) -> Result<(), String> {
    ensure!((got - want).abs() <= 1e-9, "{name}: got {got}, want {want}");
    Ok(())
}

fn loss_calibration() -> Outcome {
    const LN32: f64 = 3.4657359027997265;
    const LN4: f64 = 1.3862943611198906;
    const FIVE_LN100: f64 = 23.025850929940457;

    close("ln 32 oracle", oracle::ln(32.0), LN32)?;
    close("contrastive, 32 uniform", contrastive_retrieval_loss(0.3, &[0.3; 31]).unwrap(), LN32)?;
    close("ranking, 1 of 4", ranking_loss(&[0.7; 4], &BTreeSet::from([0])).unwrap(), LN4)?;
    close("ranking, 2 of 4", ranking_loss(&[0.7; 4], &BTreeSet::from([0, 3])).unwrap(), 2.0 * LN4)?;
    let uniform_step = [1.5; 100];
    let lp = uniform_step[0] - log_sum_exp(&uniform_step);
    close("generation, 5 uniform steps", generation_loss(&[lp; 5]).unwrap(), FIVE_LN100)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        // cosine range for half the cases, wide logits for the rest
        let scale = if i % 2 == 0 { 1.0 } else { 40.0 };
        let n = rng.random_range(1..64);
        let pos = rng.random_range(-scale..=scale);
        let negs: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        let got = contrastive_retrieval_loss(pos, &negs).unwrap();
        let want = oracle::contrastive(pos, &negs);
        close(&format!("contrastive case {i}"), got, want)?;
        worst = worst.max((got - want).abs());

        let n = rng.random_range(2..=31);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0 * scale..=10.0 * scale)).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let positives: Vec<usize> = idx[..rng.random_range(1..=n.min(4))].to_vec();
        let got = ranking_loss(&logits, &positives.iter().copied().collect()).unwrap();
        let want = oracle::ranking(&logits, &positives);
        close(&format!("ranking case {i}"), got, want)?;
        worst = worst.max((got - want).abs());

        let steps: Vec<(Vec<f64>, usize)> = (0..rng.random_range(1..20))
            .map(|_| ((0..100).map(|_| rng.random_range(-10.0..=10.0)).collect(), rng.random_range(0..100)))
            .collect();
        let logprobs: Vec<f64> = steps.iter().map(|(l, g)| l[*g] - log_sum_exp(l)).collect();
        let got = generation_loss(&logprobs).unwrap();
        let want = oracle::generation(&steps);
        close(&format!("generation case {i}"), got, want)?;
        worst = worst.max((got - want).abs());
    }
    Ok(format!("closed forms exact; 300 random cases, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- bm25

const BM25_DOCS: [&str; 10] = [
    "the brown horse won the derby",
    "a horse race at the park",
    "horse horse horse",
    "the jockey rode a fast horse to victory",
    "rain delayed the race",
    "the derby draws a large crowd every spring",
    "fast cars and fast horses",
    "the park hosts a horse show and a dog show",
    "victory parade after the derby",
    "spring weather",
];

fn toks(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Direct evaluation of the scoring formula.
fn bm25_direct(query: &[String], doc: usize, docs: &[Vec<String>]) -> f64 {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let len = docs[doc].len() as f64;
    query
        .iter()
        .map(|t| {
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            let tf = docs[doc].iter().filter(|x| *x == t).count() as f64;
            idf * tf * 2.2 / (tf + 1.2 * (1.0 - 0.75 + 0.75 * len / avgdl))
        })
        .sum()
}

fn stats_of(docs: &[Vec<String>]) -> CorpusStats {
    CorpusStats::new(docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.clone())))
}

fn bm25_oracle() -> Outcome {
    let docs: Vec<Vec<String>> = BM25_DOCS.iter().map(|d| toks(d)).collect();
    let stats = stats_of(&docs);
    // hand values in 40-digit arithmetic
    let frozen = [
        ("horse", 2, 1.2122825166278541),
        ("derby horse", 0, 1.7995335472428857),
        ("fast horse victory", 3, 3.1383098925804954),
        ("the race", 4, 2.1237096990446166),
    ];
    for (q, d, want) in frozen {
        let got = bm25_score(&toks(q), &format!("d{d}"), &stats).map_err(|e| e.to_string())?;
        close(&format!("{q:?} on d{d}"), got, want)?;
    }
    let queries = ["horse", "derby horse", "fast horse victory", "the race", "zebra", "horse horse", "spring derby parade", ""];
    let mut cases = 0;
    for q in queries {
        let qt = toks(q);
        for d in 0..docs.len() {
            let got = bm25_score(&qt, &format!("d{d}"), &stats).map_err(|e| e.to_string())?;
            close(&format!("{q:?} on d{d}"), got, bm25_direct(&qt, d, &docs))?;
            ensure!(got >= 0.0, "negative score");
            cases += 1;
        }
    }

    // raising a query term's tf at fixed length never lowers the score
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab = ["horse", "race", "derby", "park", "fast", "spring", "crowd", "rain", "the", "a", "show", "win"];
    let mut perturbations = 0;
    for trial in 0..500 {
        let mut docs: Vec<Vec<String>> = (0..10)
            .map(|_| (0..rng.random_range(1..12)).map(|_| vocab.choose(&mut rng).unwrap().to_string()).collect())
            .collect();
        let query: Vec<String> = (0..rng.random_range(1..4)).map(|_| vocab.choose(&mut rng).unwrap().to_string()).collect();
        let d = rng.random_range(0..10);
        let slots: Vec<usize> = (0..docs[d].len()).filter(|&i| !query.contains(&docs[d][i])).collect();
        let Some(&slot) = slots.choose(&mut rng) else { continue };
        let id = format!("d{d}");
        let before = bm25_score(&query, &id, &stats_of(&docs)).unwrap();
        docs[d][slot] = query.choose(&mut rng).unwrap().clone();
        let after = bm25_score(&query, &id, &stats_of(&docs)).unwrap();
        ensure!(after >= before - 1e-12, "trial {trial}: tf increase lowered score {before} -> {after}");
        perturbations += 1;
    }
    Ok(format!("{cases} direct evaluations within 1e-9; {perturbations} tf perturbations monotone"))
}

// ---------------------------------------------------------------- metrics

fn metric_suite() -> Outcome {
    ensure!(normalize_answer("The Brown Horse.") == ["brown", "horse"], "normalize 1");
    ensure!(normalize_answer("").is_empty(), "normalize 2");
    ensure!(normalize_answer("a U.S. census") == ["us", "census"], "normalize 3");
    ensure!(exact_match("Secretariat", &["Secretariat"]) == 1.0, "em verbatim");
    ensure!(exact_match("The Louvre", &["louvre"]) == 1.0, "em normalized");
    ensure!(exact_match("Paris", &["Lima"]) == 0.0, "em disjoint");
    ensure!(token_f1("brown horse", &["brown horse"]) == 1.0, "f1 identical");
    close("f1 brown horse racing", token_f1("brown horse racing", &["brown horse"]), 0.8)?;
    ensure!(token_f1("Paris", &["Lima"]) == 0.0, "f1 disjoint");
    ensure!(retrieval_f1(&["a", "b"], &["b", "a"]) == 1.0, "rf1 equal");
    close("rf1 {a,b} vs {a}", retrieval_f1(&["a", "b"], &["a"]), 2.0 / 3.0)?;
    ensure!(retrieval_f1(&["a"], &["b"]) == 0.0, "rf1 disjoint");
    ensure!(keyword_accuracy("the winner was Lima", &["Lima"]) == 1.0, "kw present");
    ensure!(keyword_accuracy("the winner was Lima", &["Lima", "Peru"]) == 0.0, "kw one missing");
    ensure!(keyword_accuracy("a brown horse ran", &["Brown Horse"]) == 1.0, "kw normalized");

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pieces = ["a", "an", "the", "The", "horse", "Horse.", "brown", "U.S.", "race", ",", "!", " ", "  ", "x", "é"];
    let sample = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.random_range(0..7)).map(|_| *pieces.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    for i in 0..10_000 {
        let pred = sample(&mut rng);
        let golds: Vec<String> = (0..rng.random_range(1..3)).map(|_| sample(&mut rng)).collect();
        let em = exact_match(&pred, &golds);
        let f1 = token_f1(&pred, &golds);
        ensure!(em <= f1, "pair {i}: EM {em} > F1 {f1} for {pred:?} vs {golds:?}");
        ensure!((0.0..=1.0).contains(&f1), "pair {i}: F1 {f1} out of range");
    }
    Ok("hand examples reproduced; EM <= F1 on 10000 random pairs".into())
}

// ---------------------------------------------------------------- end to end

fn run_benchmark(dir: &std::path::Path, tag: &str) -> Result<(MetricsReport, std::path::PathBuf), String> {
    let syn = synth::benchmark(2024);
    let corpus = dir.join(format!("corpus-{tag}.jsonl"));
    common::write_corpus(&corpus, &syn.docs);
    let config = PipelineConfig::default();
    let index_dir = dir.join(format!("index-{tag}"));
    let ingest = ingest_and_index(&corpus, &index_dir, &config).map_err(|e| e.to_string())?;
    ensure!(ingest.clue_count == 300 && ingest.rejected.is_empty(), "ingest: {} clues", ingest.clue_count);
    let engine = Engine::open(PipelineConfig { index_path: Some(index_dir), ..config.clone() }).map_err(|e| e.to_string())?;
    let report = run_eval(&syn.dataset, &engine, &config.textualization).map_err(|e| e.to_string())?;
    let out = report.write(&dir.join(format!("out-{tag}"))).map_err(|e| e.to_string())?;
    Ok((report, out))
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (report, out_a) = run_benchmark(dir.path(), "a")?;
    let (_, out_b) = run_benchmark(dir.path(), "b")?;
    within(started, Duration::from_secs(30), "two benchmark runs")?;

    ensure!(report.example_count == 100 && report.failed_count == 0, "{} examples, {} failed", report.example_count, report.failed_count);
    let recall = report.recall_at_k.unwrap();
    let top_n = report.gold_in_top_n.unwrap();
    let kw = report.keyword_acc.unwrap();
    ensure!(recall == 1.0, "recall@30 = {recall}");
    ensure!(top_n >= 0.99, "gold in top-10 = {top_n}");
    if kw != 1.0 {
        let bad: Vec<_> = report.per_example.iter().filter(|r| r.keyword_acc != Some(1.0)).map(|r| (&r.qid, &r.answer)).collect();
        return Err(format!("keyword accuracy = {kw}; misses: {bad:?}"));
    }
    for f in [REPORT_FILE, PER_EXAMPLE_FILE] {
        let a = std::fs::read(out_a.join(f)).unwrap();
        let b = std::fs::read(out_b.join(f)).unwrap();
        ensure!(a == b, "{f} differs between runs");
    }
    let n = report.per_example.len() as f64;
    close("aggregate EM", report.em.unwrap(), report.per_example.iter().map(|r| r.em).sum::<f64>() / n)?;
    Ok(format!(
        "recall@30 {recall:.2}, gold in top-10 {top_n:.2}, keyword acc {kw:.2}, EM {:.2}, F1 {:.2}; reports byte-identical",
        report.em.unwrap(),
        report.f1.unwrap()
    ))
}

// ---------------------------------------------------------------- ablation

fn ablation() -> Outcome {
    let syn = synth::image_subset(99, 60);
    let docs: Vec<_> = syn.docs.into_iter().enumerate().map(|(i, d)| (i + 1, d)).collect();
    let full = TextualizationConfig::default();
    let no_local = TextualizationConfig { use_local: false, ..full };
    let runs = run_ablation(&docs, &syn.dataset, &PipelineConfig::default(), &[full, no_local]).map_err(|e| e.to_string())?;
    let kw_full = runs[0].report.keyword_acc.unwrap();
    let kw_off = runs[1].report.keyword_acc.unwrap();
    ensure!(kw_full == 1.0, "full textualization keyword accuracy {kw_full}");
    ensure!(kw_off < kw_full, "local off {kw_off} not below full {kw_full}");
    Ok(format!("keyword acc full {kw_full:.2}, local off {kw_off:.2}"))
}

// ---------------------------------------------------------------- service

fn service_concurrency() -> Outcome {
    let syn = synth::benchmark(2024);
    let engine = Arc::new(common::local_engine(&syn.docs, PipelineConfig::default()));
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let base = format!("http://{}", common::spawn_server(uniqa::service::router(engine.clone(), store)));
    let client = reqwest::blocking::Client::new();

    let sessions: Vec<String> = (0..10)
        .map(|_| {
            let r: serde_json::Value = client.post(format!("{base}/v1/sessions")).send().unwrap().json().unwrap();
            r["session_id"].as_str().unwrap().to_string()
        })
        .collect();
    let questions: Vec<String> = syn.dataset.iter().map(|q| q.question.clone()).collect();
    let barrier = Arc::new(Barrier::new(50));
    let handles: Vec<_> = (0..50)
        .map(|i| {
            let (base, sid, barrier) = (base.clone(), sessions[i % 10].clone(), barrier.clone());
            let q = questions[i].clone();
            std::thread::spawn(move || {
                let client = reqwest::blocking::Client::new();
                barrier.wait();
                let resp = client.post(format!("{base}/v1/sessions/{sid}/ask")).json(&serde_json::json!({ "question": q })).send().unwrap();
                let status = resp.status();
                let env: AnswerEnvelope = resp.json().unwrap_or_else(|e| panic!("ask {i} ({status}): {e}"));
                (sid, q, env)
            })
        })
        .collect();
    let mut served: HashMap<(String, String), AnswerEnvelope> = HashMap::new();
    for h in handles {
        let (sid, q, env) = h.join().map_err(|_| "ask thread panicked".to_string())?;
        served.insert((sid, q), env);
    }

    let mut compared = 0;
    for sid in &sessions {
        let transcript: Session = client.get(format!("{base}/v1/sessions/{sid}")).send().unwrap().json().unwrap();
        ensure!(transcript.turns.len() == 5, "session {sid} has {} turns", transcript.turns.len());
        let mut replay = Session::new();
        for (pos, turn) in transcript.turns.iter().enumerate() {
            let expected = answer_question(&mut replay, &turn.question, &engine).map_err(|e| e.to_string())?;
            let got = served
                .get(&(sid.clone(), turn.question.clone()))
                .ok_or_else(|| format!("session {sid} recorded a question it was never asked"))?;
            ensure!(got.contextual_question.turn_count == pos, "session {sid} turn {pos} saw {} prior turns", got.contextual_question.turn_count);
            ensure!(got.without_timings() == expected.without_timings(), "session {sid} turn {pos} differs from sequential replay");
            ensure!(turn.answer == got.answer.text, "stored answer differs");
            compared += 1;
        }
    }
    ensure!(compared == 50, "compared {compared} envelopes");
    Ok("50 concurrent asks over 10 sessions equal their sequential replays".into())
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("table round trip", table_roundtrip),
        ("retrieval exactness", retrieval_exactness),
        ("loss calibration", loss_calibration),
        ("bm25 oracle", bm25_oracle),
        ("metric suite", metric_suite),
        ("end-to-end synthetic benchmark", end_to_end),
        ("ablation harness", ablation),
        ("service concurrency", service_concurrency),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name} ({secs:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name} ({secs:.2} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
