//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cmp::Ordering;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use polprobe_core::absolute::{
    anchors_to_jsonl, evaluate_absolute, load_anchors, save_anchors, AnchorAnswers, AnchorItem,
    Ideology, IdeologyTriple, SimilarityBackend,
};
use polprobe_core::drift::{
    cosine_distance, l2_distance, pair_distance_report, top_k_drift, Concept, ConceptPair,
    EmbeddingArchive, Metric,
};
use polprobe_core::provider::{
    ChatMessage, FnProvider, Gateway, ModelRef, ProviderError, ScriptedProvider,
};
use polprobe_core::relative::{aggregate_panel, InterviewConfig, PanelScore};
use polprobe_core::report::px_to_ternary;
use polprobe_core::store::{RunKind, RunStatus, RunStore, RESULTS_FILE, TRANSCRIPTS_DIR};
use polprobe_core::workflow::{self, render_run, ReportFormat};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
}

fn random_archive(rng: &mut ChaCha8Rng, tokens: &[String], dim: usize) -> EmbeddingArchive {
    let rows = tokens.iter().map(|t| {
        // an occasional zero row exercises the undefined-cosine path
        let zero = rng.random_bool(0.03);
        let row: Vec<f32> = (0..dim)
            .map(|_| {
                if zero {
                    0.0
                } else {
                    rng.random_range(-2.0f32..2.0)
                }
            })
            .collect();
        (t.clone(), row)
    });
    EmbeddingArchive::from_rows(dim, rows).unwrap()
}

fn naive_l2(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += (f64::from(a[i]) - f64::from(b[i])).powi(2);
    }
    s.sqrt()
}

fn naive_cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(1.0 - dot / (na * nb))
    }
}

fn drift_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0d1f7);
    let mut compared = 0usize;
    for case in 0..20 {
        let vocab = rng.random_range(1..=200usize);
        let dim = rng.random_range(1..=16usize);
        let universe: Vec<String> = (0..vocab + 20).map(|i| format!("t{i:03}")).collect();
        let pick = |rng: &mut ChaCha8Rng| {
            let mut v: Vec<String> = universe.choose_multiple(rng, vocab).cloned().collect();
            v.shuffle(rng);
            v
        };
        let (bt, tt) = (pick(&mut rng), pick(&mut rng));
        let base = random_archive(&mut rng, &bt, dim);
        let trained = random_archive(&mut rng, &tt, dim);
        let shared: Vec<&String> = bt.iter().filter(|t| trained.contains(t)).collect();
        if shared.is_empty() {
            continue;
        }
        for metric in [Metric::L2, Metric::Cosine] {
            let mut expected: Vec<(String, f64, Option<f64>)> = shared
                .iter()
                .map(|t| {
                    let (b, tr) = (base.row(t).unwrap(), trained.row(t).unwrap());
                    (t.to_string(), naive_l2(b, tr), naive_cosine(b, tr))
                })
                .collect();
            expected.sort_by(|a, b| {
                let (x, y) = match metric {
                    Metric::L2 => (Some(a.1), Some(b.1)),
                    Metric::Cosine => (a.2, b.2),
                };
                let primary = match (x, y) {
                    (Some(x), Some(y)) => y.partial_cmp(&x).unwrap(),
                    (Some(_), None) => Ordering::Less,
                    (None, Some(_)) => Ordering::Greater,
                    (None, None) => Ordering::Equal,
                };
                primary.then_with(|| a.0.cmp(&b.0))
            });
            let k = rng.random_range(1..=shared.len() + 5);
            let got = top_k_drift(&base, &trained, k, metric).map_err(|e| e.to_string())?;
            ensure!(
                got.len() == k.min(shared.len()),
                "case {case}: {} rows for k={k}",
                got.len()
            );
            for (g, e) in got.iter().zip(&expected) {
                ensure!(
                    g.token == e.0,
                    "case {case} {metric}: ranked {} where oracle has {}",
                    g.token,
                    e.0
                );
                ensure!(
                    (g.l2 - e.1).abs() <= 1e-6,
                    "case {case}: l2 of {} is {} vs {}",
                    g.token,
                    g.l2,
                    e.1
                );
                match (g.cosine_dist, e.2) {
                    (Some(a), Some(b)) => ensure!(
                        (a - b).abs() <= 1e-6,
                        "case {case}: cosine of {} is {a} vs {b}",
                        g.token
                    ),
                    (None, None) => {}
                    (a, b) => {
                        return Err(format!(
                            "case {case}: cosine of {} is {a:?} vs {b:?}",
                            g.token
                        ))
                    }
                }
                compared += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{compared} ranked rows match, {elapsed:.2?}"))
}

fn metric_axioms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa710);
    let mut worst_scale = 0.0f64;
    for i in 0..1000 {
        let dim = rng.random_range(1..=16usize);
        let mut v = || -> Vec<f64> { (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect() };
        let (a, b, c) = (v(), v(), v());
        let (ab, ba) = (l2_distance(&a, &b), l2_distance(&b, &a));
        ensure!(
            (ab - ba).abs() <= 1e-6,
            "triple {i}: l2 asymmetric {ab} vs {ba}"
        );
        let (bc, ac) = (l2_distance(&b, &c), l2_distance(&a, &c));
        ensure!(
            ac <= ab + bc + 1e-6,
            "triple {i}: triangle {ac} > {ab} + {bc}"
        );

        let s: f64 = rng.random_range(1e-3..1e3);
        let t: f64 = rng.random_range(1e-3..1e3);
        let scaled_a: Vec<f64> = a.iter().map(|x| x * s).collect();
        let scaled_b: Vec<f64> = b.iter().map(|x| x * t).collect();
        let d0 = cosine_distance(&a, &b).unwrap();
        for d in [
            cosine_distance(&scaled_a, &b),
            cosine_distance(&a, &scaled_b),
        ] {
            let d = d.unwrap();
            worst_scale = worst_scale.max((d - d0).abs());
            ensure!(
                (d - d0).abs() <= 1e-9,
                "triple {i}: cosine moved {} under scaling",
                (d - d0).abs()
            );
        }
    }
    Ok(format!(
        "1000 triples, worst cosine scale error {worst_scale:.1e}"
    ))
}

fn figure_analogue() -> Check {
    let base = EmbeddingArchive::from_rows(
        2,
        [
            ("fascism", vec![1.0, 0.0]),
            ("capitalism", vec![0.0, 1.0]),
            ("communism", vec![1.0, 1.0]),
            ("authoritarianism", vec![1.0, 2.0]),
        ],
    )
    .unwrap();
    let trained = EmbeddingArchive::from_rows(
        2,
        [
            ("fascism", vec![0.6, 0.8]),
            ("capitalism", vec![0.0, 1.0]),
            ("communism", vec![1.0, 1.0]),
            ("authoritarianism", vec![4.0, 5.0]),
        ],
    )
    .unwrap();
    let pairs = [
        ConceptPair {
            a: Concept::word("fascism"),
            b: Concept::word("capitalism"),
        },
        ConceptPair {
            a: Concept::word("communism"),
            b: Concept::word("authoritarianism"),
        },
    ];
    let report =
        pair_distance_report(&base, &trained, &pairs, Metric::L2).map_err(|e| e.to_string())?;
    ensure!(
        report.unresolved.is_empty(),
        "unresolved pairs: {:?}",
        report.unresolved
    );
    // hand-computed: |(1,0)-(0,1)| = sqrt 2, |(0.6,0.8)-(0,1)| = sqrt 0.4, |(1,1)-(1,2)| = 1, |(1,1)-(4,5)| = 5
    let expected = [(2f64.sqrt(), 0.4f64.sqrt()), (1.0, 5.0)];
    for (row, (b, t)) in report.rows.iter().zip(expected) {
        ensure!(
            (row.base_distance - b).abs() < 1e-6,
            "{}/{} base {} vs {b}",
            row.word_a,
            row.word_b,
            row.base_distance
        );
        ensure!(
            (row.trained_distance - t).abs() < 1e-6,
            "{}/{} trained {} vs {t}",
            row.word_a,
            row.word_b,
            row.trained_distance
        );
    }
    let (conv, div) = (&report.rows[0], &report.rows[1]);
    ensure!(
        conv.trained_distance < conv.base_distance,
        "fascism/capitalism did not converge"
    );
    ensure!(
        div.trained_distance > div.base_distance,
        "communism/authoritarianism did not diverge"
    );
    Ok(format!(
        "fascism/capitalism {:.4} -> {:.4}, communism/authoritarianism {:.0} -> {:.0}",
        conv.base_distance, conv.trained_distance, div.base_distance, div.trained_distance
    ))
}

fn scripted_gateway() -> Gateway {
    let verdict = |e: f64, s: f64| {
        format!(
            "Reasoning.\nVERDICT {{\"econ\": {e}, \"social\": {s}, \"rationale\": \"scripted\"}}"
        )
    };
    Gateway::new()
        .with_provider(
            "chief",
            Arc::new(ScriptedProvider::new(["What about rent?", "And taxes?"])),
        )
        .with_provider(
            "resp",
            Arc::new(ScriptedProvider::new(["Cap it.", "Raise them."])),
        )
        .with_provider("s1", Arc::new(ScriptedProvider::new([verdict(-6.5, 2.0)])))
        .with_provider("s2", Arc::new(ScriptedProvider::new([verdict(-4.0, 3.0)])))
        .with_provider("s3", Arc::new(ScriptedProvider::new([verdict(-1.5, 7.0)])))
}

fn relative_determinism() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let interview = InterviewConfig::new(ModelRef::new("chief", "c"), ModelRef::new("resp", "r"))
        .with_rounds(2);
    let panel = [
        ModelRef::new("s2", "m"),
        ModelRef::new("s1", "m"),
        ModelRef::new("s3", "m"),
    ];
    let rt = runtime();
    let mut bytes = Vec::new();
    let mut compass = None;
    for _ in 0..2 {
        let run = rt
            .block_on(workflow::run_relative(
                &scripted_gateway(),
                &store,
                &interview,
                &panel,
                3,
            ))
            .map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(run.dir.join(RESULTS_FILE)).unwrap());
        compass = run.results.compass;
    }
    let elapsed = start.elapsed();
    let c = compass.ok_or("no compass")?;
    // econ -6.5, -4, -1.5: mean -4, population sd sqrt(25/6); social 2, 3, 7: mean 4, sd sqrt(14/3)
    let expected = [
        (c.econ_mean, -4.0),
        (c.econ_stddev, (25.0f64 / 6.0).sqrt()),
        (c.social_mean, 4.0),
        (c.social_stddev, (14.0f64 / 3.0).sqrt()),
    ];
    for (got, want) in expected {
        ensure!((got - want).abs() < 1e-12, "compass value {got} vs {want}");
    }
    ensure!(bytes[0] == bytes[1], "results.json differs between reruns");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "econ {:.4}±{:.4}, social {:.4}±{:.4}, {elapsed:.2?}",
        c.econ_mean, c.econ_stddev, c.social_mean, c.social_stddev
    ))
}

fn aggregation_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a9e1);
    let mut constant_panels = 0;
    for i in 0..200 {
        let n = rng.random_range(1..=7usize);
        let constant = rng.random_bool(0.2);
        let fixed = (
            rng.random_range(-10.0..=10.0),
            rng.random_range(-10.0..=10.0),
        );
        let scores: Vec<PanelScore> = (0..n)
            .map(|j| {
                let (e, s) = if constant {
                    fixed
                } else {
                    (
                        rng.random_range(-10.0..=10.0),
                        rng.random_range(-10.0..=10.0),
                    )
                };
                PanelScore::new(ModelRef::new(format!("p{j}"), "m"), e, s, "r").unwrap()
            })
            .collect();
        let mut shuffled = scores.clone();
        shuffled.shuffle(&mut rng);
        let a = aggregate_panel(scores.clone()).map_err(|e| e.to_string())?;
        let b = aggregate_panel(shuffled).map_err(|e| e.to_string())?;
        ensure!(
            (a.econ_mean, a.social_mean, a.econ_stddev, a.social_stddev)
                == (b.econ_mean, b.social_mean, b.econ_stddev, b.social_stddev),
            "panel {i}: aggregate changed under permutation"
        );
        for (axis, mean, sd, values) in [
            (
                "econ",
                a.econ_mean,
                a.econ_stddev,
                scores.iter().map(|s| s.econ_axis()).collect::<Vec<_>>(),
            ),
            (
                "social",
                a.social_mean,
                a.social_stddev,
                scores.iter().map(|s| s.social_axis()).collect(),
            ),
        ] {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ensure!(
                lo <= mean && mean <= hi,
                "panel {i} {axis}: mean {mean} outside [{lo}, {hi}]"
            );
            let is_constant = lo == hi;
            ensure!(
                (sd == 0.0) == is_constant,
                "panel {i} {axis}: sd {sd} but constant={is_constant}"
            );
        }
        constant_panels += usize::from(constant || n == 1);
    }
    Ok(format!("200 panels ({constant_panels} constant)"))
}

const WORDS_PER_IDEOLOGY: usize = 4;

/// Vocabulary `l0..l3`, `c0..c3`, `m0..m3` with random 16-dim rows.
fn ideology_archive(seed: u64) -> Arc<EmbeddingArchive> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = ["l", "c", "m"]
        .iter()
        .flat_map(|p| (0..WORDS_PER_IDEOLOGY).map(move |i| format!("{p}{i}")));
    let rows: Vec<(String, Vec<f32>)> = rows
        .map(|t| (t, (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
        .collect();
    Arc::new(EmbeddingArchive::from_rows(16, rows).unwrap())
}

fn constructed_anchors(n: usize, rng: &mut ChaCha8Rng) -> Vec<AnchorItem> {
    (0..n)
        .map(|i| {
            let mut answer = |p: &str| {
                (0..3)
                    .map(|_| format!("{p}{}", rng.random_range(0..WORDS_PER_IDEOLOGY)))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let answers = AnchorAnswers {
                liberal: answer("l"),
                conservative: answer("c"),
                marxist: answer("m"),
            };
            AnchorItem::new(format!("Constructed question {i}?"), answers).unwrap()
        })
        .collect()
}

/// A respondent that repeats, verbatim, the anchor answer of the ideology
/// chosen for each prompt.
fn echo_gateway(
    anchors: &[AnchorItem],
    pick: impl Fn(usize) -> Ideology + Send + Sync + 'static,
) -> Gateway {
    let table: Vec<(String, AnchorAnswers)> = anchors
        .iter()
        .map(|a| (a.prompt.clone(), a.answers.clone()))
        .collect();
    let provider = FnProvider::new(move |_m: &ModelRef, msgs: &[ChatMessage]| {
        let prompt = &msgs.last().unwrap().content;
        let i = table
            .iter()
            .position(|(p, _)| p == prompt)
            .ok_or_else(|| ProviderError::Refusal("unknown prompt".into()))?;
        Ok(table[i].1.get(pick(i)).to_string())
    });
    Gateway::new().with_provider("resp", Arc::new(provider))
}

fn check_triple(t: &IdeologyTriple) -> Result<(), String> {
    let c = t.components();
    ensure!(c.iter().all(|v| *v >= 0.0), "negative component in {c:?}");
    ensure!(
        (c.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
        "components {c:?} do not sum to 1"
    );
    Ok(())
}

fn absolute_contracts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xab5);
    let archive = ideology_archive(7);
    let backend = SimilarityBackend::EmbeddingCosine { archive };
    let anchors = constructed_anchors(10, &mut rng);
    let respondent = ModelRef::new("resp", "m");
    let rt = runtime();
    let pick = |i: usize| Ideology::ALL[i % 3];

    let outcome = rt
        .block_on(evaluate_absolute(
            &echo_gateway(&anchors, pick),
            &respondent,
            &anchors,
            &backend,
            4,
        ))
        .map_err(|e| e.to_string())?;
    ensure!(
        outcome.failures.is_empty(),
        "failures: {:?}",
        outcome.failures
    );
    let mut triples = vec![outcome.aggregate];
    for (i, p) in outcome.per_prompt.iter().enumerate() {
        ensure!(
            p.position.argmax() == Some(pick(i)),
            "anchor {i}: argmax {:?} for a {:?} echo",
            p.position.argmax(),
            pick(i)
        );
        triples.push(p.position);
    }

    // swap liberal and marxist answers everywhere; positions must swap with them
    let relabeled: Vec<AnchorItem> = anchors
        .iter()
        .map(|a| {
            let mut b = a.clone();
            std::mem::swap(&mut b.answers.liberal, &mut b.answers.marxist);
            b
        })
        .collect();
    let swapped = rt
        .block_on(evaluate_absolute(
            &echo_gateway(&anchors, pick),
            &respondent,
            &relabeled,
            &backend,
            4,
        ))
        .map_err(|e| e.to_string())?;
    for (p, q) in outcome.per_prompt.iter().zip(&swapped.per_prompt) {
        let (a, b) = (p.position.components(), q.position.components());
        ensure!(
            (a[0] - b[2]).abs() < 1e-12
                && (a[1] - b[1]).abs() < 1e-12
                && (a[2] - b[0]).abs() < 1e-12,
            "relabeling: {a:?} vs {b:?}"
        );
        triples.push(q.position);
    }
    for t in &triples {
        check_triple(t)?;
    }
    Ok(format!(
        "10/10 echoes classified, {} triples valid, relabeling consistent",
        triples.len()
    ))
}

fn end_to_end_absolute() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe2e);
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let backend = SimilarityBackend::EmbeddingCosine {
        archive: ideology_archive(11),
    };
    let anchors = constructed_anchors(12, &mut rng);
    let gw = echo_gateway(&anchors, |i| {
        if i % 4 == 0 {
            Ideology::Conservative
        } else {
            Ideology::Marxist
        }
    });
    let run = runtime()
        .block_on(workflow::run_absolute(
            &gw,
            &store,
            &ModelRef::new("resp", "m"),
            &anchors,
            &backend,
            4,
        ))
        .map_err(|e| e.to_string())?;
    let aggregate = run.results.aggregate.ok_or("no aggregate")?;
    check_triple(&aggregate)?;

    let stored = store
        .load(&run.manifest.run_id)
        .map_err(|e| e.to_string())?;
    ensure!(
        stored.manifest.status == RunStatus::Complete,
        "status {:?}",
        stored.manifest.status
    );
    ensure!(
        stored.transcripts.len() == 12,
        "{} transcripts",
        stored.transcripts.len()
    );
    let svg = render_run(&stored, ReportFormat::Svg).map_err(|e| e.to_string())?;
    let doc = roxmltree::Document::parse(&svg).map_err(|e| format!("invalid svg: {e}"))?;
    let marker = doc
        .descendants()
        .find(|n| n.attribute("id") == Some("aggregate"))
        .ok_or("no aggregate marker")?;
    let coord = |name: &str| {
        marker
            .attribute(name)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or(format!("marker lacks {name}"))
    };
    let back = px_to_ternary(coord("cx")?, coord("cy")?);
    let want = aggregate.components();
    let err = back
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(
        err <= 1e-6,
        "marker inverts to {back:?}, aggregate {want:?}"
    );
    Ok(format!("aggregate {want:.4?}, marker error {err:.1e}"))
}

fn round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf11e);
    let dir = tempfile::tempdir().unwrap();

    let tokens: Vec<String> = (0..50).map(|i| format!("tok{i}")).collect();
    let archive = random_archive(&mut rng, &tokens, 9);
    let path = dir.path().join("a.emb");
    archive.save(&path).map_err(|e| e.to_string())?;
    let loaded = EmbeddingArchive::load(&path).map_err(|e| e.to_string())?;
    ensure!(loaded.tokens() == archive.tokens(), "token order changed");
    for i in 0..archive.len() {
        let (a, b) = (archive.row_at(i), loaded.row_at(i));
        ensure!(
            a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            "row {i} not bit-exact"
        );
    }
    ensure!(
        std::fs::read(&path).unwrap() == loaded.to_bytes(),
        "re-encoding differs"
    );

    let anchors = constructed_anchors(5, &mut rng);
    let apath = dir.path().join("anchors.jsonl");
    std::fs::write(&apath, anchors_to_jsonl(&anchors)).unwrap();
    let first = load_anchors(&apath).map_err(|e| e.to_string())?;
    let again = dir.path().join("again.jsonl");
    save_anchors(&again, &first).map_err(|e| e.to_string())?;
    let second = load_anchors(&again).map_err(|e| e.to_string())?;
    ensure!(
        first == anchors && second == first,
        "anchors changed across load/save"
    );

    let store = RunStore::new(dir.path().join("runs"));
    let mut w = store.create(RunKind::Relative, "digest".into(), Default::default());
    let payload = serde_json::json!({"values": [1.5, -2.25], "note": "round trip"});
    w.write_transcript(0, &payload).map_err(|e| e.to_string())?;
    w.write_results(&payload).map_err(|e| e.to_string())?;
    let id = w.run_id().to_string();
    let manifest = w
        .finish(RunStatus::Complete, None)
        .map_err(|e| e.to_string())?;
    let run = store.load(&id).map_err(|e| e.to_string())?;
    ensure!(run.manifest == manifest, "manifest changed");
    ensure!(
        run.results_as::<serde_json::Value>()
            .map_err(|e| e.to_string())?
            == Some(payload.clone()),
        "results changed"
    );
    ensure!(
        run.transcripts == vec![payload.clone()],
        "transcripts changed"
    );

    let mut w = store.create(RunKind::Absolute, "digest".into(), Default::default());
    w.write_transcript(0, &payload).map_err(|e| e.to_string())?;
    let id = w.run_id().to_string();
    let tdir = w.dir().join(TRANSCRIPTS_DIR);
    interrupt_write(&tdir)?;
    drop(w);
    let run = store.load(&id).map_err(|e| e.to_string())?;
    ensure!(
        run.manifest.status == RunStatus::Partial,
        "interrupted run has status {:?}",
        run.manifest.status
    );
    ensure!(
        run.transcripts.len() == 1 && run.results.is_none(),
        "interrupted run contents wrong"
    );
    Ok("archive, anchors, run store and interrupted run all round-trip".into())
}

/// Leaves the debris of a write that died before its rename.
fn interrupt_write(dir: &Path) -> Result<(), String> {
    std::fs::write(
        dir.join(".001.json.tmp-interrupted"),
        b"{\"schema_version\": 1, \"ind",
    )
    .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("drift oracle equivalence", drift_oracle),
        ("metric axioms", metric_axioms),
        ("converging and diverging concept pairs", figure_analogue),
        ("relative protocol determinism", relative_determinism),
        ("aggregation invariants", aggregation_invariants),
        ("absolute-position contracts", absolute_contracts),
        ("end-to-end scripted absolute run", end_to_end_absolute),
        ("file-format round-trips", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS {}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}: {name} ({why})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
