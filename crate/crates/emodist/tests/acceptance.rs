//! Acceptance gate: one test per release criterion, each ending with a
//! `[acceptance] <name>: PASS` line. Expected values come from committed
//! fixtures whose oracle sheet is produced by an independent implementation
//! (tools/make_fixtures.py), never from this crate's own output.

mod common;

use std::collections::HashMap;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emodist::config::ExperimentConfig;
use emodist::corpus::Corpus;
use emodist::distribution::EmotionDistribution;
use emodist::gateway::{GatewayMode, MockTransport, ProviderRequest, Transport, TransportError};
use emodist::label::LabelSpace;
use emodist::metrics::{
    bhattacharyya, classification_metrics, ece, js_divergence, majority_label, r_squared,
    shannon_entropy, ConfusionMatrix, ScoredUtterance,
};
use emodist::parser::{parse, render_rule1};
use emodist::promptgen::{
    assemble_prompt, select_examples, textualize_speech, PromptMode, PromptSpec, PromptTemplate,
    SegmentTag,
};
use emodist::runner::{execute_sweep, Runner};

use common::oracle;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name))
        .unwrap_or_else(|e| panic!("fixture {name} unreadable: {e}"))
}

fn random_distribution(rng: &mut ChaCha8Rng, space: &LabelSpace) -> EmotionDistribution {
    let k = space.len();
    let mut values = vec![0.0f64; k];
    // random support of at least one label, Dirichlet-ish via normalization
    let support = rng.gen_range(1..=k);
    let mut picked: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        let j = rng.gen_range(0..=i);
        picked.swap(i, j);
    }
    let mut total = 0.0;
    for &idx in picked.iter().take(support) {
        let v = rng.gen_range(0.05..1.0f64);
        values[idx] = v;
        total += v;
    }
    for v in &mut values {
        *v /= total;
    }
    let pairs: Vec<(String, f64)> = space
        .labels()
        .map(str::to_string)
        .zip(values.iter().copied())
        .collect();
    EmotionDistribution::from_pairs(pairs, space).expect("normalized vector")
}

fn vector(d: &EmotionDistribution) -> Vec<f64> {
    d.values().collect()
}

// ---------------------------------------------------------------------------
// Criterion 1: metric implementations agree with brute-force oracles on
// 1000 random fixtures to 1e-9, in under 30 seconds.
// ---------------------------------------------------------------------------

#[test]
fn metric_oracle_equivalence_on_random_fixtures() {
    let started = Instant::now();
    let space = LabelSpace::basic_four();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0A11CE);
    let mut max_diff = 0.0f64;
    let mut record = |diff: f64| {
        if diff > max_diff {
            max_diff = diff;
        }
    };

    for _ in 0..1000 {
        let batch: usize = rng.gen_range(3..=20);
        let mut scored = Vec::new();
        for i in 0..batch {
            let gold = random_distribution(&mut rng, &space);
            // one in six utterances has no prediction (parse failure path)
            let pred = if rng.gen_range(0..6) == 0 {
                None
            } else {
                Some(random_distribution(&mut rng, &space))
            };
            scored.push(ScoredUtterance::new(format!("u{i}"), gold, pred).unwrap());
        }

        // pairwise metrics and entropy against the naive formulas
        for s in &scored {
            let g = vector(&s.gold);
            record((shannon_entropy(&s.gold) - oracle::entropy(&g)).abs());
            if let Some(p) = &s.predicted {
                let pv = vector(p);
                record((js_divergence(&s.gold, p).unwrap() - oracle::js_divergence(&g, &pv)).abs());
                record((bhattacharyya(&s.gold, p).unwrap() - oracle::bhattacharyya(&g, &pv)).abs());
            }
        }

        // pooled R^2
        let golds: Vec<Vec<f64>> = scored
            .iter()
            .filter(|s| s.predicted.is_some())
            .map(|s| vector(&s.gold))
            .collect();
        let preds: Vec<Vec<f64>> = scored
            .iter()
            .filter_map(|s| s.predicted.as_ref().map(vector))
            .collect();
        if golds.len() >= 2 {
            if let Ok(r2) = r_squared(&scored) {
                record((r2 - oracle::r_squared(&golds, &preds)).abs());
            }
        }

        // top-label calibration over the defined-majority pool
        let mut confidences = Vec::new();
        let mut correct = Vec::new();
        for s in &scored {
            if let (Some(c), Some(ok)) = (s.confidence(), s.correct()) {
                confidences.push(c);
                correct.push(ok);
            }
        }
        if !confidences.is_empty() {
            record((ece(&scored, 10).unwrap() - oracle::ece(&confidences, &correct, 10)).abs());
        }

        // box-plot summary of the gold entropies
        let entropies: Vec<f64> = scored.iter().map(|s| s.gold_entropy).collect();
        let stats = emodist::metrics::SummaryStats::from_values(&entropies).unwrap();
        record((stats.q1 - oracle::quantile(&entropies, 0.25)).abs());
        record((stats.median - oracle::quantile(&entropies, 0.5)).abs());
        record((stats.q3 - oracle::quantile(&entropies, 0.75)).abs());

        // majority-vote classification; the naive matrix is built directly
        // from the documented argmax rules
        let k = space.len();
        let mut cm = vec![vec![0u64; k]; k];
        for s in &scored {
            let Some(p) = &s.predicted else { continue };
            let g = vector(&s.gold);
            let top = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let at_max: Vec<usize> = (0..k).filter(|&i| g[i] >= top - 1e-9).collect();
            if at_max.len() != 1 {
                continue; // tied gold has no majority
            }
            let pv = vector(p);
            let ptop = pv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pi = (0..k).find(|&i| pv[i] >= ptop - 1e-9).unwrap();
            cm[at_max[0]][pi] += 1;
        }
        if cm.iter().flatten().sum::<u64>() > 0 {
            let lib = classification_metrics(&ConfusionMatrix::from_scored(&scored, &space))
                .expect("non-empty matrix");
            let (acc, wf1, uar) = oracle::classification(&cm);
            record((lib.accuracy - acc).abs());
            record((lib.weighted_f1 - wf1).abs());
            record((lib.uar - uar).abs());
        }
    }

    assert!(
        max_diff <= 1e-9,
        "metric/oracle disagreement: max abs diff {max_diff:e}"
    );
    assert!(
        started.elapsed().as_secs() < 30,
        "oracle suite took {:?}",
        started.elapsed()
    );
    println!(
        "[acceptance] metric oracle equivalence (1000 fixtures, max diff {max_diff:.2e}): PASS"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: entropy anchor values for the stratum keys.
// ---------------------------------------------------------------------------

#[test]
fn entropy_anchor_values() {
    let space = LabelSpace::basic_four();
    let dist = |pairs: &[(&str, f64)]| {
        EmotionDistribution::from_pairs(pairs.iter().map(|(l, v)| (l.to_string(), *v)), &space)
            .unwrap()
    };

    let anchors = [
        (dist(&[("neutral", 0.8), ("sad", 0.2)]), 0.7219),
        (
            dist(&[("neutral", 0.6), ("happy", 0.2), ("sad", 0.2)]),
            1.3710,
        ),
        (
            dist(&[("neutral", 0.4), ("happy", 0.4), ("sad", 0.2)]),
            1.5219,
        ),
    ];
    for (d, expected) in &anchors {
        let h = shannon_entropy(d);
        assert!(
            (h - expected).abs() <= 1e-4,
            "entropy {h} differs from anchor {expected}"
        );
    }
    // the top-entropy anchor comes from a tied vote: no majority label there
    assert_eq!(majority_label(&anchors[2].0), None);
    assert!(majority_label(&anchors[0].0).is_some());
    println!("[acceptance] entropy anchor values (0.7219 / 1.3710 / 1.5219 within 1e-4): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 3: golden prompt texts, byte for byte, plus all four segment
// orderings.
// ---------------------------------------------------------------------------

fn golden_corpus() -> Corpus {
    Corpus::load(fixture("golden_corpus.jsonl"), LabelSpace::basic_four())
        .expect("golden corpus loads")
}

fn spec(mode: PromptMode, context_m: usize, include_speech: bool, shots: usize) -> PromptSpec {
    PromptSpec {
        mode,
        context_m,
        include_speech,
        shots,
        background_text: "Two speakers are talking.".to_string(),
        disjoint_examples: false,
        label_space: LabelSpace::basic_four(),
        template: PromptTemplate::builtin(),
    }
}

#[test]
fn golden_prompts_reproduced_byte_for_byte() {
    let corpus = golden_corpus();
    let target = corpus.get("d1_u3").unwrap();
    let context = corpus.context_window("d1_u3", 3).unwrap();
    let golden_zs = read_fixture("golden_prompts/full_zero_shot.txt");
    let golden_examples = read_fixture("golden_prompts/examples_segment.txt");
    let golden_speech = read_fixture("golden_prompts/speech_segment.txt");

    // full zero-shot prompt
    let zs = assemble_prompt(
        &spec(PromptMode::ZeroShot, 3, false, 0),
        target,
        &context,
        &[],
        None,
    )
    .unwrap();
    assert_eq!(
        zs.full_text, golden_zs,
        "zero-shot prompt differs from the golden text"
    );

    // few-shot examples segment
    let fs_spec = spec(PromptMode::FewShot, 3, false, 3);
    let examples = select_examples(&corpus, "d1_u3", &fs_spec, 0).unwrap();
    assert_eq!(examples.len(), 3);
    let fs = assemble_prompt(&fs_spec, target, &context, &examples, None).unwrap();
    assert_eq!(
        fs.segment(SegmentTag::Examples).unwrap(),
        golden_examples,
        "examples segment differs from the golden text"
    );
    // the few-shot prompt is the zero-shot prompt with the examples segment
    // spliced in directly before the task line
    let task_start = golden_zs
        .find("Predict the probability")
        .expect("task line present");
    let spliced = format!(
        "{}{}{}",
        &golden_zs[..task_start],
        golden_examples,
        &golden_zs[task_start..]
    );
    assert_eq!(fs.full_text, spliced);

    // speech feature segment
    let features = target
        .speech_features
        .as_ref()
        .expect("golden target has features");
    let speech_text = textualize_speech(
        &features.names,
        &features.values,
        &PromptTemplate::builtin(),
    )
    .unwrap();
    assert_eq!(format!("{speech_text}\n"), golden_speech);
    let zs_speech = assemble_prompt(
        &spec(PromptMode::ZeroShot, 3, true, 0),
        target,
        &context,
        &[],
        Some(&speech_text),
    )
    .unwrap();
    assert_eq!(
        zs_speech.segment(SegmentTag::Speech).unwrap(),
        golden_speech
    );

    // all four segment orderings
    let fs_speech = assemble_prompt(
        &fs_spec_with_speech(),
        target,
        &context,
        &examples,
        Some(&speech_text),
    )
    .unwrap();
    let order = |p: &emodist::promptgen::PromptText| -> Vec<SegmentTag> {
        p.segments.iter().map(|(t, _)| *t).collect()
    };
    use SegmentTag::*;
    assert_eq!(
        order(&zs),
        vec![
            Background,
            Context,
            TargetUtterance,
            Task,
            OutputConstraints
        ]
    );
    assert_eq!(
        order(&fs),
        vec![
            Background,
            Context,
            TargetUtterance,
            Examples,
            Task,
            OutputConstraints
        ]
    );
    assert_eq!(
        order(&zs_speech),
        vec![
            Background,
            Context,
            TargetUtterance,
            Speech,
            Task,
            OutputConstraints
        ]
    );
    assert_eq!(
        order(&fs_speech),
        vec![
            Background,
            Context,
            TargetUtterance,
            Speech,
            Task,
            Examples,
            OutputConstraints
        ]
    );
    // segment ranges tile the full text exactly
    for prompt in [&zs, &fs, &zs_speech, &fs_speech] {
        let mut end = 0;
        for (_, range) in &prompt.segments {
            assert_eq!(range.start, end);
            end = range.end;
        }
        assert_eq!(end, prompt.full_text.len());
    }
    println!("[acceptance] golden prompts byte-for-byte + four segment orderings: PASS");
}

fn fs_spec_with_speech() -> PromptSpec {
    spec(PromptMode::FewShot, 3, true, 3)
}

// ---------------------------------------------------------------------------
// Criterion 4: parser robustness — expected outcomes on the malformed
// corpus, a 100k fuzz run without panics, and render→parse round-trips.
// ---------------------------------------------------------------------------

#[test]
fn parser_malformed_corpus_matches_expected_outcomes() {
    let space = LabelSpace::basic_four();
    let cases: serde_json::Value =
        serde_json::from_str(&read_fixture("malformed_responses.json")).unwrap();
    let cases = cases.as_array().expect("fixture is a list");
    assert!(cases.len() >= 20, "need at least 20 malformed fixtures");

    for case in cases {
        let name = case["name"].as_str().unwrap();
        let response = case["response"].as_str().unwrap();
        let expected = &case["expected"];
        let outcome = parse(response, &space);

        assert_eq!(
            outcome.is_success(),
            expected["ok"].as_bool().unwrap(),
            "{name}: success flag"
        );
        let expected_failure = expected["failure"].as_str();
        assert_eq!(
            outcome.failure.as_ref().map(|f| f.kind()),
            expected_failure,
            "{name}: failure kind"
        );
        let expected_raw = expected["raw_sum"].as_f64().unwrap();
        assert!(
            (outcome.raw_sum - expected_raw).abs() <= 1e-12,
            "{name}: raw_sum {} vs {}",
            outcome.raw_sum,
            expected_raw
        );
        let repair_kinds: Vec<&str> = outcome.repairs.iter().map(|r| r.kind()).collect();
        let expected_repairs: Vec<&str> = expected["repairs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        assert_eq!(repair_kinds, expected_repairs, "{name}: repair sequence");

        match (
            outcome.distribution.as_ref(),
            expected["distribution"].as_array(),
        ) {
            (None, None) => {}
            (Some(dist), Some(expected_vec)) => {
                let values: Vec<f64> = dist.values().collect();
                for (i, (got, want)) in values.iter().zip(expected_vec).enumerate() {
                    let want = want.as_f64().unwrap();
                    assert!(
                        (got - want).abs() <= 1e-12,
                        "{name}: probability {i}: {got} vs {want}"
                    );
                }
            }
            (got, want) => panic!("{name}: distribution presence mismatch: {got:?} vs {want:?}"),
        }
    }
    println!(
        "[acceptance] malformed-response corpus ({} cases, exact outcomes): PASS",
        cases.len()
    );
}

#[test]
fn parser_fuzz_100k_random_byte_strings_never_panics() {
    let space = LabelSpace::basic_four();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    for _ in 0..100_000 {
        let len = rng.gen_range(0..160);
        let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let text = String::from_utf8_lossy(&bytes);
        let _ = parse(&text, &space);
    }
    // also fuzz printable-heavy strings that reach deeper pipeline stages
    let alphabet: Vec<char> = "{}[]'\":,.0123456789 \n\u{2019}neutralhappysadangrymixed-e"
        .chars()
        .collect();
    for _ in 0..20_000 {
        let len = rng.gen_range(0..120);
        let text: String = (0..len)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect();
        let _ = parse(&text, &space);
    }
    println!("[acceptance] parser fuzz (100k random byte strings, zero panics): PASS");
}

#[test]
fn parser_round_trips_rendered_distributions() {
    let space = LabelSpace::basic_four();
    let mut rng = ChaCha8Rng::seed_from_u64(0x207E);
    let mut max_err = 0.0f64;
    for _ in 0..2_000 {
        let original = random_distribution(&mut rng, &space);
        let rendered = render_rule1(&original);
        let outcome = parse(&rendered, &space);
        let reparsed = outcome
            .distribution
            .unwrap_or_else(|| panic!("round-trip parse failed on {rendered}"));
        for (a, b) in original.values().zip(reparsed.values()) {
            let err = (a - b).abs();
            if err > max_err {
                max_err = err;
            }
        }
    }
    assert!(max_err < 1e-6, "round-trip error {max_err:e}");
    println!("[acceptance] render→parse round-trip (max error {max_err:.2e} < 1e-6): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 5: end-to-end determinism and the independently computed
// aggregate sheet.
// ---------------------------------------------------------------------------

fn e2e_config(windows: Vec<usize>, script: &str) -> ExperimentConfig {
    ExperimentConfig {
        corpus_path: fixture("corpus_50.jsonl").display().to_string(),
        context_windows: windows,
        provider_id: "mock".into(),
        gateway_mode: GatewayMode::Mock,
        mock_script_path: fixture(script).display().to_string(),
        mock_strict: true,
        min_stratum_count: 10,
        ..ExperimentConfig::default()
    }
}

fn walk_files(root: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    files
}

fn assert_close(name: &str, window: usize, got: Option<f64>, want: &serde_json::Value) {
    match (got, want.as_f64()) {
        (Some(g), Some(w)) => assert!(
            (g - w).abs() <= 1e-9,
            "window {window}: {name} {g} differs from oracle {w}"
        ),
        (None, None) => {}
        (g, w) => {
            assert!(
                want.is_null() && g.is_none(),
                "window {window}: {name} presence mismatch: {g:?} vs {w:?}"
            );
        }
    }
}

#[test]
fn end_to_end_sweep_is_deterministic_and_matches_oracle_sheet() {
    let started = Instant::now();
    let config = e2e_config(vec![0, 3, 5], "e2e_script.json");
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("run_a");
    let dir_b = tmp.path().join("run_b");
    let report = execute_sweep(&config, &dir_a).expect("first sweep");
    execute_sweep(&config, &dir_b).expect("second sweep");

    // identical bytes across the entire run directory
    let files_a = walk_files(&dir_a);
    let files_b = walk_files(&dir_b);
    let rel = |files: &[PathBuf], root: &Path| -> Vec<PathBuf> {
        files
            .iter()
            .map(|f| f.strip_prefix(root).unwrap().to_path_buf())
            .collect()
    };
    assert_eq!(
        rel(&files_a, &dir_a),
        rel(&files_b, &dir_b),
        "run directory layout differs"
    );
    for (a, b) in files_a.iter().zip(&files_b) {
        assert_eq!(
            std::fs::read(a).unwrap(),
            std::fs::read(b).unwrap(),
            "file bytes differ: {}",
            a.display()
        );
    }

    // aggregates against the committed oracle sheet
    let sheet: serde_json::Value = serde_json::from_str(&read_fixture("e2e_oracle.json")).unwrap();
    let points = sheet["points"].as_array().unwrap();
    assert_eq!(points.len(), report.points.len());
    for (point, expected) in report.points.iter().zip(points) {
        let m = point.window_m;
        assert_eq!(
            point.window_m as u64,
            expected["window_m"].as_u64().unwrap()
        );
        assert_eq!(
            point.utterances as u64,
            expected["utterances"].as_u64().unwrap()
        );
        assert_eq!(point.scored as u64, expected["scored"].as_u64().unwrap());
        assert_eq!(
            point.parse_failures as u64,
            expected["parse_failures"].as_u64().unwrap()
        );
        assert_eq!(point.skipped as u64, expected["skipped"].as_u64().unwrap());
        assert_eq!(
            point.classified as u64,
            expected["classified"].as_u64().unwrap()
        );
        assert_close(
            "failure_rate",
            m,
            Some(point.failure_rate),
            &expected["failure_rate"],
        );
        assert_close("js_mean", m, point.js_mean, &expected["js_mean"]);
        assert_close("bc_mean", m, point.bc_mean, &expected["bc_mean"]);
        assert_close("r_squared", m, point.r_squared, &expected["r_squared"]);
        assert_close("ece", m, point.ece, &expected["ece"]);
        assert_close(
            "classwise_ece",
            m,
            point.classwise_ece,
            &expected["classwise_ece"],
        );
        assert_close("accuracy", m, point.accuracy, &expected["accuracy"]);
        assert_close(
            "weighted_f1",
            m,
            point.weighted_f1,
            &expected["weighted_f1"],
        );
        assert_close("uar", m, point.uar, &expected["uar"]);
    }
    let improvements = sheet["improvements"].as_array().unwrap();
    assert_eq!(improvements.len(), report.improvements.len());
    for (row, expected) in report.improvements.iter().zip(improvements) {
        let m = row.window_m;
        assert_eq!(row.window_m as u64, expected["window_m"].as_u64().unwrap());
        assert_close(
            "js_improvement",
            m,
            row.js_improvement,
            &expected["js_improvement"],
        );
        assert_close(
            "bc_improvement",
            m,
            row.bc_improvement,
            &expected["bc_improvement"],
        );
        assert_close(
            "r_squared_improvement",
            m,
            row.r_squared_improvement,
            &expected["r_squared_improvement"],
        );
        assert_close(
            "ece_improvement",
            m,
            row.ece_improvement,
            &expected["ece_improvement"],
        );
    }

    assert!(
        started.elapsed().as_secs() < 60,
        "end-to-end suite took {:?}",
        started.elapsed()
    );
    println!(
        "[acceptance] end-to-end sweep [0,3,5]: byte-identical reruns + oracle sheet to 1e-9: PASS"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: a record-mode run interrupted mid-flight resumes from the
// cache; the restarted run reissues only the missing calls.
// ---------------------------------------------------------------------------

/// Delegates to an inner transport and panics after a fixed number of calls,
/// simulating a crash mid-run.
struct InterruptingTransport {
    inner: Arc<MockTransport>,
    allowed: usize,
    calls: AtomicUsize,
}

impl Transport for InterruptingTransport {
    fn execute(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if call > self.allowed {
            panic!(
                "injected interruption after {} provider calls",
                self.allowed
            );
        }
        self.inner.execute(request)
    }

    fn is_network(&self) -> bool {
        false
    }
}

fn scripted_mock(script_path: &str) -> Arc<MockTransport> {
    let script: HashMap<String, String> = serde_json::from_str(&read_fixture(script_path)).unwrap();
    Arc::new(MockTransport::scripted(
        LabelSpace::basic_four(),
        script,
        true,
    ))
}

#[test]
fn record_mode_run_resumes_after_interruption() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = e2e_config(vec![3], "e2e_script.json");
    config.gateway_mode = GatewayMode::Record;
    config.cache_path = tmp.path().join("interrupted.jsonl").display().to_string();
    config.workers = 1; // deterministic interruption point

    // phase 1: crash after 20 of 50 provider calls
    let interrupting = Box::new(InterruptingTransport {
        inner: scripted_mock("e2e_script.json"),
        allowed: 20,
        calls: AtomicUsize::new(0),
    });
    let runner = Runner::with_transport(&config, interrupting).unwrap();
    let crashed = std::panic::catch_unwind(AssertUnwindSafe(|| runner.run_point(3))).is_err();
    assert!(crashed, "the interruption should abort the first run");
    drop(runner);

    // phase 2: restart over the same cache with a counting transport
    let counting = scripted_mock("e2e_script.json");
    let runner = Runner::with_transport(&config, Box::new(Arc::clone(&counting))).unwrap();
    let resumed = runner.run_sweep().expect("resumed run completes");
    assert_eq!(
        counting.call_count(),
        30,
        "the resumed run must reissue exactly the 30 uncached calls"
    );

    // reference: the same sweep, uninterrupted, over a fresh cache
    let mut reference_config = config.clone();
    reference_config.cache_path = tmp.path().join("reference.jsonl").display().to_string();
    let reference_runner = Runner::with_transport(
        &reference_config,
        Box::new(scripted_mock("e2e_script.json")),
    )
    .unwrap();
    let reference = reference_runner
        .run_sweep()
        .expect("reference run completes");

    let summary = |r: &emodist::report::MetricReport| {
        serde_json::to_string(&(&r.points, &r.improvements)).unwrap()
    };
    assert_eq!(
        summary(&resumed.report),
        summary(&reference.report),
        "resumed report differs from the uninterrupted run"
    );
    println!("[acceptance] record-mode resumability (20 cached + 30 fresh calls, identical report): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 7: directional sanity of the sweep analysis — when responses at
// window 5 are strictly closer to gold than at window 0, every metric moves
// the right way and the improvement columns carry positive signs.
// ---------------------------------------------------------------------------

#[test]
fn directional_sanity_of_sweep_improvements() {
    let config = e2e_config(vec![0, 5], "directional_script.json");
    let runner = Runner::from_config(&config).unwrap();
    let outcome = runner.run_sweep().unwrap();
    let [base, better] = &outcome.report.points[..] else {
        panic!("expected exactly two sweep points");
    };

    assert!(
        base.js_mean.unwrap() > better.js_mean.unwrap(),
        "JS should fall"
    );
    assert!(
        base.bc_mean.unwrap() < better.bc_mean.unwrap(),
        "BC should rise"
    );
    assert!(
        base.r_squared.unwrap() < better.r_squared.unwrap(),
        "R^2 should rise"
    );
    assert!(base.ece.unwrap() > better.ece.unwrap(), "ECE should fall");

    let row = &outcome.report.improvements[0];
    assert_eq!(row.window_m, 5);
    assert!(row.js_improvement.unwrap() > 0.0, "JS improvement sign");
    assert!(row.bc_improvement.unwrap() > 0.0, "BC improvement sign");
    assert!(
        row.r_squared_improvement.unwrap() > 0.0,
        "R^2 improvement sign"
    );
    assert!(row.ece_improvement.unwrap() > 0.0, "ECE improvement sign");
    println!(
        "[acceptance] directional sanity (JS↓ BC↑ R²↑ ECE↓, positive improvement signs): PASS"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8 (optional, non-gating): live smoke test. Requires a real
// credential in the configured environment variable; run explicitly with
// `cargo test --test acceptance -- --ignored live_smoke`.
// ---------------------------------------------------------------------------

#[test]
#[ignore = "requires a live provider credential; non-gating"]
fn live_smoke_few_shot_beats_zero_shot_on_bc() {
    let config_base = ExperimentConfig {
        corpus_path: std::env::var("EMODIST_SMOKE_CORPUS")
            .unwrap_or_else(|_| fixture("corpus_50.jsonl").display().to_string()),
        context_windows: vec![3],
        gateway_mode: GatewayMode::Live,
        provider_id: "gemini".into(),
        model_id: std::env::var("EMODIST_SMOKE_MODEL")
            .unwrap_or_else(|_| "gemini-1.5-flash".into()),
        ..ExperimentConfig::default()
    };
    if std::env::var(&config_base.api_key_env).is_err() {
        println!(
            "[acceptance] live smoke: SKIPPED ({} not set)",
            config_base.api_key_env
        );
        return;
    }

    let run = |mode: PromptMode| {
        let config = ExperimentConfig {
            mode,
            ..config_base.clone()
        };
        let runner = Runner::from_config(&config).expect("live runner");
        let outcome = runner.run_sweep().expect("live sweep");
        outcome.report.points[0]
            .bc_mean
            .expect("live run scored nothing")
    };
    let zs_bc = run(PromptMode::ZeroShot);
    let fs_bc = run(PromptMode::FewShot);
    assert!(
        fs_bc >= zs_bc,
        "few-shot BC {fs_bc} should not trail zero-shot BC {zs_bc}"
    );
    println!("[acceptance] live smoke (FS BC {fs_bc:.4} >= ZS BC {zs_bc:.4}): PASS");
}
