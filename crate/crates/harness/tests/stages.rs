use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use nbest_backend::{prompt_digest, BackendKind, FixtureBackend, FixtureRecord, OracleBackend};
use nbest_core::lattice::{serialize_lattice, Lattice, NBestList};
use nbest_core::metrics::{auc, eer, fpr_at_tpr, roc_curve, ScoredExample};
use nbest_core::parse::{parse_scale, PredictionRecord};
use nbest_core::prompt::{
    builtin_task_prompts, enforce_budget, render, serialize_utterance, ApproxTokenCounter, InputMode, OutputMode, Task,
};
use nbest_core::synth::ChannelConfig;
use nbest_harness::config::E2eSection;
use nbest_harness::records::*;
use nbest_harness::*;
use nbest_testkit::{diamond_fixture, nbest_oracle, three_path_fixture};

fn write_manifest(dir: &Path, entries: &[(&str, &str, Option<&Lattice>)]) -> PathBuf {
    let mut lines = Vec::new();
    for (id, gold, lattice) in entries {
        let rel = format!("lat/{id}.json");
        if let Some(l) = lattice {
            write_text(&dir.join(&rel), &serialize_lattice(l)).unwrap();
        }
        lines.push(ManifestEntry {
            utterance_id: id.to_string(),
            gold: gold.to_string(),
            reference: String::new(),
            lattice_path: rel,
        });
    }
    let path = dir.join("manifest.jsonl");
    write_jsonl(&path, &lines).unwrap();
    path
}

fn nbest_lines(path: &Path) -> Vec<Line<NBestList>> {
    read_jsonl(path).unwrap()
}

#[test]
fn nbest_diamond_matches_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &[("diamond", "1", Some(&diamond_fixture()))]);
    let out = dir.path().join("nbest.jsonl");
    let s = cmd_nbest(&manifest, 3, false, &out).unwrap();
    assert_eq!((s.total, s.failed), (1, 0));
    let lines = nbest_lines(&out);
    let Line::Ok(nb) = &lines[0] else { panic!("failed line") };
    let expected = nbest_oracle(&diamond_fixture(), 3);
    assert_eq!(nb.hypotheses.len(), 3);
    for (h, o) in nb.hypotheses.iter().zip(&expected) {
        assert_eq!(h.words, o.words);
        assert_eq!(h.cost, o.cost);
    }
}

#[test]
fn nbest_one_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        dir.path(),
        &[
            ("diamond", "1", Some(&diamond_fixture())),
            ("three", "0", Some(&three_path_fixture())),
        ],
    );
    let out = dir.path().join("nbest.jsonl");
    cmd_nbest(&manifest, 1, false, &out).unwrap();
    for line in nbest_lines(&out) {
        let Line::Ok(nb) = line else { panic!() };
        assert_eq!(nb.hypotheses.len(), 1);
    }
    let empty = write_manifest(&dir.path().join("e"), &[]);
    let s = cmd_nbest(&empty, 4, false, &dir.path().join("e/nbest.jsonl")).unwrap();
    assert_eq!((s.total, s.failed, s.exit_code()), (0, 0, 0));
    assert_eq!(std::fs::read_to_string(dir.path().join("e/nbest.jsonl")).unwrap(), "");
}

#[test]
fn nbest_failures_become_records() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        dir.path(),
        &[
            ("three", "1", Some(&three_path_fixture())),
            ("missing", "0", None),
            ("bad", "0", None),
            ("diamond", "1", Some(&diamond_fixture())),
        ],
    );
    // A cyclic lattice document.
    write_text(
        &dir.path().join("lat/bad.json"),
        r#"{"utterance_id":"bad","start":0,"finals":[1],"arcs":[{"from":0,"to":1,"word":"a","am_cost":1,"lm_cost":0},{"from":1,"to":0,"word":"b","am_cost":1,"lm_cost":0}]}"#,
    )
    .unwrap();
    let out = dir.path().join("nbest.jsonl");
    let s = cmd_nbest(&manifest, 2, false, &out).unwrap();
    assert_eq!((s.total, s.failed, s.exit_code()), (4, 2, 2));
    let lines = nbest_lines(&out);
    let ids: Vec<&str> = lines
        .iter()
        .map(|l| match l {
            Line::Ok(nb) => nb.utterance_id.as_str(),
            Line::Failed(f) => f.utterance_id.as_str(),
        })
        .collect();
    assert_eq!(ids, ["three", "missing", "bad", "diamond"]);
    assert!(matches!(&lines[2], Line::Failed(f) if f.error.contains("cycle")));
}

#[test]
fn prompt_stage_matches_library_render() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), &[("diamond", "1", Some(&diamond_fixture()))]);
    let nbest = dir.path().join("nbest.jsonl");
    cmd_nbest(&manifest, 4, false, &nbest).unwrap();
    let Line::Ok(nb) = nbest_lines(&nbest).remove(0) else {
        panic!()
    };

    for ablate in [
        vec![],
        vec!["no-hc".to_owned()],
        vec!["gib-tp".to_owned()],
        vec!["no-tp".to_owned()],
    ] {
        let config = RunConfig {
            n: 4,
            ablate: ablate.clone(),
            ..RunConfig::new(Task::Ddsd, OutputMode::BinaryTarget)
        };
        let out = dir.path().join("prompts.jsonl");
        cmd_prompt(&nbest, &config, &out).unwrap();
        let lines: Vec<Line<PromptRecord>> = read_jsonl(&out).unwrap();
        let Line::Ok(record) = &lines[0] else { panic!() };

        let reg = builtin_task_prompts();
        let tp = reg
            .lookup(Task::Ddsd, InputMode::NBest, OutputMode::BinaryTarget)
            .unwrap();
        let up = serialize_utterance(&nb, ablate.is_empty() || ablate[0] != "no-hc", 1).unwrap();
        let bundle = render(Some(tp), up, &config.ablations().unwrap()).unwrap();
        let expected = enforce_budget(bundle, &nb, 2048, &ApproxTokenCounter).unwrap();
        assert_eq!(record.rendered, expected.bundle.rendered, "{ablate:?}");
        assert_eq!(record.ablations, ablate);
        assert_eq!(record.hypothesis_count, 4);
    }
}

#[test]
fn prompt_stage_budget_failure_is_per_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        dir.path(),
        &[
            ("diamond", "1", Some(&diamond_fixture())),
            ("three", "0", Some(&three_path_fixture())),
        ],
    );
    let nbest = dir.path().join("nbest.jsonl");
    cmd_nbest(&manifest, 2, false, &nbest).unwrap();
    let config = RunConfig {
        n: 2,
        budget_tokens: 3,
        ablate: vec!["no-tp".into()],
        token_counter: nbest_harness::config::CounterKind::Whitespace,
        ..RunConfig::new(Task::Ks, OutputMode::Keyword)
    };
    let out = dir.path().join("prompts.jsonl");
    let s = cmd_prompt(&nbest, &config, &out).unwrap();
    // "turn on lights [-8.0]" is four tokens; "play music [-10.0]" is three.
    assert_eq!((s.total, s.failed), (2, 1));
    let lines: Vec<Line<PromptRecord>> = read_jsonl(&out).unwrap();
    assert!(matches!(&lines[0], Line::Failed(f) if f.error.contains("budget")));
    assert!(matches!(&lines[1], Line::Ok(p) if p.rendered == "play music [-10.0]" && p.dropped_hypotheses == 1));

    let empty = dir.path().join("empty.jsonl");
    write_text(&empty, "").unwrap();
    let s = cmd_prompt(&empty, &config, &dir.path().join("p2.jsonl")).unwrap();
    assert_eq!(s.total, 0);
}

fn prompt_file(dir: &Path, prompts: &[(&str, &str)]) -> PathBuf {
    let path = dir.join("prompts.jsonl");
    let lines: Vec<Line<PromptRecord>> = prompts
        .iter()
        .map(|(id, text)| {
            Line::Ok(PromptRecord {
                utterance_id: id.to_string(),
                rendered: text.to_string(),
                ablations: vec![],
                hypothesis_count: 1,
                dropped_hypotheses: 0,
            })
        })
        .collect();
    write_jsonl(&path, &lines).unwrap();
    path
}

#[tokio::test]
async fn infer_fixture_replay_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = prompt_file(dir.path(), &[("a", "pa"), ("b", "pb"), ("c", "pc")]);
    let stored = ["1", " 0\n", "Based on the list, 1."];
    let backend = FixtureBackend::new(
        ["a", "b", "c"].iter().zip(stored).map(|(id, text)| FixtureRecord {
            utterance_id: id.to_string(),
            raw_text: text.to_string(),
            prompt_digest: Some(prompt_digest(&format!("p{id}"))),
        }),
        true,
    )
    .unwrap();
    let out = dir.path().join("responses.jsonl");
    let s = cmd_infer(&prompts, &backend, 8, &out).await.unwrap();
    assert_eq!(s.failed, 0);
    let lines: Vec<Line<ResponseRecord>> = read_jsonl(&out).unwrap();
    for (line, text) in lines.iter().zip(stored) {
        let Line::Ok(r) = line else { panic!() };
        assert_eq!(r.raw_text, text);
        assert_eq!(r.backend, BackendKind::Fixture);
    }
}

#[tokio::test]
async fn infer_records_misses_and_passes_failures_through() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prompts.jsonl");
    let lines: Vec<Line<PromptRecord>> = vec![
        Line::failed("early", "lattice missing"),
        Line::Ok(PromptRecord {
            utterance_id: "a".into(),
            rendered: "x".into(),
            ablations: vec![],
            hypothesis_count: 1,
            dropped_hypotheses: 0,
        }),
        Line::Ok(PromptRecord {
            utterance_id: "absent".into(),
            rendered: "y".into(),
            ablations: vec![],
            hypothesis_count: 1,
            dropped_hypotheses: 0,
        }),
    ];
    write_jsonl(&path, &lines).unwrap();
    let backend = FixtureBackend::new(
        [FixtureRecord {
            utterance_id: "a".into(),
            raw_text: "go".into(),
            prompt_digest: None,
        }],
        false,
    )
    .unwrap();
    let out = dir.path().join("responses.jsonl");
    let s = cmd_infer(&path, &backend, 2, &out).await.unwrap();
    assert_eq!((s.total, s.failed, s.exit_code()), (3, 2, 2));
    let got: Vec<Line<ResponseRecord>> = read_jsonl(&out).unwrap();
    assert!(matches!(&got[0], Line::Failed(f) if f.error == "lattice missing"));
    assert!(matches!(&got[1], Line::Ok(r) if r.raw_text == "go"));
    assert!(matches!(&got[2], Line::Failed(f) if f.utterance_id == "absent" && f.error.contains("absent")));
}

#[tokio::test]
async fn infer_http_echo() {
    let stub =
        nbest_testkit::http_stub::spawn(nbest_testkit::http_stub::Reply::Text(Box::new(|p| p.to_owned())), 5).await;
    let dir = tempfile::tempdir().unwrap();
    let prompts: Vec<(String, String)> = (0..20)
        .map(|i| (format!("u{i}"), format!("line {i}\nnext [-{i}.5]")))
        .collect();
    let refs: Vec<(&str, &str)> = prompts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let path = prompt_file(dir.path(), &refs);
    let mut config = RunConfig::new(Task::Ks, OutputMode::Keyword);
    config.backend.kind = BackendKind::Http;
    config.backend.http.base_url = stub.base_url.clone();
    let backend = build_backend(&config).unwrap();
    let out = dir.path().join("responses.jsonl");
    cmd_infer(&path, backend.as_ref(), 8, &out).await.unwrap();
    let got: Vec<Line<ResponseRecord>> = read_jsonl(&out).unwrap();
    for (line, (id, prompt)) in got.iter().zip(&prompts) {
        let Line::Ok(r) = line else { panic!() };
        assert_eq!(&r.utterance_id, id);
        assert_eq!(&r.raw_text, prompt);
    }
}

async fn oracle_run(dir: &Path, config: &RunConfig, size: usize) -> (PathBuf, EvalReport) {
    let manifest = cmd_synth(&config.e2e.as_ref().unwrap().channel, size, &dir.join("corpus")).unwrap();
    let backend = OracleBackend::new(&config.oracle_config()).unwrap();
    let (_, report) = run_pipeline(config, &manifest, &backend, &dir.join("run"))
        .await
        .unwrap();
    (manifest, report)
}

use nbest_core::metrics::EvalReport;

#[tokio::test]
async fn oracle_responses_are_stable() {
    let config = RunConfig {
        n: 4,
        ..RunConfig::ddsd_default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    oracle_run(a.path(), &config, 100).await;
    oracle_run(b.path(), &config, 100).await;
    let digest = |d: &Path| prompt_digest(&std::fs::read_to_string(d.join("run/responses.jsonl")).unwrap());
    assert_eq!(digest(a.path()), digest(b.path()));
}

#[tokio::test]
async fn score_report_matches_direct_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        n: 8,
        ..RunConfig::ddsd_default()
    };
    let (manifest, report) = oracle_run(dir.path(), &config, 200).await;
    let golds: HashMap<String, bool> = read_jsonl::<ManifestEntry>(&manifest)
        .unwrap()
        .into_iter()
        .map(|e| (e.utterance_id, e.gold == "1"))
        .collect();
    let responses: Vec<Line<ResponseRecord>> = read_jsonl(&dir.path().join("run/responses.jsonl")).unwrap();
    let examples: Vec<ScoredExample> = responses
        .into_iter()
        .map(|l| {
            let Line::Ok(r) = l else { panic!() };
            let p = parse_scale(&r.utterance_id, &r.raw_text);
            ScoredExample::new(r.utterance_id.clone(), p.score().unwrap(), golds[&r.utterance_id])
        })
        .collect();
    let curve = roc_curve(&examples).unwrap();
    assert_eq!(report.utterances, 200);
    assert_eq!(report.eer, Some(eer(&curve)));
    assert_eq!(report.fpr_at_tpr95, Some(fpr_at_tpr(&curve, 0.95)));
    assert_eq!(report.auc, Some(auc(&curve)));
    assert_eq!(report.descriptive_fraction, 0.0);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("run/roc.csv")).unwrap(),
        curve.to_csv()
    );

    let roc_out = dir.path().join("again.csv");
    let again = cmd_roc(&dir.path().join("run/predictions.jsonl"), &manifest, &roc_out).unwrap();
    assert_eq!(again, curve);
}

fn responses_file(dir: &Path, items: &[(&str, &str, &str)]) -> (PathBuf, PathBuf) {
    let responses = dir.join("responses.jsonl");
    let lines: Vec<Line<ResponseRecord>> = items
        .iter()
        .map(|(id, raw, _)| {
            Line::Ok(ResponseRecord {
                utterance_id: id.to_string(),
                raw_text: raw.to_string(),
                backend: BackendKind::Fixture,
            })
        })
        .collect();
    write_jsonl(&responses, &lines).unwrap();
    let entries: Vec<(&str, &str, Option<&Lattice>)> = items.iter().map(|(id, _, g)| (*id, *g, None)).collect();
    (responses, write_manifest(dir, &entries))
}

#[test]
fn score_perfect_and_anti_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let golds = [("a", "1"), ("b", "1"), ("c", "0"), ("d", "0")];
    let perfect: Vec<(&str, &str, &str)> = golds.iter().map(|&(id, g)| (id, g, g)).collect();
    let (r, m) = responses_file(dir.path(), &perfect);
    let (_, report) = cmd_score(&r, &m, OutputMode::BinaryTarget, dir.path()).unwrap();
    assert_eq!((report.tpr, report.fpr), (Some(1.0), Some(0.0)));
    assert!(!dir.path().join("roc.csv").exists());

    let anti: Vec<(&str, &str, &str)> = golds
        .iter()
        .map(|&(id, g)| (id, if g == "1" { "0" } else { "1" }, g))
        .collect();
    let (r, m) = responses_file(dir.path(), &anti);
    let (_, report) = cmd_score(&r, &m, OutputMode::BinaryTarget, dir.path()).unwrap();
    assert_eq!((report.tpr, report.fpr), (Some(0.0), Some(1.0)));

    let scaled: Vec<(&str, &str, &str)> = golds
        .iter()
        .map(|&(id, g)| (id, if g == "1" { "90" } else { "10" }, g))
        .collect();
    let (r, m) = responses_file(dir.path(), &scaled);
    let (_, report) = cmd_score(&r, &m, OutputMode::Scale0To100, dir.path()).unwrap();
    assert_eq!(report.eer, Some(0.0));
    assert_eq!(report.auc, Some(1.0));
    assert!(dir.path().join("roc.csv").exists());
}

#[test]
fn score_keyword_and_descriptive() {
    let dir = tempfile::tempdir().unwrap();
    let items = [
        ("a", "up", "up"),
        ("b", "The word is up.", "up"),
        ("c", "OOV", "OOV"),
        ("d", "no", "go"),
    ];
    let (r, m) = responses_file(dir.path(), &items);
    let (_, report) = cmd_score(&r, &m, OutputMode::Keyword, dir.path()).unwrap();
    assert_eq!(report.total_accuracy, Some(0.5));
    assert_eq!(report.descriptive_fraction, 0.25);
    let pk = report.per_keyword.unwrap();
    assert_eq!(pk["up"].recall, Some(0.5));
    assert_eq!(pk["up"].precision, Some(1.0));
    let preds: Vec<Line<PredictionRecord>> = read_jsonl(&dir.path().join("predictions.jsonl")).unwrap();
    assert!(matches!(&preds[1], Line::Ok(p) if p.was_descriptive && p.label_or_score == "OOV"));
}

#[test]
fn score_missing_gold_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let (r, _) = responses_file(dir.path(), &[("a", "1", "1"), ("b", "0", "0")]);
    let m = write_manifest(&dir.path().join("m"), &[("a", "1", None)]);
    assert!(matches!(
        cmd_score(&r, &m, OutputMode::BinaryTarget, dir.path()),
        Err(HarnessError::Metrics(_))
    ));
}

#[tokio::test]
async fn e2e_noiseless_is_perfect_tie() {
    for base in [RunConfig::ks_default(), RunConfig::ddsd_default()] {
        let mut config = base;
        let e2e = config.e2e.as_mut().unwrap();
        e2e.channel = e2e.channel.clone().noiseless();
        e2e.corpus_size = 200;
        let dir = tempfile::tempdir().unwrap();
        let c = cmd_e2e(&config, dir.path()).await.unwrap();
        assert_eq!(c.verdict, Verdict::Tie);
        for row in &c.rows {
            let perfect = if c.higher_is_better { 1.0 } else { 0.0 };
            assert_eq!(row.value, perfect, "n={}", row.n);
        }
        assert!(dir.path().join(COMPARISON_FILE).exists());
    }
}

#[tokio::test]
async fn e2e_rejects_http_backend() {
    let mut config = RunConfig::ks_default();
    config.backend.kind = BackendKind::Http;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        cmd_e2e(&config, dir.path()).await,
        Err(HarnessError::Config(_))
    ));
}

#[tokio::test]
async fn one_best_accuracy_does_not_rise_with_substitution_mass() {
    let mut last = f64::INFINITY;
    for mass in [0.0, 0.1, 0.2, 0.3] {
        let config = RunConfig {
            e2e: Some(E2eSection {
                corpus_size: 600,
                ladder: vec![1],
                channel: ChannelConfig::ks_default().with_substitution_mass(mass),
            }),
            ..RunConfig::ks_default()
        };
        let dir = tempfile::tempdir().unwrap();
        let acc = cmd_e2e(&config, dir.path()).await.unwrap().rows[0].value;
        assert!(acc <= last, "mass {mass}: {acc} > {last}");
        last = acc;
    }
}

#[test]
fn shipped_configs_equal_defaults() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    assert_eq!(
        RunConfig::load(&root.join("ks_default.toml")).unwrap(),
        RunConfig::ks_default()
    );
    assert_eq!(
        RunConfig::load(&root.join("ddsd_default.toml")).unwrap(),
        RunConfig::ddsd_default()
    );
    let round = RunConfig::ddsd_default().to_toml();
    assert_eq!(toml::from_str::<RunConfig>(&round).unwrap(), RunConfig::ddsd_default());
}

#[test]
fn config_validation() {
    let mut c = RunConfig::new(Task::Ks, OutputMode::BinaryTarget);
    assert!(c.validate().is_err());
    c = RunConfig::new(Task::Ddsd, OutputMode::BinaryTarget);
    c.ablate = vec!["no-tp".into(), "gib-tp".into()];
    assert!(c.validate().is_err());
    c.ablate = vec!["no-hc".into()];
    c.n = 4;
    assert!(c.validate().is_ok());
    assert!(!c.include_costs().unwrap());
    c.n = 0;
    assert!(c.validate().is_err());
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_nbest");
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        dir.path(),
        &[("three", "1", Some(&three_path_fixture())), ("missing", "0", None)],
    );
    let run = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let m = manifest.to_str().unwrap();
    assert_eq!(run(&["nbest", "--manifest", m, "--out", out, "--n", "2"]), Some(2));
    let good = write_manifest(&dir.path().join("g"), &[("three", "1", Some(&three_path_fixture()))]);
    assert_eq!(
        run(&["nbest", "--manifest", good.to_str().unwrap(), "--out", out]),
        Some(0)
    );
    assert_eq!(run(&["nbest", "--out", out]), Some(1));
    assert_eq!(run(&["prompt", "--out", out, "--ablate", "nope"]), Some(1));
    assert_eq!(
        run(&["prompt", "--out", out, "--task", "ks", "--output-mode", "scale_0_100"]),
        Some(1)
    );
}
