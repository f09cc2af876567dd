mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use misattrib_core::corpus::{Corpus, Split};
use misattrib_core::evalrun::{recompute, run_ablation, run_evaluation, EvalConfig, EvalContext, EvalMode, RunRecord};
use misattrib_core::gateway::{Cassette, CassetteMode, Gateway, JudgeBackend};
use misattrib_core::label::Misattribution;
use misattrib_core::metrics::format_percent;
use misattrib_core::pairwise::{build_pairwise_study, Choice, SubsetRule};
use misattrib_core::parser::{parse_judgment, ParseOptions};
use misattrib_core::sft::{export_sft, TrainerConfig};
use misattrib_core::stubs::{ConfusionProgram, FlagEverythingJudge, GoldReplayBackend, ProgrammedJudge};
use misattrib_core::synth;
use misattrib_core::taxonomy::Taxonomy;
use misattrib_core::templates::TemplateSet;

struct Env {
    taxonomy: Taxonomy,
    templates: TemplateSet,
}

impl Env {
    fn new() -> Self {
        Env { taxonomy: Taxonomy::builtin(), templates: TemplateSet::builtin() }
    }

    fn run(&self, corpus: &Corpus, gateway: &Gateway, backend: &dyn JudgeBackend, config: &EvalConfig) -> RunRecord {
        let ctx = EvalContext { corpus, taxonomy: &self.taxonomy, templates: &self.templates, gateway, backend };
        run_evaluation(&ctx, config).unwrap()
    }
}

fn config(backend: &str, mode: CassetteMode) -> EvalConfig {
    let mut c = EvalConfig::new(backend, Split::Test);
    c.cassette_mode = mode;
    c.seed = 42;
    c
}

#[test]
fn programmed_judge_recovered_from_offline_replay() {
    let env = Env::new();
    let corpus = synth::gold_fixture(2000, 11);
    let judge = ProgrammedJudge::new(&corpus, &env.templates, env.taxonomy.clone(), ConfusionProgram::default(), 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("programmed.jsonl");

    let recorded = {
        let gateway = Gateway::new(Arc::new(Cassette::open(&path).unwrap()));
        env.run(&corpus, &gateway, &judge, &config(ProgrammedJudge::NAME, CassetteMode::Record))
    };

    let started = Instant::now();
    let gateway = Gateway::new(Arc::new(Cassette::open(&path).unwrap()));
    assert_eq!(gateway.cassette().len(), 6000);
    let replayed = env.run(&corpus, &gateway, &judge, &config(ProgrammedJudge::NAME, CassetteMode::Replay));
    assert!(started.elapsed() < Duration::from_secs(60));

    let mut same = replayed.report.clone();
    same.config.cassette_mode = CassetteMode::Record;
    assert_eq!(recorded.report.to_json(), same.to_json());
    let p = judge.program();
    for r in &replayed.report.replicates {
        assert!((r.detection.precision - p.precision).abs() <= 0.02, "{:?}", r.detection);
        assert!((r.detection.recall - p.recall).abs() <= 0.02, "{:?}", r.detection);
        let acc = r.multiclass.as_ref().unwrap().accuracy;
        assert!((acc - p.accuracy).abs() <= 0.02, "{acc}");
    }
}

#[test]
fn replay_without_recording_is_a_cassette_miss() {
    let env = Env::new();
    let corpus = synth::gold_fixture(10, 1);
    let judge = GoldReplayBackend::new(&corpus, &env.templates, env.taxonomy.clone());
    let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
    let ctx = EvalContext { corpus: &corpus, taxonomy: &env.taxonomy, templates: &env.templates, gateway: &gateway, backend: &judge };
    let err = run_evaluation(&ctx, &config(GoldReplayBackend::NAME, CassetteMode::Replay)).unwrap_err();
    assert_eq!(err.code(), "CassetteMiss");
}

#[test]
fn gold_replay_is_perfect() {
    let env = Env::new();
    let corpus = synth::gold_fixture(400, 3);
    let judge = GoldReplayBackend::new(&corpus, &env.templates, env.taxonomy.clone());
    let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
    let run = env.run(&corpus, &gateway, &judge, &config(GoldReplayBackend::NAME, CassetteMode::Live));
    for r in &run.report.replicates {
        let c = r.correlation.as_ref().unwrap();
        assert_eq!((c.pearson, c.spearman, c.kendall_tau), (1.0, 1.0, 1.0));
        assert_eq!((r.detection.precision, r.detection.recall, r.detection.f1), (1.0, 1.0, 1.0));
        let m = r.multiclass.as_ref().unwrap();
        assert_eq!((m.accuracy, m.micro_f1), (1.0, 1.0));
        assert_eq!(r.unparsable, 0);
    }
    assert_eq!(run.outcomes.len(), 1200);
}

#[test]
fn ablation_reproduces_flag_everything_shape() {
    let env = Env::new();
    let corpus = synth::gold_fixture(1000, 8);
    let judge = FlagEverythingJudge::new(&corpus, &env.templates, env.taxonomy.clone(), 2);
    let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
    let ctx = EvalContext { corpus: &corpus, taxonomy: &env.taxonomy, templates: &env.templates, gateway: &gateway, backend: &judge };
    let run = run_ablation(&ctx, &config(FlagEverythingJudge::NAME, CassetteMode::Live)).unwrap();
    assert_eq!(run.report.config.mode, EvalMode::StripMisattribution);
    assert!(!run.report.multiclass_applicable);
    for r in &run.report.replicates {
        assert!(r.detection.recall >= 0.99, "{:?}", r.detection);
        assert!(r.detection.precision < 0.5, "{:?}", r.detection);
        assert!(r.multiclass.is_none());
    }
    assert!(run.outcomes.iter().all(|o| o.judgment.as_ref().unwrap().misattribution.is_none()));
}

#[test]
fn recompute_reproduces_report() {
    let env = Env::new();
    let corpus = synth::gold_fixture(200, 4);
    let judge = ProgrammedJudge::new(&corpus, &env.templates, env.taxonomy.clone(), ConfusionProgram::default(), 1);
    let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
    let run = env.run(&corpus, &gateway, &judge, &config(ProgrammedJudge::NAME, CassetteMode::Live));
    let again = recompute(&run, &corpus, &env.taxonomy, &env.templates).unwrap();
    assert_eq!(run, again);
}

#[test]
fn sft_targets_reparse_to_gold() {
    let env = Env::new();
    let corpus = synth::gold_fixture_in(500, 21, Split::Train);
    let records = export_sft(&corpus, Split::Train, EvalMode::Full, &env.templates, &env.taxonomy).unwrap();
    assert_eq!(records.len(), 500);
    let mut ids: Vec<&str> = corpus.items().map(|i| i.id.as_str()).collect();
    ids.sort();
    for (id, rec) in ids.iter().zip(&records) {
        let item = corpus.item(id).unwrap();
        let gold = corpus.gold(id).unwrap();
        let j = parse_judgment(&rec.output, ParseOptions::new(item.locale), &env.taxonomy).unwrap();
        assert_eq!((j.score, j.misattribution, j.feedback.as_str()), (gold.score, Some(gold.misattribution), gold.feedback.as_str()));
        assert!(j.diagnostics.is_empty());
        assert!(rec.instruction.contains(&item.question));
    }
    let t = TrainerConfig::default();
    assert_eq!((t.learning_rate, t.warmup_ratio, t.batch_size, t.epochs, t.weight_decay), (1.0e-4, 0.1, 16, 2, 0.1));
    assert_eq!((t.temperature, t.top_p, t.top_k, t.repetition_penalty), (0.8, 0.8, 20, 1.03));
}

#[test]
fn stats_fixture_output() {
    let stats = synth::reference_shape_corpus(5).compute_stats().to_string();
    for line in [
        "total: 21,702",
        "train: 18,806",
        "test: 2,896",
        "misattributed: 8,026",
        "  Reasoning Capability: 4,839",
        "  Safety: 8",
        "  Reasoning: 6,335",
        "  Math: 4,965",
    ] {
        assert!(stats.lines().any(|l| l == line), "missing {line:?} in\n{stats}");
    }
}

/// First (wins, ties, losses) summing to `n` whose tie-excluding win rate
/// prints as `target`.
fn vote_split(n: u64, target: &str) -> (u64, u64, u64) {
    for ties in 0..n {
        let decided = n - ties;
        for wins in 0..=decided {
            if format_percent(wins as f64 / decided as f64) == target {
                return (wins, ties, decided - wins);
            }
        }
    }
    panic!("no split of {n} votes gives {target}");
}

#[test]
fn pairwise_study_over_test_misattributions() {
    let env = Env::new();
    let corpus = synth::reference_shape_corpus(9);
    let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
    let gold = GoldReplayBackend::new(&corpus, &env.templates, env.taxonomy.clone());
    let prog = ProgrammedJudge::new(&corpus, &env.templates, env.taxonomy.clone(), ConfusionProgram::default(), 3);
    let mut c = config(GoldReplayBackend::NAME, CassetteMode::Live);
    c.replicates = 1;
    let a = env.run(&corpus, &gateway, &gold, &c);
    c.backend = ProgrammedJudge::NAME.into();
    let b = env.run(&corpus, &gateway, &prog, &c);

    let study = build_pairwise_study("ab", &a, &b, &corpus, SubsetRule::GoldMisattributed, 5).unwrap();
    assert_eq!(study.tasks.len(), 949);
    assert!(study.tasks.iter().all(|t| !corpus.gold(&t.item_id).unwrap().misattribution.is_null()));
    for t in &study.tasks {
        let blinded = serde_json::to_string(&study.blinded(&t.item_id, &corpus).unwrap()).unwrap();
        assert!(!blinded.contains(GoldReplayBackend::NAME) && !blinded.contains(ProgrammedJudge::NAME));
    }

    for target in ["60.41%", "85.20%"] {
        let (w, t, l) = vote_split(949, target);
        let mut s = study.clone();
        let tasks = s.tasks.clone();
        for (i, task) in tasks.iter().enumerate() {
            let a_wins = if i < w as usize { Some(true) } else if i < (w + l) as usize { Some(false) } else { None };
            let choice = match a_wins {
                None => Choice::Tie,
                Some(a) if a == task.a_is_left => Choice::Left,
                Some(_) => Choice::Right,
            };
            assert!(s.record_vote(&task.item_id, "rater-1", choice).unwrap());
        }
        let r = s.report().unwrap();
        assert_eq!((r.wins, r.ties, r.losses), (w, t, l));
        assert_eq!(format_percent(r.win_rate_excl_ties), target);
        assert!(r.to_string().contains(&format!("win-rate excl. ties {target}")));
    }
}

#[test]
fn gold_fixture_uses_every_category() {
    let corpus = synth::gold_fixture(2000, 11);
    let used: std::collections::BTreeSet<_> =
        corpus.gold_labels().filter_map(|g| match g.misattribution { Misattribution::Category(c) => Some(c), _ => None }).collect();
    assert_eq!(used.len(), 15);
}

mod blinding {
    use super::*;
    use proptest::prelude::*;

    fn runs() -> (Corpus, RunRecord, RunRecord) {
        let env = Env::new();
        let corpus = synth::gold_fixture(40, 6);
        let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
        let gold = GoldReplayBackend::new(&corpus, &env.templates, env.taxonomy.clone());
        let prog = ProgrammedJudge::new(&corpus, &env.templates, env.taxonomy.clone(), ConfusionProgram::default(), 2);
        let mut c = config(GoldReplayBackend::NAME, CassetteMode::Live);
        c.replicates = 1;
        let a = env.run(&corpus, &gateway, &gold, &c);
        c.backend = ProgrammedJudge::NAME.into();
        let b = env.run(&corpus, &gateway, &prog, &c);
        (corpus, a, b)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn blinded_payloads_never_name_a_system(name_a in "sys-[a-z0-9]{6,12}", name_b in "sys-[a-z0-9]{6,12}", seed in any::<u64>()) {
            prop_assume!(name_a != name_b);
            let (corpus, mut a, mut b) = runs();
            a.report.config.backend = name_a.clone();
            b.report.config.backend = name_b.clone();
            let study = build_pairwise_study("p", &a, &b, &corpus, SubsetRule::All, seed).unwrap();
            for t in &study.tasks {
                let json = serde_json::to_string(&study.blinded(&t.item_id, &corpus).unwrap()).unwrap();
                prop_assert!(!json.contains(&name_a) && !json.contains(&name_b));
            }
        }
    }
}
