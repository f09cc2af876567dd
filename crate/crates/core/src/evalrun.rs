//! Evaluation runs: render, invoke and parse a judge over a corpus split,
//! then score the judgments against gold.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusItem, Split};
use crate::gateway::{CassetteMode, Decoding, Gateway, GatewayError, JudgeBackend, DEFAULT_CONCURRENCY};
use crate::label::{Locale, Misattribution};
use crate::metrics::{
    correlation_triple, detection_metrics, multiclass_metrics, AbstentionMode, CorrelationTriple,
    DetectionReport, MulticlassReport, KENDALL_VARIANT,
};
use crate::parser::{detection_signal, parse_judgment, Grammar, Judgment, ParseOptions, UnknownCategoryPolicy};
use crate::seed::derive_seed;
use crate::taxonomy::Taxonomy;
use crate::templates::{TemplateError, TemplateName, TemplateSet};

pub const DEFAULT_REPLICATES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Full,
    /// score-only prompts and 2-line parsing; detection from `score < 3`
    StripMisattribution,
}

impl EvalMode {
    pub fn grammar(self) -> Grammar {
        match self {
            EvalMode::Full => Grammar::ThreeLine,
            EvalMode::StripMisattribution => Grammar::TwoLine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub backend: String,
    pub split: Split,
    /// restrict to one locale; `None` evaluates both
    #[serde(default)]
    pub locale: Option<Locale>,
    #[serde(default)]
    pub mode: EvalMode,
    pub concurrency: usize,
    pub replicates: u32,
    pub cassette_mode: CassetteMode,
    pub seed: u64,
    #[serde(default)]
    pub abstention: AbstentionMode,
    #[serde(default)]
    pub unknown_category: UnknownCategoryPolicy,
    #[serde(default)]
    pub decoding: Decoding,
}

impl EvalConfig {
    pub fn new(backend: impl Into<String>, split: Split) -> Self {
        EvalConfig {
            backend: backend.into(),
            split,
            locale: None,
            mode: EvalMode::Full,
            concurrency: DEFAULT_CONCURRENCY,
            replicates: DEFAULT_REPLICATES,
            cassette_mode: CassetteMode::Live,
            seed: 0,
            abstention: AbstentionMode::FnOnly,
            unknown_category: UnknownCategoryPolicy::Fallback,
            decoding: Decoding::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.replicates < 1 {
            return Err(EvalError::InvalidConfig("replicate count must be at least 1".into()));
        }
        if self.concurrency < 1 {
            return Err(EvalError::InvalidConfig("concurrency must be at least 1".into()));
        }
        self.decoding.validate().map_err(|e| EvalError::InvalidConfig(e.to_string()))
    }

    /// Sampling seed of replicate `r`.
    pub fn replicate_seed(&self, r: u32) -> u64 {
        derive_seed(self.seed, &["replicate", &r.to_string()])
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("item {0} has no gold label")]
    MissingGold(String),
    #[error("no items in the selected split")]
    EmptySplit,
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::MissingGold(_) => "MissingGold",
            EvalError::EmptySplit => "EmptySplit",
            EvalError::InvalidConfig(_) => "InvalidConfig",
            EvalError::Gateway(e) => e.code(),
            EvalError::Template(_) => "TemplateError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub code: String,
    pub message: String,
}

/// Raw judge output for one item in one replicate, with its parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub item_id: String,
    pub replicate: u32,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgment: Option<Judgment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<ParseFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub replicate: u32,
    pub seed: u64,
    pub n_items: u64,
    pub unparsable: u64,
    /// `None` when the correlation is undefined (see `correlation_error`)
    pub correlation: Option<CorrelationTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_error: Option<String>,
    pub detection: DetectionReport,
    /// parsed items whose detection came from the score alone
    pub detection_from_score: u64,
    /// absent in score-only mode
    pub multiclass: Option<MulticlassReport>,
}

/// Means over replicates of the headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: Option<f64>,
    pub micro_f1: Option<f64>,
    pub unparsable: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub template_checksum: String,
    pub taxonomy_version: String,
    pub kendall_variant: String,
    pub n_items: u64,
    pub multiclass_applicable: bool,
    pub replicates: Vec<ReplicateMetrics>,
    pub mean: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub report: EvalReport,
    pub outcomes: Vec<ItemOutcome>,
}

/// Shared, read-only inputs of a run.
pub struct EvalContext<'a> {
    pub corpus: &'a Corpus,
    pub taxonomy: &'a Taxonomy,
    pub templates: &'a TemplateSet,
    pub gateway: &'a Gateway,
    pub backend: &'a dyn JudgeBackend,
}

/// Items of the configured split and locale, sorted by id.
pub fn select_items<'a>(corpus: &'a Corpus, config: &EvalConfig) -> Result<Vec<&'a CorpusItem>, EvalError> {
    let mut items: Vec<&CorpusItem> = corpus
        .split(config.split)
        .filter(|i| config.locale.is_none_or(|l| l == i.locale))
        .collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    if items.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    if let Some(i) = items.iter().find(|i| corpus.gold(&i.id).is_none()) {
        return Err(EvalError::MissingGold(i.id.clone()));
    }
    Ok(items)
}

fn parse_options(config: &EvalConfig, locale: Locale) -> ParseOptions {
    ParseOptions::new(locale).grammar(config.mode.grammar()).unknown_category(config.unknown_category)
}

fn parse_outcome(
    item: &CorpusItem,
    replicate: u32,
    raw: String,
    config: &EvalConfig,
    taxonomy: &Taxonomy,
) -> ItemOutcome {
    let (judgment, parse_error) = match parse_judgment(&raw, parse_options(config, item.locale), taxonomy) {
        Ok(j) => (Some(j), None),
        Err(e) => (None, Some(ParseFailure { code: e.code().into(), message: e.to_string() })),
    };
    ItemOutcome { item_id: item.id.clone(), replicate, raw, judgment, parse_error }
}

pub fn run_evaluation(ctx: &EvalContext<'_>, config: &EvalConfig) -> Result<RunRecord, EvalError> {
    config.validate()?;
    let items = select_items(ctx.corpus, config)?;
    let mut prompts = Vec::with_capacity(items.len());
    for item in &items {
        let name = TemplateName::judge(item.locale, config.mode.grammar());
        prompts.push((name, ctx.templates.get(name).render(item)?));
    }

    let mut outcomes = Vec::with_capacity(items.len() * config.replicates as usize);
    for r in 0..config.replicates {
        let decoding = config.decoding.with_seed(config.replicate_seed(r));
        let slots: Vec<Mutex<Option<Result<String, GatewayError>>>> = items.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..config.concurrency.min(items.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let (name, prompt) = &prompts[i];
                    let res = ctx.gateway.invoke(ctx.backend, *name, prompt, &decoding, config.cassette_mode);
                    let failed = res.is_err();
                    *slots[i].lock().unwrap() = Some(res);
                    if failed {
                        next.store(items.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        for (item, slot) in items.iter().zip(slots) {
            match slot.into_inner().unwrap() {
                Some(Ok(raw)) => outcomes.push(parse_outcome(item, r, raw, config, ctx.taxonomy)),
                Some(Err(e)) => return Err(e.into()),
                None => {}
            }
        }
    }
    let report = assemble_report(ctx.corpus, ctx.taxonomy, ctx.templates, config, &items, &outcomes)?;
    Ok(RunRecord { run_id: run_id(config, &report.template_checksum), report, outcomes })
}

/// Score-only variant: forces `EvalMode::StripMisattribution`.
pub fn run_ablation(ctx: &EvalContext<'_>, config: &EvalConfig) -> Result<RunRecord, EvalError> {
    let mut c = config.clone();
    c.mode = EvalMode::StripMisattribution;
    run_evaluation(ctx, &c)
}

/// Re-parses stored raw output and rebuilds the report, so parser or
/// metric changes can be applied without calling the judge again.
pub fn recompute(
    record: &RunRecord,
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    templates: &TemplateSet,
) -> Result<RunRecord, EvalError> {
    let config = &record.report.config;
    let items = select_items(corpus, config)?;
    let outcomes: Vec<ItemOutcome> = record
        .outcomes
        .iter()
        .filter_map(|o| {
            let item = corpus.item(&o.item_id)?;
            Some(parse_outcome(item, o.replicate, o.raw.clone(), config, taxonomy))
        })
        .collect();
    let report = assemble_report(corpus, taxonomy, templates, config, &items, &outcomes)?;
    Ok(RunRecord { run_id: record.run_id.clone(), report, outcomes })
}

fn run_id(config: &EvalConfig, checksum: &str) -> String {
    let doc = serde_json::to_string(&(config, checksum)).expect("config serializes");
    format!("run-{}", &hex::encode(Sha256::digest(doc.as_bytes()))[..12])
}

fn assemble_report(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    templates: &TemplateSet,
    config: &EvalConfig,
    items: &[&CorpusItem],
    outcomes: &[ItemOutcome],
) -> Result<EvalReport, EvalError> {
    let multiclass_applicable = config.mode == EvalMode::Full;
    let mut replicates = Vec::new();
    for r in 0..config.replicates {
        let mut by_id: std::collections::BTreeMap<&str, &ItemOutcome> = std::collections::BTreeMap::new();
        for o in outcomes.iter().filter(|o| o.replicate == r) {
            by_id.insert(o.item_id.as_str(), o);
        }
        replicates.push(replicate_metrics(corpus, config, items, &by_id, r, multiclass_applicable)?);
    }
    let mean = summarize(&replicates);
    Ok(EvalReport {
        config: config.clone(),
        template_checksum: templates.checksum(),
        taxonomy_version: taxonomy.version().to_string(),
        kendall_variant: KENDALL_VARIANT.to_string(),
        n_items: items.len() as u64,
        multiclass_applicable,
        replicates,
        mean,
    })
}

fn replicate_metrics(
    corpus: &Corpus,
    config: &EvalConfig,
    items: &[&CorpusItem],
    outcomes: &std::collections::BTreeMap<&str, &ItemOutcome>,
    r: u32,
    multiclass_applicable: bool,
) -> Result<ReplicateMetrics, EvalError> {
    let mut judge_scores = Vec::new();
    let mut gold_scores = Vec::new();
    let mut gold_flags = Vec::new();
    let mut pred_flags = Vec::new();
    let mut from_score = 0u64;
    let mut gold_cats: Vec<Misattribution> = Vec::new();
    let mut pred_cats: Vec<Option<Misattribution>> = Vec::new();
    let mut unparsable = 0u64;

    for item in items {
        let gold = corpus.gold(&item.id).ok_or_else(|| EvalError::MissingGold(item.id.clone()))?;
        let judgment = outcomes.get(item.id.as_str()).and_then(|o| o.judgment.as_ref());
        match judgment {
            Some(j) => {
                judge_scores.push(j.score.value() as f64);
                gold_scores.push(gold.score.value() as f64);
                let signal = detection_signal(j);
                gold_flags.push(gold.has_error());
                pred_flags.push(signal.has_error);
                from_score += signal.from_score as u64;
            }
            None => unparsable += 1,
        }
        if multiclass_applicable && gold.has_error() {
            gold_cats.push(gold.misattribution);
            pred_cats.push(judgment.and_then(|j| j.misattribution));
        }
    }

    let (correlation, correlation_error) = match correlation_triple(&judge_scores, &gold_scores) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let detection = detection_metrics(&gold_flags, &pred_flags).expect("equal-length vectors");
    let multiclass = multiclass_applicable
        .then(|| multiclass_metrics(&gold_cats, &pred_cats, config.abstention).expect("equal-length vectors"));
    Ok(ReplicateMetrics {
        replicate: r,
        seed: config.replicate_seed(r),
        n_items: items.len() as u64,
        unparsable,
        correlation,
        correlation_error,
        detection,
        detection_from_score: from_score,
        multiclass,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    let v = v?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(reps: &[ReplicateMetrics]) -> MetricSummary {
    let n = reps.len().max(1) as f64;
    let avg = |f: &dyn Fn(&ReplicateMetrics) -> f64| reps.iter().map(f).sum::<f64>() / n;
    MetricSummary {
        pearson: mean_of(reps.iter().map(|r| r.correlation.as_ref().map(|c| c.pearson))),
        spearman: mean_of(reps.iter().map(|r| r.correlation.as_ref().map(|c| c.spearman))),
        kendall_tau: mean_of(reps.iter().map(|r| r.correlation.as_ref().map(|c| c.kendall_tau))),
        precision: avg(&|r| r.detection.precision),
        recall: avg(&|r| r.detection.recall),
        f1: avg(&|r| r.detection.f1),
        accuracy: mean_of(reps.iter().map(|r| r.multiclass.as_ref().map(|m| m.accuracy))),
        micro_f1: mean_of(reps.iter().map(|r| r.multiclass.as_ref().map(|m| m.micro_f1))),
        unparsable: avg(&|r| r.unparsable as f64),
    }
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

impl EvalReport {
    /// Plain-text report: configuration, then per-replicate and mean values.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(s, "backend: {}", c.backend);
        let _ = writeln!(s, "split: {}", c.split);
        let _ = writeln!(s, "locale: {}", c.locale.map(|l| l.as_str()).unwrap_or("all"));
        let _ = writeln!(s, "mode: {}", match c.mode {
            EvalMode::Full => "full",
            EvalMode::StripMisattribution => "strip_misattribution",
        });
        let _ = writeln!(s, "replicates: {}", c.replicates);
        let _ = writeln!(s, "seed: {}", c.seed);
        let _ = writeln!(
            s,
            "decoding: temperature={} top_p={} top_k={} repetition_penalty={}",
            c.decoding.temperature, c.decoding.top_p, c.decoding.top_k, c.decoding.repetition_penalty
        );
        let _ = writeln!(s, "template checksum: {}", self.template_checksum);
        let _ = writeln!(s, "taxonomy version: {}", self.taxonomy_version);
        let _ = writeln!(s, "kendall variant: {}", self.kendall_variant);
        let _ = writeln!(s, "items: {}", self.n_items);
        for r in &self.replicates {
            let _ = writeln!(s, "replicate {} (seed {}):", r.replicate, r.seed);
            let _ = writeln!(s, "  unparsable: {}", r.unparsable);
            match &r.correlation {
                Some(cor) => {
                    let _ = writeln!(
                        s,
                        "  pearson {:.4} spearman {:.4} kendall {:.4} (n={})",
                        cor.pearson, cor.spearman, cor.kendall_tau, cor.n
                    );
                }
                None => {
                    let _ = writeln!(s, "  correlation undefined: {}", r.correlation_error.as_deref().unwrap_or(""));
                }
            }
            let d = &r.detection;
            let _ = writeln!(
                s,
                "  detection tp={} fp={} fn={} tn={} precision {:.4} recall {:.4} f1 {:.4}",
                d.tp, d.fp, d.fn_, d.tn, d.precision, d.recall, d.f1
            );
            if r.detection_from_score > 0 {
                let _ = writeln!(s, "  detection from score alone: {}", r.detection_from_score);
            }
            match &r.multiclass {
                Some(m) => {
                    let _ = writeln!(
                        s,
                        "  multi-class n={} accuracy {:.4} micro-f1 {:.4} abstentions {} ({})",
                        m.n_evaluated, m.accuracy, m.micro_f1, m.abstentions, m.abstention_mode
                    );
                }
                None => {
                    let _ = writeln!(s, "  multi-class: not applicable");
                }
            }
        }
        let m = &self.mean;
        let _ = writeln!(s, "mean:");
        let _ = writeln!(s, "  pearson {} spearman {} kendall {}", fmt3(m.pearson), fmt3(m.spearman), fmt3(m.kendall_tau));
        let _ = writeln!(s, "  detection precision {:.3} recall {:.3} f1 {:.3}", m.precision, m.recall, m.f1);
        let _ = writeln!(s, "  multi-class accuracy {} micro-f1 {}", fmt3(m.accuracy), fmt3(m.micro_f1));
        let _ = writeln!(s, "  unparsable {:.2}", m.unparsable);
        s
    }

    /// Markdown tables: correlations, then detection and multi-class.
    pub fn to_markdown(&self) -> String {
        let m = &self.mean;
        let name = &self.config.backend;
        let mut s = String::new();
        let _ = writeln!(s, "| Model | Pearson | Spearman | Kendall |");
        let _ = writeln!(s, "|---|---|---|---|");
        let _ = writeln!(s, "| {name} | {} | {} | {} |", fmt3(m.pearson), fmt3(m.spearman), fmt3(m.kendall_tau));
        let _ = writeln!(s);
        let _ = writeln!(s, "| Model | Detection Precision | Detection Recall | Detection F1 | Multi-class Accuracy | Multi-class micro-F1 |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        let _ = writeln!(
            s,
            "| {name} | {:.3} | {:.3} | {:.3} | {} | {} |",
            m.precision,
            m.recall,
            m.f1,
            if self.multiclass_applicable { fmt3(m.accuracy) } else { "n/a".into() },
            if self.multiclass_applicable { fmt3(m.micro_f1) } else { "n/a".into() },
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Cassette;
    use crate::stubs::GoldReplayBackend;
    use crate::synth;
    use std::sync::Arc;

    #[test]
    fn gold_replay_is_perfect() {
        let corpus = synth::gold_fixture(120, 11);
        let taxonomy = Taxonomy::builtin();
        let templates = TemplateSet::builtin();
        let backend = GoldReplayBackend::new(&corpus, &templates, taxonomy.clone());
        let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
        let ctx = EvalContext { corpus: &corpus, taxonomy: &taxonomy, templates: &templates, gateway: &gateway, backend: &backend };
        let mut config = EvalConfig::new("gold-replay", Split::Test);
        config.replicates = 2;
        let rec = run_evaluation(&ctx, &config).unwrap();
        let m = &rec.report.mean;
        assert_eq!((m.pearson, m.spearman, m.kendall_tau), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert_eq!((m.accuracy, m.micro_f1), (Some(1.0), Some(1.0)));
        assert_eq!(rec.outcomes.len(), 2 * rec.report.n_items as usize);

        let again = recompute(&rec, &corpus, &taxonomy, &templates).unwrap();
        assert_eq!(again.report, rec.report);

        let abl = run_ablation(&ctx, &config).unwrap();
        assert!(!abl.report.multiclass_applicable);
        assert_eq!(abl.report.mean.f1, 1.0);
        assert!(abl.report.to_markdown().contains("n/a"));
    }

    #[test]
    fn record_replay_reports_are_identical() {
        let corpus = synth::gold_fixture(60, 2);
        let taxonomy = Taxonomy::builtin();
        let templates = TemplateSet::builtin();
        let backend = GoldReplayBackend::new(&corpus, &templates, taxonomy.clone());
        let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
        let ctx = EvalContext { corpus: &corpus, taxonomy: &taxonomy, templates: &templates, gateway: &gateway, backend: &backend };
        let mut config = EvalConfig::new("gold-replay", Split::Test);
        config.cassette_mode = CassetteMode::Record;
        let a = run_evaluation(&ctx, &config).unwrap();
        config.cassette_mode = CassetteMode::Replay;
        let b = run_evaluation(&ctx, &config).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        config.seed = 99;
        assert_eq!(run_evaluation(&ctx, &config).unwrap_err().code(), "CassetteMiss");
    }

    #[test]
    fn rejects_zero_replicates_and_missing_gold() {
        let mut corpus = synth::gold_fixture(10, 2);
        let taxonomy = Taxonomy::builtin();
        let templates = TemplateSet::builtin();
        let backend = GoldReplayBackend::new(&corpus, &templates, taxonomy.clone());
        let gateway = Gateway::new(Arc::new(Cassette::in_memory()));
        let mut config = EvalConfig::new("gold-replay", Split::Test);
        config.replicates = 0;
        {
            let ctx = EvalContext { corpus: &corpus, taxonomy: &taxonomy, templates: &templates, gateway: &gateway, backend: &backend };
            assert_eq!(run_evaluation(&ctx, &config).unwrap_err().code(), "InvalidConfig");
        }
        let mut item = corpus.split(Split::Test).next().unwrap().clone();
        item.id = "zz-no-gold".into();
        corpus.insert(item, None).unwrap();
        config.replicates = 1;
        let ctx = EvalContext { corpus: &corpus, taxonomy: &taxonomy, templates: &templates, gateway: &gateway, backend: &backend };
        assert_eq!(run_evaluation(&ctx, &config).unwrap_err().code(), "MissingGold");
    }
}
