mod args;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{CommandFactory, Parser};
use misattrib_core::corpus::{ImportOutcome, Split};
use misattrib_core::evalrun::{recompute, run_evaluation, EvalConfig, EvalContext, EvalMode, EvalReport};
use misattrib_core::gateway::{BackendConfig, Cassette, Gateway};
use misattrib_core::metrics::AbstentionMode;
use misattrib_core::pairwise::build_pairwise_study;
use misattrib_core::registry::resolve_backend;
use misattrib_core::seed::derive_seed;
use misattrib_core::sft::{export_sft, to_jsonl, TrainerConfig};
use misattrib_core::store::{FileStore, StoreState};
use misattrib_core::taxonomy::Taxonomy;
use misattrib_core::templates::TemplateSet;
use misattrib_core::workflow::QcVerdict;
use misattrib_core::synth;
use misattrib_server::{AppState, TokenTable};

use args::*;

/// stdout writes that tolerate a closed pipe
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

/// An operational failure: a machine-readable code and a message.
#[derive(Debug)]
struct CliError {
    code: String,
    message: String,
}

impl CliError {
    fn new(code: impl Into<String>, message: impl Display) -> Self {
        CliError { code: code.into(), message: message.to_string() }
    }
}

macro_rules! coded_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new(e.code(), &e)
            }
        }
    )*};
}

coded_error!(
    misattrib_core::evalrun::EvalError,
    misattrib_core::gateway::GatewayError,
    misattrib_core::workflow::WorkflowError,
    misattrib_core::pairwise::PairwiseError,
    misattrib_core::sft::SftError,
    misattrib_core::corpus::CorpusError,
    misattrib_core::metrics::MetricError
);

impl From<misattrib_core::store::StoreError> for CliError {
    fn from(e: misattrib_core::store::StoreError) -> Self {
        CliError::new("StoreError", e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("IoError", e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Session {
    global: Global,
    file: FileStore,
}

impl Session {
    fn load(&self) -> Result<StoreState> {
        Ok(self.file.load()?)
    }

    fn save(&self, state: &StoreState) -> Result<()> {
        Ok(self.file.save(state)?)
    }

    fn templates(&self) -> Result<TemplateSet> {
        match &self.global.templates {
            Some(dir) => TemplateSet::from_dir(dir).map_err(|e| CliError::new("TemplateError", e)),
            None => Ok(TemplateSet::builtin()),
        }
    }

    fn backends(&self) -> Result<Option<BackendConfig>> {
        self.global.backends.as_ref().map(BackendConfig::from_path).transpose().map_err(CliError::from)
    }
}

fn usage_error(message: &str) -> ! {
    Cli::command().error(clap::error::ErrorKind::MissingRequiredArgument, message).exit()
}

fn print_report(report: &EvalReport, format: ReportFormat) {
    match format {
        ReportFormat::Text => out!("{}", report.to_text()),
        ReportFormat::Markdown => out!("{}", report.to_markdown()),
        ReportFormat::Json => outln!("{}", report.to_json()),
    }
}

fn print_value<T: serde::Serialize + Display>(value: &T, format: ReportFormat) {
    match format {
        ReportFormat::Json => outln!("{}", serde_json::to_string_pretty(value).expect("value serializes")),
        _ => outln!("{value}"),
    }
}

fn report_import(what: &str, outcome: &ImportOutcome) {
    eprintln!(
        "{what}: {} accepted, {} unchanged, {} rejected",
        outcome.accepted,
        outcome.unchanged,
        outcome.rejections.len()
    );
    for r in &outcome.rejections {
        eprintln!("  line {}: {} ({})", r.line, r.error, r.error.code());
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::new("IoError", format!("{}: {e}", path.display())))
}

fn ingest(s: &Session, a: &IngestArgs) -> Result<()> {
    let mut state = s.load()?;
    let fixture = match a.fixture {
        Some(Fixture::ReferenceShape) => Some(synth::reference_shape_corpus(s.global.seed)),
        Some(Fixture::Gold) => Some(synth::gold_fixture_in(a.size, s.global.seed, a.split.into())),
        None => None,
    };
    match fixture {
        Some(f) => {
            for item in f.items() {
                state.corpus.insert(item.clone(), f.gold(&item.id).cloned())?;
            }
        }
        None => {
            if a.items.is_none() && a.gold.is_none() {
                usage_error("ingest needs --items, --gold or --fixture");
            }
            if let Some(p) = &a.items {
                report_import("items", &state.corpus.import_items(open(p)?)?);
            }
            if let Some(p) = &a.gold {
                report_import("gold", &state.corpus.import_gold(open(p)?)?);
            }
        }
    }
    eprintln!("corpus now holds {} items", state.corpus.len());
    s.save(&state)
}

fn judge(s: &Session, a: &JudgeArgs, mode: EvalMode) -> Result<()> {
    let Some(backend_name) = s.global.backend.clone() else { usage_error("--backend is required") };
    let mut state = s.load()?;
    let taxonomy = Taxonomy::builtin();
    let templates = s.templates()?;
    let mut config = EvalConfig::new(backend_name, a.split.into());
    config.locale = s.global.locale.map(Into::into);
    config.mode = mode;
    config.concurrency = a.concurrency;
    config.replicates = a.replicates;
    config.cassette_mode = s.global.cassette.into();
    config.seed = s.global.seed;
    if a.strict_abstention {
        config.abstention = AbstentionMode::Strict;
    }
    let backends = s.backends()?;
    let backend = resolve_backend(
        &config.backend,
        &state.corpus,
        &templates,
        &taxonomy,
        config.seed,
        backends.as_ref(),
        config.cassette_mode,
    )?;
    let cassette = Cassette::open(&s.global.cassette_path)?;
    let gateway = Gateway::new(Arc::new(cassette)).with_concurrency(a.concurrency.max(1));
    let ctx = EvalContext { corpus: &state.corpus, taxonomy: &taxonomy, templates: &templates, gateway: &gateway, backend: backend.as_ref() };
    let record = run_evaluation(&ctx, &config)?;
    print_report(&record.report, s.global.report_format);
    eprintln!("stored run {}", record.run_id);
    state.runs.insert(record.run_id.clone(), record);
    s.save(&state)
}

fn metrics(s: &Session, run: &str) -> Result<()> {
    let mut state = s.load()?;
    let record = state.runs.get(run).ok_or_else(|| CliError::new("UnknownRun", format!("no run {run}")))?;
    let again = recompute(record, &state.corpus, &Taxonomy::builtin(), &s.templates()?)?;
    print_report(&again.report, s.global.report_format);
    state.runs.insert(run.to_string(), again);
    s.save(&state)
}

fn workflow(s: &Session, cmd: &WorkflowCommand) -> Result<()> {
    let mut state = s.load()?;
    let format = s.global.report_format;
    match cmd {
        WorkflowCommand::AddAnnotator { id, role } => state.workflow.add_annotator(id.clone(), (*role).into()),
        WorkflowCommand::Assign { split } => {
            let split: Split = (*split).into();
            let ids: Vec<String> = state.corpus.split(split).map(|i| i.id.clone()).collect();
            let n = state.workflow.auto_assign(&ids, derive_seed(s.global.seed, &["assign"]))?;
            outln!("created {n} tasks");
        }
        WorkflowCommand::Partition { batches } => {
            for id in state.workflow.partition(*batches)? {
                outln!("{id}: {} tasks", state.workflow.batch(&id)?.task_ids.len());
            }
        }
        WorkflowCommand::QcSample { batch, mode } => {
            let seed = derive_seed(s.global.seed, &["qc", batch]);
            for id in &state.workflow.start_qc(batch, seed, (*mode).into())?.qc_sample {
                outln!("{id}");
            }
        }
        WorkflowCommand::Qc { batch, checker, verdicts } => {
            let text = std::fs::read_to_string(verdicts)?;
            let verdicts: BTreeMap<String, QcVerdict> =
                serde_json::from_str(&text).map_err(|e| CliError::new("MalformedRecord", e))?;
            let report = state.workflow.submit_qc_verdicts(batch, checker, &verdicts)?;
            match format {
                ReportFormat::Json => outln!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
                _ => outln!(
                    "{}: {}/{} matched ({:.2}%), {}",
                    report.batch_id,
                    report.matches,
                    report.sample.len(),
                    report.accuracy * 100.0,
                    if report.passed { "passed" } else { "failed, tasks returned for re-annotation" }
                ),
            }
        }
        WorkflowCommand::Agreement => print_value(&state.workflow.agreement_report()?, format),
        WorkflowCommand::Publish => {
            let n = state.workflow.publish_gold(&mut state.corpus)?;
            outln!("published {n} gold labels");
        }
        WorkflowCommand::ExportAnnotations { out } => {
            let mut text = state.workflow.export_raw_annotations().join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            write_output(out.as_deref(), &text)?;
        }
    }
    s.save(&state)
}

fn pairwise(s: &Session, cmd: &PairwiseCommand) -> Result<()> {
    let mut state = s.load()?;
    match cmd {
        PairwiseCommand::Build { id, run_a, run_b, subset } => {
            let get = |r: &str| state.runs.get(r).ok_or_else(|| CliError::new("UnknownRun", format!("no run {r}")));
            let seed = derive_seed(s.global.seed, &["pairwise", id]);
            let study = build_pairwise_study(id.clone(), get(run_a)?, get(run_b)?, &state.corpus, (*subset).into(), seed)?;
            outln!("study {id}: {} tasks", study.tasks.len());
            state.studies.insert(id.clone(), study);
            s.save(&state)
        }
        PairwiseCommand::Aggregate { id } => {
            let study = state.studies.get(id).ok_or_else(|| CliError::new("UnknownStudy", format!("no study {id}")))?;
            print_value(&study.report()?, s.global.report_format);
            Ok(())
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn export(s: &Session, a: &ExportSftArgs) -> Result<()> {
    let state = s.load()?;
    let records = export_sft(&state.corpus, a.split.into(), eval_mode(a.strip_misattribution), &s.templates()?, &Taxonomy::builtin())?;
    write_output(a.out.as_deref(), &to_jsonl(&records))?;
    if let Some(p) = &a.trainer_config {
        std::fs::write(p, TrainerConfig::default().to_document())?;
    }
    eprintln!("exported {} records", records.len());
    Ok(())
}

fn serve(s: &Session, a: &ServeArgs) -> Result<()> {
    let tokens = TokenTable::load(&a.tokens).map_err(|e| CliError::new("InvalidTokenFile", e))?;
    let mut app = AppState::new(s.load()?, tokens).with_file(s.file.clone()).with_templates(s.templates()?);
    if let Some(b) = s.backends()? {
        app = app.with_backends(b);
    }
    let gateway = Gateway::new(Arc::new(Cassette::open(&s.global.cassette_path)?));
    let app = Arc::new(app.with_gateway(Arc::new(gateway)));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        misattrib_server::serve(listener, app).await
    })?;
    Ok(())
}

fn taxonomy(cmd: &TaxonomyCommand, format: ReportFormat) -> Result<()> {
    match cmd {
        TaxonomyCommand::Show => {
            out!("{}", Taxonomy::builtin_source());
            Ok(())
        }
        TaxonomyCommand::Validate { file } => {
            let t = match file {
                Some(p) => Taxonomy::from_path(p).map_err(|e| CliError::new("InvalidTaxonomy", e))?,
                None => Taxonomy::builtin(),
            };
            let report = t.validate();
            if format == ReportFormat::Json {
                outln!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for v in &report.violations {
                    outln!("{:?}: {}", v.kind, v.message);
                }
            }
            if report.is_valid() {
                let n = t.descriptors().len();
                outln!("taxonomy {} is valid: {} first-level, {n} second-level categories", report.version, t.primaries().len());
                Ok(())
            } else {
                Err(CliError::new("InvalidTaxonomy", format!("{} violation(s)", report.violations.len())))
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let s = Session { file: FileStore::new(&cli.global.store), global: cli.global };
    match &cli.command {
        Command::Ingest(a) => ingest(&s, a),
        Command::Stats => {
            let stats = s.load()?.corpus.compute_stats();
            match s.global.report_format {
                ReportFormat::Json => outln!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize")),
                _ => out!("{stats}"),
            }
            Ok(())
        }
        Command::Judge(a) => judge(&s, a, EvalMode::Full),
        Command::Ablate(a) => judge(&s, a, EvalMode::StripMisattribution),
        Command::Metrics { run } => metrics(&s, run),
        Command::Workflow(cmd) => workflow(&s, cmd),
        Command::Pairwise(cmd) => pairwise(&s, cmd),
        Command::ExportSft(a) => export(&s, a),
        Command::Serve(a) => serve(&s, a),
        Command::Taxonomy(cmd) => taxonomy(cmd, s.global.report_format),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            ExitCode::from(1)
        }
    }
}
