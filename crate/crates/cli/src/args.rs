use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use misattrib_core::corpus::Split;
use misattrib_core::evalrun::EvalMode;
use misattrib_core::gateway::CassetteMode;
use misattrib_core::label::Locale;
use misattrib_core::pairwise::SubsetRule;
use misattrib_core::workflow::{QcMode, Role};

#[derive(Debug, Parser)]
#[command(name = "misattrib", version, about = "Judge-model evaluation with fine-grained error attribution")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON store holding corpus, workflow state, runs and studies
    #[arg(long, global = true, env = "MISATTRIB_STORE", default_value = "misattrib-store.json")]
    pub store: PathBuf,
    /// master seed; every sampled decision derives from it
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = CassetteArg::Live)]
    pub cassette: CassetteArg,
    #[arg(long, global = true, default_value = "cassette.jsonl")]
    pub cassette_path: PathBuf,
    /// judge backend: gold-replay, programmed, flag-everything, or a configured profile
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// TOML file of `[[backend]]` profiles
    #[arg(long, global = true, env = "MISATTRIB_BACKENDS")]
    pub backends: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub locale: Option<LocaleArg>,
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Text)]
    pub report_format: ReportFormat,
    /// directory of prompt template overrides
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import items and gold labels (JSONL) or generate a fixture corpus
    Ingest(IngestArgs),
    /// Corpus statistics
    Stats,
    /// Run the judge over a split
    Judge(JudgeArgs),
    /// Run the judge with score-only prompts
    Ablate(JudgeArgs),
    /// Recompute a stored run's report from its raw judge output
    Metrics {
        #[arg(long)]
        run: String,
    },
    #[command(subcommand)]
    Workflow(WorkflowCommand),
    #[command(subcommand)]
    Pairwise(PairwiseCommand),
    /// Export fine-tuning records
    ExportSft(ExportSftArgs),
    /// Start the HTTP service
    Serve(ServeArgs),
    #[command(subcommand)]
    Taxonomy(TaxonomyCommand),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// generate a synthetic corpus instead of reading files
    #[arg(long, value_enum, conflicts_with_all = ["items", "gold"])]
    pub fixture: Option<Fixture>,
    /// item count for `--fixture gold`
    #[arg(long, default_value_t = 500)]
    pub size: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Fixture {
    /// full-size corpus with the reference dataset's split and category counts
    ReferenceShape,
    /// `--size` gold-labelled items in `--split`
    Gold,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 3)]
    pub replicates: u32,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// count abstentions as one false positive and one false negative
    #[arg(long)]
    pub strict_abstention: bool,
}

#[derive(Debug, Subcommand)]
pub enum WorkflowCommand {
    /// Register an annotator
    AddAnnotator {
        id: String,
        #[arg(value_enum)]
        role: RoleArg,
    },
    /// Create tasks for every item of a split, three base annotators each
    Assign {
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Partition all tasks into batches
    Partition {
        #[arg(long, default_value_t = 20)]
        batches: usize,
    },
    /// Draw the QC sample of a batch
    QcSample {
        #[arg(long)]
        batch: String,
        #[arg(long, value_enum, default_value_t = QcModeArg::Blind)]
        mode: QcModeArg,
    },
    /// Score a checker's verdicts (JSON object item_id -> {score, misattribution})
    Qc {
        #[arg(long)]
        batch: String,
        #[arg(long)]
        checker: String,
        #[arg(long)]
        verdicts: PathBuf,
    },
    /// Fleiss' kappa over accepted tasks
    Agreement,
    /// Copy accepted labels into the corpus as gold
    Publish,
    /// Raw annotations as JSONL
    ExportAnnotations {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PairwiseCommand {
    /// Build a blinded study from two stored runs
    Build {
        #[arg(long)]
        id: String,
        #[arg(long)]
        run_a: String,
        #[arg(long)]
        run_b: String,
        #[arg(long, value_enum, default_value_t = SubsetArg::Misattributed)]
        subset: SubsetArg,
    },
    /// Win rates of a study
    Aggregate {
        #[arg(long)]
        id: String,
    },
}

#[derive(Debug, Args)]
pub struct ExportSftArgs {
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// score-only targets
    #[arg(long)]
    pub strip_misattribution: bool,
    /// JSONL output; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// also write the trainer configuration document here
    #[arg(long)]
    pub trainer_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// token file, one `token annotator_id role` per line
    #[arg(long, env = "MISATTRIB_TOKENS")]
    pub tokens: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum TaxonomyCommand {
    /// Check the registry's structure and labels
    Validate {
        /// registry file; the bundled one when absent
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Print the bundled registry
    Show,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Markdown,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CassetteArg {
    Live,
    Record,
    Replay,
}

impl From<CassetteArg> for CassetteMode {
    fn from(v: CassetteArg) -> Self {
        match v {
            CassetteArg::Live => CassetteMode::Live,
            CassetteArg::Record => CassetteMode::Record,
            CassetteArg::Replay => CassetteMode::Replay,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LocaleArg {
    En,
    Zh,
}

impl From<LocaleArg> for Locale {
    fn from(v: LocaleArg) -> Self {
        match v {
            LocaleArg::En => Locale::En,
            LocaleArg::Zh => Locale::Zh,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(v: SplitArg) -> Self {
        match v {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Base,
    #[value(alias = "expert")]
    SeniorExpert,
}

impl From<RoleArg> for Role {
    fn from(v: RoleArg) -> Self {
        match v {
            RoleArg::Base => Role::Base,
            RoleArg::SeniorExpert => Role::SeniorExpert,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QcModeArg {
    Blind,
    Informed,
}

impl From<QcModeArg> for QcMode {
    fn from(v: QcModeArg) -> Self {
        match v {
            QcModeArg::Blind => QcMode::Blind,
            QcModeArg::Informed => QcMode::Informed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SubsetArg {
    Misattributed,
    All,
}

impl From<SubsetArg> for SubsetRule {
    fn from(v: SubsetArg) -> Self {
        match v {
            SubsetArg::Misattributed => SubsetRule::GoldMisattributed,
            SubsetArg::All => SubsetRule::All,
        }
    }
}

pub fn eval_mode(strip: bool) -> EvalMode {
    if strip {
        EvalMode::StripMisattribution
    } else {
        EvalMode::Full
    }
}
