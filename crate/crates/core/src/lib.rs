//! Judge-model evaluation with fine-grained error attribution.
//!
//! A judge reads a question, a model answer and a reference answer and
//! emits three lines: feedback, the misattribution category (or `NULL`),
//! and a 0–3 score. This crate holds the category registry, the corpus,
//! the judge gateway, the tolerant judgment parser, the metrics, the human
//! annotation workflow and the evaluation runner.

pub mod corpus;
pub mod evalrun;
pub mod gateway;
pub mod label;
pub mod metrics;
pub mod pairwise;
pub mod parser;
pub mod registry;
pub mod seed;
pub mod sft;
pub mod store;
pub mod stubs;
pub mod synth;
pub mod taxonomy;
pub mod templates;
pub mod workflow;

pub use corpus::{Corpus, CorpusError, CorpusItem, CorpusStats, GoldLabel, QuestionCategory, Split};
pub use evalrun::{run_ablation, run_evaluation, EvalConfig, EvalContext, EvalError, EvalMode, EvalReport, RunRecord};
pub use gateway::{BackendProfile, Cassette, CassetteMode, Decoding, Gateway, GatewayError, JudgeBackend};
pub use label::{Locale, Misattribution, Score};
pub use metrics::{
    AbstentionMode, CorrelationTriple, DetectionReport, MetricError, MulticlassReport, PairwiseReport, Vote,
};
pub use registry::resolve_backend;
pub use pairwise::{build_pairwise_study, BlindedTask, Choice, PairwiseStudy};
pub use parser::{parse_judgment, render_judgment, Grammar, Judgment, ParseError, ParseOptions};
pub use store::{FileStore, StoreState};
pub use taxonomy::{PrimaryCategory, SecondaryCategory, Taxonomy};
pub use templates::{TemplateName, TemplateSet};
pub use workflow::{AnnotationTask, Role, TaskState, WorkflowError, WorkflowState};
