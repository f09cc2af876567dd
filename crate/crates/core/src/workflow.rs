//! Human annotation lifecycle: triple annotation, expert adjudication,
//! batch partitioning, sampled quality control and re-annotation.
//!
//! ```text
//! Pending ─► PartiallyAnnotated ─► Unanimous ─┐
//!                                └► Disagreement ┴─(expert)─► Accepted
//! Accepted ─(batch fails QC)─► ReAnnotation ─► PartiallyAnnotated ...
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, CorpusItem, GoldLabel};
use crate::gateway::{CassetteMode, Decoding, Gateway, GatewayError, JudgeBackend};
use crate::label::{is_consistent, Misattribution, Score};
use crate::metrics::{fleiss_kappa, MetricError};
use crate::seed::{rng, stable_hash};
use crate::taxonomy::SECONDARY_CARDINALITY;
use crate::templates::{TemplateError, TemplateName, TemplateSet};

pub const ANNOTATORS_PER_TASK: usize = 3;
pub const DEFAULT_BATCH_COUNT: usize = 20;
/// QC samples `ceil(QC_SAMPLE_PERCENT% · n)` tasks per batch.
pub const QC_SAMPLE_PERCENT: usize = 30;
/// A batch passes when at least this share (in percent) of sampled tasks match.
pub const QC_PASS_PERCENT: u64 = 98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Base,
    SeniorExpert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub id: String,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    PartiallyAnnotated,
    Unanimous,
    Disagreement,
    Accepted,
    ReAnnotation,
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator_id: String,
    pub score: Score,
    pub misattribution: Misattribution,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedLabel {
    pub score: Score,
    pub misattribution: Misattribution,
    pub adjudicator: String,
    /// true when the expert's label differs from at least one annotation
    pub overridden: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackStatus {
    PendingVerification,
    Verified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackDraft {
    pub text: String,
    pub status: FeedbackStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Created { assigned: Vec<String> },
    Annotated { annotator: String, score: Score, misattribution: Misattribution, timestamp: u64 },
    Adjudicated { expert: String, score: Score, misattribution: Misattribution, overridden: bool, timestamp: u64 },
    QcChecked { batch: String, checker: String, matched: bool },
    ResetForReAnnotation { batch: String, round: u32 },
    FeedbackDrafted,
    FeedbackVerified { expert: String, edited: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub item_id: String,
    pub assigned: Vec<String>,
    pub annotations: Vec<Annotation>,
    pub state: TaskState,
    pub resolved: Option<ResolvedLabel>,
    /// 0 for the first pass, incremented on every re-annotation
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackDraft>,
    pub audit: Vec<AuditEvent>,
}

impl AnnotationTask {
    fn is_open_for_annotation(&self) -> bool {
        matches!(self.state, TaskState::Pending | TaskState::PartiallyAnnotated | TaskState::ReAnnotation)
    }

    /// The common label when all three annotations agree.
    pub fn unanimous_label(&self) -> Option<(Score, Misattribution)> {
        let first = self.annotations.first()?;
        (self.annotations.len() == ANNOTATORS_PER_TASK
            && self.annotations.iter().all(|a| a.score == first.score && a.misattribution == first.misattribution))
            .then_some((first.score, first.misattribution))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchState {
    Open,
    UnderQc,
    Passed,
    FailedQc,
}

/// Whether the checker sees the accepted label before giving a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcMode {
    #[default]
    Blind,
    Informed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: String,
    pub task_ids: Vec<String>,
    pub state: BatchState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qc_seed: Option<u64>,
    #[serde(default)]
    pub qc_sample: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qc_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qc_matches: Option<u64>,
    #[serde(default)]
    pub qc_mode: QcMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker: Option<String>,
}

impl Batch {
    fn new(batch_id: String, task_ids: Vec<String>) -> Self {
        Batch {
            batch_id,
            task_ids,
            state: BatchState::Open,
            qc_seed: None,
            qc_sample: Vec::new(),
            qc_accuracy: None,
            qc_matches: None,
            qc_mode: QcMode::Blind,
            checker: None,
        }
    }
}

/// One QC verdict: the checker's own label for a sampled task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcVerdict {
    pub score: Score,
    pub misattribution: Misattribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub batch_id: String,
    pub seed: u64,
    pub sample: Vec<String>,
    pub matches: u64,
    pub accuracy: f64,
    pub passed: bool,
    /// always "exact match on (score, misattribution)"
    pub match_rule: String,
    pub mode: QcMode,
}

pub const QC_MATCH_RULE: &str = "exact match on (score, misattribution)";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkflowError {
    #[error("annotator {annotator} is not assigned to {item_id}")]
    NotAssigned { item_id: String, annotator: String },
    #[error("annotator {annotator} already annotated {item_id}")]
    DuplicateSubmission { item_id: String, annotator: String },
    #[error("score {score} is inconsistent with misattribution {misattribution}")]
    GoldConsistencyViolation { score: Score, misattribution: Misattribution },
    #[error("{0} is not a senior expert")]
    NotExpert(String),
    #[error("task {item_id} is {state}, which does not allow this operation")]
    WrongState { item_id: String, state: TaskState },
    #[error("batch {batch_id} has {pending} task(s) not yet accepted")]
    BatchNotComplete { batch_id: String, pending: usize },
    #[error("batch {0} has no tasks")]
    EmptyBatch(String),
    #[error("batch {batch_id} is not under QC")]
    BatchNotUnderQc { batch_id: String },
    #[error("checker {checker} adjudicated {item_id}")]
    CheckerIsAdjudicator { item_id: String, checker: String },
    #[error("no QC verdict for sampled task {0}")]
    MissingVerdict(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown batch {0}")]
    UnknownBatch(String),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("task {0} already exists")]
    TaskExists(String),
    #[error("a task needs exactly 3 distinct annotators")]
    InvalidAssignment,
    #[error("batch count must be at least 1")]
    InvalidBatchCount,
    #[error("not enough base annotators: need 3, have {0}")]
    NotEnoughAnnotators(usize),
}

impl WorkflowError {
    pub fn code(&self) -> &'static str {
        match self {
            WorkflowError::NotAssigned { .. } => "NotAssigned",
            WorkflowError::DuplicateSubmission { .. } => "DuplicateSubmission",
            WorkflowError::GoldConsistencyViolation { .. } => "GoldConsistencyViolation",
            WorkflowError::NotExpert(_) => "NotExpert",
            WorkflowError::WrongState { .. } => "WrongState",
            WorkflowError::BatchNotComplete { .. } => "BatchNotComplete",
            WorkflowError::EmptyBatch(_) => "EmptyBatch",
            WorkflowError::BatchNotUnderQc { .. } => "BatchNotUnderQc",
            WorkflowError::CheckerIsAdjudicator { .. } => "CheckerIsAdjudicator",
            WorkflowError::MissingVerdict(_) => "MissingVerdict",
            WorkflowError::UnknownTask(_) => "UnknownTask",
            WorkflowError::UnknownBatch(_) => "UnknownBatch",
            WorkflowError::UnknownAnnotator(_) => "UnknownAnnotator",
            WorkflowError::TaskExists(_) => "TaskExists",
            WorkflowError::InvalidAssignment => "InvalidAssignment",
            WorkflowError::InvalidBatchCount => "InvalidBatchCount",
            WorkflowError::NotEnoughAnnotators(_) => "NotEnoughAnnotators",
        }
    }
}

fn check_consistent(score: Score, m: Misattribution) -> Result<(), WorkflowError> {
    if is_consistent(score, m) {
        Ok(())
    } else {
        Err(WorkflowError::GoldConsistencyViolation { score, misattribution: m })
    }
}

/// `ceil(0.30 · n)` in integer arithmetic.
pub fn qc_sample_size(n: usize) -> usize {
    (n * QC_SAMPLE_PERCENT).div_ceil(100)
}

/// The 98% gate, evaluated exactly: `matches / sample ≥ 0.98`.
pub fn qc_gate(matches: u64, sample: u64) -> bool {
    sample > 0 && matches * 100 >= QC_PASS_PERCENT * sample
}

pub fn batch_id(index: usize) -> String {
    format!("batch-{index:02}")
}

/// Deterministic partition of `ids` into `n_batches` buckets by stable hash.
pub fn partition_batches(ids: &[String], n_batches: usize) -> Result<Vec<Batch>, WorkflowError> {
    if n_batches == 0 {
        return Err(WorkflowError::InvalidBatchCount);
    }
    let mut buckets: Vec<Vec<String>> = vec![Vec::new(); n_batches];
    let unique: BTreeSet<&String> = ids.iter().collect();
    for id in unique {
        buckets[(stable_hash(id) % n_batches as u64) as usize].push(id.clone());
    }
    Ok(buckets.into_iter().enumerate().map(|(i, ids)| Batch::new(batch_id(i), ids)).collect())
}

/// Seeded QC sample: the first `ceil(0.3·n)` ids of a ChaCha8 shuffle of
/// the sorted task ids.
pub fn qc_sample(task_ids: &[String], batch_id: &str, seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = task_ids.to_vec();
    ids.sort();
    let mut r = rng(seed, &["qc", batch_id]);
    ids.shuffle(&mut r);
    ids.truncate(qc_sample_size(task_ids.len()));
    ids
}

/// Everything the workflow persists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    #[serde(default)]
    pub annotators: BTreeMap<String, AnnotatorProfile>,
    #[serde(default)]
    pub tasks: BTreeMap<String, AnnotationTask>,
    #[serde(default)]
    pub batches: BTreeMap<String, Batch>,
}

impl WorkflowState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_annotator(&mut self, id: impl Into<String>, role: Role) {
        let id = id.into();
        self.annotators.insert(id.clone(), AnnotatorProfile { id, role });
    }

    pub fn annotator(&self, id: &str) -> Result<&AnnotatorProfile, WorkflowError> {
        self.annotators.get(id).ok_or_else(|| WorkflowError::UnknownAnnotator(id.to_string()))
    }

    fn require_expert(&self, id: &str) -> Result<(), WorkflowError> {
        match self.annotators.get(id) {
            Some(p) if p.role == Role::SeniorExpert => Ok(()),
            _ => Err(WorkflowError::NotExpert(id.to_string())),
        }
    }

    pub fn task(&self, item_id: &str) -> Result<&AnnotationTask, WorkflowError> {
        self.tasks.get(item_id).ok_or_else(|| WorkflowError::UnknownTask(item_id.to_string()))
    }

    fn task_mut(&mut self, item_id: &str) -> Result<&mut AnnotationTask, WorkflowError> {
        self.tasks.get_mut(item_id).ok_or_else(|| WorkflowError::UnknownTask(item_id.to_string()))
    }

    pub fn batch(&self, batch_id: &str) -> Result<&Batch, WorkflowError> {
        self.batches.get(batch_id).ok_or_else(|| WorkflowError::UnknownBatch(batch_id.to_string()))
    }

    pub fn create_task(&mut self, item_id: impl Into<String>, assigned: [&str; 3]) -> Result<&AnnotationTask, WorkflowError> {
        let item_id = item_id.into();
        if self.tasks.contains_key(&item_id) {
            return Err(WorkflowError::TaskExists(item_id));
        }
        let distinct: BTreeSet<&str> = assigned.iter().copied().collect();
        if distinct.len() != ANNOTATORS_PER_TASK {
            return Err(WorkflowError::InvalidAssignment);
        }
        for a in assigned {
            self.annotator(a)?;
        }
        let assigned: Vec<String> = assigned.iter().map(|s| s.to_string()).collect();
        let task = AnnotationTask {
            item_id: item_id.clone(),
            audit: vec![AuditEvent::Created { assigned: assigned.clone() }],
            assigned,
            annotations: Vec::new(),
            state: TaskState::Pending,
            resolved: None,
            round: 0,
            batch: None,
            feedback: None,
        };
        Ok(self.tasks.entry(item_id).or_insert(task))
    }

    /// Creates tasks for `item_ids`, each assigned three distinct base
    /// annotators drawn with the seeded generator. Existing tasks are kept.
    pub fn auto_assign(&mut self, item_ids: &[String], seed: u64) -> Result<usize, WorkflowError> {
        let pool: Vec<String> =
            self.annotators.values().filter(|a| a.role == Role::Base).map(|a| a.id.clone()).collect();
        if pool.len() < ANNOTATORS_PER_TASK {
            return Err(WorkflowError::NotEnoughAnnotators(pool.len()));
        }
        let mut r = rng(seed, &["assign"]);
        let mut created = 0;
        let mut ids: Vec<&String> = item_ids.iter().collect();
        ids.sort();
        for id in ids {
            let pick: Vec<&String> = pool.choose_multiple(&mut r, ANNOTATORS_PER_TASK).collect();
            if self.tasks.contains_key(id.as_str()) {
                continue;
            }
            self.create_task(id.clone(), [pick[0], pick[1], pick[2]])?;
            created += 1;
        }
        Ok(created)
    }

    pub fn submit_annotation(
        &mut self,
        item_id: &str,
        annotator: &str,
        score: Score,
        misattribution: Misattribution,
        timestamp: u64,
    ) -> Result<&AnnotationTask, WorkflowError> {
        let task = self.task_mut(item_id)?;
        if !task.assigned.iter().any(|a| a == annotator) {
            return Err(WorkflowError::NotAssigned { item_id: item_id.into(), annotator: annotator.into() });
        }
        if task.annotations.iter().any(|a| a.annotator_id == annotator) {
            return Err(WorkflowError::DuplicateSubmission { item_id: item_id.into(), annotator: annotator.into() });
        }
        if !task.is_open_for_annotation() {
            return Err(WorkflowError::WrongState { item_id: item_id.into(), state: task.state });
        }
        check_consistent(score, misattribution)?;
        task.annotations.push(Annotation { annotator_id: annotator.into(), score, misattribution, timestamp });
        task.audit.push(AuditEvent::Annotated { annotator: annotator.into(), score, misattribution, timestamp });
        task.state = if task.annotations.len() < ANNOTATORS_PER_TASK {
            TaskState::PartiallyAnnotated
        } else if task.unanimous_label().is_some() {
            TaskState::Unanimous
        } else {
            TaskState::Disagreement
        };
        Ok(task)
    }

    /// Expert resolution; mandatory even for unanimous tasks.
    pub fn adjudicate(
        &mut self,
        item_id: &str,
        expert: &str,
        score: Score,
        misattribution: Misattribution,
        timestamp: u64,
    ) -> Result<&AnnotationTask, WorkflowError> {
        self.require_expert(expert)?;
        let task = self.task_mut(item_id)?;
        if !matches!(task.state, TaskState::Unanimous | TaskState::Disagreement) {
            return Err(WorkflowError::WrongState { item_id: item_id.into(), state: task.state });
        }
        check_consistent(score, misattribution)?;
        let overridden = task.annotations.iter().any(|a| a.score != score || a.misattribution != misattribution);
        task.resolved = Some(ResolvedLabel { score, misattribution, adjudicator: expert.into(), overridden });
        task.audit.push(AuditEvent::Adjudicated { expert: expert.into(), score, misattribution, overridden, timestamp });
        task.state = TaskState::Accepted;
        Ok(task)
    }

    /// Next task (by item id) that `annotator` still owes an annotation.
    pub fn next_task_for(&self, annotator: &str) -> Option<&AnnotationTask> {
        self.tasks.values().find(|t| {
            t.is_open_for_annotation()
                && t.assigned.iter().any(|a| a == annotator)
                && !t.annotations.iter().any(|a| a.annotator_id == annotator)
        })
    }

    pub fn adjudication_queue(&self) -> Vec<&AnnotationTask> {
        self.tasks.values().filter(|t| matches!(t.state, TaskState::Unanimous | TaskState::Disagreement)).collect()
    }

    /// Partitions every task not yet in a batch, replacing any previous
    /// open batches of the same ids.
    pub fn partition(&mut self, n_batches: usize) -> Result<Vec<String>, WorkflowError> {
        let ids: Vec<String> = self.tasks.keys().cloned().collect();
        let batches = partition_batches(&ids, n_batches)?;
        self.batches.clear();
        let mut names = Vec::new();
        for b in batches {
            for id in &b.task_ids {
                self.tasks.get_mut(id).unwrap().batch = Some(b.batch_id.clone());
            }
            names.push(b.batch_id.clone());
            self.batches.insert(b.batch_id.clone(), b);
        }
        Ok(names)
    }

    /// Draws the QC sample and moves the batch to `UnderQc`.
    pub fn start_qc(&mut self, batch_id: &str, seed: u64, mode: QcMode) -> Result<&Batch, WorkflowError> {
        let batch = self.batch(batch_id)?;
        if batch.task_ids.is_empty() {
            return Err(WorkflowError::EmptyBatch(batch_id.into()));
        }
        let pending = batch
            .task_ids
            .iter()
            .filter(|id| self.tasks.get(*id).is_none_or(|t| t.state != TaskState::Accepted))
            .count();
        if pending > 0 {
            return Err(WorkflowError::BatchNotComplete { batch_id: batch_id.into(), pending });
        }
        let sample = qc_sample(&batch.task_ids, batch_id, seed);
        let batch = self.batches.get_mut(batch_id).unwrap();
        batch.qc_seed = Some(seed);
        batch.qc_sample = sample;
        batch.qc_mode = mode;
        batch.qc_accuracy = None;
        batch.qc_matches = None;
        batch.state = BatchState::UnderQc;
        Ok(batch)
    }

    /// Scores the checker's verdicts against the accepted labels and applies
    /// the 98% gate. A failed batch sends every task back for re-annotation.
    pub fn submit_qc_verdicts(
        &mut self,
        batch_id: &str,
        checker: &str,
        verdicts: &BTreeMap<String, QcVerdict>,
    ) -> Result<QcReport, WorkflowError> {
        self.require_expert(checker)?;
        let batch = self.batch(batch_id)?;
        if batch.state != BatchState::UnderQc {
            return Err(WorkflowError::BatchNotUnderQc { batch_id: batch_id.into() });
        }
        let mut matches = 0u64;
        let mut outcomes = Vec::new();
        for id in &batch.qc_sample {
            let task = self.task(id)?;
            let resolved = task.resolved.as_ref().ok_or_else(|| WorkflowError::WrongState {
                item_id: id.clone(),
                state: task.state,
            })?;
            if resolved.adjudicator == checker {
                return Err(WorkflowError::CheckerIsAdjudicator { item_id: id.clone(), checker: checker.into() });
            }
            let v = verdicts.get(id).ok_or_else(|| WorkflowError::MissingVerdict(id.clone()))?;
            let matched = v.score == resolved.score && v.misattribution == resolved.misattribution;
            matches += matched as u64;
            outcomes.push((id.clone(), matched));
        }
        let n = batch.qc_sample.len() as u64;
        let passed = qc_gate(matches, n);
        let report = QcReport {
            batch_id: batch_id.into(),
            seed: batch.qc_seed.unwrap_or_default(),
            sample: batch.qc_sample.clone(),
            matches,
            accuracy: matches as f64 / n as f64,
            passed,
            match_rule: QC_MATCH_RULE.into(),
            mode: batch.qc_mode,
        };
        let task_ids = batch.task_ids.clone();
        for (id, matched) in outcomes {
            let t = self.tasks.get_mut(&id).unwrap();
            t.audit.push(AuditEvent::QcChecked { batch: batch_id.into(), checker: checker.into(), matched });
        }
        if !passed {
            for id in &task_ids {
                let t = self.tasks.get_mut(id).unwrap();
                t.round += 1;
                t.annotations.clear();
                t.resolved = None;
                t.state = TaskState::ReAnnotation;
                t.audit.push(AuditEvent::ResetForReAnnotation { batch: batch_id.into(), round: t.round });
            }
        }
        let batch = self.batches.get_mut(batch_id).unwrap();
        batch.qc_accuracy = Some(report.accuracy);
        batch.qc_matches = Some(matches);
        batch.checker = Some(checker.into());
        batch.state = if passed { BatchState::Passed } else { BatchState::FailedQc };
        Ok(report)
    }

    /// `start_qc` followed by `submit_qc_verdicts`.
    pub fn qc_run(
        &mut self,
        batch_id: &str,
        checker: &str,
        verdicts: &BTreeMap<String, QcVerdict>,
        seed: u64,
    ) -> Result<QcReport, WorkflowError> {
        self.require_expert(checker)?;
        self.start_qc(batch_id, seed, QcMode::Blind)?;
        self.submit_qc_verdicts(batch_id, checker, verdicts)
    }

    /// Stores generated feedback for an accepted task, pending expert review.
    pub fn draft_feedback(&mut self, item_id: &str, text: impl Into<String>) -> Result<(), WorkflowError> {
        let task = self.task_mut(item_id)?;
        if task.state != TaskState::Accepted {
            return Err(WorkflowError::WrongState { item_id: item_id.into(), state: task.state });
        }
        task.feedback = Some(FeedbackDraft { text: text.into(), status: FeedbackStatus::PendingVerification });
        task.audit.push(AuditEvent::FeedbackDrafted);
        Ok(())
    }

    /// Expert confirmation of drafted feedback, optionally with an edit.
    pub fn verify_feedback(&mut self, item_id: &str, expert: &str, edited: Option<String>) -> Result<(), WorkflowError> {
        self.require_expert(expert)?;
        let task = self.task_mut(item_id)?;
        let draft = task.feedback.as_mut().ok_or_else(|| WorkflowError::WrongState {
            item_id: item_id.into(),
            state: task.state,
        })?;
        let was_edited = edited.is_some();
        if let Some(text) = edited {
            draft.text = text;
        }
        draft.status = FeedbackStatus::Verified;
        task.audit.push(AuditEvent::FeedbackVerified { expert: expert.into(), edited: was_edited });
        Ok(())
    }

    /// Gold labels of accepted tasks. Feedback that is missing or still
    /// awaiting review is carried with `feedback_verified = false`.
    pub fn accepted_gold(&self) -> Vec<GoldLabel> {
        self.tasks
            .values()
            .filter(|t| t.state == TaskState::Accepted)
            .filter_map(|t| {
                let r = t.resolved.as_ref()?;
                let (feedback, verified) = match &t.feedback {
                    Some(d) => (d.text.clone(), d.status == FeedbackStatus::Verified),
                    None => (String::new(), false),
                };
                Some(GoldLabel {
                    item_id: t.item_id.clone(),
                    score: r.score,
                    misattribution: r.misattribution,
                    feedback,
                    feedback_verified: verified,
                })
            })
            .collect()
    }

    /// Writes accepted labels into the corpus as gold.
    pub fn publish_gold(&self, corpus: &mut Corpus) -> Result<usize, CorpusError> {
        let gold = self.accepted_gold();
        let n = gold.len();
        for g in gold {
            corpus.set_gold(g)?;
        }
        Ok(n)
    }

    /// Agreement over accepted tasks (each has exactly three annotations).
    pub fn agreement_report(&self) -> Result<AgreementReport, MetricError> {
        let triples: Vec<[(Score, Misattribution); 3]> = self
            .tasks
            .values()
            .filter(|t| t.state == TaskState::Accepted && t.annotations.len() == ANNOTATORS_PER_TASK)
            .map(|t| {
                let a = &t.annotations;
                [
                    (a[0].score, a[0].misattribution),
                    (a[1].score, a[1].misattribution),
                    (a[2].score, a[2].misattribution),
                ]
            })
            .collect();
        agreement_from_triples(&triples)
    }

    /// JSONL lines `{item_id, annotator_id, score, misattribution, timestamp}`.
    pub fn export_raw_annotations(&self) -> Vec<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            item_id: &'a str,
            annotator_id: &'a str,
            score: Score,
            misattribution: Misattribution,
            timestamp: u64,
        }
        self.tasks
            .values()
            .flat_map(|t| {
                t.annotations.iter().map(move |a| {
                    serde_json::to_string(&Row {
                        item_id: &t.item_id,
                        annotator_id: &a.annotator_id,
                        score: a.score,
                        misattribution: a.misattribution,
                        timestamp: a.timestamp,
                    })
                    .expect("annotation row serializes")
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_items: usize,
    pub raters_per_item: u64,
    pub score_kappa: f64,
    pub misattribution_kappa: f64,
}

impl fmt::Display for AgreementReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "items: {}", self.n_items)?;
        writeln!(f, "raters per item: {}", self.raters_per_item)?;
        writeln!(f, "fleiss kappa (score): {:.3}", self.score_kappa)?;
        write!(f, "fleiss kappa (misattribution): {:.3}", self.misattribution_kappa)
    }
}

/// Column of a misattribution in the 16-column agreement matrix (NULL last).
pub fn misattribution_column(m: Misattribution) -> usize {
    match m {
        Misattribution::Category(c) => c.index(),
        Misattribution::Null => SECONDARY_CARDINALITY,
    }
}

/// Item × category count matrices (4 score columns, 16 misattribution
/// columns) handed to Fleiss' kappa.
pub fn agreement_matrices(triples: &[[(Score, Misattribution); 3]]) -> (Vec<Vec<u64>>, Vec<Vec<u64>>) {
    let mut scores = Vec::with_capacity(triples.len());
    let mut cats = Vec::with_capacity(triples.len());
    for t in triples {
        let mut s = vec![0u64; 4];
        let mut c = vec![0u64; SECONDARY_CARDINALITY + 1];
        for (score, m) in t {
            s[score.value() as usize] += 1;
            c[misattribution_column(*m)] += 1;
        }
        scores.push(s);
        cats.push(c);
    }
    (scores, cats)
}

pub fn agreement_from_triples(triples: &[[(Score, Misattribution); 3]]) -> Result<AgreementReport, MetricError> {
    let (scores, cats) = agreement_matrices(triples);
    Ok(AgreementReport {
        n_items: triples.len(),
        raters_per_item: ANNOTATORS_PER_TASK as u64,
        score_kappa: fleiss_kappa(&scores, ANNOTATORS_PER_TASK as u64)?,
        misattribution_kappa: fleiss_kappa(&cats, ANNOTATORS_PER_TASK as u64)?,
    })
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

/// Renders the feedback-generation prompt for `item`, sends it through the
/// gateway and stores the reply as a draft awaiting expert verification.
#[allow(clippy::too_many_arguments)]
pub fn generate_feedback(
    state: &mut WorkflowState,
    item: &CorpusItem,
    templates: &TemplateSet,
    gateway: &Gateway,
    backend: &dyn JudgeBackend,
    decoding: &Decoding,
    mode: CassetteMode,
) -> Result<String, FeedbackError> {
    let prompt = templates.get(TemplateName::FeedbackGen).render(item)?;
    let text = gateway.invoke(backend, TemplateName::FeedbackGen, &prompt, decoding, mode)?;
    let text = text.trim().to_string();
    state.draft_feedback(&item.id, text.clone())?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::SecondaryCategory;

    fn s(v: u8) -> Score {
        Score::new(v).unwrap()
    }

    fn cat(c: SecondaryCategory) -> Misattribution {
        Misattribution::Category(c)
    }

    fn state() -> WorkflowState {
        let mut w = WorkflowState::new();
        for a in ["a1", "a2", "a3", "a4"] {
            w.add_annotator(a, Role::Base);
        }
        w.add_annotator("e1", Role::SeniorExpert);
        w.add_annotator("e2", Role::SeniorExpert);
        w.create_task("t1", ["a1", "a2", "a3"]).unwrap();
        w
    }

    #[test]
    fn unanimous_then_confirmed() {
        let mut w = state();
        for a in ["a1", "a2", "a3"] {
            w.submit_annotation("t1", a, s(2), cat(SecondaryCategory::ProcessError), 1).unwrap();
        }
        assert_eq!(w.task("t1").unwrap().state, TaskState::Unanimous);
        let t = w.adjudicate("t1", "e1", s(2), cat(SecondaryCategory::ProcessError), 2).unwrap();
        assert_eq!(t.state, TaskState::Accepted);
        assert!(!t.resolved.as_ref().unwrap().overridden);
    }

    #[test]
    fn disagreement_override() {
        let mut w = state();
        w.submit_annotation("t1", "a1", s(3), Misattribution::Null, 1).unwrap();
        w.submit_annotation("t1", "a2", s(3), Misattribution::Null, 1).unwrap();
        assert_eq!(w.task("t1").unwrap().state, TaskState::PartiallyAnnotated);
        w.submit_annotation("t1", "a3", s(2), cat(SecondaryCategory::Hallucination), 1).unwrap();
        assert_eq!(w.task("t1").unwrap().state, TaskState::Disagreement);
        let t = w.adjudicate("t1", "e1", s(1), cat(SecondaryCategory::IncorrectAnswers), 2).unwrap();
        assert!(t.resolved.as_ref().unwrap().overridden);
        assert!(matches!(t.audit.last(), Some(AuditEvent::Adjudicated { overridden: true, .. })));
    }

    #[test]
    fn submission_errors() {
        let mut w = state();
        for a in ["a1", "a2", "a3"] {
            w.submit_annotation("t1", a, s(3), Misattribution::Null, 1).unwrap();
        }
        let dup = w.submit_annotation("t1", "a1", s(3), Misattribution::Null, 1).unwrap_err();
        assert_eq!(dup.code(), "DuplicateSubmission");
        let na = w.submit_annotation("t1", "a4", s(3), Misattribution::Null, 1).unwrap_err();
        assert_eq!(na.code(), "NotAssigned");

        let mut w = state();
        let e = w.submit_annotation("t1", "a1", s(3), cat(SecondaryCategory::Typo), 1).unwrap_err();
        assert_eq!(e.code(), "GoldConsistencyViolation");
        let e = w.submit_annotation("t1", "a1", s(0), Misattribution::Null, 1).unwrap_err();
        assert_eq!(e.code(), "GoldConsistencyViolation");
        assert!(w.task("t1").unwrap().annotations.is_empty());
    }

    #[test]
    fn adjudication_guards() {
        let mut w = state();
        assert_eq!(w.adjudicate("t1", "e1", s(3), Misattribution::Null, 0).unwrap_err().code(), "WrongState");
        for a in ["a1", "a2", "a3"] {
            w.submit_annotation("t1", a, s(3), Misattribution::Null, 1).unwrap();
        }
        assert_eq!(w.adjudicate("t1", "a1", s(3), Misattribution::Null, 0).unwrap_err().code(), "NotExpert");
        assert_eq!(
            w.adjudicate("t1", "e1", s(3), cat(SecondaryCategory::Noisy), 0).unwrap_err().code(),
            "GoldConsistencyViolation"
        );
    }

    #[test]
    fn qc_arithmetic() {
        assert_eq!(qc_sample_size(20), 6);
        assert_eq!(qc_sample_size(200), 60);
        assert_eq!(qc_sample_size(1), 1);
        assert_eq!(qc_sample_size(0), 0);
        assert!(qc_gate(59, 60));
        assert!(!qc_gate(58, 60));
        assert!(qc_gate(49, 50));
        assert!(!qc_gate(0, 0));
    }

    #[test]
    fn partition_is_a_partition() {
        let ids: Vec<String> = (0..500).map(|i| format!("item-{i}")).collect();
        let a = partition_batches(&ids, 20).unwrap();
        let b = partition_batches(&ids, 20).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<String> = a.iter().flat_map(|b| b.task_ids.clone()).collect();
        all.sort();
        let mut expect = ids.clone();
        expect.sort();
        assert_eq!(all, expect);
        assert_eq!(partition_batches(&ids, 0).unwrap_err().code(), "InvalidBatchCount");
    }

    #[test]
    fn qc_sample_is_seeded() {
        let ids: Vec<String> = (0..20).map(|i| format!("x{i}")).collect();
        assert_eq!(qc_sample(&ids, "b", 5), qc_sample(&ids, "b", 5));
        assert_eq!(qc_sample(&ids, "b", 5).len(), 6);
        assert_ne!(qc_sample(&ids, "b", 5), qc_sample(&ids, "b", 6));
    }

    #[test]
    fn qc_requires_complete_batch_and_fails_back() {
        let mut w = state();
        w.partition(1).unwrap();
        assert_eq!(w.start_qc("batch-00", 1, QcMode::Blind).unwrap_err().code(), "BatchNotComplete");
        for a in ["a1", "a2", "a3"] {
            w.submit_annotation("t1", a, s(3), Misattribution::Null, 1).unwrap();
        }
        w.adjudicate("t1", "e1", s(3), Misattribution::Null, 2).unwrap();
        let verdicts: BTreeMap<String, QcVerdict> =
            [("t1".to_string(), QcVerdict { score: s(2), misattribution: cat(SecondaryCategory::Typo) })].into();
        assert_eq!(w.qc_run("batch-00", "e1", &verdicts, 3).unwrap_err().code(), "CheckerIsAdjudicator");
        let r = w.qc_run("batch-00", "e2", &verdicts, 3).unwrap();
        assert!(!r.passed);
        let t = w.task("t1").unwrap();
        assert_eq!(t.state, TaskState::ReAnnotation);
        assert_eq!(t.round, 1);
        assert!(t.audit.iter().any(|e| matches!(e, AuditEvent::Adjudicated { .. })));
        assert_eq!(w.batch("batch-00").unwrap().state, BatchState::FailedQc);
        w.submit_annotation("t1", "a1", s(3), Misattribution::Null, 5).unwrap();
    }

    #[test]
    fn feedback_lifecycle() {
        let mut w = state();
        assert!(w.draft_feedback("t1", "x").is_err());
        for a in ["a1", "a2", "a3"] {
            w.submit_annotation("t1", a, s(3), Misattribution::Null, 1).unwrap();
        }
        w.adjudicate("t1", "e1", s(3), Misattribution::Null, 2).unwrap();
        w.draft_feedback("t1", "fine").unwrap();
        assert!(!w.accepted_gold()[0].feedback_verified);
        assert_eq!(w.verify_feedback("t1", "a1", None).unwrap_err().code(), "NotExpert");
        w.verify_feedback("t1", "e2", Some("The answer is correct.".into())).unwrap();
        let g = &w.accepted_gold()[0];
        assert!(g.feedback_verified);
        assert_eq!(g.feedback, "The answer is correct.");
    }

    #[test]
    fn raw_export_schema() {
        let mut w = state();
        w.submit_annotation("t1", "a1", s(2), cat(SecondaryCategory::Typo), 42).unwrap();
        let lines = w.export_raw_annotations();
        let v: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
        assert_eq!(v["item_id"], "t1");
        assert_eq!(v["annotator_id"], "a1");
        assert_eq!(v["score"], 2);
        assert_eq!(v["misattribution"], "Typo");
        assert_eq!(v["timestamp"], 42);
    }

    #[test]
    fn unanimous_agreement_is_one() {
        let triples = vec![
            [(s(3), Misattribution::Null); 3],
            [(s(2), cat(SecondaryCategory::Typo)); 3],
            [(s(0), cat(SecondaryCategory::Hallucination)); 3],
        ];
        let r = agreement_from_triples(&triples).unwrap();
        assert_eq!(r.score_kappa, 1.0);
        assert_eq!(r.misattribution_kappa, 1.0);
    }
}
