//! Blinded A/B comparison of two judges' feedback.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::evalrun::{ItemOutcome, RunRecord};
use crate::metrics::{pairwise_aggregate, MetricError, PairwiseReport, Vote};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Left,
    Right,
    Tie,
}

/// Which items enter the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetRule {
    /// items whose gold label carries a misattribution
    #[default]
    GoldMisattributed,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonTask {
    pub item_id: String,
    /// system A's feedback is shown on the left
    pub a_is_left: bool,
    pub feedback_a: String,
    pub feedback_b: String,
}

impl ComparisonTask {
    fn sides(&self) -> (&str, &str) {
        if self.a_is_left {
            (&self.feedback_a, &self.feedback_b)
        } else {
            (&self.feedback_b, &self.feedback_a)
        }
    }
}

/// What a rater sees: no system names, no A/B mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedTask {
    pub study_id: String,
    pub item_id: String,
    pub question: String,
    pub model_answer: String,
    pub reference_answer: String,
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub item_id: String,
    pub rater: String,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseStudy {
    pub id: String,
    pub system_a: String,
    pub system_b: String,
    pub seed: u64,
    pub subset: SubsetRule,
    pub tasks: Vec<ComparisonTask>,
    pub votes: Vec<VoteRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PairwiseError {
    #[error("the two runs cover different items ({only_a} only in A, {only_b} only in B)")]
    ItemMismatch { only_a: usize, only_b: usize },
    #[error("study has no item {0}")]
    UnknownItem(String),
    #[error("rater {rater} already voted {existing:?} on {item_id}")]
    ConflictingVote { item_id: String, rater: String, existing: Choice },
    #[error("the subset is empty")]
    EmptyStudy,
}

impl PairwiseError {
    pub fn code(&self) -> &'static str {
        match self {
            PairwiseError::ItemMismatch { .. } => "ItemMismatch",
            PairwiseError::UnknownItem(_) => "UnknownItem",
            PairwiseError::ConflictingVote { .. } => "ConflictingVote",
            PairwiseError::EmptyStudy => "EmptyStudy",
        }
    }
}

/// Feedback text per item from the first replicate: the parsed reason, or
/// the raw output when it did not parse.
fn feedback_by_item(run: &RunRecord) -> BTreeMap<&str, String> {
    run.outcomes
        .iter()
        .filter(|o| o.replicate == 0)
        .map(|o: &ItemOutcome| {
            let text = o.judgment.as_ref().map(|j| j.feedback.clone()).unwrap_or_else(|| o.raw.clone());
            (o.item_id.as_str(), text)
        })
        .collect()
}

/// Independent seeded coin flip per item: is A on the left?
pub fn a_is_left(seed: u64, study_id: &str, item_id: &str) -> bool {
    derive_seed(seed, &["blind", study_id, item_id]) & 1 == 1
}

pub fn build_pairwise_study(
    study_id: impl Into<String>,
    a: &RunRecord,
    b: &RunRecord,
    corpus: &Corpus,
    subset: SubsetRule,
    seed: u64,
) -> Result<PairwiseStudy, PairwiseError> {
    let id = study_id.into();
    let fa = feedback_by_item(a);
    let fb = feedback_by_item(b);
    let ka: BTreeSet<&str> = fa.keys().copied().collect();
    let kb: BTreeSet<&str> = fb.keys().copied().collect();
    if ka != kb {
        return Err(PairwiseError::ItemMismatch { only_a: ka.difference(&kb).count(), only_b: kb.difference(&ka).count() });
    }
    let tasks: Vec<ComparisonTask> = ka
        .iter()
        .filter(|&&item| match subset {
            SubsetRule::All => true,
            SubsetRule::GoldMisattributed => corpus.gold(item).is_some_and(|g| g.has_error()),
        })
        .map(|&item| ComparisonTask {
            item_id: item.to_string(),
            a_is_left: a_is_left(seed, &id, item),
            feedback_a: fa[item].clone(),
            feedback_b: fb[item].clone(),
        })
        .collect();
    if tasks.is_empty() {
        return Err(PairwiseError::EmptyStudy);
    }
    Ok(PairwiseStudy {
        id,
        system_a: a.report.config.backend.clone(),
        system_b: b.report.config.backend.clone(),
        seed,
        subset,
        tasks,
        votes: Vec::new(),
    })
}

impl PairwiseStudy {
    fn task(&self, item_id: &str) -> Result<&ComparisonTask, PairwiseError> {
        self.tasks.iter().find(|t| t.item_id == item_id).ok_or_else(|| PairwiseError::UnknownItem(item_id.into()))
    }

    pub fn blinded(&self, item_id: &str, corpus: &Corpus) -> Result<BlindedTask, PairwiseError> {
        let t = self.task(item_id)?;
        let item = corpus.item(item_id).ok_or_else(|| PairwiseError::UnknownItem(item_id.into()))?;
        let (left, right) = t.sides();
        Ok(BlindedTask {
            study_id: self.id.clone(),
            item_id: item_id.into(),
            question: item.question.clone(),
            model_answer: item.model_answer.clone(),
            reference_answer: item.reference_answer.clone(),
            left: left.into(),
            right: right.into(),
        })
    }

    /// Items `rater` has not voted on yet, in item order.
    pub fn pending_for(&self, rater: &str) -> Vec<&str> {
        self.tasks
            .iter()
            .filter(|t| !self.votes.iter().any(|v| v.item_id == t.item_id && v.rater == rater))
            .map(|t| t.item_id.as_str())
            .collect()
    }

    /// Records a vote. Repeating the same vote is a no-op returning `false`.
    pub fn record_vote(&mut self, item_id: &str, rater: &str, choice: Choice) -> Result<bool, PairwiseError> {
        self.task(item_id)?;
        if let Some(v) = self.votes.iter().find(|v| v.item_id == item_id && v.rater == rater) {
            return if v.choice == choice {
                Ok(false)
            } else {
                Err(PairwiseError::ConflictingVote { item_id: item_id.into(), rater: rater.into(), existing: v.choice })
            };
        }
        self.votes.push(VoteRecord { item_id: item_id.into(), rater: rater.into(), choice });
        Ok(true)
    }

    /// Votes from system A's point of view.
    pub fn votes_for_a(&self) -> Vec<Vote> {
        self.votes
            .iter()
            .filter_map(|v| {
                let t = self.task(&v.item_id).ok()?;
                Some(match (v.choice, t.a_is_left) {
                    (Choice::Tie, _) => Vote::Tie,
                    (Choice::Left, true) | (Choice::Right, false) => Vote::Win,
                    _ => Vote::Lose,
                })
            })
            .collect()
    }

    pub fn report(&self) -> Result<PairwiseReport, MetricError> {
        pairwise_aggregate(&self.votes_for_a())
    }
}
