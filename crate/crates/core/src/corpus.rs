//! Evaluation items and gold labels: JSONL ingestion with per-record
//! validation, byte-stable export, and summary statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{is_consistent, Locale, Misattribution, Score};
use crate::taxonomy::PrimaryCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionCategory {
    #[serde(rename = "NLP Basic")]
    NlpBasic,
    #[serde(rename = "Math")]
    Math,
    #[serde(rename = "Reasoning")]
    Reasoning,
    #[serde(rename = "Text Generation")]
    TextGeneration,
    #[serde(rename = "Question and Answer")]
    QuestionAndAnswer,
    #[serde(rename = "Professional Field")]
    ProfessionalField,
}

impl QuestionCategory {
    pub const ALL: [QuestionCategory; 6] = [
        QuestionCategory::NlpBasic,
        QuestionCategory::TextGeneration,
        QuestionCategory::QuestionAndAnswer,
        QuestionCategory::Reasoning,
        QuestionCategory::Math,
        QuestionCategory::ProfessionalField,
    ];

    pub fn label(self) -> &'static str {
        match self {
            QuestionCategory::NlpBasic => "NLP Basic",
            QuestionCategory::Math => "Math",
            QuestionCategory::Reasoning => "Reasoning",
            QuestionCategory::TextGeneration => "Text Generation",
            QuestionCategory::QuestionAndAnswer => "Question and Answer",
            QuestionCategory::ProfessionalField => "Professional Field",
        }
    }
}

impl FromStr for QuestionCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QuestionCategory::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown question category {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub question: String,
    pub reference_answer: String,
    pub model_answer: String,
    pub question_category: QuestionCategory,
    pub locale: Locale,
    pub split: Split,
}

fn is_true(b: &bool) -> bool {
    *b
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub item_id: String,
    pub score: Score,
    pub misattribution: Misattribution,
    pub feedback: String,
    /// false while generated feedback awaits expert confirmation
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub feedback_verified: bool,
}

impl GoldLabel {
    pub fn has_error(&self) -> bool {
        !self.misattribution.is_null()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum CorpusError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid category: {0}")]
    InvalidCategory(String),
    #[error("gold consistency violation: score {score} with misattribution {misattribution}")]
    GoldConsistencyViolation { score: u8, misattribution: String },
    #[error("gold label for unknown item {0:?}")]
    UnknownItem(String),
    #[error("item {0:?} has no gold label")]
    MissingGold(String),
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::MalformedRecord(_) => "MalformedRecord",
            CorpusError::DuplicateId(_) => "DuplicateId",
            CorpusError::InvalidCategory(_) => "InvalidCategory",
            CorpusError::GoldConsistencyViolation { .. } => "GoldConsistencyViolation",
            CorpusError::UnknownItem(_) => "UnknownItem",
            CorpusError::MissingGold(_) => "MissingGold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub error: CorpusError,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportOutcome {
    pub accepted: usize,
    /// identical re-imports of records already present
    pub unchanged: usize,
    pub rejections: Vec<Rejection>,
}

/// Loose view of an input line; every field optional so validation can
/// name the exact violation.
#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<String>,
    item_id: Option<String>,
    question: Option<String>,
    reference_answer: Option<String>,
    model_answer: Option<String>,
    question_category: Option<String>,
    locale: Option<String>,
    split: Option<String>,
    score: Option<serde_json::Value>,
    misattribution: Option<String>,
    feedback: Option<String>,
    feedback_verified: Option<bool>,
}

fn required(field: &str, value: Option<String>) -> Result<String, CorpusError> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v),
        Some(_) => Err(CorpusError::MalformedRecord(format!("field {field:?} is empty"))),
        None => Err(CorpusError::MalformedRecord(format!("missing field {field:?}"))),
    }
}

fn parse_gold_fields(
    item_id: String,
    score: Option<serde_json::Value>,
    misattribution: Option<String>,
    feedback: Option<String>,
    feedback_verified: Option<bool>,
) -> Result<GoldLabel, CorpusError> {
    let score = score
        .and_then(|v| v.as_i64())
        .ok_or_else(|| CorpusError::MalformedRecord("score must be an integer".into()))?;
    let score = Score::try_from(score)
        .map_err(|v| CorpusError::MalformedRecord(format!("score {v} outside 0..=3")))?;
    let raw_m = misattribution.ok_or_else(|| CorpusError::MalformedRecord("missing field \"misattribution\"".into()))?;
    let misattribution = Misattribution::from_wire(&raw_m)
        .ok_or_else(|| CorpusError::InvalidCategory(format!("misattribution {raw_m:?}")))?;
    if !is_consistent(score, misattribution) {
        return Err(CorpusError::GoldConsistencyViolation {
            score: score.value(),
            misattribution: misattribution.wire_label().to_string(),
        });
    }
    let feedback = required("feedback", feedback)?;
    Ok(GoldLabel { item_id, score, misattribution, feedback, feedback_verified: feedback_verified.unwrap_or(true) })
}

/// Validates the item part of a record and, when present, the embedded gold
/// fields (`score`, `misattribution`, `feedback`).
fn parse_item_record(line: &str) -> Result<(CorpusItem, Option<GoldLabel>), CorpusError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord(e.to_string()))?;
    let id = required("id", raw.id)?;
    let question = required("question", raw.question)?;
    let reference_answer = required("reference_answer", raw.reference_answer)?;
    let model_answer = required("model_answer", raw.model_answer)?;
    let qc = required("question_category", raw.question_category)?;
    let question_category = qc.parse().map_err(CorpusError::InvalidCategory)?;
    let locale = required("locale", raw.locale)?.parse().map_err(CorpusError::MalformedRecord)?;
    let split = required("split", raw.split)?.parse().map_err(CorpusError::MalformedRecord)?;
    let item = CorpusItem { id: id.clone(), question, reference_answer, model_answer, question_category, locale, split };
    let has_gold = raw.score.is_some() || raw.misattribution.is_some() || raw.feedback.is_some();
    let gold = if has_gold {
        Some(parse_gold_fields(id, raw.score, raw.misattribution, raw.feedback, raw.feedback_verified)?)
    } else {
        None
    };
    Ok((item, gold))
}

fn parse_gold_record(line: &str) -> Result<GoldLabel, CorpusError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord(e.to_string()))?;
    let item_id = required("item_id", raw.item_id)?;
    parse_gold_fields(item_id, raw.score, raw.misattribution, raw.feedback, raw.feedback_verified)
}

/// In-memory corpus keyed and ordered by item id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    items: BTreeMap<String, CorpusItem>,
    gold: BTreeMap<String, GoldLabel>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, id: &str) -> Option<&CorpusItem> {
        self.items.get(id)
    }

    pub fn gold(&self, id: &str) -> Option<&GoldLabel> {
        self.gold.get(id)
    }

    pub fn items(&self) -> impl Iterator<Item = &CorpusItem> {
        self.items.values()
    }

    pub fn gold_labels(&self) -> impl Iterator<Item = &GoldLabel> {
        self.gold.values()
    }

    /// Items of a split, ordered by id.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusItem> {
        self.items.values().filter(move |i| i.split == split)
    }

    /// Inserts one validated item (and optional gold) atomically.
    pub fn insert(&mut self, item: CorpusItem, gold: Option<GoldLabel>) -> Result<bool, CorpusError> {
        let unchanged_item = match self.items.get(&item.id) {
            Some(existing) if *existing == item => true,
            Some(_) => return Err(CorpusError::DuplicateId(item.id)),
            None => false,
        };
        let unchanged_gold = match (&gold, self.gold.get(&item.id)) {
            (Some(g), Some(existing)) if existing == g => true,
            (Some(_), Some(_)) => return Err(CorpusError::DuplicateId(item.id)),
            (None, _) => true,
            (Some(_), None) => false,
        };
        if let Some(g) = gold {
            if !is_consistent(g.score, g.misattribution) {
                return Err(CorpusError::GoldConsistencyViolation {
                    score: g.score.value(),
                    misattribution: g.misattribution.wire_label().into(),
                });
            }
            self.gold.insert(g.item_id.clone(), g);
        }
        self.items.insert(item.id.clone(), item);
        Ok(!(unchanged_item && unchanged_gold))
    }

    /// Sets or replaces the gold label of an existing item.
    pub fn set_gold(&mut self, gold: GoldLabel) -> Result<(), CorpusError> {
        if !self.items.contains_key(&gold.item_id) {
            return Err(CorpusError::UnknownItem(gold.item_id));
        }
        if !is_consistent(gold.score, gold.misattribution) {
            return Err(CorpusError::GoldConsistencyViolation {
                score: gold.score.value(),
                misattribution: gold.misattribution.wire_label().into(),
            });
        }
        if gold.feedback.trim().is_empty() {
            return Err(CorpusError::MalformedRecord("field \"feedback\" is empty".into()));
        }
        self.gold.insert(gold.item_id.clone(), gold);
        Ok(())
    }

    /// Imports item records (optionally carrying gold fields), one JSON
    /// object per line. Blank lines are skipped; each record is accepted or
    /// rejected as a whole.
    pub fn import_items<R: BufRead>(&mut self, reader: R) -> std::io::Result<ImportOutcome> {
        let mut outcome = ImportOutcome::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_item_record(&line).and_then(|(item, gold)| self.insert(item, gold)) {
                Ok(true) => outcome.accepted += 1,
                Ok(false) => outcome.unchanged += 1,
                Err(error) => outcome.rejections.push(Rejection { line: idx + 1, error }),
            }
        }
        Ok(outcome)
    }

    /// Imports gold records `{"item_id","score","misattribution","feedback"}`.
    pub fn import_gold<R: BufRead>(&mut self, reader: R) -> std::io::Result<ImportOutcome> {
        let mut outcome = ImportOutcome::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let result = parse_gold_record(&line).and_then(|g| {
                if !self.items.contains_key(&g.item_id) {
                    return Err(CorpusError::UnknownItem(g.item_id));
                }
                match self.gold.get(&g.item_id) {
                    Some(existing) if *existing == g => Ok(false),
                    Some(_) => Err(CorpusError::DuplicateId(g.item_id)),
                    None => {
                        self.gold.insert(g.item_id.clone(), g);
                        Ok(true)
                    }
                }
            });
            match result {
                Ok(true) => outcome.accepted += 1,
                Ok(false) => outcome.unchanged += 1,
                Err(error) => outcome.rejections.push(Rejection { line: idx + 1, error }),
            }
        }
        Ok(outcome)
    }

    /// Item records as JSONL lines in id order.
    pub fn export_items(&self, split: Option<Split>) -> Vec<String> {
        self.items
            .values()
            .filter(|i| split.is_none_or(|s| i.split == s))
            .map(|i| serde_json::to_string(i).expect("item serializes"))
            .collect()
    }

    /// Gold records as JSONL lines in item-id order.
    pub fn export_gold(&self, split: Option<Split>) -> Vec<String> {
        self.gold
            .values()
            .filter(|g| split.is_none_or(|s| self.items.get(&g.item_id).is_some_and(|i| i.split == s)))
            .map(|g| serde_json::to_string(g).expect("gold serializes"))
            .collect()
    }

    pub fn compute_stats(&self) -> CorpusStats {
        compute_stats(self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: u64,
    pub by_split: BTreeMap<Split, u64>,
    pub by_locale: BTreeMap<Locale, u64>,
    pub by_question_category: BTreeMap<QuestionCategory, u64>,
    pub gold_labeled: u64,
    pub misattributed: u64,
    pub by_primary_misattribution: BTreeMap<PrimaryCategory, u64>,
}

pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for item in corpus.items.values() {
        stats.total += 1;
        *stats.by_split.entry(item.split).or_default() += 1;
        *stats.by_locale.entry(item.locale).or_default() += 1;
        *stats.by_question_category.entry(item.question_category).or_default() += 1;
    }
    for g in corpus.gold.values() {
        stats.gold_labeled += 1;
        if let Some(c) = g.misattribution.category() {
            stats.misattributed += 1;
            *stats.by_primary_misattribution.entry(c.parent()).or_default() += 1;
        }
    }
    stats
}

/// `21702` → `"21,702"`.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let get = |m: &BTreeMap<Split, u64>, k| m.get(&k).copied().unwrap_or(0);
        writeln!(f, "total: {}", thousands(self.total))?;
        writeln!(f, "train: {}", thousands(get(&self.by_split, Split::Train)))?;
        writeln!(f, "test: {}", thousands(get(&self.by_split, Split::Test)))?;
        writeln!(f, "gold labeled: {}", thousands(self.gold_labeled))?;
        writeln!(f, "misattributed: {}", thousands(self.misattributed))?;
        for locale in [Locale::En, Locale::Zh] {
            writeln!(f, "locale {locale}: {}", thousands(self.by_locale.get(&locale).copied().unwrap_or(0)))?;
        }
        writeln!(f, "question category:")?;
        for c in QuestionCategory::ALL {
            writeln!(f, "  {}: {}", c.label(), thousands(self.by_question_category.get(&c).copied().unwrap_or(0)))?;
        }
        writeln!(f, "misattribution (first level):")?;
        for p in PrimaryCategory::ALL {
            writeln!(
                f,
                "  {}: {}",
                p.canonical_label(),
                thousands(self.by_primary_misattribution.get(&p).copied().unwrap_or(0))
            )?;
        }
        Ok(())
    }
}
