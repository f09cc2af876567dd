//! Supervised fine-tuning export: judge prompt in, gold judgment out.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Split};
use crate::evalrun::EvalMode;
use crate::gateway::Decoding;
use crate::parser::{render_judgment_localized, render_score_only};
use crate::taxonomy::Taxonomy;
use crate::templates::{TemplateError, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub output: String,
}

#[derive(Debug, Error)]
pub enum SftError {
    #[error("item {0} has no gold label")]
    MissingGold(String),
    #[error("feedback of item {0} has not been verified")]
    UnverifiedFeedback(String),
    #[error("item {0} has empty gold feedback")]
    EmptyFeedback(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl SftError {
    pub fn code(&self) -> &'static str {
        match self {
            SftError::MissingGold(_) => "MissingGold",
            SftError::UnverifiedFeedback(_) => "UnverifiedFeedback",
            SftError::EmptyFeedback(_) => "EmptyFeedback",
            SftError::Template(_) => "TemplateError",
        }
    }
}

/// One record per item of `split`, in id order. Targets use the item's
/// own locale for both the prompt and the category label.
pub fn export_sft(
    corpus: &Corpus,
    split: Split,
    mode: EvalMode,
    templates: &TemplateSet,
    taxonomy: &Taxonomy,
) -> Result<Vec<SftRecord>, SftError> {
    let mut items: Vec<_> = corpus.split(split).collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let gold = corpus.gold(&item.id).ok_or_else(|| SftError::MissingGold(item.id.clone()))?;
        if !gold.feedback_verified {
            return Err(SftError::UnverifiedFeedback(item.id.clone()));
        }
        if gold.feedback.trim().is_empty() {
            return Err(SftError::EmptyFeedback(item.id.clone()));
        }
        let instruction = templates.judge(item.locale, mode.grammar()).render(item)?;
        let output = match mode {
            EvalMode::Full => render_judgment_localized(&gold.feedback, gold.misattribution, gold.score, taxonomy, item.locale),
            EvalMode::StripMisattribution => render_score_only(&gold.feedback, gold.score),
        };
        out.push(SftRecord { instruction, output });
    }
    Ok(out)
}

pub fn to_jsonl(records: &[SftRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// Fine-tuning hyperparameters plus the decoding settings used at
/// inference, written as a flat `key = value` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub batch_size: u32,
    pub epochs: u32,
    pub weight_decay: f64,
    pub optimizer: String,
    pub repetition_penalty: f64,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let d = Decoding::default();
        TrainerConfig {
            learning_rate: 1.0e-4,
            warmup_ratio: 0.10,
            batch_size: 16,
            epochs: 2,
            weight_decay: 0.1,
            optimizer: "adamw".into(),
            repetition_penalty: d.repetition_penalty,
            temperature: d.temperature,
            top_p: d.top_p,
            top_k: d.top_k,
        }
    }
}

fn float(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:?}")
    }
}

impl TrainerConfig {
    pub fn to_document(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {}", float(self.learning_rate));
        let _ = writeln!(s, "warmup_ratio = {}", float(self.warmup_ratio));
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "weight_decay = {}", float(self.weight_decay));
        let _ = writeln!(s, "optimizer = {:?}", self.optimizer);
        let _ = writeln!(s, "repetition_penalty = {}", float(self.repetition_penalty));
        let _ = writeln!(s, "temperature = {}", float(self.temperature));
        let _ = writeln!(s, "top_p = {}", float(self.top_p));
        let _ = writeln!(s, "top_k = {}", self.top_k);
        s
    }

    pub fn from_document(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }
}
