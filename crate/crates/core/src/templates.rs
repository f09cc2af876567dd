//! Prompt templates: the bilingual judge prompts, their score-only
//! variants, and the feedback-generation prompt.
//!
//! Bodies ship as text files under `assets/prompts/` and can be replaced
//! from a directory at runtime. Each body carries the placeholders
//! `{question}`, `{model_answer}` and `{reference_answer}` exactly once.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::CorpusItem;
use crate::label::Locale;
use crate::parser::Grammar;

pub const PLACEHOLDERS: [&str; 3] = ["{question}", "{model_answer}", "{reference_answer}"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    JudgeEn,
    JudgeZh,
    JudgeEnNoAttribution,
    JudgeZhNoAttribution,
    FeedbackGen,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::JudgeEn,
        TemplateName::JudgeZh,
        TemplateName::JudgeEnNoAttribution,
        TemplateName::JudgeZhNoAttribution,
        TemplateName::FeedbackGen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::JudgeEn => "judge_en",
            TemplateName::JudgeZh => "judge_zh",
            TemplateName::JudgeEnNoAttribution => "judge_en_no_attribution",
            TemplateName::JudgeZhNoAttribution => "judge_zh_no_attribution",
            TemplateName::FeedbackGen => "feedback_gen",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    pub fn judge(locale: Locale, grammar: Grammar) -> TemplateName {
        match (locale, grammar) {
            (Locale::En, Grammar::ThreeLine) => TemplateName::JudgeEn,
            (Locale::Zh, Grammar::ThreeLine) => TemplateName::JudgeZh,
            (Locale::En, Grammar::TwoLine) => TemplateName::JudgeEnNoAttribution,
            (Locale::Zh, Grammar::TwoLine) => TemplateName::JudgeZhNoAttribution,
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateName::JudgeEn => include_str!("../assets/prompts/judge_en.txt"),
            TemplateName::JudgeZh => include_str!("../assets/prompts/judge_zh.txt"),
            TemplateName::JudgeEnNoAttribution => include_str!("../assets/prompts/judge_en_no_attribution.txt"),
            TemplateName::JudgeZhNoAttribution => include_str!("../assets/prompts/judge_zh_no_attribution.txt"),
            TemplateName::FeedbackGen => include_str!("../assets/prompts/feedback_gen.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template} has placeholder {placeholder} {count} times (expected once)")]
    MissingPlaceholder { template: String, placeholder: String, count: usize },
    #[error("item field {0} is empty")]
    EmptyField(&'static str),
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Result<Self, TemplateError> {
        let t = PromptTemplate { name, body: body.into() };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), TemplateError> {
        for p in PLACEHOLDERS {
            let count = self.body.matches(p).count();
            if count != 1 {
                return Err(TemplateError::MissingPlaceholder {
                    template: self.name.to_string(),
                    placeholder: p.to_string(),
                    count,
                });
            }
        }
        Ok(())
    }

    /// Substitutes the three placeholders verbatim in one pass, so text
    /// inside the item fields is never re-expanded.
    pub fn render(&self, item: &CorpusItem) -> Result<String, TemplateError> {
        self.check()?;
        let values = [
            ("question", item.question.as_str()),
            ("model_answer", item.model_answer.as_str()),
            ("reference_answer", item.reference_answer.as_str()),
        ];
        for (field, v) in values {
            if v.trim().is_empty() {
                return Err(TemplateError::EmptyField(field));
            }
        }
        let mut out = String::with_capacity(self.body.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
        let mut rest = self.body.as_str();
        loop {
            let next = PLACEHOLDERS
                .iter()
                .zip(values.iter())
                .filter_map(|(p, v)| rest.find(p).map(|pos| (pos, *p, v.1)))
                .min_by_key(|(pos, _, _)| *pos);
            match next {
                Some((pos, p, v)) => {
                    out.push_str(&rest[..pos]);
                    out.push_str(v);
                    rest = &rest[pos + p.len()..];
                }
                None => {
                    out.push_str(rest);
                    break;
                }
            }
        }
        Ok(out)
    }
}

pub fn render_prompt(template: &PromptTemplate, item: &CorpusItem) -> Result<String, TemplateError> {
    template.render(item)
}

/// The full set of templates used by a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TemplateName::ALL
            .into_iter()
            .map(|n| PromptTemplate::new(n, n.builtin_body()).expect("bundled template is well-formed"))
            .collect();
        TemplateSet { templates }
    }

    /// Loads `<name>.txt` files from `dir`; names without a file keep the
    /// bundled body.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for t in &mut set.templates {
            let path = dir.as_ref().join(t.name.file_name());
            match std::fs::read_to_string(&path) {
                Ok(body) => *t = PromptTemplate::new(t.name, body)?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => {
                    return Err(TemplateError::Io { path: path.display().to_string(), message: e.to_string() })
                }
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        self.templates.iter().find(|t| t.name == name).expect("every template name is present")
    }

    pub fn judge(&self, locale: Locale, grammar: Grammar) -> &PromptTemplate {
        self.get(TemplateName::judge(locale, grammar))
    }

    /// SHA-256 over all template names and bodies; recorded in reports so
    /// prompt drift is visible.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.templates {
            h.update(t.name.as_str().as_bytes());
            h.update([0u8]);
            h.update(t.body.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
