//! Parsing of judge output against the 3-line contract
//! (reason, misattribution, 0–3 score), and the inverse rendering.
//!
//! Parsing is tolerant but never silent: every normalization or fallback
//! leaves a [`ParseDiagnostic`] on the resulting [`Judgment`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{is_consistent, Locale, Misattribution, Score, NULL_LITERAL};
use crate::taxonomy::{normalize_mention, Taxonomy, TaxonomyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticKind {
    LabelPrefixStripped,
    BlankLinesCollapsed,
    UnknownCategoryFallback,
    ScoreCoerced,
    ConsistencyViolation,
    MultiCategoryReduced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub kind: DiagnosticKind,
    pub detail: String,
}

impl ParseDiagnostic {
    fn new(kind: DiagnosticKind, detail: impl Into<String>) -> Self {
        ParseDiagnostic { kind, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub feedback: String,
    /// `None` when the judge gave no usable attribution: either the line was
    /// unresolvable under the fallback policy, or the grammar has no
    /// attribution line (score-only mode).
    pub misattribution: Option<Misattribution>,
    pub score: Score,
    pub raw: String,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl Judgment {
    pub fn has_diagnostic(&self, kind: DiagnosticKind) -> bool {
        self.diagnostics.iter().any(|d| d.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unparsable judgment: {0}")]
    Unparsable(String),
    #[error("score {0} outside 0..=3")]
    ScoreOutOfRange(i64),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Unparsable(_) => "Unparsable",
            ParseError::ScoreOutOfRange(_) => "ScoreOutOfRange",
            ParseError::UnknownCategory(_) => "UnknownCategory",
        }
    }
}

/// Output grammar the judge was asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grammar {
    /// reason / misattribution / score
    #[default]
    ThreeLine,
    /// reason / score, used when attribution is stripped from the prompt
    TwoLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownCategoryPolicy {
    /// keep the judgment with no attribution and a diagnostic
    #[default]
    Fallback,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    pub locale: Locale,
    pub grammar: Grammar,
    pub unknown_category: UnknownCategoryPolicy,
}

impl ParseOptions {
    pub fn new(locale: Locale) -> Self {
        ParseOptions { locale, grammar: Grammar::ThreeLine, unknown_category: UnknownCategoryPolicy::Fallback }
    }

    pub fn grammar(mut self, grammar: Grammar) -> Self {
        self.grammar = grammar;
        self
    }

    pub fn unknown_category(mut self, policy: UnknownCategoryPolicy) -> Self {
        self.unknown_category = policy;
        self
    }
}

const FEEDBACK_LABELS: &[&str] = &[
    "reason for the evaluation",
    "reason",
    "rationale",
    "feedback",
    "evaluation",
    "评估理由",
    "理由",
    "反馈",
];
const ATTRIBUTION_LABELS: &[&str] = &[
    "error attribution",
    "misattribution",
    "attribution",
    "error category",
    "category",
    "错误归因",
    "归因",
    "错误类型",
];
const SCORE_LABELS: &[&str] = &["score", "rating", "分数", "得分", "评分", "模型评估分数"];
const LINE_LABELS: &[&str] = &[
    "line 1", "line 2", "line 3", "第一行", "第二行", "第三行",
];
const BULLETS: &[&str] = &["- ", "* ", "• ", "· ", "1. ", "2. ", "3. ", "1) ", "2) ", "3) ", "(1) ", "(2) ", "(3) "];
const NULL_WORDS: &[&str] = &["null", "无", "none"];
const CATEGORY_SEPARATORS: &[&str] = &[",", "，", "、", ";", "；", "|", " and ", "和", "以及", " & "];

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// Strips list bullets and `label:` prefixes drawn from the fixed vocabulary.
/// Returns the remaining text and the stripped prefix, if any.
fn strip_label_prefix<'a>(line: &'a str, labels: &[&str]) -> (&'a str, Option<String>) {
    let mut rest = line.trim();
    let mut stripped = false;
    loop {
        let before = rest;
        rest = rest.trim_start_matches("**").trim_start();
        for bullet in BULLETS {
            if let Some(r) = strip_prefix_ci(rest, bullet) {
                rest = r.trim_start();
                break;
            }
        }
        for label in labels.iter().chain(LINE_LABELS) {
            if let Some(r) = strip_prefix_ci(rest, label) {
                let r = r.trim_start().trim_start_matches("**").trim_start();
                if let Some(r) = r.strip_prefix(':').or_else(|| r.strip_prefix('：')) {
                    rest = r.trim_start().trim_start_matches("**").trim_start();
                    break;
                }
            }
        }
        if rest == before {
            break;
        }
        stripped = true;
    }
    let removed = stripped.then(|| line.trim()[..line.trim().len() - rest.len()].trim().to_string());
    (rest.trim(), removed)
}

fn chinese_digit(c: char) -> Option<i64> {
    match c {
        '零' | '〇' => Some(0),
        '一' => Some(1),
        '二' | '两' => Some(2),
        '三' => Some(3),
        _ => None,
    }
}

/// First integer token of the score line, with a flag for whether the line
/// needed coercion (anything besides the bare integer).
fn extract_score(text: &str) -> Option<(i64, bool)> {
    if let Ok(v) = text.parse::<i64>() {
        return Some((v, false));
    }
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let d = chars[i].to_digit(10).or_else(|| fullwidth_digit(chars[i]));
        if d.is_some() {
            let negative = i > 0 && (chars[i - 1] == '-' || chars[i - 1] == '−');
            let mut value: i64 = 0;
            let mut j = i;
            while j < chars.len() {
                match chars[j].to_digit(10).or_else(|| fullwidth_digit(chars[j])) {
                    Some(d) => {
                        value = value.saturating_mul(10).saturating_add(d as i64);
                        j += 1;
                    }
                    None => break,
                }
            }
            return Some((if negative { -value } else { value }, true));
        }
        i += 1;
    }
    chars.iter().find_map(|&c| chinese_digit(c)).map(|v| (v, true))
}

fn fullwidth_digit(c: char) -> Option<u32> {
    ('０'..='９').contains(&c).then(|| c as u32 - '０' as u32)
}

fn parse_score(line: &str, diagnostics: &mut Vec<ParseDiagnostic>) -> Result<Score, ParseError> {
    let (text, prefix) = strip_label_prefix(line, SCORE_LABELS);
    if let Some(p) = prefix {
        diagnostics.push(ParseDiagnostic::new(DiagnosticKind::LabelPrefixStripped, format!("score line: {p}")));
    }
    let (value, coerced) =
        extract_score(text).ok_or_else(|| ParseError::Unparsable(format!("no score token in {:?}", line.trim())))?;
    let score = Score::try_from(value).map_err(ParseError::ScoreOutOfRange)?;
    if coerced {
        diagnostics.push(ParseDiagnostic::new(
            DiagnosticKind::ScoreCoerced,
            format!("{:?} read as {score}", text),
        ));
    }
    Ok(score)
}

fn parse_feedback(lines: &[&str], diagnostics: &mut Vec<ParseDiagnostic>) -> String {
    let (first, prefix) = strip_label_prefix(lines[0], FEEDBACK_LABELS);
    if let Some(p) = prefix {
        diagnostics.push(ParseDiagnostic::new(DiagnosticKind::LabelPrefixStripped, format!("reason line: {p}")));
    }
    let mut feedback = first.to_string();
    for extra in &lines[1..] {
        feedback.push('\n');
        feedback.push_str(extra.trim());
    }
    feedback
}

fn is_null_word(text: &str) -> bool {
    let norm = normalize_mention(text);
    text.trim() == NULL_LITERAL || NULL_WORDS.contains(&norm.as_str())
}

fn parse_attribution(
    line: &str,
    opts: &ParseOptions,
    taxonomy: &Taxonomy,
    diagnostics: &mut Vec<ParseDiagnostic>,
) -> Result<Option<Misattribution>, ParseError> {
    let (text, prefix) = strip_label_prefix(line, ATTRIBUTION_LABELS);
    if let Some(p) = prefix {
        diagnostics.push(ParseDiagnostic::new(
            DiagnosticKind::LabelPrefixStripped,
            format!("attribution line: {p}"),
        ));
    }
    if is_null_word(text) {
        return Ok(Some(Misattribution::Null));
    }
    if let Ok(c) = taxonomy.resolve_category(text, opts.locale) {
        return Ok(Some(c.into()));
    }

    let mut candidate = text;
    for sep in CATEGORY_SEPARATORS {
        if let Some((head, tail)) = text.split_once(sep) {
            if !head.trim().is_empty() && !tail.trim().is_empty() {
                diagnostics.push(ParseDiagnostic::new(
                    DiagnosticKind::MultiCategoryReduced,
                    format!("kept {:?}, discarded {:?}", head.trim(), tail.trim()),
                ));
                candidate = head;
                break;
            }
        }
    }
    if candidate != text {
        if is_null_word(candidate) {
            return Ok(Some(Misattribution::Null));
        }
        if let Ok(c) = taxonomy.resolve_category(candidate, opts.locale) {
            return Ok(Some(c.into()));
        }
    }

    match opts.unknown_category {
        UnknownCategoryPolicy::Reject => Err(ParseError::UnknownCategory(candidate.trim().to_string())),
        UnknownCategoryPolicy::Fallback => {
            diagnostics.push(ParseDiagnostic::new(
                DiagnosticKind::UnknownCategoryFallback,
                format!("unresolved attribution {:?}", candidate.trim()),
            ));
            Ok(None)
        }
    }
}

/// Parses raw judge output.
///
/// Blank lines are collapsed. The last content line is the score and, in
/// the 3-line grammar, the line before it the attribution; everything
/// above is feedback. Fewer content lines than the grammar requires, or a
/// score line without an integer, is `Unparsable`.
pub fn parse_judgment(raw: &str, opts: ParseOptions, taxonomy: &Taxonomy) -> Result<Judgment, ParseError> {
    let mut diagnostics = Vec::new();
    let all: Vec<&str> = raw.split('\n').map(|l| l.trim_end_matches('\r')).collect();
    let first = all.iter().position(|l| !l.trim().is_empty());
    let last = all.iter().rposition(|l| !l.trim().is_empty());
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(ParseError::Unparsable("empty output".into())),
    };
    let interior_blank = all[first..=last].iter().filter(|l| l.trim().is_empty()).count();
    if interior_blank > 0 {
        diagnostics.push(ParseDiagnostic::new(
            DiagnosticKind::BlankLinesCollapsed,
            format!("{interior_blank} blank line(s) removed"),
        ));
    }
    let lines: Vec<&str> = all[first..=last].iter().copied().filter(|l| !l.trim().is_empty()).collect();

    let required = match opts.grammar {
        Grammar::ThreeLine => 3,
        Grammar::TwoLine => 2,
    };
    if lines.len() < required {
        return Err(ParseError::Unparsable(format!(
            "{} content line(s), expected {required}",
            lines.len()
        )));
    }

    let score = parse_score(lines[lines.len() - 1], &mut diagnostics)?;
    let (feedback_lines, misattribution) = match opts.grammar {
        Grammar::ThreeLine => {
            let m = parse_attribution(lines[lines.len() - 2], &opts, taxonomy, &mut diagnostics)?;
            (&lines[..lines.len() - 2], m)
        }
        Grammar::TwoLine => (&lines[..lines.len() - 1], None),
    };
    let feedback = parse_feedback(feedback_lines, &mut diagnostics);

    if let Some(m) = misattribution {
        if !is_consistent(score, m) {
            diagnostics.push(ParseDiagnostic::new(
                DiagnosticKind::ConsistencyViolation,
                format!("score {score} with misattribution {m}"),
            ));
        }
    }

    Ok(Judgment { feedback, misattribution, score, raw: raw.to_string(), diagnostics })
}

fn single_line(feedback: &str) -> String {
    feedback.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonical 3-line form with the English label.
pub fn render_judgment(feedback: &str, misattribution: Misattribution, score: Score) -> String {
    format!("{}\n{}\n{}", single_line(feedback), misattribution.wire_label(), score)
}

/// 3-line form using the taxonomy label of the given locale.
pub fn render_judgment_localized(
    feedback: &str,
    misattribution: Misattribution,
    score: Score,
    taxonomy: &Taxonomy,
    locale: Locale,
) -> String {
    let label = match misattribution {
        Misattribution::Null => NULL_LITERAL,
        Misattribution::Category(c) => taxonomy.label(c, locale),
    };
    format!("{}\n{}\n{}", single_line(feedback), label, score)
}

/// 2-line form (reason, score).
pub fn render_score_only(feedback: &str, score: Score) -> String {
    format!("{}\n{}", single_line(feedback), score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSignal {
    pub has_error: bool,
    /// set when the attribution was unavailable and `score < 3` decided
    pub from_score: bool,
}

/// Predicted has-error: a non-NULL attribution, or `score < 3` when the
/// attribution is unavailable.
pub fn detection_signal(j: &Judgment) -> DetectionSignal {
    match j.misattribution {
        Some(m) => DetectionSignal { has_error: !m.is_null(), from_score: false },
        None => DetectionSignal { has_error: !j.score.is_perfect(), from_score: true },
    }
}

impl From<TaxonomyError> for ParseError {
    fn from(e: TaxonomyError) -> Self {
        ParseError::UnknownCategory(e.to_string())
    }
}
