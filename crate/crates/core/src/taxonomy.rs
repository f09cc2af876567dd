//! The Misattribution Framework: six first-level and fifteen second-level
//! error categories, with bilingual labels and an alias table used to
//! resolve free-text category mentions.
//!
//! The registry is data, not code: [`Taxonomy::builtin`] loads the bundled
//! `assets/taxonomy.toml`, and [`Taxonomy::from_toml_str`] accepts any file
//! with the same layout. Loading never fails on invariant violations; those
//! are surfaced by [`Taxonomy::validate`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Locale;

const BUILTIN_TOML: &str = include_str!("../assets/taxonomy.toml");

pub const PRIMARY_CARDINALITY: usize = 6;
pub const SECONDARY_CARDINALITY: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrimaryCategory {
    InstructionFollowing,
    ResponseQuality,
    KnowledgeAbility,
    ReasoningCapability,
    Safety,
    OtherErrors,
}

impl PrimaryCategory {
    pub const ALL: [PrimaryCategory; PRIMARY_CARDINALITY] = [
        PrimaryCategory::InstructionFollowing,
        PrimaryCategory::ResponseQuality,
        PrimaryCategory::KnowledgeAbility,
        PrimaryCategory::ReasoningCapability,
        PrimaryCategory::Safety,
        PrimaryCategory::OtherErrors,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PrimaryCategory::InstructionFollowing => "InstructionFollowing",
            PrimaryCategory::ResponseQuality => "ResponseQuality",
            PrimaryCategory::KnowledgeAbility => "KnowledgeAbility",
            PrimaryCategory::ReasoningCapability => "ReasoningCapability",
            PrimaryCategory::Safety => "Safety",
            PrimaryCategory::OtherErrors => "OtherErrors",
        }
    }

    pub fn canonical_label(self) -> &'static str {
        match self {
            PrimaryCategory::InstructionFollowing => "Instruction Following",
            PrimaryCategory::ResponseQuality => "Response Quality",
            PrimaryCategory::KnowledgeAbility => "Knowledge Ability",
            PrimaryCategory::ReasoningCapability => "Reasoning Capability",
            PrimaryCategory::Safety => "Safety",
            PrimaryCategory::OtherErrors => "Other Errors",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PrimaryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_label())
    }
}

impl FromStr for PrimaryCategory {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrimaryCategory::ALL
            .into_iter()
            .find(|p| p.id() == s)
            .ok_or_else(|| TaxonomyError::UnknownId(s.to_string()))
    }
}

/// Second-level category. `SafetyViolation` is the second-level "Safety";
/// it renders as "Safety" like its parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SecondaryCategory {
    ContentInconsistency,
    FormatInconsistency,
    LengthInconsistency,
    Truncation,
    Duplicate,
    RefusalToAnswer,
    MissingAnswers,
    Noisy,
    Typo,
    Hallucination,
    IncorrectAnswers,
    ProcessError,
    ResultError,
    SafetyViolation,
    Others,
}

impl SecondaryCategory {
    pub const ALL: [SecondaryCategory; SECONDARY_CARDINALITY] = [
        SecondaryCategory::ContentInconsistency,
        SecondaryCategory::FormatInconsistency,
        SecondaryCategory::LengthInconsistency,
        SecondaryCategory::Truncation,
        SecondaryCategory::Duplicate,
        SecondaryCategory::RefusalToAnswer,
        SecondaryCategory::MissingAnswers,
        SecondaryCategory::Noisy,
        SecondaryCategory::Typo,
        SecondaryCategory::Hallucination,
        SecondaryCategory::IncorrectAnswers,
        SecondaryCategory::ProcessError,
        SecondaryCategory::ResultError,
        SecondaryCategory::SafetyViolation,
        SecondaryCategory::Others,
    ];

    pub fn id(self) -> &'static str {
        match self {
            SecondaryCategory::ContentInconsistency => "ContentInconsistency",
            SecondaryCategory::FormatInconsistency => "FormatInconsistency",
            SecondaryCategory::LengthInconsistency => "LengthInconsistency",
            SecondaryCategory::Truncation => "Truncation",
            SecondaryCategory::Duplicate => "Duplicate",
            SecondaryCategory::RefusalToAnswer => "RefusalToAnswer",
            SecondaryCategory::MissingAnswers => "MissingAnswers",
            SecondaryCategory::Noisy => "Noisy",
            SecondaryCategory::Typo => "Typo",
            SecondaryCategory::Hallucination => "Hallucination",
            SecondaryCategory::IncorrectAnswers => "IncorrectAnswers",
            SecondaryCategory::ProcessError => "ProcessError",
            SecondaryCategory::ResultError => "ResultError",
            SecondaryCategory::SafetyViolation => "SafetyViolation",
            SecondaryCategory::Others => "Others",
        }
    }

    /// English label used on the wire (gold files, rendered judgments).
    pub fn canonical_label(self) -> &'static str {
        match self {
            SecondaryCategory::ContentInconsistency => "Content Inconsistency",
            SecondaryCategory::FormatInconsistency => "Format Inconsistency",
            SecondaryCategory::LengthInconsistency => "Length Inconsistency",
            SecondaryCategory::Truncation => "Truncation",
            SecondaryCategory::Duplicate => "Duplicate",
            SecondaryCategory::RefusalToAnswer => "Refusal to Answer",
            SecondaryCategory::MissingAnswers => "Missing Answers",
            SecondaryCategory::Noisy => "Noisy",
            SecondaryCategory::Typo => "Typo",
            SecondaryCategory::Hallucination => "Hallucination",
            SecondaryCategory::IncorrectAnswers => "Incorrect Answers",
            SecondaryCategory::ProcessError => "Process Error",
            SecondaryCategory::ResultError => "Result Error",
            SecondaryCategory::SafetyViolation => "Safety",
            SecondaryCategory::Others => "Others",
        }
    }

    /// Reference parent mapping; the loaded registry is validated against it.
    pub fn parent(self) -> PrimaryCategory {
        use PrimaryCategory as P;
        use SecondaryCategory as S;
        match self {
            S::ContentInconsistency | S::FormatInconsistency | S::LengthInconsistency => {
                P::InstructionFollowing
            }
            S::Truncation
            | S::Duplicate
            | S::RefusalToAnswer
            | S::MissingAnswers
            | S::Noisy
            | S::Typo => P::ResponseQuality,
            S::Hallucination | S::IncorrectAnswers => P::KnowledgeAbility,
            S::ProcessError | S::ResultError => P::ReasoningCapability,
            S::SafetyViolation => P::Safety,
            S::Others => P::OtherErrors,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<SecondaryCategory> {
        SecondaryCategory::ALL.get(i).copied()
    }
}

impl fmt::Display for SecondaryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_label())
    }
}

impl FromStr for SecondaryCategory {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SecondaryCategory::ALL
            .into_iter()
            .find(|c| c.id() == s)
            .ok_or_else(|| TaxonomyError::UnknownId(s.to_string()))
    }
}

/// Total parent lookup.
pub fn parent_of(c: SecondaryCategory) -> PrimaryCategory {
    c.parent()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("empty category mention")]
    EmptyMention,
    #[error("unknown category id {0:?} in taxonomy file")]
    UnknownId(String),
    #[error("taxonomy file: {0}")]
    Format(String),
    #[error("reading taxonomy file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimaryDescriptor {
    pub id: PrimaryCategory,
    pub label_en: String,
    pub label_zh: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDescriptor {
    pub id: SecondaryCategory,
    pub parent: PrimaryCategory,
    pub label_en: String,
    pub label_zh: String,
    pub definition: String,
    #[serde(default)]
    pub aliases_en: Vec<String>,
    #[serde(default)]
    pub aliases_zh: Vec<String>,
}

impl CategoryDescriptor {
    pub fn label(&self, locale: Locale) -> &str {
        match locale {
            Locale::En => &self.label_en,
            Locale::Zh => &self.label_zh,
        }
    }

    pub fn aliases(&self, locale: Locale) -> &[String] {
        match locale {
            Locale::En => &self.aliases_en,
            Locale::Zh => &self.aliases_zh,
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct TaxonomyFile {
    version: String,
    #[serde(default)]
    primary: Vec<PrimaryRecord>,
    #[serde(default)]
    category: Vec<CategoryRecord>,
}

#[derive(Debug, Deserialize, Serialize)]
struct PrimaryRecord {
    id: String,
    label_en: String,
    label_zh: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct CategoryRecord {
    id: String,
    parent: String,
    label_en: String,
    label_zh: String,
    definition: String,
    #[serde(default)]
    aliases_en: Vec<String>,
    #[serde(default)]
    aliases_zh: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    PrimaryCardinality,
    SecondaryCardinality,
    DuplicateId,
    ParentMismatch,
    EmptyLabel,
    DuplicateLabel,
    EmptyDefinition,
    AliasConflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub version: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, message: String) {
        self.violations.push(Violation { kind, message });
    }
}

/// A loaded (not necessarily valid) category registry.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    version: String,
    primaries: Vec<PrimaryDescriptor>,
    descriptors: Vec<CategoryDescriptor>,
    index: HashMap<(Locale, String), SecondaryCategory>,
    primary_index: HashMap<(Locale, String), PrimaryCategory>,
}

impl Taxonomy {
    pub fn new(
        version: impl Into<String>,
        primaries: Vec<PrimaryDescriptor>,
        descriptors: Vec<CategoryDescriptor>,
    ) -> Self {
        let mut index = HashMap::new();
        for d in &descriptors {
            for locale in [Locale::En, Locale::Zh] {
                for name in std::iter::once(d.label(locale)).chain(d.aliases(locale).iter().map(String::as_str)) {
                    let key = normalize_mention(name);
                    if !key.is_empty() {
                        // first wins; conflicts are reported by validate()
                        index.entry((locale, key)).or_insert(d.id);
                    }
                }
            }
        }
        let mut primary_index = HashMap::new();
        for p in &primaries {
            primary_index.entry((Locale::En, normalize_mention(&p.label_en))).or_insert(p.id);
            primary_index.entry((Locale::Zh, normalize_mention(&p.label_zh))).or_insert(p.id);
        }
        Taxonomy { version: version.into(), primaries, descriptors, index, primary_index }
    }

    /// The bundled registry.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_TOML).expect("bundled taxonomy parses")
    }

    pub fn builtin_source() -> &'static str {
        BUILTIN_TOML
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = toml::from_str(text).map_err(|e| TaxonomyError::Format(e.to_string()))?;
        let primaries = file
            .primary
            .into_iter()
            .map(|r| {
                Ok(PrimaryDescriptor { id: r.id.parse()?, label_en: r.label_en, label_zh: r.label_zh })
            })
            .collect::<Result<Vec<_>, TaxonomyError>>()?;
        let descriptors = file
            .category
            .into_iter()
            .map(|r| {
                Ok(CategoryDescriptor {
                    id: r.id.parse()?,
                    parent: r.parent.parse()?,
                    label_en: r.label_en,
                    label_zh: r.label_zh,
                    definition: r.definition,
                    aliases_en: r.aliases_en,
                    aliases_zh: r.aliases_zh,
                })
            })
            .collect::<Result<Vec<_>, TaxonomyError>>()?;
        Ok(Taxonomy::new(file.version, primaries, descriptors))
    }

    pub fn to_toml_string(&self) -> String {
        let file = TaxonomyFile {
            version: self.version.clone(),
            primary: self
                .primaries
                .iter()
                .map(|p| PrimaryRecord {
                    id: p.id.id().to_string(),
                    label_en: p.label_en.clone(),
                    label_zh: p.label_zh.clone(),
                })
                .collect(),
            category: self
                .descriptors
                .iter()
                .map(|d| CategoryRecord {
                    id: d.id.id().to_string(),
                    parent: d.parent.id().to_string(),
                    label_en: d.label_en.clone(),
                    label_zh: d.label_zh.clone(),
                    definition: d.definition.clone(),
                    aliases_en: d.aliases_en.clone(),
                    aliases_zh: d.aliases_zh.clone(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("taxonomy serializes")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn descriptors(&self) -> &[CategoryDescriptor] {
        &self.descriptors
    }

    pub fn primaries(&self) -> &[PrimaryDescriptor] {
        &self.primaries
    }

    pub fn descriptor(&self, id: SecondaryCategory) -> Option<&CategoryDescriptor> {
        self.descriptors.iter().find(|d| d.id == id)
    }

    pub fn label(&self, id: SecondaryCategory, locale: Locale) -> &str {
        self.descriptor(id).map(|d| d.label(locale)).unwrap_or_else(|| id.canonical_label())
    }

    /// Parent as recorded in the registry, falling back to the reference
    /// mapping when the descriptor is absent.
    pub fn parent_of(&self, id: SecondaryCategory) -> PrimaryCategory {
        self.descriptor(id).map(|d| d.parent).unwrap_or_else(|| id.parent())
    }

    /// Resolves a free-text category mention in the given locale.
    ///
    /// Matching is exact after normalization (trim, case-fold, strip
    /// surrounding punctuation and brackets). A `"<first-level> - <label>"`
    /// compound resolves when the first-level part names the parent.
    pub fn resolve_category(&self, mention: &str, locale: Locale) -> Result<SecondaryCategory, TaxonomyError> {
        let key = normalize_mention(mention);
        if key.is_empty() {
            return Err(TaxonomyError::EmptyMention);
        }
        if let Some(&id) = self.index.get(&(locale, key.clone())) {
            return Ok(id);
        }
        for sep in ['-', '－', '—', '–', '/'] {
            if let Some((head, tail)) = key.split_once(sep) {
                let head = normalize_mention(head);
                let tail = normalize_mention(tail);
                if let (Some(&parent), Some(&id)) =
                    (self.primary_index.get(&(locale, head)), self.index.get(&(locale, tail)))
                {
                    if self.parent_of(id) == parent {
                        return Ok(id);
                    }
                }
            }
        }
        Err(TaxonomyError::UnknownCategory(mention.trim().to_string()))
    }

    pub fn validate(&self) -> ValidationReport {
        validate_taxonomy(self)
    }
}

/// Lists every invariant violation; an empty report means the registry is valid.
pub fn validate_taxonomy(t: &Taxonomy) -> ValidationReport {
    let mut report = ValidationReport { version: t.version.clone(), violations: Vec::new() };

    let primary_ids: BTreeSet<_> = t.primaries.iter().map(|p| p.id).collect();
    if t.primaries.len() != PRIMARY_CARDINALITY || primary_ids.len() != PRIMARY_CARDINALITY {
        report.push(
            ViolationKind::PrimaryCardinality,
            format!("primary cardinality {} ≠ {PRIMARY_CARDINALITY}", primary_ids.len()),
        );
    }
    if primary_ids.len() != t.primaries.len() {
        report.push(ViolationKind::DuplicateId, "duplicate first-level id".to_string());
    }

    let mut seen = BTreeSet::new();
    for d in &t.descriptors {
        if !seen.insert(d.id) {
            report.push(ViolationKind::DuplicateId, format!("duplicate second-level id {}", d.id.id()));
        }
    }
    if seen.len() != SECONDARY_CARDINALITY {
        report.push(
            ViolationKind::SecondaryCardinality,
            format!("secondary cardinality {} ≠ {SECONDARY_CARDINALITY}", seen.len()),
        );
    }

    for d in &t.descriptors {
        if d.parent != d.id.parent() {
            report.push(
                ViolationKind::ParentMismatch,
                format!("{} has parent {} (expected {})", d.id.id(), d.parent.id(), d.id.parent().id()),
            );
        }
        if !primary_ids.contains(&d.parent) {
            report.push(
                ViolationKind::ParentMismatch,
                format!("{} references undeclared first-level {}", d.id.id(), d.parent.id()),
            );
        }
        if d.definition.trim().is_empty() {
            report.push(ViolationKind::EmptyDefinition, format!("{} has an empty definition", d.id.id()));
        }
    }

    for locale in [Locale::En, Locale::Zh] {
        let mut labels: BTreeMap<&str, SecondaryCategory> = BTreeMap::new();
        for d in &t.descriptors {
            let label = d.label(locale);
            if label.trim().is_empty() {
                report.push(ViolationKind::EmptyLabel, format!("{} has an empty {locale} label", d.id.id()));
            } else if let Some(prev) = labels.insert(label, d.id) {
                if prev != d.id {
                    report.push(
                        ViolationKind::DuplicateLabel,
                        format!("{locale} label {label:?} used by {} and {}", prev.id(), d.id.id()),
                    );
                }
            }
        }

        let mut aliases: BTreeMap<String, BTreeSet<SecondaryCategory>> = BTreeMap::new();
        for d in &t.descriptors {
            for name in std::iter::once(d.label(locale)).chain(d.aliases(locale).iter().map(String::as_str)) {
                let key = normalize_mention(name);
                if !key.is_empty() {
                    aliases.entry(key).or_default().insert(d.id);
                }
            }
        }
        for (alias, ids) in aliases.iter().filter(|(_, ids)| ids.len() > 1) {
            let names: Vec<_> = ids.iter().map(|c| c.id()).collect();
            report.push(
                ViolationKind::AliasConflict,
                format!("{locale} alias {alias:?} maps to {}", names.join(", ")),
            );
        }
    }

    report
}

fn is_wrapping_char(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            c,
            '[' | ']' | '(' | ')' | '{' | '}' | '<' | '>' | '【' | '】' | '（' | '）' | '「' | '」'
                | '『' | '』' | '《' | '》' | '〈' | '〉' | '"' | '\'' | '“' | '”' | '‘' | '’' | '`'
                | '*' | '_' | '#' | '.' | ',' | ';' | ':' | '!' | '?' | '。' | '，' | '；' | '：'
                | '！' | '？' | '、'
        )
}

/// Case-folds, trims, strips surrounding punctuation/brackets and collapses
/// inner whitespace.
pub fn normalize_mention(s: &str) -> String {
    let stripped = s.trim_matches(is_wrapping_char);
    let mut out = String::with_capacity(stripped.len());
    for word in stripped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TABLE_DEFINITIONS: [(SecondaryCategory, &str); 3] = [
        (SecondaryCategory::Truncation, "The model’s response is cut short, resulting in an incomplete answer."),
        (SecondaryCategory::RefusalToAnswer, "The model refuses to provide an answer."),
        (SecondaryCategory::ProcessError, "This occurs when there are logical flaws in the reasoning process."),
    ];

    #[test]
    fn builtin_registry_is_valid() {
        let t = Taxonomy::builtin();
        let report = t.validate();
        assert!(report.is_valid(), "{:?}", report.violations);
        assert_eq!(t.descriptors().len(), 15);
        assert_eq!(t.primaries().len(), 6);
        for (id, def) in TABLE_DEFINITIONS {
            assert_eq!(t.descriptor(id).unwrap().definition, def);
        }
    }

    #[test]
    fn removing_a_category_is_reported() {
        let t = Taxonomy::builtin();
        let descriptors =
            t.descriptors().iter().filter(|d| d.id != SecondaryCategory::Hallucination).cloned().collect();
        let broken = Taxonomy::new(t.version(), t.primaries().to_vec(), descriptors);
        let report = broken.validate();
        assert!(report.violations.iter().any(|v| v.message == "secondary cardinality 14 ≠ 15"));
    }

    #[test]
    fn alias_collision_is_reported() {
        let t = Taxonomy::builtin();
        let mut descriptors = t.descriptors().to_vec();
        descriptors
            .iter_mut()
            .find(|d| d.id == SecondaryCategory::Noisy)
            .unwrap()
            .aliases_en
            .push("Hallucination".into());
        let broken = Taxonomy::new(t.version(), t.primaries().to_vec(), descriptors);
        let report = broken.validate();
        assert!(report.violations.iter().any(|v| v.kind == ViolationKind::AliasConflict
            && v.message.contains("hallucination")));
    }

    #[test]
    fn wrong_parent_is_reported() {
        let t = Taxonomy::builtin();
        let mut descriptors = t.descriptors().to_vec();
        descriptors[0].parent = PrimaryCategory::Safety;
        let report = Taxonomy::new("x", t.primaries().to_vec(), descriptors).validate();
        assert!(report.violations.iter().any(|v| v.kind == ViolationKind::ParentMismatch));
    }

    #[test]
    fn resolves_spec_examples() {
        let t = Taxonomy::builtin();
        assert_eq!(t.resolve_category("Refusal to Answer", Locale::En), Ok(SecondaryCategory::RefusalToAnswer));
        assert_eq!(t.resolve_category("幻觉", Locale::Zh), Ok(SecondaryCategory::Hallucination));
        assert_eq!(
            t.resolve_category("Banana", Locale::En),
            Err(TaxonomyError::UnknownCategory("Banana".into()))
        );
        assert_eq!(t.resolve_category("  ", Locale::En), Err(TaxonomyError::EmptyMention));
    }

    #[test]
    fn locale_is_not_guessed() {
        let t = Taxonomy::builtin();
        assert!(t.resolve_category("幻觉", Locale::En).is_err());
        assert!(t.resolve_category("Hallucination", Locale::Zh).is_err());
    }

    #[test]
    fn compound_first_level_prefix() {
        let t = Taxonomy::builtin();
        assert_eq!(
            t.resolve_category("Response Quality - Truncation", Locale::En),
            Ok(SecondaryCategory::Truncation)
        );
        assert_eq!(t.resolve_category("回复质量-截断", Locale::Zh), Ok(SecondaryCategory::Truncation));
        assert_eq!(t.resolve_category("知识能力 - 幻觉", Locale::Zh), Ok(SecondaryCategory::Hallucination));
        // wrong parent does not resolve
        assert!(t.resolve_category("Safety - Truncation", Locale::En).is_err());
    }

    #[test]
    fn parent_examples_and_partition() {
        assert_eq!(parent_of(SecondaryCategory::ProcessError), PrimaryCategory::ReasoningCapability);
        assert_eq!(parent_of(SecondaryCategory::Others), PrimaryCategory::OtherErrors);
        assert_eq!(parent_of(SecondaryCategory::Typo), PrimaryCategory::ResponseQuality);
        let mut sizes: Vec<usize> = PrimaryCategory::ALL
            .iter()
            .map(|&p| SecondaryCategory::ALL.iter().filter(|c| c.parent() == p).count())
            .collect();
        assert_eq!(sizes, vec![3, 6, 2, 2, 1, 1]);
        sizes.sort();
        assert_eq!(sizes.iter().sum::<usize>(), 15);
    }

    #[test]
    fn labels_round_trip_both_locales() {
        let t = Taxonomy::builtin();
        for d in t.descriptors() {
            for locale in [Locale::En, Locale::Zh] {
                assert_eq!(t.resolve_category(d.label(locale), locale), Ok(d.id), "{}", d.label(locale));
            }
        }
    }

    #[test]
    fn toml_round_trip() {
        let t = Taxonomy::builtin();
        let again = Taxonomy::from_toml_str(&t.to_toml_string()).unwrap();
        assert_eq!(again.descriptors(), t.descriptors());
        assert_eq!(again.version(), t.version());
    }

    #[test]
    fn unknown_id_in_file_fails_to_load() {
        let text = Taxonomy::builtin_source().replace("id = \"Noisy\"", "id = \"Noise\"");
        assert!(matches!(Taxonomy::from_toml_str(&text), Err(TaxonomyError::UnknownId(_))));
    }

    proptest! {
        #[test]
        fn resolution_ignores_case_space_and_brackets(
            idx in 0usize..15,
            upper in any::<bool>(),
            lead in "[ \t]{0,3}",
            trail in "[ \t\n]{0,3}",
            wrap in prop::sample::select(vec![("", ""), ("[", "]"), ("(", ")"), ("【", "】"), ("\"", "\""), ("**", "**")]),
        ) {
            let t = Taxonomy::builtin();
            let d = &t.descriptors()[idx];
            let label = if upper { d.label_en.to_uppercase() } else { d.label_en.to_lowercase() };
            let mention = format!("{lead}{}{label}{}{trail}", wrap.0, wrap.1);
            prop_assert_eq!(t.resolve_category(&mention, Locale::En), Ok(d.id));
            let zh = format!("{lead}{}{}{}{trail}", wrap.0, d.label_zh, wrap.1);
            prop_assert_eq!(t.resolve_category(&zh, Locale::Zh), Ok(d.id));
        }
    }
}
