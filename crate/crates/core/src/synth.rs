//! Seeded synthetic corpora for tests, benchmarks and demos.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::corpus::{Corpus, CorpusItem, GoldLabel, QuestionCategory, Split};
use crate::label::{Locale, Misattribution, Score};
use crate::seed::rng;
use crate::taxonomy::{PrimaryCategory, SecondaryCategory};

/// Question-category counts of the reference dataset shape.
pub const QUESTION_CATEGORY_COUNTS: [(QuestionCategory, usize); 6] = [
    (QuestionCategory::NlpBasic, 2657),
    (QuestionCategory::TextGeneration, 2715),
    (QuestionCategory::QuestionAndAnswer, 2383),
    (QuestionCategory::Reasoning, 6335),
    (QuestionCategory::Math, 4965),
    (QuestionCategory::ProfessionalField, 2647),
];

/// First-level misattribution counts of the reference dataset shape.
pub const PRIMARY_MISATTRIBUTION_COUNTS: [(PrimaryCategory, usize); 6] = [
    (PrimaryCategory::ResponseQuality, 400),
    (PrimaryCategory::InstructionFollowing, 725),
    (PrimaryCategory::KnowledgeAbility, 1925),
    (PrimaryCategory::ReasoningCapability, 4839),
    (PrimaryCategory::OtherErrors, 129),
    (PrimaryCategory::Safety, 8),
];

pub const TRAIN_SIZE: usize = 18_806;
pub const TEST_SIZE: usize = 2_896;
/// misattributed items placed in the test split
pub const TEST_MISATTRIBUTED: usize = 949;

const SUBJECTS: &[&str] = &[
    "the derivation",
    "the final number",
    "the cited date",
    "the requested format",
    "the word limit",
    "the second paragraph",
    "the unit conversion",
    "the named entity",
];

const FLAWS: &[&str] = &[
    "misstates",
    "omits",
    "repeats",
    "contradicts the reference on",
    "handles correctly but truncates",
    "invents details about",
];

fn children(p: PrimaryCategory) -> Vec<SecondaryCategory> {
    SecondaryCategory::ALL.iter().copied().filter(|c| c.parent() == p).collect()
}

fn error_score(r: &mut impl Rng) -> Score {
    Score::new(r.random_range(0..=2)).unwrap()
}

fn feedback(r: &mut impl Rng, m: Misattribution) -> String {
    match m {
        Misattribution::Null => "The answer matches the reference and has no errors.".into(),
        Misattribution::Category(_) => {
            format!("The answer {} {}.", FLAWS.choose(r).unwrap(), SUBJECTS.choose(r).unwrap())
        }
    }
}

fn item(id: String, qc: QuestionCategory, locale: Locale, split: Split) -> CorpusItem {
    let (question, model_answer, reference_answer) = match locale {
        Locale::En => (format!("Question {id}: explain the result."), format!("Model answer for {id}."), format!("Reference answer for {id}.")),
        Locale::Zh => (format!("问题 {id}：请解释结果。"), format!("{id} 的模型回答。"), format!("{id} 的参考答案。")),
    };
    CorpusItem { id, question, reference_answer, model_answer, question_category: qc, locale, split }
}

/// Full-size corpus shaped to the reference dataset statistics: split
/// sizes, question categories, and first-level misattribution counts.
/// Second-level categories are spread round-robin over each parent's
/// children.
pub fn reference_shape_corpus(seed: u64) -> Corpus {
    let mut r = rng(seed, &["reference-shape"]);
    let mut errors: Vec<Misattribution> = Vec::new();
    for (p, n) in PRIMARY_MISATTRIBUTION_COUNTS {
        let kids = children(p);
        errors.extend((0..n).map(|i| Misattribution::Category(kids[i % kids.len()])));
    }
    errors.shuffle(&mut r);
    let total = TRAIN_SIZE + TEST_SIZE;
    let nulls = total - errors.len();
    let test_nulls = TEST_SIZE - TEST_MISATTRIBUTED;

    let mut labels: Vec<(Split, Misattribution)> = Vec::with_capacity(total);
    labels.extend(errors[..TEST_MISATTRIBUTED].iter().map(|&m| (Split::Test, m)));
    labels.extend(errors[TEST_MISATTRIBUTED..].iter().map(|&m| (Split::Train, m)));
    labels.extend((0..test_nulls).map(|_| (Split::Test, Misattribution::Null)));
    labels.extend((test_nulls..nulls).map(|_| (Split::Train, Misattribution::Null)));
    labels.shuffle(&mut r);

    let mut cats: Vec<QuestionCategory> =
        QUESTION_CATEGORY_COUNTS.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect();
    cats.shuffle(&mut r);

    let mut corpus = Corpus::new();
    for (i, ((split, m), qc)) in labels.into_iter().zip(cats).enumerate() {
        let id = format!("attri-{i:05}");
        let locale = if r.random_bool(0.5) { Locale::En } else { Locale::Zh };
        let score = if m.is_null() { Score::new(3).unwrap() } else { error_score(&mut r) };
        let gold = GoldLabel { item_id: id.clone(), score, misattribution: m, feedback: feedback(&mut r, m), feedback_verified: true };
        corpus.insert(item(id, qc, locale, split), Some(gold)).expect("synthetic records are valid");
    }
    corpus
}

/// `n` gold-labelled test items, mixed locales, about 37% misattributed
/// across all fifteen categories.
pub fn gold_fixture(n: usize, seed: u64) -> Corpus {
    gold_fixture_in(n, seed, Split::Test)
}

pub fn gold_fixture_in(n: usize, seed: u64, split: Split) -> Corpus {
    let mut r = rng(seed, &["gold-fixture"]);
    let mut corpus = Corpus::new();
    for i in 0..n {
        let id = format!("g{seed}-{i:05}");
        let m = if r.random_bool(0.37) {
            Misattribution::Category(*SecondaryCategory::ALL.choose(&mut r).unwrap())
        } else {
            Misattribution::Null
        };
        let score = if m.is_null() { Score::new(3).unwrap() } else { error_score(&mut r) };
        let locale = if r.random_bool(0.5) { Locale::En } else { Locale::Zh };
        let qc = *QuestionCategory::ALL.choose(&mut r).unwrap();
        let gold = GoldLabel { item_id: id.clone(), score, misattribution: m, feedback: feedback(&mut r, m), feedback_verified: true };
        corpus.insert(item(id, qc, locale, split), Some(gold)).expect("synthetic records are valid");
    }
    corpus
}

/// Three annotations for one scripted task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedTask {
    pub item_id: String,
    pub annotations: [(Score, Misattribution); 3],
}

impl ScriptedTask {
    pub fn is_unanimous(&self) -> bool {
        self.annotations.iter().all(|a| *a == self.annotations[0])
    }
}

/// `n` annotation scripts of which exactly `unanimous` agree fully; the
/// rest have one dissenting annotator. Order is shuffled by `seed`.
pub fn workflow_script(n: usize, unanimous: usize, seed: u64) -> Vec<ScriptedTask> {
    assert!(unanimous <= n);
    let mut r = rng(seed, &["workflow-script"]);
    let mut out: Vec<ScriptedTask> = (0..n)
        .map(|i| {
            let label = if r.random_bool(0.5) {
                (Score::new(3).unwrap(), Misattribution::Null)
            } else {
                (error_score(&mut r), Misattribution::Category(*SecondaryCategory::ALL.choose(&mut r).unwrap()))
            };
            let mut annotations = [label; 3];
            if i >= unanimous {
                let other = if label.1.is_null() {
                    (Score::new(1).unwrap(), Misattribution::Category(SecondaryCategory::IncorrectAnswers))
                } else {
                    (Score::new(3).unwrap(), Misattribution::Null)
                };
                annotations[r.random_range(0..3)] = other;
            }
            ScriptedTask { item_id: format!("w-{i:04}"), annotations }
        })
        .collect();
    out.shuffle(&mut r);
    out
}
