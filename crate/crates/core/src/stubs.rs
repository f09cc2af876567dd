//! Offline judge backends for tests, demos and cassette recording.
//!
//! Each stub indexes the judge prompts of a corpus at construction and
//! answers by looking the prompt up, so it goes through the same render,
//! invoke and parse path as a real judge.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{Corpus, CorpusItem, GoldLabel};
use crate::gateway::{BackendError, Decoding, JudgeBackend};
use crate::label::{Locale, Misattribution, Score};
use crate::parser::{render_judgment_localized, render_score_only, Grammar};
use crate::seed::{derive_seed, rng};
use crate::taxonomy::{SecondaryCategory, Taxonomy};
use crate::templates::TemplateSet;

#[derive(Debug, Clone)]
struct Indexed {
    item_id: String,
    locale: Locale,
    grammar: Grammar,
}

/// Rendered judge prompt → the item and grammar it was rendered for.
#[derive(Debug, Clone, Default)]
pub struct PromptIndex {
    by_prompt: HashMap<String, Indexed>,
}

impl PromptIndex {
    pub fn build<'a>(items: impl IntoIterator<Item = &'a CorpusItem>, templates: &TemplateSet) -> Self {
        let mut by_prompt = HashMap::new();
        for item in items {
            for grammar in [Grammar::ThreeLine, Grammar::TwoLine] {
                if let Ok(p) = templates.judge(item.locale, grammar).render(item) {
                    by_prompt.insert(p, Indexed { item_id: item.id.clone(), locale: item.locale, grammar });
                }
            }
        }
        PromptIndex { by_prompt }
    }

    pub fn len(&self) -> usize {
        self.by_prompt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_prompt.is_empty()
    }

    fn lookup(&self, prompt: &str) -> Result<&Indexed, BackendError> {
        self.by_prompt.get(prompt).ok_or_else(|| BackendError::Permanent("prompt is not indexed by this stub".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Verdict {
    score: Score,
    misattribution: Misattribution,
    feedback: String,
}

fn render(v: &Verdict, at: &Indexed, taxonomy: &Taxonomy) -> String {
    match at.grammar {
        Grammar::ThreeLine => render_judgment_localized(&v.feedback, v.misattribution, v.score, taxonomy, at.locale),
        Grammar::TwoLine => render_score_only(&v.feedback, v.score),
    }
}

fn gold_map(corpus: &Corpus) -> HashMap<String, GoldLabel> {
    corpus.gold_labels().map(|g| (g.item_id.clone(), g.clone())).collect()
}

/// Answers every prompt with the rendered gold label of its item.
pub struct GoldReplayBackend {
    index: PromptIndex,
    gold: HashMap<String, GoldLabel>,
    taxonomy: Taxonomy,
}

impl GoldReplayBackend {
    pub const NAME: &'static str = "gold-replay";

    pub fn new(corpus: &Corpus, templates: &TemplateSet, taxonomy: Taxonomy) -> Self {
        GoldReplayBackend { index: PromptIndex::build(corpus.items(), templates), gold: gold_map(corpus), taxonomy }
    }
}

impl JudgeBackend for GoldReplayBackend {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn complete(&self, prompt: &str, _: &Decoding) -> Result<String, BackendError> {
        let at = self.index.lookup(prompt)?;
        let g = self.gold.get(&at.item_id).ok_or_else(|| BackendError::Permanent(format!("no gold for {}", at.item_id)))?;
        let v = Verdict { score: g.score, misattribution: g.misattribution, feedback: g.feedback.clone() };
        Ok(render(&v, at, &self.taxonomy))
    }
}

/// Target operating point of [`ProgrammedJudge`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionProgram {
    /// detection precision
    pub precision: f64,
    /// detection recall
    pub recall: f64,
    /// share of gold-misattributed items given the gold category
    pub accuracy: f64,
}

impl Default for ConfusionProgram {
    fn default() -> Self {
        ConfusionProgram { precision: 0.85, recall: 0.95, accuracy: 0.80 }
    }
}

type VerdictTable = Arc<HashMap<String, Verdict>>;

/// A judge whose detection confusion matrix and category accuracy are
/// fixed in advance.
///
/// For every sampling seed it draws a seeded permutation of the positives
/// and of the negatives and flags exact quotas: `round(R·pos)` positives,
/// of which `round(A·pos)` get the gold category, and
/// `round(tp·(1-P)/P)` negatives.
pub struct ProgrammedJudge {
    name: String,
    index: PromptIndex,
    gold: HashMap<String, GoldLabel>,
    taxonomy: Taxonomy,
    program: ConfusionProgram,
    seed: u64,
    tables: Mutex<HashMap<Option<u64>, VerdictTable>>,
}

impl ProgrammedJudge {
    pub const NAME: &'static str = "programmed";

    pub fn new(
        corpus: &Corpus,
        templates: &TemplateSet,
        taxonomy: Taxonomy,
        program: ConfusionProgram,
        seed: u64,
    ) -> Self {
        assert!(program.accuracy <= program.recall, "category accuracy cannot exceed recall");
        ProgrammedJudge {
            name: Self::NAME.to_string(),
            index: PromptIndex::build(corpus.items(), templates),
            gold: gold_map(corpus),
            taxonomy,
            program,
            seed,
            tables: Mutex::new(HashMap::new()),
        }
    }

    pub fn program(&self) -> ConfusionProgram {
        self.program
    }

    fn table(&self, sampling: Option<u64>) -> VerdictTable {
        let mut tables = self.tables.lock().unwrap();
        tables.entry(sampling).or_insert_with(|| Arc::new(self.build_table(sampling))).clone()
    }

    fn build_table(&self, sampling: Option<u64>) -> HashMap<String, Verdict> {
        let s = sampling.map(|v| v.to_string()).unwrap_or_default();
        let order = |id: &str| derive_seed(self.seed, &["programmed", &s, id]);
        let mut pos: Vec<&GoldLabel> = self.gold.values().filter(|g| g.has_error()).collect();
        let mut neg: Vec<&GoldLabel> = self.gold.values().filter(|g| !g.has_error()).collect();
        pos.sort_by_key(|g| (order(&g.item_id), g.item_id.clone()));
        neg.sort_by_key(|g| (order(&g.item_id), g.item_id.clone()));

        let p = self.program;
        let tp = (p.recall * pos.len() as f64).round() as usize;
        let correct = ((p.accuracy * pos.len() as f64).round() as usize).min(tp);
        let fp = if p.precision > 0.0 {
            ((tp as f64 * (1.0 - p.precision) / p.precision).round() as usize).min(neg.len())
        } else {
            neg.len()
        };

        let mut out = HashMap::new();
        let mut r = rng(self.seed, &["programmed-labels", &s]);
        for (i, g) in pos.iter().enumerate() {
            let v = if i < correct {
                flagged(g.misattribution.category().unwrap(), g.score, &g.item_id)
            } else if i < tp {
                let wrong = other_category(g.misattribution.category().unwrap(), &mut r);
                flagged(wrong, g.score, &g.item_id)
            } else {
                clean(&g.item_id)
            };
            out.insert(g.item_id.clone(), v);
        }
        for (i, g) in neg.iter().enumerate() {
            let v = if i < fp {
                let c = *SecondaryCategory::ALL.choose(&mut r).unwrap();
                flagged(c, Score::new(r.random_range(0..=2)).unwrap(), &g.item_id)
            } else {
                clean(&g.item_id)
            };
            out.insert(g.item_id.clone(), v);
        }
        out
    }
}

fn flagged(c: SecondaryCategory, score: Score, id: &str) -> Verdict {
    let score = if score.is_perfect() { Score::new(2).unwrap() } else { score };
    Verdict { score, misattribution: Misattribution::Category(c), feedback: format!("The answer to {id} has a flaw.") }
}

fn clean(id: &str) -> Verdict {
    Verdict { score: Score::new(3).unwrap(), misattribution: Misattribution::Null, feedback: format!("The answer to {id} is correct.") }
}

fn other_category(c: SecondaryCategory, r: &mut impl Rng) -> SecondaryCategory {
    let others: Vec<SecondaryCategory> = SecondaryCategory::ALL.iter().copied().filter(|&x| x != c).collect();
    *others.choose(r).unwrap()
}

impl JudgeBackend for ProgrammedJudge {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str, decoding: &Decoding) -> Result<String, BackendError> {
        let at = self.index.lookup(prompt)?;
        let table = self.table(decoding.seed);
        let v = table.get(&at.item_id).ok_or_else(|| BackendError::Permanent(format!("no gold for {}", at.item_id)))?;
        Ok(render(v, at, &self.taxonomy))
    }
}

/// A judge that calls nearly everything erroneous: it passes only a
/// `pass_rate` share of items (chosen by seeded permutation) and gives the
/// rest a score below 3.
pub struct FlagEverythingJudge {
    index: PromptIndex,
    ids: Vec<String>,
    taxonomy: Taxonomy,
    pass_rate: f64,
    seed: u64,
    tables: Mutex<HashMap<Option<u64>, VerdictTable>>,
}

impl FlagEverythingJudge {
    pub const NAME: &'static str = "flag-everything";
    pub const DEFAULT_PASS_RATE: f64 = 0.002;

    pub fn new(corpus: &Corpus, templates: &TemplateSet, taxonomy: Taxonomy, seed: u64) -> Self {
        FlagEverythingJudge {
            index: PromptIndex::build(corpus.items(), templates),
            ids: corpus.items().map(|i| i.id.clone()).collect(),
            taxonomy,
            pass_rate: Self::DEFAULT_PASS_RATE,
            seed,
            tables: Mutex::new(HashMap::new()),
        }
    }

    fn table(&self, sampling: Option<u64>) -> VerdictTable {
        let mut tables = self.tables.lock().unwrap();
        tables
            .entry(sampling)
            .or_insert_with(|| {
                let s = sampling.map(|v| v.to_string()).unwrap_or_default();
                let mut ids = self.ids.clone();
                ids.sort_by_key(|id| (derive_seed(self.seed, &["flag-everything", &s, id]), id.clone()));
                let passes = (self.pass_rate * ids.len() as f64).round() as usize;
                let mut r = rng(self.seed, &["flag-everything-labels", &s]);
                let table = ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| {
                        let v = if i < passes {
                            clean(id)
                        } else {
                            let c = *SecondaryCategory::ALL.choose(&mut r).unwrap();
                            flagged(c, Score::new(r.random_range(0..=2)).unwrap(), id)
                        };
                        (id.clone(), v)
                    })
                    .collect();
                Arc::new(table)
            })
            .clone()
    }
}

impl JudgeBackend for FlagEverythingJudge {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn complete(&self, prompt: &str, decoding: &Decoding) -> Result<String, BackendError> {
        let at = self.index.lookup(prompt)?;
        let table = self.table(decoding.seed);
        Ok(render(&table[&at.item_id], at, &self.taxonomy))
    }
}
