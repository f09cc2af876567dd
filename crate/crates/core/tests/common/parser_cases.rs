//! Parser fixtures and generators shared by the parser suite and the
//! acceptance run.

use misattrib_core::label::{is_consistent, Locale, Misattribution, Score};
use misattrib_core::parser::{
    parse_judgment, render_judgment, render_judgment_localized, render_score_only, DiagnosticKind, Grammar,
    ParseOptions, UnknownCategoryPolicy,
};
use misattrib_core::taxonomy::{SecondaryCategory, Taxonomy};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use DiagnosticKind::*;
use SecondaryCategory::*;

pub enum Expect {
    Ok { score: u8, m: Option<Misattribution>, feedback: Option<&'static str>, diags: &'static [DiagnosticKind] },
    Err(&'static str),
}

pub struct Case {
    pub name: &'static str,
    pub raw: &'static str,
    pub opts: ParseOptions,
    pub expect: Expect,
}

pub fn en() -> ParseOptions {
    ParseOptions::new(Locale::En)
}

pub fn zh() -> ParseOptions {
    ParseOptions::new(Locale::Zh)
}

fn ok(score: u8, m: Option<Misattribution>, diags: &'static [DiagnosticKind]) -> Expect {
    Expect::Ok { score, m, feedback: None, diags }
}

fn c(cat: SecondaryCategory) -> Option<Misattribution> {
    Some(Misattribution::Category(cat))
}

const NULL: Option<Misattribution> = Some(Misattribution::Null);

pub fn adversarial_cases() -> Vec<Case> {
    vec![
        Case { name: "plain", raw: "A\nNULL\n3", opts: en(), expect: ok(3, NULL, &[]) },
        Case {
            name: "english label prefixes",
            raw: "Reason: fine\nMisattribution: NULL\nScore: 3",
            opts: en(),
            expect: Expect::Ok { score: 3, m: NULL, feedback: Some("fine"), diags: &[LabelPrefixStripped] },
        },
        Case { name: "interior blank lines", raw: "fine\n\nNULL\n\n3", opts: en(), expect: ok(3, NULL, &[BlankLinesCollapsed]) },
        Case { name: "outer blank lines", raw: "\n\nfine\nNULL\n3\n\n", opts: en(), expect: ok(3, NULL, &[]) },
        Case { name: "comma multi-category", raw: "bad\nHallucination, Typo\n1", opts: en(), expect: ok(1, c(Hallucination), &[MultiCategoryReduced]) },
        Case { name: "and multi-category", raw: "bad\nHallucination and Typo\n1", opts: en(), expect: ok(1, c(Hallucination), &[MultiCategoryReduced]) },
        Case { name: "chinese label", raw: "错误\n幻觉\n1", opts: zh(), expect: ok(1, c(Hallucination), &[]) },
        Case { name: "chinese multi-category", raw: "错误\n幻觉、错别字\n1", opts: zh(), expect: ok(1, c(Hallucination), &[MultiCategoryReduced]) },
        Case { name: "lowercase category", raw: "bad\nhallucination\n1", opts: en(), expect: ok(1, c(Hallucination), &[]) },
        Case { name: "primary-secondary compound", raw: "bad\nKnowledge Ability - Hallucination\n1", opts: en(), expect: ok(1, c(Hallucination), &[]) },
        Case { name: "safety", raw: "bad\nSafety\n0", opts: en(), expect: ok(0, c(SafetyViolation), &[]) },
        Case { name: "unknown category fallback", raw: "bad\nWeird Category\n1", opts: en(), expect: ok(1, None, &[UnknownCategoryFallback]) },
        Case {
            name: "unknown category reject",
            raw: "bad\nWeird Category\n1",
            opts: en().unknown_category(UnknownCategoryPolicy::Reject),
            expect: Expect::Err("UnknownCategory"),
        },
        Case { name: "score above range", raw: "bad\nHallucination\n5", opts: en(), expect: Expect::Err("ScoreOutOfRange") },
        Case { name: "negative score", raw: "bad\nHallucination\n-1", opts: en(), expect: Expect::Err("ScoreOutOfRange") },
        Case { name: "single line", raw: "only one line", opts: en(), expect: Expect::Err("Unparsable") },
        Case { name: "two lines in 3-line grammar", raw: "two\nlines", opts: en(), expect: Expect::Err("Unparsable") },
        Case { name: "empty", raw: "", opts: en(), expect: Expect::Err("Unparsable") },
        Case { name: "whitespace only", raw: "   \n\n  ", opts: en(), expect: Expect::Err("Unparsable") },
        Case { name: "score with suffix", raw: "bad\nHallucination\nScore: 2/3", opts: en(), expect: ok(2, c(Hallucination), &[LabelPrefixStripped, ScoreCoerced]) },
        Case { name: "fullwidth digit", raw: "bad\nHallucination\n２", opts: en(), expect: ok(2, c(Hallucination), &[ScoreCoerced]) },
        Case { name: "chinese numeral", raw: "错误\n幻觉\n二分", opts: zh(), expect: ok(2, c(Hallucination), &[ScoreCoerced]) },
        Case { name: "spelled-out score", raw: "fine\nNULL\nthree", opts: en(), expect: Expect::Err("Unparsable") },
        Case { name: "category with perfect score", raw: "fine\nHallucination\n3", opts: en(), expect: ok(3, c(Hallucination), &[ConsistencyViolation]) },
        Case { name: "null with low score", raw: "bad\nNULL\n1", opts: en(), expect: ok(1, NULL, &[ConsistencyViolation]) },
        Case {
            name: "multi-line feedback",
            raw: "line one\nline two\nTypo\n2",
            opts: en(),
            expect: Expect::Ok { score: 2, m: c(Typo), feedback: Some("line one\nline two"), diags: &[] },
        },
        Case {
            name: "markdown bold labels",
            raw: "**Reason:** ok\n**Misattribution:** NULL\n**Score:** 3",
            opts: en(),
            expect: Expect::Ok { score: 3, m: NULL, feedback: Some("ok"), diags: &[LabelPrefixStripped] },
        },
        Case { name: "bulleted lines", raw: "- ok\n- NULL\n- 3", opts: en(), expect: ok(3, NULL, &[LabelPrefixStripped]) },
        Case {
            name: "chinese label prefixes",
            raw: "评估理由：回答正确\n错误归因：NULL\n分数：3",
            opts: zh(),
            expect: Expect::Ok { score: 3, m: NULL, feedback: Some("回答正确"), diags: &[LabelPrefixStripped] },
        },
        Case { name: "lowercase null", raw: "ok\nnull\n3", opts: en(), expect: ok(3, NULL, &[]) },
        Case { name: "crlf line endings", raw: "bad\r\nTypo\r\n1\r\n", opts: en(), expect: ok(1, c(Typo), &[]) },
        Case { name: "two-line grammar", raw: "reason\n2", opts: en().grammar(Grammar::TwoLine), expect: ok(2, None, &[]) },
        Case { name: "two-line grammar too short", raw: "2", opts: en().grammar(Grammar::TwoLine), expect: Expect::Err("Unparsable") },
        Case { name: "english label under chinese locale", raw: "错误\nHallucination\n1", opts: zh(), expect: ok(1, None, &[UnknownCategoryFallback]) },
    ]
}

/// Compares one case against its expectation.
pub fn check_case(case: &Case, t: &Taxonomy) -> Result<(), String> {
    let got = parse_judgment(case.raw, case.opts, t);
    match (&case.expect, got) {
        (Expect::Ok { score, m, feedback, diags }, Ok(j)) => {
            let mut kinds: Vec<String> = j.diagnostics.iter().map(|d| format!("{:?}", d.kind)).collect();
            kinds.sort();
            kinds.dedup();
            let mut want: Vec<String> = diags.iter().map(|k| format!("{k:?}")).collect();
            want.sort();
            let fb_ok = feedback.is_none_or(|f| j.feedback == f);
            if j.score.value() != *score || j.misattribution != *m || !fb_ok || kinds != want || j.raw != case.raw {
                return Err(format!("{}: got {j:?}", case.name));
            }
            Ok(())
        }
        (Expect::Err(code), Err(e)) if e.code() == *code => Ok(()),
        (_, got) => Err(format!("{}: unexpected {got:?}", case.name)),
    }
}

const WORDS: &[&str] = &[
    "the", "answer", "omits", "step", "two", "and", "misreads", "units", "while", "reference", "states", "42",
    "答案", "遗漏", "了", "关键", "步骤", "单位", "错误", "(see", "note)", "x=3,", "y:", "ok.", "NULL-ish", "分数",
];

pub fn random_feedback(r: &mut impl Rng) -> String {
    let n = r.random_range(1..12);
    let mut words: Vec<&str> = (0..n).map(|_| *WORDS.choose(r).unwrap()).collect();
    // keep the first word clear of label and bullet syntax
    words.insert(0, ["Overall", "The", "模型", "Here"].choose(r).copied().unwrap());
    words.join(" ")
}

pub fn random_label(r: &mut impl Rng) -> (Score, Misattribution) {
    if r.random_bool(0.4) {
        (Score::new(3).unwrap(), Misattribution::Null)
    } else {
        let c = *SecondaryCategory::ALL.choose(r).unwrap();
        (Score::new(r.random_range(0..=2)).unwrap(), Misattribution::Category(c))
    }
}

/// Renders `n` random judgments in both grammars and parses them back.
pub fn round_trip(n: usize, seed: u64) -> Result<(), String> {
    let t = Taxonomy::builtin();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let feedback = random_feedback(&mut r);
        let (score, m) = random_label(&mut r);
        assert!(is_consistent(score, m));
        let locale = if i % 2 == 0 { Locale::En } else { Locale::Zh };
        let raw = match (locale, i % 4) {
            (Locale::En, 0) => render_judgment(&feedback, m, score),
            _ => render_judgment_localized(&feedback, m, score, &t, locale),
        };
        let j = parse_judgment(&raw, ParseOptions::new(locale), &t).map_err(|e| format!("{raw:?}: {e}"))?;
        if j.feedback != feedback || j.score != score || j.misattribution != Some(m) || !j.diagnostics.is_empty() {
            return Err(format!("{raw:?} parsed as {j:?}"));
        }
        let two = render_score_only(&feedback, score);
        let j = parse_judgment(&two, ParseOptions::new(locale).grammar(Grammar::TwoLine), &t)
            .map_err(|e| format!("{two:?}: {e}"))?;
        if j.feedback != feedback || j.score != score || j.misattribution.is_some() {
            return Err(format!("{two:?} parsed as {j:?}"));
        }
    }
    Ok(())
}

/// Parses `n` random inputs under four option sets. Returns how many
/// parsed successfully; any panic propagates.
pub fn fuzz(n: usize, seed: u64) -> usize {
    let t = Taxonomy::builtin();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let fragments: &[&str] = &[
        "\n", "\r\n", "NULL", "Score:", "分数：", "Hallucination", "幻觉", ",", "、", "**", "- ", "3", "-7", "９",
        "三", " and ", "Knowledge Ability - ", "：", ":", "99999999999999999999999",
    ];
    let mut parsed = 0;
    for i in 0..n {
        let s = if i % 2 == 0 {
            let len = r.random_range(0..200);
            let bytes: Vec<u8> = (0..len).map(|_| r.random()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        } else {
            let k = r.random_range(0..30);
            (0..k).map(|_| *fragments.choose(&mut r).unwrap()).collect()
        };
        for opts in [en(), zh(), en().grammar(Grammar::TwoLine), zh().unknown_category(UnknownCategoryPolicy::Reject)] {
            if let Ok(j) = parse_judgment(&s, opts, &t) {
                assert!(j.score.value() <= 3);
                parsed += 1;
            }
        }
    }
    parsed
}
