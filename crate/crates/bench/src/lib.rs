//! Seeded inputs shared by the benchmarks.

use misattrib_core::label::{Locale, Misattribution, Score};
use misattrib_core::parser::render_judgment_localized;
use misattrib_core::seed::rng;
use misattrib_core::taxonomy::{SecondaryCategory, Taxonomy};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Gold scores on the 0..=3 scale paired with noisy judge scores.
pub fn score_pairs(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed, &["bench-scores"]);
    let gold: Vec<f64> = (0..n).map(|_| r.random_range(0..=3) as f64).collect();
    let pred = gold
        .iter()
        .map(|g| if r.random_bool(0.7) { *g } else { r.random_range(0..=3) as f64 })
        .collect();
    (gold, pred)
}

/// Per-item category counts for `raters` raters over `k` categories.
pub fn rating_counts(n: usize, k: usize, raters: u64, seed: u64) -> Vec<Vec<u64>> {
    let mut r = rng(seed, &["bench-fleiss"]);
    (0..n)
        .map(|_| {
            let mut row = vec![0u64; k];
            for _ in 0..raters {
                row[r.random_range(0..k)] += 1;
            }
            row
        })
        .collect()
}

/// Well-formed three-line judge outputs in both locales.
pub fn judge_outputs(n: usize, seed: u64, taxonomy: &Taxonomy) -> Vec<(Locale, String)> {
    let mut r = rng(seed, &["bench-outputs"]);
    (0..n)
        .map(|i| {
            let locale = if i % 2 == 0 { Locale::En } else { Locale::Zh };
            let (m, score) = if r.random_bool(0.4) {
                (Misattribution::Null, 3)
            } else {
                (Misattribution::Category(*SecondaryCategory::ALL.choose(&mut r).unwrap()), r.random_range(0..=2))
            };
            let text = render_judgment_localized(
                "The answer drops a unit in the second step and the final value is off.",
                m,
                Score::new(score).unwrap(),
                taxonomy,
                locale,
            );
            (locale, text)
        })
        .collect()
}
