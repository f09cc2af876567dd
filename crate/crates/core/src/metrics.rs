//! Agreement statistics between judge output and gold labels.
//!
//! Correlations (Pearson, Spearman with average ranks, Kendall tau-b),
//! binary detection P/R/F1, single-label multi-class accuracy and micro-F1,
//! Fleiss' kappa, and pairwise win/tie/lose aggregation.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Misattribution;
use crate::taxonomy::{SecondaryCategory, SECONDARY_CARDINALITY};

pub const KENDALL_VARIANT: &str = "tau-b";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("gold label at position {0} is NULL")]
    GoldContainsNull(usize),
    #[error("row {row} sums to {sum}, expected {expected}")]
    RowSumMismatch { row: usize, sum: u64, expected: u64 },
    #[error("expected agreement is 1 (all ratings in one category)")]
    DegenerateAgreement,
    #[error("empty input")]
    EmptyInput,
    #[error("raters per item must be at least 2, got {0}")]
    InvalidRaters(u64),
}

impl MetricError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricError::LengthMismatch { .. } => "LengthMismatch",
            MetricError::DegenerateInput(_) => "DegenerateInput",
            MetricError::GoldContainsNull(_) => "GoldContainsNull",
            MetricError::RowSumMismatch { .. } => "RowSumMismatch",
            MetricError::DegenerateAgreement => "DegenerateAgreement",
            MetricError::EmptyInput => "EmptyInput",
            MetricError::InvalidRaters(_) => "InvalidRaters",
        }
    }
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<(), MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(MetricError::DegenerateInput(format!("length {} < 2", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricError::DegenerateInput("non-finite value".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    check_pair(xs, ys)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their rank block.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort that returns the number of inversions.
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    check_pair(xs, ys)?;
    let n = xs.len() as u64;
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal)));

    let sorted_x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tied_x = tied_pairs(&sorted_x);
    let mut tied_xy = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            tied_xy += run * (run - 1) / 2;
            run = 1;
        }
    }
    tied_xy += run * (run - 1) / 2;

    let mut ys_sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys_sorted.len()];
    let swaps = sort_counting_swaps(&mut ys_sorted, &mut buf);
    let tied_y = tied_pairs(&ys_sorted);

    let total = n * (n - 1) / 2;
    let (dx, dy) = (total - tied_x, total - tied_y);
    if dx == 0 || dy == 0 {
        return Err(MetricError::DegenerateInput("zero variance".into()));
    }
    // concordant - discordant
    let numerator = total as i128 - tied_x as i128 - tied_y as i128 + tied_xy as i128 - 2 * swaps as i128;
    let tau = numerator as f64 / ((dx as f64).sqrt() * (dy as f64).sqrt());
    Ok(tau.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTriple {
    pub pearson: f64,
    pub spearman: f64,
    pub kendall_tau: f64,
    pub n: usize,
    pub kendall_variant: String,
}

pub fn correlation_triple(xs: &[f64], ys: &[f64]) -> Result<CorrelationTriple, MetricError> {
    Ok(CorrelationTriple {
        pearson: pearson(xs, ys)?,
        spearman: spearman(xs, ys)?,
        kendall_tau: kendall_tau(xs, ys)?,
        n: xs.len(),
        kendall_variant: KENDALL_VARIANT.to_string(),
    })
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Binary detection counts, positives being "has error".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// names of quantities whose denominator was zero and were reported as 0
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl DetectionReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let mut degenerate = Vec::new();
        let precision = ratio(tp, tp + fp).unwrap_or_else(|| {
            degenerate.push("precision".to_string());
            0.0
        });
        let recall = ratio(tp, tp + fn_).unwrap_or_else(|| {
            degenerate.push("recall".to_string());
            0.0
        });
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            degenerate.push("f1".to_string());
            0.0
        };
        DetectionReport { tp, fp, fn_, tn, precision, recall, f1, degenerate }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn detection_metrics(gold: &[bool], pred: &[bool]) -> Result<DetectionReport, MetricError> {
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch { left: gold.len(), right: pred.len() });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&g, &p) in gold.iter().zip(pred) {
        match (g, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(DetectionReport::from_counts(tp, fp, fn_, tn))
}

/// How an abstention (NULL or missing attribution on a gold-misattributed
/// item) enters micro-F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstentionMode {
    /// one FN, no FP
    #[default]
    FnOnly,
    /// treated as a synthetic wrong label: one FP and one FN
    Strict,
}

impl fmt::Display for AbstentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbstentionMode::FnOnly => "fn_only",
            AbstentionMode::Strict => "strict",
        })
    }
}

/// Row/column index of the abstain bucket in the confusion matrix.
pub const ABSTAIN_INDEX: usize = SECONDARY_CARDINALITY;
pub const CONFUSION_DIM: usize = SECONDARY_CARDINALITY + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassReport {
    pub n_evaluated: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub micro_f1: f64,
    /// `confusion[predicted][gold]`; row 15 is abstain/unparsable
    pub confusion: Vec<Vec<u64>>,
    pub abstentions: u64,
    pub abstention_mode: AbstentionMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

/// Single-label multi-class scoring over gold-misattributed items.
///
/// `pred[i] == None` or `Some(Misattribution::Null)` is an abstention.
pub fn multiclass_metrics(
    gold: &[Misattribution],
    pred: &[Option<Misattribution>],
    mode: AbstentionMode,
) -> Result<MulticlassReport, MetricError> {
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch { left: gold.len(), right: pred.len() });
    }
    let mut confusion = vec![vec![0u64; CONFUSION_DIM]; CONFUSION_DIM];
    let (mut correct, mut wrong, mut abstentions) = (0u64, 0u64, 0u64);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let g = g.category().ok_or(MetricError::GoldContainsNull(i))?;
        match p.and_then(Misattribution::category) {
            Some(p) => {
                confusion[p.index()][g.index()] += 1;
                if p == g {
                    correct += 1;
                } else {
                    wrong += 1;
                }
            }
            None => {
                confusion[ABSTAIN_INDEX][g.index()] += 1;
                abstentions += 1;
            }
        }
    }
    let n = gold.len() as u64;
    let mut degenerate = Vec::new();
    let accuracy = ratio(correct, n).unwrap_or_else(|| {
        degenerate.push("accuracy".to_string());
        0.0
    });
    let tp = correct;
    let (fp, fn_) = match mode {
        AbstentionMode::FnOnly => (wrong, wrong + abstentions),
        AbstentionMode::Strict => (wrong + abstentions, wrong + abstentions),
    };
    let micro_f1 = if 2 * tp + fp + fn_ > 0 {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    } else {
        degenerate.push("micro_f1".to_string());
        0.0
    };
    Ok(MulticlassReport {
        n_evaluated: n,
        correct,
        accuracy,
        micro_f1,
        confusion,
        abstentions,
        abstention_mode: mode,
        degenerate,
    })
}

/// Fleiss' kappa over an items × categories count matrix.
pub fn fleiss_kappa(counts: &[Vec<u64>], raters_per_item: u64) -> Result<f64, MetricError> {
    if raters_per_item < 2 {
        return Err(MetricError::InvalidRaters(raters_per_item));
    }
    let Some(width) = counts.first().map(Vec::len) else {
        return Err(MetricError::EmptyInput);
    };
    let mut column_totals = vec![0u64; width];
    for (row, r) in counts.iter().enumerate() {
        let sum: u64 = r.iter().sum();
        if r.len() != width || sum != raters_per_item {
            return Err(MetricError::RowSumMismatch { row, sum, expected: raters_per_item });
        }
        for (t, &c) in column_totals.iter_mut().zip(r) {
            *t += c;
        }
    }
    if column_totals.iter().filter(|&&t| t > 0).count() <= 1 {
        return Err(MetricError::DegenerateAgreement);
    }
    let n = raters_per_item as f64;
    let items = counts.len() as f64;
    let observed = counts
        .iter()
        .map(|r| (r.iter().map(|&c| (c * c) as f64).sum::<f64>() - n) / (n * (n - 1.0)))
        .sum::<f64>()
        / items;
    let total = items * n;
    let expected: f64 = column_totals.iter().map(|&t| (t as f64 / total).powi(2)).sum();
    Ok((observed - expected) / (1.0 - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vote {
    Win,
    Tie,
    Lose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub wins: u64,
    pub ties: u64,
    pub losses: u64,
    pub win_rate_incl_ties: f64,
    pub win_rate_excl_ties: f64,
    /// set when every vote was a tie, so the tie-excluding rate is reported as 0
    #[serde(default)]
    pub excl_ties_undefined: bool,
}

impl PairwiseReport {
    pub fn from_counts(wins: u64, ties: u64, losses: u64) -> Self {
        let win_rate_incl_ties = ratio(wins, wins + ties + losses).unwrap_or(0.0);
        let excl = ratio(wins, wins + losses);
        PairwiseReport {
            wins,
            ties,
            losses,
            win_rate_incl_ties,
            win_rate_excl_ties: excl.unwrap_or(0.0),
            excl_ties_undefined: excl.is_none(),
        }
    }

    pub fn total(&self) -> u64 {
        self.wins + self.ties + self.losses
    }
}

impl fmt::Display for PairwiseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "win {} / tie {} / lose {} | win-rate incl. ties {} | win-rate excl. ties {}",
            self.wins,
            self.ties,
            self.losses,
            format_percent(self.win_rate_incl_ties),
            if self.excl_ties_undefined { "n/a".to_string() } else { format_percent(self.win_rate_excl_ties) },
        )
    }
}

/// `0.60412` → `"60.41%"`.
pub fn format_percent(rate: f64) -> String {
    format!("{:.2}%", rate * 100.0)
}

pub fn pairwise_aggregate(votes: &[Vote]) -> Result<PairwiseReport, MetricError> {
    if votes.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let count = |v: Vote| votes.iter().filter(|&&x| x == v).count() as u64;
    Ok(PairwiseReport::from_counts(count(Vote::Win), count(Vote::Tie), count(Vote::Lose)))
}

/// Per-class gold counts of a multi-class report (for report tables).
pub fn gold_support(report: &MulticlassReport) -> Vec<(SecondaryCategory, u64)> {
    SecondaryCategory::ALL
        .iter()
        .map(|&c| (c, report.confusion.iter().map(|row| row[c.index()]).sum()))
        .collect()
}
