//! Independent reference implementations used as test oracles.
//!
//! Everything here is computed in exact rational arithmetic with direct
//! formulas and full pair enumeration; nothing is shared with the library
//! code under test.

#![allow(dead_code)]

pub mod parser_cases;
pub mod scenarios;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub fn q(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("finite rational")
}

/// `num / sqrt(den_sq)` with the square computed exactly; `None` when the
/// denominator vanishes.
fn signed_root_ratio(num: &BigRational, den_sq: &BigRational) -> Option<f64> {
    if den_sq.is_zero() {
        return None;
    }
    let r2 = num * num / den_sq;
    let mag = to_f64(&r2).sqrt();
    Some(if num.is_negative() { -mag } else { mag })
}

fn exact_pearson(xs: &[BigRational], ys: &[BigRational]) -> Option<f64> {
    let n = q(xs.len() as i64);
    let mx = xs.iter().fold(q(0), |a, b| a + b) / &n;
    let my = ys.iter().fold(q(0), |a, b| a + b) / &n;
    let mut sxy = q(0);
    let mut sxx = q(0);
    let mut syy = q(0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - &mx;
        let dy = y - &my;
        sxy += &dx * &dy;
        sxx += &dx * &dx;
        syy += &dy * &dy;
    }
    signed_root_ratio(&sxy, &(sxx * syy))
}

pub fn pearson(xs: &[i64], ys: &[i64]) -> Option<f64> {
    let xs: Vec<BigRational> = xs.iter().map(|&v| q(v)).collect();
    let ys: Vec<BigRational> = ys.iter().map(|&v| q(v)).collect();
    exact_pearson(&xs, &ys)
}

/// Rank of each value = (number of strictly smaller values) + (ties + 1) / 2,
/// evaluated by counting over all elements.
fn ranks(v: &[i64]) -> Vec<BigRational> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as i64;
            let equal = v.iter().filter(|&&y| y == x).count() as i64;
            q(less) + BigRational::new(BigInt::from(equal + 1), BigInt::from(2))
        })
        .collect()
}

pub fn spearman(xs: &[i64], ys: &[i64]) -> Option<f64> {
    exact_pearson(&ranks(xs), &ranks(ys))
}

/// Tau-b from all n(n-1)/2 pairs.
pub fn kendall_tau_b(xs: &[i64], ys: &[i64]) -> Option<f64> {
    let n = xs.len();
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (xs[i] - xs[j]).signum();
            let dy = (ys[i] - ys[j]).signum();
            if dx == 0 {
                tie_x += 1;
            }
            if dy == 0 {
                tie_y += 1;
            }
            if dx * dy > 0 {
                conc += 1;
            } else if dx * dy < 0 {
                disc += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    signed_root_ratio(&q(conc - disc), &(q(n0 - tie_x) * q(n0 - tie_y)))
}

/// Fleiss' kappa straight from the textbook definition, exactly.
pub fn fleiss(counts: &[Vec<u64>]) -> Option<f64> {
    let n_items = counts.len() as i64;
    let raters: i64 = counts[0].iter().sum::<u64>() as i64;
    let k = counts[0].len();
    let mut p_bar = q(0);
    for row in counts {
        let agree: i64 = row.iter().map(|&c| (c as i64) * (c as i64 - 1)).sum();
        p_bar += BigRational::new(BigInt::from(agree), BigInt::from(raters * (raters - 1)));
    }
    p_bar /= q(n_items);
    let mut p_e = q(0);
    for j in 0..k {
        let col: i64 = counts.iter().map(|r| r[j] as i64).sum();
        let pj = BigRational::new(BigInt::from(col), BigInt::from(n_items * raters));
        p_e += &pj * &pj;
    }
    if p_e == q(1) {
        return None;
    }
    Some(to_f64(&((p_bar - &p_e) / (q(1) - p_e))))
}

/// Detection precision / recall / F1 from hand-counted cells.
pub fn detection(gold: &[bool], pred: &[bool]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&g, &p) in gold.iter().zip(pred) {
        match (g, p) {
            (true, true) => c.0 += 1,
            (false, true) => c.1 += 1,
            (true, false) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
