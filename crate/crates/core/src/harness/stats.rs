//! Paired significance testing and summary statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Sample sizes up to this use the exact null distribution.
pub const EXACT_CUTOFF: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    /// Two-sided p-value.
    pub p: f64,
    pub method: PMethod,
}

/// Average ranks of `|d|`, ties sharing the mean of their positions.
/// Returned doubled so tied ranks stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // Positions i..=j (1-based i+1..=j+1) share rank (i + j + 2) / 2.
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on paired samples `(x, y)`, d = x - y.
///
/// Zero differences are dropped and tied magnitudes share average ranks. For
/// up to [`EXACT_CUTOFF`] non-zero differences the p-value comes from the
/// exact distribution of the signed-rank sum over all `2^n` sign patterns
/// (counted by dynamic programming); beyond that a normal approximation with
/// tie-corrected variance is used.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired difference".into()));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let plus2: u64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total2: u64 = ranks.iter().sum();
    let minus2 = total2 - plus2;
    let w2 = plus2.min(minus2);

    let (p, method) = if n <= EXACT_CUTOFF {
        // counts[s] = number of sign patterns whose doubled positive-rank sum is s.
        let mut counts = vec![0u64; total2 as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let tail: u64 = counts[..=w2 as usize].iter().sum();
        let p = (2.0 * tail as f64 / (n as f64).exp2()).min(1.0);
        (p, PMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w2 as f64 / 2.0 - mean) / var.sqrt();
        let std = Normal::new(0.0, 1.0).unwrap();
        ((2.0 * std.cdf(-z.abs())).min(1.0), PMethod::Normal)
    };

    Ok(WilcoxonResult {
        w: w2 as f64 / 2.0,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        n,
        p,
        method,
    })
}

/// Share of wins with its binomial standard error `sqrt(p (1 - p) / n)`.
pub fn win_rate(outcomes: &[bool]) -> Result<(f64, f64)> {
    if outcomes.is_empty() {
        return Err(Error::EmptyList);
    }
    let n = outcomes.len() as f64;
    let rate = outcomes.iter().filter(|&&w| w).count() as f64 / n;
    Ok((rate, (rate * (1.0 - rate) / n).sqrt()))
}

/// Mean and standard error (sample standard deviation over sqrt n).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
