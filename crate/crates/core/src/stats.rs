//! Wilcoxon signed-rank test for paired per-participant scores.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_MAX_M: usize = 20;
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub labels: Vec<String>,
}

impl PairedSample {
    pub fn new(a: Vec<f64>, b: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if a.len() != b.len() || a.len() != labels.len() {
            return Err(Error::input(format!(
                "paired sample lengths differ: {}, {}, {} labels",
                a.len(),
                b.len(),
                labels.len()
            )));
        }
        if a.len() < MIN_PAIRS {
            return Err(Error::input(format!(
                "need at least {MIN_PAIRS} pairs for a test, got {}",
                a.len()
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::input("paired sample contains non-finite values"));
        }
        Ok(Self { a, b, labels })
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    Exact,
    NormalApprox,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_two_sided: f64,
    /// Number of non-zero differences.
    pub m: usize,
    pub mode: WilcoxonMode,
    /// Every difference was zero; `p` is reported as 1.
    pub degenerate: bool,
}

/// Average ranks of `|d|`, doubled so ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j+1 share rank (i+1 + j+1)/2
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

/// Number of sign assignments whose doubled positive-rank sum is at most
/// `limit`, counted by dynamic programming over rank sums.
fn count_at_most(ranks2: &[u64], limit: u64) -> u64 {
    let total: u64 = ranks2.iter().sum();
    let mut ways = vec![0u64; total as usize + 1];
    ways[0] = 1;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if ways[s] > 0 {
                ways[s + r] += ways[s];
            }
        }
        reach += r;
    }
    ways[..=(limit.min(total) as usize)].iter().sum()
}

fn tie_term(abs: &[f64]) -> f64 {
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        acc += t * t * t - t;
        i = j + 1;
    }
    acc
}

/// Two-sided signed-rank test on raw differences. Zero differences are
/// dropped; tied magnitudes share their average rank.
pub fn wilcoxon_differences(diffs: &[f64], mode: WilcoxonMode) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::input("non-finite difference"));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let m = nz.len();
    if m == 0 {
        log::warn!("all paired differences are zero; reporting p = 1");
        return Ok(WilcoxonResult {
            w: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_two_sided: 1.0,
            m: 0,
            mode,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_ranks(&abs);
    let plus2: u64 = nz
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total2: u64 = ranks2.iter().sum();
    let minus2 = total2 - plus2;
    let w2 = plus2.min(minus2);

    let mode = match mode {
        WilcoxonMode::Auto if m <= EXACT_MAX_M => WilcoxonMode::Exact,
        WilcoxonMode::Auto => WilcoxonMode::NormalApprox,
        other => other,
    };
    let p = match mode {
        WilcoxonMode::Exact => {
            if m > 62 {
                return Err(Error::input(format!(
                    "exact test supports at most 62 differences, got {m}"
                )));
            }
            let count = count_at_most(&ranks2, w2);
            (2.0 * count as f64 / (1u64 << m) as f64).min(1.0)
        }
        _ => {
            let mf = m as f64;
            let mean = mf * (mf + 1.0) / 4.0;
            let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term(&abs) / 48.0;
            if var <= 0.0 {
                1.0
            } else {
                let dev = ((w2 as f64 / 2.0 - mean).abs() - 0.5).max(0.0);
                let z = dev / var.sqrt();
                let normal = Normal::standard();
                (2.0 * normal.cdf(-z)).clamp(f64::MIN_POSITIVE, 1.0)
            }
        }
    };
    Ok(WilcoxonResult {
        w: w2 as f64 / 2.0,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        p_two_sided: p,
        m,
        mode,
        degenerate: false,
    })
}

pub fn wilcoxon_signed_rank(sample: &PairedSample, mode: WilcoxonMode) -> Result<WilcoxonResult> {
    wilcoxon_differences(&sample.differences(), mode)
}
