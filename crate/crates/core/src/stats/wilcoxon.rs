//! Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::rank::{average_ranks, tie_groups};
use crate::error::{Error, Result};

/// Largest n (after dropping zero differences) that uses the exact null.
pub const EXACT_MAX_N: usize = 25;
pub const MIN_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Signed-rank statistic W⁺ − W⁻.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs used (non-zero differences).
    pub n: usize,
    pub p_two_sided: f64,
    pub method: PMethod,
}

/// Two-sided test of `a − b`. Zero differences are dropped and tied |d| get
/// average ranks. Exact for n ≤ 25 (distribution of W⁺ by dynamic
/// programming over doubled ranks), otherwise normal with tie and continuity
/// corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Argument("wilcoxon inputs differ in length".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite paired difference".into()));
    }
    let n = d.len();
    if n < MIN_N {
        return Err(Error::Argument(format!("wilcoxon needs at least {MIN_N} non-zero differences, got {n}")));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let (p, method) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), PMethod::Exact)
    } else {
        (normal_p(&abs, n, w_plus), PMethod::Normal)
    };
    Ok(WilcoxonResult { w: w_plus - w_minus, w_plus, w_minus, n, p_two_sided: p, method })
}

fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    // Average ranks are multiples of 1/2; doubling makes them integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let obs = (2.0 * w_plus).round() as usize;
    let le: u64 = counts[..=obs].iter().sum();
    let ge: u64 = counts[obs..].iter().sum();
    let total = (1u64 << ranks.len()) as f64;
    (2.0 * le.min(ge) as f64 / total).min(1.0)
}

fn normal_p(abs: &[f64], n: usize, w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie: f64 = tie_groups(abs).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}
