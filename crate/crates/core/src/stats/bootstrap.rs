//! Percentile bootstrap with per-replicate random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

pub const DEFAULT_N_BOOT: usize = 1000;

/// Bootstrap mean and 95% percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    pub seed: u64,
}

fn two_dp(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

impl StatSummary {
    pub fn from_replicates(replicates: &[f64], seed: u64) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::Argument("no bootstrap replicates".into()));
        }
        let mut sorted = replicates.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean: parallel::compensated_sum(replicates) / replicates.len() as f64,
            ci_low: quantile_sorted(&sorted, 0.025),
            ci_high: quantile_sorted(&sorted, 0.975),
            n_boot: replicates.len(),
            seed,
        })
    }

    /// Table cell text `mean [low, high]` at two decimals.
    pub fn cell(&self) -> String {
        format!("{} [{}, {}]", two_dp(self.mean), two_dp(self.ci_low), two_dp(self.ci_high))
    }

    /// Whether the interval contains zero (read as not significant).
    pub fn ci_overlaps_zero(&self) -> bool {
        self.ci_low <= 0.0 && self.ci_high >= 0.0
    }
}

/// Linear-interpolation quantile (the common "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Random stream for replicate `r`.
pub fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// Draws resample index sets (one per replicate) and evaluates `stat` on each;
/// a replicate whose statistic is undefined is redrawn from its own stream.
/// All statistics in `stats` see the same indices, so the output columns are
/// paired replicate by replicate. At most `10·n_boot` draws are made in total.
pub fn bootstrap_paired<F>(n_rows: usize, stats: &[F], n_boot: usize, seed: u64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_rows < 2 {
        return Err(Error::Argument("bootstrap needs at least 2 rows".into()));
    }
    if n_boot == 0 {
        return Err(Error::Argument("n_boot must be positive".into()));
    }
    let cap = 10 * n_boot;
    let per_rep: Vec<(usize, Option<Vec<f64>>)> = parallel::map_range(n_boot, |r| {
        let mut rng = replicate_rng(seed, r);
        let mut idx = vec![0usize; n_rows];
        for attempt in 1..=cap {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n_rows));
            let vals: Option<Vec<f64>> = stats.iter().map(|s| s(&idx).filter(|v| v.is_finite())).collect();
            if vals.is_some() {
                return (attempt, vals);
            }
        }
        (cap, None)
    });
    let attempts: usize = per_rep.iter().map(|(a, _)| a).sum();
    if attempts > cap || per_rep.iter().any(|(_, v)| v.is_none()) {
        return Err(Error::Degenerate(format!(
            "statistic undefined on too many replicates ({attempts} draws for {n_boot} replicates)"
        )));
    }
    let mut cols = vec![Vec::with_capacity(n_boot); stats.len()];
    for (_, v) in per_rep {
        for (c, x) in cols.iter_mut().zip(v.unwrap()) {
            c.push(x);
        }
    }
    Ok(cols)
}

/// Bootstrap of a single statistic over `n_rows` resampled rows.
pub fn bootstrap<F>(n_rows: usize, stat: F, n_boot: usize, seed: u64) -> Result<StatSummary>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    let reps = bootstrap_paired(n_rows, &[stat], n_boot, seed)?;
    StatSummary::from_replicates(&reps[0], seed)
}

/// Bootstrap of the sample mean.
pub fn bootstrap_mean(values: &[f64], n_boot: usize, seed: u64) -> Result<StatSummary> {
    bootstrap(
        values.len(),
        |idx: &[usize]| Some(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64),
        n_boot,
        seed,
    )
}
