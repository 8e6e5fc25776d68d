use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_paired, StatSummary};
use super::lmm::{fit_lmm, residualize, LmmFit};
use super::rank::spearman;
use super::table::{ObservationTable, PredictionTable};
use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
use crate::error::{Error, Result};

/// `****` for p ≤ 1e-4 down to `*` for p ≤ 0.05; `ns` otherwise.
pub fn significance_stars(p: f64) -> &'static str {
    if p <= 1e-4 {
        "****"
    } else if p <= 1e-3 {
        "***"
    } else if p <= 1e-2 {
        "**"
    } else if p <= 0.05 {
        "*"
    } else {
        "ns"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCorrelation {
    pub method: String,
    pub n: usize,
    /// Spearman rho on the full sample.
    pub rho: f64,
    pub summary: StatSummary,
    pub cell: String,
    pub ci_overlaps_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub method_a: String,
    pub method_b: String,
    pub test: Option<WilcoxonResult>,
    pub p_value: Option<f64>,
    pub stars: String,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConventions {
    pub lmm_criterion: String,
    pub residualization: String,
    pub bootstrap_unit: String,
    pub wilcoxon_pairing: String,
    pub significance: String,
}

impl Default for ReportConventions {
    fn default() -> Self {
        Self {
            lmm_criterion: "ML".into(),
            residualization: "y - b0 - b1*age - b2*sex (random intercept not subtracted)".into(),
            bootstrap_unit: "rows".into(),
            wilcoxon_pairing: "bootstrap replicates with identical resample indices across methods".into(),
            significance: "CI overlapping 0 => not significant; stars at p <= 0.05, 0.01, 0.001, 1e-4".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub version: String,
    pub seed: u64,
    pub n_boot: usize,
    pub n_observations: usize,
    pub fit: LmmFit,
    pub methods: Vec<MethodCorrelation>,
    pub comparisons: Vec<PairwiseComparison>,
    pub conventions: ReportConventions,
}

/// Aligns each method's predictions with the observation rows. Every
/// observation needs a prediction for every method and vice versa.
pub fn join_predictions(table: &ObservationTable, predictions: &PredictionTable) -> Result<Vec<(String, Vec<f64>)>> {
    let index: HashMap<(&str, i64), usize> =
        table.rows().iter().enumerate().map(|(i, r)| ((r.subject_id.as_str(), r.visit), i)).collect();
    let methods = predictions.methods();
    let mut cols: Vec<Vec<Option<f64>>> = vec![vec![None; table.len()]; methods.len()];
    let mut missing = Vec::new();
    for p in predictions.rows() {
        let m = methods.iter().position(|x| *x == p.method).unwrap();
        match index.get(&(p.subject_id.as_str(), p.visit)) {
            Some(&i) => cols[m][i] = Some(p.y_pred),
            None => missing.push(format!("observations:{}/{}", p.subject_id, p.visit)),
        }
    }
    for (m, col) in methods.iter().zip(&cols) {
        for (r, v) in table.rows().iter().zip(col) {
            if v.is_none() {
                missing.push(format!("{m}:{}/{}", r.subject_id, r.visit));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Join(missing));
    }
    if methods.is_empty() {
        return Err(Error::Argument("prediction table is empty".into()));
    }
    Ok(methods.into_iter().zip(cols).map(|(m, c)| (m, c.into_iter().map(Option::unwrap).collect())).collect())
}

/// Fits the mixed model, residualizes, and correlates each method's
/// predictions with the residuals under a shared bootstrap.
pub fn correlation_report(
    predictions: &PredictionTable,
    table: &ObservationTable,
    n_boot: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    let joined = join_predictions(table, predictions)?;
    let fit = fit_lmm(table)?;
    let resid = residualize(table, &fit);
    let stats: Vec<_> = joined
        .iter()
        .map(|(_, pred)| {
            let resid = &resid;
            move |idx: &[usize]| {
                let x: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
                let y: Vec<f64> = idx.iter().map(|&i| resid[i]).collect();
                spearman(&x, &y).ok()
            }
        })
        .collect();
    let reps = bootstrap_paired(table.len(), &stats, n_boot, seed)?;
    let mut methods = Vec::new();
    for ((name, pred), col) in joined.iter().zip(&reps) {
        let summary = StatSummary::from_replicates(col, seed)?;
        methods.push(MethodCorrelation {
            method: name.clone(),
            n: pred.len(),
            rho: spearman(pred, &resid)?,
            cell: summary.cell(),
            ci_overlaps_zero: summary.ci_overlaps_zero(),
            summary,
        });
    }
    let mut comparisons = Vec::new();
    for i in 0..joined.len() {
        for j in i + 1..joined.len() {
            let (test, note) = match wilcoxon_signed_rank(&reps[i], &reps[j]) {
                Ok(t) => (Some(t), None),
                Err(Error::Degenerate(msg)) => (None, Some(msg)),
                Err(e) => return Err(e),
            };
            let p = test.map(|t| t.p_two_sided);
            comparisons.push(PairwiseComparison {
                method_a: joined[i].0.clone(),
                method_b: joined[j].0.clone(),
                test,
                p_value: p,
                stars: significance_stars(p.unwrap_or(1.0)).into(),
                note,
            });
        }
    }
    Ok(CorrelationReport {
        version: crate::VERSION.into(),
        seed,
        n_boot,
        n_observations: table.len(),
        fit,
        methods,
        comparisons,
        conventions: ReportConventions::default(),
    })
}
