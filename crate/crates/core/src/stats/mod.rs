//! Evaluation statistics: mixed-model residualization, Spearman
//! correlation, percentile bootstrap and the Wilcoxon signed-rank test.

pub mod bootstrap;
pub mod lmm;
pub mod rank;
pub mod report;
pub mod table;
pub mod wilcoxon;

pub use bootstrap::{bootstrap, bootstrap_mean, bootstrap_paired, StatSummary, DEFAULT_N_BOOT};
pub use lmm::{fit_lmm, residualize, LmmFit};
pub use rank::spearman;
pub use report::{correlation_report, significance_stars, CorrelationReport};
pub use table::{Observation, ObservationTable, Prediction, PredictionTable};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
