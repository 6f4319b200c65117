//! Evaluation: conditional prediction of held-out samples, cross-validated
//! AUC, WAIC and posterior predictive checks.

mod crossval;
mod metrics;
mod predict;

pub use crossval::{crossvalidate, make_folds, CvConfig, COVARIATES_ONLY, EvalReport, SpeciesAuc, StratumSummary};
pub use metrics::{auc, posterior_predictive_check, spearman, waic, Band, PpcReport, Waic};
pub use predict::{predict_covariates_only, predict_with_indicators, PredictConfig};
pub use crate::diagnostics::{ess, Ess};
