//! K-fold cross-validation of conditional prediction.

use std::collections::BTreeMap;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::counts::{CovariateTable, SparseCounts, SpeciesAttributes};
use crate::decouple::{coord_descent, select_lambda, DecoupleInputs, DescentConfig};
use crate::error::{Error, Result};
use crate::indicators::{candidate_mask, mb_indval_posterior, rank_indicators, CandidateFilter, FilterConfig};
use crate::map_init::{map_fit, MapConfig};
use crate::model::HyperParams;
use crate::par::{map_range, Exec};
use crate::rng::{derive_seed, stream, TAG_FOLD};
use crate::sampler::{run_chain, ChainConfig};

use super::metrics::{auc, PpcReport, Waic};
use super::predict::{predict_covariates_only, predict_with_indicators, PredictConfig};

/// Name of the covariates-only conditioning mode in reports.
pub const COVARIATES_ONLY: &str = "covariates";

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub folds: usize,
    pub map: MapConfig,
    pub chain: ChainConfig,
    pub hyper: HyperParams,
    pub descent: DescentConfig,
    /// Points in the automatic penalty grid of each fold's decoupled fit.
    pub lambda_grid: usize,
    /// Indicators selected per factor for every strategy.
    pub indicators_per_factor: usize,
    pub strategies: Vec<CandidateFilter>,
    pub filter: FilterConfig,
    pub predict: PredictConfig,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            map: MapConfig::default(),
            chain: ChainConfig::default(),
            hyper: HyperParams::default(),
            descent: DescentConfig::default(),
            lambda_grid: 30,
            indicators_per_factor: 15,
            strategies: vec![CandidateFilter::All],
            filter: FilterConfig::default(),
            predict: PredictConfig::default(),
            seed: 0,
            exec: Exec::default(),
        }
    }
}

/// Pooled held-out AUC of one species under each conditioning mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesAuc {
    pub species: usize,
    /// Most frequent `||g_j||_0` across folds; the smaller wins ties.
    pub stratum: usize,
    /// One entry per mode; `None` when undefined (one class only, or the
    /// species was an indicator in every fold).
    pub auc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumSummary {
    pub stratum: usize,
    pub species: usize,
    /// Mean AUC per mode over species with a defined AUC.
    pub mean_auc: Vec<Option<f64>>,
    pub counted: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    /// Conditioning modes: covariates-only first, then one per strategy.
    pub modes: Vec<String>,
    /// Fold of every sample.
    pub folds: Vec<usize>,
    pub species: Vec<SpeciesAuc>,
    pub strata: Vec<StratumSummary>,
    /// `||g_j||_0` per fold (rows: folds, columns: species).
    pub support_sizes: Vec<Vec<usize>>,
    /// Indicators chosen per fold, per strategy mode.
    pub indicators: Vec<Vec<Vec<usize>>>,
    /// Species without a defined AUC under any mode.
    pub excluded: Vec<usize>,
    pub waic: Option<Waic>,
    pub ppc: Option<PpcReport>,
}

impl EvalReport {
    /// Mean AUC of a mode over all species with a defined value.
    pub fn mean_auc(&self, mode: usize) -> Option<f64> {
        mean(self.species.iter().filter_map(|s| s.auc[mode]))
    }
}

fn mean<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    let (s, c) = it.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Assign samples to folds. With sites, samples are shuffled within each site
/// and dealt round-robin with one counter running across sites, so every site
/// spreads over the folds and fold sizes differ by at most one.
pub fn make_folds(n: usize, sites: Option<&[String]>, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= folds <= samples, got {folds} folds for {n} samples"
        )));
    }
    let mut rng = stream(seed, TAG_FOLD, u64::MAX);
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    match sites {
        Some(s) => {
            if s.len() != n {
                return Err(Error::DimensionMismatch(format!("{} site ids for {n} samples", s.len())));
            }
            for (i, site) in s.iter().enumerate() {
                groups.entry(site.as_str()).or_default().push(i);
            }
        }
        None => {
            groups.insert("", (0..n).collect());
        }
    }
    let mut out = vec![0; n];
    let mut next = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            out[i] = next % folds;
            next += 1;
        }
    }
    Ok(out)
}

struct FoldResult {
    test: Vec<usize>,
    support: Vec<usize>,
    /// Per mode: held-out predictions (rows follow `test`), `None` when the
    /// strategy had no usable candidates.
    predictions: Vec<Option<DMatrix<f64>>>,
    indicators: Vec<Vec<usize>>,
}

fn fold_support(s: &crate::summaries::PosteriorSummaries, cfg: &CvConfig) -> Result<Vec<usize>> {
    let inputs = DecoupleInputs::from_summaries(s)?;
    let descent = DescentConfig {
        exec: Exec::Sequential,
        ..cfg.descent.clone()
    };
    let grid = inputs.feasible_grid(cfg.lambda_grid);
    if grid.is_empty() {
        return Ok(vec![0; inputs.p()]);
    }
    match select_lambda(&inputs, &grid, &descent) {
        Ok((fit, _)) => Ok(fit.support_sizes()),
        Err(Error::EmptyRows(rows)) => {
            warn!("{} species have empty loadings at the smallest penalty; using it anyway", rows.len());
            let last = *grid.last().expect("nonempty grid");
            Ok(coord_descent(&inputs, last, &inputs.init, &descent)?.support_sizes())
        }
        Err(e) => Err(e),
    }
}

fn run_fold(
    f: usize,
    counts: &SparseCounts,
    x: &CovariateTable,
    attrs: &SpeciesAttributes,
    assignment: &[usize],
    cfg: &CvConfig,
) -> Result<FoldResult> {
    let train: Vec<usize> = (0..counts.n()).filter(|&i| assignment[i] != f).collect();
    let test: Vec<usize> = (0..counts.n()).filter(|&i| assignment[i] == f).collect();
    let y_train = counts.select_rows(&train);
    let x_train = x.select_rows(&train);
    let x_test = x.select_rows(&test).x;

    let map_cfg = MapConfig {
        seed: derive_seed(cfg.seed, TAG_FOLD, f as u64),
        exec: Exec::Sequential,
        ..cfg.map.clone()
    };
    let fit = map_fit(&y_train, &x_train, &map_cfg, &cfg.hyper)?;
    let chain_cfg = ChainConfig {
        seed: derive_seed(cfg.seed, TAG_FOLD, (1 << 32) + f as u64),
        exec: Exec::Sequential,
        ..cfg.chain.clone()
    };
    let s = run_chain(&y_train, &x_train, &chain_cfg, &cfg.hyper, fit.state)?;
    let support = fold_support(&s, cfg)?;

    let pcfg = PredictConfig {
        seed: derive_seed(cfg.seed, TAG_FOLD, (2 << 32) + f as u64),
        exec: Exec::Sequential,
        ..cfg.predict.clone()
    };
    let mut predictions = vec![Some(predict_covariates_only(&x_test, &s, &pcfg)?)];
    let mut indicators = Vec::new();
    let scores = mb_indval_posterior(&s, Exec::Sequential)?;
    for &strategy in &cfg.strategies {
        let table = candidate_mask(strategy, attrs, &cfg.filter)
            .and_then(|mask| rank_indicators(&scores, &mask, strategy, cfg.indicators_per_factor));
        let j = match table {
            Ok(t) => t.species(),
            Err(e @ (Error::FilterUnavailable(..) | Error::NoCandidates { .. })) => {
                warn!("fold {f}: strategy {strategy} skipped: {e}");
                indicators.push(Vec::new());
                predictions.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        let observed = DMatrix::from_fn(test.len(), j.len(), |r, c| counts.get(test[r], j[c]));
        predictions.push(Some(predict_with_indicators(&x_test, &observed, &j, &s, &pcfg)?));
        indicators.push(j);
    }
    info!("fold {f}: {} training, {} held out", train.len(), test.len());
    Ok(FoldResult {
        test,
        support,
        predictions,
        indicators,
    })
}

/// The smallest most frequent value.
fn mode_of(values: &[usize]) -> usize {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *freq.entry(v).or_default() += 1;
    }
    // BTreeMap iterates ascending; strict > keeps the smaller value on ties
    let mut best = (0, 0);
    for (v, c) in freq {
        if c > best.1 {
            best = (v, c);
        }
    }
    best.0
}

/// Refit on each fold's training samples (MAP start, Gibbs chain, decoupled
/// sparse loadings, MB-IndVal indicators), predict the held-out samples under
/// every conditioning mode and pool per-species AUCs over all held-out
/// samples. Folds run in parallel; each fold runs sequentially inside.
pub fn crossvalidate(
    counts: &SparseCounts,
    x: &CovariateTable,
    sites: Option<&[String]>,
    attrs: &SpeciesAttributes,
    cfg: &CvConfig,
) -> Result<EvalReport> {
    let (n, p) = (counts.n(), counts.p());
    if x.n() != n {
        return Err(Error::DimensionMismatch(format!("{} covariate rows for {n} samples", x.n())));
    }
    if attrs.len() != p && !cfg.strategies.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} attribute rows for {p} species", attrs.len())));
    }
    let assignment = make_folds(n, sites, cfg.folds, cfg.seed)?;
    let results = map_range(cfg.exec, cfg.folds, |f| run_fold(f, counts, x, attrs, &assignment, cfg));
    let results: Vec<FoldResult> = results.into_iter().collect::<Result<_>>()?;

    let mut modes = vec![COVARIATES_ONLY.to_string()];
    modes.extend(cfg.strategies.iter().map(|s| s.to_string()));
    let mut species = Vec::with_capacity(p);
    let mut excluded = Vec::new();
    for j in 0..p {
        let sizes: Vec<usize> = results.iter().map(|r| r.support[j]).collect();
        let mut per_mode = Vec::with_capacity(modes.len());
        for m in 0..modes.len() {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for r in &results {
                let Some(pred) = &r.predictions[m] else { continue };
                for (row, &i) in r.test.iter().enumerate() {
                    let v = pred[(row, j)];
                    if v.is_nan() {
                        continue;
                    }
                    scores.push(v);
                    labels.push(counts.get(i, j) > 0);
                }
            }
            per_mode.push(if scores.is_empty() { None } else { auc(&scores, &labels) });
        }
        if per_mode.iter().all(Option::is_none) {
            excluded.push(j);
        }
        species.push(SpeciesAuc {
            species: j,
            stratum: mode_of(&sizes),
            auc: per_mode,
        });
    }
    if !excluded.is_empty() {
        warn!("{} species have no defined held-out AUC and are excluded", excluded.len());
    }

    let k = cfg.map.k;
    let strata = (0..=k)
        .filter_map(|st| {
            let members: Vec<&SpeciesAuc> = species.iter().filter(|s| s.stratum == st).collect();
            if members.is_empty() {
                return None;
            }
            let mean_auc = (0..modes.len()).map(|m| mean(members.iter().filter_map(|s| s.auc[m]))).collect();
            let counted = (0..modes.len())
                .map(|m| members.iter().filter(|s| s.auc[m].is_some()).count())
                .collect();
            Some(StratumSummary {
                stratum: st,
                species: members.len(),
                mean_auc,
                counted,
            })
        })
        .collect();

    Ok(EvalReport {
        modes,
        folds: assignment,
        support_sizes: results.iter().map(|r| r.support.clone()).collect(),
        indicators: results.iter().map(|r| r.indicators.clone()).collect(),
        species,
        strata,
        excluded,
        waic: None,
        ppc: None,
    })
}
