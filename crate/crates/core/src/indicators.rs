//! Indicator species: classical IndVal on hard clusters and the model-based
//! score on soft factor memberships.
//!
//! For one posterior draw the model-based concentration and fidelity are
//!
//! ```text
//! A~_jl = gamma_jl / sum_l' gamma_jl'
//! B~_jl = sum_i omega_il [1 - exp(-omega_i' gamma_j)] / sum_i omega_il
//! ```
//!
//! and the score `A~ B~` is averaged over draws before ranking.

use std::fmt;

use log::warn;
use nalgebra::DMatrix;

use crate::counts::{SparseCounts, SpeciesAttributes};
use crate::error::{Error, Result};
use crate::par::{map_range, Exec};
use crate::summaries::PosteriorSummaries;

/// Species per block when forming `1 - exp(-Omega Gamma')`.
const SPECIES_BLOCK: usize = 256;

/// Concentration, fidelity and their product, each p x k.
#[derive(Debug, Clone, PartialEq)]
pub struct IndVal {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub score: DMatrix<f64>,
}

/// Mutually exclusive sample clusters with labels in `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardClustering {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl HardClustering {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{k}")));
        }
        let c = HardClustering { labels, k };
        if let Some(l) = c.sizes().iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(l));
        }
        Ok(c)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn indval_from_sums(abund: DMatrix<f64>, presence: DMatrix<f64>, sizes: &[usize]) -> IndVal {
    let (p, k) = abund.shape();
    let mut a = DMatrix::zeros(p, k);
    let mut b = DMatrix::zeros(p, k);
    for j in 0..p {
        let means: Vec<f64> = (0..k).map(|l| abund[(j, l)] / sizes[l] as f64).collect();
        let total: f64 = means.iter().sum();
        for l in 0..k {
            a[(j, l)] = if total > 0.0 { means[l] / total } else { 0.0 };
            b[(j, l)] = presence[(j, l)] / sizes[l] as f64;
        }
    }
    let score = a.component_mul(&b);
    IndVal { a, b, score }
}

/// Classical IndVal: mean-abundance share of each cluster and the fraction
/// of the cluster's samples where the species occurs.
pub fn indval_classic(counts: &SparseCounts, r: &HardClustering) -> Result<IndVal> {
    if r.labels.len() != counts.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            r.labels.len(),
            counts.n()
        )));
    }
    let (p, k) = (counts.p(), r.k);
    let mut abund = DMatrix::zeros(p, k);
    let mut presence = DMatrix::zeros(p, k);
    for e in counts.entries() {
        let l = r.labels[e.row];
        abund[(e.col, l)] += e.count as f64;
        presence[(e.col, l)] += 1.0;
    }
    Ok(indval_from_sums(abund, presence, &r.sizes()))
}

/// Classical IndVal computed on expected counts (`rates`, n x p): abundance is
/// the expected count and presence the Poisson occurrence probability.
pub fn indval_expected(rates: &DMatrix<f64>, r: &HardClustering) -> Result<IndVal> {
    if r.labels.len() != rates.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} samples",
            r.labels.len(),
            rates.nrows()
        )));
    }
    let (n, p) = rates.shape();
    let mut abund = DMatrix::zeros(p, r.k);
    let mut presence = DMatrix::zeros(p, r.k);
    for i in 0..n {
        let l = r.labels[i];
        for j in 0..p {
            abund[(j, l)] += rates[(i, j)];
            presence[(j, l)] += -(-rates[(i, j)]).exp_m1();
        }
    }
    Ok(indval_from_sums(abund, presence, &r.sizes()))
}

/// Model-based concentration and fidelity for one draw.
pub fn mb_indval(omega: &DMatrix<f64>, gamma: &DMatrix<f64>, exec: Exec) -> IndVal {
    let (p, k) = gamma.shape();
    let mut a = DMatrix::zeros(p, k);
    for j in 0..p {
        let total = gamma.row(j).sum();
        if total > 0.0 {
            for l in 0..k {
                a[(j, l)] = gamma[(j, l)] / total;
            }
        } else {
            warn!("species {j} has zero total loading; its scores are set to 0");
        }
    }
    let col_mass: Vec<f64> = (0..k).map(|l| omega.column(l).sum()).collect();
    let blocks = p.div_ceil(SPECIES_BLOCK);
    let parts = map_range(exec, blocks, |bk| {
        let lo = bk * SPECIES_BLOCK;
        let hi = (lo + SPECIES_BLOCK).min(p);
        let g = gamma.rows(lo, hi - lo);
        // n x block occurrence probabilities
        let mut occ = omega * g.transpose();
        occ.apply(|r| *r = -(-*r).exp_m1());
        omega.transpose() * occ
    });
    let mut b = DMatrix::zeros(p, k);
    for (bk, part) in parts.into_iter().enumerate() {
        let lo = bk * SPECIES_BLOCK;
        for c in 0..part.ncols() {
            for l in 0..k {
                b[(lo + c, l)] = if col_mass[l] > 0.0 { part[(l, c)] / col_mass[l] } else { 0.0 };
            }
        }
    }
    let score = a.component_mul(&b);
    IndVal { a, b, score }
}

/// Draw-averaged model-based scores. `score` is the average of the per-draw
/// product, not the product of the averages.
pub fn mb_indval_posterior(s: &PosteriorSummaries, exec: Exec) -> Result<IndVal> {
    s.require_draws(1)?;
    let (p, k) = (s.p, s.k);
    let mut acc = IndVal {
        a: DMatrix::zeros(p, k),
        b: DMatrix::zeros(p, k),
        score: DMatrix::zeros(p, k),
    };
    for d in &s.draws {
        let v = mb_indval(&d.omega(), &d.gamma, exec);
        acc.a += v.a;
        acc.b += v.b;
        acc.score += v.score;
    }
    let c = s.draws.len() as f64;
    acc.a /= c;
    acc.b /= c;
    acc.score /= c;
    Ok(acc)
}

/// Which species may serve as indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CandidateFilter {
    All,
    /// Binomially named species.
    Named,
    /// Named species in one of the configured orders.
    Charismatic,
    /// Named species at or above the body-size quantile.
    Large,
}

impl CandidateFilter {
    pub const ALL: [CandidateFilter; 4] = [Self::All, Self::Named, Self::Charismatic, Self::Large];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(Self::All),
            "named" => Ok(Self::Named),
            "charismatic" => Ok(Self::Charismatic),
            "large" => Ok(Self::Large),
            other => Err(Error::InvalidArgument(format!(
                "unknown filter '{other}' (expected all, named, charismatic or large)"
            ))),
        }
    }
}

impl fmt::Display for CandidateFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::All => "all",
            Self::Named => "named",
            Self::Charismatic => "charismatic",
            Self::Large => "large",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub charismatic_orders: Vec<String>,
    /// Quantile of the available body sizes a large species must reach.
    pub large_quantile: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            charismatic_orders: vec!["Lepidoptera".into(), "Coleoptera".into()],
            large_quantile: 0.9,
        }
    }
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Candidate mask of a filter over the species attributes.
pub fn candidate_mask(
    filter: CandidateFilter,
    attrs: &SpeciesAttributes,
    cfg: &FilterConfig,
) -> Result<Vec<bool>> {
    let recs = &attrs.records;
    Ok(match filter {
        CandidateFilter::All => vec![true; recs.len()],
        CandidateFilter::Named => recs.iter().map(|r| r.is_named()).collect(),
        CandidateFilter::Charismatic => recs
            .iter()
            .map(|r| {
                r.is_named()
                    && r.order
                        .as_ref()
                        .is_some_and(|o| cfg.charismatic_orders.iter().any(|c| c.eq_ignore_ascii_case(o)))
            })
            .collect(),
        CandidateFilter::Large => {
            let sizes: Vec<f64> = recs.iter().filter_map(|r| r.body_size).collect();
            let Some(cut) = quantile(&sizes, cfg.large_quantile) else {
                return Err(Error::FilterUnavailable(
                    "large".into(),
                    "no body sizes available".into(),
                ));
            };
            recs.iter()
                .map(|r| r.is_named() && r.body_size.is_some_and(|s| s >= cut))
                .collect()
        }
    })
}

/// Species ordered by decreasing score within one factor; lower index wins ties.
pub fn order_by_score(score: &DMatrix<f64>, l: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..score.nrows()).collect();
    idx.sort_by(|&a, &b| score[(b, l)].total_cmp(&score[(a, l)]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorRow {
    /// Zero-based factor.
    pub factor: usize,
    /// One-based position among the filter's candidates.
    pub rank: usize,
    /// One-based position among all species.
    pub global_rank: usize,
    pub species: usize,
    pub a: f64,
    pub b: f64,
    pub score: f64,
    /// `E[-A~ B~]`.
    pub expected_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorTable {
    pub filter: CandidateFilter,
    pub rows: Vec<IndicatorRow>,
}

impl IndicatorTable {
    /// Selected species for every factor (the union, in table order).
    pub fn species(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.species) {
                out.push(r.species);
            }
        }
        out
    }
}

/// Top `m` candidates per factor by posterior-expected score.
pub fn rank_indicators(
    scores: &IndVal,
    mask: &[bool],
    filter: CandidateFilter,
    m: usize,
) -> Result<IndicatorTable> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one indicator per factor".into()));
    }
    let (p, k) = scores.score.shape();
    if mask.len() != p {
        return Err(Error::DimensionMismatch(format!("mask of {} for {p} species", mask.len())));
    }
    if !mask.iter().any(|&c| c) {
        return Err(Error::NoCandidates {
            filter: filter.to_string(),
            factor: 1,
        });
    }
    let mut rows = Vec::new();
    for l in 0..k {
        let order = order_by_score(&scores.score, l);
        let picked = order
            .iter()
            .enumerate()
            .filter(|(_, &j)| mask[j])
            .take(m);
        for (rank, (pos, &j)) in picked.enumerate() {
            rows.push(IndicatorRow {
                factor: l,
                rank: rank + 1,
                global_rank: pos + 1,
                species: j,
                a: scores.a[(j, l)],
                b: scores.b[(j, l)],
                score: scores.score[(j, l)],
                expected_loss: -scores.score[(j, l)],
            });
        }
    }
    Ok(IndicatorTable { filter, rows })
}
