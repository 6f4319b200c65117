//! AUC, WAIC and posterior predictive checks.

use nalgebra::DMatrix;

use crate::counts::SparseCounts;
use crate::dist::poisson;
use crate::error::{Error, Result};
use crate::indicators::quantile;
use crate::par::{map_range, Exec};
use crate::rng::{stream, TAG_PPC};
use crate::special::ln_factorial;
use crate::summaries::PosteriorSummaries;

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUC with ties counted half. `None` when either class is empty.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waic {
    pub waic: f64,
    /// Log pointwise predictive density.
    pub lppd: f64,
    /// Effective number of parameters (sum of pointwise log-likelihood variances).
    pub p_waic: f64,
    pub draws: usize,
}

/// Species per block when streaming the pointwise log-likelihood.
const WAIC_BLOCK: usize = 64;

/// WAIC over every cell of the count matrix, zeros included:
/// `-2 (lppd - p_waic)`. Pointwise quantities are streamed over draws with
/// a running log-sum-exp and Welford variance, one species block at a time,
/// so memory stays at `n x block`.
pub fn waic(counts: &SparseCounts, s: &PosteriorSummaries, exec: Exec) -> Result<Waic> {
    s.require_draws(2)?;
    if counts.n() != s.n || counts.p() != s.p {
        return Err(Error::DimensionMismatch(format!(
            "counts {}x{} vs fitted {}x{}",
            counts.n(),
            counts.p(),
            s.n,
            s.p
        )));
    }
    let omegas: Vec<DMatrix<f64>> = s.draws.iter().map(|d| d.omega()).collect();
    let (n, p, k) = (s.n, s.p, s.k);
    let blocks = p.div_ceil(WAIC_BLOCK);
    let parts = map_range(exec, blocks, |b| {
        let j0 = b * WAIC_BLOCK;
        let width = WAIC_BLOCK.min(p - j0);
        let cells = n * width;
        let mut y = vec![0u64; cells];
        for jj in 0..width {
            for e in counts.col(j0 + jj) {
                y[e.row * width + jj] = e.count;
            }
        }
        let lf: Vec<f64> = y.iter().map(|&v| ln_factorial(v)).collect();
        let mut max = vec![f64::NEG_INFINITY; cells];
        let mut sum = vec![0.0; cells];
        let mut mean = vec![0.0; cells];
        let mut m2 = vec![0.0; cells];
        for (t, (draw, om)) in s.draws.iter().zip(&omegas).enumerate() {
            let tn = (t + 1) as f64;
            for i in 0..n {
                for jj in 0..width {
                    let c = i * width + jj;
                    let mut r = 0.0;
                    for l in 0..k {
                        r += om[(i, l)] * draw.gamma[(j0 + jj, l)];
                    }
                    let lp = if y[c] == 0 {
                        -r
                    } else {
                        y[c] as f64 * r.max(f64::MIN_POSITIVE).ln() - r - lf[c]
                    };
                    if lp > max[c] {
                        sum[c] = sum[c] * (max[c] - lp).exp() + 1.0;
                        max[c] = lp;
                    } else {
                        sum[c] += (lp - max[c]).exp();
                    }
                    let delta = lp - mean[c];
                    mean[c] += delta / tn;
                    m2[c] += delta * (lp - mean[c]);
                }
            }
        }
        let t = s.draws.len() as f64;
        let mut lppd = 0.0;
        let mut pw = 0.0;
        for c in 0..cells {
            lppd += max[c] + (sum[c] / t).ln();
            pw += m2[c] / (t - 1.0);
        }
        (lppd, pw)
    });
    let (lppd, p_waic) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(Waic {
        waic: -2.0 * (lppd - p_waic),
        lppd,
        p_waic,
        draws: s.draws.len(),
    })
}

/// Observed marginal total with its posterior predictive band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub observed: f64,
    pub lo: f64,
    pub median: f64,
    pub hi: f64,
}

impl Band {
    pub fn covers(&self) -> bool {
        self.lo <= self.observed && self.observed <= self.hi
    }

    pub fn log1p(&self) -> Band {
        Band {
            observed: self.observed.ln_1p(),
            lo: self.lo.ln_1p(),
            median: self.median.ln_1p(),
            hi: self.hi.ln_1p(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpcReport {
    /// Sample (row) totals.
    pub rows: Vec<Band>,
    /// Species (column) totals.
    pub cols: Vec<Band>,
    pub row_coverage: f64,
    pub col_coverage: f64,
    /// Coverage on the `log(1 + x)` scale.
    pub row_coverage_log: f64,
    pub col_coverage_log: f64,
}

fn coverage(bands: &[Band]) -> f64 {
    bands.iter().filter(|b| b.covers()).count() as f64 / bands.len().max(1) as f64
}

fn bands(observed: &[u64], sims: &[Vec<u64>]) -> Vec<Band> {
    (0..observed.len())
        .map(|i| {
            let v: Vec<f64> = sims.iter().map(|s| s[i] as f64).collect();
            Band {
                observed: observed[i] as f64,
                lo: quantile(&v, 0.025).unwrap(),
                median: quantile(&v, 0.5).unwrap(),
                hi: quantile(&v, 0.975).unwrap(),
            }
        })
        .collect()
}

/// 95% posterior predictive bands for sample and species totals.
///
/// Sums of independent Poissons are Poisson, so replicated totals are drawn
/// directly: the total of sample `i` has rate `omega_i' (sum_j gamma_j)`, the
/// total of species `j` has rate `sum_l gamma_jl sum_i omega_il`.
pub fn posterior_predictive_check(
    counts: &SparseCounts,
    s: &PosteriorSummaries,
    seed: u64,
    exec: Exec,
) -> Result<PpcReport> {
    s.require_draws(1)?;
    if counts.n() != s.n || counts.p() != s.p {
        return Err(Error::DimensionMismatch(format!(
            "counts {}x{} vs fitted {}x{}",
            counts.n(),
            counts.p(),
            s.n,
            s.p
        )));
    }
    let sims = map_range(exec, s.draws.len(), |t| {
        let d = &s.draws[t];
        let om = d.omega();
        let mut rng = stream(seed, TAG_PPC, t as u64);
        let gsum: Vec<f64> = d.gamma.column_iter().map(|c| c.sum()).collect();
        let mass: Vec<f64> = om.column_iter().map(|c| c.sum()).collect();
        let rows: Vec<u64> = (0..s.n)
            .map(|i| {
                let r: f64 = (0..s.k).map(|l| om[(i, l)] * gsum[l]).sum();
                poisson(&mut rng, r)
            })
            .collect();
        let cols: Vec<u64> = (0..s.p)
            .map(|j| {
                let r: f64 = (0..s.k).map(|l| d.gamma[(j, l)] * mass[l]).sum();
                poisson(&mut rng, r)
            })
            .collect();
        (rows, cols)
    });
    let (row_sims, col_sims): (Vec<_>, Vec<_>) = sims.into_iter().unzip();
    let rows = bands(&counts.row_totals(), &row_sims);
    let cols = bands(&counts.col_totals(), &col_sims);
    let logged = |b: &[Band]| b.iter().map(Band::log1p).collect::<Vec<_>>();
    Ok(PpcReport {
        row_coverage: coverage(&rows),
        col_coverage: coverage(&cols),
        row_coverage_log: coverage(&logged(&rows)),
        col_coverage_log: coverage(&logged(&cols)),
        rows,
        cols,
    })
}
