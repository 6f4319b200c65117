//! Decoupled sparse estimation of the species loadings.
//!
//! With `A` the principal square root of `E[Omega' Omega]`, `B = E[Gamma Omega' Omega]`
//! and `Z = A^+ B'`, the posterior-expected Frobenius loss of a candidate
//! `G >= 0` is, up to a constant, `||Z - A G'||^2`. Adding a reweighted l1
//! penalty gives
//!
//! ```text
//! L(G) = ||Z - A G'||_F^2 + lambda sum_jl w_jl g_jl
//! ```
//!
//! minimized by blockwise coordinate descent with the closed-form update
//! `g_jl = max(Z_j^(l)' a_l - lambda w_jl / 2, 0) / (a_l' a_l)`.
//! `lambda` is the largest value that leaves every species with a nonzero
//! loading.
//!
//! Rows of `G` do not interact in `L`, so each column block is updated for all
//! species in parallel.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::par::{map_range, Exec};
use crate::summaries::PosteriorSummaries;

/// Relative tolerance for negative eigenvalues of `E[Omega' Omega]`.
const PSD_TOL: f64 = 1e-10;
const ROW_CHUNK: usize = 512;

/// Everything the decoupled loss needs.
#[derive(Debug, Clone)]
pub struct DecoupleInputs {
    /// k x k principal square root of the expected Gram matrix.
    pub a: DMatrix<f64>,
    /// p x k.
    pub b: DMatrix<f64>,
    /// p x k penalty weights.
    pub w: DMatrix<f64>,
    /// k x p, `A^+ B'`.
    pub z: DMatrix<f64>,
    /// p x k starting point (the posterior mean of the loadings).
    pub init: DMatrix<f64>,
}

/// Principal square root and pseudo-inverse square root of a symmetric PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * scale {
        return Err(Error::NotPsd(min));
    }
    let cutoff = scale * f64::EPSILON * k as f64;
    let v = &eig.eigenvectors;
    let mut root = DMatrix::zeros(k, k);
    let mut pinv = DMatrix::zeros(k, k);
    for (t, &lam) in eig.eigenvalues.iter().enumerate() {
        let col = v.column(t);
        let outer = &col * col.transpose();
        let s = lam.max(0.0).sqrt();
        root += &outer * s;
        if lam > cutoff {
            pinv += outer / s;
        }
    }
    Ok((root, pinv))
}

impl DecoupleInputs {
    pub fn new(gram: &DMatrix<f64>, b: DMatrix<f64>, w: DMatrix<f64>, init: DMatrix<f64>) -> Result<Self> {
        let k = gram.nrows();
        if gram.ncols() != k || b.ncols() != k || w.shape() != b.shape() || init.shape() != b.shape() {
            return Err(Error::DimensionMismatch(format!(
                "gram {:?}, b {:?}, w {:?}, init {:?}",
                gram.shape(),
                b.shape(),
                w.shape(),
                init.shape()
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("penalty weights must be finite and >= 0".into()));
        }
        let (a, a_pinv) = psd_sqrt(gram)?;
        let z = a_pinv * b.transpose();
        Ok(DecoupleInputs { a, b, w, z, init })
    }

    /// Species-side inputs from posterior summaries.
    pub fn from_summaries(s: &PosteriorSummaries) -> Result<Self> {
        Self::new(&s.omega_gram, s.b.clone(), s.w.clone(), s.gamma_mean.clone())
    }

    /// Sample-side inputs: the same construction with the roles of `Omega`
    /// and `Gamma` exchanged, giving a sparse estimate of the sample factors.
    pub fn sample_side(s: &PosteriorSummaries) -> Result<Self> {
        Self::new(&s.gamma_gram, s.b_omega.clone(), s.w_omega.clone(), s.omega_mean.clone())
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    /// `C = Z' A` (p x k) and `H = A' A` (k x k).
    fn quadratic(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.z.transpose() * &self.a, self.a.transpose() * &self.a)
    }

    /// `L(G)`.
    pub fn objective(&self, g: &DMatrix<f64>, lambda: f64) -> f64 {
        let r = &self.z - &self.a * g.transpose();
        r.norm_squared() + lambda * self.w.component_mul(g).sum()
    }

    /// Smallest `lambda` at which `G = 0` is optimal: `max_jl 2 C_jl / w_jl`.
    pub fn lambda_max(&self) -> f64 {
        let (c, _) = self.quadratic();
        let mut m: f64 = 0.0;
        for (cv, wv) in c.iter().zip(self.w.iter()) {
            if *cv > 0.0 {
                m = m.max(if *wv > 0.0 { 2.0 * cv / wv } else { f64::INFINITY });
            }
        }
        m
    }

    /// Supremum of the feasible `lambda`: row `j` is empty at the optimum
    /// exactly when `lambda >= max_l 2 C_jl / w_jl`, so every row is nonempty
    /// for `lambda` below `min_j max_l 2 C_jl / w_jl`.
    pub fn lambda_feasible_sup(&self) -> f64 {
        let (c, _) = self.quadratic();
        let mut sup = f64::INFINITY;
        for j in 0..self.p() {
            let mut row_max: f64 = 0.0;
            for l in 0..self.k() {
                let (cv, wv) = (c[(j, l)], self.w[(j, l)]);
                if cv > 0.0 {
                    row_max = row_max.max(if wv > 0.0 { 2.0 * cv / wv } else { f64::INFINITY });
                }
            }
            sup = sup.min(row_max);
        }
        sup
    }

    /// `count` log-spaced values from `lambda_max` down to `1e-4 lambda_max`.
    pub fn auto_grid(&self, count: usize) -> Vec<f64> {
        let hi = self.lambda_max();
        if !(hi > 0.0 && hi.is_finite()) || count == 0 {
            return vec![];
        }
        if count == 1 {
            return vec![hi];
        }
        let (lhi, llo) = (hi.ln(), (hi * 1e-4).ln());
        (0..count)
            .map(|t| (lhi + (llo - lhi) * t as f64 / (count - 1) as f64).exp())
            .collect()
    }

    /// [`auto_grid`](Self::auto_grid), continued below `1e-4 lambda_max` with
    /// the same log spacing until it passes [`lambda_feasible_sup`](Self::lambda_feasible_sup)
    /// when some species needs a smaller penalty to keep a nonzero loading.
    pub fn feasible_grid(&self, count: usize) -> Vec<f64> {
        let mut grid = self.auto_grid(count);
        let sup = self.lambda_feasible_sup();
        if grid.len() < 2 || !(sup > 0.0) {
            return grid;
        }
        let ratio = grid[1] / grid[0];
        // bounded: the extension needs about log(last / sup) / log(1 / ratio) steps
        while let Some(&last) = grid.last() {
            if last < sup || grid.len() >= count + 10_000 {
                break;
            }
            grid.push(last * ratio);
        }
        grid
    }
}

#[derive(Debug, Clone)]
pub struct DescentConfig {
    pub max_sweeps: usize,
    /// Stop when no entry moves by more than this in a sweep.
    pub tol: f64,
    /// Record the objective after every coordinate update (slow; for checks).
    pub trace_updates: bool,
    pub exec: Exec,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            max_sweeps: 10_000,
            tol: 1e-10,
            trace_updates: false,
            exec: Exec::default(),
        }
    }
}

/// A sparse loading estimate at one penalty level.
#[derive(Debug, Clone)]
pub struct SparseLoadings {
    pub g: DMatrix<f64>,
    pub lambda: f64,
    /// Objective after every sweep, or after every update when traced.
    pub objective: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl SparseLoadings {
    pub fn support(&self) -> Vec<Vec<bool>> {
        self.g
            .row_iter()
            .map(|r| r.iter().map(|&v| v > 0.0).collect())
            .collect()
    }

    /// Species with no nonzero loading.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.g.nrows())
            .filter(|&j| self.g.row(j).iter().all(|&v| v == 0.0))
            .collect()
    }

    /// Number of nonzero loadings of each species.
    pub fn support_sizes(&self) -> Vec<usize> {
        self.g
            .row_iter()
            .map(|r| r.iter().filter(|&&v| v > 0.0).count())
            .collect()
    }
}

/// One closed-form coordinate update; returns the new value.
#[inline]
fn update_coord(g_row: &[f64], c_row: &[f64], h: &DMatrix<f64>, w: f64, lambda: f64, l: usize) -> f64 {
    let mut s = c_row[l];
    for (m, &gm) in g_row.iter().enumerate() {
        if m != l {
            s -= h[(m, l)] * gm;
        }
    }
    ((s - 0.5 * lambda * w).max(0.0)) / h[(l, l)]
}

/// Minimize `L(G)` at fixed `lambda` from `init`.
pub fn coord_descent(
    inputs: &DecoupleInputs,
    lambda: f64,
    init: &DMatrix<f64>,
    cfg: &DescentConfig,
) -> Result<SparseLoadings> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let (p, k) = (inputs.p(), inputs.k());
    if init.shape() != (p, k) {
        return Err(Error::DimensionMismatch(format!("init {:?} vs {p}x{k}", init.shape())));
    }
    let (c, h) = inputs.quadratic();
    let scale = (0..k).map(|l| h[(l, l)]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let dead: Vec<bool> = (0..k).map(|l| h[(l, l)] <= 1e-14 * scale).collect();
    for (l, _) in dead.iter().enumerate().filter(|(_, d)| **d) {
        warn!("factor {} has a ~zero expected Gram diagonal; its loadings are set to 0", l + 1);
    }
    // row-major working copies
    let mut g: Vec<f64> = (0..p).flat_map(|j| (0..k).map(move |l| (j, l))).map(|(j, l)| {
        if dead[l] { 0.0 } else { init[(j, l)].max(0.0) }
    }).collect();
    let crow: Vec<f64> = (0..p).flat_map(|j| (0..k).map(move |l| (j, l))).map(|(j, l)| c[(j, l)]).collect();
    let wrow: Vec<f64> = (0..p).flat_map(|j| (0..k).map(move |l| (j, l))).map(|(j, l)| inputs.w[(j, l)]).collect();

    let to_matrix = |g: &[f64]| DMatrix::from_row_slice(p, k, g);
    let mut objective = vec![inputs.objective(&to_matrix(&g), lambda)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for l in (0..k).filter(|&l| !dead[l]) {
            if cfg.trace_updates {
                for j in 0..p {
                    let new = update_coord(&g[j * k..(j + 1) * k], &crow[j * k..(j + 1) * k], &h, wrow[j * k + l], lambda, l);
                    max_change = max_change.max((new - g[j * k + l]).abs());
                    g[j * k + l] = new;
                    objective.push(inputs.objective(&to_matrix(&g), lambda));
                }
                continue;
            }
            let chunks = p.div_ceil(ROW_CHUNK);
            let g_ref = &g;
            let updates = map_range(cfg.exec, chunks, |ch| {
                let lo = ch * ROW_CHUNK;
                let hi = (lo + ROW_CHUNK).min(p);
                (lo..hi)
                    .map(|j| update_coord(&g_ref[j * k..(j + 1) * k], &crow[j * k..(j + 1) * k], &h, wrow[j * k + l], lambda, l))
                    .collect::<Vec<f64>>()
            });
            for (ch, vals) in updates.into_iter().enumerate() {
                for (off, new) in vals.into_iter().enumerate() {
                    let j = ch * ROW_CHUNK + off;
                    max_change = max_change.max((new - g[j * k + l]).abs());
                    g[j * k + l] = new;
                }
            }
        }
        if !cfg.trace_updates {
            objective.push(inputs.objective(&to_matrix(&g), lambda));
        }
        if max_change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("coordinate descent stopped after {sweeps} sweeps without converging (lambda {lambda:e})");
    }
    Ok(SparseLoadings {
        g: to_matrix(&g),
        lambda,
        objective,
        sweeps,
        converged,
    })
}

/// One point on the penalty path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub objective: f64,
    pub nonzeros: usize,
    pub empty_rows: usize,
}

/// Fit along a strictly decreasing positive grid, warm-starting each fit from
/// the previous one, and return the fit at the largest `lambda` whose
/// estimate has no all-zero row, together with the path visited.
pub fn select_lambda(
    inputs: &DecoupleInputs,
    grid: &[f64],
    cfg: &DescentConfig,
) -> Result<(SparseLoadings, Vec<PathPoint>)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if grid.iter().any(|&v| !(v > 0.0 && v.is_finite())) || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "lambda grid must be positive and strictly decreasing".into(),
        ));
    }
    let mut path = Vec::with_capacity(grid.len());
    let mut start = inputs.init.clone();
    let mut last_empty = Vec::new();
    for &lambda in grid {
        let fit = coord_descent(inputs, lambda, &start, cfg)?;
        let empty = fit.empty_rows();
        path.push(PathPoint {
            lambda,
            objective: *fit.objective.last().expect("objective recorded"),
            nonzeros: fit.g.iter().filter(|&&v| v > 0.0).count(),
            empty_rows: empty.len(),
        });
        if empty.is_empty() {
            return Ok((fit, path));
        }
        last_empty = empty;
        start = fit.g;
    }
    Err(Error::EmptyRows(last_empty))
}

/// Species grouped by exact support pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subcommunity {
    /// Zero-based factor indices in the pattern, ascending.
    pub pattern: Vec<usize>,
    /// Zero-based species indices, ascending.
    pub species: Vec<usize>,
    /// Full support over all factors.
    pub cosmopolitan: bool,
}

/// Group species by support pattern, ordered by pattern size and then
/// lexicographically by factor indices. Species with empty support form the
/// (first) empty pattern if any exist.
pub fn extract_subcommunities(support: &[Vec<bool>]) -> Vec<Subcommunity> {
    let k = support.first().map_or(0, Vec::len);
    let mut groups: BTreeMap<(usize, Vec<usize>), Vec<usize>> = BTreeMap::new();
    for (j, row) in support.iter().enumerate() {
        let pattern: Vec<usize> = (0..row.len()).filter(|&l| row[l]).collect();
        groups.entry((pattern.len(), pattern)).or_default().push(j);
    }
    groups
        .into_iter()
        .map(|((size, pattern), species)| Subcommunity {
            cosmopolitan: k > 0 && size == k,
            pattern,
            species,
        })
        .collect()
}

/// Dominant factor of each sample: `argmax_l E[omega_il]`, lowest index on ties.
pub fn cluster_samples(omega_mean: &DMatrix<f64>) -> Vec<usize> {
    omega_mean
        .row_iter()
        .map(|r| {
            let mut best = 0;
            for l in 1..r.len() {
                if r[l] > r[best] {
                    best = l;
                }
            }
            best
        })
        .collect()
}

/// Per-site label agreement.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteConsistency {
    pub site: String,
    pub samples: usize,
    /// Most common label (lowest on ties).
    pub majority: usize,
    /// Fraction of the site's samples carrying the majority label.
    pub agreement: f64,
}

pub fn site_consistency(labels: &[usize], sites: &[String], k: usize) -> Vec<SiteConsistency> {
    let mut by_site: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (l, s) in labels.iter().zip(sites) {
        by_site.entry(s.as_str()).or_default().push(*l);
    }
    by_site
        .into_iter()
        .map(|(site, ls)| {
            let mut counts = vec![0usize; k.max(1)];
            for &l in &ls {
                counts[l] += 1;
            }
            let mut majority = 0;
            for l in 1..counts.len() {
                if counts[l] > counts[majority] {
                    majority = l;
                }
            }
            SiteConsistency {
                site: site.to_string(),
                samples: ls.len(),
                majority,
                agreement: counts[majority] as f64 / ls.len() as f64,
            }
        })
        .collect()
}
