//! Approximate MAP estimation used to initialize the Gibbs sampler.
//!
//! Each replicate alternates multiplicative (majorize-minimize) updates for the
//! sample factors and species loadings, a closed-form update for the loading
//! scales `theta`, and a few damped Newton steps for the loading shapes `xi`.
//! Sample-factor columns are renormalized to sum to one after every update.
//! The prior on the sample factors is dropped. Many independently started
//! replicates are run and the one with the highest log posterior is kept.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::counts::{CovariateTable, SparseCounts};
use crate::dist::{exp1, gamma, inv_gamma};
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelState};
use crate::par::{map_range, Exec};
use crate::rng::{stream, TAG_REPLICATE};
use crate::special::{digamma, ln_gamma, trigamma};

/// Floor applied to loadings and sample factors during multiplicative updates.
pub const FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MapConfig {
    pub k: usize,
    pub replicates: usize,
    pub max_iter: usize,
    /// Stop when the relative change of the log posterior falls below this.
    pub tol: f64,
    /// Newton steps on `xi` per outer iteration.
    pub newton_steps: usize,
    /// Maximum number of step halvings per Newton step.
    pub max_halvings: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            k: 5,
            replicates: 50,
            max_iter: 2000,
            tol: 1e-8,
            newton_steps: 3,
            max_halvings: 50,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("rank k must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one MAP replicate.
#[derive(Debug, Clone)]
pub struct MapReplicate {
    pub omega: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub theta: DVector<f64>,
    pub log_posterior: f64,
    pub iterations: usize,
    /// Log posterior after every iteration, starting with the initial value.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MapFit {
    pub state: ModelState,
    pub log_posterior: f64,
    pub best_replicate: usize,
    /// Final log posterior of each replicate; `None` for failed replicates.
    pub replicate_log_posteriors: Vec<Option<f64>>,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// `theta_l <- (sum_j gamma_jl + d0) / (p xi_l + c0 + 1)`.
pub fn update_theta_map(sum_gamma: f64, xi: f64, p: usize, c0: f64, d0: f64) -> f64 {
    (sum_gamma + d0) / (p as f64 * xi + c0 + 1.0)
}

/// `xi`-dependent part of the log posterior for one factor.
fn xi_objective(xi: f64, sum_log_gamma: f64, theta: f64, p: usize, h: &HyperParams) -> f64 {
    let p = p as f64;
    (xi - 1.0) * sum_log_gamma - p * ln_gamma(xi) - p * xi * theta.ln() + (h.a0 - 1.0) * xi.ln()
        - xi / h.b0
}

/// Damped Newton updates of a loading shape `xi_l`.
///
/// The step direction uses
/// `g = p(digamma(xi) + ln theta) - sum_j ln gamma_jl - (a0-1)/xi + 1/theta` over
/// `h = p trigamma(xi) + (a0-1)/xi^2`. The step length starts at 1 and is
/// halved until the new value is positive and the log posterior in `xi` does
/// not decrease; if no step qualifies, `xi` is returned unchanged.
pub fn update_xi_newton(
    xi: f64,
    sum_log_gamma: f64,
    theta: f64,
    p: usize,
    h: &HyperParams,
    steps: usize,
    max_halvings: usize,
) -> f64 {
    assert!(xi > 0.0, "xi must be positive, got {xi}");
    let pf = p as f64;
    let mut xi = xi;
    for _ in 0..steps {
        let grad = pf * (digamma(xi) + theta.ln()) - sum_log_gamma - (h.a0 - 1.0) / xi + 1.0 / theta;
        if grad == 0.0 {
            break;
        }
        let hess = pf * trigamma(xi) + (h.a0 - 1.0) / (xi * xi);
        let step = grad / hess.abs().max(1e-300);
        let f0 = xi_objective(xi, sum_log_gamma, theta, p, h);
        let mut tau = 1.0;
        let mut moved = false;
        for _ in 0..=max_halvings {
            let cand = xi - tau * step;
            if cand > 0.0 && xi_objective(cand, sum_log_gamma, theta, p, h) >= f0 {
                xi = cand;
                moved = true;
                break;
            }
            tau *= 0.5;
        }
        if !moved {
            break;
        }
    }
    xi
}

struct Workspace {
    ratio: Vec<f64>,
}

impl Workspace {
    /// `y_ij / (omega_i' gamma_j)` at every nonzero.
    fn fill_ratio(&mut self, counts: &SparseCounts, omega: &DMatrix<f64>, gamma: &DMatrix<f64>) {
        let k = omega.ncols();
        for (r, e) in self.ratio.iter_mut().zip(counts.entries()) {
            let mut rate = 0.0;
            for l in 0..k {
                rate += omega[(e.row, l)] * gamma[(e.col, l)];
            }
            *r = e.count as f64 / rate;
        }
    }
}

fn log_posterior(
    counts: &SparseCounts,
    omega: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    xi: &DVector<f64>,
    theta: &DVector<f64>,
    h: &HyperParams,
) -> f64 {
    let k = omega.ncols();
    let state = ModelState {
        omega: omega.clone(),
        gamma: gamma.clone(),
        eta: DMatrix::zeros(0, k),
        beta: DMatrix::zeros(0, k),
        xi: xi.clone(),
        theta: theta.clone(),
    };
    state.map_log_posterior(counts, h)
}

/// Run one MAP replicate from a prior draw of the loadings and Dirichlet(1)
/// sample-factor columns.
pub fn fit_replicate(
    counts: &SparseCounts,
    cfg: &MapConfig,
    h: &HyperParams,
    replicate: usize,
) -> Result<MapReplicate> {
    let (n, p, k) = (counts.n(), counts.p(), cfg.k);
    let mut rng = stream(cfg.seed, TAG_REPLICATE, replicate as u64);

    let mut xi = DVector::from_fn(k, |_, _| gamma(&mut rng, h.a0, h.b0));
    let mut theta = DVector::from_fn(k, |_, _| inv_gamma(&mut rng, h.c0, h.d0));
    let mut gam = DMatrix::from_fn(p, k, |_, l| gamma(&mut rng, xi[l], theta[l]).max(FLOOR));
    let mut omega = DMatrix::from_fn(n, k, |_, _| exp1(&mut rng));
    for mut col in omega.column_iter_mut() {
        let s = col.sum();
        col /= s;
    }

    let mut ws = Workspace {
        ratio: vec![0.0; counts.nnz()],
    };
    let mut lp = log_posterior(counts, &omega, &gam, &xi, &theta, h);
    if !lp.is_finite() {
        return Err(Error::Numerical(format!(
            "replicate {replicate}: non-finite initial log posterior"
        )));
    }
    let mut trace = vec![lp];
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;

        // sample factors: omega_il *= sum_j (y_ij/yhat_ij) gamma_jl / sum_j gamma_jl, then renormalize
        ws.fill_ratio(counts, &omega, &gam);
        let gamma_sums: Vec<f64> = (0..k).map(|l| gam.column(l).sum()).collect();
        for i in 0..n {
            let range = counts.row_range(i);
            let mut acc = vec![0.0; k];
            for (e, r) in counts.entries()[range.clone()].iter().zip(&ws.ratio[range]) {
                for (l, a) in acc.iter_mut().enumerate() {
                    *a += r * gam[(e.col, l)];
                }
            }
            for l in 0..k {
                omega[(i, l)] = (omega[(i, l)] * acc[l] / gamma_sums[l]).max(FLOOR);
            }
        }
        for mut col in omega.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }

        // loadings: gamma_jl <- (gamma_jl sum_i (y_ij/yhat_ij) omega_il + xi_l - 1) / (sum_i omega_il + 1/theta_l)
        ws.fill_ratio(counts, &omega, &gam);
        let omega_sums: Vec<f64> = (0..k).map(|l| omega.column(l).sum()).collect();
        for j in 0..p {
            let mut acc = vec![0.0; k];
            for &idx in counts.col_indices(j) {
                let e = counts.entries()[idx];
                let r = ws.ratio[idx];
                for (l, a) in acc.iter_mut().enumerate() {
                    *a += r * omega[(e.row, l)];
                }
            }
            for l in 0..k {
                let num = gam[(j, l)] * acc[l] + xi[l] - 1.0;
                gam[(j, l)] = (num / (omega_sums[l] + 1.0 / theta[l])).max(FLOOR);
            }
        }

        for l in 0..k {
            theta[l] = update_theta_map(gam.column(l).sum(), xi[l], p, h.c0, h.d0);
            let slg: f64 = gam.column(l).iter().map(|g| g.ln()).sum();
            xi[l] = update_xi_newton(xi[l], slg, theta[l], p, h, cfg.newton_steps, cfg.max_halvings);
        }

        let new_lp = log_posterior(counts, &omega, &gam, &xi, &theta, h);
        if !new_lp.is_finite() {
            return Err(Error::Numerical(format!(
                "replicate {replicate}: non-finite log posterior at iteration {it}"
            )));
        }
        trace.push(new_lp);
        let rel = (new_lp - lp).abs() / lp.abs().max(1e-300);
        lp = new_lp;
        if rel < cfg.tol {
            break;
        }
    }
    debug!("replicate {replicate}: log posterior {lp:.6} after {iterations} iterations");
    Ok(MapReplicate {
        omega,
        gamma: gam,
        xi,
        theta,
        log_posterior: lp,
        iterations,
        trace,
    })
}

/// Complete a MAP estimate into a full [`ModelState`]: `eta` is the centered
/// log of the sample factors and `beta` the conditional posterior mean given `eta`.
pub fn state_from_map(
    omega: &DMatrix<f64>,
    gamma: DMatrix<f64>,
    xi: DVector<f64>,
    theta: DVector<f64>,
    x: &CovariateTable,
    h: &HyperParams,
) -> ModelState {
    let (n, k) = omega.shape();
    let mut eta = omega.map(|w| w.max(f64::MIN_POSITIVE).ln());
    for mut col in eta.column_iter_mut() {
        let m = col.sum() / n as f64;
        col.add_scalar_mut(-m);
    }
    let d = x.d();
    let beta = if d == 0 {
        DMatrix::zeros(0, k)
    } else {
        let mut prec = x.x.transpose() * &x.x * h.tau2;
        for c in 0..d {
            prec[(c, c)] += 1.0 / h.sigma2_beta;
        }
        let rhs = x.x.transpose() * &eta * h.tau2;
        prec.cholesky()
            .map(|ch| ch.solve(&rhs))
            .unwrap_or_else(|| DMatrix::zeros(d, k))
    };
    ModelState::from_eta(eta, gamma, beta, xi, theta)
}

/// Run all replicates (in parallel when enabled) and keep the best.
pub fn map_fit(
    counts: &SparseCounts,
    x: &CovariateTable,
    cfg: &MapConfig,
    h: &HyperParams,
) -> Result<MapFit> {
    cfg.validate()?;
    h.validate()?;
    if counts.nnz() == 0 {
        return Err(Error::InvalidArgument(
            "count matrix has no nonzero entries; nothing to fit".into(),
        ));
    }
    if x.n() != counts.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate rows for {} samples",
            x.n(),
            counts.n()
        )));
    }
    let results = map_range(cfg.exec, cfg.replicates, |r| fit_replicate(counts, cfg, h, r));
    let mut best: Option<(usize, MapReplicate)> = None;
    let mut lps = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rep) => {
                lps.push(Some(rep.log_posterior));
                // strict > keeps the lowest index on ties
                if best
                    .as_ref()
                    .is_none_or(|(_, b)| rep.log_posterior > b.log_posterior)
                {
                    best = Some((r, rep));
                }
            }
            Err(e) => {
                warn!("MAP replicate {r} failed: {e}");
                lps.push(None);
            }
        }
    }
    let (best_replicate, rep) = best.ok_or(Error::AllReplicatesFailed(cfg.replicates))?;
    let state = state_from_map(&rep.omega, rep.gamma, rep.xi, rep.theta, x, h);
    Ok(MapFit {
        state,
        log_posterior: rep.log_posterior,
        best_replicate,
        replicate_log_posteriors: lps,
        iterations: rep.iterations,
        trace: rep.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use approx::assert_relative_eq;

    #[test]
    fn theta_update_closed_form() {
        assert_relative_eq!(update_theta_map(3.0, 1.0, 2, 2.0, 1.0), 0.8);
        assert_relative_eq!(update_theta_map(0.0, 1.0, 1, 2.0, 1.0), 0.25);
        let base = update_theta_map(3.0, 1.0, 2, 2.0, 1.0);
        assert_relative_eq!(update_theta_map(30.0, 1.0, 2, 2.0, 10.0), 10.0 * base);
    }

    #[test]
    fn theta_update_is_grid_maximizer() {
        // theta-conditional log posterior: -(p xi + c0 + 1) ln theta - (sum_gamma + d0)/theta
        let (sg, xi, p, c0, d0) = (3.0, 1.0, 2usize, 2.0, 1.0);
        let f = |t: f64| -(p as f64 * xi + c0 + 1.0) * t.ln() - (sg + d0) / t;
        let best = (1..=200_000)
            .map(|i| i as f64 * 1e-5)
            .max_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap();
        assert!((best - 0.8).abs() < 1e-4, "{best}");
    }

    #[test]
    fn xi_newton_fixed_point_and_positivity() {
        let h = HyperParams::default();
        // choose sum_log_gamma so the displayed gradient vanishes at xi = 2
        let (xi, theta, p) = (2.0_f64, 0.7_f64, 10usize);
        let slg = p as f64 * (digamma(xi) + theta.ln()) - (h.a0 - 1.0) / xi + 1.0 / theta;
        assert_eq!(update_xi_newton(xi, slg, theta, p, &h, 3, 50), xi);
        // a full step would go negative: the result stays positive
        let out = update_xi_newton(0.05, -1e6, 1.0, 10, &h, 3, 50);
        assert!(out > 0.0);
    }

    #[test]
    fn xi_newton_approaches_shape_mle() {
        let h = HyperParams::default();
        let mut rng = from_seed(11);
        let (shape, theta, p) = (3.0, 2.0, 100_000usize);
        let slg: f64 = (0..p).map(|_| gamma(&mut rng, shape, theta).ln()).sum();
        // numerical MLE of the shape with theta known: bisection on the score
        let score = |a: f64| slg / p as f64 - theta.ln() - digamma(a);
        let (mut lo, mut hi) = (0.1, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if score(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let mle = 0.5 * (lo + hi);
        let mut xi = 1.0;
        for _ in 0..50 {
            xi = update_xi_newton(xi, slg, theta, p, &h, 3, 50);
        }
        assert!((xi - mle).abs() < 1e-3, "xi {xi} vs mle {mle}");
        // MC error of the shape MLE at p = 1e5 is about 0.013
        assert!((xi - shape).abs() < 0.05, "{xi}");
    }

    #[test]
    fn multiplicative_updates_keep_positivity_and_normalization() {
        let c = SparseCounts::from_triplets(4, 3, &[(0, 0, 5), (1, 1, 2), (3, 2, 9), (2, 0, 1)])
            .unwrap();
        let cfg = MapConfig {
            k: 2,
            replicates: 1,
            max_iter: 50,
            ..Default::default()
        };
        let rep = fit_replicate(&c, &cfg, &HyperParams::default(), 0).unwrap();
        assert!(rep.gamma.iter().all(|&g| g > 0.0));
        assert!(rep.omega.iter().all(|&w| w > 0.0));
        for l in 0..2 {
            assert!((rep.omega.column(l).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let c = SparseCounts::from_triplets(3, 3, &[]).unwrap();
        let x = CovariateTable::empty(3);
        assert!(map_fit(&c, &x, &MapConfig::default(), &HyperParams::default()).is_err());
    }
}
