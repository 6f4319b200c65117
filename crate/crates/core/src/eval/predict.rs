//! Occurrence probabilities for held-out samples.
//!
//! A new sample joins each factor's normalization: with `S_l` the sum of
//! `exp(eta_il)` over the training samples in a draw,
//! `omega*_l = exp(eta*_l) / (exp(eta*_l) + S_l)`, and the rate of species `j`
//! is `omega*' gamma_j`. The occurrence probability is `1 - exp(-rate)`,
//! averaged over posterior draws (and over the inner chain when indicator
//! counts are observed).

use nalgebra::DMatrix;
use rand::Rng;

use crate::dist::{multinomial_into, normal};
use crate::error::{Error, Result};
use crate::par::{map_range, Exec};
use crate::rng::{stream, TAG_PREDICT};
use crate::summaries::{Draw, PosteriorSummaries};

#[derive(Debug, Clone)]
pub struct PredictConfig {
    /// Inner Gibbs iterations per posterior draw when indicators are observed.
    pub inner_iterations: usize,
    pub inner_burn_in: usize,
    /// Keep every `inner_thin`-th inner iteration after burn-in.
    pub inner_thin: usize,
    /// Use at most this many posterior draws, evenly spaced.
    pub max_draws: Option<usize>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            inner_iterations: 200,
            inner_burn_in: 50,
            inner_thin: 5,
            max_draws: None,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl PredictConfig {
    fn validate(&self) -> Result<()> {
        if self.inner_thin == 0 || self.inner_burn_in >= self.inner_iterations {
            return Err(Error::InvalidArgument(format!(
                "inner chain needs thin >= 1 and burn-in ({}) below iterations ({})",
                self.inner_burn_in, self.inner_iterations
            )));
        }
        Ok(())
    }
}

/// Draw indices used for prediction.
fn selected_draws(s: &PosteriorSummaries, max: Option<usize>) -> Vec<usize> {
    let t = s.draws.len();
    match max {
        Some(m) if m < t && m > 0 => (0..m).map(|i| i * t / m).collect(),
        _ => (0..t).collect(),
    }
}

struct Prepared<'a> {
    draw: &'a Draw,
    log_norm: Vec<f64>,
}

fn prepare<'a>(s: &'a PosteriorSummaries, idx: &[usize]) -> Vec<Prepared<'a>> {
    idx.iter()
        .map(|&t| Prepared {
            draw: &s.draws[t],
            log_norm: s.draws[t].log_normalizers(),
        })
        .collect()
}

fn check_inputs(x_new: &DMatrix<f64>, s: &PosteriorSummaries) -> Result<()> {
    s.require_draws(1)?;
    if x_new.ncols() != s.d {
        return Err(Error::DimensionMismatch(format!(
            "{} covariates supplied, model has {}",
            x_new.ncols(),
            s.d
        )));
    }
    Ok(())
}

#[inline]
fn held_out_weight(eta: f64, log_norm: f64) -> f64 {
    1.0 / (1.0 + (log_norm - eta).exp())
}

/// `acc_j += 1 - exp(-omega*' gamma_j)` for every species not masked out.
fn accumulate_occurrence(acc: &mut [f64], omega: &[f64], gamma: &DMatrix<f64>, skip: &[bool]) {
    let k = omega.len();
    for (j, a) in acc.iter_mut().enumerate() {
        if skip.get(j).copied().unwrap_or(false) {
            continue;
        }
        let mut r = 0.0;
        for l in 0..k {
            r += omega[l] * gamma[(j, l)];
        }
        *a += -(-r).exp_m1();
    }
}

fn prior_mean(x: &[f64], beta: &DMatrix<f64>, l: usize) -> f64 {
    x.iter().enumerate().map(|(c, v)| v * beta[(c, l)]).sum()
}

/// Occurrence probabilities (rows: new samples, columns: species) from the
/// covariates alone: `eta*_l ~ N(x*' beta_l, 1/tau2)` in every draw.
pub fn predict_covariates_only(
    x_new: &DMatrix<f64>,
    s: &PosteriorSummaries,
    cfg: &PredictConfig,
) -> Result<DMatrix<f64>> {
    check_inputs(x_new, s)?;
    let draws = prepare(s, &selected_draws(s, cfg.max_draws));
    let (m, p, k) = (x_new.nrows(), s.p, s.k);
    let sd = 1.0 / s.tau2.sqrt();
    let rows = map_range(cfg.exec, m, |i| {
        let mut rng = stream(cfg.seed, TAG_PREDICT, i as u64);
        let x: Vec<f64> = x_new.row(i).iter().copied().collect();
        let mut acc = vec![0.0; p];
        let mut omega = vec![0.0; k];
        for dv in &draws {
            for l in 0..k {
                let eta = normal(&mut rng, prior_mean(&x, &dv.draw.beta, l), sd);
                omega[l] = held_out_weight(eta, dv.log_norm[l]);
            }
            accumulate_occurrence(&mut acc, &omega, &dv.draw.gamma, &[]);
        }
        acc.iter().map(|a| a / draws.len() as f64).collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(m, p, |i, j| rows[i][j]))
}

/// Log conditional density of `eta*_l` given its allocated indicator count
/// `y` and the summed indicator loading `g`.
fn eta_log_density(eta: f64, y: f64, g: f64, log_norm: f64, mu: f64, tau2: f64) -> f64 {
    let z = eta - log_norm;
    // ln(logistic(z)) computed stably
    let ln_w = -(if z > 0.0 { (-z).exp().ln_1p() } else { -z + z.exp().ln_1p() });
    y * ln_w - g * ln_w.exp() - 0.5 * tau2 * (eta - mu).powi(2)
}

/// Univariate slice sampler with stepping out and shrinkage.
fn slice_sample<R: Rng + ?Sized, F: Fn(f64) -> f64>(rng: &mut R, x0: f64, f: F, width: f64) -> f64 {
    let fx0 = f(x0);
    let level = fx0 - crate::dist::exp1(rng);
    let u: f64 = rng.random();
    let mut lo = x0 - width * u;
    let mut hi = lo + width;
    let mut steps = 64;
    while steps > 0 && f(lo) > level {
        lo -= width;
        steps -= 1;
    }
    let mut steps = 64;
    while steps > 0 && f(hi) > level {
        hi += width;
        steps -= 1;
    }
    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if f(x) > level {
            return x;
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-12 {
            return x0;
        }
    }
}

/// Occurrence probabilities of the non-indicator species for new samples
/// whose indicator counts `observed` (rows: samples, columns: `indicators`)
/// are known. Columns of indicator species are `NaN`. An empty indicator set
/// is the covariates-only prediction.
///
/// Per posterior draw, an inner Gibbs chain alternates a multinomial split
/// of each observed indicator count across factors with a slice-sampling
/// update of each `eta*_l` from
/// `y*_l ln omega*_l - omega*_l sum_{j in J} gamma_jl - tau2 (eta*_l - x*' beta_l)^2 / 2`.
pub fn predict_with_indicators(
    x_new: &DMatrix<f64>,
    observed: &DMatrix<u64>,
    indicators: &[usize],
    s: &PosteriorSummaries,
    cfg: &PredictConfig,
) -> Result<DMatrix<f64>> {
    if indicators.is_empty() {
        return predict_covariates_only(x_new, s, cfg);
    }
    check_inputs(x_new, s)?;
    cfg.validate()?;
    let (m, p, k) = (x_new.nrows(), s.p, s.k);
    if observed.shape() != (m, indicators.len()) {
        return Err(Error::DimensionMismatch(format!(
            "observed indicator counts {:?}, expected {m}x{}",
            observed.shape(),
            indicators.len()
        )));
    }
    if let Some(&j) = indicators.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidArgument(format!("indicator species {j} out of range")));
    }
    let mut skip = vec![false; p];
    for &j in indicators {
        skip[j] = true;
    }
    let draws = prepare(s, &selected_draws(s, cfg.max_draws));
    let sd = 1.0 / s.tau2.sqrt();
    let tau2 = s.tau2;
    let rows = map_range(cfg.exec, m, |i| {
        let mut rng = stream(cfg.seed, TAG_PREDICT, i as u64);
        let x: Vec<f64> = x_new.row(i).iter().copied().collect();
        let y: Vec<u64> = observed.row(i).iter().copied().collect();
        let mut acc = vec![0.0; p];
        let mut kept = 0usize;
        let mut omega = vec![0.0; k];
        let mut weights = vec![0.0; k];
        let mut split = vec![0u64; k];
        for dv in &draws {
            let gam = &dv.draw.gamma;
            let mu: Vec<f64> = (0..k).map(|l| prior_mean(&x, &dv.draw.beta, l)).collect();
            let g_ind: Vec<f64> = (0..k).map(|l| indicators.iter().map(|&j| gam[(j, l)]).sum()).collect();
            let mut eta: Vec<f64> = (0..k).map(|l| normal(&mut rng, mu[l], sd)).collect();
            for it in 0..cfg.inner_iterations {
                for l in 0..k {
                    omega[l] = held_out_weight(eta[l], dv.log_norm[l]);
                }
                let mut alloc = vec![0u64; k];
                for (t, &j) in indicators.iter().enumerate() {
                    if y[t] == 0 {
                        continue;
                    }
                    for l in 0..k {
                        weights[l] = omega[l] * gam[(j, l)];
                    }
                    multinomial_into(&mut rng, y[t], &weights, &mut split);
                    for l in 0..k {
                        alloc[l] += split[l];
                    }
                }
                for l in 0..k {
                    let (yl, gl, ln, ml) = (alloc[l] as f64, g_ind[l], dv.log_norm[l], mu[l]);
                    eta[l] = slice_sample(&mut rng, eta[l], |e| eta_log_density(e, yl, gl, ln, ml, tau2), 2.0 * sd);
                }
                if it >= cfg.inner_burn_in && (it + 1 - cfg.inner_burn_in) % cfg.inner_thin == 0 {
                    for l in 0..k {
                        omega[l] = held_out_weight(eta[l], dv.log_norm[l]);
                    }
                    accumulate_occurrence(&mut acc, &omega, gam, &skip);
                    kept += 1;
                }
            }
        }
        acc.iter()
            .enumerate()
            .map(|(j, a)| if skip[j] { f64::NAN } else { a / kept as f64 })
            .collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(m, p, |i, j| rows[i][j]))
}
