//! Gibbs sampler for the hierarchical Poisson factorization.
//!
//! One sweep, in order:
//!
//! 1. split every nonzero count across factors (multinomial allocation);
//! 2. draw the loading shapes `xi` with the loadings integrated out, using
//!    Chinese-restaurant-table augmentation of the negative-binomial margin;
//! 3. draw the loadings `Gamma` from their gamma conditional given the new `xi`;
//! 4. draw the loading scales `theta` from their inverse-gamma conditional;
//! 5. draw `eta` one entry at a time with Pólya-Gamma augmentation of the
//!    binomial form of the sample-factor likelihood, then `beta` given `eta`.
//!
//! Steps 2 and 3 together are a single blocked draw of `(xi, Gamma)`, which is
//! why `Gamma` is refreshed immediately after `xi`.
//!
//! Randomness for every parallel unit is derived from a per-sweep seed, so a
//! chain is reproducible for a fixed seed whatever the execution mode.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::counts::{CovariateTable, SparseCounts};
use crate::dist::{crt, gamma, inv_gamma, multinomial_into, normal, std_normal};
use crate::error::{Error, Result};
use crate::model::{softmax_columns, HyperParams, ModelState};
use crate::par::{for_chunks_mut, map_range, Exec};
use crate::polya_gamma::sample_pg;
use crate::rng::{self, stream, TAG_ALLOC, TAG_ETA, TAG_GAMMA, TAG_HYPER};
use crate::summaries::{Draw, MomentAccumulator, PosteriorSummaries};

/// Nonzeros per allocation work unit.
const ALLOC_CHUNK: usize = 4096;
/// Species per loading-update work unit.
const SPECIES_CHUNK: usize = 1024;
/// Bounded retries for a non-finite Pólya-Gamma draw.
const PG_RETRIES: usize = 16;

/// Factor-specific latent counts for every nonzero, with their margins.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    k: usize,
    /// `nnz * k`, entry-major: `counts[e * k + l] = y_ijl`.
    pub counts: Vec<u64>,
    /// `n * k`: `y_i.l`.
    pub row_sums: Vec<u64>,
    /// `p * k`: `y_.jl`.
    pub col_sums: Vec<u64>,
    /// `k`: `y_..l`.
    pub totals: Vec<u64>,
}

impl Allocation {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entry(&self, e: usize) -> &[u64] {
        &self.counts[e * self.k..(e + 1) * self.k]
    }

    pub fn row_sum(&self, i: usize, l: usize) -> u64 {
        self.row_sums[i * self.k + l]
    }

    pub fn col_sum(&self, j: usize, l: usize) -> u64 {
        self.col_sums[j * self.k + l]
    }

    fn from_entry_counts(counts_mat: &SparseCounts, k: usize, counts: Vec<u64>) -> Self {
        let mut row_sums = vec![0u64; counts_mat.n() * k];
        let mut col_sums = vec![0u64; counts_mat.p() * k];
        let mut totals = vec![0u64; k];
        for (e, entry) in counts_mat.entries().iter().enumerate() {
            for l in 0..k {
                let y = counts[e * k + l];
                row_sums[entry.row * k + l] += y;
                col_sums[entry.col * k + l] += y;
                totals[l] += y;
            }
        }
        Allocation {
            k,
            counts,
            row_sums,
            col_sums,
            totals,
        }
    }

    /// Number of nonzeros whose factor counts do not sum to the observed count,
    /// plus any inconsistency in the margins (counted as one each).
    pub fn violations(&self, counts_mat: &SparseCounts) -> usize {
        let k = self.k;
        let mut bad = counts_mat
            .entries()
            .iter()
            .enumerate()
            .filter(|(e, entry)| self.entry(*e).iter().sum::<u64>() != entry.count)
            .count();
        let rebuilt = Allocation::from_entry_counts(counts_mat, k, self.counts.clone());
        bad += usize::from(rebuilt.row_sums != self.row_sums);
        bad += usize::from(rebuilt.col_sums != self.col_sums);
        bad += usize::from(rebuilt.totals != self.totals);
        bad
    }
}

/// Split each nonzero `y_ij` across factors with probabilities
/// proportional to `omega_il gamma_jl`. Zero cells are never visited.
pub fn allocate_counts(
    state: &ModelState,
    counts: &SparseCounts,
    exec: Exec,
    seed: u64,
) -> Allocation {
    let k = state.k();
    let entries = counts.entries();
    let mut alloc = vec![0u64; entries.len() * k];
    for_chunks_mut(exec, &mut alloc, ALLOC_CHUNK * k, |c, out| {
        let mut rng = stream(seed, TAG_ALLOC, c as u64);
        let mut w = vec![0.0; k];
        let base = c * ALLOC_CHUNK;
        for (off, slot) in out.chunks_mut(k).enumerate() {
            let e = entries[base + off];
            if k == 1 {
                slot[0] = e.count;
                continue;
            }
            for (l, wl) in w.iter_mut().enumerate() {
                *wl = state.omega[(e.row, l)] * state.gamma[(e.col, l)];
            }
            multinomial_into(&mut rng, e.count, &w, slot);
        }
    });
    Allocation::from_entry_counts(counts, k, alloc)
}

/// Draw `gamma_jl ~ Gamma(xi_l + y_.jl, scale = 1 / (1/theta_l + sum_i omega_il))`.
pub fn update_gamma(alloc: &Allocation, state: &mut ModelState, exec: Exec, seed: u64) {
    let (p, k) = (state.p(), state.k());
    let rate: Vec<f64> = (0..k)
        .map(|l| 1.0 / state.theta[l] + state.omega.column(l).sum())
        .collect();
    let xi = state.xi.clone();
    let chunks = p.div_ceil(SPECIES_CHUNK);
    let blocks = map_range(exec, chunks, |c| {
        let mut rng = stream(seed, TAG_GAMMA, c as u64);
        let lo = c * SPECIES_CHUNK;
        let hi = (lo + SPECIES_CHUNK).min(p);
        let mut out = Vec::with_capacity((hi - lo) * k);
        for j in lo..hi {
            for l in 0..k {
                let shape = xi[l] + alloc.col_sum(j, l) as f64;
                out.push(gamma(&mut rng, shape, 1.0 / rate[l]));
            }
        }
        out
    });
    for (c, block) in blocks.into_iter().enumerate() {
        let lo = c * SPECIES_CHUNK;
        for (off, g) in block.chunks(k).enumerate() {
            for l in 0..k {
                state.gamma[(lo + off, l)] = g[l];
            }
        }
    }
}

/// Draw the loading shapes with the loadings integrated out.
///
/// Marginally `y_.jl ~ NegBin(xi_l, theta_l / (1 + theta_l))`; with table
/// counts `L_jl ~ CRT(y_.jl, xi_l)` the conditional is
/// `xi_l ~ Gamma(a0 + sum_j L_jl, rate = 1/b0 + p ln(1 + theta_l))`.
/// Must be followed by [`update_gamma`].
pub fn update_xi(
    alloc: &Allocation,
    state: &mut ModelState,
    h: &HyperParams,
    exec: Exec,
    seed: u64,
) {
    let (p, k) = (state.p(), state.k());
    let xi = state.xi.clone();
    let chunks = p.div_ceil(SPECIES_CHUNK);
    let partial = map_range(exec, chunks, |c| {
        let mut rng = stream(seed, TAG_HYPER, c as u64);
        let lo = c * SPECIES_CHUNK;
        let hi = (lo + SPECIES_CHUNK).min(p);
        let mut tables = vec![0u64; k];
        for j in lo..hi {
            for l in 0..k {
                tables[l] += crt(&mut rng, alloc.col_sum(j, l), xi[l]);
            }
        }
        tables
    });
    let mut rng = stream(seed, TAG_HYPER, u64::MAX);
    for l in 0..k {
        let tables: u64 = partial.iter().map(|t| t[l]).sum();
        let rate = 1.0 / h.b0 + p as f64 * state.theta[l].ln_1p();
        state.xi[l] = gamma(&mut rng, h.a0 + tables as f64, 1.0 / rate);
    }
}

/// Draw `theta_l ~ InvGamma(c0 + p xi_l, d0 + sum_j gamma_jl)`.
pub fn update_theta<R: rand::Rng + ?Sized>(state: &mut ModelState, h: &HyperParams, rng: &mut R) {
    let p = state.p() as f64;
    for l in 0..state.k() {
        let shape = h.c0 + p * state.xi[l];
        let scale = h.d0 + state.gamma.column(l).sum();
        state.theta[l] = inv_gamma(rng, shape, scale);
    }
}

/// Precomputed covariate quantities for the regression update.
#[derive(Debug, Clone)]
pub struct Regression {
    x: DMatrix<f64>,
    /// Cholesky factor of `tau2 X'X + I / sigma2_beta`.
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    tau2: f64,
}

impl Regression {
    pub fn new(x: &CovariateTable, h: &HyperParams) -> Result<Self> {
        let d = x.d();
        let chol = if d == 0 {
            None
        } else {
            let mut prec = x.x.transpose() * &x.x * h.tau2;
            for c in 0..d {
                prec[(c, c)] += 1.0 / h.sigma2_beta;
            }
            Some(prec.cholesky().ok_or_else(|| {
                Error::Numerical("regression precision is not positive definite".into())
            })?)
        };
        Ok(Regression {
            x: x.x.clone(),
            chol,
            tau2: h.tau2,
        })
    }

    /// Draw `beta_l | eta_.l ~ N(P^-1 tau2 X' eta_l, P^-1)`.
    fn draw_beta<R: rand::Rng + ?Sized>(&self, eta_col: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let Some(chol) = &self.chol else {
            return DVector::zeros(0);
        };
        let rhs = self.x.transpose() * eta_col * self.tau2;
        let mean = chol.solve(&rhs);
        let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
        // P = L L', so L'^-1 z has covariance P^-1
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular factor is nonsingular");
        mean + noise
    }
}

/// Sequentially redraw `eta_.l` for one factor given its allocation margins.
///
/// With `C_il = log sum_{i' != i} exp(eta_i'l)` and `psi_il = eta_il - C_il`,
/// the conditional likelihood of `eta_il` is binomial in `logistic(psi_il)`
/// with `y_i.l` successes out of `y_..l`. Given `w ~ PG(y_..l, psi_il)` the
/// conditional is normal with precision `tau2 + w` and mean
/// `(tau2 mu_il + y_i.l - y_..l/2 + w C_il) / (tau2 + w)`.
fn update_eta_column<R: rand::Rng + ?Sized>(
    eta: &mut [f64],
    mu: &[f64],
    successes: &[u64],
    trials: u64,
    tau2: f64,
    rng: &mut R,
) -> Result<()> {
    let n = eta.len();
    if n == 1 {
        // a single sample always has omega = 1; only the prior applies
        eta[0] = normal(rng, mu[0], 1.0 / tau2.sqrt());
        return Ok(());
    }
    let mut shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
    let mut total: f64 = w.iter().sum();
    let b = trials as f64;
    for i in 0..n {
        let mut rest = total - w[i];
        if !(rest > 1e-10 * total) {
            rest = w.iter().enumerate().filter(|&(t, _)| t != i).map(|(_, v)| v).sum();
        }
        let c = shift + rest.ln();
        let (mean, prec) = if trials > 0 {
            let psi = eta[i] - c;
            let mut pg = f64::NAN;
            for _ in 0..PG_RETRIES {
                pg = sample_pg(rng, b, psi);
                if pg.is_finite() {
                    break;
                }
            }
            if !pg.is_finite() {
                return Err(Error::Numerical(format!(
                    "Polya-Gamma draw PG({b}, {psi}) not finite after {PG_RETRIES} attempts"
                )));
            }
            let kappa = successes[i] as f64 - 0.5 * b;
            let prec = tau2 + pg;
            ((tau2 * mu[i] + kappa + pg * c) / prec, prec)
        } else {
            (mu[i], tau2)
        };
        let new = normal(rng, mean, 1.0 / prec.sqrt());
        eta[i] = new;
        if new - shift > 50.0 {
            shift = new;
            for (v, e) in w.iter_mut().zip(eta.iter()) {
                *v = (e - shift).exp();
            }
            total = w.iter().sum();
        } else {
            w[i] = (new - shift).exp();
            total = rest + w[i];
        }
    }
    Ok(())
}

/// Redraw `eta` (Pólya-Gamma augmented) and then `beta`, one factor per work
/// unit; `omega` is recomputed as the column softmax of the new `eta`.
pub fn update_eta_pg(
    alloc: &Allocation,
    state: &mut ModelState,
    reg: &Regression,
    h: &HyperParams,
    exec: Exec,
    seed: u64,
) -> Result<()> {
    let (n, k) = (state.n(), state.k());
    let results = map_range(exec, k, |l| -> Result<(Vec<f64>, DVector<f64>)> {
        let mut rng = stream(seed, TAG_ETA, l as u64);
        let mu: Vec<f64> = if reg.chol.is_some() {
            (&reg.x * state.beta.column(l)).iter().copied().collect()
        } else {
            vec![0.0; n]
        };
        let successes: Vec<u64> = (0..n).map(|i| alloc.row_sum(i, l)).collect();
        let mut eta: Vec<f64> = state.eta.column(l).iter().copied().collect();
        update_eta_column(&mut eta, &mu, &successes, alloc.totals[l], h.tau2, &mut rng)?;
        let beta = reg.draw_beta(&DVector::from_vec(eta.clone()), &mut rng);
        Ok((eta, beta))
    });
    for (l, res) in results.into_iter().enumerate() {
        let (eta, beta) = res?;
        state.eta.set_column(l, &DVector::from_vec(eta));
        if beta.len() > 0 {
            state.beta.set_column(l, &beta);
        }
    }
    state.omega = softmax_columns(&state.eta);
    Ok(())
}

/// One full sweep. Returns the allocation drawn at its start.
pub fn sweep(
    state: &mut ModelState,
    counts: &SparseCounts,
    reg: &Regression,
    h: &HyperParams,
    exec: Exec,
    seed: u64,
) -> Result<Allocation> {
    let alloc = allocate_counts(state, counts, exec, seed);
    update_xi(&alloc, state, h, exec, seed);
    update_gamma(&alloc, state, exec, seed);
    let mut rng = stream(seed, TAG_HYPER, u64::MAX - 1);
    update_theta(state, h, &mut rng);
    update_eta_pg(&alloc, state, reg, h, exec, seed)?;
    Ok(alloc)
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 35_000,
            burn_in: 25_000,
            thin: 10,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if self.burn_in > self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} exceeds iterations {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// Number of draws a chain with this configuration stores.
    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

fn state_dump(it: usize, s: &ModelState) -> String {
    let range = |m: &DMatrix<f64>| {
        let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!("[{lo:e}, {hi:e}]")
    };
    format!(
        "non-finite log posterior at iteration {it}: gamma in {}, eta in {}, beta in {}, xi = {:?}, theta = {:?}",
        range(&s.gamma),
        range(&s.eta),
        range(&s.beta),
        s.xi.as_slice(),
        s.theta.as_slice()
    )
}

/// Run a chain, calling `observe(iteration, state, allocation)` after every sweep.
pub fn run_chain_with<F>(
    counts: &SparseCounts,
    x: &CovariateTable,
    cfg: &ChainConfig,
    h: &HyperParams,
    init: ModelState,
    mut observe: F,
) -> Result<(PosteriorSummaries, ModelState)>
where
    F: FnMut(usize, &ModelState, &Allocation),
{
    cfg.validate()?;
    h.validate()?;
    init.check_dims(counts, x)?;
    let reg = Regression::new(x, h)?;
    let mut state = init;
    state.omega = softmax_columns(&state.eta);
    let mut chain_rng = rng::from_seed(cfg.seed);
    let mut acc = MomentAccumulator::new(state.n(), state.p(), state.k());
    let mut draws = Vec::with_capacity(cfg.kept_draws());
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let sweep_seed: u64 = chain_rng.random();
        let alloc = sweep(&mut state, counts, &reg, h, cfg.exec, sweep_seed)?;
        let lp = state.log_joint(counts, x, h);
        if !lp.is_finite() {
            return Err(Error::Numerical(state_dump(it, &state)));
        }
        trace.push(lp);
        observe(it, &state, &alloc);
        if it >= cfg.burn_in && (it + 1 - cfg.burn_in) % cfg.thin == 0 {
            let draw = Draw::from_state(it, &state);
            acc.push(&draw);
            draws.push(draw);
        }
        if (it + 1) % 1000 == 0 {
            info!("iteration {}/{}: log posterior {lp:.3}", it + 1, cfg.iterations);
        } else {
            debug!("iteration {it}: log posterior {lp:.3}");
        }
    }
    let summaries = PosteriorSummaries::from_parts(acc, draws, trace, h.tau2);
    Ok((summaries, state))
}

/// Run a chain from `init` and summarize the kept draws.
pub fn run_chain(
    counts: &SparseCounts,
    x: &CovariateTable,
    cfg: &ChainConfig,
    h: &HyperParams,
    init: ModelState,
) -> Result<PosteriorSummaries> {
    run_chain_with(counts, x, cfg, h, init, |_, _, _| {}).map(|(s, _)| s)
}

/// Run independent chains (in parallel when enabled). Chain `c` uses seed
/// `derive_seed(cfg.seed, 0, c)` and runs sequentially inside.
pub fn run_chains(
    counts: &SparseCounts,
    x: &CovariateTable,
    cfg: &ChainConfig,
    h: &HyperParams,
    init: &ModelState,
    chains: usize,
) -> Result<Vec<PosteriorSummaries>> {
    map_range(cfg.exec, chains, |c| {
        let chain_cfg = ChainConfig {
            seed: rng::derive_seed(cfg.seed, 0, c as u64),
            exec: Exec::Sequential,
            ..cfg.clone()
        };
        run_chain(counts, x, &chain_cfg, h, init.clone())
    })
    .into_iter()
    .collect()
}
