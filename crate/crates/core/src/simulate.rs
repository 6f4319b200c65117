//! Synthetic data from the model, with known truth.
//!
//! [`sample_prior`] and [`sample_counts`] draw exactly from the generative
//! model (used by the getting-it-right check). [`simulate`] plants a more
//! structured truth for end-to-end checks: sites with shared covariates, a
//! covariate-driven `Omega`, and loadings where a fraction of the species load
//! on a single factor with exact zeros elsewhere.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::counts::{CovariateTable, SparseCounts, SpeciesAttributes, SpeciesRecord};
use crate::dist::{gamma, inv_gamma, normal, poisson, std_normal};
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelState};
use crate::rng::{stream, TAG_SIM};
use crate::summaries::write_matrix;

/// Draw every parameter from its prior.
pub fn sample_prior<R: rand::Rng + ?Sized>(
    x: &CovariateTable,
    p: usize,
    k: usize,
    h: &HyperParams,
    rng: &mut R,
) -> ModelState {
    let (n, d) = (x.n(), x.d());
    let sd_b = h.sigma2_beta.sqrt();
    let beta = DMatrix::from_fn(d, k, |_, _| normal(rng, 0.0, sd_b));
    let mu = &x.x * &beta;
    let sd_e = 1.0 / h.tau2.sqrt();
    let eta = DMatrix::from_fn(n, k, |i, l| normal(rng, mu[(i, l)], sd_e));
    let xi = DVector::from_fn(k, |_, _| gamma(rng, h.a0, h.b0));
    let theta = DVector::from_fn(k, |_, _| inv_gamma(rng, h.c0, h.d0));
    let gam = DMatrix::from_fn(p, k, |_, l| gamma(rng, xi[l], theta[l]));
    ModelState::from_eta(eta, gam, beta, xi, theta)
}

/// Draw `y_ij ~ Poisson(omega_i' gamma_j)` for every cell, keeping nonzeros.
pub fn sample_counts<R: rand::Rng + ?Sized>(state: &ModelState, rng: &mut R) -> SparseCounts {
    let mut trip = Vec::new();
    for i in 0..state.n() {
        for j in 0..state.p() {
            let y = poisson(rng, state.rate(i, j));
            if y > 0 {
                trip.push((i, j, y));
            }
        }
    }
    SparseCounts::from_triplets(state.n(), state.p(), &trip).expect("valid by construction")
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Number of covariates.
    pub d: usize,
    pub sites: usize,
    /// Fraction of species loading on exactly one factor.
    pub single_factor_fraction: f64,
    /// Mean Poisson rate per cell for a single-factor species.
    pub mean_rate: f64,
    /// Scale of the regression coefficients; larger means sharper sample factors.
    pub beta_scale: f64,
    pub tau2: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 200,
            p: 500,
            k: 3,
            d: 2,
            sites: 20,
            single_factor_fraction: 0.7,
            mean_rate: 1.0,
            beta_scale: 1.5,
            tau2: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 || self.k == 0 {
            return Err(Error::InvalidArgument("need n >= 2, p >= 1, k >= 1".into()));
        }
        if self.sites == 0 || self.sites > self.n {
            return Err(Error::InvalidArgument(format!(
                "sites must be in 1..={}, got {}",
                self.n, self.sites
            )));
        }
        if !(0.0..=1.0).contains(&self.single_factor_fraction) {
            return Err(Error::InvalidArgument("single-factor fraction must be in [0, 1]".into()));
        }
        if !(self.mean_rate > 0.0 && self.tau2 > 0.0 && self.beta_scale >= 0.0) {
            return Err(Error::InvalidArgument("mean rate and tau2 must be positive".into()));
        }
        Ok(())
    }
}

/// A simulated dataset and the truth it was drawn from.
#[derive(Debug, Clone)]
pub struct SimData {
    pub counts: SparseCounts,
    pub covariates: CovariateTable,
    pub sites: Vec<String>,
    pub attributes: SpeciesAttributes,
    /// Planted `Omega`, `Gamma` (with exact zeros) and `beta`, restricted to
    /// the retained samples and species.
    pub omega: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

impl SimData {
    /// Planted support pattern of each species.
    pub fn support(&self) -> Vec<Vec<bool>> {
        self.gamma
            .row_iter()
            .map(|r| r.iter().map(|&g| g > 0.0).collect())
            .collect()
    }

    /// Write `counts.csv`, `covariates.csv`, `sites.csv`, `attributes.csv`
    /// and the planted truth (`truth_*.csv`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.counts.save(&dir.join("counts.csv"))?;
        self.covariates
            .save(&dir.join("covariates.csv"), self.counts.sample_ids())?;
        let mut sites = String::from("sample_id,site_id\n");
        for (id, s) in self.counts.sample_ids().iter().zip(&self.sites) {
            sites.push_str(&format!("{id},{s}\n"));
        }
        let path = dir.join("sites.csv");
        fs::write(&path, sites).map_err(|e| Error::io(&path, e))?;
        self.attributes
            .save(&dir.join("attributes.csv"), self.counts.species_ids())?;
        write_keyed(&dir.join("truth_omega.csv"), "sample_id", self.counts.sample_ids(), &self.omega)?;
        write_keyed(&dir.join("truth_gamma.csv"), "species_id", self.counts.species_ids(), &self.gamma)?;
        write_matrix(&dir.join("truth_beta.csv"), &self.beta)
    }
}

fn write_keyed(path: &Path, key: &str, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut s = String::from(key);
    for l in 1..=m.ncols() {
        s.push_str(&format!(",f{l}"));
    }
    s.push('\n');
    for (id, row) in ids.iter().zip(m.row_iter()) {
        s.push_str(id);
        for v in row.iter() {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

const ORDERS: [&str; 5] = ["Lepidoptera", "Coleoptera", "Diptera", "Hymenoptera", "Hemiptera"];

/// Simulate a dataset with planted structure.
///
/// Species `j` loads on a support set `S_j` (one factor with probability
/// `single_factor_fraction`, otherwise two or more) with
/// `gamma_jl = n * m_j * g_jl`, `m_j ~ Gamma(2, mean_rate / 2)` and
/// `g_jl ~ Gamma(4, 1/4)`, so a cell's expected count is about `m_j` times
/// `n omega_il`. Covariates are site centers plus noise, `eta = X beta + noise`.
/// Samples and species without a single count are dropped.
pub fn simulate(cfg: &SimConfig) -> Result<SimData> {
    cfg.validate()?;
    let (n, p, k, d) = (cfg.n, cfg.p, cfg.k, cfg.d);
    let mut rng = stream(cfg.seed, TAG_SIM, 0);

    let site_of: Vec<usize> = (0..n).map(|i| i * cfg.sites / n).collect();
    let centers = DMatrix::from_fn(cfg.sites, d, |_, _| std_normal(&mut rng));
    let x = DMatrix::from_fn(n, d, |i, c| centers[(site_of[i], c)] + 0.3 * std_normal(&mut rng));
    let beta = DMatrix::from_fn(d, k, |_, _| cfg.beta_scale * std_normal(&mut rng));
    let mu = &x * &beta;
    let sd = 1.0 / cfg.tau2.sqrt();
    let eta = DMatrix::from_fn(n, k, |i, l| normal(&mut rng, mu[(i, l)], sd));
    let omega = crate::model::softmax_columns(&eta);

    let mut gam = DMatrix::zeros(p, k);
    let mut factors: Vec<usize> = (0..k).collect();
    for j in 0..p {
        let m = gamma(&mut rng, 2.0, cfg.mean_rate / 2.0);
        let size = if k == 1 || rng.random::<f64>() < cfg.single_factor_fraction {
            1
        } else {
            rng.random_range(2..=k)
        };
        factors.shuffle(&mut rng);
        for &l in &factors[..size] {
            gam[(j, l)] = n as f64 * m * gamma(&mut rng, 4.0, 0.25);
        }
    }

    let sample_ids: Vec<String> = (0..n).map(|i| format!("S{:05}", i + 1)).collect();
    let species_ids: Vec<String> = (0..p).map(|j| format!("BIN{:06}", j + 1)).collect();
    let mut trip = Vec::new();
    for i in 0..n {
        for j in 0..p {
            let rate: f64 = (0..k).map(|l| omega[(i, l)] * gam[(j, l)]).sum();
            let y = poisson(&mut rng, rate);
            if y > 0 {
                trip.push((i, j, y));
            }
        }
    }
    // empty rows and columns cannot be written as triplets; drop them and
    // the matching truth so a saved dataset reloads to the same matrix
    let mut row_seen = vec![false; n];
    let mut col_seen = vec![false; p];
    for &(i, j, _) in &trip {
        row_seen[i] = true;
        col_seen[j] = true;
    }
    let rows: Vec<usize> = (0..n).filter(|&i| row_seen[i]).collect();
    let cols: Vec<usize> = (0..p).filter(|&j| col_seen[j]).collect();
    let mut new_row = vec![usize::MAX; n];
    let mut new_col = vec![usize::MAX; p];
    for (r, &i) in rows.iter().enumerate() {
        new_row[i] = r;
    }
    for (c, &j) in cols.iter().enumerate() {
        new_col[j] = c;
    }
    for t in &mut trip {
        *t = (new_row[t.0], new_col[t.1], t.2);
    }
    let counts = SparseCounts::with_ids(
        &trip,
        rows.iter().map(|&i| sample_ids[i].clone()).collect(),
        cols.iter().map(|&j| species_ids[j].clone()).collect(),
    )?;

    let mut records = Vec::with_capacity(p);
    for j in 0..p {
        let order = ORDERS[rng.random_range(0..ORDERS.len())];
        let name = if rng.random::<f64>() < 0.6 {
            format!("Gen{} ep{}", suffix(j / 7), suffix(j))
        } else {
            format!("Gen{} sp. BIN{:06}", suffix(j / 7), j + 1)
        };
        let body_size = (rng.random::<f64>() < 0.7).then(|| (1.0 + 0.5 * std_normal(&mut rng)).exp());
        records.push(SpeciesRecord {
            name: Some(name),
            class: Some("Insecta".into()),
            order: Some(order.into()),
            family: None,
            body_size,
            tags: Default::default(),
        });
    }

    Ok(SimData {
        counts,
        covariates: CovariateTable::new(x.select_rows(&rows), (1..=d).map(|c| format!("x{c}")).collect())?,
        sites: rows.iter().map(|&i| format!("site{:03}", site_of[i] + 1)).collect(),
        attributes: SpeciesAttributes {
            records: cols.iter().map(|&j| records[j].clone()).collect(),
            tag_vocab: Default::default(),
        },
        omega: omega.select_rows(&rows),
        gamma: gam.select_rows(&cols),
        beta,
    })
}

/// Lowercase letters encoding `j`, so simulated epithets are distinct words.
fn suffix(j: usize) -> String {
    let mut s = String::new();
    let mut v = j;
    loop {
        s.push((b'a' + (v % 26) as u8) as char);
        v /= 26;
        if v == 0 {
            break;
        }
    }
    s
}
