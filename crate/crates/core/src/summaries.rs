//! Thinned posterior draws and streamed posterior moments.
//!
//! The moments feed the decoupled loss: `E[Omega]`, `E[Omega' Omega]`,
//! `B = E[Gamma Omega' Omega]` and the penalty weights
//! `W = E[gbar_j / gamma_jl]`, where `gbar_j` is the mean of `gamma_j` over
//! factors. All of them are averages of per-draw quantities, accumulated in
//! draw order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{log_sum_exp_columns, softmax_columns, ModelState};

/// One stored posterior draw. `omega` is derived from `eta` on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub gamma: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub theta: DVector<f64>,
}

impl Draw {
    pub fn from_state(iteration: usize, s: &ModelState) -> Self {
        Draw {
            iteration,
            gamma: s.gamma.clone(),
            eta: s.eta.clone(),
            beta: s.beta.clone(),
            xi: s.xi.clone(),
            theta: s.theta.clone(),
        }
    }

    pub fn omega(&self) -> DMatrix<f64> {
        softmax_columns(&self.eta)
    }

    /// `log sum_i exp(eta_il)` per factor: the normalizer a new sample joins.
    pub fn log_normalizers(&self) -> Vec<f64> {
        log_sum_exp_columns(&self.eta)
    }

    pub fn to_state(&self) -> ModelState {
        ModelState::from_eta(
            self.eta.clone(),
            self.gamma.clone(),
            self.beta.clone(),
            self.xi.clone(),
            self.theta.clone(),
        )
    }
}

/// Running sums of the per-draw quantities behind the posterior moments.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    omega: DMatrix<f64>,
    gram: DMatrix<f64>,
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    gamma: DMatrix<f64>,
    gamma_gram: DMatrix<f64>,
    b_omega: DMatrix<f64>,
    w_omega: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(n: usize, p: usize, k: usize) -> Self {
        MomentAccumulator {
            count: 0,
            omega: DMatrix::zeros(n, k),
            gram: DMatrix::zeros(k, k),
            b: DMatrix::zeros(p, k),
            w: DMatrix::zeros(p, k),
            gamma: DMatrix::zeros(p, k),
            gamma_gram: DMatrix::zeros(k, k),
            b_omega: DMatrix::zeros(n, k),
            w_omega: DMatrix::zeros(n, k),
        }
    }

    pub fn push(&mut self, d: &Draw) {
        let omega = d.omega();
        let gram = omega.transpose() * &omega;
        self.b += &d.gamma * &gram;
        self.omega += &omega;
        self.gram += &gram;
        self.gamma += &d.gamma;
        let ggram = d.gamma.transpose() * &d.gamma;
        self.b_omega += &omega * &ggram;
        self.gamma_gram += &ggram;
        add_ratio_weights(&mut self.w, &d.gamma);
        add_ratio_weights(&mut self.w_omega, &omega);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// `w_rl += mean(m_r.) / m_rl` for every row `r`.
fn add_ratio_weights(w: &mut DMatrix<f64>, m: &DMatrix<f64>) {
    let k = m.ncols();
    for r in 0..m.nrows() {
        let row = m.row(r);
        let mean = row.sum() / k as f64;
        for l in 0..k {
            w[(r, l)] += mean / row[l];
        }
    }
}

/// Posterior summaries of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummaries {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub d: usize,
    /// Precision of `eta` around `x' beta`, needed for prediction.
    pub tau2: f64,
    pub count: usize,
    /// `E[Omega]`, n x k.
    pub omega_mean: DMatrix<f64>,
    /// `E[Omega' Omega]`, k x k.
    pub omega_gram: DMatrix<f64>,
    /// `E[Gamma Omega' Omega]`, p x k.
    pub b: DMatrix<f64>,
    /// `E[gbar_j / gamma_jl]`, p x k.
    pub w: DMatrix<f64>,
    /// `E[Gamma]`, p x k.
    pub gamma_mean: DMatrix<f64>,
    /// `E[Gamma' Gamma]`, k x k; with the next two, the sample-side
    /// counterparts of `omega_gram`, `b` and `w`.
    pub gamma_gram: DMatrix<f64>,
    /// `E[Omega Gamma' Gamma]`, n x k.
    pub b_omega: DMatrix<f64>,
    /// `E[obar_i / omega_il]`, n x k.
    pub w_omega: DMatrix<f64>,
    /// Stored draws, possibly empty when only moments were kept.
    pub draws: Vec<Draw>,
    /// Log joint posterior at every iteration, burn-in included.
    pub trace: Vec<f64>,
}

impl PosteriorSummaries {
    pub fn from_parts(acc: MomentAccumulator, draws: Vec<Draw>, trace: Vec<f64>, tau2: f64) -> Self {
        let c = acc.count.max(1) as f64;
        let (n, k) = acc.omega.shape();
        let p = acc.gamma.nrows();
        let d = draws.first().map_or(0, |d| d.beta.nrows());
        // symmetrize away rounding asymmetry
        let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
        let gram = sym(acc.gram / c);
        PosteriorSummaries {
            n,
            p,
            k,
            d,
            tau2,
            count: acc.count,
            omega_mean: acc.omega / c,
            omega_gram: gram,
            b: acc.b / c,
            w: acc.w / c,
            gamma_mean: acc.gamma / c,
            gamma_gram: sym(acc.gamma_gram / c),
            b_omega: acc.b_omega / c,
            w_omega: acc.w_omega / c,
            draws,
            trace,
        }
    }

    /// Summaries whose moments are the averages of `draws`.
    pub fn from_draws(draws: Vec<Draw>, trace: Vec<f64>, tau2: f64) -> Result<Self> {
        let first = draws.first().ok_or(Error::TooFewDraws { needed: 1, found: 0 })?;
        let mut acc = MomentAccumulator::new(first.eta.nrows(), first.gamma.nrows(), first.gamma.ncols());
        for d in &draws {
            acc.push(d);
        }
        Ok(Self::from_parts(acc, draws, trace, tau2))
    }

    pub fn require_draws(&self, needed: usize) -> Result<()> {
        if self.draws.len() < needed {
            return Err(Error::TooFewDraws {
                needed,
                found: self.draws.len(),
            });
        }
        Ok(())
    }

    /// Write every field as CSV into `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_kv(
            &dir.join("meta.csv"),
            &[
                ("n", self.n.to_string()),
                ("p", self.p.to_string()),
                ("k", self.k.to_string()),
                ("d", self.d.to_string()),
                ("tau2", self.tau2.to_string()),
                ("count", self.count.to_string()),
                ("draws", self.draws.len().to_string()),
            ],
        )?;
        write_matrix(&dir.join("omega_mean.csv"), &self.omega_mean)?;
        write_matrix(&dir.join("omega_gram.csv"), &self.omega_gram)?;
        write_matrix(&dir.join("b.csv"), &self.b)?;
        write_matrix(&dir.join("w.csv"), &self.w)?;
        write_matrix(&dir.join("gamma_mean.csv"), &self.gamma_mean)?;
        write_matrix(&dir.join("gamma_gram.csv"), &self.gamma_gram)?;
        write_matrix(&dir.join("b_omega.csv"), &self.b_omega)?;
        write_matrix(&dir.join("w_omega.csv"), &self.w_omega)?;
        write_stacked(&dir.join("draws_gamma.csv"), self.draws.iter().map(|d| &d.gamma))?;
        write_stacked(&dir.join("draws_eta.csv"), self.draws.iter().map(|d| &d.eta))?;
        write_stacked(&dir.join("draws_beta.csv"), self.draws.iter().map(|d| &d.beta))?;
        let hyper = dir.join("draws_hyper.csv");
        let mut w = create(&hyper)?;
        let io = |e| Error::io(&hyper, e);
        writeln!(w, "draw,iteration,factor,xi,theta").map_err(io)?;
        for (t, d) in self.draws.iter().enumerate() {
            for l in 0..self.k {
                writeln!(w, "{t},{},{},{},{}", d.iteration, l + 1, d.xi[l], d.theta[l]).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        write_trace(&dir.join("trace.csv"), &self.trace)
    }

    /// Read back what [`PosteriorSummaries::save`] wrote.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = read_kv(&dir.join("meta.csv"))?;
        let get = |key: &str| -> Result<usize> {
            meta.iter()
                .find(|(k, _)| k == key)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::parse(dir.join("meta.csv"), 0, format!("missing or bad key {key}")))
        };
        let (n, p, k, d, count, ndraws) = (get("n")?, get("p")?, get("k")?, get("d")?, get("count")?, get("draws")?);
        let tau2: f64 = meta
            .iter()
            .find(|(k, _)| k == "tau2")
            .and_then(|(_, v)| v.parse().ok())
            .ok_or_else(|| Error::parse(dir.join("meta.csv"), 0, "missing or bad key tau2"))?;
        let gammas = read_stacked(&dir.join("draws_gamma.csv"), ndraws, p, k)?;
        let etas = read_stacked(&dir.join("draws_eta.csv"), ndraws, n, k)?;
        let betas = read_stacked(&dir.join("draws_beta.csv"), ndraws, d, k)?;
        let mut xi = vec![DVector::zeros(k); ndraws];
        let mut theta = vec![DVector::zeros(k); ndraws];
        let mut iters = vec![0usize; ndraws];
        let hyper = dir.join("draws_hyper.csv");
        for (line, rec) in read_records(&hyper)?.into_iter().enumerate() {
            let bad = || Error::parse(&hyper, line as u64 + 2, "expected draw,iteration,factor,xi,theta");
            if rec.len() != 5 {
                return Err(bad());
            }
            let t: usize = rec[0].parse().map_err(|_| bad())?;
            let l: usize = rec[2].parse().map_err(|_| bad())?;
            if t >= ndraws || l == 0 || l > k {
                return Err(bad());
            }
            iters[t] = rec[1].parse().map_err(|_| bad())?;
            xi[t][l - 1] = rec[3].parse().map_err(|_| bad())?;
            theta[t][l - 1] = rec[4].parse().map_err(|_| bad())?;
        }
        let draws = gammas
            .into_iter()
            .zip(etas)
            .zip(betas)
            .enumerate()
            .map(|(t, ((gamma, eta), beta))| Draw {
                iteration: iters[t],
                gamma,
                eta,
                beta,
                xi: xi[t].clone(),
                theta: theta[t].clone(),
            })
            .collect();
        Ok(PosteriorSummaries {
            n,
            p,
            k,
            d,
            tau2,
            count,
            omega_mean: read_matrix(&dir.join("omega_mean.csv"), n, k)?,
            omega_gram: read_matrix(&dir.join("omega_gram.csv"), k, k)?,
            b: read_matrix(&dir.join("b.csv"), p, k)?,
            w: read_matrix(&dir.join("w.csv"), p, k)?,
            gamma_mean: read_matrix(&dir.join("gamma_mean.csv"), p, k)?,
            gamma_gram: read_matrix(&dir.join("gamma_gram.csv"), k, k)?,
            b_omega: read_matrix(&dir.join("b_omega.csv"), n, k)?,
            w_omega: read_matrix(&dir.join("w_omega.csv"), n, k)?,
            draws,
            trace: read_trace(&dir.join("trace.csv"))?,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn factor_header(k: usize) -> String {
    (1..=k).map(|l| format!("f{l}")).collect::<Vec<_>>().join(",")
}

/// Write a matrix as CSV with header `f1,...,fk`.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", factor_header(m.ncols())).map_err(io)?;
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_stacked<'a>(path: &Path, mats: impl Iterator<Item = &'a DMatrix<f64>>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let mut header_done = false;
    for (t, m) in mats.enumerate() {
        if !header_done {
            writeln!(w, "draw,index,{}", factor_header(m.ncols())).map_err(io)?;
            header_done = true;
        }
        for (i, row) in m.row_iter().enumerate() {
            write!(w, "{t},{i}").map_err(io)?;
            for v in row.iter() {
                write!(w, ",{v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn write_kv(path: &Path, kv: &[(&str, String)]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "key,value").map_err(io)?;
    for (k, v) in kv {
        writeln!(w, "{k},{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Write a log-posterior trace as `iteration,log_posterior`.
pub fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "iteration,log_posterior").map_err(io)?;
    for (t, v) in trace.iter().enumerate() {
        writeln!(w, "{t},{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_records(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        out.push(rec.iter().map(str::to_string).collect());
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, line as u64 + 2, format!("not a number: {s:?}")))
}

/// Read a matrix written by [`write_matrix`], checking its shape.
pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let recs = read_records(path)?;
    if recs.len() != rows || recs.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!(
            "{}: expected {rows}x{cols}",
            path.display()
        )));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (i, r) in recs.iter().enumerate() {
        for (l, v) in r.iter().enumerate() {
            m[(i, l)] = parse_f64(path, i, v)?;
        }
    }
    Ok(m)
}

fn read_stacked(path: &Path, ndraws: usize, rows: usize, cols: usize) -> Result<Vec<DMatrix<f64>>> {
    let mut mats = vec![DMatrix::zeros(rows, cols); ndraws];
    if ndraws == 0 || rows == 0 {
        return Ok(mats);
    }
    let recs = read_records(path)?;
    if recs.len() != ndraws * rows {
        return Err(Error::DimensionMismatch(format!(
            "{}: expected {} rows, found {}",
            path.display(),
            ndraws * rows,
            recs.len()
        )));
    }
    for (line, r) in recs.iter().enumerate() {
        if r.len() != cols + 2 {
            return Err(Error::parse(path, line as u64 + 2, format!("expected {} fields", cols + 2)));
        }
        let t: usize = r[0].parse().map_err(|_| Error::parse(path, line as u64 + 2, "bad draw index"))?;
        let i: usize = r[1].parse().map_err(|_| Error::parse(path, line as u64 + 2, "bad row index"))?;
        if t >= ndraws || i >= rows {
            return Err(Error::parse(path, line as u64 + 2, "index out of range"));
        }
        for l in 0..cols {
            mats[t][(i, l)] = parse_f64(path, line, &r[l + 2])?;
        }
    }
    Ok(mats)
}

fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(read_records(path)?
        .into_iter()
        .filter(|r| r.len() == 2)
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect())
}

pub fn read_trace(path: &Path) -> Result<Vec<f64>> {
    read_records(path)?
        .iter()
        .enumerate()
        .map(|(line, r)| {
            r.get(1)
                .ok_or_else(|| Error::parse(path, line as u64 + 2, "expected iteration,log_posterior"))
                .and_then(|v| parse_f64(path, line, v))
        })
        .collect()
}
