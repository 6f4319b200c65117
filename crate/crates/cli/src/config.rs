//! Run settings: defaults, overridden by a `key = value` file, overridden by flags.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use cocluster_core::decouple::DescentConfig;
use cocluster_core::eval::{CvConfig, PredictConfig};
use cocluster_core::indicators::{CandidateFilter, FilterConfig};
use cocluster_core::map_init::MapConfig;
use cocluster_core::{ChainConfig, Exec, HyperParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub tau2: f64,
    pub sigma2_beta: f64,
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub d0: f64,
    pub replicates: usize,
    pub map_max_iter: usize,
    pub min_prevalence: u64,
    pub grid_points: usize,
    pub folds: usize,
    pub indicators: usize,
    pub strategies: Vec<CandidateFilter>,
    pub charismatic_orders: Vec<String>,
    pub large_quantile: f64,
    pub inner_iterations: usize,
    pub inner_burn_in: usize,
    pub inner_thin: usize,
    /// 0 means every stored draw.
    pub max_draws: usize,
    pub sequential: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = HyperParams::default();
        let chain = ChainConfig::default();
        let map = MapConfig::default();
        let pred = PredictConfig::default();
        let filt = FilterConfig::default();
        RunConfig {
            k: map.k,
            iterations: chain.iterations,
            burn_in: chain.burn_in,
            thin: chain.thin,
            seed: 0,
            tau2: h.tau2,
            sigma2_beta: h.sigma2_beta,
            a0: h.a0,
            b0: h.b0,
            c0: h.c0,
            d0: h.d0,
            replicates: map.replicates,
            map_max_iter: map.max_iter,
            min_prevalence: 1,
            grid_points: 30,
            folds: 10,
            indicators: 15,
            strategies: vec![CandidateFilter::All, CandidateFilter::Charismatic, CandidateFilter::Large],
            charismatic_orders: filt.charismatic_orders,
            large_quantile: filt.large_quantile,
            inner_iterations: pred.inner_iterations,
            inner_burn_in: pred.inner_burn_in,
            inner_thin: pred.inner_thin,
            max_draws: 0,
            sequential: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    v.parse().with_context(|| format!("bad value '{v}' for '{key}'"))
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key.trim().replace('-', "_").as_str() {
            "k" => self.k = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "burn_in" => self.burn_in = parse(key, v)?,
            "thin" => self.thin = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "tau2" => self.tau2 = parse(key, v)?,
            "sigma2_beta" => self.sigma2_beta = parse(key, v)?,
            "a0" => self.a0 = parse(key, v)?,
            "b0" => self.b0 = parse(key, v)?,
            "c0" => self.c0 = parse(key, v)?,
            "d0" => self.d0 = parse(key, v)?,
            "replicates" => self.replicates = parse(key, v)?,
            "map_max_iter" => self.map_max_iter = parse(key, v)?,
            "min_prevalence" => self.min_prevalence = parse(key, v)?,
            "grid_points" => self.grid_points = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "indicators" => self.indicators = parse(key, v)?,
            "strategies" => {
                self.strategies = list(v)
                    .iter()
                    .map(|s| CandidateFilter::parse(s))
                    .collect::<cocluster_core::Result<_>>()?
            }
            "charismatic_orders" => self.charismatic_orders = list(v),
            "large_quantile" => self.large_quantile = parse(key, v)?,
            "inner_iterations" => self.inner_iterations = parse(key, v)?,
            "inner_burn_in" => self.inner_burn_in = parse(key, v)?,
            "inner_thin" => self.inner_thin = parse(key, v)?,
            "max_draws" => self.max_draws = parse(key, v)?,
            "sequential" => self.sequential = parse(key, v)?,
            other => bail!("unknown setting '{other}'"),
        }
        Ok(())
    }

    /// Apply a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), no + 1))?;
            self.set(k, v)
                .with_context(|| format!("{}:{}", path.display(), no + 1))?;
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[String]| v.join(",");
        vec![
            ("k", self.k.to_string()),
            ("iterations", self.iterations.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("thin", self.thin.to_string()),
            ("seed", self.seed.to_string()),
            ("tau2", self.tau2.to_string()),
            ("sigma2_beta", self.sigma2_beta.to_string()),
            ("a0", self.a0.to_string()),
            ("b0", self.b0.to_string()),
            ("c0", self.c0.to_string()),
            ("d0", self.d0.to_string()),
            ("replicates", self.replicates.to_string()),
            ("map_max_iter", self.map_max_iter.to_string()),
            ("min_prevalence", self.min_prevalence.to_string()),
            ("grid_points", self.grid_points.to_string()),
            ("folds", self.folds.to_string()),
            ("indicators", self.indicators.to_string()),
            (
                "strategies",
                self.strategies.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("charismatic_orders", join(&self.charismatic_orders)),
            ("large_quantile", self.large_quantile.to_string()),
            ("inner_iterations", self.inner_iterations.to_string()),
            ("inner_burn_in", self.inner_burn_in.to_string()),
            ("inner_thin", self.inner_thin.to_string()),
            ("max_draws", self.max_draws.to_string()),
            ("sequential", self.sequential.to_string()),
        ]
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Reject contradictory settings before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.hyper().validate()?;
        self.chain().validate()?;
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.inner_burn_in >= self.inner_iterations || self.inner_thin == 0 {
            bail!(
                "inner_burn_in ({}) must be below inner_iterations ({}) and inner_thin positive",
                self.inner_burn_in,
                self.inner_iterations
            );
        }
        if !(0.0..=1.0).contains(&self.large_quantile) {
            bail!("large_quantile must be in [0, 1]");
        }
        if self.min_prevalence == 0 {
            bail!("min_prevalence must be at least 1");
        }
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            a0: self.a0,
            b0: self.b0,
            c0: self.c0,
            d0: self.d0,
            tau2: self.tau2,
            sigma2_beta: self.sigma2_beta,
        }
    }

    pub fn chain(&self) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            exec: self.exec(),
        }
    }

    pub fn map(&self) -> MapConfig {
        MapConfig {
            k: self.k,
            replicates: self.replicates,
            max_iter: self.map_max_iter,
            seed: self.seed,
            exec: self.exec(),
            ..MapConfig::default()
        }
    }

    pub fn descent(&self) -> DescentConfig {
        DescentConfig {
            exec: self.exec(),
            ..DescentConfig::default()
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            charismatic_orders: self.charismatic_orders.clone(),
            large_quantile: self.large_quantile,
        }
    }

    pub fn predict(&self) -> PredictConfig {
        PredictConfig {
            inner_iterations: self.inner_iterations,
            inner_burn_in: self.inner_burn_in,
            inner_thin: self.inner_thin,
            max_draws: (self.max_draws > 0).then_some(self.max_draws),
            seed: self.seed,
            exec: self.exec(),
        }
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            folds: self.folds,
            map: self.map(),
            chain: self.chain(),
            hyper: self.hyper(),
            descent: self.descent(),
            lambda_grid: self.grid_points,
            indicators_per_factor: self.indicators,
            strategies: self.strategies.clone(),
            filter: self.filter(),
            predict: self.predict(),
            seed: self.seed,
            exec: self.exec(),
        }
    }
}
