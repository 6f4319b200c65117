//! MCMC diagnostics: effective sample size, batch-means standard errors and
//! the getting-it-right check of the sampler against its own prior.

use nalgebra::DMatrix;

use crate::counts::CovariateTable;
use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelState};
use crate::par::Exec;
use crate::rng::stream;
use crate::sampler::{sweep, Regression};
use crate::simulate::{sample_counts, sample_prior};
use rand::Rng as _;

/// Effective sample size of a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub ess: f64,
    /// Set when the trace is constant; `ess` is then the trace length.
    pub zero_variance: bool,
}

/// Autocorrelation-based ESS with Geyer's initial monotone sequence: sums of
/// adjacent autocorrelation pairs are truncated at the first non-positive
/// pair and forced to be non-increasing.
pub fn ess(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "ESS needs at least 10 values, got {n}"
        )));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let var0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(var0 > 0.0) || var0 < 1e-300 {
        return Ok(Ess {
            ess: n as f64,
            zero_variance: true,
        });
    }
    let acf = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * var0)
    };
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = acf(2 * m) + acf(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        m += 1;
    }
    Ok(Ess {
        ess: n as f64 / tau.max(1.0 / n as f64),
        zero_variance: false,
    })
}

/// Standard error of the mean of a correlated trace from `batches` batch means.
pub fn batch_means_se(trace: &[f64], batches: usize) -> f64 {
    let size = trace.len() / batches;
    assert!(size >= 1 && batches >= 2, "need at least two non-empty batches");
    let means: Vec<f64> = (0..batches)
        .map(|b| trace[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct GewekeStat {
    pub name: &'static str,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
}

fn test_functions(s: &ModelState) -> Vec<(&'static str, f64)> {
    let mut v = vec![
        ("gamma_11", s.gamma[(0, 0)]),
        ("xi_1", s.xi[0]),
        ("theta_1", s.theta[0]),
    ];
    if s.d() > 0 {
        v.push(("beta_11", s.beta[(0, 0)]));
    }
    v
}

/// Getting-it-right check: compare moments of parameters drawn
/// independently from the prior with those visited by a chain that
/// alternates a full sweep with regeneration of the data from the current
/// parameters. Both sample the prior when the sampler is correct.
pub fn getting_it_right(
    n: usize,
    p: usize,
    k: usize,
    d: usize,
    iterations: usize,
    h: &HyperParams,
    seed: u64,
) -> Result<Vec<GewekeStat>> {
    let mut rng = stream(seed, 0, 0);
    let x = CovariateTable::new(
        DMatrix::from_fn(n, d, |_, _| std_normal(&mut rng)),
        (0..d).map(|c| format!("x{c}")).collect(),
    )?;
    let reg = Regression::new(&x, h)?;

    let mut marginal: Vec<Vec<f64>> = Vec::new();
    let mut prior_rng = stream(seed, 0, 1);
    for _ in 0..iterations {
        let s = sample_prior(&x, p, k, h, &mut prior_rng);
        marginal.push(test_functions(&s).into_iter().map(|(_, v)| v).collect());
    }

    let mut chain_rng = stream(seed, 0, 2);
    let mut state = sample_prior(&x, p, k, h, &mut chain_rng);
    let mut successive: Vec<Vec<f64>> = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let counts = sample_counts(&state, &mut chain_rng);
        let sweep_seed: u64 = chain_rng.random();
        sweep(&mut state, &counts, &reg, h, Exec::Sequential, sweep_seed)?;
        successive.push(test_functions(&state).into_iter().map(|(_, v)| v).collect());
    }

    let names: Vec<&'static str> = test_functions(&state).into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (f, name) in names.into_iter().enumerate() {
        let a: Vec<f64> = marginal.iter().map(|v| v[f]).collect();
        let b: Vec<f64> = successive.iter().map(|v| v[f]).collect();
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        let se_a = (va / a.len() as f64).sqrt();
        let se_b = batch_means_se(&b, 50);
        out.push(GewekeStat {
            name,
            marginal_mean: ma,
            successive_mean: mb,
            z: (ma - mb) / (se_a * se_a + se_b * se_b).sqrt(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn white_noise_ess_is_near_length() {
        let mut rng = from_seed(1);
        let t: Vec<f64> = (0..10_000).map(|_| std_normal(&mut rng)).collect();
        let e = ess(&t).unwrap();
        assert!((e.ess / 10_000.0 - 1.0).abs() < 0.2, "{}", e.ess);
    }

    #[test]
    fn ar1_ess_matches_analytic() {
        let mut rng = from_seed(2);
        let phi = 0.9;
        let mut v = 0.0;
        let t: Vec<f64> = (0..10_000)
            .map(|_| {
                v = phi * v + std_normal(&mut rng);
                v
            })
            .collect();
        let e = ess(&t).unwrap().ess;
        let expect = 10_000.0 * (1.0 - phi) / (1.0 + phi);
        assert!((e / expect - 1.0).abs() < 0.25, "{e} vs {expect}");
    }

    #[test]
    fn constant_trace_is_flagged() {
        let e = ess(&[3.0; 10]).unwrap();
        assert!(e.zero_variance);
        assert_eq!(e.ess, 10.0);
        assert!(ess(&[1.0; 9]).is_err());
    }
}
