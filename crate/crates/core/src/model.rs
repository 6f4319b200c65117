//! Model parameters and log-density terms of the hierarchical Poisson factorization.
//!
//! ```text
//! y_ij     ~ Poisson(sum_l omega_il gamma_jl)
//! omega_il = exp(eta_il) / sum_i' exp(eta_i'l)
//! eta_il   ~ Normal(x_i' beta_l, 1/tau2)
//! beta_l   ~ Normal(0, sigma2_beta I)
//! gamma_jl ~ Gamma(xi_l, scale = theta_l)
//! xi_l     ~ Gamma(a0, scale = b0)
//! theta_l  ~ InvGamma(c0, d0)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::counts::{CovariateTable, SparseCounts};
use crate::error::{Error, Result};
use crate::special::{ln_factorial, ln_gamma};

/// Prior hyperparameters and tuning constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Shape of the gamma prior on `xi`.
    pub a0: f64,
    /// Scale of the gamma prior on `xi`.
    pub b0: f64,
    /// Shape of the inverse-gamma prior on `theta`.
    pub c0: f64,
    /// Scale of the inverse-gamma prior on `theta`.
    pub d0: f64,
    /// Precision of the latent Gaussian `eta` around `x' beta`.
    pub tau2: f64,
    /// Prior variance of each regression coefficient.
    pub sigma2_beta: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            a0: 2.0,
            b0: 1.0,
            c0: 2.0,
            d0: 1.0,
            tau2: 1.0,
            sigma2_beta: 1.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("a0", self.a0),
            ("b0", self.b0),
            ("c0", self.c0),
            ("d0", self.d0),
            ("tau2", self.tau2),
            ("sigma2_beta", self.sigma2_beta),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Column-wise softmax over samples: `omega_il = exp(eta_il) / sum_i exp(eta_il)`.
pub fn softmax_columns(eta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut omega = eta.clone();
    for mut col in omega.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
    omega
}

/// `log sum_i exp(eta_il)` for every factor.
pub fn log_sum_exp_columns(eta: &DMatrix<f64>) -> Vec<f64> {
    eta.column_iter()
        .map(|col| {
            let m = col.max();
            m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        })
        .collect()
}

/// One configuration of every model parameter. `omega` is always the
/// column softmax of `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub omega: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub theta: DVector<f64>,
}

impl ModelState {
    pub fn from_eta(
        eta: DMatrix<f64>,
        gamma: DMatrix<f64>,
        beta: DMatrix<f64>,
        xi: DVector<f64>,
        theta: DVector<f64>,
    ) -> Self {
        ModelState {
            omega: softmax_columns(&eta),
            gamma,
            eta,
            beta,
            xi,
            theta,
        }
    }

    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    pub fn p(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn k(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn d(&self) -> usize {
        self.beta.nrows()
    }

    /// Poisson rate `omega_i' gamma_j`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        (0..self.k())
            .map(|l| self.omega[(i, l)] * self.gamma[(j, l)])
            .sum()
    }

    pub fn check_dims(&self, counts: &SparseCounts, x: &CovariateTable) -> Result<()> {
        let k = self.k();
        let ok = self.n() == counts.n()
            && self.p() == counts.p()
            && self.eta.shape() == (counts.n(), k)
            && self.beta.shape() == (x.d(), k)
            && self.xi.len() == k
            && self.theta.len() == k
            && x.n() == counts.n();
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "state n={} p={} k={} d={} vs counts {}x{} and covariates {}x{}",
                self.n(),
                self.p(),
                k,
                self.d(),
                counts.n(),
                counts.p(),
                x.n(),
                x.d()
            )))
        }
    }

    /// Poisson log likelihood of the observed counts, streamed over nonzeros.
    /// The zero cells enter only through `sum_ij omega_i' gamma_j`.
    pub fn log_likelihood(&self, counts: &SparseCounts) -> f64 {
        let mut ll = 0.0;
        for e in counts.entries() {
            ll += e.count as f64 * self.rate(e.row, e.col).ln() - ln_factorial(e.count);
        }
        let k = self.k();
        for l in 0..k {
            ll -= self.omega.column(l).sum() * self.gamma.column(l).sum();
        }
        ll
    }

    /// `log p(Gamma | xi, theta)`.
    pub fn log_prior_gamma(&self) -> f64 {
        let mut lp = 0.0;
        for l in 0..self.k() {
            let (xi, th) = (self.xi[l], self.theta[l]);
            let norm = -xi * th.ln() - ln_gamma(xi);
            for &g in self.gamma.column(l).iter() {
                lp += (xi - 1.0) * g.ln() - g / th + norm;
            }
        }
        lp
    }

    /// `log p(xi) + log p(theta)`.
    pub fn log_prior_hyper(&self, h: &HyperParams) -> f64 {
        let mut lp = 0.0;
        for l in 0..self.k() {
            let (xi, th) = (self.xi[l], self.theta[l]);
            lp += (h.a0 - 1.0) * xi.ln() - xi / h.b0 - h.a0 * h.b0.ln() - ln_gamma(h.a0);
            lp += h.c0 * h.d0.ln() - ln_gamma(h.c0) - (h.c0 + 1.0) * th.ln() - h.d0 / th;
        }
        lp
    }

    /// `log p(eta | beta) + log p(beta)`.
    pub fn log_prior_eta_beta(&self, x: &CovariateTable, h: &HyperParams) -> f64 {
        let half_log_tau = 0.5 * (h.tau2 / (2.0 * std::f64::consts::PI)).ln();
        let mu = &x.x * &self.beta;
        let mut lp = 0.0;
        for (e, m) in self.eta.iter().zip(mu.iter()) {
            lp += half_log_tau - 0.5 * h.tau2 * (e - m).powi(2);
        }
        let half_log_b = -0.5 * (2.0 * std::f64::consts::PI * h.sigma2_beta).ln();
        for b in self.beta.iter() {
            lp += half_log_b - 0.5 * b * b / h.sigma2_beta;
        }
        lp
    }

    /// Log joint posterior (up to the evidence) of the full model.
    pub fn log_joint(&self, counts: &SparseCounts, x: &CovariateTable, h: &HyperParams) -> f64 {
        self.log_likelihood(counts)
            + self.log_prior_gamma()
            + self.log_prior_hyper(h)
            + self.log_prior_eta_beta(x, h)
    }

    /// Objective maximized by MAP initialization: the log joint without any
    /// prior on the sample factors.
    pub fn map_log_posterior(&self, counts: &SparseCounts, h: &HyperParams) -> f64 {
        self.log_likelihood(counts) + self.log_prior_gamma() + self.log_prior_hyper(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn softmax_is_shift_invariant() {
        let eta = DMatrix::from_row_slice(3, 2, &[0.1, -2.0, 1.5, 0.3, -0.7, 4.0]);
        let a = softmax_columns(&eta);
        let mut shifted = eta.clone();
        shifted.column_mut(0).add_scalar_mut(13.0);
        shifted.column_mut(1).add_scalar_mut(-400.0);
        let b = softmax_columns(&shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
        for l in 0..2 {
            assert_relative_eq!(a.column(l).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_likelihood_matches_dense_sum() {
        let c = SparseCounts::from_triplets(2, 3, &[(0, 0, 2), (1, 2, 1), (1, 0, 4)]).unwrap();
        let eta = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, -1.0]);
        let gamma = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, 0.1, 3.0, 0.2]);
        let s = ModelState::from_eta(
            eta,
            gamma,
            DMatrix::zeros(0, 2),
            DVector::from_element(2, 1.0),
            DVector::from_element(2, 1.0),
        );
        let dense = c.to_dense();
        let mut ll = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                let r = s.rate(i, j);
                let y = dense[(i, j)];
                ll += y * r.ln() - r - ln_gamma(y + 1.0);
            }
        }
        assert_relative_eq!(s.log_likelihood(&c), ll, max_relative = 1e-12);
    }
}
