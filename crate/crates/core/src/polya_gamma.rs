//! Pólya-Gamma random variates PG(b, c).
//!
//! * integer `b <= 170`: sum of `b` exact PG(1, c) draws (Devroye-type
//!   alternating-series sampler with an exponential / inverse-Gaussian proposal);
//! * non-integer `b <= 170`: integer part as above plus a truncated
//!   sum-of-gammas representation for the fractional part;
//! * `b > 170`: normal with the exact PG mean and variance, truncated to be positive.

use std::f64::consts::PI;

use rand::Rng;

use crate::dist::{exp1, gamma, normal, std_normal};
use crate::special::log_norm_cdf;

/// Largest shape drawn by exact composition.
pub const EXACT_MAX_SHAPE: f64 = 170.0;

const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / 0.64;
const SERIES_TERMS: usize = 200;

/// `E[PG(b, c)] = b tanh(c/2) / (2c)`.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-4 {
        b * (0.25 - c * c / 48.0)
    } else {
        b * (0.5 * c).tanh() / (2.0 * c)
    }
}

/// `Var[PG(b, c)]`.
pub fn pg_var(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        b * (1.0 / 24.0 - c * c / 120.0)
    } else if c > 50.0 {
        let sech = 1.0 / (0.5 * c).cosh();
        b * (0.5 / c.powi(3) - 0.25 * sech * sech / (c * c))
    } else {
        let sech = 1.0 / (0.5 * c).cosh();
        b * (c.sinh() - c) * sech * sech / (4.0 * c.powi(3))
    }
}

/// Draw from PG(b, c). Panics if `b <= 0`.
pub fn sample_pg<R: Rng + ?Sized>(rng: &mut R, b: f64, c: f64) -> f64 {
    assert!(b > 0.0, "Polya-Gamma shape must be positive, got {b}");
    if b > EXACT_MAX_SHAPE {
        return sample_normal_approx(rng, b, c);
    }
    let whole = b.floor();
    let frac = b - whole;
    let mut x = 0.0;
    for _ in 0..whole as u64 {
        x += sample_pg1(rng, c);
    }
    if frac > 1e-12 {
        x += sample_series(rng, frac, c);
    }
    x
}

fn sample_normal_approx<R: Rng + ?Sized>(rng: &mut R, b: f64, c: f64) -> f64 {
    let (m, sd) = (pg_mean(b, c), pg_var(b, c).sqrt());
    loop {
        let x = normal(rng, m, sd);
        if x > 0.0 {
            return x;
        }
    }
}

/// Truncated `(1/(2 pi^2)) sum_k g_k / ((k - 1/2)^2 + c^2/(4 pi^2))` with the
/// expected tail added back.
fn sample_series<R: Rng + ?Sized>(rng: &mut R, b: f64, c: f64) -> f64 {
    let a2 = c * c / (4.0 * PI * PI);
    let mut s = 0.0;
    for k in 1..=SERIES_TERMS {
        let d = (k as f64 - 0.5).powi(2) + a2;
        s += gamma(rng, b, 1.0) / d;
    }
    let a = a2.sqrt().max(1e-12);
    let tail = (0.5 * PI - (SERIES_TERMS as f64 / a).atan()) / a;
    (s + b * tail) / (2.0 * PI * PI)
}

/// Coefficient `a_n(x)` of the alternating series for J*(1, z).
fn series_coef(n: usize, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x > TRUNC {
        PI * k * (-0.5 * k * k * PI * PI * x).exp()
    } else {
        (2.0 / (PI * x)).powf(1.5) * PI * k * (-2.0 * k * k / x).exp()
    }
}

/// Probability of drawing from the exponential (right) piece of the proposal.
fn mass_texpon(z: f64) -> f64 {
    let t = TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse-Gaussian(1/z, 1) truncated to (0, TRUNC).
fn rtigauss<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    let t = TRUNC;
    let mut x = t + 1.0;
    if TRUNC_RECIP > z {
        let mut alpha = 0.0;
        while rng.random::<f64>() > alpha {
            let (mut e1, mut e2) = (exp1(rng), exp1(rng));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = exp1(rng);
                e2 = exp1(rng);
            }
            x = 1.0 + e1 * t;
            x = t / (x * x);
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        let mu = 1.0 / z;
        while x > t {
            let y = std_normal(rng);
            let y = y * y;
            let half_mu = 0.5 * mu;
            let mu_y = mu * y;
            x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}

/// Exact PG(1, c) draw.
pub fn sample_pg1<R: Rng + ?Sized>(rng: &mut R, c: f64) -> f64 {
    let z = 0.5 * c.abs();
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = mass_texpon(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            TRUNC + exp1(rng) / fz
        } else {
            rtigauss(rng, z)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}
