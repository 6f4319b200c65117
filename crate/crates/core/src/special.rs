//! Special functions not covered by `statrs`.

use std::f64::consts::PI;

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Trigamma function for x > 0 (recurrence up to x >= 12, then asymptotic series).
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires a positive argument, got {x}");
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    // 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9)
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x)
            * x2
            * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// log of the standard normal CDF, accurate far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trigamma_matches_known_values() {
        // psi_1(1) = pi^2/6, psi_1(1/2) = pi^2/2
        assert_relative_eq!(trigamma(1.0), PI * PI / 6.0, max_relative = 1e-12);
        assert_relative_eq!(trigamma(0.5), PI * PI / 2.0, max_relative = 1e-12);
        // recurrence psi_1(x+1) = psi_1(x) - 1/x^2
        for &x in &[0.3, 2.7, 9.1, 40.0] {
            assert_relative_eq!(
                trigamma(x + 1.0),
                trigamma(x) - 1.0 / (x * x),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for &x in &[0.2_f64, 1.3, 5.0, 77.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert_relative_eq!(trigamma(x), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn log_norm_cdf_is_continuous_at_switch() {
        let a = log_norm_cdf(-30.0 + 1e-9);
        let b = log_norm_cdf(-30.0 - 1e-9);
        assert_relative_eq!(a, b, max_relative = 1e-8);
        assert!(log_norm_cdf(-200.0).is_finite());
    }
}
