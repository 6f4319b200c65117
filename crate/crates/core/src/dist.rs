//! Random variate helpers on top of `rand_distr`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson, StandardNormal};

use crate::special::{digamma, trigamma};

/// Gamma(shape, scale) draw that stays strictly positive for tiny shapes.
///
/// For shape < 1 the draw is formed in log space as `G(shape+1) * U^(1/shape)`,
/// and the result is floored at the smallest positive normal `f64`.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0, "gamma({shape}, {scale})");
    let x = if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, 1.0).unwrap().sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        (g.ln() + u.ln() / shape + scale.ln()).exp()
    } else {
        Gamma::new(shape, scale).unwrap().sample(rng)
    };
    x.max(f64::MIN_POSITIVE)
}

/// Inverse-gamma draw with the given shape and scale (`rate` of the inverse).
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    1.0 / gamma(rng, shape, 1.0 / scale)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Exp1.sample(rng)
}

pub fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate > 1e12 {
        // beyond the sampler's range; normal approximation
        return Normal::new(rate, rate.sqrt()).unwrap().sample(rng).round().max(0.0) as u64;
    }
    let x: f64 = Poisson::new(rate).unwrap().sample(rng);
    x as u64
}

pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).unwrap().sample(rng)
}

/// Multinomial(n, weights) by sequential conditional binomials. `weights`
/// need not be normalized but must have a positive sum.
pub fn multinomial_into<R: Rng + ?Sized>(rng: &mut R, n: u64, weights: &[f64], out: &mut [u64]) {
    debug_assert_eq!(weights.len(), out.len());
    let mut total: f64 = weights.iter().sum();
    assert!(
        total > 0.0 && total.is_finite(),
        "multinomial weights must have a positive finite sum"
    );
    out.fill(0);
    if n == 1 {
        let mut u = rng.random::<f64>() * total;
        let last = weights.iter().rposition(|&w| w > 0.0).unwrap();
        for (l, &w) in weights.iter().enumerate() {
            if u < w || l == last {
                out[l] = 1;
                return;
            }
            u -= w;
        }
    }
    let mut left = n;
    let last = out.len() - 1;
    for l in 0..last {
        if left == 0 {
            return;
        }
        let w = weights[l];
        let x = if total > 0.0 {
            binomial(rng, left, (w / total).min(1.0))
        } else {
            0
        };
        out[l] = x;
        left -= x;
        total -= w;
    }
    out[last] = left;
}

/// Number of tables in a Chinese restaurant process with `customers`
/// customers and concentration `r`.
///
/// Exact Bernoulli sum for small problems; a moment-matched normal
/// approximation once `customers + r` exceeds 1e4.
pub fn crt<R: Rng + ?Sized>(rng: &mut R, customers: u64, r: f64) -> u64 {
    if customers == 0 {
        return 0;
    }
    if customers as f64 + r > 1e4 {
        let m = r * (digamma(r + customers as f64) - digamma(r));
        let v = (m - r * r * (trigamma(r) - trigamma(r + customers as f64))).max(0.0);
        let x = normal(rng, m, v.sqrt()).round();
        return x.clamp(1.0, customers as f64) as u64;
    }
    let mut tables = 1; // first customer always opens a table
    for t in 1..customers {
        if rng.random::<f64>() < r / (r + t as f64) {
            tables += 1;
        }
    }
    tables
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn tiny_shape_gamma_is_positive() {
        let mut rng = from_seed(1);
        for _ in 0..10_000 {
            let g = gamma(&mut rng, 1e-3, 1.0);
            assert!(g > 0.0 && g.is_finite());
        }
    }

    #[test]
    fn small_shape_gamma_mean() {
        let mut rng = from_seed(2);
        let n = 200_000;
        let m: f64 = (0..n).map(|_| gamma(&mut rng, 0.4, 2.0)).sum::<f64>() / n as f64;
        // mean 0.8, sd sqrt(0.4)*2 / sqrt(n)
        assert!((m - 0.8).abs() < 4.0 * 1.265 / (n as f64).sqrt(), "{m}");
    }

    #[test]
    fn multinomial_sums_to_n() {
        let mut rng = from_seed(3);
        let w = [0.1, 0.0, 2.0, 0.7];
        let mut out = [0u64; 4];
        for n in [1u64, 2, 7, 1000] {
            for _ in 0..200 {
                multinomial_into(&mut rng, n, &w, &mut out);
                assert_eq!(out.iter().sum::<u64>(), n);
                assert_eq!(out[1], 0);
            }
        }
    }

    #[test]
    fn crt_mean_matches_digamma_identity() {
        let mut rng = from_seed(4);
        let (y, r) = (50u64, 2.5);
        let reps = 40_000;
        let draws: Vec<f64> = (0..reps).map(|_| crt(&mut rng, y, r) as f64).collect();
        let m = draws.iter().sum::<f64>() / reps as f64;
        let expect = r * (digamma(r + y as f64) - digamma(r));
        let var = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / reps as f64;
        assert!((m - expect).abs() < 4.0 * (var / reps as f64).sqrt(), "{m} vs {expect}");
    }
}
