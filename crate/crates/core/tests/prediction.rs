use cocluster_core::eval::{auc, predict_covariates_only, predict_with_indicators, PredictConfig};
use cocluster_core::{Draw, PosteriorSummaries};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

// two factors; species 0 and 1 load only on factor 0, species 2 only on factor 1
fn planted(copies: usize) -> PosteriorSummaries {
    let gamma = DMatrix::from_row_slice(3, 2, &[20.0, 1e-6, 2.0, 1e-6, 1e-6, 2.0]);
    let d = Draw {
        iteration: 0,
        gamma,
        eta: DMatrix::zeros(10, 2),
        beta: DMatrix::zeros(0, 2),
        xi: DVector::from_element(2, 1.0),
        theta: DVector::from_element(2, 1.0),
    };
    PosteriorSummaries::from_draws(vec![d; copies], vec![], 1.0).unwrap()
}

#[test]
fn large_indicator_count_shifts_mass_to_its_factor() {
    let s = planted(50);
    let x = DMatrix::zeros(1, 0);
    let cfg = PredictConfig::default();
    let base = predict_covariates_only(&x, &s, &cfg).unwrap();
    let cond = predict_with_indicators(&x, &DMatrix::from_element(1, 1, 60), &[0], &s, &cfg).unwrap();
    assert!(cond[(0, 0)].is_nan());
    assert!(cond[(0, 1)] > base[(0, 1)] + 0.1, "{} vs {}", cond[(0, 1)], base[(0, 1)]);
    // the other factor is untouched by the observation
    assert!((cond[(0, 2)] - base[(0, 2)]).abs() < 0.05);
}

#[test]
fn absent_indicator_lowers_its_factor() {
    let s = planted(50);
    let x = DMatrix::zeros(1, 0);
    let cfg = PredictConfig::default();
    let base = predict_covariates_only(&x, &s, &cfg).unwrap();
    let cond = predict_with_indicators(&x, &DMatrix::zeros(1, 1), &[0], &s, &cfg).unwrap();
    assert!(cond[(0, 1)] < base[(0, 1)]);
}

#[test]
fn inner_chain_length_converges() {
    let s = planted(200);
    let x = DMatrix::zeros(1, 0);
    let run = |iters: usize| {
        let cfg = PredictConfig {
            inner_iterations: iters,
            seed: 9,
            ..PredictConfig::default()
        };
        predict_with_indicators(&x, &DMatrix::from_element(1, 1, 3), &[0], &s, &cfg).unwrap()
    };
    let (a, b) = (run(200), run(400));
    for j in 1..3 {
        assert!((a[(0, j)] - b[(0, j)]).abs() < 0.01, "species {j}: {} vs {}", a[(0, j)], b[(0, j)]);
    }
}

#[test]
fn covariate_dimension_mismatch_is_an_error() {
    let s = planted(2);
    assert!(predict_covariates_only(&DMatrix::zeros(1, 3), &s, &PredictConfig::default()).is_err());
}

#[test]
fn auc_trivial_cases() {
    assert_eq!(auc(&[0.0, 0.1, 0.9, 1.0], &[false, false, true, true]), Some(1.0));
    assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, false]), Some(0.5));
}

proptest! {
    #[test]
    fn probabilities_lie_in_unit_interval(g in prop::collection::vec(1e-6f64..50.0, 6), e in prop::collection::vec(-3f64..3.0, 8)) {
        let d = Draw {
            iteration: 0,
            gamma: DMatrix::from_vec(3, 2, g),
            eta: DMatrix::from_vec(4, 2, e),
            beta: DMatrix::zeros(0, 2),
            xi: DVector::from_element(2, 1.0),
            theta: DVector::from_element(2, 1.0),
        };
        let s = PosteriorSummaries::from_draws(vec![d; 3], vec![], 1.0).unwrap();
        let p = predict_with_indicators(&DMatrix::zeros(2, 0), &DMatrix::from_element(2, 1, 2), &[1], &s, &PredictConfig { inner_iterations: 60, inner_burn_in: 10, ..PredictConfig::default() }).unwrap();
        for j in [0, 2] {
            for i in 0..2 {
                prop_assert!((0.0..=1.0).contains(&p[(i, j)]));
            }
        }
    }

    #[test]
    fn auc_invariant_to_increasing_transform(v in prop::collection::vec((-5f64..5.0, any::<bool>()), 2..40)) {
        let scores: Vec<f64> = v.iter().map(|t| t.0).collect();
        let labels: Vec<bool> = v.iter().map(|t| t.1).collect();
        let moved: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 1.0).collect();
        prop_assert_eq!(auc(&scores, &labels), auc(&moved, &labels));
        if let Some(a) = auc(&scores, &labels) {
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
