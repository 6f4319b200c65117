use nalgebra::DMatrix;
use proptest::prelude::*;

use cocluster_core::decouple::{coord_descent, DecoupleInputs, DescentConfig};
use cocluster_core::eval::ess;
use cocluster_core::model::softmax_columns;
use cocluster_core::rng::stream;
use cocluster_core::sampler::{sweep, Regression};
use cocluster_core::simulate::sample_prior;
use cocluster_core::{CovariateTable, Exec, HyperParams, ModelState, SparseCounts};

fn triplets(n: usize, p: usize) -> impl Strategy<Value = Vec<(usize, usize, u64)>> {
    proptest::collection::btree_map((0..n, 0..p), 1u64..40, 1..(n * p)).prop_map(|m| m.into_iter().map(|((i, j), c)| (i, j, c)).collect())
}

fn fixture(seed: u64, n: usize, p: usize, k: usize) -> (CovariateTable, ModelState) {
    let mut rng = stream(seed, 99, 0);
    let x = CovariateTable::new(DMatrix::from_fn(n, 2, |i, c| ((i * 7 + c * 3) % 5) as f64 - 2.0), vec!["a".into(), "b".into()]).unwrap();
    let state = sample_prior(&x, p, k, &HyperParams::default(), &mut rng);
    (x, state)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prevalence_filter_is_idempotent(trip in triplets(6, 9), t in 1u64..4) {
        let y = SparseCounts::from_triplets(6, 9, &trip).unwrap();
        if let Ok(once) = y.filter_min_prevalence(t) {
            let twice = once.filter_min_prevalence(t).unwrap();
            prop_assert_eq!(once.entries(), twice.entries());
            prop_assert_eq!(once.species_ids(), twice.species_ids());
            prop_assert!(once.prevalence().iter().all(|&c| c as u64 >= t));
            prop_assert_eq!(once.nnz(), y.prevalence().iter().filter(|&&c| c as u64 >= t).sum::<usize>());
        }
    }

    #[test]
    fn totals_agree_with_dense(trip in triplets(5, 7)) {
        let y = SparseCounts::from_triplets(5, 7, &trip).unwrap();
        let d = y.to_dense();
        for (i, t) in y.row_totals().iter().enumerate() {
            prop_assert_eq!(*t as f64, d.row(i).sum());
        }
        for (j, t) in y.col_totals().iter().enumerate() {
            prop_assert_eq!(*t as f64, d.column(j).sum());
        }
    }

    #[test]
    fn every_sweep_allocates_counts_exactly(trip in triplets(6, 8), k in 1usize..4, seed in any::<u64>()) {
        let y = SparseCounts::from_triplets(6, 8, &trip).unwrap();
        let (x, mut state) = fixture(seed, 6, 8, k);
        let h = HyperParams::default();
        let reg = Regression::new(&x, &h).unwrap();
        for it in 0..3 {
            let alloc = sweep(&mut state, &y, &reg, &h, Exec::Sequential, seed ^ it).unwrap();
            prop_assert_eq!(alloc.violations(&y), 0);
            for (e, entry) in y.entries().iter().enumerate() {
                prop_assert_eq!(alloc.entry(e).iter().sum::<u64>(), entry.count);
            }
        }
    }

    #[test]
    fn execution_mode_does_not_change_the_chain(trip in triplets(5, 6), seed in any::<u64>()) {
        let y = SparseCounts::from_triplets(5, 6, &trip).unwrap();
        let (x, init) = fixture(seed, 5, 6, 2);
        let h = HyperParams::default();
        let reg = Regression::new(&x, &h).unwrap();
        let (mut a, mut b) = (init.clone(), init);
        for it in 0..3 {
            sweep(&mut a, &y, &reg, &h, Exec::Sequential, it).unwrap();
            sweep(&mut b, &y, &reg, &h, Exec::Parallel, it).unwrap();
        }
        prop_assert_eq!(a.gamma, b.gamma);
        prop_assert_eq!(a.eta, b.eta);
        prop_assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn softmax_columns_are_distributions(v in proptest::collection::vec(-30.0f64..30.0, 12)) {
        let w = softmax_columns(&DMatrix::from_vec(4, 3, v));
        for col in w.column_iter() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
            prop_assert!(col.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn descent_is_nonnegative_and_never_worse_than_its_start(
        r in proptest::collection::vec(-1.0f64..1.0, 9),
        z in proptest::collection::vec(0.0f64..2.0, 15),
        lambda in 0.0f64..2.0,
    ) {
        let root = DMatrix::from_vec(3, 3, r);
        let gram = &root * root.transpose() + DMatrix::identity(3, 3) * 0.1;
        let g0 = DMatrix::from_vec(5, 3, z);
        let b = &g0 * &gram;
        let inp = DecoupleInputs::new(&gram, b, DMatrix::from_element(5, 3, 1.0), g0.clone()).unwrap();
        let fit = coord_descent(&inp, lambda, &inp.init, &DescentConfig::default()).unwrap();
        prop_assert!(fit.g.iter().all(|&v| v >= 0.0));
        prop_assert!(inp.objective(&fit.g, lambda) <= inp.objective(&g0, lambda) + 1e-9);
        prop_assert!(fit.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
    }

    #[test]
    fn ess_is_positive_and_scale_free(v in proptest::collection::vec(-5.0f64..5.0, 50..200), a in 0.1f64..10.0) {
        let base = ess(&v);
        let scaled: Vec<f64> = v.iter().map(|x| a * x + 3.0).collect();
        if let (Ok(e1), Ok(e2)) = (base, ess(&scaled)) {
            prop_assert!(e1.ess > 0.0);
            prop_assert!((e1.ess - e2.ess).abs() <= 1e-6 * e1.ess.max(1.0));
        }
    }
}

#[test]
fn log_omega_is_a_valid_eta() {
    let w = softmax_columns(&DMatrix::from_row_slice(3, 2, &[0.2, -1.0, 1.5, 0.0, -0.3, 2.0]));
    let back = softmax_columns(&w.map(f64::ln));
    assert!((back - &w).abs().max() < 1e-14);
}
