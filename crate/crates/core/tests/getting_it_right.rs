use cocluster_core::diagnostics::getting_it_right;
use cocluster_core::HyperParams;

// theta's prior needs a finite variance for the z-scores to mean anything
fn hyper() -> HyperParams {
    HyperParams {
        c0: 6.0,
        d0: 5.0,
        ..HyperParams::default()
    }
}

#[test]
fn sweep_leaves_the_prior_invariant() {
    let stats = getting_it_right(6, 8, 2, 2, 20_000, &hyper(), 11).unwrap();
    for s in &stats {
        println!("{:>9}: prior {:.4} chain {:.4} z {:+.2}", s.name, s.marginal_mean, s.successive_mean, s.z);
    }
    for s in &stats {
        assert!(s.z.abs() < 4.0, "{} z = {}", s.name, s.z);
    }
}
