//! Property tests for the library's structural invariants.

use fedsim::engine::{apply_controlled_averaging, Algorithm, LearningRateSchedule, RunConfig};
use fedsim::problem::{make_synthetic_problem, weighted_diversity, SyntheticSpec};
use fedsim::sampling::{sample_devices, RngStream};
use fedsim::{check_lfgd, check_lfsgd_nonconvex, check_nfsgd, FedError, ModelVector};
use proptest::prelude::*;

fn simplex(p: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.05f64..1.0, p).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    })
}

fn vectors(p: usize, d: usize) -> impl Strategy<Value = Vec<ModelVector>> {
    proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, d), p)
        .prop_map(|vs| vs.into_iter().map(ModelVector::from_vec).collect())
}

proptest! {
    // Cauchy-Schwarz with weights q: the diversity ratio never drops below 1.
    #[test]
    fn diversity_at_least_one(
        (vs, q) in (2usize..6, 1usize..5).prop_flat_map(|(p, d)| (vectors(p, d), simplex(p)))
    ) {
        match weighted_diversity(&vs, &q) {
            Ok(lam) => prop_assert!(lam >= 1.0 - 1e-12, "lambda = {lam}"),
            Err(FedError::DegenerateDiversity { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        }
    }

    // Scaling every local objective by the same c > 0 scales numerator and
    // denominator by c^2 and leaves the ratio unchanged.
    #[test]
    fn diversity_invariant_under_uniform_rescaling(
        (vs, q) in (2usize..6, 1usize..5).prop_flat_map(|(p, d)| (vectors(p, d), simplex(p))),
        c in 0.01f64..100.0
    ) {
        let scaled: Vec<ModelVector> = vs.iter().map(|v| v.scaled(c)).collect();
        match (weighted_diversity(&vs, &q), weighted_diversity(&scaled, &q)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0)),
            (Err(_), _) | (_, Err(_)) => {}
        }
    }

    // Sampling draws exactly K members, all in range, and is reproducible.
    #[test]
    fn device_sampling_contract(
        q in (2usize..8).prop_flat_map(simplex),
        k in 1usize..12,
        seed in any::<u64>(),
    ) {
        let p = q.len();
        let a = sample_devices(&mut RngStream::device_selection(seed, 3), &q, k).unwrap();
        let b = sample_devices(&mut RngStream::device_selection(seed, 3), &q, k).unwrap();
        prop_assert_eq!(a.members(), b.members());
        prop_assert_eq!(a.len(), k);
        prop_assert!(a.members().iter().all(|&j| j < p));
    }

    // The correction step preserves the direction sum for any corrections.
    #[test]
    fn controlled_averaging_mass_conservation(
        (dirs, c) in (2usize..6, 1usize..4)
            .prop_flat_map(|(p, d)| (vectors(p, d), vectors(p, d)))
    ) {
        let out = apply_controlled_averaging(&dirs, &c);
        let dim = dirs[0].dim();
        let mut before = ModelVector::zeros(dim);
        let mut after = ModelVector::zeros(dim);
        for (g, o) in dirs.iter().zip(&out) {
            before.axpy(1.0, g);
            after.axpy(1.0, o);
        }
        let scale = before.norm().max(1.0);
        prop_assert!(before.sub(&after).norm() <= 1e-12 * scale);
    }

    // Checker left sides are nondecreasing in E, lambda and C1, so the
    // solved maxima move the right way under perturbation.
    #[test]
    fn checker_monotonicity(
        eta in 1e-4f64..0.5,
        e in 1u64..64,
        lambda in 1.0f64..8.0,
        c1 in 0.0f64..4.0,
        zeta in 0.0f64..0.9,
    ) {
        let l = 1.0;
        let mu = 0.5;
        if mu * eta < 1.0 {
            let a = check_lfgd(eta, e, l, mu, lambda).unwrap();
            let b = check_lfgd(eta, e + 1, l, mu, lambda).unwrap();
            let c = check_lfgd(eta, e, l, mu, lambda + 0.5).unwrap();
            prop_assert!(b.lhs >= a.lhs);
            prop_assert!(c.rhs <= a.rhs);
            prop_assert!(c.max_eta.unwrap() <= a.max_eta.unwrap() * (1.0 + 1e-9));
        }
        let a = check_lfsgd_nonconvex(eta, e, 2, l, lambda, c1).unwrap();
        let b = check_lfsgd_nonconvex(eta, e + 1, 2, l, lambda, c1).unwrap();
        let c = check_lfsgd_nonconvex(eta, e, 2, l, lambda, c1 + 1.0).unwrap();
        prop_assert!(b.lhs >= a.lhs);
        prop_assert!(c.lhs >= a.lhs);
        prop_assert!(b.max_eta.unwrap() <= a.max_eta.unwrap() * (1.0 + 1e-9));
        prop_assert!(c.max_eta.unwrap() <= a.max_eta.unwrap() * (1.0 + 1e-9));

        let a = check_nfsgd(eta, e, 4, l, lambda, c1, zeta).unwrap();
        let b = check_nfsgd(eta, e + 1, 4, l, lambda, c1, zeta).unwrap();
        prop_assert!(b.lhs >= a.lhs);
        prop_assert!(b.max_eta.unwrap() <= a.max_eta.unwrap() * (1.0 + 1e-9));
    }
}

// Two runs with one RunConfig are byte-for-byte identical, including the
// emitted CSV.
#[test]
fn reproducibility_trajectory_bytes() {
    let problem =
        make_synthetic_problem(&SyntheticSpec::least_squares(4, 3, 1.2, 0.6, 404)).unwrap();
    let mut cfg = RunConfig::new(Algorithm::Lfsgd, 4, 2, 80, ModelVector::zeros(3));
    cfg.lr = LearningRateSchedule::Constant { eta: 0.04 };
    cfg.b = 2;
    cfg.seed = 31;
    let a = fedsim::run_lfsgd(&problem, cfg.clone()).unwrap();
    let b = fedsim::run_lfsgd(&problem, cfg).unwrap();
    assert_eq!(a.to_csv().as_bytes(), b.to_csv().as_bytes());
}
