use editlab_core::numerics::Rng;
use editlab_core::oracle::{
    kl, maximize_j_numerically, objective_j, optimality_certificate, tilt, tv, verify_cr_identity, verify_sweep,
    DiscreteDistribution,
};
use proptest::prelude::*;

fn distribution(n: usize) -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| DiscreteDistribution::normalized(w).unwrap())
}

fn instance() -> impl Strategy<Value = (DiscreteDistribution, DiscreteDistribution, Vec<f64>, f64)> {
    (2usize..30).prop_flat_map(|n| {
        (
            distribution(n),
            distribution(n),
            prop::collection::vec(-5.0f64..5.0, n),
            0.05f64..20.0,
        )
    })
}

/// Straight-line reimplementation of J summing from the last index down.
fn reversed_objective(rho: &[f64], p: &[f64], r: &[f64], eta: f64) -> f64 {
    let mut expected = 0.0;
    let mut divergence = 0.0;
    for i in (0..rho.len()).rev() {
        expected += rho[i] * r[i];
        if rho[i] > 0.0 {
            divergence += rho[i] * (rho[i].ln() - p[i].ln());
        }
    }
    expected - eta * divergence
}

proptest! {
    #[test]
    fn objective_matches_reversed_summation((rho, p, r, eta) in instance()) {
        let a = objective_j(&rho, &p, &r, eta).unwrap();
        let b = reversed_objective(rho.probs(), p.probs(), &r, eta);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }

    #[test]
    fn zero_reward_objective_is_negative_kl((rho, p, _r, eta) in instance()) {
        let zeros = vec![0.0; p.len()];
        let j = objective_j(&rho, &p, &zeros, eta).unwrap();
        prop_assert!(j <= 0.0);
        prop_assert!((j + eta * kl(&rho, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn partition_function_bounds((_rho, p, r, eta) in instance()) {
        let (_, z) = tilt(&p, &r, eta).unwrap();
        let lo = r.iter().map(|x| (x / eta).exp()).fold(f64::INFINITY, f64::min);
        let hi = r.iter().map(|x| (x / eta).exp()).fold(0.0, f64::max);
        prop_assert!(z >= lo * (1.0 - 1e-12) && z <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn tilt_is_monotone_in_reward(n in 2usize..20, r in prop::collection::vec(-4.0f64..4.0, 20), eta in 0.1f64..10.0) {
        let p = DiscreteDistribution::uniform(n).unwrap();
        let r = &r[..n];
        let (rho, _) = tilt(&p, r, eta).unwrap();
        for i in 0..n {
            for j in 0..n {
                if r[i] > r[j] {
                    prop_assert!(rho.probs()[i] >= rho.probs()[j]);
                }
            }
        }
    }

    #[test]
    fn numerical_maximizer_agrees_with_closed_form((_rho, p, r, eta) in instance()) {
        let (closed, _) = tilt(&p, &r, eta).unwrap();
        let numeric = maximize_j_numerically(&p, &r, eta, 500).unwrap();
        prop_assert!(tv(&closed, &numeric).unwrap() < 1e-6);
    }

    #[test]
    fn closed_form_is_never_beaten((_rho, p, r, eta) in instance(), seed in any::<u64>()) {
        let cert = optimality_certificate(&p, &r, eta, 100, &mut Rng::new(seed)).unwrap();
        prop_assert!(cert.passed, "{cert:?}");
    }

    #[test]
    fn bayes_identity_holds((_rho, p, r, eta) in instance()) {
        prop_assert!(verify_cr_identity(&p, &r, eta).unwrap() < 1e-10);
    }

    #[test]
    fn kl_symmetrized_matches_independent_sum((p, q, _r, _eta) in instance()) {
        let direct: f64 = p
            .probs()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| (a - b) * (a.ln() - b.ln()))
            .sum();
        let via = kl(&p, &q).unwrap() + kl(&q, &p).unwrap();
        prop_assert!((direct - via).abs() < 1e-12 * (1.0 + direct));
    }
}

#[test]
fn sparse_support_is_respected() {
    let p = DiscreteDistribution::new(vec![0.5, 0.0, 0.5]).unwrap();
    let r = [1.0, 100.0, 0.0];
    let (rho, _) = tilt(&p, &r, 1.0).unwrap();
    assert_eq!(rho.probs()[1], 0.0);
    let numeric = maximize_j_numerically(&p, &r, 1.0, 500).unwrap();
    assert_eq!(numeric.probs()[1], 0.0);
    assert!(tv(&rho, &numeric).unwrap() < 1e-10);
}

#[test]
fn sweep_is_deterministic() {
    let a = verify_sweep(5, 50, 50, &mut Rng::new(9)).unwrap();
    let b = verify_sweep(5, 50, 50, &mut Rng::new(9)).unwrap();
    assert_eq!(a, b);
}
