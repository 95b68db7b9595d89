use proptest::prelude::*;
use ssvae_core::prob::{entropy, kl_divergence, mutual_information, product_of_marginals};
use ssvae_core::{Axis, Error, FiniteDistribution, FiniteSpace, JointDistribution};

fn normalize(w: &[f64]) -> Vec<f64> {
    let t: f64 = w.iter().sum();
    w.iter().map(|x| x / t).collect()
}

fn dist(w: &[f64]) -> FiniteDistribution {
    FiniteDistribution::new(FiniteSpace::indexed("i", w.len()).unwrap(), normalize(w)).unwrap()
}

fn joint(rows: usize, cols: usize, w: &[f64]) -> JointDistribution {
    JointDistribution::new(
        FiniteSpace::indexed("r", rows).unwrap(),
        FiniteSpace::indexed("c", cols).unwrap(),
        normalize(w),
    )
    .unwrap()
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    // Some exact zeros to exercise the 0·ln 0 convention.
    prop::collection::vec(prop_oneof![1 => Just(0.0), 6 => 0.01f64..1.0], n)
        .prop_filter("needs some mass", |w| w.iter().any(|&x| x > 0.0))
}

fn joint_strategy() -> impl Strategy<Value = JointDistribution> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| weights(r * c).prop_map(move |w| joint(r, c, &w)))
}

/// KL over the flattened cells, written out independently of the library.
fn flat_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

proptest! {
    #[test]
    fn mutual_information_is_kl_to_product(j in joint_strategy()) {
        let product = product_of_marginals(&j);
        let mi = mutual_information(&j);
        prop_assert!((mi - flat_kl(j.probs(), product.probs())).abs() < 1e-12);
        prop_assert!((mi - j.kl_divergence(&product).unwrap()).abs() < 1e-12);
        prop_assert!(mi >= 0.0);
        let cap = entropy(&j.marginalize(Axis::Row)).min(entropy(&j.marginalize(Axis::Col)));
        prop_assert!(mi <= cap + 1e-12);
    }

    #[test]
    fn mutual_information_is_transpose_symmetric(j in joint_strategy()) {
        prop_assert!((mutual_information(&j) - mutual_information(&j.transpose())).abs() < 1e-12);
    }

    #[test]
    fn marginalize_condition_recompose(j in joint_strategy()) {
        let rows = j.marginalize(Axis::Row);
        let cond = j.condition(Axis::Row);
        let back = cond.compose(&rows).unwrap();
        for (a, b) in back.probs().iter().zip(j.probs()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let total: f64 = rows.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_on_equality(
        (p, q) in (1usize..=6).prop_flat_map(|n| (prop::collection::vec(0.01f64..1.0, n), prop::collection::vec(0.01f64..1.0, n)))
    ) {
        let (p, q) = (dist(&p), dist(&q));
        let kl = kl_divergence(&p, &q).unwrap();
        prop_assert!(kl >= 0.0);
        let max_diff = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if kl < 1e-12 {
            prop_assert!(max_diff < 1e-5);
        }
        if max_diff < 1e-12 {
            prop_assert!(kl < 1e-12);
        }
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_is_bounded(w in (1usize..=8).prop_flat_map(weights)) {
        let p = dist(&w);
        let h = entropy(&p);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }
}

#[test]
fn mutual_information_matches_direct_double_sum() {
    let j = joint(2, 2, &[0.4, 0.1, 0.1, 0.4]);
    // 0.8 ln 1.6 + 0.2 ln 0.4
    assert!((mutual_information(&j) - 0.192_744_757_021_757_53).abs() < 1e-15);
}

#[test]
fn absolute_continuity_is_reported_by_label() {
    let s = FiniteSpace::new(["heads", "tails"]).unwrap();
    let p = FiniteDistribution::new(s.clone(), vec![0.5, 0.5]).unwrap();
    let q = FiniteDistribution::new(s, vec![1.0, 0.0]).unwrap();
    assert_eq!(kl_divergence(&p, &q).unwrap_err(), Error::AbsoluteContinuity("tails".into()));
}

#[test]
fn construction_rejects_unnormalized_tables() {
    let s = FiniteSpace::indexed("i", 2).unwrap();
    assert!(matches!(
        FiniteDistribution::new(s.clone(), vec![0.5, 0.4]),
        Err(Error::NotNormalized { .. })
    ));
    assert!(matches!(
        FiniteDistribution::new(s.clone(), vec![1.5, -0.5]),
        Err(Error::NegativeProbability { .. })
    ));
    assert!(matches!(
        FiniteDistribution::new(s, vec![f64::NAN, 1.0]),
        Err(Error::NonFinite { .. })
    ));
    assert!(matches!(FiniteSpace::new(["a", "a"]), Err(Error::DuplicateLabel(_))));
    assert!(matches!(FiniteSpace::new(Vec::<String>::new()), Err(Error::EmptySpace)));
}

#[test]
fn zero_marginal_rows_are_undefined() {
    let j = joint(2, 2, &[0.5, 0.5, 0.0, 0.0]);
    let cond = j.condition(Axis::Row);
    assert!(cond.is_defined(0));
    assert_eq!(cond.row(1).unwrap_err(), Error::ZeroMarginal("r1".into()));
}
