use proptest::prelude::*;
use ssvae_core::prob::{mutual_information, product_of_marginals};
use ssvae_core::ratio::{estimated_mutual_information, exact_log_ratio, fit_ratio_classifier, fit_ratio_classifier_slices};
use ssvae_core::{random_instance, Dims, FiniteSpace, JointDistribution, RatioFitConfig, Side};

fn joint(n: usize, m: usize, w: &[f64]) -> JointDistribution {
    let t: f64 = w.iter().sum();
    JointDistribution::new(
        FiniteSpace::indexed("z", n).unwrap(),
        FiniteSpace::indexed("zp", m).unwrap(),
        w.iter().map(|x| x / t).collect(),
    )
    .unwrap()
}

fn max_logit_error(p: &[f64], q: &[f64]) -> (f64, usize) {
    let config = RatioFitConfig::default();
    let fit = fit_ratio_classifier_slices(p, q, &config).unwrap();
    let exact = exact_log_ratio(p, q, config.mask_threshold);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (i, e) in exact.iter().enumerate() {
        match (e, fit.classifier.logit(i)) {
            (Some(e), Some(a)) => {
                worst = worst.max((a - e).abs());
                compared += 1;
            }
            (None, None) => {}
            _ => panic!("mask mismatch at cell {i}"),
        }
    }
    (worst, compared)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_logits_are_log_ratios(
        (p, q) in (2usize..=12).prop_flat_map(|n| (
            prop::collection::vec(prop_oneof![1 => Just(0.0), 1 => 1e-7f64..1e-3, 6 => 0.01f64..1.0], n),
            prop::collection::vec(prop_oneof![1 => Just(0.0), 1 => 1e-7f64..1e-3, 6 => 0.01f64..1.0], n),
        )).prop_filter("both need mass", |(p, q)| p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0)
    ) {
        let norm = |w: &[f64]| { let t: f64 = w.iter().sum(); w.iter().map(|x| x / t).collect::<Vec<_>>() };
        let (p, q) = (norm(&p), norm(&q));
        let (err, _) = max_logit_error(&p, &q);
        prop_assert!(err < 1e-6, "max logit error {err}");

        let config = RatioFitConfig::default();
        let forward = fit_ratio_classifier_slices(&p, &q, &config).unwrap();
        let backward = fit_ratio_classifier_slices(&q, &p, &config).unwrap();
        for i in 0..p.len() {
            match (forward.classifier.logit(i), backward.classifier.logit(i)) {
                (Some(a), Some(b)) => prop_assert!((a + b).abs() < 1e-6),
                (None, None) => {}
                _ => prop_assert!(false, "swap changed the mask"),
            }
        }
        for w in forward.loss_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}

#[test]
fn joint_against_product_on_seeded_instances() {
    for seed in 0..10 {
        let inst = random_instance(Dims::new(4, 5, 3, 4), seed).unwrap();
        let q = inst.induced_latent_joint().unwrap();
        let product = product_of_marginals(&q);
        let fit = fit_ratio_classifier(&q, &product, &RatioFitConfig::default()).unwrap();
        let exact = exact_log_ratio(q.probs(), product.probs(), 1e-9);
        for (i, e) in exact.iter().enumerate() {
            assert!((fit.classifier.logit(i).unwrap() - e.unwrap()).abs() < 1e-6);
        }
        let mi = estimated_mutual_information(&fit.classifier, &q).unwrap();
        assert!((mi - mutual_information(&q)).abs() < 1e-5);
    }
}

#[test]
fn marginal_target_compares_prior_and_induced_marginals() {
    let inst = random_instance(Dims::new(4, 3, 4, 2), 6).unwrap();
    let qz = inst.induced_latent_marginal(Side::C).unwrap();
    let pz = inst.resolve_prior().unwrap().marginalize(ssvae_core::Axis::Row);
    let pz = ssvae_core::FiniteDistribution::new(qz.space().clone(), pz.probs().to_vec()).unwrap();
    let fit = fit_ratio_classifier(&pz, &qz, &RatioFitConfig::default()).unwrap();
    for k in 0..4 {
        let exact = (pz.prob(k) / qz.prob(k)).ln();
        assert!((fit.classifier.logit(k).unwrap() - exact).abs() < 1e-6);
    }
    let same = fit_ratio_classifier(&qz, &qz, &RatioFitConfig::default()).unwrap();
    assert!((0..4).all(|k| same.classifier.logit(k).unwrap().abs() < 1e-6));
}

#[test]
fn product_joint_has_zero_estimated_information() {
    let j = joint(2, 3, &[0.1, 0.2, 0.3, 0.05, 0.1, 0.15]);
    let fit = fit_ratio_classifier(&j, &product_of_marginals(&j), &RatioFitConfig::default()).unwrap();
    assert!(estimated_mutual_information(&fit.classifier, &j).unwrap().abs() < 1e-6);
}

#[test]
fn diagonal_joint_recovers_ln_two_on_the_masked_support() {
    let j = joint(2, 2, &[0.5, 0.0, 0.0, 0.5]);
    let fit = fit_ratio_classifier(&j, &product_of_marginals(&j), &RatioFitConfig::default()).unwrap();
    assert_eq!(fit.classifier.active_count(), 2);
    assert!(fit.classifier.logit(1).is_none());
    assert!((estimated_mutual_information(&fit.classifier, &j).unwrap() - 2f64.ln()).abs() < 1e-5);
}

#[test]
fn shape_mismatch_is_rejected() {
    let a = joint(2, 2, &[1.0; 4]);
    let b = joint(4, 1, &[1.0; 4]);
    assert!(fit_ratio_classifier(&a, &b, &RatioFitConfig::default()).is_err());
}

#[test]
fn low_mass_cells_still_converge_tightly() {
    let p = [0.5, 0.5 - 2e-9, 2e-9];
    let q = [0.2, 0.8 - 3e-8, 3e-8];
    let (err, compared) = max_logit_error(&p, &q);
    assert_eq!(compared, 3);
    assert!(err < 1e-6, "{err}");
}
