use ssvae_core::model::BilinearCoupling;
use ssvae_core::objectives::{expected_const, expected_structured_elbo, infonce_exact};
use ssvae_core::trainer::{
    finite_difference_gradient, objective_gradient, objective_value, shared_factor_experiment, train, train_observed,
    TrainStatus,
};
use ssvae_core::{
    random_instance, random_instance_with_prior, Coupling, Dims, Encoder, Error, FiniteSpace, 
    ModelInstance, Objective, ObjectiveChoice, ParameterVector, PriorChoice, PriorSpec, SharedFactorConfig,
    SharedFactorModel, Side, TrainConfig, TrainTrace,
};

fn cases() -> Vec<(ObjectiveChoice, PriorChoice)> {
    vec![
        (ObjectiveChoice::ElboTable, PriorChoice::ExplicitTable),
        (ObjectiveChoice::ElboMi, PriorChoice::Mi),
        (ObjectiveChoice::ElboInfoNce, PriorChoice::InfoNceBilinear { embed_dim: 2 }),
        (ObjectiveChoice::InfoNceExact, PriorChoice::InfoNceBilinear { embed_dim: 3 }),
        (ObjectiveChoice::Unstructured, PriorChoice::ExplicitTable),
    ]
}

/// Worst per-coordinate disagreement: relative where `|analytic| >= 1e-8`,
/// absolute below that.
fn gradient_errors(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let mut rel: f64 = 0.0;
    let mut abs: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        if a.abs() < 1e-8 {
            abs = abs.max((a - n).abs());
        } else {
            rel = rel.max((a - n).abs() / a.abs());
        }
    }
    (rel, abs)
}

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..8 {
        for (choice, prior) in cases() {
            let inst = random_instance_with_prior(Dims::new(4, 3, 3, 4), prior, seed).unwrap();
            let params = ParameterVector::from_instance(&inst);
            let analytic = objective_gradient(&inst, &params, choice.objective()).unwrap();
            let numeric = finite_difference_gradient(&inst, &params, choice.objective(), 1e-5).unwrap();
            let (rel, abs) = gradient_errors(&analytic, &numeric);
            assert!(rel <= 1e-6 && abs <= 1e-8, "{choice:?} seed {seed}: rel {rel:e} abs {abs:e}");
        }
    }
}

#[test]
fn step_sweep_shows_the_central_difference_curve() {
    let inst = random_instance_with_prior(Dims::new(4, 3, 3, 4), PriorChoice::Mi, 13).unwrap();
    let params = ParameterVector::from_instance(&inst);
    let analytic = objective_gradient(&inst, &params, Objective::StructuredElbo).unwrap();
    let err = |h| {
        let numeric = finite_difference_gradient(&inst, &params, Objective::StructuredElbo, h).unwrap();
        analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max)
    };
    let (e4, e5, e6) = (err(1e-4), err(1e-5), err(1e-6));
    // second-order truncation: a tenfold smaller step cuts the error ~100x
    assert!(e5 < e4 / 50.0, "{e4:e} {e5:e}");
    // then the error flattens at the rounding floor of the analytic gradient
    assert!(e6 < 1e-14, "{e6:e}");
}

#[test]
fn matched_table_prior_has_zero_logit_gradient() {
    let base = random_instance(Dims::new(4, 3, 3, 2), 8).unwrap();
    let qz = base.induced_latent_marginal(Side::C).unwrap();
    // P(k, l) = Q(k) / |z'|, so P(z) = Q(z)
    let logits = (0..6).map(|i| qz.prob(i / 2).ln()).collect();
    let inst = base.with_prior(PriorSpec::ExplicitTable { logits }).unwrap();
    let params = ParameterVector::from_instance(&inst);
    let grad = objective_gradient(&inst, &params, Objective::UnstructuredElbo).unwrap();
    let prior_block = &grad[grad.len() - 6..];
    assert!(prior_block.iter().all(|g| g.abs() < 1e-10), "{prior_block:?}");
}

#[test]
fn zero_weight_bilinear_gradient_matches_differences() {
    let base = random_instance(Dims::new(3, 4, 3, 3), 2).unwrap();
    // centered embeddings, W = 0: the coupling is constant
    let u = vec![1.0, -0.5, 0.0, 0.5, -0.5, 0.0];
    let v = vec![0.3, 0.2, -0.6, 0.1, 0.3, -0.3];
    let coupling = BilinearCoupling::new(3, 2, u, 3, 2, v, vec![0.0; 4]).unwrap();
    let inst = base.with_prior(PriorSpec::InfoNce(Coupling::Bilinear(coupling))).unwrap();
    assert!(infonce_exact(&inst).unwrap().abs() < 1e-15);
    let params = ParameterVector::from_instance(&inst);
    let analytic = objective_gradient(&inst, &params, Objective::InfoNceExact).unwrap();
    let numeric = finite_difference_gradient(&inst, &params, Objective::InfoNceExact, 1e-5).unwrap();
    let (rel, abs) = gradient_errors(&analytic, &numeric);
    assert!(rel <= 1e-6 && abs <= 1e-8);
    let w_block = &analytic[analytic.len() - 4..];
    assert!(w_block.iter().any(|g| g.abs() > 1e-6));
}

#[test]
fn single_latent_model_has_zero_gradient() {
    let base = random_instance(Dims::new(3, 3, 1, 1), 4).unwrap();
    for choice in [ObjectiveChoice::ElboMi, ObjectiveChoice::ElboTable, ObjectiveChoice::ElboInfoNce] {
        let inst = choice.prepare(&base, 1).unwrap();
        let params = ParameterVector::from_instance(&inst);
        for g in finite_difference_gradient(&inst, &params, choice.objective(), 1e-5).unwrap() {
            assert!(g.abs() < 1e-12);
        }
        for g in objective_gradient(&inst, &params, choice.objective()).unwrap() {
            assert!(g.abs() < 1e-12);
        }
    }
}

#[test]
fn parameter_vector_round_trips() {
    for (choice, prior) in cases() {
        let inst = random_instance_with_prior(Dims::new(3, 2, 2, 3), prior, 5).unwrap();
        let params = ParameterVector::from_instance(&inst);
        assert_eq!(params.apply(&inst).unwrap(), inst, "{choice:?}");
        let again = ParameterVector::from_instance(&params.apply(&inst).unwrap());
        assert_eq!(again, params);
    }
    let inst = random_instance(Dims::new(3, 2, 2, 3), 5).unwrap();
    let params = ParameterVector::from_instance(&inst);
    assert_eq!(params.len(), 3 * 2 + 2 * 3 + 2 * 3);
    assert_eq!(params.layout().describe(0), "encoder_c[0,0]");
    assert_eq!(params.layout().describe(6), "encoder_x[0,0]");
    assert_eq!(params.layout().describe(17), "prior[1,2]");
    assert!(params.with_values(vec![0.0; 3]).is_err());
}

#[test]
fn deterministic_encoders_are_not_trainable() {
    let inst = random_instance_with_prior(Dims::new(3, 2, 2, 3), PriorChoice::Mi, 5).unwrap().hardened();
    let params = ParameterVector::from_instance(&inst);
    assert!(params.is_empty());
    let trace = train(&inst, &TrainConfig::new(Objective::StructuredElbo)).unwrap();
    assert_eq!(trace.rows.len(), 1);
    assert_eq!(trace.accepted_steps(), 0);
}

fn noiseless_optimum() -> ModelInstance {
    // Saturated encoders reading off the shared factor exactly.
    let m = SharedFactorModel::generate(&SharedFactorConfig::new(3, 2, 0.0, 2)).unwrap();
    let sharp = |given: &FiniteSpace, target: &str| {
        let logits = (0..6 * 3).map(|i| if (i / 3) / 2 == i % 3 { 40.0 } else { 0.0 }).collect();
        Encoder::softmax(given.clone(), FiniteSpace::indexed(target, 3).unwrap(), logits).unwrap()
    };
    let inst = m.instance;
    let c = sharp(inst.data().rows(), "z");
    let x = sharp(inst.data().cols(), "zp");
    inst.with_encoder(Side::C, c).unwrap().with_encoder(Side::X, x).unwrap()
}

#[test]
fn stationary_start_terminates_immediately() {
    let trace = train(&noiseless_optimum(), &TrainConfig::new(Objective::StructuredElbo)).unwrap();
    assert_eq!(trace.status, TrainStatus::Converged);
    assert_eq!(trace.rows.len(), 1);
    assert_eq!(trace.accepted_steps(), 0);
}

fn infonce_run(max_iters: usize) -> Result<TrainTrace, Error> {
    let m = SharedFactorModel::generate(&SharedFactorConfig::new(4, 2, 0.0, 0)).unwrap();
    let inst = ObjectiveChoice::ElboInfoNce.prepare(&m.instance, 0).unwrap();
    let config = TrainConfig {
        max_iters,
        ..TrainConfig::new(Objective::StructuredElbo)
    };
    train(&inst, &config)
}

#[test]
fn accepted_steps_never_decrease_the_objective() {
    let err = infonce_run(60).unwrap_err();
    assert_eq!(infonce_run(60).unwrap_err(), err);
    let Error::NonConvergence { trace: Some(trace), iterations, .. } = err else {
        panic!("expected the iteration cap");
    };
    assert_eq!(iterations, 60);
    assert_eq!(trace.status, TrainStatus::IterationCap);
    assert_eq!(trace.rows.len(), 60);
    assert!(trace.rows[1].objective > trace.rows[0].objective);
    for w in trace.rows.windows(2) {
        assert!(w[1].objective >= w[0].objective);
        assert!(w[0].objective.is_finite());
    }
}

#[test]
fn iteration_cap_of_one_leaves_a_single_row() {
    let Error::NonConvergence { trace: Some(trace), .. } = infonce_run(1).unwrap_err() else {
        panic!("expected the iteration cap");
    };
    assert_eq!(trace.rows.len(), 1);
    assert_eq!(trace.status, TrainStatus::IterationCap);
}

#[test]
fn invalid_configs_are_rejected() {
    let inst = random_instance(Dims::new(2, 2, 2, 2), 0).unwrap();
    for config in [
        TrainConfig { step_size: 0.0, ..TrainConfig::new(Objective::StructuredElbo) },
        TrainConfig { tolerance: -1.0, ..TrainConfig::new(Objective::StructuredElbo) },
        TrainConfig { max_iters: 0, ..TrainConfig::new(Objective::StructuredElbo) },
    ] {
        assert!(matches!(train(&inst, &config), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn infonce_identity_holds_along_the_trajectory() {
    let m = SharedFactorModel::generate(&SharedFactorConfig::new(3, 2, 0.1, 4)).unwrap();
    let inst = ObjectiveChoice::ElboInfoNce.prepare(&m.instance, 4).unwrap();
    let config = TrainConfig {
        max_iters: 200,
        ..TrainConfig::new(Objective::StructuredElbo)
    };
    let mut checked = 0;
    let _ = train_observed(&inst, &config, &mut |current| {
        let lhs = expected_structured_elbo(current)? - expected_const(current);
        assert!((lhs - infonce_exact(current)?).abs() < 1e-10);
        checked += 1;
        Ok(None)
    });
    assert!(checked > 10);
}

#[test]
fn noiseless_infonce_recovers_the_factor() {
    let cfg = SharedFactorConfig::new(4, 2, 0.0, 0);
    let config = TrainConfig::new(Objective::StructuredElbo);
    let (_, trace) = shared_factor_experiment(&cfg, ObjectiveChoice::ElboInfoNce, &config).unwrap();
    let last = trace.rows.last().unwrap();
    assert!(last.mi_z_s.unwrap() >= 0.95 * 4f64.ln());
    assert!(trace.rows.iter().all(|r| r.mi_z_s.is_some()));
}

#[test]
fn pure_noise_leaves_nothing_to_recover() {
    let cfg = SharedFactorConfig::new(4, 2, 1.0, 0);
    let config = TrainConfig::new(Objective::StructuredElbo);
    let (_, trace) = shared_factor_experiment(&cfg, ObjectiveChoice::ElboInfoNce, &config).unwrap();
    assert!(trace.rows.iter().all(|r| r.mi_z_s.unwrap() <= 0.05));
}

#[test]
fn mi_prior_and_infonce_agree_at_convergence() {
    let cfg = SharedFactorConfig::new(4, 2, 0.0, 0);
    let config = TrainConfig::new(Objective::StructuredElbo);
    let (model, infonce) = shared_factor_experiment(&cfg, ObjectiveChoice::ElboInfoNce, &config).unwrap();
    let (_, mi) = shared_factor_experiment(&cfg, ObjectiveChoice::ElboMi, &config).unwrap();
    let prepared = ObjectiveChoice::ElboInfoNce.prepare(&model.instance, 0).unwrap();
    let trained = infonce.final_params.apply(&prepared).unwrap();
    let mi_term = ssvae_core::prob::mutual_information(&trained.induced_latent_joint().unwrap());
    let mi_objective = mi.final_objective - expected_const(&model.instance);
    assert!((mi_objective - mi_term).abs() < 1e-6, "{mi_objective} vs {mi_term}");
}

#[test]
fn training_is_deterministic() {
    let a = infonce_run(40).unwrap_err();
    let b = infonce_run(40).unwrap_err();
    assert_eq!(a, b);
}

#[test]
fn experiment_requires_enough_latents() {
    let cfg = SharedFactorConfig {
        latent_count: 2,
        ..SharedFactorConfig::new(4, 1, 0.0, 0)
    };
    let config = TrainConfig::new(Objective::StructuredElbo);
    assert!(shared_factor_experiment(&cfg, ObjectiveChoice::ElboMi, &config).is_err());
}

#[test]
fn objective_values_follow_their_definitions() {
    let inst = random_instance_with_prior(Dims::new(3, 3, 2, 2), PriorChoice::InfoNceBilinear { embed_dim: 2 }, 1).unwrap();
    assert_eq!(objective_value(&inst, Objective::InfoNceExact).unwrap(), infonce_exact(&inst).unwrap());
    assert_eq!(
        objective_value(&inst, Objective::StructuredElbo).unwrap(),
        expected_structured_elbo(&inst).unwrap()
    );
    // MI prior: P(z) = Q(z), so the unstructured objective is the data log-likelihood
    let mi = inst.with_prior(PriorSpec::Mi).unwrap();
    let pc = mi.data_marginal(Side::C);
    let loglik: f64 = pc.probs().iter().map(|p| p * p.ln()).sum();
    assert!((objective_value(&mi, Objective::UnstructuredElbo).unwrap() - loglik).abs() < 1e-12);
}
