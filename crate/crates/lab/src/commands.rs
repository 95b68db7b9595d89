use std::path::{Path, PathBuf};

use serde_json::json;
use ssvae_core::objectives::{
    elbo_decomposition, expected_const, expected_structured_elbo, infonce_exact, infonce_finite_n, objective_report,
    FiniteNEstimate,
};
use ssvae_core::prob::{mutual_information, product_of_marginals};
use ssvae_core::ratio::{estimated_mutual_information, exact_log_ratio, fit_ratio_classifier_slices};
use ssvae_core::trainer::{initialize, train_observed, TrainStatus};
use ssvae_core::{
    random_instance_with_prior, Axis, Dims, ModelInstance, ObjectiveChoice, PriorChoice, PriorSpec,
    RatioFitConfig, Side, SplitMix64, TrainConfig,
};

use crate::output::{companion, real, write_file, write_plot, RunManifest, Table};
use crate::spec::{DataSpec, ModelSpec, PriorFile};
use crate::{LabError, Outcome};

const IDENTITY_TOL: f64 = 1e-10;

/// Runs `work` over `items` on up to `parallel` scoped threads. Results come
/// back in input order whatever the schedule.
fn run_parallel<T, R, F>(items: &[T], parallel: usize, work: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallel.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&work).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&work).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn load(path: &Path) -> Result<(ModelSpec, crate::LoadedSpec), LabError> {
    let spec = ModelSpec::load(path)?;
    let loaded = spec.build().map_err(|e| match e {
        LabError::Core(core) => LabError::Spec(format!("{}: {core}", path.display())),
        other => other,
    })?;
    Ok((spec, loaded))
}

fn spec_json(spec: &ModelSpec) -> serde_json::Value {
    serde_json::to_value(spec).expect("specs always serialize")
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyArgs {
    pub spec: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub parallel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Relation {
    /// `|lhs − rhs| <= tol`
    Equal,
    /// `lhs − rhs <= tol`
    AtMost,
    /// `lhs > rhs`
    Above,
}

#[derive(Debug, Clone, PartialEq)]
struct CheckRow {
    check: String,
    instance: String,
    lhs: f64,
    rhs: f64,
    tolerance: f64,
    relation: Relation,
}

impl CheckRow {
    fn diff(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    fn pass(&self) -> bool {
        match self.relation {
            Relation::Equal => self.diff() <= self.tolerance,
            Relation::AtMost => self.lhs - self.rhs <= self.tolerance,
            Relation::Above => self.lhs > self.rhs,
        }
    }
}

/// Instance sizes for a verification seed: data sides in `2..=5`, latent
/// sides in `2..=4`, drawn from the seed's own substream.
pub fn verification_dims(seed: u64) -> Dims {
    let mut rng = SplitMix64::substream(seed, 0);
    let mut pick = |lo: u64, hi: u64| (lo + rng.next_u64() % (hi - lo + 1)) as usize;
    Dims::new(pick(2, 5), pick(2, 5), pick(2, 4), pick(2, 4))
}

/// One data joint and encoder pair under the three prior families.
struct Family {
    instance: String,
    table: ModelInstance,
    mi: ModelInstance,
    infonce: ModelInstance,
    stochastic: bool,
}

fn max_pair(inst: &ModelInstance, f: impl Fn(f64, f64) -> f64) -> Result<f64, LabError> {
    let report = objective_report(inst)?;
    Ok(report
        .pairs
        .iter()
        .map(|p| f(p.elbo, p.evidence))
        .fold(f64::NEG_INFINITY, f64::max))
}

fn check_family(f: &Family, perturb_seed: u64) -> Result<Vec<CheckRow>, LabError> {
    let row = |check: &str, lhs, rhs, tolerance, relation| CheckRow {
        check: check.to_string(),
        instance: f.instance.clone(),
        lhs,
        rhs,
        tolerance,
        relation,
    };
    let centered = |inst: &ModelInstance| -> Result<f64, LabError> {
        Ok(expected_structured_elbo(inst)? - expected_const(inst))
    };
    let mi_value = mutual_information(&f.mi.induced_latent_joint()?);
    let exact = infonce_exact(&f.infonce)?;

    let mut rows = vec![
        row("identity_a", centered(&f.mi)?, mi_value, IDENTITY_TOL, Relation::Equal),
        row("identity_b", centered(&f.infonce)?, exact, IDENTITY_TOL, Relation::Equal),
    ];
    for inst in [&f.table, &f.mi, &f.infonce] {
        let name = inst.prior().name();
        let d = elbo_decomposition(inst)?;
        rows.push(row(
            &format!("decomposition_{name}"),
            d.recombined(),
            expected_structured_elbo(inst)?,
            IDENTITY_TOL,
            Relation::Equal,
        ));
        rows.push(row(
            &format!("jensen_{name}"),
            max_pair(inst, |elbo, evidence| elbo - evidence)?,
            0.0,
            IDENTITY_TOL,
            Relation::AtMost,
        ));
    }
    if f.stochastic {
        rows.push(row(
            "jensen_strict_gap",
            max_pair(&f.mi, |elbo, evidence| evidence - elbo)?,
            0.0,
            0.0,
            Relation::Above,
        ));
    }
    rows.push(row(
        "tightness_one_hot",
        max_pair(&f.mi.hardened(), |elbo, evidence| (elbo - evidence).abs())?,
        0.0,
        IDENTITY_TOL,
        Relation::Equal,
    ));
    rows.push(row("infonce_bound", exact, mi_value, IDENTITY_TOL, Relation::AtMost));
    let perturbed = initialize(&f.table, perturb_seed)?;
    rows.push(row(
        "constant_invariance",
        expected_const(&f.table),
        expected_const(&perturbed),
        0.0,
        Relation::Equal,
    ));
    Ok(rows)
}

fn seeded_family(seed: u64) -> Result<Family, LabError> {
    let dims = verification_dims(seed);
    Ok(Family {
        instance: seed.to_string(),
        table: random_instance_with_prior(dims, PriorChoice::ExplicitTable, seed)?,
        mi: random_instance_with_prior(dims, PriorChoice::Mi, seed)?,
        infonce: random_instance_with_prior(dims, PriorChoice::InfoNceBilinear { embed_dim: 2 }, seed)?,
        stochastic: true,
    })
}

/// The model spec's own prior is used for its family; the other two are
/// attached with the default seeded initialization. The strict-gap row is
/// left out since a spec may use one-hot encoders.
fn spec_family(inst: &ModelInstance) -> Result<Family, LabError> {
    let table = ObjectiveChoice::ElboTable.prepare(inst, 0)?;
    let infonce = ObjectiveChoice::ElboInfoNce.prepare(inst, 0)?;
    Ok(Family {
        instance: "spec".to_string(),
        table,
        mi: inst.with_prior(PriorSpec::Mi)?,
        infonce,
        stochastic: false,
    })
}

fn report_table(inst: &ModelInstance) -> Result<Table, LabError> {
    let report = objective_report(inst)?;
    let mut t = Table::new(&["key", "value"]);
    let mut kv = |k: String, v: String| t.push(vec![k, v]);
    kv("prior".into(), report.prior.into());
    kv("expected_elbo".into(), real(report.expected_elbo));
    kv("expected_const".into(), real(report.expected_const));
    kv("mi_term".into(), real(report.mi_term));
    kv("kl_to_prior".into(), real(report.kl_to_prior));
    if let Some(v) = report.infonce_exact {
        kv("infonce_exact".into(), real(v));
    }
    let data = inst.data();
    for p in &report.pairs {
        let pair = format!("{},{}", data.rows().label(p.c), data.cols().label(p.x));
        kv(format!("elbo[{pair}]"), real(p.elbo));
        kv(format!("evidence[{pair}]"), real(p.evidence));
        kv(format!("const[{pair}]"), real(p.const_term));
    }
    Ok(t)
}

/// Runs the identity and inequality suite over the model spec (if any) and over
/// one random instance per seed. Writes one CSV row per check.
pub fn verify(args: &VerifyArgs) -> Result<Outcome, LabError> {
    if args.spec.is_none() && args.seeds.is_empty() {
        return Err(LabError::Usage("verify needs --spec or a non-empty --seeds".into()));
    }
    let mut rows = Vec::new();
    let mut config = json!({ "seeds": args.seeds, "parallel": args.parallel });
    let mut report = None;
    if let Some(path) = &args.spec {
        let (spec, loaded) = load(path)?;
        config["spec_path"] = json!(path.display().to_string());
        config["spec"] = spec_json(&spec);
        rows.extend(check_family(&spec_family(&loaded.instance)?, 1)?);
        report = Some(report_table(&loaded.instance)?);
    }
    let per_seed = run_parallel(&args.seeds, args.parallel, |&seed| {
        check_family(&seeded_family(seed)?, seed.wrapping_add(1))
    });
    for r in per_seed {
        rows.extend(r?);
    }

    let mut table = Table::new(&["check", "instance", "lhs", "rhs", "abs_diff", "tolerance", "pass"]);
    let mut all_pass = true;
    for r in &rows {
        all_pass &= r.pass();
        table.push(vec![
            r.check.clone(),
            r.instance.clone(),
            real(r.lhs),
            real(r.rhs),
            real(r.diff()),
            real(r.tolerance),
            r.pass().to_string(),
        ]);
    }
    let mut manifest = RunManifest::new("verify", None, config);
    table.write(&args.out)?;
    manifest.output(&args.out);
    if let Some(report) = report {
        let path = companion(&args.out, ".report.csv");
        report.write(&path)?;
        manifest.output(&path);
    }
    manifest.write(&args.out)?;
    Ok(if all_pass { Outcome::Success } else { Outcome::Failed })
}

// -------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateArgs {
    pub spec: PathBuf,
    pub negatives: Vec<usize>,
    pub mc_reps: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub parallel: usize,
}

/// Finite-N InfoNCE estimates against the exact objective, one row per N.
/// Every N uses the same seed, so rows do not depend on the schedule.
pub fn estimate(args: &EstimateArgs) -> Result<Outcome, LabError> {
    if args.negatives.is_empty() {
        return Err(LabError::Usage("--negatives must list at least one N".into()));
    }
    let (spec, loaded) = load(&args.spec)?;
    let inst = &loaded.instance;
    if !matches!(inst.prior(), PriorSpec::InfoNce(_)) {
        return Err(LabError::Spec("estimate needs a spec with an infonce prior".into()));
    }
    let exact = infonce_exact(inst)?;
    let results: Vec<Result<FiniteNEstimate, _>> = run_parallel(&args.negatives, args.parallel, |&n| {
        infonce_finite_n(inst, n, args.mc_reps, args.seed)
    });

    let mut table = Table::new(&["n_negatives", "estimate", "std_error", "exact", "gap"]);
    let mut points = Vec::new();
    for r in results {
        let e = r?;
        let gap = (e.estimate - exact).abs();
        points.push((e.n_negatives as f64, gap));
        table.push(vec![
            e.n_negatives.to_string(),
            real(e.estimate),
            real(e.std_error),
            real(exact),
            real(gap),
        ]);
    }
    let config = json!({
        "spec_path": args.spec.display().to_string(),
        "spec": spec_json(&spec),
        "negatives": args.negatives,
        "mc_reps": args.mc_reps,
        "parallel": args.parallel,
    });
    let mut manifest = RunManifest::new("estimate", Some(args.seed), config);
    table.write(&args.out)?;
    manifest.output(&args.out);
    let plot = companion(&args.out, ".plot.dat");
    write_plot(&plot, "n_negatives", "gap", &points)?;
    manifest.output(&plot);
    manifest.write(&args.out)?;
    Ok(Outcome::Success)
}

// ----------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq)]
pub enum TrainSource {
    Spec(PathBuf),
    SharedFactor {
        s_count: usize,
        noise_count: usize,
        noise_level: f64,
        latent_count: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArgs {
    pub source: TrainSource,
    pub objective: ObjectiveChoice,
    pub seed: u64,
    pub step_size: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub out: PathBuf,
}

/// Gradient ascent on one objective. Writes the trace CSV and the trained
/// model as a spec (`<out>.model.json`). Shared-factor data adds the
/// `I(z; s)` column.
pub fn train(args: &TrainArgs) -> Result<Outcome, LabError> {
    let config = TrainConfig {
        objective: args.objective.objective(),
        step_size: args.step_size,
        max_iters: args.max_iters,
        tolerance: args.tolerance,
        seed: args.seed,
    };
    config.validate()?;
    let (spec, loaded, spec_path) = match &args.source {
        TrainSource::Spec(path) => {
            let (spec, loaded) = load(path)?;
            (spec, loaded, Some(path.display().to_string()))
        }
        TrainSource::SharedFactor {
            s_count,
            noise_count,
            noise_level,
            latent_count,
        } => {
            let spec = ModelSpec {
                description: None,
                data: DataSpec::SharedFactor {
                    s_count: *s_count,
                    noise_count: *noise_count,
                    noise_level: *noise_level,
                    latent_count: *latent_count,
                    seed: args.seed,
                },
                latents: None,
                encoder_c: None,
                encoder_x: None,
                prior: PriorFile::Mi {},
            };
            let loaded = spec.build()?;
            (spec, loaded, None)
        }
    };
    let inst = args.objective.prepare(&loaded.instance, args.seed)?;
    let factor = loaded.factor.as_ref();
    let result = train_observed(&inst, &config, &mut |m| match factor {
        Some(f) => f.factor_information(m).map(Some),
        None => Ok(None),
    });
    let trace = match result {
        Ok(trace) => trace,
        Err(ssvae_core::Error::NonConvergence { trace: Some(trace), .. }) => *trace,
        Err(e) => return Err(e.into()),
    };

    let mut table = Table::new(&["iteration", "objective", "mi_z_s", "gradient_norm", "step_size"]);
    for r in &trace.rows {
        table.push(vec![
            r.iteration.to_string(),
            real(r.objective),
            r.mi_z_s.map(real).unwrap_or_default(),
            real(r.gradient_norm),
            real(r.step_size),
        ]);
    }
    let trained = trace.final_params.apply(&inst)?;
    let model_path = companion(&args.out, ".model.json");
    let run_config = json!({
        "spec_path": spec_path,
        "spec": spec_json(&spec),
        "objective": args.objective.name(),
        "step_size": args.step_size,
        "max_iters": args.max_iters,
        "tolerance": args.tolerance,
    });
    let mut manifest = RunManifest::new("train", Some(args.seed), run_config);
    table.write(&args.out)?;
    manifest.output(&args.out);
    write_file(&model_path, ModelSpec::from_instance(&trained).to_json().as_bytes())?;
    manifest.output(&model_path);
    manifest.write(&args.out)?;
    Ok(match trace.status {
        TrainStatus::Converged => Outcome::Success,
        TrainStatus::IterationCap => Outcome::IterationCap,
        TrainStatus::Stalled => Outcome::Failed,
    })
}

// ----------------------------------------------------------------- ratio

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioTarget {
    /// Prior marginal `P(z)` against the induced `Q(z)`.
    Marginal,
    /// Induced joint `Q(z, z')` against `Q(z) Q(z')`.
    Joint,
}

impl RatioTarget {
    pub fn name(self) -> &'static str {
        match self {
            RatioTarget::Marginal => "marginal",
            RatioTarget::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioArgs {
    pub spec: PathBuf,
    pub target: RatioTarget,
    pub out: PathBuf,
}

/// Fits the tabular classifier and compares its logits with the exact
/// log-ratios. Writes per-cell rows and a one-row summary
/// (`<out>.summary.csv`).
pub fn ratio(args: &RatioArgs) -> Result<Outcome, LabError> {
    let (spec, loaded) = load(&args.spec)?;
    let inst = &loaded.instance;
    let joint = inst.induced_latent_joint()?;
    let exact_mi = mutual_information(&joint);
    let (labels, p, q): (Vec<String>, Vec<f64>, Vec<f64>) = match args.target {
        RatioTarget::Joint => {
            let product = product_of_marginals(&joint);
            let labels = (0..joint.probs().len()).map(|i| joint.cell_label(i)).collect();
            (labels, joint.probs().to_vec(), product.probs().to_vec())
        }
        RatioTarget::Marginal => {
            let qz = inst.induced_latent_marginal(Side::C)?;
            let pz = inst.resolve_prior()?.marginalize(Axis::Row);
            (qz.space().labels().to_vec(), pz.probs().to_vec(), qz.probs().to_vec())
        }
    };
    let fit_config = RatioFitConfig::default();
    let fit = fit_ratio_classifier_slices(&p, &q, &fit_config)?;
    let exact = exact_log_ratio(&p, &q, fit_config.mask_threshold);

    let mut cells = Table::new(&["cell", "p", "q", "exact_log_ratio", "logit", "abs_diff"]);
    let mut max_diff: f64 = 0.0;
    let mut masked = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let (e, a) = (exact[i], fit.classifier.logit(i));
        let diff = match (e, a) {
            (Some(e), Some(a)) => Some((a - e).abs()),
            _ => None,
        };
        if let Some(d) = diff {
            max_diff = max_diff.max(d);
        } else {
            masked.push(label.clone());
        }
        let opt = |v: Option<f64>| v.map(real).unwrap_or_default();
        cells.push(vec![label.clone(), real(p[i]), real(q[i]), opt(e), opt(a), opt(diff)]);
    }
    let estimated_mi = match args.target {
        RatioTarget::Joint => real(estimated_mutual_information(&fit.classifier, &joint)?),
        RatioTarget::Marginal => String::new(),
    };
    let mut summary = Table::new(&[
        "target",
        "active_cells",
        "masked_cells",
        "max_abs_diff",
        "estimated_mi",
        "exact_mi",
        "iterations",
    ]);
    summary.push(vec![
        args.target.name().to_string(),
        fit.classifier.active_count().to_string(),
        masked.join(";"),
        real(max_diff),
        estimated_mi,
        real(exact_mi),
        fit.iterations.to_string(),
    ]);

    let config = json!({
        "spec_path": args.spec.display().to_string(),
        "spec": spec_json(&spec),
        "target": args.target.name(),
        "tolerance": fit_config.tolerance,
        "max_iters": fit_config.max_iters,
        "mask_threshold": fit_config.mask_threshold,
    });
    let mut manifest = RunManifest::new("ratio", None, config);
    cells.write(&args.out)?;
    manifest.output(&args.out);
    let summary_path = companion(&args.out, ".summary.csv");
    summary.write(&summary_path)?;
    manifest.output(&summary_path);
    manifest.write(&args.out)?;
    Ok(Outcome::Success)
}
