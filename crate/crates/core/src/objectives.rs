//! Exact SSVAE objectives.
//!
//! All expectations over data and latents are finite sums. The only sampled
//! quantity is the finite-N InfoNCE estimator, which is sample-based by
//! definition.
//!
//! For a data pair `(c, x')` the structured ELBO is
//!
//! ```text
//! L(c, x') = Σ_{k,l} Q(k|c) Q(l|x') ln[ P(k,l) / (Q(k) Q'(l)) ] + const(c, x')
//! const(c, x') = ln Ptrue(c) + ln Ptrue(x')
//! ```
//!
//! and the model evidence is the same expression with the logarithm moved
//! outside the sum. The constant is kept explicit so that every relation that
//! holds "up to a constant" can be checked as an equality.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::math::{ln, ln_or_neg_inf, log_sum_exp, sqrt};
use crate::model::{infonce_log_normalizers, Coupling, ModelInstance, PriorSpec, Side};
use crate::prob::{kl_divergence, mutual_information, ConditionalTable, FiniteDistribution};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Unstructured ELBO `L(x) = ln Ptrue(x) + Σ_k Q(k|x) ln[P(k) / Q(k)]`, where
/// `Q(z)` is `ptrue` pushed through `encoder`.
pub fn unstructured_elbo(
    ptrue: &FiniteDistribution,
    encoder: &ConditionalTable,
    prior_z: &FiniteDistribution,
    x: usize,
) -> Result<f64> {
    if prior_z.space() != encoder.target() {
        return Err(Error::SpaceMismatch("prior space differs from the encoder's latent space"));
    }
    let qz = encoder.push_forward(ptrue)?;
    let px = ptrue.prob(x);
    if px == 0.0 {
        return Err(Error::ZeroMarginal(ptrue.space().label(x).to_string()));
    }
    let mut expectation = 0.0;
    for (k, &w) in encoder.row(x)?.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (p, q) = (prior_z.prob(k), qz.prob(k));
        if q == 0.0 {
            return Err(Error::UnreachedLatent(qz.space().label(k).to_string()));
        }
        if p == 0.0 {
            return Err(Error::AbsoluteContinuity(prior_z.space().label(k).to_string()));
        }
        expectation += w * (ln(p) - ln(q));
    }
    Ok(ln(px) + expectation)
}

/// Expected unstructured ELBO split as `value = const_part − kl_part`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnstructuredExpectation {
    pub value: f64,
    /// `KL(Q(z) ‖ P(z))`.
    pub kl_part: f64,
    /// `Σ_x Ptrue(x) ln Ptrue(x)`.
    pub const_part: f64,
}

pub fn expected_unstructured_elbo(
    ptrue: &FiniteDistribution,
    encoder: &ConditionalTable,
    prior_z: &FiniteDistribution,
) -> Result<UnstructuredExpectation> {
    let qz = encoder.push_forward(ptrue)?;
    let kl_part = kl_divergence(&qz, prior_z)?;
    let const_part: f64 = ptrue
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * ln(p))
        .sum();
    Ok(UnstructuredExpectation {
        value: const_part - kl_part,
        kl_part,
        const_part,
    })
}

/// Cached per-instance tables shared by the pointwise objectives.
struct StructuredContext<'a> {
    inst: &'a ModelInstance,
    enc_c: ConditionalTable,
    enc_x: ConditionalTable,
    log_qz: Vec<f64>,
    log_qzp: Vec<f64>,
    log_prior: Vec<f64>,
    log_pc: Vec<f64>,
    log_px: Vec<f64>,
}

impl<'a> StructuredContext<'a> {
    fn new(inst: &'a ModelInstance) -> Result<Self> {
        let logs = |d: FiniteDistribution| d.probs().iter().map(|&p| ln_or_neg_inf(p)).collect();
        Ok(Self {
            inst,
            enc_c: inst.encoder(Side::C).conditional(),
            enc_x: inst.encoder(Side::X).conditional(),
            log_qz: logs(inst.induced_latent_marginal(Side::C)?),
            log_qzp: logs(inst.induced_latent_marginal(Side::X)?),
            log_prior: inst.log_prior_table()?,
            log_pc: logs(inst.data_marginal(Side::C)),
            log_px: logs(inst.data_marginal(Side::X)),
        })
    }

    fn const_term(&self, c: usize, x: usize) -> Result<f64> {
        let data = self.inst.data();
        if self.log_pc[c] == f64::NEG_INFINITY {
            return Err(Error::ZeroMarginal(data.rows().label(c).to_string()));
        }
        if self.log_px[x] == f64::NEG_INFINITY {
            return Err(Error::ZeroMarginal(data.cols().label(x).to_string()));
        }
        Ok(self.log_pc[c] + self.log_px[x])
    }

    /// Visits `(posterior weight, ln[P(k,l) / (Q(k) Q'(l))])` for every latent
    /// cell with positive posterior weight.
    fn for_each_ratio(&self, c: usize, x: usize, mut visit: impl FnMut(f64, f64)) -> Result<()> {
        let nzp = self.log_qzp.len();
        for (k, &a) in self.enc_c.row(c)?.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            if self.log_qz[k] == f64::NEG_INFINITY {
                return Err(Error::UnreachedLatent(self.enc_c.target().label(k).to_string()));
            }
            for (l, &b) in self.enc_x.row(x)?.iter().enumerate() {
                let w = a * b;
                if w == 0.0 {
                    continue;
                }
                if self.log_qzp[l] == f64::NEG_INFINITY {
                    return Err(Error::UnreachedLatent(self.enc_x.target().label(l).to_string()));
                }
                let lp = self.log_prior[k * nzp + l];
                if lp == f64::NEG_INFINITY {
                    return Err(Error::AbsoluteContinuity(alloc::format!(
                        "({}, {})",
                        self.enc_c.target().label(k),
                        self.enc_x.target().label(l)
                    )));
                }
                visit(w, lp - self.log_qz[k] - self.log_qzp[l]);
            }
        }
        Ok(())
    }

    fn elbo(&self, c: usize, x: usize) -> Result<(f64, f64)> {
        let constant = self.const_term(c, x)?;
        let mut expectation = 0.0;
        self.for_each_ratio(c, x, |w, r| expectation += w * r)?;
        Ok((expectation + constant, constant))
    }

    fn evidence(&self, c: usize, x: usize) -> Result<f64> {
        let constant = self.const_term(c, x)?;
        let mut terms = Vec::new();
        self.for_each_ratio(c, x, |w, r| terms.push(ln(w) + r))?;
        Ok(log_sum_exp(&terms) + constant)
    }
}

/// Pointwise structured ELBO; returns `(elbo, const_term)`.
pub fn structured_elbo(inst: &ModelInstance, c: usize, x: usize) -> Result<(f64, f64)> {
    StructuredContext::new(inst)?.elbo(c, x)
}

/// Exact log model evidence `ln P(c, x')`.
pub fn model_evidence(inst: &ModelInstance, c: usize, x: usize) -> Result<f64> {
    StructuredContext::new(inst)?.evidence(c, x)
}

/// `E_Ptrue(c,x')[L(c, x')]`, summed over pairs with positive data mass.
pub fn expected_structured_elbo(inst: &ModelInstance) -> Result<f64> {
    let ctx = StructuredContext::new(inst)?;
    let data = inst.data();
    let mut total = 0.0;
    for c in 0..data.n_rows() {
        for x in 0..data.n_cols() {
            let d = data.get(c, x);
            if d > 0.0 {
                total += d * ctx.elbo(c, x)?.0;
            }
        }
    }
    Ok(total)
}

/// `E_Ptrue(c,x')[ln Ptrue(c) + ln Ptrue(x')]`; depends on the data only.
pub fn expected_const(inst: &ModelInstance) -> f64 {
    let data = inst.data();
    let pc = inst.data_marginal(Side::C);
    let px = inst.data_marginal(Side::X);
    let mut total = 0.0;
    for c in 0..data.n_rows() {
        for x in 0..data.n_cols() {
            let d = data.get(c, x);
            if d > 0.0 {
                total += d * (ln(pc.prob(c)) + ln(px.prob(x)));
            }
        }
    }
    total
}

/// Expected ELBO written as mutual information minus prior mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// `I(z; z')` under the induced joint `Q(z, z')`.
    pub mi_term: f64,
    /// `KL(Q(z, z') ‖ P(z, z'))`.
    pub kl_to_prior: f64,
    pub const_term: f64,
    /// Expected ELBO computed pair by pair, independently of the three terms.
    pub total: f64,
}

impl Decomposition {
    /// `mi_term − kl_to_prior + const_term`, which should equal `total`.
    pub fn recombined(&self) -> f64 {
        self.mi_term - self.kl_to_prior + self.const_term
    }
}

pub fn elbo_decomposition(inst: &ModelInstance) -> Result<Decomposition> {
    let q = inst.induced_latent_joint()?;
    let prior = inst.resolve_prior()?;
    Ok(Decomposition {
        mi_term: mutual_information(&q),
        kl_to_prior: q.kl_divergence(&prior)?,
        const_term: expected_const(inst),
        total: expected_structured_elbo(inst)?,
    })
}

fn infonce_coupling(inst: &ModelInstance) -> Result<&Coupling> {
    match inst.prior() {
        PriorSpec::InfoNce(c) => Ok(c),
        _ => Err(Error::PriorMismatch {
            expected: "an InfoNCE prior",
        }),
    }
}

fn check_coupling_shape(inst: &ModelInstance, coupling: &Coupling) -> Result<()> {
    if coupling.shape() != inst.latent_shape() {
        return Err(Error::SpaceMismatch("coupling shape differs from the latent grid"));
    }
    Ok(())
}

/// `ln f(k, l) − ln E_Q(z')[f(k, z')]`, the InfoNCE prior's log density ratio
/// against `Q(z) Q(z')`.
pub fn infonce_log_ratio(inst: &ModelInstance, k: usize, l: usize) -> Result<f64> {
    let coupling = infonce_coupling(inst)?;
    let qzp = inst.induced_latent_marginal(Side::X)?;
    let terms: Vec<f64> = (0..qzp.len())
        .map(|j| coupling.log_value(k, j) + ln_or_neg_inf(qzp.prob(j)))
        .collect();
    Ok(coupling.log_value(k, l) - log_sum_exp(&terms))
}

/// `L_InfoNCE = E_Q(z,z')[ln f] − E_Q(z)[ln E_Q(z')[f]]` by exact summation,
/// using the instance's InfoNCE prior coupling.
pub fn infonce_exact(inst: &ModelInstance) -> Result<f64> {
    infonce_exact_with(inst, infonce_coupling(inst)?)
}

/// [`infonce_exact`] for an arbitrary coupling on the instance's latent grid.
pub fn infonce_exact_with(inst: &ModelInstance, coupling: &Coupling) -> Result<f64> {
    check_coupling_shape(inst, coupling)?;
    let q = inst.induced_latent_joint()?;
    let qz = inst.induced_latent_marginal(Side::C)?;
    let qzp = inst.induced_latent_marginal(Side::X)?;
    let log_f = coupling.log_table();
    let log_z = infonce_log_normalizers(&log_f, qzp.probs());
    let positive: f64 = q
        .probs()
        .iter()
        .zip(&log_f)
        .filter(|(&p, _)| p > 0.0)
        .map(|(p, s)| p * s)
        .sum();
    let normalizer: f64 = qz
        .probs()
        .iter()
        .zip(&log_z)
        .filter(|(&p, _)| p > 0.0)
        .map(|(p, lz)| p * lz)
        .sum();
    Ok(positive - normalizer)
}

/// Monte-Carlo estimate of the finite-N InfoNCE bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteNEstimate {
    pub estimate: f64,
    /// Sample standard deviation over `sqrt(n_monte_carlo)`; zero for a
    /// single draw.
    pub std_error: f64,
    pub n_negatives: usize,
    pub n_monte_carlo: usize,
}

/// Inverse-CDF lookup of `u ∈ [0, 1)` in a table of probabilities. Falls
/// back to the last cell with positive mass when rounding leaves `u` past
/// the final cumulative value.
fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

/// Finite-N InfoNCE estimator with the instance's InfoNCE prior coupling.
pub fn infonce_finite_n(
    inst: &ModelInstance,
    n_negatives: usize,
    n_monte_carlo: usize,
    seed: u64,
) -> Result<FiniteNEstimate> {
    infonce_finite_n_with(inst, infonce_coupling(inst)?, n_negatives, n_monte_carlo, seed)
}

/// Averages, over `n_monte_carlo` draws,
///
/// ```text
/// ln[ f(z, z') / (f(z, z') + Σ_{j=1..N} f(z, z'_j)) ] + ln N
/// ```
///
/// with `(z, z') ~ Q(z, z')` and `z'_j ~ Q(z')` i.i.d. Each draw consumes one
/// uniform from `SplitMix64::new(seed)` for the positive pair (inverse CDF
/// over the row-major joint), then `N` uniforms for the negatives (inverse
/// CDF over `Q(z')`).
pub fn infonce_finite_n_with(
    inst: &ModelInstance,
    coupling: &Coupling,
    n_negatives: usize,
    n_monte_carlo: usize,
    seed: u64,
) -> Result<FiniteNEstimate> {
    if n_negatives == 0 {
        return Err(Error::InvalidArgument("n_negatives must be at least 1".into()));
    }
    if n_monte_carlo == 0 {
        return Err(Error::InvalidArgument("n_monte_carlo must be at least 1".into()));
    }
    check_coupling_shape(inst, coupling)?;
    let q = inst.induced_latent_joint()?;
    let qzp = inst.induced_latent_marginal(Side::X)?;
    let nzp = qzp.len();
    let log_f = coupling.log_table();
    let log_n = ln(n_negatives as f64);

    let mut rng = SplitMix64::new(seed);
    let mut scores = Vec::with_capacity(n_negatives + 1);
    let mut values = Vec::with_capacity(n_monte_carlo);
    for _ in 0..n_monte_carlo {
        let cell = inverse_cdf(q.probs(), rng.next_f64());
        let (k, l) = (cell / nzp, cell % nzp);
        let row = &log_f[k * nzp..(k + 1) * nzp];
        scores.clear();
        scores.push(row[l]);
        for _ in 0..n_negatives {
            scores.push(row[inverse_cdf(qzp.probs(), rng.next_f64())]);
        }
        values.push(row[l] - log_sum_exp(&scores) + log_n);
    }

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        sqrt(var / n)
    } else {
        0.0
    };
    Ok(FiniteNEstimate {
        estimate: mean,
        std_error,
        n_negatives,
        n_monte_carlo,
    })
}

/// Objective terms for one data pair with positive mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairReport {
    pub c: usize,
    pub x: usize,
    pub weight: f64,
    pub elbo: f64,
    pub const_term: f64,
    pub evidence: f64,
    /// `evidence − elbo`, non-negative by Jensen's inequality.
    pub gap: f64,
}

/// Every computed quantity for one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub prior: &'static str,
    pub pairs: Vec<PairReport>,
    pub expected_elbo: f64,
    pub expected_const: f64,
    pub mi_term: f64,
    pub kl_to_prior: f64,
    /// Present when the prior is an InfoNCE prior.
    pub infonce_exact: Option<f64>,
}

pub fn objective_report(inst: &ModelInstance) -> Result<ObjectiveReport> {
    let ctx = StructuredContext::new(inst)?;
    let data = inst.data();
    let mut pairs = Vec::new();
    let mut expected_elbo = 0.0;
    for c in 0..data.n_rows() {
        for x in 0..data.n_cols() {
            let weight = data.get(c, x);
            if weight == 0.0 {
                continue;
            }
            let (elbo, const_term) = ctx.elbo(c, x)?;
            let evidence = ctx.evidence(c, x)?;
            expected_elbo += weight * elbo;
            pairs.push(PairReport {
                c,
                x,
                weight,
                elbo,
                const_term,
                evidence,
                gap: evidence - elbo,
            });
        }
    }
    let decomposition = elbo_decomposition(inst)?;
    let infonce = match inst.prior() {
        PriorSpec::InfoNce(_) => Some(infonce_exact(inst)?),
        _ => None,
    };
    Ok(ObjectiveReport {
        prior: inst.prior().name(),
        pairs,
        expected_elbo,
        expected_const: decomposition.const_term,
        mi_term: decomposition.mi_term,
        kl_to_prior: decomposition.kl_to_prior,
        infonce_exact: infonce,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_skips_zero_cells() {
        let p = [0.0, 0.25, 0.0, 0.75];
        assert_eq!(inverse_cdf(&p, 0.0), 1);
        assert_eq!(inverse_cdf(&p, 0.2499), 1);
        assert_eq!(inverse_cdf(&p, 0.25), 3);
        assert_eq!(inverse_cdf(&p, 0.9999999999), 3);
        assert_eq!(inverse_cdf(&[0.5, 0.5 - 1e-16], 0.99999999999999999), 1);
    }
}
