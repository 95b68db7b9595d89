//! Exact-gradient training of encoders, couplings and priors.
//!
//! Trainable parameters are flattened into a [`ParameterVector`] in this
//! order, skipping absent blocks:
//!
//! 1. `encoder_c` logits, row-major `|c| × |z|` (softmax encoders only);
//! 2. `encoder_x` logits, row-major `|x'| × |z'|` (softmax encoders only);
//! 3. bilinear coupling of an InfoNCE prior: `z` embeddings (`|z| × d`),
//!    `z'` embeddings (`|z'| × d'`), then `W` (`d × d'`);
//! 4. explicit-table prior logits, row-major `|z| × |z'|`.
//!
//! Deterministic and fixed encoders, table couplings and the MI prior have
//! no trainable parameters.
//!
//! Gradients differentiate the exact finite sums, including the dependence
//! of `Q(z)`, `Q(z')`, `Q(z, z')`, the InfoNCE normalizer and the MI prior on
//! the encoder logits. [`finite_difference_gradient`] evaluates the objective
//! only, so it serves as an independent check.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::extended::Dd;
use crate::math::{exp, ln, max_abs, softmax};
use crate::model::{
    infonce_log_normalizers, BilinearCoupling, Coupling, Encoder, EncoderKind, ModelInstance, PriorSpec,
    SharedFactorConfig, SharedFactorModel, Side,
};
use crate::objectives::{expected_structured_elbo, expected_unstructured_elbo, infonce_exact};
use crate::prob::Axis;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Scalar objective maximized by [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `E_Ptrue[L(c, x')]` under the instance's prior, constant included.
    StructuredElbo,
    /// Exact InfoNCE objective of the instance's InfoNCE prior coupling.
    InfoNceExact,
    /// `E_Ptrue(c)[L(c)]` for the `c` view alone, with `P(z)` the `z`-marginal
    /// of the resolved prior.
    UnstructuredElbo,
}

/// Objective plus the prior it runs under, as selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveChoice {
    ElboMi,
    ElboInfoNce,
    ElboTable,
    InfoNceExact,
    Unstructured,
}

impl ObjectiveChoice {
    pub const ALL: [ObjectiveChoice; 5] = [
        ObjectiveChoice::ElboMi,
        ObjectiveChoice::ElboInfoNce,
        ObjectiveChoice::ElboTable,
        ObjectiveChoice::InfoNceExact,
        ObjectiveChoice::Unstructured,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveChoice::ElboMi => "elbo-mi",
            ObjectiveChoice::ElboInfoNce => "elbo-infonce",
            ObjectiveChoice::ElboTable => "elbo-table",
            ObjectiveChoice::InfoNceExact => "infonce-exact",
            ObjectiveChoice::Unstructured => "unstructured",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn objective(self) -> Objective {
        match self {
            ObjectiveChoice::ElboMi | ObjectiveChoice::ElboInfoNce | ObjectiveChoice::ElboTable => {
                Objective::StructuredElbo
            }
            ObjectiveChoice::InfoNceExact => Objective::InfoNceExact,
            ObjectiveChoice::Unstructured => Objective::UnstructuredElbo,
        }
    }

    /// Puts the matching prior on `inst`.
    ///
    /// An existing prior of the right kind is kept. Otherwise the InfoNCE
    /// choices attach a bilinear coupling with embedding sizes `|z|` and
    /// `|z'|`, and the table choices attach explicit logits; new parameters
    /// are drawn from `SplitMix64::new(seed)` uniformly in `[-0.1, 0.1)`
    /// (`z` embeddings, `z'` embeddings, `W`, or the prior logits).
    pub fn prepare(self, inst: &ModelInstance, seed: u64) -> Result<ModelInstance> {
        let (nz, nzp) = inst.latent_shape();
        let mut rng = SplitMix64::new(seed);
        match (self, inst.prior()) {
            (ObjectiveChoice::ElboMi, _) => inst.with_prior(PriorSpec::Mi),
            (ObjectiveChoice::ElboInfoNce | ObjectiveChoice::InfoNceExact, PriorSpec::InfoNce(_)) => Ok(inst.clone()),
            (ObjectiveChoice::ElboInfoNce | ObjectiveChoice::InfoNceExact, _) => {
                let u = (0..nz * nz).map(|_| rng.symmetric(0.1)).collect();
                let v = (0..nzp * nzp).map(|_| rng.symmetric(0.1)).collect();
                let w = (0..nz * nzp).map(|_| rng.symmetric(0.1)).collect();
                let coupling = BilinearCoupling::new(nz, nz, u, nzp, nzp, v, w)?;
                inst.with_prior(PriorSpec::InfoNce(Coupling::Bilinear(coupling)))
            }
            (ObjectiveChoice::ElboTable | ObjectiveChoice::Unstructured, PriorSpec::ExplicitTable { .. }) => {
                Ok(inst.clone())
            }
            (ObjectiveChoice::ElboTable | ObjectiveChoice::Unstructured, _) => {
                let logits = (0..nz * nzp).map(|_| rng.symmetric(0.1)).collect();
                inst.with_prior(PriorSpec::ExplicitTable { logits })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BilinearShape {
    n_z: usize,
    dim_z: usize,
    n_z_prime: usize,
    dim_z_prime: usize,
}

/// Which parameter blocks are present and their shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    encoder_c: Option<(usize, usize)>,
    encoder_x: Option<(usize, usize)>,
    coupling: Option<BilinearShape>,
    prior: Option<(usize, usize)>,
}

impl ParameterLayout {
    pub fn of(inst: &ModelInstance) -> Self {
        let enc = |side| {
            let e: &Encoder = inst.encoder(side);
            e.is_trainable().then(|| (e.given().len(), e.target().len()))
        };
        let coupling = match inst.prior() {
            PriorSpec::InfoNce(Coupling::Bilinear(b)) => {
                let (n_z, n_z_prime) = inst.latent_shape();
                Some(BilinearShape {
                    n_z,
                    dim_z: b.dim_z(),
                    n_z_prime,
                    dim_z_prime: b.dim_z_prime(),
                })
            }
            _ => None,
        };
        let prior = match inst.prior() {
            PriorSpec::ExplicitTable { .. } => Some(inst.latent_shape()),
            _ => None,
        };
        Self {
            encoder_c: enc(Side::C),
            encoder_x: enc(Side::X),
            coupling,
            prior,
        }
    }

    pub fn len(&self) -> usize {
        let block = |b: Option<(usize, usize)>| b.map_or(0, |(r, c)| r * c);
        block(self.encoder_c)
            + block(self.encoder_x)
            + self.coupling.map_or(0, |s| {
                s.n_z * s.dim_z + s.n_z_prime * s.dim_z_prime + s.dim_z * s.dim_z_prime
            })
            + block(self.prior)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Human-readable name of parameter `index`, e.g. `encoder_c[2,1]`.
    pub fn describe(&self, mut index: usize) -> String {
        let mut blocks: Vec<(&str, usize, usize)> = Vec::new();
        if let Some((r, c)) = self.encoder_c {
            blocks.push(("encoder_c", r, c));
        }
        if let Some((r, c)) = self.encoder_x {
            blocks.push(("encoder_x", r, c));
        }
        if let Some(s) = self.coupling {
            blocks.push(("z_embed", s.n_z, s.dim_z));
            blocks.push(("z_prime_embed", s.n_z_prime, s.dim_z_prime));
            blocks.push(("weight", s.dim_z, s.dim_z_prime));
        }
        if let Some((r, c)) = self.prior {
            blocks.push(("prior", r, c));
        }
        for (name, r, c) in blocks {
            if index < r * c {
                return alloc::format!("{name}[{},{}]", index / c, index % c);
            }
            index -= r * c;
        }
        String::from("out-of-range")
    }
}

/// Flattened trainable parameters with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    layout: ParameterLayout,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn from_instance(inst: &ModelInstance) -> Self {
        let layout = ParameterLayout::of(inst);
        let mut values = Vec::with_capacity(layout.len());
        for side in [Side::C, Side::X] {
            if let Some(logits) = inst.encoder(side).logits() {
                values.extend_from_slice(logits);
            }
        }
        match inst.prior() {
            PriorSpec::InfoNce(Coupling::Bilinear(b)) => {
                values.extend_from_slice(b.z_embed());
                values.extend_from_slice(b.z_prime_embed());
                values.extend_from_slice(b.weight());
            }
            PriorSpec::ExplicitTable { logits } => values.extend_from_slice(logits),
            _ => {}
        }
        Self { layout, values }
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: self.values.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            layout: self.layout,
            values,
        })
    }

    /// Writes these parameters into a copy of `inst`, which must have the
    /// same layout.
    pub fn apply(&self, inst: &ModelInstance) -> Result<ModelInstance> {
        if ParameterLayout::of(inst) != self.layout {
            return Err(Error::InvalidArgument("parameter layout does not match the instance".into()));
        }
        let mut rest = self.values.as_slice();
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let mut out = inst.clone();
        for (side, block) in [(Side::C, self.layout.encoder_c), (Side::X, self.layout.encoder_x)] {
            if let Some((r, c)) = block {
                let enc = inst.encoder(side);
                let new = Encoder::softmax(enc.given().clone(), enc.target().clone(), take(r * c))?;
                out = out.with_encoder(side, new)?;
            }
        }
        if let Some(s) = self.layout.coupling {
            let u = take(s.n_z * s.dim_z);
            let v = take(s.n_z_prime * s.dim_z_prime);
            let w = take(s.dim_z * s.dim_z_prime);
            let coupling = BilinearCoupling::new(s.n_z, s.dim_z, u, s.n_z_prime, s.dim_z_prime, v, w)?;
            out = out.with_prior(PriorSpec::InfoNce(Coupling::Bilinear(coupling)))?;
        }
        if let Some((r, c)) = self.layout.prior {
            out = out.with_prior(PriorSpec::ExplicitTable { logits: take(r * c) })?;
        }
        Ok(out)
    }
}

/// Redraws every trainable parameter uniformly in `[-0.1, 0.1)` from
/// `SplitMix64::new(seed)`, in layout order.
pub fn initialize(inst: &ModelInstance, seed: u64) -> Result<ModelInstance> {
    let params = ParameterVector::from_instance(inst);
    let mut rng = SplitMix64::new(seed);
    let values = (0..params.len()).map(|_| rng.symmetric(0.1)).collect();
    params.with_values(values)?.apply(inst)
}

/// Value of `objective` at `inst`.
pub fn objective_value(inst: &ModelInstance, objective: Objective) -> Result<f64> {
    match objective {
        Objective::StructuredElbo => expected_structured_elbo(inst),
        Objective::InfoNceExact => infonce_exact(inst),
        Objective::UnstructuredElbo => {
            let prior_z = inst.resolve_prior()?.marginalize(Axis::Row);
            let enc = inst.encoder(Side::C).conditional();
            Ok(expected_unstructured_elbo(&inst.data_marginal(Side::C), &enc, &prior_z)?.value)
        }
    }
}

fn softmax_extended(logits: &[f64]) -> Vec<Dd> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<Dd> = logits.iter().map(|&l| (Dd::new(l) - Dd::new(m)).exp()).collect();
    let total: Dd = e.iter().copied().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn encoder_extended(enc: &Encoder) -> Vec<Dd> {
    match enc.kind() {
        EncoderKind::Softmax { logits } => logits
            .chunks(enc.target().len())
            .flat_map(softmax_extended)
            .collect(),
        _ => enc.conditional().probs().iter().map(|&p| Dd::new(p)).collect(),
    }
}

fn coupling_scores_extended(coupling: &Coupling) -> Vec<Dd> {
    match coupling {
        Coupling::Bilinear(b) => {
            let (d, dp) = (b.dim_z(), b.dim_z_prime());
            let (nz, nzp) = coupling.shape();
            let (u, v, w) = (b.z_embed(), b.z_prime_embed(), b.weight());
            let mut out = Vec::with_capacity(nz * nzp);
            for k in 0..nz {
                for l in 0..nzp {
                    let mut s = Dd::ZERO;
                    for i in 0..d {
                        for j in 0..dp {
                            s = s + Dd::new(u[k * d + i]) * Dd::new(w[i * dp + j]) * Dd::new(v[l * dp + j]);
                        }
                    }
                    out.push(s);
                }
            }
            out
        }
        Coupling::Table(t) => t.values().iter().map(|&f| Dd::new(f).ln()).collect(),
    }
}

/// `objective` minus its data-only constant, recomputed from the raw
/// parameters in double-double arithmetic. Used by the finite-difference
/// oracle, whose differences would otherwise be dominated by rounding.
fn variable_part_extended(inst: &ModelInstance, objective: Objective) -> Dd {
    let (nz, nzp) = inst.latent_shape();
    let data = inst.data();
    let a = encoder_extended(inst.encoder(Side::C));
    let b = encoder_extended(inst.encoder(Side::X));
    let mut qj = alloc::vec![Dd::ZERO; nz * nzp];
    for c in 0..data.n_rows() {
        for x in 0..data.n_cols() {
            let d = Dd::new(data.get(c, x));
            if d.hi == 0.0 {
                continue;
            }
            for k in 0..nz {
                let dk = d * a[c * nz + k];
                for l in 0..nzp {
                    qj[k * nzp + l] = qj[k * nzp + l] + dk * b[x * nzp + l];
                }
            }
        }
    }
    let qz: Vec<Dd> = (0..nz).map(|k| (0..nzp).map(|l| qj[k * nzp + l]).sum()).collect();
    let qzp: Vec<Dd> = (0..nzp).map(|l| (0..nz).map(|k| qj[k * nzp + l]).sum()).collect();
    let ln_pos = |x: Dd| if x.hi > 0.0 { x.ln() } else { Dd::ZERO };

    if objective == Objective::UnstructuredElbo {
        // MI and InfoNCE priors have P(z) = Q(z), so only a table prior moves it.
        let PriorSpec::ExplicitTable { logits } = inst.prior() else {
            return Dd::ZERO;
        };
        let p = softmax_extended(logits);
        let mut kl = Dd::ZERO;
        for k in 0..nz {
            let pz: Dd = p[k * nzp..(k + 1) * nzp].iter().copied().sum();
            if qz[k].hi > 0.0 {
                kl = kl + qz[k] * (qz[k].ln() - pz.ln());
            }
        }
        return -kl;
    }

    // ln[P(k,l) / (Q(k) Q'(l))] per cell
    let log_ratio: Vec<Dd> = match inst.prior() {
        PriorSpec::ExplicitTable { logits } => {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: Dd = logits.iter().map(|&l| (Dd::new(l) - Dd::new(m)).exp()).sum();
            let lse = total.ln() + Dd::new(m);
            (0..nz * nzp)
                .map(|i| Dd::new(logits[i]) - lse - ln_pos(qz[i / nzp]) - ln_pos(qzp[i % nzp]))
                .collect()
        }
        PriorSpec::Mi => (0..nz * nzp)
            .map(|i| ln_pos(qj[i]) - ln_pos(qz[i / nzp]) - ln_pos(qzp[i % nzp]))
            .collect(),
        PriorSpec::InfoNce(coupling) => {
            let s = coupling_scores_extended(coupling);
            let log_z: Vec<Dd> = (0..nz)
                .map(|k| {
                    let z: Dd = (0..nzp).map(|l| qzp[l] * s[k * nzp + l].exp()).sum();
                    z.ln()
                })
                .collect();
            (0..nz * nzp).map(|i| s[i] - log_z[i / nzp]).collect()
        }
    };
    qj.iter()
        .zip(&log_ratio)
        .filter(|(q, _)| q.hi > 0.0)
        .map(|(&q, &r)| q * r)
        .sum()
}

fn ln_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        ln(x)
    } else {
        0.0
    }
}

/// Sensitivities of an objective with respect to `Q(z, z')`, `Q(z)`, `Q(z')`
/// and the direct parameter blocks.
struct Sensitivities {
    joint: Vec<f64>,
    marginal_z: Vec<f64>,
    marginal_z_prime: Vec<f64>,
    coupling: Option<Vec<f64>>,
    prior: Option<Vec<f64>>,
}

fn sensitivities(inst: &ModelInstance, objective: Objective) -> Result<Sensitivities> {
    let (nz, nzp) = inst.latent_shape();
    let qj = inst.induced_latent_joint()?;
    let qz = inst.induced_latent_marginal(Side::C)?;
    let qzp = inst.induced_latent_marginal(Side::X)?;
    let neg_entropy_grad = |q: &[f64]| -> Vec<f64> { q.iter().map(|&p| -(ln_or_zero(p) + 1.0)).collect() };
    let mut out = Sensitivities {
        joint: alloc::vec![0.0; nz * nzp],
        marginal_z: alloc::vec![0.0; nz],
        marginal_z_prime: alloc::vec![0.0; nzp],
        coupling: None,
        prior: None,
    };

    if objective == Objective::UnstructuredElbo {
        if let PriorSpec::ExplicitTable { logits } = inst.prior() {
            let p = softmax(logits);
            let pz: Vec<f64> = p.chunks(nzp).map(|row| row.iter().sum()).collect();
            for (k, (g, &pk)) in out.marginal_z.iter_mut().zip(&pz).enumerate() {
                let q = qz.prob(k);
                *g = if q > 0.0 { -(ln(q) - ln(pk) + 1.0) } else { 0.0 };
            }
            let mut prior = alloc::vec![0.0; nz * nzp];
            for k in 0..nz {
                for l in 0..nzp {
                    prior[k * nzp + l] = p[k * nzp + l] * (qz.prob(k) / pz[k] - 1.0);
                }
            }
            out.prior = Some(prior);
        }
        // With an MI or InfoNCE prior P(z) = Q(z) and the objective is constant.
        return Ok(out);
    }

    if objective == Objective::InfoNceExact && !matches!(inst.prior(), PriorSpec::InfoNce(_)) {
        return Err(Error::PriorMismatch {
            expected: "an InfoNCE prior",
        });
    }

    match inst.prior() {
        PriorSpec::ExplicitTable { logits } => {
            let p = softmax(logits);
            out.joint = p.iter().map(|&x| ln(x)).collect();
            out.marginal_z = neg_entropy_grad(qz.probs());
            out.marginal_z_prime = neg_entropy_grad(qzp.probs());
            out.prior = Some(qj.probs().iter().zip(&p).map(|(q, p)| q - p).collect());
        }
        PriorSpec::Mi => {
            out.joint = qj.probs().iter().map(|&q| ln_or_zero(q) + 1.0).collect();
            out.marginal_z = neg_entropy_grad(qz.probs());
            out.marginal_z_prime = neg_entropy_grad(qzp.probs());
        }
        PriorSpec::InfoNce(coupling) => {
            let log_f = coupling.log_table();
            let log_z = infonce_log_normalizers(&log_f, qzp.probs());
            out.marginal_z = log_z.iter().map(|lz| -lz).collect();
            // residual[k,l] = Q(k,l) − P(k,l), the gradient w.r.t. ln f(k,l)
            let mut residual = alloc::vec![0.0; nz * nzp];
            for k in 0..nz {
                for l in 0..nzp {
                    let cond = exp(log_f[k * nzp + l] - log_z[k]);
                    out.marginal_z_prime[l] -= qz.prob(k) * cond;
                    residual[k * nzp + l] = qj.get(k, l) - qz.prob(k) * qzp.prob(l) * cond;
                }
            }
            out.joint = log_f;
            if let Coupling::Bilinear(b) = coupling {
                out.coupling = Some(bilinear_gradient(b, &residual, nz, nzp));
            }
        }
    }
    Ok(out)
}

/// Chain rule through `s(k,l) = u_kᵀ W v_l` given `∂E/∂s`.
fn bilinear_gradient(b: &BilinearCoupling, ds: &[f64], nz: usize, nzp: usize) -> Vec<f64> {
    let (d, dp) = (b.dim_z(), b.dim_z_prime());
    let (u, v, w) = (b.z_embed(), b.z_prime_embed(), b.weight());
    // wv[l] = W v_l, wtu[k] = Wᵀ u_k
    let wv: Vec<f64> = (0..nzp)
        .flat_map(|l| (0..d).map(move |i| (0..dp).map(|j| w[i * dp + j] * v[l * dp + j]).sum::<f64>()))
        .collect();
    let wtu: Vec<f64> = (0..nz)
        .flat_map(|k| (0..dp).map(move |j| (0..d).map(|i| w[i * dp + j] * u[k * d + i]).sum::<f64>()))
        .collect();
    let mut gu = alloc::vec![0.0; nz * d];
    let mut gv = alloc::vec![0.0; nzp * dp];
    let mut gw = alloc::vec![0.0; d * dp];
    for k in 0..nz {
        for l in 0..nzp {
            let r = ds[k * nzp + l];
            if r == 0.0 {
                continue;
            }
            for i in 0..d {
                gu[k * d + i] += r * wv[l * d + i];
            }
            for j in 0..dp {
                gv[l * dp + j] += r * wtu[k * dp + j];
            }
            for i in 0..d {
                for j in 0..dp {
                    gw[i * dp + j] += r * u[k * d + i] * v[l * dp + j];
                }
            }
        }
    }
    gu.extend(gv);
    gu.extend(gw);
    gu
}

/// Softmax chain rule for one encoder: `∂E/∂α[g,j] = A[g,j] (G[g,j] − Σ_k A[g,k] G[g,k])`.
fn softmax_chain(probs: &[f64], grad_probs: &[f64], n_target: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(probs.len());
    for (row, grow) in probs.chunks(n_target).zip(grad_probs.chunks(n_target)) {
        let mean: f64 = row.iter().zip(grow).map(|(a, g)| a * g).sum();
        out.extend(row.iter().zip(grow).map(|(a, g)| a * (g - mean)));
    }
    out
}

fn analytic_gradient(inst: &ModelInstance, objective: Objective) -> Result<Vec<f64>> {
    let sens = sensitivities(inst, objective)?;
    let layout = ParameterLayout::of(inst);
    let (nz, nzp) = inst.latent_shape();
    let data = inst.data();
    let (nc, nx) = (data.n_rows(), data.n_cols());
    let a = inst.encoder(Side::C).conditional();
    let b = inst.encoder(Side::X).conditional();
    let pc = inst.data_marginal(Side::C);
    let px = inst.data_marginal(Side::X);
    let mut grad = Vec::with_capacity(layout.len());

    if layout.encoder_c.is_some() {
        // ∂E/∂A[c,k] = Σ_l G_joint[k,l] Σ_x Ptrue(c,x) B[x,l] + G_z[k] Ptrue(c)
        let mut ga = alloc::vec![0.0; nc * nz];
        for c in 0..nc {
            let mut m = alloc::vec![0.0; nzp];
            for x in 0..nx {
                let d = data.get(c, x);
                if d != 0.0 {
                    for (l, ml) in m.iter_mut().enumerate() {
                        *ml += d * b.get(x, l);
                    }
                }
            }
            for k in 0..nz {
                let joint: f64 = (0..nzp).map(|l| sens.joint[k * nzp + l] * m[l]).sum();
                ga[c * nz + k] = joint + sens.marginal_z[k] * pc.prob(c);
            }
        }
        grad.extend(softmax_chain(a.probs(), &ga, nz));
    }
    if layout.encoder_x.is_some() {
        let mut gb = alloc::vec![0.0; nx * nzp];
        for x in 0..nx {
            let mut n = alloc::vec![0.0; nz];
            for c in 0..nc {
                let d = data.get(c, x);
                if d != 0.0 {
                    for (k, nk) in n.iter_mut().enumerate() {
                        *nk += d * a.get(c, k);
                    }
                }
            }
            for l in 0..nzp {
                let joint: f64 = (0..nz).map(|k| sens.joint[k * nzp + l] * n[k]).sum();
                gb[x * nzp + l] = joint + sens.marginal_z_prime[l] * px.prob(x);
            }
        }
        grad.extend(softmax_chain(b.probs(), &gb, nzp));
    }
    if let Some(s) = layout.coupling {
        let n = s.n_z * s.dim_z + s.n_z_prime * s.dim_z_prime + s.dim_z * s.dim_z_prime;
        grad.extend(sens.coupling.unwrap_or_else(|| alloc::vec![0.0; n]));
    }
    if layout.prior.is_some() {
        grad.extend(sens.prior.unwrap_or_else(|| alloc::vec![0.0; nz * nzp]));
    }
    debug_assert_eq!(grad.len(), layout.len());
    Ok(grad)
}

/// Analytic gradient of `objective` at `params` (laid out for `inst`).
pub fn objective_gradient(inst: &ModelInstance, params: &ParameterVector, objective: Objective) -> Result<Vec<f64>> {
    analytic_gradient(&params.apply(inst)?, objective)
}

/// Central differences `(E(θ + h e_i) − E(θ − h e_i)) / 2h` per coordinate.
///
/// Each perturbed objective is first evaluated normally, so domain errors
/// propagate, then recomputed without its data-only constant in
/// double-double arithmetic. The divisor is the exact distance between the
/// two perturbed parameter values.
pub fn finite_difference_gradient(
    inst: &ModelInstance,
    params: &ParameterVector,
    objective: Objective,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut out = Vec::with_capacity(params.len());
    let mut values = params.values().to_vec();
    let eval = |values: &[f64]| -> Result<Dd> {
        let perturbed = params.with_values(values.to_vec())?.apply(inst)?;
        objective_value(&perturbed, objective)?;
        Ok(variable_part_extended(&perturbed, objective))
    };
    for i in 0..values.len() {
        let base = values[i];
        let (up, down) = (base + h, base - h);
        values[i] = up;
        let plus = eval(&values)?;
        values[i] = down;
        let minus = eval(&values)?;
        values[i] = base;
        out.push(((plus - minus) / (Dd::new(up) - Dd::new(down))).to_f64());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Initial step size; doubled after each accepted step, halved on
    /// every rejected trial.
    pub step_size: f64,
    pub max_iters: usize,
    /// Convergence threshold on the gradient max-norm.
    pub tolerance: f64,
    /// Seeds model generation and initialization in experiments; plain
    /// [`train`] starts from the instance it is given.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            step_size: 1.0,
            max_iters: 5000,
            tolerance: 1e-8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRow {
    pub iteration: usize,
    /// Objective at the start of the iteration.
    pub objective: f64,
    /// Optional diagnostic, `I(z; s)` for shared-factor runs.
    pub mi_z_s: Option<f64>,
    pub gradient_norm: f64,
    /// Accepted step, zero when no step was taken.
    pub step_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Converged,
    IterationCap,
    /// No trial step, however small, failed to decrease the objective.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TrainRow>,
    pub final_params: ParameterVector,
    pub final_objective: f64,
    pub status: TrainStatus,
}

impl TrainTrace {
    pub fn accepted_steps(&self) -> usize {
        self.rows.iter().filter(|r| r.step_size > 0.0).count()
    }
}

const MAX_HALVINGS: usize = 200;

/// Gradient ascent from `inst`.
pub fn train(inst: &ModelInstance, config: &TrainConfig) -> Result<TrainTrace> {
    train_observed(inst, config, &mut |_| Ok(None))
}

/// [`train`] with a diagnostic evaluated at the start of every iteration.
///
/// Each iteration computes the exact gradient, stops if its max-norm is
/// below the tolerance, and otherwise tries `θ + t ∇E`, halving `t` until the
/// objective does not decrease. The next iteration starts from `2t`.
/// Reaching the iteration cap or failing to find a non-decreasing step
/// returns [`Error::NonConvergence`] carrying the trace.
pub fn train_observed(
    inst: &ModelInstance,
    config: &TrainConfig,
    probe: &mut dyn FnMut(&ModelInstance) -> Result<Option<f64>>,
) -> Result<TrainTrace> {
    config.validate()?;
    let mut params = ParameterVector::from_instance(inst);
    let mut current = inst.clone();
    let mut value = objective_value(&current, config.objective)?;
    let mut step = config.step_size;
    let mut rows = Vec::new();
    let mut gradient_norm = 0.0;

    for iteration in 0..config.max_iters {
        let grad = analytic_gradient(&current, config.objective)?;
        gradient_norm = max_abs(&grad);
        let mut row = TrainRow {
            iteration,
            objective: value,
            mi_z_s: probe(&current)?,
            gradient_norm,
            step_size: 0.0,
        };
        if gradient_norm < config.tolerance {
            rows.push(row);
            return Ok(TrainTrace {
                rows,
                final_params: params,
                final_objective: value,
                status: TrainStatus::Converged,
            });
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = params.values().iter().zip(&grad).map(|(p, g)| p + t * g).collect();
            let candidate = params.with_values(trial)?;
            if let Ok(next) = candidate.apply(inst) {
                if let Ok(v) = objective_value(&next, config.objective) {
                    if v.is_finite() && v >= value {
                        accepted = Some((candidate, next, v));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((candidate, next, v)) = accepted else {
            rows.push(row);
            let trace = TrainTrace {
                rows,
                final_params: params,
                final_objective: value,
                status: TrainStatus::Stalled,
            };
            return Err(Error::NonConvergence {
                iterations: iteration,
                gradient_norm,
                trace: Some(Box::new(trace)),
            });
        };
        row.step_size = t;
        rows.push(row);
        params = candidate;
        current = next;
        value = v;
        step = 2.0 * t;
    }

    let trace = TrainTrace {
        rows,
        final_params: params,
        final_objective: value,
        status: TrainStatus::IterationCap,
    };
    Err(Error::NonConvergence {
        iterations: config.max_iters,
        gradient_norm,
        trace: Some(Box::new(trace)),
    })
}

/// Builds the shared-factor model, prepares the prior for `choice` (seeded by
/// `train.seed`), trains, and records `I(z; s)` at every iteration.
pub fn shared_factor_experiment(
    cfg: &SharedFactorConfig,
    choice: ObjectiveChoice,
    train: &TrainConfig,
) -> Result<(SharedFactorModel, TrainTrace)> {
    if cfg.latent_count < cfg.s_count {
        return Err(Error::InvalidArgument("latent_count must be at least s_count".into()));
    }
    let model = SharedFactorModel::generate(cfg)?;
    let inst = choice.prepare(&model.instance, train.seed)?;
    let config = TrainConfig {
        objective: choice.objective(),
        ..*train
    };
    let trace = train_observed(&inst, &config, &mut |m| model.factor_information(m).map(Some))?;
    Ok((model, trace))
}

/// `true` when `e` is a deterministic encoder.
pub fn is_one_hot(e: &Encoder) -> bool {
    matches!(e.kind(), EncoderKind::Deterministic { .. })
}
