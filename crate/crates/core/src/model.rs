//! SSVAE model instances over finite spaces.
//!
//! A [`ModelInstance`] bundles the true data joint over `(c, x')`, one
//! encoder per view and a prior over the latent grid `(z, z')`. Everything
//! else the model needs (induced latent marginals and joint, the implicit
//! decoders, the resolved prior) is derived on demand, so priors that are
//! defined through the encoders track parameter changes automatically.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::math::{exp, ln, ln_or_neg_inf, log_sum_exp, softmax};
use crate::prob::{mutual_information, Axis, ConditionalTable, FiniteDistribution, FiniteSpace, JointDistribution};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// One of the two observed views: `C` is the context `c`, `X` the target `x'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    C,
    X,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderKind {
    /// Row-wise softmax of a logit matrix (row-major, one row per data label).
    Softmax { logits: Vec<f64> },
    /// Exact one-hot rows: data label `i` maps to latent `map[i]`.
    Deterministic { map: Vec<usize> },
    /// A fixed conditional table. Not trainable.
    Fixed { table: ConditionalTable },
}

/// Tabular approximate posterior `Q(z | data)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    given: FiniteSpace,
    target: FiniteSpace,
    kind: EncoderKind,
}

impl Encoder {
    pub fn softmax(given: FiniteSpace, target: FiniteSpace, logits: Vec<f64>) -> Result<Self> {
        let expected = given.len() * target.len();
        if logits.len() != expected {
            return Err(Error::LengthMismatch {
                what: "encoder logits",
                expected,
                found: logits.len(),
            });
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite {
                what: "encoder logits",
                label: format!(
                    "{} | {}",
                    target.label(i % target.len()),
                    given.label(i / target.len())
                ),
                value: logits[i],
            });
        }
        Ok(Self {
            given,
            target,
            kind: EncoderKind::Softmax { logits },
        })
    }

    pub fn deterministic(given: FiniteSpace, target: FiniteSpace, map: Vec<usize>) -> Result<Self> {
        if map.len() != given.len() {
            return Err(Error::LengthMismatch {
                what: "deterministic encoder map",
                expected: given.len(),
                found: map.len(),
            });
        }
        if let Some(&bad) = map.iter().find(|&&k| k >= target.len()) {
            return Err(Error::InvalidArgument(format!(
                "deterministic encoder maps to latent index {bad}, but only {} latents exist",
                target.len()
            )));
        }
        Ok(Self {
            given,
            target,
            kind: EncoderKind::Deterministic { map },
        })
    }

    /// Deterministic encoder mapping each data label to the latent at the same index.
    pub fn identity(given: FiniteSpace, target: FiniteSpace) -> Result<Self> {
        let n = given.len();
        Self::deterministic(given, target, (0..n).collect())
    }

    pub fn fixed(table: ConditionalTable) -> Self {
        Self {
            given: table.given().clone(),
            target: table.target().clone(),
            kind: EncoderKind::Fixed { table },
        }
    }

    pub fn given(&self) -> &FiniteSpace {
        &self.given
    }

    pub fn target(&self) -> &FiniteSpace {
        &self.target
    }

    pub fn kind(&self) -> &EncoderKind {
        &self.kind
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self.kind, EncoderKind::Softmax { .. })
    }

    pub fn logits(&self) -> Option<&[f64]> {
        match &self.kind {
            EncoderKind::Softmax { logits } => Some(logits),
            _ => None,
        }
    }

    /// The realized conditional `Q(z | data)`.
    pub fn conditional(&self) -> ConditionalTable {
        let nt = self.target.len();
        let probs = match &self.kind {
            EncoderKind::Softmax { logits } => logits.chunks(nt).flat_map(softmax).collect(),
            EncoderKind::Deterministic { map } => {
                let mut probs = alloc::vec![0.0; self.given.len() * nt];
                for (i, &k) in map.iter().enumerate() {
                    probs[i * nt + k] = 1.0;
                }
                probs
            }
            EncoderKind::Fixed { table } => return table.clone(),
        };
        ConditionalTable::from_trusted(self.given.clone(), self.target.clone(), probs)
    }

    /// Deterministic encoder sending each data label to its most probable
    /// latent (first index on ties).
    pub fn hardened(&self) -> Encoder {
        let table = self.conditional();
        let nt = self.target.len();
        let map = table
            .probs()
            .chunks(nt)
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        Encoder {
            given: self.given.clone(),
            target: self.target.clone(),
            kind: EncoderKind::Deterministic { map },
        }
    }
}

/// `f(z, z') = exp(e_zᵀ W e'_{z'})` with per-latent embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearCoupling {
    n_z: usize,
    n_z_prime: usize,
    dim_z: usize,
    dim_z_prime: usize,
    z_embed: Vec<f64>,
    z_prime_embed: Vec<f64>,
    weight: Vec<f64>,
}

impl BilinearCoupling {
    /// `z_embed` is `n_z × dim_z`, `z_prime_embed` is `n_z_prime × dim_z_prime`
    /// and `weight` is `dim_z × dim_z_prime`, all row-major.
    pub fn new(
        n_z: usize,
        dim_z: usize,
        z_embed: Vec<f64>,
        n_z_prime: usize,
        dim_z_prime: usize,
        z_prime_embed: Vec<f64>,
        weight: Vec<f64>,
    ) -> Result<Self> {
        for (what, v, expected) in [
            ("z embeddings", &z_embed, n_z * dim_z),
            ("z' embeddings", &z_prime_embed, n_z_prime * dim_z_prime),
            ("coupling weight", &weight, dim_z * dim_z_prime),
        ] {
            if v.len() != expected {
                return Err(Error::LengthMismatch {
                    what,
                    expected,
                    found: v.len(),
                });
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what,
                    label: i.to_string(),
                    value: v[i],
                });
            }
        }
        if n_z == 0 || n_z_prime == 0 || dim_z == 0 || dim_z_prime == 0 {
            return Err(Error::InvalidArgument("bilinear coupling dimensions must be positive".into()));
        }
        Ok(Self {
            n_z,
            n_z_prime,
            dim_z,
            dim_z_prime,
            z_embed,
            z_prime_embed,
            weight,
        })
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    pub fn dim_z_prime(&self) -> usize {
        self.dim_z_prime
    }

    pub fn z_embed(&self) -> &[f64] {
        &self.z_embed
    }

    pub fn z_prime_embed(&self) -> &[f64] {
        &self.z_prime_embed
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// `e_kᵀ W e'_l`.
    pub fn score(&self, k: usize, l: usize) -> f64 {
        let u = &self.z_embed[k * self.dim_z..(k + 1) * self.dim_z];
        let v = &self.z_prime_embed[l * self.dim_z_prime..(l + 1) * self.dim_z_prime];
        let mut s = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            let row = &self.weight[i * self.dim_z_prime..(i + 1) * self.dim_z_prime];
            let wv: f64 = row.iter().zip(v).map(|(w, x)| w * x).sum();
            s += ui * wv;
        }
        s
    }
}

/// Strictly positive coupling given cell by cell, `n_z × n_z'` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTable {
    n_z: usize,
    n_z_prime: usize,
    values: Vec<f64>,
}

impl CouplingTable {
    pub fn new(n_z: usize, n_z_prime: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_z * n_z_prime {
            return Err(Error::LengthMismatch {
                what: "coupling table",
                expected: n_z * n_z_prime,
                found: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveCoupling {
                    row: i / n_z_prime,
                    col: i % n_z_prime,
                    value: v,
                });
            }
        }
        Ok(Self {
            n_z,
            n_z_prime,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Positive coupling function `f(z, z')` of the InfoNCE prior.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    Bilinear(BilinearCoupling),
    Table(CouplingTable),
}

impl Coupling {
    /// Constant coupling `f ≡ value`.
    pub fn constant(n_z: usize, n_z_prime: usize, value: f64) -> Result<Self> {
        Ok(Coupling::Table(CouplingTable::new(
            n_z,
            n_z_prime,
            alloc::vec![value; n_z * n_z_prime],
        )?))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Coupling::Bilinear(b) => (b.n_z, b.n_z_prime),
            Coupling::Table(t) => (t.n_z, t.n_z_prime),
        }
    }

    pub fn log_value(&self, k: usize, l: usize) -> f64 {
        match self {
            Coupling::Bilinear(b) => b.score(k, l),
            Coupling::Table(t) => ln(t.values[k * t.n_z_prime + l]),
        }
    }

    pub fn value(&self, k: usize, l: usize) -> f64 {
        match self {
            Coupling::Bilinear(b) => exp(b.score(k, l)),
            Coupling::Table(t) => t.values[k * t.n_z_prime + l],
        }
    }

    /// `ln f` over the whole grid, row-major.
    pub fn log_table(&self) -> Vec<f64> {
        let (nz, nzp) = self.shape();
        let mut out = Vec::with_capacity(nz * nzp);
        for k in 0..nz {
            for l in 0..nzp {
                out.push(self.log_value(k, l));
            }
        }
        out
    }
}

/// Prior over the latent grid `(z, z')`.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// `P(z, z') = softmax(logits)` over the grid, row-major.
    ExplicitTable { logits: Vec<f64> },
    /// `P(z, z') = Q(z, z')`, the induced latent joint.
    Mi,
    /// `P(z) = Q(z)`, `P(z' | z) = Q(z') f(z, z') / Z(z)`.
    InfoNce(Coupling),
}

impl PriorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::ExplicitTable { .. } => "explicit-table",
            PriorSpec::Mi => "mi",
            PriorSpec::InfoNce(_) => "infonce",
        }
    }
}

/// The structured SSVAE `c ← z − z' → x'` over finite spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    data: JointDistribution,
    encoder_c: Encoder,
    encoder_x: Encoder,
    prior: PriorSpec,
}

impl ModelInstance {
    pub fn new(
        data: JointDistribution,
        encoder_c: Encoder,
        encoder_x: Encoder,
        prior: PriorSpec,
    ) -> Result<Self> {
        if encoder_c.given() != data.rows() {
            return Err(Error::SpaceMismatch("encoder_c input space differs from the data rows"));
        }
        if encoder_x.given() != data.cols() {
            return Err(Error::SpaceMismatch("encoder_x input space differs from the data columns"));
        }
        let shape = (encoder_c.target().len(), encoder_x.target().len());
        match &prior {
            PriorSpec::ExplicitTable { logits } => {
                if logits.len() != shape.0 * shape.1 {
                    return Err(Error::LengthMismatch {
                        what: "prior logits",
                        expected: shape.0 * shape.1,
                        found: logits.len(),
                    });
                }
                if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "prior logits",
                        label: i.to_string(),
                        value: logits[i],
                    });
                }
            }
            PriorSpec::Mi => {}
            PriorSpec::InfoNce(coupling) => {
                if coupling.shape() != shape {
                    return Err(Error::SpaceMismatch("coupling shape differs from the latent grid"));
                }
            }
        }
        Ok(Self {
            data,
            encoder_c,
            encoder_x,
            prior,
        })
    }

    pub fn data(&self) -> &JointDistribution {
        &self.data
    }

    pub fn encoder(&self, side: Side) -> &Encoder {
        match side {
            Side::C => &self.encoder_c,
            Side::X => &self.encoder_x,
        }
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn latent_space(&self, side: Side) -> &FiniteSpace {
        self.encoder(side).target()
    }

    /// `(|z|, |z'|)`.
    pub fn latent_shape(&self) -> (usize, usize) {
        (self.encoder_c.target().len(), self.encoder_x.target().len())
    }

    pub fn with_prior(&self, prior: PriorSpec) -> Result<Self> {
        Self::new(self.data.clone(), self.encoder_c.clone(), self.encoder_x.clone(), prior)
    }

    pub fn with_encoder(&self, side: Side, encoder: Encoder) -> Result<Self> {
        let (c, x) = match side {
            Side::C => (encoder, self.encoder_x.clone()),
            Side::X => (self.encoder_c.clone(), encoder),
        };
        Self::new(self.data.clone(), c, x, self.prior.clone())
    }

    /// Both encoders replaced by their argmax one-hot versions.
    pub fn hardened(&self) -> Self {
        Self {
            data: self.data.clone(),
            encoder_c: self.encoder_c.hardened(),
            encoder_x: self.encoder_x.hardened(),
            prior: self.prior.clone(),
        }
    }

    /// True data marginal `Ptrue(c)` or `Ptrue(x')`.
    pub fn data_marginal(&self, side: Side) -> FiniteDistribution {
        match side {
            Side::C => self.data.marginalize(Axis::Row),
            Side::X => self.data.marginalize(Axis::Col),
        }
    }

    /// `Q(z)_k = Σ_c Q(z = k | c) Ptrue(c)`.
    pub fn induced_latent_marginal(&self, side: Side) -> Result<FiniteDistribution> {
        let q = self.encoder(side).conditional();
        let m = q.push_forward(&self.data_marginal(side))?;
        FiniteDistribution::new(m.space().clone(), m.probs().to_vec())
    }

    /// `Q(z, z')_{kl} = Σ_{c,x'} Q(k | c) Q(l | x') Ptrue(c, x')`.
    pub fn induced_latent_joint(&self) -> Result<JointDistribution> {
        let a = self.encoder_c.conditional();
        let b = self.encoder_x.conditional();
        let (nz, nzp) = self.latent_shape();
        let (nc, nx) = (self.data.n_rows(), self.data.n_cols());
        // m[c][l] = Σ_x Ptrue(c, x) Q(l | x)
        let mut m = alloc::vec![0.0; nc * nzp];
        for c in 0..nc {
            for x in 0..nx {
                let d = self.data.get(c, x);
                if d == 0.0 {
                    continue;
                }
                for l in 0..nzp {
                    m[c * nzp + l] += d * b.get(x, l);
                }
            }
        }
        let mut probs = alloc::vec![0.0; nz * nzp];
        for c in 0..nc {
            for k in 0..nz {
                let akc = a.get(c, k);
                if akc == 0.0 {
                    continue;
                }
                for l in 0..nzp {
                    probs[k * nzp + l] += akc * m[c * nzp + l];
                }
            }
        }
        JointDistribution::new(a.target().clone(), b.target().clone(), probs)
    }

    /// Implicit decoder `P(data | z) = Q(z | data) Ptrue(data) / Q(z)`, one row per latent.
    pub fn implicit_decoder(&self, side: Side) -> Result<ConditionalTable> {
        let enc = self.encoder(side).conditional();
        let ptrue = self.data_marginal(side);
        let qz = self.induced_latent_marginal(side)?;
        let (nd, nz) = (ptrue.len(), qz.len());
        let mut probs = Vec::with_capacity(nd * nz);
        for k in 0..nz {
            let q = qz.prob(k);
            if q == 0.0 {
                return Err(Error::UnreachedLatent(qz.space().label(k).to_string()));
            }
            probs.extend((0..nd).map(|d| enc.get(d, k) * ptrue.prob(d) / q));
        }
        ConditionalTable::new(qz.space().clone(), ptrue.space().clone(), probs)
    }

    /// `ln P(z, z')` on the grid (row-major), negative infinity on zero cells.
    ///
    /// The InfoNCE prior is built in log space,
    /// `ln Q(z) + ln Q(z') + ln f(z, z') − ln Z(z)`, so extreme couplings do
    /// not underflow.
    pub fn log_prior_table(&self) -> Result<Vec<f64>> {
        match &self.prior {
            PriorSpec::ExplicitTable { logits } => {
                let lse = log_sum_exp(logits);
                Ok(logits.iter().map(|l| l - lse).collect())
            }
            PriorSpec::Mi => Ok(self
                .induced_latent_joint()?
                .probs()
                .iter()
                .map(|&p| ln_or_neg_inf(p))
                .collect()),
            PriorSpec::InfoNce(coupling) => {
                let qz = self.induced_latent_marginal(Side::C)?;
                let qzp = self.induced_latent_marginal(Side::X)?;
                let log_f = coupling.log_table();
                let log_z = infonce_log_normalizers(&log_f, qzp.probs());
                let nzp = qzp.len();
                let mut out = Vec::with_capacity(log_f.len());
                for k in 0..qz.len() {
                    let lqk = ln_or_neg_inf(qz.prob(k));
                    for l in 0..nzp {
                        let lql = ln_or_neg_inf(qzp.prob(l));
                        if lqk == f64::NEG_INFINITY || lql == f64::NEG_INFINITY {
                            out.push(f64::NEG_INFINITY);
                        } else {
                            out.push(lqk + lql + log_f[k * nzp + l] - log_z[k]);
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// The prior as a validated joint over `(z, z')`.
    pub fn resolve_prior(&self) -> Result<JointDistribution> {
        if let PriorSpec::Mi = self.prior {
            return self.induced_latent_joint();
        }
        let probs = self
            .log_prior_table()?
            .into_iter()
            .map(|lp| if lp == f64::NEG_INFINITY { 0.0 } else { exp(lp) })
            .collect();
        JointDistribution::new(
            self.latent_space(Side::C).clone(),
            self.latent_space(Side::X).clone(),
            probs,
        )
    }
}

/// `ln Z(k) = ln Σ_l Q(z')_l f(k, l)` for each row of a log-coupling table.
pub fn infonce_log_normalizers(log_f: &[f64], q_z_prime: &[f64]) -> Vec<f64> {
    let nzp = q_z_prime.len();
    let log_q: Vec<f64> = q_z_prime.iter().map(|&q| ln_or_neg_inf(q)).collect();
    log_f
        .chunks(nzp)
        .map(|row| {
            let terms: Vec<f64> = row.iter().zip(&log_q).map(|(s, lq)| s + lq).collect();
            log_sum_exp(&terms)
        })
        .collect()
}

/// Table sizes for generated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub data_c: usize,
    pub data_x: usize,
    pub latent_z: usize,
    pub latent_z_prime: usize,
}

impl Dims {
    pub const fn new(data_c: usize, data_x: usize, latent_z: usize, latent_z_prime: usize) -> Self {
        Self {
            data_c,
            data_x,
            latent_z,
            latent_z_prime,
        }
    }
}

/// Which prior [`random_instance_with_prior`] attaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorChoice {
    ExplicitTable,
    Mi,
    InfoNceBilinear { embed_dim: usize },
}

/// [`random_instance_with_prior`] with an explicit-table prior.
pub fn random_instance(dims: Dims, seed: u64) -> Result<ModelInstance> {
    random_instance_with_prior(dims, PriorChoice::ExplicitTable, seed)
}

/// Seeded random instance. Draws from `SplitMix64::new(seed)` in this order:
///
/// 1. data weights, `|c|·|x'|` draws, weight `0.05 + u`, normalized;
/// 2. `encoder_c` logits, `|c|·|z|` draws, uniform in `[-2, 2)`;
/// 3. `encoder_x` logits, `|x'|·|z'|` draws, uniform in `[-2, 2)`;
/// 4. explicit prior logits, `|z|·|z'|` draws, uniform in `[-1, 1)`;
/// 5. bilinear coupling only: `z` embeddings, `z'` embeddings, then `W`,
///    each entry uniform in `[-1, 1)`.
///
/// Steps 1 to 4 always run, so the same seed gives the same data and encoders
/// under every prior choice. Labels are `c0..`, `x0..`, `z0..`, `zp0..`.
pub fn random_instance_with_prior(dims: Dims, prior: PriorChoice, seed: u64) -> Result<ModelInstance> {
    if dims.data_c < 1 || dims.data_x < 1 || dims.latent_z < 1 || dims.latent_z_prime < 1 {
        return Err(Error::InvalidArgument("instance dimensions must be positive".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let cs = FiniteSpace::indexed("c", dims.data_c)?;
    let xs = FiniteSpace::indexed("x", dims.data_x)?;
    let zs = FiniteSpace::indexed("z", dims.latent_z)?;
    let zps = FiniteSpace::indexed("zp", dims.latent_z_prime)?;

    let weights: Vec<f64> = (0..dims.data_c * dims.data_x)
        .map(|_| 0.05 + rng.next_f64())
        .collect();
    let total: f64 = weights.iter().sum();
    let data = JointDistribution::new(cs.clone(), xs.clone(), weights.iter().map(|w| w / total).collect())?;

    let logits_c = (0..dims.data_c * dims.latent_z).map(|_| rng.symmetric(2.0)).collect();
    let logits_x = (0..dims.data_x * dims.latent_z_prime)
        .map(|_| rng.symmetric(2.0))
        .collect();
    let prior_logits: Vec<f64> = (0..dims.latent_z * dims.latent_z_prime)
        .map(|_| rng.symmetric(1.0))
        .collect();

    let prior = match prior {
        PriorChoice::ExplicitTable => PriorSpec::ExplicitTable {
            logits: prior_logits,
        },
        PriorChoice::Mi => PriorSpec::Mi,
        PriorChoice::InfoNceBilinear { embed_dim } => {
            let u = (0..dims.latent_z * embed_dim).map(|_| rng.symmetric(1.0)).collect();
            let v = (0..dims.latent_z_prime * embed_dim)
                .map(|_| rng.symmetric(1.0))
                .collect();
            let w = (0..embed_dim * embed_dim).map(|_| rng.symmetric(1.0)).collect();
            PriorSpec::InfoNce(Coupling::Bilinear(BilinearCoupling::new(
                dims.latent_z,
                embed_dim,
                u,
                dims.latent_z_prime,
                embed_dim,
                v,
                w,
            )?))
        }
    };

    ModelInstance::new(
        data,
        Encoder::softmax(cs, zs, logits_c)?,
        Encoder::softmax(xs, zps, logits_x)?,
        prior,
    )
}

/// Parameters of the two-view shared-factor data model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedFactorConfig {
    pub s_count: usize,
    pub noise_count: usize,
    /// Interpolates the emission of the observed factor between exact
    /// (`0`) and uniform (`1`).
    pub noise_level: f64,
    pub latent_count: usize,
    pub seed: u64,
}

impl SharedFactorConfig {
    /// Latent count defaults to the number of factor values.
    pub fn new(s_count: usize, noise_count: usize, noise_level: f64, seed: u64) -> Self {
        Self {
            s_count,
            noise_count,
            noise_level,
            latent_count: s_count,
            seed,
        }
    }
}

/// A shared-factor model together with the ground-truth factor joint.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedFactorModel {
    pub instance: ModelInstance,
    /// `P(s, c)` with the factor `s` on the rows.
    pub factor_c: JointDistribution,
}

impl SharedFactorModel {
    /// Generates the data model. A uniform factor `s` is drawn once; each view
    /// emits an observed copy `a` with
    /// `E(a | s) = (1 − noise_level)·[a = s] + noise_level / s_count`,
    /// plus an independent nuisance label `n` from a seeded noise marginal.
    /// Data labels are `s{a}n{n}`.
    ///
    /// Draws from `SplitMix64::new(seed)`: `c`-side noise weights
    /// (`0.5 + u`), `x'`-side noise weights, then `encoder_c` and `encoder_x`
    /// logits uniform in `[-0.1, 0.1)`. The prior is [`PriorSpec::Mi`].
    pub fn generate(cfg: &SharedFactorConfig) -> Result<Self> {
        if cfg.s_count < 2 {
            return Err(Error::InvalidArgument("s_count must be at least 2".into()));
        }
        if cfg.noise_count < 1 {
            return Err(Error::InvalidArgument("noise_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&cfg.noise_level) {
            return Err(Error::InvalidArgument("noise_level must lie in [0, 1]".into()));
        }
        if cfg.latent_count < 1 {
            return Err(Error::InvalidArgument("latent_count must be at least 1".into()));
        }
        let (ns, nn) = (cfg.s_count, cfg.noise_count);
        let mut rng = SplitMix64::new(cfg.seed);
        let mut noise = || -> Vec<f64> {
            let w: Vec<f64> = (0..nn).map(|_| 0.5 + rng.next_f64()).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect()
        };
        let noise_c = noise();
        let noise_x = noise();

        let emission = |a: usize, s: usize| {
            let exact = if a == s { 1.0 } else { 0.0 };
            (1.0 - cfg.noise_level) * exact + cfg.noise_level / ns as f64
        };
        let prior_s = 1.0 / ns as f64;

        let labels = || (0..ns).flat_map(move |a| (0..nn).map(move |n| format!("s{a}n{n}")));
        let cs = FiniteSpace::new(labels())?;
        let xs = FiniteSpace::new(labels())?;
        let ss = FiniteSpace::indexed("s", ns)?;
        let nd = ns * nn;

        // P(a_c, a_x) = Σ_s P(s) E(a_c | s) E(a_x | s)
        let mut shared = alloc::vec![0.0; ns * ns];
        for a in 0..ns {
            for b in 0..ns {
                shared[a * ns + b] = (0..ns).map(|s| prior_s * emission(a, s) * emission(b, s)).sum();
            }
        }
        let mut data = Vec::with_capacity(nd * nd);
        for a in 0..ns {
            for &p1 in &noise_c {
                for b in 0..ns {
                    for &p2 in &noise_x {
                        data.push(shared[a * ns + b] * p1 * p2);
                    }
                }
            }
        }
        let data = JointDistribution::new(cs.clone(), xs.clone(), data)?;

        let mut factor = Vec::with_capacity(ns * nd);
        for s in 0..ns {
            for a in 0..ns {
                for &pn in &noise_c {
                    factor.push(prior_s * emission(a, s) * pn);
                }
            }
        }
        let factor_c = JointDistribution::new(ss, cs.clone(), factor)?;

        let zs = FiniteSpace::indexed("z", cfg.latent_count)?;
        let zps = FiniteSpace::indexed("zp", cfg.latent_count)?;
        let logits_c = (0..nd * cfg.latent_count).map(|_| rng.symmetric(0.1)).collect();
        let logits_x = (0..nd * cfg.latent_count).map(|_| rng.symmetric(0.1)).collect();
        let instance = ModelInstance::new(
            data,
            Encoder::softmax(cs, zs, logits_c)?,
            Encoder::softmax(xs, zps, logits_x)?,
            PriorSpec::Mi,
        )?;
        Ok(Self { instance, factor_c })
    }

    /// `I(z; s)` in nats for the `c`-side encoder of `inst`, which must share
    /// this model's data spaces.
    pub fn factor_information(&self, inst: &ModelInstance) -> Result<f64> {
        let enc = inst.encoder(Side::C);
        if enc.given() != self.factor_c.cols() {
            return Err(Error::SpaceMismatch("encoder input space differs from the factor model"));
        }
        let q = enc.conditional();
        let (ns, nd, nz) = (self.factor_c.n_rows(), self.factor_c.n_cols(), enc.target().len());
        let mut probs = alloc::vec![0.0; ns * nz];
        for s in 0..ns {
            for d in 0..nd {
                let p = self.factor_c.get(s, d);
                for k in 0..nz {
                    probs[s * nz + k] += p * q.get(d, k);
                }
            }
        }
        let joint = JointDistribution::new(self.factor_c.rows().clone(), enc.target().clone(), probs)?;
        Ok(mutual_information(&joint))
    }
}

/// Shorthand for [`SharedFactorModel::generate`] with `latent_count = s_count`.
pub fn make_shared_factor_model(
    s_count: usize,
    noise_count: usize,
    noise_level: f64,
    seed: u64,
) -> Result<SharedFactorModel> {
    SharedFactorModel::generate(&SharedFactorConfig::new(s_count, noise_count, noise_level, seed))
}
