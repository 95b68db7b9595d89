//! JSON model specs.
//!
//! A spec names the data joint, the two encoders and the prior. Matrices are
//! arrays of rows; encoder rows follow the data labels, prior and coupling
//! rows follow the `z` labels.
//!
//! ```json
//! {
//!   "data": { "kind": "table", "rows": ["c0", "c1"], "cols": ["x0", "x1"],
//!             "probs": [[0.4, 0.1], [0.1, 0.4]] },
//!   "latents": { "z": ["z0", "z1"], "z_prime": ["zp0", "zp1"] },
//!   "encoder_c": { "kind": "softmax", "logits": [[1.0, 0.0], [0.0, 1.0]] },
//!   "encoder_x": { "kind": "deterministic", "map": ["zp0", "zp1"] },
//!   "prior": { "kind": "mi" }
//! }
//! ```
//!
//! Encoders are `softmax` (logit rows), `deterministic` (one latent label per
//! data label) or `fixed` (probability rows). Priors are `mi`,
//! `explicit_table` (logit rows) or `infonce` with a `bilinear`
//! (`z_embed`, `z_prime_embed`, `weight`) or `table` (`values`) coupling.
//!
//! Data may instead be `{"kind": "shared_factor", "s_count", "noise_count",
//! "noise_level", "latent_count"?, "seed"?}`; latents are then generated,
//! and omitted encoders take the generator's seeded starting point.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ssvae_core::model::{BilinearCoupling, CouplingTable};
use ssvae_core::{
    Coupling, Encoder, EncoderKind, FiniteSpace, JointDistribution, ModelInstance, PriorSpec, SharedFactorConfig,
    SharedFactorModel, Side,
};

use crate::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub data: DataSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latents: Option<LatentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_c: Option<EncoderSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_x: Option<EncoderSpec>,
    pub prior: PriorFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Table {
        rows: Vec<String>,
        cols: Vec<String>,
        probs: Vec<Vec<f64>>,
    },
    SharedFactor {
        s_count: usize,
        noise_count: usize,
        noise_level: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latent_count: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSpec {
    pub z: Vec<String>,
    pub z_prime: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    Softmax { logits: Vec<Vec<f64>> },
    Deterministic { map: Vec<String> },
    Fixed { probs: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorFile {
    Mi {},
    ExplicitTable { logits: Vec<Vec<f64>> },
    Infonce { coupling: CouplingSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSpec {
    Bilinear {
        z_embed: Vec<Vec<f64>>,
        z_prime_embed: Vec<Vec<f64>>,
        weight: Vec<Vec<f64>>,
    },
    Table {
        values: Vec<Vec<f64>>,
    },
}

/// A built spec. `factor` is present for shared-factor data.
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub instance: ModelInstance,
    pub factor: Option<SharedFactorModel>,
}

fn invalid(msg: impl Into<String>) -> LabError {
    LabError::Spec(msg.into())
}

/// Row-major flattening with a shape check that names the bad row.
fn flatten(what: &str, rows: &[Vec<f64>], row_labels: &[String], width: usize) -> Result<Vec<f64>, LabError> {
    if rows.len() != row_labels.len() {
        return Err(invalid(format!("{what}: expected {} rows, found {}", row_labels.len(), rows.len())));
    }
    let mut out = Vec::with_capacity(rows.len() * width);
    for (row, label) in rows.iter().zip(row_labels) {
        if row.len() != width {
            return Err(invalid(format!(
                "{what}: row `{label}` has {} entries, expected {width}",
                row.len()
            )));
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

/// Like [`flatten`] for matrices whose rows are unlabeled (embedding dims).
fn flatten_plain(what: &str, rows: &[Vec<f64>]) -> Result<(Vec<f64>, usize), LabError> {
    let width = rows.first().map_or(0, Vec::len);
    let labels: Vec<String> = (0..rows.len()).map(|i| i.to_string()).collect();
    Ok((flatten(what, rows, &labels, width)?, width))
}

fn rows_of(values: &[f64], width: usize) -> Vec<Vec<f64>> {
    values.chunks(width).map(<[f64]>::to_vec).collect()
}

impl EncoderSpec {
    fn build(&self, given: &FiniteSpace, target: &FiniteSpace, what: &str) -> Result<Encoder, LabError> {
        Ok(match self {
            EncoderSpec::Softmax { logits } => Encoder::softmax(
                given.clone(),
                target.clone(),
                flatten(what, logits, given.labels(), target.len())?,
            )?,
            EncoderSpec::Deterministic { map } => {
                if map.len() != given.len() {
                    return Err(invalid(format!("{what}: expected {} map entries, found {}", given.len(), map.len())));
                }
                let indices = map
                    .iter()
                    .map(|l| target.index_of(l).ok_or_else(|| invalid(format!("{what}: unknown latent `{l}`"))))
                    .collect::<Result<Vec<_>, _>>()?;
                Encoder::deterministic(given.clone(), target.clone(), indices)?
            }
            EncoderSpec::Fixed { probs } => Encoder::fixed(ssvae_core::ConditionalTable::new(
                given.clone(),
                target.clone(),
                flatten(what, probs, given.labels(), target.len())?,
            )?),
        })
    }

    fn of(encoder: &Encoder) -> Self {
        let width = encoder.target().len();
        match encoder.kind() {
            EncoderKind::Softmax { logits } => EncoderSpec::Softmax {
                logits: rows_of(logits, width),
            },
            EncoderKind::Deterministic { map } => EncoderSpec::Deterministic {
                map: map.iter().map(|&k| encoder.target().label(k).to_string()).collect(),
            },
            EncoderKind::Fixed { table } => EncoderSpec::Fixed {
                probs: rows_of(table.probs(), width),
            },
        }
    }
}

impl PriorFile {
    fn build(&self, z: &FiniteSpace, zp: &FiniteSpace) -> Result<PriorSpec, LabError> {
        let (nz, nzp) = (z.len(), zp.len());
        Ok(match self {
            PriorFile::Mi {} => PriorSpec::Mi,
            PriorFile::ExplicitTable { logits } => PriorSpec::ExplicitTable {
                logits: flatten("prior logits", logits, z.labels(), nzp)?,
            },
            PriorFile::Infonce {
                coupling: CouplingSpec::Table { values },
            } => PriorSpec::InfoNce(Coupling::Table(CouplingTable::new(
                nz,
                nzp,
                flatten("coupling values", values, z.labels(), nzp)?,
            )?)),
            PriorFile::Infonce {
                coupling:
                    CouplingSpec::Bilinear {
                        z_embed,
                        z_prime_embed,
                        weight,
                    },
            } => {
                let (u, dim_z) = flatten_plain("z embeddings", z_embed)?;
                let (v, dim_zp) = flatten_plain("z' embeddings", z_prime_embed)?;
                let (w, w_cols) = flatten_plain("coupling weight", weight)?;
                if z_embed.len() != nz || z_prime_embed.len() != nzp {
                    return Err(invalid("bilinear coupling needs one embedding per latent label"));
                }
                if weight.len() != dim_z || w_cols != dim_zp {
                    return Err(invalid(format!(
                        "coupling weight must be {dim_z} x {dim_zp} to match the embeddings"
                    )));
                }
                PriorSpec::InfoNce(Coupling::Bilinear(BilinearCoupling::new(nz, dim_z, u, nzp, dim_zp, v, w)?))
            }
        })
    }

    fn of(prior: &PriorSpec, nzp: usize) -> Self {
        match prior {
            PriorSpec::Mi => PriorFile::Mi {},
            PriorSpec::ExplicitTable { logits } => PriorFile::ExplicitTable {
                logits: rows_of(logits, nzp),
            },
            PriorSpec::InfoNce(Coupling::Table(t)) => PriorFile::Infonce {
                coupling: CouplingSpec::Table {
                    values: rows_of(t.values(), nzp),
                },
            },
            PriorSpec::InfoNce(Coupling::Bilinear(b)) => PriorFile::Infonce {
                coupling: CouplingSpec::Bilinear {
                    z_embed: rows_of(b.z_embed(), b.dim_z()),
                    z_prime_embed: rows_of(b.z_prime_embed(), b.dim_z_prime()),
                    weight: rows_of(b.weight(), b.dim_z_prime()),
                },
            },
        }
    }
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("spec does not parse: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("specs always serialize");
        s.push('\n');
        s
    }

    /// Validates the model spec and builds the model.
    pub fn build(&self) -> Result<LoadedSpec, LabError> {
        let (base, factor) = match &self.data {
            DataSpec::Table { rows, cols, probs } => {
                let rs = FiniteSpace::new(rows.iter().cloned())?;
                let cs = FiniteSpace::new(cols.iter().cloned())?;
                let data = JointDistribution::new(rs.clone(), cs.clone(), flatten("data probs", probs, rows, cols.len())?)?;
                let latents = self
                    .latents
                    .as_ref()
                    .ok_or_else(|| invalid("table data needs a `latents` section"))?;
                let z = FiniteSpace::new(latents.z.iter().cloned())?;
                let zp = FiniteSpace::new(latents.z_prime.iter().cloned())?;
                let need = |e: &Option<EncoderSpec>, side| {
                    e.clone().ok_or_else(|| invalid(format!("table data needs `{side}`")))
                };
                let ec = need(&self.encoder_c, "encoder_c")?.build(&rs, &z, "encoder_c")?;
                let ex = need(&self.encoder_x, "encoder_x")?.build(&cs, &zp, "encoder_x")?;
                (ModelInstance::new(data, ec, ex, PriorSpec::Mi)?, None)
            }
            DataSpec::SharedFactor {
                s_count,
                noise_count,
                noise_level,
                latent_count,
                seed,
            } => {
                if self.latents.is_some() {
                    return Err(invalid("shared-factor data generates its own latents"));
                }
                let cfg = SharedFactorConfig {
                    latent_count: latent_count.unwrap_or(*s_count),
                    ..SharedFactorConfig::new(*s_count, *noise_count, *noise_level, *seed)
                };
                let model = SharedFactorModel::generate(&cfg)?;
                let mut inst = model.instance.clone();
                for (side, spec, what) in [(Side::C, &self.encoder_c, "encoder_c"), (Side::X, &self.encoder_x, "encoder_x")] {
                    if let Some(spec) = spec {
                        let e = inst.encoder(side);
                        let built = spec.build(e.given(), e.target(), what)?;
                        inst = inst.with_encoder(side, built)?;
                    }
                }
                (inst, Some(model))
            }
        };
        let prior = self
            .prior
            .build(base.latent_space(Side::C), base.latent_space(Side::X))?;
        Ok(LoadedSpec {
            instance: base.with_prior(prior)?,
            factor,
        })
    }

    /// The model spec of an instance, with the data written out as a table.
    pub fn from_instance(inst: &ModelInstance) -> Self {
        let data = inst.data();
        Self {
            description: None,
            data: DataSpec::Table {
                rows: data.rows().labels().to_vec(),
                cols: data.cols().labels().to_vec(),
                probs: rows_of(data.probs(), data.n_cols()),
            },
            latents: Some(LatentSpec {
                z: inst.latent_space(Side::C).labels().to_vec(),
                z_prime: inst.latent_space(Side::X).labels().to_vec(),
            }),
            encoder_c: Some(EncoderSpec::of(inst.encoder(Side::C))),
            encoder_x: Some(EncoderSpec::of(inst.encoder(Side::X))),
            prior: PriorFile::of(inst.prior(), inst.latent_shape().1),
        }
    }
}
