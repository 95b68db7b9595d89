//! Exact algebra over finite probability tables.
//!
//! Tables are validated on construction: entries must be finite and
//! non-negative, and every distribution (or conditional row) must sum to one
//! within [`NORMALIZATION_TOL`]. Inputs that fail are rejected, never
//! renormalized.
//!
//! All logarithms are natural. Terms with zero probability contribute zero
//! (`0 ln 0 = 0`); a divergence whose reference assigns zero mass where the
//! other side does not is an [`Error::AbsoluteContinuity`] error rather than
//! an infinite value.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::math::{ln, xlogx_over_y};
use crate::{Error, Result};

/// Tolerance on the total mass of every validated table.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// An ordered set of distinct labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteSpace {
    labels: Arc<[String]>,
}

impl FiniteSpace {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::EmptySpace);
        }
        let mut seen = BTreeSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self {
            labels: labels.into(),
        })
    }

    /// Labels `prefix0 .. prefix{n-1}`.
    pub fn indexed(prefix: &str, n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| format!("{prefix}{i}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false; spaces hold at least one label.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Which index of a two-dimensional table is kept (for marginals) or
/// conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Col,
}

fn validate_entries<'a>(
    what: &'static str,
    values: &[f64],
    label: impl Fn(usize) -> String + 'a,
) -> Result<f64> {
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what,
                label: label(i),
                value: v,
            });
        }
        if v < 0.0 {
            return Err(Error::NegativeProbability {
                what,
                label: label(i),
                value: v,
            });
        }
        sum += v;
    }
    Ok(sum)
}

fn check_sum(what: impl Into<String>, sum: f64) -> Result<()> {
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized {
            what: what.into(),
            sum,
        });
    }
    Ok(())
}

/// A normalized probability vector over a [`FiniteSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    space: FiniteSpace,
    probs: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(space: FiniteSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.len() {
            return Err(Error::LengthMismatch {
                what: "distribution",
                expected: space.len(),
                found: probs.len(),
            });
        }
        let sum = validate_entries("distribution", &probs, |i| space.label(i).to_string())?;
        check_sum("distribution", sum)?;
        Ok(Self { space, probs })
    }

    pub fn uniform(space: FiniteSpace) -> Self {
        let n = space.len();
        Self {
            space,
            probs: alloc::vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(space: FiniteSpace, index: usize) -> Self {
        let mut probs = alloc::vec![0.0; space.len()];
        probs[index] = 1.0;
        Self { space, probs }
    }

    pub fn space(&self) -> &FiniteSpace {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Outer product `self ⊗ other` as a joint with `self` on the rows.
    pub fn product(&self, other: &FiniteDistribution) -> JointDistribution {
        let probs = self
            .probs
            .iter()
            .flat_map(|&p| other.probs.iter().map(move |&q| p * q))
            .collect();
        JointDistribution {
            rows: self.space.clone(),
            cols: other.space.clone(),
            probs,
        }
    }
}

/// A normalized probability table over `rows × cols`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    rows: FiniteSpace,
    cols: FiniteSpace,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(rows: FiniteSpace, cols: FiniteSpace, probs: Vec<f64>) -> Result<Self> {
        let expected = rows.len() * cols.len();
        if probs.len() != expected {
            return Err(Error::LengthMismatch {
                what: "joint table",
                expected,
                found: probs.len(),
            });
        }
        let nc = cols.len();
        let sum = validate_entries("joint table", &probs, |i| {
            format!("({}, {})", rows.label(i / nc), cols.label(i % nc))
        })?;
        check_sum("joint table", sum)?;
        Ok(Self { rows, cols, probs })
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows(rows: FiniteSpace, cols: FiniteSpace, table: &[Vec<f64>]) -> Result<Self> {
        if table.len() != rows.len() {
            return Err(Error::LengthMismatch {
                what: "joint table rows",
                expected: rows.len(),
                found: table.len(),
            });
        }
        let mut probs = Vec::with_capacity(rows.len() * cols.len());
        for row in table {
            if row.len() != cols.len() {
                return Err(Error::LengthMismatch {
                    what: "joint table row",
                    expected: cols.len(),
                    found: row.len(),
                });
            }
            probs.extend_from_slice(row);
        }
        Self::new(rows, cols, probs)
    }

    pub fn rows(&self) -> &FiniteSpace {
        &self.rows
    }

    pub fn cols(&self) -> &FiniteSpace {
        &self.cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.cols.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let nc = self.cols.len();
        &self.probs[row * nc..(row + 1) * nc]
    }

    /// Label of the flattened cell `index`, formatted as `(row, col)`.
    pub fn cell_label(&self, index: usize) -> String {
        let nc = self.cols.len();
        format!("({}, {})", self.rows.label(index / nc), self.cols.label(index % nc))
    }

    pub fn transpose(&self) -> JointDistribution {
        let (nr, nc) = (self.n_rows(), self.n_cols());
        let mut probs = alloc::vec![0.0; nr * nc];
        for i in 0..nr {
            for j in 0..nc {
                probs[j * nr + i] = self.probs[i * nc + j];
            }
        }
        JointDistribution {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            probs,
        }
    }

    /// Distribution of the kept axis: `Axis::Row` sums over columns.
    pub fn marginalize(&self, keep: Axis) -> FiniteDistribution {
        let (nr, nc) = (self.n_rows(), self.n_cols());
        match keep {
            Axis::Row => FiniteDistribution {
                space: self.rows.clone(),
                probs: (0..nr).map(|i| self.row(i).iter().sum()).collect(),
            },
            Axis::Col => {
                let mut probs = alloc::vec![0.0; nc];
                for i in 0..nr {
                    for (acc, &p) in probs.iter_mut().zip(self.row(i)) {
                        *acc += p;
                    }
                }
                FiniteDistribution {
                    space: self.cols.clone(),
                    probs,
                }
            }
        }
    }

    /// Conditional of the other axis given `given`.
    ///
    /// Rows whose given-label has zero probability are kept but flagged
    /// undefined; reading one yields [`Error::ZeroMarginal`].
    pub fn condition(&self, given: Axis) -> ConditionalTable {
        let oriented = match given {
            Axis::Row => self.clone(),
            Axis::Col => self.transpose(),
        };
        let marginal = oriented.marginalize(Axis::Row);
        let nt = oriented.n_cols();
        let mut probs = Vec::with_capacity(oriented.probs.len());
        let mut defined = Vec::with_capacity(oriented.n_rows());
        for (i, &m) in marginal.probs.iter().enumerate() {
            if m > 0.0 {
                probs.extend(oriented.row(i).iter().map(|&p| p / m));
                defined.push(true);
            } else {
                probs.extend(core::iter::repeat_n(0.0, nt));
                defined.push(false);
            }
        }
        ConditionalTable {
            given: oriented.rows,
            target: oriented.cols,
            probs,
            defined,
        }
    }

    /// KL divergence over the flattened grid.
    pub fn kl_divergence(&self, other: &JointDistribution) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::SpaceMismatch("joint tables have different spaces"));
        }
        kl_slices(&self.probs, &other.probs, |i| self.cell_label(i))
    }
}

/// A row-stochastic table `target | given`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    given: FiniteSpace,
    target: FiniteSpace,
    probs: Vec<f64>,
    defined: Vec<bool>,
}

impl ConditionalTable {
    /// Validates each row; the error names the offending given-label.
    pub fn new(given: FiniteSpace, target: FiniteSpace, probs: Vec<f64>) -> Result<Self> {
        let (ng, nt) = (given.len(), target.len());
        if probs.len() != ng * nt {
            return Err(Error::LengthMismatch {
                what: "conditional table",
                expected: ng * nt,
                found: probs.len(),
            });
        }
        for g in 0..ng {
            let row = &probs[g * nt..(g + 1) * nt];
            let sum = validate_entries("conditional table", row, |j| {
                format!("{} | {}", target.label(j), given.label(g))
            })?;
            check_sum(format!("conditional row `{}`", given.label(g)), sum)?;
        }
        Ok(Self {
            given,
            target,
            probs,
            defined: alloc::vec![true; ng],
        })
    }

    pub fn from_rows(given: FiniteSpace, target: FiniteSpace, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != given.len() {
            return Err(Error::LengthMismatch {
                what: "conditional table rows",
                expected: given.len(),
                found: rows.len(),
            });
        }
        let mut probs = Vec::with_capacity(given.len() * target.len());
        for row in rows {
            if row.len() != target.len() {
                return Err(Error::LengthMismatch {
                    what: "conditional table row",
                    expected: target.len(),
                    found: row.len(),
                });
            }
            probs.extend_from_slice(row);
        }
        Self::new(given, target, probs)
    }

    /// Rows already known to be normalized (softmax outputs, one-hot rows).
    pub(crate) fn from_trusted(given: FiniteSpace, target: FiniteSpace, probs: Vec<f64>) -> Self {
        let ng = given.len();
        Self {
            given,
            target,
            probs,
            defined: alloc::vec![true; ng],
        }
    }

    pub fn given(&self) -> &FiniteSpace {
        &self.given
    }

    pub fn target(&self) -> &FiniteSpace {
        &self.target
    }

    pub fn is_defined(&self, given: usize) -> bool {
        self.defined[given]
    }

    pub fn row(&self, given: usize) -> Result<&[f64]> {
        if !self.defined[given] {
            return Err(Error::ZeroMarginal(self.given.label(given).to_string()));
        }
        let nt = self.target.len();
        Ok(&self.probs[given * nt..(given + 1) * nt])
    }

    /// Raw row-major storage; undefined rows read as zeros.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, given: usize, target: usize) -> f64 {
        self.probs[given * self.target.len() + target]
    }

    /// `Σ_g marginal(g) · self(t | g)`, the distribution pushed through the table.
    pub fn push_forward(&self, marginal: &FiniteDistribution) -> Result<FiniteDistribution> {
        if marginal.space != self.given {
            return Err(Error::SpaceMismatch("marginal space is not the given space"));
        }
        let nt = self.target.len();
        let mut probs = alloc::vec![0.0; nt];
        for (g, &m) in marginal.probs.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let row = self.row(g)?;
            for (acc, &p) in probs.iter_mut().zip(row) {
                *acc += m * p;
            }
        }
        Ok(FiniteDistribution {
            space: self.target.clone(),
            probs,
        })
    }

    /// Joint `marginal(g) · self(t | g)` with the given space on the rows.
    pub fn compose(&self, marginal: &FiniteDistribution) -> Result<JointDistribution> {
        if marginal.space != self.given {
            return Err(Error::SpaceMismatch("marginal space is not the given space"));
        }
        let nt = self.target.len();
        let mut probs = Vec::with_capacity(self.probs.len());
        for (g, &m) in marginal.probs.iter().enumerate() {
            if m == 0.0 {
                probs.extend(core::iter::repeat_n(0.0, nt));
            } else {
                probs.extend(self.row(g)?.iter().map(|&p| m * p));
            }
        }
        Ok(JointDistribution {
            rows: self.given.clone(),
            cols: self.target.clone(),
            probs,
        })
    }
}

fn kl_slices(p: &[f64], q: &[f64], label: impl Fn(usize) -> String) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::AbsoluteContinuity(label(i)));
            }
            total += xlogx_over_y(pi, qi);
        }
    }
    Ok(total.max(0.0))
}

/// `KL(p ‖ q) = Σ p ln(p / q)` in nats.
pub fn kl_divergence(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    if p.space != q.space {
        return Err(Error::SpaceMismatch("distributions have different spaces"));
    }
    kl_slices(&p.probs, &q.probs, |i| p.space.label(i).to_string())
}

/// Shannon entropy in nats.
pub fn entropy(p: &FiniteDistribution) -> f64 {
    let h: f64 = p
        .probs
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * ln(x))
        .sum();
    h.max(0.0)
}

/// Mutual information between the row and column variables of `joint`, as
/// the double sum `Σ p(i,j) ln[p(i,j) / (p(i) p(j))]`.
pub fn mutual_information(joint: &JointDistribution) -> f64 {
    let rows = joint.marginalize(Axis::Row);
    let cols = joint.marginalize(Axis::Col);
    let mut total = 0.0;
    for i in 0..joint.n_rows() {
        for j in 0..joint.n_cols() {
            let p = joint.get(i, j);
            if p > 0.0 {
                total += p * (ln(p) - ln(rows.probs[i]) - ln(cols.probs[j]));
            }
        }
    }
    total.max(0.0)
}

/// Marginal-product distribution `p(row) p(col)` of a joint.
pub fn product_of_marginals(joint: &JointDistribution) -> JointDistribution {
    joint
        .marginalize(Axis::Row)
        .product(&joint.marginalize(Axis::Col))
}
