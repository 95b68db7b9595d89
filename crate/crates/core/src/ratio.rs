//! Density-ratio estimation by classification.
//!
//! A binary classifier that separates samples of `p` from samples of `q` with
//! equal class priors has Bayes-optimal logit `ln(p / q)`. Here the classifier
//! is a free logit per cell of a finite space, trained against the exact
//! expected logistic loss
//!
//! ```text
//! ℓ(a) = ½ Σ_i [ p_i softplus(−a_i) + q_i softplus(a_i) ]
//! ```
//!
//! so its optimum is the exact log ratio wherever both masses are positive.
//! Cells where `min(p, q)` is at or below the mask threshold have no finite
//! optimum and are left out of training and of every comparison.
//!
//! The loss is separable and convex, so each cell takes its own
//! curvature-scaled (Newton) step with step-halving on that cell's loss. A
//! step is only accepted if the cell loss does not increase, which keeps the
//! total loss non-increasing.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::math::{ln, max_abs, sigmoid, softplus};
use crate::prob::{FiniteDistribution, JointDistribution};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioFitConfig {
    /// Convergence threshold on both the gradient max-norm and the Newton
    /// step of every active cell.
    pub tolerance: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    /// Cells with `min(p, q) <= mask_threshold` are excluded.
    pub mask_threshold: f64,
}

impl Default for RatioFitConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iters: 100_000,
            initial_step: 1.0,
            mask_threshold: 1e-9,
        }
    }
}

/// Anything with a flat list of cell masses: distributions and joints.
pub trait CellTable {
    fn masses(&self) -> &[f64];
    fn cell_label(&self, index: usize) -> String;
    fn same_cells(&self, other: &Self) -> bool;
}

impl CellTable for FiniteDistribution {
    fn masses(&self) -> &[f64] {
        self.probs()
    }

    fn cell_label(&self, index: usize) -> String {
        self.space().label(index).to_string()
    }

    fn same_cells(&self, other: &Self) -> bool {
        self.space() == other.space()
    }
}

impl CellTable for JointDistribution {
    fn masses(&self) -> &[f64] {
        self.probs()
    }

    fn cell_label(&self, index: usize) -> String {
        JointDistribution::cell_label(self, index)
    }

    fn same_cells(&self, other: &Self) -> bool {
        self.rows() == other.rows() && self.cols() == other.cols()
    }
}

/// One logit per cell; masked cells carry no logit.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularLogitClassifier {
    logits: Vec<f64>,
    active: Vec<bool>,
}

impl TabularLogitClassifier {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Logit of an active cell, `None` for masked cells.
    pub fn logit(&self, index: usize) -> Option<f64> {
        self.active[index].then(|| self.logits[index])
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.active[index]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Predicted probability that a sample in cell `index` came from `p`.
    pub fn predict_p(&self, index: usize) -> Option<f64> {
        self.logit(index).map(sigmoid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioFit {
    pub classifier: TabularLogitClassifier,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Total loss over active cells, before the first step and after every
    /// iteration.
    pub loss_history: Vec<f64>,
}

fn cell_loss(p: f64, q: f64, a: f64) -> f64 {
    0.5 * (p * softplus(-a) + q * softplus(a))
}

fn cell_gradient(p: f64, q: f64, a: f64) -> (f64, f64) {
    let s_pos = sigmoid(a);
    let s_neg = sigmoid(-a);
    let grad = 0.5 * (q * s_pos - p * s_neg);
    let curvature = 0.5 * (p + q) * s_pos * s_neg;
    (grad, curvature)
}

/// Fit on two tables over the same cells.
pub fn fit_ratio_classifier<T: CellTable>(p: &T, q: &T, config: &RatioFitConfig) -> Result<RatioFit> {
    if !p.same_cells(q) {
        return Err(Error::SpaceMismatch("ratio classifier needs two tables over the same cells"));
    }
    fit_ratio_classifier_slices(p.masses(), q.masses(), config)
}

pub fn fit_ratio_classifier_slices(p: &[f64], q: &[f64], config: &RatioFitConfig) -> Result<RatioFit> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            what: "ratio classifier tables",
            expected: p.len(),
            found: q.len(),
        });
    }
    if !(config.tolerance > 0.0 && config.initial_step > 0.0) {
        return Err(Error::InvalidArgument("tolerance and initial step must be positive".into()));
    }
    let n = p.len();
    let active: Vec<bool> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| pi.min(qi) > config.mask_threshold)
        .collect();
    let mut logits = alloc::vec![0.0; n];
    let mut losses: Vec<f64> = (0..n)
        .map(|i| if active[i] { cell_loss(p[i], q[i], 0.0) } else { 0.0 })
        .collect();
    let mut settled = alloc::vec![false; n];
    let mut loss_history = alloc::vec![losses.iter().sum::<f64>()];
    let mut grads = alloc::vec![0.0; n];

    for iteration in 0..=config.max_iters {
        let mut converged = true;
        let mut steps = alloc::vec![0.0; n];
        for i in (0..n).filter(|&i| active[i]) {
            let (g, h) = cell_gradient(p[i], q[i], logits[i]);
            grads[i] = g;
            steps[i] = if h > 0.0 { -g / h } else { -g };
            let small_step = steps[i].abs() < config.tolerance || settled[i];
            if g.abs() >= config.tolerance || !small_step {
                converged = false;
            }
        }
        if converged {
            return Ok(RatioFit {
                classifier: TabularLogitClassifier { logits, active },
                iterations: iteration,
                gradient_norm: max_abs(&grads),
                loss_history,
            });
        }
        if iteration == config.max_iters {
            break;
        }
        for i in (0..n).filter(|&i| active[i]) {
            if steps[i] == 0.0 {
                continue;
            }
            let mut t = config.initial_step;
            settled[i] = true;
            while t >= 1e-12 {
                let candidate = logits[i] + t * steps[i];
                let loss = cell_loss(p[i], q[i], candidate);
                if loss <= losses[i] {
                    logits[i] = candidate;
                    losses[i] = loss;
                    settled[i] = false;
                    break;
                }
                t *= 0.5;
            }
        }
        loss_history.push(losses.iter().sum());
    }
    Err(Error::NonConvergence {
        iterations: config.max_iters,
        gradient_norm: max_abs(&grads),
        trace: None,
    })
}

/// Exact `ln(p / q)` per cell; `None` where `min(p, q) <= threshold`.
pub fn exact_log_ratio(p: &[f64], q: &[f64], threshold: f64) -> Vec<Option<f64>> {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| (pi.min(qi) > threshold).then(|| ln(pi) - ln(qi)))
        .collect()
}

/// `Σ_i p_i · logit_i` over active cells. With a classifier fitted on a joint
/// against the product of its marginals this is the mutual information,
/// restricted to the unmasked support.
pub fn estimated_mutual_information(classifier: &TabularLogitClassifier, joint: &JointDistribution) -> Result<f64> {
    if classifier.len() != joint.probs().len() {
        return Err(Error::LengthMismatch {
            what: "classifier cells",
            expected: joint.probs().len(),
            found: classifier.len(),
        });
    }
    Ok(joint
        .probs()
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| classifier.logit(i).map(|a| p * a))
        .sum())
}
