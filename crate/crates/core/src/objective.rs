//! Contrastive losses with gradients w.r.t. the online-branch embeddings.
//!
//! All three methods share one InfoNCE row: for anchor `a` and positives
//! `z⁺_1..z⁺_n`,
//!
//! ```text
//! L_i = −log( exp(a·z⁺_i/τ) / Σ_k exp(a·z⁺_k/τ) )
//! ```
//!
//! The denominator runs over the batch positives only (the positive itself
//! included, no anchor-self term). Methods differ only in the anchor: the
//! row's own embedding (SimCLR), its hard nearest neighbor from the support
//! set (NNCLR), or a pseudo nearest neighbor (pNNCLR). Anchors are always
//! constants.

use crate::error::{Error, Result};
use crate::pnn_sampler::{pseudo_nearest_neighbor, PnnConfig};
use crate::rng::{domain, substream};
use crate::support_set::SupportSet;
use crate::vecspace::{check_dims, dot, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SimClr,
    NnClr,
    PnnClr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SimClr => "simclr",
            Method::NnClr => "nnclr",
            Method::PnnClr => "pnnclr",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "simclr" => Some(Method::SimClr),
            "nnclr" => Some(Method::NnClr),
            "pnnclr" => Some(Method::PnnClr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    pub method: Method,
    pub symmetrize: bool,
    /// Sum per-item losses instead of averaging them.
    pub paper_literal_sums: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            method: Method::PnnClr,
            symmetrize: true,
            paper_literal_sums: false,
        }
    }
}

impl LossConfig {
    fn reduce(&self, per_item: &[f64]) -> (f64, f64) {
        let sum: f64 = per_item.iter().sum();
        if self.paper_literal_sums || per_item.is_empty() {
            (sum, 1.0)
        } else {
            let n = per_item.len() as f64;
            (sum / n, 1.0 / n)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub per_item_losses: Vec<f64>,
    pub nn_class_match_rate: Option<f64>,
    /// Mean `‖anchor − z‖` over anchors built from the support set.
    pub mean_displacement: Option<f64>,
}

/// Loss of one batch term plus `dL/dz⁺`.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub report: LossReport,
    pub grad_positives: DenseMatrix,
}

/// `(loss, dL/dlogits)` for a single softmax row with target `i`.
pub fn info_nce_logits(logits: &[f64], i: usize) -> Result<(f64, Vec<f64>)> {
    if i >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[i];
    let mut grad: Vec<f64> = logits.iter().map(|s| (s - lse).exp()).collect();
    grad[i] -= 1.0;
    Ok((loss, grad))
}

/// One InfoNCE row. Returns the loss and `dL_i/dz⁺_k` for every row `k`.
pub fn info_nce_row(
    anchor: &[f64],
    positives: &DenseMatrix,
    i: usize,
    temperature: f64,
) -> Result<(f64, DenseMatrix)> {
    check_dims(positives.cols(), anchor.len())?;
    let logits: Vec<f64> = positives
        .row_iter()
        .map(|p| dot(anchor, p) / temperature)
        .collect();
    let (loss, dlogits) = info_nce_logits(&logits, i)?;
    let mut grad = DenseMatrix::zeros(positives.rows(), positives.cols());
    for (k, g) in dlogits.iter().enumerate() {
        for (o, a) in grad.row_mut(k).iter_mut().zip(anchor) {
            *o = g * a / temperature;
        }
    }
    Ok((loss, grad))
}

/// Batch loss with anchor row `i` paired to positive row `i`.
pub fn info_nce_batch(
    anchors: &DenseMatrix,
    positives: &DenseMatrix,
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    if anchors.rows() != positives.rows() || anchors.cols() != positives.cols() {
        return Err(Error::ShapeMismatch(format!(
            "anchors {}x{} vs positives {}x{}",
            anchors.rows(),
            anchors.cols(),
            positives.rows(),
            positives.cols()
        )));
    }
    let n = positives.rows();
    let tau = cfg.temperature;
    let mut per_item = Vec::with_capacity(n);
    let mut dlogits = Vec::with_capacity(n);
    for (i, a) in anchors.row_iter().enumerate() {
        let logits: Vec<f64> = positives.row_iter().map(|p| dot(a, p) / tau).collect();
        let (loss, g) = info_nce_logits(&logits, i)?;
        per_item.push(loss);
        dlogits.push(g);
    }
    let (loss, weight) = cfg.reduce(&per_item);
    // dL/dz⁺_k = weight/τ · Σ_i g_ik a_i
    let mut grad = DenseMatrix::zeros(n, positives.cols());
    for (i, g) in dlogits.iter().enumerate() {
        let a = anchors.row(i);
        for (k, &gik) in g.iter().enumerate() {
            let c = weight * gik / tau;
            for (o, av) in grad.row_mut(k).iter_mut().zip(a) {
                *o += c * av;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {loss}")));
    }
    Ok(BatchLoss {
        report: LossReport {
            loss,
            per_item_losses: per_item,
            nn_class_match_rate: None,
            mean_displacement: None,
        },
        grad_positives: grad,
    })
}

/// How anchors are derived from the target-branch embeddings.
#[derive(Debug, Clone, Copy)]
pub enum AnchorRule<'a> {
    Identity,
    Nearest(&'a SupportSet),
    Pseudo {
        queue: &'a SupportSet,
        cfg: PnnConfig,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct Anchors {
    pub matrix: DenseMatrix,
    /// Insertion step of the support-set entry behind each anchor.
    pub neighbor_steps: Vec<u64>,
    pub mean_displacement: Option<f64>,
}

/// Builds one anchor per row of `z`. `view` keys the noise substreams.
pub fn select_anchors(z: &DenseMatrix, rule: &AnchorRule<'_>, view: u64) -> Result<Anchors> {
    let mut matrix = z.clone();
    let mut neighbor_steps = Vec::new();
    match rule {
        AnchorRule::Identity => {
            return Ok(Anchors {
                matrix,
                neighbor_steps,
                mean_displacement: None,
            })
        }
        AnchorRule::Nearest(queue) => {
            for i in 0..z.rows() {
                let nn = queue.nearest_neighbor(z.row(i))?;
                matrix.row_mut(i).copy_from_slice(&nn.entry.embedding);
                neighbor_steps.push(nn.entry.step);
            }
        }
        AnchorRule::Pseudo { queue, cfg, seed } => {
            for i in 0..z.rows() {
                let mut rng = substream(*seed, &[domain::PNN, view, i as u64]);
                let p = pseudo_nearest_neighbor(z.row(i), queue, cfg, &mut rng)?;
                matrix.row_mut(i).copy_from_slice(&p.point);
                neighbor_steps.push(p.neighbor_step);
            }
        }
    }
    let total: f64 = z
        .row_iter()
        .zip(matrix.row_iter())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    let mean_displacement = Some(if z.rows() == 0 {
        0.0
    } else {
        total / z.rows() as f64
    });
    Ok(Anchors {
        matrix,
        neighbor_steps,
        mean_displacement,
    })
}

fn with_anchors(anchors: Anchors, z_plus: &DenseMatrix, cfg: &LossConfig) -> Result<BatchLoss> {
    let mut out = info_nce_batch(&anchors.matrix, z_plus, cfg)?;
    out.report.mean_displacement = anchors.mean_displacement;
    Ok(out)
}

pub fn loss_simclr(z: &DenseMatrix, z_plus: &DenseMatrix, cfg: &LossConfig) -> Result<BatchLoss> {
    with_anchors(select_anchors(z, &AnchorRule::Identity, 0)?, z_plus, cfg)
}

pub fn loss_nnclr(
    z: &DenseMatrix,
    z_plus: &DenseMatrix,
    queue: &SupportSet,
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    with_anchors(select_anchors(z, &AnchorRule::Nearest(queue), 0)?, z_plus, cfg)
}

pub fn loss_pnnclr(
    z: &DenseMatrix,
    z_plus: &DenseMatrix,
    queue: &SupportSet,
    pnn: &PnnConfig,
    cfg: &LossConfig,
    seed: u64,
) -> Result<BatchLoss> {
    let rule = AnchorRule::Pseudo {
        queue,
        cfg: *pnn,
        seed,
    };
    with_anchors(select_anchors(z, &rule, 0)?, z_plus, cfg)
}

/// Total loss over both view orderings and the gradient for each view's
/// online embeddings.
#[derive(Debug, Clone)]
pub struct SymmetricLoss {
    pub report: LossReport,
    pub grad_v1_plus: DenseMatrix,
    pub grad_v2_plus: DenseMatrix,
    pub neighbor_steps: Vec<u64>,
}

/// `L_b(v1, v2) + L_b(v2, v1)` with anchors already fixed. The first term
/// pairs `anchors_v1` with `v2_plus`. Without `cfg.symmetrize` only the first
/// term is used.
pub fn symmetric_loss_with_anchors(
    anchors_v1: &DenseMatrix,
    v2_plus: &DenseMatrix,
    anchors_v2: &DenseMatrix,
    v1_plus: &DenseMatrix,
    cfg: &LossConfig,
) -> Result<SymmetricLoss> {
    let forward = info_nce_batch(anchors_v1, v2_plus, cfg)?;
    if !cfg.symmetrize {
        return Ok(SymmetricLoss {
            grad_v1_plus: DenseMatrix::zeros(v1_plus.rows(), v1_plus.cols()),
            grad_v2_plus: forward.grad_positives,
            report: forward.report,
            neighbor_steps: Vec::new(),
        });
    }
    let swapped = info_nce_batch(anchors_v2, v1_plus, cfg)?;
    let per_item_losses = forward
        .report
        .per_item_losses
        .iter()
        .zip(&swapped.report.per_item_losses)
        .map(|(a, b)| a + b)
        .collect();
    Ok(SymmetricLoss {
        report: LossReport {
            loss: forward.report.loss + swapped.report.loss,
            per_item_losses,
            nn_class_match_rate: None,
            mean_displacement: None,
        },
        grad_v1_plus: swapped.grad_positives,
        grad_v2_plus: forward.grad_positives,
        neighbor_steps: Vec::new(),
    })
}

/// Symmetrized loss with anchors selected from the target embeddings
/// `v1_z`, `v2_z` by `rule`.
pub fn loss_symmetrized(
    v1_z: &DenseMatrix,
    v1_plus: &DenseMatrix,
    v2_z: &DenseMatrix,
    v2_plus: &DenseMatrix,
    rule: &AnchorRule<'_>,
    cfg: &LossConfig,
) -> Result<SymmetricLoss> {
    let a1 = select_anchors(v1_z, rule, 0)?;
    let a2 = if cfg.symmetrize {
        select_anchors(v2_z, rule, 1)?
    } else {
        Anchors {
            matrix: v2_z.clone(),
            neighbor_steps: Vec::new(),
            mean_displacement: None,
        }
    };
    let mut out = symmetric_loss_with_anchors(&a1.matrix, v2_plus, &a2.matrix, v1_plus, cfg)?;
    out.report.mean_displacement = match (a1.mean_displacement, a2.mean_displacement) {
        (Some(x), Some(y)) => Some(0.5 * (x + y)),
        (x, None) => x,
        (None, y) => y,
    };
    out.neighbor_steps = a1.neighbor_steps;
    out.neighbor_steps.extend(a2.neighbor_steps);
    Ok(out)
}
