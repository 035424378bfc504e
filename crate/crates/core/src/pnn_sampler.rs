//! Pseudo nearest neighbors.
//!
//! A pseudo nearest neighbor is built in two moves. First the query `z` is
//! pulled a fraction `1 − α` of the way toward its hard nearest neighbor in
//! the support set, giving `z″ = z + (1 − α)(NN(z) − z)`. Then an isotropic
//! Gaussian perturbation with per-coordinate standard deviation
//! `β‖z″ − z‖` is added. Optionally the result is projected back onto the
//! unit sphere. The output is used as a constant anchor; no gradient flows
//! through it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::support_set::SupportSet;
use crate::vecspace::{check_dims, norm, normalize, Embedding};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnnConfig {
    pub alpha: f64,
    pub beta: f64,
    pub renormalize_output: bool,
}

impl Default for PnnConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            beta: 0.10,
            renormalize_output: true,
        }
    }
}

impl PnnConfig {
    /// Requires `0 < alpha < 1` and `0 <= beta < 1`.
    pub fn new(alpha: f64, beta: f64, renormalize_output: bool) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::RangeError {
                key: "alpha".into(),
                value: alpha.to_string(),
                expected: "0 < alpha < 1",
            });
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::RangeError {
                key: "beta".into(),
                value: beta.to_string(),
                expected: "0 <= beta < 1",
            });
        }
        Ok(Self {
            alpha,
            beta,
            renormalize_output,
        })
    }
}

/// `z + (1 − alpha)(nn − z)`. Endpoints `alpha ∈ {0, 1}` are accepted.
pub fn shrink_toward_nn(z: &[f64], nn: &[f64], alpha: f64) -> Result<Embedding> {
    check_dims(z.len(), nn.len())?;
    let t = 1.0 - alpha;
    Embedding::new(z.iter().zip(nn).map(|(a, b)| a + t * (b - a)).collect())
}

/// Draws `shrunk + σ·ε` with `σ = beta·‖shrunk − z‖` and `ε ~ N(0, I)`.
pub fn resample<R: Rng + ?Sized>(
    z: &[f64],
    shrunk: &[f64],
    beta: f64,
    rng: &mut R,
) -> Result<Embedding> {
    check_dims(z.len(), shrunk.len())?;
    let offset: Vec<f64> = shrunk.iter().zip(z).map(|(a, b)| a - b).collect();
    let sigma = beta * norm(&offset);
    if sigma == 0.0 {
        return Embedding::new(shrunk.to_vec());
    }
    Embedding::new(
        shrunk
            .iter()
            .map(|&m| m + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// A sampled anchor plus the hard neighbor it was derived from.
#[derive(Debug, Clone)]
pub struct PseudoNeighbor {
    pub point: Embedding,
    pub neighbor_index: usize,
    /// Insertion step of the hard neighbor.
    pub neighbor_step: u64,
}

/// Nearest neighbor, then shrinkage, then resampling, then optional
/// renormalization.
pub fn pseudo_nearest_neighbor<R: Rng + ?Sized>(
    z: &[f64],
    queue: &SupportSet,
    cfg: &PnnConfig,
    rng: &mut R,
) -> Result<PseudoNeighbor> {
    let nn = queue.nearest_neighbor(z)?;
    let shrunk = shrink_toward_nn(z, &nn.entry.embedding, cfg.alpha)?;
    let mut point = resample(z, &shrunk, cfg.beta, rng)?;
    if cfg.renormalize_output {
        point = normalize(&point)?;
    }
    Ok(PseudoNeighbor {
        point,
        neighbor_index: nn.index,
        neighbor_step: nn.entry.step,
    })
}
