//! Training loop: views, online/target passes, anchor retrieval, loss,
//! optimizer step, EMA target update, queue insertion and checkpoints.
//!
//! Within a step the order is fixed:
//!
//! 1. draw two augmented views per sample;
//! 2. online forward on both views (the positives);
//! 3. target forward on both views (constants; the online outputs when no
//!    target network is used);
//! 4. anchors from the support set, before anything is inserted;
//! 5. symmetrized loss and gradients for the online network;
//! 6. optimizer step;
//! 7. EMA update of the target;
//! 8. insertion of the first view's target embeddings into the queue.
//!
//! SimCLR skips the queue and the target network.

mod checkpoint;
mod config;
mod optim;

use std::io::Write;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;

use crate::datakit::LabeledDataset;
use crate::encoder::{backward, forward, init_params, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::objective::{loss_symmetrized, AnchorRule, LossReport, Method};
use crate::rng::{derive_key, domain, substream};
use crate::support_set::{SupportEntry, SupportSet};
use crate::vecspace::{normalize, DenseMatrix};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{OptimizerConfig, OptimizerKind, TrainConfig};
pub use optim::Optimizer;

/// `(x + ε) ⊙ m` with `ε ~ N(0, noise_std²·I)` and each coordinate dropped
/// (set to 0) with probability `mask_prob`.
pub fn augment<R: Rng + ?Sized>(x: &[f64], noise_std: f64, mask_prob: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let eps: f64 = rng.sample(StandardNormal);
            let keep = rng.random::<f64>() >= mask_prob;
            if keep {
                v + noise_std * eps
            } else {
                0.0
            }
        })
        .collect()
}

/// `target ← λ·target + (1 − λ)·online` over the trainable tensors.
pub fn ema_update(target: &mut EncoderParams, online: &EncoderParams, lambda: f64) -> Result<()> {
    target.check_same_shape(online)?;
    for (t, o) in target.trainable_mut().into_iter().zip(online.trainable()) {
        for (tv, &ov) in t.iter_mut().zip(o) {
            *tv = lambda * *tv + (1.0 - lambda) * ov;
        }
    }
    Ok(())
}

fn add_into(acc: &mut EncoderParams, g: &EncoderParams) {
    for (a, b) in acc.trainable_mut().into_iter().zip(g.trainable()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Outcome of one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: LossReport,
    /// Insertion steps of the support-set entries used as anchors.
    pub retrieved_steps: Vec<u64>,
    pub lr: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub nn_class_match_rate: Option<f64>,
    pub mean_displacement: Option<f64>,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "step,loss,nn_class_match_rate,mean_displacement,lr";

impl From<&StepReport> for LogRow {
    fn from(r: &StepReport) -> Self {
        Self {
            step: r.step,
            loss: r.loss.loss,
            nn_class_match_rate: r.loss.nn_class_match_rate,
            mean_displacement: r.loss.mean_displacement,
            lr: r.lr,
        }
    }
}

impl LogRow {
    /// Plain decimal, shortest round-trip digits; empty for missing values.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.step,
            self.loss,
            opt(self.nn_class_match_rate),
            opt(self.mean_displacement),
            self.lr
        )
    }
}

pub fn write_log_csv<W: Write>(mut out: W, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()
}

/// Mutable part of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub online: EncoderParams,
    pub target: Option<EncoderParams>,
    pub optimizer: Optimizer,
    pub queue: SupportSet,
}

impl TrainState {
    pub fn new(config: &TrainConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let arch = config.arch(input_dim);
        let online = init_params(&arch, &mut substream(config.seed, &[domain::INIT]))?;
        let target = config.uses_target_network().then(|| online.clone());
        Ok(Self {
            step: 0,
            optimizer: Optimizer::new(config.optimizer, &online),
            target,
            online,
            queue: SupportSet::new(config.queue_capacity)?,
        })
    }

    fn views(&self, config: &TrainConfig, x: &DenseMatrix, view: u64) -> DenseMatrix {
        let mut out = x.clone();
        for i in 0..x.rows() {
            let mut rng = substream(config.seed, &[domain::AUGMENT, self.step, view, i as u64]);
            let v = augment(x.row(i), config.noise_std, config.mask_prob, &mut rng);
            out.row_mut(i).copy_from_slice(&v);
        }
        out
    }

    /// Runs one step on the batch `x`. `labels` only feed the class-match
    /// diagnostic and the labels stored alongside queue entries.
    pub fn train_step(
        &mut self,
        config: &TrainConfig,
        x: &DenseMatrix,
        labels: &[u32],
    ) -> Result<StepReport> {
        let step = self.step;
        let abort = |what: String| Error::NonFinite(format!("step {step}: {what}"));
        let v1 = self.views(config, x, 0);
        let v2 = self.views(config, x, 1);

        let (zp1, tr1) = forward(&self.online, &v1, Mode::Train)?;
        let (zp2, tr2) = forward(&self.online, &v2, Mode::Train)?;
        let (z1, z2) = match &mut self.target {
            Some(target) => {
                let (z1, t1) = forward(target, &v1, Mode::Train)?;
                let (z2, t2) = forward(target, &v2, Mode::Train)?;
                target.update_running_stats(&t1);
                target.update_running_stats(&t2);
                (z1, z2)
            }
            None => (zp1.clone(), zp2.clone()),
        };

        let use_queue = config.uses_queue() && !self.queue.is_empty();
        let rule = match config.method {
            _ if !use_queue => AnchorRule::Identity,
            Method::SimClr => AnchorRule::Identity,
            Method::NnClr => AnchorRule::Nearest(&self.queue),
            Method::PnnClr => AnchorRule::Pseudo {
                queue: &self.queue,
                cfg: config.pnn(),
                seed: derive_key(config.seed, &[domain::PNN, self.step]),
            },
        };
        let class_match = if use_queue && self.queue.entries().all(|e| e.label.is_some()) {
            Some(
                self.queue
                    .class_match_rate(z1.row_iter().zip(labels.iter().copied()))?,
            )
        } else {
            None
        };
        let sym = loss_symmetrized(&z1, &zp1, &z2, &zp2, &rule, &config.loss())
            .map_err(|e| match e {
                Error::NonFinite(m) => abort(m),
                other => other,
            })?;

        let mut grads = backward(&self.online, &tr1, &sym.grad_v1_plus)?;
        add_into(&mut grads, &backward(&self.online, &tr2, &sym.grad_v2_plus)?);
        if !grads.is_finite() {
            return Err(abort(format!(
                "non-finite gradient (loss {}, per-item {:?})",
                sym.report.loss, sym.report.per_item_losses
            )));
        }
        self.online.update_running_stats(&tr1);
        self.online.update_running_stats(&tr2);
        self.optimizer.step(&mut self.online, &grads)?;
        if !self.online.is_finite() {
            return Err(abort("online parameters diverged".into()));
        }
        if let Some(target) = &mut self.target {
            ema_update(target, &self.online, config.lambda)?;
        }
        if config.uses_queue() {
            let entries = z1
                .row_iter()
                .zip(labels)
                .map(|(r, &l)| Ok(SupportEntry::new(normalize(r)?, Some(l), self.step)))
                .collect::<Result<Vec<_>>>()?;
            self.queue.insert_batch(entries)?;
        }

        let mut loss = sym.report;
        loss.nn_class_match_rate = class_match;
        let report = StepReport {
            step: self.step,
            loss,
            retrieved_steps: sym.neighbor_steps,
            lr: config.optimizer.lr,
        };
        self.step += 1;
        Ok(report)
    }
}

/// Drives a [`TrainState`] over shuffled mini-batches of a dataset.
///
/// Each epoch visits a fresh permutation derived from `(seed, epoch)`; the
/// final ragged batch is dropped.
pub struct Trainer<'d> {
    config: TrainConfig,
    dataset: &'d LabeledDataset,
    state: TrainState,
    order: Option<(u64, Vec<usize>)>,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, dataset: &'d LabeledDataset) -> Result<Self> {
        let state = TrainState::new(&config, dataset.dim())?;
        Self::with_state(config, dataset, state)
    }

    pub fn resume(checkpoint: Checkpoint, dataset: &'d LabeledDataset) -> Result<Self> {
        if checkpoint.input_dim != dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: checkpoint.input_dim,
                got: dataset.dim(),
            });
        }
        Self::with_state(checkpoint.config, dataset, checkpoint.state)
    }

    fn with_state(config: TrainConfig, dataset: &'d LabeledDataset, state: TrainState) -> Result<Self> {
        if dataset.len() < config.batch_size {
            return Err(Error::InvalidConfig(format!(
                "dataset has {} samples, fewer than batch_size {}",
                dataset.len(),
                config.batch_size
            )));
        }
        Ok(Self {
            config,
            dataset,
            state,
            order: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn batches_per_epoch(&self) -> u64 {
        (self.dataset.len() / self.config.batch_size) as u64
    }

    /// Sample indices of the batch for the current step.
    pub fn batch_indices(&mut self) -> Vec<usize> {
        let per_epoch = self.batches_per_epoch();
        let epoch = self.state.step / per_epoch;
        let pos = (self.state.step % per_epoch) as usize;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.dataset.len()).collect();
            perm.shuffle(&mut substream(self.config.seed, &[domain::SHUFFLE, epoch]));
            self.order = Some((epoch, perm));
        }
        let perm = &self.order.as_ref().expect("set above").1;
        let b = self.config.batch_size;
        perm[pos * b..(pos + 1) * b].to_vec()
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let idx = self.batch_indices();
        let x = self.dataset.samples().select_rows(&idx);
        let labels: Vec<u32> = idx.iter().map(|&i| self.dataset.labels()[i]).collect();
        self.state.train_step(&self.config, &x, &labels)
    }

    /// Steps until `config.steps` (or `until`, if smaller), calling
    /// `on_step` after every step. The callback may write checkpoints.
    pub fn run(
        &mut self,
        until: Option<u64>,
        mut on_step: impl FnMut(&Self, &StepReport) -> Result<()>,
    ) -> Result<()> {
        let end = until.map_or(self.config.steps, |u| u.min(self.config.steps));
        while self.state.step < end {
            let report = self.step()?;
            on_step(self, &report)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            input_dim: self.dataset.dim(),
            state: self.state.clone(),
        }
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            input_dim: self.dataset.dim(),
            config: self.config,
            state: self.state,
        }
    }
}

/// Full run from initialization; returns the final checkpoint and the log.
pub fn train(config: &TrainConfig, dataset: &LabeledDataset) -> Result<(Checkpoint, Vec<LogRow>)> {
    let mut trainer = Trainer::new(config.clone(), dataset)?;
    let mut log = Vec::with_capacity(config.steps as usize);
    trainer.run(None, |_, r| {
        log.push(LogRow::from(r));
        Ok(())
    })?;
    Ok((trainer.into_checkpoint(), log))
}
