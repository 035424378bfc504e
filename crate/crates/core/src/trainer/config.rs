use std::fmt::Write as _;

use crate::encoder::{Activation, EncoderArch};
use crate::error::{Error, Result};
use crate::objective::{LossConfig, Method};
use crate::pnn_sampler::PnnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// SGD momentum.
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    /// EMA coefficient of the target network.
    pub lambda: f64,
    /// Smooth weight update (EMA target network). `None` picks the method
    /// default: on for pNNCLR, off for SimCLR and NNCLR.
    pub swu: Option<bool>,
    pub batch_size: usize,
    pub queue_capacity: usize,
    pub hidden_dims: Vec<usize>,
    pub projection_dim: usize,
    pub activation: Activation,
    pub batchnorm: bool,
    pub optimizer: OptimizerConfig,
    pub steps: u64,
    pub seed: u64,
    pub noise_std: f64,
    pub mask_prob: f64,
    pub renormalize_output: bool,
    pub paper_literal_sums: bool,
    pub symmetrize: bool,
    /// Checkpoint interval in steps, 0 for none.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::PnnClr,
            alpha: 0.25,
            beta: 0.10,
            tau: 0.1,
            lambda: 0.99,
            swu: None,
            batch_size: 64,
            queue_capacity: 1024,
            hidden_dims: vec![64, 64],
            projection_dim: 16,
            activation: Activation::Relu,
            batchnorm: true,
            optimizer: OptimizerConfig::default(),
            steps: 2000,
            seed: 0,
            noise_std: 1.0,
            mask_prob: 0.3,
            renormalize_output: true,
            paper_literal_sums: false,
            symmetrize: true,
            checkpoint_every: 0,
        }
    }
}

fn range_err(key: &str, value: impl ToString, expected: &'static str) -> Error {
    Error::RangeError {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    }
}

impl TrainConfig {
    pub fn uses_target_network(&self) -> bool {
        match self.method {
            Method::SimClr => false,
            _ => self.swu.unwrap_or(self.method == Method::PnnClr),
        }
    }

    pub fn uses_queue(&self) -> bool {
        self.method != Method::SimClr
    }

    pub fn arch(&self, input_dim: usize) -> EncoderArch {
        EncoderArch {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            projection_dim: self.projection_dim,
            activation: self.activation,
            use_batchnorm_in_head: self.batchnorm,
        }
    }

    pub fn pnn(&self) -> PnnConfig {
        PnnConfig {
            alpha: self.alpha,
            beta: self.beta,
            renormalize_output: self.renormalize_output,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            temperature: self.tau,
            method: self.method,
            symmetrize: self.symmetrize,
            paper_literal_sums: self.paper_literal_sums,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(range_err("alpha", self.alpha, "0 < alpha < 1"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(range_err("beta", self.beta, "0 <= beta < 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(range_err("tau", self.tau, "tau > 0"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(range_err("lambda", self.lambda, "0 <= lambda <= 1"));
        }
        if self.batch_size == 0 {
            return Err(range_err("batch_size", 0, "batch_size >= 1"));
        }
        if self.queue_capacity == 0 {
            return Err(range_err("queue_capacity", 0, "queue_capacity >= 1"));
        }
        if self.projection_dim == 0 {
            return Err(range_err("projection_dim", 0, "projection_dim >= 1"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(range_err("hidden_dims", "0", "positive widths"));
        }
        if self.batchnorm && self.hidden_dims.is_empty() {
            return Err(Error::InvalidConfig(
                "batchnorm = true needs at least one hidden layer".into(),
            ));
        }
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(range_err("lr", o.lr, "lr > 0"));
        }
        if !(0.0..1.0).contains(&o.beta1) {
            return Err(range_err("beta1", o.beta1, "0 <= beta1 < 1"));
        }
        if !(0.0..1.0).contains(&o.beta2) {
            return Err(range_err("beta2", o.beta2, "0 <= beta2 < 1"));
        }
        if o.eps.is_nan() || o.eps <= 0.0 {
            return Err(range_err("eps", o.eps, "eps > 0"));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(range_err("momentum", o.momentum, "0 <= momentum < 1"));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(range_err("weight_decay", o.weight_decay, "weight_decay >= 0"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(range_err("noise_std", self.noise_std, "noise_std >= 0"));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(range_err("mask_prob", self.mask_prob, "0 <= mask_prob <= 1"));
        }
        Ok(())
    }

    /// One `key = value` line per field, in a fixed order. Parsing the
    /// output yields an identical config.
    pub fn to_canonical_string(&self) -> String {
        let o = &self.optimizer;
        let swu = match self.swu {
            None => "auto".to_string(),
            Some(b) => b.to_string(),
        };
        let hidden = self
            .hidden_dims
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let fields: [(&str, String); 27] = [
            ("method", self.method.name().into()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("tau", self.tau.to_string()),
            ("lambda", self.lambda.to_string()),
            ("swu", swu),
            ("batch_size", self.batch_size.to_string()),
            ("queue_capacity", self.queue_capacity.to_string()),
            ("hidden_dims", hidden),
            ("projection_dim", self.projection_dim.to_string()),
            ("activation", self.activation.name().into()),
            ("batchnorm", self.batchnorm.to_string()),
            ("optimizer", o.kind.name().into()),
            ("lr", o.lr.to_string()),
            ("beta1", o.beta1.to_string()),
            ("beta2", o.beta2.to_string()),
            ("eps", o.eps.to_string()),
            ("momentum", o.momentum.to_string()),
            ("weight_decay", o.weight_decay.to_string()),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("mask_prob", self.mask_prob.to_string()),
            ("renormalize_output", self.renormalize_output.to_string()),
            ("paper_literal_sums", self.paper_literal_sums.to_string()),
            ("symmetrize", self.symmetrize.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
