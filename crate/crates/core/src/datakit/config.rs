//! `key = value` run configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys not listed in [`TrainConfig::to_canonical_string`] are rejected.

use std::path::Path;
use std::str::FromStr;

use crate::encoder::Activation;
use crate::error::{Error, Result};
use crate::objective::Method;
use crate::trainer::{OptimizerKind, TrainConfig};

fn typed<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T> {
    value.parse().map_err(|_| Error::TypeError {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn real(key: &str, value: &str) -> Result<f64> {
    let v: f64 = typed(key, value, "a real number")?;
    if !v.is_finite() {
        return Err(Error::TypeError {
            key: key.into(),
            value: value.into(),
            expected: "a finite real number",
        });
    }
    Ok(v)
}

/// Sets one field. `line` is only used in error messages.
pub fn apply_setting(cfg: &mut TrainConfig, key: &str, value: &str, line: usize) -> Result<()> {
    let o = &mut cfg.optimizer;
    match key {
        "method" => {
            cfg.method = Method::from_name(value).ok_or_else(|| Error::TypeError {
                key: key.into(),
                value: value.into(),
                expected: "simclr | nnclr | pnnclr",
            })?
        }
        "alpha" => cfg.alpha = real(key, value)?,
        "beta" => cfg.beta = real(key, value)?,
        "tau" => cfg.tau = real(key, value)?,
        "lambda" => cfg.lambda = real(key, value)?,
        "swu" => {
            cfg.swu = match value {
                "auto" => None,
                _ => Some(typed(key, value, "auto | true | false")?),
            }
        }
        "batch_size" => cfg.batch_size = typed(key, value, "a positive integer")?,
        "queue_capacity" => cfg.queue_capacity = typed(key, value, "a positive integer")?,
        "hidden_dims" => {
            cfg.hidden_dims = if value.is_empty() {
                Vec::new()
            } else {
                value
                    .split(',')
                    .map(|s| typed(key, s.trim(), "comma-separated integers"))
                    .collect::<Result<_>>()?
            }
        }
        "projection_dim" => cfg.projection_dim = typed(key, value, "a positive integer")?,
        "activation" => {
            cfg.activation = Activation::from_name(value).ok_or_else(|| Error::TypeError {
                key: key.into(),
                value: value.into(),
                expected: "relu | tanh | identity",
            })?
        }
        "batchnorm" => cfg.batchnorm = typed(key, value, "true | false")?,
        "optimizer" => {
            o.kind = match value {
                "adam" => OptimizerKind::Adam,
                "sgd" => OptimizerKind::Sgd,
                _ => {
                    return Err(Error::TypeError {
                        key: key.into(),
                        value: value.into(),
                        expected: "adam | sgd",
                    })
                }
            }
        }
        "lr" => o.lr = real(key, value)?,
        "beta1" => o.beta1 = real(key, value)?,
        "beta2" => o.beta2 = real(key, value)?,
        "eps" => o.eps = real(key, value)?,
        "momentum" => o.momentum = real(key, value)?,
        "weight_decay" => o.weight_decay = real(key, value)?,
        "steps" => cfg.steps = typed(key, value, "a non-negative integer")?,
        "seed" => cfg.seed = typed(key, value, "a 64-bit unsigned integer")?,
        "noise_std" => cfg.noise_std = real(key, value)?,
        "mask_prob" => cfg.mask_prob = real(key, value)?,
        "renormalize_output" => cfg.renormalize_output = typed(key, value, "true | false")?,
        "paper_literal_sums" => cfg.paper_literal_sums = typed(key, value, "true | false")?,
        "symmetrize" => cfg.symmetrize = typed(key, value, "true | false")?,
        "checkpoint_every" => cfg.checkpoint_every = typed(key, value, "a non-negative integer")?,
        _ => {
            return Err(Error::UnknownKey {
                key: key.into(),
                line,
            })
        }
    }
    Ok(())
}

/// Applies a single `key=value` override such as a `--set` flag.
pub fn apply_setting_str(cfg: &mut TrainConfig, setting: &str) -> Result<()> {
    let (key, value) = setting.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("expected `key=value`, got `{setting}`"))
    })?;
    apply_setting(cfg, key.trim(), value.trim(), 0)
}

/// Parses config text on top of the defaults and validates the result.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected `key = value`, got `{line}`", i + 1))
        })?;
        apply_setting(&mut cfg, key.trim(), value.trim(), i + 1)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), TrainConfig::default());
        assert_eq!(
            parse_config("# nothing here\n\n   \n").unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn typed_errors_name_the_key() {
        match parse_config("alpha = 1.5") {
            Err(Error::RangeError { key, .. }) => assert_eq!(key, "alpha"),
            other => panic!("{other:?}"),
        }
        match parse_config("batch_size = lots") {
            Err(Error::TypeError { key, .. }) => assert_eq!(key, "batch_size"),
            other => panic!("{other:?}"),
        }
        match parse_config("\nlearning_rate = 0.1") {
            Err(Error::UnknownKey { key, line }) => {
                assert_eq!(key, "learning_rate");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("tau = nan"), Err(Error::TypeError { .. })));
        assert!(matches!(parse_config("just words"), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn example_config_round_trips() {
        let text = "\
# pNNCLR desk-scale run
method = pnnclr
alpha = 0.15      # shrinkage
beta = 0.05
tau = 0.2
lambda = 0.995
swu = true
batch_size = 32
queue_capacity = 2048
hidden_dims = 128, 64
projection_dim = 32
activation = tanh
batchnorm = false
optimizer = sgd
lr = 0.05
momentum = 0.8
weight_decay = 0.0001
steps = 500
seed = 12345678901234
noise_std = 0.3
mask_prob = 0.2
renormalize_output = false
paper_literal_sums = true
symmetrize = true
checkpoint_every = 100
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.hidden_dims, vec![128, 64]);
        assert_eq!(cfg.swu, Some(true));
        let canonical = cfg.to_canonical_string();
        let again = parse_config(&canonical).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_canonical_string(), canonical);
    }
}
