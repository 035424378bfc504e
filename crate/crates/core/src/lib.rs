//! Contrastive self-supervised learning with pseudo nearest neighbor
//! positives, at desk scale.
//!
//! The crate trains small MLP encoders on vector data with SimCLR, NNCLR or
//! pNNCLR anchors, evaluates them with a linear probe and checks the
//! support-set probability analysis numerically.

pub mod cli;
pub mod codec;
pub mod datakit;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod objective;
pub mod pnn_sampler;
pub mod rng;
pub mod support_set;
pub mod theory;
pub mod trainer;
pub mod vecspace;

pub use error::{Error, Result};
