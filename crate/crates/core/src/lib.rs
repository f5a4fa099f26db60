//! Nonlinear equalization for short-reach PAM links: Volterra and
//! neural-network equalizers, max-log demapping, achievable-rate analysis and
//! an experiment harness.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix notation of the kernels and layers.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod channel;
pub mod demapper;
pub mod error;
pub mod harness;
pub mod modem;
pub mod optim;
pub mod scalar;
pub mod sdnne;
pub mod volterra;

pub use error::{Error, Result};
pub use scalar::Real;

pub use analysis::{achievable_rate, extract_kernels, RateReport};
pub use demapper::{demap_max_log, hard_decide, LlrBlock, MlaDemapper};
pub use modem::{build_gray_pam, map_bits, BitFrame, Lane};
pub use optim::AdamConfig;
pub use sdnne::{Activation, MlpDesign};
pub use volterra::VolterraDesign;

pub type GrayPamMap = modem::GrayPamMap<f64>;
pub type SymbolFrame = modem::SymbolFrame<f64>;
pub type Channel = channel::WienerHammersteinChannel<f64>;
pub type VolterraModel = volterra::VolterraModel<f64>;
pub type Demapper = demapper::MlaDemapper<f64>;
pub type Llrs = demapper::LlrBlock<f64>;
pub type MlpModel = sdnne::MlpModel<f64>;
