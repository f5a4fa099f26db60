//! Hardware multiplier counts per equalized symbol.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::sdnne::{Activation, MlpDesign, MlpModel};
use crate::volterra::{kernel_count, VolterraDesign, VolterraModel};

/// Interpolation points assumed when a tanh network is costed.
pub const DEFAULT_ITANH_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Formula {
    Vnle,
    /// Hard tanh or ReLU: one multiplier per hidden unit.
    SdnneHard,
    /// Interpolated tanh with `points` breakpoints.
    SdnneItanh { points: usize },
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Vnle => write!(f, "VNLE"),
            Formula::SdnneHard => write!(f, "SDNNE-ReLU/H-tanh"),
            Formula::SdnneItanh { points } => write!(f, "SDNNE-ITANH({points})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Breakdown {
    /// Active kernels or unmasked weights.
    pub coefficients: u64,
    /// Products forming the nonlinear feature vector.
    pub feature_matrix: u64,
    /// Activation functions, or the demapper slopes for a VNLE.
    pub activations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    /// Multipliers with pruned terms excluded.
    pub multipliers: u64,
    pub breakdown: Breakdown,
    pub formula: Formula,
    /// Count of the unpruned architecture.
    pub dense_multipliers: u64,
}

impl ComplexityReport {
    fn new(breakdown: Breakdown, formula: Formula, dense: u64) -> Self {
        ComplexityReport {
            multipliers: breakdown.coefficients + breakdown.feature_matrix + breakdown.activations,
            breakdown,
            formula,
            dense_multipliers: dense,
        }
    }
}

fn vnle_breakdown(design: &VolterraDesign, active: &[u64], mla_bits: Option<usize>) -> Breakdown {
    // Feature-matrix term: taps of the widest nonlinear order still in use.
    let feature = (1..active.len())
        .filter(|&i| active[i] > 0)
        .map(|i| design.taps()[i] as u64)
        .max()
        .unwrap_or(0);
    Breakdown {
        coefficients: active.iter().sum(),
        feature_matrix: feature,
        activations: mla_bits.unwrap_or(0) as u64,
    }
}

/// Full VNLE of `design`, plus `m` multipliers when followed by the MLA
/// demapper.
pub fn vnle_design_complexity(design: &VolterraDesign, mla_bits: Option<usize>) -> ComplexityReport {
    let b = vnle_breakdown(design, &kernel_count(design), mla_bits);
    let total = b.coefficients + b.feature_matrix + b.activations;
    ComplexityReport::new(b, Formula::Vnle, total)
}

/// VNLE counting only unmasked kernels.
pub fn multiplier_count_vnle<T: Real>(model: &VolterraModel<T>, mla_bits: Option<usize>) -> ComplexityReport {
    let active: Vec<u64> = model.active_per_order().iter().map(|&c| c as u64).collect();
    let dense = vnle_design_complexity(model.design(), mla_bits).multipliers;
    ComplexityReport::new(vnle_breakdown(model.design(), &active, mla_bits), Formula::Vnle, dense)
}

fn mlp_formula(act: Activation) -> Formula {
    match act {
        Activation::ITanh { points } => Formula::SdnneItanh { points },
        Activation::Tanh => Formula::SdnneItanh {
            points: DEFAULT_ITANH_POINTS,
        },
        Activation::HTanh | Activation::Relu | Activation::Linear => Formula::SdnneHard,
    }
}

fn mlp_breakdown(design: &MlpDesign, weights: u64) -> (Breakdown, Formula) {
    let formula = mlp_formula(design.activation());
    let hidden: u64 = design.hidden().iter().map(|&s| s as u64).sum();
    let per_unit = match formula {
        Formula::SdnneItanh { points } => points as u64 - 1,
        _ => 1,
    };
    let b = Breakdown {
        coefficients: weights,
        feature_matrix: 0,
        activations: per_unit * hidden,
    };
    (b, formula)
}

/// Dense network of `design`. Tanh networks are costed as their
/// interpolated-tanh deployment with 16 points.
pub fn mlp_design_complexity(design: &MlpDesign) -> ComplexityReport {
    let (b, formula) = mlp_breakdown(design, design.weight_count() as u64);
    let total = b.coefficients + b.activations;
    ComplexityReport::new(b, formula, total)
}

/// Network counting only unmasked weights.
pub fn multiplier_count_mlp<T: Real>(model: &MlpModel<T>) -> ComplexityReport {
    let weights: usize = model.active_weights().iter().sum();
    let (b, formula) = mlp_breakdown(model.design(), weights as u64);
    ComplexityReport::new(b, formula, mlp_design_complexity(model.design()).multipliers)
}
