//! Exact posterior computations used as references.

use serde::{Deserialize, Serialize};

use crate::demapper::LlrBlock;
use crate::error::{invalid, Result};
use crate::modem::{GrayPamMap, SymbolFrame};
use crate::scalar::{log_sum_exp, Real};

/// Natural-log a-posteriori LLRs `ln P(b_j = 0 | y) / P(b_j = 1 | y)` for
/// uniform symbols in real Gaussian noise of variance `noise_var`.
///
/// The achievable rate absorbs any constant LLR scaling in its `s` search,
/// so the log base does not matter to it.
pub fn exact_llrs_awgn<T: Real>(map: &GrayPamMap<T>, y: &SymbolFrame<T>, noise_var: T) -> Result<LlrBlock<T>> {
    if !(noise_var > T::zero()) || !noise_var.is_finite() {
        return invalid("noise variance must be positive and finite");
    }
    let m = map.bits_per_symbol();
    let lv = map.levels();
    let two_var = T::lit(2.0) * noise_var;
    let mut out = Vec::with_capacity(y.len() * m);
    let mut metric = vec![T::zero(); lv.len()];
    let mut part: [Vec<T>; 2] = [Vec::with_capacity(lv.len()), Vec::with_capacity(lv.len())];
    for &v in &y.symbols {
        for (mt, &x) in metric.iter_mut().zip(lv) {
            *mt = -(v - x) * (v - x) / two_var;
        }
        for j in 0..m {
            part[0].clear();
            part[1].clear();
            for (i, &mt) in metric.iter().enumerate() {
                part[map.label_bit(i, j) as usize].push(mt);
            }
            out.push(log_sum_exp(&part[0]) - log_sum_exp(&part[1]));
        }
    }
    LlrBlock::new(out, m)
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Exact quantities of a binary input observed through a finite channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteOracle {
    /// `H(B|Y)` in bits.
    pub conditional_entropy: f64,
    /// `ln P(B=0|y) / P(B=1|y)` per observation; infinite where one bit is
    /// impossible, NaN where `P(y) = 0`.
    pub llrs: Vec<f64>,
    /// `P(B=0|y)`.
    pub posterior0: Vec<f64>,
    /// `P(y)`.
    pub marginal: Vec<f64>,
}

/// `joint[y] = [P(B=0, Y=y), P(B=1, Y=y)]`.
pub fn discrete_channel_oracle(joint: &[[f64; 2]]) -> Result<DiscreteOracle> {
    if joint.is_empty() {
        return invalid("joint distribution is empty");
    }
    if joint.iter().flatten().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return invalid("probabilities must be finite and nonnegative");
    }
    let total: f64 = joint.iter().flatten().sum();
    if (total - 1.0).abs() > 1e-9 {
        return invalid(format!("probabilities sum to {total}, not 1"));
    }
    let mut h = 0.0;
    let mut llrs = Vec::with_capacity(joint.len());
    let mut posterior0 = Vec::with_capacity(joint.len());
    let mut marginal = Vec::with_capacity(joint.len());
    for &[p0, p1] in joint {
        let py = p0 + p1;
        marginal.push(py);
        if py == 0.0 {
            llrs.push(f64::NAN);
            posterior0.push(f64::NAN);
            continue;
        }
        let q = p0 / py;
        h += py * binary_entropy(q);
        posterior0.push(q);
        llrs.push(p0.ln() - p1.ln());
    }
    Ok(DiscreteOracle {
        conditional_entropy: h,
        llrs,
        posterior0,
        marginal,
    })
}
