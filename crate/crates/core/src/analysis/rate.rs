//! Achievable rate per real dimension from soft bits.

use serde::{Deserialize, Serialize};

use crate::demapper::LlrBlock;
use crate::error::{invalid, Result};
use crate::scalar::{compensated_sum, logistic, softplus, Real};

/// Search interval and tolerance for the LLR scaling `s`.
pub const S_MIN: f64 = 1e-6;
pub const S_MAX: f64 = 100.0;
pub const S_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Bits per real symbol, in `[0, m]`.
    pub rate: f64,
    pub minimizing_s: f64,
    pub n: usize,
    pub m: usize,
    /// Mean equivocation of each bit position at the minimizing `s`.
    pub per_bit_equivocation: Vec<f64>,
    /// `m` minus the mean equivocation without scaling (`s = 1`).
    pub unscaled_rate: f64,
}

/// `R = m - min_{s >= 0} (1/n) sum_i sum_j log2(1 + exp(-s (1 - 2 b_ij) l_ij))`.
///
/// The objective is convex in `s`, so the minimizer is found by bisection on
/// the sign of its derivative over `[S_MIN, S_MAX]`. If the derivative is
/// already nonnegative at `S_MIN` the minimum is taken at `s = 0`, where the
/// rate is exactly zero.
pub fn achievable_rate<T: Real>(block: &LlrBlock<T>) -> Result<RateReport> {
    let Some(bits) = block.bits() else {
        return invalid("achievable rate needs the transmitted bits alongside the LLRs");
    };
    let (n, m) = (block.len(), block.bits_per_symbol());
    if n == 0 {
        return invalid("achievable rate needs at least one symbol");
    }
    // Signed soft bits t = (1 - 2b) l; positive when the sign is right.
    let mut t = Vec::with_capacity(n * m);
    for (&l, &b) in block.llrs().iter().zip(bits.as_slice()) {
        let l = l.f64();
        if !l.is_finite() {
            return invalid("LLRs must be finite");
        }
        t.push(if b == 0 { l } else { -l });
    }
    let nm = (n * m) as f64;
    let ln2 = std::f64::consts::LN_2;
    let deriv = |s: f64| compensated_sum(t.iter().map(|&v| -v * logistic(-s * v))) / (nm * ln2);
    let s = if deriv(S_MIN) >= 0.0 {
        0.0
    } else if deriv(S_MAX) <= 0.0 {
        S_MAX
    } else {
        let (mut lo, mut hi) = (S_MIN, S_MAX);
        while hi - lo > S_TOL {
            let mid = 0.5 * (lo + hi);
            if deriv(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let per_bit: Vec<f64> = (0..m)
        .map(|j| compensated_sum((0..n).map(|i| softplus(-s * t[i * m + j]))) / (n as f64 * ln2))
        .collect();
    let total: f64 = per_bit.iter().sum();
    let unscaled = compensated_sum(t.iter().map(|&v| softplus(-v))) / (n as f64 * ln2);
    Ok(RateReport {
        rate: (m as f64 - total).clamp(0.0, m as f64),
        minimizing_s: s,
        n,
        m,
        per_bit_equivocation: per_bit,
        unscaled_rate: m as f64 - unscaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::BitFrame;

    fn block(llrs: Vec<f64>, bits: Vec<u8>, m: usize) -> LlrBlock<f64> {
        let b = BitFrame::new(bits, m, Default::default(), 0).unwrap();
        LlrBlock::new(llrs, m).unwrap().with_bits(b).unwrap()
    }

    #[test]
    fn confident_correct_llrs_reach_m() {
        let r = achievable_rate(&block(vec![40.0, -40.0, 40.0, -40.0], vec![0, 1, 0, 1], 2)).unwrap();
        assert!((r.rate - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_llrs_give_zero_rate() {
        let r = achievable_rate(&block(vec![0.0; 6], vec![0, 1, 1, 0, 1, 0], 3)).unwrap();
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn wrong_signs_clamp_to_zero() {
        let r = achievable_rate(&block(vec![-3.0, 3.0], vec![0, 1], 1)).unwrap();
        assert_eq!((r.rate, r.minimizing_s), (0.0, 0.0));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(achievable_rate(&block(vec![f64::NAN], vec![0], 1)).is_err());
        let no_bits = LlrBlock::new(vec![1.0], 1).unwrap();
        assert!(achievable_rate(&no_bits).is_err());
    }
}
