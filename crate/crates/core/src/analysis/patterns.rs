//! Counting hidden-unit activation patterns.

use std::collections::HashSet;

use num_bigint::BigUint;
use num_traits::One;

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::sdnne::{MlpDesign, MlpModel};

fn binomial(n: usize, k: usize) -> BigUint {
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

fn bound(design: &MlpDesign, inclusive: bool) -> Result<BigUint> {
    let sizes = design.sizes();
    if sizes.len() < 3 {
        return invalid("the pattern bound needs at least one hidden layer");
    }
    let mut total = BigUint::one();
    let mut width = sizes[0];
    for &n in design.hidden() {
        width = width.min(n);
        let top = if inclusive { width } else { width - 1 }.min(n);
        let layer: BigUint = (0..=top).map(|j| binomial(n, j)).sum();
        total *= layer;
    }
    Ok(total)
}

/// Product over hidden layers of `sum_{j=0}^{m_l - 1} C(n_l, j)` with
/// `m_l = min(n_0, ..., n_l)`.
pub fn activation_patterns(design: &MlpDesign) -> Result<BigUint> {
    bound(design, false)
}

/// The same product with the sum running to `m_l`, which counts the regions
/// of `n_l` hyperplanes in general position in an `m_l`-dimensional space.
pub fn activation_patterns_inclusive(design: &MlpDesign) -> Result<BigUint> {
    bound(design, true)
}

/// Distinct hidden sign patterns realized on `inputs`.
pub fn count_patterns<T: Real>(model: &MlpModel<T>, inputs: &[Vec<T>]) -> usize {
    inputs
        .iter()
        .map(|x| model.activation_pattern(x))
        .collect::<HashSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(s: &str) -> u128 {
        activation_patterns(&s.parse().unwrap()).unwrap().try_into().unwrap()
    }

    #[test]
    fn golden_values() {
        assert_eq!(b("17|16|10|3"), 67_042_305);
        assert_eq!(b("17|26|25|3"), 1_950_842_085_104_877);
        let inc: u128 = activation_patterns_inclusive(&"17|16|10|3".parse().unwrap())
            .unwrap()
            .try_into()
            .unwrap();
        assert_eq!(inc, 1 << 26);
    }

    #[test]
    fn width_one_layer_contributes_one() {
        assert_eq!(b("5|1|3"), 1);
        assert_eq!(b("5|4|1|2"), 15);
    }

    #[test]
    fn needs_hidden_layer() {
        assert!(activation_patterns(&"5|2".parse().unwrap()).is_err());
    }
}
