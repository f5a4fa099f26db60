//! Volterra expansion of a trained network around an operating point.
//!
//! Kernels are Taylor coefficients: `h_1 = grad f`, `h_2` the folded
//! upper-triangular second-order coefficients (diagonal `H_ii / 2`,
//! off-diagonal `H_ij`), `h_3` the third-order coefficients over
//! non-decreasing offset tuples (derivative divided by the factorials of
//! the index multiplicities). Offsets are window positions relative to the
//! centre tap.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sdnne::MlpModel;
use crate::volterra::enumerate_tuples;

/// Step of the central differences of the exact gradient (order 2).
pub const HESSIAN_STEP: f64 = 1e-3;
/// Base step of the third-order differences, refined once by Richardson.
pub const THIRD_ORDER_STEP: f64 = 5e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedKernels {
    /// Output unit (bit index).
    pub bit: usize,
    /// Network output at the expansion point.
    pub h0: f64,
    pub h1: Vec<f64>,
    /// `h2[i][k]`, nonzero only for `i <= k`.
    pub h2: Option<Vec<Vec<f64>>>,
    /// (offsets, coefficient) in canonical tuple order.
    pub h3: Option<Vec<(Vec<i32>, f64)>>,
}

impl ExtractedKernels {
    /// Second-order coefficient for window offsets `a`, `b` (any order).
    pub fn h2_at(&self, a: i32, b: i32) -> Option<f64> {
        let half = (self.h1.len() / 2) as i32;
        let (i, k) = ((a.min(b) + half) as usize, (a.max(b) + half) as usize);
        self.h2.as_ref().map(|h| h[i][k])
    }
}

/// Expands every output of `model` at `y0` (zeros when `None`) up to
/// `max_order` (1 to 3).
pub fn extract_kernels<T: crate::Real>(
    model: &MlpModel<T>,
    y0: Option<&[f64]>,
    max_order: usize,
) -> Result<Vec<ExtractedKernels>> {
    if !(1..=3).contains(&max_order) {
        return invalid("kernel extraction supports orders 1 to 3");
    }
    let act = model.design().activation();
    if max_order >= 2 && !act.is_smooth() {
        return Err(Error::NonDifferentiable(format!(
            "activation {act} has no second derivative; retrain with tanh to extract order {max_order}"
        )));
    }
    let f = model.cast::<f64>();
    let n = f.design().inputs();
    let x0: Vec<f64> = match y0 {
        Some(v) if v.len() == n => v.to_vec(),
        Some(v) => return invalid(format!("expansion point has {} entries, the window {n}", v.len())),
        None => vec![0.0; n],
    };
    let half = (n / 2) as i32;
    let shifted = |moves: &[(usize, f64)]| {
        let mut x = x0.clone();
        for &(i, d) in moves {
            x[i] += d;
        }
        x
    };
    let out0 = f.forward(&x0);
    let mut result = Vec::with_capacity(f.design().outputs());
    for j in 0..f.design().outputs() {
        let h1 = f.input_gradient(&x0, j);
        let h2 = (max_order >= 2).then(|| {
            let h = HESSIAN_STEP;
            let mut hess = vec![vec![0.0; n]; n];
            for i in 0..n {
                let gp = f.input_gradient(&shifted(&[(i, h)]), j);
                let gm = f.input_gradient(&shifted(&[(i, -h)]), j);
                for k in 0..n {
                    hess[k][i] = (gp[k] - gm[k]) / (2.0 * h);
                }
            }
            let mut folded = vec![vec![0.0; n]; n];
            for i in 0..n {
                folded[i][i] = 0.5 * hess[i][i];
                for k in i + 1..n {
                    folded[i][k] = 0.5 * (hess[i][k] + hess[k][i]);
                }
            }
            folded
        });
        let h3 = (max_order >= 3).then(|| {
            enumerate_tuples(3, half as usize)
                .into_iter()
                .map(|t| {
                    let idx: Vec<usize> = t.iter().map(|&d| (d + half) as usize).collect();
                    let d = third_derivative(&f, j, &x0, idx[0], idx[1], idx[2]);
                    let mult = if idx[0] == idx[2] {
                        6.0
                    } else if idx[0] == idx[1] || idx[1] == idx[2] {
                        2.0
                    } else {
                        1.0
                    };
                    (t, d / mult)
                })
                .collect()
        });
        result.push(ExtractedKernels {
            bit: j,
            h0: out0[j],
            h1,
            h2,
            h3,
        });
    }
    Ok(result)
}

/// `d^3 f_j / dx_a dx_b dx_c` as a second difference of the exact gradient
/// component `c` in directions `a`, `b`, with one Richardson step.
fn third_derivative(f: &MlpModel<f64>, j: usize, x0: &[f64], a: usize, b: usize, c: usize) -> f64 {
    let g = |moves: &[(usize, f64)]| {
        let mut x = x0.to_vec();
        for &(i, d) in moves {
            x[i] += d;
        }
        f.input_gradient(&x, j)[c]
    };
    let diff = |h: f64| {
        if a == b {
            (g(&[(a, h)]) - 2.0 * g(&[]) + g(&[(a, -h)])) / (h * h)
        } else {
            (g(&[(a, h), (b, h)]) - g(&[(a, h), (b, -h)]) - g(&[(a, -h), (b, h)]) + g(&[(a, -h), (b, -h)]))
                / (4.0 * h * h)
        }
    };
    let h = THIRD_ORDER_STEP;
    (4.0 * diff(h / 2.0) - diff(h)) / 3.0
}
