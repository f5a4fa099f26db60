//! Max-log soft demapping and the LLR container.
//!
//! Positive LLRs favor bit 0. The max-log LLR of bit `j` is affine between
//! consecutive constellation midpoints, so both demapper modes share those
//! boundaries: the fixed mode derives the affine pieces from the noise
//! variance, the trained mode learns one slope and intercept per
//! (bit, segment).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::modem::{BitFrame, GrayPamMap, SymbolFrame};
use crate::optim::{run_adam, AdamConfig, Objective, TrainTrace};
use crate::scalar::{logistic, softplus, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub enum DemapperMode<T: Real> {
    Fixed {
        noise_var: T,
    },
    /// `params[2 * (j * 2^m + s)]` is the slope of bit `j` on segment `s`,
    /// the following entry its intercept.
    Trained {
        params: Vec<T>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MlaDemapper<T: Real> {
    map: GrayPamMap<T>,
    mode: DemapperMode<T>,
}

impl<T: Real> MlaDemapper<T> {
    pub fn fixed(map: GrayPamMap<T>, noise_var: T) -> Result<Self> {
        if !(noise_var > T::zero()) || !noise_var.is_finite() {
            return invalid("noise variance must be positive and finite");
        }
        Ok(MlaDemapper {
            map,
            mode: DemapperMode::Fixed { noise_var },
        })
    }

    pub fn trained(map: GrayPamMap<T>, params: Vec<T>) -> Result<Self> {
        let expected = 2 * map.bits_per_symbol() * map.order();
        if params.len() != expected {
            return invalid(format!("expected {expected} slope parameters, got {}", params.len()));
        }
        Ok(MlaDemapper {
            map,
            mode: DemapperMode::Trained { params },
        })
    }

    pub fn map(&self) -> &GrayPamMap<T> {
        &self.map
    }

    pub fn mode(&self) -> &DemapperMode<T> {
        &self.mode
    }

    /// Segment (between consecutive midpoints) containing `y`.
    #[inline]
    pub fn segment(&self, y: T) -> usize {
        self.map.slice(y)
    }

    /// Trainable parameters; empty in fixed mode.
    pub fn params(&self) -> &[T] {
        match &self.mode {
            DemapperMode::Trained { params } => params,
            DemapperMode::Fixed { .. } => &[],
        }
    }

    pub(crate) fn set_params(&mut self, p: &[T]) {
        if let DemapperMode::Trained { params } = &mut self.mode {
            params.copy_from_slice(p);
        }
    }

    /// Slope and intercept of bit `j` on segment `s`.
    pub fn piece(&self, j: usize, s: usize) -> (T, T) {
        match &self.mode {
            DemapperMode::Trained { params } => {
                let b = 2 * (j * self.map.order() + s);
                (params[b], params[b + 1])
            }
            DemapperMode::Fixed { noise_var } => {
                // Within segment s the nearest point of each label subset is
                // fixed; the squared terms in y cancel.
                let lv = self.map.levels();
                let nearest = |bit: u8| {
                    (0..lv.len())
                        .filter(|&i| self.map.label_bit(i, j) == bit)
                        .min_by_key(|&i| i.abs_diff(s))
                        .map(|i| lv[i])
                        .unwrap()
                };
                let (x0, x1) = (nearest(0), nearest(1));
                let slope = (x0 - x1) / *noise_var;
                let icpt = (x1 * x1 - x0 * x0) / (T::lit(2.0) * *noise_var);
                (slope, icpt)
            }
        }
    }

    /// Equivalent trained-mode demapper.
    pub fn to_trained(&self) -> MlaDemapper<T> {
        let (m, q) = (self.map.bits_per_symbol(), self.map.order());
        let mut params = Vec::with_capacity(2 * m * q);
        for j in 0..m {
            for s in 0..q {
                let (a, c) = self.piece(j, s);
                params.push(a);
                params.push(c);
            }
        }
        MlaDemapper {
            map: self.map.clone(),
            mode: DemapperMode::Trained { params },
        }
    }

    /// LLRs of one received value into `out` (length m).
    pub fn llrs_into(&self, y: T, out: &mut [T]) {
        match &self.mode {
            DemapperMode::Fixed { noise_var } => {
                let lv = self.map.levels();
                for (j, o) in out.iter_mut().enumerate() {
                    let mut best = [T::infinity(); 2];
                    for (i, &x) in lv.iter().enumerate() {
                        let b = self.map.label_bit(i, j) as usize;
                        let d = (y - x) * (y - x);
                        if d < best[b] {
                            best[b] = d;
                        }
                    }
                    *o = (best[1] - best[0]) / (T::lit(2.0) * *noise_var);
                }
            }
            DemapperMode::Trained { .. } => {
                let s = self.segment(y);
                for (j, o) in out.iter_mut().enumerate() {
                    let (a, c) = self.piece(j, s);
                    *o = a * y + c;
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> MlaDemapper<U> {
        let mode = match &self.mode {
            DemapperMode::Fixed { noise_var } => DemapperMode::Fixed {
                noise_var: U::lit(noise_var.f64()),
            },
            DemapperMode::Trained { params } => DemapperMode::Trained {
                params: params.iter().map(|v| U::lit(v.f64())).collect(),
            },
        };
        MlaDemapper {
            map: self.map.cast(),
            mode,
        }
    }
}

/// Soft bits `l_ij` (row-major, `n x m`), optionally with the aligned
/// transmitted bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LlrBlock<T: Real> {
    llrs: Vec<T>,
    bits_per_symbol: usize,
    bits: Option<BitFrame>,
}

impl<T: Real> LlrBlock<T> {
    pub fn new(llrs: Vec<T>, bits_per_symbol: usize) -> Result<Self> {
        if bits_per_symbol == 0 || !llrs.len().is_multiple_of(bits_per_symbol) {
            return invalid("LLR buffer is not a multiple of the bits per symbol");
        }
        Ok(LlrBlock {
            llrs,
            bits_per_symbol,
            bits: None,
        })
    }

    /// Attaches the transmitted bits; dimensions must match.
    pub fn with_bits(mut self, bits: BitFrame) -> Result<Self> {
        if bits.bits_per_symbol() != self.bits_per_symbol || bits.len() != self.len() {
            return invalid(format!(
                "bits ({} x {}) do not match LLRs ({} x {})",
                bits.len(),
                bits.bits_per_symbol(),
                self.len(),
                self.bits_per_symbol
            ));
        }
        self.bits = Some(bits);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.llrs.len() / self.bits_per_symbol
    }

    pub fn is_empty(&self) -> bool {
        self.llrs.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn llrs(&self) -> &[T] {
        &self.llrs
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        let m = self.bits_per_symbol;
        &self.llrs[i * m..(i + 1) * m]
    }

    pub fn bits(&self) -> Option<&BitFrame> {
        self.bits.as_ref()
    }

    /// Every LLR multiplied by `c`.
    pub fn scaled(&self, c: T) -> LlrBlock<T> {
        LlrBlock {
            llrs: self.llrs.iter().map(|&l| l * c).collect(),
            bits_per_symbol: self.bits_per_symbol,
            bits: self.bits.clone(),
        }
    }

    /// Concatenates blocks with equal `m`; bits are kept only if all carry them.
    pub fn concat(blocks: &[LlrBlock<T>]) -> Result<LlrBlock<T>> {
        let Some(first) = blocks.first() else {
            return invalid("no LLR blocks to concatenate");
        };
        let m = first.bits_per_symbol;
        if blocks.iter().any(|b| b.bits_per_symbol != m) {
            return invalid("LLR blocks disagree on bits per symbol");
        }
        let llrs = blocks.iter().flat_map(|b| b.llrs.iter().copied()).collect();
        let out = LlrBlock::new(llrs, m)?;
        let bits: Option<Vec<&BitFrame>> = blocks.iter().map(|b| b.bits.as_ref()).collect();
        match bits {
            Some(b) => out.with_bits(BitFrame::concat(&b)?),
            None => Ok(out),
        }
    }
}

/// Max-log LLRs of every symbol.
pub fn demap_max_log<T: Real>(d: &MlaDemapper<T>, y: &SymbolFrame<T>) -> LlrBlock<T> {
    let m = d.map.bits_per_symbol();
    let mut llrs = vec![T::zero(); y.len() * m];
    for (k, &v) in y.symbols.iter().enumerate() {
        d.llrs_into(v, &mut llrs[k * m..(k + 1) * m]);
    }
    LlrBlock {
        llrs,
        bits_per_symbol: m,
        bits: None,
    }
}

/// Hard decisions: 0 where `l >= 0`, 1 where `l < 0` (zero resolves to 0).
pub fn hard_decide<T: Real>(block: &LlrBlock<T>) -> BitFrame {
    let bits = block
        .llrs
        .iter()
        .map(|&l| if l < T::zero() { 1 } else { 0 })
        .collect();
    let (lane, seed) = block.bits.as_ref().map(|b| (b.lane, b.seed)).unwrap_or_default();
    BitFrame::new(bits, block.bits_per_symbol, lane, seed).expect("LLR block is never empty-width")
}

/// Bitwise equivocation `log2(1 + exp(-(1 - 2b) l))`.
#[inline]
pub fn equivocation_loss<T: Real>(bit: u8, llr: T) -> T {
    let t = if bit == 0 { llr } else { -llr };
    softplus(-t) / T::lit(std::f64::consts::LN_2)
}

/// Derivative of [`equivocation_loss`] with respect to the LLR.
#[inline]
pub fn equivocation_grad<T: Real>(bit: u8, llr: T) -> T {
    let t = if bit == 0 { T::one() } else { -T::one() };
    -t * logistic(-t * llr) / T::lit(std::f64::consts::LN_2)
}

/// Trains the per-segment slopes and intercepts on `(y, bits)` by ADAM on
/// the mean equivocation, starting from the fixed-mode equivalent. The last
/// `1 - split` of the samples validate.
pub fn fit_slopes<T: Real>(
    d: &MlaDemapper<T>,
    y: &SymbolFrame<T>,
    bits: &BitFrame,
    opt: &AdamConfig,
    split: f64,
) -> Result<(MlaDemapper<T>, TrainTrace)> {
    if bits.len() != y.len() || bits.bits_per_symbol() != d.map.bits_per_symbol() {
        return invalid("bits are not aligned with the symbols");
    }
    if !(split > 0.0 && split < 1.0) {
        return invalid("split must be in (0, 1)");
    }
    let cut = ((y.len() as f64) * split).round() as usize;
    if cut == 0 || cut >= y.len() {
        return invalid("split leaves no training or validation samples");
    }
    let mut out = d.to_trained();
    let mut params = out.params().to_vec();
    let mut active = vec![true; params.len()];
    let mut obj = SlopeObjective {
        d: out.clone(),
        y: &y.symbols,
        bits,
        cut,
        buf: vec![T::zero(); d.map.bits_per_symbol()],
    };
    let trace = run_adam(&mut params, &mut active, &mut obj, opt, None)?;
    out.set_params(&params);
    Ok((out, trace))
}

struct SlopeObjective<'a, T: Real> {
    d: MlaDemapper<T>,
    y: &'a [T],
    bits: &'a BitFrame,
    cut: usize,
    buf: Vec<T>,
}

impl<T: Real> Objective<T> for SlopeObjective<'_, T> {
    fn n_train(&self) -> usize {
        self.cut
    }

    fn loss_grad(&mut self, params: &[T], batch: &[usize], grad: &mut [T]) -> T {
        self.d.set_params(params);
        let m = self.d.map.bits_per_symbol();
        let q = self.d.map.order();
        let scale = T::lit(1.0 / (batch.len() * m) as f64);
        let mut loss = T::zero();
        for &k in batch {
            let y = self.y[k];
            let s = self.d.segment(y);
            for (j, &b) in self.bits.row(k).iter().enumerate() {
                let base = 2 * (j * q + s);
                let l = params[base] * y + params[base + 1];
                loss = loss + equivocation_loss(b, l) * scale;
                let g = equivocation_grad(b, l) * scale;
                grad[base] = grad[base] + g * y;
                grad[base + 1] = grad[base + 1] + g;
            }
        }
        loss
    }

    fn valid_loss(&mut self, params: &[T]) -> T {
        self.d.set_params(params);
        let m = self.d.map.bits_per_symbol();
        let mut acc = T::zero();
        for k in self.cut..self.y.len() {
            self.d.llrs_into(self.y[k], &mut self.buf);
            for (j, &b) in self.bits.row(k).iter().enumerate() {
                acc = acc + equivocation_loss(b, self.buf[j]);
            }
        }
        acc / T::lit(((self.y.len() - self.cut) * m) as f64)
    }
}
