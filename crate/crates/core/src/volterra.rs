//! Volterra nonlinear equalizer.
//!
//! Kernels of order `p` are indexed by non-decreasing tuples of window
//! offsets `d_1 <= ... <= d_p` with `|d_i| <= M_p`; offset `d` addresses the
//! received sample `y(k + d)`. Kernels are stored flat in canonical order:
//! order 1 first, and within an order lexicographically by tuple.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::demapper::{DemapperMode, MlaDemapper};
use crate::error::{invalid, Error, Result};
use crate::modem::{BitFrame, SymbolFrame};
use crate::optim::{run_adam, AdamConfig, Objective, TrainTrace};
use crate::scalar::{logistic, softplus, Real};

/// Two-sided tap counts per order, e.g. `17:17:11`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct VolterraDesign {
    taps: Vec<usize>,
}

impl VolterraDesign {
    pub fn new(taps: Vec<usize>) -> Result<Self> {
        if taps.is_empty() {
            return invalid("a Volterra design needs at least one order");
        }
        for (p, &t) in taps.iter().enumerate() {
            if t == 0 || t % 2 == 0 {
                return invalid(format!("order {} tap count {t} must be odd and positive", p + 1));
            }
            if t > taps[0] {
                return invalid(format!(
                    "order {} memory ({t} taps) exceeds the linear memory ({} taps)",
                    p + 1,
                    taps[0]
                ));
            }
        }
        Ok(VolterraDesign { taps })
    }

    /// Linear equalizer with `taps` taps.
    pub fn linear(taps: usize) -> Result<Self> {
        VolterraDesign::new(vec![taps])
    }

    pub fn order(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    /// One-sided memory `M_p` of order `p` (1-based).
    pub fn memory(&self, p: usize) -> usize {
        (self.taps[p - 1] - 1) / 2
    }

    pub fn window_len(&self) -> usize {
        self.taps[0]
    }

    pub fn total_kernels(&self) -> usize {
        kernel_count(self).iter().sum::<u64>() as usize
    }
}

impl TryFrom<Vec<usize>> for VolterraDesign {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        VolterraDesign::new(v)
    }
}

impl From<VolterraDesign> for Vec<usize> {
    fn from(d: VolterraDesign) -> Self {
        d.taps
    }
}

impl fmt::Display for VolterraDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.taps.iter().map(|t| t.to_string()).collect();
        f.write_str(&parts.join(":"))
    }
}

impl FromStr for VolterraDesign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let taps = s
            .split(':')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad tap count {t:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        VolterraDesign::new(taps)
    }
}

/// Closed-form kernel count per order: `N_p = (1/p!) prod_{i<p} (T_p + i)`.
pub fn kernel_count(design: &VolterraDesign) -> Vec<u64> {
    design
        .taps
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = i as u128 + 1;
            // Multiply and divide alternately so every step stays integral.
            let mut acc: u128 = 1;
            for k in 0..p {
                acc = acc * (t as u128 + k) / (k + 1);
            }
            acc as u64
        })
        .collect()
}

/// Non-decreasing `p`-tuples over `[-m, m]` in lexicographic order.
pub fn enumerate_tuples(p: usize, m: usize) -> Vec<Vec<i32>> {
    let m = m as i32;
    let mut out = Vec::new();
    let mut cur = vec![-m; p];
    if p == 0 {
        return vec![vec![]];
    }
    loop {
        out.push(cur.clone());
        // Advance the rightmost entry that can still grow, then reset the
        // tail to it.
        let Some(i) = (0..p).rev().find(|&i| cur[i] < m) else {
            return out;
        };
        let v = cur[i] + 1;
        cur[i..].iter_mut().for_each(|c| *c = v);
    }
}

/// One kernel's position in the canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelIndex {
    pub order: usize,
    pub offsets: Vec<i32>,
}

pub fn kernel_indices(design: &VolterraDesign) -> Vec<KernelIndex> {
    (1..=design.order())
        .flat_map(|p| {
            enumerate_tuples(p, design.memory(p))
                .into_iter()
                .map(move |offsets| KernelIndex { order: p, offsets })
        })
        .collect()
}

/// Flattened tuple table addressing window positions `d + M_1`.
#[derive(Debug, Clone, PartialEq)]
struct Basis {
    positions: Vec<usize>,
    start: Vec<usize>,
    half: usize,
}

impl Basis {
    fn new(design: &VolterraDesign) -> Self {
        let half = design.memory(1);
        let mut positions = Vec::new();
        let mut start = vec![0];
        for k in kernel_indices(design) {
            positions.extend(k.offsets.iter().map(|&d| (d + half as i32) as usize));
            start.push(positions.len());
        }
        Basis {
            positions,
            start,
            half,
        }
    }

    fn len(&self) -> usize {
        self.start.len() - 1
    }

    fn window<T: Real>(&self, y: &[T], k: usize, out: &mut [T]) {
        let n = y.len() as isize;
        for (w, o) in out.iter_mut().enumerate() {
            let j = k as isize + w as isize - self.half as isize;
            *o = if (0..n).contains(&j) { y[j as usize] } else { T::zero() };
        }
    }

    fn features_from_window<T: Real>(&self, window: &[T], out: &mut [T]) {
        for (i, f) in out.iter_mut().enumerate() {
            *f = self.positions[self.start[i]..self.start[i + 1]]
                .iter()
                .fold(T::one(), |acc, &p| acc * window[p]);
        }
    }
}

/// Feature vector of sample `k` for all kernels of `design`, canonical order.
/// Samples outside the frame read as zero.
pub fn features<T: Real>(design: &VolterraDesign, y: &SymbolFrame<T>, k: usize) -> Vec<T> {
    let basis = Basis::new(design);
    let mut w = vec![T::zero(); design.window_len()];
    let mut f = vec![T::zero(); basis.len()];
    basis.window(&y.symbols, k, &mut w);
    basis.features_from_window(&w, &mut f);
    f
}

/// Kernels plus an activity mask; inactive kernels are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraModel<T: Real> {
    design: VolterraDesign,
    basis: Basis,
    kernels: Vec<T>,
    active: Vec<bool>,
}

impl<T: Real> VolterraModel<T> {
    pub fn zeros(design: VolterraDesign) -> Self {
        let basis = Basis::new(&design);
        let n = basis.len();
        VolterraModel {
            design,
            basis,
            kernels: vec![T::zero(); n],
            active: vec![true; n],
        }
    }

    /// Center linear tap 1, everything else 0.
    pub fn identity(design: VolterraDesign) -> Self {
        let mut m = Self::zeros(design);
        let c = m.design.memory(1);
        m.kernels[c] = T::one();
        m
    }

    pub fn from_kernels(design: VolterraDesign, kernels: Vec<T>) -> Result<Self> {
        let mut m = Self::zeros(design);
        if kernels.len() != m.kernels.len() {
            return invalid(format!(
                "design {} has {} kernels, got {}",
                m.design,
                m.kernels.len(),
                kernels.len()
            ));
        }
        m.kernels = kernels;
        Ok(m)
    }

    pub fn design(&self) -> &VolterraDesign {
        &self.design
    }

    pub fn kernels(&self) -> &[T] {
        &self.kernels
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Active kernel count per order.
    pub fn active_per_order(&self) -> Vec<usize> {
        let counts = kernel_count(&self.design);
        let mut out = Vec::with_capacity(counts.len());
        let mut at = 0;
        for c in counts {
            let c = c as usize;
            out.push(self.active[at..at + c].iter().filter(|&&a| a).count());
            at += c;
        }
        out
    }

    pub fn set_kernel(&mut self, i: usize, value: T) {
        self.kernels[i] = value;
    }

    /// Deactivates kernel `i` and zeroes it.
    pub fn mask(&mut self, i: usize) {
        self.active[i] = false;
        self.kernels[i] = T::zero();
    }

    pub fn indices(&self) -> Vec<KernelIndex> {
        kernel_indices(&self.design)
    }

    /// Coefficient of the kernel with these offsets, in any order.
    pub fn kernel(&self, offsets: &[i32]) -> Option<T> {
        let mut sorted = offsets.to_vec();
        sorted.sort_unstable();
        self.indices()
            .iter()
            .position(|k| k.offsets == sorted)
            .map(|i| self.kernels[i])
    }

    pub fn predict_at(&self, y: &[T], k: usize, window: &mut [T], feats: &mut [T]) -> T {
        self.basis.window(y, k, window);
        self.basis.features_from_window(window, feats);
        feats
            .iter()
            .zip(&self.kernels)
            .map(|(&f, &h)| f * h)
            .sum()
    }

    pub fn cast<U: Real>(&self) -> VolterraModel<U> {
        VolterraModel {
            design: self.design.clone(),
            basis: self.basis.clone(),
            kernels: self.kernels.iter().map(|v| U::lit(v.f64())).collect(),
            active: self.active.clone(),
        }
    }
}

/// Equalizer output `sum_kernels h * prod y(k + d_i)` for every sample.
pub fn predict<T: Real>(model: &VolterraModel<T>, y: &SymbolFrame<T>) -> SymbolFrame<T> {
    let mut w = vec![T::zero(); model.design.window_len()];
    let mut f = vec![T::zero(); model.kernels.len()];
    let out = (0..y.len())
        .map(|k| model.predict_at(&y.symbols, k, &mut w, &mut f))
        .collect();
    SymbolFrame::with_source(out, y.source.clone())
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct ModelRepr<T: Real> {
    design: VolterraDesign,
    index: Vec<Vec<i32>>,
    coefficients: Vec<T>,
    mask: Vec<bool>,
}

impl<T: Real> Serialize for VolterraModel<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ModelRepr {
            design: self.design.clone(),
            index: self.indices().into_iter().map(|k| k.offsets).collect(),
            coefficients: self.kernels.clone(),
            mask: self.active.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for VolterraModel<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ModelRepr::<T>::deserialize(d)?;
        let expected: Vec<Vec<i32>> = kernel_indices(&r.design).into_iter().map(|k| k.offsets).collect();
        if r.index != expected {
            return Err(D::Error::custom("kernel index does not follow the canonical order"));
        }
        if r.mask.len() != r.coefficients.len() {
            return Err(D::Error::custom("mask length differs from coefficient count"));
        }
        let mut m = VolterraModel::from_kernels(r.design, r.coefficients).map_err(D::Error::custom)?;
        m.active = r.mask;
        for i in 0..m.kernels.len() {
            if !m.active[i] {
                m.kernels[i] = T::zero();
            }
        }
        Ok(m)
    }
}

/// Result of a least-squares identification.
#[derive(Debug, Clone)]
pub struct LsFit<T: Real> {
    pub model: VolterraModel<T>,
    /// 2-norm condition number of the regression matrix.
    pub condition: f64,
    pub rank: usize,
}

/// Samples that enter the loss: the first and last `M_1` symbols are skipped.
fn loss_range(design: &VolterraDesign, n: usize) -> std::ops::Range<usize> {
    let h = design.memory(1);
    h.min(n)..n.saturating_sub(h).max(h.min(n))
}

/// Least-squares kernels minimizing `sum_k (y~(k) - x(k))^2` over the
/// training samples, solved from the normal equations by a symmetric
/// eigendecomposition. Fails on numerically rank-deficient systems.
pub fn fit_ls<T: Real>(
    design: &VolterraDesign,
    y: &SymbolFrame<T>,
    x: &SymbolFrame<T>,
) -> Result<LsFit<T>> {
    fit_ls_range(design, y, x, loss_range(design, y.len()))
}

/// [`fit_ls`] restricted to the samples in `range`.
pub fn fit_ls_range<T: Real>(
    design: &VolterraDesign,
    y: &SymbolFrame<T>,
    x: &SymbolFrame<T>,
    range: std::ops::Range<usize>,
) -> Result<LsFit<T>> {
    if y.len() != x.len() {
        return invalid(format!("y has {} samples, x has {}", y.len(), x.len()));
    }
    let model = VolterraModel::<T>::zeros(design.clone());
    let nk = model.kernels.len();
    let range = range.start..range.end.min(loss_range(design, y.len()).end);
    let samples = range.len();
    if samples < nk {
        return Err(Error::RankDeficient {
            kernels: nk,
            rank: samples,
            condition: f64::INFINITY,
        });
    }
    const CHUNK: usize = 256;
    let mut ata = DMatrix::<f64>::zeros(nk, nk);
    let mut atb = DVector::<f64>::zeros(nk);
    let mut w = vec![T::zero(); design.window_len()];
    let mut f = vec![T::zero(); nk];
    let ks: Vec<usize> = range.collect();
    for chunk in ks.chunks(CHUNK) {
        let mut a = DMatrix::<f64>::zeros(chunk.len(), nk);
        let mut b = DVector::<f64>::zeros(chunk.len());
        for (r, &k) in chunk.iter().enumerate() {
            model.basis.window(&y.symbols, k, &mut w);
            model.basis.features_from_window(&w, &mut f);
            for c in 0..nk {
                a[(r, c)] = f[c].f64();
            }
            b[r] = x.symbols[k].f64();
        }
        ata.gemm_tr(1.0, &a, &a, 1.0);
        atb.gemv_tr(1.0, &a, &b, 1.0);
    }
    let eig = SymmetricEigen::new(ata);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = max * nk as f64 * f64::EPSILON * 10.0;
    let rank = eig.eigenvalues.iter().filter(|&&l| l > tol).count();
    let condition = if min > 0.0 { (max / min).sqrt() } else { f64::INFINITY };
    if rank < nk || max <= 0.0 {
        return Err(Error::RankDeficient {
            kernels: nk,
            rank,
            condition,
        });
    }
    let proj = eig.eigenvectors.tr_mul(&atb);
    let scaled = DVector::from_iterator(nk, proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| p / l));
    let h = &eig.eigenvectors * scaled;
    let model = VolterraModel::from_kernels(design.clone(), h.iter().map(|&v| T::lit(v)).collect())?;
    Ok(LsFit {
        model,
        condition,
        rank,
    })
}

/// What gradient-based identification minimizes.
#[derive(Debug, Clone)]
pub enum VnleObjective<'a, T: Real> {
    /// Mean squared error against the transmitted symbols.
    Mse,
    /// Mean bitwise equivocation of the max-log demapper output, trained
    /// jointly with the demapper slopes.
    Bitwise {
        demapper: MlaDemapper<T>,
        bits: &'a BitFrame,
    },
}

/// Outcome of [`fit_gd`].
#[derive(Debug, Clone)]
pub struct GdFit<T: Real> {
    pub model: VolterraModel<T>,
    /// Jointly trained demapper for the bitwise objective.
    pub demapper: Option<MlaDemapper<T>>,
    pub trace: TrainTrace,
}

/// Gradient-descent identification under ADAM.
///
/// Samples before `split * n` train, the rest validate; the edge `M_1`
/// symbols of the frame are excluded from both. Training starts from `init`
/// (its mask is kept) or from the identity equalizer.
pub fn fit_gd<T: Real>(
    design: &VolterraDesign,
    y: &SymbolFrame<T>,
    x: &SymbolFrame<T>,
    objective: VnleObjective<'_, T>,
    opt: &AdamConfig,
    split: f64,
    init: Option<&VolterraModel<T>>,
) -> Result<GdFit<T>> {
    fit_gd_l1(design, y, x, objective, opt, split, init, 0.0)
}

#[allow(clippy::too_many_arguments)]
fn fit_gd_l1<T: Real>(
    design: &VolterraDesign,
    y: &SymbolFrame<T>,
    x: &SymbolFrame<T>,
    objective: VnleObjective<'_, T>,
    opt: &AdamConfig,
    split: f64,
    init: Option<&VolterraModel<T>>,
    l1: f64,
) -> Result<GdFit<T>> {
    if y.len() != x.len() {
        return invalid(format!("y has {} samples, x has {}", y.len(), x.len()));
    }
    if !(split > 0.0 && split <= 1.0) {
        return invalid("split must be in (0, 1]");
    }
    let model = match init {
        Some(m) if m.design() == design => m.clone(),
        Some(m) => {
            return invalid(format!(
                "initial model design {} differs from {design}",
                m.design()
            ))
        }
        None => VolterraModel::identity(design.clone()),
    };
    let usable = loss_range(design, y.len());
    let cut = ((y.len() as f64 * split).round() as usize).clamp(usable.start, usable.end);
    let train: Vec<usize> = (usable.start..cut).collect();
    let valid: Vec<usize> = if cut < usable.end {
        (cut..usable.end).collect()
    } else {
        train.clone()
    };
    let nk = model.kernels.len();
    let (demapper, bits) = match objective {
        VnleObjective::Mse => (None, None),
        VnleObjective::Bitwise { demapper, bits } => {
            if bits.len() != y.len() {
                return invalid("bits are not aligned with the symbols");
            }
            if bits.bits_per_symbol() != demapper.map().bits_per_symbol() {
                return invalid("bit width differs from the demapper constellation");
            }
            (Some(demapper.into_trained()), Some(bits))
        }
    };
    let mut params = model.kernels.clone();
    let mut active = model.active.clone();
    if let Some(d) = &demapper {
        params.extend_from_slice(d.params());
        active.extend(std::iter::repeat_n(true, d.params().len()));
    }
    let mut obj = GdObjective {
        basis: &model.basis,
        y: &y.symbols,
        x: &x.symbols,
        bits,
        demapper: demapper.clone(),
        train,
        valid,
        nk,
        l1: T::lit(l1),
        window: vec![T::zero(); design.window_len()],
        feats: vec![T::zero(); nk],
    };
    let trace = run_adam(&mut params, &mut active, &mut obj, opt, None)?;
    let mut out = model.clone();
    out.kernels.copy_from_slice(&params[..nk]);
    out.active.copy_from_slice(&active[..nk]);
    let demapper = demapper.map(|mut d| {
        d.set_params(&params[nk..]);
        d
    });
    Ok(GdFit {
        model: out,
        demapper,
        trace,
    })
}

struct GdObjective<'a, T: Real> {
    basis: &'a Basis,
    y: &'a [T],
    x: &'a [T],
    bits: Option<&'a BitFrame>,
    demapper: Option<MlaDemapper<T>>,
    train: Vec<usize>,
    valid: Vec<usize>,
    nk: usize,
    l1: T,
    window: Vec<T>,
    feats: Vec<T>,
}

impl<T: Real> GdObjective<'_, T> {
    /// Loss of sample `k` and, when `grad` is given, accumulates
    /// `scale * dloss/dparams`.
    fn sample(&mut self, params: &[T], k: usize, grad: Option<(&mut [T], T)>) -> T {
        self.basis.window(self.y, k, &mut self.window);
        self.basis.features_from_window(&self.window, &mut self.feats);
        let nk = self.nk;
        let out: T = self.feats.iter().zip(&params[..nk]).map(|(&f, &h)| f * h).sum();
        match (self.bits, &self.demapper) {
            (Some(bits), Some(d)) => {
                let m = d.map().bits_per_symbol();
                let seg = d.segment(out);
                let q = d.map().order();
                let inv_m = T::lit(1.0 / m as f64);
                let ln2 = T::lit(std::f64::consts::LN_2);
                let mut loss = T::zero();
                let mut d_out = T::zero();
                let mut dp = Vec::new();
                for (j, &b) in bits.row(k).iter().enumerate() {
                    let base = nk + 2 * (j * q + seg);
                    let (a, c) = (params[base], params[base + 1]);
                    let llr = a * out + c;
                    let t = if b == 0 { T::one() } else { -T::one() };
                    loss = loss + softplus(-t * llr) / ln2 * inv_m;
                    // d/dllr log2(1 + e^{-t llr}) = -t * sigmoid(-t llr) / ln 2
                    let g = -t * logistic(-t * llr) / ln2 * inv_m;
                    d_out = d_out + g * a;
                    dp.push((base, g * out, g));
                }
                if let Some((grad, scale)) = grad {
                    for i in 0..nk {
                        grad[i] = grad[i] + scale * d_out * self.feats[i];
                    }
                    for (base, ga, gc) in dp {
                        grad[base] = grad[base] + scale * ga;
                        grad[base + 1] = grad[base + 1] + scale * gc;
                    }
                }
                loss
            }
            _ => {
                let r = out - self.x[k];
                if let Some((grad, scale)) = grad {
                    let g = T::lit(2.0) * r * scale;
                    for i in 0..nk {
                        grad[i] = grad[i] + g * self.feats[i];
                    }
                }
                r * r
            }
        }
    }

    fn mean_loss(&mut self, params: &[T], idx: &[usize]) -> T {
        let mut acc = T::zero();
        for &k in idx {
            acc = acc + self.sample(params, k, None);
        }
        acc / T::lit(idx.len().max(1) as f64)
    }
}

impl<T: Real> Objective<T> for GdObjective<'_, T> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn loss_grad(&mut self, params: &[T], batch: &[usize], grad: &mut [T]) -> T {
        let scale = T::lit(1.0 / batch.len() as f64);
        let mut loss = T::zero();
        for &b in batch {
            let k = self.train[b];
            loss = loss + self.sample(params, k, Some((grad, scale))) * scale;
        }
        if self.l1 > T::zero() {
            for i in 0..self.nk {
                let h = params[i];
                loss = loss + self.l1 * h.abs();
                if h != T::zero() {
                    grad[i] = grad[i] + self.l1 * h.signum();
                }
            }
        }
        loss
    }

    fn valid_loss(&mut self, params: &[T]) -> T {
        let idx = std::mem::take(&mut self.valid);
        let l = self.mean_loss(params, &idx);
        self.valid = idx;
        l
    }
}

/// Objective value and analytic gradient on all given samples; exposed for
/// gradient verification.
pub fn objective_and_gradient<T: Real>(
    model: &VolterraModel<T>,
    y: &SymbolFrame<T>,
    x: &SymbolFrame<T>,
    objective: &VnleObjective<'_, T>,
    samples: &[usize],
) -> (T, Vec<T>) {
    let (demapper, bits) = match objective {
        VnleObjective::Mse => (None, None),
        VnleObjective::Bitwise { demapper, bits } => (Some(demapper.clone().into_trained()), Some(*bits)),
    };
    let nk = model.kernels.len();
    let mut params = model.kernels.clone();
    if let Some(d) = &demapper {
        params.extend_from_slice(d.params());
    }
    let mut obj = GdObjective {
        basis: &model.basis,
        y: &y.symbols,
        x: &x.symbols,
        bits,
        demapper,
        train: samples.to_vec(),
        valid: vec![],
        nk,
        l1: T::zero(),
        window: vec![T::zero(); model.design.window_len()],
        feats: vec![T::zero(); nk],
    };
    let mut grad = vec![T::zero(); params.len()];
    let batch: Vec<usize> = (0..samples.len()).collect();
    let loss = obj.loss_grad(&params, &batch, &mut grad);
    (loss, grad)
}

/// Outcome of L1-regularized identification followed by pruning.
#[derive(Debug, Clone)]
pub struct L1Fit<T: Real> {
    pub model: VolterraModel<T>,
    pub active_kernels: usize,
    pub trace: TrainTrace,
    pub fine_tune: Option<TrainTrace>,
}

/// LASSO-style sparsification: trains the MSE objective plus
/// `lambda * sum |h|`, masks kernels with `|h| < threshold`, then fine-tunes
/// the survivors without the penalty.
#[allow(clippy::too_many_arguments)]
pub fn prune_l1<T: Real>(
    design: &VolterraDesign,
    y: &SymbolFrame<T>,
    x: &SymbolFrame<T>,
    lambda: f64,
    threshold: f64,
    opt: &AdamConfig,
    split: f64,
    init: Option<&VolterraModel<T>>,
) -> Result<L1Fit<T>> {
    if !(lambda >= 0.0) || !(threshold >= 0.0) {
        return invalid("lambda and threshold must be nonnegative");
    }
    let fit = fit_gd_l1(design, y, x, VnleObjective::Mse, opt, split, init, lambda)?;
    let mut model = fit.model;
    let thr = T::lit(threshold);
    let mut pruned = false;
    for i in 0..model.kernels.len() {
        if model.active[i] && model.kernels[i].abs() < thr {
            model.mask(i);
            pruned = true;
        }
    }
    let fine_tune = if pruned {
        let ft = fit_gd(design, y, x, VnleObjective::Mse, opt, split, Some(&model))?;
        model = ft.model;
        Some(ft.trace)
    } else {
        None
    };
    Ok(L1Fit {
        active_kernels: model.active_count(),
        model,
        trace: fit.trace,
        fine_tune,
    })
}

/// Mean squared error between `y~` and `x` over the loss range of `design`.
pub fn mse<T: Real>(design: &VolterraDesign, y_eq: &SymbolFrame<T>, x: &SymbolFrame<T>) -> f64 {
    let r = loss_range(design, y_eq.len());
    let n = r.len().max(1) as f64;
    r.map(|k| (y_eq.symbols[k] - x.symbols[k]).f64().powi(2)).sum::<f64>() / n
}

impl<T: Real> MlaDemapper<T> {
    /// Converts a fixed demapper to the equivalent trainable one.
    pub fn into_trained(self) -> MlaDemapper<T> {
        match self.mode() {
            DemapperMode::Trained { .. } => self,
            DemapperMode::Fixed { .. } => self.to_trained(),
        }
    }
}
