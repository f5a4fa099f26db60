//! Soft deep neural network equalizer: a multilayer perceptron over a
//! symmetric delay line that outputs one LLR per bit.

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::demapper::{equivocation_grad, LlrBlock};
use crate::error::{invalid, Error, Result};
use crate::modem::{BitFrame, SymbolFrame};
use crate::optim::{run_adam, AdamConfig, Objective, StepHook, TrainTrace};
use crate::scalar::Real;

pub use crate::demapper::equivocation_loss;

/// Breakpoint range of the interpolated tanh.
pub const ITANH_RANGE: f64 = 4.0;

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// Tanh linearly interpolated between `points` uniform breakpoints on
    /// [-4, 4], clamped outside.
    ITanh { points: usize },
    HTanh,
    Relu,
    Linear,
}

impl Activation {
    pub fn is_smooth(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Linear)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::ITanh { points } => write!(f, "itanh:{points}"),
            Activation::HTanh => write!(f, "htanh"),
            Activation::Relu => write!(f, "relu"),
            Activation::Linear => write!(f, "linear"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// `tanh`, `itanh` (16 points), `itanh:K`, `htanh`, `relu`, `linear`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let act = match s.as_str() {
            "tanh" => Activation::Tanh,
            "itanh" | "i-tanh" => Activation::ITanh { points: 16 },
            "htanh" | "h-tanh" | "hardtanh" => Activation::HTanh,
            "relu" => Activation::Relu,
            "linear" | "identity" => Activation::Linear,
            other => match other.strip_prefix("itanh:") {
                Some(k) => Activation::ITanh {
                    points: k
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad ITANH point count `{k}`")))?,
                },
                None => return invalid(format!("unknown activation `{other}`")),
            },
        };
        if let Activation::ITanh { points } = act {
            if points < 2 {
                return invalid("ITANH needs at least 2 points");
            }
        }
        Ok(act)
    }
}

/// Tabulated tanh at the ITANH breakpoints.
pub fn itanh_table<T: Real>(points: usize) -> Vec<T> {
    let step = 2.0 * ITANH_RANGE / (points - 1) as f64;
    (0..points)
        .map(|i| T::lit((-ITANH_RANGE + i as f64 * step).tanh()))
        .collect()
}

/// Value and derivative of a hidden activation.
#[inline]
fn activate<T: Real>(act: Activation, table: &[T], x: T) -> (T, T) {
    match act {
        Activation::Tanh => {
            let t = x.tanh();
            (t, T::one() - t * t)
        }
        Activation::HTanh => {
            if x > T::one() {
                (T::one(), T::zero())
            } else if x < -T::one() {
                (-T::one(), T::zero())
            } else {
                (x, T::one())
            }
        }
        Activation::Relu => {
            if x > T::zero() {
                (x, T::one())
            } else {
                (T::zero(), T::zero())
            }
        }
        Activation::Linear => (x, T::one()),
        Activation::ITanh { points } => {
            let r = T::lit(ITANH_RANGE);
            if x <= -r {
                return (table[0], T::zero());
            }
            if x >= r {
                return (table[points - 1], T::zero());
            }
            let step = T::lit(2.0 * ITANH_RANGE / (points - 1) as f64);
            let u = (x + r) / step;
            let i = u.floor().to_usize().unwrap_or(0).min(points - 2);
            let frac = u - T::lit(i as f64);
            let slope = (table[i + 1] - table[i]) / step;
            (table[i] + frac * (table[i + 1] - table[i]), slope)
        }
    }
}

/// Layer sizes `s_1|...|s_d` and the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DesignRepr", into = "DesignRepr")]
pub struct MlpDesign {
    sizes: Vec<usize>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct DesignRepr {
    layers: String,
    activation: Activation,
}

impl TryFrom<DesignRepr> for MlpDesign {
    type Error = Error;
    fn try_from(r: DesignRepr) -> Result<Self> {
        let d: MlpDesign = r.layers.parse()?;
        d.with_activation(r.activation)
    }
}

impl From<MlpDesign> for DesignRepr {
    fn from(d: MlpDesign) -> Self {
        DesignRepr {
            layers: d.layers_string(),
            activation: d.activation,
        }
    }
}

impl MlpDesign {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return invalid("an MLP needs at least an input and an output layer");
        }
        if sizes.contains(&0) {
            return invalid("layer sizes must be positive");
        }
        if let Activation::ITanh { points } = activation {
            if points < 2 {
                return invalid("ITANH needs at least 2 points");
            }
        }
        Ok(MlpDesign { sizes, activation })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn with_activation(&self, activation: Activation) -> Result<Self> {
        MlpDesign::new(self.sizes.clone(), activation)
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// True when the input layer is a symmetric delay line (odd width), as
    /// equalization requires.
    pub fn is_window(&self) -> bool {
        self.sizes[0] % 2 == 1
    }

    /// One-sided memory `M` with `2M + 1` inputs.
    pub fn memory(&self) -> usize {
        (self.sizes[0] - 1) / 2
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn weight_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.sizes[1..].iter().sum::<usize>()
    }

    pub fn layers_string(&self) -> String {
        let v: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        v.join("|")
    }

    fn layout(&self) -> Layout {
        let mut w_off = Vec::new();
        let mut b_off = Vec::new();
        let mut at = 0;
        for w in self.sizes.windows(2) {
            w_off.push(at);
            at += w[0] * w[1];
            b_off.push(at);
            at += w[1];
        }
        Layout {
            sizes: self.sizes.clone(),
            w_off,
            b_off,
        }
    }
}

impl fmt::Display for MlpDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.layers_string())
    }
}

impl FromStr for MlpDesign {
    type Err = Error;

    /// `17|16|10|3`, hidden activation tanh.
    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split('|')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad layer size `{t}` in `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        MlpDesign::new(sizes, Activation::Tanh)
    }
}

#[derive(Debug, Clone)]
struct Layout {
    sizes: Vec<usize>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
}

impl Layout {
    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
struct Cache<T> {
    /// `a[0]` is the input window, `a[l + 1]` the output of layer `l`.
    a: Vec<Vec<T>>,
    /// Activation derivatives of the hidden layers.
    da: Vec<Vec<T>>,
    delta: Vec<T>,
    prev: Vec<T>,
}

impl<T: Real> Cache<T> {
    fn new(sizes: &[usize]) -> Self {
        let widest = *sizes.iter().max().unwrap();
        Cache {
            a: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            da: sizes[1..].iter().map(|&s| vec![T::zero(); s]).collect(),
            delta: Vec::with_capacity(widest),
            prev: Vec::with_capacity(widest),
        }
    }

    fn output(&self) -> &[T] {
        self.a.last().unwrap()
    }
}

fn forward_cached<T: Real>(lay: &Layout, act: Activation, table: &[T], p: &[T], x: &[T], c: &mut Cache<T>) {
    c.a[0].copy_from_slice(x);
    let nl = lay.layers();
    for l in 0..nl {
        let (ni, no) = (lay.sizes[l], lay.sizes[l + 1]);
        let w = &p[lay.w_off[l]..lay.w_off[l] + ni * no];
        let b = &p[lay.b_off[l]..lay.b_off[l] + no];
        let (lo, hi) = c.a.split_at_mut(l + 1);
        let input = &lo[l];
        let out = &mut hi[0];
        for i in 0..no {
            let row = &w[i * ni..(i + 1) * ni];
            let mut z = b[i];
            for (wij, &aj) in row.iter().zip(input.iter()) {
                z = z + *wij * aj;
            }
            if l + 1 == nl {
                out[i] = z;
                c.da[l][i] = T::one();
            } else {
                let (v, d) = activate(act, table, z);
                out[i] = v;
                c.da[l][i] = d;
            }
        }
    }
}

/// Accumulates the parameter gradient for output sensitivity `dout` into
/// `grad`, and the input gradient into `dinput` when given.
fn backward<T: Real>(lay: &Layout, p: &[T], c: &mut Cache<T>, dout: &[T], grad: &mut [T], dinput: Option<&mut [T]>) {
    let nl = lay.layers();
    c.delta.clear();
    c.delta.extend_from_slice(dout);
    let mut dinput = dinput;
    for l in (0..nl).rev() {
        let (ni, no) = (lay.sizes[l], lay.sizes[l + 1]);
        let wo = lay.w_off[l];
        let bo = lay.b_off[l];
        let input = &c.a[l];
        for i in 0..no {
            let d = c.delta[i];
            if d == T::zero() {
                continue;
            }
            let g = &mut grad[wo + i * ni..wo + (i + 1) * ni];
            for (gj, &aj) in g.iter_mut().zip(input.iter()) {
                *gj = *gj + d * aj;
            }
            grad[bo + i] = grad[bo + i] + d;
        }
        if l == 0 && dinput.is_none() {
            break;
        }
        c.prev.clear();
        c.prev.resize(ni, T::zero());
        let w = &p[wo..wo + ni * no];
        for i in 0..no {
            let d = c.delta[i];
            if d == T::zero() {
                continue;
            }
            for (pj, &wij) in c.prev.iter_mut().zip(w[i * ni..(i + 1) * ni].iter()) {
                *pj = *pj + wij * d;
            }
        }
        if l == 0 {
            if let Some(di) = dinput.as_deref_mut() {
                di.copy_from_slice(&c.prev);
            }
            break;
        }
        for (pj, &dj) in c.prev.iter_mut().zip(c.da[l - 1].iter()) {
            *pj = *pj * dj;
        }
        std::mem::swap(&mut c.delta, &mut c.prev);
    }
}

/// Trained (or initialized) network. Parameters are stored flat, per layer
/// the row-major `s_{l+1} x s_l` weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T: Real> {
    design: MlpDesign,
    layout: Layout,
    params: Vec<T>,
    /// Per parameter; biases are always active.
    active: Vec<bool>,
    table: Vec<T>,
}

impl PartialEq for Layout {
    fn eq(&self, o: &Self) -> bool {
        self.sizes == o.sizes
    }
}

impl<T: Real> MlpModel<T> {
    pub fn zeros(design: &MlpDesign) -> Self {
        let layout = design.layout();
        let n = design.param_count();
        let table = match design.activation {
            Activation::ITanh { points } => itanh_table(points),
            _ => Vec::new(),
        };
        MlpModel {
            design: design.clone(),
            layout,
            params: vec![T::zero(); n],
            active: vec![true; n],
            table,
        }
    }

    /// Uniform weights in `±sqrt(6 / (s_l + s_{l+1}))`, zero biases.
    pub fn init(design: &MlpDesign, seed: u64) -> Self {
        let mut m = Self::zeros(design);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..m.layout.layers() {
            let (ni, no) = (m.layout.sizes[l], m.layout.sizes[l + 1]);
            let lim = (6.0 / (ni + no) as f64).sqrt();
            let dist = Uniform::new_inclusive(-lim, lim).unwrap();
            let wo = m.layout.w_off[l];
            for v in &mut m.params[wo..wo + ni * no] {
                *v = T::lit(dist.sample(&mut rng));
            }
        }
        m
    }

    /// Builds a model from per-layer row-major weights and biases.
    pub fn from_layers(design: &MlpDesign, weights: &[Vec<T>], biases: &[Vec<T>]) -> Result<Self> {
        let mut m = Self::zeros(design);
        let nl = m.layout.layers();
        if weights.len() != nl || biases.len() != nl {
            return invalid(format!("expected {nl} weight matrices and bias vectors"));
        }
        for l in 0..nl {
            let (ni, no) = (m.layout.sizes[l], m.layout.sizes[l + 1]);
            if weights[l].len() != ni * no || biases[l].len() != no {
                return invalid(format!("layer {l} has the wrong shape"));
            }
            if weights[l].iter().chain(&biases[l]).any(|v| !v.is_finite()) {
                return invalid("parameters must be finite");
            }
            let wo = m.layout.w_off[l];
            m.params[wo..wo + ni * no].copy_from_slice(&weights[l]);
            let bo = m.layout.b_off[l];
            m.params[bo..bo + no].copy_from_slice(&biases[l]);
        }
        Ok(m)
    }

    pub fn design(&self) -> &MlpDesign {
        &self.design
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Row-major weight matrix of layer `l` (0-based, `s_{l+2} x s_{l+1}`).
    pub fn weights(&self, l: usize) -> &[T] {
        let (ni, no) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
        &self.params[self.layout.w_off[l]..self.layout.w_off[l] + ni * no]
    }

    pub fn biases(&self, l: usize) -> &[T] {
        let no = self.layout.sizes[l + 1];
        &self.params[self.layout.b_off[l]..self.layout.b_off[l] + no]
    }

    /// Weight mask of layer `l`; false entries are pruned and exactly zero.
    pub fn mask(&self, l: usize) -> &[bool] {
        let (ni, no) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
        &self.active[self.layout.w_off[l]..self.layout.w_off[l] + ni * no]
    }

    /// Number of unmasked weights per layer.
    pub fn active_weights(&self) -> Vec<usize> {
        (0..self.layout.layers())
            .map(|l| self.mask(l).iter().filter(|&&a| a).count())
            .collect()
    }

    /// Fraction of weights (biases excluded) that are pruned.
    pub fn sparsity(&self) -> f64 {
        let total = self.design.weight_count();
        let active: usize = self.active_weights().iter().sum();
        (total - active) as f64 / total as f64
    }

    /// Prunes weight `i` of layer `l`.
    pub fn prune_weight(&mut self, l: usize, i: usize) {
        let k = self.layout.w_off[l] + i;
        self.active[k] = false;
        self.params[k] = T::zero();
    }

    /// The same parameters evaluated with another hidden activation (no
    /// retraining).
    pub fn with_activation(&self, activation: Activation) -> Result<Self> {
        let design = self.design.with_activation(activation)?;
        let mut m = Self::zeros(&design);
        m.params.copy_from_slice(&self.params);
        m.active.copy_from_slice(&self.active);
        Ok(m)
    }

    pub fn forward(&self, window: &[T]) -> Vec<T> {
        assert_eq!(window.len(), self.design.inputs(), "window length");
        let mut c = Cache::new(&self.layout.sizes);
        forward_cached(&self.layout, self.design.activation, &self.table, &self.params, window, &mut c);
        c.output().to_vec()
    }

    /// Gradient of output `j` with respect to the input window.
    pub fn input_gradient(&self, window: &[T], j: usize) -> Vec<T> {
        let mut c = Cache::new(&self.layout.sizes);
        forward_cached(&self.layout, self.design.activation, &self.table, &self.params, window, &mut c);
        let mut dout = vec![T::zero(); self.design.outputs()];
        dout[j] = T::one();
        let mut scratch = vec![T::zero(); self.params.len()];
        let mut din = vec![T::zero(); window.len()];
        backward(&self.layout, &self.params, &mut c, &dout, &mut scratch, Some(&mut din));
        din
    }

    /// Pre-activations of every hidden unit, layer by layer.
    pub fn hidden_preactivations(&self, window: &[T]) -> Vec<T> {
        let mut out = Vec::new();
        let mut a = window.to_vec();
        for l in 0..self.layout.layers() - 1 {
            let (ni, no) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
            let (w, b) = (self.weights(l), self.biases(l));
            let next: Vec<T> = (0..no)
                .map(|i| {
                    let z = b[i] + (0..ni).map(|j| w[i * ni + j] * a[j]).sum::<T>();
                    out.push(z);
                    activate(self.design.activation, &self.table, z).0
                })
                .collect();
            a = next;
        }
        out
    }

    /// Signs (pre-activation > 0) of every hidden unit, layer by layer.
    pub fn activation_pattern(&self, window: &[T]) -> Vec<bool> {
        self.hidden_preactivations(window)
            .into_iter()
            .map(|z| z > T::zero())
            .collect()
    }

    /// LLRs for every symbol of `y` (zero-padded delay line).
    ///
    /// # Panics
    /// If the input layer is not a symmetric window (even width).
    pub fn equalize(&self, y: &SymbolFrame<T>) -> LlrBlock<T> {
        assert!(self.design.is_window(), "input layer {} is not a symmetric window", self.design.inputs());
        let m = self.design.outputs();
        let mm = self.design.memory();
        let padded = pad(&y.symbols, mm);
        let mut c = Cache::new(&self.layout.sizes);
        let mut out = Vec::with_capacity(y.len() * m);
        for k in 0..y.len() {
            forward_cached(
                &self.layout,
                self.design.activation,
                &self.table,
                &self.params,
                &padded[k..k + 2 * mm + 1],
                &mut c,
            );
            out.extend_from_slice(c.output());
        }
        LlrBlock::new(out, m).expect("outputs are positive")
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> MlpModel<U> {
        let mut m = MlpModel::<U>::zeros(&self.design);
        for (d, s) in m.params.iter_mut().zip(&self.params) {
            *d = U::lit(s.f64());
        }
        m.active.copy_from_slice(&self.active);
        m
    }
}

fn pad<T: Real>(y: &[T], m: usize) -> Vec<T> {
    let mut p = vec![T::zero(); y.len() + 2 * m];
    p[m..m + y.len()].copy_from_slice(y);
    p
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct ModelRepr<T: Real> {
    design: MlpDesign,
    /// Per layer, rows of the weight matrix.
    weights: Vec<Vec<Vec<T>>>,
    biases: Vec<Vec<T>>,
    masks: Vec<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    itanh_table: Option<Vec<T>>,
}

impl<T: Real> Serialize for MlpModel<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let nl = self.layout.layers();
        let rows = |v: &[T], ni: usize| v.chunks(ni).map(|r| r.to_vec()).collect::<Vec<_>>();
        let repr = ModelRepr {
            design: self.design.clone(),
            weights: (0..nl).map(|l| rows(self.weights(l), self.layout.sizes[l])).collect(),
            biases: (0..nl).map(|l| self.biases(l).to_vec()).collect(),
            masks: (0..nl)
                .map(|l| self.mask(l).chunks(self.layout.sizes[l]).map(|r| r.to_vec()).collect())
                .collect(),
            itanh_table: (!self.table.is_empty()).then(|| self.table.clone()),
        };
        repr.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for MlpModel<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ModelRepr::<T>::deserialize(d)?;
        let flat = |v: &[Vec<T>]| v.concat();
        let weights: Vec<Vec<T>> = r.weights.iter().map(|m| flat(m)).collect();
        let mut m = MlpModel::from_layers(&r.design, &weights, &r.biases).map_err(D::Error::custom)?;
        if r.masks.len() != m.layout.layers() {
            return Err(D::Error::custom("mask count does not match the layers"));
        }
        for (l, mask) in r.masks.iter().enumerate() {
            let mask = mask.concat();
            if mask.len() != m.mask(l).len() {
                return Err(D::Error::custom(format!("mask of layer {l} has the wrong shape")));
            }
            for (i, &a) in mask.iter().enumerate() {
                if !a {
                    if m.weights(l)[i] != T::zero() {
                        return Err(D::Error::custom("masked weight is not zero"));
                    }
                    m.prune_weight(l, i);
                }
            }
        }
        if let Some(t) = r.itanh_table {
            if t.len() != m.table.len() {
                return Err(D::Error::custom("ITANH table does not match the point count"));
            }
        }
        Ok(m)
    }
}

/// What the network is trained to output.
#[derive(Debug, Clone, Copy)]
pub enum MlpTarget<'a, T: Real> {
    /// Mean bitwise equivocation against the transmitted bits.
    Bits(&'a BitFrame),
    /// Mean squared error against row-major `n x s_d` targets.
    Values(&'a [T]),
}

#[derive(Debug, Clone)]
pub struct MlpFit<T: Real> {
    pub model: MlpModel<T>,
    pub trace: TrainTrace,
}

struct MlpObjective<'a, T: Real> {
    layout: Layout,
    act: Activation,
    table: Vec<T>,
    padded: Vec<T>,
    width: usize,
    target: MlpTarget<'a, T>,
    outputs: usize,
    cut: usize,
    n: usize,
    cache: Cache<T>,
    dout: Vec<T>,
}

impl<'a, T: Real> MlpObjective<'a, T> {
    fn new(model: &MlpModel<T>, y: &[T], target: MlpTarget<'a, T>, cut: usize) -> Self {
        let mm = model.design.memory();
        MlpObjective {
            layout: model.layout.clone(),
            act: model.design.activation,
            table: model.table.clone(),
            padded: pad(y, mm),
            width: 2 * mm + 1,
            target,
            outputs: model.design.outputs(),
            cut,
            n: y.len(),
            cache: Cache::new(&model.layout.sizes),
            dout: vec![T::zero(); model.design.outputs()],
        }
    }

    /// Loss of sample `k`; fills `self.dout` with its output sensitivity
    /// scaled by `w`.
    fn sample(&mut self, p: &[T], k: usize, w: T) -> T {
        forward_cached(
            &self.layout,
            self.act,
            &self.table,
            p,
            &self.padded[k..k + self.width],
            &mut self.cache,
        );
        let out = self.cache.output();
        let m = self.outputs;
        let mut loss = T::zero();
        match self.target {
            MlpTarget::Bits(bits) => {
                for (j, &b) in bits.row(k).iter().enumerate() {
                    loss = loss + equivocation_loss(b, out[j]);
                    self.dout[j] = equivocation_grad(b, out[j]) * w;
                }
            }
            MlpTarget::Values(t) => {
                for j in 0..m {
                    let e = out[j] - t[k * m + j];
                    loss = loss + e * e;
                    self.dout[j] = T::lit(2.0) * e * w;
                }
            }
        }
        loss
    }

    fn batch_loss_grad(&mut self, p: &[T], batch: &[usize], grad: &mut [T]) -> T {
        let w = T::one() / T::lit((batch.len() * self.outputs) as f64);
        let mut loss = T::zero();
        for &k in batch {
            loss = loss + self.sample(p, k, w);
            let dout = std::mem::take(&mut self.dout);
            backward(&self.layout, p, &mut self.cache, &dout, grad, None);
            self.dout = dout;
        }
        loss * w
    }
}

impl<T: Real> Objective<T> for MlpObjective<'_, T> {
    fn n_train(&self) -> usize {
        self.cut
    }

    fn loss_grad(&mut self, p: &[T], batch: &[usize], grad: &mut [T]) -> T {
        self.batch_loss_grad(p, batch, grad)
    }

    fn valid_loss(&mut self, p: &[T]) -> T {
        let mut acc = T::zero();
        for k in self.cut..self.n {
            acc = acc + self.sample(p, k, T::zero());
        }
        acc / T::lit(((self.n - self.cut) * self.outputs) as f64)
    }
}

fn check_data<T: Real>(design: &MlpDesign, y: &SymbolFrame<T>, target: &MlpTarget<'_, T>, split: f64) -> Result<usize> {
    if !design.is_window() {
        return invalid(format!("input layer {} is not a symmetric window of odd width", design.inputs()));
    }
    if y.len() < 10 {
        return invalid(format!("need at least 10 windows, got {}", y.len()));
    }
    if !y.is_finite() {
        return invalid("received symbols must be finite");
    }
    match target {
        MlpTarget::Bits(b) => {
            if b.len() != y.len() {
                return invalid("bits are not aligned with the symbols");
            }
            if b.bits_per_symbol() != design.outputs() {
                return invalid(format!(
                    "design has {} outputs but the frame carries {} bits per symbol",
                    design.outputs(),
                    b.bits_per_symbol()
                ));
            }
        }
        MlpTarget::Values(t) => {
            if t.len() != y.len() * design.outputs() {
                return invalid("targets are not aligned with the symbols");
            }
        }
    }
    if !(split > 0.0 && split < 1.0) {
        return invalid("split must be in (0, 1)");
    }
    let cut = ((y.len() as f64) * split).round() as usize;
    if cut < 10 || cut >= y.len() {
        return invalid("split leaves fewer than 10 training windows or no validation windows");
    }
    Ok(cut)
}

/// Trains by ADAM on the first `split` fraction of the windows, validating on
/// the rest. Starts from `init` or from the seeded initialization.
pub fn train<T: Real>(
    design: &MlpDesign,
    y: &SymbolFrame<T>,
    target: MlpTarget<'_, T>,
    opt: &AdamConfig,
    split: f64,
    init: Option<&MlpModel<T>>,
) -> Result<MlpFit<T>> {
    let cut = check_data(design, y, &target, split)?;
    let mut model = match init {
        Some(m) => {
            if m.design.sizes != design.sizes {
                return invalid("initial model has a different design");
            }
            m.with_activation(design.activation)?
        }
        None => MlpModel::init(design, opt.seed),
    };
    let mut obj = MlpObjective::new(&model, &y.symbols, target, cut);
    let trace = run_adam(&mut model.params, &mut model.active, &mut obj, opt, None)?;
    Ok(MlpFit { model, trace })
}

/// Mean loss over the samples `batch` and its exact gradient. Pruned weights
/// report zero gradient.
pub fn backprop_gradient<T: Real>(
    model: &MlpModel<T>,
    y: &SymbolFrame<T>,
    target: MlpTarget<'_, T>,
    batch: &[usize],
) -> Result<(T, Vec<T>)> {
    if batch.is_empty() {
        return invalid("empty batch");
    }
    if batch.iter().any(|&k| k >= y.len()) {
        return invalid("batch index out of range");
    }
    let mut obj = MlpObjective::new(model, &y.symbols, target, y.len());
    let mut grad = vec![T::zero(); model.params.len()];
    let loss = obj.batch_loss_grad(&model.params, batch, &mut grad);
    for (g, &a) in grad.iter_mut().zip(&model.active) {
        if !a {
            *g = T::zero();
        }
    }
    Ok((loss, grad))
}

/// Mean loss over `batch` with parameters `params` (same layout as
/// [`MlpModel::params`]); for finite-difference checks.
pub fn loss_at<T: Real>(
    model: &MlpModel<T>,
    params: &[T],
    y: &SymbolFrame<T>,
    target: MlpTarget<'_, T>,
    batch: &[usize],
) -> T {
    let mut obj = MlpObjective::new(model, &y.symbols, target, y.len());
    let w = T::one() / T::lit((batch.len() * model.design.outputs()) as f64);
    let mut loss = T::zero();
    for &k in batch {
        loss = loss + obj.sample(params, k, T::zero());
    }
    loss * w
}

/// Gradual magnitude pruning schedule, in optimizer steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub initial_sparsity: f64,
    pub final_sparsity: f64,
    pub start_step: usize,
    /// Number of pruning intervals after the start.
    pub steps: usize,
    pub interval: usize,
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        let (si, sf) = (self.initial_sparsity, self.final_sparsity);
        if !(0.0 <= si && si <= sf && sf < 1.0) {
            return invalid(format!("pruning needs 0 <= s_i <= s_f < 1, got s_i={si}, s_f={sf}"));
        }
        if self.interval == 0 {
            return invalid("pruning interval must be positive");
        }
        Ok(())
    }

    /// Target sparsity at global step `t`, or `None` off the pruning grid.
    pub fn target_at(&self, t: usize) -> Option<f64> {
        if t < self.start_step {
            return None;
        }
        let dt = t - self.start_step;
        if !dt.is_multiple_of(self.interval) || dt / self.interval > self.steps {
            return None;
        }
        if self.steps == 0 {
            return Some(self.final_sparsity);
        }
        let frac = dt as f64 / (self.steps * self.interval) as f64;
        let (si, sf) = (self.initial_sparsity, self.final_sparsity);
        Some(sf + (si - sf) * (1.0 - frac).powi(3))
    }

    pub fn last_step(&self) -> usize {
        self.start_step + self.steps * self.interval
    }
}

#[derive(Debug, Clone)]
pub struct PruneResult<T: Real> {
    pub model: MlpModel<T>,
    /// (global step, overall weight sparsity) after each pruning step.
    pub sparsity_trace: Vec<(usize, f64)>,
    pub prune_trace: TrainTrace,
    pub fine_tune: TrainTrace,
}

/// Masks, per layer, the smallest-magnitude weights until `ceil(s * size)`
/// are pruned. Returns true if the mask changed.
fn prune_layers<T: Real>(lay: &Layout, params: &mut [T], active: &mut [bool], s: f64) -> bool {
    let mut changed = false;
    for l in 0..lay.layers() {
        let len = lay.sizes[l] * lay.sizes[l + 1];
        let wo = lay.w_off[l];
        let target = ((s * len as f64) - 1e-9).ceil().max(0.0) as usize;
        let pruned = active[wo..wo + len].iter().filter(|&&a| !a).count();
        if target <= pruned {
            continue;
        }
        let mut idx: Vec<usize> = (0..len).filter(|&i| active[wo + i]).collect();
        idx.sort_by(|&a, &b| {
            params[wo + a]
                .abs()
                .partial_cmp(&params[wo + b].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in idx.iter().take(target - pruned) {
            active[wo + i] = false;
            params[wo + i] = T::zero();
            changed = true;
        }
    }
    changed
}

/// Continues training `model` while pruning it along `schedule`, then
/// fine-tunes the final mask with the usual early stopping.
pub fn prune_gradual<T: Real>(
    model: &MlpModel<T>,
    y: &SymbolFrame<T>,
    target: MlpTarget<'_, T>,
    schedule: &PruneSchedule,
    opt: &AdamConfig,
    split: f64,
) -> Result<PruneResult<T>> {
    schedule.validate()?;
    let cut = check_data(&model.design, y, &target, split)?;
    let steps_per_epoch = cut.div_ceil(opt.batch_size.max(1));
    let epochs = schedule.last_step().div_ceil(steps_per_epoch).max(1);
    if epochs > opt.max_epochs {
        return invalid(format!(
            "pruning schedule ends at step {} but training runs {} steps per epoch for at most {} epochs",
            schedule.last_step(),
            steps_per_epoch,
            opt.max_epochs
        ));
    }
    let mut m = model.clone();
    let mut obj = MlpObjective::new(&m, &y.symbols, target, cut);
    let layout = m.layout.clone();
    let total = m.design.weight_count();
    let mut sparsity_trace = Vec::new();
    let mut hook = |t: usize, p: &mut [T], a: &mut [bool]| -> bool {
        let Some(s) = schedule.target_at(t) else {
            return false;
        };
        let changed = prune_layers(&layout, p, a, s);
        let pruned = (0..layout.layers())
            .map(|l| {
                let wo = layout.w_off[l];
                a[wo..wo + layout.sizes[l] * layout.sizes[l + 1]]
                    .iter()
                    .filter(|&&x| !x)
                    .count()
            })
            .sum::<usize>();
        sparsity_trace.push((t, pruned as f64 / total as f64));
        changed
    };
    let phase = AdamConfig {
        max_epochs: epochs,
        patience: usize::MAX,
        ..opt.clone()
    };
    let hook_ref: &mut StepHook<'_, T> = &mut hook;
    let prune_trace = run_adam(&mut m.params, &mut m.active, &mut obj, &phase, Some(hook_ref))?;
    let fine = AdamConfig {
        seed: opt.seed.wrapping_add(1),
        ..opt.clone()
    };
    let fine_tune = run_adam(&mut m.params, &mut m.active, &mut obj, &fine, None)?;
    Ok(PruneResult {
        model: m,
        sparsity_trace,
        prune_trace,
        fine_tune,
    })
}
