//! Gray-labelled PAM constellations, bit frames and symbol frames.
//!
//! Each real dimension (lane) of a DP-IQ signal carries an independent
//! `2^m`-PAM. Label bit 1 is the sign bit, and a label bit value of 0 always
//! corresponds to a positive LLR; for the sign bit it also means a positive
//! amplitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Default frame length in symbols.
pub const DEFAULT_FRAME_LEN: usize = 66444;

pub const MAX_BITS_PER_SYMBOL: usize = 6;

/// Real-valued lane of a dual-polarization IQ signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Lane {
    #[default]
    XI,
    XQ,
    YI,
    YQ,
}

impl Lane {
    pub const ALL: [Lane; 4] = [Lane::XI, Lane::XQ, Lane::YI, Lane::YQ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Lane> {
        Lane::ALL.get(i as usize).copied()
    }
}

/// Reflected-Gray labelled `2^m`-PAM with unit average power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GrayPamMap<T: Real> {
    bits_per_symbol: usize,
    /// Strictly increasing amplitudes.
    levels: Vec<T>,
    /// `labels[i]` is the m-bit label of `levels[i]`, most significant
    /// (sign) bit first.
    labels: Vec<Vec<u8>>,
}

/// Builds the Gray-labelled `2^m`-PAM.
pub fn build_gray_pam<T: Real>(m: usize) -> Result<GrayPamMap<T>> {
    if !(1..=MAX_BITS_PER_SYMBOL).contains(&m) {
        return invalid(format!(
            "bits per symbol must be in 1..={MAX_BITS_PER_SYMBOL}, got {m}"
        ));
    }
    let q = 1usize << m;
    let power = ((q * q - 1) as f64) / 3.0;
    let scale = power.sqrt().recip();
    let levels = (0..q)
        .map(|i| T::lit((2.0 * i as f64 - (q as f64 - 1.0)) * scale))
        .collect();
    // Index the Gray sequence from the top so the most positive level is
    // labelled all-zero and the sign bit is 1 for negative amplitudes.
    let labels = (0..q)
        .map(|i| {
            let r = q - 1 - i;
            let g = r ^ (r >> 1);
            (0..m).map(|j| ((g >> (m - 1 - j)) & 1) as u8).collect()
        })
        .collect();
    Ok(GrayPamMap {
        bits_per_symbol: m,
        levels,
        labels,
    })
}

impl<T: Real> GrayPamMap<T> {
    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn order(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }

    #[inline]
    pub fn label_bit(&self, level: usize, bit: usize) -> u8 {
        self.labels[level][bit]
    }

    /// Decision boundaries between neighbouring levels (`2^m - 1` values).
    pub fn midpoints(&self) -> Vec<T> {
        self.levels
            .windows(2)
            .map(|w| (w[0] + w[1]) * T::lit(0.5))
            .collect()
    }

    /// Index of the level carrying `label`, if any.
    pub fn level_of(&self, label: &[u8]) -> Option<usize> {
        self.labels.iter().position(|l| l.as_slice() == label)
    }

    /// Nearest-level hard decision.
    pub fn slice(&self, y: T) -> usize {
        // Levels are equally spaced, so the midpoints partition the line.
        let q = self.levels.len();
        let step = self.levels[1] - self.levels[0];
        let pos = ((y - self.levels[0]) / step + T::lit(0.5)).floor();
        match pos.to_i64() {
            Some(p) if p <= 0 => 0,
            Some(p) if p as usize >= q => q - 1,
            Some(p) => p as usize,
            None => {
                if y > T::zero() {
                    q - 1
                } else {
                    0
                }
            }
        }
    }

    /// Map one label (length `m`) to its amplitude.
    pub fn map_label(&self, label: &[u8]) -> Result<T> {
        self.level_of(label)
            .map(|i| self.levels[i])
            .ok_or_else(|| crate::Error::InvalidArgument(format!("label {label:?} is not a valid bit tuple")))
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> GrayPamMap<U> {
        GrayPamMap {
            bits_per_symbol: self.bits_per_symbol,
            levels: self.levels.iter().map(|v| U::lit(v.f64())).collect(),
            labels: self.labels.clone(),
        }
    }

    fn label_index(&self, row: &[u8]) -> usize {
        // Inverse of the construction in `build_gray_pam`.
        let mut g = 0usize;
        for &b in row {
            g = (g << 1) | b as usize;
        }
        let mut r = g;
        let mut shift = g >> 1;
        while shift != 0 {
            r ^= shift;
            shift >>= 1;
        }
        self.levels.len() - 1 - r
    }
}

/// Transmitted bits of one lane, `n` rows of `m` bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitFrame {
    bits: Vec<u8>,
    bits_per_symbol: usize,
    pub lane: Lane,
    pub seed: u64,
}

impl BitFrame {
    /// Builds a frame from row-major bits.
    pub fn new(bits: Vec<u8>, bits_per_symbol: usize, lane: Lane, seed: u64) -> Result<Self> {
        if bits_per_symbol == 0 {
            return invalid("bits per symbol must be positive");
        }
        if bits.is_empty() || !bits.len().is_multiple_of(bits_per_symbol) {
            return invalid(format!(
                "bit buffer of length {} is not a nonempty multiple of {bits_per_symbol}",
                bits.len()
            ));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return invalid(format!("bit value {b} is not 0 or 1"));
        }
        Ok(BitFrame {
            bits,
            bits_per_symbol,
            lane,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.bits.len() / self.bits_per_symbol
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        let m = self.bits_per_symbol;
        &self.bits[i * m..(i + 1) * m]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    /// Rows `range` as a new frame.
    pub fn slice(&self, range: std::ops::Range<usize>) -> BitFrame {
        let m = self.bits_per_symbol;
        BitFrame {
            bits: self.bits[range.start * m..range.end * m].to_vec(),
            bits_per_symbol: m,
            lane: self.lane,
            seed: self.seed,
        }
    }

    /// Concatenates frames with equal `m`.
    pub fn concat(frames: &[&BitFrame]) -> Result<BitFrame> {
        let first = frames
            .first()
            .ok_or_else(|| crate::Error::InvalidArgument("no frames to concatenate".into()))?;
        let m = first.bits_per_symbol;
        if frames.iter().any(|f| f.bits_per_symbol != m) {
            return invalid("frames disagree on bits per symbol");
        }
        let bits = frames.iter().flat_map(|f| f.bits.iter().copied()).collect();
        BitFrame::new(bits, m, first.lane, first.seed)
    }
}

/// Where a symbol frame came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FrameSource {
    Mapped { lane: Lane, seed: u64 },
    Capture { path: String, lane: Lane },
    #[default]
    Derived,
}

/// Real-valued symbol sequence of one lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SymbolFrame<T: Real> {
    pub symbols: Vec<T>,
    pub source: FrameSource,
}

impl<T: Real> SymbolFrame<T> {
    pub fn new(symbols: Vec<T>) -> Self {
        SymbolFrame {
            symbols,
            source: FrameSource::Derived,
        }
    }

    pub fn with_source(symbols: Vec<T>, source: FrameSource) -> Self {
        SymbolFrame { symbols, source }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.symbols.iter().all(|v| v.is_finite())
    }

    pub fn mean_square(&self) -> T {
        if self.symbols.is_empty() {
            return T::zero();
        }
        self.symbols.iter().map(|&v| v * v).sum::<T>() / T::lit(self.symbols.len() as f64)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> SymbolFrame<T> {
        SymbolFrame::with_source(self.symbols[range].to_vec(), self.source.clone())
    }
}

/// Maps each bit row to the level carrying that label.
pub fn map_bits<T: Real>(map: &GrayPamMap<T>, frame: &BitFrame) -> Result<SymbolFrame<T>> {
    if frame.bits_per_symbol() != map.bits_per_symbol() {
        return invalid(format!(
            "frame has {} bits per symbol, constellation expects {}",
            frame.bits_per_symbol(),
            map.bits_per_symbol()
        ));
    }
    let symbols = (0..frame.len())
        .map(|i| map.levels[map.label_index(frame.row(i))])
        .collect();
    Ok(SymbolFrame::with_source(
        symbols,
        FrameSource::Mapped {
            lane: frame.lane,
            seed: frame.seed,
        },
    ))
}

/// Nearest-level slicing back to bits.
pub fn slice_to_bits<T: Real>(map: &GrayPamMap<T>, y: &SymbolFrame<T>, lane: Lane) -> BitFrame {
    let bits = y
        .symbols
        .iter()
        .flat_map(|&v| map.labels[map.slice(v)].iter().copied())
        .collect();
    BitFrame {
        bits,
        bits_per_symbol: map.bits_per_symbol(),
        lane,
        seed: 0,
    }
}

/// Uniform i.i.d. bits from a seeded ChaCha stream.
pub fn random_bits(n: usize, m: usize, seed: u64) -> Result<BitFrame> {
    random_bits_for_lane(n, m, seed, Lane::XI)
}

pub fn random_bits_for_lane(n: usize, m: usize, seed: u64, lane: Lane) -> Result<BitFrame> {
    if n == 0 {
        return invalid("frame length must be at least 1");
    }
    if !(1..=MAX_BITS_PER_SYMBOL).contains(&m) {
        return invalid(format!("bits per symbol must be in 1..={MAX_BITS_PER_SYMBOL}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n * m;
    let mut bits = Vec::with_capacity(total);
    while bits.len() < total {
        let word: u64 = rng.random();
        let take = (total - bits.len()).min(64);
        bits.extend((0..take).map(|k| ((word >> k) & 1) as u8));
    }
    BitFrame::new(bits, m, lane, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_m() {
        assert!(build_gray_pam::<f64>(0).is_err());
        assert!(build_gray_pam::<f64>(7).is_err());
    }

    #[test]
    fn bpsk_sign_convention() {
        let map = build_gray_pam::<f64>(1).unwrap();
        assert_eq!(map.levels(), &[-1.0, 1.0]);
        assert_eq!(map.labels(), &[vec![1], vec![0]]);
        let f = BitFrame::new(vec![0], 1, Lane::XI, 0).unwrap();
        assert_eq!(map_bits(&map, &f).unwrap().symbols, vec![1.0]);
    }

    #[test]
    fn pam8_levels_and_middle_bit() {
        let map = build_gray_pam::<f64>(3).unwrap();
        let s = 21f64.sqrt();
        for (i, &l) in map.levels().iter().enumerate() {
            assert!((l - (2.0 * i as f64 - 7.0) / s).abs() < 1e-15);
        }
        // Middle bit separates inner {±1, ±3} from outer {±5, ±7}.
        for (i, &l) in map.levels().iter().enumerate() {
            let inner = (l * s).abs() < 4.0;
            assert_eq!(map.label_bit(i, 1) == 1, inner, "level {i}");
        }
    }

    #[test]
    fn gray_and_power_invariants_all_m() {
        for m in 1..=6 {
            let map = build_gray_pam::<f64>(m).unwrap();
            let p: f64 = map.levels().iter().map(|v| v * v).sum::<f64>() / map.order() as f64;
            assert!((p - 1.0).abs() < 1e-12);
            for i in 1..map.order() {
                assert!(map.levels()[i] > map.levels()[i - 1]);
                let diff = map.labels()[i]
                    .iter()
                    .zip(&map.labels()[i - 1])
                    .filter(|(a, b)| a != b)
                    .count();
                assert_eq!(diff, 1);
            }
        }
    }

    #[test]
    fn noiseless_round_trip_exhaustive() {
        for m in 1..=6 {
            let map = build_gray_pam::<f64>(m).unwrap();
            let bits: Vec<u8> = map.labels().iter().rev().flatten().copied().collect();
            let frame = BitFrame::new(bits, m, Lane::YQ, 3).unwrap();
            let y = map_bits(&map, &frame).unwrap();
            let mut sorted = y.symbols.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(sorted, map.levels());
            let back = slice_to_bits(&map, &y, Lane::YQ);
            assert_eq!(back.as_slice(), frame.as_slice());
        }
    }

    #[test]
    fn map_bits_checks_width() {
        let map = build_gray_pam::<f64>(3).unwrap();
        let f = BitFrame::new(vec![0, 1], 2, Lane::XI, 0).unwrap();
        assert!(map_bits(&map, &f).is_err());
    }

    #[test]
    fn random_bits_deterministic() {
        let a = random_bits(4, 3, 7).unwrap();
        let b = random_bits(4, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_bits(4, 3, 8).unwrap());
        assert!(random_bits(0, 3, 1).is_err());
    }

    #[test]
    fn random_bits_are_balanced() {
        let f = random_bits(1_000_000, 1, 11).unwrap();
        let mean = f.as_slice().iter().map(|&b| b as f64).sum::<f64>() / 1e6;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn f32_constellation_matches_f64() {
        let a = build_gray_pam::<f32>(4).unwrap();
        let b = build_gray_pam::<f64>(4).unwrap();
        for (x, y) in a.levels().iter().zip(b.levels()) {
            assert!((*x as f64 - y).abs() < 1e-6);
        }
    }
}
