//! Synthetic component-nonlinearity channel and SNR/OSNR bookkeeping.
//!
//! The channel is a Wiener–Hammerstein cascade: a pre-FIR, a memoryless
//! polynomial `a1 u + a2 u^2 + ... + a5 u^5`, a post-FIR, then additive
//! white Gaussian noise. Both FIRs use "same" alignment with the tap at
//! index `(len - 1) / 2` on delay 0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::modem::SymbolFrame;
use crate::scalar::Real;

pub mod capture;

/// OSNR reference bandwidth (0.1 nm at 1550 nm) in GHz.
pub const OSNR_REFERENCE_BANDWIDTH_GHZ: f64 = 12.5;

/// Convention recorded alongside every OSNR-labelled result.
pub const SNR_CONVENTION: &str = "snr_db = osnr_db - 10*log10(symbol_rate_ghz / 12.5); \
     0.1 nm reference bandwidth, noise referred to one real dimension of a unit-power lane, \
     dual-polarization signal power split evenly over the four lanes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WienerHammersteinChannel<T: Real> {
    pub pre_fir: Vec<T>,
    /// Polynomial coefficients `a1..a5`.
    pub poly: [T; 5],
    pub post_fir: Vec<T>,
    /// Noise standard deviation relative to a unit-power noiseless output.
    pub noise_sigma: T,
    pub seed: u64,
}

impl<T: Real> Default for WienerHammersteinChannel<T> {
    fn default() -> Self {
        let v = |xs: &[f64]| xs.iter().map(|&x| T::lit(x)).collect::<Vec<_>>();
        WienerHammersteinChannel {
            pre_fir: v(&[0.08, 0.9, 0.25, -0.12, 0.04]),
            poly: [
                T::lit(1.0),
                T::lit(0.02),
                T::lit(-0.12),
                T::zero(),
                T::lit(0.03),
            ],
            post_fir: v(&[1.0, 0.15]),
            noise_sigma: T::zero(),
            seed: 0,
        }
    }
}

impl<T: Real> WienerHammersteinChannel<T> {
    /// The memoryless identity channel plus noise.
    pub fn awgn(noise_sigma: T, seed: u64) -> Self {
        WienerHammersteinChannel {
            pre_fir: vec![T::one()],
            poly: [T::one(), T::zero(), T::zero(), T::zero(), T::zero()],
            post_fir: vec![T::one()],
            noise_sigma,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_sigma: T, seed: u64) -> Self {
        self.noise_sigma = noise_sigma;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.poly[0] == T::zero() {
            return invalid("linear polynomial coefficient a1 must be nonzero");
        }
        if self.pre_fir.is_empty() || self.post_fir.is_empty() {
            return invalid("FIR tap vectors must be nonempty");
        }
        let finite = self
            .pre_fir
            .iter()
            .chain(&self.post_fir)
            .chain(&self.poly)
            .all(|v| v.is_finite());
        if !finite {
            return invalid("channel coefficients must be finite");
        }
        if !(self.noise_sigma >= T::zero()) || !self.noise_sigma.is_finite() {
            return invalid("noise sigma must be finite and nonnegative");
        }
        Ok(())
    }

    fn poly_eval(&self, u: T) -> T {
        // Horner on a1 u + a2 u^2 + ... + a5 u^5.
        let a = &self.poly;
        u * (a[0] + u * (a[1] + u * (a[2] + u * (a[3] + u * a[4]))))
    }

    /// Noiseless output before normalization.
    pub fn distort(&self, x: &[T]) -> Vec<T> {
        let u = convolve_same(x, &self.pre_fir);
        let v: Vec<T> = u.into_iter().map(|s| self.poly_eval(s)).collect();
        convolve_same(&v, &self.post_fir)
    }
}

/// Passes `x` through the channel; output has unit mean square.
pub fn propagate<T: Real>(
    ch: &WienerHammersteinChannel<T>,
    x: &SymbolFrame<T>,
) -> Result<SymbolFrame<T>> {
    propagate_with_ideal(ch, x).map(|(y, _)| y)
}

/// Like [`propagate`] but also returns the noiseless component of the
/// output under the same final scaling.
pub fn propagate_with_ideal<T: Real>(
    ch: &WienerHammersteinChannel<T>,
    x: &SymbolFrame<T>,
) -> Result<(SymbolFrame<T>, SymbolFrame<T>)> {
    ch.validate()?;
    if x.is_empty() {
        return invalid("input frame is empty");
    }
    if !x.is_finite() {
        return invalid("input frame has non-finite symbols");
    }
    let mut ideal = ch.distort(&x.symbols);
    normalize(&mut ideal);
    let mut rng = ChaCha8Rng::seed_from_u64(ch.seed);
    let mut y: Vec<T> = ideal
        .iter()
        .map(|&s| {
            if ch.noise_sigma > T::zero() {
                let z: f64 = StandardNormal.sample(&mut rng);
                s + ch.noise_sigma * T::lit(z)
            } else {
                s
            }
        })
        .collect();
    let g = normalize(&mut y);
    for v in &mut ideal {
        *v = *v * g;
    }
    Ok((
        SymbolFrame::with_source(y, x.source.clone()),
        SymbolFrame::with_source(ideal, x.source.clone()),
    ))
}

/// Scales `v` to unit mean square and returns the applied gain.
fn normalize<T: Real>(v: &mut [T]) -> T {
    let ms = v.iter().map(|&s| s * s).sum::<T>() / T::lit(v.len() as f64);
    if ms <= T::zero() {
        return T::one();
    }
    let g = ms.sqrt().recip();
    for s in v.iter_mut() {
        *s = *s * g;
    }
    g
}

/// "Same"-length convolution; tap `(len - 1) / 2` sits on delay 0.
pub fn convolve_same<T: Real>(x: &[T], taps: &[T]) -> Vec<T> {
    let n = x.len() as isize;
    let c = ((taps.len() - 1) / 2) as isize;
    (0..n)
        .map(|k| {
            taps.iter()
                .enumerate()
                .filter_map(|(i, &h)| {
                    let j = k - (i as isize - c);
                    (0..n).contains(&j).then(|| h * x[j as usize])
                })
                .sum()
        })
        .collect()
}

/// Noise standard deviation per real dimension for a unit-power signal.
pub fn sigma_from_snr(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    10f64.powf(-snr_db / 10.0).sqrt()
}

/// Electrical SNR implied by an OSNR measured in 0.1 nm.
pub fn osnr_to_snr(osnr_db: f64, symbol_rate_ghz: f64) -> Result<f64> {
    if !(symbol_rate_ghz > 0.0) {
        return invalid("symbol rate must be positive");
    }
    Ok(osnr_db - 10.0 * (symbol_rate_ghz / OSNR_REFERENCE_BANDWIDTH_GHZ).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::{build_gray_pam, map_bits, random_bits};

    fn frame(n: usize, seed: u64) -> SymbolFrame<f64> {
        let map = build_gray_pam(3).unwrap();
        map_bits(&map, &random_bits(n, 3, seed).unwrap()).unwrap()
    }

    #[test]
    fn identity_channel_is_exact() {
        let x = frame(1000, 1);
        let ch = WienerHammersteinChannel::awgn(0.0, 0);
        let y = propagate(&ch, &x).unwrap();
        // Source power is 1 only on average; the output is rescaled to it.
        let g = x.mean_square().sqrt().recip();
        for (a, b) in y.symbols.iter().zip(&x.symbols) {
            assert!((a - b * g).abs() < 1e-12);
        }
        let mut unit = SymbolFrame::new(vec![1.0, -1.0, 1.0, -1.0]);
        unit.symbols.push(1.0);
        unit.symbols.push(-1.0);
        let y = propagate(&ch, &unit).unwrap();
        assert_eq!(y.symbols, unit.symbols);
    }

    #[test]
    fn pointwise_cubic() {
        let ch = WienerHammersteinChannel {
            poly: [1.0, 0.0, 0.1, 0.0, 0.0],
            ..WienerHammersteinChannel::awgn(0.0, 0)
        };
        assert_eq!(ch.distort(&[1.0, 1.0, 1.0]), vec![1.1, 1.1, 1.1]);
        let y = propagate(&ch, &SymbolFrame::new(vec![1.0; 8])).unwrap();
        assert!(y.symbols.iter().all(|v: &f64| (*v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn convolution_alignment() {
        let x = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(convolve_same(&x, &[1.0, 2.0, 3.0]), vec![0.0, 1.0, 2.0, 3.0, 0.0]);
        assert_eq!(convolve_same(&x, &[1.0, 0.5]), vec![0.0, 0.0, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn default_channel_snr_and_normalization() {
        let x = frame(100_000, 2);
        let sigma = sigma_from_snr(25.0);
        let ch = WienerHammersteinChannel::default().with_noise(sigma, 9);
        let (y, ideal) = propagate_with_ideal(&ch, &x).unwrap();
        assert!((y.mean_square() - 1.0).abs() < 1e-3);
        let sig = ideal.mean_square();
        let noise = y
            .symbols
            .iter()
            .zip(&ideal.symbols)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / y.len() as f64;
        let snr = 10.0 * (sig / noise).log10();
        assert!((snr - 25.0).abs() < 0.2, "snr {snr}");
    }

    #[test]
    fn deterministic_per_seed() {
        let x = frame(500, 3);
        let ch = WienerHammersteinChannel::default().with_noise(0.1, 5);
        assert_eq!(propagate(&ch, &x).unwrap(), propagate(&ch, &x).unwrap());
    }

    #[test]
    fn snr_conversions() {
        assert_eq!(sigma_from_snr(f64::INFINITY), 0.0);
        assert_eq!(sigma_from_snr(0.0), 1.0);
        let snr = osnr_to_snr(33.8, 92.0).unwrap();
        assert!((snr - (33.8 - 10.0 * (92.0f64 / 12.5).log10())).abs() < 1e-12);
        assert!((snr - 25.13).abs() < 0.01);
        assert!(osnr_to_snr(30.0, 0.0).is_err());
    }

    #[test]
    fn validation() {
        let mut ch = WienerHammersteinChannel::<f64>::default();
        ch.poly[0] = 0.0;
        assert!(ch.validate().is_err());
        let ch = WienerHammersteinChannel::<f64> {
            pre_fir: vec![],
            ..Default::default()
        };
        assert!(ch.validate().is_err());
        assert!(propagate(&WienerHammersteinChannel::<f64>::default(), &SymbolFrame::new(vec![])).is_err());
    }
}
