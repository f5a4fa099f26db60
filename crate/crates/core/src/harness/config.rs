//! Experiment configuration.
//!
//! ```toml
//! seed = 7
//! bits_per_symbol = 3
//! frame_len = 66444
//! split = 0.5
//! eval_frames = 6
//!
//! [sweep]
//! axis = "snr"            # or "osnr"
//! points = [20.0, 25.0]
//! symbol_rate_gbd = 92.0  # used by the OSNR axis
//!
//! [channel]               # omitted fields take the default channel
//! preset = "default"      # or "awgn"
//!
//! [training]              # ADAM settings
//! max_epochs = 200
//!
//! [[equalizer]]
//! kind = "le"
//! taps = 17
//!
//! [[equalizer]]
//! kind = "vnle"
//! design = "17:17:11"
//! objective = "bitwise"   # or "mse"
//!
//! [[equalizer]]
//! kind = "sdnne"
//! design = "17|16|10|3"
//! activation = "tanh"
//! prune = { initial_sparsity = 0.0, final_sparsity = 0.2, start_step = 0, steps = 10, interval = 50 }
//! ```
//!
//! Measured data replaces the synthetic channel with one `[[capture]]`
//! table per sweep point (`point`, `path`, `lane`); the file is cut into
//! frames of `frame_len` symbols.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::WienerHammersteinChannel;
use crate::error::{Error, Result};
use crate::modem::{Lane, DEFAULT_FRAME_LEN, MAX_BITS_PER_SYMBOL};
use crate::optim::AdamConfig;
use crate::sdnne::{Activation, MlpDesign, PruneSchedule};
use crate::volterra::VolterraDesign;

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    Snr,
    Osnr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub axis: Axis,
    pub points: Vec<f64>,
    #[serde(default = "default_rate")]
    pub symbol_rate_gbd: f64,
}

fn default_rate() -> f64 {
    92.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Default,
    Awgn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub preset: Preset,
    pub pre_fir: Option<Vec<f64>>,
    pub poly: Option<[f64; 5]>,
    pub post_fir: Option<Vec<f64>>,
}

impl ChannelSpec {
    /// Noiseless channel; the sweep attaches the noise.
    pub fn build(&self) -> Result<WienerHammersteinChannel<f64>> {
        let mut ch = match self.preset {
            Preset::Default => WienerHammersteinChannel::default(),
            Preset::Awgn => WienerHammersteinChannel::awgn(0.0, 0),
        };
        if let Some(v) = &self.pre_fir {
            ch.pre_fir = v.clone();
        }
        if let Some(p) = self.poly {
            ch.poly = p;
        }
        if let Some(v) = &self.post_fir {
            ch.post_fir = v.clone();
        }
        ch.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(ch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureSpec {
    pub point: f64,
    pub path: String,
    #[serde(default)]
    pub lane: Lane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VnleLoss {
    #[default]
    Mse,
    Bitwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Ls,
    Gd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L1Spec {
    pub lambda: f64,
    pub threshold: f64,
}

/// One equalizer to train at every sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EqualizerSpec {
    /// Linear FIR equalizer fitted by least squares.
    Le {
        name: Option<String>,
        taps: usize,
    },
    Vnle {
        name: Option<String>,
        design: String,
        #[serde(default)]
        objective: VnleLoss,
        /// Solver of the MSE fit (the bitwise objective always uses ADAM,
        /// warm-started from least squares).
        #[serde(default)]
        solver: Solver,
        l1: Option<L1Spec>,
        /// Replaces the experiment's `[training]` table for this equalizer.
        training: Option<AdamConfig>,
    },
    Sdnne {
        name: Option<String>,
        design: String,
        #[serde(default = "default_activation")]
        activation: String,
        prune: Option<PruneSchedule>,
        training: Option<AdamConfig>,
    },
}

fn default_activation() -> String {
    "tanh".into()
}

impl EqualizerSpec {
    pub fn name(&self) -> String {
        match self {
            EqualizerSpec::Le { name, taps } => name.clone().unwrap_or_else(|| format!("LE {taps}")),
            EqualizerSpec::Vnle {
                name, design, objective, ..
            } => name.clone().unwrap_or_else(|| {
                let tag = match objective {
                    VnleLoss::Mse => "MSE",
                    VnleLoss::Bitwise => "bitwise",
                };
                format!("VNLE {design} {tag}")
            }),
            EqualizerSpec::Sdnne {
                name,
                design,
                activation,
                prune,
                ..
            } => name.clone().unwrap_or_else(|| {
                let p = prune
                    .as_ref()
                    .map(|s| format!(" pruned {:.0}%", 100.0 * s.final_sparsity))
                    .unwrap_or_default();
                format!("SDNNE {design} {activation}{p}")
            }),
        }
    }

    /// Training settings of this equalizer given the experiment default.
    pub fn training<'a>(&'a self, default: &'a AdamConfig) -> &'a AdamConfig {
        match self {
            EqualizerSpec::Vnle { training: Some(t), .. } | EqualizerSpec::Sdnne { training: Some(t), .. } => t,
            _ => default,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EqualizerSpec::Le { .. } => "le",
            EqualizerSpec::Vnle { .. } => "vnle",
            EqualizerSpec::Sdnne { .. } => "sdnne",
        }
    }

    pub fn vnle_design(&self) -> Result<Option<VolterraDesign>> {
        match self {
            EqualizerSpec::Le { taps, .. } => VolterraDesign::linear(*taps).map(Some),
            EqualizerSpec::Vnle { design, .. } => design.parse().map(Some),
            EqualizerSpec::Sdnne { .. } => Ok(None),
        }
    }

    pub fn mlp_design(&self) -> Result<Option<MlpDesign>> {
        match self {
            EqualizerSpec::Sdnne { design, activation, .. } => {
                let act: Activation = activation.parse()?;
                design.parse::<MlpDesign>()?.with_activation(act).map(Some)
            }
            _ => Ok(None),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        self.vnle_design()?;
        if let Some(d) = self.mlp_design()? {
            if d.outputs() != m {
                return config_err(format!(
                    "SDNNE {} has {} outputs but bits_per_symbol is {m}",
                    d,
                    d.outputs()
                ));
            }
        }
        if let EqualizerSpec::Sdnne { prune: Some(s), .. } = self {
            s.validate()?;
        }
        self.training(&AdamConfig::default()).validate()?;
        if let EqualizerSpec::Vnle {
            l1: Some(l1),
            objective,
            ..
        } = self
        {
            if *objective == VnleLoss::Bitwise {
                return config_err("L1 pruning is defined for the MSE objective only");
            }
            if !(l1.lambda >= 0.0 && l1.threshold >= 0.0) {
                return config_err("L1 lambda and threshold must be nonnegative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_m")]
    pub bits_per_symbol: usize,
    #[serde(default = "default_frame_len")]
    pub frame_len: usize,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default = "default_eval_frames")]
    pub eval_frames: usize,
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default, rename = "capture")]
    pub captures: Vec<CaptureSpec>,
    #[serde(default)]
    pub training: AdamConfig,
    #[serde(default, rename = "equalizer")]
    pub equalizers: Vec<EqualizerSpec>,
    /// Write order-1 and order-3 kernels of VNLEs and tanh SDNNEs.
    #[serde(default = "default_true")]
    pub export_kernels: bool,
}

fn default_m() -> usize {
    3
}
fn default_frame_len() -> usize {
    DEFAULT_FRAME_LEN
}
fn default_split() -> f64 {
    0.5
}
fn default_eval_frames() -> usize {
    6
}
fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sweep coordinates in order.
    pub fn points(&self) -> Vec<f64> {
        if self.captures.is_empty() {
            self.sweep.as_ref().map(|s| s.points.clone()).unwrap_or_default()
        } else {
            self.captures.iter().map(|c| c.point).collect()
        }
    }

    pub fn axis(&self) -> Axis {
        self.sweep.as_ref().map(|s| s.axis).unwrap_or_default()
    }

    /// Electrical SNR of a sweep coordinate.
    pub fn snr_db(&self, point: f64) -> Result<f64> {
        match &self.sweep {
            Some(s) if s.axis == Axis::Osnr => crate::channel::osnr_to_snr(point, s.symbol_rate_gbd),
            _ => Ok(point),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BITS_PER_SYMBOL).contains(&self.bits_per_symbol) {
            return config_err(format!("bits_per_symbol must be 1..={MAX_BITS_PER_SYMBOL}"));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return config_err("split must be in (0, 1)");
        }
        if self.frame_len < 20 {
            return config_err("frame_len must be at least 20");
        }
        if self.eval_frames == 0 {
            return config_err("eval_frames must be positive");
        }
        if self.points().is_empty() {
            return config_err("the sweep has no points");
        }
        if self.points().iter().any(|p| !p.is_finite()) {
            return config_err("sweep points must be finite");
        }
        if let Some(s) = &self.sweep {
            if !(s.symbol_rate_gbd > 0.0) {
                return config_err("symbol_rate_gbd must be positive");
            }
        }
        if self.equalizers.is_empty() {
            return config_err("at least one [[equalizer]] is required");
        }
        self.training.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.channel.build()?;
        for e in &self.equalizers {
            e.validate(self.bits_per_symbol)
                .map_err(|err| Error::Config(format!("{}: {err}", e.name())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [sweep]
        points = [20.0]
        [[equalizer]]
        kind = "le"
        taps = 9
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.frame_len, 66444);
        assert_eq!(c.split, 0.5);
        assert_eq!(c.eval_frames, 6);
        assert_eq!(c.training, AdamConfig::default());
        assert_eq!(c.equalizers[0].name(), "LE 9");
    }

    #[test]
    fn rejects_bad_configs() {
        let no_eq = "[sweep]\npoints = [1.0]\n";
        assert!(ExperimentConfig::from_toml_str(no_eq).unwrap_err().is_config());
        let empty = "[sweep]\npoints = []\n[[equalizer]]\nkind = \"le\"\ntaps = 3\n";
        assert!(ExperimentConfig::from_toml_str(empty).is_err());
        let typo = format!("{MINIMAL}\nfram_len = 3\n");
        assert!(ExperimentConfig::from_toml_str(&typo).is_err());
        let bad = "[sweep]\npoints = [1.0]\n[[equalizer]]\nkind = \"sdnne\"\ndesign = \"17|16|2\"\n";
        assert!(ExperimentConfig::from_toml_str(bad).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn osnr_axis_converts() {
        let text = "[sweep]\naxis = \"osnr\"\npoints = [30.0]\nsymbol_rate_gbd = 12.5\n[[equalizer]]\nkind = \"le\"\ntaps = 3\n";
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.snr_db(30.0).unwrap(), 30.0);
    }
}
