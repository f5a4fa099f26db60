//! Experiment orchestration: TOML configs, sweeps over SNR or OSNR, and the
//! CSV/JSON report files.

pub mod config;
pub mod equalizer;
pub mod report;
pub mod sweep;

pub use config::{Axis, CaptureSpec, ChannelSpec, EqualizerSpec, ExperimentConfig, SweepSpec};
pub use equalizer::{train_equalizer, NamedTrace, TrainedEqualizer, TrainingData, TrainOutcome};
pub use report::emit_reports;
pub use sweep::{evaluate, point_frames, run_sweep, EqualizerResult, Frame, KernelRow, PointResult, SweepResult};
