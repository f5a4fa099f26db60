//! Sweeps: per point, generate or load frames, train every equalizer on the
//! first frame and evaluate the achievable rate on held-out frames.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::complexity::ComplexityReport;
use crate::analysis::extract::extract_kernels;
use crate::analysis::rate::{achievable_rate, RateReport};
use crate::channel::capture::load_capture;
use crate::channel::{propagate, sigma_from_snr};
use crate::demapper::LlrBlock;
use crate::error::{Error, Result};
use crate::harness::config::{Axis, EqualizerSpec, ExperimentConfig};
use crate::harness::equalizer::{train_equalizer, NamedTrace, TrainedEqualizer, TrainingData};
use crate::modem::{build_gray_pam, map_bits, random_bits_for_lane, BitFrame, GrayPamMap, Lane, SymbolFrame};

/// One exported kernel coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    /// Output bit for kernels extracted from a network; `None` for a VNLE.
    pub bit: Option<usize>,
    pub order: usize,
    pub offsets: Vec<i32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizerResult {
    pub name: String,
    pub kind: String,
    pub rate: RateReport,
    pub complexity: ComplexityReport,
    /// Rate minus the first LE's rate at the same point.
    pub gain: Option<f64>,
    pub traces: Vec<NamedTrace>,
    pub kernels: Vec<KernelRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: f64,
    pub snr_db: f64,
    pub equalizers: Vec<EqualizerResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub bits_per_symbol: usize,
    pub frame_len: usize,
    /// Symbols used for training at every point (the first frame's split).
    pub training_symbols: usize,
    /// Evaluated symbols per point (second halves of the held-out frames).
    pub evaluation_symbols: usize,
    pub points: Vec<PointResult>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ a) ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Received symbols with the transmitted symbols and bits.
#[derive(Debug, Clone)]
pub struct Frame {
    pub y: SymbolFrame<f64>,
    pub x: SymbolFrame<f64>,
    pub bits: BitFrame,
}

/// Frame 0 trains; frames 1..=eval_frames evaluate.
fn synthetic_frames(cfg: &ExperimentConfig, map: &GrayPamMap<f64>, point: usize, snr_db: f64) -> Result<Vec<Frame>> {
    let ch = cfg.channel.build()?;
    let sigma = sigma_from_snr(snr_db);
    (0..=cfg.eval_frames)
        .map(|f| {
            // Bits repeat across points so curves differ only by noise.
            let bits = random_bits_for_lane(cfg.frame_len, cfg.bits_per_symbol, derive_seed(cfg.seed, 1, f as u64), Lane::XI)?;
            let x = map_bits(map, &bits)?;
            let noisy = ch.clone().with_noise(sigma, derive_seed(cfg.seed, 2 + point as u64, f as u64));
            let y = propagate(&noisy, &x)?;
            Ok(Frame { y, x, bits })
        })
        .collect()
}

fn capture_frames(cfg: &ExperimentConfig, map: &GrayPamMap<f64>, point: usize) -> Result<Vec<Frame>> {
    let spec = &cfg.captures[point];
    let cap = load_capture(&spec.path)?;
    let lane = cap
        .lane(spec.lane)
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no lane {:?}", spec.path, spec.lane)))?;
    if lane.bits.bits_per_symbol() != cfg.bits_per_symbol {
        return Err(Error::InvalidArgument(format!(
            "{} carries {} bits per symbol, config expects {}",
            spec.path,
            lane.bits.bits_per_symbol(),
            cfg.bits_per_symbol
        )));
    }
    let y_all = lane.symbols(Some(&spec.path));
    let n = cfg.frame_len;
    let frames = (lane.y.len() / n).min(cfg.eval_frames + 1);
    if frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} symbols, fewer than two frames of {n}",
            spec.path,
            lane.y.len()
        )));
    }
    (0..frames)
        .map(|f| {
            let r = f * n..(f + 1) * n;
            let bits = lane.bits.slice(r.clone());
            Ok(Frame {
                y: y_all.slice(r),
                x: map_bits(map, &bits)?,
                bits,
            })
        })
        .collect()
}

/// Frames of sweep point `idx`: synthetic, or cut from the point's capture.
/// Frame 0 trains, the rest evaluate.
pub fn point_frames(cfg: &ExperimentConfig, idx: usize) -> Result<Vec<Frame>> {
    let points = cfg.points();
    if idx >= points.len() {
        return Err(Error::InvalidArgument(format!(
            "sweep point {idx} out of range ({} points)",
            points.len()
        )));
    }
    let map = build_gray_pam::<f64>(cfg.bits_per_symbol)?;
    if cfg.captures.is_empty() {
        synthetic_frames(cfg, &map, idx, cfg.snr_db(points[idx])?)
    } else {
        capture_frames(cfg, &map, idx)
    }
}

/// Rate over the second halves of the evaluation frames.
pub fn evaluate(eq: &TrainedEqualizer, frames: &[Frame]) -> Result<RateReport> {
    let blocks = frames
        .iter()
        .map(|f| {
            let all = eq.llrs(&f.y);
            let (n, m) = (all.len(), all.bits_per_symbol());
            let h = n / 2;
            LlrBlock::new(all.llrs()[h * m..].to_vec(), m)?.with_bits(f.bits.slice(h..n))
        })
        .collect::<Result<Vec<_>>>()?;
    achievable_rate(&LlrBlock::concat(&blocks)?)
}

fn kernel_rows(eq: &TrainedEqualizer) -> Vec<KernelRow> {
    match eq {
        TrainedEqualizer::Vnle { model, .. } => model
            .indices()
            .into_iter()
            .zip(model.kernels())
            .filter(|(k, _)| k.order == 1 || k.order == 3)
            .map(|(k, &v)| KernelRow {
                bit: None,
                order: k.order,
                offsets: k.offsets,
                value: v,
            })
            .collect(),
        TrainedEqualizer::Sdnne { model } => {
            if !model.design().activation().is_smooth() {
                return Vec::new();
            }
            let half = model.design().memory() as i32;
            match extract_kernels(model, None, 3) {
                Ok(ks) => ks
                    .into_iter()
                    .flat_map(|k| {
                        let bit = k.bit;
                        let first = k.h1.into_iter().enumerate().map(move |(i, v)| KernelRow {
                            bit: Some(bit),
                            order: 1,
                            offsets: vec![i as i32 - half],
                            value: v,
                        });
                        let third = k.h3.unwrap_or_default().into_iter().map(move |(t, v)| KernelRow {
                            bit: Some(bit),
                            order: 3,
                            offsets: t,
                            value: v,
                        });
                        first.chain(third)
                    })
                    .collect(),
                Err(e) => {
                    warn!("kernel extraction failed: {e}");
                    Vec::new()
                }
            }
        }
    }
}

fn run_point(cfg: &ExperimentConfig, idx: usize) -> Result<(f64, Vec<EqualizerResult>)> {
    let point = cfg.points()[idx];
    let snr_db = cfg.snr_db(point)?;
    let map = build_gray_pam::<f64>(cfg.bits_per_symbol)?;
    let frames = point_frames(cfg, idx)?;
    let (train_frame, eval_frames) = frames.split_first().expect("at least two frames");
    let data = TrainingData {
        y: &train_frame.y,
        x: &train_frame.x,
        bits: &train_frame.bits,
        map: &map,
    };
    let mut results: Vec<EqualizerResult> = Vec::new();
    for spec in &cfg.equalizers {
        let outcome = train_equalizer(spec, &data, &cfg.training, cfg.split)?;
        let rate = evaluate(&outcome.equalizer, eval_frames)?;
        info!("point {point}: {} rate {:.4} (s = {:.3})", spec.name(), rate.rate, rate.minimizing_s);
        results.push(EqualizerResult {
            name: spec.name(),
            kind: spec.kind().into(),
            rate,
            complexity: outcome.equalizer.complexity(),
            gain: None,
            traces: outcome.traces,
            kernels: if cfg.export_kernels {
                kernel_rows(&outcome.equalizer)
            } else {
                Vec::new()
            },
        });
    }
    let baseline = cfg
        .equalizers
        .iter()
        .position(|e| matches!(e, EqualizerSpec::Le { .. }))
        .map(|i| results[i].rate.rate);
    if let Some(b) = baseline {
        for r in &mut results {
            r.gain = Some(r.rate.rate - b);
        }
    }
    Ok((snr_db, results))
}

/// Runs every sweep point (in parallel across points). A failing point is
/// recorded with its error and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let points = cfg.points();
    let results: Vec<PointResult> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            info!("sweep point {} of {}: {}", i + 1, points.len(), points[i]);
            match run_point(cfg, i) {
                Ok((snr_db, equalizers)) => PointResult {
                    point: points[i],
                    snr_db,
                    equalizers,
                    error: None,
                },
                Err(e) => {
                    warn!("sweep point {} failed: {e}", points[i]);
                    PointResult {
                        point: points[i],
                        snr_db: cfg.snr_db(points[i]).unwrap_or(f64::NAN),
                        equalizers: Vec::new(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let n = cfg.frame_len;
    Ok(SweepResult {
        axis: cfg.axis(),
        bits_per_symbol: cfg.bits_per_symbol,
        frame_len: n,
        training_symbols: ((n as f64) * cfg.split).round() as usize,
        evaluation_symbols: cfg.eval_frames * (n - n / 2),
        points: results,
    })
}
