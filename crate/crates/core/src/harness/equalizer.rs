//! Training one configured equalizer and applying the result.

use log::info;
use serde::{Deserialize, Serialize};

use crate::analysis::complexity::{multiplier_count_mlp, multiplier_count_vnle, ComplexityReport};
use crate::demapper::{demap_max_log, LlrBlock, MlaDemapper};
use crate::error::{invalid, Result};
use crate::harness::config::{EqualizerSpec, Solver, VnleLoss};
use crate::modem::{BitFrame, GrayPamMap, SymbolFrame};
use crate::optim::{AdamConfig, TrainTrace};
use crate::sdnne::{prune_gradual, train, Activation, MlpModel, MlpTarget};
use crate::volterra::{fit_gd, fit_ls_range, predict, prune_l1, VnleObjective, VolterraModel};

/// A fitted equalizer together with its soft demapping stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedEqualizer {
    Vnle {
        model: VolterraModel<f64>,
        demapper: MlaDemapper<f64>,
    },
    Sdnne {
        model: MlpModel<f64>,
    },
}

impl TrainedEqualizer {
    /// LLRs of every received symbol.
    pub fn llrs(&self, y: &SymbolFrame<f64>) -> LlrBlock<f64> {
        match self {
            TrainedEqualizer::Vnle { model, demapper } => demap_max_log(demapper, &predict(model, y)),
            TrainedEqualizer::Sdnne { model } => model.equalize(y),
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        match self {
            TrainedEqualizer::Vnle { demapper, .. } => demapper.map().bits_per_symbol(),
            TrainedEqualizer::Sdnne { model } => model.design().outputs(),
        }
    }

    pub fn complexity(&self) -> ComplexityReport {
        match self {
            TrainedEqualizer::Vnle { model, demapper } => {
                multiplier_count_vnle(model, Some(demapper.map().bits_per_symbol()))
            }
            TrainedEqualizer::Sdnne { model } => multiplier_count_mlp(model),
        }
    }
}

/// One training frame: received symbols, transmitted symbols and bits.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub y: &'a SymbolFrame<f64>,
    pub x: &'a SymbolFrame<f64>,
    pub bits: &'a BitFrame,
    pub map: &'a GrayPamMap<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTrace {
    pub stage: String,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub equalizer: TrainedEqualizer,
    pub traces: Vec<NamedTrace>,
}

fn named(stage: &str, trace: TrainTrace) -> NamedTrace {
    NamedTrace {
        stage: stage.into(),
        trace,
    }
}

/// Mean squared error of `model` on samples `range`, floored so that a
/// noiseless fit still yields a usable demapper.
fn residual_var(model: &VolterraModel<f64>, d: &TrainingData<'_>, range: std::ops::Range<usize>) -> f64 {
    let eq = predict(model, d.y);
    let n = range.len().max(1) as f64;
    let mse = range.map(|k| (eq.symbols[k] - d.x.symbols[k]).powi(2)).sum::<f64>() / n;
    mse.max(1e-12)
}

/// Fits `spec` on the first `split` fraction of the frame; the remainder
/// validates the gradient-based stages.
pub fn train_equalizer(spec: &EqualizerSpec, d: &TrainingData<'_>, opt: &AdamConfig, split: f64) -> Result<TrainOutcome> {
    let n = d.y.len();
    if d.x.len() != n || d.bits.len() != n {
        return invalid("training frame components have different lengths");
    }
    let cut = ((n as f64) * split).round() as usize;
    let opt = spec.training(opt);
    let mut traces = Vec::new();
    let equalizer = match spec {
        EqualizerSpec::Le { .. } | EqualizerSpec::Vnle { .. } => {
            let design = spec.vnle_design()?.expect("volterra spec");
            let h = design.memory(1);
            if cut <= 2 * h + design.total_kernels() {
                return invalid(format!(
                    "{} training samples are too few for {} kernels",
                    cut,
                    design.total_kernels()
                ));
            }
            let range = h..cut;
            let (objective, solver, l1) = match spec {
                EqualizerSpec::Vnle {
                    objective, solver, l1, ..
                } => (*objective, *solver, l1.clone()),
                _ => (VnleLoss::Mse, Solver::Ls, None),
            };
            let ls = || fit_ls_range(&design, d.y, d.x, range.clone()).map(|f| f.model);
            let mut model = match (objective, solver) {
                (VnleLoss::Mse, Solver::Gd) => {
                    let fit = fit_gd(&design, d.y, d.x, VnleObjective::Mse, opt, split, None)?;
                    traces.push(named("mse", fit.trace));
                    fit.model
                }
                _ => ls()?,
            };
            if let Some(l1) = l1 {
                let fit = prune_l1(&design, d.y, d.x, l1.lambda, l1.threshold, opt, split, Some(&model))?;
                traces.push(named("l1", fit.trace));
                if let Some(ft) = fit.fine_tune {
                    traces.push(named("l1-fine-tune", ft));
                }
                info!("L1 pruning kept {} of {} kernels", fit.active_kernels, design.total_kernels());
                model = fit.model;
            }
            let fixed = MlaDemapper::fixed(d.map.clone(), residual_var(&model, d, range))?;
            match objective {
                VnleLoss::Mse => TrainedEqualizer::Vnle { model, demapper: fixed },
                VnleLoss::Bitwise => {
                    let obj = VnleObjective::Bitwise {
                        demapper: fixed,
                        bits: d.bits,
                    };
                    let fit = fit_gd(&design, d.y, d.x, obj, opt, split, Some(&model))?;
                    traces.push(named("bitwise", fit.trace));
                    TrainedEqualizer::Vnle {
                        model: fit.model,
                        demapper: fit.demapper.expect("bitwise fit returns its demapper"),
                    }
                }
            }
        }
        EqualizerSpec::Sdnne { prune, .. } => {
            let design = spec.mlp_design()?.expect("sdnne spec");
            // The interpolated tanh is evaluated with tanh-trained weights.
            let train_design = match design.activation() {
                Activation::ITanh { .. } => design.with_activation(Activation::Tanh)?,
                _ => design.clone(),
            };
            let fit = train(&train_design, d.y, MlpTarget::Bits(d.bits), opt, split, None)?;
            traces.push(named("train", fit.trace));
            let mut model = fit.model;
            if let Some(schedule) = prune {
                let pr = prune_gradual(&model, d.y, MlpTarget::Bits(d.bits), schedule, opt, split)?;
                traces.push(named("prune", pr.prune_trace));
                traces.push(named("prune-fine-tune", pr.fine_tune));
                info!("pruned {} to sparsity {:.3}", design, pr.model.sparsity());
                model = pr.model;
            }
            TrainedEqualizer::Sdnne {
                model: model.with_activation(design.activation())?,
            }
        }
    };
    Ok(TrainOutcome { equalizer, traces })
}
