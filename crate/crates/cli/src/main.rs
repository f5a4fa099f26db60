//! `nleq` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use nleq::analysis::complexity::{mlp_design_complexity, vnle_design_complexity, ComplexityReport};
use nleq::channel::capture::{load_capture, save_capture, CaptureFile, CaptureLane};
use nleq::channel::{propagate, sigma_from_snr, WienerHammersteinChannel};
use nleq::harness::{
    emit_reports, evaluate, point_frames, run_sweep, train_equalizer, EqualizerSpec, ExperimentConfig,
    TrainedEqualizer, TrainingData,
};
use nleq::modem::random_bits_for_lane;
use nleq::sdnne::{prune_gradual, MlpTarget, PruneSchedule};
use nleq::demapper::DemapperMode;
use nleq::volterra::{mse, predict, prune_l1};
use nleq::{
    achievable_rate, build_gray_pam, extract_kernels, map_bits, Activation, AdamConfig, Error, Lane, MlaDemapper,
    MlpDesign, Result, VolterraDesign,
};

#[derive(Parser)]
#[command(name = "nleq", version, about = "Volterra and neural-network equalizers for PAM links")]
struct Cli {
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory (meaning depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweep points (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pass random PAM symbols through the channel and write a capture.
    Simulate(SimulateArgs),
    /// Fit one configured equalizer on a sweep point's training frame.
    Train(TrainArgs),
    /// Achievable rate of a saved equalizer on a capture lane.
    Evaluate(EvaluateArgs),
    /// Volterra kernels of a saved network around an expansion point.
    ExpandKernels(ExpandArgs),
    /// Multiplier count of a design.
    Complexity(ComplexityArgs),
    /// L1 pruning of a saved VNLE or gradual pruning of a saved network.
    Prune(PruneArgs),
    /// Run a sweep and write the reports.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Take channel, bits per symbol and frame length from this config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    snr: f64,
    /// Symbols per lane (default: frame length times 7).
    #[arg(long)]
    symbols: Option<usize>,
}

#[derive(Args)]
struct PointArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Equalizer name or zero-based index (default: the first).
    #[arg(long)]
    equalizer: Option<String>,
    /// Zero-based sweep point index.
    #[arg(long, default_value_t = 0)]
    point: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    point: PointArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Saved equalizer (JSON from `train` or `prune`).
    model: PathBuf,
    capture: PathBuf,
    #[arg(long, value_parser = parse_lane, default_value = "xi")]
    lane: Lane,
}

#[derive(Args)]
struct ExpandArgs {
    model: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Comma-separated expansion point (default: zeros).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    at: Option<Vec<f64>>,
}

#[derive(Args)]
struct ComplexityArgs {
    /// Network design such as 17|16|10|3.
    #[arg(long, conflicts_with = "vnle", required_unless_present = "vnle")]
    sdnne: Option<String>,
    /// Hidden activation of the network.
    #[arg(long, default_value = "tanh")]
    activation: String,
    /// Volterra design such as 17:17:11.
    #[arg(long)]
    vnle: Option<String>,
    /// Add the max-log demapper's multipliers.
    #[arg(long)]
    with_mla: bool,
    /// Bits per symbol for the demapper.
    #[arg(long, default_value_t = 3)]
    bits: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PruneArgs {
    /// Saved equalizer to prune.
    model: PathBuf,
    #[command(flatten)]
    point: PointArgs,
    /// VNLE: L1 weight.
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    /// VNLE: kernels below this magnitude are removed.
    #[arg(long, default_value_t = 1e-2)]
    threshold: f64,
    /// Network: final weight sparsity.
    #[arg(long, default_value_t = 0.2)]
    sparsity: f64,
    /// Network: number of pruning steps.
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Network: optimizer steps between pruning steps.
    #[arg(long, default_value_t = 100)]
    interval: usize,
}

#[derive(Args)]
struct SweepArgs {
    config: PathBuf,
}

fn parse_lane(s: &str) -> std::result::Result<Lane, String> {
    match s.to_ascii_lowercase().as_str() {
        "xi" => Ok(Lane::XI),
        "xq" => Ok(Lane::XQ),
        "yi" => Ok(Lane::YI),
        "yq" => Ok(Lane::YQ),
        _ => Err(format!("unknown lane {s:?}; expected xi, xq, yi or yq")),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_model(path: &Path) -> Result<TrainedEqualizer> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn pick_equalizer<'a>(cfg: &'a ExperimentConfig, key: Option<&str>) -> Result<&'a EqualizerSpec> {
    let Some(key) = key else {
        return Ok(&cfg.equalizers[0]);
    };
    if let Ok(i) = key.parse::<usize>() {
        return cfg
            .equalizers
            .get(i)
            .ok_or_else(|| Error::Config(format!("no equalizer with index {i}")));
    }
    cfg.equalizers
        .iter()
        .find(|e| e.name() == key)
        .ok_or_else(|| Error::Config(format!("no equalizer named {key:?}")))
}

fn simulate(a: &SimulateArgs, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let (ch, m, n, base) = match &a.config {
        Some(p) => {
            let cfg = load_config(p, seed)?;
            (cfg.channel.build()?, cfg.bits_per_symbol, cfg.frame_len, cfg.seed)
        }
        None => (WienerHammersteinChannel::default(), 3, nleq::modem::DEFAULT_FRAME_LEN, seed.unwrap_or(0)),
    };
    let n = a.symbols.unwrap_or(7 * n);
    let map = build_gray_pam::<f64>(m)?;
    let sigma = sigma_from_snr(a.snr);
    let lanes = Lane::ALL
        .iter()
        .map(|&lane| {
            let i = lane.index() as u64;
            let bits = random_bits_for_lane(n, m, base.wrapping_mul(8).wrapping_add(2 * i), lane)?;
            let x = map_bits(&map, &bits)?;
            let y = propagate(&ch.clone().with_noise(sigma, base.wrapping_mul(8).wrapping_add(2 * i + 1)), &x)?;
            CaptureLane::new(lane, y.symbols, bits)
        })
        .collect::<Result<Vec<_>>>()?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("capture.bin"));
    save_capture(&CaptureFile { path: None, lanes }, &path)?;
    println!("wrote {n} symbols x 4 lanes at {} dB SNR to {}", a.snr, path.display());
    Ok(())
}

fn train(a: &TrainArgs, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(&a.point.config, seed)?;
    let spec = pick_equalizer(&cfg, a.point.equalizer.as_deref())?;
    let frames = point_frames(&cfg, a.point.point)?;
    let map = build_gray_pam::<f64>(cfg.bits_per_symbol)?;
    let f = &frames[0];
    let data = TrainingData {
        y: &f.y,
        x: &f.x,
        bits: &f.bits,
        map: &map,
    };
    let outcome = train_equalizer(spec, &data, &cfg.training, cfg.split)?;
    let rate = evaluate(&outcome.equalizer, &frames[1..])?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("model.json"));
    write_text(&path, &serde_json::to_string_pretty(&outcome.equalizer)?)?;
    println!(
        "{}: rate {:.6} (s = {:.4}), {} multipliers; saved to {}",
        spec.name(),
        rate.rate,
        rate.minimizing_s,
        outcome.equalizer.complexity().multipliers,
        path.display()
    );
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs, out: Option<&Path>) -> Result<()> {
    let eq = read_model(&a.model)?;
    let cap = load_capture(&a.capture)?;
    let lane = cap
        .lane(a.lane)
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no lane {:?}", a.capture.display(), a.lane)))?;
    if lane.bits.bits_per_symbol() != eq.bits_per_symbol() {
        return Err(Error::InvalidArgument(format!(
            "capture carries {} bits per symbol, the equalizer {}",
            lane.bits.bits_per_symbol(),
            eq.bits_per_symbol()
        )));
    }
    let y = lane.symbols(a.capture.to_str());
    let report = achievable_rate(&eq.llrs(&y).with_bits(lane.bits.clone())?)?;
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(p) => write_text(p, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn expand(a: &ExpandArgs, out: Option<&Path>) -> Result<()> {
    let eq = read_model(&a.model)?;
    let TrainedEqualizer::Sdnne { model } = eq else {
        return Err(Error::InvalidArgument(
            "kernel expansion needs a network; a VNLE already is a Volterra series".into(),
        ));
    };
    let ks = extract_kernels(&model, a.at.as_deref(), a.order)?;
    let json = serde_json::to_string_pretty(&ks)?;
    match out {
        Some(p) => write_text(p, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn complexity(a: &ComplexityArgs) -> Result<()> {
    let report: ComplexityReport = match (&a.sdnne, &a.vnle) {
        (Some(d), _) => {
            let act: Activation = a.activation.parse()?;
            let sizes = d.parse::<MlpDesign>()?.sizes().to_vec();
            mlp_design_complexity(&MlpDesign::new(sizes, act)?)
        }
        (None, Some(d)) => {
            let design: VolterraDesign = d.parse()?;
            vnle_design_complexity(&design, a.with_mla.then_some(a.bits))
        }
        (None, None) => return Err(Error::InvalidArgument("give --sdnne or --vnle".into())),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let b = report.breakdown;
    println!("{}", report.multipliers);
    println!("  formula         {}", report.formula);
    println!("  coefficients    {}", b.coefficients);
    println!("  feature matrix  {}", b.feature_matrix);
    println!("  activations     {}", b.activations);
    Ok(())
}

fn prune(a: &PruneArgs, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(&a.point.config, seed)?;
    let eq = read_model(&a.model)?;
    let frames = point_frames(&cfg, a.point.point)?;
    let f = &frames[0];
    let opt: AdamConfig = match a.point.equalizer.as_deref() {
        Some(k) => pick_equalizer(&cfg, Some(k))?.training(&cfg.training).clone(),
        None => cfg.training.clone(),
    };
    let before = eq.complexity().multipliers;
    let pruned = match eq {
        TrainedEqualizer::Vnle { model, demapper } => {
            let design = model.design().clone();
            let fit = prune_l1(&design, &f.y, &f.x, a.lambda, a.threshold, &opt, cfg.split, Some(&model))?;
            info!("kept {} of {} kernels", fit.active_kernels, design.total_kernels());
            // A fixed demapper follows the new residual; a trained one is kept.
            let demapper = match demapper.mode() {
                DemapperMode::Fixed { .. } => {
                    let var = mse(&design, &predict(&fit.model, &f.y), &f.x).max(1e-12);
                    MlaDemapper::fixed(demapper.map().clone(), var)?
                }
                DemapperMode::Trained { .. } => demapper,
            };
            TrainedEqualizer::Vnle {
                model: fit.model,
                demapper,
            }
        }
        TrainedEqualizer::Sdnne { model } => {
            let schedule = PruneSchedule {
                initial_sparsity: 0.0,
                final_sparsity: a.sparsity,
                start_step: 0,
                steps: a.steps,
                interval: a.interval,
            };
            let act = model.design().activation();
            let smooth = model.with_activation(if act.is_smooth() { act } else { Activation::Tanh })?;
            let res = prune_gradual(&smooth, &f.y, MlpTarget::Bits(&f.bits), &schedule, &opt, cfg.split)?;
            TrainedEqualizer::Sdnne {
                model: res.model.with_activation(act)?,
            }
        }
    };
    let rate = evaluate(&pruned, &frames[1..])?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("pruned.json"));
    write_text(&path, &serde_json::to_string_pretty(&pruned)?)?;
    println!(
        "pruned: rate {:.6}, multipliers {before} -> {}; saved to {}",
        rate.rate,
        pruned.complexity().multipliers,
        path.display()
    );
    Ok(())
}

fn sweep(a: &SweepArgs, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(&a.config, seed)?;
    let res = run_sweep(&cfg)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("results"));
    emit_reports(&res, &dir)?;
    for p in &res.points {
        match &p.error {
            Some(e) => println!("point {}: failed: {e}", p.point),
            None => {
                for e in &p.equalizers {
                    println!(
                        "point {} ({:.2} dB SNR): {:<32} rate {:.5}  multipliers {}",
                        p.point, p.snr_db, e.name, e.rate.rate, e.complexity.multipliers
                    );
                }
            }
        }
    }
    println!("reports written to {}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("cannot set up {n} threads: {e}")))?;
    }
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed, out),
        Command::Train(a) => train(a, cli.seed, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::ExpandKernels(a) => expand(a, out),
        Command::Complexity(a) => complexity(a),
        Command::Prune(a) => prune(a, cli.seed, out),
        Command::Sweep(a) => sweep(a, cli.seed, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
