//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero on any failure not listed in `KNOWN_UNATTAINABLE`.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use nleq::analysis::complexity::{mlp_design_complexity, vnle_design_complexity};
use nleq::analysis::{
    activation_patterns, activation_patterns_inclusive, count_patterns, discrete_channel_oracle, exact_llrs_awgn,
};
use nleq::channel::sigma_from_snr;
use nleq::demapper::equivocation_loss;
use nleq::harness::{run_sweep, ExperimentConfig, SweepResult};
use nleq::modem::{random_bits, SymbolFrame};
use nleq::sdnne::{backprop_gradient, loss_at, train, MlpModel, MlpTarget};
use nleq::volterra::{
    enumerate_tuples, fit_gd, fit_ls, kernel_count, kernel_indices, mse, objective_and_gradient, predict, prune_l1,
    VnleObjective, VolterraModel,
};
use nleq::{
    achievable_rate, build_gray_pam, extract_kernels, map_bits, Activation, AdamConfig, BitFrame, Lane, MlaDemapper,
    MlpDesign, VolterraDesign,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Criteria whose failure is recorded rather than fatal: the exclusive
/// pattern bound is below the region count of generic hyperplanes
/// (two lines in the plane make 4 regions, the bound for 2|2|1 is 3).
const KNOWN_UNATTAINABLE: &[usize] = &[7];

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// 1

fn loss_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let b: u8 = rng.random_range(0..2);
        let l: f64 = rng.random_range(-30.0..=30.0);
        // P(B=0) = logistic(l), P(B=1) = logistic(-l).
        let bce = -((1 - b) as f64 * logistic(l).log2() + b as f64 * logistic(-l).log2());
        worst = worst.max((equivocation_loss(b, l) - bce).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && secs < 1.0,
        format!("max |loss - BCE| = {worst:.2e} over 1e5 pairs, {secs:.3} s"),
    )
}

// ---------------------------------------------------------------------------
// 2

fn demapper_oracle() -> Outcome {
    let t = Instant::now();
    let levels = [-1.5, -0.5, 0.5, 1.5];
    let p0 = [0.9, 0.7, 0.4, 0.1];
    let joint: Vec<[f64; 2]> = p0.iter().map(|&p| [0.25 * p, 0.25 * (1.0 - p)]).collect();
    let oracle = discrete_channel_oracle(&joint).map_err(|e| e.to_string())?;
    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut y = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..4);
        y.push(levels[i]);
        bits.push(u8::from(rng.random::<f64>() >= p0[i]));
    }
    let y = SymbolFrame::new(y);
    let bits = BitFrame::new(bits, 1, Lane::XI, 2).unwrap();
    let design = MlpDesign::new(vec![1, 8, 1], Activation::Tanh).unwrap();
    let fit = train(&design, &y, MlpTarget::Bits(&bits), &AdamConfig::default(), 0.9, None)
        .map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..n).collect();
    let loss = loss_at(&fit.model, fit.model.params(), &y, MlpTarget::Bits(&bits), &all);
    let gap = loss - oracle.conditional_entropy;
    let llr_err = levels
        .iter()
        .zip(&oracle.llrs)
        .map(|(&v, &l)| (fit.model.forward(&[v])[0] - l).abs())
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    check(
        gap.abs() <= 0.01 && llr_err <= 0.05 && secs < 30.0,
        format!(
            "mean loss {loss:.5} vs H(B|Y) {:.5} (gap {gap:+.5}), max LLR error {llr_err:.4}, {secs:.1} s",
            oracle.conditional_entropy
        ),
    )
}

// ---------------------------------------------------------------------------
// 3

/// Gauss-Hermite nodes and weights for the weight `exp(-t^2)`.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let sp = std::f64::consts::PI.sqrt();
    let w = (0..n).map(|i| sp * eig.eigenvectors[(0, i)].powi(2)).collect();
    (eig.eigenvalues.iter().copied().collect(), w)
}

/// Natural-log APP LLRs of every bit, computed from scratch.
fn app_llrs(levels: &[f64], labels: &[Vec<u8>], y: f64, var: f64) -> Vec<f64> {
    let m = labels[0].len();
    (0..m)
        .map(|j| {
            let lse = |bit: u8| {
                let e: Vec<f64> = levels
                    .iter()
                    .zip(labels)
                    .filter(|(_, l)| l[j] == bit)
                    .map(|(&x, _)| -(y - x).powi(2) / (2.0 * var))
                    .collect();
                let mx = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                mx + e.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
            };
            lse(0) - lse(1)
        })
        .collect()
}

fn softplus2(x: f64) -> f64 {
    // log2(1 + e^x)
    (if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }) / std::f64::consts::LN_2
}

/// Achievable rate by quadrature, minimized over s by golden section.
fn quadrature_rate(m: usize, snr_db: f64) -> (f64, f64) {
    let map = build_gray_pam::<f64>(m).unwrap();
    let sigma = sigma_from_snr(snr_db);
    let (t, w) = gauss_hermite(64);
    let sp = std::f64::consts::PI.sqrt();
    let q = map.order();
    // (signed LLR, weight) pairs; the equivocation of a pair is
    // weight * log2(1 + exp(-s * signed)).
    let mut terms = Vec::new();
    for i in 0..q {
        let x = map.levels()[i];
        for (tk, wk) in t.iter().zip(&w) {
            let y = x + sigma * std::f64::consts::SQRT_2 * tk;
            let l = app_llrs(map.levels(), map.labels(), y, sigma * sigma);
            for (lj, &bit) in l.iter().zip(&map.labels()[i]) {
                let sign = 1.0 - 2.0 * bit as f64;
                terms.push((sign * lj, wk / sp / q as f64));
            }
        }
    }
    let f = |s: f64| terms.iter().map(|&(v, wt)| wt * softplus2(-s * v)).sum::<f64>();
    let (mut a, mut b) = (0.2, 5.0);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-9 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let s = 0.5 * (a + b);
    (m as f64 - f(s), s)
}

fn gmi_correctness() -> Outcome {
    let t = Instant::now();
    let m = 3;
    let map = build_gray_pam::<f64>(m).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let per_level = 100_000;
    let z: Vec<f64> = (0..per_level)
        .map(|k| normal.inverse_cdf((k as f64 + 0.5) / per_level as f64))
        .collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for snr in [15.0, 20.0, 25.0] {
        let sigma = sigma_from_snr(snr);
        let mut y = Vec::with_capacity(per_level * map.order());
        let mut bits = Vec::with_capacity(per_level * map.order() * m);
        for (i, &x) in map.levels().iter().enumerate() {
            for &zk in &z {
                y.push(x + sigma * zk);
                bits.extend_from_slice(&map.labels()[i]);
            }
        }
        let bits = BitFrame::new(bits, m, Lane::XI, 0).unwrap();
        let llrs = exact_llrs_awgn(&map, &SymbolFrame::new(y), sigma * sigma)
            .and_then(|b| b.with_bits(bits))
            .map_err(|e| e.to_string())?;
        let mc = achievable_rate(&llrs).map_err(|e| e.to_string())?;
        let (gh, gh_s) = quadrature_rate(m, snr);
        let d = (mc.rate - gh).abs();
        ok &= d <= 0.01 && (mc.minimizing_s - 1.0).abs() <= 0.02;
        lines.push(format!(
            "{snr} dB: MC {:.5} GH {gh:.5} (|d| {d:.1e}) s {:.4} (GH s {gh_s:.4})",
            mc.rate, mc.minimizing_s
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 10.0;
    check(ok, format!("{}; {secs:.1} s", lines.join("; ")))
}

// ---------------------------------------------------------------------------
// Synthetic-channel runs shared by criteria 4, 11 and 12.

const SDNNE_TRAINING: &str = "{ batch_size = 64, step = 3e-4, max_epochs = 400, patience = 40 }";
const BITWISE_TRAINING: &str = "{ step = 2e-5, max_epochs = 100 }";
/// Multiplier budget of the SDNNE (ITANH costing).
const BUDGET: u64 = 852;

struct Synthetic {
    rates: HashMap<String, (f64, f64, u64)>,
    grid: Vec<(String, f64, u64)>,
    secs: f64,
}

fn config(equalizers: &str) -> ExperimentConfig {
    let text = format!(
        "seed = 1\nexport_kernels = false\n[sweep]\npoints = [25.0]\n{equalizers}"
    );
    ExperimentConfig::from_toml_str(&text).expect("acceptance config parses")
}

fn vnle_grid() -> Vec<VolterraDesign> {
    let mut out = Vec::new();
    for t1 in [17, 25, 33] {
        for t2 in [0, 9, 13, 17] {
            for t3 in [0, 5, 9, 11, 13] {
                if t2 == 0 && t3 > 0 {
                    continue;
                }
                let taps: Vec<usize> = [t1, t2, t3].into_iter().filter(|&t| t > 0).collect();
                let d = VolterraDesign::new(taps).unwrap();
                if vnle_design_complexity(&d, Some(3)).multipliers <= BUDGET {
                    out.push(d);
                }
            }
        }
    }
    out
}

fn collect(res: &SweepResult, into: &mut HashMap<String, (f64, f64, u64)>) {
    let p = &res.points[0];
    if let Some(e) = &p.error {
        panic!("sweep point failed: {e}");
    }
    for e in &p.equalizers {
        into.insert(e.name.clone(), (e.rate.rate, e.rate.minimizing_s, e.complexity.multipliers));
    }
}

fn synthetic() -> &'static Synthetic {
    static RUNS: OnceLock<Synthetic> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let main = config(&format!(
            r#"
[[equalizer]]
kind = "le"
taps = 17
name = "order1"
[[equalizer]]
kind = "vnle"
design = "17:17"
name = "order2"
[[equalizer]]
kind = "vnle"
design = "17:17:11"
name = "order3"
[[equalizer]]
kind = "vnle"
design = "17:17:11"
objective = "bitwise"
name = "bitwise"
training = {BITWISE_TRAINING}
[[equalizer]]
kind = "sdnne"
design = "17|16|10|3"
name = "sdnne"
training = {SDNNE_TRAINING}
[[equalizer]]
kind = "sdnne"
design = "17|16|10|3"
name = "sdnne-pruned"
training = {SDNNE_TRAINING}
prune = {{ initial_sparsity = 0.0, final_sparsity = 0.2, start_step = 0, steps = 10, interval = 500 }}
"#
        ));
        let grid_designs = vnle_grid();
        let grid_cfg = config(
            &grid_designs
                .iter()
                .map(|d| format!("[[equalizer]]\nkind = \"vnle\"\ndesign = \"{d}\"\nname = \"{d}\"\n"))
                .collect::<String>(),
        );
        let mut rates = HashMap::new();
        collect(&run_sweep(&main).expect("sweep runs"), &mut rates);
        let mut grid_rates = HashMap::new();
        collect(&run_sweep(&grid_cfg).expect("grid sweep runs"), &mut grid_rates);
        let grid = grid_designs
            .iter()
            .map(|d| {
                let (r, _, c) = grid_rates[&d.to_string()];
                (d.to_string(), r, c)
            })
            .collect();
        Synthetic {
            rates,
            grid,
            secs: t.elapsed().as_secs_f64(),
        }
    })
}

// ---------------------------------------------------------------------------
// 4

fn s_calibration() -> Outcome {
    let (rate, s, _) = synthetic().rates["sdnne"];
    check(
        (0.9..=1.1).contains(&s),
        format!("SDNNE 17|16|10|3 at 25 dB: minimizing s = {s:.4} (rate {rate:.5})"),
    )
}

// ---------------------------------------------------------------------------
// 5

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

fn kernel_counts() -> Outcome {
    let t = Instant::now();
    let mut enumerated = HashMap::new();
    for p in 1..=5usize {
        for taps in (1..=21usize).step_by(2) {
            let n = enumerate_tuples(p, (taps - 1) / 2).len() as u128;
            let closed = binomial(taps as u128 + p as u128 - 1, p as u128);
            if n != closed {
                return Err(format!("order {p}, {taps} taps: enumerated {n}, closed form {closed}"));
            }
            enumerated.insert((p, taps), n as u64);
        }
    }
    let odd: Vec<usize> = (1..=21).step_by(2).collect();
    let mut designs = 0usize;
    let mut stack: Vec<Vec<usize>> = odd.iter().map(|&t| vec![t]).collect();
    while let Some(taps) = stack.pop() {
        let d = VolterraDesign::new(taps.clone()).unwrap();
        let counts = kernel_count(&d);
        for (i, (&c, &tp)) in counts.iter().zip(&taps).enumerate() {
            if c != enumerated[&(i + 1, tp)] {
                return Err(format!("design {d}: order {} count {c}", i + 1));
            }
        }
        designs += 1;
        if taps.len() < 5 {
            for &t in odd.iter().filter(|&&t| t <= taps[0]) {
                let mut next = taps.clone();
                next.push(t);
                stack.push(next);
            }
        }
    }
    let d: VolterraDesign = "17:17:11".parse().unwrap();
    let golden = kernel_count(&d);
    let secs = t.elapsed().as_secs_f64();
    check(
        golden == vec![17, 153, 286] && kernel_indices(&d).len() == 456 && secs < 1.0,
        format!("{designs} designs agree with enumeration; 17:17:11 -> {golden:?}; {secs:.3} s"),
    )
}

// ---------------------------------------------------------------------------
// 6

fn complexity_golden() -> Outcome {
    let htanh = mlp_design_complexity(&MlpDesign::new(vec![17, 16, 10, 3], Activation::HTanh).unwrap()).multipliers;
    let itanh =
        mlp_design_complexity(&MlpDesign::new(vec![17, 16, 10, 3], Activation::ITanh { points: 16 }).unwrap())
            .multipliers;
    let vnle = vnle_design_complexity(&"17:17:11".parse().unwrap(), Some(3));
    let b = vnle.breakdown;
    check(
        htanh == 488 && itanh == 852 && vnle.multipliers == 476,
        format!(
            "H-tanh {htanh}, ITANH K=16 {itanh}, VNLE 17:17:11 + MLA {} ({} kernels + {} feature + {} MLA)",
            vnle.multipliers, b.coefficients, b.feature_matrix, b.activations
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

fn random_model(design: &MlpDesign, rng: &mut ChaCha8Rng) -> MlpModel<f64> {
    let s = design.sizes();
    let mut w = Vec::new();
    let mut b = Vec::new();
    for l in 0..s.len() - 1 {
        w.push((0..s[l] * s[l + 1]).map(|_| rng.sample(StandardNormal)).collect());
        b.push((0..s[l + 1]).map(|_| rng.sample(StandardNormal)).collect());
    }
    MlpModel::from_layers(design, &w, &b).unwrap()
}

fn pattern_bound() -> Outcome {
    let golden = activation_patterns(&MlpDesign::new(vec![17, 16, 10, 3], Activation::Tanh).unwrap())
        .map_err(|e| e.to_string())?;
    let golden_ok = golden.to_string() == "67042305";
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs: Vec<Vec<f64>> = (0..100_000)
        .map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)])
        .collect();
    let mut within = true;
    let mut within_inclusive = true;
    let mut rows = Vec::new();
    for sizes in [
        vec![2, 1, 1],
        vec![2, 2, 1],
        vec![2, 3, 1],
        vec![2, 4, 1],
        vec![2, 3, 2, 1],
        vec![2, 4, 4, 1],
        vec![2, 2, 4, 3, 1],
    ] {
        let design = MlpDesign::new(sizes, Activation::Relu).unwrap();
        let bound = activation_patterns(&design).unwrap();
        let inclusive = activation_patterns_inclusive(&design).unwrap();
        let seen = (0..4)
            .map(|_| count_patterns(&random_model(&design, &mut rng), &inputs))
            .max()
            .unwrap();
        within &= num_le(seen, &bound);
        within_inclusive &= num_le(seen, &inclusive);
        rows.push(format!("{}: {seen}/{bound}", design.layers_string()));
    }
    check(
        golden_ok && within,
        format!(
            "17|16|10|3 -> {golden}; brute force seen/bound: {}; inclusive bound {}",
            rows.join(", "),
            if within_inclusive { "holds" } else { "violated" }
        ),
    )
}

fn num_le(n: usize, bound: &num_bigint::BigUint) -> bool {
    num_bigint::BigUint::from(n) <= *bound
}

// ---------------------------------------------------------------------------
// 8

fn window(y: &[f64], k: usize, half: usize) -> Vec<f64> {
    (0..2 * half + 1)
        .map(|i| {
            let idx = k as isize + i as isize - half as isize;
            if idx < 0 || idx as usize >= y.len() {
                0.0
            } else {
                y[idx as usize]
            }
        })
        .collect()
}

fn kinks(act: Activation) -> Vec<f64> {
    match act {
        Activation::HTanh => vec![-1.0, 1.0],
        Activation::Relu => vec![0.0],
        Activation::ITanh { points } => (0..points)
            .map(|i| -4.0 + 8.0 * i as f64 / (points - 1) as f64)
            .collect(),
        _ => vec![],
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn mlp_gradient_error(act: Activation, rng: &mut ChaCha8Rng) -> f64 {
    let design = MlpDesign::new(vec![5, 6, 4, 2], act).unwrap();
    let n = 12;
    let kk = kinks(act);
    loop {
        let model = random_model(&design, rng);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let near_kink = (0..n).any(|k| {
            model
                .hidden_preactivations(&window(&y, k, 2))
                .iter()
                .any(|z| kk.iter().any(|c| (z - c).abs() < 1e-3))
        });
        if near_kink {
            continue;
        }
        let bits = random_bits(n, 2, rng.random()).unwrap();
        let frame = SymbolFrame::new(y);
        let batch: Vec<usize> = (0..n).collect();
        let (_, g) = backprop_gradient(&model, &frame, MlpTarget::Bits(&bits), &batch).unwrap();
        let h = 1e-6;
        let mut p = model.params().to_vec();
        let fd: Vec<f64> = (0..p.len())
            .map(|i| {
                let v = p[i];
                p[i] = v + h;
                let up = loss_at(&model, &p, &frame, MlpTarget::Bits(&bits), &batch);
                p[i] = v - h;
                let dn = loss_at(&model, &p, &frame, MlpTarget::Bits(&bits), &batch);
                p[i] = v;
                (up - dn) / (2.0 * h)
            })
            .collect();
        return rel_err(&g, &fd);
    }
}

fn vnle_gradient_error(bitwise: bool, rng: &mut ChaCha8Rng) -> f64 {
    let design: VolterraDesign = "5:3:3".parse().unwrap();
    let map = build_gray_pam::<f64>(2).unwrap();
    let n = 40;
    loop {
        let nk = design.total_kernels();
        let mut kernels: Vec<f64> = (0..nk).map(|_| 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
        kernels[2] += 1.0;
        let model = VolterraModel::from_kernels(design.clone(), kernels.clone()).unwrap();
        let bits = random_bits(n, 2, rng.random()).unwrap();
        let x = map_bits(&map, &bits).unwrap();
        let y = SymbolFrame::new(x.symbols.iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect());
        let samples: Vec<usize> = (2..n - 2).collect();
        let eq = predict(&model, &y);
        let mids = map.midpoints();
        if bitwise && samples.iter().any(|&k| mids.iter().any(|m| (eq.symbols[k] - m).abs() < 1e-4)) {
            continue;
        }
        let base = MlaDemapper::fixed(map.clone(), 0.05).unwrap().to_trained();
        let dparams: Vec<f64> = base
            .params()
            .iter()
            .map(|v| v * (1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let objective = |k: &[f64], d: &[f64]| -> (f64, Vec<f64>) {
            let m = VolterraModel::from_kernels(design.clone(), k.to_vec()).unwrap();
            let obj = if bitwise {
                VnleObjective::Bitwise {
                    demapper: MlaDemapper::trained(map.clone(), d.to_vec()).unwrap(),
                    bits: &bits,
                }
            } else {
                VnleObjective::Mse
            };
            objective_and_gradient(&m, &y, &x, &obj, &samples)
        };
        let (_, g) = objective(&kernels, &dparams);
        let mut all: Vec<f64> = kernels.clone();
        if bitwise {
            all.extend_from_slice(&dparams);
        }
        let h = 1e-6;
        let fd: Vec<f64> = (0..all.len())
            .map(|i| {
                let mut up = all.clone();
                up[i] += h;
                let mut dn = all.clone();
                dn[i] -= h;
                let f = |p: &[f64]| objective(&p[..nk], &p[nk..]).0;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect();
        return rel_err(&g, &fd);
    }
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = Vec::new();
    let mut ok = true;
    for act in [
        Activation::Tanh,
        Activation::ITanh { points: 16 },
        Activation::HTanh,
        Activation::Relu,
    ] {
        let e = (0..20).map(|_| mlp_gradient_error(act, &mut rng)).fold(0.0, f64::max);
        ok &= e < 1e-5;
        worst.push(format!("{act} {e:.1e}"));
    }
    for bitwise in [false, true] {
        let e = (0..20).map(|_| vnle_gradient_error(bitwise, &mut rng)).fold(0.0, f64::max);
        ok &= e < 1e-5;
        worst.push(format!("VNLE {} {e:.1e}", if bitwise { "bitwise" } else { "MSE" }));
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        ok && secs < 10.0,
        format!("worst relative error over 20 instances: {}; {secs:.1} s", worst.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 9

fn frobenius_rel(a: &[f64], b: &[f64]) -> f64 {
    rel_err(a, b)
}

fn extraction_round_trip() -> Outcome {
    // Linear network: the expansion is exact.
    let lin = MlpDesign::new(vec![5, 4, 1], Activation::Linear).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = random_model(&lin, &mut rng);
    let (w1, w2) = (net.weights(0), net.weights(1));
    let h1_true: Vec<f64> = (0..5).map(|j| (0..4).map(|i| w2[i] * w1[i * 5 + j]).sum()).collect();
    let ks = extract_kernels(&net, None, 2).map_err(|e| e.to_string())?;
    let lin_err = ks[0]
        .h1
        .iter()
        .zip(&h1_true)
        .map(|(a, b)| (a - b).abs())
        .chain(ks[0].h2.as_ref().unwrap().iter().flatten().map(|v| v.abs()))
        .fold(0.0, f64::max);

    // Noiseless order-2 generator with 5 taps.
    let gen_design: VolterraDesign = "5:5".parse().unwrap();
    let nk = gen_design.total_kernels();
    let h1 = [0.1, -0.25, 1.0, 0.3, -0.1];
    let idx = kernel_indices(&gen_design);
    let mut kernels = vec![0.0; nk];
    kernels[..5].copy_from_slice(&h1);
    for (i, k) in idx.iter().enumerate().skip(5) {
        kernels[i] = 0.12 * ((i * 7 % 11) as f64 / 5.0 - 1.0) * if k.offsets[0] == k.offsets[1] { 1.5 } else { 1.0 };
    }
    let gen = VolterraModel::from_kernels(gen_design, kernels.clone()).unwrap();
    let n = 40_000;
    let y = SymbolFrame::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let x = predict(&gen, &y);
    let design = MlpDesign::new(vec![5, 16, 1], Activation::Tanh).unwrap();
    let opt = AdamConfig {
        step: 2e-3,
        batch_size: 64,
        max_epochs: 300,
        patience: 30,
        seed: 9,
        ..Default::default()
    };
    let fit = train(&design, &y, MlpTarget::Values(&x.symbols), &opt, 0.8, None).map_err(|e| e.to_string())?;
    let ks = extract_kernels(&fit.model, None, 2).map_err(|e| e.to_string())?;
    let e1 = frobenius_rel(&ks[0].h1, &h1);
    let (mut got2, mut want2) = (Vec::new(), Vec::new());
    for (i, k) in idx.iter().enumerate().skip(5) {
        got2.push(ks[0].h2_at(k.offsets[0], k.offsets[1]).unwrap());
        want2.push(kernels[i]);
    }
    let e2 = frobenius_rel(&got2, &want2);
    check(
        lin_err <= 1e-10 && e1 <= 0.05 && e2 <= 0.05,
        format!(
            "linear network max error {lin_err:.1e}; trained 5|16|1 tanh: h1 rel {e1:.4}, h2 rel {e2:.4} (valid MSE {:.2e})",
            fit.trace.valid_loss[fit.trace.best_epoch]
        ),
    )
}

// ---------------------------------------------------------------------------
// 10

fn ls_gd_equivalence() -> Outcome {
    let design: VolterraDesign = "9:5".parse().unwrap();
    let map = build_gray_pam::<f64>(2).unwrap();
    let bits = random_bits(8000, 2, 10).unwrap();
    let x = map_bits(&map, &bits).unwrap();
    let ch = nleq::Channel::default().with_noise(sigma_from_snr(20.0), 10);
    let y = nleq::channel::propagate(&ch, &x).map_err(|e| e.to_string())?;
    let ls = fit_ls(&design, &y, &x).map_err(|e| e.to_string())?;
    let opt = AdamConfig {
        step: 1e-3,
        batch_size: 64,
        max_epochs: 300,
        patience: 30,
        ..Default::default()
    };
    let gd = fit_gd(&design, &y, &x, VnleObjective::Mse, &opt, 1.0, None).map_err(|e| e.to_string())?;
    let (a, b) = (mse(&design, &predict(&ls.model, &y), &x), mse(&design, &predict(&gd.model, &y), &x));
    check(
        b - a <= 1e-4,
        format!("LS MSE {a:.6e}, ADAM MSE {b:.6e}, excess {:.2e}", b - a),
    )
}

// ---------------------------------------------------------------------------
// 11

fn orderings() -> Outcome {
    let s = synthetic();
    let r = |k: &str| s.rates[k].0;
    let (o1, o2, o3) = (r("order1"), r("order2"), r("order3"));
    let a = o3 >= o2 && o2 >= o1;
    let (best_name, best, best_cost) = s
        .grid
        .iter()
        .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
        .cloned()
        .unwrap();
    let (sd, _, sd_cost) = s.rates["sdnne"];
    let b = sd >= best && sd_cost == BUDGET;
    let bw = r("bitwise");
    let c = bw >= o3 - 1e-3;
    check(
        a && b && c && s.secs < 600.0,
        format!(
            "(a) {o1:.5} <= {o2:.5} <= {o3:.5} {}; (b) SDNNE {sd:.5} ({sd_cost} mult) vs best of {} VNLEs {best_name} {best:.5} ({best_cost} mult) {}; (c) bitwise {bw:.5} vs MSE {o3:.5} {}; runs {:.0} s",
            ok_tag(a),
            s.grid.len(),
            ok_tag(b),
            ok_tag(c),
            s.secs
        ),
    )
}

fn ok_tag(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "VIOLATED"
    }
}

// ---------------------------------------------------------------------------
// 12

fn l1_recovery() -> Result<(usize, usize, f64, f64), String> {
    let design: VolterraDesign = "17:17".parse().unwrap();
    let nk = design.total_kernels();
    let idx = kernel_indices(&design);
    let at = |o: &[i32]| idx.iter().position(|k| k.offsets == o).unwrap();
    let support: Vec<usize> = [
        &[-2][..],
        &[-1],
        &[0],
        &[1],
        &[2],
        &[0, 0],
        &[-1, 0],
        &[0, 1],
        &[-1, 1],
        &[2, 2],
    ]
    .iter()
    .map(|o| at(o))
    .collect();
    let values = [0.15, -0.3, 1.0, 0.25, -0.12, 0.2, -0.15, 0.1, 0.12, -0.18];
    let mut truth = vec![0.0; nk];
    for (&i, &v) in support.iter().zip(&values) {
        truth[i] = v;
    }
    let gen = VolterraModel::from_kernels(design.clone(), truth).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let map = build_gray_pam::<f64>(3).unwrap();
    let bits = random_bits(20_000, 3, 12).unwrap();
    let y = map_bits(&map, &bits).unwrap();
    let clean = predict(&gen, &y);
    let x = SymbolFrame::new(clean.symbols.iter().map(|v| v + 0.03 * rng.sample::<f64, _>(StandardNormal)).collect());
    let ls = fit_ls(&design, &y, &x).map_err(|e| e.to_string())?;
    let base = mse(&design, &predict(&ls.model, &y), &x);
    let opt = AdamConfig {
        step: 1e-3,
        batch_size: 128,
        max_epochs: 100,
        patience: 10,
        seed: 12,
        ..Default::default()
    };
    let fit = prune_l1(&design, &y, &x, 2e-3, 0.02, &opt, 0.8, Some(&ls.model)).map_err(|e| e.to_string())?;
    let kept = support.iter().filter(|&&i| fit.model.active()[i]).count();
    let pruned = mse(&design, &predict(&fit.model, &y), &x);
    Ok((kept, fit.active_kernels, pruned, base))
}

fn pruning() -> Outcome {
    let s = synthetic();
    let (dense, _, dense_cost) = s.rates["sdnne"];
    let (sparse, _, sparse_cost) = s.rates["sdnne-pruned"];
    let loss = dense - sparse;
    let (kept, active, pruned_mse, base_mse) = l1_recovery()?;
    let l1_ok = kept == 10 && active <= 20 && pruned_mse <= 2.0 * base_mse;
    check(
        loss < 0.01 && l1_ok,
        format!(
            "gradual 20%: {dense:.5} -> {sparse:.5} (loss {loss:+.5}, {dense_cost} -> {sparse_cost} mult); L1 17:17: kept {kept}/10 true kernels, {active} active, MSE {pruned_mse:.3e} vs {base_mse:.3e}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 12] = [
        ("loss equivalence", loss_equivalence),
        ("optimal-demapper oracle", demapper_oracle),
        ("GMI correctness", gmi_correctness),
        ("s-calibration", s_calibration),
        ("kernel-count golden values", kernel_counts),
        ("complexity golden values", complexity_golden),
        ("activation-pattern bound", pattern_bound),
        ("gradient fidelity", gradient_fidelity),
        ("kernel extraction round trip", extraction_round_trip),
        ("LS/GD equivalence", ls_gd_equivalence),
        ("directional orderings", orderings),
        ("pruning behavior", pruning),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut unexpected = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match out {
            Ok(d) => println!("PASS [{n:>2}] {name}: {d}"),
            Err(d) => {
                let known = KNOWN_UNATTAINABLE.contains(&n);
                if !known {
                    unexpected += 1;
                }
                println!("FAIL [{n:>2}] {name}: {d}{}", if known { " (known unattainable)" } else { "" });
            }
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
