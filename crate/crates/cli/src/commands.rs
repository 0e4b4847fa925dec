use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use circlstm::circulant::stats::{compression_stats, CompressionStats};
use circlstm::estimate::{estimate, resources, stage_cycles, stage_resources};
use circlstm::graph::{build_graph, plan};
use circlstm::lstm::{DenseReference, FxpConfig};
use circlstm::spectral::{fft_op_count, pointwise_op_count, OpCount};
use circlstm::{
    CallCounts, FxpVector, LstmArchSpec, LstmModel, LstmWeights, Mode, OpCostProfile, OpGraph, PlatformProfile,
    StageAssignment,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::bundle::{spectra_of, ModelBundle};
use crate::report::{sha256_hex, RunReport};
use crate::{ArchArgs, Budget, Cli, Command, Failure, ModeArg, ModelArgs, PlanArgs};

/// Tolerance of the float path against the dense reference.
const ORACLE_TOL: f64 = 1e-8;
const DEFAULT_BLOCK: usize = 8;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Compress {
            arch,
            from,
            out,
            no_spectra,
            sweep,
        } => match sweep {
            Some(sizes) => sweep_cmd(cli, "compress", arch, sizes),
            None => compress(cli, arch, from.as_deref(), out.as_deref().expect("required by clap"), !no_spectra),
        },
        Command::Infer {
            bundle,
            input,
            random_frames,
            mode,
            verify,
        } => infer(cli, bundle, input.as_deref(), *random_frames, *mode, *verify),
        Command::Verify { bundle, frames } => verify(cli, bundle, *frames as usize),
        Command::Schedule { plan } => schedule_cmd(cli, plan),
        Command::Estimate { plan, assignment } => estimate_cmd(cli, plan, assignment.as_deref()),
        Command::Bench {
            model,
            frames,
            repetitions,
        } => bench(cli, model, *frames as usize, *repetitions),
        Command::Sweep { arch, sizes } => sweep_cmd(cli, "sweep", arch, sizes),
    }
}

fn emit(cli: &Cli, report: &RunReport) {
    print!("{}", report.render(cli.format));
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn resolve_arch(a: &ArchArgs) -> Result<LstmArchSpec> {
    let spec = match a.arch.as_str() {
        "google" => LstmArchSpec::google(a.block_size.unwrap_or(DEFAULT_BLOCK)),
        "small" => LstmArchSpec::small(a.block_size.unwrap_or(DEFAULT_BLOCK)),
        path => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("architecture `{path}` is neither a preset nor a readable file: {e}")))?;
            let spec: LstmArchSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing architecture `{path}`"))?;
            match a.block_size {
                Some(k) => spec.with_block_size(k),
                None => spec,
            }
        }
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn platform(cli: &Cli, budget: Budget) -> Result<PlatformProfile> {
    let mut p = PlatformProfile::load(&cli.platform).map_err(|e| usage(e.to_string()))?;
    if budget == Budget::Unlimited {
        let u = PlatformProfile::unlimited();
        p.name = format!("{} (unlimited budget)", p.name);
        p.budget = u.budget;
    }
    Ok(p)
}

fn fxp_config(cli: &Cli, base: FxpConfig) -> FxpConfig {
    FxpConfig {
        data: cli.fxp.unwrap_or(base.data),
        weight: cli.fxp.unwrap_or(base.weight),
        policy: cli.shift_policy.unwrap_or(base.policy),
    }
}

fn read_bundle(path: &Path) -> Result<ModelBundle> {
    ModelBundle::read(path).with_context(|| format!("loading bundle {}", path.display()))
}

/// Architecture plus a description of where it came from.
fn model_arch(m: &ModelArgs) -> Result<(LstmArchSpec, Value)> {
    match &m.bundle {
        Some(b) => {
            let bundle = read_bundle(b)?;
            let digest = sha256_hex(bundle.manifest_json().as_bytes());
            Ok((bundle.manifest.arch, json!({ "bundle": b, "manifest_sha256": digest })))
        }
        None => {
            let arch = resolve_arch(&m.arch)?;
            Ok((arch.clone(), json!({ "arch": arch })))
        }
    }
}

fn random_frames(t: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn max_dev(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn counts_json(c: CallCounts) -> Value {
    json!({ "dft": c.dft, "idft": c.idft, "pointwise": c.pointwise })
}

fn stats_row(s: &CompressionStats) -> Value {
    json!({
        "block_size": s.block_size,
        "params": s.param_count,
        "params_m": (s.param_count as f64 / 1e4).round() / 100.0,
        "matrix_params": s.matrix_params,
        "compression": round4(s.compression_ratio),
        "matrix_compression": round4(s.matrix_compression_ratio),
        "complexity": round4(s.complexity_ratio),
        "matvec_ops": s.matvec_ops.total(),
    })
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn sweep_cmd(cli: &Cli, command: &str, a: &ArchArgs, sizes: &[usize]) -> Result<()> {
    let arch = resolve_arch(a)?;
    let rows = sizes
        .iter()
        .map(|&k| compression_stats(&arch, k).map(|s| stats_row(&s)))
        .collect::<circlstm::Result<Vec<_>>>()?;
    let report = RunReport::new(
        command,
        json!({ "arch": arch, "sizes": sizes }),
        json!({ "rows": rows }),
        json!({}),
    );
    emit(cli, &report);
    Ok(())
}

fn compress(cli: &Cli, a: &ArchArgs, from: Option<&Path>, out: &Path, spectra: bool) -> Result<()> {
    let (weights, seed, source, base_fxp, error) = match from {
        Some(src) => {
            let b = read_bundle(src)?;
            let k = a.block_size.unwrap_or(b.manifest.block_size);
            let w = b.weights.project(k).map_err(|e| usage(e.to_string()))?;
            let err = projection_error(&b.weights, &w);
            let digest = sha256_hex(b.manifest_json().as_bytes());
            (w, b.manifest.seed, json!({ "from": src, "manifest_sha256": digest }), b.fxp_config(), Some(err))
        }
        None => {
            let seed = cli
                .seed
                .ok_or_else(|| usage("random initialization needs --seed (or --from a bundle)"))?;
            let arch = resolve_arch(a)?;
            let w = LstmWeights::random(&arch, seed)?;
            (w, Some(seed), json!({ "arch": arch }), FxpConfig::default(), None)
        }
    };
    let fxp = fxp_config(cli, base_fxp);
    let bundle = ModelBundle::new(weights, fxp, seed, spectra)?;
    bundle
        .write(out)
        .with_context(|| format!("writing bundle {}", out.display()))?;
    let m = &bundle.manifest;
    let report = RunReport::new(
        "compress",
        json!({
            "source": source,
            "block_size": m.block_size,
            "seed": seed,
            "fxp": m.fxp,
            "spectra": spectra,
        }),
        json!({
            "out": out,
            "params": bundle.weights.param_count(),
            "tensors": m.tensors.len(),
            "manifest_sha256": sha256_hex(bundle.manifest_json().as_bytes()),
            "weights_f64_sha256": m.weights_f64.sha256,
            "weights_i16_sha256": m.weights_i16.sha256,
            "spectra_f64_sha256": m.spectra_f64.as_ref().map(|r| r.sha256.clone()),
        }),
        json!({ "relative_projection_error": error }),
    );
    emit(cli, &report);
    Ok(())
}

/// Frobenius distance between the circulant matrices of two models relative
/// to the source norm.
fn projection_error(src: &LstmWeights, dst: &LstmWeights) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let pairs = src.layers.iter().flatten().zip(dst.layers.iter().flatten());
    for (a, b) in pairs {
        let mats = a.gates.iter().zip(&b.gates).chain(a.projection.iter().zip(&b.projection));
        for (x, y) in mats {
            let (dx, dy) = (x.expand_to_dense(), y.expand_to_dense());
            num += dx.frobenius_distance(&dy).powi(2);
            den += dx.data.iter().map(|v| v * v).sum::<f64>();
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

fn load_frames(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading frames {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing frames {}: expected an array of arrays", path.display()))
}

fn infer(
    cli: &Cli,
    bundle_path: &Path,
    input: Option<&Path>,
    random: Option<usize>,
    mode: ModeArg,
    verify: bool,
) -> Result<()> {
    let bundle = read_bundle(bundle_path)?;
    let arch = bundle.manifest.arch.clone();
    let seed = cli.seed.unwrap_or(0);
    let xs = match (input, random) {
        (Some(p), _) => load_frames(p)?,
        (None, Some(t)) => random_frames(t, arch.input_dim, seed),
        (None, None) => unreachable!("clap requires one of them"),
    };
    let fxp = fxp_config(cli, bundle.fxp_config());
    let model = LstmModel::with_fxp(bundle.weights.clone(), fxp)?;
    let run_mode = match mode {
        ModeArg::Float => Mode::Float,
        ModeArg::Fxp => Mode::Fxp,
    };
    let start = Instant::now();
    let ys = model.run_sequence(&xs, run_mode)?;
    let elapsed = start.elapsed();
    let counts = model.counters().snapshot();
    let scores = match ys.last() {
        Some(y) => model.classify(y)?,
        None => None,
    };
    let predicted = scores.as_ref().map(|s| {
        s.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    });

    let mut metrics = json!({
        "call_counts": counts_json(counts),
        "elapsed_ms": elapsed.as_secs_f64() * 1e3,
    });
    let float_ys = match run_mode {
        Mode::Float => ys.clone(),
        Mode::Fxp => {
            let f = model.run_sequence(&xs, Mode::Float)?;
            metrics["fxp_vs_float_max_deviation"] = json!(max_dev(&ys, &f));
            f
        }
    };
    let mut failure = None;
    if verify {
        let oracle = DenseReference::new(&bundle.weights).run_sequence(&xs)?;
        let dev = max_dev(&float_ys, &oracle);
        metrics["oracle_max_deviation"] = json!(dev);
        metrics["oracle_tolerance"] = json!(ORACLE_TOL);
        if !(dev < ORACLE_TOL) {
            failure = Some(format!("float path deviates from the dense reference by {dev:e}"));
        }
    }
    let frames_digest = sha256_hex(serde_json::to_string(&xs)?.as_bytes());
    let report = RunReport::new(
        "infer",
        json!({
            "bundle": bundle_path,
            "manifest_sha256": sha256_hex(bundle.manifest_json().as_bytes()),
            "frames": input.map_or(json!({ "random": xs.len(), "seed": seed }), |p| json!(p)),
            "frames_sha256": frames_digest,
            "mode": if run_mode == Mode::Float { "float" } else { "fxp" },
            "fxp": { "data": fxp.data, "weight": fxp.weight, "policy": fxp.policy },
            "verify": verify,
        }),
        json!({
            "frames": ys.len(),
            "output_dim": arch.sequence_output_dim(),
            "outputs_sha256": sha256_hex(serde_json::to_string(&ys)?.as_bytes()),
            "sequence": ys,
            "class_scores": scores,
            "predicted_class": predicted,
        }),
        metrics,
    );
    emit(cli, &report);
    match failure {
        Some(msg) => Err(Failure::Verification(msg).into()),
        None => Ok(()),
    }
}

fn verify(cli: &Cli, bundle_path: &Path, frames: usize) -> Result<()> {
    let mut checks = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        checks.push(json!({ "check": name, "ok": ok, "detail": detail }));
        ok
    };
    match ModelBundle::read(bundle_path) {
        Err(e) => {
            check("integrity", false, format!("{e}"));
        }
        Ok(b) => {
            check("integrity", true, "manifest, hashes and tensor shapes agree".into());
            let mut bad = 0;
            let flat: Vec<f64> = b.weights.to_named().into_iter().flat_map(|t| t.data).collect();
            for t in &b.manifest.tensors {
                let q = FxpVector::quantize(&flat[t.offset..t.offset + t.len], t.format);
                if q.raw != b.quantized[t.offset..t.offset + t.len] {
                    bad += 1;
                }
            }
            check(
                "quantized_copy",
                bad == 0,
                format!("{bad} of {} tensors differ from re-quantization", b.manifest.tensors.len()),
            );
            if let Some(s) = &b.spectra {
                let want = spectra_of(&b.weights.to_named())?;
                let scale = want.iter().fold(1.0f64, |a, x| a.max(x.abs()));
                let dev = if s.len() == want.len() {
                    s.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                } else {
                    f64::INFINITY
                };
                check("spectra", dev <= 1e-12 * scale, format!("max deviation {dev:e}"));
            }
            let xs = random_frames(frames, b.manifest.arch.input_dim, cli.seed.unwrap_or(0));
            let model = LstmModel::with_fxp(b.weights.clone(), b.fxp_config())?;
            let got = model.run_sequence(&xs, Mode::Float)?;
            let want = DenseReference::new(&b.weights).run_sequence(&xs)?;
            let dev = max_dev(&got, &want);
            check(
                "dense_oracle",
                dev < ORACLE_TOL,
                format!("max deviation {dev:e} over {frames} frames (tolerance {ORACLE_TOL:e})"),
            );
        }
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| c["ok"] == json!(false))
        .map(|c| c["check"].as_str().unwrap().to_string())
        .collect();
    let report = RunReport::new(
        "verify",
        json!({ "bundle": bundle_path, "frames": frames, "seed": cli.seed.unwrap_or(0) }),
        json!({ "passed": failed.is_empty(), "checks": checks }),
        json!({}),
    );
    emit(cli, &report);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")).into())
    }
}

struct PlanInputs {
    graph: OpGraph,
    costs: OpCostProfile,
    platform: PlatformProfile,
    inputs: Value,
}

fn plan_inputs(cli: &Cli, p: &PlanArgs) -> Result<PlanInputs> {
    let (arch, source) = model_arch(&p.model)?;
    let graph = build_graph(&arch)?;
    let costs = match &p.costs {
        Some(path) => OpCostProfile::load(path).with_context(|| format!("loading costs {}", path.display()))?,
        None => OpCostProfile::synthetic(arch.block_size),
    };
    let platform = platform(cli, p.budget)?;
    let inputs = json!({
        "model": source,
        "block_size": arch.block_size,
        "costs": costs,
        "platform": platform,
        "replication_cap": p.replication_cap,
    });
    Ok(PlanInputs {
        graph,
        costs,
        platform,
        inputs,
    })
}

/// Per-stage detail plus the whole-design estimate.
fn describe(pi: &PlanInputs, a: &StageAssignment) -> Value {
    let g = &pi.graph;
    let est = estimate(g, a, &pi.costs, &pi.platform);
    let stages: Vec<Value> = a
        .stages
        .iter()
        .zip(&a.replication)
        .enumerate()
        .map(|(i, (s, &r))| {
            json!({
                "stage": i + 1,
                "ops": s.iter().map(|&v| g.node(v).name.clone()).collect::<Vec<_>>(),
                "parallelism": s.iter().map(|&v| a.parallelism[v]).collect::<Vec<_>>(),
                "replication": r,
                "cycles": stage_cycles(g, s, &a.parallelism, r, &pi.costs.depth),
                "chain": g.longest_chain(s),
                "resources": stage_resources(g, s, &a.parallelism, &pi.costs) * r,
            })
        })
        .collect();
    json!({
        "num_stages": a.num_stages(),
        "stages": stages,
        "fps": est.fps,
        "frequency_hz": pi.platform.frequency_hz,
        "resources": est.resources,
        "utilization": est.utilization,
        "feasible": est.feasible,
        "compounding": a.compounding,
        "assignment": a,
    })
}

fn schedule_cmd(cli: &Cli, p: &PlanArgs) -> Result<()> {
    let pi = plan_inputs(cli, p)?;
    let a = plan(&pi.graph, &pi.platform, &pi.costs, p.replication_cap)?;
    let report = RunReport::new("schedule", pi.inputs.clone(), describe(&pi, &a), json!({}));
    emit(cli, &report);
    Ok(())
}

fn estimate_cmd(cli: &Cli, p: &PlanArgs, assignment: Option<&Path>) -> Result<()> {
    let mut pi = plan_inputs(cli, p)?;
    let a = match assignment {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let a: StageAssignment =
                serde_json::from_str(&text).with_context(|| format!("parsing assignment {}", path.display()))?;
            let g = &pi.graph;
            if !a.is_partition(g)
                || a.parallelism.len() != g.len()
                || a.replication.len() != a.stages.len()
                || a.parallelism.iter().chain(&a.replication).any(|&x| x == 0)
            {
                bail!("assignment does not partition the {}-node graph with positive N and R", g.len());
            }
            if !a.respects_dependencies(g) {
                bail!("assignment places an operator before one of its producers");
            }
            pi.inputs["assignment"] = serde_json::to_value(&a)?;
            a
        }
        None => plan(&pi.graph, &pi.platform, &pi.costs, p.replication_cap)?,
    };
    let mut out = describe(&pi, &a);
    let totals = resources(&pi.graph, &a, &pi.costs);
    let b = pi.platform.budget;
    out["headroom"] = json!({
        "dsp": b.dsp.saturating_sub(totals.dsp),
        "bram": b.bram.saturating_sub(totals.bram),
        "lut": b.lut.saturating_sub(totals.lut),
        "ff": b.ff.saturating_sub(totals.ff),
    });
    let report = RunReport::new("estimate", pi.inputs, out, json!({}));
    emit(cli, &report);
    Ok(())
}

/// Arithmetic ops implied by call counts of spectral mat-vecs with block
/// size `k`: transforms, packed products and the spectral accumulation.
fn ops_from_counts(c: CallCounts, k: usize) -> OpCount {
    let acc = OpCount {
        mul: 0,
        add: (c.pointwise - c.idft) * k as u64,
    };
    fft_op_count(k) * (c.dft + c.idft) + pointwise_op_count(k) * c.pointwise + acc
}

fn bench(cli: &Cli, m: &ModelArgs, frames: usize, repetitions: u64) -> Result<()> {
    if repetitions == 0 {
        return Err(usage("--repetitions must be at least 1"));
    }
    let seed = cli.seed.unwrap_or(0);
    let (weights, source) = match &m.bundle {
        Some(b) => {
            let bundle = read_bundle(b)?;
            let digest = sha256_hex(bundle.manifest_json().as_bytes());
            (bundle.weights, json!({ "bundle": b, "manifest_sha256": digest }))
        }
        None => {
            let arch = resolve_arch(&m.arch)?;
            (LstmWeights::random(&arch, seed)?, json!({ "arch": arch }))
        }
    };
    let arch = weights.arch.clone();
    let k = arch.block_size;
    let xs = random_frames(frames, arch.input_dim, seed);
    let model = LstmModel::new(weights.clone())?;
    let dense = DenseReference::new(&weights);

    let mut t_fft = Vec::new();
    let mut t_dense = Vec::new();
    let mut dev = 0.0f64;
    for _ in 0..repetitions {
        model.counters().reset();
        let s = Instant::now();
        let a = model.run_sequence(&xs, Mode::Float)?;
        t_fft.push(s.elapsed().as_secs_f64());
        let s = Instant::now();
        let b = dense.run_sequence(&xs)?;
        t_dense.push(s.elapsed().as_secs_f64());
        dev = dev.max(max_dev(&a, &b));
    }
    let counts = model.counters().snapshot();
    let stats = compression_stats(&arch, k)?;
    let measured_ops = ops_from_counts(counts, k);
    let expected_ops = stats.matvec_ops.total() * frames as u64;
    let best = |t: &[f64]| t.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = |t: &[f64]| t.iter().sum::<f64>() / t.len() as f64;
    let (bf, bd) = (best(&t_fft), best(&t_dense));
    let log2k = (k as f64).log2();
    let report = RunReport::new(
        "bench",
        json!({ "model": source, "frames": frames, "repetitions": repetitions, "seed": seed }),
        json!({
            "block_size": k,
            "spectral_frames_per_s": frames as f64 / bf,
            "dense_frames_per_s": frames as f64 / bd,
            "speedup": bd / bf,
            "analytic_op_ratio": stats.dense_matvec_ops.total() as f64 / stats.matvec_ops.total() as f64,
            "k_over_log2k": if k > 1 { k as f64 / log2k } else { 1.0 },
            "max_deviation": dev,
        }),
        json!({
            "spectral_s": { "best": bf, "mean": mean(&t_fft) },
            "dense_s": { "best": bd, "mean": mean(&t_dense) },
            "call_counts_per_run": counts_json(counts),
            "ops_from_counters": measured_ops.total(),
            "ops_from_stats": expected_ops,
            "ops_consistent": measured_ops.total() == expected_ops,
        }),
    );
    emit(cli, &report);
    Ok(())
}
