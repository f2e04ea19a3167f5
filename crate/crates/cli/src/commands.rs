use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use serde_json::{json, Value};
use spectra::diagnostics::{self, DiagnosticsConfig, MASS_FLOOR};
use spectra::flow::{self, FlowState, KernelSource};
use spectra::geometry::{self, GeometryConfig, Tier};
use spectra::harness::{self, aggregate, AnalysisSettings, ExportInput, SparsitySpec, SweepConfig};
use spectra::matrix_file;
use spectra::model::{self, TmsConfig, WeightMatrix};
use spectra::rng::{self, Stream};
use spectra::spectral::{self, SymMatrix, Tolerances};
use spectra::{Error, Result, VERSION};

use crate::args::{
    AggregateArgs, AnalyzeArgs, Cli, Command, ExportArgs, FlowArgs, KernelArg, SweepArgs, TierArg, TrainArgs,
};
use crate::config::{self, Resolved};

const DEFAULT_OUTPUT: &str = "spectra-out";

pub fn run(cli: Cli) -> Result<()> {
    let file = config::load_file(cli.global.config.as_deref())?;
    let global = config::merge(&cli.global, &file)?;
    let default_out = Path::new(DEFAULT_OUTPUT);
    match cli.command {
        Command::Train(a) => {
            let g = Resolved::new(&global, Tolerances::default(), default_out)?;
            train(&g, &config::merge(&a, &file)?)
        }
        Command::Analyze(a) => {
            let g = Resolved::new(&global, Tolerances::default(), default_out)?;
            let weights = a.weights.clone();
            analyze(&g, &config::merge(&a, &file)?, &weights, false)
        }
        Command::Classify(a) => {
            let g = Resolved::new(&global, Tolerances::default(), default_out)?;
            let weights = a.weights.clone();
            analyze(&g, &config::merge(&a, &file)?, &weights, true)
        }
        Command::Flow(a) => {
            let g = Resolved::new(&global, Tolerances::default(), default_out)?;
            let mut merged = config::merge(&a, &file)?;
            merged.weights = a.weights;
            merged.validate = a.validate;
            run_flow(&g, &merged)
        }
        Command::Sweep(a) => {
            let g = Resolved::new(&global, AnalysisSettings::default().tolerances, default_out)?;
            let mut merged = config::merge(&a, &file)?;
            merged.desk = a.desk;
            merged.force = a.force;
            sweep(&g, &merged)
        }
        Command::Aggregate(a) => {
            let g = Resolved::new(&global, Tolerances::default(), &a.dir)?;
            let dir = a.dir.clone();
            aggregate_cmd(&g, &config::merge(&a, &file)?, &dir)
        }
        Command::Export(a) => {
            let fallback = a.dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let g = Resolved::new(&global, Tolerances::default(), &fallback)?;
            export(&g, &a)
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    matrix_file::write_atomic(path, &bytes)
}

/// Header shared by every JSON output.
fn header(command: &str, g: &Resolved, args: &impl Serialize) -> Result<Value> {
    Ok(json!({
        "tool": VERSION,
        "command": command,
        "config": { "global": g, "command": serde_json::to_value(args)? },
    }))
}

fn with(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::validation(format!("cannot parse {what} from {s:?}")))
}

/// A number, or `ramp:FROM:TO`, `block:FIRST:SECOND:SPLIT`, `explicit:S1,S2,...`.
pub fn parse_sparsity(s: &str) -> Result<SparsitySpec> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(SparsitySpec::Uniform { s: parse_f64(v, "sparsity")? }),
        ["ramp", a, b] => Ok(SparsitySpec::LinearRamp {
            from: parse_f64(a, "ramp start")?,
            to: parse_f64(b, "ramp end")?,
        }),
        ["block", a, b, k] => Ok(SparsitySpec::TwoBlock {
            first: parse_f64(a, "block sparsity")?,
            second: parse_f64(b, "block sparsity")?,
            split: k
                .trim()
                .parse()
                .map_err(|_| Error::validation(format!("cannot parse block split from {k:?}")))?,
        }),
        ["explicit", list] => Ok(SparsitySpec::Explicit {
            values: list
                .split(',')
                .map(|v| parse_f64(v, "sparsity"))
                .collect::<Result<_>>()?,
        }),
        _ => Err(Error::validation(format!("unrecognized sparsity {s:?}"))),
    }
}

fn importance(n: usize, decay: Option<f64>) -> Result<Vec<f64>> {
    let d = decay.unwrap_or(1.0);
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::validation(format!("importance decay must be positive, got {d}")));
    }
    Ok((0..n).map(|i| d.powi(i as i32)).collect())
}

fn tier(t: Option<TierArg>, default: Tier) -> Tier {
    match t {
        Some(TierArg::Exact) => Tier::Exact,
        Some(TierArg::Trained) => Tier::Trained,
        None => default,
    }
}

fn train(g: &Resolved, a: &TrainArgs) -> Result<()> {
    let n = a.n.ok_or_else(|| Error::validation("--n is required"))?;
    let m = a.m.ok_or_else(|| Error::validation("--m is required"))?;
    let spec = parse_sparsity(a.sparsity.as_deref().unwrap_or("0"))?;
    let mut cfg = TmsConfig::uniform(n, m, 0.0, g.seed);
    cfg.sparsity = spec.values(n)?;
    cfg.importance = importance(n, a.importance_decay)?;
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.batch = a.batch.unwrap_or(cfg.batch);
    cfg.optimizer.lr = a.lr.unwrap_or(cfg.optimizer.lr);
    cfg.snapshot_every = a.snapshot_every.unwrap_or(cfg.snapshot_every);
    cfg.eval_batch = a.eval_batch.unwrap_or(cfg.eval_batch);
    cfg.validate()?;

    let traj = model::train(&cfg)?;
    let out = &g.output;
    let mut snapshots = Vec::new();
    for s in &traj.snapshots {
        let rel = format!("snapshots/step_{:08}.spwm", s.step);
        matrix_file::write_weights(&out.join(&rel), &s.weights)?;
        snapshots.push(json!({ "step": s.step, "loss": s.loss, "path": rel }));
    }
    matrix_file::write_weights(&out.join("weights.spwm"), &traj.final_weights)?;
    let doc = with(
        header("train", g, &json!({ "train": cfg, "sparsity": spec }))?,
        json!({
            "initial_loss": traj.initial_loss(),
            "final_loss": traj.final_loss(),
            "weights": "weights.spwm",
            "snapshots": snapshots,
        }),
    );
    write_json(&out.join("trajectory.json"), &doc)?;
    println!(
        "trained n={n} m={m}: loss {:.6} -> {:.6}; weights in {}",
        traj.initial_loss(),
        traj.final_loss(),
        out.join("weights.spwm").display()
    );
    Ok(())
}

fn analyze(g: &Resolved, a: &AnalyzeArgs, weights: &Path, classify_only: bool) -> Result<()> {
    let w = matrix_file::read_weights(weights)?;
    let dc = DiagnosticsConfig {
        tolerances: g.tolerances,
        mass_floor: a.mass_floor.unwrap_or(MASS_FLOOR),
    };
    let gc = GeometryConfig {
        threshold: a.threshold.unwrap_or(GeometryConfig::default().threshold),
        tier: tier(a.tier, Tier::Exact),
    };
    let analysis = diagnostics::analyze(w.w.view(), &dc)?;
    let report = geometry::classify(w.w.view(), &analysis, gc)?;
    let input = json!({ "weights": weights.display().to_string() });
    let taus = a.tail_taus.clone().unwrap_or_else(|| AnalysisSettings::default().tail_taus);
    let effective = json!({ "diagnostics": dc, "geometry": gc, "tail_taus": taus });
    let d = &analysis.diagnostics;
    if classify_only {
        let doc = with(header("classify", g, &effective)?, json!({ "input": input, "geometry": report }));
        write_json(&g.output.join("classify.json"), &doc)?;
    } else {
        let lev = diagnostics::leverage_and_slack(w.w.view(), &analysis.context.lifted)?;
        let tails = taus
            .iter()
            .map(|&t| diagnostics::tail_mass(d, t))
            .collect::<Result<Vec<_>>>()?;
        let band_violations: Vec<usize> = d
            .features
            .iter()
            .filter(|f| match (f.slack, f.omega_support) {
                (Some(s), Some(o)) => s > o * o + 1e-12,
                _ => false,
            })
            .map(|f| f.i)
            .collect();
        let esd = diagnostics::esd(&analysis.context.gram_decomposition, harness::ESD_BINS)?;
        let run_id = weights.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let lines = harness::features_jsonl(&run_id, &d.features)?;
        matrix_file::write_atomic(&g.output.join("features.jsonl"), lines.as_bytes())?;
        let doc = with(
            header("analyze", g, &effective)?,
            json!({
                "input": input,
                "summary": {
                    "n": w.n(),
                    "m": w.m(),
                    "rank": d.rank,
                    "sum_d": d.sum_d,
                    "saturation": d.saturation,
                    "defect": d.defect,
                    "sum_leverage": d.sum_leverage,
                    "sum_leverage_slack": d.sum_leverage_slack,
                    "zero_norm_features": d.features.iter().filter(|f| f.zero_norm).count(),
                },
                "identities": {
                    "budget_residual": lev.budget_residual,
                    "defect_residual": lev.defect_residual,
                    "pointwise_excess": lev.pointwise_excess,
                    "holds": lev.holds(1e-8),
                    "band_violations": band_violations,
                },
                "tail_mass": tails,
                "esd": esd,
                "geometry": report,
            }),
        );
        write_json(&g.output.join("report.json"), &doc)?;
    }
    println!(
        "rank {} sum D {:.6} clusters {} unassigned {}; output in {}",
        d.rank,
        d.sum_d,
        report.clusters.len(),
        report.unassigned.len(),
        g.output.display()
    );
    for c in &report.clusters {
        println!(
            "  lambda {:.6}: {} features, dim {}, {}{}",
            c.lambda,
            c.size,
            c.dim_v,
            c.scheme.as_ref().map_or("no scheme", |s| s.scheme.as_str()),
            c.catalog.as_ref().map_or(String::new(), |m| format!(", {}", m.name)),
        );
    }
    Ok(())
}

/// `W` with `WᵀW = M`, from the positive part of the spectrum of `M`.
fn gram_root(m: &Array2<f64>, tol: Tolerances) -> Result<Array2<f64>> {
    let d = spectral::decompose(&SymMatrix::new(m.clone())?, tol)?;
    spectral::spectral_fn(&d, |l| l.max(0.0).sqrt())
}

fn run_flow(g: &Resolved, a: &FlowArgs) -> Result<()> {
    let w = matrix_file::read_weights(&a.weights)?;
    let n = w.n();
    let spec = parse_sparsity(a.sparsity.as_deref().unwrap_or("0"))?;
    let sparsity = spec.values(n)?;
    let imp = importance(n, a.importance_decay)?;
    let steps = a.steps.unwrap_or(100);
    let h = a.h.unwrap_or(1e-3);
    let every = a.every.unwrap_or(1).max(1);
    let kernel = a.kernel.unwrap_or(KernelArg::Batch);
    let samples = a.samples.unwrap_or(flow::DEFAULT_KERNEL_SAMPLES);
    let panels = a.panels.unwrap_or(8);
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::validation(format!("step must be positive, got {h}")));
    }
    if kernel == KernelArg::Exact && n > flow::EXACT_N_CAP {
        return Err(Error::validation(format!("exact kernel supports n <= {}", flow::EXACT_N_CAP)));
    }

    let x = {
        let mut r = rng::stream(g.seed, Stream::Kernel);
        model::sample_batch(&sparsity, if kernel == KernelArg::Batch { samples.max(1) } else { 0 }, &mut r)
    };
    let tol = g.tolerances;
    let bias = w.b.clone();
    let exact = |m: &Array2<f64>| -> Array2<f64> {
        gram_root(m, tol)
            .and_then(|root| WeightMatrix::new(root, bias.clone()))
            .and_then(|wm| flow::gradient_kernel_exact(&wm, &sparsity, &imp, panels))
            .map(|k| k.phi)
            .unwrap_or_else(|_| Array2::from_elem((n, n), f64::NAN))
    };
    let source = match kernel {
        KernelArg::Batch => KernelSource::Batch {
            x: x.view(),
            bias: &w.b,
            importance: &imp,
        },
        KernelArg::Exact => KernelSource::Function(&exact),
    };

    let m0 = w.gram();
    let phi0 = source.phi(&m0);
    let validation = if a.validate {
        let fd = a.fd_step.unwrap_or(1e-5);
        let checks = flow::validate_drifts(&m0, &phi0, fd, tol)?;
        let d = spectral::decompose(&SymMatrix::new(m0.clone())?, tol)?;
        let transport = flow::mass_transport(&d, &phi0);
        Some(json!({
            "fd_step": fd,
            "drifts": checks,
            "mass_conservation_residual": transport.conservation_residual(),
            "fixed_point_residuals": flow::fixed_point_check(&d, &phi0),
        }))
    } else {
        None
    };

    let mut state = FlowState::new(m0);
    let mut lines = String::new();
    let mut record = |state: &FlowState, phi: &Array2<f64>| -> Result<()> {
        lines.push_str(&serde_json::to_string(&flow::flow_point(state, phi, tol)?)?);
        lines.push('\n');
        Ok(())
    };
    record(&state, &phi0)?;
    for step in 1..=steps {
        state = flow::flow_step(&state, &source, h, true)?;
        if state.m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step,
                reason: "non-finite Gram matrix".into(),
            });
        }
        if step % every == 0 || step == steps {
            record(&state, &source.phi(&state.m))?;
        }
    }
    matrix_file::write_atomic(&g.output.join("trajectory.jsonl"), lines.as_bytes())?;
    let effective = json!({
        "steps": steps,
        "h": h,
        "every": every,
        "kernel": kernel,
        "samples": samples,
        "panels": panels,
        "sparsity": spec,
        "importance": imp,
        "validate": a.validate,
    });
    let doc = with(
        header("flow", g, &effective)?,
        json!({
            "input": { "weights": a.weights.display().to_string() },
            "final_t": state.t,
            "clipped_steps": state.clipped_steps,
            "worst_negative": state.worst_negative,
            "validation": validation,
        }),
    );
    write_json(&g.output.join("flow.json"), &doc)?;
    println!(
        "integrated {steps} steps to t = {:.6}; trajectory in {}",
        state.t,
        g.output.join("trajectory.jsonl").display()
    );
    if let Some(v) = &validation {
        let worst = |key: &str| {
            v["drifts"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|c| c[key].as_f64())
                .fold(0.0f64, f64::max)
        };
        println!(
            "drift validation: eigenvalue rel err {:.3e}, projector rel err {:.3e}",
            worst("eigenvalue_rel_err"),
            worst("projector_rel_err")
        );
    }
    Ok(())
}

fn sweep(g: &Resolved, a: &SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig::desk(&g.output);
    if !a.desk && (a.ms.is_none() || (a.sparsities.is_none() && a.profile.is_none())) {
        return Err(Error::validation("give --desk, or both --ms and --sparsities (or --profile)"));
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(ms) = &a.ms {
        cfg.ms = ms.clone();
    }
    if let Some(ss) = &a.sparsities {
        cfg.sparsities = ss.iter().map(|&s| SparsitySpec::Uniform { s }).collect();
    }
    if let Some(ps) = &a.profile {
        cfg.sparsities = ps.iter().map(|p| parse_sparsity(p)).collect::<Result<_>>()?;
    }
    cfg.seeds = a.seeds.unwrap_or(cfg.seeds);
    cfg.seed_root = g.seed;
    let t = &mut cfg.template;
    t.steps = a.steps.unwrap_or(t.steps);
    t.batch = a.batch.unwrap_or(t.batch);
    t.optimizer.lr = a.lr.unwrap_or(t.optimizer.lr);
    t.snapshot_every = a.snapshot_every.unwrap_or(t.snapshot_every);
    t.eval_batch = a.eval_batch.unwrap_or(t.eval_batch);
    cfg.analysis.tolerances = g.tolerances;
    cfg.analysis.threshold = a.threshold.unwrap_or(cfg.analysis.threshold);
    cfg.analysis.tier = tier(a.tier, cfg.analysis.tier);
    cfg.threads = g.threads;
    cfg.force = a.force;

    let records = harness::run_sweep(&cfg)?;
    let table = harness::aggregate_saturation(&records);
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    println!(
        "{} cells, {} failed; median sum D / rank {}; records in {}",
        records.len(),
        failed,
        table.summary.median.map_or("n/a".into(), |v| format!("{v:.6}")),
        g.output.join("runs").display()
    );
    Ok(())
}

fn aggregate_cmd(g: &Resolved, a: &AggregateArgs, dir: &Path) -> Result<()> {
    let records = harness::load_records(dir)?;
    let table = harness::aggregate_saturation(&records);
    let rows = harness::aggregate_projective_linearity(&records);
    let min_loc = a.min_localization.unwrap_or(0.95);
    let lin = aggregate::linearity_summary(&rows, min_loc);
    matrix_file::write_atomic(&g.output.join("saturation.csv"), table.to_csv().as_bytes())?;
    matrix_file::write_atomic(&g.output.join("linearity.csv"), aggregate::linearity_csv(&rows).as_bytes())?;
    let failed: Vec<&str> = records.iter().filter(|r| !r.is_ok()).map(|r| r.run_id.as_str()).collect();
    let doc = with(
        header("aggregate", g, &json!({ "min_localization": min_loc }))?,
        json!({
            "input": { "dir": dir.display().to_string() },
            "saturation": table.summary,
            "linearity": lin,
            "failed": failed,
        }),
    );
    write_json(&g.output.join("aggregate.json"), &doc)?;
    let f = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.6}"));
    println!(
        "{} runs: sum D / rank min {} median {} (dense median {}); {} clusters with L >= {min_loc}: median R2 {}, median |k lambda - 1| {}",
        table.summary.runs,
        f(table.summary.min),
        f(table.summary.median),
        f(table.summary.median_dense),
        lin.clusters,
        f(lin.median_r2),
        f(lin.median_abs_error)
    );
    Ok(())
}

fn export(g: &Resolved, a: &ExportArgs) -> Result<()> {
    if a.dir.is_none() && a.weights.is_none() && a.flow.is_none() {
        return Err(Error::validation("nothing to export: give a sweep directory, --weights or --flow"));
    }
    let records = a.dir.as_deref().map(harness::load_records).transpose()?;
    let table = records.as_deref().map(harness::aggregate_saturation);
    let rows = records.as_deref().map(harness::aggregate_projective_linearity);
    let esd = match &a.weights {
        Some(p) => {
            let w = matrix_file::read_weights(p)?;
            let d = spectral::decompose(&SymMatrix::new(w.gram())?, g.tolerances)?;
            Some(diagnostics::esd(&d, harness::ESD_BINS)?)
        }
        None => None,
    };
    let flow_points = match &a.flow {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let pts = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<flow::FlowPoint>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format {
                    path: p.display().to_string(),
                    reason: e.to_string(),
                })?;
            Some(pts)
        }
        None => None,
    };
    let input = ExportInput {
        saturation: table.as_ref(),
        linearity: rows.as_deref(),
        esd: esd.as_ref(),
        flow: flow_points.as_deref(),
    };
    let files = harness::export_plot_data(&input, &g.output, !a.no_svg)?;
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let doc = with(
        header("export", g, &json!({ "svg": !a.no_svg }))?,
        json!({
            "input": {
                "dir": a.dir.as_ref().map(|p| p.display().to_string()),
                "weights": a.weights.as_ref().map(|p| p.display().to_string()),
                "flow": a.flow.as_ref().map(|p| p.display().to_string()),
            },
            "files": names,
        }),
    );
    write_json(&g.output.join("export.json"), &doc)?;
    println!("wrote {} files to {}", files.len(), g.output.display());
    Ok(())
}
