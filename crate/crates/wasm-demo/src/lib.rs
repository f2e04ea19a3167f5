//! Browser bindings for three small demonstrations: analysis of a catalog
//! frame under noise, a short toy-model training run, and the Gram flow of a
//! simplex. Each entry point returns a JSON string; the `*_json` functions
//! are the same operations callable from native code.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use spectra::flow::{self, KernelSource};
use spectra::geometry::{frames, SchemeSpec};
use spectra::harness::{self, AnalysisSettings, RunSummary};
use spectra::model::{self, TmsConfig, WeightMatrix};
use spectra::rng::{self, Stream};
use spectra::spectral::{self, SymMatrix, Tolerances};
use spectra::{Error, Result};
use wasm_bindgen::prelude::*;

/// Frames the demo can start from.
pub const FRAMES: [&str; 7] = [
    "digon",
    "triangle",
    "tetrahedron",
    "pentagon",
    "square-antiprism",
    "cube",
    "triangle-digon",
];

const MAX_STEPS: usize = 20_000;

#[derive(Serialize)]
struct FrameView {
    frame: String,
    noise: f64,
    /// Feature vectors, one per column of the weight matrix.
    columns: Vec<Vec<f64>>,
    dims: Vec<f64>,
    summary: RunSummary,
}

#[derive(Serialize)]
struct TrainView {
    steps: Vec<usize>,
    losses: Vec<f64>,
    columns: Vec<Vec<f64>>,
    dims: Vec<f64>,
    summary: RunSummary,
}

#[derive(Serialize)]
struct FlowView {
    p: usize,
    t: Vec<f64>,
    /// Diagonal and off-diagonal coefficient of `M` at each recorded time.
    coefficients: Vec<[f64; 2]>,
    /// Distance from the span of the two coefficient matrices.
    residuals: Vec<f64>,
    eigenvalues: Vec<Vec<f64>>,
}

fn catalog_frame(name: &str) -> Result<Array2<f64>> {
    Ok(match name {
        "digon" => frames::digon(),
        "triangle" => frames::triangle(),
        "tetrahedron" => frames::tetrahedron(),
        "pentagon" => frames::polygon(5),
        "square-antiprism" => frames::square_antiprism(),
        "cube" => frames::cube(),
        "triangle-digon" => frames::triangle_digon(),
        _ => return Err(Error::validation(format!("unknown frame {name:?}; expected one of {FRAMES:?}"))),
    })
}

fn columns(w: &Array2<f64>) -> Vec<Vec<f64>> {
    w.columns().into_iter().map(|c| c.to_vec()).collect()
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(Error::validation(format!("steps must be in 1..={MAX_STEPS}, got {steps}")));
    }
    Ok(())
}

/// Analyze a catalog frame after adding Gaussian noise of standard deviation
/// `noise` to every weight.
pub fn analyze_frame_json(name: &str, noise: f64, seed: u64) -> Result<String> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::validation(format!("noise must be a finite non-negative number, got {noise}")));
    }
    let mut w = catalog_frame(name)?;
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).map_err(|e| Error::validation(e.to_string()))?;
        let mut rng = rng::stream(seed, Stream::Aux);
        w.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    let model = WeightMatrix::from_w(w)?;
    let (analysis, summary) = harness::summarize(&model, &AnalysisSettings::default())?;
    to_json(&FrameView {
        frame: name.to_string(),
        noise,
        columns: columns(&model.w),
        dims: analysis.diagnostics.features.iter().map(|f| f.d).collect(),
        summary,
    })
}

/// Train a toy model with uniform sparsity and analyze the result.
pub fn train_json(n: usize, m: usize, sparsity: f64, steps: usize, seed: u64) -> Result<String> {
    check_steps(steps)?;
    if n > 64 {
        return Err(Error::validation(format!("the demo trains at most 64 features, got {n}")));
    }
    let mut cfg = TmsConfig::uniform(n, m, sparsity, seed);
    cfg.optimizer.lr = 1e-2;
    cfg.steps = steps;
    cfg.batch = 256;
    cfg.eval_batch = 256;
    cfg.snapshot_every = (steps / 50).max(1);
    let traj = model::train(&cfg)?;
    let (analysis, summary) = harness::summarize(&traj.final_weights, &AnalysisSettings::default())?;
    to_json(&TrainView {
        steps: traj.snapshots.iter().map(|s| s.step).collect(),
        losses: traj.snapshots.iter().map(|s| s.loss).collect(),
        columns: columns(&traj.final_weights.w),
        dims: analysis.diagnostics.features.iter().map(|f| f.d).collect(),
        summary,
    })
}

/// Integrate the Gram flow from `scale` times the Gram matrix of the unit
/// simplex on `p` points, with the kernel recomputed on a fixed batch.
pub fn simplex_flow_json(p: usize, scale: f64, sparsity: f64, steps: usize, h: f64, seed: u64) -> Result<String> {
    check_steps(steps)?;
    if !(2..=12).contains(&p) {
        return Err(Error::validation(format!("p must be in 2..=12, got {p}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::validation(format!("scale must be positive, got {scale}")));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::validation(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let spec = SchemeSpec::simplex(p)?;
    let off = -1.0 / (p as f64 - 1.0);
    let m0 = flow::from_coefficients(&[scale, scale * off], &spec);
    let mut rng = rng::stream(seed, Stream::Kernel);
    let x = model::sample_batch(&vec![sparsity; p], 4096, &mut rng);
    let bias = Array1::zeros(p);
    let importance = vec![1.0; p];
    let source = KernelSource::Batch {
        x: x.view(),
        bias: &bias,
        importance: &importance,
    };
    let states = flow::integrate(m0, &source, h, steps, true)?;
    let every = (steps / 100).max(1);
    let mut view = FlowView {
        p,
        t: Vec::new(),
        coefficients: Vec::new(),
        residuals: Vec::new(),
        eigenvalues: Vec::new(),
    };
    for s in states.iter().step_by(every) {
        let (theta, residual) = spec.adjacency_coefficients(&s.m);
        let d = spectral::decompose(&SymMatrix::new(s.m.clone())?, Tolerances::default())?;
        view.t.push(s.t);
        view.coefficients.push([theta[0], theta[1]]);
        view.residuals.push(residual);
        view.eigenvalues.push(d.eigenvalues_with_multiplicity());
    }
    to_json(&view)
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = frameNames)]
pub fn frame_names() -> String {
    serde_json::to_string(&FRAMES).expect("static list")
}

#[wasm_bindgen(js_name = analyzeFrame)]
pub fn analyze_frame(name: &str, noise: f64, seed: u32) -> std::result::Result<String, JsError> {
    js(analyze_frame_json(name, noise, seed.into()))
}

#[wasm_bindgen(js_name = trainToy)]
pub fn train_toy(n: u32, m: u32, sparsity: f64, steps: u32, seed: u32) -> std::result::Result<String, JsError> {
    js(train_json(n as usize, m as usize, sparsity, steps as usize, seed.into()))
}

#[wasm_bindgen(js_name = simplexFlow)]
pub fn simplex_flow(p: u32, scale: f64, sparsity: f64, steps: u32, h: f64, seed: u32) -> std::result::Result<String, JsError> {
    js(simplex_flow_json(p as usize, scale, sparsity, steps as usize, h, seed.into()))
}
