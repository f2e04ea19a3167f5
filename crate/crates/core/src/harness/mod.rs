//! Sweep orchestration over `(m, sparsity, seed)` grids, per-cell run records
//! and the aggregate tables built from them.

pub mod aggregate;
pub mod plot;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, Analysis, DiagnosticsConfig, FeatureRecord, Histogram, TailMass};
use crate::error::{Error, Result};
use crate::geometry::{self, GeometryConfig, Tier};
use crate::matrix_file;
use crate::model::{self, AdamConfig, TmsConfig, TrainingTrajectory, WeightMatrix};
use crate::rng;
use crate::spectral::Tolerances;

pub use aggregate::{
    aggregate_projective_linearity, aggregate_saturation, LinearityRow, SaturationRow, SaturationSummary,
    SaturationTable,
};
pub use plot::{export_plot_data, ExportInput};

pub const SCHEMA: u32 = 1;
pub const ESD_BINS: usize = 64;

/// Sparsity of one grid cell: uniform, or a named per-feature profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparsitySpec {
    Uniform { s: f64 },
    /// Linear interpolation from the first feature to the last.
    LinearRamp { from: f64, to: f64 },
    /// The first `split` features use `first`, the rest `second`.
    TwoBlock { first: f64, second: f64, split: usize },
    Explicit { values: Vec<f64> },
}

impl SparsitySpec {
    pub fn values(&self, n: usize) -> Result<Vec<f64>> {
        let v = match self {
            SparsitySpec::Uniform { s } => vec![*s; n],
            SparsitySpec::LinearRamp { from, to } => {
                if n == 1 {
                    vec![*from]
                } else {
                    (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect()
                }
            }
            SparsitySpec::TwoBlock { first, second, split } => {
                if *split > n {
                    return Err(Error::validation(format!("two-block split {split} exceeds n = {n}")));
                }
                (0..n).map(|i| if i < *split { *first } else { *second }).collect()
            }
            SparsitySpec::Explicit { values } => {
                if values.len() != n {
                    return Err(Error::validation(format!(
                        "explicit sparsity has {} entries, expected {n}",
                        values.len()
                    )));
                }
                values.clone()
            }
        };
        if let Some(s) = v.iter().find(|s| !(0.0..1.0).contains(*s)) {
            return Err(Error::validation(format!("sparsity {s} outside [0, 1)")));
        }
        Ok(v)
    }

    /// Short label used in run identifiers and tables.
    pub fn label(&self) -> String {
        match self {
            SparsitySpec::Uniform { s } => format!("{s}"),
            SparsitySpec::LinearRamp { from, to } => format!("ramp{from}-{to}"),
            SparsitySpec::TwoBlock { first, second, split } => format!("block{first}-{second}-{split}"),
            SparsitySpec::Explicit { values } => format!("explicit{:016x}", self.seed_word_of(values)),
        }
    }

    /// Mean sparsity, used for coloring plots.
    pub fn mean(&self, n: usize) -> f64 {
        self.values(n)
            .map(|v| v.iter().sum::<f64>() / n.max(1) as f64)
            .unwrap_or(f64::NAN)
    }

    fn seed_word_of(&self, values: &[f64]) -> u64 {
        rng::mix(&values.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    }

    fn seed_word(&self) -> u64 {
        match self {
            SparsitySpec::Uniform { s } => s.to_bits(),
            SparsitySpec::LinearRamp { from, to } => rng::mix(&[1, from.to_bits(), to.to_bits()]),
            SparsitySpec::TwoBlock { first, second, split } => {
                rng::mix(&[2, first.to_bits(), second.to_bits(), *split as u64])
            }
            SparsitySpec::Explicit { values } => rng::mix(&[3, self.seed_word_of(values)]),
        }
    }
}

/// Training settings shared by every cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTemplate {
    pub optimizer: AdamConfig,
    pub steps: usize,
    pub batch: usize,
    pub snapshot_every: usize,
    pub eval_batch: usize,
    /// Per-feature importance; unit importance when absent.
    pub importance: Option<Vec<f64>>,
}

impl Default for TrainTemplate {
    fn default() -> Self {
        let t = TmsConfig::uniform(1, 1, 0.0, 0);
        TrainTemplate {
            optimizer: t.optimizer,
            steps: t.steps,
            batch: t.batch,
            snapshot_every: t.snapshot_every,
            eval_batch: t.eval_batch,
            importance: None,
        }
    }
}

/// Analysis settings applied to each trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub tolerances: Tolerances,
    pub mass_floor: f64,
    pub threshold: f64,
    pub tier: Tier,
    pub tail_taus: Vec<f64>,
}

impl Default for AnalysisSettings {
    /// Trained spectra are never exactly degenerate, so eigenvalues within 3%
    /// of the largest are grouped together.
    fn default() -> Self {
        AnalysisSettings {
            tolerances: Tolerances {
                group: 0.03,
                ..Tolerances::default()
            },
            mass_floor: diagnostics::MASS_FLOOR,
            threshold: 0.95,
            tier: Tier::Trained,
            tail_taus: vec![0.05, 0.1, 0.25],
        }
    }
}

impl AnalysisSettings {
    pub fn diagnostics(&self) -> DiagnosticsConfig {
        DiagnosticsConfig {
            tolerances: self.tolerances,
            mass_floor: self.mass_floor,
        }
    }

    pub fn geometry(&self) -> GeometryConfig {
        GeometryConfig {
            threshold: self.threshold,
            tier: self.tier,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub ms: Vec<usize>,
    pub sparsities: Vec<SparsitySpec>,
    pub seeds: usize,
    pub seed_root: u64,
    pub template: TrainTemplate,
    pub analysis: AnalysisSettings,
    pub output: PathBuf,
    pub threads: usize,
    /// Retrain cells whose record already exists.
    pub force: bool,
}

impl SweepConfig {
    /// Uniform-sparsity grid with default training and analysis settings.
    pub fn grid(n: usize, ms: &[usize], sparsities: &[f64], seeds: usize, output: impl Into<PathBuf>) -> Self {
        SweepConfig {
            n,
            ms: ms.to_vec(),
            sparsities: sparsities.iter().map(|&s| SparsitySpec::Uniform { s }).collect(),
            seeds,
            seed_root: 0,
            template: TrainTemplate::default(),
            analysis: AnalysisSettings::default(),
            output: output.into(),
            threads: 1,
            force: false,
        }
    }

    /// The built-in desk-scale grid: 64 features, 48 runs.
    pub fn desk(output: impl Into<PathBuf>) -> Self {
        Self::grid(64, &[4, 8, 16, 32], &[0.0, 0.3, 0.5, 0.7, 0.9, 0.99], 2, output)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ms.is_empty() || self.sparsities.is_empty() || self.seeds == 0 {
            return Err(Error::validation("sweep grid is empty"));
        }
        let max_m = *self.ms.iter().max().expect("nonempty");
        if self.ms.contains(&0) {
            return Err(Error::validation("m values must be positive"));
        }
        if self.n < max_m {
            return Err(Error::validation(format!("n ({}) must be at least max m ({max_m})", self.n)));
        }
        if self.threads == 0 {
            return Err(Error::validation("threads must be at least 1"));
        }
        self.analysis.tolerances.validate()?;
        if !(self.analysis.threshold > 0.5 && self.analysis.threshold <= 1.0) {
            return Err(Error::validation("localization threshold must lie in (0.5, 1]"));
        }
        if let Some(t) = self.analysis.tail_taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::validation(format!("tail threshold {t} outside (0, 1)")));
        }
        for s in &self.sparsities {
            s.values(self.n)?;
        }
        for cell in self.cells() {
            self.tms_config(&cell)?.validate()?;
        }
        Ok(())
    }

    /// Cells in grid order: m, then sparsity, then seed index.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &m in &self.ms {
            for s in &self.sparsities {
                for seed_index in 0..self.seeds {
                    out.push(Cell {
                        n: self.n,
                        m,
                        sparsity: s.clone(),
                        seed_index,
                        seed: rng::mix(&[self.seed_root, m as u64, s.seed_word(), seed_index as u64]),
                    });
                }
            }
        }
        out
    }

    pub fn tms_config(&self, cell: &Cell) -> Result<TmsConfig> {
        let t = &self.template;
        Ok(TmsConfig {
            n: cell.n,
            m: cell.m,
            sparsity: cell.sparsity.values(cell.n)?,
            importance: t.importance.clone().unwrap_or_else(|| vec![1.0; cell.n]),
            seed: cell.seed,
            optimizer: t.optimizer,
            steps: t.steps,
            batch: t.batch,
            snapshot_every: t.snapshot_every,
            eval_batch: t.eval_batch,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
    pub sparsity: SparsitySpec,
    pub seed_index: usize,
    /// Derived run seed.
    pub seed: u64,
}

impl Cell {
    pub fn run_id(&self) -> String {
        format!("{}_{}_{}", self.m, self.sparsity.label(), self.seed_index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub lambda: f64,
    pub size: usize,
    pub dim_v: usize,
    pub localization: f64,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub abs_error: Option<f64>,
    pub catalog: Option<String>,
    pub scheme: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub step: usize,
    pub loss: f64,
    /// Relative to the sweep output directory.
    pub path: String,
}

/// Scalars derived from one analyzed weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rank: usize,
    pub sum_d: f64,
    /// `ΣD/rank`; absent at rank zero.
    pub saturation: Option<f64>,
    pub defect: f64,
    pub sum_leverage_slack: f64,
    pub clusters: Vec<ClusterSummary>,
    pub unassigned: usize,
    pub tail_mass: Vec<TailMass>,
    pub esd: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub initial_loss: f64,
    pub final_loss: f64,
    #[serde(flatten)]
    pub summary: RunSummary,
    pub snapshots: Vec<SnapshotRef>,
    /// Final weights, relative to the sweep output directory.
    pub weights: String,
    pub features: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub tool: String,
    pub run_id: String,
    pub cell: Cell,
    pub train: TrainTemplate,
    pub analysis: AnalysisSettings,
    pub status: RunStatus,
    pub result: Option<RunResult>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// One line of the per-feature JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLine {
    pub run_id: String,
    pub i: usize,
    pub norm2: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub l: f64,
    pub sigma: Option<f64>,
    pub kappa: Option<f64>,
    pub cv: Option<f64>,
    pub omega: Option<f64>,
    pub p_star: Option<f64>,
    pub group_lambda: Option<f64>,
}

impl FeatureLine {
    pub fn new(run_id: &str, f: &FeatureRecord) -> Self {
        FeatureLine {
            run_id: run_id.to_string(),
            i: f.i,
            norm2: f.norm2,
            d: f.d,
            l: f.leverage,
            sigma: f.slack,
            kappa: f.kappa,
            cv: f.cv,
            omega: f.omega,
            p_star: f.p_star,
            group_lambda: f.group_lambda,
        }
    }
}

/// JSONL text with one object per feature.
pub fn features_jsonl(run_id: &str, features: &[FeatureRecord]) -> Result<String> {
    let mut out = String::new();
    for f in features {
        out.push_str(&serde_json::to_string(&FeatureLine::new(run_id, f))?);
        out.push('\n');
    }
    Ok(out)
}

/// Scalars a record stores about one analyzed weight matrix.
pub fn summarize(w: &WeightMatrix, settings: &AnalysisSettings) -> Result<(Analysis, RunSummary)> {
    let analysis = diagnostics::analyze(w.w.view(), &settings.diagnostics())?;
    let report = geometry::classify(w.w.view(), &analysis, settings.geometry())?;
    let d = &analysis.diagnostics;
    let clusters = report
        .clusters
        .iter()
        .map(|c| ClusterSummary {
            lambda: c.lambda,
            size: c.size,
            dim_v: c.dim_v,
            localization: c.localization,
            slope: c.fit.map(|f| f.slope),
            r2: c.fit.map(|f| f.r2),
            abs_error: c.fit.map(|f| f.abs_error),
            catalog: c.catalog.as_ref().map(|m| m.name.clone()),
            scheme: c.scheme.as_ref().map(|s| s.scheme.clone()),
        })
        .collect();
    let tail_mass = settings
        .tail_taus
        .iter()
        .map(|&t| diagnostics::tail_mass(d, t))
        .collect::<Result<_>>()?;
    let esd = diagnostics::esd(&analysis.context.gram_decomposition, ESD_BINS)?;
    let summary = RunSummary {
        rank: d.rank,
        sum_d: d.sum_d,
        saturation: d.saturation,
        defect: d.defect,
        sum_leverage_slack: d.sum_leverage_slack,
        clusters,
        unassigned: report.unassigned.len(),
        tail_mass,
        esd,
    };
    Ok((analysis, summary))
}

fn run_dir(run_id: &str) -> String {
    format!("runs/{run_id}")
}

pub fn record_path(output: &Path, run_id: &str) -> PathBuf {
    output.join(format!("runs/{run_id}.json"))
}

fn write_outputs(
    output: &Path,
    run_id: &str,
    trajectory: &TrainingTrajectory,
    settings: &AnalysisSettings,
) -> Result<RunResult> {
    let dir = run_dir(run_id);
    std::fs::create_dir_all(output.join(&dir)).map_err(|e| Error::io(output.join(&dir), e))?;
    let mut snapshots = Vec::with_capacity(trajectory.snapshots.len());
    for s in &trajectory.snapshots {
        let rel = format!("{dir}/step_{:08}.spwm", s.step);
        matrix_file::write_weights(&output.join(&rel), &s.weights)?;
        snapshots.push(SnapshotRef {
            step: s.step,
            loss: s.loss,
            path: rel,
        });
    }
    let weights = format!("{dir}/final.spwm");
    matrix_file::write_weights(&output.join(&weights), &trajectory.final_weights)?;
    let (analysis, summary) = summarize(&trajectory.final_weights, settings)?;
    let features = format!("{dir}/features.jsonl");
    let lines = features_jsonl(run_id, &analysis.diagnostics.features)?;
    matrix_file::write_atomic(&output.join(&features), lines.as_bytes())?;
    Ok(RunResult {
        initial_loss: trajectory.initial_loss(),
        final_loss: trajectory.final_loss(),
        summary,
        snapshots,
        weights,
        features,
    })
}

/// Train and analyze one cell, or load its existing record.
pub fn run_cell(cfg: &SweepConfig, cell: &Cell) -> Result<RunRecord> {
    let run_id = cell.run_id();
    let path = record_path(&cfg.output, &run_id);
    if !cfg.force {
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(rec) = serde_json::from_slice::<RunRecord>(&bytes) {
                return Ok(rec);
            }
        }
    }
    let tms = cfg.tms_config(cell)?;
    let outcome = model::train(&tms).and_then(|t| write_outputs(&cfg.output, &run_id, &t, &cfg.analysis));
    let (status, result) = match outcome {
        Ok(r) => (RunStatus::Ok, Some(r)),
        Err(e @ (Error::Diverged { .. } | Error::Domain(_) | Error::NotInAlgebra { .. })) => {
            (RunStatus::Failed { reason: e.to_string() }, None)
        }
        Err(e) => return Err(e),
    };
    let record = RunRecord {
        schema: SCHEMA,
        tool: crate::VERSION.to_string(),
        run_id,
        cell: cell.clone(),
        train: cfg.template.clone(),
        analysis: cfg.analysis.clone(),
        status,
        result,
    };
    matrix_file::write_atomic(&path, &record.to_json()?)?;
    Ok(record)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema: u32,
    pub tool: String,
    pub config: SweepConfig,
    pub cells: usize,
    pub completed: usize,
    pub failed: Vec<String>,
}

pub const MANIFEST: &str = "sweep.json";

/// Run every cell of the grid on a pool of `threads` workers. Records come
/// back in grid order whatever the scheduling.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let runs = cfg.output.join("runs");
    std::fs::create_dir_all(&runs).map_err(|e| Error::io(&runs, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::validation(format!("cannot build worker pool: {e}")))?;
    let cells = cfg.cells();
    let records: Vec<RunRecord> =
        pool.install(|| cells.par_iter().map(|c| run_cell(cfg, c)).collect::<Result<_>>())?;
    let manifest = SweepManifest {
        schema: SCHEMA,
        tool: crate::VERSION.to_string(),
        config: cfg.clone(),
        cells: cells.len(),
        completed: records.iter().filter(|r| r.is_ok()).count(),
        failed: records.iter().filter(|r| !r.is_ok()).map(|r| r.run_id.clone()).collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    matrix_file::write_atomic(&cfg.output.join(MANIFEST), &bytes)?;
    Ok(records)
}

/// All records under `<dir>/runs`, sorted by run id.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let runs = dir.join("runs");
    let entries = std::fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))?;
    let mut records = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&runs, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            records.push(serde_json::from_slice::<RunRecord>(&bytes).map_err(|e| Error::Format {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?);
        }
    }
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(records)
}

/// Re-analyze a record's stored final weights and return the largest
/// absolute difference against the stored scalars.
pub fn verify_record(record: &RunRecord, dir: &Path) -> Result<f64> {
    let result = record
        .result
        .as_ref()
        .ok_or_else(|| Error::validation(format!("run {} has no result", record.run_id)))?;
    let stored = &result.summary;
    let w = matrix_file::read_weights(&dir.join(&result.weights))?;
    let (_, fresh) = summarize(&w, &record.analysis)?;
    if fresh.rank != stored.rank || fresh.clusters.len() != stored.clusters.len() {
        return Ok(f64::INFINITY);
    }
    let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    let mut diff = [
        (fresh.sum_d - stored.sum_d).abs(),
        (fresh.defect - stored.defect).abs(),
        (fresh.sum_leverage_slack - stored.sum_leverage_slack).abs(),
        opt(fresh.saturation, stored.saturation),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);
    for (a, b) in fresh.clusters.iter().zip(&stored.clusters) {
        if a.size != b.size || a.dim_v != b.dim_v {
            return Ok(f64::INFINITY);
        }
        diff = diff
            .max((a.lambda - b.lambda).abs())
            .max((a.localization - b.localization).abs())
            .max(opt(a.slope, b.slope))
            .max(opt(a.r2, b.r2))
            .max(opt(a.abs_error, b.abs_error));
    }
    Ok(diff)
}
