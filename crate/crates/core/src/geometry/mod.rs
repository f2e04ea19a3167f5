//! Cluster partition by spectral localization, tight-frame verification,
//! scheme identification, catalog lookup and projective-linearity fits.

pub mod frames;
pub mod scheme;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use scheme::{scheme_identify, simplex_identify, SchemeKind, SchemeMatch, SchemeSpec, SimplexCheck, Tier};

use crate::diagnostics::{Analysis, SpectralMeasure};
use crate::error::{Error, Result};
use crate::spectral::{self, frobenius, LiftedProjectors, SymMatrix, Tolerances};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Index into the lifted groups.
    pub group: usize,
    pub lambda: f64,
    pub members: Vec<usize>,
    pub dim_v: usize,
    /// Mean over members of the largest atom mass.
    pub localization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub threshold: f64,
    pub clusters: Vec<Cluster>,
    pub unassigned: Vec<usize>,
}

/// Assign each feature whose heaviest atom carries at least `threshold` of its
/// mass to that atom's eigenvalue group.
pub fn localize(
    w: ArrayView2<f64>,
    measures: &[Option<SpectralMeasure>],
    lifted: &LiftedProjectors,
    threshold: f64,
    tol: Tolerances,
) -> Result<ClusterPartition> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(Error::validation(format!("threshold must lie in (0.5, 1], got {threshold}")));
    }
    let mut by_group: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lifted.groups.len()];
    let mut unassigned = Vec::new();
    for (i, m) in measures.iter().enumerate() {
        match m.as_ref().and_then(|m| m.dominant()) {
            Some((g, p)) if p >= threshold => by_group[g].push((i, p)),
            _ => unassigned.push(i),
        }
    }
    let mut clusters = Vec::new();
    for (g, members) in by_group.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let idx: Vec<usize> = members.iter().map(|m| m.0).collect();
        let sub = w.select(Axis(1), &idx);
        clusters.push(Cluster {
            group: g,
            lambda: lifted.groups[g].lambda,
            dim_v: spectral::numerical_rank(sub.view(), tol)?,
            localization: members.iter().map(|m| m.1).sum::<f64>() / members.len() as f64,
            members: idx,
        });
    }
    Ok(ClusterPartition {
        threshold,
        clusters,
        unassigned,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightFrameCheck {
    /// `‖Σ_{i∈C} W_iW_iᵀ − λ P_V‖_F`.
    pub residual: f64,
    /// Residual divided by `λ`.
    pub relative_residual: f64,
    /// `Σ_{i∈C} ‖W_i‖² / dim V`.
    pub trace_constant: f64,
    /// `|λ − trace_constant|`.
    pub constant_gap: f64,
}

/// Tight-frame residual of one cluster against its group eigenvalue.
pub fn tight_frame_cluster(w: ArrayView2<f64>, cluster: &Cluster, tol: Tolerances) -> Result<TightFrameCheck> {
    let sub = w.select(Axis(1), &cluster.members);
    let fc = SymMatrix::new(sub.dot(&sub.t()))?;
    let dec = spectral::decompose(&fc, tol)?;
    let mut pv = Array2::<f64>::zeros(fc.as_array().dim());
    for g in &dec.groups {
        pv += &g.projector;
    }
    let residual = frobenius(&(fc.as_array() - &(&pv * cluster.lambda)));
    let trace_constant = fc.as_array().diag().sum() / cluster.dim_v.max(1) as f64;
    Ok(TightFrameCheck {
        residual,
        relative_residual: residual / cluster.lambda,
        trace_constant,
        constant_gap: (cluster.lambda - trace_constant).abs(),
    })
}

pub fn tight_frame_check(
    w: ArrayView2<f64>,
    partition: &ClusterPartition,
    tol: Tolerances,
) -> Result<Vec<TightFrameCheck>> {
    partition
        .clusters
        .iter()
        .map(|c| tight_frame_cluster(w, c, tol))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogMatch {
    pub name: String,
    pub p: usize,
    pub d: usize,
    pub fractional_dim: f64,
    /// Set when `(p, d)` alone cannot separate two geometries.
    pub ambiguous_with: Option<String>,
}

const CATALOG: [(usize, usize, &str, Option<&str>); 5] = [
    (2, 1, "digon", None),
    (3, 2, "triangle", None),
    (4, 3, "tetrahedron", None),
    (5, 2, "pentagon", None),
    (8, 3, "square-antiprism", Some("cube")),
];

/// Known unit tight frames of `p` vectors spanning `d` dimensions.
pub fn catalog_match(p: usize, d: usize) -> Option<CatalogMatch> {
    CATALOG.iter().find(|e| e.0 == p && e.1 == d).map(|e| CatalogMatch {
        name: e.2.to_string(),
        p,
        d,
        fractional_dim: d as f64 / p as f64,
        ambiguous_with: e.3.map(str::to_string),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    LeastSquares,
    /// All norms equal; the slope is the mean ratio `D/‖W‖²`.
    Ratio,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityFit {
    pub slope: f64,
    /// Uncentered `R² = 1 − SS_res / Σ D²`.
    pub r2: f64,
    /// `|kλ − 1|`.
    pub abs_error: f64,
    pub mode: FitMode,
}

/// Through-origin least-squares fit of `D_i` against `‖W_i‖²`.
pub fn projective_linearity_fit(norms2: &[f64], dims: &[f64], lambda: f64) -> Option<LinearityFit> {
    if norms2.is_empty() || norms2.len() != dims.len() {
        return None;
    }
    let lo = norms2.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = norms2.iter().copied().fold(0.0, f64::max);
    let (slope, mode) = if norms2.len() < 2 || hi - lo <= 1e-9 * hi {
        let k = norms2.iter().zip(dims).map(|(x, y)| y / x).sum::<f64>() / norms2.len() as f64;
        (k, FitMode::Ratio)
    } else {
        let sxy: f64 = norms2.iter().zip(dims).map(|(x, y)| x * y).sum();
        let sxx: f64 = norms2.iter().map(|x| x * x).sum();
        (sxy / sxx, FitMode::LeastSquares)
    };
    let ss_res: f64 = norms2.iter().zip(dims).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let ss_tot: f64 = dims.iter().map(|y| y * y).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LinearityFit {
        slope,
        r2,
        abs_error: (slope * lambda - 1.0).abs(),
        mode,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub threshold: f64,
    pub tier: Tier,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            threshold: 0.95,
            tier: Tier::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub lambda: f64,
    pub members: Vec<usize>,
    pub size: usize,
    pub dim_v: usize,
    pub localization: f64,
    pub tight_frame: TightFrameCheck,
    pub simplex: SimplexCheck,
    /// Best matching scheme, if any scheme matched.
    pub scheme: Option<SchemeMatch>,
    /// Character table `C(i, e)` of the matched scheme, row per relation.
    pub character_table: Option<Vec<Vec<f64>>>,
    pub catalog: Option<CatalogMatch>,
    pub fit: Option<LinearityFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub config: GeometryConfig,
    pub clusters: Vec<ClusterReport>,
    pub unassigned: Vec<usize>,
}

fn table(c: &Array2<f64>) -> Vec<Vec<f64>> {
    c.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Identify the cluster Gram against the simplex scheme, then the cyclic one.
pub fn identify_cluster(mk: &SymMatrix, tier: Tier) -> Result<Option<(SchemeMatch, SchemeSpec)>> {
    let p = mk.dim();
    if p < 2 {
        return Ok(None);
    }
    let mut best: Option<(SchemeMatch, SchemeSpec)> = None;
    for spec in [SchemeSpec::simplex(p)?, SchemeSpec::cyclic(p)?] {
        if spec.kind == SchemeKind::Cyclic && p <= 3 {
            continue;
        }
        let m = scheme_identify(mk, &spec, tier)?;
        if m.matches {
            return Ok(Some((m, spec)));
        }
        if best.as_ref().is_none_or(|b| m.relative_residual < b.0.relative_residual) {
            best = Some((m, spec));
        }
    }
    Ok(best.filter(|b| b.0.matches))
}

/// Tolerances for cluster dimensions. Trained clusters are only approximately
/// degenerate, so directions below the tier's relative threshold do not count.
pub fn cluster_rank_tolerances(tol: Tolerances, tier: Tier) -> Tolerances {
    Tolerances {
        zero: tol.zero.max(tier.relative()),
        ..tol
    }
}

/// Full geometry report for an analyzed weight matrix.
pub fn classify(w: ArrayView2<f64>, analysis: &Analysis, cfg: GeometryConfig) -> Result<GeometryReport> {
    let tol = cluster_rank_tolerances(analysis.context.tolerances, cfg.tier);
    let partition = localize(w, &analysis.measures, &analysis.context.lifted, cfg.threshold, tol)?;
    let gram = analysis.context.gram.as_array();
    let mut clusters = Vec::with_capacity(partition.clusters.len());
    for c in &partition.clusters {
        let mk = SymMatrix::new(Array2::from_shape_fn((c.members.len(), c.members.len()), |(a, b)| {
            gram[[c.members[a], c.members[b]]]
        }))?;
        let identified = identify_cluster(&mk, cfg.tier)?;
        let norms: Vec<f64> = c.members.iter().map(|&i| gram[[i, i]]).collect();
        let dims: Vec<f64> = c.members.iter().map(|&i| analysis.diagnostics.features[i].d).collect();
        clusters.push(ClusterReport {
            lambda: c.lambda,
            members: c.members.clone(),
            size: c.members.len(),
            dim_v: c.dim_v,
            localization: c.localization,
            tight_frame: tight_frame_cluster(w, c, tol)?,
            simplex: simplex_identify(&mk, c.dim_v, cfg.tier)?,
            character_table: identified.as_ref().map(|(_, s)| table(&s.c)),
            scheme: identified.map(|(m, _)| m),
            catalog: catalog_match(c.members.len(), c.dim_v),
            fit: projective_linearity_fit(&norms, &dims, c.lambda),
        });
    }
    Ok(GeometryReport {
        config: cfg,
        clusters,
        unassigned: partition.unassigned,
    })
}
