//! Per-feature spectral measures and the scalar diagnostics derived from them.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, LiftedProjectors, SpectralDecomposition, SymMatrix, Tolerances};

/// Features with `‖W_i‖² ≤ ZERO_NORM_REL · max(1, max_j ‖W_j‖²)` are treated as dead.
pub const ZERO_NORM_REL: f64 = 1e-12;

/// Default mass floor for band endpoints.
pub const MASS_FLOOR: f64 = 1e-6;

/// `M = WᵀW`.
pub fn gram(w: ArrayView2<f64>) -> SymMatrix {
    SymMatrix::new(w.t().dot(&w)).expect("Gram of finite weights is symmetric")
}

/// `F = WWᵀ`.
///
/// Each entry sums its products in sorted order, so the result does not depend
/// on the column order of `W` at all, bit for bit.
pub fn frame(w: ArrayView2<f64>) -> SymMatrix {
    let m = w.nrows();
    let mut f = Array2::zeros((m, m));
    let mut buf = Vec::with_capacity(w.ncols());
    for a in 0..m {
        for b in a..m {
            buf.clear();
            buf.extend(w.row(a).iter().zip(w.row(b).iter()).map(|(x, y)| x * y));
            buf.sort_by(f64::total_cmp);
            let s: f64 = buf.iter().sum();
            f[[a, b]] = s;
            f[[b, a]] = s;
        }
    }
    SymMatrix::new(f).expect("frame of finite weights is symmetric")
}

pub fn column_norms2(w: ArrayView2<f64>) -> Vec<f64> {
    w.columns().into_iter().map(|c| c.dot(&c)).collect()
}

/// Dead-feature mask under the relative threshold [`ZERO_NORM_REL`].
pub fn zero_norm_mask(w: ArrayView2<f64>) -> Vec<bool> {
    let norms = column_norms2(w);
    let scale = norms.iter().fold(1.0f64, |m, &x| m.max(x));
    norms.iter().map(|&x| x <= ZERO_NORM_REL * scale).collect()
}

/// Gram decomposition, frame operator and lifted projectors of one weight matrix.
#[derive(Clone, Debug)]
pub struct SpectralContext {
    pub gram: SymMatrix,
    pub frame: SymMatrix,
    pub gram_decomposition: SpectralDecomposition,
    pub lifted: LiftedProjectors,
    pub tolerances: Tolerances,
}

impl SpectralContext {
    pub fn new(w: ArrayView2<f64>, tol: Tolerances) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("weights contain non-finite entries"));
        }
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::validation("weights are empty"));
        }
        let gram = gram(w);
        let gram_decomposition = spectral::decompose(&gram, tol)?;
        let lifted = spectral::lift_projectors(w, &gram_decomposition)?;
        Ok(SpectralContext {
            gram,
            frame: frame(w),
            gram_decomposition,
            lifted,
            tolerances: tol,
        })
    }

    pub fn rank(&self) -> usize {
        self.lifted.rank()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Index into the lifted groups.
    pub group: usize,
    pub lambda: f64,
    pub mass: f64,
}

/// Distribution of one feature's squared norm over the positive frame eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    pub feature: usize,
    pub norm2: f64,
    /// One atom per lifted group, masses from `‖P_e W_i‖² / ‖W_i‖²`.
    pub atoms: Vec<Atom>,
    /// Masses from the Gram closed form `λ_e (E_e)_ii / ‖W_i‖²`.
    pub closed_form: Vec<f64>,
}

impl SpectralMeasure {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// Largest absolute difference between the two mass formulas.
    pub fn form_gap(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.closed_form)
            .fold(0.0f64, |m, (a, c)| m.max((a.mass - c).abs()))
    }

    /// `(group index, mass)` of the heaviest atom.
    pub fn dominant(&self) -> Option<(usize, f64)> {
        self.atoms
            .iter()
            .max_by(|a, b| a.mass.total_cmp(&b.mass).then(b.group.cmp(&a.group)))
            .map(|a| (a.group, a.mass))
    }

    pub fn support(&self, floor: f64) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().filter(move |a| a.mass >= floor)
    }

    pub fn moment(&self, r: Moment) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                a.mass
                    * match r {
                        Moment::Power(k) => a.lambda.powi(k),
                        Moment::Pinv => 1.0 / a.lambda,
                    }
            })
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let k = self.moment(Moment::Power(1));
        self.atoms.iter().map(|a| a.mass * (a.lambda - k).powi(2)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Moment {
    Power(i32),
    Pinv,
}

/// Spectral measures of every feature; dead features map to `None`.
pub fn spectral_measures(w: ArrayView2<f64>, lifted: &LiftedProjectors) -> Vec<Option<SpectralMeasure>> {
    let dead = zero_norm_mask(w);
    (0..w.ncols())
        .map(|i| {
            if dead[i] {
                return None;
            }
            let wi = w.column(i);
            let norm2 = wi.dot(&wi);
            let atoms = lifted
                .groups
                .iter()
                .enumerate()
                .map(|(e, g)| {
                    let pw = g.projector.dot(&wi);
                    Atom {
                        group: e,
                        lambda: g.lambda,
                        mass: pw.dot(&pw) / norm2,
                    }
                })
                .collect();
            let closed_form = lifted.groups.iter().map(|g| g.lambda * g.gram_diag[i] / norm2).collect();
            Some(SpectralMeasure {
                feature: i,
                norm2,
                atoms,
                closed_form,
            })
        })
        .collect()
}

/// The three closed forms of fractional dimensionality.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionalDims {
    /// `‖W_i‖⁴ / Σ_j (W_iᵀW_j)²` from explicit column inner products.
    pub definition: Vec<f64>,
    /// `M_ii² / (M²)_ii`.
    pub gram: Vec<f64>,
    /// `‖W_i‖² / κ_i` with `κ_i = W_iᵀ F W_i / ‖W_i‖²`.
    pub rayleigh: Vec<f64>,
    pub zero_norm: Vec<bool>,
}

impl FractionalDims {
    pub fn max_disagreement(&self) -> f64 {
        (0..self.gram.len())
            .map(|i| {
                let a = (self.definition[i] - self.gram[i]).abs();
                let b = (self.rayleigh[i] - self.gram[i]).abs();
                a.max(b)
            })
            .fold(0.0, f64::max)
    }
}

pub fn fractional_dimensionality(w: ArrayView2<f64>) -> FractionalDims {
    let n = w.ncols();
    let dead = zero_norm_mask(w);
    let m = w.t().dot(&w);
    let m2 = m.dot(&m);
    let f = w.dot(&w.t());
    let mut out = FractionalDims {
        definition: vec![0.0; n],
        gram: vec![0.0; n],
        rayleigh: vec![0.0; n],
        zero_norm: dead.clone(),
    };
    for i in 0..n {
        if dead[i] {
            continue;
        }
        let wi = w.column(i);
        let norm2 = wi.dot(&wi);
        let interference: f64 = (0..n).map(|j| wi.dot(&w.column(j)).powi(2)).sum();
        out.definition[i] = norm2 * norm2 / interference;
        out.gram[i] = m[[i, i]] * m[[i, i]] / m2[[i, i]];
        let kappa = wi.dot(&f.dot(&wi)) / norm2;
        out.rayleigh[i] = norm2 / kappa;
    }
    out
}

/// Leverage, slack and the defect identity.
#[derive(Clone, Debug, PartialEq)]
pub struct LeverageReport {
    pub leverage: Vec<f64>,
    /// `None` for dead features.
    pub slack: Vec<Option<f64>>,
    pub rank: usize,
    pub sum_leverage: f64,
    pub sum_d: f64,
    pub defect: f64,
    pub sum_leverage_slack: f64,
    /// `|Σℓ − r|`.
    pub budget_residual: f64,
    /// `|(r − ΣD) − Σℓσ|`.
    pub defect_residual: f64,
    /// Largest `D_i − ℓ_i` (non-positive when the pointwise bound holds).
    pub pointwise_excess: f64,
}

impl LeverageReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.budget_residual <= tol && self.defect_residual <= tol && self.pointwise_excess <= tol
    }
}

/// `ℓ_i = W_iᵀ F⁺ W_i`, `σ_i = 1 − D_i/ℓ_i`.
pub fn leverage_and_slack(w: ArrayView2<f64>, lifted: &LiftedProjectors) -> Result<LeverageReport> {
    let dims = fractional_dimensionality(w);
    let f_pinv = lifted.apply(|l| 1.0 / l)?;
    let n = w.ncols();
    let mut leverage = vec![0.0; n];
    let mut slack = vec![None; n];
    for i in 0..n {
        if dims.zero_norm[i] {
            continue;
        }
        let wi = w.column(i);
        let l = wi.dot(&f_pinv.dot(&wi));
        leverage[i] = l;
        slack[i] = Some((1.0 - dims.gram[i] / l).clamp(0.0, 1.0));
    }
    let rank = lifted.rank();
    let sum_leverage: f64 = leverage.iter().sum();
    let sum_d: f64 = dims.gram.iter().sum();
    let sum_leverage_slack: f64 = leverage
        .iter()
        .zip(&slack)
        .map(|(l, s)| l * s.unwrap_or(0.0))
        .sum();
    let defect = rank as f64 - sum_d;
    let pointwise_excess = dims
        .gram
        .iter()
        .zip(&leverage)
        .map(|(d, l)| d - l)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LeverageReport {
        budget_residual: (sum_leverage - rank as f64).abs(),
        defect_residual: (defect - sum_leverage_slack).abs(),
        leverage,
        slack,
        rank,
        sum_leverage,
        sum_d,
        defect,
        sum_leverage_slack,
        pointwise_excess,
    })
}

/// Operator side of the moment identity, `W_iᵀ Fʳ W_i / ‖W_i‖²`, with `F⁺`
/// for [`Moment::Pinv`].
pub fn operator_moment(w: ArrayView2<f64>, i: usize, lifted: &LiftedProjectors, r: Moment) -> Result<f64> {
    let wi = w.column(i);
    let norm2 = wi.dot(&wi);
    if norm2 == 0.0 {
        return Err(Error::validation(format!("feature {i} has zero norm")));
    }
    let op = match r {
        Moment::Power(k) if k >= 0 => {
            let f = w.dot(&w.t());
            let mut p = Array2::eye(w.nrows());
            for _ in 0..k {
                p = p.dot(&f);
            }
            p
        }
        Moment::Power(k) => return Err(Error::validation(format!("negative power {k}; use Pinv"))),
        Moment::Pinv => lifted.apply(|l| 1.0 / l)?,
    };
    Ok(wi.dot(&op.dot(&wi)) / norm2)
}

/// Pick one moment of a measure.
pub fn moments(measure: &SpectralMeasure, r: Moment) -> f64 {
    measure.moment(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualVariance {
    /// `‖F W_i − κ_i W_i‖² / ‖W_i‖²`.
    pub operator: f64,
    /// `Var_μ(λ)`.
    pub measure: f64,
    pub kappa: f64,
    /// `√Var / κ`.
    pub cv: f64,
}

pub fn residual_cv(w: ArrayView2<f64>, measures: &[Option<SpectralMeasure>]) -> Vec<Option<ResidualVariance>> {
    let f = w.dot(&w.t());
    measures
        .iter()
        .map(|m| {
            let m = m.as_ref()?;
            let wi = w.column(m.feature);
            let kappa = m.moment(Moment::Power(1));
            let r = f.dot(&wi) - &(&wi * kappa);
            let var = m.variance();
            Some(ResidualVariance {
                operator: r.dot(&r) / m.norm2,
                measure: var,
                kappa,
                cv: var.max(0.0).sqrt() / kappa,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandBounds {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// `(λ⁺ − λ⁻)/(λ⁺ + λ⁻)`.
    pub omega: f64,
    /// `λ⁺/λ⁻`.
    pub kappa_star: f64,
    /// `ω²`, the cap on slack.
    pub slack_cap: f64,
}

/// Band endpoints over atoms with mass at least `floor`; `None` when no atom
/// qualifies.
pub fn band_bounds(measure: &SpectralMeasure, floor: f64) -> Option<BandBounds> {
    let mut support = measure.support(floor).map(|a| a.lambda);
    let first = support.next()?;
    let (lo, hi) = support.fold((first, first), |(lo, hi), l| (lo.min(l), hi.max(l)));
    let omega = (hi - lo) / (hi + lo);
    Some(BandBounds {
        lambda_lo: lo,
        lambda_hi: hi,
        omega,
        kappa_star: hi / lo,
        slack_cap: omega * omega,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailMass {
    pub tau: f64,
    /// `(1/r) Σ_{σ_i ≥ τ} ℓ_i`.
    pub mass: f64,
    /// Measured `ε = 1 − ΣD/r`.
    pub epsilon: f64,
    /// `ε/τ`.
    pub cap: f64,
    pub holds: bool,
}

pub fn tail_mass(diag: &FeatureDiagnostics, tau: f64) -> Result<TailMass> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::validation(format!("tau must lie in (0, 1), got {tau}")));
    }
    if diag.rank == 0 {
        return Ok(TailMass {
            tau,
            mass: 0.0,
            epsilon: 0.0,
            cap: 0.0,
            holds: true,
        });
    }
    let r = diag.rank as f64;
    let mass = diag
        .features
        .iter()
        .filter(|f| f.slack.is_some_and(|s| s >= tau))
        .map(|f| f.leverage)
        .fold(0.0, |a, l| a + l)
        / r;
    let epsilon = 1.0 - diag.sum_d / r;
    let cap = epsilon / tau;
    Ok(TailMass {
        tau,
        mass,
        epsilon,
        cap,
        holds: mass <= cap + 1e-12,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }

    pub fn bin_of(&self, x: f64) -> usize {
        let bins = self.counts.len();
        let t = (x - self.lo) / (self.hi - self.lo) * bins as f64;
        (t.floor().max(0.0) as usize).min(bins - 1)
    }
}

/// Eigenvalue histogram with multiplicity over `[0, λ_max]` (or `[0, 1]` when
/// the matrix is zero).
pub fn esd(d: &SpectralDecomposition, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::validation("histogram needs at least one bin"));
    }
    let hi = if d.lambda_max() > 0.0 { d.lambda_max() } else { 1.0 };
    let mut h = Histogram {
        lo: 0.0,
        hi,
        counts: vec![0; bins],
    };
    for l in d.eigenvalues_with_multiplicity() {
        let k = h.bin_of(l);
        h.counts[k] += 1;
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub tolerances: Tolerances,
    pub mass_floor: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            tolerances: Tolerances::default(),
            mass_floor: MASS_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub i: usize,
    pub norm2: f64,
    pub zero_norm: bool,
    #[serde(rename = "D")]
    pub d: f64,
    pub kappa: Option<f64>,
    #[serde(rename = "l")]
    pub leverage: f64,
    #[serde(rename = "sigma")]
    pub slack: Option<f64>,
    pub cv: Option<f64>,
    /// Band half-width over atoms above the mass floor.
    pub omega: Option<f64>,
    /// Band half-width over the full support.
    pub omega_support: Option<f64>,
    pub p_star: Option<f64>,
    pub dominant_group: Option<usize>,
    pub group_lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    pub features: Vec<FeatureRecord>,
    pub rank: usize,
    pub sum_d: f64,
    /// `ΣD/r`; `None` at rank zero.
    pub saturation: Option<f64>,
    pub defect: f64,
    pub sum_leverage: f64,
    pub sum_leverage_slack: f64,
}

/// Everything the analysis of one weight matrix produces.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub context: SpectralContext,
    pub measures: Vec<Option<SpectralMeasure>>,
    pub diagnostics: FeatureDiagnostics,
}

pub fn analyze(w: ArrayView2<f64>, cfg: &DiagnosticsConfig) -> Result<Analysis> {
    let context = SpectralContext::new(w, cfg.tolerances)?;
    let measures = spectral_measures(w, &context.lifted);
    let dims = fractional_dimensionality(w);
    let lev = leverage_and_slack(w, &context.lifted)?;
    let resid = residual_cv(w, &measures);
    let norms = column_norms2(w);
    let features = (0..w.ncols())
        .map(|i| {
            let m = measures[i].as_ref();
            let dominant = m.and_then(|m| m.dominant());
            FeatureRecord {
                i,
                norm2: norms[i],
                zero_norm: dims.zero_norm[i],
                d: dims.gram[i],
                kappa: resid[i].map(|r| r.kappa),
                leverage: lev.leverage[i],
                slack: lev.slack[i],
                cv: resid[i].map(|r| r.cv),
                omega: m.and_then(|m| band_bounds(m, cfg.mass_floor)).map(|b| b.omega),
                omega_support: m.and_then(|m| band_bounds(m, 0.0)).map(|b| b.omega),
                p_star: dominant.map(|d| d.1),
                dominant_group: dominant.map(|d| d.0),
                group_lambda: dominant.map(|d| context.lifted.groups[d.0].lambda),
            }
        })
        .collect();
    let diagnostics = FeatureDiagnostics {
        features,
        rank: lev.rank,
        sum_d: lev.sum_d,
        saturation: (lev.rank > 0).then(|| lev.sum_d / lev.rank as f64),
        defect: lev.defect,
        sum_leverage: lev.sum_leverage,
        sum_leverage_slack: lev.sum_leverage_slack,
    };
    Ok(Analysis {
        context,
        measures,
        diagnostics,
    })
}
