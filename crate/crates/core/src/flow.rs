//! Gram flow `Ṁ = −(MΦ + ΦM)` driven by the gradient kernel, first-order
//! spectral drift formulas, and the association-scheme reduction.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SchemeSpec;
use crate::model::{self, WeightMatrix};
use crate::rng;
use crate::spectral::{self, frobenius, symmetrize, SpectralDecomposition, SymMatrix, Tolerances};

/// Default Monte-Carlo sample count for `Φ`.
pub const DEFAULT_KERNEL_SAMPLES: usize = 1 << 16;
/// Largest feature count accepted by the enumerating estimator.
pub const EXACT_N_CAP: usize = 12;
const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelEstimator {
    /// Plain average over a supplied batch.
    Batch { samples: usize },
    /// Fresh samples, each paired with its antithetic partner.
    MonteCarlo { samples: usize, seed: u64 },
    /// Enumeration of supports with at most two active features.
    Exact { covered_mass: f64, panels: usize },
}

#[derive(Clone, Debug)]
pub struct GradientKernel {
    pub phi: Array2<f64>,
    pub estimator: KernelEstimator,
}

/// `Φ = −E[δxᵀ + xδᵀ]` over the rows of `x`.
pub fn gradient_kernel_batch(model: &WeightMatrix, x: ArrayView2<f64>, importance: &[f64]) -> Result<GradientKernel> {
    let g = model::grad(model, x, importance)?;
    Ok(GradientKernel {
        phi: g.phi,
        estimator: KernelEstimator::Batch { samples: x.nrows() },
    })
}

/// Monte-Carlo `Φ` with antithetic pairs: every sample `x` is reused with the
/// same zero pattern and active values `1 − x_i`.
///
/// Chunks draw from independent streams and are reduced in chunk order, so the
/// result does not depend on the thread count.
pub fn gradient_kernel_mc(
    model: &WeightMatrix,
    sparsity: &[f64],
    importance: &[f64],
    samples: usize,
    seed: u64,
) -> Result<GradientKernel> {
    if sparsity.len() != model.n() || importance.len() != model.n() {
        return Err(Error::validation("sparsity and importance must match the feature count"));
    }
    if samples < 2 {
        return Err(Error::validation("need at least two samples"));
    }
    let gram = model.gram();
    let pairs = samples / 2;
    let chunks = pairs.div_ceil(CHUNK);
    let partial: Vec<Array2<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(pairs - c * CHUNK);
            let mut r = rng::stream(rng::mix(&[seed, c as u64]), rng::Stream::Kernel);
            let x = model::sample_batch(sparsity, rows, &mut r);
            let anti = x.mapv(|v| if v > 0.0 { 1.0 - v } else { 0.0 });
            let both = ndarray::concatenate(Axis(0), &[x.view(), anti.view()]).expect("same width");
            let (phi, _) = model::kernel_from_gram(&gram, &model.b, both.view(), importance);
            phi * (2 * rows) as f64
        })
        .collect();
    let mut phi = Array2::zeros((model.n(), model.n()));
    for p in partial {
        phi += &p;
    }
    phi /= (2 * pairs) as f64;
    Ok(GradientKernel {
        phi,
        estimator: KernelEstimator::MonteCarlo {
            samples: 2 * pairs,
            seed,
        },
    })
}

const GL3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// `Φ` by enumerating the empty, one-sparse and two-sparse supports.
///
/// One-sparse terms are integrated exactly (three-point Gauss–Legendre on the
/// pieces between ReLU kinks). Two-sparse terms use a `panels × panels`
/// composite rule. Supports with three or more active features are dropped;
/// their probability is `1 − covered_mass`.
pub fn gradient_kernel_exact(
    model: &WeightMatrix,
    sparsity: &[f64],
    importance: &[f64],
    panels: usize,
) -> Result<GradientKernel> {
    let n = model.n();
    if n > EXACT_N_CAP {
        return Err(Error::validation(format!("exact kernel supports n <= {EXACT_N_CAP}, got {n}")));
    }
    if sparsity.len() != n || importance.len() != n || panels == 0 {
        return Err(Error::validation("invalid exact-kernel inputs"));
    }
    let gram = model.gram();
    let b = &model.b;
    let all_zero: f64 = sparsity.iter().product();
    let prob = |active: &[usize]| -> f64 {
        (0..n)
            .map(|k| if active.contains(&k) { 1.0 - sparsity[k] } else { sparsity[k] })
            .product()
    };
    // G = E[δxᵀ] accumulated over supports.
    let mut g = Array2::<f64>::zeros((n, n));
    let mut covered = all_zero;
    let add_point = |g: &mut Array2<f64>, x: &Array1<f64>, weight: f64| {
        let u = gram.dot(x) + b;
        for i in 0..n {
            if u[i] > 0.0 {
                let d = importance[i] * (x[i] - u[i]);
                for (k, &xk) in x.iter().enumerate() {
                    if xk != 0.0 {
                        g[[i, k]] += weight * d * xk;
                    }
                }
            }
        }
    };
    for j in 0..n {
        let pj = prob(&[j]);
        covered += pj;
        let mut cuts: Vec<f64> = (0..n)
            .filter(|&i| gram[[i, j]] != 0.0)
            .map(|i| -b[i] / gram[[i, j]])
            .filter(|t| *t > 0.0 && *t < 1.0)
            .collect();
        cuts.extend([0.0, 1.0]);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            for &(node, wt) in &GL3 {
                let t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * node;
                let mut x = Array1::zeros(n);
                x[j] = t;
                add_point(&mut g, &x, pj * wt * 0.5 * (hi - lo));
            }
        }
    }
    let h = 1.0 / panels as f64;
    for j in 0..n {
        for k in (j + 1)..n {
            let pjk = prob(&[j, k]);
            covered += pjk;
            for a in 0..panels {
                for c in 0..panels {
                    for &(na, wa) in &GL3 {
                        for &(nc, wc) in &GL3 {
                            let mut x = Array1::zeros(n);
                            x[j] = h * (a as f64 + 0.5 + 0.5 * na);
                            x[k] = h * (c as f64 + 0.5 + 0.5 * nc);
                            add_point(&mut g, &x, pjk * wa * wc * 0.25 * h * h);
                        }
                    }
                }
            }
        }
    }
    let phi = -(&g + &g.t());
    Ok(GradientKernel {
        phi,
        estimator: KernelEstimator::Exact {
            covered_mass: covered,
            panels,
        },
    })
}

/// `∇_W` by direct backpropagation through `x' = ReLU(Wᵀ(Wx) + b)`, without
/// forming `Φ`: `−(Hᵀ Δ + W Δᵀ X)/B` with `H = XWᵀ`.
pub fn grad_w_direct(model: &WeightMatrix, x: ArrayView2<f64>, importance: &[f64]) -> Result<Array2<f64>> {
    let h = x.dot(&model.w.t());
    let mut u = h.dot(&model.w);
    u += &model.b;
    let mut delta = Array2::<f64>::zeros(u.dim());
    for ((d, &ui), (xi, imp)) in delta
        .iter_mut()
        .zip(u.iter())
        .zip(x.iter().zip(importance.iter().cycle()))
    {
        if ui > 0.0 {
            *d = imp * (xi - ui);
        }
    }
    let bsz = x.nrows() as f64;
    Ok(-(h.t().dot(&delta) + model.w.dot(&delta.t().dot(&x))) / bsz)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    /// `‖∇_W − WΦ‖_F / max(1, ‖∇_W‖_F)` on one shared batch.
    pub w_vs_m: f64,
    /// Relative error of `−(MΦ + ΦM)` against the central difference of
    /// `M(W − t∇_W)` at `t = ±h`.
    pub mdot: f64,
}

pub fn consistency_w_vs_m(model: &WeightMatrix, x: ArrayView2<f64>, importance: &[f64], h: f64) -> Result<Consistency> {
    let gw = grad_w_direct(model, x, importance)?;
    let (phi, _) = model::kernel_from_gram(&model.gram(), &model.b, x, importance);
    let wphi = model.w.dot(&phi);
    let w_vs_m = frobenius(&(&gw - &wphi)) / frobenius(&gw).max(1.0);

    let gram_at = |t: f64| {
        let w = &model.w - &(&gw * t);
        w.t().dot(&w)
    };
    let fd = (gram_at(h) - gram_at(-h)) / (2.0 * h);
    let m = model.gram();
    let predicted = -(m.dot(&phi) + phi.dot(&m));
    let mdot = frobenius(&(&fd - &predicted)) / frobenius(&predicted).max(f64::MIN_POSITIVE);
    Ok(Consistency { w_vs_m, mdot })
}

/// Source of `Φ` during integration.
pub enum KernelSource<'a> {
    Frozen(&'a Array2<f64>),
    /// Recompute `Φ(M)` on a fixed batch at every stage.
    Batch {
        x: ArrayView2<'a, f64>,
        bias: &'a Array1<f64>,
        importance: &'a [f64],
    },
    Function(&'a (dyn Fn(&Array2<f64>) -> Array2<f64> + Sync)),
}

impl KernelSource<'_> {
    pub fn phi(&self, m: &Array2<f64>) -> Array2<f64> {
        match self {
            KernelSource::Frozen(p) => (*p).clone(),
            KernelSource::Batch { x, bias, importance } => model::kernel_from_gram(m, bias, *x, importance).0,
            KernelSource::Function(f) => f(m),
        }
    }
}

fn rhs(m: &Array2<f64>, source: &KernelSource) -> Array2<f64> {
    let phi = source.phi(m);
    -(m.dot(&phi) + phi.dot(m))
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub m: Array2<f64>,
    pub t: f64,
    /// Steps whose result needed eigenvalue clipping.
    pub clipped_steps: usize,
    /// Most negative eigenvalue seen before clipping, relative to `λ_max`.
    pub worst_negative: f64,
}

impl FlowState {
    pub fn new(m: Array2<f64>) -> Self {
        FlowState {
            m,
            t: 0.0,
            clipped_steps: 0,
            worst_negative: 0.0,
        }
    }
}

/// One classical fourth-order Runge–Kutta step, symmetrized. With `psd_check`
/// the result is diagonalized and eigenvalues below `−1e-8·λ_max` are clipped
/// to zero.
pub fn flow_step(state: &FlowState, source: &KernelSource, h: f64, psd_check: bool) -> Result<FlowState> {
    if !(h > 0.0) {
        return Err(Error::validation(format!("step must be positive, got {h}")));
    }
    let m = &state.m;
    let k1 = rhs(m, source);
    let k2 = rhs(&(m + &(&k1 * (h / 2.0))), source);
    let k3 = rhs(&(m + &(&k2 * (h / 2.0))), source);
    let k4 = rhs(&(m + &(&k3 * h)), source);
    let incr = (k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0);
    let mut next = FlowState {
        m: symmetrize(m + &incr),
        t: state.t + h,
        clipped_steps: state.clipped_steps,
        worst_negative: state.worst_negative,
    };
    if next.m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("flow produced non-finite entries at t = {}", next.t)));
    }
    if psd_check {
        let pairs = spectral::eigh(&SymMatrix::new(next.m.clone())?)?;
        let lmax = pairs.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let lmin = pairs.values[0];
        next.worst_negative = next.worst_negative.min(lmin / lmax);
        if lmin < -1e-8 * lmax {
            let clipped = Array1::from_iter(pairs.values.iter().map(|v| v.max(0.0)));
            let v = &pairs.vectors;
            next.m = symmetrize((v * &clipped).dot(&v.t()));
            next.clipped_steps += 1;
        }
    }
    Ok(next)
}

/// Integrate `steps` steps and return every state including the start.
pub fn integrate(m0: Array2<f64>, source: &KernelSource, h: f64, steps: usize, psd_check: bool) -> Result<Vec<FlowState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(FlowState::new(m0));
    for _ in 0..steps {
        let next = flow_step(out.last().unwrap(), source, h, psd_check)?;
        out.push(next);
    }
    Ok(out)
}

/// `λ̇_e = −2 λ_e tr(E_e Φ E_e)/d_e` per nonzero group.
pub fn eigenvalue_drift(d: &SpectralDecomposition, phi: &Array2<f64>) -> Vec<f64> {
    d.groups
        .iter()
        .map(|g| -2.0 * g.lambda * (&g.projector * phi).sum() / g.multiplicity as f64)
        .collect()
}

/// Nonzero groups followed by the kernel, as `(λ, E)`.
fn all_groups(d: &SpectralDecomposition) -> Vec<(f64, &Array2<f64>)> {
    let mut v: Vec<(f64, &Array2<f64>)> = d.groups.iter().map(|g| (g.lambda, &g.projector)).collect();
    if let Some(k) = &d.zero_group {
        v.push((0.0, &k.projector));
    }
    v
}

#[derive(Clone, Debug)]
pub struct ProjectorDrift {
    /// `Ė_e` aligned with the nonzero groups.
    pub groups: Vec<Array2<f64>>,
    pub kernel: Option<Array2<f64>>,
    /// Group pairs closer than the gap floor; indices past the nonzero groups
    /// refer to the kernel.
    pub unreliable: Vec<(usize, usize)>,
}

/// Gap floor `1e-3 · λ_max` for the drift denominators.
pub fn gap_floor(d: &SpectralDecomposition) -> f64 {
    1e-3 * d.lambda_max()
}

fn close_pairs(groups: &[(f64, &Array2<f64>)], floor: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for e in 0..groups.len() {
        for f in (e + 1)..groups.len() {
            if (groups[e].0 - groups[f].0).abs() < floor {
                out.push((e, f));
            }
        }
    }
    out
}

/// `Ė_e = Σ_{f≠e} (λ_e+λ_f)/(λ_f−λ_e) (E_eΦE_f + E_fΦE_e)`, the kernel
/// included as a group with `λ = 0`.
pub fn projector_drift(d: &SpectralDecomposition, phi: &Array2<f64>) -> ProjectorDrift {
    let groups = all_groups(d);
    let sandwiches: Vec<Array2<f64>> = groups.iter().map(|(_, e)| phi.dot(*e)).collect();
    let drifts: Vec<Array2<f64>> = (0..groups.len())
        .map(|e| {
            let (le, ee) = groups[e];
            let mut acc = Array2::<f64>::zeros(phi.dim());
            for (f, &(lf, _)) in groups.iter().enumerate() {
                if f == e {
                    continue;
                }
                let coef = (le + lf) / (lf - le);
                let efe = ee.dot(&sandwiches[f]);
                acc.scaled_add(coef, &efe);
                acc.scaled_add(coef, &efe.t());
            }
            acc
        })
        .collect();
    let unreliable = close_pairs(&groups, gap_floor(d));
    let mut drifts = drifts;
    let kernel = d.zero_group.as_ref().map(|_| drifts.pop().expect("kernel drift"));
    ProjectorDrift {
        groups: drifts,
        kernel,
        unreliable,
    }
}

#[derive(Clone, Debug)]
pub struct MassTransport {
    /// `q̇_{i,e}`, features by nonzero groups.
    pub rates: Array2<f64>,
    pub kernel: Option<Array1<f64>>,
    pub unreliable: Vec<(usize, usize)>,
}

impl MassTransport {
    /// Largest `|Σ_e q̇_{i,e}|` over features, kernel included.
    pub fn conservation_residual(&self) -> f64 {
        let mut total = self.rates.sum_axis(Axis(1));
        if let Some(k) = &self.kernel {
            total += k;
        }
        total.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `q̇_{i,e} = Σ_{f≠e} 2(λ_e+λ_f)/(λ_f−λ_e) (E_eΦE_f)_ii`, the diagonal of
/// [`projector_drift`].
pub fn mass_transport(d: &SpectralDecomposition, phi: &Array2<f64>) -> MassTransport {
    let groups = all_groups(d);
    let n = phi.nrows();
    let sandwiches: Vec<Array2<f64>> = groups.iter().map(|(_, e)| phi.dot(*e)).collect();
    let mut rates = Array2::<f64>::zeros((n, groups.len()));
    for e in 0..groups.len() {
        let (le, ee) = groups[e];
        for (f, &(lf, _)) in groups.iter().enumerate() {
            if f == e {
                continue;
            }
            let coef = 2.0 * (le + lf) / (lf - le);
            for i in 0..n {
                let diag = ee.row(i).dot(&sandwiches[f].column(i));
                rates[[i, e]] += coef * diag;
            }
        }
    }
    let kernel = d.zero_group.as_ref().map(|_| rates.column(groups.len() - 1).to_owned());
    let cols = d.groups.len();
    MassTransport {
        rates: rates.slice(ndarray::s![.., ..cols]).to_owned(),
        kernel,
        unreliable: close_pairs(&groups, gap_floor(d)),
    }
}

/// `‖[E_e, Φ]‖_F` per nonzero group, then the kernel if present.
pub fn fixed_point_check(d: &SpectralDecomposition, phi: &Array2<f64>) -> Vec<f64> {
    all_groups(d)
        .iter()
        .map(|(_, e)| frobenius(&(e.dot(phi) - phi.dot(*e))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub group: usize,
    pub lambda: f64,
    pub multiplicity: usize,
    pub gap: f64,
    pub eigenvalue_formula: f64,
    pub eigenvalue_fd: f64,
    pub eigenvalue_rel_err: f64,
    pub projector_rel_err: f64,
}

/// Compare the eigenvalue and projector drift formulas with central
/// differences of the frozen-`Φ` flow at `t = ±h`.
///
/// A group is tracked by its position in the ascending spectrum, so the
/// comparison is only meaningful for groups separated from their neighbours.
pub fn validate_drifts(m: &Array2<f64>, phi: &Array2<f64>, h: f64, tol: Tolerances) -> Result<Vec<DriftCheck>> {
    let d = spectral::decompose(&SymMatrix::new(m.clone())?, tol)?;
    let source = KernelSource::Frozen(phi);
    let fwd = flow_step(&FlowState::new(m.clone()), &source, h, false)?.m;
    let neg = |x: &Array2<f64>| x.mapv(|v| -v);
    let neg_phi = neg(phi);
    let back = flow_step(&FlowState::new(m.clone()), &KernelSource::Frozen(&neg_phi), h, false)?.m;
    let pf = spectral::eigh(&SymMatrix::new(fwd)?)?;
    let pb = spectral::eigh(&SymMatrix::new(back)?)?;
    let lam_drift = eigenvalue_drift(&d, phi);
    let proj = projector_drift(&d, phi);

    let mut out = Vec::new();
    let mut start = d.kernel_dim();
    let lambdas: Vec<f64> = d.groups.iter().map(|g| g.lambda).collect();
    for (e, g) in d.groups.iter().enumerate() {
        let range: Vec<usize> = (start..start + g.multiplicity).collect();
        start += g.multiplicity;
        let mut gap = g.lambda.abs();
        for (f, l) in lambdas.iter().enumerate() {
            if f != e {
                gap = gap.min((g.lambda - l).abs());
            }
        }
        let mean = |p: &spectral::EigenPairs| range.iter().map(|&k| p.values[k]).sum::<f64>() / range.len() as f64;
        let fd = (mean(&pf) - mean(&pb)) / (2.0 * h);
        let proj_of = |p: &spectral::EigenPairs| {
            let v = p.vectors.select(Axis(1), &range);
            v.dot(&v.t())
        };
        let efd = (proj_of(&pf) - proj_of(&pb)) / (2.0 * h);
        let formula = &proj.groups[e];
        let denom = frobenius(formula).max(1e-12);
        out.push(DriftCheck {
            group: e,
            lambda: g.lambda,
            multiplicity: g.multiplicity,
            gap,
            eigenvalue_formula: lam_drift[e],
            eigenvalue_fd: fd,
            eigenvalue_rel_err: (fd - lam_drift[e]).abs() / lam_drift[e].abs().max(1e-12),
            projector_rel_err: frobenius(&(&efd - formula)) / denom,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeReduction {
    pub scheme: String,
    /// Coefficients of `M` in the adjacency basis.
    pub theta: Vec<f64>,
    /// Coefficients of `Φ` in the adjacency basis.
    pub phi: Vec<f64>,
    pub m_residual: f64,
    pub phi_residual: f64,
}

/// Expand `M` and `Φ` in the adjacency basis, refusing when either lies
/// outside the algebra by more than `tol` relative to its norm.
pub fn scheme_reduce(m: &Array2<f64>, phi: &Array2<f64>, spec: &SchemeSpec, tol: f64) -> Result<SchemeReduction> {
    if m.nrows() != spec.size || phi.nrows() != spec.size {
        return Err(Error::validation(format!(
            "matrices have size {} but the scheme has size {}",
            m.nrows(),
            spec.size
        )));
    }
    let (theta, m_residual) = spec.adjacency_coefficients(m);
    let (phic, phi_residual) = spec.adjacency_coefficients(phi);
    for (res, norm) in [(m_residual, frobenius(m)), (phi_residual, frobenius(phi))] {
        if res > tol * norm.max(1.0) {
            return Err(Error::NotInAlgebra {
                residual: res,
                tolerance: tol * norm.max(1.0),
            });
        }
    }
    Ok(SchemeReduction {
        scheme: spec.name(),
        theta,
        phi: phic,
        m_residual,
        phi_residual,
    })
}

/// `θ̇_u = −Σ_{r,s} θ_r φ_s (c^u_{rs} + c^u_{sr})`.
pub fn reduced_rhs(theta: &[f64], phi: &[f64], intersection: &[Array2<f64>]) -> Vec<f64> {
    intersection
        .iter()
        .map(|c| {
            let mut acc = 0.0;
            for (r, tr) in theta.iter().enumerate() {
                for (s, ps) in phi.iter().enumerate() {
                    acc += tr * ps * (c[[r, s]] + c[[s, r]]);
                }
            }
            -acc
        })
        .collect()
}

/// RK4 integration of the reduced coefficient ODE with `φ = phi_of(θ)`.
pub fn integrate_reduced<F: Fn(&[f64]) -> Vec<f64>>(
    theta0: &[f64],
    phi_of: F,
    spec: &SchemeSpec,
    h: f64,
    steps: usize,
) -> Vec<Vec<f64>> {
    let c = spec.intersection_numbers();
    let f = |t: &[f64]| reduced_rhs(t, &phi_of(t), &c);
    let axpy = |a: &[f64], k: &[f64], s: f64| a.iter().zip(k).map(|(x, y)| x + s * y).collect::<Vec<f64>>();
    let mut out = vec![theta0.to_vec()];
    for _ in 0..steps {
        let t = out.last().unwrap();
        let k1 = f(t);
        let k2 = f(&axpy(t, &k1, h / 2.0));
        let k3 = f(&axpy(t, &k2, h / 2.0));
        let k4 = f(&axpy(t, &k3, h));
        let next = (0..t.len())
            .map(|u| t[u] + h / 6.0 * (k1[u] + 2.0 * k2[u] + 2.0 * k3[u] + k4[u]))
            .collect();
        out.push(next);
    }
    out
}

/// Matrix `Σ θ_r A_r`.
pub fn from_coefficients(theta: &[f64], spec: &SchemeSpec) -> Array2<f64> {
    let mut out = Array2::zeros((spec.size, spec.size));
    for (t, a) in theta.iter().zip(&spec.adjacency) {
        out.scaled_add(*t, a);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub t: f64,
    /// `(λ_e, d_e)` of the nonzero groups.
    pub groups: Vec<(f64, usize)>,
    /// `q_{i,e} = (E_e)_ii`, one row per feature.
    pub masses: Vec<Vec<f64>>,
    pub commutators: Vec<f64>,
}

/// Summary of one flow state for trajectory export.
pub fn flow_point(state: &FlowState, phi: &Array2<f64>, tol: Tolerances) -> Result<FlowPoint> {
    let d = spectral::decompose(&SymMatrix::new(state.m.clone())?, tol)?;
    let n = state.m.nrows();
    Ok(FlowPoint {
        t: state.t,
        groups: d.groups.iter().map(|g| (g.lambda, g.multiplicity)).collect(),
        masses: (0..n)
            .map(|i| d.groups.iter().map(|g| g.projector[[i, i]]).collect())
            .collect(),
        commutators: fixed_point_check(&d, phi),
    })
}
