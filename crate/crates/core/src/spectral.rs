//! Symmetric eigendecomposition, eigenvalue grouping, functional calculus and
//! the lift of Gram projectors to the activation space.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sweep count before the Jacobi iteration gives up.
const MAX_SWEEPS: usize = 100;

/// A real symmetric matrix with finite entries.
///
/// Construction averages the input with its transpose after validation, so the
/// stored entries are exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    a: Array2<f64>,
}

impl SymMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c {
            return Err(Error::validation(format!("matrix is {r}x{c}, expected square")));
        }
        if r == 0 {
            return Err(Error::validation("matrix has dimension 0"));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("matrix has non-finite entries"));
        }
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut worst = 0.0f64;
        for i in 0..r {
            for j in (i + 1)..r {
                worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
            }
        }
        if worst > 1e-12 * scale {
            return Err(Error::validation(format!(
                "matrix is not symmetric: max asymmetry {worst:.3e} vs scale {scale:.3e}"
            )));
        }
        Ok(SymMatrix { a: symmetrize(a) })
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix { a: Array2::eye(n) }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn into_array(self) -> Array2<f64> {
        self.a
    }

    pub fn frobenius(&self) -> f64 {
        frobenius(&self.a)
    }
}

/// Eigenpairs in ascending eigenvalue order; eigenvectors are the columns of
/// `vectors`.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

/// Grouping and kernel thresholds, both relative to `max(1, max |λ|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub group: f64,
    pub zero: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { group: 1e-6, zero: 1e-9 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.group > 0.0 && self.group.is_finite()) {
            return Err(Error::validation(format!("grouping tolerance must be positive, got {}", self.group)));
        }
        if !(self.zero > 0.0 && self.zero.is_finite()) {
            return Err(Error::validation(format!("zero tolerance must be positive, got {}", self.zero)));
        }
        Ok(())
    }
}

/// One distinct eigenvalue with its orthogonal projector.
#[derive(Clone, Debug)]
pub struct SpectralGroup {
    pub lambda: f64,
    pub multiplicity: usize,
    pub projector: Array2<f64>,
    pub(crate) basis: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct KernelGroup {
    pub multiplicity: usize,
    pub projector: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub dim: usize,
    /// Nonzero groups in ascending eigenvalue order.
    pub groups: Vec<SpectralGroup>,
    pub zero_group: Option<KernelGroup>,
    /// Absolute thresholds actually applied.
    pub zero_tol: f64,
    pub group_tol: f64,
}

impl SpectralDecomposition {
    pub fn rank(&self) -> usize {
        self.groups.iter().map(|g| g.multiplicity).sum()
    }

    pub fn kernel_dim(&self) -> usize {
        self.zero_group.as_ref().map_or(0, |k| k.multiplicity)
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for g in &self.groups {
            out.scaled_add(g.lambda, &g.projector);
        }
        out
    }

    /// Eigenvalues with multiplicity, kernel counted as zeros, ascending.
    pub fn eigenvalues_with_multiplicity(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        out.extend(std::iter::repeat(0.0).take(self.kernel_dim()));
        for g in &self.groups {
            out.extend(std::iter::repeat(g.lambda).take(g.multiplicity));
        }
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn lambda_max(&self) -> f64 {
        self.groups.iter().fold(0.0f64, |m, g| m.max(g.lambda.abs()))
    }

    /// Index of the group whose eigenvalue lies closest to `lambda`.
    pub fn nearest_group(&self, lambda: f64) -> Option<usize> {
        self.groups
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.lambda - lambda).abs().total_cmp(&(b.1.lambda - lambda).abs()))
            .map(|(i, _)| i)
    }
}

/// Deterministic cyclic Jacobi eigensolver.
///
/// Rotations sweep the strict upper triangle row by row. A rotation is skipped
/// when the off-diagonal entry is negligible relative to its diagonal pair,
/// and the iteration stops after the first sweep with no rotation.
pub fn eigh(a: &SymMatrix) -> Result<EigenPairs> {
    let n = a.dim();
    let mut m: Vec<f64> = a.as_array().iter().copied().collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let eps = f64::EPSILON;
    let mut converged = n == 1;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                if apq.abs() <= eps * (app * aqq).abs().sqrt() || apq.abs() < f64::MIN_POSITIVE {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Domain(format!("Jacobi iteration did not converge in {MAX_SWEEPS} sweeps")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let mut lead = 0usize;
        for k in 1..n {
            if v[k * n + src].abs() > v[lead * n + src].abs() {
                lead = k;
            }
        }
        let sign = if v[lead * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors[[k, col]] = sign * v[k * n + src];
        }
    }
    Ok(EigenPairs { values, vectors })
}

/// Merge numerically equal eigenvalues into distinct groups and split off the
/// kernel.
pub fn group_eigenvalues(pairs: &EigenPairs, tol: Tolerances) -> Result<SpectralDecomposition> {
    tol.validate()?;
    let n = pairs.vectors.nrows();
    let scale = pairs.values.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let zero_tol = tol.zero * scale;
    let group_tol = tol.group * scale;

    let (kernel, nonzero): (Vec<usize>, Vec<usize>) =
        (0..pairs.values.len()).partition(|&k| pairs.values[k].abs() <= zero_tol);

    let mut runs: Vec<Vec<usize>> = Vec::new();
    for &k in &nonzero {
        match runs.last_mut() {
            Some(run) if pairs.values[k] - pairs.values[*run.last().unwrap()] <= group_tol => run.push(k),
            _ => runs.push(vec![k]),
        }
    }

    let groups = runs
        .into_iter()
        .map(|run| {
            let basis = select_columns(&pairs.vectors, &run);
            let lambda = run.iter().map(|&k| pairs.values[k]).sum::<f64>() / run.len() as f64;
            SpectralGroup {
                lambda,
                multiplicity: run.len(),
                projector: gram_of_columns(&basis),
                basis,
            }
        })
        .collect();
    let zero_group = (!kernel.is_empty()).then(|| {
        let basis = select_columns(&pairs.vectors, &kernel);
        KernelGroup {
            multiplicity: kernel.len(),
            projector: gram_of_columns(&basis),
        }
    });
    Ok(SpectralDecomposition {
        dim: n,
        groups,
        zero_group,
        zero_tol,
        group_tol,
    })
}

/// `eigh` followed by `group_eigenvalues`.
pub fn decompose(a: &SymMatrix, tol: Tolerances) -> Result<SpectralDecomposition> {
    group_eigenvalues(&eigh(a)?, tol)
}

/// `Σ_e h(λ_e) E_e` over the nonzero groups; the kernel maps to zero.
pub fn spectral_fn<H: Fn(f64) -> f64>(d: &SpectralDecomposition, h: H) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((d.dim, d.dim));
    for g in &d.groups {
        let c = h(g.lambda);
        if !c.is_finite() {
            return Err(Error::Domain(format!("spectral function undefined at eigenvalue {}", g.lambda)));
        }
        out.scaled_add(c, &g.projector);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct LiftedGroup {
    pub lambda: f64,
    pub rank: usize,
    /// Projector on the activation space, `λ⁻¹ W E Wᵀ` for an exact group.
    pub projector: Array2<f64>,
    /// Index of the source group in the Gram decomposition.
    pub gram_group: usize,
    /// Diagonal of the source Gram projector `E`.
    pub gram_diag: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct LiftedProjectors {
    pub dim: usize,
    /// Absolute kernel threshold inherited from the Gram decomposition.
    pub zero_tol: f64,
    pub groups: Vec<LiftedGroup>,
}

impl LiftedProjectors {
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for g in &self.groups {
            out.scaled_add(g.lambda, &g.projector);
        }
        out
    }

    pub fn rank(&self) -> usize {
        self.groups.iter().map(|g| g.rank).sum()
    }

    /// Frame functional calculus `Σ_e h(λ_e) P_e`.
    pub fn apply<H: Fn(f64) -> f64>(&self, h: H) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for g in &self.groups {
            let c = h(g.lambda);
            if !c.is_finite() {
                return Err(Error::Domain(format!("spectral function undefined at eigenvalue {}", g.lambda)));
            }
            out.scaled_add(c, &g.projector);
        }
        Ok(out)
    }
}

/// Lift the positive Gram groups of `w` to activation-space projectors.
pub fn lift_projectors(w: ArrayView2<f64>, gram: &SpectralDecomposition) -> Result<LiftedProjectors> {
    if w.ncols() != gram.dim {
        return Err(Error::validation(format!(
            "weights have {} columns but the Gram decomposition has dimension {}",
            w.ncols(),
            gram.dim
        )));
    }
    let groups = gram
        .groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.lambda > gram.zero_tol)
        .map(|(idx, g)| {
            // Each lifted column has norm² equal to its own eigenvalue, which
            // differs from the group mean when nearby eigenvalues were merged.
            let mut basis = w.dot(&g.basis);
            for mut col in basis.columns_mut() {
                let norm = col.dot(&col).sqrt();
                col /= norm;
            }
            LiftedGroup {
                lambda: g.lambda,
                rank: g.multiplicity,
                projector: gram_of_columns(&basis),
                gram_group: idx,
                gram_diag: g.projector.diag().to_owned(),
            }
        })
        .collect();
    Ok(LiftedProjectors {
        dim: w.nrows(),
        zero_tol: gram.zero_tol,
        groups,
    })
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize(a: Array2<f64>) -> Array2<f64> {
    let t = a.t().to_owned();
    (a + t) * 0.5
}

/// `B Bᵀ`, exactly symmetric.
pub(crate) fn gram_of_columns(b: &Array2<f64>) -> Array2<f64> {
    symmetrize(b.dot(&b.t()))
}

fn select_columns(v: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    v.select(Axis(1), cols)
}

/// Numerical rank of a rectangular matrix: the number of eigenvalues of `AᵀA`
/// above the relative zero threshold.
pub fn numerical_rank(a: ArrayView2<f64>, tol: Tolerances) -> Result<usize> {
    let small = if a.nrows() <= a.ncols() { a.dot(&a.t()) } else { a.t().dot(&a) };
    Ok(decompose(&SymMatrix::new(small)?, tol)?.rank())
}
