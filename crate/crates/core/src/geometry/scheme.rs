//! Simplex and cyclic association schemes: adjacency matrices, strata,
//! character tables and intersection numbers.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{frobenius, SymMatrix};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeKind {
    Simplex,
    Cyclic,
}

#[derive(Clone, Debug)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub size: usize,
    /// `A_0 = I, A_1, …, A_s`.
    pub adjacency: Vec<Array2<f64>>,
    /// `S_0 = J/p, S_1, …, S_s`.
    pub strata: Vec<Array2<f64>>,
    pub strata_dims: Vec<usize>,
    pub valencies: Vec<usize>,
    /// `C(i, e)`: eigenvalue of `A_i` on stratum `e`.
    pub c: Array2<f64>,
    /// `D(e, i)`: coefficient of `A_i` in `S_e`.
    pub d: Array2<f64>,
}

impl SchemeSpec {
    /// The scheme of the regular simplex on `p` points: `A_1 = J − I`.
    pub fn simplex(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::validation(format!("simplex scheme needs p >= 2, got {p}")));
        }
        let eye = Array2::<f64>::eye(p);
        let j = Array2::from_elem((p, p), 1.0);
        let s0 = &j / p as f64;
        let s1 = &eye - &s0;
        let a1 = &j - &eye;
        Ok(Self::assemble(SchemeKind::Simplex, p, vec![eye, a1], vec![s0, s1]))
    }

    /// The scheme of the regular `p`-gon: `A_k` joins points at cyclic distance `k`.
    pub fn cyclic(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::validation(format!("cyclic scheme needs p >= 2, got {p}")));
        }
        let half = p / 2;
        let adjacency = (0..=half)
            .map(|k| {
                Array2::from_shape_fn((p, p), |(i, j)| {
                    let dist = (i + p - j) % p;
                    if dist == k || dist == (p - k) % p {
                        1.0
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        // Real Fourier modes with each conjugate pair merged into one stratum.
        let strata = (0..=half)
            .map(|e| {
                Array2::from_shape_fn((p, p), |(i, j)| {
                    let phase = 2.0 * PI * (e * ((i + p - j) % p)) as f64 / p as f64;
                    let paired = e != 0 && 2 * e != p;
                    if paired {
                        2.0 * phase.cos() / p as f64
                    } else {
                        phase.cos() / p as f64
                    }
                })
            })
            .collect();
        Ok(Self::assemble(SchemeKind::Cyclic, p, adjacency, strata))
    }

    pub fn by_name(name: &str, p: usize) -> Result<Self> {
        match name {
            "simplex" => Self::simplex(p),
            "cyclic" => Self::cyclic(p),
            other => Err(Error::validation(format!("unsupported scheme '{other}'"))),
        }
    }

    fn assemble(kind: SchemeKind, p: usize, adjacency: Vec<Array2<f64>>, strata: Vec<Array2<f64>>) -> Self {
        let s = adjacency.len();
        let strata_dims: Vec<usize> = strata.iter().map(|e| e.diag().sum().round() as usize).collect();
        let valencies: Vec<usize> = adjacency.iter().map(|a| a.row(0).sum().round() as usize).collect();
        let c = Array2::from_shape_fn((s, s), |(i, e)| {
            (&adjacency[i] * &strata[e]).sum() / strata_dims[e] as f64
        });
        let d = Array2::from_shape_fn((s, s), |(e, i)| {
            strata_dims[e] as f64 * c[[i, e]] / (p as f64 * valencies[i] as f64)
        });
        SchemeSpec {
            kind,
            size: p,
            adjacency,
            strata,
            strata_dims,
            valencies,
            c,
            d,
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            SchemeKind::Simplex => format!("simplex-{}", self.size),
            SchemeKind::Cyclic => format!("cyclic-{}", self.size),
        }
    }

    pub fn classes(&self) -> usize {
        self.adjacency.len()
    }

    /// Largest violations of `C·D = I` and of the four orthogonality relations
    /// between characters, valencies and stratum dimensions.
    pub fn character_residuals(&self) -> [f64; 5] {
        let s = self.classes();
        let omega = self.size as f64;
        let a = |i: usize| self.valencies[i] as f64;
        let dd = |e: usize| self.strata_dims[e] as f64;
        let delta = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
        let mut r = [0.0f64; 5];
        let cd = self.c.dot(&self.d);
        for i in 0..s {
            for j in 0..s {
                r[0] = r[0].max((cd[[i, j]] - delta(i, j)).abs());
                let ii: f64 = (0..s).map(|e| self.c[[i, e]] * self.c[[j, e]] * dd(e)).sum();
                r[1] = r[1].max((ii - delta(i, j) * a(i) * omega).abs());
                let iii: f64 = (0..s).map(|k| self.c[[k, i]] * self.c[[k, j]] / a(k)).sum();
                r[2] = r[2].max((iii - delta(i, j) * omega / dd(i)).abs());
                let iv: f64 = (0..s).map(|k| self.d[[i, k]] * self.d[[j, k]] * a(k)).sum();
                r[3] = r[3].max((iv - delta(i, j) * dd(i) / omega).abs());
                let v: f64 = (0..s).map(|e| self.d[[e, i]] * self.d[[e, j]] / dd(e)).sum();
                r[4] = r[4].max((v - delta(i, j) / (omega * a(i))).abs());
            }
        }
        r
    }

    /// Largest violation of `A_i = Σ_e C(i,e) S_e`, `S_e = Σ_i D(e,i) A_i`,
    /// idempotence and `Σ S_e = I`.
    pub fn structure_residual(&self) -> f64 {
        let s = self.classes();
        let p = self.size;
        let mut worst = 0.0f64;
        let mut sum = Array2::<f64>::zeros((p, p));
        for i in 0..s {
            let mut a = Array2::<f64>::zeros((p, p));
            let mut e_mat = Array2::<f64>::zeros((p, p));
            for e in 0..s {
                a.scaled_add(self.c[[i, e]], &self.strata[e]);
                e_mat.scaled_add(self.d[[i, e]], &self.adjacency[e]);
            }
            worst = worst.max(frobenius(&(&a - &self.adjacency[i])));
            worst = worst.max(frobenius(&(&e_mat - &self.strata[i])));
            let sq = self.strata[i].dot(&self.strata[i]);
            worst = worst.max(frobenius(&(&sq - &self.strata[i])));
            sum += &self.strata[i];
        }
        worst.max(frobenius(&(&sum - &Array2::<f64>::eye(p))))
    }

    /// `c^u_{rs}` with `A_r A_s = Σ_u c^u_{rs} A_u`, indexed `[u][r][s]`.
    pub fn intersection_numbers(&self) -> Vec<Array2<f64>> {
        let s = self.classes();
        let norms: Vec<f64> = self.adjacency.iter().map(|a| (a * a).sum()).collect();
        let mut out = vec![Array2::zeros((s, s)); s];
        for r in 0..s {
            for t in 0..s {
                let prod = self.adjacency[r].dot(&self.adjacency[t]);
                for u in 0..s {
                    out[u][[r, t]] = (&prod * &self.adjacency[u]).sum() / norms[u];
                }
            }
        }
        out
    }

    /// Coefficients of `m` in the adjacency basis and the residual of that
    /// projection.
    pub fn adjacency_coefficients(&self, m: &Array2<f64>) -> (Vec<f64>, f64) {
        let theta: Vec<f64> = self
            .adjacency
            .iter()
            .map(|a| (a * m).sum() / (a * a).sum())
            .collect();
        let mut recon = Array2::<f64>::zeros(m.dim());
        for (t, a) in theta.iter().zip(&self.adjacency) {
            recon.scaled_add(*t, a);
        }
        (theta, frobenius(&(m - &recon)))
    }

    /// Stratum eigenvalues `θ_e = tr(S_e M)/d_e` and the residual
    /// `‖M − Σ θ_e S_e‖_F`.
    pub fn stratum_coefficients(&self, m: &Array2<f64>) -> (Vec<f64>, f64) {
        let theta: Vec<f64> = self
            .strata
            .iter()
            .zip(&self.strata_dims)
            .map(|(s, &d)| (s * m).sum() / d as f64)
            .collect();
        let mut recon = Array2::<f64>::zeros(m.dim());
        for (t, s) in theta.iter().zip(&self.strata) {
            recon.scaled_add(*t, s);
        }
        (theta, frobenius(&(m - &recon)))
    }
}

/// Identification tolerance tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    /// `1e-6 · ‖M_k‖_F`, for constructed fixtures.
    Exact,
    /// `0.05 · ‖M_k‖_F`, for trained weights.
    Trained,
}

impl Tier {
    pub fn relative(self) -> f64 {
        match self {
            Tier::Exact => 1e-6,
            Tier::Trained => 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeMatch {
    pub scheme: String,
    pub matches: bool,
    pub residual: f64,
    pub relative_residual: f64,
    /// Eigenvalue of the cluster Gram on each stratum.
    pub theta: Vec<f64>,
    /// Cluster-internal ordering under which the residual was measured.
    pub ordering: Vec<usize>,
}

fn permuted(m: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(m.dim(), |(i, j)| m[[order[i], order[j]]])
}

fn permutations_fixing_first(p: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 1..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                rec(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut used = vec![false; p];
    used[0] = true;
    rec(&mut vec![0], &mut used, &mut out);
    out
}

/// Order points by walking to the most aligned unvisited neighbour.
fn neighbour_chain(m: &Array2<f64>) -> Vec<usize> {
    let p = m.nrows();
    let mut order = vec![0];
    let mut used = vec![false; p];
    used[0] = true;
    while order.len() < p {
        let last = *order.last().unwrap();
        let next = (0..p)
            .filter(|&j| !used[j])
            .max_by(|&a, &b| m[[last, a]].total_cmp(&m[[last, b]]).then(b.cmp(&a)))
            .unwrap();
        used[next] = true;
        order.push(next);
    }
    order
}

/// Test whether the cluster Gram lies in the Bose–Mesner algebra of `spec`
/// under some relabeling of the cluster.
///
/// Simplex schemes are invariant under every relabeling. Cyclic schemes search
/// all orderings up to rotation for `p ≤ 6` and otherwise use the ordering
/// obtained by walking nearest neighbours.
pub fn scheme_identify(mk: &SymMatrix, spec: &SchemeSpec, tier: Tier) -> Result<SchemeMatch> {
    let m = mk.as_array();
    let p = m.nrows();
    if p != spec.size {
        return Err(Error::validation(format!(
            "cluster has {p} features but scheme {} has size {}",
            spec.name(),
            spec.size
        )));
    }
    let candidates = match spec.kind {
        SchemeKind::Simplex => vec![(0..p).collect::<Vec<_>>()],
        SchemeKind::Cyclic if p <= 6 => permutations_fixing_first(p),
        SchemeKind::Cyclic => vec![neighbour_chain(m)],
    };
    let scale = frobenius(m);
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    for order in candidates {
        let (theta, residual) = spec.stratum_coefficients(&permuted(m, &order));
        if best.as_ref().is_none_or(|b| residual < b.0) {
            best = Some((residual, theta, order));
        }
    }
    let (residual, theta, ordering) = best.expect("at least one ordering");
    let relative_residual = if scale > 0.0 { residual / scale } else { 0.0 };
    Ok(SchemeMatch {
        scheme: spec.name(),
        matches: relative_residual <= tier.relative(),
        residual,
        relative_residual,
        theta,
        ordering,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexCheck {
    pub is_simplex: bool,
    /// Common eigenvalue on `1⊥`.
    pub lambda: f64,
    /// `|C| / dim V` scaled by the mean squared norm.
    pub expected_lambda: f64,
    /// `‖M_k − λ S_1‖_F / ‖M_k‖_F`.
    pub relative_residual: f64,
}

/// Check for exactly two eigenspaces, kernel `span(1)` and eigenvalue `λ` on
/// `1⊥`, with `λ = |C|/dim V` for unit norms.
pub fn simplex_identify(mk: &SymMatrix, dim_v: usize, tier: Tier) -> Result<SimplexCheck> {
    let m = mk.as_array();
    let p = m.nrows();
    if p < 2 {
        return Ok(SimplexCheck {
            is_simplex: false,
            lambda: m[[0, 0]],
            expected_lambda: f64::NAN,
            relative_residual: f64::NAN,
        });
    }
    let spec = SchemeSpec::simplex(p)?;
    let lambda = m.diag().sum() / (p - 1) as f64;
    let scale = frobenius(m);
    let residual = frobenius(&(m - &(&spec.strata[1] * lambda)));
    let relative_residual = if scale > 0.0 { residual / scale } else { 0.0 };
    let mean_norm2 = m.diag().sum() / p as f64;
    let expected_lambda = p as f64 / dim_v.max(1) as f64 * mean_norm2;
    let tol = tier.relative();
    Ok(SimplexCheck {
        is_simplex: dim_v == p - 1
            && relative_residual <= tol
            && (lambda - expected_lambda).abs() <= tol * lambda.abs().max(1.0),
        lambda,
        expected_lambda,
        relative_residual,
    })
}
