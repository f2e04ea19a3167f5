mod common;

use common::{gaussian, max_abs, symmetric};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use spectra::geometry::frames;
use spectra::spectral::{self, frobenius, EigenPairs, SymMatrix, Tolerances};

fn sym(a: Array2<f64>) -> SymMatrix {
    SymMatrix::new(a).unwrap()
}

fn residual(a: &Array2<f64>, p: &EigenPairs) -> f64 {
    let lambda = Array2::from_diag(&Array1::from(p.values.clone()));
    frobenius(&(a.dot(&p.vectors) - p.vectors.dot(&lambda)))
}

/// Eigenpairs by power iteration with Hotelling deflation on a shifted copy.
fn power_iteration_oracle(a: &Array2<f64>) -> Vec<(f64, Array1<f64>)> {
    let n = a.nrows();
    let shift = a.iter().map(|v| v.abs()).sum::<f64>();
    let mut b = a + &(Array2::<f64>::eye(n) * shift);
    let mut out = Vec::new();
    for k in 0..n {
        let mut x = Array1::from_shape_fn(n, |i| 1.0 + (i * 7 + k) as f64 * 0.1);
        let mut lambda = 0.0;
        for _ in 0..200_000 {
            let y = b.dot(&x);
            let norm = y.dot(&y).sqrt();
            let next = y / norm;
            let diff = (&next - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            x = next;
            lambda = x.dot(&b.dot(&x));
            if diff < 1e-14 {
                break;
            }
        }
        let outer = Array2::from_shape_fn((n, n), |(i, j)| x[i] * x[j]);
        b = b - &(outer * lambda);
        out.push((lambda - shift, x));
    }
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    out
}

#[test]
fn eigh_identity() {
    let p = spectral::eigh(&SymMatrix::identity(3)).unwrap();
    assert_eq!(p.values, vec![1.0, 1.0, 1.0]);
}

#[test]
fn eigh_diagonal_frame_of_triangle_digon() {
    let p = spectral::eigh(&sym(Array2::from_diag(&array![1.5, 1.5, 2.0]))).unwrap();
    assert_eq!(p.values, vec![1.5, 1.5, 2.0]);
}

#[test]
fn eigh_matches_deflated_power_iteration() {
    let a = symmetric(6, 11);
    let p = spectral::eigh(&sym(a.clone())).unwrap();
    for (k, (lambda, v)) in power_iteration_oracle(&a).into_iter().enumerate() {
        assert!((p.values[k] - lambda).abs() < 1e-8, "eigenvalue {k}: {} vs {lambda}", p.values[k]);
        let overlap = p.vectors.column(k).dot(&v).abs();
        assert!((overlap - 1.0).abs() < 1e-8, "eigenvector {k} overlap {overlap}");
    }
}

#[test]
fn eigh_sign_convention() {
    let p = spectral::eigh(&sym(symmetric(5, 3))).unwrap();
    for col in p.vectors.columns() {
        let lead = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
        assert!(lead > 0.0);
    }
}

#[test]
fn eigh_is_bit_reproducible() {
    let a = sym(symmetric(9, 5));
    let p = spectral::eigh(&a).unwrap();
    let q = spectral::eigh(&a).unwrap();
    assert_eq!(p.values, q.values);
    assert_eq!(p.vectors, q.vectors);
}

#[test]
fn rejects_asymmetric_and_non_finite() {
    assert!(SymMatrix::new(array![[1.0, 2.0], [0.0, 1.0]]).is_err());
    assert!(SymMatrix::new(array![[f64::NAN, 0.0], [0.0, 1.0]]).is_err());
    assert!(SymMatrix::new(Array2::zeros((2, 3))).is_err());
}

#[test]
fn grouping_merges_near_degenerate_values() {
    let a = sym(Array2::from_diag(&array![1.0, 1.0 + 1e-12, 5.0]));
    let d = spectral::decompose(&a, Tolerances { group: 1e-8, zero: 1e-9 }).unwrap();
    let mult: Vec<usize> = d.groups.iter().map(|g| g.multiplicity).collect();
    assert_eq!(mult, vec![2, 1]);
    assert!((d.groups[0].lambda - (1.0 + 0.5e-12)).abs() < 1e-15);
}

#[test]
fn grouping_of_triangle_digon_frame() {
    let d = spectral::decompose(&sym(Array2::from_diag(&array![1.5, 1.5, 2.0])), Tolerances::default()).unwrap();
    let g: Vec<(f64, usize)> = d.groups.iter().map(|g| (g.lambda, g.multiplicity)).collect();
    assert_eq!(g, vec![(1.5, 2), (2.0, 1)]);
    assert!(d.zero_group.is_none());
}

#[test]
fn grouping_of_triangle_gram() {
    let w = frames::triangle();
    let d = spectral::decompose(&sym(w.t().dot(&w)), Tolerances::default()).unwrap();
    assert_eq!(d.kernel_dim(), 1);
    assert_eq!(d.groups.len(), 1);
    assert_eq!(d.groups[0].multiplicity, 2);
    assert!((d.groups[0].lambda - 1.5).abs() < 1e-12);
}

#[test]
fn spectral_fn_examples() {
    let a = Array2::from_diag(&array![1.5, 1.5, 2.0]);
    let d = spectral::decompose(&sym(a.clone()), Tolerances::default()).unwrap();
    assert!(max_abs(&(spectral::spectral_fn(&d, |l| l).unwrap() - &a)) < 1e-15);
    let inv = spectral::spectral_fn(&d, |l| 1.0 / l).unwrap();
    assert!(max_abs(&(inv - Array2::from_diag(&array![2.0 / 3.0, 2.0 / 3.0, 0.5]))) < 1e-15);

    let g = gaussian(5, 5, 2);
    let psd = g.dot(&g.t());
    let d = spectral::decompose(&sym(psd.clone()), Tolerances::default()).unwrap();
    let sq = spectral::spectral_fn(&d, |l| l * l).unwrap();
    assert!(frobenius(&(sq - psd.dot(&psd))) <= 1e-10 * frobenius(&psd).powi(2).max(1.0));
}

#[test]
fn spectral_fn_rejects_undefined_values() {
    let d = spectral::decompose(&sym(Array2::from_diag(&array![1.0, 2.0])), Tolerances::default()).unwrap();
    assert!(spectral::spectral_fn(&d, |l| if l > 1.5 { f64::NAN } else { l }).is_err());
}

#[test]
fn pseudoinverse_zeroes_the_kernel() {
    let d = spectral::decompose(&sym(Array2::from_diag(&array![0.0, 4.0])), Tolerances::default()).unwrap();
    let p = spectral::spectral_fn(&d, |l| 1.0 / l).unwrap();
    assert_eq!(p, Array2::from_diag(&array![0.0, 0.25]));
}

#[test]
fn lift_of_triangle_digon() {
    let w = frames::triangle_digon();
    let d = spectral::decompose(&sym(w.t().dot(&w)), Tolerances::default()).unwrap();
    let lifted = spectral::lift_projectors(w.view(), &d).unwrap();
    assert_eq!(lifted.groups.len(), 2);
    let tri = &lifted.groups[0];
    let dig = &lifted.groups[1];
    assert!((tri.lambda - 1.5).abs() < 1e-12 && (dig.lambda - 2.0).abs() < 1e-12);
    assert!(max_abs(&(&tri.projector - &Array2::from_diag(&array![1.0, 1.0, 0.0]))) < 1e-12);
    assert!(max_abs(&(&dig.projector - &Array2::from_diag(&array![0.0, 0.0, 1.0]))) < 1e-12);
}

#[test]
fn lift_of_identity_is_the_gram_projector() {
    let w = Array2::<f64>::eye(3) * array![[1.0], [2.0], [2.0]];
    let d = spectral::decompose(&sym(w.t().dot(&w)), Tolerances::default()).unwrap();
    let lifted = spectral::lift_projectors(w.view(), &d).unwrap();
    for (g, e) in lifted.groups.iter().zip(&d.groups) {
        assert!(max_abs(&(&g.projector - &e.projector)) < 1e-14);
    }
}

#[test]
fn lift_reconstructs_frame_operator() {
    let w = gaussian(4, 7, 9);
    let d = spectral::decompose(&sym(w.t().dot(&w)), Tolerances::default()).unwrap();
    let lifted = spectral::lift_projectors(w.view(), &d).unwrap();
    assert!(frobenius(&(lifted.reconstruct() - w.dot(&w.t()))) <= 1e-10);
}

#[test]
fn numerical_rank_counts_the_smaller_side() {
    let w = gaussian(3, 2, 4).dot(&gaussian(2, 6, 5));
    assert_eq!(spectral::numerical_rank(w.view(), Tolerances::default()).unwrap(), 2);
    assert_eq!(spectral::numerical_rank(Array2::<f64>::zeros((3, 4)).view(), Tolerances::default()).unwrap(), 0);
}

fn matrix(max: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-2.0f64..2.0, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn square(max: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max).prop_flat_map(|n| {
        prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
    })
}

/// Random matrices with a planted rank deficiency.
fn low_rank(max: usize) -> impl Strategy<Value = Array2<f64>> {
    (matrix(max), 1..=max).prop_map(|(a, k)| {
        let k = k.min(a.ncols());
        let right = Array2::from_shape_fn((a.ncols(), a.ncols()), |(i, j)| if i == j && i < k { 1.0 } else { 0.0 });
        a.dot(&right)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigh_postconditions(a in square(8)) {
        let a = spectral::symmetrize(a);
        let p = spectral::eigh(&sym(a.clone())).unwrap();
        let scale = frobenius(&a).max(1.0);
        prop_assert!(residual(&a, &p) <= 1e-10 * scale);
        let n = a.nrows();
        prop_assert!(max_abs(&(p.vectors.t().dot(&p.vectors) - Array2::<f64>::eye(n))) <= 1e-10);
        prop_assert!(p.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn decomposition_is_an_orthogonal_resolution(a in matrix(7)) {
        let a = spectral::symmetrize(a.t().dot(&a));
        let d = spectral::decompose(&sym(a.clone()), Tolerances::default()).unwrap();
        let n = a.nrows();
        let tol = 1e-10 * frobenius(&a).max(1.0);
        prop_assert!(frobenius(&(d.reconstruct() - &a)) <= tol);
        let mut total = d.zero_group.as_ref().map_or(Array2::zeros((n, n)), |k| k.projector.clone());
        for (e, g) in d.groups.iter().enumerate() {
            prop_assert!(max_abs(&(g.projector.dot(&g.projector) - &g.projector)) <= 1e-10);
            prop_assert!((g.projector.diag().sum() - g.multiplicity as f64).abs() <= 1e-10);
            for h in &d.groups[e + 1..] {
                prop_assert!(max_abs(&g.projector.dot(&h.projector)) <= 1e-10);
            }
            total += &g.projector;
        }
        prop_assert!(max_abs(&(total - Array2::<f64>::eye(n))) <= 1e-10);
    }

    #[test]
    fn lifted_projectors_and_kernels(w in low_rank(6)) {
        let tol = Tolerances::default();
        let gram = sym(w.t().dot(&w));
        let frame = sym(w.dot(&w.t()));
        let d = spectral::decompose(&gram, tol).unwrap();
        let lifted = spectral::lift_projectors(w.view(), &d).unwrap();
        let f = frame.as_array();
        prop_assert!(frobenius(&(lifted.reconstruct() - f)) <= 1e-9 * frobenius(f).max(1.0));
        for (e, g) in lifted.groups.iter().enumerate() {
            let p = &g.projector;
            prop_assert!(max_abs(&(p.dot(p) - p)) <= 1e-9);
            prop_assert_eq!(g.rank, d.groups[e].multiplicity);
            for h in &lifted.groups[e + 1..] {
                prop_assert!(max_abs(&p.dot(&h.projector)) <= 1e-9);
            }
        }
        // Kernel lemma: rank(WWᵀ) = rank(WᵀW) = rank(W).
        let fd = spectral::decompose(&frame, tol).unwrap();
        prop_assert_eq!(fd.rank(), d.rank());
        prop_assert_eq!(lifted.rank(), d.rank());
        let nonzero = |v: Vec<f64>| v.into_iter().filter(|x| *x != 0.0).collect::<Vec<_>>();
        let ev_m = nonzero(d.eigenvalues_with_multiplicity());
        let ev_f = nonzero(fd.eigenvalues_with_multiplicity());
        for (x, y) in ev_m.iter().zip(&ev_f) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }
}
