mod common;

use ndarray::{array, Array2, Axis};
use proptest::prelude::*;
use spectra::diagnostics::{self, Atom, DiagnosticsConfig, Moment, SpectralContext, SpectralMeasure};
use spectra::geometry::frames;
use spectra::spectral::{self, Tolerances};

const HALF_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn split_pair() -> Array2<f64> {
    array![[1.0, HALF_SQRT2], [0.0, HALF_SQRT2]]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Atoms of a 2×2 frame operator from its closed-form eigenvectors.
fn two_by_two_atoms(w: &Array2<f64>, i: usize) -> Vec<(f64, f64)> {
    let f = w.dot(&w.t());
    let (a, b, c) = (f[[0, 0]], f[[0, 1]], f[[1, 1]]);
    let tr = a + c;
    let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
    let col = w.column(i);
    let n2 = col.dot(&col);
    [(tr - disc) / 2.0, (tr + disc) / 2.0]
        .into_iter()
        .map(|l| {
            let v = array![b, l - a];
            let proj = v.dot(&col);
            (l, proj * proj / (v.dot(&v) * n2))
        })
        .collect()
}

#[test]
fn split_pair_measures_match_closed_form() {
    let w = split_pair();
    let ctx = SpectralContext::new(w.view(), Tolerances::default()).unwrap();
    let measures = diagnostics::spectral_measures(w.view(), &ctx.lifted);
    for i in 0..2 {
        let m = measures[i].as_ref().unwrap();
        let oracle = two_by_two_atoms(&w, i);
        assert_eq!(m.atoms.len(), 2);
        for (atom, (l, mass)) in m.atoms.iter().zip(oracle) {
            assert!(close(atom.lambda, l, 1e-12), "{} vs {l}", atom.lambda);
            assert!(close(atom.mass, mass, 1e-12), "{} vs {mass}", atom.mass);
        }
        assert!(close(m.total_mass(), 1.0, 1e-12));
        assert!(m.form_gap() < 1e-12);
    }
}

#[test]
fn split_pair_diagnostics() {
    let w = split_pair();
    let a = diagnostics::analyze(w.view(), &DiagnosticsConfig::default()).unwrap();
    let d = &a.diagnostics;
    assert_eq!(d.rank, 2);
    assert!(close(d.sum_leverage, 2.0, 1e-12));
    for f in &d.features {
        assert!(close(f.leverage, 1.0, 1e-12));
        assert!(close(f.d, 2.0 / 3.0, 1e-12));
        assert!(close(f.slack.unwrap(), 1.0 / 3.0, 1e-12));
        assert!(close(f.kappa.unwrap(), 1.5, 1e-12));
        assert!(close(f.cv.unwrap(), 1.0 / 3.0, 1e-12));
    }
    let rv = diagnostics::residual_cv(w.view(), &a.measures);
    for r in rv.iter().flatten() {
        assert!(close(r.operator, 0.25, 1e-12) && close(r.measure, 0.25, 1e-12));
    }
    assert!(close(d.defect, 2.0 / 3.0, 1e-12));
    assert!(close(d.sum_leverage_slack, 2.0 / 3.0, 1e-12));

    let low = diagnostics::tail_mass(d, 0.25).unwrap();
    assert!(close(low.mass, 1.0, 1e-12) && close(low.cap, 4.0 / 3.0, 1e-12) && low.holds);
    let high = diagnostics::tail_mass(d, 0.5).unwrap();
    assert!(close(high.mass, 0.0, 1e-12) && close(high.epsilon, 1.0 / 3.0, 1e-12) && high.holds);
    assert!(diagnostics::tail_mass(d, 0.0).is_err());
    assert!(diagnostics::tail_mass(d, 1.0).is_err());
}

#[test]
fn triangle_digon_features() {
    let w = frames::triangle_digon();
    let a = diagnostics::analyze(w.view(), &DiagnosticsConfig::default()).unwrap();
    for (i, f) in a.diagnostics.features.iter().enumerate() {
        let m = a.measures[i].as_ref().unwrap();
        let (want_d, want_kappa) = if i < 3 { (2.0 / 3.0, 1.5) } else { (0.5, 2.0) };
        assert!(close(f.d, want_d, 1e-12));
        assert!(close(f.kappa.unwrap(), want_kappa, 1e-12));
        assert!(close(m.moment(Moment::Power(2)), want_kappa * want_kappa, 1e-12));
        assert!(close(m.moment(Moment::Pinv), 1.0 / want_kappa, 1e-12));
        assert!(f.slack.unwrap() < 1e-12 && f.cv.unwrap() < 1e-7);
        assert_eq!(f.omega, Some(0.0));
        assert!(close(f.p_star.unwrap(), 1.0, 1e-12));
    }
    assert!(close(a.diagnostics.sum_d, 3.0, 1e-12));
    assert!(close(a.diagnostics.saturation.unwrap(), 1.0, 1e-12));
}

#[test]
fn operator_moments_agree_with_measure() {
    let w = common::gaussian(3, 7, 12);
    let ctx = SpectralContext::new(w.view(), Tolerances::default()).unwrap();
    let measures = diagnostics::spectral_measures(w.view(), &ctx.lifted);
    for (i, m) in measures.iter().enumerate() {
        let m = m.as_ref().unwrap();
        for r in [Moment::Power(0), Moment::Power(1), Moment::Power(3), Moment::Pinv] {
            let op = diagnostics::operator_moment(w.view(), i, &ctx.lifted, r).unwrap();
            assert!(close(m.moment(r), op, 1e-10 * op.abs().max(1.0)));
        }
    }
    assert!(diagnostics::operator_moment(w.view(), 0, &ctx.lifted, Moment::Power(-1)).is_err());
}

#[test]
fn band_of_two_equal_atoms() {
    let m = SpectralMeasure {
        feature: 0,
        norm2: 1.0,
        atoms: vec![
            Atom { group: 0, lambda: 1.0, mass: 0.5 },
            Atom { group: 1, lambda: 2.0, mass: 0.5 },
        ],
        closed_form: vec![0.5, 0.5],
    };
    let b = diagnostics::band_bounds(&m, 0.0).unwrap();
    assert!(close(b.omega, 1.0 / 3.0, 1e-15));
    assert!(close(b.kappa_star, 2.0, 1e-15));
    assert!(close(b.slack_cap, 1.0 / 9.0, 1e-15));
    assert!(close(m.variance(), 0.25, 1e-15));
    assert!(diagnostics::band_bounds(&m, 0.6).is_none());
}

#[test]
fn dimensionality_forms_agree() {
    let w = common::gaussian(4, 9, 13);
    let dims = diagnostics::fractional_dimensionality(w.view());
    assert!(dims.max_disagreement() < 1e-12);
    let w = frames::simplex(4);
    let dims = diagnostics::fractional_dimensionality(w.view());
    for d in dims.gram {
        assert!(close(d, 0.75, 1e-12));
    }
}

#[test]
fn esd_examples() {
    let d = spectral::decompose(&spectral::SymMatrix::identity(4), Tolerances::default()).unwrap();
    let h = diagnostics::esd(&d, 4).unwrap();
    assert_eq!(h.counts, vec![0, 0, 0, 4]);

    let w = frames::triangle_digon();
    let d = spectral::decompose(&diagnostics::gram(w.view()), Tolerances::default()).unwrap();
    let h = diagnostics::esd(&d, 8).unwrap();
    assert_eq!(h.hi, d.lambda_max());
    assert_eq!(h.counts, vec![2, 0, 0, 0, 0, 0, 2, 1]);
    assert!(diagnostics::esd(&d, 0).is_err());
}

#[test]
fn zero_matrix_is_handled() {
    let w = Array2::<f64>::zeros((2, 3));
    let a = diagnostics::analyze(w.view(), &DiagnosticsConfig::default()).unwrap();
    assert_eq!(a.diagnostics.rank, 0);
    assert!(a.measures.iter().all(Option::is_none));
    assert!(a.diagnostics.saturation.is_none());
    assert!(a.diagnostics.features.iter().all(|f| f.zero_norm && f.d == 0.0 && f.slack.is_none()));
    let t = diagnostics::tail_mass(&a.diagnostics, 0.1).unwrap();
    assert_eq!(t.mass, 0.0);
}

#[test]
fn dead_column_is_excluded() {
    let w = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    let a = diagnostics::analyze(w.view(), &DiagnosticsConfig::default()).unwrap();
    assert_eq!(diagnostics::zero_norm_mask(w.view()), vec![false, true, false]);
    assert!(a.measures[1].is_none());
    assert!(close(a.diagnostics.sum_d, 2.0, 1e-12));
}

fn weights() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
    (1usize..5, 1usize..9).prop_flat_map(|(m, n)| {
        let n = n.max(m);
        (
            prop::collection::vec(-2.0f64..2.0, m * n).prop_map(move |v| Array2::from_shape_vec((m, n), v).unwrap()),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_is_bitwise_permutation_invariant((w, perm) in weights()) {
        let permuted = w.select(Axis(1), &perm);
        prop_assert_eq!(diagnostics::frame(w.view()), diagnostics::frame(permuted.view()));
    }

    #[test]
    fn diagnostics_follow_a_relabeling((w, perm) in weights()) {
        let permuted = w.select(Axis(1), &perm);
        let cfg = DiagnosticsConfig::default();
        let a = diagnostics::analyze(w.view(), &cfg).unwrap().diagnostics;
        let b = diagnostics::analyze(permuted.view(), &cfg).unwrap().diagnostics;
        prop_assert_eq!(a.rank, b.rank);
        for (k, &src) in perm.iter().enumerate() {
            let (x, y) = (&a.features[src], &b.features[k]);
            prop_assert!(close(x.d, y.d, 1e-9));
            prop_assert!(close(x.leverage, y.leverage, 1e-9));
        }
    }

    #[test]
    fn leverage_identities((w, _) in weights()) {
        let ctx = SpectralContext::new(w.view(), Tolerances::default()).unwrap();
        let lev = diagnostics::leverage_and_slack(w.view(), &ctx.lifted).unwrap();
        prop_assert!(lev.holds(1e-8), "{lev:?}");
        prop_assert!(lev.leverage.iter().all(|l| (-1e-12..=1.0 + 1e-9).contains(l)));
        prop_assert!(lev.slack.iter().flatten().all(|s| (0.0..=1.0).contains(s)));
        for m in diagnostics::spectral_measures(w.view(), &ctx.lifted).iter().flatten() {
            prop_assert!(close(m.total_mass(), 1.0, 1e-9));
            prop_assert!(m.form_gap() < 1e-9);
        }
    }
}
