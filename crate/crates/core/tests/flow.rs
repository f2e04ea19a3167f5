mod common;

use common::{gaussian, max_abs, symmetric};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use spectra::flow::{self, FlowState, KernelSource};
use spectra::geometry::SchemeSpec;
use spectra::model::{self, WeightMatrix};
use spectra::rng::{self, Stream};
use spectra::spectral::{self, SymMatrix, Tolerances};
use spectra::Error;

fn decompose(m: &Array2<f64>) -> spectral::SpectralDecomposition {
    spectral::decompose(&SymMatrix::new(m.clone()).unwrap(), Tolerances::default()).unwrap()
}

fn psd(n: usize, rank: usize, seed: u64) -> Array2<f64> {
    let w = gaussian(rank, n, seed);
    spectral::symmetrize(w.t().dot(&w))
}

#[test]
fn zero_kernel_leaves_the_gram_fixed() {
    let m0 = psd(4, 3, 1);
    let phi = Array2::zeros((4, 4));
    let path = flow::integrate(m0.clone(), &KernelSource::Frozen(&phi), 0.1, 20, true).unwrap();
    assert_eq!(path.len(), 21);
    assert_eq!(path.last().unwrap().m, m0);
    assert!((path.last().unwrap().t - 2.0).abs() < 1e-12);
}

#[test]
fn identity_kernel_decays_exponentially() {
    let phi = Array2::<f64>::eye(3);
    let path = flow::integrate(Array2::eye(3), &KernelSource::Frozen(&phi), 0.01, 100, false).unwrap();
    let end = path.last().unwrap();
    let want = (-2.0 * end.t).exp();
    assert!(max_abs(&(&end.m - &(Array2::<f64>::eye(3) * want))) < 1e-8);
    // One RK4 step multiplies by the degree-4 Taylor polynomial of e^{-z}.
    let z = 0.02f64;
    let factor = 1.0 - z + z * z / 2.0 - z.powi(3) / 6.0 + z.powi(4) / 24.0;
    assert!(max_abs(&(&end.m - &(Array2::<f64>::eye(3) * factor.powi(100)))) < 1e-14);
}

#[test]
fn nonpositive_step_is_rejected() {
    let phi = Array2::<f64>::eye(2);
    let s = FlowState::new(Array2::eye(2));
    for h in [0.0, -0.1, f64::NAN] {
        assert!(matches!(flow::flow_step(&s, &KernelSource::Frozen(&phi), h, false), Err(Error::Validation(_))));
    }
}

#[test]
fn eigenvalue_drift_of_a_diagonal_gram() {
    let (a, b, c) = (0.3, -0.7, 0.4);
    let d = decompose(&array![[1.0, 0.0], [0.0, 2.0]]);
    let phi = array![[b, c], [c, a]];
    let drift = flow::eigenvalue_drift(&d, &phi);
    // Groups ascend: λ = 1 then λ = 2.
    assert!((drift[0] - (-2.0 * b)).abs() < 1e-15);
    assert!((drift[1] - (-4.0 * a)).abs() < 1e-15);
}

#[test]
fn projector_drift_of_a_two_by_two() {
    let c = 0.25;
    let d = decompose(&array![[2.0, 0.0], [0.0, 1.0]]);
    let phi = array![[0.1, c], [c, -0.2]];
    let drift = flow::projector_drift(&d, &phi);
    let top = drift.groups.last().unwrap();
    assert!(max_abs(&(top - &array![[0.0, -3.0 * c], [-3.0 * c, 0.0]])) < 1e-15);
    assert!(drift.unreliable.is_empty());
    let q = flow::mass_transport(&d, &phi);
    assert!(max_abs(&q.rates) < 1e-15);
}

#[test]
fn mass_transport_is_the_projector_drift_diagonal() {
    let m = psd(5, 3, 2);
    let phi = symmetric(5, 3);
    let d = decompose(&m);
    let drift = flow::projector_drift(&d, &phi);
    let q = flow::mass_transport(&d, &phi);
    for (e, de) in drift.groups.iter().enumerate() {
        for i in 0..5 {
            assert!((q.rates[[i, e]] - de[[i, i]]).abs() < 1e-12);
        }
        assert!(de.diag().sum().abs() < 1e-12);
    }
    let kernel = drift.kernel.as_ref().unwrap();
    for i in 0..5 {
        assert!((q.kernel.as_ref().unwrap()[i] - kernel[[i, i]]).abs() < 1e-12);
    }
    let total = drift.groups.iter().fold(kernel.clone(), |acc, g| acc + g);
    assert!(max_abs(&total) < 1e-12);
    assert!(q.conservation_residual() < 1e-12);
}

#[test]
fn drift_formulas_match_finite_differences() {
    let m = psd(5, 3, 4);
    let phi = symmetric(5, 5) * 0.2;
    let checks = flow::validate_drifts(&m, &phi, 1e-5, Tolerances::default()).unwrap();
    assert_eq!(checks.len(), 3);
    for c in checks.iter().filter(|c| c.gap >= 0.1) {
        assert!(c.eigenvalue_rel_err < 1e-6, "{c:?}");
        assert!(c.projector_rel_err < 1e-4, "{c:?}");
    }
}

#[test]
fn commuting_kernel_is_a_fixed_point_of_the_projectors() {
    let m = psd(4, 4, 6);
    let phi = Array2::<f64>::eye(4) * 0.3 - &m * 0.7 + m.dot(&m) * 0.05;
    let d = decompose(&m);
    assert!(flow::fixed_point_check(&d, &phi).iter().all(|c| *c < 1e-10));
    assert!(flow::projector_drift(&d, &phi).groups.iter().all(|g| max_abs(g) < 1e-10));
}

#[test]
fn perfect_and_dead_models_have_zero_kernel() {
    let mut r = rng::stream(1, Stream::Data);
    let x = model::sample_batch(&[0.5; 4], 64, &mut r);
    let id = WeightMatrix::from_w(Array2::eye(4)).unwrap();
    assert_eq!(max_abs(&flow::gradient_kernel_batch(&id, x.view(), &[1.0; 4]).unwrap().phi), 0.0);
    let dead = WeightMatrix::from_w(Array2::zeros((2, 4))).unwrap();
    assert_eq!(max_abs(&flow::gradient_kernel_batch(&dead, x.view(), &[1.0; 4]).unwrap().phi), 0.0);
}

#[test]
fn direct_backprop_matches_the_kernel_form() {
    let model = WeightMatrix::new(gaussian(3, 6, 7) * 0.5, Array1::from_elem(6, 0.05)).unwrap();
    let mut r = rng::stream(2, Stream::Data);
    let x = model::sample_batch(&[0.6; 6], 256, &mut r);
    let c = flow::consistency_w_vs_m(&model, x.view(), &[1.0; 6], 1e-5).unwrap();
    assert!(c.w_vs_m < 1e-12 && c.mdot < 1e-4, "{c:?}");
}

#[test]
fn monte_carlo_kernel_agrees_with_a_large_batch() {
    let n = 5;
    let model = WeightMatrix::new(gaussian(2, n, 8) * 0.6, Array1::from_elem(n, -0.02)).unwrap();
    let sparsity = [0.7; 5];
    let imp = [1.0; 5];
    let runs: Vec<Array2<f64>> = (0..8)
        .map(|s| flow::gradient_kernel_mc(&model, &sparsity, &imp, 4096, s).unwrap().phi)
        .collect();
    let mean = runs.iter().fold(Array2::<f64>::zeros((n, n)), |a, p| a + p) / 8.0;
    let var = runs.iter().fold(Array2::<f64>::zeros((n, n)), |a, p| a + &(p - &mean).mapv(|v| v * v)) / 7.0;
    let mut r = rng::stream(99, Stream::Aux);
    let big = model::sample_batch(&sparsity, 1 << 17, &mut r);
    let reference = flow::gradient_kernel_batch(&model, big.view(), &imp).unwrap().phi;
    // Standard error of the 8-run mean, plus a plain-sampling floor for the reference.
    for ((m, v), r) in mean.iter().zip(var.iter()).zip(reference.iter()) {
        let se = (v / 8.0).sqrt() + (v * 4096.0 / (1 << 17) as f64).sqrt();
        assert!((m - r).abs() <= 5.0 * se + 1e-6, "{m} vs {r} (se {se})");
    }
}

#[test]
fn monte_carlo_kernel_is_reproducible() {
    let model = WeightMatrix::from_w(gaussian(2, 4, 9)).unwrap();
    let a = flow::gradient_kernel_mc(&model, &[0.5; 4], &[1.0; 4], 10_000, 3).unwrap();
    let b = flow::gradient_kernel_mc(&model, &[0.5; 4], &[1.0; 4], 10_000, 3).unwrap();
    assert_eq!(a.phi, b.phi);
    assert!(flow::gradient_kernel_mc(&model, &[0.5; 3], &[1.0; 4], 100, 0).is_err());
}

#[test]
fn exact_kernel_limits() {
    let model = WeightMatrix::from_w(gaussian(2, 13, 10)).unwrap();
    assert!(flow::gradient_kernel_exact(&model, &[0.9; 13], &[1.0; 13], 4).is_err());
    let small = WeightMatrix::from_w(gaussian(2, 3, 11)).unwrap();
    let k = flow::gradient_kernel_exact(&small, &[0.9; 3], &[1.0; 3], 4).unwrap();
    match k.estimator {
        flow::KernelEstimator::Exact { covered_mass, .. } => {
            assert!((covered_mass - (1.0 - 0.1f64.powi(3))).abs() < 1e-12);
        }
        other => panic!("unexpected estimator {other:?}"),
    }
}

#[test]
fn batch_source_recomputes_the_kernel() {
    let w = gaussian(2, 4, 12) * 0.5;
    let b = Array1::from_elem(4, 0.0);
    let imp = [1.0; 4];
    let mut r = rng::stream(3, Stream::Data);
    let x = model::sample_batch(&[0.5; 4], 128, &mut r);
    let batch = KernelSource::Batch { x: x.view(), bias: &b, importance: &imp };
    let f = |m: &Array2<f64>| model::kernel_from_gram(m, &b, x.view(), &imp).0;
    let func = KernelSource::Function(&f);
    let m0 = w.t().dot(&w);
    let p = flow::integrate(m0.clone(), &batch, 0.01, 10, true).unwrap();
    let q = flow::integrate(m0, &func, 0.01, 10, true).unwrap();
    assert_eq!(p.last().unwrap().m, q.last().unwrap().m);
}

#[test]
fn scheme_reduction_recovers_coefficients() {
    let spec = SchemeSpec::simplex(4).unwrap();
    let m = flow::from_coefficients(&[1.0, -0.2], &spec);
    let phi = flow::from_coefficients(&[0.3, 0.1], &spec);
    let r = flow::scheme_reduce(&m, &phi, &spec, 1e-10).unwrap();
    assert!((r.theta[0] - 1.0).abs() < 1e-15 && (r.theta[1] + 0.2).abs() < 1e-15);
    assert!((r.phi[0] - 0.3).abs() < 1e-15 && (r.phi[1] - 0.1).abs() < 1e-15);

    let off = &m + &(symmetric(4, 13) * 0.1);
    assert!(matches!(flow::scheme_reduce(&off, &phi, &spec, 1e-6), Err(Error::NotInAlgebra { .. })));
    assert!(flow::scheme_reduce(&Array2::eye(3), &Array2::eye(3), &spec, 1e-6).is_err());
}

#[test]
fn reduced_flow_tracks_the_full_flow() {
    let spec = SchemeSpec::cyclic(5).unwrap();
    let theta0 = [1.0, 0.3, -0.4];
    let phi_theta = [0.2, -0.05, 0.1];
    let phi = flow::from_coefficients(&phi_theta, &spec);
    let full = flow::integrate(flow::from_coefficients(&theta0, &spec), &KernelSource::Frozen(&phi), 0.01, 50, false).unwrap();
    let reduced = flow::integrate_reduced(&theta0, |_| phi_theta.to_vec(), &spec, 0.01, 50);
    let end = flow::from_coefficients(reduced.last().unwrap(), &spec);
    assert!(max_abs(&(&end - &full.last().unwrap().m)) < 1e-12);
    let (_, residual) = spec.adjacency_coefficients(&full.last().unwrap().m);
    assert!(residual < 1e-12);
}

#[test]
fn flow_point_reports_groups_and_masses() {
    let m = Array2::from_diag(&array![1.5, 1.5, 2.0]);
    let phi = Array2::zeros((3, 3));
    let p = flow::flow_point(&FlowState::new(m), &phi, Tolerances::default()).unwrap();
    assert_eq!(p.groups, vec![(1.5, 2), (2.0, 1)]);
    assert_eq!(p.masses[2], vec![0.0, 1.0]);
    assert!(p.commutators.iter().all(|c| *c == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transport_conserves_mass_and_drift_is_traceless(seed in 0u64..10_000, n in 2usize..7, rank in 1usize..7) {
        let m = psd(n, rank.min(n), seed);
        let phi = symmetric(n, seed + 1);
        let d = decompose(&m);
        let q = flow::mass_transport(&d, &phi);
        prop_assume!(q.unreliable.is_empty());
        let scale = max_abs(&phi) * d.lambda_max().max(1.0) / flow::gap_floor(&d).max(1e-3);
        prop_assert!(q.conservation_residual() <= 1e-10 * scale.max(1.0));
        for g in flow::projector_drift(&d, &phi).groups {
            prop_assert!(g.diag().sum().abs() <= 1e-10 * scale.max(1.0));
        }
    }
}
