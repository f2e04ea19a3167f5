mod common;

use common::{gaussian, max_abs};
use ndarray::{array, s, Array1, Array2};
use proptest::prelude::*;
use spectra::geometry::frames;
use spectra::model::{self, TmsConfig, WeightMatrix};
use spectra::rng::{self, Stream};

fn zero_fraction(x: &Array2<f64>, col: Option<usize>) -> f64 {
    let view = match col {
        Some(c) => x.slice(s![.., c..c + 1]).to_owned(),
        None => x.clone(),
    };
    view.iter().filter(|v| **v == 0.0).count() as f64 / view.len() as f64
}

/// Loss written straight from the definition, one coordinate at a time.
fn loss_oracle(model: &WeightMatrix, x: &Array2<f64>, importance: &[f64]) -> f64 {
    let (m, n) = model.w.dim();
    let mut total = 0.0;
    for row in x.rows() {
        for i in 0..n {
            let mut u = model.b[i];
            for j in 0..n {
                let gij: f64 = (0..m).map(|r| model.w[[r, i]] * model.w[[r, j]]).sum();
                u += gij * row[j];
            }
            let r = row[i] - u.max(0.0);
            total += importance[i] * r * r;
        }
    }
    total / x.nrows() as f64
}

fn half_loss(model: &WeightMatrix, x: &Array2<f64>, imp: &[f64]) -> f64 {
    0.5 * model::loss(x.view(), model::forward(model, x.view()).unwrap().view(), imp).unwrap()
}

#[test]
fn dense_inputs_have_no_zeros() {
    let mut r = rng::stream(1, Stream::Data);
    let x = model::sample_batch(&[0.0; 10], 1000, &mut r);
    assert_eq!(zero_fraction(&x, None), 0.0);
    assert!(x.iter().all(|v| (0.0..1.0).contains(v)));
}

#[test]
fn sparse_inputs_match_zero_probability() {
    let mut r = rng::stream(2, Stream::Data);
    let x = model::sample_batch(&[0.99; 10], 10_000, &mut r);
    assert!((zero_fraction(&x, None) - 0.99).abs() < 0.01);
}

#[test]
fn mixed_sparsity_within_three_sigma() {
    let sparsity = [0.0, 0.3, 0.5, 0.9];
    let draws = 20_000;
    let mut r = rng::stream(3, Stream::Data);
    let x = model::sample_batch(&sparsity, draws, &mut r);
    for (i, s) in sparsity.iter().enumerate() {
        let sigma = (s * (1.0 - s) / draws as f64).sqrt();
        let got = zero_fraction(&x, Some(i));
        assert!((got - s).abs() <= 3.0 * sigma + 1e-12, "feature {i}: {got} vs {s}");
    }
}

#[test]
fn nonzero_inputs_are_uniform() {
    let mut r = rng::stream(4, Stream::Data);
    let x = model::sample_batch(&[0.5], 40_000, &mut r);
    let nz: Vec<f64> = x.iter().copied().filter(|v| *v != 0.0).collect();
    let mean = nz.iter().sum::<f64>() / nz.len() as f64;
    let sigma = (1.0 / 12.0 / nz.len() as f64).sqrt();
    assert!((mean - 0.5).abs() < 4.0 * sigma);
}

#[test]
fn forward_examples() {
    let x = array![[0.2, 0.7, 0.0], [1.0, 0.0, 0.5]];
    let id = WeightMatrix::from_w(Array2::eye(3)).unwrap();
    assert_eq!(model::forward(&id, x.view()).unwrap(), x);

    let dead = WeightMatrix::new(Array2::zeros((2, 3)), Array1::from_elem(3, -1.0)).unwrap();
    assert_eq!(model::forward(&dead, x.view()).unwrap(), Array2::<f64>::zeros((2, 3)));

    let td = WeightMatrix::from_w(frames::triangle_digon()).unwrap();
    let e4 = array![[0.0, 0.0, 0.0, 1.0, 0.0]];
    let out = model::forward(&td, e4.view()).unwrap();
    assert!(max_abs(&(out - array![[0.0, 0.0, 0.0, 1.0, 0.0]])) < 1e-15);
}

#[test]
fn loss_examples() {
    let x = array![[1.0, 0.0], [0.0, 1.0]];
    assert_eq!(model::loss(x.view(), x.view(), &[1.0, 1.0]).unwrap(), 0.0);
    let zero = Array2::zeros((2, 2));
    assert_eq!(model::loss(x.view(), zero.view(), &[1.0, 3.0]).unwrap(), 2.0);
    assert!(model::loss(x.view(), zero.view(), &[1.0]).is_err());
}

#[test]
fn loss_matches_definition() {
    let w = gaussian(3, 6, 21) * 0.5;
    let b = gaussian(1, 6, 22).row(0).to_owned() * 0.1;
    let model = WeightMatrix::new(w, b).unwrap();
    let imp: Vec<f64> = (0..6).map(|i| 0.9f64.powi(i)).collect();
    let mut r = rng::stream(5, Stream::Data);
    let x = model::sample_batch(&[0.6; 6], 64, &mut r);
    let got = model::loss(x.view(), model::forward(&model, x.view()).unwrap().view(), &imp).unwrap();
    let want = loss_oracle(&model, &x, &imp);
    assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    let g = model::grad(&model, x.view(), &imp).unwrap();
    assert!((g.loss - want).abs() <= 1e-12 * want.max(1.0));
}

#[test]
fn gradient_matches_finite_differences() {
    let w = gaussian(3, 6, 31) * 0.5;
    let b = gaussian(1, 6, 32).row(0).to_owned() * 0.1;
    let model = WeightMatrix::new(w, b).unwrap();
    let imp: Vec<f64> = (0..6).map(|i| 0.9f64.powi(i)).collect();
    let mut r = rng::stream(6, Stream::Data);
    let x = model::sample_batch(&[0.6; 6], 128, &mut r);
    let g = model::grad(&model, x.view(), &imp).unwrap();
    let step = 1e-6;

    let mut fd_w = Array2::zeros(model.w.dim());
    for ((r, c), v) in fd_w.indexed_iter_mut() {
        let mut plus = model.clone();
        plus.w[[r, c]] += step;
        let mut minus = model.clone();
        minus.w[[r, c]] -= step;
        *v = (half_loss(&plus, &x, &imp) - half_loss(&minus, &x, &imp)) / (2.0 * step);
    }
    let mut fd_b = Array1::zeros(model.n());
    for (i, v) in fd_b.iter_mut().enumerate() {
        let mut plus = model.clone();
        plus.b[i] += step;
        let mut minus = model.clone();
        minus.b[i] -= step;
        *v = (half_loss(&plus, &x, &imp) - half_loss(&minus, &x, &imp)) / (2.0 * step);
    }
    let scale = max_abs(&g.w).max(1e-3);
    assert!(max_abs(&(&fd_w - &g.w)) / scale < 1e-5);
    let db = (&fd_b - &g.b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(db / g.b.iter().fold(1e-3f64, |m, v| m.max(v.abs())) < 1e-5);
    assert!(max_abs(&(model.w.dot(&g.phi) - &g.w)) < 1e-12);
    assert!(max_abs(&(&g.phi - &g.phi.t())) == 0.0);
}

#[test]
fn zero_weights_have_zero_gradient() {
    let model = WeightMatrix::from_w(Array2::zeros((2, 5))).unwrap();
    let mut r = rng::stream(7, Stream::Data);
    let x = model::sample_batch(&[0.5; 5], 32, &mut r);
    let g = model::grad(&model, x.view(), &[1.0; 5]).unwrap();
    assert_eq!(max_abs(&g.w), 0.0);
    assert_eq!(max_abs(&g.phi), 0.0);
}

#[test]
fn kernel_depends_only_on_gram() {
    let w = gaussian(3, 5, 41);
    let q = {
        let t = 0.4f64;
        array![[t.cos(), -t.sin(), 0.0], [t.sin(), t.cos(), 0.0], [0.0, 0.0, 1.0]]
    };
    let b = Array1::from_elem(5, -0.05);
    let mut r = rng::stream(8, Stream::Data);
    let x = model::sample_batch(&[0.5; 5], 64, &mut r);
    let g1 = model::grad(&WeightMatrix::new(w.clone(), b.clone()).unwrap(), x.view(), &[1.0; 5]).unwrap();
    let g2 = model::grad(&WeightMatrix::new(q.dot(&w), b.clone()).unwrap(), x.view(), &[1.0; 5]).unwrap();
    assert!(max_abs(&(&g1.phi - &g2.phi)) < 1e-12);
    let gram = w.t().dot(&w);
    let (phi, _) = model::kernel_from_gram(&gram, &b, x.view(), &[1.0; 5]);
    assert!(max_abs(&(phi - &g1.phi)) < 1e-12);
}

#[test]
fn config_validation() {
    assert!(TmsConfig::uniform(3, 4, 0.5, 0).validate().is_err());
    assert!(TmsConfig::uniform(4, 2, 1.0, 0).validate().is_err());
    assert!(TmsConfig::uniform(4, 0, 0.5, 0).validate().is_err());
    assert!(TmsConfig::uniform(4, 2, 0.5, 0).validate().is_ok());
}

#[test]
fn initialization_scale() {
    let cfg = TmsConfig::uniform(400, 25, 0.0, 9);
    let w = model::initialize(&cfg).w;
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var - 1.0 / 25.0).abs() < 0.004, "variance {var}");
}

#[test]
fn dense_square_model_learns_identity() {
    let mut cfg = TmsConfig::uniform(4, 4, 0.0, 1);
    cfg.optimizer.lr = 1e-2;
    let run = model::train(&cfg).unwrap();
    assert!(run.final_loss() <= 1e-3, "final loss {}", run.final_loss());
}

#[test]
fn sparse_pair_forms_a_digon() {
    let mut cfg = TmsConfig::uniform(2, 1, 0.9, 0);
    cfg.optimizer.lr = 1e-2;
    cfg.steps = 4000;
    let best = (0..4)
        .map(|seed| {
            cfg.seed = seed;
            model::train(&cfg).unwrap()
        })
        .min_by(|a, b| a.final_loss().total_cmp(&b.final_loss()))
        .unwrap();
    let w = &best.final_weights.w;
    assert!(w[[0, 0]] * w[[0, 1]] < 0.0, "columns not antipodal: {w}");
    for c in 0..2 {
        assert!((w[[0, c]].abs() - 1.0).abs() < 0.1, "column norm {w}");
    }
}

#[test]
fn training_is_deterministic() {
    let mut cfg = TmsConfig::uniform(6, 2, 0.8, 11);
    cfg.steps = 300;
    cfg.snapshot_every = 100;
    let a = model::train(&cfg).unwrap();
    let b = model::train(&cfg).unwrap();
    assert_eq!(a.final_weights, b.final_weights);
    let steps: Vec<usize> = a.snapshots.iter().map(|s| s.step).collect();
    assert_eq!(steps, vec![0, 100, 200, 300]);
    assert!(a.final_loss() < a.initial_loss());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_is_nonnegative_and_zero_on_exact_reconstruction(seed in 0u64..1000, s in 0.0f64..0.95) {
        let mut r = rng::stream(seed, Stream::Data);
        let x = model::sample_batch(&[s; 4], 16, &mut r);
        let other = model::sample_batch(&[s; 4], 16, &mut r);
        prop_assert_eq!(model::loss(x.view(), x.view(), &[1.0; 4]).unwrap(), 0.0);
        prop_assert!(model::loss(x.view(), other.view(), &[1.0; 4]).unwrap() >= 0.0);
    }
}
