//! Constructed unit-norm tight frames and fixtures.

use std::f64::consts::PI;

use ndarray::{array, Array2};

/// Antipodal pair on the line.
pub fn digon() -> Array2<f64> {
    array![[1.0, -1.0]]
}

/// `p` unit vectors at angles `2πj/p` in the plane.
pub fn polygon(p: usize) -> Array2<f64> {
    Array2::from_shape_fn((2, p), |(r, j)| {
        let a = 2.0 * PI * j as f64 / p as f64;
        if r == 0 {
            a.cos()
        } else {
            a.sin()
        }
    })
}

/// Regular simplex of `p` unit vectors in `ℝ^{p−1}`, built on the Helmert
/// basis of `1⊥`.
pub fn simplex(p: usize) -> Array2<f64> {
    assert!(p >= 2, "simplex needs at least two points");
    let scale = (p as f64 / (p - 1) as f64).sqrt();
    Array2::from_shape_fn((p - 1, p), |(k, i)| {
        let k1 = (k + 1) as f64;
        let norm = (k1 * (k1 + 1.0)).sqrt();
        let v = if i <= k {
            1.0
        } else if i == k + 1 {
            -k1
        } else {
            0.0
        };
        scale * v / norm
    })
}

pub fn triangle() -> Array2<f64> {
    polygon(3)
}

/// Vertices of the regular tetrahedron on alternate cube corners.
pub fn tetrahedron() -> Array2<f64> {
    let s = 1.0 / 3f64.sqrt();
    array![[s, s, -s, -s], [s, -s, s, -s], [s, -s, -s, s]]
}

/// Two squares at heights `±1/√3` with radius `√(2/3)`, rotated by 45° against
/// each other. A unit tight frame in `ℝ³` with constant 8/3.
pub fn square_antiprism() -> Array2<f64> {
    let h = 1.0 / 3f64.sqrt();
    let r = (2.0f64 / 3.0).sqrt();
    Array2::from_shape_fn((3, 8), |(c, j)| {
        let (a, z) = if j < 4 {
            (PI / 2.0 * j as f64, h)
        } else {
            (PI / 2.0 * (j - 4) as f64 + PI / 4.0, -h)
        };
        match c {
            0 => r * a.cos(),
            1 => r * a.sin(),
            _ => z,
        }
    })
}

pub fn cube() -> Array2<f64> {
    let s = 1.0 / 3f64.sqrt();
    Array2::from_shape_fn((3, 8), |(c, j)| if (j >> c) & 1 == 1 { -s } else { s })
}

/// Five features in three dimensions: a triangle in the first two coordinates
/// and an antipodal digon on the third.
pub fn triangle_digon() -> Array2<f64> {
    let h = 3f64.sqrt() / 2.0;
    array![
        [0.5, 0.5, -1.0, 0.0, 0.0],
        [h, -h, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, -1.0]
    ]
}

/// Place frame blocks on orthogonal coordinate ranges.
pub fn direct_sum(blocks: &[Array2<f64>]) -> Array2<f64> {
    let m: usize = blocks.iter().map(|b| b.nrows()).sum();
    let n: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Array2::zeros((m, n));
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.slice_mut(ndarray::s![r..r + b.nrows(), c..c + b.ncols()]).assign(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
