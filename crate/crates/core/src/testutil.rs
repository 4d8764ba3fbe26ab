//! Helpers for unit tests: seeded random matrices and brute-force oracles that
//! share no code with the implementation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::repcore::{LayerTag, RepMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn rep(data: Array2<f64>) -> RepMatrix {
    RepMatrix::new(data, LayerTag::anonymous("test")).unwrap()
}

pub fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2);
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[[i, t]] * b[[t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Tr(K H L H) / (m-1)^2 with H = I - 11^T/m materialized.
pub fn explicit_hsic(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let m = x.nrows();
    let k = naive_matmul(x, &x.t().to_owned());
    let l = naive_matmul(y, &y.t().to_owned());
    let h = Array2::from_shape_fn((m, m), |(i, j)| if i == j { 1.0 } else { 0.0 } - 1.0 / m as f64);
    let khlh = naive_matmul(&naive_matmul(&naive_matmul(&k, &h), &l), &h);
    khlh.diag().sum() / ((m - 1) as f64).powi(2)
}

pub fn explicit_cka(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    explicit_hsic(x, y) / (explicit_hsic(x, x) * explicit_hsic(y, y)).sqrt()
}

/// Random orthogonal matrix from modified Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let mut q = gaussian(rng, n, n);
    for j in 0..n {
        for k in 0..j {
            let d = q.column(j).dot(&q.column(k));
            let ck = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-d, &ck);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}
