#![allow(dead_code)]

use bregman_pca::links::{LinkFunction, LinkKind};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Orthonormal `d×k` frame from a Gaussian matrix.
pub fn random_frame(rng: &mut ChaCha8Rng, d: usize, k: usize) -> DMatrix<f64> {
    gaussian(rng, d, k).qr().q()
}

/// 200×16 rows `μ + U·diag(8,4,2,1)·z + 0.01·ε`: planted rank 4, variance gaps of 4×.
pub fn planted_rank4(seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let (n, d) = (200, 16);
    let u = random_frame(&mut r, d, 4);
    let scales = DMatrix::from_diagonal(&DVector::from_vec(vec![8.0, 4.0, 2.0, 1.0]));
    let mu = gaussian_vec(&mut r, d) * 3.0;
    let z = gaussian(&mut r, n, 4);
    let noise = gaussian(&mut r, n, d) * 0.01;
    let mut x = z * scales * u.transpose() + noise;
    for mut row in x.row_iter_mut() {
        row += mu.transpose();
    }
    x
}

/// Rows of `f(u)` for Gaussian pre-activations `u`, with scale chosen per link.
pub fn random_dual_rows(rng: &mut ChaCha8Rng, link: &LinkFunction, n: usize) -> DMatrix<f64> {
    let d = link.dim();
    let u = gaussian(rng, n, d) * 1.5;
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        let row = link.apply(&u.row(i).transpose()).unwrap();
        out.set_row(i, &row.transpose());
    }
    out
}

pub fn all_links(d: usize) -> Vec<LinkFunction> {
    [
        LinkKind::Identity,
        LinkKind::LeakyRelu { beta: 0.1 },
        LinkKind::Sigmoid,
        LinkKind::Tanh,
        LinkKind::Softmax,
    ]
    .into_iter()
    .map(|k| LinkFunction::new(k, d).unwrap())
    .collect()
}

pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let link = LinkFunction::new(LinkKind::Softmax, logits.ncols()).unwrap();
    let mut out = logits.clone();
    for i in 0..logits.nrows() {
        let p = link.apply(&logits.row(i).transpose()).unwrap();
        out.set_row(i, &p.transpose());
    }
    out
}

/// 500×10 simplex rows from 5 clusters of logits.
///
/// Cluster centres are spread widely so each row is peaked on a few classes;
/// the per-row logit noise lives mostly in coordinates with tiny probability.
pub fn clustered_simplex(seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let (n, d, clusters) = (500, 10, 5);
    let centres = gaussian(&mut r, clusters, d) * 3.0;
    let mut logits = gaussian(&mut r, n, d) * 1.0;
    for i in 0..n {
        let c = r.random_range(0..clusters);
        let mut row = logits.row_mut(i);
        row += centres.row(c);
    }
    softmax_rows(&logits)
}

/// Leaky-ReLU representations and teacher labels.
pub struct Teacher {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub labels: Vec<usize>,
}

/// 64-dimensional leaky-ReLU features of three planted classes; labels are the
/// teacher readout's argmax on the clean features.
pub fn leaky_teacher(seed: u64, n: usize, beta: f64, centre_scale: f64, noise: f64, latent: usize, jitter: f64) -> Teacher {
    let mut r = rng(seed);
    let (d, classes) = (64, 3);
    let link = LinkFunction::new(LinkKind::LeakyRelu { beta }, d).unwrap();
    let centres = gaussian(&mut r, classes, d) * centre_scale;
    let mixing = random_frame(&mut r, d, latent);
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let c = r.random_range(0..classes);
        let z = gaussian_vec(&mut r, latent) * noise;
        let u = centres.row(c).transpose() + &mixing * z + gaussian_vec(&mut r, d) * jitter;
        x.set_row(i, &link.apply(&u).unwrap().transpose());
    }
    let w = gaussian(&mut r, d, classes);
    let b = gaussian_vec(&mut r, classes) * 0.1;
    let logits = &x * &w;
    let labels = (0..n)
        .map(|i| {
            let row = logits.row(i) + b.transpose();
            let mut best = 0;
            for j in 1..classes {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Teacher { x, w, b, labels }
}

/// A model with a random mean and random directions made conjugate to the
/// metric at the mean (zero-sum directions for softmax).
pub fn conjugate_model(rng: &mut ChaCha8Rng, link: &LinkFunction, k: usize) -> bregman_pca::BpcaModel {
    use bregman_pca::bpca::softmax_projection_metric;
    use bregman_pca::gqr::{generalized_qr, generalized_qr_softmax};
    let d = link.dim();
    let mut mean = gaussian_vec(rng, d) * 0.5;
    let raw = gaussian(rng, d, k);
    let h = link.hessian_at(&mean).unwrap();
    let v = if link.kind() == LinkKind::Softmax {
        mean.add_scalar_mut(-mean.mean());
        let h = link.hessian_at(&mean).unwrap();
        generalized_qr_softmax(&raw, &softmax_projection_metric(&h)).unwrap().factors.q
    } else {
        generalized_qr(&raw, &h).unwrap().q
    };
    bregman_pca::BpcaModel::from_parts(*link, mean, v).unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
