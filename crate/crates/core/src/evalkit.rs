//! Reference solutions and evaluation metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::links::{LinkFunction, LinkKind, SIMPLEX_TOLERANCE};

/// Final dense layer `logits = x·W + b` through which reconstructions are scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutLayer {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl ReadoutLayer {
    /// `weights` is `d×C`, `bias` has length `C ≥ 2`.
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::Shape(format!(
                "readout weights have {} classes but bias has {}",
                weights.ncols(),
                bias.len()
            )));
        }
        if bias.len() < 2 {
            return Err(Error::Config("readout layer needs at least two classes".into()));
        }
        if weights.iter().chain(bias.iter()).any(|t| !t.is_finite()) {
            return Err(Error::Domain("readout layer has non-finite entries".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Row-wise `x·W + b`.
    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "readout expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut out = x * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(out)
    }
}

/// Closed-form PCA: arithmetic mean and top-`k` covariance eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaPca {
    pub mean: DVector<f64>,
    /// `d×k`, orthonormal, eigenvalue-descending.
    pub directions: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl VanillaPca {
    /// `m + V·Vᵀ·(x_i − m)` for every row.
    pub fn reconstruct(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        let proj = &centered * &self.directions * self.directions.transpose();
        let mut out = proj;
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

pub fn vanilla_pca_oracle(x: &DMatrix<f64>, k: usize) -> Result<VanillaPca> {
    let (n, d) = x.shape();
    if k == 0 || k > d {
        return Err(Error::Config(format!("component count must lie in 1..={d}, got {k}")));
    }
    if n < 2 {
        return Err(Error::Config(format!("PCA needs at least two rows, got {n}")));
    }
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut directions = DMatrix::zeros(d, k);
    let mut eigenvalues = DVector::zeros(k);
    for (out, &src) in order.iter().take(k).enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col.iter().cloned().fold(0.0f64, |best, t| if t.abs() > best.abs() { t } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        directions.set_column(out, &col);
        eigenvalues[out] = eig.eigenvalues[src];
    }
    Ok(VanillaPca {
        mean,
        directions,
        eigenvalues,
    })
}

/// `‖V1·V1ᵀ − V2·V2ᵀ‖_F` for Euclidean-orthonormal `V1`, `V2`.
pub fn subspace_distance(v1: &DMatrix<f64>, v2: &DMatrix<f64>) -> Result<f64> {
    if v1.shape() != v2.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", v1.shape(), v2.shape())));
    }
    for v in [v1, v2] {
        let k = v.ncols();
        let dev = (v.transpose() * v - DMatrix::identity(k, k)).amax();
        if dev > 1e-6 {
            return Err(Error::Domain(format!("basis is not orthonormal (Gram deviation {dev:e})")));
        }
    }
    Ok((v1 * v1.transpose() - v2 * v2.transpose()).norm())
}

/// Orthonormal basis of the column span of `v` (Euclidean).
pub fn orthonormal_basis(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(crate::gqr::qr_householder(v)?.q)
}

fn check_simplex_rows(p: &DMatrix<f64>) -> Result<()> {
    for (i, row) in p.row_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > SIMPLEX_TOLERANCE || row.iter().any(|t| *t < -SIMPLEX_TOLERANCE || !t.is_finite()) {
            return Err(Error::Domain(format!("row {i} is not on the probability simplex")));
        }
    }
    Ok(())
}

/// Mean over rows of `KL(p_i ‖ p̂_i)`.
pub fn avg_kl(p: &DMatrix<f64>, p_hat: &DMatrix<f64>) -> Result<f64> {
    if p.shape() != p_hat.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", p.shape(), p_hat.shape())));
    }
    if p.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    check_simplex_rows(p)?;
    check_simplex_rows(p_hat)?;
    let link = LinkFunction::new(LinkKind::Softmax, p.ncols())?;
    let mut total = 0.0;
    for i in 0..p.nrows() {
        total += link.dual_divergence(&p.row(i).transpose(), &p_hat.row(i).transpose())?;
    }
    Ok(total / p.nrows() as f64)
}

/// Fraction of rows whose readout argmax equals the label; ties go to the lowest index.
pub fn readout_accuracy(x_hat: &DMatrix<f64>, layer: &ReadoutLayer, labels: &[usize]) -> Result<f64> {
    if labels.len() != x_hat.nrows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x_hat.nrows())));
    }
    if x_hat.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= layer.classes()) {
        return Err(Error::Domain(format!("label {bad} outside 0..{}", layer.classes())));
    }
    let logits = layer.logits(x_hat)?;
    let hits = logits
        .row_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(row.iter().cloned()) == label)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in it.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// Vanilla PCA in the pre-activation space of `link`, mapped back through `f`.
///
/// Rows are sent through `f*` (with boundary clipping and, for softmax, the
/// zero-sum gauge), reconstructed with `k` components and mapped back.
pub fn preactivation_pca_baseline(link: &LinkFunction, x: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    if x.ncols() != link.dim() {
        return Err(Error::Shape(format!("data has {} columns, link dimension {}", x.ncols(), link.dim())));
    }
    let mut z = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        let zi = link.apply_inverse(&x.row(i).transpose())?;
        z.set_row(i, &zi.transpose());
    }
    let pca = vanilla_pca_oracle(&z, k)?;
    let recon = pca.reconstruct(&z);
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        out.set_row(i, &link.apply(&recon.row(i).transpose())?.transpose());
    }
    Ok(out)
}

/// Vanilla PCA on logits, reconstructed back onto the simplex.
pub fn logit_pca_baseline(p: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    check_simplex_rows(p)?;
    let link = LinkFunction::new(LinkKind::Softmax, p.ncols())?;
    preactivation_pca_baseline(&link, p, k)
}
