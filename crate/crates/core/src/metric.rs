//! Symmetric positive (semi)definite Riemannian metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a metric is treated as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;

/// Regularisation used for the softmax Hessian, which is singular along `1_d`.
pub const DEFAULT_EPS_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Metric {
    pub fn identity(dim: usize) -> Self {
        Metric::Diagonal(DVector::from_element(dim, 1.0))
    }

    /// Validating constructor for a diagonal metric.
    pub fn diagonal(entries: DVector<f64>) -> Result<Self> {
        if entries.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::Domain("diagonal metric entries must be positive and finite".into()));
        }
        Ok(Metric::Diagonal(entries))
    }

    /// Validating constructor for a dense metric: square, finite, symmetric and PSD.
    pub fn full(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!("metric must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("metric has non-finite entries".into()));
        }
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * m.amax().max(1.0) {
            return Err(Error::Domain(format!("metric is not symmetric (max deviation {asym:e})")));
        }
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        let max = eig.max();
        if eig.min() < -1e-10 * max.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Domain(format!("metric is not positive semidefinite (eigenvalue {:e})", eig.min())));
        }
        Ok(Metric::Full(m))
    }

    pub fn dim(&self) -> usize {
        match self {
            Metric::Diagonal(d) => d.len(),
            Metric::Full(m) => m.nrows(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Metric::Diagonal(d) => d.sum(),
            Metric::Full(m) => m.trace(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Metric::Diagonal(d) => DMatrix::from_diagonal(d),
            Metric::Full(m) => m.clone(),
        }
    }

    /// `M·A`
    pub fn mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Metric::Diagonal(d) => {
                let mut out = a.clone();
                for (mut row, s) in out.row_iter_mut().zip(d.iter()) {
                    row *= *s;
                }
                out
            }
            Metric::Full(m) => m * a,
        }
    }

    /// `M·v`
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Metric::Diagonal(d) => d.component_mul(v),
            Metric::Full(m) => m * v,
        }
    }

    /// Symmetric square root `S` with `S·S = M`.
    pub fn sqrt(&self) -> Result<Metric> {
        self.spectral_map(f64::sqrt)
    }

    /// Symmetric inverse square root `S⁻` with `S⁻·M·S⁻ = I`.
    pub fn inv_sqrt(&self) -> Result<Metric> {
        self.spectral_map(|l| 1.0 / l.sqrt())
    }

    /// Both roots from a single eigendecomposition.
    pub fn sqrt_pair(&self) -> Result<(Metric, Metric)> {
        match self {
            Metric::Diagonal(d) => {
                check_spectrum(d.min(), d.max())?;
                Ok((Metric::Diagonal(d.map(f64::sqrt)), Metric::Diagonal(d.map(|l| 1.0 / l.sqrt()))))
            }
            Metric::Full(m) => {
                let (vecs, vals) = clamped_eigen(m)?;
                Ok((
                    Metric::Full(reassemble(&vecs, &vals.map(f64::sqrt))),
                    Metric::Full(reassemble(&vecs, &vals.map(|l| 1.0 / l.sqrt()))),
                ))
            }
        }
    }

    /// `M + (eps_rel·trace(M)/d)·I`.
    pub fn regularize(&self, eps_rel: f64) -> Metric {
        let shift = eps_rel * self.trace() / self.dim() as f64;
        match self {
            Metric::Diagonal(d) => Metric::Diagonal(d.add_scalar(shift)),
            Metric::Full(m) => {
                let mut out = m.clone();
                for i in 0..out.nrows() {
                    out[(i, i)] += shift;
                }
                Metric::Full(out)
            }
        }
    }

    fn spectral_map(&self, g: impl Fn(f64) -> f64) -> Result<Metric> {
        match self {
            Metric::Diagonal(d) => {
                check_spectrum(d.min(), d.max())?;
                Ok(Metric::Diagonal(d.map(g)))
            }
            Metric::Full(m) => {
                let (vecs, vals) = clamped_eigen(m)?;
                Ok(Metric::Full(reassemble(&vecs, &vals.map(g))))
            }
        }
    }
}

fn check_spectrum(min: f64, max: f64) -> Result<()> {
    if !(max > 0.0) || !(min > SINGULAR_TOLERANCE * max) {
        return Err(Error::SingularMetric { min_eig: min, max_eig: max });
    }
    Ok(())
}

/// Eigendecomposition with eigenvalues clamped at zero, rejecting singular spectra.
fn clamped_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|l| l.max(0.0));
    check_spectrum(vals.min(), vals.max())?;
    Ok((eig.eigenvectors, vals))
}

fn reassemble(vecs: &DMatrix<f64>, vals: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vecs.clone();
    for (mut col, l) in scaled.column_iter_mut().zip(vals.iter()) {
        col *= *l;
    }
    let out = scaled * vecs.transpose();
    // symmetrise away round-off
    (&out + out.transpose()) * 0.5
}
