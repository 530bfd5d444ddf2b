//! Householder QR and its metric-generalised form.
//!
//! [`generalized_qr`] factors `A = Q·R` with `Qᵀ·M·Q = I` by running a
//! standard Householder QR on `√M·A` and mapping the orthonormal factor back
//! through `√(M⁻¹)`. [`generalized_qr_softmax`] prepends a column of ones
//! before factoring and then drops it, which leaves `Q` conjugate to `1_m`.
//!
//! All factorizations are thin: `Q` is `m×n`, `R` is `n×n`, and `R` has a
//! non-negative diagonal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metric::Metric;

/// Pivots smaller than this fraction of `‖A‖_F` are reported as rank deficiency.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub metric: Metric,
}

/// Result of the ones-augmented factorization.
///
/// `A = Q·R + 1_m·ones_coeffᵀ`, where the last term is the part of `A` along
/// the dropped all-ones direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedQr {
    pub factors: QrFactors,
    pub ones_coeff: DVector<f64>,
}

/// Thin Householder QR of an `m×n` matrix, `n ≤ m`.
pub fn qr_householder(a: &DMatrix<f64>) -> Result<QrFactors> {
    let (q, r) = householder(a)?;
    Ok(QrFactors {
        q,
        r,
        metric: Metric::identity(a.nrows()),
    })
}

/// `A = Q·R` with `Qᵀ·M·Q = I_n`.
pub fn generalized_qr(a: &DMatrix<f64>, metric: &Metric) -> Result<QrFactors> {
    if metric.dim() != a.nrows() {
        return Err(Error::Shape(format!(
            "metric of dimension {} for a matrix with {} rows",
            metric.dim(),
            a.nrows()
        )));
    }
    let (root, inv_root) = metric.sqrt_pair()?;
    let (q_tilde, r) = householder(&root.mul(a))?;
    Ok(QrFactors {
        q: inv_root.mul(&q_tilde),
        r,
        metric: metric.clone(),
    })
}

/// Generalised QR of `[1_m | A]` with the ones column dropped afterwards.
///
/// The returned `Q` satisfies `Qᵀ·M·Q = I_n` and `Qᵀ·M·1_m = 0`.
pub fn generalized_qr_softmax(a: &DMatrix<f64>, metric: &Metric) -> Result<AugmentedQr> {
    let (m, n) = a.shape();
    if n >= m {
        return Err(Error::Shape(format!(
            "ones-augmented QR needs fewer columns than rows, got {m}x{n}"
        )));
    }
    let mut aug = DMatrix::from_element(m, n + 1, 1.0);
    aug.view_mut((0, 1), (m, n)).copy_from(a);
    let full = generalized_qr(&aug, metric).map_err(|e| match e {
        Error::Rank { column, pivot, tol } if column > 0 => Error::Rank {
            column: column - 1,
            pivot,
            tol,
        },
        other => other,
    })?;

    let r00 = full.r[(0, 0)];
    let ones_coeff = DVector::from_iterator(n, full.r.view((0, 1), (1, n)).iter().map(|v| v / r00));
    Ok(AugmentedQr {
        factors: QrFactors {
            q: full.q.columns(1, n).into_owned(),
            r: full.r.view((1, 1), (n, n)).into_owned(),
            metric: full.metric,
        },
        ones_coeff,
    })
}

/// Householder sweep. Returns thin `(Q, R)` with `diag(R) ≥ 0`.
fn householder(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, n) = a.shape();
    if n == 0 || n > m {
        return Err(Error::Shape(format!("QR needs 0 < columns ≤ rows, got {m}x{n}")));
    }
    if a.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("QR input has non-finite entries".into()));
    }
    let tol = RANK_TOLERANCE * a.norm();
    let mut w = a.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(n);

    for j in 0..n {
        let x = w.view((j, j), (m - j, 1));
        let xnorm = x.norm();
        if !(xnorm > tol) {
            return Err(Error::Rank { column: j, pivot: xnorm, tol });
        }
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        let mut v: DVector<f64> = x.column(0).into_owned();
        v[0] -= alpha;
        let vnorm = v.norm();
        v /= vnorm;

        for col in j..n {
            let mut column = w.column_mut(col);
            let mut target = column.rows_mut(j, m - j);
            let s = 2.0 * v.dot(&target);
            target.axpy(-s, &v, 1.0);
        }
        reflectors.push(v);
    }

    let mut r = w.rows(0, n).into_owned();
    for i in 1..n {
        for jj in 0..i {
            r[(i, jj)] = 0.0;
        }
    }

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I_m
    let mut q = DMatrix::<f64>::identity(m, n);
    for (j, v) in reflectors.iter().enumerate().rev() {
        for col in 0..n {
            let mut column = q.column_mut(col);
            let mut target = column.rows_mut(j, m - j);
            let s = 2.0 * v.dot(&target);
            target.axpy(-s, v, 1.0);
        }
    }

    for i in 0..n {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    Ok((q, r))
}
