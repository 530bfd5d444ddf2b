//! Extended Bregman PCA with a dual mean.
//!
//! A dataset is summarised by a mean `m` in the primal (pre-activation) space
//! and `k` directions `V`; row `i` is reconstructed as `f(m + V c_i)` where `f`
//! is the gradient of a strictly convex potential (the link). Fitting minimises
//! the dual Bregman divergence between each row and its reconstruction.
//!
//! - [`links`]: link functions, potentials and divergences.
//! - [`metric`]: SPD metrics and their square roots.
//! - [`gqr`]: QR orthonormal under a metric, with the softmax gauge variant.
//! - [`bpca`]: dual mean, batch and streaming fitting, encode/decode.
//! - [`evalkit`]: vanilla PCA oracle, subspace distance, KL and readout metrics.
//! - [`io`]: matrix files, model bundles, metrics documents.
//! - [`cli`]: the `bregman-pca` command line.

// `!(x > t)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bpca;
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod gqr;
pub mod io;
pub mod links;
pub mod metric;

pub use bpca::{dual_mean, fit, fit_streaming, BatchSize, BpcaModel, FitOptions, FitOutput, FitReport, Gauge};
pub use error::{Error, Result};
pub use gqr::{generalized_qr, generalized_qr_softmax, qr_householder, AugmentedQr, QrFactors};
pub use links::{LinkFunction, LinkKind};
pub use metric::Metric;
