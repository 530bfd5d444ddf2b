//! Transfer functions and the Bregman geometry they induce.
//!
//! A [`LinkFunction`] is a strictly monotone transfer function `f = ∇F`.
//! Points in the *primal* space are pre-activations `u`, points in the
//! *dual* space are post-activations `x = f(u)`. Every link carries:
//!
//! * `f` and its inverse `f* = f⁻¹` ([`LinkFunction::apply`], [`LinkFunction::apply_inverse`]),
//! * the potential `F` and its convex conjugate `F*`,
//! * the Bregman divergences `D_F` and `D_{F*}`,
//! * the Hessian metric `∇²F(m)`.
//!
//! Potentials are normalised so that `F(0) = 0` for the elementwise links;
//! softmax uses log-sum-exp. Divergences do not depend on the constant.
//!
//! Softmax is invariant under `u ↦ u + c·1`. Its inverse returns the
//! zero-sum representative.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metric::Metric;

/// Dual inputs on the boundary of the domain are pulled into the interior by this amount.
pub const CLIP_EPSILON: f64 = 1e-12;

/// Slack allowed when checking that a row lies on the closed probability simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-8;

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkKind {
    Identity,
    /// `f(u) = max(u, 0) − β·max(−u, 0)` with `0 < β < 1`.
    LeakyRelu { beta: f64 },
    Sigmoid,
    Tanh,
    Softmax,
}

impl LinkKind {
    pub fn leaky_relu(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Config(format!(
                "leaky-relu slope must satisfy 0 < beta < 1, got {beta}"
            )));
        }
        Ok(LinkKind::LeakyRelu { beta })
    }

    pub fn is_elementwise(&self) -> bool {
        !matches!(self, LinkKind::Softmax)
    }
}

impl FromStr for LinkKind {
    type Err = Error;

    /// Parses `identity`, `leaky-relu:<beta>`, `sigmoid`, `tanh` or `softmax`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LinkKind::Identity),
            "sigmoid" => Ok(LinkKind::Sigmoid),
            "tanh" => Ok(LinkKind::Tanh),
            "softmax" => Ok(LinkKind::Softmax),
            _ => {
                let beta = s
                    .strip_prefix("leaky-relu:")
                    .ok_or_else(|| Error::Config(format!("unknown link `{s}`")))?;
                let beta: f64 = beta
                    .parse()
                    .map_err(|_| Error::Config(format!("bad leaky-relu slope in `{s}`")))?;
                LinkKind::leaky_relu(beta)
            }
        }
    }
}

impl fmt::Display for LinkKind {
    /// Inverse of [`FromStr`]. The slope is printed with the shortest
    /// representation that parses back to the same `f64`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkKind::Identity => write!(f, "identity"),
            LinkKind::LeakyRelu { beta } => write!(f, "leaky-relu:{beta}"),
            LinkKind::Sigmoid => write!(f, "sigmoid"),
            LinkKind::Tanh => write!(f, "tanh"),
            LinkKind::Softmax => write!(f, "softmax"),
        }
    }
}

/// The closed dual domain (post-activation space) of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualDomain {
    Real,
    /// `[0, 1]^d`
    UnitInterval,
    /// `[−1, 1]^d`
    SymmetricInterval,
    /// `{x ≥ 0, Σx = 1}`
    Simplex,
}

/// Primal domain is `R^d` for every link (softmax modulo the direction `1_d`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub dual: DualDomain,
    pub clip_epsilon: f64,
    /// True when the primal domain is only defined modulo `1_d`.
    pub primal_gauge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFunction {
    kind: LinkKind,
    dim: usize,
}

impl LinkFunction {
    pub fn new(kind: LinkKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("link dimension must be positive".into()));
        }
        if let LinkKind::LeakyRelu { beta } = kind {
            LinkKind::leaky_relu(beta)?;
        }
        if kind == LinkKind::Softmax && dim < 2 {
            return Err(Error::Config("softmax needs dimension at least 2".into()));
        }
        Ok(Self { kind, dim })
    }

    /// Parses a link specification string for vectors of length `dim`.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        Self::new(spec.parse()?, dim)
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> DomainSpec {
        let dual = match self.kind {
            LinkKind::Identity | LinkKind::LeakyRelu { .. } => DualDomain::Real,
            LinkKind::Sigmoid => DualDomain::UnitInterval,
            LinkKind::Tanh => DualDomain::SymmetricInterval,
            LinkKind::Softmax => DualDomain::Simplex,
        };
        DomainSpec {
            dual,
            clip_epsilon: CLIP_EPSILON,
            primal_gauge: self.kind == LinkKind::Softmax,
        }
    }

    // ----- checked public API -------------------------------------------------

    /// `f(u)`.
    pub fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_primal(u.as_slice())?;
        let mut out = DVector::zeros(self.dim);
        self.forward_into(u.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `f*(x)`. Boundary inputs are clipped into the interior first.
    pub fn apply_inverse(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let clipped = self.clip_dual(x.as_slice())?;
        let mut out = DVector::zeros(self.dim);
        self.inverse_into(&clipped, out.as_mut_slice());
        Ok(out)
    }

    /// `F(u)`.
    pub fn potential(&self, u: &DVector<f64>) -> Result<f64> {
        self.check_primal(u.as_slice())?;
        Ok(self.potential_raw(u.as_slice()))
    }

    /// `F*(x)`.
    pub fn conjugate_potential(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dual(x.as_slice())?;
        Ok(self.conjugate_raw(x.as_slice()))
    }

    /// `D_F(u, v) = F(u) − F(v) − f(v)·(u − v)`, evaluated literally.
    pub fn bregman_divergence(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.check_primal(u.as_slice())?;
        self.check_primal(v.as_slice())?;
        let mut fv = vec![0.0; self.dim];
        self.forward_into(v.as_slice(), &mut fv);
        let lin: f64 = fv.iter().zip(u.iter().zip(v.iter())).map(|(g, (a, b))| g * (a - b)).sum();
        Ok(self.potential_raw(u.as_slice()) - self.potential_raw(v.as_slice()) - lin)
    }

    /// `D_{F*}(x, y)` in closed form (squared distance, binary KL, generalised KL, ...).
    ///
    /// Zero coordinates of `x` contribute `0·log 0 = 0`. Inside each logarithm
    /// the `y` coordinate is floored at `CLIP_EPSILON`, so `D(x, x) = 0` exactly
    /// and hard labels against a boundary reconstruction stay finite.
    pub fn dual_divergence(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_dual(x.as_slice())?;
        self.check_dual(y.as_slice())?;
        let (x, y) = (x.as_slice(), y.as_slice());
        let d = match self.kind {
            LinkKind::Identity => x.iter().zip(y).map(|(a, b)| 0.5 * (a - b).powi(2)).sum(),
            LinkKind::LeakyRelu { beta } => x
                .iter()
                .zip(y)
                .map(|(&a, &b)| {
                    leaky_conjugate(a, beta) - leaky_conjugate(b, beta) - leaky_inverse(b, beta) * (a - b)
                })
                .sum(),
            LinkKind::Sigmoid => x
                .iter()
                .zip(y)
                .map(|(&a, &b)| xlogy_ratio(a, b) + xlogy_ratio(1.0 - a, 1.0 - b))
                .sum(),
            LinkKind::Tanh => x
                .iter()
                .zip(y)
                .map(|(&a, &b)| 0.5 * (xlogy_ratio(1.0 + a, 1.0 + b) + xlogy_ratio(1.0 - a, 1.0 - b)))
                .sum(),
            LinkKind::Softmax => x
                .iter()
                .zip(y)
                .map(|(&a, &b)| xlogy_ratio(a, b) - a + b)
                .sum(),
        };
        Ok(d)
    }

    /// `∇²F(m)`: diagonal for elementwise links, `diag(p) − ppᵀ` for softmax.
    pub fn hessian_at(&self, m: &DVector<f64>) -> Result<Metric> {
        self.check_primal(m.as_slice())?;
        Ok(self.hessian_raw(m.as_slice()))
    }

    /// Elementwise derivative `f′(u)`; softmax has no elementwise derivative.
    pub fn derivative(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_primal(u.as_slice())?;
        if self.kind == LinkKind::Softmax {
            return Err(Error::Config("softmax has a full Jacobian, use hessian_at".into()));
        }
        Ok(DVector::from_iterator(self.dim, u.iter().map(|&t| self.slope(t))))
    }

    // ----- unchecked kernels --------------------------------------------------

    pub(crate) fn forward_into(&self, u: &[f64], out: &mut [f64]) {
        match self.kind {
            LinkKind::Identity => out.copy_from_slice(u),
            LinkKind::LeakyRelu { beta } => {
                for (o, &t) in out.iter_mut().zip(u) {
                    *o = if t >= 0.0 { t } else { beta * t };
                }
            }
            LinkKind::Sigmoid => {
                for (o, &t) in out.iter_mut().zip(u) {
                    *o = sigmoid(t);
                }
            }
            LinkKind::Tanh => {
                for (o, &t) in out.iter_mut().zip(u) {
                    *o = t.tanh();
                }
            }
            LinkKind::Softmax => {
                let lse = log_sum_exp(u);
                for (o, &t) in out.iter_mut().zip(u) {
                    *o = (t - lse).exp();
                }
            }
        }
    }

    /// `f*` on an already clipped dual point.
    pub(crate) fn inverse_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            LinkKind::Identity => out.copy_from_slice(x),
            LinkKind::LeakyRelu { beta } => {
                for (o, &t) in out.iter_mut().zip(x) {
                    *o = leaky_inverse(t, beta);
                }
            }
            LinkKind::Sigmoid => {
                for (o, &t) in out.iter_mut().zip(x) {
                    *o = t.ln() - (-t).ln_1p();
                }
            }
            LinkKind::Tanh => {
                for (o, &t) in out.iter_mut().zip(x) {
                    *o = t.atanh();
                }
            }
            LinkKind::Softmax => {
                for (o, &t) in out.iter_mut().zip(x) {
                    *o = t.ln();
                }
                let shift = out.iter().sum::<f64>() / out.len() as f64;
                for o in out.iter_mut() {
                    *o -= shift;
                }
            }
        }
    }

    pub(crate) fn potential_raw(&self, u: &[f64]) -> f64 {
        match self.kind {
            LinkKind::Identity => u.iter().map(|t| 0.5 * t * t).sum(),
            LinkKind::LeakyRelu { beta } => u
                .iter()
                .map(|&t| if t >= 0.0 { 0.5 * t * t } else { 0.5 * beta * t * t })
                .sum(),
            LinkKind::Sigmoid => u.iter().map(|&t| softplus(t) - LN_2).sum(),
            LinkKind::Tanh => u.iter().map(|&t| log_cosh(t)).sum(),
            LinkKind::Softmax => log_sum_exp(u),
        }
    }

    pub(crate) fn conjugate_raw(&self, x: &[f64]) -> f64 {
        match self.kind {
            LinkKind::Identity => x.iter().map(|t| 0.5 * t * t).sum(),
            LinkKind::LeakyRelu { beta } => x.iter().map(|&t| leaky_conjugate(t, beta)).sum(),
            LinkKind::Sigmoid => x
                .iter()
                .map(|&t| xlogx(t) + xlogx(1.0 - t) + LN_2)
                .sum(),
            LinkKind::Tanh => x
                .iter()
                .map(|&t| 0.5 * (xlogx(1.0 + t) + xlogx(1.0 - t)))
                .sum(),
            LinkKind::Softmax => x.iter().map(|&t| xlogx(t)).sum(),
        }
    }

    pub(crate) fn hessian_raw(&self, m: &[f64]) -> Metric {
        if self.kind == LinkKind::Softmax {
            let mut p = vec![0.0; self.dim];
            self.forward_into(m, &mut p);
            let full = DMatrix::from_fn(self.dim, self.dim, |i, j| {
                let diag = if i == j { p[i] } else { 0.0 };
                diag - p[i] * p[j]
            });
            Metric::Full(full)
        } else {
            Metric::Diagonal(DVector::from_iterator(self.dim, m.iter().map(|&t| self.slope(t))))
        }
    }

    fn slope(&self, t: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => 1.0,
            // right derivative at exactly zero
            LinkKind::LeakyRelu { beta } => {
                if t >= 0.0 {
                    1.0
                } else {
                    beta
                }
            }
            LinkKind::Sigmoid => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
            LinkKind::Tanh => {
                let th = t.tanh();
                1.0 - th * th
            }
            LinkKind::Softmax => unreachable!("softmax slope is a matrix"),
        }
    }

    /// `D_{F*}(x, f(a))` without forming `f(a)` where that would lose precision.
    ///
    /// This is the per-row compression loss. `x` must already lie in the closed
    /// dual domain and `a` must be finite.
    pub(crate) fn matching_loss(&self, x: &[f64], a: &[f64]) -> f64 {
        match self.kind {
            LinkKind::Identity => x.iter().zip(a).map(|(p, q)| 0.5 * (p - q).powi(2)).sum(),
            LinkKind::LeakyRelu { beta } => x
                .iter()
                .zip(a)
                .map(|(&xi, &ai)| {
                    // D_F(a, f*(x)) by duality
                    let z = leaky_inverse(xi, beta);
                    let fa = |t: f64| if t >= 0.0 { 0.5 * t * t } else { 0.5 * beta * t * t };
                    fa(ai) - fa(z) - xi * (ai - z)
                })
                .sum(),
            LinkKind::Sigmoid => x
                .iter()
                .zip(a)
                .map(|(&xi, &ai)| {
                    // log σ(a) = −softplus(−a), log(1 − σ(a)) = −softplus(a)
                    xlogx(xi) + xi * softplus(-ai) + xlogx(1.0 - xi) + (1.0 - xi) * softplus(ai)
                })
                .sum(),
            LinkKind::Tanh => x
                .iter()
                .zip(a)
                .map(|(&xi, &ai)| {
                    // log(1 ± tanh a) = ln 2 − softplus(∓2a)
                    let lp = LN_2 - softplus(-2.0 * ai);
                    let lm = LN_2 - softplus(2.0 * ai);
                    0.5 * (xlogx(1.0 + xi) - (1.0 + xi) * lp + xlogx(1.0 - xi) - (1.0 - xi) * lm)
                })
                .sum(),
            LinkKind::Softmax => {
                let lse = log_sum_exp(a);
                let sum_x: f64 = x.iter().sum();
                let cross: f64 = x
                    .iter()
                    .zip(a)
                    .map(|(&xi, &ai)| xlogx(xi) - xi * (ai - lse))
                    .sum();
                // Σ softmax(a) = 1
                cross + 1.0 - sum_x
            }
        }
    }

    // ----- domain handling ----------------------------------------------------

    pub(crate) fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "expected a vector of length {}, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_primal(&self, u: &[f64]) -> Result<()> {
        self.check_len(u)?;
        if u.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("non-finite pre-activation".into()));
        }
        Ok(())
    }

    /// Checks membership of the closed dual domain.
    pub(crate) fn check_dual(&self, x: &[f64]) -> Result<()> {
        self.check_len(x)?;
        if x.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("non-finite post-activation".into()));
        }
        let bad = |lo: f64, hi: f64| x.iter().position(|&t| t < lo - CLIP_EPSILON || t > hi + CLIP_EPSILON);
        let outside = match self.kind {
            LinkKind::Identity | LinkKind::LeakyRelu { .. } => None,
            LinkKind::Sigmoid => bad(0.0, 1.0),
            LinkKind::Tanh => bad(-1.0, 1.0),
            LinkKind::Softmax => {
                if let Some(j) = bad(0.0, 1.0) {
                    Some(j)
                } else {
                    let s: f64 = x.iter().sum();
                    if (s - 1.0).abs() > SIMPLEX_TOLERANCE {
                        return Err(Error::Domain(format!(
                            "row is not on the probability simplex (sum {s})"
                        )));
                    }
                    None
                }
            }
        };
        match outside {
            Some(j) => Err(Error::Domain(format!(
                "coordinate {j} = {} outside the domain of {}",
                x[j], self.kind
            ))),
            None => Ok(()),
        }
    }

    /// Validates and pulls a dual point into the open interior.
    pub(crate) fn clip_dual(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dual(x)?;
        let eps = CLIP_EPSILON;
        let out = match self.kind {
            LinkKind::Identity | LinkKind::LeakyRelu { .. } => x.to_vec(),
            LinkKind::Sigmoid => x.iter().map(|t| t.clamp(eps, 1.0 - eps)).collect(),
            LinkKind::Tanh => x.iter().map(|t| t.clamp(-1.0 + eps, 1.0 - eps)).collect(),
            LinkKind::Softmax => {
                let mut v: Vec<f64> = x.iter().map(|t| t.max(eps)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|t| *t /= s);
                v
            }
        };
        Ok(out)
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

// ----- scalar helpers ---------------------------------------------------------

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn log_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

pub(crate) fn log_sum_exp(u: &[f64]) -> f64 {
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + u.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn xlogx(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// `a·log(a/b)` with `0·log 0 = 0`.
fn xlogy_ratio(a: f64, b: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        a * (a / b.max(CLIP_EPSILON)).ln()
    }
}

fn leaky_inverse(x: f64, beta: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x / beta
    }
}

/// `½·x·f_{1/β}(x)`
fn leaky_conjugate(x: f64, beta: f64) -> f64 {
    0.5 * x * leaky_inverse(x, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn link(spec: &str, d: usize) -> LinkFunction {
        LinkFunction::parse(spec, d).unwrap()
    }

    fn all_links(d: usize) -> Vec<LinkFunction> {
        ["identity", "leaky-relu:0.3", "sigmoid", "tanh", "softmax"]
            .iter()
            .map(|s| link(s, d))
            .collect()
    }

    fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["identity", "leaky-relu:0.01", "sigmoid", "tanh", "softmax"] {
            let k: LinkKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert_eq!(
            "leaky-relu:0.01".parse::<LinkKind>().unwrap(),
            LinkKind::LeakyRelu { beta: 0.01 }
        );
    }

    #[test]
    fn malformed_specs_are_config_errors() {
        for s in ["Identity", "relu", "leaky-relu", "leaky-relu:", "leaky-relu:1.5", "leaky-relu:0", "leaky-relu:x"] {
            assert!(matches!(s.parse::<LinkKind>(), Err(Error::Config(_))), "{s}");
        }
    }

    #[test]
    fn apply_examples() {
        assert_eq!(link("identity", 2).apply(&dvector![1.0, -2.0]).unwrap(), dvector![1.0, -2.0]);
        assert_eq!(
            link("leaky-relu:0.5", 2).apply(&dvector![2.0, -2.0]).unwrap(),
            dvector![2.0, -1.0]
        );
        let p = link("softmax", 2).apply(&dvector![0.0, 0.0]).unwrap();
        assert_relative_eq!(p, dvector![0.5, 0.5], epsilon = 1e-15);
        assert!(link("tanh", 1).apply(&dvector![f64::NAN]).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(link("identity", 1).apply_inverse(&dvector![3.0]).unwrap(), dvector![3.0]);
        let l = link("leaky-relu:0.5", 1);
        let u = l.apply_inverse(&dvector![-3.0]).unwrap();
        assert_eq!(u, dvector![-6.0]);
        assert_eq!(l.apply(&u).unwrap(), dvector![-3.0]);
        let z = link("softmax", 2).apply_inverse(&dvector![0.5, 0.5]).unwrap();
        assert_relative_eq!(z, dvector![0.0, 0.0], epsilon = 1e-15);
    }

    #[test]
    fn inverse_rejects_outside_closed_domain() {
        assert!(matches!(link("sigmoid", 1).apply_inverse(&dvector![1.5]), Err(Error::Domain(_))));
        assert!(matches!(link("tanh", 1).apply_inverse(&dvector![-1.1]), Err(Error::Domain(_))));
        assert!(matches!(
            link("softmax", 2).apply_inverse(&dvector![0.5, 0.6]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            link("softmax", 2).apply_inverse(&dvector![1.2, -0.2]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn boundary_points_are_clipped() {
        let z = link("sigmoid", 2).apply_inverse(&dvector![0.0, 1.0]).unwrap();
        assert!(z.iter().all(|t| t.is_finite()));
        let z = link("softmax", 3).apply_inverse(&dvector![1.0, 0.0, 0.0]).unwrap();
        assert!(z.iter().all(|t| t.is_finite()));
        assert!(z.sum().abs() < 1e-9);
    }

    #[test]
    fn potential_examples() {
        assert_eq!(link("identity", 2).potential(&dvector![2.0, 0.0]).unwrap(), 2.0);
        assert_eq!(link("leaky-relu:0.5", 1).potential(&dvector![-2.0]).unwrap(), 1.0);
        assert_relative_eq!(
            link("softmax", 2).potential(&dvector![0.0, 0.0]).unwrap(),
            LN_2,
            epsilon = 1e-15
        );
        for l in all_links(3) {
            if l.kind().is_elementwise() {
                assert_eq!(l.potential(&DVector::zeros(3)).unwrap(), 0.0, "{l}");
            }
        }
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(link("identity", 2).conjugate_potential(&dvector![2.0, 0.0]).unwrap(), 2.0);
        assert_eq!(link("leaky-relu:0.5", 1).conjugate_potential(&dvector![-3.0]).unwrap(), 9.0);
        assert_relative_eq!(
            link("softmax", 2).conjugate_potential(&dvector![0.5, 0.5]).unwrap(),
            -LN_2,
            epsilon = 1e-15
        );
    }

    /// Trapezoid-free oracle: Simpson's rule on ∫ f between v and u, coordinatewise.
    fn integrate_link(l: &LinkFunction, a: f64, b: f64) -> f64 {
        let n = 2000;
        let h = (b - a) / n as f64;
        let f = |t: f64| {
            let mut o = [0.0];
            l.forward_into(&[t], &mut o);
            o[0]
        };
        let mut s = f(a) + f(b);
        for i in 1..n {
            let t = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        s * h / 3.0
    }

    #[test]
    fn bregman_examples() {
        let id = link("identity", 2);
        assert_eq!(id.bregman_divergence(&dvector![1.0, 2.0], &dvector![1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(id.bregman_divergence(&dvector![1.0, 0.0], &dvector![0.0, 0.0]).unwrap(), 0.5);

        let l = link("leaky-relu:0.5", 1);
        let d = l.bregman_divergence(&dvector![-2.0], &dvector![2.0]).unwrap();
        assert_relative_eq!(d, 7.0, epsilon = 1e-14);
        // cross-check: F(u) − F(v) = ∫_v^u f, kink at 0 split for Simpson
        let integral = integrate_link(&l, 2.0, 0.0) + integrate_link(&l, 0.0, -2.0);
        assert_relative_eq!(integral - 2.0 * (-4.0), 7.0, epsilon = 1e-9);
    }

    #[test]
    fn potentials_match_numerical_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in ["sigmoid", "tanh", "leaky-relu:0.2"] {
            let l = link(spec, 1);
            for _ in 0..20 {
                let u: f64 = rng.random_range(-4.0..4.0);
                let want = if u >= 0.0 { integrate_link(&l, 0.0, u) } else { -integrate_link(&l, u, 0.0) };
                assert_relative_eq!(l.potential_raw(&[u]), want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn dual_divergence_examples() {
        let sm = link("softmax", 2);
        assert_eq!(sm.dual_divergence(&dvector![0.3, 0.7], &dvector![0.3, 0.7]).unwrap(), 0.0);
        assert_relative_eq!(
            sm.dual_divergence(&dvector![1.0, 0.0], &dvector![0.5, 0.5]).unwrap(),
            LN_2,
            epsilon = 1e-15
        );
        assert_eq!(
            link("identity", 2).dual_divergence(&dvector![1.0, 1.0], &dvector![0.0, 0.0]).unwrap(),
            1.0
        );
    }

    #[test]
    fn hessian_examples() {
        assert_eq!(
            link("identity", 2).hessian_at(&dvector![5.0, -3.0]).unwrap(),
            Metric::Diagonal(dvector![1.0, 1.0])
        );
        assert_eq!(
            link("leaky-relu:0.5", 2).hessian_at(&dvector![2.0, -2.0]).unwrap(),
            Metric::Diagonal(dvector![1.0, 0.5])
        );
        assert_eq!(
            link("leaky-relu:0.5", 1).hessian_at(&dvector![0.0]).unwrap(),
            Metric::Diagonal(dvector![1.0])
        );
        let h = link("softmax", 2).hessian_at(&dvector![0.0, 0.0]).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert_relative_eq!(h.to_dense(), want, epsilon = 1e-15);
    }

    #[test]
    fn non_negativity_and_indiscernibles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for l in all_links(4) {
            for _ in 0..1000 {
                let u = random_vec(&mut rng, 4, 5.0);
                let v = random_vec(&mut rng, 4, 5.0);
                assert!(l.bregman_divergence(&u, &v).unwrap() >= -1e-12, "{l}");
                assert!(l.bregman_divergence(&u, &u).unwrap().abs() <= 1e-12, "{l}");
            }
        }
        // softmax is blind to the 1_d direction
        let sm = link("softmax", 3);
        let u = dvector![0.1, -0.4, 2.0];
        let v = &u + DVector::from_element(3, 7.0);
        assert!(sm.bregman_divergence(&u, &v).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matching_loss_agrees_with_dual_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for l in all_links(5) {
            for _ in 0..200 {
                let a = random_vec(&mut rng, 5, 4.0);
                let x = l.apply(&random_vec(&mut rng, 5, 4.0)).unwrap();
                let fa = l.apply(&a).unwrap();
                let want = l.dual_divergence(&x, &fa).unwrap();
                let got = l.matching_loss(x.as_slice(), a.as_slice());
                assert_relative_eq!(got, want, epsilon = 1e-10, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn gradient_of_divergence_is_link_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for l in all_links(4) {
            for _ in 0..50 {
                let u = random_vec(&mut rng, 4, 3.0);
                let v = random_vec(&mut rng, 4, 3.0);
                let analytic = l.apply(&u).unwrap() - l.apply(&v).unwrap();
                for j in 0..4 {
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[j] += h;
                    dn[j] -= h;
                    let fd = (l.bregman_divergence(&up, &v).unwrap() - l.bregman_divergence(&dn, &v).unwrap())
                        / (2.0 * h);
                    let err = (fd - analytic[j]).abs() / analytic[j].abs().max(1e-2);
                    assert!(err <= 1e-5, "{l}: fd {fd} vs {}", analytic[j]);
                }
            }
        }
    }

    #[test]
    fn hessian_matches_finite_difference_of_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-6;
        for l in all_links(3) {
            let m = random_vec(&mut rng, 3, 2.0);
            let dense = l.hessian_at(&m).unwrap().to_dense();
            for j in 0..3 {
                let mut up = m.clone();
                let mut dn = m.clone();
                up[j] += h;
                dn[j] -= h;
                let col = (l.apply(&up).unwrap() - l.apply(&dn).unwrap()) / (2.0 * h);
                for i in 0..3 {
                    assert!((col[i] - dense[(i, j)]).abs() < 1e-6, "{l}");
                }
            }
            if l.kind() == LinkKind::Softmax {
                let ones = DVector::from_element(3, 1.0);
                assert!((dense * ones).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for l in all_links(6) {
            for _ in 0..200 {
                let u = random_vec(&mut rng, 6, 4.0);
                let x = l.apply(&u).unwrap();
                let back = l.apply_inverse(&x).unwrap();
                let want = if l.kind() == LinkKind::Softmax {
                    let mean = u.mean();
                    u.map(|t| t - mean)
                } else {
                    u.clone()
                };
                assert!((back - want).amax() < 1e-10, "{l}");
                let again = l.apply(&l.apply_inverse(&x).unwrap()).unwrap();
                assert!((again - &x).amax() < 1e-10, "{l}");
            }
        }
    }
}
