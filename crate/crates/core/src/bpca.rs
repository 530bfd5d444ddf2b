//! Bregman PCA with a dual mean.
//!
//! Rows `x_i` live in the dual (post-activation) space of a link `f`. The
//! model approximates each row by `f(m + V·c_i)`, where
//!
//! * `m = f*(mean of the rows)` is the dual mean,
//! * `V` is `d×k` and ends up conjugate under the Hessian metric at `m`
//!   (`Vᵀ·H_F(m)·V = I_k`),
//! * `c_i ∈ R^k` are the compression coefficients.
//!
//! The loss is `Σ_i D_{F*}(x_i, f(m + V·c_i))`. Coefficients and directions
//! are trained by alternating heavy-ball gradient steps; the conjugacy
//! constraint is imposed once at the end through a generalised QR, and the
//! triangular factor is folded into the coefficients so reconstructions do
//! not move.
//!
//! For the softmax link the directions are additionally kept away from
//! `1_d`, to which softmax is blind.
//!
//! With the identity link the loss is `½·Σ‖x_i − m − V·c_i‖²`, half the
//! classical PCA objective; minimisers coincide.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gqr::{generalized_qr, generalized_qr_softmax};
use crate::links::{LinkFunction, LinkKind};
use crate::metric::Metric;

/// A fit aborts once the loss exceeds the initial loss by this factor.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Encoded coefficients must reach `‖Vᵀ(f(m + Vc) − x)‖ ≤ ENCODE_STATIONARITY·(1 + ‖x‖)`.
pub const ENCODE_STATIONARITY: f64 = 1e-6;

/// Newton iterations allowed after the heavy-ball phase of `encode`.
const NEWTON_POLISH_STEPS: usize = 50;

/// Consecutive step-size halvings before an epoch is declared stalled.
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Rows(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Step size for the coefficient updates.
    pub lr_coeff: f64,
    /// Step size for the direction updates; the summed gradient is divided by the batch size.
    pub lr_dirs: f64,
    /// Heavy-ball momentum in `[0, 1)`.
    pub momentum: f64,
    pub max_epochs: usize,
    /// Stop once the relative change of the total loss between epochs drops below this.
    pub tol: f64,
    pub seed: u64,
    pub batch_size: BatchSize,
    /// Weight kept on the running mean per streaming batch.
    pub ema_decay: f64,
    /// Coefficient steps per batch in streaming mode.
    pub inner_steps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lr_coeff: 0.1,
            lr_dirs: 0.01,
            momentum: 0.9,
            max_epochs: 500,
            tol: 1e-7,
            seed: 0,
            batch_size: BatchSize::Full,
            ema_decay: 0.99,
            inner_steps: 10,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("invalid option: {what}")));
        if !(self.lr_coeff > 0.0 && self.lr_coeff.is_finite()) {
            return bad("lr_coeff must be positive");
        }
        if !(self.lr_dirs > 0.0 && self.lr_dirs.is_finite()) {
            return bad("lr_dirs must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.batch_size == BatchSize::Rows(0) {
            return bad("batch_size must be positive");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad("ema_decay must lie in (0, 1)");
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Total compression loss after each epoch (after each batch when streaming).
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
    /// True when the relative-change stopping rule fired (always false for streaming fits).
    pub converged: bool,
    pub final_loss: f64,
}

/// How the pre-activation representative is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gauge {
    None,
    /// Softmax: means and directions are orthogonal to `1_d`.
    ZeroSum,
}

impl Gauge {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gauge::None => "none",
            Gauge::ZeroSum => "zero-sum",
        }
    }
}

/// A fitted model: dual mean and conjugate principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct BpcaModel {
    link: LinkFunction,
    mean: DVector<f64>,
    directions: DMatrix<f64>,
    metric_at_mean: Metric,
}

impl BpcaModel {
    /// Assembles a model from a mean and a `d×k` direction matrix.
    ///
    /// Checks shapes and finiteness only; see [`BpcaModel::conjugacy_error`].
    pub fn from_parts(link: LinkFunction, mean: DVector<f64>, directions: DMatrix<f64>) -> Result<Self> {
        let d = link.dim();
        if mean.len() != d || directions.nrows() != d {
            return Err(Error::Shape(format!(
                "link of dimension {d} with mean of length {} and directions {}x{}",
                mean.len(),
                directions.nrows(),
                directions.ncols()
            )));
        }
        if directions.ncols() == 0 {
            return Err(Error::Config("a model needs at least one component".into()));
        }
        if directions.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("non-finite principal directions".into()));
        }
        let metric_at_mean = link.hessian_at(&mean)?;
        Ok(Self {
            link,
            mean,
            directions,
            metric_at_mean,
        })
    }

    pub fn link(&self) -> &LinkFunction {
        &self.link
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn metric_at_mean(&self) -> &Metric {
        &self.metric_at_mean
    }

    pub fn dim(&self) -> usize {
        self.directions.nrows()
    }

    pub fn components(&self) -> usize {
        self.directions.ncols()
    }

    pub fn gauge(&self) -> Gauge {
        gauge_of(&self.link)
    }

    /// `‖Vᵀ·H_F(m)·V − I‖_F`.
    pub fn conjugacy_error(&self) -> f64 {
        let k = self.components();
        (self.directions.transpose() * self.metric_at_mean.mul(&self.directions) - DMatrix::identity(k, k)).norm()
    }

    /// `f(m + V·c)`.
    pub fn decode(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        if c.len() != self.components() {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                self.components(),
                c.len()
            )));
        }
        let mut a = vec![0.0; self.dim()];
        pre_activation(&self.mean, &self.directions, c.as_slice(), &mut a);
        let mut out = DVector::zeros(self.dim());
        self.link.forward_into(&a, out.as_mut_slice());
        Ok(out)
    }

    /// Decodes every row of an `n×k` coefficient matrix.
    pub fn decode_rows(&self, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(coeffs.nrows(), self.dim());
        for i in 0..coeffs.nrows() {
            let c = coeffs.row(i).transpose();
            out.set_row(i, &self.decode(&c)?.transpose());
        }
        Ok(out)
    }

    /// Coefficients minimising `D_{F*}(x, f(m + V·c))` with `V` fixed.
    ///
    /// Starts from `Vᵀ·H_F(m)·(f*(x) − m)`, which is exact for the identity
    /// link, and runs heavy-ball gradient descent. Momentum is reset whenever
    /// the objective goes up, and the step is halved if a plain step still
    /// fails to decrease it. If `opts.max_epochs` iterations are not enough to
    /// reach stationarity, damped Newton steps on the (convex) row objective
    /// finish the job.
    pub fn encode(&self, x: &DVector<f64>, opts: &FitOptions) -> Result<DVector<f64>> {
        opts.validate()?;
        let xs = x.as_slice();
        let clipped = self.link.clip_dual(xs)?;
        let k = self.components();
        let d = self.dim();
        let h_vt = self.metric_at_mean.mul(&self.directions).transpose();
        let mut c = warm_start(&self.link, &self.mean, &h_vt, &clipped);

        let x_norm = x.norm();
        let stop = opts.tol.min(ENCODE_STATIONARITY) * (1.0 + x_norm);
        let mut ws = Workspace::new(d, k);
        let mut vel = vec![0.0; k];
        let mut lr = opts.lr_coeff;
        let mut obj = self.row_objective(xs, &c, &mut ws);
        let mut grad = vec![0.0; k];
        let slack = |f: f64| f + 1e-13 * (1.0 + f.abs());

        for _ in 0..opts.max_epochs {
            self.row_gradient(xs, &c, &mut grad, &mut ws);
            if norm(&grad) <= stop {
                return Ok(DVector::from_vec(c));
            }
            let trial_vel: Vec<f64> = vel.iter().zip(&grad).map(|(v, g)| opts.momentum * v - lr * g).collect();
            let trial: Vec<f64> = c.iter().zip(&trial_vel).map(|(a, b)| a + b).collect();
            let trial_obj = self.row_objective(xs, &trial, &mut ws);
            if !trial_obj.is_finite() {
                return Err(Error::Encode("objective became non-finite".into()));
            }
            if trial_obj <= slack(obj) {
                c = trial;
                vel = trial_vel;
                obj = trial_obj;
            } else if vel.iter().any(|v| *v != 0.0) {
                vel.iter_mut().for_each(|v| *v = 0.0);
            } else {
                lr *= 0.5;
            }
        }
        // the row objective is convex in c: finish with damped Newton steps
        for _ in 0..NEWTON_POLISH_STEPS {
            self.row_gradient(xs, &c, &mut grad, &mut ws);
            let g = norm(&grad);
            if g <= stop {
                return Ok(DVector::from_vec(c));
            }
            let Some(step) = self.newton_step(&c, &grad, &mut ws) else { break };
            let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-10 {
                let trial: Vec<f64> = c.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                let trial_obj = self.row_objective(xs, &trial, &mut ws);
                let sufficient = trial_obj <= obj - 1e-4 * t * slope;
                // near the optimum the decrease drowns in round-off; fall back to the gradient
                let flat = trial_obj <= slack(obj) && {
                    let mut tg = vec![0.0; k];
                    self.row_gradient(xs, &trial, &mut tg, &mut ws);
                    norm(&tg) < g
                };
                if sufficient || flat {
                    c = trial;
                    obj = trial_obj;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        self.row_gradient(xs, &c, &mut grad, &mut ws);
        let g = norm(&grad);
        if g <= ENCODE_STATIONARITY * (1.0 + x_norm) {
            Ok(DVector::from_vec(c))
        } else {
            Err(Error::Encode(format!(
                "gradient norm {g:e} above stationarity tolerance after {} iterations",
                opts.max_epochs
            )))
        }
    }

    /// Encodes every row of an `n×d` matrix.
    pub fn encode_rows(&self, x: &DMatrix<f64>, opts: &FitOptions) -> Result<DMatrix<f64>> {
        check_width(&self.link, x)?;
        let mut out = DMatrix::zeros(x.nrows(), self.components());
        for i in 0..x.nrows() {
            let row = x.row(i).transpose();
            out.set_row(i, &self.encode(&row, opts)?.transpose());
        }
        Ok(out)
    }

    /// `Σ_i D_{F*}(x_i, f(m + V·c_i))`.
    pub fn compression_loss(&self, x: &DMatrix<f64>, coeffs: &DMatrix<f64>) -> Result<f64> {
        check_width(&self.link, x)?;
        if coeffs.nrows() != x.nrows() || coeffs.ncols() != self.components() {
            return Err(Error::Shape(format!(
                "coefficients {}x{} for {} rows and {} components",
                coeffs.nrows(),
                coeffs.ncols(),
                x.nrows(),
                self.components()
            )));
        }
        let rows = RowMajor::from_matrix(x);
        for i in 0..rows.n {
            self.link.check_dual(rows.row(i))?;
        }
        let c = RowMajor::from_matrix(coeffs);
        Ok(total_loss(&self.link, &self.mean, &self.directions, &rows, &c))
    }

    /// Solves `(Vᵀ·∇²F(a)·V)·s = g` at `a = m + V·c`; `None` if the system is singular.
    fn newton_step(&self, c: &[f64], grad: &[f64], ws: &mut Workspace) -> Option<Vec<f64>> {
        pre_activation(&self.mean, &self.directions, c, &mut ws.a);
        let h = self.link.hessian_raw(&ws.a);
        let mut system = self.directions.transpose() * h.mul(&self.directions);
        let ridge = 1e-14 * system.trace().max(f64::MIN_POSITIVE);
        for j in 0..system.nrows() {
            system[(j, j)] += ridge;
        }
        let chol = system.cholesky()?;
        let s = chol.solve(&DVector::from_column_slice(grad));
        s.iter().all(|v| v.is_finite()).then(|| s.as_slice().to_vec())
    }

    fn row_objective(&self, x: &[f64], c: &[f64], ws: &mut Workspace) -> f64 {
        pre_activation(&self.mean, &self.directions, c, &mut ws.a);
        self.link.matching_loss(x, &ws.a)
    }

    fn row_gradient(&self, x: &[f64], c: &[f64], grad: &mut [f64], ws: &mut Workspace) {
        residual(&self.link, &self.mean, &self.directions, x, c, ws);
        for (j, g) in grad.iter_mut().enumerate() {
            *g = self.directions.column(j).iter().zip(&ws.r).map(|(v, r)| v * r).sum();
        }
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: BpcaModel,
    /// `n×k`, already transformed by the triangular factor of the final projection.
    pub coefficients: DMatrix<f64>,
    pub report: FitReport,
    /// Directions before the final projection.
    pub raw_directions: DMatrix<f64>,
    /// Coefficients before the final projection.
    pub raw_coefficients: DMatrix<f64>,
}

/// `f*` of the arithmetic row mean.
pub fn dual_mean(link: &LinkFunction, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_width(link, x)?;
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let rows = RowMajor::from_matrix(x);
    for i in 0..rows.n {
        link.check_dual(rows.row(i))?;
    }
    mean_from_average(link, &column_mean(&rows))
}

/// Batch fit of a `k`-component model to the rows of `x`.
pub fn fit(x: &DMatrix<f64>, link: &LinkFunction, k: usize, opts: &FitOptions) -> Result<FitOutput> {
    opts.validate()?;
    check_width(link, x)?;
    let (n, d) = x.shape();
    check_components(link, k)?;
    if n < 2 {
        return Err(Error::Config(format!("fit needs at least two rows, got {n}")));
    }
    let rows = RowMajor::from_matrix(x);
    let targets = clipped_rows(link, &rows)?;
    let mean = mean_from_average(link, &column_mean(&rows))?;
    let hessian = link.hessian_raw(mean.as_slice());

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = State {
        v: init_directions(&mut rng, d, k),
        vel_v: DMatrix::zeros(d, k),
        c: RowMajor::zeros(n, k),
        vel_c: RowMajor::zeros(n, k),
    };
    let h_vt = hessian.mul(&state.v).transpose();
    for i in 0..n {
        let c0 = warm_start(link, &mean, &h_vt, targets.row(i));
        state.c.row_mut(i).copy_from_slice(&c0);
    }

    let batch = match opts.batch_size {
        BatchSize::Full => n,
        BatchSize::Rows(b) => b.min(n),
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr_c = opts.lr_coeff;
    let mut lr_v = opts.lr_dirs;
    let mut loss = total_loss(link, &mean, &state.v, &rows, &state.c);
    if !loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss });
    }
    let initial_loss = loss;
    let mut history = Vec::new();
    let mut converged = false;
    let mut ws = Workspace::new(d, k);

    'epochs: for epoch in 1..=opts.max_epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut backtracks = 0;
        let (next, next_loss) = loop {
            let mut trial = state.clone();
            for chunk in order.chunks(batch) {
                coefficient_steps(link, &mean, &rows, chunk, &mut trial, lr_c, opts.momentum, 1, &mut ws);
                direction_step(link, &mean, &rows, chunk, &mut trial, lr_v, opts.momentum, &mut ws);
            }
            let trial_loss = total_loss(link, &mean, &trial.v, &rows, &trial.c);
            if !trial_loss.is_finite() || trial_loss > DIVERGENCE_FACTOR * initial_loss.max(f64::MIN_POSITIVE) {
                return Err(Error::Diverged {
                    epoch,
                    loss: trial_loss,
                });
            }
            if trial_loss <= loss {
                break (trial, trial_loss);
            }
            if state.has_velocity() {
                state.reset_velocity();
            } else {
                backtracks += 1;
                if backtracks > MAX_BACKTRACKS {
                    history.push(loss);
                    converged = true;
                    log::debug!("epoch {epoch}: no descent step found, stopping");
                    break 'epochs;
                }
                lr_c *= 0.5;
                lr_v *= 0.5;
            }
        };
        state = next;
        history.push(next_loss);
        let change = (loss - next_loss) / loss.max(f64::MIN_POSITIVE);
        loss = next_loss;
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let (model, transform) = project(link, mean, &state.v)?;
    let raw_coefficients = state.c.to_matrix();
    let coefficients = &raw_coefficients * transform.transpose();
    Ok(FitOutput {
        model,
        coefficients,
        report: FitReport {
            epochs_run: history.len(),
            final_loss: *history.last().unwrap_or(&loss),
            loss_history: history,
            converged,
        },
        raw_directions: state.v,
        raw_coefficients,
    })
}

/// Online fit over a stream of batches.
///
/// The arithmetic mean is tracked as an exponential moving average (seeded by
/// the first batch) and the dual mean is recomputed from it for every batch.
/// Each batch gets warm-started coefficients, `opts.inner_steps` coefficient
/// steps and a single direction step.
pub fn fit_streaming<'a, I>(batches: I, link: &LinkFunction, k: usize, opts: &FitOptions) -> Result<(BpcaModel, FitReport)>
where
    I: IntoIterator<Item = &'a DMatrix<f64>>,
{
    opts.validate()?;
    check_components(link, k)?;
    let d = link.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v = init_directions(&mut rng, d, k);
    let mut vel_v = DMatrix::zeros(d, k);
    let mut ema: Option<DVector<f64>> = None;
    let mut mean = DVector::zeros(d);
    let mut history = Vec::new();
    let mut first_loss = None;
    let mut ws = Workspace::new(d, k);

    for (t, batch) in batches.into_iter().enumerate() {
        check_width(link, batch)?;
        let n = batch.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let rows = RowMajor::from_matrix(batch);
        let targets = clipped_rows(link, &rows)?;
        let batch_mean = column_mean(&rows);
        let avg = match ema.take() {
            None => batch_mean,
            Some(prev) => prev * opts.ema_decay + batch_mean * (1.0 - opts.ema_decay),
        };
        mean = mean_from_average(link, &avg)?;
        ema = Some(avg);

        let hessian = link.hessian_raw(mean.as_slice());
        let h_vt = hessian.mul(&v).transpose();
        let mut state = State {
            v,
            vel_v,
            c: RowMajor::zeros(n, k),
            vel_c: RowMajor::zeros(n, k),
        };
        for i in 0..n {
            let c0 = warm_start(link, &mean, &h_vt, targets.row(i));
            state.c.row_mut(i).copy_from_slice(&c0);
        }
        let all: Vec<usize> = (0..n).collect();
        coefficient_steps(link, &mean, &rows, &all, &mut state, opts.lr_coeff, opts.momentum, opts.inner_steps, &mut ws);
        let loss = total_loss(link, &mean, &state.v, &rows, &state.c);
        let reference = *first_loss.get_or_insert(loss);
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * reference.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged { epoch: t + 1, loss });
        }
        direction_step(link, &mean, &rows, &all, &mut state, opts.lr_dirs, opts.momentum, &mut ws);
        history.push(loss);
        v = state.v;
        vel_v = state.vel_v;
    }
    if history.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let (model, _) = project(link, mean, &v)?;
    Ok((
        model,
        FitReport {
            epochs_run: history.len(),
            final_loss: *history.last().unwrap(),
            loss_history: history,
            converged: false,
        },
    ))
}

/// Dense metric used for the terminal softmax projection: `H + (tr H/d)·11ᵀ/d`.
///
/// `H = diag(p) − ppᵀ` annihilates `1_d`; the rank-one term lifts that
/// direction to the average eigenvalue. Any `Q` that is conjugate to `1_d`
/// under this metric has zero column sums, so `QᵀHQ = QᵀM̃Q` exactly.
pub fn softmax_projection_metric(hessian: &Metric) -> Metric {
    let mut m = hessian.to_dense();
    let d = m.nrows() as f64;
    let lift = hessian.trace() / (d * d);
    m.add_scalar_mut(lift);
    Metric::Full(m)
}

/// Terminal generalised-QR projection. Returns the model and the triangular factor `T`.
fn project(link: &LinkFunction, mean: DVector<f64>, raw: &DMatrix<f64>) -> Result<(BpcaModel, DMatrix<f64>)> {
    let hessian = link.hessian_raw(mean.as_slice());
    let factors = if link.kind() == LinkKind::Softmax {
        generalized_qr_softmax(raw, &softmax_projection_metric(&hessian))?.factors
    } else {
        generalized_qr(raw, &hessian)?
    };
    let model = BpcaModel {
        link: *link,
        mean,
        directions: factors.q,
        metric_at_mean: hessian,
    };
    Ok((model, factors.r))
}

fn gauge_of(link: &LinkFunction) -> Gauge {
    if link.kind() == LinkKind::Softmax {
        Gauge::ZeroSum
    } else {
        Gauge::None
    }
}

fn check_width(link: &LinkFunction, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != link.dim() {
        return Err(Error::Shape(format!(
            "data has {} columns but the link has dimension {}",
            x.ncols(),
            link.dim()
        )));
    }
    Ok(())
}

fn check_components(link: &LinkFunction, k: usize) -> Result<()> {
    let d = link.dim();
    // softmax loses one dimension to the gauge
    let max = if link.kind() == LinkKind::Softmax { d - 1 } else { d };
    if k == 0 || k > max {
        return Err(Error::Config(format!(
            "component count must lie in 1..={max} for {link} in dimension {d}, got {k}"
        )));
    }
    Ok(())
}

fn mean_from_average(link: &LinkFunction, avg: &DVector<f64>) -> Result<DVector<f64>> {
    link.apply_inverse(avg)
}

fn column_mean(rows: &RowMajor) -> DVector<f64> {
    let mut sum = vec![0.0; rows.d];
    for i in 0..rows.n {
        for (s, x) in sum.iter_mut().zip(rows.row(i)) {
            *s += x;
        }
    }
    DVector::from_iterator(rows.d, sum.into_iter().map(|s| s / rows.n as f64))
}

/// Every row pulled into the open dual domain.
fn clipped_rows(link: &LinkFunction, rows: &RowMajor) -> Result<RowMajor> {
    let mut out = RowMajor::zeros(rows.n, rows.d);
    for i in 0..rows.n {
        out.row_mut(i).copy_from_slice(&link.clip_dual(rows.row(i))?);
    }
    Ok(out)
}

/// Gaussian entries with standard deviation `1/√d`.
fn init_directions(rng: &mut ChaCha8Rng, d: usize, k: usize) -> DMatrix<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    DMatrix::from_fn(d, k, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// `c₀ = Vᵀ·H·(z − m)` with `h_vt = (H·V)ᵀ` precomputed and `z` a clipped dual point.
fn warm_start(link: &LinkFunction, mean: &DVector<f64>, h_vt: &DMatrix<f64>, clipped: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; mean.len()];
    link.inverse_into(clipped, &mut z);
    let diff = DVector::from_iterator(mean.len(), z.iter().zip(mean.iter()).map(|(a, b)| a - b));
    (h_vt * diff).iter().cloned().collect()
}

fn pre_activation(mean: &DVector<f64>, v: &DMatrix<f64>, c: &[f64], out: &mut [f64]) {
    out.copy_from_slice(mean.as_slice());
    for (j, cj) in c.iter().enumerate() {
        for (o, vij) in out.iter_mut().zip(v.column(j).iter()) {
            *o += cj * vij;
        }
    }
}

/// Fills `ws.a = m + V·c` and `ws.r = f(ws.a) − x`.
fn residual(link: &LinkFunction, mean: &DVector<f64>, v: &DMatrix<f64>, x: &[f64], c: &[f64], ws: &mut Workspace) {
    pre_activation(mean, v, c, &mut ws.a);
    link.forward_into(&ws.a, &mut ws.r);
    for (r, xi) in ws.r.iter_mut().zip(x) {
        *r -= xi;
    }
}

fn total_loss(link: &LinkFunction, mean: &DVector<f64>, v: &DMatrix<f64>, rows: &RowMajor, c: &RowMajor) -> f64 {
    let mut a = vec![0.0; rows.d];
    let mut total = 0.0;
    for i in 0..rows.n {
        pre_activation(mean, v, c.row(i), &mut a);
        total += link.matching_loss(rows.row(i), &a);
    }
    total
}

/// `steps` heavy-ball updates `c_i ← c_i − η·Vᵀ(f(m + V·c_i) − x_i)` for the given rows.
#[allow(clippy::too_many_arguments)]
fn coefficient_steps(
    link: &LinkFunction,
    mean: &DVector<f64>,
    rows: &RowMajor,
    idx: &[usize],
    state: &mut State,
    lr: f64,
    momentum: f64,
    steps: usize,
    ws: &mut Workspace,
) {
    for _ in 0..steps {
        for &i in idx {
            residual(link, mean, &state.v, rows.row(i), state.c.row(i), ws);
            for (j, vel) in state.vel_c.row_mut(i).iter_mut().enumerate() {
                let g: f64 = state.v.column(j).iter().zip(&ws.r).map(|(a, b)| a * b).sum();
                *vel = momentum * *vel - lr * g;
            }
            let vel = state.vel_c.row(i).to_vec();
            for (c, dv) in state.c.row_mut(i).iter_mut().zip(&vel) {
                *c += dv;
            }
        }
    }
}

/// One heavy-ball update `V ← V − (η/|B|)·Σ_{i∈B} (f(m + V·c_i) − x_i)·c_iᵀ`.
#[allow(clippy::too_many_arguments)]
fn direction_step(
    link: &LinkFunction,
    mean: &DVector<f64>,
    rows: &RowMajor,
    idx: &[usize],
    state: &mut State,
    lr: f64,
    momentum: f64,
    ws: &mut Workspace,
) {
    let grad = direction_gradient(link, mean, &state.v, rows, &state.c, idx, ws);
    let step = lr / idx.len() as f64;
    state.vel_v *= momentum;
    state.vel_v -= grad * step;
    state.v += &state.vel_v;
}

/// `Σ_{i∈idx} (f(m + V·c_i) − x_i)·c_iᵀ`, accumulated in index order.
fn direction_gradient(
    link: &LinkFunction,
    mean: &DVector<f64>,
    v: &DMatrix<f64>,
    rows: &RowMajor,
    c: &RowMajor,
    idx: &[usize],
    ws: &mut Workspace,
) -> DMatrix<f64> {
    let (d, k) = v.shape();
    let mut grad = DMatrix::zeros(d, k);
    for &i in idx {
        residual(link, mean, v, rows.row(i), c.row(i), ws);
        for (j, cj) in c.row(i).iter().enumerate() {
            for (g, r) in grad.column_mut(j).iter_mut().zip(&ws.r) {
                *g += cj * r;
            }
        }
    }
    grad
}

#[derive(Debug, Clone)]
struct State {
    v: DMatrix<f64>,
    vel_v: DMatrix<f64>,
    c: RowMajor,
    vel_c: RowMajor,
}

impl State {
    fn has_velocity(&self) -> bool {
        self.vel_v.iter().chain(self.vel_c.data.iter()).any(|t| *t != 0.0)
    }

    fn reset_velocity(&mut self) {
        self.vel_v.fill(0.0);
        self.vel_c.data.iter_mut().for_each(|t| *t = 0.0);
    }
}

struct Workspace {
    a: Vec<f64>,
    r: Vec<f64>,
}

impl Workspace {
    fn new(d: usize, _k: usize) -> Self {
        Self {
            a: vec![0.0; d],
            r: vec![0.0; d],
        }
    }
}

/// Contiguous row-major storage; rows are points.
#[derive(Debug, Clone)]
struct RowMajor {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl RowMajor {
    fn zeros(n: usize, d: usize) -> Self {
        Self { n, d, data: vec![0.0; n * d] }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (n, d) = m.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(m.row(i).iter());
        }
        Self { n, d, data }
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.data)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>().sqrt()
}

/// Gradients of the compression loss as implemented by the update rules.
///
/// Exposed for verification against finite differences.
pub mod gradients {
    use super::*;

    /// Loss `Σ_i D_{F*}(x_i, f(m + V·c_i))` for explicit `(m, V, C)`.
    pub fn loss(link: &LinkFunction, mean: &DVector<f64>, v: &DMatrix<f64>, x: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
        total_loss(link, mean, v, &RowMajor::from_matrix(x), &RowMajor::from_matrix(c))
    }

    /// Row `i` holds `Vᵀ(f(m + V·c_i) − x_i)`.
    pub fn coefficients(link: &LinkFunction, mean: &DVector<f64>, v: &DMatrix<f64>, x: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let rows = RowMajor::from_matrix(x);
        let cs = RowMajor::from_matrix(c);
        let mut ws = Workspace::new(v.nrows(), v.ncols());
        let mut out = DMatrix::zeros(c.nrows(), c.ncols());
        for i in 0..rows.n {
            residual(link, mean, v, rows.row(i), cs.row(i), &mut ws);
            let r = DVector::from_column_slice(&ws.r);
            out.set_row(i, &(v.transpose() * r).transpose());
        }
        out
    }

    /// `Σ_i (f(m + V·c_i) − x_i)·c_iᵀ`.
    pub fn directions(link: &LinkFunction, mean: &DVector<f64>, v: &DMatrix<f64>, x: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let rows = RowMajor::from_matrix(x);
        let cs = RowMajor::from_matrix(c);
        let idx: Vec<usize> = (0..rows.n).collect();
        let mut ws = Workspace::new(v.nrows(), v.ncols());
        direction_gradient(link, mean, v, &rows, &cs, &idx, &mut ws)
    }
}
