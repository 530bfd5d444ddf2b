//! The `bregman-pca` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or format
//! error, 4 numerical failure. Diagnostics go to standard error; `fit`,
//! `mean` and `gqr --softmax-augment` write their results to standard output.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::bpca::{self, BatchSize, FitOptions, FitReport};
use crate::error::{Error, Result};
use crate::evalkit::{self, ReadoutLayer};
use crate::gqr;
use crate::io::{self, Metrics};
use crate::links::{LinkFunction, LinkKind};
use crate::metric::Metric;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bregman-pca", version, about = "Bregman PCA with a dual mean")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and save it as a bundle directory.
    Fit(FitArgs),
    /// Encode rows into coefficients with a saved model.
    Encode(EncodeArgs),
    /// Reconstruct rows from coefficients.
    Decode(DecodeArgs),
    /// Reconstruction metrics for a dataset.
    Eval(EvalArgs),
    /// Print the dual mean of a dataset.
    Mean(MeanArgs),
    /// QR factorisation orthonormal under a metric.
    Gqr(GqrArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// identity, leaky-relu:<beta>, sigmoid, tanh or softmax.
    #[arg(long)]
    link: String,
    #[arg(long)]
    components: usize,
    #[arg(long, default_value_t = FitOptions::default().lr_coeff)]
    lr_coeff: f64,
    #[arg(long, default_value_t = FitOptions::default().lr_dirs)]
    lr_dirs: f64,
    #[arg(long, default_value_t = FitOptions::default().momentum)]
    momentum: f64,
    #[arg(long, default_value_t = FitOptions::default().max_epochs)]
    max_epochs: usize,
    #[arg(long, default_value_t = FitOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minibatch size; omitted means full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = FitOptions::default().ema_decay)]
    ema_decay: f64,
    /// Fit in streaming mode: `--max-epochs` passes of `--batch-size` minibatches.
    #[arg(long)]
    streaming: bool,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    coeffs_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeOpts {
    /// Iteration cap per row.
    #[arg(long, default_value_t = FitOptions::default().max_epochs)]
    max_iters: usize,
    #[arg(long, default_value_t = FitOptions::default().lr_coeff)]
    lr_coeff: f64,
}

impl EncodeOpts {
    fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_epochs: self.max_iters,
            lr_coeff: self.lr_coeff,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    opts: EncodeOpts,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    coeffs: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Baseline {
    LogitPca,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// d×C readout weights.
    #[arg(long, requires_all = ["readout_b", "labels"])]
    readout_w: Option<PathBuf>,
    /// Readout bias, 1×C or C×1.
    #[arg(long, requires = "readout_w")]
    readout_b: Option<PathBuf>,
    /// Single-column csv of 0-based class labels.
    #[arg(long, requires = "readout_w")]
    labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    opts: EncodeOpts,
}

#[derive(Debug, Args)]
struct MeanArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    link: String,
}

#[derive(Debug, Args)]
struct GqrArgs {
    #[arg(long)]
    input: PathBuf,
    /// Dense SPD metric file.
    #[arg(long, conflicts_with = "metric_diag")]
    metric: Option<PathBuf>,
    /// Diagonal metric entries as one csv row or column.
    #[arg(long)]
    metric_diag: Option<PathBuf>,
    /// Factor `[1 | A]` and drop the ones column (softmax gauge).
    #[arg(long)]
    softmax_augment: bool,
    #[arg(long)]
    q_out: PathBuf,
    #[arg(long)]
    r_out: PathBuf,
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("bregman-pca: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut impl Write) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Mean(a) => cmd_mean(a, out),
        Command::Gqr(a) => cmd_gqr(a, out),
    }
}

fn emit(out: &mut impl Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn link_for(spec: &str, dim: usize) -> Result<LinkFunction> {
    // a spec that does not parse is a usage problem regardless of the data
    spec.parse::<LinkKind>()?;
    LinkFunction::parse(spec, dim)
}

pub fn report_metrics(report: &FitReport) -> Metrics {
    let mut m = Metrics::new();
    m.push("epochs_run", report.epochs_run)
        .push("converged", report.converged)
        .push("final_loss", report.final_loss)
        .push_list("loss_history", &report.loss_history);
    m
}

fn cmd_fit(a: FitArgs, out: &mut impl Write) -> Result<()> {
    let x = io::read_matrix(&a.input)?;
    let link = link_for(&a.link, x.ncols())?;
    let opts = FitOptions {
        lr_coeff: a.lr_coeff,
        lr_dirs: a.lr_dirs,
        momentum: a.momentum,
        max_epochs: a.max_epochs,
        tol: a.tol,
        seed: a.seed,
        batch_size: a.batch_size.map_or(BatchSize::Full, BatchSize::Rows),
        ema_decay: a.ema_decay,
        ..FitOptions::default()
    };
    opts.validate()?;

    let (model, coeffs, report) = if a.streaming {
        let rows = match opts.batch_size {
            BatchSize::Rows(b) => b,
            BatchSize::Full => x.nrows().max(1),
        };
        let batches: Vec<DMatrix<f64>> = (0..x.nrows())
            .step_by(rows)
            .map(|start| x.rows(start, rows.min(x.nrows() - start)).into_owned())
            .collect();
        if batches.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let stream = (0..opts.max_epochs).flat_map(|_| batches.iter());
        let (model, report) = bpca::fit_streaming(stream, &link, a.components, &opts)?;
        let coeffs = match a.coeffs_out {
            Some(_) => Some(model.encode_rows(&x, &FitOptions::default())?),
            None => None,
        };
        (model, coeffs, report)
    } else {
        let fitted = bpca::fit(&x, &link, a.components, &opts)?;
        (fitted.model, Some(fitted.coefficients), fitted.report)
    };

    io::save_model(&model, &a.output)?;
    if let (Some(path), Some(c)) = (&a.coeffs_out, &coeffs) {
        io::write_matrix(c, path)?;
    }
    let mut metrics = Metrics::new();
    metrics
        .push("link", model.link())
        .push("d", model.dim())
        .push("k", model.components())
        .push("rows", x.nrows());
    let mut text = metrics.render();
    text.push_str(&report_metrics(&report).render());
    text.push_str(&format!("conjugacy_error={}\n", model.conjugacy_error()));
    emit(out, &text)
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let x = io::read_matrix(&a.input)?;
    let c = model.encode_rows(&x, &a.opts.fit_options())?;
    io::write_matrix(&c, &a.output)
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let c = io::read_matrix(&a.coeffs)?;
    let x_hat = model.decode_rows(&c)?;
    io::write_matrix(&x_hat, &a.output)
}

fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = io::read_matrix(path)?;
    if m.nrows() != 1 && m.ncols() != 1 {
        return Err(Error::Shape(format!(
            "{} must be a single row or column, got {}x{}",
            path.display(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DVector::from_iterator(m.len(), m.transpose().iter().copied()))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let softmax = model.link().kind() == LinkKind::Softmax;
    if a.baseline == Some(Baseline::LogitPca) && !softmax {
        return Err(Error::Config("--baseline logit-pca requires a softmax model".into()));
    }
    let x = io::read_matrix(&a.input)?;
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let coeffs = model.encode_rows(&x, &a.opts.fit_options())?;
    let x_hat = model.decode_rows(&coeffs)?;
    let n = x.nrows() as f64;

    let mut m = Metrics::new();
    m.push("link", model.link())
        .push("d", model.dim())
        .push("k", model.components())
        .push("rows", x.nrows())
        .push("avg_compression_loss", model.compression_loss(&x, &coeffs)? / n);

    let baseline = match a.baseline {
        Some(Baseline::LogitPca) => Some(evalkit::logit_pca_baseline(&x, model.components())?),
        None => None,
    };
    if softmax {
        let kl = evalkit::avg_kl(&x, &x_hat)?;
        m.push("avg_kl", kl);
        if let Some(b) = &baseline {
            let base_kl = evalkit::avg_kl(&x, b)?;
            m.push("baseline", "logit-pca")
                .push("baseline_avg_kl", base_kl)
                .push("kl_relative_improvement", (base_kl - kl) / base_kl);
        }
    }
    if let (Some(w), Some(b), Some(l)) = (&a.readout_w, &a.readout_b, &a.labels) {
        let layer = ReadoutLayer::new(io::read_matrix(w)?, read_vector(b)?)?;
        let labels = io::read_labels(l)?;
        m.push("readout_accuracy_input", evalkit::readout_accuracy(&x, &layer, &labels)?)
            .push("readout_accuracy", evalkit::readout_accuracy(&x_hat, &layer, &labels)?);
        if let Some(b) = &baseline {
            m.push("baseline_readout_accuracy", evalkit::readout_accuracy(b, &layer, &labels)?);
        }
    }
    m.write_to(&a.output)
}

fn cmd_mean(a: MeanArgs, out: &mut impl Write) -> Result<()> {
    let x = io::read_matrix(&a.input)?;
    let link = link_for(&a.link, x.ncols())?;
    let m = bpca::dual_mean(&link, &x)?;
    let fields: Vec<String> = m.iter().map(|v| v.to_string()).collect();
    emit(out, &format!("{}\n", fields.join(" ")))
}

fn cmd_gqr(a: GqrArgs, out: &mut impl Write) -> Result<()> {
    let x = io::read_matrix(&a.input)?;
    let metric = match (&a.metric, &a.metric_diag) {
        (Some(p), _) => Metric::full(io::read_matrix(p)?)?,
        (None, Some(p)) => Metric::diagonal(read_vector(p)?)?,
        (None, None) => Metric::identity(x.nrows()),
    };
    let factors = if a.softmax_augment {
        let aug = gqr::generalized_qr_softmax(&x, &metric)?;
        let mut m = Metrics::new();
        m.push_list("ones_coeff", aug.ones_coeff.as_slice());
        emit(out, &m.render())?;
        aug.factors
    } else {
        gqr::generalized_qr(&x, &metric)?
    };
    io::write_matrix(&factors.q, &a.q_out)?;
    io::write_matrix(&factors.r, &a.r_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["bregman-pca"]), EXIT_USAGE);
        assert_eq!(run(["bregman-pca", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["bregman-pca", "mean", "--input", "x.csv"]), EXIT_USAGE);
        assert_eq!(
            run(["bregman-pca", "gqr", "--input", "a", "--metric", "m", "--metric-diag", "d", "--q-out", "q", "--r-out", "r"]),
            EXIT_USAGE
        );
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["bregman-pca", "--help"]), EXIT_OK);
    }
}
