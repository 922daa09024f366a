//! `irl1` command-line front end: instance generation, single solves,
//! experiment campaigns and 2-D contour data.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use irl1::diagnostics::{
    contour_grid, map_laplace_scales, quadratic_bowl, weighted_l1_certificate, CertificateReport, GridSpec,
    DEFAULT_MARGIN,
};
use irl1::experiment::{run_experiment, write_report, ExperimentConfig, ModelChoice};
use irl1::format::write_json;
use irl1::instance::{generate_ensemble, generate_instance, DEFAULT_NOISE_STD};
use irl1::problem::MatrixContainer;
use irl1::solver::{solve, support_of, write_trace_csv, SolveStatus, SolverOptions};
use irl1::{EpsStrategy, Profile};

#[derive(Parser)]
#[command(name = "irl1", version, about = "Iteratively reweighted l1 solver for lp-regularized least squares")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded sparse-recovery instances as JSON.
    Gen(GenArgs),
    /// Solve one instance file.
    Solve(SolveArgs),
    /// Run a paired campaign over a generated ensemble.
    Experiment(ExperimentArgs),
    /// Emit lp, l1 and certified weighted-l1 grids for a 2-D quadratic bowl.
    Contour(ContourArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Regularization weight (0.05 for solve/experiment, 0.1 for contour when omitted).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    mu: f64,
    /// Initial epsilon; a comma-separated list sweeps several values in `experiment`.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    eps0: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 1e-4)]
    gamma: f64,
    #[arg(long = "gamma-bar", default_value_t = 1.1)]
    gamma_bar: f64,
    #[arg(long, default_value_t = 1e-6)]
    opttol: f64,
    #[arg(long = "max-iter", default_value_t = 500)]
    max_iter: usize,
    /// `sr` or `geometric`; a comma-separated list compares strategies in `experiment`.
    #[arg(long = "eps-strategy", value_delimiter = ',', default_value = "sr")]
    eps_strategy: Vec<EpsStrategy>,
    /// `prox` (beta I) or `dquad` (AᵀA + beta I).
    #[arg(long, default_value = "prox")]
    model: ModelChoice,
    #[arg(long = "line-search", default_value_t = true, action = clap::ArgAction::Set)]
    line_search: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "IRL1_DEFAULT_OUT", default_value = "irl1-out")]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn lambda_or(&self, default: f64) -> f64 {
        self.lambda.unwrap_or(default)
    }

    fn single_eps0(&self) -> anyhow::Result<f64> {
        match self.eps0.as_slice() {
            [e] => Ok(*e),
            _ => bail!("expected a single --eps0 value, got {}", self.eps0.len()),
        }
    }

    fn single_strategy(&self) -> anyhow::Result<EpsStrategy> {
        match self.eps_strategy.as_slice() {
            [s] => Ok(*s),
            _ => bail!("expected a single --eps-strategy value, got {}", self.eps_strategy.len()),
        }
    }

    /// Options with a proximal model; callers swap in a dense model when needed.
    fn options(&self, lambda: f64) -> anyhow::Result<SolverOptions> {
        Ok(SolverOptions {
            p: self.p,
            lambda,
            eps0: self.eps0.first().copied().unwrap_or(1.0),
            mu: self.mu,
            model: irl1::ModelKind::proximal(self.beta)?,
            gamma: self.gamma,
            gamma_bar: self.gamma_bar,
            opttol: self.opttol,
            max_iter: self.max_iter,
            eps_strategy: self.eps_strategy.first().copied().unwrap_or(EpsStrategy::SmartReweighting),
            use_line_search: self.line_search,
            ..SolverOptions::default()
        })
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Standard shape preset; ignored when `--m`, `--n` and `--k` are all given.
    #[arg(long, default_value = "small")]
    profile: Profile,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Number of instances, seeds `seed, seed+1, …` (default 1).
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long = "noise-std", default_value_t = DEFAULT_NOISE_STD)]
    noise_std: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Instance JSON (`m`, `n`, `A` row-major, `y`; `x_true` optional).
    instance: PathBuf,
    /// Also write the per-iteration trace to `<out>/trace.csv`.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "small")]
    profile: Profile,
    /// Instances in the ensemble (profile default when omitted).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long = "noise-std", default_value_t = DEFAULT_NOISE_STD)]
    noise_std: f64,
}

#[derive(Args)]
struct ContourArgs {
    #[command(flatten)]
    common: Common,
    /// Bowl center `c` in `f(x) = ‖x − c‖²`.
    #[arg(long, value_delimiter = ',', default_value = "0.5,5")]
    center: Vec<f64>,
    #[arg(long = "x-range", value_delimiter = ',', default_value = "-1,1", allow_hyphen_values = true)]
    x_range: Vec<f64>,
    #[arg(long = "y-range", value_delimiter = ',', default_value = "-1,6", allow_hyphen_values = true)]
    y_range: Vec<f64>,
    /// Grid points per axis, endpoints included.
    #[arg(long, default_value_t = 400)]
    resolution: usize,
    /// Solver starting point for the certified solution (origin when omitted).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
}

#[derive(Deserialize)]
struct InstanceFile {
    #[serde(flatten)]
    container: MatrixContainer,
    #[serde(default)]
    x_true: Option<Vec<f64>>,
}

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Converged => 0,
        SolveStatus::MaxIterations => 2,
        SolveStatus::LineSearchFailure => 3,
    }
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn cmd_gen(args: &GenArgs) -> anyhow::Result<u8> {
    create_out(&args.common.out)?;
    let instances = match (args.m, args.n, args.k) {
        (Some(m), Some(n), Some(k)) => (0..args.count as u64)
            .map(|j| generate_instance(m, n, k, args.common.seed.wrapping_add(j), args.noise_std))
            .collect::<irl1::Result<Vec<_>>>()?,
        (None, None, None) => generate_ensemble(args.profile, args.count, args.common.seed, args.noise_std)?,
        _ => bail!("--m, --n and --k must be given together"),
    };
    for inst in &instances {
        let path = args.common.out.join(format!("instance_{}.json", inst.seed));
        write_json(&path, inst)?;
        println!("{}", path.display());
    }
    Ok(0)
}

fn cmd_solve(args: &SolveArgs) -> anyhow::Result<u8> {
    let common = &args.common;
    let text = std::fs::read_to_string(&args.instance)
        .with_context(|| format!("cannot read instance file {}", args.instance.display()))?;
    let file: InstanceFile =
        serde_json::from_str(&text).with_context(|| format!("malformed instance file {}", args.instance.display()))?;
    let objective = file.container.into_objective().context("inconsistent instance dimensions")?;
    if let Some(x_true) = &file.x_true {
        if x_true.len() != objective.matrix().ncols() {
            bail!("x_true has length {}, expected {}", x_true.len(), objective.matrix().ncols());
        }
    }

    let lambda = common.lambda_or(0.05);
    let mut options = common.options(lambda)?;
    options.eps0 = common.single_eps0()?;
    options.eps_strategy = common.single_strategy()?;
    options.model = common.model.build(common.beta, &objective)?;
    let problem = options.problem(objective)?;
    let result = solve(&problem, &options)?;

    create_out(&common.out)?;
    let x_star = &result.final_x;
    let support = support_of(x_star);
    let support_correct = file.x_true.as_ref().map(|t| {
        let truth: Vec<usize> = t.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
        truth == support
    });
    let last = result.final_record();
    let report = serde_json::json!({
        "status": result.status,
        "iterations": result.iterations,
        "support_stable_at": result.support_stable_at,
        "ratio": result.stabilization_ratio(),
        "final_residual": result.final_residual(),
        "objective": last.f,
        "smoothed_objective": last.f_smoothed,
        "nnz": support.len(),
        "support": support,
        "support_correct": support_correct,
        "x": x_star.as_slice(),
        "options": {
            "p": options.p,
            "lambda": options.lambda,
            "eps0": options.eps0,
            "mu": options.mu,
            "beta": common.beta,
            "model": common.model,
            "gamma": options.gamma,
            "gamma_bar": options.gamma_bar,
            "opttol": options.opttol,
            "max_iter": options.max_iter,
            "eps_strategy": options.eps_strategy,
            "line_search": options.use_line_search,
        },
    });
    write_json(&common.out.join("result.json"), &report)?;

    let cert = weighted_l1_certificate(&problem, x_star, DEFAULT_MARGIN)?;
    let scales = map_laplace_scales(x_star, &cert, lambda);
    write_json(&common.out.join("certificate.json"), &CertificateReport::new(&cert, &scales))?;

    if args.trace {
        let file = File::create(common.out.join("trace.csv"))?;
        write_trace_csv(&result.trace, BufWriter::new(file))?;
    }
    println!(
        "{:?} after {} iterations, residual {:.3e}, nnz {}",
        result.status,
        result.iterations,
        result.final_residual(),
        last.nnz()
    );
    Ok(status_code(result.status))
}

fn cmd_experiment(args: &ExperimentArgs) -> anyhow::Result<u8> {
    let common = &args.common;
    let mut config = ExperimentConfig::new(args.profile);
    config.count = args.count.unwrap_or_else(|| args.profile.default_count());
    config.base_seed = common.seed;
    config.noise_std = args.noise_std;
    config.options = common.options(common.lambda_or(0.05))?;
    config.model = common.model;
    config.beta = common.beta;
    config.strategies = common.eps_strategy.clone();
    config.eps0_list = common.eps0.clone();
    config.jobs = common.jobs;
    let report = run_experiment(&config)?;
    write_report(&report, &common.out)?;
    for cell in &report.summary.cells {
        println!(
            "{} eps0={}: converged {}/{}, correct support {}, errors {}",
            cell.strategy, cell.eps0, cell.converged, cell.runs, cell.correct_support, cell.errors
        );
    }
    println!("{} rows written to {}", report.rows.len(), common.out.display());
    Ok(0)
}

fn pair(v: &[f64], name: &str) -> anyhow::Result<(f64, f64)> {
    match v {
        [a, b] if a < b => Ok((*a, *b)),
        _ => bail!("--{name} needs two increasing values `lo,hi`"),
    }
}

fn cmd_contour(args: &ContourArgs) -> anyhow::Result<u8> {
    let common = &args.common;
    if args.center.len() != 2 {
        bail!("contour needs a 2-D configuration, got a {}-D center", args.center.len());
    }
    let spec = GridSpec {
        x_range: pair(&args.x_range, "x-range")?,
        y_range: pair(&args.y_range, "y-range")?,
        resolution: args.resolution,
    };
    let lambda = common.lambda_or(0.1);
    let objective = quadratic_bowl(&args.center)?;

    // λ = 0 leaves nothing to certify; every grid is the bare bowl
    let (x_star, weights, certificate) = if lambda > 0.0 {
        let mut options = common.options(lambda)?;
        options.eps0 = common.single_eps0()?;
        options.eps_strategy = common.single_strategy()?;
        options.model = common.model.build(common.beta, &objective)?;
        options.x0 = args.start.as_ref().map(|s| nalgebra::DVector::from_column_slice(s));
        let problem = options.problem(objective.clone())?;
        let result = solve(&problem, &options)?;
        let cert = weighted_l1_certificate(&problem, &result.final_x, args.margin)?;
        let scales = map_laplace_scales(&result.final_x, &cert, lambda);
        let report = CertificateReport::new(&cert, &scales);
        (result.final_x, cert.weights, Some((report, result.status)))
    } else {
        (nalgebra::DVector::zeros(2), nalgebra::DVector::from_element(2, 1.0), None)
    };

    let grid = contour_grid(&objective, lambda, common.p, &weights, &spec)?;
    create_out(&common.out)?;
    grid.write_csv(BufWriter::new(File::create(common.out.join("contour.csv"))?))?;
    let point = |(ix, iy): (usize, usize)| [grid.xs[ix], grid.ys[iy]];
    let summary = serde_json::json!({
        "lambda": lambda,
        "p": common.p,
        "center": args.center,
        "resolution": args.resolution,
        "x_star": x_star.as_slice(),
        "weights": weights.as_slice(),
        "solve_status": certificate.as_ref().map(|c| c.1),
        "argmin_lp": point(grid.argmin_lp()),
        "argmin_wl1": point(grid.argmin_wl1()),
        "argmin_l1": point(grid.argmin_l1()),
    });
    write_json(&common.out.join("contour.json"), &summary)?;
    if let Some((report, _)) = &certificate {
        write_json(&common.out.join("certificate.json"), report)?;
    }
    println!(
        "lp argmin {:?}, weighted-l1 argmin {:?}, l1 argmin {:?}",
        point(grid.argmin_lp()),
        point(grid.argmin_wl1()),
        point(grid.argmin_l1())
    );
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Contour(a) => cmd_contour(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
