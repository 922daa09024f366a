//! Paired experiment campaigns over generated recovery instances, with CSV/JSON reports.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{fmt_f64, write_json};
use crate::instance::{generate_instance, Profile, RecoveryInstance, DEFAULT_NOISE_STD};
use crate::problem::{LeastSquares, LpProblem};
use crate::reweighting::EpsStrategy;
use crate::solver::{solve, support_of, SolveResult, SolveStatus, SolverOptions};
use crate::subproblem::ModelKind;

pub const RATIO_BIN_WIDTH: f64 = 0.05;
pub const REPORT_HEADER: [&str; 9] =
    ["seed", "strategy", "eps0", "status", "N", "N_S", "ratio", "final_residual", "support_correct"];

/// How the local model is built for each least-squares instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelChoice {
    /// `β I` curvature.
    #[serde(rename = "prox")]
    Proximal,
    /// `AᵀA + β I` curvature, solved by coordinate descent.
    #[serde(rename = "dquad")]
    DenseHessian,
}

impl ModelChoice {
    pub fn build(self, beta: f64, objective: &LeastSquares) -> Result<ModelKind> {
        match self {
            ModelChoice::Proximal => ModelKind::proximal(beta),
            ModelChoice::DenseHessian => {
                let mut h = objective.hessian();
                for i in 0..h.nrows() {
                    h[(i, i)] += beta;
                }
                // AᵀA is symmetric up to rounding in the product; symmetrize exactly
                let h = (&h + h.transpose()) * 0.5;
                ModelKind::dense(h)
            }
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelChoice::Proximal => "prox",
            ModelChoice::DenseHessian => "dquad",
        })
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prox" => Ok(ModelChoice::Proximal),
            "dquad" => Ok(ModelChoice::DenseHessian),
            other => Err(Error::InvalidParameter(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub count: usize,
    pub base_seed: u64,
    pub noise_std: f64,
    /// Template options; `eps0`, `eps_strategy` and `model` are set per cell.
    pub options: SolverOptions,
    pub model: ModelChoice,
    pub beta: f64,
    pub strategies: Vec<EpsStrategy>,
    pub eps0_list: Vec<f64>,
    /// Worker threads; `None` uses the available parallelism.
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(profile: Profile) -> Self {
        let options = SolverOptions::default();
        Self {
            profile,
            count: profile.default_count(),
            base_seed: 0,
            noise_std: DEFAULT_NOISE_STD,
            model: ModelChoice::Proximal,
            beta: 0.1,
            strategies: vec![options.eps_strategy],
            eps0_list: vec![options.eps0],
            options,
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidParameter("count must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidParameter("strategy list is empty".into()));
        }
        if self.eps0_list.is_empty() {
            return Err(Error::InvalidParameter("eps0 list is empty".into()));
        }
        if let Some(e) = self.eps0_list.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::InvalidParameter(format!("eps0 must be positive, got {e}")));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidParameter("jobs must be positive".into()));
        }
        Ok(())
    }

    /// `(strategy, eps0)` cells in report order.
    pub fn cells(&self) -> Vec<Cell> {
        self.strategies
            .iter()
            .flat_map(|&strategy| self.eps0_list.iter().map(move |&eps0| Cell { strategy, eps0 }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub strategy: EpsStrategy,
    pub eps0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
    Error,
}

impl From<SolveStatus> for RowStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => RowStatus::Converged,
            SolveStatus::MaxIterations => RowStatus::MaxIterations,
            SolveStatus::LineSearchFailure => RowStatus::LineSearchFailure,
        }
    }
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub seed: u64,
    pub strategy: EpsStrategy,
    pub eps0: f64,
    pub status: RowStatus,
    pub iterations: usize,
    pub support_stable_at: usize,
    pub ratio: f64,
    pub final_residual: f64,
    pub support_correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExperimentRow {
    fn from_result(seed: u64, cell: Cell, instance: &RecoveryInstance, result: &SolveResult) -> Self {
        Self {
            seed,
            strategy: cell.strategy,
            eps0: cell.eps0,
            status: result.status.into(),
            iterations: result.iterations,
            support_stable_at: result.support_stable_at,
            ratio: result.stabilization_ratio(),
            final_residual: result.final_residual(),
            support_correct: support_of(&result.final_x) == instance.true_support(),
            error: None,
        }
    }

    fn failed(seed: u64, cell: Cell, err: &Error) -> Self {
        Self {
            seed,
            strategy: cell.strategy,
            eps0: cell.eps0,
            status: RowStatus::Error,
            iterations: 0,
            support_stable_at: 0,
            ratio: 0.0,
            final_residual: f64::NAN,
            support_correct: false,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationPercentiles {
    pub p50: usize,
    pub p90: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub strategy: EpsStrategy,
    pub eps0: f64,
    pub runs: usize,
    pub converged: usize,
    pub success_rate: f64,
    pub correct_support: usize,
    pub errors: usize,
    /// Over converged runs; absent when none converged.
    pub iterations: Option<IterationPercentiles>,
    /// Converged runs with `N_S/N ≤ 0.5`.
    pub stable_by_half: usize,
    /// Counts of `N_S/N` over converged runs in bins of width 0.05 on `[0, 1]`.
    pub ratio_histogram: Vec<usize>,
    /// `success_curve[t]` = converged runs with `N ≤ t`, for `t = 0..=max_iter`.
    pub success_curve: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub profile: Profile,
    pub count: usize,
    pub base_seed: u64,
    pub rows: usize,
    pub ratio_bin_width: f64,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    pub summary: Summary,
}

/// Everything a campaign observer may inspect about one solve.
pub struct RunContext<'a> {
    pub instance: &'a RecoveryInstance,
    pub problem: &'a LpProblem<LeastSquares>,
    pub options: &'a SolverOptions,
    pub cell: Cell,
    pub result: &'a SolveResult,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_inspect(config, |_| ()).map(|(report, _)| report)
}

/// Runs the campaign and calls `inspect` on every successful solve. The
/// returned observations are in row order; `None` marks rows whose solve errored.
pub fn run_experiment_inspect<T, F>(config: &ExperimentConfig, inspect: F) -> Result<(ExperimentReport, Vec<Option<T>>)>
where
    T: Send,
    F: Fn(&RunContext<'_>) -> T + Sync,
{
    config.validate()?;
    let cells = config.cells();
    let (m, n, k) = config.profile.dims();
    let seeds: Vec<u64> = (0..config.count as u64).map(|j| config.base_seed.wrapping_add(j)).collect();

    let run_seed = |seed: u64| -> Vec<(ExperimentRow, Option<T>)> {
        let prepared = generate_instance(m, n, k, seed, config.noise_std).and_then(|inst| {
            let objective = inst.objective()?;
            let model = config.model.build(config.beta, &objective)?;
            let problem = config.options.problem(objective)?;
            Ok((inst, problem, model))
        });
        let (instance, problem, model) = match prepared {
            Ok(p) => p,
            Err(e) => return cells.iter().map(|c| (ExperimentRow::failed(seed, *c, &e), None)).collect(),
        };
        cells
            .iter()
            .map(|&cell| {
                let options = SolverOptions {
                    eps0: cell.eps0,
                    eps_strategy: cell.strategy,
                    model: model.clone(),
                    ..config.options.clone()
                };
                match solve(&problem, &options) {
                    Ok(result) => {
                        let row = ExperimentRow::from_result(seed, cell, &instance, &result);
                        let ctx = RunContext { instance: &instance, problem: &problem, options: &options, cell, result: &result };
                        (row, Some(inspect(&ctx)))
                    }
                    Err(e) => (ExperimentRow::failed(seed, cell, &e), None),
                }
            })
            .collect()
    };

    let threads = config.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let per_seed: Vec<Vec<(ExperimentRow, Option<T>)>> = if threads <= 1 {
        seeds.iter().map(|&s| run_seed(s)).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| run_seed(s)).collect())
    };

    let (rows, observations): (Vec<_>, Vec<_>) = per_seed.into_iter().flatten().unzip();
    let summary = summarize(config, &rows);
    Ok((ExperimentReport { rows, summary }, observations))
}

fn percentile(sorted: &[usize], q: f64) -> usize {
    // nearest rank
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Aggregates rows cell by cell; everything here is recomputable from the rows.
pub fn summarize(config: &ExperimentConfig, rows: &[ExperimentRow]) -> Summary {
    let bins = (1.0 / RATIO_BIN_WIDTH).round() as usize;
    let cells = config
        .cells()
        .into_iter()
        .map(|cell| {
            let mine: Vec<&ExperimentRow> =
                rows.iter().filter(|r| r.strategy == cell.strategy && r.eps0 == cell.eps0).collect();
            let converged: Vec<&ExperimentRow> =
                mine.iter().copied().filter(|r| r.status == RowStatus::Converged).collect();
            let mut iters: Vec<usize> = converged.iter().map(|r| r.iterations).collect();
            iters.sort_unstable();
            let iterations = (!iters.is_empty()).then(|| IterationPercentiles {
                p50: percentile(&iters, 0.5),
                p90: percentile(&iters, 0.9),
                max: *iters.last().expect("nonempty"),
            });
            let mut ratio_histogram = vec![0; bins];
            for r in &converged {
                let bin = ((r.ratio / RATIO_BIN_WIDTH).floor() as usize).min(bins - 1);
                ratio_histogram[bin] += 1;
            }
            let success_curve = (0..=config.options.max_iter)
                .map(|t| iters.partition_point(|&n| n <= t))
                .collect();
            CellSummary {
                strategy: cell.strategy,
                eps0: cell.eps0,
                runs: mine.len(),
                converged: converged.len(),
                success_rate: if mine.is_empty() { 0.0 } else { converged.len() as f64 / mine.len() as f64 },
                correct_support: mine.iter().filter(|r| r.support_correct).count(),
                errors: mine.iter().filter(|r| r.status == RowStatus::Error).count(),
                iterations,
                stable_by_half: converged.iter().filter(|r| r.ratio <= 0.5).count(),
                ratio_histogram,
                success_curve,
            }
        })
        .collect();
    Summary {
        profile: config.profile,
        count: config.count,
        base_seed: config.base_seed,
        rows: rows.len(),
        ratio_bin_width: RATIO_BIN_WIDTH,
        cells,
    }
}

pub fn write_rows_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(REPORT_HEADER)?;
    for r in rows {
        writer.write_record([
            r.seed.to_string(),
            r.strategy.to_string(),
            fmt_f64(r.eps0),
            r.status.to_string(),
            r.iterations.to_string(),
            r.support_stable_at.to_string(),
            fmt_f64(r.ratio),
            fmt_f64(r.final_residual),
            r.support_correct.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn write_histogram_csv<W: Write>(summary: &Summary, out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(["strategy", "eps0", "bin_lo", "bin_hi", "count"])?;
    for cell in &summary.cells {
        for (b, count) in cell.ratio_histogram.iter().enumerate() {
            writer.write_record([
                cell.strategy.to_string(),
                fmt_f64(cell.eps0),
                fmt_f64(b as f64 * summary.ratio_bin_width),
                fmt_f64((b + 1) as f64 * summary.ratio_bin_width),
                count.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn write_curve_csv<W: Write>(summary: &Summary, out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(["strategy", "eps0", "iteration", "solved"])?;
    for cell in &summary.cells {
        for (t, solved) in cell.success_curve.iter().enumerate() {
            writer.write_record([cell.strategy.to_string(), fmt_f64(cell.eps0), t.to_string(), solved.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes `report.csv`, `summary.json`, `ratio_histogram.csv` and `success_curve.csv`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows_csv(&report.rows, BufWriter::new(File::create(dir.join("report.csv"))?))?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    write_histogram_csv(&report.summary, BufWriter::new(File::create(dir.join("ratio_histogram.csv"))?))?;
    write_curve_csv(&report.summary, BufWriter::new(File::create(dir.join("success_curve.csv"))?))?;
    Ok(())
}
