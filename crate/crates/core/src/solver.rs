//! Outer IRL1 loops, with and without the proximal line search.

use std::io::Write;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::problem::{LpProblem, SmoothObjective};
use crate::reweighting::{compute_weights, EpsStrategy, EpsilonState, WeightVector};
use crate::subproblem::{LocalModel, ModelKind, DEFAULT_SUBPROBLEM_TOL};

/// Header of the per-iteration trace CSV.
pub const TRACE_HEADER: [&str; 7] = ["k", "F", "F_eps", "residual", "nnz", "gamma", "ls_trials"];

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub p: f64,
    pub lambda: f64,
    pub eps0: f64,
    pub mu: f64,
    pub model: ModelKind,
    pub gamma: f64,
    pub gamma_bar: f64,
    pub opttol: f64,
    pub max_iter: usize,
    pub eps_strategy: EpsStrategy,
    pub use_line_search: bool,
    /// Starting point; the origin when `None`.
    pub x0: Option<DVector<f64>>,
    pub subproblem_tol: f64,
    pub max_ls_trials: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            p: 0.5,
            lambda: 0.05,
            eps0: 1.0,
            mu: 0.9,
            model: ModelKind::ProximalFirstOrder { beta: 0.1 },
            gamma: 1e-4,
            gamma_bar: 1.1,
            opttol: 1e-6,
            max_iter: 500,
            eps_strategy: EpsStrategy::SmartReweighting,
            use_line_search: true,
            x0: None,
            subproblem_tol: DEFAULT_SUBPROBLEM_TOL,
            max_ls_trials: 100,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in (0, 1), got {}", self.p));
        }
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.eps0 > 0.0) || !self.eps0.is_finite() {
            return bad(format!("eps0 must be positive, got {}", self.eps0));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu must lie in (0, 1), got {}", self.mu));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.gamma_bar > 1.0) {
            return bad(format!("gamma_bar must exceed 1, got {}", self.gamma_bar));
        }
        if !(self.opttol > 0.0) {
            return bad(format!("opttol must be positive, got {}", self.opttol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if self.max_ls_trials == 0 {
            return bad("max_ls_trials must be positive".into());
        }
        if !(self.subproblem_tol > 0.0) {
            return bad(format!("subproblem_tol must be positive, got {}", self.subproblem_tol));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x0.len() });
            }
            if x0.iter().any(|v| !v.is_finite()) {
                return bad("x0 must be finite".into());
            }
        }
        self.model.validate(Some(dim))
    }

    /// Builds the problem these options describe.
    pub fn problem<O: SmoothObjective>(&self, objective: O) -> Result<LpProblem<O>> {
        LpProblem::new(objective, self.lambda, self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

/// Snapshot of one iterate `x^k` together with the `ε^k` and weights it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub eps: DVector<f64>,
    pub w: DVector<f64>,
    /// `f(x^k)`.
    pub loss: f64,
    /// `F(x^k, ε^k)`.
    pub f_smoothed: f64,
    /// `F(x^k)`.
    pub f: f64,
    pub residual: f64,
    pub support: Vec<usize>,
    pub signs: Vec<i8>,
    /// Proximal coefficient accepted when producing this iterate (0 for `k = 0`).
    pub gamma_used: f64,
    /// Line-search trials spent producing this iterate (0 for `k = 0`).
    pub ls_trials: usize,
}

impl IterateRecord {
    pub fn nnz(&self) -> usize {
        self.support.len()
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub final_x: DVector<f64>,
    /// Number of outer iterations `N`.
    pub iterations: usize,
    /// `trace[j]` is the record for `k = trace[0].k + j`; starts with the initial point.
    pub trace: Vec<IterateRecord>,
    /// `N_S`, see [`detect_support_stabilization`].
    pub support_stable_at: usize,
}

impl SolveResult {
    pub fn final_record(&self) -> &IterateRecord {
        self.trace.last().expect("trace always holds the initial point")
    }

    pub fn final_residual(&self) -> f64 {
        self.final_record().residual
    }

    /// `N_S / N`, or 0 when no iterations were taken.
    pub fn stabilization_ratio(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.support_stable_at as f64 / self.iterations as f64
        }
    }
}

/// `max_{i: x_i ≠ 0} |∇_i f(x) + λ p |x_i|^{p−1} sign(x_i)|`, or 0 for an empty support.
pub fn stationarity_residual<O: SmoothObjective>(problem: &LpProblem<O>, x: &DVector<f64>) -> f64 {
    let grad = problem.objective().gradient(x);
    residual_from_gradient(&grad, x, problem.lambda(), problem.p())
}

pub fn residual_from_gradient(grad: &DVector<f64>, x: &DVector<f64>, lambda: f64, p: f64) -> f64 {
    x.iter()
        .zip(grad.iter())
        .filter(|(xi, _)| **xi != 0.0)
        .map(|(xi, gi)| (gi + lambda * p * xi.abs().powf(p - 1.0) * xi.signum()).abs())
        .fold(0.0, f64::max)
}

pub fn support_of(x: &DVector<f64>) -> Vec<usize> {
    x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
}

pub fn signs_of(x: &DVector<f64>) -> Vec<i8> {
    x.iter()
        .map(|v| if *v > 0.0 { 1 } else if *v < 0.0 { -1 } else { 0 })
        .collect()
}

/// Smallest `k` from which support and signs stay fixed through the end of the trace.
pub fn detect_support_stabilization(trace: &[IterateRecord]) -> usize {
    let last = trace.last().expect("trace must be nonempty");
    let mut stable = trace.len() - 1;
    while stable > 0 && trace[stable - 1].signs == last.signs {
        stable -= 1;
    }
    trace[stable].k
}

/// Algorithm without line search: one model solve per iteration.
pub fn irl1_solve<O: SmoothObjective>(problem: &LpProblem<O>, options: &SolverOptions) -> Result<SolveResult> {
    run(problem, options, false)
}

/// Line-search variant: proximal coefficients `0, 1, Γ̄, Γ̄², …` are tried until
/// `f(x^k) − f(x^{k+1}) ≥ Q_k(x^k) − Q_k(x^{k+1}) + γ‖x^{k+1} − x^k‖²`.
pub fn irl1_ls_solve<O: SmoothObjective>(problem: &LpProblem<O>, options: &SolverOptions) -> Result<SolveResult> {
    run(problem, options, true)
}

/// Dispatches on `options.use_line_search`.
pub fn solve<O: SmoothObjective>(problem: &LpProblem<O>, options: &SolverOptions) -> Result<SolveResult> {
    run(problem, options, options.use_line_search)
}

/// Runs exactly `extra` further iterations starting from a recorded iterate,
/// ignoring the termination test.
pub fn continue_solve<O: SmoothObjective>(
    problem: &LpProblem<O>,
    options: &SolverOptions,
    from: &IterateRecord,
    extra: usize,
) -> Result<SolveResult> {
    let mut engine = Engine::resume(problem, options, options.use_line_search, from)?;
    let mut trace = vec![engine.record(from.gamma_used, from.ls_trials)?];
    let mut failed = false;
    for _ in 0..extra {
        match engine.step()? {
            Step::Accepted { gamma, trials } => trace.push(engine.record(gamma, trials)?),
            Step::LineSearchFailed => {
                failed = true;
                break;
            }
        }
    }
    let last = trace.last().expect("nonempty");
    let status = if failed {
        SolveStatus::LineSearchFailure
    } else if last.residual <= options.opttol {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    Ok(finish(status, trace))
}

fn run<O: SmoothObjective>(problem: &LpProblem<O>, options: &SolverOptions, line_search: bool) -> Result<SolveResult> {
    let mut engine = Engine::start(problem, options, line_search)?;
    if !line_search {
        warn_if_undercurved(problem, options);
    }
    let mut trace = vec![engine.record(0.0, 0)?];
    let status = loop {
        if engine.k >= options.max_iter {
            break SolveStatus::MaxIterations;
        }
        match engine.step()? {
            Step::Accepted { gamma, trials } => trace.push(engine.record(gamma, trials)?),
            Step::LineSearchFailed => break SolveStatus::LineSearchFailure,
        }
        if trace.last().expect("nonempty").residual <= options.opttol {
            break SolveStatus::Converged;
        }
    };
    Ok(finish(status, trace))
}

fn finish(status: SolveStatus, trace: Vec<IterateRecord>) -> SolveResult {
    let last = trace.last().expect("nonempty");
    SolveResult {
        status,
        final_x: last.x.clone(),
        iterations: last.k - trace[0].k,
        support_stable_at: detect_support_stabilization(&trace) - trace[0].k,
        trace,
    }
}

fn warn_if_undercurved<O: SmoothObjective>(problem: &LpProblem<O>, options: &SolverOptions) {
    let Some(lf) = problem.objective().lipschitz_estimate() else {
        return;
    };
    let (m, _) = options.model.curvature_bounds();
    if m <= lf / 2.0 {
        warn!(
            "model curvature {m} does not exceed L_f/2 = {}; monotone decrease of F(x, eps) is not guaranteed without line search",
            lf / 2.0
        );
    }
}

enum Step {
    Accepted { gamma: f64, trials: usize },
    LineSearchFailed,
}

struct Engine<'a, O> {
    problem: &'a LpProblem<O>,
    options: &'a SolverOptions,
    line_search: bool,
    k: usize,
    x: DVector<f64>,
    loss: f64,
    grad: DVector<f64>,
    eps: EpsilonState,
}

impl<'a, O: SmoothObjective> Engine<'a, O> {
    fn start(problem: &'a LpProblem<O>, options: &'a SolverOptions, line_search: bool) -> Result<Self> {
        let n = problem.dim();
        check_consistent(problem, options)?;
        let x = options.x0.clone().unwrap_or_else(|| DVector::zeros(n));
        let eps = EpsilonState::broadcast(n, options.eps0, options.mu, options.eps_strategy)?;
        let (loss, grad) = problem.objective().value_and_gradient(&x);
        Ok(Self { problem, options, line_search, k: 0, x, loss, grad, eps })
    }

    fn resume(
        problem: &'a LpProblem<O>,
        options: &'a SolverOptions,
        line_search: bool,
        from: &IterateRecord,
    ) -> Result<Self> {
        check_consistent(problem, options)?;
        if from.x.len() != problem.dim() {
            return Err(Error::DimensionMismatch { expected: problem.dim(), got: from.x.len() });
        }
        let eps = EpsilonState::new(from.eps.clone(), options.mu, options.eps_strategy)?;
        let (loss, grad) = problem.objective().value_and_gradient(&from.x);
        Ok(Self { problem, options, line_search, k: from.k, x: from.x.clone(), loss, grad, eps })
    }

    fn weights(&self) -> Result<WeightVector> {
        compute_weights(&self.x, self.eps.eps(), self.problem.p())
    }

    fn record(&self, gamma_used: f64, ls_trials: usize) -> Result<IterateRecord> {
        let lambda = self.problem.lambda();
        let p = self.problem.p();
        let w = self.weights()?.into_inner();
        let smoothed: f64 = self
            .x
            .iter()
            .zip(self.eps.eps().iter())
            .map(|(xi, ei)| (xi.abs() + ei).powf(p))
            .sum();
        Ok(IterateRecord {
            k: self.k,
            x: self.x.clone(),
            eps: self.eps.eps().clone(),
            w,
            loss: self.loss,
            f_smoothed: self.loss + lambda * smoothed,
            f: self.loss + lambda * crate::problem::lp_penalty(&self.x, p),
            residual: residual_from_gradient(&self.grad, &self.x, lambda, p),
            support: support_of(&self.x),
            signs: signs_of(&self.x),
            gamma_used,
            ls_trials,
        })
    }

    fn step(&mut self) -> Result<Step> {
        let lambda = self.problem.lambda();
        let tol = self.options.subproblem_tol;
        // weights stay fixed across all line-search trials of this iteration
        let w = self.weights()?;
        let base = LocalModel::from_validated(self.options.model.clone(), self.x.clone(), self.grad.clone());

        let accepted = if self.line_search {
            let objective = self.problem.objective();
            let mut found = None;
            for trial in 0..self.options.max_ls_trials {
                let gamma = if trial == 0 { 0.0 } else { self.options.gamma_bar.powi(trial as i32 - 1) };
                let model = base.add_proximal_term(gamma);
                let candidate = model.solve(lambda, &w, tol)?;
                let step_sq = (&candidate - &self.x).norm_squared();
                let f_decrease = objective.decrease(&self.x, &candidate);
                let required = model.decrease(&candidate) + self.options.gamma * step_sq;
                if f_decrease >= required {
                    found = Some((candidate, gamma, trial + 1));
                    break;
                }
            }
            found
        } else {
            Some((base.solve(lambda, &w, tol)?, 0.0, 1))
        };

        let Some((x_new, gamma, trials)) = accepted else {
            return Ok(Step::LineSearchFailed);
        };
        self.eps = self.eps.update(&x_new);
        let (loss, grad) = self.problem.objective().value_and_gradient(&x_new);
        self.x = x_new;
        self.loss = loss;
        self.grad = grad;
        self.k += 1;
        Ok(Step::Accepted { gamma, trials })
    }
}

fn check_consistent<O: SmoothObjective>(problem: &LpProblem<O>, options: &SolverOptions) -> Result<()> {
    options.validate(problem.dim())?;
    if problem.lambda() != options.lambda || problem.p() != options.p {
        return Err(Error::InvalidParameter(format!(
            "problem (lambda={}, p={}) disagrees with options (lambda={}, p={})",
            problem.lambda(),
            problem.p(),
            options.lambda,
            options.p
        )));
    }
    Ok(())
}

/// Streams `k,F,F_eps,residual,nnz,gamma,ls_trials` rows.
pub fn write_trace_csv<W: Write>(trace: &[IterateRecord], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    writer.write_record(TRACE_HEADER)?;
    for r in trace {
        writer.write_record([
            r.k.to_string(),
            fmt_f64(r.f),
            fmt_f64(r.f_smoothed),
            fmt_f64(r.residual),
            r.nnz().to_string(),
            fmt_f64(r.gamma_used),
            r.ls_trials.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
