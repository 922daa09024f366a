//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use irl1::diagnostics::{
    contour_grid, map_laplace_scales, quadratic_bowl, weighted_l1_certificate, GridSpec, DEFAULT_MARGIN,
};
use irl1::experiment::{run_experiment_inspect, ExperimentConfig, ModelChoice, RowStatus};
use irl1::instance::{generate_instance, DEFAULT_NOISE_STD};
use irl1::solver::continue_solve;
use irl1::subproblem::prox_weighted_l1;
use irl1::{EpsStrategy, LeastSquares, ModelKind, Profile, SmoothObjective, SolveStatus, SolverOptions};

const OPTTOL: f64 = 1e-6;
const SLACK: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// `f(x) = ½‖Ax − y‖²` and its gradient, evaluated directly.
fn raw_oracle(a: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let r = a * x - y;
    (0.5 * r.dot(&r), a.transpose() * r)
}

fn independent_residual(a: &DMatrix<f64>, y: &DVector<f64>, x: &DVector<f64>, lambda: f64, p: f64) -> f64 {
    let (_, g) = raw_oracle(a, y, x);
    (0..x.len())
        .filter(|&i| x[i] != 0.0)
        .map(|i| (g[i] + lambda * p * x[i].abs().powf(p - 1.0) * x[i].signum()).abs())
        .fold(0.0, f64::max)
}

fn signs(x: &DVector<f64>) -> Vec<i8> {
    x.iter().map(|v| if *v > 0.0 { 1 } else if *v < 0.0 { -1 } else { 0 }).collect()
}

/// Checks computed on every solve of the shared campaign.
#[derive(Debug, Clone)]
struct RunCheck {
    strategy: EpsStrategy,
    eps0: f64,
    status: SolveStatus,
    monotone: bool,
    telescoped: bool,
    residual: f64,
    frozen: Option<bool>,
    ls_cond: bool,
    step_matches: bool,
    kkt: Option<f64>,
    bw_dev: Option<f64>,
    all_gamma_zero: bool,
}

fn check_run(ctx: &irl1::experiment::RunContext<'_>) -> RunCheck {
    let problem = ctx.problem;
    let options = ctx.options;
    let result = ctx.result;
    let (lambda, p, gamma) = (problem.lambda(), problem.p(), options.gamma);
    let a = problem.objective().matrix();
    let y = problem.objective().target();
    let beta = match options.model {
        ModelKind::ProximalFirstOrder { beta } => beta,
        _ => panic!("campaign uses the proximal model"),
    };

    let trace = &result.trace;
    let mut monotone = true;
    let mut step_sq_sum = 0.0;
    let mut ls_cond = true;
    let mut step_matches = true;
    let mut all_gamma_zero = true;
    for pair in trace.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let f0 = prev.f_smoothed;
        if next.f_smoothed > f0 + SLACK * (1.0 + f0.abs()) {
            monotone = false;
        }
        let d = &next.x - &prev.x;
        step_sq_sum += d.norm_squared();

        let (fx, g) = raw_oracle(a, y, &prev.x);
        let (fxn, _) = raw_oracle(a, y, &next.x);
        let curvature = beta + next.gamma_used;
        let q_decrease = -(g.dot(&d) + 0.5 * curvature * d.norm_squared());
        if fx - fxn < q_decrease + gamma * d.norm_squared() - SLACK * (1.0 + fx.abs()) {
            ls_cond = false;
        }
        let expected = prox_weighted_l1(&(&prev.x - &g / curvature), &(&prev.w * (lambda / curvature)));
        if signs(&expected) != signs(&next.x) || (&expected - &next.x).amax() > 1e-10 {
            step_matches = false;
        }
        if next.gamma_used != 0.0 || next.ls_trials != 1 {
            all_gamma_zero = false;
        }
    }
    let first = trace.first().expect("trace").f_smoothed;
    let last = trace.last().expect("trace").f_smoothed;
    let telescoped = step_sq_sum <= (first - last) / gamma + SLACK * (1.0 + first.abs()) / gamma;

    let x_star = &result.final_x;
    let residual = independent_residual(a, y, x_star, lambda, p);
    let converged = result.status == SolveStatus::Converged;

    let frozen = converged.then(|| {
        let more = continue_solve(problem, options, result.final_record(), 10).expect("continuation");
        let s = signs(x_star);
        more.trace.len() == 11 && more.trace.iter().all(|r| signs(&r.x) == s)
    });

    let (kkt, bw_dev) = if converged {
        let cert = weighted_l1_certificate(problem, x_star, DEFAULT_MARGIN).expect("certificate");
        let scales = map_laplace_scales(x_star, &cert, lambda);
        let dev = cert
            .support
            .iter()
            .map(|i| (scales.b[i] * cert.support_weights[i] - 1.0).abs())
            .fold(0.0, f64::max);
        (Some(cert.max_kkt_violation), Some(dev))
    } else {
        (None, None)
    };

    RunCheck {
        strategy: ctx.cell.strategy,
        eps0: ctx.cell.eps0,
        status: result.status,
        monotone,
        telescoped,
        residual,
        frozen,
        ls_cond,
        step_matches,
        kkt,
        bw_dev,
        all_gamma_zero,
    }
}

struct Campaign {
    /// SR and geometric at the default `ε0`, paired by seed.
    strategies: Vec<(RowStatus, RunCheck)>,
    strategy_counts: BTreeMap<String, (usize, usize)>,
    sr_ratios: Vec<f64>,
    /// SR at `ε0 ∈ {0.1, 0.001}`.
    eps_sweep: Vec<(RowStatus, RunCheck)>,
    correct_by_eps0: BTreeMap<String, usize>,
    /// SR with `β > L_f`.
    large_beta: Vec<RunCheck>,
}

fn run_campaign() -> Campaign {
    let mut config = ExperimentConfig::new(Profile::Small);
    config.count = 50;
    config.strategies = vec![EpsStrategy::SmartReweighting, EpsStrategy::Geometric];
    let (report, checks) = run_experiment_inspect(&config, check_run).expect("strategy campaign");
    let mut strategy_counts = BTreeMap::new();
    for cell in &report.summary.cells {
        strategy_counts.insert(cell.strategy.to_string(), (cell.converged, cell.runs));
    }
    let sr_ratios = report
        .rows
        .iter()
        .filter(|r| r.strategy == EpsStrategy::SmartReweighting && r.status == RowStatus::Converged)
        .map(|r| r.ratio)
        .collect();
    let strategies = report.rows.iter().zip(checks).map(|(r, c)| (r.status, c.expect("solve succeeded"))).collect();

    let mut sweep = ExperimentConfig::new(Profile::Small);
    sweep.count = 50;
    sweep.eps0_list = vec![0.1, 0.001];
    let (report, checks) = run_experiment_inspect(&sweep, check_run).expect("eps0 sweep");
    let correct_by_eps0 = report.summary.cells.iter().map(|c| (c.eps0.to_string(), c.correct_support)).collect();
    let eps_sweep = report.rows.iter().zip(checks).map(|(r, c)| (r.status, c.expect("solve succeeded"))).collect();

    let mut large_beta = Vec::new();
    for seed in 0..20 {
        let inst = generate_instance(256, 512, 64, seed, DEFAULT_NOISE_STD).expect("instance");
        let objective = inst.objective().expect("objective");
        let lf = objective.lipschitz_estimate().expect("Lipschitz estimate");
        let options = SolverOptions { model: ModelChoice::Proximal.build(1.1 * lf, &objective).expect("model"), ..Default::default() };
        let problem = options.problem(objective).expect("problem");
        let result = irl1::solve(&problem, &options).expect("solve");
        let cell = irl1::experiment::Cell { strategy: options.eps_strategy, eps0: options.eps0 };
        let ctx = irl1::experiment::RunContext { instance: &inst, problem: &problem, options: &options, cell, result: &result };
        large_beta.push(check_run(&ctx));
    }

    Campaign { strategies, strategy_counts, sr_ratios, eps_sweep, correct_by_eps0, large_beta }
}

fn all_runs(c: &Campaign) -> impl Iterator<Item = &RunCheck> {
    c.strategies.iter().chain(&c.eps_sweep).map(|(_, r)| r).chain(&c.large_beta)
}

fn criterion_prox_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let z: f64 = rng.gen_range(-5.0..5.0);
        let t: f64 = rng.gen_range(0.0..3.0);
        let lo = -z.abs() - 1.0;
        let steps = ((2.0 * z.abs() + 2.0) / h).round() as usize;
        let (mut best_x, mut best_v) = (lo, f64::INFINITY);
        for s in 0..=steps {
            let x = lo + s as f64 * h;
            let v = 0.5 * (x - z) * (x - z) + t * x.abs();
            if v < best_v {
                best_v = v;
                best_x = x;
            }
        }
        let prox = prox_weighted_l1(&DVector::from_element(1, z), &DVector::from_element(1, t))[0];
        worst = worst.max((prox - best_x).abs());
    }
    let elapsed = start.elapsed();
    outcome(worst <= 1e-4 && elapsed < Duration::from_secs(10), format!("max |prox - grid| = {worst:.2e}, {elapsed:.2?}"))
}

/// Global minimizer of `½(x − z)² + λ|x|^p` on a grid of step `1e-5`.
fn scalar_lp_grid(z: f64, lambda: f64, p: f64) -> f64 {
    let h = 1e-5;
    let lo = -z.abs() - 1.0;
    let steps = ((2.0 * z.abs() + 2.0) / h).round() as usize;
    let (mut best_x, mut best_v) = (0.0, 0.5 * z * z);
    for s in 0..=steps {
        let x = lo + s as f64 * h;
        let v = 0.5 * (x - z) * (x - z) + lambda * x.abs().powf(p);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    best_x
}

fn criterion_separable_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let options = SolverOptions::default();
    let (mut worst, mut unconverged) = (0.0f64, 0usize);
    let mut mismatched_z = Vec::new();
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let z = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let objective = LeastSquares::new(DMatrix::identity(n, n), z.clone()).expect("objective");
        let problem = options.problem(objective).expect("problem");
        let result = irl1::solve(&problem, &options).expect("solve");
        if result.status != SolveStatus::Converged {
            unconverged += 1;
            continue;
        }
        for i in 0..n {
            let grid = scalar_lp_grid(z[i], options.lambda, options.p);
            let err = (result.final_x[i] - grid).abs();
            worst = worst.max(err);
            if err > 1e-3 {
                mismatched_z.push(z[i].abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-3 && unconverged == 0 && elapsed < Duration::from_secs(60),
        format!(
            "max |x - grid| = {worst:.2e}, {} mismatched coordinates with |z| in [{:.4}, {:.4}], unconverged {unconverged}, {elapsed:.2?}",
            mismatched_z.len(),
            mismatched_z.iter().copied().fold(f64::INFINITY, f64::min),
            mismatched_z.iter().copied().fold(0.0, f64::max)
        ),
    )
}

fn criterion_monotonicity(c: &Campaign) -> Outcome {
    let runs: Vec<&RunCheck> = c
        .strategies
        .iter()
        .map(|(_, r)| r)
        .filter(|r| r.strategy == EpsStrategy::SmartReweighting && r.eps0 == 1.0)
        .collect();
    let bad_mono = runs.iter().filter(|r| !r.monotone).count();
    let bad_tele = runs.iter().filter(|r| !r.telescoped).count();
    outcome(
        runs.len() == 50 && bad_mono == 0 && bad_tele == 0,
        format!("{} runs, nonmonotone {bad_mono}, telescoped bound violated {bad_tele}", runs.len()),
    )
}

fn criterion_termination(c: &Campaign) -> Outcome {
    let converged: Vec<&RunCheck> = all_runs(c).filter(|r| r.status == SolveStatus::Converged).collect();
    let worst = converged.iter().map(|r| r.residual).fold(0.0, f64::max);
    outcome(worst <= OPTTOL, format!("{} converged runs, max independent residual {worst:.3e}", converged.len()))
}

fn criterion_stable_support(c: &Campaign) -> Outcome {
    let total = c.sr_ratios.len();
    let early = c.sr_ratios.iter().filter(|r| **r <= 0.5).count();
    let share = early as f64 / total.max(1) as f64;
    outcome(share >= 0.9, format!("{early}/{total} converged SR runs with N_S/N <= 0.5 ({:.0}%)", 100.0 * share))
}

fn criterion_strategies(c: &Campaign) -> Outcome {
    let (sr, sr_runs) = c.strategy_counts["sr"];
    let (geo, _) = c.strategy_counts["geometric"];
    outcome(
        sr >= geo && sr as f64 >= 0.95 * sr_runs as f64,
        format!("converged within 500: sr {sr}/{sr_runs}, geometric {geo}/{sr_runs}"),
    )
}

fn criterion_eps0(c: &Campaign) -> Outcome {
    let hi = c.correct_by_eps0["0.1"];
    let lo = c.correct_by_eps0["0.001"];
    outcome(hi > lo && lo <= 5, format!("correct support: eps0=0.1 -> {hi}/50, eps0=0.001 -> {lo}/50"))
}

fn criterion_freeze(c: &Campaign) -> Outcome {
    let checked: Vec<bool> = all_runs(c).filter_map(|r| r.frozen).collect();
    let moved = checked.iter().filter(|f| !**f).count();
    outcome(moved == 0, format!("{} converged runs extended by 10 iterations, {moved} changed", checked.len()))
}

fn criterion_line_search(c: &Campaign) -> Outcome {
    let runs: Vec<&RunCheck> = all_runs(c).collect();
    let bad_cond = runs.iter().filter(|r| !r.ls_cond).count();
    let bad_step = runs.iter().filter(|r| !r.step_matches).count();
    let failures = runs.iter().filter(|r| r.status == SolveStatus::LineSearchFailure).count();
    let nonzero = c.large_beta.iter().filter(|r| !r.all_gamma_zero).count();
    outcome(
        bad_cond == 0 && bad_step == 0 && failures == 0 && nonzero == 0,
        format!(
            "{} runs: ls.cond violated {bad_cond}, step mismatch {bad_step}, failures {failures}; beta > L_f: {} runs with Gamma != 0 accepted",
            runs.len(),
            nonzero
        ),
    )
}

fn criterion_certificate(c: &Campaign) -> Outcome {
    let converged: Vec<&RunCheck> = all_runs(c).filter(|r| r.kkt.is_some()).collect();
    let kkt = converged.iter().filter_map(|r| r.kkt).fold(0.0, f64::max);
    let dev = converged.iter().filter_map(|r| r.bw_dev).fold(0.0, f64::max);
    outcome(
        kkt <= 10.0 * OPTTOL && dev <= f64::EPSILON,
        format!("{} converged runs, max kkt violation {kkt:.3e}, max |b*w - 1| {dev:.1e}", converged.len()),
    )
}

fn criterion_contour(_: &Campaign) -> Outcome {
    let objective = quadratic_bowl(&[0.5, 5.0]).expect("bowl");
    let options = SolverOptions { lambda: 0.1, ..Default::default() };
    let problem = options.problem(objective.clone()).expect("problem");
    let result = irl1::solve(&problem, &options).expect("solve");
    let cert = weighted_l1_certificate(&problem, &result.final_x, DEFAULT_MARGIN).expect("certificate");
    let spec = GridSpec { x_range: (-1.0, 1.0), y_range: (-1.0, 6.0), resolution: 400 };
    let grid = contour_grid(&objective, options.lambda, options.p, &cert.weights, &spec).expect("grid");
    let (lp, wl1) = (grid.argmin_lp(), grid.argmin_wl1());
    let (hx, _) = grid.spacing();
    let (cx, cy) = (grid.xs[lp.0], grid.ys[lp.1]);
    let same = lp == wl1;
    let x_has_zero = cx.abs() <= 0.5 * hx;
    let y_close = (cy - 0.48).abs() <= 0.05;
    outcome(
        same && x_has_zero && y_close,
        format!(
            "lp argmin ({cx:.4}, {cy:.4}), weighted-l1 argmin ({:.4}, {:.4}); same cell {same}, x1 cell holds 0 {x_has_zero}, |x2 - 0.48| <= 0.05 {y_close}; solver x* = ({:.4}, {:.4})",
            grid.xs[wl1.0], grid.ys[wl1.1], result.final_x[0], result.final_x[1]
        ),
    )
}

fn criterion_gradient() -> Outcome {
    let inst = generate_instance(64, 128, 8, 12, DEFAULT_NOISE_STD).expect("instance");
    let objective = inst.objective().expect("objective");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = DVector::from_fn(128, |_, _| rng.gen_range(-1.0..1.0));
        let g = objective.gradient(&x);
        let fd = DVector::from_fn(128, |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (objective.value(&xp) - objective.value(&xm)) / (2.0 * h)
        });
        worst = worst.max((&fd - &g).norm() / g.norm());
    }
    outcome(worst <= 1e-5, format!("max relative error {worst:.2e} over 20 points"))
}

fn main() -> ExitCode {
    let campaign_start = Instant::now();
    let campaign = run_campaign();
    println!("shared campaign finished in {:.2?}", campaign_start.elapsed());

    let results: Vec<(&str, Outcome)> = vec![
        ("1 prox oracle equivalence", criterion_prox_oracle()),
        ("2 separable lp oracle", criterion_separable_oracle()),
        ("3 monotonicity", criterion_monotonicity(&campaign)),
        ("4 termination fidelity", criterion_termination(&campaign)),
        ("5 stable support", criterion_stable_support(&campaign)),
        ("6 sr vs geometric", criterion_strategies(&campaign)),
        ("7 eps0 sensitivity", criterion_eps0(&campaign)),
        ("8 sign/support freeze", criterion_freeze(&campaign)),
        ("9 line-search contract", criterion_line_search(&campaign)),
        ("10 equivalence certificate", criterion_certificate(&campaign)),
        ("11 two-dimensional contour", criterion_contour(&campaign)),
        ("12 gradient check", criterion_gradient()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
