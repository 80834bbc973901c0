//! The three batch commands: example runs, convergence measurement and
//! tableau validation.

use std::fmt::Write as _;

use sderk::convergence::{gbm_problem, strong_error};
use sderk::ensemble::run_ensemble;
use sderk::quantum::{
    absorber_system, cascade_system, integrate_master, occupation_of_density,
    occupation_observable, renormalize_state, vacuum_state, ComplexMatrix, MasterEquation,
    MasterKind,
};
use sderk::stepper::StepController;
use sderk::tableau::ButcherTableau;
use sderk::Error as SdeError;

use crate::config::RunConfig;

/// Failure modes mapped to distinct process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2: bad usage or configuration.
    Config(String),
    /// Exit code 3: file system trouble; carries the path.
    Io(String),
    /// Exit code 4: a numerical run aborted or a check failed.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Numerical(m) => m,
        }
    }
}

fn numerical(e: SdeError) -> CliError {
    CliError::Numerical(e.to_string())
}

/// Oracle tolerances for the deterministic master-equation runs.
const ORACLE_RTOL: f64 = 1e-12;
const ORACLE_ATOL: f64 = 1e-14;

pub fn load_tableau(cfg: &RunConfig) -> Result<(ButcherTableau, String), CliError> {
    match &cfg.tableau {
        None => Ok((ButcherTableau::extrapolated_98(), "builtin:xrkf98".into())),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read tableau file '{path}': {e}")))?;
            let tab = ButcherTableau::parse(&text)
                .map_err(|e| CliError::Numerical(format!("tableau file '{path}': {e}")))?;
            Ok((tab, path.clone()))
        }
    }
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn run_in_pool<T: Send>(workers: usize, body: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if workers == 0 {
        Ok(body())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
        Ok(pool.install(body))
    }
}

/// `example absorber|cascade`: Monte Carlo mean occupation with its
/// standard error against the master-equation oracle on the same grid.
pub fn cmd_example(which: &str, cfg: &RunConfig) -> Result<String, CliError> {
    let kind = match which {
        "absorber" => MasterKind::Absorber,
        "cascade" => MasterKind::Cascade,
        other => return Err(CliError::Config(format!("unknown example '{other}'"))),
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (tab, tab_label) = load_tableau(cfg)?;
    if !tab.is_embedded_pair() {
        return Err(CliError::Config(format!(
            "tableau '{tab_label}' has no embedded weights; example runs need an embedded pair"
        )));
    }
    let h = cfg.horizon / cfg.chunks as f64;

    let mut system = match kind {
        MasterKind::Absorber => absorber_system(cfg.n_levels).map_err(numerical)?,
        MasterKind::Cascade => cascade_system(cfg.n_levels).map_err(numerical)?,
    };
    if cfg.renormalize {
        system = system.with_post_accept(renormalize_state);
    }

    let mut ctrl = StepController::adaptive(cfg.rtol, cfg.atol, h);
    // cap the largest step at half a chunk: one-step chunks leave a weak
    // bias in near-deterministic observables that large ensembles resolve
    ctrl.min_depth = 1;
    let y0 = vacuum_state(cfg.n_levels);
    let observables = [occupation_observable()];

    let ensemble = run_in_pool(cfg.workers, || {
        run_ensemble(
            &system,
            &tab,
            &ctrl,
            &observables,
            &y0,
            0.0,
            cfg.horizon,
            cfg.trajectories,
            cfg.master_seed,
        )
    })?
    .map_err(numerical)?;

    // deterministic oracle in the same basis on the same grid
    let me = MasterEquation::new(kind, cfg.n_levels).map_err(numerical)?;
    let mut rho0 = ComplexMatrix::zeros(cfg.n_levels);
    rho0.set(0, 0, num_complex::Complex64::new(1.0, 0.0));
    let oracle_ctrl = StepController::adaptive(ORACLE_RTOL, ORACLE_ATOL, h);
    let oracle = integrate_master(&me, &rho0, cfg.horizon, cfg.chunks, &tab, &oracle_ctrl)
        .map_err(numerical)?;

    let mut out = String::new();
    let _ = writeln!(out, "# sderk {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "# command = example {which}");
    let _ = writeln!(out, "# n_levels = {}", cfg.n_levels);
    let _ = writeln!(out, "# horizon = {}", format_value(cfg.horizon));
    let _ = writeln!(out, "# chunks = {}", cfg.chunks);
    let _ = writeln!(out, "# rtol = {:e}", cfg.rtol);
    let _ = writeln!(out, "# atol = {:e}", cfg.atol);
    let _ = writeln!(out, "# trajectories = {}", cfg.trajectories);
    let _ = writeln!(out, "# master_seed = {}", cfg.master_seed);
    let _ = writeln!(out, "# tableau = {tab_label}");
    let _ = writeln!(out, "# renormalize = {}", cfg.renormalize);
    let _ = writeln!(out, "# oracle_rtol = {ORACLE_RTOL:e}");
    let _ = writeln!(out, "# oracle_max_trace_drift = {:e}", oracle.max_trace_drift);
    let _ = writeln!(
        out,
        "# oracle_max_hermiticity_defect = {:e}",
        oracle.max_hermiticity_defect
    );
    let _ = writeln!(out, "# accepted_steps = {}", ensemble.total_accepted);
    let _ = writeln!(out, "# rejected_steps = {}", ensemble.total_rejected);
    let _ = writeln!(out, "# f_evaluations = {}", ensemble.total_f_evals);
    out.push_str("t,n_mc,n_se,n_oracle\n");
    for (c, &t) in ensemble.grid.iter().enumerate() {
        let n_mc = ensemble.means[0][c];
        let n_se = ensemble
            .standard_errors
            .as_ref()
            .map(|se| format_value(se[0][c]))
            .unwrap_or_else(|| "nan".into());
        let n_oracle = occupation_of_density(&oracle.states[c]);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_value(t),
            format_value(n_mc),
            n_se,
            format_value(n_oracle)
        );
    }
    Ok(out)
}

/// `converge gbm`: strong-error ladder and fitted order for the benchmark
/// with the closed-form strong solution.
pub fn cmd_converge(problem: &str, cfg: &RunConfig) -> Result<(String, String), CliError> {
    if problem != "gbm" {
        return Err(CliError::Config(format!("unknown convergence problem '{problem}'")));
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (tab, tab_label) = load_tableau(cfg)?;
    let (mu, sigma, x0) = (0.06, 0.5, 1.0);
    let gbm = gbm_problem(x0, mu, sigma);
    // high-order pairs leave the measurable error window at fine steps
    let depths: Vec<u32> = if tab.order() >= 7 { (0..=4).collect() } else { (4..=9).collect() };
    let report = run_in_pool(cfg.workers, || {
        strong_error(&gbm, &tab, cfg.horizon, &depths, cfg.trajectories, cfg.master_seed)
    })?
    .map_err(numerical)?;

    let mut out = String::new();
    let _ = writeln!(out, "# sderk {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "# command = converge {problem}");
    let _ = writeln!(out, "# mu = {mu}");
    let _ = writeln!(out, "# sigma = {sigma}");
    let _ = writeln!(out, "# x0 = {x0}");
    let _ = writeln!(out, "# horizon = {}", format_value(cfg.horizon));
    let _ = writeln!(out, "# paths = {}", cfg.trajectories);
    let _ = writeln!(out, "# master_seed = {}", cfg.master_seed);
    let _ = writeln!(out, "# tableau = {tab_label}");
    out.push_str(&report.to_csv());
    let summary = format!("slope={:.6} halfwidth={:.6}", report.slope, report.half_width);
    Ok((out, summary))
}

/// `validate <path>`: row-sum and quadrature residuals of a tableau file;
/// fails when any residual up to the declared orders exceeds 1e-12.
pub fn cmd_validate(path: &str) -> Result<(String, bool), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read tableau file '{path}': {e}")))?;
    let mut out = String::new();
    let tab = match ButcherTableau::parse(&text) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(out, "FAIL {e}");
            return Ok((out, false));
        }
    };
    let _ = writeln!(
        out,
        "tableau {} : {} stages, order {}({})",
        tab.name(),
        tab.stages(),
        tab.order(),
        tab.embedded_order()
    );
    let mut ok = true;
    // row sums are re-checked here to report the worst residual even
    // though parsing already enforces the invariant
    let mut worst_row = 0.0f64;
    for (i, row) in tab.coupling().iter().enumerate() {
        let sum: f64 = row.iter().sum();
        worst_row = worst_row.max((sum - tab.nodes()[i]).abs());
    }
    let _ = writeln!(out, "row-sum residual        {worst_row:.3e}");
    ok &= worst_row <= 1e-12;
    let wsum: f64 = tab.weights().iter().sum();
    let _ = writeln!(out, "weight-sum residual     {:.3e}", (wsum - 1.0).abs());
    ok &= (wsum - 1.0).abs() <= 1e-12;
    for r in tab.quadrature_residuals(tab.order()) {
        let mut line = format!("quadrature order {:>2}    b {:.3e}", r.order, r.weights);
        ok &= r.weights <= 1e-12;
        if let Some(e) = r.embedded {
            if r.order <= tab.embedded_order() {
                line.push_str(&format!("  bhat {e:.3e}"));
                ok &= e <= 1e-12;
            }
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "{}", if ok { "PASS" } else { "FAIL" });
    Ok((out, ok))
}
