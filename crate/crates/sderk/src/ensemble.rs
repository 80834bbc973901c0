//! Monte Carlo ensembles of independent trajectories.
//!
//! Trajectory `i` of an ensemble draws from the stream `(master_seed, i)`,
//! and observable sums run in fixed index order after all trajectories
//! finish, so results are bitwise independent of the worker count. A
//! failing trajectory aborts the whole ensemble; silently dropping members
//! would bias the averages.

use crate::brownian::{BrownianStack, GridScale, RngStream};
use crate::convergence::run_paths;
use crate::error::{Error, Result};
use crate::stepper::{integrate_path, SolutionPath, StepController};
use crate::system::SdeSystem;
use crate::tableau::ButcherTableau;

/// A named scalar function of the state, evaluated on the output grid.
pub struct Observable {
    name: String,
    eval: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Observable {
    pub fn new<F>(name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Observable {
            name: name.into(),
            eval: Box::new(eval),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, state: &[f64]) -> f64 {
        (self.eval)(state)
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Observable({})", self.name)
    }
}

/// Grid means and standard errors of the observables over an ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// Output grid times (every base-step boundary from origin to horizon).
    pub grid: Vec<f64>,
    pub observable_names: Vec<String>,
    /// `means[obs][grid]`.
    pub means: Vec<Vec<f64>>,
    /// `standard_errors[obs][grid]`, present for two or more trajectories;
    /// the unbiased sample deviation over sqrt(N).
    pub standard_errors: Option<Vec<Vec<f64>>>,
    /// Smallest and largest raw value of each observable over all
    /// trajectories and grid points.
    pub value_range: Vec<(f64, f64)>,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub total_accepted: u64,
    pub total_rejected: u64,
    pub total_f_evals: u64,
}

impl EnsembleResult {
    pub fn observable_index(&self, name: &str) -> Option<usize> {
        self.observable_names.iter().position(|n| n == name)
    }
}

/// Runs `n_trajectories` independent trajectories of `system` from `y0`
/// over `[t0, t_end]` and aggregates the observables at every base-step
/// boundary.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    system: &SdeSystem,
    tab: &ButcherTableau,
    ctrl: &StepController,
    observables: &[Observable],
    y0: &[f64],
    t0: f64,
    t_end: f64,
    n_trajectories: usize,
    master_seed: u64,
) -> Result<EnsembleResult> {
    if n_trajectories == 0 {
        return Err(Error::Invalid("ensemble needs at least one trajectory".into()));
    }
    ctrl.validate()?;
    let chunks_f = (t_end - t0) / ctrl.base_step;
    let chunks = chunks_f.round() as usize;
    if chunks == 0 || (chunks_f - chunks as f64).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "horizon must be a whole number of base steps, got {chunks_f}"
        )));
    }
    let grid_scale = GridScale::new(t0, ctrl.base_step, ctrl.max_depth);
    let grid: Vec<f64> = (0..=chunks)
        .map(|c| grid_scale.time_at(c as u64 * grid_scale.ticks_per_base()))
        .collect();

    struct TrajectorySample {
        /// `values[obs][grid]`
        values: Vec<Vec<f64>>,
        accepted: u64,
        rejected: u64,
        f_evals: u64,
    }

    let samples: Vec<TrajectorySample> = run_paths(0..n_trajectories, |i| {
        let mut rng = RngStream::new(master_seed, i as u64);
        let mut stack = BrownianStack::new(grid_scale, system.wiener_dim());
        let path: SolutionPath =
            integrate_path(system, tab, ctrl, &mut stack, &mut rng, y0, t_end)?;
        let mut values = vec![vec![0.0; chunks + 1]; observables.len()];
        for c in 0..=chunks {
            let ticks = c as u64 * grid_scale.ticks_per_base();
            let state = path.state_at_ticks(ticks).ok_or_else(|| {
                Error::Invalid(format!("no accepted state at grid tick {ticks}"))
            })?;
            for (o, obs) in observables.iter().enumerate() {
                values[o][c] = obs.eval(state);
            }
        }
        Ok(TrajectorySample {
            values,
            accepted: path.accepted,
            rejected: path.rejected,
            f_evals: path.f_evals,
        })
    })?;

    // fixed-order aggregation: two passes for means then variances
    let n_obs = observables.len();
    let nf = n_trajectories as f64;
    let mut means = vec![vec![0.0; chunks + 1]; n_obs];
    let mut value_range = vec![(f64::INFINITY, f64::NEG_INFINITY); n_obs];
    for s in &samples {
        for o in 0..n_obs {
            for c in 0..=chunks {
                let v = s.values[o][c];
                means[o][c] += v;
                let r = &mut value_range[o];
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
    }
    for row in &mut means {
        for v in row.iter_mut() {
            *v /= nf;
        }
    }
    let standard_errors = if n_trajectories >= 2 {
        let mut ses = vec![vec![0.0; chunks + 1]; n_obs];
        for s in &samples {
            for o in 0..n_obs {
                for c in 0..=chunks {
                    let d = s.values[o][c] - means[o][c];
                    ses[o][c] += d * d;
                }
            }
        }
        for row in &mut ses {
            for v in row.iter_mut() {
                *v = (*v / (nf - 1.0) / nf).sqrt();
            }
        }
        Some(ses)
    } else {
        None
    };

    Ok(EnsembleResult {
        grid,
        observable_names: observables.iter().map(|o| o.name().to_string()).collect(),
        means,
        standard_errors,
        value_range,
        n_trajectories,
        master_seed,
        total_accepted: samples.iter().map(|s| s.accepted).sum(),
        total_rejected: samples.iter().map(|s| s.rejected).sum(),
        total_f_evals: samples.iter().map(|s| s.f_evals).sum(),
    })
}

/// Per-grid-point ratio of standard errors of two ensembles run with `N`
/// and `4N` trajectories on disjoint seeds; the expected value is 2.
/// Points where both errors vanish report 1 by convention.
pub fn standard_error_scaling_check(small: &EnsembleResult, large: &EnsembleResult) -> Result<Vec<f64>> {
    if small.master_seed == large.master_seed {
        return Err(Error::SeedOverlap {
            master_seed: small.master_seed,
        });
    }
    if large.n_trajectories != 4 * small.n_trajectories {
        return Err(Error::Invalid(format!(
            "expected a 4x trajectory ratio, got {} and {}",
            small.n_trajectories, large.n_trajectories
        )));
    }
    if small.grid.len() != large.grid.len() || small.observable_names != large.observable_names {
        return Err(Error::Invalid("ensembles are not comparable".into()));
    }
    let (se_s, se_l) = match (&small.standard_errors, &large.standard_errors) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Invalid("standard errors unavailable".into())),
    };
    let mut out = Vec::new();
    for o in 0..se_s.len() {
        for c in 0..se_s[o].len() {
            let (a, b) = (se_s[o][c], se_l[o][c]);
            out.push(if a == 0.0 && b == 0.0 { 1.0 } else { a / b });
        }
    }
    Ok(out)
}
