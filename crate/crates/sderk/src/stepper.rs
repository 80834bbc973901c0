//! Embedded Runge-Kutta stepping on the effective increment, with dyadic
//! step control over the binary Brownian tree.
//!
//! One step evaluates the usual explicit stages, except that every stage
//! sees the effective increment built from the full-step `(dt, dW)`; only
//! the state and the time argument shift between stages. The difference
//! between the propagating and embedded solutions gives the local error
//! estimate. A rejected interval is halved through the Brownian stack so
//! the realized Wiener path is kept; the right half stays pending and the
//! left half is retried.

use crate::brownian::{split_node, BrownianStack, IncrementNode, RngStream};
use crate::error::{Error, Result};
use crate::system::{effective_increment_into, EvalScratch, SdeSystem, StateVector};
use crate::tableau::ButcherTableau;

/// Step-size policy and tolerances for one integration.
#[derive(Debug, Clone)]
pub struct StepController {
    /// Relative tolerance entering the error norm.
    pub rtol: f64,
    /// Absolute tolerance entering the error norm.
    pub atol: f64,
    /// Base step H; all steps are dyadic fractions `H / 2^k`.
    pub base_step: f64,
    /// Smallest dyadic depth, i.e. the largest allowed step is `H / 2^min_depth`.
    pub min_depth: u32,
    /// Largest dyadic depth; a step may be halved at most this many times.
    pub max_depth: u32,
    /// Margin applied to the doubling threshold.
    pub safety: f64,
    /// Consecutive rejections tolerated at one time point.
    pub max_rejects: u32,
    /// Accept every step at the base size, ignoring the error estimate.
    pub fixed_step: bool,
}

impl StepController {
    pub fn adaptive(rtol: f64, atol: f64, base_step: f64) -> Self {
        StepController {
            rtol,
            atol,
            base_step,
            min_depth: 0,
            max_depth: crate::brownian::DEFAULT_MAX_DEPTH,
            safety: 0.8,
            max_rejects: 60,
            fixed_step: false,
        }
    }

    pub fn fixed(base_step: f64) -> Self {
        StepController {
            rtol: 0.0,
            atol: 1.0,
            base_step,
            min_depth: 0,
            max_depth: crate::brownian::DEFAULT_MAX_DEPTH,
            safety: 0.8,
            max_rejects: 0,
            fixed_step: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol >= 0.0 && self.atol >= 0.0 && self.rtol + self.atol > 0.0) {
            return Err(Error::Invalid(format!(
                "tolerances must be non-negative with rtol + atol > 0, got rtol {} atol {}",
                self.rtol, self.atol
            )));
        }
        if !(self.base_step > 0.0) {
            return Err(Error::Invalid(format!("base step must be positive, got {}", self.base_step)));
        }
        if self.min_depth >= self.max_depth {
            return Err(Error::Invalid(format!(
                "dyadic depth bounds inverted: min {} max {}",
                self.min_depth, self.max_depth
            )));
        }
        Ok(())
    }
}

/// Outcome of a single attempted step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub t_new: f64,
    pub y_new: StateVector,
    /// Error norm of the embedded pair; 0 when no embedded weights exist.
    pub err: f64,
    pub accepted: bool,
    pub dt_used: f64,
}

/// Accepted trajectory: states at accepted steps plus work counters.
#[derive(Debug, Clone)]
pub struct SolutionPath {
    /// Tick positions of the entries, starting at 0.
    pub ticks: Vec<u64>,
    /// Times of the entries, starting at the initial time.
    pub times: Vec<f64>,
    /// States at the entries; the first entry is the initial condition.
    pub states: Vec<StateVector>,
    /// Increment intervals consumed by the accepted steps, in time order.
    pub steps: Vec<IncrementNode>,
    pub accepted: u64,
    pub rejected: u64,
    pub f_evals: u64,
}

impl SolutionPath {
    /// State at an exact tick position, when that tick is an entry.
    pub fn state_at_ticks(&self, ticks: u64) -> Option<&StateVector> {
        self.ticks.binary_search(&ticks).ok().map(|i| &self.states[i])
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("path holds at least the initial state")
    }
}

/// One explicit Runge-Kutta step on the effective increment.
///
/// Returns the propagating solution and, when the tableau is an embedded
/// pair, the lower-order solution.
pub fn rk_step(
    tab: &ButcherTableau,
    system: &SdeSystem,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
) -> Result<(StateVector, Option<StateVector>)> {
    let mut ws = StepWorkspace::new(system, tab);
    let mut y_high = vec![0.0; system.dim()];
    let mut y_low = tab.embedded_weights().map(|_| vec![0.0; system.dim()]);
    rk_step_into(tab, system, x, t, dt, dw, &mut ws, &mut y_high, y_low.as_deref_mut())?;
    Ok((y_high, y_low))
}

/// Stage and coefficient buffers reused across steps of one trajectory.
#[derive(Debug)]
pub struct StepWorkspace {
    stages: Vec<Vec<f64>>,
    stage_state: Vec<f64>,
    eval: EvalScratch,
}

impl StepWorkspace {
    pub fn new(system: &SdeSystem, tab: &ButcherTableau) -> Self {
        StepWorkspace {
            stages: (0..tab.stages()).map(|_| vec![0.0; system.dim()]).collect(),
            stage_state: vec![0.0; system.dim()],
            eval: EvalScratch::for_system(system),
        }
    }
}

/// Propagating solution only, reusing caller-owned buffers.
pub(crate) fn rk_step_with_workspace(
    tab: &ButcherTableau,
    system: &SdeSystem,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
    ws: &mut StepWorkspace,
    y_high: &mut [f64],
) -> Result<()> {
    rk_step_into(tab, system, x, t, dt, dw, ws, y_high, None)
}

fn rk_step_into(
    tab: &ButcherTableau,
    system: &SdeSystem,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
    ws: &mut StepWorkspace,
    y_high: &mut [f64],
    y_low: Option<&mut [f64]>,
) -> Result<()> {
    let n = system.dim();
    let s = tab.stages();
    let nodes = tab.nodes();
    let coupling = tab.coupling();
    for stage in 0..s {
        ws.stage_state.copy_from_slice(x);
        let row = &coupling[stage];
        for (r, &a) in row.iter().enumerate() {
            if a != 0.0 {
                let k = &ws.stages[r];
                for j in 0..n {
                    ws.stage_state[j] += a * k[j];
                }
            }
        }
        let t_stage = t + nodes[stage] * dt;
        let out = &mut ws.stages[stage];
        effective_increment_into(system, &ws.stage_state, t_stage, dt, dw, &mut ws.eval, out).map_err(
            |e| match e {
                Error::NonFinite { context } => Error::NonFinite {
                    context: format!("stage {} of {}: {context}", stage + 1, tab.name()),
                },
                other => other,
            },
        )?;
    }
    y_high.copy_from_slice(x);
    for (stage, &b) in tab.weights().iter().enumerate() {
        if b != 0.0 {
            let k = &ws.stages[stage];
            for j in 0..n {
                y_high[j] += b * k[j];
            }
        }
    }
    if let Some(y_low) = y_low {
        let bh = tab
            .embedded_weights()
            .expect("y_low requested without embedded weights");
        y_low.copy_from_slice(x);
        for (stage, &b) in bh.iter().enumerate() {
            if b != 0.0 {
                let k = &ws.stages[stage];
                for j in 0..n {
                    y_low[j] += b * k[j];
                }
            }
        }
    }
    Ok(())
}

/// Mixed relative/absolute error norm of the embedded difference; a step is
/// acceptable when the norm is at most 1.
pub fn error_norm(y_high: &[f64], y_low: &[f64], y_prev: &[f64], ctrl: &StepController) -> f64 {
    debug_assert_eq!(y_high.len(), y_low.len());
    debug_assert_eq!(y_high.len(), y_prev.len());
    let n = y_high.len();
    let mut acc = 0.0;
    for j in 0..n {
        let scale = ctrl.atol + ctrl.rtol * y_prev[j].abs().max(y_high[j].abs());
        let r = (y_high[j] - y_low[j]) / scale;
        acc += r * r;
    }
    (acc / n as f64).sqrt()
}

/// Integrates one trajectory from the stack's origin to `t_end`, which must
/// be a whole number of base steps away.
///
/// On rejection the interval is split, the right half pushed pending and
/// the left half retried. After an acceptance well below tolerance the next
/// proposal doubles (at most one doubling per accepted step); pending
/// siblings merge to realize the growth.
pub fn integrate_path(
    system: &SdeSystem,
    tab: &ButcherTableau,
    ctrl: &StepController,
    stack: &mut BrownianStack,
    rng: &mut RngStream,
    y0: &[f64],
    t_end: f64,
) -> Result<SolutionPath> {
    ctrl.validate()?;
    crate::system::check_dim("initial state", system.dim(), y0.len())?;
    if stack.wiener_dim() != system.wiener_dim() {
        return Err(Error::Dimension {
            what: "stack wiener dimension",
            expected: system.wiener_dim(),
            actual: stack.wiener_dim(),
        });
    }
    if !tab.is_embedded_pair() && !ctrl.fixed_step {
        return Err(Error::Invalid(format!(
            "tableau '{}' has no embedded weights; use a fixed-step controller",
            tab.name()
        )));
    }
    let grid = *stack.grid();
    if (grid.base_step() - ctrl.base_step).abs() > 1e-12 * ctrl.base_step {
        return Err(Error::Invalid(
            "controller base step does not match the stack grid".into(),
        ));
    }
    let chunks = (t_end - grid.origin()) / grid.base_step();
    let n_chunks = chunks.round();
    if n_chunks < 1.0 || (chunks - n_chunks).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "integration horizon must be a whole number of base steps, got {chunks} chunks"
        )));
    }
    let end_ticks = n_chunks as u64 * grid.ticks_per_base();

    let max_span = grid.ticks_per_base() >> ctrl.min_depth;
    let doubling_margin = ctrl.safety * 2f64.powf(-(tab.sde_order() + 1.0));

    let mut ws = StepWorkspace::new(system, tab);
    let mut y = y0.to_vec();
    let mut y_high = vec![0.0; system.dim()];
    let mut y_low = vec![0.0; system.dim()];
    let use_embedded = tab.is_embedded_pair() && !ctrl.fixed_step;

    let mut path = SolutionPath {
        ticks: vec![0],
        times: vec![grid.origin()],
        states: vec![y.clone()],
        steps: Vec::new(),
        accepted: 0,
        rejected: 0,
        f_evals: 0,
    };

    let mut cursor = 0u64;
    let mut proposed = max_span;
    let mut rejects = 0u32;

    while cursor < end_ticks {
        let node = stack.next_node_span(&*rng, proposed)?;
        debug_assert_eq!(node.start, cursor);
        let dt = node.dt(&grid);
        let t = grid.time_at(cursor);
        path.f_evals += tab.stages() as u64;
        let step_result = rk_step_into(
            tab,
            system,
            &y,
            t,
            dt,
            &node.dw,
            &mut ws,
            &mut y_high,
            use_embedded.then_some(&mut y_low[..]),
        );
        let err = match step_result {
            Ok(()) => {
                if use_embedded {
                    error_norm(&y_high, &y_low, &y, ctrl)
                } else {
                    0.0
                }
            }
            Err(e @ Error::NonFinite { .. }) => {
                if ctrl.fixed_step {
                    return Err(e);
                }
                // an overflowing stage is treated as an infinitely bad step
                f64::INFINITY
            }
            Err(other) => return Err(other),
        };

        if err <= 1.0 {
            std::mem::swap(&mut y, &mut y_high);
            system.apply_post_accept(&mut y);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("accepted state at t = {}", grid.time_at(node.end())),
                });
            }
            cursor = node.end();
            path.ticks.push(cursor);
            path.times.push(grid.time_at(cursor));
            path.states.push(y.clone());
            path.accepted += 1;
            rejects = 0;
            proposed = if !ctrl.fixed_step && err < doubling_margin && node.span < max_span {
                node.span * 2
            } else {
                node.span
            };
            path.steps.push(node);
        } else {
            rejects += 1;
            path.rejected += 1;
            if rejects > ctrl.max_rejects {
                return Err(Error::TooManyRejects {
                    t,
                    dt,
                    err,
                    rejects,
                });
            }
            if node.span < 2 {
                return Err(Error::StepSizeUnderflow { t });
            }
            let (left, right) = split_node(&*rng, &grid, &node)?;
            proposed = left.span;
            stack.push_pending(right);
            stack.push_pending(left);
        }
    }
    Ok(path)
}

/// Attempts a single step at the next pending or fresh interval and reports
/// the outcome without advancing any state (the node is pushed back).
pub fn step_once(
    system: &SdeSystem,
    tab: &ButcherTableau,
    ctrl: &StepController,
    stack: &mut BrownianStack,
    rng: &mut RngStream,
    y: &[f64],
    proposed_dt: f64,
) -> Result<StepReport> {
    let grid = *stack.grid();
    let node = stack.next_node(&*rng, proposed_dt)?;
    let dt = node.dt(&grid);
    let t = node.t0(&grid);
    let (y_high, y_low) = rk_step(tab, system, y, t, dt, &node.dw)?;
    let err = y_low
        .as_ref()
        .map(|low| error_norm(&y_high, low, y, ctrl))
        .unwrap_or(0.0);
    let accepted = ctrl.fixed_step || err <= 1.0;
    let t_new = grid.time_at(node.end());
    stack.push_pending(node);
    Ok(StepReport {
        t_new,
        y_new: y_high,
        err,
        accepted,
        dt_used: dt,
    })
}
