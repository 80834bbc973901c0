//! SDE system abstraction and the effective Runge-Kutta right-hand side.
//!
//! A system `dX = a(X,t) dt + sum_k b_k(X,t) dW^k` can be registered in two
//! forms. In `Ito` form the drift is the Ito drift `a` and the time
//! derivative needed by the stages is recovered by subtracting the
//! correction `1/2 sum_k sum_i b^i_k db^j_k/dX^i`. In `Derivative` form the
//! drift callback already *is* dX/dt and no correction is applied.
//!
//! The quantity fed to every Runge-Kutta stage is the effective increment
//!
//! ```text
//! f(x, t) = (dX/dt)(x, t) * dt + sum_k (dX/dW^k)(x, t) * dW^k
//! ```
//!
//! with the full-step `dt` and `dW` regardless of the stage node; stages
//! shift only the state and the time argument.

use crate::error::{Error, Result};

/// State vector of a system: `n` real components. Complex-valued equations
/// are embedded by interleaving real and imaginary parts.
pub type StateVector = Vec<f64>;

/// Relative scale of the default finite-difference jacobian step.
pub const FD_STEP_SCALE: f64 = 1e-6;

/// How the registered drift callback is to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientForm {
    /// Drift is the Ito drift `a`; the stage derivative is `a` minus the
    /// Ito correction computed from the diffusion jacobian.
    Ito,
    /// Drift is already the partial time derivative dX/dt; used when the
    /// correction has been folded in analytically.
    Derivative,
}

type FieldFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type PostAcceptFn = dyn Fn(&mut [f64]) + Send + Sync;

/// A system of Ito stochastic differential equations with `dim` components
/// driven by `wiener_dim` independent Wiener processes.
///
/// Coefficient callbacks must be pure: the same `(state, time)` input must
/// produce identical output. Values are shareable across trajectory workers.
pub struct SdeSystem {
    name: String,
    dim: usize,
    wiener_dim: usize,
    form: CoefficientForm,
    drift: Box<FieldFn>,
    /// Writes the `dim x wiener_dim` diffusion matrix row-major:
    /// `out[j * wiener_dim + k] = b^j_k`.
    diffusion: Box<FieldFn>,
    /// Optional analytic jacobian, written as `out[(j*m + k)*n + i] = db^j_k/dX^i`.
    diffusion_jacobian: Option<Box<FieldFn>>,
    /// Optional transform applied to the state after every accepted step.
    post_accept: Option<Box<PostAcceptFn>>,
}

impl SdeSystem {
    /// Ito-form system from drift and diffusion callbacks.
    pub fn new<D, B>(name: impl Into<String>, dim: usize, wiener_dim: usize, drift: D, diffusion: B) -> Self
    where
        D: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        B: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim >= 1, "state dimension must be at least 1");
        SdeSystem {
            name: name.into(),
            dim,
            wiener_dim,
            form: CoefficientForm::Ito,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            diffusion_jacobian: None,
            post_accept: None,
        }
    }

    /// System whose drift callback is already the partial time derivative;
    /// the Ito correction is skipped.
    pub fn derivative_form<D, B>(
        name: impl Into<String>,
        dim: usize,
        wiener_dim: usize,
        drift: D,
        diffusion: B,
    ) -> Self
    where
        D: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        B: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        let mut sys = Self::new(name, dim, wiener_dim, drift, diffusion);
        sys.form = CoefficientForm::Derivative;
        sys
    }

    /// Attach an analytic diffusion jacobian.
    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.diffusion_jacobian = Some(Box::new(jacobian));
        self
    }

    /// Attach a transform applied after every accepted step (e.g. an
    /// experimental renormalization).
    pub fn with_post_accept<P>(mut self, post: P) -> Self
    where
        P: Fn(&mut [f64]) + Send + Sync + 'static,
    {
        self.post_accept = Some(Box::new(post));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn wiener_dim(&self) -> usize {
        self.wiener_dim
    }

    pub fn form(&self) -> CoefficientForm {
        self.form
    }

    pub fn has_jacobian(&self) -> bool {
        self.diffusion_jacobian.is_some()
    }

    pub fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        (self.drift)(x, t, out);
    }

    pub fn diffusion_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim * self.wiener_dim);
        (self.diffusion)(x, t, out);
    }

    /// Analytic jacobian, if one was attached. Returns `false` otherwise.
    pub fn jacobian_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> bool {
        match &self.diffusion_jacobian {
            Some(j) => {
                debug_assert_eq!(out.len(), self.dim * self.wiener_dim * self.dim);
                j(x, t, out);
                true
            }
            None => false,
        }
    }

    pub(crate) fn apply_post_accept(&self, x: &mut [f64]) {
        if let Some(p) = &self.post_accept {
            p(x);
        }
    }
}

impl std::fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("wiener_dim", &self.wiener_dim)
            .field("form", &self.form)
            .field("has_jacobian", &self.diffusion_jacobian.is_some())
            .finish()
    }
}

/// Full-step time and Wiener increments handed to the stages of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementInput {
    pub dt: f64,
    pub dw: Vec<f64>,
}

/// Reusable buffers for coefficient evaluations.
#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    correction: Vec<f64>,
    jacobian: Vec<f64>,
    x_shift: Vec<f64>,
    diff_lo: Vec<f64>,
    diff_hi: Vec<f64>,
}

impl EvalScratch {
    pub fn for_system(system: &SdeSystem) -> Self {
        let n = system.dim();
        let m = system.wiener_dim();
        EvalScratch {
            drift: vec![0.0; n],
            diffusion: vec![0.0; n * m],
            correction: vec![0.0; n],
            jacobian: Vec::new(),
            x_shift: Vec::new(),
            diff_lo: Vec::new(),
            diff_hi: Vec::new(),
        }
    }
}

/// Central finite-difference jacobian of the diffusion map with a fixed
/// displacement `h` per state component: `(b(x + h e_i) - b(x - h e_i)) / 2h`.
///
/// Output is `n*m*n` with layout `out[(j*m + k)*n + i] = db^j_k/dX^i`.
pub fn finite_difference_jacobian(system: &SdeSystem, x: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let n = system.dim();
    let m = system.wiener_dim();
    let mut out = vec![0.0; n * m * n];
    let mut scratch = EvalScratch::for_system(system);
    fd_jacobian_into(system, x, t, |_| h, &mut scratch, &mut out)?;
    Ok(out)
}

/// Jacobian with the default per-component step `FD_STEP_SCALE * max(1, |x_i|)`.
fn scaled_fd_jacobian_into(
    system: &SdeSystem,
    x: &[f64],
    t: f64,
    scratch: &mut EvalScratch,
    out: &mut [f64],
) -> Result<()> {
    fd_jacobian_into(system, x, t, |xi| FD_STEP_SCALE * xi.abs().max(1.0), scratch, out)
}

fn fd_jacobian_into(
    system: &SdeSystem,
    x: &[f64],
    t: f64,
    step: impl Fn(f64) -> f64,
    scratch: &mut EvalScratch,
    out: &mut [f64],
) -> Result<()> {
    let n = system.dim();
    let m = system.wiener_dim();
    check_dim("state", n, x.len())?;
    scratch.x_shift.clear();
    scratch.x_shift.extend_from_slice(x);
    scratch.diff_lo.resize(n * m, 0.0);
    scratch.diff_hi.resize(n * m, 0.0);
    for i in 0..n {
        let h = step(x[i]);
        scratch.x_shift[i] = x[i] + h;
        system.diffusion_into(&scratch.x_shift, t, &mut scratch.diff_hi);
        scratch.x_shift[i] = x[i] - h;
        system.diffusion_into(&scratch.x_shift, t, &mut scratch.diff_lo);
        scratch.x_shift[i] = x[i];
        let inv = 1.0 / (2.0 * h);
        for j in 0..n {
            for k in 0..m {
                let d = (scratch.diff_hi[j * m + k] - scratch.diff_lo[j * m + k]) * inv;
                if !d.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("diffusion jacobian entry (j={j}, k={k}, i={i})"),
                    });
                }
                out[(j * m + k) * n + i] = d;
            }
        }
    }
    Ok(())
}

/// The Ito correction vector `c^j = 1/2 sum_k sum_i b^i_k db^j_k/dX^i`,
/// i.e. the term subtracted from the Ito drift to obtain dX/dt.
///
/// Uses the analytic jacobian when present, otherwise central finite
/// differences with the default step scaling.
pub fn ito_drift_correction(system: &SdeSystem, x: &[f64], t: f64) -> Result<StateVector> {
    let mut scratch = EvalScratch::for_system(system);
    let mut out = vec![0.0; system.dim()];
    ito_drift_correction_into(system, x, t, &mut scratch, &mut out)?;
    Ok(out)
}

fn ito_drift_correction_into(
    system: &SdeSystem,
    x: &[f64],
    t: f64,
    scratch: &mut EvalScratch,
    out: &mut [f64],
) -> Result<()> {
    let n = system.dim();
    let m = system.wiener_dim();
    check_dim("state", n, x.len())?;
    out.fill(0.0);
    if m == 0 {
        return Ok(());
    }
    scratch.diffusion.resize(n * m, 0.0);
    system.diffusion_into(x, t, &mut scratch.diffusion);
    let mut jacobian = std::mem::take(&mut scratch.jacobian);
    jacobian.resize(n * m * n, 0.0);
    if !system.jacobian_into(x, t, &mut jacobian) {
        scaled_fd_jacobian_into(system, x, t, scratch, &mut jacobian)?;
    }
    for j in 0..n {
        let mut acc = 0.0;
        for k in 0..m {
            let row = &jacobian[(j * m + k) * n..(j * m + k) * n + n];
            for i in 0..n {
                acc += scratch.diffusion[i * m + k] * row[i];
            }
        }
        let c = 0.5 * acc;
        if !c.is_finite() {
            scratch.jacobian = jacobian;
            return Err(Error::NonFinite {
                context: format!("ito drift correction component {j}"),
            });
        }
        out[j] = c;
    }
    scratch.jacobian = jacobian;
    Ok(())
}

/// The effective stage increment of the lifted scheme:
/// `f = (dX/dt) * dt + sum_k b_k * dW^k`, with `dX/dt` recovered from the
/// Ito drift when the system is registered in Ito form.
pub fn effective_increment(system: &SdeSystem, x: &[f64], t: f64, inc: &IncrementInput) -> Result<StateVector> {
    let mut scratch = EvalScratch::for_system(system);
    let mut out = vec![0.0; system.dim()];
    effective_increment_into(system, x, t, inc.dt, &inc.dw, &mut scratch, &mut out)?;
    Ok(out)
}

/// Allocation-free form of [`effective_increment`] used by the stepper.
pub(crate) fn effective_increment_into(
    system: &SdeSystem,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
    scratch: &mut EvalScratch,
    out: &mut [f64],
) -> Result<()> {
    let n = system.dim();
    let m = system.wiener_dim();
    check_dim("state", n, x.len())?;
    check_dim("wiener increments", m, dw.len())?;
    scratch.drift.resize(n, 0.0);
    system.drift_into(x, t, &mut scratch.drift);
    if system.form() == CoefficientForm::Ito && m > 0 {
        scratch.correction.resize(n, 0.0);
        // borrow dance: correction_into needs the other scratch buffers
        let mut correction = std::mem::take(&mut scratch.correction);
        ito_drift_correction_into(system, x, t, scratch, &mut correction)?;
        for j in 0..n {
            scratch.drift[j] -= correction[j];
        }
        scratch.correction = correction;
    }
    // drift part and noise part are combined by a single addition so that
    // f(dt, dw) == f(dt, 0) + f(0, dw) holds bitwise
    for j in 0..n {
        out[j] = scratch.drift[j] * dt;
    }
    if m > 0 {
        scratch.diffusion.resize(n * m, 0.0);
        system.diffusion_into(x, t, &mut scratch.diffusion);
        for j in 0..n {
            let mut noise = 0.0;
            for k in 0..m {
                noise += scratch.diffusion[j * m + k] * dw[k];
            }
            out[j] += noise;
        }
    }
    for (j, v) in out.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("effective increment component {j} of system '{}'", system.name()),
            });
        }
    }
    Ok(())
}

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gbm(mu: f64, sigma: f64) -> SdeSystem {
        SdeSystem::new(
            "gbm",
            1,
            1,
            move |x, _t, out: &mut [f64]| out[0] = mu * x[0],
            move |x, _t, out: &mut [f64]| out[0] = sigma * x[0],
        )
    }

    fn gbm_with_jacobian(mu: f64, sigma: f64) -> SdeSystem {
        gbm(mu, sigma).with_jacobian(move |_x, _t, out: &mut [f64]| out[0] = sigma)
    }

    #[test]
    fn correction_gbm_matches_hand_value() {
        // b(x) = sigma*x with sigma = 0.5 at x = 2: c = sigma^2 * x / 2 = 0.25
        let sys = gbm(0.1, 0.5);
        let c = ito_drift_correction(&sys, &[2.0], 0.0).unwrap();
        assert!((c[0] - 0.25).abs() < 1e-7, "fd correction {}", c[0]);
        let sys = gbm_with_jacobian(0.1, 0.5);
        let c = ito_drift_correction(&sys, &[2.0], 0.0).unwrap();
        assert!((c[0] - 0.25).abs() < 1e-15, "analytic correction {}", c[0]);
    }

    #[test]
    fn correction_vanishes_for_constant_diffusion() {
        let sys = SdeSystem::new(
            "additive",
            2,
            2,
            |_x, _t, out: &mut [f64]| out.fill(0.0),
            |_x, _t, out: &mut [f64]| {
                out.fill(0.0);
                out[0] = 1.0;
                out[3] = 1.0;
            },
        );
        let c = ito_drift_correction(&sys, &[0.7, -1.3], 0.5).unwrap();
        for v in c {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn correction_empty_for_no_noise() {
        let sys = SdeSystem::new(
            "ode",
            3,
            0,
            |x, _t, out: &mut [f64]| out.copy_from_slice(x),
            |_x, _t, _out: &mut [f64]| {},
        );
        let c = ito_drift_correction(&sys, &[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn effective_increment_pure_drift() {
        let sys = SdeSystem::new(
            "linear",
            1,
            0,
            |x, _t, out: &mut [f64]| out[0] = x[0],
            |_x, _t, _out: &mut [f64]| {},
        );
        let inc = IncrementInput { dt: 0.1, dw: vec![] };
        let f = effective_increment(&sys, &[1.0], 0.0, &inc).unwrap();
        assert!((f[0] - 0.1).abs() < 1e-16);
    }

    #[test]
    fn effective_increment_gbm_hand_value() {
        // mu = 0, sigma = 1, x = 1, dt = 0.01, dw = 0.2:
        // (0 - 1/2) * 0.01 + 1 * 0.2 = 0.195
        let sys = gbm_with_jacobian(0.0, 1.0);
        let inc = IncrementInput { dt: 0.01, dw: vec![0.2] };
        let f = effective_increment(&sys, &[1.0], 0.0, &inc).unwrap();
        assert!((f[0] - 0.195).abs() < 1e-15, "got {}", f[0]);
    }

    #[test]
    fn effective_increment_reduces_to_drift_term() {
        // zero noise increment and constant diffusion: f = a * dt exactly
        let sys = SdeSystem::new(
            "shift",
            1,
            1,
            |x, _t, out: &mut [f64]| out[0] = 2.0 * x[0],
            |_x, _t, out: &mut [f64]| out[0] = 3.0,
        );
        let inc = IncrementInput { dt: 0.25, dw: vec![0.0] };
        let f = effective_increment(&sys, &[1.5], 0.0, &inc).unwrap();
        assert_eq!(f[0], 2.0 * 1.5 * 0.25);
    }

    #[test]
    fn effective_increment_splits_exactly() {
        // f(dt, dw) == f(dt, 0) + f(0, dw) bitwise
        let sys = gbm_with_jacobian(0.06, 0.5);
        for s in 0..50u64 {
            let x = [0.5 + 0.13 * s as f64];
            let dt = 0.017;
            let dw = 0.31 - 0.01 * s as f64;
            let full = effective_increment(&sys, &x, 0.0, &IncrementInput { dt, dw: vec![dw] }).unwrap();
            let drift = effective_increment(&sys, &x, 0.0, &IncrementInput { dt, dw: vec![0.0] }).unwrap();
            let noise = effective_increment(&sys, &x, 0.0, &IncrementInput { dt: 0.0, dw: vec![dw] }).unwrap();
            assert_eq!(full[0], drift[0] + noise[0]);
        }
    }

    #[test]
    fn fd_jacobian_linear_diffusion_is_exact() {
        let sys = gbm(0.0, 1.0);
        let jac = finite_difference_jacobian(&sys, &[1.0], 0.0, 1e-6).unwrap();
        assert!((jac[0] - 1.0).abs() <= 1e-10, "got {}", jac[0]);
    }

    #[test]
    fn fd_jacobian_quadratic_diffusion() {
        let sys = SdeSystem::new(
            "quadratic",
            1,
            1,
            |_x, _t, out: &mut [f64]| out[0] = 0.0,
            |x, _t, out: &mut [f64]| out[0] = x[0] * x[0],
        );
        let jac = finite_difference_jacobian(&sys, &[1.0], 0.0, 1e-5).unwrap();
        assert!((jac[0] - 2.0).abs() <= 1e-9, "got {}", jac[0]);
    }

    #[test]
    fn fd_jacobian_constant_diffusion_is_zero() {
        let sys = SdeSystem::new(
            "const",
            2,
            1,
            |_x, _t, out: &mut [f64]| out.fill(0.0),
            |_x, _t, out: &mut [f64]| {
                out[0] = 1.0;
                out[1] = -2.0;
            },
        );
        let jac = finite_difference_jacobian(&sys, &[0.3, 0.8], 0.0, 1e-6).unwrap();
        assert!(jac.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn analytic_and_fd_jacobians_agree() {
        let sys = gbm_with_jacobian(0.06, 0.5);
        for s in 0..20 {
            let x = [0.2 + 0.37 * s as f64];
            let fd = finite_difference_jacobian(&sys, &x, 0.0, 1e-6).unwrap();
            let mut analytic = vec![0.0; 1];
            assert!(sys.jacobian_into(&x, 0.0, &mut analytic));
            let rel = (fd[0] - analytic[0]).abs() / analytic[0].abs().max(1.0);
            assert!(rel < 1e-6, "relative deviation {rel}");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = gbm(0.0, 1.0);
        let inc = IncrementInput { dt: 0.1, dw: vec![0.1, 0.2] };
        match effective_increment(&sys, &[1.0], 0.0, &inc) {
            Err(Error::Dimension { expected: 1, actual: 2, .. }) => {}
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_diffusion_is_reported() {
        let sys = SdeSystem::new(
            "bad",
            1,
            1,
            |_x, _t, out: &mut [f64]| out[0] = 0.0,
            |x, _t, out: &mut [f64]| out[0] = (x[0] - 1.0).sqrt(),
        );
        let err = finite_difference_jacobian(&sys, &[1.0], 0.0, 1e-7).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
