//! Empirical strong-convergence measurement on problems with closed-form
//! strong solutions.
//!
//! All step sizes share one dyadic family: each path realizes its finest
//! grid of increments once, and every coarser level uses pairwise sums of
//! the level below, so the numerical solutions at all step sizes see the
//! same Brownian path. The terminal error is compared against the exact
//! solution evaluated at the same terminal Wiener value.

use crate::brownian::{sample_increment, RngStream};
use crate::error::{Error, Result};
use crate::stepper::StepWorkspace;
use crate::system::SdeSystem;
use crate::tableau::ButcherTableau;

/// Mean errors below this floor are excluded from slope fits.
pub const ERROR_FLOOR: f64 = 10.0 * f64::EPSILON;

/// An SDE with a strong solution expressible as a function of time and the
/// current Wiener values.
pub struct AnalyticSde {
    pub system: SdeSystem,
    pub x0: Vec<f64>,
    exact: Box<dyn Fn(&[f64], f64, &[f64]) -> Vec<f64> + Send + Sync>,
}

impl AnalyticSde {
    pub fn new<F>(system: SdeSystem, x0: Vec<f64>, exact: F) -> Self
    where
        F: Fn(&[f64], f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        AnalyticSde {
            system,
            x0,
            exact: Box::new(exact),
        }
    }

    pub fn exact(&self, x0: &[f64], t: f64, w: &[f64]) -> Vec<f64> {
        (self.exact)(x0, t, w)
    }
}

/// Closed-form geometric Brownian motion solution
/// `x0 * exp((mu - sigma^2/2) t + sigma w)`.
pub fn gbm_exact(x0: f64, mu: f64, sigma: f64, t: f64, w: f64) -> f64 {
    x0 * ((mu - 0.5 * sigma * sigma) * t + sigma * w).exp()
}

/// Geometric Brownian motion as an analytic benchmark problem, with the
/// diffusion jacobian supplied analytically.
pub fn gbm_problem(x0: f64, mu: f64, sigma: f64) -> AnalyticSde {
    let system = SdeSystem::new(
        "gbm",
        1,
        1,
        move |x, _t, out: &mut [f64]| out[0] = mu * x[0],
        move |x, _t, out: &mut [f64]| out[0] = sigma * x[0],
    )
    .with_jacobian(move |_x, _t, out: &mut [f64]| out[0] = sigma);
    AnalyticSde::new(system, vec![x0], move |x0, t, w| {
        vec![gbm_exact(x0[0], mu, sigma, t, w[0])]
    })
}

/// Ornstein-Uhlenbeck process `dX = -lambda X dt + sigma dW`. Its exact
/// solution needs the whole path history, so it serves only as a weak
/// (mean) check: `E[X_T] = x0 exp(-lambda T)`.
pub fn ou_system(lambda: f64, sigma: f64) -> SdeSystem {
    SdeSystem::new(
        "ornstein-uhlenbeck",
        1,
        1,
        move |x, _t, out: &mut [f64]| out[0] = -lambda * x[0],
        move |_x, _t, out: &mut [f64]| out[0] = sigma,
    )
    .with_jacobian(|_x, _t, out: &mut [f64]| out[0] = 0.0)
}

/// One measured point of a strong-error ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderPoint {
    pub h: f64,
    pub mean_error: f64,
    pub n_paths: usize,
}

/// Strong-error ladder with its fitted log-log slope.
#[derive(Debug, Clone)]
pub struct OrderReport {
    /// Points entering the fit, coarsest first.
    pub points: Vec<OrderPoint>,
    /// Points excluded because the mean error fell below [`ERROR_FLOOR`].
    pub excluded: Vec<OrderPoint>,
    pub slope: f64,
    /// Two standard errors of the fitted slope.
    pub half_width: f64,
}

impl OrderReport {
    /// Renders the ladder as CSV plus a summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,mean_error,n_paths\n");
        for p in self.points.iter().chain(&self.excluded) {
            out.push_str(&format!("{:.16e},{:.16e},{}\n", p.h, p.mean_error, p.n_paths));
        }
        out.push_str(&format!(
            "# slope={:.6} halfwidth={:.6}\n",
            self.slope, self.half_width
        ));
        out
    }
}

/// Ordinary least squares on `(ln h, ln err)`: returns the slope and twice
/// its standard error. Requires at least three points.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            actual: points.len(),
        });
    }
    for &(h, e) in points {
        if h <= 0.0 || e <= 0.0 {
            return Err(Error::Invalid(format!(
                "log-log fit needs positive values, got ({h}, {e})"
            )));
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let se = if points.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, 2.0 * se))
}

/// Slope through exactly two points; used where the usable ladder is short.
pub fn two_point_slope(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1 / b.1).ln() / (a.0 / b.0).ln()
}

/// Measures the mean strong terminal error `E[|X_T^num - X_T^exact|]` at
/// step sizes `t_end / 2^k` for each depth `k`, over `n_paths` coupled
/// paths, and fits the log-log slope over the points above the error
/// floor.
///
/// The increments of all levels are pairwise sums of one finest-grid
/// realization per path, so every level integrates the same Brownian path.
pub fn strong_error(
    problem: &AnalyticSde,
    tab: &ButcherTableau,
    t_end: f64,
    depths: &[u32],
    n_paths: usize,
    master_seed: u64,
) -> Result<OrderReport> {
    if depths.is_empty() {
        return Err(Error::Invalid("no step-size depths given".into()));
    }
    if n_paths == 0 {
        return Err(Error::Invalid("need at least one path".into()));
    }
    let mut depths = depths.to_vec();
    depths.sort_unstable();
    depths.dedup();
    let system = &problem.system;
    let m = system.wiener_dim();
    let n = system.dim();
    let deepest = *depths.last().unwrap();
    let fine_count = 1usize << deepest;

    let sums: Vec<f64> = run_paths(0..n_paths, |path| {
        let mut rng = RngStream::new(master_seed, path as u64);
        let mut ws = StepWorkspace::new(system, tab);
        let h_fine = t_end / fine_count as f64;
        // finest increments in time order; each row is one time slot
        let fine: Vec<Vec<f64>> = (0..fine_count)
            .map(|_| sample_increment(&mut rng, h_fine, m))
            .collect();
        let mut w_terminal = vec![0.0; m];
        for inc in &fine {
            for k in 0..m {
                w_terminal[k] += inc[k];
            }
        }
        let exact = problem.exact(&problem.x0, t_end, &w_terminal);

        // levels[d] holds the increments at depth d, built by pairwise sums
        let mut per_depth_errors = vec![0.0f64; depths.len()];
        let mut level = fine;
        let mut level_depth = deepest;
        loop {
            if let Some(pos) = depths.iter().position(|&d| d == level_depth) {
                let h = t_end / level.len() as f64;
                let mut x = problem.x0.clone();
                let mut y = vec![0.0; n];
                let mut t = 0.0;
                for (i, dw) in level.iter().enumerate() {
                    step_fixed(tab, system, &x, t, h, dw, &mut ws, &mut y)?;
                    std::mem::swap(&mut x, &mut y);
                    t = (i + 1) as f64 * h;
                }
                let err: f64 = x
                    .iter()
                    .zip(&exact)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
                per_depth_errors[pos] = err;
            }
            if level_depth == 0 {
                break;
            }
            level = level
                .chunks(2)
                .map(|pair| {
                    (0..m)
                        .map(|k| pair.iter().map(|inc| inc[k]).sum())
                        .collect()
                })
                .collect();
            level_depth -= 1;
        }
        Ok(per_depth_errors)
    })?
    .into_iter()
    .fold(vec![0.0; depths.len()], |mut acc, errs| {
        for (a, e) in acc.iter_mut().zip(&errs) {
            *a += e;
        }
        acc
    });

    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (i, &d) in depths.iter().enumerate() {
        let p = OrderPoint {
            h: t_end / (1u64 << d) as f64,
            mean_error: sums[i] / n_paths as f64,
            n_paths,
        };
        if p.mean_error > ERROR_FLOOR {
            points.push(p);
        } else {
            excluded.push(p);
        }
    }
    points.sort_by(|a, b| b.h.partial_cmp(&a.h).unwrap());
    let fit: Vec<(f64, f64)> = points.iter().map(|p| (p.h, p.mean_error)).collect();
    let (slope, half_width) = fit_loglog_slope(&fit)?;
    Ok(OrderReport {
        points,
        excluded,
        slope,
        half_width,
    })
}

/// Deterministic order ladder: integrates `y' = -y` from 1 to `t_end = 1`
/// with `round(1/h)` fixed steps per requested `h` and returns
/// `(effective h, |error|)` pairs against `exp(-1)`.
pub fn ode_error_ladder(tab: &ButcherTableau, h_values: &[f64]) -> Result<Vec<(f64, f64)>> {
    let system = SdeSystem::new(
        "linear-decay",
        1,
        0,
        |x, _t, out: &mut [f64]| out[0] = -x[0],
        |_x, _t, _out: &mut [f64]| {},
    );
    let mut ws = StepWorkspace::new(&system, tab);
    let mut out = Vec::with_capacity(h_values.len());
    let exact = (-1.0f64).exp();
    for &h in h_values {
        if h <= 0.0 || h > 1.0 {
            return Err(Error::Invalid(format!("step {h} outside (0, 1]")));
        }
        let steps = (1.0 / h).round().max(1.0) as usize;
        let h_eff = 1.0 / steps as f64;
        let mut x = vec![1.0];
        let mut y = vec![0.0];
        for i in 0..steps {
            step_fixed(tab, &system, &x, i as f64 * h_eff, h_eff, &[], &mut ws, &mut y)?;
            std::mem::swap(&mut x, &mut y);
        }
        out.push((h_eff, (x[0] - exact).abs()));
    }
    Ok(out)
}

fn step_fixed(
    tab: &ButcherTableau,
    system: &SdeSystem,
    x: &[f64],
    t: f64,
    h: f64,
    dw: &[f64],
    ws: &mut StepWorkspace,
    out: &mut [f64],
) -> Result<()> {
    crate::stepper::rk_step_with_workspace(tab, system, x, t, h, dw, ws, out)
}

/// Runs the closure over the index range, in parallel, preserving index
/// order in the returned vector; any failure aborts with the first error.
pub(crate) fn run_paths<T, F>(range: std::ops::Range<usize>, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Send + Sync,
{
    use rayon::prelude::*;
    range
        .into_par_iter()
        .map(|i| {
            body(i).map_err(|e| Error::Trajectory {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gbm_exact_limits() {
        assert_eq!(gbm_exact(2.5, 0.1, 0.4, 0.0, 0.0), 2.5);
        let deterministic = gbm_exact(1.0, 0.3, 0.0, 2.0, 0.7);
        assert!((deterministic - (0.6f64).exp()).abs() < 1e-15);
        // x0 = 1, mu = 0, sigma = 1, t = 1, w = 0 -> exp(-1/2)
        let v = gbm_exact(1.0, 0.0, 1.0, 1.0, 0.0);
        assert!((v - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn fit_recovers_exact_power_law() {
        let pts = [(1.0, 1.0), (0.5, 0.25), (0.25, 0.0625)];
        let (slope, hw) = fit_loglog_slope(&pts).unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
        assert!(hw < 1e-12);
    }

    #[test]
    fn fit_requires_three_points() {
        let pts = [(1.0, 1.0), (0.5, 0.5)];
        assert!(matches!(
            fit_loglog_slope(&pts),
            Err(Error::InsufficientPoints { needed: 3, actual: 2 })
        ));
    }

    #[test]
    fn fit_tolerates_multiplicative_noise() {
        // 5% noise around an h^3 law stays within [2.7, 3.3]
        let mut rng = RngStream::new(5150, 0);
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|k| {
                let h = 0.5f64.powi(k);
                let noise = 1.0 + 0.05 * (2.0 * rng.uniform() - 1.0);
                (h, h.powi(3) * noise)
            })
            .collect();
        let (slope, _) = fit_loglog_slope(&pts).unwrap();
        assert!((2.7..=3.3).contains(&slope), "slope {slope}");
    }

    #[test]
    fn deterministic_ladder_reproduces_rk4_order() {
        let tab = ButcherTableau::classic_rk4();
        let ladder = ode_error_ladder(&tab, &[0.2, 0.1, 0.05, 0.025, 0.0125]).unwrap();
        let (slope, _) = fit_loglog_slope(&ladder).unwrap();
        assert!(slope >= 3.7, "slope {slope}");
    }

    #[test]
    fn rk4_strong_order_on_gbm_is_two() {
        let problem = gbm_problem(1.0, 0.06, 0.5);
        let tab = ButcherTableau::classic_rk4();
        let report = strong_error(&problem, &tab, 1.0, &[4, 5, 6, 7, 8, 9], 400, 2718).unwrap();
        assert!(
            (1.6..=2.4).contains(&report.slope),
            "slope {} +- {}",
            report.slope,
            report.half_width
        );
    }

    #[test]
    fn deterministic_subcheck_recovers_ode_order() {
        // sigma = 0 turns the harness into a classical ODE order check
        let problem = gbm_problem(1.0, 0.06, 0.0);
        let tab = ButcherTableau::classic_rk4();
        let report = strong_error(&problem, &tab, 1.0, &[2, 3, 4, 5], 1, 1).unwrap();
        assert!(
            (3.7..=4.3).contains(&report.slope),
            "slope {}",
            report.slope
        );
    }

    #[test]
    fn coupled_levels_share_the_path() {
        // with sigma > 0 and identical seeds the errors must decay
        // monotonically through the ladder, which only happens when all
        // levels integrate the same Brownian path
        let problem = gbm_problem(1.0, 0.0, 0.8);
        let tab = ButcherTableau::classic_rk4();
        let report = strong_error(&problem, &tab, 1.0, &[3, 5, 7, 9], 200, 7).unwrap();
        for w in report.points.windows(2) {
            assert!(
                w[0].mean_error > w[1].mean_error,
                "errors not decreasing: {:?}",
                report.points
            );
        }
    }

    #[test]
    fn ou_mean_matches_exact_decay() {
        // weak check only: E[X_T] = x0 exp(-lambda T)
        let lambda = 1.3;
        let sys = ou_system(lambda, 0.4);
        let tab = ButcherTableau::classic_rk4();
        let mut ws = StepWorkspace::new(&sys, &tab);
        let n_paths = 4000;
        let t_end = 1.0;
        let steps = 64;
        let h = t_end / steps as f64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for p in 0..n_paths {
            let mut rng = RngStream::new(99, p as u64);
            let mut x = vec![1.0];
            let mut y = vec![0.0];
            for i in 0..steps {
                let dw = sample_increment(&mut rng, h, 1);
                step_fixed(&tab, &sys, &x, i as f64 * h, h, &dw, &mut ws, &mut y).unwrap();
                std::mem::swap(&mut x, &mut y);
            }
            sum += x[0];
            sq += x[0] * x[0];
        }
        let mean = sum / n_paths as f64;
        let var = (sq - n_paths as f64 * mean * mean) / (n_paths as f64 - 1.0);
        let se = (var / n_paths as f64).sqrt();
        let exact = (-lambda * t_end).exp();
        assert!(
            (mean - exact).abs() < 4.0 * se,
            "mean {mean} vs {exact} (se {se})"
        );
    }
}
