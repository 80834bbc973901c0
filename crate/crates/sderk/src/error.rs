//! Error type shared across the crate.

use std::fmt;

/// Errors produced by systems, tableaus, the Brownian tree and the stepper.
#[derive(Debug)]
pub enum Error {
    /// A vector or matrix had the wrong length.
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    /// A coefficient evaluation produced NaN or infinity.
    NonFinite { context: String },
    /// A tableau violated one of its consistency conditions.
    Tableau { condition: String, residual: f64 },
    /// A tableau file could not be parsed.
    Parse { line: usize, message: String },
    /// Two increment nodes were not adjacent in time.
    NonContiguous { left_end: u64, right_start: u64 },
    /// A requested step size is not a dyadic fraction of the base step.
    NonDyadic { requested: f64, base_step: f64 },
    /// The dyadic refinement limit was reached; the step cannot be halved.
    StepSizeUnderflow { t: f64 },
    /// Too many consecutive rejections at one time point.
    TooManyRejects { t: f64, dt: f64, err: f64, rejects: u32 },
    /// A trajectory of an ensemble failed; carries the member index.
    Trajectory { index: usize, source: Box<Error> },
    /// Master-equation trace left its tolerance band.
    TraceDrift { t: f64, drift: f64 },
    /// Two ensembles that must use disjoint seed ranges shared a seed.
    SeedOverlap { master_seed: u64 },
    /// Not enough usable data points for a fit.
    InsufficientPoints { needed: usize, actual: usize },
    /// Invalid argument or configuration value.
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                what,
                expected,
                actual,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, got {actual}"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::Tableau {
                condition,
                residual,
            } => write!(f, "tableau invariant violated: {condition} (residual {residual:e})"),
            Error::Parse { line, message } => write!(f, "tableau parse error at line {line}: {message}"),
            Error::NonContiguous {
                left_end,
                right_start,
            } => write!(
                f,
                "increment nodes not contiguous: left ends at tick {left_end}, right starts at tick {right_start}"
            ),
            Error::NonDyadic {
                requested,
                base_step,
            } => write!(f, "step {requested} is not a dyadic fraction of base step {base_step}"),
            Error::StepSizeUnderflow { t } => {
                write!(f, "dyadic depth limit reached at t = {t}; step cannot be halved further")
            }
            Error::TooManyRejects { t, dt, err, rejects } => write!(
                f,
                "step rejected {rejects} times at t = {t} (dt = {dt:e}, error norm {err:e})"
            ),
            Error::Trajectory { index, source } => write!(f, "trajectory {index} failed: {source}"),
            Error::TraceDrift { t, drift } => {
                write!(f, "master-equation trace drifted by {drift:e} at t = {t}")
            }
            Error::SeedOverlap { master_seed } => {
                write!(f, "ensembles share master seed {master_seed}; disjoint seed ranges required")
            }
            Error::InsufficientPoints { needed, actual } => {
                write!(f, "need at least {needed} usable points, got {actual}")
            }
            Error::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Trajectory { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
