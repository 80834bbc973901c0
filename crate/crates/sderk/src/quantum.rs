//! Stochastic wave equations on a truncated oscillator basis, with their
//! deterministic master-equation counterparts.
//!
//! Two systems are provided: a nonlinear absorber driven by one real
//! Wiener process, and a quantum cascade with absorption and stimulated
//! emission driven by two. Both are registered in derivative form: the
//! drift callback is the analytic partial time derivative, which already
//! contains the Ito correction, so the stepper must not subtract it again.
//! The plain Ito-form twins are also exposed; equality of the analytic
//! time derivative with the Ito drift minus the numerically computed
//! correction is the library's deepest consistency check.
//!
//! The ensemble average of the projector onto the stochastic wavefunction
//! evolves by a deterministic master equation; integrating that equation
//! in the same truncated basis provides the oracle the Monte Carlo means
//! are compared against.

use num_complex::Complex64;

use crate::brownian::{BrownianStack, GridScale, RngStream};
use crate::ensemble::Observable;
use crate::error::{Error, Result};
use crate::stepper::{integrate_path, StepController};
use crate::system::SdeSystem;
use crate::tableau::ButcherTableau;

type C64 = Complex64;

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    n: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(n: usize) -> Self {
        ComplexMatrix {
            n,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.data[row * self.n + col] = value;
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = ComplexMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        debug_assert_eq!(v.len(), n);
        let mut out = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..n {
                acc += self.data[i * n + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn adjoint(&self) -> ComplexMatrix {
        let n = self.n;
        let mut out = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn scaled(&self, c: C64) -> ComplexMatrix {
        ComplexMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.n, other.n);
        ComplexMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.n, other.n);
        ComplexMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    /// Largest entrywise deviation from the own adjoint.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// `(M + M†) / 2`.
    pub fn symmetrized(&self) -> ComplexMatrix {
        self.add(&self.adjoint()).scaled(C64::new(0.5, 0.0))
    }
}

/// A density matrix is a complex matrix constrained to be Hermitian with
/// unit trace along the evolutions integrated here.
pub type DensityMatrix = ComplexMatrix;

/// Ladder and number operators of a harmonic oscillator truncated to the
/// lowest `n_levels` eigenstates.
#[derive(Debug, Clone)]
pub struct OscillatorBasis {
    n_levels: usize,
    lowering: ComplexMatrix,
    raising: ComplexMatrix,
    number: ComplexMatrix,
}

impl OscillatorBasis {
    pub fn new(n_levels: usize) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::Invalid(format!(
                "basis needs at least two levels, got {n_levels}"
            )));
        }
        let mut lowering = ComplexMatrix::zeros(n_levels);
        for n in 1..n_levels {
            lowering.set(n - 1, n, C64::new((n as f64).sqrt(), 0.0));
        }
        let raising = lowering.adjoint();
        let mut number = ComplexMatrix::zeros(n_levels);
        for n in 0..n_levels {
            number.set(n, n, C64::new(n as f64, 0.0));
        }
        Ok(OscillatorBasis {
            n_levels,
            lowering,
            raising,
            number,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn lowering(&self) -> &ComplexMatrix {
        &self.lowering
    }

    pub fn raising(&self) -> &ComplexMatrix {
        &self.raising
    }

    pub fn number(&self) -> &ComplexMatrix {
        &self.number
    }
}

/// Packs complex amplitudes as interleaved real and imaginary parts.
pub fn pack_state(psi: &[C64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * psi.len());
    for a in psi {
        out.push(a.re);
        out.push(a.im);
    }
    out
}

pub fn unpack_state(x: &[f64]) -> Vec<C64> {
    debug_assert_eq!(x.len() % 2, 0);
    x.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()
}

/// The packed ground state `|0>`.
pub fn vacuum_state(n_levels: usize) -> Vec<f64> {
    let mut psi = vec![C64::new(0.0, 0.0); n_levels];
    psi[0] = C64::new(1.0, 0.0);
    pack_state(&psi)
}

fn dot(bra: &[C64], ket: &[C64]) -> C64 {
    bra.iter().zip(ket).map(|(b, k)| b.conj() * k).sum()
}

/// Quantum expectation of an operator in the (unnormalized) state.
pub fn expectation(op: &ComplexMatrix, psi: &[C64]) -> C64 {
    dot(psi, &op.matvec(psi))
}

/// Squared norm of a packed state.
pub fn norm_squared(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Occupation expectation of a packed wavefunction state.
pub fn occupation_of_state(x: &[f64]) -> f64 {
    let psi = unpack_state(x);
    psi.iter()
        .enumerate()
        .map(|(n, a)| n as f64 * a.norm_sqr())
        .sum()
}

/// Occupation of a density matrix: the trace against the number operator.
pub fn occupation_of_density(rho: &DensityMatrix) -> f64 {
    (0..rho.dim()).map(|n| n as f64 * rho.get(n, n).re).sum()
}

/// Occupation as an ensemble observable on packed states.
pub fn occupation_observable() -> Observable {
    Observable::new("occupation", occupation_of_state)
}

/// Squared wavefunction norm as a diagnostic observable.
pub fn norm_observable() -> Observable {
    Observable::new("norm_squared", norm_squared)
}

struct AbsorberOps {
    a2: ComplexMatrix,
    drive: ComplexMatrix,
    ad2a2: ComplexMatrix,
}

impl AbsorberOps {
    fn new(n_levels: usize) -> Result<Self> {
        let basis = OscillatorBasis::new(n_levels)?;
        let a2 = basis.lowering().matmul(basis.lowering());
        let ad2 = a2.adjoint();
        Ok(AbsorberOps {
            drive: basis.raising().sub(basis.lowering()).scaled(C64::new(0.1, 0.0)),
            ad2a2: ad2.matmul(&a2),
            a2,
        })
    }

    /// Ito drift of the absorber equation:
    /// `[0.1(ad - a) + 2<ad^2> a^2 - ad^2 a^2 - |<a^2>|^2] psi`.
    fn ito_drift(&self, psi: &[C64]) -> Vec<C64> {
        let u = self.a2.matvec(psi);
        let w = self.ad2a2.matvec(psi);
        let e2 = dot(psi, &u);
        let driven = self.drive.matvec(psi);
        let e2c2 = 2.0 * e2.conj();
        let abs2 = C64::new(e2.norm_sqr(), 0.0);
        (0..psi.len())
            .map(|j| driven[j] + e2c2 * u[j] - w[j] - abs2 * psi[j])
            .collect()
    }

    /// Analytic partial time derivative (Ito drift minus the correction):
    /// adds `(<a^4> - <a^2>^2) - (a^2 - <a^2>)^2 + (<ad^2 a^2> - |<a^2>|^2)`.
    fn time_derivative(&self, psi: &[C64]) -> Vec<C64> {
        let u = self.a2.matvec(psi); // a^2 psi
        let v = self.a2.matvec(&u); // a^4 psi
        let w = self.ad2a2.matvec(psi);
        let e2 = dot(psi, &u);
        let e4 = dot(psi, &v);
        let e_ad2a2 = dot(psi, &w);
        let driven = self.drive.matvec(psi);
        let abs2 = C64::new(e2.norm_sqr(), 0.0);
        let scalar = (e4 - e2 * e2) + (e_ad2a2 - abs2) - abs2;
        let two_e2 = 2.0 * e2;
        let e2sq = e2 * e2;
        let e2c2 = 2.0 * e2.conj();
        (0..psi.len())
            .map(|j| {
                driven[j] + scalar * psi[j]
                    - (v[j] - two_e2 * u[j] + e2sq * psi[j])
                    + e2c2 * u[j]
                    - w[j]
            })
            .collect()
    }

    /// Diffusion `sqrt(2) (a^2 - <a^2>) psi`.
    fn diffusion(&self, psi: &[C64]) -> Vec<C64> {
        let u = self.a2.matvec(psi);
        let e2 = dot(psi, &u);
        let s = C64::new(std::f64::consts::SQRT_2, 0.0);
        (0..psi.len()).map(|j| s * (u[j] - e2 * psi[j])).collect()
    }
}

fn pack_into(values: &[C64], out: &mut [f64]) {
    for (j, v) in values.iter().enumerate() {
        out[2 * j] = v.re;
        out[2 * j + 1] = v.im;
    }
}

/// The nonlinear absorber as a derivative-form system of `2 * n_levels`
/// real equations driven by one Wiener process.
pub fn absorber_system(n_levels: usize) -> Result<SdeSystem> {
    let ops = AbsorberOps::new(n_levels)?;
    let ops_diff = AbsorberOps::new(n_levels)?;
    Ok(SdeSystem::derivative_form(
        "absorber",
        2 * n_levels,
        1,
        move |x, _t, out: &mut [f64]| {
            let psi = unpack_state(x);
            pack_into(&ops.time_derivative(&psi), out);
        },
        move |x, _t, out: &mut [f64]| {
            let psi = unpack_state(x);
            for (j, v) in ops_diff.diffusion(&psi).iter().enumerate() {
                out[2 * j] = v.re;
                out[2 * j + 1] = v.im;
            }
        },
    ))
}

/// The absorber in plain Ito form; the stepper recovers the time
/// derivative through the numerical Ito correction. Used to validate the
/// analytic derivative form.
pub fn absorber_system_ito(n_levels: usize) -> Result<SdeSystem> {
    let ops = AbsorberOps::new(n_levels)?;
    let ops_diff = AbsorberOps::new(n_levels)?;
    Ok(SdeSystem::new(
        "absorber-ito",
        2 * n_levels,
        1,
        move |x, _t, out: &mut [f64]| {
            let psi = unpack_state(x);
            pack_into(&ops.ito_drift(&psi), out);
        },
        move |x, _t, out: &mut [f64]| {
            let psi = unpack_state(x);
            for (j, v) in ops_diff.diffusion(&psi).iter().enumerate() {
                out[2 * j] = v.re;
                out[2 * j + 1] = v.im;
            }
        },
    ))
}

struct CascadeOps {
    lowering: ComplexMatrix,
    number: ComplexMatrix,
    drive: ComplexMatrix,
}

impl CascadeOps {
    fn new(n_levels: usize) -> Result<Self> {
        let basis = OscillatorBasis::new(n_levels)?;
        Ok(CascadeOps {
            drive: basis
                .raising()
                .add(basis.lowering())
                .scaled(C64::new(0.0, -0.1)),
            lowering: basis.lowering().clone(),
            number: basis.number().clone(),
        })
    }

    /// Ito drift of the cascade equation:
    /// `[-0.1i(ad + a) + 2<N> N - N^2 - <N>^2 + 0.01(2<ad> a - N - |<a>|^2)] psi`.
    fn ito_drift(&self, psi: &[C64]) -> Vec<C64> {
        let npsi = self.number.matvec(psi);
        let n2psi = self.number.matvec(&npsi);
        let apsi = self.lowering.matvec(psi);
        let en = dot(psi, &npsi);
        let ea = dot(psi, &apsi);
        let driven = self.drive.matvec(psi);
        let ensq = en * en;
        let two_en = 2.0 * en;
        let two_eac = 0.01 * 2.0 * ea.conj();
        let abs_a = C64::new(0.01 * ea.norm_sqr(), 0.0);
        (0..psi.len())
            .map(|j| {
                driven[j] + two_en * npsi[j] - n2psi[j] - ensq * psi[j] + two_eac * apsi[j]
                    - 0.01 * npsi[j]
                    - abs_a * psi[j]
            })
            .collect()
    }

    /// Analytic partial time derivative: the Ito drift plus
    /// `-(N - <N>)^2 + 2(<N^2> - <N>^2) - 0.01(a - <a>)^2
    ///  + 0.01(<N> - |<a>|^2) + 0.01(<a^2> - <a>^2)`.
    fn time_derivative(&self, psi: &[C64]) -> Vec<C64> {
        let npsi = self.number.matvec(psi);
        let n2psi = self.number.matvec(&npsi);
        let apsi = self.lowering.matvec(psi);
        let a2psi = self.lowering.matvec(&apsi);
        let en = dot(psi, &npsi);
        let en2 = dot(psi, &n2psi);
        let ea = dot(psi, &apsi);
        let ea2 = dot(psi, &a2psi);
        let base = self.ito_drift(psi);
        let two_en = 2.0 * en;
        let ensq = en * en;
        let two_ea = 2.0 * ea;
        let easq = ea * ea;
        let scalar = 2.0 * (en2 - ensq)
            + 0.01 * (en - C64::new(ea.norm_sqr(), 0.0))
            + 0.01 * (ea2 - easq);
        (0..psi.len())
            .map(|j| {
                base[j] - (n2psi[j] - two_en * npsi[j] + ensq * psi[j])
                    - 0.01 * (a2psi[j] - two_ea * apsi[j] + easq * psi[j])
                    + scalar * psi[j]
            })
            .collect()
    }

    /// Diffusion columns `sqrt(2)(N - <N>) psi` and `0.1 sqrt(2)(a - <a>) psi`.
    fn diffusion(&self, psi: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let npsi = self.number.matvec(psi);
        let apsi = self.lowering.matvec(psi);
        let en = dot(psi, &npsi);
        let ea = dot(psi, &apsi);
        let s = C64::new(std::f64::consts::SQRT_2, 0.0);
        let s2 = C64::new(0.1 * std::f64::consts::SQRT_2, 0.0);
        let col1 = (0..psi.len()).map(|j| s * (npsi[j] - en * psi[j])).collect();
        let col2 = (0..psi.len()).map(|j| s2 * (apsi[j] - ea * psi[j])).collect();
        (col1, col2)
    }
}

/// The quantum cascade as a derivative-form system of `2 * n_levels` real
/// equations driven by two independent Wiener processes.
pub fn cascade_system(n_levels: usize) -> Result<SdeSystem> {
    let ops = CascadeOps::new(n_levels)?;
    let ops_diff = CascadeOps::new(n_levels)?;
    Ok(SdeSystem::derivative_form(
        "cascade",
        2 * n_levels,
        2,
        move |x, _t, out: &mut [f64]| {
            let psi = unpack_state(x);
            pack_into(&ops.time_derivative(&psi), out);
        },
        move |x, _t, out: &mut [f64]| {
            let psi = unpack_state(x);
            let (c1, c2) = ops_diff.diffusion(&psi);
            for j in 0..psi.len() {
                out[2 * (2 * j)] = c1[j].re;
                out[2 * (2 * j) + 1] = c2[j].re;
                out[2 * (2 * j + 1)] = c1[j].im;
                out[2 * (2 * j + 1) + 1] = c2[j].im;
            }
        },
    ))
}

/// The cascade in plain Ito form; see [`absorber_system_ito`].
pub fn cascade_system_ito(n_levels: usize) -> Result<SdeSystem> {
    let ops = CascadeOps::new(n_levels)?;
    let ops_diff = CascadeOps::new(n_levels)?;
    Ok(SdeSystem::new(
        "cascade-ito",
        2 * n_levels,
        2,
        move |x, _t, out: &mut [f64]| {
            let psi = unpack_state(x);
            pack_into(&ops.ito_drift(&psi), out);
        },
        move |x, _t, out: &mut [f64]| {
            let psi = unpack_state(x);
            let (c1, c2) = ops_diff.diffusion(&psi);
            for j in 0..psi.len() {
                out[2 * (2 * j)] = c1[j].re;
                out[2 * (2 * j) + 1] = c2[j].re;
                out[2 * (2 * j + 1)] = c1[j].im;
                out[2 * (2 * j + 1) + 1] = c2[j].im;
            }
        },
    ))
}

/// Renormalizes a packed wavefunction to unit norm; attach with
/// [`SdeSystem::with_post_accept`] for experiments deviating from the
/// plain equations.
pub fn renormalize_state(x: &mut [f64]) {
    let norm = norm_squared(x).sqrt();
    if norm > 0.0 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
}

/// Which master equation to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MasterKind {
    Absorber,
    Cascade,
}

/// Right-hand side of a deterministic master equation on the truncated
/// basis.
pub struct MasterEquation {
    kind: MasterKind,
    n_levels: usize,
    // absorber pieces
    drive: ComplexMatrix,
    l_op: ComplexMatrix,
    l_adj: ComplexMatrix,
    anticomm: ComplexMatrix,
    // cascade extra pieces
    lowering: Option<ComplexMatrix>,
    raising: Option<ComplexMatrix>,
    number: Option<ComplexMatrix>,
}

impl MasterEquation {
    pub fn new(kind: MasterKind, n_levels: usize) -> Result<Self> {
        let basis = OscillatorBasis::new(n_levels)?;
        match kind {
            MasterKind::Absorber => {
                let a2 = basis.lowering().matmul(basis.lowering());
                let ad2 = a2.adjoint();
                Ok(MasterEquation {
                    kind,
                    n_levels,
                    drive: basis.raising().sub(basis.lowering()).scaled(C64::new(0.1, 0.0)),
                    anticomm: ad2.matmul(&a2),
                    l_op: a2,
                    l_adj: ad2,
                    lowering: None,
                    raising: None,
                    number: None,
                })
            }
            MasterKind::Cascade => {
                let number = basis.number().clone();
                Ok(MasterEquation {
                    kind,
                    n_levels,
                    drive: basis
                        .raising()
                        .add(basis.lowering())
                        .scaled(C64::new(0.0, -0.1)),
                    anticomm: number.matmul(&number),
                    l_op: number.clone(),
                    l_adj: number.clone(),
                    lowering: Some(basis.lowering().clone()),
                    raising: Some(basis.raising().clone()),
                    number: Some(number),
                })
            }
        }
    }

    pub fn kind(&self) -> MasterKind {
        self.kind
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    /// Time derivative of the density matrix.
    pub fn rhs(&self, rho: &DensityMatrix) -> DensityMatrix {
        // driving commutator [D, rho]
        let mut out = self.drive.matmul(rho).sub(&rho.matmul(&self.drive));
        // main dissipator 2 L rho L† - L†L rho - rho L†L
        out = out.add(
            &self
                .l_op
                .matmul(rho)
                .matmul(&self.l_adj)
                .scaled(C64::new(2.0, 0.0)),
        );
        out = out.sub(&self.anticomm.matmul(rho));
        out = out.sub(&rho.matmul(&self.anticomm));
        if self.kind == MasterKind::Cascade {
            // weak absorption channel 0.02 a rho ad - 0.01 N rho - 0.01 rho N
            let a = self.lowering.as_ref().unwrap();
            let ad = self.raising.as_ref().unwrap();
            let nop = self.number.as_ref().unwrap();
            out = out.add(&a.matmul(rho).matmul(ad).scaled(C64::new(0.02, 0.0)));
            out = out.sub(&nop.matmul(rho).scaled(C64::new(0.01, 0.0)));
            out = out.sub(&rho.matmul(nop).scaled(C64::new(0.01, 0.0)));
        }
        out
    }

    /// The master equation as a real deterministic system of
    /// `2 * n_levels^2` equations for the stepper.
    pub fn as_system(&self, rhs: impl Fn(&DensityMatrix) -> DensityMatrix + Send + Sync + 'static) -> SdeSystem {
        let n = self.n_levels;
        SdeSystem::new(
            match self.kind {
                MasterKind::Absorber => "absorber-master",
                MasterKind::Cascade => "cascade-master",
            },
            2 * n * n,
            0,
            move |x, _t, out: &mut [f64]| {
                let rho = unpack_density(n, x);
                pack_density_into(&rhs(&rho), out);
            },
            |_x, _t, _out: &mut [f64]| {},
        )
    }
}

/// Free-function forms of the master right-hand sides.
pub fn master_rhs_absorber(n_levels: usize, rho: &DensityMatrix) -> Result<DensityMatrix> {
    Ok(MasterEquation::new(MasterKind::Absorber, n_levels)?.rhs(rho))
}

pub fn master_rhs_cascade(n_levels: usize, rho: &DensityMatrix) -> Result<DensityMatrix> {
    Ok(MasterEquation::new(MasterKind::Cascade, n_levels)?.rhs(rho))
}

pub fn unpack_density(n: usize, x: &[f64]) -> DensityMatrix {
    debug_assert_eq!(x.len(), 2 * n * n);
    let mut rho = ComplexMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let k = 2 * (i * n + j);
            rho.set(i, j, C64::new(x[k], x[k + 1]));
        }
    }
    rho
}

pub fn pack_density(rho: &DensityMatrix) -> Vec<f64> {
    let mut out = vec![0.0; 2 * rho.dim() * rho.dim()];
    pack_density_into(rho, &mut out);
    out
}

fn pack_density_into(rho: &DensityMatrix, out: &mut [f64]) {
    let n = rho.dim();
    for i in 0..n {
        for j in 0..n {
            let k = 2 * (i * n + j);
            let v = rho.get(i, j);
            out[k] = v.re;
            out[k + 1] = v.im;
        }
    }
}

/// Maximum trace drift tolerated along a master-equation integration.
pub const TRACE_ABORT: f64 = 1e-8;

/// Grid snapshots of a master-equation integration with its conservation
/// diagnostics (measured before the snapshots are symmetrized).
#[derive(Debug, Clone)]
pub struct MasterSolution {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
}

/// Integrates a master equation from `rho0` and returns symmetrized
/// density matrices at every base-step boundary.
pub fn integrate_master(
    me: &MasterEquation,
    rho0: &DensityMatrix,
    t_end: f64,
    chunks: usize,
    tab: &ButcherTableau,
    ctrl: &StepController,
) -> Result<MasterSolution> {
    let n = me.n_levels();
    if rho0.dim() != n {
        return Err(Error::Dimension {
            what: "initial density matrix",
            expected: n,
            actual: rho0.dim(),
        });
    }
    let kind = me.kind();
    let inner = MasterEquation::new(kind, n)?;
    let system = me.as_system(move |rho| inner.rhs(rho));
    let grid = GridScale::new(0.0, ctrl.base_step, ctrl.max_depth);
    let mut stack = BrownianStack::new(grid, 0);
    let mut rng = RngStream::new(0, 0);
    let path = integrate_path(&system, tab, ctrl, &mut stack, &mut rng, &pack_density(rho0), t_end)?;
    let mut times = Vec::with_capacity(chunks + 1);
    let mut states = Vec::with_capacity(chunks + 1);
    let mut max_trace_drift = 0.0f64;
    let mut max_herm = 0.0f64;
    for c in 0..=chunks {
        let ticks = c as u64 * grid.ticks_per_base();
        let t = grid.time_at(ticks);
        let x = path
            .state_at_ticks(ticks)
            .ok_or_else(|| Error::Invalid(format!("no accepted state at grid tick {ticks}")))?;
        let rho = unpack_density(n, x);
        let drift = (rho.trace() - C64::new(1.0, 0.0)).norm();
        if drift > TRACE_ABORT {
            return Err(Error::TraceDrift { t, drift });
        }
        max_trace_drift = max_trace_drift.max(drift);
        max_herm = max_herm.max(rho.hermiticity_defect());
        times.push(t);
        states.push(rho.symmetrized());
    }
    Ok(MasterSolution {
        times,
        states,
        max_trace_drift,
        max_hermiticity_defect: max_herm,
    })
}

/// A pure-state density matrix `|psi><psi|` from a packed state.
pub fn pure_density(n_levels: usize, x: &[f64]) -> DensityMatrix {
    let psi = unpack_state(x);
    let mut rho = ComplexMatrix::zeros(n_levels);
    for i in 0..n_levels {
        for j in 0..n_levels {
            rho.set(i, j, psi[i] * psi[j].conj());
        }
    }
    rho
}

/// Draws a random normalized packed state; used by consistency checks.
pub fn random_normalized_state(n_levels: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut x: Vec<f64> = (0..2 * n_levels).map(|_| rng.standard_normal()).collect();
    let norm = norm_squared(&x).sqrt();
    for v in x.iter_mut() {
        *v /= norm;
    }
    x
}
