//! Driven-qubit quench: Hamiltonians, time-ordered propagators, spectra and
//! thermal states.
//!
//! Units: energies are stored as `E/h` in kHz, times in ms, so a constant
//! Hamiltonian `H` accumulates the phase `2π·H·t`. Inverse temperatures are in
//! (kHz)⁻¹, i.e. `(k_B T / h)⁻¹`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{pauli_exp_unchecked, pauli_vector, DensityMatrix, Mat2, PureState, C64};

/// Drive amplitude at which a Hamiltonian counts as degenerate.
const DEGENERATE_GAP: f64 = 1e-300;
const HERMITIAN_TOL: f64 = 1e-12;
const REFINE_TOL: f64 = 1e-12;
const REFINE_START: usize = 64;
const REFINE_MAX: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// Linear frequency ramp `ν₁ → ν₂` over `tau` with a quarter turn of the drive
/// axis from y to x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuenchProtocol {
    /// kHz
    pub nu1: f64,
    /// kHz
    pub nu2: f64,
    /// ms
    pub tau: f64,
    pub direction: Direction,
}

impl QuenchProtocol {
    pub fn new(nu1: f64, nu2: f64, tau: f64, direction: Direction) -> Result<Self> {
        for (name, v) in [("nu1", nu1), ("nu2", nu2), ("tau", tau)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { nu1, nu2, tau, direction })
    }

    /// 2.5 kHz → 1.0 kHz in 0.1 ms.
    pub fn reference(direction: Direction) -> Self {
        Self { nu1: 2.5, nu2: 1.0, tau: 0.1, direction }
    }

    /// Skips the positivity check; only for degenerate test drives.
    #[doc(hidden)]
    pub fn new_unchecked(nu1: f64, nu2: f64, tau: f64, direction: Direction) -> Self {
        Self { nu1, nu2, tau, direction }
    }

    pub fn with_direction(self, direction: Direction) -> Self {
        Self { direction, ..self }
    }

    /// Same protocol with the drive amplitude scaled by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Self { nu1: self.nu1 * factor, nu2: self.nu2 * factor, ..self }
    }

    /// Half-gap of the initial Hamiltonian.
    pub fn initial_half_gap(&self) -> f64 {
        match self.direction {
            Direction::Forward => self.nu1,
            Direction::Backward => self.nu2,
        }
    }

    /// Half-gap of the final Hamiltonian.
    pub fn final_half_gap(&self) -> f64 {
        match self.direction {
            Direction::Forward => self.nu2,
            Direction::Backward => self.nu1,
        }
    }

    /// `(a, b)` with `H(t) = a σx + b σy`, no range check.
    pub(crate) fn drive(&self, t: f64) -> (f64, f64) {
        let forward = |t: f64| {
            let nu = self.nu1 * (1.0 - t / self.tau) + self.nu2 * t / self.tau;
            let (s, c) = (PI * t / (2.0 * self.tau)).sin_cos();
            (nu * s, nu * c)
        };
        match self.direction {
            Direction::Forward => forward(t),
            Direction::Backward => {
                let (a, b) = forward(self.tau - t);
                (-a, -b)
            }
        }
    }
}

/// Quench Hamiltonian at time `t`, in kHz.
pub fn hamiltonian(p: &QuenchProtocol, t: f64) -> Result<Mat2> {
    if !(t.is_finite() && (0.0..=p.tau).contains(&t)) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, {}]", p.tau)));
    }
    let (a, b) = if t == p.tau {
        // avoid sin(π/2) roundoff at the endpoint
        match p.direction {
            Direction::Forward => (p.nu2, 0.0),
            Direction::Backward => (0.0, -p.nu1),
        }
    } else if t == 0.0 {
        match p.direction {
            Direction::Forward => (0.0, p.nu1),
            Direction::Backward => (-p.nu2, 0.0),
        }
    } else {
        p.drive(t)
    };
    Ok(pauli_vector(a, b, 0.0))
}

/// Sorted two-level spectrum with eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spectrum {
    /// (ground, excited), kHz
    pub energies: [f64; 2],
    pub states: [PureState<2>; 2],
}

impl Spectrum {
    pub fn half_gap(&self) -> f64 {
        0.5 * (self.energies[1] - self.energies[0])
    }
}

/// Diagonalizes a Hermitian 2×2 matrix.
pub fn eigensystem(h: &Mat2) -> Result<Spectrum> {
    let scale = h.max_abs().max(1.0);
    let dev = h.hermiticity_deviation();
    if dev > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let a0 = 0.5 * (h[(0, 0)].re + h[(1, 1)].re);
    let nz = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
    let off = 0.5 * (h[(1, 0)] + h[(0, 1)].conj());
    let (nx, ny) = (off.re, off.im);
    let r = (nx * nx + ny * ny + nz * nz).sqrt();
    if r <= DEGENERATE_GAP {
        return Ok(Spectrum {
            energies: [a0, a0],
            states: [PureState::basis(0), PureState::basis(1)],
        });
    }
    let (ux, uy, uz) = (nx / r, ny / r, nz / r);
    // eigenvector of n̂·σ with eigenvalue +1, built from the better-conditioned column
    let up = if uz >= 0.0 {
        [C64::new(1.0 + uz, 0.0), C64::new(ux, uy)]
    } else {
        [C64::new(ux, -uy), C64::new(1.0 - uz, 0.0)]
    };
    let up = PureState::normalized(up)?;
    let [a, b] = *up.amplitudes();
    let down = PureState::normalized([-b.conj(), a.conj()])?;
    Ok(Spectrum { energies: [a0 - r, a0 + r], states: [down, up] })
}

pub fn initial_spectrum(p: &QuenchProtocol) -> Result<Spectrum> {
    eigensystem(&hamiltonian(p, 0.0)?)
}

pub fn final_spectrum(p: &QuenchProtocol) -> Result<Spectrum> {
    eigensystem(&hamiltonian(p, p.tau)?)
}

/// Midpoint-rule product of closed-form slice exponentials, latest slice
/// leftmost.
pub fn propagator_with_steps(p: &QuenchProtocol, steps: usize) -> Result<Mat2> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let dt = p.tau / steps as f64;
    Ok(slice_product(p, dt, 0, steps))
}

/// Ordered product of slices `lo..hi`, combined pairwise so that rounding
/// error grows with the depth of the tree rather than the slice count.
fn slice_product(p: &QuenchProtocol, dt: f64, lo: usize, hi: usize) -> Mat2 {
    if hi - lo <= 32 {
        let phase = 2.0 * PI * dt;
        let mut u = Mat2::identity();
        for k in lo..hi {
            let (a, b) = p.drive((k as f64 + 0.5) * dt);
            u = pauli_exp_unchecked(phase * a, phase * b, 0.0) * u;
        }
        return project_su2(&u);
    }
    let mid = lo + (hi - lo) / 2;
    project_su2(&(slice_product(p, dt, mid, hi) * slice_product(p, dt, lo, mid)))
}

/// Nearest matrix of the form `[[α, −β̄], [β, ᾱ]]` with `|α|² + |β|² = 1`.
///
/// Slices of nearly equal angle round their cosine the same way, so without
/// this the unitarity error grows linearly with the slice count.
fn project_su2(u: &Mat2) -> Mat2 {
    let alpha = 0.5 * (u[(0, 0)] + u[(1, 1)].conj());
    let beta = 0.5 * (u[(1, 0)] - u[(0, 1)].conj());
    let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
    let (alpha, beta) = (alpha / norm, beta / norm);
    Mat2::from_fn(|i, j| match (i, j) {
        (0, 0) => alpha,
        (0, 1) => -beta.conj(),
        (1, 0) => beta,
        _ => alpha.conj(),
    })
}

/// Time-ordered propagator, refined by doubling the slice count from 64 until
/// successive refinements agree entry-wise to 1e-12.
pub fn propagator(p: &QuenchProtocol) -> Mat2 {
    propagator_refined(p).0
}

/// Like [`propagator`], also returning the slice count reached.
pub fn propagator_refined(p: &QuenchProtocol) -> (Mat2, usize) {
    let mut steps = REFINE_START;
    let mut prev = propagator_with_steps(p, steps).expect("steps >= 1");
    while steps < REFINE_MAX {
        steps *= 2;
        let next = propagator_with_steps(p, steps).expect("steps >= 1");
        let diff = next.max_abs_diff(&prev);
        prev = next;
        if diff < REFINE_TOL {
            break;
        }
    }
    (prev, steps)
}

/// Inverse temperature in (kHz)⁻¹ with exact zero and infinity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseTemperature {
    /// `β ≥ 0`; `Finite(0.0)` is the maximum-entropy state.
    Finite(f64),
    /// Ground state.
    Infinite,
}

impl InverseTemperature {
    pub fn new(beta: f64) -> Result<Self> {
        if beta == f64::INFINITY {
            return Ok(Self::Infinite);
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self::Finite(beta))
    }

    pub const fn zero() -> Self {
        Self::Finite(0.0)
    }

    pub const fn infinite() -> Self {
        Self::Infinite
    }

    /// From `k_B T / h` in kHz; `0` maps to infinite β and `∞` to zero.
    pub fn from_kt(kt_khz: f64) -> Result<Self> {
        if kt_khz == 0.0 {
            return Ok(Self::Infinite);
        }
        if kt_khz == f64::INFINITY {
            return Ok(Self::zero());
        }
        if !(kt_khz.is_finite() && kt_khz > 0.0) {
            return Err(Error::InvalidArgument(format!("kT must be positive, got {kt_khz}")));
        }
        Ok(Self::Finite(1.0 / kt_khz))
    }

    /// β as a float, `f64::INFINITY` for the ground state.
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(b) => b,
            Self::Infinite => f64::INFINITY,
        }
    }

    /// Finite β or an error.
    pub fn finite(self) -> Result<f64> {
        match self {
            Self::Finite(b) => Ok(b),
            Self::Infinite => Err(Error::InfiniteBeta),
        }
    }

    pub fn kt(self) -> f64 {
        match self {
            Self::Finite(b) if b == 0.0 => f64::INFINITY,
            Self::Finite(b) => 1.0 / b,
            Self::Infinite => 0.0,
        }
    }
}

/// Boltzmann populations `(ground, excited)` for half-gap `nu`.
pub fn thermal_populations(beta: InverseTemperature, nu: f64) -> [f64; 2] {
    match beta {
        InverseTemperature::Infinite => [1.0, 0.0],
        InverseTemperature::Finite(b) => {
            let w = (-2.0 * b * nu.abs()).exp();
            [1.0 / (1.0 + w), w / (1.0 + w)]
        }
    }
}

/// Thermal state of the initial Hamiltonian.
pub fn gibbs(p: &QuenchProtocol, beta: InverseTemperature) -> Result<DensityMatrix<2>> {
    let spec = initial_spectrum(p)?;
    let pops = thermal_populations(beta, spec.half_gap());
    let mut m = Mat2::zeros();
    for (pop, state) in pops.iter().zip(spec.states.iter()) {
        m = m + state.projector().into_matrix().scale_re(*pop);
    }
    DensityMatrix::new(m)
}

/// `k_B T / h` in kHz from the excited population of a level pair with
/// half-gap `nu`: `2ν / ln((1 − p₁)/p₁)`.
pub fn temperature_from_population(p1: f64, nu: f64) -> Result<f64> {
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(Error::InvalidArgument(format!("p1 = {p1} outside (0, 1)")));
    }
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::InvalidArgument(format!("nu must be positive, got {nu}")));
    }
    if p1 > 0.5 {
        return Err(Error::PopulationInversion { p1 });
    }
    if p1 == 0.5 {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * nu / ((1.0 - p1) / p1).ln())
}
