//! Single-qubit process tomography by linear inversion, and channel
//! diagnostics: worst-case trace distance, unitality and micro-reversibility.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::rf_ensemble_propagators;
use crate::qcore::{
    hermitian_eigenvalues, sigma_x, sigma_y, sigma_z, tensor, DensityMatrix, Mat2, Mat4, PureState, C64, I, ONE, ZERO,
};
use crate::quench::{self, Direction, InverseTemperature, QuenchProtocol};
use crate::tpm::TransitionTable;

const PROCESS_TOL: f64 = 1e-9;
const GRID_DEG: f64 = 2.0;
/// Resolution of the distance metrics.
pub const DISTANCE_FLOOR: f64 = 1e-14;

/// `(i𝟙, σx, σy, σz)`.
pub fn operator_basis() -> [Mat2; 4] {
    [Mat2::identity().scale(I), sigma_x(), sigma_y(), sigma_z()]
}

/// A map on 2×2 operators.
pub trait Channel: Sync {
    fn apply(&self, rho: &Mat2) -> Mat2;
}

impl<F: Fn(&Mat2) -> Mat2 + Sync> Channel for F {
    fn apply(&self, rho: &Mat2) -> Mat2 {
        self(rho)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitaryChannel(pub Mat2);

impl Channel for UnitaryChannel {
    fn apply(&self, rho: &Mat2) -> Mat2 {
        rho.conjugate_by(&self.0)
    }
}

/// Equal-weight mixture of unitaries.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryMixture(pub Vec<Mat2>);

impl Channel for UnitaryMixture {
    fn apply(&self, rho: &Mat2) -> Mat2 {
        let sum = self.0.iter().fold(Mat2::zeros(), |acc, u| acc + rho.conjugate_by(u));
        sum.scale_re(1.0 / self.0.len() as f64)
    }
}

/// `(1 − p)ρ + p Tr(ρ) 𝟙/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Depolarizing(pub f64);

impl Channel for Depolarizing {
    fn apply(&self, rho: &Mat2) -> Mat2 {
        let p = self.0;
        rho.scale_re(1.0 - p) + Mat2::identity().scale(rho.trace() * (0.5 * p))
    }
}

/// Decay `|1⟩ → |0⟩` with probability `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudeDamping(pub f64);

impl Channel for AmplitudeDamping {
    fn apply(&self, rho: &Mat2) -> Mat2 {
        let p = self.0;
        let s = (1.0 - p).sqrt();
        Mat2::from_fn(|i, j| match (i, j) {
            (0, 0) => rho[(0, 0)] + rho[(1, 1)] * p,
            (1, 1) => rho[(1, 1)] * (1.0 - p),
            _ => rho[(i, j)] * s,
        })
    }
}

/// Coherences shrink by `1 − p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseDamping(pub f64);

impl Channel for PhaseDamping {
    fn apply(&self, rho: &Mat2) -> Mat2 {
        Mat2::from_fn(|i, j| if i == j { rho[(i, j)] } else { rho[(i, j)] * (1.0 - self.0) })
    }
}

/// `ξ` of `E(ρ) = Σ_{kl} ξ_{kl} E_k ρ E_l†` in the basis of [`operator_basis`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProcessMatrixParts", into = "ProcessMatrixParts")]
pub struct ProcessMatrix(Mat4);

/// Serialized form: real and imaginary parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessMatrixParts {
    pub re: [[f64; 4]; 4],
    pub im: [[f64; 4]; 4],
}

impl From<ProcessMatrix> for ProcessMatrixParts {
    fn from(p: ProcessMatrix) -> Self {
        Self { re: p.real_part(), im: p.imag_part() }
    }
}

impl TryFrom<ProcessMatrixParts> for ProcessMatrix {
    type Error = Error;

    fn try_from(p: ProcessMatrixParts) -> Result<Self> {
        Self::new(Mat4::from_fn(|i, j| C64::new(p.re[i][j], p.im[i][j])))
    }
}

impl ProcessMatrix {
    /// Checks that the map preserves trace and Hermiticity within 1e-9.
    pub fn new(xi: Mat4) -> Result<Self> {
        let herm = xi.hermiticity_deviation();
        if herm > PROCESS_TOL {
            return Err(Error::NotHermitian { deviation: herm });
        }
        let pm = Self(xi);
        let dev = pm.trace_condition().max_abs_diff(&Mat2::identity());
        if dev > PROCESS_TOL {
            return Err(Error::TraceViolation(dev));
        }
        Ok(pm)
    }

    pub fn new_unchecked(xi: Mat4) -> Self {
        Self(xi)
    }

    pub fn identity() -> Self {
        let mut xi = Mat4::zeros();
        xi[(0, 0)] = ONE;
        Self(xi)
    }

    /// Only `ξ_kk = 1`.
    pub fn elementary(k: usize) -> Self {
        let mut xi = Mat4::zeros();
        xi[(k, k)] = ONE;
        Self(xi)
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    /// `Σ ξ_{kl} E_l† E_k`, the identity for trace-preserving maps.
    pub fn trace_condition(&self) -> Mat2 {
        let e = operator_basis();
        let mut acc = Mat2::zeros();
        for k in 0..4 {
            for l in 0..4 {
                acc = acc + (e[l].adjoint() * e[k]).scale(self.0[(k, l)]);
            }
        }
        acc
    }

    pub fn imag_norm(&self) -> f64 {
        self.0 .0.iter().flatten().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn real_part(&self) -> [[f64; 4]; 4] {
        self.0 .0.map(|row| row.map(|z| z.re))
    }

    pub fn imag_part(&self) -> [[f64; 4]; 4] {
        self.0 .0.map(|row| row.map(|z| z.im))
    }
}

impl Channel for ProcessMatrix {
    fn apply(&self, rho: &Mat2) -> Mat2 {
        let e = operator_basis();
        let mut acc = Mat2::zeros();
        for k in 0..4 {
            let left = e[k] * *rho;
            for l in 0..4 {
                if self.0[(k, l)] != ZERO {
                    acc = acc + (left * e[l].adjoint()).scale(self.0[(k, l)]);
                }
            }
        }
        acc
    }
}

/// The double sum applied to a state; the output must be a unit-trace
/// Hermitian operator within 1e-9.
pub fn apply_process(xi: &ProcessMatrix, rho: &DensityMatrix<2>) -> Result<DensityMatrix<2>> {
    let out = xi.apply(rho.matrix());
    let tr = (out.trace() - ONE).norm();
    if tr > PROCESS_TOL {
        return Err(Error::TraceViolation(tr));
    }
    DensityMatrix::with_tolerance(out, PROCESS_TOL)
}

fn probe(k: usize) -> Mat2 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let amps = match k {
        0 => [ONE, ZERO],
        1 => [ZERO, ONE],
        2 => [C64::new(h, 0.0), C64::new(h, 0.0)],
        _ => [C64::new(h, 0.0), C64::new(0.0, h)],
    };
    PureState::new(amps).expect("normalized probe").projector().into_matrix()
}

fn pure(a: C64, b: C64) -> Mat2 {
    PureState::normalized([a, b]).expect("nonzero").projector().into_matrix()
}

/// Linear-inversion tomography from the probes `|0⟩, |1⟩, |+⟩, |+i⟩`.
///
/// The responses to `|−⟩` and `|−i⟩` are predicted by linearity and compared
/// with the channel; a mismatch above 1e-9 is an error.
pub fn reconstruct(channel: &dyn Channel) -> Result<ProcessMatrix> {
    let out: [Mat2; 4] = std::array::from_fn(|k| channel.apply(&probe(k)));
    let half_1pi = C64::new(0.5, 0.5);
    let half_1mi = C64::new(0.5, -0.5);
    // ε(|a⟩⟨b|) for a, b ∈ {0, 1}
    let e00 = out[0];
    let e11 = out[1];
    let e01 = out[2] + out[3].scale(I) - (out[0] + out[1]).scale(half_1pi);
    let e10 = out[2] - out[3].scale(I) - (out[0] + out[1]).scale(half_1mi);

    let predicted_minus = (e00 + e11 - e01 - e10).scale_re(0.5);
    let predicted_minus_i = (e00 + e11 + e01.scale(I) - e10.scale(I)).scale_re(0.5);
    let h = C64::new(1.0, 0.0);
    let residual = channel
        .apply(&pure(h, -h))
        .max_abs_diff(&predicted_minus)
        .max(channel.apply(&pure(h, C64::new(0.0, -1.0))).max_abs_diff(&predicted_minus_i));
    if residual > PROCESS_TOL {
        return Err(Error::NonLinearChannel(residual));
    }

    let unit = |a: usize, b: usize| Mat2::from_fn(|i, j| if i == a && j == b { ONE } else { ZERO });
    let choi = tensor(&unit(0, 0), &e00) + tensor(&unit(0, 1), &e01) + tensor(&unit(1, 0), &e10) + tensor(&unit(1, 1), &e11);
    let basis = operator_basis();
    // v_k = Σ_a |a⟩ ⊗ E_k|a⟩
    let v: [[C64; 4]; 4] = std::array::from_fn(|k| std::array::from_fn(|idx| basis[k][(idx % 2, idx / 2)]));
    let xi = Mat4::from_fn(|k, l| {
        let cv = choi.mul_vec(&v[l]);
        v[k].iter().zip(&cv).map(|(a, b)| a.conj() * b).sum::<C64>() * 0.25
    });
    ProcessMatrix::new(xi)
}

/// Trace distance of two operators; values under [`DISTANCE_FLOOR`] are
/// rounding noise of the reconstruction and read as 0.
fn trace_norm_distance(a: &Mat2, b: &Mat2) -> f64 {
    let d = *a - *b;
    let d = (d + d.adjoint()).scale_re(0.5);
    let dist = 0.5 * hermitian_eigenvalues(&d).iter().map(|v| v.abs()).sum::<f64>();
    if dist < DISTANCE_FLOOR {
        0.0
    } else {
        dist
    }
}

/// `δ(𝟙/2, E)`: trace distance between `E(𝟙/2)` and `𝟙/2`.
pub fn unitality_deviation(xi: &ProcessMatrix) -> f64 {
    let mixed = Mat2::identity().scale_re(0.5);
    trace_norm_distance(&xi.apply(&mixed), &mixed)
}

fn bloch_state(theta: f64, phi: f64) -> Mat2 {
    let (st, ct) = (0.5 * theta).sin_cos();
    pure(C64::new(ct, 0.0), C64::from_polar(st, phi))
}

struct Gap<'a> {
    e1: &'a dyn Channel,
    e2: &'a dyn Channel,
}

impl Gap<'_> {
    fn at(&self, theta: f64, phi: f64) -> f64 {
        let rho = bloch_state(theta, phi);
        trace_norm_distance(&self.e1.apply(&rho), &self.e2.apply(&rho))
    }
}

impl CostFunction for Gap<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(-self.at(x[0], x[1]))
    }
}

/// `max_ρ δ(E₁(ρ), E₂(ρ))` over pure states: a 2° Bloch-sphere grid, then
/// Nelder-Mead from the best grid point.
pub fn worst_case_distance(e1: &dyn Channel, e2: &dyn Channel) -> f64 {
    let gap = Gap { e1, e2 };
    let step = GRID_DEG.to_radians();
    let n_theta = (180.0 / GRID_DEG) as usize;
    let n_phi = (360.0 / GRID_DEG) as usize;
    let (best, t0, p0) = (0..=n_theta)
        .into_par_iter()
        .map(|i| {
            let theta = i as f64 * step;
            let phis = if i == 0 || i == n_theta { 1 } else { n_phi };
            (0..phis)
                .map(|j| {
                    let phi = j as f64 * step;
                    (gap.at(theta, phi), theta, phi)
                })
                .fold((f64::NEG_INFINITY, 0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a })
        })
        .reduce(|| (f64::NEG_INFINITY, 0.0, 0.0), |a, b| if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) { b } else { a });

    let simplex = vec![vec![t0, p0], vec![t0 + 0.5 * step, p0], vec![t0, p0 + 0.5 * step]];
    let refined = NelderMead::new(simplex)
        .with_sd_tolerance(1e-15)
        .ok()
        .and_then(|solver| Executor::new(gap, solver).configure(|s| s.max_iters(400)).run().ok())
        .map(|res| -res.state().get_best_cost())
        .unwrap_or(f64::NEG_INFINITY);
    best.max(refined).clamp(0.0, 1.0)
}

/// `max_{m,n} |p^B_{n|m} − p^F_{m|n}|`, tables indexed `pcond[initial][final]`.
pub fn microreversibility_deviation(tf: &TransitionTable, tb: &TransitionTable) -> f64 {
    let mut worst: f64 = 0.0;
    for m in 0..2 {
        for n in 0..2 {
            worst = worst.max((tb.pcond[m][n] - tf.pcond[n][m]).abs());
        }
    }
    worst
}

/// Transition table of a general channel: `p_{m|n} = ⟨m(τ)|E(|n(0)⟩⟨n(0)|)|m(τ)⟩`.
pub fn transition_table_from_channel(
    p: &QuenchProtocol,
    beta: InverseTemperature,
    channel: &dyn Channel,
) -> Result<TransitionTable> {
    let s0 = quench::initial_spectrum(p)?;
    let s1 = quench::final_spectrum(p)?;
    let mut pcond = [[0.0; 2]; 2];
    for (n, row) in pcond.iter_mut().enumerate() {
        let out = channel.apply(s0.states[n].projector().matrix());
        for (m, v) in row.iter_mut().enumerate() {
            *v = s1.states[m].braket(&out, &s1.states[m]).re;
        }
        let s = row[0] + row[1];
        row[0] /= s;
        row[1] /= s;
    }
    TransitionTable::new(quench::thermal_populations(beta, s0.half_gap()), pcond)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub worst_case_distance: f64,
    pub unitality_deviation: f64,
    pub imag_norm: f64,
}

/// Metrics of a reconstructed process against an ideal channel.
pub fn channel_metrics(ideal: &dyn Channel, xi: &ProcessMatrix) -> ChannelMetrics {
    ChannelMetrics {
        worst_case_distance: worst_case_distance(ideal, xi),
        unitality_deviation: unitality_deviation(xi),
        imag_norm: xi.imag_norm(),
    }
}

/// Tomography of one quench direction under rf inhomogeneity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub direction: Direction,
    pub xi: ProcessMatrix,
    pub metrics: ChannelMetrics,
    pub table: TransitionTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QptReport {
    pub rf_sigma: f64,
    pub forward: ProcessReport,
    pub backward: ProcessReport,
    pub microreversibility_deviation: f64,
}

/// Reconstructs the forward and backward quench channels, each an average
/// over its own rf-scaled ensemble, and compares them with the ideal
/// propagators.
pub fn analyze(p: &QuenchProtocol, rf_sigma: f64, seed: u64) -> Result<QptReport> {
    if !(rf_sigma.is_finite() && rf_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("rf_sigma must be >= 0, got {rf_sigma}")));
    }
    let run = |dir: Direction| -> Result<ProcessReport> {
        let pd = p.with_direction(dir);
        let ideal = UnitaryChannel(quench::propagator(&pd));
        let noisy = UnitaryMixture(rf_ensemble_propagators(&pd, rf_sigma, seed));
        let xi = reconstruct(&noisy)?;
        let metrics = channel_metrics(&ideal, &xi);
        let table = transition_table_from_channel(&pd, InverseTemperature::zero(), &noisy)?;
        Ok(ProcessReport { direction: dir, xi, metrics, table })
    };
    let forward = run(Direction::Forward)?;
    let backward = run(Direction::Backward)?;
    let micro = microreversibility_deviation(&forward.table, &backward.table);
    Ok(QptReport { rf_sigma, forward, backward, microreversibility_deviation: micro })
}
