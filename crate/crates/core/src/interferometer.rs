//! Ancilla-assisted reconstruction of the work characteristic function.
//!
//! Two circuits are simulated on the ancilla ⊗ system pair (ancilla is the
//! first tensor factor):
//!
//! * the abstract circuit: ancilla Hadamard, conditional gate `G₁`, the quench
//!   on the system, conditional gate `G₂`;
//! * its compilation into rf pulses, two `σz⊗σz` free evolutions, an ancilla
//!   spin flip and the embedded quench, which reproduces the abstract unitary
//!   up to a global phase.
//!
//! The readout is the ancilla coherence `2⟨0|ρ_A|1⟩ = ⟨σx⟩ − i⟨σy⟩`, which
//! equals `χ(u)` exactly for the noiseless circuit.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{
    pauli_exp_unchecked, projector, reduce_to_ancilla, sigma_z, tensor, Mat2, Mat4, C64,
};
use crate::quench::{self, Direction, InverseTemperature, QuenchProtocol};
use crate::tpm::TransitionTable;

/// Heteronuclear scalar coupling, kHz.
pub const J_COUPLING_KHZ: f64 = 0.2151;
/// Ensemble size for rf-inhomogeneity averaging.
pub const ENSEMBLE_MEMBERS: usize = 256;
/// Default sampling rate, kHz.
pub const DEFAULT_RATE_KHZ: f64 = 17.9;
pub const DEFAULT_SAMPLES: usize = 360;
/// Slices used for the amplitude-scaled quench of each ensemble member.
const MEMBER_STEPS: usize = 8192;

/// Phenomenological imperfections of the NMR implementation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Envelope decay of the forward series, 1/ms.
    pub gamma_f: f64,
    /// Envelope decay of the backward series, 1/ms.
    pub gamma_b: f64,
    /// Relative standard deviation of the rf amplitude across the sample.
    pub rf_sigma: f64,
    /// System phase damping applied after every coupling interval, in [0, 1].
    pub c_dephasing: f64,
    /// Standard deviation of additive Gaussian noise on each quadrature.
    #[serde(default)]
    pub readout_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl NoiseModel {
    pub const fn noiseless() -> Self {
        Self { gamma_f: 0.0, gamma_b: 0.0, rf_sigma: 0.0, c_dephasing: 0.0, readout_sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gamma_f", self.gamma_f),
            ("gamma_b", self.gamma_b),
            ("rf_sigma", self.rf_sigma),
            ("c_dephasing", self.c_dephasing),
            ("readout_sigma", self.readout_sigma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.c_dephasing > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "c_dephasing must be <= 1, got {}",
                self.c_dephasing
            )));
        }
        Ok(())
    }

    pub fn gamma(&self, direction: Direction) -> f64 {
        match direction {
            Direction::Forward => self.gamma_f,
            Direction::Backward => self.gamma_b,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        *self == Self::noiseless()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qubit {
    Ancilla,
    System,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GateKind {
    /// Transverse rf rotation `exp(−i angle/2 σ_axis)` on one spin.
    Pulse { qubit: Qubit, axis: Axis, angle: f64 },
    /// Free evolution `exp(−i 2πJ t σz⊗σz)`.
    Coupling { duration_ms: f64 },
    /// The quench propagator acting on the system.
    Quench,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    /// Block the gate belongs to, e.g. `"L"` or `"G1 local"`.
    pub block: &'static str,
    pub kind: GateKind,
    pub unitary: Mat4,
}

/// Time-ordered list of gates; the first element acts first.
#[derive(Clone, Debug, PartialEq)]
pub struct GateSequence {
    pub protocol: QuenchProtocol,
    /// Conjugate time, ms.
    pub u: f64,
    /// Coupling angle `s = 2πν₁u`.
    pub s_angle: f64,
    pub gates: Vec<Gate>,
}

impl GateSequence {
    pub fn total_unitary(&self) -> Mat4 {
        self.gates.iter().fold(Mat4::identity(), |acc, g| g.unitary * acc)
    }

    /// Product of the gates of one block.
    pub fn block_unitary(&self, block: &str) -> Mat4 {
        self.gates
            .iter()
            .filter(|g| g.block == block)
            .fold(Mat4::identity(), |acc, g| g.unitary * acc)
    }

    pub fn coupling_durations(&self) -> Vec<f64> {
        self.gates
            .iter()
            .filter_map(|g| match g.kind {
                GateKind::Coupling { duration_ms } => Some(duration_ms),
                _ => None,
            })
            .collect()
    }
}

fn rotation(axis: Axis, angle: f64) -> Mat2 {
    match axis {
        Axis::X => pauli_exp_unchecked(0.5 * angle, 0.0, 0.0),
        Axis::Y => pauli_exp_unchecked(0.0, 0.5 * angle, 0.0),
    }
}

fn embed(qubit: Qubit, m: &Mat2) -> Mat4 {
    match qubit {
        Qubit::Ancilla => tensor(m, &Mat2::identity()),
        Qubit::System => tensor(&Mat2::identity(), m),
    }
}

fn pulse_unitary(qubit: Qubit, axis: Axis, angle: f64) -> Mat4 {
    embed(qubit, &rotation(axis, angle))
}

fn coupling_unitary(duration_ms: f64) -> Mat4 {
    let phi = 2.0 * PI * J_COUPLING_KHZ * duration_ms;
    let m = C64::from_polar(1.0, -phi);
    let p = C64::from_polar(1.0, phi);
    Mat4::diagonal([m, p, p, m])
}

/// Signed drive axis of an endpoint Hamiltonian `a σx + b σy`.
fn endpoint_axis(p: &QuenchProtocol, t: f64) -> Result<(Axis, f64, f64)> {
    let h = quench::hamiltonian(p, t)?;
    let (a, b) = (h[(1, 0)].re, h[(1, 0)].im);
    let (axis, signed) = if b.abs() >= a.abs() { (Axis::Y, b) } else { (Axis::X, a) };
    let off = if axis == Axis::Y { a } else { b };
    if off.abs() > 1e-12 * signed.abs().max(1.0) || signed == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "endpoint Hamiltonian at t = {t} is not along a transverse axis"
        )));
    }
    Ok((axis, signed.signum(), signed.abs()))
}

/// Pulses realizing `V` with `V σz V† = sign·σ_axis`, time-ordered.
///
/// `L ≅ Rx(π)·Ry(π/2)` is `(σx + σz)/√2` and `K ≅ Ry(π)·Rx(−π/2)` is
/// `(σy + σz)/√2`, both up to global phase; a leading `Rx(π)` flips the sign.
fn basis_change(axis: Axis, sign: f64) -> Vec<(Axis, f64)> {
    let mut seq = Vec::new();
    if sign < 0.0 {
        seq.push((Axis::X, PI));
    }
    match axis {
        Axis::X => seq.extend([(Axis::Y, FRAC_PI_2), (Axis::X, PI)]),
        Axis::Y => seq.extend([(Axis::X, -FRAC_PI_2), (Axis::Y, PI)]),
    }
    seq
}

fn inverse_pulses(seq: &[(Axis, f64)]) -> Vec<(Axis, f64)> {
    seq.iter().rev().map(|&(a, th)| (a, -th)).collect()
}

fn block_name(axis: Axis, inverse: bool) -> &'static str {
    match (axis, inverse) {
        (Axis::X, false) => "L",
        (Axis::X, true) => "L dagger",
        (Axis::Y, false) => "K",
        (Axis::Y, true) => "K dagger",
    }
}

/// Compiles the reconstruction circuit at conjugate time `u` (ms) into rf
/// pulses, couplings and the quench.
pub fn compile_pulse_sequence(p: &QuenchProtocol, u: f64) -> Result<GateSequence> {
    compile_with_propagator(p, u, &quench::propagator(p))
}

pub(crate) fn compile_with_propagator(p: &QuenchProtocol, u: f64, prop: &Mat2) -> Result<GateSequence> {
    if !(u.is_finite() && u >= 0.0) {
        return Err(Error::InvalidArgument(format!("u must be >= 0, got {u}")));
    }
    let (ax0, sg0, g0) = endpoint_axis(p, 0.0)?;
    let (ax1, sg1, g1) = endpoint_axis(p, p.tau)?;
    let theta0 = 2.0 * PI * u * g0;
    let theta1 = 2.0 * PI * u * g1;

    let mut gates = Vec::with_capacity(24);
    let pulse = |gates: &mut Vec<Gate>, block, qubit, axis, angle| {
        gates.push(Gate {
            block,
            kind: GateKind::Pulse { qubit, axis, angle },
            unitary: pulse_unitary(qubit, axis, angle),
        })
    };
    let coupling = |gates: &mut Vec<Gate>, block, duration_ms: f64| {
        gates.push(Gate {
            block,
            kind: GateKind::Coupling { duration_ms },
            unitary: coupling_unitary(duration_ms),
        })
    };

    // ancilla Hadamard
    pulse(&mut gates, "H ancilla", Qubit::Ancilla, Axis::Y, FRAC_PI_2);
    pulse(&mut gates, "H ancilla", Qubit::Ancilla, Axis::X, PI);

    // G1: rotation about the initial drive axis, then the conditional phase
    pulse(&mut gates, "G1 local", Qubit::System, ax0, sg0 * theta0);
    let v0 = basis_change(ax0, sg0);
    for (a, th) in inverse_pulses(&v0) {
        pulse(&mut gates, block_name(ax0, true), Qubit::System, a, th);
    }
    coupling(&mut gates, "G1 coupling", u * g0 / (2.0 * J_COUPLING_KHZ));
    for (a, th) in v0 {
        pulse(&mut gates, block_name(ax0, false), Qubit::System, a, th);
    }

    gates.push(Gate { block: "quench", kind: GateKind::Quench, unitary: embed(Qubit::System, prop) });

    // G2: same construction on the final axis with the ancilla flipped around
    // the coupling so the phase lands on the |1⟩ branch
    pulse(&mut gates, "G2 local", Qubit::System, ax1, sg1 * theta1);
    let v1 = basis_change(ax1, sg1);
    for (a, th) in inverse_pulses(&v1) {
        pulse(&mut gates, block_name(ax1, true), Qubit::System, a, th);
    }
    pulse(&mut gates, "ancilla flip", Qubit::Ancilla, Axis::X, PI);
    coupling(&mut gates, "G2 coupling", u * g1 / (2.0 * J_COUPLING_KHZ));
    pulse(&mut gates, "ancilla flip", Qubit::Ancilla, Axis::X, PI);
    for (a, th) in v1 {
        pulse(&mut gates, block_name(ax1, false), Qubit::System, a, th);
    }

    Ok(GateSequence { protocol: *p, u, s_angle: 2.0 * PI * p.nu1 * u, gates })
}

/// `(G₁, G₂)` at conjugate time `u`.
pub fn conditional_gates(p: &QuenchProtocol, u: f64) -> Result<(Mat4, Mat4)> {
    let h0 = quench::hamiltonian(p, 0.0)?;
    let h1 = quench::hamiltonian(p, p.tau)?;
    let e0 = exp_hamiltonian(&h0, u);
    let e1 = exp_hamiltonian(&h1, u);
    let g1 = tensor(&projector(0), &e0) + tensor(&projector(1), &Mat2::identity());
    let g2 = tensor(&projector(0), &Mat2::identity()) + tensor(&projector(1), &e1);
    Ok((g1, g2))
}

/// `exp(−i 2π u H)` for traceless `H = a σx + b σy + c σz`.
fn exp_hamiltonian(h: &Mat2, u: f64) -> Mat2 {
    let a = h[(1, 0)].re;
    let b = h[(1, 0)].im;
    let c = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
    let k = 2.0 * PI * u;
    pauli_exp_unchecked(k * a, k * b, k * c)
}

fn hadamard() -> Mat2 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Mat2::from_fn(|i, j| C64::new(if i == 1 && j == 1 { -s } else { s }, 0.0))
}

fn readout(rho: &Mat4) -> C64 {
    2.0 * reduce_to_ancilla(rho)[(0, 1)]
}

fn initial_joint_state(p: &QuenchProtocol, beta: InverseTemperature) -> Result<Mat4> {
    let sys = quench::gibbs(p, beta)?;
    Ok(tensor(&projector(0), sys.matrix()))
}

/// Quench with its cached propagator; the entry point for repeated circuit
/// evaluations.
#[derive(Clone, Debug)]
pub struct Interferometer {
    protocol: QuenchProtocol,
    propagator: Mat2,
}

impl Interferometer {
    pub fn new(p: &QuenchProtocol) -> Self {
        Self { protocol: *p, propagator: quench::propagator(p) }
    }

    pub fn with_propagator(p: &QuenchProtocol, propagator: Mat2) -> Self {
        Self { protocol: *p, propagator }
    }

    pub fn protocol(&self) -> &QuenchProtocol {
        &self.protocol
    }

    pub fn propagator(&self) -> &Mat2 {
        &self.propagator
    }

    /// Unitary of the abstract circuit, ancilla Hadamard through `G₂`.
    pub fn abstract_unitary(&self, u: f64) -> Result<Mat4> {
        let (g1, g2) = conditional_gates(&self.protocol, u)?;
        let h = tensor(&hadamard(), &Mat2::identity());
        let q = tensor(&Mat2::identity(), &self.propagator);
        Ok(g2 * q * g1 * h)
    }

    /// Ancilla readout of the ideal abstract circuit.
    pub fn run_abstract(&self, beta: InverseTemperature, u: f64) -> Result<C64> {
        let rho = initial_joint_state(&self.protocol, beta)?;
        let a = self.abstract_unitary(u)?;
        Ok(readout(&rho.conjugate_by(&a)))
    }

    pub fn compile(&self, u: f64) -> Result<GateSequence> {
        compile_with_propagator(&self.protocol, u, &self.propagator)
    }
}

/// Readout of the abstract circuit for a single `(p, β, u)`.
pub fn run_abstract(p: &QuenchProtocol, beta: InverseTemperature, u: f64) -> Result<C64> {
    Interferometer::new(p).run_abstract(beta, u)
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn direction_tag(d: Direction) -> u64 {
    match d {
        Direction::Forward => 0xF0,
        Direction::Backward => 0xB0,
    }
}

/// rf amplitude scale factors for the ensemble, `N(1, rf_sigma)`.
pub fn rf_scales(rf_sigma: f64, direction: Direction, seed: u64) -> Vec<f64> {
    if rf_sigma == 0.0 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, direction_tag(direction)));
    let normal = Normal::new(1.0, rf_sigma).expect("finite sigma");
    (0..ENSEMBLE_MEMBERS).map(|_| normal.sample(&mut rng)).collect()
}

/// Quench propagators of the rf-scaled ensemble members.
pub fn rf_ensemble_propagators(p: &QuenchProtocol, rf_sigma: f64, seed: u64) -> Vec<Mat2> {
    let scales = rf_scales(rf_sigma, p.direction, seed);
    if scales.len() == 1 && scales[0] == 1.0 {
        return vec![quench::propagator(p)];
    }
    scales
        .par_iter()
        .map(|&f| quench::propagator_with_steps(&p.scaled(f), MEMBER_STEPS).expect("steps >= 1"))
        .collect()
}

#[derive(Clone, Debug)]
struct Member {
    scale: f64,
    quench: Mat2,
}

/// Ensemble simulator for compiled pulse sequences under a noise model.
///
/// The ensemble is drawn once from the seed, so every grid point sees the
/// same members and results do not depend on thread scheduling.
#[derive(Clone, Debug)]
pub struct PulseSimulator {
    protocol: QuenchProtocol,
    noise: NoiseModel,
    members: Vec<Member>,
}

impl PulseSimulator {
    pub fn new(p: &QuenchProtocol, noise: &NoiseModel, seed: u64) -> Result<Self> {
        Self::with_ideal_propagator(p, noise, seed, quench::propagator(p))
    }

    pub fn with_ideal_propagator(p: &QuenchProtocol, noise: &NoiseModel, seed: u64, ideal: Mat2) -> Result<Self> {
        noise.validate()?;
        let scales = rf_scales(noise.rf_sigma, p.direction, seed);
        let members = if noise.rf_sigma == 0.0 {
            vec![Member { scale: 1.0, quench: ideal }]
        } else {
            scales
                .par_iter()
                .map(|&f| Member {
                    scale: f,
                    quench: quench::propagator_with_steps(&p.scaled(f), MEMBER_STEPS).expect("steps >= 1"),
                })
                .collect()
        };
        Ok(Self { protocol: *p, noise: *noise, members })
    }

    pub fn members(&self) -> usize {
        self.members.len()
    }

    /// Ensemble-averaged ancilla readout after the decay envelope.
    pub fn run(&self, seq: &GateSequence, beta: InverseTemperature) -> Result<C64> {
        let rho0 = initial_joint_state(&self.protocol, beta)?;
        let zc = tensor(&Mat2::identity(), &sigma_z());
        let c = self.noise.c_dephasing;
        let mut acc = C64::new(0.0, 0.0);
        for member in &self.members {
            let mut rho = rho0;
            for gate in &seq.gates {
                let u = match gate.kind {
                    GateKind::Pulse { qubit, axis, angle } if member.scale != 1.0 => {
                        pulse_unitary(qubit, axis, angle * member.scale)
                    }
                    GateKind::Quench if member.scale != 1.0 => embed(Qubit::System, &member.quench),
                    _ => gate.unitary,
                };
                rho = rho.conjugate_by(&u);
                if c > 0.0 && matches!(gate.kind, GateKind::Coupling { .. }) {
                    rho = rho.scale_re(1.0 - 0.5 * c) + rho.conjugate_by(&zc).scale_re(0.5 * c);
                }
            }
            acc += readout(&rho);
        }
        let decay = (-self.noise.gamma(self.protocol.direction) * seq.u).exp();
        Ok(acc * (decay / self.members.len() as f64))
    }
}

/// Readout of a compiled sequence under `noise`, ensemble drawn from `rng_seed`.
pub fn run_pulse_sequence(
    seq: &GateSequence,
    beta: InverseTemperature,
    noise: &NoiseModel,
    rng_seed: u64,
) -> Result<C64> {
    let ideal = match seq.gates.iter().find(|g| g.kind == GateKind::Quench) {
        Some(g) => extract_system(&g.unitary),
        None => quench::propagator(&seq.protocol),
    };
    PulseSimulator::with_ideal_propagator(&seq.protocol, noise, rng_seed, ideal)?.run(seq, beta)
}

fn extract_system(m: &Mat4) -> Mat2 {
    Mat2::from_fn(|i, j| m[(i, j)])
}

/// Provenance of a sampled series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub protocol: QuenchProtocol,
    pub beta: InverseTemperature,
    pub noise: NoiseModel,
    pub seed: u64,
    pub rate_khz: f64,
    /// `s/u = 2πν₁`, rad/ms.
    pub s_per_u: f64,
}

/// Sampled characteristic function on a uniform grid of conjugate times.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnetizationSeries {
    /// ms, ascending and uniform.
    pub u_grid: Vec<f64>,
    pub samples: Vec<C64>,
    pub meta: Option<SeriesMeta>,
}

impl MagnetizationSeries {
    /// Series without provenance; checks the grid.
    pub fn new(u_grid: Vec<f64>, samples: Vec<C64>) -> Result<Self> {
        if u_grid.len() != samples.len() {
            return Err(Error::InvalidArgument(format!(
                "grid has {} points but {} samples",
                u_grid.len(),
                samples.len()
            )));
        }
        if u_grid.len() < 2 {
            return Err(Error::InvalidArgument("series needs at least 2 samples".into()));
        }
        let s = Self { u_grid, samples, meta: None };
        s.spacing()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.u_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_grid.is_empty()
    }

    /// Uniform grid spacing, or an error if the grid is not uniform within
    /// 1e-12 relative.
    pub fn spacing(&self) -> Result<f64> {
        let n = self.u_grid.len();
        if n < 2 {
            return Err(Error::InvalidArgument("series needs at least 2 samples".into()));
        }
        let h = (self.u_grid[n - 1] - self.u_grid[0]) / (n - 1) as f64;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::NonUniformGrid(f64::INFINITY));
        }
        let mut worst: f64 = 0.0;
        for (k, w) in self.u_grid.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NonUniformGrid(f64::INFINITY));
            }
            let expected = self.u_grid[0] + h * (k + 1) as f64;
            worst = worst.max((w[1] - expected).abs() / h);
        }
        if worst > 1e-9 {
            return Err(Error::NonUniformGrid(worst));
        }
        let rel = self
            .u_grid
            .windows(2)
            .map(|w| ((w[1] - w[0]) - h).abs() / h)
            .fold(0.0, f64::max);
        // differences of rounded grid points carry ~n ulp of error
        if rel > 1e-12 * n as f64 {
            return Err(Error::NonUniformGrid(rel));
        }
        Ok(h)
    }

    /// Truncates to the first `n` samples.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            u_grid: self.u_grid[..n].to_vec(),
            samples: self.samples[..n].to_vec(),
            meta: self.meta,
        }
    }
}

/// `u_k = k / rate` in ms for `k = 0..n`.
pub fn uniform_grid(n: usize, rate_khz: f64) -> Vec<f64> {
    (0..n).map(|k| k as f64 / rate_khz).collect()
}

/// Samples the compiled circuit under `noise` on `n` points at `rate_khz`.
pub fn sample_series(
    p: &QuenchProtocol,
    beta: InverseTemperature,
    noise: &NoiseModel,
    n: usize,
    rate_khz: f64,
    seed: u64,
) -> Result<MagnetizationSeries> {
    let interferometer = Interferometer::new(p);
    sample_series_with(&interferometer, beta, noise, n, rate_khz, seed)
}

/// [`sample_series`] reusing a cached propagator.
pub fn sample_series_with(
    interferometer: &Interferometer,
    beta: InverseTemperature,
    noise: &NoiseModel,
    n: usize,
    rate_khz: f64,
    seed: u64,
) -> Result<MagnetizationSeries> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    if !(rate_khz.is_finite() && rate_khz > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {rate_khz}")));
    }
    let p = *interferometer.protocol();
    let sim = PulseSimulator::with_ideal_propagator(&p, noise, seed, *interferometer.propagator())?;
    let grid = uniform_grid(n, rate_khz);
    let mut samples = grid
        .par_iter()
        .map(|&u| sim.run(&interferometer.compile(u)?, beta))
        .collect::<Result<Vec<_>>>()?;
    if noise.readout_sigma > 0.0 {
        let tag = beta.value().to_bits() ^ direction_tag(p.direction).rotate_left(32);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x5EED, tag));
        let normal = Normal::new(0.0, noise.readout_sigma).expect("finite sigma");
        for s in samples.iter_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *s += C64::new(re, im);
        }
    }
    Ok(MagnetizationSeries {
        u_grid: grid,
        samples,
        meta: Some(SeriesMeta {
            protocol: p,
            beta,
            noise: *noise,
            seed,
            rate_khz,
            s_per_u: 2.0 * PI * p.nu1,
        }),
    })
}

/// Four-term ancilla magnetization of a two-level quench with envelope
/// decay, `½ e^{−γu} Σ p⁰ₙ p_{m|n} e^{i2πWu}`, with the (ν₁ − ν₂) terms
/// swapped between directions.
pub fn magnetization_closed_form(t: &TransitionTable, p: &QuenchProtocol, u: f64, gamma: f64) -> C64 {
    let sum = p.nu1 + p.nu2;
    let diff = p.nu1 - p.nu2;
    let sign = match p.direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let e = |w: f64| C64::from_polar(1.0, 2.0 * PI * w * u);
    let terms = e(-sum) * t.joint(1, 0)
        + e(-sign * diff) * t.joint(1, 1)
        + e(sign * diff) * t.joint(0, 0)
        + e(sum) * t.joint(0, 1);
    terms * (0.5 * (-gamma * u).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{sigma_x, sigma_y, ONE};
    use crate::tpm::{chi_exact, ExactStatistics};

    fn fwd() -> QuenchProtocol {
        QuenchProtocol::reference(Direction::Forward)
    }

    fn phase_fidelity(a: &Mat4, b: &Mat4) -> f64 {
        a.hs_inner(b).norm() / 4.0
    }

    fn phase_equal2(a: &Mat2, b: &Mat2) -> f64 {
        a.hs_inner(b).norm() / 2.0
    }

    #[test]
    fn conditional_gates_at_zero() {
        let (g1, g2) = conditional_gates(&fwd(), 0.0).unwrap();
        assert!(g1.max_abs_diff(&Mat4::identity()) < 1e-15);
        assert!(g2.max_abs_diff(&Mat4::identity()) < 1e-15);
    }

    #[test]
    fn conditional_gate_blocks() {
        let p = fwd();
        let u = 0.137;
        let (g1, _) = conditional_gates(&p, u).unwrap();
        let block = |m: &Mat4, a: usize| Mat2::from_fn(|i, j| m[(2 * a + i, 2 * a + j)]);
        assert_eq!(block(&g1, 1), Mat2::identity());
        let want = crate::qcore::pauli_exp(0.0, 2.0 * PI * u * 2.5, 0.0).unwrap();
        assert!(block(&g1, 0).max_abs_diff(&want) < 1e-12);
        // off-diagonal ancilla blocks vanish
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g1[(i, 2 + j)], C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn basis_change_blocks_are_hadamard_like() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let l_want = (sigma_x() + sigma_z()).scale_re(s);
        let k_want = (sigma_y() + sigma_z()).scale_re(s);
        let build = |seq: Vec<(Axis, f64)>| seq.into_iter().fold(Mat2::identity(), |acc, (a, th)| rotation(a, th) * acc);
        let l = build(basis_change(Axis::X, 1.0));
        let k = build(basis_change(Axis::Y, 1.0));
        assert!((phase_equal2(&l, &l_want) - 1.0).abs() < 1e-14);
        assert!((phase_equal2(&k, &k_want) - 1.0).abs() < 1e-14);
        for (axis, sign, target) in [
            (Axis::X, 1.0, sigma_x()),
            (Axis::X, -1.0, -sigma_x()),
            (Axis::Y, 1.0, sigma_y()),
            (Axis::Y, -1.0, -sigma_y()),
        ] {
            let v = build(basis_change(axis, sign));
            assert!(sigma_z().conjugate_by(&v).max_abs_diff(&target) < 1e-14);
        }
    }

    #[test]
    fn compiled_sequence_matches_abstract_up_to_phase() {
        for dir in [Direction::Forward, Direction::Backward] {
            let ifm = Interferometer::new(&fwd().with_direction(dir));
            for &u in &[0.0, 0.0559, 0.73, 4.2, 19.9] {
                let seq = ifm.compile(u).unwrap();
                let f = phase_fidelity(&seq.total_unitary(), &ifm.abstract_unitary(u).unwrap());
                assert!(f > 1.0 - 1e-8, "{dir:?} u={u} f={f}");
                for g in &seq.gates {
                    assert!(g.unitary.unitarity_deviation() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coupling_ratio_follows_gap_ratio() {
        let f = Interferometer::new(&fwd()).compile(1.0).unwrap().coupling_durations();
        assert!((f[0] / f[1] - 2.5).abs() < 1e-12);
        let b = Interferometer::new(&fwd().with_direction(Direction::Backward))
            .compile(1.0)
            .unwrap()
            .coupling_durations();
        assert!((b[0] / b[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn l_block_in_forward_sequence() {
        let seq = Interferometer::new(&fwd()).compile(0.3).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let l_want = tensor(&Mat2::identity(), &(sigma_x() + sigma_z()).scale_re(s));
        assert!((phase_fidelity(&seq.block_unitary("L"), &l_want) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn abstract_readout_equals_chi() {
        for dir in [Direction::Forward, Direction::Backward] {
            let p = fwd().with_direction(dir);
            let ifm = Interferometer::new(&p);
            for beta in [InverseTemperature::zero(), InverseTemperature::Finite(0.4), InverseTemperature::Infinite] {
                let ex = ExactStatistics::with_propagator(&p, beta, *ifm.propagator()).unwrap();
                let r0 = ifm.run_abstract(beta, 0.0).unwrap();
                assert!((r0 - ONE).norm() < 1e-12, "{r0}");
                for &u in &[0.05, 1.3, 7.77] {
                    let got = ifm.run_abstract(beta, u).unwrap();
                    assert!((got - chi_exact(&ex.distribution, u)).norm() < 1e-10);
                    if beta == InverseTemperature::zero() {
                        assert!(got.im.abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_pulse_run_equals_abstract() {
        let p = fwd();
        let ifm = Interferometer::new(&p);
        let beta = InverseTemperature::Finite(1.0 / 3.1);
        for &u in &[0.0, 0.4, 3.3] {
            let seq = ifm.compile(u).unwrap();
            let got = run_pulse_sequence(&seq, beta, &NoiseModel::noiseless(), 7).unwrap();
            assert!((got - ifm.run_abstract(beta, u).unwrap()).norm() < 1e-9);
        }
    }

    #[test]
    fn full_dephasing_leaves_readout_unchanged() {
        let p = fwd().with_direction(Direction::Backward);
        let ifm = Interferometer::new(&p);
        let noise = NoiseModel { c_dephasing: 1.0, ..NoiseModel::noiseless() };
        let beta = InverseTemperature::Finite(0.5);
        for &u in &[0.2, 2.0, 11.0] {
            let seq = ifm.compile(u).unwrap();
            let a = run_pulse_sequence(&seq, beta, &noise, 1).unwrap();
            let b = run_pulse_sequence(&seq, beta, &NoiseModel::noiseless(), 1).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn decay_scales_modulus() {
        let p = fwd();
        let ifm = Interferometer::new(&p);
        let noise = NoiseModel { gamma_f: 0.05, ..NoiseModel::noiseless() };
        let u = 6.0;
        let seq = ifm.compile(u).unwrap();
        let beta = InverseTemperature::Finite(0.2);
        let a = run_pulse_sequence(&seq, beta, &noise, 0).unwrap();
        let b = run_pulse_sequence(&seq, beta, &NoiseModel::noiseless(), 0).unwrap();
        assert!((a.norm() - (-0.05 * u).exp() * b.norm()).abs() < 1e-9);
    }

    #[test]
    fn rf_noise_is_seed_deterministic() {
        let p = fwd();
        let noise = NoiseModel { rf_sigma: 0.05, ..NoiseModel::noiseless() };
        let seq = Interferometer::new(&p).compile(1.7).unwrap();
        let beta = InverseTemperature::Finite(0.3);
        let a = run_pulse_sequence(&seq, beta, &noise, 42).unwrap();
        let b = run_pulse_sequence(&seq, beta, &noise, 42).unwrap();
        assert_eq!(a, b);
        let ideal = run_pulse_sequence(&seq, beta, &NoiseModel::noiseless(), 42).unwrap();
        assert!((a - ideal).norm() > 1e-6);
    }

    #[test]
    fn sample_series_defaults_and_short_runs() {
        let p = fwd();
        let s = sample_series(&p, InverseTemperature::Finite(0.5), &NoiseModel::noiseless(), 2, DEFAULT_RATE_KHZ, 0).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.samples[0] - ONE).norm() < 1e-12);
        let grid = uniform_grid(DEFAULT_SAMPLES, DEFAULT_RATE_KHZ);
        assert!((grid[359] - 20.056).abs() < 1e-3);
        assert!(sample_series(&p, InverseTemperature::zero(), &NoiseModel::noiseless(), 1, 17.9, 0).is_err());
    }

    #[test]
    fn closed_form_matches_half_chi() {
        for dir in [Direction::Forward, Direction::Backward] {
            let p = fwd().with_direction(dir);
            let ex = ExactStatistics::compute(&p, InverseTemperature::Finite(1.0 / 1.9)).unwrap();
            assert!((magnetization_closed_form(&ex.table, &p, 0.0, 0.0) - C64::new(0.5, 0.0)).norm() < 1e-14);
            for &u in &[0.1, 2.0, 9.5] {
                let m = magnetization_closed_form(&ex.table, &p, u, 0.0);
                assert!((m * 2.0 - chi_exact(&ex.distribution, u)).norm() < 1e-12);
            }
        }
        let ex0 = ExactStatistics::compute(&fwd(), InverseTemperature::zero()).unwrap();
        assert!(magnetization_closed_form(&ex0.table, &fwd(), 3.3, 0.0).im.abs() < 1e-12);
    }

    #[test]
    fn non_uniform_grid_rejected() {
        let s = MagnetizationSeries::new(vec![0.0, 1.0, 2.5], vec![ONE; 3]);
        assert!(matches!(s, Err(Error::NonUniformGrid(_))));
    }

    #[test]
    fn readout_sign_convention() {
        // |+⟩ ancilla with phase e^{iφ} on |1⟩: 2⟨0|ρ|1⟩ = e^{-iφ}
        let phi = 0.3;
        let v = [C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0), C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, phi)];
        let rho_a = Mat2::from_fn(|i, j| v[i] * v[j].conj());
        let rho = tensor(&rho_a, &projector(0));
        assert!((readout(&rho) - C64::from_polar(1.0, -phi)).norm() < 1e-15);
    }
}
