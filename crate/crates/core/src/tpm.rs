//! Exact two-point-measurement statistics: transition tables, discrete work
//! distributions and their characteristic function.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{Mat2, C64};
use crate::quench::{self, InverseTemperature, QuenchProtocol, Spectrum};

const PROB_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-10;

/// Initial populations and conditional transition probabilities.
///
/// `pcond[n][m]` is the probability of ending in final level `m` given initial
/// level `n`; level 0 is the ground state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub p0: [f64; 2],
    pub pcond: [[f64; 2]; 2],
}

impl TransitionTable {
    pub fn new(p0: [f64; 2], pcond: [[f64; 2]; 2]) -> Result<Self> {
        let all = p0.iter().chain(pcond.iter().flatten());
        for &v in all {
            if !(v.is_finite() && (-PROB_TOL..=1.0 + PROB_TOL).contains(&v)) {
                return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
            }
        }
        if (p0[0] + p0[1] - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidArgument(format!("initial populations sum to {}", p0[0] + p0[1])));
        }
        for (n, row) in pcond.iter().enumerate() {
            if (row[0] + row[1] - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidArgument(format!(
                    "row {n} of conditional probabilities sums to {}",
                    row[0] + row[1]
                )));
            }
        }
        Ok(Self { p0, pcond })
    }

    /// Joint probability `p⁰ₙ p_{m|n}`.
    pub fn joint(&self, n: usize, m: usize) -> f64 {
        self.p0[n] * self.pcond[n][m]
    }
}

/// Builds the table for `p` at `beta` from a propagator `u`.
pub fn transition_table(p: &QuenchProtocol, beta: InverseTemperature, u: &Mat2) -> Result<TransitionTable> {
    let dev = u.unitarity_deviation();
    if dev > UNITARY_TOL {
        return Err(Error::NotUnitary { deviation: dev });
    }
    let s0 = quench::initial_spectrum(p)?;
    let s1 = quench::final_spectrum(p)?;
    let p0 = quench::thermal_populations(beta, s0.half_gap());
    let pcond = conditional_probabilities(&s0, &s1, u);
    TransitionTable::new(p0, pcond)
}

/// `|⟨m(τ)|U|n(0)⟩|²` with rows renormalized against roundoff.
pub fn conditional_probabilities(s0: &Spectrum, s1: &Spectrum, u: &Mat2) -> [[f64; 2]; 2] {
    let mut pcond = [[0.0; 2]; 2];
    for (n, row) in pcond.iter_mut().enumerate() {
        for (m, v) in row.iter_mut().enumerate() {
            *v = s1.states[m].braket(u, &s0.states[n]).norm_sqr();
        }
        let s = row[0] + row[1];
        row[0] /= s;
        row[1] /= s;
    }
    pcond
}

/// One delta peak of the work distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkAtom {
    /// kHz
    pub work: f64,
    pub prob: f64,
    pub initial: usize,
    #[serde(rename = "final")]
    pub final_level: usize,
}

/// Four-atom work distribution of a two-level quench, ascending in work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteWorkDistribution {
    pub atoms: Vec<WorkAtom>,
}

impl DiscreteWorkDistribution {
    pub fn total_probability(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }
}

/// The four work values `ε̄ₘ − εₙ` of a protocol, ascending; no propagator needed.
pub fn work_values(p: &QuenchProtocol) -> Result<[f64; 4]> {
    let (s0, s1) = (quench::initial_spectrum(p)?, quench::final_spectrum(p)?);
    let mut w = [0.0; 4];
    for n in 0..2 {
        for m in 0..2 {
            w[2 * n + m] = s1.energies[m] - s0.energies[n];
        }
    }
    w.sort_by(f64::total_cmp);
    Ok(w)
}

/// `P(W) = Σ p⁰ₙ p_{m|n} δ(W − (ε̄_m − εₙ))`.
pub fn work_distribution(t: &TransitionTable, s0: &Spectrum, s1: &Spectrum) -> DiscreteWorkDistribution {
    let mut atoms = Vec::with_capacity(4);
    for n in 0..2 {
        for m in 0..2 {
            atoms.push(WorkAtom {
                work: s1.energies[m] - s0.energies[n],
                prob: t.joint(n, m),
                initial: n,
                final_level: m,
            });
        }
    }
    atoms.sort_by(|a, b| a.work.total_cmp(&b.work));
    DiscreteWorkDistribution { atoms }
}

/// `χ(u) = Σ_k p_k e^{i 2π W_k u}` with `u` in ms.
pub fn chi_exact(d: &DiscreteWorkDistribution, u: f64) -> C64 {
    d.atoms
        .iter()
        .map(|a| C64::from_polar(a.prob, 2.0 * PI * a.work * u))
        .sum()
}

/// `⟨e^{−βW}⟩` over the distribution.
pub fn jarzynski_lhs(d: &DiscreteWorkDistribution, beta: InverseTemperature) -> Result<f64> {
    let b = beta.finite()?;
    Ok(d.atoms.iter().map(|a| a.prob * (-b * a.work).exp()).sum())
}

/// Free-energy change of a two-level quench.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyChange {
    /// kHz
    pub delta_f: f64,
    /// `βΔF = ln(Z₀/Z_τ)`, dimensionless.
    pub beta_delta_f: f64,
}

/// `ln cosh x` without overflow.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// `ΔF = β⁻¹ ln(cosh(βν_initial) / cosh(βν_final))` for half-gaps
/// `nu_initial → nu_final`, with the β → 0 and β → ∞ limits.
pub fn delta_f_theory(beta: InverseTemperature, nu_initial: f64, nu_final: f64) -> FreeEnergyChange {
    match beta {
        InverseTemperature::Infinite => {
            let df = nu_initial.abs() - nu_final.abs();
            FreeEnergyChange { delta_f: df, beta_delta_f: df * f64::INFINITY }
        }
        InverseTemperature::Finite(b) if b == 0.0 => FreeEnergyChange { delta_f: 0.0, beta_delta_f: 0.0 },
        InverseTemperature::Finite(b) => {
            let bdf = ln_cosh(b * nu_initial) - ln_cosh(b * nu_final);
            FreeEnergyChange { delta_f: bdf / b, beta_delta_f: bdf }
        }
    }
}

/// Table and distribution of the ideal unitary quench.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactStatistics {
    pub protocol: QuenchProtocol,
    pub beta: InverseTemperature,
    pub propagator: Mat2,
    pub table: TransitionTable,
    pub distribution: DiscreteWorkDistribution,
}

impl ExactStatistics {
    pub fn compute(p: &QuenchProtocol, beta: InverseTemperature) -> Result<Self> {
        Self::with_propagator(p, beta, quench::propagator(p))
    }

    pub fn with_propagator(p: &QuenchProtocol, beta: InverseTemperature, u: Mat2) -> Result<Self> {
        let table = transition_table(p, beta, &u)?;
        let s0 = quench::initial_spectrum(p)?;
        let s1 = quench::final_spectrum(p)?;
        let distribution = work_distribution(&table, &s0, &s1);
        Ok(Self { protocol: *p, beta, propagator: u, table, distribution })
    }
}
