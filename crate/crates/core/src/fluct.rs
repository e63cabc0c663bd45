//! Fluctuation-theorem checks on reconstructed work statistics: the
//! Tasaki-Crooks line, the Jarzynski average by analytic continuation of the
//! fitted characteristic function, and Monte Carlo error propagation.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::C64;
use crate::quench::{InverseTemperature, QuenchProtocol};
use crate::spectral::{alpha_index, omega_index, FitModel, ReconstructedDistribution, TONES};
use crate::tpm::ln_cosh;

/// Largest |W| mismatch tolerated when pairing forward and backward atoms, kHz.
pub const PAIRING_TOLERANCE_KHZ: f64 = 0.2;
/// Atoms closer than this are merged before pairing, kHz.
const COINCIDENCE_KHZ: f64 = 1e-9;
pub const MIN_TRIALS: usize = 100;

/// Value with a one-sigma uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub const fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }

    /// Agreement within twice the combined sigma, with a relative floor of
    /// 1e-6 for estimates whose uncertainty vanishes.
    pub fn agrees_with(&self, other: &Estimate) -> bool {
        let combined = (self.sigma * self.sigma + other.sigma * other.sigma).sqrt();
        let floor = 1e-6 * self.value.abs().max(other.value.abs());
        (self.value - other.value).abs() <= 2.0 * combined + floor
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrooksPoint {
    /// kHz
    pub work: f64,
    /// `ln(P^F(W)/P^B(−W))`
    pub ln_ratio: f64,
    pub sigma: f64,
}

struct Group {
    work: f64,
    prob: f64,
    var: f64,
}

fn merge_atoms(d: &ReconstructedDistribution) -> Vec<Group> {
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (k, a) in d.atoms.iter().enumerate() {
        match groups.iter_mut().find(|(w, _)| (w - a.work).abs() <= COINCIDENCE_KHZ) {
            Some((_, members)) => members.push(k),
            None => groups.push((a.work, vec![k])),
        }
    }
    groups
        .into_iter()
        .map(|(_, m)| {
            let work = m.iter().map(|&k| d.atoms[k].work).sum::<f64>() / m.len() as f64;
            let prob = m.iter().map(|&k| d.atoms[k].prob).sum();
            let var = m.iter().flat_map(|&i| m.iter().map(move |&j| (i, j))).map(|(i, j)| d.prob_covariance[i][j]).sum();
            Group { work, prob, var }
        })
        .collect()
}

/// One point per forward atom: the backward atom nearest `−W` is its
/// partner, coincident atoms having been merged first.
pub fn crooks_points(df: &ReconstructedDistribution, db: &ReconstructedDistribution) -> Result<Vec<CrooksPoint>> {
    let fwd = merge_atoms(df);
    let bwd = merge_atoms(db);
    let mut points = Vec::with_capacity(fwd.len());
    for f in &fwd {
        let partner = bwd
            .iter()
            .min_by(|a, b| (a.work + f.work).abs().total_cmp(&(b.work + f.work).abs()))
            .expect("distribution has atoms");
        if (partner.work + f.work).abs() > PAIRING_TOLERANCE_KHZ {
            return Err(Error::Unpairable { work: f.work, tolerance: PAIRING_TOLERANCE_KHZ });
        }
        let work = 0.5 * (f.work - partner.work);
        if !(f.prob > 0.0 && partner.prob > 0.0) {
            return Err(Error::ZeroProbability { work });
        }
        let rel_var = f.var.max(0.0) / (f.prob * f.prob) + partner.var.max(0.0) / (partner.prob * partner.prob);
        points.push(CrooksPoint { work, ln_ratio: (f.prob / partner.prob).ln(), sigma: rel_var.sqrt() });
    }
    points.sort_by(|a, b| a.work.total_cmp(&b.work));
    Ok(points)
}

/// Straight-line fit `ln_ratio = a + βW` with `ΔF = −a/β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrooksFit {
    /// (kHz)⁻¹
    pub beta_est: f64,
    pub sigma_beta: f64,
    /// `a = −βΔF`
    pub intercept: f64,
    pub sigma_intercept: f64,
    pub cov_intercept_beta: f64,
    /// kHz; absent when the slope vanishes.
    pub delta_f_est: Option<f64>,
    pub sigma_delta_f: Option<f64>,
    pub cov_beta_delta_f: Option<f64>,
    /// Inverse-variance weights were used; otherwise ordinary least squares
    /// scaled by the residual variance.
    pub weighted: bool,
    pub points: Vec<CrooksPoint>,
    pub warnings: Vec<String>,
}

impl CrooksFit {
    pub fn beta(&self) -> Estimate {
        Estimate { value: self.beta_est, sigma: self.sigma_beta }
    }

    pub fn delta_f(&self) -> Option<Estimate> {
        Some(Estimate { value: self.delta_f_est?, sigma: self.sigma_delta_f? })
    }
}

pub fn crooks_fit(points: &[CrooksPoint]) -> Result<CrooksFit> {
    let n = points.len();
    if n < 2 {
        return Err(Error::DegenerateFit(format!("{n} point(s), need at least 2")));
    }
    if points.iter().any(|p| !(p.work.is_finite() && p.ln_ratio.is_finite() && p.sigma >= 0.0)) {
        return Err(Error::DegenerateFit("non-finite point".into()));
    }
    let weighted = points.iter().all(|p| p.sigma >= 1e-12);
    let w: Vec<f64> = points.iter().map(|p| if weighted { 1.0 / (p.sigma * p.sigma) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let xm = points.iter().zip(&w).map(|(p, w)| w * p.work).sum::<f64>() / sw;
    let ym = points.iter().zip(&w).map(|(p, w)| w * p.ln_ratio).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.work - xm).powi(2)).sum();
    let spread = points.iter().map(|p| (p.work - xm).abs()).fold(0.0, f64::max);
    if !(spread > 1e-12) || !(sxx > 0.0) {
        return Err(Error::DegenerateFit("work values do not spread".into()));
    }
    let sxy: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.work - xm) * (p.ln_ratio - ym)).sum();
    let b = sxy / sxx;
    let a = ym - b * xm;
    // variances of (a, b) for unit-variance weights
    let mut var_b = 1.0 / sxx;
    let mut var_a = 1.0 / sw + xm * xm / sxx;
    let mut cov_ab = -xm / sxx;
    if !weighted {
        let rss: f64 = points.iter().map(|p| (p.ln_ratio - a - b * p.work).powi(2)).sum();
        let s2 = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
        var_b *= s2;
        var_a *= s2;
        cov_ab *= s2;
    }
    let sigma_beta = var_b.max(0.0).sqrt();
    let mut warnings = Vec::new();
    let (delta_f_est, sigma_delta_f, cov_beta_delta_f) = if b.abs() <= 1e-9 {
        warnings.push(format!("slope {b:.3e} is compatible with infinite temperature; free-energy change undefined"));
        (None, None, None)
    } else {
        if b.abs() < 2.0 * sigma_beta {
            warnings.push(format!("slope {b:.3e} is within 2 sigma of zero"));
        }
        // ΔF = −a/b
        let (da, db) = (-1.0 / b, a / (b * b));
        let var = da * da * var_a + db * db * var_b + 2.0 * da * db * cov_ab;
        let cov = da * cov_ab + db * var_b;
        (Some(-a / b), Some(var.max(0.0).sqrt()), Some(cov))
    };
    Ok(CrooksFit {
        beta_est: b,
        sigma_beta,
        intercept: a,
        sigma_intercept: var_a.max(0.0).sqrt(),
        cov_intercept_beta: cov_ab,
        delta_f_est,
        sigma_delta_f,
        cov_beta_delta_f,
        weighted,
        points: points.to_vec(),
        warnings,
    })
}

fn continuation(alphas: &[C64; TONES], omegas: &[f64; TONES], beta: f64) -> Result<f64> {
    let s: C64 = alphas.iter().sum();
    let scale = alphas.iter().map(|a| a.norm()).fold(0.0, f64::max);
    if !(s.norm() > 1e-12 * scale) {
        return Err(Error::DegenerateModel);
    }
    let weights = alphas.map(|a| (a * s.conj()).re);
    let num: f64 = weights.iter().zip(omegas).map(|(w, om)| w * (-beta * om).exp()).sum();
    let den: f64 = weights.iter().sum();
    Ok(num / den)
}

/// `Σₖ probₖ e^{−βωₖ}` from the fitted amplitudes, decay envelope excluded.
pub fn jarzynski_continuation(m: &FitModel, beta: f64) -> Result<f64> {
    if !beta.is_finite() {
        return Err(Error::InfiniteBeta);
    }
    continuation(&m.alphas(), &m.omegas(), beta)
}

const MC_DIM: usize = 3 * TONES;
type McVec = SVector<f64, MC_DIM>;
type McMat = SMatrix<f64, MC_DIM, MC_DIM>;

fn mc_index(i: usize) -> usize {
    if i < TONES {
        omega_index(i)
    } else {
        alpha_index(0) + (i - TONES)
    }
}

/// Sample mean and standard deviation of the continuation under Gaussian
/// draws of `(ω, α)` from the fit covariance and of `β ~ N(β, σ_β)`.
pub fn monte_carlo(m: &FitModel, beta: Estimate, trials: usize, seed: u64) -> Result<Estimate> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    if !(beta.value.is_finite() && beta.sigma.is_finite() && beta.sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid beta {} ± {}", beta.value, beta.sigma)));
    }
    let cov = McMat::from_fn(|i, j| m.covariance[mc_index(i)][mc_index(j)]);
    let eig = SymmetricEigen::new(cov);
    let emax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let emin = eig.eigenvalues.min();
    if emin < -1e-9 * emax.max(1e-300) && emin < -1e-300 {
        return Err(Error::NotPsd(emin));
    }
    let sqrt_l = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let factor = eig.eigenvectors * McMat::from_diagonal(&sqrt_l);

    let mean = McVec::from_fn(|i, _| {
        if i < TONES {
            m.tones[i].omega
        } else {
            let k = (i - TONES) / 2;
            if (i - TONES) % 2 == 0 { m.tones[k].alpha.re } else { m.tones[k].alpha.im }
        }
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(McVec, f64)> = (0..trials)
        .map(|_| {
            let z = McVec::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let zb: f64 = StandardNormal.sample(&mut rng);
            (z, zb)
        })
        .collect();
    let values = draws
        .par_iter()
        .map(|(z, zb)| {
            let x = mean + factor * z;
            let omegas: [f64; TONES] = std::array::from_fn(|k| x[k]);
            let alphas: [C64; TONES] = std::array::from_fn(|k| C64::new(x[TONES + 2 * k], x[TONES + 2 * k + 1]));
            continuation(&alphas, &omegas, beta.value + beta.sigma * zb)
        })
        .collect::<Result<Vec<f64>>>()?;
    // shifted by the first draw so that identical draws give exactly zero spread
    let n = values.len() as f64;
    let v0 = values[0];
    let shift = values.iter().map(|v| v - v0).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - v0 - shift).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate { value: v0 + shift, sigma: var.sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyFlags {
    pub lhs_vs_crooks: bool,
    pub lhs_vs_theory: bool,
    pub crooks_vs_theory: bool,
}

impl ConsistencyFlags {
    pub fn all(&self) -> bool {
        self.lhs_vs_crooks && self.lhs_vs_theory && self.crooks_vs_theory
    }
}

/// Three estimates of `e^{−βΔF}` at one temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JarzynskiReport {
    /// (kHz)⁻¹
    pub beta: f64,
    /// Monte Carlo continuation `⟨e^{−βW}⟩` of the forward fit.
    pub lhs_continuation: Estimate,
    /// `e^{a}` from the Crooks intercept.
    pub rhs_crooks: Estimate,
    /// `Z_τ/Z₀`.
    pub rhs_theory: Estimate,
    pub flags: ConsistencyFlags,
}

/// `Z_τ/Z₀ = cosh(βg₁)/cosh(βg₀)` and its β-derivative.
pub fn partition_ratio(p: &QuenchProtocol, beta: f64) -> (f64, f64) {
    let (g0, g1) = (p.initial_half_gap(), p.final_half_gap());
    let r = (ln_cosh(beta * g1) - ln_cosh(beta * g0)).exp();
    let d = r * (g1 * (beta * g1).tanh() - g0 * (beta * g0).tanh());
    (r, d)
}

/// Compares the continuation of `fit_f`, the Crooks intercept and theory at
/// the preparation `beta`; the Crooks slope uncertainty is carried by the
/// continuation and theory columns.
pub fn jarzynski_report(
    fit_f: &FitModel,
    crooks: &CrooksFit,
    p: &QuenchProtocol,
    beta: InverseTemperature,
    trials: usize,
    seed: u64,
) -> Result<JarzynskiReport> {
    let b = beta.finite()?;
    let beta_est = Estimate { value: b, sigma: crooks.sigma_beta };
    let lhs = monte_carlo(fit_f, beta_est, trials, seed)?;
    let ea = crooks.intercept.exp();
    let rhs_crooks = Estimate { value: ea, sigma: ea * crooks.sigma_intercept };
    let (r, dr) = partition_ratio(p, b);
    let rhs_theory = Estimate { value: r, sigma: dr.abs() * crooks.sigma_beta };
    let flags = ConsistencyFlags {
        lhs_vs_crooks: lhs.agrees_with(&rhs_crooks),
        lhs_vs_theory: lhs.agrees_with(&rhs_theory),
        crooks_vs_theory: rhs_crooks.agrees_with(&rhs_theory),
    };
    Ok(JarzynskiReport { beta: b, lhs_continuation: lhs, rhs_crooks, rhs_theory, flags })
}
