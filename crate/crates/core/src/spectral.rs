//! Work-distribution reconstruction from a sampled characteristic function:
//! periodogram peak picking, a damped four-tone least-squares fit and the
//! amplitude-to-probability map.
//!
//! The model is `m(u) = e^{−γu} Σₖ αₖ e^{i2πωₖu}` with `ω` in kHz and `u` in
//! ms, so fitted frequencies are work values directly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4, SMatrix, SVector, Vector4};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::MagnetizationSeries;
use crate::qcore::C64;
use crate::tpm::{DiscreteWorkDistribution, TransitionTable};

pub const TONES: usize = 4;
/// Real parameters of the model: γ, four ω, four complex α.
pub const PARAMS: usize = 1 + TONES + 2 * TONES;
pub const MAX_ITERATIONS: usize = 200;
const REL_COST_TOL: f64 = 1e-12;
const MIN_SEPARATION_BINS: usize = 2;
const RANK_TOL: f64 = 1e-13;

/// Index of `ω_k` in the parameter vector.
pub const fn omega_index(k: usize) -> usize {
    1 + k
}

/// Index of `Re α_k`; `Im α_k` follows it.
pub const fn alpha_index(k: usize) -> usize {
    1 + TONES + 2 * k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    /// kHz, ascending.
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Periodogram {
    pub fn bin_width(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }
}

/// Power `|X_k|²/n` of the DFT, so that the total power equals `Σ|x_j|²`.
pub fn periodogram(series: &MagnetizationSeries) -> Result<Periodogram> {
    let h = series.spacing()?;
    let n = series.len();
    if n < 8 {
        return Err(Error::InvalidArgument(format!("periodogram needs at least 8 samples, got {n}")));
    }
    let mut buf = series.samples.clone();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let rate = 1.0 / h;
    // bins k > n/2 alias to negative frequencies; rotate so frequencies ascend
    let first = n / 2 + 1;
    let order = (first..n).chain(0..first);
    let (frequencies, power) = order
        .map(|k| {
            let f = if k < first { k as f64 } else { k as f64 - n as f64 } * rate / n as f64;
            (f, buf[k].norm_sqr() / n as f64)
        })
        .unzip();
    Ok(Periodogram { frequencies, power })
}

/// Spectral peak with its interpolated position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub frequency_khz: f64,
    pub power: f64,
    pub bin: usize,
}

/// The `k` strongest local maxima, refined by a parabola through the
/// log-power of the three surrounding bins, in ascending frequency.
pub fn pick_peaks(spectrum: &Periodogram, k: usize) -> Result<Vec<Peak>> {
    let n = spectrum.power.len();
    if k == 0 || k > n / 4 {
        return Err(Error::InvalidArgument(format!("cannot pick {k} peaks from {n} bins")));
    }
    let p = &spectrum.power;
    let at = |i: isize| p[i.rem_euclid(n as isize) as usize];
    // maxima of pure roundoff are not peaks
    let threshold = p.iter().cloned().fold(0.0, f64::max) * 1e-20;
    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let c = p[i];
            c > threshold && c > at(i as isize - 1) && c >= at(i as isize + 1)
        })
        .collect();
    maxima.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for i in maxima {
        let far = chosen.iter().all(|&j| {
            let d = i.abs_diff(j);
            d.min(n - d) >= MIN_SEPARATION_BINS
        });
        if far {
            chosen.push(i);
            if chosen.len() == k {
                break;
            }
        }
    }
    if chosen.len() < k {
        return Err(Error::TooFewPeaks { found: chosen.len(), requested: k });
    }

    let df = spectrum.bin_width();
    let floor = p.iter().cloned().fold(0.0, f64::max) * 1e-300;
    let lg = |v: f64| v.max(floor).max(f64::MIN_POSITIVE).ln();
    let mut peaks: Vec<Peak> = chosen
        .into_iter()
        .map(|i| {
            let (l, c, r) = (lg(at(i as isize - 1)), lg(p[i]), lg(at(i as isize + 1)));
            let denom = l - 2.0 * c + r;
            let delta = if denom < 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            Peak { frequency_khz: spectrum.frequencies[i] + delta * df, power: p[i], bin: i }
        })
        .collect();
    peaks.sort_by(|a, b| a.frequency_khz.total_cmp(&b.frequency_khz));
    Ok(peaks)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// kHz
    pub omega: f64,
    pub alpha: C64,
}

/// Fitted damped four-tone model with parameter covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitModel {
    /// 1/ms
    pub gamma: f64,
    /// Ascending in `omega`.
    pub tones: [Tone; TONES],
    /// Over `[γ, ω₁..ω₄, Re α₁, Im α₁, .., Re α₄, Im α₄]`.
    pub covariance: [[f64; PARAMS]; PARAMS],
    pub residual_rms: f64,
    pub iterations: usize,
    pub samples: usize,
}

impl FitModel {
    /// Model with zero covariance, tones sorted by frequency.
    pub fn exact(gamma: f64, mut tones: [Tone; TONES]) -> Self {
        tones.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        Self {
            gamma,
            tones,
            covariance: [[0.0; PARAMS]; PARAMS],
            residual_rms: 0.0,
            iterations: 0,
            samples: 0,
        }
    }

    pub fn evaluate(&self, u: f64) -> C64 {
        let s: C64 = self.tones.iter().map(|t| t.alpha * C64::from_polar(1.0, 2.0 * PI * t.omega * u)).sum();
        s * (-self.gamma * u).exp()
    }

    pub fn omegas(&self) -> [f64; TONES] {
        self.tones.map(|t| t.omega)
    }

    pub fn alphas(&self) -> [C64; TONES] {
        self.tones.map(|t| t.alpha)
    }

    pub fn sigma(&self, index: usize) -> f64 {
        self.covariance[index][index].max(0.0).sqrt()
    }

    /// Noiseless series sampled from the model.
    pub fn sample(&self, u_grid: &[f64]) -> Result<MagnetizationSeries> {
        MagnetizationSeries::new(u_grid.to_vec(), u_grid.iter().map(|&u| self.evaluate(u)).collect())
    }
}

type Design = Vec<[C64; TONES]>;

fn design(u: &[f64], omegas: &[f64; TONES], gamma: f64) -> Design {
    u.iter()
        .map(|&t| {
            let d = (-gamma * t).exp();
            omegas.map(|w| C64::from_polar(d, 2.0 * PI * w * t))
        })
        .collect()
}

struct Projection {
    alpha: [C64; TONES],
    gram_inv: Matrix4<C64>,
    residual: Vec<C64>,
    rss: f64,
}

fn project(phi: &Design, y: &[C64]) -> Result<Projection> {
    let mut gram = Matrix4::<C64>::zeros();
    let mut rhs = Vector4::<C64>::zeros();
    for (row, &yj) in phi.iter().zip(y) {
        for a in 0..TONES {
            let ca = row[a].conj();
            rhs[a] += ca * yj;
            for b in 0..TONES {
                gram[(a, b)] += ca * row[b];
            }
        }
    }
    let sv = gram.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > RANK_TOL * smax) {
        return Err(Error::RankDeficient(format!(
            "amplitude design has condition {:.3e}",
            smax / smin
        )));
    }
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("singular amplitude design".into()))?;
    let a = gram_inv * rhs;
    let alpha = [a[0], a[1], a[2], a[3]];
    let residual: Vec<C64> = phi
        .iter()
        .zip(y)
        .map(|(row, &yj)| yj - row.iter().zip(&alpha).map(|(p, a)| p * a).sum::<C64>())
        .collect();
    let rss = residual.iter().map(|r| r.norm_sqr()).sum();
    Ok(Projection { alpha, gram_inv, residual, rss })
}

fn check_distinct(omegas: &[f64; TONES]) -> Result<()> {
    for i in 0..TONES {
        if !omegas[i].is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite omega {}", omegas[i])));
        }
        for j in 0..i {
            if omegas[i] == omegas[j] {
                return Err(Error::RankDeficient(format!("duplicate omega {}", omegas[i])));
            }
        }
    }
    Ok(())
}

type Vec5 = SVector<f64, 5>;
type Mat5 = SMatrix<f64, 5, 5>;

/// Normal matrix and gradient of the projected residual in `(ω, γ)`, using
/// the Kaufman approximation `J = −P⊥ (∂Φ) α`.
fn reduced_normal_equations(u: &[f64], phi: &Design, pr: &Projection) -> (Mat5, Vec5) {
    let n = u.len();
    let mut cols: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); n]; 5];
    for (j, (&t, row)) in u.iter().zip(phi).enumerate() {
        let mut model = C64::new(0.0, 0.0);
        for k in 0..TONES {
            let term = row[k] * pr.alpha[k];
            cols[k][j] = C64::new(0.0, 2.0 * PI * t) * term;
            model += term;
        }
        cols[4][j] = -t * model;
    }
    // P⊥ v = v − Φ G⁻¹ Φᴴ v; the residual carries a minus sign
    for col in cols.iter_mut() {
        let mut h = Vector4::<C64>::zeros();
        for (row, v) in phi.iter().zip(col.iter()) {
            for a in 0..TONES {
                h[a] += row[a].conj() * v;
            }
        }
        let c = pr.gram_inv * h;
        for (row, v) in phi.iter().zip(col.iter_mut()) {
            let proj: C64 = (0..TONES).map(|a| row[a] * c[a]).sum();
            *v = -(*v - proj);
        }
    }
    let mut a = Mat5::zeros();
    let mut g = Vec5::zeros();
    for i in 0..5 {
        for k in i..5 {
            let s: f64 = cols[i].iter().zip(&cols[k]).map(|(x, y)| (x.conj() * y).re).sum();
            a[(i, k)] = s;
            a[(k, i)] = s;
        }
        g[i] = cols[i].iter().zip(&pr.residual).map(|(x, r)| (x.conj() * r).re).sum();
    }
    (a, g)
}

fn evaluate(u: &[f64], y: &[C64], omegas: &[f64; TONES], gamma: f64) -> Result<(Design, Projection)> {
    check_distinct(omegas)?;
    let phi = design(u, omegas, gamma);
    let pr = project(&phi, y)?;
    Ok((phi, pr))
}

/// Least-squares fit of the damped four-tone model by variable projection:
/// the amplitudes are solved exactly at each `(ω, γ)` and Levenberg-Marquardt
/// updates `(ω, γ)`.
pub fn fit_model(series: &MagnetizationSeries, init_omegas: &[f64; TONES], init_gamma: f64) -> Result<FitModel> {
    series.spacing()?;
    let n = series.len();
    if 2 * n <= PARAMS {
        return Err(Error::InvalidArgument(format!(
            "{n} samples cannot constrain {PARAMS} parameters"
        )));
    }
    if !init_gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite initial gamma {init_gamma}")));
    }
    let u = &series.u_grid;
    let y = &series.samples;
    let scale: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    let tiny = 1e-28 * scale.max(f64::MIN_POSITIVE);

    let mut omegas = *init_omegas;
    let mut gamma = init_gamma;
    let (mut phi, mut pr) = evaluate(u, y, &omegas, gamma)?;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = pr.rss <= tiny;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let (a, g) = reduced_normal_equations(u, &phi, &pr);
        let dmax = (0..5).map(|i| a[(i, i)]).fold(0.0, f64::max);
        let mut accepted = None;
        while lambda < 1e16 {
            let mut m = a;
            for i in 0..5 {
                m[(i, i)] += lambda * a[(i, i)].max(1e-12 * dmax).max(f64::MIN_POSITIVE);
            }
            let step = m.cholesky().map(|c| c.solve(&(-g)));
            if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                let mut trial = omegas;
                for k in 0..TONES {
                    trial[k] += step[k];
                }
                let trial_gamma = gamma + step[4];
                if let Ok((p2, r2)) = evaluate(u, y, &trial, trial_gamma) {
                    if r2.rss < pr.rss {
                        accepted = Some((trial, trial_gamma, p2, r2));
                        lambda = (lambda / 3.0).max(1e-15);
                        break;
                    }
                }
            }
            lambda *= 4.0;
        }
        match accepted {
            Some((w, gm, p2, r2)) => {
                let rel = (pr.rss - r2.rss) / pr.rss;
                omegas = w;
                gamma = gm;
                phi = p2;
                pr = r2;
                converged = rel < REL_COST_TOL || pr.rss <= tiny;
            }
            // no step lowers the cost: stationary to working precision
            None => converged = true,
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            best_cost: pr.rss,
            best_omegas: omegas.to_vec(),
            best_gamma: gamma,
        });
    }

    let mut tones: [Tone; TONES] = std::array::from_fn(|k| Tone { omega: omegas[k], alpha: pr.alpha[k] });
    tones.sort_by(|a, b| a.omega.total_cmp(&b.omega));
    let covariance = parameter_covariance(u, gamma, &tones, pr.rss)?;
    Ok(FitModel {
        gamma,
        tones,
        covariance,
        residual_rms: (pr.rss / n as f64).sqrt(),
        iterations,
        samples: n,
    })
}

/// `s² (JᵀJ)⁻¹` over all real parameters with `s² = RSS/(2n − 13)`.
fn parameter_covariance(u: &[f64], gamma: f64, tones: &[Tone; TONES], rss: f64) -> Result<[[f64; PARAMS]; PARAMS]> {
    let n = u.len();
    let mut jtj = DMatrix::<f64>::zeros(PARAMS, PARAMS);
    let mut row = [C64::new(0.0, 0.0); PARAMS];
    for &t in u {
        let d = (-gamma * t).exp();
        let mut model = C64::new(0.0, 0.0);
        for (k, tone) in tones.iter().enumerate() {
            let basis = C64::from_polar(d, 2.0 * PI * tone.omega * t);
            let term = basis * tone.alpha;
            model += term;
            row[omega_index(k)] = C64::new(0.0, 2.0 * PI * t) * term;
            row[alpha_index(k)] = basis;
            row[alpha_index(k) + 1] = C64::new(0.0, 1.0) * basis;
        }
        row[0] = -t * model;
        for i in 0..PARAMS {
            for k in i..PARAMS {
                jtj[(i, k)] += (row[i].conj() * row[k]).re;
            }
        }
    }
    for i in 0..PARAMS {
        for k in 0..i {
            jtj[(i, k)] = jtj[(k, i)];
        }
    }
    let inv = match jtj.clone().cholesky() {
        Some(c) => c.inverse(),
        None => {
            let smax = jtj.norm();
            jtj.pseudo_inverse(1e-12 * smax).map_err(|e| Error::RankDeficient(e.to_string()))?
        }
    };
    let s2 = rss / (2 * n - PARAMS) as f64;
    let mut out = [[0.0; PARAMS]; PARAMS];
    for i in 0..PARAMS {
        for k in 0..PARAMS {
            out[i][k] = 0.5 * s2 * (inv[(i, k)] + inv[(k, i)]);
        }
    }
    Ok(out)
}

/// Periodogram peaks as initial frequencies, then [`fit_model`] from `γ = 0`.
pub fn fit_series(series: &MagnetizationSeries) -> Result<FitModel> {
    let peaks = pick_peaks(&periodogram(series)?, TONES)?;
    let init: [f64; TONES] = std::array::from_fn(|k| peaks[k].frequency_khz);
    fit_model(series, &init, 0.0)
}

/// Like [`fit_series`], but starts from `expected` when the periodogram
/// cannot resolve four peaks: some atoms carry zero weight, or the series
/// is too short.
pub fn fit_series_with_hint(series: &MagnetizationSeries, expected: &[f64; TONES]) -> Result<FitModel> {
    match pick_peaks(&periodogram(series)?, TONES) {
        Ok(peaks) => fit_model(series, &std::array::from_fn(|k| peaks[k].frequency_khz), 0.0),
        Err(_) => fit_model(series, expected, 0.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedAtom {
    /// kHz
    pub work: f64,
    pub prob: f64,
    pub sigma_work: f64,
    pub sigma_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedDistribution {
    /// Ascending in work.
    pub atoms: [ReconstructedAtom; TONES],
    /// Covariance of the four probabilities.
    pub prob_covariance: [[f64; TONES]; TONES],
}

impl ReconstructedDistribution {
    /// Exact four-atom distribution with zero uncertainties.
    pub fn from_exact(d: &DiscreteWorkDistribution) -> Result<Self> {
        if d.atoms.len() != TONES {
            return Err(Error::InvalidArgument(format!("expected {TONES} atoms, got {}", d.atoms.len())));
        }
        let atoms = std::array::from_fn(|k| ReconstructedAtom {
            work: d.atoms[k].work,
            prob: d.atoms[k].prob,
            sigma_work: 0.0,
            sigma_prob: 0.0,
        });
        Ok(Self { atoms, prob_covariance: [[0.0; TONES]; TONES] })
    }

    pub fn total_probability(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }
}

/// Gradient of `prob_k` in `(Re α_j, Im α_j)`, laid out as `[x₁, y₁, .., x₄, y₄]`.
pub(crate) fn prob_gradients(alphas: &[C64; TONES]) -> Result<[[f64; 2 * TONES]; TONES]> {
    let s: C64 = alphas.iter().sum();
    let scale = alphas.iter().map(|a| a.norm()).fold(0.0, f64::max);
    if !(s.norm() > 1e-12 * scale) {
        return Err(Error::DegenerateModel);
    }
    let (x, y) = (s.re, s.im);
    let d = x * x + y * y;
    let mut grads = [[0.0; 2 * TONES]; TONES];
    for (k, g) in grads.iter_mut().enumerate() {
        let (xk, yk) = (alphas[k].re, alphas[k].im);
        let num = xk * x + yk * y;
        for j in 0..TONES {
            let delta = if j == k { 1.0 } else { 0.0 };
            let dn_dx = delta * x + xk;
            let dn_dy = delta * y + yk;
            g[2 * j] = (dn_dx * d - num * 2.0 * x) / (d * d);
            g[2 * j + 1] = (dn_dy * d - num * 2.0 * y) / (d * d);
        }
    }
    Ok(grads)
}

/// `prob_k = Re(αₖ S̄)/|S|²` with `S = Σα`, i.e. `Re αₖ / Re S` after rotating
/// the global phase so that `S` is real and positive.
pub fn probabilities(alphas: &[C64; TONES]) -> Result<[f64; TONES]> {
    let s: C64 = alphas.iter().sum();
    prob_gradients(alphas)?;
    Ok(alphas.map(|a| (a * s.conj()).re / s.norm_sqr()))
}

/// Work distribution from the fitted tones with delta-method uncertainties.
pub fn distribution_from_fit(m: &FitModel) -> Result<ReconstructedDistribution> {
    let alphas = m.alphas();
    let probs = probabilities(&alphas)?;
    let grads = prob_gradients(&alphas)?;
    let cov = |i: usize, j: usize| m.covariance[alpha_index(0) + i][alpha_index(0) + j];
    let mut pc = [[0.0; TONES]; TONES];
    for a in 0..TONES {
        for b in 0..TONES {
            let mut s = 0.0;
            for i in 0..2 * TONES {
                for j in 0..2 * TONES {
                    s += grads[a][i] * cov(i, j) * grads[b][j];
                }
            }
            pc[a][b] = s;
        }
    }
    let atoms = std::array::from_fn(|k| ReconstructedAtom {
        work: m.tones[k].omega,
        prob: probs[k],
        sigma_work: m.sigma(omega_index(k)),
        sigma_prob: pc[k][k].max(0.0).sqrt(),
    });
    Ok(ReconstructedDistribution { atoms, prob_covariance: pc })
}

/// Transition table estimate; rows with a vanishing marginal are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEstimate {
    pub p0: [f64; 2],
    pub rows: [Option<[f64; 2]>; 2],
    /// Largest change made when clamping and renormalizing a row.
    pub renormalization_residual: f64,
}

/// Assigns each atom to the `(n, m)` transition with the nearest work value
/// `ε̄ₘ − εₙ` (ground levels at `−g`) and divides out the initial marginals.
pub fn conditional_estimate(d: &ReconstructedDistribution, initial_half_gap: f64, final_half_gap: f64) -> ConditionalEstimate {
    let level = |k: usize, g: f64| if k == 0 { -g } else { g };
    let mut joint = [[0.0; 2]; 2];
    for atom in &d.atoms {
        let mut best = (0, 0, f64::INFINITY);
        for n in 0..2 {
            for m in 0..2 {
                let w = level(m, final_half_gap) - level(n, initial_half_gap);
                let dist = (atom.work - w).abs();
                if dist < best.2 {
                    best = (n, m, dist);
                }
            }
        }
        joint[best.0][best.1] += atom.prob;
    }
    let p0 = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let mut residual: f64 = 0.0;
    let rows = std::array::from_fn(|n| {
        if p0[n] <= 1e-12 {
            return None;
        }
        let raw = [joint[n][0] / p0[n], joint[n][1] / p0[n]];
        let clamped = raw.map(|v| v.clamp(0.0, 1.0));
        let s = clamped[0] + clamped[1];
        let row = clamped.map(|v| v / s);
        residual = residual.max((row[0] - raw[0]).abs()).max((row[1] - raw[1]).abs());
        Some(row)
    });
    ConditionalEstimate { p0, rows, renormalization_residual: residual }
}

/// [`conditional_estimate`] as a full table; a vanishing marginal is an error.
pub fn conditionals_from_distribution(
    d: &ReconstructedDistribution,
    initial_half_gap: f64,
    final_half_gap: f64,
) -> Result<TransitionTable> {
    let est = conditional_estimate(d, initial_half_gap, final_half_gap);
    let mut pcond = [[0.0; 2]; 2];
    for n in 0..2 {
        pcond[n] = est.rows[n].ok_or(Error::ZeroMarginal { level: n })?;
    }
    let p0 = est.p0.map(|v| v.clamp(0.0, 1.0));
    let s = p0[0] + p0[1];
    TransitionTable::new(p0.map(|v| v / s), pcond)
}
