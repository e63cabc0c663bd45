use qwork::interferometer::{sample_series_with, uniform_grid, Interferometer, MagnetizationSeries, NoiseModel};
use qwork::qcore::C64;
use qwork::quench::{Direction, InverseTemperature, QuenchProtocol};
use qwork::spectral::{distribution_from_fit, fit_series, fit_series_with_hint, omega_index};
use qwork::tpm::{chi_exact, ExactStatistics};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn noiseless_round_trip_recovers_the_work_distribution() {
    for dir in [Direction::Forward, Direction::Backward] {
        let p = QuenchProtocol::reference(dir);
        let ifm = Interferometer::new(&p);
        for kt in [1.9, 3.1, 6.0] {
            let beta = InverseTemperature::from_kt(kt).unwrap();
            let ex = ExactStatistics::with_propagator(&p, beta, *ifm.propagator()).unwrap();
            let s = sample_series_with(&ifm, beta, &NoiseModel::noiseless(), 360, 17.9, 0).unwrap();
            let fit = fit_series(&s).unwrap();
            assert!(fit.residual_rms < 1e-8);
            let d = distribution_from_fit(&fit).unwrap();
            for (r, a) in d.atoms.iter().zip(&ex.distribution.atoms) {
                assert!((r.work - a.work).abs() < 0.05);
                assert!((r.prob - a.prob).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn fitted_decay_does_not_depend_on_temperature() {
    let p = QuenchProtocol::reference(Direction::Backward);
    let ifm = Interferometer::new(&p);
    let window = 359.0 / 17.9;
    let noise = NoiseModel { gamma_b: -(0.8f64).ln() / window, ..NoiseModel::noiseless() };
    let works = ExactStatistics::compute(&p, InverseTemperature::zero()).unwrap().distribution;
    let hint: [f64; 4] = std::array::from_fn(|k| works.atoms[k].work + 0.01);
    let gammas: Vec<f64> = [0.0, 1.0 / 6.0, 1.0 / 3.1, 1.0 / 1.9, f64::INFINITY]
        .into_iter()
        .map(|b| {
            let beta = if b.is_finite() { InverseTemperature::Finite(b) } else { InverseTemperature::Infinite };
            let s = sample_series_with(&ifm, beta, &noise, 360, 17.9, 0).unwrap();
            fit_series_with_hint(&s, &hint).unwrap().gamma
        })
        .collect();
    let lo = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gammas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((hi - lo) / hi < 0.01, "{gammas:?}");
}

fn noisy(beta: InverseTemperature, n: usize, seed: u64) -> MagnetizationSeries {
    let ex = ExactStatistics::compute(&QuenchProtocol::reference(Direction::Forward), beta).unwrap();
    let normal = Normal::new(0.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = uniform_grid(n, 17.9);
    let s = g
        .iter()
        .map(|&u| chi_exact(&ex.distribution, u) + C64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    MagnetizationSeries::new(g, s).unwrap()
}

#[test]
fn frequency_uncertainty_shrinks_with_the_window() {
    let beta = InverseTemperature::from_kt(3.1).unwrap();
    for seed in 0..5 {
        let short = fit_series(&noisy(beta, 180, seed)).unwrap();
        let long = fit_series(&noisy(beta, 360, seed)).unwrap();
        for k in 0..4 {
            let (a, b) = (short.sigma(omega_index(k)), long.sigma(omega_index(k)));
            assert!(b <= 0.5 * a, "seed {seed} tone {k}: {a} -> {b}");
        }
    }
}

#[test]
fn truncated_series_still_fits_with_wider_sigmas() {
    let beta = InverseTemperature::from_kt(3.1).unwrap();
    let full = noisy(beta, 360, 3);
    let short = full.truncated(40);
    let a = fit_series(&full).unwrap();
    let b = fit_series(&short).unwrap();
    for k in 0..4 {
        assert!(b.sigma(omega_index(k)) > a.sigma(omega_index(k)));
    }
}
