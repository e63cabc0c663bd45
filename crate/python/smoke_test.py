"""Smoke test for the qwork extension: simulate, fit, verify, tomography."""

import math

import qwork

KT = 3.1


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b, tol)


def main():
    beta = 1.0 / KT
    fwd = qwork.Protocol.reference("forward")
    bwd = fwd.reversed()
    assert bwd.direction == "backward"
    assert fwd.work_values() == [-3.5, -1.5, 1.5, 3.5]

    exact = qwork.exact_statistics(fwd, beta)
    close(sum(a[1] for a in exact["atoms"]), 1.0, 1e-12)

    dists, fits = [], []
    for p in (fwd, bwd):
        series = qwork.Interferometer(p).sample(beta)
        assert len(series) == 360
        close(abs(series.samples[5] - qwork.chi_exact(p, beta, series.u_grid[5])), 0.0, 1e-9)
        fit = qwork.fit_series(series)
        for w, e in zip(fit.omegas, p.work_values()):
            close(w, e, 1e-6)
        fits.append(fit)
        dists.append(fit.distribution())

    crooks = qwork.crooks_fit(*dists)
    close(crooks.beta, beta, 1e-6)
    delta_f = math.log(math.cosh(2.5 * beta) / math.cosh(beta)) / beta
    close(crooks.delta_f, delta_f, 1e-6)

    report = qwork.jarzynski_report(fits[0], crooks, fwd, beta)
    close(report["theory"][0], math.exp(-beta * delta_f), 1e-12)
    assert report["continuation_vs_theory"] and report["crooks_vs_theory"]

    noisy = qwork.NoiseModel(gamma_f=0.5, gamma_b=2.0, readout_sigma=0.01)
    fit = qwork.fit_series(qwork.Interferometer(fwd).sample(beta, noise=noisy, seed=7))
    close(fit.gamma, 0.5, 0.1)

    close(qwork.temperature_from_population(0.25, 1.0), 1.8205, 1e-3)

    qpt = qwork.process_tomography(fwd, rf_sigma=0.05, seed=1)
    assert qpt["forward"]["worst_case_distance"] > 0.0
    assert qpt["microreversibility_deviation"] < 1e-2

    try:
        qwork.Protocol(-1.0, 1.0, 0.1)
    except ValueError:
        pass
    else:
        raise AssertionError("negative half-gap accepted")

    print("qwork smoke test passed")


if __name__ == "__main__":
    main()
