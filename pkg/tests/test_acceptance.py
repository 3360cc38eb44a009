"""Acceptance criteria, each at its stated tolerance and runtime budget.

A summary line per criterion is printed at the end of the pytest run.
"""

import math
import time
from fractions import Fraction

import numpy as np

from resnet_ensembles import cli, complexity, dynamics, ensemble, spinglass, toynet


def brute_force_argmax(p, beta):
    """Largest exact term of binom(p-1, r-1) * beta**r (first one on ties)."""
    b = Fraction(beta)
    terms = [math.comb(p - 1, r - 1) * b**r for r in range(1, p + 1)]
    return terms.index(max(terms)) + 1


def unimodal(x):
    k = int(np.argmax(x))
    return bool(np.all(np.diff(x[: k + 1]) >= 0) and np.all(np.diff(x[k:]) <= 0))


def test_criterion_1_mixture_figures(criterion, tmp_path):
    elapsed = 0.0
    details = []
    for beta in (0.1, 0.5, 2.0):
        t0 = time.perf_counter()
        code = cli.main(["mixture", "--p", "100", "--beta", str(beta), "--out", str(tmp_path / str(beta))])
        elapsed += time.perf_counter() - t0
        assert code == 0
        rows = np.loadtxt(tmp_path / str(beta) / "mixture.csv", delimiter=",", skiprows=1)
        assert unimodal(rows[:, 1])
    for p in (100, 1000):
        for beta in (0.1, 0.5, 2.0):
            t0 = time.perf_counter()
            k = ensemble.argmax_depth(ensemble.mixture_from_beta(p, beta))
            elapsed += time.perf_counter() - t0
            assert k == brute_force_argmax(p, beta)
            assert abs(k / p - beta / (1 + beta)) <= 2 / p
            details.append(f"p={p},b={beta}:{k}")
    criterion["detail"] = f"argmax exact; {' '.join(details)}; {elapsed:.2f}s"
    assert elapsed < 1.0


def test_criterion_2_band_concentration(criterion):
    t0 = time.perf_counter()
    mix = ensemble.mixture_from_beta(2000, 0.5)
    inside = ensemble.band_mass(mix, 0.23, 0.43)
    outside = ensemble.band_mass(mix, 0.5, 0.9)
    elapsed = time.perf_counter() - t0
    criterion["detail"] = f"mass[0.23,0.43]={inside:.15f} mass[0.5,0.9]={outside:.2e}; {elapsed:.3f}s"
    assert inside >= 0.999
    assert outside <= 1e-6
    assert elapsed < 1.0


def log_fraction(x):
    return math.log(x.numerator) - math.log(x.denominator)


def test_criterion_3_legendre_identity(criterion):
    worst = 0.0
    for beta in (Fraction(1, 10), Fraction(1, 2), Fraction(9, 10)):
        for p in range(1, 201):
            direct = sum(math.comb(p, r) ** 2 * beta ** (2 * r) for r in range(p + 1))
            closed = ensemble.legendre_normalization(p, float(beta))
            # relative difference of the sums: |closed / direct - 1|
            worst = max(worst, abs(math.expm1(closed - log_fraction(direct))))
    criterion["detail"] = f"max relative difference {worst:.2e} over p<=200 against exact rational sums"
    assert worst < 1e-10


def test_criterion_4_complexity(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for p in range(2, 51):
        eps = np.zeros(p)
        eps[-1] = 1.0
        expected = 0.5 * math.log(p - 1) - (1 - 2 / p)
        worst = max(worst, abs(complexity.complexity_stats(eps).theta - expected))
    assert worst <= 1e-15
    rows = complexity.theta_beta_sweep(100, np.geomspace(0.05, 5.0, 50))
    thetas = np.array([r.theta for r in rows])
    assert np.all(np.diff(thetas) >= 0)
    off = {}
    for p in (3, 5, 10):
        opt = complexity.maximize_theta_on_simplex(p, restarts=5, seed=0)
        off[p] = opt.off_mass
        assert opt.off_mass < 1e-6
    elapsed = time.perf_counter() - t0
    criterion["detail"] = (
        f"pure-theta err {worst:.1e}; sweep monotone; off-mass "
        + " ".join(f"p={p}:{v:.1e}" for p, v in off.items())
        + f"; {elapsed:.2f}s"
    )
    assert elapsed < 10.0


def test_criterion_5_spin_glass_oracle(criterion):
    t0 = time.perf_counter()
    model = spinglass.sample_model(4, [1.0], seed=0, orders=[2])
    census = spinglass.find_critical_points(model, restarts=1000, seed=1)
    oracle = spinglass.quadratic_oracle(model)
    assert len(census.records) == 8
    assert sorted(r.index for r in census.records) == [0, 0, 1, 1, 2, 2, 3, 3]
    worst = 0.0
    for rec in census.records:
        (match,) = [o for o in oracle if np.linalg.norm(o[2] - rec.point) < 1e-6]
        assert rec.index == match[1]
        worst = max(worst, abs(rec.energy - match[0]))
    assert worst < 1e-8
    mean, se = spinglass.monte_carlo_second_moment(5, [0.6, 0.8], [2, 3], models=10_000, seed=0)
    elapsed = time.perf_counter() - t0
    criterion["detail"] = (
        f"8 points, energy err {worst:.1e}; E[H^2]={mean:.3f}+-{se:.3f} vs 5 "
        f"({abs(mean - 5) / se:.2f} se); {elapsed:.2f}s"
    )
    assert abs(mean - 5.0) <= 3 * se
    assert elapsed < 60.0


def test_criterion_6_dynamics(criterion):
    t0 = time.perf_counter()
    r3 = dynamics.verify_thm3(trials=200, mu=1e-3, seed=0)
    r4 = dynamics.verify_thm4(trials=200, mu=1e-3, seed=0)
    elapsed = time.perf_counter() - t0
    criterion["detail"] = (
        f"thm3 pass unskipped={r3.details['unskipped']['pass_fraction']:.3f} "
        f"skipped={r3.details['skipped']['pass_fraction']:.3f}; "
        f"thm4 median rel residual={r4.median_residual:.2e} slope={r4.residual_slope:.3f} "
        f"variant={r4.sign_variant}; {elapsed:.2f}s"
    )
    assert r3.details["unskipped"]["pass_fraction"] >= 0.95
    assert r3.details["skipped"]["pass_fraction"] >= 0.95
    assert r4.median_residual < 0.05
    assert 1.8 <= r4.residual_slope <= 2.2
    assert r4.sign_variant in ("statement", "appendix")
    assert elapsed < 60.0


def _fd_check(use_bn):
    cfg = toynet.ToyNetConfig(p=3, n=4, d=3, num_classes=3, samples_per_class=5, use_bn=use_bn)
    data = toynet.make_dataset(3, 3, 5, seed=0)
    params = toynet.init_params(cfg, np.random.default_rng(0))
    params.lambdas = np.array([0.8, 1.3, 0.9])
    _, cache = toynet.forward(params, cfg, data.X)
    sig = cache.sigmas
    _, g = toynet.backward(params, cfg, data.X, data.y, sigmas=sig)
    worst = 0.0
    h = 1e-6
    for l, W in enumerate(params.W):
        fd = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + h
            up = toynet.backward(params, cfg, data.X, data.y, sigmas=sig)[0]
            W[idx] = old - h
            dn = toynet.backward(params, cfg, data.X, data.y, sigmas=sig)[0]
            W[idx] = old
            fd[idx] = (up - dn) / (2 * h)
        worst = max(worst, np.linalg.norm(fd - g.W[l]) / np.linalg.norm(fd))
    if use_bn:
        fd = np.zeros(cfg.p)
        for l in range(cfg.p):
            old = params.lambdas[l]
            params.lambdas[l] = old + h
            up = toynet.backward(params, cfg, data.X, data.y, sigmas=sig)[0]
            params.lambdas[l] = old - h
            dn = toynet.backward(params, cfg, data.X, data.y, sigmas=sig)[0]
            params.lambdas[l] = old
            fd[l] = (up - dn) / (2 * h)
        worst = max(worst, np.linalg.norm(fd - g.lambdas) / np.linalg.norm(fd))
    return worst


def test_criterion_7_toy_resnet(criterion):
    t0 = time.perf_counter()
    grad_err = max(_fd_check(True), _fd_check(False))
    assert grad_err < 1e-4
    medians, growth = [], []
    for seed in range(5):
        bn = toynet.train(toynet.ToyNetConfig(seed=seed))
        assert not bn.diverged
        medians.append(float(np.median(bn.final_lambdas[1:])))
        plain = toynet.train(toynet.ToyNetConfig(seed=seed, use_bn=False))
        assert not plain.diverged
        w = plain.weight_norms
        growth.append(float(w[-1] / w[0] - 1.0))
    elapsed = time.perf_counter() - t0
    criterion["detail"] = (
        "median lambda(l>=2) " + " ".join(f"{m:.2f}" for m in medians)
        + "; no-BN norm growth " + " ".join(f"{100 * g:.1f}%" for g in growth)
        + f"; grad err {grad_err:.1e}; {elapsed:.0f}s"
    )
    assert sum(m > 1.05 for m in medians) >= 4
    assert sum(g >= 0.05 for g in growth) >= 4
    assert elapsed < 600.0


def test_criterion_8_determinism(criterion, tmp_path):
    invocations = {
        "mixture": (["mixture", "--p", "100", "--beta", "0.5"], ["mixture.csv", "mixture.json"]),
        "sweep": (["complexity-sweep"], ["complexity_sweep.csv"]),
        "census": (["spinglass-census", "--Lambda", "3", "--orders", "2,3", "--restarts", "2000"],
                   ["census_points.csv", "census_histogram.csv", "model.json"]),
        "thm3": (["dynamics", "--check", "thm3"], ["dynamics_thm3.json"]),
        "thm4": (["dynamics", "--check", "thm4"], ["dynamics_thm4.json"]),
        "train": (["train", "--iterations", "300", "--log-every", "50"], ["trace.csv"]),
    }
    compared = 0
    for name, (argv, files) in invocations.items():
        dirs = [tmp_path / f"{name}_{i}" for i in (1, 2)]
        codes = [cli.main([*argv, "--seed", "7", "--out", str(d)]) for d in dirs]
        assert codes[0] == codes[1] == 0
        for f in files:
            assert (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes(), f"{name}/{f}"
            compared += 1
    criterion["detail"] = f"{compared} CSV/JSON files byte-identical across two runs"
