"""End-to-end acceptance gate.

Each test covers one numbered criterion and prints an explicit PASS/FAIL
line (run with -s to see the lines for passing tests). The slow criteria
run reduced "desk scale" study configurations; they are real fits, not
smoke tests.
"""

import math

import numpy as np
import pytest
from scipy import stats

from psbart.data import CovariateColumn, Dataset, TargetMesh, compute_gamma_vector
from psbart.gp import GPConfig, KernelCache, sample_prior_leaf
from psbart.projection import pava
from psbart.sampler import (
    BackfittingEngine,
    SamplerConfig,
    _draw_sigma2,
    run_mcmc,
    sample_truncnorm,
)
from psbart.simulate import knn_fit_predict, run_monotonicity_study, run_mse_inflation_study
from psbart.trees import TreePrior, sample_tree_from_prior, tree_fit

from test_gp import dense_marginal_loglik
from test_projection import cone_projection_bruteforce
from test_sampler import truncnorm_moments_oracle


def _criterion(number, description):
    """Decorator printing a PASS/FAIL line for one acceptance criterion."""

    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                out = fn(*args, **kwargs)
            except BaseException:
                print(f"CRITERION {number} ({description}): FAIL")
                raise
            print(f"CRITERION {number} ({description}): PASS")
            return out

        inner.__name__ = fn.__name__
        return inner

    return wrap


@_criterion(1, "monotonicity study, desk scale")
def test_criterion_1_monotonicity_study():
    result = run_monotonicity_study(replicates=10, n=1000, seed=0)
    agg = {row["scenario"]: row for row in result.aggregate()}
    assert set(agg) == {"Arctan", "Linear", "Sigmoid"}
    for name, row in agg.items():
        assert 0.98 <= row["mse_default"] <= 1.10, (name, row)
        assert row["mse_monotone"] <= row["mse_default"], (name, row)
        assert 0.0 <= row["pct_reduction"] <= 3.0, (name, row)


@_criterion(2, "MSE-inflation study")
def test_criterion_2_mse_inflation():
    sigmas = (0.3, 0.6, 1.0, 2.0, 3.0)
    rows = run_mse_inflation_study(sigmas=sigmas, n_mc=200, seed=0)
    # one mean ratio per sigma, averaged over the design / smoothness arms
    mean_by_sigma = [
        float(np.mean([r["mean_ratio"] for r in rows if r["sigma"] == s]))
        for s in sigmas
    ]
    assert all(a > b for a, b in zip(mean_by_sigma, mean_by_sigma[1:])), mean_by_sigma
    assert mean_by_sigma[0] > 1.5, mean_by_sigma
    assert 0.95 <= mean_by_sigma[-1] <= 1.10, mean_by_sigma
    # each arm is individually decreasing within Monte Carlo error
    for cell in sorted({(r["x_dist"], r["k"]) for r in rows}):
        arm = [
            next(r for r in rows
                 if (r["x_dist"], r["k"]) == cell and r["sigma"] == s)
            for s in sigmas
        ]
        for a, b in zip(arm, arm[1:]):
            slack = 3.0 * math.hypot(a["se_ratio"], b["se_ratio"])
            assert b["mean_ratio"] < a["mean_ratio"] + slack, (cell, a, b)


@_criterion(3, "PAVA equals brute-force cone projection")
def test_criterion_3_pava_oracle():
    rng = np.random.default_rng(1)
    for i in range(10_000):
        T = int(rng.integers(1, 9))
        v = rng.normal(size=T) * rng.uniform(0.5, 3.0)
        w = np.ones(T) if i % 2 else rng.uniform(0.2, 3.0, T)
        got = pava(v, w)
        oracle = cone_projection_bruteforce(v, w)
        np.testing.assert_allclose(got, oracle, atol=1e-12)
        # idempotence and optimality on the same instance
        np.testing.assert_array_equal(pava(got, w), got)
        assert np.all(np.diff(got) >= 0)


@_criterion(4, "leaf marginal equals dense MVN density")
def test_criterion_4_leaf_marginal_oracle():
    from psbart.gp import leaf_marginal_loglik

    rng = np.random.default_rng(2)
    for _ in range(1000):
        T = int(rng.integers(2, 7))
        n = int(rng.integers(1, 13))
        mesh = TargetMesh(np.cumsum(rng.uniform(0.5, 3.0, T)))
        cfg = GPConfig(theta=rng.uniform(0.3, 4.0), tau2=rng.uniform(0.05, 2.0),
                       mesh=mesh)
        cache = KernelCache(cfg)
        mesh_idx = rng.integers(0, T, n)
        r = rng.normal(size=n) * rng.uniform(0.5, 2.0)
        sigma2 = rng.uniform(0.1, 3.0)
        counts = np.bincount(mesh_idx, minlength=T).astype(float)
        sums = np.bincount(mesh_idx, weights=r, minlength=T)
        got = leaf_marginal_loglik(cache, counts, sums, float(r @ r), sigma2)
        expected = dense_marginal_loglik(cache.K, mesh_idx, r, sigma2)
        assert got == pytest.approx(expected, abs=1e-8)


@_criterion(5, "truncated-normal imputation moments")
def test_criterion_5_truncnorm_moments():
    rng = np.random.default_rng(3)
    n = 100_000
    cases = [
        (0.0, 1.0, -0.5, 0.5),
        (1.7, 0.3, 1.65, 1.75),
        (0.0, 1.0, 8.0, 8.5),  # interval 8 sigma above the mean
        (0.0, 1.0, -8.5, -8.0),  # and 8 sigma below
        (-2.0, 0.7, 3.0, 4.0),
    ]
    for mean, sd, low, high in cases:
        draws = sample_truncnorm(np.full(n, mean), sd, low, high, rng)
        assert np.all((draws > low) & (draws < high))
        m, v = truncnorm_moments_oracle(mean, sd, low, high)
        assert abs(draws.mean() - m) < 3 * math.sqrt(v / n), (mean, sd, low, high)
        mu4 = np.mean((draws - m) ** 4)
        se_var = math.sqrt(max(mu4 - v * v, 0.0) / n)
        assert abs(draws.var() - v) < 3 * se_var, (mean, sd, low, high)


def _geweke_forward(X, mesh_idx, gp, prior, nu, lam, n_draw, rng):
    """Independent draws of (sigma2, f at a probe row) from prior +
    likelihood."""
    sig = np.empty(n_draw)
    f0 = np.empty(n_draw)
    f1 = np.empty(n_draw)
    for i in range(n_draw):
        total = np.zeros(len(X))
        probe = np.zeros(gp.T)
        for _ in range(2):
            tree, assign = sample_tree_from_prior(X, prior, gp, rng)
            total += tree_fit(tree, assign, mesh_idx)
            probe += tree.nodes[assign[0]].values
        sigma2 = _draw_sigma2(0.0, 0, nu, lam, rng)
        # y is drawn to complete the joint but only the params are recorded
        _ = total + math.sqrt(sigma2) * rng.standard_normal(len(X))
        sig[i] = sigma2
        f0[i] = probe[0]
        f1[i] = probe[1]
    return sig, f0, f1


def _geweke_successive(X, mesh_idx, gp, prior, nu, lam, n_draw, thin, rng):
    """Draws from the same joint via the sampler's transition kernel,
    alternating a fresh y | params draw with one full parameter sweep."""
    mesh = gp.mesh if hasattr(gp, "mesh") else None
    engine = BackfittingEngine(X, mesh_idx, gp, 2, prior, 1.0, mesh)
    # start from a forward draw so no burn-in argument is needed
    for j, tree in enumerate(engine.trees):
        t, a = sample_tree_from_prior(X, prior, gp, rng)
        engine.trees[j] = t
        engine.assigns[j] = a
        engine.tree_fits[j] = tree_fit(t, a, mesh_idx)
    engine.ensemble.trees = engine.trees
    engine.total_fit = engine.tree_fits.sum(axis=0)
    engine.sigma2 = _draw_sigma2(0.0, 0, nu, lam, rng)

    sig = np.empty(n_draw)
    f0 = np.empty(n_draw)
    f1 = np.empty(n_draw)
    n = len(X)
    for i in range(n_draw * thin):
        y = engine.total_fit + math.sqrt(engine.sigma2) * rng.standard_normal(n)
        engine.backfit(y, rng)
        engine.draw_sigma2(y, nu, lam, rng)
        if i % thin == thin - 1:
            k = i // thin
            sig[k] = engine.sigma2
            probe = sum(
                tree.nodes[engine.assigns[j][0]].values
                for j, tree in enumerate(engine.trees)
            )
            f0[k] = probe[0]
            f1[k] = probe[1]
    return sig, f0, f1


@_criterion(6, "sampler correctness (Geweke + known-truth recovery)")
def test_criterion_6_sampler_correctness():
    # part A: prior/posterior consistency at tiny scale (n=5, T=2, m=2)
    rng = np.random.default_rng(4)
    X = np.array([[0.1], [0.3], [0.5], [0.7], [0.9]])
    mesh_idx = np.array([0, 1, 0, 1, 0])
    gp = KernelCache(GPConfig(theta=0.9, tau2=0.4, mesh=TargetMesh([1.0, 2.0])))
    prior = TreePrior(alpha=0.7, beta=1.5)
    nu, lam = 5.0, 0.6
    n_draw = 5000
    fwd = _geweke_forward(X, mesh_idx, gp, prior, nu, lam, n_draw, rng)
    suc = _geweke_successive(X, mesh_idx, gp, prior, nu, lam, n_draw, 10, rng)
    for name, a, b in zip(("sigma2", "f(t1)", "f(t2)"), fwd, suc):
        ks = stats.ks_2samp(a, b)
        assert ks.pvalue > 0.01, (name, ks.pvalue)

    # part B: pure-noise recovery (f = 0, sigma = 1, n = 500). A binary
    # covariate keeps every (x, t) cell at ~125 observations; with a
    # continuous covariate the ensemble legitimately localizes noise and
    # a pointwise bound this tight is not a correctness statement.
    rng = np.random.default_rng(4)
    n = 500
    t = rng.choice([1.0, 2.0], n)
    x = rng.integers(0, 2, n).astype(float)
    data = Dataset(
        t=t, x=x.reshape(-1, 1), y_obs=rng.normal(size=n),
        gamma=np.zeros(n, np.int8), mesh=TargetMesh([1.0, 2.0]),
        coarsening_width=0.0,
        schema=(CovariateColumn("x1", "categorical", levels=2),),
    )
    draws = run_mcmc(data, SamplerConfig(seed=204, n_burn=300, n_save=500, m=50),
                     profiles=np.array([[0.0], [1.0]]))
    fbar = draws.f.mean(axis=0)
    assert np.all(np.abs(fbar) <= 0.2), fbar
    assert 0.85 <= draws.sigma2.mean() <= 1.15, draws.sigma2.mean()

    # part C: posterior mean beats (or nearly matches) an oracle kNN
    rng = np.random.default_rng(7)
    n = 600
    t = rng.choice([1.0, 2.0], n).astype(float)
    x = rng.uniform(size=n)
    f_true = np.sin(3.0 * x) + 0.5 * t
    y = f_true + rng.normal(size=n) * 0.3
    data = Dataset(
        t=t, x=x.reshape(-1, 1), y_obs=y,
        gamma=np.zeros(n, np.int8), mesh=TargetMesh([1.0, 2.0]),
        coarsening_width=0.0,
        schema=(CovariateColumn("x1", "continuous"),),
    )
    n_train = 480
    train = data.with_rows(np.arange(n_train))
    test_idx = np.arange(n_train, n)
    test = data.with_rows(test_idx)
    draws = run_mcmc(train, SamplerConfig(seed=8, n_burn=300, n_save=300, m=50),
                     profiles=test.x)
    pred = draws.f.mean(axis=0)[np.arange(test.n), test.mesh_idx]
    rmse_model = float(np.sqrt(np.mean((pred - f_true[test_idx]) ** 2)))
    knn_pred = np.empty(test.n)
    for tv in (1.0, 2.0):
        tr = train.t == tv
        te = test.t == tv
        knn_pred[te] = knn_fit_predict(
            train.x[tr, 0], train.y_obs[tr], test.x[te, 0], 10
        )
    rmse_knn = float(np.sqrt(np.mean((knn_pred - f_true[test_idx]) ** 2)))
    assert rmse_model <= 1.2 * rmse_knn, (rmse_model, rmse_knn)


def _coarsened_fit(seed=9, c=0.5):
    rng = np.random.default_rng(seed)
    n = 200
    t = rng.choice([1.0, 2.0], n)
    x = rng.uniform(size=n)
    y = np.round((x + 0.3 * t + rng.normal(size=n) * 0.4) / c) * c
    data = Dataset(
        t=t, x=x.reshape(-1, 1), y_obs=y,
        gamma=compute_gamma_vector(y, c), mesh=TargetMesh([1.0, 2.0]),
        coarsening_width=c,
        schema=(CovariateColumn("x1", "continuous"),),
    )
    return data


@_criterion(7, "coarsening-bounds invariant")
def test_criterion_7_coarsening_bounds():
    c = 0.5
    data = _coarsened_fit(c=c)
    assert data.gamma.sum() == data.n
    draws = run_mcmc(data, SamplerConfig(seed=10, n_burn=100, n_save=200, m=20),
                     profiles=np.array([[0.5]]))
    y_tilde = data.y_obs[draws.coarse_rows]
    violations = np.sum(np.abs(draws.latent - y_tilde) >= c / 2 + 1e-12)
    assert violations == 0


@_criterion(8, "zero-width coarsening reduces bitwise")
def test_criterion_8_bitwise_reduction():
    base = _coarsened_fit(seed=11)
    plain = Dataset(
        t=base.t, x=base.x, y_obs=base.y_obs,
        gamma=np.zeros(base.n, np.int8), mesh=base.mesh,
        coarsening_width=0.0, schema=base.schema,
    )
    cfg = SamplerConfig(seed=12, n_burn=100, n_save=100, m=20)
    skipped = run_mcmc(base, cfg, profiles=np.array([[0.5]]), skip_imputation=True)
    reduced = run_mcmc(plain, cfg, profiles=np.array([[0.5]]))
    assert skipped.f.tobytes() == reduced.f.tobytes()
    assert skipped.sigma2.tobytes() == reduced.sigma2.tobytes()
