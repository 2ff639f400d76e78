"""Simulation harness: the KNN rounding-error toy study and the
three-scenario monotonicity study.

The scenario names are load-bearing identifiers and intentionally do not
describe the functional forms (the "Arctan" formula is a logistic curve,
"Sigmoid" is linear in t, and atan appears under "Linear"); downstream
results are keyed by these names, so do not "fix" the assignment.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import CovariateColumn, Dataset, TargetMesh
from .errors import DegenerateScaleError
from .projection import project_draws
from .sampler import PosteriorDraws, SamplerConfig, run_mcmc

SCENARIO_NAMES = ("Arctan", "Linear", "Sigmoid")

TOY_X_RANGE = (-6.0, 6.0)
TOY_BETA_PARAMS = (8.0, 2.0)


def scenario_f(name: str, t, x1, x2):
    t = np.asarray(t, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if name == "Arctan":
        return 2.0 + 0.5 * x2 + 1.0 / (1.0 + np.exp(-x1 * (t - 5.0)))
    if name == "Linear":
        return 2.0 + np.arctan(t) + 0.25 * x1 * (t / 5.0) - 0.5 * x2
    if name == "Sigmoid":
        return 2.0 + t / (8.0 * x1) + 0.5 * x2
    raise ValueError(f"unknown scenario {name!r}")


@dataclass(frozen=True)
class SimScenario:
    name: str
    noise_sd: float = 1.0
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.name not in SCENARIO_NAMES and self.name != "Toy":
            raise ValueError(f"unknown scenario {self.name!r}")


_SIM_MESH = TargetMesh(np.arange(1.0, 11.0))
_SIM_SCHEMA = (
    CovariateColumn("x1", "continuous"),
    CovariateColumn("x2", "continuous"),
)


def gen_monotone_dataset(scenario: SimScenario, rng) -> Dataset:
    """n observations y = f(t, x1, x2) + N(0, noise_sd^2), no coarsening."""
    n = scenario.n
    t = rng.integers(1, 11, size=n).astype(float)
    x1 = rng.uniform(0.5, 1.5, size=n)
    x2 = rng.uniform(0.0, 1.0, size=n)
    y = scenario_f(scenario.name, t, x1, x2) + scenario.noise_sd * rng.standard_normal(n)
    return Dataset(
        t=t,
        x=np.column_stack([x1, x2]),
        y_obs=y,
        gamma=np.zeros(n, dtype=np.int8),
        mesh=_SIM_MESH,
        coarsening_width=0.0,
        schema=_SIM_SCHEMA,
    )


@dataclass
class SimResult:
    """Per-replicate out-of-sample MSEs plus per-scenario aggregates."""

    rows: list[dict] = field(default_factory=list)

    def aggregate(self) -> list[dict]:
        out = []
        for name in sorted({r["scenario"] for r in self.rows},
                           key=lambda s: SCENARIO_NAMES.index(s) if s in SCENARIO_NAMES else 99):
            sel = [r for r in self.rows if r["scenario"] == name]
            d = float(np.mean([r["mse_default"] for r in sel]))
            m = float(np.mean([r["mse_monotone"] for r in sel]))
            out.append({
                "scenario": name,
                "mse_default": d,
                "mse_monotone": m,
                "pct_reduction": 100.0 * (d - m) / d,
                "n_replicates": len(sel),
            })
        return out


def _posterior_mean_at_obs(draws: PosteriorDraws, mesh_idx: np.ndarray) -> np.ndarray:
    """Posterior-mean prediction at each test row's own (t, x)."""
    mean = draws.f.mean(axis=0)  # (P, T)
    return mean[np.arange(len(mesh_idx)), mesh_idx]


def _one_replicate(args):
    name, replicate, n, train_frac, base_cfg, seed_entropy = args
    ss = np.random.SeedSequence(seed_entropy)
    data_seed, fit_seed = ss.generate_state(2)
    rng = np.random.default_rng(data_seed)
    scenario = SimScenario(name=name, n=n)
    data = gen_monotone_dataset(scenario, rng)
    n_train = int(round(train_frac * n))
    perm = rng.permutation(n)
    train, test = data.with_rows(perm[:n_train]), data.with_rows(perm[n_train:])

    cfg = replace(base_cfg, seed=int(fit_seed))
    draws = run_mcmc(train, cfg, profiles=test.x)
    pred_default = _posterior_mean_at_obs(draws, test.mesh_idx)
    pred_mono = _posterior_mean_at_obs(project_draws(draws), test.mesh_idx)
    return {
        "scenario": name,
        "replicate": replicate,
        "mse_default": float(np.mean((test.y_obs - pred_default) ** 2)),
        "mse_monotone": float(np.mean((test.y_obs - pred_mono) ** 2)),
    }


def run_monotonicity_study(
    replicates: int = 10,
    n: int = 1000,
    train_frac: float = 0.8,
    sampler_cfg: Optional[SamplerConfig] = None,
    scenarios: Sequence[str] = SCENARIO_NAMES,
    seed: int = 0,
    n_jobs: int = 1,
) -> SimResult:
    """Fit each scenario `replicates` times with an 80/20 train/test split;
    out-of-sample MSE from unprojected vs projected posterior means."""
    if replicates < 1:
        raise ValueError("need at least one replicate")
    base_cfg = sampler_cfg if sampler_cfg is not None else SamplerConfig(
        m=50, n_burn=500, n_save=500)
    jobs = []
    for si, name in enumerate(scenarios):
        for r in range(replicates):
            jobs.append((name, r, n, train_frac, base_cfg, [seed, si, r]))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(_one_replicate, jobs))
    else:
        rows = [_one_replicate(j) for j in jobs]
    return SimResult(rows=rows)


def toy_f(x):
    return 10.0 / (1.0 + np.exp(-np.asarray(x, dtype=float))) - x


def gen_toy_dataset(sigma: float, x_dist, n: int, rng):
    """(x, y, y_rounded) with y ~ N(f(x), sigma^2) and rounding width 1."""
    if sigma <= 0 or n < 1:
        raise ValueError("need sigma > 0 and n >= 1")
    lo, hi = TOY_X_RANGE
    if x_dist == "uniform":
        x = rng.uniform(lo, hi, size=n)
    elif x_dist == "beta" or (isinstance(x_dist, tuple) and x_dist[0] == "beta"):
        a, b = TOY_BETA_PARAMS if x_dist == "beta" else x_dist[1:]
        x = lo + (hi - lo) * rng.beta(a, b, size=n)
    else:
        raise ValueError(f"unknown x distribution {x_dist!r}")
    y = toy_f(x) + sigma * rng.standard_normal(n)
    return x, y, np.rint(y)


def knn_fit_predict(x_train, y_train, x_test, k: int) -> np.ndarray:
    """Mean of the k nearest training responses by |x - x'|; distance ties
    broken by lower training index."""
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    x_test = np.asarray(x_test, dtype=float)
    if x_train.size == 0:
        raise ValueError("empty training set")
    if not (1 <= k <= len(x_train)):
        raise ValueError("need 1 <= k <= n_train")
    dist = np.abs(x_test[:, None] - x_train[None, :])
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return y_train[nearest].mean(axis=1)


def mse_inflation_ratio(f_true, fit_plain, fit_rounded) -> float:
    """MSE-against-truth of the rounded-response fit over that of the
    plain fit, on a shared evaluation grid."""
    f_true = np.asarray(f_true, dtype=float)
    mse_plain = float(np.mean((np.asarray(fit_plain) - f_true) ** 2))
    mse_rounded = float(np.mean((np.asarray(fit_rounded) - f_true) ** 2))
    if mse_plain == 0.0:
        raise DegenerateScaleError("plain-fit MSE is zero")
    return mse_rounded / mse_plain


def run_mse_inflation_study(
    sigmas: Sequence[float] = (0.3, 0.6, 1.0, 2.0, 3.0),
    n_mc: int = 200,
    n: int = 500,
    ks: Sequence[int] = (10, 30),
    x_dists: Sequence = ("uniform", "beta"),
    seed: int = 0,
) -> list[dict]:
    """Mean MSE inflation ratio per (sigma, x distribution, k) cell.

    MSE against the true function is evaluated at the training design
    points themselves, so skewed designs are scored where their data
    actually live rather than on empty regions of the x range."""
    rows = []
    for si, sigma in enumerate(sigmas):
        for di, x_dist in enumerate(x_dists):
            ratios = {k: np.empty(n_mc) for k in ks}
            rng = np.random.default_rng(np.random.SeedSequence([seed, si, di]))
            for draw in range(n_mc):
                x, y, y_rounded = gen_toy_dataset(sigma, x_dist, n, rng)
                truth = toy_f(x)
                for k in ks:
                    fit_plain = knn_fit_predict(x, y, x, k)
                    fit_rounded = knn_fit_predict(x, y_rounded, x, k)
                    ratios[k][draw] = mse_inflation_ratio(truth, fit_plain, fit_rounded)
            for k in ks:
                rows.append({
                    "sigma": float(sigma),
                    "x_dist": x_dist if isinstance(x_dist, str) else "beta",
                    "k": int(k),
                    "mean_ratio": float(ratios[k].mean()),
                    "se_ratio": float(ratios[k].std(ddof=1) / np.sqrt(n_mc)),
                    "n_mc": n_mc,
                })
    return rows
