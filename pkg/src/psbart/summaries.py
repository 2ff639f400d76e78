"""Posterior summaries for applied analysis: centroid profiles, pointwise
credible bands, and flag-covariate contrasts with profile envelopes.

Bands are equal-tailed pointwise quantiles. The contrast sign convention is
flag=1 minus flag=0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import LayoutError
from .sampler import PosteriorDraws


@dataclass(frozen=True)
class Profile:
    x: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))


def centroid_profile(data: Dataset) -> Profile:
    """Per-covariate mean (continuous) or mode with lowest-level tie-break
    (categorical)."""
    if data.n == 0:
        raise ValueError("empty dataset")
    vals = np.empty(data.n_covariates)
    for j, col in enumerate(data.schema):
        if col.kind == "categorical":
            counts = np.bincount(data.x[:, j].astype(int))
            vals[j] = int(np.argmax(counts))  # argmax takes the lowest tie
        else:
            vals[j] = float(np.mean(data.x[:, j]))
    return Profile(x=vals, label="centroid")


def toggled_pair(profile: Profile, flag_covariate: int) -> tuple[Profile, Profile]:
    """The profile with the flag covariate forced to 0 and to 1."""
    x0 = np.array(profile.x)
    x1 = np.array(profile.x)
    x0[flag_covariate] = 0.0
    x1[flag_covariate] = 1.0
    return (
        Profile(x0, label=f"{profile.label}_flag0"),
        Profile(x1, label=f"{profile.label}_flag1"),
    )


def find_profile(draws: PosteriorDraws, x: np.ndarray) -> int:
    match = np.all(np.isclose(draws.profiles, np.asarray(x, dtype=float),
                              rtol=1e-12, atol=1e-12), axis=1)
    idx = np.flatnonzero(match)
    if idx.size == 0:
        raise LayoutError("requested profile is not on the prediction grid")
    return int(idx[0])


@dataclass
class ContrastResult:
    mesh: np.ndarray
    mean: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    delta_draws: np.ndarray  # (n_save, T)


def contrast(draws: PosteriorDraws, flag_covariate: int,
             base_profile: Profile) -> ContrastResult:
    """Per-draw difference f(t, flag=1, v) - f(t, flag=0, v), summarized
    pointwise over the mesh."""
    p0, p1 = toggled_pair(base_profile, flag_covariate)
    i0 = find_profile(draws, p0.x)
    i1 = find_profile(draws, p1.x)
    delta = draws.f[:, i1, :] - draws.f[:, i0, :]
    return ContrastResult(
        mesh=draws.mesh,
        mean=delta.mean(axis=0),
        q025=np.quantile(delta, 0.025, axis=0),
        q975=np.quantile(delta, 0.975, axis=0),
        delta_draws=delta,
    )


def envelope(draws: PosteriorDraws, flag_covariate: int,
             profiles) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise (min, max) over profiles of the posterior-mean contrast."""
    profiles = list(profiles)
    if not profiles:
        raise LayoutError("envelope needs at least one profile")
    means = np.stack([
        contrast(draws, flag_covariate, p).mean for p in profiles
    ])
    return means.min(axis=0), means.max(axis=0)


def curve_summary(draws: PosteriorDraws, profile_index: int) -> dict:
    """Pointwise mean and 95% band for f at one profile."""
    f = draws.f[:, profile_index, :]
    return {
        "t": draws.mesh,
        "mean": f.mean(axis=0),
        "q025": np.quantile(f, 0.025, axis=0),
        "q975": np.quantile(f, 0.975, axis=0),
    }


def prediction_band(draws: PosteriorDraws, profile_index: int, rng) -> dict:
    """Pointwise 95% posterior prediction band (adds observation noise)."""
    f = draws.f[:, profile_index, :]
    y = f + np.sqrt(draws.sigma2)[:, None] * rng.standard_normal(f.shape)
    return {
        "t": draws.mesh,
        "mean": f.mean(axis=0),
        "q025": np.quantile(y, 0.025, axis=0),
        "q975": np.quantile(y, 0.975, axis=0),
    }
