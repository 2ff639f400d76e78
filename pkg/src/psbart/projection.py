"""Monotone projection of posterior draws.

Each draw of f over the mesh (fixed x profile) is replaced by its weighted
L2 projection onto the non-decreasing cone via pooled adjacent violators.
The sampler itself stays unconstrained; projection happens only on the
prediction grid, producing the pseudo-posterior.
"""

from __future__ import annotations

import numpy as np

from .errors import LayoutError
from .sampler import PosteriorDraws


def _pava_lists(values, weights):
    """PAVA on plain Python lists; O(T)."""
    means = []
    wsum = []
    lens = []
    for v, w in zip(values, weights):
        means.append(v)
        wsum.append(w)
        lens.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            w_tot = wsum[-2] + wsum[-1]
            means[-2] = (means[-2] * wsum[-2] + means[-1] * wsum[-1]) / w_tot
            wsum[-2] = w_tot
            lens[-2] += lens[-1]
            means.pop()
            wsum.pop()
            lens.pop()
    out = []
    for m, k in zip(means, lens):
        out.extend([m] * k)
    return out


def pava(values, weights=None) -> np.ndarray:
    """Weighted L2 projection onto {v : v_1 <= ... <= v_T}."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("values must be a nonempty 1-d array")
    if weights is None:
        weights = np.ones_like(values)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != values.shape:
            raise ValueError("weights must match values in length")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
    return np.array(_pava_lists(values.tolist(), weights.tolist()))


def project_draws(draws: PosteriorDraws) -> PosteriorDraws:
    """Apply PAVA independently per draw per x profile (unit weights).
    No smoothing or ordering is imposed across profiles."""
    S, P, T = draws.f.shape
    if T != len(draws.mesh):
        raise LayoutError("draws do not cover the full mesh per profile")
    unit = [1.0] * T
    flat = draws.f.reshape(S * P, T)
    out = np.empty_like(flat)
    for i in range(S * P):
        row = flat[i]
        # fast path: already non-decreasing
        if np.all(row[1:] >= row[:-1]):
            out[i] = row
        else:
            out[i] = _pava_lists(row.tolist(), unit)
    return PosteriorDraws(
        f=out.reshape(S, P, T),
        sigma2=draws.sigma2,
        mesh=draws.mesh,
        profiles=draws.profiles,
        latent=draws.latent,
        coarse_rows=draws.coarse_rows,
        projected=True,
    )
