"""Draw-file and manifest serialization.

Draw matrices are flat little-endian float64 with a JSON sidecar giving
dimensions and grid layout; this keeps outputs language-neutral and
bit-exact across runs with the same seed.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import IntegrityError
from .sampler import PosteriorDraws

DRAWS_BIN = "draws.f64"
SIGMA2_BIN = "sigma2.f64"
LATENT_BIN = "latent.f64"
SIDECAR = "draws.json"
MANIFEST = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_f64(path, arr: np.ndarray) -> None:
    np.ascontiguousarray(arr, dtype="<f8").tofile(path)


def write_draws(out_dir, draws: PosteriorDraws, profile_labels,
                covariate_names, config: dict, seed: int) -> dict:
    """Write draw matrices plus sidecar; returns name -> digest map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_f64(out / DRAWS_BIN, draws.f)
    _write_f64(out / SIGMA2_BIN, draws.sigma2)
    files = [DRAWS_BIN, SIGMA2_BIN]
    if draws.latent is not None:
        _write_f64(out / LATENT_BIN, draws.latent)
        files.append(LATENT_BIN)
    sidecar = {
        "f_shape": list(draws.f.shape),
        "order": ["draw", "profile", "mesh"],
        "dtype": "<f8",
        "mesh": draws.mesh.tolist(),
        "profiles": draws.profiles.tolist(),
        "profile_labels": list(profile_labels),
        "covariates": list(covariate_names),
        "projected": bool(draws.projected),
        "coarse_rows": draws.coarse_rows.tolist() if draws.coarse_rows is not None else None,
        "seed": int(seed),
        "config": config,
    }
    with open(out / SIDECAR, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    files.append(SIDECAR)
    return {name: sha256_file(out / name) for name in files}


def read_draws(fit_dir) -> tuple[PosteriorDraws, dict]:
    """Load draws written by write_draws; verifies manifest digests."""
    fit = Path(fit_dir)
    with open(fit / SIDECAR) as fh:
        sidecar = json.load(fh)
    manifest_path = fit / MANIFEST
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        for name, digest in manifest.get("outputs", {}).items():
            target = fit / name
            if not target.exists() or sha256_file(target) != digest:
                raise IntegrityError(f"{name} does not match its manifest digest")
    S, P, T = sidecar["f_shape"]
    f = np.fromfile(fit / DRAWS_BIN, dtype="<f8").reshape(S, P, T)
    sigma2 = np.fromfile(fit / SIGMA2_BIN, dtype="<f8")
    if len(sigma2) != S:
        raise IntegrityError("sigma2 draw count does not match sidecar")
    latent = None
    coarse_rows = None
    if sidecar.get("coarse_rows"):
        coarse_rows = np.asarray(sidecar["coarse_rows"], dtype=np.int64)
        latent_path = fit / LATENT_BIN
        if latent_path.exists():
            latent = np.fromfile(latent_path, dtype="<f8").reshape(S, len(coarse_rows))
    draws = PosteriorDraws(
        f=f,
        sigma2=sigma2,
        mesh=np.asarray(sidecar["mesh"], dtype=float),
        profiles=np.asarray(sidecar["profiles"], dtype=float),
        latent=latent,
        coarse_rows=coarse_rows,
        projected=bool(sidecar["projected"]),
    )
    return draws, sidecar


def write_manifest(out_dir, command: str, config: dict, seed: int,
                   inputs: dict, outputs: dict) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": int(seed),
        "version": __version__,
        "inputs": inputs,
        "outputs": outputs,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    with open(Path(out_dir) / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
