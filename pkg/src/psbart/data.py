"""Core domain types and dataset ingestion.

Observations are stored column-wise (numpy arrays) for speed; the
row-wise `Observation` view is generated on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DegenerateScaleError,
    MeshError,
    ParseError,
    SchemaError,
)

# Responses are snapped to a sub-grid of c/GRID_SUBDIV before the
# divisibility test; floating "mod c" is ill-posed in binary arithmetic.
GRID_SUBDIV = 1000
SNAP_RELTOL = 1e-9


@dataclass(frozen=True)
class TargetMesh:
    """Ordered distinct points of the target covariate."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise MeshError("mesh needs at least 2 points")
        if np.any(np.diff(vals) <= 0):
            raise MeshError("mesh values must be strictly increasing")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def index_of(self, t) -> np.ndarray:
        """Map t values to mesh indices; raises MeshError for off-mesh points."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pos = np.searchsorted(self.values, t)
        pos = np.clip(pos, 0, len(self.values) - 1)
        left = np.clip(pos - 1, 0, None)
        use_left = np.abs(self.values[left] - t) < np.abs(self.values[pos] - t)
        idx = np.where(use_left, left, pos)
        tol = 1e-8 * max(1.0, float(np.max(np.abs(self.values))))
        bad = np.abs(self.values[idx] - t) > tol
        if np.any(bad):
            raise MeshError(f"t value {t[bad][0]!r} not on the mesh")
        return idx


@dataclass(frozen=True)
class Observation:
    t: float
    x: np.ndarray
    y_obs: float
    gamma: int


@dataclass(frozen=True)
class CovariateColumn:
    name: str
    kind: str  # "continuous" | "categorical"
    levels: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise SchemaError(f"unknown covariate kind {self.kind!r}")


def compute_gamma(y_obs: float, c: float) -> int:
    """1 iff y_obs lies on the c-spaced grid, via integer snapping."""
    if c <= 0:
        raise ValueError("coarsening width must be positive")
    unit = c / GRID_SUBDIV
    ratio = y_obs / unit
    snapped = np.rint(ratio)
    if abs(y_obs - snapped * unit) > SNAP_RELTOL * c:
        return 0  # not even on the fine grid
    return int(int(snapped) % GRID_SUBDIV == 0)


def compute_gamma_vector(y_obs: np.ndarray, c: float) -> np.ndarray:
    if c <= 0:
        raise ValueError("coarsening width must be positive")
    y_obs = np.asarray(y_obs, dtype=float)
    unit = c / GRID_SUBDIV
    snapped = np.rint(y_obs / unit)
    on_fine = np.abs(y_obs - snapped * unit) <= SNAP_RELTOL * c
    return (on_fine & (snapped.astype(np.int64) % GRID_SUBDIV == 0)).astype(np.int8)


@dataclass(frozen=True)
class Dataset:
    """Immutable columnar dataset; safe to share across workers."""

    t: np.ndarray
    x: np.ndarray  # (n, p)
    y_obs: np.ndarray
    gamma: np.ndarray
    mesh: TargetMesh
    coarsening_width: float
    schema: tuple[CovariateColumn, ...]
    mesh_idx: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=float)
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y_obs, dtype=float)
        g = np.ascontiguousarray(self.gamma, dtype=np.int8)
        if x.ndim != 2 or len({len(t), len(x), len(y), len(g)}) != 1:
            raise SchemaError("inconsistent column lengths")
        if x.shape[1] != len(self.schema):
            raise SchemaError("covariate matrix width does not match schema")
        if self.coarsening_width < 0:
            raise SchemaError("coarsening width must be >= 0")
        idx = self.mesh.index_of(t)
        for arr in (t, x, y, g, idx):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y_obs", y)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "mesh_idx", idx)
        object.__setattr__(self, "schema", tuple(self.schema))

    @property
    def n(self) -> int:
        return len(self.y_obs)

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    @property
    def observations(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                t=float(self.t[i]),
                x=self.x[i],
                y_obs=float(self.y_obs[i]),
                gamma=int(self.gamma[i]),
            )

    def covariate_index(self, name: str) -> int:
        for j, col in enumerate(self.schema):
            if col.name == name:
                return j
        raise SchemaError(f"no covariate named {name!r}")

    def with_rows(self, row_idx: np.ndarray) -> "Dataset":
        return Dataset(
            t=self.t[row_idx],
            x=self.x[row_idx],
            y_obs=self.y_obs[row_idx],
            gamma=self.gamma[row_idx],
            mesh=self.mesh,
            coarsening_width=self.coarsening_width,
            schema=self.schema,
        )

    def with_response(self, y_new: np.ndarray) -> "Dataset":
        return Dataset(
            t=self.t,
            x=self.x,
            y_obs=y_new,
            gamma=self.gamma,
            mesh=self.mesh,
            coarsening_width=self.coarsening_width,
            schema=self.schema,
        )


@dataclass(frozen=True)
class Standardization:
    """Affine response map y -> (y - center) / scale."""

    center: float
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise DegenerateScaleError("standardization scale must be positive")

    def apply(self, y):
        return (np.asarray(y, dtype=float) - self.center) / self.scale

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.center


def standardize_response(data: Dataset) -> tuple[Dataset, Standardization]:
    """Map responses so the sample spans [-0.5, 0.5]."""
    if data.n < 2:
        raise DegenerateScaleError("need at least 2 observations to standardize")
    lo, hi = float(np.min(data.y_obs)), float(np.max(data.y_obs))
    if hi <= lo:
        raise DegenerateScaleError("constant response vector")
    std = Standardization(center=(lo + hi) / 2.0, scale=hi - lo)
    return data.with_response(std.apply(data.y_obs)), std


@dataclass
class IngestionConfig:
    t_column: str
    response_column: str
    covariate_columns: list[str]
    coarsening_width: float
    categorical_columns: list[str] = field(default_factory=list)
    mesh: Optional[Sequence[float]] = None
    delimiter: str = ","

    @classmethod
    def from_file(cls, path) -> "IngestionConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {
            "t_column", "response_column", "covariate_columns",
            "coarsening_width", "categorical_columns", "mesh", "delimiter",
        }
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"unknown ingestion config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise SchemaError(f"bad ingestion config: {exc}") from exc


def load_dataset(path, config: IngestionConfig) -> Dataset:
    """Read a delimited text file with header row into a Dataset."""
    frame = pd.read_csv(path, sep=config.delimiter)
    needed = [config.t_column, config.response_column] + list(config.covariate_columns)
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing columns: {missing}")

    y = pd.to_numeric(frame[config.response_column], errors="coerce").to_numpy(float)
    if np.any(np.isnan(y)):
        row = int(np.flatnonzero(np.isnan(y))[0])
        raise ParseError(f"non-numeric response at row {row}")
    t = pd.to_numeric(frame[config.t_column], errors="coerce").to_numpy(float)
    if np.any(np.isnan(t)):
        row = int(np.flatnonzero(np.isnan(t))[0])
        raise ParseError(f"non-numeric t value at row {row}")

    schema: list[CovariateColumn] = []
    cols: list[np.ndarray] = []
    for name in config.covariate_columns:
        series = frame[name]
        if series.isna().any():
            row = int(np.flatnonzero(series.isna().to_numpy())[0])
            raise ParseError(f"missing covariate {name!r} at row {row}")
        if name in config.categorical_columns:
            levels = sorted(series.unique().tolist())
            codes = series.map({v: i for i, v in enumerate(levels)}).to_numpy(float)
            schema.append(CovariateColumn(name, "categorical", levels=len(levels)))
            cols.append(codes)
        else:
            vals = pd.to_numeric(series, errors="coerce").to_numpy(float)
            if np.any(np.isnan(vals)):
                row = int(np.flatnonzero(np.isnan(vals))[0])
                raise ParseError(f"non-numeric covariate {name!r} at row {row}")
            schema.append(CovariateColumn(name, "continuous"))
            cols.append(vals)

    mesh = TargetMesh(np.asarray(config.mesh, float)) if config.mesh is not None \
        else TargetMesh(np.unique(t))
    c = float(config.coarsening_width)
    gamma = compute_gamma_vector(y, c) if c > 0 else np.zeros(len(y), np.int8)
    return Dataset(
        t=t,
        x=np.column_stack(cols) if cols else np.empty((len(y), 0)),
        y_obs=y,
        gamma=gamma,
        mesh=mesh,
        coarsening_width=c,
        schema=tuple(schema),
    )
