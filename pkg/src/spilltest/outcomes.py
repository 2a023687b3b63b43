"""Potential-outcome models and observed-outcome realization.

Two outcome sources feed the estimators: fixed potential tables, where each
unit's outcome depends only on its own treatment, and a linear interference
model, where a unit also responds to the treated fraction of its neighborhood.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from ._errors import ValidationError

if TYPE_CHECKING:
    from .graph import Graph
    from .partition import Clustering


@dataclass(frozen=True)
class PotentialTable:
    """Fixed per-unit outcomes ``y1[i]`` under treatment and ``y0[i]`` under control."""

    y1: np.ndarray
    y0: np.ndarray

    def __post_init__(self) -> None:
        y1 = np.asarray(self.y1, dtype=np.float64)
        y0 = np.asarray(self.y0, dtype=np.float64)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)
        if y1.shape != y0.shape or y1.ndim != 1 or y1.size == 0:
            raise ValidationError("y1 and y0 must be equal-length non-empty vectors")
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y0))):
            raise ValidationError("potential outcomes must be finite")
        y1.setflags(write=False)
        y0.setflags(write=False)

    @property
    def num_units(self) -> int:
        return len(self.y1)

    @classmethod
    def constant_effect(cls, y0: np.ndarray, tau: float) -> "PotentialTable":
        y0 = np.asarray(y0, dtype=np.float64)
        return cls(y1=y0 + tau, y0=y0)


@dataclass(frozen=True)
class LinearInterferenceModel:
    """Outcome model ``y_i = alpha + beta * z_i + gamma * r_i + noise``.

    ``r_i`` is the treated fraction of unit i's neighborhood (0 for isolated
    units), so ``gamma`` carries all interference: the model satisfies the
    no-interference assumption exactly when ``gamma == 0``. Noise is i.i.d.
    normal with standard deviation ``noise_sd``.
    """

    alpha: float
    beta: float
    gamma: float
    noise_sd: float
    graph: "Graph"

    def __post_init__(self) -> None:
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be non-negative")
        for name in ("alpha", "beta", "gamma", "noise_sd"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    @property
    def num_units(self) -> int:
        return self.graph.num_units

    def treated_neighbor_fractions(self, z: np.ndarray) -> np.ndarray:
        """Per-unit treated fraction of the neighborhood under assignment ``z``."""
        z = np.asarray(z, dtype=np.float64)
        if len(z) != self.graph.num_units:
            raise ValidationError("assignment length does not match the graph")
        deg = self.graph.degrees
        src = np.repeat(np.arange(self.graph.num_units), deg)
        treated = np.bincount(src, weights=z[self.graph.adjacency_indices], minlength=self.graph.num_units)
        out = np.zeros(self.graph.num_units)
        nz = deg > 0
        out[nz] = treated[nz] / deg[nz]
        return out

    def realized_total_effect(self) -> float:
        """All-treated minus all-control mean outcome on this graph.

        Equals ``beta + gamma`` when no unit is isolated; isolated units
        receive no interference, shrinking the gamma share accordingly.
        """
        non_isolated = float(np.count_nonzero(self.graph.degrees > 0)) / self.graph.num_units
        return self.beta + self.gamma * non_isolated


@dataclass(frozen=True)
class ObservedOutcomes:
    """Realized outcomes, with per-cluster sums when a clustering is attached."""

    y: np.ndarray
    y_plus: np.ndarray | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "y", y)
        y.setflags(write=False)
        if self.y_plus is not None:
            yp = np.asarray(self.y_plus, dtype=np.float64)
            object.__setattr__(self, "y_plus", yp)
            yp.setflags(write=False)


def realize_sutva(
    table: PotentialTable, z: np.ndarray, clustering: "Clustering | None" = None
) -> ObservedOutcomes:
    """Select each unit's outcome by its own treatment: ``z_i ? y1_i : y0_i``."""
    z = np.asarray(z)
    if len(z) != table.num_units:
        raise ValidationError("assignment length does not match the potential table")
    y = np.where(z.astype(bool), table.y1, table.y0)
    y_plus = clustering.cluster_sums(y) if clustering is not None else None
    return ObservedOutcomes(y=y, y_plus=y_plus)


def realize_linear(
    model: LinearInterferenceModel,
    z: np.ndarray,
    seed: int | np.random.SeedSequence | None = 0,
    clustering: "Clustering | None" = None,
) -> ObservedOutcomes:
    """Draw outcomes from the linear interference model; deterministic per seed."""
    z = np.asarray(z, dtype=np.float64)
    fractions = model.treated_neighbor_fractions(z)
    y = model.alpha + model.beta * z + model.gamma * fractions
    if model.noise_sd > 0:
        rng = np.random.default_rng(seed)
        y = y + model.noise_sd * rng.standard_normal(len(y))
    y_plus = clustering.cluster_sums(y) if clustering is not None else None
    return ObservedOutcomes(y=y, y_plus=y_plus)


def total_treatment_effect(source: PotentialTable | LinearInterferenceModel) -> float:
    """All-treated minus all-control mean outcome.

    For a potential table this is ``mean(y1 - y0)``; for the linear model it
    is ``beta + gamma`` (units with neighbors receive full interference when
    everyone is treated). With isolated units the realized value is smaller;
    see :meth:`LinearInterferenceModel.realized_total_effect`.
    """
    if isinstance(source, PotentialTable):
        return float(np.mean(source.y1 - source.y0))
    return source.beta + source.gamma


def save_outcomes(y: np.ndarray, path: str | Path) -> None:
    """Persist observed outcomes as CSV with columns ``unit_id,y``."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "y"])
        for i, value in enumerate(np.asarray(y, dtype=np.float64)):
            writer.writerow([i, repr(float(value))])


def load_outcomes(path: str | Path) -> np.ndarray:
    """Read a ``unit_id,y`` CSV into a dense vector indexed by unit id."""
    path = Path(path)
    rows: dict[int, float] = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"unit_id", "y"}:
            raise ValidationError(f"{path}: expected header unit_id,y")
        for row in reader:
            rows[int(row["unit_id"])] = float(row["y"])
    if not rows:
        raise ValidationError(f"{path}: no outcomes")
    n = max(rows) + 1
    if len(rows) != n:
        missing = sorted(set(range(n)) - set(rows))[:10]
        raise ValidationError(f"{path}: missing outcomes for units {missing}")
    y = np.empty(n, dtype=np.float64)
    for i, value in rows.items():
        y[i] = value
    return y


def save_potential_table(table: PotentialTable, path: str | Path) -> None:
    """Persist a potential table as CSV with columns ``unit_id,y1,y0``."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "y1", "y0"])
        for i in range(table.num_units):
            writer.writerow([i, repr(float(table.y1[i])), repr(float(table.y0[i]))])


def load_potential_table(path: str | Path) -> PotentialTable:
    """Read a ``unit_id,y1,y0`` CSV written by :func:`save_potential_table`."""
    path = Path(path)
    rows: dict[int, tuple[float, float]] = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"unit_id", "y1", "y0"}:
            raise ValidationError(f"{path}: expected header unit_id,y1,y0")
        for row in reader:
            rows[int(row["unit_id"])] = (float(row["y1"]), float(row["y0"]))
    if not rows:
        raise ValidationError(f"{path}: no rows")
    n = max(rows) + 1
    if len(rows) != n:
        raise ValidationError(f"{path}: unit ids are not contiguous from 0")
    y1 = np.empty(n)
    y0 = np.empty(n)
    for i, (a, b) in rows.items():
        y1[i] = a
        y0[i] = b
    return PotentialTable(y1=y1, y0=y0)
