"""Balanced graph clustering, clustering quality metrics, and stratification.

The clusterer is a restreaming linear deterministic greedy: units stream in a
seed-shuffled order and each one joins the cluster holding most of its
neighbors, discounted by how full that cluster already is. Later passes
restream units against the standing assignment, which monotonically tightens
the partition in practice.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from ._errors import InfeasibleError, ValidationError

if TYPE_CHECKING:
    from .graph import Graph


@dataclass(frozen=True)
class Clustering:
    """Surjective map of units onto clusters ``0..M-1``, every cluster non-empty."""

    num_clusters: int
    assignment: np.ndarray
    sizes: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        if self.num_clusters < 1:
            raise ValidationError("clustering needs at least one cluster")
        if np.any(self.sizes <= 0):
            raise ValidationError("every cluster must be non-empty")
        if int(self.sizes.sum()) != len(self.assignment):
            raise ValidationError("cluster sizes do not sum to the unit count")
        self.assignment.setflags(write=False)
        self.sizes.setflags(write=False)

    @classmethod
    def from_assignment(cls, assignment: np.ndarray | list[int]) -> "Clustering":
        arr = np.asarray(assignment, dtype=np.int64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("assignment must be a non-empty 1-d array")
        if arr.min() < 0:
            raise ValidationError("negative cluster id")
        m = int(arr.max()) + 1
        sizes = np.bincount(arr, minlength=m).astype(np.int64)
        return cls(num_clusters=m, assignment=arr, sizes=sizes)

    @property
    def num_units(self) -> int:
        return len(self.assignment)

    @property
    def is_balanced(self) -> bool:
        return bool(np.all(self.sizes == self.sizes[0]))

    def members(self, cluster_id: int) -> np.ndarray:
        if not 0 <= cluster_id < self.num_clusters:
            raise ValidationError(f"cluster id {cluster_id} out of range")
        return np.flatnonzero(self.assignment == cluster_id)

    def cluster_sums(self, values: np.ndarray) -> np.ndarray:
        """Per-cluster sums of a unit-level vector."""
        values = np.asarray(values, dtype=np.float64)
        if len(values) != self.num_units:
            raise ValidationError("value vector length does not match unit count")
        return np.bincount(self.assignment, weights=values, minlength=self.num_clusters)


@dataclass(frozen=True)
class ClusteringMetrics:
    """Quality summary of a clustering against a graph."""

    rho_c: float
    internal_edge_fraction: float
    balance_ratio: float
    isolated_units: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class Stratification:
    """Map of clusters onto strata; every stratum holds at least two clusters."""

    num_strata: int
    stratum_of: np.ndarray
    strata_sizes: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        if np.any(self.strata_sizes < 2):
            raise ValidationError("every stratum needs at least two clusters")
        if int(self.strata_sizes.sum()) != len(self.stratum_of):
            raise ValidationError("strata sizes do not sum to the cluster count")
        self.stratum_of.setflags(write=False)
        self.strata_sizes.setflags(write=False)

    def clusters_in(self, stratum: int) -> np.ndarray:
        return np.flatnonzero(self.stratum_of == stratum)


@dataclass(frozen=True)
class ClusterFeatures:
    """Per-cluster descriptors used for stratification."""

    internal_edges: np.ndarray
    boundary_edges: np.ndarray
    covariates: np.ndarray  # shape (M, k); may have zero columns

    def matrix(self) -> np.ndarray:
        cols = [self.internal_edges.astype(np.float64), self.boundary_edges.astype(np.float64)]
        if self.covariates.size:
            cols.extend(self.covariates.T.astype(np.float64))
        return np.column_stack(cols)


def ldg_restream(
    graph: "Graph",
    num_clusters: int,
    leniency: float = 0.0,
    iterations: int = 1,
    seed: int | None = 0,
) -> Clustering:
    """Partition a graph into size-capped clusters by restreaming greedy passes.

    Each pass visits units in a fresh seed-shuffled order. A unit scores every
    cluster as ``(neighbors already in the cluster) * (1 - size / capacity)``
    and joins the best non-full one, lowest cluster id on ties, where
    ``capacity = ceil((N / num_clusters) * (1 + leniency))``. Passes after the
    first pull each unit out of its standing cluster and re-place it against
    the current state of the partition.

    Deterministic given ``seed``.
    """
    n = graph.num_units
    m = num_clusters
    if m < 1:
        raise ValidationError("need at least one cluster")
    if m > n:
        raise ValidationError(f"cannot build {m} non-empty clusters from {n} units")
    if leniency < 0:
        raise ValidationError("leniency must be non-negative")
    if iterations < 1:
        raise ValidationError("need at least one streaming pass")
    capacity = math.ceil((n / m) * (1.0 + leniency))
    if capacity * m < n:
        raise InfeasibleError(f"capacity {capacity} x {m} clusters cannot hold {n} units")

    rng = np.random.default_rng(seed)
    # Each pass refills capacity from zero; a unit's neighbors count under
    # their placement from this pass if already streamed, else under the
    # previous pass's assignment.
    previous = np.full(n, -1, dtype=np.int64)
    assignment = np.full(n, -1, dtype=np.int64)
    fill_penalty = np.empty(m, dtype=np.float64)

    for _ in range(iterations):
        assignment.fill(-1)
        sizes = np.zeros(m, dtype=np.int64)
        order = rng.permutation(n)
        for i in order:
            nbrs = graph.neighbors(i)
            nbr_clusters = np.where(assignment[nbrs] >= 0, assignment[nbrs], previous[nbrs])
            counts = np.bincount(nbr_clusters[nbr_clusters >= 0], minlength=m)
            np.multiply(sizes, -1.0 / capacity, out=fill_penalty)
            fill_penalty += 1.0
            scores = counts * fill_penalty
            scores[sizes >= capacity] = -np.inf
            best = int(np.argmax(scores))
            assignment[i] = best
            sizes[best] += 1
        previous, assignment = assignment, previous
    assignment = previous
    sizes = np.bincount(assignment, minlength=m).astype(np.int64)

    # Greedy passes can leave clusters empty on degenerate inputs; park one
    # spare unit in each empty cluster so the Clustering invariant holds.
    for c in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))
        moved = int(np.flatnonzero(assignment == donor)[0])
        assignment[moved] = c
        sizes[donor] -= 1
        sizes[c] += 1
    return Clustering(num_clusters=m, assignment=assignment, sizes=sizes)


def rebalance(graph: "Graph", clustering: Clustering) -> Clustering:
    """Force exactly equal cluster sizes by relocating weakly attached units.

    Requires ``N % M == 0``. Repeatedly takes, from an oversized cluster, the
    unit with the fewest neighbors inside it (lowest unit id on ties) and
    moves it to the undersized cluster where it has the most neighbors
    (lowest cluster id on ties). The analysis stage requires the resulting
    exact balance.
    """
    n = clustering.num_units
    m = clustering.num_clusters
    if n % m != 0:
        raise ValidationError(f"cannot balance {n} units over {m} clusters exactly")
    target = n // m
    assignment = clustering.assignment.copy()
    sizes = clustering.sizes.copy()
    while True:
        over = np.flatnonzero(sizes > target)
        if len(over) == 0:
            break
        under = np.flatnonzero(sizes < target)
        best_unit = -1
        best_conn = None
        for c in over:
            for i in np.flatnonzero(assignment == c):
                conn = int(np.count_nonzero(assignment[graph.neighbors(int(i))] == c))
                if best_conn is None or conn < best_conn or (conn == best_conn and i < best_unit):
                    best_conn = conn
                    best_unit = int(i)
        nbr_clusters = assignment[graph.neighbors(best_unit)]
        gains = np.bincount(nbr_clusters, minlength=m)[under]
        dest = int(under[np.argmax(gains)])
        sizes[assignment[best_unit]] -= 1
        assignment[best_unit] = dest
        sizes[dest] += 1
    return Clustering(num_clusters=m, assignment=assignment, sizes=sizes)


def clustering_metrics(graph: "Graph", clustering: Clustering) -> ClusteringMetrics:
    """Compute quality metrics of a clustering on its graph."""
    from .graph import neighborhood_fractions

    if clustering.num_units != graph.num_units:
        raise ValidationError("clustering does not cover the graph")
    fracs = neighborhood_fractions(graph, clustering)
    assignment = clustering.assignment
    src = np.repeat(np.arange(graph.num_units), graph.degrees)
    dst = graph.adjacency_indices
    total = len(dst) // 2
    internal = int(np.count_nonzero(assignment[src] == assignment[dst])) // 2
    return ClusteringMetrics(
        rho_c=float(fracs.mean()),
        internal_edge_fraction=(internal / total) if total else 0.0,
        balance_ratio=float(clustering.sizes.max() / clustering.sizes.min()),
        isolated_units=int(np.count_nonzero(graph.degrees == 0)),
    )


def design_score(metrics: ClusteringMetrics, sigma_hat_sq: float) -> float:
    """Power heuristic for comparing clusterings: ``rho_c / sqrt(sigma_hat_sq)``.

    Larger is better; tighter clusters raise ``rho_c`` while the variance
    bound of the resulting design enters through ``sigma_hat_sq``.
    """
    if sigma_hat_sq <= 0:
        raise ValidationError("variance bound must be positive")
    return metrics.rho_c / math.sqrt(sigma_hat_sq)


def cluster_features(
    graph: "Graph", clustering: Clustering, covariates: np.ndarray | None = None
) -> ClusterFeatures:
    """Edge-count features per cluster, plus optional user covariate columns."""
    m = clustering.num_clusters
    assignment = clustering.assignment
    src = np.repeat(np.arange(graph.num_units), graph.degrees)
    dst = graph.adjacency_indices
    same = assignment[src] == assignment[dst]
    internal = np.bincount(assignment[src[same]], minlength=m) // 2
    boundary = np.bincount(assignment[src[~same]], minlength=m)
    if covariates is None:
        cov = np.empty((m, 0))
    else:
        cov = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
        if cov.shape[0] != m:
            cov = cov.T
        if cov.shape[0] != m:
            raise ValidationError("covariates must have one row per cluster")
        if not np.all(np.isfinite(cov)):
            raise ValidationError("covariates must be finite")
    return ClusterFeatures(
        internal_edges=internal.astype(np.int64),
        boundary_edges=boundary.astype(np.int64),
        covariates=cov,
    )


def stratify_clusters(features: ClusterFeatures, num_strata: int, seed: int | None = 0) -> Stratification:
    """Group clusters into strata of near-equal, preferably even, sizes.

    Clusters are ranked by a composite covariate (the sum of z-scored feature
    columns) and chunked into ``num_strata`` contiguous blocks. Block sizes
    start at ``M // L`` with remainders spread from the first stratum, then
    single clusters shift between adjacent strata to make sizes even where
    possible. Ties in the composite break in seed-shuffled order.
    """
    mat = features.matrix()
    m = mat.shape[0]
    if num_strata < 1:
        raise ValidationError("need at least one stratum")
    if m < 2 * num_strata:
        raise ValidationError(f"{m} clusters cannot fill {num_strata} strata of >= 2")
    sd = mat.std(axis=0)
    sd[sd == 0] = 1.0
    composite = ((mat - mat.mean(axis=0)) / sd).sum(axis=1)

    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(m)
    order = shuffled[np.argsort(composite[shuffled], kind="stable")]

    base, rem = divmod(m, num_strata)
    sizes = np.full(num_strata, base, dtype=np.int64)
    sizes[:rem] += 1
    for s in range(num_strata - 1):
        if sizes[s] % 2 == 1 and sizes[s + 1] - 1 >= 2:
            sizes[s] += 1
            sizes[s + 1] -= 1

    stratum_of = np.empty(m, dtype=np.int64)
    start = 0
    for s, size in enumerate(sizes):
        stratum_of[order[start : start + size]] = s
        start += size
    return Stratification(num_strata=num_strata, stratum_of=stratum_of, strata_sizes=sizes)


def subsample_clusters(clustering: Clustering, fraction: float, seed: int | None = 0) -> np.ndarray:
    """Pick a uniformly random subset of ``round(fraction * M)`` cluster ids.

    Subsampling happens at the cluster level, before any arm assignment, so
    the surviving clusters keep their interference structure intact.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction {fraction} not in (0, 1]")
    m = clustering.num_clusters
    count = round(fraction * m)
    if count < 2:
        raise ValidationError(f"subsample of {count} clusters is too small to randomize")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(m, size=count, replace=False))


def save_clustering(clustering: Clustering, path: str | Path) -> None:
    """Persist as CSV with columns ``unit_id,cluster_id``."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "cluster_id"])
        for i, c in enumerate(clustering.assignment):
            writer.writerow([i, int(c)])


def load_clustering(path: str | Path) -> Clustering:
    """Read a ``unit_id,cluster_id`` CSV written by :func:`save_clustering`."""
    path = Path(path)
    rows: dict[int, int] = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"unit_id", "cluster_id"}:
            raise ValidationError(f"{path}: expected header unit_id,cluster_id")
        for row in reader:
            unit = int(row["unit_id"])
            if unit in rows:
                raise ValidationError(f"{path}: duplicate unit_id {unit}")
            rows[unit] = int(row["cluster_id"])
    if not rows:
        raise ValidationError(f"{path}: empty clustering")
    n = max(rows) + 1
    if len(rows) != n:
        raise ValidationError(f"{path}: unit ids are not contiguous from 0")
    assignment = np.empty(n, dtype=np.int64)
    for unit, c in rows.items():
        assignment[unit] = c
    return Clustering.from_assignment(assignment)


def save_stratification(strat: Stratification, path: str | Path) -> None:
    """Persist as CSV with columns ``cluster_id,stratum_id``."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", "stratum_id"])
        for c, s in enumerate(strat.stratum_of):
            writer.writerow([c, int(s)])


def load_stratification(path: str | Path) -> Stratification:
    """Read a ``cluster_id,stratum_id`` CSV written by :func:`save_stratification`."""
    path = Path(path)
    rows: dict[int, int] = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"cluster_id", "stratum_id"}:
            raise ValidationError(f"{path}: expected header cluster_id,stratum_id")
        for row in reader:
            rows[int(row["cluster_id"])] = int(row["stratum_id"])
    if not rows:
        raise ValidationError(f"{path}: empty stratification")
    m = max(rows) + 1
    if len(rows) != m:
        raise ValidationError(f"{path}: cluster ids are not contiguous from 0")
    stratum_of = np.empty(m, dtype=np.int64)
    for c, s in rows.items():
        stratum_of[c] = s
    num_strata = int(stratum_of.max()) + 1
    sizes = np.bincount(stratum_of, minlength=num_strata).astype(np.int64)
    return Stratification(num_strata=num_strata, stratum_of=stratum_of, strata_sizes=sizes)
