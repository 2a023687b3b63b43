"""Immutable undirected graphs, block-model generation, and neighborhood queries.

The graph is the substrate every other module reads: unit ids are dense
integers ``0..N-1``, adjacency is stored in compressed sparse row form with
sorted neighbor lists so that iteration order is deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator

import numpy as np

from ._errors import ParseError, ValidationError

if TYPE_CHECKING:
    from scipy.sparse import csr_array

    from .partition import Clustering

# Refuse to enumerate unit pairs past this point; block-model generation is
# quadratic in the number of units.
_MAX_PAIRS = 500_000_000

_HEADER_RE = re.compile(r"^N\s*=\s*(\d+)$")


class Graph:
    """Undirected simple graph: no self-loops, no parallel edges, symmetric.

    Instances are immutable after construction and safe to share across
    concurrent workers. Build one with :meth:`from_edges` or
    :func:`load_edge_list`.
    """

    __slots__ = ("_indptr", "_indices", "_sparse")

    def __init__(self, indptr: np.ndarray, indices: np.ndarray):
        # Internal constructor: callers are expected to pass validated CSR
        # arrays (sorted, symmetric, simple). Use from_edges() instead.
        self._indptr = indptr
        self._indices = indices
        self._sparse = None
        indptr.setflags(write=False)
        indices.setflags(write=False)

    @classmethod
    def from_edges(cls, num_units: int, edges: Iterable[tuple[int, int]] | np.ndarray) -> "Graph":
        """Build a graph from an edge list, deduplicating and symmetrizing.

        Args:
            num_units: Number of units N; all ids must lie in ``[0, N)``.
            edges: Iterable of ``(i, j)`` pairs or an ``(E, 2)`` integer array.

        Raises:
            ValidationError: On N < 1, out-of-range ids, or self-loops.
        """
        if num_units < 1:
            raise ValidationError(f"graph needs at least one unit, got N={num_units}")
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValidationError("edges must be pairs of unit ids")
        if arr.size and arr.min() < 0:
            raise ValidationError("negative unit id in edge list")
        if arr.size and arr.max() >= num_units:
            raise ValidationError(f"unit id {int(arr.max())} out of range for N={num_units}")
        if arr.size and np.any(arr[:, 0] == arr[:, 1]):
            bad = int(arr[arr[:, 0] == arr[:, 1]][0, 0])
            raise ValidationError(f"self-loop on unit {bad}")
        return cls._from_valid_pairs(num_units, arr)

    @classmethod
    def _from_valid_pairs(cls, num_units: int, arr: np.ndarray) -> "Graph":
        # Symmetrize, deduplicate, and pack into CSR with sorted rows.
        if arr.size:
            both = np.concatenate([arr, arr[:, ::-1]])
            keys = both[:, 0] * num_units + both[:, 1]
            keys = np.unique(keys)
            src = keys // num_units
            dst = keys % num_units
        else:
            src = dst = np.empty(0, dtype=np.int64)
        counts = np.bincount(src, minlength=num_units)
        indptr = np.zeros(num_units + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(indptr, dst)

    @property
    def num_units(self) -> int:
        return len(self._indptr) - 1

    @property
    def num_edges(self) -> int:
        return len(self._indices) // 2

    def neighbors(self, i: int) -> np.ndarray:
        """Sorted neighbor ids of unit ``i`` (read-only view)."""
        if not 0 <= i < self.num_units:
            raise ValidationError(f"unit id {i} out of range for N={self.num_units}")
        return self._indices[self._indptr[i] : self._indptr[i + 1]]

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self._indptr)

    @property
    def adjacency_indptr(self) -> np.ndarray:
        return self._indptr

    @property
    def adjacency_indices(self) -> np.ndarray:
        return self._indices

    def edges(self) -> Iterator[tuple[int, int]]:
        """Undirected edges as ``(i, j)`` with ``i < j``, in sorted order."""
        for i in range(self.num_units):
            for j in self.neighbors(i):
                if i < j:
                    yield (i, int(j))

    def edge_array(self) -> np.ndarray:
        """All undirected edges as an ``(E, 2)`` array with ``i < j`` rows."""
        src = np.repeat(np.arange(self.num_units), self.degrees)
        mask = src < self._indices
        return np.column_stack([src[mask], self._indices[mask]])

    def to_sparse(self) -> "csr_array":
        """Adjacency as a scipy CSR array (cached; treat as read-only).

        Requires scipy (the ``sparse`` extra); everything else in this
        package runs on numpy alone.
        """
        if self._sparse is None:
            from scipy.sparse import csr_array

            data = np.ones(len(self._indices), dtype=np.float64)
            self._sparse = csr_array(
                (data, self._indices.copy(), self._indptr.copy()),
                shape=(self.num_units, self.num_units),
            )
        return self._sparse

    def __repr__(self) -> str:
        return f"Graph(num_units={self.num_units}, num_edges={self.num_edges})"


@dataclass(frozen=True)
class SbmSpec:
    """Parameters of a balanced stochastic block model.

    ``num_blocks * block_size`` units are split into equal blocks; each
    unordered pair is an edge independently with probability ``p_intra``
    inside a block and ``p_inter`` across blocks.
    """

    num_blocks: int
    block_size: int
    p_intra: float
    p_inter: float
    seed: int

    def __post_init__(self) -> None:
        if self.num_blocks < 1 or self.block_size < 1:
            raise ValidationError("num_blocks and block_size must be positive")
        for name in ("p_intra", "p_inter"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name}={p} is not a probability")

    @property
    def num_units(self) -> int:
        return self.num_blocks * self.block_size

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SbmSpec":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid block-model spec JSON: {exc}") from exc
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ValidationError(f"bad block-model spec fields: {exc}") from exc


def generate_sbm(spec: SbmSpec) -> tuple[Graph, "Clustering"]:
    """Sample a stochastic block model and its ground-truth block clustering.

    Deterministic given ``spec.seed``. Returns the graph together with the
    block map as a :class:`~spilltest.partition.Clustering`.
    """
    from .partition import Clustering

    n = spec.num_units
    if n * (n - 1) // 2 > _MAX_PAIRS:
        raise ValidationError(f"refusing to enumerate {n * (n - 1) // 2} unit pairs (N={n})")
    rng = np.random.default_rng(spec.seed)
    s = spec.block_size
    chunks: list[np.ndarray] = []
    for a in range(spec.num_blocks):
        if spec.p_intra > 0.0:
            mask = np.triu(rng.random((s, s)) < spec.p_intra, k=1)
            ii, jj = np.nonzero(mask)
            chunks.append(np.column_stack([ii + a * s, jj + a * s]))
        for b in range(a + 1, spec.num_blocks):
            if spec.p_inter <= 0.0:
                continue
            mask = rng.random((s, s)) < spec.p_inter
            ii, jj = np.nonzero(mask)
            chunks.append(np.column_stack([ii + a * s, jj + b * s]))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    graph = Graph._from_valid_pairs(n, edges)
    assignment = np.repeat(np.arange(spec.num_blocks, dtype=np.int64), s)
    return graph, Clustering.from_assignment(assignment)


def neighborhood_fraction_in_cluster(graph: Graph, clustering: "Clustering", i: int) -> float:
    """Fraction of unit ``i``'s neighbors that share its cluster.

    Isolated units have no neighborhood to average over; by convention they
    count as 0 ("no interference received"), which keeps the cluster-level
    mean well defined.
    """
    nbrs = graph.neighbors(i)
    if len(nbrs) == 0:
        return 0.0
    own = clustering.assignment[i]
    return float(np.count_nonzero(clustering.assignment[nbrs] == own)) / len(nbrs)


def neighborhood_fractions(graph: Graph, clustering: "Clustering") -> np.ndarray:
    """Vector of per-unit in-cluster neighbor fractions (0 for isolated units)."""
    n = graph.num_units
    deg = graph.degrees
    src = np.repeat(np.arange(n), deg)
    same = clustering.assignment[src] == clustering.assignment[graph.adjacency_indices]
    counts = np.bincount(src[same], minlength=n)
    out = np.zeros(n, dtype=np.float64)
    nz = deg > 0
    out[nz] = counts[nz] / deg[nz]
    return out


def load_edge_list(path: str | Path) -> Graph:
    """Read a graph from a whitespace- or comma-separated edge-list file.

    One edge per line; ``#`` starts a comment line; an optional header line
    ``N=<int>`` fixes the unit count (otherwise ``1 + max id`` is used).
    Duplicate edges collapse to one.

    Raises:
        ParseError: Malformed line (message carries the line number).
        ValidationError: Negative ids, self-loops, or ids outside a declared N.
    """
    path = Path(path)
    pairs: list[tuple[int, int]] = []
    declared_n: int | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            header = _HEADER_RE.match(line)
            if header:
                declared_n = int(header.group(1))
                continue
            tokens = line.replace(",", " ").split()
            if len(tokens) != 2:
                raise ParseError(f"{path}:{lineno}: expected two unit ids, got {line!r}")
            try:
                i, j = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer unit id in {line!r}") from None
            if i < 0 or j < 0:
                raise ValidationError(f"{path}:{lineno}: negative unit id in {line!r}")
            if i == j:
                raise ValidationError(f"{path}:{lineno}: self-loop on unit {i}")
            pairs.append((i, j))
    max_id = max((max(p) for p in pairs), default=-1)
    if declared_n is None:
        if max_id < 0:
            raise ValidationError(f"{path}: no edges and no N=<int> header")
        num_units = max_id + 1
    else:
        if max_id >= declared_n:
            raise ValidationError(f"{path}: unit id {max_id} outside declared N={declared_n}")
        num_units = declared_n
    return Graph.from_edges(num_units, np.asarray(pairs, dtype=np.int64).reshape(-1, 2))


def save_edge_list(graph: Graph, path: str | Path) -> None:
    """Write a graph in the edge-list format read by :func:`load_edge_list`."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"N={graph.num_units}\n")
        for i, j in graph.edges():
            fh.write(f"{i} {j}\n")
