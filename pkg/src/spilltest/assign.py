"""Randomization mechanisms: unit-level, cluster-level, and the two-arm hierarchy.

The hierarchical design first splits clusters between two arms, then
randomizes treatment inside each arm with a different mechanism: individual
(complete or re-randomized Bernoulli) assignment in one arm, whole-cluster
assignment in the other. Comparing the two arms' effect estimates is what
powers the interference test downstream.

Seeding discipline: a master seed expands into named substreams through
``numpy.random.SeedSequence.spawn`` — child 0 drives the cluster-to-arm
split, child 1 the individually randomized arm, child 2 the
cluster-randomized arm; stratified designs give each stratum its own spawned
child first. Substreams are independent, so redrawing one arm never perturbs
the other.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from ._errors import ValidationError
from .partition import Clustering, Stratification

ARM_CR = 1  # individually randomized arm
ARM_CBR = 0  # cluster-randomized arm

CrArmMechanism = Literal["complete", "bernoulli"]


def _seed_sequence(seed: int | np.random.SeedSequence | None) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


@dataclass(frozen=True)
class DesignCounts:
    """Arm and bucket sizes of a hierarchical design.

    ``n_*`` count units, ``m_*`` count clusters; the ``_t``/``_c`` suffixes
    split an arm into treated and control buckets. Balance (equal cluster
    sizes across arms) is part of the invariant because the analysis formulas
    assume these counts are constants.
    """

    n_cr: int
    n_cbr: int
    m_cr: int
    m_cbr: int
    n_cr_t: int
    n_cr_c: int
    m_cbr_t: int
    m_cbr_c: int

    def __post_init__(self) -> None:
        fields = asdict(self)
        for name, value in fields.items():
            if value < 1:
                raise ValidationError(f"design count {name}={value} must be >= 1")
        if self.n_cr_t + self.n_cr_c != self.n_cr:
            raise ValidationError("treated + control must equal the arm's unit count")
        if self.m_cbr_t + self.m_cbr_c != self.m_cbr:
            raise ValidationError("treated + control must equal the arm's cluster count")
        n, m = self.num_units, self.num_clusters
        if n % m != 0 or self.n_cr * m != n * self.m_cr or self.n_cbr * m != n * self.m_cbr:
            raise ValidationError(
                "unbalanced design: cluster size must equal n_cr/m_cr and n_cbr/m_cbr"
            )

    @property
    def num_units(self) -> int:
        return self.n_cr + self.n_cbr

    @property
    def num_clusters(self) -> int:
        return self.m_cr + self.m_cbr

    @property
    def cluster_size(self) -> int:
        return self.num_units // self.num_clusters

    @classmethod
    def symmetric(cls, num_units: int, num_clusters: int) -> "DesignCounts":
        """Default half/half design: equal arms, half treated within each arm.

        Odd counts anywhere are rejected rather than rounded; the variance
        formulas treat every count as a fixed constant.
        """
        if num_clusters % 2 != 0:
            raise ValidationError(f"symmetric design needs an even cluster count, got {num_clusters}")
        if num_units % num_clusters != 0:
            raise ValidationError(
                f"{num_units} units do not split evenly over {num_clusters} clusters"
            )
        m_arm = num_clusters // 2
        n_arm = num_units // 2
        if n_arm % 2 != 0:
            raise ValidationError(f"arm of {n_arm} units cannot be split half treated")
        if m_arm % 2 != 0:
            raise ValidationError(f"arm of {m_arm} clusters cannot be split half treated")
        return cls(
            n_cr=n_arm,
            n_cbr=n_arm,
            m_cr=m_arm,
            m_cbr=m_arm,
            n_cr_t=n_arm // 2,
            n_cr_c=n_arm // 2,
            m_cbr_t=m_arm // 2,
            m_cbr_c=m_arm - m_arm // 2,
        )

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class SimpleAssignment:
    """A single-mechanism treatment draw over N units."""

    z: np.ndarray
    n_t: int
    n_c: int
    p: float | None = None

    def __post_init__(self) -> None:
        self.z.setflags(write=False)


@dataclass(frozen=True)
class HierarchicalAssignment:
    """One draw of the two-arm design, with enough structure to analyze it.

    ``cluster_arm`` and ``unit_arm`` are 1 on the individually randomized arm
    and 0 on the cluster-randomized arm. ``cluster_treatment`` is meaningful
    only for clusters in the cluster-randomized arm (-1 elsewhere).
    ``unit_ids`` / ``cluster_ids`` map back to global ids when the assignment
    covers a stratum rather than the whole population.
    """

    clustering: Clustering
    counts: DesignCounts
    cluster_arm: np.ndarray
    unit_arm: np.ndarray
    cluster_treatment: np.ndarray
    treatment: np.ndarray
    mechanism: str
    provenance: str
    unit_ids: np.ndarray = field(default=None)  # type: ignore[assignment]
    cluster_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.unit_ids is None:
            object.__setattr__(self, "unit_ids", np.arange(self.clustering.num_units))
        if self.cluster_ids is None:
            object.__setattr__(self, "cluster_ids", np.arange(self.clustering.num_clusters))
        for arr in (self.cluster_arm, self.unit_arm, self.cluster_treatment, self.treatment,
                    self.unit_ids, self.cluster_ids):
            arr.setflags(write=False)

    @property
    def num_units(self) -> int:
        return self.clustering.num_units


def complete_randomization(
    num_units: int, n_t: int, seed: int | np.random.SeedSequence | None = 0
) -> SimpleAssignment:
    """Treat exactly ``n_t`` of ``num_units`` units, uniformly at random."""
    if not 1 <= n_t <= num_units - 1:
        raise ValidationError(f"n_t={n_t} must leave both groups non-empty (N={num_units})")
    rng = np.random.default_rng(_seed_sequence(seed))
    z = np.zeros(num_units, dtype=np.int8)
    z[rng.choice(num_units, size=n_t, replace=False)] = 1
    return SimpleAssignment(z=z, n_t=n_t, n_c=num_units - n_t)


def bernoulli_rerandomized(
    num_units: int, p: float, seed: int | np.random.SeedSequence | None = 0
) -> SimpleAssignment:
    """Independent coin flips, redrawn until neither group is empty."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"p={p} must lie strictly inside (0, 1)")
    rng = np.random.default_rng(_seed_sequence(seed))
    while True:
        z = (rng.random(num_units) < p).astype(np.int8)
        n_t = int(z.sum())
        if 0 < n_t < num_units:
            return SimpleAssignment(z=z, n_t=n_t, n_c=num_units - n_t, p=p)


def cluster_randomization(
    clustering: Clustering, m_t: int, seed: int | np.random.SeedSequence | None = 0
) -> SimpleAssignment:
    """Treat exactly ``m_t`` whole clusters, uniformly at random."""
    m = clustering.num_clusters
    if not 1 <= m_t <= m - 1:
        raise ValidationError(f"m_t={m_t} must leave both cluster groups non-empty (M={m})")
    rng = np.random.default_rng(_seed_sequence(seed))
    treated_clusters = np.zeros(m, dtype=np.int8)
    treated_clusters[rng.choice(m, size=m_t, replace=False)] = 1
    z = treated_clusters[clustering.assignment]
    return SimpleAssignment(z=z, n_t=int(z.sum()), n_c=int((1 - z).sum()))


def _require_balanced(clustering: Clustering) -> None:
    if not clustering.is_balanced:
        raise ValidationError(
            "analysis requires exactly equal cluster sizes; run rebalance() first "
            f"(sizes range {int(clustering.sizes.min())}..{int(clustering.sizes.max())})"
        )


def _hierarchical_from_streams(
    clustering: Clustering,
    counts: DesignCounts,
    arm_stream: np.random.SeedSequence,
    cr_stream: np.random.SeedSequence,
    cbr_stream: np.random.SeedSequence,
    cr_arm_mechanism: CrArmMechanism,
    provenance: str,
    unit_ids: np.ndarray | None = None,
    cluster_ids: np.ndarray | None = None,
) -> HierarchicalAssignment:
    # Draw order is fixed: arm split, then each arm from its own stream, so
    # redrawing one arm's stream cannot shift the other's outcome.
    _require_balanced(clustering)
    m = clustering.num_clusters
    if counts.num_clusters != m or counts.num_units != clustering.num_units:
        raise ValidationError("design counts do not match the clustering")
    if counts.cluster_size != int(clustering.sizes[0]):
        raise ValidationError("design counts assume a different cluster size")

    arm_rng = np.random.default_rng(arm_stream)
    cluster_arm = np.zeros(m, dtype=np.int8)
    cluster_arm[arm_rng.choice(m, size=counts.m_cr, replace=False)] = ARM_CR
    unit_arm = cluster_arm[clustering.assignment]

    treatment = np.zeros(clustering.num_units, dtype=np.int8)
    cr_units = np.flatnonzero(unit_arm == ARM_CR)
    if cr_arm_mechanism == "complete":
        inner = complete_randomization(counts.n_cr, counts.n_cr_t, cr_stream)
    elif cr_arm_mechanism == "bernoulli":
        inner = bernoulli_rerandomized(counts.n_cr, counts.n_cr_t / counts.n_cr, cr_stream)
    else:
        raise ValidationError(f"unknown mechanism {cr_arm_mechanism!r}")
    treatment[cr_units] = inner.z

    cbr_clusters = np.flatnonzero(cluster_arm == ARM_CBR)
    cbr_rng = np.random.default_rng(cbr_stream)
    cluster_treatment = np.full(m, -1, dtype=np.int8)
    cluster_treatment[cbr_clusters] = 0
    treated_cbr = cbr_rng.choice(counts.m_cbr, size=counts.m_cbr_t, replace=False)
    cluster_treatment[cbr_clusters[treated_cbr]] = 1
    cbr_units = unit_arm == ARM_CBR
    treatment[cbr_units] = cluster_treatment[clustering.assignment[cbr_units]]

    return HierarchicalAssignment(
        clustering=clustering,
        counts=counts,
        cluster_arm=cluster_arm,
        unit_arm=unit_arm,
        cluster_treatment=cluster_treatment,
        treatment=treatment,
        mechanism=cr_arm_mechanism,
        provenance=provenance,
        unit_ids=unit_ids,
        cluster_ids=cluster_ids,
    )


def hierarchical_assign(
    clustering: Clustering,
    counts: DesignCounts,
    seed: int | np.random.SeedSequence | None = 0,
    cr_arm_mechanism: CrArmMechanism = "complete",
) -> HierarchicalAssignment:
    """Draw the two-arm design: cluster arm split, then within-arm treatment.

    Clusters go to the individually randomized arm uniformly at random
    (``counts.m_cr`` of them). Conditional on the split, that arm's units are
    treated by complete randomization (or re-randomized Bernoulli with the
    matching treated fraction), and the other arm's clusters are split
    ``m_cbr_t`` treated / ``m_cbr_c`` control uniformly. The two within-arm
    draws come from independent seed substreams.

    Raises:
        ValidationError: Unbalanced clustering (the analysis requires exactly
            equal cluster sizes) or counts inconsistent with it.
    """
    master = _seed_sequence(seed)
    arm_stream, cr_stream, cbr_stream = master.spawn(3)
    return _hierarchical_from_streams(
        clustering,
        counts,
        arm_stream,
        cr_stream,
        cbr_stream,
        cr_arm_mechanism,
        provenance=f"seed={seed}",
    )


def _sub_clustering(clustering: Clustering, cluster_subset: np.ndarray) -> tuple[Clustering, np.ndarray]:
    """Restrict to the given clusters, relabeling both units and clusters."""
    mask = np.isin(clustering.assignment, cluster_subset)
    unit_ids = np.flatnonzero(mask)
    relabel = {int(c): i for i, c in enumerate(np.sort(cluster_subset))}
    assignment = np.array([relabel[int(c)] for c in clustering.assignment[unit_ids]], dtype=np.int64)
    return Clustering.from_assignment(assignment), unit_ids


def stratified_hierarchical_assign(
    clustering: Clustering,
    stratification: Stratification,
    counts: Sequence[DesignCounts] | None = None,
    seed: int | np.random.SeedSequence | None = 0,
    cr_arm_mechanism: CrArmMechanism = "complete",
) -> list[HierarchicalAssignment]:
    """Run an independent hierarchical draw inside every stratum.

    ``counts`` gives one :class:`DesignCounts` per stratum; ``None`` uses the
    symmetric default in each. Each stratum draws from its own spawned seed
    substream, so strata are mutually independent.

    Raises:
        ValidationError: Naming the first stratum whose design is infeasible.
    """
    if stratification.num_strata < 1:
        raise ValidationError("empty stratification")
    if len(stratification.stratum_of) != clustering.num_clusters:
        raise ValidationError("stratification does not cover the clustering")
    _require_balanced(clustering)
    master = _seed_sequence(seed)
    streams = master.spawn(stratification.num_strata)
    out: list[HierarchicalAssignment] = []
    for s in range(stratification.num_strata):
        cluster_subset = stratification.clusters_in(s)
        sub, unit_ids = _sub_clustering(clustering, cluster_subset)
        try:
            if counts is None:
                stratum_counts = DesignCounts.symmetric(sub.num_units, sub.num_clusters)
            else:
                stratum_counts = counts[s]
            arm_stream, cr_stream, cbr_stream = streams[s].spawn(3)
            out.append(
                _hierarchical_from_streams(
                    sub,
                    stratum_counts,
                    arm_stream,
                    cr_stream,
                    cbr_stream,
                    cr_arm_mechanism,
                    provenance=f"seed={seed}/stratum={s}",
                    unit_ids=unit_ids,
                    cluster_ids=np.sort(cluster_subset),
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"stratum {s}: {exc}") from exc
    return out


def marginal_treatment_probability(counts: DesignCounts) -> float:
    """Probability any given unit ends up treated under the hierarchical draw."""
    m = counts.num_clusters
    return (counts.m_cr / m) * (counts.n_cr_t / counts.n_cr) + (counts.m_cbr / m) * (
        counts.m_cbr_t / counts.m_cbr
    )


def save_assignment(
    assignments: HierarchicalAssignment | Sequence[HierarchicalAssignment], path: str | Path
) -> None:
    """Persist as CSV with columns ``unit_id,arm,treatment`` (arm: cr | cbr)."""
    if isinstance(assignments, HierarchicalAssignment):
        assignments = [assignments]
    rows: list[tuple[int, str, int]] = []
    for a in assignments:
        for local, unit in enumerate(a.unit_ids):
            arm = "cr" if a.unit_arm[local] == ARM_CR else "cbr"
            rows.append((int(unit), arm, int(a.treatment[local])))
    rows.sort()
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "arm", "treatment"])
        writer.writerows(rows)


def load_assignment_vectors(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``unit_id,arm,treatment`` into dense (unit_arm, treatment) vectors."""
    path = Path(path)
    rows: dict[int, tuple[int, int]] = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"unit_id", "arm", "treatment"}:
            raise ValidationError(f"{path}: expected header unit_id,arm,treatment")
        for row in reader:
            arm_text = row["arm"].strip().lower()
            if arm_text not in ("cr", "cbr"):
                raise ValidationError(f"{path}: unknown arm {row['arm']!r}")
            rows[int(row["unit_id"])] = (ARM_CR if arm_text == "cr" else ARM_CBR, int(row["treatment"]))
    if not rows:
        raise ValidationError(f"{path}: no assignments")
    n = max(rows) + 1
    if len(rows) != n:
        raise ValidationError(f"{path}: unit ids are not contiguous from 0")
    unit_arm = np.empty(n, dtype=np.int8)
    treatment = np.empty(n, dtype=np.int8)
    for unit, (w, z) in rows.items():
        unit_arm[unit] = w
        treatment[unit] = z
    return unit_arm, treatment


def assignment_from_vectors(
    clustering: Clustering,
    unit_arm: np.ndarray,
    treatment: np.ndarray,
    mechanism: str = "complete",
    provenance: str = "loaded",
    unit_ids: np.ndarray | None = None,
    cluster_ids: np.ndarray | None = None,
) -> HierarchicalAssignment:
    """Reconstruct a hierarchical assignment from persisted arm/treatment bits.

    Validates the structural invariants: arms constant within clusters,
    treatment constant within cluster-randomized clusters, and both groups
    non-empty in each arm.
    """
    _require_balanced(clustering)
    unit_arm = np.asarray(unit_arm, dtype=np.int8)
    treatment = np.asarray(treatment, dtype=np.int8)
    if len(unit_arm) != clustering.num_units or len(treatment) != clustering.num_units:
        raise ValidationError("assignment vectors do not match the clustering")
    m = clustering.num_clusters
    cluster_arm = np.empty(m, dtype=np.int8)
    cluster_treatment = np.full(m, -1, dtype=np.int8)
    for c in range(m):
        members = clustering.members(c)
        arms = np.unique(unit_arm[members])
        if len(arms) != 1:
            raise ValidationError(f"cluster {c} spans both arms; assignment is corrupt")
        cluster_arm[c] = arms[0]
        if arms[0] == ARM_CBR:
            zs = np.unique(treatment[members])
            if len(zs) != 1:
                raise ValidationError(f"cluster-randomized cluster {c} has mixed treatment")
            cluster_treatment[c] = zs[0]
    m_cr = int(np.count_nonzero(cluster_arm == ARM_CR))
    m_cbr = m - m_cr
    cr_mask = unit_arm == ARM_CR
    n_cr = int(np.count_nonzero(cr_mask))
    n_cr_t = int(treatment[cr_mask].sum())
    m_cbr_t = int(np.count_nonzero(cluster_treatment == 1))
    counts = DesignCounts(
        n_cr=n_cr,
        n_cbr=clustering.num_units - n_cr,
        m_cr=m_cr,
        m_cbr=m_cbr,
        n_cr_t=n_cr_t,
        n_cr_c=n_cr - n_cr_t,
        m_cbr_t=m_cbr_t,
        m_cbr_c=m_cbr - m_cbr_t,
    )
    return HierarchicalAssignment(
        clustering=clustering,
        counts=counts,
        cluster_arm=cluster_arm,
        unit_arm=unit_arm,
        cluster_treatment=cluster_treatment,
        treatment=treatment,
        mechanism=mechanism,
        provenance=provenance,
        unit_ids=unit_ids,
        cluster_ids=cluster_ids,
    )
