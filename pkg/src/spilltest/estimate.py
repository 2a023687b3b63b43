"""Estimators, variance bounds, and the interference decision rule.

The test statistic is the gap between two estimates of the same effect: a
difference-in-means over the individually randomized arm and a scaled
cluster-total contrast over the cluster-randomized arm. Under no
interference both estimate the total treatment effect, so the gap has mean
zero; a conservative variance bound turns it into a distribution-free test.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from ._errors import ValidationError
from .assign import ARM_CBR, ARM_CR, DesignCounts, HierarchicalAssignment
from .partition import Clustering

if TYPE_CHECKING:
    from .graph import Graph
    from .outcomes import LinearInterferenceModel, PotentialTable


def _sample_var(x: np.ndarray) -> float:
    if len(x) < 2:
        raise ValidationError("sample variance needs at least two observations")
    return float(np.var(x, ddof=1))


@dataclass(frozen=True)
class VarianceComponents:
    """Sample variances (denominator ``count - 1``) at unit and cluster level."""

    s_t: float
    s_c: float
    s_tc: float
    s_plus_t: float
    s_plus_c: float
    s_plus_tc: float
    s_all: float
    s_plus_all: float


def variance_components(table: "PotentialTable", clustering: Clustering) -> VarianceComponents:
    """All variance components of a potential table under a clustering."""
    y1, y0 = table.y1, table.y0
    if len(y1) != clustering.num_units:
        raise ValidationError("potential table does not cover the clustering")
    y1p = clustering.cluster_sums(y1)
    y0p = clustering.cluster_sums(y0)
    pooled = np.concatenate([y1, y0])
    return VarianceComponents(
        s_t=_sample_var(y1),
        s_c=_sample_var(y0),
        s_tc=_sample_var(y1 - y0),
        s_plus_t=_sample_var(y1p),
        s_plus_c=_sample_var(y0p),
        s_plus_tc=_sample_var(y1p - y0p),
        s_all=_sample_var(pooled),
        s_plus_all=_sample_var(np.concatenate([y1p, y0p])),
    )


def diff_in_means(y: np.ndarray, z: np.ndarray) -> float:
    """Mean outcome of treated units minus mean outcome of control units."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z).astype(bool)
    if len(y) != len(z):
        raise ValidationError("outcome and assignment lengths differ")
    if not z.any() or z.all():
        raise ValidationError("difference in means needs both groups non-empty")
    return float(y[z].mean() - y[~z].mean())


def horvitz_thompson_cluster(
    y_plus: np.ndarray, z_clusters: np.ndarray, num_clusters: int, num_units: int
) -> float:
    """Scaled contrast of cluster totals: ``(M / N) * (mean_t(Y+) - mean_c(Y+))``."""
    y_plus = np.asarray(y_plus, dtype=np.float64)
    z = np.asarray(z_clusters).astype(bool)
    if len(y_plus) != len(z):
        raise ValidationError("cluster totals and cluster assignment lengths differ")
    if not z.any() or z.all():
        raise ValidationError("cluster contrast needs both groups non-empty")
    return float((num_clusters / num_units) * (y_plus[z].mean() - y_plus[~z].mean()))


@dataclass(frozen=True)
class DeltaEstimate:
    """Both arm estimates and their gap for one assignment draw."""

    tau_cr: float
    tau_cbr: float
    delta: float


def _slice_outcomes(assignment: HierarchicalAssignment, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if assignment.unit_ids.max() >= len(y):
        raise ValidationError(
            f"outcomes missing for unit {int(assignment.unit_ids.max())}; got {len(y)} values"
        )
    return y[assignment.unit_ids]


def delta_statistic(assignment: HierarchicalAssignment, y: np.ndarray) -> DeltaEstimate:
    """Compute both arm estimates and the gap ``delta = tau_cr - tau_cbr``.

    The first arm's estimate is a plain difference in means over its units;
    the second is ``(m_cbr / n_cbr)`` times the treated-minus-control contrast
    of its cluster totals.
    """
    local = _slice_outcomes(assignment, y)
    cr = assignment.unit_arm == ARM_CR
    z = assignment.treatment.astype(bool)
    tau_cr = diff_in_means(local[cr], z[cr])

    y_plus = assignment.clustering.cluster_sums(local)
    cbr_clusters = assignment.cluster_arm == ARM_CBR
    zc = assignment.cluster_treatment[cbr_clusters] == 1
    counts = assignment.counts
    scale = counts.m_cbr / counts.n_cbr
    yp = y_plus[cbr_clusters]
    if not zc.any() or zc.all():
        raise ValidationError("cluster-randomized arm needs both groups non-empty")
    tau_cbr = float(scale * (yp[zc].mean() - yp[~zc].mean()))
    return DeltaEstimate(tau_cr=tau_cr, tau_cbr=tau_cbr, delta=tau_cr - tau_cbr)


def empirical_variance_bound(assignment: HierarchicalAssignment, y: np.ndarray) -> float:
    """Plug-in variance bound from within-bucket sample variances.

    ``S_t/n_t + S_c/n_c`` over the individually randomized arm plus the
    scaled cluster-total analogue over the other arm. Its expectation
    upper-bounds the true variance of the gap under no interference, with
    equality for a constant treatment effect. Every bucket must hold at
    least two observations.
    """
    local = _slice_outcomes(assignment, y)
    cr = assignment.unit_arm == ARM_CR
    z = assignment.treatment.astype(bool)
    y_t = local[cr & z]
    y_c = local[cr & ~z]
    if len(y_t) < 2 or len(y_c) < 2:
        raise ValidationError("need >= 2 treated and >= 2 control units in the unit-randomized arm")

    y_plus = assignment.clustering.cluster_sums(local)
    cbr_clusters = assignment.cluster_arm == ARM_CBR
    zc = assignment.cluster_treatment[cbr_clusters] == 1
    yp = y_plus[cbr_clusters]
    yp_t = yp[zc]
    yp_c = yp[~zc]
    if len(yp_t) < 2 or len(yp_c) < 2:
        raise ValidationError("need >= 2 treated and >= 2 control clusters in the cluster arm")

    counts = assignment.counts
    scale_sq = (counts.m_cbr / counts.n_cbr) ** 2
    return (
        _sample_var(y_t) / len(y_t)
        + _sample_var(y_c) / len(y_c)
        + scale_sq * (_sample_var(yp_t) / len(yp_t) + _sample_var(yp_c) / len(yp_c))
    )


def _small_sample_factors(counts: DesignCounts) -> tuple[float, float]:
    # Expected within-arm sample variance of a cluster sample of units is
    # a * S - b * S_plus; both factors are exact for equal cluster sizes.
    n = counts.num_units
    if counts.n_cr < 2:
        raise ValidationError("unit-randomized arm needs at least two units")
    a = (counts.n_cr / (counts.n_cr - 1)) * ((n - 1) / n)
    b = counts.m_cbr / (n * (counts.n_cr - 1))
    return a, b


def fisher_null_variance(y: np.ndarray, clustering: Clustering, counts: DesignCounts) -> float:
    """Exact variance of the gap when treatment moves no outcome at all.

    Under the sharp null (identical potential outcomes) the design is the
    only source of randomness, so the variance is computable from the
    observed outcomes alone. Matches full enumeration exactly on balanced
    designs.
    """
    y = np.asarray(y, dtype=np.float64)
    if len(y) != clustering.num_units or counts.num_units != clustering.num_units:
        raise ValidationError("outcomes, clustering, and counts must agree on N")
    s = _sample_var(y)
    s_plus = _sample_var(clustering.cluster_sums(y))
    a, b = _small_sample_factors(counts)
    term_cr = (counts.n_cr / (counts.n_cr_t * counts.n_cr_c)) * (a * s - b * s_plus)
    term_cbr = (
        (counts.m_cbr / counts.n_cbr) ** 2
        * (counts.m_cbr / (counts.m_cbr_t * counts.m_cbr_c))
        * s_plus
    )
    return term_cr + term_cbr


@dataclass(frozen=True)
class SutvaVariance:
    """Variance of the gap under no interference, split into leading terms.

    ``leading`` sums the two arm variances and the cluster-level
    effect-heterogeneity term; ``correction`` is the exact small-sample
    adjustment from sampling whole clusters into the unit-randomized arm
    (of order ``order_bound``). ``exact`` is their sum and matches full
    enumeration.
    """

    leading: float
    correction: float
    order_bound: float

    @property
    def exact(self) -> float:
        return self.leading + self.correction


def theoretical_sutva_variance(
    table: "PotentialTable", clustering: Clustering, counts: DesignCounts
) -> SutvaVariance:
    """Design variance of the gap for a fixed potential table (no interference).

    Needs the full table, so this is an oracle/simulation quantity rather
    than something estimable from one experiment.
    """
    comps = variance_components(table, clustering)
    c = counts
    sigma2_cr = comps.s_t / c.n_cr_t + comps.s_c / c.n_cr_c - comps.s_tc / c.n_cr
    sigma2_cbr = (c.m_cbr / c.n_cbr) ** 2 * (
        comps.s_plus_t / c.m_cbr_t + comps.s_plus_c / c.m_cbr_c - comps.s_plus_tc / c.m_cbr
    )
    cross = (c.num_clusters / (c.n_cr * c.n_cbr)) * comps.s_plus_tc
    a, b = _small_sample_factors(c)
    plus_part = (
        comps.s_plus_t / c.n_cr_t + comps.s_plus_c / c.n_cr_c - comps.s_plus_tc / c.n_cr
    )
    correction = (a - 1.0) * sigma2_cr - b * plus_part
    order_bound = (c.num_clusters**2 / (c.n_cr * c.num_units**2)) * abs(sigma2_cr)
    return SutvaVariance(
        leading=sigma2_cr + sigma2_cbr + cross,
        correction=correction,
        order_bound=order_bound,
    )


def stratified_delta(
    deltas: Sequence[float],
    sigma_hat_sqs: Sequence[float],
    strata_cluster_counts: Sequence[int],
) -> tuple[float, float]:
    """Pool per-stratum gaps by cluster-count weights.

    Returns ``(delta_prime, sigma_prime_sq)`` where the gap is the weighted
    average with weights ``M(s)/M`` and the variance bound picks up squared
    weights.
    """
    if not (len(deltas) == len(sigma_hat_sqs) == len(strata_cluster_counts)):
        raise ValidationError("per-stratum inputs must align")
    if len(deltas) == 0:
        raise ValidationError("no strata to pool")
    total = float(sum(strata_cluster_counts))
    weights = [m / total for m in strata_cluster_counts]
    delta_prime = float(sum(w * d for w, d in zip(weights, deltas)))
    sigma_prime_sq = float(sum(w * w * s for w, s in zip(weights, sigma_hat_sqs)))
    return delta_prime, sigma_prime_sq


def gaussian_p_value(delta: float, sigma: float) -> float:
    """Two-tailed standard-normal p-value of ``|delta| / sigma``."""
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    return math.erfc(abs(delta) / (sigma * math.sqrt(2.0)))


def chebyshev_p_value(delta: float, sigma_hat_sq: float) -> float:
    """Distribution-free tail bound ``min(1, sigma_hat_sq / delta**2)``."""
    if sigma_hat_sq < 0:
        raise ValidationError("variance bound cannot be negative")
    if delta == 0:
        return 1.0
    if sigma_hat_sq == 0:
        return 0.0
    return min(1.0, sigma_hat_sq / (delta * delta))


def chebyshev_decision(delta: float, sigma_hat_sq: float, alpha: float) -> bool:
    """Reject no-interference iff ``|delta| >= sqrt(sigma_hat_sq / alpha)``.

    Guarantees a false-rejection rate of at most ``alpha`` whenever the
    variance bound dominates the true variance, with no distributional
    assumptions.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha={alpha} must lie in (0, 1)")
    if sigma_hat_sq < 0:
        raise ValidationError("variance bound cannot be negative")
    if delta == 0.0:
        return False
    return abs(delta) >= math.sqrt(sigma_hat_sq / alpha)


@dataclass(frozen=True)
class StratumDetail:
    stratum: int
    tau_cr: float
    tau_cbr: float
    delta: float
    sigma_hat_sq: float
    num_clusters: int


@dataclass(frozen=True)
class AnalysisReport:
    """Everything the decision rests on, ready for serialization."""

    tau_cr: float
    tau_cbr: float
    delta: float
    sigma_hat_sq: float
    t_stat: float
    p_chebyshev: float
    p_gaussian: float
    alpha: float
    decision_rule: str
    reject: bool
    counts: dict[str, int]
    provenance: str
    stratified: bool = False
    strata: tuple[StratumDetail, ...] = ()

    @property
    def decision(self) -> str:
        return "reject" if self.reject else "fail-to-reject"

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["decision"] = self.decision
        payload["strata"] = [asdict(s) for s in self.strata]
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _finish_report(
    tau_cr: float,
    tau_cbr: float,
    delta: float,
    sigma_hat_sq: float,
    alpha: float,
    decision_rule: str,
    counts: dict[str, int],
    provenance: str,
    stratified: bool = False,
    strata: tuple[StratumDetail, ...] = (),
) -> AnalysisReport:
    if decision_rule not in ("chebyshev", "gaussian"):
        raise ValidationError(f"unknown decision rule {decision_rule!r}")
    if sigma_hat_sq > 0:
        t_stat = delta / math.sqrt(sigma_hat_sq)
        p_gauss = gaussian_p_value(delta, math.sqrt(sigma_hat_sq))
    else:
        t_stat = 0.0 if delta == 0 else math.inf
        p_gauss = 1.0 if delta == 0 else 0.0
    p_cheb = chebyshev_p_value(delta, sigma_hat_sq)
    if decision_rule == "chebyshev":
        reject = chebyshev_decision(delta, sigma_hat_sq, alpha) if sigma_hat_sq > 0 else delta != 0
    else:
        if not 0.0 < alpha < 1.0:
            raise ValidationError(f"alpha={alpha} must lie in (0, 1)")
        reject = p_gauss < alpha
    return AnalysisReport(
        tau_cr=tau_cr,
        tau_cbr=tau_cbr,
        delta=delta,
        sigma_hat_sq=sigma_hat_sq,
        t_stat=t_stat,
        p_chebyshev=p_cheb,
        p_gaussian=p_gauss,
        alpha=alpha,
        decision_rule=decision_rule,
        reject=reject,
        counts=counts,
        provenance=provenance,
        stratified=stratified,
        strata=strata,
    )


def analyze(
    assignment: HierarchicalAssignment,
    y: np.ndarray,
    alpha: float = 0.05,
    decision_rule: str = "chebyshev",
) -> AnalysisReport:
    """Full single-design analysis: arm estimates, bound, p-values, decision."""
    est = delta_statistic(assignment, y)
    sigma_hat_sq = empirical_variance_bound(assignment, y)
    return _finish_report(
        est.tau_cr,
        est.tau_cbr,
        est.delta,
        sigma_hat_sq,
        alpha,
        decision_rule,
        assignment.counts.to_dict(),
        assignment.provenance,
    )


def analyze_stratified(
    assignments: Sequence[HierarchicalAssignment],
    y: np.ndarray,
    alpha: float = 0.05,
    decision_rule: str = "chebyshev",
) -> AnalysisReport:
    """Pool independent per-stratum analyses into one decision."""
    if len(assignments) == 0:
        raise ValidationError("no strata to analyze")
    details = []
    counts_total: dict[str, int] = {}
    for s, a in enumerate(assignments):
        est = delta_statistic(a, y)
        bound = empirical_variance_bound(a, y)
        details.append(
            StratumDetail(
                stratum=s,
                tau_cr=est.tau_cr,
                tau_cbr=est.tau_cbr,
                delta=est.delta,
                sigma_hat_sq=bound,
                num_clusters=a.clustering.num_clusters,
            )
        )
        for key, value in a.counts.to_dict().items():
            counts_total[key] = counts_total.get(key, 0) + value
    delta_prime, sigma_prime_sq = stratified_delta(
        [d.delta for d in details],
        [d.sigma_hat_sq for d in details],
        [d.num_clusters for d in details],
    )
    weights = [d.num_clusters for d in details]
    total = float(sum(weights))
    tau_cr = float(sum(w * d.tau_cr for w, d in zip(weights, details)) / total)
    tau_cbr = float(sum(w * d.tau_cbr for w, d in zip(weights, details)) / total)
    return _finish_report(
        tau_cr,
        tau_cbr,
        delta_prime,
        sigma_prime_sq,
        alpha,
        decision_rule,
        counts_total,
        assignments[0].provenance.split("/stratum=")[0],
        stratified=True,
        strata=tuple(details),
    )


# ---------------------------------------------------------------------------
# Closed-form expectations under the linear interference model.
# ---------------------------------------------------------------------------


def _rho_and_coverage(graph: "Graph", clustering: Clustering) -> tuple[float, float]:
    from .graph import neighborhood_fractions

    rho = float(neighborhood_fractions(graph, clustering).mean())
    non_isolated = float(np.count_nonzero(graph.degrees > 0)) / graph.num_units
    return rho, non_isolated


def expected_diff_in_means_linear(model: "LinearInterferenceModel", n_t: int) -> float:
    """Exact mean of the difference-in-means under complete randomization.

    Every unit with at least one neighbor contributes an interference drag of
    ``-gamma / (N - 1)``; isolated units contribute none.
    """
    n = model.num_units
    if not 1 <= n_t <= n - 1:
        raise ValidationError("n_t must leave both groups non-empty")
    non_isolated = float(np.count_nonzero(model.graph.degrees > 0)) / n
    return model.beta - model.gamma * non_isolated / (n - 1)


def expected_cluster_estimate_linear(
    model: "LinearInterferenceModel", clustering: Clustering
) -> float:
    """Exact mean of the cluster-total estimator under cluster randomization.

    The estimator soaks up the share of interference contained inside
    clusters: with no isolated units it equals
    ``beta + gamma * (rho_c * M - 1) / (M - 1)``.
    """
    rho, f = _rho_and_coverage(model.graph, clustering)
    m = clustering.num_clusters
    if m < 2:
        raise ValidationError("cluster randomization needs at least two clusters")
    return model.beta + model.gamma * (rho * m - f) / (m - 1)


def expected_delta_linear(
    model: "LinearInterferenceModel", clustering: Clustering, counts: DesignCounts
) -> float:
    """Exact mean of the gap under the hierarchical design (complete mechanism).

    The direct effect cancels between arms; what remains is the interference
    soaked up by the cluster-randomized arm, slightly offset by the
    finite-sample drag in the other arm. Approximately ``-gamma * rho_c``
    for many clusters.
    """
    rho, f = _rho_and_coverage(model.graph, clustering)
    m = counts.num_clusters
    cr_part = -(rho + (f - rho) * (counts.m_cr - 1) / (m - 1)) / (counts.n_cr - 1)
    cbr_part = (rho * m - f) / (m - 1)
    return model.gamma * (cr_part - cbr_part)


# ---------------------------------------------------------------------------
# Variance of the gap under the linear interference model.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterferenceVarianceTerms:
    """Neighborhood-pair statistics of a clustered graph.

    Ordered pairs of neighbors (repeats allowed) classified by cluster
    membership, averaged per unit (``a_bar``..``c_bar``), over same-cluster
    unit pairs (``d_bar``, ``e_bar``), over different-cluster unit pairs
    (``f_bar``), and the inverse-degree pair mass ``g_bar``. Isolated units
    contribute zero everywhere.
    """

    a_bar: float
    b_bar: float
    c_bar: float
    d_bar: float
    e_bar: float
    f_bar: float
    g_bar: float


def neighborhood_pair_terms(graph: "Graph", clustering: Clustering) -> InterferenceVarianceTerms:
    """Compute the neighborhood-pair statistics by direct counting."""
    n = graph.num_units
    m = clustering.num_clusters
    assignment = clustering.assignment
    deg = graph.degrees.astype(np.float64)
    src = np.repeat(np.arange(n), graph.degrees)
    dst = graph.adjacency_indices

    # K[i, c] = number of i's neighbors inside cluster c, held sparsely.
    keys = src * m + assignment[dst]
    uniq, counts = np.unique(keys, return_counts=True)
    k_src = uniq // m
    k_cluster = uniq % m
    k_count = counts.astype(np.float64)

    own = np.zeros(n)
    own_mask = k_cluster == assignment[k_src]
    own[k_src[own_mask]] = k_count[own_mask]
    sum_k_sq = np.bincount(k_src, weights=k_count**2, minlength=n)
    own_sq = own**2

    nz = deg > 0
    rho = np.zeros(n)
    rho[nz] = own[nz] / deg[nz]

    a_i = np.zeros(n)
    b_i = np.zeros(n)
    c_i = np.zeros(n)
    a_i[nz] = own_sq[nz] / deg[nz] ** 2
    b_i[nz] = (deg[nz] ** 2 - sum_k_sq[nz]) / deg[nz] ** 2
    c_i[nz] = (sum_k_sq[nz] - own_sq[nz]) / deg[nz] ** 2

    cluster_rho = np.bincount(assignment, weights=rho, minlength=m)
    cluster_rho_sq = np.bincount(assignment, weights=rho**2, minlength=m)
    sizes = clustering.sizes.astype(np.float64)
    # Same-cluster ordered pairs i != j of rho_j(1-rho_i) + rho_i(1-rho_j).
    d_sum = float(np.sum(2.0 * (sizes - 1.0) * cluster_rho - 2.0 * (cluster_rho**2 - cluster_rho_sq)))
    e_sum = float(np.sum(cluster_rho**2 - cluster_rho_sq))

    # Different-cluster pairs: own-cluster x own-cluster plus the crossed
    # in-each-other's-cluster mass, via the cluster-pair matrix of K / deg.
    g_mat = np.zeros((m, m))
    weights = np.zeros(n)
    weights[nz] = 1.0 / deg[nz]
    g_vals = k_count * weights[k_src]
    np.add.at(g_mat, (assignment[k_src], k_cluster), g_vals)
    cross = g_mat * g_mat.T
    f_sum = float(np.sum(cluster_rho) ** 2 - np.sum(cluster_rho**2)) + float(
        cross.sum() - np.trace(cross)
    )

    inv_deg = weights
    g_sum = float(inv_deg.sum() ** 2 - np.sum(inv_deg**2))

    return InterferenceVarianceTerms(
        a_bar=float(a_i.mean()),
        b_bar=float(b_i.mean()),
        c_bar=float(c_i.mean()),
        d_bar=d_sum / n**2,
        e_bar=e_sum / n**2,
        f_bar=f_sum / n**2,
        g_bar=g_sum / n**2,
    )


def _eta_moments(m: int, s: int) -> dict[str, float]:
    # Moments of the cluster marks eta_c in {0, +1, -1}: support is a uniform
    # s-subset of m clusters (the cluster-randomized arm), signs a balanced
    # split of the support. All moments are exact.
    if s % 2 != 0:
        raise ValidationError("cluster arm must split into equal treated/control halves")
    m2 = s / m
    m11 = -s / (m * (m - 1))
    m22 = s * (s - 1) / (m * (m - 1))
    m211 = -s * (s - 2) / (m * (m - 1) * (m - 2)) if m > 2 else 0.0
    if s >= 4 and m >= 4:
        m1111 = 3.0 * s * (s - 2) / (m * (m - 1) * (m - 2) * (m - 3))
    else:
        m1111 = 0.0
    d1 = s * (m - s) / (m * (m - 1))
    d11 = -s * (m - s) / (m * (m - 1) * (m - 2)) if m > 2 else 0.0
    return {
        "m2": m2, "m11": m11, "m22": m22, "m211": m211, "m1111": m1111,
        "out1": d1, "out11": d11,
    }


def _eta_quadratic_moments(h: np.ndarray, m: int, s: int) -> tuple[float, float]:
    """Exact mean and variance of ``sum_{a,b} h[a,b] eta_a eta_b``."""
    mom = _eta_moments(m, s)
    diag = h.diagonal().astype(np.float64)
    sym = (h + h.T) / 2.0
    np.fill_diagonal(sym, 0.0)
    p2 = float(sym.sum())
    q2 = float((sym**2).sum())
    rows = sym.sum(axis=1)
    sum_r_sq = float((rows**2).sum())
    diag_sum = float(diag.sum())
    diag_sq = float((diag**2).sum())
    diag_row = float((diag * rows).sum())

    mean = mom["m2"] * diag_sum + mom["m11"] * p2

    t1 = mom["m2"] * diag_sq + mom["m22"] * (diag_sum**2 - diag_sq)
    t2 = 2.0 * (2.0 * diag_row * mom["m11"] + (diag_sum * p2 - 2.0 * diag_row) * mom["m211"])
    share_one = sum_r_sq - q2
    t3 = (
        2.0 * q2 * mom["m22"]
        + 4.0 * share_one * mom["m211"]
        + (p2**2 - 2.0 * q2 - 4.0 * share_one) * mom["m1111"]
    )
    return mean, t1 + t2 + t3 - mean**2


@dataclass(frozen=True)
class InterferenceVarianceEstimate:
    """Predicted design variance of the gap under the linear model.

    ``structural`` carries the interference-driven part (scales with
    ``gamma**2``), ``noise`` the exact observation-noise part; ``variance``
    is their sum. ``expected_delta`` is the exact mean of the gap.
    """

    variance: float
    structural: float
    noise: float
    expected_delta: float

    def __float__(self) -> float:
        return self.variance


def interference_variance_approx(
    model: "LinearInterferenceModel",
    graph: "Graph",
    clustering: Clustering,
    counts: DesignCounts,
) -> InterferenceVarianceEstimate:
    """Predict the design variance of the gap without running the experiment.

    Supported for the symmetric design only (equal arms, half treated in
    each). The direct effect cancels exactly between arms under fixed
    bucket counts, so the structural part is driven by the interference
    coefficient alone; it is computed from exact cluster-split moments of a
    neighborhood mass matrix, treating units inside the individually
    randomized arm as independently assigned (error of relative order
    ``1/n_cr``). The observation-noise part is exact.
    """
    c = counts
    if not (c.m_cr == c.m_cbr and c.n_cr_t == c.n_cr_c and c.m_cbr_t == c.m_cbr_c):
        raise ValidationError(
            "variance prediction supports only the symmetric design "
            "(equal arms, half treated within each arm)"
        )
    if graph.num_units != clustering.num_units or c.num_units != graph.num_units:
        raise ValidationError("graph, clustering, and counts must agree on N")
    if model.graph is not graph and model.graph.num_units != graph.num_units:
        raise ValidationError("model graph does not match the supplied graph")

    n = graph.num_units
    m = clustering.num_clusters
    s = c.m_cbr
    assignment = clustering.assignment
    deg = graph.degrees.astype(np.float64)
    nz = deg > 0
    inv_deg = np.zeros(n)
    inv_deg[nz] = 1.0 / deg[nz]

    src = np.repeat(np.arange(n), graph.degrees)
    dst = graph.adjacency_indices
    c_src = assignment[src]
    c_dst = assignment[dst]
    w_src = inv_deg[src]

    # Cluster-pair mass of directed neighbor links, g[a, b] = sum 1/d_i over
    # edges i in a -> j in b. Both-cluster-randomized links contribute the
    # quadratic form below; its split variance is exact.
    g_mat = np.zeros((m, m))
    np.add.at(g_mat, (c_src, c_dst), w_src)
    mean_g, var_g = _eta_quadratic_moments(-g_mat, m, s)

    mom = _eta_moments(m, s)

    # Mixed links (one endpoint in each arm): reversed directed edges almost
    # cancel, leaving degree-imbalance weights on cross-arm neighbor pairs.
    diff_mask = c_src != c_dst
    lam = w_src - inv_deg[dst]
    keys = src[diff_mask] * m + c_dst[diff_mask]
    uk, inv = np.unique(keys, return_inverse=True)
    a_vals = np.bincount(inv, weights=lam[diff_mask])
    a_units = uk // m
    row_sum = np.bincount(a_units, weights=a_vals, minlength=n)
    row_sum_sq = np.bincount(a_units, weights=a_vals**2, minlength=n)
    mixed = float(mom["out1"] * row_sum_sq.sum() + mom["out11"] * (row_sum**2 - row_sum_sq).sum())

    # Links with both endpoints in the individually randomized arm: only
    # self- and reverse-pairings survive independent unit coins.
    p_same_cr = (m - s) / m
    p_diff_cr = (m - s) * (m - s - 1) / (m * (m - 1))
    pair_mass = w_src**2 + w_src * inv_deg[dst]
    same_mask = ~diff_mask
    cr_pairs = float(p_same_cr * pair_mass[same_mask].sum() + p_diff_cr * pair_mass[diff_mask].sum())

    var_t = var_g + mixed + cr_pairs
    structural = model.gamma**2 * (4.0 / n**2) * var_t

    noise = model.noise_sd**2 * (
        1.0 / c.n_cr_t
        + 1.0 / c.n_cr_c
        + 1.0 / (c.cluster_size * c.m_cbr_t)
        + 1.0 / (c.cluster_size * c.m_cbr_c)
    )

    # Exact mean of the gap: cluster-arm quadratic plus the finite-sample
    # drag of the unit-randomized arm.
    cr_mass = float(
        p_same_cr * w_src[same_mask].sum() + p_diff_cr * w_src[diff_mask].sum()
    )
    mean_t = mean_g - cr_mass / (c.n_cr - 1)
    expected_delta = model.gamma * (2.0 / n) * mean_t

    return InterferenceVarianceEstimate(
        variance=structural + noise,
        structural=structural,
        noise=noise,
        expected_delta=expected_delta,
    )
