import math

import numpy as np
import pytest

from spilltest import (
    Clustering,
    DesignCounts,
    EnumerationSpec,
    PotentialTable,
    ValidationError,
    bernoulli_vs_cr_variance_gap,
    binomial_negative_moment,
    enumerate_moments,
    hierarchical_assign,
)
from spilltest.oracle import enumerate_hierarchical_assignments, hierarchical_outcome_count
from spilltest.verify import CHECKS, run_check

rng = np.random.default_rng(20240810)


def neyman_cr_variance(table: PotentialTable, n_t: int) -> float:
    n = table.num_units
    s_t = np.var(table.y1, ddof=1)
    s_c = np.var(table.y0, ddof=1)
    s_tc = np.var(table.y1 - table.y0, ddof=1)
    return float(s_t / n_t + s_c / (n - n_t) - s_tc / n)


def cluster_variance(table: PotentialTable, clustering: Clustering, m_t: int) -> float:
    m, n = clustering.num_clusters, clustering.num_units
    y1p = clustering.cluster_sums(table.y1)
    y0p = clustering.cluster_sums(table.y0)
    s_t = np.var(y1p, ddof=1)
    s_c = np.var(y0p, ddof=1)
    s_tc = np.var(y1p - y0p, ddof=1)
    return float((m / n) ** 2 * (s_t / m_t + s_c / (m - m_t) - s_tc / m))


def test_complete_design_moments_match_closed_forms():
    # Both the mean (unbiasedness) and the finite-population variance of the
    # difference in means have known closed forms; enumeration must hit both.
    table = PotentialTable(y1=rng.normal(size=8), y0=rng.normal(size=8))
    tau = float(np.mean(table.y1 - table.y0))
    mom = enumerate_moments(EnumerationSpec(design="complete", outcomes=table, n_t=3))
    assert mom.count == math.comb(8, 3)
    assert mom.mean == pytest.approx(tau, abs=1e-12)
    assert mom.variance == pytest.approx(neyman_cr_variance(table, 3), abs=1e-12)


def test_cluster_design_moments_match_closed_forms(oracle_design):
    _, clustering, _, _, table = oracle_design
    tau = float(np.mean(table.y1 - table.y0))
    mom = enumerate_moments(
        EnumerationSpec(design="cluster", outcomes=table, clustering=clustering, m_t=2)
    )
    assert mom.mean == pytest.approx(tau, abs=1e-12)
    assert mom.variance == pytest.approx(cluster_variance(table, clustering, 2), abs=1e-12)


def test_hierarchical_outcome_count(oracle_design):
    _, clustering, counts, _, _ = oracle_design
    assert hierarchical_outcome_count(counts) == 72
    w, z, _, _ = enumerate_hierarchical_assignments(clustering, counts)
    assert len(w) == 72
    # All outcomes distinct (each visited exactly once => uniform law).
    patterns = {bytes(np.concatenate([w[r], z[r]])) for r in range(72)}
    assert len(patterns) == 72


def test_hierarchical_sutva_mean_is_zero(oracle_design):
    _, clustering, counts, _, table = oracle_design
    mom = enumerate_moments(
        EnumerationSpec(
            design="hierarchical", outcomes=table, statistic="delta",
            clustering=clustering, counts=counts,
        )
    )
    assert abs(mom.mean) <= 1e-12


def test_enumeration_requires_noise_free_model(oracle_design):
    graph, clustering, counts, model, _ = oracle_design
    from spilltest import LinearInterferenceModel

    noisy = LinearInterferenceModel(alpha=0.0, beta=1.0, gamma=0.5, noise_sd=1.0, graph=graph)
    with pytest.raises(ValidationError, match="noise-free"):
        enumerate_moments(
            EnumerationSpec(
                design="hierarchical", outcomes=noisy, statistic="delta",
                clustering=clustering, counts=counts,
            )
        )


def test_enumeration_cap_reports_required_count():
    clustering = Clustering.from_assignment(np.arange(30))
    counts = DesignCounts(
        n_cr=14, n_cbr=16, m_cr=14, m_cbr=16, n_cr_t=7, n_cr_c=7, m_cbr_t=8, m_cbr_c=8
    )
    table = PotentialTable(y1=np.zeros(30), y0=np.zeros(30))
    with pytest.raises(ValidationError, match=r"\d+ outcomes"):
        enumerate_moments(
            EnumerationSpec(
                design="hierarchical", outcomes=table, statistic="delta",
                clustering=clustering, counts=counts,
            )
        )


def test_enumeration_matches_sampler_frequencies(bound_design):
    # Internal consistency: exact moments vs the actual sampler, 2e4 draws.
    clustering, counts = bound_design
    table = PotentialTable(y1=rng.normal(size=12), y0=rng.normal(size=12))
    exact = enumerate_moments(
        EnumerationSpec(
            design="hierarchical", outcomes=table, statistic="delta",
            clustering=clustering, counts=counts,
        )
    )
    draws = 20_000
    reps = np.random.SeedSequence(42).spawn(draws)
    values = np.empty(draws)
    from spilltest import delta_statistic, realize_sutva

    for r in range(draws):
        a = hierarchical_assign(clustering, counts, reps[r])
        values[r] = delta_statistic(a, realize_sutva(table, a.treatment).y).delta
    se = values.std(ddof=1) / math.sqrt(draws)
    assert abs(values.mean() - exact.mean) <= 4 * se
    var_se = exact.variance * math.sqrt(2.0 / (draws - 1))
    assert abs(values.var(ddof=1) - exact.variance) <= 4 * var_se


def test_enumerated_rejection_rate_is_conservative(bound_design):
    # The distribution-free rule rejects far less often than alpha under no
    # interference; enumerate the exact rejection frequency.
    clustering, counts = bound_design
    table = PotentialTable(y1=rng.normal(size=12) + 1.0, y0=rng.normal(size=12))
    rate = enumerate_moments(
        EnumerationSpec(
            design="hierarchical", outcomes=table, statistic="reject",
            clustering=clustering, counts=counts, alpha=0.05,
        )
    )
    assert 0.0 <= rate.mean <= 0.05


def test_negative_moment_two_units():
    # N=2, p=1/2 conditioned off {0, 2}: eta_t is identically 1.
    assert binomial_negative_moment(2, 0.5) == pytest.approx(1.0, abs=1e-15)


def test_negative_moment_bound_at_twelve():
    value = binomial_negative_moment(12, 0.5)
    assert abs(value - 1.0 / 6.0) <= 5.0 / 36.0
    # Hypothesis of the bound holds here: 2 * 0.5**12 <= 1/144.
    assert 2 * 0.5**12 <= 1.0 / 144.0


def test_negative_moment_matches_monte_carlo():
    # Cross-path check: simulate the re-randomized law directly.
    draws = 100_000
    g = np.random.default_rng(3)
    k = g.binomial(12, 0.5, size=draws * 2)
    k = k[(k > 0) & (k < 12)][:draws]
    mc = float(np.mean(1.0 / k))
    exact = binomial_negative_moment(12, 0.5)
    se = float(np.std(1.0 / k, ddof=1) / math.sqrt(draws))
    assert abs(mc - exact) <= 4 * se


def test_variance_gap_constant_effect_dual_route():
    # Under a constant effect the coin-flip design's variance has the exact
    # closed form S * (E[1/eta_t] + E[1/eta_c]), an independent route through
    # the negative-moment computation.
    y0 = rng.normal(size=12)
    table = PotentialTable.constant_effect(y0, tau=2.0)
    gap = bernoulli_vs_cr_variance_gap(table, 6)
    s = float(np.var(y0, ddof=1))
    assert gap.var_complete == pytest.approx(neyman_cr_variance(table, 6), abs=1e-12)
    expected_br = s * 2 * binomial_negative_moment(12, 0.5)
    assert gap.var_bernoulli == pytest.approx(expected_br, abs=1e-10)
    assert gap.gap <= gap.bound


def test_variance_gap_degenerate_table():
    y = np.full(12, 3.0)
    table = PotentialTable(y1=y, y0=y)
    gap = bernoulli_vs_cr_variance_gap(table, 6)
    assert gap.var_bernoulli == pytest.approx(0.0, abs=1e-15)
    assert gap.var_complete == pytest.approx(0.0, abs=1e-15)


def test_variance_gap_random_tables_within_bound():
    for _ in range(10):
        table = PotentialTable(y1=rng.normal(size=12), y0=rng.normal(size=12))
        gap = bernoulli_vs_cr_variance_gap(table, 6)  # raises CheckFailure on violation
        assert gap.gap <= gap.bound


def test_variance_gap_preconditions():
    table = PotentialTable(y1=np.zeros(24), y0=np.zeros(24))
    with pytest.raises(ValidationError, match="N <= 20"):
        bernoulli_vs_cr_variance_gap(table, 12)
    small = PotentialTable(y1=np.zeros(12), y0=np.zeros(12))
    with pytest.raises(ValidationError, match="degenerate-draw mass"):
        bernoulli_vs_cr_variance_gap(small, 1)


def test_all_verify_checks_pass(oracle_design):
    graph, clustering, counts, model, table = oracle_design
    for name in CHECKS:
        outcome = run_check(name, graph, clustering, counts, model, table)
        assert outcome["passed"], f"{name}: {outcome['detail']}"


def test_enumeration_is_deterministic(oracle_design):
    _, clustering, counts, _, table = oracle_design
    spec = EnumerationSpec(
        design="hierarchical", outcomes=table, statistic="delta",
        clustering=clustering, counts=counts,
    )
    assert enumerate_moments(spec) == enumerate_moments(spec)
