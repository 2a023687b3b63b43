import numpy as np
import pytest
from scipy import stats

from spilltest import (
    Clustering,
    DesignCounts,
    ValidationError,
    bernoulli_rerandomized,
    cluster_randomization,
    complete_randomization,
    hierarchical_assign,
    marginal_treatment_probability,
    stratified_hierarchical_assign,
)
from spilltest.assign import (
    _hierarchical_from_streams,
    assignment_from_vectors,
    load_assignment_vectors,
    save_assignment,
)
from spilltest.partition import Stratification


@pytest.fixture
def clusters8():
    return Clustering.from_assignment(np.repeat(np.arange(4), 2))


@pytest.fixture
def counts8():
    return DesignCounts(
        n_cr=4, n_cbr=4, m_cr=2, m_cbr=2, n_cr_t=2, n_cr_c=2, m_cbr_t=1, m_cbr_c=1
    )


def test_complete_randomization_counts():
    a = complete_randomization(2, 1, seed=0)
    assert a.z.sum() == 1
    a = complete_randomization(10, 3, seed=1)
    assert a.z.sum() == 3 and a.n_t == 3 and a.n_c == 7


def test_complete_randomization_validation():
    with pytest.raises(ValidationError):
        complete_randomization(3, 3, seed=0)
    with pytest.raises(ValidationError):
        complete_randomization(3, 0, seed=0)


def test_complete_randomization_uniform_law():
    # N=4, n_t=2: each of the 6 patterns should appear with frequency 1/6.
    draws = 100_000
    counts: dict[bytes, int] = {}
    for seed in range(draws):
        z = complete_randomization(4, 2, seed=seed).z
        counts[z.tobytes()] = counts.get(z.tobytes(), 0) + 1
    assert len(counts) == 6
    chi = stats.chisquare(list(counts.values()))
    assert chi.pvalue > 0.001


def test_bernoulli_never_degenerate():
    for seed in range(300):
        a = bernoulli_rerandomized(4, 0.9, seed=seed)
        assert 0 < a.z.sum() < 4
        assert a.n_t + a.n_c == 4
        assert a.p == 0.9


def test_bernoulli_two_unit_law():
    # N=2, p=0.5 conditioned off degenerate draws: the two mixed patterns
    # are equally likely.
    hits = {(0, 1): 0, (1, 0): 0}
    draws = 4000
    for seed in range(draws):
        z = tuple(bernoulli_rerandomized(2, 0.5, seed=seed).z.tolist())
        hits[z] += 1
    assert sum(hits.values()) == draws
    chi = stats.chisquare(list(hits.values()))
    assert chi.pvalue > 0.001


def test_bernoulli_validation():
    with pytest.raises(ValidationError):
        bernoulli_rerandomized(5, 0.0, seed=0)
    with pytest.raises(ValidationError):
        bernoulli_rerandomized(5, 1.0, seed=0)


def test_cluster_randomization_purity(clusters8):
    for seed in range(50):
        a = cluster_randomization(clusters8, 2, seed=seed)
        for c in range(4):
            members = clusters8.members(c)
            assert len(set(a.z[members].tolist())) == 1


def test_cluster_randomization_two_clusters():
    c = Clustering.from_assignment([0, 0, 1, 1])
    a = cluster_randomization(c, 1, seed=0)
    assert a.z.sum() == 2  # one whole cluster of two units


def test_cluster_randomization_uniform_law(clusters8):
    draws = 30_000
    counts: dict[bytes, int] = {}
    for seed in range(draws):
        z = cluster_randomization(clusters8, 2, seed=seed).z
        counts[z.tobytes()] = counts.get(z.tobytes(), 0) + 1
    assert len(counts) == 6
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


def test_cluster_randomization_validation(clusters8):
    with pytest.raises(ValidationError):
        cluster_randomization(clusters8, 0, seed=0)
    with pytest.raises(ValidationError):
        cluster_randomization(clusters8, 4, seed=0)


def test_hierarchical_count_contract(clusters8, counts8):
    for seed in range(40):
        a = hierarchical_assign(clusters8, counts8, seed=seed)
        cr = a.unit_arm == 1
        assert cr.sum() == 4
        assert a.treatment[cr].sum() == 2
        cbr_treated_clusters = ((a.cluster_arm == 0) & (a.cluster_treatment == 1)).sum()
        assert cbr_treated_clusters == 1
        # Treatment constant within cluster-arm clusters.
        for c in np.flatnonzero(a.cluster_arm == 0):
            members = clusters8.members(c)
            assert len(set(a.treatment[members].tolist())) == 1


def test_hierarchical_bernoulli_mechanism(clusters8, counts8):
    for seed in range(60):
        a = hierarchical_assign(clusters8, counts8, seed=seed, cr_arm_mechanism="bernoulli")
        cr = a.unit_arm == 1
        treated = a.treatment[cr].sum()
        assert 0 < treated < 4


def test_hierarchical_rejects_unbalanced(counts8):
    lopsided = Clustering.from_assignment([0, 0, 0, 1, 2, 2, 3, 3])
    with pytest.raises(ValidationError, match="equal cluster sizes"):
        hierarchical_assign(lopsided, counts8, seed=0)


def test_hierarchical_rejects_mismatched_counts(clusters8):
    wrong = DesignCounts(
        n_cr=6, n_cbr=6, m_cr=3, m_cbr=3, n_cr_t=3, n_cr_c=3, m_cbr_t=1, m_cbr_c=2
    )
    with pytest.raises(ValidationError):
        hierarchical_assign(clusters8, wrong, seed=0)


def test_symmetric_counts_rejects_odd():
    with pytest.raises(ValidationError):
        DesignCounts.symmetric(10, 5)  # odd cluster count
    with pytest.raises(ValidationError):
        DesignCounts.symmetric(6, 2)  # arm of 3 units cannot split in half
    counts = DesignCounts.symmetric(8, 4)
    assert counts.m_cbr_t == 1 and counts.n_cr_t == 2


def test_design_counts_invariants():
    with pytest.raises(ValidationError):
        DesignCounts(n_cr=4, n_cbr=4, m_cr=2, m_cbr=2, n_cr_t=3, n_cr_c=2, m_cbr_t=1, m_cbr_c=1)
    with pytest.raises(ValidationError):
        DesignCounts(n_cr=4, n_cbr=4, m_cr=1, m_cbr=3, n_cr_t=2, n_cr_c=2, m_cbr_t=2, m_cbr_c=1)


def test_seed_determinism(clusters8, counts8):
    a = hierarchical_assign(clusters8, counts8, seed=11)
    b = hierarchical_assign(clusters8, counts8, seed=11)
    c = hierarchical_assign(clusters8, counts8, seed=12)
    assert np.array_equal(a.treatment, b.treatment)
    assert np.array_equal(a.unit_arm, b.unit_arm)
    assert not (
        np.array_equal(a.treatment, c.treatment) and np.array_equal(a.unit_arm, c.unit_arm)
    )


def test_substreams_are_independent(clusters8, counts8):
    # Changing only the cluster-arm stream must leave the arm split and the
    # unit-randomized arm's treatment untouched.
    root = np.random.SeedSequence(7)
    arm, cr, cbr = root.spawn(3)
    alt_cbr = np.random.SeedSequence(99)
    a = _hierarchical_from_streams(clusters8, counts8, arm, cr, cbr, "complete", "t")
    b = _hierarchical_from_streams(clusters8, counts8, arm, cr, alt_cbr, "complete", "t")
    assert np.array_equal(a.unit_arm, b.unit_arm)
    cr_units = a.unit_arm == 1
    assert np.array_equal(a.treatment[cr_units], b.treatment[cr_units])
    # And changing the unit-arm stream leaves the cluster arm's split alone.
    alt_cr = np.random.SeedSequence(100)
    c = _hierarchical_from_streams(clusters8, counts8, arm, alt_cr, cbr, "complete", "t")
    assert np.array_equal(a.cluster_treatment, c.cluster_treatment)


def test_marginal_probability_symmetric(counts8):
    assert marginal_treatment_probability(counts8) == pytest.approx(0.5)


def test_stratified_counts_respected():
    clustering = Clustering.from_assignment(np.repeat(np.arange(8), 2))
    strat = Stratification(
        num_strata=2,
        stratum_of=np.array([0, 0, 0, 0, 1, 1, 1, 1]),
        strata_sizes=np.array([4, 4]),
    )
    for seed in range(25):
        parts = stratified_hierarchical_assign(clustering, strat, seed=seed)
        assert len(parts) == 2
        for a in parts:
            cr = a.unit_arm == 1
            assert cr.sum() == a.counts.n_cr
            assert a.treatment[cr].sum() == a.counts.n_cr_t
        # Strata cover disjoint unit sets.
        assert not set(parts[0].unit_ids.tolist()) & set(parts[1].unit_ids.tolist())


def test_stratified_independence_across_strata():
    clustering = Clustering.from_assignment(np.repeat(np.arange(8), 2))
    strat = Stratification(
        num_strata=2,
        stratum_of=np.array([0, 0, 0, 0, 1, 1, 1, 1]),
        strata_sizes=np.array([4, 4]),
    )
    draws = 3000
    first_arm = np.empty(draws)
    second_arm = np.empty(draws)
    for seed in range(draws):
        parts = stratified_hierarchical_assign(clustering, strat, seed=seed)
        first_arm[seed] = parts[0].cluster_arm[0]
        second_arm[seed] = parts[1].cluster_arm[0]
    corr = np.corrcoef(first_arm, second_arm)[0, 1]
    assert abs(corr) < 4.0 / np.sqrt(draws)


def test_stratified_single_stratum_matches_plain_law():
    clustering = Clustering.from_assignment(np.repeat(np.arange(4), 2))
    strat = Stratification(
        num_strata=1, stratum_of=np.zeros(4, dtype=np.int64), strata_sizes=np.array([4])
    )
    parts = stratified_hierarchical_assign(clustering, strat, seed=0)
    assert len(parts) == 1
    a = parts[0]
    assert a.counts == DesignCounts.symmetric(8, 4)
    assert np.array_equal(a.unit_ids, np.arange(8))


def test_stratified_infeasible_names_stratum():
    # Stratum 0 is a workable 4-cluster design; stratum 1 has an odd cluster
    # count and cannot split into equal arms.
    clustering = Clustering.from_assignment(np.repeat(np.arange(7), 2))
    strat = Stratification(
        num_strata=2,
        stratum_of=np.array([0, 0, 0, 0, 1, 1, 1]),
        strata_sizes=np.array([4, 3]),
    )
    with pytest.raises(ValidationError, match="stratum 1"):
        stratified_hierarchical_assign(clustering, strat, seed=0)


def test_assignment_csv_round_trip(tmp_path, clusters8, counts8):
    a = hierarchical_assign(clusters8, counts8, seed=13)
    path = tmp_path / "a.csv"
    save_assignment(a, path)
    unit_arm, treatment = load_assignment_vectors(path)
    assert np.array_equal(unit_arm, a.unit_arm)
    assert np.array_equal(treatment, a.treatment)
    rebuilt = assignment_from_vectors(clusters8, unit_arm, treatment)
    assert rebuilt.counts == a.counts
    assert np.array_equal(rebuilt.cluster_treatment, a.cluster_treatment)


def test_assignment_from_vectors_rejects_corrupt(clusters8):
    unit_arm = np.array([1, 0, 1, 1, 0, 0, 0, 0], dtype=np.int8)  # cluster 0 spans arms
    treatment = np.zeros(8, dtype=np.int8)
    with pytest.raises(ValidationError, match="spans both arms"):
        assignment_from_vectors(clusters8, unit_arm, treatment)
    unit_arm = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.int8)
    treatment = np.array([1, 1, 0, 0, 1, 0, 0, 0], dtype=np.int8)  # mixed cbr cluster
    with pytest.raises(ValidationError, match="mixed treatment"):
        assignment_from_vectors(clusters8, unit_arm, treatment)
