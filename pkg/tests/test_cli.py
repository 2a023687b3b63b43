import json

import numpy as np
import pytest

from conftest import fixture_path
from spilltest.cli import main


def run_cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture
def workspace(tmp_path):
    spec = tmp_path / "sbm.json"
    spec.write_text(
        json.dumps(
            {"num_blocks": 8, "block_size": 10, "p_intra": 0.35, "p_inter": 0.03, "seed": 77}
        )
    )
    return tmp_path


def build_pipeline(ws, suffix=""):
    edges = ws / f"g{suffix}.edges"
    blocks = ws / f"blocks{suffix}.csv"
    meta = ws / f"meta{suffix}.json"
    assert run_cli("graph", "--spec", ws / "sbm.json", "--out-edges", edges,
                   "--out-clusters", blocks, "--out-meta", meta) == 0
    clusters = ws / f"c{suffix}.csv"
    metrics = ws / f"m{suffix}.json"
    assert run_cli("cluster", "--edges", edges, "--clusters", 8, "--leniency", 0.1,
                   "--iterations", 4, "--seed", 42, "--rebalance",
                   "--out-clusters", clusters, "--out-metrics", metrics) == 0
    assignment = ws / f"a{suffix}.csv"
    counts = ws / f"counts{suffix}.json"
    assert run_cli("assign", "--clusters-file", clusters, "--seed", 44,
                   "--out-assignment", assignment, "--out-counts", counts) == 0
    return edges, clusters, metrics, assignment, counts


def test_pipeline_and_byte_identical_reruns(workspace):
    first = build_pipeline(workspace, "1")
    # Rerun with identical inputs/seeds into new paths named the same way in
    # a sibling directory, then compare bytes.
    sibling = workspace / "again"
    sibling.mkdir()
    (sibling / "sbm.json").write_text((workspace / "sbm.json").read_text())
    second = build_pipeline(sibling, "1")
    for a, b in zip(first, second):
        if a.suffix == ".json":
            # Manifests embed absolute paths; compare the payloads instead.
            pa = json.loads(a.read_text())
            pb = json.loads(b.read_text())
            pa.pop("manifest"), pb.pop("manifest")
            assert pa == pb
        else:
            assert a.read_bytes() == b.read_bytes()


def test_cluster_metrics_on_clique_fixture(tmp_path):
    metrics = tmp_path / "m.json"
    clusters = tmp_path / "c.csv"
    code = run_cli("cluster", "--edges", fixture_path("cliquepair.edges"),
                   "--clusters", 2, "--iterations", 3, "--seed", 0,
                   "--out-clusters", clusters, "--out-metrics", metrics)
    assert code == 0
    payload = json.loads(metrics.read_text())
    assert payload["metrics"]["internal_edge_fraction"] == pytest.approx(12 / 13)


def test_cluster_rejects_zero_clusters(tmp_path):
    code = run_cli("cluster", "--edges", fixture_path("cliquepair.edges"),
                   "--clusters", 0, "--seed", 0,
                   "--out-clusters", tmp_path / "c.csv", "--out-metrics", tmp_path / "m.json")
    assert code == 1


def test_usage_error_exit_code():
    assert run_cli("cluster", "--no-such-flag") == 1
    assert run_cli("--help") == 0


def test_assign_rejects_unbalanced_clustering(tmp_path):
    clusters = tmp_path / "c.csv"
    clusters.write_text("unit_id,cluster_id\n0,0\n1,0\n2,0\n3,1\n")
    code = run_cli("assign", "--clusters-file", clusters, "--seed", 1,
                   "--out-assignment", tmp_path / "a.csv", "--out-counts", tmp_path / "k.json")
    assert code == 1


def test_assign_rejects_odd_cluster_count(tmp_path):
    clusters = tmp_path / "c.csv"
    rows = ["unit_id,cluster_id"] + [f"{i},{i // 2}" for i in range(6)]
    clusters.write_text("\n".join(rows) + "\n")
    code = run_cli("assign", "--clusters-file", clusters, "--seed", 1,
                   "--out-assignment", tmp_path / "a.csv", "--out-counts", tmp_path / "k.json")
    assert code == 1


def test_analyze_table_fixture(tmp_path):
    report = tmp_path / "r.json"
    code = run_cli("analyze",
                   "--assignment", fixture_path("table_check_assignment.csv"),
                   "--outcomes", fixture_path("table_check_outcomes.csv"),
                   "--clusters-file", fixture_path("table_check_clusters.csv"),
                   "--rule", "gaussian",
                   "--out-report", report)
    assert code == 0
    payload = json.loads(report.read_text())["report"]
    assert payload["delta"] == pytest.approx(-3.3, abs=1e-12)
    assert payload["sigma_hat_sq"] == pytest.approx(8.1**2, abs=1e-9)
    assert payload["p_gaussian"] == pytest.approx(0.684, abs=0.01)
    assert payload["decision"] == "fail-to-reject"


def test_analyze_missing_outcomes_lists_units(workspace, capsys):
    edges, clusters, metrics, assignment, counts = build_pipeline(workspace)
    outcomes = workspace / "y.csv"
    outcomes.write_text("unit_id,y\n" + "\n".join(f"{i},1.0" for i in range(40)) + "\n")
    code = run_cli("analyze", "--assignment", assignment, "--outcomes", outcomes,
                   "--clusters-file", clusters, "--out-report", workspace / "r.json")
    assert code == 1
    err = capsys.readouterr().err
    assert "missing" in err and "40" in err


def test_analyze_constant_outcomes_fail_to_reject(workspace):
    edges, clusters, metrics, assignment, counts = build_pipeline(workspace)
    outcomes = workspace / "y.csv"
    outcomes.write_text("unit_id,y\n" + "\n".join(f"{i},2.5" for i in range(80)) + "\n")
    report = workspace / "r.json"
    assert run_cli("analyze", "--assignment", assignment, "--outcomes", outcomes,
                   "--clusters-file", clusters, "--out-report", report) == 0
    payload = json.loads(report.read_text())["report"]
    assert payload["delta"] == 0.0
    assert payload["decision"] == "fail-to-reject"


def test_simulate_command_deterministic(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({
        "study": "type1", "replications": 80, "seed": 3, "num_clusters": 8, "cluster_size": 4,
    }))
    out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    assert run_cli("simulate", "--config", cfg, "--out-csv", out1, "--threads", 1) == 0
    assert run_cli("simulate", "--config", cfg, "--out-csv", out2, "--threads", 2) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_simulate_rejects_malformed_config(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert run_cli("simulate", "--config", cfg, "--out-csv", tmp_path / "o.csv") == 1


def test_simulate_study_mismatch(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({
        "study": "type1", "replications": 10, "seed": 3, "num_clusters": 8, "cluster_size": 2,
    }))
    assert run_cli("simulate", "--config", cfg, "--study", "power") == 1


def test_simulate_checks_study_properties(tmp_path):
    # A small power study must come out monotone within tolerance (exit 0);
    # a doctored report raises the property failure (exit 2).
    cfg = tmp_path / "power.json"
    cfg.write_text(json.dumps({
        "study": "power", "replications": 40, "seed": 4,
        "sbm": [{"num_blocks": 8, "block_size": 10, "p_intra": 0.4, "p_inter": 0.04, "seed": 2}],
        "gamma_grid": [0.0, 1.0], "noise_sd": 1.0,
    }))
    assert run_cli("simulate", "--config", cfg, "--out-csv", tmp_path / "p.csv",
                   "--threads", 1) == 0

    import spilltest.cli as cli_mod
    from spilltest.sim import SimRow

    def doctored(cfg_obj):
        row = dict(study="power", setting=0, rho_c=0.4, replications=40,
                   rejection_rate_gaussian=0.0, mc_se=0.0, mean_delta=0.0, delta_se=0.0,
                   mean_sigma_hat_sq=1.0, ratio_mean=0.0, ratio_q10=0.0, ratio_q90=0.0)
        rows = (SimRow(gamma=0.0, rejection_rate=0.9, **row),
                SimRow(gamma=1.0, rejection_rate=0.1, **row))
        from spilltest.sim import SimReport
        return SimReport(config=cfg_obj, rows=rows)

    original = cli_mod.run_study
    cli_mod.run_study = doctored
    try:
        assert run_cli("simulate", "--config", cfg, "--out-csv", tmp_path / "bad.csv") == 2
    finally:
        cli_mod.run_study = original


def test_oracle_command_passes_and_writes_report(tmp_path):
    report = tmp_path / "checks.json"
    assert run_cli("oracle", "--check", "all", "--out-report", report) == 0
    payload = json.loads(report.read_text())
    assert all(c["passed"] for c in payload["checks"])
    assert run_cli("oracle", "--check", "interference-means") == 0


def test_oracle_failure_exit_code(monkeypatch):
    from spilltest import verify

    def broken(graph, clustering, counts, model, table):
        return {"name": "means", "passed": False, "detail": "forced", "values": {}}

    monkeypatch.setitem(verify.CHECKS, "means", broken)
    assert run_cli("oracle", "--check", "means") == 2


def test_stratified_cli_round_trip(tmp_path):
    # 16 clusters so each of 2 strata supports the per-stratum bound.
    spec = tmp_path / "sbm.json"
    spec.write_text(json.dumps(
        {"num_blocks": 16, "block_size": 10, "p_intra": 0.35, "p_inter": 0.02, "seed": 78}
    ))
    edges, blocks = tmp_path / "g.edges", tmp_path / "b.csv"
    assert run_cli("graph", "--spec", spec, "--out-edges", edges,
                   "--out-clusters", blocks, "--out-meta", tmp_path / "meta.json") == 0
    strata = tmp_path / "s.csv"
    assert run_cli("stratify", "--edges", edges, "--clusters-file", blocks,
                   "--strata", 2, "--seed", 5, "--out-strata", strata) == 0
    assignment, counts = tmp_path / "a.csv", tmp_path / "k.json"
    assert run_cli("assign", "--clusters-file", blocks, "--stratification", strata,
                   "--seed", 44, "--out-assignment", assignment, "--out-counts", counts) == 0
    payload = json.loads(counts.read_text())
    assert len(payload["counts"]["strata"]) == 2
    outcomes = tmp_path / "y.csv"
    rng = np.random.default_rng(1)
    outcomes.write_text(
        "unit_id,y\n" + "\n".join(f"{i},{rng.normal()!r}" for i in range(160)) + "\n"
    )
    report = tmp_path / "r.json"
    assert run_cli("analyze", "--assignment", assignment, "--outcomes", outcomes,
                   "--clusters-file", blocks, "--stratification", strata,
                   "--out-report", report) == 0
    body = json.loads(report.read_text())["report"]
    assert body["stratified"] and len(body["strata"]) == 2
