import collections

import pytest

from polycode.codes import HeptagonLocal, Polygon, RaidMirror, Replication
from polycode.mapsched import (
    LOCALITY_COLUMNS,
    SUMMARY_COLUMNS,
    Assignment,
    ClusterModel,
    OverloadError,
    Workload,
    build_cluster,
    generate_workload,
    locality_sweep,
    run_scheduler,
    schedule_delay,
    schedule_maxmatch,
    schedule_peeling,
    summarize_locality,
)


def make_cluster(catalog, nodes, slots):
    return ClusterModel("test", nodes, slots, {b: frozenset(h) for b, h in catalog.items()})


def occupancy_ok(cluster, assignment):
    counts = collections.Counter(assignment.node_of)
    return all(c <= cluster.slots_per_node for c in counts.values())


# ---------------------------------------------------------------------------
# cluster building


def test_pentagon_cluster_structure():
    cluster = build_cluster(Polygon(5), 25, 4, stripes=5, seed=3)
    assert len(cluster.catalog) == 50
    incidences = collections.Counter()
    for hosts in cluster.catalog.values():
        assert len(hosts) == 2
        for h in hosts:
            incidences[h] += 1
    # five disjoint windows, one stripe each: 4 blocks per node
    assert set(incidences.values()) == {4}
    assert len(incidences) == 25


def test_replication_cluster():
    cluster = build_cluster(Replication(2), 25, 4, stripes=100, seed=4)
    assert len(cluster.catalog) == 100
    for hosts in cluster.catalog.values():
        assert len(hosts) == 2


def test_raidm_cluster():
    cluster = build_cluster(RaidMirror(9), 25, 4, stripes=10, seed=4)
    assert len(cluster.catalog) == 100  # 10 blocks per stripe


def test_heptagon_local_cluster_excludes_global_node():
    cluster = build_cluster(HeptagonLocal(), 25, 4, stripes=4, seed=5)
    assert len(cluster.catalog) == 4 * 42  # two heptagons, no global parities
    hosts = {h for hset in cluster.catalog.values() for h in hset}
    assert len(hosts) <= 25


def test_cluster_determinism():
    a = build_cluster(Polygon(5), 25, 4, stripes=20, seed=9)
    b = build_cluster(Polygon(5), 25, 4, stripes=20, seed=9)
    assert a == b
    c = build_cluster(Polygon(5), 25, 4, stripes=20, seed=10)
    assert a != c


def test_cluster_validation():
    with pytest.raises(ValueError):
        build_cluster(Polygon(5), 4, 4, stripes=1, seed=0)
    with pytest.raises(ValueError):
        build_cluster(HeptagonLocal(), 13, 4, stripes=1, seed=0)  # needs 14
    with pytest.raises(ValueError):
        build_cluster(Polygon(5), 25, 0, stripes=1, seed=0)


# ---------------------------------------------------------------------------
# workloads


def test_workload_counts_match_load_definition():
    cluster = build_cluster(Replication(2), 100, 4, stripes=200, seed=1)
    workload = generate_workload(cluster, 62.5, seed=2)
    assert len(workload.tasks) == 250
    cluster = build_cluster(Replication(2), 25, 2, stripes=50, seed=1)
    assert len(generate_workload(cluster, 100, seed=2).tasks) == 50


def test_workload_determinism_and_validation():
    cluster = build_cluster(Polygon(5), 25, 4, stripes=10, seed=3)
    a = generate_workload(cluster, 75, seed=4)
    assert a == generate_workload(cluster, 75, seed=4)
    assert all(b in cluster.catalog for b in a.tasks)
    with pytest.raises(ValueError):
        generate_workload(cluster, 0, seed=1)
    with pytest.raises(ValueError):
        generate_workload(cluster, 201, seed=1)
    empty = ClusterModel("x", 4, 2, {})
    with pytest.raises(ValueError):
        generate_workload(empty, 50, seed=1)


# ---------------------------------------------------------------------------
# schedulers on hand-built instances


def test_maxmatch_distinct_hosts_all_local():
    catalog = {b: {b} for b in range(10)}
    cluster = make_cluster(catalog, 10, 1)
    workload = Workload(tuple(range(10)), 100.0)
    a = schedule_maxmatch(cluster, workload)
    assert a.locality_pct == 100.0
    assert occupancy_ok(cluster, a)


def test_maxmatch_capacity_bound():
    # 4 tasks all on node 0 with 2 slots: exactly 2 can be local
    cluster = make_cluster({0: {0}}, 3, 2)
    workload = Workload((0, 0, 0, 0), 100.0)
    a = schedule_maxmatch(cluster, workload)
    assert a.local_tasks == 2
    assert a.remote_blocks == 2
    assert occupancy_ok(cluster, a)


def test_maxmatch_overload():
    cluster = make_cluster({0: {0}}, 2, 1)
    with pytest.raises(OverloadError):
        schedule_maxmatch(cluster, Workload((0, 0, 0), 150.0))


def test_delay_all_local_when_spread():
    catalog = {b: {b} for b in range(8)}
    cluster = make_cluster(catalog, 8, 2)
    a = schedule_delay(cluster, Workload(tuple(range(8)), 50.0), rounds_before_remote=5, seed=1)
    assert a.locality_pct == 100.0


def test_delay_zero_rounds_is_greedy_first_fit():
    cluster = make_cluster({0: {0}, 1: {1}}, 2, 1)
    workload = Workload((0, 1), 100.0)
    a = schedule_delay(cluster, workload, rounds_before_remote=0, seed=0)
    assert occupancy_ok(cluster, a)
    b = schedule_maxmatch(cluster, workload)
    assert a.local_tasks <= b.local_tasks


def test_delay_determinism():
    cluster = build_cluster(Polygon(5), 25, 2, stripes=20, seed=5)
    w = generate_workload(cluster, 100, seed=6)
    a = schedule_delay(cluster, w, seed=7)
    assert a == schedule_delay(cluster, w, seed=7)
    assert occupancy_ok(cluster, a)


def test_peeling_degree_one_first():
    # task 0's only live host is node 0; task 1 could go to node 0 or 1
    cluster = make_cluster({10: {0}, 11: {0, 1}}, 2, 1)
    a = schedule_peeling(cluster, Workload((10, 11), 100.0), seed=0)
    assert a.local == (True, True)
    assert a.node_of == (0, 1)


def test_peeling_never_beats_matching():
    for seed in range(8):
        cluster = build_cluster(Polygon(5), 25, 2, stripes=20, seed=seed)
        w = generate_workload(cluster, 100, seed=seed + 100)
        peel = schedule_peeling(cluster, w, seed=seed)
        match = schedule_maxmatch(cluster, w)
        assert peel.local_tasks <= match.local_tasks
        assert occupancy_ok(cluster, peel)


def test_schedulers_fill_every_task():
    cluster = build_cluster(Polygon(7), 25, 4, stripes=12, seed=3)
    w = generate_workload(cluster, 100, seed=4)
    for name in ("matching", "delay", "peeling"):
        a = run_scheduler(cluster, w, name, seed=5)
        assert a.total == len(w.tasks)
        assert None not in a.node_of
        assert occupancy_ok(cluster, a)


def test_run_scheduler_waves_above_full_load():
    cluster = build_cluster(Replication(2), 25, 2, stripes=100, seed=6)
    w = generate_workload(cluster, 150, seed=7)
    assert len(w.tasks) == 75  # 1.5x the 50 slots
    a = run_scheduler(cluster, w, "matching")
    assert a.total == 75  # two sequential waves
    with pytest.raises(OverloadError):
        schedule_maxmatch(cluster, w)
    with pytest.raises(ValueError):
        run_scheduler(cluster, w, "randomly")


def test_locality_pct_empty_assignment():
    a = Assignment((), ())
    assert a.locality_pct == 100.0
    assert a.remote_blocks == 0


# ---------------------------------------------------------------------------
# sweeps


def test_sweep_rows_schema_and_determinism():
    rows = locality_sweep(["pentagon"], ["delay", "matching"], [2], [50, 100], reps=3, base_seed=1)
    assert len(rows) == 2 * 2 * 3
    for row in rows:
        assert list(row) == LOCALITY_COLUMNS
    again = locality_sweep(["pentagon"], ["delay", "matching"], [2], [50, 100], reps=3, base_seed=1)
    assert rows == again


def test_sweep_shares_instances_across_schedulers():
    rows = locality_sweep(["2-rep"], ["matching", "delay", "peeling"], [2], [100], reps=4, base_seed=2)
    by_instance = {}
    for row in rows:
        by_instance.setdefault(row["seed"], {})[row["scheduler"]] = row
    for group in by_instance.values():
        assert len(group) == 3
        tasks = {r["tasks"] for r in group.values()}
        assert len(tasks) == 1
        assert group["matching"]["locality_pct"] >= group["delay"]["locality_pct"]
        assert group["matching"]["locality_pct"] >= group["peeling"]["locality_pct"]


def test_remote_blocks_consistent_with_locality():
    rows = locality_sweep(["pentagon", "2-rep"], ["delay"], [4], [75], reps=3, base_seed=3)
    for row in rows:
        assert row["remote_blocks"] == row["tasks"] - row["local_tasks"]
        assert row["locality_pct"] == pytest.approx(100.0 * row["local_tasks"] / row["tasks"], abs=1e-3)


def test_summarize_locality():
    rows = locality_sweep(["pentagon"], ["delay"], [2], [100], reps=5, base_seed=4)
    summary = summarize_locality(rows)
    assert len(summary) == 1
    cell = summary[0]
    assert list(cell) == SUMMARY_COLUMNS
    assert cell["reps"] == 5
    values = [r["locality_pct"] for r in rows]
    assert cell["locality_mean"] == pytest.approx(sum(values) / 5, abs=1e-3)


def test_mean_locality_nonincreasing_in_load():
    rows = locality_sweep(
        ["pentagon", "2-rep"], ["delay", "matching"], [2, 4], [25, 50, 75, 100],
        reps=10, base_seed=5,
    )
    summary = summarize_locality(rows)
    series = {}
    for cell in summary:
        key = (cell["scheme"], cell["scheduler"], cell["slots"])
        series.setdefault(key, []).append((cell["load_pct"], cell["locality_mean"]))
    for key, points in series.items():
        points.sort()
        values = [v for _, v in points]
        assert all(a >= b - 1e-9 for a, b in zip(values, values[1:])), (key, values)
