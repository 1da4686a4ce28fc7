import dataclasses

import numpy as np
import pytest

from attnflow import search
from attnflow.cli import CSV_COLUMNS
from attnflow.core import ACCEL_SMALL, Workload

W8 = Workload(8, 8, 8, 8)


def test_optimize_energy_frozen():
    r = search.optimize(W8, ACCEL_SMALL, objective="energy")
    assert r.feasible
    assert r.best.mapping_id == "nr-WS-WS:2029:0"
    assert r.best.metrics.energy == 55936.0
    assert r.best.metrics.latency_cycles == 16
    assert r.best.metrics.dram_elems == 256
    assert r.rows_searched == 78
    assert r.tilings == 256
    assert r.cells == 78 * 256


def test_optimize_latency_and_edp_frozen():
    lat = search.optimize(W8, ACCEL_SMALL, objective="latency")
    assert lat.best.metrics.latency_cycles == 16
    edp = search.optimize(W8, ACCEL_SMALL, objective="edp")
    m = edp.best.metrics
    assert m.energy * m.latency_cycles == 894976.0


@pytest.mark.parametrize("objective", search.OBJECTIVES)
def test_prune_matches_full_search(objective):
    pruned = search.optimize(W8, ACCEL_SMALL, objective=objective)
    full = search.optimize(W8, ACCEL_SMALL, objective=objective, prune=False)
    assert full.rows_searched == 37300
    for field in ("energy", "latency_cycles", "dram_elems"):
        assert getattr(pruned.best.metrics, field) == \
            getattr(full.best.metrics, field)


def test_optimize_deterministic():
    a = search.optimize(W8, ACCEL_SMALL, objective="energy")
    b = search.optimize(W8, ACCEL_SMALL, objective="energy")
    assert a.best.mapping_id == b.best.mapping_id
    assert a.best.boundary == b.best.boundary


def test_threads_do_not_change_result():
    solo = search.optimize(W8, ACCEL_SMALL, objective="energy")
    multi = search.optimize(W8, ACCEL_SMALL, objective="energy", threads=4)
    assert solo.best.mapping_id == multi.best.mapping_id
    assert solo.best.metrics == multi.best.metrics


def test_objective_consistency_with_front():
    front = search.pareto_front(W8, ACCEL_SMALL)
    assert front
    best_e = search.optimize(W8, ACCEL_SMALL, objective="energy")
    best_l = search.optimize(W8, ACCEL_SMALL, objective="latency")
    assert best_e.best.metrics.energy == min(p.energy for p in front)
    assert best_l.best.metrics.latency_cycles == \
        min(p.latency_cycles for p in front)


def test_front_frozen_and_prune_invariant():
    pruned = search.pareto_front(W8, ACCEL_SMALL)
    full = search.pareto_front(W8, ACCEL_SMALL, prune=False)
    assert [(p.energy, p.latency_cycles) for p in pruned] == \
        [(p.energy, p.latency_cycles) for p in full]
    assert [(p.energy, p.latency_cycles) for p in pruned] == [(55936.0, 16)]
    assert pruned[0].recompute_classes == (False, True)


def test_front_is_strictly_tradeoff_ordered():
    # latency ascending, energy descending, no dominated points
    w = Workload(8, 2, 8, 4)
    front = search.pareto_front(w, ACCEL_SMALL)
    lats = [p.latency_cycles for p in front]
    ens = [p.energy for p in front]
    assert lats == sorted(lats)
    assert ens == sorted(ens, reverse=True)
    assert len(set(lats)) == len(lats)
    assert len(set(ens)) == len(ens)


def test_infeasible_reports_min_buffer():
    tiny = dataclasses.replace(ACCEL_SMALL, buffer_bytes=0)
    r = search.optimize(W8, tiny, objective="energy")
    assert not r.feasible
    assert r.best is None
    assert r.min_buffer_bytes == 4
    roomy = dataclasses.replace(ACCEL_SMALL, buffer_bytes=r.min_buffer_bytes)
    assert search.optimize(W8, roomy, objective="energy").feasible


def test_full_buffer_reaches_compulsory_traffic():
    # one resident copy of every operand: DRAM touches each element once
    r = search.optimize(W8, ACCEL_SMALL, objective="energy")
    compulsory = 8 * 8 * 3 + 8 * 8  # A, B, D loads + E stores; C never moves
    assert r.best.metrics.dram_elems == compulsory == 256


def test_dram_vs_buffer_curve_frozen():
    budgets = [64, 128, 256, 512, 1024]
    curve = search.dram_vs_buffer_curve(W8, ACCEL_SMALL, budgets)
    assert [c["buffer_bytes"] for c in curve] == budgets
    assert all(c["feasible"] for c in curve)
    dram = [c["dram_elems"] for c in curve]
    assert dram == [384, 256, 256, 256, 256]
    assert all(a >= b for a, b in zip(dram, dram[1:]))


def test_unfused_baseline_frozen():
    unf = search.unfused_baseline(W8, ACCEL_SMALL)
    assert unf["feasible"]
    assert unf["dram_elems"] == 384
    assert unf["c_traffic_elems"] == 2 * 8 * 8
    fused = search.optimize(W8, ACCEL_SMALL, objective="energy")
    assert unf["dram_elems"] == \
        fused.best.metrics.dram_elems + unf["c_traffic_elems"]


def test_head_count_scales_energy_linearly():
    base = search.optimize(W8, ACCEL_SMALL, objective="energy")
    many = search.optimize(Workload(8, 8, 8, 8, heads=8), ACCEL_SMALL,
                           objective="energy")
    assert many.best.metrics.energy == 8 * base.best.metrics.energy
    assert many.best.mapping_id == base.best.mapping_id


def test_solution_record_matches_csv_columns():
    r = search.optimize(W8, ACCEL_SMALL, objective="energy")
    rec = search.solution_record(r.best, ACCEL_SMALL)
    assert list(rec.keys()) == CSV_COLUMNS


def test_enumerate_tilings_checked_rejects_bad_workload():
    with pytest.raises(ValueError):
        search.enumerate_tilings_checked(Workload(0, 8, 8, 8))


def test_eps_front_helper():
    energy = np.array([10.0, 12.0, 10.0, 9.0, 15.0])
    latency = np.array([5.0, 4.0, 6.0, 7.0, 3.0])
    keep = search._eps_front(energy, latency)
    kept = sorted(zip(energy[keep], latency[keep]))
    assert kept == [(9.0, 7.0), (10.0, 5.0), (12.0, 4.0), (15.0, 3.0)]
