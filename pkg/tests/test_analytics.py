import numpy as np
import pytest

from attnflow import analytics
from attnflow.core import (
    ACCEL_SMALL,
    INTRA_LEVEL,
    MappingTemplate,
    Operand,
    OPERANDS,
    Workload,
    make_template,
    validate_template,
)
from attnflow.encoding import enumerate_tilings
from attnflow.enumeration import base_templates

B_STREAM = (1, 2, 2, 2, 1, 1, 1, 1)
B_RE = (2, 2, 2, 2, 1, 1, 1, 1)


def test_buffer_size_exponents(retain_a_template, recompute_template):
    # A held at the k layer: one tile footprint times the k tile count
    assert analytics.operand_buffer_size(
        recompute_template, Operand.A) == (0, 1, 0, 0, 1, 1, 0, 0)
    assert analytics.operand_buffer_size(
        retain_a_template, Operand.A) == (0, 1, 0, 0, 1, 1, 0, 0)
    # streamed operands reserve exactly one tile
    assert analytics.operand_buffer_size(
        retain_a_template, Operand.B) == (0, 0, 0, 0, 0, 1, 1, 0)
    # E held at the j layer keeps all j tiles of one i stripe
    assert analytics.operand_buffer_size(
        retain_a_template, Operand.E) == (0, 0, 0, 1, 1, 0, 0, 1)


def test_overall_buffer_size_walkthroughs(retain_a_template,
                                          recompute_template):
    assert analytics.overall_buffer_size(retain_a_template, B_STREAM) == 6
    assert analytics.overall_buffer_size(recompute_template, B_RE) == 5


def test_operator_buffer_sizes_exclude_streamed_other_side(
        retain_a_template):
    op1 = analytics.eval_terms(
        analytics.operator_buffer_size(retain_a_template, "Op1"), B_STREAM)
    op2 = analytics.eval_terms(
        analytics.operator_buffer_size(retain_a_template, "Op2"), B_STREAM)
    # streamed D does not occupy space while the producer runs, held E does
    assert op1 == 6
    assert op2 == 6


def test_dram_access_walkthrough_values(retain_a_template):
    per_op = {op: analytics.eval_exponents(
        analytics.operand_dram_access(retain_a_template, op)[1], B_STREAM)
        * analytics.operand_dram_access(retain_a_template, op)[0]
        for op in OPERANDS}
    assert per_op == {Operand.A: 2, Operand.B: 4, Operand.C: 0,
                      Operand.D: 4, Operand.E: 2}
    assert analytics.total_dram_access(retain_a_template, B_STREAM) == 12


def test_dram_access_recompute_values(recompute_template):
    t = recompute_template
    assert analytics.total_dram_access(t, B_RE) == 32
    coeff, exps = analytics.operand_dram_access(t, Operand.A)
    # A fetched exactly once: its traffic equals the matrix size
    assert coeff == 1 and exps == (1, 1, 0, 0, 1, 1, 0, 0)
    coeff, exps = analytics.operand_dram_access(t, Operand.D)
    # D reloaded once per i tile on top of its own size
    assert coeff == 1 and exps == (1, 0, 1, 1, 0, 0, 1, 1)


def test_intermediate_never_hits_dram(retain_a_template, recompute_template):
    for t in (retain_a_template, recompute_template):
        coeff, _ = analytics.operand_dram_access(t, Operand.C)
        assert coeff == 0


def test_fully_resident_dram_is_matrix_sizes():
    t = make_template("iklj", {"A": 0, "B": 0, "C": 0, "D": 0, "E": 0})
    b = (1, 1, 1, 1, 8, 8, 8, 8)
    assert analytics.total_dram_access(t, b) == 64 * 4


def test_mac_count_recompute_scaling(retain_a_template, recompute_template):
    w = Workload(4, 4, 4, 4)
    assert analytics.mac_count(w, retain_a_template, B_STREAM) == 64 + 64
    # the producer re-runs once per j tile
    assert analytics.mac_count(w, recompute_template, B_RE) == 2 * 64 + 64


def test_mac_count_without_recompute_ignores_boundary(retain_a_template):
    w = Workload(8, 4, 8, 2)
    vals = {analytics.mac_count(w, retain_a_template, b)
            for b in [(1, 1, 1, 1, 8, 4, 8, 2), (8, 4, 8, 2, 1, 1, 1, 1),
                      (2, 2, 2, 1, 4, 2, 4, 2)]}
    assert vals == {w.mac_count_op1 + w.mac_count_op2}


def test_buf_rf_traffic_weight_stationary(retain_a_template):
    assert analytics.buf_rf_traffic(retain_a_template, B_STREAM) == 32


def test_buf_rf_traffic_modes_differ():
    t_ws = make_template("ilkj", {"A": "k", "B": "intra", "C": "intra",
                                  "D": "intra", "E": "j"}, ("WS", "WS"))
    t_os = make_template("ilkj", {"A": "k", "B": "intra", "C": "intra",
                                  "D": "intra", "E": "j"}, ("OS", "OS"))
    b = (2, 2, 2, 2, 4, 4, 4, 4)
    ws = analytics.buf_rf_traffic(t_ws, b)
    os_ = analytics.buf_rf_traffic(t_os, b)
    assert ws != os_


def test_cycle_terms(retain_a_template, recompute_template):
    assert analytics.cycle_terms(retain_a_template, "Op1") == \
        [(1, (1, 1, 1, 0, 0, 1, 0, 0))]
    assert analytics.cycle_terms(recompute_template, "Op1") == \
        [(1, (1, 1, 1, 1, 0, 1, 0, 0))]
    assert analytics.cycle_terms(retain_a_template, "Op2") == \
        [(1, (1, 0, 1, 1, 0, 0, 1, 0))]


def test_spatial_folding():
    hw = ACCEL_SMALL  # 32x32 PEs
    assert analytics.spatial_factors((1,) * 4 + (32, 8, 32, 8), hw) == (1, 1)
    assert analytics.spatial_factors((1,) * 4 + (64, 8, 40, 8), hw) == (4, 2)


def test_evaluate_latency_is_max_and_util_bounded():
    w = Workload(8, 8, 8, 8)
    rng = np.random.default_rng(3)
    temps = base_templates(False) + base_templates(True)
    tilings = enumerate_tilings(w).columns
    for _ in range(60):
        t = temps[rng.integers(len(temps))]
        b = tilings[rng.integers(len(tilings))]
        m = analytics.evaluate(w, t, b, ACCEL_SMALL)
        assert m.latency_cycles == max(m.compute_cycles, m.dram_cycles)
        assert 0 < m.utilization <= 1
        assert m.energy == pytest.approx(
            m.energy_dram + m.energy_sram + m.energy_compute
            + m.energy_softmax)


def test_evaluate_head_scaling():
    w1 = Workload(8, 8, 8, 8, heads=1)
    w8 = Workload(8, 8, 8, 8, heads=8)
    t = make_template("iklj", {"A": 0, "B": 0, "C": 0, "D": 0, "E": 0})
    b = (2, 2, 2, 2, 4, 4, 4, 4)
    m1 = analytics.evaluate(w1, t, b, ACCEL_SMALL)
    m8 = analytics.evaluate(w8, t, b, ACCEL_SMALL)
    assert m8.energy == 8 * m1.energy
    assert m8.dram_elems == 8 * m1.dram_elems
    # 8 heads round-robin over 4 arrays
    assert m8.compute_cycles == 2 * m1.compute_cycles


def test_dram_lower_bound_random_mappings():
    rng = np.random.default_rng(11)
    w = Workload(8, 4, 8, 4)
    floor = 8 * 4 + 4 * 8 + 8 * 4 + 8 * 4
    temps = base_templates(False) + base_templates(True)
    tilings = enumerate_tilings(w).columns
    for _ in range(300):
        t = temps[rng.integers(len(temps))]
        b = tilings[rng.integers(len(tilings))]
        assert analytics.total_dram_access(t, b) >= floor


def _move_level_out(t: MappingTemplate, op: Operand):
    lvl = t.level(op)
    new = 3 if lvl == INTRA_LEVEL else lvl - 1
    if new < 0:
        return None
    levels = list(t.levels)
    levels[OPERANDS.index(op)] = new
    cand = MappingTemplate(t.loop_order, tuple(levels), t.stationary)
    return cand if validate_template(cand) else None


def test_retention_monotonicity():
    # moving a level outward never increases that operand's DRAM traffic
    # and never shrinks either operator's working set
    rng = np.random.default_rng(5)
    temps = base_templates(False) + base_templates(True)
    tilings = enumerate_tilings(Workload(8, 8, 8, 8)).columns
    checked = 0
    for _ in range(400):
        t = temps[rng.integers(len(temps))]
        op = OPERANDS[rng.integers(5)]
        t_out = _move_level_out(t, op)
        if t_out is None:
            continue
        b = tilings[rng.integers(len(tilings))]
        da = analytics.eval_terms(
            [analytics.operand_dram_access(t, op)], b)
        da_out = analytics.eval_terms(
            [analytics.operand_dram_access(t_out, op)], b)
        assert da_out <= da
        for which in ("Op1", "Op2"):
            bs = analytics.eval_terms(
                analytics.operator_buffer_size(t, which), b)
            bs_out = analytics.eval_terms(
                analytics.operator_buffer_size(t_out, which), b)
            assert bs_out >= bs
        checked += 1
    assert checked > 100
