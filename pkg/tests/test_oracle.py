import numpy as np
import pytest

from attnflow import analytics, oracle
from attnflow.core import Operand, Workload, make_template
from attnflow.encoding import enumerate_tilings
from attnflow.enumeration import base_templates

B_STREAM = (1, 2, 2, 2, 1, 1, 1, 1)
B_RE = (2, 2, 2, 2, 1, 1, 1, 1)


def test_unroll_stage_count_and_kinds(retain_a_template):
    stages = oracle.unroll(retain_a_template, B_STREAM)
    kinds = [s.op for s in stages]
    # k_D=2 producer passes per l tile, softmax on the last, then consume
    assert len(stages) == 10
    assert kinds.count(oracle.OP1) == 4
    assert kinds.count(oracle.SOFTMAX) == 2
    assert kinds.count(oracle.OP2) == 4
    assert kinds[:3] == [oracle.OP1, oracle.OP1, oracle.SOFTMAX]


def test_trace_occupancy_walkthrough(retain_a_template):
    stages = oracle.unroll(retain_a_template, B_STREAM)
    trace = oracle.simulate(stages, retain_a_template, B_STREAM)
    assert trace.resident_elems == [3, 4, 3, 5, 6, 6, 6, 5, 6, 6]
    # retention of A and E grows occupancy across the first two stages
    assert trace.resident_elems[0] == 3
    assert trace.resident_elems[1] == 4
    assert trace.peak_buffer == 6
    assert trace.total_dram == 12
    assert trace.dram_by_operand == {Operand.A: 2, Operand.B: 4, Operand.C: 0,
                                     Operand.D: 4, Operand.E: 2}


def test_trace_recompute_walkthrough(recompute_template):
    stages = oracle.unroll(recompute_template, B_RE)
    trace = oracle.simulate(stages, recompute_template, B_RE)
    assert trace.peak_buffer == 5
    assert trace.total_dram == 32
    assert trace.dram_by_operand == {Operand.A: 4, Operand.B: 16,
                                     Operand.C: 0, Operand.D: 8, Operand.E: 4}
    # producer stages re-run for every j tile
    kinds = [s.op for s in stages]
    assert kinds.count(oracle.OP1) == 2 * 2 * 2 * 2
    assert any(s.is_recompute for s in stages)


def test_trace_determinism(retain_a_template):
    one = oracle.unroll(retain_a_template, B_STREAM)
    two = oracle.unroll(retain_a_template, B_STREAM)
    assert one == two


def test_unroll_rejects_invalid_template():
    bad = make_template("iklj", {"A": "intra", "B": "intra", "C": "intra",
                                 "D": "intra", "E": "j"})
    with pytest.raises(ValueError):
        oracle.unroll(bad, (1, 1, 1, 1, 4, 4, 4, 4))


def test_mac_conservation(retain_a_template, recompute_template):
    for t, b in ((retain_a_template, B_STREAM), (recompute_template, B_RE)):
        w = Workload(*(b[i] * b[i + 4] for i in range(4)))
        stages = oracle.unroll(t, b)
        op1_macs = sum(b[4] * b[5] * b[6]
                       for s in stages if s.op == oracle.OP1)
        op2_macs = sum(b[4] * b[6] * b[7]
                       for s in stages if s.op == oracle.OP2)
        assert op1_macs + op2_macs == analytics.mac_count(w, t, b)


def test_simulate_flags_missing_producer(retain_a_template):
    stages = oracle.unroll(retain_a_template, B_STREAM)
    # drop the first producer stage: its C tile is then consumed unwritten
    broken = stages[1:]
    with pytest.raises(oracle.OracleFault):
        oracle.simulate(broken, retain_a_template, B_STREAM)


def test_simulate_flags_missing_softmax(retain_a_template):
    stages = oracle.unroll(retain_a_template, B_STREAM)
    broken = [s for s in stages if s.op != oracle.SOFTMAX]
    with pytest.raises(oracle.OracleFault):
        oracle.simulate(broken, retain_a_template, B_STREAM)


def test_replay_counts_match_simulation():
    rng = np.random.default_rng(9)
    temps = base_templates(False) + base_templates(True)
    tilings = enumerate_tilings(Workload(4, 4, 4, 4)).columns
    for _ in range(40):
        t = temps[rng.integers(len(temps))]
        b = tilings[rng.integers(len(tilings))]
        stages = oracle.unroll(t, b)
        trace = oracle.simulate(stages, t, b)
        counts = oracle.replay_counts(t, b)
        assert counts.peak_buffer == trace.peak_buffer
        assert counts.total_dram == trace.total_dram
        by_op = dict(counts.loads)
        by_op[Operand.E] = counts.e_stores
        assert by_op == trace.dram_by_operand


def test_model_matches_oracle_sampled():
    rng = np.random.default_rng(17)
    temps = base_templates(False) + base_templates(True)
    tilings = enumerate_tilings(Workload(8, 4, 8, 4)).columns
    for _ in range(250):
        t = temps[rng.integers(len(temps))]
        b = tilings[rng.integers(len(tilings))]
        res = oracle.compare_with_analytical(t, b)
        assert res["bs_match"], (t.describe(), b, res)
        assert res["da_match"], (t.describe(), b, res)


def test_trace_csv(tmp_path, retain_a_template):
    stages = oracle.unroll(retain_a_template, B_STREAM)
    trace = oracle.simulate(stages, retain_a_template, B_STREAM)
    path = tmp_path / "trace.csv"
    oracle.write_trace_csv(trace, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "stage,op,tile,occupancy_elems,dram_elems"
    assert len(lines) == 11
