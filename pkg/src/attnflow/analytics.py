"""Closed-form performance model.

Every buffer-size and DRAM-access metric is a sum of monomials over the 8
loop boundaries, so each is represented as a term list: (coefficient,
exponent 8-tuple) aligned to the boundary order (i_D,k_D,l_D,j_D,
i_G,k_G,l_G,j_G).  Evaluation is exact integer arithmetic; the encoding
module reuses the same terms for the batched log-domain pass.

Model summary, per operand Y with buffering level lvl and blocker layer b:
  region size BS_Y  = tile footprint x product of inter-tile counts of Y's
                      own dimensions at layers at or inside lvl
  DRAM access DA_Y  = BS_Y x product of inter-tile counts of layers from the
                      outermost down to b whose variable re-triggers Y's
                      stages (its effective dimensions); no blocker means the
                      operand streams exactly once
Per operator, the buffer holds its own three regions plus whatever the other
operator retains; the chip needs the max of the two phases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import (
    AcceleratorConfig,
    BoundaryVector,
    DIM_INDEX,
    INTRA_LEVEL,
    MappingTemplate,
    N_LAYERS,
    Operand,
    OPERANDS,
    Workload,
    effective_dims,
    find_blocker,
    tile_footprint,
    x_d,
    x_g,
)

Exponents = tuple[int, int, int, int, int, int, int, int]
Term = tuple[int, Exponents]  # (coefficient, exponents)

ZERO_EXP: Exponents = (0,) * 8

OP1_OPERANDS = (Operand.A, Operand.B)
OP2_OPERANDS = (Operand.D, Operand.E)


def _exp(d_dims: tuple[str, ...] = (), g_dims: tuple[str, ...] = ()) -> Exponents:
    e = [0] * 8
    for d in d_dims:
        e[DIM_INDEX[d]] += 1
    for d in g_dims:
        e[4 + DIM_INDEX[d]] += 1
    return tuple(e)  # type: ignore[return-value]


def eval_exponents(e: Exponents, b: BoundaryVector) -> int:
    r = 1
    for x, p in zip(b, e):
        if p:
            r *= x**p
    return r


def eval_terms(terms: list[Term], b: BoundaryVector) -> int:
    return sum(coeff * eval_exponents(e, b) for coeff, e in terms)


def operand_buffer_size(t: MappingTemplate, op: Operand) -> Exponents:
    """Region size as exponents: own tile footprint, plus the inter-tile
    count of every own-dimension layer at or inside the buffering level."""
    lvl = t.level(op)
    d_dims = tuple(d for d in op.dims
                   if lvl < INTRA_LEVEL and t.position(d) >= lvl)
    return _exp(d_dims, op.dims)


def operator_buffer_size(t: MappingTemplate, which: str) -> list[Term]:
    """Buffer need during one operator's phase: its own operands and C at
    full region size, the other operator's operands only when retained."""
    if which not in ("Op1", "Op2"):
        raise ValueError(which)
    own = OP1_OPERANDS if which == "Op1" else OP2_OPERANDS
    other = OP2_OPERANDS if which == "Op1" else OP1_OPERANDS
    terms = [(1, operand_buffer_size(t, op)) for op in own]
    terms.append((1, operand_buffer_size(t, Operand.C)))
    terms += [(1, operand_buffer_size(t, op)) for op in other
              if t.is_retained(op)]
    return collect_terms(terms)


def overall_buffer_size(t: MappingTemplate, b: BoundaryVector) -> int:
    return max(eval_terms(operator_buffer_size(t, "Op1"), b),
               eval_terms(operator_buffer_size(t, "Op2"), b))


def operand_dram_access(t: MappingTemplate, op: Operand) -> Term:
    """Traffic for one operand: loads for inputs, stores for E, zero for C."""
    if op is Operand.C:
        return (0, ZERO_EXP)
    beta = find_blocker(t, op)
    if beta is None:
        return (1, _exp(op.dims, op.dims))  # whole matrix, one pass
    eff = effective_dims(op, bool(t.recompute))
    reload_dims = tuple(v for v in t.loop_order[: beta + 1] if v in eff)
    base = operand_buffer_size(t, op)
    combined = tuple(a + b_ for a, b_ in zip(base, _exp(reload_dims)))
    return (1, combined)  # type: ignore[return-value]


def total_dram_access(t: MappingTemplate, b: BoundaryVector) -> int:
    return sum(eval_terms([operand_dram_access(t, op)], b)
               for op in (Operand.A, Operand.B, Operand.D, Operand.E))


def dram_terms(t: MappingTemplate) -> list[Term]:
    return collect_terms([operand_dram_access(t, op)
                          for op in (Operand.A, Operand.B,
                                     Operand.D, Operand.E)])


def collect_terms(terms: list[Term]) -> list[Term]:
    """Merge duplicate exponent tuples; drop zero coefficients."""
    acc: dict[Exponents, int] = {}
    for coeff, e in terms:
        acc[e] = acc.get(e, 0) + coeff
    return [(c, e) for e, c in sorted(acc.items()) if c]


def mac_count(w: Workload, t: MappingTemplate, b: BoundaryVector) -> int:
    n_op1 = w.I * w.K * w.L
    n_op2 = w.I * w.L * w.J
    if t.recompute:
        return x_d(b, "j") * n_op1 + n_op2
    return n_op1 + n_op2


def softmax_energy(w: Workload, t: MappingTemplate, b: BoundaryVector,
                   hw: AcceleratorConfig) -> float:
    rounds = x_d(b, "j") if t.recompute else 1
    return hw.energy.e_sfu * w.c_softmax * w.I * w.L * rounds


def _scale(term: Term, extra: Exponents, coeff: int = 1) -> Term:
    c, e = term
    return (c * coeff, tuple(a + b_ for a, b_ in zip(e, extra)))


def buf_rf_terms(t: MappingTemplate) -> list[Term]:
    """Buffer<->register-file element crossings for both operators.

    Per operator pass: the stationary operand crosses once per distinct tile,
    each other input tile crosses per invocation, and outputs make one psum
    round trip (2x) per invocation, except output-stationary where each
    output tile makes a single round trip.  Recompute repeats the whole
    producer pass per j iteration.
    """
    # whole-matrix sizes and tile footprints as exponent tuples
    size = {op: _exp(op.dims, op.dims) for op in OPERANDS}
    tile = {op: _exp((), op.dims) for op in OPERANDS}
    v1 = _exp(("i", "k", "l") + (("j",) if t.recompute else ()))
    rounds: Exponents = _exp(("j",)) if t.recompute else ZERO_EXP
    v2 = _exp(("i", "l", "j"))

    mode1 = t.stationary[0]
    if mode1 == "WS":
        op1 = [(1, size[Operand.B]), _scale((1, tile[Operand.A]), v1),
               _scale((2, tile[Operand.C]), v1)]
    elif mode1 == "IS":
        op1 = [(1, size[Operand.A]), _scale((1, tile[Operand.B]), v1),
               _scale((2, tile[Operand.C]), v1)]
    else:  # OS: psums pinned in the array, one round trip per C tile
        op1 = [(2, size[Operand.C]), _scale((1, tile[Operand.A]), v1),
               _scale((1, tile[Operand.B]), v1)]
    op1 = [_scale(term, rounds) for term in op1]

    mode2 = t.stationary[1]
    if mode2 == "WS":
        op2 = [(1, size[Operand.D]), _scale((1, tile[Operand.C]), v2),
               _scale((2, tile[Operand.E]), v2)]
    elif mode2 == "IS":
        op2 = [(1, size[Operand.C]), _scale((1, tile[Operand.D]), v2),
               _scale((2, tile[Operand.E]), v2)]
    else:  # OS
        op2 = [(2, size[Operand.E]), _scale((1, tile[Operand.C]), v2),
               _scale((1, tile[Operand.D]), v2)]
    return collect_terms(op1 + op2)


def buf_rf_traffic(t: MappingTemplate, b: BoundaryVector) -> int:
    return eval_terms(buf_rf_terms(t), b)


def cycle_terms(t: MappingTemplate, which: str) -> list[Term]:
    """Invocations x reduction depth; the intra-tile spatial folding factor
    (ceil of tile rows/cols over the array shape) is hardware-dependent and
    applied per boundary column at evaluation time."""
    if which == "Op1":
        dims = ("i", "k", "l") + (("j",) if t.recompute else ())
        return [(1, _exp(dims, ("k",)))]
    return [(1, _exp(("i", "l", "j"), ("l",)))]


def spatial_factors(b: BoundaryVector, hw: AcceleratorConfig) -> tuple[int, int]:
    """Array passes per producer and consumer invocation (tile folding)."""
    rows = math.ceil(x_g(b, "i") / hw.pe_rows)
    f1 = rows * math.ceil(x_g(b, "l") / hw.pe_cols)
    f2 = rows * math.ceil(x_g(b, "j") / hw.pe_cols)
    return f1, f2


def compute_cycles(w: Workload, t: MappingTemplate, b: BoundaryVector,
                   hw: AcceleratorConfig) -> int:
    """One head's cycles, then heads round-robin over the arrays."""
    f1, f2 = spatial_factors(b, hw)
    per_head = (eval_terms(cycle_terms(t, "Op1"), b) * f1
                + eval_terms(cycle_terms(t, "Op2"), b) * f2)
    return per_head * math.ceil(w.heads / hw.num_arrays)


def dram_cycles(dram_elems: int, hw: AcceleratorConfig) -> int:
    bytes_total = dram_elems * hw.bytes_per_element
    return math.ceil(bytes_total * hw.freq_hz / hw.dram_bw_bytes_per_s)


@dataclass(frozen=True)
class MetricsRecord:
    buffer_elems: int
    dram_elems: int
    macs: int
    buf_rf_elems: int
    energy: float
    energy_dram: float
    energy_sram: float
    energy_compute: float
    energy_softmax: float
    latency_cycles: int
    compute_cycles: int
    dram_cycles: int
    utilization: float


def evaluate(w: Workload, t: MappingTemplate, b: BoundaryVector,
             hw: AcceleratorConfig) -> MetricsRecord:
    """All metrics for one mapping, head replication applied."""
    buffer_elems = overall_buffer_size(t, b)
    dram_elems = total_dram_access(t, b) * w.heads
    macs = mac_count(w, t, b) * w.heads
    buf_rf = buf_rf_traffic(t, b) * w.heads
    e = hw.energy
    e_dram = e.e_dram * dram_elems
    e_sram = e.e_buf * buf_rf
    e_mac = e.e_mac * macs
    e_soft = softmax_energy(w, t, b, hw) * w.heads
    c_cycles = compute_cycles(w, t, b, hw)
    d_cycles = dram_cycles(dram_elems, hw)
    latency = max(c_cycles, d_cycles)
    util = macs / (hw.total_pes * c_cycles)
    return MetricsRecord(
        buffer_elems=buffer_elems,
        dram_elems=dram_elems,
        macs=macs,
        buf_rf_elems=buf_rf,
        energy=e_dram + e_sram + e_mac + e_soft,
        energy_dram=e_dram,
        energy_sram=e_sram,
        energy_compute=e_mac,
        energy_softmax=e_soft,
        latency_cycles=latency,
        compute_cycles=c_cycles,
        dram_cycles=d_cycles,
        utilization=util,
    )
