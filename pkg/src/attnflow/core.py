"""Core types for the fused two-GEMM mapping space.

The workload is a producer/consumer pair of matrix multiplications sharing an
intermediate operand: a (I x K) @ b (K x L) -> c (I x L), row-softmax applied
to c in place, then c @ d (L x J) -> e (I x J).  A mapping consists of an
inter-tile loop order over the four tiled dimensions, a buffering level per
operand, and a stationary mode per operator.  Tiling splits every dimension X
into X = x_D * x_G (tile count times tile size, exact divisors only).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

# Inter-tile loop variables, one nest layer each.  Layer positions are 0..3
# outermost to innermost; position 4 is the intra-tile sentinel (a buffering
# level below all inter-tile layers, i.e. single-tile residency).
DIMS: tuple[str, ...] = ("i", "k", "l", "j")
INTRA_LEVEL: int = 4
N_LAYERS: int = 4

#: Boundary vector slot order: tile counts then tile sizes.
BOUNDARY_NAMES: tuple[str, ...] = (
    "i_D", "k_D", "l_D", "j_D", "i_G", "k_G", "l_G", "j_G",
)

STATIONARY_MODES: tuple[str, ...] = ("WS", "IS", "OS")


class Operand(enum.Enum):
    """The five operands of the fused pair."""

    A = "A"  # producer left input, dims (i, k)
    B = "B"  # producer right input, dims (k, l)
    C = "C"  # intermediate, dims (i, l); never touches DRAM in fused runs
    D = "D"  # consumer right input, dims (l, j)
    E = "E"  # consumer output, dims (i, j); written to DRAM exactly once

    @property
    def dims(self) -> tuple[str, str]:
        return _OPERAND_DIMS[self]

    @property
    def role(self) -> str:
        return _OPERAND_ROLE[self]


_OPERAND_DIMS: dict[Operand, tuple[str, str]] = {
    Operand.A: ("i", "k"),
    Operand.B: ("k", "l"),
    Operand.C: ("i", "l"),
    Operand.D: ("l", "j"),
    Operand.E: ("i", "j"),
}

# Producer-side operands participate in the first matmul, consumer-side in the
# second.  C belongs to both; it is treated as the producer's output.
_OPERAND_ROLE: dict[Operand, str] = {
    Operand.A: "producer",
    Operand.B: "producer",
    Operand.C: "intermediate",
    Operand.D: "consumer",
    Operand.E: "consumer",
}

OPERANDS: tuple[Operand, ...] = (
    Operand.A, Operand.B, Operand.C, Operand.D, Operand.E,
)

PRODUCER_DIMS: frozenset[str] = frozenset(("i", "k", "l"))
CONSUMER_DIMS: frozenset[str] = frozenset(("i", "l", "j"))


@dataclass(frozen=True)
class Workload:
    """Problem sizes of the fused pair plus the attention head count."""

    I: int
    K: int
    L: int
    J: int
    heads: int = 1
    c_softmax: float = 10.0  # SFU work per intermediate element

    def __post_init__(self) -> None:
        for name in ("I", "K", "L", "J", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def dim(self, d: str) -> int:
        return {"i": self.I, "k": self.K, "l": self.L, "j": self.J}[d]

    def operand_size(self, op: Operand) -> int:
        d0, d1 = op.dims
        return self.dim(d0) * self.dim(d1)

    @property
    def mac_count_op1(self) -> int:
        return self.I * self.K * self.L

    @property
    def mac_count_op2(self) -> int:
        return self.I * self.L * self.J


@dataclass(frozen=True)
class EnergyCoefficients:
    """Per-event energy costs in consistent (relative) units."""

    e_dram: float = 200.0  # per element moved to/from DRAM
    e_buf: float = 6.0     # per element crossing buffer <-> register file
    e_mac: float = 1.0     # per multiply-accumulate
    e_sfu: float = 1.0     # per softmax work unit (c_softmax per element)


@dataclass(frozen=True)
class AcceleratorConfig:
    """Spatial accelerator: PE arrays fed by a shared buffer and one DRAM port."""

    pe_rows: int = 32
    pe_cols: int = 32
    num_arrays: int = 4
    buffer_bytes: int = 1 << 20
    dram_bw_bytes_per_s: float = 60e9
    freq_hz: float = 1e9
    bytes_per_element: int = 1
    energy: EnergyCoefficients = field(default_factory=EnergyCoefficients)

    @property
    def pes_per_array(self) -> int:
        return self.pe_rows * self.pe_cols

    @property
    def total_pes(self) -> int:
        return self.pes_per_array * self.num_arrays

    @property
    def buffer_capacity_elements(self) -> int:
        return self.buffer_bytes // self.bytes_per_element


# Reference machines used throughout the tests: a small NVDLA-like device and
# a larger TPU-like one.
ACCEL_SMALL = AcceleratorConfig(
    pe_rows=32, pe_cols=32, num_arrays=4,
    buffer_bytes=1 << 20, dram_bw_bytes_per_s=60e9, freq_hz=1e9,
)
ACCEL_LARGE = AcceleratorConfig(
    pe_rows=128, pe_cols=128, num_arrays=4,
    buffer_bytes=4 << 20, dram_bw_bytes_per_s=128e9, freq_hz=1e9,
)


DIM_INDEX: dict[str, int] = {d: n for n, d in enumerate(DIMS)}

BoundaryVector = tuple[int, int, int, int, int, int, int, int]


def x_d(b: BoundaryVector, dim: str) -> int:
    """Inter-tile count of a dimension in a boundary vector."""
    return b[DIM_INDEX[dim]]


def x_g(b: BoundaryVector, dim: str) -> int:
    """Tile size of a dimension in a boundary vector."""
    return b[4 + DIM_INDEX[dim]]


def tile_footprint(b: BoundaryVector, op: Operand) -> int:
    d0, d1 = op.dims
    return x_g(b, d0) * x_g(b, d1)


def boundary_for(wl: Workload, b: BoundaryVector) -> BoundaryVector:
    """Validate that b factors wl exactly; returns b."""
    for d in DIMS:
        if x_d(b, d) * x_g(b, d) != wl.dim(d):
            raise ValueError(
                f"boundary {b} does not factor {d}={wl.dim(d)}")
        if x_d(b, d) < 1 or x_g(b, d) < 1:
            raise ValueError("boundaries must be positive")
    return b


def loop_position(loop_order: tuple[str, ...], dim: str) -> int:
    """Position of a dimension's inter-tile layer, 0 = outermost."""
    return loop_order.index(dim)


def recompute_from_order(loop_order: tuple[str, ...]) -> bool:
    """The producer re-executes per j iteration iff j is ordered outside k."""
    return loop_position(loop_order, "j") < loop_position(loop_order, "k")


@dataclass(frozen=True)
class MappingTemplate:
    """A tiling-independent mapping: loop order, buffering levels, stationarity.

    ``buffering_level`` maps each operand to an inter-tile layer position
    (0..3) or INTRA_LEVEL for single-tile residency.  ``recompute`` is derived
    from the loop order; it is stored so groups can be keyed on it and so
    deliberately inconsistent templates can be constructed for negative tests.
    """

    loop_order: tuple[str, ...]
    levels: tuple[int, int, int, int, int]  # indexed in OPERANDS order
    stationary: tuple[str, str] = ("WS", "WS")
    recompute: bool | None = None

    def __post_init__(self) -> None:
        if sorted(self.loop_order) != sorted(DIMS):
            raise ValueError(f"loop_order must permute {DIMS}")
        for lv in self.levels:
            if not (0 <= lv <= INTRA_LEVEL):
                raise ValueError("buffering level out of range")
        for mode in self.stationary:
            if mode not in STATIONARY_MODES:
                raise ValueError(f"unknown stationary mode {mode!r}")
        if self.recompute is None:
            object.__setattr__(
                self, "recompute", recompute_from_order(self.loop_order))

    def level(self, op: Operand) -> int:
        return self.levels[OPERANDS.index(op)]

    def position(self, dim: str) -> int:
        return loop_position(self.loop_order, dim)

    def is_retained(self, op: Operand) -> bool:
        """True when the operand keeps tiles resident across the other
        operator's stages (an inter-tile buffering level)."""
        return self.level(op) < INTRA_LEVEL

    def describe(self) -> str:
        lv = ",".join(
            ("intra" if v == INTRA_LEVEL else str(v)) for v in self.levels)
        return (f"order={''.join(self.loop_order)} levels[A..E]={lv} "
                f"stat={self.stationary[0]}/{self.stationary[1]} "
                f"recompute={int(bool(self.recompute))}")


def make_template(loop_order: str | tuple[str, ...],
                  levels: dict[Operand | str, int | str],
                  stationary: tuple[str, str] = ("WS", "WS"),
                  recompute: bool | None = None) -> MappingTemplate:
    """Convenience constructor.

    ``loop_order`` may be a string like "iljk".  ``levels`` values may be a
    layer position, a dimension name (that dimension's layer), or "intra".
    """
    order = tuple(loop_order) if isinstance(loop_order, str) else loop_order
    resolved = []
    for op in OPERANDS:
        raw = levels[op] if op in levels else levels[op.value]  # type: ignore[index]
        if raw == "intra":
            resolved.append(INTRA_LEVEL)
        elif isinstance(raw, str):
            resolved.append(order.index(raw))
        else:
            resolved.append(int(raw))
    return MappingTemplate(order, tuple(resolved), stationary, recompute)


def effective_dims(op: Operand, recompute: bool) -> frozenset[str]:
    """Dimensions whose inter-tile iteration re-triggers the operand's stages.

    Consumer-side operands always see the consumer's dimension set.  Producer
    operands additionally see j when the producer re-executes per j iteration.
    """
    if op in (Operand.D, Operand.E):
        return CONSUMER_DIMS
    if recompute:
        return PRODUCER_DIMS | {"j"}
    return PRODUCER_DIMS


def find_blocker(t: MappingTemplate, op: Operand) -> int | None:
    """Innermost layer outside the operand's buffering level whose advance
    invalidates the operand's buffered tiles.

    A layer qualifies when it carries one of the operand's own dimensions.
    For consumer-exclusive operands at single-tile residency, the layer
    carrying the producer reduction k also qualifies: without a retained
    region their tiles do not survive producer re-entry.  Returns the layer
    position, or None when nothing outside the level invalidates the operand
    (whole-problem retention).
    """
    lvl = t.level(op)
    own = set(op.dims)
    k_qualifies = op in (Operand.D, Operand.E) and lvl == INTRA_LEVEL
    start = min(lvl, N_LAYERS) - 1
    for pos in range(start, -1, -1):
        var = t.loop_order[pos]
        if var in own or (k_qualifies and var == "k"):
            return pos
    return None


def validate_template(t: MappingTemplate) -> bool:
    """Check a template against the execution-order and residency rules.

    (a) no layer carrying i or l may sit strictly between the k layer and C's
        buffering level, otherwise a partially accumulated intermediate tile
        would be evicted (partial sums never spill to DRAM);
    (b) E's blocker must sit outside the l layer (or not exist), otherwise a
        partially accumulated output tile would be evicted;
    (c) each buffering level must lie at or inside the outermost layer that
        carries one of the operand's effective dimensions;
    and the stored recompute flag must match the loop order.
    """
    if t.recompute != recompute_from_order(t.loop_order):
        return False
    pos_k = t.position("k")
    pos_l = t.position("l")

    lvl_c = t.level(Operand.C)
    for dim in Operand.C.dims:
        if pos_k < t.position(dim) < lvl_c:
            return False

    blocker_e = find_blocker(t, Operand.E)
    if blocker_e is not None and blocker_e >= pos_l:
        return False

    for op in OPERANDS:
        lvl = t.level(op)
        if lvl == INTRA_LEVEL:
            continue
        eff = effective_dims(op, bool(t.recompute))
        outermost = min(t.position(d) for d in eff)
        if lvl < outermost:
            return False
    return True


def divisor_pairs(n: int) -> list[tuple[int, int]]:
    """All factorizations n = g * d as (g, d) pairs, ascending in d."""
    if n < 1:
        raise ValueError("n must be positive")
    small = []
    for d in range(1, math.isqrt(n) + 1):
        if n % d == 0:
            small.append(d)
    divisors = small + [n // d for d in reversed(small) if d * d != n]
    return [(n // d, d) for d in divisors]


def all_loop_orders() -> list[tuple[str, ...]]:
    return [tuple(p) for p in itertools.permutations(DIMS)]
