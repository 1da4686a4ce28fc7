"""Tile-level execution oracle.

Unrolls a concrete (template, boundary) pair into its exact stage sequence,
replays buffer residency under the retention rule, and counts DRAM traffic
and occupancy by brute force.  Nothing here uses the closed-form model; the
oracle is the ground truth the model is checked against.

Residency is tracked per operand as an epoch: the tuple of loop coordinates
at the operand's blocker layer and everything outside it.  While the epoch is
unchanged the operand's touched tiles stay resident; when it advances the
region is invalidated.  A read miss costs one tile footprint of DRAM traffic.
The intermediate C never travels to DRAM: a consumer read that misses is a
fault, as is any read of a partially accumulated tile.

Two occupancy series are reported.  ``buffer_occupancy`` charges each stage
with the reserved region sizes of its operator phase (a retained operand's
region stays reserved during the other operator's stages); its max is
``peak_buffer``, the quantity the capacity model predicts.  ``resident_elems``
counts only tiles actually present, loading lazily and discarding single-tile
operands once unused; it reproduces utilization-chart curves.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .core import (
    BoundaryVector,
    DIMS,
    MappingTemplate,
    Operand,
    OPERANDS,
    find_blocker,
    tile_footprint,
    validate_template,
    x_d,
)

TileId = tuple[str, tuple[int, int]]

OP1 = "Op1"
OP2 = "Op2"
SOFTMAX = "Softmax"


class OracleFault(AssertionError):
    """The replay observed physically impossible behavior (validity bug)."""


@dataclass(frozen=True)
class Stage:
    index: int
    op: str  # Op1 | Softmax | Op2
    tile_coords: tuple[int, int, int, int]  # (i2, k2, l2, j2)
    reads: frozenset[TileId]
    writes: frozenset[TileId]
    is_recompute: bool


@dataclass
class OracleTrace:
    stages: list[Stage]
    buffer_occupancy: list[int]  # reserved elements per stage
    resident_elems: list[int]    # lazily loaded elements per stage
    dram_loads: list[int]        # DRAM elements moved at each stage
    peak_buffer: int
    total_dram: int
    dram_by_operand: dict[Operand, int]
    counted_region: dict[Operand, int]  # measured max region need, elements
    occupancy_op1: int
    occupancy_op2: int


def _tile(op: Operand, coords: dict[str, int]) -> TileId:
    d0, d1 = op.dims
    return (op.value, (coords[d0], coords[d1]))


def _epoch_prefix(t: MappingTemplate, op: Operand) -> tuple[str, ...]:
    beta = find_blocker(t, op)
    return t.loop_order[: beta + 1] if beta is not None else ()


def unroll(t: MappingTemplate, b: BoundaryVector) -> list[Stage]:
    """Exact stage sequence of the merged producer/consumer iteration space.

    The four inter-tile variables advance jointly in loop order.  A producer
    stage runs at each (i2,k2,l2) point, at the first j2 iteration unless the
    template recomputes (then at every j2).  The consumer runs at the last k2
    iteration, when its C tile is complete.  Softmax runs between a C tile's
    final accumulation and its first consumption.
    """
    if not validate_template(t):
        raise ValueError(f"invalid template: {t.describe()}")
    recompute = bool(t.recompute)
    k_last = x_d(b, "k") - 1
    stages: list[Stage] = []
    index = 0
    ranges = [range(x_d(b, v)) for v in t.loop_order]
    for point in itertools.product(*ranges):
        coords = dict(zip(t.loop_order, point))
        producer_slot = recompute or coords["j"] == 0
        c_tile = _tile(Operand.C, coords)
        if producer_slot:
            stages.append(Stage(
                index, OP1, _coord_tuple(coords),
                reads=frozenset({_tile(Operand.A, coords),
                                 _tile(Operand.B, coords)}),
                writes=frozenset({c_tile}),
                is_recompute=recompute and coords["j"] > 0))
            index += 1
        if producer_slot and coords["k"] == k_last:
            stages.append(Stage(
                index, SOFTMAX, _coord_tuple(coords),
                reads=frozenset({c_tile}), writes=frozenset({c_tile}),
                is_recompute=recompute and coords["j"] > 0))
            index += 1
        if coords["k"] == k_last:
            stages.append(Stage(
                index, OP2, _coord_tuple(coords),
                reads=frozenset({c_tile, _tile(Operand.D, coords)}),
                writes=frozenset({_tile(Operand.E, coords)}),
                is_recompute=False))
            index += 1
    return stages


def _coord_tuple(coords: dict[str, int]) -> tuple[int, int, int, int]:
    return tuple(coords[d] for d in DIMS)  # type: ignore[return-value]


def simulate(stages: list[Stage], t: MappingTemplate,
             b: BoundaryVector) -> OracleTrace:
    """Replay a stage sequence and count traffic, occupancy, and residency."""
    fp = {op: tile_footprint(b, op) for op in OPERANDS}
    prefix = {op: _epoch_prefix(t, op) for op in OPERANDS}
    # C and E hold accumulation state, retained operands hold reuse state;
    # single-tile inputs are free to vanish between stages.
    persistent = {op: op in (Operand.C, Operand.E) or t.is_retained(op)
                  for op in OPERANDS}
    k_d, l_d = x_d(b, "k"), x_d(b, "l")

    epoch: dict[Operand, tuple[int, ...] | None] = {op: None for op in OPERANDS}
    tiles: dict[Operand, set[TileId]] = {op: set() for op in OPERANDS}
    max_tiles = {op: 0 for op in OPERANDS}
    psum: dict[TileId, int] = {}
    softmaxed: set[TileId] = set()
    lsum: dict[TileId, int] = {}

    loads = {op: 0 for op in OPERANDS}
    e_stores = 0
    dram_per_stage: list[int] = []
    resident: list[int] = []

    by_id = {op.value: op for op in OPERANDS}

    def flush_e(evicted: dict[TileId, int]) -> None:
        for tile, acc in evicted.items():
            if acc != l_d:
                raise OracleFault(f"E tile {tile} evicted at {acc}/{l_d}")

    for st in stages:
        coords = dict(zip(DIMS, st.tile_coords))
        stage_dram = 0
        # epoch advances evict whole regions before any touch
        for op in OPERANDS:
            key = tuple(coords[v] for v in prefix[op])
            if epoch[op] is not None and key != epoch[op]:
                if op is Operand.C:
                    for tile in tiles[op]:
                        if psum.get(tile, 0) != k_d:
                            raise OracleFault(
                                f"C tile {tile} evicted at partial sum")
                    psum.clear()
                    softmaxed.clear()
                if op is Operand.E:
                    flush_e(lsum)
                    lsum.clear()
                tiles[op].clear()
            epoch[op] = key

        transient_elems = 0
        for tile in st.reads:
            op = by_id[tile[0]]
            if tile not in tiles[op]:
                if op is Operand.C:
                    raise OracleFault(f"C read miss at stage {st.index}")
                loads[op] += fp[op]
                stage_dram += fp[op]
                tiles[op].add(tile)
                max_tiles[op] = max(max_tiles[op], len(tiles[op]))
            if not persistent[op]:
                transient_elems += fp[op]
        if st.op == OP1:
            (c_tile,) = st.writes
            if c_tile not in tiles[Operand.C]:
                tiles[Operand.C].add(c_tile)
                max_tiles[Operand.C] = max(max_tiles[Operand.C],
                                           len(tiles[Operand.C]))
            if (st.is_recompute and psum.get(c_tile, 0) == k_d
                    and c_tile in softmaxed):
                # a fresh recompute round overwrites the dead value in place
                psum[c_tile] = 0
                softmaxed.discard(c_tile)
            psum[c_tile] = psum.get(c_tile, 0) + 1
            if psum[c_tile] > k_d:
                raise OracleFault(f"C tile {c_tile} over-accumulated")
        elif st.op == SOFTMAX:
            (c_tile,) = st.writes
            if psum.get(c_tile, 0) != k_d:
                raise OracleFault(f"softmax on partial C tile {c_tile}")
            softmaxed.add(c_tile)
        else:
            (c_tile,) = (r for r in st.reads if r[0] == "C")
            if c_tile not in softmaxed:
                raise OracleFault(f"consumer read of raw C tile {c_tile}")
            (e_tile,) = st.writes
            if e_tile not in tiles[Operand.E]:
                tiles[Operand.E].add(e_tile)
                max_tiles[Operand.E] = max(max_tiles[Operand.E],
                                           len(tiles[Operand.E]))
            lsum[e_tile] = lsum.get(e_tile, 0) + 1
            if lsum[e_tile] == l_d:
                e_stores += fp[Operand.E]
                stage_dram += fp[Operand.E]
            elif lsum[e_tile] > l_d:
                raise OracleFault(f"E tile {e_tile} over-accumulated")

        dram_per_stage.append(stage_dram)
        resident.append(sum(len(tiles[op]) * fp[op]
                            for op in OPERANDS if persistent[op])
                        + transient_elems)

    flush_e(lsum)
    if e_stores != x_d(b, "i") * x_d(b, "j") * fp[Operand.E]:
        raise OracleFault("not every E tile completed exactly once")

    counted = {op: max_tiles[op] * fp[op] for op in OPERANDS}
    occ1, occ2 = _phase_occupancy(t, counted)
    occupancy = [occ1 if st.op in (OP1, SOFTMAX) else occ2 for st in stages]
    total = sum(loads.values()) + e_stores
    dram_by_op = dict(loads)
    dram_by_op[Operand.E] = e_stores
    return OracleTrace(
        stages=stages,
        buffer_occupancy=occupancy,
        resident_elems=resident,
        dram_loads=dram_per_stage,
        peak_buffer=max(occ1, occ2),
        total_dram=total,
        dram_by_operand=dram_by_op,
        counted_region=counted,
        occupancy_op1=occ1,
        occupancy_op2=occ2,
    )


def _phase_occupancy(t: MappingTemplate,
                     counted: dict[Operand, int]) -> tuple[int, int]:
    """Reserved elements during producer-side and consumer-side stages.

    A phase reserves its own operator's regions at their measured sizes plus
    every retained region of the other operator.
    """
    tau = {op: int(t.is_retained(op)) for op in OPERANDS}
    occ1 = (counted[Operand.A] + counted[Operand.B] + counted[Operand.C]
            + tau[Operand.D] * counted[Operand.D]
            + tau[Operand.E] * counted[Operand.E])
    occ2 = (counted[Operand.C] + counted[Operand.D] + counted[Operand.E]
            + tau[Operand.A] * counted[Operand.A]
            + tau[Operand.B] * counted[Operand.B])
    return occ1, occ2


@dataclass(frozen=True)
class ReplayCounts:
    loads: dict[Operand, int]
    e_stores: int
    counted_region: dict[Operand, int]
    occupancy_op1: int
    occupancy_op2: int
    peak_buffer: int
    total_dram: int


def _stage_family(t: MappingTemplate, b: BoundaryVector,
                  producer: bool) -> dict[str, np.ndarray]:
    """Coordinate arrays, one entry per stage of the family."""
    if producer:
        swept = ["i", "k", "l"] + (["j"] if t.recompute else [])
        fixed = {} if t.recompute else {"j": 0}
    else:
        swept = ["i", "l", "j"]
        fixed = {"k": x_d(b, "k") - 1}
    shape = tuple(x_d(b, v) for v in swept)
    grids = np.indices(shape).reshape(len(swept), -1)
    coords = {v: grids[n] for n, v in enumerate(swept)}
    n = grids.shape[1] if swept else 1
    for v, val in fixed.items():
        coords[v] = np.full(n, val, dtype=np.int64)
    return coords


def _pair_keys(t: MappingTemplate, b: BoundaryVector, op: Operand,
               coords: dict[str, np.ndarray]) -> np.ndarray:
    """(epoch, tile) integer key per stage, unique pairs = DRAM fetches."""
    prefix = _epoch_prefix(t, op)
    d0, d1 = op.dims
    key = coords[d0] * x_d(b, d1) + coords[d1]
    radix = x_d(b, d0) * x_d(b, d1)
    for v in reversed(prefix):
        key = key + coords[v] * radix
        radix *= x_d(b, v)
    return key


def _counted_from_pairs(b: BoundaryVector, op: Operand,
                        pairs: np.ndarray) -> int:
    n_tiles = x_d(b, op.dims[0]) * x_d(b, op.dims[1])
    epochs = pairs // n_tiles
    _, per_epoch = np.unique(epochs, return_counts=True)
    return int(per_epoch.max())


def replay_counts(t: MappingTemplate, b: BoundaryVector) -> ReplayCounts:
    """Aggregate oracle counts without materializing the stage list.

    Counts unique (epoch, tile) pairs per operand over the dense stage
    families; each pair is one DRAM fetch, and the largest per-epoch pair
    count is the operand's real region need.  Equivalent to simulate() on the
    unrolled stages (cross-checked in tests), but vectorized.
    """
    if not validate_template(t):
        raise ValueError(f"invalid template: {t.describe()}")
    prod = _stage_family(t, b, producer=True)
    cons = _stage_family(t, b, producer=False)
    fp = {op: tile_footprint(b, op) for op in OPERANDS}

    pairs = {
        Operand.A: np.unique(_pair_keys(t, b, Operand.A, prod)),
        Operand.B: np.unique(_pair_keys(t, b, Operand.B, prod)),
        Operand.D: np.unique(_pair_keys(t, b, Operand.D, cons)),
        Operand.E: np.unique(_pair_keys(t, b, Operand.E, cons)),
    }
    c_writes = np.unique(_pair_keys(t, b, Operand.C, prod))
    c_reads = np.unique(_pair_keys(t, b, Operand.C, cons))
    if not np.isin(c_reads, c_writes).all():
        raise OracleFault("consumer reads a C tile its epoch never produced")

    if pairs[Operand.E].size != x_d(b, "i") * x_d(b, "j"):
        raise OracleFault("an E tile spans multiple epochs (psum spill)")

    loads = {op: int(pairs[op].size) * fp[op]
             for op in (Operand.A, Operand.B, Operand.D)}
    loads[Operand.C] = 0
    e_stores = int(pairs[Operand.E].size) * fp[Operand.E]

    counted = {op: _counted_from_pairs(b, op, pairs[op]) * fp[op]
               for op in (Operand.A, Operand.B, Operand.D, Operand.E)}
    counted[Operand.C] = _counted_from_pairs(b, Operand.C, c_writes) \
        * fp[Operand.C]
    occ1, occ2 = _phase_occupancy(t, counted)
    total = loads[Operand.A] + loads[Operand.B] + loads[Operand.D] + e_stores
    return ReplayCounts(
        loads=loads, e_stores=e_stores, counted_region=counted,
        occupancy_op1=occ1, occupancy_op2=occ2,
        peak_buffer=max(occ1, occ2), total_dram=total)


def compare_with_analytical(t: MappingTemplate,
                            b: BoundaryVector) -> dict[str, object]:
    """Check closed-form buffer size and DRAM access against the oracle."""
    from . import analytics

    counts = replay_counts(t, b)
    model_bs = analytics.overall_buffer_size(t, b)
    model_da = analytics.total_dram_access(t, b)
    return {
        "bs_match": model_bs == counts.peak_buffer,
        "da_match": model_da == counts.total_dram,
        "deltas": {
            "bs": model_bs - counts.peak_buffer,
            "da": model_da - counts.total_dram,
        },
        "oracle_bs": counts.peak_buffer,
        "oracle_da": counts.total_dram,
        "model_bs": model_bs,
        "model_da": model_da,
    }


def write_trace_csv(trace: OracleTrace, path: str) -> None:
    """Plot-ready dump: one row per stage, chart-style occupancy."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "op", "tile", "occupancy_elems",
                         "dram_elems"])
        for st, occ, dram in zip(trace.stages, trace.resident_elems,
                                 trace.dram_loads):
            (tile,) = st.writes
            tile_str = f"{tile[0]}{tile[1]}"
            writer.writerow([st.index, st.op, tile_str, occ, dram])
