"""Optimization drivers over the (template x tiling) grid.

Scans run in float via the encoded matrices, then every reported number is
re-derived in exact integer arithmetic from a small shortlist, so results
are independent of float rounding.  Within one template class all rows share
the cycle and register-file formulas, which makes energy and latency
monotone in DRAM access per column; each column therefore reduces to its
feasible min-DA row before objectives are compared.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import permutations, product
from pathlib import Path

import numpy as np

from . import analytics, encoding
from .analytics import Term, _exp
from .core import (
    DIM_INDEX,
    INTRA_LEVEL,
    AcceleratorConfig,
    BoundaryVector,
    MappingTemplate,
    Workload,
    divisor_pairs,
)
from .enumeration import TemplateGroup, enumerate_templates

OBJECTIVES = ("energy", "latency", "edp")
DEFAULT_CHUNK = 256
REL_EPS = 1e-9


@dataclass(frozen=True)
class MappingSolution:
    mapping_id: str
    group_key: str
    row: int
    template: MappingTemplate
    boundary: BoundaryVector
    metrics: analytics.MetricsRecord


@dataclass
class SearchResult:
    objective: str
    feasible: bool
    best: MappingSolution | None
    min_buffer_bytes: int
    rows_searched: int
    tilings: int
    cells: int
    runtime_s: float


@dataclass(frozen=True)
class ParetoPoint:
    energy: float
    latency_cycles: int
    solution: MappingSolution
    recompute_classes: tuple[bool, ...]


def solution_record(sol: MappingSolution, hw: AcceleratorConfig) -> dict:
    t, b, m = sol.template, sol.boundary, sol.metrics
    rec = {
        "mapping_id": sol.mapping_id,
        "loop_order": "".join(t.loop_order),
    }
    for op, lvl in zip("ABCDE", t.levels):
        rec[f"lvl_{op}"] = lvl
    rec["stationary_op1"] = t.stationary[0]
    rec["stationary_op2"] = t.stationary[1]
    rec["recompute"] = int(t.recompute)
    for name, v in zip(("i_D", "k_D", "l_D", "j_D",
                        "i_G", "k_G", "l_G", "j_G"), b):
        rec[name] = v
    rec["buffer_bytes"] = m.buffer_elems * hw.bytes_per_element
    rec["dram_elems"] = m.dram_elems
    rec["macs"] = m.macs
    rec["energy"] = m.energy
    rec["latency_cycles"] = m.latency_cycles
    rec["utilization"] = m.utilization
    return rec


# ---------------------------------------------------------------------------
# shared scan machinery

class _ClassData:
    """Per-class matrices restricted to the searched rows."""

    def __init__(self, recompute: bool, groups: list[TemplateGroup],
                 prune: bool, cache_dir: Path | None, use_cache: bool):
        bundle = encoding.class_bundle(recompute, True, cache_dir, use_cache)
        self.recompute = recompute
        self.groups = groups
        n = len(bundle["retained"])
        if prune:
            self.rows = np.flatnonzero(bundle["retained"])
        else:
            self.rows = np.arange(n, dtype=np.int64)
        self.bs1 = bundle["shared"]["BS_P"].take(self.rows)
        self.bs2 = bundle["shared"]["BS_C"].take(self.rows)
        self.da = bundle["shared"]["DA"].take(self.rows)
        one = np.array([0], dtype=np.int64)
        self.cp = bundle["shared"]["C_P"].take(one)
        self.cc = bundle["shared"]["C_C"].take(one)
        self.br = {g.key: bundle["br"][g.stationary].take(one)
                   for g in groups}


def _spatial_vectors(b: np.ndarray, hw: AcceleratorConfig):
    rows = np.ceil(b[4] / hw.pe_rows)
    f1 = rows * np.ceil(b[6] / hw.pe_cols)
    f2 = rows * np.ceil(b[7] / hw.pe_cols)
    return f1, f2


def _chunk_ranges(n_cols: int, chunk: int) -> list[tuple[int, int]]:
    return [(c0, min(c0 + chunk, n_cols)) for c0 in range(0, n_cols, chunk)]


def _run_chunks(fn, ranges, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda r: fn(*r), ranges))
    return [fn(*r) for r in ranges]


def _scan_chunk(cd: _ClassData, bm: encoding.BoundaryMatrix,
                w: Workload, hw: AcceleratorConfig, c0: int, c1: int) -> dict:
    """Column-wise reductions for one tiling slice of one class."""
    B = bm.array[:, c0:c1]
    bf = B.astype(np.float64)
    bs1 = encoding.batch_evaluate(cd.bs1, B)
    bs2 = encoding.batch_evaluate(cd.bs2, B)
    req = np.maximum(bs1, bs2)
    da = encoding.batch_evaluate(cd.da, B)

    cap = hw.buffer_capacity_elements
    feas = req <= cap * (1 + REL_EPS)
    req_min = req.min(axis=0)

    da_masked = np.where(feas, da, np.inf)
    row_star = np.argmin(da_masked, axis=0)
    cols = np.arange(da.shape[1])
    da_star = da_masked[row_star, cols]
    col_feasible = np.isfinite(da_star)

    e = hw.energy
    h = w.heads
    n1 = float(w.I * w.K * w.L)
    n2 = float(w.I * w.L * w.J)
    rounds = bf[3] if cd.recompute else np.ones(c1 - c0)
    macs = (n1 * rounds + n2) * h
    soft = e.e_sfu * w.c_softmax * w.I * w.L * rounds * h

    f1, f2 = _spatial_vectors(bf, hw)
    cp = encoding.batch_evaluate(cd.cp, B)[0]
    cc = encoding.batch_evaluate(cd.cc, B)[0]
    comp = (cp * f1 + cc * f2) * math.ceil(h / hw.num_arrays)
    dram_cyc = np.ceil(da_star * h * hw.bytes_per_element
                       * hw.freq_hz / hw.dram_bw_bytes_per_s)
    latency = np.maximum(comp, dram_cyc)

    energy_base = e.e_dram * da_star * h + e.e_mac * macs + soft
    br = {key: encoding.batch_evaluate(m, B)[0] * e.e_buf * h
          for key, m in cd.br.items()}
    return {
        "c0": c0, "cols": cols, "feas_col": col_feasible,
        "req": req, "req_min": req_min, "da": da, "feas": feas,
        "da_star": da_star, "row_star": row_star,
        "energy_base": energy_base, "br": br, "latency": latency,
    }


def _class_data(w: Workload, prune: bool, cache_dir, use_cache):
    groups = enumerate_templates()
    out = []
    for recompute in (False, True):
        gs = [g for g in groups if g.recompute == recompute]
        out.append(_ClassData(recompute, gs, prune, cache_dir, use_cache))
    return out


def _exact_solution(w: Workload, hw: AcceleratorConfig, cd: _ClassData,
                    group: TemplateGroup, row: int,
                    bm: encoding.BoundaryMatrix, col: int) -> MappingSolution:
    base_row = int(cd.rows[row])
    t = group.materialize(base_row)
    b = bm.columns[col]
    m = analytics.evaluate(w, t, b, hw)
    mid = f"{group.key}:{base_row}:{col}"
    return MappingSolution(mid, group.key, base_row, t, b, m)


def _objective_value(m: analytics.MetricsRecord, objective: str):
    if objective == "energy":
        return (m.energy, m.latency_cycles)
    if objective == "latency":
        return (m.latency_cycles, m.energy)
    return (m.energy * m.latency_cycles, m.energy)


def optimize(w: Workload, hw: AcceleratorConfig, objective: str = "energy",
             prune: bool = True, cache_dir: Path | None = None,
             use_cache: bool = True, chunk: int = DEFAULT_CHUNK,
             threads: int = 1) -> SearchResult:
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    t_start = time.perf_counter()
    bm = enumerate_tilings_checked(w)
    classes = _class_data(w, prune, cache_dir, use_cache)

    cand: list[tuple[float, int, int, int, int]] = []
    best_val = np.inf
    req_best = np.inf
    req_cand: list[tuple[int, int, int]] = []
    rows_total = 0
    for ci, cd in enumerate(classes):
        rows_total += len(cd.rows)

        def work(c0, c1, cd=cd, ci=ci):
            return _scan_chunk(cd, bm, w, hw, c0, c1)

        for res in _run_chunks(work, _chunk_ranges(bm.n_cols, chunk), threads):
            c0 = res["c0"]
            rm = res["req_min"]
            m = rm.min()
            if m < req_best * (1 + REL_EPS):
                sel = np.flatnonzero(rm <= m * (1 + REL_EPS))[:16]
                for c in sel:
                    r = int(np.argmin(res["req"][:, c]))
                    req_cand.append((ci, r, c0 + int(c)))
                req_best = min(req_best, m)
            if not res["feas_col"].any():
                continue
            for gi, g in enumerate(cd.groups):
                if objective == "energy":
                    vals = res["energy_base"] + res["br"][g.key]
                elif objective == "latency":
                    vals = res["latency"].copy()
                else:
                    vals = ((res["energy_base"] + res["br"][g.key])
                            * res["latency"])
                vals = np.where(res["feas_col"], vals, np.inf)
                vmin = vals.min()
                if vmin <= best_val * (1 + REL_EPS):
                    sel = np.flatnonzero(vals <= vmin * (1 + REL_EPS))[:64]
                    for c in sel:
                        cand.append((float(vals[c]), ci, gi,
                                     int(res["row_star"][c]), c0 + int(c)))
                    best_val = min(best_val, vmin)

    tilings = bm.n_cols
    cells = rows_total * tilings
    if not cand:
        min_buf = _exact_min_buffer(w, hw, classes, bm, req_cand)
        return SearchResult(objective, False, None, min_buf,
                            rows_total, tilings, cells,
                            time.perf_counter() - t_start)

    keep = [c for c in cand if c[0] <= best_val * (1 + 4 * REL_EPS)]
    best_sol, best_key = None, None
    for _, ci, gi, row, col in keep:
        cd = classes[ci]
        sol = _exact_solution(w, hw, cd, cd.groups[gi], row, bm, col)
        key = (*_objective_value(sol.metrics, objective),
               sol.metrics.dram_elems, ci, gi, sol.row, col)
        if best_key is None or key < best_key:
            best_key, best_sol = key, sol
    min_buf = _exact_min_buffer(w, hw, classes, bm, req_cand)
    return SearchResult(objective, True, best_sol, min_buf,
                        rows_total, tilings, cells,
                        time.perf_counter() - t_start)


def _exact_min_buffer(w, hw, classes, bm, req_cand) -> int:
    best = None
    for ci, row, col in req_cand:
        cd = classes[ci]
        t = cd.groups[0].materialize(int(cd.rows[row]))
        v = analytics.overall_buffer_size(t, bm.columns[col])
        best = v if best is None or v < best else best
    if best is None:
        return 0
    return best * hw.bytes_per_element


def enumerate_tilings_checked(w: Workload) -> encoding.BoundaryMatrix:
    if min(w.I, w.K, w.L, w.J) < 1:
        raise ValueError("workload dimensions must be positive")
    return encoding.enumerate_tilings(w)


def _eps_front(energy: np.ndarray, latency: np.ndarray) -> np.ndarray:
    """Indices of points not strictly dominated (with float slack)."""
    order = np.lexsort((latency, energy))
    keep = []
    best_lat = np.inf
    for idx in order:
        if latency[idx] <= best_lat * (1 + REL_EPS):
            keep.append(idx)
            best_lat = min(best_lat, latency[idx])
    return np.asarray(keep, dtype=np.int64)


def pareto_front(w: Workload, hw: AcceleratorConfig, prune: bool = True,
                 cache_dir: Path | None = None, use_cache: bool = True,
                 chunk: int = DEFAULT_CHUNK,
                 threads: int = 1) -> list[ParetoPoint]:
    bm = enumerate_tilings_checked(w)
    classes = _class_data(w, prune, cache_dir, use_cache)

    cand_e, cand_l, cand_id = [], [], []
    for ci, cd in enumerate(classes):

        def work(c0, c1, cd=cd, ci=ci):
            return _scan_chunk(cd, bm, w, hw, c0, c1)

        for res in _run_chunks(work, _chunk_ranges(bm.n_cols, chunk), threads):
            ok = np.flatnonzero(res["feas_col"])
            if not len(ok):
                continue
            for gi, g in enumerate(cd.groups):
                energy = res["energy_base"][ok] + res["br"][g.key][ok]
                latency = res["latency"][ok]
                sub = _eps_front(energy, latency)
                for s in sub:
                    c = int(ok[s])
                    cand_e.append(float(energy[s]))
                    cand_l.append(float(latency[s]))
                    cand_id.append((ci, gi, int(res["row_star"][c]),
                                    res["c0"] + c))

    if not cand_e:
        return []
    sub = _eps_front(np.asarray(cand_e), np.asarray(cand_l))

    exact: dict[tuple, tuple] = {}
    for s in sub:
        ci, gi, row, col = cand_id[s]
        cd = classes[ci]
        sol = _exact_solution(w, hw, cd, cd.groups[gi], row, bm, col)
        key = (sol.metrics.energy, sol.metrics.latency_cycles)
        ident = (ci, gi, sol.row, col)
        prev = exact.get(key)
        if prev is None or ident < prev[1]:
            flags = {cd.recompute} | (prev[2] if prev else set())
            exact[key] = (sol, ident, flags)
        else:
            prev[2].add(cd.recompute)

    pts = sorted(exact.items())
    front: list[ParetoPoint] = []
    best_lat = None
    for (energy, lat), (sol, _ident, flags) in pts:
        if best_lat is not None and lat >= best_lat:
            continue
        best_lat = lat
        front.append(ParetoPoint(energy, lat, sol,
                                 tuple(sorted(flags))))
    front.reverse()
    return front


def dram_vs_buffer_curve(w: Workload, hw: AcceleratorConfig,
                         budgets_bytes: list[int], prune: bool = True,
                         cache_dir: Path | None = None,
                         use_cache: bool = True, chunk: int = DEFAULT_CHUNK,
                         threads: int = 1) -> list[dict]:
    bm = enumerate_tilings_checked(w)
    classes = _class_data(w, prune, cache_dir, use_cache)
    budgets = sorted(int(x) for x in budgets_bytes)
    caps = [b // hw.bytes_per_element for b in budgets]

    best = [np.inf] * len(budgets)
    cand: list[list[tuple[int, int, int]]] = [[] for _ in budgets]
    for ci, cd in enumerate(classes):

        def work(c0, c1, cd=cd):
            B = bm.array[:, c0:c1]
            req = np.maximum(encoding.batch_evaluate(cd.bs1, B),
                             encoding.batch_evaluate(cd.bs2, B))
            da = encoding.batch_evaluate(cd.da, B)
            return c0, req, da

        for c0, req, da in _run_chunks(work, _chunk_ranges(bm.n_cols, chunk),
                                       threads):
            for bi, cap in enumerate(caps):
                masked = np.where(req <= cap * (1 + REL_EPS), da, np.inf)
                m = masked.min()
                if not np.isfinite(m) or m > best[bi] * (1 + REL_EPS):
                    continue
                rs, cs = np.nonzero(masked <= m * (1 + REL_EPS))
                for r, c in list(zip(rs, cs))[:16]:
                    cand[bi].append((ci, int(r), c0 + int(c)))
                best[bi] = min(best[bi], m)

    out = []
    for bi, budget in enumerate(budgets):
        exact_best = None
        for ci, row, col in cand[bi]:
            cd = classes[ci]
            t = cd.groups[0].materialize(int(cd.rows[row]))
            b = bm.columns[col]
            if analytics.overall_buffer_size(t, b) > caps[bi]:
                continue
            v = analytics.total_dram_access(t, b) * w.heads
            if exact_best is None or v < exact_best:
                exact_best = v
        out.append({"buffer_bytes": budget,
                    "dram_elems": exact_best,
                    "feasible": exact_best is not None})
    return out


# ---------------------------------------------------------------------------
# unfused two-pass baseline: each matmul scheduled alone, intermediate C
# spilled to DRAM between the passes

_GEMM1 = (("i", "k", "l"), "k",
          (("A", ("i", "k")), ("B", ("k", "l")), ("C_out", ("i", "l"))))
_GEMM2 = (("i", "l", "j"), "l",
          (("C_in", ("i", "l")), ("D", ("l", "j")), ("E", ("i", "j"))))


def _gemm_rows(gemm) -> tuple[list[dict], encoding.TagMatrix,
                              encoding.TagMatrix]:
    dims, red, ops = gemm
    metas, bs_rows, da_rows = [], [], []
    for order in permutations(dims):
        pos = {d: p for p, d in enumerate(order)}
        for lv in product((0, 1, 2, INTRA_LEVEL), repeat=3):
            bs_terms, da_terms, op_da = [], [], []
            for (name, odims), lvl in zip(ops, lv):
                held = tuple(d for d in odims if pos[d] >= lvl)
                bs_e = _exp(held, odims)
                bs_terms.append((1, bs_e))
                start = len(dims) - 1 if lvl == INTRA_LEVEL else lvl - 1
                beta = None
                for p in range(start, -1, -1):
                    if order[p] in odims:
                        beta = p
                        break
                terms: list[Term]
                if name in ("C_out", "E"):
                    # psums revisit once per reduction step outside the
                    # innermost held-region boundary: 2R - 1 round trips
                    size_e = _exp(odims, odims)
                    red_out = [] if beta is None else \
                        [p for p in range(beta) if order[p] == red]
                    if red_out:
                        r_e = _exp(tuple(order[p] for p in red_out))
                        terms = [analytics._scale((2, size_e), r_e),
                                 (-1, size_e)]
                    else:
                        terms = [(1, size_e)]
                else:
                    if beta is None:
                        terms = [(1, _exp(odims, odims))]
                    else:
                        sweep = _exp(tuple(order[p] for p in range(beta + 1)))
                        terms = [analytics._scale((1, bs_e), sweep)]
                da_terms.extend(terms)
                op_da.append((name, terms))
            metas.append({"order": order, "levels": lv, "per_op": op_da,
                          "bs_terms": list(bs_terms)})
            bs_rows.append(bs_terms)
            da_rows.append(da_terms)
    return (metas, encoding.tag_matrix_from_terms(bs_rows),
            encoding.tag_matrix_from_terms(da_rows))


def _gemm_tilings(w: Workload, dims) -> tuple[list[BoundaryVector], np.ndarray]:
    sizes = {"i": w.I, "k": w.K, "l": w.L, "j": w.J}
    cols = []
    for combo in product(*(divisor_pairs(sizes[d]) for d in dims)):
        b = [1] * 8
        for d, (g, dd) in zip(dims, combo):
            b[DIM_INDEX[d]] = dd
            b[4 + DIM_INDEX[d]] = g
        cols.append(tuple(b))
    arr = np.array(cols, dtype=np.int64).T.reshape(8, len(cols))
    return cols, arr


def _best_gemm(w: Workload, hw: AcceleratorConfig, gemm) -> dict:
    metas, bs_m, da_m = _gemm_rows(gemm)
    cols, arr = _gemm_tilings(w, gemm[0])
    bs = encoding.batch_evaluate(bs_m, arr)
    da = encoding.batch_evaluate(da_m, arr)
    feas = bs <= hw.buffer_capacity_elements * (1 + REL_EPS)
    masked = np.where(feas, da, np.inf)
    m = masked.min()
    if not np.isfinite(m):
        return {"feasible": False}
    rs, cs = np.nonzero(masked <= m * (1 + REL_EPS))
    best = None
    for r, c in zip(rs, cs):
        b = cols[int(c)]
        if analytics.eval_terms(bs_m.row_terms(int(r)), b) > \
                hw.buffer_capacity_elements:
            continue
        total = analytics.eval_terms(da_m.row_terms(int(r)), b)
        key = (total, int(r), int(c))
        if best is None or key < best[0]:
            per_op = {name: analytics.eval_terms(terms, b)
                      for name, terms in metas[int(r)]["per_op"]}
            best = (key, {"feasible": True, "dram_elems": total * w.heads,
                          "per_operand": {k: v * w.heads
                                          for k, v in per_op.items()},
                          "order": "".join(metas[int(r)]["order"]),
                          "levels": metas[int(r)]["levels"],
                          "boundary": b})
    return best[1]


def unfused_baseline(w: Workload, hw: AcceleratorConfig) -> dict:
    """Two dedicated single-matmul schedules with C stored to DRAM between
    them; each pass gets the whole buffer."""
    g1 = _best_gemm(w, hw, _GEMM1)
    g2 = _best_gemm(w, hw, _GEMM2)
    if not (g1.get("feasible") and g2.get("feasible")):
        return {"feasible": False, "gemm1": g1, "gemm2": g2}
    c_traffic = g1["per_operand"]["C_out"] + g2["per_operand"]["C_in"]
    return {
        "feasible": True,
        "dram_elems": g1["dram_elems"] + g2["dram_elems"],
        "c_traffic_elems": c_traffic,
        "gemm1": g1,
        "gemm2": g2,
    }
