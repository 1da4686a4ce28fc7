"""Matrix encoding of metric formulas and batched evaluation.

Each metric of each template is a sum of monomials over the 8 boundaries, so
a group of templates becomes six term matrices (exponent rows plus term
bookkeeping) and a workload becomes a boundary matrix whose columns are
tilings.  The whole (template x tiling) grid is then evaluated with one
exp(E @ ln B) pass per metric; winners are re-checked in exact integer
arithmetic before anything is reported.

The per-class matrices and pruning bitmap are workload-independent, so they
are built once and cached on disk (see cache_path; ATTNFLOW_CACHE_DIR or
--cache-dir relocates it).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analytics
from .analytics import Term
from .core import (
    BoundaryVector,
    MappingTemplate,
    STATIONARY_MODES,
    Workload,
    divisor_pairs,
)
from .enumeration import TemplateGroup, base_templates
from . import pruning

TAGS = ("BS_P", "BS_C", "DA", "C_P", "C_C", "BR")

SCHEMA_VERSION = 2

_ORDER_OF_LEVEL_CACHE: dict = {}


@dataclass(frozen=True)
class QueryVector:
    exponents: tuple[int, ...]
    metric_tag: str
    constant_terms: tuple[Term, ...]


def _tag_terms(t: MappingTemplate, tag: str) -> list[Term]:
    if tag == "BS_P":
        return analytics.operator_buffer_size(t, "Op1")
    if tag == "BS_C":
        return analytics.operator_buffer_size(t, "Op2")
    if tag == "DA":
        return analytics.dram_terms(t)
    if tag == "C_P":
        return analytics.cycle_terms(t, "Op1")
    if tag == "C_C":
        return analytics.cycle_terms(t, "Op2")
    if tag == "BR":
        return analytics.buf_rf_terms(t)
    raise ValueError(f"unknown metric tag {tag!r}")


def to_query_vector(t: MappingTemplate, metric_tag: str) -> QueryVector:
    terms = tuple(_tag_terms(t, metric_tag))
    return QueryVector(terms[0][1], metric_tag, terms)


@dataclass
class TagMatrix:
    """Term-compressed rows: row r owns terms row_ptr[r]:row_ptr[r+1]."""

    coeffs: np.ndarray   # (n_terms,) float64
    exps: np.ndarray     # (n_terms, 8) int8
    row_ptr: np.ndarray  # (n_rows + 1,) int64

    @property
    def n_rows(self) -> int:
        return len(self.row_ptr) - 1

    def row_terms(self, row: int) -> list[Term]:
        lo, hi = self.row_ptr[row], self.row_ptr[row + 1]
        return [(int(self.coeffs[i]), tuple(int(v) for v in self.exps[i]))
                for i in range(lo, hi)]

    def take(self, rows: np.ndarray) -> "TagMatrix":
        idx = [np.arange(self.row_ptr[r], self.row_ptr[r + 1])
               for r in rows]
        counts = np.array([len(i) for i in idx], dtype=np.int64)
        flat = np.concatenate(idx) if idx else np.empty(0, dtype=np.int64)
        ptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        return TagMatrix(self.coeffs[flat], self.exps[flat], ptr)


def tag_matrix_from_terms(rows: list[list[Term]]) -> TagMatrix:
    coeffs, exps, ptr = [], [], [0]
    for terms in rows:
        for c, e in terms:
            coeffs.append(c)
            exps.append(e)
        ptr.append(len(coeffs))
    return TagMatrix(
        np.asarray(coeffs, dtype=np.float64),
        np.asarray(exps, dtype=np.int8).reshape(len(coeffs), 8),
        np.asarray(ptr, dtype=np.int64),
    )


@dataclass
class BoundaryMatrix:
    columns: list[BoundaryVector]
    array: np.ndarray  # (8, n_cols) int64
    workload: Workload

    @property
    def n_cols(self) -> int:
        return self.array.shape[1]


def enumerate_tilings(w: Workload) -> BoundaryMatrix:
    """Every exact tiling: Cartesian product of the divisor splits."""
    cols = []
    for gi, di in divisor_pairs(w.I):
        for gk, dk in divisor_pairs(w.K):
            for gl, dl in divisor_pairs(w.L):
                for gj, dj in divisor_pairs(w.J):
                    cols.append((di, dk, dl, dj, gi, gk, gl, gj))
    arr = np.array(cols, dtype=np.int64).T.reshape(8, len(cols))
    return BoundaryMatrix(cols, arr, w)


def batch_evaluate(m: TagMatrix, b_array: np.ndarray) -> np.ndarray:
    """Log-domain evaluation of every (row, column) cell.

    Accurate to ~1e-9 relative; anything that feeds a reported result must
    be confirmed with exact_row (integer arithmetic).
    """
    ln_b = np.log(b_array.astype(np.float64))          # (8, n_cols)
    vals = np.exp(m.exps.astype(np.float64) @ ln_b)    # (n_terms, n_cols)
    vals *= m.coeffs[:, None]
    if m.n_rows == 0:
        return np.zeros((0, b_array.shape[1]))
    return np.add.reduceat(vals, m.row_ptr[:-1], axis=0)


def exact_row(m: TagMatrix, row: int, b: BoundaryVector) -> int:
    return analytics.eval_terms(m.row_terms(row), b)


@dataclass
class QueryMatrixSet:
    group: TemplateGroup
    matrices: dict[str, TagMatrix]
    retained: np.ndarray  # (n_rows,) bool: survives dedup + pruning

    @property
    def n_rows(self) -> int:
        return len(self.retained)

    def template(self, row: int) -> MappingTemplate:
        return self.group.materialize(row)


# ---------------------------------------------------------------------------
# per-class construction (shared by the 9 stationary groups) and disk cache

_class_memo: dict[tuple[bool, bool], dict] = {}


def default_cache_dir() -> Path:
    env = os.environ.get("ATTNFLOW_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "attnflow"


def cache_path(cache_dir: Path | None, recompute: bool) -> Path:
    base = Path(cache_dir) if cache_dir else default_cache_dir()
    cls = "re" if recompute else "nr"
    return base / f"query-matrices-v{SCHEMA_VERSION}-{cls}.bin"


def _build_class(recompute: bool, prune: bool) -> dict:
    templates = base_templates(recompute)
    rows_bs1, rows_bs2, rows_da = [], [], []
    sig_first: dict = {}
    sig_of_row = np.empty(len(templates), dtype=np.int64)
    uniq_exprs: list[pruning.Exprs] = []
    for r, t in enumerate(templates):
        bs1 = analytics.operator_buffer_size(t, "Op1")
        bs2 = analytics.operator_buffer_size(t, "Op2")
        da = analytics.dram_terms(t)
        rows_bs1.append(bs1)
        rows_bs2.append(bs2)
        rows_da.append(da)
        sig = (tuple(bs1), tuple(bs2), tuple(da))
        if sig not in sig_first:
            sig_first[sig] = len(uniq_exprs)
            uniq_exprs.append((pruning.SymbolicExpr(sig[0]),
                               pruning.SymbolicExpr(sig[1]),
                               pruning.SymbolicExpr(sig[2])))
        sig_of_row[r] = sig_first[sig]

    if prune:
        sig_retained = np.asarray(pruning.prune_rows(uniq_exprs), dtype=bool)
        first_of_sig = np.full(len(uniq_exprs), -1, dtype=np.int64)
        for r in range(len(templates)):
            if first_of_sig[sig_of_row[r]] < 0:
                first_of_sig[sig_of_row[r]] = r
        retained = np.zeros(len(templates), dtype=bool)
        for s, keep in enumerate(sig_retained):
            if keep:
                retained[first_of_sig[s]] = True
    else:
        retained = np.ones(len(templates), dtype=bool)

    shared = {
        "BS_P": tag_matrix_from_terms(rows_bs1),
        "BS_C": tag_matrix_from_terms(rows_bs2),
        "DA": tag_matrix_from_terms(rows_da),
    }
    n = len(templates)
    probe = templates[0]
    shared["C_P"] = tag_matrix_from_terms(
        [analytics.cycle_terms(probe, "Op1")] * n)
    shared["C_C"] = tag_matrix_from_terms(
        [analytics.cycle_terms(probe, "Op2")] * n)
    br = {}
    for s1 in STATIONARY_MODES:
        for s2 in STATIONARY_MODES:
            t_s = MappingTemplate(probe.loop_order, probe.levels, (s1, s2))
            br[(s1, s2)] = tag_matrix_from_terms(
                [analytics.buf_rf_terms(t_s)] * n)
    return {"shared": shared, "br": br, "retained": retained}


def class_bundle(recompute: bool, prune: bool = True,
                 cache_dir: Path | None = None,
                 use_cache: bool = True) -> dict:
    key = (recompute, prune)
    if key in _class_memo:
        return _class_memo[key]
    bundle = None
    path = cache_path(cache_dir, recompute)
    if prune and use_cache and path.exists():
        try:
            bundle = _read_cache(path)
        except (ValueError, OSError):
            bundle = None
    if bundle is None:
        bundle = _build_class(recompute, prune)
        if prune and use_cache:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                _write_cache(path, recompute, bundle)
            except OSError:
                pass
    _class_memo[key] = bundle
    return bundle


def build_query_set(group: TemplateGroup, prune: bool = True,
                    cache_dir: Path | None = None,
                    use_cache: bool = True) -> QueryMatrixSet:
    bundle = class_bundle(group.recompute, prune, cache_dir, use_cache)
    matrices = dict(bundle["shared"])
    matrices["BR"] = bundle["br"][group.stationary]
    return QueryMatrixSet(group, matrices, bundle["retained"])


# binary cache: header, retained bitmap, then the tag blocks


def _write_block(fh, m: TagMatrix) -> None:
    fh.write(struct.pack("<qq", len(m.coeffs), m.n_rows))
    fh.write(m.row_ptr.astype("<i8").tobytes())
    fh.write(m.coeffs.astype("<i4").tobytes())
    fh.write(m.exps.astype("<i1").tobytes())


def _read_block(fh) -> TagMatrix:
    n_terms, n_rows = struct.unpack("<qq", fh.read(16))
    row_ptr = np.frombuffer(fh.read(8 * (n_rows + 1)), dtype="<i8")
    coeffs = np.frombuffer(fh.read(4 * n_terms), dtype="<i4")
    exps = np.frombuffer(fh.read(8 * n_terms), dtype="<i1")
    return TagMatrix(coeffs.astype(np.float64),
                     exps.reshape(n_terms, 8).copy(),
                     row_ptr.copy())


def _write_cache(path: Path, recompute: bool, bundle: dict) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        retained = bundle["retained"]
        fh.write(struct.pack("<4sIBq", b"AFQM", SCHEMA_VERSION,
                             int(recompute), len(retained)))
        fh.write(np.packbits(retained).tobytes())
        for tag in ("BS_P", "BS_C", "DA", "C_P", "C_C"):
            _write_block(fh, bundle["shared"][tag])
        for s1 in STATIONARY_MODES:
            for s2 in STATIONARY_MODES:
                _write_block(fh, bundle["br"][(s1, s2)])
    os.replace(tmp, path)


def _read_cache(path: Path) -> dict:
    with open(path, "rb") as fh:
        magic, schema, recompute, n = struct.unpack("<4sIBq", fh.read(17))
        if magic != b"AFQM" or schema != SCHEMA_VERSION:
            raise ValueError("stale cache schema")
        packed = np.frombuffer(fh.read((n + 7) // 8), dtype=np.uint8)
        retained = np.unpackbits(packed, count=n).astype(bool)
        shared = {tag: _read_block(fh)
                  for tag in ("BS_P", "BS_C", "DA", "C_P", "C_C")}
        br = {}
        for s1 in STATIONARY_MODES:
            for s2 in STATIONARY_MODES:
                br[(s1, s2)] = _read_block(fh)
        expect = len(base_templates(bool(recompute)))
        if n != expect:
            raise ValueError("cache row count mismatch")
    return {"shared": shared, "br": br, "retained": retained}


def clear_memo() -> None:
    _class_memo.clear()
