"""Symbolic dominance pruning.

A template u dominates v when u's buffer requirement (both operator phases)
and DRAM access are <= v's for every positive boundary assignment, with at
least one comparison structurally strict.  Dominance is certified purely on
the exponent terms, so a pruned template can never beat a survivor at any
tiling of any workload.  Within a group all templates share MAC count,
softmax cost, compute cycles, and buffer<->RF traffic, so (buffer, DRAM)
dominance carries over to (energy, latency) dominance and the Pareto front
survives pruning intact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MappingTemplate
from . import analytics
from .analytics import Term
from .enumeration import TemplateGroup

ALWAYS_LEQ = "ALWAYS_LEQ"
ALWAYS_LT = "ALWAYS_LT"
UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class SymbolicExpr:
    terms: tuple[Term, ...]

    @staticmethod
    def of(terms: list[Term]) -> "SymbolicExpr":
        return SymbolicExpr(tuple(analytics.collect_terms(terms)))


def _term_leq(u: Term, v: Term) -> bool:
    cu, eu = u
    cv, ev = v
    return cu <= cv and all(a <= b for a, b in zip(eu, ev))


def _term_strict(u: Term, v: Term) -> bool:
    return u != v


def _match(us: tuple[Term, ...], vs: tuple[Term, ...], i: int,
           used: int, strict: bool) -> tuple[bool, bool] | None:
    """Backtracking injective assignment of u-terms onto v-terms."""
    if i == len(us):
        leftover = used != (1 << len(vs)) - 1
        return (True, strict or leftover)
    for jj, v in enumerate(vs):
        if used & (1 << jj) or not _term_leq(us[i], v):
            continue
        hit = _match(us, vs, i + 1, used | (1 << jj),
                     strict or _term_strict(us[i], v))
        if hit is not None:
            return hit
    return None


def symbolic_leq(u: SymbolicExpr, v: SymbolicExpr) -> str:
    """Sound comparison over all boundary assignments >= 1.

    Certifies u <= v by mapping each u term injectively onto a v term with
    componentwise <= exponents and <= coefficient.  ALWAYS_LT additionally
    requires some slack (a strict pair or leftover v terms): then u < v
    whenever every boundary exceeds 1, and u <= v everywhere.  Anything
    uncertifiable is UNKNOWN, never a prune.
    """
    if len(u.terms) > len(v.terms):
        return UNKNOWN
    hit = _match(u.terms, v.terms, 0, 0, False)
    if hit is None:
        return UNKNOWN
    return ALWAYS_LT if hit[1] else ALWAYS_LEQ


Exprs = tuple[SymbolicExpr, SymbolicExpr, SymbolicExpr]  # BS_Op1, BS_Op2, DA


def template_exprs(t: MappingTemplate) -> Exprs:
    return (
        SymbolicExpr.of(analytics.operator_buffer_size(t, "Op1")),
        SymbolicExpr.of(analytics.operator_buffer_size(t, "Op2")),
        SymbolicExpr.of(analytics.dram_terms(t)),
    )


def _dominates(u: Exprs, v: Exprs) -> bool:
    """u makes v redundant: both buffer phases and DRAM certified <=, with
    strictness somewhere.  Dominance on both phases bounds their max, which
    is the capacity check, so feasibility of v implies feasibility of u."""
    cmps = [symbolic_leq(a, b) for a, b in zip(u, v)]
    if UNKNOWN in cmps:
        return False
    return ALWAYS_LT in cmps


_SAMPLES = np.array([
    [1, 1, 1, 1, 1, 1, 1, 1],
    [2, 2, 2, 2, 2, 2, 2, 2],
    [2, 3, 5, 7, 11, 13, 17, 19],
    [19, 17, 13, 11, 7, 5, 3, 2],
    [1, 4, 1, 4, 4, 1, 4, 1],
    [4, 1, 4, 1, 1, 4, 1, 4],
    [64, 2, 2, 64, 2, 64, 64, 2],
    [2, 64, 64, 2, 64, 2, 2, 64],
    [3, 1, 9, 1, 27, 1, 81, 1],
    [1, 27, 1, 9, 1, 81, 1, 3],
], dtype=np.float64)


def _sample_values(exprs: list[Exprs]) -> np.ndarray:
    """(n, 3, S) numeric values at the sample boundary points."""
    logs = np.log(_SAMPLES)  # (S, 8)
    out = np.empty((len(exprs), 3, len(_SAMPLES)))
    for i, ex in enumerate(exprs):
        for m, e in enumerate(ex):
            coeffs = np.array([c for c, _ in e.terms], dtype=np.float64)
            exps = np.array([list(p) for _, p in e.terms], dtype=np.float64)
            out[i, m] = coeffs @ np.exp(exps @ logs.T)
    return out


def prune_rows(exprs: list[Exprs]) -> list[bool]:
    """Retained mask.  Rows are visited best-sampled-value first; a row is
    pruned only when certified dominated by an already retained row, so
    equal rows can never eliminate each other."""
    n = len(exprs)
    vals = _sample_values(exprs)
    goodness = vals.sum(axis=(1, 2))
    visit = sorted(range(n), key=lambda i: (goodness[i], i))
    survivors: list[int] = []
    retained = [False] * n
    eps = 1e-9
    for v in visit:
        dominated = False
        for u in survivors:
            # cheap necessary condition before the symbolic certificate
            if np.all(vals[u] <= vals[v] * (1 + eps)) \
                    and _dominates(exprs[u], exprs[v]):
                dominated = True
                break
        if not dominated:
            survivors.append(v)
            retained[v] = True
    return retained


def prune_group(g: TemplateGroup,
                exprs: list[Exprs] | None = None) -> list[MappingTemplate]:
    """Survivor templates of one group (stationary-independent result)."""
    if exprs is None:
        exprs = [template_exprs(t) for t in g.templates]
    retained = prune_rows(exprs)
    return [t for t, keep in zip(g.templates, retained) if keep]
