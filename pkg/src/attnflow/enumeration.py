"""Offline template enumeration.

Walks all inter-tile loop orders and per-operand buffering-level
assignments, keeps the valid ones, and partitions them into the 18 pruning
groups (2 recompute classes x 9 stationary pairs).  Buffering levels,
validity, and the recompute flag do not depend on the stationary pair, so
the base template list of a class is built once and shared by its 9 groups.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

from .core import (
    INTRA_LEVEL,
    MappingTemplate,
    Operand,
    OPERANDS,
    STATIONARY_MODES,
    all_loop_orders,
    divisor_pairs,  # noqa: F401  (re-exported: tiling enumeration helper)
    effective_dims,
    recompute_from_order,
    validate_template,
)


@dataclass(frozen=True)
class TemplateGroup:
    recompute: bool
    stationary: tuple[str, str]
    templates: tuple[MappingTemplate, ...]  # shared across the class's groups

    @property
    def key(self) -> str:
        cls = "re" if self.recompute else "nr"
        return f"{cls}-{self.stationary[0]}-{self.stationary[1]}"

    def materialize(self, row: int) -> MappingTemplate:
        """The row's template carrying this group's stationary pair."""
        t = self.templates[row]
        return MappingTemplate(t.loop_order, t.levels, self.stationary,
                               t.recompute)


def level_domain(loop_order: tuple[str, ...], op: Operand,
                 recompute: bool) -> list[int]:
    """Levels worth enumerating: at or inside the outermost layer carrying
    one of the operand's effective dimensions, plus single-tile residency.
    Levels further out retain exactly the same tiles as the outermost one."""
    outer = min(loop_order.index(d) for d in effective_dims(op, recompute))
    return list(range(outer, 4)) + [INTRA_LEVEL]


@lru_cache(maxsize=None)
def base_templates(recompute: bool) -> tuple[MappingTemplate, ...]:
    """All valid templates of one recompute class, default stationary pair,
    in deterministic order (loop order lexicographic, then level tuples)."""
    out: list[MappingTemplate] = []
    for order in sorted(all_loop_orders()):
        if recompute_from_order(order) != recompute:
            continue
        domains = [level_domain(order, op, recompute) for op in OPERANDS]
        for levels in itertools.product(*domains):
            t = MappingTemplate(order, levels)
            if validate_template(t):
                out.append(t)
    return tuple(out)


def enumerate_templates() -> list[TemplateGroup]:
    """The 18 groups, recompute class major, stationary pairs row-major."""
    groups = []
    for recompute in (False, True):
        templates = base_templates(recompute)
        for s1 in STATIONARY_MODES:
            for s2 in STATIONARY_MODES:
                groups.append(TemplateGroup(recompute, (s1, s2), templates))
    return groups
