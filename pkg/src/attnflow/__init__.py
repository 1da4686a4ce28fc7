"""Exhaustive optimizer for fused attention dataflows on spatial accelerators."""

from .core import (
    ACCEL_LARGE,
    ACCEL_SMALL,
    AcceleratorConfig,
    BOUNDARY_NAMES,
    DIMS,
    EnergyCoefficients,
    INTRA_LEVEL,
    MappingTemplate,
    Operand,
    OPERANDS,
    Workload,
    divisor_pairs,
    effective_dims,
    find_blocker,
    make_template,
    recompute_from_order,
    validate_template,
)

__all__ = [
    "ACCEL_LARGE",
    "ACCEL_SMALL",
    "AcceleratorConfig",
    "BOUNDARY_NAMES",
    "DIMS",
    "EnergyCoefficients",
    "INTRA_LEVEL",
    "MappingTemplate",
    "Operand",
    "OPERANDS",
    "Workload",
    "divisor_pairs",
    "effective_dims",
    "find_blocker",
    "make_template",
    "recompute_from_order",
    "validate_template",
]

__version__ = "0.1.0"
