# Moment-equation derivation, cumulant closure and compilation.

from .frame import PhaseCharges, phase_charges, static_frame
from .master import (
    Dissipator,
    EffectiveParams,
    MasterEquation,
    PhysicalParams,
    cavity_model,
    derive_effective,
    effective_model,
    full_model,
)
from .moments import (
    Moment,
    canonical_moment,
    close_value,
    cumulant_close,
    derive_moment_eq,
    expand_collective,
    moment,
    symmetry_reduce,
)
from .system import (
    MomentSystem,
    complete_and_compile,
    compile_model,
    default_seeds,
    product_state_values,
)

__all__ = [
    "Dissipator",
    "EffectiveParams",
    "MasterEquation",
    "Moment",
    "MomentSystem",
    "PhaseCharges",
    "PhysicalParams",
    "canonical_moment",
    "cavity_model",
    "close_value",
    "compile_model",
    "complete_and_compile",
    "cumulant_close",
    "default_seeds",
    "derive_effective",
    "derive_moment_eq",
    "effective_model",
    "expand_collective",
    "full_model",
    "moment",
    "phase_charges",
    "product_state_values",
    "static_frame",
    "symmetry_reduce",
]
