"""Built-in problem families: builders, refinement keys, seeded generators."""

from .cpp import CppInstance, build_cpp, generate_cpp
from .flcvar import (
    FlCvarInstance,
    assignment_costs,
    build_flcvar,
    cvar_tail_average,
    generate_flcvar,
)
from .io import (
    instance_from_dict,
    instance_to_dict,
    load_instance,
    save_instance,
    validate_instance,
)
from .smcf import CONFIG_GRID, SmcfInstance, build_smcf, generate_smcf

__all__ = [
    "CONFIG_GRID",
    "CppInstance",
    "FlCvarInstance",
    "SmcfInstance",
    "assignment_costs",
    "build_cpp",
    "build_flcvar",
    "build_smcf",
    "cvar_tail_average",
    "generate_cpp",
    "generate_flcvar",
    "generate_smcf",
    "instance_from_dict",
    "instance_to_dict",
    "load_instance",
    "save_instance",
    "validate_instance",
]
