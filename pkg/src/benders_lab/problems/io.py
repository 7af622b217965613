"""JSON instance schema: explicit dimension fields, no shape inference."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import InvalidInstance
from .cpp import CppInstance
from .flcvar import FlCvarInstance
from .smcf import SmcfInstance

AnyInstance = Union[CppInstance, SmcfInstance, FlCvarInstance]

FAMILIES = ("cpp", "smcf", "flcvar")


def family_of(inst: AnyInstance) -> str:
    return {CppInstance: "cpp", SmcfInstance: "smcf", FlCvarInstance: "flcvar"}[type(inst)]


def instance_to_dict(inst: AnyInstance) -> dict:
    if isinstance(inst, CppInstance):
        return {
            "family": "cpp",
            "n_sources": inst.n_sources,
            "n_sinks": inst.n_sinks,
            "n_resources": int(inst.resource_limit.shape[0]),
            "n_scenarios": inst.n_scenarios,
            "capacity_cost": inst.capacity_cost.tolist(),
            "resource_usage": inst.resource_usage.tolist(),
            "resource_limit": inst.resource_limit.tolist(),
            "arc_cost": inst.arc_cost.tolist(),
            "probabilities": inst.probabilities.tolist(),
            "demands": inst.demands.tolist(),
        }
    if isinstance(inst, SmcfInstance):
        return {
            "family": "smcf",
            "n_nodes": inst.n_nodes,
            "n_arcs": inst.n_arcs,
            "n_commodities": inst.n_commodities,
            "n_scenarios": inst.n_scenarios,
            "arcs": inst.arcs.tolist(),
            "commodities": inst.commodities.tolist(),
            "routing_cost": inst.routing_cost.tolist(),
            "capacity": inst.capacity.tolist(),
            "install_cost": inst.install_cost.tolist(),
            "probabilities": inst.probabilities.tolist(),
            "demands": inst.demands.tolist(),
        }
    if isinstance(inst, FlCvarInstance):
        return {
            "family": "flcvar",
            "n_facilities": inst.n_facilities,
            "n_clients": inst.n_clients,
            "n_scenarios": inst.n_scenarios,
            "opening_cost": inst.opening_cost.tolist(),
            "capacity": inst.capacity.tolist(),
            "assign_cost": inst.assign_cost.tolist(),
            "risk_level": inst.risk_level,
            "probabilities": inst.probabilities.tolist(),
            "demands": inst.demands.tolist(),
        }
    raise InvalidInstance(f"unknown instance type {type(inst).__name__}")


def _require(data: dict, key: str):
    if key not in data:
        raise InvalidInstance(f"missing field '{key}'")
    return data[key]


def _check_declared(name: str, array: np.ndarray, expected: tuple[int, ...]):
    if array.shape != expected:
        raise InvalidInstance(f"{name} has shape {array.shape}, declared {expected}")


def instance_from_dict(data: dict) -> AnyInstance:
    family = _require(data, "family")
    if family == "cpp":
        nl, nr = int(_require(data, "n_sources")), int(_require(data, "n_sinks"))
        nk, ns = int(_require(data, "n_resources")), int(_require(data, "n_scenarios"))
        inst = CppInstance(
            capacity_cost=np.asarray(_require(data, "capacity_cost"), dtype=float),
            resource_usage=np.asarray(_require(data, "resource_usage"), dtype=float),
            resource_limit=np.asarray(_require(data, "resource_limit"), dtype=float),
            arc_cost=np.asarray(_require(data, "arc_cost"), dtype=float),
            demands=np.asarray(_require(data, "demands"), dtype=float),
            probabilities=np.asarray(_require(data, "probabilities"), dtype=float),
        )
        _check_declared("capacity_cost", inst.capacity_cost, (nl,))
        _check_declared("resource_usage", inst.resource_usage, (nk, nl))
        _check_declared("resource_limit", inst.resource_limit, (nk,))
        _check_declared("arc_cost", inst.arc_cost, (nl, nr))
        _check_declared("demands", inst.demands, (ns, nr))
        _check_declared("probabilities", inst.probabilities, (ns,))
        return inst
    if family == "smcf":
        nv = int(_require(data, "n_nodes"))
        ne, nk = int(_require(data, "n_arcs")), int(_require(data, "n_commodities"))
        ns = int(_require(data, "n_scenarios"))
        inst = SmcfInstance(
            n_nodes=nv,
            arcs=np.asarray(_require(data, "arcs"), dtype=int),
            commodities=np.asarray(_require(data, "commodities"), dtype=int),
            routing_cost=np.asarray(_require(data, "routing_cost"), dtype=float),
            capacity=np.asarray(_require(data, "capacity"), dtype=float),
            install_cost=np.asarray(_require(data, "install_cost"), dtype=float),
            demands=np.asarray(_require(data, "demands"), dtype=float),
            probabilities=np.asarray(_require(data, "probabilities"), dtype=float),
        )
        _check_declared("arcs", inst.arcs, (ne, 2))
        _check_declared("commodities", inst.commodities, (nk, 2))
        _check_declared("routing_cost", inst.routing_cost, (ne, nk))
        _check_declared("capacity", inst.capacity, (ne,))
        _check_declared("install_cost", inst.install_cost, (ne,))
        _check_declared("demands", inst.demands, (ns, nk))
        _check_declared("probabilities", inst.probabilities, (ns,))
        return inst
    if family == "flcvar":
        ni, nj = int(_require(data, "n_facilities")), int(_require(data, "n_clients"))
        ns = int(_require(data, "n_scenarios"))
        inst = FlCvarInstance(
            opening_cost=np.asarray(_require(data, "opening_cost"), dtype=float),
            capacity=np.asarray(_require(data, "capacity"), dtype=float),
            assign_cost=np.asarray(_require(data, "assign_cost"), dtype=float),
            demands=np.asarray(_require(data, "demands"), dtype=float),
            probabilities=np.asarray(_require(data, "probabilities"), dtype=float),
            risk_level=float(_require(data, "risk_level")),
        )
        _check_declared("opening_cost", inst.opening_cost, (ni,))
        _check_declared("capacity", inst.capacity, (ni,))
        _check_declared("assign_cost", inst.assign_cost, (ni, nj))
        _check_declared("demands", inst.demands, (ns, nj))
        _check_declared("probabilities", inst.probabilities, (ns,))
        return inst
    raise InvalidInstance(f"unknown family '{family}'; expected one of {FAMILIES}")


def save_instance(inst: AnyInstance, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1, sort_keys=True))


def load_instance(path: Union[str, Path]) -> AnyInstance:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInstance(f"not valid JSON: {exc}") from exc
    return instance_from_dict(data)


def validate_instance(path: Union[str, Path]) -> list[str]:
    """Schema plus invariant diagnostics; empty list means the instance is ok."""
    try:
        inst = load_instance(path)
        inst.validate()
    except InvalidInstance as exc:
        return [str(exc)]
    return []
