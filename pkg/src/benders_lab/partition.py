"""Scenario partitions: refinement by dual keys and sufficiency conditions.

A partition covers the scenario indices with disjoint cells. Refinement
splits cells by grouping scenarios whose dual keys coincide (greedy leader
clustering under an infinity-norm tolerance); a cell whose member duals make
both bilinearity conditions hold can stay aggregated without losing
optimality, which is what check_cell_conditions tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import KeyCountMismatch, MissingDual, SizeMismatch

KEY_TOL = 1e-6
COND_TOL = 1e-6

POINT = "point"
RAY = "ray"


@dataclass(frozen=True, eq=False)
class DualKey:
    """Grouping key for one scenario: a dual projection or a Farkas ray tag."""

    kind: str  # POINT for optimal duals, RAY for infeasibility certificates
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("dual key entries must be finite")
        if self.kind == RAY:
            norm = np.max(np.abs(v)) if v.size else 0.0
            if norm > 0:
                v = v / norm
        object.__setattr__(self, "values", v)

    def matches(self, other: "DualKey", tol: float) -> bool:
        if self.kind != other.kind or self.values.shape != other.values.shape:
            return False
        if self.values.size == 0:
            return True
        return float(np.max(np.abs(self.values - other.values))) <= tol


@dataclass(frozen=True)
class Partition:
    """Disjoint cover of scenario indices {0..n-1}; generation counts refinements."""

    cells: tuple[tuple[int, ...], ...]
    generation: int = 0

    def __post_init__(self):
        cells = tuple(tuple(int(i) for i in c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        seen: set[int] = set()
        for cell in cells:
            if not cell:
                raise ValueError("partition cells must be nonempty")
            for i in cell:
                if i in seen:
                    raise ValueError(f"scenario {i} appears in two cells")
                seen.add(i)
        if seen and seen != set(range(max(seen) + 1)):
            raise ValueError("cells must cover a contiguous scenario range")

    @property
    def n_scenarios(self) -> int:
        return sum(len(c) for c in self.cells)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.cells)

    def __len__(self) -> int:
        return len(self.cells)


def trivial_partition(n_scenarios: int) -> Partition:
    """The single-cell partition {S}."""
    return Partition((tuple(range(n_scenarios)),))


def singleton_partition(n_scenarios: int) -> Partition:
    return Partition(tuple((i,) for i in range(n_scenarios)))


def seeded_partition(n_scenarios: int, k: int) -> Partition:
    """k contiguous chunks, for experiments with a warm-started partition."""
    k = max(1, min(k, n_scenarios))
    bounds = np.linspace(0, n_scenarios, k + 1).astype(int)
    cells = tuple(tuple(range(bounds[j], bounds[j + 1])) for j in range(k) if bounds[j] < bounds[j + 1])
    return Partition(cells)


def refine(partition: Partition, keys: Sequence[DualKey], tol: float = KEY_TOL) -> Partition:
    """Split each cell by greedy leader clustering of the scenario keys.

    The first scenario of each group is its leader; a scenario joins the
    first group whose leader key matches within tol. Ray keys never merge
    with point keys. The result refines the input and bumps the generation.
    """
    if len(keys) != partition.n_scenarios:
        raise KeyCountMismatch(f"{len(keys)} keys for {partition.n_scenarios} scenarios")
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    new_cells: list[tuple[int, ...]] = []
    for cell in partition.cells:
        leaders: list[int] = []
        groups: list[list[int]] = []
        for s in cell:
            for g, leader in enumerate(leaders):
                if keys[s].matches(keys[leader], tol):
                    groups[g].append(s)
                    break
            else:
                leaders.append(s)
                groups.append([s])
        new_cells.extend(tuple(g) for g in groups)
    return Partition(tuple(new_cells), generation=partition.generation + 1)


def is_refinement(p1: Partition, p2: Partition) -> bool:
    """True iff every cell of p2 is contained in some cell of p1."""
    if p1.n_scenarios != p2.n_scenarios:
        raise SizeMismatch("partitions cover different scenario counts")
    owner = {}
    for idx, cell in enumerate(p1.cells):
        for s in cell:
            owner[s] = idx
    for cell in p2.cells:
        first = owner[cell[0]]
        if any(owner[s] != first for s in cell[1:]):
            return False
    return True


def check_cell_conditions(
    cell: Iterable[int],
    duals: Sequence[Optional[np.ndarray]],
    x: np.ndarray,
    problem,
    tol: float = COND_TOL,
) -> bool:
    """Both bilinearity conditions for one cell at the iterate x.

    With P the cell and lam^s the optimal subproblem duals, checks
        (sum p^s) * sum p^s (h^s . lam^s)   == (sum p^s h^s) . (sum p^s lam^s)
        (sum p^s) * sum p^s (T^s x . lam^s) == (sum p^s T^s x) . (sum p^s lam^s)
    within a relative tolerance scaled by the magnitude of both sides.
    """
    idx = [int(i) for i in cell]
    if len(idx) <= 1:
        if idx and duals[idx[0]] is None:
            raise MissingDual(f"scenario {idx[0]} has no optimal dual")
        return True
    x = np.asarray(x, dtype=float)
    probs = np.array([problem.scenarios[i].probability for i in idx])
    lam = []
    for i in idx:
        if duals[i] is None:
            raise MissingDual(f"scenario {i} has no optimal dual")
        lam.append(np.asarray(duals[i], dtype=float))
    h = np.stack([problem.scenarios[i].rhs for i in idx])
    tx = np.stack([problem.scenarios[i].technology @ x for i in idx])
    lam = np.stack(lam)
    p_cell = probs.sum()

    def bilinear_ok(vecs: np.ndarray) -> bool:
        lhs = p_cell * float(probs @ np.einsum("sp,sp->s", vecs, lam))
        rhs = float((probs @ vecs) @ (probs @ lam))
        return abs(lhs - rhs) <= tol * (1.0 + abs(lhs) + abs(rhs))

    return bilinear_ok(h) and bilinear_ok(tx)
