"""LP kernel: solve linear programs and return certified outcomes.

Every solve classifies the problem as Optimal, Infeasible or Unbounded and
attaches the object the caller needs to act on it:

* Optimal: primal vector, objective, and one dual value per constraint row in
  the marginal convention (for a min problem, the dual of row ``a.y = b``
  contributes ``b * lam`` to the dual objective, so the dual of an
  equality-form subproblem reads directly as the cut vector).
* Infeasible: a Farkas ray over the rows, normalized to unit infinity-norm,
  whose aggregated constraint is violated by every point in the variable box.
* Unbounded: a recession direction with strictly negative cost, normalized to
  unit infinity-norm.

The backend is HiGHS via scipy.optimize.linprog. Infeasibility certificates
are recovered from the row duals of an elastic relaxation, and unbounded rays
from a boxed recession-cone LP; both are re-verified before being returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import MalformedProblem, NumericalFailure

TOL_FEAS = 1e-7
TOL_GAP = 1e-7
TOL_CERT = 1e-9
_ZERO = 1e-10

LEQ = "<="
EQ = "="
GEQ = ">="
_RELATIONS = (LEQ, EQ, GEQ)

Matrix = Union[np.ndarray, sp.spmatrix]


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class BasisHint:
    """Opaque warm-start token tied to the shape of a previously solved LP."""

    n_vars: int
    n_rows: int


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """min cost.x  s.t.  rows[i].x (rel_i) rhs[i],  lower <= x <= upper."""

    cost: np.ndarray
    rows: Matrix
    relations: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cost", np.asarray(self.cost, dtype=float))
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=float))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        n = self.cost.shape[0]
        m = self.rhs.shape[0]
        if not sp.issparse(self.rows):
            object.__setattr__(self, "rows", np.asarray(self.rows, dtype=float).reshape(m, -1) if m else np.zeros((0, n)))
        if self.rows.shape != (m, n):
            raise MalformedProblem(f"rows shape {self.rows.shape} != ({m}, {n})")
        if len(self.relations) != m:
            raise MalformedProblem(f"{len(self.relations)} relations for {m} rows")
        if any(r not in _RELATIONS for r in self.relations):
            raise MalformedProblem(f"unknown relation in {self.relations}")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise MalformedProblem("bound vectors must have one entry per variable")
        if not np.all(np.isfinite(self.cost)):
            raise MalformedProblem("non-finite objective coefficient")
        if not np.all(np.isfinite(self.rhs)):
            raise MalformedProblem("non-finite rhs")
        data = self.rows.data if sp.issparse(self.rows) else self.rows
        if not np.all(np.isfinite(data)):
            raise MalformedProblem("non-finite row coefficient")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise MalformedProblem("NaN variable bound")
        if np.any(self.lower > self.upper):
            raise MalformedProblem("lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.cost.shape[0]

    @property
    def n_rows(self) -> int:
        return self.rhs.shape[0]


@dataclass(frozen=True, eq=False)
class LpOutcome:
    """Classified result of one LP solve with its certificate."""

    status: LpStatus
    primal: Optional[np.ndarray] = None
    objective: Optional[float] = None
    dual: Optional[np.ndarray] = None
    farkas_ray: Optional[np.ndarray] = None
    primal_ray: Optional[np.ndarray] = None
    basis: Optional[BasisHint] = field(default=None, compare=False)

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _row_split(lp: LinearProgram):
    """Split rows into (A_ub, b_ub, ub_map) and (A_eq, b_eq, eq_idx).

    >= rows are negated into <= form; ub_map holds (original_index, sign) so
    duals can be mapped back into per-row order with the marginal convention.
    """
    rel = np.asarray(lp.relations)
    eq_idx = np.flatnonzero(rel == EQ)
    le_idx = np.flatnonzero(rel == LEQ)
    ge_idx = np.flatnonzero(rel == GEQ)

    A = lp.rows
    if len(eq_idx) == lp.n_rows:  # pure-equality fast path (subproblem batches)
        return None, None, [], A, lp.rhs, eq_idx

    def take(idx):
        return A[idx] if len(idx) else None

    A_eq = take(eq_idx)
    b_eq = lp.rhs[eq_idx] if len(eq_idx) else None

    parts, rhs_parts, ub_map = [], [], []
    if len(le_idx):
        parts.append(A[le_idx])
        rhs_parts.append(lp.rhs[le_idx])
        ub_map.extend((int(i), 1.0) for i in le_idx)
    if len(ge_idx):
        parts.append(-A[ge_idx])
        rhs_parts.append(-lp.rhs[ge_idx])
        ub_map.extend((int(i), -1.0) for i in ge_idx)
    if parts:
        stack = sp.vstack if any(sp.issparse(p) for p in parts) else np.vstack
        A_ub = stack(parts) if len(parts) > 1 else parts[0]
        b_ub = np.concatenate(rhs_parts)
    else:
        A_ub, b_ub = None, None
    return A_ub, b_ub, ub_map, A_eq, b_eq, eq_idx


def _bounds_array(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    b = np.column_stack([lower, upper])
    # scipy expects None for infinite bounds only in sequence form; +-inf is fine in array form
    return b


def _linprog(cost, A_ub, b_ub, A_eq, b_eq, lower, upper):
    # scipy's own python presolve is redundant (HiGHS presolves internally)
    # and costs more than the solve on small repeated LPs
    res = linprog(
        cost,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=_bounds_array(lower, upper),
        method="highs",
        options={"presolve": False},
    )
    return res


def _collect_row_duals(lp: LinearProgram, res, ub_map, eq_idx) -> np.ndarray:
    dual = np.zeros(lp.n_rows)
    if len(eq_idx):
        dual[eq_idx] = res.eqlin.marginals
    for pos, (orig, sign) in enumerate(ub_map):
        dual[orig] = sign * res.ineqlin.marginals[pos]
    return dual


def _row_activity(lp: LinearProgram, x: np.ndarray) -> np.ndarray:
    ax = lp.rows @ x
    return np.asarray(ax).ravel()


def _check_primal_feasible(lp: LinearProgram, x: np.ndarray) -> None:
    slack = TOL_FEAS * (1.0 + np.abs(lp.rhs))
    resid = _row_activity(lp, x) - lp.rhs
    rel = np.asarray(lp.relations)
    bad = ((rel == EQ) & (np.abs(resid) > slack)) | ((rel == LEQ) & (resid > slack)) | (
        (rel == GEQ) & (resid < -slack)
    )
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericalFailure(f"row {i} ({lp.relations[i]}) violated by {resid[i]:.3e}")
    bscale = 1.0 + np.abs(x)
    if np.any(x < lp.lower - TOL_FEAS * bscale) or np.any(x > lp.upper + TOL_FEAS * bscale):
        raise NumericalFailure("variable bound violated")


def dual_objective(lp: LinearProgram, dual: np.ndarray) -> float:
    """Dual objective value rhs.dual plus the bound terms of the reduced costs."""
    reduced = lp.cost - np.asarray(lp.rows.T @ dual).ravel()
    value = float(lp.rhs @ dual)
    pos = reduced > _ZERO
    neg = reduced < -_ZERO
    lo, up = lp.lower[pos], lp.upper[neg]
    if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(up)):
        raise NumericalFailure("reduced cost active on an infinite bound")
    value += float(reduced[pos] @ lo) + float(reduced[neg] @ up)
    return value


def _verify_optimal(lp: LinearProgram, x: np.ndarray, obj: float, dual: np.ndarray) -> None:
    _check_primal_feasible(lp, x)
    dobj = dual_objective(lp, dual)
    if abs(obj - dobj) > TOL_GAP * (1.0 + abs(obj)):
        raise NumericalFailure(f"duality gap {obj - dobj:.3e} exceeds tolerance")


def _box_support(g: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    """sup of g.y over the box; +inf when g pushes against an infinite bound."""
    g = np.where(np.abs(g) <= _ZERO, 0.0, g)
    total = 0.0
    pos = g > 0
    neg = g < 0
    if np.any(pos & ~np.isfinite(upper)) or np.any(neg & ~np.isfinite(lower)):
        return float("inf")
    total += float(g[pos] @ upper[pos]) + float(g[neg] @ lower[neg])
    return total


def farkas_margin(lp: LinearProgram, ray: np.ndarray) -> float:
    """Positive value certifies infeasibility: ray.rhs minus the box support of ray.A."""
    g = np.asarray(lp.rows.T @ ray).ravel()
    return float(lp.rhs @ ray) - _box_support(g, lp.lower, lp.upper)


def _verify_farkas(lp: LinearProgram, ray: np.ndarray) -> float:
    for i, rel in enumerate(lp.relations):
        if rel == LEQ and ray[i] > _ZERO:
            raise NumericalFailure("Farkas ray has wrong sign on a <= row")
        if rel == GEQ and ray[i] < -_ZERO:
            raise NumericalFailure("Farkas ray has wrong sign on a >= row")
    margin = farkas_margin(lp, ray)
    if not margin > TOL_CERT:
        raise NumericalFailure(f"Farkas certificate margin {margin:.3e} not positive")
    return margin


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.max(np.abs(v)) if v.size else 0.0
    if norm <= _ZERO:
        raise NumericalFailure("certificate ray is numerically zero")
    return v / norm


def _elastic_farkas(lp: LinearProgram) -> Optional[np.ndarray]:
    """Farkas ray from the duals of the elastic relaxation; None if feasible."""
    m, n = lp.n_rows, lp.n_vars
    cols = []
    for i, rel in enumerate(lp.relations):
        if rel == EQ:
            cols.append((i, 1.0))
            cols.append((i, -1.0))
        elif rel == LEQ:
            cols.append((i, -1.0))
        else:
            cols.append((i, 1.0))
    k = len(cols)
    elastic = sp.csc_matrix(
        (np.array([s for _, s in cols]), (np.array([i for i, _ in cols]), np.arange(k))),
        shape=(m, k),
    )
    rows = lp.rows if sp.issparse(lp.rows) else sp.csc_matrix(lp.rows)
    A = sp.hstack([rows, elastic], format="csc")
    cost = np.concatenate([np.zeros(n), np.ones(k)])
    lower = np.concatenate([lp.lower, np.zeros(k)])
    upper = np.concatenate([lp.upper, np.full(k, np.inf)])
    relaxed = LinearProgram(cost, A, lp.relations, lp.rhs, lower, upper)
    A_ub, b_ub, ub_map, A_eq, b_eq, eq_idx = _row_split(relaxed)
    res = _linprog(cost, A_ub, b_ub, A_eq, b_eq, lower, upper)
    if res.status != 0:
        raise NumericalFailure(f"elastic relaxation failed: {res.message}")
    # accept tiny positive relaxations as infeasibility evidence as long as
    # the ray itself certifies; the backend flags violations near its own
    # 1e-7 tolerance that a coarser cutoff here would misread as feasible
    if res.fun <= TOL_CERT * (1.0 + np.abs(lp.rhs).max(initial=0.0)):
        return None
    ray = _collect_row_duals(relaxed, res, ub_map, eq_idx)
    return _normalize(ray)


def _recession_bounds(lp: LinearProgram):
    lo = np.where(np.isfinite(lp.lower), 0.0, -1.0)
    hi = np.where(np.isfinite(lp.upper), 0.0, 1.0)
    return lo, hi


def _recession_ray(lp: LinearProgram) -> Optional[np.ndarray]:
    """Cheapest direction of the recession cone inside the unit box, if negative."""
    lo, hi = _recession_bounds(lp)
    cone = LinearProgram(lp.cost, lp.rows, lp.relations, np.zeros(lp.n_rows), lo, hi)
    A_ub, b_ub, _, A_eq, b_eq, _ = _row_split(cone)
    res = _linprog(lp.cost, A_ub, b_ub, A_eq, b_eq, lo, hi)
    if res.status != 0:
        raise NumericalFailure(f"recession problem failed: {res.message}")
    if res.fun >= -TOL_CERT:
        return None
    ray = _normalize(np.asarray(res.x))
    _check_primal_feasible(cone, ray)
    if not float(lp.cost @ ray) < -TOL_CERT:
        raise NumericalFailure("recession direction lost its negative cost")
    return ray


def solve(lp: LinearProgram) -> LpOutcome:
    """Solve the LP and return a verified LpOutcome. Pure and deterministic."""
    A_ub, b_ub, ub_map, A_eq, b_eq, eq_idx = _row_split(lp)
    res = _linprog(lp.cost, A_ub, b_ub, A_eq, b_eq, lp.lower, lp.upper)

    if res.status == 0:
        x = np.asarray(res.x)
        dual = _collect_row_duals(lp, res, ub_map, eq_idx)
        obj = float(res.fun)
        _verify_optimal(lp, x, obj, dual)
        return LpOutcome(
            status=LpStatus.OPTIMAL,
            primal=x,
            objective=obj,
            dual=dual,
            basis=BasisHint(lp.n_vars, lp.n_rows),
        )
    if res.status == 2:
        ray = _elastic_farkas(lp)
        if ray is None:
            raise NumericalFailure("backend reported infeasible but elastic relaxation is tight")
        _verify_farkas(lp, ray)
        return LpOutcome(status=LpStatus.INFEASIBLE, farkas_ray=ray)
    if res.status == 3:
        ray = _recession_ray(lp)
        if ray is None:
            raise NumericalFailure("backend reported unbounded but found no descent direction")
        return LpOutcome(status=LpStatus.UNBOUNDED, primal_ray=ray)

    # status 4: HiGHS could not separate infeasible from unbounded; do it ourselves
    ray = _elastic_farkas(lp)
    if ray is not None:
        _verify_farkas(lp, ray)
        return LpOutcome(status=LpStatus.INFEASIBLE, farkas_ray=ray)
    direction = _recession_ray(lp)
    if direction is not None:
        return LpOutcome(status=LpStatus.UNBOUNDED, primal_ray=direction)
    raise NumericalFailure(f"unresolvable backend status {res.status}: {res.message}")


def solve_with_basis(lp: LinearProgram, warm_basis: Optional[BasisHint]) -> LpOutcome:
    """Re-solve after appending rows to a previously solved LP.

    The backend exposes no basis interface, so any hint degenerates to the
    cold solve; per the contract this fallback is silent and the status
    classification is identical to solve().
    """
    del warm_basis
    return solve(lp)
