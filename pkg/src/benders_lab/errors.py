"""Exception types shared across the package."""


class BendersLabError(Exception):
    """Base class for all package errors."""


class MalformedProblem(BendersLabError):
    """LP data is dimensionally inconsistent or contains non-finite entries."""


class NumericalFailure(BendersLabError):
    """The LP backend returned a solution that fails certificate verification."""


class EmptyCell(BendersLabError):
    """A partition cell with no scenarios was requested."""


class DimensionMismatch(BendersLabError):
    """Vector/matrix sizes do not match the problem dimensions."""


class BinaryNotSupportedHere(BendersLabError):
    """A continuous-only routine received a problem with binary variables."""


class FirstStageInfeasible(BendersLabError):
    """The candidate x violates the first-stage constraints."""


class KeyCountMismatch(BendersLabError):
    """refine() received a number of dual keys different from |S|."""


class MissingDual(BendersLabError):
    """A condition check needs an optimal dual that was not supplied."""


class SizeMismatch(BendersLabError):
    """Two partitions cover different scenario counts."""


class NotViolated(BendersLabError):
    """A feasibility cut is not violated at the x that generated it."""


class CellInfeasible(BendersLabError):
    """A single cut cannot be formed because some cell subproblem is infeasible."""


class MasterInfeasible(BendersLabError):
    """The initial master problem (first-stage polyhedron) is empty."""


class MasterUnbounded(BendersLabError):
    """The master problem is unbounded; theta_lb or variable bounds are missing."""


class ScenarioInfeasibleAtIterate(BendersLabError):
    """GAPM in strict mode hit an infeasible scenario subproblem at an iterate."""


class InvalidInstance(BendersLabError):
    """A problem instance violates its invariants."""
