"""Instance and result containers for the internal solver backend.

Everything is dense and desk-scale by design: instances carry a full
row-coefficient matrix, ranged rows ``row_lb <= A x <= row_ub`` (equalities
have ``row_lb == row_ub``), and per-variable bounds that may be infinite.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SolveStatus",
    "LpInstance",
    "MilpInstance",
    "QpInstance",
    "LpResult",
    "MilpResult",
    "QpResult",
]


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"

    def __str__(self):
        return self.value


def _as_float_array(x, length, default):
    if x is None:
        return np.full(length, default, dtype=float)
    arr = np.asarray(x, dtype=float).copy()
    if arr.shape != (length,):
        raise ValueError(f"expected shape ({length},), got {arr.shape}")
    return arr


@dataclass
class LpInstance:
    """min c·x + c0  s.t.  row_lb <= A x <= row_ub,  lb <= x <= ub."""

    c: np.ndarray
    A: np.ndarray
    row_lb: np.ndarray
    row_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c0: float = 0.0
    names: list = field(default_factory=list)
    row_names: list = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).copy()
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n).copy()
        m = self.A.shape[0]
        self.row_lb = _as_float_array(self.row_lb, m, -np.inf)
        self.row_ub = _as_float_array(self.row_ub, m, np.inf)
        self.lb = _as_float_array(self.lb, n, -np.inf)
        self.ub = _as_float_array(self.ub, n, np.inf)
        if not self.names:
            self.names = [f"x{i}" for i in range(n)]
        if not self.row_names:
            self.row_names = [f"r{i}" for i in range(m)]
        if np.any(self.row_lb > self.row_ub + 1e-12):
            raise ValueError("row_lb exceeds row_ub")
        if np.any(self.lb > self.ub + 1e-12):
            raise ValueError("variable lower bound exceeds upper bound")

    @property
    def n_vars(self):
        return self.c.shape[0]

    @property
    def n_rows(self):
        return self.A.shape[0]

    def row_activity(self, x):
        return self.A @ np.asarray(x, dtype=float)

    def max_violation(self, x):
        """Largest bound/row violation of ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        act = self.row_activity(x) if self.n_rows else np.zeros(0)
        parts = [
            np.max(self.row_lb - act, initial=0.0),
            np.max(act - self.row_ub, initial=0.0),
            np.max(self.lb - x, initial=0.0),
            np.max(x - self.ub, initial=0.0),
        ]
        return float(max(parts))


@dataclass
class MilpInstance(LpInstance):
    """An LP instance plus integrality markers.

    ``integers`` lists variable indices required to be integral.
    ``pick_groups`` lists index groups tied by a "sum equals one" choice row
    (one binary per disjunct); the branch-and-bound solver branches on these
    groups first, splitting each into halves.
    """

    integers: list = field(default_factory=list)
    pick_groups: list = field(default_factory=list)

    def relax(self):
        """The continuous relaxation as a plain LpInstance."""
        return LpInstance(
            c=self.c,
            A=self.A,
            row_lb=self.row_lb,
            row_ub=self.row_ub,
            lb=self.lb,
            ub=self.ub,
            c0=self.c0,
            names=list(self.names),
            row_names=list(self.row_names),
        )


@dataclass
class QpInstance:
    """min c·x + x·diag(q)·x + c0  s.t. rows/boxes as in LpInstance, plus an
    optional ball row  sum_i (scale_i * (x_i - center_i))^2 <= radius^2
    over the coordinates in ``ball_index``.
    """

    c: np.ndarray
    q: np.ndarray  # quadratic term: diagonal vector (>= 0) or dense PSD matrix
    A: np.ndarray
    row_lb: np.ndarray
    row_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c0: float = 0.0
    ball_index: np.ndarray | None = None
    ball_scale: np.ndarray | None = None
    ball_center: np.ndarray | None = None
    ball_radius: float = np.inf

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).copy()
        n = self.c.shape[0]
        if self.q is not None and np.ndim(self.q) == 2:
            self.q = np.asarray(self.q, dtype=float).copy()
            if self.q.shape != (n, n):
                raise ValueError(f"expected dense quadratic of shape ({n}, {n})")
            if not np.allclose(self.q, self.q.T, atol=1e-10):
                raise ValueError("dense quadratic term must be symmetric")
            if n and np.linalg.eigvalsh(self.q).min() < -1e-8:
                raise ValueError("quadratic term must be positive semidefinite")
        else:
            self.q = _as_float_array(self.q, n, 0.0)
            if np.any(self.q < -1e-12):
                raise ValueError("quadratic diagonal must be nonnegative")
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n).copy()
        m = self.A.shape[0]
        self.row_lb = _as_float_array(self.row_lb, m, -np.inf)
        self.row_ub = _as_float_array(self.row_ub, m, np.inf)
        self.lb = _as_float_array(self.lb, n, -np.inf)
        self.ub = _as_float_array(self.ub, n, np.inf)
        if self.ball_index is not None:
            self.ball_index = np.asarray(self.ball_index, dtype=int)
            k = self.ball_index.shape[0]
            self.ball_scale = _as_float_array(self.ball_scale, k, 1.0)
            self.ball_center = _as_float_array(self.ball_center, k, 0.0)

    @property
    def n_vars(self):
        return self.c.shape[0]

    def quad_product(self, x):
        """The Hessian-vector product ``2 Q x`` (Q from either storage form)."""
        if self.q.ndim == 2:
            return 2.0 * (self.q @ x)
        return 2.0 * self.q * x

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        if self.q.ndim == 2:
            quad = x @ self.q @ x
        else:
            quad = self.q @ (x * x)
        return float(self.c @ x + quad + self.c0)

    def ball_violation(self, x):
        if self.ball_index is None or not np.isfinite(self.ball_radius):
            return 0.0
        d = self.ball_scale * (x[self.ball_index] - self.ball_center)
        return float(max(0.0, np.sqrt(d @ d) - self.ball_radius))

    def max_violation(self, x):
        x = np.asarray(x, dtype=float)
        act = self.A @ x if self.A.shape[0] else np.zeros(0)
        parts = [
            np.max(self.row_lb - act, initial=0.0),
            np.max(act - self.row_ub, initial=0.0),
            np.max(self.lb - x, initial=0.0),
            np.max(x - self.ub, initial=0.0),
            self.ball_violation(x),
        ]
        return float(max(parts))


@dataclass
class LpResult:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float = np.nan
    duals: np.ndarray | None = None  # one multiplier per row
    reduced_costs: np.ndarray | None = None
    basis: list | None = None  # column indices (structurals then slacks)
    iterations: int = 0

    @property
    def optimal(self):
        return self.status is SolveStatus.OPTIMAL


@dataclass
class MilpResult:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float = np.nan
    bound: float = np.nan  # best proven lower bound (minimization)
    nodes: int = 0
    gap: float = np.nan

    @property
    def optimal(self):
        return self.status is SolveStatus.OPTIMAL


@dataclass
class QpResult:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float = np.nan
    iterations: int = 0
    stationarity: float = np.nan
    merit_trace: list = field(default_factory=list)

    @property
    def optimal(self):
        return self.status is SolveStatus.OPTIMAL
