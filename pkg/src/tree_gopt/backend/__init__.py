"""Internal optimization backend: LP, MILP, and QP solvers plus MPS I/O."""

from .model import (
    LpInstance,
    LpResult,
    MilpInstance,
    MilpResult,
    QpInstance,
    QpResult,
    SolveStatus,
)
from .lp import solve_lp
from .milp import solve_milp
from .qp import solve_qp
from .mps import read_mps, write_mps
from .external import solve_milp_external

__all__ = [
    "LpInstance",
    "LpResult",
    "MilpInstance",
    "MilpResult",
    "QpInstance",
    "QpResult",
    "SolveStatus",
    "solve_lp",
    "solve_milp",
    "solve_qp",
    "read_mps",
    "write_mps",
    "solve_milp_external",
]
