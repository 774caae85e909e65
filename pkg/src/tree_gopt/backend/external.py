"""Escape hatch: solve a MILP through an external command-line solver.

The solver is described by a command template with ``{input}`` and
``{output}`` placeholders, e.g. ``"highs --solution_file {output} {input}"``
or ``"scip -f {input} -l {output}"``; the default template comes from the
``TREE_GOPT_SOLVER_CMD`` environment variable.  The instance is exported as
fixed-format MPS, the command runs in a scratch directory, and the solution
file is parsed tolerantly: any line holding a known column name next to a
number counts as an assignment, which covers the HiGHS, SCIP, CBC, and
"name value" formats alike.  Columns the file never mentions default to 0.

Nothing the external solver claims is trusted: the point is re-checked
against the instance to 1e-7 and the objective is recomputed internally.  A
claim of infeasibility is cross-checked with the internal branch-and-bound;
a disagreement raises, and every raise leaves the scratch directory behind
with the MPS file, the solution file, and captured stdout/stderr for
inspection.
"""

import os
import shlex
import shutil
import subprocess
import tempfile

import numpy as np

from ..exceptions import ExternalSolverError
from .milp import solve_milp
from .model import MilpResult, SolveStatus
from .mps import _mangle, write_mps

ENV_COMMAND = "TREE_GOPT_SOLVER_CMD"
VALIDATION_TOL = 1e-7


def solve_milp_external(
    instance,
    command: str | None = None,
    *,
    time_limit: float | None = None,
    keep_artifacts: bool = False,
    crosscheck_nodes: int = 50_000,
) -> MilpResult:
    """Solve ``instance`` via an external solver command template.

    Raises :class:`ExternalSolverError` (with retained artifact paths) on
    command failure, unparseable output, a point that fails independent
    validation, or an infeasibility claim the internal solver refutes.
    """
    if command is None:
        command = os.environ.get(ENV_COMMAND)
    if not command:
        raise ExternalSolverError(
            f"no solver command given and {ENV_COMMAND} is not set", {}
        )
    if "{input}" not in command or "{output}" not in command:
        raise ExternalSolverError(
            "solver command template must contain {input} and {output}", {}
        )

    workdir = tempfile.mkdtemp(prefix="tree-gopt-ext-")
    input_path = os.path.join(workdir, "problem.mps")
    output_path = os.path.join(workdir, "solution.txt")
    artifacts = {
        "workdir": workdir,
        "input": input_path,
        "output": output_path,
        "stdout": os.path.join(workdir, "stdout.txt"),
        "stderr": os.path.join(workdir, "stderr.txt"),
    }

    write_mps(instance, input_path)
    mps_columns, _ = _mangle(instance.names, "C")
    formatted = command.format(input=input_path, output=output_path)
    artifacts["command"] = formatted

    try:
        proc = subprocess.run(
            shlex.split(formatted),
            capture_output=True,
            text=True,
            timeout=time_limit,
            cwd=workdir,
        )
    except FileNotFoundError as err:
        raise ExternalSolverError(f"solver command not found: {err}", artifacts)
    except subprocess.TimeoutExpired:
        raise ExternalSolverError(
            f"external solver exceeded the {time_limit}s time limit", artifacts
        )
    with open(artifacts["stdout"], "w") as handle:
        handle.write(proc.stdout or "")
    with open(artifacts["stderr"], "w") as handle:
        handle.write(proc.stderr or "")

    if not os.path.exists(output_path):
        raise ExternalSolverError(
            f"solver wrote no solution file (exit code {proc.returncode})",
            artifacts,
        )
    with open(output_path) as handle:
        text = handle.read()

    lowered = (text + "\n" + (proc.stdout or "")).lower()
    feasible_claim = not any(
        word in lowered for word in ("infeasible", "no solution", "unbounded")
    )

    if not feasible_claim:
        if "unbounded" in lowered:
            _cleanup(workdir, keep_artifacts)
            return MilpResult(status=SolveStatus.UNBOUNDED)
        check = solve_milp(instance, max_nodes=crosscheck_nodes)
        if check.x is not None:
            raise ExternalSolverError(
                "external solver claims infeasible but the internal solver "
                f"found a point with objective {check.objective!r}",
                artifacts,
            )
        _cleanup(workdir, keep_artifacts)
        return MilpResult(status=SolveStatus.INFEASIBLE)

    values = _parse_solution(text, mps_columns)
    if not values:
        raise ExternalSolverError(
            "could not parse any column values from the solution file",
            artifacts,
        )
    x = np.zeros(instance.n_vars)
    for j, name in enumerate(mps_columns):
        if name in values:
            x[j] = values[name]

    integers = sorted(set(getattr(instance, "integers", []) or []))
    scale = 1.0 + _bound_scale(instance)
    if integers:
        drift = np.max(np.abs(x[integers] - np.round(x[integers])), initial=0.0)
        if drift > VALIDATION_TOL * scale:
            raise ExternalSolverError(
                f"externally returned integers are off by {drift:.3e}", artifacts
            )
        x[integers] = np.round(x[integers])
    violation = instance.max_violation(x)
    if violation > VALIDATION_TOL * scale:
        raise ExternalSolverError(
            f"externally returned point violates the instance by {violation:.3e}",
            artifacts,
        )

    _cleanup(workdir, keep_artifacts)
    objective = float(instance.c @ x + instance.c0)
    return MilpResult(
        status=SolveStatus.OPTIMAL,
        x=x,
        objective=objective,
        bound=objective,
        nodes=0,
        gap=0.0,
    )


def _bound_scale(instance):
    parts = [
        np.max(np.abs(instance.row_lb[np.isfinite(instance.row_lb)]), initial=0.0),
        np.max(np.abs(instance.row_ub[np.isfinite(instance.row_ub)]), initial=0.0),
        np.max(np.abs(instance.lb[np.isfinite(instance.lb)]), initial=0.0),
        np.max(np.abs(instance.ub[np.isfinite(instance.ub)]), initial=0.0),
    ]
    return float(max(parts))


def _parse_solution(text, columns):
    known = set(columns)
    values: dict[str, float] = {}
    for line in text.splitlines():
        tokens = line.replace("=", " ").split()
        if len(tokens) < 2:
            continue
        for k in range(len(tokens) - 1):
            if tokens[k] in known:
                try:
                    values[tokens[k]] = float(tokens[k + 1])
                except ValueError:
                    pass
                break
    return values


def _cleanup(workdir, keep):
    if not keep:
        shutil.rmtree(workdir, ignore_errors=True)
