"""Disjunctive MILP encodings of trained hyperplane trees.

A trained tree carves its box into leaf polyhedra.  Feasibility of a
nonlinear constraint is approximated by "x lies in some feasible leaf",
which this module turns into mixed-integer linear rows in one of two ways:

* ``bigm-free`` (default): the disjunctive formulation with per-leaf copies
  y_l of the active variables, y_l in [lo*z_l, hi*z_l], sum_l y_l = x and
  sum_l z_l = 1.  Its LP relaxation is locally ideal, so branch-and-bound
  stays close to the convex hull.
* ``bigm``: the classical big-M relaxation of each path row, with M derived
  from interval arithmetic over the box.  Kept for comparison runs.

Equalities use the boundary reading: x must lie in the closure of one
feasible *and* one infeasible leaf at once, which pins it to a face between
the two classes.  Objectives use a regression tree plus one lower-bounding
hyperplane per leaf, aggregated into an epigraph variable.

Fragments produced here are pure data.  ``assemble`` merges any number of
them with the original linear rows into one ``MilpInstance``; nothing in
this module mutates the problem or the trees.

Row-count bookkeeping follows the convention of the figure captions in the
decision-tree optimization literature: a vector aggregation row such as
``sum_l y_l = x`` counts once, and the univariate rows linking y_l to its
activation z_l are tallied separately from the disjunctive rows proper.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .backend import LpInstance, MilpInstance, solve_lp
from .exceptions import EncodingError
from .trees import CLASSIFY, REGRESS, leaf_polyhedra

__all__ = [
    "BIGM",
    "BIGM_FREE",
    "AuxVar",
    "FragmentRow",
    "MilpFragment",
    "AssembledMilp",
    "encode_inequality",
    "encode_equality",
    "encode_objective",
    "fit_lower_bounding_hyperplane",
    "assemble",
    "count_aux",
]

BIGM_FREE = "bigm-free"
BIGM = "bigm"
_MODES = (BIGM_FREE, BIGM)

#: Relative margin added to the sampled objective range when bounding the
#: epigraph variable.
F_STAR_MARGIN = 0.05


@dataclass(frozen=True)
class FragmentRow:
    """One linear row over original variables (``x``) and fragment-local
    auxiliaries (``aux``), with ``lb <= row <= ub``.

    Rows sharing a ``block`` tag are scalar components of one vector row
    (e.g. the p components of ``sum_l y_l = x``) and count once in
    ``MilpFragment.n_rows``.
    """

    x: dict
    aux: dict
    lb: float
    ub: float
    name: str
    block: str | None = None


@dataclass(frozen=True)
class AuxVar:
    """A fragment-local auxiliary column and its provenance."""

    name: str
    lb: float
    ub: float
    binary: bool
    kind: str  # "y", "z", "f-leaf" or "f-star"
    leaf_id: int | None = None
    coordinate: int | None = None  # original variable index for "y" columns


@dataclass
class MilpFragment:
    """The auxiliary variables and rows encoding one approximated
    constraint (or objective).

    ``rows`` holds the disjunctive and aggregation rows; ``link_rows``
    holds the univariate rows tying each y_l (and per-leaf epigraph
    scalar) to its activation binary.  ``pick_groups`` lists the local
    indices of each "exactly one leaf" binary group.
    """

    constraint_id: str
    aux: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    link_rows: list = field(default_factory=list)
    pick_groups: list = field(default_factory=list)
    objective_aux: int | None = None

    @property
    def n_binary(self):
        return sum(1 for a in self.aux if a.binary)

    @property
    def n_continuous(self):
        return sum(1 for a in self.aux if not a.binary)

    @property
    def n_rows(self):
        """Disjunctive/aggregation row count with vector rows counted once."""
        seen = set()
        count = 0
        for row in self.rows:
            if row.block is None:
                count += 1
            elif row.block not in seen:
                seen.add(row.block)
                count += 1
        return count

    def provenance(self):
        """One record per auxiliary column, for debugging dumps."""
        return [
            {
                "column": a.name,
                "constraint": self.constraint_id,
                "kind": a.kind,
                "leaf": a.leaf_id,
                "coordinate": a.coordinate,
            }
            for a in self.aux
        ]


def _safe_name(text):
    return re.sub(r"[^A-Za-z0-9_.]", "_", str(text))


def _check_box(tree, box):
    box = np.asarray(tree.box if box is None else box, dtype=float)
    p = tree.box.shape[0]
    if box.shape != (p, 2):
        raise EncodingError(
            f"box shape {box.shape} does not match tree dimension {p}"
        )
    if not np.all(np.isfinite(box)):
        raise EncodingError("encoding needs a finite box on every coordinate")
    if np.any(box[:, 0] > box[:, 1]):
        raise EncodingError("box has lower bound above upper bound")
    return box


def _check_var_indices(var_indices, p):
    if var_indices is None:
        return tuple(range(p))
    idx = tuple(int(i) for i in var_indices)
    if len(idx) != p:
        raise EncodingError(
            f"expected {p} variable indices, got {len(idx)}"
        )
    if len(set(idx)) != len(idx):
        raise EncodingError("variable indices must be distinct")
    return idx


def max_abs_over_box(alpha, box):
    """max over the box of |alpha . x|, by interval arithmetic."""
    alpha = np.asarray(alpha, dtype=float)
    hi = np.sum(np.where(alpha > 0, alpha * box[:, 1], alpha * box[:, 0]))
    lo = np.sum(np.where(alpha > 0, alpha * box[:, 0], alpha * box[:, 1]))
    return float(max(abs(hi), abs(lo)))


def _leaf_paths(tree, labels=None):
    """(leaf, minus, plus) triples, optionally filtered by leaf label."""
    out = []
    for leaf, minus, plus in leaf_polyhedra(tree):
        if labels is None or leaf.label in labels:
            out.append((leaf, minus, plus))
    return out


def _add_disjunct(frag, cid, leaf, minus, plus, box, var_indices, y_names):
    """Append the z_l / y_l columns and path + linking rows for one leaf.

    Returns (z local index, list of y local indices).
    """
    p = box.shape[0]
    z_idx = len(frag.aux)
    frag.aux.append(
        AuxVar(
            name=f"{cid}_z{leaf.node_id}",
            lb=0.0,
            ub=1.0,
            binary=True,
            kind="z",
            leaf_id=leaf.node_id,
        )
    )
    y_idx = []
    for k in range(p):
        frag.aux.append(
            AuxVar(
                name=f"{cid}_y{leaf.node_id}_{y_names[k]}",
                lb=min(box[k, 0], 0.0),
                ub=max(box[k, 1], 0.0),
                binary=False,
                kind="y",
                leaf_id=leaf.node_id,
                coordinate=var_indices[k],
            )
        )
        y_idx.append(z_idx + 1 + k)
        # lo*z <= y  and  y <= hi*z
        frag.link_rows.append(
            FragmentRow(
                x={},
                aux={y_idx[k]: 1.0, z_idx: -box[k, 0]},
                lb=0.0,
                ub=np.inf,
                name=f"{cid}_l{leaf.node_id}_ylo_{k}",
            )
        )
        frag.link_rows.append(
            FragmentRow(
                x={},
                aux={y_idx[k]: 1.0, z_idx: -box[k, 1]},
                lb=-np.inf,
                ub=0.0,
                name=f"{cid}_l{leaf.node_id}_yhi_{k}",
            )
        )
    for h, split in enumerate(minus):
        coeffs = {y_idx[k]: float(split.alpha[k]) for k in range(p)}
        coeffs[z_idx] = -float(split.beta)
        frag.rows.append(
            FragmentRow(
                x={},
                aux=coeffs,
                lb=-np.inf,
                ub=0.0,
                name=f"{cid}_l{leaf.node_id}_le{h}",
            )
        )
    for h, split in enumerate(plus):
        coeffs = {y_idx[k]: float(split.alpha[k]) for k in range(p)}
        coeffs[z_idx] = -float(split.beta)
        frag.rows.append(
            FragmentRow(
                x={},
                aux=coeffs,
                lb=0.0,
                ub=np.inf,
                name=f"{cid}_l{leaf.node_id}_ge{h}",
            )
        )
    return z_idx, y_idx


def _add_bigm_disjunct(frag, cid, leaf, minus, plus, box, var_indices):
    """Big-M path rows on the original variables for one leaf binary."""
    z_idx = len(frag.aux)
    frag.aux.append(
        AuxVar(
            name=f"{cid}_z{leaf.node_id}",
            lb=0.0,
            ub=1.0,
            binary=True,
            kind="z",
            leaf_id=leaf.node_id,
        )
    )
    p = box.shape[0]
    for h, split in enumerate(minus):
        big_m = abs(float(split.beta)) + max_abs_over_box(split.alpha, box)
        coeffs = {var_indices[k]: float(split.alpha[k]) for k in range(p)}
        frag.rows.append(
            FragmentRow(
                x=coeffs,
                aux={z_idx: big_m},
                lb=-np.inf,
                ub=float(split.beta) + big_m,
                name=f"{cid}_l{leaf.node_id}_le{h}",
            )
        )
    for h, split in enumerate(plus):
        big_m = abs(float(split.beta)) + max_abs_over_box(split.alpha, box)
        coeffs = {var_indices[k]: float(split.alpha[k]) for k in range(p)}
        frag.rows.append(
            FragmentRow(
                x=coeffs,
                aux={z_idx: -big_m},
                lb=float(split.beta) - big_m,
                ub=np.inf,
                name=f"{cid}_l{leaf.node_id}_ge{h}",
            )
        )
    return z_idx


def _aggregation_rows(frag, cid, tag, y_lists, var_indices, box):
    """sum_l y_l = x, one scalar row per coordinate, tagged as one block."""
    p = box.shape[0]
    for k in range(p):
        aux = {ys[k]: 1.0 for ys in y_lists}
        frag.rows.append(
            FragmentRow(
                x={var_indices[k]: -1.0},
                aux=aux,
                lb=0.0,
                ub=0.0,
                name=f"{cid}_sumy{tag}_{k}",
                block=f"{cid}_sumy{tag}",
            )
        )


def _choice_row(frag, cid, tag, z_indices):
    frag.rows.append(
        FragmentRow(
            x={},
            aux={z: 1.0 for z in z_indices},
            lb=1.0,
            ub=1.0,
            name=f"{cid}_sumz{tag}",
        )
    )
    frag.pick_groups.append(list(z_indices))


def _y_names(var_indices):
    return [f"x{i}" for i in var_indices]


def encode_inequality(tree, box=None, mode=BIGM_FREE, *, var_indices=None,
                      constraint_id="g"):
    """Encode a feasibility classifier for an inequality constraint.

    ``box`` defaults to the tree's training box and must be finite.
    ``var_indices`` maps tree coordinates to original variable indices.
    Raises EncodingError when the tree has no feasible leaf (the constraint
    is unsatisfiable inside the box as learned).
    """
    if mode not in _MODES:
        raise EncodingError(f"unknown encoding mode {mode!r}")
    if tree.mode != CLASSIFY:
        raise EncodingError("inequality encoding expects a classifier tree")
    box = _check_box(tree, box)
    var_indices = _check_var_indices(var_indices, box.shape[0])
    feasible = _leaf_paths(tree, labels={True})
    if not feasible:
        raise EncodingError(
            f"constraint {constraint_id}: no feasible leaf; the constraint "
            "is unsatisfiable in the box as learned"
        )
    cid = _safe_name(constraint_id)
    frag = MilpFragment(constraint_id=constraint_id)
    names = _y_names(var_indices)
    if mode == BIGM:
        z_all = [
            _add_bigm_disjunct(frag, cid, leaf, minus, plus, box, var_indices)
            for leaf, minus, plus in feasible
        ]
        _choice_row(frag, cid, "", z_all)
        return frag
    y_lists, z_all = [], []
    for leaf, minus, plus in feasible:
        z_idx, y_idx = _add_disjunct(
            frag, cid, leaf, minus, plus, box, var_indices, names
        )
        z_all.append(z_idx)
        y_lists.append(y_idx)
    _aggregation_rows(frag, cid, "", y_lists, var_indices, box)
    _choice_row(frag, cid, "", z_all)
    return frag


def encode_equality(tree, box=None, mode=BIGM_FREE, *, var_indices=None,
                    constraint_id="h"):
    """Encode an equality constraint from a classifier trained on h >= 0.

    The feasible set of ``h = 0`` is read as the boundary between the two
    leaf classes: x must lie in the closure of exactly one feasible and one
    infeasible leaf, so both classes get a full disjunction.
    """
    if mode not in _MODES:
        raise EncodingError(f"unknown encoding mode {mode!r}")
    if tree.mode != CLASSIFY:
        raise EncodingError("equality encoding expects a classifier tree")
    box = _check_box(tree, box)
    var_indices = _check_var_indices(var_indices, box.shape[0])
    feasible = _leaf_paths(tree, labels={True})
    infeasible = _leaf_paths(tree, labels={False})
    if not feasible or not infeasible:
        raise EncodingError(
            f"constraint {constraint_id}: equality needs both classes in "
            "the tree; a single-class tree has no boundary to pin down"
        )
    cid = _safe_name(constraint_id)
    frag = MilpFragment(constraint_id=constraint_id)
    names = _y_names(var_indices)
    for tag, group in (("f", feasible), ("n", infeasible)):
        if mode == BIGM:
            z_group = [
                _add_bigm_disjunct(frag, cid, leaf, minus, plus, box,
                                   var_indices)
                for leaf, minus, plus in group
            ]
            _choice_row(frag, cid, tag, z_group)
            continue
        y_lists, z_group = [], []
        for leaf, minus, plus in group:
            z_idx, y_idx = _add_disjunct(
                frag, cid, leaf, minus, plus, box, var_indices, names
            )
            z_group.append(z_idx)
            y_lists.append(y_idx)
        _aggregation_rows(frag, cid, tag, y_lists, var_indices, box)
        _choice_row(frag, cid, tag, z_group)
    return frag


def fit_lower_bounding_hyperplane(points, targets):
    """The tightest hyperplane under a point cloud, by linear programming.

    Solves  min sum_i (y_i - a.x_i - b)  s.t.  a.x_i + b <= y_i for all i,
    i.e. maximizes total support.  Returns (a, b); the plane never exceeds
    any sample (any positive numerical slack is subtracted from b).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    targets = np.asarray(targets, dtype=float)
    n, p = points.shape
    if n == 0:
        raise EncodingError("cannot bound an empty point set")
    if n == 1:
        # Any tight plane is optimal; pick the flat one.
        return np.zeros(p), float(targets[0])
    design = np.column_stack([points, np.ones(n)])
    inst = LpInstance(
        c=-design.sum(axis=0),
        A=design,
        row_lb=None,
        row_ub=targets,
        lb=np.full(p + 1, -np.inf),
        ub=np.full(p + 1, np.inf),
    )
    result = solve_lp(inst)
    if not result.optimal:
        raise EncodingError(
            f"lower-bounding hyperplane LP came back {result.status}"
        )
    weights, intercept = result.x[:p], float(result.x[p])
    slack = float(np.max(design @ result.x - targets, initial=0.0))
    if slack > 0.0:
        intercept -= slack
    return weights, intercept


def encode_objective(tree, box=None, points=None, targets=None,
                     mode=BIGM_FREE, *, var_indices=None,
                     constraint_id="objective"):
    """Encode a regression tree as an epigraph over lower-bounding planes.

    Every leaf (regression trees have no infeasible class) joins the
    disjunction.  Each leaf contributes the tightest hyperplane under its
    own training samples, aggregated as sum_l f_l = f*; minimizing f* then
    minimizes the learned surrogate.  ``points``/``targets`` are the
    training data (leaves index into them); the f* bounds are the sampled
    target range widened by 5% on each side.
    """
    if mode not in _MODES:
        raise EncodingError(f"unknown encoding mode {mode!r}")
    if tree.mode != REGRESS:
        raise EncodingError("objective encoding expects a regressor tree")
    if points is None or targets is None:
        raise EncodingError("objective encoding needs the training samples")
    box = _check_box(tree, box)
    var_indices = _check_var_indices(var_indices, box.shape[0])
    points = np.asarray(points, dtype=float)
    targets = np.asarray(targets, dtype=float)
    leaves = _leaf_paths(tree)
    cid = _safe_name(constraint_id)
    frag = MilpFragment(constraint_id=constraint_id)
    names = _y_names(var_indices)

    spread = float(np.ptp(targets))
    margin = F_STAR_MARGIN * spread
    f_lo = float(np.min(targets)) - margin
    f_hi = float(np.max(targets)) + margin

    planes = []
    for leaf, _, _ in leaves:
        idx = leaf.indices
        if len(idx) == 0:
            raise EncodingError(
                f"leaf {leaf.node_id} carries no training samples"
            )
        planes.append(fit_lower_bounding_hyperplane(points[idx], targets[idx]))

    f_star = len(frag.aux)
    frag.aux.append(
        AuxVar(name=f"{cid}_fstar", lb=f_lo, ub=f_hi, binary=False,
               kind="f-star")
    )
    frag.objective_aux = f_star

    if mode == BIGM:
        z_all = []
        for (leaf, minus, plus), (a, b) in zip(leaves, planes):
            z_idx = _add_bigm_disjunct(
                frag, cid, leaf, minus, plus, box, var_indices
            )
            z_all.append(z_idx)
            big_m = abs(b) + max_abs_over_box(a, box) + max(abs(f_lo),
                                                            abs(f_hi))
            coeffs = {var_indices[k]: float(a[k]) for k in range(len(a))}
            frag.rows.append(
                FragmentRow(
                    x=coeffs,
                    aux={f_star: -1.0, z_idx: big_m},
                    lb=-np.inf,
                    ub=big_m - b,
                    name=f"{cid}_l{leaf.node_id}_epi",
                )
            )
        _choice_row(frag, cid, "", z_all)
        return frag

    y_lists, z_all, f_leaves = [], [], []
    for (leaf, minus, plus), (a, b) in zip(leaves, planes):
        z_idx, y_idx = _add_disjunct(
            frag, cid, leaf, minus, plus, box, var_indices, names
        )
        z_all.append(z_idx)
        y_lists.append(y_idx)
        f_leaf = len(frag.aux)
        frag.aux.append(
            AuxVar(
                name=f"{cid}_f{leaf.node_id}",
                lb=min(f_lo, 0.0),
                ub=max(f_hi, 0.0),
                binary=False,
                kind="f-leaf",
                leaf_id=leaf.node_id,
            )
        )
        f_leaves.append(f_leaf)
        frag.link_rows.append(
            FragmentRow(
                x={},
                aux={f_leaf: 1.0, z_idx: -f_lo},
                lb=0.0,
                ub=np.inf,
                name=f"{cid}_l{leaf.node_id}_flo",
            )
        )
        frag.link_rows.append(
            FragmentRow(
                x={},
                aux={f_leaf: 1.0, z_idx: -f_hi},
                lb=-np.inf,
                ub=0.0,
                name=f"{cid}_l{leaf.node_id}_fhi",
            )
        )
        # a . y_l + b z_l <= f_l   (leaf's lower bound on the surrogate)
        coeffs = {y_idx[k]: float(a[k]) for k in range(len(a))}
        coeffs[z_idx] = float(b)
        coeffs[f_leaf] = -1.0
        frag.rows.append(
            FragmentRow(
                x={},
                aux=coeffs,
                lb=-np.inf,
                ub=0.0,
                name=f"{cid}_l{leaf.node_id}_epi",
            )
        )
    _aggregation_rows(frag, cid, "", y_lists, var_indices, box)
    _choice_row(frag, cid, "", z_all)
    frag.rows.append(
        FragmentRow(
            x={},
            aux={**{f: 1.0 for f in f_leaves}, f_star: -1.0},
            lb=0.0,
            ub=0.0,
            name=f"{cid}_sumf",
        )
    )
    return frag


@dataclass
class AssembledMilp:
    """A solver-ready instance plus the bookkeeping to read it back.

    ``instance.x[:n_original]`` are the problem variables in order;
    ``fragment_columns`` maps each constraint id to its aux column range;
    ``objective_column`` is the epigraph column when the objective was
    approximated, else None.
    """

    instance: MilpInstance
    n_original: int
    fragment_columns: dict
    provenance: list
    objective_column: int | None = None

    def original_point(self, x):
        return np.asarray(x, dtype=float)[: self.n_original]


def assemble(problem, fragments):
    """Merge the problem's linear part with encoded fragments.

    The original variables keep their indices; each fragment's auxiliaries
    are appended in order.  Exactly one fragment may carry an epigraph
    column; it becomes the objective when the problem objective is
    nonlinear (a linear objective plus an epigraph fragment is rejected as
    two competing definitions).
    """
    n = problem.n_vars
    fragments = list(fragments)
    ids = [f.constraint_id for f in fragments]
    if len(set(ids)) != len(ids):
        raise EncodingError("fragment constraint ids must be distinct")

    offsets = []
    total_aux = 0
    for frag in fragments:
        for row in list(frag.rows) + list(frag.link_rows):
            for j in row.x:
                if not 0 <= j < n:
                    raise EncodingError(
                        f"fragment {frag.constraint_id} references variable "
                        f"index {j} outside the problem's {n} variables"
                    )
        offsets.append(n + total_aux)
        total_aux += len(frag.aux)
    width = n + total_aux

    epigraphs = [
        (frag, off)
        for frag, off in zip(fragments, offsets)
        if frag.objective_aux is not None
    ]
    if len(epigraphs) > 1:
        raise EncodingError("multiple fragments claim the objective")

    c = np.zeros(width)
    c0 = 0.0
    objective_column = None
    if problem.objective.is_linear:
        if epigraphs:
            raise EncodingError(
                "linear objective and epigraph fragment both present"
            )
        c[:n] = problem.objective.linear
        c0 = problem.objective.constant
    else:
        if not epigraphs:
            raise EncodingError(
                "nonlinear objective needs an epigraph fragment"
            )
        frag, off = epigraphs[0]
        objective_column = off + frag.objective_aux
        c[objective_column] = 1.0

    lb = np.full(width, -np.inf)
    ub = np.full(width, np.inf)
    lb[:n] = problem.lower_bounds()
    ub[:n] = problem.upper_bounds()
    names = [v.name for v in problem.variables]
    integers = list(problem.integer_indices())
    provenance = []
    for frag, off in zip(fragments, offsets):
        for k, aux in enumerate(frag.aux):
            lb[off + k] = aux.lb
            ub[off + k] = aux.ub
            names.append(_safe_name(aux.name))
            if aux.binary:
                integers.append(off + k)
        for record in frag.provenance():
            provenance.append({**record, "column": _safe_name(record["column"])})

    rows, row_lb, row_ub, row_names = [], [], [], []
    A, b = problem.A, problem.b
    for i in range(A.shape[0]):
        coeffs = np.zeros(width)
        coeffs[:n] = A[i]
        rows.append(coeffs)
        row_lb.append(float(b[i]))
        row_ub.append(np.inf)
        row_names.append(f"lin_ge{i}")
    C, d = problem.C, problem.d
    for i in range(C.shape[0]):
        coeffs = np.zeros(width)
        coeffs[:n] = C[i]
        rows.append(coeffs)
        row_lb.append(float(d[i]))
        row_ub.append(float(d[i]))
        row_names.append(f"lin_eq{i}")

    pick_groups = []
    for frag, off in zip(fragments, offsets):
        for row in list(frag.rows) + list(frag.link_rows):
            coeffs = np.zeros(width)
            for j, v in row.x.items():
                coeffs[j] += v
            for k, v in row.aux.items():
                coeffs[off + k] += v
            rows.append(coeffs)
            row_lb.append(row.lb)
            row_ub.append(row.ub)
            row_names.append(row.name)
        for group in frag.pick_groups:
            pick_groups.append([off + k for k in group])

    instance = MilpInstance(
        c=c,
        A=np.vstack(rows) if rows else np.zeros((0, width)),
        row_lb=np.array(row_lb),
        row_ub=np.array(row_ub),
        lb=lb,
        ub=ub,
        c0=c0,
        names=names,
        row_names=row_names,
        integers=integers,
        pick_groups=pick_groups,
    )
    columns = {
        frag.constraint_id: (off, off + len(frag.aux))
        for frag, off in zip(fragments, offsets)
    }
    return AssembledMilp(
        instance=instance,
        n_original=n,
        fragment_columns=columns,
        provenance=provenance,
        objective_column=objective_column,
    )


def count_aux(tagged_trees):
    """Predicted auxiliary sizes for a set of (tree, role) pairs.

    Roles are "objective", "inequality" or "equality".  Returns
    ``(binaries, continuous, rows)`` where binaries and continuous count
    the exact auxiliary columns of the default encoding (inequalities
    contribute feasible leaves, equalities and objectives all leaves, plus
    one reserved epigraph scalar), and rows is the worst-case disjunctive
    row count at each tree's trained depth: full trees at depth d
    contribute (2^d - 1) d rows each plus their aggregation rows, and the
    objective tree 2^d (d + 1) + 3.
    """
    binaries = 0
    continuous = 1  # the epigraph scalar, reserved whether or not used
    rows = 0
    n_ineq = n_eq = n_obj = 0
    for tree, role in tagged_trees:
        p = tree.box.shape[0]
        depth = tree.depth()
        if role == "objective":
            n_obj += 1
            n_leaves = len(tree.leaves())
            binaries += n_leaves
            continuous += n_leaves * (p + 1)
            rows += 2 ** depth * (depth + 1) + 3
        elif role == "inequality":
            n_ineq += 1
            n_leaves = len(tree.feasible_leaves())
            binaries += n_leaves
            continuous += n_leaves * p
            rows += (2 ** depth - 1) * depth
        elif role == "equality":
            n_eq += 1
            n_leaves = len(tree.leaves())
            binaries += n_leaves
            continuous += n_leaves * p
            rows += (2 ** depth - 1) * depth
        else:
            raise EncodingError(f"unknown tree role {role!r}")
    if n_obj > 1:
        raise EncodingError("at most one objective tree")
    rows += 2 * n_ineq + 4 * n_eq
    return binaries, continuous, rows
