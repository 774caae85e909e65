"""Sample generation for constraint learning.

Each nonlinear constraint is sampled over the box of its active variables
in three stages: the box corners (extremal behavior), an optimized Latin
hypercube (space-filling coverage), and a kNN quasi-Newton pass that places
new points near the constraint boundary by running the secant method
between neighbors of opposing feasibility.  All stages are deterministic
given a seed.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, SamplingError
from .expressions import evaluate_many

CORNER_CAP = 512
GA_POPULATION = 50
GA_GENERATIONS = 30
GA_SWAP_RATE = 0.1
GA_ELITE = 5
DUPLICATE_TOL = 1e-12


def base_sample_count(p):
    """Default space-filling sample count for a p-variable constraint."""
    return max(400, 100 * p)


# ---------------------------------------------------------------------------
# Sample containers
# ---------------------------------------------------------------------------


def _as_box(box):
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise SamplingError(f"box must be (p, 2), got shape {box.shape}")
    if np.any(box[:, 0] > box[:, 1]):
        raise SamplingError("box has a lower bound above its upper bound")
    return box


def _box_ranges(box):
    span = box[:, 1] - box[:, 0]
    return np.where(span > 0, span, 1.0)


def _normalize(points, box):
    return (points - box[:, 0]) / _box_ranges(box)


def _keep_first_unique(norm, tol=DUPLICATE_TOL, against=None):
    """Mask of rows that are not within ``tol`` of any kept/earlier row.

    ``against`` optionally supplies normalized rows that are already taken;
    candidates colliding with those are dropped too.
    """
    n = norm.shape[0]
    keep = np.ones(n, dtype=bool)
    taken = [] if against is None or against.size == 0 else [against]
    tol2 = tol * tol
    for i in range(n):
        if taken:
            block = np.concatenate(taken) if len(taken) > 1 else taken[0]
            diff = block - norm[i]
            if np.min(np.einsum("ij,ij->i", diff, diff)) <= tol2:
                keep[i] = False
                continue
        taken.append(norm[i : i + 1])
    return keep


@dataclass
class SampleSet:
    """Points inside a box, with no (near-)duplicate rows.

    ``points`` is (n, p), ``box`` is (p, 2) rows of [lb, ub].  Duplicates are
    judged in 0-1 normalized coordinates at tolerance 1e-12.
    """

    points: np.ndarray
    box: np.ndarray

    def __post_init__(self):
        self.box = _as_box(self.box)
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            pts = pts.reshape(-1, self.box.shape[0])
        if pts.shape[1] != self.box.shape[0]:
            raise SamplingError(
                f"points have {pts.shape[1]} columns for a "
                f"{self.box.shape[0]}-dimensional box"
            )
        slack = 1e-9 * (1.0 + np.abs(self.box).max(initial=0.0))
        if pts.size and (
            np.any(pts < self.box[:, 0] - slack)
            or np.any(pts > self.box[:, 1] + slack)
        ):
            raise SamplingError("sample point outside its box")
        # snap float fuzz back onto the box
        pts = np.clip(pts, self.box[:, 0], self.box[:, 1])
        norm = _normalize(pts, self.box)
        if not np.all(_keep_first_unique(norm)):
            raise SamplingError("duplicate sample rows (within 1e-12 normalized)")
        self.points = pts

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def p(self):
        return self.points.shape[1]

    def normalized(self):
        return _normalize(self.points, self.box)


@dataclass
class LabeledSampleSet(SampleSet):
    """A SampleSet with constraint values and feasibility labels.

    ``values[i]`` is the constraint left-hand side at row i (NaN when
    unavailable: domain errors, or feasibility-only black boxes);
    ``labels[i]`` is the feasibility indicator.  Wherever a value is finite
    the label must equal ``value >= 0``.
    """

    values: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=bool).reshape(-1)
        if len(self.values) != self.n or len(self.labels) != self.n:
            raise SamplingError("values/labels length does not match points")
        finite = np.isfinite(self.values)
        if not np.array_equal(self.labels[finite], self.values[finite] >= 0):
            raise SamplingError("labels disagree with constraint values")

    def feasible_count(self):
        return int(np.count_nonzero(self.labels))


def merge_labeled(first, second):
    """Concatenate two labeled sets over the same box, dropping rows of
    ``second`` that duplicate anything already present."""
    if not np.array_equal(first.box, second.box):
        raise SamplingError("cannot merge sample sets over different boxes")
    keep = _keep_first_unique(second.normalized(), against=first.normalized())
    return LabeledSampleSet(
        points=np.vstack([first.points, second.points[keep]]),
        box=first.box,
        values=np.concatenate([first.values, second.values[keep]]),
        labels=np.concatenate([first.labels, second.labels[keep]]),
    )


# ---------------------------------------------------------------------------
# Stage 1: corners
# ---------------------------------------------------------------------------


def boundary_samples(box, cap=CORNER_CAP, seed=0):
    """Corners of the box: all 2^p if that fits in ``cap``, otherwise a
    seeded random subset of ``cap`` distinct corners.

    Dimensions with zero width contribute a single value, so the corner
    count is 2^(number of positive-width dimensions).
    """
    box = _as_box(box)
    if cap < 2:
        raise SamplingError("corner cap must be at least 2")
    if not np.all(np.isfinite(box)):
        raise SamplingError("corner sampling needs a finite box")
    p = box.shape[0]
    wide = np.flatnonzero(box[:, 1] > box[:, 0])
    total = 2 ** len(wide)
    if total <= cap:
        bits = (
            (np.arange(total)[:, None] >> np.arange(len(wide))[None, :]) & 1
        ).astype(bool)
    else:
        rng = np.random.default_rng(seed)
        seen, rows = set(), []
        while len(rows) < cap:
            for row in rng.integers(0, 2, size=(cap, len(wide))).astype(bool):
                key = row.tobytes()
                if key not in seen:
                    seen.add(key)
                    rows.append(row)
                    if len(rows) == cap:
                        break
        bits = np.array(rows)
    points = np.broadcast_to(box[:, 0], (bits.shape[0], p)).copy()
    points[:, wide] = np.where(bits, box[wide, 1], box[wide, 0])
    return SampleSet(points=points, box=box)


# ---------------------------------------------------------------------------
# Stage 2: optimized Latin hypercube
# ---------------------------------------------------------------------------


def maximin_distance(points):
    """Smallest pairwise Euclidean distance among the rows."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n < 2:
        return np.inf
    sq = np.einsum("ij,ij->i", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    d2[np.diag_indices(n)] = np.inf
    return float(np.sqrt(max(d2.min(), 0.0)))


def _min_pairwise_sq(unit):
    n = unit.shape[0]
    sq = np.einsum("ij,ij->i", unit, unit)
    d2 = sq[:, None] + sq[None, :] - 2.0 * unit @ unit.T
    d2[np.diag_indices(n)] = np.inf
    return float(d2.min())


def olh_samples(box, n, seed, generations=GA_GENERATIONS):
    """Near-optimal Latin hypercube of ``n`` points over the box.

    Every column, discretized to n bins, is a permutation of the bins, and a
    permutation genetic algorithm (population 50, swap mutation, elitist)
    improves the maximin pairwise distance in normalized coordinates.  The
    budget is deliberately small; samples need to be well spread, not
    optimal.  ``generations=0`` returns the best member of the initial
    population, which is what the GA's improvement is measured against.
    """
    box = _as_box(box)
    if n < 2:
        raise SamplingError("a Latin hypercube needs at least 2 samples")
    p = box.shape[0]
    rng = np.random.default_rng(seed)

    population = [
        np.column_stack([rng.permutation(n) for _ in range(p)])
        for _ in range(GA_POPULATION)
    ]
    fitness = [_min_pairwise_sq((ind + 0.5) / n) for ind in population]

    for _ in range(generations):
        order = np.argsort(fitness)[::-1]
        elite = [population[i] for i in order[:GA_ELITE]]
        children = list(elite)
        while len(children) < GA_POPULATION:
            a, b = rng.integers(0, GA_POPULATION, size=2)
            parent = population[a if fitness[a] >= fitness[b] else b]
            child = parent.copy()
            for col in range(p):
                if rng.random() < GA_SWAP_RATE:
                    i, j = rng.integers(0, n, size=2)
                    child[i, col], child[j, col] = child[j, col], child[i, col]
            children.append(child)
        population = children
        fitness = [_min_pairwise_sq((ind + 0.5) / n) for ind in population]

    best = population[int(np.argmax(fitness))]
    unit = (best + 0.5) / n
    points = box[:, 0] + unit * _box_ranges(box)
    return SampleSet(points=points, box=box)


# ---------------------------------------------------------------------------
# Stage 3: evaluation
# ---------------------------------------------------------------------------


def evaluate_constraint(constraint, samples, n_vars=None):
    """Label a SampleSet with the constraint's left-hand side.

    ``samples`` lives in the constraint's active-variable space.  An
    equality is relaxed to ``h(x) >= 0`` here, as the two-sided treatment
    only enters at encoding time.  Rows that leave the body's domain get a
    NaN value and an infeasible label; a black-box body returning booleans
    yields labels with NaN values throughout.
    """
    active = constraint.active_vars
    if samples.p != len(active):
        raise SamplingError(
            f"constraint reads {len(active)} variables but samples have "
            f"{samples.p} columns"
        )
    if n_vars is None:
        n_vars = (max(active) + 1) if active else 0

    if constraint.is_expression:
        columns = {
            idx: samples.points[:, j] for j, idx in enumerate(active)
        }
        values, valid = evaluate_many(constraint.body, columns)
        values = np.where(valid, values, np.nan)
        labels = np.where(valid, values >= 0, False)
    else:
        values = np.full(samples.n, np.nan)
        labels = np.zeros(samples.n, dtype=bool)
        x = np.zeros(n_vars)
        for i, row in enumerate(samples.points):
            x[list(active)] = row
            try:
                raw = constraint.body(x)
            except (DomainError, ValueError, ZeroDivisionError,
                    OverflowError, FloatingPointError):
                continue
            if isinstance(raw, (bool, np.bool_)):
                labels[i] = bool(raw)
                continue
            value = float(raw)
            if np.isfinite(value):
                values[i] = value
                labels[i] = value >= 0
    return LabeledSampleSet(
        points=samples.points, box=samples.box, values=values, labels=labels
    )


# ---------------------------------------------------------------------------
# Stage 4: kNN quasi-Newton boundary refinement
# ---------------------------------------------------------------------------


def secant_point(xi, yi, xj, yj):
    """Root estimate between two points of opposing constraint sign:

        x_k = x_j - y_j (x_j - x_i) / (y_j - y_i)

    which lies on the segment [x_i, x_j].
    """
    if yi == yj:
        raise SamplingError("secant endpoints must have distinct values")
    if (yi > 0 and yj > 0) or (yi < 0 and yj < 0):
        raise SamplingError("secant endpoints must have opposing feasibility")
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    return xj - yj * (xj - xi) / (yj - yi)


def knn_quasi_newton(data, k):
    """New samples near the feasibility boundary of labeled data.

    Every point's k-nearest patch (self included, Euclidean distances in the
    0-1 normalized box) is classified feasible / infeasible / mixed.  A
    mixed patch whose center is infeasible emits one secant point per
    feasible neighbor, so each boundary-straddling pair produces a single
    new point.  The output is deduplicated (internally and against the
    input) and clipped to the box; rows without finite values cannot take
    part in a secant and are skipped.
    """
    if not np.any(data.labels):
        raise SamplingError("no feasible samples found")
    n = data.n
    k_eff = min(int(k), n)
    if k_eff < 2:
        return SampleSet(points=np.empty((0, data.p)), box=data.box)

    norm = data.normalized()
    sq = np.einsum("ij,ij->i", norm, norm)
    finite = np.isfinite(data.values)
    fresh = []
    for i in range(n):
        d2 = sq + sq[i] - 2.0 * (norm @ norm[i])
        patch = np.argsort(d2, kind="stable")[:k_eff]
        n_feas = int(np.count_nonzero(data.labels[patch]))
        if n_feas == 0 or n_feas == len(patch):
            continue
        if data.labels[i] or not finite[i]:
            continue
        for j in patch:
            if j != i and data.labels[j] and finite[j]:
                fresh.append(
                    secant_point(
                        data.points[i], data.values[i],
                        data.points[j], data.values[j],
                    )
                )
    if not fresh:
        return SampleSet(points=np.empty((0, data.p)), box=data.box)
    points = np.clip(np.array(fresh), data.box[:, 0], data.box[:, 1])
    keep = _keep_first_unique(_normalize(points, data.box), against=norm)
    return SampleSet(points=points[keep], box=data.box)


# ---------------------------------------------------------------------------
# Per-constraint driver
# ---------------------------------------------------------------------------


def active_box(problem, constraint):
    """The (p, 2) box of the constraint's active variables."""
    active = list(constraint.active_vars)
    return np.column_stack(
        [problem.lower_bounds()[active], problem.upper_bounds()[active]]
    )


def sample_constraint(constraint, box, seed, n_olh=None,
                      corner_cap=CORNER_CAP, knn_rounds=1, n_vars=None):
    """Full sampling pipeline for one constraint: corners, Latin hypercube,
    evaluation, then ``knn_rounds`` passes of boundary refinement.

    Returns the merged LabeledSampleSet.  Raises SamplingError when the box
    is not finite (tighten bounds first) or when no feasible sample turns
    up, which makes the constraint unlearnable.
    """
    box = _as_box(box)
    if not np.all(np.isfinite(box)):
        raise SamplingError(
            f"constraint {constraint.name or '<unnamed>'} has an unbounded "
            "active box; variable bounds must be finite (or tightened) "
            "before sampling"
        )
    p = box.shape[0]
    if n_olh is None:
        n_olh = base_sample_count(p)

    corners = boundary_samples(box, corner_cap, seed=np.random.SeedSequence((seed, 0)))
    hypercube = olh_samples(box, n_olh, seed=np.random.SeedSequence((seed, 1)))
    keep = _keep_first_unique(hypercube.normalized(), against=corners.normalized())
    space_filling = SampleSet(
        points=np.vstack([corners.points, hypercube.points[keep]]), box=box
    )
    data = evaluate_constraint(constraint, space_filling, n_vars=n_vars)

    for _ in range(max(0, int(knn_rounds))):
        try:
            fresh = knn_quasi_newton(data, k=p + 1)
        except SamplingError as exc:
            raise SamplingError(
                f"no feasible samples found for constraint "
                f"{constraint.name or '<unnamed>'}"
            ) from exc
        if fresh.n == 0:
            break
        data = merge_labeled(
            data, evaluate_constraint(constraint, fresh, n_vars=n_vars)
        )
    return data


def dump_samples_csv(data, path, names=None):
    """Write a labeled sample set as CSV: one column per variable, then
    ``value`` (empty when unavailable) and ``label`` (0/1)."""
    names = list(names) if names else [f"x{j + 1}" for j in range(data.p)]
    if len(names) != data.p:
        raise SamplingError("column name count does not match dimensions")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(names + ["value", "label"])
        for row, value, label in zip(data.points, data.values, data.labels):
            writer.writerow(
                [repr(float(v)) for v in row]
                + ["" if not np.isfinite(value) else repr(float(value))]
                + [int(label)]
            )
