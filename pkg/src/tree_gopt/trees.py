"""Hyperplane decision trees for constraint learning.

A classifier tree learns the feasibility indicator of one nonlinear
constraint from labeled samples; a regressor tree (with linear leaf models)
learns an objective or the nonlinear part of a separable constraint.  Both
use oblique splits ``alpha . x <= beta`` found by greedy induction: at every
node a pool of candidate directions (linear-discriminant or least-squares
fits, their bootstrapped variants, the coordinate axes, and random
directions) is swept exhaustively over thresholds, the best split is taken,
and the grown tree is pruned bottom-up against a complexity charge per
split.  Points exactly on a hyperplane route to the left (<=) child.

Split coefficients are normalized so max |alpha_h| = 1, and node ids are
assigned in depth-first preorder with the root as 1, so a depth-3 chain
tree has leaves 4, 5, 6, 7 down its left spine.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import TrainingError

TREE_FORMAT = "tree-gopt-hyperplane-tree"
TREE_SCHEMA_VERSION = 1

CLASSIFY = "classify"
REGRESS = "regress"

_LEX_TOL = 1e-12


@dataclass(frozen=True)
class TreeParams:
    """Training knobs: depth cap, complexity charge per split, minimum leaf
    occupancy as a fraction of the training set, and restart counts."""

    max_depth: int = 5
    complexity_factor: float = 1e-6
    minbucket: float = 0.01
    tree_restarts: int = 10
    hyperplane_restarts: int = 5
    mode: str = CLASSIFY

    def __post_init__(self):
        if self.max_depth < 1:
            raise TrainingError("max_depth must be at least 1")
        if not 0 < self.minbucket < 0.5:
            raise TrainingError("minbucket must lie in (0, 0.5)")
        if self.mode not in (CLASSIFY, REGRESS):
            raise TrainingError(f"unknown mode {self.mode!r}")
        if self.tree_restarts < 1 or self.hyperplane_restarts < 1:
            raise TrainingError("restart counts must be positive")

    @classmethod
    def classifier(cls, **overrides):
        return cls(**{"minbucket": 0.01, "mode": CLASSIFY, **overrides})

    @classmethod
    def regressor(cls, **overrides):
        return cls(**{"minbucket": 0.02, "mode": REGRESS, **overrides})


@dataclass(frozen=True)
class HyperplaneSplit:
    """One oblique split ``alpha . x <= beta``, scaled so max|alpha| = 1."""

    alpha: np.ndarray
    beta: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        top = np.abs(alpha).max(initial=0.0)
        if top == 0.0:
            raise TrainingError("split coefficients are all zero")
        object.__setattr__(self, "alpha", alpha / top)
        object.__setattr__(self, "beta", float(self.beta) / top)

    def goes_left(self, x):
        return float(self.alpha @ x) <= self.beta


@dataclass
class TreeNode:
    split: HyperplaneSplit
    left: object
    right: object
    node_id: int = 0


@dataclass
class TreeLeaf:
    """Payload is a class label (classify) or a linear model (regress);
    ``indices`` records which training rows ended up here."""

    node_id: int = 0
    label: bool = None
    weights: np.ndarray = None
    intercept: float = None
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def value(self, x):
        if self.label is not None:
            return self.label
        return float(self.weights @ x + self.intercept)


@dataclass
class HyperplaneTree:
    """A trained tree: root node, mode, the training box, and training loss
    (misclassification for classifiers, 1 - R^2 for regressors)."""

    root: object
    mode: str
    box: np.ndarray
    n_train: int
    loss: float

    def depth(self):
        def walk(node):
            if isinstance(node, TreeLeaf):
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def n_splits(self):
        def walk(node):
            if isinstance(node, TreeLeaf):
                return 0
            return 1 + walk(node.left) + walk(node.right)

        return walk(self.root)

    def leaves(self):
        """All leaves in preorder (ascending node id)."""
        out = []

        def walk(node):
            if isinstance(node, TreeLeaf):
                out.append(node)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def feasible_leaves(self):
        if self.mode != CLASSIFY:
            raise TrainingError("feasible_leaves applies to classifiers")
        return [leaf for leaf in self.leaves() if leaf.label]

    def in_training_box(self, x):
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= self.box[:, 0] - 1e-9)
            and np.all(x <= self.box[:, 1] + 1e-9)
        )

    def __call__(self, x):
        return predict(self, x)


# ---------------------------------------------------------------------------
# Prediction and leaf geometry
# ---------------------------------------------------------------------------


def predict(tree, x):
    """Route a point to its leaf (ties at a hyperplane go left) and return
    the leaf's payload value.  Points outside the training box are still
    routed; the tree extrapolates there, so check ``in_training_box`` when
    that matters."""
    x = np.asarray(x, dtype=float).reshape(-1)
    node = tree.root
    while isinstance(node, TreeNode):
        node = node.left if node.split.goes_left(x) else node.right
    return node.value(x)


def predict_many(tree, points):
    """Vectorized ``predict`` over rows of ``points``."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if tree.mode == CLASSIFY:
        out = np.zeros(n, dtype=bool)
    else:
        out = np.zeros(n, dtype=float)

    def walk(node, idx):
        if idx.size == 0:
            return
        if isinstance(node, TreeLeaf):
            if node.label is not None:
                out[idx] = node.label
            else:
                out[idx] = points[idx] @ node.weights + node.intercept
            return
        left = points[idx] @ node.split.alpha <= node.split.beta
        walk(node.left, idx[left])
        walk(node.right, idx[~left])

    walk(tree.root, np.arange(n))
    return out


def assigned_leaf(tree, x):
    """The leaf a point routes to (same tie rule as ``predict``)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    node = tree.root
    while isinstance(node, TreeNode):
        node = node.left if node.split.goes_left(x) else node.right
    return node


def leaf_polyhedra(tree):
    """Per-leaf decision paths, in preorder.

    Returns a list of ``(leaf, minus, plus)`` where ``minus`` holds the
    splits taken leftward (alpha . x <= beta) and ``plus`` those taken
    rightward (alpha . x >= beta).  The polyhedra tile the box: every point
    belongs to exactly one leaf under the left-on-tie rule.
    """
    out = []

    def walk(node, minus, plus):
        if isinstance(node, TreeLeaf):
            out.append((node, list(minus), list(plus)))
            return
        walk(node.left, minus + [node.split], plus)
        walk(node.right, minus, plus + [node.split])

    walk(tree.root, [], [])
    return out


# ---------------------------------------------------------------------------
# Loss functions
# ---------------------------------------------------------------------------


def misclassification_error(tree, data, labels=None, weights=None):
    """Weighted share of points the tree mislabels:
    sum(w_i * [T(x_i) != y_i]) / sum(w_i)."""
    if labels is None:
        points, labels = data.points, data.labels
    else:
        points = np.asarray(data, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    w = np.ones(len(labels)) if weights is None else np.asarray(weights, float)
    wrong = predict_many(tree, points) != labels
    return float(np.sum(w * wrong) / np.sum(w))


def one_minus_r2(tree, points, targets):
    """Residual share of variance the tree fails to explain:
    sum((T(x_i) - y_i)^2) / sum((y_i - mean(y))^2).

    For constant targets (zero variance) the convention is 0 when the
    residuals are zero and 1 otherwise.
    """
    points = np.asarray(points, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    residual = predict_many(tree, points) - y
    sse = float(residual @ residual)
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss == 0.0:
        return 0.0 if sse == 0.0 else 1.0
    return sse / tss


# ---------------------------------------------------------------------------
# Split search
# ---------------------------------------------------------------------------


def _unit_box_transform(box):
    lo = box[:, 0]
    span = box[:, 1] - lo
    return lo, np.where(span > 0, span, 1.0)


def _raw_direction(w_norm, span):
    """Convert a direction in normalized coordinates to raw ones, scaled so
    max|alpha| = 1 (thresholds are then swept on raw projections)."""
    alpha = w_norm / span
    top = np.abs(alpha).max(initial=0.0)
    if top == 0.0 or not np.all(np.isfinite(alpha)):
        return None
    return alpha / top


def _candidate_directions(norm, y, rng, params):
    """Direction pool at a node: fitted directions (exact plus bootstrapped,
    ``hyperplane_restarts`` of them), the axes, and random directions."""
    n, p = norm.shape
    restarts = params.hyperplane_restarts
    dirs = []

    def fitted(idx):
        if params.mode == CLASSIFY:
            pos, neg = idx[y[idx]], idx[~y[idx]]
            if len(pos) == 0 or len(neg) == 0:
                return None
            mu1, mu0 = norm[pos].mean(axis=0), norm[neg].mean(axis=0)
            centered = np.vstack(
                [norm[pos] - mu1, norm[neg] - mu0]
            )
            cov = centered.T @ centered / max(len(idx) - 2, 1)
            cov[np.diag_indices(p)] += 1e-8
            try:
                return np.linalg.solve(cov, mu1 - mu0)
            except np.linalg.LinAlgError:
                return mu1 - mu0
        design = np.column_stack([norm[idx], np.ones(len(idx))])
        coef, *_ = np.linalg.lstsq(design, y[idx], rcond=None)
        return coef[:p]

    everything = np.arange(n)
    for r in range(restarts):
        idx = everything if r == 0 else rng.integers(0, n, size=n)
        w = fitted(idx)
        if w is not None:
            dirs.append(w)
    dirs.extend(np.eye(p))
    for _ in range(restarts):
        dirs.append(rng.standard_normal(p))
    return dirs


def _sweep_classify(t, y, w, min_count):
    order = np.argsort(t, kind="stable")
    ts, ys, ws = t[order], y[order], w[order]
    n = len(ts)
    cuts = np.flatnonzero(ts[1:] > ts[:-1]) + 1
    if cuts.size == 0:
        return None
    counts = cuts
    valid = (counts >= min_count) & (n - counts >= min_count)
    cuts = cuts[valid]
    if cuts.size == 0:
        return None
    wpos = np.concatenate([[0.0], np.cumsum(ws * ys)])
    wall = np.concatenate([[0.0], np.cumsum(ws)])
    lw, lp = wall[cuts], wpos[cuts]
    rw, rp = wall[n] - lw, wpos[n] - lp
    err = np.minimum(lp, lw - lp) + np.minimum(rp, rw - rp)
    ql = np.divide(lp, lw, out=np.zeros_like(lp), where=lw > 0)
    qr = np.divide(rp, rw, out=np.zeros_like(rp), where=rw > 0)
    gini = lw * 2 * ql * (1 - ql) + rw * 2 * qr * (1 - qr)
    best_err = err.min()
    tied = np.flatnonzero(err <= best_err + _LEX_TOL)
    pick = tied[np.argmin(gini[tied])]
    cut = cuts[pick]
    beta = 0.5 * (ts[cut - 1] + ts[cut])
    return float(err[pick]), float(gini[pick]), float(beta)


def _sweep_regress(t, y, w, min_count):
    """Score every threshold with the SSE of a best-fit line in the
    projection coordinate on each side (leaves carry linear models, so a
    constant proxy would systematically miss kinks).  All quantities come
    from weighted prefix sums, so the sweep stays O(n) after the sort."""
    order = np.argsort(t, kind="stable")
    ts, ys, ws = t[order], y[order], w[order]
    n = len(ts)
    cuts = np.flatnonzero(ts[1:] > ts[:-1]) + 1
    if cuts.size == 0:
        return None
    valid = (cuts >= min_count) & (n - cuts >= min_count)
    cuts = cuts[valid]
    if cuts.size == 0:
        return None

    def prefix(v):
        return np.concatenate([[0.0], np.cumsum(v)])

    s_w = prefix(ws)
    s_t = prefix(ws * ts)
    s_tt = prefix(ws * ts * ts)
    s_y = prefix(ws * ys)
    s_ty = prefix(ws * ts * ys)
    s_yy = prefix(ws * ys * ys)

    def side_sse(wn, st, stt, sy, sty, syy):
        # SSE of the weighted least-squares line a*t + b, with a constant
        # fit as fallback when every t in the segment coincides.
        det = wn * stt - st * st
        const_sse = syy - np.divide(
            sy * sy, wn, out=np.zeros_like(sy), where=wn > 0
        )
        a = np.divide(
            wn * sty - st * sy, det, out=np.zeros_like(det), where=det > 0
        )
        b = np.divide(
            sy - a * st, wn, out=np.zeros_like(sy), where=wn > 0
        )
        line_sse = syy - a * sty - b * sy
        sse = np.where(det > 0, line_sse, const_sse)
        return np.maximum(sse, 0.0)

    lw, lt, ltt = s_w[cuts], s_t[cuts], s_tt[cuts]
    ly, lty, lyy = s_y[cuts], s_ty[cuts], s_yy[cuts]
    sse = side_sse(lw, lt, ltt, ly, lty, lyy) + side_sse(
        s_w[n] - lw,
        s_t[n] - lt,
        s_tt[n] - ltt,
        s_y[n] - ly,
        s_ty[n] - lty,
        s_yy[n] - lyy,
    )
    pick = int(np.argmin(sse))
    cut = cuts[pick]
    beta = 0.5 * (ts[cut - 1] + ts[cut])
    return float(sse[pick]), 0.0, float(beta)


def _best_split(X, norm, y, w, idx, rng, params, min_count, span):
    sweep = _sweep_classify if params.mode == CLASSIFY else _sweep_regress
    Xs, ys, ws = X[idx], y[idx], w[idx]
    best = None
    for w_norm in _candidate_directions(norm[idx], ys, rng, params):
        alpha = _raw_direction(np.asarray(w_norm, dtype=float), span)
        if alpha is None:
            continue
        result = sweep(Xs @ alpha, ys, ws, min_count)
        if result is None:
            continue
        err, tiebreak, beta = result
        if (
            best is None
            or err < best[0] - _LEX_TOL
            or (err <= best[0] + _LEX_TOL and tiebreak < best[1] - _LEX_TOL)
        ):
            best = (err, tiebreak, alpha, beta)
    if best is None:
        return None
    return HyperplaneSplit(alpha=best[2], beta=best[3])


# ---------------------------------------------------------------------------
# Growth and pruning
# ---------------------------------------------------------------------------


def _majority(y, w, idx):
    pos = float(np.sum(w[idx] * y[idx]))
    neg = float(np.sum(w[idx])) - pos
    return pos > neg  # tie -> infeasible


def _fit_leaf_model(X, y, idx):
    ys = y[idx]
    if np.ptp(ys) == 0.0:
        # Exactly constant targets get an exactly constant model; lstsq
        # would otherwise leave ~1e-16 noise in the coefficients.
        return np.zeros(X.shape[1]), float(ys[0])
    design = np.column_stack([X[idx], np.ones(len(idx))])
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    return coef[:-1], float(coef[-1])


def _grow(X, norm, y, w, idx, depth, rng, params, min_count, span):
    if params.mode == CLASSIFY:
        pure = np.all(y[idx]) or not np.any(y[idx])
    else:
        pure = np.ptp(y[idx]) == 0.0
    if pure or depth >= params.max_depth or len(idx) < 2 * min_count:
        return _make_leaf(X, y, w, idx, params)
    split = _best_split(X, norm, y, w, idx, rng, params, min_count, span)
    if split is None:
        return _make_leaf(X, y, w, idx, params)
    left_mask = X[idx] @ split.alpha <= split.beta
    left_idx, right_idx = idx[left_mask], idx[~left_mask]
    if len(left_idx) < min_count or len(right_idx) < min_count:
        return _make_leaf(X, y, w, idx, params)
    return TreeNode(
        split=split,
        left=_grow(X, norm, y, w, left_idx, depth + 1, rng, params,
                   min_count, span),
        right=_grow(X, norm, y, w, right_idx, depth + 1, rng, params,
                    min_count, span),
    )


def _make_leaf(X, y, w, idx, params):
    if params.mode == CLASSIFY:
        return TreeLeaf(label=_majority(y, w, idx), indices=idx.copy())
    weights, intercept = _fit_leaf_model(X, y, idx)
    return TreeLeaf(weights=weights, intercept=intercept, indices=idx.copy())


def _leaf_cost_classify(leaf, y, w):
    agree = y[leaf.indices] == leaf.label
    return float(np.sum(w[leaf.indices] * ~agree))


def _leaf_cost_regress(leaf, X, y, w):
    r = X[leaf.indices] @ leaf.weights + leaf.intercept - y[leaf.indices]
    return float(np.sum(w[leaf.indices] * r * r))


def _prune(node, X, y, w, params, denom):
    """Bottom-up collapse of subtrees whose loss gain does not pay the
    complexity charge.  Returns (node, cost, split count)."""
    if isinstance(node, TreeLeaf):
        if params.mode == CLASSIFY:
            return node, _leaf_cost_classify(node, y, w), 0
        return node, _leaf_cost_regress(node, X, y, w), 0
    left, cost_l, splits_l = _prune(node.left, X, y, w, params, denom)
    right, cost_r, splits_r = _prune(node.right, X, y, w, params, denom)
    node.left, node.right = left, right
    cost = cost_l + cost_r
    splits = splits_l + splits_r + 1
    idx = np.concatenate(
        [_collect_indices(left), _collect_indices(right)]
    )
    collapsed = _make_leaf(X, y, w, idx, params)
    if params.mode == CLASSIFY:
        collapsed_cost = _leaf_cost_classify(collapsed, y, w)
    else:
        collapsed_cost = _leaf_cost_regress(collapsed, X, y, w)
    if (collapsed_cost - cost) / denom <= params.complexity_factor * splits:
        return collapsed, collapsed_cost, 0
    return node, cost, splits


def _collect_indices(node):
    if isinstance(node, TreeLeaf):
        return node.indices
    return np.concatenate(
        [_collect_indices(node.left), _collect_indices(node.right)]
    )


def _assign_ids(root):
    counter = [0]

    def walk(node):
        counter[0] += 1
        node.node_id = counter[0]
        if isinstance(node, TreeNode):
            walk(node.left)
            walk(node.right)

    walk(root)


def _train(X, y, w, box, params, seed):
    n, p = X.shape
    min_count = max(1, int(np.ceil(params.minbucket * n)))
    lo, span = _unit_box_transform(box)
    norm = (X - lo) / span
    if params.mode == CLASSIFY:
        denom = float(np.sum(w))
    elif np.ptp(y) == 0.0:
        denom = 1.0
    else:
        denom = float(np.sum(w * (y - np.average(y, weights=w)) ** 2))

    rng = np.random.default_rng(seed)
    best = None
    for restart in range(params.tree_restarts):
        root = _grow(X, norm, y, w, np.arange(n), 0, rng, params,
                     min_count, span)
        root, cost, splits = _prune(root, X, y, w, params, denom)
        loss = cost / denom
        key = (loss + params.complexity_factor * splits, splits, restart)
        if best is None or key < best[0]:
            best = (key, root, loss)
        if loss == 0.0 and splits <= 1:
            break
    _, root, loss = best
    _assign_ids(root)
    return HyperplaneTree(
        root=root, mode=params.mode, box=box.copy(), n_train=n, loss=loss
    )


def train_classifier(data, params=None, seed=0, weights=None):
    """Fit a feasibility classifier to a LabeledSampleSet.

    Runs ``tree_restarts`` independent grow-and-prune passes and keeps the
    tree with the best complexity-penalized misclassification.  Needs both
    classes present.  Deterministic for a given seed.
    """
    params = params or TreeParams.classifier()
    if params.mode != CLASSIFY:
        raise TrainingError("params.mode must be 'classify'")
    y = np.asarray(data.labels, dtype=bool)
    if np.all(y) or not np.any(y):
        raise TrainingError("single-class data: cannot learn a boundary")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    return _train(data.points, y, w, data.box, params, seed)


def train_regressor(points, targets, params=None, seed=0, box=None,
                    weights=None):
    """Fit a regressor tree with least-squares linear leaf models.

    ``points`` and ``targets`` are plain arrays; ``box`` defaults to the
    data's bounding box.  Constant targets produce a single exact leaf.
    Reported loss is 1 - R^2 on the training data.
    """
    params = params or TreeParams.regressor()
    if params.mode != REGRESS:
        raise TrainingError("params.mode must be 'regress'")
    X = np.asarray(points, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise TrainingError("points and targets do not align")
    if len(y) < 2 / params.minbucket:
        raise TrainingError(
            f"need at least {int(np.ceil(2 / params.minbucket))} samples "
            f"at minbucket {params.minbucket}"
        )
    if box is None:
        box = np.column_stack([X.min(axis=0), X.max(axis=0)])
    else:
        box = np.asarray(box, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    return _train(X, y, w, box, params, seed)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _node_to_dict(node):
    if isinstance(node, TreeLeaf):
        payload = {"id": node.node_id, "indices": node.indices.tolist()}
        if node.label is not None:
            payload["label"] = bool(node.label)
        else:
            payload["weights"] = node.weights.tolist()
            payload["intercept"] = node.intercept
        return payload
    return {
        "id": node.node_id,
        "alpha": node.split.alpha.tolist(),
        "beta": node.split.beta,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(data):
    if "alpha" not in data:
        leaf = TreeLeaf(
            node_id=data["id"],
            label=data.get("label"),
            indices=np.asarray(data.get("indices", []), dtype=int),
        )
        if "weights" in data:
            leaf.weights = np.asarray(data["weights"], dtype=float)
            leaf.intercept = float(data["intercept"])
        return leaf
    return TreeNode(
        split=HyperplaneSplit(
            alpha=np.asarray(data["alpha"], dtype=float), beta=data["beta"]
        ),
        left=_node_from_dict(data["left"]),
        right=_node_from_dict(data["right"]),
        node_id=data["id"],
    )


def tree_to_dict(tree):
    return {
        "format": TREE_FORMAT,
        "version": TREE_SCHEMA_VERSION,
        "mode": tree.mode,
        "box": tree.box.tolist(),
        "n_train": tree.n_train,
        "loss": tree.loss,
        "root": _node_to_dict(tree.root),
    }


def tree_from_dict(data):
    if data.get("format") != TREE_FORMAT:
        raise TrainingError("not a serialized hyperplane tree")
    if data.get("version") != TREE_SCHEMA_VERSION:
        raise TrainingError(
            f"unsupported tree schema version {data.get('version')!r}"
        )
    return HyperplaneTree(
        root=_node_from_dict(data["root"]),
        mode=data["mode"],
        box=np.asarray(data["box"], dtype=float),
        n_train=int(data["n_train"]),
        loss=float(data["loss"]),
    )


def save_tree(tree, path):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(tree_to_dict(tree), handle, indent=1)


def load_tree(path):
    with open(path, "r", encoding="utf-8") as handle:
        return tree_from_dict(json.load(handle))
