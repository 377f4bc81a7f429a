"""Gini decision trees and the random forest, random uniform forest and
AdaBoost (SAMME) ensembles built on them."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ModelFormatError, ParameterError, TrainingError

__all__ = [
    "DecisionTree",
    "TreeEnsembleModel",
    "FeatureSampler",
    "train_tree",
    "tree_predict",
    "train_random_forest",
    "train_random_uniform_forest",
    "train_adaboost",
    "ensemble_votes",
    "ensemble_predict",
    "oob_error_curve",
    "select_n_trees",
    "train_forest_at_elbow",
    "ensemble_to_dict",
    "ensemble_from_dict",
]

FORMAT_TAG = "hep2cls.trees"
FORMAT_VERSION = 1
KINDS = ("RandomForest", "RandomUniformForest", "AdaBoost")


@dataclass(frozen=True)
class DecisionTree:
    """Binary tree stored as parallel node arrays.

    Node ``t`` is a leaf when ``left[t] == -1``.  Otherwise samples with
    ``x[feature[t]] <= threshold[t]`` go to ``left[t]``, the rest to
    ``right[t]``.  ``counts[t]`` holds the number of training samples of each
    class routed through node ``t`` and ``value[t]`` their summed weight,
    which is what leaves vote with.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    value: np.ndarray
    classes: np.ndarray
    max_depth: int = None
    min_leaf: int = 1

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def n_leaves(self):
        return int(np.sum(self.left < 0))

    @property
    def depth(self):
        d = np.zeros(self.n_nodes, dtype=int)
        for t in range(self.n_nodes):
            if self.left[t] >= 0:
                d[self.left[t]] = d[self.right[t]] = d[t] + 1
        return int(d.max())

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = np.arange(X.shape[0])
        while active.size:
            t = node[active]
            internal = self.left[t] >= 0
            active, t = active[internal], t[internal]
            go_left = X[active, self.feature[t]] <= self.threshold[t]
            node[active] = np.where(go_left, self.left[t], self.right[t])
        return node


@dataclass(frozen=True)
class TreeEnsembleModel:
    kind: str
    trees: tuple
    weights: np.ndarray
    classes: np.ndarray
    mtry: int
    oob_error: float = None
    n_features: int = None
    round_errors: tuple = field(default=(), compare=False)

    @property
    def n_trees(self):
        return len(self.trees)


class FeatureSampler:
    """Supplies candidate features at each node.

    ``mtry`` features are drawn without replacement; when none of them
    admits a split the remaining features are drawn in further batches.
    """

    def __init__(self, n_features, mtry=None, rng=None):
        self.n_features = int(n_features)
        self.mtry = self.n_features if mtry is None else int(mtry)
        if not 1 <= self.mtry <= self.n_features:
            raise ParameterError("mtry must lie in [1, %d], got %r" % (self.n_features, mtry))
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def batches(self):
        if self.mtry == self.n_features:
            yield np.arange(self.n_features)
            return
        order = self.rng.permutation(self.n_features)
        for s in range(0, self.n_features, self.mtry):
            yield order[s:s + self.mtry]


def _as_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel()
    if X.ndim != 2:
        raise DimensionError("X must be 2-D, got shape %r" % (X.shape,))
    if X.shape[0] != y.shape[0]:
        raise DimensionError("X has %d rows but y has %d labels" % (X.shape[0], y.shape[0]))
    if X.shape[0] == 0:
        raise TrainingError("cannot train on empty data")
    if not np.all(np.isfinite(X)):
        raise ParameterError("feature matrix contains non-finite values")
    return X, y


def _split_scores(L, wL, R, wR):
    # maximizing sum(L^2)/wL + sum(R^2)/wR == minimizing weighted Gini
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (L * L).sum(-1) / wL + (R * R).sum(-1) / wR
    return np.where((wL > 0) & (wR > 0), s, -np.inf)


def _best_exhaustive(Xn, Yw, feats):
    """Best midpoint cut over ``feats``; returns (score, feature, threshold)."""
    V = Xn[:, feats]
    order = np.argsort(V, axis=0, kind="stable")
    Vs = np.take_along_axis(V, order, axis=0)
    C = np.cumsum(Yw[order], axis=0)  # (n, m, K)
    total = C[-1]
    L, R = C[:-1], total[None] - C[:-1]
    s = _split_scores(L, L.sum(-1), R, R.sum(-1))
    s[Vs[1:] <= Vs[:-1]] = -np.inf  # only between distinct values
    if not np.isfinite(s).any():
        return -np.inf, -1, 0.0
    i, j = np.unravel_index(np.argmax(s), s.shape)
    lo, hi = Vs[i, j], Vs[i + 1, j]
    thr = lo + (hi - lo) / 2
    if not lo <= thr < hi:
        thr = lo
    return s[i, j], int(feats[j]), float(thr)


def _best_uniform(Xn, Yw, feats, rng):
    """One uniformly drawn cut per candidate feature; best by Gini."""
    V = Xn[:, feats]
    lo, hi = V.min(0), V.max(0)
    ok = hi > lo
    if not ok.any():
        return -np.inf, -1, 0.0
    cuts = lo + rng.random(len(feats)) * (hi - lo)
    # a draw equal to the max would send everything left
    cuts = np.where(cuts >= hi, lo, cuts)
    goes_left = V <= cuts[None]
    L = np.einsum("nm,nk->mk", goes_left.astype(float), Yw)
    R = Yw.sum(0)[None] - L
    s = _split_scores(L, L.sum(-1), R, R.sum(-1))
    s[~ok] = -np.inf
    j = int(np.argmax(s))
    if not np.isfinite(s[j]):
        return -np.inf, -1, 0.0
    return s[j], int(feats[j]), float(cuts[j])


def train_tree(X, y, max_depth=None, min_leaf=1, feature_sampler=None, sample_weight=None,
               uniform_cuts=False, rng=None, classes=None):
    """Grow a binary classification tree by greedy Gini splits.

    Parameters
    ----------
    X : array, shape (n, d)
    y : array of class labels, shape (n,)
    max_depth : int, optional
        None grows until nodes are pure or unsplittable.
    min_leaf : int
        Minimum number of samples on each side of a split.
    feature_sampler : FeatureSampler, optional
        Candidate features per node; all features when omitted.
    sample_weight : array, optional
        Non-negative per-sample weights used in the impurity.
    uniform_cuts : bool
        Draw one cut-point per candidate uniformly between its min and max
        at the node instead of searching all midpoints.
    rng : numpy Generator, optional
        Needed when ``uniform_cuts`` is set.
    classes : array, optional
        Full label set, so trees trained on subsets share a class axis.
    """
    X, y = _as_xy(X, y)
    n, d = X.shape
    classes = np.unique(y) if classes is None else np.asarray(classes)
    yi = np.searchsorted(classes, y)
    if np.any(yi >= len(classes)) or np.any(classes[np.minimum(yi, len(classes) - 1)] != y):
        raise TrainingError("labels outside the declared class set")
    K = len(classes)
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0):
        raise ParameterError("sample_weight must be non-negative with one entry per sample")
    if max_depth is not None and max_depth < 0:
        raise ParameterError("max_depth must be >= 0")
    if min_leaf < 1:
        raise ParameterError("min_leaf must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    sampler = feature_sampler or FeatureSampler(d, rng=rng)

    onehot = np.zeros((n, K))
    onehot[np.arange(n), yi] = 1.0
    Yw = onehot * w[:, None]

    feature, threshold, left, right, counts, value = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(onehot[idx].sum(0))
        value.append(Yw[idx].sum(0))
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n), 0)]
    while stack:
        t, idx, depth = stack.pop()
        if (max_depth is not None and depth >= max_depth) or np.count_nonzero(counts[t]) <= 1:
            continue
        if len(idx) < 2 * min_leaf:
            continue
        Xn, Ywn = X[idx], Yw[idx]
        best = (-np.inf, -1, 0.0)
        for feats in sampler.batches():
            if uniform_cuts:
                best = _best_uniform(Xn, Ywn, feats, rng)
            else:
                best = _best_exhaustive(Xn, Ywn, feats)
            if best[1] >= 0:
                mask = Xn[:, best[1]] <= best[2]
                if min(mask.sum(), (~mask).sum()) >= min_leaf:
                    break
                best = (-np.inf, -1, 0.0)
        if best[1] < 0:
            continue
        _, f, thr = best
        mask = Xn[:, f] <= thr
        feature[t], threshold[t] = f, thr
        li = new_node(idx[mask])
        ri = new_node(idx[~mask])
        left[t], right[t] = li, ri
        stack.append((ri, idx[~mask], depth + 1))
        stack.append((li, idx[mask], depth + 1))

    return DecisionTree(
        feature=np.asarray(feature, dtype=np.intp),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.intp),
        right=np.asarray(right, dtype=np.intp),
        counts=np.asarray(counts, dtype=np.int64).reshape(-1, K),
        value=np.asarray(value, dtype=np.float64).reshape(-1, K),
        classes=classes,
        max_depth=max_depth,
        min_leaf=int(min_leaf),
    )


def _tree_class_index(tree, X):
    # argmax picks the first maximum, i.e. the smallest class on ties
    return np.argmax(tree.value[tree.apply(X)], axis=1)


def tree_predict(tree, X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    idx = _tree_class_index(tree, np.atleast_2d(X))
    out = tree.classes[idx]
    return out[0] if single else out


def _default_mtry(d, mtry):
    if mtry is None:
        return max(1, int(np.floor(np.sqrt(d))))
    return int(mtry)


def _bagged(kind, X, y, n_trees, mtry, seed, uniform, bootstrap, max_depth, min_leaf):
    X, y = _as_xy(X, y)
    if n_trees < 1:
        raise ParameterError("n_trees must be >= 1")
    n, d = X.shape
    mtry = _default_mtry(d, mtry)
    classes = np.unique(y)
    yi = np.searchsorted(classes, y)
    # per-tree streams drawn up front so each tree is independent of order
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_trees)]
    trees = []
    oob_votes = np.zeros((n, len(classes)))
    curve = []
    for rng in streams:
        if bootstrap:
            boot = rng.integers(0, n, size=n)
        else:
            boot = np.arange(n)
        tree = train_tree(X[boot], y[boot], max_depth=max_depth, min_leaf=min_leaf,
                          feature_sampler=FeatureSampler(d, mtry, rng), uniform_cuts=uniform,
                          rng=rng, classes=classes)
        trees.append(tree)
        oob = np.ones(n, dtype=bool)
        oob[boot] = False
        if oob.any():
            oob_votes[np.flatnonzero(oob), _tree_class_index(tree, X[oob])] += 1
        curve.append(_oob_error(oob_votes, yi))
    model = TreeEnsembleModel(kind=kind, trees=tuple(trees), weights=np.ones(n_trees), classes=classes,
                              mtry=mtry, oob_error=curve[-1], n_features=d)
    return model, curve


def _oob_error(votes, yi):
    seen = votes.sum(1) > 0
    if not seen.any():
        return float("nan")
    return float(np.mean(np.argmax(votes[seen], axis=1) != yi[seen]))


def train_random_forest(X, y, n_trees=100, mtry=None, seed=0, bootstrap=True, max_depth=None, min_leaf=1):
    """Breiman forest: bootstrap resamples, per-node feature subsets of size
    ``mtry`` (default floor(sqrt(d))), exhaustive Gini cuts.

    ``bootstrap=False`` trains every tree on the full data.
    """
    return _bagged("RandomForest", X, y, n_trees, mtry, seed, False, bootstrap, max_depth, min_leaf)[0]


def train_random_uniform_forest(X, y, n_trees=100, mtry=None, seed=0, bootstrap=True, max_depth=None,
                                min_leaf=1):
    """Forest of unpruned trees whose cut-points are drawn uniformly
    between each candidate feature's min and max at the node."""
    return _bagged("RandomUniformForest", X, y, n_trees, mtry, seed, True, bootstrap, max_depth, min_leaf)[0]


def oob_error_curve(X, y, n_trees_max, mtry=None, seed=0, uniform=False):
    """OOB error after each tree added, as a list of (n_trees, error)."""
    if n_trees_max < 1:
        raise ParameterError("n_trees_max must be >= 1")
    kind = "RandomUniformForest" if uniform else "RandomForest"
    _, curve = _bagged(kind, X, y, n_trees_max, mtry, seed, uniform, True, None, 1)
    return [(i + 1, e) for i, e in enumerate(curve)]


def select_n_trees(curve, window=10, min_gain=0.0025):
    """Elbow of an OOB curve: the first n whose error improved by less than
    ``min_gain`` over the previous ``window`` trees; the last n otherwise."""
    errs = [e for _, e in curve]
    ns = [n for n, _ in curve]
    for i in range(window, len(errs)):
        if np.isfinite(errs[i]) and np.isfinite(errs[i - window]) and errs[i - window] - errs[i] < min_gain:
            return ns[i]
    return ns[-1]


def train_forest_at_elbow(X, y, n_trees_max=200, mtry=None, seed=0, uniform=False, window=10,
                         min_gain=0.0025):
    """Grow ``n_trees_max`` trees, then keep the prefix ending at the OOB
    elbow.  Trees draw from independent streams, so the prefix is exactly
    the forest that would have been grown with that many trees."""
    kind = "RandomUniformForest" if uniform else "RandomForest"
    model, curve = _bagged(kind, X, y, n_trees_max, mtry, seed, uniform, True, None, 1)
    n = select_n_trees([(i + 1, e) for i, e in enumerate(curve)], window, min_gain)
    return TreeEnsembleModel(kind=kind, trees=model.trees[:n], weights=model.weights[:n],
                             classes=model.classes, mtry=model.mtry, oob_error=curve[n - 1],
                             n_features=model.n_features)


def train_adaboost(X, y, n_rounds=50, base_depth=3, seed=0, max_retries=10, weight_log=None):
    """Multi-class AdaBoost in the SAMME form with depth-limited trees.

    A round whose weighted error reaches 1 - 1/K is retried on a weighted
    resample of the training set, up to ``max_retries`` times; if it still
    fails boosting stops.  A round with zero error ends training, its tree
    weighted above all previous trees combined.

    ``weight_log``, if a list, receives the normalized sample weights after
    every accepted round.
    """
    X, y = _as_xy(X, y)
    if n_rounds < 1:
        raise ParameterError("n_rounds must be >= 1")
    n, d = X.shape
    classes = np.unique(y)
    K = len(classes)
    yi = np.searchsorted(classes, y)
    rng = np.random.default_rng(seed)
    w = np.full(n, 1.0 / n)
    limit = 1.0 - 1.0 / K if K > 1 else 1.0
    trees, betas, errors = [], [], []
    for _ in range(n_rounds):
        tree = train_tree(X, y, max_depth=base_depth, sample_weight=w, rng=rng, classes=classes)
        miss = _tree_class_index(tree, X) != yi
        err = float(w[miss].sum())
        tries = 0
        while err >= limit and tries < max_retries:
            tries += 1
            boot = rng.choice(n, size=n, replace=True, p=w)
            tree = train_tree(X[boot], y[boot], max_depth=base_depth, rng=rng, classes=classes)
            miss = _tree_class_index(tree, X) != yi
            err = float(w[miss].sum())
        if err >= limit:
            if not trees:
                # keep the best effort so the model is usable
                trees.append(tree)
                betas.append(1.0)
                errors.append(err)
            break
        trees.append(tree)
        errors.append(err)
        if err <= 0.0:
            betas.append(1.0 + float(np.sum(betas)))
            break
        beta = np.log((1.0 - err) / err) + np.log(K - 1)
        betas.append(float(beta))
        w = w * np.exp(beta * miss)
        w /= w.sum()
        if weight_log is not None:
            weight_log.append(w.copy())
    return TreeEnsembleModel(kind="AdaBoost", trees=tuple(trees), weights=np.asarray(betas), classes=classes,
                             mtry=d, oob_error=None, n_features=d, round_errors=tuple(errors))


def ensemble_votes(model, X):
    """Per-class vote totals (tree weights applied), shape (n, K)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if model.n_features is not None and X.shape[1] != model.n_features:
        raise DimensionError("input has %d features, model expects %d" % (X.shape[1], model.n_features))
    votes = np.zeros((X.shape[0], len(model.classes)))
    rows = np.arange(X.shape[0])
    for tree, wt in zip(model.trees, model.weights):
        np.add.at(votes, (rows, _tree_class_index(tree, X)), wt)
    return votes


def ensemble_predict(model, x):
    """Majority (AdaBoost: beta-weighted) vote; ties go to the smallest class."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = model.classes[np.argmax(ensemble_votes(model, x), axis=1)]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# serialization


def _tree_to_dict(t):
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "counts": t.counts.tolist(),
        "value": t.value.tolist(),
        "max_depth": t.max_depth,
        "min_leaf": t.min_leaf,
    }


def _tree_from_dict(d, classes):
    K = len(classes)
    t = DecisionTree(
        feature=np.asarray(d["feature"], dtype=np.intp),
        threshold=np.asarray(d["threshold"], dtype=np.float64),
        left=np.asarray(d["left"], dtype=np.intp),
        right=np.asarray(d["right"], dtype=np.intp),
        counts=np.asarray(d["counts"], dtype=np.int64).reshape(-1, K),
        value=np.asarray(d["value"], dtype=np.float64).reshape(-1, K),
        classes=classes,
        max_depth=d.get("max_depth"),
        min_leaf=int(d.get("min_leaf", 1)),
    )
    m = t.n_nodes
    if m == 0 or not (len(t.threshold) == len(t.left) == len(t.right) == len(t.counts) == m):
        raise ModelFormatError("tree node arrays disagree in length")
    internal = t.left >= 0
    if np.any((t.right >= 0) != internal) or np.any(t.left[internal] >= m) or np.any(t.right[internal] >= m):
        raise ModelFormatError("tree children out of range")
    return t


def ensemble_to_dict(model):
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "classes": model.classes.tolist(),
        "weights": model.weights.tolist(),
        "mtry": model.mtry,
        "oob_error": model.oob_error,
        "n_features": model.n_features,
        "trees": [_tree_to_dict(t) for t in model.trees],
    }


def ensemble_from_dict(d):
    if not isinstance(d, dict) or d.get("format") != FORMAT_TAG:
        raise ModelFormatError("not a serialized tree ensemble")
    if d.get("version") != FORMAT_VERSION:
        raise ModelFormatError("unsupported ensemble format version %r" % (d.get("version"),))
    try:
        if d["kind"] not in KINDS:
            raise ModelFormatError("unknown ensemble kind %r" % (d["kind"],))
        classes = np.asarray(d["classes"])
        trees = tuple(_tree_from_dict(t, classes) for t in d["trees"])
        weights = np.asarray(d["weights"], dtype=np.float64)
        if len(weights) != len(trees) or not trees:
            raise ModelFormatError("tree weights do not match trees")
        return TreeEnsembleModel(kind=d["kind"], trees=trees, weights=weights, classes=classes,
                                 mtry=int(d["mtry"]), oob_error=d.get("oob_error"),
                                 n_features=d.get("n_features"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError("corrupt ensemble record: %s" % exc) from None
