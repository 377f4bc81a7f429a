"""Multi-class topologies built from binary SVMs and tree ensembles.

Five topologies are provided: one-vs-one with max-win voting, one-vs-rest
verification blocks, a hierarchy of one-vs-one sub-blocks on small scalar
subsets (cascade), the same hierarchy on a common high-dimensional feature
set, and the tree ensembles.  Verification-style topologies produce a first
stage in which a sample may be accepted by several blocks; second-stage
resolvers pick one class by SVM score or by pairwise SVMs.

Class labels are integers; rejection is encoded as 0.
"""

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import trees as _trees
from .errors import ConvergenceError, DimensionError, ParameterError, TrainingError
from .features import LAYOUT_IDS, apply_zscore, fit_zscore
from .labels import CLASSES
from .svm import TrainGrid, decision_score, grid_search

__all__ = [
    "REJECT",
    "KINDS",
    "RESOLVERS",
    "BinaryBlock",
    "FrameworkModel",
    "PairwiseResolver",
    "FirstStageOutcome",
    "FrameworkSpec",
    "train_one_vs_one",
    "predict_one_vs_one",
    "balanced_negative_sample",
    "train_one_vs_rest",
    "cascade_pool",
    "cascade_subsets",
    "train_cascade",
    "train_common_hierarchy",
    "train_tree_framework",
    "first_stage_accepts",
    "resolve_by_score",
    "train_second_stage_pairwise",
    "resolve_pairwise",
    "fit_framework",
    "apply_framework",
]

REJECT = 0

KINDS = ("OneVsOne", "OneVsRest", "HierCascade", "HierCommon", "TreeEnsemble")
RESOLVERS = ("None", "SvmScore", "AvgSvmScore", "PairwiseBlocks")

# scalar-pool columns: class c's triplet at 3(c-1)..3(c-1)+2, then mean, variance
POOL_MEAN, POOL_VAR = 18, 19
SUBSET_SIZES = (3, 4, 5, 6)
CASCADE_MAX_ITER = 10 ** 5


@dataclass(frozen=True)
class BinaryBlock:
    """One binary SVM, positive toward ``pos``.

    ``neg`` is the opposing class, or 0 for a one-vs-rest block.
    ``features`` restricts the input columns (None = all).
    """

    pos: int
    neg: int
    model: object
    features: tuple = None
    val_score: float = float("nan")

    def scores(self, X):
        if self.features is not None:
            X = X[:, list(self.features)]
        return decision_score(self.model, X)


@dataclass(frozen=True)
class PairwiseResolver:
    """Fifteen pairwise SVMs on a high-dimensional set, used on ambiguous
    samples only."""

    blocks: tuple
    norm: object
    layout: str

    def block(self, a, b):
        for blk in self.blocks:
            if {blk.pos, blk.neg} == {a, b}:
                return blk
        raise KeyError((a, b))


@dataclass(frozen=True)
class FrameworkModel:
    kind: str
    classes: tuple
    layout: str
    norm: object = None
    blocks: tuple = ()
    resolver: str = "None"
    second: PairwiseResolver = None
    ensemble: object = None
    meta: dict = field(default_factory=dict, compare=False)

    def verification_blocks(self):
        """Owner -> [(opponent, block, sign)] for the hierarchical kinds.

        A sub-block between i and j sees the same training data whichever
        class owns it, so one model serves both owners with the sign of its
        score flipped for the class it is not positive toward.
        """
        if self.kind not in ("HierCascade", "HierCommon"):
            raise ParameterError("%s has no verification sub-blocks" % self.kind)
        out = {}
        for owner in self.classes:
            subs = []
            for opp in self.classes:
                if opp == owner:
                    continue
                blk = _find(self.blocks, owner, opp)
                subs.append((opp, blk, 1.0 if blk.pos == owner else -1.0))
            out[owner] = subs
        return out


@dataclass(frozen=True)
class FirstStageOutcome:
    """Per-sample acceptance by each class block and the block scores.

    ``accept`` and ``scores`` have shape (n, K) with columns in ``classes``
    order; scores are NaN where a topology records none.
    """

    classes: tuple
    accept: np.ndarray
    scores: np.ndarray

    def accepting(self, row):
        return [c for c, a in zip(self.classes, self.accept[row]) if a]


def _find(blocks, a, b):
    for blk in blocks:
        if (blk.pos, blk.neg) in ((a, b), (b, a)):
            return blk
    raise KeyError((a, b))


def _check_classes(y, classes):
    y = np.asarray(y).ravel()
    classes = tuple(int(c) for c in (CLASSES if classes is None else classes))
    missing = [c for c in classes if not np.any(y == c)]
    if missing:
        raise TrainingError("classes %s have no training samples" % (missing,))
    return y, classes


def _matrix(X, n_features=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionError("feature input must be 1-D or 2-D")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError("input has %d features, model expects %d" % (X.shape[1], n_features))
    return X


def _pair_block(X, y, Xv, yv, a, b, grid, features=None, tol=1e-3, metric="accuracy", max_iter=None):
    tr = (y == a) | (y == b)
    va = (yv == a) | (yv == b)
    Xt, Xvv = X[tr], Xv[va]
    if features is not None:
        Xt, Xvv = Xt[:, list(features)], Xvv[:, list(features)]
    res = grid_search(Xt, np.where(y[tr] == a, 1, -1), Xvv, np.where(yv[va] == a, 1, -1),
                      grid, tol=tol, metric=metric, max_iter=max_iter)
    return BinaryBlock(a, b, res.model, None if features is None else tuple(features), res.accuracy)


def _pairwise_blocks(X, y, Xv, yv, classes, grid, tol):
    return tuple(_pair_block(X, y, Xv, yv, a, b, grid, tol=tol)
                 for a, b in itertools.combinations(classes, 2))


def _normalize(X, Xv):
    X = _matrix(X)
    Xv = _matrix(Xv, X.shape[1])
    norm = fit_zscore(X)
    return norm, apply_zscore(norm, X), apply_zscore(norm, Xv)


# ---------------------------------------------------------------------------
# one-vs-one


def train_one_vs_one(X, y, X_val, y_val, grid=None, layout=LAYOUT_IDS["cs"], classes=None, tol=1e-3):
    """N(N-1)/2 pairwise SVMs on a shared feature set, each grid-tuned on
    the validation samples of its two classes.

    Features are z-scored with statistics of the training rows.
    ``classes`` restricts the label set (all six by default).
    """
    y, classes = _check_classes(y, classes)
    yv = np.asarray(y_val).ravel()
    norm, Z, Zv = _normalize(X, X_val)
    blocks = _pairwise_blocks(Z, y, Zv, yv, classes, grid or TrainGrid(), tol)
    return FrameworkModel("OneVsOne", classes, layout, norm, blocks)


def _ovo_decide(classes, blocks, Z):
    K = len(classes)
    pos = {c: k for k, c in enumerate(classes)}
    votes = np.zeros((Z.shape[0], K))
    conf = np.zeros((Z.shape[0], K))
    for blk in blocks:
        s = blk.scores(Z)
        a, b = pos[blk.pos], pos[blk.neg]
        toward_a = s >= 0
        votes[:, a] += toward_a
        votes[:, b] += ~toward_a
        conf[:, a] += s
        conf[:, b] -= s
    top = votes == votes.max(1, keepdims=True)
    # among vote leaders the largest summed confidence; then the smallest class
    tie_conf = np.where(top, conf, -np.inf)
    return np.asarray(classes)[np.argmax(tie_conf, axis=1)]


def predict_one_vs_one(model, X):
    """Max-win vote; vote ties go to the tied class with the highest summed
    signed confidence over its blocks, residual ties to the smallest class."""
    single = np.ndim(X) == 1
    Z = apply_zscore(model.norm, _matrix(X, model.norm.mean.shape[0]))
    out = _ovo_decide(model.classes, model.blocks, Z)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# one-vs-rest


def balanced_negative_sample(counts, target):
    """Per-class negative draw counts for the block of class ``target``.

    Each other class j contributes round(alpha * N_j) with alpha = N_i / sum
    N_j, so every class weighs in proportionally; the rounding residue is
    absorbed by the largest other class so the draws total N_i exactly
    (as far as the available samples allow).
    """
    counts = {int(k): int(v) for k, v in dict(counts).items()}
    if counts.get(target, 0) < 1:
        raise TrainingError("target class %r has no samples" % (target,))
    others = sorted(c for c in counts if c != target)
    total = sum(counts[c] for c in others)
    if total == 0:
        raise TrainingError("no negative samples available")
    n_i = counts[target]
    alpha = n_i / total
    draws = {c: min(counts[c], int(np.floor(alpha * counts[c] + 0.5))) for c in others}
    largest = max(others, key=lambda c: (counts[c], -c))
    draws[largest] = int(np.clip(draws[largest] + n_i - sum(draws.values()), 0, counts[largest]))
    return draws


def _negative_indices(y, target, rng):
    classes, cnt = np.unique(y, return_counts=True)
    draws = balanced_negative_sample(dict(zip(classes.tolist(), cnt.tolist())), target)
    idx = [rng.choice(np.flatnonzero(y == c), size=k, replace=False) for c, k in sorted(draws.items()) if k]
    return np.sort(np.concatenate(idx)) if idx else np.zeros(0, dtype=int)


def train_one_vs_rest(X, y, X_val, y_val, grid=None, seed=0, layout=LAYOUT_IDS["cs"], classes=None, tol=1e-3):
    """One verification SVM per class: its training samples against a
    class-balanced negative draw of equal size.  Each block is tuned on the
    whole validation split by balanced accuracy."""
    y, classes = _check_classes(y, classes)
    yv = np.asarray(y_val).ravel()
    norm, Z, Zv = _normalize(X, X_val)
    keep = np.isin(y, classes)
    Z, y = Z[keep], y[keep]
    keep_v = np.isin(yv, classes)
    Zv, yv = Zv[keep_v], yv[keep_v]
    grid = grid or TrainGrid()
    streams = np.random.SeedSequence(seed).spawn(len(classes))
    blocks = []
    for c, ss in zip(classes, streams):
        neg = _negative_indices(y, c, np.random.default_rng(ss))
        rows = np.concatenate([np.flatnonzero(y == c), neg])
        res = grid_search(Z[rows], np.where(y[rows] == c, 1, -1), Zv, np.where(yv == c, 1, -1),
                          grid, tol=tol, metric="balanced")
        blocks.append(BinaryBlock(c, 0, res.model, None, res.accuracy))
    return FrameworkModel("OneVsRest", classes, layout, norm, tuple(blocks), resolver="SvmScore")


# ---------------------------------------------------------------------------
# hierarchical verification


def cascade_pool(a, b):
    """Scalar-pool columns available to the a-vs-b sub-block."""
    return (tuple(range(3 * (a - 1), 3 * a)) + tuple(range(3 * (b - 1), 3 * b))
            + (POOL_MEAN, POOL_VAR))


def cascade_subsets(pool, sizes=SUBSET_SIZES):
    return [s for k in sizes for s in itertools.combinations(pool, k)]


def train_cascade(P, y, P_val, y_val, grid=None, classes=None, sizes=SUBSET_SIZES, tol=1e-3,
                  max_iter=CASCADE_MAX_ITER, n_jobs=1):
    """Hierarchical verification blocks on small scalar subsets.

    For every class pair the sub-block is chosen by exhaustive search over
    all subsets (of the given sizes) of the pair's 8-scalar pool, each
    subset grid-tuned; the subset with the best validation balanced
    accuracy wins, earlier (smaller) subsets on ties.

    Parameters
    ----------
    P, P_val : array, shape (n, 20)
        Scalar pool of the training and validation rows.
    max_iter : int
        SMO iteration budget per fit; grid cells that exceed it are
        skipped.  Low-dimensional subsets at large C converge very slowly.
    n_jobs : int
        Threads evaluating candidate subsets concurrently.  The result does
        not depend on it.
    """
    y, classes = _check_classes(y, classes)
    yv = np.asarray(y_val).ravel()
    if any(not 3 <= k <= 6 for k in sizes):
        raise ParameterError("cascade subset sizes must lie in [3, 6]")
    norm, Z, Zv = _normalize(P, P_val)
    if Z.shape[1] != 20:
        raise DimensionError("the cascade expects the 20-column scalar pool, got %d columns" % Z.shape[1])
    grid = grid or TrainGrid()

    def fit(a, b, subset):
        try:
            return _pair_block(Z, y, Zv, yv, a, b, grid, features=subset, tol=tol, metric="balanced",
                               max_iter=max_iter)
        except ConvergenceError:
            return None

    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 else None
    blocks = []
    try:
        for a, b in itertools.combinations(classes, 2):
            cands = cascade_subsets(cascade_pool(a, b), sizes)
            best = None
            step = max(1, n_jobs)
            for s in range(0, len(cands), step):
                chunk = cands[s:s + step]
                if pool is None:
                    fitted = [fit(a, b, c) for c in chunk]
                else:
                    fitted = list(pool.map(lambda c: fit(a, b, c), chunk))
                for blk in fitted:
                    if blk is not None and (best is None or blk.val_score > best.val_score):
                        best = blk
                if best is not None and best.val_score >= 1.0:
                    break  # nothing later can beat it strictly
            if best is None:
                raise ConvergenceError("no cascade subset converged for classes %d vs %d" % (a, b))
            blocks.append(best)
    finally:
        if pool is not None:
            pool.shutdown()
    return FrameworkModel("HierCascade", classes, LAYOUT_IDS["scalar"], norm, tuple(blocks),
                          resolver="PairwiseBlocks")


def train_common_hierarchy(X, y, X_val, y_val, grid=None, layout=LAYOUT_IDS["cs"], classes=None, tol=1e-3):
    """Hierarchical verification blocks whose sub-blocks all use the full
    feature set, each with its own tuned (C, gamma)."""
    y, classes = _check_classes(y, classes)
    yv = np.asarray(y_val).ravel()
    norm, Z, Zv = _normalize(X, X_val)
    blocks = _pairwise_blocks(Z, y, Zv, yv, classes, grid or TrainGrid(), tol)
    return FrameworkModel("HierCommon", classes, layout, norm, blocks, resolver="AvgSvmScore")


# ---------------------------------------------------------------------------
# tree ensembles


def train_tree_framework(X, y, kind="AdaBoost", seed=0, n_trees_max=200, n_rounds=50, base_depth=3,
                         layout=LAYOUT_IDS["cs"], classes=None):
    """Wrap a tree ensemble as a single-stage framework.

    Forests keep the tree count at the OOB elbow of an ``n_trees_max`` run.
    """
    y, classes = _check_classes(y, classes)
    X = _matrix(X)
    keep = np.isin(y, classes)
    X, y = X[keep], y[keep]
    if kind == "RandomForest":
        ens = _trees.train_forest_at_elbow(X, y, n_trees_max, seed=seed)
    elif kind == "RandomUniformForest":
        ens = _trees.train_forest_at_elbow(X, y, n_trees_max, seed=seed, uniform=True)
    elif kind == "AdaBoost":
        ens = _trees.train_adaboost(X, y, n_rounds, base_depth, seed=seed)
    else:
        raise ParameterError("unknown tree ensemble %r" % (kind,))
    return FrameworkModel("TreeEnsemble", classes, layout, ensemble=ens)


# ---------------------------------------------------------------------------
# first stage and resolution


def first_stage_accepts(model, X):
    """Which class blocks accept each sample, with their scores.

    Single-decision topologies (one-vs-one, tree ensembles) accept exactly
    their prediction.  One-vs-rest block i accepts when its SVM is
    positive.  A hierarchical block accepts only when all of its sub-blocks
    classify toward the owner; its score is the mean signed sub-block score.
    """
    classes = model.classes
    K = len(classes)
    if model.kind == "TreeEnsemble":
        X = _matrix(X, model.ensemble.n_features)
        pred = _trees.ensemble_predict(model.ensemble, X)
        votes = _trees.ensemble_votes(model.ensemble, X)
        accept = pred[:, None] == np.asarray(classes)[None, :]
        return FirstStageOutcome(classes, accept, votes)
    Z = apply_zscore(model.norm, _matrix(X, model.norm.mean.shape[0]))
    n = Z.shape[0]
    if model.kind == "OneVsOne":
        pred = _ovo_decide(classes, model.blocks, Z)
        accept = pred[:, None] == np.asarray(classes)[None, :]
        return FirstStageOutcome(classes, accept, np.full((n, K), np.nan))
    if model.kind == "OneVsRest":
        scores = np.column_stack([_find_owner(model.blocks, c).scores(Z) for c in classes])
        return FirstStageOutcome(classes, scores >= 0, scores)
    if model.kind in ("HierCascade", "HierCommon"):
        raw = {id(blk): blk.scores(Z) for blk in model.blocks}
        accept = np.ones((n, K), dtype=bool)
        scores = np.zeros((n, K))
        for k, (owner, subs) in enumerate(model.verification_blocks().items()):
            for _, blk, sign in subs:
                s = raw[id(blk)]
                # a zero score counts toward the block's positive class
                accept[:, k] &= (s >= 0) if sign > 0 else (s < 0)
                scores[:, k] += sign * s
            scores[:, k] /= len(subs)
        return FirstStageOutcome(classes, accept, scores)
    raise ParameterError("unknown framework kind %r" % (model.kind,))


def _find_owner(blocks, c):
    for blk in blocks:
        if blk.pos == c:
            return blk
    raise KeyError(c)


def resolve_by_score(outcome):
    """Highest-scoring accepting block wins; exact ties go to the smallest
    class.  Samples no block accepts stay rejected (0)."""
    acc = outcome.accept
    s = np.where(acc, np.nan_to_num(outcome.scores, nan=0.0), -np.inf)
    out = np.asarray(outcome.classes)[np.argmax(s, axis=1)]
    return np.where(acc.any(1), out, REJECT)


def train_second_stage_pairwise(X, y, X_val, y_val, grid=None, layout=LAYOUT_IDS["cs"], classes=None, tol=1e-3):
    """Fifteen pairwise SVMs on a high-dimensional set for the second stage."""
    y, classes = _check_classes(y, classes)
    yv = np.asarray(y_val).ravel()
    norm, Z, Zv = _normalize(X, X_val)
    return PairwiseResolver(_pairwise_blocks(Z, y, Zv, yv, classes, grid or TrainGrid(), tol), norm, layout)


def resolve_pairwise(resolver, outcome, X_full):
    """Resolve ambiguous samples with the pairwise blocks of the classes
    involved.

    A class wins when every involved block containing it votes for it;
    if no class is unanimous the sample falls back to score resolution.
    Unambiguous samples keep their single class; unaccepted ones stay
    rejected.
    """
    out = resolve_by_score(outcome)
    n_acc = outcome.accept.sum(1)
    amb = np.flatnonzero(n_acc >= 2)
    if amb.size == 0:
        return out
    Z = apply_zscore(resolver.norm, _matrix(X_full, resolver.norm.mean.shape[0]))[amb]
    for r, row in enumerate(amb):
        involved = outcome.accepting(row)
        wins = {c: 0 for c in involved}
        for a, b in itertools.combinations(involved, 2):
            blk = resolver.block(a, b)
            s = blk.scores(Z[r:r + 1])[0]
            wins[blk.pos if s >= 0 else blk.neg] += 1
        unanimous = [c for c in involved if wins[c] == len(involved) - 1]
        if unanimous:
            out[row] = unanimous[0]
    return out


# ---------------------------------------------------------------------------
# uniform front end


_SHORT = {
    "ovo": "OneVsOne",
    "ovr": "OneVsRest",
    "cascade": "HierCascade",
    "common-hier": "HierCommon",
    "rf": "RandomForest",
    "ruf": "RandomUniformForest",
    "adaboost": "AdaBoost",
}
_DEFAULT_RESOLVER = {"ovr": "score", "cascade": "pairwise", "common-hier": "score"}
_ALLOWED_RESOLVERS = {"ovr": ("score", "pairwise"), "cascade": ("score", "pairwise"), "common-hier": ("score",)}


@dataclass(frozen=True)
class FrameworkSpec:
    """What to train.

    ``framework`` is one of ovo, ovr, cascade, common-hier, rf, ruf,
    adaboost; ``features`` one of cs, texture, combined (the cascade's first
    stage always uses the scalar pool and ``features`` feeds its second
    stage).  ``resolver`` is score or pairwise for the verification
    topologies and must be None otherwise.
    """

    framework: str = "ovo"
    features: str = "cs"
    resolver: str = None
    grid: TrainGrid = field(default_factory=TrainGrid)
    seed: int = 0
    n_trees_max: int = 200
    n_rounds: int = 50
    base_depth: int = 3
    cascade_sizes: tuple = SUBSET_SIZES
    n_jobs: int = 1

    def __post_init__(self):
        if self.framework not in _SHORT:
            raise ParameterError("unknown framework %r" % (self.framework,))
        if self.features not in ("cs", "texture", "combined"):
            raise ParameterError("unknown feature set %r" % (self.features,))
        res = self.resolver
        if res is None:
            res = _DEFAULT_RESOLVER.get(self.framework)
        elif res not in _ALLOWED_RESOLVERS.get(self.framework, ()):
            raise ParameterError("resolver %r is not valid for framework %r" % (res, self.framework))
        object.__setattr__(self, "resolver", res)

    @property
    def first_stage_features(self):
        return "scalar" if self.framework == "cascade" else self.features


def fit_framework(spec, train, y, val, y_val, classes=None):
    """Train the framework described by ``spec``.

    ``train`` and ``val`` map feature-set names (cs, texture, combined,
    scalar) to matrices with rows aligned to ``y`` / ``y_val``.
    """
    f = spec.first_stage_features
    layout = LAYOUT_IDS[f]
    kw = dict(classes=classes)
    if spec.framework == "ovo":
        model = train_one_vs_one(train[f], y, val[f], y_val, spec.grid, layout, **kw)
    elif spec.framework == "ovr":
        model = train_one_vs_rest(train[f], y, val[f], y_val, spec.grid, spec.seed, layout, **kw)
    elif spec.framework == "cascade":
        model = train_cascade(train[f], y, val[f], y_val, spec.grid, sizes=spec.cascade_sizes,
                              n_jobs=spec.n_jobs, **kw)
    elif spec.framework == "common-hier":
        model = train_common_hierarchy(train[f], y, val[f], y_val, spec.grid, layout, **kw)
    else:
        model = train_tree_framework(train[f], y, _SHORT[spec.framework], spec.seed, spec.n_trees_max,
                                     spec.n_rounds, spec.base_depth, layout, **kw)
    if spec.resolver == "pairwise":
        g = spec.features
        second = train_second_stage_pairwise(train[g], y, val[g], y_val, spec.grid, LAYOUT_IDS[g], **kw)
        return _replace(model, resolver="PairwiseBlocks", second=second)
    if spec.resolver == "score":
        kind = "AvgSvmScore" if model.kind in ("HierCascade", "HierCommon") else "SvmScore"
        return _replace(model, resolver=kind, second=None)
    return model


def _replace(model, **changes):
    import dataclasses
    return dataclasses.replace(model, **changes)


def apply_framework(model, feats):
    """Run a trained framework; returns (first-stage outcome, final labels).

    ``feats`` maps feature-set names to matrices as in ``fit_framework``.
    Final labels are 0 for rejected samples.
    """
    first_key = _layout_key(model.layout)
    outcome = first_stage_accepts(model, feats[first_key])
    if model.resolver == "PairwiseBlocks":
        final = resolve_pairwise(model.second, outcome, feats[_layout_key(model.second.layout)])
    elif model.kind in ("OneVsOne", "TreeEnsemble"):
        final = np.asarray(outcome.classes)[np.argmax(outcome.accept, axis=1)]
    else:
        final = resolve_by_score(outcome)
    return outcome, final


def _layout_key(layout):
    for k, v in LAYOUT_IDS.items():
        if v == layout:
            return k
    raise ParameterError("unknown feature layout %r" % (layout,))
