"""Binary RBF-kernel SVM trained by sequential minimal optimization."""

import itertools
from dataclasses import dataclass, field

import numpy as np

from ._smo import smo_solve
from .errors import ConvergenceError, DimensionError, ModelFormatError, ParameterError, TrainingError

__all__ = [
    "KernelParams",
    "SvmModel",
    "TrainGrid",
    "GridResult",
    "rbf_kernel",
    "train_binary_svm",
    "decision_score",
    "predict_binary",
    "grid_search",
    "kkt_residuals",
    "dual_objective",
    "svm_to_dict",
    "svm_from_dict",
]

FORMAT_TAG = "hep2cls.svm"
FORMAT_VERSION = 1

DEFAULT_C = (1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9)
DEFAULT_GAMMA = (0.001, 0.005, 0.01, 0.05, 0.1)


@dataclass(frozen=True)
class KernelParams:
    gamma: float
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ParameterError("only the RBF kernel is supported, got %r" % (self.kind,))
        if not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ParameterError("kernel gamma must be positive and finite, got %r" % (self.gamma,))


@dataclass(frozen=True)
class SvmModel:
    """A trained binary SVM.

    The decision function is ``sum(dual_coef * k(support_vectors, x)) +
    bias``; positive scores predict +1.
    """

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    kernel: KernelParams
    C: float
    n_iter: int = 0
    # training-row indices of the support vectors; not serialized
    sv_index: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n_features(self):
        return self.support_vectors.shape[1]


@dataclass(frozen=True)
class TrainGrid:
    C: tuple = DEFAULT_C
    gamma: tuple = DEFAULT_GAMMA

    def __post_init__(self):
        C = tuple(float(c) for c in self.C)
        gamma = tuple(float(g) for g in self.gamma)
        if not C or not gamma:
            raise ParameterError("grid must contain at least one C and one gamma")
        if any(not 1e3 <= c <= 1e9 for c in C):
            raise ParameterError("grid C values must lie in [1e3, 1e9]")
        if any(not 1e-3 <= g <= 0.1 for g in gamma):
            raise ParameterError("grid gamma values must lie in [0.001, 0.1]")
        object.__setattr__(self, "C", tuple(sorted(set(C))))
        object.__setattr__(self, "gamma", tuple(sorted(set(gamma))))

    def cells(self):
        """(C, gamma) pairs, smaller C first, then smaller gamma."""
        return list(itertools.product(self.C, self.gamma))


@dataclass(frozen=True)
class GridResult:
    C: float
    gamma: float
    accuracy: float
    model: SvmModel
    failed: tuple = field(default=())


def _sqdist(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def rbf_kernel(A, B, gamma):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    return np.exp(-gamma * _sqdist(A, B))


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionError("X has shape %r but y has %d labels" % (X.shape, y.shape[0]))
    if not np.all(np.isfinite(X)):
        raise ParameterError("feature matrix contains non-finite values")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise TrainingError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingError("both labels must be present to train a binary SVM")
    return X, y


def _fit_kernel(K, X, y, C, kernel, tol, max_iter):
    if not C > 0:
        raise ParameterError("C must be positive, got %r" % (C,))
    if max_iter is None:
        max_iter = max(10 ** 6, 100 * len(y))
    alpha, _, rho, n_iter, converged = smo_solve(K, y, float(C), float(tol), int(max_iter))
    if not converged:
        raise ConvergenceError("SMO did not converge within %d iterations (C=%g, gamma=%g)"
                               % (max_iter, C, kernel.gamma))
    sv = alpha > 0
    return SvmModel(
        support_vectors=X[sv].copy(),
        dual_coef=(alpha * y)[sv],
        bias=float(-rho),
        kernel=kernel,
        C=float(C),
        n_iter=int(n_iter),
        sv_index=np.flatnonzero(sv),
    )


def train_binary_svm(X, y, C, kernel, tol=1e-3, max_iter=None):
    """Train a soft-margin SVM with labels in {-1, +1}.

    Parameters
    ----------
    X : array, shape (n_samples, n_features)
    y : array of -1/+1, shape (n_samples,)
    C : float
        Box constraint.
    kernel : KernelParams or float
        RBF kernel (a bare float is taken as its gamma).
    tol : float
        Stopping tolerance on the maximal KKT violation.
    max_iter : int, optional
        Hard cap on SMO iterations; defaults to max(1e6, 100 n).

    Raises
    ------
    TrainingError
        If only one label is present.
    ConvergenceError
        If the iteration cap is reached first.
    """
    if not isinstance(kernel, KernelParams):
        kernel = KernelParams(float(kernel))
    X, y = _check_xy(X, y)
    K = rbf_kernel(X, X, kernel.gamma)
    return _fit_kernel(K, X, y, C, kernel, tol, max_iter)


def decision_score(model, x):
    """Signed distance-like score(s) for one vector or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.n_features:
        raise DimensionError("input has %d features, model expects %d" % (X.shape[1], model.n_features))
    if model.support_vectors.shape[0] == 0:
        scores = np.full(X.shape[0], model.bias)
    else:
        scores = rbf_kernel(X, model.support_vectors, model.kernel.gamma) @ model.dual_coef + model.bias
    return float(scores[0]) if single else scores


def predict_binary(model, x):
    """Sign of the decision score; a score of exactly 0 predicts +1."""
    s = decision_score(model, x)
    if np.ndim(s) == 0:
        return 1 if s >= 0 else -1
    return np.where(s >= 0, 1, -1)


def _score(y_true, y_pred, metric):
    if metric == "accuracy":
        return float(np.mean(y_true == y_pred))
    if metric == "balanced":
        pos, neg = y_true > 0, y_true < 0
        parts = []
        if pos.any():
            parts.append(np.mean(y_pred[pos] > 0))
        if neg.any():
            parts.append(np.mean(y_pred[neg] < 0))
        return float(np.mean(parts))
    raise ParameterError("unknown grid-search metric %r" % (metric,))


def grid_search(X_train, y_train, X_val, y_val, grid=None, tol=1e-3, metric="accuracy", max_iter=None):
    """Exhaustive (C, gamma) search scored on the validation split.

    Returns the best cell with its trained model.  Ties go to the smaller C,
    then the smaller gamma.  Cells whose training fails to converge are
    skipped and listed in ``failed``.
    """
    grid = grid or TrainGrid()
    X, y = _check_xy(X_train, y_train)
    Xv = np.asarray(X_val, dtype=np.float64)
    yv = np.asarray(y_val, dtype=np.float64).ravel()
    if Xv.shape[0] == 0:
        raise TrainingError("validation split is empty")
    d_train = _sqdist(X, X)
    d_val = _sqdist(Xv, X)
    kernels = {}
    best = None
    failed = []
    for C, gamma in grid.cells():
        if gamma not in kernels:
            kernels[gamma] = (np.exp(-gamma * d_train), np.exp(-gamma * d_val))
        K, Kv = kernels[gamma]
        try:
            model = _fit_kernel(K, X, y, C, KernelParams(gamma), tol, max_iter)
        except ConvergenceError:
            failed.append((C, gamma))
            continue
        scores = Kv[:, model.sv_index] @ model.dual_coef + model.bias
        acc = _score(yv, np.where(scores >= 0, 1, -1), metric)
        if best is None or acc > best[2]:
            best = (C, gamma, acc, model)
            if acc >= 1.0:
                # later cells can only tie, and ties keep the earlier cell
                break
    if best is None:
        raise ConvergenceError("no grid cell converged")
    return GridResult(*best, failed=tuple(failed))


def kkt_residuals(model, X, y):
    """Per-sample KKT violation of a trained model on its training data.

    Requires the dual variables, which are recovered from ``dual_coef`` by
    matching support vectors to rows of ``X``.
    """
    X, y = _check_xy(X, y)
    alpha = _recover_alpha(model, X)
    yf = y * decision_score(model, X)
    C = model.C
    res = np.empty_like(yf)
    lower = alpha <= 0
    upper = alpha >= C
    free = ~(lower | upper)
    res[lower] = np.maximum(0.0, 1.0 - yf[lower])
    res[upper] = np.maximum(0.0, yf[upper] - 1.0)
    res[free] = np.abs(yf[free] - 1.0)
    return res


def _recover_alpha(model, X):
    alpha = np.zeros(X.shape[0])
    idx = model.sv_index
    if idx is None:
        raise ParameterError("model does not carry training indices")
    alpha[idx] = np.abs(model.dual_coef)
    return alpha


def dual_objective(alpha, X, y, gamma):
    """Dual objective to be maximized: sum(a) - 0.5 a'Qa."""
    K = rbf_kernel(X, X, gamma)
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def svm_to_dict(model):
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kernel": {"kind": model.kernel.kind, "gamma": model.kernel.gamma},
        "C": model.C,
        "bias": model.bias,
        "support_vectors": model.support_vectors.tolist(),
        "dual_coef": model.dual_coef.tolist(),
        "n_features": model.n_features,
    }


def svm_from_dict(d):
    if not isinstance(d, dict) or d.get("format") != FORMAT_TAG:
        raise ModelFormatError("not a serialized SVM")
    if d.get("version") != FORMAT_VERSION:
        raise ModelFormatError("unsupported SVM format version %r" % (d.get("version"),))
    try:
        sv = np.asarray(d["support_vectors"], dtype=np.float64)
        coef = np.asarray(d["dual_coef"], dtype=np.float64)
        if sv.ndim != 2 or sv.shape[0] != coef.shape[0]:
            if not (sv.size == 0 and coef.size == 0):
                raise ModelFormatError("support-vector matrix and coefficients disagree")
            sv = sv.reshape(0, int(d.get("n_features", 0)))
        return SvmModel(sv, coef, float(d["bias"]), KernelParams(float(d["kernel"]["gamma"])), float(d["C"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError("corrupt SVM record: %s" % exc) from None
