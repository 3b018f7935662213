"""Linear probing: L2 logistic regression with balanced class weights and inner grid search.

The fitted objective is

    sum_i w_{y_i} * log(1 + exp(-s_i (x_i . w + b))) + ||w||^2 / (2 C)

with ``s_i = 2 y_i - 1``, balanced weights ``w_c = n / (2 n_c)`` and an
unpenalised bias, minimised by L-BFGS.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.model_selection import StratifiedKFold

from .errors import NonFinite, SingleClass, TooFewSamples
from .metrics import balanced_accuracy

GRID = (0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class ProbeGrid:
    C: tuple = GRID
    max_iter: int = 10000
    tol: float = 1e-6
    class_weight: str = "balanced"
    inner_folds: int = 3
    standardize: bool = False

    def __post_init__(self):
        if not self.C or min(self.C) <= 0:
            raise ValueError("C values must be positive")
        if self.class_weight not in ("balanced", "none"):
            raise ValueError("class_weight must be 'balanced' or 'none'")


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    chosen_C: float
    converged: bool = True
    n_iter: int = 0
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    inner_scores: dict = field(default_factory=dict)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.mean is not None:
            X = (X - self.mean) / self.scale
        return X @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(np.int64)

    def to_dict(self, plan_hash: str | None = None) -> dict:
        d = {"weights": self.weights.tolist(), "bias": self.bias, "chosen_C": self.chosen_C,
             "converged": self.converged, "n_iter": self.n_iter,
             "inner_scores": {repr(k): v for k, v in self.inner_scores.items()}}
        if self.mean is not None:
            d["mean"], d["scale"] = self.mean.tolist(), self.scale.tolist()
        if plan_hash is not None:
            d["fold_plan"] = plan_hash
        return d


def class_weights(y: np.ndarray, mode: str = "balanced") -> np.ndarray:
    """Per-sample weights; balanced gives n / (2 n_c)."""
    if mode == "none":
        return np.ones(len(y))
    n = len(y)
    counts = np.bincount(y, minlength=2)
    return (n / (2.0 * counts))[y]


def penalized_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray, sw: np.ndarray,
                   C: float) -> tuple[float, np.ndarray]:
    """Objective and gradient; ``theta = [weights..., bias]``."""
    w, b = theta[:-1], theta[-1]
    s = 2.0 * y - 1.0
    margin = s * (X @ w + b)
    loss = float(sw @ np.logaddexp(0.0, -margin) + w @ w / (2.0 * C))
    g = -sw * s * expit(-margin)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ g + w / C
    grad[-1] = g.sum()
    return loss, grad


def _validate(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if not np.all(np.isfinite(X)):
        raise NonFinite("non-finite feature values")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    if len(np.unique(y)) < 2:
        raise SingleClass("both classes are needed to fit a probe")
    return X, y


def fit_logreg(X, y, C: float = 1.0, class_weight: str = "balanced", max_iter: int = 10000,
               tol: float = 1e-6, standardize: bool = False) -> LinearModel:
    """Minimise the penalised weighted log-loss.

    ``converged`` is False when ``max_iter`` is reached (or the line search
    stalls) before the gradient infinity-norm drops below ``tol``.
    """
    X, y = _validate(X, y)
    mean = scale = None
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = (X - mean) / scale
    sw = class_weights(y, class_weight)
    theta0 = np.zeros(X.shape[1] + 1)
    res = minimize(penalized_loss, theta0, args=(X, y, sw, C), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "maxfun": 10 * max_iter, "gtol": tol,
                            "ftol": 0.0, "maxcor": 20})
    if not np.all(np.isfinite(res.x)):
        raise NonFinite("optimizer produced non-finite weights")
    gnorm = float(np.abs(penalized_loss(res.x, X, y, sw, C)[1]).max())
    return LinearModel(res.x[:-1].copy(), float(res.x[-1]), float(C), gnorm < tol, int(res.nit),
                       mean, scale)


def grid_select(X, y, grid: ProbeGrid = ProbeGrid(), seed: int = 0, workers: int = 1) -> LinearModel:
    """Pick C by mean inner balanced accuracy (ties -> smallest C) and refit on everything."""
    X, y = _validate(X, y)
    if np.bincount(y, minlength=2).min() < grid.inner_folds:
        raise TooFewSamples(f"need at least {grid.inner_folds} samples per class for inner CV")
    folds = list(StratifiedKFold(grid.inner_folds, shuffle=True, random_state=seed).split(X, y))
    Cs = sorted(grid.C)

    def score(task):
        C, (tr, te) = task
        m = fit_logreg(X[tr], y[tr], C, grid.class_weight, grid.max_iter, grid.tol, grid.standardize)
        return balanced_accuracy(y[te], m.predict(X[te]))

    tasks = [(C, f) for C in Cs for f in folds]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            scores = list(pool.map(score, tasks))
    else:
        scores = [score(t) for t in tasks]
    k = len(folds)
    inner = {C: float(np.mean(scores[i * k:(i + 1) * k])) for i, C in enumerate(Cs)}
    best = Cs[0]
    for C in Cs:  # ascending, strict improvement only
        if inner[C] > inner[best]:
            best = C
    model = fit_logreg(X, y, best, grid.class_weight, grid.max_iter, grid.tol, grid.standardize)
    model.inner_scores = inner
    return model


def report_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]
