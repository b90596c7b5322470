"""
Linear max-margin classifier trained with SMO.

Primal problem, for N training points:

    min_w,b  1/2 |w|^2 + (C / N) sum_i max(0, 1 - y_i (w . x_i + b))

The per-point bound C / N makes the solution invariant to duplicating the
training set. The dual is solved with maximal-violating-pair SMO over signed
multipliers a_i = y_i alpha_i in [A_i, B_i].
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ClassifierError, PreconditionError
from ..models.state import FeatureMatrix


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    C: float
    classes: Tuple[int, int] = (0, 1)
    shift: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    iterations: int = 0
    converged: bool = True
    warnings: List[str] = field(default_factory=list)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.shift is not None:
            X = (X - self.shift) / self.scale
        return X

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = self.transform(X)
        if X.ndim != 2 or X.shape[1] != self.weights.size:
            raise PreconditionError(f"expected {self.weights.size} features, got shape {X.shape}")
        return X @ self.weights + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class labels; a score of exactly 0 goes to the positive class."""
        positive = self.decision_function(X) >= 0
        return np.where(positive, self.classes[1], self.classes[0])


def _signed_labels(labels: Sequence[int]) -> Tuple[np.ndarray, Tuple[int, int]]:
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size != 2:
        raise ClassifierError(f"need exactly two classes, got {classes.size}")
    y = np.where(labels == classes[1], 1.0, -1.0)
    return y, (int(classes[0]), int(classes[1]))


def fit_linear_svm(X: np.ndarray, y: np.ndarray, C: float = 1.0, tol: float = 1e-6,
                   max_iter: int = 100_000) -> Tuple[np.ndarray, float, int, bool]:
    """
    SMO on the dual with a linear kernel; y in {-1, +1}.

    Returns (w, b, iterations, converged).
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    ub = C / n
    gram = X @ X.T
    diag = np.diag(gram)
    lower = np.where(y > 0, 0.0, -ub)
    upper = np.where(y > 0, ub, 0.0)
    alpha = np.zeros(n)
    g = np.ones(n)

    converged = False
    iterations = 0
    while iterations < max_iter:
        signed = y * alpha
        yg = y * g
        up = signed < upper
        low = lower < signed
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(yg[low])])
        gap = yg[i] - yg[j]
        if gap <= tol:
            converged = True
            break
        curvature = diag[i] + diag[j] - 2.0 * gram[i, j]
        step = min(upper[i] - signed[i], signed[j] - lower[j], gap / curvature if curvature > 0 else np.inf)
        g += step * y * (gram[j] - gram[i])
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        iterations += 1

    w = (alpha * y) @ X
    signed = y * alpha
    yg = y * g
    free = (signed > lower + 1e-12) & (signed < upper - 1e-12)
    if free.any():
        b = float(yg[free].mean())
    else:
        up = signed < upper
        low = lower < signed
        hi = yg[up].max() if up.any() else yg.max()
        lo = yg[low].min() if low.any() else yg.min()
        b = float((hi + lo) / 2.0)
    return w, b, iterations, converged


def primal_objective(model: LinearModel, X: np.ndarray, labels: Sequence[int]) -> float:
    y = np.where(np.asarray(labels) == model.classes[1], 1.0, -1.0)
    margins = y * model.decision_function(X)
    hinge = np.maximum(0.0, 1.0 - margins)
    return float(0.5 * model.weights @ model.weights + model.C * hinge.mean())


def train_linear(features: FeatureMatrix, C: float = 1.0, standardize: bool = False, tol: float = 1e-6,
                 max_iter: int = 100_000) -> LinearModel:
    """
    Fit the classifier on labeled features.

    Raises:
        ClassifierError: missing labels, or not exactly two classes
    """
    if features.labels is None:
        raise ClassifierError("training features carry no labels")
    if C <= 0:
        raise ClassifierError(f"C must be positive, got {C}")
    y, classes = _signed_labels(features.labels)
    X = np.asarray(features.theta_bar, dtype=float)
    shift = scale = None
    if standardize:
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = (X - shift) / scale
    w, b, iterations, converged = fit_linear_svm(X, y, C=C, tol=tol, max_iter=max_iter)
    model = LinearModel(weights=w, bias=b, C=C, classes=classes, shift=shift, scale=scale,
                        iterations=iterations, converged=converged)
    if not converged:
        model.warnings.append(f"SMO stopped at max_iter={max_iter} before reaching tol={tol}")
    return model


def evaluate(model: LinearModel, features: FeatureMatrix, labels: Optional[Sequence[int]] = None) -> float:
    """Fraction of samples whose predicted class equals the label."""
    labels = features.labels if labels is None else np.asarray(labels)
    if labels is None:
        raise PreconditionError("no labels to evaluate against")
    if len(labels) != features.num_samples:
        raise PreconditionError(f"{len(labels)} labels for {features.num_samples} samples")
    if features.num_samples == 0:
        return 0.0
    return float(np.mean(model.predict(features.theta_bar) == np.asarray(labels)))
