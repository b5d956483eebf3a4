"""RBF-kernel C-SVM solved by SMO, with one-vs-rest multiclass.

The binary solver follows the LIBSVM scheme: second-order working-set
selection (WSS2), stopping when the maximal violating pair gap drops below
``tol``.  Training samples are sorted into a canonical order first, so the
fitted machine, and every decision value, does not depend on the order the
samples were given in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAU = 1e-12


class SvmError(ValueError):
    pass


def rbf_kernel(a, b, gamma: float) -> np.ndarray:
    """``exp(-gamma * |a_i - b_j|^2)`` for row sets ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class BinarySvm:
    support: np.ndarray
    coef: np.ndarray
    bias: float
    gamma: float
    C: float
    alpha: np.ndarray
    kkt_gap: float
    iterations: int

    def decision(self, x) -> np.ndarray:
        if len(self.support) == 0:
            return np.full(np.atleast_2d(x).shape[0], self.bias)
        return rbf_kernel(x, self.support, self.gamma) @ self.coef + self.bias


@dataclass
class SvmModel:
    classes: np.ndarray
    machines: list[BinarySvm]
    gamma: float
    C: float

    def decision_function(self, x) -> np.ndarray:
        x = _check_finite(x)
        return np.stack([m.decision(x) for m in self.machines], axis=1)

    def max_kkt_gap(self) -> float:
        return max(m.kkt_gap for m in self.machines)


def _check_finite(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise SvmError("non-finite values in SVM input vectors")
    return x


def canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Lexicographic order over (coordinates..., label)."""
    keys = [y] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys[::-1])


def smo_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 1_000_000):
    """Solve the C-SVM dual for labels ``y`` in {-1, +1}; returns (alpha, bias, gap, iterations)."""
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    diag = np.diag(K).copy()
    it = 0
    gap = np.inf
    while it < max_iter:
        yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        g_max = yg[i]
        g_min = yg[low].min()
        gap = g_max - g_min
        if gap < tol:
            break
        cand = low & (yg < g_max)
        b = g_max - yg[cand]
        a = diag[i] + diag[cand] - 2.0 * K[i, cand]
        a = np.where(a > 0, a, TAU)
        cidx = np.flatnonzero(cand)
        j = int(cidx[np.argmin(-(b * b) / a)])
        it += 1
        # analytic two-variable update, clipped to the box
        yi, yj = y[i], y[j]
        quad = max(diag[i] + diag[j] - 2.0 * K[i, j], TAU)
        ai_old, aj_old = alpha[i], alpha[j]
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += y * (K[:, i] * (yi * (ai - ai_old)) + K[:, j] * (yj * (aj - aj_old)))
    yg = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(np.mean(yg[free]))
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = yg[up].max() if up.any() else 0.0
        lo = yg[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias, float(gap), it


def svm_train(vectors, labels, C: float = 1.0, gamma: float | None = None, tol: float = 1e-3) -> SvmModel:
    """One-vs-rest RBF C-SVMs; ``gamma`` defaults to 1 / dimension."""
    x = _check_finite(vectors)
    y_all = np.asarray(labels)
    if len(y_all) != len(x):
        raise SvmError(f"{len(x)} vectors but {len(y_all)} labels")
    classes = np.unique(y_all)
    if len(classes) < 2:
        raise SvmError(f"need at least 2 classes to train, got {len(classes)}")
    if C <= 0:
        raise SvmError(f"C must be positive, got {C}")
    gamma = 1.0 / x.shape[1] if gamma is None else float(gamma)
    order = canonical_order(x, y_all)
    x, y_all = x[order], y_all[order]
    K = rbf_kernel(x, x, gamma)
    machines = []
    for c in classes:
        y = np.where(y_all == c, 1.0, -1.0)
        alpha, bias, gap, it = smo_binary(K, y, C, tol)
        sv = alpha > 0
        machines.append(BinarySvm(x[sv], (alpha * y)[sv], bias, gamma, C, alpha, gap, it))
    return SvmModel(classes, machines, gamma, C)


def svm_predict(model: SvmModel, vectors) -> np.ndarray:
    """Argmax of the per-class decision values; ties go to the lowest class."""
    scores = model.decision_function(vectors)
    return model.classes[np.argmax(scores, axis=1)]
