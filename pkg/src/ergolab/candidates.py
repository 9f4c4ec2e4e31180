"""Scalar test functions with (optional) analytic derivatives."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ModelEvaluationError

FD_REL_STEP = 1e-4


def fd_step(X):
    """Central-difference step h = 1e-4 (1 + |x|) per point."""
    return FD_REL_STEP * (1.0 + np.linalg.norm(X, axis=-1))


@dataclass(frozen=True, eq=False)
class LyapunovCandidate:
    """Scalar function on R^d, evaluated on arrays of shape ``(n, d)``.

    ``value`` must return shape ``(n,)``.  ``gradient`` (``(n, d)``) and
    ``hessian`` (``(n, d, d)``) are optional; central finite differences
    with a relative step are used when they are missing.
    """

    value: Callable
    gradient: Optional[Callable] = None
    hessian: Optional[Callable] = None
    name: str = "V"
    positive: bool = True

    def __call__(self, X):
        return self.value(np.atleast_2d(np.asarray(X, dtype=float)))

    def grad(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.gradient is not None:
            return np.asarray(self.gradient(X), dtype=float).reshape(X.shape)
        n, d = X.shape
        h = fd_step(X)
        g = np.empty((n, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            g[:, i] = (self.value(X + h[:, None] * e) - self.value(X - h[:, None] * e)) / (2 * h)
        _check_finite(g, X, "gradient")
        return g

    def hess(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.hessian is not None:
            n, d = X.shape
            return np.asarray(self.hessian(X), dtype=float).reshape(n, d, d)
        n, d = X.shape
        h = fd_step(X)
        hh = h[:, None]
        f0 = self.value(X)
        H = np.empty((n, d, d))
        eye = np.eye(d)
        for i in range(d):
            ei = eye[i]
            fp = self.value(X + hh * ei)
            fm = self.value(X - hh * ei)
            H[:, i, i] = (fp - 2 * f0 + fm) / h**2
            for j in range(i + 1, d):
                ej = eye[j]
                fpp = self.value(X + hh * (ei + ej))
                fpm = self.value(X + hh * (ei - ej))
                fmp = self.value(X - hh * (ei - ej))
                fmm = self.value(X - hh * (ei + ej))
                H[:, i, j] = H[:, j, i] = (fpp - fpm - fmp + fmm) / (4 * h**2)
        _check_finite(H.reshape(n, -1), X, "hessian")
        return H

    def scaled(self, alpha, name=None):
        return combine([(alpha, self)], name=name or f"{alpha:g}*{self.name}")

    def shifted(self, beta, name=None):
        """V + beta (derivatives unchanged)."""
        return LyapunovCandidate(
            value=lambda X: self.value(X) + beta,
            gradient=self.gradient,
            hessian=self.hessian,
            name=name or f"{self.name}+{beta:g}",
            positive=self.positive and beta >= 0,
        )


def _check_finite(arr, X, what):
    bad = ~np.all(np.isfinite(arr), axis=-1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ModelEvaluationError(f"non-finite finite-difference {what} at x={X[i]}", x=X[i])


def combine(terms, name="combo"):
    """Linear combination sum_k alpha_k f_k; analytic derivatives kept when all terms have them."""
    terms = [(float(a), f) for a, f in terms]

    def value(X):
        return sum(a * f.value(X) for a, f in terms)

    gradient = hessian = None
    if all(f.gradient is not None for _, f in terms):
        def gradient(X):
            return sum(a * f.grad(X) for a, f in terms)
    if all(f.hessian is not None for _, f in terms):
        def hessian(X):
            return sum(a * f.hess(X) for a, f in terms)
    positive = all(f.positive and a > 0 for a, f in terms)
    return LyapunovCandidate(value, gradient, hessian, name=name, positive=positive)


def constant(c, dim=1):
    c = float(c)
    return LyapunovCandidate(
        value=lambda X: np.full(X.shape[0], c),
        gradient=lambda X: np.zeros_like(X),
        hessian=lambda X: np.zeros((X.shape[0], X.shape[1], X.shape[1])),
        name=f"const:{c:g}",
        positive=c > 0,
    )


def coordinate(i=0):
    """f(x) = x[i]."""
    def gradient(X):
        g = np.zeros_like(X)
        g[:, i] = 1.0
        return g

    return LyapunovCandidate(
        value=lambda X: X[:, i].copy(),
        gradient=gradient,
        hessian=lambda X: np.zeros((X.shape[0], X.shape[1], X.shape[1])),
        name=f"x[{i}]",
        positive=False,
    )


def squared_norm():
    """f(x) = |x|^2."""
    return LyapunovCandidate(
        value=lambda X: np.sum(X * X, axis=1),
        gradient=lambda X: 2.0 * X,
        hessian=lambda X: np.broadcast_to(2.0 * np.eye(X.shape[1]), (X.shape[0], X.shape[1], X.shape[1])).copy(),
        name="|x|^2",
        positive=False,
    )


def from_expression(expr, name=None, constants=None):
    """Candidate from an expression string in ``x`` (derivatives by finite differences)."""
    from .expressions import numpy_function

    f = numpy_function(expr, ("x",), constants=constants, indexed=("x",))

    def value(X):
        return np.broadcast_to(np.asarray(f(X), dtype=float), (X.shape[0],)).copy()

    return LyapunovCandidate(value, name=name or expr, positive=False)
