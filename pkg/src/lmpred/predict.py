"""Finite-past, same-realisation and Wiener-Kolmogorov one-step predictors.

Sign convention: coefficient vectors ``a`` hold ``a_{1,k} .. a_{k,k}`` and
the predictor is ``sum_j (-a_{j,k}) X_{n+1-j}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (IndexContractError, SingularMatrixError, TruncationContractError)
from .model import ProcessSpec, ar_coefficients
from .toeplitz import (PredictorCoeffs, cross_moment, dense_solve, empirical_cov,
                       lag_vectors, levinson_solve, theoretical_cov)

__all__ = [
    "PredictorCoeffs", "ErrorDecomposition", "theoretical_coefficients",
    "estimated_coefficients", "predict_theoretical", "predict_same_realisation",
    "predict_wiener_kolmogorov", "decompose_error", "default_truncation",
]


@dataclass(frozen=True)
class ErrorDecomposition:
    """Pathwise split ``X_{n+1} - Xhat_{n+1}(k) = eps_{n+1} + f(k) + S_n(k)``.

    ``f_definition`` is ``f(k)`` evaluated from its defining sum over
    ``eps_{j+1,k}``; it differs from the exact residual by
    ``boundary_term`` because the cross-moment sum stops at ``n - 1`` while
    the covariance estimate runs to ``n``.
    """

    total_error: float
    eps_next: float | None
    f_k: float
    s_n_k: float
    truncation_bound: float
    f_definition: float
    boundary_term: float
    truncation: int

    @property
    def identity_gap(self) -> float:
        eps = 0.0 if self.eps_next is None else self.eps_next
        return self.total_error - (eps + self.f_k + self.s_n_k)


def _values(path) -> np.ndarray:
    return np.asarray(getattr(path, "values", path), dtype=float)


def _spec_of(path, spec):
    if spec is not None:
        return spec
    s = getattr(path, "spec", None)
    if s is None:
        raise ValueError("a ProcessSpec is required for raw value arrays")
    return s


def default_truncation(k: int) -> int:
    return max(2 ** 14, 32 * k)


@lru_cache(maxsize=256)
def theoretical_coefficients(spec: ProcessSpec, k: int) -> PredictorCoeffs:
    """Finite-past coefficients solving ``Sigma(k) a = -(sigma(1..k))``, with ``v_1..v_k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return levinson_solve(theoretical_cov(spec, k + 1))


def estimated_coefficients(path, k: int, K_n: int) -> PredictorCoeffs:
    """Same-realisation estimate ``-a_hat = Sigmahat_n(k)^{-1} (n-K_n+1)^{-1} sum X_j(k) X_{j+1}``."""
    x = _values(path)
    n = len(x)
    if not (1 <= k <= K_n <= n - 1):
        raise IndexContractError(f"need 1 <= k <= K_n <= n-1, got k={k}, K_n={K_n}, n={n}")
    cov = empirical_cov(x, k, K_n)
    rhs = cross_moment(x, k, K_n)
    try:
        sol = dense_solve(cov.matrix, rhs)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"empirical covariance singular (n={n}, k={k})") from exc
    prov = {"n": n, "K_n": K_n, "ridge": sol.ridge}
    if hasattr(path, "seed"):
        prov["seed"] = path.seed
    return PredictorCoeffs(k, -sol.x, "Estimated", provenance=prov)


def predict_theoretical(window, coeffs: PredictorCoeffs) -> float:
    """``sum_j (-a_{j,k}) X_{n+1-j}``; ``window`` is the last k values in time order.

    A :class:`~lmpred.simulate.SamplePath` may be passed instead, in which
    case its last ``k`` values are used.
    """
    x = _values(window)
    if hasattr(window, "values"):
        if len(x) < coeffs.order:
            raise IndexContractError("path shorter than predictor order")
        x = x[-coeffs.order:]
    if len(x) != coeffs.order:
        raise IndexContractError(f"window length {len(x)} != order {coeffs.order}")
    return float(np.dot(coeffs.weights, x[::-1]))


def predict_same_realisation(path, k: int, K_n: int) -> float:
    x = _values(path)
    coeffs = estimated_coefficients(x, k, K_n)
    return float(np.dot(coeffs.weights, x[-1: -k - 1: -1]))


def predict_wiener_kolmogorov(path, J: int, spec: ProcessSpec | None = None) -> tuple[float, float]:
    """Truncated infinite-past predictor ``-sum_{j=1}^{J} a_j X_{n+1-j}``, ``J <= n``.

    Returns ``(value, tail_bound)`` with
    ``tail_bound = sqrt(sum_{j>J} a_j^2) * sqrt(mean X_t^2)``.
    """
    x = _values(path)
    spec = _spec_of(path, spec)
    n = len(x)
    if n < 1 or J < 1:
        raise ValueError("need n >= 1 and J >= 1")
    J = min(n, J)
    a = ar_coefficients(spec, J)
    value = -float(np.dot(a.values[1:], x[::-1][:J]))
    tail = math.sqrt(a.truncation_tail_bound) * math.sqrt(float(np.mean(x * x)))
    return value, tail


def decompose_error(path, k: int, K_n: int, J: int | None = None,
                    spec: ProcessSpec | None = None,
                    eps_next: float | None = None) -> ErrorDecomposition:
    """Split the same-realisation forecast error of the last value of ``path``.

    ``path`` holds ``X_1 .. X_{n+1}``: coefficients are estimated from the
    first ``n`` values and scored against ``X_{n+1}``.  The innovation
    ``eps_{n+1}`` is taken from ``eps_next`` or from the path itself when it
    was drawn by :func:`~lmpred.simulate.sample_with_innovations`.
    """
    spec = _spec_of(path, spec)
    full = _values(path)
    n = len(full) - 1
    obs, x_next = full[:n], float(full[n])
    if J is None:
        J = min(n, default_truncation(k))
    if J > n:
        raise TruncationContractError(f"truncation J={J} exceeds available history n={n}")
    if J < k:
        raise TruncationContractError(f"truncation J={J} shorter than order k={k}")
    if eps_next is None and getattr(path, "innovations", None) is not None:
        eps_next = path.innovation(n + 1)

    theo = theoretical_coefficients(spec, k).a
    a_inf = ar_coefficients(spec, J)
    past = obs[::-1][:J]  # X_n, X_{n-1}, ..., X_{n+1-J}
    u = np.array(a_inf.values[1:J + 1])
    u[:k] -= theo
    s_n_k = -float(np.dot(u, past))

    cov = empirical_cov(obs, k, K_n).matrix
    w = dense_solve(cov, cross_moment(obs, k, K_n)).x
    xn = obs[-1: -k - 1: -1]
    total = x_next - float(np.dot(w, xn))

    N = n - K_n + 1
    W = lag_vectors(obs, k, K_n, n - 1)
    eps_jk = obs[K_n:n] + W @ theo
    g = dense_solve(cov, W.T @ eps_jk / N).x
    f_definition = -float(np.dot(xn, g))
    boundary = float(np.dot(xn, dense_solve(cov, xn).x)) * float(np.dot(xn, theo)) / N
    f_exact = f_definition - boundary  # = total - eps_{n+1,k}

    if eps_next is not None:
        f_k = total - eps_next - s_n_k
        # AR(inf) inversion residual: eps_{n+1} vs X_{n+1} + sum_{i<=J} a_i X_{n+1-i}
        bound = abs(x_next + float(np.dot(a_inf.values[1:J + 1], past)) - eps_next)
    else:
        f_k = f_exact
        bound = math.sqrt(a_inf.truncation_tail_bound) * math.sqrt(float(np.mean(obs * obs)))
    return ErrorDecomposition(total, eps_next, f_k, s_n_k, bound, f_definition, boundary, J)
