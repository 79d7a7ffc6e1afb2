"""Toeplitz covariance machinery.

Index convention: paths are stored 0-based but documented 1-based, so
``X_j`` is ``x[j - 1]`` and the lag vector ``X_j(k) = (X_j, ..., X_{j-k+1})``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from .errors import IndexContractError, SingularCovarianceError, SingularMatrixError
from .model import ProcessSpec, autocovariance

log = logging.getLogger(__name__)

EIG_DENSE_MAX = 512
POWER_TOL = 1e-10


@dataclass(frozen=True)
class ToeplitzCov:
    """Symmetric Toeplitz matrix given by ``first_column = (sigma(0), ..., sigma(k-1))``."""

    first_column: np.ndarray

    def __post_init__(self):
        col = np.array(self.first_column, dtype=float)
        if col.ndim != 1 or len(col) < 1:
            raise ValueError("first column must be a non-empty vector")
        if not col[0] > 0:
            raise SingularCovarianceError("sigma(0) must be positive")
        col.setflags(write=False)
        object.__setattr__(self, "first_column", col)

    @property
    def k(self) -> int:
        return len(self.first_column)

    def matrix(self) -> np.ndarray:
        return linalg.toeplitz(self.first_column)

    def matvec(self, v) -> np.ndarray:
        return linalg.matmul_toeplitz(self.first_column, np.asarray(v, dtype=float))

    def is_positive_definite(self) -> bool:
        if self.k == 1:
            return True
        try:
            _durbin(self.first_column, self.k - 1)
        except SingularCovarianceError:
            return False
        return True


@dataclass(frozen=True)
class EmpiricalCov:
    matrix: np.ndarray
    n: int
    K_n: int
    k: int


@dataclass(frozen=True)
class PredictorCoeffs:
    """Order-k coefficients in the sign convention ``weight on X_{n+1-j} = -a[j-1]``.

    ``v`` (innovation variances ``v_1 .. v_k``) and ``reflection`` are only
    present for theoretical coefficients.
    """

    order: int
    a: np.ndarray
    source: str = "Theoretical"
    v: np.ndarray | None = None
    reflection: np.ndarray | None = None
    residual: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if len(a) != self.order:
            raise ValueError("length of a must equal order")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def weights(self) -> np.ndarray:
        """Predictor weights ``-a`` applied to ``(X_n, ..., X_{n-k+1})``."""
        return -self.a

    @property
    def innovation_variance(self) -> float | None:
        return None if self.v is None else float(self.v[-1])

    def to_rows(self) -> list[tuple[int, float]]:
        return [(j + 1, float(v)) for j, v in enumerate(self.a)]


def theoretical_cov(spec: ProcessSpec, k: int) -> ToeplitzCov:
    if k < 1:
        raise ValueError("k must be >= 1")
    return ToeplitzCov(autocovariance(spec, k - 1))


def _as_values(path) -> np.ndarray:
    return np.asarray(getattr(path, "values", path), dtype=float)


def _check_indices(n: int, k: int, K_n: int) -> None:
    if not (1 <= k <= K_n <= n):
        raise IndexContractError(f"need 1 <= k <= K_n <= n, got k={k}, K_n={K_n}, n={n}")


def lag_vectors(x: np.ndarray, k: int, first: int, last: int) -> np.ndarray:
    """Rows ``X_j(k)'`` for ``j = first .. last`` (1-based, inclusive)."""
    windows = sliding_window_view(x, k)  # windows[i] = x[i : i + k]
    return windows[first - k: last - k + 1, ::-1]


def empirical_cov(path, k: int, K_n: int) -> EmpiricalCov:
    """``(n - K_n + 1)^{-1} sum_{j=K_n}^{n} X_j(k) X_j(k)'``: symmetric, not Toeplitz."""
    x = _as_values(path)
    n = len(x)
    _check_indices(n, k, K_n)
    W = lag_vectors(x, k, K_n, n)
    mat = W.T @ W / (n - K_n + 1)
    mat = 0.5 * (mat + mat.T)
    return EmpiricalCov(mat, n, K_n, k)


def cross_moment(path, k: int, K_n: int) -> np.ndarray:
    """``(n - K_n + 1)^{-1} sum_{j=K_n}^{n-1} X_j(k) X_{j+1}``.

    The sum stops at ``n - 1`` but keeps the divisor of :func:`empirical_cov`.
    """
    x = _as_values(path)
    n = len(x)
    if not (1 <= k <= K_n <= n - 1):
        raise IndexContractError(f"need 1 <= k <= K_n <= n-1, got k={k}, K_n={K_n}, n={n}")
    W = lag_vectors(x, k, K_n, n - 1)
    return W.T @ x[K_n: n] / (n - K_n + 1)


def _durbin(acv: np.ndarray, order: int):
    phi = np.zeros(order)
    v = np.empty(order)
    refl = np.empty(order)
    prev = float(acv[0])
    for m in range(1, order + 1):
        acc = acv[m] - np.dot(phi[: m - 1], acv[m - 1:0:-1]) if m > 1 else acv[1]
        rho = acc / prev
        if not abs(rho) < 1.0:
            raise SingularCovarianceError(f"reflection coefficient {rho} at order {m}")
        if m > 1:
            phi[: m - 1] = phi[: m - 1] - rho * phi[m - 2::-1]
        phi[m - 1] = rho
        prev = prev * (1.0 - rho * rho)
        if not prev > 0:
            raise SingularCovarianceError(f"innovation variance {prev} <= 0 at order {m}")
        v[m - 1] = prev
        refl[m - 1] = rho
    return phi, v, refl


def levinson_solve(cov: ToeplitzCov, order: int | None = None) -> PredictorCoeffs:
    """Levinson-Durbin solution of ``Sigma(k) a = -(sigma(1), ..., sigma(k))'``.

    ``cov`` must hold ``sigma(0) .. sigma(k)``; ``order`` defaults to
    ``len(first_column) - 1``.  Returns all innovation variances
    ``v_1 .. v_k`` (``v_j = v_{j-1} (1 - rho_j^2)``, ``v_0 = sigma(0)``) and
    the reflection coefficients ``rho_j`` (partial autocorrelations).
    """
    acv = cov.first_column
    k = len(acv) - 1 if order is None else order
    if k < 1 or k > len(acv) - 1:
        raise ValueError(f"order {k} needs sigma(0..{k}); have {len(acv)} values")
    phi, v, refl = _durbin(acv, k)
    a = -phi
    rhs = acv[1: k + 1]
    resid = linalg.matmul_toeplitz(acv[:k], a) + rhs
    scale = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(resid))
    if residual > 1e-9 * max(scale, 1e-300) and residual > 1e-12 * acv[0]:
        log.warning("Levinson residual %.3g exceeds 1e-9 relative (order %d)", residual, k)
    return PredictorCoeffs(k, a, "Theoretical", v=v, reflection=refl, residual=residual)


@dataclass(frozen=True)
class DenseSolution:
    x: np.ndarray
    ridge: float


def dense_solve(matrix, rhs) -> DenseSolution:
    """Cholesky solve; a ridge of ``1e-12 trace/k`` is added only if needed."""
    A = np.asarray(matrix, dtype=float)
    b = np.asarray(rhs, dtype=float)
    k = A.shape[0]
    try:
        return DenseSolution(linalg.cho_solve(linalg.cho_factor(A, lower=True), b), 0.0)
    except linalg.LinAlgError:
        pass
    ridge = 1e-12 * float(np.trace(A)) / k
    try:
        c = linalg.cho_factor(A + ridge * np.eye(k), lower=True)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError(f"matrix of order {k} not positive definite") from exc
    return DenseSolution(linalg.cho_solve(c, b), ridge)


def spectral_norm(matrix) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    k = A.shape[0]
    if k <= EIG_DENSE_MAX:
        w = linalg.eigvalsh(A)
        return float(max(abs(w[0]), abs(w[-1])))
    v = np.ones(k) / math.sqrt(k)
    est = 0.0
    for _ in range(100000):
        w = A @ (A @ v)  # iterate on A^2 so +/- eigenvalues do not oscillate
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = math.sqrt(nrm)
        if abs(new - est) <= POWER_TOL * new:
            return new
        est = new
    return est


def extreme_eigs(matrix) -> tuple[float, float]:
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    w = linalg.eigvalsh(A)
    return float(w[0]), float(w[-1])


def matrix_to_csv(matrix, dest) -> None:
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    text = "\n".join(",".join(repr(float(v)) for v in row) for row in A) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w") as fh:
            fh.write(text)
