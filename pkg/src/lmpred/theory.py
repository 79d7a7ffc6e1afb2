"""Exact theoretical quantities the Monte Carlo experiments are compared with."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import IndexContractError, ParameterRangeError
from .model import Check, ProcessSpec, ValidationReport, ar_coefficients, autocovariance
from .predict import theoretical_coefficients

log = logging.getLogger(__name__)

CRITICAL_TOL = 1e-9
NEAR_CRITICAL = 0.02

SUB, CRITICAL, SUPER = "Sub", "Critical", "Super"


@dataclass(frozen=True)
class RateRegime:
    regime: str
    predicted_log_slope: float
    log_corrected: bool = False


def projection_error_variance(spec: ProcessSpec, k: int) -> float:
    """``E[S_n(k)^2] = v_k - sigma_eps^2`` from the Levinson innovation variance."""
    v_k = theoretical_coefficients(spec, k).innovation_variance
    return max(v_k - spec.sigma_eps ** 2, 0.0)


def projection_error_variance_quadratic(spec: ProcessSpec, k: int,
                                        J: int | None = None) -> tuple[float, float]:
    """Second route to ``E[S(k)^2]``: the quadratic form ``(a - a_k)' Sigma(J) (a - a_k)``.

    Returns ``(value, bound)`` where ``bound`` controls the error from
    dropping ``a_j`` for ``j > J``.  With ``U`` the retained part and ``T`` the
    dropped part, ``|Var(U+T) - Var(U)| <= 2 sqrt(Var U Var T) + Var T``.
    ``Var T`` is bounded by a rearrangement argument for fractional noise;
    no bound is available (``inf``) for general FARIMA.
    """
    if J is None:
        J = max(2 ** 14, 32 * k)
    if J < k:
        raise ValueError("J must be >= k")
    a_k = theoretical_coefficients(spec, k).a
    if spec.d == 0 and spec.is_fractional_noise:
        return float(np.dot(a_k, a_k)) * spec.sigma_eps ** 2, 0.0
    a = ar_coefficients(spec, J).values
    u = np.array(a[1:J + 1])
    u[:k] -= a_k
    acv = autocovariance(spec, J - 1)
    q = float(np.dot(u, linalg.matmul_toeplitz(acv, u)))
    var_tail = _tail_variance_bound(spec, J)
    return q, 2.0 * math.sqrt(max(q, 0.0) * var_tail) + var_tail


def _tail_variance_bound(spec: ProcessSpec, J: int) -> float:
    """Bound on ``Var(sum_{i>J} a_i X_{t-i})`` for fractional noise."""
    if not spec.is_fractional_noise:
        return math.inf
    d = spec.d
    M = 64 * J
    a = np.abs(ar_coefficients(spec, J + M + 1).values)
    A = a[J + 1: J + M + 1]  # decreasing
    abs_tail = float(np.sum(A)) + a[-1] * (J + M + 1) / d
    acv = autocovariance(spec, M // 2 + 1)
    m = np.arange(M)
    sig_star = acv[(m + 1) // 2]  # sigma(0), sigma(1), sigma(1), sigma(2), ...
    best = float(np.dot(A, sig_star)) + acv[M // 2] * a[-1] * (J + M + 1) / d
    return abs_tail * best


def l_n(spec: ProcessSpec, n: int, K_n: int, k: int) -> float:
    """``L_n(k) = E[S_n(k)^2] + k sigma_eps^2 / (n - K_n + 1)``."""
    if not (1 <= k <= K_n <= n):
        raise IndexContractError(f"need 1 <= k <= K_n <= n, got k={k}, K_n={K_n}, n={n}")
    return projection_error_variance(spec, k) + k * spec.sigma_eps ** 2 / (n - K_n + 1)


def l_n_sweep(spec: ProcessSpec, n: int, K_n: int) -> tuple[np.ndarray, int]:
    """``L_n(k)`` for ``k = 1..K_n`` and the minimising order."""
    vals = np.array([l_n(spec, n, K_n, k) for k in range(1, K_n + 1)])
    return vals, int(np.argmin(vals)) + 1


def rate_regime(spec: ProcessSpec) -> RateRegime:
    d = spec.d
    if not 0.0 < d < 0.5:
        raise ParameterRangeError(f"rate regimes need 0 < d < 1/2, got {d}")
    if abs(d - 0.25) <= CRITICAL_TOL:
        return RateRegime(CRITICAL, -0.5, log_corrected=True)
    if abs(d - 0.25) < NEAR_CRITICAL:
        log.warning("d=%g is close to 1/4; fitted rates will show crossover behaviour", d)
    if d < 0.25:
        return RateRegime(SUB, -0.5)
    return RateRegime(SUPER, 2.0 * d - 1.0)


def h_rate(spec: ProcessSpec, n: int, K_n: int) -> float:
    """Rate function ``h(n)`` with the slowly varying factor set to one."""
    N = n - K_n + 1
    regime = rate_regime(spec).regime
    if regime == SUB:
        return K_n ** 2 / N
    if regime == SUPER:
        return K_n ** 2 / N ** (2.0 - 4.0 * spec.d)
    return K_n ** 2 * math.log(N) / N


def validate_schedule(spec: ProcessSpec, n: int, K_n: int, theorem: str,
                      c: float = 1.0, delta0: float = 0.05) -> ValidationReport:
    """Finite-n surrogates of the growth conditions on ``K_n``.

    T2: ``K_n^4 <= c n^(1-2d-delta0)``.
    T3: ``K_n^4 <= c n`` and ``K_n^(1+2d) <= c n^(1-2d-delta0)``.
    Margins are ``log(rhs / lhs)`` (positive means satisfied).
    """
    d = spec.d
    theorem = theorem.upper()
    checks = []

    def add(name, lhs, rhs, text):
        checks.append(Check(name, lhs <= rhs, f"{text}: {lhs:.6g} <= {rhs:.6g}",
                            margin=math.log(rhs / lhs)))

    if theorem == "T2":
        add("K4_vs_n_pow", K_n ** 4, c * n ** (1 - 2 * d - delta0), "K_n^4 vs c n^(1-2d-delta0)")
    elif theorem == "T3":
        add("K4_vs_n", K_n ** 4, c * n, "K_n^4 vs c n")
        add("K_pow_vs_n_pow", K_n ** (1 + 2 * d), c * n ** (1 - 2 * d - delta0),
            "K_n^(1+2d) vs c n^(1-2d-delta0)")
    else:
        raise ValueError(f"unknown theorem {theorem!r}; use T2 or T3")
    return ValidationReport(f"schedule {theorem} d={d} n={n} K_n={K_n}", tuple(checks))


def max_schedule(spec: ProcessSpec, n: int, theorem: str = "T2",
                 c: float = 1.0, delta0: float = 0.05) -> int:
    """Largest ``K_n >= 1`` passing :func:`validate_schedule` (1 if none does)."""
    K = 1
    while validate_schedule(spec, n, K + 1, theorem, c, delta0).passed:
        K += 1
    return K


def sigma_inv_s_bound(spec: ProcessSpec, K_n: int, delta: float, reference: int = 1) -> float:
    """``C K_n^(2d+1+delta)`` bounding ``1 / E[S^2(K_n)]``.

    ``C`` is calibrated so the bound is tight at order ``reference``; it is
    a design aid, not ground truth.  Returns ``nan`` for the white-noise
    escape hatch, where ``E[S^2] = 0`` and the bound is meaningless.
    """
    if spec.d == 0:
        log.warning("sigma_inv_s_bound is inapplicable for d = 0 (E[S^2] = 0)")
        return math.nan
    expo = 2 * spec.d + 1 + delta
    C = 1.0 / (projection_error_variance(spec, reference) * reference ** expo)
    return C * K_n ** expo
