"""FARIMA(p, d, q) process family and its analytic quantities.

Polynomial conventions follow Box and Jenkins::

    phi(z)   = 1 - phi_1 z - ... - phi_p z^p
    theta(z) = 1 + theta_1 z + ... + theta_q z^q

so a spec ``ProcessSpec(d, ar=(phi_1, ...), ma=(theta_1, ...))`` describes
the stationary solution of ``phi(B) (1 - B)^d X_t = theta(B) eps_t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal, special

from .errors import DomainError, IllConditionedModelError, ParameterRangeError

ROOT_TOL = 1e-9
NEAR_UNIT_ROOT = 1e-6
D_MAX_MARGIN = 1e-6


@dataclass(frozen=True)
class ProcessSpec:
    """A long-memory Gaussian model.

    Construction is deliberately lenient about ``d`` and the polynomial
    roots so that out-of-range specs can still be handed to
    :func:`validate_assumptions`; the numerical operations enforce the
    ranges they need.
    """

    d: float
    sigma_eps: float = 1.0
    ar: tuple[float, ...] = ()
    ma: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "sigma_eps", float(self.sigma_eps))
        object.__setattr__(self, "ar", tuple(float(x) for x in self.ar))
        object.__setattr__(self, "ma", tuple(float(x) for x in self.ma))
        if not (math.isfinite(self.sigma_eps) and self.sigma_eps > 0):
            raise ParameterRangeError(f"sigma_eps must be > 0, got {self.sigma_eps}")
        if not math.isfinite(self.d):
            raise ParameterRangeError(f"d must be finite, got {self.d}")

    @property
    def is_fractional_noise(self) -> bool:
        return not self.ar and not self.ma

    @property
    def short_memory(self) -> bool:
        """True for the d = 0 escape hatch used by white-noise controls."""
        return self.d == 0.0

    @property
    def ar_poly(self) -> tuple[float, ...]:
        return self.ar

    @property
    def ma_poly(self) -> tuple[float, ...]:
        return self.ma

    @property
    def phi_poly(self) -> np.ndarray:
        return np.concatenate(([1.0], -np.asarray(self.ar, dtype=float)))

    @property
    def theta_poly(self) -> np.ndarray:
        return np.concatenate(([1.0], np.asarray(self.ma, dtype=float)))

    def to_dict(self) -> dict:
        return {"d": self.d, "sigma_eps": self.sigma_eps,
                "ar": list(self.ar), "ma": list(self.ma)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ProcessSpec":
        return cls(d=obj["d"], sigma_eps=obj.get("sigma_eps", 1.0),
                   ar=tuple(obj.get("ar", ())), ma=tuple(obj.get("ma", ())))

    @classmethod
    def from_json(cls, text: str) -> "ProcessSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CoeffSeries:
    """Coefficients ``c_0 .. c_J`` of an AR(inf) or MA(inf) representation.

    ``truncation_tail_bound`` bounds ``sum_{j > J} c_j**2``.
    """

    kind: str
    values: np.ndarray
    truncation_tail_bound: float

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""
    margin: float | None = None


@dataclass(frozen=True)
class ValidationReport:
    subject: str
    checks: tuple[Check, ...]
    flags: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "passed": self.passed,
            "flags": list(self.flags),
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail,
                        "margin": c.margin} for c in self.checks],
        }


# ---------------------------------------------------------------------------
# coefficient series


def _poly_roots(poly: np.ndarray) -> np.ndarray:
    # poly is in increasing powers of z
    trimmed = np.trim_zeros(poly, "b")
    if len(trimmed) <= 1:
        return np.empty(0, dtype=complex)
    return np.roots(trimmed[::-1])


def min_root_modulus(poly) -> float:
    roots = _poly_roots(np.asarray(poly, dtype=float))
    return float(np.min(np.abs(roots))) if roots.size else math.inf


def _check_divisor(poly: np.ndarray, name: str) -> None:
    rho = min_root_modulus(poly)
    if rho < 1.0 + NEAR_UNIT_ROOT:
        raise IllConditionedModelError(
            f"{name} polynomial has a root of modulus {rho:.12g} (< 1 + {NEAR_UNIT_ROOT:g})")


def fractional_coefficients(d: float, count: int) -> np.ndarray:
    """Power-series coefficients of ``(1 - z)**d`` up to ``z**count``.

    Uses ``c_{j+1} = c_j (j - d) / (j + 1)``; pass ``-d`` for ``(1 - z)**(-d)``.
    """
    j = np.arange(count, dtype=float)
    ratios = (j - d) / (j + 1.0)
    return np.concatenate(([1.0], np.cumprod(ratios)))


def gamma_ratio_coefficients(d: float, count: int, kind: str = "AR") -> np.ndarray:
    """Fractional-noise coefficients from log-Gamma ratios (cross-check path).

    AR: ``Gamma(j - d) / (Gamma(j + 1) Gamma(-d))``;
    MA: ``Gamma(j + d) / (Gamma(j + 1) Gamma(d))``.
    """
    if d == 0:
        out = np.zeros(count + 1)
        out[0] = 1.0
        return out
    e = -d if kind.upper() == "AR" else d
    j = np.arange(1, count + 1, dtype=float)
    # Gamma(j + e) / (Gamma(j + 1) Gamma(e)); j + e > 0 so only Gamma(e) carries a sign
    logmag = special.gammaln(j + e) - special.gammaln(j + 1) - special.gammaln(e)
    sign = np.sign(special.gamma(e))
    return np.concatenate(([1.0], sign * np.exp(logmag)))


def _fn_tail_bound(d: float, kind: str, last_index: int, last_value: float) -> float:
    """Certified bound on ``sum_{j > J} c_j**2`` for pure fractional noise."""
    J = last_index
    if d == 0 or J < 1:
        return 0.0 if d == 0 else math.inf
    if kind == "AR":
        # |a_j| j^(1+d) is non-increasing for 0 < d < 1/2
        return last_value ** 2 * J / (1.0 + 2.0 * d)
    # b_j j^(1-d) increases to 1/Gamma(d), hence b_j <= j^(d-1)/Gamma(d)
    return J ** (2.0 * d - 1.0) / (special.gamma(d) ** 2 * (1.0 - 2.0 * d))


def _rational_expansion(num: np.ndarray, den: np.ndarray, length: int) -> np.ndarray:
    impulse = np.zeros(length)
    impulse[0] = 1.0
    return signal.lfilter(num, den, impulse)


def _tail_abs_sums(g: np.ndarray, den: np.ndarray) -> np.ndarray:
    """``sum_{i >= m} |g_i|`` for every stored m (index len(g) included),
    plus a geometric estimate of the unstored remainder driven by the
    smallest root of ``den``."""
    rho = min_root_modulus(den)
    remainder = 0.0
    if math.isfinite(rho):
        r = 1.0 / rho
        last = float(np.max(np.abs(g[-min(len(g), 16):])))
        remainder = last * len(den) * r / (1.0 - r)
    suffix = np.cumsum(np.abs(g)[::-1])[::-1]
    return np.append(suffix, 0.0) + remainder


def _series(spec: ProcessSpec, count: int, kind: str) -> CoeffSeries:
    if count < 1:
        raise ValueError("count must be >= 1")
    if kind == "AR":
        frac = fractional_coefficients(spec.d, count)
        num, den = spec.phi_poly, spec.theta_poly
    else:
        frac = fractional_coefficients(-spec.d, count)
        num, den = spec.theta_poly, spec.phi_poly
    _check_divisor(den, "MA (theta)" if kind == "AR" else "AR (phi)")
    if spec.is_fractional_noise:
        tail = _fn_tail_bound(spec.d, kind, count, float(frac[-1]))
        return CoeffSeries(kind, frac, tail)

    values = signal.lfilter(num, den, frac)
    g = _rational_expansion(num, den, 2 * count + 64)
    g_tail = _tail_abs_sums(g, den)
    if spec.d == 0:
        tail = float(np.sum(g[count + 1:] ** 2)) + g_tail[-1] ** 2
        return CoeffSeries(kind, values, tail)
    # envelope bound for c = g * F, F monotone in |.|: split the convolution
    # at j/2, |c_j| <= |g|_1 |F_{j/2}| + sum_{i > j/2} |g_i|
    half = count // 2
    frac_tail = float(np.sum(frac[half:] ** 2)) + _fn_tail_bound(spec.d, kind, count, float(frac[-1]))
    tail = 4.0 * g_tail[0] ** 2 * frac_tail + 4.0 * float(np.sum(g_tail[half:] ** 2))
    return CoeffSeries(kind, values, tail)


def ar_coefficients(spec: ProcessSpec, count: int) -> CoeffSeries:
    """AR(inf) coefficients ``a_0 .. a_count`` of ``phi(z)(1-z)^d / theta(z)``."""
    return _series(spec, count, "AR")


def ma_coefficients(spec: ProcessSpec, count: int) -> CoeffSeries:
    """MA(inf) coefficients ``b_0 .. b_count`` of ``theta(z)(1-z)^(-d) / phi(z)``."""
    return _series(spec, count, "MA")


def abs_tail_sum(spec: ProcessSpec, coeffs: CoeffSeries) -> float:
    """Bound on ``sum_{j > J} |a_j|`` for pure fractional-noise AR coefficients."""
    if spec.d == 0:
        return 0.0
    if not spec.is_fractional_noise or coeffs.kind != "AR":
        raise ValueError("absolute tail bound only available for fractional-noise AR series")
    J = len(coeffs) - 1
    return abs(float(coeffs.values[-1])) * J / spec.d


# ---------------------------------------------------------------------------
# second-order structure


def _require_stationary(spec: ProcessSpec) -> None:
    if not (0.0 <= spec.d < 0.5 - D_MAX_MARGIN):
        raise ParameterRangeError(
            f"d={spec.d} outside [0, 1/2 - {D_MAX_MARGIN:g}); autocovariance not computable")
    for poly, name in ((spec.phi_poly, "AR (phi)"), (spec.theta_poly, "MA (theta)")):
        rho = min_root_modulus(poly)
        if rho < 1.0 + NEAR_UNIT_ROOT:
            raise IllConditionedModelError(
                f"{name} polynomial has a root of modulus {rho:.12g}")


def _fn_autocovariance(d: float, sigma2: float, max_lag: int) -> np.ndarray:
    gamma0 = sigma2 * math.exp(special.gammaln(1 - 2 * d) - 2 * special.gammaln(1 - d))
    k = np.arange(max_lag, dtype=float)
    ratios = (k + d) / (k + 1.0 - d)
    return gamma0 * np.concatenate(([1.0], np.cumprod(ratios)))


@lru_cache(maxsize=64)
def _autocovariance_cached(spec: ProcessSpec, max_lag: int) -> np.ndarray:
    sigma2 = spec.sigma_eps ** 2
    if spec.is_fractional_noise:
        out = _fn_autocovariance(spec.d, sigma2, max_lag)
    else:
        # X = (theta/phi)(B) Y with Y fractional noise: convolve the ARMA
        # autocovariance (exponentially decaying) with the closed-form one.
        L = 64
        while True:
            g = _rational_expansion(spec.theta_poly, spec.phi_poly, L)
            if np.sum(np.abs(g[L // 2:])) <= 1e-15 * np.sum(np.abs(g)) or L > 2 ** 22:
                break
            L *= 2
        gg = np.correlate(g, g, mode="full")  # lags -(L-1)..(L-1)
        fn = _fn_autocovariance(spec.d, sigma2, max_lag + L)
        lags = np.arange(-(L - 1), max_lag + L)
        fn_full = fn[np.abs(lags)]
        # 'valid' output index i corresponds to lag i
        out = signal.convolve(fn_full, gg, mode="valid", method="direct")[: max_lag + 1]
    out = np.asarray(out, dtype=float)
    out.setflags(write=False)
    return out


def autocovariance(spec: ProcessSpec, max_lag: int) -> np.ndarray:
    """Autocovariances ``sigma(0) .. sigma(max_lag)``.

    Fractional noise uses the closed form
    ``sigma(0) = s^2 Gamma(1-2d) / Gamma(1-d)^2`` with the ratio recursion
    ``sigma(k+1) = sigma(k) (k+d) / (k+1-d)``.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    _require_stationary(spec)
    return _autocovariance_cached(spec, int(max_lag))


def spectral_density(spec: ProcessSpec, freqs) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(freqs, dtype=float))
    if np.any(lam == 0.0):
        raise DomainError("spectral density has a pole at frequency 0")
    if np.any(np.abs(lam) > math.pi + 1e-12):
        raise DomainError("frequencies must lie in (-pi, pi]")
    z = np.exp(1j * lam)
    theta = np.polyval(spec.theta_poly[::-1], z)
    phi = np.polyval(spec.phi_poly[::-1], z)
    frac = np.abs(1.0 - z) ** (-2.0 * spec.d)
    f = spec.sigma_eps ** 2 / (2 * math.pi) * np.abs(theta) ** 2 / np.abs(phi) ** 2 * frac
    return f if np.ndim(freqs) else f[0]


def spectral_minimum(spec: ProcessSpec, grid_size: int = 4096) -> float:
    """Minimum of the spectral density on a uniform grid over (0, pi]."""
    lam = np.linspace(math.pi / grid_size, math.pi, grid_size)
    return float(np.min(spectral_density(spec, lam)))


def validate_assumptions(spec: ProcessSpec, decay_range: tuple[int, int] = (256, 4096),
                         slope_tol: float = 0.05) -> ValidationReport:
    checks = []
    flags = []
    d = spec.d
    if d == 0.0:
        flags.append("short-memory escape hatch (d = 0)")
        checks.append(Check("d_range", True, "d = 0 admitted as white-noise escape hatch"))
    else:
        ok = 0.0 < d < 0.5
        checks.append(Check("d_range", ok, f"d = {d} must lie in (0, 1/2)",
                            margin=min(d, 0.5 - d)))

    rho = min(min_root_modulus(spec.phi_poly), min_root_modulus(spec.theta_poly))
    roots_ok = rho > 1.0 + ROOT_TOL
    checks.append(Check("unit_disk_roots", roots_ok,
                        f"minimum root modulus {rho:.12g}", margin=rho - 1.0))

    lam = np.linspace(math.pi / 512, math.pi, 2048)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = spectral_density(spec, lam)
    fmin = float(np.min(f)) if np.all(np.isfinite(f)) else float("nan")
    checks.append(Check("spectral_lower_bound", bool(fmin > 0),
                        f"min f on grid away from 0 = {fmin:.6g}", margin=fmin))

    if d == 0.0:
        checks.append(Check("ar_decay_rate", True, "not applicable for d = 0"))
    elif not roots_ok or min_root_modulus(spec.theta_poly) < 1 + NEAR_UNIT_ROOT:
        checks.append(Check("ar_decay_rate", False, "coefficients not computable"))
    else:
        lo, hi = decay_range
        a = ar_coefficients(spec, hi).values
        j = np.arange(lo, hi + 1)
        mag = np.abs(a[lo:hi + 1])
        keep = mag > 0
        slope = float(np.polyfit(np.log(j[keep]), np.log(mag[keep]), 1)[0])
        target = -d - 1.0
        checks.append(Check("ar_decay_rate", abs(slope - target) <= slope_tol,
                            f"fitted slope {slope:.4f} vs {target:.4f} over j in [{lo}, {hi}]",
                            margin=slope_tol - abs(slope - target)))
    return ValidationReport(f"assumptions {spec.to_json()}", tuple(checks), tuple(flags))
