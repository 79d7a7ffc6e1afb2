"""Exact sampling of stationary Gaussian paths with reproducible seeding.

Seeding scheme (portable across implementations):

* replicate ``r`` of a batch with master seed ``s`` uses
  ``split(s, r) = splitmix64(s + (r + 1) * 0x9E3779B97F4A7C15)`` where
  ``splitmix64`` is the finalizer with multipliers ``0xBF58476D1CE4E5B9``
  and ``0x94D049BB133111EB`` (shifts 30, 27, 31);
* a 64-bit seed keys a Philox4x64 counter-based stream; each raw 64-bit
  draw ``u`` maps to ``(u >> 11 + 0.5) * 2**-53`` in (0, 1) and then to a
  standard normal by the inverse CDF.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import linalg, signal, special

from .errors import LmpredError, SimulationInfeasibleError
from .model import ProcessSpec, autocovariance, ma_coefficients

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

NEG_EIG_TOL = 1e-9
MAX_EMBED_FACTOR = 2 ** 16
BINARY_MAGIC = b"LMPRED01"

CIRCULANT = "CirculantEmbedding"
CHOLESKY = "Cholesky"
MA_FILTER = "MAFilter"


def splitmix64(x: int) -> int:
    z = x & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def split(master_seed: int, index: int) -> int:
    """Seed of replicate ``index`` derived from ``master_seed``."""
    return splitmix64((master_seed & MASK64) + (index + 1) * GOLDEN)


def standard_normals(seed: int, count: int) -> np.ndarray:
    """``count`` N(0, 1) variates from the Philox stream keyed by ``seed``."""
    bits = np.random.Philox(key=seed & MASK64)
    raw = bits.random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return special.ndtri(u)


@dataclass(frozen=True)
class SamplePath:
    values: np.ndarray
    spec: ProcessSpec
    seed: int
    method: str
    # only populated by the innovations-visible sampler: eps_{1-M} .. eps_n
    innovations: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) < 1:
            raise ValueError("a sample path needs at least one value")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    @property
    def n(self) -> int:
        return len(self.values)

    def innovation(self, t: int) -> float:
        """Innovation at 1-based time ``t``."""
        if self.innovations is None:
            raise LmpredError("this path does not expose its innovations")
        offset = len(self.innovations) - self.n
        return float(self.innovations[offset + t - 1])


# ---------------------------------------------------------------------------
# circulant embedding


@dataclass(frozen=True)
class _Plan:
    method: str
    m: int  # embedding size (circulant) or n (Cholesky)
    factor: np.ndarray  # sqrt(lambda / m) or lower Cholesky factor


@lru_cache(maxsize=32)
def _plan(spec: ProcessSpec, n: int) -> _Plan:
    if n == 1:
        gamma0 = autocovariance(spec, 0)[0]
        return _Plan(CHOLESKY, 1, np.array([[math.sqrt(gamma0)]]))
    m = 2 * (n - 1)
    while m <= MAX_EMBED_FACTOR * n:
        half = m // 2
        acv = autocovariance(spec, half)
        row = np.concatenate((acv, acv[-2:0:-1]))
        lam = np.fft.fft(row).real
        top = float(np.max(lam))
        low = float(np.min(lam))
        if low >= -NEG_EIG_TOL * top:
            if low < 0:
                log.warning("clamping %d circulant eigenvalues in [%.3g, 0) to zero",
                            int(np.sum(lam < 0)), low)
                lam = np.maximum(lam, 0.0)
            return _Plan(CIRCULANT, m, np.sqrt(lam / m))
        m *= 2
    return _cholesky_plan(spec, n)


def _cholesky_plan(spec: ProcessSpec, n: int) -> _Plan:
    acv = autocovariance(spec, n - 1)
    cov = linalg.toeplitz(acv)
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        ridge = 1e-12 * acv[0]
        try:
            chol = linalg.cholesky(cov + ridge * np.eye(n), lower=True)
        except linalg.LinAlgError as exc:
            raise SimulationInfeasibleError(
                f"covariance of size {n} is not positive definite") from exc
    return _Plan(CHOLESKY, n, chol)


def _draw(plan: _Plan, n: int, seeds) -> np.ndarray:
    rows = len(seeds)
    if plan.method == CIRCULANT:
        m = plan.m
        z = np.empty((rows, m), dtype=complex)
        for i, s in enumerate(seeds):
            g = standard_normals(s, 2 * m)
            z[i].real = g[:m]
            z[i].imag = g[m:]
        y = np.fft.fft(z * plan.factor, axis=1)
        return np.ascontiguousarray(y.real[:, :n])
    g = np.stack([standard_normals(s, n) for s in seeds])
    return g @ plan.factor.T


def sample_block(spec: ProcessSpec, n: int, seeds, method: str | None = None) -> np.ndarray:
    """Paths for each seed as rows of an array; identical to :func:`sample` row by row."""
    if n < 1:
        raise ValueError("n must be >= 1")
    plan = _cholesky_plan(spec, n) if method == CHOLESKY and n > 1 else _plan(spec, n)
    if method == CIRCULANT and plan.method != CIRCULANT:
        raise SimulationInfeasibleError("circulant embedding is not nonnegative definite")
    out = np.empty((len(seeds), n))
    # fixed row-at-a-time transforms keep results independent of block size
    for i, s in enumerate(seeds):
        out[i] = _draw(plan, n, [s])[0]
    return out


def sample(spec: ProcessSpec, n: int, seed: int, method: str | None = None) -> SamplePath:
    """Exact draw of ``(X_1, ..., X_n)`` from ``N(0, Sigma(n))``.

    Circulant embedding is the default; dense Cholesky is used when no
    embedding up to ``2**16 n`` is nonnegative definite, or on request.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    plan = _cholesky_plan(spec, n) if method == CHOLESKY and n > 1 else _plan(spec, n)
    if method == CIRCULANT and plan.method != CIRCULANT:
        raise SimulationInfeasibleError("circulant embedding is not nonnegative definite")
    values = _draw(plan, n, [seed])[0]
    return SamplePath(values, spec, seed & MASK64, plan.method)


def sample_batch(spec: ProcessSpec, n: int, replicates: int, master_seed: int,
                 workers: int = 1) -> Iterator[SamplePath]:
    """Replicate paths in index order; the set is the same for any ``workers``."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    seeds = [split(master_seed, r) for r in range(replicates)]

    def one(r):
        try:
            return sample(spec, n, seeds[r])
        except LmpredError as exc:
            raise type(exc)(f"replicate {r}: {exc}") from exc

    if workers <= 1:
        for r in range(replicates):
            yield one(r)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(one, range(replicates))


def sample_with_innovations(spec: ProcessSpec, n: int, seed: int,
                            memory: int = 2 ** 15) -> SamplePath:
    """Approximate path from MA(inf) filtering with stored innovations.

    ``X_t = sum_{j=0}^{memory} b_j eps_{t-j}``.  Only meant for checking the
    error decomposition; the omitted MA tail has variance at most
    ``sigma_eps**2 * ma_coefficients(spec, memory).truncation_tail_bound``.
    """
    b = ma_coefficients(spec, memory).values
    eps = spec.sigma_eps * standard_normals(seed, n + memory)
    x = signal.fftconvolve(eps, b, mode="full")[memory: memory + n]
    return SamplePath(x, spec, seed & MASK64, MA_FILTER, innovations=eps)


# ---------------------------------------------------------------------------
# file formats


def write_csv(path_obj: SamplePath, dest) -> None:
    lines = [f"# spec={path_obj.spec.to_json()}", f"# seed={path_obj.seed}",
             f"# method={path_obj.method}", f"# n={path_obj.n}", "x"]
    lines += [repr(float(v)) for v in path_obj.values]
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)


def read_csv(source) -> SamplePath:
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    meta, values = {}, []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        elif line == "x":
            continue
        else:
            values.append(float(line))
    spec = ProcessSpec.from_json(meta["spec"]) if "spec" in meta else ProcessSpec(0.0)
    return SamplePath(np.array(values), spec, int(meta.get("seed", 0)),
                      meta.get("method", CIRCULANT))


def write_binary(values, dest) -> None:
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    Path(dest).write_bytes(BINARY_MAGIC + struct.pack("<Q", len(arr)) + arr.tobytes())


def read_binary(source) -> np.ndarray:
    raw = Path(source).read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise ValueError("not an LMPRED01 file")
    (n,) = struct.unpack("<Q", raw[8:16])
    arr = np.frombuffer(raw[16:], dtype="<f8")
    if len(arr) != n:
        raise ValueError(f"header says {n} values, found {len(arr)}")
    return arr.copy()


def spec_header(path_obj: SamplePath) -> str:
    return json.dumps({"spec": path_obj.spec.to_dict(), "seed": path_obj.seed,
                       "method": path_obj.method})
