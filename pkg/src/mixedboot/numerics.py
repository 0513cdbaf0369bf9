"""Minimal numeric kernel.

SPD Cholesky factorization, Gaussian distribution functions, the
empirical quantile rule used for percentile intervals, and the
reproducible random-stream contract that the replicate engine relies
on.  Everything here is pure; RandomStream instances are cheap value
objects and each logical task should derive its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "NotPositiveDefiniteError",
    "RandomStream",
    "cholesky",
    "norm_cdf",
    "norm_quantile",
    "normal_draw",
    "mvnormal_draw",
    "empirical_quantile",
]

_MASK64 = (1 << 64) - 1


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix fails the SPD (or PSD) requirement."""


def cholesky(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular L with L @ L.T == m.

    Accepts positive semi-definite input: a pivot within
    ``tol * max(diagonal)`` of zero is treated as exactly zero and its
    column is zeroed out.  A pivot below that band raises
    :class:`NotPositiveDefiniteError`.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    n = a.shape[0]
    diag = np.diag(a)
    if np.any(diag < 0) and np.min(diag) < -tol * max(np.max(diag, initial=0.0), 1e-300):
        raise NotPositiveDefiniteError("negative diagonal entry")
    thresh = tol * max(np.max(diag, initial=0.0), 0.0)
    L = np.zeros((n, n))
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -thresh:
            raise NotPositiveDefiniteError(
                f"pivot {pivot:.3e} at index {j} below tolerance {-thresh:.3e}"
            )
        if pivot <= thresh:
            # semi-definite direction: zero column
            L[j, j] = 0.0
            continue
        L[j, j] = np.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def norm_cdf(x: float) -> float:
    """Standard normal CDF, absolute error below 1e-9."""
    return float(ndtr(x))


def norm_quantile(p: float) -> float:
    """Standard normal quantile; p in {0, 1} maps to -inf/+inf."""
    if p < 0.0 or p > 1.0:
        raise ValueError(f"probability out of range: {p}")
    if p == 0.0:
        return -np.inf
    if p == 1.0:
        return np.inf
    return float(ndtri(p))


@dataclass(frozen=True)
class RandomStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Built on the Philox generator, so streams with distinct
    ``stream_id`` are statistically independent and replicate k can use
    stream k regardless of execution order or thread count.
    ``substream`` offsets the counter block and is used for retry
    draws derived from the same logical replicate.
    """

    seed: int
    stream_id: int = 0
    substream: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        key = (self.seed & _MASK64) | ((self.stream_id & _MASK64) << 64)
        counter = (self.substream & _MASK64) << 192
        bitgen = np.random.Philox(counter=counter, key=key)
        object.__setattr__(self, "_gen", np.random.Generator(bitgen))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, substream: int) -> "RandomStream":
        """Stream for a derived attempt on the same (seed, stream_id)."""
        return RandomStream(self.seed, self.stream_id, substream)


def normal_draw(rng: RandomStream, mean: float = 0.0, sd: float = 1.0) -> float:
    """One N(mean, sd^2) draw; sd == 0 returns mean without consuming entropy."""
    if sd < 0:
        raise ValueError("sd must be nonnegative")
    if sd == 0.0:
        return float(mean)
    return float(mean + sd * rng.generator.standard_normal())


def mvnormal_draw(rng: RandomStream, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """One multivariate normal draw via the Cholesky transform."""
    mean = np.asarray(mean, dtype=float)
    L = cholesky(cov)
    z = rng.generator.standard_normal(mean.shape[0])
    return mean + L @ z


def empirical_quantile(samples: np.ndarray, p: float) -> float:
    """Linear-interpolation order-statistic quantile.

    Uses the 1-based index h = (B - 1) * p + 1 on the sorted sample and
    interpolates between the bracketing order statistics.
    """
    s = np.sort(np.asarray(samples, dtype=float))
    if s.size == 0:
        raise ValueError("empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    h = (s.size - 1) * p
    lo = int(np.floor(h))
    hi = min(lo + 1, s.size - 1)
    frac = h - lo
    return float(s[lo] + frac * (s[hi] - s[lo]))
