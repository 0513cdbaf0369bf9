"""Parametric and wild bootstrap resampling with a deterministic
parallel replicate engine, plus the leave-one-cluster-out jackknife.

Replicate k always draws from the counter-based stream (seed, k), and
retry attempts use substreams derived from (seed, k, attempt), so the
estimate matrix is bit-identical for any worker count.  Resamples are
always refitted by plain ML, warm-started at the original fit's
variance parameters, regardless of the original estimator.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass

import numpy as np

from . import robust
from .estimation import FitResult, ParameterSet, ProfiledModel, fit, reported_names
from .numerics import RandomStream, cholesky

__all__ = [
    "BootstrapError",
    "WildPrecomputation",
    "BootstrapRun",
    "JackknifeRun",
    "MAMMEN_LOW",
    "MAMMEN_HIGH",
    "MAMMEN_P_LOW",
    "mammen_draw",
    "wild_precompute",
    "wild_resample",
    "parametric_resample",
    "run_bootstrap",
    "jackknife_run",
]

_SQRT5 = math.sqrt(5.0)
MAMMEN_LOW = -(_SQRT5 - 1.0) / 2.0
MAMMEN_HIGH = (_SQRT5 + 1.0) / 2.0
MAMMEN_P_LOW = (_SQRT5 + 1.0) / (2.0 * _SQRT5)

_MAX_ATTEMPTS = 4  # first draw + 3 retries
_MAX_FAIL_FRACTION = 0.1


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class WildPrecomputation:
    residual_adjusted: tuple[np.ndarray, ...]  # leverage-adjusted residuals per cluster
    leverage_diag: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class BootstrapRun:
    estimates: np.ndarray  # B_ok x K, reported scale
    column_names: tuple[str, ...]
    scheme: str
    requested_B: int
    n_failed: int
    seed: int
    refit_method: str = "ML"

    @property
    def B_ok(self) -> int:
        return self.estimates.shape[0]


@dataclass(frozen=True)
class JackknifeRun:
    estimates: np.ndarray  # n x K
    column_names: tuple[str, ...]

    @property
    def mean_row(self) -> np.ndarray:
        return self.estimates.mean(axis=0)


def mammen_draw(rng: RandomStream) -> float:
    """One draw from the standardized two-point distribution.

    Support {-(sqrt(5)-1)/2, (sqrt(5)+1)/2} with probabilities chosen so
    the mean is 0 and both the variance and third moment are 1.
    """
    return MAMMEN_LOW if rng.generator.random() < MAMMEN_P_LOW else MAMMEN_HIGH


def wild_precompute(data, gamma_hat: np.ndarray) -> WildPrecomputation:
    """Leverage-adjusted residuals (1 - h_j)^(-1/2) * (y_i - X_i gamma_hat).

    Leverages are the diagonal of the hat matrix of the row-stacked
    fixed-effects design, sliced per cluster.
    """
    X = data.stacked_X()
    G = X.T @ X
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("stacked fixed design is rank deficient") from exc
    h_all = np.einsum("ij,jk,ik->i", X, Ginv, X)
    if np.any(h_all >= 1.0 - 1e-10):
        raise ValueError("leverage value at or above 1")
    adjusted = []
    leverages = []
    offset = 0
    for block in data.clusters:
        J = len(block.y)
        h = h_all[offset:offset + J]
        resid = block.y - block.X @ np.asarray(gamma_hat, dtype=float)
        adjusted.append(resid / np.sqrt(1.0 - h))
        leverages.append(h)
        offset += J
    return WildPrecomputation(tuple(adjusted), tuple(leverages))


def wild_resample(data, gamma_hat: np.ndarray, pre: WildPrecomputation,
                  rng: RandomStream) -> list[np.ndarray]:
    """y*_i = X_i gamma_hat + adjusted-residuals_i * w*_i, one Mammen draw per cluster."""
    gamma_hat = np.asarray(gamma_hat, dtype=float)
    out = []
    for block, resid in zip(data.clusters, pre.residual_adjusted):
        w = mammen_draw(rng)
        out.append(block.X @ gamma_hat + resid * w)
    return out


def parametric_resample(data, params: ParameterSet, rng: RandomStream) -> list[np.ndarray]:
    """y*_i = X_i gamma + Z_i b*_i + eps*_i with b* ~ N(0, Sigma), eps* ~ N(0, sigma_e^2 I)."""
    L = cholesky(params.Sigma)
    gen = rng.generator
    q = params.Sigma.shape[0]
    out = []
    for block in data.clusters:
        b = L @ gen.standard_normal(q)
        eps = params.sigma_e * gen.standard_normal(len(block.y))
        out.append(block.X @ params.gamma + block.Z @ b + eps)
    return out


# ---------------------------------------------------------------------------
# Replicate engine
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_replicate_worker(payload):
    data, params, scheme, seed = payload
    _WORKER.clear()
    _WORKER.update(
        data=data,
        params=params,
        scheme=scheme,
        seed=seed,
        pm=ProfiledModel(data),
        pre=wild_precompute(data, params.gamma) if scheme == "wild" else None,
    )


def _one_replicate(k: int):
    data = _WORKER["data"]
    params = _WORKER["params"]
    pm = _WORKER["pm"]
    for attempt in range(_MAX_ATTEMPTS):
        rng = RandomStream(_WORKER["seed"], k, attempt)
        if _WORKER["scheme"] == "wild":
            ystar = wild_resample(data, params.gamma, _WORKER["pre"], rng)
        else:
            ystar = parametric_resample(data, params, rng)
        pm.set_response(ystar)
        try:
            result = fit(data, "ML", start=params, _pm=pm)
        except np.linalg.LinAlgError:
            continue
        if result.converged:
            return k, np.array(list(result.reported().values()))
    return k, None


def _replicate_chunk(ks):
    return [_one_replicate(k) for k in ks]


def _chunks(items, n_chunks):
    size = max(1, math.ceil(len(items) / n_chunks))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _run_tasks(task_fn, init_fn, payload, tasks, threads):
    """Run chunked tasks either inline or on a fork-based process pool."""
    if threads <= 1 or len(tasks) <= 1:
        init_fn(payload)
        return [r for chunk in _chunks(tasks, 1) for r in task_fn(chunk)]
    ctx = multiprocessing.get_context("fork")
    results = []
    with ctx.Pool(threads, initializer=init_fn, initargs=(payload,)) as pool:
        for part in pool.map(task_fn, _chunks(tasks, threads * 4)):
            results.extend(part)
    return results


def run_bootstrap(fit_result: FitResult, data, B: int, scheme: str = "wild",
                  seed: int = 0, threads: int = 1) -> BootstrapRun:
    """B resample-and-refit replicates; rows ordered by replicate index."""
    if scheme not in ("wild", "parametric"):
        raise ValueError(f"unknown bootstrap scheme {scheme!r}")
    if B < 1:
        raise ValueError("B must be at least 1")
    if not fit_result.converged:
        raise BootstrapError("original fit did not converge")

    payload = (data, fit_result.params, scheme, seed)
    results = _run_tasks(_replicate_chunk, _init_replicate_worker, payload,
                         list(range(1, B + 1)), threads)
    results.sort(key=lambda kr: kr[0])
    rows = [row for _, row in results if row is not None]
    n_failed = B - len(rows)
    if n_failed > _MAX_FAIL_FRACTION * B:
        raise BootstrapError(
            f"{n_failed} of {B} bootstrap refits failed after retries "
            f"(limit {_MAX_FAIL_FRACTION:.0%}); the fitted model may be degenerate"
        )
    names = reported_names(data.fixed_names, data.random_names, data.cluster_var)
    estimates = np.array(rows) if rows else np.empty((0, len(names)))
    return BootstrapRun(
        estimates=estimates,
        column_names=names,
        scheme=scheme,
        requested_B=B,
        n_failed=n_failed,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Jackknife
# ---------------------------------------------------------------------------


def _init_jackknife_worker(payload):
    data, method, config = payload
    _WORKER.clear()
    _WORKER.update(data=data, method=method, config=config)


def _jackknife_chunk(indices):
    data = _WORKER["data"]
    method = _WORKER["method"]
    out = []
    for i in indices:
        subset = data.without_cluster(i)
        if method == "ROBUST":
            result = robust.fit_robust(subset, _WORKER["config"])
        else:
            result = fit(subset, method)
        if not result.converged:
            raise BootstrapError(f"jackknife refit without cluster {data.clusters[i].id} failed")
        out.append((i, np.array(list(result.reported().values()))))
    return out


def jackknife_run(data, method: str = "ML", threads: int = 1,
                  robust_config=None) -> JackknifeRun:
    """Leave-one-cluster-out refits using the original fit's estimator."""
    if data.n < 3:
        raise ValueError("jackknife needs at least 3 clusters")
    method = method.upper()
    payload = (data, method, robust_config)
    results = _run_tasks(_jackknife_chunk, _init_jackknife_worker, payload,
                         list(range(data.n)), threads)
    results.sort(key=lambda kr: kr[0])
    names = reported_names(data.fixed_names, data.random_names, data.cluster_var)
    return JackknifeRun(estimates=np.array([row for _, row in results]), column_names=names)
