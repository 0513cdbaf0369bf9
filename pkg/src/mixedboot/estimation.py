"""Maximum-likelihood and REML fitting of the linear mixed model.

The model for cluster i is  y_i = X_i gamma + Z_i b_i + eps_i  with
b_i ~ N(0, Sigma) and eps_i ~ N(0, sigma_e^2 I).  Fitting profiles the
fixed effects (generalized least squares) and the residual variance
out of the likelihood and runs Nelder-Mead over the free Cholesky
entries of C, where Sigma = sigma_e^2 * C C^T.  All per-cluster
quantities are reduced to fixed-size cross-products once, so a single
deviance evaluation costs O(n * q^2 * p) regardless of cluster sizes;
this is what makes the bootstrap engine affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import numerics

__all__ = [
    "ParameterSet",
    "FitResult",
    "ConvergenceError",
    "marginal_covariance",
    "log_likelihood",
    "gls_fixed_effects",
    "fit",
    "to_reported",
    "reported_names",
]

_LOG2PI = np.log(2.0 * np.pi)


class ConvergenceError(RuntimeError):
    """Raised when an estimator cannot produce a usable result."""


@dataclass(frozen=True)
class ParameterSet:
    """Fixed effects, random-effects covariance, residual SD."""

    gamma: np.ndarray
    Sigma: np.ndarray
    sigma_e: float

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "Sigma", np.asarray(self.Sigma, dtype=float))
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be nonnegative")

    @property
    def sigma_e2(self) -> float:
        return self.sigma_e ** 2


@dataclass
class FitResult:
    params: ParameterSet
    se_gamma: np.ndarray
    loglik: float
    deviance: float
    method: str  # "ML", "REML" or "ROBUST"
    converged: bool
    n_iter: int
    fixed_names: tuple[str, ...]
    random_names: tuple[str, ...]
    cluster_var: str
    boundary: bool = False
    reml_criterion: float | None = None
    weights: np.ndarray | None = None

    def reported(self) -> dict[str, float]:
        return to_reported(self.params, self.fixed_names, self.random_names, self.cluster_var)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "converged": self.converged,
            "boundary": self.boundary,
            "n_iter": self.n_iter,
            "loglik": self.loglik,
            "deviance": self.deviance,
            "gamma": {n: float(g) for n, g in zip(self.fixed_names, self.params.gamma)},
            "se_gamma": {n: float(s) for n, s in zip(self.fixed_names, self.se_gamma)},
            "Sigma": [[float(v) for v in row] for row in self.params.Sigma],
            "sigma_e": float(self.params.sigma_e),
            "reported": self.reported(),
        }
        if self.reml_criterion is not None:
            out["reml_criterion"] = self.reml_criterion
        if self.weights is not None:
            out["weights"] = [float(w) for w in self.weights]
        return out


def marginal_covariance(block, params: ParameterSet) -> np.ndarray:
    """V_i = Z_i Sigma Z_i^T + sigma_e^2 I for one cluster."""
    Z = block.Z
    if Z.shape[1] != params.Sigma.shape[0]:
        raise ValueError("random-design and Sigma dimensions disagree")
    V = Z @ params.Sigma @ Z.T + params.sigma_e2 * np.eye(Z.shape[0])
    return 0.5 * (V + V.T)


def log_likelihood(params: ParameterSet, data, restricted: bool = False) -> float:
    """Gaussian log-likelihood; REML adds the fixed-effects correction term."""
    total = 0.0
    info = np.zeros((data.p, data.p))
    for block in data.clusters:
        V = marginal_covariance(block, params)
        L = numerics.cholesky(V)
        if np.any(np.diag(L) <= 0):
            raise np.linalg.LinAlgError("singular marginal covariance")
        r = block.y - block.X @ params.gamma
        u = np.linalg.solve(L, r)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        total += -0.5 * (len(r) * _LOG2PI + logdet + u @ u)
        if restricted:
            W = np.linalg.solve(L, block.X)
            info += W.T @ W
    if restricted:
        sign, logdet_info = np.linalg.slogdet(info)
        if sign <= 0:
            raise np.linalg.LinAlgError("rank-deficient fixed-effects design")
        total += -0.5 * logdet_info + 0.5 * data.p * _LOG2PI
    return float(total)


def gls_fixed_effects(data, params: ParameterSet) -> tuple[np.ndarray, np.ndarray]:
    """Generalized least squares for gamma given the variance parameters.

    Returns (gamma_hat, cov_gamma) with cov_gamma = (sum_i X_i^T V_i^-1 X_i)^-1.
    """
    G = np.zeros((data.p, data.p))
    h = np.zeros(data.p)
    for block in data.clusters:
        V = marginal_covariance(block, params)
        L = numerics.cholesky(V)
        if np.any(np.diag(L) <= 0):
            raise np.linalg.LinAlgError("singular marginal covariance")
        Xw = np.linalg.solve(L, block.X)
        yw = np.linalg.solve(L, block.y)
        G += Xw.T @ Xw
        h += Xw.T @ yw
    sign, _ = np.linalg.slogdet(G)
    if sign <= 0:
        raise np.linalg.LinAlgError("rank-deficient fixed-effects design")
    cov = np.linalg.inv(G)
    return cov @ h, cov


def to_reported(
    params: ParameterSet,
    fixed_names: tuple[str, ...],
    random_names: tuple[str, ...],
    cluster_var: str,
) -> dict[str, float]:
    """Estimates on the printed scale: fixed effects, SDs, correlations, residual SD."""
    out: dict[str, float] = {}
    for name, value in zip(fixed_names, params.gamma):
        out[name] = float(value)
    sds = np.sqrt(np.clip(np.diag(params.Sigma), 0.0, None))
    for name, sd in zip(random_names, sds):
        out[f"Sigma {cluster_var} {name}"] = float(sd)
    q = len(random_names)
    for i in range(q):
        for j in range(i + 1, q):
            denom = sds[i] * sds[j]
            corr = params.Sigma[i, j] / denom if denom > 0 else 0.0
            out[f"Sigma {cluster_var} {random_names[i]} {random_names[j]}"] = float(corr)
    out["Sigma Residual"] = float(params.sigma_e)
    return out


def reported_names(
    fixed_names: tuple[str, ...], random_names: tuple[str, ...], cluster_var: str
) -> tuple[str, ...]:
    names = list(fixed_names)
    names += [f"Sigma {cluster_var} {n}" for n in random_names]
    q = len(random_names)
    for i in range(q):
        for j in range(i + 1, q):
            names.append(f"Sigma {cluster_var} {random_names[i]} {random_names[j]}")
    names.append("Sigma Residual")
    return tuple(names)


# ---------------------------------------------------------------------------
# Profiled-deviance machinery
# ---------------------------------------------------------------------------


@dataclass
class _Eval:
    """Everything the optimizer and its callers need at one theta point."""

    criterion: float
    gamma: np.ndarray
    sigma2: float
    G: np.ndarray  # sum_i w_i X_i^T W_i^-1 X_i (on the W = V / sigma2 scale)
    logdetW: np.ndarray  # per cluster
    quad: np.ndarray  # per cluster r^T W^-1 r at gamma
    Q: float


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _numba = None


if _numba is not None:

    @_numba.njit(cache=True, fastmath=False)
    def _criterion_jit(C, ZtZ, ZtX, Zty, XtX, Xty, yty, J, weights, use_w,
                       restricted, N):  # pragma: no cover - exercised via parity test
        n, q, p = ZtX.shape
        G = np.zeros((p, p))
        h = np.zeros(p)
        c = 0.0
        logdet_sum = 0.0
        dof_w = 0.0
        M = np.empty((q, q))
        L = np.empty((q, q))
        Uraw = np.empty((q, p))
        Usol = np.empty((q, p))
        vraw = np.empty(q)
        vsol = np.empty(q)
        for i in range(n):
            for a in range(q):
                for b in range(q):
                    acc = 0.0
                    for r in range(q):
                        for s in range(q):
                            acc += C[r, a] * ZtZ[i, r, s] * C[s, b]
                    M[a, b] = acc
                M[a, a] += 1.0
            # Cholesky of M (always I + PSD when C is finite)
            logdet = 0.0
            ok = True
            for a in range(q):
                acc = M[a, a]
                for r in range(a):
                    acc -= L[a, r] * L[a, r]
                if acc <= 0.0 or not np.isfinite(acc):
                    ok = False
                    break
                L[a, a] = np.sqrt(acc)
                logdet += 2.0 * np.log(L[a, a])
                for b in range(a + 1, q):
                    acc = M[b, a]
                    for r in range(a):
                        acc -= L[b, r] * L[a, r]
                    L[b, a] = acc / L[a, a]
            if not ok:
                return 1e300
            for a in range(q):
                acc = 0.0
                for r in range(q):
                    acc += C[r, a] * Zty[i, r]
                vraw[a] = acc
                vsol[a] = acc
                for b in range(p):
                    acc = 0.0
                    for r in range(q):
                        acc += C[r, a] * ZtX[i, r, b]
                    Uraw[a, b] = acc
                    Usol[a, b] = acc
            # forward/backward solves: M x = Uraw and M x = vraw
            for b in range(p):
                for a in range(q):
                    acc = Usol[a, b]
                    for r in range(a):
                        acc -= L[a, r] * Usol[r, b]
                    Usol[a, b] = acc / L[a, a]
                for a in range(q - 1, -1, -1):
                    acc = Usol[a, b]
                    for r in range(a + 1, q):
                        acc -= L[r, a] * Usol[r, b]
                    Usol[a, b] = acc / L[a, a]
            for a in range(q):
                acc = vsol[a]
                for r in range(a):
                    acc -= L[a, r] * vsol[r]
                vsol[a] = acc / L[a, a]
            for a in range(q - 1, -1, -1):
                acc = vsol[a]
                for r in range(a + 1, q):
                    acc -= L[r, a] * vsol[r]
                vsol[a] = acc / L[a, a]

            w = weights[i] if use_w else 1.0
            uy = 0.0
            for a in range(q):
                uy += vraw[a] * vsol[a]
            c += w * (yty[i] - uy)
            for b in range(p):
                corr = 0.0
                for a in range(q):
                    corr += Uraw[a, b] * vsol[a]
                h[b] += w * (Xty[i, b] - corr)
            for a in range(p):
                for b in range(p):
                    corr = 0.0
                    for r in range(q):
                        corr += Uraw[r, a] * Usol[r, b]
                    G[a, b] += w * (XtX[i, a, b] - corr)
            logdet_sum += w * logdet
            dof_w += w * J[i]

        # gamma = G^-1 h via a scalar Cholesky; singular G -> sentinel
        Lg = np.empty((p, p))
        logdetG = 0.0
        for a in range(p):
            acc = G[a, a]
            for r in range(a):
                acc -= Lg[a, r] * Lg[a, r]
            if acc <= 0.0 or not np.isfinite(acc):
                return 1e300
            Lg[a, a] = np.sqrt(acc)
            logdetG += 2.0 * np.log(Lg[a, a])
            for b in range(a + 1, p):
                acc = G[b, a]
                for r in range(a):
                    acc -= Lg[b, r] * Lg[a, r]
                Lg[b, a] = acc / Lg[a, a]
        gamma = np.empty(p)
        for a in range(p):
            acc = h[a]
            for r in range(a):
                acc -= Lg[a, r] * gamma[r]
            gamma[a] = acc / Lg[a, a]
        for a in range(p - 1, -1, -1):
            acc = gamma[a]
            for r in range(a + 1, p):
                acc -= Lg[r, a] * gamma[r]
            gamma[a] = acc / Lg[a, a]

        Q = c
        for a in range(p):
            Q -= gamma[a] * h[a]
        if Q < 0.0:
            Q = 0.0
        if restricted:
            dof = N - p
        else:
            dof = N if not use_w else dof_w
        s2 = Q / dof
        if s2 < 1e-300:
            s2 = 1e-300
        crit = dof * (np.log(2.0 * np.pi) + np.log(s2) + 1.0) + logdet_sum
        if restricted:
            crit += logdetG
        return crit

    @_numba.njit(cache=True, fastmath=False)
    def _neldermead_jit(x0, il, jl, q, ZtZ, ZtX, Zty, XtX, Xty, yty, J,
                        weights, use_w, restricted, N,
                        maxiter, maxfev, xatol, fatol):  # pragma: no cover
        """Nelder-Mead on the packed factor entries, driving _criterion_jit.

        Same initial simplex and update rules as the reference simplex
        method; returns (x_best, f_best, nfev, converged_flag).
        """
        m = x0.shape[0]
        C = np.zeros((q, q))

        def fobj(x):
            for t in range(m):
                C[il[t], jl[t]] = x[t]
            return _criterion_jit(C, ZtZ, ZtX, Zty, XtX, Xty, yty, J,
                                  weights, use_w, restricted, N)

        sim = np.empty((m + 1, m))
        fsim = np.empty(m + 1)
        sim[0] = x0
        fsim[0] = fobj(x0)
        nfev = 1
        for k in range(m):
            y = x0.copy()
            if y[k] != 0.0:
                y[k] *= 1.05
            else:
                y[k] = 0.00025
            sim[k + 1] = y
            fsim[k + 1] = fobj(y)
            nfev += 1
        order = np.argsort(fsim)
        sim = sim[order]
        fsim = fsim[order]

        rho, chi, psi, sigma = 1.0, 2.0, 0.5, 0.5
        iterations = 1
        converged = False
        while nfev < maxfev and iterations < maxiter:
            xspan = 0.0
            fspan = 0.0
            for j in range(1, m + 1):
                fspan = max(fspan, abs(fsim[j] - fsim[0]))
                for t in range(m):
                    xspan = max(xspan, abs(sim[j, t] - sim[0, t]))
            if xspan <= xatol and fspan <= fatol:
                converged = True
                break

            xbar = np.zeros(m)
            for j in range(m):
                for t in range(m):
                    xbar[t] += sim[j, t]
            xbar /= m
            xr = (1.0 + rho) * xbar - rho * sim[m]
            fxr = fobj(xr)
            nfev += 1
            doshrink = False
            if fxr < fsim[0]:
                xe = (1.0 + rho * chi) * xbar - rho * chi * sim[m]
                fxe = fobj(xe)
                nfev += 1
                if fxe < fxr:
                    sim[m] = xe
                    fsim[m] = fxe
                else:
                    sim[m] = xr
                    fsim[m] = fxr
            elif fxr < fsim[m - 1]:
                sim[m] = xr
                fsim[m] = fxr
            else:
                if fxr < fsim[m]:
                    xc = (1.0 + psi * rho) * xbar - psi * rho * sim[m]
                    fxc = fobj(xc)
                    nfev += 1
                    if fxc <= fxr:
                        sim[m] = xc
                        fsim[m] = fxc
                    else:
                        doshrink = True
                else:
                    xcc = (1.0 - psi) * xbar + psi * sim[m]
                    fxcc = fobj(xcc)
                    nfev += 1
                    if fxcc < fsim[m]:
                        sim[m] = xcc
                        fsim[m] = fxcc
                    else:
                        doshrink = True
                if doshrink:
                    for j in range(1, m + 1):
                        sim[j] = sim[0] + sigma * (sim[j] - sim[0])
                        fsim[j] = fobj(sim[j])
                        nfev += 1
            order = np.argsort(fsim)
            sim = sim[order]
            fsim = fsim[order]
            iterations += 1

        return sim[0], fsim[0], nfev, converged


def _batched_inverse(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(log det, inverse) of a stack of small SPD matrices.

    q <= 2 uses closed forms; these matrices are I + PSD, so the
    determinant is >= 1 and no pivoting is needed.
    """
    q = M.shape[-1]
    if q == 1:
        det = M[:, 0, 0]
        if not np.all(det > 0):
            raise np.linalg.LinAlgError("non-positive-definite scaled covariance")
        return np.log(det), (1.0 / det)[:, None, None]
    if q == 2:
        a, b, d = M[:, 0, 0], M[:, 0, 1], M[:, 1, 1]
        det = a * d - b * b
        if not np.all(det > 0):
            raise np.linalg.LinAlgError("non-positive-definite scaled covariance")
        inv = np.empty_like(M)
        inv[:, 0, 0] = d / det
        inv[:, 1, 1] = a / det
        inv[:, 0, 1] = inv[:, 1, 0] = -b / det
        return np.log(det), inv
    L = np.linalg.cholesky(M)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    return logdet, np.linalg.inv(M)


class ProfiledModel:
    """Per-cluster cross-products plus the profiled deviance evaluator.

    The response-dependent products can be swapped out cheaply, which is
    how bootstrap resamples are refitted without touching the design.
    """

    def __init__(self, data):
        self.p = data.p
        self.q = data.q
        self.n = data.n
        self.J = np.array([len(b.y) for b in data.clusters], dtype=float)
        self.N = float(self.J.sum())
        self.Z_blocks = [b.Z for b in data.clusters]
        self.X_blocks = [b.X for b in data.clusters]
        self.ZtZ = np.stack([b.Z.T @ b.Z for b in data.clusters])
        self.ZtX = np.stack([b.Z.T @ b.X for b in data.clusters])
        self.XtX = np.stack([b.X.T @ b.X for b in data.clusters])
        self.offsets = np.concatenate(([0], np.cumsum(self.J[:-1]))).astype(np.intp)
        self.Z_stack = np.vstack(self.Z_blocks)
        self.X_stack = np.vstack(self.X_blocks)
        self.set_response([b.y for b in data.clusters])

    def set_response(self, y) -> None:
        """Swap in a new response; accepts per-cluster blocks or a stacked vector."""
        if isinstance(y, np.ndarray) and y.ndim == 1:
            y_stack = y
            splits = np.cumsum(self.J.astype(int))[:-1]
            self.y_blocks = np.split(y_stack, splits)
        else:
            self.y_blocks = list(y)
            y_stack = np.concatenate(self.y_blocks)
        self.Zty = np.add.reduceat(self.Z_stack * y_stack[:, None], self.offsets, axis=0)
        self.Xty = np.add.reduceat(self.X_stack * y_stack[:, None], self.offsets, axis=0)
        self.yty = np.add.reduceat(y_stack * y_stack, self.offsets)

    def evaluate(self, C: np.ndarray, weights: np.ndarray | None = None,
                 restricted: bool = False, full: bool = True) -> _Eval:
        q, p = self.q, self.p
        A = self.ZtZ @ C
        M = C.T @ A
        M[:, range(q), range(q)] += 1.0
        logdetW, Minv = _batched_inverse(M)
        U = C.T @ self.ZtX
        v = self.Zty @ C
        Minv_U = Minv @ U
        Minv_v = (Minv @ v[..., None])[..., 0]
        Ut = np.swapaxes(U, 1, 2)
        XtWiX = self.XtX - Ut @ Minv_U
        XtWiy = self.Xty - (Ut @ Minv_v[..., None])[..., 0]
        ytWiy = self.yty - (v * Minv_v).sum(axis=1)

        if weights is None:
            G = XtWiX.sum(axis=0)
            h = XtWiy.sum(axis=0)
            w = None
        else:
            w = weights
            G = np.tensordot(w, XtWiX, axes=1)
            h = w @ XtWiy
        gamma = np.linalg.solve(G, h)
        Q = float((ytWiy.sum() if w is None else w @ ytWiy) - gamma @ h)
        if full:
            quad = ytWiy - 2.0 * XtWiy @ gamma + (XtWiX @ gamma) @ gamma
        else:
            quad = None

        if restricted:
            if weights is not None:
                raise ValueError("REML does not combine with robustness weights")
            dof = self.N - p
        else:
            dof = self.N if w is None else float(w @ self.J)
        sigma2 = max(Q, 0.0) / dof
        s2 = max(sigma2, 1e-300)
        logdet_sum = float(logdetW.sum() if w is None else w @ logdetW)
        criterion = dof * _LOG2PI + dof * np.log(s2) + logdet_sum + dof
        if restricted:
            sign, logdetG = np.linalg.slogdet(G)
            if sign <= 0:
                raise np.linalg.LinAlgError("rank-deficient fixed-effects design")
            criterion += logdetG
        return _Eval(float(criterion), gamma, sigma2, G, logdetW, quad, Q)

    def criterion(self, C: np.ndarray, weights: np.ndarray | None = None,
                  restricted: bool = False) -> float:
        """Profiled criterion only; uses the compiled kernel when available."""
        if _numba is not None:
            w = self.J if weights is None else weights
            return float(_criterion_jit(C, self.ZtZ, self.ZtX, self.Zty,
                                        self.XtX, self.Xty, self.yty, self.J,
                                        w, weights is not None, restricted,
                                        self.N))
        return self.evaluate(C, weights=weights, restricted=restricted,
                             full=False).criterion

    def ml_loglik(self, ev: _Eval, weights: np.ndarray | None = None) -> float:
        """Unweighted ML log-likelihood at (gamma, sigma2, theta) of an evaluation."""
        s2 = max(ev.sigma2, 1e-300)
        quad_tot = float(np.sum(ev.quad))
        return -0.5 * (self.N * _LOG2PI + self.N * np.log(s2)
                       + float(np.sum(ev.logdetW)) + quad_tot / s2)

    # -- starting values ----------------------------------------------------

    def start_factor(self) -> np.ndarray:
        """Cholesky start for C from per-cluster OLS coefficient spread."""
        coefs = []
        resid_ss = 0.0
        resid_df = 0.0
        for Z, y in zip(self.Z_blocks, self.y_blocks):
            if len(y) > self.q:
                beta, res, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
                if rank == self.q:
                    coefs.append(beta)
                    r = y - Z @ beta
                    resid_ss += r @ r
                    resid_df += len(y) - self.q
        y_all = np.concatenate(self.y_blocks)
        var_y = max(float(np.var(y_all)), 1e-12)
        if len(coefs) >= 2 and resid_df > 0:
            Sigma0 = np.atleast_2d(np.cov(np.stack(coefs), rowvar=False))
            sigma2_0 = max(resid_ss / resid_df, 1e-3 * var_y)
        else:
            Sigma0 = 0.5 * var_y * np.eye(self.q)
            sigma2_0 = 0.5 * var_y
        ratio = Sigma0 / sigma2_0
        for jitter in (0.0, 1e-8, 1e-4, 1e-2):
            try:
                return numerics.cholesky(ratio + jitter * np.trace(ratio + np.eye(self.q)) / self.q * np.eye(self.q))
            except numerics.NotPositiveDefiniteError:
                continue
        return np.eye(self.q)

    def factor_from_params(self, params: ParameterSet) -> np.ndarray:
        s2 = max(params.sigma_e2, 1e-12 * max(np.max(np.abs(params.Sigma)), 1.0))
        ratio = params.Sigma / s2
        for jitter in (0.0, 1e-10, 1e-6):
            try:
                return numerics.cholesky(ratio + jitter * np.eye(self.q))
            except numerics.NotPositiveDefiniteError:
                continue
        return np.eye(self.q)


_TRIL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _tril(q: int):
    if q not in _TRIL_CACHE:
        _TRIL_CACHE[q] = np.tril_indices(q)
    return _TRIL_CACHE[q]


def _pack(C: np.ndarray, q: int) -> np.ndarray:
    return C[_tril(q)]


def _unpack(x: np.ndarray, q: int) -> np.ndarray:
    C = np.zeros((q, q))
    C[_tril(q)] = x
    return C


_RESTART_PERTURBATIONS = ((1.15, 0.02), (0.85, -0.02), (1.4, 0.1))


def _minimize_profiled(
    pm: ProfiledModel,
    x0: np.ndarray,
    restricted: bool,
    weights: np.ndarray | None,
    restarts: int,
    max_iter: int,
) -> tuple[np.ndarray, float, bool, int]:
    q = pm.q

    def objective(x):
        try:
            return pm.criterion(_unpack(x, q), weights=weights,
                                restricted=restricted)
        except np.linalg.LinAlgError:
            return 1e300

    f0 = objective(x0)
    scale = max(abs(f0), 1.0) if f0 < 1e300 else 1.0
    xatol, fatol = 1e-5, 1e-8 * scale

    if _numba is not None:
        il, jl = _tril(q)
        il = np.ascontiguousarray(il, dtype=np.int64)
        jl = np.ascontiguousarray(jl, dtype=np.int64)
        w = pm.J if weights is None else np.asarray(weights, dtype=float)

        def run(xs):
            x, fun, nfev, ok = _neldermead_jit(
                np.ascontiguousarray(xs, dtype=float), il, jl, q,
                pm.ZtZ, pm.ZtX, pm.Zty, pm.XtX, pm.Xty, pm.yty, pm.J,
                w, weights is not None, restricted, pm.N,
                max_iter, 2 * max_iter, xatol, fatol,
            )
            return x, float(fun), bool(ok), int(nfev)
    else:
        opts = dict(maxiter=max_iter, maxfev=2 * max_iter, xatol=xatol, fatol=fatol)

        def run(xs):
            res = minimize(objective, xs, method="Nelder-Mead", options=opts)
            return res.x, float(res.fun), bool(res.success), int(res.nfev)

    bx, bf, converged, nfev = run(x0)
    for factor, shift in _RESTART_PERTURBATIONS[:restarts]:
        x, fun, ok, ne = run(bx * factor + shift)
        nfev += ne
        improvement = bf - fun
        if fun < bf:
            bx, bf, converged = x, fun, ok
        if improvement <= 1e-10 * scale:
            break
    return bx, bf, converged, nfev


def _zero_variance_result(pm: ProfiledModel, data, method: str) -> FitResult:
    ev = pm.evaluate(np.zeros((pm.q, pm.q)))
    params = ParameterSet(ev.gamma, np.zeros((pm.q, pm.q)), 0.0)
    loglik = np.inf  # degenerate: density unbounded at zero variance
    return FitResult(
        params=params,
        se_gamma=np.zeros(pm.p),
        loglik=loglik,
        deviance=-np.inf,
        method=method,
        converged=True,
        n_iter=0,
        fixed_names=data.fixed_names,
        random_names=data.random_names,
        cluster_var=data.cluster_var,
        boundary=True,
    )


def fit(
    data,
    method: str = "ML",
    start: ParameterSet | None = None,
    restarts: int = 3,
    max_iter: int = 2000,
    _pm: ProfiledModel | None = None,
) -> FitResult:
    """Fit the LMM by ML or REML.

    ``start`` provides warm-start variance parameters (used by the
    bootstrap engine); a warm-started fit skips the perturbed restarts
    unless the first optimizer run fails.
    """
    method = method.upper()
    if method not in ("ML", "REML"):
        raise ValueError(f"unknown method {method!r}")
    if data.n < 2:
        raise ValueError("at least two clusters are required")
    pm = _pm if _pm is not None else ProfiledModel(data)
    restricted = method == "REML"

    # zero-variance degenerate data: OLS fits exactly
    ev0 = pm.evaluate(np.zeros((pm.q, pm.q)))
    y_scale = max(float(pm.yty.sum()), 1.0)
    if ev0.Q <= 1e-12 * y_scale:
        return _zero_variance_result(pm, data, method)

    if start is not None:
        C0 = pm.factor_from_params(start)
        eff_restarts = 0
    else:
        C0 = pm.start_factor()
        eff_restarts = restarts
    x0 = _pack(C0, pm.q)
    x, fval, converged, nfev = _minimize_profiled(
        pm, x0, restricted, None, eff_restarts, max_iter
    )
    if start is not None and not converged:
        x, fval, converged, nfev2 = _minimize_profiled(
            pm, x, restricted, None, restarts, max_iter
        )
        nfev += nfev2

    C = _unpack(x, pm.q)
    ev = pm.evaluate(C, restricted=restricted)
    sigma2 = ev.sigma2
    Sigma = sigma2 * (C @ C.T)
    Sigma = 0.5 * (Sigma + Sigma.T)

    # boundary detection on the SD scale
    sd_y = np.sqrt(y_scale / pm.N)
    boundary = False
    for j in range(pm.q):
        if Sigma[j, j] < (1e-8 * sd_y) ** 2:
            Sigma[j, :] = 0.0
            Sigma[:, j] = 0.0
            boundary = True
    sigma_e = float(np.sqrt(sigma2))
    if sigma_e < 1e-8 * sd_y:
        sigma_e = 0.0
        boundary = True

    params = ParameterSet(ev.gamma, Sigma, sigma_e)
    cov_gamma = sigma2 * np.linalg.inv(ev.G)
    se_gamma = np.sqrt(np.clip(np.diag(cov_gamma), 0.0, None))
    loglik = pm.ml_loglik(ev)
    return FitResult(
        params=params,
        se_gamma=se_gamma,
        loglik=loglik,
        deviance=-2.0 * loglik,
        method=method,
        converged=converged,
        n_iter=nfev,
        fixed_names=data.fixed_names,
        random_names=data.random_names,
        cluster_var=data.cluster_var,
        boundary=boundary,
        reml_criterion=float(fval) if restricted else None,
    )
