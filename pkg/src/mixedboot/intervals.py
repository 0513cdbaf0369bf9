"""Confidence intervals: Wald, bootstrap percentile, and BCa.

``confint`` mirrors the tutorial-style contract: method "Wald"
(fixed effects only), "boot" (percentile bootstrap, default wild
scheme) or "BCa"; the returned table carries the full bootstrap
results as an attachment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bootstrap import BootstrapRun, JackknifeRun, jackknife_run, run_bootstrap
from .estimation import FitResult
from .numerics import empirical_quantile, norm_cdf, norm_quantile

__all__ = [
    "CiOptions",
    "BcaComponents",
    "CiTable",
    "percentile_ci",
    "bca_components",
    "bca_ci",
    "wald_ci",
    "confint",
]


class IntervalError(ValueError):
    pass


@dataclass(frozen=True)
class CiOptions:
    method: str = "boot"  # "Wald", "boot" or "BCa"
    boot_type: str = "wild"  # "wild" or "parametric"
    nsim: int = 5000
    level: float = 0.95
    parm: tuple | None = None  # names or 1-based indices
    cluster_id: str | None = None  # required for BCa
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        method = self.method.lower()
        if method not in ("wald", "boot", "bca"):
            raise IntervalError(f"unknown CI method {self.method!r}")
        object.__setattr__(self, "method", {"wald": "Wald", "boot": "boot", "bca": "BCa"}[method])
        if self.boot_type not in ("wild", "parametric"):
            raise IntervalError(f"unknown boot_type {self.boot_type!r}")
        if not 0.0 < self.level < 1.0:
            raise IntervalError("level must be in (0, 1)")
        if self.nsim < 1:
            raise IntervalError("nsim must be at least 1")
        if self.method == "BCa" and not self.cluster_id:
            raise IntervalError('clusterID is needed with method="BCa"')


@dataclass(frozen=True)
class BcaComponents:
    z0: float
    a: float
    alpha1: float
    alpha2: float
    proportion_clamped: bool = False


@dataclass
class CiTable:
    rows: list[tuple[str, float, float]]
    level: float
    method: str
    boot_type: str | None = None
    full_results: dict | None = None

    def bound_labels(self) -> tuple[str, str]:
        alpha = 1.0 - self.level
        return (f"{alpha / 2 * 100:g} %", f"{(1 - alpha / 2) * 100:g} %")

    def render(self) -> str:
        lo_lab, hi_lab = self.bound_labels()
        name_w = max([len(r[0]) for r in self.rows] + [0])
        lines = [f"{'':<{name_w}}  {lo_lab:>13} {hi_lab:>13}"]
        for name, lo, hi in self.rows:
            lines.append(f"{name:<{name_w}}  {lo:>13.6g} {hi:>13.6g}")
        if self.full_results is not None:
            lines.append('attr("fullResults"): percentile table and bootstrap estimates attached')
        return "\n".join(lines)

    def to_dict(self, include_full_results: bool = True) -> dict:
        lo_lab, hi_lab = self.bound_labels()
        out = {
            "method": self.method,
            "boot_type": self.boot_type,
            "level": self.level,
            "labels": [lo_lab, hi_lab],
            "rows": [{"name": n, "lower": lo, "upper": hi} for n, lo, hi in self.rows],
        }
        if include_full_results and self.full_results is not None:
            full = {}
            if "percentile" in self.full_results:
                full["Percentile"] = [
                    {"name": n, "lower": lo, "upper": hi}
                    for n, lo, hi in self.full_results["percentile"]
                ]
            run: BootstrapRun = self.full_results.get("bootstrap_run")
            if run is not None:
                full["bootstrap_estimates"] = {
                    "columns": list(run.column_names),
                    "values": run.estimates.tolist(),
                    "scheme": run.scheme,
                    "requested_B": run.requested_B,
                    "n_failed": run.n_failed,
                    "seed": run.seed,
                    "refit_method": run.refit_method,
                }
            if "bca" in self.full_results:
                full["BCa"] = {
                    name: {
                        "z0": c.z0, "a": c.a, "alpha1": c.alpha1, "alpha2": c.alpha2,
                        "proportion_clamped": c.proportion_clamped,
                    }
                    for name, c in self.full_results["bca"].items()
                }
            out["full_results"] = full
        return out


def percentile_ci(samples: np.ndarray, level: float) -> tuple[float, float]:
    """(alpha/2, 1 - alpha/2) empirical quantiles of the bootstrap estimates."""
    alpha = 1.0 - level
    return (empirical_quantile(samples, alpha / 2.0),
            empirical_quantile(samples, 1.0 - alpha / 2.0))


def bca_components(samples: np.ndarray, point_estimate: float,
                   jackknife_column: np.ndarray, level: float) -> BcaComponents:
    """Bias-correction z0, jackknife acceleration a, and adjusted tails."""
    samples = np.asarray(samples, dtype=float)
    jack = np.asarray(jackknife_column, dtype=float)
    B = samples.size
    if B < 1:
        raise ValueError("empty bootstrap sample")
    if jack.size < 3:
        raise ValueError("jackknife needs at least 3 rows")

    prop = float(np.count_nonzero(samples < point_estimate)) / B
    clamped = False
    floor = 1.0 / (2.0 * B)
    if prop <= 0.0:
        prop, clamped = floor, True
    elif prop >= 1.0:
        prop, clamped = 1.0 - floor, True
    z0 = norm_quantile(prop)

    dev = jack.mean() - jack
    denom = 6.0 * float(np.sum(dev ** 2)) ** 1.5
    a = float(np.sum(dev ** 3)) / denom if denom > 0 else 0.0

    alpha = 1.0 - level
    if z0 == 0.0 and a == 0.0:
        # the adjustment is the identity: keep the percentile tails exactly
        alpha1, alpha2 = alpha / 2.0, 1.0 - alpha / 2.0
    else:
        z_lo = norm_quantile(alpha / 2.0)
        z_hi = norm_quantile(1.0 - alpha / 2.0)
        alpha1 = norm_cdf(z0 + (z0 + z_lo) / (1.0 - a * (z0 + z_lo)))
        alpha2 = norm_cdf(z0 + (z0 + z_hi) / (1.0 - a * (z0 + z_hi)))
    return BcaComponents(z0=z0, a=a, alpha1=alpha1, alpha2=alpha2,
                         proportion_clamped=clamped)


def bca_ci(samples: np.ndarray, components: BcaComponents, level: float) -> tuple[float, float]:
    return (empirical_quantile(samples, components.alpha1),
            empirical_quantile(samples, components.alpha2))


def wald_ci(fit: FitResult, level: float) -> CiTable:
    """estimate +/- z * se for the fixed effects; variance components have no Wald CI."""
    if not fit.converged:
        raise IntervalError("fit did not converge")
    z = norm_quantile(1.0 - (1.0 - level) / 2.0)
    rows = [
        (name, float(est - z * se), float(est + z * se))
        for name, est, se in zip(fit.fixed_names, fit.params.gamma, fit.se_gamma)
    ]
    return CiTable(rows=rows, level=level, method="Wald")


def _resolve_parm(parm, names: tuple[str, ...]) -> list[int]:
    indices = []
    for sel in parm:
        if isinstance(sel, str) and not sel.isdigit():
            if sel not in names:
                raise IntervalError(f"unknown parameter name {sel!r}")
            indices.append(names.index(sel))
        else:
            i = int(sel)
            if not 1 <= i <= len(names):
                raise IntervalError(f"parm index {i} out of range 1..{len(names)}")
            indices.append(i - 1)
    return indices


def _row_kinds(fit: FitResult) -> list[str]:
    """Per reported row: 'fixed', 'sd', 'corr' or 'resid'."""
    p = len(fit.fixed_names)
    q = len(fit.random_names)
    return ["fixed"] * p + ["sd"] * q + ["corr"] * (q * (q - 1) // 2) + ["resid"]


def _clamp(kind: str, lo: float, hi: float) -> tuple[float, float]:
    if kind in ("sd", "resid"):
        return max(lo, 0.0), max(hi, 0.0)
    if kind == "corr":
        return max(lo, -1.0), min(hi, 1.0)
    return lo, hi


def confint(fit: FitResult, data, options: CiOptions | None = None) -> CiTable:
    """Full CI pipeline; see CiOptions for the knobs."""
    options = options or CiOptions()
    point = fit.reported()
    names = tuple(point.keys())
    kinds = _row_kinds(fit)

    if options.method == "Wald":
        table = wald_ci(fit, options.level)
        if options.parm is not None:
            fixed_count = len(fit.fixed_names)
            indices = _resolve_parm(options.parm, names)
            for i in indices:
                if i >= fixed_count:
                    raise IntervalError(
                        f"Wald intervals are available only for fixed effects; "
                        f"{names[i]!r} is a variance-component row"
                    )
            table.rows = [table.rows[i] for i in indices]
        return table

    if options.method == "BCa" and options.cluster_id != data.cluster_var:
        raise IntervalError(
            f"clusterID {options.cluster_id!r} does not name the dataset's "
            f"cluster variable {data.cluster_var!r}"
        )

    run = run_bootstrap(fit, data, B=options.nsim, scheme=options.boot_type,
                        seed=options.seed, threads=options.threads)
    percentile_rows = []
    for j, name in enumerate(names):
        lo, hi = percentile_ci(run.estimates[:, j], options.level)
        lo, hi = _clamp(kinds[j], lo, hi)
        percentile_rows.append((name, lo, hi))

    full: dict = {"percentile": percentile_rows, "bootstrap_run": run}
    if options.method == "boot":
        rows = list(percentile_rows)
    else:
        jack = jackknife_run(data, fit.method, threads=options.threads)
        components = {}
        rows = []
        for j, name in enumerate(names):
            comp = bca_components(run.estimates[:, j], point[name],
                                  jack.estimates[:, j], options.level)
            lo, hi = bca_ci(run.estimates[:, j], comp, options.level)
            lo, hi = _clamp(kinds[j], lo, hi)
            components[name] = comp
            rows.append((name, lo, hi))
        full["bca"] = components
        full["jackknife"] = jack

    if options.parm is not None:
        indices = _resolve_parm(options.parm, names)
        rows = [rows[i] for i in indices]
    return CiTable(rows=rows, level=options.level, method=options.method,
                   boot_type=options.boot_type, full_results=full)
