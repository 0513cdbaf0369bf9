"""Dataset construction: CSV ingest, per-cluster design matrices, simulation.

All model columns are numeric (a binary treatment enters as 0/1); the
only missing-data policy is listwise deletion on referenced columns,
with the dropped-row count reported.  Cluster labels are compared as
exact strings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .estimation import ParameterSet
from .formula import ModelFormula, parse_formula
from .numerics import RandomStream, cholesky

__all__ = [
    "DataError",
    "ClusterBlock",
    "LongitudinalDataset",
    "SimulationDesign",
    "MEDSIM_FORMULA",
    "read_csv",
    "write_csv",
    "from_columns",
    "simulate_dataset",
    "design_from_json",
]

_MISSING = ("", "NA")

# Canonical synthetic-experiment design: columns id, treat, time, pos.
MEDSIM_FORMULA = "pos ~ treat * time + (time|id)"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterBlock:
    id: str
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    row_ids: np.ndarray


@dataclass(frozen=True)
class LongitudinalDataset:
    clusters: tuple[ClusterBlock, ...]
    fixed_names: tuple[str, ...]
    random_names: tuple[str, ...]
    cluster_var: str
    response_var: str
    variable_names: tuple[str, ...]
    columns: dict[str, np.ndarray]  # retained rows: cluster labels, variables, response
    dropped_rows: int = 0

    @property
    def n(self) -> int:
        return len(self.clusters)

    @property
    def N(self) -> int:
        return sum(len(b.y) for b in self.clusters)

    @property
    def p(self) -> int:
        return len(self.fixed_names)

    @property
    def q(self) -> int:
        return len(self.random_names)

    def stacked_y(self) -> np.ndarray:
        return np.concatenate([b.y for b in self.clusters])

    def stacked_X(self) -> np.ndarray:
        return np.vstack([b.X for b in self.clusters])

    def without_cluster(self, index: int) -> "LongitudinalDataset":
        """Leave-one-cluster-out copy, used by the jackknife."""
        if not 0 <= index < self.n:
            raise IndexError(index)
        label = self.clusters[index].id
        keep = self.columns[self.cluster_var] != label
        cols = {name: values[keep] for name, values in self.columns.items()}
        kept_clusters = tuple(b for i, b in enumerate(self.clusters) if i != index)
        return LongitudinalDataset(
            clusters=kept_clusters,
            fixed_names=self.fixed_names,
            random_names=self.random_names,
            cluster_var=self.cluster_var,
            response_var=self.response_var,
            variable_names=self.variable_names,
            columns=cols,
            dropped_rows=self.dropped_rows,
        )


def _fixed_terms_columns(formula: ModelFormula, cols: dict[str, np.ndarray], n_rows: int):
    columns = []
    for term in formula.fixed_terms:
        if not term:
            columns.append(np.ones(n_rows))
        else:
            col = cols[term[0]].copy()
            for name in term[1:]:
                col = col * cols[name]
            columns.append(col)
    return np.column_stack(columns)


def from_columns(
    formula: ModelFormula | str,
    columns: dict[str, np.ndarray],
    dropped_rows: int = 0,
) -> LongitudinalDataset:
    """Assemble a dataset from already-clean per-row columns.

    ``columns`` must contain the cluster variable (string labels), every
    data column the formula references, and the response.
    """
    if isinstance(formula, str):
        formula = parse_formula(formula)
    needed = (formula.cluster, *formula.variables, formula.response)
    for name in needed:
        if name not in columns:
            raise DataError(f"missing column {name!r}")
    labels = np.asarray(columns[formula.cluster], dtype=str)
    n_rows = len(labels)
    if n_rows == 0:
        raise DataError("no usable rows")
    numeric = {}
    for name in (*formula.variables, formula.response):
        arr = np.asarray(columns[name], dtype=float)
        if len(arr) != n_rows:
            raise DataError(f"column {name!r} has {len(arr)} rows, expected {n_rows}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"non-finite values in column {name!r}")
        numeric[name] = arr

    X_all = _fixed_terms_columns(formula, numeric, n_rows)
    z_cols = []
    if formula.random_intercept:
        z_cols.append(np.ones(n_rows))
    for name in formula.random_slopes:
        z_cols.append(numeric[name])
    Z_all = np.column_stack(z_cols)
    y_all = numeric[formula.response]

    order: list[str] = []
    index: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        if lab not in index:
            index[lab] = []
            order.append(lab)
        index[lab].append(i)
    if len(order) < 2:
        raise DataError(f"need at least 2 clusters, found {len(order)}")

    blocks = []
    for lab in order:
        rows = np.array(index[lab])
        blocks.append(
            ClusterBlock(
                id=lab,
                y=y_all[rows].copy(),
                X=X_all[rows].copy(),
                Z=Z_all[rows].copy(),
                row_ids=rows,
            )
        )
    stored = {formula.cluster: labels}
    stored.update({name: numeric[name] for name in formula.variables})
    stored[formula.response] = y_all
    return LongitudinalDataset(
        clusters=tuple(blocks),
        fixed_names=formula.fixed_labels(),
        random_names=formula.random_labels(),
        cluster_var=formula.cluster,
        response_var=formula.response,
        variable_names=formula.variables,
        columns=stored,
        dropped_rows=dropped_rows,
    )


def read_csv(path, formula: ModelFormula | str) -> LongitudinalDataset:
    """Read a long-format CSV, dropping rows with missing referenced values."""
    if isinstance(formula, str):
        formula = parse_formula(formula)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        needed = (formula.cluster, *formula.variables, formula.response)
        for name in needed:
            if name not in header:
                raise DataError(f"{path}: missing column {name!r}")
        idx = {name: header.index(name) for name in needed}

        kept: dict[str, list] = {name: [] for name in needed}
        seen_clusters: list[str] = []
        kept_clusters: set[str] = set()
        dropped = 0
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            label = row[idx[formula.cluster]].strip()
            if label and label not in seen_clusters:
                seen_clusters.append(label)
            values = {}
            ok = bool(label)
            if ok:
                for name in (*formula.variables, formula.response):
                    cell = row[idx[name]].strip()
                    if cell in _MISSING:
                        ok = False
                        break
                    try:
                        values[name] = float(cell)
                    except ValueError:
                        ok = False
                        break
            if not ok:
                dropped += 1
                continue
            kept[formula.cluster].append(label)
            kept_clusters.add(label)
            for name, value in values.items():
                kept[name].append(value)

    if not kept[formula.cluster]:
        raise DataError(f"{path}: zero usable rows")
    lost = [lab for lab in seen_clusters if lab not in kept_clusters]
    if lost:
        raise DataError(f"{path}: all rows dropped for cluster(s) {lost}")
    columns = {formula.cluster: np.array(kept[formula.cluster], dtype=str)}
    for name in (*formula.variables, formula.response):
        columns[name] = np.array(kept[name], dtype=float)
    return from_columns(formula, columns, dropped_rows=dropped)


def write_csv(dataset: LongitudinalDataset, path) -> None:
    """Long-format CSV (cluster column + referenced columns) that read_csv round-trips."""
    names = [dataset.cluster_var, *dataset.variable_names, dataset.response_var]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        n_rows = len(dataset.columns[dataset.cluster_var])
        for i in range(n_rows):
            row = [dataset.columns[dataset.cluster_var][i]]
            for name in names[1:]:
                row.append(repr(float(dataset.columns[name][i])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationDesign:
    """Treatment-by-time design with known truth.

    Each cluster is measured at every value of ``times``; X is
    [1, treat, time, treat*time] and Z is [1, time].
    """

    n: int
    times: np.ndarray
    group_assignment: np.ndarray  # per-cluster 0/1 labels
    truth: ParameterSet

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "group_assignment", np.asarray(self.group_assignment, dtype=int))
        if self.times.size == 0:
            raise ValueError("times must be nonempty")
        if len(self.group_assignment) != self.n:
            raise ValueError("group_assignment length must equal n")
        if not np.all(np.isin(self.group_assignment, (0, 1))):
            raise ValueError("group labels must be 0 or 1")


def design_from_json(doc: dict | str) -> tuple[SimulationDesign, int]:
    """Parse the JSON design document; returns (design, seed)."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    n = int(doc["n"])
    times = np.asarray(doc["times"], dtype=float)
    if "treat" in doc:
        treat = np.asarray(doc["treat"], dtype=int)
    elif "treat_fraction" in doc:
        n_treat = int(round(n * float(doc["treat_fraction"])))
        treat = np.concatenate([np.zeros(n - n_treat, dtype=int), np.ones(n_treat, dtype=int)])
    else:
        raise DataError("design needs 'treat' or 'treat_fraction'")
    truth = ParameterSet(
        gamma=np.asarray(doc["gamma"], dtype=float),
        Sigma=np.asarray(doc["sigma"], dtype=float),
        sigma_e=float(np.sqrt(float(doc["sigma_e2"]))),
    )
    seed = int(doc.get("seed", 0))
    return SimulationDesign(n=n, times=times, group_assignment=treat, truth=truth), seed


def simulate_dataset(design: SimulationDesign, rng: RandomStream) -> LongitudinalDataset:
    """Draw one dataset from the generative model at the design's truth."""
    truth = design.truth
    L = cholesky(truth.Sigma)  # raises on non-PSD truth
    J = design.times.size
    gen = rng.generator
    ids, treats, times_col, pos = [], [], [], []
    for i in range(design.n):
        treat = design.group_assignment[i]
        t = design.times
        X = np.column_stack([np.ones(J), np.full(J, float(treat)), t, float(treat) * t])
        Z = np.column_stack([np.ones(J), t])
        b = L @ gen.standard_normal(truth.Sigma.shape[0])
        eps = truth.sigma_e * gen.standard_normal(J)
        y = X @ truth.gamma + Z @ b + eps
        ids.extend([str(i + 1)] * J)
        treats.extend([float(treat)] * J)
        times_col.extend(t.tolist())
        pos.extend(y.tolist())
    columns = {
        "id": np.array(ids, dtype=str),
        "treat": np.array(treats),
        "time": np.array(times_col),
        "pos": np.array(pos),
    }
    return from_columns(MEDSIM_FORMULA, columns)
