"""Shared fixtures: the synthetic treatment-by-time design and datasets.

The "medsim" truth used throughout: n = 60 subjects measured at times
0, 3, ..., 18, half treated, with
    gamma   = (167.46, -3.11, -2.42, 4.00)
    Sigma   = [[2111.54, -121.63], [-121.63, 63.74]]
    sigma_e^2 = 1229.93
so the reported-scale truth is SDs (45.95, 7.98), correlation -0.332
and residual SD 35.07.
"""

import numpy as np
import pytest

from mixedboot import data as data_mod
from mixedboot import estimation
from mixedboot.numerics import RandomStream

MEDSIM_DESIGN_DOC = {
    "n": 60,
    "times": list(range(0, 19, 3)),
    "treat_fraction": 0.5,
    "gamma": [167.46, -3.11, -2.42, 4.00],
    "sigma": [[2111.54, -121.63], [-121.63, 63.74]],
    "sigma_e2": 1229.93,
}


@pytest.fixture(scope="session")
def medsim_design():
    design, _ = data_mod.design_from_json(MEDSIM_DESIGN_DOC)
    return design


@pytest.fixture(scope="session")
def medsim_data(medsim_design):
    return data_mod.simulate_dataset(medsim_design, RandomStream(7))


@pytest.fixture(scope="session")
def medsim_fit(medsim_data):
    result = estimation.fit(medsim_data, "ML")
    assert result.converged
    return result


def small_dataset(n_clusters=8, J=5, seed=3):
    """A quick random-intercept-and-slope dataset for cheap fits."""
    gen = np.random.default_rng(seed)
    rows_id, rows_x, rows_y = [], [], []
    for i in range(n_clusters):
        t = np.arange(J, dtype=float)
        b0, b1 = gen.normal(0, 2.0), gen.normal(0, 0.5)
        y = 1.0 + 0.5 * t + b0 + b1 * t + gen.normal(0, 1.0, J)
        rows_id.extend([f"c{i}"] * J)
        rows_x.extend(t.tolist())
        rows_y.extend(y.tolist())
    columns = {
        "g": np.array(rows_id, dtype=str),
        "t": np.array(rows_x),
        "y": np.array(rows_y),
    }
    return data_mod.from_columns("y ~ t + (t|g)", columns)


@pytest.fixture(scope="session")
def small_data():
    return small_dataset()


@pytest.fixture(scope="session")
def small_fit(small_data):
    result = estimation.fit(small_data, "ML")
    assert result.converged
    return result
