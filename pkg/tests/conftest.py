from typing import Dict

import numpy as np
import pytest

from app.data.schemas import Dataset, Role
from app.data.service import DataService
from app.estimators.schemas import EstimationOptions
from app.simlab.scenarios import desk_dgp, desk_formulas, discrete_dgp, discrete_formulas
from app.simlab.schemas import DgpSpec, OutcomeLaw
from app.simlab.service import generate


def make_dataset(columns: Dict[str, np.ndarray], roles: Dict[str, str], levels=None) -> Dataset:
    return DataService.build(columns, {k: Role(v) for k, v in roles.items()}, levels)


def continuous_outcome_dgp() -> DgpSpec:
    """Discrete covariates and mediator, normal outcome."""
    base = discrete_dgp()
    return DgpSpec(
        covariates=base.covariates,
        propensity=base.propensity,
        mediators=base.mediators,
        outcome=OutcomeLaw(kind="continuous", sd=1.0, terms={"1": 0.5, "A": 1.0, "M": 2.0, "C1": 0.5, "C2": 1.5}),
    )


@pytest.fixture(scope="session")
def discrete_ds() -> Dataset:
    return generate(discrete_dgp(), 4000, seed=101)


@pytest.fixture(scope="session")
def desk_ds() -> Dataset:
    return generate(desk_dgp(), 1500, seed=202)


@pytest.fixture(scope="session")
def continuous_ds() -> Dataset:
    return generate(continuous_outcome_dgp(), 3000, seed=303)


@pytest.fixture
def discrete_options() -> EstimationOptions:
    return EstimationOptions(formulas=discrete_formulas(), msim_mode="exact")


@pytest.fixture
def desk_options() -> EstimationOptions:
    return EstimationOptions(formulas=desk_formulas(), n_sim=5)


@pytest.fixture
def tiny_ds() -> Dataset:
    """Eight rows, two per (A, C) cell."""
    return make_dataset(
        {
            "C": np.array([0, 0, 1, 1, 0, 0, 1, 1], dtype=float),
            "A": np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float),
            "M": np.array([0, 1, 0, 1, 1, 1, 0, 1], dtype=float),
            "Y": np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
        },
        {"C": "covariate", "A": "exposure", "M": "mediator", "Y": "outcome"},
    )
