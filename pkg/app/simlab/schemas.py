import itertools
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.special import expit

from app.core.config import settings
from app.data.schemas import StrictModel
from app.estimators.schemas import AnalystFormulas
from app.weights.schemas import CrossWorldMethod

# A linear predictor maps terms to coefficients. "1" is the intercept,
# "C1" a main effect, "A:M1" a product of variables.
LinearPredictor = Dict[str, float]

PROPENSITY_BOUNDS = (0.05, 0.95)


def term_variables(term: str) -> List[str]:
    return [] if term == "1" else term.split(":")


def evaluate(lp: LinearPredictor, values: Dict[str, Union[np.ndarray, float]], n: int) -> np.ndarray:
    out = np.zeros(n)
    for term, coef in lp.items():
        part = np.full(n, float(coef))
        for var in term_variables(term):
            part = part * values[var]
        out += part
    return out


def _check_terms(lp: LinearPredictor, allowed: List[str], where: str) -> None:
    for term in lp:
        names = term_variables(term)
        unknown = [v for v in names if v not in allowed]
        if unknown:
            raise ValueError(f"{where}: term '{term}' uses {unknown}, allowed {allowed}")
        if len(set(names)) != len(names):
            raise ValueError(f"{where}: term '{term}' repeats a variable")


class CovariateLaw(StrictModel):
    name: str
    kind: Literal["bernoulli", "uniform"]
    p: float = Field(default=0.5, gt=0, lt=1)
    low: float = 0.0
    high: float = 1.0

    @model_validator(mode="after")
    def _range(self):
        if self.kind == "uniform" and not self.low < self.high:
            raise ValueError(f"Covariate {self.name}: uniform law needs low < high")
        return self

    @property
    def support_bounds(self):
        return (0.0, 1.0) if self.kind == "bernoulli" else (self.low, self.high)


class MediatorLaw(StrictModel):
    """P(M_k | C, earlier mediators, A=a), one linear predictor per arm."""
    name: str
    kind: Literal["binary", "continuous"]
    arm0: LinearPredictor
    arm1: LinearPredictor
    sd: float = Field(default=1.0, gt=0)


class OutcomeLaw(StrictModel):
    kind: Literal["binary", "continuous"]
    terms: LinearPredictor
    sd: float = Field(default=1.0, gt=0)


class DgpSpec(StrictModel):
    """Structural equations C -> A -> M -> Y with fully fixed parameters."""
    covariates: List[CovariateLaw] = Field(..., min_length=1)
    propensity: LinearPredictor
    mediators: List[MediatorLaw] = Field(..., min_length=1)
    outcome: OutcomeLaw
    exposure_name: str = "A"
    outcome_name: str = "Y"

    @model_validator(mode="after")
    def _validate(self):
        covs = [c.name for c in self.covariates]
        meds = [m.name for m in self.mediators]
        names = covs + meds + [self.exposure_name, self.outcome_name]
        if len(set(names)) != len(names):
            raise ValueError("Variable names must be unique")
        _check_terms(self.propensity, covs, "propensity")
        for k, law in enumerate(self.mediators):
            allowed = covs + meds[:k]
            _check_terms(law.arm0, allowed, f"mediator {law.name} arm0")
            _check_terms(law.arm1, allowed, f"mediator {law.name} arm1")
        _check_terms(self.outcome.terms, covs + meds + [self.exposure_name], "outcome")

        # the propensity is multilinear in C, so its extremes sit on the vertices
        lo, hi = PROPENSITY_BOUNDS
        bounds = [c.support_bounds for c in self.covariates]
        for vertex in itertools.product(*bounds):
            values = {name: np.array([v]) for name, v in zip(covs, vertex)}
            p = float(expit(evaluate(self.propensity, values, 1))[0])
            if not lo <= p <= hi:
                raise ValueError(
                    f"Propensity {p:.3f} outside [{lo}, {hi}] at covariate vertex {dict(zip(covs, vertex))}"
                )
        return self

    @property
    def covariate_names(self) -> List[str]:
        return [c.name for c in self.covariates]

    @property
    def mediator_names(self) -> List[str]:
        return [m.name for m in self.mediators]


class TruthReport(BaseModel):
    EY1: float
    EY0: float
    EY1M0: float
    NDE0: float
    NIE1: float
    TE: float
    se: Dict[str, float]
    n_mc: int

    def effects(self) -> Dict[str, float]:
        return {"NDE0": self.NDE0, "NIE1": self.NIE1, "TE": self.TE}


FORMULA_KEYS = (
    "propensity", "exposure_cm", "outcome_c1", "outcome_c0", "outcome_cm",
    "y1m0_c", "nde_c", "working", "mediator_density",
)


class ScenarioSpec(StrictModel):
    """A DGP plus the analyst's formulas, some deliberately misspecified by
    dropping variables the generating law uses."""
    name: str
    dgp: DgpSpec
    formulas: AnalystFormulas
    misspecified: List[str] = Field(default_factory=list)
    omit: List[str] = Field(default_factory=lambda: ["C2"], min_length=1)
    estimators: Union[Literal["all"], List[str]] = "all"
    weights_method: CrossWorldMethod = CrossWorldMethod.EXPR2
    msim_mode: Literal["simulate", "exact"] = "simulate"
    n_sim: int = Field(default=settings.MSIM_REPLICATES, ge=1)

    @field_validator("misspecified")
    @classmethod
    def _known_keys(cls, v: List[str]) -> List[str]:
        unknown = [k for k in v if k not in FORMULA_KEYS]
        if unknown:
            raise ValueError(f"Unknown formula keys {unknown}; expected a subset of {list(FORMULA_KEYS)}")
        return sorted(set(v))


class ExperimentRow(BaseModel):
    scenario: str
    estimator: str
    effect: str
    truth: float
    truth_se: float
    mean: Optional[float] = None
    bias: Optional[float] = None
    emp_se: Optional[float] = None
    mc_se: Optional[float] = None
    rmse: Optional[float] = None
    std_bias: Optional[float] = None
    coverage: Optional[float] = None
    failures: int = 0
    reps: int


class ExperimentReport(BaseModel):
    scenario: str
    n: int
    reps: int
    seed: int
    misspecified: List[str]
    bootstrap: bool
    rows: List[ExperimentRow] = Field(default_factory=list)

    def row(self, estimator: str, effect: str) -> ExperimentRow:
        for r in self.rows:
            if r.estimator == estimator and r.effect == effect:
                return r
        raise KeyError(f"{estimator}|{effect}")
