from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from app.formula.schemas import FormulaSpec, SplineKnots


class Family(str, Enum):
    GAUSSIAN = "gaussian"  # identity link
    BINOMIAL = "binomial"  # logit link


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: FormulaSpec
    family: Family
    coefficients: np.ndarray
    column_names: Tuple[str, ...]
    knots: Mapping[str, SplineKnots]
    levels: Mapping[str, Tuple[str, ...]]
    n: int
    weight_sum: float
    converged: bool
    iterations: int
    mean_recovery_residual: float
    sigma2: Optional[float] = None
    transform: Optional[Tuple[float, float]] = None
    warnings: Tuple[str, ...] = field(default=())

    @property
    def formula(self) -> str:
        return self.spec.text or self.spec.render()

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.column_names.index(name)])


class ModelSummary(BaseModel):
    formula: str
    family: Family
    coefficients: Dict[str, float]
    n: int
    weight_sum: float
    converged: bool
    iterations: int
    mean_recovery_residual: float
    sigma2: Optional[float] = None
    bounded: Optional[Tuple[float, float]] = None
