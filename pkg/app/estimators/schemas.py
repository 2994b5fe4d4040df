from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from app.core.config import settings
from app.data.schemas import StrictModel
from app.weights.schemas import CrossWorldMethod


class Robustness(str, Enum):
    NONROBUST = "nonrobust"
    MORE_ROBUST = "more-robust"
    ROBUST = "robust"


class Approach(str, Enum):
    OUTCOME = "outcome"  # potential-outcome means, effects by differences
    EFFECT = "effect"    # effects estimated directly


class AnalystFormulas(StrictModel):
    """Model formulas, one per estimation component. Only the ones the
    selected estimators need must be present."""
    propensity: Optional[str] = None      # A ~ C
    exposure_cm: Optional[str] = None     # A ~ C + M
    outcome_c1: Optional[str] = None      # E[Y|C,A=1]
    outcome_c0: Optional[str] = None      # E[Y|C,A=0]
    outcome_cm: Optional[str] = None      # E[Y|C,M,A=1]
    y1m0_c: Optional[str] = None          # E[Y1M0|C]
    nde_c: Optional[str] = None           # E[NDE0|C]
    working: Optional[str] = None         # covariate-adjustment working model
    mediator_order: Optional[List[str]] = None
    mediator_density: Dict[str, str] = Field(default_factory=dict)


class EstimationOptions(StrictModel):
    formulas: AnalystFormulas
    weights_method: CrossWorldMethod = CrossWorldMethod.EXPR2
    msim_mode: Literal["simulate", "exact"] = "simulate"
    n_sim: int = Field(default=settings.MSIM_REPLICATES, ge=1)
    cadj_joint: bool = True
    cadj_family: Literal["auto", "gaussian", "binomial"] = "auto"
    weight_cap: Optional[float] = Field(default=None, gt=0)


class EstimateReport(BaseModel):
    estimator: str
    approach: Approach
    robustness: Robustness
    EY1: Optional[float] = None
    EY0: Optional[float] = None
    EY1M0: Optional[float] = None
    NDE0: Optional[float] = None
    NIE1: Optional[float] = None
    TE: Optional[float] = None
    components: List[str] = Field(default_factory=list)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[Dict[str, Any]] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def effects(self) -> Dict[str, Optional[float]]:
        return {"NDE0": self.NDE0, "NIE1": self.NIE1, "TE": self.TE}
