from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel

from app.data.schemas import SampleView


class Target(str, Enum):
    P1 = "p1"  # pseudo treated
    P0 = "p0"  # pseudo control
    PX = "px"  # pseudo cross-world
    SX = "sx"  # cross-world subsample (odds-weighted treated)


class WeightMethod(str, Enum):
    IPW = "ipw"
    EXPR1 = "expr1-density-ratio"
    EXPR2 = "expr2-odds"
    EXPR3 = "expr3-stacked"
    ODDS = "odds"


class CrossWorldMethod(str, Enum):
    EXPR1 = "expr1"
    EXPR2 = "expr2"
    EXPR3 = "expr3"


class PseudoIdentity(str, Enum):
    PSEUDO_TREATED = "pseudo-treated"
    PSEUDO_CONTROL = "pseudo-control"
    PSEUDO_CROSS_WORLD = "pseudo-cross-world"
    PSEUDO_CROSS_WORLD_SUBSAMPLE = "pseudo-cross-world-subsample"


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Weights over one exposure arm's rows (``index`` into the Dataset)."""
    target: Target
    values: np.ndarray
    index: np.ndarray
    method: WeightMethod
    models: Tuple[str, ...] = ()
    stabilized: bool = False
    capped: int = 0


@dataclass(frozen=True, eq=False)
class PseudoSample:
    view: SampleView
    identity: PseudoIdentity


class WeightSummary(BaseModel):
    target: Target
    method: WeightMethod
    count: int
    mean: float
    min: float
    max: float
    quantiles: Dict[str, float]
    ess: float
    capped: int = 0
