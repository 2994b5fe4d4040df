from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field

from app.core.config import settings
from app.data.schemas import StrictModel


class BootstrapScheme(str, Enum):
    DIRICHLET = "dirichlet"      # continuous weights, all observations retained
    MULTINOMIAL = "multinomial"  # classic resampling, integer weights


class BootstrapConfig(StrictModel):
    replicates: int = Field(default=settings.BOOTSTRAP_REPLICATES, ge=2)
    level: float = Field(default=settings.BOOTSTRAP_LEVEL, gt=0, lt=1)
    seed: int = settings.DEFAULT_SEED
    scheme: BootstrapScheme = BootstrapScheme.DIRICHLET


class IntervalRow(BaseModel):
    key: str
    estimator: str
    effect: str
    estimate: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    failures: int = 0
    reliable: bool = True
    sandwich_se: Optional[float] = None  # reserved, never computed


class IntervalReport(BaseModel):
    level: float
    replicates: int
    scheme: BootstrapScheme
    seed: int
    quantile_method: str = "linear"
    rows: List[IntervalRow] = Field(default_factory=list)

    def row(self, key: str) -> IntervalRow:
        for r in self.rows:
            if r.key == key:
                return r
        raise KeyError(key)
