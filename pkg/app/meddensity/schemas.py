from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

from app.glm.schemas import FittedModel


class FactorKind(str, Enum):
    BINARY = "binary"          # logit factor
    CONTINUOUS = "continuous"  # linear-normal factor, constant variance


@dataclass(frozen=True, eq=False)
class DensityFactor:
    mediator: str
    kind: FactorKind
    model: FittedModel
    sigma2: Optional[float] = None


@dataclass(frozen=True, eq=False)
class FactorizedDensity:
    """P(M|C) as a product of per-mediator conditionals in a fixed order."""
    order: Tuple[str, ...]
    factors: Tuple[DensityFactor, ...]
    fitted_on: str

    @property
    def all_binary(self) -> bool:
        return all(f.kind == FactorKind.BINARY for f in self.factors)
