from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.exceptions import DataError


class StrictModel(BaseModel):
    """Reject unknown fields so a typo in a run config fails loudly
    instead of silently falling back to a default."""
    model_config = ConfigDict(extra="forbid")


class Role(str, Enum):
    COVARIATE = "covariate"
    EXPOSURE = "exposure"
    MEDIATOR = "mediator"
    OUTCOME = "outcome"


class ColumnType(str, Enum):
    NUMERIC = "numeric"
    BINARY = "binary"
    CATEGORICAL = "categorical"


class Selector(str, Enum):
    FULL = "full"
    TREATED = "treated"
    CONTROL = "control"


# Schema (run-config side)
class ColumnSchema(StrictModel):
    name: str
    role: Role
    type: ColumnType = ColumnType.NUMERIC
    levels: Optional[List[str]] = None


class DatasetSchema(StrictModel):
    columns: List[ColumnSchema] = Field(..., min_length=3)
    missing: Literal["drop", "reject"] = "drop"


class IngestReport(BaseModel):
    rows_read: int
    rows_kept: int
    rows_dropped: int
    treated: int
    control: int


# Domain records
@dataclass(frozen=True, eq=False)
class Dataset:
    """Columnar table with declared roles.

    Numeric and binary columns are float arrays; categorical columns are
    object arrays of strings with an ordered level list (first = reference).
    ``obs_weights`` multiply into every weighted fit and weighted mean; they
    are all ones unless a bootstrap replicate sets them.
    """
    columns: Mapping[str, np.ndarray]
    levels: Mapping[str, Tuple[str, ...]]
    roles: Mapping[str, Role]
    obs_weights: np.ndarray
    dropped_rows: int = 0

    @property
    def n(self) -> int:
        return len(self.obs_weights)

    def _with_role(self, role: Role) -> List[str]:
        return [name for name, r in self.roles.items() if r == role]

    @property
    def exposure(self) -> str:
        return self._with_role(Role.EXPOSURE)[0]

    @property
    def outcome(self) -> str:
        return self._with_role(Role.OUTCOME)[0]

    @property
    def covariates(self) -> List[str]:
        return self._with_role(Role.COVARIATE)

    @property
    def mediators(self) -> List[str]:
        return self._with_role(Role.MEDIATOR)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def is_categorical(self, name: str) -> bool:
        return name in self.levels

    def is_binary(self, name: str) -> bool:
        if self.is_categorical(name):
            return False
        values = self.columns[name]
        return bool(np.all((values == 0.0) | (values == 1.0)))

    @property
    def outcome_is_binary(self) -> bool:
        return self.is_binary(self.outcome)

    @property
    def treated_index(self) -> np.ndarray:
        return np.flatnonzero(self.columns[self.exposure] == 1.0)

    @property
    def control_index(self) -> np.ndarray:
        return np.flatnonzero(self.columns[self.exposure] == 0.0)


@dataclass(frozen=True, eq=False)
class SampleView:
    """Rows of a Dataset selected by exposure arm, with optional analysis weights."""
    base: Dataset
    selector: Selector = Selector.FULL
    weights: Optional[np.ndarray] = None
    index: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.index is None:
            if self.selector == Selector.TREATED:
                idx = self.base.treated_index
            elif self.selector == Selector.CONTROL:
                idx = self.base.control_index
            else:
                idx = np.arange(self.base.n)
            object.__setattr__(self, "index", idx)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(self.index),):
                raise DataError(
                    f"weights have length {w.shape[0] if w.ndim else 0}, "
                    f"expected {len(self.index)} selected rows"
                )
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise DataError("weights must be finite and non-negative")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.index)

    def column(self, name: str) -> np.ndarray:
        return self.base.columns[name][self.index]

    @property
    def effective_weights(self) -> np.ndarray:
        """Observation weights times analysis weights over the selected rows."""
        b = self.base.obs_weights[self.index]
        return b if self.weights is None else b * self.weights

    def weighted_mean(self, values: np.ndarray) -> float:
        w = self.effective_weights
        return float(np.dot(w, values) / w.sum())


ColumnValues = Dict[str, np.ndarray]
