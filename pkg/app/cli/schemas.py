from typing import List, Literal, Optional, Union

from pydantic import Field, model_validator

from app.core.config import settings
from app.data.schemas import ColumnSchema, DatasetSchema, StrictModel
from app.estimators.schemas import AnalystFormulas, EstimationOptions
from app.inference.schemas import BootstrapConfig
from app.simlab.schemas import FORMULA_KEYS, ScenarioSpec
from app.weights.schemas import CrossWorldMethod


class DataConfig(StrictModel):
    path: str
    columns: List[ColumnSchema] = Field(..., min_length=3)
    missing: Literal["drop", "reject"] = "drop"

    def to_schema(self) -> DatasetSchema:
        return DatasetSchema(columns=self.columns, missing=self.missing)


class SimulationConfig(StrictModel):
    """Either a named preset or a full scenario."""
    preset: Optional[Literal["desk", "discrete", "null", "robustness"]] = None
    scenario: Optional[ScenarioSpec] = None
    misspecified: List[str] = Field(default_factory=list)
    n: int = Field(default=1000, ge=1)
    reps: int = Field(default=100, ge=1)
    n_truth: int = Field(default=settings.TRUTH_DRAWS, ge=settings.TRUTH_MIN_DRAWS)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.preset is None) == (self.scenario is None):
            raise ValueError("simulation needs exactly one of 'preset' or 'scenario'")
        unknown = [k for k in self.misspecified if k not in FORMULA_KEYS]
        if unknown:
            raise ValueError(f"Unknown formula keys in misspecified: {unknown}")
        return self


class RunConfig(StrictModel):
    data: Optional[DataConfig] = None
    formulas: AnalystFormulas = Field(default_factory=AnalystFormulas)
    estimators: Union[Literal["all"], List[str]] = "all"
    weights_method: CrossWorldMethod = CrossWorldMethod.EXPR2
    msim_mode: Literal["simulate", "exact"] = "simulate"
    n_sim: int = Field(default=settings.MSIM_REPLICATES, ge=1)
    cadj_joint: bool = True
    cadj_family: Literal["auto", "gaussian", "binomial"] = "auto"
    weight_cap: Optional[float] = Field(default=None, gt=0)
    bootstrap: Optional[BootstrapConfig] = None
    simulation: Optional[SimulationConfig] = None
    seed: int = settings.DEFAULT_SEED
    output_dir: str = "out"

    def estimation_options(self) -> EstimationOptions:
        return EstimationOptions(
            formulas=self.formulas,
            weights_method=self.weights_method,
            msim_mode=self.msim_mode,
            n_sim=self.n_sim,
            cadj_joint=self.cadj_joint,
            cadj_family=self.cadj_family,
            weight_cap=self.weight_cap,
        )
