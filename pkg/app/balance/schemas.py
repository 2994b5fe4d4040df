from typing import Dict, List, Optional

from pydantic import BaseModel


class BalanceRow(BaseModel):
    sample_a: str
    sample_b: str
    variable: str
    mean_a: float
    mean_b: float
    smd: float


class QuantileRow(BaseModel):
    sample: str
    variable: str
    q05: float
    q25: float
    q50: float
    q75: float
    q95: float


class BalanceReport(BaseModel):
    comparisons: List[BalanceRow]
    anchor_sd: Dict[str, float]
    quantiles: List[QuantileRow] = []

    def max_abs_smd(self, sample_a: str, sample_b: str, variables: Optional[List[str]] = None) -> float:
        rows = [
            r for r in self.comparisons
            if r.sample_a == sample_a and r.sample_b == sample_b
            and (variables is None or any(r.variable == v or r.variable.startswith(v + "[") for v in variables))
        ]
        return max((abs(r.smd) for r in rows), default=0.0)
