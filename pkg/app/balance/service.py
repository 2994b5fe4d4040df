import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.balance.schemas import BalanceReport, BalanceRow, QuantileRow
from app.core.exceptions import DataError
from app.data.schemas import Dataset, SampleView, Selector
from app.data.service import DataService
from app.weights.schemas import PseudoIdentity, PseudoSample

logger = logging.getLogger(__name__)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

SAMPLE_NAMES = {
    PseudoIdentity.PSEUDO_TREATED: "p1",
    PseudoIdentity.PSEUDO_CONTROL: "p0",
    PseudoIdentity.PSEUDO_CROSS_WORLD: "px",
    PseudoIdentity.PSEUDO_CROSS_WORLD_SUBSAMPLE: "sx",
}


def _expand(ds: Dataset, variables: Iterable[str]) -> List[Tuple[str, str, np.ndarray]]:
    """(variable, label, full-length numeric column); categoricals become level indicators."""
    out = []
    for var in variables:
        if var not in ds.columns:
            raise DataError(f"Balance variable '{var}' is not a column")
        values = ds.column(var)
        if ds.is_categorical(var):
            for level in ds.levels[var]:
                out.append((var, f"{var}[{level}]", (values == level).astype(float)))
        else:
            out.append((var, var, values.astype(float)))
    return out


def _weighted_mean(view: SampleView, column: np.ndarray) -> float:
    return view.weighted_mean(column[view.index])


def _standardized(diff: float, sd: float) -> float:
    if sd > 0:
        return diff / sd
    if diff == 0:
        return 0.0
    return float(np.copysign(np.inf, diff))


def default_comparisons(names: Sequence[str], covariates: List[str], mediators: List[str]) -> List[Tuple[str, str, List[str]]]:
    present = set(names)
    pairs: List[Tuple[str, str, List[str]]] = []
    for raw in ("treated", "control"):
        pairs.append((raw, "full", covariates))
    for name in ("p1", "p0", "px"):
        if name in present:
            pairs.append((name, "full", covariates))
    if {"p1", "p0"} <= present:
        pairs.append(("p1", "p0", covariates))
    if {"px", "p0"} <= present:
        pairs.append(("px", "p0", covariates + mediators))
    if {"px", "p1"} <= present:
        pairs.append(("px", "p1", covariates))
    return pairs


class BalanceService:
    @staticmethod
    def balance_table(
        ds: Dataset,
        samples: Mapping[str, SampleView],
        covariates: Optional[List[str]] = None,
        mediators: Optional[List[str]] = None,
        comparisons: Optional[List[Tuple[str, str, List[str]]]] = None,
    ) -> BalanceReport:
        """Weighted-mean comparisons between samples, standardized by the
        full-sample standard deviation of each variable."""
        covariates = list(ds.covariates if covariates is None else covariates)
        mediators = list(ds.mediators if mediators is None else mediators)
        views: Dict[str, SampleView] = {
            "full": DataService.full(ds),
            "treated": SampleView(ds, Selector.TREATED),
            "control": SampleView(ds, Selector.CONTROL),
        }
        views.update(samples)
        pairs = comparisons or default_comparisons(list(samples), covariates, mediators)

        columns = _expand(ds, dict.fromkeys(covariates + mediators))
        full = views["full"]
        anchor_sd: Dict[str, float] = {}
        for _, label, col in columns:
            mean = _weighted_mean(full, col)
            w = full.effective_weights
            anchor_sd[label] = float(np.sqrt(np.dot(w, (col - mean) ** 2) / w.sum()))

        rows: List[BalanceRow] = []
        for name_a, name_b, variables in pairs:
            if name_a not in views or name_b not in views:
                raise DataError(f"Unknown sample in balance comparison ({name_a}, {name_b})")
            va, vb = views[name_a], views[name_b]
            for var, label, col in columns:
                if var not in variables:
                    continue
                ma, mb = _weighted_mean(va, col), _weighted_mean(vb, col)
                rows.append(BalanceRow(
                    sample_a=name_a, sample_b=name_b, variable=label,
                    mean_a=ma, mean_b=mb, smd=_standardized(ma - mb, anchor_sd[label]),
                ))

        quantiles: List[QuantileRow] = []
        continuous = [(v, label, col) for v, label, col in columns if not ds.is_categorical(v) and not ds.is_binary(v)]
        for name, view in views.items():
            w = view.effective_weights
            for _, label, col in continuous:
                qs = np.quantile(col[view.index], QUANTILES, weights=w, method="inverted_cdf")
                quantiles.append(QuantileRow(sample=name, variable=label, **{
                    f"q{int(q * 100):02d}": float(x) for q, x in zip(QUANTILES, qs)
                }))

        return BalanceReport(comparisons=rows, anchor_sd=anchor_sd, quantiles=quantiles)

    @staticmethod
    def from_pseudo_samples(ds: Dataset, pseudo: Sequence[PseudoSample], **kwargs) -> BalanceReport:
        samples = {SAMPLE_NAMES[p.identity]: p.view for p in pseudo}
        return BalanceService.balance_table(ds, samples, **kwargs)

    @staticmethod
    def to_frame(report: BalanceReport) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in report.comparisons])
