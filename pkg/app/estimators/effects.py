import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import EstimationError, FormulaError
from app.data.schemas import Dataset, Selector
from app.data.service import DataService
from app.formula.schemas import Factor, FormulaSpec
from app.glm.schemas import Family
from app.glm.service import GLMService
from app.estimators.potential_outcomes import (
    ModelInput,
    fit_outcome_cm,
    full_mean,
    predict_y1,
    weighted_view,
)
from app.weights.schemas import PseudoSample, WeightSet

logger = logging.getLogger(__name__)

ARM = "arm"
CADJ_RESPONSE = "__cadj_y"
NDE_RESPONSE = "__nde_proxy"


@dataclass(frozen=True, eq=False)
class Arm:
    """One pseudo sample entering a working model, optionally with a
    substituted outcome over its rows."""
    sample: PseudoSample
    outcome: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CadjResult:
    contrasts: Tuple[float, ...]  # consecutive arm differences
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def nde_fu_ndepred(
    variant: str,
    outcome_cm: ModelInput,
    nde_c: FormulaSpec,
    ds: Dataset,
    omega0: Optional[WeightSet] = None,
    omega_x: Optional[WeightSet] = None,
) -> float:
    """NDE0 from regressing the proxy (predicted Y1M0 - Y) on C among
    (pseudo) controls and averaging its predictions over the full sample.

    Binary outcomes put the proxy in [-1, 1]; it is fitted with the bounded
    logit so predictions stay in range.
    """
    if variant not in ("s1s0", "pxp0"):
        raise EstimationError(f"Unknown variant '{variant}'; expected 's1s0' or 'pxp0'")
    if variant == "pxp0" and omega0 is None:
        raise EstimationError("fuNDEpred(pxp0) needs omega0")
    stage1 = fit_outcome_cm(outcome_cm, ds, omega_x if variant == "pxp0" else None)
    proxy = predict_y1(stage1, ds) - ds.column(ds.outcome)
    staged = DataService.with_columns(ds, {NDE_RESPONSE: proxy})
    sample = weighted_view(staged, Selector.CONTROL, omega0 if variant == "pxp0" else None)
    spec = nde_c.with_response(NDE_RESPONSE)
    if ds.outcome_is_binary:
        model = GLMService.fit_transformed_bounded(spec, sample, -1.0, 1.0)
    else:
        model = GLMService.fit(spec, sample, Family.GAUSSIAN)
    return full_mean(ds, GLMService.predict(model, DataService.full(staged)))


def working_family(ds: Dataset, family: str) -> Family:
    binary = ds.outcome_is_binary
    if family == "auto":
        return Family.BINOMIAL if binary else Family.GAUSSIAN
    if family == "gaussian":
        if binary:
            raise EstimationError("Linear working models are permitted for continuous outcomes only")
        return Family.GAUSSIAN
    if family == "binomial":
        if not binary:
            raise EstimationError("Logit working models need a binary outcome")
        return Family.BINOMIAL
    raise EstimationError(f"Unknown working-model family '{family}'")


def working_spec(working: FormulaSpec, indicators: Sequence[str]) -> FormulaSpec:
    """Working formula with the engine's arm indicators in place of ``arm``."""
    kept = []
    for term in working.terms:
        names = [f.name for f in term]
        if ARM in names:
            if len(term) > 1:
                raise FormulaError(
                    "The arm indicator may not be interacted in a working model", formula=working.text
                )
            continue
        kept.append(term)
    arm_terms = tuple((Factor(name),) for name in indicators)
    return working.with_terms(arm_terms + tuple(kept)).with_response(CADJ_RESPONSE)


def _fit_arms(arms: Sequence[Arm], working: FormulaSpec, ds: Dataset, family: Family) -> CadjResult:
    indicators = [f"__arm_{k}" for k in range(1, len(arms))]
    spec = working_spec(working, indicators)
    y = ds.column(ds.outcome)

    parts = []
    for k, arm in enumerate(arms):
        view = arm.sample.view
        outcome = y[view.index] if arm.outcome is None else np.asarray(arm.outcome, dtype=float)
        if outcome.shape != (view.n,):
            raise EstimationError("Substituted outcome must cover the arm's rows")
        overrides = {CADJ_RESPONSE: outcome}
        overrides.update({name: float(j == k) for j, name in enumerate(indicators, start=1)})
        parts.append((view, overrides))
    stacked = DataService.stack(parts)
    model = GLMService.fit(spec, stacked, family)

    # per-arm mean recovery on the stacked fit
    fitted = GLMService.predict(model, stacked)
    w = stacked.effective_weights
    obs = stacked.column(CADJ_RESPONSE)
    residuals = []
    start = 0
    for view, _ in parts:
        seg = slice(start, start + view.n)
        total = float(np.dot(w[seg], obs[seg]))
        residuals.append(abs(float(np.dot(w[seg], fitted[seg])) - total) / max(1.0, abs(total)))
        start += view.n
    worst = max(residuals)
    if worst > settings.MEAN_RECOVERY_TOL:
        logger.warning(f"Working model group mean recovery residual {worst:.3g} above tolerance")

    if family == Family.GAUSSIAN:
        arm_means = [0.0] + [model.coefficient(name) for name in indicators]
    else:
        arm_means = []
        for k in range(len(arms)):
            pattern = {name: float(j == k) for j, name in enumerate(indicators, start=1)}
            pred = GLMService.predict(model, DataService.full(DataService.with_columns(ds, pattern)))
            arm_means.append(full_mean(ds, pred))
    contrasts = tuple(float(arm_means[k] - arm_means[k - 1]) for k in range(1, len(arm_means)))
    return CadjResult(
        contrasts=contrasts,
        diagnostics={"group_mean_recovery": residuals, "working_family": family.value},
    )


def cadj_effect(
    arms: Sequence[Arm],
    working: FormulaSpec,
    ds: Dataset,
    joint: bool = True,
    family: str = "auto",
) -> CadjResult:
    """Trial-mimicking covariate adjustment across two or three pseudo samples.

    Returns consecutive contrasts: arm 1 - arm 0 (and arm 2 - arm 1). A
    linear working model reads them off the arm coefficients; a logit one
    averages predictions for each arm over the full sample.
    """
    if len(arms) not in (2, 3):
        raise EstimationError("Covariate adjustment takes two or three arms")
    fam = working_family(ds, family)
    if len(arms) == 2 or joint:
        result = _fit_arms(arms, working, ds, fam)
        return CadjResult(result.contrasts, {**result.diagnostics, "joint": len(arms) == 3})
    first = _fit_arms(arms[:2], working, ds, fam)
    second = _fit_arms(arms[1:], working, ds, fam)
    return CadjResult(
        contrasts=first.contrasts + second.contrasts,
        diagnostics={
            "group_mean_recovery": first.diagnostics["group_mean_recovery"] + second.diagnostics["group_mean_recovery"],
            "working_family": fam.value,
            "joint": False,
        },
    )
