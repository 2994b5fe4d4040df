import logging
from dataclasses import replace
from typing import Optional, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import EstimationError, FormulaError
from app.data.schemas import Dataset, SampleView, Selector
from app.data.service import DataService
from app.formula.schemas import FormulaSpec
from app.glm.schemas import Family, FittedModel
from app.glm.service import GLMService
from app.meddensity.schemas import FactorizedDensity
from app.meddensity.service import MediatorDensityService
from app.weights.schemas import (
    CrossWorldMethod,
    PseudoIdentity,
    PseudoSample,
    Target,
    WeightMethod,
    WeightSet,
    WeightSummary,
)

logger = logging.getLogger(__name__)

STACK_RESPONSE = "__pseudo_control"
SUMMARY_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

_IDENTITY = {
    Target.P1: (PseudoIdentity.PSEUDO_TREATED, Selector.TREATED),
    Target.P0: (PseudoIdentity.PSEUDO_CONTROL, Selector.CONTROL),
    Target.PX: (PseudoIdentity.PSEUDO_CROSS_WORLD, Selector.TREATED),
    Target.SX: (PseudoIdentity.PSEUDO_CROSS_WORLD_SUBSAMPLE, Selector.TREATED),
}


def _check_positive(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise EstimationError(f"{what} weights must be finite and positive")
    return values


def _obs(ws: WeightSet, ds: Optional[Dataset]) -> np.ndarray:
    return np.ones(len(ws.values)) if ds is None else ds.obs_weights[ws.index]


class WeightService:
    @staticmethod
    def fit_exposure_model(spec: FormulaSpec, ds: Dataset, name: str = "propensity") -> FittedModel:
        """Logit model for the exposure on the full sample, with positivity check."""
        if spec.response != ds.exposure:
            raise FormulaError(
                f"The {name} formula must have the exposure '{ds.exposure}' as response",
                formula=spec.text,
            )
        model = GLMService.fit(spec, DataService.full(ds), Family.BINOMIAL)
        p = GLMService.predict(model, DataService.full(ds))
        eps = settings.POSITIVITY_WARN
        extreme = int(np.sum((p >= 1 - eps) | (p <= eps)))
        if extreme:
            msg = f"Positivity: {extreme} units have {name} within {eps:g} of 0 or 1"
            logger.warning(msg)
            model = replace(model, warnings=model.warnings + (msg,))
        return model

    @staticmethod
    def fit_propensity(spec: FormulaSpec, ds: Dataset) -> FittedModel:
        return WeightService.fit_exposure_model(spec, ds, "propensity")

    @staticmethod
    def ipw_weights(prop: np.ndarray, ds: Dataset, models: Tuple[str, ...] = ("propensity",)) -> Tuple[WeightSet, WeightSet]:
        t, c = ds.treated_index, ds.control_index
        w1 = _check_positive(1.0 / prop[t], "omega1")
        w0 = _check_positive(1.0 / (1.0 - prop[c]), "omega0")
        return (
            WeightSet(Target.P1, w1, t, WeightMethod.IPW, models),
            WeightSet(Target.P0, w0, c, WeightMethod.IPW, models),
        )

    @staticmethod
    def crossworld_weights(
        method: Union[str, CrossWorldMethod],
        ds: Dataset,
        prop: np.ndarray,
        density_control: Optional[FactorizedDensity] = None,
        density_treated: Optional[FactorizedDensity] = None,
        exposure_cm: Optional[FittedModel] = None,
        omega0: Optional[WeightSet] = None,
        stacked_spec: Optional[FormulaSpec] = None,
    ) -> WeightSet:
        """Cross-world weights on treated units by one of three expressions.

        expr1: (1/P(A=1|C)) * P(M|C,A=0) / P(M|C,A=1)
        expr2: (P(A=0|C,M)/P(A=1|C,M)) * 1/P(A=0|C)
        expr3: odds of pseudo-control membership from a weighted logit on
               the treated rows (weight 1) stacked with the pseudo-control
               sample (weight omega0), rescaled by total mass.
        """
        method = CrossWorldMethod(method)
        t = ds.treated_index
        treated = DataService.subsample(ds, "treated")

        if method == CrossWorldMethod.EXPR1:
            if density_control is None or density_treated is None:
                raise EstimationError("expr1 needs mediator densities for both arms")
            f0 = MediatorDensityService.density_at(density_control, treated)
            f1 = MediatorDensityService.density_at(density_treated, treated)
            if np.any(f1 <= 0):
                raise EstimationError(
                    "Zero treated-arm mediator density in the cross-world density ratio",
                    details={"units": int(np.sum(f1 <= 0))},
                )
            values = (1.0 / prop[t]) * f0 / f1
            return WeightSet(
                Target.PX, _check_positive(values, "omega_x"), t, WeightMethod.EXPR1,
                ("propensity", "mediator_density_control", "mediator_density_treated"),
            )

        if method == CrossWorldMethod.EXPR2:
            if exposure_cm is None:
                raise EstimationError("expr2 needs the exposure-given-covariates-and-mediators model")
            q = GLMService.predict(exposure_cm, treated)
            values = ((1.0 - q) / q) / (1.0 - prop[t])
            return WeightSet(
                Target.PX, _check_positive(values, "omega_x"), t, WeightMethod.EXPR2,
                ("propensity", "exposure_cm"),
            )

        if omega0 is None or stacked_spec is None:
            raise EstimationError("expr3 needs omega0 and a stacked classification formula")
        a = ds.column(ds.exposure)
        stacked_ds = DataService.with_columns(ds, {STACK_RESPONSE: 1.0 - a})
        fit_w = np.ones(ds.n)
        fit_w[omega0.index] = omega0.values
        stacked = SampleView(stacked_ds, Selector.FULL, fit_w)
        model = GLMService.fit(stacked_spec.with_response(STACK_RESPONSE), stacked, Family.BINOMIAL)
        p = GLMService.predict(model, SampleView(stacked_ds, Selector.TREATED))
        b = ds.obs_weights
        scale = b.sum() / np.dot(b[omega0.index], omega0.values)
        values = p / (1.0 - p) * scale
        return WeightSet(
            Target.PX, _check_positive(values, "omega_x"), t, WeightMethod.EXPR3,
            ("propensity", "stacked_membership"),
        )

    @staticmethod
    def sx_weights(exposure_cm: FittedModel, ds: Dataset) -> WeightSet:
        t = ds.treated_index
        q = GLMService.predict(exposure_cm, DataService.subsample(ds, "treated"))
        values = (1.0 - q) / q
        return WeightSet(Target.SX, _check_positive(values, "omega_sx"), t, WeightMethod.ODDS, ("exposure_cm",))

    @staticmethod
    def stabilize(ws: WeightSet, ds: Optional[Dataset] = None) -> WeightSet:
        """Rescale to mean 1 over the weight set's units."""
        b = _obs(ws, ds)
        mean = float(np.dot(b, ws.values) / b.sum())
        return replace(ws, values=ws.values / mean, stabilized=True)

    @staticmethod
    def cap_weights(ws: WeightSet, cap: float, ds: Optional[Dataset] = None) -> WeightSet:
        """Stabilize, then truncate weights above ``cap``."""
        if cap <= 0:
            raise EstimationError("Weight cap must be positive")
        stable = WeightService.stabilize(ws, ds)
        over = stable.values > cap
        capped = int(over.sum())
        if capped:
            logger.warning(f"Capped {capped} {ws.target.value} weights at {cap:g} (stabilized scale)")
        return replace(stable, values=np.minimum(stable.values, cap), capped=capped)

    @staticmethod
    def effective_sample_size(ws: WeightSet, ds: Optional[Dataset] = None) -> float:
        w = ws.values * _obs(ws, ds)
        return float(w.sum() ** 2 / np.dot(w, w))

    @staticmethod
    def summarize(ws: WeightSet, ds: Optional[Dataset] = None) -> WeightSummary:
        stable = WeightService.stabilize(ws, ds)
        v = stable.values
        return WeightSummary(
            target=ws.target,
            method=ws.method,
            count=len(v),
            mean=float(v.mean()),
            min=float(v.min()),
            max=float(v.max()),
            quantiles={f"q{int(q * 100):02d}": float(x) for q, x in zip(SUMMARY_QUANTILES, np.quantile(v, SUMMARY_QUANTILES))},
            ess=WeightService.effective_sample_size(ws, ds),
            capped=ws.capped,
        )

    @staticmethod
    def pseudo_sample(ws: WeightSet, ds: Dataset) -> PseudoSample:
        identity, selector = _IDENTITY[ws.target]
        view = SampleView(ds, selector, ws.values)
        if not np.array_equal(view.index, ws.index):
            raise EstimationError(f"{ws.target.value} weights do not cover the {selector.value} subsample")
        return PseudoSample(view, identity)

    @staticmethod
    def pseudo_treated(omega1: WeightSet, ds: Dataset) -> PseudoSample:
        return WeightService.pseudo_sample(omega1, ds)

    @staticmethod
    def pseudo_control(omega0: WeightSet, ds: Dataset) -> PseudoSample:
        return WeightService.pseudo_sample(omega0, ds)

    @staticmethod
    def pseudo_crossworld(omega_x: WeightSet, ds: Dataset) -> PseudoSample:
        return WeightService.pseudo_sample(omega_x, ds)

    @staticmethod
    def pseudo_crossworld_sub(omega_sx: WeightSet, ds: Dataset) -> PseudoSample:
        return WeightService.pseudo_sample(omega_sx, ds)
