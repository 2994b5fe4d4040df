"""reg| and cross| building blocks.

reg| blocks estimate (E[Y1], E[Y0]); cross| blocks estimate E[Y1M0].
Model arguments accept either a formula, fitted here on the sample the
variant prescribes, or an already fitted model shared across blocks.
Every full-sample average is weighted by the observation weights.
"""
import logging
from typing import Optional, Tuple, Union

import numpy as np

from app.core.exceptions import EstimationError
from app.data.schemas import Dataset, SampleView, Selector
from app.data.service import DataService
from app.formula.schemas import FormulaSpec
from app.glm.schemas import FittedModel
from app.glm.service import GLMService
from app.meddensity.schemas import FactorizedDensity
from app.meddensity.service import MediatorDensityService
from app.weights.schemas import WeightSet

logger = logging.getLogger(__name__)

ModelInput = Union[FormulaSpec, FittedModel]

STAGE2_RESPONSE = "__y1m0_pred"


def outcome_family(ds: Dataset):
    return GLMService.family_for(ds.outcome_is_binary)


def weighted_view(ds: Dataset, selector: Selector, ws: Optional[WeightSet] = None) -> SampleView:
    if ws is None:
        return SampleView(ds, selector)
    view = SampleView(ds, selector, ws.values)
    if not np.array_equal(view.index, ws.index):
        raise EstimationError(f"{ws.target.value} weights do not match the {selector.value} subsample")
    return view


def set_exposure(ds: Dataset, value: float) -> Dataset:
    return DataService.with_columns(ds, {ds.exposure: value})


def fit_on(model: ModelInput, sample: SampleView, family=None) -> FittedModel:
    if isinstance(model, FittedModel):
        return model
    return GLMService.fit(model, sample, family or outcome_family(sample.base))


def full_mean(ds: Dataset, values: np.ndarray) -> float:
    return DataService.full(ds).weighted_mean(values)


def _require(variant: str, allowed: Tuple[str, ...]) -> str:
    if variant not in allowed:
        raise EstimationError(f"Unknown variant '{variant}'; expected one of {allowed}")
    return variant


def predict_y1(model: FittedModel, ds: Dataset, selector: Selector = Selector.FULL) -> np.ndarray:
    """Predictions with the exposure set to 1 over the selected rows."""
    # rows are selected on the observed exposure, before it is overwritten
    index = SampleView(ds, selector).index
    return GLMService.predict(model, SampleView(set_exposure(ds, 1.0), selector, None, index))


# reg|
def reg_ps_yobs(omega1: WeightSet, omega0: WeightSet, ds: Dataset) -> Tuple[float, float]:
    y = ds.column(ds.outcome)
    p1 = weighted_view(ds, Selector.TREATED, omega1)
    p0 = weighted_view(ds, Selector.CONTROL, omega0)
    return p1.weighted_mean(y[p1.index]), p0.weighted_mean(y[p0.index])


def fit_outcome_arm(model: ModelInput, ds: Dataset, arm: int, weights: Optional[WeightSet] = None) -> FittedModel:
    selector = Selector.TREATED if arm == 1 else Selector.CONTROL
    return fit_on(model, weighted_view(ds, selector, weights))


def reg_fu_ypred(
    variant: str,
    outcome_c1: ModelInput,
    outcome_c0: ModelInput,
    ds: Dataset,
    omega1: Optional[WeightSet] = None,
    omega0: Optional[WeightSet] = None,
) -> Tuple[float, float]:
    """Fit E[Y|C,A=a] on each (pseudo) arm and average predictions over the full sample."""
    _require(variant, ("ss", "ps"))
    if variant == "ps" and (omega1 is None or omega0 is None):
        raise EstimationError("fuYpred(ps) needs omega1 and omega0")
    m1 = fit_outcome_arm(outcome_c1, ds, 1, omega1 if variant == "ps" else None)
    m0 = fit_outcome_arm(outcome_c0, ds, 0, omega0 if variant == "ps" else None)
    ey1 = full_mean(ds, GLMService.predict(m1, SampleView(set_exposure(ds, 1.0))))
    ey0 = full_mean(ds, GLMService.predict(m0, SampleView(set_exposure(ds, 0.0))))
    return ey1, ey0


# cross|
def cross_px_yobs(omega_x: WeightSet, ds: Dataset) -> float:
    px = weighted_view(ds, Selector.TREATED, omega_x)
    return px.weighted_mean(ds.column(ds.outcome)[px.index])


def fit_outcome_cm(model: ModelInput, ds: Dataset, omega_x: Optional[WeightSet] = None) -> FittedModel:
    """E[Y|C,M,A=1] on the treated subsample (s1) or pseudo cross-world sample (px)."""
    return fit_on(model, weighted_view(ds, Selector.TREATED, omega_x))


def cross_p0_ypred(
    variant: str,
    outcome_cm: ModelInput,
    omega0: WeightSet,
    ds: Dataset,
    omega_x: Optional[WeightSet] = None,
) -> float:
    """Average predicted Y1M0 over the pseudo control sample."""
    _require(variant, ("s1", "px"))
    if variant == "px" and omega_x is None and not isinstance(outcome_cm, FittedModel):
        raise EstimationError("p0Ypred(px) needs omega_x")
    model = fit_outcome_cm(outcome_cm, ds, omega_x if variant == "px" else None)
    pred = predict_y1(model, ds, Selector.CONTROL)
    return weighted_view(ds, Selector.CONTROL, omega0).weighted_mean(pred)


def cross_fu_ypred(
    variant: str,
    y1m0_c: ModelInput,
    ds: Dataset,
    omega_sx: Optional[WeightSet] = None,
    omega_x: Optional[WeightSet] = None,
) -> float:
    """Regress Y on C in the odds- or cross-world-weighted treated sample,
    then average the predictions over the full sample."""
    _require(variant, ("sx", "px"))
    weights = omega_sx if variant == "sx" else omega_x
    if weights is None and not isinstance(y1m0_c, FittedModel):
        raise EstimationError(f"fuYpred({variant}) needs its weights")
    model = fit_on(y1m0_c, weighted_view(ds, Selector.TREATED, weights))
    return full_mean(ds, predict_y1(model, ds))


def predicted_y1m0_column(model: FittedModel, ds: Dataset) -> Dataset:
    """Dataset with the predicted Y1M0 of every row as a derived column."""
    return DataService.with_columns(ds, {STAGE2_RESPONSE: predict_y1(model, ds)})


def cross_fu_y2pred(
    variant: str,
    outcome_cm: ModelInput,
    y1m0_c: FormulaSpec,
    ds: Dataset,
    omega0: Optional[WeightSet] = None,
    omega_x: Optional[WeightSet] = None,
) -> float:
    """Double outcome fit: predicted Y1M0 on controls regressed on C, then
    averaged over the full sample."""
    _require(variant, ("s1s0", "pxp0"))
    if variant == "pxp0" and omega0 is None:
        raise EstimationError("fuY2pred(pxp0) needs omega0")
    stage1 = fit_outcome_cm(outcome_cm, ds, omega_x if variant == "pxp0" else None)
    staged = predicted_y1m0_column(stage1, ds)
    stage2 = GLMService.fit(
        y1m0_c.with_response(STAGE2_RESPONSE),
        weighted_view(staged, Selector.CONTROL, omega0 if variant == "pxp0" else None),
        outcome_family(ds),
    )
    return full_mean(ds, GLMService.predict(stage2, DataService.full(staged)))


def cross_fu_msim_ypred(
    variant: str,
    density: FactorizedDensity,
    outcome_cm: ModelInput,
    ds: Dataset,
    n_sim: int,
    rng: Optional[np.random.Generator] = None,
    omega_x: Optional[WeightSet] = None,
    mode: str = "simulate",
) -> float:
    """Average predicted Y1M0 over mediators drawn from the fitted P(M|C,A=0).

    ``mode="exact"`` sums over the mediator lattice instead of drawing
    (all mediators binary); ``density`` must already be fitted on the
    control (s0) or pseudo-control (p0) sample.
    """
    _require(variant, ("s0s1", "p0px"))
    model = fit_outcome_cm(outcome_cm, ds, omega_x if variant == "p0px" else None)
    full = DataService.full(ds)
    ds1 = set_exposure(ds, 1.0)

    if mode == "exact":
        expected = np.zeros(ds.n)
        for point, mass in MediatorDensityService.lattice_masses(density, full):
            expected += mass * GLMService.predict(model, DataService.full(DataService.with_columns(ds1, point)))
        return full_mean(ds, expected)

    if mode != "simulate":
        raise EstimationError(f"Unknown mediator simulation mode '{mode}'")
    if rng is None:
        raise EstimationError("Mediator simulation needs a random stream")
    total = 0.0
    for _ in range(n_sim):
        draws = MediatorDensityService.simulate(density, full, rng)
        total += full_mean(ds, GLMService.predict(model, DataService.full(DataService.with_columns(ds1, draws))))
    return total / n_sim
