import numpy as np
import pytest

from app.core.exceptions import EstimationError, FormulaError
from app.data.schemas import SampleView, Selector
from app.data.service import DataService
from app.estimators.components import ComponentCache
from app.estimators.schemas import EstimationOptions
from app.formula.parser import parse_formula
from app.glm.service import GLMService
from app.meddensity.service import MediatorDensityService
from app.simlab.scenarios import desk_dgp, desk_formulas
from app.simlab.service import generate
from app.weights.schemas import CrossWorldMethod, PseudoIdentity, Target, WeightMethod, WeightSet
from app.weights.service import WeightService


def _prop(ds):
    model = WeightService.fit_propensity(parse_formula("A ~ C1*C2"), ds)
    return GLMService.predict(model, DataService.full(ds))


def _crossworld(ds, method):
    prop = _prop(ds)
    omega1, omega0 = WeightService.ipw_weights(prop, ds)
    specs = {"M": parse_formula("M ~ C1*C2")}
    exposure_cm = WeightService.fit_exposure_model(parse_formula("A ~ C1*C2*M"), ds, "exposure_cm")
    return WeightService.crossworld_weights(
        method,
        ds,
        prop,
        density_control=MediatorDensityService.fit_density(["M"], specs, SampleView(ds, Selector.CONTROL)),
        density_treated=MediatorDensityService.fit_density(["M"], specs, SampleView(ds, Selector.TREATED), "treated"),
        exposure_cm=exposure_cm,
        omega0=omega0,
        stacked_spec=parse_formula("A ~ C1*C2*M"),
    )


def test_ipw_weights_are_inverse_probabilities(discrete_ds):
    prop = _prop(discrete_ds)
    omega1, omega0 = WeightService.ipw_weights(prop, discrete_ds)
    np.testing.assert_allclose(omega1.values, 1.0 / prop[discrete_ds.treated_index])
    np.testing.assert_allclose(omega0.values, 1.0 / (1.0 - prop[discrete_ds.control_index]))
    assert omega1.target == Target.P1 and omega0.target == Target.P0
    assert omega1.method == WeightMethod.IPW


def test_saturated_ipw_sums_to_sample_size(discrete_ds):
    omega1, omega0 = WeightService.ipw_weights(_prop(discrete_ds), discrete_ds)
    assert omega1.values.sum() == pytest.approx(discrete_ds.n, rel=1e-9)
    assert omega0.values.sum() == pytest.approx(discrete_ds.n, rel=1e-9)


def test_propensity_response_must_be_exposure(discrete_ds):
    with pytest.raises(FormulaError, match="exposure"):
        WeightService.fit_propensity(parse_formula("M ~ C1"), discrete_ds)


def test_three_crossworld_expressions_agree_when_saturated(discrete_ds):
    values = {m: _crossworld(discrete_ds, m).values for m in CrossWorldMethod}
    np.testing.assert_allclose(values[CrossWorldMethod.EXPR1], values[CrossWorldMethod.EXPR2], rtol=1e-8)
    np.testing.assert_allclose(values[CrossWorldMethod.EXPR3], values[CrossWorldMethod.EXPR2], rtol=1e-8)


def test_crossworld_weights_live_on_treated(discrete_ds):
    ws = _crossworld(discrete_ds, CrossWorldMethod.EXPR2)
    assert ws.target == Target.PX
    np.testing.assert_array_equal(ws.index, discrete_ds.treated_index)
    assert np.all(ws.values > 0)


def test_expr1_needs_both_densities(discrete_ds):
    with pytest.raises(EstimationError, match="densities"):
        WeightService.crossworld_weights("expr1", discrete_ds, _prop(discrete_ds))


def test_sx_weights_are_odds(discrete_ds):
    model = WeightService.fit_exposure_model(parse_formula("A ~ C1*C2*M"), discrete_ds, "exposure_cm")
    ws = WeightService.sx_weights(model, discrete_ds)
    q = GLMService.predict(model, SampleView(discrete_ds, Selector.TREATED))
    np.testing.assert_allclose(ws.values, (1 - q) / q)
    assert ws.target == Target.SX


def _ws(values):
    values = np.asarray(values, dtype=float)
    return WeightSet(Target.P1, values, np.arange(len(values)), WeightMethod.IPW)


def test_stabilize_to_mean_one():
    stable = WeightService.stabilize(_ws([1.0, 2.0, 3.0, 6.0]))
    assert stable.values.mean() == pytest.approx(1.0)
    assert stable.stabilized


def test_cap_truncates_on_stabilized_scale():
    capped = WeightService.cap_weights(_ws([1.0, 1.0, 1.0, 9.0]), cap=2.0)
    np.testing.assert_allclose(capped.values, [1 / 3, 1 / 3, 1 / 3, 2.0])
    assert capped.capped == 1


def test_effective_sample_size():
    assert WeightService.effective_sample_size(_ws(np.full(10, 3.0))) == pytest.approx(10.0)
    assert WeightService.effective_sample_size(_ws([1.0, 0.0, 0.0, 0.0])) == pytest.approx(1.0)


def test_summary_quantiles_and_ess(discrete_ds):
    omega1, _ = WeightService.ipw_weights(_prop(discrete_ds), discrete_ds)
    summary = WeightService.summarize(omega1, discrete_ds)
    assert summary.count == len(discrete_ds.treated_index)
    assert summary.mean == pytest.approx(1.0)
    assert summary.min <= summary.quantiles["q50"] <= summary.max
    assert 0 < summary.ess <= summary.count


def test_pseudo_samples_carry_identity(discrete_ds):
    omega1, omega0 = WeightService.ipw_weights(_prop(discrete_ds), discrete_ds)
    p1 = WeightService.pseudo_treated(omega1, discrete_ds)
    p0 = WeightService.pseudo_control(omega0, discrete_ds)
    assert p1.identity == PseudoIdentity.PSEUDO_TREATED
    assert p0.identity == PseudoIdentity.PSEUDO_CONTROL
    np.testing.assert_array_equal(p0.view.index, discrete_ds.control_index)


def test_non_positive_weights_rejected(discrete_ds):
    prop = np.ones(discrete_ds.n)
    with pytest.raises(EstimationError, match="omega0"):
        WeightService.ipw_weights(prop, discrete_ds)


def test_stacked_and_odds_crossworld_agree_on_desk_world():
    ds = generate(desk_dgp(), 10000, seed=9)
    means = {}
    for method in ("expr2", "expr3"):
        cache = ComponentCache(EstimationOptions(formulas=desk_formulas(), weights_method=method), ds, 1)
        view = SampleView(ds, Selector.TREATED, cache.omega_x().values)
        means[method] = [view.weighted_mean(ds.column(v)[view.index]) for v in ("C1", "C2", "C3", "M1", "M2", "Y")]
    np.testing.assert_allclose(means["expr3"], means["expr2"], rtol=0.02)
