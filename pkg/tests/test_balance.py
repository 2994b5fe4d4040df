import numpy as np
import pytest

from app.balance.service import BalanceService
from app.data.service import DataService
from app.estimators.components import ComponentCache
from app.estimators.schemas import EstimationOptions
from app.formula.parser import parse_formula
from app.glm.service import GLMService
from app.simlab.scenarios import desk_dgp, desk_formulas
from app.simlab.service import generate
from app.weights.service import WeightService
from tests.conftest import make_dataset


def _pseudo(ds):
    prop = GLMService.predict(WeightService.fit_propensity(parse_formula("A ~ C1*C2"), ds), DataService.full(ds))
    omega1, omega0 = WeightService.ipw_weights(prop, ds)
    exposure_cm = WeightService.fit_exposure_model(parse_formula("A ~ C1*C2*M"), ds, "exposure_cm")
    omega_x = WeightService.crossworld_weights("expr2", ds, prop, exposure_cm=exposure_cm)
    return [
        WeightService.pseudo_treated(omega1, ds),
        WeightService.pseudo_control(omega0, ds),
        WeightService.pseudo_crossworld(omega_x, ds),
    ]


def test_unit_weights_against_full_sample_are_balanced(discrete_ds):
    full = DataService.full(discrete_ds)
    report = BalanceService.balance_table(
        discrete_ds, {"p1": full}, comparisons=[("p1", "full", ["C1", "C2"])]
    )
    assert [r.variable for r in report.comparisons] == ["C1", "C2"]
    assert all(r.smd == 0.0 for r in report.comparisons)


def test_saturated_weights_balance_exactly(discrete_ds):
    report = BalanceService.from_pseudo_samples(discrete_ds, _pseudo(discrete_ds))
    assert report.max_abs_smd("p1", "full") < 1e-8
    assert report.max_abs_smd("p0", "full") < 1e-8
    assert report.max_abs_smd("px", "p0", ["C1", "C2", "M"]) < 1e-8
    # the raw arms are confounded by C2
    assert report.max_abs_smd("treated", "full", ["C2"]) > 0.05


def test_default_comparisons_cover_pseudo_samples(discrete_ds):
    report = BalanceService.from_pseudo_samples(discrete_ds, _pseudo(discrete_ds))
    pairs = {(r.sample_a, r.sample_b) for r in report.comparisons}
    assert {("p1", "full"), ("p0", "full"), ("px", "full"), ("p1", "p0"), ("px", "p0"), ("px", "p1")} <= pairs
    mediators = {r.variable for r in report.comparisons if (r.sample_a, r.sample_b) == ("px", "p0")}
    assert "M" in mediators


def test_smd_uses_full_sample_sd(tiny_ds):
    treated = {"t": DataService.subsample(tiny_ds, "treated")}
    report = BalanceService.balance_table(tiny_ds, treated, comparisons=[("t", "full", ["C"])])
    row = report.comparisons[0]
    assert row.mean_a == pytest.approx(0.5)
    assert row.mean_b == pytest.approx(0.5)
    assert report.anchor_sd["C"] == pytest.approx(0.5)


def test_constant_variable_gives_zero_smd(tiny_ds):
    ds = DataService.with_columns(tiny_ds, {"K": 1.0})
    report = BalanceService.balance_table(
        ds, {"t": DataService.subsample(ds, "treated")}, covariates=["K"], mediators=[],
        comparisons=[("t", "full", ["K"])],
    )
    assert report.comparisons[0].smd == 0.0


def test_categorical_levels_expand():
    ds = make_dataset(
        {
            "G": np.array(["a", "b", "a", "b"], dtype=object),
            "A": np.array([1.0, 1.0, 0.0, 0.0]),
            "M": np.array([0.0, 1.0, 1.0, 0.0]),
            "Y": np.arange(4.0),
        },
        {"G": "covariate", "A": "exposure", "M": "mediator", "Y": "outcome"},
        levels={"G": ["a", "b"]},
    )
    report = BalanceService.balance_table(ds, {}, comparisons=[("treated", "control", ["G"])])
    assert [r.variable for r in report.comparisons] == ["G[a]", "G[b]"]


def test_quantiles_for_continuous_variables(desk_ds):
    report = BalanceService.balance_table(desk_ds, {})
    rows = [q for q in report.quantiles if q.variable == "C3" and q.sample == "full"]
    assert len(rows) == 1
    assert rows[0].q05 <= rows[0].q50 <= rows[0].q95
    assert not any(q.variable == "C1" for q in report.quantiles)


def test_to_frame_columns(discrete_ds):
    frame = BalanceService.to_frame(BalanceService.from_pseudo_samples(discrete_ds, _pseudo(discrete_ds)))
    assert list(frame.columns) == ["sample_a", "sample_b", "variable", "mean_a", "mean_b", "smd"]


def test_correct_weights_balance_desk_world():
    ds = generate(desk_dgp(), 10000, seed=10)
    cache = ComponentCache(EstimationOptions(formulas=desk_formulas()), ds, 1)
    pseudo = [WeightService.pseudo_sample(w, ds) for w in (cache.omega1(), cache.omega0(), cache.omega_x())]
    report = BalanceService.from_pseudo_samples(ds, pseudo)
    for pair in [("p1", "full"), ("p0", "full"), ("px", "full"), ("px", "p0")]:
        assert report.max_abs_smd(*pair) < 0.05, pair
