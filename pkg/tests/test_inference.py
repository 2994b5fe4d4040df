import numpy as np
import pytest

from app.core.exceptions import EstimationError
from app.data.service import DataService
from app.estimators.schemas import EstimationOptions
from app.estimators.service import EstimatorService
from app.inference.schemas import BootstrapConfig, BootstrapScheme
from app.inference.service import InferenceService, draw_bootstrap_weights, percentile_interval
from app.simlab.scenarios import desk_dgp, desk_formulas
from app.simlab.service import generate


def weighted_outcome_mean(ds, seed):
    return {"mean|TE": DataService.full(ds).weighted_mean(ds.column("Y"))}


class TestBootstrapWeights:
    def test_single_unit(self):
        np.testing.assert_array_equal(
            draw_bootstrap_weights(1, BootstrapScheme.DIRICHLET, np.random.default_rng(0)), [1.0]
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            draw_bootstrap_weights(0, "dirichlet", np.random.default_rng(0))

    def test_dirichlet_sums_to_n_and_stays_positive(self):
        w = draw_bootstrap_weights(500, "dirichlet", np.random.default_rng(1))
        assert w.sum() == pytest.approx(500.0)
        assert np.all(w > 0)

    def test_multinomial_counts(self):
        w = draw_bootstrap_weights(50, "multinomial", np.random.default_rng(2))
        assert w.sum() == 50
        np.testing.assert_array_equal(w, np.round(w))

    @pytest.mark.slow
    def test_dirichlet_moments(self):
        rng = np.random.default_rng(3)
        draws = np.array([draw_bootstrap_weights(4, "dirichlet", rng) for _ in range(1_000_000)])
        assert draws[:, 0].mean() == pytest.approx(1.0, abs=0.01)
        assert draws[:, 0].var() == pytest.approx(3 / 5, abs=0.01)


def test_percentile_interval_uses_linear_quantiles():
    lower, upper = percentile_interval(np.arange(1.0, 101.0), 0.95)
    assert lower == pytest.approx(3.475)
    assert upper == pytest.approx(97.525)


def test_constant_pipeline_gives_degenerate_interval(tiny_ds):
    cfg = BootstrapConfig(replicates=20, seed=4)
    report = InferenceService.bootstrap_ci(lambda ds, seed: {"c|TE": 0.3}, tiny_ds, cfg)
    row = report.row("c|TE")
    assert (row.lower, row.upper) == (pytest.approx(0.3), pytest.approx(0.3))
    assert row.estimator == "c" and row.effect == "TE"
    assert row.reliable and row.failures == 0


def test_replicates_reweight_the_data(tiny_ds):
    cfg = BootstrapConfig(replicates=50, seed=5)
    report = InferenceService.bootstrap_ci(weighted_outcome_mean, tiny_ds, cfg)
    row = report.row("mean|TE")
    assert row.estimate == pytest.approx(4.5)
    assert row.lower < 4.5 < row.upper
    assert report.quantile_method == "linear"


def test_same_seed_same_interval(tiny_ds):
    cfg = BootstrapConfig(replicates=30, seed=6)
    a = InferenceService.bootstrap_ci(weighted_outcome_mean, tiny_ds, cfg).row("mean|TE")
    b = InferenceService.bootstrap_ci(weighted_outcome_mean, tiny_ds, cfg).row("mean|TE")
    assert (a.lower, a.upper) == (b.lower, b.upper)


def test_failures_mark_interval_unreliable(tiny_ds):
    def flaky(ds, seed):
        if ds.obs_weights[0] > 0.5:
            raise EstimationError("boom")
        return {"f|TE": 1.0}

    cfg = BootstrapConfig(replicates=40, seed=7)
    row = InferenceService.bootstrap_ci(flaky, tiny_ds, cfg, point={"f|TE": 1.0}).row("f|TE")
    assert row.failures > 0.2 * 40
    assert not row.reliable


def test_nan_values_count_as_failures(tiny_ds):
    cfg = BootstrapConfig(replicates=10, seed=8)
    row = InferenceService.bootstrap_ci(
        lambda ds, seed: {"n|TE": float("nan")}, tiny_ds, cfg, point={"n|TE": 0.0}
    ).row("n|TE")
    assert row.failures == 10
    assert row.lower is None and row.upper is None


def test_config_bounds():
    with pytest.raises(ValueError):
        BootstrapConfig(replicates=1)
    with pytest.raises(ValueError):
        BootstrapConfig(level=1.0)


def test_menu_bootstrap_brackets_estimate(discrete_ds, discrete_options):
    labels = ["POs|psYobs-pxYobs"]
    pipeline = EstimatorService.menu_pipeline(discrete_options, labels)
    report = InferenceService.bootstrap_ci(pipeline, discrete_ds, BootstrapConfig(replicates=20, seed=9))
    for effect in ("NDE0", "NIE1", "TE"):
        row = report.row(f"POs|psYobs-pxYobs|{effect}")
        assert row.reliable
        assert row.lower <= row.upper


def test_intervals_do_not_depend_on_worker_count():
    ds = generate(desk_dgp(), 400, seed=3)
    options = EstimationOptions(formulas=desk_formulas(), n_sim=2)
    pipeline = EstimatorService.menu_pipeline(options, ["POs|psYobs-pxYobs", "POs|fuYpred(ps)-fuMsimYpred(p0px)"])
    cfg = BootstrapConfig(replicates=6, seed=4)
    serial = InferenceService.bootstrap_ci(pipeline, ds, cfg, workers=1)
    parallel = InferenceService.bootstrap_ci(pipeline, ds, cfg, workers=3)
    assert serial.model_dump() == parallel.model_dump()
    assert pipeline(ds, 4) == {row.key: row.estimate for row in serial.rows}
