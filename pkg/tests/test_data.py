import numpy as np
import pytest

from app.core.exceptions import DataError, ReportIOError
from app.data.schemas import ColumnSchema, DatasetSchema, Role, SampleView, Selector
from app.data.service import DataService
from tests.conftest import make_dataset

ROLES = {"C": "covariate", "A": "exposure", "M": "mediator", "Y": "outcome"}


def _schema(missing="drop"):
    return DatasetSchema(
        columns=[
            ColumnSchema(name="C", role=Role.COVARIATE),
            ColumnSchema(name="G", role=Role.COVARIATE, type="categorical", levels=["a", "b", "c"]),
            ColumnSchema(name="A", role=Role.EXPOSURE, type="binary"),
            ColumnSchema(name="M", role=Role.MEDIATOR, type="binary"),
            ColumnSchema(name="Y", role=Role.OUTCOME),
        ],
        missing=missing,
    )


def _write(tmp_path, body: str):
    path = tmp_path / "data.csv"
    path.write_text(body)
    return path


CSV = "C,G,A,M,Y,extra\n0.5,a,1,0,1.2,x\n1.5,b,0,1,0.3,y\n,c,1,1,2.0,z\n2.5,c,0,0,0.7,w\n"


def test_ingest_drops_incomplete_rows(tmp_path):
    ds, report = DataService.ingest_csv(_write(tmp_path, CSV), _schema())
    assert ds.n == 3
    assert report.rows_read == 4
    assert report.rows_dropped == 1
    assert (report.treated, report.control) == (1, 2)
    assert "extra" not in ds.columns
    assert ds.levels["G"] == ("a", "b", "c")
    np.testing.assert_array_equal(ds.obs_weights, np.ones(3))


def test_ingest_reject_policy(tmp_path):
    with pytest.raises(DataError, match="missing values"):
        DataService.ingest_csv(_write(tmp_path, CSV), _schema(missing="reject"))


def test_ingest_missing_file(tmp_path):
    with pytest.raises(ReportIOError):
        DataService.ingest_csv(tmp_path / "nope.csv", _schema())


def test_ingest_missing_declared_column(tmp_path):
    with pytest.raises(DataError, match="G"):
        DataService.ingest_csv(_write(tmp_path, "C,A,M,Y\n1,1,0,1\n2,0,1,0\n"), _schema())


def test_ingest_unparseable_numeric(tmp_path):
    body = "C,G,A,M,Y\n0.5,a,1,0,1.2\nabc,b,0,1,0.3\n"
    with pytest.raises(DataError) as exc:
        DataService.ingest_csv(_write(tmp_path, body), _schema())
    assert exc.value.details["row"] == 2


def test_ingest_non_binary_exposure(tmp_path):
    body = "C,G,A,M,Y\n0.5,a,2,0,1.2\n1.5,b,0,1,0.3\n"
    with pytest.raises(DataError, match="binary"):
        DataService.ingest_csv(_write(tmp_path, body), _schema())


def test_ingest_undeclared_level(tmp_path):
    body = "C,G,A,M,Y\n0.5,a,1,0,1.2\n1.5,d,0,1,0.3\n"
    with pytest.raises(DataError, match="levels"):
        DataService.ingest_csv(_write(tmp_path, body), _schema())


def test_build_requires_both_arms():
    cols = {"C": [1.0, 2.0], "A": [1.0, 1.0], "M": [0.0, 1.0], "Y": [0.0, 1.0]}
    with pytest.raises(DataError, match="Control"):
        make_dataset(cols, ROLES)


def test_build_requires_roles():
    cols = {"C": [1.0, 2.0], "A": [1.0, 0.0], "Y": [0.0, 1.0]}
    with pytest.raises(DataError, match="mediator"):
        make_dataset(cols, {"C": "covariate", "A": "exposure", "Y": "outcome"})


def test_build_rejects_non_finite():
    cols = {"C": [1.0, np.nan], "A": [1.0, 0.0], "M": [0.0, 1.0], "Y": [0.0, 1.0]}
    with pytest.raises(DataError, match="non-finite"):
        make_dataset(cols, ROLES)


def test_columns_are_read_only(tiny_ds):
    with pytest.raises(ValueError):
        tiny_ds.columns["Y"][0] = 99.0


def test_subsample_views(tiny_ds):
    treated = DataService.subsample(tiny_ds, "treated")
    control = DataService.subsample(tiny_ds, "control")
    np.testing.assert_array_equal(treated.index, [4, 5, 6, 7])
    np.testing.assert_array_equal(control.index, [0, 1, 2, 3])
    with pytest.raises(DataError):
        DataService.subsample(tiny_ds, "full")


def test_weighted_mean_uses_obs_weights(tiny_ds):
    ds = DataService.with_obs_weights(tiny_ds, np.array([1, 1, 1, 1, 0, 0, 0, 2.0]))
    view = SampleView(ds, Selector.TREATED, np.array([1.0, 1.0, 1.0, 3.0]))
    assert view.weighted_mean(view.column("Y")) == pytest.approx(8.0)


def test_view_weights_validated(tiny_ds):
    with pytest.raises(DataError, match="length"):
        SampleView(tiny_ds, Selector.TREATED, np.ones(3))
    with pytest.raises(DataError, match="non-negative"):
        SampleView(tiny_ds, Selector.TREATED, np.array([1.0, -1.0, 1.0, 1.0]))


def test_with_obs_weights_rejects_negative(tiny_ds):
    with pytest.raises(DataError):
        DataService.with_obs_weights(tiny_ds, -np.ones(tiny_ds.n))


def test_with_columns_leaves_original(tiny_ds):
    ds = DataService.with_columns(tiny_ds, {"A": 1.0, "Z": np.arange(8.0)})
    np.testing.assert_array_equal(ds.column("A"), np.ones(8))
    assert ds.column("Z")[3] == 3.0
    assert tiny_ds.column("A")[0] == 0.0
    assert "Z" not in tiny_ds.columns


def test_stack_overrides_and_weights(tiny_ds):
    treated = SampleView(tiny_ds, Selector.TREATED, np.full(4, 2.0))
    control = SampleView(tiny_ds, Selector.CONTROL)
    stacked = DataService.stack([(treated, {"arm": 1.0}), (control, {"arm": 0.0, "Y": 0.0})])
    assert stacked.n == 8
    np.testing.assert_array_equal(stacked.column("arm"), [1, 1, 1, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(stacked.column("Y")[:4], [5, 6, 7, 8])
    np.testing.assert_array_equal(stacked.column("Y")[4:], 0.0)
    np.testing.assert_array_equal(stacked.effective_weights, [2, 2, 2, 2, 1, 1, 1, 1])
