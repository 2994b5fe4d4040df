import json

import numpy as np
import pandas as pd
import pytest

from app.cli.service import cmd_balance, cmd_estimate, cmd_simulate, config_hash, validate_config
from app.core.exceptions import ConfigError
from app.data.service import DataService
from app.estimators.registry import LABELS
from app.main import build_parser, main
from app.simlab.scenarios import discrete_dgp, discrete_formulas
from app.simlab.service import generate

COLUMNS = [
    {"name": "C1", "role": "covariate", "type": "binary"},
    {"name": "C2", "role": "covariate", "type": "binary"},
    {"name": "D", "role": "covariate", "type": "binary"},
    {"name": "A", "role": "exposure", "type": "binary"},
    {"name": "M", "role": "mediator", "type": "binary"},
    {"name": "Y", "role": "outcome", "type": "binary"},
]


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    ds = generate(discrete_dgp(), 1500, seed=77)
    frame = DataService.to_frame(ds)
    frame["D"] = frame["C1"]
    path = tmp_path_factory.mktemp("data") / "study.csv"
    frame.to_csv(path, index=False)
    return path


@pytest.fixture
def raw(csv_path, tmp_path):
    return {
        "data": {"path": str(csv_path), "columns": COLUMNS},
        "formulas": discrete_formulas().model_dump(),
        "msim_mode": "exact",
        "seed": 42,
        "output_dir": str(tmp_path / "out"),
    }


def _write_config(tmp_path, raw, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


class TestValidation:
    def test_valid_config(self, raw):
        cfg = validate_config(raw, "estimate")
        assert cfg.seed == 42
        assert cfg.estimators == "all"

    def test_missing_density_for_simulation_estimator(self, raw):
        raw["formulas"]["mediator_density"] = {}
        raw["estimators"] = ["POs|fuYpred(ss)-fuMsimYpred(s0s1)"]
        with pytest.raises(ConfigError) as exc:
            validate_config(raw, "estimate")
        assert exc.value.errors == ["formulas.mediator_density: required by POs|fuYpred(ss)-fuMsimYpred(s0s1)"]

    def test_every_problem_reported(self, raw):
        raw["estimators"] = ["POs|psYobs-pxYobs", "POs|nope"]
        raw["formulas"]["propensity"] = "A ~ C1 +"
        raw["formulas"]["outcome_cm"] = "Y ~ C1 + Q"
        with pytest.raises(ConfigError) as exc:
            validate_config(raw, "estimate")
        errors = exc.value.errors
        assert len(errors) == 3
        assert "estimators: unknown estimator 'POs|nope'" in errors
        assert any(e.startswith("formulas.propensity:") and "position 8" in e for e in errors)
        assert "formulas.outcome_cm: unknown variables ['Q']" in errors

    def test_required_formula_absent(self, raw):
        raw["formulas"]["exposure_cm"] = None
        raw["estimators"] = ["POs|psYobs-pxYobs"]
        with pytest.raises(ConfigError) as exc:
            validate_config(raw, "estimate")
        assert exc.value.errors == ["formulas.exposure_cm: required by POs|psYobs-pxYobs"]

    def test_density_route_needs_no_exposure_cm(self, raw):
        raw["formulas"]["exposure_cm"] = None
        raw["estimators"] = ["POs|psYobs-pxYobs"]
        raw["weights_method"] = "expr1"
        assert validate_config(raw, "estimate").weights_method.value == "expr1"

    def test_unknown_field_rejected(self, raw):
        raw["bogus"] = 1
        with pytest.raises(ConfigError) as exc:
            validate_config(raw, "estimate")
        assert any(e.startswith("bogus:") for e in exc.value.errors)

    def test_working_formula_may_use_arm(self, raw):
        raw["formulas"]["working"] = "Y ~ arm + C1"
        validate_config(raw, "estimate")

    def test_simulate_needs_simulation_block(self, raw):
        with pytest.raises(ConfigError) as exc:
            validate_config(raw, "simulate")
        assert "simulation: required by 'simulate'" in exc.value.errors

    def test_seed_override_reaches_bootstrap(self, raw):
        raw["bootstrap"] = {"replicates": 10, "seed": 1}
        cfg = validate_config(raw, "estimate", seed=9, out="elsewhere")
        assert cfg.seed == 9 and cfg.bootstrap.seed == 9
        assert cfg.output_dir == "elsewhere"

    def test_config_hash_changes_with_content(self, raw):
        a = config_hash(validate_config(raw, "estimate"))
        raw["n_sim"] = 7
        assert config_hash(validate_config(raw, "estimate")) != a


class TestCommands:
    def test_estimate_outputs(self, raw, tmp_path):
        cfg = validate_config(raw, "estimate")
        assert cmd_estimate(cfg) == 0
        frame = pd.read_csv(tmp_path / "out" / "estimates.csv")
        assert list(frame["estimator"]) == list(LABELS)
        assert frame["error"].isna().all()
        np.testing.assert_allclose(frame["TE"], frame["NDE0"] + frame["NIE1"], atol=1e-10)
        assert (frame["config_hash"] == config_hash(cfg)).all()
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["ingest"]["rows_kept"] == 1500
        assert report["intervals"] is None
        assert "propensity" in report["models"]
        assert {"omega1", "omega0", "omega_x"} <= set(report["weights"])

    def test_estimate_is_reproducible(self, raw, tmp_path):
        cfg = validate_config(raw, "estimate")
        cmd_estimate(cfg)
        first = (tmp_path / "out" / "estimates.csv").read_bytes()
        cmd_estimate(cfg)
        assert (tmp_path / "out" / "estimates.csv").read_bytes() == first

    def test_estimate_identical_across_worker_counts(self, raw, tmp_path):
        raw["estimators"] = ["POs|psYobs-pxYobs", "POs|fuYpred(ss)-fuMsimYpred(s0s1)"]
        raw["bootstrap"] = {"replicates": 6, "seed": 3}
        cfg = validate_config(raw, "estimate")
        cmd_estimate(cfg, workers=1)
        serial = (tmp_path / "out" / "estimates.csv").read_bytes()
        cmd_estimate(cfg, workers=3)
        assert (tmp_path / "out" / "estimates.csv").read_bytes() == serial

    def test_experiment_identical_across_worker_counts(self, raw, tmp_path):
        raw["estimators"] = ["POs|psYobs-pxYobs"]
        raw["simulation"] = {"preset": "discrete", "n": 300, "reps": 4, "n_truth": 100_000}
        cfg = validate_config(raw, "simulate")
        cmd_simulate(cfg, workers=1)
        serial = (tmp_path / "out" / "experiment.csv").read_bytes()
        cmd_simulate(cfg, workers=2)
        assert (tmp_path / "out" / "experiment.csv").read_bytes() == serial

    def test_estimate_with_bootstrap_adds_interval_columns(self, raw, tmp_path):
        raw["estimators"] = ["POs|psYobs-pxYobs"]
        raw["bootstrap"] = {"replicates": 5, "seed": 3}
        cmd_estimate(validate_config(raw, "estimate"))
        frame = pd.read_csv(tmp_path / "out" / "estimates.csv")
        for effect in ("NDE0", "NIE1", "TE"):
            assert frame[f"{effect}_lower"].iloc[0] <= frame[f"{effect}_upper"].iloc[0]
            assert frame[f"{effect}_failures"].iloc[0] == 0

    def test_balance_outputs(self, raw, tmp_path):
        assert cmd_balance(validate_config(raw, "balance")) == 0
        balance = pd.read_csv(tmp_path / "out" / "balance.csv")
        assert {"p1", "p0", "px"} <= set(balance["sample_a"])
        weights = pd.read_csv(tmp_path / "out" / "weights.csv")
        assert list(weights["weights"]) == ["omega1", "omega0", "omega_x", "omega_sx"]
        assert (weights["ess"] > 0).all()

    def test_simulate_outputs(self, raw, tmp_path):
        raw["estimators"] = ["POs|psYobs-pxYobs"]
        raw["simulation"] = {"preset": "discrete", "n": 300, "reps": 2, "n_truth": 100_000}
        assert cmd_simulate(validate_config(raw, "simulate")) == 0
        frame = pd.read_csv(tmp_path / "out" / "experiment.csv")
        assert len(frame) == 3
        assert "coverage" not in frame.columns
        assert set(frame["effect"]) == {"NDE0", "NIE1", "TE"}


class TestExitCodes:
    def test_success(self, raw, tmp_path):
        raw["estimators"] = ["POs|psYobs-pxYobs"]
        assert main(["estimate", "--config", _write_config(tmp_path, raw)]) == 0

    def test_invalid_config(self, raw, tmp_path, capsys):
        raw["formulas"]["propensity"] = "A ~ ns(C1, 0)"
        assert main(["estimate", "--config", _write_config(tmp_path, raw)]) == 2
        err = capsys.readouterr().err.strip().splitlines()[-1]
        assert json.loads(err)["error"]["code"] == "CONFIG_ERROR"

    def test_missing_config_file(self, tmp_path):
        assert main(["estimate", "--config", str(tmp_path / "absent.json")]) == 4

    def test_missing_data_file(self, raw, tmp_path):
        raw["data"]["path"] = str(tmp_path / "absent.csv")
        assert main(["estimate", "--config", _write_config(tmp_path, raw)]) == 4
        assert not (tmp_path / "out").exists()

    @pytest.mark.parametrize("command", ["estimate", "balance"])
    def test_bad_data_leaves_no_output_directory(self, raw, tmp_path, command):
        bad = tmp_path / "bad.csv"
        frame = pd.read_csv(raw["data"]["path"])
        frame.loc[0, "A"] = 2
        frame.to_csv(bad, index=False)
        raw["data"]["path"] = str(bad)
        assert main([command, "--config", _write_config(tmp_path, raw)]) == 2
        assert not (tmp_path / "out").exists()

    def test_all_estimators_failing(self, raw, tmp_path):
        raw["formulas"]["propensity"] = "A ~ C1 + D"
        raw["estimators"] = ["POs|psYobs-pxYobs"]
        assert main(["estimate", "--config", _write_config(tmp_path, raw)]) == 3

    def test_bad_worker_count(self, raw, tmp_path):
        assert main(["estimate", "--config", _write_config(tmp_path, raw), "--workers", "0"]) == 2

    def test_help_lists_exit_codes(self):
        text = build_parser().format_help()
        assert "2  invalid run config, data file contents or formula" in text
        assert "4  a file could not be read or written" in text
