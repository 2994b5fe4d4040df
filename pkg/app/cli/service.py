import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import ValidationError

from app.balance.service import BalanceService
from app.cli.schemas import RunConfig
from app.core.config import settings
from app.core.exceptions import ConfigError, FormulaError, ReportIOError
from app.core.rng import child_seed
from app.data.service import DataService
from app.estimators.components import ComponentCache
from app.estimators.registry import LABELS, get_entry, required_formulas
from app.estimators.service import EFFECTS, EstimatorService
from app.formula.parser import parse_formula
from app.glm.service import GLMService
from app.inference.service import InferenceService
from app.simlab.scenarios import (
    desk_dgp,
    desk_formulas,
    discrete_dgp,
    discrete_formulas,
    null_dgp,
    robustness_suite,
)
from app.simlab.schemas import ScenarioSpec, TruthReport
from app.simlab.service import SimulationService, true_effects
from app.weights.schemas import CrossWorldMethod
from app.weights.service import WeightService

logger = logging.getLogger(__name__)

COMMANDS = ("estimate", "balance", "simulate")

# engine-supplied variables a formula may name without a data column
_FREE_VARIABLES = {"working": {"arm"}}


def load_config(path: str) -> Dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Could not read config file: {e}", path=str(path))
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("Config file is not valid JSON", errors=[f"line {e.lineno} column {e.colno}: {e.msg}"])


def _pydantic_errors(e: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()]


def _formula_texts(cfg: RunConfig) -> List[Tuple[str, str]]:
    f = cfg.formulas
    out = [(key, getattr(f, key)) for key in (
        "propensity", "exposure_cm", "outcome_c1", "outcome_c0", "outcome_cm", "y1m0_c", "nde_c", "working",
    ) if getattr(f, key)]
    out += [(f"mediator_density.{m}", text) for m, text in f.mediator_density.items()]
    return out


def _check_formulas(cfg: RunConfig, errors: List[str]) -> None:
    declared = {c.name for c in cfg.data.columns} if cfg.data else None
    for key, text in _formula_texts(cfg):
        try:
            spec = parse_formula(text)
        except FormulaError as e:
            errors.append(f"formulas.{key}: {e.message}")
            continue
        if declared is None:
            continue
        free = _FREE_VARIABLES.get(key, set())
        unknown = [v for v in (spec.response,) + spec.variables if v not in declared and v not in free]
        if unknown:
            errors.append(f"formulas.{key}: unknown variables {unknown}")


def _mediators(cfg: RunConfig) -> List[str]:
    if cfg.formulas.mediator_order:
        return list(cfg.formulas.mediator_order)
    if cfg.data:
        return [c.name for c in cfg.data.columns if c.role.value == "mediator"]
    return []


def _check_required(cfg: RunConfig, needed: Dict[str, List[str]], errors: List[str]) -> None:
    """``needed`` maps formula keys to the names of whatever requires them."""
    for key, users in sorted(needed.items()):
        by = ", ".join(users)
        if key == "mediator_density":
            if not cfg.formulas.mediator_density:
                errors.append(f"formulas.mediator_density: required by {by}")
                continue
            for m in _mediators(cfg):
                if m not in cfg.formulas.mediator_density:
                    errors.append(f"formulas.mediator_density.{m}: required by {by}")
        elif not getattr(cfg.formulas, key):
            errors.append(f"formulas.{key}: required by {by}")


def validate_config(
    raw: Dict[str, Any],
    command: str,
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> RunConfig:
    """Validate a run config completely before any computation.

    Every problem found is reported in one ConfigError.
    """
    if command not in COMMANDS:
        raise ConfigError(f"Unknown command '{command}'", errors=[f"command: expected one of {list(COMMANDS)}"])
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError("Invalid run config", errors=_pydantic_errors(e))

    updates: Dict[str, Any] = {}
    if seed is not None:
        updates["seed"] = seed
        if cfg.bootstrap is not None:
            updates["bootstrap"] = cfg.bootstrap.model_copy(update={"seed": seed})
    if out is not None:
        updates["output_dir"] = out
    cfg = cfg.model_copy(update=updates)

    errors: List[str] = []
    if command in ("estimate", "balance") and cfg.data is None:
        errors.append(f"data: required by '{command}'")
    if command == "simulate" and cfg.simulation is None:
        errors.append("simulation: required by 'simulate'")

    labels: List[str] = []
    if cfg.estimators != "all":
        for label in cfg.estimators:
            if label in LABELS:
                labels.append(label)
            else:
                errors.append(f"estimators: unknown estimator '{label}'")
    else:
        labels = list(LABELS)

    _check_formulas(cfg, errors)
    needed: Dict[str, List[str]] = {}
    if command == "estimate":
        for label in labels:
            for key in required_formulas(get_entry(label), cfg.weights_method):
                needed.setdefault(key, []).append(label)
    elif command == "balance":
        keys = {"propensity", "exposure_cm"}
        if cfg.weights_method == CrossWorldMethod.EXPR1:
            keys = {"propensity", "mediator_density"}
        for key in keys:
            needed[key] = ["balance"]
    _check_required(cfg, needed, errors)

    if errors:
        raise ConfigError(f"Invalid run config ({len(errors)} problem(s))", errors=errors)
    return cfg


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def provenance(cfg: RunConfig) -> Dict[str, Any]:
    return {"tool_version": settings.APP_VERSION, "config_hash": config_hash(cfg), "seed": cfg.seed}


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportIOError(f"Could not create output directory: {e}", path=str(path))
    return path


def write_csv(frame: pd.DataFrame, path: Path, prov: Dict[str, Any]) -> None:
    frame = frame.copy()
    for key, value in prov.items():
        frame[key] = value
    try:
        frame.to_csv(path, index=False, float_format=settings.CSV_FLOAT_FORMAT)
    except OSError as e:
        raise ReportIOError(f"Could not write {path.name}: {e}", path=str(path))
    logger.info(f"Wrote {path}")


def write_json(payload: Dict[str, Any], path: Path) -> None:
    try:
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Could not write {path.name}: {e}", path=str(path))
    logger.info(f"Wrote {path}")


def _estimates_frame(reports, intervals) -> pd.DataFrame:
    frame = pd.DataFrame(EstimatorService.to_rows(reports))
    if intervals is not None:
        for effect in EFFECTS:
            lower, upper, failures = [], [], []
            for label in frame["estimator"]:
                row = intervals.row(f"{label}|{effect}")
                lower.append(row.lower)
                upper.append(row.upper)
                failures.append(row.failures)
            frame[f"{effect}_lower"] = lower
            frame[f"{effect}_upper"] = upper
            frame[f"{effect}_failures"] = failures
    return frame


def cmd_estimate(cfg: RunConfig, workers: int = 1) -> int:
    prov = provenance(cfg)
    ds, ingest = DataService.ingest_csv(cfg.data.path, cfg.data.to_schema())
    logger.info(f"Loaded {ingest.rows_kept} rows ({ingest.treated} treated, {ingest.control} control)")

    options = cfg.estimation_options()
    cache = ComponentCache(options, ds, cfg.seed)
    reports = EstimatorService.run_menu(options, ds, cfg.estimators, cfg.seed, cache=cache)

    intervals = None
    if cfg.bootstrap is not None:
        intervals = InferenceService.bootstrap_ci(
            EstimatorService.menu_pipeline(options, cfg.estimators),
            ds,
            cfg.bootstrap,
            workers=workers,
            point=EstimatorService.effect_values(reports),
        )

    out = _out_dir(cfg)
    write_csv(_estimates_frame(reports, intervals), out / "estimates.csv", prov)
    write_json({
        **prov,
        "command": "estimate",
        "ingest": ingest.model_dump(mode="json"),
        "estimates": [r.model_dump(mode="json") for r in reports],
        "intervals": intervals.model_dump(mode="json") if intervals else None,
        "models": {k: GLMService.summarize(m).model_dump(mode="json") for k, m in cache.fitted_models().items()},
        "weights": {k: WeightService.summarize(ws, ds).model_dump(mode="json") for k, ws in cache.weight_sets().items()},
    }, out / "report.json")

    failed = [r.estimator for r in reports if not r.ok]
    if failed and len(failed) == len(reports):
        logger.error("Every selected estimator failed")
        return 3
    return 0


def cmd_balance(cfg: RunConfig) -> int:
    prov = provenance(cfg)
    ds, _ = DataService.ingest_csv(cfg.data.path, cfg.data.to_schema())
    cache = ComponentCache(cfg.estimation_options(), ds, cfg.seed)

    weight_sets = {"omega1": cache.omega1(), "omega0": cache.omega0(), "omega_x": cache.omega_x()}
    if cfg.formulas.exposure_cm:
        weight_sets["omega_sx"] = cache.omega_sx()
    pseudo = [WeightService.pseudo_sample(ws, ds) for ws in weight_sets.values()]
    report = BalanceService.from_pseudo_samples(ds, pseudo)

    out = _out_dir(cfg)
    write_csv(BalanceService.to_frame(report), out / "balance.csv", prov)
    write_csv(pd.DataFrame([q.model_dump() for q in report.quantiles]), out / "quantiles.csv", prov)
    summaries = []
    for name, ws in weight_sets.items():
        s = WeightService.summarize(ws, ds).model_dump(mode="json")
        quantiles = s.pop("quantiles")
        summaries.append({"weights": name, **s, **quantiles})
    write_csv(pd.DataFrame(summaries), out / "weights.csv", prov)
    return 0


def _scenarios(cfg: RunConfig) -> List[ScenarioSpec]:
    sim = cfg.simulation
    if sim.scenario is not None:
        return [sim.scenario]
    if sim.preset == "robustness":
        suite = robustness_suite(method=cfg.weights_method)
        if cfg.estimators != "all":
            suite = [s for s in suite if set(s.estimators) <= set(cfg.estimators)]
        return suite
    dgp, formulas = {
        "desk": (desk_dgp, desk_formulas),
        "discrete": (discrete_dgp, discrete_formulas),
        "null": (null_dgp, discrete_formulas),
    }[sim.preset]
    return [ScenarioSpec(
        name=sim.preset,
        dgp=dgp(),
        formulas=formulas(),
        misspecified=sim.misspecified,
        estimators=cfg.estimators,
        weights_method=cfg.weights_method,
        msim_mode=cfg.msim_mode,
        n_sim=cfg.n_sim,
    )]


def cmd_simulate(cfg: RunConfig, workers: int = 1) -> int:
    prov = provenance(cfg)
    sim = cfg.simulation
    truths: Dict[str, TruthReport] = {}
    rows = []
    for scenario in _scenarios(cfg):
        key = scenario.dgp.model_dump_json()
        if key not in truths:
            truths[key] = true_effects(scenario.dgp, sim.n_truth, child_seed(cfg.seed, "truth"))
        report = SimulationService.run_experiment(
            scenario,
            n=sim.n,
            reps=sim.reps,
            seed=child_seed(cfg.seed, "scenario", scenario.name),
            bootstrap=cfg.bootstrap,
            workers=workers,
            truth=truths[key],
        )
        rows.extend(r.model_dump() for r in report.rows)
    frame = pd.DataFrame(rows)
    if cfg.bootstrap is None:
        frame = frame.drop(columns=["coverage"], errors="ignore")
    out = _out_dir(cfg)
    write_csv(frame, out / "experiment.csv", prov)
    return 0
