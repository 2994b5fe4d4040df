import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit

from app.core.config import settings
from app.core.exceptions import AppException, ConfigError, DataError, EstimationError
from app.core.rng import child_seed, substream
from app.data.schemas import Dataset, Role
from app.data.service import DataService
from app.estimators.registry import select
from app.estimators.service import EFFECTS, EstimatorService
from app.inference.schemas import BootstrapConfig
from app.inference.service import InferenceService
from app.simlab.scenarios import analyst_options
from app.simlab.schemas import (
    DgpSpec,
    ExperimentReport,
    ExperimentRow,
    ScenarioSpec,
    TruthReport,
    evaluate,
)

logger = logging.getLogger(__name__)


def _draw_covariates(dgp: DgpSpec, n: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    out = {}
    for law in dgp.covariates:
        if law.kind == "bernoulli":
            out[law.name] = rng.binomial(1, law.p, n).astype(float)
        else:
            out[law.name] = rng.uniform(law.low, law.high, n)
    return out


def _draw_mediators(dgp: DgpSpec, values: Dict[str, np.ndarray], arm: np.ndarray, n: int, rng) -> Dict[str, np.ndarray]:
    """Sequential draws from the arm-specific mediator laws; ``arm`` is 0/1 per unit."""
    out = {}
    for law in dgp.mediators:
        scope = {**values, **out}
        lp = np.where(arm == 1, evaluate(law.arm1, scope, n), evaluate(law.arm0, scope, n))
        if law.kind == "binary":
            out[law.name] = rng.binomial(1, expit(lp)).astype(float)
        else:
            out[law.name] = lp + law.sd * rng.standard_normal(n)
    return out


def _outcome_mean(dgp: DgpSpec, values: Dict[str, np.ndarray], n: int) -> np.ndarray:
    lp = evaluate(dgp.outcome.terms, values, n)
    return expit(lp) if dgp.outcome.kind == "binary" else lp


def generate(dgp: DgpSpec, n: int, seed: int) -> Dataset:
    """n i.i.d. rows drawn C -> A -> M -> Y; identical for identical seeds."""
    if n < 1:
        raise DataError("Cannot generate an empty dataset")
    rng = substream(seed, "generate")
    columns = _draw_covariates(dgp, n, rng)
    a = rng.binomial(1, expit(evaluate(dgp.propensity, columns, n))).astype(float)
    columns[dgp.exposure_name] = a
    columns.update(_draw_mediators(dgp, columns, a, n, rng))
    mu = _outcome_mean(dgp, columns, n)
    if dgp.outcome.kind == "binary":
        y = rng.binomial(1, mu).astype(float)
    else:
        y = mu + dgp.outcome.sd * rng.standard_normal(n)
    columns[dgp.outcome_name] = y

    roles = {name: Role.COVARIATE for name in dgp.covariate_names}
    roles.update({name: Role.MEDIATOR for name in dgp.mediator_names})
    roles[dgp.exposure_name] = Role.EXPOSURE
    roles[dgp.outcome_name] = Role.OUTCOME
    return DataService.build(columns, roles)


def true_effects(dgp: DgpSpec, n_mc: Optional[int] = None, seed: int = settings.DEFAULT_SEED) -> TruthReport:
    """Monte-Carlo truth for E[Y1], E[Y0], E[Y1M0] and the effects.

    Mediators are drawn under both arms for the same covariate draws, and
    the outcome law is integrated analytically given (C, A, M). TE is the
    sum of NDE0 and NIE1 from the same draws.
    """
    n_mc = settings.TRUTH_DRAWS if n_mc is None else n_mc
    if n_mc < settings.TRUTH_MIN_DRAWS:
        raise ConfigError(
            f"Truth oracle needs at least {settings.TRUTH_MIN_DRAWS} draws",
            errors=[f"n_mc: {n_mc} < {settings.TRUTH_MIN_DRAWS}"],
        )
    rng = substream(seed, "truth")
    c = _draw_covariates(dgp, n_mc, rng)
    m0 = _draw_mediators(dgp, c, np.zeros(n_mc), n_mc, rng)
    m1 = _draw_mediators(dgp, c, np.ones(n_mc), n_mc, rng)
    a = dgp.exposure_name
    y1 = _outcome_mean(dgp, {**c, **m1, a: 1.0}, n_mc)
    y0 = _outcome_mean(dgp, {**c, **m0, a: 0.0}, n_mc)
    y1m0 = _outcome_mean(dgp, {**c, **m0, a: 1.0}, n_mc)

    def se(x: np.ndarray) -> float:
        return float(np.std(x, ddof=1) / np.sqrt(n_mc))

    nde0 = float(np.mean(y1m0 - y0))
    nie1 = float(np.mean(y1 - y1m0))
    return TruthReport(
        EY1=float(y1.mean()),
        EY0=float(y0.mean()),
        EY1M0=float(y1m0.mean()),
        NDE0=nde0,
        NIE1=nie1,
        TE=nde0 + nie1,
        se={"NDE0": se(y1m0 - y0), "NIE1": se(y1 - y1m0), "TE": se(y1 - y0)},
        n_mc=n_mc,
    )


def plugin_means(ds: Dataset) -> Tuple[float, float, float]:
    """Nonparametric plug-in (E[Y1], E[Y0], E[Y1M0]) on a fully discrete dataset.

    Sums over observed covariate and mediator cells with observation
    weights; every covariate cell must hold both arms and every control
    mediator cell must appear among the treated.
    """
    for name in ds.covariates + ds.mediators:
        if not (ds.is_categorical(name) or ds.is_binary(name)):
            raise EstimationError(f"Plug-in means need discrete variables; '{name}' is continuous")
    C, M = list(ds.covariates), list(ds.mediators)
    frame = DataService.to_frame(ds)
    frame["__b"] = ds.obs_weights
    frame["__by"] = ds.obs_weights * ds.column(ds.outcome)
    treated = frame[frame[ds.exposure] == 1]
    control = frame[frame[ds.exposure] == 0]

    pc = frame.groupby(C)["__b"].sum().rename("pc").reset_index()
    pc["pc"] /= frame["__b"].sum()

    def cond_mean(sub: pd.DataFrame, keys: List[str], name: str) -> pd.DataFrame:
        g = sub.groupby(keys)[["__b", "__by"]].sum()
        return (g["__by"] / g["__b"]).rename(name).reset_index()

    def attach(left: pd.DataFrame, right: pd.DataFrame, keys: List[str], what: str) -> pd.DataFrame:
        merged = left.merge(right, on=keys, how="left")
        if merged.isna().any().any():
            raise EstimationError(f"Empty cell in plug-in computation: {what}")
        return merged

    cells = attach(pc, cond_mean(treated, C, "ey1"), C, "treated covariate cell")
    cells = attach(cells, cond_mean(control, C, "ey0"), C, "control covariate cell")
    ey1 = float((cells["pc"] * cells["ey1"]).sum())
    ey0 = float((cells["pc"] * cells["ey0"]).sum())

    pm = control.groupby(C + M)["__b"].sum().rename("pm").reset_index()
    pm["pm"] /= pm.groupby(C)["pm"].transform("sum")
    joint = attach(pm, cond_mean(treated, C + M, "ey1m"), C + M, "treated mediator cell")
    joint = attach(joint, pc, C, "covariate cell")
    ey1m0 = float((joint["pc"] * joint["pm"] * joint["ey1m"]).sum())
    return ey1, ey0, ey1m0


def _replication(
    scenario: ScenarioSpec,
    n: int,
    seed: int,
    r: int,
    bootstrap: Optional[BootstrapConfig],
) -> Tuple[Optional[Dict[str, float]], Optional[Dict[str, Tuple[Optional[float], Optional[float]]]]]:
    options = analyst_options(scenario)
    try:
        ds = generate(scenario.dgp, n, child_seed(seed, "replication", r))
    except AppException as e:
        logger.debug(f"Replication {r} produced no usable dataset: {e.message}")
        return None, None
    menu_seed = child_seed(seed, "replication", r, "menu")
    values = EstimatorService.effect_values(
        EstimatorService.run_menu(options, ds, scenario.estimators, seed=menu_seed)
    )
    if bootstrap is None:
        return values, None
    cfg = bootstrap.model_copy(update={"seed": child_seed(seed, "replication", r, "bootstrap")})
    report = InferenceService.bootstrap_ci(
        EstimatorService.menu_pipeline(options, scenario.estimators), ds, cfg, workers=1, point=values
    )
    return values, {row.key: (row.lower, row.upper) for row in report.rows if row.reliable}


class SimulationService:
    @staticmethod
    def run_experiment(
        scenario: ScenarioSpec,
        n: int,
        reps: int,
        seed: int = settings.DEFAULT_SEED,
        bootstrap: Optional[BootstrapConfig] = None,
        workers: int = 1,
        truth: Optional[TruthReport] = None,
    ) -> ExperimentReport:
        """Bias, empirical SE, RMSE and (with a bootstrap) coverage per
        estimator and effect over ``reps`` simulated datasets."""
        if reps < 1:
            raise ConfigError("reps must be at least 1", errors=[f"reps: {reps}"])
        truth = truth or true_effects(scenario.dgp, seed=child_seed(seed, "truth"))
        labels = [e.label for e in select(scenario.estimators)]
        logger.info(
            f"Experiment '{scenario.name}': {reps} replications of n={n}, "
            f"misspecified={scenario.misspecified or 'none'}, bootstrap={'on' if bootstrap else 'off'}"
        )
        results = Parallel(n_jobs=workers)(
            delayed(_replication)(scenario, n, seed, r, bootstrap) for r in range(reps)
        )

        report = ExperimentReport(
            scenario=scenario.name,
            n=n,
            reps=reps,
            seed=seed,
            misspecified=scenario.misspecified,
            bootstrap=bootstrap is not None,
        )
        for label in labels:
            for effect in EFFECTS:
                key = f"{label}|{effect}"
                true_value = truth.effects()[effect]
                est = np.array([
                    np.nan if values is None else values.get(key, np.nan) for values, _ in results
                ], dtype=float)
                ok = np.isfinite(est)
                k = int(ok.sum())
                row = ExperimentRow(
                    scenario=scenario.name,
                    estimator=label,
                    effect=effect,
                    truth=true_value,
                    truth_se=truth.se[effect],
                    failures=reps - k,
                    reps=reps,
                )
                if k:
                    x = est[ok]
                    row.mean = float(x.mean())
                    row.bias = row.mean - true_value
                    row.rmse = float(np.sqrt(np.mean((x - true_value) ** 2)))
                if k > 1:
                    row.emp_se = float(np.std(x, ddof=1))
                    row.mc_se = row.emp_se / np.sqrt(k)
                    row.std_bias = row.bias / row.mc_se if row.mc_se > 0 else None
                if bootstrap is not None:
                    hits = [
                        lo <= true_value <= hi
                        for _, intervals in results
                        if intervals is not None and key in intervals
                        for lo, hi in [intervals[key]]
                        if lo is not None
                    ]
                    row.coverage = float(np.mean(hits)) if hits else None
                report.rows.append(row)
        failed = sum(values is None for values, _ in results)
        if failed:
            logger.warning(f"Experiment '{scenario.name}': {failed}/{reps} replications failed to generate data")
        return report
