import logging
from typing import Callable, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import AppException
from app.data.schemas import Dataset, Selector
from app.estimators import potential_outcomes as po
from app.estimators.components import ComponentCache
from app.estimators.effects import Arm, cadj_effect, nde_fu_ndepred
from app.estimators.registry import MenuEntry, select
from app.estimators.schemas import Approach, EstimateReport, EstimationOptions
from app.weights.service import WeightService

logger = logging.getLogger(__name__)

EFFECTS = ("NDE0", "NIE1", "TE")

Row = Dict[str, object]


# reg| blocks
def _reg(cache: ComponentCache, name: str) -> Tuple[float, float]:
    ds = cache.ds
    if name == "psYobs":
        return cache.block("reg:psYobs", lambda: po.reg_ps_yobs(cache.omega1(), cache.omega0(), ds))
    variant = {"fuYpred(ss)": "ss", "fuYpred(ps)": "ps"}[name]

    def build():
        omega1 = cache.omega1() if variant == "ps" else None
        omega0 = cache.omega0() if variant == "ps" else None
        return po.reg_fu_ypred(
            variant, cache.outcome_arm(1, variant), cache.outcome_arm(0, variant), ds, omega1, omega0
        )

    return cache.block(f"reg:{name}", build)


# cross| blocks
def _cross(cache: ComponentCache, name: str) -> Tuple[float, Dict[str, object]]:
    ds, opts = cache.ds, cache.options
    key = f"cross:{name}"
    if name == "pxYobs":
        return cache.block(key, lambda: po.cross_px_yobs(cache.omega_x(), ds)), {}
    if name in ("p0Ypred(s1)", "p0Ypred(px)"):
        v = name[-3:-1]
        return cache.block(key, lambda: po.cross_p0_ypred(v, cache.outcome_cm(v), cache.omega0(), ds)), {}
    if name == "fuYpred(sx)":
        return cache.block(
            key, lambda: po.cross_fu_ypred("sx", cache.spec("y1m0_c"), ds, omega_sx=cache.omega_sx())
        ), {}
    if name == "fuYpred(px)":
        return cache.block(
            key, lambda: po.cross_fu_ypred("px", cache.spec("y1m0_c"), ds, omega_x=cache.omega_x())
        ), {}
    if name == "fuY2pred(s1s0)":
        return cache.block(
            key, lambda: po.cross_fu_y2pred("s1s0", cache.outcome_cm("s1"), cache.spec("y1m0_c"), ds)
        ), {}
    if name == "fuY2pred(pxp0)":
        return cache.block(
            key,
            lambda: po.cross_fu_y2pred("pxp0", cache.outcome_cm("px"), cache.spec("y1m0_c"), ds, cache.omega0()),
        ), {}
    variant, density, outcome = {
        "fuMsimYpred(s0s1)": ("s0s1", "control", "s1"),
        "fuMsimYpred(p0px)": ("p0px", "pseudo_control", "px"),
    }[name]
    value = cache.block(
        key,
        lambda: po.cross_fu_msim_ypred(
            variant,
            cache.density(density),
            cache.outcome_cm(outcome),
            ds,
            opts.n_sim,
            cache.rng(key),
            mode=opts.msim_mode,
        ),
    )
    info = {"msim_mode": opts.msim_mode}
    if opts.msim_mode == "simulate":
        info["n_sim"] = opts.n_sim
    return value, info


def combine_pos(ey1: float, ey0: float, ey1m0: float) -> Dict[str, float]:
    """Effects by differences of potential-outcome means; TE is their sum."""
    nde0 = ey1m0 - ey0
    nie1 = ey1 - ey1m0
    return {"EY1": ey1, "EY0": ey0, "EY1M0": ey1m0, "NDE0": nde0, "NIE1": nie1, "TE": nde0 + nie1}


def _pos_row(cache: ComponentCache, entry: MenuEntry) -> Row:
    reg_name, cross_name = entry.label.split("|", 1)[1].split("-", 1)
    ey1, ey0 = _reg(cache, reg_name)
    ey1m0, info = _cross(cache, cross_name)
    return {**combine_pos(ey1, ey0, ey1m0), "diagnostics": info}


# effect rows
def _nde(cache: ComponentCache, variant: str) -> float:
    ds = cache.ds

    def build():
        if variant == "s1s0":
            return nde_fu_ndepred("s1s0", cache.outcome_cm("s1"), cache.spec("nde_c"), ds)
        return nde_fu_ndepred(
            "pxp0", cache.outcome_cm("px"), cache.spec("nde_c"), ds, omega0=cache.omega0(), omega_x=cache.omega_x()
        )

    return cache.block(f"nde:fuNDEpred({variant})", build)


def _pseudo(cache: ComponentCache, which: str):
    ws = {"p1": cache.omega1, "p0": cache.omega0, "px": cache.omega_x}[which]()
    return WeightService.pseudo_sample(ws, cache.ds)


def _cadj(cache: ComponentCache, arms: List[Arm]):
    opts = cache.options
    return cadj_effect(arms, cache.spec("working"), cache.ds, joint=opts.cadj_joint, family=opts.cadj_family)


def _nie_ps_ypred(cache: ComponentCache, variant: str):
    """NIE1 by covariate adjustment: pseudo treated vs pseudo control with
    the control outcome replaced by predicted Y1M0."""
    ds = cache.ds
    model = cache.outcome_cm(variant)
    y1m0 = po.predict_y1(model, ds, Selector.CONTROL)
    arms = [Arm(_pseudo(cache, "p0"), outcome=y1m0), Arm(_pseudo(cache, "p1"))]
    return _cadj(cache, arms)


def _effect_row(cache: ComponentCache, entry: MenuEntry) -> Row:
    label = entry.label
    if label == "NDE&NIE|psxCadj":
        arms = [Arm(_pseudo(cache, "p0")), Arm(_pseudo(cache, "px")), Arm(_pseudo(cache, "p1"))]
        result = _cadj(cache, arms)
        nde0, nie1 = result.contrasts
        return {"NDE0": nde0, "NIE1": nie1, "TE": nde0 + nie1, "diagnostics": dict(result.diagnostics)}

    nde_part, other = label.split("+", 1)
    nde_variant = nde_part[len("NDE|fuNDEpred("):-1]
    nde0 = _nde(cache, nde_variant)

    if other == "TE|psCadj":
        result = _cadj(cache, [Arm(_pseudo(cache, "p0")), Arm(_pseudo(cache, "p1"))])
        te = result.contrasts[0]
        return {"NDE0": nde0, "NIE1": te - nde0, "TE": te, "diagnostics": dict(result.diagnostics)}

    if other.startswith("NIE|psYpred("):
        variant = other[len("NIE|psYpred("):other.index(")")]
        result = _nie_ps_ypred(cache, variant)
        nie1 = result.contrasts[0]
        return {"NDE0": nde0, "NIE1": nie1, "TE": nde0 + nie1, "diagnostics": dict(result.diagnostics)}

    # TE|fuYpred(ss) or TE|fuYpred(ps)
    ey1, ey0 = _reg(cache, other[len("TE|"):])
    te = ey1 - ey0
    return {"EY1": ey1, "EY0": ey0, "NDE0": nde0, "NIE1": te - nde0, "TE": te, "diagnostics": {}}


class EstimatorService:
    @staticmethod
    def evaluate(entry: MenuEntry, cache: ComponentCache) -> EstimateReport:
        cache.begin()
        try:
            row = _pos_row(cache, entry) if entry.approach == Approach.OUTCOME else _effect_row(cache, entry)
        except AppException as e:
            logger.warning(f"Estimator {entry.label} failed: {e.code}: {e.message}")
            return EstimateReport(
                estimator=entry.label,
                approach=entry.approach,
                robustness=entry.robustness,
                components=cache.consumed(),
                error=e.to_dict(),
            )
        except np.linalg.LinAlgError as e:
            logger.warning(f"Estimator {entry.label} failed: linear algebra error: {e}")
            return EstimateReport(
                estimator=entry.label,
                approach=entry.approach,
                robustness=entry.robustness,
                components=cache.consumed(),
                error={"code": "LINALG_ERROR", "message": str(e), "details": {}},
            )
        diagnostics = {**row.pop("diagnostics"), **cache.weight_diagnostics()}
        return EstimateReport(
            estimator=entry.label,
            approach=entry.approach,
            robustness=entry.robustness,
            components=cache.consumed(),
            diagnostics=diagnostics,
            **{k: float(v) for k, v in row.items()},
        )

    @staticmethod
    def run_menu(
        options: EstimationOptions,
        ds: Dataset,
        estimators: Union[str, Iterable[str]] = "all",
        seed: Optional[int] = None,
        cache: Optional[ComponentCache] = None,
    ) -> List[EstimateReport]:
        """Evaluate the selected menu rows over one shared set of fitted components.

        A failing estimator yields a report with ``error`` set; the others
        still run.
        """
        entries = select(estimators)
        seed = settings.DEFAULT_SEED if seed is None else seed
        cache = cache or ComponentCache(options, ds, seed)
        reports = [EstimatorService.evaluate(entry, cache) for entry in entries]
        failed = sum(not r.ok for r in reports)
        logger.info(f"Evaluated {len(reports)} estimators on n={ds.n} ({failed} failed)")
        return reports

    @staticmethod
    def effect_values(reports: Iterable[EstimateReport]) -> Dict[str, float]:
        """Flat ``{"<estimator>|<effect>": value}``; failed rows give NaN."""
        out: Dict[str, float] = {}
        for r in reports:
            for effect, value in r.effects().items():
                out[f"{r.estimator}|{effect}"] = float("nan") if value is None else value
        return out

    @staticmethod
    def menu_pipeline(
        options: EstimationOptions,
        estimators: Union[str, Iterable[str]] = "all",
    ) -> Callable[[Dataset, int], Dict[str, float]]:
        """Closure re-running the menu on a (re-weighted) dataset, for the bootstrap.

        The seed keys the mediator simulation draws of that run.
        """
        labels = [e.label for e in select(estimators)]

        def pipeline(ds: Dataset, seed: int) -> Dict[str, float]:
            return EstimatorService.effect_values(EstimatorService.run_menu(options, ds, labels, seed))

        return pipeline

    @staticmethod
    def to_rows(reports: Iterable[EstimateReport]) -> List[Dict[str, object]]:
        """One row per estimator, potential-outcome means and effects as columns."""
        return [
            {
                "estimator": r.estimator,
                "approach": r.approach.value,
                "robustness": r.robustness.value,
                **{k: getattr(r, k) for k in ("EY1", "EY0", "EY1M0") + EFFECTS},
                "error": None if r.ok else r.error.get("code"),
            }
            for r in reports
        ]
