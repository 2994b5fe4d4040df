"""Preset worlds, analyst formula sets and robustness scenarios."""
from typing import Dict, Iterable, List, Optional

from app.core.exceptions import ConfigError
from app.estimators.registry import REGISTRY, Component, MenuEntry, component_formulas
from app.estimators.schemas import AnalystFormulas, EstimationOptions
from app.formula.parser import parse_formula
from app.simlab.schemas import CovariateLaw, DgpSpec, MediatorLaw, OutcomeLaw, ScenarioSpec
from app.weights.schemas import CrossWorldMethod


def desk_dgp() -> DgpSpec:
    """Two binary and one continuous covariate, a binary and a continuous
    mediator, binary outcome."""
    return DgpSpec(
        covariates=[
            CovariateLaw(name="C1", kind="bernoulli", p=0.5),
            CovariateLaw(name="C2", kind="bernoulli", p=0.4),
            CovariateLaw(name="C3", kind="uniform", low=0.0, high=1.0),
        ],
        propensity={"1": -0.3, "C1": 0.6, "C2": -0.8, "C3": 0.7},
        mediators=[
            MediatorLaw(
                name="M1", kind="binary",
                arm0={"1": -0.5, "C1": 0.4, "C2": 0.8, "C3": -0.3},
                arm1={"1": 0.4, "C1": 0.4, "C2": 0.8, "C3": -0.3},
            ),
            MediatorLaw(
                name="M2", kind="continuous", sd=1.0,
                arm0={"1": 0.0, "C2": 0.5, "C3": 1.0, "M1": 0.6},
                arm1={"1": 0.5, "C2": 0.5, "C3": 1.0, "M1": 0.6},
            ),
        ],
        outcome=OutcomeLaw(
            kind="binary",
            terms={"1": -1.0, "A": 0.5, "M1": 0.7, "M2": 0.4, "C1": 0.3, "C2": 0.9, "C3": -0.5, "A:M1": 0.3},
        ),
    )


def desk_formulas() -> AnalystFormulas:
    c = "C1 + C2 + ns(C3, 3)"
    return AnalystFormulas(
        propensity=f"A ~ {c}",
        exposure_cm=f"A ~ {c} + M1 + M2",
        outcome_c1=f"Y ~ {c}",
        outcome_c0=f"Y ~ {c}",
        outcome_cm=f"Y ~ {c} + M1 + M2",
        y1m0_c=f"Y ~ {c}",
        nde_c=f"Y ~ {c}",
        working="Y ~ arm + C1 + C2 + C3",
        mediator_order=["M1", "M2"],
        mediator_density={"M1": f"M1 ~ {c}", "M2": f"M2 ~ {c} + M1"},
    )


def discrete_dgp(effect: bool = True) -> DgpSpec:
    """Binary C1, C2, M and Y, with C2 a strong confounder of every
    relation. ``effect=False`` removes every path from A."""
    mediator_arm0 = {"1": -0.6, "C1": 0.3, "C2": 1.0}
    mediator_arm1 = {"1": 0.6, "C1": 0.3, "C2": 1.0, "C1:C2": -0.4} if effect else dict(mediator_arm0)
    outcome = {"1": -1.2, "M": 0.9, "C1": 0.3, "C2": 1.2}
    if effect:
        outcome.update({"A": 0.6, "A:M": 0.4, "A:C2": -0.3})
    return DgpSpec(
        covariates=[
            CovariateLaw(name="C1", kind="bernoulli", p=0.5),
            CovariateLaw(name="C2", kind="bernoulli", p=0.5),
        ],
        propensity={"1": -0.2, "C1": 0.5, "C2": 1.0},
        mediators=[MediatorLaw(name="M", kind="binary", arm0=mediator_arm0, arm1=mediator_arm1)],
        outcome=OutcomeLaw(kind="binary", terms=outcome),
    )


def null_dgp() -> DgpSpec:
    return discrete_dgp(effect=False)


def discrete_formulas() -> AnalystFormulas:
    """Saturated formulas for the discrete world."""
    return AnalystFormulas(
        propensity="A ~ C1*C2",
        exposure_cm="A ~ C1*C2*M",
        outcome_c1="Y ~ C1*C2",
        outcome_c0="Y ~ C1*C2",
        outcome_cm="Y ~ C1*C2*M",
        y1m0_c="Y ~ C1*C2",
        nde_c="Y ~ C1*C2",
        working="Y ~ arm + C1 + C2",
        mediator_order=["M"],
        mediator_density={"M": "M ~ C1*C2"},
    )


def corrupt_formula(text: str, omit: Iterable[str]) -> str:
    """Drop every term that involves an omitted variable."""
    omit = set(omit)
    spec = parse_formula(text)
    kept = tuple(t for t in spec.terms if not any(f.name in omit for f in t))
    return spec.with_terms(kept).render()


def corrupt_formulas(formulas: AnalystFormulas, keys: Iterable[str], omit: Iterable[str]) -> AnalystFormulas:
    omit = list(omit)
    updates: Dict[str, object] = {}
    for key in keys:
        if key == "mediator_density":
            updates[key] = {m: corrupt_formula(f, omit) for m, f in formulas.mediator_density.items()}
            continue
        text = getattr(formulas, key)
        if text is None:
            raise ConfigError(f"Cannot misspecify missing formula '{key}'", errors=[f"formulas.{key}: missing"])
        updates[key] = corrupt_formula(text, omit)
    return formulas.model_copy(update=updates)


def analyst_options(scenario: ScenarioSpec) -> EstimationOptions:
    return EstimationOptions(
        formulas=corrupt_formulas(scenario.formulas, scenario.misspecified, scenario.omit),
        weights_method=scenario.weights_method,
        msim_mode=scenario.msim_mode,
        n_sim=scenario.n_sim,
    )


def _set_label(entry: MenuEntry, i: int) -> str:
    return f"{entry.label} :: set {'I' * (i + 1) if i < 3 else i + 1}"


def _scenario(name, dgp, formulas, misspecified, estimators, method) -> ScenarioSpec:
    return ScenarioSpec(
        name=name,
        dgp=dgp,
        formulas=formulas,
        misspecified=sorted(misspecified),
        estimators=list(estimators),
        weights_method=method,
        msim_mode="exact",
    )


def robustness_suite(
    dgp: Optional[DgpSpec] = None,
    formulas: Optional[AnalystFormulas] = None,
    method: CrossWorldMethod = CrossWorldMethod.EXPR2,
    entries: Optional[Iterable[MenuEntry]] = None,
) -> List[ScenarioSpec]:
    """One scenario per (menu row, consistency set) with exactly that set
    correctly specified, and one per not-allowed component with only that
    component misspecified.

    The working model is never misspecified.
    """
    dgp = dgp or discrete_dgp()
    formulas = formulas or discrete_formulas()
    scenarios = []
    for entry in entries or REGISTRY:
        used = component_formulas(entry.components - {Component.WORKING}, method)
        for i, subset in enumerate(entry.consistency_sets):
            wrong = used - component_formulas(subset, method)
            scenarios.append(_scenario(_set_label(entry, i), dgp, formulas, wrong, [entry.label], method))
        for component in entry.not_allowed:
            others = set().union(*entry.consistency_sets) - {component}
            own = component_formulas([component], method)
            wrong = (own - component_formulas(others, method)) or own
            scenarios.append(_scenario(
                f"{entry.label} :: violate {component.value}", dgp, formulas, wrong, [entry.label], method
            ))
    return scenarios
