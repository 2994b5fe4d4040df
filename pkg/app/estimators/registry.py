"""The closed estimator menu.

Each entry records which estimation components it uses, the component
subsets whose joint consistency makes the estimator consistent, and the
components that may not be inconsistent under any subset. The simulation
lab builds its robustness scenarios from these records.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Tuple

from app.estimators.schemas import Approach, Robustness
from app.weights.schemas import CrossWorldMethod


class Component(str, Enum):
    OMEGA1 = "omega1"
    OMEGA0 = "omega0"
    OMEGA_X = "omega_x"
    OMEGA_X_MEDIATOR_PART = "omega_x_mediator_part"
    OMEGA_SX = "omega_sx"
    MEDIATOR_DENSITY = "mediator_density"
    OUTCOME_C1 = "outcome_c1"
    OUTCOME_C0 = "outcome_c0"
    OUTCOME_CM = "outcome_cm"
    Y1M0_C = "y1m0_c"
    NDE_C = "nde_c"
    WORKING = "working_model"


C = Component


@dataclass(frozen=True)
class MenuEntry:
    label: str
    approach: Approach
    robustness: Robustness
    consistency_sets: Tuple[FrozenSet[Component], ...]
    not_allowed: Tuple[Component, ...]
    not_allowed_label: str
    extra: FrozenSet[Component] = frozenset()

    @property
    def components(self) -> FrozenSet[Component]:
        """Every component the estimator consumes, including ones outside all consistency sets."""
        return frozenset().union(*self.consistency_sets) | self.extra


def _entry(label, approach, robustness, sets, not_allowed, extra=()) -> MenuEntry:
    sets = tuple(frozenset(s) for s in sets)
    if not_allowed in ("all", "all except wk. mod."):
        label_na = not_allowed
        na = tuple(sorted(frozenset().union(*sets), key=lambda c: list(Component).index(c)))
    elif not_allowed == "none":
        label_na, na = "none", ()
    else:
        na = tuple(not_allowed)
        label_na = ", ".join(c.value for c in na)
    return MenuEntry(label, approach, robustness, sets, na, label_na, frozenset(extra))


O, E = Approach.OUTCOME, Approach.EFFECT
NR, MR, R = Robustness.NONROBUST, Robustness.MORE_ROBUST, Robustness.ROBUST

REGISTRY: Tuple[MenuEntry, ...] = (
    # potential-outcome combinations
    _entry("POs|psYobs-pxYobs", O, NR, [{C.OMEGA1, C.OMEGA0, C.OMEGA_X}], "all"),
    _entry("POs|psYobs-p0Ypred(s1)", O, NR, [{C.OMEGA1, C.OMEGA0, C.OUTCOME_CM}], "all"),
    _entry("POs|psYobs-p0Ypred(px)", O, MR, [
        {C.OMEGA1, C.OMEGA0, C.OUTCOME_CM},
        {C.OMEGA1, C.OMEGA0, C.OMEGA_X},
    ], [C.OMEGA1, C.OMEGA0]),
    _entry("POs|fuYpred(ss)-p0Ypred(s1)", O, NR, [
        {C.OMEGA0, C.OUTCOME_C1, C.OUTCOME_C0, C.OUTCOME_CM},
    ], "all"),
    _entry("POs|fuYpred(ps)-p0Ypred(px)", O, MR, [
        {C.OMEGA0, C.OUTCOME_C1, C.OUTCOME_CM},
        {C.OMEGA1, C.OMEGA0, C.OUTCOME_CM},
        {C.OMEGA1, C.OMEGA0, C.OMEGA_X},
    ], [C.OMEGA0], extra=[C.OUTCOME_C0]),
    _entry("POs|fuYpred(ss)-fuYpred(sx)", O, NR, [
        {C.OMEGA_SX, C.OUTCOME_C1, C.OUTCOME_C0, C.Y1M0_C},
    ], "all"),
    _entry("POs|fuYpred(ps)-fuYpred(px)", O, MR, [
        {C.OMEGA_X_MEDIATOR_PART, C.OUTCOME_C1, C.OUTCOME_C0, C.Y1M0_C},
        {C.OMEGA1, C.OMEGA0, C.OMEGA_X},
    ], [C.OMEGA_X_MEDIATOR_PART]),
    _entry("POs|fuYpred(ss)-fuY2pred(s1s0)", O, NR, [
        {C.OUTCOME_C1, C.OUTCOME_C0, C.OUTCOME_CM, C.Y1M0_C},
    ], "all"),
    _entry("POs|fuYpred(ps)-fuY2pred(pxp0)", O, R, [
        {C.OUTCOME_C1, C.OUTCOME_C0, C.OUTCOME_CM, C.Y1M0_C},
        {C.OMEGA1, C.OMEGA0, C.OUTCOME_CM},
        {C.OMEGA1, C.OMEGA0, C.OMEGA_X},
    ], "none"),
    _entry("POs|fuYpred(ss)-fuMsimYpred(s0s1)", O, NR, [
        {C.MEDIATOR_DENSITY, C.OUTCOME_C1, C.OUTCOME_C0, C.OUTCOME_CM},
    ], "all"),
    _entry("POs|fuYpred(ps)-fuMsimYpred(p0px)", O, MR, [
        {C.MEDIATOR_DENSITY, C.OUTCOME_C1, C.OUTCOME_C0, C.OUTCOME_CM},
        {C.OMEGA1, C.OMEGA0, C.MEDIATOR_DENSITY, C.OUTCOME_CM},
        {C.OMEGA1, C.OMEGA0, C.OMEGA_X, C.MEDIATOR_DENSITY},
    ], [C.MEDIATOR_DENSITY]),
    # direct effect approaches
    _entry("NDE&NIE|psxCadj", E, NR, [{C.OMEGA1, C.OMEGA0, C.OMEGA_X}], "all except wk. mod.", extra=[C.WORKING]),
    _entry("NDE|fuNDEpred(s1s0)+TE|psCadj", E, NR, [
        {C.OMEGA1, C.OMEGA0, C.OUTCOME_CM, C.NDE_C},
    ], "all except wk. mod.", extra=[C.WORKING]),
    _entry("NDE|fuNDEpred(s1s0)+NIE|psYpred(s1)Cadj", E, NR, [
        {C.OMEGA1, C.OMEGA0, C.OUTCOME_CM, C.NDE_C},
    ], "all except wk. mod.", extra=[C.WORKING]),
    _entry("NDE|fuNDEpred(pxp0)+NIE|psYpred(px)Cadj", E, MR, [
        {C.OMEGA1, C.OMEGA0, C.OUTCOME_CM},
        {C.OMEGA1, C.OMEGA0, C.OMEGA_X},
    ], [C.OMEGA1, C.OMEGA0], extra=[C.WORKING, C.NDE_C]),
    _entry("NDE|fuNDEpred(s1s0)+TE|fuYpred(ss)", E, NR, [
        {C.OUTCOME_C1, C.OUTCOME_C0, C.OUTCOME_CM, C.NDE_C},
    ], "all"),
    _entry("NDE|fuNDEpred(pxp0)+TE|fuYpred(ps)", E, R, [
        {C.OUTCOME_C1, C.OUTCOME_C0, C.OUTCOME_CM, C.NDE_C},
        {C.OMEGA1, C.OMEGA0, C.OUTCOME_CM},
        {C.OMEGA1, C.OMEGA0, C.OMEGA_X},
    ], "none"),
)

LABELS: Tuple[str, ...] = tuple(e.label for e in REGISTRY)
_BY_LABEL: Dict[str, MenuEntry] = {e.label: e for e in REGISTRY}


def get_entry(label: str) -> MenuEntry:
    try:
        return _BY_LABEL[label]
    except KeyError:
        raise KeyError(f"Unknown estimator '{label}'")


def select(labels) -> List[MenuEntry]:
    if labels is None or labels == "all":
        return list(REGISTRY)
    return [get_entry(label) for label in labels]


# Analyst models each component depends on (cross-world weights by the odds route).
COMPONENT_MODELS: Dict[Component, FrozenSet[str]] = {
    C.OMEGA1: frozenset({"propensity"}),
    C.OMEGA0: frozenset({"propensity"}),
    C.OMEGA_X: frozenset({"propensity", "exposure_cm"}),
    C.OMEGA_X_MEDIATOR_PART: frozenset({"exposure_cm"}),
    C.OMEGA_SX: frozenset({"exposure_cm"}),
    C.MEDIATOR_DENSITY: frozenset({"mediator_density"}),
    C.OUTCOME_C1: frozenset({"outcome_c1"}),
    C.OUTCOME_C0: frozenset({"outcome_c0"}),
    C.OUTCOME_CM: frozenset({"outcome_cm"}),
    C.Y1M0_C: frozenset({"y1m0_c"}),
    C.NDE_C: frozenset({"nde_c"}),
    C.WORKING: frozenset({"working"}),
}

_OMEGA_X_FORMULAS = {
    CrossWorldMethod.EXPR1: frozenset({"propensity", "mediator_density"}),
    CrossWorldMethod.EXPR2: frozenset({"propensity", "exposure_cm"}),
    CrossWorldMethod.EXPR3: frozenset({"propensity", "exposure_cm"}),
}


def required_formulas(entry: MenuEntry, method: CrossWorldMethod) -> FrozenSet[str]:
    """Formula keys an estimator needs under a given cross-world method."""
    needed: set = set()
    for component in entry.components:
        if component in (C.OMEGA_X, C.OMEGA_X_MEDIATOR_PART):
            needed |= _OMEGA_X_FORMULAS[CrossWorldMethod(method)]
        else:
            needed |= COMPONENT_MODELS[component]
    return frozenset(needed)


def component_formulas(components: Iterable[Component], method: CrossWorldMethod) -> FrozenSet[str]:
    """Formula keys that must be correctly specified for ``components`` to be consistent.

    The mediator-related part of omega_x depends only on the model that
    carries the mediators: P(A|C,M) for the odds routes, the mediator
    density for the density-ratio route.
    """
    method = CrossWorldMethod(method)
    out: set = set()
    for component in components:
        if component == C.OMEGA_X:
            out |= _OMEGA_X_FORMULAS[method]
        elif component == C.OMEGA_X_MEDIATOR_PART:
            out.add("mediator_density" if method == CrossWorldMethod.EXPR1 else "exposure_cm")
        else:
            out |= COMPONENT_MODELS[component]
    return frozenset(out)
